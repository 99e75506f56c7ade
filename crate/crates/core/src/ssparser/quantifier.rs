//! Array-indexed rewrite of LOC→CROP→VQA chains for quantified questions.
//!
//! A plain CROP over a box list only crops the first box, so a question about
//! "both people" ends up asking the same crop twice. The rewrite turns
//!
//! ```text
//! BOX0=LOC(image=IMAGE,object='person')
//! IMAGE0=CROP(image=IMAGE,box=BOX0)
//! IMAGE1=CROP(image=IMAGE,box=BOX0)
//! ANSWER0=VQA(image=IMAGE0,question='...')
//! ANSWER1=VQA(image=IMAGE1,question='...')
//! ```
//!
//! into
//!
//! ```text
//! BOX_ARRAY_0=LOC(image=IMAGE,object='person')
//! IMAGE_ARRAY_0=CROP(image=IMAGE,box=BOX_ARRAY_0,each=True)
//! IMAGE0=GET(array=IMAGE_ARRAY_0,index=0)
//! IMAGE1=GET(array=IMAGE_ARRAY_0,index=1)
//! ANSWER0=VQA(image=IMAGE0,question='...')
//! ANSWER1=VQA(image=IMAGE1,question='...')
//! ```
//!
//! so the n-th crop reads the n-th detected box. Any other consumer shape is
//! rejected rather than partially rewritten.

use std::collections::HashSet;

use thiserror::Error;

use super::{rules, RepairContext, RepairRecord};
use crate::script::{ArgValue, Instruction, Script};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("quantifier rewrite unsupported at instruction {loc_index}: {reason}")]
pub struct RewriteUnsupported {
    pub loc_index: usize,
    pub reason: String,
}

/// Rewrites the chain rooted at the LOC instruction `loc_index` (position in
/// `script.instructions`).
pub fn rewrite_quantifier_block(
    script: &Script,
    loc_index: usize,
    ctx: &mut RepairContext,
) -> Result<Script, RewriteUnsupported> {
    let (lines, _) = rewrite_block(&script.instructions, loc_index, ctx)?;
    Ok(Script::from_instructions(lines))
}

fn consumers<'a>(
    lines: &'a [Instruction],
    from: usize,
    var: &str,
) -> Vec<(usize, &'a Instruction)> {
    lines
        .iter()
        .enumerate()
        .skip(from)
        .filter(|(_, l)| l.var_refs().any(|(_, name)| name == var))
        .collect()
}

fn fresh_name(prefix: &str, counter: &mut usize, taken: &HashSet<&str>) -> String {
    loop {
        let name = format!("{prefix}{counter}");
        *counter += 1;
        if !taken.contains(name.as_str()) {
            return name;
        }
    }
}

pub(super) fn rewrite_block(
    lines: &[Instruction],
    loc_index: usize,
    ctx: &mut RepairContext,
) -> Result<(Vec<Instruction>, Vec<RepairRecord>), RewriteUnsupported> {
    let unsupported = |reason: &str| RewriteUnsupported {
        loc_index,
        reason: reason.to_string(),
    };
    let loc = lines
        .get(loc_index)
        .filter(|l| l.module_name == "LOC")
        .ok_or_else(|| unsupported("not a LOC instruction"))?;

    let crops = consumers(lines, loc_index + 1, &loc.output_var);
    if crops.is_empty() {
        return Err(unsupported("LOC output is not cropped"));
    }
    let mut crop_image: Option<&ArgValue> = None;
    for (_, crop) in &crops {
        let plain = crop.module_name == "CROP"
            && crop.arg("box").and_then(ArgValue::as_var) == Some(loc.output_var.as_str())
            && crop.arg("each").is_none();
        if !plain {
            return Err(unsupported(
                "LOC output feeds something other than a plain CROP",
            ));
        }
        let image = crop.arg("image");
        match crop_image {
            None => crop_image = image,
            Some(prev) if Some(prev) == image => {}
            Some(_) => return Err(unsupported("crops read different images")),
        }
        let readers = consumers(lines, 0, &crop.output_var);
        if readers.is_empty() || readers.iter().any(|(_, r)| r.module_name != "VQA") {
            return Err(unsupported("cropped image is not consumed by VQA only"));
        }
    }
    let crop_image = crop_image
        .cloned()
        .ok_or_else(|| unsupported("CROP without image"))?;

    let taken: HashSet<&str> = lines
        .iter()
        .map(|l| l.output_var.as_str())
        .chain(lines.iter().flat_map(|l| l.var_refs().map(|(_, n)| n)))
        .collect();
    let box_array = fresh_name("BOX_ARRAY_", &mut ctx.num_box_arrays, &taken);
    let image_array = fresh_name("IMAGE_ARRAY_", &mut ctx.num_image_arrays, &taken);

    let mut records = Vec::new();
    let mut out = Vec::with_capacity(lines.len() + 1);
    let first_crop = crops[0].0;
    let mut crop_ordinal = 0i64;
    for (pos, line) in lines.iter().enumerate() {
        if pos == loc_index {
            let mut new_loc = line.clone();
            new_loc.output_var = box_array.clone();
            new_loc.remove_arg("plural");
            records.push(record(line, &new_loc));
            out.push(new_loc);
            continue;
        }
        if pos == first_crop {
            let mut split = Instruction::new(image_array.clone(), "CROP")
                .with_arg("image", crop_image.clone())
                .with_arg("box", ArgValue::VarRef(box_array.clone()))
                .with_arg("each", ArgValue::BoolLiteral(true));
            split.line_index = line.line_index;
            records.push(RepairRecord {
                line_index: line.line_index,
                rule_id: rules::LOC_QUANTIFIER_REWRITE.to_string(),
                before: String::new(),
                after: split.to_string(),
            });
            out.push(split);
        }
        if crops.iter().any(|(c, _)| *c == pos) {
            let mut get = Instruction::new(line.output_var.clone(), "GET")
                .with_arg("array", ArgValue::VarRef(image_array.clone()))
                .with_arg("index", ArgValue::NumberLiteral(crop_ordinal));
            get.line_index = line.line_index;
            crop_ordinal += 1;
            records.push(record(line, &get));
            out.push(get);
            continue;
        }
        out.push(line.clone());
    }
    Ok((out, records))
}

fn record(before: &Instruction, after: &Instruction) -> RepairRecord {
    RepairRecord {
        line_index: before.line_index,
        rule_id: rules::LOC_QUANTIFIER_REWRITE.to_string(),
        before: before.to_string(),
        after: after.to_string(),
    }
}
