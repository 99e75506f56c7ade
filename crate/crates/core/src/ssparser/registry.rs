use std::collections::BTreeMap;

use crate::task::TaskKind;

/// Surface kind an argument must be written as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgKind {
    Var,
    Str,
    Bool,
    Num,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Image,
    Box,
    BoxArray,
    ImageArray,
    Text,
    Number,
    Boolean,
    /// Depends on the inputs (EVAL, GET, RESULT).
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleSignature {
    pub required: Vec<(&'static str, ArgKind)>,
    pub optional: Vec<(&'static str, ArgKind)>,
    pub output: OutputKind,
}

impl ModuleSignature {
    fn new(
        required: &[(&'static str, ArgKind)],
        optional: &[(&'static str, ArgKind)],
        output: OutputKind,
    ) -> Self {
        Self {
            required: required.to_vec(),
            optional: optional.to_vec(),
            output,
        }
    }

    pub fn arg_kind(&self, key: &str) -> Option<ArgKind> {
        self.required
            .iter()
            .chain(&self.optional)
            .find(|(k, _)| *k == key)
            .map(|(_, kind)| *kind)
    }
}

/// Directional crop modules: region on one side of a box's center line.
pub const DIRECTIONAL_CROPS: [&str; 4] =
    ["CROP_LEFTOF", "CROP_RIGHTOF", "CROP_ABOVE", "CROP_BELOW"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleRegistry {
    modules: BTreeMap<String, ModuleSignature>,
}

impl ModuleRegistry {
    pub fn empty() -> Self {
        Self {
            modules: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, signature: ModuleSignature) {
        self.modules.insert(name.into(), signature);
    }

    /// Eleven modules: detection, VQA, crops, counting, indexing, EVAL, RESULT.
    pub fn gqa() -> Self {
        use ArgKind::*;
        let mut reg = Self::empty();
        reg.insert(
            "LOC",
            ModuleSignature::new(
                &[("image", Var), ("object", Str)],
                &[("plural", Bool)],
                OutputKind::BoxArray,
            ),
        );
        reg.insert(
            "VQA",
            ModuleSignature::new(&[("image", Var), ("question", Str)], &[], OutputKind::Text),
        );
        reg.insert(
            "CROP",
            ModuleSignature::new(
                &[("image", Var), ("box", Var)],
                &[("each", Bool)],
                OutputKind::Image,
            ),
        );
        for name in DIRECTIONAL_CROPS {
            reg.insert(
                name,
                ModuleSignature::new(&[("image", Var), ("box", Var)], &[], OutputKind::Image),
            );
        }
        reg.insert(
            "COUNT",
            ModuleSignature::new(&[("box", Var)], &[], OutputKind::Number),
        );
        reg.insert(
            "GET",
            ModuleSignature::new(&[("array", Var), ("index", Num)], &[], OutputKind::Dynamic),
        );
        reg.insert(
            "EVAL",
            ModuleSignature::new(&[("expr", Str)], &[], OutputKind::Dynamic),
        );
        reg.insert(
            "RESULT",
            ModuleSignature::new(&[("var", Var)], &[], OutputKind::Dynamic),
        );
        reg
    }

    /// Paired-image statements use only VQA, EVAL and RESULT.
    pub fn nlvr2() -> Self {
        let gqa = Self::gqa();
        let mut reg = Self::empty();
        for name in ["VQA", "EVAL", "RESULT"] {
            reg.insert(name, gqa.modules[name].clone());
        }
        reg
    }

    pub fn for_task(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Nlvr2 => Self::nlvr2(),
            _ => Self::gqa(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ModuleSignature> {
        self.modules.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.modules.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.modules.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }
}
