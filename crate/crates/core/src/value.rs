//! Runtime values and the variable environment shared by the executor and
//! the expression evaluator.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Handle to an image or a cropped region of one. Coordinates are pixels with
/// the origin at the top-left corner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub width: u32,
    pub height: u32,
    /// Path or URL of the root image, when one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    /// Region of the root image this handle covers, `[x1, y1, x2, y2]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<[u32; 4]>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id: id.into(),
            width,
            height,
            origin: None,
            region: None,
        }
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origin = Some(origin.into());
        self
    }

    pub fn whole_box(&self, score: f64) -> BBox {
        BBox {
            x1: 0.0,
            y1: 0.0,
            x2: self.width as f64,
            y2: self.height as f64,
            score,
        }
    }

    /// Crops `[x1, y1, x2, y2]` (pixels, relative to this image) after clamping
    /// to the image bounds and snapping outward to whole pixels.
    pub fn crop(&self, x1: f64, y1: f64, x2: f64, y2: f64) -> Result<ImageRef, BoxError> {
        let cx1 = x1.max(0.0).floor() as u32;
        let cy1 = y1.max(0.0).floor() as u32;
        let cx2 = (x2.min(self.width as f64).ceil().max(0.0)) as u32;
        let cy2 = (y2.min(self.height as f64).ceil().max(0.0)) as u32;
        if cx1 >= cx2 || cy1 >= cy2 {
            return Err(BoxError::Degenerate {
                coords: [x1, y1, x2, y2],
            });
        }
        let (ox, oy) = match self.region {
            Some([rx, ry, _, _]) => (rx, ry),
            None => (0, 0),
        };
        Ok(ImageRef {
            id: format!("{}@{},{},{},{}", self.id, cx1, cy1, cx2, cy2),
            width: cx2 - cx1,
            height: cy2 - cy1,
            origin: self.origin.clone(),
            region: Some([ox + cx1, oy + cy1, ox + cx2, oy + cy2]),
        })
    }

    /// Side-by-side concatenation, shorter image padded at the bottom.
    pub fn concat_horizontal(left: &ImageRef, right: &ImageRef) -> ImageRef {
        ImageRef::new(
            format!("{}+{}", left.id, right.id),
            left.width + right.width,
            left.height.max(right.height),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("box {coords:?} is outside a {width}x{height} image or inverted")]
    Illegal {
        coords: [f64; 4],
        width: u32,
        height: u32,
    },
    #[error("score {0} outside [0, 1]")]
    Score(f64),
    #[error("box {coords:?} has no area after clamping")]
    Degenerate { coords: [f64; 4] },
}

/// Axis-aligned box in pixels with a confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl BBox {
    /// Checked constructor: `0 <= x1 < x2 <= width`, same for y, score in [0, 1].
    pub fn new(coords: [f64; 4], score: f64, width: u32, height: u32) -> Result<BBox, BoxError> {
        let [x1, y1, x2, y2] = coords;
        if !(0.0..=1.0).contains(&score) {
            return Err(BoxError::Score(score));
        }
        let legal = coords.iter().all(|c| c.is_finite())
            && 0.0 <= x1
            && x1 < x2
            && x2 <= width as f64
            && 0.0 <= y1
            && y1 < y2
            && y2 <= height as f64;
        if !legal {
            return Err(BoxError::Illegal {
                coords,
                width,
                height,
            });
        }
        Ok(BBox {
            x1,
            y1,
            x2,
            y2,
            score,
        })
    }

    /// Clamps raw model coordinates into the image, then validates.
    pub fn clamped(
        coords: [f64; 4],
        score: f64,
        width: u32,
        height: u32,
    ) -> Result<BBox, BoxError> {
        let [x1, y1, x2, y2] = coords;
        let w = width as f64;
        let h = height as f64;
        BBox::new(
            [
                x1.clamp(0.0, w),
                y1.clamp(0.0, h),
                x2.clamp(0.0, w),
                y2.clamp(0.0, h),
            ],
            score.clamp(0.0, 1.0),
            width,
            height,
        )
        .map_err(|err| match err {
            BoxError::Illegal { .. } => BoxError::Degenerate { coords },
            other => other,
        })
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Value {
    Image(ImageRef),
    Box(BBox),
    BoxArray(Vec<BBox>),
    ImageArray(Vec<ImageRef>),
    Text(String),
    Number(i64),
    Boolean(bool),
    Null,
}

impl Value {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Image(_) => "image",
            Value::Box(_) => "box",
            Value::BoxArray(_) => "box array",
            Value::ImageArray(_) => "image array",
            Value::Text(_) => "text",
            Value::Number(_) => "number",
            Value::Boolean(_) => "boolean",
            Value::Null => "null",
        }
    }

    /// Form used when a value is spliced into an EVAL template.
    pub fn template_form(&self) -> String {
        match self {
            Value::Boolean(true) => "True".to_string(),
            Value::Boolean(false) => "False".to_string(),
            other => other.to_string(),
        }
    }

    /// Form reported as a final answer: booleans become `yes`/`no`.
    pub fn answer_form(&self) -> String {
        match self {
            Value::Boolean(true) => "yes".to_string(),
            Value::Boolean(false) => "no".to_string(),
            other => other.to_string(),
        }
    }
}

fn fmt_box(b: &BBox) -> String {
    format!(
        "[{},{},{},{}]@{:.3}",
        trim_float(b.x1),
        trim_float(b.y1),
        trim_float(b.x2),
        trim_float(b.y2),
        b.score
    )
}

fn trim_float(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Image(img) => write!(f, "<image {} {}x{}>", img.id, img.width, img.height),
            Value::Box(b) => f.write_str(&fmt_box(b)),
            Value::BoxArray(boxes) => {
                let items: Vec<_> = boxes.iter().map(fmt_box).collect();
                write!(f, "[{}]", items.join(", "))
            }
            Value::ImageArray(images) => {
                let items: Vec<_> = images
                    .iter()
                    .map(|img| format!("<image {} {}x{}>", img.id, img.width, img.height))
                    .collect();
                write!(f, "[{}]", items.join(", "))
            }
            Value::Text(text) => f.write_str(text),
            Value::Number(n) => write!(f, "{n}"),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::Null => f.write_str("None"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("variable {0} is already assigned")]
    Reassigned(String),
}

/// Single-assignment binding environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Env {
    bindings: BTreeMap<String, Value>,
}

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seed for single-image tasks: `IMAGE` only.
    pub fn with_image(image: ImageRef) -> Self {
        let mut env = Env::new();
        env.bindings
            .insert("IMAGE".to_string(), Value::Image(image));
        env
    }

    /// Seed for paired-image tasks: `LEFT`, `RIGHT`, and their concatenation as `IMAGE`.
    pub fn with_pair(left: ImageRef, right: ImageRef) -> Self {
        let mut env = Env::new();
        let joined = ImageRef::concat_horizontal(&left, &right);
        env.bindings.insert("LEFT".to_string(), Value::Image(left));
        env.bindings
            .insert("RIGHT".to_string(), Value::Image(right));
        env.bindings
            .insert("IMAGE".to_string(), Value::Image(joined));
        env
    }

    pub fn bind(&mut self, name: impl Into<String>, value: Value) -> Result<(), EnvError> {
        let name = name.into();
        if self.bindings.contains_key(&name) {
            return Err(EnvError::Reassigned(name));
        }
        self.bindings.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.bindings.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.bindings.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.bindings.iter()
    }

    pub fn image(&self) -> Option<&ImageRef> {
        match self.bindings.get("IMAGE") {
            Some(Value::Image(img)) => Some(img),
            _ => None,
        }
    }
}
