use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Gqa,
    Nlvr2,
    Vqav2,
    Mme,
    Video,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Gqa,
        TaskKind::Nlvr2,
        TaskKind::Vqav2,
        TaskKind::Mme,
        TaskKind::Video,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Gqa => "gqa",
            TaskKind::Nlvr2 => "nlvr2",
            TaskKind::Vqav2 => "vqav2",
            TaskKind::Mme => "mme",
            TaskKind::Video => "video",
        }
    }

    /// Paired-image statement verification.
    pub fn is_paired(self) -> bool {
        self == TaskKind::Nlvr2
    }

    /// Variables bound before the first instruction runs.
    pub fn seed_vars(self) -> &'static [&'static str] {
        if self.is_paired() {
            &["LEFT", "RIGHT", "IMAGE"]
        } else {
            &["IMAGE"]
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown task kind {0:?}")]
pub struct UnknownTaskKind(pub String);

impl FromStr for TaskKind {
    type Err = UnknownTaskKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownTaskKind(s.to_string()))
    }
}
