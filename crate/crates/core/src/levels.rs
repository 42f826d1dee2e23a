//! Serde form shared by the phase and gray-level settings: the string
//! `"continuous"` or a positive level count.

use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
pub(crate) enum LevelsRepr {
    Count(u32),
    Mode(String),
}

impl LevelsRepr {
    pub(crate) fn into_levels(self) -> Result<Option<u32>, String> {
        match self {
            LevelsRepr::Count(n) => Ok(Some(n)),
            LevelsRepr::Mode(m) if m == "continuous" => Ok(None),
            LevelsRepr::Mode(m) => Err(format!("levels must be \"continuous\" or a count, got \"{m}\"")),
        }
    }

    pub(crate) fn from_levels(levels: Option<u32>) -> LevelsRepr {
        match levels {
            Some(n) => LevelsRepr::Count(n),
            None => LevelsRepr::Mode("continuous".into()),
        }
    }
}
