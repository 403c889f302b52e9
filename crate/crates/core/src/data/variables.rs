use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PRESSURE_LEVELS_33: [u32; 6] = [925, 850, 700, 600, 500, 250];
pub const DEFAULT_EVALUATION: [&str; 5] = ["tas", "uas", "vas", "ta850", "zg500"];
pub const CONSTANTS: [&str; 4] = ["lsm", "orog", "lat", "lon"];
pub const FORCINGS: [&str; 1] = ["tisr"];

/// Ordered prognostic, forcing and constant channel names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSet {
    pub prognostic: Vec<String>,
    pub forcings: Vec<String>,
    pub constants: Vec<String>,
    pub evaluation_subset: Vec<String>,
}

fn owned(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

impl VariableSet {
    pub fn new(prognostic: Vec<String>, forcings: Vec<String>, constants: Vec<String>) -> Result<Self> {
        let evaluation_subset: Vec<String> = DEFAULT_EVALUATION
            .iter()
            .filter(|v| prognostic.iter().any(|p| p == *v))
            .map(|v| v.to_string())
            .collect();
        let evaluation_subset = if evaluation_subset.is_empty() {
            prognostic.clone()
        } else {
            evaluation_subset
        };
        let set = Self {
            prognostic,
            forcings,
            constants,
            evaluation_subset,
        };
        set.validate()?;
        Ok(set)
    }

    /// tas, uas, vas, ta850 and zg at 1000/700/500/300 hPa.
    pub fn vars8() -> Self {
        let mut p = owned(&["tas", "uas", "vas", "ta850"]);
        p.extend([1000, 700, 500, 300].iter().map(|l| format!("zg{l}")));
        Self::new(p, owned(&FORCINGS), owned(&CONSTANTS)).unwrap()
    }

    /// tas, uas, vas and ta/zg/hus/ua/va on six pressure levels.
    pub fn vars33() -> Self {
        let mut p = owned(&["tas", "uas", "vas"]);
        for v in ["ta", "zg", "hus", "ua", "va"] {
            p.extend(PRESSURE_LEVELS_33.iter().map(|l| format!("{v}{l}")));
        }
        Self::new(p, owned(&FORCINGS), owned(&CONSTANTS)).unwrap()
    }

    /// `vars8` and `vars33` by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "vars8" => Ok(Self::vars8()),
            "vars33" => Ok(Self::vars33()),
            _ => Err(Error::Config(format!("unknown variable set '{name}' (vars8, vars33)"))),
        }
    }

    /// The preset with `k` prognostic variables, or the first `k` of `vars8`
    /// for smaller toy sets.
    pub fn with_prognostic_count(k: usize) -> Result<Self> {
        match k {
            8 => Ok(Self::vars8()),
            33 => Ok(Self::vars33()),
            1..=7 => {
                let base = Self::vars8();
                Self::new(base.prognostic[..k].to_vec(), base.forcings, base.constants)
            }
            _ => Err(Error::Config(format!("no variable set with {k} prognostic variables"))),
        }
    }

    pub fn with_evaluation_subset(mut self, subset: Vec<String>) -> Result<Self> {
        self.evaluation_subset = subset;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prognostic.is_empty() {
            return Err(Error::Config("variable set has no prognostic variables".into()));
        }
        let mut all: Vec<&String> = self
            .prognostic
            .iter()
            .chain(&self.forcings)
            .chain(&self.constants)
            .collect();
        let n = all.len();
        all.sort();
        all.dedup();
        if all.len() != n {
            return Err(Error::Config("variable names must be unique".into()));
        }
        if self.evaluation_subset.is_empty() {
            return Err(Error::Config("evaluation subset is empty".into()));
        }
        if let Some(v) = self.evaluation_subset.iter().find(|v| !self.prognostic.contains(v)) {
            return Err(Error::Config(format!("evaluation variable '{v}' is not prognostic")));
        }
        Ok(())
    }

    pub fn n_prognostic(&self) -> usize {
        self.prognostic.len()
    }

    pub fn n_forcing(&self) -> usize {
        self.forcings.len()
    }

    pub fn n_constant(&self) -> usize {
        self.constants.len()
    }

    pub fn prognostic_index(&self, name: &str) -> Option<usize> {
        self.prognostic.iter().position(|p| p == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let v8 = VariableSet::vars8();
        assert_eq!(v8.n_prognostic(), 8);
        assert_eq!(v8.prognostic, ["tas", "uas", "vas", "ta850", "zg1000", "zg700", "zg500", "zg300"]);
        assert_eq!(v8.evaluation_subset, DEFAULT_EVALUATION);
        assert_eq!(v8.constants, CONSTANTS);
        assert_eq!(v8.forcings, ["tisr"]);
        let v33 = VariableSet::vars33();
        assert_eq!(v33.n_prognostic(), 33);
        assert!(v33.prognostic.contains(&"hus925".to_string()));
        assert!(v33.prognostic.contains(&"va250".to_string()));
        assert_eq!(v33.evaluation_subset, DEFAULT_EVALUATION);
    }

    #[test]
    fn toy_sets_and_validation() {
        let v2 = VariableSet::with_prognostic_count(2).unwrap();
        assert_eq!(v2.prognostic, ["tas", "uas"]);
        assert_eq!(v2.evaluation_subset, ["tas", "uas"]);
        assert!(VariableSet::with_prognostic_count(12).is_err());
        assert!(VariableSet::vars8()
            .with_evaluation_subset(vec!["hus500".into()])
            .is_err());
        assert!(VariableSet::new(vec!["a".into(), "a".into()], vec![], vec![]).is_err());
        assert!(VariableSet::preset("vars9").is_err());
    }
}
