//! Per-variable z-score statistics over the training period.

use serde::{Deserialize, Serialize};

use super::calendar::TimeRange;
use super::store::DatasetStore;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub train_range: TimeRange,
    /// Grid points are weighted equally.
    pub area_weighted: bool,
    pub variables: Vec<NamedStats>,
}

/// Mean and population variance accumulator, merged chunk by chunk.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push_chunk(&mut self, values: &[f32]) {
        if values.is_empty() {
            return;
        }
        let nb = values.len() as f64;
        let mb = values.iter().map(|&v| v as f64).sum::<f64>() / nb;
        let m2b: f64 = values.iter().map(|&v| (v as f64 - mb).powi(2)).sum();
        let n = self.n + nb;
        let delta = mb - self.mean;
        self.mean += delta * nb / n;
        self.m2 += m2b + delta * delta * self.n * nb / n;
        self.n = n;
    }

    pub fn count(&self) -> f64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.n > 0.0 {
            (self.m2 / self.n).sqrt()
        } else {
            0.0
        }
    }
}

fn floored(name: &str, mean: f64, std: f64) -> NamedStats {
    let std = if std < STD_FLOOR {
        log::warn!("variable {name} is constant (std {std:e}); flooring std to {STD_FLOOR:e}");
        STD_FLOOR
    } else {
        std
    };
    NamedStats {
        name: name.to_string(),
        mean,
        std,
    }
}

/// Latitude and longitude channels are scaled to `[-1, 1]` rather than
/// standardized.
fn coordinate_stats(name: &str) -> Option<NamedStats> {
    let (mean, std) = match name {
        "lat" => (0.0, 90.0),
        "lon" => (180.0, 180.0),
        _ => return None,
    };
    Some(NamedStats {
        name: name.into(),
        mean,
        std,
    })
}

impl NormalizationStats {
    pub fn get(&self, name: &str) -> Result<VarStats> {
        self.variables
            .iter()
            .find(|v| v.name == name)
            .map(|v| VarStats {
                mean: v.mean,
                std: v.std,
            })
            .ok_or_else(|| Error::Config(format!("no normalization statistics for '{name}'")))
    }

    pub fn normalize(&self, name: &str, values: &mut [f32]) -> Result<()> {
        let s = self.get(name)?;
        for v in values {
            *v = ((*v as f64 - s.mean) / s.std) as f32;
        }
        Ok(())
    }

    pub fn denormalize(&self, name: &str, values: &mut [f32]) -> Result<()> {
        let s = self.get(name)?;
        for v in values {
            *v = (*v as f64 * s.std + s.mean) as f32;
        }
        Ok(())
    }
}

/// Unweighted mean and population std of every variable over `train`,
/// streamed one year at a time; constants use their single field.
pub fn compute_normalization(store: &DatasetStore, train: &TimeRange) -> Result<NormalizationStats> {
    if !store.time_range().contains_range(train) {
        return Err(Error::Range("training range outside the dataset".into()));
    }
    let first = store.step_of(&train.start)?;
    let n = train.n_steps();
    let m = store.manifest();
    let mut variables = Vec::new();
    for var in m.time_series_vars() {
        let mut acc = Moments::default();
        let chunk = 1464;
        let mut s = first;
        while s < first + n {
            let k = chunk.min(first + n - s);
            acc.push_chunk(&store.read_steps(var, s, k)?);
            s += k;
        }
        variables.push(floored(var, acc.mean(), acc.std()));
    }
    let consts = store.read_constants()?;
    let np = store.grid().n_points();
    for (i, name) in m.constants.iter().enumerate() {
        if let Some(s) = coordinate_stats(name) {
            variables.push(s);
            continue;
        }
        let mut acc = Moments::default();
        acc.push_chunk(&consts[i * np..(i + 1) * np]);
        variables.push(floored(name, acc.mean(), acc.std()));
    }
    Ok(NormalizationStats {
        train_range: *train,
        area_weighted: false,
        variables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn chunked_moments_match_two_pass(values in proptest::collection::vec(-1e3f32..1e3, 1..400), split in 1usize..50) {
            let mut acc = Moments::default();
            for c in values.chunks(split) {
                acc.push_chunk(c);
            }
            let n = values.len() as f64;
            let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            prop_assert!((acc.mean() - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
            prop_assert!((acc.std() - var.sqrt()).abs() <= 1e-9 * (1.0 + var.sqrt()));
        }
    }

    #[test]
    fn alternating_values() {
        let mut acc = Moments::default();
        acc.push_chunk(&[1.0, 3.0, 1.0, 3.0]);
        assert_eq!((acc.mean(), acc.std()), (2.0, 1.0));
        let stats = NormalizationStats {
            train_range: TimeRange::years(2000, 2000).unwrap(),
            area_weighted: false,
            variables: vec![floored("x", 2.0, 1.0), floored("c", 5.0, 0.0)],
        };
        let mut v = [1.0f32, 3.0];
        stats.normalize("x", &mut v).unwrap();
        assert_eq!(v, [-1.0, 1.0]);
        assert_eq!(stats.get("c").unwrap().std, STD_FLOOR);
        assert!(stats.get("missing").is_err());
    }
}
