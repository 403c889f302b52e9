//! `RSL-DS-1` dataset directories.
//!
//! ```text
//! manifest.json
//! stats.json           (optional until normalization is computed)
//! constants.bin        [K_c][H][W]
//! <var>/<year>.bin     [steps in year][H][W]
//! ```
//! All arrays are little-endian `f32`, row-major, latitudes south to north.

use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use super::calendar::{steps_between, ymd_h, TimeRange, Timestamp, STEP_HOURS};
use super::stats::NormalizationStats;
use super::variables::VariableSet;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const DATASET_FORMAT: &str = "RSL-DS-1";
pub const CALENDAR: &str = "proleptic_gregorian";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub grid: GridSpec,
    pub start: Timestamp,
    pub n_steps: usize,
    pub step_hours: u32,
    pub calendar: String,
    pub prognostic: Vec<String>,
    pub forcings: Vec<String>,
    pub constants: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<serde_json::Value>,
}

impl Manifest {
    pub fn new(grid: GridSpec, range: TimeRange, vars: &VariableSet) -> Self {
        Self {
            format: DATASET_FORMAT.into(),
            grid,
            start: range.start,
            n_steps: range.n_steps(),
            step_hours: STEP_HOURS as u32,
            calendar: CALENDAR.into(),
            prognostic: vars.prognostic.clone(),
            forcings: vars.forcings.clone(),
            constants: vars.constants.clone(),
            source: None,
        }
    }

    pub fn time_range(&self) -> TimeRange {
        TimeRange::from_steps(self.start, self.n_steps).expect("validated manifest")
    }

    fn validate(&self) -> Result<()> {
        if self.format != DATASET_FORMAT {
            return Err(Error::Format(format!(
                "dataset format '{}' is not {DATASET_FORMAT}",
                self.format
            )));
        }
        if self.step_hours as i64 != STEP_HOURS || self.calendar != CALENDAR {
            return Err(Error::Format(format!(
                "unsupported time axis: {} h steps, calendar '{}'",
                self.step_hours, self.calendar
            )));
        }
        TimeRange::from_steps(self.start, self.n_steps)?;
        Ok(())
    }

    pub fn time_series_vars(&self) -> impl Iterator<Item = &String> {
        self.prognostic.iter().chain(&self.forcings)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetStore {
    root: PathBuf,
    manifest: Manifest,
}

fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

impl DatasetStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let text = fs::read_to_string(root.join("manifest.json")).map_err(|e| {
            Error::Format(format!("cannot read {}: {e}", root.join("manifest.json").display()))
        })?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(Self { root, manifest })
    }

    /// Creates the directory and manifest; arrays are added with the
    /// `write_*` methods.
    pub fn create(root: impl AsRef<Path>, manifest: Manifest) -> Result<Self> {
        manifest.validate()?;
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        fs::write(root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn grid(&self) -> &GridSpec {
        &self.manifest.grid
    }

    pub fn time_range(&self) -> TimeRange {
        self.manifest.time_range()
    }

    pub fn variables(&self) -> Result<VariableSet> {
        VariableSet::new(
            self.manifest.prognostic.clone(),
            self.manifest.forcings.clone(),
            self.manifest.constants.clone(),
        )
    }

    pub fn step_of(&self, t: &Timestamp) -> Result<usize> {
        let range = self.time_range();
        if !range.contains(t) || !super::calendar::is_aligned(t) {
            return Err(Error::Range(format!(
                "timestamp {} outside dataset {} .. {}",
                super::calendar::format_timestamp(t),
                super::calendar::format_timestamp(&range.start),
                super::calendar::format_timestamp(&range.end)
            )));
        }
        Ok(steps_between(&range.start, t) as usize)
    }

    /// Steps `[first, first + n)` of the whole axis stored in `year`.
    fn year_span(&self, year: i32) -> Option<(usize, usize)> {
        let range = self.time_range();
        let lo = ymd_h(year, 1, 1, 0).max(range.start);
        let hi = ymd_h(year, 12, 31, 18).min(range.end);
        if hi < lo {
            return None;
        }
        let first = steps_between(&range.start, &lo) as usize;
        Some((first, steps_between(&lo, &hi) as usize + 1))
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        let r = self.time_range();
        r.start.year()..=r.end.year()
    }

    fn var_dir(&self, var: &str) -> Result<PathBuf> {
        if !self.manifest.time_series_vars().any(|v| v == var) {
            return Err(Error::Config(format!("dataset has no time-varying variable '{var}'")));
        }
        Ok(self.root.join(var))
    }

    /// Writes every step of `year` for `var`.
    pub fn write_year(&self, var: &str, year: i32, values: &[f32]) -> Result<()> {
        let dir = self.var_dir(var)?;
        let (_, n) = self
            .year_span(year)
            .ok_or_else(|| Error::Range(format!("year {year} not in dataset")))?;
        let want = n * self.grid().n_points();
        if values.len() != want {
            return Err(Error::Format(format!(
                "{var}/{year}: {} values, expected {want}",
                values.len()
            )));
        }
        fs::create_dir_all(&dir)?;
        write_f32(&dir.join(format!("{year}.bin")), values)
    }

    pub fn write_constants(&self, values: &[f32]) -> Result<()> {
        let want = self.manifest.constants.len() * self.grid().n_points();
        if values.len() != want {
            return Err(Error::Format(format!(
                "constants: {} values, expected {want}",
                values.len()
            )));
        }
        write_f32(&self.root.join("constants.bin"), values)
    }

    pub fn write_stats(&self, stats: &NormalizationStats) -> Result<()> {
        fs::write(self.root.join("stats.json"), serde_json::to_string_pretty(stats)?)?;
        Ok(())
    }

    pub fn stats(&self) -> Result<NormalizationStats> {
        let path = self.root.join("stats.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Steps `[first, first + n)` of `var` as `[n][H][W]`.
    pub fn read_steps(&self, var: &str, first: usize, n: usize) -> Result<Vec<f32>> {
        let dir = self.var_dir(var)?;
        if first + n > self.manifest.n_steps {
            return Err(Error::Range(format!(
                "steps {first}..{} beyond dataset length {}",
                first + n,
                self.manifest.n_steps
            )));
        }
        let np = self.grid().n_points();
        let mut out = Vec::with_capacity(n * np);
        let mut step = first;
        let end = first + n;
        let start_year = self.time_range().timestamp(first).year();
        for year in start_year..=self.time_range().last_year() {
            if step >= end {
                break;
            }
            let Some((y0, yn)) = self.year_span(year) else { continue };
            let lo = step.max(y0);
            let hi = end.min(y0 + yn);
            if hi <= lo {
                continue;
            }
            let path = dir.join(format!("{year}.bin"));
            let mut f = File::open(&path)
                .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
            f.seek(SeekFrom::Start(((lo - y0) * np * 4) as u64))?;
            let mut buf = vec![0u8; (hi - lo) * np * 4];
            f.read_exact(&mut buf)?;
            out.extend(decode_f32(&buf));
            step = hi;
        }
        Ok(out)
    }

    pub fn read_constants(&self) -> Result<Vec<f32>> {
        let path = self.root.join("constants.bin");
        let bytes =
            fs::read(&path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        let want = self.manifest.constants.len() * self.grid().n_points() * 4;
        if bytes.len() != want {
            return Err(Error::Format(format!("constants.bin has {} bytes, expected {want}", bytes.len())));
        }
        Ok(decode_f32(&bytes))
    }
}
