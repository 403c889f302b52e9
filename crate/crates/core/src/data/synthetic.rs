//! Synthetic reference climate on the sphere.
//!
//! Each prognostic variable is `base(φ) + scale (ψ + ζ)`. The fast latent
//! field ψ is band-limited and advanced in spectral space by a pairwise
//! cross-variable rotation, solid-body rotation, damping plus diffusion,
//! TISR-anomaly forcing and red noise. The slow field ζ is an independent
//! red-noise process with a timescale of about a year, providing low
//! frequency variability. Neither carries a global-mean noise component.

use std::f64::consts::PI;
use std::path::Path;

use chrono::Datelike;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::calendar::{step_duration, TimeRange, Timestamp};
use super::stats::compute_normalization;
use super::store::{DatasetStore, Manifest};
use super::tisr::{compute_tisr, SOLAR_CONSTANT};
use super::variables::VariableSet;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::spectral::{lmax_exact, ShtPlan, SpectralCoeffs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub years: usize,
    pub start_year: i32,
    pub grid: GridSpec,
    pub n_prognostic: usize,
    /// Highest retained degree; defaults to `min(7, lmax_exact(H))`.
    pub band_limit: Option<usize>,
    /// Cross-variable rotation per step (rad).
    pub coupling_angle: f64,
    /// Damping rate per step.
    pub damping: f64,
    /// Diffusion rate per step, multiplied by `l (l + 1)`.
    pub diffusion: f64,
    /// Eastward solid-body rotation per step (rad).
    pub rotation: f64,
    pub forcing_gain: f64,
    pub slow_std: f64,
    pub slow_timescale_steps: f64,
    /// Linear trend in anomaly-scale units per year.
    pub trend_per_year: f64,
    pub spinup_steps: usize,
    /// Years from the start used for `stats.json`.
    pub stats_years: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            years: 3,
            start_year: 1979,
            grid: GridSpec::new(32, 16).unwrap(),
            n_prognostic: 8,
            band_limit: None,
            coupling_angle: 0.4,
            damping: 0.05,
            diffusion: 1e-3,
            rotation: 0.03,
            forcing_gain: 0.25,
            slow_std: 0.5,
            slow_timescale_steps: 1460.0,
            trend_per_year: 0.0,
            spinup_steps: 1460,
            stats_years: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn band_limit(&self) -> usize {
        self.band_limit
            .unwrap_or_else(|| 7.min(lmax_exact(self.grid.n_lat())))
    }

    pub fn time_range(&self) -> Result<TimeRange> {
        if self.years == 0 {
            return Err(Error::Config("synthetic climate needs at least one year".into()));
        }
        TimeRange::years(self.start_year, self.start_year + self.years as i32 - 1)
    }

    fn validate(&self) -> Result<()> {
        let le = self.band_limit();
        if le == 0 || le > self.grid.n_lat() - 1 || le >= self.grid.n_lon() / 2 {
            return Err(Error::Config(format!("band limit {le} not resolvable on the grid")));
        }
        if !(self.damping > 0.0) || self.diffusion < 0.0 || !(self.slow_timescale_steps > 0.0) {
            return Err(Error::Config("damping and slow timescale must be positive".into()));
        }
        if self.stats_years == 0 || self.stats_years > self.years {
            return Err(Error::Config(format!(
                "stats_years {} must lie in 1..={}",
                self.stats_years, self.years
            )));
        }
        Ok(())
    }
}

/// `(mean, pole-to-equator coefficient on sin²φ, anomaly scale)`.
pub fn variable_profile(name: &str) -> (f64, f64, f64) {
    let level = |prefix: &str| name.strip_prefix(prefix).and_then(|l| l.parse::<f64>().ok());
    if name == "tas" {
        return (288.0, -12.0, 4.0);
    }
    if name == "uas" {
        return (-1.0, 6.0, 3.0);
    }
    if name == "vas" {
        return (0.0, 0.0, 2.0);
    }
    if let Some(p) = level("ta") {
        return (288.0 * (p / 1000.0).powf(0.19), -12.0, 3.5);
    }
    if let Some(p) = level("zg") {
        let z = 100.0 + 8000.0 * (1000.0 / p).ln();
        return (z, -(50.0 + 0.04 * z), 30.0 + 0.01 * z);
    }
    if let Some(p) = level("hus") {
        let q = 0.012 * (p / 1000.0).powi(3);
        return (q, -0.8 * q, 0.2 * q + 1e-5);
    }
    if let Some(p) = level("ua") {
        return (5.0 + 15.0 * (1.0 - p / 1000.0), 5.0, 4.0);
    }
    if level("va").is_some() {
        return (0.0, 0.0, 3.0);
    }
    (0.0, 0.0, 1.0)
}

/// Per-step state in spectral space, `[K][m][l]` complex.
struct Latent {
    k: usize,
    nm: usize,
    nl: usize,
    data: Vec<[f64; 2]>,
}

impl Latent {
    fn new(k: usize, lmax: usize, mmax: usize) -> Self {
        Self {
            k,
            nm: mmax + 1,
            nl: lmax + 1,
            data: vec![[0.0; 2]; k * (mmax + 1) * (lmax + 1)],
        }
    }

    fn at(&mut self, k: usize, m: usize, l: usize) -> &mut [f64; 2] {
        &mut self.data[(k * self.nm + m) * self.nl + l]
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Noise amplitudes per degree giving a stationary field variance of
/// `target` for per-degree retention `rho_l`.
fn noise_amplitudes(shape: impl Fn(usize) -> f64, rho: &[f64], target: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..rho.len()).map(|l| if l == 0 { 0.0 } else { shape(l) }).collect();
    let var: f64 = raw
        .iter()
        .zip(rho)
        .enumerate()
        .map(|(l, (s, r))| (2 * l + 1) as f64 * s * s / (1.0 - r * r))
        .sum::<f64>()
        / (4.0 * PI);
    let c = if var > 0.0 { (target / var).sqrt() } else { 0.0 };
    raw.iter().map(|s| s * c).collect()
}

struct Generator {
    cfg: SyntheticConfig,
    plan: ShtPlan<f64>,
    vars: VariableSet,
    fast: Latent,
    slow: Latent,
    rho: Vec<f64>,
    rho_slow: f64,
    sigma: Vec<f64>,
    sigma_slow: Vec<f64>,
    gain: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Generator {
    fn new(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let vars = VariableSet::with_prognostic_count(cfg.n_prognostic)?;
        let le = cfg.band_limit();
        let mmax = le.min(cfg.grid.n_lon() / 2 - 1);
        let plan = ShtPlan::with_truncation(&cfg.grid, le, mmax)?;
        let rho: Vec<f64> = (0..=le)
            .map(|l| (-(cfg.damping + cfg.diffusion * (l * (l + 1)) as f64)).exp())
            .collect();
        let rho_slow = (-1.0 / cfg.slow_timescale_steps).exp();
        let sigma = noise_amplitudes(|l| 1.0 / ((l + 1) as f64).sqrt(), &rho, 1.0);
        let sigma_slow = noise_amplitudes(
            |l| 1.0 / (l + 1) as f64,
            &vec![rho_slow; le + 1],
            cfg.slow_std * cfg.slow_std,
        );
        let k = vars.n_prognostic();
        let gain = (0..k).map(|i| cfg.forcing_gain * (1.0 - 0.15 * i as f64)).collect();
        Ok(Self {
            fast: Latent::new(k, le, mmax),
            slow: Latent::new(k, le, mmax),
            cfg: cfg.clone(),
            plan,
            vars,
            rho,
            rho_slow,
            sigma,
            sigma_slow,
            gain,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    fn forcing_coeffs(&self, tisr: &[f64]) -> Result<SpectralCoeffs<f64>> {
        let (h, w) = (self.cfg.grid.n_lat(), self.cfg.grid.n_lon());
        let anomaly: Vec<f64> = tisr.iter().map(|v| v / SOLAR_CONSTANT - 0.25).collect();
        self.plan
            .analyse(&crate::autodiff::Tensor::new(vec![1, h, w], anomaly)?)
    }

    /// Advances both latent fields by one step under forcing `tisr`.
    fn step(&mut self, tisr: &[f64]) -> Result<()> {
        let forcing = self.forcing_coeffs(tisr)?;
        let (nm, nl, k) = (self.fast.nm, self.fast.nl, self.fast.k);
        let (st, ct) = self.cfg.coupling_angle.sin_cos();
        for m in 0..nm {
            let phase = -(m as f64) * self.cfg.rotation;
            let (pc, ps) = (phase.cos(), phase.sin());
            for l in m..nl {
                let mut v: Vec<[f64; 2]> = (0..k).map(|i| *self.fast.at(i, m, l)).collect();
                for j in (0..k.saturating_sub(1)).step_by(2) {
                    let (a, b) = (v[j], v[j + 1]);
                    for c in 0..2 {
                        v[j][c] = ct * a[c] - st * b[c];
                        v[j + 1][c] = st * a[c] + ct * b[c];
                    }
                }
                let (fr, fi) = forcing.get(0, l, m);
                for (i, z) in v.iter().enumerate() {
                    let r = self.rho[l];
                    let re = r * (pc * z[0] - ps * z[1]) + self.gain[i] * fr;
                    let im = r * (ps * z[0] + pc * z[1]) + self.gain[i] * fi;
                    let (nr, ni) = self.noise(self.sigma[l], m);
                    *self.fast.at(i, m, l) = [re + nr, if m == 0 { 0.0 } else { im + ni }];
                    let (sr, si) = self.noise(self.sigma_slow[l], m);
                    let s = self.slow.at(i, m, l);
                    s[0] = self.rho_slow * s[0] + sr;
                    s[1] = if m == 0 { 0.0 } else { self.rho_slow * s[1] + si };
                }
            }
        }
        Ok(())
    }

    fn noise(&mut self, sigma: f64, m: usize) -> (f64, f64) {
        if sigma == 0.0 {
            return (0.0, 0.0);
        }
        if m == 0 {
            (sigma * gaussian(&mut self.rng), 0.0)
        } else {
            let s = sigma / 2f64.sqrt();
            (s * gaussian(&mut self.rng), s * gaussian(&mut self.rng))
        }
    }

    /// Physical prognostic fields `[K][H][W]` at `years_elapsed`.
    fn observe(&self, years_elapsed: f64) -> Result<Vec<f64>> {
        let k = self.fast.k;
        let mut c = SpectralCoeffs::zeros(k, self.plan.lmax(), self.plan.mmax());
        for kk in 0..k {
            for m in 0..self.fast.nm {
                for l in m..self.fast.nl {
                    let o = (kk * self.fast.nm + m) * self.fast.nl + l;
                    let (f, s) = (self.fast.data[o], self.slow.data[o]);
                    c.set(kk, l, m, f[0] + s[0], f[1] + s[1]);
                }
            }
        }
        let field = self.plan.synthesise(&c)?;
        let np = self.cfg.grid.n_points();
        let w = self.cfg.grid.n_lon();
        let lats = self.cfg.grid.latitudes();
        let mut out = field.into_data();
        for (i, name) in self.vars.prognostic.iter().enumerate() {
            let (b0, b2, scale) = variable_profile(name);
            let shift = self.cfg.trend_per_year * years_elapsed;
            for (p, v) in out[i * np..(i + 1) * np].iter_mut().enumerate() {
                let s = lats[p / w].to_radians().sin();
                *v = b0 + b2 * s * s + scale * (*v + shift);
            }
        }
        Ok(out)
    }
}

/// Band-limited random field with unit-ish variance, `[H][W]`.
fn random_field(plan: &ShtPlan<f64>, lmax: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut c = SpectralCoeffs::zeros(1, plan.lmax(), plan.mmax());
    for (_, l, m) in c.indices().collect::<Vec<_>>() {
        if l == 0 || l > lmax {
            continue;
        }
        let a = 1.0 / (l as f64 + 1.0);
        let im = if m == 0 { 0.0 } else { a * gaussian(rng) };
        c.set(0, l, m, a * gaussian(rng), im);
    }
    Ok(plan.synthesise(&c)?.into_data())
}

fn constants(cfg: &SyntheticConfig, plan: &ShtPlan<f64>, names: &[String]) -> Result<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00c0_ffee_5eed);
    let grid = &cfg.grid;
    let np = grid.n_points();
    let w = grid.n_lon();
    let land = random_field(plan, 4.min(plan.lmax()), &mut rng)?;
    let sd = (land.iter().map(|v| v * v).sum::<f64>() / np as f64).sqrt();
    let lsm: Vec<f64> = land.iter().map(|&v| if v > 0.3 * sd { 1.0 } else { 0.0 }).collect();
    let relief = random_field(plan, plan.lmax(), &mut rng)?;
    let rsd = (relief.iter().map(|v| v * v).sum::<f64>() / np as f64).sqrt().max(1e-12);
    let mut out = Vec::with_capacity(names.len() * np);
    for name in names {
        for p in 0..np {
            let v = match name.as_str() {
                "lsm" => lsm[p],
                "orog" => lsm[p] * (200.0 + 800.0 * (relief[p] / rsd).abs()),
                "lat" => grid.latitudes()[p / w],
                "lon" => grid.longitudes()[p % w],
                _ => 0.0,
            };
            out.push(v as f32);
        }
    }
    Ok(out)
}

/// Generates the dataset under `dir` and writes `stats.json` over the
/// first `stats_years` years. Fully determined by `cfg`.
pub fn generate_synthetic_climate(cfg: &SyntheticConfig, dir: &Path) -> Result<DatasetStore> {
    let range = cfg.time_range()?;
    let mut gen = Generator::new(cfg)?;
    let mut manifest = Manifest::new(cfg.grid.clone(), range, &gen.vars);
    manifest.source = Some(serde_json::json!({ "synthetic": cfg }));
    let store = DatasetStore::create(dir, manifest)?;
    store.write_constants(&constants(cfg, &gen.plan, &gen.vars.constants)?)?;

    let step = step_duration();
    let mut t: Timestamp = range.start - step * cfg.spinup_steps as i32;
    for _ in 0..cfg.spinup_steps {
        gen.step(&compute_tisr(&t, &cfg.grid))?;
        t += step;
    }
    let np = cfg.grid.n_points();
    let k = gen.vars.n_prognostic();
    let per_year_hint = 1464 * np;
    let mut prog: Vec<Vec<f32>> = vec![Vec::with_capacity(per_year_hint); k];
    let mut forcing: Vec<f32> = Vec::with_capacity(per_year_hint);
    let mut year = range.start.year();
    for (i, t) in range.iter().enumerate() {
        if t.year() != year {
            flush(&store, &gen.vars, year, &mut prog, &mut forcing)?;
            year = t.year();
        }
        let tisr = compute_tisr(&t, &cfg.grid);
        let x = gen.observe(i as f64 / 1461.0)?;
        for (kk, buf) in prog.iter_mut().enumerate() {
            buf.extend(x[kk * np..(kk + 1) * np].iter().map(|&v| v as f32));
        }
        forcing.extend(tisr.iter().map(|&v| v as f32));
        gen.step(&tisr)?;
    }
    flush(&store, &gen.vars, year, &mut prog, &mut forcing)?;

    let stats_range = TimeRange::years(cfg.start_year, cfg.start_year + cfg.stats_years as i32 - 1)?;
    let stats = compute_normalization(&store, &stats_range)?;
    store.write_stats(&stats)?;
    Ok(store)
}

fn flush(
    store: &DatasetStore,
    vars: &VariableSet,
    year: i32,
    prog: &mut [Vec<f32>],
    forcing: &mut Vec<f32>,
) -> Result<()> {
    for (name, buf) in vars.prognostic.iter().zip(prog.iter_mut()) {
        store.write_year(name, year, buf)?;
        buf.clear();
    }
    for name in &vars.forcings {
        store.write_year(name, year, forcing)?;
    }
    forcing.clear();
    Ok(())
}
