//! Residual one-step emulators: SFNO, FourCastNet (AFNO) and a ClimaX-style
//! transformer behind a common `(X, F, C) -> ΔX` interface.
//!
//! Tokens are kept channel-last (`[N, D]`) throughout; fields enter and leave
//! as `[K, H, W]`.

mod afno;
mod climax;
mod layers;
mod sfno;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::grid::GridSpec;
use crate::scalar::Scalar;
use crate::spectral::ShtPlan;

pub use afno::afno_filter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Climax,
    Fcn,
    Sfno,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Climax, Arch::Fcn, Arch::Sfno];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Climax => "climax",
            Arch::Fcn => "fcn",
            Arch::Sfno => "sfno",
        }
    }

    /// Initial Adam learning rate used for this family.
    pub fn default_lr(self) -> f64 {
        match self {
            Arch::Sfno => 1e-3,
            Arch::Climax | Arch::Fcn => 4e-3,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "climax" => Ok(Arch::Climax),
            "fcn" | "fourcastnet" | "afno" => Ok(Arch::Fcn),
            "sfno" => Ok(Arch::Sfno),
            _ => Err(Error::Config(format!("unknown architecture '{s}'"))),
        }
    }
}

/// `replication` restricts `L`, `D` and the per-family settings to the
/// published grid; `free` accepts any consistent values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecMode {
    #[default]
    Replication,
    Free,
}

pub const REPLICATION_LAYERS: [usize; 3] = [4, 6, 8];
pub const REPLICATION_HIDDEN: [usize; 3] = [128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    #[serde(default)]
    pub mode: SpecMode,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_prognostic: usize,
    pub n_forcing: usize,
    pub n_constant: usize,
    pub patch_size: (usize, usize),
    pub n_heads: usize,
    pub mlp_ratio: f64,
    pub decoder_depth: usize,
    pub sparsity_threshold: f64,
    pub hard_threshold_fraction: f64,
    pub n_blocks: usize,
    pub use_pos_embed: bool,
    pub big_skip: bool,
    pub use_mlp: bool,
}

impl ModelSpec {
    /// Family defaults for everything except depth, width and channel counts.
    pub fn new(
        arch: Arch,
        n_layers: usize,
        hidden_dim: usize,
        n_prognostic: usize,
        n_forcing: usize,
        n_constant: usize,
    ) -> Self {
        let base = Self {
            arch,
            mode: SpecMode::Replication,
            n_layers,
            hidden_dim,
            n_prognostic,
            n_forcing,
            n_constant,
            patch_size: (1, 1),
            n_heads: 1,
            mlp_ratio: 4.0,
            decoder_depth: 0,
            sparsity_threshold: 0.0,
            hard_threshold_fraction: 1.0,
            n_blocks: 1,
            use_pos_embed: false,
            big_skip: false,
            use_mlp: true,
        };
        match arch {
            Arch::Climax => Self {
                patch_size: (2, 2),
                n_heads: 8,
                decoder_depth: 2,
                use_pos_embed: true,
                ..base
            },
            Arch::Fcn => Self {
                n_blocks: 4,
                sparsity_threshold: 0.01,
                ..base
            },
            Arch::Sfno => Self {
                mlp_ratio: 2.0,
                ..base
            },
        }
    }

    pub fn free(mut self) -> Self {
        self.mode = SpecMode::Free;
        self
    }

    pub fn n_inputs(&self) -> usize {
        self.n_prognostic + self.n_forcing + self.n_constant
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.hidden_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.hidden_dim == 0 || self.n_prognostic == 0 {
            return cfg("n_layers, hidden_dim and n_prognostic must be positive".into());
        }
        if !(self.mlp_ratio > 0.0) {
            return cfg(format!("mlp_ratio {} must be positive", self.mlp_ratio));
        }
        let f = self.hard_threshold_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return cfg(format!("hard_threshold_fraction {f} must lie in (0, 1]"));
        }
        if !(self.sparsity_threshold >= 0.0) {
            return cfg(format!("sparsity_threshold {} must be >= 0", self.sparsity_threshold));
        }
        let (ph, pw) = self.patch_size;
        if ph == 0 || pw == 0 || grid.n_lat() % ph != 0 || grid.n_lon() % pw != 0 {
            return cfg(format!(
                "patch size ({ph}, {pw}) does not divide the {}x{} grid",
                grid.n_lon(),
                grid.n_lat()
            ));
        }
        match self.arch {
            Arch::Climax => {
                if self.n_heads == 0 || self.hidden_dim % self.n_heads != 0 {
                    return cfg(format!(
                        "hidden_dim {} not divisible by n_heads {}",
                        self.hidden_dim, self.n_heads
                    ));
                }
            }
            Arch::Fcn => {
                if self.n_blocks == 0 || self.hidden_dim % self.n_blocks != 0 {
                    return cfg(format!(
                        "hidden_dim {} not divisible by n_blocks {}",
                        self.hidden_dim, self.n_blocks
                    ));
                }
                if (grid.n_lon() / pw) % 2 != 0 {
                    return cfg("AFNO needs an even number of patch columns".into());
                }
            }
            Arch::Sfno => {
                if self.patch_size != (1, 1) {
                    return cfg("sfno operates on the full grid; patch size must be (1, 1)".into());
                }
            }
        }
        if self.mode == SpecMode::Replication {
            if !REPLICATION_LAYERS.contains(&self.n_layers) {
                return cfg(format!("n_layers {} not in {:?}", self.n_layers, REPLICATION_LAYERS));
            }
            if !REPLICATION_HIDDEN.contains(&self.hidden_dim) {
                return cfg(format!("hidden_dim {} not in {:?}", self.hidden_dim, REPLICATION_HIDDEN));
            }
            let locked = Self::new(
                self.arch,
                self.n_layers,
                self.hidden_dim,
                self.n_prognostic,
                self.n_forcing,
                self.n_constant,
            );
            if *self != locked {
                return cfg(format!(
                    "{} settings differ from the published configuration; use free mode",
                    self.arch
                ));
            }
        }
        Ok(())
    }

    /// Tokens per variable after patching.
    pub fn n_tokens(&self, grid: &GridSpec) -> usize {
        (grid.n_lat() / self.patch_size.0) * (grid.n_lon() / self.patch_size.1)
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self, grid: &GridSpec) -> Result<usize> {
        self.validate(grid)?;
        let d = self.hidden_dim;
        let cin = self.n_inputs();
        let kp = self.n_prognostic;
        let hid = self.mlp_hidden();
        let (ph, pw) = self.patch_size;
        let p = ph * pw;
        let n = self.n_tokens(grid);
        let linear = |a: usize, b: usize| a * b + b;
        let mlp = linear(d, hid) + linear(hid, d);
        let pos = if self.use_pos_embed { n * d } else { 0 };
        let count = match self.arch {
            Arch::Sfno => {
                let plan = ShtPlan::<f64>::new(grid, self.hard_threshold_fraction)?;
                let block = (plan.lmax() + 1) * d * d * 2 + if self.use_mlp { mlp } else { 0 };
                let head_in = d + if self.big_skip { cin } else { 0 };
                linear(cin, d) + pos + self.n_layers * block + linear(head_in, kp)
            }
            Arch::Fcn => {
                let bs = d / self.n_blocks;
                let block = 2 * self.n_blocks * bs * bs * 2 + mlp;
                linear(cin * p, d) + pos + self.n_layers * block + linear(d, kp * p)
            }
            Arch::Climax => {
                let embed = cin * p * d + cin * d;
                let var_embed = cin * d;
                let agg = d + 4 * linear(d, d);
                let block = linear(d, 3 * d) + linear(d, d) + mlp;
                embed
                    + var_embed
                    + agg
                    + pos
                    + self.n_layers * block
                    + self.decoder_depth * linear(d, d)
                    + linear(d, kp * p)
            }
        };
        Ok(count)
    }
}

/// A model's spec, grid and learned parameters.
#[derive(Debug, Clone)]
pub struct ModelState<T: Scalar> {
    spec: ModelSpec,
    grid: GridSpec,
    params: ParamStore<T>,
    index: HashMap<String, usize>,
    sht: Option<ShtPlan<T>>,
}

/// Parameters inserted into a particular graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub(crate) struct Params<'a> {
    vars: &'a [Var],
    index: &'a HashMap<String, usize>,
}

impl Params<'_> {
    pub(crate) fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("model has no parameter {name}"),
        }
    }

    pub(crate) fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}

/// Initializes parameters deterministically from `seed`: weights
/// truncated-normal (std 0.02, cut at 2 std), biases and the output head zero.
pub fn build_model<T: Scalar>(spec: &ModelSpec, grid: &GridSpec, seed: u64) -> Result<ModelState<T>> {
    spec.validate(grid)?;
    let mut init = layers::Init::new(seed);
    match spec.arch {
        Arch::Sfno => sfno::init(&mut init, spec, grid)?,
        Arch::Fcn => afno::init(&mut init, spec, grid),
        Arch::Climax => climax::init(&mut init, spec, grid),
    }
    let params = init.finish::<T>();
    ModelState::from_params(spec.clone(), grid.clone(), params)
}

impl<T: Scalar> ModelState<T> {
    pub fn from_params(spec: ModelSpec, grid: GridSpec, params: ParamStore<T>) -> Result<Self> {
        let index = params
            .names()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let sht = match spec.arch {
            Arch::Sfno => Some(ShtPlan::new(&grid, spec.hard_threshold_fraction)?),
            _ => None,
        };
        Ok(Self {
            spec,
            grid,
            params,
            index,
            sht,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.numel()
    }

    pub fn cast<U: Scalar>(&self) -> Result<ModelState<U>> {
        ModelState::from_params(self.spec.clone(), self.grid.clone(), self.params.cast())
    }

    /// Inserts the parameters as graph leaves.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .tensors()
                .iter()
                .map(|t| g.leaf(t.clone(), trainable))
                .collect(),
        }
    }

    fn check_input(&self, g: &Graph<T>, v: Var, k: usize, what: &'static str) -> Result<()> {
        let want = [k, self.grid.n_lat(), self.grid.n_lon()];
        if g.shape(v) != want {
            return Err(shape_err(
                "model_forward",
                format!("{what} has shape {:?}, expected {:?}", g.shape(v), want),
            ));
        }
        if !g.value(v).all_finite() {
            return Err(Error::NonFinite {
                op: "model-input",
                node: v.index(),
            });
        }
        Ok(())
    }

    /// `ΔX = f_θ(X, F, C)` inside `g`, using parameters from `bound` (which
    /// may be any leaves of matching shapes, e.g. for gradient checks).
    pub fn forward_graph(&self, g: &mut Graph<T>, bound: &[Var], x: Var, f: Var, c: Var) -> Result<Var> {
        let s = &self.spec;
        self.check_input(g, x, s.n_prognostic, "X")?;
        self.check_input(g, f, s.n_forcing, "F")?;
        self.check_input(g, c, s.n_constant, "C")?;
        if bound.len() != self.params.len() {
            return Err(shape_err(
                "model_forward",
                format!("{} bound parameters for {} slots", bound.len(), self.params.len()),
            ));
        }
        let p = Params {
            vars: bound,
            index: &self.index,
        };
        let parts: Vec<Var> = [x, f, c]
            .into_iter()
            .filter(|&v| g.shape(v)[0] > 0)
            .collect();
        let input = g.concat(&parts, 0)?;
        match s.arch {
            Arch::Sfno => sfno::forward(g, &p, s, &self.grid, self.sht.as_ref().unwrap(), input),
            Arch::Fcn => afno::forward(g, &p, s, &self.grid, input),
            Arch::Climax => climax::forward(g, &p, s, &self.grid, input),
        }
    }

    /// Eager one-step increment.
    pub fn predict(&self, x: &Tensor<T>, f: &Tensor<T>, c: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let (xv, fv, cv) = (g.constant(x.clone()), g.constant(f.clone()), g.constant(c.clone()));
        let out = self.forward_graph(&mut g, &b.vars, xv, fv, cv)?;
        Ok(g.value(out).clone())
    }

    pub fn save(&self, path: &Path, mut meta: BTreeMap<String, serde_json::Value>) -> Result<()> {
        meta.insert("model_spec".into(), serde_json::to_value(&self.spec)?);
        meta.insert("grid".into(), serde_json::to_value(&self.grid)?);
        self.params.save(path, meta)
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, serde_json::Value>)> {
        let (params, meta) = ParamStore::<T>::load(path)?;
        let missing = |k: &str| Error::Format(format!("checkpoint metadata lacks '{k}'"));
        let spec: ModelSpec =
            serde_json::from_value(meta.get("model_spec").cloned().ok_or_else(|| missing("model_spec"))?)?;
        let grid: GridSpec = serde_json::from_value(meta.get("grid").cloned().ok_or_else(|| missing("grid"))?)?;
        let reference = build_model::<T>(&spec, &grid, 0)?;
        let layout_ok = reference.params.names() == params.names()
            && reference
                .params
                .tensors()
                .iter()
                .zip(params.tensors())
                .all(|(a, b)| a.shape() == b.shape());
        if !layout_ok {
            return Err(Error::Format(
                "checkpoint parameters do not match the stored model spec".into(),
            ));
        }
        Ok((Self::from_params(spec, grid, params)?, meta))
    }
}
