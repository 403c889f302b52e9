//! Self-checks of the exactly checkable invariants, run by `rsl verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_gradients_sampled, Graph, Tensor, Var};
use crate::data::{compute_tisr, sample_index, ymd_h, TimeRange, VariableSet, Window, SOLAR_CONSTANT};
use crate::error::Result;
use crate::eval::{aggregate_seeds, detect_blowup};
use crate::grid::GridSpec;
use crate::models::{build_model, Arch, SpecMode};
use crate::spectral::{lmax_exact, ShtPlan, SpectralCoeffs};
use crate::train::{
    clip_grad_norm, cosine_lr, global_norm, multi_step_loss, multi_step_loss_graph, EarlyStopping, ModelOverrides,
    SweepSpec, TrainConfig, TrainSettings,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn sample_count() -> Result<(bool, String)> {
    let r = TimeRange::years(1979, 2007)?;
    let n = sample_index(&r, 1, &ymd_h(2018, 12, 31, 18)).len();
    Ok((n == 42368, format!("{n} samples")))
}

fn sweep_size() -> Result<(bool, String)> {
    let s = SweepSpec::default();
    let n = s.enumerate()?.len();
    Ok((n == 1620 && s.n_runs() == 1620, format!("{n} runs")))
}

fn sht_round_trip() -> Result<(bool, String)> {
    let grid = GridSpec::new(32, 16)?;
    let l = lmax_exact(16);
    let plan = ShtPlan::<f64>::with_truncation(&grid, l, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut c = SpectralCoeffs::<f64>::zeros(1, l, l);
    let idx: Vec<_> = c.indices().collect();
    for (ch, ll, m) in idx {
        let im = if m == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) };
        c.set(ch, ll, m, rng.gen_range(-1.0..1.0), im);
    }
    let f = plan.synthesise(&c)?;
    let back = plan.synthesise(&plan.analyse(&f)?)?;
    let scale = f.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let err = f.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
    let one = plan.analyse(&Tensor::full(vec![1, 16, 32], 1.0))?;
    let a00 = one.get(0, 0, 0).0;
    let a00_err = (a00 - (4.0 * std::f64::consts::PI).sqrt()).abs();
    Ok((err < 1e-10 && a00_err < 1e-6, format!("round trip {err:.2e}, a00 error {a00_err:.2e}")))
}

fn tisr_sanity() -> Result<(bool, String)> {
    let grid = GridSpec::new(32, 16)?;
    let w = grid.area_weights();
    let r = TimeRange::years(2009, 2009)?;
    let mut acc = 0.0;
    for t in r.iter() {
        acc += w.mean(&compute_tisr(&t, &grid))?;
    }
    let mean = acc / r.n_steps() as f64;
    let rel = (mean - SOLAR_CONSTANT / 4.0).abs() / (SOLAR_CONSTANT / 4.0);
    let june = compute_tisr(&ymd_h(2009, 6, 21, 12), &grid);
    let night = june[..32].iter().all(|&v| v == 0.0);
    Ok((rel < 0.02 && night, format!("annual mean {mean:.2} W/m2 ({:.3}%), polar night {night}", 100.0 * rel)))
}

fn optimizer_protocol() -> Result<(bool, String)> {
    let ends = cosine_lr(0, 20, 1e-3) == 1e-3 && cosine_lr(20, 20, 1e-3).abs() < 1e-18;
    let mut g = vec![Tensor::new(vec![2], vec![0.03f64, 0.04])?];
    clip_grad_norm(&mut g, 1e-3)?;
    let clipped = (global_norm(&g) - 1e-3).abs() < 1e-15;
    let mut es = EarlyStopping::new(5);
    let losses = [1.0, 0.9, 0.8, 0.85, 0.81, 0.82, 0.83, 0.84, 0.7];
    let stop = losses.iter().enumerate().find(|(e, l)| es.observe(*e, **l).stop).map(|(e, _)| e);
    let patience = stop == Some(7) && es.best() == Some((2, 0.8));
    Ok((ends && clipped && patience, format!("cosine {ends}, clip {clipped}, patience stop {stop:?}")))
}

fn aggregation() -> Result<(bool, String)> {
    let a = aggregate_seeds(&[0.1, 0.2, f64::INFINITY]);
    let ok = a.finite_count == 2 && a.mean.is_some_and(|m| (m - 0.15).abs() < 1e-15);
    let blow = !detect_blowup(&[9999.0f64]) && detect_blowup(&[10001.0f64]) && detect_blowup(&[f64::NAN]);
    Ok((ok && blow, format!("mean {:?}, finite {}, blow-up bound {blow}", a.mean, a.finite_count)))
}

fn toy_config(arch: Arch) -> TrainConfig {
    let settings = TrainSettings {
        mode: SpecMode::Free,
        ..TrainSettings::default()
    };
    let overrides = ModelOverrides {
        n_heads: (arch == Arch::Climax).then_some(4),
        ..ModelOverrides::default()
    };
    TrainConfig::build(arch, VariableSet::with_prognostic_count(2).expect("toy set"), 2, 2, 16, 1, &settings, &overrides)
}

fn random_window(grid: &GridSpec, seed: u64, static_state: bool) -> Result<Window<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let mut rand = |c: usize| Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let x0 = rand(2)?;
    let x = if static_state { vec![x0.clone(); 3] } else { vec![x0, rand(2)?, rand(2)?] };
    Ok(Window {
        t0: ymd_h(2000, 1, 1, 0),
        x,
        f: vec![rand(1)?, rand(1)?],
        c: rand(4)?,
    })
}

fn gradients() -> Result<(bool, String)> {
    let grid = GridSpec::new(8, 4)?;
    let weights = grid.area_weights().cast::<f64>();
    let mut worst = 0.0f64;
    for arch in Arch::ALL {
        let mut model = build_model::<f64>(&toy_config(arch).model, &grid, 3)?;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in model.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v = 0.3 * rng.gen_range(-1.0..1.0);
            }
        }
        let w = random_window(&grid, 6, false)?;
        let m = &model;
        let func = |g: &mut Graph<f64>, v: &[Var]| Ok(multi_step_loss_graph(g, m, v, &w, &weights)?.total);
        let rep = check_gradients_sampled(&func, model.params().tensors(), 1e-6, 3, 7)?;
        worst = worst.max(rep.max_rel_error);
    }
    Ok((worst < 1e-3, format!("max relative error {worst:.2e}")))
}

fn zero_model_loss() -> Result<(bool, String)> {
    let grid = GridSpec::new(8, 4)?;
    let mut model = build_model::<f64>(&toy_config(Arch::Sfno).model, &grid, 1)?;
    for t in model.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let loss = multi_step_loss(&model, &random_window(&grid, 2, true)?, grid.area_weights().as_slice())?;
    Ok((loss == 0.0, format!("loss {loss}")))
}

/// Runs every check; `quick` skips the gradient and loss checks.
pub fn run_checks(quick: bool) -> Vec<CheckResult> {
    let mut out = vec![
        check("sample_count", sample_count),
        check("sweep_size", sweep_size),
        check("sht_round_trip", sht_round_trip),
        check("tisr_sanity", tisr_sanity),
        check("optimizer_protocol", optimizer_protocol),
        check("aggregation", aggregation),
    ];
    if !quick {
        out.push(check("zero_model_loss", zero_model_loss));
        out.push(check("gradients", gradients));
    }
    out
}
