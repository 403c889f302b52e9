use std::fs;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use super::*;
use crate::autodiff::{check_gradients_sampled, Graph, Tensor, Var};
use crate::data::{
    generate_synthetic_climate, ymd_h, DatasetStore, Manifest, SyntheticConfig, TimeRange, VariableSet, Window,
};
use crate::grid::GridSpec;
use crate::models::{build_model, Arch, ModelState, SpecMode};

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_window(kp: usize, grid: &GridSpec, m: usize, seed: u64) -> Window<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (grid.n_lat(), grid.n_lon());
    Window {
        t0: ymd_h(2000, 1, 1, 0),
        x: (0..=m).map(|_| random(&mut rng, &[kp, h, w], 1.0)).collect(),
        f: (0..m).map(|_| random(&mut rng, &[1, h, w], 1.0)).collect(),
        c: random(&mut rng, &[4, h, w], 1.0),
    }
}

fn toy_model(arch: Arch, grid: &GridSpec, seed: u64) -> ModelState<f64> {
    let vars = VariableSet::with_prognostic_count(2).unwrap();
    let settings = TrainSettings {
        mode: SpecMode::Free,
        ..TrainSettings::default()
    };
    let overrides = ModelOverrides {
        n_heads: (arch == Arch::Climax).then_some(4),
        ..ModelOverrides::default()
    };
    let cfg = TrainConfig::build(arch, vars, 2, 2, 16, seed, &settings, &overrides);
    build_model(&cfg.model, grid, seed).unwrap()
}

fn randomize(model: &mut ModelState<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = 0.3 * rng.gen_range(-1.0..1.0);
        }
    }
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0, 20, 4e-3), 4e-3);
    assert!((cosine_lr(10, 20, 4e-3) - 2e-3).abs() < 1e-18);
    assert!(cosine_lr(20, 20, 4e-3).abs() < 1e-18);
    assert!(cosine_lr(19, 20, 4e-3) < 4e-3 * 0.01);
    let lrs: Vec<f64> = (0..20).map(|e| cosine_lr(e, 20, 1e-3)).collect();
    assert!(lrs.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn clipping_examples() {
    let mut g = vec![Tensor::new(vec![2], vec![0.003f64, 0.004]).unwrap()];
    let pre = clip_grad_norm(&mut g, 1e-3).unwrap();
    assert!((pre - 0.005).abs() < 1e-15);
    assert!((g[0].data()[0] - 0.0006).abs() < 1e-15 && (g[0].data()[1] - 0.0008).abs() < 1e-15);
    let mut small = vec![Tensor::new(vec![2], vec![0.0003f64, 0.0004]).unwrap()];
    clip_grad_norm(&mut small, 1e-3).unwrap();
    assert_eq!(small[0].data(), &[0.0003, 0.0004]);
    let mut bad = vec![Tensor::new(vec![2], vec![f64::NAN, 1.0]).unwrap()];
    assert!(matches!(clip_grad_norm(&mut bad, 1e-3), Err(crate::Error::NonFiniteGradient(_))));
}

proptest! {
    #[test]
    fn clipping_preserves_direction(values in proptest::collection::vec(-1e-2f64..1e-2, 1..40), split in 1usize..10) {
        let tensors: Vec<Tensor<f64>> = values.chunks(split).map(|c| Tensor::new(vec![c.len()], c.to_vec()).unwrap()).collect();
        let mut clipped = tensors.clone();
        let pre = clip_grad_norm(&mut clipped, 1e-3).unwrap();
        let post = global_norm(&clipped);
        prop_assert!((post - pre.min(1e-3)).abs() <= 1e-9);
        if pre > 0.0 {
            let dot: f64 = tensors.iter().zip(&clipped).flat_map(|(a, b)| a.data().iter().zip(b.data())).map(|(a, b)| a * b).sum();
            prop_assert!((dot / (pre * post) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn loss_is_nonnegative(seed in 0u64..1000) {
        let grid = GridSpec::new(8, 4).unwrap();
        let model = toy_model(Arch::Sfno, &grid, 1);
        let w = random_window(2, &grid, 2, seed);
        let weights = grid.area_weights().cast::<f64>();
        prop_assert!(multi_step_loss(&model, &w, &weights).unwrap() >= 0.0);
    }
}

#[test]
fn first_adam_step_is_signed_learning_rate() {
    let lr = 1e-3;
    let mut p = vec![Tensor::new(vec![4], vec![1.0f64, -2.0, 0.5, 0.0]).unwrap()];
    let g = vec![Tensor::new(vec![4], vec![0.3, -0.02, 5.0, 0.0]).unwrap()];
    let mut adam = Adam::new(AdamConfig::default(), &p);
    adam.step(&mut p, &g, lr).unwrap();
    let want = [1.0 - lr, -2.0 + lr, 0.5 - lr, 0.0];
    for (a, b) in p[0].data().iter().zip(want) {
        assert!((a - b).abs() <= 1e-3 * lr, "{a} vs {b}");
    }
    let before = p.clone();
    let zero = vec![Tensor::zeros(vec![4])];
    let mut fresh = Adam::new(AdamConfig::default(), &p);
    fresh.step(&mut p, &zero, lr).unwrap();
    assert_eq!(p, before);
    assert!(adam.step(&mut p, &[], lr).is_err());
}

#[test]
fn adam_trajectories_replay_exactly() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = vec![random(&mut rng, &[3, 5], 1.0)];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        for _ in 0..25 {
            let g: Vec<Tensor<f64>> = vec![random(&mut rng, &[3, 5], 0.1)];
            adam.step(&mut p, &g, 1e-2).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
}

#[test]
fn patience_five_on_scripted_losses() {
    let mut es = EarlyStopping::new(5);
    let losses = [1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95];
    let mut stopped = None;
    for (i, &l) in losses.iter().enumerate() {
        if es.observe(i + 1, l).stop {
            stopped = Some(i + 1);
            break;
        }
    }
    assert_eq!(stopped, Some(7));
    assert_eq!(es.best(), Some((2, 0.9)));
    let mut es = EarlyStopping::new(2);
    assert!(!es.observe(1, f64::NAN).improved);
    assert!(es.observe(2, 3.0).improved);
}

#[test]
fn zero_model_on_static_data_has_zero_loss() {
    let grid = GridSpec::new(8, 4).unwrap();
    for arch in Arch::ALL {
        let model = toy_model(arch, &grid, 3);
        let mut w = random_window(2, &grid, 2, 9);
        let x0 = w.x[0].clone();
        w.x.iter_mut().for_each(|x| *x = x0.clone());
        let weights = grid.area_weights().cast::<f64>();
        assert_eq!(multi_step_loss(&model, &w, &weights).unwrap(), 0.0, "{arch}");
    }
}

#[test]
fn one_step_persistence_loss_matches_hand_sum() {
    // three time steps of one variable on a 4x2 grid
    let grid = GridSpec::new(4, 2).unwrap();
    let dir = TempDir::new().unwrap();
    let vars = VariableSet::new(vec!["tas".into()], vec!["tisr".into()], vec![]).unwrap();
    let range = TimeRange::from_steps(ymd_h(2001, 5, 1, 0), 3).unwrap();
    let store = DatasetStore::create(dir.path(), Manifest::new(grid.clone(), range, &vars)).unwrap();
    let tas: Vec<f32> = (0..24).map(|i| ((i * 7) % 5) as f32 - 1.5).collect();
    store.write_year("tas", 2001, &tas).unwrap();
    store.write_year("tisr", 2001, &[0.5; 24]).unwrap();
    store.write_constants(&[]).unwrap();
    let stats = crate::data::compute_normalization(&store, &range).unwrap();
    let s = stats.get("tas").unwrap();
    let a = grid.area_weights();
    let norm = |v: f32| (v as f64 - s.mean) / s.std;
    let mut oracle = 0.0;
    for t in 0..2 {
        let mut acc = 0.0;
        for h in 0..2 {
            for w in 0..4 {
                let d = norm(tas[(t + 1) * 8 + h * 4 + w]) - norm(tas[t * 8 + h * 4 + w]);
                acc += a.get(h) * d * d;
            }
        }
        oracle += acc / 8.0;
    }
    oracle /= 2.0;

    let spec = crate::models::ModelSpec::new(Arch::Sfno, 1, 4, 1, 1, 0).free();
    let model = build_model::<f64>(&spec, &grid, 0).unwrap();
    let weights = a.cast::<f64>();
    let windows = crate::data::load_batch::<f64>(&store, &stats, &[range.start, range.timestamp(1)], 1).unwrap();
    let mean: f64 = windows.iter().map(|w| multi_step_loss(&model, w, &weights).unwrap()).sum::<f64>() / 2.0;
    assert!((mean - oracle).abs() <= 1e-6 * oracle, "{mean} vs {oracle}");
    let p: f64 = windows.iter().map(|w| persistence_loss(w, a.as_slice())).sum::<f64>() / 2.0;
    assert!((p - oracle).abs() <= 1e-6 * oracle);
}

#[test]
fn two_step_loss_is_fed_forward_unroll() {
    let grid = GridSpec::new(8, 4).unwrap();
    let weights = grid.area_weights().cast::<f64>();
    for arch in Arch::ALL {
        let mut model = toy_model(arch, &grid, 5);
        randomize(&mut model, 6);
        let w = random_window(2, &grid, 2, 10);
        let loss = multi_step_loss(&model, &w, &weights).unwrap();
        let step = |x: &Tensor<f64>, f: &Tensor<f64>| {
            let dx = model.predict(x, f, &w.c).unwrap();
            Tensor::new(x.shape().to_vec(), x.data().iter().zip(dx.data()).map(|(a, b)| a + b).collect()).unwrap()
        };
        let x1 = step(&w.x[0], &w.f[0]);
        let x2 = step(&x1, &w.f[1]);
        let a = grid.area_weights();
        let manual = (weighted_mse(&x1, &w.x[1], a.as_slice()) + weighted_mse(&x2, &w.x[2], a.as_slice())) / 2.0;
        assert!((loss - manual).abs() <= 1e-6 * manual, "{arch}: {loss} vs {manual}");
    }
}

#[test]
fn two_step_gradients_match_finite_differences() {
    let grid = GridSpec::new(8, 4).unwrap();
    let weights = grid.area_weights().cast::<f64>();
    for arch in Arch::ALL {
        let mut model = toy_model(arch, &grid, 8);
        randomize(&mut model, 2);
        let w = random_window(2, &grid, 2, 12);
        let tensors = model.params().tensors().to_vec();
        let m = &model;
        let func = |g: &mut Graph<f64>, v: &[Var]| Ok(multi_step_loss_graph(g, m, v, &w, &weights)?.total);
        let rep = check_gradients_sampled(&func, &tensors, 1e-6, 3, 21).unwrap();
        assert!(rep.max_rel_error < 1e-3, "{arch}: {rep:?}");
    }
}

#[test]
fn replication_guards() {
    let grid = GridSpec::new(64, 32).unwrap();
    let ok = TrainConfig::replication(Arch::Sfno, VariableSet::vars8(), 2, 4, 128, 597);
    ok.validate(&grid).unwrap();
    assert_eq!(ok.lr_init, 1e-3);
    assert_eq!(TrainConfig::replication(Arch::Fcn, VariableSet::vars8(), 1, 4, 128, 597).lr_init, 4e-3);
    let mut bad = ok.clone();
    bad.m_steps = 3;
    assert!(bad.validate(&grid).is_err());
    let bad = TrainConfig::replication(Arch::Sfno, VariableSet::vars8(), 1, 4, 16, 597);
    assert!(bad.validate(&grid).is_err());
    let mut bad = ok.clone();
    bad.epochs = 3;
    assert!(bad.validate(&grid).is_err());
    let settings = TrainSettings {
        mode: SpecMode::Free,
        epochs: 3,
        batch_size: 4,
        ..TrainSettings::default()
    };
    let free = TrainConfig::build(Arch::Sfno, VariableSet::with_prognostic_count(2).unwrap(), 3, 2, 16, 1, &settings, &ModelOverrides::default());
    free.validate(&grid).unwrap();
}

#[test]
fn replication_grid_has_1620_runs_and_seed_list() {
    let spec = SweepSpec::default();
    assert_eq!(spec.n_runs(), 1620);
    let configs = spec.enumerate().unwrap();
    assert_eq!(configs.len(), 1620);
    let grid = GridSpec::new(64, 32).unwrap();
    let m = Manifest::new(grid.clone(), TimeRange::years(1979, 2018).unwrap(), &VariableSet::vars8());
    let mut ids: Vec<String> = configs.iter().map(|c| c.run_id(&m).unwrap()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 1620);
    configs[0].validate(&grid).unwrap();
    configs[1619].validate(&grid).unwrap();

    let toy = SweepSpec {
        archs: vec![Arch::Sfno],
        n_prognostic: vec![8],
        m_steps: vec![1],
        n_layers: vec![4],
        hidden_dims: vec![128],
        seeds: REPLICATION_SEEDS[..2].to_vec(),
        ..SweepSpec::default()
    };
    let seeds: Vec<u64> = toy.enumerate().unwrap().iter().map(|c| c.seed).collect();
    assert_eq!(seeds, [597, 1152]);
}

/// Two years of a 4-variable climate on the 16×8 grid.
fn toy_store() -> &'static (TempDir, DatasetStore) {
    static CELL: OnceLock<(TempDir, DatasetStore)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = SyntheticConfig {
            seed: 3,
            years: 2,
            start_year: 1990,
            grid: GridSpec::new(16, 8).unwrap(),
            n_prognostic: 4,
            spinup_steps: 200,
            ..SyntheticConfig::default()
        };
        let store = generate_synthetic_climate(&cfg, dir.path()).unwrap();
        (dir, store)
    })
}

fn toy_settings(epochs: usize) -> TrainSettings {
    TrainSettings {
        mode: SpecMode::Free,
        batch_size: 8,
        epochs,
        train_range: TimeRange::years(1990, 1990).unwrap(),
        val_range: TimeRange::years(1991, 1991).unwrap(),
        max_train_samples: Some(160),
        max_val_samples: Some(48),
        ..TrainSettings::default()
    }
}

fn toy_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig::build(
        Arch::Sfno,
        VariableSet::with_prognostic_count(4).unwrap(),
        1,
        2,
        16,
        seed,
        &toy_settings(epochs),
        &ModelOverrides::default(),
    )
}

#[test]
fn toy_sfno_beats_persistence_and_replays() {
    let (_, store) = toy_store();
    let cfg = toy_config(597, 3);
    let stats = normalization_for(store, &cfg.train_range).unwrap();
    let dir = TempDir::new().unwrap();
    let a = train::<f32>(&cfg, store, &stats, Some(dir.path())).unwrap();
    let r = &a.record;
    assert_eq!(r.status, RunStatus::Completed);
    assert_eq!(r.epochs.len(), 3);
    let best = r.best_val_loss.unwrap();
    assert!(best < r.persistence_val_loss, "{best} vs {}", r.persistence_val_loss);
    let min = r.epochs.iter().filter_map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(best, min);
    for f in ["config.json", "record.json", "best.ckpt", "last.ckpt", "log.txt", "stats.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let (loaded, _) = ModelState::<f32>::load(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(loaded.params(), a.model.params());

    let b = train::<f32>(&cfg, store, &stats, None).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn exploding_run_is_marked_failed() {
    let (_, store) = toy_store();
    let mut cfg = toy_config(1, 2);
    cfg.lr_init = 1e30;
    let stats = normalization_for(store, &cfg.train_range).unwrap();
    let dir = TempDir::new().unwrap();
    let out = train::<f32>(&cfg, store, &stats, Some(dir.path())).unwrap();
    assert_eq!(out.record.status, RunStatus::Failed);
    let f = out.record.failure.as_ref().unwrap();
    assert_eq!(f.seed, 1);
    assert!(dir.path().join("record.json").exists() && dir.path().join("last.ckpt").exists());
    assert!(completed_record(dir.path()).is_some());
}

#[test]
fn sweep_resumes_only_missing_runs() {
    let (_, store) = toy_store();
    let root = TempDir::new().unwrap();
    let spec = SweepSpec {
        archs: vec![Arch::Sfno],
        n_prognostic: vec![4],
        m_steps: vec![1],
        n_layers: vec![1],
        hidden_dims: vec![8],
        seeds: vec![597, 1152],
        settings: TrainSettings {
            max_train_samples: Some(16),
            max_val_samples: Some(8),
            ..toy_settings(1)
        },
        model_overrides: ModelOverrides::default(),
    };
    let first = run_sweep(&spec, store, root.path(), root.path(), 1).unwrap();
    assert_eq!(first.executed.len(), 2);
    assert!(first.manifest.runs.iter().all(|r| r.status == "COMPLETED"));
    let sweep_json = fs::read(root.path().join("sweep.json")).unwrap();

    let again = run_sweep(&spec, store, root.path(), root.path(), 1).unwrap();
    assert!(again.executed.is_empty());

    let victim = &first.manifest.runs[1].run_id;
    fs::remove_dir_all(run_dir(root.path(), victim)).unwrap();
    let resumed = run_sweep(&spec, store, root.path(), root.path(), 2).unwrap();
    assert_eq!(&resumed.executed, &[victim.clone()]);
    assert_eq!(fs::read(root.path().join("sweep.json")).unwrap(), sweep_json);

    let (a, _) = ModelState::<f32>::load(&run_dir(root.path(), &first.manifest.runs[0].run_id).join("best.ckpt")).unwrap();
    let (b, _) = ModelState::<f32>::load(&run_dir(root.path(), victim).join("best.ckpt")).unwrap();
    assert_ne!(a.params(), b.params());
}
