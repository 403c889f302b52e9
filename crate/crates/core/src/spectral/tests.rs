use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Graph, Tensor};
use crate::grid::GridSpec;
use crate::scalar::Scalar;

fn band_limited<T: Scalar>(
    rng: &mut ChaCha8Rng,
    channels: usize,
    plan: &ShtPlan<T>,
    lband: usize,
) -> SpectralCoeffs<T> {
    let mut c = SpectralCoeffs::zeros(channels, plan.lmax(), plan.mmax());
    for (ch, l, m) in c.indices().collect::<Vec<_>>() {
        if l <= lband {
            let re = rng.gen_range(-1.0..1.0);
            let im = if m == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) };
            c.set(ch, l, m, T::from_f64(re).unwrap(), T::from_f64(im).unwrap());
        }
    }
    c
}

fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64().unwrap() - y.to_f64().unwrap()).abs())
        .fold(0.0, f64::max)
}

fn max_abs<T: Scalar>(a: &[T]) -> f64 {
    a.iter().map(|x| x.to_f64().unwrap().abs()).fold(0.0, f64::max)
}

#[test]
fn plan_truncation_examples() {
    let g = GridSpec::new(64, 32).unwrap();
    let p = ShtPlan::<f64>::new(&g, 1.0).unwrap();
    assert_eq!((p.lmax(), p.mmax()), (31, 31));
    let p = ShtPlan::<f64>::new(&g, 0.5).unwrap();
    assert_eq!(p.lmax(), 15);
    let p = ShtPlan::<f64>::new(&GridSpec::new(8, 4).unwrap(), 1.0).unwrap();
    assert_eq!((p.lmax(), p.mmax()), (3, 3));
    for bad in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(ShtPlan::<f64>::new(&g, bad).is_err());
    }
    // narrow grid: mmax must stay below the Nyquist order
    let p = ShtPlan::<f64>::new(&GridSpec::new(4, 8).unwrap(), 1.0).unwrap();
    assert_eq!(p.mmax(), 1);
}

#[test]
fn legendre_rows_are_orthonormal_under_quadrature() {
    for (w, h) in [(32usize, 16usize), (64, 32), (8, 4), (16, 9)] {
        let grid = GridSpec::new(w, h).unwrap();
        let p = ShtPlan::<f64>::new(&grid, 1.0).unwrap();
        let le = p.lmax_exact();
        let q = p.quadrature_weights();
        for m in 0..=p.mmax().min(le) {
            for l in m..=le {
                for lp in m..=le {
                    let s: f64 = (0..h).map(|hi| q[hi] * p.legendre(l, m, hi) * p.legendre(lp, m, hi)).sum();
                    let e = if l == lp { 1.0 } else { 0.0 };
                    assert!((s - e).abs() < 1e-6, "{w}x{h} l={l} l'={lp} m={m}: {s}");
                }
            }
        }
    }
}

#[test]
fn constant_field_maps_to_a00() {
    let grid = GridSpec::new(32, 16).unwrap();
    let plan = ShtPlan::<f64>::new(&grid, 1.0).unwrap();
    let f = Tensor::full(vec![1, 16, 32], 1.0);
    let a = plan.analyse(&f).unwrap();
    let (re, im) = a.get(0, 0, 0);
    assert!((re - (4.0 * PI).sqrt()).abs() < 1e-6);
    assert!(im.abs() < 1e-12);
    for (c, l, m) in a.indices() {
        if (l, m) != (0, 0) {
            let (r, i) = a.get(c, l, m);
            assert!(r.abs() < 1e-6 && i.abs() < 1e-6, "a_{l}{m} = {r} {i}");
        }
    }
    let back = plan.synthesise(&a).unwrap();
    assert!(back.data().iter().all(|v| (v - 1.0).abs() < 1e-6));
}

#[test]
fn sin_lat_maps_to_a10() {
    let grid = GridSpec::new(32, 16).unwrap();
    let plan = ShtPlan::<f64>::new(&grid, 1.0).unwrap();
    let data: Vec<f64> = grid
        .latitudes()
        .iter()
        .flat_map(|lat| std::iter::repeat(lat.to_radians().sin()).take(32))
        .collect();
    let a = plan.analyse(&Tensor::new(vec![16, 32], data).unwrap()).unwrap();
    let (re, _) = a.get(0, 1, 0);
    assert!((re - (4.0 * PI / 3.0).sqrt()).abs() < 1e-6);
    // sin(lat) * P_l is integrated exactly while 1 + l <= H - 1
    for (c, l, m) in a.indices() {
        if (l, m) != (1, 0) && l <= 14 {
            let (r, i) = a.get(c, l, m);
            assert!(r.abs() < 1e-6 && i.abs() < 1e-6, "a_{l}{m} = {r} {i}");
        }
    }
}

#[test]
fn zero_coefficients_give_zero_field() {
    let grid = GridSpec::new(16, 8).unwrap();
    let plan = ShtPlan::<f32>::new(&grid, 1.0).unwrap();
    let f = plan
        .synthesise(&SpectralCoeffs::zeros(2, plan.lmax(), plan.mmax()))
        .unwrap();
    assert_eq!(f.shape(), &[2, 8, 16]);
    assert!(f.data().iter().all(|&v| v == 0.0));
}

#[test]
fn band_limited_round_trip() {
    let grid = GridSpec::new(32, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let le = lmax_exact(16);
    let p64 = ShtPlan::<f64>::with_truncation(&grid, le, le).unwrap();
    let c = band_limited(&mut rng, 3, &p64, le);
    let back = p64.analyse(&p64.synthesise(&c).unwrap()).unwrap();
    let err = max_abs_diff(back.tensor().data(), c.tensor().data()) / max_abs(c.tensor().data());
    assert!(err < 1e-10, "f64 round trip {err}");

    let p32 = ShtPlan::<f32>::with_truncation(&grid, le, le).unwrap();
    let c = band_limited(&mut rng, 3, &p32, le);
    let back = p32.analyse(&p32.synthesise(&c).unwrap()).unwrap();
    let err = max_abs_diff(back.tensor().data(), c.tensor().data()) / max_abs(c.tensor().data());
    assert!(err < 1e-6, "f32 round trip {err}");
}

#[test]
fn real_fields_have_real_zonal_coefficients() {
    let grid = GridSpec::new(32, 16).unwrap();
    let plan = ShtPlan::<f32>::new(&grid, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = Tensor::new(vec![2, 16, 32], (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let a = plan.analyse(&f).unwrap();
    for c in 0..2 {
        for l in 0..=plan.lmax() {
            assert!(a.get(c, l, 0).1.abs() < 1e-6);
        }
    }
}

#[test]
fn parseval_with_quadrature_mean() {
    let grid = GridSpec::new(32, 16).unwrap();
    let plan = ShtPlan::<f64>::new(&grid, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let c = band_limited(&mut rng, 1, &plan, plan.lmax_exact());
    let f = plan.synthesise(&c).unwrap();
    let sq: Vec<f64> = f.data().iter().map(|v| v * v).collect();
    let lhs = plan.quadrature_mean(&sq).unwrap();
    let rhs: f64 = c
        .indices()
        .map(|(ch, l, m)| {
            let (r, i) = c.get(ch, l, m);
            let mult = if m == 0 { 1.0 } else { 2.0 };
            mult * (r * r + i * i)
        })
        .sum::<f64>()
        / (4.0 * PI);
    assert!((lhs - rhs).abs() / rhs < 1e-5, "{lhs} vs {rhs}");
}

#[test]
fn longitude_shift_rotates_phases() {
    let grid = GridSpec::new(32, 16).unwrap();
    let plan = ShtPlan::<f64>::new(&grid, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f: Vec<f64> = (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let k = 5;
    let shifted: Vec<f64> = (0..512)
        .map(|i| {
            let (h, w) = (i / 32, i % 32);
            f[h * 32 + (w + k) % 32]
        })
        .collect();
    let a = plan.analyse(&Tensor::new(vec![16, 32], f).unwrap()).unwrap();
    let b = plan.analyse(&Tensor::new(vec![16, 32], shifted).unwrap()).unwrap();
    let lam = 2.0 * PI * k as f64 / 32.0;
    for (c, l, m) in a.indices() {
        let (ar, ai) = a.get(c, l, m);
        let (ph_c, ph_s) = ((m as f64 * lam).cos(), (m as f64 * lam).sin());
        let (er, ei) = (ar * ph_c - ai * ph_s, ar * ph_s + ai * ph_c);
        let (br, bi) = b.get(c, l, m);
        assert!((er - br).abs() < 1e-5 && (ei - bi).abs() < 1e-5);
    }
}

#[test]
fn transforms_are_linear_with_consistent_adjoints() {
    let grid = GridSpec::new(16, 8).unwrap();
    let plan = ShtPlan::<f64>::new(&grid, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rand = |rng: &mut ChaCha8Rng, shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let coeff_shape = [2, plan.mmax() + 1, plan.lmax() + 1, 2];

    // forward adjoint
    let x = rand(&mut rng, &[2, 8, 16]);
    let mut g = Graph::<f64>::new();
    let xv = g.param(x.clone());
    let a = plan.forward(&mut g, xv).unwrap();
    let y = rand(&mut rng, &coeff_shape);
    let yv = g.constant(y.clone());
    let p = g.mul(a, yv).unwrap();
    let l = g.sum(p).unwrap();
    let lhs = g.value(l).item();
    let gr = g.backward(l).unwrap();
    let rhs: f64 = x.data().iter().zip(gr.get(xv).unwrap().data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-6 * lhs.abs().max(1e-12));

    // inverse adjoint
    let x = rand(&mut rng, &coeff_shape);
    let mut g = Graph::<f64>::new();
    let xv = g.param(x.clone());
    let f = plan.inverse(&mut g, xv).unwrap();
    let y = rand(&mut rng, &[2, 8, 16]);
    let yv = g.constant(y);
    let p = g.mul(f, yv).unwrap();
    let l = g.sum(p).unwrap();
    let lhs = g.value(l).item();
    let gr = g.backward(l).unwrap();
    let rhs: f64 = x.data().iter().zip(gr.get(xv).unwrap().data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-6 * lhs.abs().max(1e-12));

    // linearity of the forward transform
    let f1 = rand(&mut rng, &[1, 8, 16]);
    let f2 = rand(&mut rng, &[1, 8, 16]);
    let comb = Tensor::new(
        vec![1, 8, 16],
        f1.data().iter().zip(f2.data()).map(|(a, b)| 2.0 * a - 0.5 * b).collect(),
    )
    .unwrap();
    let (a1, a2, ac) = (
        plan.analyse(&f1).unwrap(),
        plan.analyse(&f2).unwrap(),
        plan.analyse(&comb).unwrap(),
    );
    for i in 0..ac.tensor().numel() {
        let e = 2.0 * a1.tensor().data()[i] - 0.5 * a2.tensor().data()[i];
        assert!((ac.tensor().data()[i] - e).abs() < 1e-12);
    }
}

#[test]
fn fft2_conventions() {
    let mut g = Graph::<f64>::new();
    let mut delta = Tensor::zeros(vec![4, 8]);
    delta.data_mut()[0] = 1.0;
    let d = g.constant(delta);
    let s = fft2_forward(&mut g, d).unwrap();
    assert_eq!(g.shape(s), &[1, 4, 5, 2]);
    for pair in g.value(s).data().chunks(2) {
        assert!((pair[0] - 1.0).abs() < 1e-14 && pair[1].abs() < 1e-14);
    }
    let c = g.constant(Tensor::full(vec![4, 8], 2.5));
    let s = fft2_forward(&mut g, c).unwrap();
    let v = g.value(s).data();
    assert!((v[0] - 2.5 * 32.0).abs() < 1e-12);
    assert!(v[1..].iter().all(|x| x.abs() < 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Tensor<f32> =
        Tensor::new(vec![3, 16, 32], (0..1536).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut g = Graph::<f32>::new();
    let xv = g.constant(x.clone());
    let s = fft2_forward(&mut g, xv).unwrap();
    let back = fft2_inverse(&mut g, s, 32).unwrap();
    assert!(max_abs_diff(g.value(back).data(), x.data()) < 1e-6);
}
