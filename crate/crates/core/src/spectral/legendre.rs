//! Orthonormal associated Legendre functions and equiangular quadrature.

use std::f64::consts::PI;

/// `P̄_l^m(x)` for `0 <= m <= mmax`, `m <= l <= lmax`, laid out as
/// `[m][l]` (entries with `l < m` are zero). Normalized so that
/// `2π ∫ P̄_l^m P̄_l'^m dx = δ_ll'`, i.e. `Y_lm = P̄_l^m(sin φ) e^{imλ}` is
/// orthonormal on the unit sphere. No Condon-Shortley phase.
///
/// `x = sin(lat)`, `s = cos(lat) >= 0`.
pub fn normalized_legendre(lmax: usize, mmax: usize, x: f64, s: f64) -> Vec<Vec<f64>> {
    let mut p = vec![vec![0.0; lmax + 1]; mmax + 1];
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for m in 0..=mmax.min(lmax) {
        if m > 0 {
            let mf = m as f64;
            pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
        }
        let row = &mut p[m];
        row[m] = pmm;
        if m < lmax {
            row[m + 1] = (2.0 * m as f64 + 3.0).sqrt() * x * pmm;
        }
        for l in m + 2..=lmax {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            row[l] = a * (x * row[l - 1] - b * row[l - 2]);
        }
    }
    p
}

/// Fejér's first rule on the cell-center colatitudes `π(j + 1/2)/H`,
/// returned in grid (south to north) order. Integrates polynomials in
/// `sin(lat)` of degree `< H` exactly over `[-1, 1]`.
pub fn fejer_weights(n_lat: usize) -> Vec<f64> {
    let h = n_lat as f64;
    let mut w: Vec<f64> = (0..n_lat)
        .map(|j| {
            let theta = PI * (j as f64 + 0.5) / h;
            let mut s = 0.0;
            for k in 1..=n_lat / 2 {
                let kf = k as f64;
                s += (2.0 * kf * theta).cos() / (4.0 * kf * kf - 1.0);
            }
            2.0 / h * (1.0 - 2.0 * s)
        })
        .collect();
    // colatitude order is north to south; the rule is symmetric anyway
    w.reverse();
    for i in 0..n_lat / 2 {
        let avg = 0.5 * (w[i] + w[n_lat - 1 - i]);
        w[i] = avg;
        w[n_lat - 1 - i] = avg;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Simpson integration of `2π ∫ P̄ P̄' dx` on a fine grid; independent of
    /// the quadrature under test.
    fn simpson_overlap(l: usize, lp: usize, m: usize) -> f64 {
        let n = 20000;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = -1.0 + 2.0 * i as f64 / n as f64;
            let s = (1.0 - x * x).max(0.0).sqrt();
            let p = normalized_legendre(l.max(lp), m, x, s);
            let wgt = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += wgt * p[m][l] * p[m][lp];
        }
        2.0 * PI * acc * (2.0 / n as f64) / 3.0
    }

    #[test]
    fn orthonormal_under_fine_integration() {
        for &(l, lp, m) in &[(0, 0, 0), (3, 3, 2), (5, 3, 1), (6, 6, 6), (7, 5, 3), (4, 2, 0)] {
            let v = simpson_overlap(l, lp, m);
            let expect = if l == lp { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-6, "({l},{lp},{m}) = {v}");
        }
    }

    #[test]
    fn low_degree_closed_forms() {
        let x: f64 = 0.3;
        let s = (1.0 - x * x).sqrt();
        let p = normalized_legendre(2, 2, x, s);
        let c = 1.0 / (4.0 * PI).sqrt();
        assert!((p[0][0] - c).abs() < 1e-15);
        assert!((p[0][1] - c * 3f64.sqrt() * x).abs() < 1e-15);
        assert!((p[0][2] - c * 5f64.sqrt() * 0.5 * (3.0 * x * x - 1.0)).abs() < 1e-14);
        assert!((p[1][1] - (3.0 / (8.0 * PI)).sqrt() * s).abs() < 1e-15);
        assert!((p[2][2] - (15.0 / (32.0 * PI)).sqrt() * s * s).abs() < 1e-15);
    }

    #[test]
    fn fejer_integrates_polynomials() {
        for n_lat in [4usize, 7, 16, 32] {
            let w = fejer_weights(n_lat);
            let xs: Vec<f64> = (0..n_lat)
                .map(|h| (-90.0 + (h as f64 + 0.5) * 180.0 / n_lat as f64).to_radians().sin())
                .collect();
            for deg in 0..n_lat {
                let q: f64 = w.iter().zip(&xs).map(|(w, x)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "H={n_lat} deg={deg}: {q}");
            }
        }
    }
}
