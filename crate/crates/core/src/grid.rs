//! Equiangular latitude-longitude grid and its area weights.
//!
//! Latitudes sit at cell centers, so no grid row falls on a pole and every
//! `cos(lat)` is strictly positive.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::{cst, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    EquiangularCellCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridManifest", into = "GridManifest")]
pub struct GridSpec {
    n_lon: usize,
    n_lat: usize,
    latitudes: Vec<f64>,
    longitudes: Vec<f64>,
    kind: GridKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridManifest {
    n_lon: usize,
    n_lat: usize,
    kind: GridKind,
}

impl TryFrom<GridManifest> for GridSpec {
    type Error = Error;

    fn try_from(m: GridManifest) -> Result<Self> {
        GridSpec::new(m.n_lon, m.n_lat)
    }
}

impl From<GridSpec> for GridManifest {
    fn from(g: GridSpec) -> Self {
        GridManifest {
            n_lon: g.n_lon,
            n_lat: g.n_lat,
            kind: g.kind,
        }
    }
}

impl GridSpec {
    /// Builds a `W x H` grid. `W` must be even and at least 4, `H` at least 2.
    pub fn new(n_lon: usize, n_lat: usize) -> Result<Self> {
        if n_lon < 4 || n_lon % 2 != 0 {
            return Err(Error::Config(format!(
                "grid width W={n_lon} must be even and >= 4"
            )));
        }
        if n_lat < 2 {
            return Err(Error::Config(format!("grid height H={n_lat} must be >= 2")));
        }
        let dlat = 180.0 / n_lat as f64;
        let latitudes = (0..n_lat)
            .map(|h| -90.0 + (h as f64 + 0.5) * dlat)
            .collect();
        let longitudes = (0..n_lon)
            .map(|w| 360.0 * w as f64 / n_lon as f64)
            .collect();
        Ok(Self {
            n_lon,
            n_lat,
            latitudes,
            longitudes,
            kind: GridKind::EquiangularCellCenter,
        })
    }

    /// Parses `"WxH"`, e.g. `"64x32"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("grid `{s}` is not of the form WxH")))?;
        let w = w
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad grid width in `{s}`")))?;
        let h = h
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad grid height in `{s}`")))?;
        Self::new(w, h)
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    /// `H * W`.
    pub fn n_points(&self) -> usize {
        self.n_lon * self.n_lat
    }

    /// Degrees, south to north.
    pub fn latitudes(&self) -> &[f64] {
        &self.latitudes
    }

    /// Degrees, starting at 0.
    pub fn longitudes(&self) -> &[f64] {
        &self.longitudes
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn area_weights(&self) -> AreaWeights {
        AreaWeights::new(self)
    }
}

/// Per-latitude weights proportional to `cos(lat)`, normalized to mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaWeights {
    weights: Vec<f64>,
    n_lon: usize,
}

impl AreaWeights {
    pub fn new(grid: &GridSpec) -> Self {
        let cos: Vec<f64> = grid
            .latitudes()
            .iter()
            .map(|lat| lat.to_radians().cos())
            .collect();
        let h = cos.len();
        // Symmetric pair-wise accumulation keeps a_h == a_{H-1-h} bit-exact.
        let mut total = 0.0;
        for i in 0..h / 2 {
            total += cos[i] + cos[h - 1 - i];
        }
        if h % 2 == 1 {
            total += cos[h / 2];
        }
        let mean = total / h as f64;
        let mut weights: Vec<f64> = cos.iter().map(|c| c / mean).collect();
        for i in 0..h / 2 {
            weights[h - 1 - i] = weights[i];
        }
        Self {
            weights,
            n_lon: grid.n_lon(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, h: usize) -> f64 {
        self.weights[h]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn cast<T: Scalar>(&self) -> Vec<T> {
        self.weights.iter().map(|&w| cst(w)).collect()
    }

    /// `(1/(H W)) Σ_h a_h Σ_w field[h, w]` over a row-major `H x W` field.
    pub fn mean<T: Scalar>(&self, field: &[T]) -> Result<f64> {
        let h = self.weights.len();
        if field.len() != h * self.n_lon {
            return Err(shape_err(
                "area_weighted_mean",
                format!("field has {} values, grid has {}x{}", field.len(), h, self.n_lon),
            ));
        }
        let mut acc = 0.0f64;
        for (row, a) in field.chunks_exact(self.n_lon).zip(&self.weights) {
            let s: f64 = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum();
            acc += a * s;
        }
        Ok(acc / field.len() as f64)
    }
}

/// Area-weighted global mean of a row-major `H x W` field.
pub fn area_weighted_mean<T: Scalar>(field: &[T], weights: &AreaWeights) -> Result<f64> {
    weights.mean(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn replication_grid_coordinates() {
        let g = GridSpec::new(64, 32).unwrap();
        assert_eq!(g.latitudes()[0], -87.1875);
        assert_eq!(g.latitudes()[31], 87.1875);
        for w in g.latitudes().windows(2) {
            assert!((w[1] - w[0] - 5.625).abs() < 1e-12);
        }
        assert_eq!(g.longitudes()[1], 5.625);
        assert_eq!(g.longitudes()[63], 354.375);
        assert!(g.latitudes().iter().all(|l| l.abs() < 90.0));
    }

    #[test]
    fn small_grids() {
        let g = GridSpec::new(4, 2).unwrap();
        assert_eq!(g.latitudes(), &[-45.0, 45.0]);
        assert_eq!(g.longitudes(), &[0.0, 90.0, 180.0, 270.0]);
        let g = GridSpec::new(8, 4).unwrap();
        assert_eq!(g.latitudes(), &[-67.5, -22.5, 22.5, 67.5]);
    }

    #[test]
    fn rejects_bad_extents() {
        assert!(matches!(GridSpec::new(7, 4), Err(Error::Config(_))));
        assert!(matches!(GridSpec::new(2, 4), Err(Error::Config(_))));
        assert!(matches!(GridSpec::new(8, 1), Err(Error::Config(_))));
        assert!(GridSpec::parse("7x4").unwrap_err().to_string().contains("even"));
        assert_eq!(GridSpec::parse("32x16").unwrap().n_points(), 512);
    }

    #[test]
    fn weights_examples() {
        let w = GridSpec::new(4, 2).unwrap().area_weights();
        assert_eq!(w.as_slice(), &[1.0, 1.0]);
        let w = GridSpec::new(8, 4).unwrap().area_weights();
        let expected = 22.5f64.to_radians().cos() / 67.5f64.to_radians().cos();
        assert!((w.get(1) / w.get(0) - expected).abs() < 1e-12);
        assert!((w.get(1) / w.get(0) - 2.4142).abs() < 1e-4);
    }

    #[test]
    fn weighted_mean_examples() {
        let g = GridSpec::new(8, 4).unwrap();
        let w = g.area_weights();
        let c = vec![3.5f64; 32];
        assert!((w.mean(&c).unwrap() - 3.5).abs() < 1e-12);
        let hemi: Vec<f64> = (0..32).map(|i| if i / 8 >= 2 { 1.0 } else { -1.0 }).collect();
        assert!(w.mean(&hemi).unwrap().abs() < 1e-12);
        assert!(w.mean(&c[..31]).is_err());
    }

    #[test]
    fn weighted_mean_single_column_hand_sum() {
        // H=4, W=1 is not a valid grid, so build the weights by hand and
        // compare against the same formula on a W=4 grid with one hot column.
        let g = GridSpec::new(4, 4).unwrap();
        let w = g.area_weights();
        let cosines: Vec<f64> = [-67.5f64, -22.5, 22.5, 67.5]
            .iter()
            .map(|d| d.to_radians().cos())
            .collect();
        let mean_cos = cosines.iter().sum::<f64>() / 4.0;
        let a3 = cosines[3] / mean_cos;
        // field = 1 on the top row, column 0 only
        let mut f = vec![0.0f64; 16];
        f[12] = 1.0;
        assert!((w.mean(&f).unwrap() - a3 / 16.0).abs() < 1e-15);
        // field = 1 on the whole top row is the W=1 case scaled by W.
        let mut f = vec![0.0f64; 16];
        f[12..16].fill(1.0);
        assert!((w.mean(&f).unwrap() - a3 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn manifest_serialization() {
        let g = GridSpec::new(64, 32).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"n_lon":64,"n_lat":32,"kind":"equiangular-cell-center"}"#);
        let back: GridSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<GridSpec>(
            r#"{"n_lon":7,"n_lat":32,"kind":"equiangular-cell-center"}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn weights_invariants(h in 2usize..200) {
            let g = GridSpec::new(4, h).unwrap();
            let w = g.area_weights();
            let s: f64 = w.as_slice().iter().sum();
            prop_assert!((s / h as f64 - 1.0).abs() < 1e-12);
            for i in 0..h {
                prop_assert!(w.get(i) > 0.0);
                prop_assert_eq!(w.get(i), w.get(h - 1 - i));
            }
        }

        #[test]
        fn weighted_mean_is_linear(
            f in proptest::collection::vec(-10.0f64..10.0, 48),
            g in proptest::collection::vec(-10.0f64..10.0, 48),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let grid = GridSpec::new(8, 6).unwrap();
            let w = grid.area_weights();
            let comb: Vec<f64> = f.iter().zip(&g).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = w.mean(&comb).unwrap();
            let rhs = alpha * w.mean(&f).unwrap() + beta * w.mean(&g).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
