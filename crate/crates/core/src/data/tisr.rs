//! Top-of-atmosphere incident solar radiation.

use std::f64::consts::PI;

use chrono::{Datelike, Duration, Timelike};

use super::calendar::{Timestamp, STEP_HOURS};
use crate::grid::GridSpec;

/// Total solar irradiance, W m⁻².
pub const SOLAR_CONSTANT: f64 = 1361.0;
const SUBSTEP_MINUTES: i64 = 10;

/// Fractional-year angle for Spencer's series.
fn year_angle(t: &Timestamp) -> f64 {
    let days = if t.date().leap_year() { 366.0 } else { 365.0 };
    let hour = t.hour() as f64 + t.minute() as f64 / 60.0 + t.second() as f64 / 3600.0;
    2.0 * PI / days * (t.ordinal0() as f64 + (hour - 12.0) / 24.0)
}

/// Solar declination (rad) and equation of time (minutes).
pub fn solar_position(t: &Timestamp) -> (f64, f64) {
    let g = year_angle(t);
    let decl = 0.006918 - 0.399912 * g.cos() + 0.070257 * g.sin() - 0.006758 * (2.0 * g).cos()
        + 0.000907 * (2.0 * g).sin()
        - 0.002697 * (3.0 * g).cos()
        + 0.00148 * (3.0 * g).sin();
    let eqt = 229.18
        * (0.000075 + 0.001868 * g.cos()
            - 0.032077 * g.sin()
            - 0.014615 * (2.0 * g).cos()
            - 0.040849 * (2.0 * g).sin());
    (decl, eqt)
}

/// Instantaneous `S₀ max(0, cos θ_z)` on the grid, `[H][W]`.
pub fn instantaneous_flux(t: &Timestamp, grid: &GridSpec, out: &mut [f64]) {
    let (decl, eqt) = solar_position(t);
    let utc_minutes = t.hour() as f64 * 60.0 + t.minute() as f64 + t.second() as f64 / 60.0;
    let (sd, cd) = decl.sin_cos();
    let cos_h: Vec<f64> = grid
        .longitudes()
        .iter()
        .map(|lon| {
            let solar_minutes = utc_minutes + eqt + 4.0 * lon;
            ((solar_minutes / 4.0 - 180.0).to_radians()).cos()
        })
        .collect();
    let w = grid.n_lon();
    for (h, lat) in grid.latitudes().iter().enumerate() {
        let (sp, cp) = lat.to_radians().sin_cos();
        for (o, ch) in out[h * w..(h + 1) * w].iter_mut().zip(&cos_h) {
            *o = SOLAR_CONSTANT * (sp * sd + cp * cd * ch).max(0.0);
        }
    }
}

/// Mean flux over the 6-hour window ending at `t`, integrated with the
/// midpoint rule on 10-minute substeps. `[H][W]`, W m⁻².
pub fn compute_tisr(t: &Timestamp, grid: &GridSpec) -> Vec<f64> {
    let np = grid.n_points();
    let n_sub = STEP_HOURS * 60 / SUBSTEP_MINUTES;
    let mut acc = vec![0.0; np];
    let mut buf = vec![0.0; np];
    let window_start = *t - Duration::hours(STEP_HOURS);
    for k in 0..n_sub {
        let mid = window_start + Duration::seconds(SUBSTEP_MINUTES * 60 * k + SUBSTEP_MINUTES * 30);
        instantaneous_flux(&mid, grid, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    let inv = 1.0 / n_sub as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}
