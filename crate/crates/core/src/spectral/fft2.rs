//! Separable real 2D DFT over the trailing `[H, W]` axes.
//!
//! `fft2_forward` is unnormalized (a constant `c` maps to `c H W` in bin
//! `(0, 0)`); `fft2_inverse` divides by `H W`.

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// `[..., H, W]` real to `[B, H, W/2+1, 2]` complex with leading axes
/// flattened into `B`.
pub fn fft2_forward<T: Scalar>(g: &mut Graph<T>, field: Var) -> Result<Var> {
    let s = g.shape(field).to_vec();
    if s.len() < 2 {
        return Err(shape_err("fft2_forward", format!("{:?} is not a field", s)));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let b: usize = s[..s.len() - 2].iter().product();
    let x = g.reshape(field, &[b, h, w])?;
    let x = g.rfft(x)?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    let x = g.cfft(x, false)?;
    g.permute(x, &[0, 2, 1, 3])
}

/// `[B, H, W/2+1, 2]` half spectrum back to `[B, H, W]` real.
pub fn fft2_inverse<T: Scalar>(g: &mut Graph<T>, spec: Var, w: usize) -> Result<Var> {
    let s = g.shape(spec).to_vec();
    if s.len() != 4 || s[3] != 2 || s[2] != w / 2 + 1 {
        return Err(shape_err(
            "fft2_inverse",
            format!("{:?} is not a half spectrum of width {w}", s),
        ));
    }
    let x = g.permute(spec, &[0, 2, 1, 3])?;
    let x = g.cfft(x, true)?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    g.irfft(x, w)
}
