//! Two-operand einsum lowered onto batched gemm.
//!
//! Every index letter must appear in the output or in both operands, so the
//! vector-Jacobian product with respect to either operand is itself a valid
//! contraction of the same form.

use std::fmt;

use super::tensor::{permute_data, Tensor};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EinsumSpec {
    a: Vec<u8>,
    b: Vec<u8>,
    out: Vec<u8>,
}

impl fmt::Display for EinsumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |v: &[u8]| String::from_utf8_lossy(v).into_owned();
        write!(f, "{},{}->{}", s(&self.a), s(&self.b), s(&self.out))
    }
}

impl EinsumSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let err = |d: &str| shape_err("einsum", format!("`{spec}`: {d}"));
        let (lhs, out) = spec.split_once("->").ok_or_else(|| err("missing ->"))?;
        let (a, b) = lhs.split_once(',').ok_or_else(|| err("need two operands"))?;
        let s = Self {
            a: a.trim().bytes().collect(),
            b: b.trim().bytes().collect(),
            out: out.trim().bytes().collect(),
        };
        for part in [&s.a, &s.b, &s.out] {
            for (i, c) in part.iter().enumerate() {
                if !c.is_ascii_alphabetic() {
                    return Err(err("index letters must be ascii letters"));
                }
                if part[..i].contains(c) {
                    return Err(err("repeated index within an operand"));
                }
            }
        }
        for c in &s.a {
            if !s.out.contains(c) && !s.b.contains(c) {
                return Err(err("index of first operand neither contracted nor kept"));
            }
        }
        for c in &s.b {
            if !s.out.contains(c) && !s.a.contains(c) {
                return Err(err("index of second operand neither contracted nor kept"));
            }
        }
        for c in &s.out {
            if !s.a.contains(c) && !s.b.contains(c) {
                return Err(err("output index missing from operands"));
            }
        }
        Ok(s)
    }

    /// Contraction giving the gradient of the first operand from `(grad_out, b)`.
    pub(crate) fn grad_a(&self) -> EinsumSpec {
        EinsumSpec {
            a: self.out.clone(),
            b: self.b.clone(),
            out: self.a.clone(),
        }
    }

    /// Contraction giving the gradient of the second operand from `(a, grad_out)`.
    pub(crate) fn grad_b(&self) -> EinsumSpec {
        EinsumSpec {
            a: self.a.clone(),
            b: self.out.clone(),
            out: self.b.clone(),
        }
    }

    pub fn apply<T: Scalar>(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, data) = self.apply_raw(a.shape(), a.data(), b.shape(), b.data())?;
        Tensor::new(shape, data)
    }

    pub(crate) fn apply_raw<T: Scalar>(
        &self,
        a_shape: &[usize],
        a: &[T],
        b_shape: &[usize],
        b: &[T],
    ) -> Result<(Vec<usize>, Vec<T>)> {
        if a_shape.len() != self.a.len() || b_shape.len() != self.b.len() {
            return Err(shape_err(
                "einsum",
                format!("{self}: operand ranks {:?} / {:?}", a_shape, b_shape),
            ));
        }
        let mut size = [0usize; 256];
        let mut seen = [false; 256];
        for (letters, shape) in [(&self.a, a_shape), (&self.b, b_shape)] {
            for (&c, &n) in letters.iter().zip(shape) {
                if seen[c as usize] && size[c as usize] != n {
                    return Err(shape_err(
                        "einsum",
                        format!("{self}: index `{}` has extents {} and {}", c as char, size[c as usize], n),
                    ));
                }
                seen[c as usize] = true;
                size[c as usize] = n;
            }
        }
        let in_a = |c: &u8| self.a.contains(c);
        let in_b = |c: &u8| self.b.contains(c);
        let batch: Vec<u8> = self.out.iter().copied().filter(|c| in_a(c) && in_b(c)).collect();
        let mfree: Vec<u8> = self.out.iter().copied().filter(|c| in_a(c) && !in_b(c)).collect();
        let nfree: Vec<u8> = self.out.iter().copied().filter(|c| !in_a(c) && in_b(c)).collect();
        let contr: Vec<u8> = self
            .a
            .iter()
            .copied()
            .filter(|c| in_b(c) && !self.out.contains(c))
            .collect();
        let pos = |letters: &[u8], c: u8| letters.iter().position(|&x| x == c).unwrap();
        let prod = |ls: &[u8]| ls.iter().map(|&c| size[c as usize]).product::<usize>();

        let perm_a: Vec<usize> = batch
            .iter()
            .chain(&mfree)
            .chain(&contr)
            .map(|&c| pos(&self.a, c))
            .collect();
        let perm_b: Vec<usize> = batch
            .iter()
            .chain(&contr)
            .chain(&nfree)
            .map(|&c| pos(&self.b, c))
            .collect();
        let ap = permute_data(a, a_shape, &perm_a);
        let bp = permute_data(b, b_shape, &perm_b);
        let (nb, m, k, n) = (prod(&batch), prod(&mfree), prod(&contr), prod(&nfree));
        let mut c = vec![T::zero(); nb * m * n];
        if m > 0 && n > 0 {
            for bi in 0..nb {
                let ao = &ap[bi * m * k..(bi + 1) * m * k];
                let bo = &bp[bi * k * n..(bi + 1) * k * n];
                let co = &mut c[bi * m * n..(bi + 1) * m * n];
                if k == 0 {
                    continue;
                }
                // SAFETY: row-major contiguous blocks of the stated extents.
                unsafe {
                    T::gemm(
                        m,
                        k,
                        n,
                        T::one(),
                        ao.as_ptr(),
                        k as isize,
                        1,
                        bo.as_ptr(),
                        n as isize,
                        1,
                        T::zero(),
                        co.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
        let tmp_letters: Vec<u8> = batch.iter().chain(&mfree).chain(&nfree).copied().collect();
        let tmp_shape: Vec<usize> = tmp_letters.iter().map(|&c| size[c as usize]).collect();
        let perm_out: Vec<usize> = self.out.iter().map(|&c| pos(&tmp_letters, c)).collect();
        let out_shape: Vec<usize> = self.out.iter().map(|&c| size[c as usize]).collect();
        let data = if tmp_shape.is_empty() {
            c
        } else {
            permute_data(&c, &tmp_shape, &perm_out)
        };
        Ok((out_shape, data))
    }
}
