//! `[re, im]` encoding of complex numbers for JSON files.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexPair(pub [f64; 2]);

impl From<Complex64> for ComplexPair {
    fn from(z: Complex64) -> Self {
        ComplexPair([z.re, z.im])
    }
}

impl From<ComplexPair> for Complex64 {
    fn from(p: ComplexPair) -> Self {
        Complex64::new(p.0[0], p.0[1])
    }
}

/// `h^H w`.
pub fn inner(h: &[Complex64], w: &[Complex64]) -> Complex64 {
    h.iter().zip(w).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr(w: &[Complex64]) -> f64 {
    w.iter().map(|z| z.norm_sqr()).sum()
}
