//! Minimal feed-forward networks with hand-written backpropagation.
//!
//! Parameters live in one flat `Vec<f64>` per network so optimizers and
//! finite-difference checks can treat a net as a plain parameter vector.

mod adam;
mod checkpoint;
mod mlp;
mod policy;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, TensorEntry};
pub use mlp::{Activation, Mlp, Trace};
pub use policy::{GaussianPolicy, PolicyGrads};

/// Dot product with four accumulators; fixed summation order keeps results
/// bit-reproducible while breaking the serial FP dependency chain.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}
