//! Elementwise activations and resampling primitives with hand-derived
//! backward passes.

use ndarray::{Array2, Array3};

use super::Scalar;

pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// `silu(x) = x * sigmoid(x)`.
pub fn silu<S: Scalar>(x: &Array3<S>) -> Array3<S> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_vec<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Derivative of silu at `x`: `sigmoid(x) * (1 + x * (1 - sigmoid(x)))`.
pub fn silu_grad<S: Scalar>(x: S) -> S {
    let s = sigmoid(x);
    s * (S::one() + x * (S::one() - s))
}

const GELU_C: f64 = 0.044715;

/// GELU with the tanh approximation:
/// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))`.
pub fn gelu_tanh<S: Scalar>(x: S) -> S {
    let k = S::of_f64((2.0 / std::f64::consts::PI).sqrt());
    let c = S::of_f64(GELU_C);
    let half = S::of_f64(0.5);
    let u = k * (x + c * x * x * x);
    half * x * (S::one() + u.tanh())
}

pub fn gelu_tanh_grad<S: Scalar>(x: S) -> S {
    let k = S::of_f64((2.0 / std::f64::consts::PI).sqrt());
    let c = S::of_f64(GELU_C);
    let half = S::of_f64(0.5);
    let three = S::of_f64(3.0);
    let u = k * (x + c * x * x * x);
    let t = u.tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * k * (S::one() + three * c * x * x)
}

/// Row-wise softmax of a `[rows, cols]` matrix.
pub fn softmax_rows<S: Scalar>(x: &mut Array2<S>) {
    for mut row in x.rows_mut() {
        let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = S::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Backward of row-wise softmax: `dx = y * (dy - sum(dy * y))` per row.
pub fn softmax_rows_backward<S: Scalar>(y: &Array2<S>, dy: &Array2<S>) -> Array2<S> {
    let mut dx = Array2::zeros(y.raw_dim());
    for ((yrow, dyrow), mut dxrow) in
        y.rows().into_iter().zip(dy.rows()).zip(dx.rows_mut())
    {
        let dot = yrow.iter().zip(dyrow.iter()).fold(S::zero(), |a, (&yv, &dv)| a + yv * dv);
        for ((xo, &yv), &dv) in dxrow.iter_mut().zip(yrow.iter()).zip(dyrow.iter()) {
            *xo = yv * (dv - dot);
        }
    }
    dx
}

/// Nearest-neighbor upsampling by 2 along the frequency axis of `[C, F, T]`.
pub fn upsample_freq2<S: Scalar>(x: &Array3<S>) -> Array3<S> {
    let (c, f, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Array3::zeros((c, 2 * f, t));
    for ci in 0..c {
        for fi in 0..f {
            for ti in 0..t {
                let v = x[[ci, fi, ti]];
                out[[ci, 2 * fi, ti]] = v;
                out[[ci, 2 * fi + 1, ti]] = v;
            }
        }
    }
    out
}

/// Backward of [`upsample_freq2`]: sum gradient pairs.
pub fn upsample_freq2_backward<S: Scalar>(dy: &Array3<S>) -> Array3<S> {
    let (c, f2, t) = (dy.shape()[0], dy.shape()[1], dy.shape()[2]);
    let f = f2 / 2;
    let mut dx = Array3::zeros((c, f, t));
    for ci in 0..c {
        for fi in 0..f {
            for ti in 0..t {
                dx[[ci, fi, ti]] = dy[[ci, 2 * fi, ti]] + dy[[ci, 2 * fi + 1, ti]];
            }
        }
    }
    dx
}
