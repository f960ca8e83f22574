//! Group normalization over `[C, F, T]` and layer normalization over token
//! matrices, both with learned per-channel affine.

use ndarray::{Array1, Array2, Array3};

use super::{ones, zeros, Grads, ParamId, ParamStore, Scalar};

const EPS: f64 = 1e-5;

/// Groups used at channel width `c`: `min(32, c/4)` clamped to at least 1,
/// which must divide `c`.
pub fn group_count(c: usize) -> usize {
    let g = (c / 4).clamp(1, 32);
    assert_eq!(c % g, 0, "{g} groups do not divide {c} channels");
    g
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub groups: usize,
}

#[derive(Debug)]
pub struct GroupNormCache<S> {
    normalized: Array3<S>,
    inv_std: Vec<S>,
}

impl GroupNorm {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        let gamma = ps.register(format!("{name}.gamma"), ones(&[channels]));
        let beta = ps.register(format!("{name}.beta"), zeros(&[channels]));
        Self { gamma, beta, channels, groups: group_count(channels) }
    }

    pub fn param_count(channels: usize) -> usize {
        2 * channels
    }

    pub fn forward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Array3<S>,
    ) -> (Array3<S>, GroupNormCache<S>) {
        let (c, f, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert_eq!(c, self.channels);
        let per = c / self.groups;
        let m = (per * f * t) as f64;
        let eps = S::of_f64(EPS);

        let mut normalized = Array3::zeros((c, f, t));
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let cs = g * per;
            let slab = x.slice(ndarray::s![cs..cs + per, .., ..]);
            let mean = S::of_f64(slab.iter().map(|v| v.as_f64()).sum::<f64>() / m);
            let var = S::of_f64(
                slab.iter().map(|v| (*v - mean).as_f64().powi(2)).sum::<f64>() / m,
            );
            let inv = S::one() / (var + eps).sqrt();
            inv_std.push(inv);
            let mut dst = normalized.slice_mut(ndarray::s![cs..cs + per, .., ..]);
            dst.assign(&slab);
            dst.mapv_inplace(|v| (v - mean) * inv);
        }

        let gamma = ps.get(self.gamma);
        let beta = ps.get(self.beta);
        let mut out = normalized.clone();
        for ci in 0..c {
            let (gc, bc) = (gamma[[ci]], beta[[ci]]);
            out.slice_mut(ndarray::s![ci, .., ..]).mapv_inplace(|v| v * gc + bc);
        }
        (out, GroupNormCache { normalized, inv_std })
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        cache: &GroupNormCache<S>,
        grad_out: &Array3<S>,
        grads: &mut Grads<S>,
    ) -> Array3<S> {
        let (c, f, t) = (
            grad_out.shape()[0],
            grad_out.shape()[1],
            grad_out.shape()[2],
        );
        let per = c / self.groups;
        let m = S::of_f64((per * f * t) as f64);
        let gamma = ps.get(self.gamma);

        let mut dgamma = Array1::<S>::zeros(c);
        let mut dbeta = Array1::<S>::zeros(c);
        for ci in 0..c {
            let go = grad_out.slice(ndarray::s![ci, .., ..]);
            let xh = cache.normalized.slice(ndarray::s![ci, .., ..]);
            dbeta[ci] = go.sum();
            dgamma[ci] = go.iter().zip(xh.iter()).fold(S::zero(), |a, (&g, &x)| a + g * x);
        }
        grads.accumulate(self.gamma, dgamma.into_dyn());
        grads.accumulate(self.beta, dbeta.into_dyn());

        let mut dx = Array3::zeros((c, f, t));
        for g in 0..self.groups {
            let cs = g * per;
            let inv = cache.inv_std[g];
            // dxh = dy * gamma_c; reduce to the two group means.
            let mut sum_dxh = S::zero();
            let mut sum_dxh_xh = S::zero();
            for ci in cs..cs + per {
                let gc = gamma[[ci]];
                let go = grad_out.slice(ndarray::s![ci, .., ..]);
                let xh = cache.normalized.slice(ndarray::s![ci, .., ..]);
                for (&gv, &xv) in go.iter().zip(xh.iter()) {
                    let d = gv * gc;
                    sum_dxh += d;
                    sum_dxh_xh += d * xv;
                }
            }
            let mean_dxh = sum_dxh / m;
            let mean_dxh_xh = sum_dxh_xh / m;
            for ci in cs..cs + per {
                let gc = gamma[[ci]];
                let go = grad_out.slice(ndarray::s![ci, .., ..]);
                let xh = cache.normalized.slice(ndarray::s![ci, .., ..]);
                let mut dst = dx.slice_mut(ndarray::s![ci, .., ..]);
                ndarray::Zip::from(&mut dst).and(&go).and(&xh).for_each(|o, &gv, &xv| {
                    *o = inv * (gv * gc - mean_dxh - xv * mean_dxh_xh);
                });
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

#[derive(Debug)]
pub struct LayerNormCache<S> {
    normalized: Array2<S>,
    inv_std: Vec<S>,
}

impl LayerNorm {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        let gamma = ps.register(format!("{name}.gamma"), ones(&[dim]));
        let beta = ps.register(format!("{name}.beta"), zeros(&[dim]));
        Self { gamma, beta, dim }
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Array2<S>,
    ) -> (Array2<S>, LayerNormCache<S>) {
        let (n, d) = (x.nrows(), x.ncols());
        assert_eq!(d, self.dim);
        let eps = S::of_f64(EPS);
        let md = S::of_f64(d as f64);
        let mut normalized = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (row, mut dst) in x.rows().into_iter().zip(normalized.rows_mut()) {
            let mean = row.sum() / md;
            let var = row.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) / md;
            let inv = S::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (o, &v) in dst.iter_mut().zip(row.iter()) {
                *o = (v - mean) * inv;
            }
        }
        let gamma = ps.get(self.gamma);
        let beta = ps.get(self.beta);
        let mut out = normalized.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * gamma[[j]] + beta[[j]];
            }
        }
        (out, LayerNormCache { normalized, inv_std })
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        cache: &LayerNormCache<S>,
        grad_out: &Array2<S>,
        grads: &mut Grads<S>,
    ) -> Array2<S> {
        let (n, d) = (grad_out.nrows(), grad_out.ncols());
        let gamma = ps.get(self.gamma);
        let md = S::of_f64(d as f64);

        let mut dgamma = Array1::<S>::zeros(d);
        let mut dbeta = Array1::<S>::zeros(d);
        for (go, xh) in grad_out.rows().into_iter().zip(cache.normalized.rows()) {
            for j in 0..d {
                dgamma[j] += go[j] * xh[j];
                dbeta[j] += go[j];
            }
        }
        grads.accumulate(self.gamma, dgamma.into_dyn());
        grads.accumulate(self.beta, dbeta.into_dyn());

        let mut dx = Array2::zeros((n, d));
        for i in 0..n {
            let inv = cache.inv_std[i];
            let mut sum_dxh = S::zero();
            let mut sum_dxh_xh = S::zero();
            for j in 0..d {
                let dxh = grad_out[[i, j]] * gamma[[j]];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * cache.normalized[[i, j]];
            }
            let mean_dxh = sum_dxh / md;
            let mean_dxh_xh = sum_dxh_xh / md;
            for j in 0..d {
                let dxh = grad_out[[i, j]] * gamma[[j]];
                dx[[i, j]] = inv * (dxh - mean_dxh - cache.normalized[[i, j]] * mean_dxh_xh);
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_counts_follow_convention() {
        assert_eq!(group_count(16), 4);
        assert_eq!(group_count(128), 32);
        assert_eq!(group_count(256), 32);
        assert_eq!(group_count(4), 1);
    }

    fn weighted_sum3(y: &Array3<f64>) -> f64 {
        y.indexed_iter()
            .map(|((c, f, t), &v)| v * ((c * 5 + f * 2 + t) as f64 * 0.41).sin())
            .sum()
    }

    #[test]
    fn groupnorm_gradients_match_fd() {
        let mut ps = ParamStore::<f64>::new();
        let gn = GroupNorm::new(&mut ps, "gn", 8);
        // non-trivial gamma/beta so their gradients are exercised
        for (i, v) in ps.get_mut(gn.gamma).iter_mut().enumerate() {
            *v = 0.7 + 0.1 * i as f64;
        }
        let x = Array3::from_shape_fn((8, 3, 4), |(c, f, t)| {
            ((c * 13 + f * 5 + t) as f64 * 0.37).sin()
        });
        let (y, cache) = gn.forward(&ps, &x);
        let dy = Array3::from_shape_fn(y.raw_dim(), |(c, f, t)| {
            ((c * 5 + f * 2 + t) as f64 * 0.41).sin()
        });
        let mut grads = Grads::zeros_like(&ps);
        let dx = gn.backward(&ps, &cache, &dy, &mut grads);

        let h = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fd =
                (weighted_sum3(&gn.forward(&ps, &xp).0) - weighted_sum3(&gn.forward(&ps, &xm).0))
                    / (2.0 * h);
            let an = dx.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "x[{idx}]: {fd} vs {an}");
        }
        for idx in 0..8 {
            let orig = ps.get(gn.gamma).as_slice().unwrap()[idx];
            ps.get_mut(gn.gamma).as_slice_mut().unwrap()[idx] = orig + h;
            let lp = weighted_sum3(&gn.forward(&ps, &x).0);
            ps.get_mut(gn.gamma).as_slice_mut().unwrap()[idx] = orig - h;
            let lm = weighted_sum3(&gn.forward(&ps, &x).0);
            ps.get_mut(gn.gamma).as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.get(gn.gamma).unwrap().as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()));
        }
    }

    #[test]
    fn layernorm_gradients_match_fd() {
        let mut ps = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut ps, "ln", 6);
        for (i, v) in ps.get_mut(ln.gamma).iter_mut().enumerate() {
            *v = 1.1 - 0.05 * i as f64;
        }
        let x = Array2::from_shape_fn((3, 6), |(i, j)| ((i * 6 + j) as f64 * 0.29).cos());
        let wsum = |y: &Array2<f64>| -> f64 {
            y.indexed_iter().map(|((i, j), &v)| v * ((i + 2 * j) as f64 * 0.53).sin()).sum()
        };
        let (y, cache) = ln.forward(&ps, &x);
        let dy = Array2::from_shape_fn(y.raw_dim(), |(i, j)| ((i + 2 * j) as f64 * 0.53).sin());
        let mut grads = Grads::zeros_like(&ps);
        let dx = ln.backward(&ps, &cache, &dy, &mut grads);

        let h = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (wsum(&ln.forward(&ps, &xp).0) - wsum(&ln.forward(&ps, &xm).0)) / (2.0 * h);
            let an = dx.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "x[{idx}]: {fd} vs {an}");
        }
    }

    #[test]
    fn groupnorm_output_is_normalized() {
        let mut ps = ParamStore::<f64>::new();
        let gn = GroupNorm::new(&mut ps, "gn", 8);
        let x = Array3::from_shape_fn((8, 10, 10), |(c, f, t)| {
            (c as f64) * 3.0 + ((f * 10 + t) as f64 * 0.11).sin()
        });
        let (y, _) = gn.forward(&ps, &x);
        // 8 channels -> 2 groups of 4; check first group statistics
        let slab = y.slice(ndarray::s![0..4, .., ..]);
        let m = slab.iter().sum::<f64>() / slab.len() as f64;
        let v = slab.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / slab.len() as f64;
        assert!(m.abs() < 1e-10);
        assert!((v - 1.0).abs() < 1e-4);
    }
}
