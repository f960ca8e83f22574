//! Fully-connected layer on token matrices `[n, in] -> [n, out]`.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::{xavier_uniform, zeros, Grads, ParamId, ParamStore, Scalar};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Debug)]
pub struct LinearCache<S> {
    input: Array2<S>,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = ps.register(
            format!("{name}.weight"),
            xavier_uniform(&[d_out, d_in], d_in, d_out, rng),
        );
        let b = ps.register(format!("{name}.bias"), zeros(&[d_out]));
        Self { w, b, d_in, d_out }
    }

    pub fn param_count(d_in: usize, d_out: usize) -> usize {
        d_out * d_in + d_out
    }

    fn weight<'a, S: Scalar>(&self, ps: &'a ParamStore<S>) -> ndarray::ArrayView2<'a, S> {
        ps.get(self.w).view().into_dimensionality().unwrap()
    }

    pub fn infer<S: Scalar>(&self, ps: &ParamStore<S>, x: &Array2<S>) -> Array2<S> {
        assert_eq!(x.ncols(), self.d_in, "linear input width");
        let mut out = x.dot(&self.weight(ps).t());
        let b = ps.get(self.b);
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += b[[j]];
            }
        }
        out
    }

    pub fn forward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Array2<S>,
    ) -> (Array2<S>, LinearCache<S>) {
        (self.infer(ps, x), LinearCache { input: x.clone() })
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        cache: &LinearCache<S>,
        grad_out: &Array2<S>,
        grads: &mut Grads<S>,
    ) -> Array2<S> {
        let dw = grad_out.t().dot(&cache.input);
        grads.accumulate(self.w, dw.into_dyn());
        let mut db = Array1::zeros(self.d_out);
        for row in grad_out.rows() {
            db += &row;
        }
        grads.accumulate(self.b, db.into_dyn());
        grad_out.dot(&self.weight(ps))
    }

    /// Convenience for a single vector input.
    pub fn infer_vec<S: Scalar>(&self, ps: &ParamStore<S>, x: &[S]) -> Vec<S> {
        let xm = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
        self.infer(ps, &xm).row(0).to_vec()
    }
}
