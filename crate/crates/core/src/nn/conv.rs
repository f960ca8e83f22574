//! 2-D convolution over `[C, F, T]` tensors via im2col + matmul.
//!
//! Frequency is the first spatial axis and is the only one that may be
//! strided; the time axis always has stride 1 so no time resampling can
//! occur anywhere in the network.

use ndarray::{Array2, Array3, ArrayD, Ix4};
use rand::Rng;

use super::{xavier_uniform, zeros, Grads, ParamId, ParamStore, Scalar};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: (usize, usize),
    /// Stride along the frequency axis (time stride is always 1).
    pub stride_f: usize,
}

#[derive(Debug)]
pub struct ConvCache<S> {
    input: Array3<S>,
}

impl Conv2d {
    /// Register a conv layer; `zero_init` makes the initial layer a no-op
    /// (used for the output head).
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride_f: usize,
        zero_init: bool,
        rng: &mut R,
    ) -> Self {
        let (kh, kw) = kernel;
        let fan_in = c_in * kh * kw;
        let fan_out = c_out * kh * kw;
        let w = if zero_init {
            zeros(&[c_out, c_in, kh, kw])
        } else {
            xavier_uniform(&[c_out, c_in, kh, kw], fan_in, fan_out, rng)
        };
        let w = ps.register(format!("{name}.weight"), w);
        let b = ps.register(format!("{name}.bias"), zeros(&[c_out]));
        Self { w, b, c_in, c_out, kernel, stride_f }
    }

    pub fn param_count(c_in: usize, c_out: usize, kernel: (usize, usize)) -> usize {
        c_out * c_in * kernel.0 * kernel.1 + c_out
    }

    fn out_freq(&self, f: usize) -> usize {
        let pad = self.kernel.0 / 2;
        (f + 2 * pad - self.kernel.0) / self.stride_f + 1
    }

    /// im2col: gather kernel windows into a `[C*KH*KW, F_out*T]` matrix.
    fn im2col<S: Scalar>(&self, x: &Array3<S>) -> Array2<S> {
        let (c, f, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw) = self.kernel;
        let (pf, pt) = (kh / 2, kw / 2);
        let f_out = self.out_freq(f);
        let mut cols = Array2::zeros((c * kh * kw, f_out * t));
        for ci in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    let row = (ci * kh + i) * kw + j;
                    for fo in 0..f_out {
                        let fi = (fo * self.stride_f + i) as isize - pf as isize;
                        if fi < 0 || fi >= f as isize {
                            continue;
                        }
                        for to in 0..t {
                            let ti = (to + j) as isize - pt as isize;
                            if ti < 0 || ti >= t as isize {
                                continue;
                            }
                            cols[[row, fo * t + to]] = x[[ci, fi as usize, ti as usize]];
                        }
                    }
                }
            }
        }
        cols
    }

    fn weight_matrix<S: Scalar>(&self, ps: &ParamStore<S>) -> Array2<S> {
        let (kh, kw) = self.kernel;
        ps.get(self.w)
            .view()
            .into_shape_with_order((self.c_out, self.c_in * kh * kw))
            .unwrap()
            .to_owned()
    }

    pub fn forward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Array3<S>,
    ) -> (Array3<S>, ConvCache<S>) {
        (self.infer(ps, x), ConvCache { input: x.clone() })
    }

    pub fn infer<S: Scalar>(&self, ps: &ParamStore<S>, x: &Array3<S>) -> Array3<S> {
        assert_eq!(x.shape()[0], self.c_in, "conv input channels");
        let (f, t) = (x.shape()[1], x.shape()[2]);
        let f_out = self.out_freq(f);
        let cols = self.im2col(x);
        let wm = self.weight_matrix(ps);
        let mut out = wm.dot(&cols);
        let b = ps.get(self.b);
        for (o, mut row) in out.rows_mut().into_iter().enumerate() {
            let bias = b[[o]];
            row.mapv_inplace(|v| v + bias);
        }
        out.into_shape_with_order((self.c_out, f_out, t)).unwrap()
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        cache: &ConvCache<S>,
        grad_out: &Array3<S>,
        grads: &mut Grads<S>,
    ) -> Array3<S> {
        let x = &cache.input;
        let (c, f, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw) = self.kernel;
        let (pf, pt) = (kh / 2, kw / 2);
        let f_out = grad_out.shape()[1];
        let n = f_out * t;

        let go = grad_out
            .view()
            .into_shape_with_order((self.c_out, n))
            .unwrap()
            .to_owned();

        // db = sum over spatial positions.
        let mut db = ndarray::Array1::zeros(self.c_out);
        for (o, row) in go.rows().into_iter().enumerate() {
            db[o] = row.sum();
        }
        grads.accumulate(self.b, db.into_dyn());

        // dW = grad_out . cols^T (cols recomputed from the cached input).
        let cols = self.im2col(x);
        let dw = go.dot(&cols.t());
        grads.accumulate(
            self.w,
            dw.into_shape_with_order((self.c_out, c, kh, kw)).unwrap().into_dyn(),
        );

        // dX = col2im(W^T . grad_out).
        let wm = self.weight_matrix(ps);
        let dcols = wm.t().dot(&go);
        let mut dx = Array3::zeros((c, f, t));
        for ci in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    let row = (ci * kh + i) * kw + j;
                    for fo in 0..f_out {
                        let fi = (fo * self.stride_f + i) as isize - pf as isize;
                        if fi < 0 || fi >= f as isize {
                            continue;
                        }
                        for to in 0..t {
                            let ti = (to + j) as isize - pt as isize;
                            if ti < 0 || ti >= t as isize {
                                continue;
                            }
                            dx[[ci, fi as usize, ti as usize]] += dcols[[row, fo * t + to]];
                        }
                    }
                }
            }
        }
        dx
    }

    /// View the weight tensor with its natural rank.
    pub fn weight_view<'a, S: Scalar>(
        &self,
        ps: &'a ParamStore<S>,
    ) -> ndarray::ArrayView<'a, S, Ix4> {
        ps.get(self.w).view().into_dimensionality::<Ix4>().unwrap()
    }

    pub fn weight_owned<S: Scalar>(&self, ps: &ParamStore<S>) -> ArrayD<S> {
        ps.get(self.w).clone()
    }
}
