//! The denoiser network: a frequency-axis U-Net over band-split spectrogram
//! tensors with dual-path rotary-attention blocks.
//!
//! Layout per encoder level: `res_blocks_per_level` residual blocks, each
//! followed by a dual-path attention block, then a stride-(2,1) conv to the
//! next level. Down/upsampling act on the frequency axis only; the time
//! axis is never resampled. The decoder mirrors the encoder, fusing each
//! skip with a 1x1 conv; attention appears only at its final
//! (full-resolution) level. The noise embedding modulates every residual
//! block with a learned per-channel scale and shift.

use ndarray::{s, Array3};
use rand::Rng;

use crate::diffusion::{self, loss_weight, precond_coeffs, Network};
use crate::error::{Error, Result};
use crate::nn::ops::{silu_grad, upsample_freq2, upsample_freq2_backward};
use crate::nn::{
    Conv2d, ConvCache, DualPathBlock, DualPathCache, Grads, GroupNorm, GroupNormCache, Linear,
    LinearCache, ParamStore, Scalar,
};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub levels: usize,
    pub channel_multipliers: Vec<usize>,
    pub res_blocks_per_level: usize,
    pub noise_embed_dim: usize,
    pub n_input_channels: usize,
    pub n_output_channels: usize,
    pub attention_heads: usize,
}

impl ModelConfig {
    /// Full-scale configuration.
    pub fn paper() -> Self {
        Self {
            base_channels: 128,
            levels: 4,
            channel_multipliers: vec![1, 2, 2, 2],
            res_blocks_per_level: 4,
            noise_embed_dim: 1024,
            n_input_channels: 32,
            n_output_channels: 16,
            attention_heads: 8,
        }
    }

    /// Desk-scale configuration for tests and toy training.
    pub fn tiny() -> Self {
        Self {
            base_channels: 16,
            levels: 2,
            channel_multipliers: vec![1, 2],
            res_blocks_per_level: 1,
            noise_embed_dim: 64,
            n_input_channels: 32,
            n_output_channels: 16,
            attention_heads: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_multipliers.len() != self.levels {
            return Err(Error::InvalidConfig(format!(
                "{} channel multipliers for {} levels",
                self.channel_multipliers.len(),
                self.levels
            )));
        }
        if self.levels == 0 || self.res_blocks_per_level == 0 {
            return Err(Error::InvalidConfig("levels and blocks must be >= 1".into()));
        }
        if self.n_input_channels != 2 * self.n_output_channels {
            return Err(Error::InvalidConfig(format!(
                "input channels {} must be twice output channels {} (noisy state + condition)",
                self.n_input_channels, self.n_output_channels
            )));
        }
        if self.attn_dim() % self.attention_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "attention dim {} not divisible by {} heads",
                self.attn_dim(),
                self.attention_heads
            )));
        }
        if self.rotary_dim() % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "rotary dim {} must be even",
                self.rotary_dim()
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_multipliers[level]
    }

    /// Internal width of the attention blocks.
    pub fn attn_dim(&self) -> usize {
        self.base_channels
    }

    /// Feed-forward hidden width of the attention blocks.
    pub fn ff_dim(&self) -> usize {
        2 * self.base_channels
    }

    /// Rotary dimension equals the per-head dimension.
    pub fn rotary_dim(&self) -> usize {
        self.attn_dim() / self.attention_heads
    }

    /// Sinusoidal feature width fed to the embedding MLP.
    pub fn sinusoid_dim(&self) -> usize {
        self.base_channels
    }

    /// The input frequency axis must be divisible by this.
    pub fn freq_divisor(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// Sinusoidal features of the conditioning value at geometrically spaced
/// frequencies; components are bounded in [-1, 1].
pub fn sinusoid_features(c_noise: f64, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "sinusoid dim must be even");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10_000.0f64.powf(-(i as f64) / (half.max(2) - 1) as f64);
        out.push((c_noise * freq).cos());
    }
    for i in 0..half {
        let freq = 10_000.0f64.powf(-(i as f64) / (half.max(2) - 1) as f64);
        out.push((c_noise * freq).sin());
    }
    out
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm0: GroupNorm,
    conv0: Conv2d,
    affine: Linear,
    norm1: GroupNorm,
    conv1: Conv2d,
    channels: usize,
}

struct ResBlockCache<S> {
    norm0: GroupNormCache<S>,
    pre0: Array3<S>,
    conv0: ConvCache<S>,
    affine: LinearCache<S>,
    norm1: GroupNormCache<S>,
    normed1: Array3<S>,
    scale: Vec<S>,
    z: Array3<S>,
    conv1: ConvCache<S>,
}

impl ResBlock {
    fn new<S: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        emb_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm0: GroupNorm::new(ps, &format!("{name}.norm0"), channels),
            conv0: Conv2d::new(ps, &format!("{name}.conv0"), channels, channels, (3, 3), 1, false, rng),
            affine: Linear::new(ps, &format!("{name}.affine"), emb_dim, 2 * channels, rng),
            norm1: GroupNorm::new(ps, &format!("{name}.norm1"), channels),
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), channels, channels, (3, 3), 1, false, rng),
            channels,
        }
    }

    fn param_count(channels: usize, emb_dim: usize) -> usize {
        2 * GroupNorm::param_count(channels)
            + 2 * Conv2d::param_count(channels, channels, (3, 3))
            + Linear::param_count(emb_dim, 2 * channels)
    }

    fn forward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Array3<S>,
        emb: &[S],
        want_cache: bool,
    ) -> (Array3<S>, Option<ResBlockCache<S>>) {
        let c = self.channels;
        let (pre0, norm0_cache) = self.norm0.forward(ps, x);
        let h = pre0.mapv(|v| v * crate::nn::ops::sigmoid(v));
        let (h1, conv0_cache) = if want_cache {
            let (y, cc) = self.conv0.forward(ps, &h);
            (y, Some(cc))
        } else {
            (self.conv0.infer(ps, &h), None)
        };

        let emb_mat = ndarray::Array2::from_shape_vec((1, emb.len()), emb.to_vec()).unwrap();
        let (params, affine_cache) = self.affine.forward(ps, &emb_mat);
        let scale: Vec<S> = params.row(0).iter().take(c).copied().collect();
        let shift: Vec<S> = params.row(0).iter().skip(c).copied().collect();

        let (normed1, norm1_cache) = self.norm1.forward(ps, &h1);
        let mut z = normed1.clone();
        for ci in 0..c {
            let (sc, sh) = (scale[ci], shift[ci]);
            z.slice_mut(s![ci, .., ..]).mapv_inplace(|v| v * (S::one() + sc) + sh);
        }
        let h2 = z.mapv(|v| v * crate::nn::ops::sigmoid(v));
        let (y, conv1_cache) = if want_cache {
            let (y, cc) = self.conv1.forward(ps, &h2);
            (y, Some(cc))
        } else {
            (self.conv1.infer(ps, &h2), None)
        };
        let out = x + &y;
        let cache = want_cache.then(|| ResBlockCache {
            norm0: norm0_cache,
            pre0,
            conv0: conv0_cache.unwrap(),
            affine: affine_cache,
            norm1: norm1_cache,
            normed1,
            scale,
            z,
            conv1: conv1_cache.unwrap(),
        });
        (out, cache)
    }

    /// Returns (dx, d_emb).
    fn backward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        cache: &ResBlockCache<S>,
        grad_out: &Array3<S>,
        grads: &mut Grads<S>,
    ) -> (Array3<S>, Vec<S>) {
        let c = self.channels;
        let mut dx = grad_out.clone();

        let dh2 = self.conv1.backward(ps, &cache.conv1, grad_out, grads);
        let mut dz = dh2;
        dz.zip_mut_with(&cache.z, |g, &zv| *g *= silu_grad(zv));

        // d scale / d shift reduce over (F, T); d normed1 broadcasts back.
        let mut daff = ndarray::Array2::zeros((1, 2 * c));
        let mut dnormed1 = dz.clone();
        for ci in 0..c {
            let dzc = dz.slice(s![ci, .., ..]);
            let nc = cache.normed1.slice(s![ci, .., ..]);
            let dscale = dzc.iter().zip(nc.iter()).fold(S::zero(), |a, (&g, &n)| a + g * n);
            let dshift = dzc.sum();
            daff[[0, ci]] = dscale;
            daff[[0, c + ci]] = dshift;
            let sc = cache.scale[ci];
            dnormed1.slice_mut(s![ci, .., ..]).mapv_inplace(|v| v * (S::one() + sc));
        }
        let demb_mat = self.affine.backward(ps, &cache.affine, &daff, grads);
        let demb: Vec<S> = demb_mat.row(0).to_vec();

        let dh1 = self.norm1.backward(ps, &cache.norm1, &dnormed1, grads);
        let dh = self.conv0.backward(ps, &cache.conv0, &dh1, grads);
        let mut dpre0 = dh;
        dpre0.zip_mut_with(&cache.pre0, |g, &p| *g *= silu_grad(p));
        dx += &self.norm0.backward(ps, &cache.norm0, &dpre0, grads);
        (dx, demb)
    }
}

struct EncLevel {
    blocks: Vec<(ResBlock, DualPathBlock)>,
    down: Option<Conv2d>,
}

struct DecLevel {
    blocks: Vec<(Conv2d, ResBlock, Option<DualPathBlock>)>,
    up: Option<Conv2d>,
}

/// The network structure. Parameter values live in a separate
/// [`ParamStore`], so one structure serves f32 training and f64 checking.
pub struct Model {
    pub config: ModelConfig,
    conv_in: Conv2d,
    emb1: Linear,
    emb2: Linear,
    enc: Vec<EncLevel>,
    dec: Vec<DecLevel>,
    head_norm: GroupNorm,
    conv_out: Conv2d,
}

struct EmbCache<S> {
    z1: Vec<S>,
    emb1: LinearCache<S>,
    z2: Vec<S>,
    emb2: LinearCache<S>,
    emb: Vec<S>,
}

pub struct ModelCache<S> {
    emb: EmbCache<S>,
    conv_in: ConvCache<S>,
    enc: Vec<(Vec<(ResBlockCache<S>, DualPathCache<S>)>, Option<ConvCache<S>>)>,
    dec: Vec<Vec<(ConvCache<S>, ResBlockCache<S>, Option<DualPathCache<S>>)>>,
    dec_up: Vec<Option<(Array3<S>, ConvCache<S>)>>,
    head_pre: Array3<S>,
    head_norm: GroupNormCache<S>,
    head_conv: ConvCache<S>,
}

/// Build the model structure and its initialized parameters.
///
/// All layers use Xavier-uniform initialization; the output head starts at
/// zero so the untrained denoiser reduces to the preconditioner's skip path.
pub fn build<S: Scalar, R: Rng + ?Sized>(
    config: &ModelConfig,
    rng: &mut R,
) -> Result<(Model, ParamStore<S>)> {
    config.validate()?;
    let mut ps = ParamStore::new();
    let cfg = config;
    let (attn_dim, ff_dim, heads) = (cfg.attn_dim(), cfg.ff_dim(), cfg.attention_heads);

    let conv_in = Conv2d::new(
        &mut ps, "conv_in", cfg.n_input_channels, cfg.channels(0), (3, 3), 1, false, rng,
    );
    let emb1 = Linear::new(&mut ps, "emb.l1", cfg.sinusoid_dim(), cfg.noise_embed_dim, rng);
    let emb2 = Linear::new(&mut ps, "emb.l2", cfg.noise_embed_dim, cfg.noise_embed_dim, rng);

    let mut enc = Vec::new();
    for l in 0..cfg.levels {
        let c = cfg.channels(l);
        let mut blocks = Vec::new();
        for b in 0..cfg.res_blocks_per_level {
            let res = ResBlock::new(&mut ps, &format!("enc.{l}.{b}.res"), c, cfg.noise_embed_dim, rng);
            let attn = DualPathBlock::new(
                &mut ps, &format!("enc.{l}.{b}.attn"), c, attn_dim, ff_dim, heads, rng,
            );
            blocks.push((res, attn));
        }
        let down = (l + 1 < cfg.levels).then(|| {
            Conv2d::new(
                &mut ps, &format!("enc.{l}.down"), c, cfg.channels(l + 1), (3, 3), 2, false, rng,
            )
        });
        enc.push(EncLevel { blocks, down });
    }

    let mut dec = Vec::new();
    for l in (0..cfg.levels).rev() {
        let c = cfg.channels(l);
        let mut blocks = Vec::new();
        for b in 0..cfg.res_blocks_per_level {
            let fuse = Conv2d::new(
                &mut ps, &format!("dec.{l}.{b}.fuse"), 2 * c, c, (1, 1), 1, false, rng,
            );
            let res = ResBlock::new(&mut ps, &format!("dec.{l}.{b}.res"), c, cfg.noise_embed_dim, rng);
            let attn = (l == 0).then(|| {
                DualPathBlock::new(
                    &mut ps, &format!("dec.{l}.{b}.attn"), c, attn_dim, ff_dim, heads, rng,
                )
            });
            blocks.push((fuse, res, attn));
        }
        let up = (l > 0).then(|| {
            Conv2d::new(&mut ps, &format!("dec.{l}.up"), c, cfg.channels(l - 1), (3, 3), 1, false, rng)
        });
        dec.push(DecLevel { blocks, up });
    }

    let head_norm = GroupNorm::new(&mut ps, "head.norm", cfg.channels(0));
    let conv_out = Conv2d::new(
        &mut ps, "head.conv", cfg.channels(0), cfg.n_output_channels, (3, 3), 1, true, rng,
    );

    Ok((
        Model { config: cfg.clone(), conv_in, emb1, emb2, enc, dec, head_norm, conv_out },
        ps,
    ))
}

/// Analytic parameter count for a configuration, mirroring [`build`].
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (attn_dim, ff_dim) = (cfg.attn_dim(), cfg.ff_dim());
    let mut total = 0usize;
    total += Conv2d::param_count(cfg.n_input_channels, cfg.channels(0), (3, 3));
    total += Linear::param_count(cfg.sinusoid_dim(), cfg.noise_embed_dim);
    total += Linear::param_count(cfg.noise_embed_dim, cfg.noise_embed_dim);
    for l in 0..cfg.levels {
        let c = cfg.channels(l);
        total += cfg.res_blocks_per_level
            * (ResBlock::param_count(c, cfg.noise_embed_dim)
                + DualPathBlock::param_count(c, attn_dim, ff_dim));
        if l + 1 < cfg.levels {
            total += Conv2d::param_count(c, cfg.channels(l + 1), (3, 3));
        }
    }
    for l in 0..cfg.levels {
        let c = cfg.channels(l);
        total += cfg.res_blocks_per_level
            * (Conv2d::param_count(2 * c, c, (1, 1)) + ResBlock::param_count(c, cfg.noise_embed_dim));
        if l == 0 {
            total += cfg.res_blocks_per_level * DualPathBlock::param_count(c, attn_dim, ff_dim);
        }
        if l > 0 {
            total += Conv2d::param_count(c, cfg.channels(l - 1), (3, 3));
        }
    }
    total += GroupNorm::param_count(cfg.channels(0));
    total += Conv2d::param_count(cfg.channels(0), cfg.n_output_channels, (3, 3));
    total
}

/// Number of dual-path attention blocks in the architecture:
/// one per encoder residual block plus one per block of the final decoder
/// level.
pub fn attention_block_count(cfg: &ModelConfig) -> usize {
    cfg.levels * cfg.res_blocks_per_level + cfg.res_blocks_per_level
}

fn cat_channels<S: Scalar>(a: &Array3<S>, b: &Array3<S>) -> Array3<S> {
    let (ca, f, t) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let cb = b.shape()[0];
    let mut out = Array3::zeros((ca + cb, f, t));
    out.slice_mut(s![..ca, .., ..]).assign(a);
    out.slice_mut(s![ca.., .., ..]).assign(b);
    out
}

impl Model {
    /// Actual number of attention blocks in the built structure.
    pub fn count_attention_blocks(&self) -> usize {
        self.enc.iter().map(|l| l.blocks.len()).sum::<usize>()
            + self
                .dec
                .iter()
                .flat_map(|l| l.blocks.iter())
                .filter(|(_, _, a)| a.is_some())
                .count()
    }

    fn embed<S: Scalar>(&self, ps: &ParamStore<S>, c_noise: f64) -> EmbCache<S> {
        let sin: Vec<S> = sinusoid_features(c_noise, self.config.sinusoid_dim())
            .into_iter()
            .map(S::of_f64)
            .collect();
        let sin_mat = ndarray::Array2::from_shape_vec((1, sin.len()), sin).unwrap();
        let (z1m, emb1_cache) = self.emb1.forward(ps, &sin_mat);
        let z1: Vec<S> = z1m.row(0).to_vec();
        let h1: Vec<S> = z1.iter().map(|&v| v * crate::nn::ops::sigmoid(v)).collect();
        let h1_mat = ndarray::Array2::from_shape_vec((1, h1.len()), h1).unwrap();
        let (z2m, emb2_cache) = self.emb2.forward(ps, &h1_mat);
        let z2: Vec<S> = z2m.row(0).to_vec();
        let emb: Vec<S> = z2.iter().map(|&v| v * crate::nn::ops::sigmoid(v)).collect();
        EmbCache { z1, emb1: emb1_cache, z2, emb2: emb2_cache, emb }
    }

    /// Learned noise embedding for a sigma value (deterministic).
    pub fn noise_embedding<S: Scalar>(&self, ps: &ParamStore<S>, sigma: f64) -> Result<Vec<S>> {
        let cs = precond_coeffs(sigma, diffusion::SIGMA_DATA)?;
        Ok(self.embed(ps, cs.c_noise).emb)
    }

    fn check_input<S: Scalar>(&self, x: &Array3<S>) -> Result<()> {
        let cfg = &self.config;
        if x.shape()[0] != cfg.n_input_channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} input channels, got {}",
                cfg.n_input_channels,
                x.shape()[0]
            )));
        }
        let div = cfg.freq_divisor();
        if x.shape()[1] % div != 0 || x.shape()[1] == 0 {
            return Err(Error::ShapeMismatch(format!(
                "frequency axis {} must be a positive multiple of {div}",
                x.shape()[1]
            )));
        }
        Ok(())
    }

    /// Forward pass without caches (inference).
    pub fn infer<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Array3<S>,
        c_noise: f64,
    ) -> Result<Array3<S>> {
        self.run(ps, x, c_noise, false, None).map(|(y, _)| y)
    }

    /// Forward pass keeping every cache needed for [`Model::backward`].
    pub fn forward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Array3<S>,
        c_noise: f64,
    ) -> Result<(Array3<S>, ModelCache<S>)> {
        self.run(ps, x, c_noise, true, None)
            .map(|(y, c)| (y, c.expect("cache requested")))
    }

    /// Forward pass recording the shape after every encoder stage
    /// (for resampling audits).
    pub fn infer_traced<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Array3<S>,
        c_noise: f64,
    ) -> Result<(Array3<S>, Vec<(String, [usize; 3])>)> {
        let mut trace = Vec::new();
        let (y, _) = self.run(ps, x, c_noise, false, Some(&mut trace))?;
        Ok((y, trace))
    }

    fn run<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        x: &Array3<S>,
        c_noise: f64,
        want_cache: bool,
        mut trace: Option<&mut Vec<(String, [usize; 3])>>,
    ) -> Result<(Array3<S>, Option<ModelCache<S>>)> {
        self.check_input(x)?;
        let emb_cache = self.embed(ps, c_noise);
        let emb = emb_cache.emb.clone();

        let (mut h, conv_in_cache) = if want_cache {
            let (y, c) = self.conv_in.forward(ps, x);
            (y, Some(c))
        } else {
            (self.conv_in.infer(ps, x), None)
        };

        let mut skips: Vec<Array3<S>> = Vec::new();
        let mut enc_caches = Vec::new();
        for (l, level) in self.enc.iter().enumerate() {
            let mut block_caches = Vec::new();
            for (res, attn) in &level.blocks {
                let (y, res_cache) = res.forward(ps, &h, &emb, want_cache);
                let (y2, attn_cache) = attn.forward(ps, &y, want_cache);
                h = y2;
                skips.push(h.clone());
                if want_cache {
                    block_caches.push((res_cache.unwrap(), attn_cache.unwrap()));
                }
            }
            let mut down_cache = None;
            if let Some(down) = &level.down {
                if want_cache {
                    let (y, c) = down.forward(ps, &h);
                    h = y;
                    down_cache = Some(c);
                } else {
                    h = down.infer(ps, &h);
                }
                if let Some(tr) = trace.as_deref_mut() {
                    tr.push((
                        format!("enc.{l}.down"),
                        [h.shape()[0], h.shape()[1], h.shape()[2]],
                    ));
                }
            }
            enc_caches.push((block_caches, down_cache));
        }

        let mut dec_caches = Vec::new();
        let mut dec_up_caches = Vec::new();
        for dl in &self.dec {
            let mut block_caches = Vec::new();
            for (fuse, res, attn) in &dl.blocks {
                let skip = skips.pop().expect("skip stack underflow");
                let cat = cat_channels(&h, &skip);
                let (fused, fuse_cache) = if want_cache {
                    let (y, c) = fuse.forward(ps, &cat);
                    (y, Some(c))
                } else {
                    (fuse.infer(ps, &cat), None)
                };
                let (y, res_cache) = res.forward(ps, &fused, &emb, want_cache);
                h = y;
                let mut attn_cache = None;
                if let Some(attn) = attn {
                    let (y2, ac) = attn.forward(ps, &h, want_cache);
                    h = y2;
                    attn_cache = ac;
                }
                if want_cache {
                    block_caches.push((fuse_cache.unwrap(), res_cache.unwrap(), attn_cache));
                }
            }
            let mut up_cache = None;
            if let Some(up) = &dl.up {
                let upsampled = upsample_freq2(&h);
                if want_cache {
                    let (y, c) = up.forward(ps, &upsampled);
                    up_cache = Some((upsampled, c));
                    h = y;
                } else {
                    h = up.infer(ps, &upsampled);
                }
            }
            dec_caches.push(block_caches);
            dec_up_caches.push(up_cache);
        }

        let (pre, head_norm_cache) = self.head_norm.forward(ps, &h);
        let act = pre.mapv(|v| v * crate::nn::ops::sigmoid(v));
        let (out, head_conv_cache) = if want_cache {
            let (y, c) = self.conv_out.forward(ps, &act);
            (y, Some(c))
        } else {
            (self.conv_out.infer(ps, &act), None)
        };

        let cache = want_cache.then(|| ModelCache {
            emb: emb_cache,
            conv_in: conv_in_cache.unwrap(),
            enc: enc_caches,
            dec: dec_caches,
            dec_up: dec_up_caches,
            head_pre: pre,
            head_norm: head_norm_cache,
            head_conv: head_conv_cache.unwrap(),
        });
        Ok((out, cache))
    }

    /// Reverse-mode pass: accumulates parameter gradients and returns the
    /// gradient with respect to the input tensor.
    pub fn backward<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        cache: &ModelCache<S>,
        grad_out: &Array3<S>,
        grads: &mut Grads<S>,
    ) -> Array3<S> {
        let emb_len = cache.emb.emb.len();
        let mut demb = vec![S::zero(); emb_len];

        // Head.
        let dact = self.conv_out.backward(ps, &cache.head_conv, grad_out, grads);
        let mut dpre = dact;
        dpre.zip_mut_with(&cache.head_pre, |g, &p| *g *= silu_grad(p));
        let mut dh = self.head_norm.backward(ps, &cache.head_norm, &dpre, grads);

        // Decoder, reversed.
        let mut dskips: Vec<Array3<S>> = Vec::new();
        for (i, dl) in self.dec.iter().enumerate().rev() {
            if let Some(up) = &dl.up {
                let (upsampled, up_cache) = cache.dec_up[i].as_ref().unwrap();
                let _ = upsampled;
                let dup = up.backward(ps, up_cache, &dh, grads);
                dh = upsample_freq2_backward(&dup);
            }
            for (b, (fuse, res, attn)) in dl.blocks.iter().enumerate().rev() {
                let (fuse_cache, res_cache, attn_cache) = &cache.dec[i][b];
                if let Some(attn) = attn {
                    dh = attn.backward(ps, attn_cache.as_ref().unwrap(), &dh, grads);
                }
                let (dfused, de) = res.backward(ps, res_cache, &dh, grads);
                for (a, b) in demb.iter_mut().zip(de.iter()) {
                    *a += *b;
                }
                let dcat = fuse.backward(ps, fuse_cache, &dfused, grads);
                let c = dcat.shape()[0] / 2;
                dh = dcat.slice(s![..c, .., ..]).to_owned();
                dskips.push(dcat.slice(s![c.., .., ..]).to_owned());
            }
        }

        // Encoder, reversed; skip gradients pop in matching order.
        for (l, level) in self.enc.iter().enumerate().rev() {
            if let Some(down) = &level.down {
                let down_cache = cache.enc[l].1.as_ref().unwrap();
                dh = down.backward(ps, down_cache, &dh, grads);
            }
            for (b, (res, attn)) in level.blocks.iter().enumerate().rev() {
                let (res_cache, attn_cache) = &cache.enc[l].0[b];
                dh += &dskips.pop().expect("skip gradient underflow");
                dh = attn.backward(ps, attn_cache, &dh, grads);
                let (dx, de) = res.backward(ps, res_cache, &dh, grads);
                dh = dx;
                for (a, b) in demb.iter_mut().zip(de.iter()) {
                    *a += *b;
                }
            }
        }

        let dx = self.conv_in.backward(ps, &cache.conv_in, &dh, grads);

        // Embedding MLP.
        let mut dz2 = demb;
        for (g, &z) in dz2.iter_mut().zip(cache.emb.z2.iter()) {
            *g *= silu_grad(z);
        }
        let dz2_mat = ndarray::Array2::from_shape_vec((1, dz2.len()), dz2).unwrap();
        let dh1 = self.emb2.backward(ps, &cache.emb.emb2, &dz2_mat, grads);
        let mut dz1: Vec<S> = dh1.row(0).to_vec();
        for (g, &z) in dz1.iter_mut().zip(cache.emb.z1.iter()) {
            *g *= silu_grad(z);
        }
        let dz1_mat = ndarray::Array2::from_shape_vec((1, dz1.len()), dz1).unwrap();
        let _ = self.emb1.backward(ps, &cache.emb.emb1, &dz1_mat, grads);

        dx
    }
}

/// Borrowing adapter that lets the samplers drive the model as a raw
/// network.
pub struct ModelNetwork<'a> {
    pub model: &'a Model,
    pub params: &'a ParamStore<f32>,
}

impl Network for ModelNetwork<'_> {
    fn forward(&self, input: &Array3<f32>, c_noise: f64) -> Result<Array3<f32>> {
        self.model.infer(self.params, input, c_noise)
    }
}

/// EDM training loss for one item with explicit noise (deterministic):
/// `lambda(sigma) * mean((D(target + noise; sigma) - target)^2)`.
pub fn edm_loss<S: Scalar>(
    model: &Model,
    ps: &ParamStore<S>,
    target: &Array3<S>,
    cond: &Array3<S>,
    sigma: f64,
    noise: &Array3<S>,
) -> Result<f64> {
    let (loss, _, _, _) = edm_forward(model, ps, target, cond, sigma, noise, false)?;
    Ok(loss)
}

type EdmForward<S> = (f64, Array3<S>, Option<ModelCache<S>>, f64);

fn edm_forward<S: Scalar>(
    model: &Model,
    ps: &ParamStore<S>,
    target: &Array3<S>,
    cond: &Array3<S>,
    sigma: f64,
    noise: &Array3<S>,
    want_cache: bool,
) -> Result<EdmForward<S>> {
    if target.shape() != cond.shape() || target.shape() != noise.shape() {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} / cond {:?} / noise {:?}",
            target.shape(),
            cond.shape(),
            noise.shape()
        )));
    }
    let cs = precond_coeffs(sigma, diffusion::SIGMA_DATA)?;
    let x = target + noise;
    let c = x.shape()[0];
    let mut input = Array3::zeros((2 * c, x.shape()[1], x.shape()[2]));
    input
        .slice_mut(s![..c, .., ..])
        .assign(&x.mapv(|v| v * S::of_f64(cs.c_in)));
    input.slice_mut(s![c.., .., ..]).assign(cond);

    let (raw, cache) = if want_cache {
        let (y, cc) = model.forward(ps, &input, cs.c_noise)?;
        (y, Some(cc))
    } else {
        (model.infer(ps, &input, cs.c_noise)?, None)
    };

    // residual = D(x) - target = c_skip*x + c_out*raw - target
    let mut residual = x.mapv(|v| v * S::of_f64(cs.c_skip));
    residual.zip_mut_with(&raw, |r, &f| *r += S::of_f64(cs.c_out) * f);
    residual.zip_mut_with(target, |r, &t| *r -= t);

    let m = residual.len() as f64;
    let sq = residual.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
    let lambda = loss_weight(sigma, diffusion::SIGMA_DATA);
    let loss = lambda * sq / m;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    Ok((loss, residual, cache, lambda * cs.c_out * 2.0 / m))
}

/// Loss plus parameter gradients for one item.
pub fn edm_loss_and_grads<S: Scalar>(
    model: &Model,
    ps: &ParamStore<S>,
    target: &Array3<S>,
    cond: &Array3<S>,
    sigma: f64,
    noise: &Array3<S>,
) -> Result<(f64, Grads<S>)> {
    let (loss, residual, cache, dscale) = edm_forward(model, ps, target, cond, sigma, noise, true)?;
    let cache = cache.unwrap();
    let draw = residual.mapv(|r| r * S::of_f64(dscale));
    let mut grads = Grads::zeros_like(ps);
    let _ = model.backward(ps, &cache, &draw, &mut grads);
    Ok((loss, grads))
}
