//! The conditional VAE over level layouts: input construction, encoder,
//! decoder, loss with a full backward pass, training, checkpoints, and
//! conditioned generation.
//!
//! Two variants share every code path. AVALON feeds the normalized
//! difficulty `d` to both halves (an extra constant input channel and an
//! extra decoder scalar); VANILLA omits it.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bot::DEFAULT_MOVE_CAP;
use crate::dataset::{DatasetManifest, DifficultyBounds, Split};
use crate::error::{Error, Result};
use crate::grid::{
    argmax_decode, build_size_mask, build_symmetry_mask, complete_symmetry, one_hot_encode, BinaryMask,
    ConditionSpec, LevelGrid, LevelSize, SymmetryKind, BOARD_HEIGHT, BOARD_WIDTH, CELL_CLASSES, CELL_COUNT,
    HEIGHT_CLASSES, MIN_HEIGHT, MIN_WIDTH, WIDTH_CLASSES,
};
use crate::neural::{
    conv2d, conv2d_backward, fully_connected, fully_connected_backward, kl_standard_normal,
    masked_softmax_cross_entropy, relu, relu_backward, reparameterize_backward, shift_scale, standard_normal,
    transposed_conv2d, transposed_conv2d_backward, AdamHyper, AdamState, Gradients, ParamId, ParamStore, Scalar,
    Tensor,
};

/// Samples per gradient chunk. Chunks run in parallel and are reduced in
/// index order, so results do not depend on the thread count.
const CHUNK: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Avalon,
    Vanilla,
}

impl Variant {
    pub fn has_difficulty(self) -> bool {
        self == Variant::Avalon
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Avalon => "avalon",
            Variant::Vanilla => "vanilla",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avalon" => Ok(Variant::Avalon),
            "vanilla" => Ok(Variant::Vanilla),
            other => Err(Error::Parse(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub latent_dim: usize,
    pub encoder_filters: [usize; 3],
    /// The last entry is the number of cell classes.
    pub decoder_filters: [usize; 3],
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn avalon() -> Self {
        Self {
            variant: Variant::Avalon,
            latent_dim: 5,
            encoder_filters: [16, 32, 64],
            decoder_filters: [32, 16, CELL_CLASSES],
            learning_rate: 1e-5,
            epochs: 24_000,
            batch_size: 100,
            checkpoint_interval: 500,
            seed: 0,
        }
    }

    pub fn vanilla() -> Self {
        Self {
            variant: Variant::Vanilla,
            learning_rate: 5e-6,
            ..Self::avalon()
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Avalon => Self::avalon(),
            Variant::Vanilla => Self::vanilla(),
        }
    }

    /// One filter per layer and a 2-d latent, small enough for exhaustive
    /// finite-difference checks.
    pub fn shrunk(variant: Variant) -> Self {
        Self {
            latent_dim: 2,
            encoder_filters: [1, 1, 1],
            decoder_filters: [1, 1, CELL_CLASSES],
            ..Self::for_variant(variant)
        }
    }

    pub fn input_channels(&self) -> usize {
        CELL_CLASSES + 1 + usize::from(self.variant.has_difficulty())
    }

    /// Size one-hots plus the difficulty scalar when present.
    pub fn condition_len(&self) -> usize {
        WIDTH_CLASSES + HEIGHT_CLASSES + usize::from(self.variant.has_difficulty())
    }

    pub fn decoder_input_len(&self) -> usize {
        self.latent_dim + self.condition_len()
    }

    /// Feature maps produced by the decoder's FC layer, mirroring the last
    /// encoder convolution.
    pub fn decoder_maps(&self) -> usize {
        self.encoder_filters[2]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ShapeMismatch(format!("model config: {m}")));
        if self.decoder_filters[2] != CELL_CLASSES {
            return bad("last decoder layer must output one map per cell class");
        }
        if self.latent_dim == 0 || self.encoder_filters.contains(&0) || self.decoder_filters.contains(&0) {
            return bad("layer sizes must be positive");
        }
        if self.batch_size == 0 || self.checkpoint_interval == 0 {
            return bad("batch size and checkpoint interval must be positive");
        }
        Ok(())
    }
}

/// Encoder channels: one-hot level (zeroed where the symmetry mask is 0),
/// size mask, and the constant difficulty map when `d` is given.
pub fn encoder_input<T: Scalar>(
    level: &LevelGrid,
    size: LevelSize,
    symmetry: SymmetryKind,
    d: Option<f64>,
) -> Tensor<T> {
    let channels = CELL_CLASSES + 1 + usize::from(d.is_some());
    let mut data = vec![T::zero(); channels * CELL_COUNT];
    let sym = build_symmetry_mask(size, symmetry);
    let onehot = one_hot_encode::<T>(level);
    for (c, chunk) in onehot.data().chunks(CELL_COUNT).enumerate() {
        for (i, (&v, bit)) in chunk.iter().zip(sym.iter()).enumerate() {
            if bit {
                data[c * CELL_COUNT + i] = v;
            }
        }
    }
    for (i, bit) in build_size_mask(size).iter().enumerate() {
        if bit {
            data[CELL_CLASSES * CELL_COUNT + i] = T::one();
        }
    }
    if let Some(d) = d {
        let dv = T::from_f64_lossy(d);
        data[(CELL_CLASSES + 1) * CELL_COUNT..].iter_mut().for_each(|v| *v = dv);
    }
    Tensor::from_vec(&[channels, BOARD_HEIGHT, BOARD_WIDTH], data).expect("encoder input shape")
}

/// `[h_W, h_H, d]` part of the decoder input.
pub fn decoder_condition<T: Scalar>(size: LevelSize, d: Option<f64>) -> Vec<T> {
    let mut c = vec![T::zero(); WIDTH_CLASSES + HEIGHT_CLASSES];
    c[size.width - MIN_WIDTH] = T::one();
    c[WIDTH_CLASSES + size.height - MIN_HEIGHT] = T::one();
    if let Some(d) = d {
        c.push(T::from_f64_lossy(d));
    }
    c
}

/// Everything one training level contributes to the loss.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub input: Tensor<T>,
    pub condition: Vec<T>,
    pub target: LevelGrid,
    pub mask: BinaryMask,
}

impl<T: Scalar> Example<T> {
    pub fn new(level: &LevelGrid, size: LevelSize, symmetry: SymmetryKind, d: Option<f64>) -> Self {
        Self {
            input: encoder_input(level, size, symmetry, d),
            condition: decoder_condition(size, d),
            target: level.clone(),
            mask: build_symmetry_mask(size, symmetry),
        }
    }
}

/// Training examples for one split; `d` comes from the annotated median.
pub fn examples<T: Scalar>(manifest: &DatasetManifest, variant: Variant, split: Split) -> Result<Vec<Example<T>>> {
    let bounds = manifest.bounds();
    manifest
        .split(split)
        .map(|l| {
            let d = if variant.has_difficulty() {
                Some(bounds.normalize(l.median_moves)?)
            } else {
                None
            };
            Ok(Example::new(&l.grid, l.size, l.symmetry, d))
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Layers {
    enc: [Layer; 3],
    mu: Layer,
    logvar: Layer,
    fc: Layer,
    dec: [Layer; 3],
}

impl Layers {
    fn locate<T: Scalar>(store: &ParamStore<T>) -> Result<Self> {
        let get = |n: &str| -> Result<Layer> {
            let find = |s: &str| {
                store
                    .find(&format!("{n}.{s}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {n}.{s}")))
            };
            Ok(Layer {
                w: find("w")?,
                b: find("b")?,
            })
        };
        Ok(Self {
            enc: [get("enc1")?, get("enc2")?, get("enc3")?],
            mu: get("mu")?,
            logvar: get("logvar")?,
            fc: get("dec_fc")?,
            dec: [get("dec1")?, get("dec2")?, get("dec3")?],
        })
    }
}

/// Intermediate values of one forward pass kept for the backward pass.
struct Trace<T> {
    x: Tensor<T>,
    enc_pre: Vec<Tensor<T>>,
    enc_act: Vec<Tensor<T>>,
    mu: Tensor<T>,
    logvar: Tensor<T>,
    noise: Tensor<T>,
    zhat: Tensor<T>,
    fc_pre: Tensor<T>,
    fc_act: Tensor<T>,
    dec_pre: Vec<Tensor<T>>,
    dec_act: Vec<Tensor<T>>,
    logits: Tensor<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub ce: f64,
    pub kl: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.ce + self.kl
    }
}

#[derive(Clone, Debug)]
pub struct Cvae<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    layers: Layers,
}


fn add_layer<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
    (fan_in, fan_out): (usize, usize),
    bias_len: usize,
    rng: &mut ChaCha8Rng,
) {
    store.add_glorot(format!("{name}.w"), shape, fan_in, fan_out, rng);
    store.add(format!("{name}.b"), Tensor::zeros(&[bias_len]));
}

impl<T: Scalar> Cvae<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let [e1, e2, e3] = config.encoder_filters;
        let [d1, d2, d3] = config.decoder_filters;
        let c_in = config.input_channels();
        let (flat, maps, latent) = (e3 * CELL_COUNT, config.decoder_maps(), config.latent_dim);
        let s = &mut store;
        let r = &mut rng;
        add_layer(s, "enc1", &[e1, c_in, 3, 3], (c_in * 9, e1 * 9), e1, r);
        add_layer(s, "enc2", &[e2, e1, 3, 3], (e1 * 9, e2 * 9), e2, r);
        add_layer(s, "enc3", &[e3, e2, 3, 3], (e2 * 9, e3 * 9), e3, r);
        add_layer(s, "mu", &[latent, flat], (flat, latent), latent, r);
        add_layer(s, "logvar", &[latent, flat], (flat, latent), latent, r);
        let zlen = config.decoder_input_len();
        add_layer(s, "dec_fc", &[maps * CELL_COUNT, zlen], (zlen, maps * CELL_COUNT), maps * CELL_COUNT, r);
        add_layer(s, "dec1", &[maps, d1, 3, 3], (maps * 9, d1 * 9), d1, r);
        add_layer(s, "dec2", &[d1, d2, 3, 3], (d1 * 9, d2 * 9), d2, r);
        add_layer(s, "dec3", &[d2, d3, 3, 3], (d2 * 9, d3 * 9), d3, r);
        let layers = Layers::locate(&store)?;
        Ok(Self { config, store, layers })
    }

    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layers = Layers::locate(&store)?;
        let fresh = Cvae::<T>::new(config.clone(), 0)?;
        for (a, b) in store.iter().zip(fresh.store.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, config expects {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        if store.len() != fresh.store.len() {
            return Err(Error::Checkpoint("parameter count does not match config".into()));
        }
        Ok(Self { config, store, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Scalar>(&self) -> Cvae<U> {
        let mut store = ParamStore::new();
        for p in self.store.iter() {
            store.add(p.name.clone(), p.value.cast());
        }
        Cvae {
            config: self.config.clone(),
            layers: self.layers.clone(),
            store,
        }
    }

    fn w(&self, l: Layer) -> (&Tensor<T>, &Tensor<T>) {
        (self.store.value(l.w), self.store.value(l.b))
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        input.expect_shape(&[self.config.input_channels(), BOARD_HEIGHT, BOARD_WIDTH], "encoder input")
    }

    /// `(mu, logvar)` for an encoder input.
    pub fn encode(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_input(input)?;
        let mut h = input.clone();
        for l in self.layers.enc {
            let (w, b) = self.w(l);
            h = relu(&conv2d(&h, w, b)?);
        }
        let (wm, bm) = self.w(self.layers.mu);
        let (wl, bl) = self.w(self.layers.logvar);
        Ok((fully_connected(&h, wm, bm)?, fully_connected(&h, wl, bl)?))
    }

    /// Class logits `3×11×9` for a decoder input `[z, h_W, h_H, d]`.
    pub fn decode(&self, zhat: &Tensor<T>) -> Result<Tensor<T>> {
        if zhat.len() != self.config.decoder_input_len() {
            return Err(Error::ShapeMismatch(format!(
                "decoder input has {} values, expected {}",
                zhat.len(),
                self.config.decoder_input_len()
            )));
        }
        let (w, b) = self.w(self.layers.fc);
        let mut h = relu(&fully_connected(zhat, w, b)?).reshape(&[self.config.decoder_maps(), BOARD_HEIGHT, BOARD_WIDTH])?;
        for (i, l) in self.layers.dec.iter().enumerate() {
            let (w, b) = self.w(*l);
            h = transposed_conv2d(&h, w, b)?;
            if i < 2 {
                h = relu(&h);
            }
        }
        Ok(h)
    }

    fn zhat(&self, z: &Tensor<T>, condition: &[T]) -> Result<Tensor<T>> {
        if condition.len() != self.config.condition_len() {
            return Err(Error::ShapeMismatch(format!(
                "condition has {} values, expected {}",
                condition.len(),
                self.config.condition_len()
            )));
        }
        let mut v = z.data().to_vec();
        v.extend_from_slice(condition);
        Tensor::from_vec(&[v.len()], v)
    }

    fn forward(&self, ex: &Example<T>, noise: Tensor<T>) -> Result<Trace<T>> {
        self.check_input(&ex.input)?;
        let mut enc_pre = Vec::with_capacity(3);
        let mut enc_act: Vec<Tensor<T>> = Vec::with_capacity(3);
        for l in self.layers.enc {
            let (w, b) = self.w(l);
            let pre = conv2d(enc_act.last().unwrap_or(&ex.input), w, b)?;
            enc_act.push(relu(&pre));
            enc_pre.push(pre);
        }
        let h3 = &enc_act[2];
        let (wm, bm) = self.w(self.layers.mu);
        let (wl, bl) = self.w(self.layers.logvar);
        let mu = fully_connected(h3, wm, bm)?;
        let logvar = fully_connected(h3, wl, bl)?;
        let z = shift_scale(&mu, &logvar, &noise);
        let zhat = self.zhat(&z, &ex.condition)?;
        let (wf, bf) = self.w(self.layers.fc);
        let fc_pre = fully_connected(&zhat, wf, bf)?;
        let fc_act = relu(&fc_pre).reshape(&[self.config.decoder_maps(), BOARD_HEIGHT, BOARD_WIDTH])?;
        let mut dec_pre = Vec::with_capacity(3);
        let mut dec_act: Vec<Tensor<T>> = Vec::with_capacity(2);
        for (i, l) in self.layers.dec.iter().enumerate() {
            let (w, b) = self.w(*l);
            let pre = transposed_conv2d(dec_act.last().unwrap_or(&fc_act), w, b)?;
            if i < 2 {
                dec_act.push(relu(&pre));
            }
            dec_pre.push(pre);
        }
        let logits = dec_pre.pop().expect("three decoder layers");
        Ok(Trace {
            x: ex.input.clone(),
            enc_pre,
            enc_act,
            mu,
            logvar,
            noise,
            zhat,
            fc_pre,
            fc_act,
            dec_pre,
            dec_act,
            logits,
        })
    }

    /// Masked cross-entropy plus KL for one example with the given latent
    /// noise, accumulating parameter gradients into `grads`.
    pub fn loss_with_noise(&self, ex: &Example<T>, noise: Tensor<T>, grads: &mut Gradients<T>) -> Result<LossParts> {
        let tr = self.forward(ex, noise)?;
        let (ce, dlogits) = masked_softmax_cross_entropy(&tr.logits, &ex.target, &ex.mask)?;
        let kl = kl_standard_normal(&tr.mu, &tr.logvar)?;

        // decoder
        let mut g = dlogits;
        for i in (0..3).rev() {
            let l = self.layers.dec[i];
            let input = if i == 0 { &tr.fc_act } else { &tr.dec_act[i - 1] };
            let cg = transposed_conv2d_backward(input, self.store.value(l.w), &g)?;
            grads.add(l.w, &cg.weight);
            grads.add(l.b, &cg.bias);
            g = if i == 0 {
                cg.input
            } else {
                relu_backward(&tr.dec_pre[i - 1], &cg.input)
            };
        }
        let g = relu_backward(&tr.fc_pre, &g.reshape(tr.fc_pre.shape())?);
        let fg = fully_connected_backward(&tr.zhat, self.store.value(self.layers.fc.w), &g)?;
        grads.add(self.layers.fc.w, &fg.weight);
        grads.add(self.layers.fc.b, &fg.bias);

        // latent
        let latent = self.config.latent_dim;
        let dz = Tensor::from_vec(&[latent], fg.input.data()[..latent].to_vec())?;
        let (mut dmu, mut dlv) = reparameterize_backward(&tr.logvar, &tr.noise, &dz);
        dmu.add_assign(&kl.grad_mu);
        dlv.add_assign(&kl.grad_logvar);

        // encoder
        let h3 = &tr.enc_act[2];
        let mg = fully_connected_backward(h3, self.store.value(self.layers.mu.w), &dmu)?;
        let lg = fully_connected_backward(h3, self.store.value(self.layers.logvar.w), &dlv)?;
        grads.add(self.layers.mu.w, &mg.weight);
        grads.add(self.layers.mu.b, &mg.bias);
        grads.add(self.layers.logvar.w, &lg.weight);
        grads.add(self.layers.logvar.b, &lg.bias);
        let mut g = mg.input;
        g.add_assign(&lg.input);
        for i in (0..3).rev() {
            let l = self.layers.enc[i];
            let g_pre = relu_backward(&tr.enc_pre[i], &g);
            let input = if i == 0 { &tr.x } else { &tr.enc_act[i - 1] };
            let cg = conv2d_backward(input, self.store.value(l.w), &g_pre)?;
            grads.add(l.w, &cg.weight);
            grads.add(l.b, &cg.bias);
            g = cg.input;
        }
        Ok(LossParts {
            ce: ce.to_f64_lossy(),
            kl: kl.loss.to_f64_lossy(),
        })
    }

    /// Sample the latent noise from `rng`, then [`Self::loss_with_noise`].
    pub fn loss_total<R: Rng + ?Sized>(&self, ex: &Example<T>, rng: &mut R) -> Result<(LossParts, Gradients<T>)> {
        let noise = standard_normal::<T, R>(self.config.latent_dim, rng);
        let mut grads = self.store.gradient_buffers();
        let parts = self.loss_with_noise(ex, noise, &mut grads)?;
        Ok((parts, grads))
    }

    /// Loss value only.
    pub fn loss_value(&self, ex: &Example<T>, noise: &Tensor<T>) -> Result<LossParts> {
        let tr = self.forward(ex, noise.clone())?;
        let (ce, _) = masked_softmax_cross_entropy(&tr.logits, &ex.target, &ex.mask)?;
        let kl = kl_standard_normal(&tr.mu, &tr.logvar)?;
        Ok(LossParts {
            ce: ce.to_f64_lossy(),
            kl: kl.loss.to_f64_lossy(),
        })
    }

    /// Mean loss over a batch and the summed-then-averaged gradients.
    /// `noises[i]` belongs to `batch[i]`.
    pub fn batch_gradients(&self, batch: &[&Example<T>], noises: Vec<Tensor<T>>) -> Result<(LossParts, Gradients<T>)> {
        let items: Vec<_> = batch.iter().zip(noises).collect();
        let partials: Vec<Result<(LossParts, Gradients<T>)>> = items
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = self.store.gradient_buffers();
                let mut sum = LossParts::default();
                for (ex, noise) in chunk {
                    let p = self.loss_with_noise(ex, noise.clone(), &mut grads)?;
                    sum.ce += p.ce;
                    sum.kl += p.kl;
                }
                Ok((sum, grads))
            })
            .collect();
        let mut total = LossParts::default();
        let mut grads = self.store.gradient_buffers();
        for part in partials {
            let (p, g) = part?;
            total.ce += p.ce;
            total.kl += p.kl;
            grads.add_all(&g);
        }
        let n = batch.len() as f64;
        let inv = T::from_f64_lossy(1.0 / n);
        grads.0.iter_mut().for_each(|g| g.scale(inv));
        Ok((
            LossParts {
                ce: total.ce / n,
                kl: total.kl / n,
            },
            grads,
        ))
    }

    /// Logits for an example using the posterior mean as latent.
    pub fn reconstruct(&self, ex: &Example<T>) -> Result<Tensor<T>> {
        let (mu, _) = self.encode(&ex.input)?;
        self.decode(&self.zhat(&mu, &ex.condition)?)
    }

    /// Decode a latent sample under explicit conditions into raw logits.
    pub fn decode_conditioned(&self, z: &Tensor<T>, size: LevelSize, d: Option<f64>) -> Result<Tensor<T>> {
        self.decode(&self.zhat(z, &decoder_condition::<T>(size, d))?)
    }
}

/// Share of masked-in cells whose argmax class (latent = posterior mean)
/// equals the target, pooled over all examples.
pub fn reconstruction_accuracy<T: Scalar>(model: &Cvae<T>, examples: &[Example<T>]) -> Result<f64> {
    let counts = examples
        .par_iter()
        .map(|ex| -> Result<(usize, usize)> {
            let decoded = argmax_decode(&model.reconstruct(ex)?)?;
            let mut hit = 0;
            let mut total = 0;
            for (p, kind) in ex.target.iter() {
                if ex.mask.get(p) {
                    total += 1;
                    hit += usize::from(decoded.get(p) == kind);
                }
            }
            Ok((hit, total))
        })
        .collect::<Result<Vec<_>>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |(a, b), (h, t)| (a + h, b + t));
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Mean CE over examples with the latent at the posterior mean.
pub fn mean_reconstruction_ce<T: Scalar>(model: &Cvae<T>, examples: &[Example<T>]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let ces = examples
        .par_iter()
        .map(|ex| {
            let (ce, _) = masked_softmax_cross_entropy(&model.reconstruct(ex)?, &ex.target, &ex.mask)?;
            Ok(ce.to_f64_lossy())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ces.iter().sum::<f64>() / ces.len() as f64)
}

/// Trained parameters with everything needed to resume or generate.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Cvae<f32>,
    pub adam: AdamState<f32>,
    pub epoch: usize,
    pub bounds: DifficultyBounds,
    pub val_ce: Option<f64>,
}

const MAGIC: &[u8; 4] = b"M3CK";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    epoch: usize,
    bounds: DifficultyBounds,
    adam: AdamHyper,
    adam_step: u64,
    val_ce: Option<f64>,
    tensors: Vec<TensorEntry>,
}

fn write_f32s(out: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s(input: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    input
        .read_exact(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("truncated tensor data: {e}")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn variant(&self) -> Variant {
        self.model.config.variant
    }

    /// Move the training horizon, e.g. to extend a finished run.
    pub fn set_total_epochs(&mut self, epochs: usize) {
        self.model.config.epochs = epochs;
    }

    /// Layout: `M3CK`, u32 version, u64 header length, JSON header, then
    /// little-endian f32 parameter values followed by the Adam first and
    /// second moments, each in header tensor order.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let header = CheckpointHeader {
            config: self.model.config.clone(),
            epoch: self.epoch,
            bounds: self.bounds,
            adam: self.adam.hyper,
            adam_step: self.adam.step,
            val_ce: self.val_ce,
            tensors: self
                .model
                .store
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for p in self.model.store.iter() {
            write_f32s(out, p.value.data())?;
        }
        for t in self.adam.first_moment.iter().chain(&self.adam.second_moment) {
            write_f32s(out, t.data())?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut json)?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        let mut store = ParamStore::new();
        for t in &header.tensors {
            let n = t.shape.iter().product();
            store.add(t.name.clone(), Tensor::from_vec(&t.shape, read_f32s(input, n)?)?);
        }
        let model = Cvae::from_store(header.config, store)?;
        let mut adam = AdamState::new(&model.store, header.adam);
        adam.step = header.adam_step;
        for t in adam.first_moment.iter_mut().chain(adam.second_moment.iter_mut()) {
            let data = read_f32s(input, t.len())?;
            t.data_mut().copy_from_slice(&data);
        }
        Ok(Self {
            model,
            adam,
            epoch: header.epoch,
            bounds: header.bounds,
            val_ce: header.val_ce,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// Allowed target range for difficulty requests.
    pub fn difficulty_range(&self) -> (f64, f64) {
        (self.bounds.m_min, DEFAULT_MOVE_CAP as f64)
    }

    /// Check a request against the variant and the allowed difficulty range
    /// and return the normalized difficulty if the model uses one.
    pub fn condition_difficulty(&self, spec: &ConditionSpec) -> Result<Option<f64>> {
        match (self.variant().has_difficulty(), spec.target_moves) {
            (false, Some(_)) => Err(Error::VariantMismatch("model has no difficulty conditioner".into())),
            (true, None) => Err(Error::VariantMismatch("model requires a target number of moves".into())),
            (false, None) => Ok(None),
            (true, Some(m)) => {
                let (lo, hi) = self.difficulty_range();
                if !(lo..=hi).contains(&m) {
                    return Err(Error::DifficultyOutOfRange { value: m, min: lo, max: hi });
                }
                Ok(Some(self.bounds.normalize(m)?))
            }
        }
    }

    /// Sample a level: latent from `rng`, argmax per cell, BLOCK outside
    /// the requested play area, then mirror completion.
    pub fn generate<R: Rng + ?Sized>(&self, spec: &ConditionSpec, rng: &mut R) -> Result<LevelGrid> {
        if !spec.size.is_admissible() {
            return Err(Error::InvalidSize {
                width: spec.size.width,
                height: spec.size.height,
            });
        }
        let d = self.condition_difficulty(spec)?;
        let z = standard_normal::<f32, R>(self.config().latent_dim, rng);
        let logits = self.model.decode_conditioned(&z, spec.size, d)?;
        let raw = argmax_decode(&logits)?;
        Ok(complete_symmetry(&raw, spec.size, spec.symmetry))
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce: f64,
    pub kl: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: Checkpoint,
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch_{epoch:06}.m3ck")
}

pub const TRAIN_LOG: &str = "train_log.jsonl";

/// Checkpoints in a directory ordered by epoch.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let epoch = name.strip_prefix("epoch_")?.strip_suffix(".m3ck")?.parse().ok()?;
            Some((epoch, e.path()))
        })
        .collect();
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Per-epoch shuffle and latent-noise stream. Keyed by epoch so a resumed
/// run continues exactly where an uninterrupted one would.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Train from scratch. With `out_dir`, writes the JSONL log and a checkpoint
/// every `checkpoint_interval` epochs (and at the final epoch).
pub fn train(manifest: &DatasetManifest, config: &ModelConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    let model = Cvae::<f32>::new(config.clone(), config.seed)?;
    let adam = AdamState::new(model.params(), AdamHyper::with_lr(config.learning_rate));
    let start = Checkpoint {
        model,
        adam,
        epoch: 0,
        bounds: manifest.bounds(),
        val_ce: None,
    };
    continue_training(manifest, start, out_dir)
}

/// Run the remaining epochs of `checkpoint.model.config().epochs`.
pub fn continue_training(manifest: &DatasetManifest, mut state: Checkpoint, out_dir: Option<&Path>) -> Result<TrainReport> {
    let config = state.model.config.clone();
    let train_set = examples::<f32>(manifest, config.variant, Split::Train)?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let val_set = examples::<f32>(manifest, config.variant, Split::Val)?;
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let file = fs::OpenOptions::new()
                .create(true)
                .append(state.epoch > 0)
                .write(true)
                .truncate(state.epoch == 0)
                .open(dir.join(TRAIN_LOG))?;
            Some(BufWriter::new(file))
        }
        None => None,
    };
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    while state.epoch < config.epochs {
        let epoch = state.epoch + 1;
        let mut rng = epoch_rng(config.seed, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<&Example<f32>> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            let noises: Vec<Tensor<f32>> = batch
                .iter()
                .map(|_| standard_normal::<f32, _>(config.latent_dim, &mut rng))
                .collect();
            let (parts, grads) = state.model.batch_gradients(&batch, noises)?;
            if !parts.ce.is_finite() || !parts.kl.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    ce: parts.ce,
                    kl: parts.kl,
                });
            }
            sum.ce += parts.ce * batch.len() as f64;
            sum.kl += parts.kl * batch.len() as f64;
            state.model.store.zero_grads();
            state.model.store.accumulate(&grads);
            state.adam.step(&mut state.model.store);
        }
        state.epoch = epoch;
        let n = train_set.len() as f64;
        let entry = EpochLog {
            epoch,
            ce: sum.ce / n,
            kl: sum.kl / n,
            lr: state.adam.hyper.lr,
        };
        if let Some(log) = log.as_mut() {
            serde_json::to_writer(&mut *log, &entry)?;
            log.write_all(b"\n")?;
        }
        history.push(entry);
        let due = epoch.is_multiple_of(config.checkpoint_interval) || epoch == config.epochs;
        if due {
            state.val_ce = if val_set.is_empty() {
                None
            } else {
                Some(mean_reconstruction_ce(&state.model, &val_set)?)
            };
            if let Some(dir) = out_dir {
                let path = dir.join(checkpoint_file_name(epoch));
                state.save(&path)?;
                checkpoints.push(path);
            }
            if let Some(log) = log.as_mut() {
                log.flush()?;
            }
        }
    }
    if let Some(log) = log.as_mut() {
        log.flush()?;
    }
    Ok(TrainReport {
        history,
        checkpoints,
        final_checkpoint: state,
    })
}

pub fn read_train_log(path: &Path) -> Result<Vec<EpochLog>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, l)| {
            serde_json::from_str(l).map_err(|e| Error::Record {
                index,
                message: e.to_string(),
            })
        })
        .collect()
}
