//! Small convolutional feature extractor with hand-written forward and
//! backward passes and an Adam optimizer. Convolutions are 3×3, stride 1,
//! same-padding; pooling is 2×2 max; the final layer is dense and its width
//! is the feature dimension fed to the classifier heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::util::{atomic_write, par_map_indexed, ByteReader, ByteWriter};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// 3×3 convolution, stride 1, same padding, to this many channels.
    Conv3x3 { channels: usize },
    Relu,
    MaxPool2,
    Flatten,
    Dense { units: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Input image shape (h, w, c).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// The default desk-scale stack: two conv/pool stages into a dense
    /// feature layer.
    pub fn desk_default(input: (usize, usize, usize), conv_channels: &[usize], feature_dim: usize) -> Self {
        let mut layers = Vec::new();
        for &ch in conv_channels {
            layers.push(LayerSpec::Conv3x3 { channels: ch });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::MaxPool2);
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense { units: feature_dim });
        NetSpec { input, layers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    fn len(&self) -> usize {
        match *self {
            Shape::Spatial(h, w, c) => h * w * c,
            Shape::Flat(n) => n,
        }
    }
}

fn infer_shapes(spec: &NetSpec) -> Result<Vec<Shape>> {
    let (h, w, c) = spec.input;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::param("NetSpec", "input dimensions must be >= 1"));
    }
    let mut shapes = vec![Shape::Spatial(h, w, c)];
    for (i, layer) in spec.layers.iter().enumerate() {
        let prev = *shapes.last().unwrap();
        let next = match (layer, prev) {
            (LayerSpec::Conv3x3 { channels }, Shape::Spatial(h, w, _)) => {
                if *channels == 0 {
                    return Err(Error::param("NetSpec", format!("layer {i}: zero channels")));
                }
                Shape::Spatial(h, w, *channels)
            }
            (LayerSpec::Relu, s) => s,
            (LayerSpec::MaxPool2, Shape::Spatial(h, w, c)) => {
                if h < 2 || w < 2 {
                    return Err(Error::param(
                        "NetSpec",
                        format!("layer {i}: pooling a {h}x{w} map"),
                    ));
                }
                Shape::Spatial(h / 2, w / 2, c)
            }
            (LayerSpec::Flatten, Shape::Spatial(h, w, c)) => Shape::Flat(h * w * c),
            (LayerSpec::Dense { units }, Shape::Flat(n)) => {
                if *units == 0 || n == 0 {
                    return Err(Error::param("NetSpec", format!("layer {i}: empty dense")));
                }
                Shape::Flat(*units)
            }
            (l, s) => {
                return Err(Error::param(
                    "NetSpec",
                    format!("layer {i}: {l:?} cannot follow shape {s:?}"),
                ));
            }
        };
        shapes.push(next);
    }
    match shapes.last() {
        Some(Shape::Flat(_)) if matches!(spec.layers.last(), Some(LayerSpec::Dense { .. })) => {
            Ok(shapes)
        }
        _ => Err(Error::param("NetSpec", "network must end with a dense layer")),
    }
}

#[derive(Debug, Clone, Default)]
struct LayerParams {
    w: Vec<f64>,
    b: Vec<f64>,
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

impl LayerParams {
    fn learned(w: Vec<f64>, b: Vec<f64>) -> Self {
        let (nw, nb) = (w.len(), b.len());
        LayerParams {
            w,
            b,
            m_w: vec![0.0; nw],
            v_w: vec![0.0; nw],
            m_b: vec![0.0; nb],
            v_b: vec![0.0; nb],
        }
    }
}

/// Per-layer parameter gradients, shaped like the network's parameters.
#[derive(Debug, Clone)]
pub struct Grads {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (a, v) in w.iter_mut().zip(ow) {
                *a += v;
            }
            for (a, v) in b.iter_mut().zip(ob) {
                *a += v;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in self.layers.iter_mut() {
            for v in w.iter_mut() {
                *v *= k;
            }
            for v in b.iter_mut() {
                *v *= k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b).all(|v| v.is_finite()))
    }

    /// Gradients flattened in the same order as the parameter indexing.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Debug aid for negative controls: nudge the first weight gradient.
    pub fn perturb_first_weight(&mut self, relative: f64) {
        for (w, _) in self.layers.iter_mut() {
            if let Some(v) = w.first_mut() {
                *v = *v * (1.0 + relative) + relative;
                return;
            }
        }
    }
}

/// Forward activations retained for one batch; consumed by the matching
/// backward pass. Stamped with the parameter step so a cache taken before an
/// optimizer update cannot be replayed afterwards.
pub struct ForwardCache {
    per_image: Vec<ImageCache>,
    step: u64,
}

struct ImageCache {
    /// `acts[i]` is the input of layer i; the last entry is the output.
    acts: Vec<Vec<f64>>,
    /// Flat input index of each pooled maximum, one vec per pool layer.
    pool_argmax: Vec<Vec<usize>>,
}

/// The feature network: layer stack, parameters, and Adam state.
#[derive(Debug, Clone)]
pub struct FeatNet {
    spec: NetSpec,
    shapes: Vec<Shape>,
    layers: Vec<LayerParams>,
    step: u64,
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniform draws
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

impl FeatNet {
    /// Build with He-scaled normal weight init (variance 2/fan_in) and zero
    /// biases, deterministically from the seed.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        let shapes = infer_shapes(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let params = match (layer, shapes[i]) {
                (LayerSpec::Conv3x3 { channels }, Shape::Spatial(_, _, cin)) => {
                    let fan_in = 9 * cin;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let w = (0..9 * cin * channels)
                        .map(|_| std * sample_normal(&mut rng))
                        .collect();
                    LayerParams::learned(w, vec![0.0; *channels])
                }
                (LayerSpec::Dense { units }, Shape::Flat(n)) => {
                    let std = (2.0 / n as f64).sqrt();
                    let w = (0..units * n).map(|_| std * sample_normal(&mut rng)).collect();
                    LayerParams::learned(w, vec![0.0; *units])
                }
                _ => LayerParams::default(),
            };
            layers.push(params);
        }
        Ok(FeatNet {
            spec,
            shapes,
            layers,
            step: 0,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.spec.input
    }

    pub fn adam_steps(&self) -> u64 {
        self.step
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Read a parameter by flat index (layer order, weights then biases).
    pub fn param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.w.len() {
                return l.w[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, v: f64) {
        for l in self.layers.iter_mut() {
            if idx < l.w.len() {
                l.w[idx] = v;
                return;
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                l.b[idx] = v;
                return;
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    fn check_input(&self, images: &[Image]) -> Result<()> {
        if images.is_empty() {
            return Err(Error::param("FeatNet::forward", "empty batch"));
        }
        let (h, w, c) = self.spec.input;
        for img in images {
            if (img.h, img.w, img.c) != (h, w, c) {
                return Err(Error::dim(
                    "FeatNet::forward",
                    format!(
                        "image is {}x{}x{}, network expects {h}x{w}x{c}",
                        img.h, img.w, img.c
                    ),
                ));
            }
        }
        Ok(())
    }

    fn forward_one(&self, image: &Image, keep_cache: bool) -> (Vec<f64>, Option<ImageCache>) {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut pool_argmax = Vec::new();
        let mut current = image.data.clone();
        if keep_cache {
            acts.push(current.clone());
        }
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let next = match (layer, self.shapes[i]) {
                (LayerSpec::Conv3x3 { channels }, Shape::Spatial(h, w, cin)) => {
                    conv3x3_forward(&current, h, w, cin, *channels, &self.layers[i].w, &self.layers[i].b)
                }
                (LayerSpec::Relu, _) => current.iter().map(|&v| v.max(0.0)).collect(),
                (LayerSpec::MaxPool2, Shape::Spatial(h, w, c)) => {
                    let (out, argmax) = maxpool2_forward(&current, h, w, c);
                    if keep_cache {
                        pool_argmax.push(argmax);
                    }
                    out
                }
                (LayerSpec::Flatten, _) => current.clone(),
                (LayerSpec::Dense { units }, Shape::Flat(n)) => {
                    dense_forward(&current, n, *units, &self.layers[i].w, &self.layers[i].b)
                }
                _ => unreachable!("shapes validated at construction"),
            };
            current = next;
            if keep_cache {
                acts.push(current.clone());
            }
        }
        let cache = keep_cache.then_some(ImageCache { acts, pool_argmax });
        (current, cache)
    }

    /// Features for a batch (columns follow input order) plus the activation
    /// cache for the matching backward pass.
    pub fn forward(&self, images: &[Image]) -> Result<(Mat, ForwardCache)> {
        self.check_input(images)?;
        let results = par_map_indexed(images.len(), |i| self.forward_one(&images[i], true));
        let d = self.feature_dim();
        let mut features = Mat::zeros(d, images.len());
        let mut per_image = Vec::with_capacity(images.len());
        for (j, (feat, cache)) in results.into_iter().enumerate() {
            features.set_col(j, &feat);
            per_image.push(cache.unwrap());
        }
        Ok((
            features,
            ForwardCache {
                per_image,
                step: self.step,
            },
        ))
    }

    /// Feature extraction without retaining activations.
    pub fn extract(&self, images: &[Image]) -> Result<Mat> {
        self.check_input(images)?;
        let results = par_map_indexed(images.len(), |i| self.forward_one(&images[i], false).0);
        let d = self.feature_dim();
        let mut features = Mat::zeros(d, images.len());
        for (j, feat) in results.iter().enumerate() {
            features.set_col(j, feat);
        }
        Ok(features)
    }

    fn backward_one(&self, cache: &ImageCache, feature_grad: &[f64]) -> Grads {
        let mut grads = self.zero_grads();
        let mut upstream = feature_grad.to_vec();
        let mut pool_idx = cache.pool_argmax.len();
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            let input = &cache.acts[i];
            upstream = match (layer, self.shapes[i]) {
                (LayerSpec::Conv3x3 { channels }, Shape::Spatial(h, w, cin)) => {
                    let (gw, gb, gin) = conv3x3_backward(
                        input,
                        h,
                        w,
                        cin,
                        *channels,
                        &self.layers[i].w,
                        &upstream,
                        i > 0,
                    );
                    grads.layers[i].0 = gw;
                    grads.layers[i].1 = gb;
                    gin
                }
                (LayerSpec::Relu, _) => upstream
                    .iter()
                    .zip(input)
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
                (LayerSpec::MaxPool2, Shape::Spatial(h, w, c)) => {
                    pool_idx -= 1;
                    maxpool2_backward(&upstream, &cache.pool_argmax[pool_idx], h * w * c)
                }
                (LayerSpec::Flatten, _) => upstream,
                (LayerSpec::Dense { units }, Shape::Flat(n)) => {
                    let (gw, gb, gin) =
                        dense_backward(input, n, *units, &self.layers[i].w, &upstream, i > 0);
                    grads.layers[i].0 = gw;
                    grads.layers[i].1 = gb;
                    gin
                }
                _ => unreachable!(),
            };
        }
        grads
    }

    /// Parameter gradients for a batch, given per-column gradients of a loss
    /// w.r.t. the output features. Per-image contributions are computed
    /// independently (possibly in parallel) and summed in batch order, so
    /// results do not depend on the thread count.
    pub fn backward(&self, cache: &ForwardCache, feature_grads: &Mat) -> Result<Grads> {
        if cache.step != self.step {
            return Err(Error::StaleCache {
                param_step: self.step,
                cache_step: cache.step,
            });
        }
        if feature_grads.rows() != self.feature_dim()
            || feature_grads.cols() != cache.per_image.len()
        {
            return Err(Error::dim(
                "FeatNet::backward",
                format!(
                    "feature grads {}x{}, want {}x{}",
                    feature_grads.rows(),
                    feature_grads.cols(),
                    self.feature_dim(),
                    cache.per_image.len()
                ),
            ));
        }
        let per_image = par_map_indexed(cache.per_image.len(), |j| {
            self.backward_one(&cache.per_image[j], feature_grads.col(j))
        });
        let mut total = self.zero_grads();
        for g in &per_image {
            total.add_assign(g);
        }
        Ok(total)
    }

    /// Standard Adam update with bias correction; increments the step
    /// counter, which also invalidates outstanding forward caches.
    pub fn adam_step(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::param("adam_step", format!("lr = {lr}")));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::dim("adam_step", "gradient layer count".to_string()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("adam_step gradients"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (l, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            if l.w.len() != gw.len() || l.b.len() != gb.len() {
                return Err(Error::dim("adam_step", "gradient shapes".to_string()));
            }
            adam_update(&mut l.w, &mut l.m_w, &mut l.v_w, gw, lr, bc1, bc2);
            adam_update(&mut l.b, &mut l.m_b, &mut l.v_b, gb, lr, bc1, bc2);
        }
        Ok(())
    }

    // ── checkpoint format ────────────────────────────────────────────
    //
    // FNET v1: magic, version, input shape, layer specs, Adam step counter,
    // then flat weight/bias arrays per learned layer. Moment buffers are not
    // persisted; they start at zero after a load.

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_into(&mut w);
        w.buf
    }

    pub(crate) fn write_into(&self, w: &mut ByteWriter) {
        w.bytes(b"FNET");
        w.u32(1);
        let (h, wd, c) = self.spec.input;
        w.u16(h as u16);
        w.u16(wd as u16);
        w.u16(c as u16);
        w.u32(self.spec.layers.len() as u32);
        for layer in &self.spec.layers {
            match layer {
                LayerSpec::Conv3x3 { channels } => {
                    w.u8(0);
                    w.u32(*channels as u32);
                }
                LayerSpec::Relu => {
                    w.u8(1);
                    w.u32(0);
                }
                LayerSpec::MaxPool2 => {
                    w.u8(2);
                    w.u32(0);
                }
                LayerSpec::Flatten => {
                    w.u8(3);
                    w.u32(0);
                }
                LayerSpec::Dense { units } => {
                    w.u8(4);
                    w.u32(*units as u32);
                }
            }
        }
        w.u64(self.step);
        for l in &self.layers {
            w.f64_slice(&l.w);
            w.f64_slice(&l.b);
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatNet> {
        let mut r = ByteReader::new(bytes, "featnet checkpoint");
        let net = Self::read_from(&mut r)?;
        Ok(net)
    }

    pub(crate) fn read_from(r: &mut ByteReader) -> Result<FeatNet> {
        if r.bytes(4)? != b"FNET" {
            return Err(Error::Format {
                what: "featnet checkpoint",
                line: 0,
                detail: "bad magic".to_string(),
            });
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(Error::Format {
                what: "featnet checkpoint",
                line: 0,
                detail: format!("unsupported version {version}"),
            });
        }
        let input = (r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
        let n_layers = r.u32()? as usize;
        let mut layers_spec = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let tag = r.u8()?;
            let arg = r.u32()? as usize;
            layers_spec.push(match tag {
                0 => LayerSpec::Conv3x3 { channels: arg },
                1 => LayerSpec::Relu,
                2 => LayerSpec::MaxPool2,
                3 => LayerSpec::Flatten,
                4 => LayerSpec::Dense { units: arg },
                t => {
                    return Err(Error::Format {
                        what: "featnet checkpoint",
                        line: 0,
                        detail: format!("unknown layer tag {t}"),
                    })
                }
            });
        }
        let spec = NetSpec {
            input,
            layers: layers_spec,
        };
        let shapes = infer_shapes(&spec)?;
        let step = r.u64()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let w = r.f64_vec()?;
            let b = r.f64_vec()?;
            let expected = match (layer, shapes[i]) {
                (LayerSpec::Conv3x3 { channels }, Shape::Spatial(_, _, cin)) => {
                    (9 * cin * channels, *channels)
                }
                (LayerSpec::Dense { units }, Shape::Flat(n)) => (units * n, *units),
                _ => (0, 0),
            };
            if (w.len(), b.len()) != expected {
                return Err(Error::Format {
                    what: "featnet checkpoint",
                    line: 0,
                    detail: format!("layer {i}: parameter arrays have wrong lengths"),
                });
            }
            layers.push(LayerParams::learned(w, b));
        }
        Ok(FeatNet {
            spec,
            shapes,
            layers,
            step,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<FeatNet> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

fn adam_update(
    params: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

// ── layer kernels ───────────────────────────────────────────────────

fn conv3x3_forward(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; h * w * cout];
    for y in 0..h {
        for x in 0..w {
            let out_base = (y * w + x) * cout;
            out[out_base..out_base + cout].copy_from_slice(bias);
            for ky in 0..3usize {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3usize {
                    let ix = x as isize + kx as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_base = (iy as usize * w + ix as usize) * cin;
                    for ci in 0..cin {
                        let v = input[in_base + ci];
                        if v == 0.0 {
                            continue;
                        }
                        let w_base = ((ky * 3 + kx) * cin + ci) * cout;
                        let (o, k) = (
                            &mut out[out_base..out_base + cout],
                            &weights[w_base..w_base + cout],
                        );
                        for (ov, kv) in o.iter_mut().zip(k) {
                            *ov += v * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    weights: &[f64],
    upstream: &[f64],
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; cout];
    let mut gin = vec![0.0; if need_input_grad { h * w * cin } else { 0 }];
    for y in 0..h {
        for x in 0..w {
            let up_base = (y * w + x) * cout;
            let up = &upstream[up_base..up_base + cout];
            for (gbv, u) in gb.iter_mut().zip(up) {
                *gbv += u;
            }
            for ky in 0..3usize {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3usize {
                    let ix = x as isize + kx as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_base = (iy as usize * w + ix as usize) * cin;
                    for ci in 0..cin {
                        let v = input[in_base + ci];
                        let w_base = ((ky * 3 + kx) * cin + ci) * cout;
                        let mut in_grad = 0.0;
                        let (gws, ks) = (
                            &mut gw[w_base..w_base + cout],
                            &weights[w_base..w_base + cout],
                        );
                        for ((gwv, kv), u) in gws.iter_mut().zip(ks).zip(up) {
                            *gwv += v * u;
                            in_grad += kv * u;
                        }
                        if need_input_grad {
                            gin[in_base + ci] += in_grad;
                        }
                    }
                }
            }
        }
    }
    (gw, gb, gin)
}

fn maxpool2_forward(input: &[f64], h: usize, w: usize, c: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    let mut argmax = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let out_idx = (oy * ow + ox) * c + ch;
                out[out_idx] = best;
                argmax[out_idx] = best_idx;
            }
        }
    }
    (out, argmax)
}

fn maxpool2_backward(upstream: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut gin = vec![0.0; input_len];
    for (u, &idx) in upstream.iter().zip(argmax) {
        gin[idx] += u;
    }
    gin
}

fn dense_forward(input: &[f64], n: usize, units: usize, weights: &[f64], bias: &[f64]) -> Vec<f64> {
    debug_assert_eq!(input.len(), n);
    (0..units)
        .map(|o| {
            let row = &weights[o * n..(o + 1) * n];
            bias[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn dense_backward(
    input: &[f64],
    n: usize,
    units: usize,
    weights: &[f64],
    upstream: &[f64],
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; units * n];
    let gb = upstream.to_vec();
    let mut gin = vec![0.0; if need_input_grad { n } else { 0 }];
    for o in 0..units {
        let u = upstream[o];
        if u == 0.0 {
            continue;
        }
        let grow = &mut gw[o * n..(o + 1) * n];
        for (g, x) in grow.iter_mut().zip(input) {
            *g = u * x;
        }
        if need_input_grad {
            let row = &weights[o * n..(o + 1) * n];
            for (gi, kv) in gin.iter_mut().zip(row) {
                *gi += u * kv;
            }
        }
    }
    (gw, gb, gin)
}

// ── softmax cross-entropy head (baseline/pretraining only) ──────────

/// Dense-to-logits layer with a softmax cross-entropy loss, used by the
/// baseline and pretraining modes. Never part of a collaborative model.
#[derive(Debug, Clone)]
pub struct SoftmaxHead {
    pub input_dim: usize,
    pub classes: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
    step: u64,
}

impl SoftmaxHead {
    pub fn new(input_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || classes == 0 {
            return Err(Error::param("SoftmaxHead::new", "empty dimensions"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = (2.0 / input_dim as f64).sqrt();
        let w = (0..classes * input_dim)
            .map(|_| std * sample_normal(&mut rng))
            .collect();
        Ok(SoftmaxHead {
            input_dim,
            classes,
            w,
            b: vec![0.0; classes],
            m_w: vec![0.0; classes * input_dim],
            v_w: vec![0.0; classes * input_dim],
            m_b: vec![0.0; classes],
            v_b: vec![0.0; classes],
            step: 0,
        })
    }

    fn logits(&self, feat: &[f64]) -> Vec<f64> {
        dense_forward(feat, self.input_dim, self.classes, &self.w, &self.b)
    }

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|e| e / sum).collect()
    }

    pub fn predict_batch(&self, feats: &Mat) -> Vec<usize> {
        (0..feats.cols())
            .map(|j| {
                let logits = self.logits(feats.col(j));
                let mut best = 0usize;
                for (i, &v) in logits.iter().enumerate().skip(1) {
                    if v > logits[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Mean cross-entropy over the batch, the head's own gradients, and the
    /// loss gradient w.r.t. the input features (one column per sample).
    pub fn loss_and_grads(&self, feats: &Mat, labels: &[usize]) -> Result<(f64, HeadGrads, Mat)> {
        if feats.rows() != self.input_dim || feats.cols() != labels.len() || labels.is_empty() {
            return Err(Error::dim("SoftmaxHead::loss_and_grads", "batch shapes".to_string()));
        }
        if labels.iter().any(|&l| l >= self.classes) {
            return Err(Error::param("SoftmaxHead::loss_and_grads", "label out of range"));
        }
        let batch = labels.len() as f64;
        let mut gw = vec![0.0; self.w.len()];
        let mut gb = vec![0.0; self.b.len()];
        let mut gfeat = Mat::zeros(self.input_dim, labels.len());
        let mut loss = 0.0;
        for (j, &label) in labels.iter().enumerate() {
            let feat = feats.col(j);
            let mut p = Self::softmax(&self.logits(feat));
            loss -= p[label].max(1e-300).ln();
            p[label] -= 1.0; // dL/dlogits for one sample
            for (o, &dl) in p.iter().enumerate() {
                let dl = dl / batch;
                gb[o] += dl;
                let row = &mut gw[o * self.input_dim..(o + 1) * self.input_dim];
                for (g, x) in row.iter_mut().zip(feat) {
                    *g += dl * x;
                }
                let wrow = &self.w[o * self.input_dim..(o + 1) * self.input_dim];
                let col = gfeat.col_mut(j);
                for (gf, kv) in col.iter_mut().zip(wrow) {
                    *gf += dl * kv;
                }
            }
        }
        Ok((
            loss / batch,
            HeadGrads { w: gw, b: gb },
            gfeat,
        ))
    }

    pub fn adam_step(&mut self, grads: &HeadGrads, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::param("SoftmaxHead::adam_step", format!("lr = {lr}")));
        }
        if grads.w.len() != self.w.len() || grads.b.len() != self.b.len() {
            return Err(Error::dim("SoftmaxHead::adam_step", "gradient shapes".to_string()));
        }
        if grads.w.iter().chain(&grads.b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SoftmaxHead::adam_step gradients"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        adam_update(&mut self.w, &mut self.m_w, &mut self.v_w, &grads.w, lr, bc1, bc2);
        adam_update(&mut self.b, &mut self.m_b, &mut self.v_b, &grads.b, lr, bc1, bc2);
        Ok(())
    }

    pub(crate) fn write_into(&self, w: &mut ByteWriter) {
        w.bytes(b"HEAD");
        w.u32(self.input_dim as u32);
        w.u32(self.classes as u32);
        w.f64_slice(&self.w);
        w.f64_slice(&self.b);
    }

    pub(crate) fn read_from(r: &mut ByteReader) -> Result<SoftmaxHead> {
        if r.bytes(4)? != b"HEAD" {
            return Err(Error::Format {
                what: "head checkpoint",
                line: 0,
                detail: "bad magic".to_string(),
            });
        }
        let input_dim = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let w = r.f64_vec()?;
        let b = r.f64_vec()?;
        if w.len() != input_dim * classes || b.len() != classes {
            return Err(Error::Format {
                what: "head checkpoint",
                line: 0,
                detail: "parameter arrays have wrong lengths".to_string(),
            });
        }
        Ok(SoftmaxHead {
            input_dim,
            classes,
            m_w: vec![0.0; w.len()],
            v_w: vec![0.0; w.len()],
            m_b: vec![0.0; b.len()],
            v_b: vec![0.0; b.len()],
            w,
            b,
            step: 0,
        })
    }
}

/// Gradients for the softmax head.
pub struct HeadGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}
