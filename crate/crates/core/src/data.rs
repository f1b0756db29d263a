//! Dataset handling: synthetic fine-grained image generation, the manifest +
//! raw-image on-disk format, stratified k-fold splits, accuracy reports, and
//! the exact binomial significance statistics.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

// ── images and labeled sets ─────────────────────────────────────────

/// H×W×C image with values in [0,1], stored row-major as (y, x, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Image {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f64) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    /// Snap every value to the nearest 1/255 step (the on-disk precision).
    pub fn quantize(&mut self) {
        for v in self.data.iter_mut() {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    /// Bilinear resize to a square target; identity when sizes match.
    pub fn resize(&self, size: usize) -> Image {
        if self.h == size && self.w == size {
            return self.clone();
        }
        let mut out = Image::zeros(size, size, self.c);
        let sy = self.h as f64 / size as f64;
        let sx = self.w as f64 / size as f64;
        for y in 0..size {
            for x in 0..size {
                let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f64);
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.w - 1) as f64);
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(self.h - 1), (x0 + 1).min(self.w - 1));
                let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
                for ch in 0..self.c {
                    let v = self.get(y0, x0, ch) * (1.0 - dy) * (1.0 - dx)
                        + self.get(y0, x1, ch) * (1.0 - dy) * dx
                        + self.get(y1, x0, ch) * dy * (1.0 - dx)
                        + self.get(y1, x1, ch) * dy * dx;
                    out.set(y, x, ch, v);
                }
            }
        }
        out
    }
}

/// Labeled image collection with uniform dimensions.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledImageSet {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::param("LabeledImageSet::new", "no samples"));
        }
        if images.len() != labels.len() {
            return Err(Error::dim("LabeledImageSet::new", "labels vs images".to_string()));
        }
        let (h, w, c) = (images[0].h, images[0].w, images[0].c);
        if images.iter().any(|i| (i.h, i.w, i.c) != (h, w, c)) {
            return Err(Error::dim("LabeledImageSet::new", "non-uniform dimensions".to_string()));
        }
        if labels.iter().any(|&l| l >= class_names.len()) {
            return Err(Error::param("LabeledImageSet::new", "label out of range"));
        }
        Ok(LabeledImageSet {
            images,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_classes()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledImageSet {
        LabeledImageSet {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn resized(&self, size: usize) -> LabeledImageSet {
        LabeledImageSet {
            images: self.images.iter().map(|i| i.resize(size)).collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Plain feature columns with labels, for dictionary-only experiments.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub features: Mat,
    pub labels: Vec<usize>,
}

/// What a manifest points at: raw images or a pure feature table.
#[derive(Debug, Clone)]
pub enum LoadedData {
    Images(LabeledImageSet),
    Features(FeatureSet),
}

// ── synthetic fine-grained generator ────────────────────────────────

/// Configuration for [`synth_finegrained`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    /// Number of shared background textures.
    pub backgrounds: usize,
    /// Blend strength of the class glyph; 0 makes classes indistinguishable.
    pub glyph_contrast: f64,
    /// Maximum absolute glyph position jitter in pixels.
    pub jitter: usize,
    pub long_tail: bool,
    /// Geometric class-size decay used when `long_tail` is set.
    pub decay: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 8,
            per_class: 100,
            image_size: 32,
            backgrounds: 6,
            glyph_contrast: 0.35,
            jitter: 3,
            long_tail: false,
            decay: 0.7,
            seed: 42,
        }
    }
}

struct Texture {
    weights: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
    phase: Vec<f64>,
    channel_shift: Vec<f64>,
    base: f64,
}

impl Texture {
    fn sample(&self, x: f64, y: f64, ch: usize) -> f64 {
        let mut v = self.base;
        for i in 0..self.weights.len() {
            v += self.weights[i]
                * (self.fx[i] * x + self.fy[i] * y + self.phase[i]
                    + ch as f64 * self.channel_shift[i])
                    .cos();
        }
        v
    }
}

/// Brightness of glyph ink; backgrounds are generated strictly brighter.
const GLYPH_INK: f64 = 0.05;

fn make_texture(rng: &mut ChaCha8Rng, image_size: usize) -> Texture {
    let comps = 4;
    let tau = std::f64::consts::TAU;
    let mut weights = Vec::with_capacity(comps);
    let mut fx = Vec::with_capacity(comps);
    let mut fy = Vec::with_capacity(comps);
    let mut phase = Vec::with_capacity(comps);
    let mut channel_shift = Vec::with_capacity(comps);
    for _ in 0..comps {
        weights.push(rng.gen_range(0.02..0.06));
        fx.push(rng.gen_range(1..5) as f64 * tau / image_size as f64);
        fy.push(rng.gen_range(1..5) as f64 * tau / image_size as f64);
        phase.push(rng.gen_range(0.0..tau));
        channel_shift.push(rng.gen_range(0.0..1.2));
    }
    Texture {
        weights,
        fx,
        fy,
        phase,
        channel_shift,
        base: rng.gen_range(0.45..0.62),
    }
}

/// Per-class glyph masks: a shared base pattern with a few class-specific
/// cell flips, so inter-class differences stay subtle next to the background
/// variation. Flip cells are sampled without replacement and duplicate masks
/// are perturbed, so every pair of classes differs in at least one cell.
fn make_glyphs(rng: &mut ChaCha8Rng, classes: usize, side: usize) -> Vec<Vec<bool>> {
    let cells = side * side;
    let base: Vec<bool> = (0..cells).map(|_| rng.gen_bool(0.45)).collect();
    let flips = (cells / 5).max(3).min(cells);
    let mut glyphs: Vec<Vec<bool>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut order: Vec<usize> = (0..cells).collect();
        for i in (1..cells).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut g = base.clone();
        for &idx in order.iter().take(flips) {
            g[idx] = !g[idx];
        }
        let mut bump = 0usize;
        while glyphs.iter().any(|other| *other == g) {
            g[bump % cells] = !g[bump % cells];
            bump += 1;
        }
        glyphs.push(g);
    }
    glyphs
}

/// Class sizes, geometrically decaying when `long_tail` is set.
pub fn synth_class_sizes(cfg: &SynthConfig) -> Vec<usize> {
    (0..cfg.classes)
        .map(|i| {
            if cfg.long_tail {
                ((cfg.per_class as f64 * cfg.decay.powi(i as i32)).round() as usize).max(1)
            } else {
                cfg.per_class
            }
        })
        .collect()
}

/// Deterministic generator state shared by the sampler and by ground-truth
/// oracles: glyph side, background textures, and per-class glyph masks.
fn synth_setup(cfg: &SynthConfig) -> Result<(usize, Vec<Texture>, Vec<Vec<bool>>, ChaCha8Rng)> {
    if cfg.classes < 2 {
        return Err(Error::param("synth_finegrained", "need at least 2 classes"));
    }
    if cfg.backgrounds == 0 || cfg.per_class == 0 {
        return Err(Error::param("synth_finegrained", "backgrounds and per_class must be >= 1"));
    }
    let s = cfg.image_size;
    let glyph_side = (s / 4).max(3);
    if glyph_side > s {
        return Err(Error::param(
            "synth_finegrained",
            format!("glyph side {glyph_side} exceeds image size {s}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let textures: Vec<Texture> = (0..cfg.backgrounds).map(|_| make_texture(&mut rng, s)).collect();
    let glyphs = make_glyphs(&mut rng, cfg.classes, glyph_side);
    Ok((glyph_side, textures, glyphs, rng))
}

/// Generate a synthetic fine-grained dataset: every image is a randomized
/// shared background texture plus one small, low-contrast, position-jittered
/// class glyph.
pub fn synth_finegrained(cfg: &SynthConfig) -> Result<LabeledImageSet> {
    let (glyph_side, textures, glyphs, mut rng) = synth_setup(cfg)?;
    let s = cfg.image_size;
    let sizes = synth_class_sizes(cfg);

    let channels = 3usize;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let margin = s - glyph_side;
    let center = margin / 2;

    for (class, &count) in sizes.iter().enumerate() {
        for _ in 0..count {
            let tex = &textures[rng.gen_range(0..cfg.backgrounds)];
            let (ox, oy) = (rng.gen_range(0.0..s as f64), rng.gen_range(0.0..s as f64));
            let jx = if cfg.jitter > 0 {
                rng.gen_range(-(cfg.jitter as isize)..=cfg.jitter as isize)
            } else {
                0
            };
            let jy = if cfg.jitter > 0 {
                rng.gen_range(-(cfg.jitter as isize)..=cfg.jitter as isize)
            } else {
                0
            };
            let gx = (center as isize + jx).clamp(0, margin as isize) as usize;
            let gy = (center as isize + jy).clamp(0, margin as isize) as usize;

            let mut img = Image::zeros(s, s, channels);
            for y in 0..s {
                for x in 0..s {
                    for ch in 0..channels {
                        let noise = rng.gen_range(-0.03..0.03);
                        let v = tex.sample(x as f64 + ox, y as f64 + oy, ch) + noise;
                        img.set(y, x, ch, v);
                    }
                }
            }
            let glyph = &glyphs[class];
            for gy_i in 0..glyph_side {
                for gx_i in 0..glyph_side {
                    if !glyph[gy_i * glyph_side + gx_i] {
                        continue;
                    }
                    let (y, x) = (gy + gy_i, gx + gx_i);
                    for ch in 0..channels {
                        let bg = img.get(y, x, ch);
                        img.set(y, x, ch, bg + cfg.glyph_contrast * (GLYPH_INK - bg));
                    }
                }
            }
            img.quantize();
            images.push(img);
            labels.push(class);
        }
    }

    let class_names = (0..cfg.classes).map(|i| format!("class_{i}")).collect();
    LabeledImageSet::new(images, labels, class_names)
}

// ── on-disk formats ─────────────────────────────────────────────────

const IMAGE_MAGIC: &[u8; 4] = b"CIMG";

fn write_image(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = Vec::with_capacity(10 + img.data.len());
    bytes.extend_from_slice(IMAGE_MAGIC);
    bytes.extend_from_slice(&(img.h as u16).to_le_bytes());
    bytes.extend_from_slice(&(img.w as u16).to_le_bytes());
    bytes.extend_from_slice(&(img.c as u16).to_le_bytes());
    for &v in &img.data {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_image(path: &Path) -> Result<Image> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 10 || &bytes[0..4] != IMAGE_MAGIC {
        return Err(Error::Format {
            what: "image file",
            line: 0,
            detail: format!("{}: bad magic or truncated header", path.display()),
        });
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let c = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let expected = h * w * c;
    if bytes.len() != 10 + expected {
        return Err(Error::Format {
            what: "image file",
            line: 0,
            detail: format!(
                "{}: payload {} bytes, header implies {}",
                path.display(),
                bytes.len() - 10,
                expected
            ),
        });
    }
    let data = bytes[10..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Image { h, w, c, data })
}

/// Write a dataset under `dir`: `manifest.csv` (`relative_path,label`),
/// `classes.txt`, and raw images under `images/`.
pub fn save_dataset(set: &LabeledImageSet, dir: &Path) -> Result<PathBuf> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(images_dir.display().to_string(), e))?;

    let mut manifest = String::from("relative_path,label\n");
    for (i, img) in set.images.iter().enumerate() {
        let rel = format!("images/img_{i:05}.cimg");
        write_image(&dir.join(&rel), img)?;
        manifest.push_str(&format!("{rel},{}\n", set.labels[i]));
    }
    let manifest_path = dir.join("manifest.csv");
    fs::write(&manifest_path, manifest)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;

    let classes_path = dir.join("classes.txt");
    let mut f = fs::File::create(&classes_path)
        .map_err(|e| Error::io(classes_path.display().to_string(), e))?;
    for name in &set.class_names {
        writeln!(f, "{name}").map_err(|e| Error::io(classes_path.display().to_string(), e))?;
    }
    Ok(manifest_path)
}

fn format_err(what: &'static str, line: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        what,
        line,
        detail: detail.into(),
    }
}

/// Load a dataset from a manifest. The header decides the flavour:
/// `relative_path,label` for raw images, `label,f1..fd` for a pure feature
/// table.
pub fn load_dataset(manifest_path: &Path) -> Result<LoadedData> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err("manifest", 1, "empty file"))?;

    if header.trim() == "relative_path,label" {
        load_image_manifest(manifest_path, lines)
    } else if header.starts_with("label,") {
        load_feature_csv(header, lines)
    } else {
        Err(format_err(
            "manifest",
            1,
            format!("unrecognized header '{header}'"),
        ))
    }
}

fn load_image_manifest<'a>(
    manifest_path: &Path,
    lines: impl Iterator<Item = (usize, &'a str)>,
) -> Result<LoadedData> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (rel, label_str) = line
            .rsplit_once(',')
            .ok_or_else(|| format_err("manifest", line_no, "expected 'relative_path,label'"))?;
        let label: usize = label_str
            .trim()
            .parse()
            .map_err(|_| format_err("manifest", line_no, format!("bad label '{label_str}'")))?;
        let img = read_image(&base.join(rel))?;
        if let Some(first) = images.first() {
            let f: &Image = first;
            if (img.h, img.w, img.c) != (f.h, f.w, f.c) {
                return Err(format_err(
                    "manifest",
                    line_no,
                    format!(
                        "image dims {}x{}x{} differ from first image {}x{}x{}",
                        img.h, img.w, img.c, f.h, f.w, f.c
                    ),
                ));
            }
        }
        images.push(img);
        labels.push(label);
    }
    if images.is_empty() {
        return Err(format_err("manifest", 1, "no samples"));
    }

    let classes_path = base.join("classes.txt");
    let num_classes = labels.iter().max().unwrap() + 1;
    let class_names: Vec<String> = if classes_path.exists() {
        let names: Vec<String> = fs::read_to_string(&classes_path)
            .map_err(|e| Error::io(classes_path.display().to_string(), e))?
            .lines()
            .map(|s| s.to_string())
            .collect();
        if let Some((line_idx, &bad)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= names.len())
            .map(|(i, l)| (i, l))
        {
            return Err(format_err(
                "manifest",
                line_idx + 2,
                format!("unknown label {bad} (classes.txt defines {})", names.len()),
            ));
        }
        names
    } else {
        (0..num_classes).map(|i| format!("class_{i}")).collect()
    };

    Ok(LoadedData::Images(LabeledImageSet::new(
        images,
        labels,
        class_names,
    )?))
}

fn load_feature_csv<'a>(
    header: &str,
    lines: impl Iterator<Item = (usize, &'a str)>,
) -> Result<LoadedData> {
    let dim = header.split(',').count() - 1;
    if dim == 0 {
        return Err(format_err("feature csv", 1, "no feature columns"));
    }
    let mut labels = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let label_str = parts.next().unwrap();
        let label: usize = label_str
            .trim()
            .parse()
            .map_err(|_| format_err("feature csv", line_no, format!("bad label '{label_str}'")))?;
        let values: Vec<f64> = parts
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| format_err("feature csv", line_no, format!("bad value '{p}'")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(format_err(
                "feature csv",
                line_no,
                format!("{} values, header has {dim}", values.len()),
            ));
        }
        labels.push(label);
        columns.push(values);
    }
    if labels.is_empty() {
        return Err(format_err("feature csv", 1, "no samples"));
    }
    let mut features = Mat::zeros(dim, labels.len());
    for (j, col) in columns.iter().enumerate() {
        features.set_col(j, col);
    }
    Ok(LoadedData::Features(FeatureSet { features, labels }))
}

// ── stratified k-fold ───────────────────────────────────────────────

/// Stratified k-fold indices: folds partition `0..labels.len()`, per-class
/// counts per fold differ by at most one, deterministic for a fixed seed.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::param("stratified_kfold", "k must be >= 1"));
    }
    if labels.is_empty() {
        return Err(Error::param("stratified_kfold", "no samples"));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    for (class, indices) in per_class.iter().enumerate() {
        if indices.len() < k {
            return Err(Error::param(
                "stratified_kfold",
                format!("class {class} has {} samples, fewer than k = {k}", indices.len()),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next_fold = 0usize;
    for indices in per_class.iter_mut() {
        // Fisher-Yates with the shared stream
        for i in (1..indices.len()).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        for &idx in indices.iter() {
            folds[next_fold].push(idx);
            next_fold = (next_fold + 1) % k;
        }
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    Ok(folds)
}

// ── exact binomial statistics ───────────────────────────────────────

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut lf = vec![0.0; n + 1];
    for i in 1..=n {
        lf[i] = lf[i - 1] + (i as f64).ln();
    }
    lf
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn validate_binomial(op: &'static str, successes: usize, trials: usize, null_p: f64) -> Result<()> {
    if successes > trials {
        return Err(Error::param(
            op,
            format!("successes {successes} exceed trials {trials}"),
        ));
    }
    if !(null_p > 0.0 && null_p < 1.0) {
        return Err(Error::param(op, format!("null_p = {null_p}")));
    }
    Ok(())
}

fn binomial_log_terms(trials: usize, null_p: f64, range: std::ops::RangeInclusive<usize>) -> Vec<f64> {
    let lf = ln_factorials(trials);
    let (lp, lq) = (null_p.ln(), (1.0 - null_p).ln());
    range
        .map(|k| lf[trials] - lf[k] - lf[trials - k] + k as f64 * lp + (trials - k) as f64 * lq)
        .collect()
}

/// Exact one-tail probability `P[X ≥ successes]` for
/// `X ~ Binomial(trials, null_p)`, computed in log space.
pub fn binomial_sign_test(successes: usize, trials: usize, null_p: f64) -> Result<f64> {
    validate_binomial("binomial_sign_test", successes, trials, null_p)?;
    if successes == 0 {
        return Ok(1.0);
    }
    let terms = binomial_log_terms(trials, null_p, successes..=trials);
    Ok(log_sum_exp(&terms).exp())
}

/// Complementary lower tail `P[X < successes]`.
pub fn binomial_sign_test_strictly_less(successes: usize, trials: usize, null_p: f64) -> Result<f64> {
    validate_binomial("binomial_sign_test_strictly_less", successes, trials, null_p)?;
    if successes == 0 {
        return Ok(0.0);
    }
    let terms = binomial_log_terms(trials, null_p, 0..=successes - 1);
    Ok(log_sum_exp(&terms).exp())
}

/// Bonferroni-adjusted significance level: `alpha / comparisons`.
pub fn bonferroni(alpha: f64, comparisons: usize) -> Result<f64> {
    if comparisons == 0 {
        return Err(Error::param("bonferroni", "comparisons must be >= 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("bonferroni", format!("alpha = {alpha}")));
    }
    Ok(alpha / comparisons as f64)
}

// ── accuracy reports ────────────────────────────────────────────────

/// Per-fold accuracies with their mean ± sample standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub config_hash: String,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<EvalReport> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            what: "eval report",
            line: 0,
            detail: e.to_string(),
        })
    }
}

/// `100 · correct / total`.
pub fn accuracy_percent(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != actual.len() {
        return Err(Error::param("accuracy_percent", "empty or mismatched label sets"));
    }
    let correct = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(100.0 * correct as f64 / actual.len() as f64)
}

/// Aggregate per-fold accuracies into a report (sample standard deviation,
/// n−1 denominator).
pub fn aggregate(fold_accuracies: &[f64], config_hash: impl Into<String>) -> Result<EvalReport> {
    if fold_accuracies.is_empty() {
        return Err(Error::param("aggregate", "no folds"));
    }
    if fold_accuracies.iter().any(|&a| !(0.0..=100.0).contains(&a)) {
        return Err(Error::param("aggregate", "accuracy outside 0..=100"));
    }
    let n = fold_accuracies.len() as f64;
    let mean = fold_accuracies.iter().sum::<f64>() / n;
    let std = if fold_accuracies.len() > 1 {
        (fold_accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(EvalReport {
        folds: fold_accuracies.to_vec(),
        mean,
        std,
        config_hash: config_hash.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn synth_shapes_and_determinism() {
        let cfg = SynthConfig {
            classes: 3,
            per_class: 4,
            image_size: 16,
            ..Default::default()
        };
        let a = synth_finegrained(&cfg).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a.images[0].h, 16);
        assert_eq!(a.images[0].c, 3);
        let b = synth_finegrained(&cfg).unwrap();
        assert_eq!(a.images[5].data, b.images[5].data, "same seed, same pixels");
        let c = synth_finegrained(&SynthConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.images[5].data, c.images[5].data, "different seed differs");
    }

    #[test]
    fn synth_long_tail_sizes_decay() {
        let cfg = SynthConfig {
            classes: 5,
            per_class: 64,
            long_tail: true,
            decay: 0.7,
            ..Default::default()
        };
        let sizes = synth_class_sizes(&cfg);
        for w in sizes.windows(2) {
            assert!(w[0] >= w[1], "sizes must be descending");
        }
        for (i, &s) in sizes.iter().enumerate() {
            let expect = 64.0 * 0.7f64.powi(i as i32);
            assert!((s as f64 - expect).abs() <= 0.5 + 1e-9);
        }
        let set = synth_finegrained(&cfg).unwrap();
        assert_eq!(set.class_sizes(), sizes);
    }

    /// Nearest-mean-template classifier: an independent oracle built only
    /// from the generated data.
    fn template_accuracy(train: &LabeledImageSet, test: &LabeledImageSet) -> f64 {
        let classes = train.num_classes();
        let dim = train.images[0].data.len();
        let mut templates = vec![vec![0.0f64; dim]; classes];
        let mut counts = vec![0usize; classes];
        for (img, &l) in train.images.iter().zip(&train.labels) {
            counts[l] += 1;
            for (t, v) in templates[l].iter_mut().zip(&img.data) {
                *t += v;
            }
        }
        for (t, &c) in templates.iter_mut().zip(&counts) {
            for v in t.iter_mut() {
                *v /= c as f64;
            }
        }
        let mut correct = 0usize;
        for (img, &l) in test.images.iter().zip(&test.labels) {
            let mut best = (f64::INFINITY, 0usize);
            for (k, t) in templates.iter().enumerate() {
                let d2: f64 = t.iter().zip(&img.data).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.0 {
                    best = (d2, k);
                }
            }
            if best.1 == l {
                correct += 1;
            }
        }
        correct as f64 / test.len() as f64
    }

    fn split_even_odd(set: &LabeledImageSet) -> (LabeledImageSet, LabeledImageSet) {
        let train: Vec<usize> = (0..set.len()).filter(|i| i % 2 == 0).collect();
        let test: Vec<usize> = (0..set.len()).filter(|i| i % 2 == 1).collect();
        (set.subset(&train), set.subset(&test))
    }

    #[test]
    fn synth_high_contrast_no_jitter_is_template_separable() {
        let cfg = SynthConfig {
            classes: 4,
            per_class: 20,
            image_size: 24,
            glyph_contrast: 0.95,
            jitter: 0,
            seed: 7,
            ..Default::default()
        };
        let set = synth_finegrained(&cfg).unwrap();
        // cross-correlation oracle against the ground-truth glyph templates,
        // rendered at the fixed (jitter-free) window position
        let (side, _tex, glyphs, _rng) = synth_setup(&cfg).unwrap();
        let s = cfg.image_size;
        let offset = (s - side) / 2;
        let mut correct = 0usize;
        for (img, &label) in set.images.iter().zip(&set.labels) {
            // per-image background reference from pixels outside the window
            let mut bg_sum = 0.0;
            let mut bg_count = 0usize;
            for y in 0..s {
                for x in 0..s {
                    let inside = (offset..offset + side).contains(&y)
                        && (offset..offset + side).contains(&x);
                    if !inside {
                        bg_sum += img.get(y, x, 0);
                        bg_count += 1;
                    }
                }
            }
            let bg_ref = bg_sum / bg_count as f64;
            let mut best = (f64::INFINITY, 0usize);
            for (k, glyph) in glyphs.iter().enumerate() {
                let mut score = 0.0;
                for gy in 0..side {
                    for gx in 0..side {
                        let target = if glyph[gy * side + gx] { GLYPH_INK } else { bg_ref };
                        for ch in 0..img.c {
                            let p = img.get(offset + gy, offset + gx, ch);
                            score += (p - target) * (p - target);
                        }
                    }
                }
                if score < best.0 {
                    best = (score, k);
                }
            }
            if best.1 == label {
                correct += 1;
            }
        }
        assert_eq!(correct, set.len(), "template oracle must reach 100%");
    }

    #[test]
    fn synth_zero_contrast_is_chance_level() {
        let cfg = SynthConfig {
            classes: 4,
            per_class: 40,
            image_size: 24,
            glyph_contrast: 0.0,
            seed: 19,
            ..Default::default()
        };
        let set = synth_finegrained(&cfg).unwrap();
        let (train, test) = split_even_odd(&set);
        let acc = template_accuracy(&train, &test);
        // chance is 0.25 for 4 classes; allow a generous binomial band
        assert!(acc < 0.45, "contrast 0 should be indiscriminable, got {acc}");
    }

    #[test]
    fn dataset_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            classes: 2,
            per_class: 3,
            image_size: 8,
            ..Default::default()
        };
        let set = synth_finegrained(&cfg).unwrap();
        let manifest = save_dataset(&set, dir.path()).unwrap();
        let loaded = match load_dataset(&manifest).unwrap() {
            LoadedData::Images(s) => s,
            _ => panic!("expected images"),
        };
        assert_eq!(loaded.labels, set.labels);
        assert_eq!(loaded.class_names, set.class_names);
        for (a, b) in loaded.images.iter().zip(&set.images) {
            assert_eq!(a.data, b.data, "pixels must round-trip bit-identically");
        }
        // saving the loaded copy reproduces identical files
        let dir2 = tempfile::tempdir().unwrap();
        save_dataset(&loaded, dir2.path()).unwrap();
        let f1 = fs::read(dir.path().join("images/img_00000.cimg")).unwrap();
        let f2 = fs::read(dir2.path().join("images/img_00000.cimg")).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.csv");
        fs::write(&manifest, "relative_path,label\n").unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert!(err.to_string().contains("no samples"), "{err}");

        fs::write(&manifest, "relative_path,label\nimages/x.cimg,banana\n").unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn feature_csv_loads_dictionary_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let mut text = String::from("label,f1,f2,f3,f4\n");
        for i in 0..6 {
            text.push_str(&format!("{},{},{},{},{}\n", i % 2, i, i + 1, i + 2, i + 3));
        }
        fs::write(&path, text).unwrap();
        let fs = match load_dataset(&path).unwrap() {
            LoadedData::Features(f) => f,
            _ => panic!("expected features"),
        };
        assert_eq!(fs.features.rows(), 4);
        assert_eq!(fs.features.cols(), 6);
        assert_eq!(fs.labels, vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn kfold_balanced_counts() {
        let labels: Vec<usize> = (0..500).map(|i| i / 100).collect(); // 5 classes × 100
        let folds = stratified_kfold(&labels, 5, 42).unwrap();
        for fold in &folds {
            assert_eq!(fold.len(), 100);
            for class in 0..5 {
                let count = fold.iter().filter(|&&i| labels[i] == class).count();
                assert_eq!(count, 20, "20 per class per fold");
            }
        }
    }

    #[test]
    fn kfold_single_fold_is_whole_set() {
        let labels = vec![0, 1, 0, 1, 2];
        let folds = stratified_kfold(&labels, 1, 1).unwrap();
        assert_eq!(folds.len(), 1);
        assert_eq!(folds[0], vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn kfold_deterministic_and_rejects_small_classes() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let a = stratified_kfold(&labels, 5, 9).unwrap();
        let b = stratified_kfold(&labels, 5, 9).unwrap();
        assert_eq!(a, b);
        assert!(stratified_kfold(&[0, 0, 1], 2, 0).is_err());
    }

    /// Exact oracle with integer binomial coefficients (p = 1/2 only).
    fn exact_half_tail(successes: usize, trials: usize) -> f64 {
        let mut num = 0u128;
        for k in successes..=trials {
            let mut c = 1u128;
            for i in 0..k {
                c = c * (trials - i) as u128 / (i + 1) as u128;
            }
            num += c;
        }
        num as f64 / 2f64.powi(trials as i32)
    }

    #[test]
    fn binomial_matches_exact_integer_oracle() {
        for &(s, n) in &[(33usize, 45usize), (20, 45), (10, 20), (45, 45)] {
            let got = binomial_sign_test(s, n, 0.5).unwrap();
            let want = exact_half_tail(s, n);
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn binomial_paper_value() {
        let p = binomial_sign_test(33, 45, 0.5).unwrap();
        assert!((p - 0.0012).abs() <= 0.0003, "one-tail p = {p}");
    }

    #[test]
    fn binomial_edge_cases() {
        assert_eq!(binomial_sign_test(0, 45, 0.5).unwrap(), 1.0);
        let p = binomial_sign_test(45, 45, 0.5).unwrap();
        assert_relative_eq!(p, 2f64.powi(-45), max_relative = 1e-12);
        assert!(binomial_sign_test(46, 45, 0.5).is_err());
        assert!(binomial_sign_test(1, 45, 0.0).is_err());
    }

    #[test]
    fn binomial_tails_are_consistent() {
        for s in 0..=45usize {
            let upper = binomial_sign_test(s, 45, 0.5).unwrap();
            let lower = binomial_sign_test_strictly_less(s, 45, 0.5).unwrap();
            assert!(
                (upper + lower - 1.0).abs() < 1e-12,
                "tails at s={s} sum to {}",
                upper + lower
            );
        }
    }

    #[test]
    fn bonferroni_values() {
        assert!((bonferroni(0.05, 9).unwrap() - 0.0055555555).abs() < 1e-6);
        assert_eq!(bonferroni(0.05, 1).unwrap(), 0.05);
        assert_eq!(bonferroni(0.01, 2).unwrap(), 0.005);
        assert!(bonferroni(0.05, 0).is_err());
    }

    #[test]
    fn report_aggregation() {
        assert_eq!(accuracy_percent(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        let report = aggregate(&[50.0, 60.0, 70.0], "abc").unwrap();
        assert_relative_eq!(report.mean, 60.0);
        assert_relative_eq!(report.std, 10.0);
        assert_eq!(report.folds.len(), 3);
        assert!(aggregate(&[], "x").is_err());
        assert!(accuracy_percent(&[], &[]).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut img = Image::zeros(4, 4, 2);
        for v in img.data.iter_mut() {
            *v = 0.5;
        }
        let same = img.resize(4);
        assert_eq!(same.data, img.data);
        let up = img.resize(8);
        assert!(up.data.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    mod properties {
        use super::{binomial_sign_test, binomial_sign_test_strictly_less, stratified_kfold};
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn kfold_partitions_index_set(
                sizes in prop::collection::vec(3usize..12, 2..5),
                k in 2usize..4,
                seed in 0u64..100,
            ) {
                prop_assume!(sizes.iter().all(|&s| s >= k));
                let mut labels = Vec::new();
                for (class, &s) in sizes.iter().enumerate() {
                    labels.extend(std::iter::repeat(class).take(s));
                }
                let folds = stratified_kfold(&labels, k, seed).unwrap();
                let mut seen = vec![false; labels.len()];
                for fold in &folds {
                    for &i in fold {
                        prop_assert!(!seen[i], "index {i} appears twice");
                        seen[i] = true;
                    }
                }
                prop_assert!(seen.iter().all(|&b| b), "folds must cover every index");
                for class in 0..sizes.len() {
                    let counts: Vec<usize> = folds
                        .iter()
                        .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
                        .collect();
                    let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                    prop_assert!(max - min <= 1, "class {class} counts {counts:?}");
                }
            }

            #[test]
            fn binomial_tail_consistency(s in 0usize..30, extra in 0usize..30) {
                let n = s + extra;
                prop_assume!(n >= 1);
                let upper = binomial_sign_test(s, n, 0.5).unwrap();
                let lower = binomial_sign_test_strictly_less(s, n, 0.5).unwrap();
                prop_assert!((upper + lower - 1.0).abs() < 1e-12);
            }
        }
    }
}
