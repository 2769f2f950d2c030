use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::INPUT_CHANNELS;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    /// `3×H×W`.
    pub image: Tensor<T>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
    pub classes: usize,
    pub tag: String,
}

/// Per-channel affine standardization `(v − mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Random-crop offsets and flip for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augment {
    pub pad: usize,
    pub dx: usize,
    pub dy: usize,
    pub flip: bool,
}

pub const CROP_PAD: usize = 4;

impl<T: Real> Dataset<T> {
    pub fn new(samples: Vec<Sample<T>>, classes: usize, tag: impl Into<String>) -> Result<Self> {
        let shape = samples.first().map(|s| s.image.shape().to_vec());
        for (i, s) in samples.iter().enumerate() {
            if s.label >= classes {
                return Err(Error::Data(format!("sample {i}: label {} outside 0..{classes}", s.label)));
            }
            if Some(s.image.shape()) != shape.as_deref() || s.image.ndim() != 3 || s.image.shape()[0] != INPUT_CHANNELS {
                return Err(Error::Data(format!("sample {i}: image shape {:?} differs from {:?}", s.image.shape(), shape)));
            }
        }
        Ok(Dataset { samples, classes, tag: tag.into() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(H, W)` shared by all images.
    pub fn image_hw(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.image.shape()[1], s.image.shape()[2]))
    }

    /// Stacks the selected samples into `N×3×H×W`, optionally augmenting each.
    pub fn batch(&self, indices: &[usize], augment: Option<&[Augment]>) -> Result<(Tensor<T>, Vec<usize>)> {
        let (h, w) = self.image_hw().ok_or_else(|| Error::Data("empty dataset".into()))?;
        let per = INPUT_CHANNELS * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for (j, &i) in indices.iter().enumerate() {
            let s = self.samples.get(i).ok_or_else(|| Error::Data(format!("sample index {i} out of range")))?;
            match augment.map(|a| a[j]) {
                Some(a) => data.extend(augmented(&s.image, a)),
                None => data.extend_from_slice(s.image.data()),
            }
            labels.push(s.label);
        }
        Ok((Tensor::new(vec![indices.len(), INPUT_CHANNELS, h, w], data)?, labels))
    }

    pub fn normalization(&self) -> Result<Normalization> {
        if self.is_empty() {
            return Err(Error::Data("cannot standardize an empty dataset".into()));
        }
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for s in &self.samples {
            let plane = s.image.len() / INPUT_CHANNELS;
            for c in 0..INPUT_CHANNELS {
                for &v in &s.image.data()[c * plane..][..plane] {
                    let v = v.to_f64().unwrap();
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += plane;
        }
        let n = count as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [0.0; 3];
        for c in 0..3 {
            let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
            std[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(Normalization { mean, std })
    }

    pub fn standardize_with(&mut self, norm: &Normalization) {
        for s in &mut self.samples {
            let plane = s.image.len() / INPUT_CHANNELS;
            let data = s.image.data_mut();
            for c in 0..INPUT_CHANNELS {
                let (m, sd) = (T::lit(norm.mean[c]), T::lit(norm.std[c]));
                for v in &mut data[c * plane..][..plane] {
                    *v = (*v - m) / sd;
                }
            }
        }
    }

    /// Standardizes with this dataset's own channel statistics and returns them.
    pub fn standardize(&mut self) -> Result<Normalization> {
        let norm = self.normalization()?;
        self.standardize_with(&norm);
        Ok(norm)
    }

    /// Deterministic shuffled split; the second part holds `test_fraction` of the samples.
    pub fn split(self, test_fraction: f64, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let mut samples: Vec<Option<Sample<T>>> = self.samples.into_iter().map(Some).collect();
        let mut take = |idx: &[usize]| idx.iter().map(|&i| samples[i].take().expect("each index once")).collect::<Vec<_>>();
        let test = take(&order[..n_test]);
        let train = take(&order[n_test..]);
        Ok((Dataset::new(train, self.classes, "train")?, Dataset::new(test, self.classes, "test")?))
    }
}

/// Zero-pads by `pad`, crops back to the original size at `(dx, dy)` and optionally mirrors.
pub fn augmented<T: Real>(image: &Tensor<T>, a: Augment) -> Vec<T> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + a.dy) as isize - a.pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + a.dx) as isize - a.pad as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let ox = if a.flip { w - 1 - x } else { x };
                out[(ch * h + y) * w + ox] = image.data()[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

pub fn random_augment(rng: &mut impl Rng, crop: bool, flip: bool) -> Augment {
    let (dx, dy) = if crop { (rng.random_range(0..=2 * CROP_PAD), rng.random_range(0..=2 * CROP_PAD)) } else { (CROP_PAD, CROP_PAD) };
    Augment { pad: CROP_PAD, dx, dy, flip: flip && rng.random_bool(0.5) }
}

/// Class-conditional coloured Gaussian blobs on a noisy background,
/// standardized per channel. Class `c` places its blob at angle `2πc/classes`
/// around the image centre with its own colour, so classes are linearly separable.
pub fn synth_dataset<T: Real>(classes: usize, n: usize, seed: u64, image_hw: usize) -> Result<Dataset<T>> {
    if classes == 0 || n == 0 || image_hw == 0 {
        return Err(Error::Data("synthetic dataset needs classes, samples and size > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors: Vec<[f64; 3]> = (0..classes).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect();
    let noise = Normal::new(0.0, 0.15).expect("valid std");
    let hw = image_hw as f64;
    let (radius, sigma) = (hw / 4.0, hw / 8.0);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let angle = std::f64::consts::TAU * label as f64 / classes as f64;
        let cx = hw / 2.0 + radius * angle.cos() + rng.random_range(-1.0..1.0);
        let cy = hw / 2.0 + radius * angle.sin() + rng.random_range(-1.0..1.0);
        let amp = rng.random_range(0.8..1.2);
        let image = Tensor::from_fn(vec![INPUT_CHANNELS, image_hw, image_hw], |idx| {
            let c = idx / (image_hw * image_hw);
            let y = (idx / image_hw) % image_hw;
            let x = idx % image_hw;
            let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
            T::lit(amp * colors[label][c] * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng))
        });
        samples.push(Sample { image, label });
    }
    let mut ds = Dataset::new(samples, classes, "synthetic")?;
    ds.standardize()?;
    Ok(ds)
}

/// How decoded images are brought to the configured square size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizePolicy {
    /// Images must already have the target size.
    Exact,
    /// Center crop; images smaller than the target are rejected.
    Crop,
    /// Center crop to a square, then bilinear resize.
    Resize,
}

/// Decodes a binary PPM (P6) or PGM (P5) file into `3×H×W` values in `[0, 1]`;
/// gray images are replicated to three channels.
pub fn decode_pnm<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("truncated image header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(Error::Data(format!("unsupported image magic `{other}` (expected P6 or P5)"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| Error::Data(format!("malformed {what} `{t}` in image header")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Data(format!("invalid image header {w}x{h} maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = w * h * channels * bpp;
    if bytes.len() < start + need {
        return Err(Error::Data(format!("image raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(start))));
    }
    let raster = &bytes[start..start + need];
    let scale = 1.0 / maxval as f64;
    let value = |i: usize| -> T {
        let v = if bpp == 1 { raster[i] as f64 } else { u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64 };
        T::lit(v * scale)
    };
    Ok(Tensor::from_fn(vec![INPUT_CHANNELS, h, w], |idx| {
        let c = idx / (h * w);
        let p = idx % (h * w);
        if channels == 3 {
            value(p * 3 + c)
        } else {
            value(p)
        }
    }))
}

/// Brings a `3×H×W` image to `3×hw×hw` under `policy`.
pub fn fit_image<T: Real>(image: &Tensor<T>, hw: usize, policy: SizePolicy) -> Result<Tensor<T>> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let crop = |side: usize| -> Tensor<T> {
        let (oy, ox) = ((h - side) / 2, (w - side) / 2);
        Tensor::from_fn(vec![c, side, side], |i| {
            let ch = i / (side * side);
            let y = (i / side) % side;
            let x = i % side;
            image.data()[(ch * h + oy + y) * w + ox + x]
        })
    };
    match policy {
        SizePolicy::Exact if h == hw && w == hw => Ok(image.clone()),
        SizePolicy::Exact => Err(Error::Data(format!("image is {h}x{w}, expected {hw}x{hw}"))),
        SizePolicy::Crop if h >= hw && w >= hw => Ok(crop(hw)),
        SizePolicy::Crop => Err(Error::Data(format!("image {h}x{w} is smaller than the {hw}x{hw} crop"))),
        SizePolicy::Resize => {
            let sq = crop(h.min(w));
            let side = h.min(w);
            if side == hw {
                return Ok(sq);
            }
            let scale = side as f64 / hw as f64;
            let at = |ch: usize, y: usize, x: usize| sq.data()[(ch * side + y) * side + x].to_f64().unwrap();
            Ok(Tensor::from_fn(vec![c, hw, hw], |i| {
                let ch = i / (hw * hw);
                let fy = (((i / hw) % hw) as f64 + 0.5) * scale - 0.5;
                let fx = ((i % hw) as f64 + 0.5) * scale - 0.5;
                let (y0, x0) = (fy.floor().max(0.0) as usize, fx.floor().max(0.0) as usize);
                let (y1, x1) = ((y0 + 1).min(side - 1), (x0 + 1).min(side - 1));
                let (ty, tx) = ((fy - y0 as f64).clamp(0.0, 1.0), (fx - x0 as f64).clamp(0.0, 1.0));
                let top = at(ch, y0, x0) * (1.0 - tx) + at(ch, y0, x1) * tx;
                let bottom = at(ch, y1, x0) * (1.0 - tx) + at(ch, y1, x1) * tx;
                T::lit(top * (1.0 - ty) + bottom * ty)
            }))
        }
    }
}

/// Loads images listed in a `relative_path,label` manifest, relative to `root`.
/// Values are scaled to `[0, 1]`, fitted to `hw`, then channel-standardized,
/// with `norm` when given (evaluation reuses the training statistics) and
/// with the folder's own statistics otherwise.
pub fn ingest_folder<T: Real>(
    root: &Path,
    manifest: &Path,
    hw: usize,
    policy: SizePolicy,
    classes: Option<usize>,
    norm: Option<&Normalization>,
) -> Result<(Dataset<T>, Normalization)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest)
        .map_err(|e| Error::Data(format!("manifest {}: {e}", manifest.display())))?;
    let headers = reader.headers().map_err(|e| Error::Data(format!("manifest header: {e}")))?.clone();
    if headers.len() != 2 || &headers[0] != "relative_path" || &headers[1] != "label" {
        return Err(Error::Data(format!("manifest header must be `relative_path,label`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Data(format!("manifest row {row}: {e}")))?;
        let (rel, label) = (&record[0], &record[1]);
        let label: usize = label.parse().map_err(|_| Error::Data(format!("manifest row {row}: bad label `{label}`")))?;
        if let Some(k) = classes {
            if label >= k {
                return Err(Error::Data(format!("manifest row {row}: label {label} outside 0..{k}")));
            }
        }
        let path = root.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::Data(format!("manifest row {row}: cannot read {}: {e}", path.display())))?;
        let image = decode_pnm::<T>(&bytes).map_err(|e| Error::Data(format!("manifest row {row} ({rel}): {e}")))?;
        let image = fit_image(&image, hw, policy).map_err(|e| Error::Data(format!("manifest row {row} ({rel}): {e}")))?;
        samples.push(Sample { image, label });
    }
    if samples.is_empty() {
        return Err(Error::Data("manifest lists no images".into()));
    }
    let classes = classes.unwrap_or_else(|| samples.iter().map(|s| s.label).max().unwrap_or(0) + 1);
    let mut ds = Dataset::new(samples, classes, "folder")?;
    let norm = match norm {
        Some(n) => {
            ds.standardize_with(n);
            *n
        }
        None => ds.standardize()?,
    };
    Ok((ds, norm))
}
