//! Data ingestion and synthesis: IDX container parsing and writing,
//! stochastic binarization, column conditioning, the 2-D ring generator,
//! and deterministic shuffled batching.
//!
//! IDX files are big-endian: images carry magic `0x00000803` and dims
//! `[n, h, w]` of unsigned bytes; labels carry magic `0x00000801`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// A matrix of examples in [0,1] with optional labels and image geometry.
#[derive(Clone, Debug)]
pub struct Dataset {
    examples: Tensor,
    labels: Option<Vec<u8>>,
    image_dims: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(
        examples: Tensor,
        labels: Option<Vec<u8>>,
        image_dims: Option<(usize, usize)>,
    ) -> Result<Self> {
        if examples.rank() != 2 || examples.shape()[0] == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs a non-empty [n × D] matrix, got {:?}",
                examples.shape()
            )));
        }
        if let Some(bad) = examples
            .data()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v) || !v.is_finite())
        {
            return Err(Error::Domain {
                op: "dataset",
                detail: format!("pixel value {bad} outside [0,1]"),
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != examples.shape()[0] {
                return Err(Error::CountMismatch {
                    images: examples.shape()[0],
                    labels: labels.len(),
                });
            }
        }
        if let Some((h, w)) = image_dims {
            if h * w != examples.shape()[1] {
                return Err(Error::InvalidArgument(format!(
                    "image dims {h}x{w} inconsistent with row width {}",
                    examples.shape()[1]
                )));
            }
        }
        Ok(Dataset {
            examples,
            labels,
            image_dims,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.examples.shape()[1]
    }

    pub fn examples(&self) -> &Tensor {
        &self.examples
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.image_dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.examples.row(i)
    }

    /// Keep only the first `n` examples (desk-scale subsetting).
    pub fn subset(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        if n == 0 {
            return Err(Error::InvalidArgument("subset of size 0".into()));
        }
        let idx: Vec<usize> = (0..n).collect();
        Dataset::new(
            self.examples.take_rows(&idx),
            self.labels.as_ref().map(|l| l[..n].to_vec()),
            self.image_dims,
        )
    }
}

// ── IDX reading and writing ──────────────────────────────────────────

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> ByteReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                expected: self.pos + 4,
                found: self.bytes.len(),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn payload(&mut self, expected: usize) -> Result<&'a [u8]> {
        if self.pos + expected > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                expected: self.pos + expected,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + expected];
        self.pos += expected;
        Ok(s)
    }
}

/// Load an IDX image file (and optionally its label file). Pixels scale to
/// [0,1] by /255; rows flatten row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: Option<&Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let mut r = ByteReader {
        bytes: &bytes,
        pos: 0,
        path: images_path.to_path_buf(),
    };
    let magic = r.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let payload = r.payload(n * h * w)?;
    let data: Vec<f64> = payload.iter().map(|&b| b as f64 / 255.0).collect();
    let examples = Tensor::new(vec![n, h * w], data)?;

    let labels = match labels_path {
        Some(lp) => Some(load_idx_labels(lp, n)?),
        None => None,
    };
    Dataset::new(examples, labels, Some((h, w)))
}

fn load_idx_labels(path: &Path, expected_count: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader {
        bytes: &bytes,
        pos: 0,
        path: path.to_path_buf(),
    };
    let magic = r.u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = r.u32()? as usize;
    if n != expected_count {
        return Err(Error::CountMismatch {
            images: expected_count,
            labels: n,
        });
    }
    Ok(r.payload(n)?.to_vec())
}

/// Write a dataset as an IDX image file (8-bit, `round(p·255)`), plus a
/// label file when labels are present. Exact inverse of [`load_idx`] for
/// pixel values on the /255 grid.
pub fn write_idx(
    dataset: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
) -> Result<()> {
    let (h, w) = dataset
        .image_dims()
        .ok_or_else(|| Error::InvalidArgument("write_idx needs image-shaped data".into()))?;
    let images_path = images_path.as_ref();
    let mut bytes = Vec::with_capacity(16 + dataset.len() * h * w);
    bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(h as u32).to_be_bytes());
    bytes.extend_from_slice(&(w as u32).to_be_bytes());
    bytes.extend(
        dataset
            .examples()
            .data()
            .iter()
            .map(|&p| (p * 255.0).round() as u8),
    );
    fs::write(images_path, bytes).map_err(|e| Error::io(images_path, e))?;

    if let Some(lp) = labels_path {
        let labels = dataset.labels().ok_or_else(|| {
            Error::InvalidArgument(
                "write_idx given a label path but the dataset has no labels".into(),
            )
        })?;
        let mut bytes = Vec::with_capacity(8 + labels.len());
        bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        fs::write(lp, bytes).map_err(|e| Error::io(lp, e))?;
    }
    Ok(())
}

// ── Stochastic binarization and conditioning ─────────────────────────

/// Independent Bernoulli draw per value: 1 with probability equal to the
/// input. Fresh draws every call.
pub fn stochastic_binarize<R: Rng>(row: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if let Some(bad) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain {
            op: "stochastic_binarize",
            detail: format!("value {bad} outside [0,1]"),
        });
    }
    Ok(row
        .iter()
        .map(|&p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
        .collect())
}

/// Which pixel column becomes the conditioning input, and whether it is
/// binarized per presentation.
#[derive(Clone, Copy, Debug)]
pub struct ConditioningSpec {
    pub column_index: usize,
    pub binarize: bool,
}

impl Default for ConditioningSpec {
    fn default() -> Self {
        // Middle column of a 28-wide image.
        ConditioningSpec {
            column_index: 14,
            binarize: true,
        }
    }
}

/// Column-conditioned view of an image dataset: `x_cond` is the extracted
/// column (length `image_h`), `y_target` the full image. Binarization is
/// deferred to presentation time so each pass re-draws the noise.
#[derive(Clone, Debug)]
pub struct Conditioned {
    cond_raw: Tensor,
    target: Tensor,
    binarize: bool,
}

impl Conditioned {
    pub fn len(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_raw.shape()[1]
    }

    pub fn target_dim(&self) -> usize {
        self.target.shape()[1]
    }

    /// Raw (un-binarized) conditioning columns.
    pub fn cond_raw(&self) -> &Tensor {
        &self.cond_raw
    }

    pub fn target(&self) -> &Tensor {
        &self.target
    }

    /// Materialize (x_cond, y_target) for the given rows, re-drawing the
    /// binarization noise for this presentation.
    pub fn present<R: Rng>(&self, indices: &[usize], rng: &mut R) -> Result<(Tensor, Tensor)> {
        let raw = self.cond_raw.take_rows(indices);
        let cond = if self.binarize {
            let mut data = Vec::with_capacity(raw.numel());
            for i in 0..raw.shape()[0] {
                data.extend(stochastic_binarize(raw.row(i), rng)?);
            }
            Tensor::new(raw.shape().to_vec(), data)?
        } else {
            raw
        };
        Ok((cond, self.target.take_rows(indices)))
    }
}

/// Split an image dataset into (column, full image) pairs as described
/// by `spec`.
pub fn column_condition(dataset: &Dataset, spec: &ConditioningSpec) -> Result<Conditioned> {
    let (h, w) = dataset
        .image_dims()
        .ok_or_else(|| Error::InvalidArgument("column_condition needs image-shaped data".into()))?;
    if spec.column_index >= w {
        return Err(Error::AxisOutOfRange {
            op: "column_condition",
            axis: spec.column_index,
            rank: w,
        });
    }
    let n = dataset.len();
    let mut cond = Vec::with_capacity(n * h);
    for i in 0..n {
        let row = dataset.row(i);
        for y in 0..h {
            cond.push(row[y * w + spec.column_index]);
        }
    }
    Ok(Conditioned {
        cond_raw: Tensor::new(vec![n, h], cond)?,
        target: dataset.examples().clone(),
        binarize: spec.binarize,
    })
}

// ── Ring generator ───────────────────────────────────────────────────

/// Map a standard 2-D normal through `g(z) = z/10 + z/‖z‖`, yielding a ring
/// of radius `‖z‖/10 + 1`. `g(0) := 0` (unreachable in practice).
pub fn ring_map(z: [f64; 2]) -> [f64; 2] {
    let norm = (z[0] * z[0] + z[1] * z[1]).sqrt();
    if norm == 0.0 {
        return [0.0, 0.0];
    }
    [z[0] / 10.0 + z[0] / norm, z[1] / 10.0 + z[1] / norm]
}

/// `n` samples of `g(z)`, `z ~ N(0, I₂)`.
pub fn ring_generate<R: Rng>(n: usize, rng: &mut R) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::InvalidArgument("ring_generate needs n >= 1".into()));
    }
    let mut data = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let z = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
        let g = ring_map(z);
        data.extend_from_slice(&g);
    }
    Tensor::new(vec![n, 2], data)
}

// ── Batching ─────────────────────────────────────────────────────────

/// Deterministic shuffled batches: the permutation is a pure function of
/// `(seed, epoch)`, and the final partial batch is kept.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

// ── Synthetic digit fixtures ─────────────────────────────────────────
//
// Procedural 28×28 digit-like glyphs: per-class stroke skeletons rendered
// with a Gaussian pen, jittered per sample in translation, rotation, scale
// and contrast. Pixels land exactly on the /255 grid so IDX round-trips are
// lossless. Used by tests and demos when no real IDX data is on hand.

type Stroke = Vec<(f64, f64)>;

fn circle(cx: f64, cy: f64, rx: f64, ry: f64, points: usize) -> Stroke {
    (0..=points)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / points as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn glyph_strokes(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![circle(0.5, 0.5, 0.30, 0.42, 24)],
        1 => vec![
            vec![(0.35, 0.24), (0.54, 0.08)],
            vec![(0.54, 0.08), (0.54, 0.92)],
            vec![(0.36, 0.92), (0.72, 0.92)],
        ],
        2 => vec![
            vec![
                (0.24, 0.28),
                (0.30, 0.12),
                (0.50, 0.06),
                (0.70, 0.12),
                (0.76, 0.30),
                (0.66, 0.50),
                (0.30, 0.76),
                (0.24, 0.92),
            ],
            vec![(0.24, 0.92), (0.78, 0.92)],
        ],
        3 => vec![
            vec![
                (0.26, 0.12),
                (0.50, 0.05),
                (0.72, 0.15),
                (0.74, 0.32),
                (0.58, 0.46),
                (0.44, 0.50),
            ],
            vec![
                (0.44, 0.50),
                (0.64, 0.55),
                (0.77, 0.70),
                (0.71, 0.88),
                (0.48, 0.95),
                (0.25, 0.87),
            ],
        ],
        4 => vec![
            vec![(0.62, 0.08), (0.22, 0.60)],
            vec![(0.22, 0.60), (0.82, 0.60)],
            vec![(0.62, 0.08), (0.62, 0.94)],
        ],
        5 => vec![
            vec![(0.74, 0.08), (0.30, 0.08)],
            vec![(0.30, 0.08), (0.28, 0.44)],
            vec![
                (0.28, 0.44),
                (0.52, 0.40),
                (0.72, 0.50),
                (0.76, 0.68),
                (0.64, 0.87),
                (0.40, 0.93),
                (0.24, 0.84),
            ],
        ],
        6 => vec![vec![
            (0.64, 0.06),
            (0.42, 0.24),
            (0.29, 0.48),
            (0.26, 0.70),
            (0.35, 0.88),
            (0.55, 0.94),
            (0.71, 0.85),
            (0.74, 0.66),
            (0.60, 0.54),
            (0.40, 0.55),
            (0.28, 0.66),
        ]],
        7 => vec![
            vec![(0.22, 0.08), (0.78, 0.08)],
            vec![(0.78, 0.08), (0.44, 0.94)],
            vec![(0.36, 0.50), (0.66, 0.50)],
        ],
        8 => vec![
            circle(0.5, 0.28, 0.20, 0.20, 20),
            circle(0.5, 0.71, 0.25, 0.24, 20),
        ],
        _ => vec![
            circle(0.52, 0.30, 0.22, 0.23, 20),
            vec![(0.73, 0.32), (0.66, 0.93)],
        ],
    }
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (dx, dy) = (p.0 - (a.0 + t * vx), p.1 - (a.1 + t * vy));
    (dx * dx + dy * dy).sqrt()
}

const GLYPH_SIZE: usize = 28;

/// Deterministic synthetic digit dataset: `n` labeled 28×28 glyphs with
/// per-sample jitter. Classes cycle 0..9.
pub fn synth_digits(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("synth_digits needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeletons: Vec<Vec<Stroke>> = (0..10).map(glyph_strokes).collect();
    let span = 20.0; // glyph box in pixels, centered on the canvas
    let offset = (GLYPH_SIZE as f64 - span) / 2.0;
    let stroke_width = 1.1;

    let mut data = Vec::with_capacity(n * GLYPH_SIZE * GLYPH_SIZE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 10) as u8;
        labels.push(digit);

        let dx: f64 = rng.gen_range(-1.8..1.8);
        let dy: f64 = rng.gen_range(-1.8..1.8);
        let theta: f64 = rng.gen_range(-0.12..0.12);
        let scale: f64 = rng.gen_range(0.90..1.08);
        let contrast: f64 = rng.gen_range(0.75..1.0);
        let (sin_t, cos_t) = theta.sin_cos();
        let c = GLYPH_SIZE as f64 / 2.0;

        // Transform strokes into jittered pixel space once per sample.
        let strokes: Vec<Stroke> = skeletons[digit as usize]
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&(ux, uy)| {
                        let (px, py) = (offset + ux * span - c, offset + uy * span - c);
                        let (rx, ry) = (px * cos_t - py * sin_t, px * sin_t + py * cos_t);
                        (rx * scale + c + dx, ry * scale + c + dy)
                    })
                    .collect()
            })
            .collect();

        for y in 0..GLYPH_SIZE {
            for x in 0..GLYPH_SIZE {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                let mut best = f64::INFINITY;
                for s in &strokes {
                    for seg in s.windows(2) {
                        best = best.min(dist_to_segment(p, seg[0], seg[1]));
                    }
                }
                let v = contrast * (-best * best / (2.0 * stroke_width * stroke_width)).exp();
                // Quantize onto the /255 grid for lossless IDX round-trips.
                data.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
            }
        }
    }
    Dataset::new(
        Tensor::new(vec![n, GLYPH_SIZE * GLYPH_SIZE], data)?,
        Some(labels),
        Some((GLYPH_SIZE, GLYPH_SIZE)),
    )
}
