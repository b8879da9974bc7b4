//! Dataset loading: IDX image files, CIFAR-10 binary batches, ratings CSV,
//! and seeded synthetic generators for self-contained experiments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::train::{Example, Label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SyntheticKind {
    /// Entries uniform in [0, 1]; placeholder labels.
    UniformVectors { dim: usize },
    /// Class-pattern image task: a shared smooth base plus a per-class
    /// component scaled by `separation`, plus pixel noise. Small separation
    /// leaves the class signal as a small fraction of image energy, which
    /// is what makes split-layer noise bite.
    PatternImages {
        channels: usize,
        height: usize,
        width: usize,
        classes: usize,
        #[serde(default = "default_separation")]
        separation: f32,
    },
    /// Piecewise-smooth scenes (gradient background + rectangles); the kind
    /// of content an image prior helps reconstruct.
    SmoothImages {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// Latent-factor user/movie interactions with binary likes.
    Interactions { users: usize, movies: usize },
}

fn default_separation() -> f32 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    MnistIdx {
        images: PathBuf,
        labels: PathBuf,
    },
    Cifar10Binary {
        paths: Vec<PathBuf>,
    },
    MovieLensCsv {
        path: PathBuf,
        like_threshold: f32,
    },
    Synthetic {
        kind: SyntheticKind,
        size: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Default)]
pub struct DatasetInfo {
    pub input_shape: Vec<usize>,
    pub classes: Option<usize>,
    /// Dense id counts for interaction datasets.
    pub users_movies: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub info: DatasetInfo,
}

impl Dataset {
    /// Deterministically shuffled prefix of the examples.
    pub fn subsample(mut self, size: usize, seed: u64) -> Dataset {
        let mut rng = SeededRng::new(seed);
        rng.shuffle(&mut self.examples);
        self.examples.truncate(size);
        self
    }
}

pub fn load_dataset(src: &DatasetSource) -> Result<Dataset> {
    match src {
        DatasetSource::MnistIdx { images, labels } => load_mnist(images, labels),
        DatasetSource::Cifar10Binary { paths } => load_cifar(paths),
        DatasetSource::MovieLensCsv {
            path,
            like_threshold,
        } => load_movielens(path, *like_threshold),
        DatasetSource::Synthetic { kind, size, seed } => synthesize(kind, *size, *seed),
    }
}

// ---- IDX (MNIST layout) -------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let slice = bytes.get(offset..offset + 4).ok_or_else(|| {
        Error::Data(format!("unexpected end of file reading {what} at byte {offset}"))
    })?;
    Ok(u32::from_be_bytes([slice[0], slice[1], slice[2], slice[3]]))
}

/// Rank-2 [h, w] images scaled to [0, 1].
pub fn load_idx_images(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad image magic {magic} at byte 0, expected {IDX_IMAGES_MAGIC}",
            path.display()
        )));
    }
    let count = be_u32(&bytes, 4, "image count")? as usize;
    let rows = be_u32(&bytes, 8, "rows")? as usize;
    let cols = be_u32(&bytes, 12, "cols")? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Data(format!(
            "{}: truncated at byte {}, need {need}",
            path.display(),
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let data: Vec<f32> = bytes[start..start + rows * cols]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        images.push(Tensor::new(vec![rows, cols], data)?);
    }
    Ok(images)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad label magic {magic} at byte 0, expected {IDX_LABELS_MAGIC}",
            path.display()
        )));
    }
    let count = be_u32(&bytes, 4, "label count")? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::Data(format!(
            "{}: truncated at byte {}, need {}",
            path.display(),
            bytes.len(),
            8 + count
        )));
    }
    Ok(bytes[8..8 + count].to_vec())
}

fn load_mnist(images: &Path, labels: &Path) -> Result<Dataset> {
    let imgs = load_idx_images(images)?;
    let labs = load_idx_labels(labels)?;
    if imgs.len() != labs.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            imgs.len(),
            labs.len()
        )));
    }
    let input_shape = imgs
        .first()
        .map(|t| t.shape().to_vec())
        .unwrap_or_else(|| vec![28, 28]);
    let examples = imgs
        .into_iter()
        .zip(labs)
        .map(|(input, l)| Example {
            input,
            label: Label::Class(l as usize),
        })
        .collect();
    Ok(Dataset {
        examples,
        info: DatasetInfo {
            input_shape,
            classes: Some(10),
            users_movies: None,
        },
    })
}

/// Write images (rank-2, values in [0,1]) in the IDX layout. Values are
/// quantized to the 8-bit grid; see [`quantize_unit_u8`].
pub fn write_idx_images(path: &Path, images: &[Tensor]) -> Result<()> {
    let (rows, cols) = match images.first().map(|t| t.shape()) {
        Some([h, w]) => (*h, *w),
        _ => return Err(Error::Data("need at least one rank-2 image".into())),
    };
    let mut bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        img.expect_shape(&[rows, cols], "idx image")?;
        for &v in img.data() {
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes)?;
    Ok(())
}

/// Snap unit-interval values onto the 8-bit grid an IDX write/read trip
/// lands on.
pub fn quantize_unit_u8(t: &Tensor) -> Tensor {
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

// ---- CIFAR-10 binary ----------------------------------------------------

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// CIFAR-10 binary batches: per record one label byte and 3072 pixel bytes.
/// Pixels are standardized per channel to mean 0, variance 1 over the
/// loaded set.
fn load_cifar(paths: &[PathBuf]) -> Result<Dataset> {
    let mut raw: Vec<(u8, Vec<f32>)> = Vec::new();
    for path in paths {
        let bytes = fs::read(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Data(format!(
                "{}: size {} is not a multiple of the {CIFAR_RECORD}-byte record (offset {})",
                path.display(),
                bytes.len(),
                bytes.len() - bytes.len() % CIFAR_RECORD
            )));
        }
        for (ri, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            let label = rec[0];
            if label > 9 {
                return Err(Error::Data(format!(
                    "{}: label {label} out of range in record {ri}",
                    path.display()
                )));
            }
            let pixels: Vec<f32> = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
            raw.push((label, pixels));
        }
    }
    if raw.is_empty() {
        return Err(Error::Data("no CIFAR records loaded".into()));
    }
    // per-channel moments over the whole load
    let plane = 32 * 32;
    let mut mean = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    for (_, px) in &raw {
        for c in 0..3 {
            for &v in &px[c * plane..(c + 1) * plane] {
                mean[c] += v as f64;
                sq[c] += (v as f64) * (v as f64);
            }
        }
    }
    let n = (raw.len() * plane) as f64;
    let mut std = [0.0f64; 3];
    for c in 0..3 {
        mean[c] /= n;
        std[c] = (sq[c] / n - mean[c] * mean[c]).max(1e-12).sqrt();
    }
    let examples = raw
        .into_iter()
        .map(|(label, mut px)| {
            for c in 0..3 {
                for v in &mut px[c * plane..(c + 1) * plane] {
                    *v = ((*v as f64 - mean[c]) / std[c]) as f32;
                }
            }
            Ok(Example {
                input: Tensor::new(vec![3, 32, 32], px)?,
                label: Label::Class(label as usize),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        examples,
        info: DatasetInfo {
            input_shape: vec![3, 32, 32],
            classes: Some(10),
            users_movies: None,
        },
    })
}

// ---- Ratings CSV ----------------------------------------------------------

/// `userId,movieId,rating[,timestamp]` rows; ratings at or above the
/// threshold become positive labels. Ids are remapped to dense indices in
/// sorted order of the raw ids.
fn load_movielens(path: &Path, like_threshold: f32) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<(u64, u64, f32)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 && line.starts_with("userId") {
            continue;
        }
        let mut fields = line.split(',');
        let parse_err = |what: &str| {
            Error::Data(format!(
                "{}: line {}: cannot parse {what} in {line:?}",
                path.display(),
                lineno + 1
            ))
        };
        let uid: u64 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| parse_err("userId"))?;
        let mid: u64 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| parse_err("movieId"))?;
        let rating: f32 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| parse_err("rating"))?;
        rows.push((uid, mid, rating));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no rating rows", path.display())));
    }
    let mut uids: Vec<u64> = rows.iter().map(|r| r.0).collect();
    uids.sort_unstable();
    uids.dedup();
    let mut mids: Vec<u64> = rows.iter().map(|r| r.1).collect();
    mids.sort_unstable();
    mids.dedup();
    let dense = |sorted: &[u64], v: u64| sorted.binary_search(&v).expect("value present");

    let examples = rows
        .iter()
        .map(|&(u, m, r)| Example {
            input: Tensor::from_vec(vec![
                dense(&uids, u) as f32,
                dense(&mids, m) as f32,
            ]),
            label: Label::Binary(r >= like_threshold),
        })
        .collect();
    Ok(Dataset {
        examples,
        info: DatasetInfo {
            input_shape: vec![2],
            classes: None,
            users_movies: Some((uids.len(), mids.len())),
        },
    })
}

// ---- Synthetic generators -------------------------------------------------

fn synthesize(kind: &SyntheticKind, size: usize, seed: u64) -> Result<Dataset> {
    let root = SeededRng::new(seed);
    match kind {
        SyntheticKind::UniformVectors { dim } => {
            let mut rng = root.derive(&[1]);
            let examples = (0..size)
                .map(|_| Example {
                    input: Tensor::from_vec((0..*dim).map(|_| rng.uniform_f32()).collect()),
                    label: Label::Class(0),
                })
                .collect();
            Ok(Dataset {
                examples,
                info: DatasetInfo {
                    input_shape: vec![*dim],
                    classes: Some(1),
                    users_movies: None,
                },
            })
        }
        SyntheticKind::PatternImages {
            channels,
            height,
            width,
            classes,
            separation,
        } => {
            let base = smooth_field(&root.derive(&[9]), *channels, *height, *width);
            let prototypes: Vec<Tensor> = (0..*classes)
                .map(|c| class_pattern(&root, &base, *separation, c, *channels, *height, *width))
                .collect();
            let mut rng = root.derive(&[2]);
            let examples = (0..size)
                .map(|i| {
                    let cls = i % *classes;
                    let data: Vec<f32> = prototypes[cls]
                        .data()
                        .iter()
                        .map(|&v| (v + 0.06 * rng.normal_f32()).clamp(0.0, 1.0))
                        .collect();
                    Example {
                        input: Tensor::new(prototypes[cls].shape().to_vec(), data)
                            .expect("same shape"),
                        label: Label::Class(cls),
                    }
                })
                .collect();
            Ok(Dataset {
                examples,
                info: DatasetInfo {
                    input_shape: vec![*channels, *height, *width],
                    classes: Some(*classes),
                    users_movies: None,
                },
            })
        }
        SyntheticKind::SmoothImages {
            channels,
            height,
            width,
        } => {
            let examples = (0..size)
                .map(|i| {
                    let mut rng = root.derive(&[3, i as u64]);
                    Example {
                        input: smooth_scene(&mut rng, *channels, *height, *width),
                        label: Label::Class(0),
                    }
                })
                .collect();
            Ok(Dataset {
                examples,
                info: DatasetInfo {
                    input_shape: vec![*channels, *height, *width],
                    classes: Some(1),
                    users_movies: None,
                },
            })
        }
        SyntheticKind::Interactions { users, movies } => {
            let latent = 8usize;
            let mut init = root.derive(&[4]);
            let scale = 1.0 / (latent as f32).sqrt();
            let user_vecs: Vec<Vec<f32>> = (0..*users)
                .map(|_| (0..latent).map(|_| scale * init.normal_f32()).collect())
                .collect();
            let movie_vecs: Vec<Vec<f32>> = (0..*movies)
                .map(|_| (0..latent).map(|_| scale * init.normal_f32()).collect())
                .collect();
            let mut rng = root.derive(&[5]);
            let examples = (0..size)
                .map(|_| {
                    let u = rng.below(*users);
                    let m = rng.below(*movies);
                    let affinity: f32 = user_vecs[u]
                        .iter()
                        .zip(&movie_vecs[m])
                        .map(|(a, b)| a * b)
                        .sum();
                    let p = 1.0 / (1.0 + (-4.0 * affinity).exp());
                    Example {
                        input: Tensor::from_vec(vec![u as f32, m as f32]),
                        label: Label::Binary(rng.uniform_f32() < p),
                    }
                })
                .collect();
            Ok(Dataset {
                examples,
                info: DatasetInfo {
                    input_shape: vec![2],
                    classes: None,
                    users_movies: Some((*users, *movies)),
                },
            })
        }
    }
}

/// Smooth random field: a low-resolution seeded grid, bilinearly upsampled.
fn smooth_field(rng_src: &SeededRng, c: usize, h: usize, w: usize) -> Tensor {
    let mut rng = rng_src.clone();
    let grid = 4usize;
    let coarse: Vec<f32> = (0..c * grid * grid).map(|_| rng.normal_f32()).collect();
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let gy = y as f32 / h as f32 * (grid - 1) as f32;
                let gx = x as f32 / w as f32 * (grid - 1) as f32;
                let (y0, x0) = (gy as usize, gx as usize);
                let (y1, x1) = ((y0 + 1).min(grid - 1), (x0 + 1).min(grid - 1));
                let (fy, fx) = (gy - y0 as f32, gx - x0 as f32);
                let at = |yy: usize, xx: usize| coarse[(ch * grid + yy) * grid + xx];
                let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x1) * (1.0 - fy) * fx
                    + at(y1, x0) * fy * (1.0 - fx)
                    + at(y1, x1) * fy * fx;
                data.push(v);
            }
        }
    }
    Tensor::new(vec![c, h, w], data).expect("consistent")
}

/// Class prototype: shared base plus a separation-scaled class field,
/// squashed into [0.1, 0.9].
fn class_pattern(
    root: &SeededRng,
    base: &Tensor,
    separation: f32,
    class: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Tensor {
    let class_field = smooth_field(&root.derive(&[10, class as u64]), c, h, w);
    let data: Vec<f32> = base
        .data()
        .iter()
        .zip(class_field.data())
        .map(|(&b, &f)| 0.5 + 0.4 * (b + separation * f).tanh())
        .collect();
    Tensor::new(vec![c, h, w], data).expect("consistent")
}

/// Gradient background plus a few constant rectangles.
fn smooth_scene(rng: &mut SeededRng, c: usize, h: usize, w: usize) -> Tensor {
    let mut data = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let top = rng.uniform_in(0.1, 0.5);
        let bottom = rng.uniform_in(0.5, 0.9);
        for y in 0..h {
            let v = top + (bottom - top) * y as f32 / (h - 1).max(1) as f32;
            for x in 0..w {
                data[(ch * h + y) * w + x] = v;
            }
        }
    }
    let rects = 3 + rng.below(3);
    for _ in 0..rects {
        let y0 = rng.below(h.saturating_sub(4).max(1));
        let x0 = rng.below(w.saturating_sub(4).max(1));
        let rh = 3 + rng.below((h - y0).min(h / 2).max(1));
        let rw = 3 + rng.below((w - x0).min(w / 2).max(1));
        for ch in 0..c {
            let color = rng.uniform_in(0.05, 0.95);
            for y in y0..(y0 + rh).min(h) {
                for x in x0..(x0 + rw).min(w) {
                    data[(ch * h + y) * w + x] = color;
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], data).expect("consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_roundtrip_is_bit_identical_after_quantization() {
        let tmp = tempfile::tempdir().unwrap();
        let src = DatasetSource::Synthetic {
            kind: SyntheticKind::PatternImages {
                channels: 1,
                height: 9,
                width: 7,
                classes: 3,
                separation: 1.0,
            },
            size: 12,
            seed: 4,
        };
        let ds = load_dataset(&src).unwrap();
        let quantized: Vec<Tensor> = ds
            .examples
            .iter()
            .map(|e| quantize_unit_u8(&e.input.reshape(&[9, 7]).unwrap()))
            .collect();
        let img_path = tmp.path().join("imgs.idx");
        write_idx_images(&img_path, &quantized).unwrap();
        let back = load_idx_images(&img_path).unwrap();
        assert_eq!(back.len(), quantized.len());
        for (a, b) in back.iter().zip(&quantized) {
            assert_eq!(a.data(), b.data(), "bit-identical after quantization");
        }
    }

    #[test]
    fn idx_bad_magic_reports_offset() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.idx");
        fs::write(&path, [0u8, 0, 8, 1, 0, 0, 0, 0]).unwrap();
        let err = load_idx_images(&path).unwrap_err().to_string();
        assert!(err.contains("byte 0"), "got: {err}");
    }

    #[test]
    fn movielens_threshold_rule() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ratings.csv");
        fs::write(
            &path,
            "userId,movieId,rating,timestamp\n1,2,5.0,964982703\n1,3,4.5,964982703\n7,2,5.0,1\n",
        )
        .unwrap();
        let ds = load_dataset(&DatasetSource::MovieLensCsv {
            path,
            like_threshold: 5.0,
        })
        .unwrap();
        assert_eq!(ds.examples.len(), 3);
        assert_eq!(ds.info.users_movies, Some((2, 2)));
        // uid 1 -> 0, mid 2 -> 0, rating 5.0 -> like
        assert_eq!(ds.examples[0].input.data(), &[0.0, 0.0]);
        assert_eq!(ds.examples[0].label, Label::Binary(true));
        assert_eq!(ds.examples[1].label, Label::Binary(false));
        // uid 7 -> 1
        assert_eq!(ds.examples[2].input.data(), &[1.0, 0.0]);
    }

    #[test]
    fn movielens_bad_row_reports_line() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ratings.csv");
        fs::write(&path, "1,2,5.0\n1,oops,3\n").unwrap();
        let err = load_dataset(&DatasetSource::MovieLensCsv {
            path,
            like_threshold: 5.0,
        })
        .unwrap_err()
        .to_string();
        assert!(err.contains("line 2"), "got: {err}");
    }

    #[test]
    fn cifar_records_standardized_per_channel() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("batch.bin");
        // two records: all-zero pixels and all-255 pixels
        let mut bytes = vec![0u8; CIFAR_RECORD];
        bytes[0] = 3;
        let mut second = vec![255u8; CIFAR_RECORD];
        second[0] = 5;
        bytes.extend_from_slice(&second);
        fs::write(&path, bytes).unwrap();
        let ds = load_dataset(&DatasetSource::Cifar10Binary {
            paths: vec![path],
        })
        .unwrap();
        assert_eq!(ds.examples.len(), 2);
        assert_eq!(ds.examples[0].label, Label::Class(3));
        // mean 0.5, std 0.5 per channel: zeros -> -1, ones -> +1
        for &v in ds.examples[0].input.data() {
            assert!((v + 1.0).abs() < 1e-5, "zero pixel -> -mean/std, got {v}");
        }
        for &v in ds.examples[1].input.data() {
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn cifar_bad_size_reports_offset() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("batch.bin");
        fs::write(&path, vec![0u8; CIFAR_RECORD + 5]).unwrap();
        let err = load_dataset(&DatasetSource::Cifar10Binary {
            paths: vec![path],
        })
        .unwrap_err()
        .to_string();
        assert!(err.contains("offset"), "got: {err}");
    }

    #[test]
    fn synthetic_generators_are_seed_deterministic() {
        for kind in [
            SyntheticKind::UniformVectors { dim: 5 },
            SyntheticKind::PatternImages {
                channels: 1,
                height: 6,
                width: 6,
                classes: 2,
                separation: 1.0,
            },
            SyntheticKind::SmoothImages {
                channels: 3,
                height: 12,
                width: 12,
            },
            SyntheticKind::Interactions {
                users: 10,
                movies: 10,
            },
        ] {
            let src = DatasetSource::Synthetic {
                kind: kind.clone(),
                size: 8,
                seed: 11,
            };
            let a = load_dataset(&src).unwrap();
            let b = load_dataset(&src).unwrap();
            for (ea, eb) in a.examples.iter().zip(&b.examples) {
                assert_eq!(ea.input.data(), eb.input.data());
                assert_eq!(ea.label, eb.label);
            }
        }
    }

    #[test]
    fn pattern_classes_are_distinguishable() {
        let ds = load_dataset(&DatasetSource::Synthetic {
            kind: SyntheticKind::PatternImages {
                channels: 3,
                height: 16,
                width: 16,
                classes: 4,
                separation: 1.0,
            },
            size: 16,
            seed: 1,
        })
        .unwrap();
        // same-class pairs are much closer than cross-class pairs
        let d = |a: &Tensor, b: &Tensor| crate::metrics::mse(a, b).unwrap();
        let same = d(&ds.examples[0].input, &ds.examples[4].input);
        let cross = d(&ds.examples[0].input, &ds.examples[1].input);
        assert!(
            cross > 4.0 * same,
            "cross-class mse {cross} vs same-class {same}"
        );
    }
}
