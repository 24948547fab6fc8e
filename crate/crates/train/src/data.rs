//! Image datasets: the CIFAR-10 binary format and a synthetic stand-in.

use std::path::Path;

use mohsa_core::{Rng, Tensor};

use crate::error::{read_file, write_file, Result, TrainError};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// Images stored channel-major (`[3, S, S]` each) with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    image_size: usize,
    images: Vec<f32>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(image_size: usize, images: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() * 3 * image_size * image_size {
            return Err(TrainError::Data(format!(
                "{} pixel values do not make {} images of side {image_size}",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self {
            image_size,
            images,
            labels,
        })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn pixels(&self) -> usize {
        3 * self.image_size * self.image_size
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.pixels();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Keeps the first `limit` samples (0 keeps everything).
    pub fn truncated(mut self, limit: usize) -> Self {
        if limit > 0 && limit < self.len() {
            self.labels.truncate(limit);
            self.images.truncate(limit * self.pixels());
        }
        self
    }

    pub fn concat(parts: Vec<Dataset>) -> Result<Self> {
        let size = parts.first().map_or(CIFAR_SIDE, |d| d.image_size);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.image_size != size {
                return Err(TrainError::Data("cannot join datasets of different image sizes".into()));
            }
            images.extend(p.images);
            labels.extend(p.labels);
        }
        Self::new(size, images, labels)
    }

    /// `[B, 3, S, S]` batch of the samples at `indices`, augmented when an
    /// RNG is supplied.
    pub fn batch(&self, indices: &[usize], mut augment: Option<&mut Rng>) -> Result<(Tensor<f32>, Vec<usize>)> {
        let s = self.image_size;
        let mut data = Vec::with_capacity(indices.len() * self.pixels());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            match augment.as_deref_mut() {
                Some(rng) => data.extend(augment_image(self.image(i), s, rng)),
                None => data.extend_from_slice(self.image(i)),
            }
            labels.push(self.label(i));
        }
        let t = Tensor::new(vec![indices.len(), 3, s, s], data)?;
        Ok((t, labels))
    }
}

/// Random crop from the image zero-padded by 4 pixels, then a horizontal
/// flip with probability 1/2.
pub fn augment_image(img: &[f32], side: usize, rng: &mut Rng) -> Vec<f32> {
    const PAD: usize = 4;
    let dy = rng.below(2 * PAD + 1) as isize - PAD as isize;
    let dx = rng.below(2 * PAD + 1) as isize - PAD as isize;
    let flip = rng.bernoulli(0.5);
    let mut out = vec![0.0; img.len()];
    for c in 0..3 {
        for y in 0..side {
            let sy = y as isize + dy;
            if sy < 0 || sy >= side as isize {
                continue;
            }
            for x in 0..side {
                let xx = if flip { side - 1 - x } else { x };
                let sx = xx as isize + dx;
                if sx < 0 || sx >= side as isize {
                    continue;
                }
                out[(c * side + y) * side + x] = img[(c * side + sy as usize) * side + sx as usize];
            }
        }
    }
    out
}

/// Parses concatenated 3073-byte CIFAR-10 records: one label byte, then the
/// red, green and blue planes of a 32x32 image, row-major. Byte `v` becomes
/// `v / 255`.
pub fn parse_cifar10(bytes: &[u8], source: &str) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(TrainError::Format(format!(
            "{source}: length {} is not a multiple of the {CIFAR_RECORD}-byte record size",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(TrainError::Data(format!(
                "{source}: record {i} has label {} (expected 0..=9)",
                rec[0]
            )));
        }
        labels.push(rec[0]);
        images.extend(rec[1..].iter().map(|&v| v as f32 / 255.0));
    }
    Dataset::new(CIFAR_SIDE, images, labels)
}

/// Inverse of [`parse_cifar10`]: pixels are rounded to the nearest byte.
pub fn encode_cifar10(data: &Dataset) -> Result<Vec<u8>> {
    if data.image_size() != CIFAR_SIDE {
        return Err(TrainError::Data(format!(
            "CIFAR-10 records hold {CIFAR_SIDE} px images, got {}",
            data.image_size()
        )));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for i in 0..data.len() {
        let label = data.label(i);
        if label > 9 {
            return Err(TrainError::Data(format!("sample {i} has label {label}")));
        }
        out.push(label as u8);
        out.extend(data.image(i).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

/// Writes `train` as five equal batches plus `test` in the CIFAR-10 binary
/// layout.
pub fn write_cifar10_dir(dir: &Path, train: &Dataset, test: &Dataset) -> Result<()> {
    let bytes = encode_cifar10(train)?;
    let per = train.len().div_ceil(CIFAR_TRAIN_FILES.len()) * CIFAR_RECORD;
    for (k, f) in CIFAR_TRAIN_FILES.iter().enumerate() {
        let lo = (k * per).min(bytes.len());
        let hi = ((k + 1) * per).min(bytes.len());
        write_file(&dir.join(f), &bytes[lo..hi])?;
    }
    write_file(&dir.join(CIFAR_TEST_FILE), &encode_cifar10(test)?)
}

pub fn load_cifar10_file(path: &Path) -> Result<Dataset> {
    parse_cifar10(&read_file(path)?, &path.display().to_string())
}

#[derive(Debug)]
pub struct Cifar10 {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads the five training batches and the test batch from `dir` (or from
/// its `cifar-10-batches-bin` subdirectory).
pub fn load_cifar10(dir: &Path) -> Result<Cifar10> {
    let nested = dir.join("cifar-10-batches-bin");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let train = CIFAR_TRAIN_FILES
        .iter()
        .map(|f| load_cifar10_file(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Cifar10 {
        train: Dataset::concat(train)?,
        test: load_cifar10_file(&dir.join(CIFAR_TEST_FILE))?,
    })
}

/// Class-conditional Gaussian-blob images.
///
/// Every class owns a prototype made of three coloured Gaussian bumps at
/// class-specific positions; a sample is its prototype plus i.i.d. pixel
/// noise of standard deviation `noise`, clamped to `[0, 1]`. Prototypes
/// depend only on `seed`, so splits drawn with different `stream`s share
/// them.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub image_size: usize,
    pub noise: f64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, image_size: usize, noise: f64) -> Self {
        Self {
            classes,
            image_size,
            noise,
        }
    }

    fn prototypes(&self, seed: u64) -> Vec<Vec<f64>> {
        let s = self.image_size;
        let mut rng = Rng::derive(seed, 0x5eed);
        (0..self.classes)
            .map(|_| {
                let mut img = vec![0.5; 3 * s * s];
                for _ in 0..3 {
                    let cy = rng.uniform() * s as f64;
                    let cx = rng.uniform() * s as f64;
                    let sigma = (0.1 + 0.1 * rng.uniform()) * s as f64;
                    let colour: Vec<f64> = (0..3).map(|_| 0.6 * rng.uniform() - 0.3).collect();
                    for c in 0..3 {
                        for y in 0..s {
                            for x in 0..s {
                                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                                img[(c * s + y) * s + x] +=
                                    colour[c] * (-d2 / (2.0 * sigma * sigma)).exp();
                            }
                        }
                    }
                }
                img
            })
            .collect()
    }

    /// `n` samples with labels `i % classes`.
    pub fn generate(&self, seed: u64, n: usize, stream: u64) -> Result<Dataset> {
        if self.classes == 0 || self.classes > 256 {
            return Err(TrainError::Config(format!("synthetic classes {} outside 1..=256", self.classes)));
        }
        let protos = self.prototypes(seed);
        let mut rng = Rng::derive(seed, stream + 1);
        let mut images = Vec::with_capacity(n * 3 * self.image_size * self.image_size);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.classes;
            labels.push(c as u8);
            images.extend(
                protos[c]
                    .iter()
                    .map(|&p| (p + self.noise * rng.normal()).clamp(0.0, 1.0) as f32),
            );
        }
        Dataset::new(self.image_size, images, labels)
    }
}

/// 32-pixel synthetic training split with noise 0.1.
pub fn synthetic_dataset(seed: u64, n: usize, classes: usize) -> Result<Dataset> {
    SyntheticSpec::new(classes, CIFAR_SIDE, 0.1).generate(seed, n, 0)
}
