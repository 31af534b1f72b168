//! Seeded 2-D toy classification tasks and their binary file format.
//!
//! File layout, little-endian:
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 8     | magic `b"ABSDATA1"`                     |
//! | 1     | split (0 = train, 1 = validation)       |
//! | 8     | rows (`u64`)                            |
//! | 4     | feature count (`u32`)                   |
//! | 4     | class count (`u32`)                     |
//! | 8     | generator seed (`u64`)                  |
//! | 8·r·f | inputs, row-major `f64`                 |
//! | 4·r   | labels (`u32`)                          |

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const DATA_MAGIC: &[u8; 8] = b"ABSDATA1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub seed: u64,
}

impl ToyDataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, classes: usize, split: Split, seed: u64) -> Result<Self> {
        if inputs.rows != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows but {} labels",
                inputs.rows,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidConfig(format!("label {bad} >= class count {classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            split,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.cols
    }

    /// Batches of `(inputs, labels)` in the given row order.
    pub fn batches<'a>(
        &'a self,
        order: &'a [usize],
        batch_size: usize,
    ) -> impl Iterator<Item = (Matrix, Vec<usize>)> + 'a {
        order.chunks(batch_size).map(move |idx| {
            (
                self.inputs.select_rows(idx),
                idx.iter().map(|&i| self.labels[i]).collect(),
            )
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(41 + self.inputs.data.len() * 8 + self.labels.len() * 4);
        out.extend_from_slice(DATA_MAGIC);
        out.push(match self.split {
            Split::Train => 0,
            Split::Validation => 1,
        });
        out.extend_from_slice(&(self.inputs.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.inputs.cols as u32).to_le_bytes());
        out.extend_from_slice(&(self.classes as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in &self.inputs.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = bytes;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            if cur.len() < n {
                return Err("truncated dataset file".into());
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != DATA_MAGIC {
            return Err("bad magic".into());
        }
        let split = match take(1)?[0] {
            0 => Split::Train,
            1 => Split::Validation,
            s => return Err(format!("bad split tag {s}")),
        };
        let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let classes = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let data = take(rows * cols * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = take(rows * 4)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        if !cur.is_empty() {
            return Err("trailing bytes".into());
        }
        Self::new(Matrix::from_vec(rows, cols, data), labels, classes, split, seed).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Malformed {
            path: path.to_path_buf(),
            reason,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Interleaved spiral arms, one per class.
    Spirals,
    /// Concentric rings, one per class.
    Rings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: TaskKind,
    pub classes: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Spirals,
            classes: 4,
            train_size: 512,
            validation_size: 512,
            noise: 0.25,
            seed: 2020,
        }
    }
}

impl DataConfig {
    /// Draw disjoint train and validation splits.
    pub fn generate(&self) -> Result<(ToyDataset, ToyDataset)> {
        if self.classes < 2 || self.train_size == 0 || self.validation_size == 0 {
            return Err(Error::InvalidConfig("dataset needs >= 2 classes and nonempty splits".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig("noise must be finite and >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut seen = HashSet::new();
        let train = self.draw(&mut rng, self.train_size, Split::Train, &mut seen);
        let val = self.draw(&mut rng, self.validation_size, Split::Validation, &mut seen);
        Ok((train, val))
    }

    fn draw(&self, rng: &mut ChaCha8Rng, n: usize, split: Split, seen: &mut HashSet<[u64; 2]>) -> ToyDataset {
        let jitter = Normal::new(0.0, self.noise.max(1e-12)).unwrap();
        let mut data = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        while labels.len() < n {
            // round-robin labels keep the classes balanced
            let class = labels.len() % self.classes;
            let (x, y) = match self.kind {
                TaskKind::Spirals => {
                    let t: f64 = rng.random_range(0.05..1.0);
                    let angle = 2.0 * PI * (class as f64 / self.classes as f64) + t * 1.75 * PI;
                    let r = t * 2.0;
                    (
                        r * angle.cos() + jitter.sample(rng) * t,
                        r * angle.sin() + jitter.sample(rng) * t,
                    )
                }
                TaskKind::Rings => {
                    let angle: f64 = rng.random_range(0.0..2.0 * PI);
                    let r = (class + 1) as f64 / self.classes as f64 * 2.0 + jitter.sample(rng) * 0.5;
                    (r * angle.cos(), r * angle.sin())
                }
            };
            if seen.insert([x.to_bits(), y.to_bits()]) {
                data.push(x);
                data.push(y);
                labels.push(class);
            }
        }
        ToyDataset {
            inputs: Matrix::from_vec(n, 2, data),
            labels,
            classes: self.classes,
            split,
            seed: self.seed,
        }
    }
}
