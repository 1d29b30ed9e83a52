//! Trained classifier bundles and their on-disk format.
//!
//! File layout: magic `RRM1`, a little-endian u32 header length, a JSON
//! header (architecture, labels, version, tensor names and shapes), then every
//! tensor as raw little-endian f32 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::CnnArch;
use super::network::{argmax, Network};
use super::Tensor;
use crate::audio::AudioRecord;
use crate::dataset::RoomLabel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"RRM1";

/// Per-cell z-score statistics of the training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer<T> {
    pub mean: Tensor<T>,
    pub std: Tensor<T>,
}

impl<T: Scalar> Normalizer<T> {
    pub fn identity(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            mean: Tensor::zeros(shape.to_vec()),
            std: Tensor::new(shape.to_vec(), vec![T::one(); n]).expect("shape"),
        }
    }

    pub fn fit(inputs: &[Tensor<T>]) -> Result<Self> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Argument("cannot fit normalization on an empty set".into()))?;
        let shape = first.shape().to_vec();
        let n = T::of_usize(inputs.len());
        let mut mean = vec![T::zero(); first.len()];
        for x in inputs {
            if x.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("input {:?} differs from {shape:?}", x.shape())));
            }
            for (m, &v) in mean.iter_mut().zip(x.data()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); first.len()];
        for x in inputs {
            for ((s, &v), &m) in var.iter_mut().zip(x.data()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                // Constant cells (e.g. pinned at the log floor) pass through unscaled.
                if sd > T::of(1e-6) {
                    sd
                } else {
                    T::one()
                }
            })
            .collect();
        Ok(Self {
            mean: Tensor::new(shape.clone(), mean)?,
            std: Tensor::new(shape, std)?,
        })
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != self.mean.shape() {
            return Err(Error::Shape(format!(
                "input {:?} does not match the model input {:?}",
                x.shape(),
                self.mean.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .zip(self.mean.data())
            .zip(self.std.data())
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub class_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub network: Network<T>,
    pub labels: Vec<RoomLabel>,
    pub normalizer: Normalizer<T>,
    pub version: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: CnnArch,
    labels: Vec<RoomLabel>,
    version: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl<T: Scalar> ModelBundle<T> {
    pub fn new(network: Network<T>, labels: Vec<RoomLabel>, normalizer: Normalizer<T>, version: u64) -> Result<Self> {
        let classes = network.arch().classes;
        if labels.len() != classes {
            return Err(Error::Argument(format!(
                "{} labels for a {classes}-class network",
                labels.len()
            )));
        }
        if labels.iter().enumerate().any(|(i, l)| l.class_index != i) {
            return Err(Error::Argument("label table must list class indices 0..K in order".into()));
        }
        if normalizer.mean.shape() != network.arch().input {
            return Err(Error::Shape("normalizer does not match the network input".into()));
        }
        Ok(Self {
            network,
            labels,
            normalizer,
            version,
        })
    }

    pub fn arch(&self) -> &CnnArch {
        self.network.arch()
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    /// Raw (unnormalized) input features of a record for this model.
    pub fn features(&self, record: &AudioRecord<T>) -> Tensor<T> {
        self.arch().feature.extract(&record.echo())
    }

    /// Dense-K scores for a raw feature tensor.
    pub fn scores(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        self.network.logits(&self.normalizer.apply(input)?)
    }

    pub fn record_scores(&self, record: &AudioRecord<T>) -> Result<Vec<T>> {
        self.scores(&self.features(record))
    }

    pub fn predict(&self, input: &Tensor<T>) -> Result<usize> {
        Ok(argmax(&self.scores(input)?))
    }

    /// The `min(k, K)` best labels by descending score, ties to the lower index.
    pub fn predict_topk(&self, input: &Tensor<T>, k: usize) -> Result<Vec<Prediction>> {
        let scores = self.scores(input)?;
        self.rank(&scores, k)
    }

    /// Ranks an externally computed score vector (e.g. a batch mean).
    pub fn rank(&self, scores: &[T], k: usize) -> Result<Vec<Prediction>> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if scores.len() != self.classes() {
            return Err(Error::Shape(format!("{} scores for {} classes", scores.len(), self.classes())));
        }
        Ok(topk_indices(scores, k)
            .into_iter()
            .map(|i| Prediction {
                label: self.labels[i].label_id.clone(),
                class_index: i,
                score: scores[i].as_f64(),
            })
            .collect())
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle {
            network: self.network.cast(),
            labels: self.labels.clone(),
            normalizer: Normalizer {
                mean: self.normalizer.mean.cast(),
                std: self.normalizer.std.cast(),
            },
            version: self.version,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut names = self.network.param_names();
        names.push("input.mean".into());
        names.push("input.std".into());
        let mut tensors = self.network.tensors();
        tensors.push(&self.normalizer.mean);
        tensors.push(&self.normalizer.std);
        let header = Header {
            arch: self.arch().clone(),
            labels: self.labels.clone(),
            version: self.version,
            tensors: names
                .into_iter()
                .zip(&tensors)
                .map(|(name, t)| TensorEntry {
                    name,
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let body: usize = tensors.iter().map(|t| t.len() * 4).sum();
        let mut out = Vec::with_capacity(8 + json.len() + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::format("magic", "not an RRM1 model file"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(8..8 + len)
            .ok_or_else(|| Error::format("header", "truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::format("header", e.to_string()))?;
        let mut offset = 8 + len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| Error::format(entry.name.as_str(), "truncated tensor data"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            tensors.push(Tensor::new(entry.shape.clone(), data)?);
            offset += 4 * n;
        }
        if offset != bytes.len() {
            return Err(Error::format("data", format!("{} trailing bytes", bytes.len() - offset)));
        }
        let std = tensors.pop().ok_or_else(|| Error::format("input.std", "missing"))?;
        let mean = tensors.pop().ok_or_else(|| Error::format("input.mean", "missing"))?;
        let network = Network::from_tensors(header.arch, tensors)?;
        Self::new(network, header.labels, Normalizer { mean, std }, header.version)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Indices of the `min(k, len)` largest scores, descending, ties to the lower index.
pub fn topk_indices<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k.min(scores.len()));
    order
}
