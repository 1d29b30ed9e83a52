//! Layer stacks for the tested CNN and DNN variants.

use serde::{Deserialize, Serialize};

use super::ops::Padding;
use crate::error::{Error, Result};

pub const DEFAULT_DROPOUT: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        padding: Padding,
        relu: bool,
    },
    Maxpool {
        pool_h: usize,
        pool_w: usize,
    },
    Flatten,
    Dense {
        units: usize,
        relu: bool,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel_h: usize, kernel_w: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel_h,
            kernel_w,
            padding: Padding::Same,
            relu: true,
        }
    }

    pub fn pool(pool_h: usize, pool_w: usize) -> Self {
        LayerSpec::Maxpool { pool_h, pool_w }
    }

    pub fn dense(units: usize, relu: bool) -> Self {
        LayerSpec::Dense { units, relu }
    }
}

/// Which echo feature the network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// 32 x 5 log-power spectrogram, fed as a 32x5x1 image.
    Spectrogram,
    /// 147-bin narrowband PSD in dB, fed as a 1x147x1 image.
    Psd,
}

impl FeatureKind {
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            FeatureKind::Spectrogram => [32, 5, 1],
            FeatureKind::Psd => [1, 147, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnArch {
    pub name: String,
    pub feature: FeatureKind,
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

impl CnnArch {
    /// Output shape of every layer, validating the chain on the way.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::Shape(format!("layer {idx} ({layer:?}): {msg}"));
            shape = match *layer {
                LayerSpec::Conv { filters, kernel_h, kernel_w, padding, .. } => {
                    let [h, w, _] = shape[..] else {
                        return Err(bad(format!("needs an image input, got {shape:?}")));
                    };
                    if filters == 0 || kernel_h == 0 || kernel_w == 0 {
                        return Err(bad("filter count and size must be positive".into()));
                    }
                    match padding {
                        Padding::Same => vec![h, w, filters],
                        Padding::Valid if kernel_h <= h && kernel_w <= w => {
                            vec![h - kernel_h + 1, w - kernel_w + 1, filters]
                        }
                        Padding::Valid => return Err(bad(format!("kernel larger than {h}x{w} input"))),
                    }
                }
                LayerSpec::Maxpool { pool_h, pool_w } => {
                    let [h, w, c] = shape[..] else {
                        return Err(bad(format!("needs an image input, got {shape:?}")));
                    };
                    if pool_h == 0 || pool_w == 0 || pool_h > h || pool_w > w {
                        return Err(bad(format!("{pool_h}x{pool_w} window does not fit {h}x{w}")));
                    }
                    vec![h / pool_h, w / pool_w, c]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Dense { units, .. } => {
                    if shape.len() != 1 {
                        return Err(bad(format!("needs a flattened input, got {shape:?}")));
                    }
                    if units == 0 {
                        return Err(bad("units must be positive".into()));
                    }
                    vec![units]
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad(format!("rate {rate} outside [0, 1)")));
                    }
                    shape
                }
                LayerSpec::Softmax => {
                    if idx + 1 != self.layers.len() {
                        return Err(bad("softmax must be the last layer".into()));
                    }
                    shape
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        if self.classes < 2 {
            return Err(Error::Argument(format!("need at least 2 classes, got {}", self.classes)));
        }
        match shapes.last() {
            Some(s) if s == &[self.classes] => Ok(()),
            other => Err(Error::Shape(format!(
                "network output {other:?} does not match {} classes",
                self.classes
            ))),
        }
    }

    /// The same stack with a different class count (resizes the last dense layer).
    pub fn with_classes(&self, classes: usize) -> Self {
        let mut arch = self.clone();
        if let Some(LayerSpec::Dense { units, .. }) = arch
            .layers
            .iter_mut()
            .rev()
            .find(|l| matches!(l, LayerSpec::Dense { .. }))
        {
            *units = classes;
        }
        arch.classes = classes;
        arch
    }

    pub fn with_dropout(&self, rate: f64) -> Self {
        let mut arch = self.clone();
        for layer in &mut arch.layers {
            if let LayerSpec::Dropout { rate: r } = layer {
                *r = rate;
            }
        }
        arch
    }
}

/// Weight plus bias count summed over the conv and dense layers.
pub fn count_params(arch: &CnnArch) -> usize {
    let mut shape = arch.input.to_vec();
    let mut total = 0;
    for layer in &arch.layers {
        match *layer {
            LayerSpec::Conv { filters, kernel_h, kernel_w, .. } => {
                let channels = shape.last().copied().unwrap_or(1);
                total += kernel_h * kernel_w * channels * filters + filters;
            }
            LayerSpec::Dense { units, .. } => {
                total += shape.iter().product::<usize>() * units + units;
            }
            _ => {}
        }
        shape = next_shape(&shape, layer);
    }
    total
}

fn next_shape(shape: &[usize], layer: &LayerSpec) -> Vec<usize> {
    match (*layer, shape) {
        (LayerSpec::Conv { filters, kernel_h, kernel_w, padding, .. }, &[h, w, _]) => match padding {
            Padding::Same => vec![h, w, filters],
            Padding::Valid => vec![(h + 1).saturating_sub(kernel_h), (w + 1).saturating_sub(kernel_w), filters],
        },
        (LayerSpec::Maxpool { pool_h, pool_w }, &[h, w, c]) => {
            vec![h / pool_h.max(1), w / pool_w.max(1), c]
        }
        (LayerSpec::Flatten, s) => vec![s.iter().product()],
        (LayerSpec::Dense { units, .. }, _) => vec![units],
        (_, s) => s.to_vec(),
    }
}

const NAMES: &[&str] = &["A", "B", "C", "D", "E", "F", "G", "DNN-psd", "DNN-spec", "CNN-psd"];

pub fn named_arch_names() -> &'static [&'static str] {
    NAMES
}

/// Builds one of the tested stacks for `classes` rooms.
///
/// `A`..`G` are spectrogram CNNs with 1 to 5 conv layers of 4x4 filters, 2x2
/// pooling after the first two convs and a dense-1024 / dense-K head
/// (`CNN-A` and friends are accepted too). `DNN-psd` and `DNN-spec` are the
/// two-hidden-layer (256, 256) networks over the flattened inputs, and
/// `CNN-psd` is CNN-C with 1x4 filters and 1x2 pooling over the PSD row.
pub fn build_named_arch(name: &str, classes: usize) -> Result<CnnArch> {
    let key = name.strip_prefix("CNN-").filter(|k| k.len() == 1).unwrap_or(name);
    let (feature, body): (FeatureKind, Vec<LayerSpec>) = match key {
        "A" => (FeatureKind::Spectrogram, vec![LayerSpec::conv(16, 4, 4), LayerSpec::pool(2, 2)]),
        "B" => (FeatureKind::Spectrogram, two_conv(16, 16, 4, 4, 2, 2)),
        "C" => (FeatureKind::Spectrogram, two_conv(16, 32, 4, 4, 2, 2)),
        "D" => (FeatureKind::Spectrogram, two_conv(32, 32, 4, 4, 2, 2)),
        "E" | "F" | "G" => {
            let extra: &[usize] = match key {
                "E" => &[64],
                "F" => &[64, 128],
                _ => &[64, 128, 256],
            };
            let mut body = two_conv(16, 32, 4, 4, 2, 2);
            body.extend(extra.iter().map(|&f| LayerSpec::conv(f, 4, 4)));
            (FeatureKind::Spectrogram, body)
        }
        "CNN-psd" => (FeatureKind::Psd, two_conv(16, 32, 1, 4, 1, 2)),
        "DNN-psd" | "DNN-spec" => {
            let feature = if key == "DNN-psd" { FeatureKind::Psd } else { FeatureKind::Spectrogram };
            let layers = vec![
                LayerSpec::Flatten,
                LayerSpec::dense(256, true),
                LayerSpec::dense(256, true),
                LayerSpec::dense(classes, false),
                LayerSpec::Softmax,
            ];
            let arch = CnnArch {
                name: key.to_string(),
                feature,
                input: feature.input_shape(),
                layers,
                classes,
            };
            arch.validate()?;
            return Ok(arch);
        }
        _ => {
            return Err(Error::Argument(format!(
                "unknown architecture `{name}`; expected one of {NAMES:?}"
            )))
        }
    };
    let mut layers = body;
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::dense(1024, true),
        LayerSpec::Dropout { rate: DEFAULT_DROPOUT },
        LayerSpec::dense(classes, false),
        LayerSpec::Softmax,
    ]);
    let arch = CnnArch {
        name: if key.len() == 1 { format!("CNN-{key}") } else { key.to_string() },
        feature,
        input: feature.input_shape(),
        layers,
        classes,
    };
    arch.validate()?;
    Ok(arch)
}

/// CNN-C with other filter counts, square filter size or head depth.
/// `dense_layers` counts every dense layer including the K-way output.
pub fn cnn_variant(filters: (usize, usize), kernel: usize, dense_layers: usize, classes: usize) -> Result<CnnArch> {
    if dense_layers < 2 {
        return Err(Error::Argument("need at least two dense layers".into()));
    }
    let mut layers = two_conv(filters.0, filters.1, kernel, kernel, 2, 2);
    layers.push(LayerSpec::Flatten);
    for _ in 1..dense_layers {
        layers.push(LayerSpec::dense(1024, true));
        layers.push(LayerSpec::Dropout { rate: DEFAULT_DROPOUT });
    }
    layers.extend([LayerSpec::dense(classes, false), LayerSpec::Softmax]);
    let arch = CnnArch {
        name: format!("CNN-C[f={}/{},k={kernel},dense={dense_layers}]", filters.0, filters.1),
        feature: FeatureKind::Spectrogram,
        input: FeatureKind::Spectrogram.input_shape(),
        layers,
        classes,
    };
    arch.validate()?;
    Ok(arch)
}

fn two_conv(f1: usize, f2: usize, kh: usize, kw: usize, ph: usize, pw: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(f1, kh, kw),
        LayerSpec::pool(ph, pw),
        LayerSpec::conv(f2, kh, kw),
        LayerSpec::pool(ph, pw),
    ]
}
