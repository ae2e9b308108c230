use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::params::{Layout, LayoutEntry, ParamVector};
use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    /// 3×3 kernel, stride 1, zero "same" padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
    },
    /// 2×2 average pooling with stride 2.
    AvgPool2,
    /// Mean over the spatial axes, `[C, H, W] → [C]`.
    GlobalMean,
    Flatten,
}

impl Layer {
    fn descriptor(&self) -> String {
        match *self {
            Layer::Dense { inputs, outputs } => format!("dense({inputs},{outputs})"),
            Layer::Relu => "relu".into(),
            Layer::Conv2d {
                in_channels,
                out_channels,
            } => format!("conv2d({in_channels},{out_channels})"),
            Layer::AvgPool2 => "avgpool2".into(),
            Layer::GlobalMean => "global_mean".into(),
            Layer::Flatten => "flatten".into(),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let bad = || NnError::InvalidSpec(format!("unknown layer `{s}`"));
        let pair = |args: &str| -> Result<(usize, usize)> {
            let (a, b) = args.split_once(',').ok_or_else(bad)?;
            Ok((
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ))
        };
        let s = s.trim();
        match s {
            "relu" => return Ok(Layer::Relu),
            "avgpool2" => return Ok(Layer::AvgPool2),
            "global_mean" => return Ok(Layer::GlobalMean),
            "flatten" => return Ok(Layer::Flatten),
            _ => {}
        }
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let (a, b) = pair(args)?;
        match name {
            "dense" => Ok(Layer::Dense {
                inputs: a,
                outputs: b,
            }),
            "conv2d" => Ok(Layer::Conv2d {
                in_channels: a,
                out_channels: b,
            }),
            _ => Err(bad()),
        }
    }

    /// `(weight shape, bias length, fan-in)` for layers with parameters.
    fn param_shapes(&self) -> Option<(Vec<usize>, usize, usize)> {
        match *self {
            Layer::Dense { inputs, outputs } => Some((vec![outputs, inputs], outputs, inputs)),
            Layer::Conv2d {
                in_channels,
                out_channels,
            } => Some((
                vec![out_channels, in_channels, 3, 3],
                out_channels,
                in_channels * 9,
            )),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Weights `N(0, 2/fan_in)`, zero biases.
    HeNormal,
    /// Weights and biases `U(−1/√fan_in, 1/√fan_in)`.
    UniformDefault,
}

impl Init {
    fn as_str(&self) -> &'static str {
        match self {
            Init::HeNormal => "he_normal",
            Init::UniformDefault => "uniform_default",
        }
    }
}

/// Network architecture with validated layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    num_classes: usize,
    init: Init,
    // Activation shape after each layer; shapes[0] is the input.
    shapes: Vec<Vec<usize>>,
    layout: Arc<Layout>,
    // Index into `layout.entries` of each layer's weight, if any.
    param_slots: Vec<Option<usize>>,
}

impl NetworkSpec {
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        num_classes: usize,
        init: Init,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NnError::InvalidSpec(format!(
                "bad input shape {input_shape:?}"
            )));
        }
        if num_classes < 2 {
            return Err(NnError::InvalidSpec("need at least 2 classes".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        let mut entries = Vec::new();
        let mut param_slots = Vec::new();
        let mut offset = 0;
        for (i, layer) in layers.iter().enumerate() {
            let cur = shapes.last().unwrap().clone();
            let mismatch = |what: &str| {
                NnError::InvalidSpec(format!(
                    "layer {i} ({}) {what}, got {cur:?}",
                    layer.descriptor()
                ))
            };
            let next = match *layer {
                Layer::Dense { inputs, outputs } => {
                    if cur != [inputs] || outputs == 0 {
                        return Err(mismatch(&format!("expects input [{inputs}]")));
                    }
                    vec![outputs]
                }
                Layer::Relu => cur.clone(),
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                } => {
                    if cur.len() != 3 || cur[0] != in_channels || out_channels == 0 {
                        return Err(mismatch(&format!("expects input [{in_channels}, H, W]")));
                    }
                    vec![out_channels, cur[1], cur[2]]
                }
                Layer::AvgPool2 => {
                    if cur.len() != 3 || cur[1] % 2 != 0 || cur[2] % 2 != 0 {
                        return Err(mismatch("expects [C, H, W] with even H and W"));
                    }
                    vec![cur[0], cur[1] / 2, cur[2] / 2]
                }
                Layer::GlobalMean => {
                    if cur.len() != 3 {
                        return Err(mismatch("expects [C, H, W]"));
                    }
                    vec![cur[0]]
                }
                Layer::Flatten => vec![cur.iter().product()],
            };
            if let Some((wshape, blen, _)) = layer.param_shapes() {
                param_slots.push(Some(entries.len()));
                let wlen: usize = wshape.iter().product();
                entries.push(LayoutEntry {
                    name: format!("layer{i}.weight"),
                    shape: wshape,
                    offset,
                });
                offset += wlen;
                entries.push(LayoutEntry {
                    name: format!("layer{i}.bias"),
                    shape: vec![blen],
                    offset,
                });
                offset += blen;
            } else {
                param_slots.push(None);
            }
            shapes.push(next);
        }
        if shapes.last().unwrap() != &[num_classes] {
            return Err(NnError::InvalidSpec(format!(
                "output shape {:?} does not match {num_classes} classes",
                shapes.last().unwrap()
            )));
        }
        let layout = Arc::new(Layout {
            entries,
            len: offset,
        });
        Ok(Self {
            input_shape,
            layers,
            num_classes,
            init,
            shapes,
            layout,
            param_slots,
        })
    }

    /// Flatten → dense(784, 5) → ReLU → dense(5, classes); 3,985 parameters
    /// for 10 classes.
    pub fn mnist_tiny(num_classes: usize) -> Self {
        Self::new(
            vec![1, 28, 28],
            vec![
                Layer::Flatten,
                Layer::Dense {
                    inputs: 784,
                    outputs: 5,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: 5,
                    outputs: num_classes,
                },
            ],
            num_classes,
            Init::HeNormal,
        )
        .expect("fixed architecture")
    }

    /// conv32 → ReLU → pool → conv64 → ReLU → pool → global mean → dense on
    /// 3×32×32 inputs; 20,042 parameters for 10 classes.
    pub fn cifar_tiny(num_classes: usize) -> Self {
        Self::new(
            vec![3, 32, 32],
            vec![
                Layer::Conv2d {
                    in_channels: 3,
                    out_channels: 32,
                },
                Layer::Relu,
                Layer::AvgPool2,
                Layer::Conv2d {
                    in_channels: 32,
                    out_channels: 64,
                },
                Layer::Relu,
                Layer::AvgPool2,
                Layer::GlobalMean,
                Layer::Dense {
                    inputs: 64,
                    outputs: num_classes,
                },
            ],
            num_classes,
            Init::HeNormal,
        )
        .expect("fixed architecture")
    }

    /// Flatten → dense(features, hidden) → ReLU → dense(hidden, classes).
    pub fn mlp(input_shape: Vec<usize>, hidden: usize, num_classes: usize) -> Result<Self> {
        let features = input_shape.iter().product();
        Self::new(
            input_shape,
            vec![
                Layer::Flatten,
                Layer::Dense {
                    inputs: features,
                    outputs: hidden,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: hidden,
                    outputs: num_classes,
                },
            ],
            num_classes,
            Init::HeNormal,
        )
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn init_scheme(&self) -> Init {
        self.init
    }

    pub fn num_params(&self) -> usize {
        self.layout.len
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub(crate) fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// Offsets of layer `i`'s weight and bias, if it has parameters.
    pub(crate) fn param_offsets(&self, i: usize) -> Option<(usize, usize)> {
        self.param_slots[i].map(|k| {
            (
                self.layout.entries[k].offset,
                self.layout.entries[k + 1].offset,
            )
        })
    }

    /// Deterministic initialization from `seed`.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.layout.len];
        for (i, layer) in self.layers.iter().enumerate() {
            let Some((wshape, blen, fan_in)) = layer.param_shapes() else {
                continue;
            };
            let (w, b) = self.param_offsets(i).unwrap();
            let wlen: usize = wshape.iter().product();
            let fan_in = fan_in as f64;
            match self.init {
                Init::HeNormal => {
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                    for v in &mut values[w..w + wlen] {
                        *v = normal.sample(&mut rng);
                    }
                }
                Init::UniformDefault => {
                    let bound = 1.0 / fan_in.sqrt();
                    for v in &mut values[w..w + wlen] {
                        *v = rng.random_range(-bound..bound);
                    }
                    for v in &mut values[b..b + blen] {
                        *v = rng.random_range(-bound..bound);
                    }
                }
            }
        }
        ParamVector::new(values, self.layout.clone()).expect("layout length")
    }

    /// Text form used in checkpoints, e.g.
    /// `input=1x28x28;classes=10;init=he_normal;layers=flatten,dense(784,5),...`.
    pub fn descriptor(&self) -> String {
        let input: Vec<String> = self.input_shape.iter().map(|d| d.to_string()).collect();
        let layers: Vec<String> = self.layers.iter().map(Layer::descriptor).collect();
        format!(
            "input={};classes={};init={};layers={}",
            input.join("x"),
            self.num_classes,
            self.init.as_str(),
            layers.join(",")
        )
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        let bad = |what: &str| NnError::InvalidSpec(format!("descriptor {what}: `{s}`"));
        let mut input = None;
        let mut classes = None;
        let mut init = None;
        let mut layers = None;
        for part in s.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad("has a field without `=`"))?;
            match k.trim() {
                "input" => {
                    let dims: std::result::Result<Vec<usize>, _> =
                        v.split('x').map(|d| d.trim().parse()).collect();
                    input = Some(dims.map_err(|_| bad("has a bad input shape"))?);
                }
                "classes" => {
                    classes = Some(v.trim().parse().map_err(|_| bad("has a bad class count"))?)
                }
                "init" => {
                    init = Some(match v.trim() {
                        "he_normal" => Init::HeNormal,
                        "uniform_default" => Init::UniformDefault,
                        _ => return Err(bad("has an unknown init")),
                    })
                }
                "layers" => {
                    layers = Some(
                        split_layers(v)
                            .into_iter()
                            .map(Layer::parse)
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                _ => return Err(bad("has an unknown field")),
            }
        }
        Self::new(
            input.ok_or_else(|| bad("lacks input"))?,
            layers.ok_or_else(|| bad("lacks layers"))?,
            classes.ok_or_else(|| bad("lacks classes"))?,
            init.ok_or_else(|| bad("lacks init"))?,
        )
    }
}

// Splits on commas that are not inside parentheses.
fn split_layers(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::FlatVector;

    #[test]
    fn reference_parameter_counts() {
        assert_eq!(
            NetworkSpec::mnist_tiny(10).num_params(),
            784 * 5 + 5 + 5 * 10 + 10
        );
        assert_eq!(NetworkSpec::mnist_tiny(10).num_params(), 3985);
        let cifar = NetworkSpec::cifar_tiny(10).num_params();
        assert_eq!(cifar, 3 * 32 * 9 + 32 + 32 * 64 * 9 + 64 + 64 * 10 + 10);
        assert!((18_000..=22_000).contains(&cifar));
    }

    #[test]
    fn rejects_incompatible_layers() {
        let r = NetworkSpec::new(
            vec![1, 4, 4],
            vec![Layer::Dense {
                inputs: 16,
                outputs: 2,
            }],
            2,
            Init::HeNormal,
        );
        assert!(r.is_err());
        let r = NetworkSpec::new(
            vec![1, 3, 3],
            vec![Layer::AvgPool2, Layer::Flatten],
            2,
            Init::HeNormal,
        );
        assert!(r.is_err());
        let r = NetworkSpec::new(
            vec![4],
            vec![Layer::Dense {
                inputs: 4,
                outputs: 3,
            }],
            2,
            Init::HeNormal,
        );
        assert!(r.is_err());
        let r = NetworkSpec::new(
            vec![4],
            vec![Layer::Conv2d {
                in_channels: 1,
                out_channels: 2,
            }],
            2,
            Init::HeNormal,
        );
        assert!(r.is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let spec = NetworkSpec::mnist_tiny(10);
        assert_eq!(spec.init(7).values(), spec.init(7).values());
        assert_ne!(spec.init(7).values(), spec.init(8).values());
    }

    #[test]
    fn he_normal_scale() {
        let spec = NetworkSpec::new(
            vec![100],
            vec![Layer::Dense {
                inputs: 100,
                outputs: 100,
            }],
            100,
            Init::HeNormal,
        )
        .unwrap();
        let p = spec.init(3);
        let w = &p.values()[..10_000];
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = (2.0f64 / 100.0).sqrt();
        // Standard error of a sample std is about std/√(2n).
        let se = target / (2.0 * n).sqrt();
        assert!(
            (var.sqrt() - target).abs() < 3.0 * se,
            "{} vs {target}",
            var.sqrt()
        );
        assert!(p.values()[10_000..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn uniform_default_bounds() {
        let spec = NetworkSpec::mnist_tiny(10).with_init(Init::UniformDefault);
        let p = spec.init(1);
        assert!(p.values()[..3920].iter().all(|v| v.abs() <= 1.0 / 28.0));
        assert!(p.values()[3920..3925].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn descriptor_round_trip() {
        for spec in [
            NetworkSpec::mnist_tiny(10),
            NetworkSpec::cifar_tiny(100),
            NetworkSpec::mnist_tiny(3).with_init(Init::UniformDefault),
        ] {
            let d = spec.descriptor();
            assert_eq!(NetworkSpec::from_descriptor(&d).unwrap(), spec);
        }
        assert!(NetworkSpec::from_descriptor("input=4;classes=2").is_err());
        assert!(NetworkSpec::from_descriptor(
            "input=4;classes=2;init=he_normal;layers=dense(4,2),bogus"
        )
        .is_err());
    }

    #[test]
    fn layout_is_contiguous() {
        let spec = NetworkSpec::cifar_tiny(10);
        let mut expected = 0;
        for e in &spec.layout().entries {
            assert_eq!(e.offset, expected);
            expected += e.shape.iter().product::<usize>();
        }
        assert_eq!(expected, spec.num_params());
    }
}
