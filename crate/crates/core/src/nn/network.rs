use super::params::{FlatVector, Gradient, ParamVector};
use super::spec::{Layer, NetworkSpec};
use super::{NnError, Result};

/// Examples stored contiguously, `inputs.len() == labels.len() × input_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>) -> Self {
        Self { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example(&self, i: usize) -> (&[f64], usize) {
        let k = self.inputs.len() / self.labels.len();
        (&self.inputs[i * k..(i + 1) * k], self.labels[i])
    }
}

fn check_batch(spec: &NetworkSpec, params: &ParamVector, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    check_params(spec, params)?;
    if batch.inputs.len() != batch.len() * spec.input_len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} labels need {} input values, got {}",
            batch.len(),
            batch.len() * spec.input_len(),
            batch.inputs.len()
        )));
    }
    if let Some(&label) = batch.labels.iter().find(|&&l| l >= spec.num_classes()) {
        return Err(NnError::LabelOutOfRange {
            label,
            classes: spec.num_classes(),
        });
    }
    Ok(())
}

fn check_params(spec: &NetworkSpec, params: &ParamVector) -> Result<()> {
    if params.dim() != spec.num_params() {
        return Err(NnError::ShapeMismatch(format!(
            "network has {} parameters, vector has {}",
            spec.num_params(),
            params.dim()
        )));
    }
    Ok(())
}

// Activations of one forward pass, reused across examples.
struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

impl Scratch {
    fn new(spec: &NetworkSpec) -> Self {
        let acts = spec
            .shapes()
            .iter()
            .map(|s| vec![0.0; s.iter().product()])
            .collect();
        Self {
            acts,
            delta: Vec::new(),
            next_delta: Vec::new(),
        }
    }
}

fn forward_into(spec: &NetworkSpec, w: &[f64], input: &[f64], s: &mut Scratch) {
    s.acts[0].copy_from_slice(input);
    let shapes = spec.shapes();
    for (i, layer) in spec.layers().iter().enumerate() {
        let (before, after) = s.acts.split_at_mut(i + 1);
        let x = &before[i];
        let y = &mut after[0];
        match *layer {
            Layer::Dense { inputs, outputs } => {
                let (wo, bo) = spec.param_offsets(i).unwrap();
                for o in 0..outputs {
                    let row = &w[wo + o * inputs..wo + (o + 1) * inputs];
                    y[o] = w[bo + o] + row.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Layer::Relu => {
                for (o, &v) in y.iter_mut().zip(x.iter()) {
                    *o = v.max(0.0);
                }
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
            } => {
                let (h, wd) = (shapes[i][1], shapes[i][2]);
                let (wo, bo) = spec.param_offsets(i).unwrap();
                conv_forward(
                    x,
                    &w[wo..bo],
                    &w[bo..bo + out_channels],
                    y,
                    in_channels,
                    out_channels,
                    h,
                    wd,
                );
            }
            Layer::AvgPool2 => {
                let (c, h, wd) = (shapes[i][0], shapes[i][1], shapes[i][2]);
                let (ho, wo) = (h / 2, wd / 2);
                for ch in 0..c {
                    for r in 0..ho {
                        for col in 0..wo {
                            let base = ch * h * wd + 2 * r * wd + 2 * col;
                            y[ch * ho * wo + r * wo + col] =
                                0.25 * (x[base] + x[base + 1] + x[base + wd] + x[base + wd + 1]);
                        }
                    }
                }
            }
            Layer::GlobalMean => {
                let (c, area) = (shapes[i][0], shapes[i][1] * shapes[i][2]);
                for ch in 0..c {
                    y[ch] = x[ch * area..(ch + 1) * area].iter().sum::<f64>() / area as f64;
                }
            }
            Layer::Flatten => y.copy_from_slice(x),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    k: &[f64],
    b: &[f64],
    y: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
) {
    let area = h * w;
    for o in 0..cout {
        let out = &mut y[o * area..(o + 1) * area];
        out.fill(b[o]);
        for c in 0..cin {
            let plane = &x[c * area..(c + 1) * area];
            let kern = &k[(o * cin + c) * 9..(o * cin + c + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let kv = kern[ky * 3 + kx];
                    // Output rows/cols whose tap (r+ky−1, q+kx−1) is inside the image.
                    let r0 = if ky == 0 { 1 } else { 0 };
                    let r1 = if ky == 2 { h - 1 } else { h };
                    let q0 = if kx == 0 { 1 } else { 0 };
                    let q1 = if kx == 2 { w - 1 } else { w };
                    for r in r0..r1 {
                        let src = (r + ky - 1) * w;
                        let dst = r * w;
                        for q in q0..q1 {
                            out[dst + q] += kv * plane[src + q + kx - 1];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    k: &[f64],
    dy: &[f64],
    dk: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
) {
    let area = h * w;
    let mut dx = dx;
    if let Some(d) = dx.as_deref_mut() {
        d.fill(0.0);
    }
    for o in 0..cout {
        let g = &dy[o * area..(o + 1) * area];
        db[o] += g.iter().sum::<f64>();
        for c in 0..cin {
            let plane = &x[c * area..(c + 1) * area];
            let kidx = (o * cin + c) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let r0 = if ky == 0 { 1 } else { 0 };
                    let r1 = if ky == 2 { h - 1 } else { h };
                    let q0 = if kx == 0 { 1 } else { 0 };
                    let q1 = if kx == 2 { w - 1 } else { w };
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let src = (r + ky - 1) * w;
                        let dst = r * w;
                        for q in q0..q1 {
                            acc += g[dst + q] * plane[src + q + kx - 1];
                        }
                    }
                    dk[kidx + ky * 3 + kx] += acc;
                    if let Some(d) = dx.as_deref_mut() {
                        let kv = k[kidx + ky * 3 + kx];
                        let dplane = &mut d[c * area..(c + 1) * area];
                        for r in r0..r1 {
                            let src = (r + ky - 1) * w;
                            let dst = r * w;
                            for q in q0..q1 {
                                dplane[src + q + kx - 1] += kv * g[dst + q];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Softmax cross-entropy of one example; writes `softmax − onehot`
/// into `dlogits`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize, dlogits: &mut [f64]) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (d, &z) in dlogits.iter_mut().zip(logits) {
        *d = (z - max).exp();
        sum += *d;
    }
    for d in dlogits.iter_mut() {
        *d /= sum;
    }
    dlogits[label] -= 1.0;
    max + sum.ln() - logits[label]
}

// Accumulates `scale × ∂loss/∂params` for one example into `grad` and
// returns the example's loss. The forward pass must already be in `s`.
fn backward(
    spec: &NetworkSpec,
    w: &[f64],
    label: usize,
    scale: f64,
    s: &mut Scratch,
    grad: &mut [f64],
) -> f64 {
    let shapes = spec.shapes();
    let n = spec.layers().len();
    s.delta.resize(spec.num_classes(), 0.0);
    let loss = softmax_cross_entropy(&s.acts[n], label, &mut s.delta);
    for d in s.delta.iter_mut() {
        *d *= scale;
    }
    for i in (0..n).rev() {
        let x = &s.acts[i];
        let need_dx = i > 0;
        s.next_delta.resize(x.len(), 0.0);
        let dy = &s.delta;
        let dx = &mut s.next_delta;
        match spec.layers()[i] {
            Layer::Dense { inputs, outputs } => {
                let (wo, bo) = spec.param_offsets(i).unwrap();
                for o in 0..outputs {
                    let g = dy[o];
                    grad[bo + o] += g;
                    if g != 0.0 {
                        for (gw, &xi) in grad[wo + o * inputs..wo + (o + 1) * inputs]
                            .iter_mut()
                            .zip(x.iter())
                        {
                            *gw += g * xi;
                        }
                    }
                }
                if need_dx {
                    dx.fill(0.0);
                    for o in 0..outputs {
                        let g = dy[o];
                        if g != 0.0 {
                            for (d, &wv) in dx
                                .iter_mut()
                                .zip(&w[wo + o * inputs..wo + (o + 1) * inputs])
                            {
                                *d += g * wv;
                            }
                        }
                    }
                }
            }
            Layer::Relu => {
                for ((d, &g), &v) in dx.iter_mut().zip(dy.iter()).zip(x.iter()) {
                    *d = if v > 0.0 { g } else { 0.0 };
                }
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
            } => {
                let (h, wd) = (shapes[i][1], shapes[i][2]);
                let (wo, bo) = spec.param_offsets(i).unwrap();
                let (gk, gb) = grad[wo..bo + out_channels].split_at_mut(bo - wo);
                let target = if need_dx {
                    Some(dx.as_mut_slice())
                } else {
                    None
                };
                conv_backward(
                    x,
                    &w[wo..bo],
                    dy,
                    gk,
                    gb,
                    target,
                    in_channels,
                    out_channels,
                    h,
                    wd,
                );
            }
            Layer::AvgPool2 => {
                let (c, h, wd) = (shapes[i][0], shapes[i][1], shapes[i][2]);
                let (ho, wo) = (h / 2, wd / 2);
                for ch in 0..c {
                    for r in 0..ho {
                        for col in 0..wo {
                            let g = 0.25 * dy[ch * ho * wo + r * wo + col];
                            let base = ch * h * wd + 2 * r * wd + 2 * col;
                            dx[base] = g;
                            dx[base + 1] = g;
                            dx[base + wd] = g;
                            dx[base + wd + 1] = g;
                        }
                    }
                }
            }
            Layer::GlobalMean => {
                let (c, area) = (shapes[i][0], shapes[i][1] * shapes[i][2]);
                for ch in 0..c {
                    let g = dy[ch] / area as f64;
                    dx[ch * area..(ch + 1) * area].fill(g);
                }
            }
            Layer::Flatten => dx.copy_from_slice(dy),
        }
        std::mem::swap(&mut s.delta, &mut s.next_delta);
    }
    loss
}

/// Logits of a single example.
pub fn forward(params: &ParamVector, spec: &NetworkSpec, input: &[f64]) -> Result<Vec<f64>> {
    check_params(spec, params)?;
    if input.len() != spec.input_len() {
        return Err(NnError::ShapeMismatch(format!(
            "expected {} inputs, got {}",
            spec.input_len(),
            input.len()
        )));
    }
    let mut s = Scratch::new(spec);
    forward_into(spec, params.values(), input, &mut s);
    Ok(s.acts.pop().unwrap())
}

fn argmax(v: &[f64]) -> usize {
    // Ties resolve to the first index.
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of each example.
pub fn predict(params: &ParamVector, spec: &NetworkSpec, batch: &Batch) -> Result<Vec<usize>> {
    check_batch(spec, params, batch)?;
    let mut s = Scratch::new(spec);
    let n = spec.layers().len();
    Ok((0..batch.len())
        .map(|i| {
            forward_into(spec, params.values(), batch.example(i).0, &mut s);
            argmax(&s.acts[n])
        })
        .collect())
}

/// Mean cross-entropy loss and its exact gradient.
pub fn loss_and_grad(
    params: &ParamVector,
    spec: &NetworkSpec,
    batch: &Batch,
) -> Result<(f64, Gradient)> {
    check_batch(spec, params, batch)?;
    let mut s = Scratch::new(spec);
    let mut grad = Gradient::zeros(spec.num_params());
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (x, y) = batch.example(i);
        forward_into(spec, params.values(), x, &mut s);
        total += backward(spec, params.values(), y, scale, &mut s, &mut grad.values);
    }
    Ok((total * scale, grad))
}

/// Mean cross-entropy loss without the gradient.
pub fn loss(params: &ParamVector, spec: &NetworkSpec, batch: &Batch) -> Result<f64> {
    check_batch(spec, params, batch)?;
    let mut s = Scratch::new(spec);
    let n = spec.layers().len();
    let mut scratch = vec![0.0; spec.num_classes()];
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (x, y) = batch.example(i);
        forward_into(spec, params.values(), x, &mut s);
        total += softmax_cross_entropy(&s.acts[n], y, &mut scratch);
    }
    Ok(total / batch.len() as f64)
}

/// Calls `f(index, loss, gradient)` with each example's own (unscaled)
/// gradient. The buffer is reused between calls.
pub fn for_each_example_grad<F>(
    params: &ParamVector,
    spec: &NetworkSpec,
    batch: &Batch,
    mut f: F,
) -> Result<()>
where
    F: FnMut(usize, f64, &mut [f64]),
{
    check_batch(spec, params, batch)?;
    let mut s = Scratch::new(spec);
    let mut grad = vec![0.0; spec.num_params()];
    for i in 0..batch.len() {
        let (x, y) = batch.example(i);
        grad.fill(0.0);
        forward_into(spec, params.values(), x, &mut s);
        let l = backward(spec, params.values(), y, 1.0, &mut s, &mut grad);
        f(i, l, &mut grad);
    }
    Ok(())
}

/// Fraction of examples whose arg-max logit is the label.
pub fn evaluate_accuracy(params: &ParamVector, spec: &NetworkSpec, batch: &Batch) -> Result<f64> {
    let preds = predict(params, spec, batch)?;
    let correct = preds
        .iter()
        .zip(&batch.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / batch.len() as f64)
}
