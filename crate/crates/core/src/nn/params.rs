use std::sync::Arc;

use super::{NnError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named slices of a flat parameter vector, in storage order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
    pub len: usize,
}

impl Layout {
    /// A single unnamed block of `len` values.
    pub fn flat(len: usize) -> Self {
        Self {
            entries: vec![LayoutEntry {
                name: "flat".into(),
                shape: vec![len],
                offset: 0,
            }],
            len,
        }
    }

    pub fn get(&self, name: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Read/write access to a flat vector of reals.
pub trait FlatVector {
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];

    fn norm(&self) -> f64 {
        l2_norm(self.values())
    }

    fn dim(&self) -> usize {
        self.values().len()
    }
}

/// Flattened model parameters together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        if values.len() != layout.len {
            return Err(NnError::ShapeMismatch(format!(
                "layout holds {} values, got {}",
                layout.len,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NnError::InvalidArgument(format!(
                "non-finite parameter at index {i}"
            )));
        }
        Ok(Self { values, layout })
    }

    /// A vector with a single flat layout block.
    pub fn from_flat(values: Vec<f64>) -> Result<Self> {
        let layout = Arc::new(Layout::flat(values.len()));
        Self::new(values, layout)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .get(name)
            .map(|e| &self.values[e.offset..e.offset + e.len()])
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl FlatVector for ParamVector {
    fn values(&self) -> &[f64] {
        &self.values
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Derivative of a loss with respect to a [`ParamVector`], in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }
}

impl FlatVector for Gradient {
    fn values(&self) -> &[f64] {
        &self.values
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    // Scaled accumulation so huge or tiny entries neither overflow nor underflow.
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale
        * v.iter()
            .map(|x| (x / scale) * (x / scale))
            .sum::<f64>()
            .sqrt()
}

/// Rescales `v` in place to norm at most `c`; returns the scale applied.
pub fn clip_in_place(v: &mut [f64], c: f64) -> f64 {
    if c <= 0.0 {
        v.fill(0.0);
        return 0.0;
    }
    let norm = l2_norm(v);
    if norm <= c {
        return 1.0;
    }
    let mut factor = c / norm;
    for x in v.iter_mut() {
        *x *= factor;
    }
    // Rounding can leave the norm an ulp above c; shrink until it is not, so
    // clipping twice is the same as clipping once.
    while l2_norm(v) > c {
        let shrink = 1.0 - f64::EPSILON;
        factor *= shrink;
        for x in v.iter_mut() {
            *x *= shrink;
        }
    }
    factor
}

/// `x·min(c/‖x‖, 1)`. An infinite radius is the identity.
pub fn clip_by_norm<V: FlatVector + Clone>(v: &V, c: f64) -> V {
    let mut out = v.clone();
    clip_in_place(out.values_mut(), c);
    out
}
