//! Local model: a frozen backbone encoder followed by a trainable head made
//! of a projection network (one or two affine layers) and a linear
//! classifier, plus momentum SGD.

use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{check_dim, Error, Result};
use crate::mathcore::{norm, uniform, RngStream, Vector};
use crate::scalar::Real;

/// Frozen `d -> d_a` affine map followed by `max(0, .)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSpec<T> {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Real> BackboneSpec<T> {
    /// Weights and biases drawn from `U(-sqrt(3/d), sqrt(3/d))`.
    pub fn seeded(rng: &mut RngStream, in_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidParameter("backbone dimensions must be positive".into()));
        }
        let bound = (3.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| T::of(uniform(rng, -bound, bound)))
            .collect();
        let bias = (0..out_dim)
            .map(|_| T::of(uniform(rng, -bound, bound)))
            .collect();
        Ok(Self { in_dim, out_dim, weights, bias })
    }

    /// Row-major `out_dim x in_dim` weights.
    pub fn from_parts(in_dim: usize, out_dim: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        check_dim(in_dim * out_dim, weights.len())?;
        check_dim(out_dim, bias.len())?;
        Ok(Self { in_dim, out_dim, weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn forward(&self, x: &Vector<T>) -> Result<Vector<T>> {
        check_dim(self.in_dim, x.dim())?;
        Vector::new(self.forward_slice(x.as_slice()))
    }

    pub(crate) fn forward_slice(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.out_dim];
        affine(&self.weights, &self.bias, x, &mut out);
        for v in &mut out {
            *v = v.max(T::zero());
        }
        out
    }

    /// Backbone features for every sample, computed once since the backbone
    /// never changes.
    pub fn encode(&self, samples: &[Sample<T>]) -> Result<Vec<Encoded<T>>> {
        samples
            .iter()
            .map(|s| {
                check_dim(self.in_dim, s.x.dim())?;
                Ok(Encoded {
                    features: self.forward_slice(s.x.as_slice()),
                    label: s.y,
                })
            })
            .collect()
    }
}

/// A sample after the frozen backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded<T> {
    pub features: Vec<T>,
    pub label: usize,
}

/// `out = W x + b`, `W` row-major.
pub(crate) fn affine<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let n = x.len();
    for (o, (row, &bias)) in out.iter_mut().zip(w.chunks_exact(n).zip(b)) {
        let mut acc = bias;
        for (&wi, &xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    inputs: usize,
    outputs: usize,
    pub(crate) weights: Vec<T>,
    pub(crate) bias: Vec<T>,
    weight_velocity: Vec<T>,
    bias_velocity: Vec<T>,
}

impl<T: Real> DenseLayer<T> {
    fn init(rng: &mut RngStream, inputs: usize, outputs: usize) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| T::of(uniform(rng, -bound, bound)))
            .collect();
        let bias = (0..outputs).map(|_| T::of(uniform(rng, -bound, bound))).collect();
        Self::with_weights(inputs, outputs, weights, bias)
    }

    fn with_weights(inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T>) -> Self {
        Self {
            inputs,
            outputs,
            weight_velocity: vec![T::zero(); weights.len()],
            bias_velocity: vec![T::zero(); bias.len()],
            weights,
            bias,
        }
    }

    /// Row-major `outputs x inputs` weights, zero momentum.
    pub fn from_parts(inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::InvalidParameter("layer dimensions must be positive".into()));
        }
        check_dim(inputs * outputs, weights.len())?;
        check_dim(outputs, bias.len())?;
        Ok(Self::with_weights(inputs, outputs, weights, bias))
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub(crate) fn forward(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.outputs];
        affine(&self.weights, &self.bias, x, &mut out);
        out
    }

    /// `W^T g`
    pub(crate) fn backward_input(&self, grad_out: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.inputs];
        for (row, &g) in self.weights.chunks_exact(self.inputs).zip(grad_out) {
            if g == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * g;
            }
        }
        out
    }
}

/// Layer widths of a head. `depth` counts projection layers (1 or 2); the
/// classifier is always one extra affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub classes: usize,
    pub depth: usize,
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.depth) {
            return Err(Error::InvalidParameter(format!(
                "projection depth must be 1 or 2, got {}",
                self.depth
            )));
        }
        let widths = [self.input_dim, self.embed_dim, self.classes];
        if widths.contains(&0) || (self.depth == 2 && self.hidden_dim == 0) {
            return Err(Error::InvalidParameter("head layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let proj = if self.depth == 1 {
            self.input_dim * self.embed_dim + self.embed_dim
        } else {
            self.input_dim * self.hidden_dim
                + self.hidden_dim
                + self.hidden_dim * self.embed_dim
                + self.embed_dim
        };
        proj + self.embed_dim * self.classes + self.classes
    }
}

/// Trainable projection and classifier of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub(crate) projection: Vec<DenseLayer<T>>,
    pub(crate) classifier: DenseLayer<T>,
}

/// Intermediate values of a projection pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// Pre-activation of the hidden layer (depth 2 only).
    pub hidden_pre: Option<Vec<T>>,
    /// Unclipped projection output.
    pub embedding: Vec<T>,
}

impl<T: Real> HeadParams<T> {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
    pub fn init(spec: &HeadSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let projection = if spec.depth == 1 {
            vec![DenseLayer::init(rng, spec.input_dim, spec.embed_dim)]
        } else {
            vec![
                DenseLayer::init(rng, spec.input_dim, spec.hidden_dim),
                DenseLayer::init(rng, spec.hidden_dim, spec.embed_dim),
            ]
        };
        let classifier = DenseLayer::init(rng, spec.embed_dim, spec.classes);
        Ok(Self { projection, classifier })
    }

    pub fn from_layers(projection: Vec<DenseLayer<T>>, classifier: DenseLayer<T>) -> Result<Self> {
        if !(1..=2).contains(&projection.len()) {
            return Err(Error::InvalidParameter("projection must have 1 or 2 layers".into()));
        }
        for pair in projection.windows(2) {
            check_dim(pair[0].outputs, pair[1].inputs)?;
        }
        check_dim(projection[projection.len() - 1].outputs, classifier.inputs)?;
        Ok(Self { projection, classifier })
    }

    pub fn spec(&self) -> HeadSpec {
        let first = &self.projection[0];
        HeadSpec {
            input_dim: first.inputs,
            hidden_dim: if self.projection.len() == 2 { first.outputs } else { 0 },
            embed_dim: self.embed_dim(),
            classes: self.classifier.outputs,
            depth: self.projection.len(),
        }
    }

    pub fn depth(&self) -> usize {
        self.projection.len()
    }

    pub fn input_dim(&self) -> usize {
        self.projection[0].inputs
    }

    pub fn embed_dim(&self) -> usize {
        self.classifier.inputs
    }

    pub fn classes(&self) -> usize {
        self.classifier.outputs
    }

    pub fn projection_layers(&self) -> &[DenseLayer<T>] {
        &self.projection
    }

    pub fn classifier(&self) -> &DenseLayer<T> {
        &self.classifier
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer<T>> {
        self.projection.iter().chain(std::iter::once(&self.classifier))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer<T>> {
        self.projection.iter_mut().chain(std::iter::once(&mut self.classifier))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(DenseLayer::param_count).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.spec() == other.spec()
    }

    /// Parameters flattened layer by layer (weights, then bias); momentum
    /// buffers are not included.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        check_dim(self.param_count(), flat.len())?;
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("flat parameter {i}")));
        }
        let mut rest = flat;
        for l in self.layers_mut() {
            let (w, tail) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn trace(&self, features: &[T]) -> ForwardTrace<T> {
        if self.projection.len() == 1 {
            ForwardTrace {
                hidden_pre: None,
                embedding: self.projection[0].forward(features),
            }
        } else {
            let pre = self.projection[0].forward(features);
            let post: Vec<T> = pre.iter().map(|v| v.max(T::zero())).collect();
            ForwardTrace {
                embedding: self.projection[1].forward(&post),
                hidden_pre: Some(pre),
            }
        }
    }

    /// Unclipped embedding `z = h(a; theta)`.
    pub fn project(&self, features: &Vector<T>) -> Result<Vector<T>> {
        check_dim(self.input_dim(), features.dim())?;
        Vector::new(self.trace(features.as_slice()).embedding)
    }

    /// Logits; softmax is applied by the loss.
    pub fn classify(&self, z: &Vector<T>) -> Result<Vector<T>> {
        check_dim(self.embed_dim(), z.dim())?;
        Vector::new(self.classifier.forward(z.as_slice()))
    }

    /// Clipped embedding of backbone features.
    pub fn embed_clipped(&self, features: &[T], bound: T) -> Vec<T> {
        let mut z = self.trace(features).embedding;
        clip_in_place(&mut z, bound);
        z
    }

    pub fn predict(&self, features: &[T], bound: T) -> usize {
        let logits = self.classifier.forward(&self.embed_clipped(features, bound));
        argmax(&logits)
    }

    /// Fraction of `data` classified correctly. Empty input scores 0.
    pub fn accuracy(&self, data: &[Encoded<T>], bound: T) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .iter()
            .filter(|e| self.predict(&e.features, bound) == e.label)
            .count();
        hits as f64 / data.len() as f64
    }
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients shaped like a [`HeadParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads<T> {
    pub projection: Vec<LayerGrads<T>>,
    pub classifier: LayerGrads<T>,
}

impl<T: Real> HeadGrads<T> {
    pub fn zeros_like(params: &HeadParams<T>) -> Self {
        let zero = |l: &DenseLayer<T>| LayerGrads {
            weights: vec![T::zero(); l.weights.len()],
            bias: vec![T::zero(); l.bias.len()],
        };
        Self {
            projection: params.projection.iter().map(zero).collect(),
            classifier: zero(&params.classifier),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &LayerGrads<T>> {
        self.projection.iter().chain(std::iter::once(&self.classifier))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerGrads<T>> {
        self.projection.iter_mut().chain(std::iter::once(&mut self.classifier))
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn scale(&mut self, c: T) {
        for l in self.layers_mut() {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= c);
        }
    }

    /// Adds the gradient of `(mu/2) |w - anchor|^2`, with `anchor` in the
    /// [`HeadParams::to_flat`] layout.
    pub fn add_proximal(&mut self, params: &HeadParams<T>, anchor: &[T], mu: T) -> Result<()> {
        check_dim(params.param_count(), anchor.len())?;
        let mut rest = anchor;
        for (g, p) in self.layers_mut().zip(params.layers()) {
            let (aw, tail) = rest.split_at(p.weights.len());
            let (ab, tail) = tail.split_at(p.bias.len());
            for ((gi, &wi), &ai) in g.weights.iter_mut().zip(&p.weights).zip(aw) {
                *gi += mu * (wi - ai);
            }
            for ((gi, &wi), &ai) in g.bias.iter_mut().zip(&p.bias).zip(ab) {
                *gi += mu * (wi - ai);
            }
            rest = tail;
        }
        Ok(())
    }

    fn matches(&self, params: &HeadParams<T>) -> bool {
        self.projection.len() == params.projection.len()
            && self.layers().zip(params.layers()).all(|(g, p)| {
                g.weights.len() == p.weights.len() && g.bias.len() == p.bias.len()
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.5,
            weight_decay: 0.0001,
            batch_size: 32,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::InvalidParameter("weight_decay must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// One momentum-SGD update, per parameter:
/// `v <- momentum * v + (g + weight_decay * w)`, `w <- w - lr * v`.
///
/// Nothing is modified when the gradients are mis-shaped or non-finite.
pub fn sgd_step<T: Real>(params: &mut HeadParams<T>, grads: &HeadGrads<T>, cfg: &OptimConfig) -> Result<()> {
    if !grads.matches(params) {
        return Err(Error::DimensionMismatch {
            expected: params.param_count(),
            found: grads.to_flat().len(),
        });
    }
    for (i, g) in grads.layers().enumerate() {
        if g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient in layer {i}")));
        }
    }
    let (lr, mom, wd) = (T::of(cfg.learning_rate), T::of(cfg.momentum), T::of(cfg.weight_decay));
    for (layer, g) in params.layers_mut().zip(grads.layers()) {
        let update = |w: &mut [T], v: &mut [T], g: &[T]| {
            for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = mom * *vi + (gi + wd * *wi);
                *wi -= lr * *vi;
            }
        };
        update(&mut layer.weights, &mut layer.weight_velocity, &g.weights);
        update(&mut layer.bias, &mut layer.bias_velocity, &g.bias);
    }
    Ok(())
}

/// Rescales `z` onto the ball of radius `bound` when it lies outside.
pub fn clip_norm<T: Real>(z: &Vector<T>, bound: T) -> Vector<T> {
    let mut v = z.as_slice().to_vec();
    clip_in_place(&mut v, bound);
    Vector::new(v).expect("scaling finite values by a factor <= 1 stays finite")
}

/// Returns the original norm when clipping happened.
pub(crate) fn clip_in_place<T: Real>(z: &mut [T], bound: T) -> Option<T> {
    let n = norm(z);
    if n > bound {
        let s = bound / n;
        z.iter_mut().for_each(|v| *v *= s);
        Some(n)
    } else {
        None
    }
}
