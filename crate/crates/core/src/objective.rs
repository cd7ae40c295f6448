//! Local training loss: cross-entropy on the classifier plus a regularizer
//! pulling clipped embeddings toward the global prototype of their class.
//! Gradients are analytic and cover the projection and classifier only.

use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{check_dim, Error, Result};
use crate::mathcore::{cosine_similarity, dot, l1_distance, l2_distance, norm, Vector};
use crate::model::{affine, clip_in_place, BackboneSpec, Encoded, HeadGrads, HeadParams};
use crate::prototype::PrototypeSet;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    #[default]
    Cosine,
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda: f64,
    pub temperature: f64,
    pub measure: Measure,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0, temperature: 1.0, measure: Measure::Cosine }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter("lambda must be finite and >= 0".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidParameter("temperature must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// Which prototype term is added to the supervised loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    /// Softmax over similarities to every global prototype, weighted by
    /// `LossConfig::lambda`.
    Contrastive,
    /// `weight * |z - g_y|^2 / dim`.
    MeanSquared { weight: f64 },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub supervised: T,
    pub regularizer: T,
    pub total: T,
}

/// `-log softmax(logits)[y]`.
pub fn cross_entropy<T: Real>(logits: &[T], y: usize) -> Result<T> {
    if y >= logits.len() {
        return Err(Error::InvalidParameter(format!("label {y} out of range")));
    }
    Ok(log_sum_exp(logits) - logits[y])
}

fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    max + v.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    let lse = log_sum_exp(v);
    v.iter().map(|&x| (x - lse).exp()).collect()
}

/// Larger means closer: cosine similarity, or a negated distance.
pub fn similarity<T: Real>(a: &Vector<T>, b: &Vector<T>, measure: Measure) -> Result<T> {
    match measure {
        Measure::Cosine => cosine_similarity(a, b),
        Measure::L1 => l1_distance(a, b).map(|d| -d),
        Measure::L2 => l2_distance(a, b).map(|d| -d),
    }
}

/// Gradient of [`similarity`] with respect to `z`.
fn similarity_grad<T: Real>(z: &[T], g: &[T], measure: Measure) -> Result<Vec<T>> {
    match measure {
        Measure::Cosine => {
            let (nz, ng) = (norm(z), norm(g));
            if nz == T::zero() || ng == T::zero() {
                return Err(Error::Degenerate("cosine similarity of a zero vector"));
            }
            let cos = dot(z, g) / (nz * ng);
            Ok(z.iter()
                .zip(g)
                .map(|(&zi, &gi)| gi / (nz * ng) - cos * zi / (nz * nz))
                .collect())
        }
        Measure::L2 => {
            let diff: Vec<T> = z.iter().zip(g).map(|(&a, &b)| a - b).collect();
            let d = norm(&diff);
            if d == T::zero() {
                return Ok(vec![T::zero(); z.len()]);
            }
            Ok(diff.into_iter().map(|x| -x / d).collect())
        }
        Measure::L1 => Ok(z
            .iter()
            .zip(g)
            .map(|(&a, &b)| {
                let d = a - b;
                if d > T::zero() {
                    -T::one()
                } else if d < T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect()),
    }
}

/// Softmax cross-entropy of the label's global prototype among all global
/// prototypes, scored by `similarity / temperature`.
pub fn contrastive_loss<T: Real>(
    z: &Vector<T>,
    y: usize,
    globals: &PrototypeSet<T>,
    cfg: &LossConfig,
) -> Result<T> {
    contrastive_terms(z.as_slice(), y, globals, cfg, false).map(|(l, _)| l)
}

fn contrastive_terms<T: Real>(
    z: &[T],
    y: usize,
    globals: &PrototypeSet<T>,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<(T, Option<Vec<T>>)> {
    check_dim(globals.dim(), z.len())?;
    let pos = globals
        .classes()
        .position(|j| j == y)
        .ok_or(Error::MissingClass(y))?;
    let zv = Vector::new(z.to_vec())?;
    let inv_t = T::of(1.0 / cfg.temperature);
    let scores = globals
        .iter()
        .map(|(_, p)| similarity(&zv, &p.vector, cfg.measure).map(|s| s * inv_t))
        .collect::<Result<Vec<T>>>()?;
    let loss = (log_sum_exp(&scores) - scores[pos]).max(T::zero());
    if !with_grad {
        return Ok((loss, None));
    }
    let probs = softmax(&scores);
    let mut grad = vec![T::zero(); z.len()];
    for (k, ((_, p), &pk)) in globals.iter().zip(&probs).enumerate() {
        let coef = (pk - if k == pos { T::one() } else { T::zero() }) * inv_t;
        if coef == T::zero() {
            continue;
        }
        let sg = similarity_grad(z, p.vector.as_slice(), cfg.measure)?;
        grad.iter_mut().zip(&sg).for_each(|(g, &s)| *g += coef * s);
    }
    Ok((loss, Some(grad)))
}

/// Loss settings for one local objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective<T> {
    pub loss: LossConfig,
    pub regularizer: Regularizer,
    pub clip_bound: T,
}

impl<T: Real> Objective<T> {
    pub fn contrastive(loss: LossConfig, clip_bound: T) -> Self {
        Self { loss, regularizer: Regularizer::Contrastive, clip_bound }
    }

    fn reg_weight(&self) -> f64 {
        match self.regularizer {
            Regularizer::Contrastive => self.loss.lambda,
            Regularizer::MeanSquared { weight } => weight,
            Regularizer::None => 0.0,
        }
    }

    /// Mean loss over `batch` and its gradient. The regularizer is dropped
    /// while `globals` is uninitialized or has zero weight.
    pub fn loss_and_grads(
        &self,
        params: &HeadParams<T>,
        batch: &[Encoded<T>],
        globals: &PrototypeSet<T>,
    ) -> Result<(LossBreakdown<T>, HeadGrads<T>)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let weight = self.reg_weight();
        let use_reg = weight != 0.0 && globals.is_initialized();
        if use_reg {
            check_dim(params.embed_dim(), globals.dim())?;
        }
        let w = T::of(weight);
        let inv_n = T::one() / T::of(batch.len() as f64);
        let mut grads = HeadGrads::zeros_like(params);
        let (mut sup, mut reg) = (T::zero(), T::zero());
        let depth = params.depth();

        for e in batch {
            check_dim(params.input_dim(), e.features.len())?;
            let trace = params.trace(&e.features);
            let mut zc = trace.embedding.clone();
            let clipped = clip_in_place(&mut zc, self.clip_bound);

            let cls = params.classifier();
            let mut logits = vec![T::zero(); cls.outputs()];
            affine(cls.weights(), cls.bias(), &zc, &mut logits);
            sup += cross_entropy(&logits, e.label)?;

            let mut d_logits = softmax(&logits);
            d_logits[e.label] -= T::one();
            d_logits.iter_mut().for_each(|d| *d *= inv_n);
            accumulate_outer(&mut grads.classifier.weights, &mut grads.classifier.bias, &d_logits, &zc);
            let mut dz = params.classifier.backward_input(&d_logits);

            if use_reg {
                let (l, g) = match self.regularizer {
                    Regularizer::Contrastive => {
                        let (l, g) = contrastive_terms(&zc, e.label, globals, &self.loss, true)?;
                        (l, g.expect("gradient requested"))
                    }
                    Regularizer::MeanSquared { .. } => mean_squared(&zc, globals.vector(e.label)?.as_slice()),
                    Regularizer::None => unreachable!("zero weight disables the regularizer"),
                };
                reg += l;
                let scale = w * inv_n;
                dz.iter_mut().zip(&g).for_each(|(d, &gi)| *d += scale * gi);
            }

            // Clipping Jacobian: (B/|z|) (I - u u^T) with u = z/|z|.
            if let Some(n) = clipped {
                let s = self.clip_bound / n;
                let u: Vec<T> = trace.embedding.iter().map(|&v| v / n).collect();
                let proj = dot(&u, &dz);
                dz.iter_mut().zip(&u).for_each(|(d, &ui)| *d = s * (*d - ui * proj));
            }

            let out = &mut grads.projection[depth - 1];
            match &trace.hidden_pre {
                None => accumulate_outer(&mut out.weights, &mut out.bias, &dz, &e.features),
                Some(pre) => {
                    let post: Vec<T> = pre.iter().map(|v| v.max(T::zero())).collect();
                    accumulate_outer(&mut out.weights, &mut out.bias, &dz, &post);
                    let mut dh = params.projection[1].backward_input(&dz);
                    dh.iter_mut()
                        .zip(pre)
                        .filter(|(_, &p)| p <= T::zero())
                        .for_each(|(d, _)| *d = T::zero());
                    let first = &mut grads.projection[0];
                    accumulate_outer(&mut first.weights, &mut first.bias, &dh, &e.features);
                }
            }
        }

        let supervised = sup * inv_n;
        let regularizer = reg * inv_n;
        let breakdown = LossBreakdown {
            supervised,
            regularizer,
            total: supervised + w * regularizer,
        };
        if !breakdown.total.is_finite() {
            return Err(Error::Divergence("non-finite loss".into()));
        }
        Ok((breakdown, grads))
    }

    /// Loss only, for finite-difference checks and reporting.
    pub fn loss(
        &self,
        params: &HeadParams<T>,
        batch: &[Encoded<T>],
        globals: &PrototypeSet<T>,
    ) -> Result<LossBreakdown<T>> {
        self.loss_and_grads(params, batch, globals).map(|(l, _)| l)
    }
}

fn mean_squared<T: Real>(z: &[T], g: &[T]) -> (T, Vec<T>) {
    let d = T::of(z.len() as f64);
    let diff: Vec<T> = z.iter().zip(g).map(|(&a, &b)| a - b).collect();
    let loss = dot(&diff, &diff) / d;
    let two = T::of(2.0);
    (loss, diff.into_iter().map(|x| two * x / d).collect())
}

/// `W += g x^T`, `b += g`.
fn accumulate_outer<T: Real>(w: &mut [T], b: &mut [T], g: &[T], x: &[T]) {
    for ((row, bi), &gi) in w.chunks_exact_mut(x.len()).zip(b.iter_mut()).zip(g) {
        if gi == T::zero() {
            continue;
        }
        *bi += gi;
        row.iter_mut().zip(x).for_each(|(r, &xi)| *r += gi * xi);
    }
}

/// Contrastive objective on raw samples passed through `backbone`.
pub fn batch_loss_and_grads<T: Real>(
    params: &HeadParams<T>,
    batch: &[Sample<T>],
    globals: &PrototypeSet<T>,
    cfg: &LossConfig,
    backbone: &BackboneSpec<T>,
    clip_bound: T,
) -> Result<(LossBreakdown<T>, HeadGrads<T>)> {
    let encoded = backbone.encode(batch)?;
    Objective::contrastive(*cfg, clip_bound).loss_and_grads(params, &encoded, globals)
}
