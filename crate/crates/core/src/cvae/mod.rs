//! Conditional variational auto-encoder surrogate for the diffraction oracle.
//!
//! The encoder maps a normalized field (Re/Im of each link as a two-channel
//! signal) and the body condition to a diagonal Gaussian over the latent
//! space. The decoder maps a latent draw and the condition back to a field.
//! Generation samples the standard-normal prior and decodes, i.e. draws from
//! the marginal of the decoder over the latent.

pub(crate) mod io;
pub mod layers;
pub mod network;
mod train;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::diffraction::FieldVector;
use crate::geometry::BodyState;
use crate::rng::{self, Domain};

pub use io::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use network::{kl_divergence, Architecture, Group, LayerEntry, CONDITION_DIM, LOG_VAR_MAX, LOG_VAR_MIN};
pub use train::{train, TrainingPair};

#[derive(Debug, Error)]
pub enum CvaeError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model format version {found}, expected {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeConfig {
    pub latent_dim: usize,
    /// Number of links `L`; the field dimension is `2 L`.
    pub links: usize,
    /// Encoder conv widths; the decoder mirrors them.
    pub channels: [usize; 2],
    pub kernel: usize,
    pub condition_embed: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub kl_weight: f64,
    pub epochs: usize,
    /// Fraction of the epochs over which the KL weight ramps up linearly.
    pub warmup_fraction: f64,
}

impl CvaeConfig {
    pub fn new(latent_dim: usize, links: usize) -> Self {
        Self {
            latent_dim,
            links,
            channels: [16, 32],
            kernel: 3,
            condition_embed: 16,
            hidden: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            kl_weight: 1.0,
            epochs: 100,
            warmup_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), CvaeError> {
        let bad = |m: &str| Err(CvaeError::InvalidConfig(m.to_string()));
        if self.latent_dim == 0 || self.links == 0 {
            return bad("latent dimension and links must be positive");
        }
        if self.channels.contains(&0) || self.kernel == 0 || self.kernel % 2 == 0 {
            return bad("channel widths must be positive and the kernel odd");
        }
        if self.condition_embed == 0 || self.hidden == 0 || self.batch_size == 0 {
            return bad("widths and batch size must be positive");
        }
        if !(self.kl_weight > 0.0) || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("kl weight and learning rate must be positive, momentum in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warm-up fraction must lie in [0, 1]");
        }
        Ok(())
    }

    /// KL weight used during `epoch` (0-based).
    pub fn kl_weight_at(&self, epoch: usize) -> f64 {
        let warm = (self.warmup_fraction * self.epochs as f64).round().max(1.0);
        self.kl_weight * ((epoch + 1) as f64 / warm).min(1.0)
    }
}

/// Per-dimension affine standardization of fields and conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub field_mean: Vec<f64>,
    pub field_scale: Vec<f64>,
    pub cond_mean: [f64; CONDITION_DIM],
    pub cond_scale: [f64; CONDITION_DIM],
}

impl Normalization {
    pub fn identity(links: usize) -> Self {
        Self {
            field_mean: vec![0.0; 2 * links],
            field_scale: vec![1.0; 2 * links],
            cond_mean: [0.0; CONDITION_DIM],
            cond_scale: [1.0; CONDITION_DIM],
        }
    }

    /// Mean and population standard deviation per dimension; constant
    /// dimensions get scale 1.
    pub fn fit<'a>(pairs: impl IntoIterator<Item = (&'a FieldVector, &'a BodyState)>) -> Result<Self, CvaeError> {
        let mut fields = Vec::new();
        let mut conds = Vec::new();
        for (f, c) in pairs {
            fields.push(field_to_real(f));
            conds.push(c.features().to_vec());
        }
        if fields.is_empty() {
            return Err(CvaeError::EmptyDataset);
        }
        let dim = fields[0].len();
        if let Some(bad) = fields.iter().find(|f| f.len() != dim) {
            return Err(CvaeError::ShapeMismatch { what: "field", expected: dim, got: bad.len() });
        }
        let (field_mean, field_scale) = moments(&fields);
        let (cm, cs) = moments(&conds);
        Ok(Self {
            field_mean,
            field_scale,
            cond_mean: cm.try_into().expect("condition dim"),
            cond_scale: cs.try_into().expect("condition dim"),
        })
    }

    pub fn normalize_field(&self, f: &FieldVector) -> Result<Vec<f64>, CvaeError> {
        let x = field_to_real(f);
        if x.len() != self.field_mean.len() {
            return Err(CvaeError::ShapeMismatch { what: "field", expected: self.field_mean.len(), got: x.len() });
        }
        Ok(x.iter().zip(&self.field_mean).zip(&self.field_scale).map(|((v, m), s)| (v - m) / s).collect())
    }

    pub fn denormalize_field(&self, x: &[f64]) -> FieldVector {
        let real: Vec<f64> = x.iter().zip(&self.field_mean).zip(&self.field_scale).map(|((v, m), s)| v * s + m).collect();
        real_to_field(&real)
    }

    pub fn normalize_condition(&self, body: &BodyState) -> [f64; CONDITION_DIM] {
        let f = body.features();
        std::array::from_fn(|i| (f[i] - self.cond_mean[i]) / self.cond_scale[i])
    }
}

fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mean: Vec<f64> = (0..dim).map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / n).collect();
    let scale = (0..dim)
        .map(|d| {
            let var = rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean[d].abs()) {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// `[Re_0 .. Re_{L-1}, Im_0 .. Im_{L-1}]`.
pub fn field_to_real(f: &FieldVector) -> Vec<f64> {
    let v = f.values();
    v.iter().map(|c| c.re).chain(v.iter().map(|c| c.im)).collect()
}

pub fn real_to_field(x: &[f64]) -> FieldVector {
    let l = x.len() / 2;
    FieldVector::new((0..l).map(|i| Complex64::new(x[i], x[l + i])).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    pub config: CvaeConfig,
    pub architecture: Architecture,
    pub params: Vec<f64>,
    pub normalization: Normalization,
}

impl CvaeModel {
    /// Randomly initialized model: He-normal weights ahead of rectifiers,
    /// `1 / fan_in` variance for the linear heads, zero biases.
    pub fn new(config: CvaeConfig, normalization: Normalization, seed: u64) -> Result<Self, CvaeError> {
        let mut model = Self::zeroed(config, normalization)?;
        let mut rng = rng::stream(seed, Domain::Init, 0);
        let linear_heads = ["enc_mu", "enc_logvar", "dec_deconv2"];
        for entry in &model.architecture.layers {
            let gain = if linear_heads.contains(&entry.name.as_str()) { 1.0 } else { 2.0 };
            let sd = (gain / entry.kind.fan_in() as f64).sqrt();
            let w = &mut model.params[entry.offset..entry.offset + entry.kind.weight_count()];
            for v in w {
                *v = sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(model)
    }

    pub fn zeroed(config: CvaeConfig, normalization: Normalization) -> Result<Self, CvaeError> {
        config.validate()?;
        let architecture = Architecture::new(&config);
        if normalization.field_mean.len() != architecture.field_dim() || normalization.field_scale.len() != architecture.field_dim() {
            return Err(CvaeError::ShapeMismatch {
                what: "normalization",
                expected: architecture.field_dim(),
                got: normalization.field_mean.len(),
            });
        }
        if normalization.field_scale.iter().chain(&normalization.cond_scale).any(|s| !(*s > 0.0)) {
            return Err(CvaeError::InvalidConfig("normalization scales must be positive".into()));
        }
        let params = vec![0.0; architecture.total_len];
        Ok(Self { config, architecture, params, normalization })
    }

    pub fn links(&self) -> usize {
        self.config.links
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn encoder_params(&self) -> &[f64] {
        &self.params[..self.architecture.encoder_len]
    }

    pub fn decoder_params(&self) -> &[f64] {
        &self.params[self.architecture.encoder_len..]
    }
}

pub fn encode(model: &CvaeModel, field: &FieldVector, condition: &BodyState) -> Result<LatentGaussian, CvaeError> {
    let x = model.normalization.normalize_field(field)?;
    let c = model.normalization.normalize_condition(condition);
    let trace = model.architecture.encode(&model.params, &x, &c);
    Ok(LatentGaussian { mean: trace.mu, log_variance: trace.lv })
}

/// Standard-normal draw keyed by `(seed, index)`.
pub fn standard_normal(dim: usize, seed: u64, domain: Domain, index: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, domain, index);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// `z = mu + sigma * u` with `u` drawn from `(seed, index)`.
pub fn reparameterize(latent: &LatentGaussian, seed: u64, index: u64) -> Vec<f64> {
    let u = standard_normal(latent.mean.len(), seed, Domain::Latent, index);
    latent
        .mean
        .iter()
        .zip(&latent.log_variance)
        .zip(u)
        .map(|((m, lv), u)| m + (0.5 * lv).exp() * u)
        .collect()
}

pub fn decode(model: &CvaeModel, z: &[f64], condition: &BodyState) -> Result<FieldVector, CvaeError> {
    if z.len() != model.latent_dim() {
        return Err(CvaeError::ShapeMismatch { what: "latent", expected: model.latent_dim(), got: z.len() });
    }
    let c = model.normalization.normalize_condition(condition);
    let trace = model.architecture.decode(&model.params, z, &c);
    Ok(model.normalization.denormalize_field(&trace.out))
}

/// ELBO loss of one pair and its gradient with respect to all parameters.
/// The latent noise is drawn from `(seed, 0)`.
pub fn elbo_loss(model: &CvaeModel, field: &FieldVector, condition: &BodyState, seed: u64) -> Result<(f64, Vec<f64>), CvaeError> {
    let x = model.normalization.normalize_field(field)?;
    let c = model.normalization.normalize_condition(condition);
    let u = standard_normal(model.latent_dim(), seed, Domain::Latent, 0);
    let mut grad = vec![0.0; model.params.len()];
    let parts = model.architecture.elbo(&model.params, &x, &c, &u, model.config.kl_weight, &mut grad);
    if !parts.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(CvaeError::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    Ok((parts.loss, grad))
}

/// Rectifier/clamp sign pattern along the [`elbo_loss`] forward path.
pub fn activation_pattern(model: &CvaeModel, field: &FieldVector, condition: &BodyState, seed: u64) -> Result<Vec<bool>, CvaeError> {
    let x = model.normalization.normalize_field(field)?;
    let c = model.normalization.normalize_condition(condition);
    let u = standard_normal(model.latent_dim(), seed, Domain::Latent, 0);
    Ok(model.architecture.activation_pattern(&model.params, &x, &c, &u))
}

/// `n` draws from the generator for `condition`: `z ~ N(0, I)` keyed by
/// `(seed, i)`, decoded with the condition.
pub fn generate(model: &CvaeModel, condition: &BodyState, n: usize, seed: u64) -> Vec<FieldVector> {
    let c = model.normalization.normalize_condition(condition);
    (0..n)
        .map(|i| {
            let z = standard_normal(model.latent_dim(), seed, Domain::Latent, i as u64);
            let out = model.architecture.decode(&model.params, &z, &c).out;
            model.normalization.denormalize_field(&out)
        })
        .collect()
}

#[cfg(test)]
mod tests;
