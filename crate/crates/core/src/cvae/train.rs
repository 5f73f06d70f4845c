use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{standard_normal, CvaeError, CvaeModel};
use crate::diffraction::FieldVector;
use crate::geometry::BodyState;
use crate::rng::{self, Domain};

/// Samples per gradient work unit. Fixed so the reduction order never depends
/// on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub field: FieldVector,
    pub condition: BodyState,
}

struct Prepared {
    x: Vec<Vec<f64>>,
    c: Vec<[f64; 6]>,
}

/// Mini-batch SGD with momentum on the ELBO.
///
/// Returns the trained model and a loss trace: entry 0 is the mean loss of the
/// untrained model over `data`, entry `e + 1` the mean loss over the batches of
/// epoch `e`. Trace entries always use the configured KL weight, even while the
/// optimized weight is still warming up.
pub fn train(model: &CvaeModel, data: &[TrainingPair], seed: u64) -> Result<(CvaeModel, Vec<f64>), CvaeError> {
    if data.is_empty() {
        return Err(CvaeError::EmptyDataset);
    }
    let cfg = &model.config;
    let norm = &model.normalization;
    let prepared = Prepared {
        x: data.iter().map(|p| norm.normalize_field(&p.field)).collect::<Result<_, _>>()?,
        c: data.iter().map(|p| norm.normalize_condition(&p.condition)).collect(),
    };
    let n = data.len();
    let arch = &model.architecture;
    let z_dim = model.latent_dim();
    let beta_full = cfg.kl_weight;

    let noise = |epoch: usize, pos: usize| standard_normal(z_dim, seed, Domain::Training, (epoch * n + pos) as u64);

    let mut params = model.params.clone();
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let initial: f64 = {
        let mut scratch = vec![0.0; params.len()];
        let mut total = 0.0;
        for i in 0..n {
            let u = standard_normal(z_dim, seed, Domain::Training, u64::MAX - i as u64);
            let parts = arch.elbo(&params, &prepared.x[i], &prepared.c[i], &u, beta_full, &mut scratch);
            total += parts.loss;
        }
        total / n as f64
    };
    if !initial.is_finite() {
        return Err(CvaeError::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    trace.push(initial);

    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let beta = cfg.kl_weight_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng::stream(seed, Domain::Shuffle, epoch as u64));
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let base = batch * cfg.batch_size;
            let partials: Vec<(Vec<f64>, f64)> = idx
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(ci, chunk)| {
                    let mut grad = vec![0.0; params.len()];
                    let mut loss = 0.0;
                    for (k, &i) in chunk.iter().enumerate() {
                        let u = noise(epoch, base + ci * CHUNK + k);
                        let parts = arch.elbo(&params, &prepared.x[i], &prepared.c[i], &u, beta, &mut grad);
                        loss += parts.reconstruction + beta_full * parts.kl;
                    }
                    (grad, loss)
                })
                .collect();
            let scale = 1.0 / idx.len() as f64;
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for (g, l) in &partials {
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
                loss += l;
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(CvaeError::NonFiniteLoss { epoch, batch });
            }
            epoch_loss += loss;
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g * scale;
                *p -= cfg.learning_rate * *v;
            }
        }
        trace.push(epoch_loss / n as f64);
    }

    let mut trained = model.clone();
    trained.params = params;
    Ok((trained, trace))
}
