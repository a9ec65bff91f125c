//! Softmax cross-entropy training with Adam, one optimizer step per
//! training timestamp.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::data::QuadrupleStore;
use crate::decoder::score_queries_tape;
use crate::encoder::{adjoint_plan, plan_intervals, run_plan, run_plan_tape, EncoderConfig, TemporalGraph};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::ode::BackwardMode;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub encoder: EncoderConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            encoder: EncoderConfig::default(),
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.model.dim == 0 || self.model.num_layers == 0 {
            return Err(Error::Config("dim and num_layers must be >= 1".into()));
        }
        Ok(())
    }
}

/// A reciprocal-augmented store with its snapshots and jump tensors.
#[derive(Clone, Debug)]
pub struct Dataset {
    store: QuadrupleStore,
    graph: TemporalGraph,
}

impl Dataset {
    /// Augments `store` with reciprocal events unless it already is.
    pub fn new(store: &QuadrupleStore) -> Result<Self> {
        let store = if store.is_augmented() {
            store.clone()
        } else {
            store.augment_reciprocal()?
        };
        let graph = TemporalGraph::from_store(&store)?;
        Ok(Dataset { store, graph })
    }

    pub fn store(&self) -> &QuadrupleStore {
        &self.store
    }

    pub fn graph(&self) -> &TemporalGraph {
        &self.graph
    }

    pub fn num_entities(&self) -> usize {
        self.store.num_entities()
    }

    pub fn num_relation_slots(&self) -> usize {
        self.store.relation_slots()
    }

    /// `(s, r, o)` queries at timestamp `t`, both directions.
    pub fn queries_at(&self, t: usize) -> Vec<(usize, usize, usize)> {
        self.store.events_at(t).iter().map(|q| q.triple()).collect()
    }

    /// Training timestamps with at least `history` earlier snapshots.
    pub fn training_targets(&self, history: usize) -> Vec<usize> {
        (history.max(1)..self.store.train_end())
            .filter(|&t| !self.store.events_at(t).is_empty())
            .collect()
    }

    pub fn init_params(&self, cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(cfg, self.num_entities(), self.num_relation_slots(), &mut rng)
    }
}

/// Mean cross-entropy over `queries`, recorded batch by batch: each batch
/// mean is weighted by its share of the queries.
pub fn record_loss(
    tape: &mut Tape,
    h: Var,
    core: Option<Var>,
    params: &ModelParams,
    queries: &[(usize, usize, usize)],
    batch_size: usize,
) -> Result<Var> {
    if queries.is_empty() {
        return Err(Error::Contract("loss over an empty query list".into()));
    }
    let n = queries.len() as f64;
    let mut total: Option<Var> = None;
    for chunk in queries.chunks(batch_size.max(1)) {
        let sr: Vec<(usize, usize)> = chunk.iter().map(|q| (q.0, q.1)).collect();
        let targets: Vec<usize> = chunk.iter().map(|q| q.2).collect();
        let logits = score_queries_tape(tape, h, core, params.decoder.kind, params.num_entities, &sr)?;
        let ce = tape.row_softmax_cross_entropy(logits, &targets)?;
        let part = tape.scale(ce, chunk.len() as f64 / n);
        total = Some(match total {
            None => part,
            Some(t) => tape.add(t, part)?,
        });
    }
    Ok(total.expect("non-empty queries"))
}

/// Softmax cross-entropy of `queries` against the hidden state `h`.
pub fn softmax_loss(h: &Matrix, params: &ModelParams, queries: &[(usize, usize, usize)]) -> Result<f64> {
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let core = params.decoder.core.clone().map(|c| tape.leaf(c));
    let loss = record_loss(&mut tape, hv, core, params, queries, queries.len().max(1))?;
    Ok(tape.value(loss).item())
}

/// Loss at `target_t` without gradients. Matches the forward value of
/// [`loss_and_grads`] bitwise.
pub fn loss_at(
    data: &Dataset,
    params: &ModelParams,
    enc: &EncoderConfig,
    batch_size: usize,
    target_t: usize,
    queries: &[(usize, usize, usize)],
) -> Result<f64> {
    let plan = plan_intervals(data.graph(), enc.history, target_t)?;
    let (h, _) = run_plan(data.graph(), params, &enc.solver, &plan)?;
    let mut tape = Tape::new();
    let hv = tape.leaf(h);
    let core = params.decoder.core.clone().map(|c| tape.leaf(c));
    let loss = record_loss(&mut tape, hv, core, params, queries, batch_size)?;
    Ok(tape.value(loss).item())
}

/// Loss at `target_t` and its gradient for every tensor of
/// [`ModelParams::tensors`], using the configured backward mode.
pub fn loss_and_grads(
    data: &Dataset,
    params: &ModelParams,
    enc: &EncoderConfig,
    batch_size: usize,
    target_t: usize,
    queries: &[(usize, usize, usize)],
) -> Result<(f64, Vec<Matrix>)> {
    let plan = plan_intervals(data.graph(), enc.history, target_t)?;
    match enc.solver.backward_mode {
        BackwardMode::Unrolled => {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let h = run_plan_tape(&mut tape, &vars, data.graph(), params, &enc.solver, &plan)?;
            let loss = record_loss(&mut tape, h, vars.core, params, queries, batch_size)?;
            let mut grads = tape.backward(loss)?;
            let out = vars.flat().into_iter().map(|v| grads.take(v)).collect();
            Ok((tape.value(loss).item(), out))
        }
        BackwardMode::InterpolatedAdjoint => {
            let (h_final, traces) = run_plan(data.graph(), params, &enc.solver, &plan)?;
            let mut tape = Tape::new();
            let h = tape.leaf(h_final);
            let core = params.decoder.core.clone().map(|c| tape.leaf(c));
            let loss = record_loss(&mut tape, h, core, params, queries, batch_size)?;
            let mut grads = tape.backward(loss)?;
            let dh = grads.take(h);
            let (d_global, field) = adjoint_plan(data.graph(), params, &enc.solver, &plan, &traces, &dh)?;
            let mut out = Vec::with_capacity(params.tensors().len());
            out.push(d_global);
            out.extend(field);
            if let Some(c) = core {
                out.push(grads.take(c));
            }
            Ok((tape.value(loss).item(), out))
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.v
    }

    /// One update. Rejects the whole step, leaving parameters and moments
    /// untouched, if any gradient entry is not finite.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Matrix], lr: f64) -> Result<()> {
        let mut tensors = params.tensors_mut();
        if grads.len() != tensors.len() {
            return Err(Error::dim(
                "adam_step",
                format!("{} gradients for {} tensors", grads.len(), tensors.len()),
            ));
        }
        for (i, (g, p)) in grads.iter().zip(&tensors).enumerate() {
            if g.shape() != p.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("gradient {i} has shape {:?}, parameter {:?}", g.shape(), p.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for tensor {i}")));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in tensors.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let ps = p.as_mut_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for (k, &gk) in g.as_slice().iter().enumerate() {
                ms[k] = self.beta1 * ms[k] + (1.0 - self.beta1) * gk;
                vs[k] = self.beta2 * vs[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = ms[k] / bc1;
                let v_hat = vs[k] / bc2;
                ps[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One pass over the training timestamps. Returns the mean loss per query.
pub fn train_epoch(data: &Dataset, params: &mut ModelParams, adam: &mut Adam, cfg: &TrainConfig) -> Result<f64> {
    let targets = data.training_targets(cfg.encoder.history);
    if targets.is_empty() {
        return Err(Error::Contract(format!(
            "no training timestamp has {} earlier snapshots (training ends at {})",
            cfg.encoder.history,
            data.store().train_end()
        )));
    }
    let mut weighted = 0.0;
    let mut count = 0usize;
    for t in targets {
        let queries = data.queries_at(t);
        let (loss, grads) = loss_and_grads(data, params, &cfg.encoder, cfg.batch_size, t, &queries)?;
        adam.step(params, &grads, cfg.learning_rate)?;
        weighted += loss * queries.len() as f64;
        count += queries.len();
    }
    Ok(weighted / count as f64)
}

/// Initializes parameters from `cfg.seed` and trains for `cfg.epochs`,
/// calling `on_epoch(epoch, mean_loss)` after each epoch.
pub fn train<F>(data: &Dataset, cfg: &TrainConfig, mut on_epoch: F) -> Result<(ModelParams, Vec<f64>)>
where
    F: FnMut(usize, f64),
{
    cfg.validate()?;
    let mut params = data.init_params(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new(&params);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let loss = train_epoch(data, &mut params, &mut adam, cfg)?;
        on_epoch(epoch, loss);
        losses.push(loss);
    }
    Ok((params, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_tkg, PatternSpec};

    fn tiny() -> (Dataset, ModelParams) {
        let store = generate_synthetic_tkg(5, 2, 8, &PatternSpec::Random { events_per_step: 4 }, 1).unwrap();
        let data = Dataset::new(&store).unwrap();
        let cfg = ModelConfig {
            dim: 4,
            ..Default::default()
        };
        let params = data.init_params(&cfg, 3).unwrap();
        (data, params)
    }

    #[test]
    fn uniform_scores_give_log_v() {
        let (_, mut params) = tiny();
        params.num_entities = 8;
        params.num_relation_slots = 1;
        let h = Matrix::zeros(9, 4);
        let loss = softmax_loss(&h, &params, &[(0, 0, 3), (5, 0, 1)]).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-12);
        assert!(matches!(softmax_loss(&h, &params, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let (_, mut params) = tiny();
        let before = params.clone();
        let mut adam = Adam::new(&params);
        let grads: Vec<Matrix> = params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, m)| Matrix::filled(m.rows(), m.cols(), if i % 2 == 0 { 0.3 } else { -2.0 }))
            .collect();
        adam.step(&mut params, &grads, 0.01).unwrap();
        for (i, (a, b)) in params.tensors().iter().zip(before.tensors()).enumerate() {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((y - x - sign * 0.01).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adam_rejects_nan_without_touching_state() {
        let (_, mut params) = tiny();
        let before = params.clone();
        let mut adam = Adam::new(&params);
        let mut grads = params.zero_grads();
        grads[1].set(0, 0, f64::NAN);
        assert!(matches!(adam.step(&mut params, &grads, 0.1), Err(Error::Numeric(_))));
        assert_eq!(params, before);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let (_, mut params) = tiny();
        let mut adam = Adam::new(&params);
        let g: Vec<Matrix> = params.tensors().iter().map(|m| Matrix::filled(m.rows(), m.cols(), 1.0)).collect();
        adam.step(&mut params, &g, 0.0).unwrap();
        let m1 = adam.first_moments()[0].get(0, 0);
        let before = params.clone();
        let zeros = params.zero_grads();
        adam.step(&mut params, &zeros, 0.05).unwrap();
        assert!((adam.first_moments()[0].get(0, 0) - 0.9 * m1).abs() < 1e-15);
        let mut frozen = before.clone();
        let mut adam2 = Adam::new(&frozen);
        let zeros = frozen.zero_grads();
        adam2.step(&mut frozen, &zeros, 0.1).unwrap();
        assert_eq!(frozen, before);
    }

    #[test]
    fn both_backward_modes_share_forward_loss() {
        let (data, params) = tiny();
        let mut enc = EncoderConfig {
            history: 2,
            ..Default::default()
        };
        let q = data.queries_at(4);
        let plain = loss_at(&data, &params, &enc, 3, 4, &q).unwrap();
        let (a, _) = loss_and_grads(&data, &params, &enc, 3, 4, &q).unwrap();
        enc.solver.backward_mode = BackwardMode::Unrolled;
        let (b, _) = loss_and_grads(&data, &params, &enc, 3, 4, &q).unwrap();
        assert_eq!(plain.to_bits(), a.to_bits());
        assert_eq!(plain.to_bits(), b.to_bits());
    }

    #[test]
    fn zero_lr_epoch_keeps_params() {
        let (data, mut params) = tiny();
        let before = params.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            model: params.config(),
            encoder: EncoderConfig {
                history: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut adam = Adam::new(&params);
        train_epoch(&data, &mut params, &mut adam, &cfg).unwrap();
        assert_eq!(params, before);
    }
}
