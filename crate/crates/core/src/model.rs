//! Trainable parameters of the full model and their binding onto a tape.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// No nonlinearity; used by tests that check layers by hand.
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderKind {
    DistMult,
    TuckER,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::DistMult => "distmult",
            DecoderKind::TuckER => "tucker",
        }
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distmult" => Ok(DecoderKind::DistMult),
            "tucker" => Ok(DecoderKind::TuckER),
            other => Err(Error::Config(format!(
                "unknown decoder {other:?} (expected distmult or tucker)"
            ))),
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One residual aggregation layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AggLayerParams {
    pub w_ent: Matrix,
    pub w_rel: Matrix,
    /// `1 x 1` residual gate.
    pub delta: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpParams {
    /// Diagonal weights stored as `1 x d` rows.
    pub w_ent: Matrix,
    pub w_rel: Matrix,
    /// Fixed jump coefficient; not trained.
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub kind: DecoderKind,
    /// TuckER core as a `(d * d) x d` matrix with row `i * d + j` holding
    /// `W[i, j, :]`.
    pub core: Option<Matrix>,
}

/// Shape-level description of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub num_layers: usize,
    pub activation: Activation,
    pub jump_weight: f64,
    pub decoder: DecoderKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            num_layers: 2,
            activation: Activation::Tanh,
            jump_weight: 0.1,
            decoder: DecoderKind::DistMult,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub num_entities: usize,
    pub num_relation_slots: usize,
    pub activation: Activation,
    /// Initial hidden state, entities first and then relations.
    pub h_global: Matrix,
    pub layers: Vec<AggLayerParams>,
    pub jump: JumpParams,
    pub decoder: DecoderParams,
}

pub const INITIAL_DELTA: f64 = 0.1;
pub const CORE_INIT_BOUND: f64 = 0.1;

impl ModelParams {
    /// Xavier-initialized weights, residual gates at [`INITIAL_DELTA`],
    /// jump diagonals at one.
    pub fn init<R: Rng>(
        cfg: &ModelConfig,
        num_entities: usize,
        num_relation_slots: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.dim == 0 || cfg.num_layers == 0 {
            return Err(Error::Config(format!(
                "dim and num_layers must be positive (got {} and {})",
                cfg.dim, cfg.num_layers
            )));
        }
        if !(cfg.jump_weight >= 0.0) || !cfg.jump_weight.is_finite() {
            return Err(Error::Config(format!("jump weight must be >= 0, got {}", cfg.jump_weight)));
        }
        let d = cfg.dim;
        let h_global = Matrix::xavier(num_entities + num_relation_slots, d, rng);
        let layers = (0..cfg.num_layers)
            .map(|_| AggLayerParams {
                w_ent: Matrix::xavier(d, d, rng),
                w_rel: Matrix::xavier(d, d, rng),
                delta: Matrix::scalar(INITIAL_DELTA),
            })
            .collect();
        let core = match cfg.decoder {
            DecoderKind::DistMult => None,
            DecoderKind::TuckER => Some(Matrix::uniform(d * d, d, CORE_INIT_BOUND, rng)),
        };
        Ok(ModelParams {
            num_entities,
            num_relation_slots,
            activation: cfg.activation,
            h_global,
            layers,
            jump: JumpParams {
                w_ent: Matrix::filled(1, d, 1.0),
                w_rel: Matrix::filled(1, d, 1.0),
                w: cfg.jump_weight,
            },
            decoder: DecoderParams {
                kind: cfg.decoder,
                core,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.h_global.cols()
    }

    pub fn num_rows(&self) -> usize {
        self.num_entities + self.num_relation_slots
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim(),
            num_layers: self.layers.len(),
            activation: self.activation,
            jump_weight: self.jump.w,
            decoder: self.decoder.kind,
        }
    }

    /// Number of tensors owned by the derivative network (aggregation
    /// layers and jump diagonals). They sit at indices
    /// `1..1 + num_field_tensors()` of [`ModelParams::tensors`].
    pub fn num_field_tensors(&self) -> usize {
        3 * self.layers.len() + 2
    }

    /// All trainable tensors in canonical order: `h_global`, per-layer
    /// `w_ent, w_rel, delta`, jump `w_ent, w_rel`, then the TuckER core.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.h_global];
        for l in &self.layers {
            out.extend([&l.w_ent, &l.w_rel, &l.delta]);
        }
        out.extend([&self.jump.w_ent, &self.jump.w_rel]);
        if let Some(core) = &self.decoder.core {
            out.push(core);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.h_global];
        for l in &mut self.layers {
            out.extend([&mut l.w_ent, &mut l.w_rel, &mut l.delta]);
        }
        out.extend([&mut self.jump.w_ent, &mut self.jump.w_rel]);
        if let Some(core) = &mut self.decoder.core {
            out.push(core);
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["h_global".to_string()];
        for l in 0..self.layers.len() {
            out.push(format!("agg.{l}.w_ent"));
            out.push(format!("agg.{l}.w_rel"));
            out.push(format!("agg.{l}.delta"));
        }
        out.push("jump.w_ent".into());
        out.push("jump.w_rel".into());
        if self.decoder.core.is_some() {
            out.push("decoder.core".into());
        }
        out
    }

    pub fn zero_grads(&self) -> Vec<Matrix> {
        self.tensors()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// Concatenation of every tensor in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::dim(
                "unflatten",
                format!("{} values for {} parameters", flat.len(), self.num_scalars()),
            ));
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Places every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            h_global: tape.leaf(self.h_global.clone()),
            field: self.bind_field(tape),
            core: self.decoder.core.as_ref().map(|c| tape.leaf(c.clone())),
        }
    }

    pub fn bind_field(&self, tape: &mut Tape) -> FieldVars {
        FieldVars {
            layers: self
                .layers
                .iter()
                .map(|l| LayerVars {
                    w_ent: tape.leaf(l.w_ent.clone()),
                    w_rel: tape.leaf(l.w_rel.clone()),
                    delta: tape.leaf(l.delta.clone()),
                })
                .collect(),
            jump_ent: tape.leaf(self.jump.w_ent.clone()),
            jump_rel: tape.leaf(self.jump.w_rel.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub w_ent: Var,
    pub w_rel: Var,
    pub delta: Var,
}

/// Tape handles of the derivative network's parameters.
#[derive(Clone, Debug)]
pub struct FieldVars {
    pub layers: Vec<LayerVars>,
    pub jump_ent: Var,
    pub jump_rel: Var,
}

impl FieldVars {
    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.extend([l.w_ent, l.w_rel, l.delta]);
        }
        out.extend([self.jump_ent, self.jump_rel]);
        out
    }
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub h_global: Var,
    pub field: FieldVars,
    pub core: Option<Var>,
}

impl ModelVars {
    /// Handles in the order of [`ModelParams::tensors`].
    pub fn flat(&self) -> Vec<Var> {
        let mut out = vec![self.h_global];
        out.extend(self.field.flat());
        out.extend(self.core);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_align_with_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ModelConfig {
            dim: 4,
            decoder: DecoderKind::TuckER,
            ..Default::default()
        };
        let p = ModelParams::init(&cfg, 5, 4, &mut rng).unwrap();
        assert_eq!(p.tensors().len(), p.tensor_names().len());
        assert_eq!(p.tensors().len(), 1 + p.num_field_tensors() + 1);
        assert_eq!(p.h_global.shape(), (9, 4));
        assert_eq!(p.decoder.core.as_ref().unwrap().shape(), (16, 4));

        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        for (v, m) in vars.flat().iter().zip(p.tensors()) {
            assert_eq!(tape.value(*v), m);
        }
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::init(&ModelConfig::default(), 3, 2, &mut rng).unwrap();
        let flat = p.flatten();
        let before = p.clone();
        p.unflatten(&flat).unwrap();
        assert_eq!(p, before);
        assert!(p.unflatten(&flat[1..]).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ModelConfig {
            jump_weight: -1.0,
            ..Default::default()
        };
        assert!(matches!(ModelParams::init(&cfg, 3, 2, &mut rng), Err(Error::Config(_))));
    }
}
