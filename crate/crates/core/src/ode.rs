//! Fixed-grid RK4 integration with two backward passes: backpropagation
//! through the recorded steps, and the interpolated adjoint, which solves
//! the adjoint equations backward while reading the forward state off a
//! barycentric interpolant of values stored at Chebyshev nodes.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::aggregator::stack_increment;
use crate::autodiff::{Tape, Var};
use crate::data::{JumpTensor, Snapshot};
use crate::error::{Error, Result};
use crate::jump::apply_jump;
use crate::model::{FieldVars, ModelParams};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardMode {
    Unrolled,
    InterpolatedAdjoint,
}

impl BackwardMode {
    pub fn name(self) -> &'static str {
        match self {
            BackwardMode::Unrolled => "unrolled",
            BackwardMode::InterpolatedAdjoint => "interpolated_adjoint",
        }
    }
}

impl FromStr for BackwardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unrolled" => Ok(BackwardMode::Unrolled),
            "interpolated_adjoint" => Ok(BackwardMode::InterpolatedAdjoint),
            other => Err(Error::Config(format!(
                "unknown backward mode {other:?} (expected unrolled or interpolated_adjoint)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolverConfig {
    pub steps_per_interval: usize,
    pub chebyshev_nodes: usize,
    pub backward_mode: BackwardMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            steps_per_interval: 1,
            chebyshev_nodes: 3,
            backward_mode: BackwardMode::InterpolatedAdjoint,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_interval < 1 {
            return Err(Error::Config("steps_per_interval must be >= 1".into()));
        }
        if self.chebyshev_nodes < 2 {
            return Err(Error::Config("chebyshev_nodes must be >= 2".into()));
        }
        Ok(())
    }
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite value in {what}")))
    }
}

/// Classical RK4 step `z + h/6 (k1 + 2 k2 + 2 k3 + k4)`.
pub fn rk4_step<F>(mut f: F, z: &Matrix, t: f64, h: f64) -> Result<Matrix>
where
    F: FnMut(f64, &Matrix) -> Result<Matrix>,
{
    let k1 = f(t, z)?;
    check_finite(&k1, "rk4 stage 1")?;
    let k2 = f(t + h / 2.0, &z.add(&k1.scale(h / 2.0))?)?;
    check_finite(&k2, "rk4 stage 2")?;
    let k3 = f(t + h / 2.0, &z.add(&k2.scale(h / 2.0))?)?;
    check_finite(&k3, "rk4 stage 3")?;
    let k4 = f(t + h, &z.add(&k3.scale(h))?)?;
    check_finite(&k4, "rk4 stage 4")?;
    let sum = k1.add(&k2.scale(2.0))?.add(&k3.scale(2.0))?.add(&k4)?;
    let out = z.add(&sum.scale(h / 6.0))?;
    check_finite(&out, "rk4 update")?;
    Ok(out)
}

/// The same update as [`rk4_step`], recorded on a tape. The arithmetic is
/// performed in the same order, so forward values agree bitwise.
pub fn rk4_step_tape<F>(tape: &mut Tape, mut f: F, z: Var, h: f64) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let k1 = f(tape, z)?;
    let s = tape.scale(k1, h / 2.0);
    let z2 = tape.add(z, s)?;
    let k2 = f(tape, z2)?;
    let s = tape.scale(k2, h / 2.0);
    let z3 = tape.add(z, s)?;
    let k3 = f(tape, z3)?;
    let s = tape.scale(k3, h);
    let z4 = tape.add(z, s)?;
    let k4 = f(tape, z4)?;
    let k2x = tape.scale(k2, 2.0);
    let k3x = tape.scale(k3, 2.0);
    let sum = tape.add(k1, k2x)?;
    let sum = tape.add(sum, k3x)?;
    let sum = tape.add(sum, k4)?;
    let s = tape.scale(sum, h / 6.0);
    let out = tape.add(z, s)?;
    check_finite(tape.value(out), "rk4 update")?;
    Ok(out)
}

/// An autonomous vector field `dz/dtau = f(z)` with parameters.
pub trait VectorField {
    fn eval(&self, z: &Matrix) -> Result<Matrix>;

    /// `(a^T df/dz, a^T df/dtheta)`, parameter gradients in the field's own
    /// parameter order.
    fn vjp(&self, z: &Matrix, a: &Matrix) -> Result<(Matrix, Vec<Matrix>)>;
}

/// Chebyshev points of the first kind mapped onto `[tau0, tau1]`, ascending.
pub fn chebyshev_grid(tau0: f64, tau1: f64, n: usize) -> Vec<f64> {
    let mid = 0.5 * (tau0 + tau1);
    let half = 0.5 * (tau1 - tau0);
    (0..n)
        .rev()
        .map(|k| {
            let x = (PI * (2 * k + 1) as f64 / (2 * n) as f64).cos();
            mid + half * x
        })
        .collect()
}

/// Closed-form barycentric weights `(-1)^k sin((2k+1) pi / 2n)` of the
/// first-kind Chebyshev points, listed in the ascending order used by
/// [`chebyshev_grid`].
pub fn chebyshev_weights(n: usize) -> Vec<f64> {
    (0..n)
        .rev()
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * (PI * (2 * k + 1) as f64 / (2 * n) as f64).sin()
        })
        .collect()
}

/// Second-form barycentric interpolation through `(nodes[j], values[j])`
/// with Chebyshev weights. At a node the stored value is returned as is.
pub fn barycentric_eval(nodes: &[f64], values: &[Matrix], tau: f64) -> Result<Matrix> {
    if nodes.len() != values.len() || nodes.is_empty() {
        return Err(Error::Contract(format!(
            "{} interpolation nodes for {} stored states",
            nodes.len(),
            values.len()
        )));
    }
    if let Some(j) = nodes.iter().position(|&x| x == tau) {
        return Ok(values[j].clone());
    }
    let weights = chebyshev_weights(nodes.len());
    let (rows, cols) = values[0].shape();
    let mut num = Matrix::zeros(rows, cols);
    let mut den = 0.0;
    for ((x, w), v) in nodes.iter().zip(&weights).zip(values) {
        let c = w / (tau - x);
        num.axpy(c, v)?;
        den += c;
    }
    Ok(num.scale(1.0 / den))
}

/// States saved at the Chebyshev nodes of one forward interval.
#[derive(Clone, Debug)]
pub struct IntervalTrace {
    pub tau0: f64,
    pub tau1: f64,
    pub nodes: Vec<f64>,
    pub states: Vec<Matrix>,
}

/// Integrates `f` from `tau0` to `tau1` in `cfg.steps_per_interval` RK4
/// steps. The state at each Chebyshev node is reached by a partial RK4 step
/// from the grid point just before it.
pub fn integrate_interval<F: VectorField + ?Sized>(
    f: &F,
    z0: &Matrix,
    tau0: f64,
    tau1: f64,
    cfg: &SolverConfig,
) -> Result<(Matrix, IntervalTrace)> {
    cfg.validate()?;
    if !(tau1 > tau0) {
        return Err(Error::Contract(format!("empty interval [{tau0}, {tau1}]")));
    }
    let n = cfg.steps_per_interval;
    let h = (tau1 - tau0) / n as f64;
    let nodes = chebyshev_grid(tau0, tau1, cfg.chebyshev_nodes);
    let mut states = Vec::with_capacity(nodes.len());
    let mut next_node = 0;
    let mut z = z0.clone();
    for i in 0..n {
        let t = tau0 + i as f64 * h;
        let t_next = if i + 1 == n { tau1 } else { tau0 + (i + 1) as f64 * h };
        while next_node < nodes.len() && nodes[next_node] < t_next {
            let dt = nodes[next_node] - t;
            states.push(if dt <= 0.0 {
                z.clone()
            } else {
                rk4_step(|_, s| f.eval(s), &z, t, dt)?
            });
            next_node += 1;
        }
        z = rk4_step(|_, s| f.eval(s), &z, t, h)?;
    }
    while states.len() < nodes.len() {
        states.push(z.clone());
    }
    Ok((
        z,
        IntervalTrace {
            tau0,
            tau1,
            nodes,
            states,
        },
    ))
}

fn add_scaled(base: &[Matrix], c: f64, inc: &[Matrix]) -> Result<Vec<Matrix>> {
    base.iter()
        .zip(inc)
        .map(|(b, i)| {
            let mut out = b.clone();
            out.axpy(c, i)?;
            Ok(out)
        })
        .collect()
}

/// Solves the adjoint equations `da/dtau = -a^T df/dz`,
/// `dg/dtau = -a^T df/dtheta` backward from `tau1` (where `a = a1`) to
/// `tau0` with RK4, reading the forward state from the trace's interpolant.
/// Returns `dL/dz(tau0)` and the parameter gradients accumulated over the
/// interval.
pub fn backward_interpolated_adjoint<F: VectorField + ?Sized>(
    f: &F,
    trace: &IntervalTrace,
    a1: &Matrix,
    cfg: &SolverConfig,
) -> Result<(Matrix, Vec<Matrix>)> {
    cfg.validate()?;
    if trace.states.is_empty() || trace.states.len() != trace.nodes.len() {
        return Err(Error::Contract("interval trace has no saved states".into()));
    }
    let z_at = |tau: f64| barycentric_eval(&trace.nodes, &trace.states, tau);
    let n = cfg.steps_per_interval;
    let h = (trace.tau1 - trace.tau0) / n as f64;
    let mut a = a1.clone();
    let mut g: Option<Vec<Matrix>> = None;
    for i in (0..n).rev() {
        let hi = if i + 1 == n { trace.tau1 } else { trace.tau0 + (i + 1) as f64 * h };
        let lo = trace.tau0 + i as f64 * h;
        let mid = hi - h / 2.0;
        let z_hi = z_at(hi)?;
        let z_mid = z_at(mid)?;
        let z_lo = z_at(lo)?;
        let (ka1, kg1) = f.vjp(&z_hi, &a)?;
        let (ka2, kg2) = f.vjp(&z_mid, &a.add(&ka1.scale(h / 2.0))?)?;
        let (ka3, kg3) = f.vjp(&z_mid, &a.add(&ka2.scale(h / 2.0))?)?;
        let (ka4, kg4) = f.vjp(&z_lo, &a.add(&ka3.scale(h))?)?;
        let da = ka1.add(&ka2.scale(2.0))?.add(&ka3.scale(2.0))?.add(&ka4)?;
        a.axpy(h / 6.0, &da)?;
        check_finite(&a, "adjoint state")?;
        let dg: Vec<Matrix> = (0..kg1.len())
            .map(|p| {
                kg1[p]
                    .add(&kg2[p].scale(2.0))?
                    .add(&kg3[p].scale(2.0))?
                    .add(&kg4[p])
            })
            .collect::<Result<_>>()?;
        g = Some(match g {
            None => dg.iter().map(|m| m.scale(h / 6.0)).collect(),
            Some(prev) => add_scaled(&prev, h / 6.0, &dg)?,
        });
    }
    Ok((a, g.unwrap_or_default()))
}

/// Records `cfg.steps_per_interval` RK4 steps on the tape.
pub fn integrate_interval_tape<F>(
    tape: &mut Tape,
    mut f: F,
    z0: Var,
    tau0: f64,
    tau1: f64,
    steps: usize,
) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if steps < 1 {
        return Err(Error::Config("steps_per_interval must be >= 1".into()));
    }
    if !(tau1 > tau0) {
        return Err(Error::Contract(format!("empty interval [{tau0}, {tau1}]")));
    }
    let h = (tau1 - tau0) / steps as f64;
    let mut z = z0;
    for _ in 0..steps {
        z = rk4_step_tape(tape, &mut f, z, h)?;
    }
    Ok(z)
}

/// The model's derivative network: residual aggregation stack plus the
/// jump shift, evaluated on the currently bound snapshot and jump tensor.
pub struct DerivativeNet<'a> {
    params: &'a ModelParams,
    graph: Option<&'a Snapshot>,
    jump: Option<&'a JumpTensor>,
}

impl<'a> DerivativeNet<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        DerivativeNet {
            params,
            graph: None,
            jump: None,
        }
    }

    pub fn set_graph(&mut self, graph: &'a Snapshot) {
        self.graph = Some(graph);
    }

    pub fn set_jump(&mut self, jump: &'a JumpTensor) {
        self.jump = Some(jump);
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    /// Records `F(h)` on the tape using parameter handles `vars`.
    pub fn record(&self, tape: &mut Tape, vars: &FieldVars, h: Var) -> Result<Var> {
        let (Some(graph), Some(jump)) = (self.graph, self.jump) else {
            return Err(Error::Contract(
                "derivative network evaluated before set_graph/set_jump".into(),
            ));
        };
        let p = self.params;
        let inc = stack_increment(tape, h, graph, &vars.layers, p.num_entities, p.activation)?;
        apply_jump(
            tape,
            inc,
            h,
            jump,
            vars.jump_ent,
            vars.jump_rel,
            p.jump.w,
            p.num_entities,
            p.activation,
        )
    }
}

impl VectorField for DerivativeNet<'_> {
    fn eval(&self, z: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.params.bind_field(&mut tape);
        let h = tape.leaf(z.clone());
        let out = self.record(&mut tape, &vars, h)?;
        Ok(tape.value(out).clone())
    }

    fn vjp(&self, z: &Matrix, a: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind_field(&mut tape);
        let h = tape.leaf(z.clone());
        let out = self.record(&mut tape, &vars, h)?;
        let mut grads = tape.backward_from(out, a.clone())?;
        let dz = grads.take(h);
        let dp = vars.flat().into_iter().map(|v| grads.take(v)).collect();
        Ok((dz, dp))
    }
}
