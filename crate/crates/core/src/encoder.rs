//! Rolls the global embedding forward through the observed snapshots to the
//! hidden state at a prediction timestamp.
//!
//! To predict at `target`, the state starts as `H_global` at `target - k - 1`
//! and is integrated over the `k + 1` unit intervals `[t', t' + 1]`,
//! `t' = target - k - 1 ..= target - 1`. Interval `t'` binds snapshot `t'`
//! and the jump tensor from `t'` to `t' + 1`, except the last interval, which
//! reuses the jump from `t' - 1` to `t'` because snapshot `target` is not
//! observable yet. Windows that would start before timestamp 0 are
//! truncated.

use crate::autodiff::{Tape, Var};
use crate::data::{build_jump_tensor, build_snapshots, JumpTensor, QuadrupleStore, Snapshot, TimeMap};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelVars};
use crate::ode::{
    backward_interpolated_adjoint, integrate_interval, integrate_interval_tape, DerivativeNet, IntervalTrace,
    SolverConfig,
};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub history: usize,
    pub solver: SolverConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            history: 4,
            solver: SolverConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history < 1 {
            return Err(Error::Config("history length k must be >= 1".into()));
        }
        self.solver.validate()
    }
}

/// Snapshots, consecutive jump tensors and the time map of one dataset.
#[derive(Clone, Debug)]
pub struct TemporalGraph {
    snapshots: Vec<Snapshot>,
    /// `jumps[t]` holds `T(t + 1) - T(t)`.
    jumps: Vec<JumpTensor>,
    empty_jump: JumpTensor,
    time: TimeMap,
}

impl TemporalGraph {
    pub fn from_store(store: &QuadrupleStore) -> Result<Self> {
        let time = TimeMap::new(store.num_timestamps())?;
        Ok(TemporalGraph::from_snapshots(build_snapshots(store)?, time))
    }

    pub fn from_snapshots(snapshots: Vec<Snapshot>, time: TimeMap) -> Self {
        let jumps = snapshots
            .windows(2)
            .map(|w| build_jump_tensor(&w[0], &w[1]))
            .collect();
        TemporalGraph {
            snapshots,
            jumps,
            empty_jump: JumpTensor::empty(0),
            time,
        }
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn jumps(&self) -> &[JumpTensor] {
        &self.jumps
    }

    pub fn time_map(&self) -> &TimeMap {
        &self.time
    }

    pub fn num_timestamps(&self) -> usize {
        self.snapshots.len()
    }

    fn jump(&self, j: Option<usize>) -> &JumpTensor {
        j.map_or(&self.empty_jump, |j| &self.jumps[j])
    }
}

/// One integration interval: which snapshot and jump tensor are bound and
/// over which normalized times.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalPlan {
    pub graph_t: usize,
    /// Index into [`TemporalGraph::jumps`]; `None` binds an empty tensor.
    pub jump: Option<usize>,
    pub tau0: f64,
    pub tau1: f64,
}

fn check_no_leakage(plan: &[IntervalPlan], limit: usize) -> Result<()> {
    for p in plan {
        let newest = p.jump.map_or(p.graph_t, |j| j + 1).max(p.graph_t);
        if newest >= limit {
            return Err(Error::Leakage(format!(
                "interval at {} reads snapshot {newest}, but only snapshots < {limit} are observable",
                p.graph_t
            )));
        }
    }
    Ok(())
}

/// The intervals integrated to reach the hidden state at `target_t`.
pub fn plan_intervals(graph: &TemporalGraph, history: usize, target_t: usize) -> Result<Vec<IntervalPlan>> {
    if target_t == 0 {
        return Err(Error::Contract("no history before timestamp 0".into()));
    }
    if target_t > graph.num_timestamps() {
        return Err(Error::Contract(format!(
            "target {target_t} needs snapshots up to {}, only {} exist",
            target_t - 1,
            graph.num_timestamps()
        )));
    }
    let time = graph.time_map();
    let start = target_t.saturating_sub(history + 1);
    let plan: Vec<IntervalPlan> = (start..target_t)
        .map(|t| IntervalPlan {
            graph_t: t,
            jump: if t + 1 < target_t { Some(t) } else { t.checked_sub(1) },
            tau0: time.tau(t),
            tau1: time.tau_at((t + 1) as f64),
        })
        .collect();
    check_no_leakage(&plan, target_t)?;
    Ok(plan)
}

/// Intervals for predicting `delta_t` steps past the last observed snapshot
/// `history_end`: `k` standard intervals, then one interval of length
/// `delta_t` unit steps bound to snapshot `history_end`.
pub fn plan_long_horizon(
    graph: &TemporalGraph,
    history: usize,
    history_end: usize,
    delta_t: usize,
) -> Result<Vec<IntervalPlan>> {
    if delta_t < 1 {
        return Err(Error::Contract(format!("horizon must be >= 1, got {delta_t}")));
    }
    if history_end >= graph.num_timestamps() {
        return Err(Error::Contract(format!(
            "history ends at {history_end}, only {} snapshots exist",
            graph.num_timestamps()
        )));
    }
    let time = graph.time_map();
    let start = history_end.saturating_sub(history);
    let mut plan: Vec<IntervalPlan> = (start..history_end)
        .map(|t| IntervalPlan {
            graph_t: t,
            jump: Some(t),
            tau0: time.tau(t),
            tau1: time.tau_at((t + 1) as f64),
        })
        .collect();
    plan.push(IntervalPlan {
        graph_t: history_end,
        jump: history_end.checked_sub(1),
        tau0: time.tau(history_end),
        tau1: time.tau_at((history_end + delta_t) as f64),
    });
    check_no_leakage(&plan, history_end + 1)?;
    Ok(plan)
}

/// Integrates the plan numerically, keeping the Chebyshev traces for the
/// adjoint pass.
pub fn run_plan(
    graph: &TemporalGraph,
    params: &ModelParams,
    solver: &SolverConfig,
    plan: &[IntervalPlan],
) -> Result<(Matrix, Vec<IntervalTrace>)> {
    let mut z = params.h_global.clone();
    let mut traces = Vec::with_capacity(plan.len());
    for p in plan {
        let mut net = DerivativeNet::new(params);
        net.set_graph(&graph.snapshots[p.graph_t]);
        net.set_jump(graph.jump(p.jump));
        let (next, trace) = integrate_interval(&net, &z, p.tau0, p.tau1, solver)?;
        z = next;
        traces.push(trace);
    }
    Ok((z, traces))
}

/// Records the whole plan on a tape, starting from `vars.h_global`.
pub fn run_plan_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    graph: &TemporalGraph,
    params: &ModelParams,
    solver: &SolverConfig,
    plan: &[IntervalPlan],
) -> Result<Var> {
    let mut z = vars.h_global;
    for p in plan {
        let mut net = DerivativeNet::new(params);
        net.set_graph(&graph.snapshots[p.graph_t]);
        net.set_jump(graph.jump(p.jump));
        z = integrate_interval_tape(
            tape,
            |t, v| net.record(t, &vars.field, v),
            z,
            p.tau0,
            p.tau1,
            solver.steps_per_interval,
        )?;
    }
    Ok(z)
}

/// Pulls `dL/dH(end of plan)` back through every interval with the
/// interpolated adjoint. Returns `dL/dH_global` and the derivative-network
/// parameter gradients.
pub fn adjoint_plan(
    graph: &TemporalGraph,
    params: &ModelParams,
    solver: &SolverConfig,
    plan: &[IntervalPlan],
    traces: &[IntervalTrace],
    grad_out: &Matrix,
) -> Result<(Matrix, Vec<Matrix>)> {
    if traces.len() != plan.len() {
        return Err(Error::Contract(format!(
            "{} traces for {} intervals",
            traces.len(),
            plan.len()
        )));
    }
    let mut a = grad_out.clone();
    let mut field: Vec<Matrix> = params.tensors()[1..1 + params.num_field_tensors()]
        .iter()
        .map(|m| Matrix::zeros(m.rows(), m.cols()))
        .collect();
    for (p, trace) in plan.iter().zip(traces).rev() {
        let mut net = DerivativeNet::new(params);
        net.set_graph(&graph.snapshots[p.graph_t]);
        net.set_jump(graph.jump(p.jump));
        let (a0, g) = backward_interpolated_adjoint(&net, trace, &a, solver)?;
        for (acc, gi) in field.iter_mut().zip(&g) {
            acc.add_assign(gi)?;
        }
        a = a0;
    }
    Ok((a, field))
}

/// Hidden state at `target_t`, using only snapshots before it.
pub fn infer_representation(
    graph: &TemporalGraph,
    params: &ModelParams,
    cfg: &EncoderConfig,
    target_t: usize,
) -> Result<Matrix> {
    cfg.validate()?;
    let plan = plan_intervals(graph, cfg.history, target_t)?;
    Ok(run_plan(graph, params, &cfg.solver, &plan)?.0)
}

/// Hidden state `delta_t` steps after `history_end`, using only snapshots up
/// to `history_end`.
pub fn infer_long_horizon(
    graph: &TemporalGraph,
    params: &ModelParams,
    cfg: &EncoderConfig,
    history_end: usize,
    delta_t: usize,
) -> Result<Matrix> {
    cfg.validate()?;
    let plan = plan_long_horizon(graph, cfg.history, history_end, delta_t)?;
    Ok(run_plan(graph, params, &cfg.solver, &plan)?.0)
}
