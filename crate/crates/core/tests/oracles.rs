//! Numerical routines checked against independent references.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tkgode::autodiff::{grad_check, Tape};
use tkgode::data::{build_jump_tensor, generate_synthetic_tkg, build_snapshots, PatternSpec, TimeMap};
use tkgode::decoder::score_queries_tape;
use tkgode::model::{DecoderKind, ModelConfig, ModelParams};
use tkgode::ode::{
    backward_interpolated_adjoint, integrate_interval, BackwardMode, DerivativeNet, SolverConfig, VectorField,
};
use tkgode::{Matrix, Result};

/// `dz/dt = z A` for a row-vector state.
struct Linear {
    a: Matrix,
}

impl VectorField for Linear {
    fn eval(&self, z: &Matrix) -> Result<Matrix> {
        z.matmul(&self.a)
    }

    fn vjp(&self, z: &Matrix, adj: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        Ok((adj.matmul(&self.a.transpose())?, vec![z.transpose().matmul(adj)?]))
    }
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn solver(steps: usize, nodes: usize) -> SolverConfig {
    SolverConfig {
        steps_per_interval: steps,
        chebyshev_nodes: nodes,
        backward_mode: BackwardMode::InterpolatedAdjoint,
    }
}

fn random_linear(seed: u64, n: usize) -> (Linear, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::uniform(n, n, 0.6, &mut rng);
    let z0 = Matrix::uniform(2, n, 1.0, &mut rng);
    (Linear { a }, z0)
}

#[test]
fn linear_flow_matches_matrix_exponential() {
    for seed in 0..5 {
        let (f, z0) = random_linear(seed, 4);
        let (z1, _) = integrate_interval(&f, &z0, 0.0, 1.0, &solver(50, 3)).unwrap();
        let expect = to_na(&z0) * to_na(&f.a).exp();
        for (a, b) in z1.as_slice().iter().zip(expect.transpose().as_slice()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

/// `L = <a1, z0 expm(A)>`: the state gradient is `a1 expm(A)^T`; the
/// parameter gradient comes from central differences of the exponential.
#[test]
fn interpolated_adjoint_matches_exponential_oracle() {
    for seed in 0..3 {
        let (f, z0) = random_linear(seed, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let a1 = Matrix::uniform(2, 3, 1.0, &mut rng);
        let cfg = solver(60, 12);
        let (_, trace) = integrate_interval(&f, &z0, 0.0, 1.0, &cfg).unwrap();
        let (a0, grads) = backward_interpolated_adjoint(&f, &trace, &a1, &cfg).unwrap();

        let e = to_na(&f.a).exp();
        let expect_a0 = to_na(&a1) * e.transpose();
        for (x, y) in a0.as_slice().iter().zip(expect_a0.transpose().as_slice()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }

        let objective = |a: &DMatrix<f64>| (to_na(&z0) * a.clone().exp()).component_mul(&to_na(&a1)).sum();
        let eps = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut plus = to_na(&f.a);
                plus[(i, j)] += eps;
                let mut minus = to_na(&f.a);
                minus[(i, j)] -= eps;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                let got = grads[0].get(i, j);
                assert!((got - fd).abs() < 1e-6, "dA[{i},{j}] {got} vs {fd}");
            }
        }
    }
}

#[test]
fn one_step_matches_fine_grid_on_a_model_interval() {
    let store = generate_synthetic_tkg(4, 2, 6, &PatternSpec::Random { events_per_step: 4 }, 3)
        .unwrap()
        .augment_reciprocal()
        .unwrap();
    let snaps = build_snapshots(&store).unwrap();
    let jt = build_jump_tensor(&snaps[2], &snaps[3]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = ModelParams::init(&ModelConfig { dim: 5, ..Default::default() }, 4, 4, &mut rng).unwrap();
    let mut net = DerivativeNet::new(&params);
    net.set_graph(&snaps[3]);
    net.set_jump(&jt);
    let tm = TimeMap::new(6).unwrap();
    let h0 = params.h_global.clone();
    let (coarse, _) = integrate_interval(&net, &h0, tm.tau(3), tm.tau(4), &solver(1, 3)).unwrap();
    let (fine, _) = integrate_interval(&net, &h0, tm.tau(3), tm.tau(4), &solver(1000, 3)).unwrap();
    assert!(coarse.sub(&fine).unwrap().max_abs() < 1e-8);
}

#[test]
fn decoder_gradients_match_finite_differences() {
    let (ne, nr, d) = (5, 4, 3);
    let queries = [(0, 1), (3, 2), (4, 0)];
    for kind in [DecoderKind::DistMult, DecoderKind::TuckER] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = Matrix::uniform(ne + nr, d, 1.0, &mut rng);
        let core = Matrix::uniform(d * d, d, 1.0, &mut rng);
        let weights = Matrix::uniform(queries.len(), ne, 1.0, &mut rng);
        let split = h.len();
        let mut x: Vec<f64> = h.as_slice().to_vec();
        if kind == DecoderKind::TuckER {
            x.extend_from_slice(core.as_slice());
        }
        let err = grad_check(
            |x| {
                let mut tape = Tape::new();
                let hv = tape.leaf(Matrix::from_vec(ne + nr, d, x[..split].to_vec())?);
                let cv = match kind {
                    DecoderKind::TuckER => Some(tape.leaf(Matrix::from_vec(d * d, d, x[split..].to_vec())?)),
                    DecoderKind::DistMult => None,
                };
                let s = score_queries_tape(&mut tape, hv, cv, kind, ne, &queries)?;
                let w = tape.leaf(weights.clone());
                let p = tape.hadamard(s, w)?;
                let l = tape.sum(p);
                let g = tape.backward(l)?;
                let mut flat = g.get(hv).into_vec();
                if let Some(c) = cv {
                    flat.extend(g.get(c).into_vec());
                }
                Ok((tape.value(l).item(), flat))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{kind:?}: {err}");
    }
}

#[test]
fn rk4_step_has_fourth_order_local_error() {
    // Local error of one step on dz/dt = -z is ~ h^5 / 120.
    let f = |_t: f64, z: &Matrix| Ok(z.scale(-1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z0 = Matrix::scalar(rng.gen_range(0.5..2.0));
    let err = |h: f64| {
        let z = tkgode::ode::rk4_step(f, &z0, 0.0, h).unwrap().item();
        (z - z0.item() * (-h).exp()).abs()
    };
    let ratio = err(0.1) / err(0.05);
    assert!((ratio.log2() - 5.0).abs() < 0.2, "{ratio}");
}

/// On a unit-length interval the interpolation error sits far above
/// roundoff, and it shrinks as Chebyshev nodes are added. A 20-node run
/// stands in for the exact trajectory so RK4 error cancels out.
#[test]
fn adjoint_error_shrinks_with_more_nodes() {
    let (f, z0) = random_linear(4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let a1 = Matrix::uniform(2, 3, 1.0, &mut rng);
    let run = |n_c| {
        let cfg = solver(2, n_c);
        let (_, trace) = integrate_interval(&f, &z0, 0.0, 1.0, &cfg).unwrap();
        backward_interpolated_adjoint(&f, &trace, &a1, &cfg).unwrap()
    };
    let (ref_a0, ref_g) = run(20);
    let errs: Vec<f64> = [3, 5, 9]
        .into_iter()
        .map(|n_c| {
            let (a0, g) = run(n_c);
            a0.sub(&ref_a0).unwrap().max_abs().max(g[0].sub(&ref_g[0]).unwrap().max_abs())
        })
        .collect();
    assert!(errs[0] > 1e-10 && errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}
