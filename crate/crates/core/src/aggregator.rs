//! Composition-based relational graph aggregation.
//!
//! Hidden states are `(|V| + R) x d` matrices with entity rows first and
//! relation rows after them; relation `r` lives in row `|V| + r`. Weights act
//! on row vectors from the right (`h W`).

use crate::autodiff::{Tape, Var};
use crate::data::Snapshot;
use crate::error::{Error, Result};
use crate::model::{Activation, LayerVars};

/// Elementwise product `h_s * h_r`.
pub fn compose(h_s: &[f64], h_r: &[f64]) -> Result<Vec<f64>> {
    if h_s.len() != h_r.len() {
        return Err(Error::dim(
            "compose",
            format!("{} vs {}", h_s.len(), h_r.len()),
        ));
    }
    Ok(h_s.iter().zip(h_r).map(|(a, b)| a * b).collect())
}

/// Row indices of the relations of `rels` inside the hidden state.
pub(crate) fn relation_rows(rels: &[usize], num_entities: usize) -> Vec<usize> {
    rels.iter().map(|r| num_entities + r).collect()
}

pub(crate) fn split_rows(tape: &mut Tape, h: Var, num_entities: usize) -> Result<Var> {
    if h.rows() < num_entities {
        return Err(Error::dim(
            "hidden state",
            format!("{} rows for {num_entities} entities", h.rows()),
        ));
    }
    let rel_idx: Vec<usize> = (num_entities..h.rows()).collect();
    tape.gather_rows(h, &rel_idx)
}

/// One aggregation layer without the residual connection: entity rows are
/// `act(mean over in-edges (s, r) of (h_s * h_r) W_ent)`, relation rows are
/// `h_r W_rel`.
pub fn agg_layer_forward(
    tape: &mut Tape,
    h: Var,
    graph: &Snapshot,
    layer: &LayerVars,
    num_entities: usize,
    act: Activation,
) -> Result<Var> {
    let h_rel = split_rows(tape, h, num_entities)?;
    let hs = tape.gather_rows(h, graph.subjects())?;
    let hr = tape.gather_rows(h, &relation_rows(graph.relations(), num_entities))?;
    let msg = tape.hadamard(hs, hr)?;
    let msg = tape.matmul(msg, layer.w_ent)?;
    let pooled = tape.scatter_mean_rows(msg, graph.objects(), None, num_entities)?;
    let ent = act.apply(tape, pooled);
    let rel = tape.matmul(h_rel, layer.w_rel)?;
    tape.concat_rows(ent, rel)
}

/// `delta * agg_layer_forward(h)`: the change a residual layer adds.
pub fn layer_increment(
    tape: &mut Tape,
    h: Var,
    graph: &Snapshot,
    layer: &LayerVars,
    num_entities: usize,
    act: Activation,
) -> Result<Var> {
    let f = agg_layer_forward(tape, h, graph, layer, num_entities, act)?;
    tape.mul_scalar(layer.delta, f)
}

pub fn residual_layer_forward(
    tape: &mut Tape,
    h: Var,
    graph: &Snapshot,
    layer: &LayerVars,
    num_entities: usize,
    act: Activation,
) -> Result<Var> {
    let inc = layer_increment(tape, h, graph, layer, num_entities, act)?;
    tape.add(h, inc)
}

pub fn stack_forward(
    tape: &mut Tape,
    h: Var,
    graph: &Snapshot,
    layers: &[LayerVars],
    num_entities: usize,
    act: Activation,
) -> Result<Var> {
    let mut cur = h;
    for layer in layers {
        cur = residual_layer_forward(tape, cur, graph, layer, num_entities, act)?;
    }
    Ok(cur)
}

/// `stack_forward(h) - h`, accumulated layer by layer instead of by
/// subtraction so a zero-gated stack yields an exact zero.
pub fn stack_increment(
    tape: &mut Tape,
    h: Var,
    graph: &Snapshot,
    layers: &[LayerVars],
    num_entities: usize,
    act: Activation,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Contract("aggregation stack needs at least one layer".into()));
    }
    let mut cur = h;
    let mut total: Option<Var> = None;
    for layer in layers {
        let inc = layer_increment(tape, cur, graph, layer, num_entities, act)?;
        cur = tape.add(cur, inc)?;
        total = Some(match total {
            None => inc,
            Some(t) => tape.add(t, inc)?,
        });
    }
    Ok(total.expect("non-empty stack"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer(tape: &mut Tape, w_ent: Matrix, w_rel: Matrix, delta: f64) -> LayerVars {
        LayerVars {
            w_ent: tape.leaf(w_ent),
            w_rel: tape.leaf(w_rel),
            delta: tape.leaf(Matrix::scalar(delta)),
        }
    }

    /// Materializes per-relation adjacency counts and loops over every
    /// (s, r, o) cell.
    fn dense_reference(h: &Matrix, edges: &[(usize, usize, usize)], ne: usize, nr: usize, w_ent: &Matrix, w_rel: &Matrix) -> Matrix {
        let d = h.cols();
        let mut adj = vec![vec![vec![0usize; ne]; nr]; ne];
        for &(s, r, o) in edges {
            adj[s][r][o] += 1;
        }
        let mut out = Matrix::zeros(ne + nr, d);
        for o in 0..ne {
            let mut acc = vec![0.0; d];
            let mut count = 0;
            for s in 0..ne {
                for r in 0..nr {
                    for _ in 0..adj[s][r][o] {
                        count += 1;
                        for j in 0..d {
                            let mut v = 0.0;
                            for i in 0..d {
                                v += h.get(s, i) * h.get(ne + r, i) * w_ent.get(i, j);
                            }
                            acc[j] += v;
                        }
                    }
                }
            }
            if count > 0 {
                for j in 0..d {
                    out.set(o, j, (acc[j] / count as f64).tanh());
                }
            }
        }
        for r in 0..nr {
            for j in 0..d {
                let mut v = 0.0;
                for i in 0..d {
                    v += h.get(ne + r, i) * w_rel.get(i, j);
                }
                out.set(ne + r, j, v);
            }
        }
        out
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), vec![3.0, 8.0]);
        assert_eq!(compose(&[1.5, -2.0], &[1.0, 1.0]).unwrap(), vec![1.5, -2.0]);
        assert!(compose(&[1.0], &[1.0, 2.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(compose(&a, &b).unwrap(), compose(&b, &a).unwrap());
    }

    #[test]
    fn single_edge_identity_weight() {
        let mut tape = Tape::new();
        // 2 entities, 1 relation, d = 2
        let h = tape.leaf(Matrix::from_rows(&[&[1.0, 2.0], &[5.0, 5.0], &[3.0, -1.0]]));
        let graph = Snapshot::from_edges(0, 2, &[(0, 0, 1)]).unwrap();
        let l = layer(&mut tape, Matrix::identity(2), Matrix::identity(2), 1.0);
        let out = agg_layer_forward(&mut tape, h, &graph, &l, 2, Activation::Identity).unwrap();
        let v = tape.value(out);
        assert_eq!(v.row(1), &[3.0, -2.0]);
        assert_eq!(v.row(0), &[0.0, 0.0]);
        assert_eq!(v.row(2), &[3.0, -1.0]);
    }

    #[test]
    fn matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (ne, nr, d) = (6, 3, 4);
        let edges: Vec<_> = (0..14)
            .map(|_| (rng.gen_range(0..ne), rng.gen_range(0..nr), rng.gen_range(0..ne)))
            .collect();
        let graph = Snapshot::from_edges(0, ne, &edges).unwrap();
        let hm = Matrix::uniform(ne + nr, d, 1.0, &mut rng);
        let we = Matrix::uniform(d, d, 1.0, &mut rng);
        let wr = Matrix::uniform(d, d, 1.0, &mut rng);
        let mut tape = Tape::new();
        let h = tape.leaf(hm.clone());
        let l = layer(&mut tape, we.clone(), wr.clone(), 0.3);
        let out = agg_layer_forward(&mut tape, h, &graph, &l, ne, Activation::Tanh).unwrap();
        let expect = dense_reference(&hm, &edges, ne, nr, &we, &wr);
        let got = tape.value(out);
        for (a, b) in got.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_snapshot_zeroes_entities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let h = tape.leaf(Matrix::uniform(5, 3, 1.0, &mut rng));
        let wr = Matrix::uniform(3, 3, 1.0, &mut rng);
        let l = layer(&mut tape, Matrix::identity(3), wr, 1.0);
        let graph = Snapshot::from_edges(0, 3, &[]).unwrap();
        let out = agg_layer_forward(&mut tape, h, &graph, &l, 3, Activation::Tanh).unwrap();
        let v = tape.value(out).clone();
        assert!(v.slice_rows(0, 3).as_slice().iter().all(|x| *x == 0.0));
        let rel = tape.value(h).slice_rows(3, 5).matmul(tape.value(l.w_rel)).unwrap();
        assert_eq!(v.slice_rows(3, 5), rel);
    }

    #[test]
    fn out_of_range_edge() {
        let mut tape = Tape::new();
        let h = tape.leaf(Matrix::zeros(3, 2));
        let l = layer(&mut tape, Matrix::identity(2), Matrix::identity(2), 1.0);
        let graph = Snapshot::from_edges(0, 2, &[(0, 5, 1)]).unwrap();
        let err = agg_layer_forward(&mut tape, h, &graph, &l, 2, Activation::Tanh).unwrap_err();
        assert!(matches!(err, Error::Index { .. }));
    }

    #[test]
    fn residual_and_stack_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let graph = Snapshot::from_edges(0, 4, &[(0, 0, 1), (2, 1, 1), (3, 0, 2)]).unwrap();
        let hm = Matrix::uniform(6, 3, 1.0, &mut rng);
        let mut tape = Tape::new();
        let h = tape.leaf(hm.clone());
        let l0 = layer(&mut tape, Matrix::xavier(3, 3, &mut rng), Matrix::xavier(3, 3, &mut rng), 0.0);
        let out = residual_layer_forward(&mut tape, h, &graph, &l0, 4, Activation::Tanh).unwrap();
        assert_eq!(tape.value(out), &hm);

        let l1 = layer(&mut tape, Matrix::xavier(3, 3, &mut rng), Matrix::xavier(3, 3, &mut rng), 1.0);
        let a = agg_layer_forward(&mut tape, h, &graph, &l1, 4, Activation::Tanh).unwrap();
        let r = residual_layer_forward(&mut tape, h, &graph, &l1, 4, Activation::Tanh).unwrap();
        assert_eq!(tape.value(r), &hm.add(tape.value(a)).unwrap());

        let s1 = stack_forward(&mut tape, h, &graph, &[l1], 4, Activation::Tanh).unwrap();
        assert_eq!(tape.value(s1), tape.value(r));

        let zero = [l0, l0, l0];
        let s = stack_forward(&mut tape, h, &graph, &zero, 4, Activation::Tanh).unwrap();
        assert_eq!(tape.value(s), &hm);
        let inc = stack_increment(&mut tape, h, &graph, &zero, 4, Activation::Tanh).unwrap();
        assert_eq!(tape.value(inc).max_abs(), 0.0);

        let l2 = layer(&mut tape, Matrix::xavier(3, 3, &mut rng), Matrix::xavier(3, 3, &mut rng), 0.4);
        let both = stack_forward(&mut tape, h, &graph, &[l1, l2], 4, Activation::Tanh).unwrap();
        let first = residual_layer_forward(&mut tape, h, &graph, &l1, 4, Activation::Tanh).unwrap();
        let manual = residual_layer_forward(&mut tape, first, &graph, &l2, 4, Activation::Tanh).unwrap();
        assert_eq!(tape.value(both), tape.value(manual));
        let inc = stack_increment(&mut tape, h, &graph, &[l1, l2], 4, Activation::Tanh).unwrap();
        let diff = tape.value(both).sub(&hm).unwrap();
        let gap = tape.value(inc).sub(&diff).unwrap().max_abs();
        assert!(gap < 1e-15, "{gap}");
    }
}
