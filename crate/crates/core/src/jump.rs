//! Stochastic jump layer: a hidden-state shift driven by triples that
//! appear or disappear between consecutive snapshots.

use crate::aggregator::{relation_rows, split_rows};
use crate::autodiff::{Tape, Var};
use crate::data::JumpTensor;
use crate::error::Result;
use crate::model::Activation;

/// Entity rows: `act(mean over deltas (s, r, o, sign) of w_ent * sign * (h_s * h_r))`;
/// relation rows: `w_rel * h_r`. `w_ent` and `w_rel` are `1 x d` diagonals.
pub fn jump_layer_forward(
    tape: &mut Tape,
    h: Var,
    jt: &JumpTensor,
    w_ent: Var,
    w_rel: Var,
    num_entities: usize,
    act: Activation,
) -> Result<Var> {
    let h_rel = split_rows(tape, h, num_entities)?;
    let hs = tape.gather_rows(h, jt.subjects())?;
    let hr = tape.gather_rows(h, &relation_rows(jt.relations(), num_entities))?;
    let msg = tape.hadamard(hs, hr)?;
    let msg = tape.mul_row_vector(msg, w_ent)?;
    let pooled = tape.scatter_mean_rows(msg, jt.objects(), Some(jt.signs()), num_entities)?;
    let ent = act.apply(tape, pooled);
    let rel = tape.mul_row_vector(h_rel, w_rel)?;
    tape.concat_rows(ent, rel)
}

/// `h_agg + w * jump_layer_forward(h_pre)`. With `w == 0` the jump term is
/// not recorded at all, so the result is `h_agg` itself.
#[allow(clippy::too_many_arguments)]
pub fn apply_jump(
    tape: &mut Tape,
    h_agg: Var,
    h_pre: Var,
    jt: &JumpTensor,
    w_ent: Var,
    w_rel: Var,
    w: f64,
    num_entities: usize,
    act: Activation,
) -> Result<Var> {
    if w == 0.0 {
        if h_agg.shape() != h_pre.shape() {
            return Err(crate::error::Error::dim(
                "apply_jump",
                format!("{:?} vs {:?}", h_agg.shape(), h_pre.shape()),
            ));
        }
        return Ok(h_agg);
    }
    let shift = jump_layer_forward(tape, h_pre, jt, w_ent, w_rel, num_entities, act)?;
    let shift = tape.scale(shift, w);
    tape.add(h_agg, shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_jump_tensor, Snapshot};
    use crate::error::Error;
    use crate::tensor::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn single(sign: i8) -> JumpTensor {
        let mut m = BTreeMap::new();
        m.insert((0, 0, 1), sign);
        JumpTensor::from_deltas(0, m)
    }

    fn setup(tape: &mut Tape, d: usize) -> (Var, Var) {
        (tape.leaf(Matrix::filled(1, d, 1.0)), tape.leaf(Matrix::filled(1, d, 1.0)))
    }

    #[test]
    fn empty_tensor_gives_zero_entity_shift() {
        let mut tape = Tape::new();
        let h = tape.leaf(Matrix::filled(4, 2, 0.7));
        let (we, wr) = setup(&mut tape, 2);
        let out = jump_layer_forward(&mut tape, h, &JumpTensor::empty(0), we, wr, 3, Activation::Tanh).unwrap();
        let v = tape.value(out);
        assert!(v.slice_rows(0, 3).as_slice().iter().all(|x| *x == 0.0));
        assert_eq!(v.row(3), &[0.7, 0.7]);
    }

    #[test]
    fn single_delta_signs() {
        let mut tape = Tape::new();
        let h = tape.leaf(Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 0.0], &[0.5, -0.25]]));
        let (we, wr) = setup(&mut tape, 2);
        let up = jump_layer_forward(&mut tape, h, &single(1), we, wr, 2, Activation::Identity).unwrap();
        assert_eq!(tape.value(up).row(1), &[0.5, -0.5]);
        let down = jump_layer_forward(&mut tape, h, &single(-1), we, wr, 2, Activation::Tanh).unwrap();
        assert_eq!(tape.value(down).row(1), &[(-0.5f64).tanh(), 0.5f64.tanh()]);
    }

    /// Dense loop over the full 5 x 2 x 5 grid of (s, r, o) cells.
    #[test]
    fn matches_dense_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (ne, nr, d) = (5, 2, 3);
        let edges = |rng: &mut ChaCha8Rng| -> Vec<(usize, usize, usize)> {
            (0..8).map(|_| (rng.gen_range(0..ne), rng.gen_range(0..nr), rng.gen_range(0..ne))).collect()
        };
        let g0 = Snapshot::from_edges(0, ne, &edges(&mut rng)).unwrap();
        let g1 = Snapshot::from_edges(1, ne, &edges(&mut rng)).unwrap();
        let jt = build_jump_tensor(&g0, &g1);
        let hm = Matrix::uniform(ne + nr, d, 1.0, &mut rng);
        let wem = Matrix::uniform(1, d, 1.0, &mut rng);
        let wrm = Matrix::uniform(1, d, 1.0, &mut rng);
        let hagg = Matrix::uniform(ne + nr, d, 1.0, &mut rng);

        let mut tape = Tape::new();
        let h = tape.leaf(hm.clone());
        let ha = tape.leaf(hagg.clone());
        let we = tape.leaf(wem.clone());
        let wr = tape.leaf(wrm.clone());
        let out = apply_jump(&mut tape, ha, h, &jt, we, wr, 0.3, ne, Activation::Tanh).unwrap();

        let mut expect = hagg.clone();
        for o in 0..ne {
            let mut acc = vec![0.0; d];
            let mut n = 0;
            for s in 0..ne {
                for r in 0..nr {
                    let sign = jt.get(s, r, o) as f64;
                    if sign != 0.0 {
                        n += 1;
                        for j in 0..d {
                            acc[j] += wem.get(0, j) * sign * hm.get(s, j) * hm.get(ne + r, j);
                        }
                    }
                }
            }
            for j in 0..d {
                let shift = if n == 0 { 0.0 } else { (acc[j] / n as f64).tanh() };
                expect.set(o, j, expect.get(o, j) + 0.3 * shift);
            }
        }
        for r in 0..nr {
            for j in 0..d {
                let v = expect.get(ne + r, j) + 0.3 * wrm.get(0, j) * hm.get(ne + r, j);
                expect.set(ne + r, j, v);
            }
        }
        let got = tape.value(out);
        for (a, b) in got.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_weight_is_passthrough() {
        let mut tape = Tape::new();
        let h = tape.leaf(Matrix::filled(3, 2, 0.5));
        let ha = tape.leaf(Matrix::filled(3, 2, 0.1));
        let (we, wr) = setup(&mut tape, 2);
        let before = tape.len();
        let out = apply_jump(&mut tape, ha, h, &single(1), we, wr, 0.0, 2, Activation::Tanh).unwrap();
        assert_eq!(out, ha);
        assert_eq!(tape.len(), before);

        let bad = tape.leaf(Matrix::zeros(2, 2));
        let err = apply_jump(&mut tape, ha, bad, &single(1), we, wr, 0.0, 2, Activation::Tanh).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn empty_tensor_shifts_only_relations() {
        let mut tape = Tape::new();
        let h = tape.leaf(Matrix::filled(3, 2, 0.5));
        let ha = tape.leaf(Matrix::filled(3, 2, 0.1));
        let (we, wr) = setup(&mut tape, 2);
        let out = apply_jump(&mut tape, ha, h, &JumpTensor::empty(0), we, wr, 0.2, 2, Activation::Tanh).unwrap();
        let v = tape.value(out);
        assert_eq!(v.row(0), &[0.1, 0.1]);
        assert!((v.get(2, 0) - (0.1 + 0.2 * 0.5)).abs() < 1e-15);
    }
}
