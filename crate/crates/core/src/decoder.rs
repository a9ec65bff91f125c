//! DistMult and TuckER scoring of `(s, r, o)` triples from a hidden state.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{DecoderKind, ModelParams};
use crate::tensor::Matrix;

fn same_len(op: &'static str, a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
    if a.len() != b.len() || b.len() != c.len() {
        return Err(Error::dim(op, format!("{}, {}, {}", a.len(), b.len(), c.len())));
    }
    Ok(())
}

/// `sum_i h_s[i] h_r[i] h_o[i]`.
pub fn distmult_score(h_s: &[f64], h_r: &[f64], h_o: &[f64]) -> Result<f64> {
    same_len("distmult_score", h_s, h_r, h_o)?;
    Ok(h_s.iter().zip(h_r).zip(h_o).map(|((a, b), c)| a * b * c).sum())
}

/// `sum_{i,j,k} W[i, j, k] h_s[i] h_r[j] h_o[k]` with `core` laid out as a
/// `(d * d) x d` matrix, row `i * d + j`.
pub fn tucker_score(h_s: &[f64], h_r: &[f64], h_o: &[f64], core: &Matrix) -> Result<f64> {
    same_len("tucker_score", h_s, h_r, h_o)?;
    let d = h_s.len();
    if core.shape() != (d * d, d) {
        return Err(Error::dim(
            "tucker_score",
            format!("core {:?} for dimension {d}", core.shape()),
        ));
    }
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            let row = core.row(i * d + j);
            let inner: f64 = row.iter().zip(h_o).map(|(w, o)| w * o).sum();
            total += h_s[i] * h_r[j] * inner;
        }
    }
    Ok(total)
}

fn check_query(params: &ModelParams, h: &Matrix, s: usize, r: usize) -> Result<()> {
    if h.rows() != params.num_rows() {
        return Err(Error::dim(
            "score",
            format!("hidden state has {} rows, model expects {}", h.rows(), params.num_rows()),
        ));
    }
    if s >= params.num_entities {
        return Err(Error::Index {
            op: "score",
            index: s,
            len: params.num_entities,
        });
    }
    if r >= params.num_relation_slots {
        return Err(Error::Index {
            op: "score",
            index: r,
            len: params.num_relation_slots,
        });
    }
    Ok(())
}

/// Scores of `(s_i, r_i, v)` for every query `i` and entity `v`, as a
/// `queries x |V|` matrix.
pub fn score_matrix(h: &Matrix, params: &ModelParams, queries: &[(usize, usize)]) -> Result<Matrix> {
    let ne = params.num_entities;
    let d = h.cols();
    let mut q = Matrix::zeros(queries.len(), d);
    for (i, &(s, r)) in queries.iter().enumerate() {
        check_query(params, h, s, r)?;
        let (hs, hr) = (h.row(s), h.row(ne + r));
        match (&params.decoder.kind, &params.decoder.core) {
            (DecoderKind::DistMult, _) => {
                for (k, out) in q.row_mut(i).iter_mut().enumerate() {
                    *out = hs[k] * hr[k];
                }
            }
            (DecoderKind::TuckER, Some(core)) => {
                let out = q.row_mut(i);
                for a in 0..d {
                    for b in 0..d {
                        let c = hs[a] * hr[b];
                        for (o, w) in out.iter_mut().zip(core.row(a * d + b)) {
                            *o += c * w;
                        }
                    }
                }
            }
            (DecoderKind::TuckER, None) => {
                return Err(Error::Contract("TuckER decoder without a core tensor".into()))
            }
        }
    }
    let ent = h.slice_rows(0, ne);
    q.matmul(&ent.transpose())
}

/// Scores of `(s, r, v)` for every entity `v`.
pub fn score_all_objects(h: &Matrix, params: &ModelParams, s: usize, r: usize) -> Result<Vec<f64>> {
    Ok(score_matrix(h, params, &[(s, r)])?.into_vec())
}

/// Tape version of [`score_matrix`]; `core` is the bound TuckER core.
pub fn score_queries_tape(
    tape: &mut Tape,
    h: Var,
    core: Option<Var>,
    kind: DecoderKind,
    num_entities: usize,
    queries: &[(usize, usize)],
) -> Result<Var> {
    let subjects: Vec<usize> = queries.iter().map(|q| q.0).collect();
    let relations: Vec<usize> = queries.iter().map(|q| num_entities + q.1).collect();
    for &s in &subjects {
        if s >= num_entities {
            return Err(Error::Index {
                op: "score_queries",
                index: s,
                len: num_entities,
            });
        }
    }
    let hs = tape.gather_rows(h, &subjects)?;
    let hr = tape.gather_rows(h, &relations)?;
    let q = match (kind, core) {
        (DecoderKind::DistMult, _) => tape.hadamard(hs, hr)?,
        (DecoderKind::TuckER, Some(core)) => {
            let kron = tape.row_kron(hs, hr)?;
            tape.matmul(kron, core)?
        }
        (DecoderKind::TuckER, None) => {
            return Err(Error::Contract("TuckER decoder without a core tensor".into()))
        }
    };
    let ent_idx: Vec<usize> = (0..num_entities).collect();
    let ent = tape.gather_rows(h, &ent_idx)?;
    let ent_t = tape.transpose(ent);
    tape.matmul(q, ent_t)
}
