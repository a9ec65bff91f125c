//! Plain-text checkpoints.
//!
//! ```text
//! tkgode-checkpoint 1
//! num_entities 5
//! num_relation_slots 4
//! dim 8
//! num_layers 2
//! activation tanh
//! jump_weight 1e-1
//! decoder distmult
//! tensor h_global 9 8
//! <one line per row, values in shortest round-trip exponent form>
//! ...
//! end
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AggLayerParams, DecoderParams, JumpParams, ModelParams};
use crate::tensor::Matrix;

const MAGIC: &str = "tkgode-checkpoint";
const VERSION: u32 = 1;

pub fn checkpoint_to_string(params: &ModelParams) -> String {
    let mut out = String::new();
    let cfg = params.config();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "num_entities {}", params.num_entities).unwrap();
    writeln!(out, "num_relation_slots {}", params.num_relation_slots).unwrap();
    writeln!(out, "dim {}", cfg.dim).unwrap();
    writeln!(out, "num_layers {}", cfg.num_layers).unwrap();
    writeln!(out, "activation {}", cfg.activation.name()).unwrap();
    writeln!(out, "jump_weight {:e}", cfg.jump_weight).unwrap();
    writeln!(out, "decoder {}", cfg.decoder.name()).unwrap();
    for (name, m) in params.tensor_names().iter().zip(params.tensors()) {
        writeln!(out, "tensor {name} {} {}", m.rows(), m.cols()).unwrap();
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    out.push_str("end\n");
    out
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, checkpoint_to_string(params)).map_err(|e| Error::io(path, e))
}

struct Lines<'a> {
    name: String,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of checkpoint")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.name.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim()),
            _ => Err(self.err(format!("expected `{key} <value>`, found {l:?}"))),
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        v.parse().map_err(|_| self.err(format!("bad value {v:?} for {key}")))
    }
}

pub fn checkpoint_from_str(text: &str, name: &str) -> Result<ModelParams> {
    let mut lines = Lines {
        name: name.to_string(),
        inner: text.lines().enumerate(),
        line: 0,
    };
    let header = lines.next()?;
    if header != format!("{MAGIC} {VERSION}") {
        return Err(lines.err(format!("not a version-{VERSION} checkpoint: {header:?}")));
    }
    let num_entities: usize = lines.parsed("num_entities")?;
    let num_relation_slots: usize = lines.parsed("num_relation_slots")?;
    let dim: usize = lines.parsed("dim")?;
    let num_layers: usize = lines.parsed("num_layers")?;
    let activation = lines.field("activation")?.parse()?;
    let jump_weight: f64 = lines.parsed("jump_weight")?;
    let decoder = lines.field("decoder")?.parse()?;

    let mut read_tensor = |expect_name: &str, rows: usize, cols: usize| -> Result<Matrix> {
        let l = lines.next()?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" || parts[1] != expect_name {
            return Err(lines.err(format!("expected header of tensor {expect_name}, found {l:?}")));
        }
        let shape = (parts[2].parse::<usize>(), parts[3].parse::<usize>());
        if shape != (Ok(rows), Ok(cols)) {
            return Err(lines.err(format!(
                "tensor {expect_name}: expected shape {rows}x{cols}, found {}x{}",
                parts[2], parts[3]
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let l = lines.next()?;
            let before = data.len();
            for v in l.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|_| lines.err(format!("bad number {v:?}")))?);
            }
            if data.len() - before != cols {
                return Err(lines.err(format!("tensor {expect_name}: row has {} values, expected {cols}", data.len() - before)));
            }
        }
        Matrix::from_vec(rows, cols, data)
    };

    let h_global = read_tensor("h_global", num_entities + num_relation_slots, dim)?;
    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        layers.push(AggLayerParams {
            w_ent: read_tensor(&format!("agg.{l}.w_ent"), dim, dim)?,
            w_rel: read_tensor(&format!("agg.{l}.w_rel"), dim, dim)?,
            delta: read_tensor(&format!("agg.{l}.delta"), 1, 1)?,
        });
    }
    let jump = JumpParams {
        w_ent: read_tensor("jump.w_ent", 1, dim)?,
        w_rel: read_tensor("jump.w_rel", 1, dim)?,
        w: jump_weight,
    };
    let core = match decoder {
        crate::model::DecoderKind::TuckER => Some(read_tensor("decoder.core", dim * dim, dim)?),
        crate::model::DecoderKind::DistMult => None,
    };
    if lines.next()? != "end" {
        return Err(lines.err("expected `end`"));
    }
    Ok(ModelParams {
        num_entities,
        num_relation_slots,
        activation,
        h_global,
        layers,
        jump,
        decoder: DecoderParams { kind: decoder, core },
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text, &path.display().to_string())
}
