//! Command implementations behind the `tkgode` binary.

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{RunConfig, SyntheticSpec};
use crate::data::{generate_synthetic_tkg, write_quadruples, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_metrics_csv, write_ranks_jsonl, FilterSetting, MetricsReport, RankRecord, Subset};
use crate::gradcheck::{gradcheck_model, GradcheckReport, MODEL_GRADCHECK_EPS, MODEL_GRADCHECK_STENCIL};
use crate::training::{train, Dataset};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RANKS_FILE: &str = "ranks.jsonl";

/// Exit codes of the binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn prepare_output(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.resolved_output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub losses: Vec<f64>,
}

/// Trains from `cfg`, writing the checkpoint, per-epoch losses and the
/// resolved config to the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutputs> {
    let store = cfg.data.load()?;
    let data = Dataset::new(&store)?;
    let dir = prepare_output(cfg)?;
    let (params, losses) = train(&data, &cfg.train, |epoch, loss| {
        eprintln!("epoch {epoch:>3}  mean loss {loss:.6}");
    })?;
    let checkpoint = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &params)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    let loss_csv = dir.join(LOSS_FILE);
    fs::write(&loss_csv, csv).map_err(|e| Error::io(&loss_csv, e))?;
    Ok(TrainOutputs {
        checkpoint,
        loss_csv,
        losses,
    })
}

/// Evaluates a checkpoint on the test split, one report per subset; writes
/// the metrics CSV and per-query ranks.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    setting: FilterSetting,
    subsets: &[Subset],
) -> Result<Vec<MetricsReport>> {
    let store = cfg.data.load()?;
    let data = Dataset::new(&store)?;
    let params = load_checkpoint(checkpoint)?;
    let expected = data.init_params(&cfg.train.model, 0)?;
    for ((name, want), got) in expected.tensor_names().iter().zip(expected.tensors()).zip(params.tensors()) {
        if want.shape() != got.shape() {
            return Err(Error::Config(format!(
                "checkpoint {} does not fit the config: tensor {name} expected shape {}x{}, found {}x{}",
                checkpoint.display(),
                want.rows(),
                want.cols(),
                got.rows(),
                got.cols()
            )));
        }
    }
    if expected.tensors().len() != params.tensors().len() || expected.config() != params.config() {
        return Err(Error::Config(format!(
            "checkpoint {} does not fit the config: expected {:?}, found {:?}",
            checkpoint.display(),
            expected.config(),
            params.config()
        )));
    }
    let dir = prepare_output(cfg)?;
    let mut reports = Vec::new();
    let mut records = Vec::new();
    for &subset in subsets {
        let (report, recs) = evaluate(&data, &params, &cfg.train.encoder, setting, subset)?;
        reports.push(report);
        records.push(recs);
    }
    write_metrics_csv(&dir.join(METRICS_FILE), &reports)?;
    let runs: Vec<(&str, &[RankRecord])> =
        reports.iter().zip(&records).map(|(r, recs)| (r.subset.as_str(), recs.as_slice())).collect();
    write_ranks_jsonl(&dir.join(RANKS_FILE), &runs)?;
    Ok(reports)
}

/// Writes `train.txt`, `valid.txt` and `test.txt` split 80/10/10 by time.
pub fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> Result<()> {
    let store = generate_synthetic_tkg(spec.entities, spec.relations, spec.timestamps, &spec.pattern, spec.seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (split, file) in [(Split::Train, "train.txt"), (Split::Valid, "valid.txt"), (Split::Test, "test.txt")] {
        write_quadruples(&out.join(file), store.events_in(split))?;
    }
    Ok(())
}

/// Whole-model gradient check. Only meant for small models.
pub fn cmd_gradcheck(cfg: &RunConfig, corrupt: bool) -> Result<GradcheckReport> {
    let store = cfg.data.load()?;
    if cfg.train.model.dim > 16 || store.num_entities() > 8 {
        return Err(Error::Config(format!(
            "gradient check is limited to dim <= 16 and <= 8 entities (got {} and {})",
            cfg.train.model.dim,
            store.num_entities()
        )));
    }
    let data = Dataset::new(&store)?;
    let params = data.init_params(&cfg.train.model, cfg.train.seed)?;
    gradcheck_model(
        &data,
        &params,
        &cfg.train.encoder,
        cfg.train.batch_size,
        MODEL_GRADCHECK_EPS,
        MODEL_GRADCHECK_STENCIL,
        corrupt,
    )
}

/// Exit code for a library error: missing inputs, bad configs and
/// contract violations are usage errors.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) => EXIT_CHECK_FAILED,
        _ => EXIT_USAGE,
    }
}
