//! Filtered ranking metrics (MRR, Hits@k) and the evaluation drivers for
//! the full, inductive and long-horizon test subsets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use num::{BigInt, BigRational, ToPrimitive, Zero};
use serde::Serialize;

use crate::data::{inductive_subset, QuadrupleStore, Quad, Split};
use crate::decoder::score_matrix;
use crate::encoder::{infer_long_horizon, infer_representation};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Matrix;
use crate::training::{train, Dataset, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterSetting {
    Raw,
    TimeUnaware,
    TimeAware,
}

impl FilterSetting {
    pub const ALL: [FilterSetting; 3] = [FilterSetting::Raw, FilterSetting::TimeUnaware, FilterSetting::TimeAware];

    pub fn name(self) -> &'static str {
        match self {
            FilterSetting::Raw => "raw",
            FilterSetting::TimeUnaware => "time_unaware",
            FilterSetting::TimeAware => "time_aware",
        }
    }
}

impl fmt::Display for FilterSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FilterSetting::Raw),
            "tu" | "time_unaware" => Ok(FilterSetting::TimeUnaware),
            "ta" | "time_aware" => Ok(FilterSetting::TimeAware),
            _ => Err(Error::Config(format!("unknown filter setting {s:?} (raw, tu, ta)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    Full,
    Inductive,
    /// Forecast `Δt` steps past the last observed snapshot.
    Horizon(usize),
}

impl Subset {
    pub fn label(self) -> String {
        match self {
            Subset::Full => "full".into(),
            Subset::Inductive => "inductive".into(),
            Subset::Horizon(dt) => format!("horizon_{dt}"),
        }
    }

    /// `horizon` expands to the sweep over `HORIZON_SWEEP`; anything else
    /// parses as a single subset.
    pub fn parse_list(s: &str) -> Result<Vec<Subset>> {
        match s {
            "horizon" => Ok(HORIZON_SWEEP.map(Subset::Horizon).to_vec()),
            _ => Ok(vec![s.parse()?]),
        }
    }
}

/// Forecast offsets reported by a horizon sweep.
pub const HORIZON_SWEEP: [usize; 7] = [1, 2, 3, 4, 5, 6, 7];

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Subset::Full),
            "inductive" => Ok(Subset::Inductive),
            _ => match s.strip_prefix("horizon_").map(str::parse::<usize>) {
                Some(Ok(dt)) if dt >= 1 => Ok(Subset::Horizon(dt)),
                _ => Err(Error::Config(format!("unknown subset {s:?} (full, inductive, horizon, horizon_N)"))),
            },
        }
    }
}

/// Rank of `true_o` among the candidates not in `mask`. Ties with the true
/// object count as half a position each, so a tied block of size `m`
/// starting at position `p` gives the mean rank `p + (m - 1) / 2`.
pub fn rank_query(scores: &[f64], true_o: usize, mask: &BTreeSet<usize>) -> Result<f64> {
    if true_o >= scores.len() {
        return Err(Error::Index {
            op: "rank_query",
            index: true_o,
            len: scores.len(),
        });
    }
    if mask.contains(&true_o) {
        return Err(Error::Contract(format!("true object {true_o} is in the filter mask")));
    }
    let target = scores[true_o];
    if target.is_nan() {
        return Err(Error::Numeric(format!("score of the true object {true_o} is NaN")));
    }
    let (mut greater, mut ties) = (0usize, 0usize);
    for (v, &sc) in scores.iter().enumerate() {
        if v == true_o || mask.contains(&v) {
            continue;
        }
        if sc > target {
            greater += 1;
        } else if sc == target {
            ties += 1;
        }
    }
    Ok(1.0 + greater as f64 + ties as f64 / 2.0)
}

/// Objects of every event in every split, keyed by `(s, r)` and by
/// `(s, r, t)`.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    any_time: HashMap<(usize, usize), BTreeSet<usize>>,
    at_time: HashMap<(usize, usize, usize), BTreeSet<usize>>,
}

impl FilterIndex {
    pub fn new(store: &QuadrupleStore) -> Self {
        let mut idx = FilterIndex::default();
        for q in store.events() {
            idx.any_time.entry((q.s, q.r)).or_default().insert(q.o);
            idx.at_time.entry((q.s, q.r, q.t)).or_default().insert(q.o);
        }
        idx
    }

    pub fn mask(&self, query: &Quad, setting: FilterSetting) -> BTreeSet<usize> {
        let found = match setting {
            FilterSetting::Raw => None,
            FilterSetting::TimeUnaware => self.any_time.get(&(query.s, query.r)),
            FilterSetting::TimeAware => self.at_time.get(&(query.s, query.r, query.t)),
        };
        let mut mask = found.cloned().unwrap_or_default();
        mask.remove(&query.o);
        mask
    }
}

/// Candidates to exclude when ranking `query`.
pub fn build_filter_mask(query: &Quad, store: &QuadrupleStore, setting: FilterSetting) -> BTreeSet<usize> {
    FilterIndex::new(store).mask(query, setting)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankRecord {
    pub s: usize,
    pub r: usize,
    pub o: usize,
    pub t: usize,
    pub rank: f64,
    pub setting: FilterSetting,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub setting: FilterSetting,
    pub subset: String,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
}

impl MetricsReport {
    /// Aggregates ranks; an empty list gives NaN metrics and zero queries.
    pub fn from_ranks(setting: FilterSetting, subset: impl Into<String>, ranks: &[f64]) -> Self {
        let n = ranks.len();
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
        MetricsReport {
            setting,
            subset: subset.into(),
            mrr: mean_reciprocal(ranks),
            hits1: hits(1.0),
            hits3: hits(3.0),
            hits10: hits(10.0),
            n_queries: n,
        }
    }

    pub const CSV_HEADER: &'static str = "setting,subset,MRR,hits1,hits3,hits10,n_queries";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.setting, self.subset, self.mrr, self.hits1, self.hits3, self.hits10, self.n_queries
        )
    }
}

/// `mean(1 / rank)` summed exactly over the distinct rank values and
/// rounded once, so it is the double nearest to the true mean.
fn mean_reciprocal(ranks: &[f64]) -> f64 {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for r in ranks {
        *counts.entry(r.to_bits()).or_default() += 1;
    }
    let mut sum = BigRational::zero();
    for (bits, count) in counts {
        match BigRational::from_float(f64::from_bits(bits)) {
            Some(r) if !r.is_zero() => sum += BigRational::from_integer(BigInt::from(count)) / r,
            _ => return ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64,
        }
    }
    if ranks.is_empty() {
        return f64::NAN;
    }
    (sum / BigRational::from_integer(BigInt::from(ranks.len()))).to_f64().unwrap_or(f64::NAN)
}

/// Ranks `queries` with scores from `scorer`, which receives one group of
/// queries sharing a hidden state (keyed by `group`) and returns a
/// `queries x |V|` score matrix.
pub fn rank_all<G, S>(
    queries: &[Quad],
    index: &FilterIndex,
    setting: FilterSetting,
    mut group: G,
    mut scorer: S,
) -> Result<Vec<RankRecord>>
where
    G: FnMut(&Quad) -> usize,
    S: FnMut(usize, &[(usize, usize)]) -> Result<Matrix>,
{
    let mut groups: BTreeMap<usize, Vec<&Quad>> = BTreeMap::new();
    for q in queries {
        groups.entry(group(q)).or_default().push(q);
    }
    let mut records = Vec::with_capacity(queries.len());
    for (key, qs) in groups {
        let pairs: Vec<(usize, usize)> = qs.iter().map(|q| (q.s, q.r)).collect();
        let scores = scorer(key, &pairs)?;
        if scores.rows() != qs.len() {
            return Err(Error::dim("rank_all", format!("{} score rows for {} queries", scores.rows(), qs.len())));
        }
        for (i, q) in qs.into_iter().enumerate() {
            let rank = rank_query(scores.row(i), q.o, &index.mask(q, setting))?;
            records.push(RankRecord {
                s: q.s,
                r: q.r,
                o: q.o,
                t: q.t,
                rank,
                setting,
            });
        }
    }
    Ok(records)
}

/// Test queries (both directions) of `subset`; horizon subsets keep the
/// queries that have at least one observed snapshot `Δt` steps earlier.
pub fn subset_queries(data: &Dataset, subset: Subset) -> Vec<Quad> {
    let store = data.store();
    match subset {
        Subset::Full => store.events_in(Split::Test).copied().collect(),
        Subset::Inductive => inductive_subset(store),
        Subset::Horizon(dt) => store.events_in(Split::Test).filter(|q| q.t >= dt).copied().collect(),
    }
}

/// Ranks the test queries of `subset` under `setting` with the model.
pub fn evaluate(
    data: &Dataset,
    params: &ModelParams,
    cfg: &crate::encoder::EncoderConfig,
    setting: FilterSetting,
    subset: Subset,
) -> Result<(MetricsReport, Vec<RankRecord>)> {
    if params.num_entities != data.num_entities() || params.num_relation_slots != data.num_relation_slots() {
        return Err(Error::Config(format!(
            "model expects {} entities and {} relation slots, dataset has {} and {}",
            params.num_entities,
            params.num_relation_slots,
            data.num_entities(),
            data.num_relation_slots()
        )));
    }
    let queries = subset_queries(data, subset);
    let index = FilterIndex::new(data.store());
    let graph = data.graph();
    let records = match subset {
        Subset::Horizon(dt) => rank_all(
            &queries,
            &index,
            setting,
            |q| q.t - dt,
            |end, pairs| score_matrix(&infer_long_horizon(graph, params, cfg, end, dt)?, params, pairs),
        )?,
        Subset::Full | Subset::Inductive => rank_all(
            &queries,
            &index,
            setting,
            |q| q.t,
            |t, pairs| score_matrix(&infer_representation(graph, params, cfg, t)?, params, pairs),
        )?,
    };
    let ranks: Vec<f64> = records.iter().map(|r| r.rank).collect();
    Ok((MetricsReport::from_ranks(setting, subset.label(), &ranks), records))
}

/// Metrics of a scorer that gives every candidate the same score.
pub fn constant_scorer_report(data: &Dataset, setting: FilterSetting, subset: Subset) -> Result<MetricsReport> {
    let queries = subset_queries(data, subset);
    let index = FilterIndex::new(data.store());
    let ne = data.num_entities();
    let records = rank_all(&queries, &index, setting, |q| q.t, |_, pairs| Ok(Matrix::zeros(pairs.len(), ne)))?;
    let ranks: Vec<f64> = records.iter().map(|r| r.rank).collect();
    Ok(MetricsReport::from_ranks(setting, subset.label(), &ranks))
}

/// Trains with the configured jump weight and with `w = 0` from the same
/// seed; returns the time-aware full-test reports `(with jump, without)`.
pub fn ablation_run(data: &Dataset, cfg: &TrainConfig) -> Result<(MetricsReport, MetricsReport)> {
    if !(cfg.model.jump_weight > 0.0) {
        return Err(Error::Config(format!(
            "ablation needs jump_weight > 0, got {}",
            cfg.model.jump_weight
        )));
    }
    let mut arms = Vec::with_capacity(2);
    for w in [cfg.model.jump_weight, 0.0] {
        let mut c = *cfg;
        c.model.jump_weight = w;
        let (params, _) = train(data, &c, |_, _| {})?;
        arms.push(evaluate(data, &params, &c.encoder, FilterSetting::TimeAware, Subset::Full)?.0);
    }
    let without = arms.pop().unwrap();
    Ok((arms.pop().unwrap(), without))
}

pub fn write_metrics_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut out = String::from(MetricsReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One JSON object per query, tagged with the subset it was ranked in.
pub fn write_ranks_jsonl(path: &Path, runs: &[(&str, &[RankRecord])]) -> Result<()> {
    #[derive(Serialize)]
    struct Tagged<'a> {
        subset: &'a str,
        #[serde(flatten)]
        record: &'a RankRecord,
    }
    let mut buf = Vec::new();
    for &(subset, records) in runs {
        for record in records {
            serde_json::to_writer(&mut buf, &Tagged { subset, record })
                .map_err(|e| Error::Numeric(format!("rank record: {e}")))?;
            buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_query(&[0.9, 0.5, 0.1], 1, &set(&[])).unwrap(), 2.0);
        assert_eq!(rank_query(&[0.2, 0.5, 0.9], 2, &set(&[])).unwrap(), 1.0);
        assert_eq!(rank_query(&[0.3; 5], 4, &set(&[])).unwrap(), 3.0);
        assert_eq!(rank_query(&[0.9, 0.5, 0.1], 1, &set(&[0])).unwrap(), 1.0);
        assert!(matches!(rank_query(&[0.9, 0.5], 1, &set(&[1])), Err(Error::Contract(_))));
        assert!(rank_query(&[0.9], 3, &set(&[])).is_err());
    }

    #[test]
    fn aggregation_by_hand() {
        let r = MetricsReport::from_ranks(FilterSetting::Raw, "full", &[1.0, 2.0, 4.0]);
        assert!((r.mrr - 0.583_333_333_333_333_3).abs() < 1e-15);
        assert_eq!((r.hits1, r.hits3, r.hits10), (1.0 / 3.0, 2.0 / 3.0, 1.0));
        let empty = MetricsReport::from_ranks(FilterSetting::Raw, "inductive", &[]);
        assert_eq!(empty.n_queries, 0);
        assert!(empty.mrr.is_nan());
    }

    #[test]
    fn parse_names() {
        assert_eq!("ta".parse::<FilterSetting>().unwrap(), FilterSetting::TimeAware);
        assert_eq!("tu".parse::<FilterSetting>().unwrap(), FilterSetting::TimeUnaware);
        assert_eq!("raw".parse::<FilterSetting>().unwrap(), FilterSetting::Raw);
        assert!("filtered".parse::<FilterSetting>().is_err());
        assert_eq!(Subset::Horizon(3).label(), "horizon_3");
        assert_eq!("horizon_3".parse::<Subset>().unwrap(), Subset::Horizon(3));
        assert!("horizon_0".parse::<Subset>().is_err());
    }

    #[test]
    fn masks_by_setting() {
        let events = vec![
            Quad::new(0, 0, 1, 0),
            Quad::new(0, 0, 2, 1),
            Quad::new(0, 0, 3, 1),
            Quad::new(1, 0, 2, 1),
        ];
        let store = QuadrupleStore::new(events, 4, 1, 2).unwrap();
        let q = Quad::new(0, 0, 2, 1);
        assert!(build_filter_mask(&q, &store, FilterSetting::Raw).is_empty());
        assert_eq!(build_filter_mask(&q, &store, FilterSetting::TimeAware), set(&[3]));
        assert_eq!(build_filter_mask(&q, &store, FilterSetting::TimeUnaware), set(&[1, 3]));
    }
}
