//! Quadruple datasets, per-timestamp snapshots and jump tensors.
//!
//! Events are `(subject, relation, object, timestamp)` quadruples with dense
//! 0-based ids. Reciprocal augmentation adds `(o, r + N_r, s, t)` for every
//! event so that subject prediction becomes object prediction; snapshots and
//! jump tensors are built from the augmented store.

mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use synth::{generate_synthetic_tkg, split_by_ratio, PatternSpec};

/// Upper end of the normalized time axis.
pub const TIME_SPAN: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quad {
    pub s: usize,
    pub r: usize,
    pub o: usize,
    pub t: usize,
}

impl Quad {
    pub fn new(s: usize, r: usize, o: usize, t: usize) -> Self {
        Quad { s, r, o, t }
    }

    pub fn triple(&self) -> (usize, usize, usize) {
        (self.s, self.r, self.o)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// All events of a dataset, sorted by timestamp, with split boundaries.
///
/// Timestamps `t < train_end` are training, `train_end <= t < valid_end`
/// validation, and `t >= valid_end` test.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadrupleStore {
    events: Vec<Quad>,
    num_entities: usize,
    num_relations: usize,
    num_timestamps: usize,
    train_end: usize,
    valid_end: usize,
    augmented: bool,
    time_unit: u64,
}

impl QuadrupleStore {
    /// Builds a store from already-dense ids. Every timestamp is training
    /// data until [`QuadrupleStore::with_splits`] says otherwise.
    pub fn new(
        mut events: Vec<Quad>,
        num_entities: usize,
        num_relations: usize,
        num_timestamps: usize,
    ) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::NoEvents("store".into()));
        }
        for q in &events {
            if q.s >= num_entities || q.o >= num_entities {
                return Err(Error::Index {
                    op: "QuadrupleStore::new",
                    index: q.s.max(q.o),
                    len: num_entities,
                });
            }
            if q.r >= num_relations {
                return Err(Error::Index {
                    op: "QuadrupleStore::new",
                    index: q.r,
                    len: num_relations,
                });
            }
            if q.t >= num_timestamps {
                return Err(Error::Index {
                    op: "QuadrupleStore::new",
                    index: q.t,
                    len: num_timestamps,
                });
            }
        }
        events.sort_by_key(|q| q.t);
        Ok(QuadrupleStore {
            events,
            num_entities,
            num_relations,
            num_timestamps,
            train_end: num_timestamps,
            valid_end: num_timestamps,
            augmented: false,
            time_unit: 1,
        })
    }

    pub fn with_splits(mut self, train_end: usize, valid_end: usize) -> Result<Self> {
        if train_end > valid_end || valid_end > self.num_timestamps {
            return Err(Error::Contract(format!(
                "split boundaries {train_end} <= {valid_end} <= {} violated",
                self.num_timestamps
            )));
        }
        self.train_end = train_end;
        self.valid_end = valid_end;
        Ok(self)
    }

    pub fn events(&self) -> &[Quad] {
        &self.events
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    /// Relations before augmentation.
    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Rows reserved for relations in the hidden state: forward and
    /// reciprocal relations.
    pub fn relation_slots(&self) -> usize {
        2 * self.num_relations
    }

    pub fn num_timestamps(&self) -> usize {
        self.num_timestamps
    }

    pub fn train_end(&self) -> usize {
        self.train_end
    }

    pub fn valid_end(&self) -> usize {
        self.valid_end
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Raw timestamp units per index step (e.g. 24 for hourly-stamped daily data).
    pub fn time_unit(&self) -> u64 {
        self.time_unit
    }

    pub fn split_of(&self, t: usize) -> Split {
        if t < self.train_end {
            Split::Train
        } else if t < self.valid_end {
            Split::Valid
        } else {
            Split::Test
        }
    }

    pub fn events_in(&self, split: Split) -> impl Iterator<Item = &Quad> + '_ {
        self.events.iter().filter(move |q| self.split_of(q.t) == split)
    }

    pub fn timestamps_in(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Valid => self.train_end..self.valid_end,
            Split::Test => self.valid_end..self.num_timestamps,
        }
    }

    /// Adds `(o, r + N_r, s, t)` for every event.
    pub fn augment_reciprocal(&self) -> Result<QuadrupleStore> {
        if self.augmented {
            return Err(Error::Contract("store is already augmented".into()));
        }
        let n_r = self.num_relations;
        let mut events = Vec::with_capacity(2 * self.events.len());
        for q in &self.events {
            events.push(*q);
            events.push(Quad::new(q.o, q.r + n_r, q.s, q.t));
        }
        events.sort_by_key(|q| q.t);
        Ok(QuadrupleStore {
            events,
            augmented: true,
            ..self.clone()
        })
    }

    /// Snapshot index: events grouped by timestamp.
    pub fn events_at(&self, t: usize) -> &[Quad] {
        let lo = self.events.partition_point(|q| q.t < t);
        let hi = self.events.partition_point(|q| q.t <= t);
        &self.events[lo..hi]
    }
}

fn parse_field(raw: &str, path: &str, line: usize, what: &str) -> Result<u64> {
    let v: i64 = raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        msg: format!("{what} field {raw:?} is not an integer"),
    })?;
    if v < 0 {
        return Err(Error::Parse {
            path: path.to_string(),
            line,
            msg: format!("negative {what} id {v}"),
        });
    }
    Ok(v as u64)
}

/// Reads raw `(s, r, o, t)` rows from a tab-separated file. Fields past the
/// fourth are ignored; blank lines and lines starting with `#` are skipped.
pub fn read_raw_quadruples(path: &Path) -> Result<Vec<[u64; 4]>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() < 4 {
            return Err(Error::Parse {
                path: name,
                line: lineno,
                msg: format!("expected at least 4 tab-separated fields, got {}", fields.len()),
            });
        }
        rows.push([
            parse_field(fields[0], &name, lineno, "subject")?,
            parse_field(fields[1], &name, lineno, "relation")?,
            parse_field(fields[2], &name, lineno, "object")?,
            parse_field(fields[3], &name, lineno, "timestamp")?,
        ]);
    }
    Ok(rows)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Remaps raw ids of several splits onto one dense id space. Timestamps
/// become `(t - t_min) / unit`, where `unit` is given or inferred as the gcd
/// of the gaps between distinct timestamps, so missing timestamps stay on
/// the axis as empty snapshots.
fn build_store(parts: &[Vec<[u64; 4]>], time_unit: Option<u64>, label: &str) -> Result<QuadrupleStore> {
    let all = parts.iter().flatten();
    let entities: BTreeSet<u64> = all.clone().flat_map(|q| [q[0], q[2]]).collect();
    let relations: BTreeSet<u64> = all.clone().map(|q| q[1]).collect();
    let times: BTreeSet<u64> = all.map(|q| q[3]).collect();
    let Some(&t_min) = times.iter().next() else {
        return Err(Error::NoEvents(label.to_string()));
    };
    let t_max = *times.iter().next_back().unwrap();
    let unit = match time_unit {
        Some(0) | None => {
            let g = times.iter().fold(0, |g, &t| gcd(g, t - t_min));
            g.max(1)
        }
        Some(u) => u,
    };
    if let Some(bad) = times.iter().find(|&&t| (t - t_min) % unit != 0) {
        return Err(Error::Config(format!(
            "timestamp {bad} is not on the {unit}-unit grid starting at {t_min}"
        )));
    }
    let ent_index: HashMap<u64, usize> = entities.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let rel_index: HashMap<u64, usize> = relations.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let num_timestamps = ((t_max - t_min) / unit) as usize + 1;

    let mut events = Vec::new();
    let mut split_ranges = Vec::new();
    for part in parts {
        let mut lo = usize::MAX;
        let mut hi = 0;
        for q in part {
            let t = ((q[3] - t_min) / unit) as usize;
            lo = lo.min(t);
            hi = hi.max(t);
            events.push(Quad::new(ent_index[&q[0]], rel_index[&q[1]], ent_index[&q[2]], t));
        }
        split_ranges.push((!part.is_empty()).then_some((lo, hi)));
    }
    let mut store = QuadrupleStore::new(events, entities.len(), relations.len(), num_timestamps)?;
    store.time_unit = unit;

    if parts.len() == 3 {
        let train_end = split_ranges[0].map_or(0, |(_, hi)| hi + 1);
        let valid_end = split_ranges[1].map_or(train_end, |(_, hi)| hi + 1);
        if let Some((lo, _)) = split_ranges[1] {
            if lo < train_end {
                return Err(Error::Config(format!(
                    "{label}: validation starts at index {lo}, before training ends ({train_end})"
                )));
            }
        }
        if let Some((lo, _)) = split_ranges[2] {
            if lo < valid_end {
                return Err(Error::Config(format!(
                    "{label}: test starts at index {lo}, before validation ends ({valid_end})"
                )));
            }
        }
        store = store.with_splits(train_end, valid_end)?;
    }
    Ok(store)
}

/// Parses one quadruple file into a store whose events are all training data.
pub fn parse_quadruples(path: &Path) -> Result<QuadrupleStore> {
    let raw = read_raw_quadruples(path)?;
    build_store(&[raw], None, &path.display().to_string())
}

/// Loads `train.txt`, `valid.txt` (optional) and `test.txt` from `dir` into
/// one store with split boundaries taken from the files.
pub fn load_dataset(dir: &Path, time_unit: Option<u64>) -> Result<QuadrupleStore> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let train = read_raw_quadruples(&dir.join("train.txt"))?;
    let valid_path = dir.join("valid.txt");
    let valid = if valid_path.exists() {
        read_raw_quadruples(&valid_path)?
    } else {
        Vec::new()
    };
    let test = read_raw_quadruples(&dir.join("test.txt"))?;
    build_store(&[train, valid, test], time_unit, &dir.display().to_string())
}

pub fn write_quadruples<'a>(path: &Path, quads: impl IntoIterator<Item = &'a Quad>) -> Result<()> {
    let mut out = String::new();
    for q in quads {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", q.s, q.r, q.o, q.t));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads an `entity2id.txt`-style file (`name<TAB>id` per line).
pub fn read_id_names(path: &Path) -> Result<HashMap<u64, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut names = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, id) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected name<TAB>id".into(),
        })?;
        names.insert(parse_field(id, &path.display().to_string(), i + 1, "name")?, name.to_string());
    }
    Ok(names)
}

/// The edges active at one timestamp, reciprocal edges included.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    src: Vec<usize>,
    rel: Vec<usize>,
    dst: Vec<usize>,
    in_neighbors: Vec<Vec<(usize, usize)>>,
}

impl Snapshot {
    pub fn from_edges(t: usize, num_entities: usize, edges: &[(usize, usize, usize)]) -> Result<Self> {
        let mut in_neighbors = vec![Vec::new(); num_entities];
        let mut src = Vec::with_capacity(edges.len());
        let mut rel = Vec::with_capacity(edges.len());
        let mut dst = Vec::with_capacity(edges.len());
        for &(s, r, o) in edges {
            if s >= num_entities || o >= num_entities {
                return Err(Error::Index {
                    op: "Snapshot::from_edges",
                    index: s.max(o),
                    len: num_entities,
                });
            }
            src.push(s);
            rel.push(r);
            dst.push(o);
            in_neighbors[o].push((s, r));
        }
        Ok(Snapshot {
            t,
            src,
            rel,
            dst,
            in_neighbors,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    pub fn num_entities(&self) -> usize {
        self.in_neighbors.len()
    }

    pub fn subjects(&self) -> &[usize] {
        &self.src
    }

    pub fn relations(&self) -> &[usize] {
        &self.rel
    }

    pub fn objects(&self) -> &[usize] {
        &self.dst
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.src.len()).map(move |i| (self.src[i], self.rel[i], self.dst[i]))
    }

    /// `(s, r)` pairs with an edge into `o`, with multiplicity.
    pub fn in_neighbors(&self, o: usize) -> &[(usize, usize)] {
        &self.in_neighbors[o]
    }

    pub fn triple_set(&self) -> BTreeSet<(usize, usize, usize)> {
        self.edges().collect()
    }
}

/// One snapshot per timestamp index; timestamps without events yield empty
/// snapshots.
pub fn build_snapshots(store: &QuadrupleStore) -> Result<Vec<Snapshot>> {
    if !store.is_augmented() {
        return Err(Error::Contract("snapshots need a reciprocal-augmented store".into()));
    }
    (0..store.num_timestamps())
        .map(|t| {
            let edges: Vec<_> = store.events_at(t).iter().map(Quad::triple).collect();
            Snapshot::from_edges(t, store.num_entities(), &edges)
        })
        .collect()
}

/// Sparse `T(t+1) - T(t)` over triple existence.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct JumpTensor {
    pub t: usize,
    deltas: BTreeMap<(usize, usize, usize), i8>,
    src: Vec<usize>,
    rel: Vec<usize>,
    dst: Vec<usize>,
    sign: Vec<f64>,
}

impl JumpTensor {
    pub fn empty(t: usize) -> Self {
        JumpTensor {
            t,
            ..Default::default()
        }
    }

    pub fn from_deltas(t: usize, deltas: BTreeMap<(usize, usize, usize), i8>) -> Self {
        let mut jt = JumpTensor::empty(t);
        for (&(s, r, o), &d) in &deltas {
            jt.src.push(s);
            jt.rel.push(r);
            jt.dst.push(o);
            jt.sign.push(d as f64);
        }
        jt.deltas = deltas;
        jt
    }

    pub fn deltas(&self) -> &BTreeMap<(usize, usize, usize), i8> {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn get(&self, s: usize, r: usize, o: usize) -> i8 {
        self.deltas.get(&(s, r, o)).copied().unwrap_or(0)
    }

    /// `(s, r, sign)` entries whose object is `o`.
    pub fn neighbors_of(&self, o: usize) -> Vec<(usize, usize, i8)> {
        self.deltas
            .iter()
            .filter(|((_, _, obj), _)| *obj == o)
            .map(|(&(s, r, _), &d)| (s, r, d))
            .collect()
    }

    pub fn subjects(&self) -> &[usize] {
        &self.src
    }

    pub fn relations(&self) -> &[usize] {
        &self.rel
    }

    pub fn objects(&self) -> &[usize] {
        &self.dst
    }

    /// `+1.0` / `-1.0` per delta, aligned with the column accessors.
    pub fn signs(&self) -> &[f64] {
        &self.sign
    }
}

/// Triples that appear between `g_t` and `g_t1` get `+1`, triples that
/// disappear get `-1`.
pub fn build_jump_tensor(g_t: &Snapshot, g_t1: &Snapshot) -> JumpTensor {
    let before = g_t.triple_set();
    let after = g_t1.triple_set();
    let mut deltas = BTreeMap::new();
    for tr in after.difference(&before) {
        deltas.insert(*tr, 1);
    }
    for tr in before.difference(&after) {
        deltas.insert(*tr, -1);
    }
    JumpTensor::from_deltas(g_t.t, deltas)
}

/// Linear map from timestamp indices onto `[0, TIME_SPAN]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeMap {
    num_timestamps: usize,
}

impl TimeMap {
    pub fn new(num_timestamps: usize) -> Result<Self> {
        if num_timestamps < 2 {
            return Err(Error::Degenerate(format!(
                "time normalization needs at least 2 timestamps, got {num_timestamps}"
            )));
        }
        Ok(TimeMap { num_timestamps })
    }

    pub fn num_timestamps(&self) -> usize {
        self.num_timestamps
    }

    /// Normalized length of one timestamp step.
    pub fn delta_tau(&self) -> f64 {
        TIME_SPAN / (self.num_timestamps - 1) as f64
    }

    pub fn tau(&self, t: usize) -> f64 {
        self.tau_at(t as f64)
    }

    /// Normalized time of a possibly fractional or out-of-range index.
    pub fn tau_at(&self, t: f64) -> f64 {
        TIME_SPAN * t / (self.num_timestamps - 1) as f64
    }
}

pub fn make_time_map(store: &QuadrupleStore) -> Result<TimeMap> {
    TimeMap::new(store.num_timestamps())
}

/// Test events whose subject or object never occurs in the training split.
pub fn inductive_subset(store: &QuadrupleStore) -> Vec<Quad> {
    let seen: HashSet<usize> = store
        .events_in(Split::Train)
        .flat_map(|q| [q.s, q.o])
        .collect();
    store
        .events_in(Split::Test)
        .filter(|q| !seen.contains(&q.s) || !seen.contains(&q.o))
        .copied()
        .collect()
}
