//! Synthetic temporal graphs with known structure.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Quad, QuadrupleStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternSpec {
    /// Each relation maps subjects through a fixed random permutation; the
    /// fact `(s, r, pi_r(s))` is active whenever `t = (s + r) mod period`.
    Periodic { period: usize },
    /// Relations come in pairs `(2i, 2i + 1)`. A random `(x, 2i, y)` at `t`
    /// is always followed by `(x, 2i + 1, y)` at `t + 1`.
    JumpConsequence { triggers_per_step: usize },
    /// Uniform random triples, `events_per_step` draws per timestamp.
    Random { events_per_step: usize },
}

impl PatternSpec {
    pub const DEFAULT_PERIOD: usize = 4;

    pub fn name(&self) -> &'static str {
        match self {
            PatternSpec::Periodic { .. } => "periodic",
            PatternSpec::JumpConsequence { .. } => "jump_consequence",
            PatternSpec::Random { .. } => "random",
        }
    }

    /// The named pattern with sizes scaled to the entity count.
    pub fn with_defaults(name: &str, num_entities: usize) -> Result<Self> {
        match name {
            "periodic" => Ok(PatternSpec::Periodic {
                period: Self::DEFAULT_PERIOD,
            }),
            "jump_consequence" => Ok(PatternSpec::JumpConsequence {
                triggers_per_step: (num_entities / 4).max(1),
            }),
            "random" => Ok(PatternSpec::Random {
                events_per_step: num_entities.max(1),
            }),
            other => Err(Error::Config(format!(
                "unknown pattern {other:?} (expected periodic, jump_consequence or random)"
            ))),
        }
    }
}

impl FromStr for PatternSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternSpec::with_defaults(s, 4)
    }
}

impl fmt::Display for PatternSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Train/valid/test boundaries at 80% and 90% of the timeline.
pub fn split_by_ratio(num_timestamps: usize) -> (usize, usize) {
    (num_timestamps * 8 / 10, num_timestamps * 9 / 10)
}

fn derangement(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    if n < 2 {
        return p;
    }
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &v)| i != v) {
            return p;
        }
    }
}

/// Generates a store split 80/10/10 along the timeline.
pub fn generate_synthetic_tkg(
    num_entities: usize,
    num_relations: usize,
    num_timestamps: usize,
    pattern: &PatternSpec,
    seed: u64,
) -> Result<QuadrupleStore> {
    if num_entities == 0 || num_relations == 0 || num_timestamps == 0 {
        return Err(Error::Config(format!(
            "synthetic graph needs positive sizes, got {num_entities} entities, \
             {num_relations} relations, {num_timestamps} timestamps"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facts: Vec<BTreeSet<(usize, usize, usize)>> = vec![BTreeSet::new(); num_timestamps];
    match *pattern {
        PatternSpec::Periodic { period } => {
            if period == 0 {
                return Err(Error::Config("period must be positive".into()));
            }
            for r in 0..num_relations {
                let perm = derangement(num_entities, &mut rng);
                for (s, &o) in perm.iter().enumerate() {
                    let phase = (s + r) % period;
                    for t in (phase..num_timestamps).step_by(period) {
                        facts[t].insert((s, r, o));
                    }
                }
            }
        }
        PatternSpec::JumpConsequence { triggers_per_step } => {
            let mut pairs: Vec<(usize, usize)> = (0..num_relations / 2).map(|i| (2 * i, 2 * i + 1)).collect();
            if pairs.is_empty() {
                pairs.push((0, 0));
            }
            for t in 0..num_timestamps {
                for &(ra, rb) in &pairs {
                    for _ in 0..triggers_per_step.max(1) {
                        let x = rng.gen_range(0..num_entities);
                        let y = rng.gen_range(0..num_entities);
                        facts[t].insert((x, ra, y));
                        if t + 1 < num_timestamps {
                            facts[t + 1].insert((x, rb, y));
                        }
                    }
                }
            }
        }
        PatternSpec::Random { events_per_step } => {
            for slot in facts.iter_mut() {
                for _ in 0..events_per_step.max(1) {
                    slot.insert((
                        rng.gen_range(0..num_entities),
                        rng.gen_range(0..num_relations),
                        rng.gen_range(0..num_entities),
                    ));
                }
            }
        }
    }
    let events = facts
        .iter()
        .enumerate()
        .flat_map(|(t, set)| set.iter().map(move |&(s, r, o)| Quad::new(s, r, o, t)))
        .collect();
    let (train_end, valid_end) = split_by_ratio(num_timestamps);
    QuadrupleStore::new(events, num_entities, num_relations, num_timestamps)?.with_splits(train_end, valid_end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_phase_zero_fact_recurs_every_other_step() {
        let store = generate_synthetic_tkg(4, 1, 6, &PatternSpec::Periodic { period: 2 }, 3).unwrap();
        let first = store.events().iter().find(|q| q.s == 0).unwrap();
        let times: Vec<usize> = store
            .events()
            .iter()
            .filter(|q| q.triple() == first.triple())
            .map(|q| q.t)
            .collect();
        assert_eq!(times, vec![0, 2, 4]);
    }

    #[test]
    fn same_seed_same_store() {
        for name in ["periodic", "jump_consequence", "random"] {
            let p = PatternSpec::with_defaults(name, 10).unwrap();
            let a = generate_synthetic_tkg(10, 4, 12, &p, 9).unwrap();
            let b = generate_synthetic_tkg(10, 4, 12, &p, 9).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn consequences_follow_triggers() {
        let p = PatternSpec::with_defaults("jump_consequence", 12).unwrap();
        let store = generate_synthetic_tkg(12, 4, 20, &p, 1).unwrap();
        let present: BTreeSet<Quad> = store.events().iter().copied().collect();
        for q in store.events() {
            if q.r % 2 == 0 && q.t + 1 < store.num_timestamps() {
                assert!(present.contains(&Quad::new(q.s, q.r + 1, q.o, q.t + 1)), "{q:?}");
            }
        }
    }

    #[test]
    fn unknown_pattern_and_zero_sizes() {
        assert!(matches!(PatternSpec::with_defaults("weekly", 4), Err(Error::Config(_))));
        let p = PatternSpec::Periodic { period: 2 };
        assert!(matches!(generate_synthetic_tkg(0, 1, 4, &p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn forty_step_split() {
        assert_eq!(split_by_ratio(40), (32, 36));
    }
}
