//! Seeded synthetic data for the oracle world.
//!
//! Rule `i` is triggered by the tokens `trig{i}a` and `trig{i}b`; filler
//! tokens are `w0`..`w199`. Neither appears in the rule text template, so a
//! sample's only lexical overlap with the rule collection is its own region's
//! triggers and retrieval ranks that rule first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulebook_core::gateway::{GroundTruthRule, OracleWorld};
use rulebook_core::store::Sample;
use serde::Serialize;

pub const ORACLE_TASK: &str = "oracle_world";
const LABELS: [&str; 12] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu",
];
const FILLER_VOCAB: usize = 200;

/// A world of `n_rules` (at most 12) two-trigger rules over the default
/// label "none".
pub fn synthetic_world(n_rules: usize) -> OracleWorld {
    assert!(n_rules <= LABELS.len(), "at most {} rules", LABELS.len());
    OracleWorld {
        default_label: "none".into(),
        rules: (0..n_rules)
            .map(|i| GroundTruthRule {
                triggers: vec![format!("trig{i}a"), format!("trig{i}b")],
                cover_tokens: None,
                label: LABELS[i].into(),
                text: None,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: String,
}

impl OracleRecord {
    pub fn to_sample(&self) -> Sample {
        Sample::new(self.id.clone(), ORACLE_TASK, self.label.clone()).with_field("tokens", self.tokens.join(" "))
    }
}

/// `n` records, roughly `region_fraction` of them inside some rule's region.
/// Every region appears at least once when `n` allows it.
pub fn synthetic_records(world: &OracleWorld, n: usize, region_fraction: f64, seed: u64) -> Vec<OracleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regions: Vec<Option<usize>> = (0..n)
        .map(|_| {
            (!world.rules.is_empty() && rng.random_bool(region_fraction.clamp(0.0, 1.0)))
                .then(|| rng.random_range(0..world.rules.len()))
        })
        .collect();
    // Plant missing regions at random positions that are not already the
    // sole occurrence of another guaranteed region. Such a position exists
    // because fewer than `limit` guaranteed regions are present.
    let limit = world.rules.len().min(n);
    for r in 0..limit {
        if regions.contains(&Some(r)) {
            continue;
        }
        loop {
            let pos = rng.random_range(0..n);
            let protected = regions[pos]
                .is_some_and(|other| other < limit && regions.iter().filter(|x| **x == Some(other)).count() == 1);
            if !protected {
                regions[pos] = Some(r);
                break;
            }
        }
    }
    regions
        .into_iter()
        .enumerate()
        .map(|(i, region)| {
            let len = rng.random_range(4..=8);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| format!("w{}", rng.random_range(0..FILLER_VOCAB)))
                .collect();
            if let Some(r) = region {
                for trigger in &world.rules[r].triggers {
                    let at = rng.random_range(0..=tokens.len());
                    tokens.insert(at, trigger.clone());
                }
            }
            let label = world.gold(&tokens.join(" ")).to_string();
            OracleRecord {
                id: format!("oracle-{i}"),
                tokens,
                label,
            }
        })
        .collect()
}

pub fn to_jsonl(records: &[OracleRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_region_present_and_labels_consistent() {
        let world = synthetic_world(10);
        let records = synthetic_records(&world, 500, 0.4, 3);
        assert_eq!(records.len(), 500);
        for i in 0..10 {
            assert!(records.iter().any(|r| r.label == LABELS[i]), "region {i} missing");
        }
        let in_region = records.iter().filter(|r| r.label != "none").count();
        assert!((150..=250).contains(&in_region), "{in_region}");
        assert_eq!(records, synthetic_records(&world, 500, 0.4, 3));
    }

    #[test]
    fn tiny_streams_still_cover_regions() {
        let world = synthetic_world(3);
        let records = synthetic_records(&world, 3, 0.0, 1);
        let mut labels: Vec<_> = records.iter().map(|r| r.label.as_str()).collect();
        labels.sort();
        assert_eq!(labels, ["alpha", "beta", "gamma"]);
    }
}
