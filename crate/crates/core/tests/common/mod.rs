//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trialign::feedback::Example;
use trialign::lifecycle::{Buffer, DataRecord, Receipt, Timestamp};
use trialign::premap::{Credential, ExitKind, FeatureCode, CREDENTIAL_VERSION, LEVELS};
use trialign::rgid::{Repository, RgidEntry, VarietyId};

pub const VARIETIES: [&str; 3] = ["xinjiang/korla-pear", "zhejiang/clementine", "hainan/cherry-tomato"];

pub fn repo() -> Repository {
    trialign::default_repository().expect("shipped dictionary loads")
}

pub fn entry<'a>(repo: &'a Repository, lambda: &str) -> &'a RgidEntry {
    repo.lookup(&lambda.parse::<VarietyId>().unwrap()).unwrap()
}

fn word(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect()
}

/// A sealed credential with every field drawn at random.
pub fn random_credential(rng: &mut ChaCha8Rng) -> Credential {
    let mut product_id = [0u8; 16];
    rng.fill(&mut product_id[..]);
    let k = rng.random_range(0..6);
    let exit_kind = match rng.random_range(0..3) {
        0 => ExitKind::Screening,
        1 => ExitKind::Layer,
        _ => ExitKind::Full,
    };
    let mut c = Credential {
        version: CREDENTIAL_VERSION,
        product_id,
        lambda: VarietyId::new(word(rng, 1, 12), word(rng, 1, 16)),
        grade: word(rng, 1, 8),
        feature_codes: (0..k)
            .map(|_| FeatureCode {
                id: word(rng, 1, 10),
                level: rng.random_range(0..LEVELS as u8),
            })
            .collect(),
        exit_kind,
        exit_layer: rng.random_range(0..8),
        cumulative: rng.random_range(0..=10_000),
        t_issue: rng.random(),
        digest: [0; 32],
    };
    c.seal().unwrap();
    c
}

/// Random batch of `n` examples over `d` features in [0, 1].
pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Example> {
    (0..n)
        .map(|_| Example {
            features: (0..d).map(|_| rng.random::<f64>()).collect(),
            target: rng.random::<f64>(),
            confidence: rng.random_range(0.1..=1.0),
        })
        .collect()
}

/// Random point on the probability simplex.
pub fn random_simplex(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random ingest/sweep/drain traffic; every record ends up exactly once in
/// drained, purged or still buffered.
pub fn buffer_conservation(ops: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let buffer: Buffer<u64> = Buffer::new(64).map_err(|e| e.to_string())?;
    let lambda: trialign::rgid::VarietyId = "o/v".parse().unwrap();
    let mut now = 0u64;
    let (mut accepted, mut drained, mut purged) = (0u64, 0u64, 0u64);
    for i in 0..ops as u64 {
        now += r.random_range(0..50);
        match r.random_range(0..10) {
            0..=5 => {
                let rec = DataRecord {
                    id: format!("r{i}"),
                    payload: i,
                    lambda: lambda.clone(),
                    t_collect: Timestamp(now),
                    ttl: Duration::from_millis(r.random_range(0..400)),
                };
                match buffer.ingest(rec) {
                    Receipt::Accepted => accepted += 1,
                    Receipt::Backpressure(_) => {}
                }
            }
            6..=7 => {
                purged += buffer
                    .sweep(Timestamp(now))
                    .map_err(|e| e.to_string())?
                    .purged_ids
                    .len() as u64
            }
            _ => {
                let d = buffer.drain(r.random_range(1..8), Timestamp(now));
                drained += d.records.len() as u64;
                purged += d.purged_ids.len() as u64;
            }
        }
        let c = buffer.counters();
        if accepted != drained + purged + buffer.len() as u64
            || c.ingested != accepted
            || c.drained != drained
            || c.purged != purged
        {
            return Err(format!(
                "op {i}: accepted {accepted} drained {drained} purged {purged} held {} counters {c:?}",
                buffer.len()
            ));
        }
    }
    Ok(())
}
