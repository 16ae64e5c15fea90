//! Issue a credential for one graded pear, decode it, check the QR payload
//! and show that flipping a byte is caught.

use trialign::cascade::{CascadeConfig, CascadeEngine};
use trialign::features::{extract_vector, FruitSample, SyntheticExtractor};
use trialign::premap::{self, decode_credential, encode_credential, verify};
use trialign::rgid::VarietyId;
use trialign::simgen::{generate_samples, VarietyProfile};

fn main() -> trialign::Result<()> {
    let repo = trialign::default_repository()?;
    let entry = repo.lookup(&"xinjiang/korla-pear".parse::<VarietyId>()?)?;
    let sample: FruitSample = serde_json::from_str(include_str!("../data/pear_sample.json"))?;

    // pick the two most informative features from a day's batch
    let batch = generate_samples(&VarietyProfile::korla_pear(), 500, 9)?
        .iter()
        .map(|s| extract_vector(&s.sample, entry, &SyntheticExtractor))
        .collect::<trialign::Result<Vec<_>>>()?;
    let entropies = premap::feature_entropies(&batch)?;
    let selected = premap::select_features(&batch, 2)?;
    println!("entropies {entropies:.3?} -> selected {selected:?}");

    let engine = CascadeEngine::new(entry, CascadeConfig::sound(entry, 0.15, 0.95)?)?;
    let trace = engine.run(&sample, &SyntheticExtractor)?;
    let fv = extract_vector(&sample, entry, &SyntheticExtractor)?;
    let enc = encode_credential(&trace, &sample, entry, &fv, &selected, 1_760_000_000)?;
    println!("{} bytes, grade {}", enc.bytes.len(), enc.credential.grade);
    println!("qr {}", enc.qr_text);

    let back = decode_credential(&enc.bytes)?;
    println!("decoded equal: {}", back == enc.credential);
    println!("re-encoded identical: {}", back.to_bytes()? == enc.bytes);
    println!("qr verifies: {}", verify(&enc.qr_text, &back)?);

    let mut bad = enc.bytes.clone();
    bad[30] ^= 0x01;
    match decode_credential(&bad) {
        Ok(_) => println!("tampered record accepted"),
        Err(e) => println!("tampered record rejected: {e}"),
    }
    Ok(())
}
