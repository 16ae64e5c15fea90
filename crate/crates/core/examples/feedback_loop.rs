//! Consumer feedback closing the loop on the pear entry: consumers here
//! care about the stem far more than the dictionary weight says, and A
//! grades with soft flesh come back. The triggers spot both, the deltas are
//! applied, and a few projected gradient steps refit omega.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trialign::cascade::full_decide;
use trialign::features::{extract_vector, SyntheticExtractor};
use trialign::feedback::{self, record_feedback, Behavior, FeedbackEvent, FeedbackStore};
use trialign::rgid::{apply_update, VarietyId};
use trialign::simgen::{generate_samples, VarietyProfile};

fn main() -> trialign::Result<()> {
    let repo = trialign::default_repository()?;
    let entry = repo.lookup(&"xinjiang/korla-pear".parse::<VarietyId>()?)?;
    let store = FeedbackStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    for s in generate_samples(&VarietyProfile::korla_pear(), 1500, 3)? {
        let fv = extract_vector(&s.sample, entry, &SyntheticExtractor)?;
        let graded = full_decide(&s.sample, entry, &SyntheticExtractor)?;
        if !graded.accepted {
            continue;
        }
        let stem = fv.values[1];
        let behavior = if graded.grade == "A" && s.sample.firmness < 0.5 && rng.random::<f64>() < 0.6 {
            Behavior::Return
        } else if rng.random::<f64>() < stem.powi(6) {
            Behavior::Purchase
        } else {
            Behavior::Scan
        };
        store.put_features(s.sample.id.clone(), fv.values);
        let ev = FeedbackEvent::new(s.sample.id.clone(), behavior, graded.grade)
            .with_view_seconds(rng.random_range(2.0..40.0));
        record_feedback(&store, ev)?;
    }
    println!("{} events", store.len());

    let deltas = feedback::optimization_triggers(&store, entry);
    for d in &deltas {
        println!("{:?} {} {:?}  ({})", d.level, d.target, d.change, d.justification);
    }
    let updated = apply_update(entry, &deltas)?;
    println!("omega {:?} -> {:?}", entry.omega, updated.omega);

    let snap = store.snapshot();
    let batch = feedback::join(&snap.events, &snap.features, entry)?;
    let eta = feedback::safe_step_size(&batch)?;
    let mut theta = entry.omega.clone();
    println!(
        "loss {:.6} at the dictionary weights, eta {eta:.4}",
        feedback::loss(&theta, &batch)?
    );
    for _ in 0..50 {
        theta = feedback::update_step(&theta, &batch, eta)?;
    }
    let shown: Vec<String> = theta.iter().map(|w| format!("{w:.3}")).collect();
    println!(
        "loss {:.6} after 50 steps, theta [{}]",
        feedback::loss(&theta, &batch)?,
        shown.join(", ")
    );
    Ok(())
}
