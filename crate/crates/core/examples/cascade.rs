//! Grade a batch of synthetic clementines with early exit and compare each
//! decision against full-depth evaluation.

use trialign::cascade::{full_decide, CascadeConfig, CascadeEngine, ExitPoint};
use trialign::features::SyntheticExtractor;
use trialign::rgid::VarietyId;
use trialign::simgen::{generate_samples, VarietyProfile};

fn main() -> trialign::Result<()> {
    let repo = trialign::default_repository()?;
    let lambda: VarietyId = "zhejiang/clementine".parse()?;
    let entry = repo.lookup(&lambda)?;
    let mut config = CascadeConfig::sound(entry, 0.15, 0.95)?;
    config.pin_grade = true;
    let engine = CascadeEngine::new(entry, config)?;
    println!(
        "order {:?}  reject bars {:?}",
        engine.config().order,
        engine.config().tau_reject
    );

    let samples = generate_samples(&VarietyProfile::clementine(), 2000, 5)?;
    let (mut layers, mut mismatches) = (0usize, 0usize);
    for (i, s) in samples.iter().enumerate() {
        let trace = engine.run(&s.sample, &SyntheticExtractor)?;
        layers += trace.layers_evaluated;
        if trace.exit != ExitPoint::Screening {
            let full = full_decide(&s.sample, entry, &SyntheticExtractor)?;
            mismatches += (full.accepted != trace.decision.accepted()) as usize;
        }
        if i < 5 {
            println!("{}", serde_json::to_string(&trace)?);
        }
    }
    println!(
        "mean layers {:.3} of {}, oracle mismatches {mismatches}",
        layers as f64 / samples.len() as f64,
        entry.phi.len()
    );
    Ok(())
}
