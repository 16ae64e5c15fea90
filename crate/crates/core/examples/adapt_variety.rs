//! Start a new pear variety from the Korla entry and refit only its top
//! layer on a small labelled calibration set graded by the rule standard.

use trialign::features::{grade_by_rules, SyntheticExtractor};
use trialign::rgid::{adapt_entry, VarietyId};
use trialign::simgen::{generate_samples, VarietyProfile};

fn main() -> trialign::Result<()> {
    let repo = trialign::default_repository()?;
    let base: VarietyId = "xinjiang/korla-pear".parse()?;
    let new: VarietyId = "gansu/yuan-pear".parse()?;

    let mut profile = VarietyProfile::korla_pear();
    profile.lambda = new.clone();
    profile.weight.mean = 135.0;
    let calibration = generate_samples(&profile, 300, 21)?
        .into_iter()
        .map(|s| {
            let label = grade_by_rules(&s.sample, "korla-pear")?;
            Ok((s.sample, label))
        })
        .collect::<trialign::Result<Vec<_>>>()?;

    let adapted = adapt_entry(&repo, &base, &new, &calibration, &SyntheticExtractor)?;
    let old = repo.lookup(&base)?;
    println!(
        "{} scalars, changed {:?}",
        old.scalar_count(),
        old.changed_scalars(&adapted)
    );
    println!("omega {:?} -> {:?}", old.omega, adapted.omega);
    Ok(())
}
