//! The shipped scenario, run twice with and without early exit.
//!
//! Cascade exits never disagree with full evaluation. The histograms still
//! differ a little because the screening gate only runs with early exit on,
//! and a few of its verdicts differ from a full-depth grade.

use trialign::simgen::{run_pipeline, ScenarioConfig};

fn main() -> trialign::Result<()> {
    let scenario = ScenarioConfig::from_toml(include_str!("../data/scenario.toml"))?;
    let repo = trialign::default_repository()?;
    let entry = repo.lookup(&scenario.lambda)?;
    let profile = scenario.profile()?;

    for early in [true, false] {
        let mut params = scenario.params.clone();
        params.cascade.early_exit = early;
        let (r, _) = run_pipeline(entry, &profile, &params)?;
        println!("early exit {early}:");
        println!("  histogram {:?}", r.histogram);
        println!(
            "  layers {:.3}/{}  AT {:.1}/min  TC {:.4}  mismatches {}",
            r.mean_layers_evaluated, r.layer_count, r.at_per_min, r.tc_per_sample, r.oracle_mismatches
        );
        println!(
            "  screening exits {}, {} of them differ from full evaluation",
            r.screening_exits, r.screening_divergent
        );
        println!(
            "  icq {:.4} fe {:.4} fc {:.4} -> tti {:.4}",
            r.tti.icq, r.tti.fe_raw, r.tti.fc, r.tti.tti
        );
    }
    Ok(())
}
