//! Trust factors, ICQ and the composite index for one variety, followed by
//! the finite-difference sign checks on the built-in cost scenario.

use trialign::metrics::{self, QuadraticBudgetScenario, SensitivityGrid, TtiParams, TtiWeights, DEFAULT_FE_CAP};
use trialign::rgid::VarietyId;

fn main() -> trialign::Result<()> {
    let repo = trialign::default_repository()?;
    let entry = repo.lookup(&"xinjiang/korla-pear".parse::<VarietyId>()?)?;

    let need = metrics::trust_factors(entry, &entry.trust.need)?;
    let provided = metrics::trust_factors(entry, &entry.trust.provided)?;
    for f in &need {
        let have = provided.iter().any(|p| p.feature == f.feature);
        println!("{:<18} T_e={:.3} provided={have}", f.feature, f.value);
    }
    let (scq, ccq) = (metrics::sum_provided(&provided), metrics::sum_need(&need));
    let icq = metrics::icq(scq, ccq, entry.econ.gamma)?;
    println!("scq={scq:.3} ccq={ccq:.3} icq={icq:.4}");

    // 90 samples/min against a spoilage rate of 100/min, 4 cents per sample
    let report = metrics::tti_from_measurements(scq, ccq, 90.0, 0.04, entry, TtiWeights::default(), DEFAULT_FE_CAP)?;
    println!("fe={:.3} fc={:.4} tti={:.4}", report.fe_raw, report.fc, report.tti);

    let grid = SensitivityGrid::uniform((0.2, 1.2), (0.2, 1.6), 5);
    let signs = metrics::tti_sensitivity(
        &QuadraticBudgetScenario::default(),
        &TtiParams::from_entry(entry),
        &grid,
        1e-4,
    )?;
    for c in signs.checks() {
        println!("{:<20} {}", c.claim, if c.passed() { "holds" } else { "violated" });
    }
    Ok(())
}
