//! Load the shipped dictionary, resolve every variety and print what the
//! overlay chain produced. Then re-render it and check the round trip.

use trialign::rgid::{self, validate_entry};

fn main() -> trialign::Result<()> {
    let repo = trialign::default_repository()?;
    for entry in repo.entries() {
        println!("{} ({})", entry.lambda, entry.category);
        for (spec, w) in entry.phi.iter().zip(&entry.omega) {
            let flag = if spec.screening { " screening" } else { "" };
            println!("  {:<12} {:>7?} w={w:.2}{flag}", spec.id, spec.plane);
        }
        let cuts: Vec<String> = entry
            .thresholds
            .cuts
            .iter()
            .map(|c| format!("{}>={}", c.grade, c.score))
            .collect();
        println!("  cuts {}  tau_final {}", cuts.join(" "), entry.thresholds.tau_final);
        println!(
            "  ttl {}h  P {}  fc_max {}",
            entry.decay.ttl_hours, entry.econ.p_market_per_sample, entry.econ.fc_max
        );
        let report = validate_entry(entry);
        println!("  findings: {}", report.findings.len());
    }

    let text = repo.to_document()?;
    let again = rgid::load_dictionary(&text)?;
    let same = repo.entries().zip(again.entries()).all(|(a, b)| a == b);
    println!("round trip preserves every entry: {same}");
    Ok(())
}
