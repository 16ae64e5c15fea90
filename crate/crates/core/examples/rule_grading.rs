//! Reference graders for the three shipped standards. Each row probes an
//! interval endpoint; the last pear sits outside every band.

use trialign::features::{rules, FruitSample};
use trialign::rgid::VarietyId;

fn sample(lambda: &str, weight: f64, diameter: f64, scar: f64, stem: f64, firmness: f64) -> FruitSample {
    FruitSample {
        id: format!("{lambda}:{weight}"),
        lambda: lambda.parse::<VarietyId>().unwrap(),
        weight_g: weight,
        diameter_mm: diameter,
        scar_area_cm2: scar,
        stem_integrity: stem,
        color_uniformity: 0.9,
        firmness,
        plane_observations: Default::default(),
        t_collect: Default::default(),
    }
}

fn main() -> trialign::Result<()> {
    let pear = "xinjiang/korla-pear";
    let cases = [
        ("korla-pear", sample(pear, 120.0, 60.0, 0.0, 1.0, 0.7)),
        ("korla-pear", sample(pear, 160.0, 60.0, 0.0, 1.0, 0.7)),
        ("korla-pear", sample(pear, 110.0, 60.0, 0.8, 1.0, 0.7)),
        ("korla-pear", sample(pear, 90.0, 60.0, 1.0, 1.0, 0.7)),
        ("korla-pear", sample(pear, 90.0, 60.0, 1.01, 1.0, 0.7)),
        ("clementine", sample("zhejiang/clementine", 70.0, 45.0, 0.0, 1.0, 0.7)),
        ("clementine", sample("zhejiang/clementine", 70.0, 50.0, 0.0, 0.96, 0.7)),
        (
            "cherry-tomato",
            sample("hainan/cherry-tomato", 15.0, 28.0, 0.0, 1.0, 0.85),
        ),
        (
            "cherry-tomato",
            sample("hainan/cherry-tomato", 20.0, 28.0, 0.0, 1.0, 0.7),
        ),
    ];
    for (standard, s) in &cases {
        let std = rules::standard(standard)?;
        let eligible: Vec<&str> = std.labels().filter(|l| std.eligible(s, l).unwrap_or(false)).collect();
        println!(
            "{standard:<14} w={:<6} d={:<5} scar={:<5} stem={:<5} firm={:<5} -> {:<8} eligible {eligible:?}",
            s.weight_g,
            s.diameter_mm,
            s.scar_area_cm2,
            s.stem_integrity,
            s.firmness,
            std.grade(s)?,
        );
    }
    Ok(())
}
