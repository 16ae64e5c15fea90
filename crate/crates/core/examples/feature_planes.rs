//! Split one pear's features into the general stream and the three surface
//! planes, then fuse them back into `phi` order.

use trialign::features::{decompose_surfaces, fuse, separate, FruitSample, SyntheticExtractor};
use trialign::rgid::VarietyId;

fn main() -> trialign::Result<()> {
    let repo = trialign::default_repository()?;
    let entry = repo.lookup(&"xinjiang/korla-pear".parse::<VarietyId>()?)?;
    let sample: FruitSample = serde_json::from_str(include_str!("../data/pear_sample.json"))?;

    let (general, specific) = separate(&sample, entry, &SyntheticExtractor)?;
    let surfaces = decompose_surfaces(&specific, entry);
    let show = |name: &str, slice: &trialign::features::FeatureSlice| {
        let parts: Vec<String> = slice
            .entries
            .iter()
            .map(|(k, v)| format!("{}={v:.3}", entry.phi[*k].id))
            .collect();
        println!("{name:<8} {}", parts.join(" "));
    };
    show("general", &general);
    show("top", &surfaces.top);
    show("side", &surfaces.side);
    show("bottom", &surfaces.bottom);

    let fused = fuse(&general, &surfaces, entry)?;
    println!("fused    {:?}", fused.values);
    println!("composite {:.4}", fused.composite(&entry.omega));
    Ok(())
}
