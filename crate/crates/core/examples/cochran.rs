//! Cochran's Q on the survey aggregates in `data/table1.csv`, and
//! classification metrics on a small confusion matrix.

use trialign::evalstats::{self, Averaging, CochranInput, ConfusionMatrix};

fn main() -> trialign::Result<()> {
    let input = CochranInput::from_csv(include_str!("../data/table1.csv").as_bytes())?;
    let (g, sum_l, sum_l2) = input.aggregates()?;
    let r = evalstats::cochran_q(&input)?;
    println!("G = {g:?}, sum L = {sum_l}, sum L^2 = {sum_l2}");
    println!("Q = {:.3}, df = {}, p = {:.3e}", r.q, r.df, r.p);

    let m = ConfusionMatrix::from_csv(include_str!("../data/confusion.csv").as_bytes())?;
    for avg in [Averaging::Weighted, Averaging::Macro] {
        let s = evalstats::classification_metrics(&m, avg)?;
        println!(
            "{avg:?}: acc {:.4} precision {:.4} recall {:.4} f1 {:.4}",
            s.accuracy, s.precision, s.recall, s.f1
        );
    }
    Ok(())
}
