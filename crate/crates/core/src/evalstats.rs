//! Classification metrics and Cochran's Q test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are actual classes, columns predicted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = classes.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::domain(format!("confusion matrix must be {n}x{n}")));
        }
        Ok(Self { classes, counts })
    }

    /// Tally `(actual, predicted)` pairs over a fixed label set.
    pub fn from_pairs<'a>(classes: &[String], pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let n = classes.len();
        let idx = |l: &str| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::domain(format!("label `{l}` not in class list")))
        };
        let mut counts = vec![vec![0; n]; n];
        for (a, p) in pairs {
            counts[idx(a)?][idx(p)?] += 1;
        }
        Ok(Self {
            classes: classes.to_vec(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Reads `actual,<label>,<label>…` followed by one row per actual class.
    pub fn from_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let classes: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut counts = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.get(0) != classes.get(i).map(String::as_str) {
                return Err(Error::Parse(format!("row {} label does not match column order", i + 1)));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|c| c.parse::<u64>().map_err(|e| Error::Parse(format!("`{c}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            counts.push(row);
        }
        Self::new(classes, counts)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Weighted,
    Macro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub averaging: Averaging,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest metrics per class, aggregated by support (weighted) or plain
/// mean (macro). Undefined ratios count as 0.
pub fn classification_metrics(m: &ConfusionMatrix, averaging: Averaging) -> Result<Metrics> {
    let total = m.total();
    if total == 0 || m.classes.is_empty() {
        return Err(Error::domain("empty confusion matrix"));
    }
    let n = m.classes.len();
    let diag: u64 = (0..n).map(|i| m.counts[i][i]).sum();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|i| {
            let tp = m.counts[i][i];
            let support: u64 = m.counts[i].iter().sum();
            let predicted: u64 = (0..n).map(|r| m.counts[r][i]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                label: m.classes[i].clone(),
                support,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let avg = |f: fn(&ClassMetrics) -> f64| -> f64 {
        match averaging {
            Averaging::Weighted => per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total as f64,
            Averaging::Macro => per_class.iter().map(f).sum::<f64>() / n as f64,
        }
    };
    Ok(Metrics {
        averaging,
        accuracy: diag as f64 / total as f64,
        precision: avg(|c| c.precision),
        recall: avg(|c| c.recall),
        f1: avg(|c| c.f1),
        per_class,
    })
}

/// Respondent-by-option binary responses, or their sufficient statistics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CochranInput {
    Matrix(Vec<Vec<u8>>),
    Aggregates { g: Vec<u64>, sum_l: u64, sum_l2: u64 },
}

impl CochranInput {
    /// Column totals `G_j`, `ΣL_i` and `ΣL_i²`.
    pub fn aggregates(&self) -> Result<(Vec<u64>, u64, u64)> {
        match self {
            CochranInput::Aggregates { g, sum_l, sum_l2 } => {
                if g.iter().sum::<u64>() != *sum_l {
                    return Err(Error::Invariant(format!(
                        "option totals sum to {}, respondent totals to {sum_l}",
                        g.iter().sum::<u64>()
                    )));
                }
                Ok((g.clone(), *sum_l, *sum_l2))
            }
            CochranInput::Matrix(rows) => {
                let k = rows.first().map(Vec::len).unwrap_or(0);
                let mut g = vec![0u64; k];
                let (mut sum_l, mut sum_l2) = (0u64, 0u64);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != k {
                        return Err(Error::Invariant(format!(
                            "row {} has {} options, expected {k}",
                            i + 1,
                            row.len()
                        )));
                    }
                    let mut l = 0u64;
                    for (j, &x) in row.iter().enumerate() {
                        if x > 1 {
                            return Err(Error::Invariant(format!("entry ({}, {}) is not 0/1", i + 1, j + 1)));
                        }
                        g[j] += x as u64;
                        l += x as u64;
                    }
                    sum_l += l;
                    sum_l2 += l * l;
                }
                Ok((g, sum_l, sum_l2))
            }
        }
    }

    /// Reads either a `kind,name,value` aggregate table (`option` rows plus
    /// `sum_l` and `sum_l2`) or a 0/1 matrix with one column per option.
    pub fn from_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let records = rdr
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        let num = |s: &str| s.parse::<u64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
        if header.iter().collect::<Vec<_>>() == ["kind", "name", "value"] {
            let (mut g, mut sum_l, mut sum_l2) = (Vec::new(), None, None);
            for r in &records {
                let v = num(&r[2])?;
                match &r[0] {
                    "option" => g.push(v),
                    "sum_l" => sum_l = Some(v),
                    "sum_l2" => sum_l2 = Some(v),
                    other => return Err(Error::Parse(format!("unknown row kind `{other}`"))),
                }
            }
            Ok(CochranInput::Aggregates {
                g,
                sum_l: sum_l.ok_or_else(|| Error::Parse("missing sum_l row".into()))?,
                sum_l2: sum_l2.ok_or_else(|| Error::Parse("missing sum_l2 row".into()))?,
            })
        } else {
            let rows = records
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|c| match c {
                            "0" => Ok(0u8),
                            "1" => Ok(1u8),
                            _ => Err(Error::Parse(format!("`{c}` is not 0 or 1"))),
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CochranInput::Matrix(rows))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CochranResult {
    pub q: f64,
    pub df: u32,
    pub p: f64,
}

/// `Q = (k−1)(kΣG² − (ΣG)²) / (kΣL − ΣL²)`, evaluated in exact integer
/// arithmetic up to the final division.
pub fn cochran_q(input: &CochranInput) -> Result<CochranResult> {
    let (g, sum_l, sum_l2) = input.aggregates()?;
    let k = g.len() as i128;
    if k < 2 {
        return Err(Error::domain("at least two options required"));
    }
    let sg: i128 = g.iter().map(|&x| x as i128).sum();
    let sg2: i128 = g.iter().map(|&x| (x as i128) * (x as i128)).sum();
    let num = (k - 1) * (k * sg2 - sg * sg);
    let den = k * sum_l as i128 - sum_l2 as i128;
    if den <= 0 {
        return Err(Error::Degenerate(format!("denominator kΣL − ΣL² = {den}")));
    }
    let q = num as f64 / den as f64;
    let df = (k - 1) as u32;
    Ok(CochranResult {
        q,
        df,
        p: chi2_sf(q, df)?,
    })
}

#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// Lower regularized gamma `P(a, x)` by its power series (`x < a + 1`).
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut sum = 1.0 / a;
    let mut term = sum;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

/// Upper regularized gamma `Q(a, x)` by modified Lentz (`x ≥ a + 1`).
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Upper regularized incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !(x >= 0.0) {
        return Err(Error::domain(format!("gamma_q({a}, {x})")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    Ok(if x < a + 1.0 {
        (1.0 - gamma_p_series(a, x)).clamp(0.0, 1.0)
    } else {
        gamma_q_cf(a, x).clamp(0.0, 1.0)
    })
}

/// Chi-square upper tail `P(X ≥ x)` with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: u32) -> Result<f64> {
    if df == 0 {
        return Err(Error::domain("df must be positive"));
    }
    if !(x >= 0.0) || x.is_infinite() {
        return Err(Error::domain(format!(
            "chi-square statistic {x} must be finite and nonnegative"
        )));
    }
    gamma_q(df as f64 / 2.0, x / 2.0)
}
