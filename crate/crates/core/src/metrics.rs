//! Trust factors and the triangular trust index.
//!
//! `TTI = w_I·ICQ + w_E·fe_term + w_C·(1 − FC/FC_max)` where
//! `ICQ = min(scq/ccq, 1+γ)`, `fe_term = min(AT/R, fe_cap)/fe_cap` and
//! `FC = TC/P_market`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rgid::RgidEntry;

/// Throughput-to-spoilage ratio at which the efficiency term saturates.
pub const DEFAULT_FE_CAP: f64 = 2.0;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustFactor {
    pub feature: String,
    pub layer: String,
    pub value: f64,
}

pub fn trust_factor(s_i: f64, t_e: f64) -> Result<f64> {
    if !(s_i > 0.0) {
        return Err(Error::domain(format!("layer weight must be positive, got {s_i}")));
    }
    if !(t_e >= 0.0) {
        return Err(Error::domain(format!("importance must be nonnegative, got {t_e}")));
    }
    Ok(s_i * t_e)
}

/// Trust factors for the named indicators, using the entry's layer weights
/// and indicator importances.
pub fn trust_factors(entry: &RgidEntry, ids: &[String]) -> Result<Vec<TrustFactor>> {
    ids.iter()
        .map(|id| {
            let ind = entry
                .trust
                .indicators
                .get(id)
                .ok_or_else(|| Error::domain(format!("unknown trust indicator `{id}`")))?;
            let s = *entry
                .trust
                .layer_weights
                .get(&ind.layer)
                .ok_or_else(|| Error::domain(format!("unknown trust layer `{}`", ind.layer)))?;
            Ok(TrustFactor {
                feature: id.clone(),
                layer: ind.layer.clone(),
                value: trust_factor(s, ind.importance)?,
            })
        })
        .collect()
}

/// Required coverage `ccq`.
pub fn sum_need(needs: &[TrustFactor]) -> f64 {
    needs.iter().map(|t| t.value).sum()
}

/// Provided coverage `scq`.
pub fn sum_provided(provided: &[TrustFactor]) -> f64 {
    provided.iter().map(|t| t.value).sum()
}

/// Information coverage quality, provided over required, capped at `1 + γ`.
pub fn icq(scq: f64, ccq: f64, gamma: f64) -> Result<f64> {
    if !(ccq > 0.0) {
        return Err(Error::domain(format!("ccq must be positive, got {ccq}")));
    }
    if !(scq >= 0.0) || !(gamma >= 0.0) {
        return Err(Error::domain("scq and gamma must be nonnegative"));
    }
    Ok((scq / ccq).min(1.0 + gamma))
}

/// Processing efficiency: throughput over spoilage-rate threshold.
pub fn fe(throughput: f64, spoilage_rate: f64) -> Result<f64> {
    if !(spoilage_rate > 0.0) {
        return Err(Error::domain(format!(
            "spoilage rate must be positive, got {spoilage_rate}"
        )));
    }
    if !(throughput >= 0.0) {
        return Err(Error::domain("throughput must be nonnegative"));
    }
    Ok(throughput / spoilage_rate)
}

/// Cost ratio: total per-sample cost over market price.
pub fn fc(total_cost: f64, p_market: f64) -> Result<f64> {
    if !(p_market > 0.0) {
        return Err(Error::domain(format!("market price must be positive, got {p_market}")));
    }
    if !(total_cost >= 0.0) {
        return Err(Error::domain("total cost must be nonnegative"));
    }
    Ok(total_cost / p_market)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtiWeights {
    pub w_i: f64,
    pub w_e: f64,
    pub w_c: f64,
}

impl Default for TtiWeights {
    /// Trust first, then timeliness, then cost.
    fn default() -> Self {
        Self {
            w_i: 0.6,
            w_e: 0.3,
            w_c: 0.1,
        }
    }
}

impl TtiWeights {
    pub fn new(w_i: f64, w_e: f64, w_c: f64) -> Result<Self> {
        let w = Self { w_i, w_e, w_c };
        w.check()?;
        Ok(w)
    }

    fn check(&self) -> Result<()> {
        let sum = self.w_i + self.w_e + self.w_c;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL || self.w_i < 0.0 || self.w_e < 0.0 || self.w_c < 0.0 {
            return Err(Error::domain(format!(
                "TTI weights must be nonnegative and sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Raw measurements behind a report. Fields the caller did not measure
/// (e.g. when ICQ is supplied directly) are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TtiInputs {
    pub scq: Option<f64>,
    pub ccq: Option<f64>,
    pub at: Option<f64>,
    pub r: f64,
    pub tc: Option<f64>,
    pub p_market: f64,
    pub fc_max: f64,
    pub gamma: f64,
    pub fe_cap: f64,
}

/// Flat, self-describing TTI evaluation. `fc` is the value used in the cost
/// term, after clamping into `[0, fc_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtiReport {
    pub icq: f64,
    pub fe_raw: f64,
    pub fe_term: f64,
    pub fc: f64,
    pub tti: f64,
    #[serde(flatten)]
    pub weights: TtiWeights,
    #[serde(flatten)]
    pub inputs: TtiInputs,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl TtiReport {
    /// Re-evaluate the index from the stored terms.
    pub fn recompute(&self) -> f64 {
        tti_value(&self.weights, self.icq, self.fe_term, self.fc, self.inputs.fc_max)
    }
}

fn tti_value(w: &TtiWeights, icq: f64, fe_term: f64, fc: f64, fc_max: f64) -> f64 {
    w.w_i * icq + w.w_e * fe_term + w.w_c * (1.0 - fc / fc_max)
}

fn fe_term(fe_raw: f64, fe_cap: f64) -> f64 {
    fe_raw.min(fe_cap) / fe_cap
}

/// Evaluate the index from ICQ, raw FE and FC using the entry's economics.
pub fn tti(icq: f64, fe_raw: f64, fc: f64, entry: &RgidEntry, weights: TtiWeights, fe_cap: f64) -> Result<TtiReport> {
    let inputs = TtiInputs {
        r: entry.decay.spoilage_rate_per_min,
        p_market: entry.econ.p_market_per_sample,
        fc_max: entry.econ.fc_max,
        gamma: entry.econ.gamma,
        fe_cap,
        ..Default::default()
    };
    evaluate(icq, fe_raw, fc, weights, inputs)
}

/// Evaluate the index from raw measurements: coverage sums, throughput
/// (samples/min) and per-sample total cost.
pub fn tti_from_measurements(
    scq: f64,
    ccq: f64,
    throughput: f64,
    total_cost: f64,
    entry: &RgidEntry,
    weights: TtiWeights,
    fe_cap: f64,
) -> Result<TtiReport> {
    let inputs = TtiInputs {
        scq: Some(scq),
        ccq: Some(ccq),
        at: Some(throughput),
        r: entry.decay.spoilage_rate_per_min,
        tc: Some(total_cost),
        p_market: entry.econ.p_market_per_sample,
        fc_max: entry.econ.fc_max,
        gamma: entry.econ.gamma,
        fe_cap,
    };
    evaluate_inputs(inputs, weights)
}

/// Evaluate from a fully populated [`TtiInputs`].
pub fn evaluate_inputs(inputs: TtiInputs, weights: TtiWeights) -> Result<TtiReport> {
    let missing = |name: &str| Error::domain(format!("missing input `{name}`"));
    let icq_v = icq(
        inputs.scq.ok_or_else(|| missing("scq"))?,
        inputs.ccq.ok_or_else(|| missing("ccq"))?,
        inputs.gamma,
    )?;
    let fe_v = fe(inputs.at.ok_or_else(|| missing("at"))?, inputs.r)?;
    let fc_v = fc(inputs.tc.ok_or_else(|| missing("tc"))?, inputs.p_market)?;
    evaluate(icq_v, fe_v, fc_v, weights, inputs)
}

fn evaluate(icq: f64, fe_raw: f64, fc: f64, weights: TtiWeights, inputs: TtiInputs) -> Result<TtiReport> {
    weights.check()?;
    if !(inputs.fe_cap > 0.0) {
        return Err(Error::domain("fe_cap must be positive"));
    }
    if !(inputs.fc_max > 0.0) {
        return Err(Error::domain("fc_max must be positive"));
    }
    if !icq.is_finite() || !fe_raw.is_finite() || !fc.is_finite() || fe_raw < 0.0 {
        return Err(Error::domain("icq, fe and fc must be finite, fe nonnegative"));
    }
    let mut warnings = Vec::new();
    let fc_used = if fc > inputs.fc_max {
        warnings.push(format!("fc {fc} exceeds fc_max {}; clamped", inputs.fc_max));
        inputs.fc_max
    } else if fc < 0.0 {
        warnings.push(format!("fc {fc} is negative; clamped to 0"));
        0.0
    } else {
        fc
    };
    let term = fe_term(fe_raw, inputs.fe_cap);
    Ok(TtiReport {
        icq,
        fe_raw,
        fe_term: term,
        fc: fc_used,
        tti: tti_value(&weights, icq, term, fc_used, inputs.fc_max),
        weights,
        inputs,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Sign constraints
// ---------------------------------------------------------------------------

/// Cost model: the cost ratio needed to reach a target ICQ and FE.
pub trait CostScenario {
    fn fc(&self, icq: f64, fe: f64) -> f64;
}

/// `FC = c0 + c1·icq² + c2·fe² + coupling·(icq + fe)²/budget`, defined on
/// `icq + fe ≤ budget`. The coupling term models ICQ and FE drawing on one
/// shared budget, which gives the negative ICQ×FE interaction in TTI.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticBudgetScenario {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub coupling: f64,
    pub budget: f64,
}

impl Default for QuadraticBudgetScenario {
    fn default() -> Self {
        Self {
            c0: 0.02,
            c1: 0.03,
            c2: 0.02,
            coupling: 0.02,
            budget: 3.0,
        }
    }
}

impl CostScenario for QuadraticBudgetScenario {
    fn fc(&self, icq: f64, fe: f64) -> f64 {
        let s = icq + fe;
        self.c0 + self.c1 * icq * icq + self.c2 * fe * fe + self.coupling * s * s / self.budget
    }
}

/// Cost that ignores both targets. Violates the monotonicity claims.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantCost(pub f64);

impl CostScenario for ConstantCost {
    fn fc(&self, _icq: f64, _fe: f64) -> f64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityGrid {
    pub icq: Vec<f64>,
    pub fe: Vec<f64>,
}

impl SensitivityGrid {
    /// `n × n` evenly spaced points over the two ranges.
    pub fn uniform(icq: (f64, f64), fe: (f64, f64), n: usize) -> Self {
        let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
            if n < 2 {
                return vec![lo; n];
            }
            (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
        };
        Self {
            icq: axis(icq),
            fe: axis(fe),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub icq: f64,
    pub fe: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignCheck {
    pub claim: &'static str,
    pub violations: Vec<Violation>,
}

impl SignCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignReport {
    pub fc_increases_with_icq: SignCheck,
    pub fc_increases_with_fe: SignCheck,
    pub tti_nonincreasing_in_fc: SignCheck,
    pub tti_icq_fe_interaction_negative: SignCheck,
}

impl SignReport {
    pub fn checks(&self) -> [&SignCheck; 4] {
        [
            &self.fc_increases_with_icq,
            &self.fc_increases_with_fe,
            &self.tti_nonincreasing_in_fc,
            &self.tti_icq_fe_interaction_negative,
        ]
    }

    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed())
    }
}

/// Parameters of the TTI surface probed by [`tti_sensitivity`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TtiParams {
    pub weights: TtiWeights,
    pub fc_max: f64,
    pub fe_cap: f64,
}

impl TtiParams {
    pub fn from_entry(entry: &RgidEntry) -> Self {
        Self {
            weights: TtiWeights::default(),
            fc_max: entry.econ.fc_max,
            fe_cap: DEFAULT_FE_CAP,
        }
    }

    fn at(&self, icq: f64, fe: f64, fc: f64) -> f64 {
        let fc = fc.clamp(0.0, self.fc_max);
        tti_value(&self.weights, icq, fe_term(fe, self.fe_cap), fc, self.fc_max)
    }
}

/// Central finite-difference check of the four sign claims at every
/// interior grid point:
/// ∂FC/∂ICQ > 0, ∂FC/∂FE > 0, ∂TTI/∂FC ≤ 0 and ∂²TTI/∂ICQ∂FE < 0, where TTI
/// along the grid is evaluated at the scenario's cost.
pub fn tti_sensitivity(
    scenario: &dyn CostScenario,
    params: &TtiParams,
    grid: &SensitivityGrid,
    step: f64,
) -> Result<SignReport> {
    if grid.icq.len() < 3 || grid.fe.len() < 3 {
        return Err(Error::domain("sensitivity grid needs at least 3 points per axis"));
    }
    if !(step > 0.0) {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    params.weights.check()?;
    let h = step;
    let tti_at = |i: f64, e: f64| params.at(i, e, scenario.fc(i, e));

    let mut report = SignReport {
        fc_increases_with_icq: SignCheck {
            claim: "dFC/dICQ > 0",
            violations: vec![],
        },
        fc_increases_with_fe: SignCheck {
            claim: "dFC/dFE > 0",
            violations: vec![],
        },
        tti_nonincreasing_in_fc: SignCheck {
            claim: "dTTI/dFC <= 0",
            violations: vec![],
        },
        tti_icq_fe_interaction_negative: SignCheck {
            claim: "d2TTI/dICQdFE < 0",
            violations: vec![],
        },
    };

    for &i in &grid.icq[1..grid.icq.len() - 1] {
        for &e in &grid.fe[1..grid.fe.len() - 1] {
            let d_fc_icq = (scenario.fc(i + h, e) - scenario.fc(i - h, e)) / (2.0 * h);
            if !(d_fc_icq > 0.0) {
                report.fc_increases_with_icq.violations.push(Violation {
                    icq: i,
                    fe: e,
                    value: d_fc_icq,
                });
            }
            let d_fc_fe = (scenario.fc(i, e + h) - scenario.fc(i, e - h)) / (2.0 * h);
            if !(d_fc_fe > 0.0) {
                report.fc_increases_with_fe.violations.push(Violation {
                    icq: i,
                    fe: e,
                    value: d_fc_fe,
                });
            }
            let fc0 = scenario.fc(i, e);
            let d_tti_fc = (params.at(i, e, fc0 + h) - params.at(i, e, fc0 - h)) / (2.0 * h);
            if !(d_tti_fc <= 0.0) {
                report.tti_nonincreasing_in_fc.violations.push(Violation {
                    icq: i,
                    fe: e,
                    value: d_tti_fc,
                });
            }
            let mixed = (tti_at(i + h, e + h) - tti_at(i + h, e - h) - tti_at(i - h, e + h) + tti_at(i - h, e - h))
                / (4.0 * h * h);
            if !(mixed < 0.0) {
                report.tti_icq_fe_interaction_negative.violations.push(Violation {
                    icq: i,
                    fe: e,
                    value: mixed,
                });
            }
        }
    }
    Ok(report)
}
