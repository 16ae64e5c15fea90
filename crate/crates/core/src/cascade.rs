//! Cascaded inference with early exit.
//!
//! Layers are evaluated in a fixed order (screening features first, then the
//! rest by descending weight) and their weighted contributions accumulated.
//! After layer `l` the remaining layers can add at most
//! `M_l = Σ_{k>l} ω_k`, so an early Reject at `cum ≤ τ_final − M_l` and an
//! early Accept at `cum ≥ τ_accept ≥ τ_final` both agree with the full
//! composite score. [`check_threshold_soundness`] verifies those bounds.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Extractor, FruitSample, REJECT};
use crate::rgid::RgidEntry;

/// Slack applied by [`CascadeConfig::sound`] to both exit thresholds so that
/// rounding in the running sum cannot flip a boundary case.
pub const SOUNDNESS_MARGIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Layer order as indices into `phi`.
    pub order: Vec<usize>,
    pub tau_low: f64,
    pub tau_high: f64,
    pub tau_accept: f64,
    /// One reject threshold per layer, in evaluation order.
    pub tau_reject: Vec<f64>,
    /// Hold an early Accept until the remaining layers can no longer move
    /// the score across a grade cut, so early grades equal full-depth ones.
    #[serde(default)]
    pub pin_grade: bool,
}

/// Screening features first, then the rest by descending weight. Ties keep
/// `phi` order.
pub fn default_order(entry: &RgidEntry) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entry.phi.len()).collect();
    order.sort_by(|&a, &b| {
        let sa = entry.phi[a].screening;
        let sb = entry.phi[b].screening;
        sb.cmp(&sa)
            .then(entry.omega[b].total_cmp(&entry.omega[a]))
            .then(a.cmp(&b))
    });
    order
}

/// `M_l` for each layer position: total weight of the layers after it.
pub fn remaining_mass(entry: &RgidEntry, order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; order.len()];
    let mut acc = 0.0;
    for l in (0..order.len()).rev() {
        out[l] = acc;
        acc += entry.omega[order[l]];
    }
    out
}

/// Largest reject thresholds that keep early rejects consistent with the
/// full evaluation: `τ_final − M_l`.
pub fn max_sound_reject_thresholds(entry: &RgidEntry, order: &[usize]) -> Vec<f64> {
    let tau = entry.thresholds.tau_final;
    remaining_mass(entry, order).into_iter().map(|m| tau - m).collect()
}

impl CascadeConfig {
    /// Config with the tightest sound exit thresholds for `entry`, less
    /// [`SOUNDNESS_MARGIN`].
    pub fn sound(entry: &RgidEntry, tau_low: f64, tau_high: f64) -> Result<Self> {
        let order = default_order(entry);
        let tau_reject = max_sound_reject_thresholds(entry, &order)
            .into_iter()
            .map(|t| t - SOUNDNESS_MARGIN)
            .collect();
        let cfg = CascadeConfig {
            order,
            tau_low,
            tau_high,
            tau_accept: (entry.thresholds.tau_final + SOUNDNESS_MARGIN).min(1.0),
            tau_reject,
            pin_grade: false,
        };
        cfg.check_shape(entry)?;
        Ok(cfg)
    }

    /// Structural checks independent of soundness.
    pub fn check_shape(&self, entry: &RgidEntry) -> Result<()> {
        let n = entry.phi.len();
        if self.order.len() != n {
            return Err(Error::Config(format!(
                "layer order has {} entries for {n} features",
                self.order.len()
            )));
        }
        let mut seen = vec![false; n];
        for &k in &self.order {
            if k >= n || std::mem::replace(&mut seen[k], true) {
                return Err(Error::Config("layer order is not a permutation of phi".into()));
            }
        }
        if self.tau_reject.len() != n {
            return Err(Error::Config(format!(
                "{} reject thresholds for {n} layers",
                self.tau_reject.len()
            )));
        }
        if !(self.tau_low < self.tau_high) {
            return Err(Error::Config("tau_low must be below tau_high".into()));
        }
        for (name, v) in [
            ("tau_low", self.tau_low),
            ("tau_high", self.tau_high),
            ("tau_accept", self.tau_accept),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundnessViolation {
    /// 1-based layer, or `None` for config-wide problems.
    pub layer: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SoundnessReport {
    pub violations: Vec<SoundnessViolation>,
}

impl SoundnessReport {
    pub fn is_sound(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_threshold_soundness(entry: &RgidEntry, config: &CascadeConfig) -> SoundnessReport {
    let mut violations = Vec::new();
    if let Err(e) = config.check_shape(entry) {
        violations.push(SoundnessViolation {
            layer: None,
            message: e.to_string(),
        });
        return SoundnessReport { violations };
    }
    let tau = entry.thresholds.tau_final;
    if config.tau_accept < tau {
        violations.push(SoundnessViolation {
            layer: None,
            message: format!("tau_accept {} is below tau_final {tau}", config.tau_accept),
        });
    }
    for (l, (t, bound)) in config
        .tau_reject
        .iter()
        .zip(max_sound_reject_thresholds(entry, &config.order))
        .enumerate()
    {
        if *t > bound {
            violations.push(SoundnessViolation {
                layer: Some(l + 1),
                message: format!("tau_reject {t} exceeds tau_final - M_l = {bound}"),
            });
        }
    }
    SoundnessReport { violations }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreeningOutcome {
    Reject,
    Accept,
    Continue,
}

impl ScreeningOutcome {
    /// Strict comparisons; a score equal to either threshold continues.
    pub fn from_score(s_early: f64, tau_low: f64, tau_high: f64) -> Self {
        if s_early < tau_low {
            ScreeningOutcome::Reject
        } else if s_early > tau_high {
            ScreeningOutcome::Accept
        } else {
            ScreeningOutcome::Continue
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Screening {
    /// `None` when the entry flags no screening features.
    pub s_early: Option<f64>,
    pub outcome: ScreeningOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decision {
    Accept {
        grade: String,
    },
    Reject,
    /// No early exit fired; decided by the full composite.
    Resolved {
        accepted: bool,
        grade: String,
    },
}

impl Decision {
    pub fn accepted(&self) -> bool {
        match self {
            Decision::Accept { .. } => true,
            Decision::Reject => false,
            Decision::Resolved { accepted, .. } => *accepted,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Decision::Accept { grade } | Decision::Resolved { grade, .. } => grade,
            Decision::Reject => REJECT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "at", content = "layer", rename_all = "lowercase")]
pub enum ExitPoint {
    Screening,
    Layer(usize),
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub sample_id: String,
    pub s_early: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screening: Option<ScreeningOutcome>,
    /// Evaluated layers as `phi` indices.
    pub layers: Vec<usize>,
    pub contributions: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub exit: ExitPoint,
    pub decision: Decision,
    pub layers_evaluated: usize,
    /// Set only when the trace fell through to the full evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite: Option<f64>,
    #[serde(default)]
    pub waived: bool,
}

impl DecisionTrace {
    /// Stopped before evaluating all `layer_count` layers.
    pub fn early_exit(&self, layer_count: usize) -> bool {
        self.layers_evaluated < layer_count
    }

    /// Composite score when resolved in full, else the last running sum.
    pub fn final_score(&self) -> f64 {
        self.composite
            .or_else(|| self.cumulative.last().copied())
            .unwrap_or(0.0)
    }
}

/// Result of evaluating every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullDecision {
    pub values: Vec<f64>,
    pub composite: f64,
    pub accepted: bool,
    /// Grade label, or `Reject` when not accepted.
    pub grade: String,
}

pub fn full_decide(sample: &FruitSample, entry: &RgidEntry, extractor: &dyn Extractor) -> Result<FullDecision> {
    let values = entry
        .phi
        .iter()
        .map(|spec| extractor.extract(sample, spec))
        .collect::<Result<Vec<_>>>()?;
    let composite = crate::features::dot(&entry.omega, &values);
    Ok(FullDecision {
        accepted: entry.thresholds.accepts(composite),
        grade: entry.thresholds.classify(composite).to_string(),
        values,
        composite,
    })
}

/// Screening and cascade evaluation for one entry. Holds no mutable state,
/// so one engine can serve many threads.
#[derive(Clone, Debug)]
pub struct CascadeEngine<'a> {
    entry: &'a RgidEntry,
    config: CascadeConfig,
    screening_mass: f64,
    remaining: Vec<f64>,
    waived: bool,
}

impl<'a> CascadeEngine<'a> {
    /// Refuses configs that fail [`check_threshold_soundness`].
    pub fn new(entry: &'a RgidEntry, config: CascadeConfig) -> Result<Self> {
        let report = check_threshold_soundness(entry, &config);
        if let Some(v) = report.violations.first() {
            return Err(Error::Config(match v.layer {
                Some(l) => format!("layer {l}: {}", v.message),
                None => v.message.clone(),
            }));
        }
        Ok(Self::build(entry, config, false))
    }

    /// Accepts an unsound config; traces are flagged `waived`.
    pub fn waived(entry: &'a RgidEntry, config: CascadeConfig) -> Result<Self> {
        config.check_shape(entry)?;
        Ok(Self::build(entry, config, true))
    }

    fn build(entry: &'a RgidEntry, config: CascadeConfig, waived: bool) -> Self {
        let screening_mass = entry
            .phi
            .iter()
            .zip(&entry.omega)
            .filter(|(s, _)| s.screening)
            .map(|(_, w)| w)
            .sum();
        let remaining = remaining_mass(entry, &config.order);
        Self {
            entry,
            config,
            screening_mass,
            remaining,
            waived,
        }
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn entry(&self) -> &RgidEntry {
        self.entry
    }

    pub fn screen(&self, sample: &FruitSample, extractor: &dyn Extractor) -> Result<Screening> {
        let mut cache = vec![None; self.entry.phi.len()];
        self.screen_cached(sample, extractor, &mut cache)
    }

    fn value(
        &self,
        k: usize,
        sample: &FruitSample,
        extractor: &dyn Extractor,
        cache: &mut [Option<f64>],
    ) -> Result<f64> {
        if let Some(v) = cache[k] {
            return Ok(v);
        }
        let v = extractor.extract(sample, &self.entry.phi[k])?;
        cache[k] = Some(v);
        Ok(v)
    }

    fn screen_cached(
        &self,
        sample: &FruitSample,
        extractor: &dyn Extractor,
        cache: &mut [Option<f64>],
    ) -> Result<Screening> {
        if !(self.screening_mass > 0.0) {
            return Ok(Screening {
                s_early: None,
                outcome: ScreeningOutcome::Continue,
            });
        }
        let mut s = 0.0;
        for (k, spec) in self.entry.phi.iter().enumerate() {
            if spec.screening {
                s += self.entry.omega[k] * self.value(k, sample, extractor, cache)?;
            }
        }
        let s_early = s / self.screening_mass;
        Ok(Screening {
            s_early: Some(s_early),
            outcome: ScreeningOutcome::from_score(s_early, self.config.tau_low, self.config.tau_high),
        })
    }

    /// Layer-by-layer evaluation with early exit. Screening thresholds are
    /// not applied; see [`CascadeEngine::run`].
    pub fn decide(&self, sample: &FruitSample, extractor: &dyn Extractor) -> Result<DecisionTrace> {
        let mut cache = vec![None; self.entry.phi.len()];
        self.decide_cached(sample, extractor, &mut cache, None)
    }

    /// Screening stage followed by the cascade when screening continues.
    /// A screening Accept takes the grade its screening score maps to, or
    /// the lowest grade if it maps to none.
    pub fn run(&self, sample: &FruitSample, extractor: &dyn Extractor) -> Result<DecisionTrace> {
        let mut cache = vec![None; self.entry.phi.len()];
        let screening = self.screen_cached(sample, extractor, &mut cache)?;
        let decision = match screening.outcome {
            ScreeningOutcome::Continue => {
                return self.decide_cached(sample, extractor, &mut cache, Some(screening));
            }
            ScreeningOutcome::Reject => Decision::Reject,
            ScreeningOutcome::Accept => {
                let th = &self.entry.thresholds;
                let s = screening.s_early.unwrap_or(0.0);
                let grade = th
                    .grade_for(s)
                    .or_else(|| th.labels().next())
                    .unwrap_or(REJECT)
                    .to_string();
                Decision::Accept { grade }
            }
        };
        let layers: Vec<usize> = self
            .config
            .order
            .iter()
            .copied()
            .filter(|&k| self.entry.phi[k].screening)
            .collect();
        let (contributions, cumulative) = self.running(&layers, &cache);
        Ok(DecisionTrace {
            sample_id: sample.id.clone(),
            s_early: screening.s_early,
            screening: Some(screening.outcome),
            layers_evaluated: layers.len(),
            layers,
            contributions,
            cumulative,
            exit: ExitPoint::Screening,
            decision,
            composite: None,
            waived: self.waived,
        })
    }

    fn running(&self, layers: &[usize], cache: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut acc = 0.0;
        let mut contributions = Vec::with_capacity(layers.len());
        let mut cumulative = Vec::with_capacity(layers.len());
        for &k in layers {
            let c = self.entry.omega[k] * cache[k].unwrap_or(0.0);
            acc += c;
            contributions.push(c);
            cumulative.push(acc);
        }
        (contributions, cumulative)
    }

    fn decide_cached(
        &self,
        sample: &FruitSample,
        extractor: &dyn Extractor,
        cache: &mut [Option<f64>],
        screening: Option<Screening>,
    ) -> Result<DecisionTrace> {
        let th = &self.entry.thresholds;
        let n = self.config.order.len();
        let mut layers = Vec::with_capacity(n);
        let mut contributions = Vec::with_capacity(n);
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        let mut exit = None;
        for (l, &k) in self.config.order.iter().enumerate() {
            let c = self.entry.omega[k] * self.value(k, sample, extractor, cache)?;
            acc += c;
            layers.push(k);
            contributions.push(c);
            cumulative.push(acc);
            let pinned =
                !self.config.pin_grade || th.grade_for(acc) == th.grade_for(acc + self.remaining[l] + SOUNDNESS_MARGIN);
            if acc >= self.config.tau_accept && pinned {
                let grade = th.grade_for(acc).or_else(|| th.labels().next()).unwrap_or(REJECT);
                exit = Some((
                    l + 1,
                    Decision::Accept {
                        grade: grade.to_string(),
                    },
                ));
                break;
            }
            if acc <= self.config.tau_reject[l] {
                exit = Some((l + 1, Decision::Reject));
                break;
            }
        }
        let (exit, decision, composite) = match exit {
            Some((l, d)) => (ExitPoint::Layer(l), d, None),
            None => {
                let values: Vec<f64> = cache.iter().map(|v| v.unwrap_or(0.0)).collect();
                let composite = crate::features::dot(&self.entry.omega, &values);
                let decision = Decision::Resolved {
                    accepted: th.accepts(composite),
                    grade: th.classify(composite).to_string(),
                };
                (ExitPoint::Full, decision, Some(composite))
            }
        };
        Ok(DecisionTrace {
            sample_id: sample.id.clone(),
            s_early: screening.as_ref().and_then(|s| s.s_early),
            screening: screening.map(|s| s.outcome),
            layers_evaluated: layers.len(),
            layers,
            contributions,
            cumulative,
            exit,
            decision,
            composite,
            waived: self.waived,
        })
    }
}

/// One-shot cascade evaluation; errors if `config` is unsound.
pub fn cascade_decide(
    sample: &FruitSample,
    entry: &RgidEntry,
    config: &CascadeConfig,
    extractor: &dyn Extractor,
) -> Result<DecisionTrace> {
    CascadeEngine::new(entry, config.clone())?.decide(sample, extractor)
}

pub fn screen(
    sample: &FruitSample,
    entry: &RgidEntry,
    config: &CascadeConfig,
    extractor: &dyn Extractor,
) -> Result<Screening> {
    CascadeEngine::waived(entry, config.clone())?.screen(sample, extractor)
}

pub fn write_traces<W: Write>(mut out: W, traces: &[DecisionTrace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_traces<R: BufRead>(input: R) -> Result<Vec<DecisionTrace>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rgid::FeatureSpec;
    use crate::testutil::{fixture_entry, fixture_sample};
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Reads preset values by feature id and counts calls.
    struct Fixed {
        values: Vec<(String, f64)>,
        calls: AtomicUsize,
    }

    impl Fixed {
        fn new(values: Vec<(&str, f64)>) -> Self {
            Self {
                values: values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl Extractor for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }

        fn extract(&self, _: &FruitSample, spec: &FeatureSpec) -> Result<f64> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.values
                .iter()
                .find(|(id, _)| *id == spec.id)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Extraction {
                    feature: spec.id.clone(),
                    reason: "not preset".into(),
                })
        }
    }

    fn three_layer(tau_final: f64) -> RgidEntry {
        let mut e = fixture_entry();
        e.phi.truncate(3);
        for s in &mut e.phi {
            s.screening = false;
        }
        e.omega = vec![0.5, 0.3, 0.2];
        e.thresholds.tau_final = tau_final;
        e
    }

    fn ids(e: &RgidEntry) -> Vec<&str> {
        e.phi.iter().map(|s| s.id.as_str()).collect()
    }

    #[test]
    fn max_sound_thresholds_for_three_layers() {
        let e = three_layer(0.7);
        let order = default_order(&e);
        assert_eq!(order, vec![0, 1, 2]);
        let m = remaining_mass(&e, &order);
        let t = max_sound_reject_thresholds(&e, &order);
        for (got, want) in m.iter().zip([0.5, 0.2, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in t.iter().zip([0.2, 0.5, 0.7]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn accept_at_layer_two_skips_layer_three() {
        let e = three_layer(0.7);
        let id = ids(&e);
        let ex = Fixed::new(vec![(id[0], 1.0), (id[1], 1.0)]);
        let cfg = CascadeConfig::sound(&e, 0.1, 0.9).unwrap();
        let t = cascade_decide(&fixture_sample(), &e, &cfg, &ex).unwrap();
        assert_eq!(t.exit, ExitPoint::Layer(2));
        assert!(t.decision.accepted());
        assert_eq!(t.layers_evaluated, 2);
        assert!((t.cumulative[1] - 0.8).abs() < 1e-12);
        assert_eq!(ex.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn reject_at_layer_one() {
        let e = three_layer(0.7);
        let id = ids(&e);
        let ex = Fixed::new(vec![(id[0], 0.1)]);
        let cfg = CascadeConfig::sound(&e, 0.1, 0.9).unwrap();
        let t = cascade_decide(&fixture_sample(), &e, &cfg, &ex).unwrap();
        assert_eq!(t.exit, ExitPoint::Layer(1));
        assert_eq!(t.decision, Decision::Reject);
        assert!((t.cumulative[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn all_zero_rejects_immediately() {
        let e = three_layer(0.7);
        let id = ids(&e);
        let ex = Fixed::new(vec![(id[0], 0.0), (id[1], 0.0), (id[2], 0.0)]);
        let mut cfg = CascadeConfig::sound(&e, 0.1, 0.9).unwrap();
        cfg.tau_reject[0] = 0.0;
        let t = cascade_decide(&fixture_sample(), &e, &cfg, &ex).unwrap();
        assert_eq!(t.exit, ExitPoint::Layer(1));
        assert_eq!(t.decision, Decision::Reject);
    }

    #[test]
    fn full_decide_maps_cuts() {
        let mut e = three_layer(0.4);
        e.thresholds.cuts = vec![
            crate::rgid::GradeCut {
                score: 0.4,
                grade: "B".into(),
            },
            crate::rgid::GradeCut {
                score: 0.7,
                grade: "A".into(),
            },
        ];
        let id = ids(&e);
        // 0.5*0.9 + 0.3*0.5 + 0.2*0.25 = 0.65
        let ex = Fixed::new(vec![(id[0], 0.9), (id[1], 0.5), (id[2], 0.25)]);
        let d = full_decide(&fixture_sample(), &e, &ex).unwrap();
        assert!((d.composite - 0.65).abs() < 1e-12);
        assert_eq!(d.grade, "B");
        let ex = Fixed::new(vec![(id[0], 1.0), (id[1], 1.0), (id[2], 1.0)]);
        assert_eq!(full_decide(&fixture_sample(), &e, &ex).unwrap().grade, "A");
        // exactly on a cut takes the higher grade
        let ex = Fixed::new(vec![(id[0], 0.8), (id[1], 0.0), (id[2], 0.0)]);
        assert_eq!(full_decide(&fixture_sample(), &e, &ex).unwrap().grade, "B");
    }

    #[test]
    fn soundness_checks() {
        let e = three_layer(0.7);
        let cfg = CascadeConfig::sound(&e, 0.1, 0.9).unwrap();
        assert!(check_threshold_soundness(&e, &cfg).is_sound());
        let mut bad = cfg.clone();
        bad.tau_reject[0] = 0.7;
        let r = check_threshold_soundness(&e, &bad);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].layer, Some(1));
        assert!(CascadeEngine::new(&e, bad.clone()).is_err());
        assert!(CascadeEngine::waived(&e, bad).is_ok());
        let mut low = cfg;
        low.tau_accept = 0.5;
        assert!(!check_threshold_soundness(&e, &low).is_sound());
    }

    #[test]
    fn screening_boundaries() {
        assert_eq!(ScreeningOutcome::from_score(0.10, 0.15, 0.85), ScreeningOutcome::Reject);
        assert_eq!(ScreeningOutcome::from_score(0.90, 0.15, 0.85), ScreeningOutcome::Accept);
        assert_eq!(
            ScreeningOutcome::from_score(0.85, 0.15, 0.85),
            ScreeningOutcome::Continue
        );
        assert_eq!(
            ScreeningOutcome::from_score(0.15, 0.15, 0.85),
            ScreeningOutcome::Continue
        );
    }

    #[test]
    fn screening_uses_flagged_features() {
        let e = fixture_entry();
        let cfg = CascadeConfig::sound(&e, 0.15, 0.85).unwrap();
        assert!(e.phi[cfg.order[0]].screening);
        let s = screen(&fixture_sample(), &e, &cfg, &crate::features::SyntheticExtractor).unwrap();
        // weight 130 g over [0, 200]
        assert!((s.s_early.unwrap() - 0.65).abs() < 1e-12);
        assert_eq!(s.outcome, ScreeningOutcome::Continue);
    }

    #[test]
    fn traces_round_trip_as_json_lines() {
        let e = fixture_entry();
        let cfg = CascadeConfig::sound(&e, 0.15, 0.85).unwrap();
        let engine = CascadeEngine::new(&e, cfg).unwrap();
        let t = engine
            .run(&fixture_sample(), &crate::features::SyntheticExtractor)
            .unwrap();
        let again = engine
            .run(&fixture_sample(), &crate::features::SyntheticExtractor)
            .unwrap();
        assert_eq!(t, again);
        let mut buf = Vec::new();
        write_traces(&mut buf, &[t.clone(), again]).unwrap();
        let back = read_traces(&buf[..]).unwrap();
        assert_eq!(back, vec![t.clone(), t]);
    }
}
