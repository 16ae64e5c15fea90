//! Synthetic produce and the end-to-end workload simulator.
//!
//! Every attribute draws from its own ChaCha8 stream (`seed`, stream id from
//! [`Stream`]) so adding or changing one attribute's distribution leaves the
//! others' draws untouched. Time in the simulator is virtual: each sample
//! costs a fixed base latency plus a per-layer latency.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::cascade::{full_decide, CascadeConfig, CascadeEngine, ExitPoint};
use crate::error::{Error, Result};
use crate::features::{grade_by_rules, Extractor, FruitSample, Observation, SyntheticExtractor};
use crate::lifecycle::{cost_delta, Buffer, Clock, DataRecord, Receipt, Timestamp, VirtualClock};
use crate::metrics::{self, TtiReport, TtiWeights, DEFAULT_FE_CAP};
use crate::rgid::{Plane, RgidEntry, VarietyId};

/// Label counted in the report histogram for samples purged before grading.
pub const EXPIRED: &str = "Expired";

#[derive(Clone, Copy, Debug)]
#[repr(u64)]
enum Stream {
    Weight = 1,
    Diameter = 2,
    Scar = 3,
    Stem = 4,
    Color = 5,
    Firmness = 6,
}

fn rng(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s as u64);
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncNormal {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl TruncNormal {
    fn check(&self, name: &str) -> Result<()> {
        if !(self.sd > 0.0) || !(self.min < self.max) || !(self.min >= 0.0) || !self.mean.is_finite() {
            return Err(Error::Config(format!("{name}: need sd > 0 and 0 <= min < max")));
        }
        Ok(())
    }

    /// Rejection sampling; after 1000 misses the draw is clamped.
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let n = Normal::new(self.mean, self.sd).expect("checked");
        let mut x = 0.0;
        for _ in 0..1000 {
            x = n.sample(rng);
            if x >= self.min && x <= self.max {
                return x;
            }
        }
        x.clamp(self.min, self.max)
    }
}

/// Exactly zero with probability `p_zero`, else exponential with `mean`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroInflatedExp {
    pub p_zero: f64,
    pub mean: f64,
}

impl ZeroInflatedExp {
    fn check(&self, name: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_zero) || !(self.mean > 0.0) {
            return Err(Error::Config(format!("{name}: need p_zero in [0, 1] and mean > 0")));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let x = Exp::new(1.0 / self.mean).expect("checked").sample(rng);
        if u < self.p_zero {
            0.0
        } else {
            x
        }
    }
}

/// Beta(α, β), except exactly 1.0 with probability `p_one`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaDist {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub p_one: f64,
}

impl BetaDist {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            p_one: 0.0,
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta > 0.0) || !(0.0..=1.0).contains(&self.p_one) {
            return Err(Error::Config(format!(
                "{name}: need alpha, beta > 0 and p_one in [0, 1]"
            )));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let x = Beta::new(self.alpha, self.beta).expect("checked").sample(rng);
        if u < self.p_one {
            1.0
        } else {
            x
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarietyProfile {
    pub lambda: VarietyId,
    /// Name of the rule standard used for ground truth.
    pub standard: String,
    pub weight: TruncNormal,
    pub diameter: TruncNormal,
    pub scar_area: ZeroInflatedExp,
    pub stem_integrity: BetaDist,
    pub color_uniformity: BetaDist,
    pub firmness: BetaDist,
}

impl VarietyProfile {
    pub fn korla_pear() -> Self {
        Self {
            lambda: VarietyId::new("xinjiang", "korla-pear"),
            standard: "korla-pear".into(),
            weight: TruncNormal {
                mean: 120.0,
                sd: 22.0,
                min: 50.0,
                max: 220.0,
            },
            diameter: TruncNormal {
                mean: 62.0,
                sd: 6.0,
                min: 40.0,
                max: 90.0,
            },
            scar_area: ZeroInflatedExp {
                p_zero: 0.45,
                mean: 0.5,
            },
            stem_integrity: BetaDist {
                alpha: 8.0,
                beta: 2.0,
                p_one: 0.3,
            },
            color_uniformity: BetaDist::new(5.0, 2.0),
            firmness: BetaDist::new(4.0, 3.0),
        }
    }

    pub fn clementine() -> Self {
        Self {
            lambda: VarietyId::new("zhejiang", "clementine"),
            standard: "clementine".into(),
            weight: TruncNormal {
                mean: 75.0,
                sd: 15.0,
                min: 25.0,
                max: 160.0,
            },
            diameter: TruncNormal {
                mean: 47.0,
                sd: 5.0,
                min: 28.0,
                max: 70.0,
            },
            scar_area: ZeroInflatedExp { p_zero: 0.6, mean: 0.3 },
            stem_integrity: BetaDist {
                alpha: 18.0,
                beta: 1.0,
                p_one: 0.5,
            },
            color_uniformity: BetaDist::new(6.0, 2.0),
            firmness: BetaDist::new(5.0, 3.0),
        }
    }

    pub fn cherry_tomato() -> Self {
        Self {
            lambda: VarietyId::new("hainan", "cherry-tomato"),
            standard: "cherry-tomato".into(),
            weight: TruncNormal {
                mean: 16.0,
                sd: 3.5,
                min: 5.0,
                max: 30.0,
            },
            diameter: TruncNormal {
                mean: 28.0,
                sd: 3.0,
                min: 15.0,
                max: 40.0,
            },
            scar_area: ZeroInflatedExp { p_zero: 0.8, mean: 0.2 },
            stem_integrity: BetaDist {
                alpha: 5.0,
                beta: 2.0,
                p_one: 0.2,
            },
            color_uniformity: BetaDist::new(6.0, 2.0),
            firmness: BetaDist::new(6.0, 2.0),
        }
    }

    pub fn defaults() -> Vec<Self> {
        vec![Self::korla_pear(), Self::clementine(), Self::cherry_tomato()]
    }

    /// Shipped profile for a variety, if any.
    pub fn default_for(lambda: &VarietyId) -> Option<Self> {
        Self::defaults().into_iter().find(|p| &p.lambda == lambda)
    }

    pub fn validate(&self) -> Result<()> {
        self.weight.check("weight")?;
        self.diameter.check("diameter")?;
        self.scar_area.check("scar_area")?;
        self.stem_integrity.check("stem_integrity")?;
        self.color_uniformity.check("color_uniformity")?;
        self.firmness.check("firmness")?;
        crate::features::rules::standard(&self.standard)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample: FruitSample,
    pub rule_grade: String,
}

/// Mirror the physical attributes onto the planes that observe them.
fn plane_observations(s: &FruitSample) -> BTreeMap<Plane, Vec<Observation>> {
    let obs = |name: &str, value: f64| Observation {
        name: name.into(),
        value,
    };
    BTreeMap::from([
        (
            Plane::Top,
            vec![
                obs("stem_integrity", s.stem_integrity),
                obs("color_uniformity", s.color_uniformity),
            ],
        ),
        (
            Plane::Side,
            vec![
                obs("scar_area", s.scar_area_cm2),
                obs("color_uniformity", s.color_uniformity),
            ],
        ),
        (Plane::Bottom, vec![obs("firmness", s.firmness)]),
    ])
}

/// `n` samples labelled by the profile's rule standard. Deterministic in
/// `(profile, n, seed)`.
pub fn generate_samples(profile: &VarietyProfile, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    profile.validate()?;
    let mut rw = rng(seed, Stream::Weight);
    let mut rd = rng(seed, Stream::Diameter);
    let mut rs = rng(seed, Stream::Scar);
    let mut rst = rng(seed, Stream::Stem);
    let mut rc = rng(seed, Stream::Color);
    let mut rf = rng(seed, Stream::Firmness);
    (0..n)
        .map(|i| {
            let mut sample = FruitSample {
                id: format!("{}-{seed}-{i:06}", profile.lambda.variety),
                lambda: profile.lambda.clone(),
                weight_g: profile.weight.sample(&mut rw),
                diameter_mm: profile.diameter.sample(&mut rd),
                scar_area_cm2: profile.scar_area.sample(&mut rs),
                stem_integrity: profile.stem_integrity.sample(&mut rst),
                color_uniformity: profile.color_uniformity.sample(&mut rc),
                firmness: profile.firmness.sample(&mut rf),
                plane_observations: BTreeMap::new(),
                t_collect: Timestamp::default(),
            };
            sample.plane_observations = plane_observations(&sample);
            let rule_grade = grade_by_rules(&sample, &profile.standard)?;
            Ok(LabeledSample { sample, rule_grade })
        })
        .collect()
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSettings {
    pub tau_low: f64,
    pub tau_high: f64,
    /// `false` grades every sample by full evaluation.
    #[serde(default = "yes")]
    pub early_exit: bool,
    /// See [`CascadeConfig::pin_grade`].
    #[serde(default = "yes")]
    pub pin_grade: bool,
}

impl Default for CascadeSettings {
    fn default() -> Self {
        Self {
            tau_low: 0.15,
            tau_high: 0.95,
            early_exit: true,
            pin_grade: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockSettings {
    pub arrival_interval_ms: u64,
    pub base_latency_ms: u64,
    pub per_layer_ms: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
}

impl Default for ClockSettings {
    fn default() -> Self {
        Self {
            arrival_interval_ms: 100,
            base_latency_ms: 20,
            per_layer_ms: 15,
            batch_size: 16,
            buffer_capacity: 256,
        }
    }
}

/// Per-sample processing cost, in the same currency as the market price.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSettings {
    pub base: f64,
    pub per_layer: f64,
}

impl Default for CostSettings {
    fn default() -> Self {
        Self {
            base: 0.02,
            per_layer: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtiSettings {
    #[serde(flatten)]
    pub weights: TtiWeights,
    pub fe_cap: f64,
}

impl Default for TtiSettings {
    fn default() -> Self {
        Self {
            weights: TtiWeights::default(),
            fe_cap: DEFAULT_FE_CAP,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub cascade: CascadeSettings,
    #[serde(default)]
    pub clock: ClockSettings,
    #[serde(default)]
    pub cost: CostSettings,
    #[serde(default)]
    pub tti: TtiSettings,
}

/// A scenario file: which variety to run, where its dictionary lives and
/// the pipeline parameters. `profile` overrides the shipped profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub lambda: VarietyId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    #[serde(flatten)]
    pub params: PipelineParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<VarietyProfile>,
}

impl ScenarioConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn profile(&self) -> Result<VarietyProfile> {
        match &self.profile {
            Some(p) => Ok(p.clone()),
            None => VarietyProfile::default_for(&self.lambda)
                .ok_or_else(|| Error::Config(format!("no default profile for {}; add a [profile] table", self.lambda))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurgeStats {
    pub sweeps: u64,
    pub purged: u64,
    pub backpressure_events: u64,
    pub max_fraction_invalid: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub lambda: VarietyId,
    pub seed: u64,
    pub n_samples: usize,
    /// Labels assigned, plus `Expired` for samples purged before grading.
    pub histogram: BTreeMap<String, u64>,
    pub processed: u64,
    pub layer_count: usize,
    pub mean_layers_evaluated: f64,
    pub early_exits: u64,
    pub screening_exits: u64,
    /// Cascade decisions whose accept/reject differs from full evaluation.
    pub oracle_mismatches: u64,
    /// Cascade decisions whose grade label differs from full evaluation.
    pub grade_mismatches: u64,
    /// Screening exits whose label differs from full evaluation. Screening
    /// is a gate ahead of the cascade, so these are expected.
    pub screening_divergent: u64,
    /// Share of graded samples whose label equals the rule standard's.
    pub rule_agreement: f64,
    pub elapsed_ms: u64,
    /// Samples per minute of virtual time.
    pub at_per_min: f64,
    pub tc_per_sample: f64,
    pub purge: PurgeStats,
    pub delta_c: f64,
    pub tti: TtiReport,
}

impl SimulationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sample_id: String,
    pub t_collect_ms: u64,
    pub t_done_ms: u64,
    pub rule_grade: String,
    pub label: String,
    pub exit: String,
    pub layers_evaluated: usize,
    pub score: f64,
    pub oracle_accepted: Option<bool>,
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Encoding(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

struct Graded {
    label: String,
    exit: String,
    layers: usize,
    score: f64,
    early: bool,
    screening: bool,
    oracle: Option<bool>,
    mismatch: bool,
    grade_mismatch: bool,
    divergent: bool,
}

fn grade_one(
    engine: &CascadeEngine<'_>,
    entry: &RgidEntry,
    sample: &FruitSample,
    early_exit: bool,
    extractor: &dyn Extractor,
) -> Result<Graded> {
    if !early_exit {
        let full = full_decide(sample, entry, extractor)?;
        return Ok(Graded {
            label: full.grade,
            exit: "full".into(),
            layers: entry.phi.len(),
            score: full.composite,
            early: false,
            screening: false,
            oracle: Some(full.accepted),
            mismatch: false,
            grade_mismatch: false,
            divergent: false,
        });
    }
    let trace = engine.run(sample, extractor)?;
    let (exit, screening) = match trace.exit {
        ExitPoint::Screening => ("screening".to_string(), true),
        ExitPoint::Layer(l) => (format!("layer {l}"), false),
        ExitPoint::Full => ("full".to_string(), false),
    };
    // screening exits are a separate stage; only cascade decisions are
    // held to the full-evaluation oracle
    let full = full_decide(sample, entry, extractor)?;
    let label = trace.decision.label().to_string();
    let oracle = (!screening).then_some(full.accepted);
    Ok(Graded {
        grade_mismatch: !screening && full.grade != label,
        divergent: screening && full.grade != label,
        label,
        mismatch: oracle.is_some_and(|a| a != trace.decision.accepted()),
        score: if screening {
            trace.s_early.unwrap_or(0.0)
        } else {
            trace.final_score()
        },
        early: trace.early_exit(entry.phi.len()),
        layers: trace.layers_evaluated,
        exit,
        screening,
        oracle,
    })
}

fn expire(histogram: &mut BTreeMap<String, u64>, n: usize) {
    if n > 0 {
        *histogram.entry(EXPIRED.to_string()).or_default() += n as u64;
    }
}

/// Drive arrivals through the buffer and the cascade on a virtual clock.
pub fn run_pipeline(
    entry: &RgidEntry,
    profile: &VarietyProfile,
    params: &PipelineParams,
) -> Result<(SimulationReport, Vec<TraceRow>)> {
    if profile.lambda != entry.lambda {
        return Err(Error::Config(format!(
            "profile is for {}, dictionary entry for {}",
            profile.lambda, entry.lambda
        )));
    }
    let ck = &params.clock;
    if ck.arrival_interval_ms == 0 && ck.base_latency_ms == 0 && ck.per_layer_ms == 0 {
        return Err(Error::Config("virtual clock never advances".into()));
    }
    if ck.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if !(params.cost.base >= 0.0) || !(params.cost.per_layer >= 0.0) {
        return Err(Error::Config("costs must be nonnegative".into()));
    }
    let samples = generate_samples(profile, params.n, params.seed)?;
    let mut config = CascadeConfig::sound(entry, params.cascade.tau_low, params.cascade.tau_high)?;
    config.pin_grade = params.cascade.pin_grade;
    let engine = CascadeEngine::new(entry, config)?;
    let extractor = SyntheticExtractor;
    let buffer: Buffer<usize> = Buffer::new(ck.buffer_capacity)?;
    let clock = VirtualClock::new(Timestamp(0));
    let ttl = entry.decay.ttl();
    let arrival = |i: usize| Timestamp(i as u64 * ck.arrival_interval_ms);

    let mut histogram: BTreeMap<String, u64> = BTreeMap::new();
    let mut rows = Vec::with_capacity(samples.len());
    let mut purge = PurgeStats {
        sweeps: 0,
        purged: 0,
        backpressure_events: 0,
        max_fraction_invalid: 0.0,
    };
    let (mut processed, mut layers_total, mut early, mut screening, mut mismatches, mut agree) =
        (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    let mut grade_mismatches = 0u64;
    let mut screening_divergent = 0u64;
    let mut next = 0usize;

    loop {
        let now = clock.now();
        while next < samples.len() && arrival(next) <= now {
            let rec = DataRecord {
                id: samples[next].sample.id.clone(),
                payload: next,
                lambda: entry.lambda.clone(),
                t_collect: arrival(next),
                ttl,
            };
            match buffer.ingest(rec) {
                Receipt::Accepted => next += 1,
                Receipt::Backpressure(_) => {
                    purge.backpressure_events += 1;
                    break;
                }
            }
        }
        let report = buffer.sweep(now)?;
        purge.sweeps += 1;
        purge.purged += report.purged_ids.len() as u64;
        purge.max_fraction_invalid = purge.max_fraction_invalid.max(report.fraction_invalid);
        expire(&mut histogram, report.purged_ids.len());

        let batch = buffer.drain(ck.batch_size, now);
        purge.purged += batch.purged_ids.len() as u64;
        expire(&mut histogram, batch.purged_ids.len());
        if batch.records.is_empty() {
            if next >= samples.len() {
                if buffer.is_empty() {
                    break;
                }
                continue;
            }
            clock.advance_to(arrival(next));
            continue;
        }
        for rec in batch.records {
            let labeled = &samples[rec.payload];
            let mut sample = labeled.sample.clone();
            sample.t_collect = rec.t_collect;
            let g = grade_one(&engine, entry, &sample, params.cascade.early_exit, &extractor)?;
            let done = clock.advance(Duration::from_millis(
                ck.base_latency_ms + ck.per_layer_ms * g.layers as u64,
            ));
            processed += 1;
            layers_total += g.layers as u64;
            early += g.early as u64;
            screening += g.screening as u64;
            mismatches += g.mismatch as u64;
            grade_mismatches += g.grade_mismatch as u64;
            screening_divergent += g.divergent as u64;
            agree += (g.label == labeled.rule_grade) as u64;
            *histogram.entry(g.label.clone()).or_default() += 1;
            rows.push(TraceRow {
                sample_id: sample.id.clone(),
                t_collect_ms: rec.t_collect.0,
                t_done_ms: done.0,
                rule_grade: labeled.rule_grade.clone(),
                label: g.label,
                exit: g.exit,
                layers_evaluated: g.layers,
                score: g.score,
                oracle_accepted: g.oracle,
            });
        }
    }

    let elapsed_ms = clock.now().0;
    let mean_layers = if processed > 0 {
        layers_total as f64 / processed as f64
    } else {
        0.0
    };
    let at_per_min = if elapsed_ms > 0 {
        processed as f64 * 60_000.0 / elapsed_ms as f64
    } else {
        0.0
    };
    let tc = params.cost.base + params.cost.per_layer * mean_layers;
    let need = metrics::trust_factors(entry, &entry.trust.need)?;
    let provided = metrics::trust_factors(entry, &entry.trust.provided)?;
    let tti = metrics::tti_from_measurements(
        metrics::sum_provided(&provided),
        metrics::sum_need(&need),
        at_per_min,
        tc,
        entry,
        params.tti.weights,
        params.tti.fe_cap,
    )?;
    let n = samples.len() as u64;
    debug_assert_eq!(histogram.values().sum::<u64>(), n);
    let report = SimulationReport {
        lambda: entry.lambda.clone(),
        seed: params.seed,
        n_samples: samples.len(),
        histogram,
        processed,
        layer_count: entry.phi.len(),
        mean_layers_evaluated: mean_layers,
        early_exits: early,
        screening_exits: screening,
        oracle_mismatches: mismatches,
        grade_mismatches,
        screening_divergent,
        rule_agreement: if processed > 0 {
            agree as f64 / processed as f64
        } else {
            0.0
        },
        elapsed_ms,
        at_per_min,
        tc_per_sample: tc,
        delta_c: cost_delta(purge.purged, n, entry.econ.eta_cost_per_sample)?,
        purge,
        tti,
    };
    Ok((report, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let p = VarietyProfile::korla_pear();
        let a = generate_samples(&p, 200, 7).unwrap();
        let b = generate_samples(&p, 200, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_samples(&p, 200, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn streams_are_independent() {
        let p = VarietyProfile::korla_pear();
        let mut q = p.clone();
        q.firmness = BetaDist::new(2.0, 2.0);
        let a = generate_samples(&p, 50, 3).unwrap();
        let b = generate_samples(&q, 50, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.sample.weight_g, y.sample.weight_g);
            assert_eq!(x.sample.scar_area_cm2, y.sample.scar_area_cm2);
            assert_ne!(x.sample.firmness, y.sample.firmness);
        }
    }

    #[test]
    fn samples_satisfy_invariants() {
        for p in VarietyProfile::defaults() {
            for s in generate_samples(&p, 500, 11).unwrap() {
                s.sample.validate().unwrap();
                assert!(s.sample.weight_g >= p.weight.min && s.sample.weight_g <= p.weight.max);
            }
        }
    }

    #[test]
    fn every_grade_has_support() {
        for p in VarietyProfile::defaults() {
            let std = crate::features::rules::standard(&p.standard).unwrap();
            let samples = generate_samples(&p, 1000, 1).unwrap();
            for label in std.labels() {
                assert!(
                    samples.iter().any(|s| s.rule_grade == label),
                    "{} has no {label}",
                    p.standard
                );
            }
        }
    }

    #[test]
    fn scar_free_profile_has_no_scar_failures() {
        let mut p = VarietyProfile::korla_pear();
        p.scar_area.p_zero = 1.0;
        for s in generate_samples(&p, 2000, 5).unwrap() {
            assert_eq!(s.sample.scar_area_cm2, 0.0);
            // with no scar, the grade is fixed by weight alone
            let w = s.sample.weight_g;
            let want = if (120.0..=160.0).contains(&w) {
                "A"
            } else if (100.0..120.0).contains(&w) {
                "B"
            } else if (80.0..100.0).contains(&w) {
                "C"
            } else {
                "Reject"
            };
            assert_eq!(s.rule_grade, want);
        }
    }

    #[test]
    fn invalid_profile_rejected() {
        let mut p = VarietyProfile::korla_pear();
        p.weight.sd = 0.0;
        assert!(matches!(generate_samples(&p, 1, 0), Err(Error::Config(_))));
        assert!(generate_samples(&VarietyProfile::korla_pear(), 0, 0).is_err());
    }
}
