//! Regional graded indicator dictionary.
//!
//! Every variety is keyed by a [`VarietyId`] and resolves to an [`RgidEntry`]
//! holding its feature set, feature weights, grade thresholds, update triggers,
//! economics, decay parameters and trust weights. Entries are stored as
//! three-level overlays (`base`, one category, the variety itself) and merged
//! field-wise with the most specific layer winning.
//!
//! The on-disk form is TOML; see `docs/dictionary-schema.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, Extractor, FruitSample, REJECT};

/// Excess-supply gain used when no layer sets `econ.gamma`.
pub const DEFAULT_GAMMA: f64 = 0.5;
/// Data shelf life used when no layer sets `decay.ttl_hours`.
pub const DEFAULT_TTL_HOURS: f64 = 72.0;
/// Spoilage-rate threshold (samples/minute) used when absent.
pub const DEFAULT_SPOILAGE_RATE: f64 = 100.0;
/// Maximum acceptable cost ratio used when absent.
pub const DEFAULT_FC_MAX: f64 = 0.3;

/// Grid step for top-layer weight adaptation.
pub const ADAPT_GRID_STEP: f64 = 0.05;
/// Upper bound on the share of scalar parameters adaptation may change.
pub const ADAPT_MAX_CHANGED_RATIO: f64 = 0.05;

// ---------------------------------------------------------------------------
// Identifiers and entry types
// ---------------------------------------------------------------------------

/// Origin-variety identifier, written `origin/variety`. Matching is exact
/// and case-sensitive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VarietyId {
    pub origin: String,
    pub variety: String,
}

impl VarietyId {
    pub fn new(origin: impl Into<String>, variety: impl Into<String>) -> Self {
        Self {
            origin: origin.into(),
            variety: variety.into(),
        }
    }
}

impl fmt::Display for VarietyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.origin, self.variety)
    }
}

impl TryFrom<String> for VarietyId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<VarietyId> for String {
    fn from(v: VarietyId) -> String {
        v.to_string()
    }
}

impl FromStr for VarietyId {
    type Err = Error;

    /// Parses `origin/variety`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('/') {
            Some((o, v)) if !o.is_empty() && !v.is_empty() && !v.contains('/') => Ok(VarietyId::new(o, v)),
            _ => Err(Error::Parse(format!(
                "variety id `{s}` must have the form origin/variety"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    General,
    Top,
    Side,
    Bottom,
}

impl Plane {
    pub const SURFACES: [Plane; 3] = [Plane::Top, Plane::Side, Plane::Bottom];
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Plane::General => "general",
            Plane::Top => "top",
            Plane::Side => "side",
            Plane::Bottom => "bottom",
        };
        f.write_str(s)
    }
}

fn default_true() -> bool {
    true
}

/// One graded feature. The physical value read from the sample is scaled
/// onto `[0, 1]` against `[f_min, f_max]`; `higher_is_better = false` flips
/// the scaled value so that 1.0 is always the best quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub id: String,
    pub plane: Plane,
    /// Attribute or plane observation name read by the extractor; defaults to `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default)]
    pub f_min: f64,
    pub f_max: f64,
    pub unit: String,
    #[serde(default)]
    pub screening: bool,
    #[serde(default = "default_true")]
    pub higher_is_better: bool,
}

impl FeatureSpec {
    pub fn source(&self) -> &str {
        self.source.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeCut {
    pub score: f64,
    pub grade: String,
}

/// Score-to-grade mapping. `cuts` are listed in increasing score order, so
/// the last cut names the top grade. A composite score is accepted iff it
/// reaches `tau_final`; accepted scores take the grade of the highest cut
/// at or below them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeThresholds {
    pub cuts: Vec<GradeCut>,
    pub tau_final: f64,
}

impl GradeThresholds {
    /// Grade label for a score, cut inclusive upward. `None` below every cut.
    pub fn grade_for(&self, score: f64) -> Option<&str> {
        self.cuts
            .iter()
            .rev()
            .find(|c| score >= c.score)
            .map(|c| c.grade.as_str())
    }

    pub fn accepts(&self, score: f64) -> bool {
        score >= self.tau_final
    }

    /// Final label: the mapped grade when accepted, otherwise [`REJECT`].
    pub fn classify(&self, score: f64) -> &str {
        if self.accepts(score) {
            self.grade_for(score).unwrap_or(REJECT)
        } else {
            REJECT
        }
    }

    /// Grade labels from lowest to highest.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.cuts.iter().map(|c| c.grade.as_str())
    }

    pub fn index_of(&self, grade: &str) -> Option<usize> {
        self.cuts.iter().position(|c| c.grade == grade)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    /// Dictionary level: a feature's share of positive-feedback correlation
    /// exceeds its weight by `threshold`.
    ImportanceUnderestimated,
    /// Model level: share of target variance left unexplained by the current
    /// features exceeds `threshold`.
    UnexplainedVariance,
    /// Rule level: a grade's return rate exceeds the others' mean by a factor
    /// of `threshold`; the grade's cut is raised by `step`.
    ReturnRateDeviation,
}

impl TriggerKind {
    pub fn level(self) -> UpdateLevel {
        match self {
            TriggerKind::ImportanceUnderestimated => UpdateLevel::Dictionary,
            TriggerKind::UnexplainedVariance => UpdateLevel::Model,
            TriggerKind::ReturnRateDeviation => UpdateLevel::Rule,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerRule {
    pub id: String,
    pub kind: TriggerKind,
    pub threshold: f64,
    #[serde(default)]
    pub step: f64,
    #[serde(default)]
    pub min_events: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Econ {
    pub fc_max: f64,
    pub p_market_per_sample: f64,
    pub eta_cost_per_sample: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub ttl_hours: f64,
    pub spoilage_rate_per_min: f64,
}

impl Decay {
    pub fn ttl(&self) -> Duration {
        Duration::from_secs_f64(self.ttl_hours * 3600.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustIndicator {
    pub layer: String,
    pub importance: f64,
}

/// Trust-pyramid parameters: a weight per layer and an importance per
/// indicator. `need` / `provided` name the indicators summed into the
/// required and provided coverage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trust {
    pub layer_weights: BTreeMap<String, f64>,
    pub indicators: BTreeMap<String, TrustIndicator>,
    pub need: Vec<String>,
    pub provided: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgidEntry {
    pub lambda: VarietyId,
    pub category: String,
    pub phi: Vec<FeatureSpec>,
    pub omega: Vec<f64>,
    pub thresholds: GradeThresholds,
    pub update_rules: Vec<TriggerRule>,
    pub econ: Econ,
    pub decay: Decay,
    pub trust: Trust,
}

impl RgidEntry {
    pub fn feature_index(&self, id: &str) -> Option<usize> {
        self.phi.iter().position(|f| f.id == id)
    }

    /// Numeric leaves of the entry keyed by field path. Booleans, strings and
    /// the identifier are not parameters.
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for f in &self.phi {
            out.insert(format!("phi.{}.f_min", f.id), f.f_min);
            out.insert(format!("phi.{}.f_max", f.id), f.f_max);
        }
        for (k, w) in self.omega.iter().enumerate() {
            out.insert(format!("omega[{k}]"), *w);
        }
        for (k, c) in self.thresholds.cuts.iter().enumerate() {
            out.insert(format!("thresholds.cuts[{k}]"), c.score);
        }
        out.insert("thresholds.tau_final".into(), self.thresholds.tau_final);
        for r in &self.update_rules {
            out.insert(format!("update_rules.{}.threshold", r.id), r.threshold);
            out.insert(format!("update_rules.{}.step", r.id), r.step);
            out.insert(format!("update_rules.{}.min_events", r.id), r.min_events as f64);
        }
        out.insert("econ.fc_max".into(), self.econ.fc_max);
        out.insert("econ.p_market_per_sample".into(), self.econ.p_market_per_sample);
        out.insert("econ.eta_cost_per_sample".into(), self.econ.eta_cost_per_sample);
        out.insert("econ.gamma".into(), self.econ.gamma);
        out.insert("decay.ttl_hours".into(), self.decay.ttl_hours);
        out.insert("decay.spoilage_rate_per_min".into(), self.decay.spoilage_rate_per_min);
        for (k, s) in &self.trust.layer_weights {
            out.insert(format!("trust.layer_weights.{k}"), *s);
        }
        for (k, ind) in &self.trust.indicators {
            out.insert(format!("trust.indicators.{k}"), ind.importance);
        }
        out
    }

    pub fn scalar_count(&self) -> usize {
        self.scalars().len()
    }

    /// Field paths whose scalar value differs from `other` (or exists on
    /// only one side).
    pub fn changed_scalars(&self, other: &RgidEntry) -> Vec<String> {
        let a = self.scalars();
        let b = other.scalars();
        let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
        keys.into_iter()
            .filter(|k| match (a.get(*k), b.get(*k)) {
                (Some(x), Some(y)) => x.to_bits() != y.to_bits(),
                _ => true,
            })
            .cloned()
            .collect()
    }

    fn normalize_omega(&mut self) {
        let sum: f64 = self.omega.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            for w in &mut self.omega {
                *w /= sum;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Overlays and the dictionary document
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconOverlay {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_market_per_sample: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_cost_per_sample: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayOverlay {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl_hours: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spoilage_rate_per_min: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustOverlay {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_weights: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicators: Option<BTreeMap<String, TrustIndicator>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub need: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provided: Option<Vec<String>>,
}

/// A partial parameter set. Any field may be absent; [`Overlay::merge`]
/// lays a more specific overlay over a more general one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overlay {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<FeatureSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<GradeThresholds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_rules: Option<Vec<TriggerRule>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub econ: Option<EconOverlay>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayOverlay>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust: Option<TrustOverlay>,
}

fn merge_opt<T: Clone>(general: &Option<T>, specific: &Option<T>) -> Option<T> {
    specific.clone().or_else(|| general.clone())
}

fn merge_map<V: Clone>(
    general: &Option<BTreeMap<String, V>>,
    specific: &Option<BTreeMap<String, V>>,
) -> Option<BTreeMap<String, V>> {
    match (general, specific) {
        (None, None) => None,
        (Some(g), None) => Some(g.clone()),
        (None, Some(s)) => Some(s.clone()),
        (Some(g), Some(s)) => {
            let mut m = g.clone();
            m.extend(s.iter().map(|(k, v)| (k.clone(), v.clone())));
            Some(m)
        }
    }
}

fn merge_nested<T: Clone>(general: &Option<T>, specific: &Option<T>, f: impl Fn(&T, &T) -> T) -> Option<T> {
    match (general, specific) {
        (Some(g), Some(s)) => Some(f(g, s)),
        _ => merge_opt(general, specific),
    }
}

impl Overlay {
    /// `self ⊕ specific`: field-wise, the more specific value wins. Maps merge
    /// key-wise. The operation is associative.
    pub fn merge(&self, specific: &Overlay) -> Overlay {
        Overlay {
            phi: merge_opt(&self.phi, &specific.phi),
            omega: merge_opt(&self.omega, &specific.omega),
            thresholds: merge_opt(&self.thresholds, &specific.thresholds),
            update_rules: merge_opt(&self.update_rules, &specific.update_rules),
            econ: merge_nested(&self.econ, &specific.econ, |g, s| EconOverlay {
                fc_max: merge_opt(&g.fc_max, &s.fc_max),
                p_market_per_sample: merge_opt(&g.p_market_per_sample, &s.p_market_per_sample),
                eta_cost_per_sample: merge_opt(&g.eta_cost_per_sample, &s.eta_cost_per_sample),
                gamma: merge_opt(&g.gamma, &s.gamma),
            }),
            decay: merge_nested(&self.decay, &specific.decay, |g, s| DecayOverlay {
                ttl_hours: merge_opt(&g.ttl_hours, &s.ttl_hours),
                spoilage_rate_per_min: merge_opt(&g.spoilage_rate_per_min, &s.spoilage_rate_per_min),
            }),
            trust: merge_nested(&self.trust, &specific.trust, |g, s| TrustOverlay {
                layer_weights: merge_map(&g.layer_weights, &s.layer_weights),
                indicators: merge_map(&g.indicators, &s.indicators),
                need: merge_opt(&g.need, &s.need),
                provided: merge_opt(&g.provided, &s.provided),
            }),
        }
    }

    /// Parameters every dictionary inherits unless its own base overrides them.
    pub fn builtin_defaults() -> Overlay {
        Overlay {
            update_rules: Some(vec![
                TriggerRule {
                    id: "importance-underestimated".into(),
                    kind: TriggerKind::ImportanceUnderestimated,
                    threshold: 0.2,
                    step: 0.0,
                    min_events: 10,
                },
                TriggerRule {
                    id: "new-defect-patterns".into(),
                    kind: TriggerKind::UnexplainedVariance,
                    threshold: 0.5,
                    step: 0.0,
                    min_events: 10,
                },
                TriggerRule {
                    id: "market-acceptance-deviation".into(),
                    kind: TriggerKind::ReturnRateDeviation,
                    threshold: 3.0,
                    step: 0.05,
                    min_events: 10,
                },
            ]),
            econ: Some(EconOverlay {
                fc_max: Some(DEFAULT_FC_MAX),
                gamma: Some(DEFAULT_GAMMA),
                ..Default::default()
            }),
            decay: Some(DecayOverlay {
                ttl_hours: Some(DEFAULT_TTL_HOURS),
                spoilage_rate_per_min: Some(DEFAULT_SPOILAGE_RATE),
            }),
            ..Default::default()
        }
    }

    fn resolve(&self, lambda: &VarietyId, category: &str) -> Result<RgidEntry> {
        fn req<T: Clone>(v: &Option<T>, field: &str, lambda: &VarietyId) -> Result<T> {
            v.clone()
                .ok_or_else(|| Error::Schema(format!("missing required field `{field}` for {lambda}")))
        }
        let econ = self.econ.clone().unwrap_or_default();
        let decay = self.decay.clone().unwrap_or_default();
        let trust = self.trust.clone().unwrap_or_default();
        let mut entry = RgidEntry {
            lambda: lambda.clone(),
            category: category.to_string(),
            phi: req(&self.phi, "phi", lambda)?,
            omega: req(&self.omega, "omega", lambda)?,
            thresholds: req(&self.thresholds, "thresholds", lambda)?,
            update_rules: self.update_rules.clone().unwrap_or_default(),
            econ: Econ {
                fc_max: req(&econ.fc_max, "econ.fc_max", lambda)?,
                p_market_per_sample: req(&econ.p_market_per_sample, "econ.p_market_per_sample", lambda)?,
                eta_cost_per_sample: req(&econ.eta_cost_per_sample, "econ.eta_cost_per_sample", lambda)?,
                gamma: req(&econ.gamma, "econ.gamma", lambda)?,
            },
            decay: Decay {
                ttl_hours: req(&decay.ttl_hours, "decay.ttl_hours", lambda)?,
                spoilage_rate_per_min: req(&decay.spoilage_rate_per_min, "decay.spoilage_rate_per_min", lambda)?,
            },
            trust: Trust {
                layer_weights: trust.layer_weights.unwrap_or_default(),
                indicators: trust.indicators.unwrap_or_default(),
                need: trust.need.unwrap_or_default(),
                provided: trust.provided.unwrap_or_default(),
            },
        };
        entry.normalize_omega();
        Ok(entry)
    }
}

/// One `[[varieties]]` record: identifier, owning category and overlay.
#[derive(Clone, Debug, PartialEq)]
pub struct VarietyRecord {
    pub lambda: VarietyId,
    pub category: String,
    pub overlay: Overlay,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryDocument {
    #[serde(default)]
    base: Overlay,
    #[serde(default)]
    categories: BTreeMap<String, Overlay>,
    #[serde(default, rename = "varieties")]
    varieties: Vec<toml::Table>,
}

fn variety_from_table(mut t: toml::Table) -> Result<VarietyRecord> {
    let mut take = |key: &str| -> Result<String> {
        match t.remove(key) {
            Some(toml::Value::String(s)) => Ok(s),
            Some(_) => Err(Error::Schema(format!("varieties.{key} must be a string"))),
            None => Err(Error::Schema(format!("missing required field `varieties.{key}`"))),
        }
    };
    let origin = take("origin")?;
    let variety = take("variety")?;
    let category = take("category")?;
    let lambda = VarietyId::new(origin, variety);
    let overlay =
        Overlay::deserialize(toml::Value::Table(t)).map_err(|e| Error::Schema(format!("variety {lambda}: {e}")))?;
    Ok(VarietyRecord {
        lambda,
        category,
        overlay,
    })
}

fn variety_to_table(v: &VarietyRecord) -> Result<toml::Table> {
    let mut t = toml::Table::new();
    t.insert("origin".into(), v.lambda.origin.clone().into());
    t.insert("variety".into(), v.lambda.variety.clone().into());
    t.insert("category".into(), v.category.clone().into());
    let body = toml::Table::try_from(&v.overlay).map_err(|e| Error::Parse(e.to_string()))?;
    t.extend(body);
    Ok(t)
}

// ---------------------------------------------------------------------------
// Repository
// ---------------------------------------------------------------------------

/// Resolved dictionary. Immutable after load.
#[derive(Clone, Debug, PartialEq)]
pub struct Repository {
    base: Overlay,
    categories: BTreeMap<String, Overlay>,
    varieties: BTreeMap<VarietyId, VarietyRecord>,
    resolved: BTreeMap<VarietyId, RgidEntry>,
}

/// Parse and resolve a dictionary document.
pub fn load_dictionary(source: &str) -> Result<Repository> {
    let table: toml::Table = source
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    if table.is_empty() {
        return Err(Error::Schema("no varieties".into()));
    }
    let doc = DictionaryDocument::deserialize(toml::Value::Table(table)).map_err(|e| Error::Schema(e.to_string()))?;
    if doc.varieties.is_empty() {
        return Err(Error::Schema("no varieties".into()));
    }
    let mut varieties = BTreeMap::new();
    for t in doc.varieties {
        let rec = variety_from_table(t)?;
        if varieties.contains_key(&rec.lambda) {
            return Err(Error::Schema(format!("duplicate variety {}", rec.lambda)));
        }
        varieties.insert(rec.lambda.clone(), rec);
    }
    Repository::new(doc.base, doc.categories, varieties.into_values().collect())
}

impl Repository {
    pub fn new(base: Overlay, categories: BTreeMap<String, Overlay>, varieties: Vec<VarietyRecord>) -> Result<Self> {
        let effective_base = Overlay::builtin_defaults().merge(&base);
        let mut resolved = BTreeMap::new();
        let mut by_id = BTreeMap::new();
        for rec in varieties {
            let cat = categories.get(&rec.category).ok_or_else(|| {
                Error::Schema(format!(
                    "variety {} references unknown category `{}`",
                    rec.lambda, rec.category
                ))
            })?;
            let entry = effective_base
                .merge(cat)
                .merge(&rec.overlay)
                .resolve(&rec.lambda, &rec.category)?;
            let report = validate_entry(&entry);
            if !report.is_empty() {
                return Err(Error::Invariant(format!("{}: {}", rec.lambda, report)));
            }
            resolved.insert(rec.lambda.clone(), entry);
            by_id.insert(rec.lambda.clone(), rec);
        }
        Ok(Self {
            base,
            categories,
            varieties: by_id,
            resolved,
        })
    }

    /// Merged entry for `lambda`.
    pub fn lookup(&self, lambda: &VarietyId) -> Result<&RgidEntry> {
        self.resolved.get(lambda).ok_or_else(|| Error::NotFound(lambda.clone()))
    }

    pub fn varieties(&self) -> impl Iterator<Item = &VarietyId> {
        self.resolved.keys()
    }

    pub fn entries(&self) -> impl Iterator<Item = &RgidEntry> {
        self.resolved.values()
    }

    pub fn base(&self) -> &Overlay {
        &self.base
    }

    pub fn category(&self, name: &str) -> Option<&Overlay> {
        self.categories.get(name)
    }

    pub fn variety_record(&self, lambda: &VarietyId) -> Option<&VarietyRecord> {
        self.varieties.get(lambda)
    }

    /// Canonical TOML rendering of the source overlays (not the resolved
    /// entries). Categories and varieties are emitted in sorted order, so
    /// reloading and re-rendering is byte-stable.
    pub fn to_document(&self) -> Result<String> {
        let doc = DictionaryDocument {
            base: self.base.clone(),
            categories: self.categories.clone(),
            varieties: self.varieties.values().map(variety_to_table).collect::<Result<_>>()?,
        };
        toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub path: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, message: &str) -> bool {
        self.findings.iter().any(|f| f.message == message)
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, finding) in self.findings.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", finding.path, finding.message)?;
        }
        Ok(())
    }
}

pub fn validate_entry(entry: &RgidEntry) -> ValidationReport {
    let mut r = ValidationReport::default();

    if entry.lambda.origin.is_empty() || entry.lambda.variety.is_empty() {
        r.push("lambda", "variety id must be non-empty");
    }

    if entry.phi.is_empty() {
        r.push("phi", "feature set must be non-empty");
    }
    let mut seen = BTreeSet::new();
    for (k, f) in entry.phi.iter().enumerate() {
        if !seen.insert(f.id.as_str()) {
            r.push(format!("phi[{k}].id"), format!("duplicate feature id `{}`", f.id));
        }
        if !(f.f_max > 0.0) || !f.f_max.is_finite() {
            r.push(format!("phi[{k}].f_max"), "f_max must be positive");
        }
        if !f.f_min.is_finite() || f.f_min >= f.f_max {
            r.push(format!("phi[{k}].f_min"), "f_min must be below f_max");
        }
    }

    if entry.omega.len() != entry.phi.len() {
        r.push("omega", "omega/phi length mismatch");
    }
    for (k, w) in entry.omega.iter().enumerate() {
        if !(*w >= 0.0) || !w.is_finite() {
            r.push(format!("omega[{k}]"), "weight must be nonnegative");
        }
    }
    let sum: f64 = entry.omega.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        r.push("omega", "weights must sum to 1");
    }

    let th = &entry.thresholds;
    if th.cuts.is_empty() {
        r.push("thresholds.cuts", "at least one grade label required");
    }
    for (k, c) in th.cuts.iter().enumerate() {
        if !(0.0..=1.0).contains(&c.score) {
            r.push(format!("thresholds.cuts[{k}]"), "cut must lie in [0, 1]");
        }
        if c.grade.is_empty() || c.grade == REJECT {
            r.push(format!("thresholds.cuts[{k}].grade"), "invalid grade label");
        }
        if k > 0 && !(c.score > th.cuts[k - 1].score) {
            r.push(format!("thresholds.cuts[{k}]"), "cuts must be strictly increasing");
        }
    }
    let labels: BTreeSet<&str> = th.labels().collect();
    if labels.len() != th.cuts.len() {
        r.push("thresholds.cuts", "grade labels must be unique");
    }
    if !(0.0..=1.0).contains(&th.tau_final) {
        r.push("thresholds.tau_final", "tau_final must lie in [0, 1]");
    } else if let Some(lowest) = th.cuts.first() {
        if th.tau_final < lowest.score {
            r.push("thresholds.tau_final", "tau_final below lowest cut");
        }
    }

    for (k, rule) in entry.update_rules.iter().enumerate() {
        if !(rule.threshold >= 0.0) || !rule.threshold.is_finite() {
            r.push(format!("update_rules[{k}].threshold"), "threshold must be nonnegative");
        }
        if !(rule.step >= 0.0) || !rule.step.is_finite() {
            r.push(format!("update_rules[{k}].step"), "step must be nonnegative");
        }
    }

    let e = &entry.econ;
    if !(e.fc_max > 0.0 && e.fc_max <= 1.0) {
        r.push("econ.fc_max", "fc_max must lie in (0, 1]");
    }
    if !(e.p_market_per_sample > 0.0) || !e.p_market_per_sample.is_finite() {
        r.push("econ.p_market_per_sample", "market price must be positive");
    }
    if !(e.eta_cost_per_sample >= 0.0) || !e.eta_cost_per_sample.is_finite() {
        r.push("econ.eta_cost_per_sample", "eta_cost must be nonnegative");
    }
    if !(e.gamma >= 0.0) || !e.gamma.is_finite() {
        r.push("econ.gamma", "gamma must be nonnegative");
    }

    if !(entry.decay.ttl_hours > 0.0) || !entry.decay.ttl_hours.is_finite() {
        r.push("decay.ttl_hours", "ttl must be positive");
    }
    if !(entry.decay.spoilage_rate_per_min > 0.0) || !entry.decay.spoilage_rate_per_min.is_finite() {
        r.push("decay.spoilage_rate_per_min", "spoilage rate must be positive");
    }

    let t = &entry.trust;
    for (layer, s) in &t.layer_weights {
        if !(*s > 0.0) || !s.is_finite() {
            r.push(format!("trust.layer_weights.{layer}"), "layer weight must be positive");
        }
    }
    for (id, ind) in &t.indicators {
        if !t.layer_weights.contains_key(&ind.layer) {
            r.push(
                format!("trust.indicators.{id}.layer"),
                format!("unknown trust layer `{}`", ind.layer),
            );
        }
        if !(ind.importance >= 0.0) || !ind.importance.is_finite() {
            r.push(
                format!("trust.indicators.{id}.importance"),
                "importance must be nonnegative",
            );
        }
    }
    for (list, ids) in [("need", &t.need), ("provided", &t.provided)] {
        for id in ids {
            if !t.indicators.contains_key(id) {
                r.push(format!("trust.{list}"), format!("unknown trust indicator `{id}`"));
            }
        }
    }
    r
}

// ---------------------------------------------------------------------------
// Parameter deltas
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateLevel {
    Dictionary,
    Model,
    Rule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Change {
    Add(f64),
    Set(f64),
    Note(String),
}

/// One targeted parameter change. Targets are field paths such as
/// `omega[2]`, `thresholds.cuts[1]`, `econ.gamma`, `decay.ttl_hours`,
/// `trust.layer_weights.Q` or `extractors` (model-level notes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDelta {
    pub level: UpdateLevel,
    pub target: String,
    pub change: Change,
    pub justification: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
}

fn parse_index(path: &str, prefix: &str) -> Option<usize> {
    path.strip_prefix(prefix)?.strip_suffix(']')?.parse().ok()
}

fn apply_change(slot: &mut f64, change: &Change, target: &str) -> Result<()> {
    match change {
        Change::Add(d) => *slot += d,
        Change::Set(v) => *slot = *v,
        Change::Note(_) => {
            return Err(Error::Invariant(format!(
                "`{target}` takes a numeric change, not a note"
            )))
        }
    }
    Ok(())
}

/// Apply deltas in order, renormalize omega and re-validate. The input entry
/// is not modified.
pub fn apply_update(entry: &RgidEntry, deltas: &[ParameterDelta]) -> Result<RgidEntry> {
    let mut out = entry.clone();
    for d in deltas {
        let t = d.target.as_str();
        let expected = if t.starts_with("thresholds.") {
            UpdateLevel::Rule
        } else if t == "extractors" {
            UpdateLevel::Model
        } else {
            UpdateLevel::Dictionary
        };
        if d.level != expected {
            return Err(Error::Invariant(format!(
                "{:?}-level delta cannot target `{t}`",
                d.level
            )));
        }
        let slot: &mut f64 = if let Some(k) = parse_index(t, "omega[") {
            out.omega
                .get_mut(k)
                .ok_or_else(|| Error::Invariant(format!("`{t}` out of range")))?
        } else if let Some(k) = parse_index(t, "thresholds.cuts[") {
            &mut out
                .thresholds
                .cuts
                .get_mut(k)
                .ok_or_else(|| Error::Invariant(format!("`{t}` out of range")))?
                .score
        } else {
            match t {
                "extractors" => match &d.change {
                    Change::Note(_) => continue,
                    _ => return Err(Error::Invariant("model-level deltas carry notes only".into())),
                },
                "thresholds.tau_final" => &mut out.thresholds.tau_final,
                "econ.fc_max" => &mut out.econ.fc_max,
                "econ.p_market_per_sample" => &mut out.econ.p_market_per_sample,
                "econ.eta_cost_per_sample" => &mut out.econ.eta_cost_per_sample,
                "econ.gamma" => &mut out.econ.gamma,
                "decay.ttl_hours" => &mut out.decay.ttl_hours,
                "decay.spoilage_rate_per_min" => &mut out.decay.spoilage_rate_per_min,
                _ => {
                    if let Some(layer) = t.strip_prefix("trust.layer_weights.") {
                        out.trust
                            .layer_weights
                            .get_mut(layer)
                            .ok_or_else(|| Error::Invariant(format!("unknown target `{t}`")))?
                    } else if let Some(id) = t.strip_prefix("trust.indicators.") {
                        &mut out
                            .trust
                            .indicators
                            .get_mut(id)
                            .ok_or_else(|| Error::Invariant(format!("unknown target `{t}`")))?
                            .importance
                    } else {
                        return Err(Error::Invariant(format!("unknown target `{t}`")));
                    }
                }
            }
        };
        apply_change(slot, &d.change, t)?;
    }
    if out.omega.iter().any(|w| *w < 0.0) {
        return Err(Error::Invariant("omega must stay nonnegative".into()));
    }
    out.normalize_omega();
    let report = validate_entry(&out);
    if !report.is_empty() {
        return Err(Error::Invariant(report.to_string()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Top-layer adaptation
// ---------------------------------------------------------------------------

fn misgrades(omega: &[f64], th: &GradeThresholds, data: &[(Vec<f64>, &str)]) -> usize {
    data.iter()
        .filter(|(f, label)| th.classify(features::dot(omega, f)) != *label)
        .count()
}

fn changed_positions(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| (*x - *y).abs() > 1e-12).count()
}

/// Derive an entry for `new_lambda` from `base_lambda` by re-fitting only
/// the top layer (omega and grade cuts) on labelled calibration samples.
///
/// Omega is searched by coordinate descent on a 0.05 grid: each move shifts
/// mass between one pair of features (keeping the sum fixed), with a line
/// search over grid multiples. Cuts between adjacent accepted grades are then
/// re-fit at the midpoint between the two classes' score clusters. A move is
/// kept only if it strictly reduces misgrades and the number of changed
/// scalars stays within 5% of the entry's scalar count.
pub fn adapt_entry(
    repo: &Repository,
    base_lambda: &VarietyId,
    new_lambda: &VarietyId,
    calibration: &[(FruitSample, String)],
    extractor: &dyn Extractor,
) -> Result<RgidEntry> {
    let base = repo.lookup(base_lambda)?;
    if calibration.is_empty() {
        return Err(Error::Infeasible("calibration set is empty".into()));
    }
    let known: BTreeSet<&str> = base.thresholds.labels().chain([REJECT]).collect();
    let missing: BTreeSet<&str> = calibration
        .iter()
        .map(|(_, l)| l.as_str())
        .filter(|l| !known.contains(l))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Infeasible(format!(
            "calibration classes missing from {}: {:?}",
            base_lambda, missing
        )));
    }

    let data: Vec<(Vec<f64>, &str)> = calibration
        .iter()
        .map(|(s, l)| Ok((features::extract_vector(s, base, extractor)?.values, l.as_str())))
        .collect::<Result<_>>()?;

    let budget = (ADAPT_MAX_CHANGED_RATIO * base.scalar_count() as f64).floor() as usize;
    let mut omega = base.omega.clone();
    let mut th = base.thresholds.clone();
    let mut best = misgrades(&omega, &th, &data);

    // Coordinate descent over pairwise transfers on the grid.
    let n = omega.len();
    for _ in 0..1000 {
        if best == 0 {
            break;
        }
        let mut round: Option<(usize, Vec<f64>)> = None;
        for from in 0..n {
            for to in 0..n {
                if from == to {
                    continue;
                }
                let mut t = 1;
                loop {
                    let amount = t as f64 * ADAPT_GRID_STEP;
                    if amount > omega[from] + 1e-12 {
                        break;
                    }
                    let mut cand = omega.clone();
                    cand[from] = (cand[from] - amount).max(0.0);
                    cand[to] += amount;
                    t += 1;
                    if changed_positions(&cand, &base.omega) > budget {
                        continue;
                    }
                    let m = misgrades(&cand, &th, &data);
                    if m < round.as_ref().map_or(best, |(bm, _)| *bm) {
                        round = Some((m, cand));
                    }
                }
            }
        }
        match round {
            Some((m, cand)) => {
                best = m;
                omega = cand;
            }
            None => break,
        }
    }

    // Re-fit cuts between adjacent accepted grades; the lowest cut is tied to
    // tau_final and stays.
    for c in 1..th.cuts.len() {
        if best == 0 {
            break;
        }
        let used = changed_positions(&omega, &base.omega)
            + th.cuts
                .iter()
                .zip(&base.thresholds.cuts)
                .filter(|(a, b)| a.score != b.score)
                .count();
        if used + 1 > budget {
            break;
        }
        let scores_of = |label: &str| -> Vec<f64> {
            data.iter()
                .filter(|(_, l)| *l == label)
                .map(|(f, _)| features::dot(&omega, f))
                .collect()
        };
        let lower = scores_of(&th.cuts[c - 1].grade);
        let upper = scores_of(&th.cuts[c].grade);
        if lower.is_empty() || upper.is_empty() {
            continue;
        }
        let lo_max = lower.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let up_min = upper.iter().cloned().fold(f64::INFINITY, f64::min);
        let mid = if lo_max < up_min {
            (lo_max + up_min) / 2.0
        } else {
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            (mean(&lower) + mean(&upper)) / 2.0
        };
        let floor = th.cuts[c - 1].score;
        let ceil = th.cuts.get(c + 1).map_or(1.0, |n| n.score);
        if !(mid > floor && mid < ceil) || mid <= th.tau_final {
            continue;
        }
        let mut cand = th.clone();
        cand.cuts[c].score = mid;
        let m = misgrades(&omega, &cand, &data);
        if m < best {
            best = m;
            th = cand;
        }
    }

    let mut out = base.clone();
    out.lambda = new_lambda.clone();
    out.omega = omega;
    out.thresholds = th;
    let changed = out.changed_scalars(base).len();
    if changed > budget {
        return Err(Error::Invariant(format!(
            "adaptation changed {changed} parameters, budget is {budget}"
        )));
    }
    let report = validate_entry(&out);
    if !report.is_empty() {
        return Err(Error::Invariant(report.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const THREE_FEATURE_DOC: &str = r#"
[base.econ]
p_market_per_sample = 5.0
eta_cost_per_sample = 0.02

[base.trust.layer_weights]
Q = 3.0
S = 2.0
M = 1.0

[categories.pome]
phi = [
  { id = "weight", plane = "general", f_max = 200.0, unit = "g", screening = true },
  { id = "stem", plane = "top", source = "stem_integrity", f_max = 1.0, unit = "fraction" },
  { id = "scar", plane = "side", source = "scar_area", f_max = 2.0, unit = "cm2", higher_is_better = false },
]
omega = [0.5, 0.3, 0.2]

[categories.pome.thresholds]
tau_final = 0.4
cuts = [
  { score = 0.4, grade = "C" },
  { score = 0.55, grade = "B" },
  { score = 0.7, grade = "A" },
]

[[varieties]]
origin = "xinjiang"
variety = "korla-pear"
category = "pome"

[[varieties]]
origin = "hebei"
variety = "ya-pear"
category = "pome"
decay = { ttl_hours = 24.0 }
"#;

    fn repo() -> Repository {
        load_dictionary(THREE_FEATURE_DOC).unwrap()
    }

    fn pear() -> VarietyId {
        VarietyId::new("xinjiang", "korla-pear")
    }

    #[test]
    fn minimal_document_resolves() {
        let r = repo();
        let e = r.lookup(&pear()).unwrap();
        assert_eq!(e.phi.len(), 3);
        assert_eq!(e.omega, vec![0.5, 0.3, 0.2]);
        assert!(validate_entry(e).is_empty());
        // builtin defaults
        assert_eq!(e.econ.gamma, DEFAULT_GAMMA);
        assert_eq!(e.econ.fc_max, DEFAULT_FC_MAX);
        assert_eq!(e.decay.ttl_hours, DEFAULT_TTL_HOURS);
        assert_eq!(e.decay.spoilage_rate_per_min, DEFAULT_SPOILAGE_RATE);
    }

    #[test]
    fn empty_document_has_no_varieties() {
        match load_dictionary("") {
            Err(Error::Schema(m)) => assert_eq!(m, "no varieties"),
            other => panic!("{other:?}"),
        }
        match load_dictionary("[base]\n") {
            Err(Error::Schema(m)) => assert_eq!(m, "no varieties"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(load_dictionary("[base\nx="), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_field_is_named() {
        let doc = THREE_FEATURE_DOC.replace("p_market_per_sample = 5.0\n", "");
        match load_dictionary(&doc) {
            Err(Error::Schema(m)) => assert!(m.contains("econ.p_market_per_sample"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_increasing_cuts_are_invariant_errors() {
        let doc = THREE_FEATURE_DOC.replace("score = 0.55", "score = 0.8");
        assert!(matches!(load_dictionary(&doc), Err(Error::Invariant(_))));
    }

    #[test]
    fn omega_is_normalized_on_load() {
        let doc = THREE_FEATURE_DOC.replace("omega = [0.5, 0.3, 0.2]", "omega = [1.0, 0.6, 0.4]");
        let r = load_dictionary(&doc).unwrap();
        let e = r.lookup(&pear()).unwrap();
        assert!((e.omega.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((e.omega[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unknown_lambda_not_found() {
        let r = repo();
        assert!(matches!(
            r.lookup(&VarietyId::new("xinjiang", "Korla-pear")),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn ttl_only_overlay_differs_only_in_ttl() {
        let r = repo();
        let a = r.lookup(&pear()).unwrap();
        let b = r.lookup(&VarietyId::new("hebei", "ya-pear")).unwrap();
        assert_eq!(b.decay.ttl_hours, 24.0);
        assert_eq!(a.changed_scalars(b), vec!["decay.ttl_hours".to_string()]);
    }

    #[test]
    fn document_roundtrip_is_byte_stable() {
        let r = repo();
        let d1 = r.to_document().unwrap();
        let r2 = load_dictionary(&d1).unwrap();
        assert_eq!(r, r2);
        assert_eq!(d1, r2.to_document().unwrap());
    }

    #[test]
    fn validate_reports_length_mismatch_and_layer_weight() {
        let mut e = repo().lookup(&pear()).unwrap().clone();
        e.omega.pop();
        e.trust.layer_weights.insert("S".into(), 0.0);
        let rep = validate_entry(&e);
        assert!(rep.has("omega/phi length mismatch"));
        assert!(rep.has("layer weight must be positive"));
    }

    #[test]
    fn apply_update_omega_add_renormalizes() {
        let e = repo().lookup(&pear()).unwrap().clone();
        let d = ParameterDelta {
            level: UpdateLevel::Dictionary,
            target: "omega[0]".into(),
            change: Change::Add(0.1),
            justification: "test".into(),
            statistic: None,
        };
        let out = apply_update(&e, &[d]).unwrap();
        let expected = [0.6 / 1.1, 0.3 / 1.1, 0.2 / 1.1];
        for (a, b) in out.omega.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(e.omega, vec![0.5, 0.3, 0.2]);
    }

    #[test]
    fn apply_update_empty_is_identity() {
        let e = repo().lookup(&pear()).unwrap().clone();
        assert_eq!(apply_update(&e, &[]).unwrap(), e);
    }

    #[test]
    fn apply_update_cut_above_one_fails() {
        let e = repo().lookup(&pear()).unwrap().clone();
        let d = ParameterDelta {
            level: UpdateLevel::Rule,
            target: "thresholds.cuts[2]".into(),
            change: Change::Add(0.4),
            justification: "test".into(),
            statistic: None,
        };
        assert!(matches!(apply_update(&e, &[d]), Err(Error::Invariant(_))));
    }

    #[test]
    fn apply_update_level_must_match_target() {
        let e = repo().lookup(&pear()).unwrap().clone();
        let d = ParameterDelta {
            level: UpdateLevel::Rule,
            target: "omega[0]".into(),
            change: Change::Add(0.1),
            justification: "test".into(),
            statistic: None,
        };
        assert!(matches!(apply_update(&e, &[d]), Err(Error::Invariant(_))));
    }

    #[test]
    fn variety_id_parse() {
        let id: VarietyId = "xinjiang/korla-pear".parse().unwrap();
        assert_eq!(id, pear());
        assert!("korla".parse::<VarietyId>().is_err());
        assert!("/x".parse::<VarietyId>().is_err());
    }

    #[test]
    fn grade_cut_inclusive_upward() {
        let th = GradeThresholds {
            cuts: vec![
                GradeCut {
                    score: 0.4,
                    grade: "B".into(),
                },
                GradeCut {
                    score: 0.7,
                    grade: "A".into(),
                },
            ],
            tau_final: 0.4,
        };
        assert_eq!(th.classify(0.65), "B");
        assert_eq!(th.classify(0.7), "A");
        assert_eq!(th.classify(1.0), "A");
        assert_eq!(th.classify(0.39), REJECT);
    }
}
