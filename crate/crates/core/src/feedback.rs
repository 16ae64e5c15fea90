//! Negative feedback loop: market feedback in, parameter deltas out.
//!
//! Each event is joined to the stored feature vector of the sample it refers
//! to and turned into a regression example `(f, y, c)`. The loss is the
//! confidence-weighted squared error of the composite score `θ·f` against
//! `y`; one gradient step is followed by a Euclidean projection back onto the
//! probability simplex.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{dot, REJECT};
use crate::rgid::{Change, GradeThresholds, ParameterDelta, RgidEntry, TriggerKind, TriggerRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Scan,
    Purchase,
    Return,
    Review,
    Repurchase,
}

impl Behavior {
    /// Position in the one-hot vector.
    pub const ALL: [Behavior; 5] = [
        Behavior::Scan,
        Behavior::Purchase,
        Behavior::Return,
        Behavior::Review,
        Behavior::Repurchase,
    ];

    pub fn one_hot(self) -> [u8; 5] {
        let mut u = [0; 5];
        u[self as usize] = 1;
        u
    }

    /// Base confidence of the behavior as a quality signal.
    pub fn confidence(self) -> f64 {
        match self {
            Behavior::Scan => 0.2,
            Behavior::Review => 0.5,
            Behavior::Purchase => 0.7,
            Behavior::Repurchase | Behavior::Return => 1.0,
        }
    }
}

/// Seconds of viewing after which an event earns its full base confidence.
pub const VIEW_SATURATION_SECS: f64 = 30.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Implicit {
    #[serde(default)]
    pub view_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repurchase_interval_days: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub sample_ref: String,
    pub u: [u8; 5],
    /// Explicit rating on 1..=5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default)]
    pub t: Implicit,
    pub grade_given: String,
}

impl FeedbackEvent {
    pub fn new(sample_ref: impl Into<String>, behavior: Behavior, grade_given: impl Into<String>) -> Self {
        Self {
            sample_ref: sample_ref.into(),
            u: behavior.one_hot(),
            a: None,
            t: Implicit::default(),
            grade_given: grade_given.into(),
        }
    }

    pub fn with_rating(mut self, a: f64) -> Self {
        self.a = Some(a);
        self
    }

    pub fn with_view_seconds(mut self, s: f64) -> Self {
        self.t.view_seconds = s;
        self
    }

    pub fn behavior(&self) -> Result<Behavior> {
        let mut hot = self.u.iter().enumerate().filter(|(_, &b)| b != 0);
        match (hot.next(), hot.next()) {
            (Some((k, 1)), None) => Ok(Behavior::ALL[k]),
            _ => Err(Error::Invariant(format!("behavior vector {:?} is not one-hot", self.u))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.behavior()?;
        if let Some(a) = self.a {
            if !(1.0..=5.0).contains(&a) {
                return Err(Error::Invariant(format!("rating {a} outside [1, 5]")));
            }
        }
        if !(self.t.view_seconds >= 0.0) || !self.t.view_seconds.is_finite() {
            return Err(Error::Invariant("view_seconds must be nonnegative".into()));
        }
        if let Some(d) = self.t.repurchase_interval_days {
            if !(d >= 0.0) {
                return Err(Error::Invariant("repurchase interval must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// Base confidence scaled by view time: half weight for a glance, full
    /// weight from [`VIEW_SATURATION_SECS`] on.
    pub fn confidence(&self) -> Result<f64> {
        let base = self.behavior()?.confidence();
        let engaged = (self.t.view_seconds / VIEW_SATURATION_SECS).min(1.0);
        Ok(base * (0.5 + 0.5 * engaged))
    }

    /// Score the market assigned to the sample. An explicit rating wins;
    /// otherwise the midpoint of the given grade's band, one band lower for
    /// a return.
    pub fn target(&self, thresholds: &GradeThresholds) -> Result<f64> {
        if let Some(a) = self.a {
            return Ok((a - 1.0) / 4.0);
        }
        let band = band_index(thresholds, &self.grade_given)?;
        let band = match self.behavior()? {
            Behavior::Return => band.checked_sub(1),
            _ => Some(band),
        };
        Ok(match band {
            Some(b) => band_midpoint(thresholds, b),
            None => 0.0,
        })
    }
}

/// Band 0 is below the lowest cut (`Reject`); band `i + 1` starts at cut `i`.
fn band_index(th: &GradeThresholds, grade: &str) -> Result<usize> {
    if grade == REJECT {
        return Ok(0);
    }
    th.index_of(grade)
        .map(|i| i + 1)
        .ok_or_else(|| Error::Invariant(format!("unknown grade `{grade}`")))
}

fn band_midpoint(th: &GradeThresholds, band: usize) -> f64 {
    let lo = if band == 0 { 0.0 } else { th.cuts[band - 1].score };
    let hi = th.cuts.get(band).map(|c| c.score).unwrap_or(1.0);
    0.5 * (lo + hi)
}

#[derive(Debug, Default)]
struct StoreInner {
    events: Vec<FeedbackEvent>,
    features: HashMap<String, Vec<f64>>,
}

/// Append-only event log plus the feature vectors events join against.
#[derive(Debug, Default)]
pub struct FeedbackStore {
    inner: RwLock<StoreInner>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StoreSnapshot {
    pub events: Vec<FeedbackEvent>,
    pub features: HashMap<String, Vec<f64>>,
}

impl FeedbackStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.read().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, StoreInner> {
        self.inner.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, StoreInner> {
        self.inner.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn put_features(&self, sample_ref: impl Into<String>, values: Vec<f64>) {
        self.write().features.insert(sample_ref.into(), values);
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        let g = self.read();
        StoreSnapshot {
            events: g.events.clone(),
            features: g.features.clone(),
        }
    }
}

pub fn record_feedback(store: &FeedbackStore, event: FeedbackEvent) -> Result<()> {
    event.validate()?;
    store.write().events.push(event);
    Ok(())
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<FeedbackEvent>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_events<W: Write>(mut out: W, events: &[FeedbackEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_deltas<W: Write>(mut out: W, deltas: &[ParameterDelta]) -> Result<()> {
    for d in deltas {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub target: f64,
    pub confidence: f64,
}

/// Pair each event with its sample's feature vector.
pub fn join(events: &[FeedbackEvent], features: &HashMap<String, Vec<f64>>, entry: &RgidEntry) -> Result<Vec<Example>> {
    events
        .iter()
        .map(|e| {
            let f = features
                .get(&e.sample_ref)
                .ok_or_else(|| Error::Join(e.sample_ref.clone()))?;
            Ok(Example {
                features: f.clone(),
                target: e.target(&entry.thresholds)?,
                confidence: e.confidence()?,
            })
        })
        .collect()
}

fn check_batch(theta: &[f64], batch: &[Example]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::domain("empty feedback batch"));
    }
    if let Some(e) = batch.iter().find(|e| e.features.len() != theta.len()) {
        return Err(Error::domain(format!(
            "feature vector of length {} against theta of length {}",
            e.features.len(),
            theta.len()
        )));
    }
    Ok(())
}

pub fn loss(theta: &[f64], batch: &[Example]) -> Result<f64> {
    check_batch(theta, batch)?;
    let s: f64 = batch
        .iter()
        .map(|e| {
            let r = dot(theta, &e.features) - e.target;
            e.confidence * r * r
        })
        .sum();
    Ok(s / batch.len() as f64)
}

pub fn gradient(theta: &[f64], batch: &[Example]) -> Result<Vec<f64>> {
    check_batch(theta, batch)?;
    let mut g = vec![0.0; theta.len()];
    let scale = 2.0 / batch.len() as f64;
    for e in batch {
        let r = dot(theta, &e.features) - e.target;
        for (gk, fk) in g.iter_mut().zip(&e.features) {
            *gk += scale * e.confidence * r * fk;
        }
    }
    Ok(g)
}

/// `θ − η∇L` with no projection.
pub fn raw_step(theta: &[f64], batch: &[Example], eta_learn: f64) -> Result<Vec<f64>> {
    if !(eta_learn > 0.0) || !eta_learn.is_finite() {
        return Err(Error::domain("eta_learn must be positive"));
    }
    let g = gradient(theta, batch)?;
    Ok(theta.iter().zip(&g).map(|(t, gk)| t - eta_learn * gk).collect())
}

pub fn update_step(theta: &[f64], batch: &[Example], eta_learn: f64) -> Result<Vec<f64>> {
    Ok(project_simplex(&raw_step(theta, batch, eta_learn)?))
}

/// Euclidean projection onto `{x ≥ 0, Σx = 1}` (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (j, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            shift = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - shift).max(0.0)).collect();
    // tidy the last ulp so the sum is 1 to machine precision
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        for x in &mut out {
            *x /= sum;
        }
    }
    out
}

/// Step size that guarantees projected descent on this batch: `1 / tr(H)`,
/// where `H = (2/|B|) Σ c f fᵀ` bounds the loss curvature.
pub fn safe_step_size(batch: &[Example]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("empty feedback batch"));
    }
    let tr: f64 = batch
        .iter()
        .map(|e| e.confidence * dot(&e.features, &e.features))
        .sum::<f64>()
        * 2.0
        / batch.len() as f64;
    if tr > 0.0 {
        Ok(1.0 / tr)
    } else {
        Err(Error::Degenerate("loss has zero curvature".into()))
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 1e-15 || syy <= 1e-15 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (top, bottom) = a.split_at_mut(row);
            for (x, p) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// `1 − R²` of a ridge-stabilized least-squares fit of targets on features
/// plus an intercept. `None` when targets do not vary.
pub fn unexplained_variance(batch: &[Example]) -> Option<f64> {
    let n = batch.first()?.features.len() + 1;
    let row = |e: &Example| {
        let mut r = Vec::with_capacity(n);
        r.push(1.0);
        r.extend_from_slice(&e.features);
        r
    };
    let mut xtx = vec![vec![0.0; n]; n];
    let mut xty = vec![0.0; n];
    for e in batch {
        let r = row(e);
        for i in 0..n {
            xty[i] += r[i] * e.target;
            for j in 0..n {
                xtx[i][j] += r[i] * r[j];
            }
        }
    }
    for (i, r) in xtx.iter_mut().enumerate() {
        r[i] += 1e-9;
    }
    let beta = solve(xtx, xty)?;
    let mean = batch.iter().map(|e| e.target).sum::<f64>() / batch.len() as f64;
    let sst: f64 = batch.iter().map(|e| (e.target - mean).powi(2)).sum();
    if sst <= 1e-15 {
        return None;
    }
    let sse: f64 = batch.iter().map(|e| (e.target - dot(&beta, &row(e))).powi(2)).sum();
    Some((sse / sst).clamp(0.0, 1.0))
}

/// Positive market outcome: a (re)purchase, or a rating of 4 or more.
fn is_positive(e: &FeedbackEvent) -> Option<bool> {
    if let Some(a) = e.a {
        return Some(a >= 4.0);
    }
    match e.behavior().ok()? {
        Behavior::Purchase | Behavior::Repurchase => Some(true),
        Behavior::Return => Some(false),
        Behavior::Scan | Behavior::Review => Some(false),
    }
}

/// Evaluate the entry's trigger rules against a consistent snapshot of the
/// store. Events whose sample has no stored features are skipped.
pub fn optimization_triggers(store: &FeedbackStore, entry: &RgidEntry) -> Vec<ParameterDelta> {
    triggers_for(&store.snapshot(), entry)
}

pub fn triggers_for(snap: &StoreSnapshot, entry: &RgidEntry) -> Vec<ParameterDelta> {
    let mut joined = Vec::new();
    for e in &snap.events {
        if e.validate().is_err() {
            continue;
        }
        if let Some(f) = snap.features.get(&e.sample_ref) {
            if f.len() == entry.phi.len() {
                joined.push((e, f));
            }
        }
    }
    let mut out = Vec::new();
    for rule in &entry.update_rules {
        if snap.events.len() < rule.min_events as usize {
            continue;
        }
        match rule.kind {
            TriggerKind::ImportanceUnderestimated => importance(rule, entry, &joined, &mut out),
            TriggerKind::UnexplainedVariance => variance(rule, entry, &joined, &mut out),
            TriggerKind::ReturnRateDeviation => returns(rule, entry, &snap.events, &mut out),
        }
    }
    out
}

fn importance(
    rule: &TriggerRule,
    entry: &RgidEntry,
    joined: &[(&FeedbackEvent, &Vec<f64>)],
    out: &mut Vec<ParameterDelta>,
) {
    let pairs: Vec<(f64, &Vec<f64>)> = joined
        .iter()
        .filter_map(|(e, f)| is_positive(e).map(|p| (if p { 1.0 } else { 0.0 }, *f)))
        .collect();
    if pairs.len() < 2 {
        return;
    }
    let y: Vec<f64> = pairs.iter().map(|(p, _)| *p).collect();
    let r: Vec<f64> = (0..entry.phi.len())
        .map(|k| {
            let x: Vec<f64> = pairs.iter().map(|(_, f)| f[k]).collect();
            pearson(&x, &y).max(0.0)
        })
        .collect();
    let total: f64 = r.iter().sum();
    if total <= 0.0 {
        return;
    }
    for (k, rk) in r.iter().enumerate() {
        let gap = rk / total - entry.omega[k];
        if gap > rule.threshold {
            out.push(ParameterDelta {
                level: rule.kind.level(),
                target: format!("omega[{k}]"),
                change: Change::Add(if rule.step > 0.0 { rule.step } else { gap }),
                justification: rule.id.clone(),
                statistic: Some(gap),
            });
        }
    }
}

fn variance(
    rule: &TriggerRule,
    entry: &RgidEntry,
    joined: &[(&FeedbackEvent, &Vec<f64>)],
    out: &mut Vec<ParameterDelta>,
) {
    let batch: Vec<Example> = joined
        .iter()
        .filter_map(|(e, f)| {
            Some(Example {
                features: (*f).clone(),
                target: e.target(&entry.thresholds).ok()?,
                confidence: 1.0,
            })
        })
        .collect();
    if let Some(u) = unexplained_variance(&batch) {
        if u > rule.threshold {
            out.push(ParameterDelta {
                level: rule.kind.level(),
                target: "extractors".into(),
                change: Change::Note(format!(
                    "{:.0}% of feedback variance is not explained by the current features",
                    u * 100.0
                )),
                justification: rule.id.clone(),
                statistic: Some(u),
            });
        }
    }
}

fn returns(rule: &TriggerRule, entry: &RgidEntry, events: &[FeedbackEvent], out: &mut Vec<ParameterDelta>) {
    let mut counts: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for e in events {
        let (Some(idx), Ok(b)) = (entry.thresholds.index_of(&e.grade_given), e.behavior()) else {
            continue;
        };
        let c = counts.entry(idx).or_default();
        c.0 += 1;
        if b == Behavior::Return {
            c.1 += 1;
        }
    }
    if counts.len() < 2 {
        return;
    }
    // Laplace smoothing keeps empty or return-free grades comparable
    let rate: BTreeMap<usize, f64> = counts
        .iter()
        .map(|(&g, &(n, r))| (g, (r as f64 + 1.0) / (n as f64 + 2.0)))
        .collect();
    for (&g, &rg) in &rate {
        let others: Vec<f64> = rate.iter().filter(|(&h, _)| h != g).map(|(_, &r)| r).collect();
        let mean = others.iter().sum::<f64>() / others.len() as f64;
        let ratio = rg / mean;
        if ratio >= rule.threshold {
            out.push(ParameterDelta {
                level: rule.kind.level(),
                target: format!("thresholds.cuts[{g}]"),
                change: Change::Add(rule.step),
                justification: rule.id.clone(),
                statistic: Some(ratio),
            });
        }
    }
}
