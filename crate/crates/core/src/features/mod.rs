//! Feature extraction: general/specific separation, surface planes, fusion.
//!
//! Extractors turn a [`FruitSample`] into one scaled value per [`FeatureSpec`].
//! Values live on `[0, 1]` with 1.0 the best quality, so a composite score is
//! the plain dot product with the entry's normalized weights.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifecycle::Timestamp;
use crate::rgid::{FeatureSpec, Plane, RgidEntry, VarietyId};

pub mod rules;

pub use rules::{grade_by_rules, RuleStandard, REJECT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub name: String,
    pub value: f64,
}

/// One physical specimen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FruitSample {
    pub id: String,
    pub lambda: VarietyId,
    pub weight_g: f64,
    pub diameter_mm: f64,
    pub scar_area_cm2: f64,
    pub stem_integrity: f64,
    pub color_uniformity: f64,
    pub firmness: f64,
    #[serde(default)]
    pub plane_observations: BTreeMap<Plane, Vec<Observation>>,
    #[serde(default)]
    pub t_collect: Timestamp,
}

impl FruitSample {
    /// Physical attribute by name. Accepts both bare names (`weight`) and the
    /// unit-suffixed field names (`weight_g`).
    pub fn attribute(&self, name: &str) -> Option<f64> {
        Some(match name {
            "weight" | "weight_g" => self.weight_g,
            "diameter" | "diameter_mm" => self.diameter_mm,
            "scar_area" | "scar_area_cm2" => self.scar_area_cm2,
            "stem_integrity" => self.stem_integrity,
            "color_uniformity" => self.color_uniformity,
            "firmness" => self.firmness,
            _ => return None,
        })
    }

    pub fn observation(&self, plane: Plane, name: &str) -> Option<f64> {
        self.plane_observations
            .get(&plane)?
            .iter()
            .find(|o| o.name == name)
            .map(|o| o.value)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stem_integrity", self.stem_integrity),
            ("color_uniformity", self.color_uniformity),
            ("firmness", self.firmness),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invariant(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("weight_g", self.weight_g),
            ("diameter_mm", self.diameter_mm),
            ("scar_area_cm2", self.scar_area_cm2),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Invariant(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Maps a sample to a feature value for one spec. Implementations must be
/// deterministic for a given sample.
pub trait Extractor: Send + Sync {
    fn name(&self) -> &str;

    fn extract(&self, sample: &FruitSample, spec: &FeatureSpec) -> Result<f64>;
}

/// Min-max scaling against the feature's physical range, clamped to `[0, 1]`.
pub fn scale(raw: f64, spec: &FeatureSpec) -> f64 {
    let s = ((raw - spec.f_min) / (spec.f_max - spec.f_min)).clamp(0.0, 1.0);
    if spec.higher_is_better {
        s
    } else {
        1.0 - s
    }
}

/// Reads general-plane features from the sample's physical attributes and
/// surface features from the matching plane observation, then scales.
#[derive(Clone, Copy, Debug, Default)]
pub struct SyntheticExtractor;

impl Extractor for SyntheticExtractor {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn extract(&self, sample: &FruitSample, spec: &FeatureSpec) -> Result<f64> {
        let source = spec.source();
        let raw = match spec.plane {
            Plane::General => sample.attribute(source).ok_or_else(|| Error::Extraction {
                feature: spec.id.clone(),
                reason: format!("sample has no attribute `{source}`"),
            })?,
            plane => {
                let obs = sample.plane_observations.get(&plane).ok_or_else(|| Error::Extraction {
                    feature: spec.id.clone(),
                    reason: format!("sample has no {plane} observations"),
                })?;
                obs.iter()
                    .find(|o| o.name == source)
                    .map(|o| o.value)
                    .ok_or_else(|| Error::Extraction {
                        feature: spec.id.clone(),
                        reason: format!("no `{source}` record on the {plane} plane"),
                    })?
            }
        };
        if !raw.is_finite() {
            return Err(Error::Extraction {
                feature: spec.id.clone(),
                reason: "non-finite observation".into(),
            });
        }
        Ok(scale(raw, spec))
    }
}

/// Extractors by name. `synthetic` is always registered.
#[derive(Clone)]
pub struct ExtractorRegistry {
    by_name: BTreeMap<String, Arc<dyn Extractor>>,
}

impl Default for ExtractorRegistry {
    fn default() -> Self {
        let mut r = Self {
            by_name: BTreeMap::new(),
        };
        r.register(Arc::new(SyntheticExtractor));
        r
    }
}

impl ExtractorRegistry {
    pub fn register(&mut self, extractor: Arc<dyn Extractor>) {
        self.by_name.insert(extractor.name().to_string(), extractor);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Extractor>> {
        self.by_name
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no extractor registered as `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }
}

/// Feature values aligned to an entry's `phi`, with each value's plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub planes: Vec<Plane>,
}

impl FeatureVector {
    pub fn composite(&self, omega: &[f64]) -> f64 {
        dot(omega, &self.values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A subset of features, each tagged with its index in `phi`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSlice {
    pub entries: Vec<(usize, f64)>,
}

impl FeatureSlice {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|(i, _)| *i)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceFeatures {
    pub top: FeatureSlice,
    pub side: FeatureSlice,
    pub bottom: FeatureSlice,
}

/// Split the entry's features into the general stream and the
/// plane-specific stream, extracting every value.
pub fn separate(
    sample: &FruitSample,
    entry: &RgidEntry,
    extractor: &dyn Extractor,
) -> Result<(FeatureSlice, FeatureSlice)> {
    let mut general = FeatureSlice::default();
    let mut specific = FeatureSlice::default();
    for (k, spec) in entry.phi.iter().enumerate() {
        let v = extractor.extract(sample, spec)?;
        if spec.plane == Plane::General {
            general.entries.push((k, v));
        } else {
            specific.entries.push((k, v));
        }
    }
    Ok((general, specific))
}

pub fn decompose_surfaces(specific: &FeatureSlice, entry: &RgidEntry) -> SurfaceFeatures {
    let mut out = SurfaceFeatures::default();
    for &(k, v) in &specific.entries {
        let slot = match entry.phi.get(k).map(|s| s.plane) {
            Some(Plane::Top) => &mut out.top,
            Some(Plane::Side) => &mut out.side,
            Some(Plane::Bottom) => &mut out.bottom,
            _ => continue,
        };
        slot.entries.push((k, v));
    }
    out
}

/// Concatenate the slices back into `phi` order. Every feature must appear
/// exactly once.
pub fn fuse(general: &FeatureSlice, surfaces: &SurfaceFeatures, entry: &RgidEntry) -> Result<FeatureVector> {
    let n = entry.phi.len();
    let mut values: Vec<Option<f64>> = vec![None; n];
    let all = general
        .entries
        .iter()
        .chain(&surfaces.top.entries)
        .chain(&surfaces.side.entries)
        .chain(&surfaces.bottom.entries);
    for &(k, v) in all {
        let slot = values
            .get_mut(k)
            .ok_or_else(|| Error::Coverage(format!("feature index {k} outside phi")))?;
        if slot.is_some() {
            return Err(Error::Coverage(format!("feature `{}` appears twice", entry.phi[k].id)));
        }
        *slot = Some(v);
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(k, v)| v.ok_or_else(|| Error::Coverage(format!("feature `{}` missing", entry.phi[k].id))))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureVector {
        values,
        planes: entry.phi.iter().map(|s| s.plane).collect(),
    })
}

/// separate → decompose → fuse in one call.
pub fn extract_vector(sample: &FruitSample, entry: &RgidEntry, extractor: &dyn Extractor) -> Result<FeatureVector> {
    let (general, specific) = separate(sample, entry, extractor)?;
    let surfaces = decompose_surfaces(&specific, entry);
    fuse(&general, &surfaces, entry)
}
