//! Rule-based reference graders for the regional grading standards.
//!
//! Each standard is a TOML document under `standards/` listing grades from
//! best to worst; a grade's criteria are attribute interval tests that must
//! all pass. A sample gets the first (best) grade whose criteria pass, or
//! [`REJECT`]. Interval endpoints default to inclusive-low / exclusive-high
//! and each file states every endpoint explicitly.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FruitSample;

/// Label for samples that pass no grade.
pub const REJECT: &str = "Reject";

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default = "yes")]
    pub min_inclusive: bool,
    #[serde(default)]
    pub max_inclusive: bool,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        let lo = match self.min {
            None => true,
            Some(m) if self.min_inclusive => v >= m,
            Some(m) => v > m,
        };
        let hi = match self.max {
            None => true,
            Some(m) if self.max_inclusive => v <= m,
            Some(m) => v < m,
        };
        lo && hi
    }
}

/// Passes when the attribute lies in any of the intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Criterion {
    pub attribute: String,
    pub intervals: Vec<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_text: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeRule {
    pub label: String,
    pub criteria: Vec<Criterion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleStandard {
    pub standard: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Best grade first.
    pub grades: Vec<GradeRule>,
}

impl RuleStandard {
    pub fn from_toml(src: &str) -> Result<Self> {
        let s: RuleStandard = toml::from_str(src).map_err(|e| Error::Parse(e.to_string()))?;
        if s.grades.is_empty() {
            return Err(Error::Schema(format!("standard `{}` has no grades", s.standard)));
        }
        Ok(s)
    }

    /// Whether every criterion of `label` passes.
    pub fn eligible(&self, sample: &FruitSample, label: &str) -> Result<bool> {
        let rule = self
            .grades
            .iter()
            .find(|g| g.label == label)
            .ok_or_else(|| Error::Schema(format!("standard `{}` has no grade `{label}`", self.standard)))?;
        rule_passes(rule, sample)
    }

    pub fn grade(&self, sample: &FruitSample) -> Result<&str> {
        for rule in &self.grades {
            if rule_passes(rule, sample)? {
                return Ok(&rule.label);
            }
        }
        Ok(REJECT)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.grades.iter().map(|g| g.label.as_str())
    }
}

fn rule_passes(rule: &GradeRule, sample: &FruitSample) -> Result<bool> {
    for c in &rule.criteria {
        let v = sample
            .attribute(&c.attribute)
            .ok_or_else(|| Error::Schema(format!("unknown attribute `{}` in rule", c.attribute)))?;
        if !c.intervals.iter().any(|i| i.contains(v)) {
            return Ok(false);
        }
    }
    Ok(true)
}

const BUILTIN: [(&str, &str); 3] = [
    ("korla-pear", include_str!("../../standards/korla-pear.toml")),
    ("clementine", include_str!("../../standards/clementine.toml")),
    ("cherry-tomato", include_str!("../../standards/cherry-tomato.toml")),
];

/// The shipped standards, keyed by variety name.
pub fn builtin_standards() -> &'static BTreeMap<String, RuleStandard> {
    static CELL: OnceLock<BTreeMap<String, RuleStandard>> = OnceLock::new();
    CELL.get_or_init(|| {
        BUILTIN
            .iter()
            .map(|(name, src)| {
                let s = RuleStandard::from_toml(src).expect("shipped standard parses");
                assert_eq!(&s.standard, name);
                (name.to_string(), s)
            })
            .collect()
    })
}

pub fn standard(name: &str) -> Result<&'static RuleStandard> {
    builtin_standards()
        .get(name)
        .ok_or_else(|| Error::UnknownStandard(name.to_string()))
}

/// Grade a sample against a shipped standard.
pub fn grade_by_rules(sample: &FruitSample, standard_name: &str) -> Result<String> {
    standard(standard_name)?.grade(sample).map(str::to_string)
}
