//! Knob specifications, configurations, and the fixed-width transferable
//! encoding: max-min normalization for numeric knobs and one-hot segments
//! for categorical knobs, concatenated in space order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KnobError {
    #[error("unknown knob `{0}`")]
    UnknownKnob(String),
    #[error("knob `{knob}` value {value} outside [{min}, {max}]")]
    OutOfRange {
        knob: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("knob `{0}` given a value of the wrong kind")]
    WrongValueKind(String),
    #[error("duplicate knob name `{0}`")]
    DuplicateKnob(String),
    #[error("invalid spec for knob `{knob}`: {reason}")]
    InvalidSpec { knob: String, reason: &'static str },
    #[error("knob `{0}` appears in several spaces with conflicting specs")]
    ConflictingSpec(String),
    #[error("encoding width {got} does not match space width {expected}")]
    WidthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnobKind {
    Numeric,
    Categorical,
}

/// A knob value: a real for numeric knobs, a level identifier otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnobValue {
    Numeric(f64),
    Level(String),
}

impl fmt::Display for KnobValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnobValue::Numeric(v) => write!(f, "{v}"),
            KnobValue::Level(l) => f.write_str(l),
        }
    }
}

impl From<f64> for KnobValue {
    fn from(v: f64) -> Self {
        KnobValue::Numeric(v)
    }
}

impl From<&str> for KnobValue {
    fn from(v: &str) -> Self {
        KnobValue::Level(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnobSpec {
    pub name: String,
    pub kind: KnobKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    pub default: KnobValue,
}

impl KnobSpec {
    pub fn numeric(name: &str, min: f64, max: f64, default: f64) -> Self {
        KnobSpec {
            name: name.to_string(),
            kind: KnobKind::Numeric,
            min: Some(min),
            max: Some(max),
            levels: Vec::new(),
            default: KnobValue::Numeric(default),
        }
    }

    pub fn categorical(name: &str, levels: &[&str], default: &str) -> Self {
        KnobSpec {
            name: name.to_string(),
            kind: KnobKind::Categorical,
            min: None,
            max: None,
            levels: levels.iter().map(|l| l.to_string()).collect(),
            default: KnobValue::Level(default.to_string()),
        }
    }

    /// Number of encoding entries this knob contributes.
    pub fn width(&self) -> usize {
        match self.kind {
            KnobKind::Numeric => 1,
            KnobKind::Categorical => self.levels.len(),
        }
    }

    /// `(min, max)` of a numeric knob. Only meaningful after validation.
    pub fn bounds(&self) -> (f64, f64) {
        (self.min.unwrap_or(0.0), self.max.unwrap_or(0.0))
    }

    fn validate(&self) -> Result<(), KnobError> {
        let invalid = |reason| KnobError::InvalidSpec {
            knob: self.name.clone(),
            reason,
        };
        if self.name.is_empty() {
            return Err(invalid("empty name"));
        }
        match self.kind {
            KnobKind::Numeric => {
                let (Some(min), Some(max)) = (self.min, self.max) else {
                    return Err(invalid("numeric knob needs min and max"));
                };
                if !min.is_finite() || !max.is_finite() {
                    return Err(invalid("bounds must be finite"));
                }
                if min > max {
                    return Err(invalid("min exceeds max"));
                }
                match self.default {
                    KnobValue::Numeric(d) if d >= min && d <= max => {}
                    KnobValue::Numeric(_) => return Err(invalid("default outside [min, max]")),
                    KnobValue::Level(_) => return Err(invalid("numeric knob with level default")),
                }
            }
            KnobKind::Categorical => {
                if self.levels.is_empty() {
                    return Err(invalid("categorical knob needs levels"));
                }
                let unique: BTreeSet<&String> = self.levels.iter().collect();
                if unique.len() != self.levels.len() {
                    return Err(invalid("duplicate levels"));
                }
                match &self.default {
                    KnobValue::Level(l) if self.levels.contains(l) => {}
                    _ => return Err(invalid("default is not one of the levels")),
                }
            }
        }
        Ok(())
    }
}

/// Non-fatal conditions noticed while encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodingWarning {
    /// `min == max`; the knob was encoded as 0.0.
    DegenerateRange(String),
    /// Level not in the spec; the one-hot segment was left all-zero.
    UnknownLevel { knob: String, level: String },
}

/// Fixed-length encoding with every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnobEncoding(pub Vec<f64>);

impl KnobEncoding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One point of the knob space. Knobs left out take their default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnobConfiguration {
    pub values: BTreeMap<String, KnobValue>,
}

impl KnobConfiguration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, knob: &str, value: impl Into<KnobValue>) -> Self {
        self.values.insert(knob.to_string(), value.into());
        self
    }

    pub fn set(&mut self, knob: &str, value: impl Into<KnobValue>) {
        self.values.insert(knob.to_string(), value.into());
    }

    pub fn get(&self, knob: &str) -> Option<&KnobValue> {
        self.values.get(knob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<KnobSpec>", into = "Vec<KnobSpec>")]
pub struct KnobSpace {
    knobs: Vec<KnobSpec>,
}

impl TryFrom<Vec<KnobSpec>> for KnobSpace {
    type Error = KnobError;

    fn try_from(knobs: Vec<KnobSpec>) -> Result<Self, KnobError> {
        KnobSpace::new(knobs)
    }
}

impl From<KnobSpace> for Vec<KnobSpec> {
    fn from(space: KnobSpace) -> Self {
        space.knobs
    }
}

impl KnobSpace {
    pub fn new(knobs: Vec<KnobSpec>) -> Result<Self, KnobError> {
        let mut seen = BTreeSet::new();
        for spec in &knobs {
            spec.validate()?;
            if !seen.insert(spec.name.as_str()) {
                return Err(KnobError::DuplicateKnob(spec.name.clone()));
            }
        }
        Ok(KnobSpace { knobs })
    }

    pub fn knobs(&self) -> &[KnobSpec] {
        &self.knobs
    }

    pub fn len(&self) -> usize {
        self.knobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knobs.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&KnobSpec> {
        self.knobs.iter().find(|k| k.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.knobs.iter().position(|k| k.name == name)
    }

    /// Total encoding width: one entry per numeric knob plus one per level.
    pub fn width(&self) -> usize {
        self.knobs.iter().map(KnobSpec::width).sum()
    }

    /// Encoding range occupied by each knob, in space order.
    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.knobs
            .iter()
            .map(|k| {
                let r = start..start + k.width();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn default_configuration(&self) -> KnobConfiguration {
        let mut config = KnobConfiguration::new();
        for k in &self.knobs {
            config.values.insert(k.name.clone(), k.default.clone());
        }
        config
    }

    /// Checks names and numeric ranges without encoding.
    pub fn check(&self, config: &KnobConfiguration) -> Result<(), KnobError> {
        self.encode_with_warnings(config).map(|_| ())
    }

    pub fn encode(&self, config: &KnobConfiguration) -> Result<KnobEncoding, KnobError> {
        self.encode_with_warnings(config).map(|(e, _)| e)
    }

    pub fn encode_with_warnings(
        &self,
        config: &KnobConfiguration,
    ) -> Result<(KnobEncoding, Vec<EncodingWarning>), KnobError> {
        if let Some(unknown) = config.values.keys().find(|name| self.get(name).is_none()) {
            return Err(KnobError::UnknownKnob(unknown.clone()));
        }
        let mut out = Vec::with_capacity(self.width());
        let mut warnings = Vec::new();
        for spec in &self.knobs {
            let value = config.values.get(&spec.name).unwrap_or(&spec.default);
            encode_value(spec, value, &mut out, &mut warnings)?;
        }
        Ok((KnobEncoding(out), warnings))
    }

    /// Scalar position of one knob in `[0, 1]`: the normalized value for
    /// numeric knobs, `level index / (levels - 1)` for categorical ones.
    pub fn position(&self, config: &KnobConfiguration, knob: &str) -> Result<f64, KnobError> {
        let spec = self
            .get(knob)
            .ok_or_else(|| KnobError::UnknownKnob(knob.to_string()))?;
        let value = config.values.get(knob).unwrap_or(&spec.default);
        match (spec.kind, value) {
            (KnobKind::Numeric, KnobValue::Numeric(x)) => normalize(spec, *x),
            (KnobKind::Categorical, KnobValue::Level(l)) => {
                let n = spec.levels.len();
                match spec.levels.iter().position(|lv| lv == l) {
                    Some(_) if n == 1 => Ok(0.0),
                    Some(i) => Ok(i as f64 / (n - 1) as f64),
                    None => Ok(0.0),
                }
            }
            _ => Err(KnobError::WrongValueKind(knob.to_string())),
        }
    }

    /// Stable 64-bit content fingerprint of a configuration within this space.
    pub fn fingerprint(&self, config: &KnobConfiguration) -> u64 {
        let mut h = math::FNV_OFFSET;
        for spec in &self.knobs {
            let value = config.values.get(&spec.name).unwrap_or(&spec.default);
            h = math::fnv1a(spec.name.as_bytes(), h);
            match value {
                KnobValue::Numeric(x) => h = math::fnv1a(&x.to_bits().to_le_bytes(), h),
                KnobValue::Level(l) => h = math::fnv1a(l.as_bytes(), h),
            }
            h = math::fnv1a(&[0xff], h);
        }
        h
    }

    /// Slices this space's encoding out of an encoding of `union`.
    /// Knobs of `self` missing from `union` take their default's encoding.
    pub fn project_from(
        &self,
        union: &KnobSpace,
        union_encoding: &KnobEncoding,
    ) -> Result<KnobEncoding, KnobError> {
        if union_encoding.len() != union.width() {
            return Err(KnobError::WidthMismatch {
                expected: union.width(),
                got: union_encoding.len(),
            });
        }
        let segments = union.segments();
        let mut out = Vec::with_capacity(self.width());
        let mut scratch = Vec::new();
        for spec in &self.knobs {
            match union.index_of(&spec.name) {
                Some(i) => out.extend_from_slice(&union_encoding.0[segments[i].clone()]),
                None => encode_value(spec, &spec.default, &mut out, &mut scratch)?,
            }
        }
        Ok(KnobEncoding(out))
    }
}

fn normalize(spec: &KnobSpec, x: f64) -> Result<f64, KnobError> {
    let (min, max) = spec.bounds();
    if !(x >= min && x <= max) {
        return Err(KnobError::OutOfRange {
            knob: spec.name.clone(),
            value: x,
            min,
            max,
        });
    }
    if max == min {
        return Ok(0.0);
    }
    Ok(((x - min) / (max - min)).clamp(0.0, 1.0))
}

fn encode_value(
    spec: &KnobSpec,
    value: &KnobValue,
    out: &mut Vec<f64>,
    warnings: &mut Vec<EncodingWarning>,
) -> Result<(), KnobError> {
    match (spec.kind, value) {
        (KnobKind::Numeric, KnobValue::Numeric(x)) => {
            let (min, max) = spec.bounds();
            if min == max {
                warnings.push(EncodingWarning::DegenerateRange(spec.name.clone()));
            }
            out.push(normalize(spec, *x)?);
        }
        (KnobKind::Categorical, KnobValue::Level(level)) => {
            let hit = spec.levels.iter().position(|l| l == level);
            if hit.is_none() {
                warnings.push(EncodingWarning::UnknownLevel {
                    knob: spec.name.clone(),
                    level: level.clone(),
                });
            }
            out.extend((0..spec.levels.len()).map(|i| if Some(i) == hit { 1.0 } else { 0.0 }));
        }
        _ => return Err(KnobError::WrongValueKind(spec.name.clone())),
    }
    Ok(())
}

/// Free-function form of [`KnobSpace::encode`].
pub fn encode_configuration(
    space: &KnobSpace,
    config: &KnobConfiguration,
) -> Result<KnobEncoding, KnobError> {
    space.encode(config)
}

/// Deduplicated union of several spaces, first-seen order preserved.
/// Knobs shared by name must carry identical specs.
pub fn union_space(spaces: &[KnobSpace]) -> Result<KnobSpace, KnobError> {
    let mut knobs: Vec<KnobSpec> = Vec::new();
    for space in spaces {
        for spec in space.knobs() {
            match knobs.iter().find(|k| k.name == spec.name) {
                Some(existing) if existing == spec => {}
                Some(_) => return Err(KnobError::ConflictingSpec(spec.name.clone())),
                None => knobs.push(spec.clone()),
            }
        }
    }
    KnobSpace::new(knobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn space() -> KnobSpace {
        KnobSpace::new(vec![
            KnobSpec::numeric("shared_buffers", 0.0, 100.0, 50.0),
            KnobSpec::categorical("autovacuum", &["on", "off"], "on"),
            KnobSpec::numeric("work_mem", 2.0, 10.0, 4.0),
        ])
        .unwrap()
    }

    #[test]
    fn numeric_bounds_and_midpoint() {
        let s = space();
        let lo = s.encode(&KnobConfiguration::new().with("shared_buffers", 0.0)).unwrap();
        assert_eq!(lo.0[0], 0.0);
        let hi = s.encode(&KnobConfiguration::new().with("shared_buffers", 100.0)).unwrap();
        assert_eq!(hi.0[0], 1.0);
        let mid = s.encode(&KnobConfiguration::new().with("work_mem", 6.0)).unwrap();
        assert_eq!(mid.0[3], 0.5);
    }

    #[test]
    fn categorical_one_hot() {
        let s = space();
        let on = s.encode(&KnobConfiguration::new().with("autovacuum", "on")).unwrap();
        assert_eq!(&on.0[1..3], &[1.0, 0.0]);
        let off = s.encode(&KnobConfiguration::new().with("autovacuum", "off")).unwrap();
        assert_eq!(&off.0[1..3], &[0.0, 1.0]);
        assert_eq!(s.width(), 4);
    }

    #[test]
    fn unknown_knob_rejected() {
        let err = space().encode(&KnobConfiguration::new().with("nope", 1.0)).unwrap_err();
        assert_eq!(err, KnobError::UnknownKnob("nope".into()));
    }

    #[test]
    fn out_of_range_names_knob() {
        let err = space().encode(&KnobConfiguration::new().with("work_mem", 11.0)).unwrap_err();
        assert!(matches!(err, KnobError::OutOfRange { ref knob, .. } if knob == "work_mem"));
    }

    #[test]
    fn unknown_level_is_all_zero_with_warning() {
        let (enc, warnings) = space()
            .encode_with_warnings(&KnobConfiguration::new().with("autovacuum", "auto"))
            .unwrap();
        assert_eq!(&enc.0[1..3], &[0.0, 0.0]);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn degenerate_range_encodes_zero() {
        let s = KnobSpace::new(vec![KnobSpec::numeric("fixed", 3.0, 3.0, 3.0)]).unwrap();
        let (enc, warnings) = s.encode_with_warnings(&KnobConfiguration::new()).unwrap();
        assert_eq!(enc.0, vec![0.0]);
        assert_eq!(warnings, vec![EncodingWarning::DegenerateRange("fixed".into())]);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KnobSpace::new(vec![KnobSpec::numeric("a", 2.0, 1.0, 1.5)]).is_err());
        assert!(KnobSpace::new(vec![KnobSpec::categorical("c", &[], "x")]).is_err());
        assert!(KnobSpace::new(vec![KnobSpec::categorical("c", &["x", "x"], "x")]).is_err());
        let dup = KnobSpace::new(vec![
            KnobSpec::numeric("a", 0.0, 1.0, 0.0),
            KnobSpec::numeric("a", 0.0, 1.0, 0.0),
        ]);
        assert_eq!(dup.unwrap_err(), KnobError::DuplicateKnob("a".into()));
    }

    #[test]
    fn union_examples() {
        let a = KnobSpec::numeric("A", 0.0, 1.0, 0.0);
        let b = KnobSpec::numeric("B", 0.0, 1.0, 0.0);
        let c = KnobSpec::categorical("C", &["x", "y"], "x");
        let ab = KnobSpace::new(vec![a.clone(), b.clone()]).unwrap();
        let bc = KnobSpace::new(vec![b.clone(), c.clone()]).unwrap();
        let u = union_space(&[ab.clone(), bc.clone()]).unwrap();
        let names: Vec<&str> = u.knobs().iter().map(|k| k.name.as_str()).collect();
        assert_eq!(names, ["A", "B", "C"]);

        let a_wide = KnobSpace::new(vec![KnobSpec::numeric("A", 0.0, 2.0, 0.0)]).unwrap();
        let a_only = KnobSpace::new(vec![a]).unwrap();
        assert_eq!(
            union_space(&[a_only, a_wide]).unwrap_err(),
            KnobError::ConflictingSpec("A".into())
        );
        assert_eq!(union_space(&[ab.clone(), ab.clone()]).unwrap(), ab);

        // projection back onto a constituent
        let config = KnobConfiguration::new().with("B", 0.25).with("C", "y");
        let ue = u.encode(&config).unwrap();
        assert_eq!(bc.project_from(&u, &ue).unwrap(), bc.encode(&config).unwrap());
    }

    #[test]
    fn projection_fills_absent_knobs_with_default() {
        let small = KnobSpace::new(vec![KnobSpec::numeric("A", 0.0, 1.0, 0.0)]).unwrap();
        let other = KnobSpace::new(vec![KnobSpec::numeric("Z", 0.0, 4.0, 1.0)]).unwrap();
        let enc = small
            .encode(&KnobConfiguration::new().with("A", 0.5))
            .unwrap();
        assert_eq!(other.project_from(&small, &enc).unwrap().0, vec![0.25]);
    }

    fn arb_config() -> impl Strategy<Value = KnobConfiguration> {
        (0.0..=100.0f64, any::<bool>(), 2.0..=10.0f64).prop_map(|(a, on, w)| {
            KnobConfiguration::new()
                .with("shared_buffers", a)
                .with("autovacuum", if on { "on" } else { "off" })
                .with("work_mem", w)
        })
    }

    proptest! {
        #[test]
        fn encoding_is_bounded_and_deterministic(config in arb_config()) {
            let s = space();
            let e1 = s.encode(&config).unwrap();
            let e2 = s.encode(&config).unwrap();
            prop_assert_eq!(e1.len(), s.width());
            prop_assert!(e1.0.iter().all(|v| (0.0..=1.0).contains(v)));
            let bits1: Vec<u64> = e1.0.iter().map(|v| v.to_bits()).collect();
            let bits2: Vec<u64> = e2.0.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits1, bits2);
            prop_assert_eq!(e1.0[1] + e1.0[2], 1.0);
        }
    }
}
