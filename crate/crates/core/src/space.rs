//! Search domain, points in it, and the evaluation history.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimKind {
    Continuous,
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
    pub scale: Scale,
    pub lower: f64,
    pub upper: f64,
}

impl Dimension {
    pub fn continuous(name: &str, scale: Scale, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: DimKind::Continuous,
            scale,
            lower,
            upper,
        }
    }

    pub fn integer(name: &str, lower: i64, upper: i64) -> Self {
        Self {
            name: name.to_string(),
            kind: DimKind::Integer,
            scale: Scale::Linear,
            lower: lower as f64,
            upper: upper as f64,
        }
    }

    fn warp(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => v,
            Scale::Log => v.ln(),
        }
    }

    fn unwarp(&self, w: f64) -> f64 {
        match self.scale {
            Scale::Linear => w,
            Scale::Log => w.exp(),
        }
    }

    /// Native value to `[0, 1]`.
    pub fn normalize(&self, v: f64) -> f64 {
        let (lo, hi) = (self.warp(self.lower), self.warp(self.upper));
        ((self.warp(v) - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// `[0, 1]` to a native value; integer dimensions are rounded to the
    /// nearest integer with ties rounding down.
    pub fn denormalize(&self, u: f64) -> f64 {
        let (lo, hi) = (self.warp(self.lower), self.warp(self.upper));
        let v = self
            .unwarp(lo + u.clamp(0.0, 1.0) * (hi - lo))
            .clamp(self.lower, self.upper);
        match self.kind {
            DimKind::Continuous => v,
            DimKind::Integer => round_half_down(v).clamp(self.lower, self.upper),
        }
    }

    fn contains(&self, v: f64) -> bool {
        v.is_finite()
            && v >= self.lower
            && v <= self.upper
            && (self.kind == DimKind::Continuous || v.fract() == 0.0)
    }
}

pub(crate) fn round_half_down(v: f64) -> f64 {
    (v - 0.5).ceil()
}

/// The search domain: a box with per-dimension scale and type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParamSpace {
    dims: Vec<Dimension>,
}

impl HyperParamSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("search space needs at least one dimension"));
        }
        for d in &dims {
            if !(d.lower < d.upper) || !d.lower.is_finite() || !d.upper.is_finite() {
                return Err(Error::invalid(format!(
                    "dimension {:?}: need finite lower < upper",
                    d.name
                )));
            }
            if d.scale == Scale::Log && d.lower <= 0.0 {
                return Err(Error::invalid(format!(
                    "dimension {:?}: log scale needs lower > 0",
                    d.name
                )));
            }
            if d.kind == DimKind::Integer && (d.lower.fract() != 0.0 || d.upper.fract() != 0.0) {
                return Err(Error::invalid(format!(
                    "dimension {:?}: integer bounds must be integers",
                    d.name
                )));
            }
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn contains(&self, config: &HyperParamConfig) -> bool {
        config.values.len() == self.dims.len()
            && self.dims.iter().zip(&config.values).all(|(d, &v)| d.contains(v))
    }

    pub fn check(&self, config: &HyperParamConfig) -> Result<()> {
        if self.contains(config) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "config {:?} is not inside the search space",
                config.values
            )))
        }
    }

    pub fn normalize(&self, config: &HyperParamConfig) -> Vec<f64> {
        self.dims
            .iter()
            .zip(&config.values)
            .map(|(d, &v)| d.normalize(v))
            .collect()
    }

    pub fn denormalize(&self, unit: &[f64]) -> HyperParamConfig {
        HyperParamConfig::new(
            self.dims
                .iter()
                .zip(unit)
                .map(|(d, &u)| d.denormalize(u))
                .collect(),
        )
    }

    /// Uniform draw per scale: log dimensions are uniform in log space,
    /// integer dimensions uniform over their integers.
    pub fn sample_uniform(&self, rng: &mut Rng) -> HyperParamConfig {
        HyperParamConfig::new(
            self.dims
                .iter()
                .map(|d| match d.kind {
                    DimKind::Integer => rng.random_range(d.lower as i64..=d.upper as i64) as f64,
                    DimKind::Continuous => d.denormalize(rng.random::<f64>()),
                })
                .collect(),
        )
    }
}

/// A point of the search space in native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperParamConfig {
    pub values: Vec<f64>,
}

impl HyperParamConfig {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Exact bitwise key, suitable for caches.
    pub fn key(&self) -> Vec<u64> {
        self.values.iter().map(|v| v.to_bits()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub config: HyperParamConfig,
    /// Validation risk, or `+∞` for a failed training.
    pub risk: f64,
}

/// Ordered evaluation record set driving one SMBO instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    records: Vec<Record>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record. NaN risks are rejected; `+∞` marks a failure.
    pub fn push(&mut self, config: HyperParamConfig, risk: f64) -> Result<()> {
        if risk.is_nan() || risk == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("risk must be finite or +inf, got {risk}")));
        }
        self.records.push(Record { config, risk });
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records with a finite risk, i.e. the GP's observation set.
    pub fn observations(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| r.risk.is_finite())
    }

    /// Index of the minimum finite risk; ties go to the earliest record.
    pub fn best_index(&self) -> Option<usize> {
        self.best_index_in(self.records.len())
    }

    /// Like [`History::best_index`] restricted to the first `k` records.
    pub fn best_index_in(&self, k: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in self.records.iter().take(k).enumerate() {
            if r.risk.is_finite() && best.is_none_or(|(_, b)| r.risk < b) {
                best = Some((i, r.risk));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn best_risk(&self) -> Option<f64> {
        self.best_index().map(|i| self.records[i].risk)
    }

    pub fn truncated(&self, k: usize) -> History {
        History {
            records: self.records[..k.min(self.records.len())].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn space() -> HyperParamSpace {
        HyperParamSpace::new(vec![
            Dimension::continuous("c", Scale::Log, 1e-2, 1e3),
            Dimension::integer("k", 1, 50),
            Dimension::continuous("x", Scale::Linear, -5.0, 10.0),
        ])
        .unwrap()
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(HyperParamSpace::new(vec![Dimension::continuous("a", Scale::Log, 0.0, 1.0)]).is_err());
        assert!(HyperParamSpace::new(vec![Dimension::continuous("a", Scale::Linear, 1.0, 1.0)]).is_err());
        assert!(HyperParamSpace::new(vec![]).is_err());
    }

    #[test]
    fn normalize_round_trip() {
        let s = space();
        let c = HyperParamConfig::new(vec![10f64.powf(0.5), 17.0, 2.5]);
        let u = s.normalize(&c);
        assert!((u[0] - 0.5).abs() < 1e-12);
        assert!((u[2] - 0.5).abs() < 1e-12);
        let back = s.denormalize(&u);
        assert!((back.values[0] - c.values[0]).abs() < 1e-9);
        assert_eq!(back.values[1], 17.0);
        assert!(s.contains(&back));
    }

    #[test]
    fn integer_ties_round_down() {
        assert_eq!(round_half_down(2.5), 2.0);
        assert_eq!(round_half_down(2.5000001), 3.0);
        assert_eq!(round_half_down(2.4), 2.0);
        let d = Dimension::integer("k", 1, 3);
        // 0.25 of [1, 3] is exactly 1.5
        assert_eq!(d.denormalize(0.25), 1.0);
    }

    #[test]
    fn samples_stay_inside() {
        let s = space();
        let mut rng = rng_from(3, &[]);
        for _ in 0..1000 {
            assert!(s.contains(&s.sample_uniform(&mut rng)));
        }
    }

    #[test]
    fn best_index_prefers_earliest_and_skips_failures() {
        let mut h = History::new();
        let c = HyperParamConfig::new(vec![1.0]);
        h.push(c.clone(), f64::INFINITY).unwrap();
        h.push(c.clone(), 0.5).unwrap();
        h.push(c.clone(), 0.5).unwrap();
        assert_eq!(h.best_index(), Some(1));
        assert!(h.push(c, f64::NAN).is_err());
        assert_eq!(h.observations().count(), 2);
    }
}
