//! Combination of per-source error estimates into shelving, initialization
//! and overall error for one prepared state.
//!
//! Shelving uses two pulses; a shot is lost only if both fail, so the
//! per-pulse sums multiply. Sources marked `excluded_from_product` (and every
//! [`Pulse::Shared`] source) act on the sequence as a whole and are added
//! after the product.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ReadoutError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pulse {
    Pulse1,
    Pulse2,
    Shared,
    Initialization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub source: String,
    pub pulse: Pulse,
    /// Probability.
    pub value: f64,
    #[serde(default)]
    pub excluded_from_product: bool,
}

impl BudgetEntry {
    pub fn new(source: impl Into<String>, pulse: Pulse, value: f64) -> Result<Self> {
        let e = Self {
            source: source.into(),
            pulse,
            value,
            excluded_from_product: pulse == Pulse::Shared,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn excluded(mut self) -> Self {
        self.excluded_from_product = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.value) {
            return Err(ReadoutError::domain(format!(
                "budget entry `{}` must be a probability, got {}",
                self.source, self.value
            )));
        }
        Ok(())
    }

    fn in_product(&self) -> bool {
        !self.excluded_from_product && self.pulse != Pulse::Shared
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub pulse1_sum: f64,
    pub pulse2_sum: f64,
    pub excluded_sum: f64,
    pub initialization_total: f64,
    pub shelving_total: f64,
    pub overall: f64,
}

/// `shelving = Σ pulse1 · Σ pulse2 + Σ excluded`,
/// `overall = Σ initialization + shelving`.
///
/// An empty pulse group sums to 0, so a single-pulse budget needs an explicit
/// pulse-2 entry of value 1.
pub fn combine(entries: &[BudgetEntry]) -> Result<BudgetReport> {
    let (mut p1, mut p2, mut excluded, mut init) = (0.0, 0.0, 0.0, 0.0);
    for e in entries {
        e.validate()?;
        match e.pulse {
            Pulse::Initialization => init += e.value,
            Pulse::Pulse1 if e.in_product() => p1 += e.value,
            Pulse::Pulse2 if e.in_product() => p2 += e.value,
            _ => excluded += e.value,
        }
    }
    let shelving_total = p1 * p2 + excluded;
    Ok(BudgetReport {
        pulse1_sum: p1,
        pulse2_sum: p2,
        excluded_sum: excluded,
        initialization_total: init,
        shelving_total,
        overall: init + shelving_total,
    })
}

/// A single entry list, or named columns (e.g. one per prepared state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BudgetConfig {
    Single(Vec<BudgetEntry>),
    Columns(BTreeMap<String, Vec<BudgetEntry>>),
}

impl BudgetConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn columns(&self) -> BTreeMap<String, &[BudgetEntry]> {
        match self {
            Self::Single(v) => BTreeMap::from([("budget".to_string(), v.as_slice())]),
            Self::Columns(m) => m.iter().map(|(k, v)| (k.clone(), v.as_slice())).collect(),
        }
    }

    pub fn combine(&self) -> Result<BTreeMap<String, BudgetReport>> {
        self.columns()
            .into_iter()
            .map(|(k, v)| Ok((k, combine(v)?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const U: f64 = 1e-4;

    pub(crate) fn up_column() -> Vec<BudgetEntry> {
        let mut v = vec![
            BudgetEntry::new("coherent off-resonance", Pulse::Initialization, 1.0 * U).unwrap(),
            BudgetEntry::new("incoherent off-resonance", Pulse::Initialization, 0.5 * U).unwrap(),
            BudgetEntry::new("sideband excitation", Pulse::Shared, 0.5 * U).unwrap(),
            BudgetEntry::new("decay during shelving", Pulse::Shared, 0.5 * U).unwrap(),
        ];
        let rows = [
            ("axial motion", 0.1, 1.0),
            ("radial motion", 3.0, 10.0),
            ("beam pointing", 30.0, 30.0),
            ("frequency drift", 30.0, 30.0),
            ("laser linewidth", 20.0, 20.0),
            ("magnetic noise", 15.0, 45.0),
        ];
        for (name, a, b) in rows {
            v.push(BudgetEntry::new(name, Pulse::Pulse1, a * U).unwrap());
            v.push(BudgetEntry::new(name, Pulse::Pulse2, b * U).unwrap());
        }
        v
    }

    #[test]
    fn up_column_matches_hand_product() {
        let r = combine(&up_column()).unwrap();
        assert!((r.pulse1_sum - 98.1e-4).abs() < 1e-15);
        assert!((r.pulse2_sum - 136e-4).abs() < 1e-15);
        assert!((r.shelving_total - (98.1e-4 * 136e-4 + 1e-4)).abs() < 1e-15);
        assert!((r.overall - 3.83416e-4).abs() < 1e-9);
    }

    #[test]
    fn down_column() {
        let v = vec![
            BudgetEntry::new("coherent off-resonance", Pulse::Initialization, 1.0 * U).unwrap(),
            BudgetEntry::new("incoherent off-resonance", Pulse::Initialization, 0.5 * U).unwrap(),
            BudgetEntry::new("coherent off-resonance", Pulse::Shared, 2.0 * U).unwrap(),
            BudgetEntry::new("incoherent off-resonance", Pulse::Shared, 1.0 * U).unwrap(),
        ];
        let r = combine(&v).unwrap();
        assert!((r.shelving_total - 3e-4).abs() < 1e-15);
        assert!((r.overall - 4.5e-4).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cases() {
        let zero = combine(&[BudgetEntry::new("a", Pulse::Pulse1, 0.0).unwrap()]).unwrap();
        assert_eq!(zero.overall, 0.0);
        assert_eq!(combine(&[]).unwrap().overall, 0.0);

        let single = [
            BudgetEntry::new("a", Pulse::Pulse1, 0.01).unwrap(),
            BudgetEntry::new("b", Pulse::Pulse1, 0.02).unwrap(),
            BudgetEntry::new("no second pulse", Pulse::Pulse2, 1.0).unwrap(),
            BudgetEntry::new("c", Pulse::Pulse1, 0.005).unwrap().excluded(),
        ];
        let r = combine(&single).unwrap();
        assert!((r.shelving_total - 0.035).abs() < 1e-15);
    }

    #[test]
    fn shared_is_never_multiplied() {
        let mut e = BudgetEntry::new("s", Pulse::Shared, 0.1).unwrap();
        e.excluded_from_product = false;
        let r = combine(&[e]).unwrap();
        assert_eq!(r.excluded_sum, 0.1);
        assert_eq!(r.shelving_total, 0.1);
    }

    #[test]
    fn invalid_values() {
        assert!(BudgetEntry::new("x", Pulse::Pulse1, -1e-4).is_err());
        assert!(BudgetEntry::new("x", Pulse::Pulse1, f64::NAN).is_err());
        let mut e = BudgetEntry::new("x", Pulse::Pulse1, 0.0).unwrap();
        e.value = 2.0;
        assert!(matches!(combine(&[e]), Err(ReadoutError::Domain(_))));
    }

    #[test]
    fn config_shapes() {
        let list = r#"[{"source":"a","pulse":"pulse1","value":0.1},
                       {"source":"b","pulse":"pulse2","value":0.2},
                       {"source":"c","pulse":"shared","value":0.01,"excluded_from_product":true}]"#;
        let cfg = BudgetConfig::from_json(list).unwrap();
        let r = cfg.combine().unwrap();
        assert!((r["budget"].shelving_total - 0.03).abs() < 1e-15);

        let cols = format!(r#"{{"up": {list}, "down": []}}"#);
        let cfg = BudgetConfig::from_json(&cols).unwrap();
        let r = cfg.combine().unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r["down"].overall, 0.0);
        assert!(BudgetConfig::from_json(r#"{"up": 3}"#).is_err());
    }
}
