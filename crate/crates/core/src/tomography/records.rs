use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::state::{Axis, BlochVector, CardinalState, Projections};
use crate::discrimination::{check_header, parse_field};
use crate::error::{ReadoutError, Result};

pub const RECORDS_CSV_HEADER: &str = "prepared,axis,shots,bright_count";

/// Counts from measuring one prepared state along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TomographyRecord {
    pub prepared: CardinalState,
    pub axis: Axis,
    pub shots: u64,
    pub bright_count: u64,
}

impl TomographyRecord {
    pub fn new(prepared: CardinalState, axis: Axis, shots: u64, bright_count: u64) -> Result<Self> {
        let r = Self { prepared, axis, shots, bright_count };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(ReadoutError::usage(format!(
                "record {}/{} has zero shots",
                self.prepared,
                self.axis.label()
            )));
        }
        if self.bright_count > self.shots {
            return Err(ReadoutError::usage(format!(
                "record {}/{}: bright_count {} exceeds shots {}",
                self.prepared,
                self.axis.label(),
                self.bright_count,
                self.shots
            )));
        }
        Ok(())
    }

    /// `1 - 2 * bright / shots`; the dark outcome is the `+1` eigenvalue.
    pub fn projection(&self) -> f64 {
        1.0 - 2.0 * self.bright_count as f64 / self.shots as f64
    }
}

/// What to do with a prepared state lacking an orthogonal-axis record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingAxisPolicy {
    /// Missing records are a usage error.
    #[default]
    Reject,
    /// Borrow the component from the opposite state on the same axis, or 0
    /// when that is missing too.
    FillBySymmetry,
}

/// Bloch vector for every prepared state that appears in `records`.
///
/// Repeated `(prepared, axis)` records are pooled. The parallel axis is
/// always required.
pub fn projections_from_records(
    records: &[TomographyRecord],
    policy: MissingAxisPolicy,
) -> Result<Projections> {
    let mut pooled: BTreeMap<(CardinalState, Axis), (u64, u64)> = BTreeMap::new();
    for r in records {
        r.validate()?;
        let e = pooled.entry((r.prepared, r.axis)).or_default();
        e.0 += r.shots;
        e.1 += r.bright_count;
    }
    let measured = |s: CardinalState, a: Axis| {
        pooled
            .get(&(s, a))
            .map(|&(shots, bright)| 1.0 - 2.0 * bright as f64 / shots as f64)
    };

    let mut out = Projections::new();
    for state in CardinalState::ALL {
        if !pooled.keys().any(|(s, _)| *s == state) {
            continue;
        }
        let mut v = BlochVector::default();
        for axis in Axis::ALL {
            let value = match measured(state, axis) {
                Some(p) => p,
                None if axis == state.axis() => {
                    return Err(ReadoutError::usage(format!(
                        "state {state} has no record on its own axis {}",
                        axis.label()
                    )))
                }
                None => match policy {
                    MissingAxisPolicy::Reject => {
                        return Err(ReadoutError::usage(format!(
                            "state {state} has no record on axis {}",
                            axis.label()
                        )))
                    }
                    MissingAxisPolicy::FillBySymmetry => {
                        measured(state.opposite(), axis).unwrap_or(0.0)
                    }
                },
            };
            v.set_component(axis, value);
        }
        out.insert(state, v);
    }
    Ok(out)
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<TomographyRecord>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, RECORDS_CSV_HEADER)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(TomographyRecord::new(
            parse_field(&rec, 0)?,
            parse_field(&rec, 1)?,
            parse_field(&rec, 2)?,
            parse_field(&rec, 3)?,
        )?);
    }
    Ok(out)
}

pub fn write_records_csv<W: Write>(out: W, records: &[TomographyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORDS_CSV_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.prepared.label().to_string(),
            r.axis.label().to_string(),
            r.shots.to_string(),
            r.bright_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
