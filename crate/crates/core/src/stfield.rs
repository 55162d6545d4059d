//! Spatio-temporal fields: one value per (unit, variable, time, replication).
//!
//! Values are stored densely with an explicit missingness mask. Time indices
//! are zero-based; `time_origin` maps index `t` to the label `time_origin + t`
//! used in CSV files (a simulation step or a calendar year).

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("raw observation {0} has no unit assignment")]
    Assignment(u64),
    #[error("invalid value at (unit {unit}, variable {variable}, time {time}, replication {replication}): {value}")]
    NonFinite {
        unit: usize,
        variable: usize,
        time: usize,
        replication: usize,
        value: f64,
    },
    #[error("variable names must be distinct, `{0}` repeated")]
    DuplicateName(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Extents of a field along its four axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub units: usize,
    pub variables: usize,
    pub times: usize,
    pub replications: usize,
}

impl Dims {
    pub fn new(units: usize, variables: usize, times: usize, replications: usize) -> Self {
        Self {
            units,
            variables,
            times,
            replications,
        }
    }

    pub fn len(&self) -> usize {
        self.units * self.variables * self.times * self.replications
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<(), FieldError> {
        if self.units < 1 || self.variables < 2 || self.times < 2 || self.replications < 1 {
            return Err(FieldError::Shape(format!(
                "need I>=1, J>=2, T>=2, K>=1, got I={}, J={}, T={}, K={}",
                self.units, self.variables, self.times, self.replications
            )));
        }
        Ok(())
    }
}

/// Missing cells hold NaN in `values` as well as `true` in `missing`.
#[derive(Debug, Clone)]
pub struct SpatioTemporalField {
    dims: Dims,
    values: Vec<f64>,
    missing: Vec<bool>,
    variable_names: Vec<String>,
    unit_labels: Option<Vec<String>>,
    time_origin: i64,
}

impl PartialEq for SpatioTemporalField {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.variable_names == other.variable_names
            && self.unit_labels == other.unit_labels
            && self.time_origin == other.time_origin
            && self.missing == other.missing
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.missing)
                .all(|((a, b), &m)| m || a.to_bits() == b.to_bits())
    }
}

impl SpatioTemporalField {
    /// A field with every cell missing.
    pub fn empty(dims: Dims, variable_names: Vec<String>) -> Result<Self, FieldError> {
        dims.validate()?;
        check_names(&variable_names, dims.variables)?;
        Ok(Self {
            dims,
            values: vec![f64::NAN; dims.len()],
            missing: vec![true; dims.len()],
            variable_names,
            unit_labels: None,
            time_origin: 0,
        })
    }

    /// Builds a complete field from a closure over `(unit, variable, time, replication)`.
    pub fn from_fn<F>(dims: Dims, variable_names: Vec<String>, mut f: F) -> Result<Self, FieldError>
    where
        F: FnMut(usize, usize, usize, usize) -> f64,
    {
        let mut field = Self::empty(dims, variable_names)?;
        for k in 0..dims.replications {
            for j in 0..dims.variables {
                for t in 0..dims.times {
                    for i in 0..dims.units {
                        field.set(i, j, t, k, f(i, j, t, k))?;
                    }
                }
            }
        }
        Ok(field)
    }

    pub fn with_time_origin(mut self, origin: i64) -> Self {
        self.time_origin = origin;
        self
    }

    pub fn with_unit_labels(mut self, labels: Vec<String>) -> Result<Self, FieldError> {
        if labels.len() != self.dims.units {
            return Err(FieldError::Shape(format!(
                "{} unit labels for {} units",
                labels.len(),
                self.dims.units
            )));
        }
        self.unit_labels = Some(labels);
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn time_origin(&self) -> i64 {
        self.time_origin
    }

    pub fn variable_index(&self, name: &str) -> Result<usize, FieldError> {
        self.variable_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| FieldError::UnknownVariable(name.to_string()))
    }

    pub fn unit_label(&self, i: usize) -> String {
        match &self.unit_labels {
            Some(labels) => labels[i].clone(),
            None => i.to_string(),
        }
    }

    pub fn unit_index(&self, label: &str) -> Result<usize, FieldError> {
        let found = match &self.unit_labels {
            Some(labels) => labels.iter().position(|l| l == label),
            None => label.parse::<usize>().ok().filter(|&i| i < self.dims.units),
        };
        found.ok_or_else(|| FieldError::UnknownUnit(label.to_string()))
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, t: usize, k: usize) -> usize {
        debug_assert!(i < self.dims.units && j < self.dims.variables);
        debug_assert!(t < self.dims.times && k < self.dims.replications);
        ((k * self.dims.variables + j) * self.dims.times + t) * self.dims.units + i
    }

    /// Value at a cell, `None` when missing.
    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize, k: usize) -> Option<f64> {
        let o = self.offset(i, j, t, k);
        if self.missing[o] {
            None
        } else {
            Some(self.values[o])
        }
    }

    pub fn set(
        &mut self,
        i: usize,
        j: usize,
        t: usize,
        k: usize,
        value: f64,
    ) -> Result<(), FieldError> {
        if !value.is_finite() {
            return Err(FieldError::NonFinite {
                unit: i,
                variable: j,
                time: t,
                replication: k,
                value,
            });
        }
        let o = self.offset(i, j, t, k);
        self.values[o] = value;
        self.missing[o] = false;
        Ok(())
    }

    pub fn set_missing(&mut self, i: usize, j: usize, t: usize, k: usize) {
        let o = self.offset(i, j, t, k);
        self.missing[o] = true;
        self.values[o] = f64::NAN;
    }

    pub fn is_missing(&self, i: usize, j: usize, t: usize, k: usize) -> bool {
        self.missing[self.offset(i, j, t, k)]
    }

    /// Values of all units for one (variable, time, replication), NaN where missing.
    #[inline]
    pub fn unit_slice(&self, j: usize, t: usize, k: usize) -> &[f64] {
        let start = self.offset(0, j, t, k);
        &self.values[start..start + self.dims.units]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// First differences in time. The difference between `t` and `t + 1` is
    /// stored at index `t` and labelled with the later time.
    pub fn variations(&self) -> Result<Self, FieldError> {
        if self.dims.times < 2 {
            return Err(FieldError::Shape(format!(
                "variations need at least 2 time steps, got {}",
                self.dims.times
            )));
        }
        let dims = Dims {
            times: self.dims.times - 1,
            ..self.dims
        };
        let mut values = vec![f64::NAN; dims.len()];
        let mut missing = vec![true; dims.len()];
        let mut o = 0;
        for k in 0..dims.replications {
            for j in 0..dims.variables {
                for t in 0..dims.times {
                    for i in 0..dims.units {
                        if let (Some(a), Some(b)) = (self.get(i, j, t, k), self.get(i, j, t + 1, k))
                        {
                            values[o] = b - a;
                            missing[o] = false;
                        }
                        o += 1;
                    }
                }
            }
        }
        Ok(Self {
            dims,
            values,
            missing,
            variable_names: self.variable_names.clone(),
            unit_labels: self.unit_labels.clone(),
            time_origin: self.time_origin + 1,
        })
    }

    /// Stacks fields with identical unit/variable/time layout along the replication axis.
    pub fn stack_replications(fields: &[Self]) -> Result<Self, FieldError> {
        let first = fields
            .first()
            .ok_or_else(|| FieldError::Shape("no fields to stack".into()))?;
        let mut dims = first.dims;
        dims.replications = 0;
        for f in fields {
            let d = f.dims;
            if d.units != dims.units || d.variables != dims.variables || d.times != dims.times {
                return Err(FieldError::Shape("stacked fields differ in shape".into()));
            }
            if f.variable_names != first.variable_names {
                return Err(FieldError::Shape(
                    "stacked fields differ in variables".into(),
                ));
            }
            dims.replications += d.replications;
        }
        let mut values = Vec::with_capacity(dims.len());
        let mut missing = Vec::with_capacity(dims.len());
        for f in fields {
            values.extend_from_slice(&f.values);
            missing.extend_from_slice(&f.missing);
        }
        Ok(Self {
            dims,
            values,
            missing,
            variable_names: first.variable_names.clone(),
            unit_labels: first.unit_labels.clone(),
            time_origin: first.time_origin,
        })
    }

    /// Sidecar metadata describing this field.
    pub fn metadata(&self) -> FieldMetadata {
        FieldMetadata {
            dims: self.dims,
            variable_names: self.variable_names.clone(),
            unit_labels: self.unit_labels.clone(),
            time_origin: self.time_origin,
        }
    }

    /// Long-format CSV `unit,variable,time,replication,value`; missing cells are omitted.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), FieldError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["unit", "variable", "time", "replication", "value"])?;
        let labels: Vec<String> = (0..self.dims.units).map(|i| self.unit_label(i)).collect();
        for k in 0..self.dims.replications {
            for t in 0..self.dims.times {
                let time = (self.time_origin + t as i64).to_string();
                for i in 0..self.dims.units {
                    for j in 0..self.dims.variables {
                        if let Some(v) = self.get(i, j, t, k) {
                            w.write_record([
                                labels[i].as_str(),
                                self.variable_names[j].as_str(),
                                time.as_str(),
                                k.to_string().as_str(),
                                v.to_string().as_str(),
                            ])?;
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the long CSV format; cells absent from the file are missing.
    pub fn read_csv<R: Read>(reader: R, meta: &FieldMetadata) -> Result<Self, FieldError> {
        let mut field =
            Self::empty(meta.dims, meta.variable_names.clone())?.with_time_origin(meta.time_origin);
        if let Some(labels) = &meta.unit_labels {
            field = field.with_unit_labels(labels.clone())?;
        }
        let mut r = csv::Reader::from_reader(reader);
        for row in r.deserialize::<LongRow>() {
            let row = row?;
            let i = field.unit_index(&row.unit)?;
            let j = field.variable_index(&row.variable)?;
            let t = row.time - meta.time_origin;
            if t < 0 || t as usize >= meta.dims.times {
                return Err(FieldError::Shape(format!(
                    "time {} outside the field",
                    row.time
                )));
            }
            if row.replication >= meta.dims.replications {
                return Err(FieldError::Shape(format!(
                    "replication {} outside the field",
                    row.replication
                )));
            }
            field.set(i, j, t as usize, row.replication, row.value)?;
        }
        Ok(field)
    }
}

/// JSON sidecar accompanying a long-format CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub dims: Dims,
    pub variable_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_labels: Option<Vec<String>>,
    #[serde(default)]
    pub time_origin: i64,
}

impl FieldMetadata {
    pub fn to_json(&self) -> Result<String, FieldError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, FieldError> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Deserialize)]
struct LongRow {
    unit: String,
    variable: String,
    time: i64,
    replication: usize,
    value: f64,
}

fn check_names(names: &[String], expected: usize) -> Result<(), FieldError> {
    if names.len() != expected {
        return Err(FieldError::Shape(format!(
            "{} variable names for {} variables",
            names.len(),
            expected
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(FieldError::DuplicateName(n.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    Mean,
    Sum,
    Min,
    Max,
}

/// Correspondence from raw observations to spatial units.
#[derive(Debug, Clone)]
pub struct AggregationSpec {
    pub mode: AggregationMode,
    pub assignment: HashMap<u64, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawObservation {
    pub raw_index: u64,
    pub variable: usize,
    pub time: usize,
    pub replication: usize,
    pub value: f64,
}

/// Combines raw observations into a field; cells receiving nothing are missing.
pub fn aggregate(
    raw: &[RawObservation],
    spec: &AggregationSpec,
    dims: Dims,
    variable_names: Vec<String>,
) -> Result<SpatioTemporalField, FieldError> {
    let mut field = SpatioTemporalField::empty(dims, variable_names)?;
    // (sum or running extremum, count) per cell
    let mut acc: BTreeMap<(usize, usize, usize, usize), (f64, usize)> = BTreeMap::new();
    for obs in raw {
        let &unit = spec
            .assignment
            .get(&obs.raw_index)
            .ok_or(FieldError::Assignment(obs.raw_index))?;
        if unit >= dims.units
            || obs.variable >= dims.variables
            || obs.time >= dims.times
            || obs.replication >= dims.replications
        {
            return Err(FieldError::Shape(format!(
                "observation {} at (unit {unit}, variable {}, time {}, replication {}) outside {:?}",
                obs.raw_index, obs.variable, obs.time, obs.replication, dims
            )));
        }
        if !obs.value.is_finite() {
            return Err(FieldError::NonFinite {
                unit,
                variable: obs.variable,
                time: obs.time,
                replication: obs.replication,
                value: obs.value,
            });
        }
        let key = (unit, obs.variable, obs.time, obs.replication);
        acc.entry(key)
            .and_modify(|(a, n)| {
                *a = match spec.mode {
                    AggregationMode::Mean | AggregationMode::Sum => *a + obs.value,
                    AggregationMode::Min => a.min(obs.value),
                    AggregationMode::Max => a.max(obs.value),
                };
                *n += 1;
            })
            .or_insert((obs.value, 1));
    }
    for ((i, j, t, k), (a, n)) in acc {
        let v = match spec.mode {
            AggregationMode::Mean => a / n as f64,
            _ => a,
        };
        field.set(i, j, t, k, v)?;
    }
    Ok(field)
}
