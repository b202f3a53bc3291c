//! Per-replication records (the rows of `reps.csv`) and aggregates.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::SCHEMA_VERSION;
use crate::error::{Error, Result};

/// One measured value. `point` indexes the plan's query points and
/// `functional` holds a functional id; both are empty for quantities taken
/// over all points or functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub schema_version: u32,
    pub replication: usize,
    pub n: usize,
    pub k: usize,
    pub point: Option<usize>,
    pub functional: Option<String>,
    pub metric: String,
    pub value: f64,
}

impl Record {
    pub fn new(
        replication: usize,
        n: usize,
        k: usize,
        point: Option<usize>,
        functional: Option<&str>,
        metric: &str,
        value: f64,
    ) -> Self {
        Record {
            schema_version: SCHEMA_VERSION,
            replication,
            n,
            k,
            point,
            functional: functional.map(str::to_string),
            metric: metric.to_string(),
            value,
        }
    }
}

pub fn write_records<W: Write>(records: &[Record], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<Record>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let r: Record = row?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Verification(format!(
                "record schema version {} (expected {SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        out.push(r);
    }
    Ok(out)
}

/// Summary value keyed like a record; `param` carries an extra scalar such
/// as the radius inflation `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<f64>,
    /// Non-finite values are stored as `null`.
    #[serde(with = "finite_or_null")]
    pub value: f64,
}

impl Aggregate {
    pub fn new(name: &str, value: f64) -> Self {
        Aggregate {
            name: name.to_string(),
            n: None,
            k: None,
            point: None,
            functional: None,
            param: None,
            value,
        }
    }

    pub fn setting(mut self, n: usize, k: usize) -> Self {
        self.n = Some(n);
        self.k = Some(k);
        self
    }

    pub fn point(mut self, p: usize) -> Self {
        self.point = Some(p);
        self
    }

    pub fn functional(mut self, g: &str) -> Self {
        self.functional = Some(g.to_string());
        self
    }

    pub fn param(mut self, v: f64) -> Self {
        self.param = Some(v);
        self
    }

    fn same_key(&self, o: &Aggregate) -> bool {
        self.name == o.name
            && self.n == o.n
            && self.k == o.k
            && self.point == o.point
            && self.functional == o.functional
            && self.param.map(f64::to_bits) == o.param.map(f64::to_bits)
    }
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Checks stored aggregates against recomputed ones: same keys in the same
/// order, values within `tol` relative (absolute below 1), non-finite
/// matching non-finite.
pub fn compare_aggregates(stored: &[Aggregate], recomputed: &[Aggregate], tol: f64) -> Result<()> {
    if stored.len() != recomputed.len() {
        return Err(Error::Verification(format!(
            "{} stored aggregates, {} recomputed",
            stored.len(),
            recomputed.len()
        )));
    }
    for (s, r) in stored.iter().zip(recomputed) {
        if !s.same_key(r) {
            return Err(Error::Verification(format!("aggregate key mismatch: {s:?} vs {r:?}")));
        }
        let ok = match (s.value.is_finite(), r.value.is_finite()) {
            (true, true) => (s.value - r.value).abs() <= tol * s.value.abs().max(1.0),
            (false, false) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::Verification(format!(
                "aggregate {} (n={:?}, k={:?}, point={:?}, g={:?}) stored {} but recomputed {}",
                s.name, s.n, s.k, s.point, s.functional, s.value, r.value
            )));
        }
    }
    Ok(())
}

/// Record values grouped by key, each group in record order.
pub(crate) struct RecordIndex {
    map: HashMap<(usize, usize, Option<usize>, Option<String>, String), Vec<f64>>,
}

impl RecordIndex {
    pub fn new(records: &[Record]) -> Self {
        let mut map: HashMap<_, Vec<f64>> = HashMap::new();
        for r in records {
            map.entry((r.n, r.k, r.point, r.functional.clone(), r.metric.clone()))
                .or_default()
                .push(r.value);
        }
        RecordIndex { map }
    }

    pub fn get(&self, n: usize, k: usize, point: Option<usize>, functional: Option<&str>, metric: &str) -> &[f64] {
        let key = (n, k, point, functional.map(str::to_string), metric.to_string());
        self.map.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }
}
