//! Domain records and faceted filtering.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Attribute value of a domain record: text or number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Text(String),
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Text(s.to_string())
    }
}

impl From<f64> for Scalar {
    fn from(n: f64) -> Self {
        Scalar::Number(n)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Number(n) => write!(f, "{n}"),
            Scalar::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRecord {
    pub id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, Scalar>,
}

impl DomainRecord {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), attributes: BTreeMap::new() }
    }

    pub fn with(mut self, name: &str, value: impl Into<Scalar>) -> Self {
        self.attributes.insert(name.to_string(), value.into());
        self
    }
}

/// Constraint on one attribute. An empty `allowed_values` set is no constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub attribute: String,
    #[serde(default)]
    pub allowed_values: Vec<Scalar>,
}

impl FilterSpec {
    pub fn new(attribute: &str, values: impl IntoIterator<Item = Scalar>) -> Self {
        let mut allowed_values: Vec<Scalar> = Vec::new();
        for v in values {
            if !allowed_values.contains(&v) {
                allowed_values.push(v);
            }
        }
        Self { attribute: attribute.to_string(), allowed_values }
    }

    fn admits(&self, record: &DomainRecord) -> bool {
        if self.allowed_values.is_empty() {
            return true;
        }
        record
            .attributes
            .get(&self.attribute)
            .is_some_and(|v| self.allowed_values.contains(v))
    }
}

/// Records admitted by every filter (conjunction across filters, disjunction
/// within one filter's values). Input order is preserved.
pub fn filter_records<'a>(records: &'a [DomainRecord], filters: &[FilterSpec]) -> Vec<&'a DomainRecord> {
    records.iter().filter(|r| filters.iter().all(|f| f.admits(r))).collect()
}
