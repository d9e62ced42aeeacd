//! Entity data model and collection configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of `f32` components.
///
/// Construction through [`Vector::new`] enforces the invariants (at least
/// one component, all finite). `From<Vec<f32>>` does not, so that untrusted
/// input can be carried to [`validate_entity`] and rejected there with a
/// precise error.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(components: Vec<f32>) -> Result<Self> {
        let v = Vector(components);
        v.validate()?;
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::EmptyVector);
        }
        check_finite("vector", &self.0)
    }
}

pub(crate) fn check_finite(field: &'static str, components: &[f32]) -> Result<()> {
    match components.iter().position(|c| !c.is_finite()) {
        Some(index) => Err(Error::NonFiniteComponent { field, index }),
        None => Ok(()),
    }
}

impl Deref for Vector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl From<Vec<f32>> for Vector {
    fn from(components: Vec<f32>) -> Self {
        Vector(components)
    }
}

impl From<&[f32]> for Vector {
    fn from(components: &[f32]) -> Self {
        Vector(components.to_vec())
    }
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &[f32]) -> Result<Vector> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(Vector(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect()))
}

/// A single metadata value. Untagged in JSON: strings, integers, floats and
/// booleans map to their natural JSON counterparts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetadataValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl MetadataValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            MetadataValue::Bool(_) => ValueKind::Bool,
            MetadataValue::Int(_) => ValueKind::Int,
            MetadataValue::Float(_) => ValueKind::Float,
            MetadataValue::Text(_) => ValueKind::Text,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, MetadataValue::Int(_) | MetadataValue::Float(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueKind {
    Bool,
    Int,
    Float,
    Text,
}

impl From<&str> for MetadataValue {
    fn from(s: &str) -> Self {
        MetadataValue::Text(s.to_owned())
    }
}

impl From<String> for MetadataValue {
    fn from(s: String) -> Self {
        MetadataValue::Text(s)
    }
}

impl From<i64> for MetadataValue {
    fn from(v: i64) -> Self {
        MetadataValue::Int(v)
    }
}

impl From<f64> for MetadataValue {
    fn from(v: f64) -> Self {
        MetadataValue::Float(v)
    }
}

impl From<bool> for MetadataValue {
    fn from(v: bool) -> Self {
        MetadataValue::Bool(v)
    }
}

/// Flat metadata map; keys iterate in sorted order.
pub type Metadata = BTreeMap<String, MetadataValue>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: u64,
    pub vector: Vector,
    #[serde(default)]
    pub metadata: Metadata,
}

impl Entity {
    pub fn new(id: u64, vector: impl Into<Vector>) -> Self {
        Entity {
            id,
            vector: vector.into(),
            metadata: Metadata::new(),
        }
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<MetadataValue>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Cosine,
    Euclidean,
    #[serde(alias = "dot")]
    DotProduct,
}

impl DistanceMetric {
    pub fn as_u8(self) -> u8 {
        match self {
            DistanceMetric::Cosine => 0,
            DistanceMetric::Euclidean => 1,
            DistanceMetric::DotProduct => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(DistanceMetric::Cosine),
            1 => Some(DistanceMetric::Euclidean),
            2 => Some(DistanceMetric::DotProduct),
            _ => None,
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::DotProduct => "dot_product",
        })
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(DistanceMetric::Cosine),
            "euclidean" | "l2" => Ok(DistanceMetric::Euclidean),
            "dot_product" | "dot" | "ip" => Ok(DistanceMetric::DotProduct),
            other => Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

pub const DEFAULT_M: usize = 16;
pub const DEFAULT_EF_CONSTRUCTION: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IndexChoice {
    Flat,
    Hnsw { m: usize, ef_construction: usize },
}

impl Default for IndexChoice {
    fn default() -> Self {
        IndexChoice::Hnsw {
            m: DEFAULT_M,
            ef_construction: DEFAULT_EF_CONSTRUCTION,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QuantizationMode {
    #[default]
    None,
    /// `m` sub-vectors, `k` centroids per sub-space.
    Pq { m: usize, k: usize },
    /// `m` hyperplanes.
    Bq { m: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionConfig {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub metric: DistanceMetric,
    #[serde(default)]
    pub index: IndexChoice,
    #[serde(default)]
    pub quantization: QuantizationMode,
}

impl CollectionConfig {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        CollectionConfig {
            name: name.into(),
            dim,
            metric: DistanceMetric::default(),
            index: IndexChoice::default(),
            quantization: QuantizationMode::default(),
        }
    }

    pub fn metric(mut self, metric: DistanceMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn flat(mut self) -> Self {
        self.index = IndexChoice::Flat;
        self
    }

    pub fn hnsw(mut self, m: usize, ef_construction: usize) -> Self {
        self.index = IndexChoice::Hnsw { m, ef_construction };
        self
    }

    pub fn quantization(mut self, mode: QuantizationMode) -> Self {
        self.quantization = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        if self.name.is_empty() {
            return invalid("name must be non-empty".into());
        }
        // names double as directory names on disk
        if self.name == "."
            || self.name == ".."
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        {
            return invalid(format!(
                "name `{}` may only contain ASCII letters, digits, `_`, `-` and `.`",
                self.name
            ));
        }
        if self.dim == 0 {
            return invalid("dim must be positive".into());
        }
        if let IndexChoice::Hnsw { m, ef_construction } = self.index {
            if m < 2 {
                return invalid(format!("hnsw m must be >= 2, got {m}"));
            }
            if ef_construction < m {
                return invalid(format!(
                    "hnsw ef_construction ({ef_construction}) must be >= m ({m})"
                ));
            }
        }
        match self.quantization {
            QuantizationMode::None => {}
            QuantizationMode::Pq { m, k } => {
                if m == 0 || self.dim % m != 0 {
                    return invalid(format!("pq m ({m}) must divide dim ({})", self.dim));
                }
                if !(2..=256).contains(&k) {
                    return invalid(format!("pq k must be in 2..=256, got {k}"));
                }
            }
            QuantizationMode::Bq { m } => {
                if m == 0 {
                    return invalid("bq m must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Checks `entity` against the type invariants and `config`.
pub fn validate_entity(entity: &Entity, config: &CollectionConfig) -> Result<()> {
    if entity.vector.dim() != config.dim {
        return Err(Error::DimensionMismatch {
            field: "vector",
            expected: config.dim,
            actual: entity.vector.dim(),
        });
    }
    check_finite("vector", &entity.vector)?;
    for (key, value) in &entity.metadata {
        if let MetadataValue::Float(f) = value {
            if !f.is_finite() {
                return Err(Error::NonFiniteMetadata(key.clone()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validate_entity_examples() {
        let config = CollectionConfig::new("c", 4);
        assert!(validate_entity(&Entity::new(1, vec![1.0, 2.0, 3.0, 4.0]), &config).is_ok());
        let err = validate_entity(&Entity::new(1, vec![1.0, 2.0, 3.0]), &config).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch { field: "vector", expected: 4, actual: 3 }
        ));
        let err =
            validate_entity(&Entity::new(1, vec![1.0, f32::NAN, 3.0, 4.0]), &config).unwrap_err();
        assert!(matches!(err, Error::NonFiniteComponent { index: 1, .. }));
        assert!(err.to_string().contains("vector"));
    }

    #[test]
    fn normalize_examples() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-7 && (v[1] - 0.8).abs() < 1e-7);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn config_rules() {
        assert!(CollectionConfig::new("ok", 8).validate().is_ok());
        let pq = CollectionConfig::new("pq", 10).quantization(QuantizationMode::Pq { m: 3, k: 16 });
        assert!(matches!(pq.validate(), Err(Error::InvalidConfig(_))));
        let pq = CollectionConfig::new("pq", 12).quantization(QuantizationMode::Pq { m: 3, k: 257 });
        assert!(pq.validate().is_err());
        assert!(CollectionConfig::new("h", 4).hnsw(1, 10).validate().is_err());
        assert!(CollectionConfig::new("h", 4).hnsw(8, 4).validate().is_err());
        assert!(CollectionConfig::new("", 4).validate().is_err());
        assert!(CollectionConfig::new("../x", 4).validate().is_err());
        assert_eq!(DistanceMetric::default(), DistanceMetric::Cosine);
    }

    #[test]
    fn entity_json_shape() {
        let e = Entity::new(7, vec![0.5, 1.0]).with_metadata("color", "red").with_metadata("n", 3i64);
        let json = serde_json::to_value(&e).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"id": 7, "vector": [0.5, 1.0], "metadata": {"color": "red", "n": 3}})
        );
        let back: Entity = serde_json::from_value(json).unwrap();
        assert_eq!(back, e);
        let float: MetadataValue = serde_json::from_str("3.0").unwrap();
        assert_eq!(float, MetadataValue::Float(3.0));
    }

    fn component() -> impl Strategy<Value = f32> {
        prop_oneof![
            8 => -100.0f32..100.0,
            1 => Just(f32::NAN),
            1 => Just(f32::INFINITY),
        ]
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in prop::collection::vec(-1e3f32..1e3, 1..64)) {
            prop_assume!(v.iter().any(|&x| x != 0.0));
            let once = normalize(&v).unwrap();
            let twice = normalize(&once).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
            let norm: f64 = once.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn validate_accepts_exactly_valid(
            dim in 1usize..6,
            v in prop::collection::vec(component(), 0..7),
        ) {
            let config = CollectionConfig::new("c", dim);
            let expected_ok = v.len() == dim && v.iter().all(|c| c.is_finite());
            let result = validate_entity(&Entity::new(0, v), &config);
            prop_assert_eq!(result.is_ok(), expected_ok);
        }
    }
}
