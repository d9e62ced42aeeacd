//! Conjunctive metadata filters.
//!
//! JSON shape: `{"must": [{"eq": {"field", "value"}}, {"range": {"field",
//! "gte", "lte"}}, {"in": {"field", "values"}}]}`. `eq` and `in` require
//! an exact type match (`3` does not equal `3.0`); `range` compares ints
//! and floats numerically with inclusive bounds. A predicate on a missing
//! field is false.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Metadata, MetadataValue};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Filter {
    #[serde(default)]
    pub must: Vec<Predicate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    Eq {
        field: String,
        value: MetadataValue,
    },
    Range {
        field: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gte: Option<MetadataValue>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lte: Option<MetadataValue>,
    },
    In {
        field: String,
        values: Vec<MetadataValue>,
    },
}

impl Predicate {
    pub fn eq(field: impl Into<String>, value: impl Into<MetadataValue>) -> Self {
        Predicate::Eq {
            field: field.into(),
            value: value.into(),
        }
    }

    pub fn range(field: impl Into<String>, gte: Option<MetadataValue>, lte: Option<MetadataValue>) -> Self {
        Predicate::Range {
            field: field.into(),
            gte,
            lte,
        }
    }

    pub fn any_of<V: Into<MetadataValue>>(field: impl Into<String>, values: impl IntoIterator<Item = V>) -> Self {
        Predicate::In {
            field: field.into(),
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn field(&self) -> &str {
        match self {
            Predicate::Eq { field, .. } | Predicate::Range { field, .. } | Predicate::In { field, .. } => field,
        }
    }

    fn matches(&self, value: &MetadataValue) -> bool {
        match self {
            Predicate::Eq { value: want, .. } => value == want,
            Predicate::In { values, .. } => values.contains(value),
            Predicate::Range { gte, lte, .. } => {
                gte.as_ref().is_none_or(|b| numeric_cmp(value, b).is_some_and(Ordering::is_ge))
                    && lte.as_ref().is_none_or(|b| numeric_cmp(value, b).is_some_and(Ordering::is_le))
            }
        }
    }
}

impl Filter {
    pub fn new(must: Vec<Predicate>) -> Self {
        Filter { must }
    }

    pub fn and(mut self, p: Predicate) -> Self {
        self.must.push(p);
        self
    }

    /// Checks the structural rules: non-empty field names, at least one
    /// numeric bound per range.
    pub fn validate(&self) -> Result<()> {
        for p in &self.must {
            if p.field().is_empty() {
                return Err(Error::InvalidFilter("field name must be non-empty".into()));
            }
            if let Predicate::Range { field, gte, lte } = p {
                if gte.is_none() && lte.is_none() {
                    return Err(Error::InvalidFilter(format!("range on '{field}' needs gte or lte")));
                }
                if [gte, lte].into_iter().flatten().any(|b| !b.is_numeric()) {
                    return Err(Error::InvalidFilter(format!("range bounds on '{field}' must be numbers")));
                }
            }
        }
        Ok(())
    }
}

fn numeric_cmp(a: &MetadataValue, b: &MetadataValue) -> Option<Ordering> {
    use MetadataValue::{Float, Int};
    match (a, b) {
        (Int(x), Int(y)) => Some(x.cmp(y)),
        (Int(x), Float(y)) => (*x as f64).partial_cmp(y),
        (Float(x), Int(y)) => x.partial_cmp(&(*y as f64)),
        (Float(x), Float(y)) => x.partial_cmp(y),
        _ => None,
    }
}

/// True iff every predicate holds on `metadata`.
pub fn eval_filter(filter: &Filter, metadata: &Metadata) -> bool {
    filter
        .must
        .iter()
        .all(|p| metadata.get(p.field()).is_some_and(|v| p.matches(v)))
}

/// Range predicates whose field is present somewhere but never numeric.
pub(crate) fn check_field_types<'a>(filter: &Filter, all: impl Iterator<Item = &'a Metadata>) -> Result<()> {
    let ranged: Vec<&str> = filter
        .must
        .iter()
        .filter(|p| matches!(p, Predicate::Range { .. }))
        .map(Predicate::field)
        .collect();
    if ranged.is_empty() {
        return Ok(());
    }
    // per ranged field: (seen at all, seen numeric)
    let mut seen = vec![(false, false); ranged.len()];
    for md in all {
        for (i, f) in ranged.iter().enumerate() {
            if let Some(v) = md.get(*f) {
                seen[i].0 = true;
                seen[i].1 |= v.is_numeric();
            }
        }
        if seen.iter().all(|s| s.1) {
            return Ok(());
        }
    }
    match ranged.iter().zip(&seen).find(|(_, s)| s.0 && !s.1) {
        Some((f, _)) => Err(Error::FieldTypeMismatch(format!("range on non-numeric field '{f}'"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn md(pairs: &[(&str, MetadataValue)]) -> Metadata {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn spec_examples() {
        let red = md(&[("color", "red".into())]);
        assert!(eval_filter(&Filter::new(vec![Predicate::eq("color", "red")]), &red));
        let price = Filter::new(vec![Predicate::range("price", Some(10i64.into()), Some(20i64.into()))]);
        assert!(eval_filter(&price, &md(&[("price", 15i64.into())])));
        assert!(!eval_filter(&price, &md(&[("price", 25i64.into())])));
        assert!(!eval_filter(&price, &red));
        assert!(!eval_filter(&Filter::new(vec![Predicate::any_of("color", ["red"])]), &md(&[])));
    }

    #[test]
    fn eq_is_type_strict_but_range_is_numeric() {
        let three = md(&[("n", 3i64.into())]);
        assert!(!eval_filter(&Filter::new(vec![Predicate::eq("n", 3.0)]), &three));
        assert!(eval_filter(&Filter::new(vec![Predicate::eq("n", 3i64)]), &three));
        assert!(eval_filter(&Filter::new(vec![Predicate::range("n", Some(2.5.into()), Some(3.0.into()))]), &three));
        assert!(eval_filter(&Filter::new(vec![Predicate::range("n", Some(3i64.into()), None)]), &three));
        assert!(!eval_filter(&Filter::new(vec![Predicate::range("n", None, Some(2.99.into()))]), &three));
        let text = md(&[("n", "3".into())]);
        assert!(!eval_filter(&Filter::new(vec![Predicate::range("n", Some(0i64.into()), None)]), &text));
    }

    #[test]
    fn empty_filter_matches_everything() {
        assert!(eval_filter(&Filter::default(), &md(&[])));
    }

    #[test]
    fn validation() {
        assert!(Filter::new(vec![Predicate::eq("", 1i64)]).validate().is_err());
        assert!(Filter::new(vec![Predicate::range("x", None, None)]).validate().is_err());
        assert!(Filter::new(vec![Predicate::range("x", Some("a".into()), None)]).validate().is_err());
        assert!(Filter::new(vec![Predicate::range("x", None, Some(1i64.into()))]).validate().is_ok());
    }

    #[test]
    fn json_shape() {
        let f: Filter = serde_json::from_str(
            r#"{"must":[{"eq":{"field":"a","value":"x"}},{"range":{"field":"b","gte":1,"lte":2.5}},{"in":{"field":"c","values":[1,2]}}]}"#,
        )
        .unwrap();
        assert_eq!(
            f,
            Filter::new(vec![
                Predicate::eq("a", "x"),
                Predicate::range("b", Some(1i64.into()), Some(2.5.into())),
                Predicate::any_of("c", [1i64, 2]),
            ])
        );
        assert!(serde_json::from_str::<Filter>(r#"{"must":[{"like":{"field":"a"}}]}"#).is_err());
    }

    #[test]
    fn range_on_text_field_is_a_type_mismatch() {
        let rows = [md(&[("tag", "x".into())]), md(&[("tag", "y".into()), ("n", 1i64.into())])];
        let on_tag = Filter::new(vec![Predicate::range("tag", Some(0i64.into()), None)]);
        assert!(matches!(check_field_types(&on_tag, rows.iter()), Err(Error::FieldTypeMismatch(_))));
        let on_n = Filter::new(vec![Predicate::range("n", Some(0i64.into()), None)]);
        assert!(check_field_types(&on_n, rows.iter()).is_ok());
        let absent = Filter::new(vec![Predicate::range("zzz", Some(0i64.into()), None)]);
        assert!(check_field_types(&absent, rows.iter()).is_ok());
    }
}
