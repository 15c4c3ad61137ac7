//! Evaluation records, the sensitive-attribute schema and stratification
//! into intersectional groups.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// One intersectional group: a label for every schema attribute, in schema
/// order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey(SmallVec<[Arc<str>; 4]>);

impl GroupKey {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<Arc<str>>,
    {
        GroupKey(labels.into_iter().map(Into::into).collect())
    }

    pub fn labels(&self) -> &[Arc<str>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            f.write_str(l)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub domain: Vec<Arc<str>>,
}

/// Declared sensitive attributes with finite, ordered domains.
///
/// The group set is the Cartesian product of the domains, enumerated
/// lexicographically: the first attribute varies slowest.
#[derive(Clone, Debug)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
    keys: Vec<GroupKey>,
    index: HashMap<GroupKey, usize>,
}

impl AttributeSchema {
    pub fn new<N, L>(attributes: impl IntoIterator<Item = (N, Vec<L>)>) -> Result<Self>
    where
        N: Into<String>,
        L: Into<Arc<str>>,
    {
        let attributes: Vec<Attribute> = attributes
            .into_iter()
            .map(|(name, domain)| Attribute {
                name: name.into(),
                domain: domain.into_iter().map(Into::into).collect(),
            })
            .collect();
        if attributes.is_empty() {
            return Err(Error::InvalidSchema("at least one attribute is required".into()));
        }
        let mut names = HashSet::new();
        for attr in &attributes {
            if !names.insert(attr.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate attribute `{}`", attr.name)));
            }
            if attr.domain.is_empty() {
                return Err(Error::InvalidSchema(format!(
                    "attribute `{}` has an empty domain",
                    attr.name
                )));
            }
            let mut seen = HashSet::new();
            for label in &attr.domain {
                if !seen.insert(label.as_ref()) {
                    return Err(Error::InvalidSchema(format!(
                        "attribute `{}` repeats label `{label}`",
                        attr.name
                    )));
                }
            }
        }

        let mut keys: Vec<GroupKey> = vec![GroupKey(SmallVec::new())];
        for attr in &attributes {
            let mut next = Vec::with_capacity(keys.len() * attr.domain.len());
            for prefix in &keys {
                for label in &attr.domain {
                    let mut k = prefix.clone();
                    k.0.push(label.clone());
                    next.push(k);
                }
            }
            keys = next;
        }
        let index = keys.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        Ok(AttributeSchema {
            attributes,
            keys,
            index,
        })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// All groups in lexicographic order.
    pub fn groups(&self) -> &[GroupKey] {
        &self.keys
    }

    pub fn num_groups(&self) -> usize {
        self.keys.len()
    }

    pub fn group_index(&self, key: &GroupKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Builds a key from labels, interning them against the schema domains.
    pub fn key<S: AsRef<str>>(&self, labels: &[S]) -> Result<GroupKey> {
        if labels.len() != self.attributes.len() {
            return Err(Error::InvalidSchema(format!(
                "expected {} labels, got {}",
                self.attributes.len(),
                labels.len()
            )));
        }
        let mut out = SmallVec::new();
        for (attr, label) in self.attributes.iter().zip(labels) {
            let found = attr
                .domain
                .iter()
                .find(|d| d.as_ref() == label.as_ref())
                .ok_or_else(|| {
                    Error::InvalidSchema(format!("label `{}` not in domain of `{}`", label.as_ref(), attr.name))
                })?;
            out.push(found.clone());
        }
        Ok(GroupKey(out))
    }
}

/// A model prediction: a real-valued score or a categorical / text output.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Score(f64),
    Text(Arc<str>),
}

/// Named real-valued covariates of a record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Covariates(SmallVec<[(Arc<str>, f64); 2]>);

impl Covariates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|(n, _)| n.as_ref() == name).map(|(_, v)| *v)
    }

    pub fn insert(&mut self, name: impl Into<Arc<str>>, value: f64) {
        let name = name.into();
        match self.0.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.0.push((name, value)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(n, v)| (n.as_ref(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<N: Into<Arc<str>>> FromIterator<(N, f64)> for Covariates {
    fn from_iter<T: IntoIterator<Item = (N, f64)>>(iter: T) -> Self {
        let mut c = Covariates::new();
        for (n, v) in iter {
            c.insert(n, v);
        }
        c
    }
}

/// One evaluated individual.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub attrs: GroupKey,
    /// Observed outcome label (`Y`), e.g. `"1"` or a reference transcript.
    pub outcome: Option<Arc<str>>,
    pub prediction: Option<Prediction>,
    /// Precomputed per-record quantity such as a snippet word error rate.
    pub record_value: Option<f64>,
    pub covariates: Covariates,
    /// Identifier of the unit (e.g. speaker) the record belongs to.
    pub unit_id: Option<Arc<str>>,
}

impl EvalRecord {
    pub fn new(attrs: GroupKey) -> Self {
        EvalRecord {
            attrs,
            outcome: None,
            prediction: None,
            record_value: None,
            covariates: Covariates::new(),
            unit_id: None,
        }
    }

    pub fn with_outcome(mut self, y: impl Into<Arc<str>>) -> Self {
        self.outcome = Some(y.into());
        self
    }

    pub fn with_score(mut self, s: f64) -> Self {
        self.prediction = Some(Prediction::Score(s));
        self
    }

    pub fn with_text(mut self, t: impl Into<Arc<str>>) -> Self {
        self.prediction = Some(Prediction::Text(t.into()));
        self
    }

    pub fn with_value(mut self, v: f64) -> Self {
        self.record_value = Some(v);
        self
    }

    pub fn with_covariate(mut self, name: impl Into<Arc<str>>, v: f64) -> Self {
        self.covariates.insert(name, v);
        self
    }

    pub fn with_unit(mut self, id: impl Into<Arc<str>>) -> Self {
        self.unit_id = Some(id.into());
        self
    }

    pub fn score(&self) -> Option<f64> {
        match &self.prediction {
            Some(Prediction::Score(s)) => Some(*s),
            _ => None,
        }
    }
}

/// Records split by intersectional group, indexed in schema order.
///
/// Every group of the schema is present, including empty ones.
#[derive(Clone, Debug)]
pub struct GroupedDataset {
    schema: AttributeSchema,
    groups: Vec<Vec<EvalRecord>>,
    n: usize,
}

impl GroupedDataset {
    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn groups(&self) -> &[Vec<EvalRecord>] {
        &self.groups
    }

    pub fn group(&self, index: usize) -> &[EvalRecord] {
        &self.groups[index]
    }

    pub fn keys(&self) -> &[GroupKey] {
        self.schema.groups()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Iterates over all records, group by group.
    pub fn records(&self) -> impl Iterator<Item = &EvalRecord> {
        self.groups.iter().flatten()
    }

    /// Builds a dataset from already-partitioned groups (used for resampled
    /// and split datasets whose membership is known).
    pub fn from_groups(schema: AttributeSchema, groups: Vec<Vec<EvalRecord>>) -> Result<Self> {
        if groups.len() != schema.num_groups() {
            return Err(Error::Inconsistent(format!(
                "{} groups supplied for a schema with {}",
                groups.len(),
                schema.num_groups()
            )));
        }
        for (g, key) in groups.iter().zip(schema.groups()) {
            if let Some(r) = g.iter().find(|r| &r.attrs != key) {
                return Err(Error::Inconsistent(format!(
                    "record with attrs {} placed in group {key}",
                    r.attrs
                )));
            }
        }
        let n = groups.iter().map(Vec::len).sum();
        Ok(GroupedDataset { schema, groups, n })
    }
}

/// Splits records into the schema's groups, preserving record order within
/// each group.
pub fn stratify(records: Vec<EvalRecord>, schema: &AttributeSchema) -> Result<GroupedDataset> {
    let k = schema.num_attributes();
    let mut groups: Vec<Vec<EvalRecord>> = vec![Vec::new(); schema.num_groups()];
    let n = records.len();
    for (i, mut rec) in records.into_iter().enumerate() {
        if rec.attrs.len() != k {
            return Err(Error::SchemaViolation {
                record: i,
                attribute: format!("<{} labels for {k} attributes>", rec.attrs.len()),
                label: rec.attrs.to_string(),
            });
        }
        if rec.prediction.is_none() && rec.record_value.is_none() {
            return Err(Error::Data(format!(
                "record {i} has neither a prediction nor a record value"
            )));
        }
        // validate and intern labels against the schema
        let mut interned = SmallVec::new();
        for (attr, label) in schema.attributes().iter().zip(rec.attrs.labels()) {
            match attr.domain.iter().find(|d| d.as_ref() == label.as_ref()) {
                Some(d) => interned.push(d.clone()),
                None => {
                    return Err(Error::SchemaViolation {
                        record: i,
                        attribute: attr.name.clone(),
                        label: label.to_string(),
                    })
                }
            }
        }
        rec.attrs = GroupKey(interned);
        let g = schema.group_index(&rec.attrs).expect("validated key is in the schema");
        groups[g].push(rec);
    }
    Ok(GroupedDataset {
        schema: schema.clone(),
        groups,
        n,
    })
}

/// Collapses records to one record per unit (e.g. speaker).
///
/// The unit record's value is the unweighted mean of its records' values;
/// covariates are averaged over the unit's records. Units appear in order of
/// first occurrence.
pub fn aggregate_to_units(records: &[EvalRecord]) -> Result<Vec<EvalRecord>> {
    let mut order: Vec<Arc<str>> = Vec::new();
    let mut members: HashMap<Arc<str>, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let id = r
            .unit_id
            .clone()
            .ok_or_else(|| Error::Data(format!("record {i} has no unit id")))?;
        if r.record_value.is_none() {
            return Err(Error::Data(format!("record {i} has no record value")));
        }
        members
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(i);
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let idx = &members[&id];
        let first = &records[idx[0]];
        if let Some(&j) = idx.iter().find(|&&j| records[j].attrs != first.attrs) {
            return Err(Error::Inconsistent(format!(
                "unit `{id}` has conflicting attributes {} and {}",
                first.attrs, records[j].attrs
            )));
        }
        let m = idx.len() as f64;
        let value = idx.iter().map(|&j| records[j].record_value.unwrap()).sum::<f64>() / m;
        let mut covariates = Covariates::new();
        for (name, _) in first.covariates.iter() {
            let vals: Option<Vec<f64>> = idx.iter().map(|&j| records[j].covariates.get(name)).collect();
            if let Some(vals) = vals {
                covariates.insert(name, vals.iter().sum::<f64>() / m);
            }
        }
        let mut rec = EvalRecord::new(first.attrs.clone()).with_value(value);
        rec.covariates = covariates;
        rec.unit_id = Some(id);
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> AttributeSchema {
        AttributeSchema::new(vec![
            ("race", vec!["Black", "white"]),
            ("gender", vec!["male", "female"]),
        ])
        .unwrap()
    }

    #[test]
    fn diabetes_schema_has_32_groups() {
        let s = AttributeSchema::new(vec![
            ("race", vec!["African American", "Hispanic", "white", "other"]),
            ("age", vec!["20-40", "40-60", "60-80", "80-100"]),
            ("gender", vec!["male", "female"]),
        ])
        .unwrap();
        assert_eq!(s.num_groups(), 32);
        assert_eq!(s.groups()[0].to_string(), "African American|20-40|male");
        assert_eq!(s.groups()[1].to_string(), "African American|20-40|female");
        assert_eq!(s.groups()[31].to_string(), "other|80-100|female");
    }

    #[test]
    fn schema_rejects_bad_domains() {
        assert!(AttributeSchema::new(Vec::<(&str, Vec<&str>)>::new()).is_err());
        assert!(AttributeSchema::new(vec![("a", Vec::<&str>::new())]).is_err());
        assert!(AttributeSchema::new(vec![("a", vec!["x", "x"])]).is_err());
    }

    #[test]
    fn single_cell_schema() {
        let s = AttributeSchema::new(vec![("only", vec!["v"])]).unwrap();
        let recs: Vec<_> = (0..5)
            .map(|i| EvalRecord::new(GroupKey::new(["v"])).with_value(i as f64))
            .collect();
        let g = stratify(recs, &s).unwrap();
        assert_eq!(g.sizes(), vec![5]);
    }

    #[test]
    fn empty_groups_are_kept() {
        let s = two_by_two();
        let recs = vec![
            EvalRecord::new(GroupKey::new(["Black", "male"])).with_value(1.0),
            EvalRecord::new(GroupKey::new(["Black", "female"])).with_value(2.0),
            EvalRecord::new(GroupKey::new(["white", "male"])).with_value(3.0),
        ];
        let g = stratify(recs, &s).unwrap();
        assert_eq!(g.sizes(), vec![1, 1, 1, 0]);
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn unknown_label_names_record_and_attribute() {
        let s = two_by_two();
        let recs = vec![
            EvalRecord::new(GroupKey::new(["Black", "male"])).with_value(1.0),
            EvalRecord::new(GroupKey::new(["Black", "other"])).with_value(1.0),
        ];
        match stratify(recs, &s) {
            Err(Error::SchemaViolation {
                record,
                attribute,
                label,
            }) => {
                assert_eq!(record, 1);
                assert_eq!(attribute, "gender");
                assert_eq!(label, "other");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn speaker_mean() {
        let recs = vec![
            EvalRecord::new(GroupKey::new(["Black", "male"]))
                .with_value(0.2)
                .with_unit("s1"),
            EvalRecord::new(GroupKey::new(["Black", "male"]))
                .with_value(0.4)
                .with_unit("s1"),
        ];
        let u = aggregate_to_units(&recs).unwrap();
        assert_eq!(u.len(), 1);
        assert!((u[0].record_value.unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_snippet_unit_is_identity() {
        let rec = EvalRecord::new(GroupKey::new(["white", "female"]))
            .with_value(0.17)
            .with_unit("s9")
            .with_covariate("log_duration", 2.5);
        let u = aggregate_to_units(std::slice::from_ref(&rec)).unwrap();
        assert_eq!(u, vec![rec]);
    }

    #[test]
    fn conflicting_unit_attrs_rejected() {
        let recs = vec![
            EvalRecord::new(GroupKey::new(["Black", "male"]))
                .with_value(0.2)
                .with_unit("s1"),
            EvalRecord::new(GroupKey::new(["white", "male"]))
                .with_value(0.4)
                .with_unit("s1"),
        ];
        assert!(matches!(aggregate_to_units(&recs), Err(Error::Inconsistent(_))));
    }
}
