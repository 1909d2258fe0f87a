//! Categorical schemas, attribute subsets, workloads, and datasets.
//!
//! The schema fixes an ordered list of categorical attributes with their
//! domain sizes; every Kronecker expansion in the crate follows that order.
//! An [`AttrSet`] names one marginal (a subset of attribute positions), a
//! [`Workload`] is the weighted set of marginals the user wants released,
//! and a [`Dataset`] is a multiset of records stored as value-index tuples.
//!
//! Cell ordering convention: a marginal's cells are flattened row-major
//! with the **last** attribute (in schema order) varying fastest. All
//! operators, counts, and reports in the crate share this convention.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// One categorical attribute: a name, a domain size, and (optionally)
/// human-readable labels for the `size` category codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub size: usize,
    /// Optional display labels, one per category code. Internal math uses
    /// 0-based codes only; labels matter solely for ingestion and reports.
    pub labels: Option<Vec<String>>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, size: usize) -> Self {
        Attribute { name: name.into(), size, labels: None }
    }

    pub fn with_labels(name: impl Into<String>, labels: Vec<String>) -> Self {
        Attribute { name: name.into(), size: labels.len(), labels: Some(labels) }
    }
}

/// An ordered list of categorical attributes. The order is canonical: it
/// determines every Kronecker factorization and cell flattening.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    attrs: Vec<Attribute>,
}

impl Schema {
    /// Validates and builds a schema: sizes must be ≥ 2, names unique and
    /// non-empty, and label lists (when present) must match the size.
    pub fn new(attrs: Vec<Attribute>) -> Result<Self> {
        if attrs.is_empty() {
            return Err(Error::InvalidSchema("schema has no attributes".into()));
        }
        let mut seen = BTreeSet::new();
        for a in &attrs {
            if a.name.is_empty() {
                return Err(Error::InvalidSchema("attribute with empty name".into()));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate attribute name {:?}", a.name)));
            }
            if a.size < 2 {
                return Err(Error::InvalidSchema(format!(
                    "attribute {:?} has domain size {}, need at least 2",
                    a.name, a.size
                )));
            }
            if let Some(labels) = &a.labels {
                if labels.len() != a.size {
                    return Err(Error::InvalidSchema(format!(
                        "attribute {:?} has {} labels for domain size {}",
                        a.name,
                        labels.len(),
                        a.size
                    )));
                }
            }
        }
        Ok(Schema { attrs })
    }

    /// Convenience constructor for tests and benchmarks: attributes named
    /// `a1, a2, ...` with the given domain sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        Schema::new(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &s)| Attribute::new(format!("a{}", i + 1), s))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn attrs(&self) -> &[Attribute] {
        &self.attrs
    }

    pub fn attr(&self, i: usize) -> &Attribute {
        &self.attrs[i]
    }

    /// Domain size of attribute `i`.
    pub fn size(&self, i: usize) -> usize {
        self.attrs[i].size
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a.name == name)
    }

    /// Product of all domain sizes. Reported for context only — nothing in
    /// the crate ever allocates at this scale. Saturates at `u128::MAX`.
    pub fn universe_size(&self) -> u128 {
        self.attrs
            .iter()
            .fold(1u128, |acc, a| acc.saturating_mul(a.size as u128))
    }
}

/// A subset of attribute positions, kept sorted and deduplicated. The
/// empty set denotes the 0-way marginal (the total count).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct AttrSet {
    indices: Vec<usize>,
}

impl AttrSet {
    /// Builds an attribute set from arbitrary indices, sorting and
    /// deduplicating. Validity against a schema is checked separately.
    pub fn new(indices: impl Into<Vec<usize>>) -> Self {
        let mut v = indices.into();
        v.sort_unstable();
        v.dedup();
        AttrSet { indices: v }
    }

    pub fn empty() -> Self {
        AttrSet { indices: Vec::new() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &AttrSet) -> bool {
        self.indices.iter().all(|i| other.contains(*i))
    }

    /// Set difference `self ∖ other`.
    pub fn minus(&self, other: &AttrSet) -> AttrSet {
        AttrSet {
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|i| !other.contains(*i))
                .collect(),
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for &i in &self.indices {
            if i >= schema.len() {
                return Err(Error::InvalidAttrSet(format!(
                    "attribute index {} out of range for a {}-attribute schema",
                    i,
                    schema.len()
                )));
            }
        }
        Ok(())
    }

    /// Number of cells in the marginal on this set: ∏ domain sizes
    /// (empty product = 1).
    pub fn cell_count(&self, schema: &Schema) -> u128 {
        self.indices
            .iter()
            .fold(1u128, |acc, &i| acc.saturating_mul(schema.size(i) as u128))
    }

    /// Number of residual rows for this set: ∏ (size − 1)
    /// (empty product = 1).
    pub fn residual_row_count(&self, schema: &Schema) -> u128 {
        self.indices
            .iter()
            .fold(1u128, |acc, &i| acc.saturating_mul((schema.size(i) - 1) as u128))
    }

    /// All subsets of this set, in (length, lexicographic) order.
    pub fn subsets(&self) -> Vec<AttrSet> {
        let k = self.indices.len();
        assert!(k < usize::BITS as usize, "subset enumeration over {k} attributes");
        let mut out: Vec<AttrSet> = (0..1usize << k)
            .map(|mask| {
                AttrSet {
                    indices: self
                        .indices
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| mask >> b & 1 == 1)
                        .map(|(_, &i)| i)
                        .collect(),
                }
            })
            .collect();
        out.sort_unstable_by(|a, b| (a.len(), &a.indices).cmp(&(b.len(), &b.indices)));
        out
    }

    /// Human-readable name built from the schema's attribute names,
    /// e.g. `{a1,a3}`; the empty set prints as `{}`.
    pub fn label(&self, schema: &Schema) -> String {
        let names: Vec<&str> = self
            .indices
            .iter()
            .map(|&i| schema.attr(i).name.as_str())
            .collect();
        format!("{{{}}}", names.join(","))
    }

    /// Flattened cell index of a value combination, row-major with the last
    /// attribute fastest. `values[j]` is the code for the j-th attribute of
    /// this set (in sorted order).
    pub fn cell_index(&self, schema: &Schema, values: &[usize]) -> Result<usize> {
        if values.len() != self.indices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.indices.len(),
                actual: values.len(),
            });
        }
        let mut idx = 0usize;
        for (j, &attr) in self.indices.iter().enumerate() {
            let size = schema.size(attr);
            if values[j] >= size {
                return Err(Error::InvalidData(format!(
                    "value code {} out of range for attribute {:?} (size {})",
                    values[j],
                    schema.attr(attr).name,
                    size
                )));
            }
            idx = idx * size + values[j];
        }
        Ok(idx)
    }

    /// Inverse of [`AttrSet::cell_index`]: the value combination stored at a
    /// flattened cell index.
    pub fn cell_values(&self, schema: &Schema, index: usize) -> Vec<usize> {
        let mut values = vec![0usize; self.indices.len()];
        let mut rem = index;
        for (j, &attr) in self.indices.iter().enumerate().rev() {
            let size = schema.size(attr);
            values[j] = rem % size;
            rem /= size;
        }
        values
    }
}

impl fmt::Display for AttrSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (j, i) in self.indices.iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// One workload entry: a marginal and its positive importance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadEntry {
    pub attrs: AttrSet,
    pub weight: f64,
}

/// A weighted set of marginals to release. Duplicate attribute sets are
/// rejected outright (silent weight-merging would hide user error).
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    entries: Vec<WorkloadEntry>,
}

impl Workload {
    pub fn new(entries: Vec<WorkloadEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::InvalidWorkload(format!(
                    "marginal {} has non-positive weight {}",
                    e.attrs, e.weight
                )));
            }
            if !seen.insert(e.attrs.clone()) {
                return Err(Error::InvalidWorkload(format!(
                    "duplicate marginal {} in workload",
                    e.attrs
                )));
            }
        }
        Ok(Workload { entries })
    }

    /// Builds a workload with unit weights.
    pub fn from_attr_sets(sets: impl IntoIterator<Item = AttrSet>) -> Result<Self> {
        Workload::new(
            sets.into_iter()
                .map(|attrs| WorkloadEntry { attrs, weight: 1.0 })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[WorkloadEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn validate_against(&self, schema: &Schema) -> Result<()> {
        for e in &self.entries {
            e.attrs.validate(schema)?;
        }
        Ok(())
    }

    /// The downward closure: every subset of every workload marginal,
    /// deduplicated. The empty workload yields the empty closure (nothing
    /// to release means no budget is spent, not even on the total).
    pub fn closure(&self) -> BTreeSet<AttrSet> {
        let mut out = BTreeSet::new();
        for e in &self.entries {
            for s in e.attrs.subsets() {
                out.insert(s);
            }
        }
        out
    }
}

/// A multiset of records over a schema, stored as 0-based value codes in a
/// flat buffer (`len × num_attrs`). The implied contingency vector over the
/// full universe is never materialized.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Schema,
    values: Vec<u32>,
    len: usize,
}

impl Dataset {
    pub fn new(schema: Schema) -> Self {
        Dataset { schema, values: Vec::new(), len: 0 }
    }

    pub fn from_records<R: AsRef<[u32]>>(schema: Schema, records: &[R]) -> Result<Self> {
        let mut d = Dataset::new(schema);
        for r in records {
            d.push(r.as_ref())?;
        }
        Ok(d)
    }

    /// Appends one record (one 0-based code per schema attribute).
    pub fn push(&mut self, record: &[u32]) -> Result<()> {
        if record.len() != self.schema.len() {
            return Err(Error::InvalidData(format!(
                "record has {} values, schema has {} attributes",
                record.len(),
                self.schema.len()
            )));
        }
        for (i, &v) in record.iter().enumerate() {
            if v as usize >= self.schema.size(i) {
                return Err(Error::InvalidData(format!(
                    "value code {} out of range for attribute {:?} (size {})",
                    v,
                    self.schema.attr(i).name,
                    self.schema.size(i)
                )));
            }
        }
        self.values.extend_from_slice(record);
        self.len += 1;
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_records(&self) -> usize {
        self.len
    }

    pub fn record(&self, i: usize) -> &[u32] {
        let w = self.schema.len();
        &self.values[i * w..(i + 1) * w]
    }
}

/// The true marginal table on `A`: a streaming group-by over the records,
/// cost O(|records|·|A|), output length `cell_count(A)`. Entry order follows
/// the crate's flattening convention (last attribute fastest).
pub fn marginal_counts(dataset: &Dataset, a: &AttrSet) -> Result<Vec<u64>> {
    a.validate(dataset.schema())?;
    let cells = a.cell_count(dataset.schema());
    let cells: usize = cells.try_into().map_err(|_| {
        Error::InvalidAttrSet(format!("marginal {a} has {cells} cells, too many to materialize"))
    })?;
    // Strides for the flattening: last attribute of the set varies fastest.
    let mut strides = vec![1usize; a.len()];
    for j in (0..a.len().saturating_sub(1)).rev() {
        strides[j] = strides[j + 1] * dataset.schema().size(a.indices()[j + 1]);
    }
    let mut counts = vec![0u64; cells];
    for r in 0..dataset.num_records() {
        let rec = dataset.record(r);
        let mut idx = 0usize;
        for (j, &attr) in a.indices().iter().enumerate() {
            idx += strides[j] * rec[attr] as usize;
        }
        counts[idx] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The worked toy instance used across the crate's tests: three
    /// attributes of sizes (2, 2, 3) and five records.
    pub fn toy_schema() -> Schema {
        Schema::from_sizes(&[2, 2, 3]).unwrap()
    }

    pub fn toy_dataset() -> Dataset {
        // Records (a1, a2, a3) with codes a=0,b=1 / y=0,n=1 / 1,2,3 → 0,1,2.
        let records: Vec<[u32; 3]> = vec![
            [0, 1, 1], // (a, n, 2)
            [1, 1, 2], // (b, n, 3)
            [1, 0, 2], // (b, y, 3)
            [0, 1, 1], // (a, n, 2)
            [1, 0, 2], // (b, y, 3)
        ];
        Dataset::from_records(toy_schema(), &records).unwrap()
    }

    #[test]
    fn schema_validation_rejects_bad_inputs() {
        assert!(Schema::new(vec![]).is_err());
        assert!(Schema::from_sizes(&[2, 1]).is_err());
        assert!(Schema::new(vec![Attribute::new("x", 2), Attribute::new("x", 3)]).is_err());
        assert!(Schema::new(vec![Attribute {
            name: "x".into(),
            size: 3,
            labels: Some(vec!["only".into(), "two".into()]),
        }])
        .is_err());
    }

    #[test]
    fn attr_set_sorts_and_dedups() {
        let a = AttrSet::new(vec![2, 0, 2]);
        assert_eq!(a.indices(), &[0, 2]);
        assert!(a.contains(2));
        assert!(!a.contains(1));
        assert!(AttrSet::new(vec![0]).is_subset_of(&a));
        assert!(!a.is_subset_of(&AttrSet::new(vec![0])));
        assert_eq!(a.minus(&AttrSet::new(vec![2])), AttrSet::new(vec![0]));
    }

    #[test]
    fn cell_and_residual_counts() {
        let s = toy_schema();
        let a = AttrSet::new(vec![1, 2]);
        assert_eq!(a.cell_count(&s), 6);
        assert_eq!(a.residual_row_count(&s), 2);
        assert_eq!(AttrSet::empty().cell_count(&s), 1);
        assert_eq!(AttrSet::empty().residual_row_count(&s), 1);
    }

    #[test]
    fn cell_index_examples() {
        // A = {a2, a3} with sizes (2, 3): (y=0, v=2) → 2 and (n=1, v=1) → 4.
        let s = toy_schema();
        let a = AttrSet::new(vec![1, 2]);
        assert_eq!(a.cell_index(&s, &[0, 2]).unwrap(), 2);
        assert_eq!(a.cell_index(&s, &[1, 1]).unwrap(), 4);
        assert_eq!(AttrSet::empty().cell_index(&s, &[]).unwrap(), 0);
        assert!(a.cell_index(&s, &[0, 3]).is_err());
        assert!(a.cell_index(&s, &[0]).is_err());
    }

    #[test]
    fn closure_of_toy_workload() {
        let w = Workload::from_attr_sets(vec![
            AttrSet::new(vec![0]),
            AttrSet::new(vec![0, 1]),
            AttrSet::new(vec![1, 2]),
        ])
        .unwrap();
        let c = w.closure();
        let expect: BTreeSet<AttrSet> = [
            AttrSet::empty(),
            AttrSet::new(vec![0]),
            AttrSet::new(vec![1]),
            AttrSet::new(vec![2]),
            AttrSet::new(vec![0, 1]),
            AttrSet::new(vec![1, 2]),
        ]
        .into_iter()
        .collect();
        assert_eq!(c, expect);
    }

    #[test]
    fn closure_edge_cases() {
        // Closure of {∅} is {∅}; the empty workload closes to the empty set.
        let w = Workload::from_attr_sets(vec![AttrSet::empty()]).unwrap();
        assert_eq!(w.closure().len(), 1);
        let w = Workload::from_attr_sets(vec![]).unwrap();
        assert!(w.closure().is_empty());
        // All 2-way marginals over 4 attributes → 1 + 4 + 6 = 11 sets.
        let mut sets = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                sets.push(AttrSet::new(vec![i, j]));
            }
        }
        let w = Workload::from_attr_sets(sets).unwrap();
        assert_eq!(w.closure().len(), 11);
    }

    #[test]
    fn workload_rejects_duplicates_and_bad_weights() {
        let dup = Workload::from_attr_sets(vec![AttrSet::new(vec![0]), AttrSet::new(vec![0])]);
        assert!(dup.is_err());
        let bad = Workload::new(vec![WorkloadEntry { attrs: AttrSet::empty(), weight: 0.0 }]);
        assert!(bad.is_err());
        let nan = Workload::new(vec![WorkloadEntry { attrs: AttrSet::empty(), weight: f64::NAN }]);
        assert!(nan.is_err());
    }

    #[test]
    fn toy_marginal_counts() {
        let d = toy_dataset();
        // {a2, a3} → [0, 0, 2, 0, 2, 1] under last-fastest flattening.
        let counts = marginal_counts(&d, &AttrSet::new(vec![1, 2])).unwrap();
        assert_eq!(counts, vec![0, 0, 2, 0, 2, 1]);
        // Total count.
        assert_eq!(marginal_counts(&d, &AttrSet::empty()).unwrap(), vec![5]);
        // {a1} → (a: 2, b: 3).
        assert_eq!(marginal_counts(&d, &AttrSet::new(vec![0])).unwrap(), vec![2, 3]);
    }

    #[test]
    fn full_contingency_matches_per_record_hash_count() {
        let d = toy_dataset();
        let all = AttrSet::new(vec![0, 1, 2]);
        let counts = marginal_counts(&d, &all).unwrap();
        let mut expect = std::collections::HashMap::<usize, u64>::new();
        for r in 0..d.num_records() {
            let rec: Vec<usize> = d.record(r).iter().map(|&v| v as usize).collect();
            let idx = all.cell_index(d.schema(), &rec).unwrap();
            *expect.entry(idx).or_default() += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            assert_eq!(c, expect.get(&i).copied().unwrap_or(0), "cell {i}");
        }
        assert_eq!(counts.iter().sum::<u64>(), d.num_records() as u64);
    }

    #[test]
    fn dataset_rejects_out_of_range_codes() {
        let mut d = Dataset::new(toy_schema());
        assert!(d.push(&[0, 1]).is_err());
        assert!(d.push(&[0, 2, 0]).is_err());
        assert!(d.push(&[0, 1, 2]).is_ok());
    }

    fn arb_schema() -> impl Strategy<Value = Schema> {
        prop::collection::vec(2usize..=4, 1..=4).prop_map(|sizes| Schema::from_sizes(&sizes).unwrap())
    }

    proptest! {
        #[test]
        fn cell_index_round_trips(schema in arb_schema(), mask in 0usize..16, seed in 0usize..1000) {
            let indices: Vec<usize> = (0..schema.len()).filter(|i| mask >> i & 1 == 1).collect();
            let a = AttrSet::new(indices);
            let cells = a.cell_count(&schema) as usize;
            let idx = seed % cells;
            let vals = a.cell_values(&schema, idx);
            prop_assert_eq!(a.cell_index(&schema, &vals).unwrap(), idx);
        }

        #[test]
        fn closure_is_idempotent(mask1 in 1usize..16, mask2 in 1usize..16, mask3 in 1usize..16) {
            let to_set = |m: usize| AttrSet::new((0..4).filter(|i| m >> i & 1 == 1).collect::<Vec<_>>());
            let mut sets = vec![to_set(mask1), to_set(mask2), to_set(mask3)];
            sets.sort();
            sets.dedup();
            let w = Workload::from_attr_sets(sets).unwrap();
            let c1 = w.closure();
            let w2 = Workload::from_attr_sets(c1.iter().cloned()).unwrap();
            prop_assert_eq!(w2.closure(), c1);
        }

        #[test]
        fn submarginal_consistency_of_true_counts(
            records in prop::collection::vec((0u32..3, 0u32..2, 0u32..4), 0..40),
            sub_mask in 0usize..8,
        ) {
            let schema = Schema::from_sizes(&[3, 2, 4]).unwrap();
            let recs: Vec<[u32; 3]> = records.iter().map(|&(a, b, c)| [a, b, c]).collect();
            let d = Dataset::from_records(schema.clone(), &recs).unwrap();
            let full = AttrSet::new(vec![0, 1, 2]);
            let sub = AttrSet::new((0..3).filter(|i| sub_mask >> i & 1 == 1).collect::<Vec<_>>());
            let full_counts = marginal_counts(&d, &full).unwrap();
            let sub_counts = marginal_counts(&d, &sub).unwrap();
            // Aggregate the full table down to the sub-marginal.
            let mut agg = vec![0u64; sub.cell_count(&schema) as usize];
            for (idx, &c) in full_counts.iter().enumerate() {
                let vals = full.cell_values(&schema, idx);
                let sub_vals: Vec<usize> = sub
                    .indices()
                    .iter()
                    .map(|&i| vals[full.indices().iter().position(|&j| j == i).unwrap()])
                    .collect();
                agg[sub.cell_index(&schema, &sub_vals).unwrap()] += c;
            }
            prop_assert_eq!(agg, sub_counts);
        }
    }
}
