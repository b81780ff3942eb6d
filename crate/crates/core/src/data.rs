//! Mixed-type dataset representation.
//!
//! A [`Dataset`] stores numerical features, dictionary-encoded categorical
//! features, sensitive attributes and optional ground-truth labels in
//! column-major order. Categories and groups are encoded as dense ids in
//! order of first appearance so that every downstream tie-break can be
//! reproduced from the raw file.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// What a CSV column is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Numerical,
    Categorical,
    Sensitive,
    Label,
    Ignore,
}

impl ColumnRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnRole::Numerical => "numerical",
            ColumnRole::Categorical => "categorical",
            ColumnRole::Sensitive => "sensitive",
            ColumnRole::Label => "label",
            ColumnRole::Ignore => "ignore",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub role: ColumnRole,
}

/// Ordered list of named columns and their roles.
///
/// On disk a schema is a JSON object mapping column name to role; the
/// object's key order is preserved and defines feature order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let mut seen = HashMap::new();
        for c in &columns {
            if seen.insert(c.name.as_str(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate column name `{}`", c.name)));
            }
        }
        if !columns
            .iter()
            .any(|c| matches!(c.role, ColumnRole::Numerical | ColumnRole::Categorical))
        {
            return Err(Error::Schema(
                "at least one numerical or categorical column is required".into(),
            ));
        }
        if columns.iter().filter(|c| c.role == ColumnRole::Label).count() > 1 {
            return Err(Error::Schema("at most one label column is allowed".into()));
        }
        Ok(Self { columns })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, ColumnRole)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(name, role)| Column {
                    name: name.into(),
                    role,
                })
                .collect(),
        )
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names_with_role(&self, role: ColumnRole) -> impl Iterator<Item = &str> {
        self.columns
            .iter()
            .filter(move |c| c.role == role)
            .map(|c| c.name.as_str())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let parsed: Schema = serde_json::from_str(text)?;
        Ok(parsed)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialization is infallible")
    }
}

impl Serialize for Schema {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.columns.len()))?;
        for c in &self.columns {
            map.serialize_entry(&c.name, c.role.as_str())?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct SchemaVisitor;

        impl<'de> Visitor<'de> for SchemaVisitor {
            type Value = Schema;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping column names to roles")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Schema, A::Error> {
                let mut columns = Vec::new();
                while let Some((name, role)) = access.next_entry::<String, ColumnRole>()? {
                    columns.push(Column { name, role });
                }
                Schema::new(columns).map_err(serde::de::Error::custom)
            }
        }

        deserializer.deserialize_map(SchemaVisitor)
    }
}

/// Bijection between string tokens and dense ids, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut dict = Self::new();
        for t in tokens {
            let t = t.into();
            if dict.index.contains_key(&t) {
                return Err(Error::InvalidInput(format!("duplicate token `{t}` in dictionary")));
            }
            dict.encode(&t);
        }
        Ok(dict)
    }

    /// Returns the id of `token`, inserting it if unseen.
    pub fn encode(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Affine map applied to a raw numerical feature: `(x - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub mean: f64,
    pub std: f64,
}

impl Scaling {
    pub const IDENTITY: Scaling = Scaling { mean: 0.0, std: 1.0 };

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One sample in token form, as it appears in a raw data file.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Raw (unscaled) numerical values in feature order.
    pub num: Vec<f64>,
    /// Categorical tokens in feature order.
    pub cat: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    num_names: Vec<String>,
    num: Vec<Vec<f64>>,
    raw_num: Option<Vec<Vec<f64>>>,
    scaling: Option<Vec<Scaling>>,
    cat_names: Vec<String>,
    cat: Vec<Vec<u32>>,
    cat_dicts: Vec<Dictionary>,
    sens_names: Vec<String>,
    sens: Vec<Vec<u32>>,
    sens_dicts: Vec<Dictionary>,
    label_name: Option<String>,
    labels: Option<Vec<u32>>,
    label_dict: Option<Dictionary>,
    fingerprint: String,
}

impl Dataset {
    /// Builds a dataset from already-encoded columns.
    ///
    /// Columns get generic names (`x0`, `c0`, `s0`, `label`) and dictionaries
    /// whose tokens are the decimal ids.
    pub fn from_encoded(
        num: Vec<Vec<f64>>,
        cat: Vec<Vec<u32>>,
        sens: Vec<Vec<u32>>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let numeric_dict = |col: &[u32]| {
            let r = col.iter().copied().max().map_or(0, |m| m as usize + 1);
            Dictionary::from_tokens((0..r).map(|g| g.to_string())).expect("distinct ids")
        };
        let cat_dicts = cat.iter().map(|c| numeric_dict(c)).collect();
        let sens_dicts = sens.iter().map(|c| numeric_dict(c)).collect();
        let label_dict = labels.as_deref().map(numeric_dict);
        let ds = Dataset {
            n: 0,
            num_names: (0..num.len()).map(|f| format!("x{f}")).collect(),
            cat_names: (0..cat.len()).map(|j| format!("c{j}")).collect(),
            sens_names: (0..sens.len()).map(|u| format!("s{u}")).collect(),
            label_name: labels.as_ref().map(|_| "label".to_string()),
            num,
            raw_num: None,
            scaling: None,
            cat,
            cat_dicts,
            sens,
            sens_dicts,
            labels,
            label_dict,
            fingerprint: String::new(),
        };
        ds.finish()
    }

    /// Validates invariants, fills in `n` and computes the fingerprint if unset.
    fn finish(mut self) -> Result<Self> {
        let n = self
            .num
            .first()
            .map(Vec::len)
            .or_else(|| self.cat.first().map(Vec::len))
            .ok_or_else(|| Error::InvalidInput("dataset needs at least one numerical or categorical feature".into()))?;
        if n == 0 {
            return Err(Error::EmptyData("dataset has no samples".into()));
        }
        let lens_ok = self.num.iter().all(|c| c.len() == n)
            && self.cat.iter().all(|c| c.len() == n)
            && self.sens.iter().all(|c| c.len() == n)
            && self.labels.as_ref().is_none_or(|l| l.len() == n);
        if !lens_ok {
            return Err(Error::InvalidInput("columns have different lengths".into()));
        }
        for (f, col) in self.num.iter().enumerate() {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Row {
                    row: i + 1,
                    message: format!("non-finite value in numerical column `{}`", self.num_names[f]),
                });
            }
        }
        for (col, dict) in self
            .cat
            .iter()
            .zip(&self.cat_dicts)
            .chain(self.sens.iter().zip(&self.sens_dicts))
        {
            if col.iter().any(|&g| g as usize >= dict.len()) {
                return Err(Error::InvalidInput("category id outside its dictionary".into()));
            }
        }
        self.n = n;
        if self.fingerprint.is_empty() {
            let mut buf = Vec::new();
            self.write_csv(&mut buf)?;
            self.fingerprint = sha256_hex(&buf);
        }
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_num(&self) -> usize {
        self.num.len()
    }

    pub fn d_cat(&self) -> usize {
        self.cat.len()
    }

    pub fn n_sensitive(&self) -> usize {
        self.sens.len()
    }

    /// Numerical column `f` in working (possibly standardized) units.
    pub fn num_col(&self, f: usize) -> &[f64] {
        &self.num[f]
    }

    pub fn cat_col(&self, j: usize) -> &[u32] {
        &self.cat[j]
    }

    pub fn sens_col(&self, u: usize) -> &[u32] {
        &self.sens[u]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn num_names(&self) -> &[String] {
        &self.num_names
    }

    pub fn cat_names(&self) -> &[String] {
        &self.cat_names
    }

    pub fn sens_names(&self) -> &[String] {
        &self.sens_names
    }

    pub fn label_name(&self) -> Option<&str> {
        self.label_name.as_deref()
    }

    pub fn cat_dicts(&self) -> &[Dictionary] {
        &self.cat_dicts
    }

    pub fn sens_dicts(&self) -> &[Dictionary] {
        &self.sens_dicts
    }

    pub fn label_dict(&self) -> Option<&Dictionary> {
        self.label_dict.as_ref()
    }

    /// Number of categories known for categorical feature `j` (r_j).
    pub fn cat_cardinality(&self, j: usize) -> usize {
        self.cat_dicts[j].len()
    }

    /// Number of groups of sensitive attribute `u`.
    pub fn group_cardinality(&self, u: usize) -> usize {
        self.sens_dicts[u].len()
    }

    /// Per-feature scaling applied to the raw values, if standardized.
    pub fn scaling(&self) -> Option<&[Scaling]> {
        self.scaling.as_deref()
    }

    /// Hex SHA-256 of the ingested bytes (or of the canonical CSV rendering
    /// for datasets built in memory).
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Raw numerical value, undoing standardization.
    pub fn raw_num(&self, f: usize, i: usize) -> f64 {
        match &self.raw_num {
            Some(raw) => raw[f][i],
            None => self.num[f][i],
        }
    }

    /// Sample `i` in raw token form.
    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            num: (0..self.d_num()).map(|f| self.raw_num(f, i)).collect(),
            cat: (0..self.d_cat())
                .map(|j| self.cat_dicts[j].decode(self.cat[j][i]).unwrap_or_default().to_string())
                .collect(),
        }
    }

    /// The schema this dataset would be written with by [`Dataset::write_csv`].
    pub fn schema(&self) -> Schema {
        let mut cols: Vec<Column> = Vec::new();
        let mut push = |names: &[String], role| {
            cols.extend(names.iter().map(|n| Column { name: n.clone(), role }));
        };
        push(&self.num_names, ColumnRole::Numerical);
        push(&self.cat_names, ColumnRole::Categorical);
        push(&self.sens_names, ColumnRole::Sensitive);
        if let Some(l) = &self.label_name {
            push(std::slice::from_ref(l), ColumnRole::Label);
        }
        Schema::new(cols).expect("dataset always has a feature column")
    }

    /// Writes the dataset as CSV with raw numerical values and original tokens.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let schema = self.schema();
        out.write_record(schema.columns().iter().map(|c| c.name.as_str()))?;
        let mut record: Vec<String> = Vec::with_capacity(schema.columns().len());
        for i in 0..self.n {
            record.clear();
            for f in 0..self.d_num() {
                record.push(format!("{}", self.raw_num(f, i)));
            }
            for (col, dict) in self.cat.iter().zip(&self.cat_dicts) {
                record.push(dict.decode(col[i]).unwrap_or_default().to_string());
            }
            for (col, dict) in self.sens.iter().zip(&self.sens_dicts) {
                record.push(dict.decode(col[i]).unwrap_or_default().to_string());
            }
            if let (Some(labels), Some(dict)) = (&self.labels, &self.label_dict) {
                record.push(dict.decode(labels[i]).unwrap_or_default().to_string());
            }
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a CSV file whose header matches `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    load_csv_bytes(&bytes, schema)
}

pub fn load_csv_bytes(bytes: &[u8], schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(Error::EmptyData("file has no header".into()));
    }
    let mut positions: HashMap<&str, usize> = HashMap::new();
    for (p, name) in header.iter().enumerate() {
        if positions.insert(name, p).is_some() {
            return Err(Error::Schema(format!("duplicate header column `{name}`")));
        }
    }
    for name in header.iter() {
        if !schema.columns().iter().any(|c| c.name == name) {
            return Err(Error::Schema(format!(
                "header column `{name}` is not declared in the schema (use role \"ignore\" to skip it)"
            )));
        }
    }
    let locate = |role| -> Result<Vec<(String, usize)>> {
        schema
            .names_with_role(role)
            .map(|name| {
                positions
                    .get(name)
                    .map(|&p| (name.to_string(), p))
                    .ok_or_else(|| Error::MissingColumn(name.to_string()))
            })
            .collect()
    };
    let num_cols = locate(ColumnRole::Numerical)?;
    let cat_cols = locate(ColumnRole::Categorical)?;
    let sens_cols = locate(ColumnRole::Sensitive)?;
    let label_col = locate(ColumnRole::Label)?.into_iter().next();

    let mut num: Vec<Vec<f64>> = vec![Vec::new(); num_cols.len()];
    let mut cat: Vec<Vec<u32>> = vec![Vec::new(); cat_cols.len()];
    let mut cat_dicts = vec![Dictionary::new(); cat_cols.len()];
    let mut sens: Vec<Vec<u32>> = vec![Vec::new(); sens_cols.len()];
    let mut sens_dicts = vec![Dictionary::new(); sens_cols.len()];
    let mut labels: Vec<u32> = Vec::new();
    let mut label_dict = Dictionary::new();

    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        rows = row;
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Row {
                row,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let cell = |name: &str, p: usize| -> Result<&str> {
            let v = record[p].trim();
            if v.is_empty() {
                Err(Error::MissingValue {
                    row,
                    column: name.to_string(),
                })
            } else {
                Ok(v)
            }
        };
        for (f, (name, p)) in num_cols.iter().enumerate() {
            let text = cell(name, *p)?;
            let value: f64 = text.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                value: text.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    value: text.to_string(),
                });
            }
            num[f].push(value);
        }
        for (j, (name, p)) in cat_cols.iter().enumerate() {
            let id = cat_dicts[j].encode(cell(name, *p)?);
            cat[j].push(id);
        }
        for (u, (name, p)) in sens_cols.iter().enumerate() {
            let id = sens_dicts[u].encode(cell(name, *p)?);
            sens[u].push(id);
        }
        if let Some((name, p)) = &label_col {
            labels.push(label_dict.encode(cell(name, *p)?));
        }
    }
    if rows == 0 {
        return Err(Error::EmptyData("file has a header but no data rows".into()));
    }

    Dataset {
        n: 0,
        num_names: num_cols.into_iter().map(|(n, _)| n).collect(),
        num,
        raw_num: None,
        scaling: None,
        cat_names: cat_cols.into_iter().map(|(n, _)| n).collect(),
        cat,
        cat_dicts,
        sens_names: sens_cols.into_iter().map(|(n, _)| n).collect(),
        sens,
        sens_dicts,
        label_name: label_col.as_ref().map(|(n, _)| n.clone()),
        labels: label_col.is_some().then_some(labels),
        label_dict: label_col.is_some().then_some(label_dict),
        fingerprint: sha256_hex(bytes),
    }
    .finish()
}

/// Rescales every numerical column to zero mean and unit (population)
/// variance. Zero-variance columns are left as they are.
///
/// Standardizing an already-standardized dataset recomputes from the raw
/// values, so the operation is idempotent.
pub fn standardize(ds: &Dataset) -> Dataset {
    let raw: Vec<Vec<f64>> = (0..ds.d_num())
        .map(|f| (0..ds.n).map(|i| ds.raw_num(f, i)).collect())
        .collect();
    let n = ds.n as f64;
    let scaling: Vec<Scaling> = raw
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std > 0.0 && std.is_finite() {
                Scaling { mean, std }
            } else {
                Scaling::IDENTITY
            }
        })
        .collect();
    let num = raw
        .iter()
        .zip(&scaling)
        .map(|(col, s)| col.iter().map(|&x| s.apply(x)).collect())
        .collect();
    Dataset {
        num,
        raw_num: Some(raw),
        scaling: Some(scaling),
        ..ds.clone()
    }
}

/// Global group distributions and per-attribute fairness weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveProfile {
    pub global_dists: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SensitiveProfile {
    /// Profile with no sensitive attributes; every fairness term is zero.
    pub fn empty() -> Self {
        Self {
            global_dists: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn n_attributes(&self) -> usize {
        self.global_dists.len()
    }
}

/// Empirical group proportions of every sensitive attribute over the full
/// dataset. Weights default to `1/U` and are renormalized to sum to one.
pub fn compute_profile(ds: &Dataset, weights: Option<&[f64]>) -> Result<SensitiveProfile> {
    let u_count = ds.n_sensitive();
    if u_count == 0 {
        return Err(Error::Config(
            "fairness requires at least one sensitive attribute".into(),
        ));
    }
    let weights = match weights {
        None => vec![1.0 / u_count as f64; u_count],
        Some(w) => {
            if w.len() != u_count {
                return Err(Error::Config(format!(
                    "expected {u_count} fairness weights, got {}",
                    w.len()
                )));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Config("fairness weights must be finite and non-negative".into()));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::Config("fairness weights must have a positive sum".into()));
            }
            w.iter().map(|x| x / total).collect()
        }
    };
    let n = ds.n() as f64;
    let global_dists = (0..u_count)
        .map(|u| {
            let mut counts = vec![0usize; ds.group_cardinality(u)];
            for &g in ds.sens_col(u) {
                counts[g as usize] += 1;
            }
            counts.into_iter().map(|c| c as f64 / n).collect()
        })
        .collect();
    Ok(SensitiveProfile { global_dists, weights })
}

/// Centers laid out on a square grid with the given spacing.
pub fn grid_centers(count: usize, spacing: f64) -> Vec<[f64; 2]> {
    let side = (count as f64).sqrt().ceil().max(1.0) as usize;
    (0..count)
        .map(|b| [(b % side) as f64 * spacing, (b / side) as f64 * spacing])
        .collect()
}

/// Isotropic 2-D Gaussian blobs with one Bernoulli(p) binary sensitive
/// attribute. The label of a sample is the index of its blob; group 1 is the
/// Bernoulli success outcome.
pub fn generate_synthetic(
    n_per_blob: usize,
    blob_centers: &[[f64; 2]],
    blob_stddev: f64,
    p: f64,
    seed: u64,
) -> Result<Dataset> {
    if blob_centers.is_empty() {
        return Err(Error::InvalidInput("at least one blob center is required".into()));
    }
    if n_per_blob == 0 {
        return Err(Error::InvalidInput("n_per_blob must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("p must lie in [0, 1], got {p}")));
    }
    if !(blob_stddev > 0.0 && blob_stddev.is_finite()) {
        return Err(Error::InvalidInput("blob stddev must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, blob_stddev).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let coin = Bernoulli::new(p).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let n = n_per_blob * blob_centers.len();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (b, c) in blob_centers.iter().enumerate() {
        for _ in 0..n_per_blob {
            x.push(c[0] + noise.sample(&mut rng));
            y.push(c[1] + noise.sample(&mut rng));
            s.push(u32::from(coin.sample(&mut rng)));
            labels.push(b as u32);
        }
    }
    Dataset {
        n: 0,
        num_names: vec!["x0".into(), "x1".into()],
        num: vec![x, y],
        raw_num: None,
        scaling: None,
        cat_names: Vec::new(),
        cat: Vec::new(),
        cat_dicts: Vec::new(),
        sens_names: vec!["s".into()],
        sens: vec![s],
        sens_dicts: vec![Dictionary::from_tokens(["0", "1"])?],
        label_name: Some("label".into()),
        labels: Some(labels),
        label_dict: Some(Dictionary::from_tokens((0..blob_centers.len()).map(|b| b.to_string()))?),
        fingerprint: String::new(),
    }
    .finish()
}

/// Dataset with the given sensitive and label columns replaced. Used to
/// build datasets whose sensitive attribute depends on the feature values.
pub fn with_sensitive(ds: &Dataset, sens: Vec<Vec<u32>>) -> Result<Dataset> {
    let sens_dicts = sens
        .iter()
        .map(|col| {
            let r = col.iter().copied().max().map_or(0, |m| m as usize + 1);
            Dictionary::from_tokens((0..r).map(|g| g.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset {
        sens_names: (0..sens.len()).map(|u| format!("s{u}")).collect(),
        sens,
        sens_dicts,
        fingerprint: String::new(),
        ..ds.clone()
    }
    .finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema3() -> Schema {
        Schema::from_pairs([
            ("age", ColumnRole::Numerical),
            ("job", ColumnRole::Categorical),
            ("sex", ColumnRole::Sensitive),
        ])
        .unwrap()
    }

    #[test]
    fn encodes_in_first_appearance_order() {
        let csv = "age,job,sex\n30,a,m\n40,a,f\n50,b,m\n";
        let ds = load_csv_bytes(csv.as_bytes(), &schema3()).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!((ds.d_num(), ds.d_cat(), ds.n_sensitive()), (1, 1, 1));
        assert_eq!(ds.cat_col(0), &[0, 0, 1]);
        assert_eq!(ds.sens_col(0), &[0, 1, 0]);
        assert_eq!(ds.num_col(0), &[30.0, 40.0, 50.0]);
        assert_eq!(ds.sens_dicts()[0].decode(1), Some("f"));
    }

    #[test]
    fn blank_cell_names_the_row() {
        let csv = "age,job,sex\n30,a,m\n,a,f\n";
        let err = load_csv_bytes(csv.as_bytes(), &schema3()).unwrap_err();
        match err {
            Error::MissingValue { row, column } => {
                assert_eq!(row, 2);
                assert_eq!(column, "age");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn label_column_is_routed_separately() {
        let schema = Schema::from_pairs([
            ("x", ColumnRole::Numerical),
            ("y", ColumnRole::Label),
            ("junk", ColumnRole::Ignore),
        ])
        .unwrap();
        let csv = "x,junk,y\n1,q,yes\n2,r,no\n3,s,yes\n";
        let ds = load_csv_bytes(csv.as_bytes(), &schema).unwrap();
        assert_eq!(ds.labels(), Some(&[0, 1, 0][..]));
        assert_eq!(ds.d_num(), 1);
        assert_eq!(ds.d_cat(), 0);
    }

    #[test]
    fn ingestion_errors() {
        let s = schema3();
        assert!(matches!(load_csv_bytes(b"", &s), Err(Error::EmptyData(_))));
        assert!(matches!(load_csv_bytes(b"age,job,sex\n", &s), Err(Error::EmptyData(_))));
        assert!(matches!(
            load_csv_bytes(b"age,job\n1,a\n", &s),
            Err(Error::MissingColumn(c)) if c == "sex"
        ));
        assert!(matches!(
            load_csv_bytes(b"age,job,sex\nabc,a,m\n", &s),
            Err(Error::Parse { row: 1, .. })
        ));
        assert!(matches!(
            load_csv_bytes(b"age,job,sex\n1,a\n", &s),
            Err(Error::Row { row: 1, .. })
        ));
        assert!(matches!(
            load_csv_bytes(b"age,job,sex\nNaN,a,m\n", &s),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn schema_json_keeps_key_order() {
        let s = Schema::from_json_str(r#"{"z": "numerical", "a": "sensitive", "m": "categorical"}"#).unwrap();
        let names: Vec<_> = s.columns().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["z", "a", "m"]);
        assert_eq!(Schema::from_json_str(&s.to_json_string()).unwrap(), s);
        assert!(Schema::from_json_str(r#"{"a": "weird"}"#).is_err());
        assert!(Schema::from_json_str(r#"{"a": "sensitive"}"#).is_err());
        assert!(Schema::from_json_str(r#"{"a": "numerical", "a": "label"}"#).is_err());
        assert!(Schema::from_json_str(r#"{"a": "numerical", "b": "label", "c": "label"}"#).is_err());
    }

    #[test]
    fn standardize_examples() {
        let ds = Dataset::from_encoded(vec![vec![0.0, 2.0], vec![5.0, 5.0]], vec![], vec![], None).unwrap();
        let z = standardize(&ds);
        assert_eq!(z.num_col(0), &[-1.0, 1.0]);
        assert_eq!(z.num_col(1), &[5.0, 5.0]);
        assert_eq!(z.sample(0).num, vec![0.0, 5.0]);
        let again = standardize(&z);
        assert_eq!(again.num_col(0), z.num_col(0));

        let col = vec![-1.224744871391589, 0.0, 1.224744871391589];
        let unit = Dataset::from_encoded(vec![col.clone()], vec![], vec![], None).unwrap();
        let z = standardize(&unit);
        for (a, b) in z.num_col(0).iter().zip(&col) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_examples() {
        let ds = Dataset::from_encoded(vec![vec![0.0; 4]], vec![], vec![vec![0, 1, 0, 1]], None).unwrap();
        assert_eq!(compute_profile(&ds, None).unwrap().global_dists[0], vec![0.5, 0.5]);
        let ds = Dataset::from_encoded(vec![vec![0.0; 4]], vec![], vec![vec![0, 0, 0, 1]], None).unwrap();
        assert_eq!(compute_profile(&ds, None).unwrap().global_dists[0], vec![0.75, 0.25]);
        let ds = Dataset::from_encoded(vec![vec![0.0; 2]], vec![], vec![vec![0, 1], vec![1, 0]], None).unwrap();
        let prof = compute_profile(&ds, None).unwrap();
        assert_eq!(prof.weights, vec![0.5, 0.5]);
        let prof = compute_profile(&ds, Some(&[3.0, 1.0])).unwrap();
        assert_eq!(prof.weights, vec![0.75, 0.25]);
        assert!(compute_profile(&ds, Some(&[1.0])).is_err());
        assert!(compute_profile(&ds, Some(&[0.0, 0.0])).is_err());
        let none = Dataset::from_encoded(vec![vec![0.0; 2]], vec![], vec![], None).unwrap();
        assert!(compute_profile(&none, None).is_err());
    }

    #[test]
    fn synthetic_examples() {
        let centers = [[0.0, 0.0], [10.0, 0.0]];
        let a = generate_synthetic(100, &centers, 1.0, 0.5, 7).unwrap();
        let b = generate_synthetic(100, &centers, 1.0, 0.5, 7).unwrap();
        assert_eq!((a.n(), a.d_num(), a.n_sensitive()), (200, 2, 1));
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = generate_synthetic(100, &centers, 1.0, 0.5, 8).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());

        let zero = generate_synthetic(50, &centers, 1.0, 0.0, 1).unwrap();
        assert!(zero.sens_col(0).iter().all(|&g| g == 0));

        let big = generate_synthetic(1000, &centers, 1.0, 0.5, 3).unwrap();
        let frac = big.sens_col(0).iter().filter(|&&g| g == 0).count() as f64 / 2000.0;
        assert!((0.45..=0.55).contains(&frac), "group-0 fraction {frac}");

        assert!(generate_synthetic(10, &[], 1.0, 0.5, 1).is_err());
        assert!(generate_synthetic(10, &centers, 1.0, 1.5, 1).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_tokens() {
        let csv = "age,job,sex\n30.5,a b,m\n40,a b,f\n50,c,m\n";
        let ds = load_csv_bytes(csv.as_bytes(), &schema3()).unwrap();
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let again = load_csv_bytes(&out, &ds.schema()).unwrap();
        assert_eq!(again.cat_col(0), ds.cat_col(0));
        assert_eq!(again.sample(0), ds.sample(0));
    }
}
