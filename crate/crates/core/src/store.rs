//! Embedding tables and the EMB1 container format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMB1"
//! 4       4     format version (u32, currently 1)
//! 8       8     n_samples (u64)
//! 16      8     dim (u64)
//! 24      8     n_classes (u64)
//! 32      4     flags (u32; bit 0 = logits present, other bits must be 0)
//! 36      4     domain tag (u32; 0 train, 1 validation, 2 test, 3 pool, 4 base)
//! 40      24    reserved, must be zero
//! 64      ...   features, n_samples x dim f32, row-major
//!         ...   logits, n_samples x n_classes f32, row-major (only if flag bit 0)
//!         ...   sample ids, n_samples x u64
//!         ...   labels, n_samples x u32
//!         8     manifest length in bytes (u64)
//!         ...   manifest, UTF-8 JSON
//! ```
//!
//! The manifest checksum is `sha256:` followed by the lowercase hex SHA-256 of
//! every byte from offset 0 through the end of the labels block, so any header
//! corruption is caught even when it leaves the file length consistent.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;
const FLAG_LOGITS: u32 = 1;
const FORMAT_VERSION_STRING: &str = "EMB1/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    #[default]
    Train,
    Validation,
    Test,
    Pool,
    Base,
}

impl DomainTag {
    pub fn code(self) -> u32 {
        match self {
            DomainTag::Train => 0,
            DomainTag::Validation => 1,
            DomainTag::Test => 2,
            DomainTag::Pool => 3,
            DomainTag::Base => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => DomainTag::Train,
            1 => DomainTag::Validation,
            2 => DomainTag::Test,
            3 => DomainTag::Pool,
            4 => DomainTag::Base,
            _ => return None,
        })
    }
}

/// JSON manifest trailing every EMB1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableManifest {
    pub format_version: String,
    pub class_names: Vec<String>,
    pub provenance: String,
    pub checksum: String,
}

/// Rows of (sample id, label, feature vector, optional logits), always held
/// in ascending sample-id order. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    n_classes: usize,
    sample_ids: Vec<u64>,
    labels: Vec<u32>,
    features: Vec<f32>,
    logits: Option<Vec<f32>>,
    domain: DomainTag,
    class_names: Vec<String>,
    provenance: String,
}

impl EmbeddingTable {
    /// Builds a table from unordered rows. Rows are sorted by id and every
    /// invariant is checked.
    pub fn new(
        dim: usize,
        n_classes: usize,
        sample_ids: Vec<u64>,
        labels: Vec<u32>,
        features: Vec<f32>,
        logits: Option<Vec<f32>>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        if labels.len() != n {
            return Err(Error::InvariantViolation(format!(
                "{} labels for {} samples",
                labels.len(),
                n
            )));
        }
        if features.len() != n * dim {
            return Err(Error::InvariantViolation(format!(
                "feature buffer holds {} values, expected {} x {}",
                features.len(),
                n,
                dim
            )));
        }
        if let Some(l) = &logits {
            if l.len() != n * n_classes {
                return Err(Error::InvariantViolation(format!(
                    "logit buffer holds {} values, expected {} x {}",
                    l.len(),
                    n,
                    n_classes
                )));
            }
        }
        let table = EmbeddingTable {
            dim,
            n_classes,
            sample_ids,
            labels,
            features,
            logits,
            domain: DomainTag::default(),
            class_names: default_class_names(n_classes),
            provenance: String::new(),
        };
        let table = if table.sample_ids.windows(2).all(|w| w[0] < w[1]) {
            table
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| table.sample_ids[i]);
            table.gather(&order)
        };
        table.validate()?;
        Ok(table)
    }

    /// An empty table with the given shape.
    pub fn empty(dim: usize, n_classes: usize) -> Self {
        EmbeddingTable {
            dim,
            n_classes,
            sample_ids: Vec::new(),
            labels: Vec::new(),
            features: Vec::new(),
            logits: None,
            domain: DomainTag::default(),
            class_names: default_class_names(n_classes),
            provenance: String::new(),
        }
    }

    pub fn with_domain(mut self, domain: DomainTag) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes {
            return Err(Error::InvariantViolation(format!(
                "{} class names for {} classes",
                names.len(),
                self.n_classes
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    /// Replaces (or attaches) the logit matrix, e.g. with a freshly fitted probe's output.
    pub fn with_logits(mut self, logits: Vec<f32>) -> Result<Self> {
        if logits.len() != self.len() * self.n_classes {
            return Err(Error::InvariantViolation(format!(
                "logit buffer holds {} values, expected {} x {}",
                logits.len(),
                self.len(),
                self.n_classes
            )));
        }
        if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!("non-finite logit {v}")));
        }
        self.logits = Some(logits);
        Ok(self)
    }

    pub fn without_logits(mut self) -> Self {
        self.logits = None;
        self
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn logits(&self) -> Option<&[f32]> {
        self.logits.as_deref()
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn feature(&self, row: usize) -> &[f32] {
        &self.features[row * self.dim..(row + 1) * self.dim]
    }

    pub fn logit_row(&self, row: usize) -> Option<&[f32]> {
        self.logits
            .as_ref()
            .map(|l| &l[row * self.n_classes..(row + 1) * self.n_classes])
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.sample_ids.binary_search(&id).ok()
    }

    /// Number of rows carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    fn validate(&self) -> Result<()> {
        if self.class_names.len() != self.n_classes {
            return Err(Error::InvariantViolation(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.n_classes
            )));
        }
        for w in self.sample_ids.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvariantViolation(format!("duplicate sample id {}", w[0])));
            }
            if w[0] > w[1] {
                return Err(Error::InvariantViolation(format!(
                    "sample ids not in ascending order ({} before {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l as usize >= self.n_classes) {
            return Err(Error::InvariantViolation(format!(
                "label {l} outside [0, {})",
                self.n_classes
            )));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!(
                "non-finite feature {} at row {} column {}",
                self.features[pos],
                pos / self.dim.max(1),
                pos % self.dim.max(1)
            )));
        }
        if let Some(l) = &self.logits {
            if let Some(v) = l.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvariantViolation(format!("non-finite logit {v}")));
            }
        }
        Ok(())
    }

    fn gather(&self, rows: &[usize]) -> EmbeddingTable {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut logits = self
            .logits
            .as_ref()
            .map(|_| Vec::with_capacity(rows.len() * self.n_classes));
        for &r in rows {
            features.extend_from_slice(self.feature(r));
            if let (Some(out), Some(src)) = (logits.as_mut(), self.logit_row(r)) {
                out.extend_from_slice(src);
            }
        }
        EmbeddingTable {
            dim: self.dim,
            n_classes: self.n_classes,
            sample_ids: rows.iter().map(|&r| self.sample_ids[r]).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            features,
            logits,
            domain: self.domain,
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Rows whose ids are in `ids`, ascending by id.
    pub fn subset<'a, I>(&self, ids: I) -> Result<EmbeddingTable>
    where
        I: IntoIterator<Item = &'a u64>,
    {
        let wanted: BTreeSet<u64> = ids.into_iter().copied().collect();
        let rows = wanted
            .iter()
            .map(|&id| self.row_of(id).ok_or(Error::UnknownId(id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.gather(&rows))
    }

    /// Rows whose ids are NOT in `ids`. Unknown ids are an error.
    pub fn without<'a, I>(&self, ids: I) -> Result<EmbeddingTable>
    where
        I: IntoIterator<Item = &'a u64>,
    {
        let mut drop = vec![false; self.len()];
        for &id in ids {
            drop[self.row_of(id).ok_or(Error::UnknownId(id))?] = true;
        }
        let rows: Vec<usize> = (0..self.len()).filter(|&r| !drop[r]).collect();
        Ok(self.gather(&rows))
    }

    /// Union of two tables with disjoint ids. Metadata comes from `self`
    /// unless it is empty.
    pub fn merge(&self, other: &EmbeddingTable) -> Result<EmbeddingTable> {
        if self.dim != other.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        if self.n_classes != other.n_classes {
            return Err(Error::ClassCountMismatch {
                expected: self.n_classes,
                actual: other.n_classes,
            });
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        if self.is_empty() {
            let mut out = other.clone();
            out.domain = self.domain;
            out.class_names = self.class_names.clone();
            out.provenance = self.provenance.clone();
            return Ok(out);
        }
        let keep_logits = self.logits.is_some() && other.logits.is_some();
        let mut features = Vec::with_capacity((self.len() + other.len()) * self.dim);
        let mut logits = keep_logits.then(Vec::new);
        let mut ids = Vec::with_capacity(self.len() + other.len());
        let mut labels = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        while i < self.len() || j < other.len() {
            let take_self = match (self.sample_ids.get(i), other.sample_ids.get(j)) {
                (Some(a), Some(b)) if a == b => return Err(Error::DuplicateId(*a)),
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                _ => false,
            };
            let (src, row) = if take_self {
                i += 1;
                (self, i - 1)
            } else {
                j += 1;
                (other, j - 1)
            };
            ids.push(src.sample_ids[row]);
            labels.push(src.labels[row]);
            features.extend_from_slice(src.feature(row));
            if let (Some(out), Some(l)) = (logits.as_mut(), src.logit_row(row)) {
                out.extend_from_slice(l);
            }
        }
        Ok(EmbeddingTable {
            dim: self.dim,
            n_classes: self.n_classes,
            sample_ids: ids,
            labels,
            features,
            logits,
            domain: self.domain,
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Serializes to the EMB1 byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = self.len();
        let logit_len = self.logits.as_ref().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.features.len() + logit_len) + 12 * n + 256);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_classes as u64).to_le_bytes());
        let flags = if self.logits.is_some() { FLAG_LOGITS } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&self.domain.code().to_le_bytes());
        out.resize(HEADER_LEN, 0);
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = &self.logits {
            for v in l {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for id in &self.sample_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        let manifest = TableManifest {
            format_version: FORMAT_VERSION_STRING.to_string(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
            checksum: payload_checksum(&out),
        };
        let json = serde_json::to_vec(&manifest)?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    /// Parses and fully validates an EMB1 byte buffer.
    pub fn from_bytes(bytes: &[u8]) -> Result<EmbeddingTable> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedHeader(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::MalformedHeader("bad magic, expected EMB1".into()));
        }
        let version = read_u32(bytes, 4);
        if version != FORMAT_VERSION {
            return Err(Error::MalformedHeader(format!("unsupported version {version}")));
        }
        let n = to_usize(read_u64(bytes, 8), "n_samples")?;
        let dim = to_usize(read_u64(bytes, 16), "dim")?;
        let n_classes = to_usize(read_u64(bytes, 24), "n_classes")?;
        let flags = read_u32(bytes, 32);
        if flags & !FLAG_LOGITS != 0 {
            return Err(Error::MalformedHeader(format!("unknown flag bits {flags:#x}")));
        }
        let domain_code = read_u32(bytes, 36);
        let domain = DomainTag::from_code(domain_code)
            .ok_or_else(|| Error::MalformedHeader(format!("unknown domain tag {domain_code}")))?;
        if bytes[40..HEADER_LEN].iter().any(|&b| b != 0) {
            return Err(Error::MalformedHeader("reserved header bytes are not zero".into()));
        }
        let has_logits = flags & FLAG_LOGITS != 0;

        let block = |rows: usize, cols: usize, width: usize| -> Result<usize> {
            rows.checked_mul(cols)
                .and_then(|v| v.checked_mul(width))
                .ok_or_else(|| Error::MalformedHeader("header sizes overflow".into()))
        };
        let feature_bytes = block(n, dim, 4)?;
        let logit_bytes = if has_logits { block(n, n_classes, 4)? } else { 0 };
        let payload_len = [feature_bytes, logit_bytes, block(n, 1, 8)?, block(n, 1, 4)?]
            .iter()
            .try_fold(HEADER_LEN, |acc, &b| acc.checked_add(b))
            .ok_or_else(|| Error::MalformedHeader("header sizes overflow".into()))?;
        let manifest_start = payload_len
            .checked_add(8)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::MalformedHeader(format!(
                    "header describes a {payload_len}-byte payload but the file is {} bytes",
                    bytes.len()
                ))
            })?;
        let manifest_len = to_usize(read_u64(bytes, payload_len), "manifest length")?;
        if manifest_start.checked_add(manifest_len) != Some(bytes.len()) {
            return Err(Error::MalformedHeader(format!(
                "manifest length {manifest_len} does not match file size {}",
                bytes.len()
            )));
        }
        let manifest: TableManifest = serde_json::from_slice(&bytes[manifest_start..])
            .map_err(|e| Error::MalformedHeader(format!("manifest is not valid JSON: {e}")))?;
        if manifest.format_version != FORMAT_VERSION_STRING {
            return Err(Error::MalformedHeader(format!(
                "manifest format_version {:?}",
                manifest.format_version
            )));
        }
        let actual = payload_checksum(&bytes[..payload_len]);
        if manifest.checksum != actual {
            return Err(Error::ChecksumMismatch {
                expected: manifest.checksum,
                actual,
            });
        }

        let mut at = HEADER_LEN;
        let features = read_f32s(bytes, &mut at, n * dim);
        let logits = has_logits.then(|| read_f32s(bytes, &mut at, n * n_classes));
        let sample_ids: Vec<u64> = (0..n).map(|i| read_u64(bytes, at + 8 * i)).collect();
        at += 8 * n;
        let labels: Vec<u32> = (0..n).map(|i| read_u32(bytes, at + 4 * i)).collect();

        let table = EmbeddingTable {
            dim,
            n_classes,
            sample_ids,
            labels,
            features,
            logits,
            domain,
            class_names: manifest.class_names,
            provenance: manifest.provenance,
        };
        table.validate()?;
        Ok(table)
    }

    /// Loads an EMB1 file. CSV files (`.csv` extension) go through [`import_csv`].
    pub fn load(path: &Path) -> Result<EmbeddingTable> {
        let bytes = fsutil::read(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) && !bytes.starts_with(MAGIC) {
            return import_csv_bytes(&bytes, None);
        }
        EmbeddingTable::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()?)
    }
}

pub fn load_table(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::load(path)
}

pub fn save_table(table: &EmbeddingTable, path: &Path) -> Result<()> {
    table.save(path)
}

pub fn default_class_names(n_classes: usize) -> Vec<String> {
    (0..n_classes).map(|c| format!("class_{c}")).collect()
}

fn payload_checksum(payload: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(payload)))
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn read_f32s(b: &[u8], at: &mut usize, count: usize) -> Vec<f32> {
    let out = b[*at..*at + 4 * count]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *at += 4 * count;
    out
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::MalformedHeader(format!("{what} {v} does not fit in memory")))
}

/// Reads `id,label,f1..fd[,l1..lc]` CSV with a header row. Feature columns
/// are the ones named `f<k>`, logit columns `l<k>`. When logits are absent,
/// `n_classes` defaults to one past the largest label.
pub fn import_csv(path: &Path, n_classes: Option<usize>) -> Result<EmbeddingTable> {
    import_csv_bytes(&fsutil::read(path)?, n_classes)
}

pub fn import_csv_bytes(bytes: &[u8], n_classes: Option<usize>) -> Result<EmbeddingTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("id") || headers.get(1) != Some("label") {
        return Err(Error::InvariantViolation(
            "CSV header must start with id,label".into(),
        ));
    }
    let dim = headers.iter().skip(2).filter(|h| h.starts_with('f')).count();
    let n_logits = headers.iter().skip(2).filter(|h| h.starts_with('l')).count();
    if dim + n_logits + 2 != headers.len() {
        return Err(Error::InvariantViolation(
            "CSV columns after id,label must be f<k> features then l<k> logits".into(),
        ));
    }
    if headers.iter().skip(2 + dim).any(|h| !h.starts_with('l')) {
        return Err(Error::InvariantViolation(
            "CSV logit columns must follow all feature columns".into(),
        ));
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut features = Vec::new();
    let mut logits = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        ids.push(field(0).parse::<u64>().map_err(|e| {
            Error::InvariantViolation(format!("bad id {:?}: {e}", field(0)))
        })?);
        labels.push(field(1).parse::<u32>().map_err(|e| {
            Error::InvariantViolation(format!("bad label {:?}: {e}", field(1)))
        })?);
        for i in 2..2 + dim + n_logits {
            let v = field(i)
                .parse::<f32>()
                .map_err(|e| Error::InvariantViolation(format!("bad value {:?}: {e}", field(i))))?;
            if i < 2 + dim {
                features.push(v);
            } else {
                logits.push(v);
            }
        }
    }
    let n_classes = match (n_logits, n_classes) {
        (0, Some(c)) => c,
        (0, None) => labels.iter().max().map_or(0, |&m| m as usize + 1),
        (c, Some(given)) if c != given => {
            return Err(Error::ClassCountMismatch {
                expected: given,
                actual: c,
            })
        }
        (c, _) => c,
    };
    EmbeddingTable::new(
        dim,
        n_classes,
        ids,
        labels,
        features,
        (n_logits > 0).then_some(logits),
    )
}

/// Writes a table as CSV in the same layout [`import_csv`] reads.
pub fn export_csv(table: &EmbeddingTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((1..=table.dim()).map(|k| format!("f{k}")));
    if table.logits().is_some() {
        header.extend((1..=table.n_classes()).map(|k| format!("l{k}")));
    }
    w.write_record(&header)?;
    for row in 0..table.len() {
        let mut rec = vec![table.sample_ids()[row].to_string(), table.labels()[row].to_string()];
        rec.extend(table.feature(row).iter().map(|v| v.to_string()));
        if let Some(l) = table.logit_row(row) {
            rec.extend(l.iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::Runtime(format!("flushing CSV: {e}")))
}
