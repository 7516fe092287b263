//! Labeled mesh corpora and their on-disk directory format: one OBJ per
//! sample plus `labels.csv` with a `filename,identity` header.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Result, SfmError};
use crate::mesh::{load_obj, save_obj, Mesh};

pub const LABELS_FILE: &str = "labels.csv";

/// Meshes sharing one topology, each tagged with a dense class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    meshes: Vec<Mesh>,
    labels: Vec<usize>,
    n_classes: usize,
    names: Vec<String>,
    /// External identity id of each dense class.
    class_ids: Vec<i64>,
}

impl LabeledCorpus {
    /// Labels must cover `0..n_classes` with every class non-empty.
    pub fn new(meshes: Vec<Mesh>, labels: Vec<usize>) -> Result<Self> {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let names = (0..meshes.len()).map(sample_name).collect();
        let class_ids = (0..n_classes as i64).collect();
        let corpus = Self {
            meshes,
            labels,
            n_classes,
            names,
            class_ids,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Maps arbitrary integer identities to dense labels in ascending id order.
    pub fn from_identities(meshes: Vec<Mesh>, identities: &[i64], names: Vec<String>) -> Result<Self> {
        let mut ids: Vec<i64> = identities.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let index: BTreeMap<i64, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let labels = identities.iter().map(|id| index[id]).collect();
        let corpus = Self {
            n_classes: ids.len(),
            meshes,
            labels,
            names,
            class_ids: ids,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.meshes.is_empty() {
            issues.push("corpus is empty".to_string());
        }
        if self.labels.len() != self.meshes.len() {
            issues.push(format!("{} labels for {} meshes", self.labels.len(), self.meshes.len()));
        }
        if self.names.len() != self.meshes.len() {
            issues.push(format!("{} names for {} meshes", self.names.len(), self.meshes.len()));
        }
        if let Some(first) = self.meshes.first() {
            for (i, m) in self.meshes.iter().enumerate() {
                if m.vertex_count() != first.vertex_count() {
                    issues.push(format!(
                        "{}: {} vertices, expected {}",
                        self.names.get(i).map_or("?", String::as_str),
                        m.vertex_count(),
                        first.vertex_count()
                    ));
                }
            }
        }
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            match counts.get_mut(l) {
                Some(c) => *c += 1,
                None => issues.push(format!("label {l} out of range 0..{}", self.n_classes)),
            }
        }
        for (c, &k) in counts.iter().enumerate() {
            if k == 0 {
                issues.push(format!("class {c} has no samples"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(SfmError::Corpus(issues))
        }
    }

    pub fn len(&self) -> usize {
        self.meshes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meshes.is_empty()
    }

    pub fn meshes(&self) -> &[Mesh] {
        &self.meshes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn class_ids(&self) -> &[i64] {
        &self.class_ids
    }

    pub fn vertex_count(&self) -> usize {
        self.meshes[0].vertex_count()
    }

    /// External identity of sample `i`.
    pub fn identity_of(&self, i: usize) -> i64 {
        self.class_ids[self.labels[i]]
    }

    /// Flattened meshes as rows (`N x 3n`).
    pub fn targets(&self) -> DMatrix<f64> {
        let dim = 3 * self.vertex_count();
        DMatrix::from_fn(self.len(), dim, |r, c| self.meshes[r].vertices()[c])
    }

    /// Samples whose identity satisfies `keep`, relabeled densely.
    pub fn filter_identities(&self, keep: impl Fn(i64) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.identity_of(i))).collect();
        let meshes = idx.iter().map(|&i| self.meshes[i].clone()).collect();
        let ids: Vec<i64> = idx.iter().map(|&i| self.identity_of(i)).collect();
        let names = idx.iter().map(|&i| self.names[i].clone()).collect();
        Self::from_identities(meshes, &ids, names)
    }

    /// Writes `<name>` OBJ files and `labels.csv` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| SfmError::io(dir, e))?;
        let mut labels = String::from("filename,identity\n");
        for (i, mesh) in self.meshes.iter().enumerate() {
            save_obj(mesh, dir.join(&self.names[i]))?;
            labels.push_str(&format!("{},{}\n", self.names[i], self.identity_of(i)));
        }
        let path = dir.join(LABELS_FILE);
        fs::write(&path, labels).map_err(|e| SfmError::io(path, e))
    }

    /// Reads a corpus directory, reporting every unreadable or inconsistent
    /// entry at once.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let entries = read_labels(dir)?;
        let mut issues = Vec::new();
        let mut meshes = Vec::with_capacity(entries.len());
        for entry in &entries {
            match load_obj(dir.join(&entry.filename)) {
                Ok(m) => meshes.push(m),
                Err(e) => issues.push(e.to_string()),
            }
        }
        if !issues.is_empty() {
            return Err(SfmError::Corpus(issues));
        }
        let ids: Vec<i64> = entries.iter().map(|e| e.identity).collect();
        let names = entries.into_iter().map(|e| e.filename).collect();
        Self::from_identities(meshes, &ids, names)
    }
}

pub fn sample_name(i: usize) -> String {
    format!("sample_{i:05}.obj")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelEntry {
    pub filename: String,
    pub identity: i64,
}

/// Parses `dir/labels.csv`.
pub fn read_labels(dir: &Path) -> Result<Vec<LabelEntry>> {
    let path: PathBuf = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| SfmError::io(&path, e))?;
    let parse_err = |line: usize, message: String| SfmError::Parse {
        path: path.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["filename", "identity"] {
        return Err(parse_err(1, "expected header 'filename,identity'".into()));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let filename = record.get(0).unwrap_or("").to_string();
        if filename.is_empty() {
            return Err(parse_err(line, "empty filename".into()));
        }
        let identity = record
            .get(1)
            .unwrap_or("")
            .parse::<i64>()
            .map_err(|e| parse_err(line, format!("identity: {e}")))?;
        out.push(LabelEntry { filename, identity });
    }
    Ok(out)
}
