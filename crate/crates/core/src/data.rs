//! Multigraph datasets: the in-memory container, the on-disk format,
//! planted-partition synthetic generation and train/val/test splits.
//!
//! On disk a dataset is a directory holding a `manifest.json`, one edge list
//! per view (`src dst` per line, 0-indexed, `#` comments allowed), a
//! features CSV (one row per node, no header), a labels file (one integer per
//! line) and an optional split file (`train`, `val`, `test` or `-` per line).

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Relative paths in a manifest resolve against this directory when set.
pub const DATA_ROOT_ENV: &str = "SMGCN_DATA_ROOT";

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

impl Splits {
    pub fn empty(n: usize) -> Self {
        Self {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    pub fn train_indices(&self) -> Vec<usize> {
        indices(&self.train)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        indices(&self.val)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        indices(&self.test)
    }

    pub fn is_disjoint(&self) -> bool {
        (0..self.train.len()).all(|i| {
            [self.train[i], self.val[i], self.test[i]]
                .iter()
                .filter(|b| **b)
                .count()
                <= 1
        })
    }
}

/// One node set observed through `m ≥ 2` relations.
#[derive(Debug, Clone)]
pub struct Multigraph {
    views: Vec<SparseMatrix>,
    view_names: Vec<String>,
    features: DenseMatrix,
    labels: Vec<usize>,
    splits: Splits,
}

impl Multigraph {
    pub fn new(
        views: Vec<SparseMatrix>,
        features: DenseMatrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "a multigraph needs at least 2 views, got {}",
                views.len()
            )));
        }
        let n = views[0].n();
        if let Some(v) = views.iter().find(|v| v.n() != n) {
            return Err(Error::DimensionMismatch(format!(
                "views disagree on n: {n} vs {}",
                v.n()
            )));
        }
        if features.rows() != n || labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "n={n} but features have {} rows and labels {} entries",
                features.rows(),
                labels.len()
            )));
        }
        let view_names = (0..views.len()).map(|v| format!("view{v}")).collect();
        Ok(Self {
            views,
            view_names,
            features,
            labels,
            splits: Splits::empty(n),
        })
    }

    pub fn with_splits(mut self, splits: Splits) -> Result<Self> {
        let n = self.n();
        if splits.train.len() != n || splits.val.len() != n || splits.test.len() != n {
            return Err(Error::DimensionMismatch(
                "split masks must have length n".into(),
            ));
        }
        if !splits.is_disjoint() {
            return Err(Error::InvalidConfig("split masks overlap".into()));
        }
        self.splits = splits;
        Ok(self)
    }

    pub fn with_view_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.views.len() {
            return Err(Error::DimensionMismatch("one name per view".into()));
        }
        self.view_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn views(&self) -> &[SparseMatrix] {
        &self.views
    }

    pub fn view_names(&self) -> &[String] {
        &self.view_names
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&c| c + 1)
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }
}

/// Stratified disjoint masks covering every node. Within each class the
/// node order is shuffled, then the first `round(r_train · size)` nodes go
/// to train and the next `round(r_val · size)` to val.
pub fn split_masks(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidConfig(format!(
            "split ratios {ratios:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = labels.len();
    let mut splits = Splits::empty(n);
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in 0..classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let size = members.len();
        let n_train = ((ratios[0] * size as f64).round() as usize).min(size);
        let n_val = ((ratios[1] * size as f64).round() as usize).min(size - n_train);
        for (k, &i) in members.iter().enumerate() {
            if k < n_train {
                splits.train[i] = true;
            } else if k < n_train + n_val {
                splits.val[i] = true;
            } else {
                splits.test[i] = true;
            }
        }
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub name: String,
    /// Edge-list path.
    pub edges: PathBuf,
    /// Declared edge count, checked advisory-only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_edges: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub n: usize,
    pub d0: usize,
    pub m: usize,
    pub views: Vec<ViewEntry>,
    pub features: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
}

impl DatasetManifest {
    /// Reads a manifest from a JSON file, or from `manifest.json` inside a
    /// directory. Returns the manifest and the directory relative paths
    /// resolve against.
    pub fn read(path: &Path) -> Result<(Self, PathBuf)> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|source| Error::Manifest {
                path: file.clone(),
                source,
            })?;
        let base = match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) => PathBuf::from(root),
            None => file.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        Ok((manifest, base))
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(validation("m", ">= 2", self.m));
        }
        if self.views.len() != self.m {
            return Err(validation("views", self.m, self.views.len()));
        }
        Ok(())
    }
}

fn validation(field: &str, expected: impl ToString, found: impl ToString) -> Error {
    Error::Validation {
        field: field.to_string(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub graph: Multigraph,
    /// Advisory findings that did not stop the load.
    pub warnings: Vec<String>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn parse_err(path: &Path, line: usize, msg: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}

/// Reads an edge list into a binary symmetric adjacency.
pub fn read_edge_list(path: &Path, n: usize, field: &str) -> Result<SparseMatrix> {
    let mut edges = Vec::new();
    for (ln, line) in read_lines(path)? {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 2 || toks.len() > 3 {
            return Err(parse_err(path, ln, "expected `src dst`"));
        }
        let i: usize = toks[0].parse().map_err(|e| parse_err(path, ln, e))?;
        let j: usize = toks[1].parse().map_err(|e| parse_err(path, ln, e))?;
        if i >= n || j >= n {
            return Err(validation(
                field,
                format!("node ids < {n}"),
                format!("edge ({i}, {j})"),
            ));
        }
        edges.push((i, j));
    }
    SparseMatrix::from_edges(n, &edges)
}

pub fn load_dataset(manifest: &DatasetManifest, base: &Path) -> Result<LoadedDataset> {
    manifest.validate()?;
    let n = manifest.n;
    let mut warnings = Vec::new();

    let mut views = Vec::with_capacity(manifest.m);
    for (v, entry) in manifest.views.iter().enumerate() {
        let field = format!("views[{v}].edges");
        let adj = read_edge_list(&resolve(base, &entry.edges), n, &field)?;
        if let Some(expected) = entry.expected_edges {
            // undirected edges are stored twice; accept either convention
            let off_diag = adj.without_diagonal().nnz();
            let loops = adj.nnz() - off_diag;
            let candidates = [adj.nnz(), off_diag / 2 + loops];
            if !candidates.contains(&expected) {
                warnings.push(format!(
                    "view {} declares {expected} edges, loaded {} directed / {} undirected",
                    entry.name, candidates[0], candidates[1]
                ));
            }
        }
        views.push(adj);
    }

    let feat_path = resolve(base, &manifest.features);
    let rows = read_lines(&feat_path)?;
    if rows.len() != n {
        return Err(validation("n", n, format!("{} feature rows", rows.len())));
    }
    let mut data = Vec::with_capacity(n * manifest.d0);
    for (ln, line) in &rows {
        let before = data.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|e| parse_err(&feat_path, *ln, e))?;
            data.push(v);
        }
        if data.len() - before != manifest.d0 {
            return Err(validation(
                "d0",
                manifest.d0,
                format!("{} columns on line {ln}", data.len() - before),
            ));
        }
    }
    let features = DenseMatrix::new(n, manifest.d0, data)?;

    let label_path = resolve(base, &manifest.labels);
    let label_rows = read_lines(&label_path)?;
    if label_rows.len() != n {
        return Err(validation(
            "labels",
            n,
            format!("{} labels", label_rows.len()),
        ));
    }
    let labels = label_rows
        .iter()
        .map(|(ln, l)| {
            l.parse::<usize>()
                .map_err(|e| parse_err(&label_path, *ln, e))
        })
        .collect::<Result<Vec<_>>>()?;

    let splits = match &manifest.split {
        Some(p) => {
            let path = resolve(base, p);
            let rows = read_lines(&path)?;
            if rows.len() != n {
                return Err(validation("split", n, format!("{} entries", rows.len())));
            }
            let mut s = Splits::empty(n);
            for (i, (ln, tok)) in rows.iter().enumerate() {
                match tok.as_str() {
                    "train" => s.train[i] = true,
                    "val" => s.val[i] = true,
                    "test" => s.test[i] = true,
                    "-" => {}
                    other => return Err(parse_err(&path, *ln, format!("unknown split `{other}`"))),
                }
            }
            s
        }
        None => {
            warnings.push("no split file; using a seeded 60/20/20 stratified split".into());
            split_masks(&labels, [0.6, 0.2, 0.2], 0)?
        }
    };

    let graph = Multigraph::new(views, features, labels)?
        .with_splits(splits)?
        .with_view_names(manifest.views.iter().map(|v| v.name.clone()).collect())?;
    Ok(LoadedDataset { graph, warnings })
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = dir.join(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes a multigraph in the format [`load_dataset`] reads, returning the
/// manifest that was written.
pub fn write_dataset(g: &Multigraph, dir: &Path, name: &str) -> Result<DatasetManifest> {
    let mut views = Vec::with_capacity(g.view_count());
    for (v, adj) in g.views().iter().enumerate() {
        let file = format!("view{v}.txt");
        let mut text = String::new();
        let mut count = 0;
        for (i, j, _) in adj.iter().filter(|&(i, j, _)| i <= j) {
            text.push_str(&format!("{i} {j}\n"));
            count += 1;
        }
        write_atomic(&dir.join(&file), text.as_bytes())?;
        views.push(ViewEntry {
            name: g.view_names()[v].clone(),
            edges: file.into(),
            expected_edges: Some(count),
        });
    }

    let mut feats = String::new();
    for r in 0..g.n() {
        let row: Vec<String> = g.features().row(r).iter().map(|v| v.to_string()).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    write_atomic(&dir.join("features.csv"), feats.as_bytes())?;

    let labels: String = g.labels().iter().map(|l| format!("{l}\n")).collect();
    write_atomic(&dir.join("labels.csv"), labels.as_bytes())?;

    let s = g.splits();
    let split: String = (0..g.n())
        .map(|i| {
            if s.train[i] {
                "train\n"
            } else if s.val[i] {
                "val\n"
            } else if s.test[i] {
                "test\n"
            } else {
                "-\n"
            }
        })
        .collect();
    write_atomic(&dir.join("split.csv"), split.as_bytes())?;

    let manifest = DatasetManifest {
        name: name.to_string(),
        n: g.n(),
        d0: g.feature_dim(),
        m: g.view_count(),
        views,
        features: "features.csv".into(),
        labels: "labels.csv".into(),
        split: Some("split.csv".into()),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), format!("{json}\n").as_bytes())?;
    Ok(manifest)
}

/// Planted-partition multigraph parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Per-view probability of flipping each node pair.
    pub noise: Vec<f64>,
    pub feature_dim: usize,
    /// Magnitude of the class-centre coordinate against unit Gaussian noise.
    pub feature_snr: f64,
    pub seed: u64,
    /// Explicit per-view sampling seeds; derived from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_seeds: Option<Vec<u64>>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return bad(format!(
                "need 0 <= p_out < p_in <= 1, got {} / {}",
                self.p_out, self.p_in
            ));
        }
        if self.classes < 2 || self.n < self.classes {
            return bad(format!(
                "need 2 <= classes <= n, got {} / {}",
                self.classes, self.n
            ));
        }
        if self.m < 2 {
            return bad(format!("need m >= 2, got {}", self.m));
        }
        if self.noise.len() != self.m || self.noise.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("noise needs one probability in [0, 1] per view".into());
        }
        if self.feature_dim < self.classes {
            return bad("feature_dim must be at least the class count".into());
        }
        if let Some(s) = &self.view_seeds {
            if s.len() != self.m {
                return bad("view_seeds needs one seed per view".into());
            }
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Multigraph> {
    spec.validate()?;
    let n = spec.n;
    let labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();

    let view_seeds = spec.view_seeds.clone().unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1);
        (0..spec.m).map(|_| rng.next_u64()).collect()
    });

    let mut views = Vec::with_capacity(spec.m);
    for (v, &vs) in view_seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(vs);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let p = if labels[i] == labels[j] {
                    spec.p_in
                } else {
                    spec.p_out
                };
                // both draws are always taken so the stream layout is noise-independent
                let present = rng.random::<f64>() < p;
                let flip = rng.random::<f64>() < spec.noise[v];
                if present != flip {
                    edges.push((i, j));
                }
            }
        }
        views.push(SparseMatrix::from_edges(n, &edges)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2);
    let features = DenseMatrix::from_fn(n, spec.feature_dim, |i, k| {
        let noise: f64 = rng.sample(StandardNormal);
        if k == labels[i] {
            noise + spec.feature_snr
        } else {
            noise
        }
    });

    let splits = split_masks(&labels, [0.6, 0.2, 0.2], spec.seed)?;
    Multigraph::new(views, features, labels)?.with_splits(splits)
}
