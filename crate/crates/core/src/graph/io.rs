//! Dataset files: a node CSV, a whitespace edge list and a key-value config.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::Graph;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::sparse::Csr;

pub const CONFIG_FILE: &str = "dataset.cfg";

/// Column roles and the binarization rule for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub name: String,
    pub nodes_file: String,
    pub edges_file: String,
    pub sensitive: String,
    pub label: String,
    /// Raw sensitive values `>= threshold` map to 1. Without a threshold the
    /// column must already be 0/1.
    pub sensitive_threshold: Option<f64>,
    /// Columns present in the node file but not used as features (ids etc).
    pub drop: Vec<String>,
    /// Z-score every non-sensitive feature column after loading.
    pub standardize: bool,
}

impl DatasetConfig {
    pub fn new(name: &str, sensitive: &str, label: &str) -> Self {
        DatasetConfig {
            name: name.to_string(),
            nodes_file: "nodes.csv".into(),
            edges_file: "edges.txt".into(),
            sensitive: sensitive.to_string(),
            label: label.to_string(),
            sensitive_threshold: None,
            drop: Vec::new(),
            standardize: false,
        }
    }

    pub fn from_kv(kv: &KeyValues, default_name: &str) -> Result<Self> {
        let required = |k: &str| {
            kv.get(k).map(str::to_string).ok_or_else(|| Error::Config(format!("dataset config missing `{k}`")))
        };
        Ok(DatasetConfig {
            name: kv.get("name").unwrap_or(default_name).to_string(),
            nodes_file: kv.get("nodes").unwrap_or("nodes.csv").to_string(),
            edges_file: kv.get("edges").unwrap_or("edges.txt").to_string(),
            sensitive: required("sensitive")?,
            label: required("label")?,
            sensitive_threshold: kv.parsed("sensitive_threshold")?,
            drop: kv.list("drop")?.unwrap_or_default(),
            standardize: kv.parsed_or("standardize", false)?,
        })
    }

    /// Reads `dataset.cfg` from a dataset directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let kv = KeyValues::read(&dir.join(CONFIG_FILE))?;
        let default_name = dir.file_name().and_then(|s| s.to_str()).unwrap_or("dataset");
        Self::from_kv(&kv, default_name)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("name", &self.name);
        kv.set("nodes", &self.nodes_file);
        kv.set("edges", &self.edges_file);
        kv.set("sensitive", &self.sensitive);
        kv.set("label", &self.label);
        if let Some(t) = self.sensitive_threshold {
            kv.set("sensitive_threshold", t);
        }
        if !self.drop.is_empty() {
            kv.set("drop", self.drop.join(","));
        }
        kv.set("standardize", self.standardize);
        kv
    }
}

fn parse_label(raw: &str, row: usize) -> Result<Option<u8>> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| Error::Validation(format!("row {row}: label `{t}` is not numeric")))?;
    match v {
        v if v < 0.0 => Ok(None),
        0.0 => Ok(Some(0)),
        1.0 => Ok(Some(1)),
        _ => Err(Error::Validation(format!("row {row}: label {v} is not binary"))),
    }
}

/// Loads a dataset directory into a validated graph with no split tags.
pub fn load_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<Graph> {
    let nodes_path = dir.join(&cfg.nodes_file);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&nodes_path)
        .map_err(|e| Error::Parse(format!("{}: {e}", nodes_path.display())))?;
    let header: Vec<String> =
        reader.headers().map_err(|e| Error::Parse(e.to_string()))?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in {}", nodes_path.display())))
    };
    let label_col = find(&cfg.label)?;
    find(&cfg.sensitive)?;
    for d in &cfg.drop {
        find(d)?;
    }
    let feature_cols: Vec<usize> =
        (0..header.len()).filter(|&c| c != label_col && !cfg.drop.contains(&header[c])).collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| header[c].clone()).collect();
    let sensitive_index = feature_names
        .iter()
        .position(|n| *n == cfg.sensitive)
        .ok_or_else(|| Error::Schema("sensitive column cannot also be the label".into()))?;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(Error::Parse(format!("row {row}: expected {} fields", header.len())));
        }
        for (k, &c) in feature_cols.iter().enumerate() {
            let raw = record[c].trim();
            let mut v: f64 =
                raw.parse().map_err(|_| Error::Parse(format!("row {row}, column `{}`: `{raw}`", header[c])))?;
            if k == sensitive_index {
                if let Some(t) = cfg.sensitive_threshold {
                    v = if v >= t { 1.0 } else { 0.0 };
                }
            }
            values.push(v);
        }
        labels.push(parse_label(&record[label_col], row)?);
    }
    let n = labels.len();
    let mut features =
        Array2::from_shape_vec((n, feature_cols.len()), values).map_err(|e| Error::Parse(e.to_string()))?;
    if cfg.standardize {
        standardize_columns(&mut features, sensitive_index);
    }

    let edges = read_edges(&dir.join(&cfg.edges_file), n)?;
    let g = Graph {
        adjacency: Csr::from_undirected_edges(n, &edges),
        features,
        sensitive_index,
        feature_names,
        labels,
        split: vec![None; n],
    };
    g.validate()?;
    Ok(g)
}

fn standardize_columns(x: &mut Array2<f64>, skip: usize) {
    let n = x.nrows() as f64;
    for (c, mut col) in x.columns_mut().into_iter().enumerate() {
        if c == skip || n == 0.0 {
            continue;
        }
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        col.mapv_inplace(|v| (v - mean) / sd);
    }
}

fn read_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut endpoint = || -> Result<usize> {
            let tok = it.next().ok_or_else(|| Error::Parse(format!("edge line {}: expected `u v`", lineno + 1)))?;
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Parse(format!("edge line {}: bad node id `{tok}`", lineno + 1)))
        };
        let (u, v) = (endpoint()?, endpoint()?);
        if u >= n || v >= n {
            return Err(Error::Validation(format!("edge line {}: endpoint {} outside 0..{n}", lineno + 1, u.max(v))));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

/// Writes `graph` as a dataset directory readable by [`load_dataset`].
pub fn save_dataset(dir: &Path, graph: &Graph, name: &str) -> Result<DatasetConfig> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let label = unique_label_name(&graph.feature_names);
    let mut cfg = DatasetConfig::new(name, &graph.feature_names[graph.sensitive_index], &label);
    cfg.standardize = false;

    let nodes_path = dir.join(&cfg.nodes_file);
    let mut w =
        csv::Writer::from_path(&nodes_path).map_err(|e| Error::Parse(format!("{}: {e}", nodes_path.display())))?;
    let mut header = graph.feature_names.clone();
    header.push(label);
    w.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for (row, l) in graph.features.rows().into_iter().zip(&graph.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(l.map_or(String::new(), |l| l.to_string()));
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&nodes_path, e))?;

    let edges_path = dir.join(&cfg.edges_file);
    let mut f = std::io::BufWriter::new(fs::File::create(&edges_path).map_err(|e| Error::io(&edges_path, e))?);
    for (u, v) in graph.adjacency.edges() {
        writeln!(f, "{u} {v}").map_err(|e| Error::io(&edges_path, e))?;
    }
    f.flush().map_err(|e| Error::io(&edges_path, e))?;

    let cfg_path: PathBuf = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_kv().to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(cfg)
}

fn unique_label_name(features: &[String]) -> String {
    let mut name = "label".to_string();
    while features.contains(&name) {
        name.push('_');
    }
    name
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::toy_graph;
    use ndarray::array;

    fn write(dir: &Path, nodes: &str, edges: &str) {
        fs::write(dir.join("nodes.csv"), nodes).unwrap();
        fs::write(dir.join("edges.txt"), edges).unwrap();
    }

    #[test]
    fn two_node_edge_is_symmetrized() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "s,f,y\n0,1.5,1\n1,2.5,0\n", "0 1\n");
        let g = load_dataset(dir.path(), &DatasetConfig::new("t", "s", "y")).unwrap();
        assert_eq!(g.adjacency.to_dense(), array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(g.sensitive_index, 0);
        assert_eq!(g.labels, vec![Some(1), Some(0)]);
    }

    #[test]
    fn dangling_endpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "s,y\n0,1\n1,0\n0,0\n", "0 1\n1 99\n");
        let err = load_dataset(dir.path(), &DatasetConfig::new("t", "s", "y")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "s,y\n0,1\n", "");
        let err = load_dataset(dir.path(), &DatasetConfig::new("t", "age", "y")).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn threshold_binarizes_and_raw_values_must_be_binary() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "id,age,f,y\n0,22,1,1\n1,40,0,\n2,25,3,0\n", "2 0\n");
        let mut cfg = DatasetConfig::new("t", "age", "y");
        cfg.drop = vec!["id".into()];
        assert!(matches!(load_dataset(dir.path(), &cfg), Err(Error::Validation(_))));
        cfg.sensitive_threshold = Some(25.0);
        let g = load_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(g.sensitive(), vec![0, 1, 1]);
        assert_eq!(g.feature_names, vec!["age", "f"]);
        assert_eq!(g.labels[1], None);
    }

    #[test]
    fn self_loops_and_duplicates_dropped() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "s,y\n0,1\n1,0\n0,0\n", "0 0\n0 1\n1 0\n# c\n\n2 1\n");
        let g = load_dataset(dir.path(), &DatasetConfig::new("t", "s", "y")).unwrap();
        assert_eq!(g.adjacency.edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn save_then_load_reproduces_graph() {
        let g = toy_graph(9);
        let dir = tempfile::tempdir().unwrap();
        let cfg = save_dataset(dir.path(), &g, "toy").unwrap();
        let back = load_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(back, g);
        let reread = DatasetConfig::from_dir(dir.path()).unwrap();
        assert_eq!(reread, cfg);
        let dir2 = tempfile::tempdir().unwrap();
        save_dataset(dir2.path(), &back, "toy").unwrap();
        assert_eq!(load_dataset(dir2.path(), &cfg).unwrap().adjacency, g.adjacency);
    }

    #[test]
    fn standardize_leaves_sensitive_column() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "s,f,y\n0,1,1\n1,3,0\n", "");
        let mut cfg = DatasetConfig::new("t", "s", "y");
        cfg.standardize = true;
        let g = load_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(g.features, array![[0.0, -1.0], [1.0, 1.0]]);
    }
}
