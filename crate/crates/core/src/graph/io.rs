use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Graph, Masks};
use crate::error::{Error, Result};

/// Column layout of the attribute file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeSchema {
    pub id_column: String,
    pub label_column: String,
    pub sensitive_column: String,
    /// Declared number of sensitive values; values beyond it are rejected.
    pub sensitive_arity: Option<usize>,
    pub num_classes: Option<usize>,
    pub delimiter: char,
}

impl Default for AttributeSchema {
    fn default() -> Self {
        Self {
            id_column: "id".into(),
            label_column: "label".into(),
            sensitive_column: "sensitive".into(),
            sensitive_arity: None,
            num_classes: None,
            delimiter: ',',
        }
    }
}

/// Paths of a serialized graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub attributes: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

impl GraphFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            edges: dir.join("edges.tsv"),
            attributes: dir.join("attributes.csv"),
            train: dir.join("train.txt"),
            val: dir.join("val.txt"),
            test: dir.join("test.txt"),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads an attribute table and a tab-separated edge list.
pub fn load_graph(edge_path: &Path, attr_path: &Path, schema: &AttributeSchema) -> Result<Graph> {
    let ctx = attr_path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_path(attr_path)
        .map_err(|e| Error::parse(&ctx, e))?;
    let header = reader.headers().map_err(|e| Error::parse(&ctx, e))?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(&ctx, format!("missing column `{name}`")))
    };
    let id_col = find(&schema.id_column)?;
    let label_col = find(&schema.label_column)?;
    let sens_col = find(&schema.sensitive_column)?;
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|c| ![id_col, label_col, sens_col].contains(c))
        .collect();
    let dim = feature_cols.len();

    let mut rows: Vec<(usize, Option<usize>, usize, Vec<f64>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(&ctx, e))?;
        let at = |c: usize| record.get(c).unwrap_or("");
        let row_ctx = || format!("{ctx} row {}", line + 2);
        let id: usize = at(id_col).parse().map_err(|e| Error::parse(row_ctx(), e))?;
        let label = match at(label_col) {
            "" | "-1" => None,
            s => Some(s.parse().map_err(|e| Error::parse(row_ctx(), e))?),
        };
        let sensitive: usize = at(sens_col).parse().map_err(|e| Error::parse(row_ctx(), e))?;
        let features = feature_cols
            .iter()
            .map(|&c| {
                at(c).parse::<f64>().map_err(|_| {
                    Error::parse(row_ctx(), format!("non-numeric attribute `{}` in column `{}`", at(c), &header[c]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, label, sensitive, features));
    }
    let n = rows.len();
    let mut slots: Vec<Option<(Option<usize>, usize, Vec<f64>)>> = vec![None; n];
    for (id, label, sensitive, features) in rows {
        let slot = slots
            .get_mut(id)
            .ok_or_else(|| Error::parse(&ctx, format!("node id {id} outside 0..{n}")))?;
        if slot.replace((label, sensitive, features)).is_some() {
            return Err(Error::parse(&ctx, format!("duplicate node id {id}")));
        }
    }
    let mut labels = Vec::with_capacity(n);
    let mut sensitive = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * dim);
    for slot in slots {
        let (l, s, f) = slot.expect("ids are a permutation of 0..n");
        labels.push(l);
        sensitive.push(s);
        features.extend(f);
    }

    let edge_text = read(edge_path)?;
    let mut edges = Vec::new();
    for (line, text) in edge_text.lines().enumerate() {
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let mut parts = text.split_whitespace();
        let mut next = || -> Result<usize> {
            parts
                .next()
                .ok_or_else(|| Error::parse(format!("{} line {}", edge_path.display(), line + 1), "expected two ids"))?
                .parse()
                .map_err(|e| Error::parse(format!("{} line {}", edge_path.display(), line + 1), e))
        };
        let (u, v) = (next()?, next()?);
        edges.push((u, v));
    }
    let mut graph = Graph::new(n, edges, features, dim, labels, sensitive)?;
    if let Some(arity) = schema.sensitive_arity {
        graph = graph.with_sensitive_arity(arity)?;
    }
    if let Some(classes) = schema.num_classes {
        graph = graph.with_num_classes(classes)?;
    }
    Ok(graph)
}

pub fn load_mask(path: &Path) -> Result<Vec<usize>> {
    read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse().map_err(|e| Error::parse(path.display().to_string(), e)))
        .collect()
}

pub fn save_mask(path: &Path, nodes: &[usize]) -> Result<()> {
    let mut text = String::new();
    for v in nodes {
        text.push_str(&v.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl GraphFiles {
    pub fn load(&self, schema: &AttributeSchema) -> Result<Graph> {
        let graph = load_graph(&self.edges, &self.attributes, schema)?;
        let n = graph.node_count();
        let masks = Masks::from_lists(n, &load_mask(&self.train)?, &load_mask(&self.val)?, &load_mask(&self.test)?)?;
        graph.with_masks(masks)
    }
}

/// Writes the edge list, attribute table and split files into `dir`.
pub fn save_graph(graph: &Graph, dir: &Path) -> Result<GraphFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = GraphFiles::in_dir(dir);

    let mut edges = String::new();
    for &(u, v) in graph.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    fs::write(&files.edges, edges).map_err(|e| Error::io(&files.edges, e))?;

    let file = fs::File::create(&files.attributes).map_err(|e| Error::io(&files.attributes, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut header = vec!["id".to_string(), "label".into(), "sensitive".into()];
    header.extend((0..graph.dim()).map(|k| format!("x{k}")));
    let io_err = |e| Error::io(&files.attributes, e);
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for v in 0..graph.node_count() {
        let label = graph.label(v).map_or(String::new(), |y| y.to_string());
        let mut line = format!("{v},{label},{}", graph.sensitive()[v]);
        for x in graph.feature_row(v) {
            line.push(',');
            line.push_str(&x.to_string());
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;

    save_mask(&files.train, &graph.train_nodes())?;
    save_mask(&files.val, &graph.val_nodes())?;
    save_mask(&files.test, &graph.test_nodes())?;
    Ok(files)
}
