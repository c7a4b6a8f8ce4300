//! Graph data model, the GCN propagation operator and the on-disk layout
//! (`edges.tsv`, `features.tsv`/`features.f32`, `labels.tsv`, `meta.json`).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CaneError, Result};

/// Undirected attributed graph. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    num_classes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Array2<f32>,
}

impl Graph {
    /// Builds a graph from possibly directed, possibly duplicated edges.
    /// Each pair is canonicalized to `(min, max)` and deduplicated.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Array2<f32>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(CaneError::arg(format!("num_classes must be >= 2, got {num_classes}")));
        }
        if features.nrows() != n {
            return Err(CaneError::arg(format!(
                "feature matrix has {} rows for {n} nodes",
                features.nrows()
            )));
        }
        if features.ncols() == 0 {
            return Err(CaneError::arg("feature matrix needs at least one column"));
        }
        if let Some(pos) = features.iter().position(|x| !x.is_finite()) {
            let d = features.ncols();
            return Err(CaneError::arg(format!(
                "non-finite feature at node {} column {}",
                pos / d,
                pos % d
            )));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(CaneError::arg(format!("self-loop on node {u}")));
            }
            if u >= n || v >= n {
                return Err(CaneError::arg(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            num_classes,
            edges,
            neighbors,
            features,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Canonical `(u, v)` pairs with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.features.view()
    }

    /// Features widened to 64-bit for accumulation.
    pub fn features_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }
}

/// Ground-truth labels. Only evaluation and diagnostic entry points accept
/// this type, so the label-free stages cannot reach it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

impl Truth {
    pub fn new(labels: Vec<Option<usize>>, num_classes: usize) -> Result<Self> {
        if let Some((v, c)) = labels
            .iter()
            .enumerate()
            .find_map(|(v, c)| c.filter(|&c| c >= num_classes).map(|c| (v, c)))
        {
            return Err(CaneError::arg(format!(
                "label {c} of node {v} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { labels, num_classes })
    }

    /// Fully labeled truth.
    pub fn dense(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::new(labels.into_iter().map(Some).collect(), num_classes)
    }

    pub fn get(&self, v: usize) -> Option<usize> {
        self.labels.get(v).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }
}

/// A graph together with its (optional) evaluation labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub truth: Option<Truth>,
}

/// `D^{-1/2} (A + I) D^{-1/2}` in compressed-row form. Column indices are
/// sorted within each row, so the entry order is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_graph(g: &Graph) -> Self {
        Self::from_edges(g.num_nodes(), g.edges().iter().copied())
    }

    /// Builds the operator from canonical `(u < v)` edges. Used directly by
    /// edge dropout with a subset of the graph's edges.
    pub fn from_edges(n: usize, edges: impl Iterator<Item = (usize, usize)> + Clone) -> Self {
        let mut deg = vec![1usize; n];
        for (u, v) in edges.clone() {
            deg[u] += 1;
            deg[v] += 1;
        }
        let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        for &d in &deg {
            row_ptr.push(row_ptr.last().unwrap() + d);
        }
        let nnz = row_ptr[n];
        let mut cols = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        let mut fill: Vec<usize> = row_ptr[..n].to_vec();
        for i in 0..n {
            cols[fill[i]] = i;
            vals[fill[i]] = inv_sqrt[i] * inv_sqrt[i];
            fill[i] += 1;
        }
        for (u, v) in edges {
            // computed once, mirrored
            let w = inv_sqrt[u] * inv_sqrt[v];
            cols[fill[u]] = v;
            vals[fill[u]] = w;
            fill[u] += 1;
            cols[fill[v]] = u;
            vals[fill[v]] = w;
            fill[v] += 1;
        }
        let mut scratch = Vec::new();
        for i in 0..n {
            let range = row_ptr[i]..row_ptr[i + 1];
            if cols[range.clone()].windows(2).all(|w| w[0] < w[1]) {
                continue;
            }
            scratch.clear();
            scratch.extend(range.clone().map(|p| (cols[p], vals[p])));
            scratch.sort_unstable_by_key(|&(j, _)| j);
            for (p, &(j, w)) in range.zip(&scratch) {
                cols[p] = j;
                vals[p] = w;
            }
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(row, col, value)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n)
            .flat_map(move |i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (i, self.cols[p], self.vals[p])))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(p) => self.vals[range.start + p],
            Err(_) => 0.0,
        }
    }

    /// Sparse-dense product `Â · m`.
    pub fn spmm(&self, m: &Array2<f64>) -> Array2<f64> {
        assert_eq!(m.nrows(), self.n, "spmm: row mismatch");
        let width = m.ncols();
        let mut out = Array2::<f64>::zeros((self.n, width));
        let src = m.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let dst = out.as_slice_mut().expect("fresh array");
        for i in 0..self.n {
            let row = &mut dst[i * width..(i + 1) * width];
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let w = self.vals[p];
                let j = self.cols[p];
                for (o, &x) in row.iter_mut().zip(&src[j * width..(j + 1) * width]) {
                    *o += w * x;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n, self.n));
        for (i, j, w) in self.entries() {
            d[[i, j]] = w;
        }
        d
    }
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    NormalizedAdjacency::from_graph(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CaneError::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, file: &str, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| CaneError::format(file, line, format!("missing {what}")))?;
    tok.trim()
        .parse()
        .map_err(|_| CaneError::format(file, line, format!("cannot parse {what} from {tok:?}")))
}

/// Loads a graph directory. Directed input is symmetrized.
pub fn load_graph(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: GraphMeta = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| CaneError::format("meta.json", e.line(), e.to_string()))?;
    if meta.d == 0 {
        return Err(CaneError::format("meta.json", 1, "d must be >= 1"));
    }

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (i, line) in read_text(&edges_path)?.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split('\t');
        let u: usize = parse_field(it.next(), "edges.tsv", lineno, "source node")?;
        let v: usize = parse_field(it.next(), "edges.tsv", lineno, "target node")?;
        if u >= meta.n || v >= meta.n {
            return Err(CaneError::format(
                "edges.tsv",
                lineno,
                format!("dangling edge endpoint ({u}, {v}) for n = {}", meta.n),
            ));
        }
        if u == v {
            return Err(CaneError::format("edges.tsv", lineno, format!("self-loop on node {u}")));
        }
        edges.push((u, v));
    }

    let features = load_features(dir, &meta)?;

    let labels_path = dir.join("labels.tsv");
    let truth = if labels_path.exists() {
        Some(load_labels(&labels_path, meta.n, meta.num_classes)?)
    } else {
        None
    };

    let graph = Graph::new(meta.n, edges, features, meta.num_classes)?;
    Ok(Dataset { graph, truth })
}

/// Reads `node<TAB>class` lines; nodes without a line have no label.
pub fn load_labels(path: impl AsRef<Path>, n: usize, num_classes: usize) -> Result<Truth> {
    let path = path.as_ref();
    let name = file_name(path);
    let mut labels = vec![None; n];
    for (i, line) in read_text(path)?.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split('\t');
        let v: usize = parse_field(it.next(), &name, lineno, "node")?;
        let c: usize = parse_field(it.next(), &name, lineno, "class")?;
        if v >= n {
            return Err(CaneError::format(&name, lineno, format!("node {v} out of range")));
        }
        if c >= num_classes {
            return Err(CaneError::format(
                &name,
                lineno,
                format!("label {c} out of range for {num_classes} classes"),
            ));
        }
        labels[v] = Some(c);
    }
    Truth::new(labels, num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub e: usize,
}

/// Reads an `n × e` little-endian `f32` matrix; `e` comes from the
/// `<stem>.meta.json` file next to it.
pub fn load_embeddings(path: impl AsRef<Path>, n: usize) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let meta_path = path.with_extension("meta.json");
    let meta: EmbeddingMeta = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| CaneError::format(file_name(&meta_path), e.line(), e.to_string()))?;
    if meta.e == 0 {
        return Err(CaneError::format(file_name(&meta_path), 1, "e must be >= 1"));
    }
    let bytes = fs::read(path).map_err(|e| CaneError::io(path, e))?;
    let values = read_f32_le(&bytes, n * meta.e, &file_name(path))?;
    if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
        return Err(CaneError::format(
            file_name(path),
            pos / meta.e + 1,
            "non-finite embedding value",
        ));
    }
    Ok(Array2::from_shape_vec((n, meta.e), values.into_iter().map(f64::from).collect()).expect("length checked"))
}

fn load_features(dir: &Path, meta: &GraphMeta) -> Result<Array2<f32>> {
    let bin = dir.join("features.f32");
    if bin.exists() {
        let bytes = fs::read(&bin).map_err(|e| CaneError::io(&bin, e))?;
        let values = read_f32_le(&bytes, meta.n * meta.d, &file_name(&bin))?;
        if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
            return Err(CaneError::format(
                "features.f32",
                pos / meta.d + 1,
                format!("non-finite feature in column {}", pos % meta.d),
            ));
        }
        return Ok(Array2::from_shape_vec((meta.n, meta.d), values).expect("length checked"));
    }
    let path = dir.join("features.tsv");
    let text = read_text(&path)?;
    let mut values = Vec::with_capacity(meta.n * meta.d);
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split('\t') {
            let x: f32 = tok
                .trim()
                .parse()
                .map_err(|_| CaneError::format("features.tsv", lineno, format!("cannot parse {tok:?}")))?;
            if !x.is_finite() {
                return Err(CaneError::format("features.tsv", lineno, "non-finite feature"));
            }
            values.push(x);
        }
        if values.len() - before != meta.d {
            return Err(CaneError::format(
                "features.tsv",
                lineno,
                format!("expected {} columns, found {}", meta.d, values.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != meta.n {
        return Err(CaneError::format(
            "features.tsv",
            rows,
            format!("expected {} rows, found {rows}", meta.n),
        ));
    }
    Ok(Array2::from_shape_vec((meta.n, meta.d), values).expect("length checked"))
}

/// Decodes exactly `count` little-endian `f32` values.
pub fn read_f32_le(bytes: &[u8], count: usize, file: &str) -> Result<Vec<f32>> {
    if bytes.len() != count * 4 {
        return Err(CaneError::format(
            file,
            0,
            format!("expected {} bytes, found {}", count * 4, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_f32_le(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CaneError::io(path, e))
}

/// Writes the text form (`features.tsv`). Floats use the shortest
/// round-trip representation so `load_graph` reproduces them exactly.
pub fn save_graph(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CaneError::io(dir, e))?;
    let g = &ds.graph;
    let meta = GraphMeta {
        n: g.num_nodes(),
        d: g.feature_dim(),
        num_classes: g.num_classes(),
    };
    write(
        &dir.join("meta.json"),
        serde_json::to_string(&meta).expect("meta serializes"),
    )?;
    let mut edges = String::new();
    for &(u, v) in g.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write(&dir.join("edges.tsv"), edges)?;
    let mut feats = String::new();
    for row in g.features().rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        feats.push_str(&line.join("\t"));
        feats.push('\n');
    }
    write(&dir.join("features.tsv"), feats)?;
    let bin = dir.join("features.f32");
    if bin.exists() {
        fs::remove_file(&bin).map_err(|e| CaneError::io(&bin, e))?;
    }
    if let Some(truth) = &ds.truth {
        let mut labels = String::new();
        for (v, c) in truth.labels().iter().enumerate() {
            if let Some(c) = c {
                labels.push_str(&format!("{v}\t{c}\n"));
            }
        }
        write(&dir.join("labels.tsv"), labels)?;
    }
    Ok(())
}
