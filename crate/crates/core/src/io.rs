//! Graph and parameter persistence.
//!
//! Text side: an edge list (`u v` per line), a feature matrix with an
//! `n feat_dim` header, a label file with one integer per line (-1 for
//! unlabeled), and optionally a mask file with one of train/val/test/none per
//! line. `#` starts a comment anywhere; blank lines are skipped. Parse errors
//! report the 1-based line number.
//!
//! Binary side: a little-endian "SAGG" container, version 1, with a kind tag
//! (1 = graph snapshot, 2 = named tensors). The graph payload stores the CSR
//! pattern (values are implied unit), features as f64, labels as i64, and
//! one mask code byte per node. Scalars narrower than f64 round-trip through
//! f64, so the f64 pipeline round-trips losslessly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::graph::{Graph, Label, MaskKind, NodeId};
use crate::scalar::Scalar;
use crate::seeding::rng_from;
use crate::sparse::Csr;
use rand::Rng;

const MAGIC: &[u8; 4] = b"SAGG";
const VERSION: u32 = 1;
const KIND_GRAPH: u32 = 1;
const KIND_TENSORS: u32 = 2;

/// How to derive train/val/test masks when loading text data.
#[derive(Debug, Clone)]
pub enum SplitSpec {
    /// Random split of the labeled nodes; the remainder of the labeled pool
    /// becomes test, unlabeled nodes stay unmasked.
    Ratios { train: f64, val: f64, seed: u64 },
    /// Explicit per-node assignment file.
    MaskFile(std::path::PathBuf),
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let body = line.split('#').next().unwrap_or("").trim().to_string();
        if !body.is_empty() {
            out.push((idx + 1, body));
        }
    }
    Ok(out)
}

fn parse_edge_list(path: &Path) -> Result<Vec<(NodeId, NodeId)>> {
    let mut edges = Vec::new();
    for (ln, body) in content_lines(path)? {
        let mut it = body.split_whitespace();
        let (u, v) = match (it.next(), it.next(), it.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => {
                return Err(Error::data(format!(
                    "{}:{ln}: expected exactly two node ids",
                    path.display()
                )))
            }
        };
        let parse = |tok: &str| -> Result<NodeId> {
            tok.parse().map_err(|_| {
                Error::data(format!("{}:{ln}: invalid node id {tok:?}", path.display()))
            })
        };
        edges.push((parse(u)?, parse(v)?));
    }
    Ok(edges)
}

fn parse_features<S: Scalar>(path: &Path) -> Result<Mat<S>> {
    let lines = content_lines(path)?;
    let mut it = lines.into_iter();
    let (hln, header) = it
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty feature file", path.display())))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(Error::data(format!(
            "{}:{hln}: header must be `n feat_dim`",
            path.display()
        )));
    }
    let n: usize = dims[0]
        .parse()
        .map_err(|_| Error::data(format!("{}:{hln}: invalid node count", path.display())))?;
    let feat_dim: usize = dims[1]
        .parse()
        .map_err(|_| Error::data(format!("{}:{hln}: invalid feature dim", path.display())))?;
    let mut mat = Mat::zeros(n, feat_dim);
    let mut row = 0;
    for (ln, body) in it {
        if row >= n {
            return Err(Error::data(format!(
                "{}:{ln}: more than {n} feature rows",
                path.display()
            )));
        }
        let vals: Vec<&str> = body.split_whitespace().collect();
        if vals.len() != feat_dim {
            return Err(Error::data(format!(
                "{}:{ln}: expected {feat_dim} values, found {}",
                path.display(),
                vals.len()
            )));
        }
        for (j, tok) in vals.iter().enumerate() {
            let x: f64 = tok.parse().map_err(|_| {
                Error::data(format!("{}:{ln}: invalid number {tok:?}", path.display()))
            })?;
            mat.set(row, j, S::of(x));
        }
        row += 1;
    }
    if row != n {
        return Err(Error::data(format!(
            "{}: feature row count {row} != declared {n}",
            path.display()
        )));
    }
    Ok(mat)
}

fn parse_labels(path: &Path, n: usize) -> Result<Vec<Label>> {
    let mut labels = Vec::with_capacity(n);
    for (ln, body) in content_lines(path)? {
        let l: Label = body.parse().map_err(|_| {
            Error::data(format!("{}:{ln}: invalid label {body:?}", path.display()))
        })?;
        labels.push(l);
    }
    if labels.len() != n {
        return Err(Error::data(format!(
            "{}: label count {} != node count {n}",
            path.display(),
            labels.len()
        )));
    }
    Ok(labels)
}

fn parse_mask_file(path: &Path, n: usize) -> Result<Vec<MaskKind>> {
    let mut masks = Vec::with_capacity(n);
    for (ln, body) in content_lines(path)? {
        let kind = match body.as_str() {
            "train" => MaskKind::Train,
            "val" => MaskKind::Val,
            "test" => MaskKind::Test,
            "none" => MaskKind::None,
            other => {
                return Err(Error::data(format!(
                    "{}:{ln}: unknown mask kind {other:?}",
                    path.display()
                )))
            }
        };
        masks.push(kind);
    }
    if masks.len() != n {
        return Err(Error::data(format!(
            "{}: mask count {} != node count {n}",
            path.display(),
            masks.len()
        )));
    }
    Ok(masks)
}

fn ratio_masks(labels: &[Label], train: f64, val: f64, seed: u64) -> Result<Vec<MaskKind>> {
    if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || train + val > 1.0 {
        return Err(Error::config(format!(
            "split ratios train = {train}, val = {val} must be in [0, 1] and sum <= 1"
        )));
    }
    let mut labeled: Vec<usize> = (0..labels.len()).filter(|&v| labels[v] >= 0).collect();
    let mut rng = rng_from(seed);
    for i in (1..labeled.len()).rev() {
        let j = rng.random_range(0..=i);
        labeled.swap(i, j);
    }
    let n_train = (labeled.len() as f64 * train).floor() as usize;
    let n_val = (labeled.len() as f64 * val).floor() as usize;
    let mut masks = vec![MaskKind::None; labels.len()];
    for (rank, &v) in labeled.iter().enumerate() {
        masks[v] = if rank < n_train {
            MaskKind::Train
        } else if rank < n_train + n_val {
            MaskKind::Val
        } else {
            MaskKind::Test
        };
    }
    Ok(masks)
}

/// Load a graph from text files. Node count and feature width come from the
/// feature header; the number of classes is 1 + max label.
pub fn load_graph<S: Scalar>(
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
    split: &SplitSpec,
) -> Result<Graph<S>> {
    let features = parse_features::<S>(feature_path)?;
    let n = features.rows();
    let edges = parse_edge_list(edge_path)?;
    let labels = parse_labels(label_path, n)?;
    let num_classes = labels.iter().copied().max().map_or(0, |m| (m + 1).max(1)) as usize;
    let masks = match split {
        SplitSpec::Ratios { train, val, seed } => ratio_masks(&labels, *train, *val, *seed)?,
        SplitSpec::MaskFile(path) => parse_mask_file(path, n)?,
    };
    Graph::new(n, &edges, features, labels, masks, num_classes)
}

// --- binary container ---------------------------------------------------

struct BinWriter<W: Write> {
    w: W,
    path: String,
}

impl<W: Write> BinWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.w
            .write_all(bytes)
            .map_err(|e| Error::io(self.path.clone(), e))
    }

    fn put_u32(&mut self, x: u32) -> Result<()> {
        self.put(&x.to_le_bytes())
    }

    fn put_u64(&mut self, x: u64) -> Result<()> {
        self.put(&x.to_le_bytes())
    }

    fn put_i64(&mut self, x: i64) -> Result<()> {
        self.put(&x.to_le_bytes())
    }

    fn put_f64(&mut self, x: f64) -> Result<()> {
        self.put(&x.to_le_bytes())
    }
}

struct BinReader<R: Read> {
    r: R,
    path: String,
}

impl<R: Read> BinReader<R> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.r
            .read_exact(&mut buf)
            .map_err(|e| Error::io(self.path.clone(), e))?;
        Ok(buf)
    }

    fn get_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn get_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn get_i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take()?))
    }

    fn get_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

fn mask_code(m: MaskKind) -> u8 {
    match m {
        MaskKind::None => 0,
        MaskKind::Train => 1,
        MaskKind::Val => 2,
        MaskKind::Test => 3,
    }
}

fn mask_from_code(c: u8, path: &str) -> Result<MaskKind> {
    Ok(match c {
        0 => MaskKind::None,
        1 => MaskKind::Train,
        2 => MaskKind::Val,
        3 => MaskKind::Test,
        other => return Err(Error::data(format!("{path}: bad mask code {other}"))),
    })
}

fn begin_write(path: &Path, kind: u32) -> Result<BinWriter<BufWriter<File>>> {
    let file =
        File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BinWriter {
        w: BufWriter::new(file),
        path: path.display().to_string(),
    };
    w.put(MAGIC)?;
    w.put_u32(VERSION)?;
    w.put_u32(kind)?;
    Ok(w)
}

fn begin_read(path: &Path, kind: u32) -> Result<BinReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BinReader {
        r: BufReader::new(file),
        path: path.display().to_string(),
    };
    let magic: [u8; 4] = r.take()?;
    if &magic != MAGIC {
        return Err(Error::data(format!("{}: not a SAGG file", path.display())));
    }
    let version = r.get_u32()?;
    if version != VERSION {
        return Err(Error::data(format!(
            "{}: unsupported SAGG version {version}",
            path.display()
        )));
    }
    let got = r.get_u32()?;
    if got != kind {
        return Err(Error::data(format!(
            "{}: SAGG kind {got}, expected {kind}",
            path.display()
        )));
    }
    Ok(r)
}

/// File names used by `save_graph_text` inside its target directory.
pub const TEXT_GRAPH_FILES: [&str; 4] = ["edges.txt", "features.txt", "labels.txt", "masks.txt"];

/// Write a graph as the four text files `load_graph` reads. Each undirected
/// edge appears once as `u v` with u < v; floats use shortest round-trip
/// formatting, so save-then-load reproduces an f64 graph exactly.
pub fn save_graph_text<S: Scalar>(g: &Graph<S>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))
    };
    let mut edges = String::new();
    for u in 0..g.n() {
        for &v in g.neighbors(u) {
            if u < v {
                edges.push_str(&format!("{u} {v}\n"));
            }
        }
    }
    write("edges.txt", edges)?;
    let feats = g.features();
    let mut rows = format!("{} {}\n", feats.rows(), feats.cols());
    for i in 0..feats.rows() {
        let row: Vec<String> = (0..feats.cols())
            .map(|j| format!("{}", feats.at(i, j).to64()))
            .collect();
        rows.push_str(&row.join(" "));
        rows.push('\n');
    }
    write("features.txt", rows)?;
    let labels: String = g.labels().iter().map(|l| format!("{l}\n")).collect();
    write("labels.txt", labels)?;
    let masks: String = g
        .masks()
        .iter()
        .map(|m| match m {
            MaskKind::Train => "train\n",
            MaskKind::Val => "val\n",
            MaskKind::Test => "test\n",
            MaskKind::None => "none\n",
        })
        .collect();
    write("masks.txt", masks)
}

pub fn save_graph_binary<S: Scalar>(g: &Graph<S>, path: &Path) -> Result<()> {
    let mut w = begin_write(path, KIND_GRAPH)?;
    let n = g.n();
    w.put_u64(n as u64)?;
    w.put_u64(g.feat_dim() as u64)?;
    w.put_u64(g.num_classes() as u64)?;
    w.put_u64(g.adj().nnz() as u64)?;
    for &off in g.adj().row_offsets() {
        w.put_u64(off as u64)?;
    }
    for &col in g.adj().col_indices() {
        w.put_u64(col as u64)?;
    }
    for &x in g.features().data() {
        w.put_f64(x.to64())?;
    }
    for &l in g.labels() {
        w.put_i64(l)?;
    }
    for &m in g.masks() {
        w.put(&[mask_code(m)])?;
    }
    w.w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_graph_binary<S: Scalar>(path: &Path) -> Result<Graph<S>> {
    let mut r = begin_read(path, KIND_GRAPH)?;
    let pd = path.display().to_string();
    let n = r.get_u64()? as usize;
    let feat_dim = r.get_u64()? as usize;
    let num_classes = r.get_u64()? as usize;
    let nnz = r.get_u64()? as usize;
    let mut row_offsets = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        row_offsets.push(r.get_u64()? as usize);
    }
    let mut col_indices = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        col_indices.push(r.get_u64()? as usize);
    }
    let mut features = Mat::zeros(n, feat_dim);
    for i in 0..n * feat_dim {
        features.data_mut()[i] = S::of(r.get_f64()?);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.get_i64()?);
    }
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        let code: [u8; 1] = r.take()?;
        masks.push(mask_from_code(code[0], &pd)?);
    }
    let adj = Csr::from_parts(n, n, row_offsets, col_indices, vec![S::one(); nnz]);
    Graph::from_parts(adj, features, labels, masks, num_classes)
}

/// Save named parameter tensors (checkpoints). Order is preserved.
pub fn save_named_tensors<S: Scalar>(tensors: &[(String, Mat<S>)], path: &Path) -> Result<()> {
    let mut w = begin_write(path, KIND_TENSORS)?;
    w.put_u64(tensors.len() as u64)?;
    for (name, mat) in tensors {
        w.put_u64(name.len() as u64)?;
        w.put(name.as_bytes())?;
        w.put_u64(mat.rows() as u64)?;
        w.put_u64(mat.cols() as u64)?;
        for &x in mat.data() {
            w.put_f64(x.to64())?;
        }
    }
    w.w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_named_tensors<S: Scalar>(path: &Path) -> Result<Vec<(String, Mat<S>)>> {
    let mut r = begin_read(path, KIND_TENSORS)?;
    let pd = path.display().to_string();
    let count = r.get_u64()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.get_u64()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.r.read_exact(&mut name_bytes)
            .map_err(|e| Error::io(pd.clone(), e))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::data(format!("{pd}: tensor name is not UTF-8")))?;
        let rows = r.get_u64()? as usize;
        let cols = r.get_u64()? as usize;
        let mut mat = Mat::zeros(rows, cols);
        for i in 0..rows * cols {
            mat.data_mut()[i] = S::of(r.get_f64()?);
        }
        out.push((name, mat));
    }
    Ok(out)
}
