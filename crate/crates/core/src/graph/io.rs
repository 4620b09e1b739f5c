//! The four-file CSV graph bundle.
//!
//! * `features.csv`: one row per node, comma-separated decimals
//! * `edges.csv`: `src,dst` rows, 0-based, undirected
//! * `labels.csv`: one integer per row
//! * `splits.csv`: one of `train`, `val`, `test`, `none` per row
//!
//! No header rows. Decimals are written in shortest round-trip form so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{GraphDataset, GraphError, Result, Split};
use crate::autodiff::Matrix;

pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Parses a dense numeric CSV; every row must have the same width.
pub(crate) fn read_matrix(path: &Path) -> Result<Matrix> {
    let lines = read_lines(path)?;
    let mut width = None;
    let mut data = Vec::new();
    for (line, text) in &lines {
        let row: Vec<f64> = text
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, *line, format!("bad decimal {tok:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    path,
                    *line,
                    format!("ragged row: expected {w} columns, found {}", row.len()),
                ))
            }
            _ => {}
        }
        data.extend(row);
    }
    let width = width.unwrap_or(0);
    Ok(Array2::from_shape_vec((lines.len(), width), data).expect("row widths checked"))
}

pub(crate) fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_lines(path)?
        .iter()
        .map(|(line, text)| {
            text.trim()
                .parse::<usize>()
                .map_err(|e| parse_err(path, *line, format!("bad label {text:?}: {e}")))
        })
        .collect()
}

pub(crate) fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

pub(crate) fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::new();
    for y in labels {
        writeln!(out, "{y}").unwrap();
    }
    write_file(path, &out)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn bundle_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(GraphError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing bundle file"),
        })
    }
}

/// Reads and validates a graph bundle directory.
pub fn load_graph(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    let features_path = bundle_file(dir, "features.csv")?;
    let edges_path = bundle_file(dir, "edges.csv")?;
    let labels_path = bundle_file(dir, "labels.csv")?;
    let splits_path = bundle_file(dir, "splits.csv")?;

    let features = read_matrix(&features_path)?;
    let n = features.nrows();

    let labels = read_labels(&labels_path)?;
    if labels.len() != n {
        return Err(parse_err(
            &labels_path,
            labels.len(),
            format!("{} labels for {n} feature rows", labels.len()),
        ));
    }

    let mut splits = Vec::with_capacity(n);
    for (line, text) in read_lines(&splits_path)? {
        let split = Split::parse(text.trim())
            .ok_or_else(|| parse_err(&splits_path, line, format!("unknown split {text:?}")))?;
        splits.push(split);
    }
    if splits.len() != n {
        return Err(parse_err(
            &splits_path,
            splits.len(),
            format!("{} split tags for {n} feature rows", splits.len()),
        ));
    }

    let mut edges = Vec::new();
    for (line, text) in read_lines(&edges_path)? {
        let parts: Vec<&str> = text.split(',').collect();
        if parts.len() != 2 {
            return Err(parse_err(&edges_path, line, "expected \"src,dst\""));
        }
        let endpoint = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| parse_err(&edges_path, line, format!("bad node id {s:?}: {e}")))
        };
        let (u, v) = (endpoint(parts[0])?, endpoint(parts[1])?);
        if u >= n || v >= n {
            return Err(parse_err(
                &edges_path,
                line,
                format!("node id out of range for {n} nodes"),
            ));
        }
        edges.push((u, v));
    }

    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    GraphDataset::from_edges(features, &edges, labels, splits, num_classes)
}

/// Writes `g` as a bundle, creating `dir` if needed.
pub fn save_graph(g: &GraphDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| GraphError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_matrix(&dir.join("features.csv"), g.features())?;
    let mut edges = String::new();
    for (u, v) in g.edges() {
        writeln!(edges, "{u},{v}").unwrap();
    }
    write_file(&dir.join("edges.csv"), &edges)?;
    write_labels(&dir.join("labels.csv"), g.labels())?;
    let mut splits = String::new();
    for s in g.splits() {
        splits.push_str(s.token());
        splits.push('\n');
    }
    write_file(&dir.join("splits.csv"), &splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_bundle(dir: &Path, features: &str, edges: &str, labels: &str, splits: &str) {
        fs::write(dir.join("features.csv"), features).unwrap();
        fs::write(dir.join("edges.csv"), edges).unwrap();
        fs::write(dir.join("labels.csv"), labels).unwrap();
        fs::write(dir.join("splits.csv"), splits).unwrap();
    }

    #[test]
    fn two_node_bundle() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), "0.5,1\n-2,3e-3\n", "0,1\n", "0\n1\n", "train\ntest\n");
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_classes(), 2);
        assert_eq!(g.edges(), vec![(0, 1)]);
        assert_eq!(g.adjacency().get(1, 0), 1.0);
        assert_eq!(g.features()[[1, 1]], 3e-3);
    }

    #[test]
    fn mirrored_edge_rows_dedup() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), "0\n0\n", "0,1\n1,0\n", "0\n0\n", "train\nval\n");
        assert_eq!(load_graph(dir.path()).unwrap().adjacency().nnz(), 2);
    }

    #[test]
    fn errors_name_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), "0,1\n2\n", "", "0\n0\n", "train\ntrain\n");
        let err = load_graph(dir.path()).unwrap_err().to_string();
        assert!(err.contains("features.csv:2") && err.contains("ragged"), "{err}");

        write_bundle(dir.path(), "0\n1\n", "0,1\n", "0\n0\n", "train\nsometimes\n");
        let err = load_graph(dir.path()).unwrap_err().to_string();
        assert!(err.contains("splits.csv:2"), "{err}");

        write_bundle(dir.path(), "0\n1\n", "0,7\n", "0\n0\n", "train\nval\n");
        let err = load_graph(dir.path()).unwrap_err().to_string();
        assert!(err.contains("edges.csv:1"), "{err}");

        fs::remove_file(dir.path().join("labels.csv")).unwrap();
        let err = load_graph(dir.path()).unwrap_err().to_string();
        assert!(err.contains("labels.csv"), "{err}");
    }
}
