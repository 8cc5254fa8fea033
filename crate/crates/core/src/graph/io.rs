//! Edge-list and feature file formats.
//!
//! Edge lists are UTF-8 TSV with `src<TAB>dst[<TAB>year]` columns; lines
//! starting with `#` are comments. Features are either CSV
//! (`node_key,f1,...,fd`) or a raw little-endian f32 row-major blob described
//! by a JSON sidecar `{num_rows, dim, key_file}`.
//!
//! A graph on disk is either a directory holding `edges.tsv` plus optional
//! `features.csv` / `features.json`, or a bare `NAME.tsv` file with optional
//! `NAME.features.csv` / `NAME.features.json` siblings.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{attach_feature_rows, BuildReport, Graph, GraphBuilder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEdge {
    pub src: String,
    pub dst: String,
    pub year: Option<i64>,
}

pub fn read_edge_tsv(path: &Path) -> Result<Vec<RawEdge>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let parse_err = |msg: &str| Error::Parse {
            path: path.to_owned(),
            line: lineno + 1,
            msg: msg.to_owned(),
        };
        let src = cols.next().filter(|s| !s.is_empty()).ok_or_else(|| parse_err("missing src"))?;
        let dst = cols.next().filter(|s| !s.is_empty()).ok_or_else(|| parse_err("missing dst"))?;
        let year = match cols.next() {
            Some(y) if !y.trim().is_empty() => {
                Some(y.trim().parse::<i64>().map_err(|_| parse_err("year is not an integer"))?)
            }
            _ => None,
        };
        out.push(RawEdge {
            src: src.to_owned(),
            dst: dst.to_owned(),
            year,
        });
    }
    Ok(out)
}

pub fn write_edge_tsv<'a>(
    path: &Path,
    edges: impl IntoIterator<Item = (&'a str, &'a str, Option<i64>)>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (a, b, year) in edges {
        let res = match year {
            Some(y) => writeln!(w, "{a}\t{b}\t{y}"),
            None => writeln!(w, "{a}\t{b}"),
        };
        res.map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_feature_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',');
        let key = cols.next().unwrap_or_default().to_owned();
        let vals = cols
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        rows.push((key, vals));
    }
    Ok(rows)
}

pub fn write_feature_csv(path: &Path, graph: &Graph) -> Result<()> {
    let Some(feats) = graph.features() else {
        return Ok(());
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, key) in graph.keys().iter().enumerate() {
        let row = feats.row(i);
        let vals: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{key},{}", vals.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// JSON sidecar describing a binary feature blob.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureHeader {
    pub num_rows: usize,
    pub dim: usize,
    /// Newline-separated node keys, one per row, relative to the sidecar.
    pub key_file: String,
    /// Blob path relative to the sidecar; defaults to the sidecar stem + `.bin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
}

pub fn read_feature_bin(sidecar: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let header: FeatureHeader = serde_json::from_str(&text)?;
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    let data_path = match &header.data_file {
        Some(f) => dir.join(f),
        None => sidecar.with_extension("bin"),
    };
    let key_path = dir.join(&header.key_file);
    let keys: Vec<String> = fs::read_to_string(&key_path)
        .map_err(|e| Error::io(&key_path, e))?
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    if keys.len() != header.num_rows {
        return Err(Error::data(format!(
            "{}: {} keys for {} rows",
            key_path.display(),
            keys.len(),
            header.num_rows
        )));
    }
    let blob = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = header.num_rows * header.dim * 4;
    if blob.len() != expected {
        return Err(Error::data(format!(
            "{}: {} bytes, expected {expected}",
            data_path.display(),
            blob.len()
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(keys
        .into_iter()
        .zip(values.chunks(header.dim.max(1)))
        .map(|(k, row)| (k, if header.dim == 0 { vec![] } else { row.to_vec() }))
        .collect())
}

pub fn write_feature_bin(sidecar: &Path, graph: &Graph) -> Result<()> {
    let Some(feats) = graph.features() else {
        return Ok(());
    };
    let stem = sidecar
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("features")
        .to_owned();
    let key_file = format!("{stem}.keys");
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    let header = FeatureHeader {
        num_rows: feats.nrows(),
        dim: feats.ncols(),
        key_file: key_file.clone(),
        data_file: None,
    };
    fs::write(sidecar, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(sidecar, e))?;
    let keys: String = graph.keys().iter().map(|k| format!("{k}\n")).collect();
    let key_path = dir.join(key_file);
    fs::write(&key_path, keys).map_err(|e| Error::io(&key_path, e))?;
    let blob: Vec<u8> = feats
        .iter()
        .flat_map(|&x| (x as f32).to_le_bytes())
        .collect();
    let data_path = sidecar.with_extension("bin");
    fs::write(&data_path, blob).map_err(|e| Error::io(&data_path, e))
}

/// Locations of a graph's edge file and optional feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPaths {
    pub edges: PathBuf,
    pub features: Option<PathBuf>,
}

impl GraphPaths {
    /// Resolves a directory or `NAME.tsv` path; feature files are picked up when present.
    pub fn resolve(path: &Path) -> GraphPaths {
        let (edges, csv, json) = if path.is_dir() {
            (
                path.join("edges.tsv"),
                path.join("features.csv"),
                path.join("features.json"),
            )
        } else {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("graph");
            let dir = path.parent().unwrap_or(Path::new("."));
            (
                path.to_owned(),
                dir.join(format!("{stem}.features.csv")),
                dir.join(format!("{stem}.features.json")),
            )
        };
        let features = [csv, json].into_iter().find(|p| p.exists());
        GraphPaths { edges, features }
    }

    /// Every file that contributes to the graph, for provenance digests.
    pub fn files(&self) -> Vec<PathBuf> {
        let mut v = vec![self.edges.clone()];
        v.extend(self.features.clone());
        v
    }
}

pub fn read_features(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_feature_bin(path),
        _ => read_feature_csv(path),
    }
}

/// Loads a graph; edge years are ignored here.
pub fn load_graph(path: &Path) -> Result<(Graph, BuildReport)> {
    let paths = GraphPaths::resolve(path);
    let raw = read_edge_tsv(&paths.edges)?;
    if raw.is_empty() {
        return Err(Error::data(format!("{}: no edges", paths.edges.display())));
    }
    let mut builder = GraphBuilder::new();
    for e in &raw {
        builder.add_edge(&e.src, &e.dst);
    }
    let (mut graph, report) = builder.finish();
    if let Some(fp) = &paths.features {
        graph = attach_feature_rows(graph, &read_features(fp)?)?;
    }
    Ok((graph, report))
}

/// Writes `NAME.tsv` plus `NAME.features.csv` when features exist.
pub fn save_graph(path: &Path, graph: &Graph) -> Result<()> {
    write_edge_tsv(path, graph.edge_keys().map(|(a, b)| (a, b, None)))?;
    if graph.features().is_some() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("graph");
        let dir = path.parent().unwrap_or(Path::new("."));
        write_feature_csv(&dir.join(format!("{stem}.features.csv")), graph)?;
    }
    Ok(())
}
