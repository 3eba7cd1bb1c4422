//! LIBSVM text format: `label index:value ...` with 1-based indices.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::AgentDataset;
use crate::error::{Error, Result};

/// Reads a LIBSVM file into one dense pool. Labels `> 0` map to `+1`, the rest to `-1`.
/// With `dim = None` the dimension is the largest index seen.
pub fn load_libsvm(path: &Path, dim: Option<usize>) -> Result<AgentDataset> {
    let file = File::open(path)?;
    parse_libsvm(BufReader::new(file), path, dim)
}

pub fn parse_libsvm<B: BufRead>(reader: B, path: &Path, dim: Option<usize>) -> Result<AgentDataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut sparse: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label `{label_tok}`")))?;
        let mut row = Vec::new();
        for tok in tokens {
            if tok.starts_with("qid:") {
                continue;
            }
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("expected index:value, got `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| parse_err(lineno, format!("bad feature index `{idx}`")))?;
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(lineno, format!("bad feature value `{val}`")))?;
            if let Some(m) = dim {
                if idx > m {
                    return Err(Error::DimensionMismatch { expected: m, found: idx });
                }
            }
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        sparse.push(row);
        labels.push(if label > 0.0 { 1.0 } else { -1.0 });
    }
    if labels.is_empty() {
        return Err(parse_err(0, "file holds no samples".into()));
    }
    let m = dim.unwrap_or(max_index).max(1);
    let mut features = vec![0.0; labels.len() * m];
    for (r, row) in sparse.iter().enumerate() {
        for &(j, v) in row {
            features[r * m + j] = v;
        }
    }
    Ok(AgentDataset::from_flat(0, m, features, labels))
}
