//! File formats.
//!
//! Tables are RFC 4180 CSV with a header row. Floats are written in Rust's
//! shortest round-trip form, so reading a file back yields the same bits.

use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;
use vids_core::model::{Dataset, Task};
use vids_core::nn::{Activation, DenseNet, Layer};

use crate::error::{CliError, CliResult};

/// A dataset read from CSV plus the names of its covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub data: Dataset,
    pub covariates: Vec<String>,
    /// Columns skipped because their first data cell is not a number.
    pub dropped: Vec<String>,
}

/// Reads `path`, taking `target` as the outcome and every other numeric
/// column as a covariate.
///
/// A column is numeric when its first data cell parses as a float; any later
/// cell of a numeric column that fails to parse is an error.
pub fn load_csv(path: &Path, target: &str, task: Task) -> CliResult<Table> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let target_col = header.iter().position(|h| h == target).ok_or_else(|| {
        CliError::input(format!(
            "{}: target column `{target}` not found",
            path.display()
        ))
    })?;
    let records = reader.records().collect::<Result<Vec<_>, _>>()?;
    let first = records
        .first()
        .ok_or_else(|| CliError::input(format!("{}: no data rows", path.display())))?;
    let numeric: Vec<bool> = first
        .iter()
        .map(|c| c.trim().parse::<f64>().is_ok())
        .collect();
    if !numeric[target_col] {
        return Err(CliError::input(format!(
            "{}: target column `{target}` is not numeric",
            path.display()
        )));
    }
    let covariate_cols: Vec<usize> = (0..header.len())
        .filter(|&j| j != target_col && numeric[j])
        .collect();
    let dropped: Vec<String> = (0..header.len())
        .filter(|&j| !numeric[j])
        .map(|j| header[j].clone())
        .collect();
    for name in &dropped {
        log::warn!("{}: dropping non-numeric column `{name}`", path.display());
    }
    let mut x = Vec::with_capacity(records.len() * covariate_cols.len());
    let mut y = Vec::with_capacity(records.len());
    for (row, rec) in records.iter().enumerate() {
        let cell = |j: usize| -> CliResult<f64> {
            rec.get(j).unwrap_or("").trim().parse::<f64>().map_err(|_| {
                CliError::new(
                    "parse",
                    format!(
                        "{}: row {row} (line {}), column `{}`: cannot parse `{}` as a number",
                        path.display(),
                        row + 2,
                        header[j],
                        rec.get(j).unwrap_or("")
                    ),
                )
            })
        };
        for &j in &covariate_cols {
            x.push(cell(j)?);
        }
        y.push(cell(target_col)?);
    }
    let data = Dataset::new(x, covariate_cols.len(), y, task)?;
    Ok(Table {
        data,
        covariates: covariate_cols.iter().map(|&j| header[j].clone()).collect(),
        dropped,
    })
}

pub fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_dataset(
    path: &Path,
    data: &Dataset,
    covariates: &[String],
    target: &str,
) -> CliResult<()> {
    let mut header = covariates.to_vec();
    header.push(target.to_owned());
    let rows = data.rows().zip(data.y()).map(|(r, y)| {
        let mut v: Vec<String> = r.iter().map(f64::to_string).collect();
        v.push(y.to_string());
        v
    });
    write_csv(path, &header, rows)
}

/// Reads named float columns from a CSV file.
pub fn read_columns(path: &Path, names: &[&str]) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let idx = names
        .iter()
        .map(|n| {
            header.iter().position(|h| h == n).ok_or_else(|| {
                CliError::input(format!("{}: column `{n}` not found", path.display()))
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        for (c, &j) in idx.iter().enumerate() {
            let v = rec.get(j).unwrap_or("").parse::<f64>().map_err(|_| {
                CliError::new(
                    "parse",
                    format!("{}: row {row}, column `{}`", path.display(), names[c]),
                )
            })?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}

/// Serializes a network as a line-oriented text table:
///
/// ```text
/// densenet 1
/// layers <count>
/// layer <inputs> <outputs> <activation>
/// weights <outputs × inputs values, row-major>
/// bias <outputs values>
/// ```
///
/// repeated per layer. Values use `{:e}`, which round-trips exactly.
pub fn checkpoint_to_string(net: &DenseNet) -> String {
    let mut s = format!("densenet 1\nlayers {}\n", net.layers().len());
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    for l in net.layers() {
        s.push_str(&format!(
            "layer {} {} {}\n",
            l.inputs(),
            l.outputs(),
            l.activation().tag()
        ));
        s.push_str(&format!("weights {}\n", join(l.weights())));
        s.push_str(&format!("bias {}\n", join(l.bias())));
    }
    s
}

pub fn checkpoint_from_str(text: &str) -> CliResult<DenseNet> {
    let bad = |what: &str| CliError::input(format!("malformed checkpoint: {what}"));
    let mut lines = text.lines();
    let mut field = |key: &str| -> CliResult<Vec<String>> {
        let line = lines
            .next()
            .ok_or_else(|| bad(&format!("expected `{key}`, found end of file")))?;
        let mut parts = line.split_ascii_whitespace();
        if parts.next() != Some(key) {
            return Err(bad(&format!("expected `{key}` line, found `{line}`")));
        }
        Ok(parts.map(str::to_owned).collect())
    };
    if field("densenet")? != ["1"] {
        return Err(bad("unsupported version"));
    }
    let count: usize = field("layers")?
        .first()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("layer count"))?;
    let floats = |v: Vec<String>| -> CliResult<Vec<f64>> {
        v.iter()
            .map(|s| s.parse::<f64>().map_err(|_| bad(&format!("value `{s}`"))))
            .collect()
    };
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let head = field("layer")?;
        if head.len() != 3 {
            return Err(bad("layer header"));
        }
        let inputs = head[0].parse().map_err(|_| bad("layer inputs"))?;
        let outputs = head[1].parse().map_err(|_| bad("layer outputs"))?;
        let act = Activation::from_tag(&head[2])
            .ok_or_else(|| bad(&format!("activation `{}`", head[2])))?;
        let weights = floats(field("weights")?)?;
        let bias = floats(field("bias")?)?;
        layers.push(Layer::new(inputs, outputs, weights, bias, act)?);
    }
    Ok(DenseNet::new(layers)?)
}

pub fn write_checkpoint(path: &Path, net: &DenseNet) -> CliResult<()> {
    fs::write(path, checkpoint_to_string(net)).map_err(|e| CliError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> CliResult<DenseNet> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    checkpoint_from_str(&text)
        .map_err(|e| CliError::input(format!("{}: {}", path.display(), e.message)))
}

/// SHA-256 over `blob <len>\0<bytes>`, the framing git uses for object ids.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> CliResult<String> {
    fs::read(path)
        .map(|b| content_hash(&b))
        .map_err(|e| CliError::io(path, e))
}
