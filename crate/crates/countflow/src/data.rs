//! File formats: count-matrix CSV, loss traces, trajectories and
//! heatmaps. Every file starts with a `# ... format_version=N` comment
//! line; readers skip `#` comments.
//!
//! Count matrices are UTF-8 CSV with header `x_1,...,x_d` plus an
//! optional trailing `label` column, nonnegative integer cells, no index
//! column.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::BridgeHeatmap;
use crate::types::{CountVector, Trajectory};

pub const FORMAT_VERSION: u32 = 1;

fn csv_line_error(e: &csv::Error, fallback: u64) -> Error {
    let line = match e.position() {
        Some(pos) => pos.line(),
        None => fallback,
    };
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Write a count matrix with header `x_1,...,x_d` (plus `label` when
/// labels are given). `dim` controls the header for empty matrices.
pub fn write_count_matrix(
    path: impl AsRef<Path>,
    dim: usize,
    samples: &[CountVector],
    labels: Option<&[usize]>,
) -> Result<()> {
    if samples.iter().any(|s| s.dim() != dim) {
        return Err(Error::dim("all rows must have the declared dimension".to_string()));
    }
    if let Some(l) = labels {
        if l.len() != samples.len() {
            return Err(Error::dim("labels must align with rows".to_string()));
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# countflow count-matrix format_version={FORMAT_VERSION}")?;
    let mut header: Vec<String> = (1..=dim).map(|i| format!("x_{i}")).collect();
    if labels.is_some() {
        header.push("label".to_string());
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, s) in samples.iter().enumerate() {
        let mut cells: Vec<String> = s.iter().map(|v| v.to_string()).collect();
        if let Some(l) = labels {
            cells.push(l[i].to_string());
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Read a count matrix; returns the rows and, when a `label` column is
/// present, the labels. Errors carry the 1-based file line number.
pub fn read_count_matrix(path: impl AsRef<Path>) -> Result<(Vec<CountVector>, Option<Vec<usize>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| csv_line_error(&e, 1))?;
    let headers = reader.headers().map_err(|e| csv_line_error(&e, 2))?.clone();
    let mut dim = headers.len();
    let has_labels = headers.iter().last() == Some("label");
    if has_labels {
        dim -= 1;
    }
    for (i, name) in headers.iter().take(dim).enumerate() {
        let expected = format!("x_{}", i + 1);
        if name != expected {
            return Err(Error::Parse {
                line: 2,
                message: format!("expected header column '{expected}', found '{name}'"),
            });
        }
    }
    if dim == 0 {
        return Err(Error::Parse {
            line: 2,
            message: "count matrix has no x_ columns".to_string(),
        });
    }

    let mut samples = Vec::new();
    let mut labels = has_labels.then(Vec::new);
    for record in reader.records() {
        let record = record.map_err(|e| csv_line_error(&e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} cells, found {}", headers.len(), record.len()),
            });
        }
        let mut values = Vec::with_capacity(dim);
        for cell in record.iter().take(dim) {
            let v: u64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("'{cell}' is not a nonnegative integer"),
            })?;
            values.push(v);
        }
        if let Some(labels) = labels.as_mut() {
            let cell = record.get(dim).unwrap_or("");
            let l: usize = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("'{cell}' is not a valid label"),
            })?;
            labels.push(l);
        }
        samples.push(CountVector::new(values));
    }
    Ok((samples, labels))
}

/// Loss trace CSV: columns `step,loss`.
pub fn write_loss_trace(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# countflow loss-trace format_version={FORMAT_VERSION}")?;
    writeln!(out, "step,loss")?;
    for (step, loss) in losses.iter().enumerate() {
        writeln!(out, "{step},{loss}")?;
    }
    out.flush()?;
    Ok(())
}

/// Per-step mean endpoint-pair cost under the realized coupling.
pub fn write_coupling_costs(path: impl AsRef<Path>, costs: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# countflow coupling-cost format_version={FORMAT_VERSION}")?;
    writeln!(out, "step,mean_cost")?;
    for (step, cost) in costs.iter().enumerate() {
        writeln!(out, "{step},{cost}")?;
    }
    out.flush()?;
    Ok(())
}

/// Trajectories CSV: columns `sample_id,step,t,x_1,...,x_d`, where `step`
/// indexes the recorded states of each trajectory.
pub fn write_trajectories(path: impl AsRef<Path>, trajectories: &[Trajectory]) -> Result<()> {
    let dim = trajectories
        .iter()
        .flat_map(|t| t.states.first())
        .map(|s| s.dim())
        .next()
        .unwrap_or(0);
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# countflow trajectories format_version={FORMAT_VERSION}")?;
    let coords: Vec<String> = (1..=dim).map(|i| format!("x_{i}")).collect();
    writeln!(out, "sample_id,step,t,{}", coords.join(","))?;
    for (id, traj) in trajectories.iter().enumerate() {
        for (step, (t, state)) in traj.times.iter().zip(traj.states.iter()).enumerate() {
            let cells: Vec<String> = state.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{id},{step},{t},{}", cells.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Heatmap CSV: first column the count value, one column per progress
/// value, cells the estimated probabilities.
pub fn write_heatmap(path: impl AsRef<Path>, heatmap: &BridgeHeatmap) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# countflow bridge-heatmap format_version={FORMAT_VERSION}")?;
    let header: Vec<String> = heatmap.progress.iter().map(|s| format!("s={s}")).collect();
    writeln!(out, "count,{}", header.join(","))?;
    for (row, values) in heatmap.values.iter().enumerate() {
        let cells: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{}", heatmap.count_lo + row as u64, cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}
