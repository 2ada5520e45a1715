//! Delimited-text export of initial conditions with labels and diffusion
//! coordinates, for external plotting.

use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::archive::Archive;
use super::config::RunConfig;

/// Keep only rows whose initial condition satisfies `lo <= x[axis] <= hi`.
/// On periodic axes the window wraps around.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slice {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for Slice {
    type Err = Error;

    /// `axis:lo:hi`, e.g. `2:-0.05:0.05`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("slice '{s}' is not of the form axis:lo:hi"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let axis = parts[0].trim().parse().map_err(|_| bad())?;
        let lo: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[2].trim().parse().map_err(|_| bad())?;
        if !(lo <= hi) {
            return Err(bad());
        }
        Ok(Slice { axis, lo, hi })
    }
}

impl Slice {
    fn contains(&self, x: f64, period: Option<(f64, f64)>) -> bool {
        let x = match period {
            Some((a, b)) => {
                let w = b - a;
                let mid = 0.5 * (self.lo + self.hi);
                x - w * ((x - mid) / w).round()
            }
            None => x,
        };
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportRequest {
    pub labels: bool,
    /// Diffusion-coordinate columns `j` of `diff/coords`.
    pub coords: Vec<usize>,
    pub slice: Option<Slice>,
}

/// Writes a CSV with columns `id, x0.., converged[, label][, coord_j..]`.
///
/// Without labels or coordinates every sample is listed; otherwise only the
/// samples that entered the distance matrix. Values use the shortest decimal
/// form that parses back to the same double. Returns the number of rows.
pub fn export_pointcloud(archive: &Archive, req: &ExportRequest, out: &mut dyn Write) -> Result<usize> {
    let (shape, x0) = archive.read_array("ics/x0")?;
    let (n, dim) = (shape[0], shape[1]);
    let (_, converged) = archive.read_array("avg/converged")?;

    let needs_embedding = req.labels || !req.coords.is_empty();
    let ids: Vec<usize> = if needs_embedding {
        archive
            .read_array("dist/sample_ids")?
            .1
            .iter()
            .map(|&v| v as usize)
            .collect()
    } else {
        (0..n).collect()
    };
    let labels = if req.labels {
        Some(archive.read_array("cluster/labels")?.1)
    } else {
        None
    };
    let coords = if req.coords.is_empty() {
        None
    } else {
        let (shape, data) = archive.read_array("diff/coords")?;
        let m = shape[1];
        if let Some(&j) = req.coords.iter().find(|&&j| j >= m) {
            return Err(Error::MissingStage(format!(
                "diffusion coordinate {j} not stored (m = {m})"
            )));
        }
        Some((m, data))
    };

    let period = match req.slice {
        Some(s) if s.axis >= dim => {
            return Err(Error::Config(format!(
                "slice axis {} out of range for dimension {dim}",
                s.axis
            )))
        }
        Some(s) => archive
            .manifest()
            .config
            .as_ref()
            .and_then(|v| serde_json::from_value::<RunConfig>(v.clone()).ok())
            .and_then(|cfg| cfg.build_system().ok())
            .filter(|sys| sys.periodic_axes()[s.axis])
            .map(|sys| {
                let d = sys.domain()[s.axis];
                (d.lo, d.hi)
            }),
        None => None,
    };

    let mut header: Vec<String> = vec!["id".into()];
    header.extend((0..dim).map(|d| format!("x{d}")));
    header.push("converged".into());
    if labels.is_some() {
        header.push("label".into());
    }
    header.extend(req.coords.iter().map(|j| format!("coord_{j}")));
    writeln!(out, "{}", header.join(","))?;

    let mut rows = 0;
    for (row, &id) in ids.iter().enumerate() {
        let x = &x0[id * dim..(id + 1) * dim];
        if let Some(s) = &req.slice {
            if !s.contains(x[s.axis], period) {
                continue;
            }
        }
        let mut fields: Vec<String> = vec![id.to_string()];
        fields.extend(x.iter().map(|v| v.to_string()));
        fields.push(if converged[id] != 0.0 { "1".into() } else { "0".into() });
        if let Some(l) = &labels {
            fields.push((l[row] as usize).to_string());
        }
        if let Some((m, data)) = &coords {
            fields.extend(req.coords.iter().map(|&j| data[row * m + j].to_string()));
        }
        writeln!(out, "{}", fields.join(","))?;
        rows += 1;
    }
    Ok(rows)
}
