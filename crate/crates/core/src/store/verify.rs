//! Integrity and invariant checks of a stored archive.

use std::path::Path;

use crate::diffmaps::{build_kernel, density_normalize, markov_matrix};
use crate::error::Result;
use crate::metric::DistanceMatrix;
use crate::observables::WaveLattice;

use super::archive::{decode, sha256_hex, Archive};

/// Problems found in an archive; empty means the archive is sound.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub issues: Vec<String>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Recomputes hashes and re-checks the numerical invariants. Only an
/// unreadable manifest is an `Err`; everything else lands in the report.
pub fn verify_archive(root: &Path) -> Result<VerifyReport> {
    let archive = Archive::open(root)?;
    let mut issues = Vec::new();
    let m = archive.manifest();

    // byte-level integrity first; later checks only use arrays that pass
    let mut sound = std::collections::BTreeMap::new();
    for (name, entry) in &m.arrays {
        match archive.read_bytes(name) {
            Err(e) => issues.push(format!("{name}: {e}")),
            Ok(bytes) if bytes.len() != 8 * entry.n_doubles() => issues.push(format!(
                "{name}: shape mismatch, {} bytes for declared shape {:?}",
                bytes.len(),
                entry.shape
            )),
            Ok(bytes) => {
                if sha256_hex(&bytes) != entry.sha256 {
                    issues.push(format!("{name}: hash mismatch"));
                }
                sound.insert(name.clone(), (entry.shape.clone(), decode(&bytes)));
            }
        }
    }
    for (stage, record) in &m.stages {
        for a in &record.arrays {
            if !m.arrays.contains_key(a) {
                issues.push(format!("stage {stage}: array {a} missing"));
            }
        }
    }

    if let Some(info) = &m.lattice {
        match WaveLattice::new(&info.bounds, info.half) {
            Ok(l) if l.hash() != info.hash || l.len() != info.len => {
                issues.push("lattice: manifest hash does not match the recorded bounds".into())
            }
            Err(e) => issues.push(format!("lattice: {e}")),
            _ => {}
        }
        for name in ["avg/averages", "dist/matrix"] {
            if let Some(entry) = m.arrays.get(name) {
                if entry.meta.get("lattice_hash").and_then(|v| v.as_str()) != Some(info.hash.as_str()) {
                    issues.push(format!("{name}: lattice hash in header differs from manifest"));
                }
            }
        }
        if let Some(entry) = m.arrays.get("avg/averages") {
            if entry.shape.get(1) != Some(&info.len) {
                issues.push(format!(
                    "avg/averages: {:?} columns for a lattice of {}",
                    entry.shape.get(1),
                    info.len
                ));
            }
        }
    }

    let rows = |name: &str| m.arrays.get(name).map(|e| e.shape[0]);
    if let Some(n) = rows("avg/averages") {
        for name in [
            "ics/x0",
            "avg/stop_time",
            "avg/final_adiff",
            "avg/converged",
            "avg/failed",
            "avg/n_steps",
        ] {
            if rows(name).is_some_and(|r| r != n) {
                issues.push(format!("{name}: {} rows, expected {n}", rows(name).unwrap()));
            }
        }
    }

    let dm = match (sound.get("dist/matrix"), sound.get("dist/sample_ids")) {
        (Some((shape, data)), Some((_, ids))) if shape.len() == 2 && shape[0] == shape[1] && ids.len() == shape[0] => {
            DistanceMatrix::from_parts(shape[0], data.clone(), ids.iter().map(|&v| v as usize).collect()).ok()
        }
        (Some((shape, _)), _) => {
            issues.push(format!("dist/matrix: inconsistent shape {shape:?}"));
            None
        }
        _ => None,
    };
    if let Some(dm) = &dm {
        if let Err(msg) = dm.check_invariants() {
            issues.push(format!("dist/matrix: symmetry violation: {msg}"));
        }
    }

    if let (Some((_, eig)), Some((cshape, coords))) = (sound.get("diff/eigvals"), sound.get("diff/coords")) {
        let mm = eig.len();
        if cshape.len() != 2 || cshape[1] != mm || dm.as_ref().is_some_and(|d| d.n() != cshape[0]) {
            issues.push(format!(
                "diff/coords: shape {cshape:?} inconsistent with {mm} eigenvalues"
            ));
        } else {
            if (eig[0] - 1.0).abs() > 1e-8 {
                issues.push(format!("diff/eigvals: lambda_0 = {} is not 1", eig[0]));
            }
            if eig.iter().any(|l| l.abs() > 1.0 + 1e-8) || eig.windows(2).any(|w| w[1] > w[0]) {
                issues.push("diff/eigvals: eigenvalues unordered or outside [-1, 1]".into());
            }
            if (0..cshape[0]).any(|i| (coords[i * mm] - eig[0]).abs() > 1e-8) {
                issues.push("diff/coords: first coordinate is not constant".into());
            }
        }
        if let (Some(dm), Ok(h)) = (&dm, archive.scalar("diff/h")) {
            if dm.n() > 1 {
                match build_kernel(dm, h).and_then(|a| density_normalize(&a)) {
                    Ok(ahat) => {
                        let s = markov_matrix(&ahat);
                        let n = dm.n();
                        if (0..n).any(|i| (s[i * n..(i + 1) * n].iter().sum::<f64>() - 1.0).abs() > 1e-12) {
                            issues.push("diff: reconstructed Markov matrix is not row-stochastic".into());
                        }
                    }
                    Err(e) => issues.push(format!("diff: kernel rebuild failed: {e}")),
                }
            }
        }
    }

    if let Some((_, labels)) = sound.get("cluster/labels") {
        let k = archive.scalar("cluster/k").unwrap_or(f64::INFINITY);
        if labels.iter().any(|&l| l < 0.0 || l.fract() != 0.0 || l >= k) {
            issues.push("cluster/labels: label outside [0, k)".into());
        }
        if let Some((cshape, _)) = sound.get("diff/coords") {
            if cshape[0] != labels.len() {
                issues.push(format!(
                    "cluster/labels: {} labels for {} embedded samples",
                    labels.len(),
                    cshape[0]
                ));
            }
        }
    }

    Ok(VerifyReport { issues })
}
