//! Staged, resumable pipeline: average → distances → embed → cluster.
//!
//! Each stage records a fingerprint of the configuration sections it depends
//! on (chained through the upstream stages). A stage whose fingerprint matches
//! and whose arrays are all present is skipped; rerunning a stage discards
//! everything downstream of it.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde_json::json;

use crate::clustering::kmeans;
use crate::diffmaps::DiffusionEmbedding;
use crate::error::{Error, Result};
use crate::integrator::{run_ensemble, QuotientSample};
use crate::metric::{pairwise_matrix, DistanceMatrix};

use super::archive::{sha256_hex, Archive, LatticeInfo, StageRecord};
use super::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Average,
    Distances,
    Embed,
    Cluster,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Average, Stage::Distances, Stage::Embed, Stage::Cluster];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Average => "average",
            Stage::Distances => "distances",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
        }
    }

    pub fn arrays(self) -> &'static [&'static str] {
        match self {
            Stage::Average => &[
                "ics/x0",
                "avg/averages",
                "avg/stop_time",
                "avg/final_adiff",
                "avg/converged",
                "avg/failed",
                "avg/n_steps",
            ],
            Stage::Distances => &["dist/matrix", "dist/sample_ids"],
            Stage::Embed => &["diff/eigvals", "diff/coords"],
            Stage::Cluster => &["cluster/labels", "cluster/centroids"],
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn upstream(self) -> Option<Stage> {
        self.index().checked_sub(1).map(|i| Stage::ALL[i])
    }
}

/// Fingerprint of the configuration a stage's outputs depend on.
pub fn fingerprint(cfg: &RunConfig, stage: Stage) -> String {
    let section = match stage {
        Stage::Average => json!([cfg.system, cfg.ics, cfg.basis, cfg.avg, cfg.ode]),
        Stage::Distances => json!([cfg.metric, cfg.drop_unconverged]),
        Stage::Embed => json!(cfg.diff),
        Stage::Cluster => json!(cfg.cluster),
    };
    let parent = stage.upstream().map(|s| fingerprint(cfg, s)).unwrap_or_default();
    sha256_hex(format!("{parent}|{}|{section}", stage.name()).as_bytes())
}

pub fn stage_is_current(archive: &Archive, cfg: &RunConfig, stage: Stage) -> bool {
    archive
        .manifest()
        .stages
        .get(stage.name())
        .is_some_and(|r| r.fingerprint == fingerprint(cfg, stage))
        && stage.arrays().iter().all(|a| archive.has(a))
}

fn clear_stage(archive: &mut Archive, stage: Stage) -> Result<()> {
    archive.manifest_mut().stages.remove(stage.name());
    for name in stage.arrays() {
        archive.remove_array(name)?;
    }
    Ok(())
}

/// Runs one stage unless it is already current (or `force` is set).
/// Returns whether the stage was executed.
pub fn run_stage(archive: &mut Archive, cfg: &RunConfig, stage: Stage, force: bool) -> Result<bool> {
    if !force && stage_is_current(archive, cfg, stage) {
        log::info!("stage {} is up to date", stage.name());
        return Ok(false);
    }
    if let Some(up) = stage.upstream() {
        if !stage_is_current(archive, cfg, up) {
            return Err(Error::MissingStage(format!(
                "stage '{}' needs a completed '{}' stage for this configuration",
                stage.name(),
                up.name()
            )));
        }
    }
    for later in Stage::ALL.iter().filter(|s| **s >= stage) {
        clear_stage(archive, *later)?;
    }
    archive.manifest_mut().config = Some(serde_json::to_value(cfg)?);
    log::info!("running stage {}", stage.name());
    match stage {
        Stage::Average => average(archive, cfg)?,
        Stage::Distances => distances(archive, cfg)?,
        Stage::Embed => embed(archive, cfg)?,
        Stage::Cluster => cluster(archive, cfg)?,
    }
    let completed_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    archive.manifest_mut().stages.insert(
        stage.name().into(),
        StageRecord {
            fingerprint: fingerprint(cfg, stage),
            completed_at,
            arrays: stage.arrays().iter().map(|s| s.to_string()).collect(),
        },
    );
    archive.save()?;
    Ok(true)
}

/// Runs every stage in order, resuming from whatever is already current.
/// Returns the stages that were executed.
pub fn run_pipeline(root: &Path, cfg: &RunConfig) -> Result<Vec<Stage>> {
    let mut archive = Archive::open_or_create(root)?;
    let mut ran = Vec::new();
    for stage in Stage::ALL {
        if run_stage(&mut archive, cfg, stage, false)? {
            ran.push(stage);
        }
    }
    Ok(ran)
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn no_meta() -> BTreeMap<String, serde_json::Value> {
    BTreeMap::new()
}

fn average(archive: &mut Archive, cfg: &RunConfig) -> Result<()> {
    let system = cfg.build_system()?;
    let basis = cfg.basis(&system)?;
    let avg = cfg.averaging()?;
    let ics = cfg.initial_conditions(&system)?;
    let samples = run_ensemble(&system, &ics, &basis, &avg)?;
    let n = samples.len();
    let dim = system.dim();
    let len = basis.len();
    let lattice = LatticeInfo::of(basis.lattice());

    let x0: Vec<f64> = ics.iter().flatten().copied().collect();
    archive.write_array("ics/x0", &[n, dim], &x0, no_meta())?;
    let averages: Vec<Complex64> = samples.iter().flat_map(|s| s.averages.iter().copied()).collect();
    let mut meta = no_meta();
    meta.insert("lattice_hash".into(), json!(lattice.hash));
    meta.insert("omega".into(), json!(avg.omega));
    archive.write_complex("avg/averages", &[n, len], &averages, meta)?;
    let column = |f: &dyn Fn(&QuotientSample) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
    archive.write_array("avg/stop_time", &[n], &column(&|s| s.stop_time), no_meta())?;
    archive.write_array("avg/final_adiff", &[n], &column(&|s| s.final_adiff), no_meta())?;
    archive.write_array("avg/converged", &[n], &column(&|s| flag(s.converged)), no_meta())?;
    archive.write_array("avg/failed", &[n], &column(&|s| flag(s.is_failed())), no_meta())?;
    archive.write_array("avg/n_steps", &[n], &column(&|s| s.n_steps as f64), no_meta())?;

    let failures: Vec<serde_json::Value> = samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.failure.as_ref().map(|m| json!({"id": i, "message": m})))
        .collect();
    let bins = 10;
    let mut hist = vec![0usize; bins];
    for s in &samples {
        let b = ((s.stop_time / avg.t_max) * bins as f64).floor() as usize;
        hist[b.min(bins - 1)] += 1;
    }
    let converged = samples.iter().filter(|s| s.converged).count();
    log::info!(
        "{converged}/{n} trajectories converged, {} failed; stop-time histogram over [0, {}]: {hist:?}",
        failures.len(),
        avg.t_max
    );
    let m = archive.manifest_mut();
    m.lattice = Some(lattice);
    m.notes.insert("avg/failures".into(), json!(failures));
    m.notes.insert(
        "avg/stop_time_histogram".into(),
        json!({"t_max": avg.t_max, "counts": hist}),
    );
    archive.set_scalar("avg/omega", avg.omega);
    Ok(())
}

fn distances(archive: &mut Archive, cfg: &RunConfig) -> Result<()> {
    let system = cfg.build_system()?;
    let lattice = cfg.lattice(&system)?;
    let hash = lattice.hash();
    let recorded = archive.manifest().lattice.as_ref().map(|l| l.hash.clone());
    if recorded.as_deref() != Some(hash.as_str()) {
        return Err(Error::BasisMismatch(
            "archive averages were computed on a different lattice".into(),
        ));
    }
    let params = cfg.sobolev(&lattice)?;
    let (shape, averages) = archive.read_complex("avg/averages")?;
    let (n, len) = (shape[0], shape[1]);
    let (_, failed) = archive.read_array("avg/failed")?;
    let (_, converged) = archive.read_array("avg/converged")?;

    let mut ids = Vec::new();
    let (mut n_failed, mut n_unconverged) = (0, 0);
    for i in 0..n {
        if failed[i] != 0.0 {
            n_failed += 1;
        } else if cfg.drop_unconverged && converged[i] == 0.0 {
            n_unconverged += 1;
        } else {
            ids.push(i);
        }
    }
    if n_failed > 0 {
        log::warn!("excluding {n_failed} failed trajectories from the distance matrix");
    }
    if n_unconverged > 0 {
        log::warn!("dropping {n_unconverged} unconverged trajectories");
    }
    if ids.is_empty() {
        return Err(Error::InvalidArgument("no samples left for the distance matrix".into()));
    }
    let samples: Vec<QuotientSample> = ids
        .iter()
        .map(|&i| QuotientSample {
            x0: Vec::new(),
            omega: params.omega,
            averages: averages[i * len..(i + 1) * len].to_vec(),
            stop_time: 0.0,
            final_adiff: 0.0,
            converged: converged[i] != 0.0,
            n_steps: 0,
            failure: None,
        })
        .collect();
    let refs: Vec<&QuotientSample> = samples.iter().collect();
    let dm = pairwise_matrix(&refs, ids.clone(), &params)?;
    let k = dm.n();
    let mut meta = no_meta();
    meta.insert("s".into(), json!(params.s));
    meta.insert("lattice_hash".into(), json!(hash));
    meta.insert("omega".into(), json!(params.omega));
    archive.write_array("dist/matrix", &[k, k], dm.as_slice(), meta)?;
    let id_col: Vec<f64> = ids.iter().map(|&i| i as f64).collect();
    archive.write_array("dist/sample_ids", &[k], &id_col, no_meta())?;
    archive.set_scalar("metric/s", params.s);
    Ok(())
}

/// Distance matrix as stored in the archive.
pub fn load_distances(archive: &Archive) -> Result<DistanceMatrix> {
    let (shape, data) = archive.read_array("dist/matrix")?;
    let (_, ids) = archive.read_array("dist/sample_ids")?;
    if shape.len() != 2 || shape[0] != shape[1] || ids.len() != shape[0] {
        return Err(Error::Corrupt(format!("dist/matrix has shape {shape:?}")));
    }
    DistanceMatrix::from_parts(shape[0], data, ids.iter().map(|&v| v as usize).collect())
}

fn embed(archive: &mut Archive, cfg: &RunConfig) -> Result<()> {
    let dm = load_distances(archive)?;
    let e = DiffusionEmbedding::compute(&dm, &cfg.diff)?;
    log::info!(
        "bandwidth h = {:e}, leading eigenvalues {:?}, residual {:e}",
        e.h,
        &e.eigvals[..e.m().min(4)],
        e.max_residual
    );
    archive.write_array("diff/eigvals", &[e.m()], &e.eigvals, no_meta())?;
    archive.write_array("diff/coords", &[e.n(), e.m()], &e.coords, no_meta())?;
    archive.set_scalar("diff/h", e.h);
    archive.set_scalar("diff/n_min", e.n_min as f64);
    archive.set_scalar("diff/max_residual", e.max_residual);
    Ok(())
}

/// Rows of `diff/coords` restricted to the first `dims` nontrivial columns.
pub fn cluster_features(coords: &[f64], n: usize, m: usize, dims: usize) -> Vec<Vec<f64>> {
    let dims = dims.min(m.saturating_sub(1));
    (0..n)
        .map(|i| {
            if dims == 0 {
                vec![coords[i * m]]
            } else {
                coords[i * m + 1..i * m + 1 + dims].to_vec()
            }
        })
        .collect()
}

fn cluster(archive: &mut Archive, cfg: &RunConfig) -> Result<()> {
    let (shape, coords) = archive.read_array("diff/coords")?;
    let (n, m) = (shape[0], shape[1]);
    let points = cluster_features(&coords, n, m, cfg.cluster.dims);
    let k = cfg.cluster.k.min(n);
    if k < cfg.cluster.k {
        log::warn!("only {n} samples; using k = {k}");
    }
    let result = kmeans(&points, &cfg.cluster.kmeans_params(k))?;
    let labels: Vec<f64> = result.labels.iter().map(|&l| l as f64).collect();
    archive.write_array("cluster/labels", &[n], &labels, no_meta())?;
    let dims = points[0].len();
    let centroids: Vec<f64> = result.centroids.iter().flatten().copied().collect();
    archive.write_array("cluster/centroids", &[k, dims], &centroids, no_meta())?;
    archive.set_scalar("cluster/k", k as f64);
    archive.set_scalar("cluster/inertia", result.inertia);
    archive.set_scalar("cluster/seed", result.seed as f64);
    log::info!("k-means inertia {:e} (seed {})", result.inertia, result.seed);
    Ok(())
}
