//! Run configuration: a single JSON document covering every stage.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::KMeansParams;
use crate::diffmaps::DiffusionParams;
use crate::dynamics::{
    builtin_abc, builtin_hill, builtin_oscillator, expression_system, extend_periodic, FlowSystem, Interval,
};
use crate::error::{Error, Result};
use crate::integrator::{AveragingConfig, OdeTolerances};
use crate::metric::SobolevParams;
use crate::observables::{ObservableBasis, WaveLattice};

use super::sampling::IcSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtendConfig {
    pub period: f64,
    #[serde(default)]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// One of `abc`, `hill`, `oscillator`, `expression`.
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub expressions: Vec<String>,
    /// Per-axis `[lo, hi]`; required for `expression`, optional override otherwise.
    #[serde(default)]
    pub domain: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub periodic: Option<Vec<bool>>,
    /// Append a periodic time axis to a periodically driven system.
    #[serde(default)]
    pub extend: Option<ExtendConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(default)]
    pub k: Option<u32>,
    #[serde(default)]
    pub bounds: Option<Vec<u32>>,
    /// Observation box; defaults to the system domain.
    #[serde(default)]
    pub domain: Option<Vec<[f64; 2]>>,
    /// Keep one wave of each conjugate pair; defaults to true for ergodic
    /// averages and must be false for harmonic ones.
    #[serde(default)]
    pub half: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvgConfig {
    pub atol: f64,
    pub t_min: f64,
    pub t_e: f64,
    pub t_max: Option<f64>,
    pub omega: f64,
}

impl Default for AvgConfig {
    fn default() -> Self {
        AvgConfig {
            atol: 1e-4,
            t_min: 100.0,
            t_e: 10.0,
            t_max: None,
            omega: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Sobolev order; `(D+1)/2` when absent.
    pub s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Number of leading nontrivial diffusion coordinates fed to k-means.
    pub dims: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let km = KMeansParams::default();
        ClusterConfig {
            k: km.k,
            seed: km.seed,
            restarts: km.restarts,
            dims: 10,
            max_iter: km.max_iter,
            tol: km.tol,
        }
    }
}

impl ClusterConfig {
    pub fn kmeans_params(&self, k: usize) -> KMeansParams {
        KMeansParams {
            k,
            seed: self.seed,
            restarts: self.restarts,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub ics: IcSpec,
    pub basis: BasisConfig,
    #[serde(default)]
    pub avg: AvgConfig,
    #[serde(default)]
    pub ode: OdeTolerances,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub diff: DiffusionParams,
    #[serde(default)]
    pub cluster: ClusterConfig,
    /// Exclude samples that hit `t_max` without converging from the distance
    /// stage. Failed samples are always excluded.
    #[serde(default)]
    pub drop_unconverged: bool,
    /// Default archive location.
    #[serde(default)]
    pub output: Option<String>,
}

fn intervals(raw: &[[f64; 2]], what: &str) -> Result<Vec<Interval>> {
    raw.iter()
        .enumerate()
        .map(|(i, &[lo, hi])| {
            if lo.is_finite() && hi.is_finite() && hi > lo {
                Ok(Interval::new(lo, hi))
            } else {
                Err(Error::Config(format!(
                    "{what}[{i}] = [{lo}, {hi}] is not a nonempty interval"
                )))
            }
        })
        .collect()
}

fn take_params(params: &BTreeMap<String, f64>, allowed: &[(&str, Option<f64>)], system: &str) -> Result<Vec<f64>> {
    if let Some(unknown) = params.keys().find(|k| !allowed.iter().any(|(a, _)| a == k)) {
        return Err(Error::Config(format!(
            "unknown parameter '{unknown}' for system '{system}'"
        )));
    }
    allowed
        .iter()
        .map(|(name, default)| {
            params
                .get(*name)
                .copied()
                .or(*default)
                .ok_or_else(|| Error::Config(format!("system '{system}' needs parameter '{name}'")))
        })
        .collect()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without integrating.
    pub fn validate(&self) -> Result<()> {
        let system = self.build_system()?;
        self.basis(&system)?;
        self.averaging()?;
        self.ics.check(&self.physical_domain(&system))?;
        if self.cluster.k == 0 || self.cluster.restarts == 0 || self.cluster.max_iter == 0 {
            return Err(Error::Config(
                "cluster.k, cluster.restarts and cluster.max_iter must be positive".into(),
            ));
        }
        if self.diff.m == 0 {
            return Err(Error::Config("diff.m must be positive".into()));
        }
        if let Some(h) = self.diff.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("diff.h must be positive, got {h}")));
            }
        }
        Ok(())
    }

    /// The flow that gets integrated (extended by a time axis if requested).
    pub fn build_system(&self) -> Result<FlowSystem> {
        let sc = &self.system;
        let cfg_err = |e: Error| Error::Config(e.to_string());
        let mut system = match sc.name.as_str() {
            "abc" => {
                let p = take_params(
                    &sc.params,
                    &[("a", Some(3f64.sqrt())), ("b", Some(2f64.sqrt())), ("c", Some(1.0))],
                    "abc",
                )?;
                builtin_abc(p[0], p[1], p[2])
            }
            "hill" => {
                let p = take_params(&sc.params, &[("c", None), ("eps", None)], "hill")?;
                builtin_hill(p[0], p[1])
            }
            "oscillator" => {
                take_params(&sc.params, &[], "oscillator")?;
                builtin_oscillator()
            }
            "expression" => {
                let domain = sc
                    .domain
                    .as_ref()
                    .ok_or_else(|| Error::Config("expression systems need system.domain".into()))?;
                let domain = intervals(domain, "system.domain")?;
                let periodic = sc.periodic.clone().unwrap_or_else(|| vec![false; domain.len()]);
                expression_system(&sc.expressions, &sc.params, domain, periodic).map_err(cfg_err)?
            }
            other => return Err(Error::Config(format!("unknown system '{other}'"))),
        };
        if sc.name != "expression" {
            if sc.periodic.is_some() || !sc.expressions.is_empty() {
                return Err(Error::Config(
                    "system.periodic and system.expressions apply to expression systems only".into(),
                ));
            }
            if let Some(domain) = &sc.domain {
                system = system
                    .with_domain(intervals(domain, "system.domain")?)
                    .map_err(cfg_err)?;
            }
        }
        if let Some(ext) = &sc.extend {
            system = extend_periodic(system, ext.period, ext.c).map_err(cfg_err)?.into_flow();
        }
        Ok(system)
    }

    /// Number of leading state components that are physical (the τ axis of
    /// an extended system is not).
    pub fn physical_dim(&self, system: &FlowSystem) -> usize {
        system.dim() - usize::from(self.system.extend.is_some())
    }

    pub fn physical_domain(&self, system: &FlowSystem) -> Vec<Interval> {
        system.domain()[..self.physical_dim(system)].to_vec()
    }

    pub fn physical_periodic(&self, system: &FlowSystem) -> Vec<bool> {
        system.periodic_axes()[..self.physical_dim(system)].to_vec()
    }

    pub fn half_lattice(&self) -> bool {
        self.basis.half.unwrap_or(self.avg.omega == 0.0)
    }

    pub fn lattice(&self, system: &FlowSystem) -> Result<WaveLattice> {
        let dim = self.physical_dim(system);
        let half = self.half_lattice();
        if half && self.avg.omega != 0.0 {
            return Err(Error::Config("basis.half must be false for harmonic averages".into()));
        }
        let lattice = match (&self.basis.k, &self.basis.bounds) {
            (Some(k), None) => WaveLattice::uniform(dim, *k, half),
            (None, Some(b)) if b.len() == dim => WaveLattice::new(b, half),
            (None, Some(b)) => {
                return Err(Error::Config(format!(
                    "basis.bounds has {} entries for a {dim}-dimensional state",
                    b.len()
                )))
            }
            _ => return Err(Error::Config("give exactly one of basis.k and basis.bounds".into())),
        };
        lattice.map_err(|e| Error::Config(e.to_string()))
    }

    pub fn basis(&self, system: &FlowSystem) -> Result<ObservableBasis> {
        let lattice = self.lattice(system)?;
        let domain = match &self.basis.domain {
            Some(d) => intervals(d, "basis.domain")?,
            None => self.physical_domain(system),
        };
        if domain.len() != lattice.dim() {
            return Err(Error::Config(format!(
                "basis.domain has {} axes, expected {}",
                domain.len(),
                lattice.dim()
            )));
        }
        ObservableBasis::new(lattice, domain).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn averaging(&self) -> Result<AveragingConfig> {
        let a = &self.avg;
        AveragingConfig::new(a.atol, a.t_min, a.t_e, a.t_max)
            .map(|c| c.with_omega(a.omega).with_ode(self.ode))
            .and_then(|c| c.validate().map(|_| c))
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn sobolev(&self, lattice: &WaveLattice) -> Result<SobolevParams> {
        SobolevParams::new(lattice, self.metric.s, self.avg.omega).map_err(|e| Error::Config(e.to_string()))
    }

    /// Initial conditions in the integrated state space.
    pub fn initial_conditions(&self, system: &FlowSystem) -> Result<Vec<Vec<f64>>> {
        let mut ics = self.ics.sample(&self.physical_domain(system))?;
        if self.system.extend.is_some() {
            for x in &mut ics {
                x.push(0.0);
            }
        }
        Ok(ics)
    }
}
