//! Initial-condition samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::Interval;
use crate::error::{Error, Result};

/// Slack allowed when checking a sampling box against the domain.
const BOX_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum IcSpec {
    /// Cell-centred tensor grid with `counts[d]` points along axis `d`.
    Grid {
        lo: Vec<f64>,
        hi: Vec<f64>,
        counts: Vec<usize>,
    },
    /// `n` points uniform in the box `[lo, hi)`.
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
        n: usize,
        seed: u64,
    },
    /// `n` points uniform in a rectangle of the hyperplane `x[axis] = value`;
    /// `lo`/`hi` list the remaining axes in order.
    Plane {
        axis: usize,
        value: f64,
        lo: Vec<f64>,
        hi: Vec<f64>,
        n: usize,
        seed: u64,
    },
}

fn check_box(lo: &[f64], hi: &[f64], axes: &[usize], domain: &[Interval], allow_flat: bool) -> Result<()> {
    if lo.len() != axes.len() || hi.len() != axes.len() {
        return Err(Error::Config(format!(
            "sampling box needs {} bounds per side, got {} and {}",
            axes.len(),
            lo.len(),
            hi.len()
        )));
    }
    for ((&l, &h), &ax) in lo.iter().zip(hi).zip(axes) {
        if !(l.is_finite() && h.is_finite()) || h < l || (!allow_flat && h == l) {
            return Err(Error::Config(format!("empty sampling range [{l}, {h}] on axis {ax}")));
        }
        let d = domain[ax];
        if l < d.lo - BOX_SLACK || h > d.hi + BOX_SLACK {
            return Err(Error::Config(format!(
                "sampling range [{l}, {h}] on axis {ax} leaves the domain [{}, {}]",
                d.lo, d.hi
            )));
        }
    }
    Ok(())
}

impl IcSpec {
    pub fn len(&self) -> usize {
        match self {
            IcSpec::Grid { counts, .. } => counts.iter().product(),
            IcSpec::Uniform { n, .. } | IcSpec::Plane { n, .. } => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self, domain: &[Interval]) -> Result<()> {
        let dim = domain.len();
        if self.is_empty() {
            return Err(Error::Config("sampler produces no initial conditions".into()));
        }
        match self {
            IcSpec::Grid { lo, hi, counts } => {
                if counts.len() != dim {
                    return Err(Error::Config(format!("grid needs {dim} counts, got {}", counts.len())));
                }
                check_box(lo, hi, &(0..dim).collect::<Vec<_>>(), domain, true)
            }
            IcSpec::Uniform { lo, hi, .. } => check_box(lo, hi, &(0..dim).collect::<Vec<_>>(), domain, true),
            IcSpec::Plane {
                axis, value, lo, hi, ..
            } => {
                if *axis >= dim {
                    return Err(Error::Config(format!(
                        "plane axis {axis} out of range for dimension {dim}"
                    )));
                }
                let d = domain[*axis];
                if !(*value >= d.lo - BOX_SLACK && *value <= d.hi + BOX_SLACK) {
                    return Err(Error::Config(format!(
                        "plane value {value} outside domain on axis {axis}"
                    )));
                }
                let others: Vec<usize> = (0..dim).filter(|a| a != axis).collect();
                check_box(lo, hi, &others, domain, true)
            }
        }
    }

    /// Deterministic list of states (seeded ChaCha8 for random kinds).
    pub fn sample(&self, domain: &[Interval]) -> Result<Vec<Vec<f64>>> {
        self.check(domain)?;
        let dim = domain.len();
        Ok(match self {
            IcSpec::Grid { lo, hi, counts } => {
                let total = self.len();
                let mut out = Vec::with_capacity(total);
                let mut idx = vec![0usize; dim];
                for _ in 0..total {
                    out.push(
                        (0..dim)
                            .map(|d| lo[d] + (hi[d] - lo[d]) * (idx[d] as f64 + 0.5) / counts[d] as f64)
                            .collect(),
                    );
                    for d in (0..dim).rev() {
                        idx[d] += 1;
                        if idx[d] < counts[d] {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
                out
            }
            IcSpec::Uniform { lo, hi, n, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*n)
                    .map(|_| (0..dim).map(|d| lo[d] + (hi[d] - lo[d]) * rng.gen::<f64>()).collect())
                    .collect()
            }
            IcSpec::Plane {
                axis,
                value,
                lo,
                hi,
                n,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*n)
                    .map(|_| {
                        let mut j = 0;
                        (0..dim)
                            .map(|d| {
                                if d == *axis {
                                    *value
                                } else {
                                    let v = lo[j] + (hi[j] - lo[j]) * rng.gen::<f64>();
                                    j += 1;
                                    v
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
        })
    }
}
