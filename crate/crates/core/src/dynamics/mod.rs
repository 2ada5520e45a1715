//! Flow systems: built-in vector fields, user expressions, and the autonomous
//! extension of periodically driven systems.

mod expr;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub use expr::Expr;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Smallest radius accepted by the Hill's vortex field; the swirl term `c/2R`
/// is singular on the axis.
pub const HILL_MIN_RADIUS: f64 = 1e-8;

/// Closed interval `[lo, hi]` of one state axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Per-axis factor applied to the partial derivative when computing the
/// divergence, e.g. `R^{-1}` on the angular axis of cylindrical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisWeight {
    Unit,
    /// Divide by the value of the given state component.
    InverseOf(usize),
}

impl AxisWeight {
    fn at(self, x: &[f64]) -> f64 {
        match self {
            AxisWeight::Unit => 1.0,
            AxisWeight::InverseOf(i) => 1.0 / x[i],
        }
    }
}

pub type CustomField = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum Field {
    Abc { a: f64, b: f64, c: f64 },
    Hill { swirl: f64, eps: f64 },
    Oscillator,
    Zero,
    Expressions(Vec<Expr>),
    Extended { base: Arc<FlowSystem>, rate: f64 },
    Custom(CustomField),
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Abc { a, b, c } => write!(f, "Abc({a}, {b}, {c})"),
            Field::Hill { swirl, eps } => write!(f, "Hill(c={swirl}, eps={eps})"),
            Field::Oscillator => f.write_str("Oscillator"),
            Field::Zero => f.write_str("Zero"),
            Field::Expressions(e) => f.debug_tuple("Expressions").field(e).finish(),
            Field::Extended { base, rate } => write!(f, "Extended({}, c={rate})", base.name),
            Field::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// A vector field together with the metadata the rest of the pipeline needs.
///
/// Immutable after construction; evaluation is pure, so systems can be shared
/// freely between worker threads.
#[derive(Debug, Clone)]
pub struct FlowSystem {
    name: String,
    dim: usize,
    domain: Vec<Interval>,
    periodic: Vec<bool>,
    time_dependent: bool,
    metric: Vec<AxisWeight>,
    field: Field,
}

impl FlowSystem {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &[Interval] {
        &self.domain
    }

    pub fn periodic_axes(&self) -> &[bool] {
        &self.periodic
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn metric_coeffs(&self) -> &[AxisWeight] {
        &self.metric
    }

    /// Replaces the observation box, keeping the field.
    pub fn with_domain(mut self, domain: Vec<Interval>) -> Result<Self> {
        if domain.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: domain.len(),
            });
        }
        self.domain = domain;
        Ok(self)
    }

    /// Writes the velocity at `(x, t)` into `out`.
    pub fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: out.len(),
            });
        }
        self.field_into(x, t, out)?;
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} velocity component {i} at x = {x:?}, t = {t}",
                self.name
            )));
        }
        Ok(())
    }

    /// Velocity at `(x, t)`.
    pub fn eval_rhs(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, t, &mut out)?;
        Ok(out)
    }

    fn field_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        match &self.field {
            Field::Abc { a, b, c } => {
                let (sx, cx) = (TWO_PI * x[0]).sin_cos();
                let (sy, cy) = (TWO_PI * x[1]).sin_cos();
                let (sz, cz) = (TWO_PI * x[2]).sin_cos();
                out[0] = (a * sz + c * cy) / TWO_PI;
                out[1] = (b * sx + a * cz) / TWO_PI;
                out[2] = (c * sy + b * cx) / TWO_PI;
            }
            Field::Hill { swirl, eps } => {
                let (r, z, theta) = (x[0], x[1], x[2]);
                if !(r >= HILL_MIN_RADIUS) {
                    return Err(Error::Singular(format!(
                        "Hill's vortex evaluated at R = {r:e} (< {HILL_MIN_RADIUS:e})"
                    )));
                }
                let forcing = eps * (TWO_PI * t).sin();
                let (st, ct) = theta.sin_cos();
                let root = (2.0 * r).sqrt();
                out[0] = 2.0 * r * z + forcing * root * st;
                out[1] = 1.0 - 4.0 * r - z * z + forcing * z / root * st;
                out[2] = swirl / (2.0 * r) + forcing * 2.0 * ct;
            }
            Field::Oscillator => out[0] = 1.0,
            Field::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Field::Expressions(exprs) => {
                for (o, e) in out.iter_mut().zip(exprs) {
                    *o = e.eval(x, t);
                }
            }
            Field::Extended { base, rate } => {
                let d = base.dim;
                let phys_t = x[d] / rate;
                base.field_into(&x[..d], phys_t, &mut out[..d])?;
                out[d] = *rate;
            }
            Field::Custom(f) => f(x, t, out),
        }
        Ok(())
    }
}

/// The ABC flow on the unit 3-torus:
/// `(1/2π)(A sin 2πz + C cos 2πy, B sin 2πx + A cos 2πz, C sin 2πy + B cos 2πx)`.
pub fn builtin_abc(a: f64, b: f64, c: f64) -> FlowSystem {
    FlowSystem {
        name: "abc".into(),
        dim: 3,
        domain: vec![Interval::new(0.0, 1.0); 3],
        periodic: vec![true; 3],
        time_dependent: false,
        metric: vec![AxisWeight::Unit; 3],
        field: Field::Abc { a, b, c },
    }
}

/// The classic parameter choice `A = √3, B = √2, C = 1`.
pub fn builtin_abc_default() -> FlowSystem {
    builtin_abc(3.0_f64.sqrt(), 2.0_f64.sqrt(), 1.0)
}

/// Periodically forced Hill's spherical vortex on `(R, z, θ)` with swirl `c`
/// and perturbation strength `eps`.
///
/// The default observation box is `[0, 0.5] × [-1, 1] × [0, 2π]`.
pub fn builtin_hill(c: f64, eps: f64) -> FlowSystem {
    FlowSystem {
        name: "hill".into(),
        dim: 3,
        domain: vec![
            Interval::new(0.0, 0.5),
            Interval::new(-1.0, 1.0),
            Interval::new(0.0, TWO_PI),
        ],
        periodic: vec![false, false, true],
        time_dependent: true,
        metric: vec![AxisWeight::Unit, AxisWeight::Unit, AxisWeight::InverseOf(0)],
        field: Field::Hill { swirl: c, eps },
    }
}

/// Unperturbed Hill's vortex Hamiltonian `H(R, z) = R z² − R + 2R²`.
pub fn hill_hamiltonian(r: f64, z: f64) -> f64 {
    r * z * z - r + 2.0 * r * r
}

/// `θ̇ = 1` on the unit circle.
pub fn builtin_oscillator() -> FlowSystem {
    FlowSystem {
        name: "oscillator".into(),
        dim: 1,
        domain: vec![Interval::new(0.0, 1.0)],
        periodic: vec![true],
        time_dependent: false,
        metric: vec![AxisWeight::Unit],
        field: Field::Oscillator,
    }
}

/// Identically zero field on the unit cube; every state is a fixed point.
pub fn zero_field(dim: usize) -> FlowSystem {
    FlowSystem {
        name: "zero".into(),
        dim,
        domain: vec![Interval::new(0.0, 1.0); dim],
        periodic: vec![true; dim],
        time_dependent: false,
        metric: vec![AxisWeight::Unit; dim],
        field: Field::Zero,
    }
}

/// A field given by one expression per axis (see [`Expr`] for the syntax).
pub fn expression_system(
    sources: &[String],
    params: &BTreeMap<String, f64>,
    domain: Vec<Interval>,
    periodic: Vec<bool>,
) -> Result<FlowSystem> {
    let dim = sources.len();
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "expression system needs at least one axis".into(),
        ));
    }
    if domain.len() != dim || periodic.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: domain.len().min(periodic.len()),
        });
    }
    let exprs = sources
        .iter()
        .map(|s| Expr::compile(s, dim, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowSystem {
        name: "expression".into(),
        dim,
        domain,
        periodic,
        time_dependent: exprs.iter().any(Expr::uses_time),
        metric: vec![AxisWeight::Unit; dim],
        field: Field::Expressions(exprs),
    })
}

/// Wraps an arbitrary Rust closure as a flow system.
pub fn custom_system(
    name: &str,
    domain: Vec<Interval>,
    periodic: Vec<bool>,
    time_dependent: bool,
    field: CustomField,
) -> Result<FlowSystem> {
    let dim = domain.len();
    if periodic.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: periodic.len(),
        });
    }
    Ok(FlowSystem {
        name: name.into(),
        dim,
        domain,
        periodic,
        time_dependent,
        metric: vec![AxisWeight::Unit; dim],
        field: Field::Custom(field),
    })
}

/// Autonomous extension `ẋ = A(x, τ/c), τ̇ = c` of a periodically driven system.
///
/// The extra axis is periodic on `[0, c·period)`; with the default
/// `c = 1/period` it is the unit circle.
#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    pub base: Arc<FlowSystem>,
    pub period: f64,
    pub c: f64,
    /// Set when the base system was already autonomous.
    pub warning: Option<String>,
    flow: FlowSystem,
}

impl ExtendedSystem {
    /// The extended system as a plain `D+1` dimensional flow.
    pub fn flow(&self) -> &FlowSystem {
        &self.flow
    }

    pub fn into_flow(self) -> FlowSystem {
        self.flow
    }

    /// Physical time corresponding to the extended coordinate `tau`.
    pub fn physical_time(&self, tau: f64) -> f64 {
        tau / self.c
    }
}

/// Builds the autonomous extension of `system`. `c = None` selects `1/period`.
pub fn extend_periodic(system: FlowSystem, period: f64, c: Option<f64>) -> Result<ExtendedSystem> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
    }
    let c = c.unwrap_or(1.0 / period);
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time-rescaling constant must be positive, got {c}"
        )));
    }
    let warning = (!system.time_dependent).then(|| {
        format!(
            "extending autonomous system `{}`; the extra axis decouples",
            system.name
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let base = Arc::new(system);
    let mut domain = base.domain.clone();
    domain.push(Interval::new(0.0, c * period));
    let mut periodic = base.periodic.clone();
    periodic.push(true);
    let mut metric = base.metric.clone();
    metric.push(AxisWeight::Unit);
    let flow = FlowSystem {
        name: format!("{}+tau", base.name),
        dim: base.dim + 1,
        domain,
        periodic,
        time_dependent: false,
        metric,
        field: Field::Extended {
            base: Arc::clone(&base),
            rate: c,
        },
    };
    Ok(ExtendedSystem {
        base,
        period,
        c,
        warning,
        flow,
    })
}

/// Central finite-difference divergence `Σ_d w_d(x) ∂_d A_d(x, t)` with the
/// system's per-axis weights.
pub fn divergence(system: &FlowSystem, x: &[f64], t: f64, h: f64) -> Result<f64> {
    if x.len() != system.dim {
        return Err(Error::DimensionMismatch {
            expected: system.dim,
            got: x.len(),
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    for d in 0..system.dim {
        let iv = system.domain[d];
        if !system.periodic[d] && !(x[d] - h > iv.lo && x[d] + h < iv.hi) {
            return Err(Error::InvalidArgument(format!(
                "axis {d}: x = {} is not interior to [{}, {}] by margin {h}",
                x[d], iv.lo, iv.hi
            )));
        }
    }
    let mut probe = x.to_vec();
    let mut plus = vec![0.0; system.dim];
    let mut minus = vec![0.0; system.dim];
    let mut div = 0.0;
    for d in 0..system.dim {
        probe[d] = x[d] + h;
        system.eval_into(&probe, t, &mut plus)?;
        probe[d] = x[d] - h;
        system.eval_into(&probe, t, &mut minus)?;
        probe[d] = x[d];
        div += system.metric[d].at(x) * (plus[d] - minus[d]) / (2.0 * h);
    }
    Ok(div)
}
