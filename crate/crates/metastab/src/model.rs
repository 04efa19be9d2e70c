//! The three Hamiltonians, single-flip energy deltas, Metropolis rates, and
//! parameter assumption checks.
//!
//! Every Hamiltonian exists in two forms that must agree: the bond sum over
//! nearest (and next-nearest) neighbor pairs plus field terms, and a
//! geometric form driven entirely by the integer counts of [`GeomCounts`]
//! relative to the all-minus configuration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{GeomCounts, RowParity, SpinConfiguration, Torus};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("coupling and field parameters must be strictly positive")]
    NonPositiveParameter,
    #[error("derived field {name} = {given} inconsistent with primaries (expected {expected})")]
    DerivedFieldMismatch {
        name: &'static str,
        given: f64,
        expected: f64,
    },
    #[error("alternating-field model requires an even torus side, got {0}")]
    OddSideAlternating(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Anisotropic,
    NextNearest,
    Alternating,
}

/// Coupling/field parameters for one of the three models.
///
/// Derived quantities (`j` for the next-nearest model, `epsilon`/`mu` for the
/// alternating one) may be given in config files for provenance; they are
/// validated against the primaries to 1e-12 relative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    Anisotropic {
        j_h: f64,
        j_v: f64,
        h: f64,
    },
    NextNearest {
        j_tilde: f64,
        k_nnn: f64,
        h: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        j: Option<f64>,
    },
    Alternating {
        j: f64,
        h_odd: f64,
        h_even: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<f64>,
    },
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Anisotropic { .. } => ModelKind::Anisotropic,
            ModelParams::NextNearest { .. } => ModelKind::NextNearest,
            ModelParams::Alternating { .. } => ModelKind::Alternating,
        }
    }

    /// Full NN coupling `J = J~ + 2K` of the next-nearest model.
    pub fn nnn_coupling_j(&self) -> Option<f64> {
        match self {
            ModelParams::NextNearest { j_tilde, k_nnn, .. } => Some(j_tilde + 2.0 * k_nnn),
            _ => None,
        }
    }

    /// `epsilon = h_even - h_odd` of the alternating model.
    pub fn alternating_epsilon(&self) -> Option<f64> {
        match self {
            ModelParams::Alternating { h_odd, h_even, .. } => Some(h_even - h_odd),
            _ => None,
        }
    }

    /// `mu = 2J - h_odd` of the alternating model.
    pub fn alternating_mu(&self) -> Option<f64> {
        match self {
            ModelParams::Alternating { j, h_odd, .. } => Some(2.0 * j - h_odd),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        match *self {
            ModelParams::Anisotropic { j_h, j_v, h } => {
                if j_h <= 0.0 || j_v <= 0.0 || h <= 0.0 {
                    return Err(ModelError::NonPositiveParameter);
                }
            }
            ModelParams::NextNearest {
                j_tilde,
                k_nnn,
                h,
                j,
            } => {
                if j_tilde <= 0.0 || k_nnn <= 0.0 || h <= 0.0 {
                    return Err(ModelError::NonPositiveParameter);
                }
                let expected = j_tilde + 2.0 * k_nnn;
                if let Some(j) = j {
                    if !rel(j, expected) {
                        return Err(ModelError::DerivedFieldMismatch {
                            name: "j",
                            given: j,
                            expected,
                        });
                    }
                }
            }
            ModelParams::Alternating {
                j,
                h_odd,
                h_even,
                epsilon,
                mu,
            } => {
                if j <= 0.0 || h_odd <= 0.0 || h_even <= 0.0 {
                    return Err(ModelError::NonPositiveParameter);
                }
                if let Some(eps) = epsilon {
                    let expected = h_even - h_odd;
                    if !rel(eps, expected) {
                        return Err(ModelError::DerivedFieldMismatch {
                            name: "epsilon",
                            given: eps,
                            expected,
                        });
                    }
                }
                if let Some(mu) = mu {
                    let expected = 2.0 * j - h_odd;
                    if !rel(mu, expected) {
                        return Err(ModelError::DerivedFieldMismatch {
                            name: "mu",
                            given: mu,
                            expected,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Row parity must be consistent under vertical wrap.
    pub fn check_torus(&self, torus: &Torus) -> Result<(), ModelError> {
        if matches!(self, ModelParams::Alternating { .. }) && torus.side() % 2 != 0 {
            return Err(ModelError::OddSideAlternating(torus.side()));
        }
        Ok(())
    }
}

/// Compensated accumulator for the bond sums.
#[derive(Default)]
struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Exact bond-sum Hamiltonian including the constant offset.
///
/// Deterministic summation order (site index ascending, each unordered bond
/// visited once via its E/N(/NE/SE) representative).
pub fn energy(params: &ModelParams, config: &SpinConfiguration) -> Result<f64, ModelError> {
    let torus = config.torus();
    params.check_torus(torus)?;
    let mut acc = KahanSum::default();
    match *params {
        ModelParams::Anisotropic { j_h, j_v, h } => {
            for s in 0..torus.len() {
                let spin = config.spin(s) as f64;
                let nbr = torus.nn(s);
                acc.add(-0.5 * j_h * spin * config.spin(nbr[0] as usize) as f64);
                acc.add(-0.5 * j_v * spin * config.spin(nbr[2] as usize) as f64);
                acc.add(-0.5 * h * spin);
            }
        }
        ModelParams::NextNearest {
            j_tilde, k_nnn, h, ..
        } => {
            for s in 0..torus.len() {
                let spin = config.spin(s) as f64;
                let nbr = torus.nn(s);
                let diag = torus.nnn(s);
                acc.add(-0.5 * j_tilde * spin * config.spin(nbr[0] as usize) as f64);
                acc.add(-0.5 * j_tilde * spin * config.spin(nbr[2] as usize) as f64);
                acc.add(-0.5 * k_nnn * spin * config.spin(diag[0] as usize) as f64);
                acc.add(-0.5 * k_nnn * spin * config.spin(diag[2] as usize) as f64);
                acc.add(-0.5 * h * spin);
            }
        }
        ModelParams::Alternating { j, h_odd, h_even, .. } => {
            for s in 0..torus.len() {
                let spin = config.spin(s) as f64;
                let nbr = torus.nn(s);
                acc.add(-0.5 * j * spin * config.spin(nbr[0] as usize) as f64);
                acc.add(-0.5 * j * spin * config.spin(nbr[2] as usize) as f64);
                match torus.row_parity(s) {
                    RowParity::Odd => acc.add(0.5 * h_odd * spin),
                    RowParity::Even => acc.add(-0.5 * h_even * spin),
                }
            }
        }
    }
    Ok(acc.sum)
}

/// `H(config) - H(all minus)` from geometry counts alone.
pub fn relative_energy_from_counts(params: &ModelParams, g: &GeomCounts) -> f64 {
    match *params {
        ModelParams::Anisotropic { j_h, j_v, h } => {
            -h * g.area as f64
                + j_h * g.vertical_boundary as f64
                + j_v * g.horizontal_boundary as f64
        }
        ModelParams::NextNearest {
            j_tilde, k_nnn, h, ..
        } => {
            let j = j_tilde + 2.0 * k_nnn;
            -h * g.area as f64 + j * g.perimeter() as f64 - k_nnn * g.corners as f64
        }
        ModelParams::Alternating { j, h_odd, h_even, .. } => {
            h_odd * g.odd_area as f64 - h_even * g.even_area() as f64 + j * g.perimeter() as f64
        }
    }
}

/// `H(config) - H(all minus)` computed purely from the geometric form.
pub fn energy_geometric(
    params: &ModelParams,
    config: &SpinConfiguration,
) -> Result<f64, ModelError> {
    params.check_torus(config.torus())?;
    Ok(relative_energy_from_counts(params, &config.geometry()))
}

/// `H(config^x) - H(config)` from the O(1) local neighborhood of `x`.
pub fn delta_energy(params: &ModelParams, config: &SpinConfiguration, site: usize) -> f64 {
    let torus = config.torus();
    let s = config.spin(site) as f64;
    let nn_sum = || -> f64 {
        torus
            .nn(site)
            .iter()
            .map(|&n| config.spin(n as usize) as f64)
            .sum()
    };
    match *params {
        ModelParams::Anisotropic { j_h, j_v, h } => {
            let nbr = torus.nn(site);
            let horiz =
                (config.spin(nbr[0] as usize) + config.spin(nbr[1] as usize)) as f64;
            let vert = (config.spin(nbr[2] as usize) + config.spin(nbr[3] as usize)) as f64;
            s * (j_h * horiz + j_v * vert + h)
        }
        ModelParams::NextNearest {
            j_tilde, k_nnn, h, ..
        } => {
            let diag_sum: f64 = torus
                .nnn(site)
                .iter()
                .map(|&n| config.spin(n as usize) as f64)
                .sum();
            s * (j_tilde * nn_sum() + k_nnn * diag_sum + h)
        }
        ModelParams::Alternating { j, h_odd, h_even, .. } => {
            let field = match torus.row_parity(site) {
                RowParity::Odd => -h_odd,
                RowParity::Even => h_even,
            };
            s * (j * nn_sum() + field)
        }
    }
}

/// Metropolis rate `exp(-beta * max(0, dH))`; 1 for downhill or flat moves.
pub fn metropolis_rate(
    params: &ModelParams,
    beta: f64,
    config: &SpinConfiguration,
    site: usize,
) -> f64 {
    debug_assert!(beta >= 0.0);
    rate_from_delta(beta, delta_energy(params, config, site))
}

#[inline]
pub fn rate_from_delta(beta: f64, delta: f64) -> f64 {
    if delta <= 0.0 {
        1.0
    } else {
        (-beta * delta).exp()
    }
}

/// Smallest integer strictly greater than `x`.
///
/// This is the ceiling convention used for every critical length; the
/// non-degeneracy assumptions keep the arguments away from integers, but the
/// torus-size thresholds can hit them.
pub fn ceil_strict(x: f64) -> i64 {
    let f = x.floor();
    if x == f {
        f as i64 + 1
    } else {
        x.ceil() as i64
    }
}

fn distance_to_integer(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Guard width for the non-degeneracy clauses: values this close to an
/// integer are treated as degenerate.
pub const INTEGRALITY_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionClause {
    pub name: String,
    pub passed: bool,
    /// Evaluated numeric threshold, where the clause has one (the torus-size
    /// clauses report the required `|Lambda|` lower bound).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub model: ModelKind,
    pub clauses: Vec<AssumptionClause>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn failed_clauses(&self) -> Vec<&str> {
        self.clauses
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Evaluate every model assumption clause on the given torus.
pub fn validate_assumptions(params: &ModelParams, torus: &Torus) -> AssumptionReport {
    let volume = torus.len() as f64;
    let mut clauses = Vec::new();
    let mut push = |name: &str, passed: bool, threshold: Option<f64>| {
        clauses.push(AssumptionClause {
            name: name.to_string(),
            passed,
            threshold,
        });
    };
    match *params {
        ModelParams::Anisotropic { j_h, j_v, h } => {
            push("a: J_H > J_V", j_h > j_v, None);
            push("b: 2 J_V > h", 2.0 * j_v > h, None);
            push(
                "c: 2 J_V / h not an integer",
                distance_to_integer(2.0 * j_v / h) > INTEGRALITY_GUARD,
                Some(2.0 * j_v / h),
            );
            let lv = ceil_strict(2.0 * j_v / h) as f64;
            let t1 = 2.0 * j_h / (h * lv - 2.0 * j_v);
            let t2 = 2.0 * j_h * (lv - 1.0) / (2.0 * j_v - h * (lv - 1.0)) + lv;
            let bound = t1.max(t2).powi(2);
            push("d: |Lambda| above threshold", volume > bound, Some(bound));
        }
        ModelParams::NextNearest {
            j_tilde, k_nnn, h, ..
        } => {
            let j = j_tilde + 2.0 * k_nnn;
            push("a: 2 K > h", 2.0 * k_nnn > h, None);
            push("b: J~ >= 2 K + h", j_tilde >= 2.0 * k_nnn + h, None);
            push(
                "c: 2 J / h and 2 K / h not integers",
                distance_to_integer(2.0 * j / h) > INTEGRALITY_GUARD
                    && distance_to_integer(2.0 * k_nnn / h) > INTEGRALITY_GUARD,
                None,
            );
            let d_star = ceil_strict(2.0 * j / h) as f64;
            let bound =
                (2.0 * j * (d_star - 1.0) / (2.0 * j - h * (d_star - 1.0)) + d_star).powi(2);
            push("d: |Lambda| above threshold", volume > bound, Some(bound));
        }
        ModelParams::Alternating { j, h_odd, h_even, .. } => {
            let eps = h_even - h_odd;
            let mu = 2.0 * j - h_odd;
            push("a: h_even > h_odd", h_even > h_odd, None);
            push("b: J > h_even", j > h_even, None);
            push(
                "c: mu / epsilon not an integer",
                eps > 0.0 && distance_to_integer(mu / eps) > INTEGRALITY_GUARD,
                Some(if eps > 0.0 { mu / eps } else { f64::NAN }),
            );
            if eps > 0.0 {
                let lb = ceil_strict(mu / eps) as f64;
                let lh = 2.0 * lb - 1.0;
                let inner = (2.0 * j * (lh - 1.0) + h_odd) / (4.0 * j - eps * (lb - 1.0));
                let bound = (2.0 * ceil_strict(inner) as f64 + lh).powi(2);
                push("d: |Lambda| above threshold", volume > bound, Some(bound));
            } else {
                push("d: |Lambda| above threshold", false, None);
            }
        }
    }
    AssumptionReport {
        model: params.kind(),
        clauses,
    }
}
