//! The plant model and the recursive simultaneous input and state interval
//! observer.
//!
//! The plant is
//!
//! ```text
//! x[k+1] = f(x[k]) + B u[k] + G d[k] + w[k]
//! y[k]   = g(x[k]) + D u[k] + H d[k] + v[k]
//! ```
//!
//! with known input `u`, unknown input `d` (no bounds or dynamics assumed),
//! and noise `w`, `v` confined to known boxes.  `H` must have full column
//! rank.  The observer alternates three moves:
//!
//! 1. **propagate** the state box through the mixed-monotone decomposition
//!    of `f` plus the interval image of `G d` and the process-noise box;
//! 2. **bound the output residual** `H d = y − g(x) − D u − v` from the
//!    current state box;
//! 3. **estimate the unknown input** two ways — through the pseudo-inverse
//!    of `H` and through per-coordinate linear programs over the residual
//!    polytope — and keep the tighter bound per coordinate.
//!
//! Alongside the boxes it tracks the closed-form width bounds `δx[k]`,
//! `δd[k]`; the boxes are guaranteed to contain the truth and to be no
//! wider than these bounds whenever the model assumptions hold.

use crate::decomp::{
    self, build_decomposition, decomposition_lipschitz, estimate_jacobian_bounds,
    lipschitz_from_bounds, spectral_norm, Decomposition, DecompError, JacobianBounds,
};
use crate::expr::Expr;
use crate::interval::{
    split_image_bounds, split_pos, IntervalError, IntervalVector, MatrixSplit,
};
use crate::lp::{residual_box_hull, HullError};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative/absolute tolerance used to validate that the pseudo-inverse `J`
/// satisfies `J H = I`.
const PSEUDO_INVERSE_TOL: f64 = 1e-8;
/// Bound inversions up to this size are collapsed to a midpoint; anything
/// larger means the model contradicts the data and is a hard error.
const FUSION_SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what} must have {expected} components, got {got}")]
    ComponentCount {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("matrix {name} must be {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    MatrixShape {
        name: &'static str,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("matrix {name} contains a non-finite entry")]
    NonFiniteMatrix { name: &'static str },
    #[error("output map of the unknown input must have full column rank: rank {rank} < {cols}")]
    RankDeficient { rank: usize, cols: usize },
    #[error("pseudo-inverse computation failed: {0}")]
    PseudoInverse(String),
    #[error("pseudo-inverse check failed: max |J H - I| = {deviation}")]
    PseudoInverseCheck { deviation: f64 },
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Interval(#[from] IntervalError),
}

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("{what} must have dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("initial state box leaves the model domain at coordinate {coord}")]
    InitialSetOutsideDomain { coord: usize },
    #[error("propagated state box left the model domain entirely at coordinate {coord}")]
    StateEscapedDomain { coord: usize },
    #[error(
        "fused input bounds are inverted at coordinate {coord} ({lo} > {hi}); \
         the model is inconsistent with the measurements"
    )]
    InconsistentInputBounds { coord: usize, lo: f64, hi: f64 },
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error(transparent)]
    Hull(#[from] HullError),
}

/// Everything needed to build a [`SystemModel`].  Jacobian bounds may be
/// supplied analytically; otherwise they are estimated by grid sampling
/// over the domain (see [`estimate_jacobian_bounds`]).
pub struct ModelParts {
    /// State transition nonlinearity, one expression per state coordinate.
    pub f: Vec<Expr>,
    /// Output nonlinearity, one expression per output coordinate.
    pub g: Vec<Expr>,
    /// Known-input-to-state matrix (n × m).
    pub b: DMatrix<f64>,
    /// Known-input feedthrough (l × m).
    pub d: DMatrix<f64>,
    /// Unknown-input-to-state matrix (n × p).
    pub g_unknown: DMatrix<f64>,
    /// Unknown-input-to-output matrix (l × p), full column rank.
    pub h_unknown: DMatrix<f64>,
    /// Process-noise box (dimension n).
    pub w: IntervalVector,
    /// Measurement-noise box (dimension l).
    pub v: IntervalVector,
    /// Operating domain of the state (dimension n).
    pub domain: IntervalVector,
    /// Optional analytic Jacobian bounds for `f` and `g`.
    pub jacobian_bounds: Option<(JacobianBounds, JacobianBounds)>,
    /// Grid resolution for estimated Jacobian bounds (points per axis);
    /// defaults to [`decomp::default_grid_points`].
    pub grid_points: Option<usize>,
}

/// A validated plant description together with every derived constant the
/// observer needs: decompositions of `f` and `g`, the pseudo-inverse
/// `J = H⁺`, positive/negative splits, the noise-to-width gain
/// `K = |G||J|`, Lipschitz constants, and the width contraction factor.
#[derive(Debug)]
pub struct SystemModel {
    n: usize,
    m: usize,
    l: usize,
    p: usize,
    f_dec: Decomposition,
    g_dec: Decomposition,
    b: DMatrix<f64>,
    d: DMatrix<f64>,
    g_unknown: DMatrix<f64>,
    h_unknown: DMatrix<f64>,
    w: IntervalVector,
    v: IntervalVector,
    domain: IntervalVector,
    j: DMatrix<f64>,
    g_split: MatrixSplit,
    j_split: MatrixSplit,
    k_gain: DMatrix<f64>,
    k_norm: f64,
    lipschitz_f: f64,
    lipschitz_g: f64,
    lipschitz_f_dec: f64,
    lipschitz_g_dec: f64,
    contraction: f64,
    j_abs_norm: f64,
    input_noise_term: f64,
    delta_z: DVector<f64>,
    delta_z_norm: f64,
}

impl SystemModel {
    pub fn new(parts: ModelParts) -> Result<Self, ModelError> {
        let n = parts.domain.dim();
        let l = parts.g.len();
        let m = parts.b.ncols();
        let p = parts.h_unknown.ncols();

        if parts.f.len() != n {
            return Err(ModelError::ComponentCount {
                what: "state transition field",
                expected: n,
                got: parts.f.len(),
            });
        }
        if l == 0 {
            return Err(ModelError::ComponentCount {
                what: "output field",
                expected: 1,
                got: 0,
            });
        }
        check_shape("b", &parts.b, n, m)?;
        check_shape("d", &parts.d, l, m)?;
        check_shape("g_unknown", &parts.g_unknown, n, p)?;
        check_shape("h_unknown", &parts.h_unknown, l, p)?;
        if parts.w.dim() != n {
            return Err(ModelError::ComponentCount {
                what: "process-noise box",
                expected: n,
                got: parts.w.dim(),
            });
        }
        if parts.v.dim() != l {
            return Err(ModelError::ComponentCount {
                what: "measurement-noise box",
                expected: l,
                got: parts.v.dim(),
            });
        }

        let grid = parts.grid_points.unwrap_or_else(|| decomp::default_grid_points(n));
        let (f_bounds, g_bounds) = match parts.jacobian_bounds {
            Some(pair) => pair,
            None => (
                estimate_jacobian_bounds(&parts.f, &parts.domain, grid)?,
                estimate_jacobian_bounds(&parts.g, &parts.domain, grid)?,
            ),
        };
        if f_bounds.nrows() != n || f_bounds.ncols() != n {
            return Err(ModelError::MatrixShape {
                name: "f Jacobian bounds",
                expected_rows: n,
                expected_cols: n,
                rows: f_bounds.nrows(),
                cols: f_bounds.ncols(),
            });
        }
        if g_bounds.nrows() != l || g_bounds.ncols() != n {
            return Err(ModelError::MatrixShape {
                name: "g Jacobian bounds",
                expected_rows: l,
                expected_cols: n,
                rows: g_bounds.nrows(),
                cols: g_bounds.ncols(),
            });
        }

        let lipschitz_f = lipschitz_from_bounds(&f_bounds);
        let lipschitz_g = lipschitz_from_bounds(&g_bounds);
        let f_dec = build_decomposition(parts.f, &f_bounds, parts.domain.clone())?;
        let g_dec = build_decomposition(parts.g, &g_bounds, parts.domain.clone())?;
        let lipschitz_f_dec = decomposition_lipschitz(lipschitz_f, f_dec.correction());
        let lipschitz_g_dec = decomposition_lipschitz(lipschitz_g, g_dec.correction());

        let j = if p == 0 {
            DMatrix::<f64>::zeros(0, l)
        } else {
            let rank = parts.h_unknown.clone().rank(1e-8);
            if rank < p {
                return Err(ModelError::RankDeficient { rank, cols: p });
            }
            let j = parts
                .h_unknown
                .clone()
                .pseudo_inverse(1e-12)
                .map_err(|e| ModelError::PseudoInverse(e.to_string()))?;
            let deviation = (&j * &parts.h_unknown - DMatrix::<f64>::identity(p, p))
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            if deviation > PSEUDO_INVERSE_TOL {
                return Err(ModelError::PseudoInverseCheck { deviation });
            }
            j
        };

        let g_split = split_pos(&parts.g_unknown)?;
        let j_split = split_pos(&j)?;
        let k_gain = g_split.abs() * j_split.abs();
        let k_norm = spectral_norm(&k_gain);
        let contraction = lipschitz_f_dec + lipschitz_g_dec * k_norm;
        let j_abs = j_split.abs();
        let j_abs_norm = spectral_norm(&j_abs);
        let input_noise_term = (&j_abs * parts.v.widths()).norm();
        let delta_z = parts.w.widths() + &k_gain * parts.v.widths();
        let delta_z_norm = delta_z.norm();

        Ok(SystemModel {
            n,
            m,
            l,
            p,
            f_dec,
            g_dec,
            b: parts.b,
            d: parts.d,
            g_unknown: parts.g_unknown,
            h_unknown: parts.h_unknown,
            w: parts.w,
            v: parts.v,
            domain: parts.domain,
            j,
            g_split,
            j_split,
            k_gain,
            k_norm,
            lipschitz_f,
            lipschitz_g,
            lipschitz_f_dec,
            lipschitz_g_dec,
            contraction,
            j_abs_norm,
            input_noise_term,
            delta_z,
            delta_z_norm,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn f_dec(&self) -> &Decomposition {
        &self.f_dec
    }

    pub fn g_dec(&self) -> &Decomposition {
        &self.g_dec
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn g_unknown(&self) -> &DMatrix<f64> {
        &self.g_unknown
    }

    pub fn h_unknown(&self) -> &DMatrix<f64> {
        &self.h_unknown
    }

    pub fn w(&self) -> &IntervalVector {
        &self.w
    }

    pub fn v(&self) -> &IntervalVector {
        &self.v
    }

    pub fn domain(&self) -> &IntervalVector {
        &self.domain
    }

    /// Pseudo-inverse `J = H⁺` (a `p × l` matrix; `J H = I`).
    pub fn j(&self) -> &DMatrix<f64> {
        &self.j
    }

    pub fn g_split(&self) -> &MatrixSplit {
        &self.g_split
    }

    pub fn j_split(&self) -> &MatrixSplit {
        &self.j_split
    }

    /// Noise-to-width gain `K = |G| |J|`.
    pub fn k_gain(&self) -> &DMatrix<f64> {
        &self.k_gain
    }

    pub fn k_norm(&self) -> f64 {
        self.k_norm
    }

    pub fn lipschitz_f(&self) -> f64 {
        self.lipschitz_f
    }

    pub fn lipschitz_g(&self) -> f64 {
        self.lipschitz_g
    }

    pub fn lipschitz_f_dec(&self) -> f64 {
        self.lipschitz_f_dec
    }

    pub fn lipschitz_g_dec(&self) -> f64 {
        self.lipschitz_g_dec
    }

    /// Per-step growth factor of the state width bound:
    /// `L_fd + L_gd · ‖K‖`.  The observer widths stay bounded iff this is
    /// below one.
    pub fn contraction_factor(&self) -> f64 {
        self.contraction
    }

    /// Spectral norm of `|J|`.
    pub fn j_abs_norm(&self) -> f64 {
        self.j_abs_norm
    }

    /// `‖ |J| Δv ‖`: the measurement-noise floor of the input width bound.
    pub fn input_noise_term(&self) -> f64 {
        self.input_noise_term
    }

    /// Combined per-step noise width `Δz = Δw + K Δv` (elementwise).
    pub fn delta_z(&self) -> &DVector<f64> {
        &self.delta_z
    }

    pub fn delta_z_norm(&self) -> f64 {
        self.delta_z_norm
    }
}

fn check_shape(
    name: &'static str,
    mat: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), ModelError> {
    if mat.nrows() != rows || mat.ncols() != cols {
        return Err(ModelError::MatrixShape {
            name,
            expected_rows: rows,
            expected_cols: cols,
            rows: mat.nrows(),
            cols: mat.ncols(),
        });
    }
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteMatrix { name });
    }
    Ok(())
}

/// Which estimator produced a fused input bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSource {
    /// The pseudo-inverse image of the residual box.
    PseudoInverse,
    /// A linear program over the residual polytope (strictly tighter).
    Polytope,
}

/// Bookkeeping for one input-estimation round: the per-coordinate winner on
/// each side, and whether the residual polytope was feasible at all (if not,
/// the pseudo-inverse bounds were used unchanged).
#[derive(Debug, Clone)]
pub struct InputFusion {
    pub lower: Vec<BoundSource>,
    pub upper: Vec<BoundSource>,
    pub polytope_feasible: bool,
}

/// Observer state after `k` measurement updates: the state and input boxes,
/// their width bounds, and how the input bounds were obtained.
#[derive(Debug, Clone)]
pub struct ObserverState {
    pub k: usize,
    /// State enclosure (contains the true state).
    pub x: IntervalVector,
    /// Unknown-input enclosure (contains the true unknown input).
    pub d: IntervalVector,
    /// Closed-form bound on `width(x)`.
    pub delta_x: f64,
    /// Closed-form bound on `width(d)`.
    pub delta_d: f64,
    /// `width(x)` at `k = 0`, retained for the closed-form `delta_x` update.
    pub delta_x0: f64,
    pub fusion: InputFusion,
}

/// Starts the observer from the initial state box and the first measurement.
///
/// `x0` must lie inside the model domain.  The input box for step zero is
/// estimated from the initial residual; `delta_x`/`delta_d` start at the
/// actual widths of the two boxes.
pub fn init(
    model: &SystemModel,
    x0: &IntervalVector,
    y0: &DVector<f64>,
    u0: &DVector<f64>,
) -> Result<ObserverState, ObserverError> {
    check_dim("initial state box", x0.dim(), model.n)?;
    check_dim("measurement", y0.len(), model.l)?;
    check_dim("known input", u0.len(), model.m)?;
    for i in 0..model.n {
        if x0.lo()[i] < model.domain.lo()[i] || x0.hi()[i] > model.domain.hi()[i] {
            return Err(ObserverError::InitialSetOutsideDomain { coord: i });
        }
    }
    let r = residual_bounds(model, x0, y0, u0)?;
    let (d, fusion) = input_estimate(model, &r)?;
    Ok(ObserverState {
        k: 0,
        delta_x: x0.width(),
        delta_d: d.width(),
        delta_x0: x0.width(),
        x: x0.clone(),
        d,
        fusion,
    })
}

/// Advances the observer one step: propagates through the dynamics driven
/// by `u_prev` (the known input at step `k`), then corrects with the
/// measurement `y` and known input `u` at step `k + 1`.
pub fn step(
    model: &SystemModel,
    state: &ObserverState,
    u_prev: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<ObserverState, ObserverError> {
    check_dim("known input", u_prev.len(), model.m)?;
    check_dim("known input", u.len(), model.m)?;
    check_dim("measurement", y.len(), model.l)?;
    let x = state_propagate(model, state, u_prev)?;
    let k = state.k + 1;
    let delta_x = width_bound_at(model, state.delta_x0, k);
    let r = residual_bounds(model, &x, y, u)?;
    let (d, fusion) = input_estimate(model, &r)?;
    let delta_d = model.j_abs_norm * model.lipschitz_g_dec * delta_x + model.input_noise_term;
    Ok(ObserverState {
        k,
        x,
        d,
        delta_x,
        delta_d,
        delta_x0: state.delta_x0,
        fusion,
    })
}

/// Closed-form width bound after `k` steps from an initial width `delta0`:
/// a geometric sum driven by the contraction factor, degenerating to
/// `delta0 + k‖Δz‖` when the factor is within `1e-12` of one.
fn width_bound_at(model: &SystemModel, delta0: f64, k: usize) -> f64 {
    let rho = model.contraction;
    if (rho - 1.0).abs() < 1e-12 {
        return delta0 + k as f64 * model.delta_z_norm;
    }
    let rho_k = rho.powi(k as i32);
    rho_k * delta0 + model.delta_z_norm * (1.0 - rho_k) / (1.0 - rho)
}

/// Propagates the state box one step through the decomposition of `f`, the
/// known input, the interval image of `G d`, and the process-noise box,
/// then clips the result to the model domain.  A box that leaves the domain
/// entirely is an error (the plant has violated the operating assumptions).
pub fn state_propagate(
    model: &SystemModel,
    state: &ObserverState,
    u_prev: &DVector<f64>,
) -> Result<IntervalVector, ObserverError> {
    let f_hi = model.f_dec.eval(state.x.hi(), state.x.lo());
    let f_lo = model.f_dec.eval(state.x.lo(), state.x.hi());
    let bu = &model.b * u_prev;
    let gd = split_image_bounds(&model.g_split, &state.d)?;
    let hi = f_hi + &bu + gd.hi() + model.w.hi();
    let lo = f_lo + &bu + gd.lo() + model.w.lo();
    let predicted = IntervalVector::new_snapped(lo, hi, FUSION_SNAP_TOL)?;
    predicted.intersect(&model.domain).map_err(|e| match e {
        IntervalError::EmptyIntersection { coord, .. } => {
            ObserverError::StateEscapedDomain { coord }
        }
        other => ObserverError::Interval(other),
    })
}

/// Interval bounds on the residual `H d = y − g(x) − D u − v` given a state
/// box: the decomposition of `g` bounds `g(x)` from both sides and the
/// measurement-noise box absorbs `v`.
pub fn residual_bounds(
    model: &SystemModel,
    x: &IntervalVector,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<IntervalVector, ObserverError> {
    let g_hi = model.g_dec.eval(x.hi(), x.lo());
    let g_lo = model.g_dec.eval(x.lo(), x.hi());
    let du = &model.d * u;
    let hi = y - g_lo - &du - model.v.lo();
    let lo = y - g_hi - &du - model.v.hi();
    Ok(IntervalVector::new_snapped(lo, hi, FUSION_SNAP_TOL)?)
}

/// Estimates the unknown-input box from a residual box by fusing the
/// pseudo-inverse image with per-coordinate polytope extrema, keeping the
/// tighter bound on each side.  The polytope bound is a subset of the
/// pseudo-inverse bound whenever it is feasible; if the polytope is empty
/// (possible only through accumulated rounding), the pseudo-inverse bound
/// is used alone and flagged.
pub fn input_estimate(
    model: &SystemModel,
    r: &IntervalVector,
) -> Result<(IntervalVector, InputFusion), ObserverError> {
    check_dim("residual box", r.dim(), model.l)?;
    let d1 = split_image_bounds(&model.j_split, r)?;
    if model.p == 0 {
        return Ok((
            d1,
            InputFusion {
                lower: Vec::new(),
                upper: Vec::new(),
                polytope_feasible: true,
            },
        ));
    }
    let d2 = match residual_box_hull(&model.h_unknown, r) {
        Ok(hull) => hull,
        Err(HullError::EmptyPolytope) => {
            return Ok((
                d1,
                InputFusion {
                    lower: vec![BoundSource::PseudoInverse; model.p],
                    upper: vec![BoundSource::PseudoInverse; model.p],
                    polytope_feasible: false,
                },
            ));
        }
        Err(other) => return Err(ObserverError::Hull(other)),
    };

    let mut lo = DVector::<f64>::zeros(model.p);
    let mut hi = DVector::<f64>::zeros(model.p);
    let mut lower = Vec::with_capacity(model.p);
    let mut upper = Vec::with_capacity(model.p);
    for i in 0..model.p {
        if d2.lo()[i] > d1.lo()[i] {
            lo[i] = d2.lo()[i];
            lower.push(BoundSource::Polytope);
        } else {
            lo[i] = d1.lo()[i];
            lower.push(BoundSource::PseudoInverse);
        }
        if d2.hi()[i] < d1.hi()[i] {
            hi[i] = d2.hi()[i];
            upper.push(BoundSource::Polytope);
        } else {
            hi[i] = d1.hi()[i];
            upper.push(BoundSource::PseudoInverse);
        }
        if lo[i] > hi[i] {
            if lo[i] - hi[i] <= FUSION_SNAP_TOL {
                let mid = 0.5 * (lo[i] + hi[i]);
                lo[i] = mid;
                hi[i] = mid;
            } else {
                return Err(ObserverError::InconsistentInputBounds {
                    coord: i,
                    lo: lo[i],
                    hi: hi[i],
                });
            }
        }
    }
    let fused = IntervalVector::new(lo, hi)?;
    Ok((
        fused,
        InputFusion {
            lower,
            upper,
            polytope_feasible: true,
        },
    ))
}

fn check_dim(what: &'static str, got: usize, expected: usize) -> Result<(), ObserverError> {
    if got != expected {
        return Err(ObserverError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
