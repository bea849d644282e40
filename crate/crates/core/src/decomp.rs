//! Mixed-monotone decomposition of a Lipschitz vector field.
//!
//! Given elementwise bounds `low <= ∂h_i/∂x_j <= high` on the Jacobian of a
//! field `h` over a box domain, the decomposition function
//!
//! ```text
//! h_d(x, y) = h(x) + C (x − y),    C = max(0, −low)  (elementwise)
//! ```
//!
//! agrees with `h` on the diagonal (`h_d(x, x) = h(x)`), is nondecreasing in
//! `x` and nonincreasing in `y` on the domain, and sandwiches the field on
//! any box `[lo, hi]` inside the domain:
//! `h_d(lo, hi) <= h(x) <= h_d(hi, lo)` for every `x` in the box.  Its
//! Lipschitz constant is bounded by `L_h + 2‖C‖` where `‖·‖` is the spectral
//! norm.

use crate::expr::Expr;
use crate::interval::IntervalVector;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecompError {
    #[error("Jacobian bound matrices must be {rows}x{cols}, got {got_rows}x{got_cols}")]
    BoundShape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("Jacobian lower bound exceeds upper bound at ({row}, {col}): {low} > {high}")]
    InvertedBound {
        row: usize,
        col: usize,
        low: f64,
        high: f64,
    },
    #[error("non-finite Jacobian bound at ({row}, {col})")]
    NonFiniteBound { row: usize, col: usize },
    #[error(
        "non-finite partial derivative of component {component} with respect to \
         variable {var} at grid point {point:?}"
    )]
    NonFiniteSample {
        component: usize,
        var: usize,
        point: Vec<f64>,
    },
    #[error("field component {component} references variable index {var}, but the domain has dimension {dim}")]
    VariableOutOfRange {
        component: usize,
        var: usize,
        dim: usize,
    },
    #[error("grid must have at least one point per axis")]
    EmptyGrid,
}

/// Elementwise interval bounds on a Jacobian: `low[i][j] <= ∂h_i/∂x_j <=
/// high[i][j]` over the domain of interest.
#[derive(Debug, Clone)]
pub struct JacobianBounds {
    low: DMatrix<f64>,
    high: DMatrix<f64>,
}

impl JacobianBounds {
    pub fn new(low: DMatrix<f64>, high: DMatrix<f64>) -> Result<Self, DecompError> {
        if low.shape() != high.shape() {
            return Err(DecompError::BoundShape {
                rows: low.nrows(),
                cols: low.ncols(),
                got_rows: high.nrows(),
                got_cols: high.ncols(),
            });
        }
        for row in 0..low.nrows() {
            for col in 0..low.ncols() {
                let (l, h) = (low[(row, col)], high[(row, col)]);
                if !l.is_finite() || !h.is_finite() {
                    return Err(DecompError::NonFiniteBound { row, col });
                }
                if l > h {
                    return Err(DecompError::InvertedBound {
                        row,
                        col,
                        low: l,
                        high: h,
                    });
                }
            }
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> &DMatrix<f64> {
        &self.low
    }

    pub fn high(&self) -> &DMatrix<f64> {
        &self.high
    }

    pub fn nrows(&self) -> usize {
        self.low.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.low.ncols()
    }

    /// Elementwise `max(|low|, |high|)`: an upper bound on the magnitude of
    /// each Jacobian entry.
    pub fn max_abs(&self) -> DMatrix<f64> {
        self.low.zip_map(&self.high, |l, h| l.abs().max(h.abs()))
    }
}

/// Number of grid points per axis that keeps the total sample count near
/// `10^4` regardless of dimension (101 per axis up to two dimensions, at
/// least 5 beyond that).
pub fn default_grid_points(dim: usize) -> usize {
    match dim {
        0..=2 => 101,
        n => {
            let per_axis = (1e4_f64).powf(1.0 / n as f64).ceil() as usize;
            per_axis.max(5)
        }
    }
}

/// Estimates Jacobian bounds for `field` over `domain` by sampling every
/// partial derivative on a uniform grid with `grid_points` points per axis
/// (endpoints included) and inflating each entry's observed range by 5 % of
/// its spread plus `1e-6` absolute on both sides.
///
/// Sampling cannot certify true extrema between grid points; the inflation
/// is a pragmatic margin, and callers with analytic bounds should supply
/// them directly via [`JacobianBounds::new`].
pub fn estimate_jacobian_bounds(
    field: &[Expr],
    domain: &IntervalVector,
    grid_points: usize,
) -> Result<JacobianBounds, DecompError> {
    if grid_points == 0 {
        return Err(DecompError::EmptyGrid);
    }
    let n = domain.dim();
    check_var_range(field, n)?;
    let rows = field.len();
    let mut low = DMatrix::from_element(rows, n, f64::INFINITY);
    let mut high = DMatrix::from_element(rows, n, f64::NEG_INFINITY);

    let mut index = vec![0usize; n];
    let mut point = vec![0.0f64; n];
    loop {
        for j in 0..n {
            let (a, b) = (domain.lo()[j], domain.hi()[j]);
            point[j] = if grid_points == 1 {
                0.5 * (a + b)
            } else {
                a + (b - a) * index[j] as f64 / (grid_points - 1) as f64
            };
        }
        for (i, h) in field.iter().enumerate() {
            for j in 0..n {
                let d = h.partial(&point, j);
                if !d.is_finite() {
                    return Err(DecompError::NonFiniteSample {
                        component: i,
                        var: j,
                        point: point.clone(),
                    });
                }
                if d < low[(i, j)] {
                    low[(i, j)] = d;
                }
                if d > high[(i, j)] {
                    high[(i, j)] = d;
                }
            }
        }
        // advance the multi-index; finish once it wraps around
        let mut axis = 0;
        loop {
            if axis == n {
                let pad = (&high - &low).map(|r| 0.05 * r + 1e-6);
                return JacobianBounds::new(&low - &pad, &high + &pad);
            }
            index[axis] += 1;
            if index[axis] < grid_points {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
    }
}

fn check_var_range(field: &[Expr], dim: usize) -> Result<(), DecompError> {
    for (component, h) in field.iter().enumerate() {
        if let Some(var) = h.max_var() {
            if var >= dim {
                return Err(DecompError::VariableOutOfRange {
                    component,
                    var,
                    dim,
                });
            }
        }
    }
    Ok(())
}

/// A mixed-monotone decomposition `h_d(x, y) = h(x) + C (x − y)` of a vector
/// field over a box domain.
#[derive(Debug, Clone)]
pub struct Decomposition {
    base: Vec<Expr>,
    correction: DMatrix<f64>,
    domain: IntervalVector,
}

impl Decomposition {
    pub fn base(&self) -> &[Expr] {
        &self.base
    }

    /// The correction gain `C = max(0, −low)`.
    pub fn correction(&self) -> &DMatrix<f64> {
        &self.correction
    }

    pub fn domain(&self) -> &IntervalVector {
        &self.domain
    }

    pub fn dim_in(&self) -> usize {
        self.domain.dim()
    }

    pub fn dim_out(&self) -> usize {
        self.base.len()
    }

    /// Evaluates the underlying field `h` itself.
    pub fn eval_base(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.base.len(),
            self.base.iter().map(|e| e.eval(x.as_slice())),
        )
    }

    /// Evaluates `h_d(x, y) = h(x) + C (x − y)`.  On the diagonal the
    /// correction term vanishes identically, so `eval(x, x)` reproduces
    /// `h(x)` exactly.
    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dim_in());
        debug_assert_eq!(y.len(), self.dim_in());
        self.eval_base(x) + &self.correction * (x - y)
    }
}

/// Builds the decomposition with correction gain `C = max(0, −low)` taken
/// from the Jacobian lower bounds.
pub fn build_decomposition(
    field: Vec<Expr>,
    bounds: &JacobianBounds,
    domain: IntervalVector,
) -> Result<Decomposition, DecompError> {
    check_var_range(&field, domain.dim())?;
    if bounds.nrows() != field.len() || bounds.ncols() != domain.dim() {
        return Err(DecompError::BoundShape {
            rows: field.len(),
            cols: domain.dim(),
            got_rows: bounds.nrows(),
            got_cols: bounds.ncols(),
        });
    }
    let correction = bounds.low().map(|l| if l < 0.0 { -l } else { 0.0 });
    Ok(Decomposition {
        base: field,
        correction,
        domain,
    })
}

/// Lipschitz constant of the field implied by its Jacobian bounds: the
/// spectral norm of the elementwise `max(|low|, |high|)` matrix.
pub fn lipschitz_from_bounds(bounds: &JacobianBounds) -> f64 {
    spectral_norm(&bounds.max_abs())
}

/// Lipschitz constant of the decomposition function in terms of the field's
/// own constant and the correction gain: `L_h + 2‖C‖`.
pub fn decomposition_lipschitz(field_lipschitz: f64, correction: &DMatrix<f64>) -> f64 {
    field_lipschitz + 2.0 * spectral_norm(correction)
}

/// Spectral norm (largest singular value) by power iteration on `MᵀM`.
///
/// The start vector is drawn from a fixed-seed generator so results are
/// reproducible and the iteration cannot stall on a deterministic start that
/// happens to be orthogonal to the dominant eigenvector.  Converges when the
/// eigenvalue estimate changes by at most `1e-12` (relative), capped at
/// 10 000 iterations.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let n = gram.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15);
    let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let norm = v.norm();
    if norm == 0.0 {
        // astronomically unlikely; fall back to a basis vector
        v = DVector::zeros(n);
        v[0] = 1.0;
    } else {
        v /= norm;
    }
    let mut lambda = 0.0f64;
    for _ in 0..10_000 {
        let w = &gram * &v;
        let next = w.norm();
        if next == 0.0 {
            return 0.0;
        }
        v = w / next;
        if (next - lambda).abs() <= 1e-12 * next.max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::dvector;

    fn parse_field(srcs: &[&str], vars: &[&str]) -> Vec<Expr> {
        srcs.iter().map(|s| Expr::parse(s, vars).unwrap()).collect()
    }

    fn box2(lo1: f64, hi1: f64, lo2: f64, hi2: f64) -> IntervalVector {
        IntervalVector::new(dvector![lo1, lo2], dvector![hi1, hi2]).unwrap()
    }

    #[test]
    fn linear_field_bounds_are_tight_constants() {
        let field = parse_field(&["2*x1 - 3*x2", "0.5*x2"], &["x1", "x2"]);
        let domain = box2(-1.0, 1.0, -1.0, 1.0);
        let jb = estimate_jacobian_bounds(&field, &domain, 11).unwrap();
        // constant partials: inflation is the 1e-6 absolute pad only
        assert_abs_diff_eq!(jb.low()[(0, 0)], 2.0, epsilon = 1e-5);
        assert_abs_diff_eq!(jb.high()[(0, 0)], 2.0, epsilon = 1e-5);
        assert_abs_diff_eq!(jb.low()[(0, 1)], -3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(jb.high()[(1, 0)], 0.0, epsilon = 1e-5);
        assert!(jb.low()[(0, 0)] <= 2.0 && 2.0 <= jb.high()[(0, 0)]);
    }

    #[test]
    fn estimated_bounds_cover_analytic_extremes() {
        // ∂/∂x1 [x2 + 0.25 sin(0.1 x1 x2)] = 0.025 x2 cos(0.1 x1 x2) has true
        // range [-0.375, 0.375] on this domain; the sampled range plus
        // inflation must cover it.
        let field = parse_field(&["x2 + 0.25*sin(0.1*x1*x2)"], &["x1", "x2"]);
        let domain = box2(-8.0, 8.0, -15.0, 15.0);
        let jb = estimate_jacobian_bounds(&field, &domain, 101).unwrap();
        assert!(jb.low()[(0, 0)] <= -0.375);
        assert!(jb.high()[(0, 0)] >= 0.375);
        // ∂/∂x2 = 1 + 0.025 x1 cos(0.1 x1 x2): true range [0.8, 1.2]
        assert!(jb.low()[(0, 1)] <= 0.8);
        assert!(jb.high()[(0, 1)] >= 1.2);
        // and the estimates stay near the truth (inflation is 5% + 1e-6)
        assert_relative_eq!(jb.low()[(0, 0)], -0.375, max_relative = 0.15);
        assert_relative_eq!(jb.high()[(0, 1)], 1.2, max_relative = 0.15);
    }

    #[test]
    fn estimated_bounds_cover_randomly_sampled_partials() {
        let field = parse_field(
            &["x2 + 0.25*sin(0.1*x1*x2)", "-0.2*x2 - 1.9*sin(0.01*x1)"],
            &["x1", "x2"],
        );
        let domain = box2(-8.0, 8.0, -15.0, 15.0);
        let jb = estimate_jacobian_bounds(&field, &domain, 101).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..2)
                .map(|j| rng.random_range(domain.lo()[j]..=domain.hi()[j]))
                .collect();
            for (i, h) in field.iter().enumerate() {
                for j in 0..2 {
                    let d = h.partial(&x, j);
                    assert!(
                        jb.low()[(i, j)] <= d && d <= jb.high()[(i, j)],
                        "partial ({i},{j}) = {d} escapes [{}, {}] at {x:?}",
                        jb.low()[(i, j)],
                        jb.high()[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn non_finite_partial_is_reported() {
        let field = parse_field(&["sqrt(x1)"], &["x1"]);
        let domain = IntervalVector::new(dvector![0.0], dvector![1.0]).unwrap();
        // derivative 1/(2 sqrt(x1)) blows up at the grid endpoint x1 = 0
        assert!(matches!(
            estimate_jacobian_bounds(&field, &domain, 11),
            Err(DecompError::NonFiniteSample { component: 0, var: 0, .. })
        ));
    }

    #[test]
    fn variable_out_of_domain_range_is_rejected() {
        let field = parse_field(&["x1 + x2"], &["x1", "x2"]);
        let domain = IntervalVector::new(dvector![0.0], dvector![1.0]).unwrap();
        assert!(matches!(
            estimate_jacobian_bounds(&field, &domain, 3),
            Err(DecompError::VariableOutOfRange { var: 1, dim: 1, .. })
        ));
    }

    #[test]
    fn correction_gain_clips_negative_lower_bounds() {
        let jb = JacobianBounds::new(
            DMatrix::from_row_slice(2, 2, &[-0.3, 0.1, 0.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.4, 1.0, -1.0]),
        )
        .unwrap();
        let field = parse_field(&["x1", "x2"], &["x1", "x2"]);
        let dec = build_decomposition(field, &jb, box2(-1.0, 1.0, -1.0, 1.0)).unwrap();
        assert_eq!(
            dec.correction(),
            &DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 2.0])
        );
    }

    #[test]
    fn diagonal_evaluation_reproduces_field() {
        let vars = &["x1", "x2"];
        let field = parse_field(&["x2 + 0.25*sin(0.1*x1*x2)", "-0.2*x2 - 1.9*sin(0.01*x1)"], vars);
        let domain = box2(-8.0, 8.0, -15.0, 15.0);
        let jb = estimate_jacobian_bounds(&field, &domain, 41).unwrap();
        let dec = build_decomposition(field.clone(), &jb, domain).unwrap();
        for x in [dvector![0.0, 0.0], dvector![1.5, -2.0], dvector![-7.0, 14.0]] {
            let diag = dec.eval(&x, &x);
            let direct = dec.eval_base(&x);
            assert_abs_diff_eq!(diag, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn sandwich_bounds_hold_on_sample_boxes() {
        let vars = &["x1", "x2"];
        let field = parse_field(&["x2 + 0.25*sin(0.1*x1*x2)", "-0.2*x2 - 1.9*sin(0.01*x1)"], vars);
        let domain = box2(-8.0, 8.0, -15.0, 15.0);
        let jb = estimate_jacobian_bounds(&field, &domain, 101).unwrap();
        let dec = build_decomposition(field, &jb, domain).unwrap();
        let boxes = [box2(-1.0, 2.0, -3.0, 0.5), box2(-8.0, 8.0, -15.0, 15.0)];
        for b in boxes {
            let upper = dec.eval(b.hi(), b.lo());
            let lower = dec.eval(b.lo(), b.hi());
            for t in 0..=10 {
                let x = b.lo() + (b.hi() - b.lo()) * (t as f64 / 10.0);
                let v = dec.eval_base(&x);
                for i in 0..v.len() {
                    assert!(lower[i] <= v[i] + 1e-12, "lower sandwich broke at {x:?}");
                    assert!(v[i] <= upper[i] + 1e-12, "upper sandwich broke at {x:?}");
                }
            }
        }
    }

    #[test]
    fn decomposition_lipschitz_adds_twice_the_gain_norm() {
        let c = DMatrix::from_row_slice(2, 2, &[0.251, 0.0, 0.0029, 0.201]);
        let l = decomposition_lipschitz(0.35, &c);
        // spectral norm of c is ~0.25102
        assert_relative_eq!(l, 0.35 + 2.0 * spectral_norm(&c), epsilon = 1e-15);
        assert_abs_diff_eq!(l, 0.852, epsilon = 1e-3);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let cases = [
            DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]),
            DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, -1.0]),
            DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), // rank 1
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), // repeated σ
        ];
        for m in cases {
            let svd_norm = m.clone().svd(false, false).singular_values[0];
            assert_relative_eq!(spectral_norm(&m), svd_norm, epsilon = 1e-9);
        }
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 2)), 0.0);
        assert_eq!(spectral_norm(&DMatrix::zeros(0, 0)), 0.0);
    }
}
