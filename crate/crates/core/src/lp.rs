//! Dense linear programming over free variables, and the polytope box hull
//! the observer uses to tighten unknown-input estimates.
//!
//! The solver is a classical two-phase tableau simplex specialised to the
//! form `max/min cᵀx  s.t.  A x <= b` with `x` free.  Free variables are
//! split as `x = x⁺ − x⁻`; rows with negative right-hand sides receive
//! surplus and artificial variables and feasibility is established in a
//! phase-one run.  Bland's rule (lowest eligible index enters, lowest-index
//! basic variable leaves on ratio ties) guarantees termination without
//! cycling.  Problems here are tiny — a handful of rows and columns — so a
//! dense tableau is the simplest reliable choice.

use crate::interval::IntervalVector;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Pivot eligibility threshold: entries this close to zero are treated as
/// zero during pivoting and pricing.
const PIVOT_TOL: f64 = 1e-9;
/// Phase-one objective threshold below which the problem counts as feasible.
const FEAS_TOL: f64 = 1e-8;
/// Right-hand-side inflation applied once before declaring a polytope empty.
const RETRY_INFLATION: f64 = 1e-7;
/// Hard cap on simplex iterations per phase (a defensive backstop; Bland's
/// rule already rules out cycling).
const MAX_ITERS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

/// `max/min objectiveᵀ x  s.t.  constraints · x <= rhs`, `x` free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub sense: Sense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solver outcome; `optimum` and `argopt` are present exactly when the
/// status is [`LpStatus::Optimal`].
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub optimum: Option<f64>,
    pub argopt: Option<DVector<f64>>,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("objective has {objective} entries but constraints have {columns} columns")]
    ObjectiveMismatch { objective: usize, columns: usize },
    #[error("rhs has {rhs} entries but constraints have {rows} rows")]
    RhsMismatch { rhs: usize, rows: usize },
    #[error("non-finite coefficient in the linear program")]
    NonFinite,
    #[error("internal solver failure: {0}")]
    Internal(String),
}

#[derive(Debug, Error)]
pub enum HullError {
    #[error("the constraint polytope is empty (even after rhs relaxation)")]
    EmptyPolytope,
    #[error("matrix has {rows} rows but the interval has dimension {dim}")]
    ShapeMismatch { rows: usize, dim: usize },
    #[error("hull solve failed: {0}")]
    Solver(#[from] LpError),
    #[error("polytope is unbounded along coordinate {coord}; constraint matrix lacks full column rank")]
    Unbounded { coord: usize },
    #[error("hull bounds inverted at coordinate {coord} beyond tolerance")]
    InvertedHull { coord: usize },
}

/// Solves the program.  The returned solution is self-checked: the argmax
/// satisfies every constraint and reproduces the reported optimum to within
/// `1e-6` (absolute plus relative), else an internal error is raised.
pub fn lp_solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let nv = lp.objective.len();
    let nc = lp.constraints.nrows();
    if lp.constraints.ncols() != nv {
        return Err(LpError::ObjectiveMismatch {
            objective: nv,
            columns: lp.constraints.ncols(),
        });
    }
    if lp.rhs.len() != nc {
        return Err(LpError::RhsMismatch {
            rhs: lp.rhs.len(),
            rows: nc,
        });
    }
    if lp.objective.iter().any(|v| !v.is_finite())
        || lp.rhs.iter().any(|v| !v.is_finite())
        || lp.constraints.iter().any(|v| !v.is_finite())
    {
        return Err(LpError::NonFinite);
    }

    // work in maximization form internally
    let sign = match lp.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };

    // columns: [x⁺ (nv) | x⁻ (nv) | slack/surplus (nc) | artificials]
    let mut artificial_rows: Vec<usize> = Vec::new();
    for i in 0..nc {
        if lp.rhs[i] < 0.0 {
            artificial_rows.push(i);
        }
    }
    let n_struct = 2 * nv;
    let n_cols = n_struct + nc + artificial_rows.len();
    let rhs_col = n_cols;

    let mut m = DMatrix::<f64>::zeros(nc + 1, n_cols + 1);
    let mut basis = vec![0usize; nc];
    let mut next_art = n_struct + nc;
    for i in 0..nc {
        let flip = if lp.rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..nv {
            m[(i, j)] = flip * lp.constraints[(i, j)];
            m[(i, nv + j)] = -flip * lp.constraints[(i, j)];
        }
        m[(i, n_struct + i)] = flip; // slack (+1) or surplus (−1)
        m[(i, rhs_col)] = flip * lp.rhs[i];
        if flip < 0.0 {
            m[(i, next_art)] = 1.0;
            basis[i] = next_art;
            next_art += 1;
        } else {
            basis[i] = n_struct + i;
        }
    }

    let mut banned = vec![false; n_cols];

    // phase one: maximize −Σ artificials, starting from the artificial basis
    if !artificial_rows.is_empty() {
        let obj = nc; // objective row index
        for j in 0..=n_cols {
            let mut s = 0.0;
            for &i in &artificial_rows {
                s += m[(i, j)];
            }
            m[(obj, j)] = -s;
        }
        for i in 0..artificial_rows.len() {
            let col = n_struct + nc + i;
            m[(obj, col)] += 1.0;
        }
        match simplex_iterate(&mut m, &mut basis, &banned)? {
            IterEnd::Optimal => {}
            IterEnd::Unbounded => {
                return Err(LpError::Internal(
                    "phase-one objective is bounded by construction".into(),
                ));
            }
        }
        let infeasibility = -m[(nc, rhs_col)];
        if infeasibility > FEAS_TOL {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                optimum: None,
                argopt: None,
            });
        }
        for slot in &mut banned[n_struct + nc..] {
            *slot = true;
        }
        drive_out_artificials(&mut m, &mut basis, &banned);
    }

    // phase two: restore the real objective and canonicalize over the basis
    let nc = basis.len(); // rows may have been dropped as redundant
    let obj = nc;
    for j in 0..=n_cols {
        m[(obj, j)] = 0.0;
    }
    for j in 0..nv {
        m[(obj, j)] = -sign * lp.objective[j];
        m[(obj, nv + j)] = sign * lp.objective[j];
    }
    for i in 0..nc {
        let bj = basis[i];
        let factor = m[(obj, bj)];
        if factor != 0.0 {
            for j in 0..=n_cols {
                let v = m[(i, j)];
                m[(obj, j)] -= factor * v;
            }
        }
    }
    let unbounded = match simplex_iterate(&mut m, &mut basis, &banned)? {
        IterEnd::Optimal => false,
        IterEnd::Unbounded => true,
    };
    if unbounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            optimum: None,
            argopt: None,
        });
    }

    let mut z = DVector::<f64>::zeros(n_cols);
    for (i, &bj) in basis.iter().enumerate() {
        z[bj] = m[(i, rhs_col)];
    }
    let x = DVector::from_fn(nv, |j, _| z[j] - z[nv + j]);
    let optimum = sign * m[(obj, rhs_col)];

    // self-check the certificate before handing it out
    for i in 0..lp.constraints.nrows() {
        let lhs = lp.constraints.row(i).transpose().dot(&x);
        let b = lp.rhs[i];
        if lhs > b + 1e-6 * (1.0 + b.abs()) {
            return Err(LpError::Internal(format!(
                "optimal point violates constraint {i}: {lhs} > {b}"
            )));
        }
    }
    let recomputed = lp.objective.dot(&x);
    if (recomputed - optimum).abs() > 1e-6 * (1.0 + optimum.abs()) {
        return Err(LpError::Internal(format!(
            "objective mismatch: tableau {optimum} vs point {recomputed}"
        )));
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        optimum: Some(optimum),
        argopt: Some(x),
    })
}

enum IterEnd {
    Optimal,
    Unbounded,
}

/// Runs primal simplex iterations with Bland's rule until optimality or an
/// unbounded ray is found.  The objective row is the last row of `m` and
/// holds reduced costs for maximization (optimal when all are `>= -tol`).
fn simplex_iterate(
    m: &mut DMatrix<f64>,
    basis: &mut [usize],
    banned: &[bool],
) -> Result<IterEnd, LpError> {
    let nc = basis.len();
    let obj = nc;
    let rhs_col = m.ncols() - 1;
    for _ in 0..MAX_ITERS {
        // entering: lowest-index column with negative reduced cost
        let mut entering = None;
        for j in 0..rhs_col {
            if !banned[j] && m[(obj, j)] < -PIVOT_TOL {
                entering = Some(j);
                break;
            }
        }
        let Some(col) = entering else {
            return Ok(IterEnd::Optimal);
        };
        // leaving: minimum ratio, ties broken by lowest basic variable index
        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..nc {
            let a = m[(i, col)];
            if a > PIVOT_TOL {
                let ratio = m[(i, rhs_col)] / a;
                leaving = match leaving {
                    None => Some((i, ratio)),
                    Some((best_i, best_r)) => {
                        if ratio < best_r - PIVOT_TOL
                            || ((ratio - best_r).abs() <= PIVOT_TOL
                                && basis[i] < basis[best_i])
                        {
                            Some((i, ratio))
                        } else {
                            Some((best_i, best_r))
                        }
                    }
                };
            }
        }
        let Some((row, _)) = leaving else {
            return Ok(IterEnd::Unbounded);
        };
        pivot(m, basis, row, col);
    }
    Err(LpError::Internal("simplex iteration limit exceeded".into()))
}

fn pivot(m: &mut DMatrix<f64>, basis: &mut [usize], row: usize, col: usize) {
    let cols = m.ncols();
    let rows = m.nrows();
    let p = m[(row, col)];
    for j in 0..cols {
        m[(row, j)] /= p;
    }
    for i in 0..rows {
        if i == row {
            continue;
        }
        let factor = m[(i, col)];
        if factor != 0.0 {
            for j in 0..cols {
                let v = m[(row, j)];
                m[(i, j)] -= factor * v;
            }
        }
    }
    basis[row] = col;
}

/// Pivots artificial variables that remain basic at level zero out of the
/// basis; a row that offers no pivot column is linearly dependent on the
/// others and is dropped.
fn drive_out_artificials(m: &mut DMatrix<f64>, basis: &mut Vec<usize>, banned: &[bool]) {
    let rhs_col = m.ncols() - 1;
    let mut i = 0;
    while i < basis.len() {
        if !banned[basis[i]] {
            i += 1;
            continue;
        }
        let mut pivot_col = None;
        for j in 0..rhs_col {
            if !banned[j] && m[(i, j)].abs() > PIVOT_TOL {
                pivot_col = Some(j);
                break;
            }
        }
        match pivot_col {
            Some(col) => {
                // the artificial sits at level zero, so this degenerate pivot
                // preserves feasibility even on a negative coefficient
                pivot(m, basis, i, col);
                i += 1;
            }
            None => {
                *m = m.clone().remove_row(i);
                basis.remove(i);
            }
        }
    }
}

/// Tightest axis-aligned box containing the polytope
/// `{ d : lo <= H d <= hi }`, computed by minimizing and maximizing each
/// coordinate with the simplex solver.
///
/// An infeasible polytope triggers one retry with the right-hand sides
/// relaxed by `1e-7` before [`HullError::EmptyPolytope`] is reported.  An
/// unbounded coordinate means `H` lacks full column rank and is reported as
/// an error rather than a box.
pub fn residual_box_hull(
    h: &DMatrix<f64>,
    residual: &IntervalVector,
) -> Result<IntervalVector, HullError> {
    let l = h.nrows();
    let p = h.ncols();
    if residual.dim() != l {
        return Err(HullError::ShapeMismatch {
            rows: l,
            dim: residual.dim(),
        });
    }
    if p == 0 {
        return Ok(IntervalVector::new(DVector::zeros(0), DVector::zeros(0))
            .expect("empty interval is valid"));
    }

    // stack lo <= H d <= hi as [H; −H] d <= [hi; −lo]
    let mut stacked = DMatrix::<f64>::zeros(2 * l, p);
    stacked.view_mut((0, 0), (l, p)).copy_from(h);
    stacked.view_mut((l, 0), (l, p)).copy_from(&(-h));
    let mut rhs = DVector::<f64>::zeros(2 * l);
    for i in 0..l {
        rhs[i] = residual.hi()[i];
        rhs[l + i] = -residual.lo()[i];
    }

    match hull_once(&stacked, &rhs, p) {
        Ok(hull) => Ok(hull),
        Err(HullError::EmptyPolytope) => {
            let relaxed = rhs.map(|v| v + RETRY_INFLATION);
            match hull_once(&stacked, &relaxed, p) {
                Ok(hull) => Ok(hull),
                Err(e) => Err(e),
            }
        }
        Err(e) => Err(e),
    }
}

fn hull_once(stacked: &DMatrix<f64>, rhs: &DVector<f64>, p: usize) -> Result<IntervalVector, HullError> {
    let mut lo = DVector::<f64>::zeros(p);
    let mut hi = DVector::<f64>::zeros(p);
    for coord in 0..p {
        let mut objective = DVector::<f64>::zeros(p);
        objective[coord] = 1.0;
        for (sense, out) in [(Sense::Minimize, &mut lo), (Sense::Maximize, &mut hi)] {
            let sol = lp_solve(&LinearProgram {
                objective: objective.clone(),
                constraints: stacked.clone(),
                rhs: rhs.clone(),
                sense,
            })?;
            match sol.status {
                LpStatus::Optimal => out[coord] = sol.optimum.expect("optimal has optimum"),
                LpStatus::Infeasible => return Err(HullError::EmptyPolytope),
                LpStatus::Unbounded => return Err(HullError::Unbounded { coord }),
            }
        }
    }
    IntervalVector::new_snapped(lo, hi, 1e-9).map_err(|e| match e {
        crate::interval::IntervalError::InvertedBounds { coord, .. } => {
            HullError::InvertedHull { coord }
        }
        _ => HullError::InvertedHull { coord: 0 },
    })
}
