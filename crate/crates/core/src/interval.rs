//! Interval (box) vectors and positive-part matrix splits.
//!
//! An [`IntervalVector`] is an axis-aligned box `[lo, hi]` in `R^n`.  The
//! observer propagates such boxes through affine maps, which requires the
//! split of a matrix into its positive and negative parts: for any `A`,
//! write `A = A⁺ − A⁺⁺` with both parts elementwise nonnegative.  Then for
//! `b` ranging over a box, `A b` ranges over
//! `[A⁺ lo − A⁺⁺ hi, A⁺ hi − A⁺⁺ lo]`, and this box is tight (attained at
//! vertices of the input box).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Tiny slack used when intersecting boxes: an overlap that is empty by at
/// most this much is treated as a degenerate (point) interval rather than an
/// empty one, so that harmless floating-point inversions do not abort a run.
pub const EMPTY_SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IntervalError {
    #[error("lower bound exceeds upper bound at coordinate {coord}: {lo} > {hi}")]
    InvertedBounds { coord: usize, lo: f64, hi: f64 },
    #[error("non-finite bound at coordinate {coord}")]
    NonFiniteBound { coord: usize },
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty intersection at coordinate {coord}: [{lo1}, {hi1}] vs [{lo2}, {hi2}]")]
    EmptyIntersection {
        coord: usize,
        lo1: f64,
        hi1: f64,
        lo2: f64,
        hi2: f64,
    },
}

/// An axis-aligned box `[lo, hi]` in `R^n` with `lo <= hi` elementwise and
/// finite bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalVector {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl IntervalVector {
    /// Builds a box from its corner vectors, validating `lo <= hi`
    /// elementwise and finiteness of every bound.
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self, IntervalError> {
        if lo.len() != hi.len() {
            return Err(IntervalError::DimensionMismatch {
                left: lo.len(),
                right: hi.len(),
            });
        }
        for i in 0..lo.len() {
            if !lo[i].is_finite() || !hi[i].is_finite() {
                return Err(IntervalError::NonFiniteBound { coord: i });
            }
            if lo[i] > hi[i] {
                return Err(IntervalError::InvertedBounds {
                    coord: i,
                    lo: lo[i],
                    hi: hi[i],
                });
            }
        }
        Ok(Self { lo, hi })
    }

    /// Builds a box, snapping coordinates whose bounds are inverted by at
    /// most `tol` to their common midpoint.  Larger inversions are still an
    /// error.  Used where two mathematically ordered quantities are computed
    /// along different floating-point paths.
    pub fn new_snapped(
        mut lo: DVector<f64>,
        mut hi: DVector<f64>,
        tol: f64,
    ) -> Result<Self, IntervalError> {
        if lo.len() != hi.len() {
            return Err(IntervalError::DimensionMismatch {
                left: lo.len(),
                right: hi.len(),
            });
        }
        for i in 0..lo.len() {
            if lo[i] > hi[i] && lo[i] - hi[i] <= tol {
                let mid = 0.5 * (lo[i] + hi[i]);
                lo[i] = mid;
                hi[i] = mid;
            }
        }
        Self::new(lo, hi)
    }

    /// The degenerate box `[v, v]`.
    pub fn point(v: DVector<f64>) -> Result<Self, IntervalError> {
        Self::new(v.clone(), v)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    /// Euclidean norm of the per-coordinate widths `hi − lo`.
    pub fn width(&self) -> f64 {
        (&self.hi - &self.lo).norm()
    }

    /// Per-coordinate widths `hi − lo` (all nonnegative).
    pub fn widths(&self) -> DVector<f64> {
        &self.hi - &self.lo
    }

    /// Midpoint of the box.
    pub fn midpoint(&self) -> DVector<f64> {
        0.5 * (&self.lo + &self.hi)
    }

    /// Does the box contain the point `x` (inclusive bounds)?
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        debug_assert_eq!(x.len(), self.dim());
        (0..self.dim()).all(|i| self.lo[i] <= x[i] && x[i] <= self.hi[i])
    }

    /// Does the box contain the point `x` up to a slack of `tol` on each
    /// side?
    pub fn contains_with_tol(&self, x: &DVector<f64>, tol: f64) -> bool {
        debug_assert_eq!(x.len(), self.dim());
        (0..self.dim()).all(|i| self.lo[i] - tol <= x[i] && x[i] <= self.hi[i] + tol)
    }

    /// Is `other` entirely inside this box?
    pub fn contains_box(&self, other: &IntervalVector) -> bool {
        debug_assert_eq!(other.dim(), self.dim());
        (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Coordinate-wise intersection of two boxes.
    ///
    /// A coordinate whose overlap is empty by at most [`EMPTY_SNAP_TOL`]
    /// collapses to the midpoint of the gap; a larger gap reports the
    /// offending coordinate in the error.
    pub fn intersect(&self, other: &IntervalVector) -> Result<IntervalVector, IntervalError> {
        if self.dim() != other.dim() {
            return Err(IntervalError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        let mut lo = DVector::zeros(self.dim());
        let mut hi = DVector::zeros(self.dim());
        for i in 0..self.dim() {
            let l = self.lo[i].max(other.lo[i]);
            let h = self.hi[i].min(other.hi[i]);
            if l > h {
                if l - h <= EMPTY_SNAP_TOL {
                    let mid = 0.5 * (l + h);
                    lo[i] = mid;
                    hi[i] = mid;
                    continue;
                }
                return Err(IntervalError::EmptyIntersection {
                    coord: i,
                    lo1: self.lo[i],
                    hi1: self.hi[i],
                    lo2: other.lo[i],
                    hi2: other.hi[i],
                });
            }
            lo[i] = l;
            hi[i] = h;
        }
        IntervalVector::new(lo, hi)
    }

    /// Iterates over all `2^n` vertices of the box.  Intended for tests and
    /// small `n`; the iterator is ordered by the binary encoding of which
    /// coordinates sit at the upper bound.
    pub fn vertices(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        let n = self.dim();
        (0u64..(1u64 << n)).map(move |mask| {
            DVector::from_fn(n, |i, _| {
                if mask >> i & 1 == 1 {
                    self.hi[i]
                } else {
                    self.lo[i]
                }
            })
        })
    }
}

/// The split `A = plus − plus_plus` of a matrix into elementwise nonnegative
/// parts with disjoint supports: `plus` keeps every entry `>= 0` (zeros
/// included) and `plus_plus` holds the magnitudes of the negative entries.
#[derive(Debug, Clone)]
pub struct MatrixSplit {
    pub plus: DMatrix<f64>,
    pub plus_plus: DMatrix<f64>,
}

impl MatrixSplit {
    /// Elementwise absolute value `|A| = plus + plus_plus`.
    pub fn abs(&self) -> DMatrix<f64> {
        &self.plus + &self.plus_plus
    }
}

/// Splits `A` into its positive and negative parts (`A = A⁺ − A⁺⁺`).
/// Non-finite entries are rejected.
pub fn split_pos(a: &DMatrix<f64>) -> Result<MatrixSplit, IntervalError> {
    for row in 0..a.nrows() {
        for col in 0..a.ncols() {
            if !a[(row, col)].is_finite() {
                return Err(IntervalError::NonFiniteEntry { row, col });
            }
        }
    }
    let plus = a.map(|e| if e >= 0.0 { e } else { 0.0 });
    let plus_plus = a.map(|e| if e < 0.0 { -e } else { 0.0 });
    Ok(MatrixSplit { plus, plus_plus })
}

/// Tight interval enclosure of `{ A b : b in box }`:
/// `[A⁺ lo − A⁺⁺ hi, A⁺ hi − A⁺⁺ lo]`.
pub fn affine_image_bounds(
    a: &DMatrix<f64>,
    b: &IntervalVector,
) -> Result<IntervalVector, IntervalError> {
    if a.ncols() != b.dim() {
        return Err(IntervalError::DimensionMismatch {
            left: a.ncols(),
            right: b.dim(),
        });
    }
    let split = split_pos(a)?;
    split_image_bounds(&split, b)
}

/// Same enclosure as [`affine_image_bounds`] but with the split precomputed,
/// for the observer's hot path.
pub fn split_image_bounds(
    split: &MatrixSplit,
    b: &IntervalVector,
) -> Result<IntervalVector, IntervalError> {
    if split.plus.ncols() != b.dim() {
        return Err(IntervalError::DimensionMismatch {
            left: split.plus.ncols(),
            right: b.dim(),
        });
    }
    let lo = &split.plus * b.lo() - &split.plus_plus * b.hi();
    let hi = &split.plus * b.hi() - &split.plus_plus * b.lo();
    IntervalVector::new(lo, hi)
}
