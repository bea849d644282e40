//! Simultaneous input and state interval observer (SISIO) for discrete-time
//! Lipschitz nonlinear systems.
//!
//! The observer tracks a plant
//!
//! ```text
//! x[k+1] = f(x[k]) + B u[k] + G d[k] + w[k]
//! y[k]   = g(x[k]) + D u[k] + H d[k] + v[k]
//! ```
//!
//! where `u` is a known input, `d` an unknown input with no assumed bounds
//! or dynamics, and `w`, `v` bounded noise.  At every step it produces
//! interval vectors that are guaranteed to contain the true state and the
//! true unknown input, together with closed-form bounds on the interval
//! widths.
//!
//! The building blocks are exposed as modules:
//!
//! * [`interval`] — interval vectors and positive/negative matrix splits,
//! * [`expr`] — a small scalar expression language with forward-mode
//!   derivatives, used to describe the system nonlinearities,
//! * [`decomp`] — mixed-monotone decomposition of a vector field from
//!   Jacobian bounds,
//! * [`lp`] — a dense simplex solver and the polytope box hull used to
//!   tighten unknown-input estimates,
//! * [`observer`] — the model and the recursive observer itself,
//! * [`stability`] — observer stability certificates and asymptotic width
//!   limits,
//! * [`config`] — JSON model/scenario descriptions,
//! * [`sim`] — truth simulation, observer runs, scoring and CSV traces.

pub mod config;
pub mod decomp;
pub mod expr;
pub mod interval;
pub mod lp;
pub mod observer;
pub mod sim;
pub mod stability;
