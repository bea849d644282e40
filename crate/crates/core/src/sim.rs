//! Ground-truth simulation, observer runs over recorded trajectories, CSV
//! emission/parsing, and certificate aggregation.
//!
//! The simulator and the observer are deliberately decoupled through the
//! [`TruthTrajectory`] record: the observer never sees the true state or the
//! unknown input except through the measurement sequence, and a trajectory
//! can be replayed against a *different* model (the negative-control path in
//! the test suite drives a deliberately mismatched observer this way).
//!
//! All randomness comes from ChaCha8 seeded with an explicit 64-bit value;
//! identical `(scenario, seed)` pairs produce bit-identical trajectories and
//! CSV bytes on every platform.  Draw order per trajectory: the initial
//! state (one draw per coordinate), then per step the process noise
//! (`n` draws) followed by the measurement noise (`l` draws).

use crate::expr::Expr;
use crate::interval::IntervalVector;
use crate::observer::{self, ObserverError, SystemModel};
use crate::stability::{
    check_condition_i, check_condition_ii, check_condition_iii, width_limits, ScalarGridSearch,
    StabilityCertificate, StabilityError, WidthLimits,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario must provide {expected} {what} expressions, got {got}")]
    ScenarioShape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("simulation diverged at step {step}: {what} is not finite")]
    Diverged { step: usize, what: &'static str },
    #[error("truth CSV line {line}: {message}")]
    TruthParse { line: usize, message: String },
    #[error("truth trajectory has {got} {what}, the model expects {expected}")]
    TruthShape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Observer(#[from] ObserverError),
}

/// How noise samples are drawn from their bounding boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Uniform over the box (the default).
    Uniform,
    /// Only the box vertices: each coordinate is its lower or upper bound
    /// with equal probability.  Stresses containment hardest.
    Extremal,
}

/// A complete experiment description: input signals, horizon, seed, and the
/// initial-state box the true state is drawn from.
///
/// The signal expressions may use `k` (the step index) and the true state
/// coordinates, so unknown inputs can be adversarial functions of the
/// state, not just of time.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// save known-input signal, one expression per input coordinate.
    pub u: Vec<Expr>,
    /// Unknown-input signal, one expression per coordinate.
    pub d: Vec<Expr>,
    /// Number of observer updates after initialization; trajectories carry
    /// `horizon + 1` rows for `k = 0..=horizon`.
    pub horizon: usize,
    pub seed: u64,
    /// Box the initial true state is sampled from (uniformly in both noise
    /// modes); also the observer's initial enclosure.
    pub x0: IntervalVector,
}

/// One recorded step of the true system.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub k: usize,
    pub x: DVector<f64>,
    pub d: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
}

/// A simulated (or parsed) true trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub n: usize,
    pub p: usize,
    pub l: usize,
    pub m: usize,
    pub rows: Vec<TruthRow>,
    /// Steps at which the simulated state left the model domain and was
    /// clipped back to it (the run is flagged, not aborted).  Unknown for
    /// trajectories parsed from CSV.
    pub clipped_steps: Vec<usize>,
}

fn sample_box(rng: &mut ChaCha8Rng, bounds: &IntervalVector, mode: NoiseMode) -> DVector<f64> {
    DVector::from_fn(bounds.dim(), |i, _| {
        let (lo, hi) = (bounds.lo()[i], bounds.hi()[i]);
        match mode {
            NoiseMode::Uniform => {
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            }
            NoiseMode::Extremal => {
                if rng.random::<bool>() {
                    hi
                } else {
                    lo
                }
            }
        }
    })
}

fn eval_signal(
    exprs: &[Expr],
    args: &[f64],
    what: &'static str,
    step: usize,
) -> Result<DVector<f64>, SimError> {
    let out = DVector::from_fn(exprs.len(), |i, _| exprs[i].eval(args));
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(SimError::Diverged { step, what })
    }
}

/// Simulates the true plant under the scenario's signals and sampled noise:
///
/// ```text
/// x_{k+1} = f(x_k) + B u_k + G d_k + w_k
/// y_k     = g(x_k) + D u_k + H d_k + v_k
/// ```
///
/// Deterministic given the scenario seed.  States that leave the model
/// domain are clipped to it and the step is recorded in `clipped_steps`;
/// a non-finite state or signal aborts with a divergence error.
pub fn simulate_truth(
    model: &SystemModel,
    scenario: &Scenario,
    mode: NoiseMode,
) -> Result<TruthTrajectory, SimError> {
    let (n, m, l, p) = (model.n(), model.m(), model.l(), model.p());
    if scenario.u.len() != m {
        return Err(SimError::ScenarioShape {
            what: "known-input",
            expected: m,
            got: scenario.u.len(),
        });
    }
    if scenario.d.len() != p {
        return Err(SimError::ScenarioShape {
            what: "unknown-input",
            expected: p,
            got: scenario.d.len(),
        });
    }
    if scenario.x0.dim() != n {
        return Err(SimError::ScenarioShape {
            what: "initial-state coordinate",
            expected: n,
            got: scenario.x0.dim(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut x = sample_box(&mut rng, &scenario.x0, NoiseMode::Uniform);
    let mut rows = Vec::with_capacity(scenario.horizon + 1);
    let mut clipped_steps = Vec::new();
    let mut args = vec![0.0; n + 1];

    for k in 0..=scenario.horizon {
        args[0] = k as f64;
        args[1..].copy_from_slice(x.as_slice());
        let u = eval_signal(&scenario.u, &args, "known input", k)?;
        let d = eval_signal(&scenario.d, &args, "unknown input", k)?;
        // noise is drawn every step in a fixed order so the stream stays
        // aligned whether or not the final state update is needed
        let w = sample_box(&mut rng, model.w(), mode);
        let v = sample_box(&mut rng, model.v(), mode);

        let y = model.g_dec().eval_base(&x) + model.d() * &u + model.h_unknown() * &d + &v;
        if !y.iter().all(|c| c.is_finite()) {
            return Err(SimError::Diverged {
                step: k,
                what: "measurement",
            });
        }
        rows.push(TruthRow {
            k,
            x: x.clone(),
            d: d.clone(),
            y,
            u: u.clone(),
        });

        if k < scenario.horizon {
            let mut next = model.f_dec().eval_base(&x) + model.b() * &u + model.g_unknown() * &d + &w;
            if !next.iter().all(|c| c.is_finite()) {
                return Err(SimError::Diverged {
                    step: k + 1,
                    what: "state",
                });
            }
            let mut clipped = false;
            for i in 0..n {
                let c = next[i].clamp(model.domain().lo()[i], model.domain().hi()[i]);
                if c != next[i] {
                    clipped = true;
                    next[i] = c;
                }
            }
            if clipped {
                clipped_steps.push(k + 1);
            }
            x = next;
        }
    }

    Ok(TruthTrajectory {
        n,
        p,
        l,
        m,
        rows,
        clipped_steps,
    })
}

/// One emitted row of an observer run: the truth, the enclosures, their
/// widths and closed-form width bounds, the estimation errors, and the
/// containment flags.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub k: usize,
    pub truth: TruthRow,
    pub x: IntervalVector,
    pub d: IntervalVector,
    pub width_x: f64,
    pub width_d: f64,
    pub delta_x: f64,
    pub delta_d: f64,
    /// `max(‖x − x̲‖, ‖x̄ − x‖)` against the true state.
    pub err_x: f64,
    /// Same, against the true unknown input.
    pub err_d: f64,
    pub x_contained: bool,
    pub d_contained: bool,
    /// Both enclosures contain their targets at this step.
    pub contained: bool,
    /// False when the residual polytope was infeasible and the fallback
    /// bound was used.
    pub polytope_feasible: bool,
}

/// Aggregates of a run, all recomputable from the rows.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    /// Fraction of steps at which state and input were both contained.
    pub containment_rate: f64,
    pub x_violations: usize,
    pub d_violations: usize,
    pub max_width_x: f64,
    pub max_width_d: f64,
    pub max_err_x: f64,
    pub max_err_d: f64,
    pub final_delta_x: f64,
    pub final_delta_d: f64,
    /// Rows with `width_x > delta_x` or `width_d > delta_d` (zero when the
    /// width bounds hold, as they must).
    pub width_bound_violations: usize,
    /// Steps that fell back to the pseudo-inverse input bound because the
    /// residual polytope was numerically empty.
    pub fallback_steps: usize,
    /// Steps at which the simulated truth was clipped to the domain
    /// (zero for trajectories parsed from CSV, where this is unknown).
    pub clipped_truth_steps: usize,
    /// First unrecoverable observer error, if the run was cut short.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_step: Option<usize>,
}

/// A truth trajectory paired with the observer's step-by-step output.
#[derive(Debug, Clone)]
pub struct TracePair {
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
}

fn max_side_norm(lo: &DVector<f64>, hi: &DVector<f64>, target: &DVector<f64>) -> f64 {
    ((target - lo).norm()).max((hi - target).norm())
}

fn make_row(truth: &TruthRow, state: &observer::ObserverState) -> TraceRow {
    let x_contained = state.x.contains(&truth.x);
    let d_contained = state.d.contains(&truth.d);
    TraceRow {
        k: truth.k,
        truth: truth.clone(),
        width_x: state.x.width(),
        width_d: state.d.width(),
        delta_x: state.delta_x,
        delta_d: state.delta_d,
        err_x: max_side_norm(state.x.lo(), state.x.hi(), &truth.x),
        err_d: max_side_norm(state.d.lo(), state.d.hi(), &truth.d),
        x_contained,
        d_contained,
        contained: x_contained && d_contained,
        polytope_feasible: state.fusion.polytope_feasible,
        x: state.x.clone(),
        d: state.d.clone(),
    }
}

fn summarize(
    rows: &[TraceRow],
    clipped_truth_steps: usize,
    error: Option<(usize, String)>,
) -> RunSummary {
    let steps = rows.len();
    let contained = rows.iter().filter(|r| r.contained).count();
    let fold_max = |f: fn(&TraceRow) -> f64| rows.iter().map(f).fold(0.0f64, f64::max);
    RunSummary {
        steps,
        containment_rate: if steps == 0 {
            0.0
        } else {
            contained as f64 / steps as f64
        },
        x_violations: rows.iter().filter(|r| !r.x_contained).count(),
        d_violations: rows.iter().filter(|r| !r.d_contained).count(),
        max_width_x: fold_max(|r| r.width_x),
        max_width_d: fold_max(|r| r.width_d),
        max_err_x: fold_max(|r| r.err_x),
        max_err_d: fold_max(|r| r.err_d),
        final_delta_x: rows.last().map_or(0.0, |r| r.delta_x),
        final_delta_d: rows.last().map_or(0.0, |r| r.delta_d),
        width_bound_violations: rows
            .iter()
            .filter(|r| r.width_x > r.delta_x || r.width_d > r.delta_d)
            .count(),
        fallback_steps: rows.iter().filter(|r| !r.polytope_feasible).count(),
        clipped_truth_steps,
        error_step: error.as_ref().map(|(k, _)| *k),
        error: error.map(|(_, msg)| msg),
    }
}

/// Replays the observer over a recorded trajectory, starting from the
/// initial enclosure `x0`.
///
/// Recoverable degradations (infeasible residual polytopes) are absorbed by
/// the observer itself and only counted; an unrecoverable step error (state
/// box expelled from the domain, non-finite arithmetic) truncates the run
/// and is recorded in the summary rather than returned, so the partial
/// trace remains available.
pub fn run_observer(
    model: &SystemModel,
    x0: &IntervalVector,
    truth: &TruthTrajectory,
) -> Result<TracePair, SimError> {
    for (what, expected, got) in [
        ("state coordinates", model.n(), truth.n),
        ("unknown inputs", model.p(), truth.p),
        ("measurements", model.l(), truth.l),
        ("known inputs", model.m(), truth.m),
    ] {
        if expected != got {
            return Err(SimError::TruthShape {
                what,
                expected,
                got,
            });
        }
    }
    let first = truth.rows.first().ok_or(SimError::TruthParse {
        line: 2,
        message: "trajectory has no rows".to_string(),
    })?;

    let mut state = observer::init(model, x0, &first.y, &first.u)?;
    let mut rows = vec![make_row(first, &state)];
    let mut error = None;
    for pair in truth.rows.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        match observer::step(model, &state, &prev.u, &cur.u, &cur.y) {
            Ok(next) => {
                rows.push(make_row(cur, &next));
                state = next;
            }
            Err(e) => {
                error = Some((cur.k, e.to_string()));
                break;
            }
        }
    }
    let summary = summarize(&rows, truth.clipped_steps.len(), error);
    Ok(TracePair { rows, summary })
}

fn push_floats(out: &mut String, v: &DVector<f64>) {
    for c in v.iter() {
        write!(out, ",{c}").expect("writing to a String cannot fail");
    }
}

/// Renders a truth trajectory as CSV with header
/// `k,x_true_1..n,d_true_1..p,y_1..l,u_1..m`.
pub fn write_truth_csv(truth: &TruthTrajectory) -> String {
    let mut out = String::from("k");
    for (prefix, count) in [
        ("x_true_", truth.n),
        ("d_true_", truth.p),
        ("y_", truth.l),
        ("u_", truth.m),
    ] {
        for i in 1..=count {
            write!(out, ",{prefix}{i}").expect("writing to a String cannot fail");
        }
    }
    out.push('\n');
    for row in &truth.rows {
        write!(out, "{}", row.k).expect("writing to a String cannot fail");
        push_floats(&mut out, &row.x);
        push_floats(&mut out, &row.d);
        push_floats(&mut out, &row.y);
        push_floats(&mut out, &row.u);
        out.push('\n');
    }
    out
}

/// Renders an observer run as CSV with the fixed column contract
/// `k,x_true_*,d_true_*,y_*,u_*,x_lo_*,x_hi_*,d_lo_*,d_hi_*,width_x,width_d,delta_x,delta_d,err_x,err_d,contained`.
pub fn write_trace_csv(pair: &TracePair) -> String {
    let (n, p, l, m) = match pair.rows.first() {
        Some(r) => (r.truth.x.len(), r.truth.d.len(), r.truth.y.len(), r.truth.u.len()),
        None => (0, 0, 0, 0),
    };
    let mut out = String::from("k");
    for (prefix, count) in [
        ("x_true_", n),
        ("d_true_", p),
        ("y_", l),
        ("u_", m),
        ("x_lo_", n),
        ("x_hi_", n),
        ("d_lo_", p),
        ("d_hi_", p),
    ] {
        for i in 1..=count {
            write!(out, ",{prefix}{i}").expect("writing to a String cannot fail");
        }
    }
    out.push_str(",width_x,width_d,delta_x,delta_d,err_x,err_d,contained\n");
    for row in &pair.rows {
        write!(out, "{}", row.k).expect("writing to a String cannot fail");
        push_floats(&mut out, &row.truth.x);
        push_floats(&mut out, &row.truth.d);
        push_floats(&mut out, &row.truth.y);
        push_floats(&mut out, &row.truth.u);
        push_floats(&mut out, row.x.lo());
        push_floats(&mut out, row.x.hi());
        push_floats(&mut out, row.d.lo());
        push_floats(&mut out, row.d.hi());
        writeln!(
            out,
            ",{},{},{},{},{},{},{}",
            row.width_x,
            row.width_d,
            row.delta_x,
            row.delta_d,
            row.err_x,
            row.err_d,
            u8::from(row.contained)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Parses a truth CSV produced by [`write_truth_csv`] (dimensions are
/// inferred from the header).
pub fn parse_truth_csv(text: &str) -> Result<TruthTrajectory, SimError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(SimError::TruthParse {
        line: 1,
        message: "empty file".to_string(),
    })?;
    let mut fields = header.trim_end_matches('\r').split(',');
    if fields.next() != Some("k") {
        return Err(SimError::TruthParse {
            line: 1,
            message: "header must start with `k`".to_string(),
        });
    }
    let mut counts = [0usize; 4];
    let prefixes = ["x_true_", "d_true_", "y_", "u_"];
    let mut group = 0;
    for field in fields {
        // `y_1` must not be eaten by the `x_true_`/`d_true_` groups and
        // vice versa, so advance to the first group the field belongs to
        while group < 4 {
            let expect = format!("{}{}", prefixes[group], counts[group] + 1);
            if field == expect {
                counts[group] += 1;
                break;
            }
            group += 1;
        }
        if group == 4 {
            return Err(SimError::TruthParse {
                line: 1,
                message: format!("unexpected column `{field}`"),
            });
        }
    }
    let [n, p, l, m] = counts;
    if n == 0 || p == 0 || l == 0 {
        return Err(SimError::TruthParse {
            line: 1,
            message: "header must declare x_true, d_true and y columns".to_string(),
        });
    }

    let width = 1 + n + p + l + m;
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(SimError::TruthParse {
                line: idx + 1,
                message: format!("expected {width} fields, got {}", cells.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, SimError> {
            s.parse::<f64>().map_err(|e| SimError::TruthParse {
                line: idx + 1,
                message: format!("bad number `{s}`: {e}"),
            })
        };
        let k = cells[0].parse::<usize>().map_err(|e| SimError::TruthParse {
            line: idx + 1,
            message: format!("bad step index `{}`: {e}", cells[0]),
        })?;
        let mut vals = Vec::with_capacity(width - 1);
        for cell in &cells[1..] {
            vals.push(parse(cell)?);
        }
        let mut take = {
            let mut offset = 0;
            move |len: usize| {
                let v = DVector::from_row_slice(&vals[offset..offset + len]);
                offset += len;
                v
            }
        };
        rows.push(TruthRow {
            k,
            x: take(n),
            d: take(p),
            y: take(l),
            u: take(m),
        });
    }
    if rows.is_empty() {
        return Err(SimError::TruthParse {
            line: 2,
            message: "no data rows".to_string(),
        });
    }
    Ok(TruthTrajectory {
        n,
        p,
        l,
        m,
        rows,
        clipped_steps: Vec::new(),
    })
}

/// Aggregated stability report: all three condition certificates plus the
/// width limits, serialized as one JSON document.
#[derive(Debug, Clone, Serialize)]
pub struct CertifyReport {
    pub contraction_factor: f64,
    pub k_norm: f64,
    pub condition_i: StabilityCertificate,
    pub condition_ii: StabilityCertificate,
    pub condition_iii: StabilityCertificate,
    pub width_limits: WidthLimits,
}

/// Runs every stability checker and the width-limit computation for the
/// model and an initial enclosure, bundling the results.  When the
/// condition-(iii) grid search finds a Lyapunov matrix it also feeds the
/// uniform width bound; otherwise only the recursion-based limits appear.
pub fn certify(model: &SystemModel, x0: &IntervalVector) -> Result<CertifyReport, StabilityError> {
    let condition_i = check_condition_i(model);
    let condition_ii = check_condition_ii(model)?;
    let condition_iii = check_condition_iii(model, None, &ScalarGridSearch::default())?;
    let p = condition_iii.candidate_p.as_ref().map(|rows| {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    });
    let limits = width_limits(model, &x0.widths(), p.as_ref())?;
    Ok(CertifyReport {
        contraction_factor: model.contraction_factor(),
        k_norm: model.k_norm(),
        condition_i,
        condition_ii,
        condition_iii,
        width_limits: limits,
    })
}
