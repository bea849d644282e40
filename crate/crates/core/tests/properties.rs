//! Randomized properties over the public API: enclosure soundness of the
//! interval primitives, decomposition-function axioms on the shipped
//! example, LP hulls against a brute-force vertex oracle, parser/printer
//! round trips, and the closed-form width bound against its recursion.

use nalgebra::{DMatrix, DVector};
use proptest::collection::vec;
use proptest::prelude::*;
use sisio::config::{build_model, SystemConfig};
use sisio::expr::{BinaryOp, Expr, UnaryOp};
use sisio::interval::{split_image_bounds, split_pos, IntervalVector};
use sisio::lp::residual_box_hull;
use sisio::observer::{self, ModelParts, SystemModel};
use sisio::decomp::JacobianBounds;
use std::sync::OnceLock;

fn canonical_model() -> &'static SystemModel {
    static MODEL: OnceLock<SystemModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example.json");
        let text = std::fs::read_to_string(path).expect("canonical config present");
        let cfg = SystemConfig::from_json(&text).expect("canonical config parses");
        build_model(&cfg).expect("canonical model builds")
    })
}

fn iv(lo: DVector<f64>, hi: DVector<f64>) -> IntervalVector {
    IntervalVector::new(lo, hi).unwrap()
}

/// Scalar plant with exact Jacobian bounds: f' = a, g' = 1, G = [g], H = [1].
fn exact_scalar_model(a: f64, g: f64, w_half: f64) -> SystemModel {
    let exact = |v: f64, rows: usize| {
        let m = DMatrix::from_row_slice(rows, 1, &[v]);
        JacobianBounds::new(m.clone(), m).unwrap()
    };
    SystemModel::new(ModelParts {
        f: vec![Expr::parse(&format!("{a}*x1"), &["x1"]).unwrap()],
        g: vec![Expr::parse("x1", &["x1"]).unwrap()],
        b: DMatrix::from_row_slice(1, 1, &[0.0]),
        d: DMatrix::from_row_slice(1, 1, &[0.0]),
        g_unknown: DMatrix::from_row_slice(1, 1, &[g]),
        h_unknown: DMatrix::from_row_slice(1, 1, &[1.0]),
        w: iv(DVector::from_element(1, -w_half), DVector::from_element(1, w_half)),
        v: iv(DVector::zeros(1), DVector::zeros(1)),
        domain: iv(DVector::from_element(1, -100.0), DVector::from_element(1, 100.0)),
        jacobian_bounds: Some((exact(a, 1), exact(1.0, 1))),
        grid_points: None,
    })
    .unwrap()
}

/// Per-coordinate sorted triples `y <= z <= x` inside the example domain.
fn domain_triples() -> impl Strategy<Value = (DVector<f64>, DVector<f64>, DVector<f64>)> {
    (vec(-8.0..8.0f64, 3), vec(-15.0..15.0f64, 3)).prop_map(|(mut a, mut b)| {
        a.sort_by(|u, v| u.partial_cmp(v).unwrap());
        b.sort_by(|u, v| u.partial_cmp(v).unwrap());
        (
            DVector::from_row_slice(&[a[0], b[0]]),
            DVector::from_row_slice(&[a[1], b[1]]),
            DVector::from_row_slice(&[a[2], b[2]]),
        )
    })
}

proptest! {
    /// Decomposition axioms for both shipped decompositions: exact diagonal
    /// embedding, monotone in the first argument, antitone in the second,
    /// and the enclosure sandwich for any point between the arguments.
    #[test]
    fn decompositions_satisfy_their_axioms((y, z, x) in domain_triples()) {
        let model = canonical_model();
        for dec in [model.f_dec(), model.g_dec()] {
            let diag = dec.eval(&z, &z);
            let base = dec.eval_base(&z);
            let up = dec.eval(&x, &y);
            let mid_first = dec.eval(&z, &y);
            let mid_second = dec.eval(&x, &z);
            let down = dec.eval(&y, &x);
            for i in 0..dec.dim_out() {
                prop_assert!((diag[i] - base[i]).abs() <= 1e-12);
                // x >= z with the same second argument
                prop_assert!(up[i] >= mid_first[i] - 1e-12);
                // y <= z with the same first argument
                prop_assert!(up[i] >= mid_second[i] - 1e-12);
                // z lies in [y, x], so the pair images bracket the field
                prop_assert!(down[i] - 1e-12 <= base[i] && base[i] <= up[i] + 1e-12);
            }
        }
    }
}

fn affine_instances() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(q, n)| {
        (
            Just(q),
            Just(n),
            vec(-3.0..3.0f64, q * n),
            vec(-5.0..5.0f64, n),
            vec(0.01..4.0f64, n),
        )
    })
}

proptest! {
    /// The split-matrix interval image contains the image of every box
    /// vertex and is attained by vertices in each coordinate.
    #[test]
    fn split_image_encloses_and_is_attained((q, n, entries, center, widths) in affine_instances()) {
        let a = DMatrix::from_row_slice(q, n, &entries);
        let c = DVector::from_row_slice(&center);
        let w = DVector::from_row_slice(&widths);
        let b = iv(&c - &w * 0.5, &c + &w * 0.5);
        let split = split_pos(&a).unwrap();
        let image = split_image_bounds(&split, &b).unwrap();

        let mut seen_lo = DVector::from_element(q, f64::INFINITY);
        let mut seen_hi = DVector::from_element(q, f64::NEG_INFINITY);
        for vtx in b.vertices() {
            let img = &a * &vtx;
            for i in 0..q {
                prop_assert!(img[i] >= image.lo()[i] - 1e-10 && img[i] <= image.hi()[i] + 1e-10);
                seen_lo[i] = seen_lo[i].min(img[i]);
                seen_hi[i] = seen_hi[i].max(img[i]);
            }
        }
        for i in 0..q {
            prop_assert!((seen_lo[i] - image.lo()[i]).abs() <= 1e-9);
            prop_assert!((seen_hi[i] - image.hi()[i]).abs() <= 1e-9);
        }
    }
}

/// Brute-force hull of `{d in R^2 : lo <= H d <= hi}` by enumerating all
/// pairwise intersections of active constraint lines.
fn vertex_hull_2d(h: &DMatrix<f64>, r: &IntervalVector) -> Option<(DVector<f64>, DVector<f64>)> {
    let l = h.nrows();
    let mut lines = Vec::with_capacity(2 * l);
    for i in 0..l {
        lines.push((h[(i, 0)], h[(i, 1)], r.lo()[i]));
        lines.push((h[(i, 0)], h[(i, 1)], r.hi()[i]));
    }
    let mut lo = DVector::from_element(2, f64::INFINITY);
    let mut hi = DVector::from_element(2, f64::NEG_INFINITY);
    let mut found = false;
    for a in 0..lines.len() {
        for b in a + 1..lines.len() {
            let (a0, a1, ac) = lines[a];
            let (b0, b1, bc) = lines[b];
            let det = a0 * b1 - a1 * b0;
            if det.abs() < 1e-10 {
                continue;
            }
            let d0 = (ac * b1 - a1 * bc) / det;
            let d1 = (a0 * bc - ac * b0) / det;
            let feasible = (0..l).all(|i| {
                let v = h[(i, 0)] * d0 + h[(i, 1)] * d1;
                v >= r.lo()[i] - 1e-9 && v <= r.hi()[i] + 1e-9
            });
            if feasible {
                found = true;
                lo[0] = lo[0].min(d0);
                lo[1] = lo[1].min(d1);
                hi[0] = hi[0].max(d0);
                hi[1] = hi[1].max(d1);
            }
        }
    }
    found.then_some((lo, hi))
}

fn polytope_instances() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..=3).prop_flat_map(|l| {
        (
            Just(l),
            vec(-2.0..2.0f64, l * 2),
            vec(-2.0..2.0f64, 2),
            vec(0.05..1.5f64, l),
            vec(0.05..1.5f64, l),
        )
    })
}

proptest! {
    /// LP hull of the residual polytope agrees with the vertex-enumeration
    /// oracle and is dominated by the pseudo-inverse interval image.
    #[test]
    fn lp_hull_matches_vertex_oracle((l, h_entries, d0, wlo, whi) in polytope_instances()) {
        let h = DMatrix::from_row_slice(l, 2, &h_entries);
        let sigma_min = h.clone().svd(false, false).singular_values.min();
        prop_assume!(sigma_min > 0.3);

        let d0 = DVector::from_row_slice(&d0);
        let c = &h * &d0;
        let r = iv(&c - DVector::from_row_slice(&wlo), &c + DVector::from_row_slice(&whi));
        let hull = residual_box_hull(&h, &r).unwrap();
        let (olo, ohi) = vertex_hull_2d(&h, &r).expect("polytope contains d0");
        for i in 0..2 {
            prop_assert!((hull.lo()[i] - olo[i]).abs() <= 1e-8,
                "lo mismatch at {i}: {} vs oracle {}", hull.lo()[i], olo[i]);
            prop_assert!((hull.hi()[i] - ohi[i]).abs() <= 1e-8,
                "hi mismatch at {i}: {} vs oracle {}", hull.hi()[i], ohi[i]);
        }

        // the pseudo-inverse image bound always contains the LP hull
        let j = h.clone().pseudo_inverse(1e-12).unwrap();
        let coarse = split_image_bounds(&split_pos(&j).unwrap(), &r).unwrap();
        for i in 0..2 {
            prop_assert!(hull.lo()[i] >= coarse.lo()[i] - 1e-8);
            prop_assert!(hull.hi()[i] <= coarse.hi()[i] + 1e-8);
        }
    }
}

fn arb_unary() -> impl Strategy<Value = UnaryOp> {
    prop_oneof![
        Just(UnaryOp::Neg),
        Just(UnaryOp::Sin),
        Just(UnaryOp::Cos),
        Just(UnaryOp::Tan),
        Just(UnaryOp::Exp),
        Just(UnaryOp::Tanh),
        Just(UnaryOp::Abs),
        Just(UnaryOp::Sqrt),
    ]
}

fn arb_binary() -> impl Strategy<Value = BinaryOp> {
    prop_oneof![
        Just(BinaryOp::Add),
        Just(BinaryOp::Sub),
        Just(BinaryOp::Mul),
        Just(BinaryOp::Div),
        Just(BinaryOp::Pow),
    ]
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-1.0e3..1.0e3f64).prop_map(Expr::Const),
        Just(Expr::Const(0.0)),
        Just(Expr::Const(1.0)),
        (0usize..3).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (arb_unary(), inner.clone()).prop_map(|(op, e)| Expr::Unary(op, Box::new(e))),
            (arb_binary(), inner.clone(), inner)
                .prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
        ]
    })
}

proptest! {
    /// Any tree prints to parseable text, and one parse round normalizes
    /// it (the parser folds `-` on literals): from then on printing and
    /// parsing are exact inverses of each other.
    #[test]
    fn printer_and_parser_invert_each_other(expr in arb_expr()) {
        let vars = ["v0", "v1", "v2"];
        let normalized = Expr::parse(&expr.to_string(), &vars)
            .expect("printed expressions parse");
        let s2 = normalized.to_string();
        let reparsed = Expr::parse(&s2, &vars).unwrap();
        prop_assert_eq!(&reparsed, &normalized, "parse is not left-inverse to print");
        prop_assert_eq!(reparsed.to_string(), s2, "printing is not stable");
    }
}

proptest! {
    /// Scaling the unknown-input matrix up never shrinks the contraction
    /// factor.
    #[test]
    fn contraction_factor_is_monotone_in_the_gain(
        a in 0.0..2.0f64,
        g in 0.0..3.0f64,
        alpha in 1.0..4.0f64,
    ) {
        let base = exact_scalar_model(a, g, 0.1);
        let scaled = exact_scalar_model(a, alpha * g, 0.1);
        prop_assert!(scaled.contraction_factor() >= base.contraction_factor() - 1e-12);
    }
}

/// The closed-form width bound must follow the recursion
/// `δ <- 𝓛 δ + ‖Δz‖` step for step, across contracting, near-unit, unit and
/// expanding factors, out to 10⁴ steps.
#[test]
fn width_bound_closed_form_tracks_the_recursion() {
    for rho in [0.1, 0.9, 1.0, 1.5] {
        let model = exact_scalar_model(rho, 0.0, 0.15);
        assert_eq!(model.contraction_factor(), rho);
        assert_eq!(model.delta_z_norm(), 0.3);
        let x0 = iv(DVector::from_element(1, -1.5), DVector::from_element(1, 1.5));
        let y = DVector::zeros(1);
        let u = DVector::zeros(1);
        let mut state = observer::init(&model, &x0, &y, &u).unwrap();
        let mut delta = state.delta_x;
        assert_eq!(delta, 3.0);
        for k in 1..=10_000 {
            state = observer::step(&model, &state, &u, &u, &y).unwrap();
            delta = rho * delta + 0.3;
            let closed = state.delta_x;
            if delta > 1e300 || closed > 1e300 {
                // past this magnitude only joint blow-up is checkable
                assert!(delta > 1e299 && closed > 1e299, "rho={rho} k={k}");
                break;
            }
            let rel = (closed - delta).abs() / delta.max(1e-300);
            assert!(rel <= 1e-6, "rho={rho} k={k}: closed {closed} vs recursion {delta}");
        }
    }
}
