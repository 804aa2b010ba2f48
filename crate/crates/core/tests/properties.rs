use std::sync::Arc;

use proptest::prelude::*;
use splitflow::curvature_invariants::{proj_h, proj_p, proj_t, proj_u};
use splitflow::geometry::{curvature_suite, kulkarni_nomizu, riemann_symmetries, Level, MetricField};
use splitflow::splitting::make_axis_splitting;
use splitflow::{Axis, Factor, Order, ProductChart, Role, Slot, TensorField};

fn chart() -> Arc<ProductChart> {
    let base = Factor { name: "base".into(), role: Role::Base, axes: vec![Axis::periodic(0.0, 6.0, 8)] };
    let fiber = Factor { name: "fiber".into(), role: Role::Fiber(0), axes: vec![Axis::periodic(0.0, 6.0, 8); 2] };
    Arc::new(ProductChart::new(vec![base, fiber]).unwrap())
}

/// `BᵀB + I` plus a small position-dependent diagonal.
fn metric(b: &[f64]) -> MetricField<f64> {
    let g = TensorField::from_fn(chart(), vec![Slot::Co, Slot::Co], |x, o| {
        for i in 0..3 {
            for j in 0..3 {
                let mut s = if i == j { 1.0 + 0.2 * (x[0] + x[1]).sin().abs() } else { 0.0 };
                for k in 0..3 {
                    s += b[k * 3 + i] * b[k * 3 + j];
                }
                o[i * 3 + j] = s;
            }
        }
    });
    MetricField::new(g).unwrap()
}

fn field(c: &[f64], rank: usize) -> TensorField<f64> {
    TensorField::from_fn(chart(), vec![Slot::Co; rank], |x, o| {
        for (k, v) in o.iter_mut().enumerate() {
            *v = c[k % c.len()] * (1.0 + 0.5 * (x[0] + k as f64 * x[2]).cos());
        }
    })
}

fn sym(c: &[f64]) -> TensorField<f64> {
    let t = field(c, 2);
    t.add(&t.permute(&[1, 0])).scale(0.5)
}

const AXES: [&[usize]; 5] = [&[1], &[2], &[1, 2], &[0], &[0, 2]];

const PATTERNS: [&str; 8] = ["___", "__'", "_'_", "_''", "'__", "'_'", "''_", "'''"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projections_are_complementary_orthogonal_idempotents(
        b in prop::collection::vec(-1.0f64..1.0, 9),
        which in 0usize..AXES.len(),
    ) {
        let g = metric(&b);
        let s = make_axis_splitting(&g, AXES[which]).unwrap();
        prop_assert!(s.defects().max() <= 1e-10, "{:?}", s.defects());
        let sum = s.v().add(s.h());
        for p in 0..sum.chart().npoints() {
            for i in 0..3 {
                for j in 0..3 {
                    let id = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((sum.at(p)[i * 3 + j] - id).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn masks_partition_and_are_idempotent(
        b in prop::collection::vec(-1.0f64..1.0, 9),
        c in prop::collection::vec(-1.0f64..1.0, 27),
        which in 0usize..AXES.len(),
        pick in 0usize..8,
    ) {
        let g = metric(&b);
        let s = make_axis_splitting(&g, AXES[which]).unwrap();
        let calc = s.calc(&g);
        let x = field(&c, 3);
        let tol = 1e-11 * x.max_abs().max(1.0);
        let mut sum = TensorField::covariant(chart(), 3);
        for p in PATTERNS {
            sum = sum.add(&calc.mask(&x, p).unwrap());
        }
        prop_assert!(sum.sub(&x).max_abs() <= tol);
        let once = calc.mask(&x, PATTERNS[pick]).unwrap();
        let twice = calc.mask(&once, PATTERNS[pick]).unwrap();
        prop_assert!(twice.sub(&once).max_abs() <= tol);
        let other = PATTERNS[(pick + 1) % 8];
        prop_assert!(calc.mask(&once, other).unwrap().max_abs() <= tol);
    }

    #[test]
    fn kulkarni_nomizu_has_curvature_symmetries(
        a in prop::collection::vec(-1.0f64..1.0, 9),
        b in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let x = sym(&a);
        let y = sym(&b);
        let k = kulkarni_nomizu(&x, &y).unwrap();
        let tol = 1e-12;
        prop_assert!(k.add(&k.permute(&[1, 0, 2, 3])).max_abs() <= tol);
        prop_assert!(k.add(&k.permute(&[0, 1, 3, 2])).max_abs() <= tol);
        prop_assert!(k.sub(&k.permute(&[2, 3, 0, 1])).max_abs() <= tol);
        let bianchi = k.add(&k.permute(&[0, 2, 3, 1])).add(&k.permute(&[0, 3, 1, 2]));
        prop_assert!(bianchi.max_abs() <= tol);
        let swapped = kulkarni_nomizu(&y, &x).unwrap();
        prop_assert!(k.sub(&swapped).max_abs() <= tol);
    }

    #[test]
    fn invariant_projections_are_idempotent(
        b in prop::collection::vec(-1.0f64..1.0, 9),
        c in prop::collection::vec(-1.0f64..1.0, 31),
        which in 0usize..AXES.len(),
    ) {
        let g = metric(&b);
        let s = make_axis_splitting(&g, AXES[which]).unwrap();
        let m = AXES[which].len() as f64;
        let x = field(&c, 3);
        let tol = 1e-12 * x.max_abs().max(1.0) * 10.0;
        let px = proj_p(&x, &g, &s, [0, 1, 2]).unwrap();
        prop_assert!(proj_p(&px, &g, &s, [0, 1, 2]).unwrap().sub(&px).max_abs() <= tol);
        let xh = proj_h(&x, &g, &s, &[0, 1, 2]).unwrap();
        prop_assert!(proj_p(&xh, &g, &s, [0, 1, 2]).unwrap().max_abs() <= tol);
        prop_assert!(proj_h(&xh, &g, &s, &[0, 1, 2]).unwrap().sub(&xh).max_abs() <= tol);
        // 𝒯 maps onto multiples of V with 𝒯² = m𝒯
        let tx = proj_t(&x, &g, &s, 0, 1).unwrap();
        let ttx = proj_t(&tx, &g, &s, 0, 1).unwrap();
        prop_assert!(ttx.sub(&tx.scale(m)).max_abs() <= tol * m);
        let y = field(&c, 5);
        let u = proj_u(&y, &g, &s).unwrap();
        let utol = 1e-12 * y.max_abs().max(1.0) * 100.0;
        prop_assert!(proj_u(&u, &g, &s).unwrap().sub(&u).max_abs() <= utol);
    }
}

fn bump_metric(a: &[f64]) -> MetricField<f64> {
    let g = TensorField::from_fn(chart(), vec![Slot::Co, Slot::Co], |x, o| {
        let w = [x[0].cos(), x[1].sin(), (x[0] + x[2]).cos()];
        for i in 0..3 {
            for j in i..3 {
                let mut v = if i == j { 1.0 } else { 0.0 };
                for (k, wk) in w.iter().enumerate() {
                    v += 0.1 * a[(i * 3 + j) * 3 + k] * wk;
                }
                o[i * 3 + j] = v;
                o[j * 3 + i] = v;
            }
        }
    });
    MetricField::new(g).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn curvature_symmetries_and_determinism(a in prop::collection::vec(-1.0f64..1.0, 27)) {
        let g = bump_metric(&a);
        let geom = curvature_suite(&g, Order::Fourth, Level::Curvature).unwrap();
        let scale = geom.rm.max_abs().max(1e-300);
        let d = geom.rm.clone().with_symmetries(riemann_symmetries()).symmetry_defect();
        prop_assert!(d <= 1e-10 * scale, "{d} vs {scale}");
        prop_assert!(geom.rc.sub(&geom.rc.permute(&[1, 0])).max_abs() <= 1e-10 * geom.rc.max_abs().max(1e-300));
        let again = curvature_suite(&g, Order::Fourth, Level::Curvature).unwrap();
        prop_assert_eq!(geom.rm.data(), again.rm.data());
    }
}
