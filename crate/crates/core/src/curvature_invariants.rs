//! Curvature-level invariants of a splitting and the projections `ℋ`, `𝒯`, `𝒫`, `𝒰`.

use crate::calc::Calc;
use crate::error::{Error, Result};
use crate::geometry::{covariant_derivative, kulkarni_nomizu, norm_field, GeometryPackage, MetricField};
use crate::scalar::Real;
use crate::splitting::{ConnectionInvariants, OrthogonalSplitting};
use crate::tensor::TensorField;

const REST: &[u8] = b"uvwxyz";

fn rest(k: usize) -> Result<String> {
    if k > REST.len() {
        return Err(Error::RankOverflow { rank: k + 3, max: REST.len() + 3 });
    }
    Ok(String::from_utf8(REST[..k].to_vec()).unwrap())
}

/// Moves slots `sel` of `x` to the front (in the given order), keeping the others in order.
fn to_front<T: Real>(c: &Calc<T>, x: &TensorField<T>, sel: &[usize]) -> Result<TensorField<T>> {
    let k = x.rank();
    if sel.iter().any(|&s| s >= k) {
        return Err(Error::Slots(format!("slot out of range for rank {k}")));
    }
    for (i, a) in sel.iter().enumerate() {
        if sel[i + 1..].contains(a) {
            return Err(Error::Slots("slot collision".into()));
        }
    }
    let front = b"ijk";
    let mut word = vec![0u8; k];
    for (t, &s) in sel.iter().enumerate() {
        word[s] = front[t];
    }
    let mut r = 0;
    for w in word.iter_mut() {
        if *w == 0 {
            *w = REST[r];
            r += 1;
        }
    }
    let out: String = String::from_utf8(front[..sel.len()].to_vec()).unwrap() + &rest(k - sel.len())?;
    c.ein(&format!("{} -> {}", String::from_utf8(word).unwrap(), out), &[x])
}

/// Inverse of [`to_front`].
fn from_front<T: Real>(c: &Calc<T>, y: &TensorField<T>, sel: &[usize]) -> Result<TensorField<T>> {
    let k = y.rank();
    let front = b"ijk";
    let mut word = vec![0u8; k];
    for (t, &s) in sel.iter().enumerate() {
        word[s] = front[t];
    }
    let mut r = 0;
    for w in word.iter_mut() {
        if *w == 0 {
            *w = REST[r];
            r += 1;
        }
    }
    let input: String = String::from_utf8(front[..sel.len()].to_vec()).unwrap() + &rest(k - sel.len())?;
    c.ein(&format!("{input} -> {}", String::from_utf8(word).unwrap()), &[y])
}

/// `X_{p̄p̄ ..}` on the slot pair `(s1, s2)`; the remaining slots keep their order.
pub fn trace_v<T: Real>(
    x: &TensorField<T>,
    metric: &MetricField<T>,
    split: &OrthogonalSplitting<T>,
    s1: usize,
    s2: usize,
) -> Result<TensorField<T>> {
    if s1 == s2 {
        return Err(Error::Slots("trace over a single slot".into()));
    }
    let c = split.calc(metric);
    let y = to_front(&c, x, &[s1, s2])?;
    let r = rest(x.rank() - 2)?;
    c.ein(&format!("p'p'{r} -> {r}"), &[&y])
}

/// `ℋ` on the listed slots: each is precomposed with `H`.
pub fn proj_h<T: Real>(
    x: &TensorField<T>,
    metric: &MetricField<T>,
    split: &OrthogonalSplitting<T>,
    slots: &[usize],
) -> Result<TensorField<T>> {
    let pattern: String = (0..x.rank()).map(|s| if slots.contains(&s) { '_' } else { '.' }).collect();
    split.calc(metric).mask(x, &pattern)
}

/// `𝒯(X)_{ij..} = X_{p̄p̄..} V_{ij}` on the slot pair `(s1, s2)`.
pub fn proj_t<T: Real>(
    x: &TensorField<T>,
    metric: &MetricField<T>,
    split: &OrthogonalSplitting<T>,
    s1: usize,
    s2: usize,
) -> Result<TensorField<T>> {
    let c = split.calc(metric);
    let tr = trace_v(x, metric, split, s1, s2)?;
    let r = rest(x.rank() - 2)?;
    let front = c.ein(&format!("ij, {r} -> ij{r}"), &[split.v_low(), &tr])?;
    from_front(&c, &front, &[s1, s2])
}

/// `𝒫` on the slots `(a, b, c)` of a covariant field of rank ≥ 3.
pub fn proj_p<T: Real>(
    x: &TensorField<T>,
    metric: &MetricField<T>,
    split: &OrthogonalSplitting<T>,
    slots: [usize; 3],
) -> Result<TensorField<T>> {
    let c = split.calc(metric);
    let m = T::lit(split.m() as f64);
    let y = to_front(&c, x, &slots)?;
    let r = rest(x.rank() - 3)?;
    let v = split.v_low();
    let xh = c.ein(&format!("i_j_k_{r} -> ijk{r}"), &[&y])?;
    let t1 = c.ein(&format!("i_p'p'{r}, jk -> ijk{r}"), &[&y, v])?;
    let t2 = c.ein(&format!("p'j_p'{r}, ik -> ijk{r}"), &[&y, v])?;
    let t3 = c.ein(&format!("p'p'k_{r}, ij -> ijk{r}"), &[&y, v])?;
    let py = y.sub(&xh).sub(&t1.add(&t2).add(&t3).scale(T::one() / m));
    from_front(&c, &py, &slots)
}

/// `𝒰 = 𝒫 ∘ ℋ` on a five-tensor: `ℋ` on slots 3, 4 and `𝒫` on slots 1, 2, 5.
pub fn proj_u<T: Real>(
    x: &TensorField<T>,
    metric: &MetricField<T>,
    split: &OrthogonalSplitting<T>,
) -> Result<TensorField<T>> {
    if x.rank() != 5 {
        return Err(Error::Slots(format!("proj_u needs a five-tensor, got rank {}", x.rank())));
    }
    let h = proj_h(x, metric, split, &[2, 3])?;
    proj_p(&h, metric, split, [0, 1, 4])
}

#[derive(Clone, Debug)]
pub struct CurvatureInvariants<T> {
    pub q: TensorField<T>,
    pub w: TensorField<T>,
    pub rhat: TensorField<T>,
    pub m: TensorField<T>,
    pub p: TensorField<T>,
    pub u: TensorField<T>,
    pub s: TensorField<T>,
    /// `P` evaluated term by term from its defining display, as a second code path.
    pub p_direct: TensorField<T>,
    /// `(∇R̂)^V`.
    pub drhat_v: TensorField<T>,
    /// `S − ∇_ī R_{p̄p̄} − ∇_ī R_{p̲p̲}`.
    pub s_trace_residual: TensorField<T>,
}

/// Needs a geometry package with first derivatives of curvature.
pub fn curvature_invariants<T: Real>(
    geom: &GeometryPackage<T>,
    split: &OrthogonalSplitting<T>,
) -> Result<CurvatureInvariants<T>> {
    let metric = &geom.metric;
    let c = split.calc(metric);
    let inv_m = T::lit(1.0 / split.m() as f64);
    let v = split.v_low();
    let (rm, rc) = (&geom.rm, &geom.rc);
    let drc = geom.drc.as_ref().ok_or_else(|| Error::Slots("curvature derivatives missing".into()))?;
    let drm = geom.drm.as_ref().ok_or_else(|| Error::Slots("curvature derivatives missing".into()))?;

    let w = c.ein("i_p'p'l_ -> il", &[rm])?;
    let q = rm
        .sub(&c.mask(rm, "____")?)
        .sub(&c.mask(rm, "''''")?)
        .sub(&kulkarni_nomizu(&w, v)?.scale(inv_m));
    let rhat = c.ein("p'p' -> ", &[rc])?;
    let m = rc.sub(&c.mask(rc, "__")?).sub(&v.mul_scalar_field(&rhat).scale(inv_m));
    let p = proj_p(drc, metric, split, [0, 1, 2])?;
    let p_direct = drc
        .sub(&c.ein("i_j_k_ -> ijk", &[drc])?)
        .sub(
            &c.ein("i_p'p', jk -> ijk", &[drc, v])?
                .add(&c.ein("p'j_p', ik -> ijk", &[drc, v])?)
                .add(&c.ein("p'p'k_, ij -> ijk", &[drc, v])?)
                .scale(inv_m),
        );
    let u = proj_u(drm, metric, split)?;
    let dr = covariant_derivative(&geom.r, &geom.gamma, geom.order)?;
    let s = c.mask(&dr, "'")?;
    let s_trace_residual = s.sub(&c.ein("i'p'p' -> i", &[drc])?).sub(&c.ein("i'p_p_ -> i", &[drc])?);
    let drhat = covariant_derivative(&rhat, &geom.gamma, geom.order)?;
    let drhat_v = c.mask(&drhat, "'")?;
    Ok(CurvatureInvariants { q, w, rhat, m, p, u, s, p_direct, drhat_v, s_trace_residual })
}

/// Pointwise norms of the sections `X = (M, P, U)` and `Y = (G, A, T⁰, ∇A, ∇T⁰)`.
#[derive(Clone, Debug)]
pub struct SystemSections<T> {
    pub x: TensorField<T>,
    pub dx: TensorField<T>,
    pub y: TensorField<T>,
    pub dy: Option<TensorField<T>>,
}

fn direct_sum_norm<T: Real>(parts: &[&TensorField<T>], metric: &MetricField<T>) -> TensorField<T> {
    let mut acc = TensorField::scalar(metric.chart().clone());
    for x in parts {
        let f = norm_field(x, metric);
        acc = acc.add(&f.mul_scalar_field(&f));
    }
    acc.map(|v| v.sqrt())
}

/// Assembles `|X|`, `|∇X|`, `|Y|` and, when `with_dy` is set, `|∇Y|`.
pub fn system_sections<T: Real>(
    geom: &GeometryPackage<T>,
    conn: &ConnectionInvariants<T>,
    curv: &CurvatureInvariants<T>,
    with_dy: bool,
) -> Result<SystemSections<T>> {
    let metric = &geom.metric;
    let d = |x: &TensorField<T>| covariant_derivative(x, &geom.gamma, geom.order);
    let (dm, dp, du) = (d(&curv.m)?, d(&curv.p)?, d(&curv.u)?);
    let (da, dt0) = (d(&conn.a)?, d(&conn.t0)?);
    let x = direct_sum_norm(&[&curv.m, &curv.p, &curv.u], metric);
    let dx = direct_sum_norm(&[&dm, &dp, &du], metric);
    let y = direct_sum_norm(&[&conn.g, &conn.a, &conn.t0, &da, &dt0], metric);
    let dy = if with_dy {
        let (dg, dda, ddt0) = (d(&conn.g)?, d(&da)?, d(&dt0)?);
        Some(direct_sum_norm(&[&dg, &da, &dt0, &dda, &ddt0], metric))
    } else {
        None
    };
    Ok(SystemSections { x, dx, y, dy })
}

/// Pointwise `|Q|` and the bound scale `|A| + |T⁰| + |∇A| + |∇T⁰| + |G|`.
pub fn q_bound_sides<T: Real>(
    geom: &GeometryPackage<T>,
    conn: &ConnectionInvariants<T>,
    curv: &CurvatureInvariants<T>,
) -> Result<(TensorField<T>, TensorField<T>)> {
    let metric = &geom.metric;
    let da = covariant_derivative(&conn.a, &geom.gamma, geom.order)?;
    let dt0 = covariant_derivative(&conn.t0, &geom.gamma, geom.order)?;
    let rhs = [&conn.a, &conn.t0, &da, &dt0, &conn.g]
        .iter()
        .fold(TensorField::scalar(metric.chart().clone()), |acc, x| acc.add(&norm_field(x, metric)));
    Ok((norm_field(&curv.q, metric), rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::Order;
    use crate::geometry::{curvature_suite, tensor_norm, Level};
    use crate::models::{perturb, sample_metric, Perturbation, WarpedModelSpec};
    use crate::splitting::make_product_splitting;
    use std::sync::Arc;

    fn setup(eps: f64) -> (GeometryPackage<f64>, OrthogonalSplitting<f64>) {
        let spec = WarpedModelSpec::standard_warped(2);
        let chart = Arc::new(spec.chart_with(12, &[10, 8]).unwrap());
        let g = sample_metric::<f64>(&spec, &chart).unwrap();
        let g = perturb(&g, eps, Perturbation::OffBlock).unwrap();
        let g = perturb(&g, eps, Perturbation::FiberShape).unwrap();
        let geom = curvature_suite(&g, Order::Fourth, Level::FirstDerivatives).unwrap();
        let s = make_product_splitting(&geom.metric).unwrap();
        (geom, s)
    }

    fn sup(x: &TensorField<f64>) -> f64 {
        x.max_abs()
    }

    #[test]
    fn projections_are_idempotent_with_kernels() {
        let (geom, s) = setup(0.3);
        let g = &geom.metric;
        let x = geom.drc();
        let px = proj_p(x, g, &s, [0, 1, 2]).unwrap();
        assert!(sup(&proj_p(&px, g, &s, [0, 1, 2]).unwrap().sub(&px)) < 1e-12 * sup(&px).max(1.0));
        // kernel: fully horizontal part and V-pattern part
        let xh = proj_h(x, g, &s, &[0, 1, 2]).unwrap();
        assert!(sup(&proj_p(&xh, g, &s, [0, 1, 2]).unwrap()) < 1e-12);
        let c = s.calc(g);
        let z = c.ein("i, jk -> ijk", &[&covariant_derivative(&geom.r, &geom.gamma, geom.order).unwrap(), s.v_low()]).unwrap();
        let zu = c.mask(&z, "_..").unwrap();
        assert!(sup(&proj_p(&zu, g, &s, [0, 1, 2]).unwrap()) < 1e-12);
        // the image has no horizontal part and its non-vertical part is vertical-trace-free
        assert!(sup(&c.mask(&px, "___").unwrap()) < 1e-12);
        let u = proj_u(geom.drm(), g, &s).unwrap();
        assert!(sup(&proj_u(&u, g, &s).unwrap().sub(&u)) < 1e-12 * sup(&u).max(1.0));
        assert!(sup(&c.mask(&u, "__.._").unwrap()) < 1e-12);
        // permuted slots agree with the direct path
        let px2 = proj_p(&x.permute(&[2, 0, 1]), g, &s, [1, 2, 0]).unwrap();
        assert!(sup(&px2.permute(&[1, 2, 0]).sub(&px)) < 1e-12 * sup(&px).max(1.0));
    }

    #[test]
    fn invariants_algebraic_structure() {
        let (geom, s) = setup(0.3);
        let g = &geom.metric;
        let ci = curvature_invariants(&geom, &s).unwrap();
        let c = s.calc(g);
        assert!(sup(&ci.m.sub(&ci.m.permute(&[1, 0]))) < 1e-12);
        assert!(sup(&c.mask(&ci.m, "__").unwrap()) < 1e-12);
        assert!(sup(&trace_v(&ci.m, g, &s, 0, 1).unwrap()) < 1e-12);
        assert!(sup(&ci.p.sub(&ci.p_direct)) < 1e-12);
        assert!(sup(&trace_v(g.g(), g, &s, 0, 1).unwrap().map(|v| v - 2.0)) < 1e-12);
        assert!(sup(&trace_v(&c.mask(&geom.rc, "_.").unwrap(), g, &s, 0, 1).unwrap()) < 1e-12);
        assert!(tensor_norm(&ci.m, g).1.sup > 1e-3);
    }

    #[test]
    fn warped_model_invariants_are_small() {
        let (geom, s) = setup(0.0);
        let ci = curvature_invariants(&geom, &s).unwrap();
        let g = &geom.metric;
        for (name, x) in [("M", &ci.m), ("P", &ci.p), ("U", &ci.u), ("Q", &ci.q), ("S", &ci.s)] {
            assert!(tensor_norm(x, g).1.sup < 1e-2, "{name}");
        }
    }
}
