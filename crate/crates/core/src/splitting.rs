//! Orthogonal splittings `H ⊕ V` and their connection invariants.

use serde::Serialize;

use crate::calc::Calc;
use crate::error::{Error, Result};
use crate::geometry::{covariant_derivative, laplacian, tensor_norm, GeometryPackage, MetricField};
use crate::linalg;
use crate::scalar::Real;
use crate::tensor::{Slot, TensorField};

/// Complementary g-orthogonal projections, stored as (1,1) fields `[a n + i] = P^a_i`.
#[derive(Clone, Debug)]
pub struct OrthogonalSplitting<T> {
    v: TensorField<T>,
    h: TensorField<T>,
    v_low: TensorField<T>,
    h_low: TensorField<T>,
    m: usize,
}

/// Largest violations of the projection identities.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ProjectionDefects {
    pub idempotent: f64,
    pub orthogonal: f64,
    pub symmetric: f64,
    pub trace: f64,
}

impl ProjectionDefects {
    pub fn max(&self) -> f64 {
        self.idempotent.max(self.orthogonal).max(self.symmetric).max(self.trace)
    }
}

fn lower<T: Real>(p: &TensorField<T>, metric: &MetricField<T>) -> TensorField<T> {
    let n = metric.dim();
    let mut out = TensorField::covariant(p.chart().clone(), 2);
    for q in 0..p.chart().npoints() {
        let g = metric.g().at(q);
        let pv = p.at(q);
        let o = out.at_mut(q);
        // P_{ij} = g(P ∂_i, ∂_j) = g_{aj} P^a_i
        for i in 0..n {
            for j in 0..n {
                let mut acc = T::zero();
                for a in 0..n {
                    acc += g[a * n + j] * pv[a * n + i];
                }
                o[i * n + j] = acc;
            }
        }
    }
    out
}

impl<T: Real> OrthogonalSplitting<T> {
    /// Builds a splitting from a vertical (1,1) projection field; `H = Id − V`.
    pub fn from_vertical(metric: &MetricField<T>, v: TensorField<T>, m: usize) -> Result<Self> {
        if v.slots() != [Slot::Contra, Slot::Co] {
            return Err(Error::Shape("vertical projection must be a (1,1) field".into()));
        }
        let n = metric.dim();
        let mut h = TensorField::zeros(v.chart().clone(), v.slots().to_vec());
        for p in 0..v.chart().npoints() {
            let src = v.at(p);
            let dst = h.at_mut(p);
            for a in 0..n {
                for i in 0..n {
                    let id = if a == i { T::one() } else { T::zero() };
                    dst[a * n + i] = id - src[a * n + i];
                }
            }
        }
        let v_low = lower(&v, metric);
        let h_low = lower(&h, metric);
        Ok(OrthogonalSplitting { v, h, v_low, h_low, m })
    }

    /// Builds the pair from a lowered `H_{ij}` without checking that it is a projection.
    ///
    /// Used to evaluate projection formulas along `H + t D` for linearizations.
    pub fn from_lowered_horizontal(metric: &MetricField<T>, h_low: TensorField<T>, m: usize) -> Result<Self> {
        let n = metric.dim();
        let mut h = TensorField::zeros(h_low.chart().clone(), vec![Slot::Contra, Slot::Co]);
        let mut v = h.clone();
        for p in 0..h_low.chart().npoints() {
            let gi = metric.ginv().at(p);
            let hl = h_low.at(p);
            let (hd, vd) = (h.at_mut(p), v.at_mut(p));
            for a in 0..n {
                for i in 0..n {
                    let mut acc = T::zero();
                    for j in 0..n {
                        acc += gi[a * n + j] * hl[i * n + j];
                    }
                    hd[a * n + i] = acc;
                    vd[a * n + i] = if a == i { T::one() - acc } else { -acc };
                }
            }
        }
        let v_low = metric.g().sub(&h_low);
        Ok(OrthogonalSplitting { v, h, v_low, h_low, m })
    }

    pub fn v(&self) -> &TensorField<T> {
        &self.v
    }

    pub fn h(&self) -> &TensorField<T> {
        &self.h
    }

    /// `V_{ij} = g(V ∂_i, ∂_j)`.
    pub fn v_low(&self) -> &TensorField<T> {
        &self.v_low
    }

    pub fn h_low(&self) -> &TensorField<T> {
        &self.h_low
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn calc<'a>(&'a self, metric: &'a MetricField<T>) -> Calc<'a, T> {
        Calc::with_projections(metric, &self.v, &self.h)
    }

    /// Checks `V² = V`, `HV = 0`, g-symmetry of `V` and `trace V = m`.
    pub fn defects(&self) -> ProjectionDefects {
        let n = self.v.dim();
        let mut d = ProjectionDefects { idempotent: 0.0, orthogonal: 0.0, symmetric: 0.0, trace: 0.0 };
        for p in 0..self.v.chart().npoints() {
            let v = self.v.at(p);
            let h = self.h.at(p);
            // matrices act on column vectors: (V)_{a i} = V^a_i
            let vv = linalg::matmul(n, v, v);
            let hv = linalg::matmul(n, h, v);
            let mut tr = T::zero();
            for a in 0..n {
                tr += v[a * n + a];
                for i in 0..n {
                    d.idempotent = d.idempotent.max((vv[a * n + i] - v[a * n + i]).abs().f64());
                    d.orthogonal = d.orthogonal.max(hv[a * n + i].abs().f64());
                }
            }
            d.trace = d.trace.max((tr - T::lit(self.m as f64)).abs().f64());
            let vl = self.v_low.at(p);
            for i in 0..n {
                for j in 0..i {
                    d.symmetric = d.symmetric.max((vl[i * n + j] - vl[j * n + i]).abs().f64());
                }
            }
        }
        d
    }
}

/// Splitting whose vertical space is spanned by the coordinate fields of the given axes.
///
/// `V` is the g-orthogonal projection onto that span, so `H = V^⊥`.
pub fn make_axis_splitting<T: Real>(metric: &MetricField<T>, axes: &[usize]) -> Result<OrthogonalSplitting<T>> {
    let chart = metric.chart();
    let n = chart.dim();
    if axes.is_empty() {
        return Err(Error::InvalidChart("splitting needs at least one fiber axis".into()));
    }
    if let Some(&a) = axes.iter().find(|&&a| a >= n) {
        return Err(Error::AxisOutOfRange { axis: a, dim: n });
    }
    let m = axes.len();
    let mut v = TensorField::zeros(chart.clone(), vec![Slot::Contra, Slot::Co]);
    let mut block = vec![T::zero(); m * m];
    for p in 0..chart.npoints() {
        let g = metric.g().at(p);
        for (r, &a) in axes.iter().enumerate() {
            for (c, &b) in axes.iter().enumerate() {
                block[r * m + c] = g[a * n + b];
            }
        }
        let inv = linalg::invert(m, &block).ok_or(Error::DegenerateFiber { point: p })?;
        if linalg::cholesky(m, &block).is_none() {
            return Err(Error::DegenerateFiber { point: p });
        }
        let o = v.at_mut(p);
        // V^α_i = Σ_β (G_F^{-1})^{αβ} g_{βi}
        for (r, &a) in axes.iter().enumerate() {
            for i in 0..n {
                let mut acc = T::zero();
                for (c, &b) in axes.iter().enumerate() {
                    acc += inv[r * m + c] * g[b * n + i];
                }
                o[a * n + i] = acc;
            }
        }
    }
    OrthogonalSplitting::from_vertical(metric, v, m)
}

/// Vertical space spanned by every fiber-factor axis of the chart.
pub fn make_product_splitting<T: Real>(metric: &MetricField<T>) -> Result<OrthogonalSplitting<T>> {
    let axes = metric.chart().fiber_axes();
    if axes.is_empty() {
        return Err(Error::InvalidChart("chart has no fiber factor".into()));
    }
    make_axis_splitting(metric, &axes)
}

/// Vertical space spanned by the axes of fiber factor `k` only.
pub fn make_factor_splitting<T: Real>(metric: &MetricField<T>, k: usize) -> Result<OrthogonalSplitting<T>> {
    let axes = metric.chart().fiber_axes_of(k);
    if axes.is_empty() {
        return Err(Error::InvalidChart(format!("chart has no fiber factor {k}")));
    }
    make_axis_splitting(metric, &axes)
}

/// Applies a per-slot mask (`'`/`v` bar, `_`/`h` underline, `.` free).
pub fn project_mask<T: Real>(
    field: &TensorField<T>,
    metric: &MetricField<T>,
    split: &OrthogonalSplitting<T>,
    pattern: &str,
) -> Result<TensorField<T>> {
    split.calc(metric).mask(field, pattern)
}

/// Connection-level invariants of a splitting.
#[derive(Clone, Debug)]
pub struct ConnectionInvariants<T> {
    pub m: usize,
    /// `L_{ijk} = ∇_i H_{jk}`.
    pub l: TensorField<T>,
    pub a: TensorField<T>,
    pub t: TensorField<T>,
    pub t0: TensorField<T>,
    pub n: TensorField<T>,
    pub g: TensorField<T>,
    /// `∇N`, before masking.
    pub dn: TensorField<T>,
    pub eprime: TensorField<T>,
    pub edprime: TensorField<T>,
    /// `ΔH` with lowered indices.
    pub lap_h: TensorField<T>,
}

/// `V_{ij} N_k + V_{ik} N_j`.
fn vn_sym<T: Real>(c: &Calc<T>, v: &TensorField<T>, n: &TensorField<T>) -> Result<TensorField<T>> {
    Ok(c.ein("ij, k -> ijk", &[v, n])?.add(&c.ein("ik, j -> ijk", &[v, n])?))
}

/// `(2/m)(|N|²/m V − N⊗N)`.
fn warped_lap_h<T: Real>(c: &Calc<T>, v: &TensorField<T>, n: &TensorField<T>, m: f64) -> Result<TensorField<T>> {
    let n2 = c.ein("p, p -> ", &[n, n])?;
    let vn2 = v.mul_scalar_field(&n2).scale(T::lit(1.0 / m));
    let nn = c.ein("j, k -> jk", &[n, n])?;
    Ok(vn2.sub(&nn).scale(T::lit(2.0 / m)))
}

pub fn connection_invariants<T: Real>(
    geom: &GeometryPackage<T>,
    split: &OrthogonalSplitting<T>,
) -> Result<ConnectionInvariants<T>> {
    let metric = &geom.metric;
    let c = split.calc(metric);
    let m = split.m() as f64;
    let inv_m = T::lit(1.0 / m);
    let l = covariant_derivative(split.h_low(), &geom.gamma, geom.order)?;
    let a = c.ein("i_j_k' -> ijk", &[&l])?.sub(&c.ein("i_j'k_ -> ijk", &[&l])?);
    let t = c.ein("i'j_k' -> ijk", &[&l])?.sub(&c.ein("i'j'k_ -> ijk", &[&l])?);
    let n = c.ein("p'p'k -> k", &[&l])?.scale(-T::one());
    let v = split.v_low();
    let t0 = t.sub(&c.ein("ij, k -> ijk", &[v, &n])?.scale(inv_m)).add(&c.ein("ik, j -> ijk", &[v, &n])?.scale(inv_m));
    let dn = covariant_derivative(&n, &geom.gamma, geom.order)?;
    let g = c.mask(&dn, "vh")?;
    let eprime = l.add(&vn_sym(&c, v, &n)?.scale(inv_m));
    let lap_h = laplacian(split.h_low(), metric, &geom.gamma, geom.order)?;
    let edprime = lap_h.sub(&warped_lap_h(&c, v, &n, m)?);
    Ok(ConnectionInvariants { m: split.m(), l, a, t, t0, n, g, dn, eprime, edprime, lap_h })
}

/// Interior sup and L² of a residual field.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Residual {
    pub sup: f64,
    pub l2: f64,
}

impl Residual {
    pub fn of<T: Real>(x: &TensorField<T>, metric: &MetricField<T>) -> Self {
        let (_, s) = tensor_norm(x, metric);
        Residual { sup: s.sup.f64(), l2: s.l2.f64() }
    }
}

/// Residual fields of the first and second derivative identities for `H`.
#[derive(Clone, Debug)]
pub struct HderResidual<T> {
    pub nablah: TensorField<T>,
    pub deltah: TensorField<T>,
    pub nablah_norm: Residual,
    pub deltah_norm: Residual,
    /// Residual with the quadratic and `A·N` terms taken literally from the printed display.
    pub deltah_printed_norm: Residual,
    /// Scale of `ΔH` itself, for relative reporting.
    pub deltah_scale: Residual,
}

pub fn check_nabla_delta_h<T: Real>(
    inv: &ConnectionInvariants<T>,
    geom: &GeometryPackage<T>,
    split: &OrthogonalSplitting<T>,
) -> Result<HderResidual<T>> {
    let metric = &geom.metric;
    let c = split.calc(metric);
    let m = inv.m as f64;
    let inv_m = T::lit(1.0 / m);
    let two = T::lit(2.0);
    let v = split.v_low();
    let (a, t0, n) = (&inv.a, &inv.t0, &inv.n);

    let rhs1 = vn_sym(&c, v, n)?
        .scale(-inv_m)
        .add(&c.ein("ij_k -> ijk", &[t0])?)
        .sub(&c.ein("ij'k -> ijk", &[t0])?)
        .add(&c.ein("ij_k -> ijk", &[a])?)
        .sub(&c.ein("ij'k -> ijk", &[a])?);
    let nablah = inv.l.sub(&rhs1);

    let dt0 = covariant_derivative(t0, &geom.gamma, geom.order)?;
    let da = covariant_derivative(a, &geom.gamma, geom.order)?;
    let base = warped_lap_h(&c, v, n, m)?
        .add(&c.ein("qqj_k -> jk", &[&dt0])?)
        .sub(&c.ein("qqj'k -> jk", &[&dt0])?)
        .add(&c.ein("qqj_k -> jk", &[&da])?)
        .sub(&c.ein("qqj'k -> jk", &[&da])?)
        .sub(&inv.g.add(&inv.g.permute(&[1, 0])).scale(inv_m))
        .sub(&c.ein("j'pk', p -> jk", &[t0, n])?.add(&c.ein("k'pj', p -> jk", &[t0, n])?).scale(inv_m));
    let t0t0 = c
        .ein("q'j_r', q'r'k_ -> jk", &[t0, t0])?
        .sub(&c.ein("q'j'r_, q'r_k' -> jk", &[t0, t0])?);
    let aa = c.ein("qj_r', qr'k_ -> jk", &[a, a])?.sub(&c.ein("qj'r_, qr_k' -> jk", &[a, a])?);
    let t0n = c.ein("j'rk', r -> jk", &[t0, n])?;
    let an = c.ein("qqj', k -> jk", &[a, n])?.add(&c.ein("qqk', j -> jk", &[a, n])?);
    // derived: 2(T⁰T⁰ + AA) − (2/m) T⁰_{j'rk'} N_r + (1/m)(A_{qqj'} N_k + A_{qqk'} N_j)
    let derived = base
        .add(&t0t0.add(&aa).scale(two))
        .sub(&t0n.scale(two * inv_m))
        .add(&an.scale(inv_m));
    // printed: AA and A·N enter with the opposite sign, T⁰·N without the 1/m
    let printed = base.add(&t0t0.sub(&aa).sub(&t0n).scale(two)).sub(&an.scale(inv_m));
    let deltah = inv.lap_h.sub(&derived);
    let deltah_printed = inv.lap_h.sub(&printed);
    Ok(HderResidual {
        nablah_norm: Residual::of(&nablah, metric),
        deltah_norm: Residual::of(&deltah, metric),
        deltah_printed_norm: Residual::of(&deltah_printed, metric),
        deltah_scale: Residual::of(&inv.lap_h, metric),
        nablah,
        deltah,
    })
}

/// Structural identities of the invariants; each entry is (name, residual field).
pub fn symmetry_residuals<T: Real>(
    inv: &ConnectionInvariants<T>,
    metric: &MetricField<T>,
    split: &OrthogonalSplitting<T>,
) -> Result<Vec<(&'static str, TensorField<T>)>> {
    let c = split.calc(metric);
    let (a, t, t0, l, n) = (&inv.a, &inv.t, &inv.t0, &inv.l, &inv.n);
    Ok(vec![
        ("A_{i'jk}", c.ein("i'jk -> ijk", &[a])?),
        ("A_{i_j'k'}", c.ein("i_j'k' -> ijk", &[a])?),
        ("A_{i_j_k_}", c.ein("i_j_k_ -> ijk", &[a])?),
        ("A_{i_j'k_}+A_{i_k_j'}", c.ein("i_j'k_ -> ijk", &[a])?.add(&c.ein("i_k_j' -> ijk", &[a])?)),
        ("T_{i_jk}", c.ein("i_jk -> ijk", &[t])?),
        ("T_{i'j'k_}+T_{i'k_j'}", c.ein("i'j'k_ -> ijk", &[t])?.add(&c.ein("i'k_j' -> ijk", &[t])?)),
        ("L_{ij'k'}", c.ein("ij'k' -> ijk", &[l])?),
        ("L_{ij_k_}", c.ein("ij_k_ -> ijk", &[l])?),
        ("N_{k'}", c.ein("k' -> k", &[n])?),
        ("T0_{p'p'k}", c.ein("p'p'k -> k", &[t0])?),
        ("T0_{p'kp'}", c.ein("p'kp' -> k", &[t0])?),
        ("T0_{kp'p'}", c.ein("kp'p' -> k", &[t0])?),
    ])
}

/// `|∇H + (1/m)(V⊗N + ..)|` and `|A| + |T⁰|` as scalar fields, for the pointwise estimate.
pub fn nablah_estimate_sides<T: Real>(
    inv: &ConnectionInvariants<T>,
    metric: &MetricField<T>,
) -> (TensorField<T>, TensorField<T>) {
    let (lhs, _) = tensor_norm(&inv.eprime, metric);
    let (na, _) = tensor_norm(&inv.a, metric);
    let (nt, _) = tensor_norm(&inv.t0, metric);
    (lhs, na.add(&nt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::Order;
    use crate::geometry::{curvature_suite, Level};
    use crate::models::{perturb, sample_metric, Perturbation, WarpedModelSpec};
    use std::sync::Arc;

    fn warped(m: usize, pts: usize) -> MetricField<f64> {
        let spec = WarpedModelSpec::standard_warped(m);
        let chart = Arc::new(spec.chart(pts, 8).unwrap());
        sample_metric(&spec, &chart).unwrap()
    }

    #[test]
    fn product_splitting_is_coordinate_projection() {
        let g = warped(2, 12);
        let s = make_product_splitting(&g).unwrap();
        let v = s.v().at(7);
        let want = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(s.defects().max() < 1e-14);
    }

    #[test]
    fn off_block_splitting_matches_gram_schmidt() {
        let g = perturb(&warped(1, 12), 0.2, Perturbation::OffBlock).unwrap();
        let s = make_product_splitting(&g).unwrap();
        assert!(s.defects().max() < 1e-12);
        let p = (0..g.chart().npoints())
            .max_by(|&a, &b| g.g().at(a)[1].abs().partial_cmp(&g.g().at(b)[1].abs()).unwrap())
            .unwrap();
        let gm = g.g().at(p);
        // unit fiber vector e = ∂_1 / |∂_1|; V X = g(X, e) e
        let len = gm[3].sqrt();
        for i in 0..2 {
            for a in 0..2 {
                let want = if a == 1 { gm[i * 2 + 1] / len / len } else { 0.0 };
                assert!((s.v().at(p)[a * 2 + i] - want).abs() < 1e-14);
            }
        }
        assert!(s.h().at(p)[2].abs() > 1e-3);
    }

    #[test]
    fn warped_invariants_and_hder() {
        let g = warped(2, 24);
        let geom = curvature_suite(&g, Order::Fourth, Level::Curvature).unwrap();
        let s = make_product_splitting(&g).unwrap();
        let inv = connection_invariants(&geom, &s).unwrap();
        let r = check_nabla_delta_h(&inv, &geom, &s).unwrap();
        assert!(r.nablah_norm.sup < 1e-12, "{:?}", r.nablah_norm);
        assert!(r.deltah_norm.sup < 1e-3, "{:?}", r.deltah_norm);
        for (name, f) in symmetry_residuals(&inv, &g, &s).unwrap() {
            assert!(Residual::of(&f, &g).sup < 1e-3, "{name}");
        }
        // |N| = m |h'| / h
        let (nn, _) = tensor_norm(&inv.n, &g);
        let chart = g.chart();
        for p in chart.interior_points() {
            let sv = chart.coords(p)[0];
            let want = 2.0 * sv.cos().abs() / (2.0 + sv.sin());
            assert!((nn.data()[p] - want).abs() < 5e-3, "{} {}", nn.data()[p], want);
        }
    }
}
