//! Metrics, Levi-Civita connection, curvature and tensor calculus on product charts.

use std::sync::Arc;

use crate::chart::ProductChart;
use crate::error::{Error, Result};
use crate::fd::{derivative_along, gradient, Order};
use crate::linalg;
use crate::scalar::Real;
use crate::tensor::{block, ipow, Slot, Symmetry, TensorField, MAX_RANK};

/// Symmetric positive definite (0,2) field with its cached inverse.
#[derive(Clone, Debug)]
pub struct MetricField<T> {
    g: TensorField<T>,
    ginv: TensorField<T>,
}

impl<T: Real> MetricField<T> {
    pub fn new(g: TensorField<T>) -> Result<Self> {
        if g.slots() != [Slot::Co, Slot::Co] {
            return Err(Error::Shape("metric must be a (0,2) field".into()));
        }
        let n = g.dim();
        let mut asym = T::zero();
        let mut ginv = TensorField::zeros(g.chart().clone(), vec![Slot::Contra, Slot::Contra]);
        for p in 0..g.chart().npoints() {
            let b = g.at(p);
            for i in 0..n {
                for j in 0..i {
                    let s = b[i * n + j].abs().max(b[j * n + i].abs()).max(T::min_positive_value());
                    asym = asym.max((b[i * n + j] - b[j * n + i]).abs() / s);
                }
            }
            if linalg::cholesky(n, b).is_none() {
                return Err(Error::SingularMetric { point: p });
            }
            let inv = linalg::invert(n, b).ok_or(Error::SingularMetric { point: p })?;
            ginv.at_mut(p).copy_from_slice(&inv);
        }
        if asym > T::lit(1e-12) {
            return Err(Error::Asymmetric { defect: asym.f64() });
        }
        let g = g.with_symmetries(vec![Symmetry::Symmetric(0, 1)]);
        let ginv = ginv.with_symmetries(vec![Symmetry::Symmetric(0, 1)]);
        Ok(MetricField { g, ginv })
    }

    pub fn g(&self) -> &TensorField<T> {
        &self.g
    }

    pub fn ginv(&self) -> &TensorField<T> {
        &self.ginv
    }

    pub fn chart(&self) -> &Arc<ProductChart> {
        self.g.chart()
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    /// Largest deviation of `g g^{-1}` from the identity.
    pub fn inverse_defect(&self) -> T {
        let n = self.dim();
        let mut worst = T::zero();
        for p in 0..self.chart().npoints() {
            let prod = linalg::matmul(n, self.g.at(p), self.ginv.at(p));
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { T::one() } else { T::zero() };
                    worst = worst.max((prod[i * n + j] - e).abs());
                }
            }
        }
        worst
    }

    /// Lowers every contravariant slot and raises every covariant slot of `x`.
    pub fn dualize(&self, x: &TensorField<T>) -> TensorField<T> {
        let n = self.dim();
        let k = x.rank();
        let slots = x.slots().iter().map(|s| if *s == Slot::Co { Slot::Contra } else { Slot::Co }).collect();
        let mut out = TensorField::zeros(x.chart().clone(), slots);
        let nc = x.ncomp();
        let mut a = vec![T::zero(); nc];
        let mut b = vec![T::zero(); nc];
        for p in 0..self.chart().npoints() {
            a.copy_from_slice(x.at(p));
            for (s, slot) in x.slots().iter().enumerate() {
                let w = if *slot == Slot::Co { self.ginv.at(p) } else { self.g.at(p) };
                block::precompose(&a, k, n, s, w, &mut b);
                std::mem::swap(&mut a, &mut b);
            }
            out.at_mut(p).copy_from_slice(&a);
        }
        out
    }
}

/// Levi-Civita connection `Γ^l_{ij}` stored with slots (Contra, Co, Co).
pub fn christoffel<T: Real>(metric: &MetricField<T>, order: Order) -> Result<TensorField<T>> {
    let n = metric.dim();
    let dg = gradient(metric.g(), order)?;
    let mut gamma = TensorField::zeros(metric.chart().clone(), vec![Slot::Contra, Slot::Co, Slot::Co]);
    let half = T::lit(0.5);
    let mut lowered = vec![T::zero(); n * n * n];
    for p in 0..metric.chart().npoints() {
        let d = dg.at(p);
        let gi = metric.ginv().at(p);
        for m in 0..n {
            for i in 0..n {
                for j in i..n {
                    let v = half * (d[(i * n + j) * n + m] + d[(j * n + i) * n + m] - d[(m * n + i) * n + j]);
                    lowered[(m * n + i) * n + j] = v;
                    lowered[(m * n + j) * n + i] = v;
                }
            }
        }
        let out = gamma.at_mut(p);
        for l in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut acc = T::zero();
                    for m in 0..n {
                        acc += gi[l * n + m] * lowered[(m * n + i) * n + j];
                    }
                    out[(l * n + i) * n + j] = acc;
                    out[(l * n + j) * n + i] = acc;
                }
            }
        }
    }
    Ok(gamma.with_symmetries(vec![Symmetry::Symmetric(1, 2)]))
}

/// Covariant derivative; the new derivative slot comes first.
pub fn covariant_derivative<T: Real>(
    field: &TensorField<T>,
    gamma: &TensorField<T>,
    order: Order,
) -> Result<TensorField<T>> {
    if field.rank() + 1 > MAX_RANK {
        return Err(Error::RankOverflow { rank: field.rank() + 1, max: MAX_RANK });
    }
    let mut out = gradient(field, order)?;
    let n = field.dim();
    let k = field.rank();
    let nc = field.ncomp();
    for p in 0..field.chart().npoints() {
        let x = field.at(p);
        let gm = gamma.at(p);
        let o = out.at_mut(p);
        connection_terms(x, field.slots(), n, k, nc, |a, l, i| gm[(l * n + a) * n + i], |a, i, l| gm[(i * n + a) * n + l], o, T::one());
    }
    Ok(out)
}

/// Adds `sign * (−Σ_co Γ^l_{a i_s} X_{..l..} + Σ_contra Γ^{i_s}_{a l} X_{..l..})` into `out[a * nc + I]`.
#[allow(clippy::too_many_arguments)]
fn connection_terms<T: Real>(
    x: &[T],
    slots: &[Slot],
    n: usize,
    k: usize,
    nc: usize,
    co: impl Fn(usize, usize, usize) -> T,
    contra: impl Fn(usize, usize, usize) -> T,
    out: &mut [T],
    sign: T,
) {
    for (s, slot) in slots.iter().enumerate() {
        let pw = ipow(n, k - 1 - s);
        for a in 0..n {
            for f in 0..nc {
                let i = (f / pw) % n;
                let base = f - i * pw;
                let mut acc = T::zero();
                for l in 0..n {
                    let c = match slot {
                        Slot::Co => -co(a, l, i),
                        Slot::Contra => contra(a, i, l),
                    };
                    acc += c * x[base + l * pw];
                }
                out[a * nc + f] += sign * acc;
            }
        }
    }
}

/// Rough Laplacian `g^{ab} ∇_a ∇_b X`, assembled without storing the second derivative.
pub fn laplacian<T: Real>(
    field: &TensorField<T>,
    metric: &MetricField<T>,
    gamma: &TensorField<T>,
    order: Order,
) -> Result<TensorField<T>> {
    let y = covariant_derivative(field, gamma, order)?;
    laplacian_from_gradient(field.slots(), &y, metric, gamma, order)
}

/// Laplacian from an already computed `∇X` (slots: derivative first, then those of X).
pub fn laplacian_from_gradient<T: Real>(
    slots: &[Slot],
    y: &TensorField<T>,
    metric: &MetricField<T>,
    gamma: &TensorField<T>,
    order: Order,
) -> Result<TensorField<T>> {
    let chart = metric.chart();
    let n = chart.dim();
    let k = slots.len();
    let nc = ipow(n, k);
    let ny = y.ncomp();
    let mut out = TensorField::zeros(chart.clone(), slots.to_vec());
    let mut d = vec![T::zero(); y.data().len()];
    for a in 0..n {
        derivative_along(y.data(), ny, chart, a, order, &mut d)?;
        for p in 0..chart.npoints() {
            let gi = metric.ginv().at(p);
            let o = out.at_mut(p);
            let dp = &d[p * ny..(p + 1) * ny];
            for b in 0..n {
                let w = gi[a * n + b];
                if w == T::zero() {
                    continue;
                }
                for f in 0..nc {
                    o[f] += w * dp[b * nc + f];
                }
            }
        }
    }
    let mut kk = vec![T::zero(); n * n * n];
    let mut trg = vec![T::zero(); n];
    for p in 0..chart.npoints() {
        let gi = metric.ginv().at(p);
        let gm = gamma.at(p);
        // kk[b][l][i] = g^{ab} Γ^l_{a i}
        for b in 0..n {
            for l in 0..n {
                for i in 0..n {
                    let mut acc = T::zero();
                    for a in 0..n {
                        acc += gi[a * n + b] * gm[(l * n + a) * n + i];
                    }
                    kk[(b * n + l) * n + i] = acc;
                }
            }
        }
        for l in 0..n {
            let mut acc = T::zero();
            for a in 0..n {
                for b in 0..n {
                    acc += gi[a * n + b] * gm[(l * n + a) * n + b];
                }
            }
            trg[l] = acc;
        }
        let yp = y.at(p);
        let o = out.at_mut(p);
        for f in 0..nc {
            let mut acc = T::zero();
            for l in 0..n {
                acc -= trg[l] * yp[l * nc + f];
            }
            o[f] += acc;
        }
        for (s, slot) in slots.iter().enumerate() {
            let pw = ipow(n, k - 1 - s);
            for f in 0..nc {
                let i = (f / pw) % n;
                let base = f - i * pw;
                let mut acc = T::zero();
                for b in 0..n {
                    for l in 0..n {
                        let c = match slot {
                            Slot::Co => -kk[(b * n + l) * n + i],
                            // g^{ab} Γ^{i}_{a l}
                            Slot::Contra => kk[(b * n + i) * n + l],
                        };
                        acc += c * yp[b * nc + base + l * pw];
                    }
                }
                o[f] += acc;
            }
        }
    }
    Ok(out)
}

/// `(X⊙Y)_{ijkl} = X_il Y_jk + X_jk Y_il − X_ik Y_jl − X_jl Y_ik`.
pub fn kulkarni_nomizu<T: Real>(x: &TensorField<T>, y: &TensorField<T>) -> Result<TensorField<T>> {
    for t in [x, y] {
        if t.slots() != [Slot::Co, Slot::Co] {
            return Err(Error::Shape("Kulkarni-Nomizu product needs (0,2) inputs".into()));
        }
        let d = t.sub(&t.permute(&[1, 0])).max_abs();
        if d > T::lit(1e-12) * t.max_abs().max(T::one()) {
            return Err(Error::Asymmetric { defect: d.f64() });
        }
    }
    let n = x.dim();
    let mut out = TensorField::covariant(x.chart().clone(), 4);
    for p in 0..x.chart().npoints() {
        let a = x.at(p);
        let b = y.at(p);
        let o = out.at_mut(p);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        o[((i * n + j) * n + k) * n + l] = a[i * n + l] * b[j * n + k] + a[j * n + k] * b[i * n + l]
                            - a[i * n + k] * b[j * n + l]
                            - a[j * n + l] * b[i * n + k];
                    }
                }
            }
        }
    }
    Ok(out.with_symmetries(riemann_symmetries()))
}

pub fn riemann_symmetries() -> Vec<Symmetry> {
    vec![
        Symmetry::Antisymmetric(0, 1),
        Symmetry::Antisymmetric(2, 3),
        Symmetry::PairExchange,
        Symmetry::FirstBianchi,
    ]
}

/// Pointwise norm `|X|_g` as a scalar field.
pub fn norm_field<T: Real>(x: &TensorField<T>, metric: &MetricField<T>) -> TensorField<T> {
    let dual = metric.dualize(x);
    let mut out = TensorField::scalar(x.chart().clone());
    for p in 0..x.chart().npoints() {
        let s: T = x.at(p).iter().zip(dual.at(p)).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        out.data_mut()[p] = s.max(T::zero()).sqrt();
    }
    out
}

/// Interior supremum of a scalar field.
pub fn interior_sup<T: Real>(s: &TensorField<T>) -> T {
    assert_eq!(s.rank(), 0);
    s.chart().interior_points().iter().fold(T::zero(), |m, &p| m.max(s.data()[p].abs()))
}

/// Interior L² norm of a scalar field with Riemannian volume weights.
pub fn interior_l2<T: Real>(s: &TensorField<T>, metric: &MetricField<T>) -> T {
    let chart = s.chart();
    let n = chart.dim();
    let cell = T::lit(chart.cell_volume());
    let mut acc = T::zero();
    for p in chart.interior_points() {
        let det = linalg::cholesky(n, metric.g().at(p))
            .map(|l| (0..n).fold(T::one(), |d, i| d * l[i * n + i]))
            .unwrap_or(T::zero());
        acc += s.data()[p] * s.data()[p] * det * cell;
    }
    acc.sqrt()
}

/// Interior sup and L² of `|X|_g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSummary<T> {
    pub sup: T,
    pub l2: T,
}

pub fn tensor_norm<T: Real>(x: &TensorField<T>, metric: &MetricField<T>) -> (TensorField<T>, NormSummary<T>) {
    let f = norm_field(x, metric);
    let summary = NormSummary { sup: interior_sup(&f), l2: interior_l2(&f, metric) };
    (f, summary)
}

/// How many derivatives of curvature to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Curvature,
    FirstDerivatives,
    SecondDerivatives,
}

/// Connection, curvature and its covariant derivatives of one metric.
#[derive(Clone, Debug)]
pub struct GeometryPackage<T> {
    pub metric: MetricField<T>,
    pub order: Order,
    pub gamma: TensorField<T>,
    pub rm: TensorField<T>,
    pub rc: TensorField<T>,
    pub r: TensorField<T>,
    pub drm: Option<TensorField<T>>,
    pub ddrm: Option<TensorField<T>>,
    pub drc: Option<TensorField<T>>,
    pub ddrc: Option<TensorField<T>>,
    /// Relative symmetry defect of the curvature tensor before symmetrization.
    pub raw_defect: T,
}

pub fn curvature_suite<T: Real>(metric: &MetricField<T>, order: Order, level: Level) -> Result<GeometryPackage<T>> {
    let gamma = christoffel(metric, order)?;
    let rm_raw = riemann_from_connection(metric, &gamma, order)?;
    let raw_defect = rm_raw.clone().with_symmetries(riemann_symmetries()).symmetry_defect();
    let rm = symmetrize_riemann(&rm_raw);
    let rc = ricci_from_riemann(&rm, metric);
    let r = trace_g(&rc, metric);
    let mut pkg = GeometryPackage {
        metric: metric.clone(),
        order,
        gamma,
        rm,
        rc,
        r,
        drm: None,
        ddrm: None,
        drc: None,
        ddrc: None,
        raw_defect,
    };
    if level != Level::Curvature {
        pkg.drm = Some(covariant_derivative(&pkg.rm, &pkg.gamma, order)?);
        pkg.drc = Some(covariant_derivative(&pkg.rc, &pkg.gamma, order)?);
    }
    if level == Level::SecondDerivatives {
        pkg.ddrm = Some(covariant_derivative(pkg.drm.as_ref().unwrap(), &pkg.gamma, order)?);
        pkg.ddrc = Some(covariant_derivative(pkg.drc.as_ref().unwrap(), &pkg.gamma, order)?);
    }
    Ok(pkg)
}

/// `R_{ijkl} = g(R(∂_i, ∂_j)∂_k, ∂_l)` with `R(X,Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_{[X,Y]}`.
pub fn riemann_from_connection<T: Real>(
    metric: &MetricField<T>,
    gamma: &TensorField<T>,
    order: Order,
) -> Result<TensorField<T>> {
    let n = metric.dim();
    let dgam = gradient(gamma, order)?;
    let mut rm = TensorField::covariant(metric.chart().clone(), 4);
    let mut up = vec![T::zero(); n * n * n * n];
    let n3 = n * n * n;
    for p in 0..metric.chart().npoints() {
        let d = dgam.at(p);
        let gm = gamma.at(p);
        let g = metric.g().at(p);
        // up[l][i][j][k] = R^l_{ijk}
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut v = d[i * n3 + (l * n + j) * n + k] - d[j * n3 + (l * n + i) * n + k];
                        for q in 0..n {
                            v += gm[(l * n + i) * n + q] * gm[(q * n + j) * n + k]
                                - gm[(l * n + j) * n + q] * gm[(q * n + i) * n + k];
                        }
                        up[((l * n + i) * n + j) * n + k] = v;
                    }
                }
            }
        }
        let o = rm.at_mut(p);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut v = T::zero();
                        for m in 0..n {
                            v += g[l * n + m] * up[((m * n + i) * n + j) * n + k];
                        }
                        o[((i * n + j) * n + k) * n + l] = v;
                    }
                }
            }
        }
    }
    Ok(rm)
}

/// Projects a 4-tensor onto algebraic curvature tensors.
pub fn symmetrize_riemann<T: Real>(x: &TensorField<T>) -> TensorField<T> {
    let half = T::lit(0.5);
    let a = x.sub(&x.permute(&[1, 0, 2, 3])).scale(half);
    let b = a.sub(&a.permute(&[0, 1, 3, 2])).scale(half);
    let c = b.add(&b.permute(&[2, 3, 0, 1])).scale(half);
    let cyc = c.add(&c.permute(&[1, 2, 0, 3])).add(&c.permute(&[2, 0, 1, 3]));
    c.sub(&cyc.scale(T::lit(1.0 / 3.0))).with_symmetries(riemann_symmetries())
}

/// `Rc_{jk} = g^{il} R_{ijkl}`.
pub fn ricci_from_riemann<T: Real>(rm: &TensorField<T>, metric: &MetricField<T>) -> TensorField<T> {
    contract_g(rm, 0, 3, metric).permute(&[0, 1]).with_symmetries(vec![Symmetry::Symmetric(0, 1)])
}

/// Contracts slots `s1 < s2` of a covariant field with `g^{-1}`.
pub fn contract_g<T: Real>(x: &TensorField<T>, s1: usize, s2: usize, metric: &MetricField<T>) -> TensorField<T> {
    let n = x.dim();
    let k = x.rank();
    let mut out = TensorField::covariant(x.chart().clone(), k - 2);
    for p in 0..x.chart().npoints() {
        let gi = metric.ginv().at(p).to_vec();
        block::contract(x.at(p), k, n, s1, s2, &gi, out.at_mut(p));
    }
    out
}

pub fn trace_g<T: Real>(x: &TensorField<T>, metric: &MetricField<T>) -> TensorField<T> {
    contract_g(x, 0, 1, metric)
}

impl<T: Real> GeometryPackage<T> {
    pub fn chart(&self) -> &Arc<ProductChart> {
        self.metric.chart()
    }

    pub fn drc(&self) -> &TensorField<T> {
        self.drc.as_ref().expect("curvature suite computed without first derivatives")
    }

    pub fn drm(&self) -> &TensorField<T> {
        self.drm.as_ref().expect("curvature suite computed without first derivatives")
    }

    /// `E_{ijk} = ∇_k R_{ij} − ∇_j R_{ik}`.
    pub fn e_tensor(&self) -> TensorField<T> {
        let d = self.drc();
        d.permute(&[2, 0, 1]).sub(&d.permute(&[1, 0, 2]))
    }

    /// `∇_p R_{pj} − ½ ∇_j R` as a covector field.
    pub fn contracted_bianchi_residual(&self) -> Result<TensorField<T>> {
        let div = contract_g(self.drc(), 0, 1, &self.metric);
        let dr = covariant_derivative(&self.r, &self.gamma, self.order)?;
        Ok(div.sub(&dr.scale(T::lit(0.5))))
    }

    pub fn norm(&self, x: &TensorField<T>) -> NormSummary<T> {
        tensor_norm(x, &self.metric).1
    }
}
