//! Ricci flow integration, backward relabelling, evolving splittings and `D_τ`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chart::{Axis, ProductChart};
use crate::error::{Error, Result};
use crate::fd::{derivative_on_axis, gradient, Order};
use crate::geometry::{covariant_derivative, curvature_suite, Level, MetricField};
use crate::linalg;
use crate::scalar::Real;
use crate::splitting::{OrthogonalSplitting, Residual};
use crate::tensor::{block, Slot, TensorField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ForwardT,
    BackwardTau,
}

/// Right-hand side of the metric evolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FlowVariant {
    /// `∂_t g = −2 Rc`.
    #[default]
    Ricci,
    /// `∂_t g = −2 Rc − 2m ∇∇u` with `u = (1/2m) log det g_fiber`: Ricci flow composed with the
    /// diffeomorphisms generated by `m ∇u`, the gauge of the reduced warped system.
    FiberGauge,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowConfig {
    pub t_final: f64,
    /// Fixed step; when absent the step comes from `cfl`.
    pub dt: Option<f64>,
    pub cfl: f64,
    /// Steps between stored snapshots; when absent snapshots are spaced by about `h²`.
    pub stride: Option<usize>,
    pub order: Order,
    pub variant: FlowVariant,
}

impl FlowConfig {
    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = Some(stride);
        self
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { t_final: 0.1, dt: None, cfl: 0.1, stride: None, order: Order::Fourth, variant: FlowVariant::Ricci }
    }
}

/// Snapshots of a metric flow on a fixed chart.
#[derive(Clone, Debug)]
pub struct FlowSeries<T> {
    pub chart: Arc<ProductChart>,
    pub order: Order,
    pub direction: Direction,
    /// `t_j` for forward series, `τ_j` for backward ones; uniformly spaced and increasing.
    pub times: Vec<f64>,
    pub metrics: Vec<MetricField<T>>,
    pub ricci: Vec<TensorField<T>>,
    pub splittings: Option<Vec<OrthogonalSplitting<T>>>,
    /// Final forward time.
    pub omega: f64,
    /// Integrator step used to produce the series.
    pub dt: f64,
    /// Reason the integration stopped early, if it did.
    pub truncated: Option<String>,
}

impl<T: Real> FlowSeries<T> {
    /// Builds a series from given snapshots, computing the Ricci tensor of each.
    pub fn from_metrics(
        times: Vec<f64>,
        metrics: Vec<MetricField<T>>,
        direction: Direction,
        order: Order,
        dt: f64,
    ) -> Result<Self> {
        if times.len() != metrics.len() || times.is_empty() {
            return Err(Error::Series("times and snapshots must match and be non-empty".into()));
        }
        let chart = metrics[0].chart().clone();
        let ricci = metrics
            .iter()
            .map(|g| Ok(curvature_suite(g, order, Level::Curvature)?.rc))
            .collect::<Result<Vec<_>>>()?;
        let omega = *times.last().unwrap();
        Ok(FlowSeries { chart, order, direction, times, metrics, ricci, splittings: None, omega, dt, truncated: None })
    }

    pub fn len(&self) -> usize {
        self.metrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty()
    }

    /// Spacing between consecutive snapshots.
    pub fn step(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }
}

/// Largest step with `dt · max_p Σ_a g^{aa}/h_a² ≤ cfl`.
pub fn stable_dt<T: Real>(metric: &MetricField<T>, cfl: f64) -> f64 {
    let chart = metric.chart();
    let n = chart.dim();
    let mut worst = 0.0f64;
    for p in 0..chart.npoints() {
        let gi = metric.ginv().at(p);
        let s: f64 = (0..n).map(|a| gi[a * n + a].f64() / chart.axis(a).spacing().powi(2)).sum();
        worst = worst.max(s);
    }
    cfl / worst
}

/// `u = (1/2m) log det g_fiber`, the log warp factor of the fiber axes.
pub fn log_warp<T: Real>(metric: &MetricField<T>) -> Result<TensorField<T>> {
    let chart = metric.chart();
    let axes = chart.fiber_axes();
    let (n, m) = (chart.dim(), axes.len());
    if m == 0 {
        return Err(Error::Model("log warp needs fiber axes".into()));
    }
    let mut u = TensorField::scalar(chart.clone());
    let mut block = vec![T::zero(); m * m];
    for p in 0..chart.npoints() {
        let g = metric.g().at(p);
        for (i, &a) in axes.iter().enumerate() {
            for (j, &b) in axes.iter().enumerate() {
                block[i * m + j] = g[a * n + b];
            }
        }
        let l = linalg::cholesky(m, &block).ok_or(Error::DegenerateFiber { point: p })?;
        let logdet: T = (0..m).fold(T::zero(), |acc, i| acc + l[i * m + i].ln());
        // log det = 2 Σ log L_ii
        u.data_mut()[p] = logdet / T::lit(m as f64);
    }
    Ok(u)
}

/// `∂_t g` for the chosen variant.
pub fn flow_rhs<T: Real>(metric: &MetricField<T>, order: Order, variant: FlowVariant) -> Result<TensorField<T>> {
    let geom = curvature_suite(metric, order, Level::Curvature)?;
    let mut rhs = geom.rc.scale(T::lit(-2.0));
    if variant == FlowVariant::FiberGauge {
        let m = metric.chart().fiber_axes().len() as f64;
        let u = log_warp(metric)?;
        let hess = covariant_derivative(&gradient(&u, order)?, &geom.gamma, order)?;
        // symmetrize away the truncation-level antisymmetric part
        let hess = hess.add(&hess.permute(&[1, 0])).scale(T::lit(0.5));
        rhs.axpy(T::lit(-2.0 * m), &hess);
    }
    Ok(rhs)
}

fn metric_plus<T: Real>(g: &MetricField<T>, c: f64, k: &TensorField<T>) -> Result<MetricField<T>> {
    let mut d = g.g().clone();
    d.axpy(T::lit(c), k);
    MetricField::new(d)
}

/// Explicit four-stage integration of the metric flow with snapshots at a fixed stride.
///
/// Loss of positive definiteness truncates the series; the reason is kept in `truncated`.
pub fn ricci_flow_evolve<T: Real>(g0: &MetricField<T>, cfg: &FlowConfig) -> Result<FlowSeries<T>> {
    if !(cfg.t_final > 0.0) {
        return Err(Error::Series("final time must be positive".into()));
    }
    let dt_max = cfg.dt.unwrap_or_else(|| stable_dt(g0, cfg.cfl));
    let steps = (cfg.t_final / dt_max).ceil().max(1.0) as usize;
    let stride = cfg
        .stride
        .unwrap_or_else(|| {
            let chart = g0.chart();
            let h = (0..chart.dim()).map(|a| chart.axis(a).spacing()).fold(f64::INFINITY, f64::min);
            (h * h / dt_max).round() as usize
        })
        .clamp(1, steps);
    // whole number of strides keeps the snapshots uniformly spaced
    let steps = steps.div_ceil(stride) * stride;
    let dt = cfg.t_final / steps as f64;
    let mut times = vec![0.0];
    let mut metrics = vec![g0.clone()];
    let mut g = g0.clone();
    let mut truncated = None;
    for step in 1..=steps {
        let advanced = (|| -> Result<MetricField<T>> {
            let k1 = flow_rhs(&g, cfg.order, cfg.variant)?;
            let k2 = flow_rhs(&metric_plus(&g, 0.5 * dt, &k1)?, cfg.order, cfg.variant)?;
            let k3 = flow_rhs(&metric_plus(&g, 0.5 * dt, &k2)?, cfg.order, cfg.variant)?;
            let k4 = flow_rhs(&metric_plus(&g, dt, &k3)?, cfg.order, cfg.variant)?;
            let mut d = g.g().clone();
            d.axpy(T::lit(dt / 6.0), &k1);
            d.axpy(T::lit(dt / 3.0), &k2);
            d.axpy(T::lit(dt / 3.0), &k3);
            d.axpy(T::lit(dt / 6.0), &k4);
            MetricField::new(d)
        })();
        match advanced {
            Ok(next) => g = next,
            Err(e @ (Error::SingularMetric { .. } | Error::DegenerateFiber { .. } | Error::Asymmetric { .. })) => {
                truncated = Some(format!("stopped at t = {:.6}: {e}", (step - 1) as f64 * dt));
                break;
            }
            Err(e) => return Err(e),
        }
        if step % stride == 0 {
            times.push(step as f64 * dt);
            metrics.push(g.clone());
        }
    }
    let mut series = FlowSeries::from_metrics(times, metrics, Direction::ForwardT, cfg.order, dt)?;
    series.omega = if truncated.is_some() { *series.times.last().unwrap() } else { cfg.t_final };
    series.truncated = truncated;
    Ok(series)
}

/// Relabels a forward series by `τ = Ω − t`; snapshots are reordered so `τ` increases.
pub fn to_backward_series<T: Real>(series: &FlowSeries<T>, omega: Option<f64>) -> Result<FlowSeries<T>> {
    let omega = omega.unwrap_or(series.omega);
    let mut out = series.clone();
    out.metrics.reverse();
    out.ricci.reverse();
    if let Some(s) = out.splittings.as_mut() {
        s.reverse();
    }
    match series.direction {
        Direction::ForwardT => {
            out.times = series.times.iter().rev().map(|t| omega - t).collect();
            out.direction = Direction::BackwardTau;
        }
        Direction::BackwardTau => {
            out.times = series.times.iter().rev().map(|tau| omega - tau).collect();
            out.direction = Direction::ForwardT;
        }
    }
    out.omega = omega;
    Ok(out)
}

/// Central-difference time derivative of a snapshot sequence; one-sided second order at the ends.
pub fn time_derivative<T: Real>(fields: &[TensorField<T>], step: f64) -> Result<Vec<TensorField<T>>> {
    let k = fields.len();
    if k < 3 {
        return Err(Error::Series("time derivatives need at least three snapshots".into()));
    }
    let inv = T::lit(1.0 / (2.0 * step));
    Ok((0..k)
        .map(|j| {
            let d = if j == 0 {
                fields[1].scale(T::lit(4.0)).sub(&fields[0].scale(T::lit(3.0))).sub(&fields[2])
            } else if j == k - 1 {
                fields[k - 1].scale(T::lit(3.0)).sub(&fields[k - 2].scale(T::lit(4.0))).add(&fields[k - 3])
            } else {
                fields[j + 1].sub(&fields[j - 1])
            };
            d.scale(inv)
        })
        .collect())
}

/// `R^c_b = g^{cd} R_{db}` as a (1,1) field stored `[c n + b]`.
fn raised_ricci<T: Real>(rc: &TensorField<T>, metric: &MetricField<T>) -> TensorField<T> {
    let n = metric.dim();
    let mut out = TensorField::zeros(rc.chart().clone(), vec![Slot::Contra, Slot::Co]);
    for p in 0..rc.chart().npoints() {
        let (gi, r) = (metric.ginv().at(p), rc.at(p));
        let o = out.at_mut(p);
        for c in 0..n {
            for b in 0..n {
                o[c * n + b] = (0..n).fold(T::zero(), |acc, d| acc + gi[c * n + d] * r[d * n + b]);
            }
        }
    }
    out
}

/// `D_τ W_b = ∂_τ W_b − Σ_i R_{b_i}^c W_{..c..}` for fully covariant snapshots of a backward series.
pub fn material_derivative<T: Real>(series: &FlowSeries<T>, fields: &[TensorField<T>]) -> Result<Vec<TensorField<T>>> {
    if series.direction != Direction::BackwardTau {
        return Err(Error::Series("the material derivative is taken along backward series".into()));
    }
    if fields.len() != series.len() {
        return Err(Error::Series("one field per snapshot required".into()));
    }
    if fields.iter().any(|f| !f.is_covariant()) {
        return Err(Error::Slots("material derivative expects covariant fields".into()));
    }
    let mut out = time_derivative(fields, series.step())?;
    let n = series.chart.dim();
    for (j, d) in out.iter_mut().enumerate() {
        let w = &fields[j];
        let rup = raised_ricci(&series.ricci[j], &series.metrics[j]);
        let k = w.rank();
        let nc = w.ncomp();
        let mut tmp = vec![T::zero(); nc];
        for p in 0..series.chart.npoints() {
            let src = w.at(p);
            let r = rup.at(p);
            for s in 0..k {
                block::precompose(src, k, n, s, r, &mut tmp);
                for (o, t) in d.at_mut(p).iter_mut().zip(&tmp) {
                    *o -= *t;
                }
            }
        }
    }
    Ok(out)
}

/// Per-snapshot `∂_τ g − 2 Rc` of a backward series (forward: `∂_t g + 2 Rc`).
pub fn flow_equation_residuals<T: Real>(series: &FlowSeries<T>) -> Result<Vec<Residual>> {
    let gs: Vec<TensorField<T>> = series.metrics.iter().map(|g| g.g().clone()).collect();
    let dg = time_derivative(&gs, series.step())?;
    let sign = match series.direction {
        Direction::BackwardTau => -2.0,
        Direction::ForwardT => 2.0,
    };
    Ok(dg
        .iter()
        .zip(&series.ricci)
        .zip(&series.metrics)
        .map(|((d, rc), g)| {
            let mut r = d.clone();
            r.axpy(T::lit(sign), rc);
            Residual::of(&r, g)
        })
        .collect())
}

/// Integrates `∂_τ V = V R − R V` (matrices `V^j_i`, `R^c_i`) along a backward series.
///
/// The Ricci tensor between snapshots is interpolated with cubic Lagrange weights.
pub fn evolve_splitting<T: Real>(series: &mut FlowSeries<T>, v0: &OrthogonalSplitting<T>, tol: f64) -> Result<()> {
    if series.direction != Direction::BackwardTau {
        return Err(Error::Series("splittings are evolved along backward series".into()));
    }
    let n = series.chart.dim();
    let m = v0.m();
    let k = series.len();
    let rups: Vec<TensorField<T>> =
        (0..k).map(|j| raised_ricci(&series.ricci[j], &series.metrics[j])).collect();
    let mid = |j: usize| -> TensorField<T> {
        let (w, idx): (Vec<f64>, Vec<usize>) = if k == 2 {
            (vec![0.5, 0.5], vec![0, 1])
        } else if j == 0 {
            (vec![0.375, 0.75, -0.125], vec![0, 1, 2])
        } else if j + 2 >= k {
            (vec![-0.125, 0.75, 0.375], vec![j - 1, j, j + 1])
        } else {
            (vec![-0.0625, 0.5625, 0.5625, -0.0625], vec![j - 1, j, j + 1, j + 2])
        };
        let mut acc = rups[idx[0]].scale(T::lit(w[0]));
        for (wi, &i) in w.iter().zip(&idx).skip(1) {
            acc.axpy(T::lit(*wi), &rups[i]);
        }
        acc
    };
    let rhs = |v: &TensorField<T>, r: &TensorField<T>| -> TensorField<T> {
        let mut out = TensorField::zeros(v.chart().clone(), v.slots().to_vec());
        for p in 0..v.chart().npoints() {
            let (vp, rp) = (v.at(p), r.at(p));
            let vr = linalg::matmul(n, vp, rp);
            let rv = linalg::matmul(n, rp, vp);
            for (o, (a, b)) in out.at_mut(p).iter_mut().zip(vr.iter().zip(&rv)) {
                *o = *a - *b;
            }
        }
        out
    };
    let dtau = series.step();
    let mut v = v0.v().clone();
    let mut out = vec![OrthogonalSplitting::from_vertical(&series.metrics[0], v.clone(), m)?];
    for j in 0..k.saturating_sub(1) {
        let rm = mid(j);
        let k1 = rhs(&v, &rups[j]);
        let mut s = v.clone();
        s.axpy(T::lit(0.5 * dtau), &k1);
        let k2 = rhs(&s, &rm);
        let mut s = v.clone();
        s.axpy(T::lit(0.5 * dtau), &k2);
        let k3 = rhs(&s, &rm);
        let mut s = v.clone();
        s.axpy(T::lit(dtau), &k3);
        let k4 = rhs(&s, &rups[j + 1]);
        v.axpy(T::lit(dtau / 6.0), &k1);
        v.axpy(T::lit(dtau / 3.0), &k2);
        v.axpy(T::lit(dtau / 3.0), &k3);
        v.axpy(T::lit(dtau / 6.0), &k4);
        let split = OrthogonalSplitting::from_vertical(&series.metrics[j + 1], v.clone(), m)?;
        let d = split.defects();
        if d.idempotent.max(d.orthogonal) > tol {
            return Err(Error::FlowBreakdown {
                time: series.times[j + 1],
                reason: format!("projection defect {:.3e} exceeds {tol:.1e}", d.idempotent.max(d.orthogonal)),
            });
        }
        out.push(symmetrized(&series.metrics[j + 1], &split)?);
    }
    series.splittings = Some(out);
    Ok(())
}

/// Stored copy with `H_{ij}` symmetrized; the integrated state keeps its own drift.
fn symmetrized<T: Real>(metric: &MetricField<T>, split: &OrthogonalSplitting<T>) -> Result<OrthogonalSplitting<T>> {
    let h = split.h_low();
    let h = h.add(&h.permute(&[1, 0])).scale(T::lit(0.5));
    OrthogonalSplitting::from_lowered_horizontal(metric, h, split.m())
}

// ---------------------------------------------------------------------------------------------
// Reduced warped system

/// Sign `σ` in the reaction term `−λ e^{2σũ}` of the reduced warped system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExponentSign {
    Plus,
    Minus,
}

impl ExponentSign {
    pub fn value(self) -> f64 {
        match self {
            ExponentSign::Plus => 1.0,
            ExponentSign::Minus => -1.0,
        }
    }
}

/// Base metric coefficient `g̃ = φ ds²` and `ũ = log h` on a one-dimensional base grid.
#[derive(Clone, Debug, Serialize)]
pub struct ReducedWarpedState {
    pub phi: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: f64,
    pub m: usize,
}

#[derive(Clone, Debug)]
pub struct ReducedSeries {
    pub base: Axis,
    pub times: Vec<f64>,
    pub states: Vec<ReducedWarpedState>,
    pub sign: ExponentSign,
    pub dt: f64,
}

/// Initial reduced state of a single-fiber spec.
pub fn reduced_state_from_spec(
    spec: &crate::models::WarpedModelSpec,
    base_points: usize,
) -> Result<(Axis, ReducedWarpedState)> {
    if spec.fibers.len() != 1 {
        return Err(Error::Model("the reduced system takes one fiber".into()));
    }
    spec.validate()?;
    let base = spec.base_axis(base_points);
    let f = &spec.fibers[0];
    let s: Vec<f64> = (0..base_points).map(|i| base.coord(i)).collect();
    let phi = s.iter().map(|&x| spec.base.phi.at(x)).collect();
    let u = s
        .iter()
        .map(|&x| {
            let h = f.warp.at(x);
            if h <= 0.0 {
                Err(Error::Model(format!("warp factor {h} at s = {x} is not positive")))
            } else {
                Ok(h.ln())
            }
        })
        .collect::<Result<_>>()?;
    Ok((base, ReducedWarpedState { phi, u, lambda: f.lambda, m: f.dim }))
}

fn d1(base: &Axis, v: &[f64], order: Order) -> Result<Vec<f64>> {
    derivative_on_axis(v, base, order)
}

/// `(∂_t φ, ∂_t ũ) = (2m ũ'², Δ̃ũ − λ e^{2σũ})` on a one-dimensional base, where `Rc(g̃) = 0`.
pub fn reduced_rhs(
    base: &Axis,
    st: &ReducedWarpedState,
    sign: ExponentSign,
    order: Order,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let u1 = d1(base, &st.u, order)?;
    // Δ̃u = φ^{-1/2} (φ^{-1/2} u')'
    let flux: Vec<f64> = u1.iter().zip(&st.phi).map(|(a, p)| a / p.sqrt()).collect();
    let flux1 = d1(base, &flux, order)?;
    let m = st.m as f64;
    let dphi = u1.iter().map(|a| 2.0 * m * a * a).collect();
    let du = flux1
        .iter()
        .zip(&st.phi)
        .zip(&st.u)
        .map(|((f, p), u)| f / p.sqrt() - st.lambda * (2.0 * sign.value() * u).exp())
        .collect();
    Ok((dphi, du))
}

fn state_axpy(st: &ReducedWarpedState, c: f64, k: &(Vec<f64>, Vec<f64>)) -> ReducedWarpedState {
    ReducedWarpedState {
        phi: st.phi.iter().zip(&k.0).map(|(a, b)| a + c * b).collect(),
        u: st.u.iter().zip(&k.1).map(|(a, b)| a + c * b).collect(),
        lambda: st.lambda,
        m: st.m,
    }
}

/// Four-stage integration of the reduced system; snapshots every `stride` steps.
pub fn reduced_flow_evolve(
    base: &Axis,
    state0: &ReducedWarpedState,
    t_final: f64,
    dt: f64,
    stride: usize,
    sign: ExponentSign,
    order: Order,
) -> Result<ReducedSeries> {
    let steps = (t_final / dt).ceil().max(1.0) as usize;
    let stride = stride.clamp(1, steps);
    let steps = steps.div_ceil(stride) * stride;
    let dt = t_final / steps as f64;
    let mut st = state0.clone();
    let mut times = vec![0.0];
    let mut states = vec![st.clone()];
    for step in 1..=steps {
        let k1 = reduced_rhs(base, &st, sign, order)?;
        let k2 = reduced_rhs(base, &state_axpy(&st, 0.5 * dt, &k1), sign, order)?;
        let k3 = reduced_rhs(base, &state_axpy(&st, 0.5 * dt, &k2), sign, order)?;
        let k4 = reduced_rhs(base, &state_axpy(&st, dt, &k3), sign, order)?;
        let mut next = st.clone();
        for (i, x) in next.phi.iter_mut().enumerate() {
            *x += dt / 6.0 * (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i]);
        }
        for (i, x) in next.u.iter_mut().enumerate() {
            *x += dt / 6.0 * (k1.1[i] + 2.0 * k2.1[i] + 2.0 * k3.1[i] + k4.1[i]);
        }
        let t = step as f64 * dt;
        if next.u.iter().chain(&next.phi).any(|v| !v.is_finite()) || next.phi.iter().any(|&p| p <= 0.0) {
            return Err(Error::FlowBreakdown { time: t, reason: "reduced state lost positivity or blew up".into() });
        }
        st = next;
        if step % stride == 0 {
            times.push(t);
            states.push(st.clone());
        }
    }
    Ok(ReducedSeries { base: base.clone(), times, states, sign, dt })
}

/// `g = φ ds² + e^{2ũ} δ` on a chart whose base axis matches the reduced grid.
pub fn assemble_metric<T: Real>(st: &ReducedWarpedState, chart: &Arc<ProductChart>) -> Result<MetricField<T>> {
    let n = chart.dim();
    let fibers = chart.fiber_axes();
    let mut g = TensorField::covariant(chart.clone(), 2);
    for p in 0..chart.npoints() {
        let i = chart.index_along(p, 0);
        let b = g.at_mut(p);
        b[0] = T::lit(st.phi[i]);
        for &a in &fibers {
            b[a * n + a] = T::lit((2.0 * st.u[i]).exp());
        }
    }
    MetricField::new(g)
}

/// Assembles every reduced snapshot onto `chart` as a forward series.
pub fn assemble_series<T: Real>(reduced: &ReducedSeries, chart: &Arc<ProductChart>, order: Order) -> Result<FlowSeries<T>> {
    if *chart.axis(0) != reduced.base {
        return Err(Error::Model("chart base axis differs from the reduced grid".into()));
    }
    let metrics = reduced.states.iter().map(|s| assemble_metric(s, chart)).collect::<Result<Vec<_>>>()?;
    FlowSeries::from_metrics(reduced.times.clone(), metrics, Direction::ForwardT, order, reduced.dt)
}

/// Cylinder oracle for `σ`: spatially constant `ũ`, `λ = m − 1`, exact `h²(t) = h₀² − 2(m − 1)t`.
#[derive(Clone, Debug, Serialize)]
pub struct SignResolution {
    pub chosen: ExponentSign,
    pub error_plus: f64,
    pub error_minus: f64,
}

pub fn round_cylinder_h2(m: usize, h0: f64, t: f64) -> f64 {
    h0 * h0 - 2.0 * (m as f64 - 1.0) * t
}

/// Backward fiber scale `k(τ) = k(Ω) + 2(m − 1)(τ − Ω)` of the round cylinder.
pub fn round_cylinder_backward_scale(m: usize, k_omega: f64, omega: f64, tau: f64) -> f64 {
    k_omega + 2.0 * (m as f64 - 1.0) * (tau - omega)
}

pub fn resolve_exponent_sign(m: usize, h0: f64, t_final: f64, dt: f64) -> Result<SignResolution> {
    let spec = crate::models::WarpedModelSpec::reduced_round_cone(m);
    spec.validate()?;
    let base = spec.base_axis(16);
    let st = ReducedWarpedState { phi: vec![1.0; 16], u: vec![h0.ln(); 16], lambda: m as f64 - 1.0, m };
    let err = |sign| -> Result<f64> {
        let series = reduced_flow_evolve(&base, &st, t_final, dt, 1, sign, Order::Fourth)?;
        Ok(series
            .times
            .iter()
            .zip(&series.states)
            .map(|(&t, s)| ((2.0 * s.u[0]).exp() - round_cylinder_h2(m, h0, t)).abs())
            .fold(0.0, f64::max))
    };
    let (error_plus, error_minus) = (err(ExponentSign::Plus)?, err(ExponentSign::Minus)?);
    let chosen = if error_minus <= error_plus { ExponentSign::Minus } else { ExponentSign::Plus };
    Ok(SignResolution { chosen, error_plus, error_minus })
}

/// Pulls the reduced solution back along `∂_t x = m ∇̃ũ(x)` on a periodic base, giving the
/// pair `(ǧ, u)` of the ungauged system as base coefficient and log warp on the original grid.
pub fn pull_back_gauge(reduced: &ReducedSeries, order: Order) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let ax = reduced.base.clone();
    if !ax.periodic {
        return Err(Error::Model("the gauge pull-back is implemented for circle bases".into()));
    }
    let np = ax.points;
    let h = ax.spacing();
    let m = reduced.states[0].m as f64;
    // periodic cubic Lagrange interpolation
    let interp = |v: &[f64], x: f64| -> f64 {
        let y = (x - ax.lo) / h;
        let i = y.floor();
        let t = y - i;
        let i = i as isize;
        let at = |k: isize| v[(i + k).rem_euclid(np as isize) as usize];
        let w = [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ];
        w[0] * at(-1) + w[1] * at(0) + w[2] * at(1) + w[3] * at(2)
    };
    let velocity = |st: &ReducedWarpedState| -> Result<Vec<f64>> {
        let u1 = d1(&reduced.base, &st.u, order)?;
        Ok(u1.iter().zip(&st.phi).map(|(a, p)| m * a / p).collect())
    };
    let mut x: Vec<f64> = (0..np).map(|i| ax.coord(i)).collect();
    let mut out = Vec::with_capacity(reduced.states.len());
    let push = |x: &[f64], st: &ReducedWarpedState, out: &mut Vec<(Vec<f64>, Vec<f64>)>| -> Result<()> {
        // x(s) − s is periodic, so differentiate the displacement
        let disp: Vec<f64> = x.iter().enumerate().map(|(i, xi)| xi - ax.coord(i)).collect();
        let ddisp = d1(&reduced.base, &disp, order)?;
        let gcheck = (0..np).map(|i| (1.0 + ddisp[i]).powi(2) * interp(&st.phi, x[i])).collect();
        let u = (0..np).map(|i| interp(&st.u, x[i])).collect();
        out.push((gcheck, u));
        Ok(())
    };
    push(&x, &reduced.states[0], &mut out)?;
    for j in 1..reduced.states.len() {
        let dt = reduced.times[j] - reduced.times[j - 1];
        let (a, b) = (&reduced.states[j - 1], &reduced.states[j]);
        let (va, vb) = (velocity(a)?, velocity(b)?);
        let vmid: Vec<f64> = va.iter().zip(&vb).map(|(p, q)| 0.5 * (p + q)).collect();
        let f = |v: &[f64], pos: &[f64]| -> Vec<f64> { pos.iter().map(|&p| interp(v, p)).collect() };
        let k1 = f(&va, &x);
        let x2: Vec<f64> = x.iter().zip(&k1).map(|(p, k)| p + 0.5 * dt * k).collect();
        let k2 = f(&vmid, &x2);
        let x3: Vec<f64> = x.iter().zip(&k2).map(|(p, k)| p + 0.5 * dt * k).collect();
        let k3 = f(&vmid, &x3);
        let x4: Vec<f64> = x.iter().zip(&k3).map(|(p, k)| p + dt * k).collect();
        let k4 = f(&vb, &x4);
        for i in 0..np {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        push(&x, b, &mut out)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------------------
// Exact solutions

/// Constant flat metric `δ` at the given times.
pub fn static_flat_series<T: Real>(chart: &Arc<ProductChart>, times: Vec<f64>, order: Order) -> Result<FlowSeries<T>> {
    let n = chart.dim();
    let g = TensorField::from_fn(chart.clone(), vec![Slot::Co, Slot::Co], |_: &[f64], b: &mut [T]| {
        for a in 0..n {
            b[a * n + a] = T::one();
        }
    });
    let g = MetricField::new(g)?;
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    let metrics = vec![g; times.len()];
    FlowSeries::from_metrics(times, metrics, Direction::ForwardT, order, dt)
}

/// Metadata of a self-similar backward solution.
#[derive(Clone, Debug, Serialize)]
pub struct SelfSimilarSpec {
    pub cone: crate::models::WarpedModelSpec,
    /// Inner radius of the region considered.
    pub r0: f64,
    /// Bound for `|N| = m/r` on `r ≥ r₀`.
    pub n0: f64,
    /// Curvature bound; zero for the flat cone.
    pub k0: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfSimilarReport {
    /// `sup |τ Φ_τ* ĝ − ĝ|` over the sample points and times.
    pub pullback_defect: f64,
    /// `sup |τ ∂_r f − r/2|` with `f = r²/(4τ)`, differentiated on the grid.
    pub potential_defect: f64,
    /// `sup |Rc + ∇∇f − g/(2τ)|` on the grid.
    pub soliton_residual: f64,
}

/// The flat cone `dr² + r² dθ²` as the self-similar family `g(τ) = τ Φ_τ* ĝ` with `Φ_τ(r, θ) = (r/√τ, θ)`.
pub fn flat_cone_self_similar(
    spec: &SelfSimilarSpec,
    chart: &Arc<ProductChart>,
    taus: &[f64],
    order: Order,
) -> Result<(FlowSeries<f64>, SelfSimilarReport)> {
    use crate::models::sample_metric;
    let cone = &spec.cone;
    if cone.fibers.len() != 1 || cone.fibers[0].lambda != 0.0 {
        return Err(Error::Model("self-similar family is implemented for the flat cone".into()));
    }
    let g = sample_metric::<f64>(cone, chart)?;
    let n = chart.dim();
    let f = &cone.fibers[0];
    let mut pullback = 0.0f64;
    let mut potential = 0.0f64;
    let mut soliton = 0.0f64;
    let geom = curvature_suite(&g, order, Level::Curvature)?;
    for &tau in taus {
        if tau <= 0.0 {
            return Err(Error::Series("self-similar times must be positive".into()));
        }
        let sq = tau.sqrt();
        for p in chart.interior_points() {
            let x = chart.coords(p);
            let r = x[0] / sq;
            // J = diag(1/√τ, 1, …); pulled-back components at Φ_τ(x)
            let grr = tau * cone.base.phi.at(r) / tau;
            let gff = tau * f.warp.at(r).powi(2);
            let b = g.g().at(p);
            pullback = pullback.max((grr - b[0]).abs());
            for a in 1..n {
                pullback = pullback.max((gff - b[a * n + a]).abs());
            }
        }
        let fpot = TensorField::from_fn(chart.clone(), vec![], |x: &[f64], o: &mut [f64]| {
            o[0] = x[0] * x[0] / (4.0 * tau)
        });
        let df = gradient(&fpot, order)?;
        for p in chart.interior_points() {
            let r = chart.coords(p)[0];
            potential = potential.max((tau * df.at(p)[0] - r / 2.0).abs());
        }
        let hess = covariant_derivative(&df, &geom.gamma, order)?;
        let mut res = geom.rc.add(&hess);
        res.axpy(-1.0 / (2.0 * tau), g.g());
        soliton = soliton.max(Residual::of(&res, &g).sup);
    }
    let metrics = vec![g; taus.len()];
    let dt = if taus.len() > 1 { taus[1] - taus[0] } else { 0.0 };
    let mut series = FlowSeries::from_metrics(taus.to_vec(), metrics, Direction::BackwardTau, order, dt)?;
    series.omega = *taus.last().unwrap();
    Ok((series, SelfSimilarReport { pullback_defect: pullback, potential_defect: potential, soliton_residual: soliton }))
}

// ---------------------------------------------------------------------------------------------
// Snapshot export

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub index: usize,
    pub time: f64,
    pub metric_file: String,
    pub vertical_file: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesMetadata {
    pub schema_version: u32,
    pub direction: Direction,
    pub omega: f64,
    pub dt: f64,
    pub order: Order,
    pub chart: ProductChart,
    pub dim: usize,
    pub npoints: usize,
    /// Layout of each raw block.
    pub layout: String,
    pub vertical_rank: Option<usize>,
    pub truncated: Option<String>,
    pub snapshots: Vec<SnapshotRecord>,
}

const LAYOUT: &str = "little-endian f64; point-major with grid axis 0 slowest; per point n*n components, index i*n+j";

fn write_block<T: Real>(path: &Path, data: &[T]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * data.len());
    for v in data {
        bytes.extend_from_slice(&v.f64().to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_block(path: &Path, len: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    if bytes.len() != 8 * len {
        return Err(Error::Io(format!("{}: expected {} bytes, found {}", path.display(), 8 * len, bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Writes `series.json` and one raw block per snapshot (plus `V` blocks when splittings exist).
pub fn export_series<T: Real>(series: &FlowSeries<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut snapshots = Vec::new();
    for (j, (t, g)) in series.times.iter().zip(&series.metrics).enumerate() {
        let metric_file = format!("metric_{j:05}.bin");
        write_block(&dir.join(&metric_file), g.g().data())?;
        let vertical_file = match &series.splittings {
            Some(s) => {
                let name = format!("vertical_{j:05}.bin");
                write_block(&dir.join(&name), s[j].v().data())?;
                Some(name)
            }
            None => None,
        };
        snapshots.push(SnapshotRecord { index: j, time: *t, metric_file, vertical_file });
    }
    let meta = SeriesMetadata {
        schema_version: SNAPSHOT_SCHEMA_VERSION,
        direction: series.direction,
        omega: series.omega,
        dt: series.dt,
        order: series.order,
        chart: (*series.chart).clone(),
        dim: series.chart.dim(),
        npoints: series.chart.npoints(),
        layout: LAYOUT.into(),
        vertical_rank: series.splittings.as_ref().map(|s| s[0].m()),
        truncated: series.truncated.clone(),
        snapshots,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join("series.json"), text).map_err(|e| Error::Io(e.to_string()))
}

/// Reads a directory written by [`export_series`].
pub fn import_series(dir: &Path) -> Result<FlowSeries<f64>> {
    let text = fs::read_to_string(dir.join("series.json")).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let meta: SeriesMetadata = serde_json::from_str(&text).map_err(|e| Error::Io(e.to_string()))?;
    if meta.schema_version != SNAPSHOT_SCHEMA_VERSION {
        return Err(Error::Io(format!("unsupported schema version {}", meta.schema_version)));
    }
    let chart = Arc::new(meta.chart.clone());
    let len = meta.npoints * meta.dim * meta.dim;
    let mut metrics = Vec::new();
    let mut verticals = Vec::new();
    for rec in &meta.snapshots {
        let data = read_block(&dir.join(&rec.metric_file), len)?;
        metrics.push(MetricField::new(TensorField::from_data(chart.clone(), vec![Slot::Co, Slot::Co], data)?)?);
        if let Some(vf) = &rec.vertical_file {
            let data = read_block(&dir.join(vf), len)?;
            verticals.push(TensorField::from_data(chart.clone(), vec![Slot::Contra, Slot::Co], data)?);
        }
    }
    let times = meta.snapshots.iter().map(|r| r.time).collect();
    let mut series = FlowSeries::from_metrics(times, metrics, meta.direction, meta.order, meta.dt)?;
    series.omega = meta.omega;
    series.truncated = meta.truncated;
    if let Some(m) = meta.vertical_rank {
        let splits = verticals
            .into_iter()
            .zip(&series.metrics)
            .map(|(v, g)| OrthogonalSplitting::from_vertical(g, v, m))
            .collect::<Result<Vec<_>>>()?;
        series.splittings = Some(splits);
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{sample_metric, WarpedModelSpec};
    use crate::splitting::make_product_splitting;

    fn warped(points: usize) -> (WarpedModelSpec, Arc<ProductChart>, MetricField<f64>) {
        let spec = WarpedModelSpec::standard_warped(2);
        let chart = Arc::new(spec.chart_with(points, &[8, 8]).unwrap());
        let g = sample_metric::<f64>(&spec, &chart).unwrap();
        (spec, chart, g)
    }

    fn cfg(t_final: f64, dt: f64, variant: FlowVariant) -> FlowConfig {
        FlowConfig { t_final, dt: Some(dt), stride: Some(1), variant, ..FlowConfig::default() }
    }

    #[test]
    fn flat_metric_is_static() {
        let spec = WarpedModelSpec::product(2);
        let chart = Arc::new(spec.chart_with(8, &[8, 8]).unwrap());
        let g = sample_metric::<f64>(&spec, &chart).unwrap();
        let s = ricci_flow_evolve(&g, &cfg(0.02, 0.005, FlowVariant::Ricci)).unwrap();
        assert_eq!(s.len(), 5);
        for m in &s.metrics {
            assert!(m.g().sub(g.g()).max_abs() < 1e-14);
        }
    }

    #[test]
    fn warped_structure_is_preserved_and_splitting_is_parallel() {
        let (_, _, g) = warped(12);
        let fwd = ricci_flow_evolve(&g, &cfg(0.04, 0.01, FlowVariant::Ricci)).unwrap();
        assert!(fwd.truncated.is_none());
        let last = fwd.metrics.last().unwrap().g();
        for p in 0..last.chart().npoints() {
            let b = last.at(p);
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                assert!(b[i * 3 + j].abs() < 1e-12);
            }
            assert!((b[4] - b[8]).abs() < 1e-12);
        }
        let res = flow_equation_residuals(&fwd).unwrap();
        let rc = fwd.ricci.iter().map(|r| r.max_abs()).fold(0.0, f64::max);
        assert!(res.iter().all(|r| r.sup < 1e-2 * rc), "{res:?}");

        let mut bwd = to_backward_series(&fwd, None).unwrap();
        assert!((bwd.times[0]).abs() < 1e-15 && (bwd.times.last().unwrap() - 0.04).abs() < 1e-15);
        let v0 = make_product_splitting(&bwd.metrics[0]).unwrap();
        evolve_splitting(&mut bwd, &v0, 1e-8).unwrap();
        for s in bwd.splittings.as_ref().unwrap() {
            assert!(s.v().sub(v0.v()).max_abs() < 1e-12);
        }
        let gs: Vec<_> = bwd.metrics.iter().map(|m| m.g().clone()).collect();
        let dg = material_derivative(&bwd, &gs).unwrap();
        assert!(dg.iter().all(|d| d.max_abs() < 1e-2 * rc));

        let again = to_backward_series(&bwd, None).unwrap();
        assert_eq!(again.direction, Direction::ForwardT);
        for (a, b) in again.times.iter().zip(&fwd.times) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn perturbed_splitting_moves_and_stays_parallel() {
        use crate::models::{perturb, Perturbation};
        let (_, _, g) = warped(12);
        let g = perturb(&g, 0.2, Perturbation::OffBlock).unwrap();
        let fwd = ricci_flow_evolve(&g, &cfg(0.04, 0.005, FlowVariant::Ricci)).unwrap();
        let mut bwd = to_backward_series(&fwd, None).unwrap();
        let v0 = make_product_splitting(&bwd.metrics[0]).unwrap();
        evolve_splitting(&mut bwd, &v0, 1e-8).unwrap();
        let splits = bwd.splittings.clone().unwrap();
        assert!(splits.last().unwrap().v().sub(v0.v()).max_abs() > 1e-4);
        assert!(splits.iter().all(|s| s.defects().max() < 1e-8));
        let vl: Vec<_> = splits.iter().map(|s| s.v_low().clone()).collect();
        let dv = material_derivative(&bwd, &vl).unwrap();
        let rc = bwd.ricci.iter().map(|r| r.max_abs()).fold(0.0, f64::max);
        let worst = dv.iter().map(|d| d.max_abs()).fold(0.0, f64::max);
        assert!(worst < 1e-2 * rc, "{worst} {rc}");
    }

    #[test]
    fn material_derivative_needs_three_snapshots() {
        let (_, chart, _) = warped(8);
        let s = static_flat_series::<f64>(&chart, vec![0.0, 0.1], Order::Fourth).unwrap();
        let b = to_backward_series(&s, None).unwrap();
        let gs: Vec<_> = b.metrics.iter().map(|m| m.g().clone()).collect();
        assert!(matches!(material_derivative(&b, &gs), Err(Error::Series(_))));
    }

    #[test]
    fn exponent_sign_is_resolved_by_the_cylinder() {
        let r = resolve_exponent_sign(3, 2.0, 0.5, 0.01).unwrap();
        assert_eq!(r.chosen, ExponentSign::Minus);
        assert!(r.error_minus < 1e-8, "{r:?}");
        assert!(r.error_plus > 1e-2);
        assert_eq!(round_cylinder_backward_scale(3, 1.0, 0.5, 0.5), 1.0);
        assert!((round_cylinder_backward_scale(3, 1.0, 0.5, 0.75) - 2.0).abs() < 1e-15);
    }

    /// Sup distance at the final time between the full flow and the reduced system, gauged and pulled back.
    fn reduced_vs_full(points: usize) -> (f64, f64) {
        let (spec, chart, g) = warped(points);
        let (base, st) = reduced_state_from_spec(&spec, points).unwrap();
        let red = reduced_flow_evolve(&base, &st, 0.04, 0.0025, 4, ExponentSign::Minus, Order::Fourth).unwrap();
        let gauged = ricci_flow_evolve(&g, &cfg(0.04, 0.0025, FlowVariant::FiberGauge).with_stride(4)).unwrap();
        let assembled = assemble_series::<f64>(&red, &chart, Order::Fourth).unwrap();
        let gauge_err = assembled.metrics.last().unwrap().g().sub(gauged.metrics.last().unwrap().g()).max_abs();

        let pulled = pull_back_gauge(&red, Order::Fourth).unwrap();
        let plain = ricci_flow_evolve(&g, &cfg(0.04, 0.0025, FlowVariant::Ricci).with_stride(4)).unwrap();
        let (gc, u) = pulled.last().unwrap();
        let last = plain.metrics.last().unwrap().g();
        let mut pull_err = 0.0f64;
        for p in 0..chart.npoints() {
            let i = chart.index_along(p, 0);
            pull_err = pull_err.max((last.at(p)[0] - gc[i]).abs());
            pull_err = pull_err.max((last.at(p)[4] - (2.0 * u[i]).exp()).abs());
        }
        (gauge_err, pull_err)
    }

    #[test]
    fn reduced_system_converges_to_full_flow() {
        let (g12, p12) = reduced_vs_full(12);
        let (g24, p24) = reduced_vs_full(24);
        assert!(g24 < 5e-3 && g12 / g24 > 8.0, "{g12} {g24}");
        assert!(p24 < 5e-3 && p12 / p24 > 8.0, "{p12} {p24}");
    }

    #[test]
    fn flat_cone_is_self_similar() {
        let cone = WarpedModelSpec::flat_cone(1.0, 3.0);
        let chart = Arc::new(cone.chart_with(24, &[12]).unwrap());
        let spec = SelfSimilarSpec { cone, r0: 1.0, n0: 1.0, k0: 0.0 };
        let (series, rep) = flat_cone_self_similar(&spec, &chart, &[0.5, 1.0, 1.5, 2.0], Order::Fourth).unwrap();
        assert_eq!(series.direction, Direction::BackwardTau);
        assert!(rep.pullback_defect <= 1e-12, "{rep:?}");
        assert!(rep.potential_defect <= 1e-10, "{rep:?}");
        assert!(rep.soliton_residual <= 1e-4, "{rep:?}");
    }

    #[test]
    fn export_roundtrip() {
        let (_, _, g) = warped(8);
        let fwd = ricci_flow_evolve(&g, &cfg(0.02, 0.01, FlowVariant::Ricci)).unwrap();
        let mut bwd = to_backward_series(&fwd, None).unwrap();
        let v0 = make_product_splitting(&bwd.metrics[0]).unwrap();
        evolve_splitting(&mut bwd, &v0, 1e-8).unwrap();
        let dir = std::env::temp_dir().join(format!("splitflow-export-{}", std::process::id()));
        export_series(&bwd, &dir).unwrap();
        let back = import_series(&dir).unwrap();
        assert_eq!(back.times, bwd.times);
        assert_eq!(back.direction, bwd.direction);
        for (a, b) in back.metrics.iter().zip(&bwd.metrics) {
            assert_eq!(a.g().data(), b.g().data());
        }
        let vs = back.splittings.unwrap();
        assert_eq!(vs[1].v().data(), bwd.splittings.as_ref().unwrap()[1].v().data());
        fs::remove_dir_all(&dir).unwrap();
    }
}
