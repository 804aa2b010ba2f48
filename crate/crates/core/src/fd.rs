//! Finite-difference stencils along chart axes.

use serde::{Deserialize, Serialize};

use crate::chart::{Axis, ProductChart};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Slot, TensorField};

/// Accuracy order of the derivative stencils.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Order {
    Second,
    #[default]
    Fourth,
}

impl Order {
    pub fn value(self) -> u32 {
        match self {
            Order::Second => 2,
            Order::Fourth => 4,
        }
    }

    pub fn from_value(p: u32) -> Option<Self> {
        match p {
            2 => Some(Order::Second),
            4 => Some(Order::Fourth),
            _ => None,
        }
    }

    fn min_points(self) -> usize {
        match self {
            Order::Second => 3,
            Order::Fourth => 5,
        }
    }
}

#[derive(Clone, Debug)]
enum Taps {
    /// `sum_k w_k (f_{+k} - f_{-k})`, exact zero on locally constant data.
    Central(Vec<(usize, f64)>),
    OneSided(Vec<(isize, f64)>),
}

const C4: [(usize, f64); 2] = [(1, 8.0 / 12.0), (2, -1.0 / 12.0)];
const C2: [(usize, f64); 1] = [(1, 0.5)];
const L4_0: [f64; 5] = [-25.0 / 12.0, 48.0 / 12.0, -36.0 / 12.0, 16.0 / 12.0, -3.0 / 12.0];
const L4_1: [f64; 5] = [-3.0 / 12.0, -10.0 / 12.0, 18.0 / 12.0, -6.0 / 12.0, 1.0 / 12.0];
const L2_0: [f64; 3] = [-1.5, 2.0, -0.5];

fn taps(i: usize, points: usize, periodic: bool, order: Order) -> Taps {
    let half = match order {
        Order::Second => 1,
        Order::Fourth => 2,
    };
    let central = || match order {
        Order::Second => Taps::Central(C2.to_vec()),
        Order::Fourth => Taps::Central(C4.to_vec()),
    };
    if periodic || (i >= half && i + half < points) {
        return central();
    }
    let (w, shift): (&[f64], isize) = match (order, i.min(points - 1 - i)) {
        (Order::Fourth, 0) => (&L4_0, 0),
        (Order::Fourth, _) => (&L4_1, -1),
        (Order::Second, _) => (&L2_0, 0),
    };
    if i < half {
        Taps::OneSided(w.iter().enumerate().map(|(k, &c)| (k as isize + shift, c)).collect())
    } else {
        Taps::OneSided(w.iter().enumerate().map(|(k, &c)| (-(k as isize + shift), -c)).collect())
    }
}

fn check_axis(chart: &ProductChart, axis: usize, order: Order) -> Result<()> {
    if axis >= chart.dim() {
        return Err(Error::AxisOutOfRange { axis, dim: chart.dim() });
    }
    let pts = chart.axis(axis).points;
    if pts < order.min_points() {
        return Err(Error::GridTooSmall { axis, points: pts, needed: order.min_points() });
    }
    Ok(())
}

fn stencil_table<T: Real>(ax: &Axis, order: Order) -> Vec<Vec<(isize, isize, T)>> {
    let pts = ax.points;
    let inv_h = T::lit(1.0 / ax.spacing());
    (0..pts)
        .map(|i| match taps(i, pts, ax.periodic, order) {
            Taps::Central(ws) => ws
                .iter()
                .map(|&(k, w)| {
                    let k = k as isize;
                    let (plus, minus) = if ax.periodic {
                        let up = (i as isize + k).rem_euclid(pts as isize) - i as isize;
                        let dn = (i as isize - k).rem_euclid(pts as isize) - i as isize;
                        (up, dn)
                    } else {
                        (k, -k)
                    };
                    (plus, minus, T::lit(w) * inv_h)
                })
                .collect(),
            Taps::OneSided(ws) => ws.iter().map(|&(k, w)| (k, isize::MIN, T::lit(w) * inv_h)).collect(),
        })
        .collect()
}

/// Derivative of samples on a single axis, with the same stencils as [`derivative_along`].
pub fn derivative_on_axis<T: Real>(values: &[T], ax: &Axis, order: Order) -> Result<Vec<T>> {
    if ax.points < order.min_points() {
        return Err(Error::GridTooSmall { axis: 0, points: ax.points, needed: order.min_points() });
    }
    if values.len() != ax.points {
        return Err(Error::Shape(format!("{} samples on an axis of {} points", values.len(), ax.points)));
    }
    let table = stencil_table::<T>(ax, order);
    Ok((0..ax.points)
        .map(|i| {
            table[i].iter().fold(T::zero(), |acc, &(plus, minus, w)| {
                let a = values[(i as isize + plus) as usize];
                let b = if minus == isize::MIN { values[i] } else { values[(i as isize + minus) as usize] };
                acc + w * (a - b)
            })
        })
        .collect())
}

/// Differentiates a point-major block array (`ncomp` values per point) along one axis.
pub fn derivative_along<T: Real>(
    data: &[T],
    ncomp: usize,
    chart: &ProductChart,
    axis: usize,
    order: Order,
    out: &mut [T],
) -> Result<()> {
    check_axis(chart, axis, order)?;
    let ax = chart.axis(axis);
    let stride = chart.stride(axis);
    let table = stencil_table::<T>(ax, order);
    for p in 0..chart.npoints() {
        let i = chart.index_along(p, axis);
        let dst = &mut out[p * ncomp..(p + 1) * ncomp];
        dst.iter_mut().for_each(|v| *v = T::zero());
        for &(plus, minus, w) in &table[i] {
            let qp = (p as isize + plus * stride as isize) as usize;
            let src_p = &data[qp * ncomp..(qp + 1) * ncomp];
            if minus == isize::MIN {
                // weights sum to zero, so differencing against the centre is exact on constants
                let centre = &data[p * ncomp..(p + 1) * ncomp];
                for ((d, &s), &c) in dst.iter_mut().zip(src_p).zip(centre) {
                    *d += w * (s - c);
                }
            } else {
                let qm = (p as isize + minus * stride as isize) as usize;
                let src_m = &data[qm * ncomp..(qm + 1) * ncomp];
                for ((d, &a), &b) in dst.iter_mut().zip(src_p).zip(src_m) {
                    *d += w * (a - b);
                }
            }
        }
    }
    Ok(())
}

/// Componentwise derivative of `field` along `axis`; same slot pattern as the input.
pub fn partial_derivative<T: Real>(field: &TensorField<T>, axis: usize, order: Order) -> Result<TensorField<T>> {
    let mut out = TensorField::zeros(field.chart().clone(), field.slots().to_vec());
    derivative_along(field.data(), field.ncomp(), field.chart(), axis, order, out.data_mut())?;
    Ok(out)
}

/// All coordinate derivatives, stacked as a new leading covariant slot.
pub fn gradient<T: Real>(field: &TensorField<T>, order: Order) -> Result<TensorField<T>> {
    let n = field.dim();
    let nc = field.ncomp();
    let mut slots = vec![Slot::Co];
    slots.extend_from_slice(field.slots());
    let mut out = TensorField::zeros(field.chart().clone(), slots);
    let mut tmp = vec![T::zero(); field.data().len()];
    for a in 0..n {
        derivative_along(field.data(), nc, field.chart(), a, order, &mut tmp)?;
        for p in 0..field.chart().npoints() {
            let dst = &mut out.at_mut(p)[a * nc..(a + 1) * nc];
            dst.copy_from_slice(&tmp[p * nc..(p + 1) * nc]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{Axis, Factor, Role};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn line(periodic: bool, pts: usize) -> Arc<ProductChart> {
        let ax = if periodic { Axis::periodic(0.0, 2.0 * PI, pts) } else { Axis::interval(0.0, 2.0, pts) };
        Arc::new(
            ProductChart::new(vec![Factor {
                name: "s".into(),
                role: Role::Base,
                axes: vec![ax, Axis::periodic(0.0, 1.0, 8)],
            }])
            .unwrap(),
        )
    }

    fn sin_error(pts: usize, order: Order) -> f64 {
        let c = line(true, pts);
        let f = TensorField::<f64>::from_fn(c.clone(), vec![], |x, b| b[0] = x[0].sin());
        let d = partial_derivative(&f, 0, order).unwrap();
        (0..c.npoints()).map(|p| (d.data()[p] - c.coords(p)[0].cos()).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_has_zero_derivative() {
        let c = line(false, 12);
        let f = TensorField::<f64>::from_fn(c, vec![], |_, b| b[0] = 3.7);
        for a in 0..2 {
            assert_eq!(partial_derivative(&f, a, Order::Fourth).unwrap().max_abs(), 0.0);
        }
    }

    #[test]
    fn fourth_order_rate_on_sine() {
        let e1 = sin_error(24, Order::Fourth);
        let e2 = sin_error(48, Order::Fourth);
        let r = e1 / e2;
        assert!(r > 16.0 / 1.3 && r < 16.0 * 1.3, "ratio {r}");
        let r2 = sin_error(24, Order::Second) / sin_error(48, Order::Second);
        assert!(r2 > 4.0 / 1.3 && r2 < 4.0 * 1.3, "ratio {r2}");
    }

    #[test]
    fn linear_exact_on_interval() {
        for order in [Order::Second, Order::Fourth] {
            let c = line(false, 11);
            let f = TensorField::<f64>::from_fn(c.clone(), vec![], |x, b| b[0] = x[0]);
            let d = partial_derivative(&f, 0, order).unwrap();
            for p in 0..c.npoints() {
                assert!((d.data()[p] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quartic_exact_with_one_sided_stencils() {
        let c = line(false, 11);
        let f = TensorField::<f64>::from_fn(c.clone(), vec![], |x, b| b[0] = x[0].powi(4));
        let d = partial_derivative(&f, 0, Order::Fourth).unwrap();
        for p in 0..c.npoints() {
            let s = c.coords(p)[0];
            assert!((d.data()[p] - 4.0 * s.powi(3)).abs() < 1e-10);
        }
    }

    #[test]
    fn axis_out_of_range() {
        let c = line(true, 8);
        let f = TensorField::<f64>::scalar(c);
        assert!(matches!(partial_derivative(&f, 5, Order::Fourth), Err(Error::AxisOutOfRange { .. })));
    }
}
