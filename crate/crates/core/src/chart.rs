//! Structured product coordinate grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width (in points) excluded from norms next to non-periodic boundaries.
pub const MARGIN: usize = 3;

/// Smallest admissible number of points along any axis.
pub const MIN_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Base,
    Fiber(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub extent: f64,
    pub points: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn periodic(lo: f64, extent: f64, points: usize) -> Self {
        Axis { lo, extent, points, periodic: true }
    }

    pub fn interval(lo: f64, hi: f64, points: usize) -> Self {
        Axis { lo, extent: hi - lo, points, periodic: false }
    }

    pub fn spacing(&self) -> f64 {
        if self.periodic {
            self.extent / self.points as f64
        } else {
            self.extent / (self.points - 1) as f64
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    fn interior(&self, i: usize) -> bool {
        self.periodic || (i >= MARGIN && i + MARGIN < self.points)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub role: Role,
    pub axes: Vec<Axis>,
}

/// Product of coordinate factors; points are stored row-major with axis 0 slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductChart {
    factors: Vec<Factor>,
    axes: Vec<Axis>,
    roles: Vec<Role>,
    strides: Vec<usize>,
    npoints: usize,
}

impl ProductChart {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        let mut axes = Vec::new();
        let mut roles = Vec::new();
        for f in &factors {
            if f.axes.is_empty() {
                return Err(Error::InvalidChart(format!("factor {} has no axes", f.name)));
            }
            for a in &f.axes {
                if a.points < MIN_POINTS {
                    return Err(Error::InvalidChart(format!(
                        "factor {} has an axis with {} < {} points",
                        f.name, a.points, MIN_POINTS
                    )));
                }
                if !(a.extent > 0.0) {
                    return Err(Error::InvalidChart(format!("factor {} has empty extent", f.name)));
                }
                axes.push(a.clone());
                roles.push(f.role);
            }
        }
        let n = axes.len();
        if !(2..=5).contains(&n) {
            return Err(Error::InvalidChart(format!("total dimension {n} outside 2..=5")));
        }
        let mut strides = vec![1; n];
        for a in (0..n.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].points;
        }
        let npoints = axes.iter().map(|a| a.points).product();
        Ok(ProductChart { factors, axes, roles, strides, npoints })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn npoints(&self) -> usize {
        self.npoints
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    pub fn role(&self, a: usize) -> Role {
        self.roles[a]
    }

    pub fn stride(&self, a: usize) -> usize {
        self.strides[a]
    }

    /// Axes belonging to any fiber factor.
    pub fn fiber_axes(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&a| matches!(self.roles[a], Role::Fiber(_))).collect()
    }

    /// Axes belonging to fiber factor `k`.
    pub fn fiber_axes_of(&self, k: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&a| self.roles[a] == Role::Fiber(k)).collect()
    }

    pub fn base_axes(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&a| self.roles[a] == Role::Base).collect()
    }

    pub fn multi_index(&self, p: usize) -> Vec<usize> {
        (0..self.dim()).map(|a| (p / self.strides[a]) % self.axes[a].points).collect()
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords(&self, p: usize) -> Vec<f64> {
        self.multi_index(p).iter().enumerate().map(|(a, &i)| self.axes[a].coord(i)).collect()
    }

    /// Index of point `p` along axis `a`.
    pub fn index_along(&self, p: usize, a: usize) -> usize {
        (p / self.strides[a]) % self.axes[a].points
    }

    pub fn is_interior(&self, p: usize) -> bool {
        (0..self.dim()).all(|a| self.axes[a].interior(self.index_along(p, a)))
    }

    pub fn interior_points(&self) -> Vec<usize> {
        (0..self.npoints).filter(|&p| self.is_interior(p)).collect()
    }

    /// Coordinate cell volume Π h_a.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    /// Copy of this chart with the point count of every axis in `scaled` multiplied by `factor`.
    pub fn refined(&self, scaled: &[usize], factor: usize) -> Result<Self> {
        let mut factors = self.factors.clone();
        let mut a = 0;
        for f in &mut factors {
            for ax in &mut f.axes {
                if scaled.contains(&a) {
                    ax.points = if ax.periodic { ax.points * factor } else { (ax.points - 1) * factor + 1 };
                }
                a += 1;
            }
        }
        ProductChart::new(factors)
    }

    /// Stable textual description used in report digests.
    pub fn describe(&self) -> String {
        let parts: Vec<String> = self
            .factors
            .iter()
            .map(|f| {
                let axes: Vec<String> = f
                    .axes
                    .iter()
                    .map(|a| {
                        format!(
                            "{}[{}+{}]{}",
                            a.points,
                            a.lo,
                            a.extent,
                            if a.periodic { "p" } else { "" }
                        )
                    })
                    .collect();
                let role = match f.role {
                    Role::Base => "base".to_string(),
                    Role::Fiber(i) => format!("fiber{i}"),
                };
                format!("{}:{}:{}", f.name, role, axes.join(","))
            })
            .collect();
        parts.join(" x ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> ProductChart {
        ProductChart::new(vec![
            Factor { name: "r".into(), role: Role::Base, axes: vec![Axis::interval(1.0, 4.0, 10)] },
            Factor {
                name: "t".into(),
                role: Role::Fiber(0),
                axes: vec![Axis::periodic(0.0, 1.0, 8), Axis::periodic(0.0, 1.0, 9)],
            },
        ])
        .unwrap()
    }

    #[test]
    fn spacing_follows_periodicity() {
        let c = chart();
        assert!((c.axis(0).spacing() - 3.0 / 9.0).abs() < 1e-15);
        assert!((c.axis(1).spacing() - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn index_round_trip() {
        let c = chart();
        for p in 0..c.npoints() {
            assert_eq!(c.linear_index(&c.multi_index(p)), p);
        }
    }

    #[test]
    fn margin_excludes_boundary_rows() {
        let c = chart();
        assert_eq!(c.interior_points().len(), 4 * 8 * 9);
    }

    #[test]
    fn rejects_coarse_axes() {
        let bad = ProductChart::new(vec![Factor {
            name: "x".into(),
            role: Role::Base,
            axes: vec![Axis::periodic(0.0, 1.0, 4), Axis::periodic(0.0, 1.0, 8)],
        }]);
        assert!(bad.is_err());
    }
}
