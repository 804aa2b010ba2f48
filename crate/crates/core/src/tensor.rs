//! Grid tensor fields stored point-major with flattened component indices.
//!
//! Component `(i_1, .., i_k)` lives at offset `i_1 n^{k-1} + .. + i_k` inside the
//! block of point `p`, so the first slot is the most significant digit.

use std::sync::Arc;

use crate::chart::ProductChart;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Highest tensor rank any kernel produces.
pub const MAX_RANK: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Co,
    Contra,
}

/// Declared index symmetry of a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symmetry {
    Symmetric(usize, usize),
    Antisymmetric(usize, usize),
    /// `X_{ijkl} = X_{klij}` on slots (0,1,2,3).
    PairExchange,
    /// Cyclic sum over slots (0,1,2) vanishes.
    FirstBianchi,
}

#[derive(Clone, Debug)]
pub struct TensorField<T> {
    chart: Arc<ProductChart>,
    slots: Vec<Slot>,
    data: Vec<T>,
    symmetries: Vec<Symmetry>,
}

pub fn ipow(n: usize, k: usize) -> usize {
    n.pow(k as u32)
}

impl<T: Real> TensorField<T> {
    pub fn zeros(chart: Arc<ProductChart>, slots: Vec<Slot>) -> Self {
        let len = chart.npoints() * ipow(chart.dim(), slots.len());
        TensorField { chart, slots, data: vec![T::zero(); len], symmetries: Vec::new() }
    }

    /// Fully covariant zero field of the given rank.
    pub fn covariant(chart: Arc<ProductChart>, rank: usize) -> Self {
        Self::zeros(chart, vec![Slot::Co; rank])
    }

    pub fn scalar(chart: Arc<ProductChart>) -> Self {
        Self::zeros(chart, Vec::new())
    }

    pub fn from_data(chart: Arc<ProductChart>, slots: Vec<Slot>, data: Vec<T>) -> Result<Self> {
        let len = chart.npoints() * ipow(chart.dim(), slots.len());
        if data.len() != len {
            return Err(Error::Shape(format!("expected {len} values, got {}", data.len())));
        }
        Ok(TensorField { chart, slots, data, symmetries: Vec::new() })
    }

    /// Builds a field by filling each point block from its coordinates.
    pub fn from_fn(
        chart: Arc<ProductChart>,
        slots: Vec<Slot>,
        mut f: impl FnMut(&[f64], &mut [T]),
    ) -> Self {
        let mut out = Self::zeros(chart.clone(), slots);
        let nc = out.ncomp();
        for p in 0..chart.npoints() {
            let x = chart.coords(p);
            f(&x, &mut out.data[p * nc..(p + 1) * nc]);
        }
        out
    }

    pub fn with_symmetries(mut self, s: Vec<Symmetry>) -> Self {
        self.symmetries = s;
        self
    }

    pub fn symmetries(&self) -> &[Symmetry] {
        &self.symmetries
    }

    pub fn chart(&self) -> &Arc<ProductChart> {
        &self.chart
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn covariant_rank(&self) -> usize {
        self.slots.iter().filter(|s| **s == Slot::Co).count()
    }

    pub fn contravariant_rank(&self) -> usize {
        self.rank() - self.covariant_rank()
    }

    pub fn is_covariant(&self) -> bool {
        self.slots.iter().all(|s| *s == Slot::Co)
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn ncomp(&self) -> usize {
        ipow(self.dim(), self.rank())
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn at(&self, p: usize) -> &[T] {
        let nc = self.ncomp();
        &self.data[p * nc..(p + 1) * nc]
    }

    pub fn at_mut(&mut self, p: usize) -> &mut [T] {
        let nc = self.ncomp();
        &mut self.data[p * nc..(p + 1) * nc]
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        flatten(idx, self.dim())
    }

    pub fn get(&self, p: usize, idx: &[usize]) -> T {
        self.at(p)[self.flat_index(idx)]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.slots == other.slots && Arc::ptr_eq(&self.chart, &other.chart)
            || (self.slots == other.slots && *self.chart == *other.chart)
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "slot patterns {:?} and {:?} or charts differ",
                self.slots, other.slots
            )))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        TensorField {
            chart: self.chart.clone(),
            slots: self.slots.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            symmetries: self.symmetries.clone(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_shape(other)?;
        Ok(TensorField {
            chart: self.chart.clone(),
            slots: self.slots.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            symmetries: Vec::new(),
        })
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b).expect("matching shapes")
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b).expect("matching shapes")
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: T, other: &Self) {
        assert!(self.same_shape(other), "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// Pointwise product with a scalar field.
    pub fn mul_scalar_field(&self, s: &Self) -> Self {
        assert_eq!(s.rank(), 0, "expected scalar field");
        let nc = self.ncomp();
        let mut out = self.clone();
        out.symmetries.clear();
        for p in 0..self.chart.npoints() {
            let c = s.data[p];
            for v in &mut out.data[p * nc..(p + 1) * nc] {
                *v *= c;
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// Reorders slots: `out_{j_0 .. j_{k-1}} = self_{j_{perm[0]} .. j_{perm[k-1]}}`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let k = self.rank();
        assert_eq!(perm.len(), k);
        let n = self.dim();
        let nc = self.ncomp();
        let map: Vec<usize> = (0..nc)
            .map(|f| {
                let j = unflatten(f, n, k);
                let src: Vec<usize> = perm.iter().map(|&s| j[s]).collect();
                flatten(&src, n)
            })
            .collect();
        let mut slots = self.slots.clone();
        for t in 0..k {
            slots[perm[t]] = self.slots[t];
        }
        let mut out = Self::zeros(self.chart.clone(), slots);
        for p in 0..self.chart.npoints() {
            let src = &self.data[p * nc..(p + 1) * nc];
            let dst = &mut out.data[p * nc..(p + 1) * nc];
            for f in 0..nc {
                dst[f] = src[map[f]];
            }
        }
        out
    }

    /// Largest relative violation of the declared symmetries.
    pub fn symmetry_defect(&self) -> T {
        let mut worst = T::zero();
        for s in &self.symmetries {
            let d = match *s {
                Symmetry::Symmetric(a, b) => self.sub(&self.permute(&swap_perm(self.rank(), a, b))),
                Symmetry::Antisymmetric(a, b) => self.add(&self.permute(&swap_perm(self.rank(), a, b))),
                Symmetry::PairExchange => self.sub(&self.permute(&[2, 3, 0, 1])),
                Symmetry::FirstBianchi => {
                    self.add(&self.permute(&[1, 2, 0, 3])).add(&self.permute(&[2, 0, 1, 3]))
                }
            };
            let scale = self.max_abs().max(T::min_positive_value());
            worst = worst.max(d.max_abs() / scale);
        }
        worst
    }
}

pub fn swap_perm(k: usize, a: usize, b: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..k).collect();
    p.swap(a, b);
    p
}

pub fn flatten(idx: &[usize], n: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * n + i)
}

pub fn unflatten(mut f: usize, n: usize, k: usize) -> Vec<usize> {
    let mut idx = vec![0; k];
    for s in (0..k).rev() {
        idx[s] = f % n;
        f /= n;
    }
    idx
}

/// Pointwise kernels on single component blocks.
pub mod block {
    use super::ipow;
    use crate::scalar::Real;

    /// `out_{..i..} = sum_a m[a n + i] x_{..a..}` on slot `s` of a rank-`k` block.
    pub fn precompose<T: Real>(x: &[T], k: usize, n: usize, s: usize, m: &[T], out: &mut [T]) {
        let inner = ipow(n, k - 1 - s);
        let outer = ipow(n, s);
        for o in 0..outer {
            for i in 0..n {
                for r in 0..inner {
                    let mut acc = T::zero();
                    for a in 0..n {
                        acc += m[a * n + i] * x[(o * n + a) * inner + r];
                    }
                    out[(o * n + i) * inner + r] = acc;
                }
            }
        }
    }

    /// Contracts slots `s1 < s2` of a rank-`k` block against `w[a n + b]`.
    pub fn contract<T: Real>(x: &[T], k: usize, n: usize, s1: usize, s2: usize, w: &[T], out: &mut [T]) {
        assert!(s1 < s2 && s2 < k);
        let nh = ipow(n, s1);
        let nm = ipow(n, s2 - s1 - 1);
        let nl = ipow(n, k - 1 - s2);
        for h in 0..nh {
            for m in 0..nm {
                for l in 0..nl {
                    let mut acc = T::zero();
                    for a in 0..n {
                        for b in 0..n {
                            let wab = w[a * n + b];
                            if wab != T::zero() {
                                acc += wab * x[(((h * n + a) * nm + m) * n + b) * nl + l];
                            }
                        }
                    }
                    out[(h * nm + m) * nl + l] = acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{Axis, Factor, Role};

    fn chart(n: usize) -> Arc<ProductChart> {
        let axes = (0..n).map(|_| Axis::periodic(0.0, 1.0, 8)).collect();
        Arc::new(ProductChart::new(vec![Factor { name: "x".into(), role: Role::Base, axes }]).unwrap())
    }

    #[test]
    fn permute_moves_components() {
        let c = chart(3);
        let f = TensorField::<f64>::from_fn(c, vec![Slot::Co; 3], |_, b| {
            for (i, v) in b.iter_mut().enumerate() {
                *v = i as f64;
            }
        });
        let g = f.permute(&[2, 0, 1]);
        assert_eq!(g.get(0, &[0, 1, 2]), f.get(0, &[2, 0, 1]));
        assert_eq!(g.get(0, &[2, 2, 1]), f.get(0, &[1, 2, 2]));
    }

    #[test]
    fn contract_matches_naive() {
        let n = 3;
        let x: Vec<f64> = (0..81).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..9).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut out = vec![0.0; 9];
        block::contract(&x, 4, n, 1, 3, &w, &mut out);
        for i in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        acc += w[a * n + b] * x[flatten(&[i, a, k, b], n)];
                    }
                }
                assert!((out[i * n + k] - acc).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn precompose_matches_naive() {
        let n = 3;
        let x: Vec<f64> = (0..27).map(|i| (i as f64 * 0.91).sin()).collect();
        let m: Vec<f64> = (0..9).map(|i| (i as f64 * 0.4).cos()).collect();
        let mut out = vec![0.0; 27];
        block::precompose(&x, 3, n, 1, &m, &mut out);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let acc: f64 = (0..n).map(|a| m[a * n + j] * x[flatten(&[i, a, k], n)]).sum();
                    assert!((out[flatten(&[i, j, k], n)] - acc).abs() < 1e-13);
                }
            }
        }
    }
}
