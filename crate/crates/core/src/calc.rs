//! Index calculus on covariant fields: metric contractions and bar/underline masks.
//!
//! An expression such as `"i_p'p', p'j -> ij"` lists one index word per input.
//! A letter may carry a mark: `'` precomposes that slot with `V`, `_` with `H`.
//! A letter repeated across the inputs is summed against `g^{-1}`, so repeated
//! letters stand for orthonormal frame sums. Output letters may carry marks too.

use std::sync::Arc;

use crate::chart::ProductChart;
use crate::error::{Error, Result};
use crate::geometry::MetricField;
use crate::scalar::Real;
use crate::tensor::{block, ipow, Slot, TensorField};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mark {
    Free,
    Bar,
    Under,
}

#[derive(Clone, Debug)]
struct Word {
    letters: Vec<u8>,
    marks: Vec<Mark>,
}

fn parse_word(s: &str) -> Result<Word> {
    let mut letters = Vec::new();
    let mut marks = Vec::new();
    for c in s.bytes() {
        match c {
            b'\'' | b'_' => {
                let m = marks.last_mut().ok_or_else(|| Error::Slots(format!("mark without index in `{s}`")))?;
                if *m != Mark::Free {
                    return Err(Error::Slots(format!("double mark in `{s}`")));
                }
                *m = if c == b'\'' { Mark::Bar } else { Mark::Under };
            }
            c if c.is_ascii_alphabetic() => {
                letters.push(c);
                marks.push(Mark::Free);
            }
            c if c.is_ascii_whitespace() => {}
            _ => return Err(Error::Slots(format!("bad character `{}` in `{s}`", c as char))),
        }
    }
    Ok(Word { letters, marks })
}

/// Raw point-major operand labelled by index letters.
struct Operand<T> {
    letters: Vec<u8>,
    data: Vec<T>,
}

/// Contraction context: the metric and, optionally, the splitting projections.
#[derive(Clone)]
pub struct Calc<'a, T> {
    metric: &'a MetricField<T>,
    v: Option<&'a TensorField<T>>,
    h: Option<&'a TensorField<T>>,
}

impl<'a, T: Real> Calc<'a, T> {
    pub fn new(metric: &'a MetricField<T>) -> Self {
        Calc { metric, v: None, h: None }
    }

    /// `v`, `h` are (1,1) fields stored as `[a n + i] = P^a_i`.
    pub fn with_projections(metric: &'a MetricField<T>, v: &'a TensorField<T>, h: &'a TensorField<T>) -> Self {
        Calc { metric, v: Some(v), h: Some(h) }
    }

    pub fn metric(&self) -> &MetricField<T> {
        self.metric
    }

    fn chart(&self) -> &Arc<ProductChart> {
        self.metric.chart()
    }

    /// Precomposes the marked slots of `x` with `V` or `H`.
    fn apply_marks(&self, data: &mut Vec<T>, marks: &[Mark]) -> Result<()> {
        if marks.iter().all(|m| *m == Mark::Free) {
            return Ok(());
        }
        let (v, h) = match (self.v, self.h) {
            (Some(v), Some(h)) => (v, h),
            _ => return Err(Error::Slots("masks need a splitting".into())),
        };
        let n = self.metric.dim();
        let k = marks.len();
        let nc = ipow(n, k);
        let mut a = vec![T::zero(); nc];
        let mut b = vec![T::zero(); nc];
        for p in 0..self.chart().npoints() {
            a.copy_from_slice(&data[p * nc..(p + 1) * nc]);
            for (s, m) in marks.iter().enumerate() {
                let w = match m {
                    Mark::Free => continue,
                    Mark::Bar => v.at(p),
                    Mark::Under => h.at(p),
                };
                block::precompose(&a, k, n, s, w, &mut b);
                std::mem::swap(&mut a, &mut b);
            }
            data[p * nc..(p + 1) * nc].copy_from_slice(&a);
        }
        Ok(())
    }

    /// Masks a covariant field slot by slot; `pattern` uses `'`/`_`/`.` per slot.
    pub fn mask(&self, x: &TensorField<T>, pattern: &str) -> Result<TensorField<T>> {
        let marks: Vec<Mark> = pattern
            .chars()
            .map(|c| match c {
                '\'' | 'v' => Ok(Mark::Bar),
                '_' | 'h' => Ok(Mark::Under),
                '.' => Ok(Mark::Free),
                _ => Err(Error::Slots(format!("bad mask character `{c}`"))),
            })
            .collect::<Result<_>>()?;
        if marks.len() != x.rank() {
            return Err(Error::Slots(format!("mask `{pattern}` has length {} but rank is {}", marks.len(), x.rank())));
        }
        if !x.is_covariant() {
            return Err(Error::Slots("masks act on covariant slots".into()));
        }
        let mut data = x.data().to_vec();
        self.apply_marks(&mut data, &marks)?;
        TensorField::from_data(x.chart().clone(), x.slots().to_vec(), data)
    }

    /// Contracts `x` on slots `s1 != s2` with `g^{-1}`.
    fn trace(&self, op: Operand<T>, s1: usize, s2: usize) -> Operand<T> {
        let (s1, s2) = (s1.min(s2), s1.max(s2));
        let n = self.metric.dim();
        let k = op.letters.len();
        let nc = ipow(n, k);
        let oc = ipow(n, k - 2);
        let np = self.chart().npoints();
        let mut out = vec![T::zero(); np * oc];
        for p in 0..np {
            block::contract(&op.data[p * nc..(p + 1) * nc], k, n, s1, s2, self.metric.ginv().at(p), &mut out[p * oc..(p + 1) * oc]);
        }
        let letters = op.letters.iter().enumerate().filter(|(i, _)| *i != s1 && *i != s2).map(|(_, &l)| l).collect();
        Operand { letters, data: out }
    }

    /// Raises slot `s` with `g^{-1}` (symmetric, so precomposition suffices).
    fn raise(&self, op: &mut Operand<T>, s: usize) {
        let n = self.metric.dim();
        let k = op.letters.len();
        let nc = ipow(n, k);
        let mut tmp = vec![T::zero(); nc];
        for p in 0..self.chart().npoints() {
            block::precompose(&op.data[p * nc..(p + 1) * nc], k, n, s, self.metric.ginv().at(p), &mut tmp);
            op.data[p * nc..(p + 1) * nc].copy_from_slice(&tmp);
        }
    }

    fn self_traces(&self, mut op: Operand<T>) -> Result<Operand<T>> {
        loop {
            let mut pair = None;
            'outer: for i in 0..op.letters.len() {
                for j in i + 1..op.letters.len() {
                    if op.letters[i] == op.letters[j] {
                        pair = Some((i, j));
                        break 'outer;
                    }
                }
            }
            match pair {
                Some((i, j)) => {
                    let l = op.letters[i];
                    op = self.trace(op, i, j);
                    if op.letters.contains(&l) {
                        return Err(Error::Slots(format!("index `{}` used more than twice", l as char)));
                    }
                }
                None => return Ok(op),
            }
        }
    }

    /// Pointwise product of two operands summing the `sum` letters, keeping `keep` letters.
    fn product(&self, a: Operand<T>, mut b: Operand<T>, later: &[u8]) -> Result<Operand<T>> {
        let n = self.metric.dim();
        let mut summed = Vec::new();
        for &l in &a.letters {
            if b.letters.contains(&l) {
                if later.contains(&l) {
                    return Err(Error::Slots(format!("index `{}` used more than twice", l as char)));
                }
                summed.push(l);
            }
        }
        for &l in &summed {
            let s = b.letters.iter().position(|&x| x == l).unwrap();
            self.raise(&mut b, s);
        }
        let out_letters: Vec<u8> = a
            .letters
            .iter()
            .chain(b.letters.iter())
            .copied()
            .filter(|l| !summed.contains(l))
            .collect();
        let stride = |letters: &[u8], l: u8| -> usize {
            match letters.iter().position(|&x| x == l) {
                Some(pos) => ipow(n, letters.len() - 1 - pos),
                None => 0,
            }
        };
        let offsets = |ls: &[u8]| -> Vec<(usize, usize)> {
            let total = ipow(n, ls.len());
            (0..total)
                .map(|f| {
                    let mut rem = f;
                    let (mut oa, mut ob) = (0, 0);
                    for t in (0..ls.len()).rev() {
                        let d = rem % n;
                        rem /= n;
                        oa += d * stride(&a.letters, ls[t]);
                        ob += d * stride(&b.letters, ls[t]);
                    }
                    (oa, ob)
                })
                .collect()
        };
        let out_off = offsets(&out_letters);
        let sum_off = offsets(&summed);
        let na = ipow(n, a.letters.len());
        let nb = ipow(n, b.letters.len());
        let no = out_off.len();
        let np = self.chart().npoints();
        let mut data = vec![T::zero(); np * no];
        for p in 0..np {
            let xa = &a.data[p * na..(p + 1) * na];
            let xb = &b.data[p * nb..(p + 1) * nb];
            let dst = &mut data[p * no..(p + 1) * no];
            for (o, &(oa, ob)) in out_off.iter().enumerate() {
                let mut acc = T::zero();
                for &(sa, sb) in &sum_off {
                    acc += xa[oa + sa] * xb[ob + sb];
                }
                dst[o] = acc;
            }
        }
        Ok(Operand { letters: out_letters, data })
    }

    /// Evaluates an index expression over covariant inputs.
    pub fn ein(&self, expr: &str, inputs: &[&TensorField<T>]) -> Result<TensorField<T>> {
        let (lhs, rhs) = expr.split_once("->").ok_or_else(|| Error::Slots(format!("missing `->` in `{expr}`")))?;
        let words: Vec<Word> = lhs.split(',').map(parse_word).collect::<Result<_>>()?;
        let out = parse_word(rhs)?;
        if words.len() != inputs.len() {
            return Err(Error::Slots(format!("`{expr}` names {} inputs, got {}", words.len(), inputs.len())));
        }
        let mut acc: Option<Operand<T>> = None;
        for (t, (w, x)) in words.iter().zip(inputs).enumerate() {
            if !x.is_covariant() || x.rank() != w.letters.len() {
                return Err(Error::Slots(format!("input {t} of `{expr}` is not covariant of rank {}", w.letters.len())));
            }
            if !Arc::ptr_eq(x.chart(), self.chart()) && **x.chart() != **self.chart() {
                return Err(Error::Shape("inputs live on different charts".into()));
            }
            let mut data = x.data().to_vec();
            self.apply_marks(&mut data, &w.marks)?;
            let op = self.self_traces(Operand { letters: w.letters.clone(), data })?;
            let mut later: Vec<u8> = out.letters.clone();
            for w2 in &words[t + 1..] {
                later.extend_from_slice(&w2.letters);
            }
            acc = Some(match acc {
                None => op,
                Some(a) => self.product(a, op, &later)?,
            });
        }
        let acc = acc.ok_or_else(|| Error::Slots("empty expression".into()))?;
        let mut sorted = out.letters.clone();
        sorted.sort_unstable();
        let mut have = acc.letters.clone();
        have.sort_unstable();
        if sorted != have || sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Slots(format!("output `{rhs}` does not match the free indices of `{lhs}`")));
        }
        let field = TensorField::from_data(self.chart().clone(), vec![Slot::Co; acc.letters.len()], acc.data)?;
        // source slot q becomes output slot perm[q]
        let perm: Vec<usize> = acc.letters.iter().map(|l| out.letters.iter().position(|x| x == l).unwrap()).collect();
        let field = if perm.iter().enumerate().all(|(i, &p)| i == p) { field } else { field.permute(&perm) };
        if out.marks.iter().any(|m| *m != Mark::Free) {
            let mut data = field.into_data();
            self.apply_marks(&mut data, &out.marks)?;
            return TensorField::from_data(self.chart().clone(), vec![Slot::Co; out.letters.len()], data);
        }
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{Axis, Factor, Role};

    fn setup() -> (Arc<ProductChart>, MetricField<f64>) {
        let chart = Arc::new(
            ProductChart::new(vec![
                Factor { name: "b".into(), role: Role::Base, axes: vec![Axis::periodic(0.0, 1.0, 8)] },
                Factor { name: "f".into(), role: Role::Fiber(0), axes: vec![Axis::periodic(0.0, 1.0, 8)] },
            ])
            .unwrap(),
        );
        let g = TensorField::from_fn(chart.clone(), vec![Slot::Co, Slot::Co], |x, b| {
            b[0] = 2.0 + x[0];
            b[1] = 0.3;
            b[2] = 0.3;
            b[3] = 1.0 + x[1];
        });
        let m = MetricField::new(g).unwrap();
        (chart, m)
    }

    #[test]
    fn trace_of_metric_is_dimension() {
        let (_, m) = setup();
        let c = Calc::new(&m);
        let t = c.ein("ii -> ", &[m.g()]).unwrap();
        assert!(t.data().iter().all(|v| (v - 2.0).abs() < 1e-14));
        let t2 = c.ein("ij, ij -> ", &[m.g(), m.g()]).unwrap();
        assert!(t2.data().iter().all(|v| (v - 2.0).abs() < 1e-14));
    }

    #[test]
    fn permutation_matches_permute() {
        let (chart, m) = setup();
        let x = TensorField::from_fn(chart, vec![Slot::Co; 3], |c, b| {
            for (i, v) in b.iter_mut().enumerate() {
                *v = (i as f64 + 1.0) * (1.0 + c[0]);
            }
        });
        let c = Calc::new(&m);
        let y = c.ein("ijk -> kij", &[&x]).unwrap();
        for p in 0..x.chart().npoints() {
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        assert_eq!(y.get(p, &[k, i, j]), x.get(p, &[i, j, k]));
                    }
                }
            }
        }
    }

    #[test]
    fn contraction_with_metric_is_identity() {
        let (chart, m) = setup();
        let x = TensorField::from_fn(chart, vec![Slot::Co; 2], |c, b| {
            b[0] = c[0];
            b[1] = 1.0;
            b[2] = -2.0;
            b[3] = c[1] * c[0];
        });
        let c = Calc::new(&m);
        let y = c.ein("ip, pj -> ij", &[m.g(), &x]).unwrap();
        assert!(y.sub(&x).max_abs() < 1e-14);
        assert!(c.ein("ij, jk, kl -> il", &[&x, &x, &x]).is_ok());
        assert!(c.ein("ii, i -> i", &[&x, &x]).is_err());
        assert!(c.ein("ij -> i", &[&x]).is_err());
    }
}
