//! Longest-common-prefix distance on schedules and other sequences.

use crate::schedule::LassoSchedule;
use crate::scalar::Dyadic;

/// Outcome of comparing two (possibly infinite) sequences.
#[derive(Clone, Debug, PartialEq)]
pub enum LcpDistance<T> {
    /// The distance is known exactly: `0` or `2^-K`.
    Exact(T),
    /// The sequences agree on the whole horizon but equality was not certified;
    /// the true distance lies in `[0, upper]`.
    Bounded { upper: T },
}

impl<T: Dyadic> LcpDistance<T> {
    pub fn is_exact(&self) -> bool {
        matches!(self, LcpDistance::Exact(_))
    }

    /// Exact value, or the upper end of the interval.
    pub fn upper(&self) -> T {
        match self {
            LcpDistance::Exact(d) => d.clone(),
            LcpDistance::Bounded { upper } => upper.clone(),
        }
    }
}

/// Index of the first difference of two finite sequences, comparing the common length.
pub fn first_difference<T: PartialEq>(a: &[T], b: &[T]) -> Option<usize> {
    let k = a.iter().zip(b).position(|(x, y)| x != y);
    match k {
        Some(k) => Some(k),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}

/// `2^-K` for the first differing (0-based) index `K`, or `0` for equal sequences.
pub fn lcp_distance_seq<T: PartialEq, D: Dyadic>(a: &[T], b: &[T]) -> D {
    match first_difference(a, b) {
        Some(k) => D::inv_pow2(k),
        None => D::zero(),
    }
}

/// Distance between two lasso schedules viewed as infinite graph sequences
/// `G_1, G_2, …` (index 0 is round 1).
///
/// Two lassos that agree up to `max(|prefix|) + lcm(|cycle|)` are equal forever,
/// which certifies distance zero. Without that certificate inside `horizon`, the
/// result is the interval `[0, 2^-horizon]`.
pub fn lcp_distance<D: Dyadic>(a: &LassoSchedule, b: &LassoSchedule, horizon: usize) -> LcpDistance<D> {
    if a.n() != b.n() {
        return LcpDistance::Exact(D::one());
    }
    let certificate = a.prefix().len().max(b.prefix().len()) + lcm(a.cycle().len(), b.cycle().len());
    let limit = horizon.min(certificate);
    for r in 1..=limit {
        if a.resolve_round(r) != b.resolve_round(r) {
            return LcpDistance::Exact(D::inv_pow2(r - 1));
        }
    }
    if limit == certificate || a == b {
        LcpDistance::Exact(D::zero())
    } else {
        LcpDistance::Bounded {
            upper: D::inv_pow2(horizon),
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

impl LassoSchedule {
    /// Normal form of the infinite sequence: the cycle is reduced to its primitive
    /// root and the prefix is shortened while its last graph matches the cycle tail.
    /// Two lassos denote the same schedule iff their normal forms are equal.
    pub fn normalized(&self) -> LassoSchedule {
        let mut cycle = self.cycle().to_vec();
        let len = cycle.len();
        for d in 1..=len {
            if len.is_multiple_of(d) && (0..len).all(|k| cycle[k] == cycle[k % d]) {
                cycle.truncate(d);
                break;
            }
        }
        let mut prefix = self.prefix().to_vec();
        while let Some(last) = prefix.last() {
            if last == cycle.last().unwrap() {
                prefix.pop();
                cycle.rotate_right(1);
            } else {
                break;
            }
        }
        LassoSchedule::new(self.n(), self.f(), prefix, cycle).expect("normal form keeps graphs valid")
    }

    /// Same infinite schedule, regardless of how the lasso is written.
    pub fn same_schedule(&self, other: &LassoSchedule) -> bool {
        self.n() == other.n() && self.normalized() == other.normalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::enumerate_graphs;
    use num_rational::BigRational;

    #[test]
    fn sequence_distances() {
        assert_eq!(lcp_distance_seq::<_, f64>(&[1, 2, 3], &[1, 2, 3]), 0.0);
        assert_eq!(lcp_distance_seq::<_, f64>(&[0, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(lcp_distance_seq::<_, f64>(&[1, 2, 3, 4], &[1, 2, 3, 5]), 0.125);
        let exact: BigRational = lcp_distance_seq(&[1, 2, 3, 4], &[1, 2, 3, 5]);
        assert_eq!(exact, BigRational::new(1.into(), 8.into()));
    }

    #[test]
    fn lasso_distances() {
        let gs = enumerate_graphs(3, 1).unwrap();
        let a = LassoSchedule::new(3, 1, vec![], vec![gs[0].clone()]).unwrap();
        let b = LassoSchedule::new(3, 1, vec![gs[0].clone(), gs[0].clone()], vec![gs[1].clone()]).unwrap();
        assert_eq!(lcp_distance::<f64>(&a, &a, 10), LcpDistance::Exact(0.0));
        assert_eq!(lcp_distance::<f64>(&a, &b, 10), LcpDistance::Exact(0.25));
        // same infinite sequence written two ways
        let c = LassoSchedule::new(3, 1, vec![gs[0].clone()], vec![gs[0].clone(), gs[0].clone()]).unwrap();
        assert_eq!(lcp_distance::<f64>(&a, &c, 10), LcpDistance::Exact(0.0));
        assert!(a.same_schedule(&c));
        // horizon too short to certify
        let d = LassoSchedule::new(3, 1, vec![gs[0].clone(); 5], vec![gs[2].clone()]).unwrap();
        let r = lcp_distance::<f64>(&a, &d, 3);
        assert_eq!(r, LcpDistance::Bounded { upper: 0.125 });
        assert!(!r.is_exact());
    }

    #[test]
    fn normal_form() {
        let gs = enumerate_graphs(3, 1).unwrap();
        let s = LassoSchedule::new(
            3,
            1,
            vec![gs[4].clone(), gs[2].clone(), gs[1].clone()],
            vec![gs[2].clone(), gs[1].clone(), gs[2].clone(), gs[1].clone()],
        )
        .unwrap();
        let n = s.normalized();
        assert_eq!(n.prefix(), &[gs[4].clone()]);
        assert_eq!(n.cycle(), &[gs[2].clone(), gs[1].clone()]);
        for r in 1..20 {
            assert_eq!(s.resolve_round(r), n.resolve_round(r));
        }
    }
}
