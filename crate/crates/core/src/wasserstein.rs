//! Exact one-dimensional Wasserstein-1 distances between uniform-weight
//! empirical measures, and their per-dimension aggregation.
//!
//! For ascending `a` (size `m`) and `b` (size `n`) the distance is the
//! integral over `u` in `[0, 1]` of `|F_a^-1(u) - F_b^-1(u)|`. Both quantile
//! functions are step functions with breakpoints on the grids `i/m` and
//! `j/n`, so one merge over the common grid of `1/(m n)` units gives the
//! integral exactly. Interval lengths are tracked as integers.

use std::cell::Cell;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::SamplePool;
use crate::state::{SelectionError, SelectionState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WassersteinError {
    #[error("empirical measure is empty")]
    Empty,
    #[error("input is not ascending at position {0}")]
    Unsorted(usize),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

thread_local! {
    static MERGE_STEPS: Cell<u64> = const { Cell::new(0) };
}

/// Per-thread count of merge steps performed by the distance kernel.
pub mod probe {
    use super::MERGE_STEPS;

    pub fn merge_steps() -> u64 {
        MERGE_STEPS.with(|c| c.get())
    }

    pub fn reset() {
        MERGE_STEPS.with(|c| c.set(0));
    }
}

/// Core merge. `a` yields `m` ascending values, `b` yields `n`.
fn w1_merge<A, B>(mut a: A, m: usize, mut b: B, n: usize) -> f64
where
    A: Iterator<Item = f64>,
    B: Iterator<Item = f64>,
{
    debug_assert!(m > 0 && n > 0);
    let (m64, n64) = (m as u64, n as u64);
    let total = m64 * n64;
    // next breakpoints of a and b, in units of 1/(m n)
    let (mut ea, mut eb) = (n64, m64);
    let mut va = a.next().unwrap_or(0.0);
    let mut vb = b.next().unwrap_or(0.0);
    let mut pos = 0u64;
    let mut acc = 0.0;
    let mut steps = 0u64;
    while pos < total {
        let next = ea.min(eb);
        acc += (next - pos) as f64 * (va - vb).abs();
        pos = next;
        if ea == next {
            ea += n64;
            if let Some(v) = a.next() {
                va = v;
            }
        }
        if eb == next {
            eb += m64;
            if let Some(v) = b.next() {
                vb = v;
            }
        }
        steps += 1;
    }
    MERGE_STEPS.with(|c| c.set(c.get() + steps));
    acc / total as f64
}

fn check_sorted(a: &[f64]) -> Result<(), WassersteinError> {
    if a.is_empty() {
        return Err(WassersteinError::Empty);
    }
    match a.windows(2).position(|w| !(w[0] <= w[1])) {
        Some(p) => Err(WassersteinError::Unsorted(p + 1)),
        None => Ok(()),
    }
}

/// W1 between two ascending samples. Validates input.
pub fn w1_sorted(a: &[f64], b: &[f64]) -> Result<f64, WassersteinError> {
    check_sorted(a)?;
    check_sorted(b)?;
    Ok(w1_sorted_unchecked(a, b))
}

/// W1 between two ascending, non-empty samples. Ordering is only checked in
/// debug builds.
pub fn w1_sorted_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert!(check_sorted(a).is_ok() && check_sorted(b).is_ok());
    w1_merge(a.iter().copied(), a.len(), b.iter().copied(), b.len())
}

/// Ascending merge of two ascending slices.
struct Merged<'a> {
    a: &'a [f64],
    b: &'a [f64],
}

impl Iterator for Merged<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        match (self.a.first(), self.b.first()) {
            (Some(&x), Some(&y)) => {
                if y < x {
                    self.b = &self.b[1..];
                    Some(y)
                } else {
                    self.a = &self.a[1..];
                    Some(x)
                }
            }
            (Some(&x), None) => {
                self.a = &self.a[1..];
                Some(x)
            }
            (None, Some(&y)) => {
                self.b = &self.b[1..];
                Some(y)
            }
            (None, None) => None,
        }
    }
}

/// Per-dimension W1 distances and their Manhattan sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WassersteinVector {
    pub w: Vec<f64>,
    pub manhattan: f64,
}

impl WassersteinVector {
    pub fn new(w: Vec<f64>) -> Self {
        let manhattan = w.iter().sum();
        Self { w, manhattan }
    }

    pub fn norm(&self, agg: Aggregation) -> f64 {
        agg.combine(&self.w)
    }
}

/// How per-dimension distances are combined into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Manhattan,
    Euclidean,
    Max,
}

impl Aggregation {
    pub fn combine(self, w: &[f64]) -> f64 {
        match self {
            Aggregation::Manhattan => w.iter().sum(),
            Aggregation::Euclidean => w.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Aggregation::Max => w.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// The selection objective: an aggregation plus optional per-dimension
/// weights applied to each distance before aggregating.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Objective {
    pub aggregation: Aggregation,
    pub weights: Option<Vec<f64>>,
}

impl Objective {
    pub fn manhattan() -> Self {
        Self::default()
    }

    /// Divides each dimension's distance by the pool's standard deviation in
    /// that dimension (dimensions with zero spread keep weight one).
    pub fn std_normalized(pool: &SamplePool, aggregation: Aggregation) -> Self {
        let weights = pool
            .column_std()
            .into_iter()
            .map(|s| if s > 0.0 { 1.0 / s } else { 1.0 })
            .collect();
        Self {
            aggregation,
            weights: Some(weights),
        }
    }

    pub fn score(&self, w: &[f64]) -> f64 {
        match &self.weights {
            None => self.aggregation.combine(w),
            Some(scale) => {
                let scaled: Vec<f64> = w.iter().zip(scale).map(|(x, s)| x * s).collect();
                self.aggregation.combine(&scaled)
            }
        }
    }

    /// Score of the state with `candidate` hypothetically added.
    pub fn eval_candidate(
        &self,
        pool: &SamplePool,
        state: &SelectionState,
        candidate: usize,
    ) -> Result<f64, WassersteinError> {
        state.check_candidate(candidate)?;
        Ok(self.score(&candidate_distances(pool, state, candidate)))
    }

    /// Score of the state with every index of `batch` hypothetically added.
    pub fn eval_batch(&self, pool: &SamplePool, state: &SelectionState, batch: &[usize]) -> Result<f64, WassersteinError> {
        state.check_batch(batch)?;
        Ok(self.score(&batch_distances(pool, state, batch)))
    }
}

/// Per-dimension distances after inserting one unpicked candidate. The
/// insertion point is found by binary search; nothing is re-sorted.
pub(crate) fn candidate_distances(pool: &SamplePool, state: &SelectionState, candidate: usize) -> Vec<f64> {
    let m = state.n_picked() + 1;
    (0..pool.dim())
        .map(|j| {
            let picked = state.picked_sorted(j);
            let v = pool.value(candidate, j);
            let at = picked.partition_point(|&x| x < v);
            let with_candidate = picked[..at]
                .iter()
                .copied()
                .chain(std::iter::once(v))
                .chain(picked[at..].iter().copied());
            let full = pool.sorted_view(j).values();
            w1_merge(full.iter().copied(), full.len(), with_candidate, m)
        })
        .collect()
}

pub(crate) fn batch_distances(pool: &SamplePool, state: &SelectionState, batch: &[usize]) -> Vec<f64> {
    let m = state.n_picked() + batch.len();
    let mut extra = Vec::with_capacity(batch.len());
    (0..pool.dim())
        .map(|j| {
            extra.clear();
            extra.extend(batch.iter().map(|&i| pool.value(i, j)));
            extra.sort_by(f64::total_cmp);
            let merged = Merged {
                a: state.picked_sorted(j),
                b: &extra,
            };
            let full = pool.sorted_view(j).values();
            w1_merge(full.iter().copied(), full.len(), merged, m)
        })
        .collect()
}

/// Distances between the full pool and the picked set, per dimension.
pub fn wass_vector(pool: &SamplePool, state: &SelectionState) -> Result<WassersteinVector, WassersteinError> {
    if state.n_picked() == 0 {
        return Err(SelectionError::NothingPicked.into());
    }
    let w = (0..pool.dim())
        .map(|j| w1_sorted_unchecked(pool.sorted_view(j).values(), state.picked_sorted(j)))
        .collect();
    Ok(WassersteinVector::new(w))
}

/// Manhattan norm of the state with `candidate` hypothetically added.
pub fn eval_candidate(pool: &SamplePool, state: &SelectionState, candidate: usize) -> Result<f64, WassersteinError> {
    Objective::manhattan().eval_candidate(pool, state, candidate)
}

/// Manhattan norm of the state with the whole `batch` hypothetically added.
pub fn eval_batch(pool: &SamplePool, state: &SelectionState, batch: &[usize]) -> Result<f64, WassersteinError> {
    Objective::manhattan().eval_batch(pool, state, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Riemann sum of |F_a^-1 - F_b^-1| on a midpoint grid of `k` points.
    fn quantile_riemann(a: &[f64], b: &[f64], k: usize) -> f64 {
        let q = |xs: &[f64], u: f64| xs[((u * xs.len() as f64).floor() as usize).min(xs.len() - 1)];
        (0..k)
            .map(|i| {
                let u = (i as f64 + 0.5) / k as f64;
                (q(a, u) - q(b, u)).abs()
            })
            .sum::<f64>()
            / k as f64
    }

    fn pool_1d(xs: &[f64]) -> SamplePool {
        let rows: Vec<[f64; 1]> = xs.iter().map(|&x| [x]).collect();
        SamplePool::from_rows(&rows).unwrap()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        assert_eq!(w1_sorted(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn point_mass_translation() {
        assert_eq!(w1_sorted(&[0.0], &[5.0]).unwrap(), 5.0);
    }

    #[test]
    fn two_vs_three_points() {
        let oracle = quantile_riemann(&[0.0, 1.0], &[0.0, 0.5, 1.0], 1_000_000);
        assert!((oracle - 1.0 / 6.0).abs() < 1e-6);
        let got = w1_sorted(&[0.0, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert!((got - 1.0 / 6.0).abs() < 1e-15, "{got}");
    }

    #[test]
    fn shifted_pair() {
        for c in [-3.5, -1.0, 0.0, 0.25, 7.0] {
            let got = w1_sorted(&[0.0, 1.0], &[c, c + 1.0]).unwrap();
            assert!((got - f64::abs(c)).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_empty_and_unsorted() {
        assert_eq!(w1_sorted(&[], &[1.0]), Err(WassersteinError::Empty));
        assert_eq!(w1_sorted(&[1.0], &[]), Err(WassersteinError::Empty));
        assert_eq!(w1_sorted(&[2.0, 1.0], &[1.0]), Err(WassersteinError::Unsorted(1)));
    }

    #[test]
    fn full_pick_is_zero() {
        let pool = SamplePool::from_rows(&[[0.0, 3.0], [1.0, -1.0], [0.5, 2.0]]).unwrap();
        let mut s = SelectionState::new(&pool);
        for i in [2, 0, 1] {
            s.insert(&pool, i).unwrap();
        }
        let wv = wass_vector(&pool, &s).unwrap();
        assert_eq!(wv.w, vec![0.0, 0.0]);
        assert_eq!(wv.manhattan, 0.0);
    }

    #[test]
    fn middle_point_of_three() {
        let pool = pool_1d(&[0.0, 0.5, 1.0]);
        let mut s = SelectionState::new(&pool);
        s.insert(&pool, 1).unwrap();
        let wv = wass_vector(&pool, &s).unwrap();
        let oracle = quantile_riemann(&[0.0, 0.5, 1.0], &[0.5], 999_999);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-6);
        assert!((wv.manhattan - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matching_dimension_is_zero() {
        // rows 0,1 carry the same dim-0 multiset as the pool would with duplicates
        let pool = SamplePool::from_rows(&[[1.0, 0.0], [1.0, 9.0]]).unwrap();
        let mut s = SelectionState::new(&pool);
        s.insert(&pool, 0).unwrap();
        let wv = wass_vector(&pool, &s).unwrap();
        assert_eq!(wv.w[0], 0.0);
        assert!(wv.w[1] > 0.0);
    }

    #[test]
    fn empty_state_rejected() {
        let pool = pool_1d(&[0.0, 1.0]);
        let s = SelectionState::new(&pool);
        assert!(matches!(
            wass_vector(&pool, &s),
            Err(WassersteinError::Selection(SelectionError::NothingPicked))
        ));
    }

    #[test]
    fn candidate_examples() {
        let pool = pool_1d(&[0.0, 1.0]);
        let mut s = SelectionState::new(&pool);
        assert_eq!(eval_candidate(&pool, &s, 0).unwrap(), 0.5);
        s.insert(&pool, 0).unwrap();
        assert_eq!(eval_candidate(&pool, &s, 1).unwrap(), 0.0);
        assert!(matches!(
            eval_candidate(&pool, &s, 0),
            Err(WassersteinError::Selection(SelectionError::AlreadyPicked(0)))
        ));
    }

    #[test]
    fn batch_examples() {
        let pool = pool_1d(&[0.0, 0.5, 1.0]);
        let mut s = SelectionState::new(&pool);
        let got = eval_batch(&pool, &s, &[0, 2]).unwrap();
        assert!((got - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(eval_batch(&pool, &s, &[0, 1, 2]).unwrap(), 0.0);
        s.insert(&pool, 1).unwrap();
        assert_eq!(eval_batch(&pool, &s, &[0, 2]).unwrap(), 0.0);
        assert!(matches!(
            eval_batch(&pool, &s, &[1]),
            Err(WassersteinError::Selection(SelectionError::AlreadyPicked(1)))
        ));
        assert!(matches!(
            eval_batch(&pool, &s, &[0, 0]),
            Err(WassersteinError::Selection(SelectionError::DuplicateInBatch(0)))
        ));
    }

    #[test]
    fn candidate_work_is_linear() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 37) % 500) as f64).collect();
        let pool = pool_1d(&xs);
        let mut s = SelectionState::new(&pool);
        for i in 0..100 {
            s.insert(&pool, i).unwrap();
        }
        probe::reset();
        eval_candidate(&pool, &s, 250).unwrap();
        let steps = probe::merge_steps();
        // one merge of n + (m + 1) - 1 breakpoints at most
        assert!(steps <= (500 + 101) as u64, "{steps}");
    }

    #[test]
    fn aggregations() {
        let wv = WassersteinVector::new(vec![3.0, 4.0]);
        assert_eq!(wv.manhattan, 7.0);
        assert_eq!(wv.norm(Aggregation::Euclidean), 5.0);
        assert_eq!(wv.norm(Aggregation::Max), 4.0);
        let obj = Objective {
            aggregation: Aggregation::Manhattan,
            weights: Some(vec![2.0, 0.5]),
        };
        assert_eq!(obj.score(&wv.w), 8.0);
    }

    fn sorted_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 1..=max_len).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            v
        })
    }

    proptest! {
        #[test]
        fn metric_axioms(a in sorted_vec(15), b in sorted_vec(15), c in sorted_vec(15)) {
            let ab = w1_sorted(&a, &b).unwrap();
            let ba = w1_sorted(&b, &a).unwrap();
            let bc = w1_sorted(&b, &c).unwrap();
            let ac = w1_sorted(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(w1_sorted(&a, &a).unwrap(), 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn integer_translation_is_exact(
            a in prop::collection::vec(-50i32..50, 1..12),
            b in prop::collection::vec(-50i32..50, 1..12),
            shift in -1000i32..1000,
        ) {
            let prep = |v: &[i32], s: i32| {
                let mut out: Vec<f64> = v.iter().map(|&x| f64::from(x + s)).collect();
                out.sort_by(f64::total_cmp);
                out
            };
            let base = w1_sorted(&prep(&a, 0), &prep(&b, 0)).unwrap();
            let moved = w1_sorted(&prep(&a, shift), &prep(&b, shift)).unwrap();
            prop_assert_eq!(base, moved);
        }

        #[test]
        fn homogeneity(a in sorted_vec(12), b in sorted_vec(12), lambda in 0.01f64..100.0) {
            let base = w1_sorted(&a, &b).unwrap();
            let sa: Vec<f64> = a.iter().map(|x| x * lambda).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * lambda).collect();
            let scaled = w1_sorted(&sa, &sb).unwrap();
            prop_assert!((scaled - lambda * base).abs() <= 1e-12 * (lambda * base).max(1e-300) + 1e-300);
        }

        #[test]
        fn candidate_matches_real_insertion(
            xs in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 2..30),
            seed in 0u64..1000,
        ) {
            let pool = SamplePool::from_rows(&xs).unwrap();
            let n = pool.len();
            let mut rng = crate::rng::RandomStream::new(seed);
            let mut s = SelectionState::new(&pool);
            let picks = rng.index(n);
            for _ in 0..picks {
                let r = s.remaining()[rng.index(s.remaining().len())];
                s.insert(&pool, r).unwrap();
            }
            for &c in s.remaining().to_vec().iter() {
                let hypothetical = eval_candidate(&pool, &s, c).unwrap();
                let mut real = s.clone();
                real.insert(&pool, c).unwrap();
                prop_assert_eq!(hypothetical, wass_vector(&pool, &real).unwrap().manhattan);
                prop_assert_eq!(hypothetical, eval_batch(&pool, &s, &[c]).unwrap());
            }
        }
    }
}
