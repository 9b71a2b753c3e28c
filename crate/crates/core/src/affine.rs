//! Incremental inference of affine index expressions for one memory
//! reference.
//!
//! A reference nested `N` loops deep is modelled as
//!
//! ```text
//! address = CONST + C_1 * it_1 + ... + C_N * it_N
//! ```
//!
//! with `it_1` the innermost iterator. Every execution of the reference
//! updates the state in one step: coefficients are solved the first time
//! their iterator is the only unknown one that moved, the next address is
//! predicted from what is known, and a wrong prediction rebases `CONST` and
//! narrows the expression to the innermost `M` iterators that moved on every
//! misprediction.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// Distinct-address tracker with an optional cap.
#[derive(Clone, Debug, Default)]
pub struct Footprint {
    seen: HashSet<u64>,
    cap: Option<usize>,
    saturated: bool,
}

impl Footprint {
    pub fn new(cap: Option<usize>) -> Self {
        Footprint {
            seen: HashSet::new(),
            cap,
            saturated: false,
        }
    }

    /// Records an address; returns true if it was new and stored.
    pub fn insert(&mut self, address: u64) -> bool {
        if let Some(cap) = self.cap {
            if self.seen.len() >= cap {
                if !self.seen.contains(&address) {
                    self.saturated = true;
                }
                return false;
            }
        }
        self.seen.insert(address)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    /// True once an address was dropped because the cap was reached.
    pub fn saturated(&self) -> bool {
        self.saturated
    }
}

/// Per-reference inference state.
#[derive(Clone, Debug)]
pub struct ReferenceState {
    n: usize,
    m: usize,
    constant: i128,
    first_constant: i128,
    coeffs: Vec<Option<i128>>,
    prev_iters: Vec<i64>,
    stable_on_miss: Vec<bool>,
    prev_address: i128,
    exec_count: u64,
    footprint: Footprint,
    non_analyzable: bool,
    mispredictions: u64,
    reads: u64,
    writes: u64,
}

/// Result of [`ReferenceState::finalize`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Finalized {
    Affine(AffineExpression),
    NonAnalyzable,
}

/// A full or partial affine index expression.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineExpression {
    pub base: i128,
    /// Coefficients of the `M` innermost iterators, innermost first.
    pub coeffs: Vec<i128>,
    pub partial: bool,
}

impl AffineExpression {
    pub fn has_iterator(&self) -> bool {
        self.coeffs.iter().any(|&c| c != 0)
    }

    pub fn evaluate(&self, iters: &[i64]) -> i128 {
        self.base
            + self
                .coeffs
                .iter()
                .zip(iters)
                .map(|(&c, &it)| c * it as i128)
                .sum::<i128>()
    }
}

impl ReferenceState {
    /// Creates the state on the first execution of a reference in its
    /// context. `footprint_cap` bounds the distinct-address set.
    pub fn new(iters: &[i64], address: u64, footprint_cap: Option<usize>) -> Self {
        let n = iters.len();
        let mut footprint = Footprint::new(footprint_cap);
        footprint.insert(address);
        ReferenceState {
            n,
            m: n,
            constant: address as i128,
            first_constant: address as i128,
            coeffs: vec![None; n],
            prev_iters: iters.to_vec(),
            stable_on_miss: vec![false; n],
            prev_address: address as i128,
            exec_count: 1,
            footprint,
            non_analyzable: false,
            mispredictions: 0,
            reads: 0,
            writes: 0,
        }
    }

    /// Feeds one subsequent execution of the reference.
    ///
    /// # Panics
    ///
    /// If `iters` does not have the nest level the state was created with.
    pub fn observe(&mut self, iters: &[i64], address: u64) {
        assert_eq!(iters.len(), self.n, "iterator vector length changed");
        let address = address as i128;
        if !self.non_analyzable {
            self.infer(iters, address);
        }
        self.prev_iters.copy_from_slice(iters);
        self.prev_address = address;
        self.exec_count += 1;
        self.footprint.insert(address as u64);
    }

    fn infer(&mut self, iters: &[i64], address: i128) {
        let mut unknown_moved = (0..self.n).filter(|&i| iters[i] != self.prev_iters[i] && self.coeffs[i].is_none());
        let solve = unknown_moved.next();
        if unknown_moved.next().is_some() {
            self.non_analyzable = true;
            return;
        }

        if let Some(k) = solve {
            // Known coefficients account for their own iterator deltas; the
            // rest of the address change is attributed to iterator k.
            let adjust: i128 = (0..self.n)
                .filter(|&i| i != k && iters[i] != self.prev_iters[i])
                .filter_map(|i| self.coeffs[i].map(|c| c * (iters[i] - self.prev_iters[i]) as i128))
                .sum();
            let delta = address - adjust - self.prev_address;
            let step = (iters[k] - self.prev_iters[k]) as i128;
            if delta % step == 0 {
                self.coeffs[k] = Some(delta / step);
            }
        }

        let predicted = self.predict(iters);
        if predicted != address {
            self.mispredictions += 1;
            for ((stable, now), before) in self.stable_on_miss.iter_mut().zip(iters).zip(&self.prev_iters) {
                *stable |= now == before;
            }
            self.constant += address - predicted;
            // Outermost iterator that moved on every misprediction bounds
            // the partial expression from above.
            self.m = self.stable_on_miss.iter().rposition(|&s| !s).unwrap_or(0);
        }
    }

    /// Address predicted for `iters` from the constant and known coefficients.
    pub fn predict(&self, iters: &[i64]) -> i128 {
        self.constant
            + self
                .coeffs
                .iter()
                .zip(iters)
                .filter_map(|(c, &it)| c.map(|c| c * it as i128))
                .sum::<i128>()
    }

    pub fn record_kind(&mut self, kind: crate::trace::AccessKind) {
        match kind {
            crate::trace::AccessKind::Read => self.reads += 1,
            crate::trace::AccessKind::Write => self.writes += 1,
        }
    }

    pub fn finalize(&self) -> Finalized {
        if self.non_analyzable {
            return Finalized::NonAnalyzable;
        }
        let partial = self.m < self.n;
        Finalized::Affine(AffineExpression {
            base: if partial { self.first_constant } else { self.constant },
            coeffs: self.coeffs[..self.m].iter().map(|c| c.unwrap_or(0)).collect(),
            partial,
        })
    }

    pub fn nest_level(&self) -> usize {
        self.n
    }

    pub fn partial_level(&self) -> usize {
        self.m
    }

    pub fn constant(&self) -> i128 {
        self.constant
    }

    pub fn coefficients(&self) -> &[Option<i128>] {
        &self.coeffs
    }

    pub fn exec_count(&self) -> u64 {
        self.exec_count
    }

    pub fn footprint(&self) -> &Footprint {
        &self.footprint
    }

    pub fn is_non_analyzable(&self) -> bool {
        self.non_analyzable
    }

    pub fn mispredictions(&self) -> u64 {
        self.mispredictions
    }

    pub fn reads(&self) -> u64 {
        self.reads
    }

    pub fn writes(&self) -> u64 {
        self.writes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn replay(accesses: &[(Vec<i64>, u64)]) -> ReferenceState {
        let (first, rest) = accesses.split_first().unwrap();
        let mut state = ReferenceState::new(&first.0, first.1, None);
        for (iters, addr) in rest {
            state.observe(iters, *addr);
        }
        state
    }

    #[test]
    fn init_sets_constant_to_first_address() {
        let state = ReferenceState::new(&[0, 0], 0x7fff5934, None);
        assert_eq!(state.constant(), 2147440948);
        assert_eq!(state.nest_level(), 2);
        assert_eq!(state.partial_level(), 2);
        assert_eq!(state.coefficients(), &[None, None]);
        assert_eq!(state.exec_count(), 1);
        assert_eq!(state.footprint().len(), 1);

        let top = ReferenceState::new(&[], 0x1000, None);
        assert_eq!(top.nest_level(), 0);

        let mid = ReferenceState::new(&[5], 0, None);
        assert_eq!(mid.constant(), 0);
    }

    #[test]
    fn pointer_walk_replay() {
        // (inner, outer) iterators of a pointer bumped by 100 per outer
        // iteration and by 1 per inner iteration.
        let q = 0x7fff5934u64 - 100;
        let state = replay(&[
            (vec![0, 0], q + 100),
            (vec![1, 0], q + 101),
            (vec![2, 0], q + 102),
            (vec![0, 1], q + 203),
            (vec![1, 1], q + 204),
            (vec![2, 1], q + 205),
        ]);
        assert_eq!(state.coefficients(), &[Some(1), Some(103)]);
        assert_eq!(state.constant(), (q + 100) as i128);
        assert_eq!(state.partial_level(), 2);
        assert_eq!(state.mispredictions(), 0);
        assert_eq!(
            state.finalize(),
            Finalized::Affine(AffineExpression {
                base: 2147440948,
                coeffs: vec![1, 103],
                partial: false
            })
        );
    }

    #[test]
    fn single_loop_stride() {
        let state = replay(&[(vec![0], 0x100), (vec![1], 0x104), (vec![2], 0x108)]);
        assert_eq!(state.coefficients(), &[Some(4)]);
        assert_eq!(state.constant(), 0x100);
    }

    #[test]
    fn two_unknowns_moving_together_is_non_analyzable() {
        let state = replay(&[(vec![0, 0], 0x100), (vec![1, 1], 0x200), (vec![2, 1], 0x204)]);
        assert!(state.is_non_analyzable());
        assert_eq!(state.finalize(), Finalized::NonAnalyzable);
        assert_eq!(state.exec_count(), 3);
        assert_eq!(state.footprint().len(), 3);
    }

    #[test]
    fn perturbed_outer_level_yields_partial_expression() {
        // Two-level affine nest (8 x 4, coeffs 4/64) re-based by an irregular
        // offset every outer (third-level) iteration.
        let offsets = [0i64, 7000, 1300, 91000, 4200];
        let mut accesses = Vec::new();
        for (k, off) in offsets.iter().enumerate() {
            for j in 0..4i64 {
                for i in 0..8i64 {
                    accesses.push((vec![i, j, k as i64], (0x10000 + off + 4 * i + 64 * j) as u64));
                }
            }
        }
        let state = replay(&accesses);
        assert!(state.mispredictions() > 0);
        assert_eq!(state.partial_level(), 2);
        match state.finalize() {
            Finalized::Affine(e) => {
                assert_eq!(e.coeffs, vec![4, 64]);
                assert!(e.partial);
                assert_eq!(e.base, 0x10000);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inexact_solution_leaves_coefficient_unknown() {
        // Outer iterator first moves by 2 while the address moves by 3.
        let state = replay(&[(vec![0, 0], 100), (vec![1, 0], 104), (vec![0, 2], 103)]);
        assert_eq!(state.coefficients(), &[Some(4), None]);
        assert_eq!(state.mispredictions(), 1);
        assert!(!state.is_non_analyzable());
    }

    #[test]
    fn constant_address_has_zero_coefficients() {
        let state = replay(&[(vec![0], 50), (vec![1], 50), (vec![2], 50)]);
        match state.finalize() {
            Finalized::Affine(e) => assert!(!e.has_iterator()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn footprint_cap() {
        let mut fp = Footprint::new(Some(2));
        assert!(fp.insert(1));
        assert!(fp.insert(2));
        assert!(!fp.insert(2));
        assert!(!fp.saturated());
        assert!(!fp.insert(3));
        assert!(fp.saturated());
        assert_eq!(fp.len(), 2);
    }

    fn enumerate(trips: &[i64]) -> Vec<Vec<i64>> {
        // innermost first; outermost varies slowest
        let mut out = vec![vec![0; trips.len()]];
        loop {
            let mut next = out.last().unwrap().clone();
            let mut level = 0;
            loop {
                if level == trips.len() {
                    return out;
                }
                next[level] += 1;
                if next[level] < trips[level] {
                    break;
                }
                next[level] = 0;
                level += 1;
            }
            out.push(next);
        }
    }

    proptest! {
        #[test]
        fn recovers_exact_affine_nests(
            spec in prop::collection::vec((2i64..6, -256i128..=256), 1..=4),
            base in (1i128 << 20)..(1i128 << 40),
        ) {
            let trips: Vec<i64> = spec.iter().map(|s| s.0).collect();
            let coeffs: Vec<i128> = spec.iter().map(|s| s.1).collect();
            let accesses: Vec<(Vec<i64>, u64)> = enumerate(&trips)
                .into_iter()
                .map(|it| {
                    let addr = base + it.iter().zip(&coeffs).map(|(&i, &c)| c * i as i128).sum::<i128>();
                    (it, addr as u64)
                })
                .collect();
            let state = replay(&accesses);
            prop_assert_eq!(state.mispredictions(), 0);
            prop_assert_eq!(
                state.finalize(),
                Finalized::Affine(AffineExpression { base, coeffs, partial: false })
            );
        }

        #[test]
        fn demotion_is_monotone_and_non_analyzable_absorbs(
            steps in prop::collection::vec((prop::collection::vec(0i64..4, 3), 0u64..64), 1..60),
        ) {
            let mut state = ReferenceState::new(&[0, 0, 0], 0, None);
            let mut m = state.partial_level();
            let mut dead = false;
            let mut known: Vec<Option<i128>> = state.coefficients().to_vec();
            for (iters, addr) in &steps {
                state.observe(iters, *addr);
                prop_assert!(state.partial_level() <= m);
                m = state.partial_level();
                prop_assert!(!dead || state.is_non_analyzable());
                dead = state.is_non_analyzable();
                for (before, now) in known.iter().zip(state.coefficients()) {
                    if before.is_some() {
                        prop_assert_eq!(before, now);
                    }
                }
                known = state.coefficients().to_vec();
            }
            prop_assert_eq!(state.exec_count(), steps.len() as u64 + 1);
        }

        #[test]
        fn predictions_hold_after_last_misprediction(
            trips in prop::collection::vec(2i64..5, 1..=3),
            coeffs in prop::collection::vec(-64i128..64, 3),
            noise_until in 0usize..10,
        ) {
            let coeffs = &coeffs[..trips.len()];
            let iters = enumerate(&trips);
            let mut state = ReferenceState::new(&iters[0], 1 << 20, None);
            let mut trace = Vec::new();
            for (k, it) in iters.iter().enumerate().skip(1) {
                let noise = if k < noise_until { 17 * k as i128 } else { 0 };
                let addr = (1i128 << 20) + noise + it.iter().zip(coeffs).map(|(&i, &c)| c * i as i128).sum::<i128>();
                let all_known = state.coefficients().iter().all(Option::is_some);
                state.observe(it, addr as u64);
                trace.push((it.clone(), addr, all_known, state.mispredictions()));
            }
            let last = state.mispredictions();
            for (it, addr, all_known, misses) in &trace {
                if *all_known && *misses == last {
                    prop_assert_eq!(state.predict(it), *addr);
                }
            }
        }
    }
}
