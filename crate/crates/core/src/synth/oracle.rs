//! Ground truth for a workload, computed from the complete access list of
//! every reference.
//!
//! Nothing here shares logic with the streaming analyzer. The loop structure
//! comes from interpreting the spec directly, and expressions come from a
//! least-squares fit over all recorded accesses followed by an exact integer
//! check.

use std::collections::HashSet;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};

use super::spec::ValidSpec;
use super::walk::{self, AddressOutOfRange, Visitor};
use crate::model::{Category, FilterConfig, PurgeReason};
use crate::trace::{AccessKind, LoopId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpectedLoop {
    pub context: Vec<LoopId>,
    pub entries: u64,
    pub trip_min: u64,
    pub trip_max: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpectedReference {
    pub context: Vec<LoopId>,
    pub instr: u64,
    pub nest_level: usize,
    pub non_analyzable: bool,
    /// Number of innermost iterators the expression covers.
    pub partial_level: usize,
    pub base: i128,
    pub coeffs: Vec<i128>,
    pub exec_count: u64,
    pub footprint: u64,
    pub category: Category,
    pub purge_reason: Option<PurgeReason>,
}

#[derive(Clone, Debug, Default)]
pub struct Expected {
    pub loops: Vec<ExpectedLoop>,
    pub references: Vec<ExpectedReference>,
}

type Access = (Vec<i64>, i128);

#[derive(Default)]
struct Collect {
    loops: IndexMap<Vec<LoopId>, ExpectedLoop>,
    refs: IndexMap<(Vec<LoopId>, u64), Vec<Access>>,
}

impl Visitor for Collect {
    fn loop_entered(&mut self, context: &[LoopId]) {
        self.loops
            .entry(context.to_vec())
            .or_insert_with(|| ExpectedLoop {
                context: context.to_vec(),
                entries: 0,
                trip_min: u64::MAX,
                trip_max: 0,
            })
            .entries += 1;
    }

    fn loop_left(&mut self, context: &[LoopId], trips: u64) {
        let l = self.loops.get_mut(context).expect("entered before left");
        l.trip_min = l.trip_min.min(trips);
        l.trip_max = l.trip_max.max(trips);
    }

    fn access(&mut self, context: &[LoopId], iters: &[i64], instr: u64, address: u64, _kind: AccessKind) {
        self.refs
            .entry((context.to_vec(), instr))
            .or_default()
            .push((iters.to_vec(), address as i128));
    }
}

/// Expected analysis results for `spec` run with `seed` under `cfg`.
pub fn expected_results(spec: &ValidSpec, seed: u64, cfg: &FilterConfig) -> Result<Expected, AddressOutOfRange> {
    let mut collect = Collect::default();
    walk::run(spec, seed, &mut collect)?;
    let references = collect
        .refs
        .into_iter()
        .map(|((context, instr), accesses)| judge(context, instr, &accesses, cfg))
        .collect();
    Ok(Expected {
        loops: collect.loops.into_values().collect(),
        references,
    })
}

fn judge(context: Vec<LoopId>, instr: u64, accesses: &[Access], cfg: &FilterConfig) -> ExpectedReference {
    let n = accesses[0].0.len();
    let footprint = accesses.iter().map(|a| a.1).collect::<HashSet<_>>().len() as u64;
    let exec_count = accesses.len() as u64;
    let non_analyzable = first_moves_collide(accesses);
    let (partial_level, coeffs, base) = (0..=n)
        .rev()
        .find_map(|m| fit(accesses, m).map(|(c, b)| (m, c, b)))
        .unwrap_or_else(|| (0, Vec::new(), accesses[0].1));

    let reason = if non_analyzable {
        Some(PurgeReason::NonAnalyzable)
    } else if cfg.require_iterator && coeffs.iter().all(|&c| c == 0) {
        Some(PurgeReason::NoIterator)
    } else if exec_count < cfg.n_exec {
        Some(PurgeReason::TooFewExecutions)
    } else if footprint < cfg.n_loc {
        Some(PurgeReason::TooFewLocations)
    } else {
        None
    };
    let category = match reason {
        None => Category::Included,
        Some(PurgeReason::NonAnalyzable) => Category::NonAnalyzable,
        Some(_) => Category::Purged,
    };
    ExpectedReference {
        context,
        instr,
        nest_level: n,
        non_analyzable,
        partial_level,
        base,
        coeffs,
        exec_count,
        footprint,
        category,
        purge_reason: reason,
    }
}

/// True when two iterators change for the first time between the same pair
/// of consecutive executions, so neither step can be attributed.
pub fn first_moves_collide(accesses: &[Access]) -> bool {
    let n = accesses.first().map_or(0, |a| a.0.len());
    let mut moved = vec![false; n];
    for pair in accesses.windows(2) {
        let fresh = (0..n).filter(|&i| pair[0].0[i] != pair[1].0[i] && !moved[i]).count();
        if fresh >= 2 {
            return true;
        }
        for (m, (a, b)) in moved.iter_mut().zip(pair[0].0.iter().zip(&pair[1].0)) {
            *m |= a != b;
        }
    }
    false
}

/// Tries to explain the accesses with coefficients shared across slices for
/// the `m` innermost iterators, where a slice is a run of consecutive accesses
/// whose outer iterators `m+1..N` are constant. Returns the coefficients and
/// the base of the first slice.
pub fn fit(accesses: &[Access], m: usize) -> Option<(Vec<i128>, i128)> {
    let same_slice = |a: &Access, b: &Access| a.0[m..] == b.0[m..];
    let rows: Vec<(Vec<i128>, i128)> = accesses
        .windows(2)
        .filter(|p| same_slice(&p[0], &p[1]))
        .map(|p| {
            let d: Vec<i128> = (0..m).map(|i| (p[1].0[i] - p[0].0[i]) as i128).collect();
            (d, p[1].1 - p[0].1)
        })
        .collect();

    // Iterators that never move inside a slice have no observable coefficient
    // and are fixed at zero. The Gram matrix over the rest is positive definite.
    let moving: Vec<usize> = (0..m).filter(|&i| rows.iter().any(|(d, _)| d[i] != 0)).collect();
    let k = moving.len();
    let mut coeffs = vec![0i128; m];
    if k > 0 {
        let mut ata = DMatrix::<f64>::zeros(k, k);
        let mut atb = DVector::<f64>::zeros(k);
        for (d, rhs) in &rows {
            for (a, &i) in moving.iter().enumerate() {
                atb[a] += d[i] as f64 * *rhs as f64;
                for (b, &j) in moving.iter().enumerate() {
                    ata[(a, b)] += (d[i] * d[j]) as f64;
                }
            }
        }
        let solution = ata.cholesky()?.solve(&atb);
        for (a, &i) in moving.iter().enumerate() {
            coeffs[i] = solution[a].round() as i128;
        }
    }

    let exact = rows
        .iter()
        .all(|(d, rhs)| d.iter().zip(&coeffs).map(|(d, c)| d * c).sum::<i128>() == *rhs);
    if !exact {
        return None;
    }
    let (first_iters, first_addr) = &accesses[0];
    let base = first_addr
        - coeffs
            .iter()
            .zip(first_iters)
            .map(|(c, &it)| c * it as i128)
            .sum::<i128>();
    Some((coeffs, base))
}
