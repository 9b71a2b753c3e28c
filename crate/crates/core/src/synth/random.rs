//! Seeded families of random workload specs for round-trip checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{Item, LoopSpec, Noise, Perturbation, RefSpec, WorkloadSpec, SPEC_VERSION};
use crate::trace::AccessKind;

/// Upper bound on the product of trip counts along the nest.
pub const MAX_ITERATIONS: u64 = 3000;

fn chain_loops(trips: &[Vec<u64>]) -> Vec<LoopSpec> {
    trips
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let id = i as u64 + 1;
            LoopSpec {
                id,
                begin: 100 + 3 * id,
                body: 101 + 3 * id,
                end: 102 + 3 * id,
                trip: (t.len() == 1).then(|| t[0]),
                trips: (t.len() > 1).then(|| t.clone()),
                contents: if i + 1 < trips.len() {
                    vec![Item::of_loop(id + 1)]
                } else {
                    Vec::new()
                },
            }
        })
        .collect()
}

fn random_trips(rng: &mut ChaCha8Rng, depth: usize, low: u64) -> Vec<Vec<u64>> {
    let mut maxima: Vec<u64> = (0..depth).map(|_| rng.gen_range(low..=20)).collect();
    while maxima.iter().product::<u64>() > MAX_ITERATIONS {
        let (i, _) = maxima.iter().enumerate().max_by_key(|(_, &t)| t).expect("non-empty");
        maxima[i] -= 1;
    }
    maxima
        .into_iter()
        .map(|max| {
            if rng.gen_bool(0.2) {
                let n = rng.gen_range(2..=4);
                (0..n).map(|_| rng.gen_range(low..=max.max(low))).collect()
            } else {
                vec![max]
            }
        })
        .collect()
}

/// A chain nest of depth 1..=4 with trip counts in 2..=20 and one to three
/// references at random depths. References are affine with coefficients in
/// -256..=256 and bases below 2^40; some have all-zero coefficients, some are
/// perturbed at a random level and some carry per-access noise.
pub fn random_spec(seed: u64) -> WorkloadSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(1..=4);
    let mut loops = chain_loops(&random_trips(&mut rng, depth, 2));
    let mut refs = Vec::new();
    for k in 0..rng.gen_range(1..=3) {
        let attach = rng.gen_range(1..=depth);
        let name = format!("r{k}");
        let coeffs: Vec<i64> = if rng.gen_bool(0.15) {
            vec![0; attach]
        } else {
            (0..attach).map(|_| rng.gen_range(-256..=256)).collect()
        };
        let (perturb, noise) = match rng.gen_range(0..20) {
            0..=4 => (
                Some(Perturbation {
                    level: rng.gen_range(1..=attach),
                    seed: Some(rng.gen()),
                    range: None,
                    offsets: None,
                }),
                None,
            ),
            5..=6 => (
                None,
                Some(Noise {
                    seed: rng.gen(),
                    range: 1 << 12,
                }),
            ),
            _ => (None, None),
        };
        refs.push(RefSpec {
            name: name.clone(),
            instr: 0x400000 + 4 * k,
            kind: if rng.gen_bool(0.5) {
                AccessKind::Read
            } else {
                AccessKind::Write
            },
            base: rng.gen_range((1i64 << 24)..(1i64 << 40)),
            coeffs: Some(coeffs),
            by_loop: None,
            perturb,
            noise,
        });
        let body = &mut loops[attach - 1].contents;
        if rng.gen_bool(0.5) {
            body.insert(0, Item::of_ref(&name));
        } else {
            body.push(Item::of_ref(&name));
        }
    }
    WorkloadSpec {
        version: SPEC_VERSION,
        repeat: 1,
        top: vec![Item::of_loop(1)],
        loops,
        refs,
    }
}

/// A `depth`-deep chain nest with one affine reference in the innermost body
/// whose base jumps by an irregular offset on every iteration of the loop at
/// `level` (1 = innermost). Trip counts are at least 3.
pub fn perturbed_nest_spec(seed: u64, depth: usize, level: usize) -> WorkloadSpec {
    assert!((1..=depth).contains(&level));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7e57);
    let mut loops = chain_loops(&random_trips(&mut rng, depth, 3));
    for l in &mut loops {
        if let Some(t) = &l.trips {
            l.trip = t.iter().copied().max();
            l.trips = None;
        }
    }
    loops[depth - 1].contents.push(Item::of_ref("a"));
    let coeffs: Vec<i64> = (0..depth)
        .map(|_| {
            let c: i64 = rng.gen_range(1..=256);
            if rng.gen_bool(0.3) {
                -c
            } else {
                c
            }
        })
        .collect();
    WorkloadSpec {
        version: SPEC_VERSION,
        repeat: 1,
        top: vec![Item::of_loop(1)],
        loops,
        refs: vec![RefSpec {
            name: "a".to_string(),
            instr: 0x401000,
            kind: AccessKind::Read,
            base: rng.gen_range((1i64 << 30)..(1i64 << 40)),
            coeffs: Some(coeffs),
            by_loop: None,
            perturb: Some(Perturbation {
                level,
                seed: Some(rng.gen()),
                range: Some(1 << 24),
                offsets: None,
            }),
            noise: None,
        }],
    }
}
