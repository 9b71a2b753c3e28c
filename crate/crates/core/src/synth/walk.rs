//! Direct interpretation of a validated workload spec.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{Coefficients, Placement, Step, ValidSpec, DEFAULT_PERTURB_RANGE};
use crate::trace::{AccessKind, CheckpointId, LoopId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("reference {name:?} computes address {address} in context {context:?}, outside the 64-bit address space")]
pub struct AddressOutOfRange {
    pub name: String,
    pub address: i128,
    pub context: Vec<LoopId>,
}

/// Receives the program's dynamic behavior as the spec is run.
pub(crate) trait Visitor {
    fn checkpoint(&mut self, _id: CheckpointId) {}
    fn loop_entered(&mut self, _context: &[LoopId]) {}
    fn loop_left(&mut self, _context: &[LoopId], _trips: u64) {}
    fn access(&mut self, context: &[LoopId], iters: &[i64], instr: u64, address: u64, kind: AccessKind);
}

struct Frame {
    iter: i64,
    serial: u64,
}

struct Offsets {
    rng: ChaCha8Rng,
    last_serial: Option<u64>,
    current: i64,
    cursor: usize,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

struct Walker<'a, V> {
    spec: &'a ValidSpec,
    seed: u64,
    visitor: &'a mut V,
    context: Vec<LoopId>,
    frames: Vec<Frame>,
    entries: Vec<u64>,
    serial: u64,
    iters: Vec<i64>,
    perturb: HashMap<(usize, Vec<LoopId>), Offsets>,
    noise: HashMap<(usize, Vec<LoopId>), ChaCha8Rng>,
}

/// Runs the spec once (or `repeat` times) and reports everything to `visitor`.
pub(crate) fn run<V: Visitor>(spec: &ValidSpec, seed: u64, visitor: &mut V) -> Result<(), AddressOutOfRange> {
    let mut w = Walker {
        spec,
        seed,
        visitor,
        context: Vec::new(),
        frames: Vec::new(),
        entries: vec![0; spec.loops().len()],
        serial: 0,
        iters: Vec::new(),
        perturb: HashMap::new(),
        noise: HashMap::new(),
    };
    for _ in 0..spec.spec.repeat {
        w.steps(&spec.top)?;
    }
    Ok(())
}

impl<V: Visitor> Walker<'_, V> {
    fn steps(&mut self, steps: &[Step]) -> Result<(), AddressOutOfRange> {
        for step in steps {
            match step {
                Step::Loop(i) => self.run_loop(*i)?,
                Step::Access(p) => self.access(p)?,
            }
        }
        Ok(())
    }

    fn run_loop(&mut self, index: usize) -> Result<(), AddressOutOfRange> {
        let spec = self.spec;
        let l = &spec.loops()[index];
        let trips = match (&l.trip, &l.trips) {
            (Some(t), _) => *t,
            (None, Some(list)) => list[(self.entries[index] % list.len() as u64) as usize],
            (None, None) => unreachable!("validated"),
        };
        self.entries[index] += 1;
        self.visitor.checkpoint(l.begin);
        self.context.push(l.id);
        self.frames.push(Frame { iter: -1, serial: 0 });
        self.visitor.loop_entered(&self.context);
        for _ in 0..trips {
            self.serial += 1;
            let frame = self.frames.last_mut().expect("frame pushed");
            frame.iter += 1;
            frame.serial = self.serial;
            self.visitor.checkpoint(l.body);
            self.steps(&spec.bodies[index])?;
            self.visitor.checkpoint(l.end);
        }
        self.visitor.loop_left(&self.context, trips);
        self.frames.pop();
        self.context.pop();
        Ok(())
    }

    fn access(&mut self, p: &Placement) -> Result<(), AddressOutOfRange> {
        let r = &self.spec.refs()[p.reference];
        self.iters.clear();
        self.iters.extend(self.frames.iter().rev().map(|f| f.iter));

        let mut address = p.base as i128;
        match &p.coeffs {
            Coefficients::Positional(c) => {
                address += c
                    .iter()
                    .zip(&self.iters)
                    .map(|(&c, &it)| c as i128 * it as i128)
                    .sum::<i128>();
            }
            Coefficients::ByLoop(map) => {
                for (id, frame) in self.context.iter().zip(&self.frames) {
                    address += *map.get(id).unwrap_or(&0) as i128 * frame.iter as i128;
                }
            }
            Coefficients::Zero => {}
        }

        if let Some(pert) = &r.perturb {
            let depth = self.frames.len();
            let serial = self.frames[depth - pert.level].serial;
            let seed = mix(self.seed ^ mix(pert.seed.unwrap_or(0) ^ mix(p.reference as u64)));
            let ordinal = self.perturb.len() as u64;
            let state = self
                .perturb
                .entry((p.reference, self.context.clone()))
                .or_insert_with(|| Offsets {
                    rng: ChaCha8Rng::seed_from_u64(mix(seed ^ ordinal)),
                    last_serial: None,
                    current: 0,
                    cursor: 0,
                });
            if state.last_serial != Some(serial) {
                state.last_serial = Some(serial);
                state.current = match &pert.offsets {
                    Some(list) => {
                        let v = list[state.cursor % list.len()];
                        state.cursor += 1;
                        v
                    }
                    None => state.rng.gen_range(0..pert.range.unwrap_or(DEFAULT_PERTURB_RANGE)) as i64,
                };
            }
            address += state.current as i128;
        }

        if let Some(noise) = &r.noise {
            let seed = mix(self.seed ^ mix(noise.seed ^ mix(!(p.reference as u64))));
            let ordinal = self.noise.len() as u64;
            let rng = self
                .noise
                .entry((p.reference, self.context.clone()))
                .or_insert_with(|| ChaCha8Rng::seed_from_u64(mix(seed ^ ordinal)));
            address += rng.gen_range(0..noise.range) as i128;
        }

        let address = u64::try_from(address).map_err(|_| AddressOutOfRange {
            name: r.name.clone(),
            address,
            context: self.context.clone(),
        })?;
        self.visitor
            .access(&self.context, &self.iters, r.instr, address, r.kind);
        Ok(())
    }
}
