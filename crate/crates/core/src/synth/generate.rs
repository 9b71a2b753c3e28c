use std::io::{self, Write};

use super::spec::ValidSpec;
use super::walk::{self, AddressOutOfRange, Visitor};
use crate::trace::{AccessKind, CheckpointId, LoopId, TraceRecord};

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error(transparent)]
    Address(#[from] AddressOutOfRange),
    #[error("write error: {0}")]
    Io(#[from] io::Error),
}

struct Emit<F>(F);

impl<F: FnMut(TraceRecord)> Visitor for Emit<F> {
    fn checkpoint(&mut self, id: CheckpointId) {
        (self.0)(TraceRecord::checkpoint(id));
    }

    fn access(&mut self, _context: &[LoopId], _iters: &[i64], instr: u64, address: u64, kind: AccessKind) {
        (self.0)(TraceRecord::access(instr, address, kind));
    }
}

/// Streams the trace of `spec` to `sink`: one declaration per loop, then the
/// checkpoint/access events. Deterministic in `(spec, seed)`; the seed only
/// affects perturbation and noise offsets.
pub fn generate_into<F: FnMut(TraceRecord)>(spec: &ValidSpec, seed: u64, mut sink: F) -> Result<(), GenerateError> {
    for l in spec.loops() {
        sink(TraceRecord::declaration(l.id, l.begin, l.body, l.end));
    }
    walk::run(spec, seed, &mut Emit(sink))?;
    Ok(())
}

pub fn generate_trace(spec: &ValidSpec, seed: u64) -> Result<Vec<TraceRecord>, GenerateError> {
    let mut out = Vec::new();
    generate_into(spec, seed, |r| out.push(r))?;
    Ok(out)
}

/// Writes the trace as `.ftrace` text.
pub fn write_trace<W: Write>(spec: &ValidSpec, seed: u64, mut out: W) -> Result<(), GenerateError> {
    let mut failed = None;
    generate_into(spec, seed, |r| {
        if failed.is_none() {
            if let Err(e) = writeln!(out, "{r}") {
                failed = Some(e);
            }
        }
    })?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    out.flush()?;
    Ok(())
}
