//! Trace records and the line-oriented `.ftrace` text format.
//!
//! A trace starts with a header of loop declarations, one per line:
//!
//! ```text
//! Loop: 1 begin=12 body=13 end=17
//! ```
//!
//! followed by the event stream produced by the profiled program:
//!
//! ```text
//! Checkpoint: 12
//! Instr: 4002a0 addr: 7fff5934 wr
//! ```
//!
//! Numbers in `Loop:` and `Checkpoint:` lines are decimal. Both fields of an
//! `Instr:` line are hexadecimal without a `0x` prefix (either case is
//! accepted, lowercase is emitted). The access kind token is `rd` or `wr`.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

pub type CheckpointId = u64;
pub type LoopId = u64;

/// Direction of a memory access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    #[serde(rename = "rd")]
    Read,
    #[serde(rename = "wr")]
    Write,
}

impl AccessKind {
    pub fn token(self) -> &'static str {
        match self {
            AccessKind::Read => "rd",
            AccessKind::Write => "wr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CheckpointEvent {
    pub checkpoint_id: CheckpointId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MemoryAccessEvent {
    /// Identity of the static memory reference.
    pub instruction_address: u64,
    /// Byte address touched by this execution.
    pub memory_address: u64,
    pub kind: AccessKind,
}

/// Maps the three checkpoints of one static loop to their roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoopDeclaration {
    pub loop_id: LoopId,
    pub begin_id: CheckpointId,
    pub body_begin_id: CheckpointId,
    pub body_end_id: CheckpointId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceRecord {
    Declaration(LoopDeclaration),
    Checkpoint(CheckpointEvent),
    Access(MemoryAccessEvent),
}

impl TraceRecord {
    pub fn checkpoint(checkpoint_id: CheckpointId) -> Self {
        TraceRecord::Checkpoint(CheckpointEvent { checkpoint_id })
    }

    pub fn access(instruction_address: u64, memory_address: u64, kind: AccessKind) -> Self {
        TraceRecord::Access(MemoryAccessEvent {
            instruction_address,
            memory_address,
            kind,
        })
    }

    pub fn declaration(loop_id: LoopId, begin: CheckpointId, body: CheckpointId, end: CheckpointId) -> Self {
        TraceRecord::Declaration(LoopDeclaration {
            loop_id,
            begin_id: begin,
            body_begin_id: body,
            body_end_id: end,
        })
    }

    pub fn is_event(&self) -> bool {
        !matches!(self, TraceRecord::Declaration(_))
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceRecord::Declaration(d) => write!(
                f,
                "Loop: {} begin={} body={} end={}",
                d.loop_id, d.begin_id, d.body_begin_id, d.body_end_id
            ),
            TraceRecord::Checkpoint(c) => write!(f, "Checkpoint: {}", c.checkpoint_id),
            TraceRecord::Access(a) => write!(
                f,
                "Instr: {:x} addr: {:x} {}",
                a.instruction_address,
                a.memory_address,
                a.kind.token()
            ),
        }
    }
}

/// Encodes one record as a trace line (without the trailing newline).
pub fn encode_record(record: &TraceRecord) -> String {
    record.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed record: {text:?}")]
pub struct MalformedLine {
    pub text: String,
}

/// Decodes one trace line. `Ok(None)` means the line was blank and should be
/// skipped.
pub fn parse_trace_line(line: &str) -> Result<Option<TraceRecord>, MalformedLine> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(None);
    }
    let malformed = || MalformedLine { text: line.to_string() };
    let mut words = line.split_whitespace();
    let record = match words.next() {
        Some("Checkpoint:") => {
            let id = parse_dec(words.next()).ok_or_else(malformed)?;
            TraceRecord::checkpoint(id)
        }
        Some("Instr:") => {
            let instr = parse_hex(words.next()).ok_or_else(malformed)?;
            if words.next() != Some("addr:") {
                return Err(malformed());
            }
            let addr = parse_hex(words.next()).ok_or_else(malformed)?;
            let kind = match words.next() {
                Some("rd") => AccessKind::Read,
                Some("wr") => AccessKind::Write,
                _ => return Err(malformed()),
            };
            TraceRecord::access(instr, addr, kind)
        }
        Some("Loop:") => {
            let loop_id = parse_dec(words.next()).ok_or_else(malformed)?;
            let begin = parse_field(words.next(), "begin=").ok_or_else(malformed)?;
            let body = parse_field(words.next(), "body=").ok_or_else(malformed)?;
            let end = parse_field(words.next(), "end=").ok_or_else(malformed)?;
            TraceRecord::declaration(loop_id, begin, body, end)
        }
        _ => return Err(malformed()),
    };
    if words.next().is_some() {
        return Err(malformed());
    }
    Ok(Some(record))
}

fn parse_dec(word: Option<&str>) -> Option<u64> {
    let word = word?;
    if !word.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    word.parse().ok()
}

fn parse_hex(word: Option<&str>) -> Option<u64> {
    let word = word?;
    if word.is_empty() || !word.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    u64::from_str_radix(word, 16).ok()
}

fn parse_field(word: Option<&str>, key: &str) -> Option<u64> {
    parse_dec(word?.strip_prefix(key))
}

/// Role a checkpoint plays for its loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CheckpointRole {
    Begin,
    BodyBegin,
    BodyEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeclarationError {
    #[error("loop {0} declared twice")]
    DuplicateLoop(LoopId),
    #[error("loop {0} uses the same checkpoint for two roles")]
    RepeatedCheckpoint(LoopId),
    #[error("checkpoint {checkpoint} of loop {loop_id} is already used by loop {other}")]
    SharedCheckpoint {
        checkpoint: CheckpointId,
        loop_id: LoopId,
        other: LoopId,
    },
}

/// Checkpoint id to (loop, role) lookup built from the trace header.
#[derive(Clone, Debug, Default)]
pub struct DeclarationTable {
    by_checkpoint: HashMap<CheckpointId, (LoopId, CheckpointRole)>,
    loops: HashMap<LoopId, LoopDeclaration>,
}

impl DeclarationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, decl: LoopDeclaration) -> Result<(), DeclarationError> {
        if self.loops.contains_key(&decl.loop_id) {
            return Err(DeclarationError::DuplicateLoop(decl.loop_id));
        }
        let ids = [decl.begin_id, decl.body_begin_id, decl.body_end_id];
        if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
            return Err(DeclarationError::RepeatedCheckpoint(decl.loop_id));
        }
        for id in ids {
            if let Some(&(other, _)) = self.by_checkpoint.get(&id) {
                return Err(DeclarationError::SharedCheckpoint {
                    checkpoint: id,
                    loop_id: decl.loop_id,
                    other,
                });
            }
        }
        let roles = [
            CheckpointRole::Begin,
            CheckpointRole::BodyBegin,
            CheckpointRole::BodyEnd,
        ];
        for (id, role) in ids.into_iter().zip(roles) {
            self.by_checkpoint.insert(id, (decl.loop_id, role));
        }
        self.loops.insert(decl.loop_id, decl);
        Ok(())
    }

    pub fn resolve(&self, checkpoint: CheckpointId) -> Option<(LoopId, CheckpointRole)> {
        self.by_checkpoint.get(&checkpoint).copied()
    }

    pub fn get(&self, loop_id: LoopId) -> Option<&LoopDeclaration> {
        self.loops.get(&loop_id)
    }

    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: MalformedLine,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

impl TraceError {
    pub fn line(&self) -> Option<usize> {
        match self {
            TraceError::Malformed { line, .. } | TraceError::Format { line, .. } => Some(*line),
            TraceError::Io(_) => None,
        }
    }
}

/// A decoded record and the 1-based line it came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Positioned {
    pub line: usize,
    pub record: TraceRecord,
}

/// Pull-based, single-pass reader over a trace text stream.
///
/// Reads one line at a time and never revisits input. The header rule is
/// enforced here: a declaration after the first event and a checkpoint that
/// no declaration covers are both format errors. After the first error the
/// reader yields nothing further.
pub struct TraceReader<R> {
    source: R,
    buf: String,
    line: usize,
    seen_event: bool,
    decls: DeclarationTable,
    failed: bool,
}

/// Opens a trace stream over any buffered byte source.
pub fn open_trace_stream<R: BufRead>(source: R) -> TraceReader<R> {
    TraceReader {
        source,
        buf: String::new(),
        line: 0,
        seen_event: false,
        decls: DeclarationTable::new(),
        failed: false,
    }
}

impl<R: BufRead> TraceReader<R> {
    pub fn declarations(&self) -> &DeclarationTable {
        &self.decls
    }

    fn next_record(&mut self) -> Result<Option<Positioned>, TraceError> {
        loop {
            self.buf.clear();
            if self.source.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line += 1;
            let line = self.line;
            let record = match parse_trace_line(&self.buf) {
                Ok(Some(record)) => record,
                Ok(None) => continue,
                Err(source) => return Err(TraceError::Malformed { line, source }),
            };
            match record {
                TraceRecord::Declaration(decl) => {
                    if self.seen_event {
                        return Err(TraceError::Format {
                            line,
                            message: format!("declaration of loop {} after the first event", decl.loop_id),
                        });
                    }
                    self.decls.insert(decl).map_err(|e| TraceError::Format {
                        line,
                        message: e.to_string(),
                    })?;
                }
                TraceRecord::Checkpoint(ev) => {
                    self.seen_event = true;
                    if self.decls.resolve(ev.checkpoint_id).is_none() {
                        return Err(TraceError::Format {
                            line,
                            message: format!("checkpoint {} is not declared", ev.checkpoint_id),
                        });
                    }
                }
                TraceRecord::Access(_) => self.seen_event = true,
            }
            return Ok(Some(Positioned { line, record }));
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<Positioned, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_record() {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}
