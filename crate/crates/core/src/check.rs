//! Round-trip check: generate a trace from a spec, analyze it, and compare the
//! model with the oracle's expectations field by field.

use std::collections::HashMap;
use std::fmt;

use crate::model::{AnalysisError, Analyzer, Category, FilterConfig, ForayModel};
use crate::synth::{expected_results, generate_into, Expected, GenerateError, ValidSpec};
use crate::trace::LoopId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    /// Loop path, plus the instruction for references.
    pub subject: String,
    pub field: &'static str,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} expected {} got {}",
            self.subject, self.field, self.expected, self.actual
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("analyzer rejected generated trace: {0}")]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug)]
pub struct CheckReport {
    pub model: ForayModel,
    pub expected: Expected,
    pub mismatches: Vec<Mismatch>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Generates the trace for `(spec, seed)`, streams it through the analyzer and
/// compares the result with the oracle.
pub fn check_spec(spec: &ValidSpec, seed: u64, cfg: &FilterConfig) -> Result<CheckReport, CheckError> {
    let mut analyzer = Analyzer::new(*cfg);
    let mut failure = None;
    generate_into(spec, seed, |r| {
        if failure.is_none() {
            if let Err(e) = analyzer.feed(&r) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let model = analyzer.finish();
    let expected = expected_results(spec, seed, cfg).map_err(GenerateError::from)?;
    let mismatches = compare(&model, &expected);
    Ok(CheckReport {
        model,
        expected,
        mismatches,
    })
}

fn path(p: &[LoopId]) -> String {
    let parts: Vec<String> = p.iter().map(|id| id.to_string()).collect();
    format!("/{}", parts.join("/"))
}

struct Diff<'a>(&'a mut Vec<Mismatch>, String);

impl Diff<'_> {
    fn field<T: PartialEq + fmt::Debug>(&mut self, field: &'static str, expected: T, actual: T) {
        if expected != actual {
            self.0.push(Mismatch {
                subject: self.1.clone(),
                field,
                expected: format!("{expected:?}"),
                actual: format!("{actual:?}"),
            });
        }
    }
}

/// Lists every disagreement between `model` and `expected`.
pub fn compare(model: &ForayModel, expected: &Expected) -> Vec<Mismatch> {
    let mut out = Vec::new();

    let loops: HashMap<&[LoopId], _> = model.loops.iter().map(|l| (l.path.as_slice(), l)).collect();
    for e in &expected.loops {
        let mut d = Diff(&mut out, format!("loop {}", path(&e.context)));
        match loops.get(e.context.as_slice()) {
            None => d.field("present", true, false),
            Some(l) => {
                d.field("entries", e.entries, l.entries);
                d.field("trip_min", e.trip_min, l.trip_min);
                d.field("trip_max", e.trip_max, l.trip_max);
            }
        }
    }
    for l in &model.loops {
        if !expected.loops.iter().any(|e| e.context == l.path) {
            Diff(&mut out, format!("loop {}", path(&l.path))).field("present", false, true);
        }
    }

    let refs: HashMap<(&[LoopId], u64), _> = model
        .references
        .iter()
        .map(|r| ((r.context.as_slice(), r.instr), r))
        .collect();
    for e in &expected.references {
        let mut d = Diff(&mut out, format!("ref {:x} in {}", e.instr, path(&e.context)));
        let Some(r) = refs.get(&(e.context.as_slice(), e.instr)) else {
            d.field("present", true, false);
            continue;
        };
        d.field("category", e.category, r.category);
        d.field("purge_reason", e.purge_reason, r.purge_reason);
        d.field("nest_level", e.nest_level, r.nest_level);
        d.field("exec_count", e.exec_count, r.exec_count);
        d.field("footprint", e.footprint, r.footprint);
        if e.category == Category::NonAnalyzable || r.category == Category::NonAnalyzable {
            continue;
        }
        d.field("partial_level", e.partial_level, r.partial_level);
        match &r.expression {
            None => d.field("expression", true, false),
            Some(x) => {
                d.field("coeffs", e.coeffs.as_slice(), x.coeffs.as_slice());
                d.field("base", e.base, x.base);
                d.field("partial", e.partial_level < e.nest_level, x.partial);
            }
        }
    }
    for r in &model.references {
        if !expected
            .references
            .iter()
            .any(|e| e.context == r.context && e.instr == r.instr)
        {
            Diff(&mut out, format!("ref {:x} in {}", r.instr, path(&r.context))).field("present", false, true);
        }
    }
    out
}
