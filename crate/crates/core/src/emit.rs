//! Serialization of a [`ForayModel`]: C-like loop nests and a JSON report.
//!
//! # Report schema (version 1)
//!
//! A single JSON object:
//!
//! | field        | content                                                       |
//! |--------------|---------------------------------------------------------------|
//! | `schema`     | always `"foray-report"`                                       |
//! | `version`    | `1`                                                           |
//! | `config`     | `n_exec`, `n_loc`, `require_iterator`                         |
//! | `loops`      | loop nodes, depth-first: `node`, `loop_id`, `begin_checkpoint`, `parent`, `path`, `entries`, `trip_min`, `trip_max`, `single_trip` |
//! | `references` | every reference: `instr`, `loop_node`, `context`, `nest_level`, `partial_level`, `expression` (`base`, `coeffs`, `partial`, or null), `category`, `purge_reason`, `exec_count`, `footprint`, `footprint_saturated`, `reads`, `writes`, `mispredictions` |
//! | `hints`      | inlining hints: `subject` and per-context surviving expressions |
//! | `stats`      | totals and per-category `references`/`accesses`/`footprint`, purge reason counts, loop and event counts |
//! | `notes`      | free-form analysis notes                                      |
//!
//! Categories are `included`, `purged` and `non-analyzable`; purge reasons
//! are `non-analyzable`, `no-iterator`, `too-few-executions` and
//! `too-few-locations`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{Category, FilterConfig, ForayModel, InliningHint, LoopSummary, ModelStats, ReferenceSummary};

pub const REPORT_SCHEMA: &str = "foray-report";
pub const REPORT_VERSION: u32 = 1;
pub const PARTIAL_MARKER: &str = "/* partial, base varies */";

#[derive(Default)]
struct Nest {
    loop_node: Option<usize>,
    items: Vec<Item>,
}

enum Item {
    Loop(Nest),
    Reference(String),
}

impl Nest {
    fn child(&mut self, node: usize) -> &mut Nest {
        let pos = self
            .items
            .iter()
            .position(|i| matches!(i, Item::Loop(n) if n.loop_node == Some(node)));
        let pos = pos.unwrap_or_else(|| {
            self.items.push(Item::Loop(Nest {
                loop_node: Some(node),
                items: Vec::new(),
            }));
            self.items.len() - 1
        });
        match &mut self.items[pos] {
            Item::Loop(n) => n,
            Item::Reference(_) => unreachable!(),
        }
    }

    fn render(&self, model: &ForayModel, indent: usize, out: &mut String) {
        for item in &self.items {
            item.render(model, indent, out);
        }
    }
}

impl Item {
    fn render(&self, model: &ForayModel, indent: usize, out: &mut String) {
        match self {
            Item::Loop(nest) => {
                let l = &model.loops[nest.loop_node.expect("nested loop has a node")];
                let it = l.iterator_name();
                let _ = writeln!(out, "{:indent$}for (int {it}=0; {it}<{}; {it}++)", "", l.trip_max);
                nest.render(model, indent + 1, out);
            }
            Item::Reference(line) => {
                let _ = writeln!(out, "{:indent$}{line}", "");
            }
        }
    }
}

/// Renders the index expression of a surviving reference, e.g.
/// `A4002a0[2147440948+1*i15+103*i12]`.
pub fn reference_line(r: &ReferenceSummary, chain: &[&LoopSummary]) -> String {
    let expr = r.expression.as_ref().expect("surviving reference has an expression");
    let mut line = format!("A{:x}[{}", r.instr, expr.base);
    // chain is outermost first, coefficients innermost first
    for (c, l) in expr.coeffs.iter().zip(chain.iter().rev()) {
        match c.signum() {
            0 => continue,
            1 => line.push('+'),
            _ => line.push('-'),
        }
        let _ = write!(line, "{}*{}", c.unsigned_abs(), l.iterator_name());
    }
    line.push(']');
    if expr.partial {
        line.push(' ');
        line.push_str(PARTIAL_MARKER);
    }
    line
}

/// C-like FORAY model text. Loop nests are separated by a blank line.
pub fn emit_c(model: &ForayModel) -> String {
    let mut forest = Nest::default();
    for r in model.surviving() {
        let Some(node) = r.loop_node else { continue };
        let full = model.loop_chain(node);
        let keep = r.expression.as_ref().map_or(0, |e| e.coeffs.len());
        let chain = &full[full.len() - keep.min(full.len())..];
        let mut nest = &mut forest;
        for l in chain {
            nest = nest.child(l.node);
        }
        nest.items.push(Item::Reference(reference_line(r, chain)));
    }
    let mut out = String::new();
    for (k, item) in forest.items.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        item.render(model, 0, &mut out);
    }
    out
}

/// Versioned machine-readable report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub version: u32,
    pub config: FilterConfig,
    pub loops: Vec<LoopSummary>,
    pub references: Vec<ReferenceSummary>,
    pub hints: Vec<InliningHint>,
    pub stats: ModelStats,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(model: &ForayModel) -> Self {
        Report {
            schema: REPORT_SCHEMA.to_string(),
            version: REPORT_VERSION,
            config: model.config,
            loops: model.loops.clone(),
            references: model.references.clone(),
            hints: model.hints.clone(),
            stats: model.stats.clone(),
            notes: model.notes.clone(),
        }
    }

    pub fn category_count(&self, category: Category) -> usize {
        self.references.iter().filter(|r| r.category == category).count()
    }
}

pub fn emit_report(model: &ForayModel) -> String {
    let mut text = serde_json::to_string_pretty(&Report::new(model)).expect("report serializes");
    text.push('\n');
    text
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("invalid report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported report schema {schema:?} version {version}")]
    Schema { schema: String, version: u32 },
}

pub fn parse_report(text: &str) -> Result<Report, ReportError> {
    let report: Report = serde_json::from_str(text)?;
    if report.schema != REPORT_SCHEMA || report.version != REPORT_VERSION {
        return Err(ReportError::Schema {
            schema: report.schema,
            version: report.version,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::analyze;
    use crate::trace::{AccessKind, TraceRecord};

    #[test]
    fn empty_model_emits_nothing() {
        let model = analyze(&[], FilterConfig::default()).unwrap();
        assert_eq!(emit_c(&model), "");
        let report = parse_report(&emit_report(&model)).unwrap();
        assert_eq!(report.stats, model.stats);
    }

    #[test]
    fn negative_and_zero_coefficients() {
        // for j<3: for i<4: A[5000 - 8*i]; j has coefficient 0
        let mut recs = vec![
            TraceRecord::declaration(1, 10, 11, 12),
            TraceRecord::declaration(2, 20, 21, 22),
        ];
        recs.push(TraceRecord::checkpoint(10));
        for _ in 0..3 {
            recs.push(TraceRecord::checkpoint(11));
            recs.push(TraceRecord::checkpoint(20));
            for i in 0..4u64 {
                recs.push(TraceRecord::checkpoint(21));
                recs.push(TraceRecord::access(0xab, 5000 - 8 * i, AccessKind::Read));
                recs.push(TraceRecord::checkpoint(22));
            }
            recs.push(TraceRecord::checkpoint(12));
        }
        let model = analyze(&recs, FilterConfig::with_thresholds(1, 1)).unwrap();
        assert_eq!(
            emit_c(&model),
            "for (int i10=0; i10<3; i10++)\n for (int i20=0; i20<4; i20++)\n  Aab[5000-8*i20]\n"
        );
    }

    #[test]
    fn rejects_foreign_schema() {
        let model = analyze(&[], FilterConfig::default()).unwrap();
        let text = emit_report(&model).replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(
            parse_report(&text),
            Err(ReportError::Schema { version: 7, .. })
        ));
    }
}
