//! Single-pass analysis of a trace into a FORAY model.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::affine::{AffineExpression, Finalized, ReferenceState};
use crate::trace::{
    open_trace_stream, CheckpointId, DeclarationError, DeclarationTable, LoopId, TraceError, TraceRecord,
};
use crate::tree::{LoopTree, NodeId, StructureError};

/// Thresholds of the purge step. Both counts are inclusive lower bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub n_exec: u64,
    pub n_loc: u64,
    pub require_iterator: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_exec: 20,
            n_loc: 10,
            require_iterator: true,
        }
    }
}

impl FilterConfig {
    pub fn with_thresholds(n_exec: u64, n_loc: u64) -> Self {
        FilterConfig {
            n_exec,
            n_loc,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Included,
    Purged,
    NonAnalyzable,
}

/// Why a reference was left out of the model, in checking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PurgeReason {
    NonAnalyzable,
    NoIterator,
    TooFewExecutions,
    TooFewLocations,
}

impl PurgeReason {
    pub fn category(self) -> Category {
        match self {
            PurgeReason::NonAnalyzable => Category::NonAnalyzable,
            _ => Category::Purged,
        }
    }
}

/// Applies the purge predicates to one finalized reference. `None` keeps it.
pub fn purge_reason(outcome: &Finalized, exec_count: u64, footprint: u64, cfg: &FilterConfig) -> Option<PurgeReason> {
    let expr = match outcome {
        Finalized::NonAnalyzable => return Some(PurgeReason::NonAnalyzable),
        Finalized::Affine(expr) => expr,
    };
    if cfg.require_iterator && !expr.has_iterator() {
        return Some(PurgeReason::NoIterator);
    }
    if exec_count < cfg.n_exec {
        return Some(PurgeReason::TooFewExecutions);
    }
    if footprint < cfg.n_loc {
        return Some(PurgeReason::TooFewLocations);
    }
    None
}

/// Splits references into surviving and purged ones.
pub fn purge(
    refs: Vec<ReferenceSummary>,
    cfg: &FilterConfig,
) -> (Vec<ReferenceSummary>, Vec<(ReferenceSummary, PurgeReason)>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in refs {
        let outcome = match &r.expression {
            Some(e) => Finalized::Affine(e.clone()),
            None => Finalized::NonAnalyzable,
        };
        match purge_reason(&outcome, r.exec_count, r.footprint, cfg) {
            None => kept.push(r),
            Some(reason) => dropped.push((r, reason)),
        }
    }
    (kept, dropped)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSummary {
    /// Index into [`ForayModel::loops`].
    pub node: usize,
    pub loop_id: LoopId,
    /// Begin checkpoint; the emitted iterator is named after it.
    pub begin_checkpoint: CheckpointId,
    pub parent: Option<usize>,
    /// Static loop ids from the outermost loop down to this one.
    pub path: Vec<LoopId>,
    pub entries: u64,
    pub trip_min: u64,
    pub trip_max: u64,
    pub single_trip: bool,
}

impl LoopSummary {
    pub fn iterator_name(&self) -> String {
        format!("i{}", self.begin_checkpoint)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub instr: u64,
    /// Innermost enclosing loop node, `None` outside every loop.
    pub loop_node: Option<usize>,
    pub context: Vec<LoopId>,
    pub nest_level: usize,
    pub partial_level: usize,
    /// `None` when the reference is non-analyzable.
    pub expression: Option<AffineExpression>,
    pub category: Category,
    pub purge_reason: Option<PurgeReason>,
    pub exec_count: u64,
    pub footprint: u64,
    pub footprint_saturated: bool,
    pub reads: u64,
    pub writes: u64,
    pub mispredictions: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTotals {
    pub references: u64,
    pub accesses: u64,
    pub footprint: u64,
}

impl CategoryTotals {
    fn add(&mut self, r: &ReferenceSummary) {
        self.references += 1;
        self.accesses += r.exec_count;
        self.footprint += r.footprint;
    }
}

/// Aggregate statistics. Footprints are summed per reference, so the three
/// categories add up to the totals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStats {
    pub total: CategoryTotals,
    pub included: CategoryTotals,
    pub purged: CategoryTotals,
    pub non_analyzable: CategoryTotals,
    pub purge_reasons: BTreeMap<PurgeReason, u64>,
    pub static_loops: u64,
    pub loop_nodes: u64,
    pub included_loop_nodes: u64,
    pub checkpoint_events: u64,
    pub access_events: u64,
    pub peak_live_state: u64,
}

impl ModelStats {
    /// Category sums equal the totals and the totals match the trace.
    pub fn is_conserved(&self) -> bool {
        let sum = |f: fn(&CategoryTotals) -> u64| f(&self.included) + f(&self.purged) + f(&self.non_analyzable);
        sum(|c| c.references) == self.total.references
            && sum(|c| c.accesses) == self.total.accesses
            && sum(|c| c.footprint) == self.total.footprint
            && self.total.accesses == self.access_events
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HintSubject {
    Loop {
        loop_id: LoopId,
        begin_checkpoint: CheckpointId,
    },
    Instruction {
        instr: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintContext {
    pub context: Vec<LoopId>,
    /// Surviving references in this context: instruction and expression.
    pub expressions: Vec<(u64, AffineExpression)>,
}

/// A static loop (or a reference) seen in several dynamic contexts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InliningHint {
    pub subject: HintSubject,
    pub contexts: Vec<HintContext>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForayModel {
    pub config: FilterConfig,
    /// Loop nodes in depth-first order.
    pub loops: Vec<LoopSummary>,
    /// All references, in tree order then first-seen order.
    pub references: Vec<ReferenceSummary>,
    pub hints: Vec<InliningHint>,
    pub stats: ModelStats,
    pub notes: Vec<String>,
}

impl ForayModel {
    pub fn surviving(&self) -> impl Iterator<Item = &ReferenceSummary> {
        self.references.iter().filter(|r| r.category == Category::Included)
    }

    /// Loop nodes from the outermost down to `node`.
    pub fn loop_chain(&self, node: usize) -> Vec<&LoopSummary> {
        let mut chain = Vec::new();
        let mut cur = Some(node);
        while let Some(n) = cur {
            let l = &self.loops[n];
            chain.push(l);
            cur = l.parent;
        }
        chain.reverse();
        chain
    }

    /// Recomputes the inlining hints from the loop and reference tables.
    pub fn inlining_hints(&self) -> Vec<InliningHint> {
        compute_hints(&self.loops, &self.references)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisErrorKind {
    #[error(transparent)]
    Declaration(#[from] DeclarationError),
    #[error("declaration of loop {0} after the first event")]
    LateDeclaration(LoopId),
    #[error("checkpoint {0} is not declared")]
    UndeclaredCheckpoint(CheckpointId),
    #[error(transparent)]
    Structure(#[from] StructureError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("record {position}: {kind}")]
pub struct AnalysisError {
    /// 1-based index of the offending record.
    pub position: u64,
    pub kind: AnalysisErrorKind,
}

/// Streaming analyzer. Feed records in trace order, then call
/// [`Analyzer::finish`].
#[derive(Debug)]
pub struct Analyzer {
    cfg: FilterConfig,
    footprint_cap: Option<usize>,
    decls: DeclarationTable,
    tree: LoopTree,
    records: u64,
    checkpoints: u64,
    accesses: u64,
    seen_event: bool,
    iters: Vec<i64>,
    reference_count: usize,
    coefficient_slots: usize,
    footprint_entries: usize,
    peak_state: usize,
}

impl Analyzer {
    pub fn new(cfg: FilterConfig) -> Self {
        Analyzer {
            cfg,
            footprint_cap: None,
            decls: DeclarationTable::new(),
            tree: LoopTree::new(),
            records: 0,
            checkpoints: 0,
            accesses: 0,
            seen_event: false,
            iters: Vec::new(),
            reference_count: 0,
            coefficient_slots: 0,
            footprint_entries: 0,
            peak_state: 0,
        }
    }

    /// Caps the distinct-address set kept per reference.
    pub fn with_footprint_cap(mut self, cap: Option<usize>) -> Self {
        self.footprint_cap = cap;
        self
    }

    pub fn tree(&self) -> &LoopTree {
        &self.tree
    }

    /// Units of live analysis state: tree nodes, open stack entries,
    /// reference states, coefficient slots and stored footprint addresses.
    pub fn live_state(&self) -> usize {
        self.tree.len()
            + self.tree.stack().len()
            + self.reference_count
            + self.coefficient_slots
            + self.footprint_entries
    }

    pub fn peak_state(&self) -> usize {
        self.peak_state
    }

    pub fn feed(&mut self, record: &TraceRecord) -> Result<(), AnalysisError> {
        self.records += 1;
        let position = self.records;
        let fail = |kind: AnalysisErrorKind| AnalysisError { position, kind };
        match *record {
            TraceRecord::Declaration(decl) => {
                if self.seen_event {
                    return Err(fail(AnalysisErrorKind::LateDeclaration(decl.loop_id)));
                }
                self.decls.insert(decl).map_err(|e| fail(e.into()))?;
            }
            TraceRecord::Checkpoint(ev) => {
                self.seen_event = true;
                self.checkpoints += 1;
                let (loop_id, role) = self
                    .decls
                    .resolve(ev.checkpoint_id)
                    .ok_or_else(|| fail(AnalysisErrorKind::UndeclaredCheckpoint(ev.checkpoint_id)))?;
                self.tree.apply_checkpoint(loop_id, role).map_err(|e| fail(e.into()))?;
            }
            TraceRecord::Access(ev) => {
                self.seen_event = true;
                self.accesses += 1;
                self.tree.iterator_vector_into(&mut self.iters);
                let cap = self.footprint_cap;
                let iters = &self.iters;
                match self.tree.locate_reference(ev.instruction_address) {
                    indexmap::map::Entry::Occupied(mut slot) => {
                        let state = slot.get_mut();
                        let before = state.footprint().len();
                        state.observe(iters, ev.memory_address);
                        state.record_kind(ev.kind);
                        self.footprint_entries += state.footprint().len() - before;
                    }
                    indexmap::map::Entry::Vacant(slot) => {
                        let mut state = ReferenceState::new(iters, ev.memory_address, cap);
                        state.record_kind(ev.kind);
                        self.reference_count += 1;
                        self.coefficient_slots += iters.len();
                        self.footprint_entries += state.footprint().len();
                        slot.insert(state);
                    }
                }
            }
        }
        self.peak_state = self.peak_state.max(self.live_state());
        Ok(())
    }

    /// Closes all loops, finalizes every reference and applies the purge.
    pub fn finish(mut self) -> ForayModel {
        self.tree.finish();
        let tree = &self.tree;
        let order = tree.preorder();

        let mut index_of: Vec<Option<usize>> = vec![None; tree.len()];
        let mut loops = Vec::new();
        for &id in &order {
            let node = tree.node(id);
            let Some(loop_id) = node.loop_id else { continue };
            let trips = node.trips();
            let idx = loops.len();
            index_of[id.0] = Some(idx);
            loops.push(LoopSummary {
                node: idx,
                loop_id,
                begin_checkpoint: self.decls.get(loop_id).map_or(loop_id, |d| d.begin_id),
                parent: node.parent.and_then(|p| index_of[p.0]),
                path: tree.path(id),
                entries: node.entries(),
                trip_min: trips.min.unwrap_or(0),
                trip_max: trips.max,
                single_trip: trips.max == 1,
            });
        }

        let mut references = Vec::new();
        for &id in &order {
            let node = tree.node(id);
            for (instr, state) in node.references() {
                references.push(summarize(tree, id, index_of[id.0], instr, state, &self.cfg));
            }
        }

        let mut stats = ModelStats {
            static_loops: self.decls.len() as u64,
            loop_nodes: loops.len() as u64,
            checkpoint_events: self.checkpoints,
            access_events: self.accesses,
            peak_live_state: self.peak_state as u64,
            ..ModelStats::default()
        };
        let mut included_nodes = std::collections::BTreeSet::new();
        for r in &references {
            stats.total.add(r);
            match r.category {
                Category::Included => {
                    stats.included.add(r);
                    if let Some(n) = r.loop_node {
                        let chain_len = if r.expression.as_ref().is_some_and(|e| e.partial) {
                            r.partial_level
                        } else {
                            r.nest_level
                        };
                        let mut cur = Some(n);
                        for _ in 0..chain_len {
                            let Some(c) = cur else { break };
                            included_nodes.insert(c);
                            cur = loops[c].parent;
                        }
                    }
                }
                Category::Purged => stats.purged.add(r),
                Category::NonAnalyzable => stats.non_analyzable.add(r),
            }
            if let Some(reason) = r.purge_reason {
                *stats.purge_reasons.entry(reason).or_default() += 1;
            }
        }
        stats.included_loop_nodes = included_nodes.len() as u64;

        let hints = compute_hints(&loops, &references);
        let mut notes = vec![
            "coefficients are solved from iterator deltas: C_k = (IND - INDP - sum C_i*(IT_i - ITP_i)) / (IT_k - ITP_k)".to_string(),
            "partial expressions report the constant observed at the first execution".to_string(),
        ];
        let capped = references.iter().filter(|r| r.footprint_saturated).count();
        if capped > 0 {
            notes.push(format!("{capped} reference footprints hit the address cap"));
        }
        ForayModel {
            config: self.cfg,
            loops,
            references,
            hints,
            stats,
            notes,
        }
    }
}

fn summarize(
    tree: &LoopTree,
    node: NodeId,
    loop_node: Option<usize>,
    instr: u64,
    state: &ReferenceState,
    cfg: &FilterConfig,
) -> ReferenceSummary {
    let outcome = state.finalize();
    let footprint = state.footprint().len() as u64;
    let reason = purge_reason(&outcome, state.exec_count(), footprint, cfg);
    ReferenceSummary {
        instr,
        loop_node,
        context: tree.path(node),
        nest_level: state.nest_level(),
        partial_level: state.partial_level(),
        expression: match outcome {
            Finalized::Affine(e) => Some(e),
            Finalized::NonAnalyzable => None,
        },
        category: reason.map_or(Category::Included, PurgeReason::category),
        purge_reason: reason,
        exec_count: state.exec_count(),
        footprint,
        footprint_saturated: state.footprint().saturated(),
        reads: state.reads(),
        writes: state.writes(),
        mispredictions: state.mispredictions(),
    }
}

fn surviving_in(references: &[ReferenceSummary], node: usize) -> Vec<(u64, AffineExpression)> {
    references
        .iter()
        .filter(|r| r.loop_node == Some(node) && r.category == Category::Included)
        .filter_map(|r| r.expression.clone().map(|e| (r.instr, e)))
        .collect()
}

/// Static loops that ran in two or more contexts, plus references that appear
/// in several contexts not already covered by such a loop.
fn compute_hints(loops: &[LoopSummary], references: &[ReferenceSummary]) -> Vec<InliningHint> {
    let mut by_loop: BTreeMap<LoopId, Vec<usize>> = BTreeMap::new();
    for l in loops.iter().filter(|l| l.trip_max > 0) {
        by_loop.entry(l.loop_id).or_default().push(l.node);
    }
    let mut hints = Vec::new();
    for (&loop_id, nodes) in &by_loop {
        if nodes.len() < 2 {
            continue;
        }
        hints.push(InliningHint {
            subject: HintSubject::Loop {
                loop_id,
                begin_checkpoint: loops[nodes[0]].begin_checkpoint,
            },
            contexts: nodes
                .iter()
                .map(|&n| HintContext {
                    context: loops[n].path.clone(),
                    expressions: surviving_in(references, n),
                })
                .collect(),
        });
    }

    let mut by_instr: BTreeMap<u64, Vec<&ReferenceSummary>> = BTreeMap::new();
    for r in references {
        by_instr.entry(r.instr).or_default().push(r);
    }
    for (&instr, refs) in &by_instr {
        if refs.len() < 2 {
            continue;
        }
        let innermost: Vec<Option<LoopId>> = refs.iter().map(|r| r.context.last().copied()).collect();
        let covered = innermost[0]
            .is_some_and(|l| innermost.iter().all(|&i| i == Some(l)) && by_loop.get(&l).is_some_and(|n| n.len() >= 2));
        if covered {
            continue;
        }
        hints.push(InliningHint {
            subject: HintSubject::Instruction { instr },
            contexts: refs
                .iter()
                .map(|r| HintContext {
                    context: r.context.clone(),
                    expressions: match (&r.expression, r.category) {
                        (Some(e), Category::Included) => vec![(instr, e.clone())],
                        _ => Vec::new(),
                    },
                })
                .collect(),
        });
    }
    hints
}

/// Analyzes an in-memory record sequence.
pub fn analyze<'a, I>(records: I, cfg: FilterConfig) -> Result<ForayModel, AnalysisError>
where
    I: IntoIterator<Item = &'a TraceRecord>,
{
    let mut analyzer = Analyzer::new(cfg);
    for record in records {
        analyzer.feed(record)?;
    }
    Ok(analyzer.finish())
}

/// Analyzes a text trace in one streaming pass; errors carry line numbers.
pub fn analyze_stream<R: BufRead>(source: R, cfg: FilterConfig) -> Result<ForayModel, TraceError> {
    analyze_stream_with(source, Analyzer::new(cfg))
}

pub fn analyze_stream_with<R: BufRead>(source: R, mut analyzer: Analyzer) -> Result<ForayModel, TraceError> {
    for item in open_trace_stream(source) {
        let positioned = item?;
        analyzer.feed(&positioned.record).map_err(|e| TraceError::Format {
            line: positioned.line,
            message: e.kind.to_string(),
        })?;
    }
    Ok(analyzer.finish())
}
