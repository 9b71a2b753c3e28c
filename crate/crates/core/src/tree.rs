//! Dynamic loop tree rebuilt from the checkpoint stream.
//!
//! Each node stands for one static loop in one dynamic context (its chain of
//! enclosing loop nodes), so a function called from two different loops
//! shows up as two subtrees. Nodes keep a live 0-based iteration counter
//! while they are open on the cursor stack.
//!
//! There is no loop-exit checkpoint. A loop is closed lazily, when a
//! checkpoint belonging to an enclosing (or unrelated) loop arrives, or when
//! the trace ends.

use indexmap::map::Entry;
use indexmap::IndexMap;

use crate::affine::ReferenceState;
use crate::trace::{CheckpointRole, LoopId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Begin seen, no body-begin yet for the current entry.
    Entered,
    InBody,
    /// Body-end seen; the next event decides whether another iteration starts.
    BodyEnded,
    Closed,
}

/// Trip counts over completed entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TripStats {
    pub min: Option<u64>,
    pub max: u64,
    pub completed: u64,
}

impl TripStats {
    fn record(&mut self, trips: u64) {
        self.min = Some(self.min.map_or(trips, |m| m.min(trips)));
        self.max = self.max.max(trips);
        self.completed += 1;
    }
}

#[derive(Debug)]
pub struct LoopNode {
    pub loop_id: Option<LoopId>,
    pub parent: Option<NodeId>,
    pub depth: usize,
    children: IndexMap<LoopId, NodeId>,
    references: IndexMap<u64, ReferenceState>,
    iter: i64,
    phase: Phase,
    entries: u64,
    trips: TripStats,
}

impl LoopNode {
    fn new(loop_id: Option<LoopId>, parent: Option<NodeId>, depth: usize) -> Self {
        LoopNode {
            loop_id,
            parent,
            depth,
            children: IndexMap::new(),
            references: IndexMap::new(),
            iter: -1,
            phase: Phase::Closed,
            entries: 0,
            trips: TripStats::default(),
        }
    }

    pub fn children(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children.values().copied()
    }

    pub fn references(&self) -> impl Iterator<Item = (u64, &ReferenceState)> + '_ {
        self.references.iter().map(|(&k, v)| (k, v))
    }

    pub fn iter(&self) -> i64 {
        self.iter
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn entries(&self) -> u64 {
        self.entries
    }

    pub fn trips(&self) -> TripStats {
        self.trips
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{role} checkpoint of loop {loop_id} arrived while that loop is not open")]
pub struct StructureError {
    pub loop_id: LoopId,
    pub role: &'static str,
}

/// The tree plus the cursor stack (root first).
#[derive(Debug)]
pub struct LoopTree {
    nodes: Vec<LoopNode>,
    stack: Vec<NodeId>,
}

impl Default for LoopTree {
    fn default() -> Self {
        Self::new()
    }
}

impl LoopTree {
    pub const ROOT: NodeId = NodeId(0);

    pub fn new() -> Self {
        let mut root = LoopNode::new(None, None, 0);
        root.phase = Phase::InBody;
        root.entries = 1;
        LoopTree {
            nodes: vec![root],
            stack: vec![Self::ROOT],
        }
    }

    pub fn node(&self, id: NodeId) -> &LoopNode {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn stack(&self) -> &[NodeId] {
        &self.stack
    }

    fn top(&self) -> NodeId {
        *self.stack.last().expect("root is never popped")
    }

    fn pop(&mut self) {
        debug_assert!(self.stack.len() > 1);
        let id = self.stack.pop().expect("non-empty stack");
        let node = &mut self.nodes[id.0];
        node.trips.record((node.iter + 1).max(0) as u64);
        node.phase = Phase::Closed;
    }

    fn position_of(&self, loop_id: LoopId) -> Option<usize> {
        self.stack
            .iter()
            .rposition(|id| self.nodes[id.0].loop_id == Some(loop_id))
    }

    /// Moves the cursor for one checkpoint of `loop_id`.
    pub fn apply_checkpoint(&mut self, loop_id: LoopId, role: CheckpointRole) -> Result<(), StructureError> {
        match role {
            CheckpointRole::Begin => {
                // A loop that is not inside its body cannot contain a new loop.
                while self.stack.len() > 1 && self.nodes[self.top().0].phase != Phase::InBody {
                    self.pop();
                }
                if let Some(pos) = self.position_of(loop_id) {
                    while self.stack.len() > pos {
                        self.pop();
                    }
                }
                let parent = self.top();
                let depth = self.nodes[parent.0].depth + 1;
                let fresh = NodeId(self.nodes.len());
                let child = *self.nodes[parent.0].children.entry(loop_id).or_insert(fresh);
                if child == fresh {
                    self.nodes.push(LoopNode::new(Some(loop_id), Some(parent), depth));
                }
                let node = &mut self.nodes[child.0];
                node.iter = -1;
                node.entries += 1;
                node.phase = Phase::Entered;
                self.stack.push(child);
            }
            CheckpointRole::BodyBegin | CheckpointRole::BodyEnd => {
                let pos = self.position_of(loop_id).ok_or(StructureError {
                    loop_id,
                    role: if role == CheckpointRole::BodyBegin {
                        "body-begin"
                    } else {
                        "body-end"
                    },
                })?;
                while self.stack.len() > pos + 1 {
                    self.pop();
                }
                let node = &mut self.nodes[self.stack[pos].0];
                if role == CheckpointRole::BodyBegin {
                    node.iter += 1;
                    node.phase = Phase::InBody;
                } else {
                    node.phase = Phase::BodyEnded;
                }
            }
        }
        Ok(())
    }

    /// Node that owns an access made now: the top of the stack, or its parent
    /// when the top loop is between iterations or already finished.
    pub fn access_context(&self) -> NodeId {
        let top = self.top();
        match self.nodes[top.0].phase {
            Phase::InBody => top,
            _ => self.nodes[top.0].parent.unwrap_or(LoopTree::ROOT),
        }
    }

    /// Live iterator values of the access context, innermost first.
    pub fn iterator_vector(&self) -> Vec<i64> {
        let mut out = Vec::new();
        self.iterator_vector_into(&mut out);
        out
    }

    pub fn iterator_vector_into(&self, out: &mut Vec<i64>) {
        out.clear();
        let mut cur = Some(self.access_context());
        while let Some(id) = cur {
            let node = &self.nodes[id.0];
            if node.loop_id.is_none() {
                break;
            }
            out.push(node.iter);
            cur = node.parent;
        }
    }

    /// Slot for `instr` in the current access context.
    pub fn locate_reference(&mut self, instr: u64) -> Entry<'_, u64, ReferenceState> {
        let ctx = self.access_context();
        self.nodes[ctx.0].references.entry(instr)
    }

    /// Closes every open loop (end of trace).
    pub fn finish(&mut self) {
        while self.stack.len() > 1 {
            self.pop();
        }
    }

    /// Static loop ids from the outermost loop down to `id`.
    pub fn path(&self, id: NodeId) -> Vec<LoopId> {
        let mut out = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let node = &self.nodes[c.0];
            if let Some(l) = node.loop_id {
                out.push(l);
            }
            cur = node.parent;
        }
        out.reverse();
        out
    }

    /// Nodes in depth-first preorder, children in creation order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut todo = vec![Self::ROOT];
        while let Some(id) = todo.pop() {
            out.push(id);
            let children: Vec<NodeId> = self.nodes[id.0].children().collect();
            todo.extend(children.into_iter().rev());
        }
        out
    }
}
