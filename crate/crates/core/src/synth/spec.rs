//! Declarative workload description (TOML, `version = 1`).
//!
//! ```toml
//! version = 1
//! repeat = 1                      # optional: run `top` this many times
//! top = [{ loop = 1 }]            # top-level items, in program order
//!
//! [[loops]]
//! id = 1
//! begin = 12                      # checkpoint ids
//! body = 13
//! end = 17
//! trip = 2                        # or: trips = [2, 5, 3] (cycled per entry)
//! contents = [{ loop = 2 }]
//!
//! [[loops]]
//! id = 2
//! begin = 15
//! body = 16
//! end = 14
//! trip = 3
//! contents = [{ ref = "store" }]
//!
//! [[refs]]
//! name = "store"
//! instr = 0x4002a0
//! kind = "wr"                     # or "rd"
//! base = 2147440948
//! coeffs = [1, 103]               # innermost first, one per enclosing loop
//! # by_loop = { 2 = 1, 1 = 103 }  # alternative: coefficient per loop id
//! # perturb = { level = 2, seed = 7, range = 65536 }  # or offsets = [0, 96]
//! # noise = { seed = 3, range = 4096 }
//! ```
//!
//! A loop listed in the contents of several loops runs in several dynamic
//! contexts, like a function called from different call sites. A `ref` item
//! may override `base` and `coeffs` for that placement.
//!
//! `perturb` adds an irregular offset that changes on every new iteration of
//! the enclosing loop at `level` (1 = innermost). `noise` adds a fresh random
//! offset to every access.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::trace::{AccessKind, CheckpointId, LoopId};

pub const SPEC_VERSION: u32 = 1;

fn one() -> u64 {
    1
}

fn is_one(v: &u64) -> bool {
    *v == 1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub version: u32,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub repeat: u64,
    #[serde(default)]
    pub top: Vec<Item>,
    #[serde(default)]
    pub loops: Vec<LoopSpec>,
    #[serde(default)]
    pub refs: Vec<RefSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub id: LoopId,
    pub begin: CheckpointId,
    pub body: CheckpointId,
    pub end: CheckpointId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trips: Option<Vec<u64>>,
    #[serde(default)]
    pub contents: Vec<Item>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    #[serde(rename = "loop", default, skip_serializing_if = "Option::is_none")]
    pub loop_id: Option<LoopId>,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<i64>>,
}

impl Item {
    pub fn of_loop(id: LoopId) -> Self {
        Item {
            loop_id: Some(id),
            ..Item::default()
        }
    }

    pub fn of_ref(name: &str) -> Self {
        Item {
            reference: Some(name.to_string()),
            ..Item::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefSpec {
    pub name: String,
    pub instr: u64,
    pub kind: AccessKind,
    pub base: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_loop: Option<BTreeMap<String, i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<Perturbation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Noise>,
}

pub const DEFAULT_PERTURB_RANGE: u64 = 1 << 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Offsets are drawn from `0..range` unless `offsets` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    pub seed: u64,
    pub range: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("cannot parse workload spec: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid workload spec:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl SpecError {
    pub fn violations(&self) -> Vec<String> {
        match self {
            SpecError::Parse(e) => vec![e.to_string()],
            SpecError::Invalid(v) => v.clone(),
        }
    }
}

/// How addresses of one reference placement are formed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Coefficients {
    /// Innermost first, one per enclosing loop.
    Positional(Vec<i64>),
    ByLoop(HashMap<LoopId, i64>),
    Zero,
}

/// A reference as placed in one contents list.
#[derive(Clone, Debug)]
pub struct Placement {
    pub reference: usize,
    pub base: i64,
    pub coeffs: Coefficients,
}

#[derive(Clone, Debug)]
pub enum Step {
    Loop(usize),
    Access(Placement),
}

/// A spec that passed validation, with names resolved to indices.
#[derive(Clone, Debug)]
pub struct ValidSpec {
    pub spec: WorkloadSpec,
    pub(crate) top: Vec<Step>,
    pub(crate) bodies: Vec<Vec<Step>>,
}

impl ValidSpec {
    pub fn loops(&self) -> &[LoopSpec] {
        &self.spec.loops
    }

    pub fn refs(&self) -> &[RefSpec] {
        &self.spec.refs
    }
}

impl WorkloadSpec {
    pub fn from_toml(text: &str) -> Result<ValidSpec, SpecError> {
        let spec: WorkloadSpec = toml::from_str(text)?;
        spec.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("workload spec serializes")
    }

    /// Checks every rule and reports all violations with their field paths.
    pub fn validate(self) -> Result<ValidSpec, SpecError> {
        let mut errs = Vec::new();
        if self.version != SPEC_VERSION {
            errs.push(format!("version: expected {SPEC_VERSION}, found {}", self.version));
        }

        let mut loop_index = HashMap::new();
        let mut checkpoints: HashMap<CheckpointId, String> = HashMap::new();
        for (i, l) in self.loops.iter().enumerate() {
            if loop_index.insert(l.id, i).is_some() {
                errs.push(format!("loops[{i}].id: loop {} is declared twice", l.id));
            }
            for (field, id) in [("begin", l.begin), ("body", l.body), ("end", l.end)] {
                let here = format!("loops[{i}].{field}");
                if let Some(prev) = checkpoints.insert(id, here.clone()) {
                    errs.push(format!("{here}: checkpoint {id} already used by {prev}"));
                }
            }
            match (&l.trip, &l.trips) {
                (Some(_), Some(_)) => errs.push(format!("loops[{i}]: give either trip or trips, not both")),
                (None, None) => errs.push(format!("loops[{i}]: missing trip or trips")),
                (None, Some(t)) if t.is_empty() => errs.push(format!("loops[{i}].trips: must not be empty")),
                _ => {}
            }
        }

        let mut ref_index = HashMap::new();
        let mut instrs = HashMap::new();
        for (k, r) in self.refs.iter().enumerate() {
            if ref_index.insert(r.name.clone(), k).is_some() {
                errs.push(format!("refs[{k}].name: {:?} is defined twice", r.name));
            }
            if let Some(prev) = instrs.insert(r.instr, k) {
                errs.push(format!("refs[{k}].instr: {:#x} already used by refs[{prev}]", r.instr));
            }
            if r.coeffs.is_some() && r.by_loop.is_some() {
                errs.push(format!("refs[{k}]: give either coeffs or by_loop, not both"));
            }
            if let Some(map) = &r.by_loop {
                for key in map.keys() {
                    match key.parse::<LoopId>() {
                        Ok(id) if loop_index.contains_key(&id) => {}
                        _ => errs.push(format!("refs[{k}].by_loop.{key}: no such loop")),
                    }
                }
            }
            if let Some(p) = &r.perturb {
                if p.level == 0 {
                    errs.push(format!("refs[{k}].perturb.level: must be at least 1"));
                }
                if p.range == Some(0) {
                    errs.push(format!("refs[{k}].perturb.range: must be at least 1"));
                }
                if p.offsets.as_ref().is_some_and(Vec::is_empty) {
                    errs.push(format!("refs[{k}].perturb.offsets: must not be empty"));
                }
                if p.offsets.is_some() && (p.range.is_some() || p.seed.is_some()) {
                    errs.push(format!("refs[{k}].perturb: offsets excludes seed and range"));
                }
            }
            if let Some(n) = &r.noise {
                if n.range == 0 {
                    errs.push(format!("refs[{k}].noise.range: must be at least 1"));
                }
            }
        }

        let resolve = |items: &[Item], path: &str, errs: &mut Vec<String>| -> Vec<Step> {
            let mut steps = Vec::new();
            let mut placed = HashSet::new();
            for (j, item) in items.iter().enumerate() {
                let here = format!("{path}[{j}]");
                match (&item.loop_id, &item.reference) {
                    (Some(id), None) => {
                        if item.base.is_some() || item.coeffs.is_some() {
                            errs.push(format!("{here}: base/coeffs only apply to ref items"));
                        }
                        match loop_index.get(id) {
                            Some(&li) => steps.push(Step::Loop(li)),
                            None => errs.push(format!("{here}.loop: no loop with id {id}")),
                        }
                    }
                    (None, Some(name)) => match ref_index.get(name) {
                        Some(&k) => {
                            if !placed.insert(k) {
                                errs.push(format!("{here}.ref: {name:?} placed twice in the same body"));
                            }
                            let r = &self.refs[k];
                            let coeffs = match (&item.coeffs, &r.coeffs, &r.by_loop) {
                                (Some(c), _, _) | (None, Some(c), _) => Coefficients::Positional(c.clone()),
                                (None, None, Some(m)) => Coefficients::ByLoop(
                                    m.iter().filter_map(|(k, v)| Some((k.parse().ok()?, *v))).collect(),
                                ),
                                (None, None, None) => Coefficients::Zero,
                            };
                            steps.push(Step::Access(Placement {
                                reference: k,
                                base: item.base.unwrap_or(r.base),
                                coeffs,
                            }));
                        }
                        None => errs.push(format!("{here}.ref: no reference named {name:?}")),
                    },
                    _ => errs.push(format!("{here}: needs exactly one of loop or ref")),
                }
            }
            steps
        };

        let top = resolve(&self.top, "top", &mut errs);
        let bodies: Vec<Vec<Step>> = self
            .loops
            .iter()
            .enumerate()
            .map(|(i, l)| resolve(&l.contents, &format!("loops[{i}].contents"), &mut errs))
            .collect();

        if errs.is_empty() {
            if let Some(cycle) = find_cycle(&bodies) {
                errs.push(format!(
                    "loops[{cycle}].contents: loop {} contains itself",
                    self.loops[cycle].id
                ));
            }
        }
        if errs.is_empty() {
            check_depths(&self, &top, &bodies, &mut errs);
        }
        if !errs.is_empty() {
            return Err(SpecError::Invalid(errs));
        }
        Ok(ValidSpec {
            spec: self,
            top,
            bodies,
        })
    }
}

fn find_cycle(bodies: &[Vec<Step>]) -> Option<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit(i: usize, bodies: &[Vec<Step>], marks: &mut [Mark]) -> Option<usize> {
        match marks[i] {
            Mark::Active => return Some(i),
            Mark::Done => return None,
            Mark::New => {}
        }
        marks[i] = Mark::Active;
        for step in &bodies[i] {
            if let Step::Loop(c) = step {
                if let Some(hit) = visit(*c, bodies, marks) {
                    return Some(hit);
                }
            }
        }
        marks[i] = Mark::Done;
        None
    }
    let mut marks = vec![Mark::New; bodies.len()];
    (0..bodies.len()).find_map(|i| visit(i, bodies, &mut marks))
}

/// Positional coefficient lists and perturbation levels must fit the depth
/// of every context a placement runs in.
fn check_depths(spec: &WorkloadSpec, top: &[Step], bodies: &[Vec<Step>], errs: &mut Vec<String>) {
    fn walk(
        steps: &[Step],
        depth: usize,
        where_: &str,
        spec: &WorkloadSpec,
        bodies: &[Vec<Step>],
        seen: &mut HashSet<(usize, usize, String)>,
        errs: &mut Vec<String>,
    ) {
        for step in steps {
            match step {
                Step::Loop(i) => {
                    if seen.insert((*i, depth + 1, String::new())) {
                        walk(
                            &bodies[*i],
                            depth + 1,
                            &format!("loops[{i}].contents"),
                            spec,
                            bodies,
                            seen,
                            errs,
                        );
                    }
                }
                Step::Access(p) => {
                    if !seen.insert((p.reference, depth, where_.to_string())) {
                        continue;
                    }
                    let r = &spec.refs[p.reference];
                    if let Coefficients::Positional(c) = &p.coeffs {
                        if c.len() != depth {
                            errs.push(format!(
                                "{where_}: ref {:?} runs {depth} loop(s) deep but has {} coefficient(s)",
                                r.name,
                                c.len()
                            ));
                        }
                    }
                    if let Some(pert) = &r.perturb {
                        if pert.level > depth {
                            errs.push(format!(
                                "{where_}: ref {:?} perturbs level {} but runs only {depth} loop(s) deep",
                                r.name, pert.level
                            ));
                        }
                    }
                }
            }
        }
    }
    let mut seen = HashSet::new();
    walk(top, 0, "top", spec, bodies, &mut seen, errs);
}

#[cfg(test)]
mod tests {
    use super::*;

    const POINTER_WALK: &str = r#"
version = 1
top = [{ loop = 1 }]

[[loops]]
id = 1
begin = 12
body = 13
end = 17
trip = 2
contents = [{ loop = 2 }]

[[loops]]
id = 2
begin = 15
body = 16
end = 14
trip = 3
contents = [{ ref = "store" }]

[[refs]]
name = "store"
instr = 0x4002a0
kind = "wr"
base = 2147440948
coeffs = [1, 103]
"#;

    #[test]
    fn parses_and_round_trips() {
        let valid = WorkloadSpec::from_toml(POINTER_WALK).unwrap();
        assert_eq!(valid.loops().len(), 2);
        assert_eq!(valid.refs()[0].instr, 0x4002a0);
        let again = WorkloadSpec::from_toml(&valid.spec.to_toml()).unwrap();
        assert_eq!(again.spec, valid.spec);
    }

    #[test]
    fn duplicate_checkpoint_is_reported_with_path() {
        let text = POINTER_WALK.replace("begin = 15", "begin = 13");
        let err = WorkloadSpec::from_toml(&text).unwrap_err();
        let v = err.violations();
        assert_eq!(
            v,
            vec!["loops[1].begin: checkpoint 13 already used by loops[0].body".to_string()]
        );
    }

    #[test]
    fn collects_several_violations() {
        let text = POINTER_WALK
            .replace("coeffs = [1, 103]", "coeffs = [1]")
            .replace("version = 1", "version = 2")
            .replace("trip = 3", "trip = 3\ntrips = [1]");
        let v = WorkloadSpec::from_toml(&text).unwrap_err().violations();
        assert!(v.iter().any(|e| e.starts_with("version:")), "{v:?}");
        assert!(v.iter().any(|e| e.contains("either trip or trips")), "{v:?}");
    }

    #[test]
    fn depth_mismatch_is_reported() {
        let text = POINTER_WALK.replace("coeffs = [1, 103]", "coeffs = [1]");
        let v = WorkloadSpec::from_toml(&text).unwrap_err().violations();
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("loops[1].contents"), "{v:?}");
    }

    #[test]
    fn cycles_and_dangling_names_are_rejected() {
        let text = POINTER_WALK.replace("contents = [{ ref = \"store\" }]", "contents = [{ loop = 1 }]");
        let v = WorkloadSpec::from_toml(&text).unwrap_err().violations();
        assert!(v[0].contains("contains itself"), "{v:?}");

        let text = POINTER_WALK.replace("{ ref = \"store\" }", "{ ref = \"nope\" }");
        let v = WorkloadSpec::from_toml(&text).unwrap_err().violations();
        assert!(v[0].contains("no reference named"), "{v:?}");
    }

    #[test]
    fn unknown_fields_are_parse_errors() {
        let text = POINTER_WALK.replace("trip = 2", "trip = 2\ntripz = 4");
        assert!(matches!(WorkloadSpec::from_toml(&text), Err(SpecError::Parse(_))));
    }
}
