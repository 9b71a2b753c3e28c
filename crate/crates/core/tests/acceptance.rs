//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::io::Cursor;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use foray_core::check::check_spec;
use foray_core::emit::emit_c;
use foray_core::model::{analyze_stream, Analyzer, Category, FilterConfig, ForayModel, PurgeReason};
use foray_core::synth::oracle::first_moves_collide;
use foray_core::synth::random::{perturbed_nest_spec, random_spec};
use foray_core::synth::{generate_into, generate_trace, ValidSpec, WorkloadSpec};
use foray_core::trace::{AccessKind, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: &str =
    "for (int i12=0; i12<2; i12++)\n for (int i15=0; i15<3; i15++)\n  A4002a0[2147440948+1*i15+103*i12]\n";
const RANDOM_SPECS: u64 = 600;
const PARTIAL_SEEDS: u64 = 100;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
/// Loop level and checkpoint role (1 begin, 2 body, 3 end), or `None` for the
/// innermost body.
type Event = Option<(usize, u64)>;

fn data(name: &str) -> String {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn analyze_spec(spec: &ValidSpec, seed: u64, cfg: FilterConfig) -> ForayModel {
    foray_core::analyze(&generate_trace(spec, seed).expect("generate"), cfg).expect("analyze")
}

fn golden_model() -> Outcome {
    let text = data("pointer_walk.ftrace");
    let start = Instant::now();
    let model = analyze_stream(Cursor::new(text), FilterConfig::with_thresholds(1, 1)).map_err(|e| e.to_string())?;
    let out = emit_c(&model);
    let elapsed = start.elapsed();
    if out != GOLDEN {
        return Err(format!("emitted {out:?}"));
    }
    if elapsed >= Duration::from_secs(1) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("byte-exact in {elapsed:?}"))
}

fn oracle_round_trip() -> Outcome {
    let start = Instant::now();
    let cfg = FilterConfig::default();
    let mut mismatches = Vec::new();
    let mut partial = 0;
    let mut non_analyzable = 0;
    for seed in 0..RANDOM_SPECS {
        let spec = random_spec(seed).validate().map_err(|e| format!("seed {seed}: {e}"))?;
        let report = check_spec(&spec, seed, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        partial += report
            .expected
            .references
            .iter()
            .filter(|r| r.partial_level < r.nest_level)
            .count();
        non_analyzable += report.expected.references.iter().filter(|r| r.non_analyzable).count();
        mismatches.extend(report.mismatches.into_iter().map(|m| format!("seed {seed}: {m}")));
    }
    let elapsed = start.elapsed();
    if !mismatches.is_empty() {
        return Err(format!("{} mismatches, first: {}", mismatches.len(), mismatches[0]));
    }
    if elapsed >= Duration::from_secs(120) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "{RANDOM_SPECS} specs, 0 mismatches ({partial} partial, {non_analyzable} non-analyzable refs) in {elapsed:?}"
    ))
}

fn partial_expressions() -> Outcome {
    let cfg = FilterConfig::with_thresholds(1, 1);
    let mut cases = 0;
    for level in 1..=4 {
        for seed in 0..PARTIAL_SEEDS {
            let spec = perturbed_nest_spec(seed, 4, level)
                .validate()
                .map_err(|e| e.to_string())?;
            let report = check_spec(&spec, seed, &cfg).map_err(|e| e.to_string())?;
            let r = &report.model.references[0];
            let expected = &report.expected.references[0];
            if r.partial_level != level - 1 || expected.partial_level != level - 1 || !report.passed() {
                return Err(format!(
                    "level {level} seed {seed}: M = {} (oracle {}), {} mismatches",
                    r.partial_level,
                    expected.partial_level,
                    report.mismatches.len()
                ));
            }
            cases += 1;
        }
    }
    Ok(format!("M = L-1 in {cases}/{cases} depth-4 nests"))
}

/// A nest whose single reference only executes on the diagonal, so its first
/// two executions move every iterator at once.
fn diagonal_trace(rng: &mut ChaCha8Rng) -> (Vec<TraceRecord>, Vec<(Vec<i64>, i128)>) {
    let depth = rng.gen_range(2..=4);
    let trips: Vec<i64> = (0..depth).map(|_| rng.gen_range(2..=6)).collect();
    let mut records: Vec<TraceRecord> = (0..depth as u64)
        .map(|l| TraceRecord::declaration(l + 1, 10 * l + 1, 10 * l + 2, 10 * l + 3))
        .collect();
    let mut accesses = Vec::new();
    let base: u64 = rng.gen_range(1 << 20..1 << 40);
    let stride: Vec<u64> = (0..depth).map(|_| rng.gen_range(1..=256)).collect();

    fn walk(level: usize, iters: &mut Vec<i64>, trips: &[i64], f: &mut dyn FnMut(Event, &[i64])) {
        f(Some((level, 1)), iters);
        for i in 0..trips[level] {
            iters.push(i);
            f(Some((level, 2)), iters);
            if level + 1 < trips.len() {
                walk(level + 1, iters, trips, f);
            } else {
                f(None, iters);
            }
            f(Some((level, 3)), iters);
            iters.pop();
        }
    }
    let mut emit = |event: Event, iters: &[i64]| match event {
        Some((l, role)) => records.push(TraceRecord::checkpoint(10 * l as u64 + role)),
        None => {
            if iters.iter().all(|&i| i == iters[0]) {
                let addr = base + iters.iter().zip(&stride).map(|(&i, &s)| i as u64 * s).sum::<u64>();
                records.push(TraceRecord::access(0x400200, addr, AccessKind::Read));
                accesses.push((iters.iter().rev().copied().collect(), addr as i128));
            }
        }
    };
    walk(0, &mut Vec::new(), &trips, &mut emit);
    (records, accesses)
}

fn non_analyzable_marking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1a9);
    let cases = 200;
    for case in 0..cases {
        let (records, accesses) = diagonal_trace(&mut rng);
        if !first_moves_collide(&accesses) {
            return Err(format!("case {case}: construction does not collide"));
        }
        let model = foray_core::analyze(&records, FilterConfig::with_thresholds(1, 1)).map_err(|e| e.to_string())?;
        let r = &model.references[0];
        if r.category != Category::NonAnalyzable || r.expression.is_some() || !model.stats.is_conserved() {
            return Err(format!("case {case}: {r:?}"));
        }
    }
    Ok(format!("{cases}/{cases} constructed references marked non-analyzable"))
}

fn boundary_spec(outer: u64, inner: u64) -> ValidSpec {
    let text = format!(
        r#"
version = 1
top = [{{ loop = 1 }}]

[[loops]]
id = 1
begin = 1
body = 2
end = 3
trip = {outer}
contents = [{{ loop = 2 }}]

[[loops]]
id = 2
begin = 4
body = 5
end = 6
trip = {inner}
contents = [{{ ref = "a" }}]

[[refs]]
name = "a"
instr = 0x400300
kind = "rd"
base = 0x8000
coeffs = [4, 0]
"#
    );
    WorkloadSpec::from_toml(&text).expect("boundary spec")
}

fn purge_boundaries() -> Outcome {
    let cfg = FilterConfig::default();
    // (outer trips, inner trips, expected reason); executions = outer * inner,
    // distinct locations = inner
    let cases = [
        (1, 19, Some(PurgeReason::TooFewExecutions)),
        (1, 20, None),
        (4, 9, Some(PurgeReason::TooFewLocations)),
        (4, 10, None),
    ];
    let mut models = Vec::new();
    for (outer, inner, reason) in cases {
        let model = analyze_spec(&boundary_spec(outer, inner), 0, cfg);
        let r = &model.references[0];
        if r.purge_reason != reason {
            return Err(format!(
                "{outer}x{inner}: got {:?}, expected {reason:?}",
                r.purge_reason
            ));
        }
        models.push(model);
    }
    for name in ["three_refs.toml", "two_call_sites.toml", "pointer_walk.toml"] {
        let spec = WorkloadSpec::from_toml(&data(name)).map_err(|e| e.to_string())?;
        models.push(analyze_spec(&spec, 0, cfg));
    }
    for seed in 0..50 {
        models.push(analyze_spec(&random_spec(seed).validate().unwrap(), seed, cfg));
    }
    if let Some(m) = models.iter().find(|m| !m.stats.is_conserved()) {
        return Err(format!("conservation violated: {:?}", m.stats));
    }
    Ok(format!(
        "19/20 executions and 9/10 locations flip survival; conservation holds on {} traces",
        models.len()
    ))
}

fn peak_state(spec: &ValidSpec) -> (usize, u64) {
    let mut analyzer = Analyzer::new(FilterConfig::default());
    let mut events = 0;
    generate_into(spec, 7, |r| {
        events += 1;
        analyzer.feed(&r).expect("feed");
    })
    .expect("generate");
    (analyzer.peak_state(), events)
}

fn streaming_bound() -> Outcome {
    let mut lines = Vec::new();
    for name in ["three_refs.toml", "two_call_sites.toml"] {
        let once = WorkloadSpec::from_toml(&data(name)).map_err(|e| e.to_string())?;
        let mut spec = once.spec.clone();
        spec.repeat = 100;
        let many = spec.validate().map_err(|e| e.to_string())?;
        let (small, small_events) = peak_state(&once);
        let (large, large_events) = peak_state(&many);
        let growth = (large as f64 - small as f64) / small as f64;
        if growth >= 0.05 {
            return Err(format!(
                "{name}: peak {small} -> {large} over {small_events} -> {large_events} events"
            ));
        }
        lines.push(format!(
            "{name} {small}->{large} ({small_events}->{large_events} events)"
        ));
    }
    Ok(format!("peak live state: {}", lines.join(", ")))
}

fn inlining_hints() -> Outcome {
    let spec = WorkloadSpec::from_toml(&data("two_call_sites.toml")).map_err(|e| e.to_string())?;
    let model = analyze_spec(&spec, 0, FilterConfig::default());
    match model.hints.as_slice() {
        [hint] if hint.contexts.len() == 2 => Ok(format!("one hint for {:?} with two contexts", hint.subject)),
        hints => Err(format!("{hints:?}")),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("golden-model", golden_model),
        ("oracle-round-trip", oracle_round_trip),
        ("partial-expressions", partial_expressions),
        ("non-analyzable-marking", non_analyzable_marking),
        ("purge-boundaries", purge_boundaries),
        ("streaming-bound", streaming_bound),
        ("inlining-hints", inlining_hints),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
