//! Corpus helpers and property checks shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use lifetaint::app_ir::{load_app, AppModel, ComponentDef};
use lifetaint::cfg::{build_cfg, remove_back_edges, reverse_post_order, Cfg};
use lifetaint::cli::Models;
use lifetaint::detectors_report::{dedup_warnings, SequenceDescriptor, Warning, WarningKind};
use lifetaint::lifecycle_model::LifecycleModel;
use lifetaint::sequence_gen::{implemented_callbacks, permutation_count, CallbackSequence, MWay};
use lifetaint::taint_engine::{
    deep_copy_table, merge_tables, DetectMode, Entry, Table, TagKind, TaintConfig, TaintEngine,
    TaintTag,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use serde_json::{json, Value};

pub fn root() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

pub fn corpus_paths() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(root().join("corpus"))
        .expect("corpus directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
}

pub fn corpus(name: &str) -> AppModel {
    load_app(root().join("corpus").join(format!("{name}.json"))).expect("corpus app loads")
}

pub fn models() -> Models {
    Models::load_dir(root().join("models")).expect("models load")
}

pub fn config() -> TaintConfig {
    TaintConfig::load(root().join("config/default.json")).expect("config loads")
}

pub const LEAK: DetectMode = DetectMode {
    leak: true,
    sms: false,
};
pub const SMS: DetectMode = DetectMode {
    leak: false,
    sms: true,
};
pub const ALL: DetectMode = DetectMode {
    leak: true,
    sms: true,
};

/// Raw, undeduplicated warnings of one callback sequence.
pub fn run_sequence(
    app: &AppModel,
    component: &ComponentDef,
    callbacks: &[String],
    mode: DetectMode,
) -> Vec<Warning> {
    let config = config();
    let mut engine = TaintEngine::new(app, &config, mode);
    engine.set_deadline(Some(Instant::now() + Duration::from_secs(30)));
    let seq = CallbackSequence {
        callbacks: callbacks.to_vec(),
    };
    engine
        .analyze_sequence(component, &seq, SequenceDescriptor::default())
        .expect("sequence analyses")
}

/// Callbacks `component` runs for an event sequence replayed from the
/// initial state.
pub fn project_events(
    model: &LifecycleModel,
    app: &AppModel,
    component: &ComponentDef,
    events: &[&str],
) -> Vec<String> {
    let events: Vec<String> = events.iter().map(|e| e.to_string()).collect();
    let implemented = implemented_callbacks(app.component_class(component), model);
    model
        .replay(&events)
        .expect("event sequence is feasible")
        .callbacks
        .into_iter()
        .filter_map(|c| implemented.get(&c.callback).cloned())
        .collect()
}

pub fn is_subsequence(hay: &[String], needle: &[&str]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

pub fn has_leak(ws: &[Warning], source: &str, sink: &str) -> bool {
    ws.iter().any(|w| {
        w.kind == WarningKind::InfoLeak && w.source_apis.contains(source) && w.sink_api == sink
    })
}

/// Builds a one-class app whose `main/0` holds `instructions`, run as a
/// plain-program component.
pub fn single_method_app(
    instructions: Vec<Value>,
    registers: &[String],
    labels: Value,
    extra: Vec<Value>,
) -> AppModel {
    let mut methods = vec![json!({
        "sig": "main/0",
        "registers": registers,
        "instructions": instructions,
        "labels": labels,
    })];
    methods.extend(extra);
    let app = json!({
        "app_id": "generated",
        "classes": [
            { "name": "Main", "parent_kind": "PLAIN", "methods": methods },
            { "name": "Obj", "parent_kind": "PLAIN", "methods": [] }
        ],
        "components": [{ "class": "Main", "kind": "ENTRY", "misc_callbacks": ["main/0"] }]
    });
    AppModel::from_json(&app.to_string()).expect("generated app is valid")
}

/// Indices in `main/0` of sink calls that raised a leak.
pub fn warned_sinks(app: &AppModel) -> BTreeSet<usize> {
    run_sequence(app, &app.components[0], &["main/0".to_string()], LEAK)
        .iter()
        .flat_map(|w| w.locations.iter())
        .filter(|l| l.method == "main/0" && is_sink_at(app, l.index))
        .map(|l| l.index)
        .collect()
}

fn is_sink_at(app: &AppModel, index: usize) -> bool {
    let m = app.resolve_method("Main.main/0").expect("main");
    matches!(&m.instructions[index], lifetaint::app_ir::Instruction::Invoke { method, .. } if method == "Test.sink/1")
}

fn tag(api: &str) -> TaintTag {
    TaintTag {
        source_api: api.into(),
        location: lifetaint::detectors_report::Location {
            class: "T".into(),
            method: "t/0".into(),
            index: 0,
        },
        kind: TagKind::Source,
    }
}

// ---------------------------------------------------------------- aliasing

pub fn fields_strategy() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec!["a", "b", "next"]).prop_map(String::from),
        0..=5,
    )
}

/// Tainting through a shallow alias at any depth is seen through the
/// original; rebinding the alias leaves the original alone.
pub fn check_alias_soundness(path: &[String]) -> Result<(), TestCaseError> {
    let root = Entry::object("root", "Obj");
    let mut node = root.clone();
    for f in path {
        let child = Entry::object(f.as_str(), "Obj");
        node.set_field(f, &child);
        node = child;
    }
    let alias = root.shallow_copy("alias");
    let mut via_alias = alias.clone();
    for f in path {
        via_alias = via_alias.field(f).expect("field written");
    }
    via_alias.add_taints([tag("S")]);
    prop_assert!(node.is_tainted());
    prop_assert!(!root.deep_taints().is_empty());

    let mut table: Table = [
        ("root".to_string(), root.clone()),
        ("alias".to_string(), alias),
    ]
    .into();
    let fresh = Entry::object("alias", "Obj");
    fresh.add_taints([tag("T")]);
    table.insert("alias".into(), fresh);
    let before: BTreeSet<_> = root
        .deep_taints()
        .into_iter()
        .map(|t| t.source_api)
        .collect();
    prop_assert_eq!(before, BTreeSet::from(["S".to_string()]));
    prop_assert!(!table["root"].same_object(&table["alias"]));
    Ok(())
}

/// The same property through the engine: a method taints a field chain via
/// an alias and sinks it via the original name; rebinding the alias to a
/// new tainted object must not make a second sink on the original warn.
pub fn check_alias_soundness_ir(path: &[String]) -> Result<(), TestCaseError> {
    let mut ins = vec![json!(["NEW_INSTANCE", "root", "Obj"])];
    let mut prev = "root".to_string();
    for (i, f) in path.iter().enumerate() {
        let n = format!("n{i}");
        ins.push(json!(["NEW_INSTANCE", n, "Obj"]));
        ins.push(json!(["IPUT", n, prev, f]));
        prev = n;
    }
    ins.push(json!(["MOVE", "alias", "root"]));
    ins.push(json!(["MOVE", "cur", "alias"]));
    for f in path {
        ins.push(json!(["IGET", "cur", "cur", f]));
    }
    ins.push(json!(["INVOKE_STATIC", "Test.source/0", [], "s"]));
    ins.push(json!(["IPUT", "s", "cur", "leaf"]));
    ins.push(json!(["MOVE", "cur", "root"]));
    for f in path {
        ins.push(json!(["IGET", "cur", "cur", f]));
    }
    ins.push(json!(["IGET", "v", "cur", "leaf"]));
    let first_sink = ins.len();
    ins.push(json!(["INVOKE_STATIC", "Test.sink/1", ["v"], null]));
    ins.push(json!(["NEW_INSTANCE", "alias", "Obj"]));
    ins.push(json!(["IPUT", "s", "alias", "other"]));
    ins.push(json!(["IGET", "w", "root", "other"]));
    let second_sink = ins.len();
    ins.push(json!(["INVOKE_STATIC", "Test.sink/1", ["w"], null]));
    ins.push(json!(["RETURN_VOID"]));
    let mut regs: Vec<String> = ["root", "alias", "cur", "s", "v", "w"]
        .map(String::from)
        .to_vec();
    regs.extend((0..path.len()).map(|i| format!("n{i}")));
    let app = single_method_app(ins, &regs, json!({}), vec![]);
    let warned = warned_sinks(&app);
    prop_assert!(warned.contains(&first_sink), "alias taint lost: {warned:?}");
    prop_assert!(
        !warned.contains(&second_sink),
        "rebinding leaked: {warned:?}"
    );
    Ok(())
}

// ---------------------------------------------------------------- merging

/// `flags[p][r]`: predecessor `p` left register `r` tainted.
pub fn merge_strategy() -> impl Strategy<Value = Vec<Vec<bool>>> {
    (1usize..=4, 1usize..=5)
        .prop_flat_map(|(p, r)| prop::collection::vec(prop::collection::vec(any::<bool>(), r), p))
}

/// Every predecessor works on the same live objects; each leaves its own
/// taint pattern in its `OUT_d` before the next one clears it. The merged
/// table must show a register tainted exactly when some predecessor's
/// duplicate does.
pub fn check_merge_preservation(flags: &[Vec<bool>]) -> Result<(), TestCaseError> {
    let regs = flags[0].len();
    let live: Table = (0..regs)
        .map(|r| (format!("r{r}"), Entry::object(format!("r{r}"), "Obj")))
        .collect();
    let mut dups = Vec::new();
    for pred in flags {
        for (r, &t) in pred.iter().enumerate() {
            let e = &live[&format!("r{r}")];
            e.clear_taints();
            if t {
                e.add_taints([tag("S")]);
            }
        }
        dups.push(deep_copy_table(&live));
    }
    for e in live.values() {
        e.clear_taints();
    }
    let refs: Vec<&Table> = dups.iter().collect();
    let merged = merge_tables(&live, &refs);
    for r in 0..regs {
        let expected = flags.iter().any(|p| p[r]);
        let key = format!("r{r}");
        prop_assert_eq!(merged[&key].is_tainted(), expected, "register {}", key);
        prop_assert!(merged[&key].same_object(&live[&key]));
    }
    for d in &dups {
        for (k, e) in d {
            prop_assert!(!e.same_object(&live[k]));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- collections

#[derive(Debug, Clone)]
pub enum CollOp {
    Put { tainted: bool, index: u8 },
    Get { index: u8 },
}

pub fn coll_ops_strategy() -> impl Strategy<Value = Vec<CollOp>> {
    prop::collection::vec(
        prop_oneof![
            (any::<bool>(), 0u8..4).prop_map(|(tainted, index)| CollOp::Put { tainted, index }),
            (0u8..4).prop_map(|index| CollOp::Get { index }),
        ],
        1..12,
    )
}

/// A sink on the collection after every element operation: once one warns,
/// all later ones do; the first warning follows the first tainted put; a
/// fresh collection bound to the register clears it.
pub fn check_collection_monotonicity(ops: &[CollOp]) -> Result<(), TestCaseError> {
    let mut ins = vec![
        json!(["COLLECTION_NEW", "c"]),
        json!(["CONST_STRING", "k", "plain"]),
        json!(["INVOKE_STATIC", "Test.source/0", [], "s"]),
    ];
    let mut sinks = Vec::new();
    let mut first_taint = None;
    for (i, op) in ops.iter().enumerate() {
        let idx = match op {
            CollOp::Put { index, .. } | CollOp::Get { index } => *index,
        };
        ins.push(json!(["CONST_NUM", "i", idx]));
        match op {
            CollOp::Put { tainted, .. } => {
                ins.push(json!([
                    "COLLECTION_PUT",
                    "c",
                    "i",
                    if *tainted { "s" } else { "k" }
                ]));
                if *tainted && first_taint.is_none() {
                    first_taint = Some(i);
                }
            }
            CollOp::Get { .. } => ins.push(json!(["COLLECTION_GET", "g", "c", "i"])),
        }
        sinks.push(ins.len());
        ins.push(json!(["INVOKE_STATIC", "Test.sink/1", ["c"], null]));
    }
    ins.push(json!(["COLLECTION_NEW", "c"]));
    let reset_sink = ins.len();
    ins.push(json!(["INVOKE_STATIC", "Test.sink/1", ["c"], null]));
    ins.push(json!(["RETURN_VOID"]));
    let regs: Vec<String> = ["c", "k", "s", "i", "g"].map(String::from).to_vec();
    let app = single_method_app(ins, &regs, json!({}), vec![]);
    let warned = warned_sinks(&app);
    let flags: Vec<bool> = sinks.iter().map(|s| warned.contains(s)).collect();
    for w in flags.windows(2) {
        prop_assert!(!w[0] || w[1], "taint shrank: {flags:?}");
    }
    prop_assert_eq!(flags.iter().position(|&f| f), first_taint);
    prop_assert!(!warned.contains(&reset_sink));
    Ok(())
}

// ---------------------------------------------------------------- recursion

/// `calls[i]`: methods called by method `i`.
pub fn call_graph_strategy() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (1usize..=6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0..n, 0..=3), n))
}

/// Any call graph, cycles included, is analysed to completion with every
/// stack unwound.
pub fn check_recursion_termination(calls: &[Vec<usize>]) -> Result<(), TestCaseError> {
    let methods: Vec<Value> = calls
        .iter()
        .enumerate()
        .map(|(i, callees)| {
            let mut ins = vec![json!(["INVOKE_STATIC", "Test.source/0", [], "v"])];
            for c in callees {
                ins.push(json!(["INVOKE_STATIC", format!("Main.m{c}/1"), ["p"], "w"]));
            }
            ins.push(json!(["INVOKE_STATIC", "Test.sink/1", ["p"], null]));
            ins.push(json!(["RETURN", "v"]));
            json!({ "sig": format!("m{i}/1"), "static": true, "params": ["p"], "registers": ["v", "w"], "instructions": ins })
        })
        .collect();
    let ins = vec![
        json!(["CONST_STRING", "x", "seed"]),
        json!(["INVOKE_STATIC", "Main.m0/1", ["x"], "x"]),
        json!(["INVOKE_STATIC", "Test.sink/1", ["x"], null]),
        json!(["RETURN_VOID"]),
    ];
    let app = single_method_app(ins, &["x".to_string()], json!({}), methods);
    let config = config();
    let mut engine = TaintEngine::new(&app, &config, LEAK);
    engine.set_deadline(Some(Instant::now() + Duration::from_secs(20)));
    let seq = CallbackSequence {
        callbacks: vec!["main/0".into()],
    };
    let result = engine.analyze_sequence(&app.components[0], &seq, SequenceDescriptor::default());
    prop_assert!(result.is_ok(), "{:?}", result.err());
    prop_assert!(engine.method_stack.is_empty() && engine.context_stack.is_empty());
    // m0 always returns a source value, so the final sink always warns.
    prop_assert!(has_leak(&result.unwrap(), "Test.source/0", "Test.sink/1"));
    Ok(())
}

// ---------------------------------------------------------------- permutations

/// Brute force: every `m`-tuple over `0..n` without repeats, in
/// lexicographic order.
pub fn brute_force_arrangements(n: usize, m: usize) -> Vec<Vec<usize>> {
    let total = n.pow(m as u32);
    (0..total)
        .map(|mut k| {
            let mut t = vec![0; m];
            for slot in t.iter_mut().rev() {
                *slot = k % n;
                k /= n;
            }
            t
        })
        .filter(|t| t.iter().collect::<HashSet<_>>().len() == m)
        .collect()
}

/// The generator agrees with brute force for every `n <= 6`.
pub fn check_permutation_law() -> Result<(), String> {
    for n in 1..=6 {
        for m in 1..=n {
            let got: Vec<Vec<usize>> = MWay::new(n, m)
                .map_err(|e| e.to_string())?
                .map(|a| a.units)
                .collect();
            let want = brute_force_arrangements(n, m);
            if got != want {
                return Err(format!("n={n} m={m}: generator and brute force differ"));
            }
            if got.len() as u128 != permutation_count(n, m) {
                return Err(format!("n={n} m={m}: count {} != P(n,m)", got.len()));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- dedup

pub fn warnings_strategy() -> impl Strategy<Value = Vec<Warning>> {
    let one = (
        prop::sample::select(vec![WarningKind::InfoLeak, WarningKind::SmsAutoreply]),
        prop::collection::btree_set(prop::sample::select(vec!["A", "B", "C", "D"]), 0..=3),
        prop::sample::select(vec!["S1", "S2"]),
        0usize..3,
    )
        .prop_map(|(kind, sources, sink, m)| Warning {
            kind,
            source_apis: sources.into_iter().map(String::from).collect(),
            sink_api: sink.into(),
            locations: BTreeSet::new(),
            component: "C".into(),
            sequence: SequenceDescriptor {
                m,
                units: vec![m],
                callbacks: vec![],
            },
        });
    prop::collection::vec(one, 0..12)
}

/// Dedup is idempotent and ignores input order. Its output is an antichain
/// per kind and sink that keeps or subsumes every input.
pub fn check_dedup(raw: &[Warning], shuffled: &[Warning]) -> Result<(), TestCaseError> {
    let once = dedup_warnings(raw.to_vec());
    prop_assert_eq!(dedup_warnings(once.clone()), once.clone());
    prop_assert_eq!(dedup_warnings(shuffled.to_vec()), once.clone());
    for a in &once {
        for b in &once {
            if a.kind == b.kind && a.sink_api == b.sink_api && a.source_apis != b.source_apis {
                prop_assert!(!a.source_apis.is_subset(&b.source_apis), "not an antichain");
            }
        }
    }
    for w in raw {
        prop_assert!(once.iter().any(|o| o.kind == w.kind
            && o.sink_api == w.sink_api
            && w.source_apis.is_subset(&o.source_apis)));
    }
    Ok(())
}

// ---------------------------------------------------------------- cfg

/// The loop-free graph has no cycle, its RPO lists every block reachable in
/// the original graph exactly once and orders every edge forwards.
pub fn check_cfg(name: &str, original: &Cfg) -> Result<(), String> {
    let g = remove_back_edges(original);
    if let Some(b) = g.find_cycle() {
        return Err(format!("{name}: cycle through b{b} survives"));
    }
    let rpo = reverse_post_order(&g).map_err(|e| format!("{name}: {e}"))?;
    let pos: HashMap<usize, usize> = rpo.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    if pos.len() != rpo.len() {
        return Err(format!("{name}: block repeated in RPO"));
    }
    let reachable: BTreeSet<usize> = (0..original.blocks.len())
        .filter(|&b| original.is_reachable(b))
        .collect();
    if reachable != pos.keys().copied().collect() {
        return Err(format!(
            "{name}: RPO covers {:?}, reachable {:?}",
            pos.keys(),
            reachable
        ));
    }
    for (u, v) in g.edges() {
        if let (Some(pu), Some(pv)) = (pos.get(&u), pos.get(&v)) {
            if pu >= pv {
                return Err(format!("{name}: edge b{u} -> b{v} goes backwards in RPO"));
            }
        }
    }
    Ok(())
}

pub fn check_corpus_cfgs() -> Result<usize, String> {
    let mut n = 0;
    for path in corpus_paths() {
        let app = load_app(&path).map_err(|e| e.to_string())?;
        for r in app.all_methods() {
            check_cfg(&app.qualified_name(r), &build_cfg(app.method_at(r)))?;
            n += 1;
        }
    }
    Ok(n)
}

/// Random branchy methods: each slot is a plain instruction, a jump, a
/// conditional jump or a return; the last instruction always returns.
pub fn branchy_method_strategy() -> impl Strategy<Value = Vec<(u8, usize)>> {
    prop::collection::vec((0u8..4, 0usize..24), 1..24)
}

pub fn branchy_app(slots: &[(u8, usize)]) -> AppModel {
    let n = slots.len() + 1;
    let mut ins = Vec::new();
    let mut labels = serde_json::Map::new();
    for (i, &(kind, target)) in slots.iter().enumerate() {
        let t = target % n;
        let label = format!("L{t}");
        labels.insert(label.clone(), json!(t));
        ins.push(match (kind, i) {
            (1, _) => json!(["GOTO", label]),
            (2, _) => json!(["IF_GOTO", "v", label]),
            (3, _) => json!(["RETURN_VOID"]),
            _ => json!(["CONST_NUM", "v", i]),
        });
    }
    ins.push(json!(["RETURN_VOID"]));
    single_method_app(ins, &["v".to_string()], Value::Object(labels), vec![])
}

// ---------------------------------------------------------------- oracle

#[derive(Debug, Clone)]
pub enum Op {
    Const(u8),
    Source(u8),
    Move(u8, u8),
    New(u8),
    Iput(u8, u8, u8),
    Iget(u8, u8, u8),
    Sink(u8),
}

pub fn straight_line_strategy() -> impl Strategy<Value = Vec<Op>> {
    let r = || 0u8..4;
    let f = || 0u8..2;
    prop::collection::vec(
        prop_oneof![
            r().prop_map(Op::Const),
            r().prop_map(Op::Source),
            (r(), r()).prop_map(|(a, b)| Op::Move(a, b)),
            r().prop_map(Op::New),
            (r(), r(), f()).prop_map(|(a, b, c)| Op::Iput(a, b, c)),
            (r(), r(), f()).prop_map(|(a, b, c)| Op::Iget(a, b, c)),
            r().prop_map(Op::Sink),
        ],
        1..30,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Val {
    Prim(bool),
    Obj(usize),
}

/// Concrete forward simulation with an explicit heap. Field operations on
/// registers that do not hold an object are dropped from the program.
/// Returns the instructions and the indices of the sinks that see taint.
pub fn oracle(ops: &[Op]) -> (Vec<Value>, BTreeSet<usize>) {
    let reg = |r: u8| format!("r{r}");
    let field = |f: u8| format!("f{f}");
    let mut regs: HashMap<u8, Val> = HashMap::new();
    let mut heap: Vec<HashMap<u8, Val>> = Vec::new();
    let mut ins = Vec::new();
    let mut tainted_sinks = BTreeSet::new();
    let get = |regs: &HashMap<u8, Val>, r: u8| regs.get(&r).copied().unwrap_or(Val::Prim(false));
    for op in ops {
        match *op {
            Op::Const(r) => {
                ins.push(json!(["CONST_STRING", reg(r), "k"]));
                regs.insert(r, Val::Prim(false));
            }
            Op::Source(r) => {
                ins.push(json!(["INVOKE_STATIC", "Test.source/0", [], reg(r)]));
                regs.insert(r, Val::Prim(true));
            }
            Op::Move(d, s) => {
                ins.push(json!(["MOVE", reg(d), reg(s)]));
                let v = get(&regs, s);
                regs.insert(d, v);
            }
            Op::New(r) => {
                ins.push(json!(["NEW_INSTANCE", reg(r), "Obj"]));
                heap.push(HashMap::new());
                regs.insert(r, Val::Obj(heap.len() - 1));
            }
            Op::Iput(s, o, f) => {
                let Val::Obj(id) = get(&regs, o) else {
                    continue;
                };
                ins.push(json!(["IPUT", reg(s), reg(o), field(f)]));
                let v = get(&regs, s);
                heap[id].insert(f, v);
            }
            Op::Iget(d, o, f) => {
                let Val::Obj(id) = get(&regs, o) else {
                    continue;
                };
                ins.push(json!(["IGET", reg(d), reg(o), field(f)]));
                let v = match heap[id].get(&f) {
                    Some(v) => *v,
                    None => {
                        heap.push(HashMap::new());
                        let placeholder = Val::Obj(heap.len() - 1);
                        heap[id].insert(f, placeholder);
                        placeholder
                    }
                };
                regs.insert(d, v);
            }
            Op::Sink(r) => {
                let tainted = match get(&regs, r) {
                    Val::Prim(t) => t,
                    Val::Obj(id) => {
                        let mut seen = HashSet::new();
                        let mut stack = vec![id];
                        let mut t = false;
                        while let Some(o) = stack.pop() {
                            if !seen.insert(o) {
                                continue;
                            }
                            for v in heap[o].values() {
                                match v {
                                    Val::Prim(x) => t |= x,
                                    Val::Obj(c) => stack.push(*c),
                                }
                            }
                        }
                        t
                    }
                };
                if tainted {
                    tainted_sinks.insert(ins.len());
                }
                ins.push(json!(["INVOKE_STATIC", "Test.sink/1", [reg(r)], null]));
            }
        }
    }
    ins.push(json!(["RETURN_VOID"]));
    (ins, tainted_sinks)
}

pub fn check_straight_line(ops: &[Op]) -> Result<(), TestCaseError> {
    let (ins, expected) = oracle(ops);
    let regs: Vec<String> = (0..4).map(|r| format!("r{r}")).collect();
    let app = single_method_app(ins, &regs, json!({}), vec![]);
    prop_assert_eq!(warned_sinks(&app), expected);
    Ok(())
}
