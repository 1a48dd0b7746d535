//! Abstract interpretation of callback sequences for taint.
//!
//! Every storage slot holds an [`Entry`]: a name plus a shared
//! [`EntryDetails`]. Shallow copies share the details and so model aliasing.
//! Deep copies duplicate them and so model value semantics. Methods are run
//! block by block in reverse post order over their loop-free CFG. Each block
//! keeps its live `OUT` table and a deep duplicate `OUT_d`; a successor
//! starts from its first predecessor's `OUT` and joins in the taints of every
//! predecessor's `OUT_d`, so taint cleared on one path survives from another.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use log::{debug, trace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app_ir::{
    parse_sig, split_qualified, AppModel, ComponentDef, Instruction, InvokeKind, MethodRef,
    ParentKind, THIS,
};
use crate::cfg::{build_cfg, remove_back_edges, reverse_post_order, Cfg, CfgError};
use crate::detectors_report::{
    dedup_warnings, detect_sms_attack, Location, SequenceDescriptor, Warning, WarningKind,
};
use crate::sequence_gen::{generate_m_way, CallbackSequence, PermutationPlan, SequenceError};

/// The parameter type bound to the saved instance state, which persists
/// across the callbacks of one sequence.
pub const BUNDLE_TYPE: &str = "Bundle";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("analysis time budget exceeded")]
    Killed,
    #[error("{location}: register {register} is not declared")]
    UndeclaredRegister {
        location: Location,
        register: String,
    },
    #[error("{0}: method not found")]
    MissingMethod(String),
    #[error("{method}: {source}")]
    Cfg {
        method: String,
        #[source]
        source: CfgError,
    },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config schema violation: {0}")]
    Schema(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmsSendApi {
    pub signature: String,
    /// Index of the recipient among the declared parameters, receiver
    /// excluded.
    pub recipient_arg_index: usize,
}

/// Source and sink configuration. Signatures are `Class.name/arity`; a
/// trailing `.*` matches every method of a class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaintConfig {
    pub sources: Vec<String>,
    pub sinks: Vec<String>,
    #[serde(default)]
    pub sms_send_apis: Vec<SmsSendApi>,
    #[serde(default)]
    pub originating_address_apis: Vec<String>,
}

/// The bundled configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../../../config/default.json");

fn matches(pattern: &str, sig: &str) -> bool {
    match pattern.strip_suffix(".*") {
        Some(class) => split_qualified(sig).is_some_and(|(c, _)| c == class),
        None => pattern == sig,
    }
}

impl TaintConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("bundled config is valid")
    }

    pub fn is_source(&self, sig: &str) -> bool {
        self.sources.iter().any(|p| matches(p, sig))
    }

    pub fn is_sink(&self, sig: &str) -> bool {
        self.sinks.iter().any(|p| matches(p, sig))
    }

    pub fn is_originating_address(&self, sig: &str) -> bool {
        self.originating_address_apis
            .iter()
            .any(|p| matches(p, sig))
    }

    pub fn sms_api(&self, sig: &str) -> Option<&SmsSendApi> {
        self.sms_send_apis
            .iter()
            .find(|a| matches(&a.signature, sig))
    }
}

/// Which detectors report warnings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectMode {
    pub leak: bool,
    pub sms: bool,
}

impl Default for DetectMode {
    fn default() -> Self {
        DetectMode {
            leak: true,
            sms: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValueKind {
    Primitive,
    #[default]
    ImmutableRef,
    MutableRef,
    Collection,
}

impl ValueKind {
    /// Whether assignment shares the object rather than copying the value.
    pub fn is_shared(self) -> bool {
        matches!(self, ValueKind::MutableRef | ValueKind::Collection)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TagKind {
    /// Sensitive data from a configured source API.
    Source,
    /// The sender address of an incoming message.
    OriginatingAddress,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TaintTag {
    pub source_api: String,
    pub location: Location,
    pub kind: TagKind,
}

/// A literal value with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstValue {
    pub literal: String,
    /// The literal appears in app code.
    pub from_app: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EntryDetails {
    pub taints: BTreeSet<TaintTag>,
    pub field_list: BTreeMap<String, Entry>,
    pub value_kind: ValueKind,
    pub const_value: Option<ConstValue>,
    /// Dynamic class of objects created by `NEW_INSTANCE`.
    pub class_name: Option<String>,
}

type Details = Rc<RefCell<EntryDetails>>;
type Memo = HashMap<*const RefCell<EntryDetails>, Details>;

#[derive(Clone)]
pub struct Entry {
    pub name: String,
    pub details: Details,
}

impl fmt::Debug for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.details.borrow();
        f.debug_struct("Entry")
            .field("name", &self.name)
            .field("kind", &d.value_kind)
            .field("taints", &d.taints.len())
            .field("fields", &d.field_list.keys().collect::<Vec<_>>())
            .finish()
    }
}

fn deep_details(d: &Details, memo: &mut Memo) -> Details {
    let key = Rc::as_ptr(d);
    if let Some(done) = memo.get(&key) {
        return done.clone();
    }
    let src = d.borrow();
    let copy = Rc::new(RefCell::new(EntryDetails {
        taints: src.taints.clone(),
        field_list: BTreeMap::new(),
        value_kind: src.value_kind,
        const_value: src.const_value.clone(),
        class_name: src.class_name.clone(),
    }));
    memo.insert(key, copy.clone());
    let fields: BTreeMap<String, Entry> = src
        .field_list
        .iter()
        .map(|(k, e)| {
            (
                k.clone(),
                Entry {
                    name: e.name.clone(),
                    details: deep_details(&e.details, memo),
                },
            )
        })
        .collect();
    copy.borrow_mut().field_list = fields;
    copy
}

impl Entry {
    pub fn new(name: impl Into<String>, value_kind: ValueKind) -> Self {
        Entry {
            name: name.into(),
            details: Rc::new(RefCell::new(EntryDetails {
                value_kind,
                ..EntryDetails::default()
            })),
        }
    }

    pub fn constant(
        name: impl Into<String>,
        value_kind: ValueKind,
        literal: impl Into<String>,
    ) -> Self {
        let e = Entry::new(name, value_kind);
        e.details.borrow_mut().const_value = Some(ConstValue {
            literal: literal.into(),
            from_app: true,
        });
        e
    }

    pub fn object(name: impl Into<String>, class: impl Into<String>) -> Self {
        let e = Entry::new(name, ValueKind::MutableRef);
        e.details.borrow_mut().class_name = Some(class.into());
        e
    }

    pub fn tainted(name: impl Into<String>, tag: TaintTag) -> Self {
        let e = Entry::new(name, ValueKind::ImmutableRef);
        e.details.borrow_mut().taints.insert(tag);
        e
    }

    /// A new name for the same object.
    pub fn shallow_copy(&self, name: impl Into<String>) -> Self {
        Entry {
            name: name.into(),
            details: Rc::clone(&self.details),
        }
    }

    /// An independent copy of the whole reachable object graph.
    pub fn deep_copy(&self, name: impl Into<String>) -> Self {
        Entry {
            name: name.into(),
            details: deep_details(&self.details, &mut Memo::new()),
        }
    }

    /// Shallow for mutable objects and collections, deep otherwise.
    pub fn copy_for_assign(&self, name: impl Into<String>) -> Self {
        if self.value_kind().is_shared() {
            self.shallow_copy(name)
        } else {
            self.deep_copy(name)
        }
    }

    pub fn same_object(&self, other: &Entry) -> bool {
        Rc::ptr_eq(&self.details, &other.details)
    }

    pub fn value_kind(&self) -> ValueKind {
        self.details.borrow().value_kind
    }

    pub fn class_name(&self) -> Option<String> {
        self.details.borrow().class_name.clone()
    }

    pub fn taints(&self) -> BTreeSet<TaintTag> {
        self.details.borrow().taints.clone()
    }

    pub fn is_tainted(&self) -> bool {
        !self.details.borrow().taints.is_empty()
    }

    pub fn add_taints(&self, tags: impl IntoIterator<Item = TaintTag>) {
        self.details.borrow_mut().taints.extend(tags);
    }

    pub fn clear_taints(&self) {
        self.details.borrow_mut().taints.clear();
    }

    /// Taints of this entry and of everything reachable through its fields.
    pub fn deep_taints(&self) -> BTreeSet<TaintTag> {
        let mut seen = HashSet::new();
        let mut out = BTreeSet::new();
        let mut stack = vec![self.details.clone()];
        while let Some(d) = stack.pop() {
            if !seen.insert(Rc::as_ptr(&d)) {
                continue;
            }
            let b = d.borrow();
            out.extend(b.taints.iter().cloned());
            stack.extend(b.field_list.values().map(|e| e.details.clone()));
        }
        out
    }

    pub fn field(&self, name: &str) -> Option<Entry> {
        self.details.borrow().field_list.get(name).cloned()
    }

    /// Field `name`, created untainted if never written.
    pub fn field_or_placeholder(&self, name: &str) -> Entry {
        if let Some(e) = self.field(name) {
            return e;
        }
        let e = Entry::new(name, ValueKind::MutableRef);
        self.details
            .borrow_mut()
            .field_list
            .insert(name.to_string(), e.clone());
        e
    }

    pub fn set_field(&self, name: &str, value: &Entry) {
        let stored = value.copy_for_assign(name);
        self.details
            .borrow_mut()
            .field_list
            .insert(name.to_string(), stored);
    }
}

/// Register bindings of one method activation.
pub type Table = BTreeMap<String, Entry>;

/// Deep copy of a table that keeps aliasing between its entries.
pub fn deep_copy_table(table: &Table) -> Table {
    let mut memo = Memo::new();
    table
        .iter()
        .map(|(k, e)| {
            (
                k.clone(),
                Entry {
                    name: e.name.clone(),
                    details: deep_details(&e.details, &mut memo),
                },
            )
        })
        .collect()
}

/// Adds every taint of `other`'s object graph to `base`'s, field by field.
/// Constants that disagree stop being constants.
fn join_details(base: &Details, other: &Details, seen: &mut HashSet<(usize, usize)>) {
    if Rc::ptr_eq(base, other)
        || !seen.insert((Rc::as_ptr(base) as usize, Rc::as_ptr(other) as usize))
    {
        return;
    }
    let (taints, konst, fields) = {
        let o = other.borrow();
        (
            o.taints.clone(),
            o.const_value.clone(),
            o.field_list.clone(),
        )
    };
    let mut pairs = Vec::new();
    {
        let mut b = base.borrow_mut();
        b.taints.extend(taints);
        if b.const_value != konst {
            b.const_value = None;
        }
        for (name, f) in fields {
            match b.field_list.get(&name) {
                Some(existing) => pairs.push((existing.details.clone(), f.details)),
                None => {
                    let copy = f.deep_copy(name.clone());
                    b.field_list.insert(name, copy);
                }
            }
        }
    }
    for (b, o) in pairs {
        join_details(&b, &o, seen);
    }
}

/// Input table of a block: the first predecessor's live `OUT`, with the taints
/// of every predecessor's `OUT_d` joined in.
pub fn merge_tables(live_first: &Table, duplicates: &[&Table]) -> Table {
    let mut merged = live_first.clone();
    let mut seen = HashSet::new();
    for dup in duplicates {
        for (reg, e) in dup.iter() {
            match merged.get(reg) {
                Some(base) => join_details(&base.details, &e.details, &mut seen),
                None => {
                    merged.insert(reg.clone(), e.deep_copy(reg.clone()));
                }
            }
        }
    }
    merged
}

/// A method ready for analysis.
#[derive(Debug)]
pub struct MethodPlan {
    pub cfg: Cfg,
    pub rpo: Vec<usize>,
}

pub fn plan_method(app: &AppModel, r: MethodRef) -> Result<MethodPlan, EngineError> {
    let cfg = remove_back_edges(&build_cfg(app.method_at(r)));
    let rpo = reverse_post_order(&cfg).map_err(|source| EngineError::Cfg {
        method: app.qualified_name(r),
        source,
    })?;
    Ok(MethodPlan { cfg, rpo })
}

/// One entry of the context stack.
#[derive(Debug)]
pub struct Frame {
    pub method: MethodRef,
    pub registers: Table,
    pub returns: Vec<Entry>,
}

#[derive(Debug, Clone, Default)]
struct Cursor {
    component: String,
    descriptor: SequenceDescriptor,
    callbacks: Vec<String>,
    position: Option<usize>,
}

/// Outcome of analysing every sequence of a plan.
#[derive(Debug, Clone, Default)]
pub struct ComponentOutcome {
    pub warnings: Vec<Warning>,
    pub sequences_analyzed: u64,
    pub killed: bool,
}

/// Analysis state for one app.
pub struct TaintEngine<'a> {
    app: &'a AppModel,
    config: &'a TaintConfig,
    mode: DetectMode,
    deadline: Option<Instant>,
    plans: HashMap<MethodRef, Rc<MethodPlan>>,
    /// Saved frames of the methods on the current call chain.
    pub context_stack: Vec<Frame>,
    /// Qualified signatures on the current call chain.
    pub method_stack: Vec<String>,
    /// Static fields, keyed `Class.field`.
    pub globals: Table,
    warnings: Vec<Warning>,
    cursor: Cursor,
}

impl<'a> TaintEngine<'a> {
    pub fn new(app: &'a AppModel, config: &'a TaintConfig, mode: DetectMode) -> Self {
        TaintEngine {
            app,
            config,
            mode,
            deadline: None,
            plans: HashMap::new(),
            context_stack: Vec::new(),
            method_stack: Vec::new(),
            globals: Table::new(),
            warnings: Vec::new(),
            cursor: Cursor::default(),
        }
    }

    pub fn set_deadline(&mut self, deadline: Option<Instant>) {
        self.deadline = deadline;
    }

    /// Warnings raised so far, leaving the list empty.
    pub fn take_warnings(&mut self) -> Vec<Warning> {
        std::mem::take(&mut self.warnings)
    }

    fn plan(&mut self, r: MethodRef) -> Result<Rc<MethodPlan>, EngineError> {
        if let Some(p) = self.plans.get(&r) {
            return Ok(p.clone());
        }
        let p = Rc::new(plan_method(self.app, r)?);
        self.plans.insert(r, p.clone());
        Ok(p)
    }

    fn reset(&mut self) {
        self.context_stack.clear();
        self.method_stack.clear();
        self.globals.clear();
        self.warnings.clear();
    }

    /// Runs every arrangement of `plan` and returns the deduplicated
    /// warnings. Running out of time stops early with `killed` set.
    pub fn analyze_component(
        &mut self,
        component: &ComponentDef,
        plan: &PermutationPlan,
    ) -> Result<ComponentOutcome, EngineError> {
        let mut outcome = ComponentOutcome::default();
        for (arrangement, callbacks) in generate_m_way(plan)? {
            let descriptor = SequenceDescriptor {
                m: plan.m,
                units: arrangement.units,
                callbacks: Vec::new(),
            };
            match self.analyze_sequence(component, &callbacks, descriptor) {
                Ok(ws) => outcome.warnings.extend(ws),
                Err(EngineError::Killed) => {
                    outcome.killed = true;
                    outcome.warnings.extend(self.take_warnings());
                    break;
                }
                Err(e) => return Err(e),
            }
            outcome.sequences_analyzed += 1;
        }
        outcome.warnings = dedup_warnings(outcome.warnings);
        Ok(outcome)
    }

    /// Runs one callback sequence on a fresh component instance. Instance
    /// state persists across its callbacks. This covers statics and the
    /// saved-state bundle too.
    pub fn analyze_sequence(
        &mut self,
        component: &ComponentDef,
        callbacks: &CallbackSequence,
        descriptor: SequenceDescriptor,
    ) -> Result<Vec<Warning>, EngineError> {
        self.reset();
        self.cursor = Cursor {
            component: component.class.clone(),
            descriptor,
            callbacks: callbacks.callbacks.clone(),
            position: None,
        };
        let this = Entry::object(THIS, &component.class);
        let ctor = format!("{}.<init>/0", component.class);
        if let Some(r) = self.app.resolve(&ctor) {
            self.call_app(r, Some(&this), Vec::new())?;
        }
        let bundle = Entry::object("savedState", BUNDLE_TYPE);
        for (pos, sig) in callbacks.callbacks.iter().enumerate() {
            self.cursor.position = Some(pos);
            let qname = format!("{}.{}", component.class, sig);
            let r = self
                .app
                .resolve(&qname)
                .ok_or_else(|| EngineError::MissingMethod(qname.clone()))?;
            let method = self.app.method_at(r);
            let args = (0..method.arity())
                .map(|i| match method.param_type(i) {
                    Some(BUNDLE_TYPE) => bundle.shallow_copy(&method.params[i]),
                    _ => Entry::new(&method.params[i], ValueKind::MutableRef),
                })
                .collect();
            let receiver = (!method.is_static).then_some(&this);
            debug!("callback {qname}");
            self.call_app(r, receiver, args)?;
        }
        Ok(self.take_warnings())
    }

    /// Analyses an app method called with `this` and `args`, unless it is
    /// already on the call chain. Returns the value it returns.
    pub fn call_app(
        &mut self,
        r: MethodRef,
        this: Option<&Entry>,
        args: Vec<Entry>,
    ) -> Result<Option<Entry>, EngineError> {
        let qname = self.app.qualified_name(r);
        if self.method_stack.contains(&qname) {
            trace!("skipping recursive call to {qname}");
            return Ok(None);
        }
        let method = self.app.method_at(r);
        let mut registers = Table::new();
        if let (false, Some(t)) = (method.is_static, this) {
            registers.insert(THIS.to_string(), t.shallow_copy(THIS));
        }
        for (formal, actual) in method.params.iter().zip(args) {
            registers.insert(formal.clone(), actual.copy_for_assign(formal.as_str()));
        }
        self.method_stack.push(qname);
        self.context_stack.push(Frame {
            method: r,
            registers: Table::new(),
            returns: Vec::new(),
        });
        let result = self.analyze_method(r, registers);
        let frame = self.context_stack.pop().expect("frame pushed above");
        self.method_stack.pop();
        result?;
        Ok(combine_returns(frame.returns))
    }

    fn analyze_method(&mut self, r: MethodRef, entry_table: Table) -> Result<(), EngineError> {
        let plan = self.plan(r)?;
        let n = plan.cfg.blocks.len();
        let mut out: Vec<Option<Table>> = vec![None; n];
        let mut out_d: Vec<Option<Table>> = vec![None; n];
        let mut entry_table = Some(entry_table);
        for &b in &plan.rpo {
            let block = &plan.cfg.blocks[b];
            let input = if b == plan.cfg.entry {
                entry_table.take().unwrap_or_default()
            } else {
                let preds: Vec<usize> = block
                    .predecessors
                    .iter()
                    .copied()
                    .filter(|&p| out[p].is_some())
                    .collect();
                let Some(&first) = preds.first() else {
                    continue;
                };
                let dups: Vec<&Table> = preds.iter().filter_map(|&p| out_d[p].as_ref()).collect();
                merge_tables(out[first].as_ref().expect("analysed"), &dups)
            };
            self.frame().registers = input;
            for idx in block.start..block.end {
                self.step(r, idx)?;
            }
            let table = std::mem::take(&mut self.frame().registers);
            out_d[b] = Some(deep_copy_table(&table));
            out[b] = Some(table);
        }
        Ok(())
    }

    fn frame(&mut self) -> &mut Frame {
        self.context_stack.last_mut().expect("inside a method")
    }

    fn location(&self, r: MethodRef, index: usize) -> Location {
        Location {
            class: self.app.classes[r.class].name.clone(),
            method: self.app.method_at(r).sig.clone(),
            index,
        }
    }

    fn read(&mut self, r: MethodRef, index: usize, reg: &str) -> Result<Entry, EngineError> {
        if let Some(e) = self.frame().registers.get(reg) {
            return Ok(e.clone());
        }
        let m = self.app.method_at(r);
        let declared =
            m.registers.iter().chain(&m.params).any(|x| x == reg) || (reg == THIS && !m.is_static);
        if !declared {
            return Err(EngineError::UndeclaredRegister {
                location: self.location(r, index),
                register: reg.to_string(),
            });
        }
        let e = Entry::new(reg, ValueKind::ImmutableRef);
        self.frame().registers.insert(reg.to_string(), e.clone());
        Ok(e)
    }

    fn write(&mut self, reg: &str, e: Entry) {
        self.frame().registers.insert(reg.to_string(), e);
    }

    fn step(&mut self, r: MethodRef, idx: usize) -> Result<(), EngineError> {
        if self.deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(EngineError::Killed);
        }
        let app = self.app;
        let instr = &app.method_at(r).instructions[idx];
        trace!("{} {:?}", self.location(r, idx), instr.opcode());
        match instr {
            Instruction::ConstString { dst, value } => {
                self.write(dst, Entry::constant(dst, ValueKind::ImmutableRef, value))
            }
            Instruction::ConstNum { dst, value } => self.write(
                dst,
                Entry::constant(dst, ValueKind::Primitive, value.to_string()),
            ),
            Instruction::Move { dst, src } => {
                let e = self.read(r, idx, src)?;
                self.write(dst, e.copy_for_assign(dst.as_str()));
            }
            Instruction::NewInstance { dst, class } => self.write(dst, Entry::object(dst, class)),
            Instruction::Invoke {
                kind,
                method,
                args,
                dst,
            } => {
                let actuals = args
                    .iter()
                    .map(|a| self.read(r, idx, a))
                    .collect::<Result<Vec<_>, _>>()?;
                let ret = self.invoke(r, idx, *kind, method, actuals)?;
                if let Some(d) = dst {
                    let e = ret.map(|e| e.copy_for_assign(d.as_str()));
                    self.write(
                        d,
                        e.unwrap_or_else(|| Entry::new(d, ValueKind::ImmutableRef)),
                    );
                }
            }
            Instruction::Iget { dst, obj, field } => {
                let o = self.read(r, idx, obj)?;
                let f = o.field_or_placeholder(field);
                self.write(dst, f.copy_for_assign(dst.as_str()));
            }
            Instruction::Iput { src, obj, field } => {
                let v = self.read(r, idx, src)?;
                self.read(r, idx, obj)?.set_field(field, &v);
            }
            Instruction::Sget { dst, field } => {
                let g = self
                    .globals
                    .entry(field.clone())
                    .or_insert_with(|| Entry::new(field, ValueKind::MutableRef))
                    .clone();
                self.write(dst, g.copy_for_assign(dst.as_str()));
            }
            Instruction::Sput { src, field } => {
                let v = self.read(r, idx, src)?;
                self.globals
                    .insert(field.clone(), v.copy_for_assign(field.as_str()));
            }
            Instruction::CollectionNew { dst } => {
                self.write(dst, Entry::new(dst, ValueKind::Collection))
            }
            Instruction::CollectionPut { coll, index, value } => {
                if let Some(i) = index {
                    self.read(r, idx, i)?;
                }
                let v = self.read(r, idx, value)?;
                self.read(r, idx, coll)?.add_taints(v.deep_taints());
            }
            Instruction::CollectionGet { dst, coll, index } => {
                if let Some(i) = index {
                    self.read(r, idx, i)?;
                }
                let c = self.read(r, idx, coll)?;
                let e = Entry::new(dst, ValueKind::ImmutableRef);
                e.add_taints(c.taints());
                self.write(dst, e);
            }
            Instruction::IfGoto { cond, .. } => {
                self.read(r, idx, cond)?;
            }
            Instruction::Goto { .. } => {}
            Instruction::Return { src } => {
                let v = self.read(r, idx, src)?;
                self.frame().returns.push(v);
            }
            Instruction::ReturnVoid => {}
        }
        Ok(())
    }

    /// The app class that implements calls on `receiver`, falling back to the
    /// statically named class.
    fn dynamic_class(&self, receiver: Option<&Entry>, static_class: &str) -> Option<usize> {
        receiver
            .and_then(Entry::class_name)
            .and_then(|c| self.app.class_index(&c))
            .or_else(|| self.app.class_index(static_class))
    }

    fn invoke(
        &mut self,
        r: MethodRef,
        idx: usize,
        kind: InvokeKind,
        method: &str,
        actuals: Vec<Entry>,
    ) -> Result<Option<Entry>, EngineError> {
        let (class, sig) = split_qualified(method).unwrap_or(("", method));
        let name = parse_sig(sig).map(|(n, _)| n).unwrap_or(sig);
        let (receiver, params) = match kind {
            InvokeKind::Static => (None, &actuals[..]),
            _ => (actuals.first(), actuals.get(1..).unwrap_or(&[])),
        };

        if kind != InvokeKind::Static {
            if let Some(ci) = self.dynamic_class(receiver, class) {
                let parent = self.app.classes[ci].parent_kind;
                if parent == ParentKind::Thread && name == "start" {
                    return self.run_thread(ci, receiver).map(|_| None);
                }
                if parent == ParentKind::AsyncTask && name == "execute" {
                    self.run_async_task(ci, receiver, params)?;
                    return Ok(receiver.cloned());
                }
            }
        }

        let dispatched = match kind {
            InvokeKind::Virtual => receiver
                .and_then(Entry::class_name)
                .and_then(|c| self.app.resolve(&format!("{c}.{sig}"))),
            _ => None,
        };
        if let Some(target) = dispatched.or_else(|| self.app.resolve(method)) {
            return self.call_app(target, receiver, params.to_vec());
        }
        self.external(r, idx, method, receiver, params, &actuals)
    }

    fn external(
        &mut self,
        r: MethodRef,
        idx: usize,
        method: &str,
        receiver: Option<&Entry>,
        params: &[Entry],
        actuals: &[Entry],
    ) -> Result<Option<Entry>, EngineError> {
        let location = self.location(r, idx);
        let is_sink = self.config.is_sink(method);
        if is_sink && self.mode.leak {
            let tags: BTreeSet<TaintTag> = actuals
                .iter()
                .flat_map(Entry::deep_taints)
                .filter(|t| t.kind == TagKind::Source)
                .collect();
            if !tags.is_empty() {
                let mut locations: BTreeSet<Location> =
                    tags.iter().map(|t| t.location.clone()).collect();
                locations.insert(location.clone());
                let w = Warning {
                    kind: WarningKind::InfoLeak,
                    source_apis: tags.into_iter().map(|t| t.source_api).collect(),
                    sink_api: method.to_string(),
                    locations,
                    component: self.cursor.component.clone(),
                    sequence: self.descriptor(),
                };
                debug!("leak at {location}: {:?}", w.source_apis);
                self.warnings.push(w);
            }
        }
        let sms = self.config.sms_api(method).cloned();
        if let (true, Some(api)) = (self.mode.sms, &sms) {
            if let Some(recipient) = params.get(api.recipient_arg_index) {
                let descriptor = self.descriptor();
                if let Some(w) = detect_sms_attack(
                    method,
                    recipient,
                    location.clone(),
                    &self.cursor.component,
                    descriptor,
                ) {
                    debug!("{} at {location}", w.kind);
                    self.warnings.push(w);
                }
            }
        }
        if self.config.is_source(method) {
            let tag = TaintTag {
                source_api: method.to_string(),
                location,
                kind: TagKind::Source,
            };
            return Ok(Some(Entry::tainted("ret", tag)));
        }
        if self.config.is_originating_address(method) {
            let tag = TaintTag {
                source_api: method.to_string(),
                location,
                kind: TagKind::OriginatingAddress,
            };
            return Ok(Some(Entry::tainted("ret", tag)));
        }
        if is_sink || sms.is_some() {
            return Ok(None);
        }
        if let Some(ret) = specific_handler(method, receiver, params) {
            return Ok(ret);
        }
        Ok(default_handler(receiver, actuals))
    }

    fn descriptor(&self) -> SequenceDescriptor {
        let c = &self.cursor;
        let upto = c.position.map_or(0, |p| p + 1);
        SequenceDescriptor {
            callbacks: c.callbacks[..upto].to_vec(),
            ..c.descriptor.clone()
        }
    }

    fn run_thread(&mut self, class: usize, receiver: Option<&Entry>) -> Result<(), EngineError> {
        let run = format!("{}.run/0", self.app.classes[class].name);
        if let Some(r) = self.app.resolve(&run) {
            self.call_app(r, receiver, Vec::new())?;
        }
        Ok(())
    }

    /// `onPreExecute`, `doInBackground`, `onProgressUpdate` and
    /// `onPostExecute`, in order. `doInBackground` receives the arguments of
    /// `execute`; `onPostExecute` receives its result.
    fn run_async_task(
        &mut self,
        class: usize,
        receiver: Option<&Entry>,
        params: &[Entry],
    ) -> Result<(), EngineError> {
        let mut result = None;
        for step in [
            "onPreExecute",
            "doInBackground",
            "onProgressUpdate",
            "onPostExecute",
        ] {
            let Some(m) = self.app.classes[class].method_named(step) else {
                continue;
            };
            let r = self
                .app
                .resolve(&format!("{}.{}", self.app.classes[class].name, m.sig))
                .expect("own method");
            let args: Vec<Entry> = (0..m.arity())
                .map(|i| {
                    let given = match step {
                        "doInBackground" => params.get(i).cloned(),
                        "onPostExecute" if i == 0 => result.clone(),
                        _ => None,
                    };
                    given.unwrap_or_else(|| Entry::new(&m.params[i], ValueKind::ImmutableRef))
                })
                .collect();
            let ret = self.call_app(r, receiver, args)?;
            if step == "doInBackground" {
                result = ret;
            }
        }
        Ok(())
    }
}

fn combine_returns(mut returns: Vec<Entry>) -> Option<Entry> {
    let first = returns.first()?.clone();
    if returns.iter().all(|e| e.same_object(&first)) {
        return Some(first);
    }
    let joined = first.deep_copy("ret");
    let mut seen = HashSet::new();
    for e in returns.drain(1..) {
        join_details(&joined.details, &e.details, &mut seen);
    }
    Some(joined)
}

fn union_taints<'e>(entries: impl IntoIterator<Item = &'e Entry>) -> BTreeSet<TaintTag> {
    entries.into_iter().flat_map(Entry::taints).collect()
}

fn fresh(taints: BTreeSet<TaintTag>, kind: ValueKind) -> Entry {
    let e = Entry::new("ret", kind);
    e.add_taints(taints);
    e
}

/// APIs whose data flow is known precisely. `None` means no handler.
fn specific_handler(
    method: &str,
    receiver: Option<&Entry>,
    params: &[Entry],
) -> Option<Option<Entry>> {
    let ret = match method {
        "StringBuilder.<init>/0" | "StringBuilder.<init>/1" | "StringBuilder.append/1" => {
            let sb = receiver?;
            sb.add_taints(union_taints(params));
            sb.details.borrow_mut().const_value = None;
            Some(sb.clone())
        }
        "StringBuilder.toString/0" => Some(fresh(receiver?.taints(), ValueKind::ImmutableRef)),
        "String.concat/1" => {
            let recv = receiver?;
            let out = fresh(
                union_taints(std::iter::once(recv).chain(params)),
                ValueKind::ImmutableRef,
            );
            let a = recv.details.borrow().const_value.clone();
            let b = params
                .first()
                .and_then(|p| p.details.borrow().const_value.clone());
            if let (Some(a), Some(b)) = (a, b) {
                out.details.borrow_mut().const_value = Some(ConstValue {
                    literal: a.literal + &b.literal,
                    from_app: a.from_app && b.from_app,
                });
            }
            Some(out)
        }
        m if m.starts_with("String.format/") || m.starts_with("String.valueOf/") => {
            Some(fresh(union_taints(params), ValueKind::ImmutableRef))
        }
        "String.length/0" | "String.isEmpty/0" | "String.equals/1" => {
            Some(Entry::new("ret", ValueKind::Primitive))
        }
        "System.arraycopy/5" => {
            let (src, dst) = (params.first()?, params.get(2)?);
            dst.add_taints(src.taints());
            None
        }
        _ => return None,
    };
    Some(ret)
}

/// Taints the receiver and the result with everything the call reads.
fn default_handler(receiver: Option<&Entry>, actuals: &[Entry]) -> Option<Entry> {
    let taints = union_taints(actuals);
    if let Some(r) = receiver {
        r.add_taints(taints.iter().cloned());
    }
    Some(fresh(taints, ValueKind::ImmutableRef))
}
