//! The mini bytecode program representation analysed by the taint engine.
//!
//! Programs are JSON documents. Each instruction is an array whose first
//! element is the opcode, e.g. `["IGET", "v1", "this", "d1"]`. Method
//! signatures are `name/arity`; qualified references are
//! `Class.name/arity`. Instance methods receive their receiver in the
//! implicit register `this`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

pub const THIS: &str = "this";

#[derive(Debug, Error)]
pub enum IrError {
    #[error("cannot read app {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("app schema violation: {0}")]
    Schema(String),
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> IrError {
    IrError::Invalid {
        location: location.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParentKind {
    Activity,
    Service,
    Receiver,
    Thread,
    AsyncTask,
    Plain,
}

/// Kind of an analysable component. `Entry` components are plain programs
/// whose declared entry methods run once, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComponentType {
    Activity,
    Service,
    Receiver,
    Entry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InvokeKind {
    Virtual,
    Static,
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    ConstString {
        dst: String,
        value: String,
    },
    ConstNum {
        dst: String,
        value: serde_json::Number,
    },
    Move {
        dst: String,
        src: String,
    },
    NewInstance {
        dst: String,
        class: String,
    },
    Invoke {
        kind: InvokeKind,
        method: String,
        args: Vec<String>,
        dst: Option<String>,
    },
    Iget {
        dst: String,
        obj: String,
        field: String,
    },
    Iput {
        src: String,
        obj: String,
        field: String,
    },
    Sget {
        dst: String,
        field: String,
    },
    Sput {
        src: String,
        field: String,
    },
    CollectionNew {
        dst: String,
    },
    CollectionPut {
        coll: String,
        index: Option<String>,
        value: String,
    },
    CollectionGet {
        dst: String,
        coll: String,
        index: Option<String>,
    },
    IfGoto {
        cond: String,
        label: String,
    },
    Goto {
        label: String,
    },
    Return {
        src: String,
    },
    ReturnVoid,
}

impl Instruction {
    pub fn opcode(&self) -> &'static str {
        match self {
            Instruction::ConstString { .. } => "CONST_STRING",
            Instruction::ConstNum { .. } => "CONST_NUM",
            Instruction::Move { .. } => "MOVE",
            Instruction::NewInstance { .. } => "NEW_INSTANCE",
            Instruction::Invoke {
                kind: InvokeKind::Virtual,
                ..
            } => "INVOKE_VIRTUAL",
            Instruction::Invoke {
                kind: InvokeKind::Static,
                ..
            } => "INVOKE_STATIC",
            Instruction::Invoke {
                kind: InvokeKind::Direct,
                ..
            } => "INVOKE_DIRECT",
            Instruction::Iget { .. } => "IGET",
            Instruction::Iput { .. } => "IPUT",
            Instruction::Sget { .. } => "SGET",
            Instruction::Sput { .. } => "SPUT",
            Instruction::CollectionNew { .. } => "COLLECTION_NEW",
            Instruction::CollectionPut { .. } => "COLLECTION_PUT",
            Instruction::CollectionGet { .. } => "COLLECTION_GET",
            Instruction::IfGoto { .. } => "IF_GOTO",
            Instruction::Goto { .. } => "GOTO",
            Instruction::Return { .. } => "RETURN",
            Instruction::ReturnVoid => "RETURN_VOID",
        }
    }

    /// Registers read or written by this instruction.
    pub fn registers(&self) -> Vec<&str> {
        use Instruction::*;
        match self {
            ConstString { dst, .. } | ConstNum { dst, .. } | NewInstance { dst, .. } => vec![dst],
            CollectionNew { dst } | Sget { dst, .. } => vec![dst],
            Move { dst, src } => vec![dst, src],
            Invoke { args, dst, .. } => args
                .iter()
                .map(String::as_str)
                .chain(dst.as_deref())
                .collect(),
            Iget { dst, obj, .. } => vec![dst, obj],
            Iput { src, obj, .. } => vec![src, obj],
            Sput { src, .. } | Return { src } => vec![src],
            CollectionPut { coll, index, value } => {
                [Some(coll.as_str()), index.as_deref(), Some(value.as_str())]
                    .into_iter()
                    .flatten()
                    .collect()
            }
            CollectionGet { dst, coll, index } => {
                [Some(dst.as_str()), Some(coll.as_str()), index.as_deref()]
                    .into_iter()
                    .flatten()
                    .collect()
            }
            IfGoto { cond, .. } => vec![cond],
            Goto { .. } | ReturnVoid => vec![],
        }
    }

    pub fn branch_target(&self) -> Option<&str> {
        match self {
            Instruction::IfGoto { label, .. } | Instruction::Goto { label } => Some(label),
            _ => None,
        }
    }

    pub fn is_return(&self) -> bool {
        matches!(self, Instruction::Return { .. } | Instruction::ReturnVoid)
    }

    fn to_value(&self) -> Value {
        use Instruction::*;
        let s = |x: &str| Value::String(x.to_string());
        let opt = |x: &Option<String>| x.as_deref().map(s).unwrap_or(Value::Null);
        let mut v = vec![s(self.opcode())];
        match self {
            ConstString { dst, value } => v.extend([s(dst), s(value)]),
            ConstNum { dst, value } => v.extend([s(dst), Value::Number(value.clone())]),
            Move { dst, src } => v.extend([s(dst), s(src)]),
            NewInstance { dst, class } => v.extend([s(dst), s(class)]),
            Invoke {
                method, args, dst, ..
            } => {
                v.push(s(method));
                v.push(Value::Array(args.iter().map(|a| s(a)).collect()));
                if dst.is_some() {
                    v.push(opt(dst));
                }
            }
            Iget { dst, obj, field } => v.extend([s(dst), s(obj), s(field)]),
            Iput { src, obj, field } => v.extend([s(src), s(obj), s(field)]),
            Sget { dst, field } => v.extend([s(dst), s(field)]),
            Sput { src, field } => v.extend([s(src), s(field)]),
            CollectionNew { dst } => v.push(s(dst)),
            CollectionPut { coll, index, value } => v.extend([s(coll), opt(index), s(value)]),
            CollectionGet { dst, coll, index } => v.extend([s(dst), s(coll), opt(index)]),
            IfGoto { cond, label } => v.extend([s(cond), s(label)]),
            Goto { label } => v.push(s(label)),
            Return { src } => v.push(s(src)),
            ReturnVoid => {}
        }
        Value::Array(v)
    }

    fn from_value(v: &Value) -> Result<Self, String> {
        let arr = v.as_array().ok_or("instruction must be an array")?;
        let op = arr
            .first()
            .and_then(Value::as_str)
            .ok_or("instruction needs an opcode")?;
        let ops = &arr[1..];
        let arity = |n: usize| -> Result<(), String> {
            if ops.len() == n {
                Ok(())
            } else {
                Err(format!("{op} expects {n} operands, got {}", ops.len()))
            }
        };
        let st = |i: usize| -> Result<String, String> {
            ops[i]
                .as_str()
                .map(String::from)
                .ok_or_else(|| format!("{op}: operand {i} must be a string"))
        };
        let opt = |i: usize| -> Result<Option<String>, String> {
            match &ops[i] {
                Value::Null => Ok(None),
                Value::String(s) => Ok(Some(s.clone())),
                _ => Err(format!("{op}: operand {i} must be a string or null")),
            }
        };
        use Instruction::*;
        Ok(match op {
            "CONST_STRING" => {
                arity(2)?;
                ConstString {
                    dst: st(0)?,
                    value: st(1)?,
                }
            }
            "CONST_NUM" => {
                arity(2)?;
                let value = match &ops[1] {
                    Value::Number(n) => n.clone(),
                    _ => return Err("CONST_NUM: operand 1 must be a number".into()),
                };
                ConstNum { dst: st(0)?, value }
            }
            "MOVE" => {
                arity(2)?;
                Move {
                    dst: st(0)?,
                    src: st(1)?,
                }
            }
            "NEW_INSTANCE" => {
                arity(2)?;
                NewInstance {
                    dst: st(0)?,
                    class: st(1)?,
                }
            }
            "INVOKE_VIRTUAL" | "INVOKE_STATIC" | "INVOKE_DIRECT" => {
                if ops.len() != 2 && ops.len() != 3 {
                    return Err(format!("{op} expects 2 or 3 operands, got {}", ops.len()));
                }
                let kind = match op {
                    "INVOKE_VIRTUAL" => InvokeKind::Virtual,
                    "INVOKE_STATIC" => InvokeKind::Static,
                    _ => InvokeKind::Direct,
                };
                let args = ops[1]
                    .as_array()
                    .ok_or_else(|| format!("{op}: operand 1 must be an array of registers"))?
                    .iter()
                    .map(|a| {
                        a.as_str()
                            .map(String::from)
                            .ok_or_else(|| format!("{op}: bad argument"))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let dst = if ops.len() == 3 { opt(2)? } else { None };
                Invoke {
                    kind,
                    method: st(0)?,
                    args,
                    dst,
                }
            }
            "IGET" => {
                arity(3)?;
                Iget {
                    dst: st(0)?,
                    obj: st(1)?,
                    field: st(2)?,
                }
            }
            "IPUT" => {
                arity(3)?;
                Iput {
                    src: st(0)?,
                    obj: st(1)?,
                    field: st(2)?,
                }
            }
            "SGET" => {
                arity(2)?;
                Sget {
                    dst: st(0)?,
                    field: st(1)?,
                }
            }
            "SPUT" => {
                arity(2)?;
                Sput {
                    src: st(0)?,
                    field: st(1)?,
                }
            }
            "COLLECTION_NEW" => {
                arity(1)?;
                CollectionNew { dst: st(0)? }
            }
            "COLLECTION_PUT" => {
                arity(3)?;
                CollectionPut {
                    coll: st(0)?,
                    index: opt(1)?,
                    value: st(2)?,
                }
            }
            "COLLECTION_GET" => {
                arity(3)?;
                CollectionGet {
                    dst: st(0)?,
                    coll: st(1)?,
                    index: opt(2)?,
                }
            }
            "IF_GOTO" => {
                arity(2)?;
                IfGoto {
                    cond: st(0)?,
                    label: st(1)?,
                }
            }
            "GOTO" => {
                arity(1)?;
                Goto { label: st(0)? }
            }
            "RETURN" => {
                arity(1)?;
                Return { src: st(0)? }
            }
            "RETURN_VOID" => {
                arity(0)?;
                ReturnVoid
            }
            other => return Err(format!("unknown opcode `{other}`")),
        })
    }
}

impl Serialize for Instruction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Instruction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Instruction::from_value(&v).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodDef {
    /// `name/arity`, arity excluding the receiver.
    pub sig: String,
    #[serde(default)]
    pub params: Vec<String>,
    /// Declared types of the parameters, aligned with `params`. Only used to
    /// recognise runtime-provided objects such as a saved-state bundle.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub param_types: Vec<String>,
    #[serde(default, rename = "static", skip_serializing_if = "std::ops::Not::not")]
    pub is_static: bool,
    #[serde(default)]
    pub registers: Vec<String>,
    pub instructions: Vec<Instruction>,
    #[serde(default)]
    pub labels: BTreeMap<String, usize>,
}

impl MethodDef {
    pub fn name(&self) -> &str {
        self.sig.split('/').next().unwrap_or(&self.sig)
    }

    pub fn arity(&self) -> usize {
        parse_sig(&self.sig).map(|(_, n)| n).unwrap_or(0)
    }

    pub fn param_type(&self, i: usize) -> Option<&str> {
        self.param_types.get(i).map(String::as_str)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.get(label).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDef {
    pub name: String,
    pub parent_kind: ParentKind,
    #[serde(default)]
    pub static_fields: Vec<String>,
    pub methods: Vec<MethodDef>,
}

impl ClassDef {
    pub fn method(&self, sig: &str) -> Option<&MethodDef> {
        self.methods.iter().find(|m| m.sig == sig)
    }

    /// First method with the given name, whatever its arity.
    pub fn method_named(&self, name: &str) -> Option<&MethodDef> {
        self.methods.iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDef {
    pub class: String,
    pub kind: ComponentType,
    #[serde(default)]
    pub aui_callbacks: Vec<String>,
    #[serde(default)]
    pub misc_callbacks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppModel {
    pub app_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub classes: Vec<ClassDef>,
    pub components: Vec<ComponentDef>,
}

/// `name/arity` → (name, arity).
pub fn parse_sig(sig: &str) -> Option<(&str, usize)> {
    let (name, n) = sig.rsplit_once('/')?;
    if name.is_empty() {
        return None;
    }
    Some((name, n.parse().ok()?))
}

/// `Class.name/arity` → (class, `name/arity`).
pub fn split_qualified(qsig: &str) -> Option<(&str, &str)> {
    let slash = qsig.rfind('/')?;
    let dot = qsig[..slash].rfind('.')?;
    Some((&qsig[..dot], &qsig[dot + 1..]))
}

/// A method location within an app.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MethodRef {
    pub class: usize,
    pub method: usize,
}

impl fmt::Display for MethodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}:{}", self.class, self.method)
    }
}

pub fn load_app(path: impl AsRef<Path>) -> Result<AppModel, IrError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    AppModel::from_json(&text)
}

impl AppModel {
    pub fn from_json(text: &str) -> Result<Self, IrError> {
        let app: AppModel =
            serde_json::from_str(text).map_err(|e| IrError::Schema(e.to_string()))?;
        app.validate()?;
        Ok(app)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("IR serialises")
    }

    pub fn class(&self, name: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn method_at(&self, r: MethodRef) -> &MethodDef {
        &self.classes[r.class].methods[r.method]
    }

    pub fn qualified_name(&self, r: MethodRef) -> String {
        format!("{}.{}", self.classes[r.class].name, self.method_at(r).sig)
    }

    /// Resolves `Class.name/arity` to app code. `None` means the reference
    /// is an external API.
    pub fn resolve(&self, qsig: &str) -> Option<MethodRef> {
        let (class, sig) = split_qualified(qsig)?;
        let ci = self.class_index(class)?;
        let mi = self.classes[ci].methods.iter().position(|m| m.sig == sig)?;
        Some(MethodRef {
            class: ci,
            method: mi,
        })
    }

    pub fn resolve_method(&self, qsig: &str) -> Option<&MethodDef> {
        self.resolve(qsig).map(|r| self.method_at(r))
    }

    pub fn component_class(&self, c: &ComponentDef) -> &ClassDef {
        self.class(&c.class).expect("validated component class")
    }

    pub fn all_methods(&self) -> impl Iterator<Item = MethodRef> + '_ {
        self.classes.iter().enumerate().flat_map(|(ci, c)| {
            (0..c.methods.len()).map(move |mi| MethodRef {
                class: ci,
                method: mi,
            })
        })
    }

    fn validate(&self) -> Result<(), IrError> {
        let mut class_names = HashSet::new();
        for c in &self.classes {
            if !class_names.insert(c.name.as_str()) {
                return Err(invalid(&c.name, "duplicate class"));
            }
            let mut sigs = HashSet::new();
            for m in &c.methods {
                let loc = format!("{}.{}", c.name, m.sig);
                if !sigs.insert(m.sig.as_str()) {
                    return Err(invalid(loc, "ambiguous signature: defined twice"));
                }
                validate_method(self, m, &loc)?;
            }
        }
        let statics: HashSet<String> = self
            .classes
            .iter()
            .flat_map(|c| {
                c.static_fields
                    .iter()
                    .map(move |f| format!("{}.{}", c.name, f))
            })
            .collect();
        for c in &self.classes {
            for m in &c.methods {
                for (i, ins) in m.instructions.iter().enumerate() {
                    if let Instruction::Sget { field, .. } | Instruction::Sput { field, .. } = ins {
                        let owner = field.rsplit_once('.').map(|(o, _)| o);
                        let in_app = owner.is_some_and(|o| class_names.contains(o));
                        if in_app && !statics.contains(field) {
                            return Err(invalid(
                                format!("{}.{}@{}", c.name, m.sig, i),
                                format!("unresolved static field `{field}`"),
                            ));
                        }
                    }
                }
            }
        }
        for comp in &self.components {
            let Some(class) = self.class(&comp.class) else {
                return Err(invalid(&comp.class, "component references unknown class"));
            };
            for cb in comp.aui_callbacks.iter().chain(&comp.misc_callbacks) {
                if class.method(cb).is_none() {
                    return Err(invalid(
                        format!("{}.{}", comp.class, cb),
                        "declared callback is not defined",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn validate_method(app: &AppModel, m: &MethodDef, loc: &str) -> Result<(), IrError> {
    let (_, arity) =
        parse_sig(&m.sig).ok_or_else(|| invalid(loc, "signature must be name/arity"))?;
    if m.params.len() != arity {
        return Err(invalid(
            loc,
            format!("{} params for arity {arity}", m.params.len()),
        ));
    }
    if !m.param_types.is_empty() && m.param_types.len() != arity {
        return Err(invalid(loc, "param_types must align with params"));
    }
    let mut declared: HashSet<&str> = m
        .params
        .iter()
        .chain(&m.registers)
        .map(String::as_str)
        .collect();
    if !m.is_static {
        declared.insert(THIS);
    }
    for (label, &idx) in &m.labels {
        if idx >= m.instructions.len() {
            return Err(invalid(
                loc,
                format!("label `{label}` points past the method end"),
            ));
        }
    }
    for (i, ins) in m.instructions.iter().enumerate() {
        let at = format!("{loc}@{i}");
        for r in ins.registers() {
            if !declared.contains(r) {
                return Err(invalid(&at, format!("undeclared register `{r}`")));
            }
        }
        if let Some(label) = ins.branch_target() {
            if !m.labels.contains_key(label) {
                return Err(invalid(&at, format!("branch to missing label `{label}`")));
            }
        }
        if let Instruction::Invoke {
            kind, method, args, ..
        } = ins
        {
            let (_, sig) = split_qualified(method)
                .ok_or_else(|| invalid(&at, format!("bad method reference `{method}`")))?;
            let (_, n) =
                parse_sig(sig).ok_or_else(|| invalid(&at, format!("bad signature `{method}`")))?;
            let want = if *kind == InvokeKind::Static {
                n
            } else {
                n + 1
            };
            if args.len() != want {
                return Err(invalid(
                    &at,
                    format!("`{method}` takes {want} registers, got {}", args.len()),
                ));
            }
            if let Some(r) = app.resolve(method) {
                let target = app.method_at(r);
                if target.is_static != (*kind == InvokeKind::Static) {
                    return Err(invalid(
                        &at,
                        format!("invoke kind does not match `{method}`"),
                    ));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn app_with(instructions: &str, labels: &str) -> String {
        format!(
            r#"{{"app_id":"t","classes":[{{"name":"A","parent_kind":"PLAIN","methods":[
                {{"sig":"m/0","registers":["v0"],"instructions":{instructions},"labels":{labels}}}]}}],
                "components":[]}}"#
        )
    }

    #[test]
    fn branch_to_missing_label_fails() {
        let err = AppModel::from_json(&app_with(r#"[["GOTO","L9"],["RETURN_VOID"]]"#, "{}"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing label"), "{err}");
        assert!(err.contains("A.m/0@0"), "{err}");
    }

    #[test]
    fn undeclared_register_fails() {
        let err = AppModel::from_json(&app_with(r#"[["MOVE","v0","v7"]]"#, "{}")).unwrap_err();
        assert!(err.to_string().contains("v7"));
    }

    #[test]
    fn unknown_opcode_fails() {
        assert!(AppModel::from_json(&app_with(r#"[["JUMP","v0"]]"#, "{}")).is_err());
    }

    #[test]
    fn invoke_arity_is_checked() {
        let err = AppModel::from_json(&app_with(
            r#"[["INVOKE_VIRTUAL","X.f/1",["v0"]],["RETURN_VOID"]]"#,
            "{}",
        ))
        .unwrap_err();
        assert!(err.to_string().contains("takes 2"));
    }

    #[test]
    fn external_api_does_not_resolve() {
        let app = AppModel::from_json(&app_with(r#"[["RETURN_VOID"]]"#, "{}")).unwrap();
        assert!(app.resolve_method("A.m/0").is_some());
        assert!(app
            .resolve_method("TelephonyManager.getDeviceId/0")
            .is_none());
    }

    #[test]
    fn instruction_round_trip() {
        let text = r#"[["INVOKE_STATIC","S.f/1",["v0"],"v0"],["COLLECTION_PUT","v0",null,"v0"],
                       ["CONST_NUM","v0",3],["IF_GOTO","v0","L"],["RETURN","v0"]]"#;
        let app = AppModel::from_json(&app_with(text, r#"{"L":4}"#)).unwrap();
        let again = AppModel::from_json(&app.to_json()).unwrap();
        assert_eq!(app, again);
    }

    #[test]
    fn qualified_split() {
        assert_eq!(split_qualified("a.b.C.m/2"), Some(("a.b.C", "m/2")));
        assert_eq!(parse_sig("onCreate/1"), Some(("onCreate", 1)));
        assert_eq!(parse_sig("/1"), None);
    }
}
