//! Flattened component life-cycle machines and event-sequence derivation.
//!
//! A model is a set of static and transient states joined by guarded
//! transitions. Leaving a static state requires an external event; a
//! transient state is left automatically along the single transition that
//! matches the event currently being processed. Derivation walks the static
//! states depth first with a three-colour marking so every loop among static
//! states is traversed at most once more than a straight path.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model schema violation: {0}")]
    Schema(String),
    #[error("model references unknown {kind} `{name}`")]
    Dangling { kind: &'static str, name: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("machine stuck in transient state `{state}` on event `{event}`")]
    Stuck { state: String, event: String },
    #[error("event `{event}` is not accepted in state `{state}`")]
    Rejected { state: String, event: String },
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComponentKind {
    Activity,
    Service,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StateKind {
    Static,
    Transient,
}

/// Visit marking used by the derivation walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Color {
    White,
    Grey,
    Red,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleState {
    pub name: String,
    pub kind: StateKind,
}

/// Transition guard. An empty guard is always true; `is_else` fires only
/// when no sibling guard matches.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guard {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_event: Option<String>,
    #[serde(default, rename = "else", skip_serializing_if = "std::ops::Not::not")]
    pub is_else: bool,
}

impl Guard {
    /// `current` is the event being processed, `previous` the one before it.
    fn accepts(&self, current: &str, previous: Option<&str>) -> bool {
        if self.event.as_deref().is_some_and(|e| e != current) {
            return false;
        }
        match &self.prev_event {
            Some(p) => previous == Some(p.as_str()),
            None => true,
        }
    }

    fn overlaps(&self, other: &Guard) -> bool {
        let ev = match (&self.event, &other.event) {
            (Some(a), Some(b)) => a == b,
            _ => true,
        };
        let prev = match (&self.prev_event, &other.prev_event) {
            (Some(a), Some(b)) => a == b,
            _ => true,
        };
        ev && prev && self.is_else == other.is_else
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    #[serde(rename = "from")]
    pub source: String,
    #[serde(rename = "to")]
    pub destination: String,
    #[serde(default)]
    pub guard: Guard,
    #[serde(default, rename = "callbacks")]
    pub emitted_callbacks: Vec<String>,
    #[serde(default, rename = "triggers", skip_serializing_if = "Option::is_none")]
    pub triggered_event: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventSequence {
    pub events: Vec<String>,
}

impl fmt::Display for EventSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.events.join(" -> "))
    }
}

/// A callback emitted while replaying an event sequence, tagged with the
/// index of the event that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedCallback {
    pub event_index: usize,
    pub callback: String,
}

/// Result of driving the machine through an event sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    /// Static states entered, starting with the initial state.
    pub static_path: Vec<String>,
    pub callbacks: Vec<EmittedCallback>,
    pub final_state: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    component_kind: ComponentKind,
    states: Vec<LifecycleState>,
    initial: String,
    goal: String,
    events: Vec<String>,
    #[serde(default)]
    callbacks: Option<Vec<String>>,
    transitions: Vec<Transition>,
}

#[derive(Debug, Clone)]
pub struct LifecycleModel {
    pub component_kind: ComponentKind,
    pub states: Vec<LifecycleState>,
    pub initial_state: String,
    pub goal_state: String,
    pub events: Vec<String>,
    pub callbacks: Vec<String>,
    pub transitions: Vec<Transition>,
    state_index: HashMap<String, usize>,
    outgoing: Vec<Vec<usize>>,
}

impl Serialize for LifecycleModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("LifecycleModel", 7)?;
        st.serialize_field("component_kind", &self.component_kind)?;
        st.serialize_field("states", &self.states)?;
        st.serialize_field("initial", &self.initial_state)?;
        st.serialize_field("goal", &self.goal_state)?;
        st.serialize_field("events", &self.events)?;
        st.serialize_field("callbacks", &self.callbacks)?;
        st.serialize_field("transitions", &self.transitions)?;
        st.end()
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LifecycleModel, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    LifecycleModel::from_json(&text)
}

impl LifecycleModel {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: RawModel =
            serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
        Self::new(
            raw.component_kind,
            raw.states,
            raw.initial,
            raw.goal,
            raw.events,
            raw.callbacks,
            raw.transitions,
        )
    }

    /// Builds and validates a model. When `callbacks` is `None` the callback
    /// alphabet is collected from the transitions in file order.
    pub fn new(
        component_kind: ComponentKind,
        states: Vec<LifecycleState>,
        initial_state: String,
        goal_state: String,
        events: Vec<String>,
        callbacks: Option<Vec<String>>,
        transitions: Vec<Transition>,
    ) -> Result<Self, ModelError> {
        let mut state_index = HashMap::new();
        for (i, s) in states.iter().enumerate() {
            if state_index.insert(s.name.clone(), i).is_some() {
                return Err(ModelError::Invalid(format!("duplicate state `{}`", s.name)));
            }
        }
        let lookup = |name: &str| {
            state_index
                .get(name)
                .copied()
                .ok_or_else(|| ModelError::Dangling {
                    kind: "state",
                    name: name.to_string(),
                })
        };
        let init = lookup(&initial_state)?;
        lookup(&goal_state)?;
        if states[init].kind != StateKind::Static {
            return Err(ModelError::Invalid(format!(
                "initial state `{initial_state}` must be static"
            )));
        }
        let event_set: HashSet<&str> = events.iter().map(String::as_str).collect();
        if event_set.len() != events.len() {
            return Err(ModelError::Invalid("duplicate event name".into()));
        }
        let callbacks = callbacks.unwrap_or_else(|| {
            let mut seen = Vec::<String>::new();
            for t in &transitions {
                for c in &t.emitted_callbacks {
                    if !seen.contains(c) {
                        seen.push(c.clone());
                    }
                }
            }
            seen
        });
        let callback_set: HashSet<&str> = callbacks.iter().map(String::as_str).collect();

        let mut outgoing = vec![Vec::new(); states.len()];
        for (i, t) in transitions.iter().enumerate() {
            let src = lookup(&t.source)?;
            lookup(&t.destination)?;
            let g = &t.guard;
            if g.is_else && (g.event.is_some() || g.prev_event.is_some()) {
                return Err(ModelError::Invalid(format!(
                    "transition {i}: an else guard cannot name events"
                )));
            }
            for e in [&g.event, &g.prev_event, &t.triggered_event]
                .into_iter()
                .flatten()
            {
                if !event_set.contains(e.as_str()) {
                    return Err(ModelError::Dangling {
                        kind: "event",
                        name: e.clone(),
                    });
                }
            }
            for c in &t.emitted_callbacks {
                if !callback_set.contains(c.as_str()) {
                    return Err(ModelError::Dangling {
                        kind: "callback",
                        name: c.clone(),
                    });
                }
            }
            if states[src].kind == StateKind::Static {
                let Some(trig) = &t.triggered_event else {
                    return Err(ModelError::Invalid(format!(
                        "transition {i} leaves static state `{}` without a triggered event",
                        t.source
                    )));
                };
                if g.event.as_ref().is_some_and(|e| e != trig) || g.is_else {
                    return Err(ModelError::Invalid(format!(
                        "transition {i}: static guard contradicts its triggered event"
                    )));
                }
            } else if t.triggered_event.is_some() {
                return Err(ModelError::Invalid(format!(
                    "transition {i}: transient state `{}` cannot introduce an event",
                    t.source
                )));
            }
            outgoing[src].push(i);
        }

        // Sibling transitions must never both fire for the same event history.
        for (s, outs) in outgoing.iter().enumerate() {
            for (a, &i) in outs.iter().enumerate() {
                for &j in &outs[a + 1..] {
                    let (ti, tj) = (&transitions[i], &transitions[j]);
                    let same_trigger = ti.triggered_event == tj.triggered_event;
                    if same_trigger && ti.guard.overlaps(&tj.guard) {
                        return Err(ModelError::Invalid(format!(
                            "transitions {i} and {j} out of `{}` are ambiguous",
                            states[s].name
                        )));
                    }
                }
            }
        }

        Ok(Self {
            component_kind,
            states,
            initial_state,
            goal_state,
            events,
            callbacks,
            transitions,
            state_index,
            outgoing,
        })
    }

    pub fn state(&self, name: &str) -> Option<&LifecycleState> {
        self.state_index.get(name).map(|&i| &self.states[i])
    }

    fn idx(&self, name: &str) -> usize {
        self.state_index[name]
    }

    /// Transitions leaving `state`, in file order.
    pub fn outgoing(&self, state: &str) -> impl Iterator<Item = &Transition> {
        self.state_index
            .get(state)
            .into_iter()
            .flat_map(move |&i| self.outgoing[i].iter().map(move |&t| &self.transitions[t]))
    }

    /// Picks the unique transition out of a transient state for `current`.
    fn transient_step(
        &self,
        state: usize,
        current: &str,
        previous: Option<&str>,
    ) -> Result<&Transition, ModelError> {
        let outs = &self.outgoing[state];
        let pick = |want_else: bool| {
            outs.iter().map(|&t| &self.transitions[t]).find(|t| {
                t.guard.is_else == want_else && (want_else || t.guard.accepts(current, previous))
            })
        };
        pick(false)
            .or_else(|| pick(true))
            .ok_or_else(|| ModelError::Stuck {
                state: self.states[state].name.clone(),
                event: current.to_string(),
            })
    }

    /// Follows transient states from `state` until a static state is reached,
    /// calling `emit` with every callback on the way.
    fn settle(
        &self,
        mut state: usize,
        current: &str,
        previous: Option<&str>,
        mut emit: impl FnMut(&str),
    ) -> Result<usize, ModelError> {
        let mut steps = 0;
        while self.states[state].kind == StateKind::Transient {
            let t = self.transient_step(state, current, previous)?;
            t.emitted_callbacks.iter().for_each(|c| emit(c));
            state = self.idx(&t.destination);
            steps += 1;
            if steps > self.states.len() {
                return Err(ModelError::Invalid(format!(
                    "transient cycle while processing `{current}`"
                )));
            }
        }
        Ok(state)
    }

    /// Derives every event sequence reachable from the initial state that
    /// returns to the goal state, exploring transitions in file order.
    pub fn derive_event_sequences(&self) -> Result<Vec<EventSequence>, ModelError> {
        let mut colors = vec![Color::White; self.states.len()];
        let mut trail = Vec::new();
        let mut out = Vec::new();
        self.visit(
            self.idx(&self.initial_state),
            &mut colors,
            &mut trail,
            &mut out,
        )?;
        debug_assert!(colors.iter().all(|c| *c == Color::White));
        Ok(out)
    }

    fn visit(
        &self,
        s: usize,
        colors: &mut [Color],
        trail: &mut Vec<String>,
        out: &mut Vec<EventSequence>,
    ) -> Result<(), ModelError> {
        let current = colors[s];
        // A goal with no way out can never be re-entered, so reaching it once
        // completes the sequence.
        if s == self.idx(&self.goal_state)
            && (current != Color::White || self.outgoing[s].is_empty())
        {
            out.push(EventSequence {
                events: trail.clone(),
            });
            return Ok(());
        }
        if current == Color::Red {
            return Ok(());
        }
        colors[s] = if current == Color::White {
            Color::Grey
        } else {
            Color::Red
        };
        for &ti in &self.outgoing[s] {
            let t = &self.transitions[ti];
            let event = t
                .triggered_event
                .as_deref()
                .expect("validated static transition");
            if !t.guard.accepts(event, trail.last().map(String::as_str)) {
                continue;
            }
            let dest = self.idx(&t.destination);
            if dest == s {
                continue;
            }
            let previous = trail.last().cloned();
            trail.push(event.to_string());
            let next = self.settle(dest, event, previous.as_deref(), |_| {});
            let res = next.and_then(|d| self.visit(d, colors, trail, out));
            trail.pop();
            res?;
        }
        colors[s] = current;
        Ok(())
    }

    /// Drives the machine from the initial state through `events`, checking
    /// every guard. Fails if some event is not accepted.
    pub fn replay(&self, events: &[String]) -> Result<Replay, ModelError> {
        self.replay_from(&self.initial_state, None, events)
    }

    /// Like [`replay`](Self::replay) but starting in static state `start`,
    /// entered by event `entered_by`.
    pub fn replay_from(
        &self,
        start: &str,
        entered_by: Option<&str>,
        events: &[String],
    ) -> Result<Replay, ModelError> {
        let mut state = *self
            .state_index
            .get(start)
            .ok_or_else(|| ModelError::Dangling {
                kind: "state",
                name: start.to_string(),
            })?;
        let mut static_path = vec![start.to_string()];
        let mut callbacks = Vec::new();
        for (i, event) in events.iter().enumerate() {
            if !self.events.contains(event) {
                return Err(ModelError::UnknownEvent(event.clone()));
            }
            let previous = match i {
                0 => entered_by,
                _ => Some(events[i - 1].as_str()),
            };
            let t = self.outgoing[state]
                .iter()
                .map(|&t| &self.transitions[t])
                .find(|t| {
                    t.triggered_event.as_deref() == Some(event.as_str())
                        && t.guard.accepts(event, previous)
                })
                .ok_or_else(|| ModelError::Rejected {
                    state: self.states[state].name.clone(),
                    event: event.clone(),
                })?;
            let mut push = |c: &str| {
                callbacks.push(EmittedCallback {
                    event_index: i,
                    callback: c.to_string(),
                })
            };
            t.emitted_callbacks.iter().for_each(|c| push(c));
            state = self.settle(self.idx(&t.destination), event, previous, push)?;
            static_path.push(self.states[state].name.clone());
        }
        Ok(Replay {
            static_path,
            callbacks,
            final_state: self.states[state].name.clone(),
        })
    }

    /// Callbacks the runtime invokes for one event, taken from the first
    /// static state that accepts it.
    pub fn callbacks_for_event(&self, event: &str) -> Result<Vec<String>, ModelError> {
        if !self.events.iter().any(|e| e == event) {
            return Err(ModelError::UnknownEvent(event.to_string()));
        }
        let t = self
            .transitions
            .iter()
            .find(|t| t.triggered_event.as_deref() == Some(event))
            .ok_or_else(|| ModelError::UnknownEvent(event.to_string()))?;
        let mut out = t.emitted_callbacks.clone();
        self.settle(
            self.idx(&t.destination),
            event,
            t.guard.prev_event.as_deref(),
            |c| out.push(c.to_string()),
        )?;
        Ok(out)
    }

    /// Callbacks for a whole event sequence, grouped per event.
    pub fn callbacks_for_sequence(
        &self,
        seq: &EventSequence,
    ) -> Result<Vec<Vec<String>>, ModelError> {
        let replay = self.replay(&seq.events)?;
        let mut grouped = vec![Vec::new(); seq.events.len()];
        for c in replay.callbacks {
            grouped[c.event_index].push(c.callback);
        }
        Ok(grouped)
    }

    pub fn static_states(&self) -> impl Iterator<Item = &LifecycleState> {
        self.states.iter().filter(|s| s.kind == StateKind::Static)
    }

    /// Edges between static states, labelled with the triggering event.
    pub fn static_edges(&self) -> Result<Vec<(String, String, String)>, ModelError> {
        let mut edges = Vec::new();
        for t in &self.transitions {
            let Some(event) = &t.triggered_event else {
                continue;
            };
            let dest = self.settle(
                self.idx(&t.destination),
                event,
                t.guard.prev_event.as_deref(),
                |_| {},
            )?;
            edges.push((
                t.source.clone(),
                self.states[dest].name.clone(),
                event.clone(),
            ));
        }
        Ok(edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(name: &str, kind: StateKind) -> LifecycleState {
        LifecycleState {
            name: name.into(),
            kind,
        }
    }

    fn tr(from: &str, to: &str, trig: Option<&str>, guard: Guard, cbs: &[&str]) -> Transition {
        Transition {
            source: from.into(),
            destination: to.into(),
            guard,
            emitted_callbacks: cbs.iter().map(|s| s.to_string()).collect(),
            triggered_event: trig.map(String::from),
        }
    }

    #[test]
    fn one_path_machine_yields_single_sequence() {
        let m = LifecycleModel::new(
            ComponentKind::Service,
            vec![st("A", StateKind::Static), st("B", StateKind::Static)],
            "A".into(),
            "B".into(),
            vec!["e".into()],
            None,
            vec![tr("A", "B", Some("e"), Guard::default(), &["cb"])],
        )
        .unwrap();
        let seqs = m.derive_event_sequences().unwrap();
        assert_eq!(
            seqs,
            vec![EventSequence {
                events: vec!["e".into()]
            }]
        );
    }

    #[test]
    fn dangling_state_is_rejected() {
        let err = LifecycleModel::new(
            ComponentKind::Service,
            vec![st("A", StateKind::Static)],
            "A".into(),
            "A".into(),
            vec!["e".into()],
            None,
            vec![tr("A", "Nowhere", Some("e"), Guard::default(), &[])],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Dangling { kind: "state", .. }));
    }

    #[test]
    fn transient_without_match_is_stuck() {
        let m = LifecycleModel::new(
            ComponentKind::Service,
            vec![
                st("A", StateKind::Static),
                st("T", StateKind::Transient),
                st("B", StateKind::Static),
            ],
            "A".into(),
            "B".into(),
            vec!["e".into(), "f".into()],
            None,
            vec![
                tr("A", "T", Some("e"), Guard::default(), &[]),
                tr(
                    "T",
                    "B",
                    None,
                    Guard {
                        event: Some("f".into()),
                        ..Guard::default()
                    },
                    &[],
                ),
            ],
        )
        .unwrap();
        assert!(matches!(
            m.derive_event_sequences(),
            Err(ModelError::Stuck { .. })
        ));
    }

    #[test]
    fn else_guard_fires_only_without_match() {
        let m = LifecycleModel::new(
            ComponentKind::Service,
            vec![
                st("A", StateKind::Static),
                st("T", StateKind::Transient),
                st("B", StateKind::Static),
            ],
            "A".into(),
            "B".into(),
            vec!["e".into(), "f".into()],
            None,
            vec![
                tr("A", "T", Some("e"), Guard::default(), &[]),
                tr("A", "T", Some("f"), Guard::default(), &[]),
                tr(
                    "T",
                    "B",
                    None,
                    Guard {
                        event: Some("f".into()),
                        ..Guard::default()
                    },
                    &["viaF"],
                ),
                tr(
                    "T",
                    "B",
                    None,
                    Guard {
                        is_else: true,
                        ..Guard::default()
                    },
                    &["viaElse"],
                ),
            ],
        )
        .unwrap();
        assert_eq!(m.callbacks_for_event("e").unwrap(), vec!["viaElse"]);
        assert_eq!(m.callbacks_for_event("f").unwrap(), vec!["viaF"]);
    }

    #[test]
    fn static_transition_needs_trigger() {
        let err = LifecycleModel::new(
            ComponentKind::Service,
            vec![st("A", StateKind::Static), st("B", StateKind::Static)],
            "A".into(),
            "B".into(),
            vec!["e".into()],
            None,
            vec![tr("A", "B", None, Guard::default(), &[])],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Invalid(_)));
    }

    #[test]
    fn schema_error_names_field() {
        let err = LifecycleModel::from_json(r#"{"component_kind":"SERVICE","states":[]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("initial"), "{err}");
    }
}
