//! Callback sequences and the m-way arrangements of permutation units.
//!
//! Event sequences are mapped to the life-cycle callbacks a component really
//! implements. For activities, everything after the leading `createActivity`
//! moves the component away from the resumed state and back again, so each
//! such stretch becomes a permutation unit; UI and miscellaneous callbacks are
//! units too. An m-way plan is every ordered choice of `m` distinct units,
//! prefixed by the callbacks of `createActivity`.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::app_ir::{AppModel, ClassDef, ComponentDef};
use crate::lifecycle_model::{ComponentKind, EventSequence, LifecycleModel, ModelError};

pub const CREATE_ACTIVITY: &str = "createActivity";

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("m = {m} is outside 1..={n}")]
    BadM { m: usize, n: usize },
    #[error("activity event sequence does not start with {CREATE_ACTIVITY}: {0}")]
    MissingCreate(String),
}

/// Ordered method signatures (`name/arity`) of one component class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CallbackSequence {
    pub callbacks: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UnitKind {
    LifecycleSubsequence,
    AuiCallback,
    MiscCallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PermutationUnit {
    pub kind: UnitKind,
    pub callbacks: CallbackSequence,
    /// Event subsequences that produce exactly these callbacks, in
    /// derivation order. Empty for UI and miscellaneous callbacks.
    pub origins: Vec<EventSequence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PermutationPlan {
    pub m: usize,
    pub units: Vec<PermutationUnit>,
    pub prefix: CallbackSequence,
    /// Events that produce `prefix`.
    pub prefix_events: Vec<String>,
}

/// One ordered arrangement of unit indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Arrangement {
    pub units: Vec<usize>,
}

/// Maps a life-cycle callback name to the implementing method signature.
pub fn implemented_callbacks(class: &ClassDef, model: &LifecycleModel) -> HashMap<String, String> {
    model
        .callbacks
        .iter()
        .filter_map(|name| {
            class
                .method_named(name)
                .map(|m| (name.clone(), m.sig.clone()))
        })
        .collect()
}

fn project(
    names: impl IntoIterator<Item = String>,
    implemented: &HashMap<String, String>,
) -> Vec<String> {
    names
        .into_iter()
        .filter_map(|n| implemented.get(&n).cloned())
        .collect()
}

/// Callback sequences with the event sequences that produce them, duplicates
/// and empty sequences removed, in derivation order.
pub fn derive_callback_sequences_with_origins(
    model: &LifecycleModel,
    app: &AppModel,
    component: &ComponentDef,
) -> Result<Vec<(CallbackSequence, Vec<EventSequence>)>, SequenceError> {
    let implemented = implemented_callbacks(app.component_class(component), model);
    let mut out: Vec<(CallbackSequence, Vec<EventSequence>)> = Vec::new();
    for seq in model.derive_event_sequences()? {
        let replay = model.replay(&seq.events)?;
        let cbs = project(
            replay.callbacks.into_iter().map(|c| c.callback),
            &implemented,
        );
        if cbs.is_empty() {
            continue;
        }
        let cs = CallbackSequence { callbacks: cbs };
        match out.iter_mut().find(|(c, _)| *c == cs) {
            Some((_, origins)) => origins.push(seq),
            None => out.push((cs, vec![seq])),
        }
    }
    Ok(out)
}

pub fn derive_callback_sequences(
    model: &LifecycleModel,
    app: &AppModel,
    component: &ComponentDef,
) -> Result<Vec<CallbackSequence>, SequenceError> {
    Ok(
        derive_callback_sequences_with_origins(model, app, component)?
            .into_iter()
            .map(|(c, _)| c)
            .collect(),
    )
}

/// Splits an activity event sequence after its leading `createActivity` into
/// the stretches that each end back in the goal state.
pub fn lifecycle_subsequences(
    model: &LifecycleModel,
    seq: &EventSequence,
) -> Result<Vec<EventSequence>, SequenceError> {
    if seq.events.first().map(String::as_str) != Some(CREATE_ACTIVITY) {
        return Err(SequenceError::MissingCreate(seq.to_string()));
    }
    let replay = model.replay(&seq.events)?;
    let mut pieces = Vec::new();
    let mut current = Vec::new();
    for (i, event) in seq.events.iter().enumerate().skip(1) {
        current.push(event.clone());
        if replay.static_path[i + 1] == model.goal_state {
            pieces.push(EventSequence {
                events: std::mem::take(&mut current),
            });
        }
    }
    if !current.is_empty() {
        pieces.push(EventSequence { events: current });
    }
    Ok(pieces)
}

fn add_unit(units: &mut Vec<PermutationUnit>, callbacks: Vec<String>, origin: EventSequence) {
    if callbacks.is_empty() {
        return;
    }
    let cs = CallbackSequence { callbacks };
    match units.iter_mut().find(|u| u.callbacks == cs) {
        Some(u) => {
            if !u.origins.contains(&origin) {
                u.origins.push(origin)
            }
        }
        None => units.push(PermutationUnit {
            kind: UnitKind::LifecycleSubsequence,
            callbacks: cs,
            origins: vec![origin],
        }),
    }
}

/// Permutation units in a fixed order: life-cycle units first, then UI
/// callbacks and miscellaneous callbacks in declaration order.
pub fn build_permutation_units(
    model: &LifecycleModel,
    app: &AppModel,
    component: &ComponentDef,
) -> Result<Vec<PermutationUnit>, SequenceError> {
    let implemented = implemented_callbacks(app.component_class(component), model);
    let mut units = Vec::new();
    match model.component_kind {
        ComponentKind::Activity => {
            for seq in model.derive_event_sequences()? {
                let mut entered_by = Some(CREATE_ACTIVITY.to_string());
                for piece in lifecycle_subsequences(model, &seq)? {
                    let replay = model.replay_from(
                        &model.goal_state,
                        entered_by.as_deref(),
                        &piece.events,
                    )?;
                    entered_by = piece.events.last().cloned();
                    let cbs = project(
                        replay.callbacks.into_iter().map(|c| c.callback),
                        &implemented,
                    );
                    add_unit(&mut units, cbs, piece);
                }
            }
        }
        ComponentKind::Service => {
            for (cs, origins) in derive_callback_sequences_with_origins(model, app, component)? {
                units.push(PermutationUnit {
                    kind: UnitKind::LifecycleSubsequence,
                    callbacks: cs,
                    origins,
                });
            }
        }
    }
    let single = |kind, sig: &String| PermutationUnit {
        kind,
        callbacks: CallbackSequence {
            callbacks: vec![sig.clone()],
        },
        origins: Vec::new(),
    };
    units.extend(
        component
            .aui_callbacks
            .iter()
            .map(|s| single(UnitKind::AuiCallback, s)),
    );
    units.extend(
        component
            .misc_callbacks
            .iter()
            .map(|s| single(UnitKind::MiscCallback, s)),
    );
    Ok(units)
}

pub fn build_plan(
    model: &LifecycleModel,
    app: &AppModel,
    component: &ComponentDef,
    m: usize,
) -> Result<PermutationPlan, SequenceError> {
    let units = build_permutation_units(model, app, component)?;
    let (prefix, prefix_events) = match model.component_kind {
        ComponentKind::Activity => {
            let implemented = implemented_callbacks(app.component_class(component), model);
            let names = model.callbacks_for_event(CREATE_ACTIVITY)?;
            (
                project(names, &implemented),
                vec![CREATE_ACTIVITY.to_string()],
            )
        }
        ComponentKind::Service => (Vec::new(), Vec::new()),
    };
    let plan = PermutationPlan {
        m,
        units,
        prefix: CallbackSequence { callbacks: prefix },
        prefix_events,
    };
    plan.check_m()?;
    Ok(plan)
}

impl PermutationPlan {
    fn check_m(&self) -> Result<(), SequenceError> {
        let n = self.units.len();
        if self.m == 0 || self.m > n {
            return Err(SequenceError::BadM { m: self.m, n });
        }
        Ok(())
    }

    /// Number of arrangements, `n! / (n - m)!`.
    pub fn count(&self) -> u128 {
        permutation_count(self.units.len(), self.m)
    }

    pub fn flatten(&self, arrangement: &Arrangement) -> CallbackSequence {
        let mut callbacks = self.prefix.callbacks.clone();
        for &u in &arrangement.units {
            callbacks.extend(self.units[u].callbacks.callbacks.iter().cloned());
        }
        CallbackSequence { callbacks }
    }

    /// Events behind an arrangement, using each unit's first origin. UI and
    /// miscellaneous units contribute no events.
    pub fn events(&self, arrangement: &Arrangement) -> Vec<String> {
        let mut events = self.prefix_events.clone();
        for &u in &arrangement.units {
            if let Some(o) = self.units[u].origins.first() {
                events.extend(o.events.iter().cloned());
            }
        }
        events
    }
}

pub fn permutation_count(n: usize, m: usize) -> u128 {
    if m > n {
        return 0;
    }
    ((n - m + 1)..=n).map(|x| x as u128).product()
}

/// Lazily yields every arrangement of `m` distinct indices out of `0..n` in
/// lexicographic order.
#[derive(Debug, Clone)]
pub struct MWay {
    n: usize,
    current: Option<Vec<usize>>,
}

impl MWay {
    pub fn new(n: usize, m: usize) -> Result<Self, SequenceError> {
        if m == 0 || m > n {
            return Err(SequenceError::BadM { m, n });
        }
        Ok(Self {
            n,
            current: Some((0..m).collect()),
        })
    }

    fn advance(&self, cur: &[usize]) -> Option<Vec<usize>> {
        let m = cur.len();
        for i in (0..m).rev() {
            let used = &cur[..i];
            let bump = (cur[i] + 1..self.n).find(|v| !used.contains(v));
            if let Some(v) = bump {
                let mut next = cur[..i].to_vec();
                next.push(v);
                let free: Vec<usize> = (0..self.n).filter(|x| !next.contains(x)).collect();
                next.extend(free.into_iter().take(m - i - 1));
                return Some(next);
            }
        }
        None
    }
}

impl Iterator for MWay {
    type Item = Arrangement;

    fn next(&mut self) -> Option<Arrangement> {
        let cur = self.current.take()?;
        self.current = self.advance(&cur);
        Some(Arrangement { units: cur })
    }
}

/// Flattened callback sequences of a plan, in arrangement order.
pub fn generate_m_way(
    plan: &PermutationPlan,
) -> Result<impl Iterator<Item = (Arrangement, CallbackSequence)> + '_, SequenceError> {
    plan.check_m()?;
    Ok(MWay::new(plan.units.len(), plan.m)?.map(move |a| {
        let flat = plan.flatten(&a);
        (a, flat)
    }))
}
