//! Warnings with their deduplication. Also the SMS detectors and report
//! rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taint_engine::{Entry, TagKind};

/// An instruction in app code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub class: String,
    pub method: String,
    pub index: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}@{}", self.class, self.method, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WarningKind {
    InfoLeak,
    SmsHardcoded,
    SmsAutoreply,
}

impl fmt::Display for WarningKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarningKind::InfoLeak => "INFO_LEAK",
            WarningKind::SmsHardcoded => "SMS_HARDCODED",
            WarningKind::SmsAutoreply => "SMS_AUTOREPLY",
        })
    }
}

/// Which callback sequence produced a warning.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SequenceDescriptor {
    /// Permutation width at which the warning fired.
    pub m: usize,
    /// Permutation unit indices of the arrangement.
    pub units: Vec<usize>,
    /// Callbacks invoked up to and including the one holding the sink.
    pub callbacks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Warning {
    pub kind: WarningKind,
    pub source_apis: BTreeSet<String>,
    pub sink_api: String,
    /// Source locations and the sink location, sorted.
    pub locations: BTreeSet<Location>,
    pub component: String,
    pub sequence: SequenceDescriptor,
}

/// One warning per `(kind, source set, sink)`, with warnings whose source
/// set is strictly contained in another's for the same kind and sink
/// dropped. The result does not depend on input order.
pub fn dedup_warnings(raw: Vec<Warning>) -> Vec<Warning> {
    let mut groups: BTreeMap<(WarningKind, String, BTreeSet<String>), Warning> = BTreeMap::new();
    for w in raw {
        let key = (w.kind, w.sink_api.clone(), w.source_apis.clone());
        match groups.get_mut(&key) {
            Some(kept) => {
                kept.locations.extend(w.locations);
                if (&w.sequence, &w.component) < (&kept.sequence, &kept.component) {
                    kept.sequence = w.sequence;
                    kept.component = w.component;
                }
            }
            None => {
                groups.insert(key, w);
            }
        }
    }
    let keys: Vec<_> = groups.keys().cloned().collect();
    groups
        .into_iter()
        .filter(|((kind, sink, sources), _)| {
            !keys.iter().any(|(k, s, other)| {
                k == kind && s == sink && other.len() > sources.len() && sources.is_subset(other)
            })
        })
        .map(|(_, w)| w)
        .collect()
}

/// Classifies an SMS-send call by its recipient. A literal from app code
/// means a hard-coded number; taint from an originating-address API means an
/// automatic reply.
pub fn detect_sms_attack(
    sink_api: &str,
    recipient: &Entry,
    sink_location: Location,
    component: &str,
    sequence: SequenceDescriptor,
) -> Option<Warning> {
    let details = recipient.details.borrow();
    let replies: Vec<_> = details
        .taints
        .iter()
        .filter(|t| t.kind == TagKind::OriginatingAddress)
        .collect();
    let (kind, source_apis, mut locations) = if !replies.is_empty() {
        (
            WarningKind::SmsAutoreply,
            replies.iter().map(|t| t.source_api.clone()).collect(),
            replies.iter().map(|t| t.location.clone()).collect(),
        )
    } else if details.const_value.as_ref().is_some_and(|c| c.from_app) {
        (WarningKind::SmsHardcoded, BTreeSet::new(), BTreeSet::new())
    } else {
        return None;
    };
    locations.insert(sink_location);
    Some(Warning {
        kind,
        source_apis,
        sink_api: sink_api.to_string(),
        locations,
        component: component.to_string(),
        sequence,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub sequences_analyzed: u64,
    /// Largest permutation width analysed.
    pub m_reached: usize,
    pub finished: bool,
    pub killed: bool,
    /// Wall-clock time; left out of JSON so reports are reproducible.
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub app_id: String,
    pub warnings: Vec<Warning>,
    pub stats: Stats,
    /// Set when the app could not be loaded or analysed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Error)]
#[error("unknown report format {0:?} (expected json or table)")]
pub struct UnknownFormat(pub String);

impl FromStr for Format {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "table" => Ok(Format::Table),
            other => Err(UnknownFormat(other.to_string())),
        }
    }
}

pub fn render_report(report: &Report, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serialises");
            s.push('\n');
            s
        }
        Format::Table => render_table(report),
    }
}

fn render_table(report: &Report) -> String {
    let st = &report.stats;
    let mut out = format!(
        "app {}: {} warning(s), {} sequence(s), m={}, {}\n",
        report.app_id,
        report.warnings.len(),
        st.sequences_analyzed,
        st.m_reached,
        if st.killed {
            "killed"
        } else if st.finished {
            "finished"
        } else {
            "failed"
        },
    );
    if let Some(e) = &report.error {
        out.push_str(&format!("  error: {e}\n"));
    }
    let rows: Vec<[String; 5]> = report
        .warnings
        .iter()
        .map(|w| {
            [
                w.kind.to_string(),
                w.source_apis.iter().cloned().collect::<Vec<_>>().join(","),
                w.sink_api.clone(),
                w.sequence.m.to_string(),
                w.sequence.callbacks.join(" "),
            ]
        })
        .collect();
    if rows.is_empty() {
        return out;
    }
    let header = ["KIND", "SOURCES", "SINK", "M", "CALLBACKS"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    for r in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> = r
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str("  ");
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
