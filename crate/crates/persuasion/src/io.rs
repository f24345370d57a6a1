//! JSON input/output for environments and protocols.
//!
//! The document format uses 1-based state labels as object keys and signal
//! names from the `signals` list:
//!
//! ```json
//! {
//!   "prior": 0.5,
//!   "signals": ["h", "l"],
//!   "pi_H": {"h": 0.7, "l": 0.3},
//!   "pi_L": {"h": 0.3, "l": 0.7},
//!   "m": 3,
//!   "transition": {
//!     "1": {"h": {"1": 1.0}, "l": {"1": 1.0}},
//!     "2": {"h": {"3": 1.0}, "l": {"1": 1.0}},
//!     "3": {"h": {"3": 1.0}, "l": {"3": 1.0}}
//!   },
//!   "initial": {"2": 1.0},
//!   "action": {"3": 1.0}
//! }
//! ```
//!
//! Omitted transition targets, initial states, and action states mean
//! probability zero. Omitted rows therefore fail the row-sum check, which
//! is reported with coordinates rather than raised as a parse error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate, Environment, ModelError, Protocol, SignalModel, ValidationReport};

/// The on-disk protocol document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolDocument {
    /// Prior probability of the high state of nature.
    pub prior: f64,
    /// Signal names, in order.
    pub signals: Vec<String>,
    /// Signal distribution under the high state.
    #[serde(rename = "pi_H")]
    pub pi_h: BTreeMap<String, f64>,
    /// Signal distribution under the low state.
    #[serde(rename = "pi_L")]
    pub pi_l: BTreeMap<String, f64>,
    /// Number of memory states (labeled "1" through "m").
    pub m: usize,
    /// `transition[state][signal][target] = probability`.
    #[serde(default)]
    pub transition: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
    /// Initial distribution over states.
    #[serde(default)]
    pub initial: BTreeMap<String, f64>,
    /// Probability of the high action per state.
    #[serde(default)]
    pub action: BTreeMap<String, f64>,
}

/// Errors turning a document into validated domain values.
#[derive(Debug, Error)]
pub enum InputError {
    /// The text is not valid JSON for the document schema.
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    /// The environment part is unusable (bad prior or signal model).
    #[error("invalid environment: {0}")]
    Model(#[from] ModelError),
    /// A key does not name a known state or signal.
    #[error("unknown key: {0}")]
    BadKey(String),
    /// The protocol violates stochasticity or range constraints.
    #[error("invalid protocol:\n{0}")]
    Invalid(ValidationReport),
}

impl InputError {
    /// The validation report, when the failure was a protocol violation.
    pub fn report(&self) -> Option<&ValidationReport> {
        match self {
            InputError::Invalid(r) => Some(r),
            _ => None,
        }
    }
}

/// Parses the JSON text of a protocol document.
pub fn parse_document(text: &str) -> Result<ProtocolDocument, serde_json::Error> {
    serde_json::from_str(text)
}

fn state_key(key: &str, m: usize) -> Result<usize, InputError> {
    let label: usize = key
        .parse()
        .map_err(|_| InputError::BadKey(format!("state key {key:?} is not an integer")))?;
    if label == 0 || label > m {
        return Err(InputError::BadKey(format!(
            "state key {label} outside 1..={m}"
        )));
    }
    Ok(label - 1)
}

/// Builds the validated environment and protocol from a document.
pub fn build(doc: &ProtocolDocument) -> Result<(Environment, Protocol), InputError> {
    let signal_index: BTreeMap<&str, usize> = doc
        .signals
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let lookup_signal = |name: &str| -> Result<usize, InputError> {
        signal_index
            .get(name)
            .copied()
            .ok_or_else(|| InputError::BadKey(format!("unknown signal {name:?}")))
    };
    let pick = |table: &BTreeMap<String, f64>| -> Result<Vec<f64>, InputError> {
        for key in table.keys() {
            lookup_signal(key)?;
        }
        Ok(doc
            .signals
            .iter()
            .map(|s| table.get(s).copied().unwrap_or(0.0))
            .collect())
    };
    let pi_h = pick(&doc.pi_h)?;
    let pi_l = pick(&doc.pi_l)?;
    let sm = SignalModel::new(doc.signals.clone(), pi_h, pi_l)?;
    let env = Environment::new(doc.prior, sm)?;

    let mut proto = Protocol::zeroed(doc.m, doc.signals.len());
    for (skey, row) in &doc.transition {
        let i = state_key(skey, doc.m)?;
        for (signal, targets) in row {
            let s = lookup_signal(signal)?;
            for (tkey, &p) in targets {
                let j = state_key(tkey, doc.m)?;
                proto.transition_mut(i, s)[j] = p;
            }
        }
    }
    let mut g = vec![0.0; doc.m];
    for (skey, &p) in &doc.initial {
        g[state_key(skey, doc.m)?] = p;
    }
    proto.set_initial(g);
    for (skey, &a) in &doc.action {
        let i = state_key(skey, doc.m)?;
        proto.set_action(i, a);
    }

    let report = validate(&env, &proto);
    if !report.is_ok() {
        return Err(InputError::Invalid(report));
    }
    Ok((env, proto))
}

/// Serializes an environment and protocol back into the document format,
/// dropping structural zeros.
pub fn document_from(env: &Environment, proto: &Protocol) -> ProtocolDocument {
    let sm = env.signal_model();
    let names = sm.signals();
    let dist = |theta| -> BTreeMap<String, f64> {
        names
            .iter()
            .enumerate()
            .map(|(s, n)| (n.clone(), sm.pi(theta, s)))
            .collect()
    };
    let mut transition = BTreeMap::new();
    for i in 0..proto.m() {
        let mut per_signal = BTreeMap::new();
        for (s, name) in names.iter().enumerate() {
            let mut targets = BTreeMap::new();
            for (j, &p) in proto.transition(i, s).iter().enumerate() {
                if p > 0.0 {
                    targets.insert((j + 1).to_string(), p);
                }
            }
            per_signal.insert(name.clone(), targets);
        }
        transition.insert((i + 1).to_string(), per_signal);
    }
    let initial = proto
        .initial()
        .iter()
        .enumerate()
        .filter(|&(_, &g)| g > 0.0)
        .map(|(i, &g)| ((i + 1).to_string(), g))
        .collect();
    let action = (0..proto.m())
        .filter(|&i| proto.action(i) > 0.0)
        .map(|i| ((i + 1).to_string(), proto.action(i)))
        .collect();
    ProtocolDocument {
        prior: env.prior(),
        signals: names.to_vec(),
        pi_h: dist(crate::model::Theta::H),
        pi_l: dist(crate::model::Theta::L),
        m: proto.m(),
        transition,
        initial,
        action,
    }
}
