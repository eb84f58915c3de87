use serde::{Deserialize, Serialize};

/// An action sent to an environment.
///
/// Serialized untagged: a discrete action is a bare index, a continuous one
/// an array of numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Discrete(_) => None,
            Action::Continuous(v) => Some(v),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Action::Discrete(_) => true,
            Action::Continuous(v) => v.iter().all(|x| x.is_finite()),
        }
    }
}
