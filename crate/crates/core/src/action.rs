use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Light action for one block. Non-conflicting lanes share a color and
/// conflicting lanes are never green together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionId {
    #[serde(rename = "open13")]
    OpenPair13,
    #[serde(rename = "open24")]
    OpenPair24,
    #[serde(rename = "all_red")]
    AllRed,
}

impl ActionId {
    pub const PAIRS: [ActionId; 2] = [ActionId::OpenPair13, ActionId::OpenPair24];
    pub const ALL: [ActionId; 3] = [ActionId::OpenPair13, ActionId::OpenPair24, ActionId::AllRed];

    /// Action set in tie-break order.
    pub fn actions(allow_all_red: bool) -> &'static [ActionId] {
        if allow_all_red {
            &Self::ALL
        } else {
            &Self::PAIRS
        }
    }

    /// Whether 0-based `lane` is green under this action.
    pub fn is_green(self, lane: usize) -> bool {
        match self {
            ActionId::OpenPair13 => lane % 2 == 0,
            ActionId::OpenPair24 => lane % 2 == 1,
            ActionId::AllRed => false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionId::OpenPair13 => "open13",
            ActionId::OpenPair24 => "open24",
            ActionId::AllRed => "all_red",
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open13" => Ok(ActionId::OpenPair13),
            "open24" => Ok(ActionId::OpenPair24),
            "all_red" => Ok(ActionId::AllRed),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_exclusive() {
        for a in ActionId::PAIRS {
            let greens: Vec<usize> = (0..4).filter(|&l| a.is_green(l)).collect();
            assert_eq!(greens.len(), 2);
            assert_eq!(greens[1] - greens[0], 2);
        }
        assert!((0..4).all(|l| !ActionId::AllRed.is_green(l)));
    }

    #[test]
    fn round_trips_through_text() {
        for a in ActionId::ALL {
            assert_eq!(a.as_str().parse::<ActionId>().unwrap(), a);
        }
        assert!("open12".parse::<ActionId>().is_err());
    }
}
