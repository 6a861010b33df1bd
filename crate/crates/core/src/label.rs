//! The nine-level DMRS label space.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A DMRS level in `0..=8`.
///
/// Level 0 is "no defense / neutral", 1 through 7 follow the clinical
/// hierarchy from action defenses to highly adaptive coping, and 8 is
/// "needs more information".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct DmrsLabel(u8);

/// Number of levels in the label space.
pub const NUM_LABELS: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("label {0} is outside the DMRS range 0..=8")]
pub struct LabelRangeError(pub i64);

impl DmrsLabel {
    /// Level 7, the majority class of the training distribution.
    pub const MAJORITY: DmrsLabel = DmrsLabel(7);

    pub fn new(level: i64) -> Result<Self, LabelRangeError> {
        if (0..NUM_LABELS as i64).contains(&level) {
            Ok(DmrsLabel(level as u8))
        } else {
            Err(LabelRangeError(level))
        }
    }

    /// Panics when `level > 8`; for literals in tests and fixtures.
    pub const fn of(level: u8) -> Self {
        assert!(level < NUM_LABELS as u8, "DMRS level out of range");
        DmrsLabel(level)
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_majority(self) -> bool {
        self == Self::MAJORITY
    }

    /// All nine levels in ascending order.
    pub fn all() -> impl Iterator<Item = DmrsLabel> + Clone {
        (0..NUM_LABELS as u8).map(DmrsLabel)
    }
}

impl TryFrom<i64> for DmrsLabel {
    type Error = LabelRangeError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        DmrsLabel::new(value)
    }
}

impl From<DmrsLabel> for u8 {
    fn from(label: DmrsLabel) -> u8 {
        label.0
    }
}

impl fmt::Display for DmrsLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_is_enforced() {
        assert!(DmrsLabel::new(-1).is_err());
        assert!(DmrsLabel::new(9).is_err());
        assert_eq!(DmrsLabel::new(8).unwrap().level(), 8);
        assert_eq!(DmrsLabel::all().count(), 9);
    }

    #[test]
    fn serde_uses_plain_integers() {
        let l: DmrsLabel = serde_json::from_str("6").unwrap();
        assert_eq!(l, DmrsLabel::of(6));
        assert_eq!(serde_json::to_string(&l).unwrap(), "6");
        assert!(serde_json::from_str::<DmrsLabel>("12").is_err());
    }
}
