//! Location labels and their anatomical ordering.

use std::fmt;
use std::str::FromStr;

/// Location names by index; index `i + 1` names entry `i`.
pub const LOCATION_NAMES: [&str; 10] = [
    "Esophagus",
    "Cardia",
    "Angularis",
    "Pylorus",
    "Duodenum",
    "Jejunum",
    "Ileum",
    "Colon",
    "Rectum",
    "Anus",
];

pub const OTHER_NAME: &str = "Other";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("location index {0} outside 1..=10")]
    Index(u32),
    #[error("unknown label {0:?}")]
    Name(String),
}

/// One of the ten anatomical locations, identified by its index 1..=10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location(u8);

impl Location {
    pub fn new(index: u32) -> Result<Self, LabelError> {
        if (1..=LOCATION_NAMES.len() as u32).contains(&index) {
            Ok(Location(index as u8))
        } else {
            Err(LabelError::Index(index))
        }
    }

    pub fn index(self) -> u32 {
        u32::from(self.0)
    }

    pub fn name(self) -> &'static str {
        LOCATION_NAMES[usize::from(self.0) - 1]
    }

    pub fn all() -> impl Iterator<Item = Location> {
        (1..=LOCATION_NAMES.len() as u8).map(Location)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A prediction or ground-truth label: a location or the open-set sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Location(Location),
    Other,
}

impl Label {
    /// Index 0 encodes [`Label::Other`] (also "unlabeled" in exchange files).
    pub fn from_index(index: u32) -> Result<Self, LabelError> {
        if index == 0 {
            Ok(Label::Other)
        } else {
            Location::new(index).map(Label::Location)
        }
    }

    pub fn index(self) -> u32 {
        match self {
            Label::Location(l) => l.index(),
            Label::Other => 0,
        }
    }

    pub fn location(self) -> Option<Location> {
        match self {
            Label::Location(l) => Some(l),
            Label::Other => None,
        }
    }

    pub fn is_other(self) -> bool {
        matches!(self, Label::Other)
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Location(l) => l.name(),
            Label::Other => OTHER_NAME,
        }
    }

    /// The ten locations in index order followed by `Other`.
    pub fn all() -> Vec<Label> {
        Location::all()
            .map(Label::Location)
            .chain(std::iter::once(Label::Other))
            .collect()
    }
}

impl From<Location> for Label {
    fn from(l: Location) -> Self {
        Label::Location(l)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts a name (case-insensitive) or a numeric index.
impl FromStr for Label {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(i) = s.parse::<u32>() {
            return Label::from_index(i);
        }
        if s.eq_ignore_ascii_case(OTHER_NAME) {
            return Ok(Label::Other);
        }
        Location::all()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .map(Label::Location)
            .ok_or_else(|| LabelError::Name(s.to_string()))
    }
}

/// Ordered traversal of locations. Valid label sequences never go backwards
/// in this order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnatomicalCatalog {
    order: Vec<Location>,
}

impl Default for AnatomicalCatalog {
    fn default() -> Self {
        Self {
            order: Location::all().collect(),
        }
    }
}

impl AnatomicalCatalog {
    /// A catalog over `order`, which must be strictly increasing in index.
    pub fn new(order: Vec<Location>) -> Option<Self> {
        order
            .windows(2)
            .all(|w| w[0].index() < w[1].index())
            .then_some(Self { order })
    }

    pub fn locations(&self) -> &[Location] {
        &self.order
    }

    /// Position of `location` in the traversal, if it is part of the catalog.
    pub fn rank(&self, location: Location) -> Option<usize> {
        self.order.iter().position(|&l| l == location)
    }
}
