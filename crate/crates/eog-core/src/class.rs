use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The ten eye-movement classes.
///
/// The discriminant order is the canonical class index used throughout the
/// crate (datasets, confusion matrices, network outputs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EyeClass {
    Stare,
    Blink,
    Up,
    Down,
    Left,
    Right,
    UpLeft,
    UpRight,
    DownLeft,
    DownRight,
}

impl EyeClass {
    pub const ALL: [EyeClass; 10] = [
        EyeClass::Stare,
        EyeClass::Blink,
        EyeClass::Up,
        EyeClass::Down,
        EyeClass::Left,
        EyeClass::Right,
        EyeClass::UpLeft,
        EyeClass::UpRight,
        EyeClass::DownLeft,
        EyeClass::DownRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<EyeClass> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EyeClass::Stare => "Stare",
            EyeClass::Blink => "Blink",
            EyeClass::Up => "Up",
            EyeClass::Down => "Down",
            EyeClass::Left => "Left",
            EyeClass::Right => "Right",
            EyeClass::UpLeft => "UpLeft",
            EyeClass::UpRight => "UpRight",
            EyeClass::DownLeft => "DownLeft",
            EyeClass::DownRight => "DownRight",
        }
    }

    /// Class names in index order, as used for dataset headers.
    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }

    /// Sign of the deflection on (horizontal, vertical) channels.
    ///
    /// Blink shares the vertical sign of Up; it differs in width and height.
    pub fn deflection(self) -> (i8, i8) {
        match self {
            EyeClass::Stare => (0, 0),
            EyeClass::Blink | EyeClass::Up => (0, 1),
            EyeClass::Down => (0, -1),
            EyeClass::Left => (-1, 0),
            EyeClass::Right => (1, 0),
            EyeClass::UpLeft => (-1, 1),
            EyeClass::UpRight => (1, 1),
            EyeClass::DownLeft => (-1, -1),
            EyeClass::DownRight => (1, -1),
        }
    }
}

impl fmt::Display for EyeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EyeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        EyeClass::ALL
            .iter()
            .copied()
            .find(|c| c.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}
