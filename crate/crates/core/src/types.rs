//! Identifiers and the simulation clock shared across modules.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! name_id {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(name: impl Into<String>) -> Result<Self> {
                let name = name.into();
                if name.is_empty() {
                    return Err(Error::usage(concat!($what, " must be non-empty")));
                }
                Ok(Self(name))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;

            fn try_from(value: String) -> Result<Self> {
                Self::new(value)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = Error;

            fn try_from(value: &str) -> Result<Self> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

name_id!(
    /// Name of a feature column.
    FeatureId,
    "feature id"
);
name_id!(
    /// Name of a prediction objective (CTR, CVR, ...).
    TaskId,
    "task id"
);

/// Seed for every randomized procedure in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl From<u64> for Seed {
    fn from(value: u64) -> Self {
        Seed(value)
    }
}

/// Milliseconds since the start of a simulation. Never moves backwards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn at(now: u64) -> Self {
        Self { now }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn advance(&mut self, ms: u64) {
        self.now = self.now.saturating_add(ms);
    }

    /// Moves the clock to `t`. Moving backwards is a usage error.
    pub fn advance_to(&mut self, t: u64) -> Result<()> {
        if t < self.now {
            return Err(Error::usage(format!(
                "clock cannot move backwards from {} to {}",
                self.now, t
            )));
        }
        self.now = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ids_rejected() {
        assert!(FeatureId::new("").unwrap_err().is_usage());
        assert!(TaskId::new("").is_err());
        assert!(serde_json::from_str::<FeatureId>("\"\"").is_err());
        assert_eq!(FeatureId::new("age").unwrap().as_str(), "age");
    }

    #[test]
    fn clock_is_monotonic() {
        let mut clock = VirtualClock::at(10);
        clock.advance(5);
        assert_eq!(clock.now(), 15);
        assert!(clock.advance_to(14).is_err());
        clock.advance_to(15).unwrap();
        clock.advance_to(20).unwrap();
        assert_eq!(clock.now(), 20);
    }
}
