use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A storage location: a frame-local register or a memory cell.
///
/// Registers are qualified by call depth so that a callee's `%x` never
/// aliases the caller's `%x`. Frames at the same depth are strictly
/// sequential, and every frame defines a register before reading it, so
/// reusing a depth-qualified name is safe for dataflow purposes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Location {
    Reg { depth: u32, name: String },
    Mem { addr: u64 },
}

impl Location {
    pub fn reg(name: impl Into<String>) -> Self {
        Location::Reg {
            depth: 0,
            name: name.into(),
        }
    }

    pub fn mem(addr: u64) -> Self {
        Location::Mem { addr }
    }

    pub fn is_mem(&self) -> bool {
        matches!(self, Location::Mem { .. })
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Reg { depth: 0, name } => write!(f, "%{name}"),
            Location::Reg { depth, name } => write!(f, "%{name}@{depth}"),
            Location::Mem { addr } => write!(f, "M[{addr}]"),
        }
    }
}

impl fmt::Debug for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid location `{0}` (expected %name, %name@depth or M[addr])")]
pub struct ParseLocationError(pub String);

impl FromStr for Location {
    type Err = ParseLocationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || ParseLocationError(s.to_string());
        if let Some(rest) = s.strip_prefix('%') {
            let (name, depth) = match rest.split_once('@') {
                Some((n, d)) => (n, d.parse().map_err(|_| bad())?),
                None => (rest, 0),
            };
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(bad());
            }
            return Ok(Location::Reg {
                depth,
                name: name.to_string(),
            });
        }
        let inner = s
            .strip_prefix("M[")
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(bad)?;
        let addr = inner.trim().parse().map_err(|_| bad())?;
        Ok(Location::Mem { addr })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        for s in ["%acc", "%t1@2", "M[17]"] {
            assert_eq!(s.parse::<Location>().unwrap().to_string(), s);
        }
        assert!("x".parse::<Location>().is_err());
        assert!("M[-1]".parse::<Location>().is_err());
        assert!("%".parse::<Location>().is_err());
    }
}
