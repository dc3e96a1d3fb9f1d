use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Path from the root: `"0"` is the root, children append `0` (left) or
/// `1` (right).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeKey(String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl NodeKey {
    pub fn root() -> Self {
        Self("0".into())
    }

    pub fn parse(s: &str) -> Result<Self> {
        if !s.starts_with('0') || !s.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(Error::InvalidArgument(format!("malformed node key {s:?}")));
        }
        Ok(Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn child(&self, side: Side) -> Self {
        let bit = match side {
            Side::Left => '0',
            Side::Right => '1',
        };
        Self(format!("{}{bit}", self.0))
    }

    pub fn left(&self) -> Self {
        self.child(Side::Left)
    }

    pub fn right(&self) -> Self {
        self.child(Side::Right)
    }

    pub fn parent(&self) -> Option<Self> {
        (self.0.len() > 1).then(|| Self(self.0[..self.0.len() - 1].to_string()))
    }

    /// Root has depth 0.
    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }

    /// Strict ancestors, root first.
    pub fn ancestors(&self) -> Vec<Self> {
        (1..self.0.len()).map(|n| Self(self.0[..n].to_string())).collect()
    }

    pub fn is_ancestor_of(&self, other: &Self) -> bool {
        other.0.len() > self.0.len() && other.0.starts_with(&self.0)
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for NodeKey {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<NodeKey> for String {
    fn from(k: NodeKey) -> String {
        k.0
    }
}

impl std::str::FromStr for NodeKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}
