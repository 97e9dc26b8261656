//! Totally ordered node values.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of a node in `[0, n)`.
pub type NodeId = u32;

/// A node value together with the tiebreak that makes all keys distinct.
///
/// Keys compare by raw value, then by the node the value originated at, then
/// by copy index. Copies produced by the exact protocol's duplication step get
/// copy indices below the one kept by the original holder, so every copy of a
/// key sits directly beneath it in the total order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValueKey {
    pub value: i64,
    pub origin: u32,
    pub copy: u64,
}

impl ValueKey {
    /// Reserved key ordered above every real key. Valueless nodes hold it.
    pub const INFINITY: ValueKey = ValueKey {
        value: i64::MAX,
        origin: u32::MAX,
        copy: u64::MAX,
    };

    /// Reserved key ordered below every real key.
    pub const NEG_INFINITY: ValueKey = ValueKey {
        value: i64::MIN,
        origin: 0,
        copy: 0,
    };

    pub fn new(value: i64, origin: NodeId) -> Self {
        debug_assert!(origin != u32::MAX, "origin u32::MAX is reserved");
        debug_assert!(value != i64::MIN, "i64::MIN is reserved");
        ValueKey {
            value,
            origin,
            copy: 0,
        }
    }

    /// Keys for an initial assignment: node `v` holds `values[v]`.
    pub fn initial(values: &[i64]) -> Vec<ValueKey> {
        values
            .iter()
            .enumerate()
            .map(|(v, &x)| ValueKey::new(x, v as NodeId))
            .collect()
    }

    pub fn is_infinite(&self) -> bool {
        *self == Self::INFINITY || *self == Self::NEG_INFINITY
    }

    /// The originating key with the copy index cleared. All copies of one
    /// initial key share an identity.
    pub fn identity(&self) -> ValueKey {
        if self.is_infinite() {
            return *self;
        }
        ValueKey {
            copy: 0,
            ..*self
        }
    }

    pub fn same_identity(&self, other: &ValueKey) -> bool {
        self.value == other.value && self.origin == other.origin
    }
}

impl Ord for ValueKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .cmp(&other.value)
            .then(self.origin.cmp(&other.origin))
            .then(self.copy.cmp(&other.copy))
    }
}

impl PartialOrd for ValueKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for ValueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::INFINITY {
            return write!(f, "+inf");
        }
        if *self == Self::NEG_INFINITY {
            return write!(f, "-inf");
        }
        write!(f, "{}@{}", self.value, self.origin)?;
        if self.copy != 0 {
            write!(f, "#{}", self.copy)?;
        }
        Ok(())
    }
}

impl fmt::Display for ValueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Median of three by comparisons only.
pub fn median3<T: Ord + Copy>(a: T, b: T, c: T) -> T {
    if a > b {
        if b >= c {
            b
        } else if a > c {
            c
        } else {
            a
        }
    } else if a >= c {
        a
    } else if b > c {
        c
    } else {
        b
    }
}
