use std::fmt;
use std::hash::Hasher;

use fnv::FnvHasher;

/// Salted 64-bit identifier hash (FNV-1a). Stable across runs and platforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IdHash(pub u64);

impl fmt::Display for IdHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl IdHash {
    pub fn parse(s: &str) -> Option<Self> {
        u64::from_str_radix(s, 16).ok().map(IdHash)
    }
}

pub fn hash_id(salt: u64, raw: &[u8]) -> IdHash {
    let mut h = FnvHasher::default();
    h.write(&salt.to_le_bytes());
    h.write(raw);
    IdHash(h.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn salt_changes_hash() {
        let a = hash_id(1, b"02:00:00:aa:bb:cc");
        let b = hash_id(2, b"02:00:00:aa:bb:cc");
        assert_ne!(a, b);
        assert_eq!(a, hash_id(1, b"02:00:00:aa:bb:cc"));
    }

    #[test]
    fn display_round_trips() {
        let h = hash_id(7, b"cell-310-260-1234");
        assert_eq!(IdHash::parse(&h.to_string()), Some(h));
    }
}
