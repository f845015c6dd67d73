//! User sets as bitmasks over `1..=K`.
//!
//! All collections of user sets in this crate are kept in canonical order:
//! by cardinality first, then lexicographically on the sorted member list.
//! `{1} < {2} < {3} < {1,2} < {1,3} < {2,3} < {1,2,3}`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest supported user count.
pub const MAX_USERS: usize = 16;

/// A subset of the users `{1, ..., K}`. Bit `k - 1` is set iff user `k` belongs to the set.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct UserSet(u32);

impl UserSet {
    pub const EMPTY: UserSet = UserSet(0);

    pub fn from_bits(bits: u32) -> Self {
        UserSet(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    /// The full set `{1, ..., users}`.
    pub fn full(users: usize) -> Self {
        debug_assert!(users <= MAX_USERS);
        if users == 0 {
            UserSet(0)
        } else {
            UserSet((1u32 << users) - 1)
        }
    }

    /// `{user}` with 1-based user index.
    pub fn singleton(user: usize) -> Self {
        debug_assert!((1..=MAX_USERS).contains(&user));
        UserSet(1 << (user - 1))
    }

    /// Builds a set from 1-based user indices.
    pub fn from_users<I: IntoIterator<Item = usize>>(users: I) -> Self {
        users.into_iter().fold(UserSet(0), |acc, k| acc.with(k))
    }

    pub fn with(self, user: usize) -> Self {
        UserSet(self.0 | Self::singleton(user).0)
    }

    pub fn contains(self, user: usize) -> bool {
        user >= 1 && user <= MAX_USERS && self.0 & (1 << (user - 1)) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: UserSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: UserSet) -> Self {
        UserSet(self.0 | other.0)
    }

    /// Largest member, or 0 for the empty set.
    pub fn max_user(self) -> usize {
        32 - self.0.leading_zeros() as usize
    }

    /// Members in increasing order (1-based).
    pub fn users(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (1..=MAX_USERS).filter(move |&k| bits & (1 << (k - 1)) != 0)
    }

    /// Every superset of `self` inside `{1, ..., users}`, in canonical order.
    pub fn supersets(self, users: usize) -> Vec<UserSet> {
        let full = Self::full(users).0;
        let free = full & !self.0;
        let mut out = Vec::with_capacity(1 << free.count_ones());
        // Enumerate submasks of `free`.
        let mut sub = free;
        loop {
            out.push(UserSet(self.0 | sub));
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & free;
        }
        out.sort();
        out
    }

    /// Every nonempty subset of `{1, ..., users}`, in canonical order.
    pub fn all_nonempty(users: usize) -> Vec<UserSet> {
        let mut out: Vec<UserSet> = (1..=Self::full(users).0).map(UserSet).collect();
        out.sort();
        out
    }

    /// Compact label used in file formats: `"1,2,3"`.
    pub fn label(self) -> String {
        self.users().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl Ord for UserSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.users().cmp(other.users()))
    }
}

impl PartialOrd for UserSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.label())
    }
}

impl fmt::Display for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.label())
    }
}

impl Serialize for UserSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.users())
    }
}

impl<'de> Deserialize<'de> for UserSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let users = Vec::<usize>::deserialize(deserializer)?;
        if let Some(&bad) = users.iter().find(|&&k| k == 0 || k > MAX_USERS) {
            return Err(serde::de::Error::custom(format!(
                "user index {bad} outside 1..={MAX_USERS}"
            )));
        }
        Ok(UserSet::from_users(users))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_for_three_users() {
        let all = UserSet::all_nonempty(3);
        let labels: Vec<String> = all.iter().map(|s| s.label()).collect();
        assert_eq!(labels, ["1", "2", "3", "1,2", "1,3", "2,3", "1,2,3"]);
    }

    #[test]
    fn supersets_count_and_order() {
        let s = UserSet::singleton(1);
        let sup = s.supersets(3);
        assert_eq!(sup.len(), 4);
        assert_eq!(
            sup,
            vec![
                UserSet::from_users([1]),
                UserSet::from_users([1, 2]),
                UserSet::from_users([1, 3]),
                UserSet::from_users([1, 2, 3]),
            ]
        );
        assert_eq!(UserSet::full(3).supersets(3), vec![UserSet::full(3)]);
    }

    #[test]
    fn membership_and_subsets() {
        let s = UserSet::from_users([2, 4]);
        assert!(s.contains(2) && s.contains(4) && !s.contains(1) && !s.contains(0));
        assert_eq!(s.len(), 2);
        assert_eq!(s.max_user(), 4);
        assert!(s.is_subset_of(UserSet::full(4)));
        assert!(!UserSet::full(4).is_subset_of(s));
    }

    #[test]
    fn serde_as_member_list() {
        let s = UserSet::from_users([1, 3]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[1,3]");
        let back: UserSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<UserSet>("[0]").is_err());
    }
}
