//! Ordered lists of disjoint message-index runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A run `start, start + 1, …, start + len − 1` of message indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub start: u128,
    pub len: u128,
}

/// Ordered (not necessarily sorted) list of disjoint runs. The order is the
/// identity order used for prefix splits.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalList {
    runs: Vec<Run>,
}

impl IntervalList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(start: u128, len: u128) -> Self {
        let mut list = Self::new();
        list.push(Run { start, len });
        list
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn fragment_count(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Number of indices covered.
    pub fn total_len(&self) -> u128 {
        self.runs.iter().map(|r| r.len).sum()
    }

    /// First index in list order.
    pub fn first(&self) -> Option<u128> {
        self.runs.first().map(|r| r.start)
    }

    /// Appends a run, merging it into the last one when adjacent.
    pub fn push(&mut self, run: Run) {
        if run.len == 0 {
            return;
        }
        if let Some(last) = self.runs.last_mut() {
            if last.start + last.len == run.start {
                last.len += run.len;
                return;
            }
        }
        self.runs.push(run);
    }

    /// Concatenates `other` after `self`, coalescing at the seam.
    pub fn append(&mut self, other: IntervalList) {
        for run in other.runs {
            self.push(run);
        }
    }

    /// Splits into the first `n` indices and the rest, cutting at most one run.
    pub fn split_prefix(self, n: u128) -> Result<(IntervalList, IntervalList)> {
        let total = self.total_len();
        if n > total {
            return Err(Error::Consistency(format!(
                "prefix of {n} requested from a list of {total} indices"
            )));
        }
        let mut head = IntervalList::new();
        let mut tail = IntervalList::new();
        let mut need = n;
        for run in self.runs {
            if need == 0 {
                tail.runs.push(run);
            } else if run.len <= need {
                need -= run.len;
                head.runs.push(run);
            } else {
                head.runs.push(Run {
                    start: run.start,
                    len: need,
                });
                tail.runs.push(Run {
                    start: run.start + need,
                    len: run.len - need,
                });
                need = 0;
            }
        }
        Ok((head, tail))
    }

    /// Zero-based position of `index` in list order.
    pub fn position(&self, index: u128) -> Option<u128> {
        let mut offset = 0;
        for run in &self.runs {
            if index >= run.start && index - run.start < run.len {
                return Some(offset + index - run.start);
            }
            offset += run.len;
        }
        None
    }

    /// True if no two consecutive runs are adjacent.
    pub fn is_coalesced(&self) -> bool {
        self.runs
            .windows(2)
            .all(|w| w[0].start + w[0].len != w[1].start)
    }

    /// Expands to the explicit index sequence (tests and small lists only).
    pub fn indices(&self) -> impl Iterator<Item = u128> + '_ {
        self.runs.iter().flat_map(|r| r.start..r.start + r.len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacent_runs_coalesce() {
        let mut a = IntervalList::single(1, 3);
        a.append(IntervalList::single(4, 2));
        assert_eq!(a.runs(), &[Run { start: 1, len: 5 }]);
    }

    #[test]
    fn non_adjacent_runs_stay_apart() {
        let mut a = IntervalList::single(4, 2);
        a.append(IntervalList::single(1, 3));
        assert_eq!(a.fragment_count(), 2);
        assert!(a.is_coalesced());
        assert_eq!(a.first(), Some(4));
    }

    #[test]
    fn prefix_split_cuts_one_run() {
        let mut a = IntervalList::single(10, 4);
        a.append(IntervalList::single(1, 5));
        let (head, tail) = a.split_prefix(6).unwrap();
        assert_eq!(head.indices().collect::<Vec<_>>(), vec![10, 11, 12, 13, 1, 2]);
        assert_eq!(tail.indices().collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!(head.fragment_count() + tail.fragment_count(), 3);
    }

    #[test]
    fn oversized_prefix_is_a_consistency_error() {
        let a = IntervalList::single(1, 3);
        assert!(matches!(a.split_prefix(4), Err(Error::Consistency(_))));
    }

    #[test]
    fn position_follows_list_order() {
        let mut a = IntervalList::single(10, 4);
        a.append(IntervalList::single(1, 5));
        assert_eq!(a.position(10), Some(0));
        assert_eq!(a.position(2), Some(5));
        assert_eq!(a.position(9), None);
    }

    #[test]
    fn huge_ranges() {
        let m = 1u128 << 120;
        let a = IntervalList::single(1, m);
        let (h, t) = a.split_prefix(m / 2).unwrap();
        assert_eq!(h.total_len() + t.total_len(), m);
        let mut joined = h;
        joined.append(t);
        assert_eq!(joined.runs(), &[Run { start: 1, len: m }]);
    }
}
