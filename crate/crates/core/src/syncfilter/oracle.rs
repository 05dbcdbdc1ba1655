//! Exhaustive reference matcher for small inputs. Used to validate the
//! streaming filter; not meant for production traffic.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::SyncError;
use crate::model::Timestamp;

pub const MAX_ORACLE_MESSAGES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleTuple {
    /// Index into each stream's stamp list.
    pub members: Vec<usize>,
    pub pivot: Timestamp,
    pub spread_ns: u64,
}

#[derive(Debug, Clone, Default)]
struct Solution {
    tuples: Vec<OracleTuple>,
    total_spread: u128,
}

impl Solution {
    fn better_than(&self, other: &Solution) -> bool {
        let by_count = other.tuples.len().cmp(&self.tuples.len());
        let ord = by_count.then(self.total_spread.cmp(&other.total_spread)).then_with(|| {
            let a = self.tuples.iter().map(|t| t.pivot);
            let b = other.tuples.iter().map(|t| t.pivot);
            a.cmp(b)
        });
        ord == Ordering::Less
    }
}

/// Best set of tuples over complete stream contents: one stamp per stream,
/// spread within `slop_ns`, and every member of a tuple stamped strictly
/// after the previous tuple's pivot. Maximizes the tuple count, then
/// minimizes the summed spread, then prefers the lexicographically earliest
/// pivot sequence.
pub fn brute_force_match(streams: &[Vec<Timestamp>], slop_ns: u64) -> Result<Vec<OracleTuple>, SyncError> {
    let total: usize = streams.iter().map(Vec::len).sum();
    if total > MAX_ORACLE_MESSAGES {
        return Err(SyncError::TooLarge(total, MAX_ORACLE_MESSAGES));
    }
    if streams.is_empty() {
        return Ok(Vec::new());
    }
    let mut memo = HashMap::new();
    Ok(search(streams, slop_ns as u128, None, &mut memo).tuples)
}

fn search(
    streams: &[Vec<Timestamp>],
    slop: u128,
    after: Option<Timestamp>,
    memo: &mut HashMap<Option<Timestamp>, Solution>,
) -> Solution {
    if let Some(s) = memo.get(&after) {
        return s.clone();
    }
    let eligible: Vec<Vec<usize>> = streams
        .iter()
        .map(|s| (0..s.len()).filter(|&i| after.is_none_or(|a| s[i] > a)).collect())
        .collect();
    let mut best = Solution::default();
    if eligible.iter().all(|e| !e.is_empty()) {
        let mut choice = vec![0usize; streams.len()];
        loop {
            let members: Vec<usize> = choice.iter().zip(&eligible).map(|(&c, e)| e[c]).collect();
            let stamps = members.iter().zip(streams).map(|(&i, s)| s[i]);
            let pivot = stamps.clone().max().expect("at least one stream");
            let first = stamps.min().expect("at least one stream");
            let spread = pivot.total_nanos() - first.total_nanos();
            if spread <= slop {
                let rest = search(streams, slop, Some(pivot), memo);
                let mut tuples = Vec::with_capacity(rest.tuples.len() + 1);
                tuples.push(OracleTuple {
                    members,
                    pivot,
                    spread_ns: spread as u64,
                });
                tuples.extend(rest.tuples);
                let candidate = Solution {
                    tuples,
                    total_spread: rest.total_spread + spread,
                };
                if candidate.better_than(&best) {
                    best = candidate;
                }
            }
            // odometer over the cartesian product
            let mut k = 0;
            loop {
                if k == choice.len() {
                    memo.insert(after, best.clone());
                    return best;
                }
                choice[k] += 1;
                if choice[k] < eligible[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
        }
    }
    memo.insert(after, best.clone());
    best
}
