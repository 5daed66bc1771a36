//! Next-hop selection from per-neighbor flow statistics.
//!
//! Every algorithm minimises a score over the neighbors of the deciding node:
//!
//! | algorithm | score                               |
//! |-----------|-------------------------------------|
//! | ST        | `(T_P / N_P) / ΔT`                  |
//! | STD       | `(T_P / N_P) / ΔT · k`              |
//! | CD        | `C · k`                             |
//! | CDT       | `(T_P / N_P) / ΔT · C · k`          |
//!
//! where the time element of CDT is taken as 1 while `N_P = 0`. Selection
//! compares scores as exact rationals so that ties are detected exactly and
//! broken uniformly with the caller's RNG.
//!
//! RNG convention: a uniform pick among `s` items consumes one
//! `gen_range(0..s)` draw when `s > 1` and nothing when `s == 1`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NetworkTopology;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoutingError {
    #[error("node {node} has no neighbors")]
    NoNeighbors { node: usize },
    #[error("stats table for node {node} has {found} entries, expected {expected}")]
    StatsMismatch {
        node: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown algorithm {0:?} (expected rw, st, std, cd or cdt)")]
    UnknownAlgorithm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[serde(rename = "rw")]
    RandomWalk,
    St,
    Std,
    Cd,
    Cdt,
}

/// Which per-edge statistic marks an edge as learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearningSource {
    /// First successful transmission (`C` leaves 0).
    Send,
    /// First delivery credit (`N_P` leaves 0).
    Delivery,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::RandomWalk,
        Algorithm::St,
        Algorithm::Std,
        Algorithm::Cd,
        Algorithm::Cdt,
    ];

    /// Short lowercase name, as used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::RandomWalk => "rw",
            Algorithm::St => "st",
            Algorithm::Std => "std",
            Algorithm::Cd => "cd",
            Algorithm::Cdt => "cdt",
        }
    }

    /// STD and CDT never route through degree-1 neighbors unless the packet
    /// is addressed to them.
    pub fn excludes_leaves(self) -> bool {
        matches!(self, Algorithm::Std | Algorithm::Cdt)
    }

    /// ST and STD fall back to a random walk while any neighbor score is 0.
    pub fn uses_bootstrap(self) -> bool {
        matches!(self, Algorithm::St | Algorithm::Std)
    }

    pub fn learning_source(self) -> LearningSource {
        match self {
            Algorithm::St | Algorithm::Std => LearningSource::Delivery,
            Algorithm::RandomWalk | Algorithm::Cd | Algorithm::Cdt => LearningSource::Send,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = RoutingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rw" | "random_walk" | "random-walk" => Ok(Algorithm::RandomWalk),
            "st" => Ok(Algorithm::St),
            "std" => Ok(Algorithm::Std),
            "cd" => Ok(Algorithm::Cd),
            "cdt" => Ok(Algorithm::Cdt),
            _ => Err(RoutingError::UnknownAlgorithm(s.to_string())),
        }
    }
}

/// Statistics node `k` keeps about the directed edge `k -> i`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeStats {
    /// Link load: packets successfully sent down the edge.
    pub c: u64,
    /// Delivered packets that traversed the edge.
    pub n_p: u64,
    /// Summed delivery times of those packets.
    pub t_p: u64,
    /// Time step of the most recent successful transmission.
    pub last_tx: u64,
    pub learned: bool,
}

/// Steps since the edge last transmitted, clamped to at least 1.
#[inline]
pub fn delta_t(stats: &EdgeStats, now: u64) -> u64 {
    now.saturating_sub(stats.last_tx).max(1)
}

pub fn score_st(stats: &EdgeStats, now: u64) -> f64 {
    if stats.n_p == 0 {
        return 0.0;
    }
    (stats.t_p as f64 / stats.n_p as f64) * (1.0 / delta_t(stats, now) as f64)
}

pub fn score_std(stats: &EdgeStats, now: u64, k: usize) -> f64 {
    score_st(stats, now) * k as f64
}

pub fn score_cd(stats: &EdgeStats, k: usize) -> f64 {
    stats.c as f64 * k as f64
}

pub fn score_cdt(stats: &EdgeStats, now: u64, k: usize) -> f64 {
    let time_element = if stats.n_p == 0 {
        1.0
    } else {
        score_st(stats, now)
    };
    time_element * stats.c as f64 * k as f64
}

/// Score as an exact nonnegative rational `num / den`.
#[derive(Debug, Clone, Copy)]
pub struct Score {
    num: u128,
    den: u128,
}

impl Score {
    pub const ZERO: Score = Score { num: 0, den: 1 };

    fn new(num: u128, den: u128) -> Self {
        debug_assert!(den > 0);
        Score { num, den }
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Exact score of `algorithm` for an edge to a neighbor of degree `k`.
    /// The random walk has no score and always yields zero.
    pub fn of(algorithm: Algorithm, stats: &EdgeStats, now: u64, k: usize) -> Score {
        let k = k as u128;
        // Mean delivery time over ΔT: t_p / (n_p · Δt).
        let time_element = || {
            Score::new(
                stats.t_p as u128,
                stats.n_p as u128 * delta_t(stats, now) as u128,
            )
        };
        match algorithm {
            Algorithm::RandomWalk => Score::ZERO,
            Algorithm::St if stats.n_p == 0 => Score::ZERO,
            Algorithm::St => time_element(),
            Algorithm::Std if stats.n_p == 0 => Score::ZERO,
            Algorithm::Std => {
                let t = time_element();
                Score::new(t.num * k, t.den)
            }
            Algorithm::Cd => Score::new(stats.c as u128 * k, 1),
            Algorithm::Cdt if stats.n_p == 0 => Score::new(stats.c as u128 * k, 1),
            Algorithm::Cdt => {
                let t = time_element();
                Score::new(t.num * stats.c as u128 * k, t.den)
            }
        }
    }
}

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

/// Algorithm plus the switch for the ST/STD random-walk start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingPolicy {
    pub algorithm: Algorithm,
    /// Only meaningful for ST and STD; disabling it is an ablation.
    pub bootstrap: bool,
}

impl RoutingPolicy {
    pub fn new(algorithm: Algorithm) -> Self {
        RoutingPolicy {
            algorithm,
            bootstrap: true,
        }
    }

    pub fn without_bootstrap(algorithm: Algorithm) -> Self {
        RoutingPolicy {
            algorithm,
            bootstrap: false,
        }
    }
}

/// A chosen hop: position in the node's neighbor list and the neighbor id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub slot: usize,
    pub neighbor: usize,
}

/// Uniform index in `0..len` under the module's draw convention.
#[inline]
pub fn uniform_index<R: Rng + ?Sized>(rng: &mut R, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        0
    } else {
        rng.gen_range(0..len)
    }
}

/// Picks uniformly among the positions holding the minimum of `scores`.
/// Returns `None` for an empty slice.
pub fn argmin_uniform<T: Ord, R: Rng + ?Sized>(scores: &[T], rng: &mut R) -> Option<usize> {
    let min = scores.iter().min()?;
    let ties = scores.iter().filter(|s| *s == min).count();
    let pick = uniform_index(rng, ties);
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| *s == min)
        .nth(pick)
        .map(|(i, _)| i)
}

/// Chooses the neighbor that `node` forwards a packet for `destination` to.
///
/// `stats` must be aligned with `topology.neighbors_of(node)`.
pub fn select_next_hop<R: Rng + ?Sized>(
    node: usize,
    destination: usize,
    topology: &NetworkTopology,
    stats: &[EdgeStats],
    policy: RoutingPolicy,
    now: u64,
    rng: &mut R,
) -> Result<Hop, RoutingError> {
    let neighbors = topology.neighbors_of(node);
    if neighbors.is_empty() {
        return Err(RoutingError::NoNeighbors { node });
    }
    if stats.len() != neighbors.len() {
        return Err(RoutingError::StatsMismatch {
            node,
            expected: neighbors.len(),
            found: stats.len(),
        });
    }
    if let Ok(slot) = neighbors.binary_search(&destination) {
        return Ok(Hop {
            slot,
            neighbor: destination,
        });
    }

    let algorithm = policy.algorithm;
    let hop = |slot: usize| Hop {
        slot,
        neighbor: neighbors[slot],
    };

    if algorithm == Algorithm::RandomWalk {
        return Ok(hop(uniform_index(rng, neighbors.len())));
    }

    let exclude_leaves =
        algorithm.excludes_leaves() && neighbors.iter().any(|&v| topology.degree(v) > 1);
    let is_candidate = |slot: usize| !exclude_leaves || topology.degree(neighbors[slot]) > 1;

    // Single pass: candidate count, minimum score, size of the tie set and
    // whether any candidate still scores zero.
    let mut candidates = 0usize;
    let mut min: Option<Score> = None;
    let mut ties = 0usize;
    let mut any_zero = false;
    for slot in (0..neighbors.len()).filter(|&s| is_candidate(s)) {
        let score = Score::of(
            algorithm,
            &stats[slot],
            now,
            topology.degree(neighbors[slot]),
        );
        candidates += 1;
        any_zero |= score.is_zero();
        match min.map(|m| score.cmp(&m)) {
            None | Some(Ordering::Less) => {
                min = Some(score);
                ties = 1;
            }
            Some(Ordering::Equal) => ties += 1,
            Some(Ordering::Greater) => {}
        }
    }
    let min = min.expect("candidate set is never empty");

    let pick = if policy.bootstrap && algorithm.uses_bootstrap() && any_zero {
        let target = uniform_index(rng, candidates);
        (0..neighbors.len())
            .filter(|&s| is_candidate(s))
            .nth(target)
    } else {
        let target = uniform_index(rng, ties);
        (0..neighbors.len())
            .filter(|&s| is_candidate(s))
            .filter(|&s| Score::of(algorithm, &stats[s], now, topology.degree(neighbors[s])) == min)
            .nth(target)
    };
    Ok(hop(pick.expect("pick index is within the counted set")))
}
