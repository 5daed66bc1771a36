//! Helpers shared by the integration tests: a brute-force next-hop
//! enumerator written directly from the score formulas, and random instance
//! builders for it.

#![allow(dead_code)]

use ptsim::{Algorithm, EdgeStats, NetworkTopology};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One routing decision to check: `center` forwards a packet for
/// `destination` at time `now`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub topology: NetworkTopology,
    pub center: usize,
    pub destination: usize,
    /// Degrees of the center's neighbors, in neighbor-list order.
    pub degrees: Vec<usize>,
    pub stats: Vec<EdgeStats>,
    pub now: u64,
}

/// Builds a star-like graph around node 0 whose neighbors have the given
/// degrees: neighbor `i` gets `degrees[i] - 1` private leaves.
pub fn graph_with_degrees(degrees: &[usize]) -> NetworkTopology {
    let mut edges = Vec::new();
    let mut next = degrees.len() + 1;
    for (i, &k) in degrees.iter().enumerate() {
        edges.push((0, i + 1));
        for _ in 1..k {
            edges.push((i + 1, next));
            next += 1;
        }
    }
    NetworkTopology::from_edges(next, &edges).expect("valid graph")
}

pub fn random_stats(rng: &mut ChaCha8Rng, now: u64) -> EdgeStats {
    // Small ranges so that exact ties and zero scores show up often.
    let n_p = if rng.gen_bool(0.3) {
        0
    } else {
        rng.gen_range(1..6)
    };
    let t_p = if n_p == 0 {
        0
    } else {
        rng.gen_range(n_p..=n_p * 30)
    };
    let c = if rng.gen_bool(0.2) {
        0
    } else {
        rng.gen_range(1..20)
    };
    let last_tx = if c == 0 { 0 } else { rng.gen_range(0..=now) };
    EdgeStats {
        c,
        n_p,
        t_p,
        last_tx,
        learned: c > 0 || n_p > 0,
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let d = rng.gen_range(1..=10);
    let degrees: Vec<usize> = (0..d)
        .map(|_| {
            if rng.gen_bool(0.3) {
                1
            } else {
                rng.gen_range(2..=6)
            }
        })
        .collect();
    let topology = graph_with_degrees(&degrees);
    let now = rng.gen_range(0..200);
    let stats = (0..d).map(|_| random_stats(rng, now)).collect();
    // Mostly a node two hops away; sometimes a direct neighbor.
    let far: Vec<usize> = (d + 1..topology.node_count()).collect();
    let destination = if far.is_empty() || rng.gen_bool(0.1) {
        rng.gen_range(1..=d)
    } else {
        far[rng.gen_range(0..far.len())]
    };
    Instance {
        topology,
        center: 0,
        destination,
        degrees,
        stats,
        now,
    }
}

fn draw(rng: &mut ChaCha8Rng, len: usize) -> usize {
    if len > 1 {
        rng.gen_range(0..len)
    } else {
        0
    }
}

/// Score of one neighbor, evaluated straight from the formulas in floating
/// point.
pub fn oracle_score(algorithm: Algorithm, s: &EdgeStats, now: u64, k: usize) -> f64 {
    let dt = if now > s.last_tx {
        (now - s.last_tx) as f64
    } else {
        1.0
    };
    let mean_time = if s.n_p == 0 {
        None
    } else {
        Some(s.t_p as f64 / s.n_p as f64)
    };
    let k = k as f64;
    let c = s.c as f64;
    match algorithm {
        Algorithm::RandomWalk => 0.0,
        Algorithm::St => mean_time.map_or(0.0, |t| t / dt),
        Algorithm::Std => mean_time.map_or(0.0, |t| t * k / dt),
        Algorithm::Cd => c * k,
        Algorithm::Cdt => mean_time.map_or(c * k, |t| t * c * k / dt),
    }
}

/// Returns the neighbor-list slot a node should pick, enumerating every
/// candidate and consuming random draws in the same order as the router.
#[allow(clippy::too_many_arguments)]
pub fn oracle_next_hop(
    algorithm: Algorithm,
    bootstrap: bool,
    neighbors: &[usize],
    degrees: &[usize],
    stats: &[EdgeStats],
    destination: usize,
    now: u64,
    rng: &mut ChaCha8Rng,
) -> usize {
    if let Some(slot) = neighbors.iter().position(|&v| v == destination) {
        return slot;
    }
    let all: Vec<usize> = (0..neighbors.len()).collect();
    if algorithm == Algorithm::RandomWalk {
        return all[draw(rng, all.len())];
    }
    let mut candidates = all.clone();
    if matches!(algorithm, Algorithm::Std | Algorithm::Cdt) {
        candidates.retain(|&i| degrees[i] > 1);
        if candidates.is_empty() {
            candidates = all;
        }
    }
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&i| oracle_score(algorithm, &stats[i], now, degrees[i]))
        .collect();
    let bootstraps = matches!(algorithm, Algorithm::St | Algorithm::Std);
    if bootstrap && bootstraps && scores.contains(&0.0) {
        return candidates[draw(rng, candidates.len())];
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * min.abs().max(1.0);
    let tied: Vec<usize> = candidates
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| (s - min).abs() <= tol)
        .map(|(&i, _)| i)
        .collect();
    tied[draw(rng, tied.len())]
}
