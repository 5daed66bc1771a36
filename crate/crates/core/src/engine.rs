//! Discrete-time packet transport.
//!
//! Each call to [`SimState::step`] visits nodes in ascending index order and,
//! per node, generates a packet with probability `R/N`, removes packets that
//! have reached it, and forwards the head of its FIFO queue one hop. Forwarded
//! packets land in the receiver's inbox and only join its queue once every
//! node has been visited, so a packet moves at most one hop per step.

use std::collections::VecDeque;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, RunReport};
use crate::routing::{self, Algorithm, EdgeStats, LearningSource, RoutingError, RoutingPolicy};
use crate::topology::{EdgeId, NetworkTopology, TopologyError};

pub const DEFAULT_QUEUE_CAP: usize = 1000;
pub const DEFAULT_JAM_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("config expects {expected} nodes but topology has {found}")]
    TopologyMismatch { expected: usize, found: usize },
    #[error("simulation already finished after {steps} steps")]
    Finished { steps: u64 },
    #[error("malformed packet path for packet {id}")]
    MalformedPath { id: u64 },
    #[error("reading topology file {path}: {source}")]
    TopologyFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

/// How the delivery time credited to an edge is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeliveryTimeMode {
    /// Delivery step minus creation step, the same for every hop.
    Total,
    /// Delivery step minus the step at which this hop was taken.
    Remaining,
}

impl DeliveryTimeMode {
    pub fn name(self) -> &'static str {
        match self {
            DeliveryTimeMode::Total => "total",
            DeliveryTimeMode::Remaining => "remaining",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TopologySource {
    /// Barabási–Albert graph seeded with the run seed.
    Generated {
        nodes: usize,
        m: usize,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: TopologySource,
    /// Network-wide posting rate `R`; each node posts with probability `R/N`.
    pub rate: f64,
    pub queue_cap: usize,
    pub steps: u64,
    pub algorithm: Algorithm,
    /// Random-walk start for ST/STD. Turning it off is an ablation.
    pub bootstrap: bool,
    pub seed: u64,
    pub delivery_time_mode: DeliveryTimeMode,
    pub jam_threshold_fraction: f64,
    /// Learning-fraction sampling interval in steps.
    pub learning_interval: u64,
    /// Sampling interval and window length of the mean-delivery series.
    pub mean_delivery_window: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            topology: TopologySource::Generated { nodes: 1000, m: 2 },
            rate: 0.1,
            queue_cap: DEFAULT_QUEUE_CAP,
            steps: 100_000,
            algorithm: Algorithm::Cd,
            bootstrap: true,
            seed: 1,
            delivery_time_mode: DeliveryTimeMode::Total,
            jam_threshold_fraction: DEFAULT_JAM_THRESHOLD,
            learning_interval: 100,
            mean_delivery_window: 1000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if let TopologySource::Generated { nodes, m } = self.topology {
            if m == 0 || nodes <= m {
                return bad("need nodes > m >= 1");
            }
        }
        if !self.rate.is_finite() || self.rate < 0.0 {
            return bad("rate must be a finite number >= 0");
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.queue_cap == 0 {
            return bad("queue_cap must be >= 1");
        }
        if !(self.jam_threshold_fraction > 0.0 && self.jam_threshold_fraction <= 1.0) {
            return bad("jam threshold fraction must lie in (0, 1]");
        }
        if self.learning_interval == 0 || self.mean_delivery_window == 0 {
            return bad("sampling intervals must be >= 1");
        }
        Ok(())
    }

    pub fn policy(&self) -> RoutingPolicy {
        RoutingPolicy {
            algorithm: self.algorithm,
            bootstrap: self.bootstrap,
        }
    }

    pub fn build_topology(&self) -> Result<NetworkTopology, SimError> {
        match &self.topology {
            TopologySource::Generated { nodes, m } => {
                Ok(NetworkTopology::generate_ba(*nodes, *m, self.seed)?)
            }
            TopologySource::File(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| SimError::TopologyFile {
                        path: path.clone(),
                        source,
                    })?;
                Ok(NetworkTopology::load_adjacency_matrix(&text)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    pub source: usize,
    pub destination: usize,
    pub created_at: u64,
    /// Directed edges traversed so far, in order.
    hops: Vec<u32>,
    /// Step at which each hop was taken; kept only in `Remaining` mode.
    hop_times: Vec<u32>,
}

impl Packet {
    fn new(id: u64, source: usize, destination: usize, created_at: u64) -> Self {
        Packet {
            id,
            source,
            destination,
            created_at,
            hops: Vec::new(),
            hop_times: Vec::new(),
        }
    }

    pub fn hops(&self) -> impl ExactSizeIterator<Item = EdgeId> + '_ {
        self.hops.iter().map(|&e| e as EdgeId)
    }

    pub fn hop_count(&self) -> usize {
        self.hops.len()
    }

    /// Step at which hop `i` was taken, if hop timestamps were recorded.
    pub fn hop_time(&self, i: usize) -> Option<u64> {
        self.hop_times.get(i).map(|&t| t as u64)
    }

    /// Current position: the last node on the path.
    pub fn position(&self, topology: &NetworkTopology) -> usize {
        self.hops
            .last()
            .map_or(self.source, |&e| topology.edge_target(e as EdgeId))
    }

    /// Visited nodes, starting with the source.
    pub fn path(&self, topology: &NetworkTopology) -> Vec<usize> {
        std::iter::once(self.source)
            .chain(self.hops().map(|e| topology.edge_target(e)))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeState {
    pub queue: VecDeque<Packet>,
    pub inbox: Vec<Packet>,
    /// Packets in `queue` addressed to this node.
    awaiting_delivery: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub created: u64,
    pub delivered: u64,
    pub forwarded: u64,
    pub blocked: u64,
    pub suppressed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub generated: u64,
    pub suppressed: u64,
    pub delivered: u64,
    pub forwarded: u64,
    pub blocked: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub created_at: u64,
    pub delivered_at: u64,
    pub hops: u32,
}

impl DeliveryRecord {
    pub fn delivery_time(&self) -> u64 {
        self.delivered_at - self.created_at
    }
}

/// A successful transmission, recorded only when tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardEvent {
    pub time: u64,
    pub edge: EdgeId,
    pub packet: u64,
}

#[derive(Debug, Clone, Default)]
struct Trace {
    forwards: Vec<ForwardEvent>,
    delivered: Vec<Packet>,
}

#[derive(Debug, Clone)]
pub struct SimState {
    clock: u64,
    steps: u64,
    rate_per_node: f64,
    queue_cap: usize,
    policy: RoutingPolicy,
    mode: DeliveryTimeMode,
    nodes: Vec<NodeState>,
    stats: Vec<EdgeStats>,
    rng: ChaCha8Rng,
    counters: Counters,
    next_packet_id: u64,
    in_flight: usize,
    learned_edges: usize,
    delivered_log: Vec<DeliveryRecord>,
    /// `dt_counts[d]` = number of transmissions that followed the previous
    /// one on the same directed edge after `d` steps.
    dt_counts: Vec<u64>,
    trace: Option<Trace>,
}

impl SimState {
    pub fn init(config: &SimConfig, topology: &NetworkTopology) -> Result<Self, SimError> {
        config.validate()?;
        if let TopologySource::Generated { nodes, .. } = config.topology {
            if nodes != topology.node_count() {
                return Err(SimError::TopologyMismatch {
                    expected: nodes,
                    found: topology.node_count(),
                });
            }
        }
        let n = topology.node_count();
        if config.rate > n as f64 {
            return Err(SimError::InvalidConfig(format!(
                "rate {} exceeds node count {n}",
                config.rate
            )));
        }
        Ok(SimState {
            clock: 0,
            steps: config.steps,
            rate_per_node: config.rate / n as f64,
            queue_cap: config.queue_cap,
            policy: config.policy(),
            mode: config.delivery_time_mode,
            nodes: vec![NodeState::default(); n],
            stats: vec![EdgeStats::default(); topology.directed_edge_count()],
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            counters: Counters::default(),
            next_packet_id: 0,
            in_flight: 0,
            learned_edges: 0,
            delivered_log: Vec::new(),
            dt_counts: vec![0; 2],
            trace: None,
        })
    }

    /// Keeps every forward event and every delivered packet (with its path)
    /// for offline checks. Memory grows with the run; meant for tests.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Trace::default());
    }

    pub fn forward_events(&self) -> &[ForwardEvent] {
        self.trace.as_ref().map_or(&[], |t| &t.forwards)
    }

    pub fn delivered_packets(&self) -> &[Packet] {
        self.trace.as_ref().map_or(&[], |t| &t.delivered)
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn is_finished(&self) -> bool {
        self.clock >= self.steps
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// Packets currently held in queues and inboxes.
    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// Statistics for every directed edge, indexed by [`EdgeId`].
    pub fn edge_stats(&self) -> &[EdgeStats] {
        &self.stats
    }

    /// Statistics of `node`'s outgoing edges, aligned with its neighbor list.
    pub fn node_stats(&self, topology: &NetworkTopology, node: usize) -> &[EdgeStats] {
        &self.stats[topology.edge_range(node)]
    }

    pub fn delivered_log(&self) -> &[DeliveryRecord] {
        &self.delivered_log
    }

    pub fn dt_counts(&self) -> &[u64] {
        &self.dt_counts
    }

    pub fn learned_edges(&self) -> usize {
        self.learned_edges
    }

    /// Fraction of directed edges whose flow statistic has left its initial
    /// value.
    pub fn learning_fraction(&self) -> f64 {
        if self.stats.is_empty() {
            0.0
        } else {
            self.learned_edges as f64 / self.stats.len() as f64
        }
    }

    /// Places a packet directly in `node`'s queue, bypassing generation.
    /// Returns `false` (and drops nothing) if the queue is full.
    pub fn inject(&mut self, source: usize, destination: usize) -> bool {
        assert_ne!(source, destination, "self-addressed packet");
        let node = &mut self.nodes[source];
        if node.queue.len() + node.inbox.len() >= self.queue_cap {
            return false;
        }
        let packet = Packet::new(self.next_packet_id, source, destination, self.clock);
        self.next_packet_id += 1;
        node.queue.push_back(packet);
        self.counters.created += 1;
        self.in_flight += 1;
        true
    }

    fn mark_learned(&mut self, edge: EdgeId, source: LearningSource) {
        if self.policy.algorithm.learning_source() == source && !self.stats[edge].learned {
            self.stats[edge].learned = true;
            self.learned_edges += 1;
        }
    }

    /// Credits every hop of a delivered packet with one delivery and its
    /// delivery time.
    pub fn update_on_delivery(
        &mut self,
        packet: &Packet,
        delivered_at: u64,
    ) -> Result<(), SimError> {
        for (i, edge) in packet.hops().enumerate() {
            let d = match self.mode {
                DeliveryTimeMode::Total => delivered_at - packet.created_at,
                DeliveryTimeMode::Remaining => {
                    let sent = packet
                        .hop_time(i)
                        .ok_or(SimError::MalformedPath { id: packet.id })?;
                    delivered_at - sent
                }
            };
            let stats = &mut self.stats[edge];
            stats.n_p += 1;
            stats.t_p += d;
            self.mark_learned(edge, LearningSource::Delivery);
        }
        Ok(())
    }

    pub fn step(&mut self, topology: &NetworkTopology) -> Result<StepEvents, SimError> {
        if self.is_finished() {
            return Err(SimError::Finished { steps: self.steps });
        }
        let now = self.clock;
        let n = self.nodes.len();
        let mut events = StepEvents::default();

        for node in 0..n {
            // Generate.
            if self.rng.gen::<f64>() < self.rate_per_node {
                let mut destination = self.rng.gen_range(0..n - 1);
                if destination >= node {
                    destination += 1;
                }
                if self.inject(node, destination) {
                    events.generated += 1;
                } else {
                    self.counters.suppressed += 1;
                    events.suppressed += 1;
                }
            }

            // Deliver.
            if self.nodes[node].awaiting_delivery > 0 {
                let queue = std::mem::take(&mut self.nodes[node].queue);
                let (arrived, waiting): (VecDeque<Packet>, VecDeque<Packet>) =
                    queue.into_iter().partition(|p| p.destination == node);
                self.nodes[node].queue = waiting;
                self.nodes[node].awaiting_delivery = 0;
                for packet in arrived {
                    self.deliver(packet, now)?;
                    events.delivered += 1;
                }
            }

            // Forward.
            let Some(head) = self.nodes[node].queue.front() else {
                continue;
            };
            let destination = head.destination;
            let edges = topology.edge_range(node);
            let hop = routing::select_next_hop(
                node,
                destination,
                topology,
                &self.stats[edges.clone()],
                self.policy,
                now,
                &mut self.rng,
            )?;
            let target = &self.nodes[hop.neighbor];
            if target.queue.len() + target.inbox.len() >= self.queue_cap {
                self.counters.blocked += 1;
                events.blocked += 1;
                continue;
            }
            let edge = edges.start + hop.slot;
            let mut packet = self.nodes[node].queue.pop_front().expect("head exists");
            let stats = &mut self.stats[edge];
            if stats.c > 0 {
                let gap = (now - stats.last_tx) as usize;
                if gap >= self.dt_counts.len() {
                    self.dt_counts.resize(gap + 1, 0);
                }
                self.dt_counts[gap] += 1;
            }
            stats.c += 1;
            stats.last_tx = now;
            self.mark_learned(edge, LearningSource::Send);

            packet.hops.push(edge as u32);
            if self.mode == DeliveryTimeMode::Remaining {
                packet.hop_times.push(now as u32);
            }
            if let Some(trace) = self.trace.as_mut() {
                trace.forwards.push(ForwardEvent {
                    time: now,
                    edge,
                    packet: packet.id,
                });
            }
            self.nodes[hop.neighbor].inbox.push(packet);
            self.counters.forwarded += 1;
            events.forwarded += 1;
        }

        for (id, node) in self.nodes.iter_mut().enumerate() {
            node.awaiting_delivery += node.inbox.iter().filter(|p| p.destination == id).count();
            node.queue.extend(node.inbox.drain(..));
        }
        self.clock += 1;
        Ok(events)
    }

    fn deliver(&mut self, packet: Packet, now: u64) -> Result<(), SimError> {
        self.update_on_delivery(&packet, now)?;
        self.counters.delivered += 1;
        self.in_flight -= 1;
        self.delivered_log.push(DeliveryRecord {
            created_at: packet.created_at,
            delivered_at: now,
            hops: packet.hop_count() as u32,
        });
        if let Some(trace) = self.trace.as_mut() {
            trace.delivered.push(packet);
        }
        Ok(())
    }
}

/// Builds the topology described by `config` and runs it to completion.
pub fn run(config: &SimConfig) -> Result<RunReport, SimError> {
    let topology = config.build_topology()?;
    run_on(config, &topology)
}

pub fn run_on(config: &SimConfig, topology: &NetworkTopology) -> Result<RunReport, SimError> {
    let mut state = SimState::init(config, topology)?;
    let mut load_series = Vec::with_capacity(config.steps as usize);
    let mut created_series = Vec::with_capacity(config.steps as usize);
    let mut learning_series = vec![(0, 0.0)];
    while !state.is_finished() {
        state.step(topology)?;
        load_series.push(state.in_flight() as u64);
        created_series.push(state.counters().created);
        if state.clock() % config.learning_interval == 0 {
            learning_series.push((state.clock(), state.learning_fraction()));
        }
    }
    Ok(metrics::build_report(
        config,
        topology,
        &state,
        load_series,
        created_series,
        learning_series,
    ))
}
