//! Slotted packet environment over the inter-satellite grid: packets enter
//! at a ground station, hop along ISLs one link per slot and are delivered
//! by the serving satellite.

use crate::geometry::{distance, elevation_angle, ConstellationState, GeoConstants, Vec3};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetError {
    #[error("illegal action {action:?} for packet {packet} at {node}")]
    IllegalAction { packet: u64, action: RouteAction, node: String },
    #[error("no action supplied for in-flight packet {0}")]
    MissingAction(u64),
    #[error("action vector has {got} lanes, expected {expected}")]
    Lanes { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub packet_size_bits: f64,
    /// Mean packets per slot.
    pub arrival_rate: f64,
    /// Maximum accumulated propagation delay before a packet is dropped.
    pub psi_max_s: f64,
    /// Maximum ISL hops before a packet is dropped.
    pub max_hops: usize,
    /// Packet lanes (in-flight capacity); arrivals beyond it are dropped.
    pub max_packets: usize,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            packet_size_bits: 8000.0,
            arrival_rate: 1.0,
            psi_max_s: 0.05,
            max_hops: 32,
            max_packets: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Gbs(usize),
    Sat(usize),
    Rue(usize),
}

impl std::fmt::Display for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Node::Gbs(b) => write!(f, "gbs{b}"),
            Node::Sat(s) => write!(f, "sat{s}"),
            Node::Rue(u) => write!(f, "rue{u}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RouteAction {
    Fore,
    Aft,
    Left,
    Right,
    Deliver,
}

impl RouteAction {
    pub const ALL: [RouteAction; 5] = [Self::Fore, Self::Aft, Self::Left, Self::Right, Self::Deliver];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Fore => "fore",
            Self::Aft => "aft",
            Self::Left => "left",
            Self::Right => "right",
            Self::Deliver => "deliver",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketStatus {
    InFlight,
    Delivered,
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub source_gbs: usize,
    pub dest_rue: usize,
    pub size_bits: f64,
    pub node: Node,
    pub status: PacketStatus,
    pub hop_trace: Vec<Node>,
    /// Length of each traversed link in meters.
    pub hop_lengths: Vec<f64>,
    pub created_slot: u64,
    pub delivered_slot: Option<u64>,
    pub latency_s: Option<f64>,
}

impl Packet {
    pub fn isl_hops(&self) -> usize {
        self.hop_trace.iter().filter(|n| matches!(n, Node::Sat(_))).count().saturating_sub(1)
    }

    pub fn propagation_s(&self, consts: &GeoConstants) -> f64 {
        self.hop_lengths.iter().sum::<f64>() / consts.light_speed_m_s
    }
}

/// Poisson arrivals for one slot with destinations uniform over `num_rues`.
/// Returns destination RUE indices in arrival order.
pub fn spawn_arrivals(rng: &mut impl Rng, rate: f64, num_rues: usize) -> Vec<usize> {
    if rate <= 0.0 || num_rues == 0 {
        return Vec::new();
    }
    let n = Poisson::new(rate).map(|p| p.sample(rng) as usize).unwrap_or(0);
    (0..n).map(|_| rng.random_range(0..num_rues)).collect()
}

/// Fixed routing endpoints of one RUE during a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RueRoute {
    pub gbs: usize,
    /// First satellite reached by the uplink.
    pub entry: usize,
    pub serving: usize,
}

/// Snapshot of everything the router needs for one slot.
#[derive(Debug, Clone)]
pub struct Topology {
    pub state: ConstellationState,
    pub gbs: Vec<Vec3>,
    pub rues: Vec<Vec3>,
    pub routes: Vec<Option<RueRoute>>,
    /// `covers[u][s]`: satellite s is above the minimum elevation at RUE u.
    pub covers: Vec<Vec<bool>>,
    /// Shortest (hops, meters) from every satellite to each serving satellite.
    tables: Vec<(usize, Vec<(u32, f64)>)>,
}

impl Topology {
    /// `serving[u]` is the associated (gbs, satellite) pair. The uplink enters
    /// at the serving satellite when the GBS sees it, else at the nearest
    /// satellite the GBS sees; with no visible satellite the RUE is unrouted.
    pub fn new(
        state: ConstellationState,
        gbs: Vec<Vec3>,
        rues: Vec<Vec3>,
        serving: &[Option<(usize, usize)>],
        min_elev_rad: f64,
        consts: &GeoConstants,
    ) -> Self {
        let covers: Vec<Vec<bool>> = rues
            .iter()
            .map(|&r| {
                state
                    .positions
                    .iter()
                    .map(|&p| elevation_angle(r, p, consts).is_ok_and(|e| e >= min_elev_rad))
                    .collect()
            })
            .collect();
        let visible: Vec<Vec<usize>> = gbs.iter().map(|&g| state.visible_from(g, min_elev_rad, consts)).collect();
        let routes: Vec<Option<RueRoute>> = serving
            .iter()
            .map(|sv| {
                let (b, s) = (*sv)?;
                let vis = &visible[b];
                let entry = if vis.contains(&s) { s } else { *vis.first()? };
                Some(RueRoute { gbs: b, entry, serving: s })
            })
            .collect();
        let mut targets: Vec<usize> = routes.iter().flatten().map(|r| r.serving).collect();
        targets.sort_unstable();
        targets.dedup();
        let tables = targets.into_iter().map(|t| (t, shortest_to(&state, t))).collect();
        Self {
            state,
            gbs,
            rues,
            routes,
            covers,
            tables,
        }
    }

    fn table(&self, target: usize) -> &[(u32, f64)] {
        &self.tables.iter().find(|(t, _)| *t == target).expect("target table").1
    }

    /// ISL residual from `sat` to the serving satellite of `rue` plus the
    /// downlink distance; infinite when unreachable or unrouted.
    pub fn remaining_m(&self, sat: usize, rue: usize) -> f64 {
        let Some(route) = self.routes[rue] else {
            return f64::INFINITY;
        };
        let (hops, meters) = self.table(route.serving)[sat];
        if hops == u32::MAX {
            return f64::INFINITY;
        }
        meters + distance(self.state.positions[route.serving], self.rues[rue])
    }

    /// Minimum ISL hop count from `sat` to the serving satellite of `rue`.
    pub fn hops_to_go(&self, sat: usize, rue: usize) -> Option<u32> {
        let route = self.routes[rue]?;
        let h = self.table(route.serving)[sat].0;
        (h != u32::MAX).then_some(h)
    }

    /// Action mask over [fore, aft, left, right, deliver].
    pub fn legal_actions(&self, packet: &Packet) -> [bool; 5] {
        let mut mask = [false; 5];
        let Node::Sat(s) = packet.node else {
            return mask;
        };
        for (k, link) in self.state.neighbors[s].links.iter().enumerate() {
            mask[k] = link.is_some();
        }
        mask[4] = self.routes[packet.dest_rue].is_some_and(|r| r.serving == s) && self.covers[packet.dest_rue][s];
        mask
    }

    /// Action that follows the lexicographic shortest path, delivering when
    /// possible. Ties resolve to the first action in [fore, aft, left, right].
    pub fn greedy_action(&self, packet: &Packet) -> Option<RouteAction> {
        let Node::Sat(s) = packet.node else {
            return None;
        };
        let mask = self.legal_actions(packet);
        if mask[4] {
            return Some(RouteAction::Deliver);
        }
        let route = self.routes[packet.dest_rue]?;
        let table = self.table(route.serving);
        let mut best: Option<(RouteAction, (u32, f64))> = None;
        for (k, link) in self.state.neighbors[s].links.iter().enumerate() {
            let Some(n) = *link else { continue };
            let (h, m) = table[n];
            if h == u32::MAX {
                continue;
            }
            let cost = (h, m + self.state.isl_distance(s, n));
            if best.is_none_or(|(_, b)| lex_less(cost, b)) {
                best = Some((RouteAction::ALL[k], cost));
            }
        }
        best.map(|(a, _)| a)
    }
}

fn lex_less(a: (u32, f64), b: (u32, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    hops: u32,
    meters: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .hops
            .cmp(&self.hops)
            .then(other.meters.total_cmp(&self.meters))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra on (hops, meters) from every satellite to `target`. The grid is
/// undirected, so this runs outward from the target.
pub fn shortest_to(state: &ConstellationState, target: usize) -> Vec<(u32, f64)> {
    let n = state.num_sats();
    let mut best = vec![(u32::MAX, f64::INFINITY); n];
    let mut heap = BinaryHeap::new();
    best[target] = (0, 0.0);
    heap.push(Entry { hops: 0, meters: 0.0, node: target });
    while let Some(Entry { hops, meters, node }) = heap.pop() {
        if lex_less(best[node], (hops, meters)) {
            continue;
        }
        for nb in state.neighbors[node].iter() {
            let cand = (hops + 1, meters + state.isl_distance(node, nb));
            if lex_less(cand, best[nb]) {
                best[nb] = cand;
                heap.push(Entry { hops: cand.0, meters: cand.1, node: nb });
            }
        }
    }
    best
}

/// Plain BFS hop distance on the neighbour graph.
pub fn bfs_hops(state: &ConstellationState, from: usize, to: usize) -> Option<u32> {
    let mut dist = vec![u32::MAX; state.num_sats()];
    let mut queue = VecDeque::from([from]);
    dist[from] = 0;
    while let Some(v) = queue.pop_front() {
        if v == to {
            return Some(dist[v]);
        }
        for nb in state.neighbors[v].iter() {
            if dist[nb] == u32::MAX {
                dist[nb] = dist[v] + 1;
                queue.push_back(nb);
            }
        }
    }
    None
}

/// Latency of a packet: propagation over every hop plus serialization of
/// `size_bits` at `rate_bps` on each hop.
pub fn packet_latency(hop_lengths: &[f64], size_bits: f64, rate_bps: f64, consts: &GeoConstants) -> f64 {
    let prop: f64 = hop_lengths.iter().sum::<f64>() / consts.light_speed_m_s;
    let ser = if size_bits <= 0.0 { 0.0 } else { size_bits / rate_bps };
    prop + ser * hop_lengths.len() as f64
}

/// Latencies of delivered packets, recomputed for a given packet size.
pub fn measure_latency(delivered: &[Packet], size_bits: f64, rate_bps: &[f64], consts: &GeoConstants) -> Vec<f64> {
    delivered
        .iter()
        .filter(|p| p.status == PacketStatus::Delivered)
        .map(|p| packet_latency(&p.hop_lengths, size_bits, rate_bps[p.dest_rue], consts))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub spawned: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub slot: u64,
    pub packet: u64,
    pub node: String,
    pub action: &'static str,
    pub remaining_m: f64,
    pub delivered: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    /// Per lane: remaining distance after the move for packets that were in
    /// flight at the start of the step (0 when delivered).
    pub remaining: Vec<Option<f64>>,
    pub delivered: Vec<Packet>,
    pub dropped: Vec<Packet>,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub slot: u64,
    pub lanes: Vec<Option<Packet>>,
    pub counters: Counters,
    next_id: u64,
}

impl NetState {
    pub fn new(lanes: usize) -> Self {
        Self {
            slot: 0,
            lanes: vec![None; lanes],
            counters: Counters::default(),
            next_id: 0,
        }
    }

    pub fn in_flight(&self) -> usize {
        self.lanes.iter().flatten().count()
    }

    /// Places new packets for the given destinations into free lanes at their
    /// entry satellites. Packets that find no lane or no route are dropped.
    pub fn inject(&mut self, topo: &Topology, dests: &[usize], size_bits: f64) -> Vec<Packet> {
        let mut dropped = Vec::new();
        for &u in dests {
            let id = self.next_id;
            self.next_id += 1;
            self.counters.spawned += 1;
            let route = topo.routes[u];
            let mut p = Packet {
                id,
                source_gbs: route.map_or(0, |r| r.gbs),
                dest_rue: u,
                size_bits,
                node: Node::Gbs(route.map_or(0, |r| r.gbs)),
                status: PacketStatus::InFlight,
                hop_trace: vec![Node::Gbs(route.map_or(0, |r| r.gbs))],
                hop_lengths: Vec::new(),
                created_slot: self.slot,
                delivered_slot: None,
                latency_s: None,
            };
            let free = self.lanes.iter().position(Option::is_none);
            match (route, free) {
                (Some(r), Some(lane)) => {
                    p.node = Node::Sat(r.entry);
                    p.hop_trace.push(p.node);
                    p.hop_lengths.push(distance(topo.gbs[r.gbs], topo.state.positions[r.entry]));
                    self.lanes[lane] = Some(p);
                }
                _ => {
                    p.status = PacketStatus::Dropped;
                    self.counters.dropped += 1;
                    dropped.push(p);
                }
            }
        }
        dropped
    }

    /// Applies one action per in-flight lane, delivers, expires packets past
    /// the delay or hop budget and advances the slot. `rate_bps[u]` sets the
    /// serialization term of the delivered latency.
    pub fn step(
        &mut self,
        topo: &Topology,
        actions: &[Option<RouteAction>],
        rate_bps: &[f64],
        traffic: &TrafficConfig,
        consts: &GeoConstants,
    ) -> Result<StepOutcome, NetError> {
        if actions.len() != self.lanes.len() {
            return Err(NetError::Lanes {
                expected: self.lanes.len(),
                got: actions.len(),
            });
        }
        // Validate everything first so an error leaves the state untouched.
        for (lane, act) in self.lanes.iter().zip(actions) {
            if let Some(p) = lane {
                let a = act.ok_or(NetError::MissingAction(p.id))?;
                if !topo.legal_actions(p)[a.index()] {
                    return Err(NetError::IllegalAction {
                        packet: p.id,
                        action: a,
                        node: p.node.to_string(),
                    });
                }
            }
        }
        let mut out = StepOutcome {
            remaining: vec![None; self.lanes.len()],
            ..Default::default()
        };
        for (i, lane) in self.lanes.iter_mut().enumerate() {
            let Some(p) = lane.as_mut() else { continue };
            let a = actions[i].unwrap();
            let Node::Sat(s) = p.node else { unreachable!("in-flight packets sit on satellites") };
            let remaining = if a == RouteAction::Deliver {
                let u = p.dest_rue;
                p.hop_lengths.push(distance(topo.state.positions[s], topo.rues[u]));
                p.node = Node::Rue(u);
                p.hop_trace.push(p.node);
                p.status = PacketStatus::Delivered;
                p.delivered_slot = Some(self.slot);
                p.latency_s = Some(packet_latency(&p.hop_lengths, p.size_bits, rate_bps[u], consts));
                0.0
            } else {
                let n = topo.state.neighbors[s].links[a.index()].expect("mask checked");
                p.hop_lengths.push(topo.state.isl_distance(s, n));
                p.node = Node::Sat(n);
                p.hop_trace.push(p.node);
                let expired = p.propagation_s(consts) > traffic.psi_max_s || p.isl_hops() >= traffic.max_hops;
                if expired {
                    p.status = PacketStatus::Dropped;
                }
                topo.remaining_m(n, p.dest_rue)
            };
            out.remaining[i] = Some(remaining);
            out.trace.push(TraceRow {
                slot: self.slot,
                packet: p.id,
                node: p.node.to_string(),
                action: a.name(),
                remaining_m: remaining,
                delivered: p.status == PacketStatus::Delivered,
            });
            match p.status {
                PacketStatus::Delivered => {
                    self.counters.delivered += 1;
                    out.delivered.push(lane.take().unwrap());
                }
                PacketStatus::Dropped => {
                    self.counters.dropped += 1;
                    out.dropped.push(lane.take().unwrap());
                }
                PacketStatus::InFlight => {}
            }
        }
        self.slot += 1;
        Ok(out)
    }

    /// Spawned = in flight + delivered + dropped.
    pub fn conserved(&self) -> bool {
        self.counters.spawned == self.in_flight() as u64 + self.counters.delivered + self.counters.dropped
    }
}
