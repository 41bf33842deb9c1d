//! A full scenario instance: ground actors, slot-0 association, per-slot
//! topologies and probe paths, per-watt channel gains and the joint
//! routing/phase environment.

use crate::association::{self, AssocError, AssociationMatrix, ClusterState, Point2};
use crate::channel::{self, ChannelError, LinkBudget};
use crate::geometry::{distance, elevation_angle, Constellation, GroundSite, Vec3};
use crate::link::{self, LinkParams, PathDescription, PathNodes, PhasePolicy};
use crate::mappo::{
    phase_bases, ps_observe, routing_observe, routing_reward, squash_phase, Agent, AgentAction, AgentObs, JointAction,
    MappoError, MultiAgentEnv, Observation, PhaseMode, StepFeedback,
};
use crate::netsim::{spawn_arrivals, NetState, Node, Packet, PacketStatus, RouteAction, Topology, TraceRow};
use crate::rng::{stream, Rng};
use crate::scenario::{ConfigError, Scenario};
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

const TAG_LAYOUT: u64 = 0x4c41_594f;
const TAG_CHANNEL: u64 = 0x4348_414e;
const TAG_TRAFFIC: u64 = 0x5452_4146;

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Assoc(#[from] AssocError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Mappo(#[from] MappoError),
    #[error("layout: {0}")]
    Layout(String),
}

/// Ground actors placed for a scenario.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub constellation: Constellation,
    pub params: LinkParams,
    pub center: GroundSite,
    /// Satellites whose footprints hold the RUEs at slot 0.
    pub footprint_sats: Vec<usize>,
    pub gbs_sites: Vec<GroundSite>,
    pub rue_sites: Vec<GroundSite>,
    pub gbs_pos: Vec<Vec3>,
    pub rue_pos: Vec<Vec3>,
}

fn random_in_cap(center: &GroundSite, radius_rad: f64, rng: &mut Rng) -> GroundSite {
    let bearing = rng.random::<f64>() * TAU;
    let angle = radius_rad * rng.random::<f64>().sqrt();
    center.destination(bearing, angle)
}

fn site_of(deg: &[f64; 2]) -> GroundSite {
    GroundSite::from_degrees(deg[0], deg[1])
}

impl World {
    /// Places GBSs around the area centre and RUEs inside the footprints of
    /// the `num_clusters` satellites nearest the sub-point of satellite 0.
    pub fn new(scenario: &Scenario) -> Result<Self, WorldError> {
        scenario.validate()?;
        let constellation = scenario.constellation();
        let geo = scenario.geo;
        let re = geo.earth_radius_m;
        let a = &scenario.actors;
        let state = constellation.state(0, &geo);
        let subs: Vec<GroundSite> = state.positions.iter().map(|&p| GroundSite::beneath(p)).collect();
        let mut order: Vec<usize> = (0..subs.len()).collect();
        order.sort_by(|&i, &j| subs[0].central_angle(&subs[i]).total_cmp(&subs[0].central_angle(&subs[j])).then(i.cmp(&j)));
        let k = a.num_clusters.min(order.len());
        let footprint_sats: Vec<usize> = order[..k].to_vec();
        let mean = footprint_sats.iter().fold([0.0; 3], |acc, &s| {
            let u = subs[s].unit_vector();
            [acc[0] + u[0], acc[1] + u[1], acc[2] + u[2]]
        });
        let center = GroundSite::beneath(mean);

        let mut rng = stream(scenario.seed, &[TAG_LAYOUT]);
        let gbs_sites: Vec<GroundSite> = match &a.gbs_sites_deg {
            Some(s) => s.iter().map(site_of).collect(),
            None => (0..a.num_gbs)
                .map(|_| random_in_cap(&center, a.gbs_radius_km * 1e3 / re, &mut rng))
                .collect(),
        };
        let rue_radius = a.rue_radius_km * 1e3 / re;
        let num_rues = match (&a.rue_sites_deg, a.hppp_intensity_per_km2) {
            (Some(s), _) => s.len(),
            (None, Some(lambda)) => {
                let area_km2 = k as f64 * PI * a.rue_radius_km * a.rue_radius_km;
                let n = Poisson::new(lambda * area_km2)
                    .map_err(|e| WorldError::Layout(e.to_string()))?
                    .sample(&mut rng) as usize;
                n.max(k)
            }
            (None, None) => a.num_rues,
        };
        let rue_sites: Vec<GroundSite> = match (&a.rue_sites_deg, a.rue_offset_km) {
            (Some(s), _) => s.iter().map(site_of).collect(),
            (None, Some(d)) => (0..num_rues)
                .map(|_| center.destination(rng.random::<f64>() * TAU, d * 1e3 / re))
                .collect(),
            (None, None) => (0..num_rues)
                .map(|u| random_in_cap(&subs[footprint_sats[u % k]], rue_radius, &mut rng))
                .collect(),
        };
        if rue_sites.len() < k {
            return Err(WorldError::Layout(format!("{} RUEs for {k} clusters", rue_sites.len())));
        }
        Ok(Self {
            scenario: scenario.clone(),
            constellation,
            params: scenario.link_params(),
            center,
            footprint_sats,
            gbs_pos: gbs_sites.iter().map(|s| s.position(&geo)).collect(),
            rue_pos: rue_sites.iter().map(|s| s.position(&geo)).collect(),
            gbs_sites,
            rue_sites,
        })
    }

    pub fn num_rues(&self) -> usize {
        self.rue_sites.len()
    }

    pub fn num_gbs(&self) -> usize {
        self.gbs_sites.len()
    }

    fn min_elev(&self) -> f64 {
        self.scenario.min_elev_rad()
    }

    fn sees(&self, ground: Vec3, sat: Vec3) -> bool {
        elevation_angle(ground, sat, &self.scenario.geo).is_ok_and(|e| e >= self.min_elev())
    }

    /// Nearest GBS that sees `sat`, else the nearest GBS.
    fn serving_gbs(&self, sat: Vec3) -> usize {
        let nearest = |visible_only: bool| {
            (0..self.num_gbs())
                .filter(|&b| !visible_only || self.sees(self.gbs_pos[b], sat))
                .min_by(|&i, &j| distance(self.gbs_pos[i], sat).total_cmp(&distance(self.gbs_pos[j], sat)))
        };
        nearest(true).or_else(|| nearest(false)).unwrap_or(0)
    }

    /// Balanced clustering of the RUEs around the footprint satellites at
    /// slot 0. RUEs their cluster satellite does not cover fall back to the
    /// nearest covering satellite; RUEs nothing covers stay unassociated.
    pub fn associate(&self) -> Result<Association, WorldError> {
        let geo = &self.scenario.geo;
        let state = self.constellation.state(0, geo);
        let re = geo.earth_radius_m;
        let points: Vec<Point2> = self.rue_sites.iter().map(|s| association::project_local(s, &self.center, re)).collect();
        let init: Vec<Point2> = self
            .footprint_sats
            .iter()
            .map(|&s| association::project_local(&GroundSite::beneath(state.positions[s]), &self.center, re))
            .collect();
        let cluster = association::bkmc(&points, &init, 100, 1.0)?;
        let serving_gbs: Vec<usize> = self.footprint_sats.iter().map(|&s| self.serving_gbs(state.positions[s])).collect();
        let covers = |u: usize, s: usize| self.sees(self.rue_pos[u], state.positions[s]);
        let matrix = match association::build_association(
            &cluster,
            &self.footprint_sats,
            &serving_gbs,
            self.num_gbs(),
            state.num_sats(),
            covers,
        ) {
            Ok(v) => v,
            Err(AssocError::Uncovered(list)) => {
                let mut v = AssociationMatrix::new(self.num_gbs(), self.num_rues(), state.num_sats());
                for (u, &c) in cluster.assignment.iter().enumerate() {
                    if !list.contains(&u) {
                        v.set(serving_gbs[c], u, self.footprint_sats[c], true);
                    }
                }
                for u in list {
                    let fallback = (0..state.num_sats()).filter(|&s| covers(u, s)).min_by(|&i, &j| {
                        distance(state.positions[i], self.rue_pos[u]).total_cmp(&distance(state.positions[j], self.rue_pos[u]))
                    });
                    if let Some(s) = fallback {
                        v.set(self.serving_gbs(state.positions[s]), u, s, true);
                    }
                }
                v
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Association::new(matrix, cluster, self.scenario.actors.p_max_w))
    }

    /// Per-slot topologies, probe paths and link descriptions for `slots`
    /// slots under an association.
    pub fn plan(&self, assoc: &Association, slots: usize) -> Result<Plan, WorldError> {
        let geo = &self.scenario.geo;
        let mut topos = Vec::with_capacity(slots);
        let mut links = Vec::with_capacity(slots);
        for t in 0..slots {
            let state = self.constellation.state(t as u64, geo);
            let topo = Topology::new(state, self.gbs_pos.clone(), self.rue_pos.clone(), &assoc.serving, self.min_elev(), geo);
            let row = (0..self.num_rues())
                .map(|u| self.slot_link(&topo, u))
                .collect::<Result<Vec<_>, _>>()?;
            topos.push(topo);
            links.push(row);
        }
        Ok(Plan { topos, links })
    }

    /// The greedy probe path of RUE `u`; `None` when its serving satellite
    /// does not cover it or cannot be reached.
    fn slot_link(&self, topo: &Topology, u: usize) -> Result<Option<SlotLink>, WorldError> {
        let Some(route) = topo.routes[u] else { return Ok(None) };
        if !topo.covers[u][route.serving] || topo.hops_to_go(route.entry, u).is_none() {
            return Ok(None);
        }
        let mut probe = Packet {
            id: 0,
            source_gbs: route.gbs,
            dest_rue: u,
            size_bits: 0.0,
            node: Node::Sat(route.entry),
            status: PacketStatus::InFlight,
            hop_trace: Vec::new(),
            hop_lengths: Vec::new(),
            created_slot: 0,
            delivered_slot: None,
            latency_s: None,
        };
        let mut sats = vec![route.entry];
        loop {
            let Node::Sat(s) = probe.node else { unreachable!() };
            match topo.greedy_action(&probe) {
                Some(RouteAction::Deliver) => break,
                Some(a) => {
                    let n = topo.state.neighbors[s].links[a.index()].expect("greedy moves along a link");
                    probe.node = Node::Sat(n);
                    sats.push(n);
                }
                None => return Ok(None),
            }
            if sats.len() > topo.state.num_sats() + 1 {
                return Ok(None);
            }
        }
        let nodes = PathNodes {
            gbs: topo.gbs[route.gbs],
            sats: sats.iter().map(|&s| topo.state.positions[s]).collect(),
            rue: topo.rues[u],
        };
        let desc = PathDescription::new(&self.params, &nodes)?;
        let budget = desc.budget(&self.params)?;
        let los = desc.los_steering(&self.params)?;
        let bases = phase_bases(PhaseMode::Residual, &los.last().unwrap().phases_rad);
        Ok(Some(SlotLink {
            gbs: route.gbs,
            sats,
            desc,
            budget,
            bases,
        }))
    }

    /// Channel stream of RUE `u` at slot `t`, independent of evaluation order.
    pub fn channel_rng(&self, t: usize, u: usize) -> Rng {
        stream(self.scenario.seed, &[TAG_CHANNEL, t as u64, u as u64])
    }

    /// Evaluates one link: phases from the phase agent acting on the serving
    /// panel, or joint co-phasing when there is no agent.
    pub fn evaluate_link(&self, link: &SlotLink, t: usize, u: usize, z: Option<&[f64]>) -> Result<(f64, f64), WorldError> {
        let mut rng = self.channel_rng(t, u);
        let policy = match z {
            Some(z) => PhasePolicy::Serving(z.iter().zip(&link.bases).map(|(&z, &b)| squash_phase(b, z)).collect()),
            None => PhasePolicy::Coherent,
        };
        let mut cascade = link.desc.realize(&self.params, &mut rng)?;
        let panels = link::configure(&link.desc, &self.params, &mut cascade, &policy)?;
        let gamma = channel::snr(&cascade, &panels, &link.budget, 1.0, true)?;
        let reward = channel::ps_reward(&cascade, &panels)?;
        Ok((gamma, reward))
    }

    /// Per-watt SNR of every (slot, RUE) pair, with the phase agent acting
    /// greedily when given.
    pub fn channel_book(&self, plan: &Plan, phase_agent: Option<&Agent>) -> Result<ChannelBook, WorldError> {
        let slots = plan.slots();
        let rues = self.num_rues();
        let mut gamma = vec![vec![0.0; rues]; slots];
        let mut active = vec![vec![false; rues]; slots];
        let mut ps_reward = vec![vec![0.0; rues]; slots];
        let mut dummy = stream(0, &[]);
        for u in 0..rues {
            let mut prev = 0.0;
            for t in 0..slots {
                let Some(link) = &plan.links[t][u] else { continue };
                let z = match phase_agent {
                    Some(agent) => {
                        let obs = AgentObs {
                            features: ps_observe(link.budget.total_db, prev, &link.desc.geometry),
                            masks: None,
                        };
                        match agent.act(&obs, true, &mut dummy)?.0 {
                            AgentAction::Phase(z) => Some(z),
                            AgentAction::Routing(_) => None,
                        }
                    }
                    None => None,
                };
                let (g, r) = self.evaluate_link(link, t, u, z.as_deref())?;
                gamma[t][u] = g;
                ps_reward[t][u] = r;
                active[t][u] = true;
                prev = g;
            }
        }
        Ok(ChannelBook { gamma, active, ps_reward })
    }

    /// Per-RUE bandwidth B/U.
    pub fn rue_bandwidth(&self) -> f64 {
        self.scenario.channel.bandwidth_hz / self.num_rues() as f64
    }

    /// Rates R[t][u] for a power vector over the association's links.
    pub fn rates(&self, assoc: &Association, book: &ChannelBook, power: &[f64]) -> Vec<Vec<f64>> {
        let bw = self.rue_bandwidth();
        book.gamma
            .iter()
            .zip(&book.active)
            .map(|(g, a)| {
                (0..g.len())
                    .map(|u| match (a[u], assoc.link_of[u]) {
                        (true, Some(l)) => channel::rate(bw, power[l] * g[u]),
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect()
    }

    /// One traffic episode over the plan: Poisson arrivals each slot, routing
    /// by the agent (greedy mode) or by shortest paths, latency from the
    /// slot's rates.
    pub fn run_traffic(&self, plan: &Plan, rates: &[Vec<f64>], routing_agent: Option<&Agent>) -> Result<TrafficOutcome, WorldError> {
        let traffic = &self.scenario.traffic;
        let mut rng = stream(self.scenario.seed, &[TAG_TRAFFIC]);
        let mut net = NetState::new(traffic.max_packets);
        let mut out = TrafficOutcome::default();
        for (t, topo) in plan.topos.iter().enumerate() {
            let dests = spawn_arrivals(&mut rng, traffic.arrival_rate, self.num_rues());
            out.dropped.extend(net.inject(topo, &dests, traffic.packet_size_bits));
            let acts = lane_actions(topo, &net, routing_agent, &mut rng)?;
            let step = net.step(topo, &acts, &rates[t], traffic, &self.scenario.geo).map_err(MappoError::from)?;
            out.delivered.extend(step.delivered);
            out.dropped.extend(step.dropped);
            out.trace.extend(step.trace);
        }
        out.in_flight = net.in_flight();
        Ok(out)
    }
}

/// Routing actions for every occupied lane: the agent's greedy choice when
/// present, with the shortest-path action (or the first legal one) filling
/// in anything it leaves open.
fn lane_actions(
    topo: &Topology,
    net: &NetState,
    agent: Option<&Agent>,
    rng: &mut Rng,
) -> Result<Vec<Option<RouteAction>>, WorldError> {
    let mut acts: Vec<Option<RouteAction>> = vec![None; net.lanes.len()];
    if let Some(agent) = agent {
        if net.in_flight() > 0 {
            if let AgentAction::Routing(a) = agent.act(&routing_observe(topo, net), true, rng)?.0 {
                for (slot, x) in acts.iter_mut().zip(a) {
                    *slot = x.and_then(RouteAction::from_index);
                }
            }
        }
    }
    fill_actions(topo, net, &mut acts);
    Ok(acts)
}

fn fill_actions(topo: &Topology, net: &NetState, acts: &mut [Option<RouteAction>]) {
    for (lane, act) in net.lanes.iter().zip(acts.iter_mut()) {
        let Some(p) = lane else {
            *act = None;
            continue;
        };
        let mask = topo.legal_actions(p);
        if act.is_some_and(|a| mask[a.index()]) {
            continue;
        }
        *act = topo
            .greedy_action(p)
            .or_else(|| (0..5).find(|&k| mask[k]).and_then(RouteAction::from_index));
    }
}

/// Association held for an episode, with one transmit power per active
/// GBS–satellite link.
#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub matrix: AssociationMatrix,
    pub cluster: ClusterState,
    /// Serving (gbs, satellite) of each RUE.
    pub serving: Vec<Option<(usize, usize)>>,
    /// Distinct (gbs, satellite) links in ascending order.
    pub links: Vec<(usize, usize)>,
    pub link_of: Vec<Option<usize>>,
    /// Link indices of each GBS.
    pub groups: Vec<Vec<usize>>,
    pub p_max_w: f64,
}

impl Association {
    pub fn new(matrix: AssociationMatrix, cluster: ClusterState, p_max_w: f64) -> Self {
        let serving: Vec<Option<(usize, usize)>> = (0..matrix.num_rues).map(|u| matrix.serving(u)).collect();
        let mut links: Vec<(usize, usize)> = serving.iter().flatten().copied().collect();
        links.sort_unstable();
        links.dedup();
        let link_of = serving.iter().map(|s| s.and_then(|x| links.binary_search(&x).ok())).collect();
        let mut groups = vec![Vec::new(); matrix.num_gbs];
        for (l, &(b, _)) in links.iter().enumerate() {
            groups[b].push(l);
        }
        Self {
            matrix,
            cluster,
            serving,
            links,
            link_of,
            groups,
            p_max_w,
        }
    }

    /// Equal split of each GBS budget over its links.
    pub fn uniform_power(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.links.len()];
        for g in &self.groups {
            for &l in g {
                p[l] = self.p_max_w / g.len() as f64;
            }
        }
        p
    }

    /// GBS budgets violated by `power` beyond a relative tolerance.
    pub fn power_violations(&self, power: &[f64]) -> usize {
        self.groups
            .iter()
            .filter(|g| g.iter().map(|&l| power[l]).sum::<f64>() > self.p_max_w * (1.0 + 1e-9))
            .count()
            + power.iter().filter(|&&p| p < 0.0).count()
    }
}

/// A slot's routed link for one RUE.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLink {
    pub gbs: usize,
    /// Satellites from entry to serving.
    pub sats: Vec<usize>,
    pub desc: PathDescription,
    pub budget: LinkBudget,
    /// Residual-mode phase bases of the serving panel.
    pub bases: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub topos: Vec<Topology>,
    /// `links[t][u]`: probe link, `None` when the RUE is not served.
    pub links: Vec<Vec<Option<SlotLink>>>,
}

impl Plan {
    pub fn slots(&self) -> usize {
        self.topos.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBook {
    /// SNR per watt, `gamma[t][u]`.
    pub gamma: Vec<Vec<f64>>,
    pub active: Vec<Vec<bool>>,
    pub ps_reward: Vec<Vec<f64>>,
}

impl ChannelBook {
    pub fn active_pairs(&self) -> usize {
        self.active.iter().flatten().filter(|&&a| a).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrafficOutcome {
    pub delivered: Vec<Packet>,
    pub dropped: Vec<Packet>,
    pub trace: Vec<TraceRow>,
    pub in_flight: usize,
}

/// Joint routing and phase environment over a fixed association and power
/// allocation. Each step is one slot; the phase agent drives the serving
/// panel of one focal RUE per slot, cycling through the served RUEs.
#[derive(Debug, Clone)]
pub struct SpaceRisEnv {
    world: Arc<World>,
    plan: Arc<Plan>,
    lanes: usize,
    phase_elements: usize,
    t: usize,
    net: NetState,
    gamma_prev: Vec<f64>,
}

impl SpaceRisEnv {
    pub fn new(world: Arc<World>, plan: Arc<Plan>) -> Self {
        let lanes = world.scenario.traffic.max_packets;
        let phase_elements = world.params.elements();
        let rues = world.num_rues();
        Self {
            world,
            plan,
            lanes,
            phase_elements,
            t: 0,
            net: NetState::new(lanes),
            gamma_prev: vec![0.0; rues],
        }
    }

    fn focal(&self) -> Option<usize> {
        let row = self.plan.links.get(self.t)?;
        let served: Vec<usize> = (0..row.len()).filter(|&u| row[u].is_some()).collect();
        (!served.is_empty()).then(|| served[self.t % served.len()])
    }

    fn arrivals(&mut self, rng: &mut Rng) {
        let Some(topo) = self.plan.topos.get(self.t) else { return };
        let traffic = &self.world.scenario.traffic;
        let dests = spawn_arrivals(rng, traffic.arrival_rate, self.world.num_rues());
        self.net.inject(topo, &dests, traffic.packet_size_bits);
    }
}

impl MultiAgentEnv for SpaceRisEnv {
    fn routing_lanes(&self) -> usize {
        self.lanes
    }

    fn phase_dim(&self) -> usize {
        self.phase_elements
    }

    fn reset(&mut self, rng: &mut Rng) -> Result<(), MappoError> {
        if self.plan.slots() == 0 {
            return Err(MappoError::Env("plan has no slots".into()));
        }
        self.t = 0;
        self.net = NetState::new(self.lanes);
        self.gamma_prev.iter_mut().for_each(|g| *g = 0.0);
        self.arrivals(rng);
        Ok(())
    }

    fn observe(&self) -> Observation {
        let topo = &self.plan.topos[self.t];
        let phase = self.focal().map(|u| {
            let link = self.plan.links[self.t][u].as_ref().unwrap();
            AgentObs {
                features: ps_observe(link.budget.total_db, self.gamma_prev[u], &link.desc.geometry),
                masks: None,
            }
        });
        Observation {
            routing: Some(routing_observe(topo, &self.net)),
            phase,
        }
    }

    fn step(&mut self, action: &JointAction, rng: &mut Rng) -> Result<StepFeedback, MappoError> {
        let topo = &self.plan.topos[self.t];
        let mut acts = action.routing.clone().unwrap_or_else(|| vec![None; self.lanes]);
        if acts.len() != self.lanes {
            return Err(MappoError::Env(format!("{} routing actions for {} lanes", acts.len(), self.lanes)));
        }
        fill_actions(topo, &self.net, &mut acts);
        let inf = vec![f64::INFINITY; self.world.num_rues()];
        let traffic = self.world.scenario.traffic;
        let out = self.net.step(topo, &acts, &inf, &traffic, &self.world.scenario.geo)?;
        let mut phase_reward = None;
        if let (Some(u), Some(z)) = (self.focal(), action.phase.as_ref()) {
            if z.len() != self.phase_elements {
                return Err(MappoError::Env(format!("{} phases for {} elements", z.len(), self.phase_elements)));
            }
            let link = self.plan.links[self.t][u].as_ref().unwrap();
            let (g, r) = self.world.evaluate_link(link, self.t, u, Some(z)).map_err(|e| match e {
                WorldError::Channel(c) => MappoError::Channel(c),
                other => MappoError::Env(other.to_string()),
            })?;
            self.gamma_prev[u] = g;
            phase_reward = Some(r);
        }
        self.t += 1;
        let done = self.t >= self.plan.slots();
        if !done {
            self.arrivals(rng);
        }
        Ok(StepFeedback {
            routing_reward: routing_reward(&out.remaining),
            phase_reward,
            done,
            delivered: out.delivered,
            dropped: out.dropped,
        })
    }
}
