//! Parameter sweeps: rate against RUE distance and RIS size, latency
//! against packet size and training reward against minibatch size.

use crate::bcd::{self, BcdError};
use crate::mappo::{self, Agents, TrainConfig};
use crate::output::{num, ResultTable};
use crate::rng::derive_seed;
use crate::scenario::Scenario;
use crate::world::{SpaceRisEnv, World};
use serde::Serialize;
use std::str::FromStr;
use std::sync::Arc;

const TAG_BATCH: u64 = 0x4241_5443;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Distance,
    RisElements,
    PacketSize,
    BatchSize,
}

impl SweepKind {
    pub const ALL: [SweepKind; 4] = [Self::Distance, Self::RisElements, Self::PacketSize, Self::BatchSize];

    pub fn name(self) -> &'static str {
        match self {
            Self::Distance => "distance",
            Self::RisElements => "ris_elements",
            Self::PacketSize => "packet_size",
            Self::BatchSize => "batch_size",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Self::Distance => vec![0.0, 300.0, 600.0, 900.0, 1200.0],
            Self::RisElements => vec![4.0, 8.0, 16.0, 32.0],
            Self::PacketSize => vec![2000.0, 4000.0, 8000.0, 16000.0],
            Self::BatchSize => vec![8.0, 16.0, 32.0, 64.0],
        }
    }
}

impl FromStr for SweepKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown sweep kind {s:?}"))
    }
}

/// Schemes compared at each rate sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    Ris,
    NonRis,
    FairnessP,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Self::Ris, Self::NonRis, Self::FairnessP];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ris => "ris",
            Self::NonRis => "nonris",
            Self::FairnessP => "fairness_p",
        }
    }

    pub fn apply(self, s: &mut Scenario) {
        s.baselines.nonris = self == Self::NonRis;
        s.baselines.fairness_p = self == Self::FairnessP;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub x: f64,
    pub scheme: &'static str,
    /// Mean rate (bps), mean latency (s) or final reward, per sweep kind.
    pub value: f64,
    pub feasible: bool,
    /// Error message when the point failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Values of one scheme in grid order (NaN for failed points).
    pub fn series(&self, scheme: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.scheme == scheme).map(|r| r.value).collect()
    }

    pub fn table(&self) -> ResultTable {
        let (schema, x, xu, v, vu) = match self.kind {
            SweepKind::Distance => ("rate_vs_distance", "distance_km", "km", "mean_rate_bps", "bps"),
            SweepKind::RisElements => ("rate_vs_nr", "num_elements", "-", "mean_rate_bps", "bps"),
            SweepKind::PacketSize => ("latency_vs_size", "packet_size_bits", "bit", "mean_latency_s", "s"),
            SweepKind::BatchSize => ("reward_vs_batch", "minibatch", "-", "reward_mean", "-"),
        };
        let mut t = ResultTable::new(schema, &[(x, xu), ("scheme", "-"), (v, vu), ("feasible", "bool"), ("error", "-")]);
        for r in &self.rows {
            t.rows.push(vec![
                num(r.x),
                r.scheme.into(),
                if r.error.is_some() { String::new() } else { num(r.value) },
                r.feasible.to_string(),
                r.error.clone().unwrap_or_default(),
            ]);
        }
        t
    }
}

fn rate_point(s: &Scenario, workers: usize) -> Result<(f64, bool), BcdError> {
    let sol = bcd::solve(s, workers)?;
    Ok((sol.evaluation.mean_rate(), sol.report.feasible()))
}

fn latency_point(s: &Scenario, workers: usize) -> Result<(f64, bool), BcdError> {
    let sol = bcd::solve(s, workers)?;
    Ok((sol.report.mean_latency_s, sol.report.feasible()))
}

fn row(x: f64, scheme: &'static str, r: Result<(f64, bool), String>) -> SweepRow {
    match r {
        Ok((value, feasible)) => SweepRow {
            x,
            scheme,
            value,
            feasible,
            error: None,
        },
        Err(e) => {
            log::warn!("sweep point {x} ({scheme}) failed: {e}");
            SweepRow {
                x,
                scheme,
                value: f64::NAN,
                feasible: false,
                error: Some(e),
            }
        }
    }
}

/// Final mean episode reward per agent after one training call.
fn batch_point(s: &Scenario, workers: usize) -> Result<Vec<(&'static str, f64)>, String> {
    let world = Arc::new(World::new(s).map_err(|e| e.to_string())?);
    let assoc = world.associate().map_err(|e| e.to_string())?;
    let plan = Arc::new(world.plan(&assoc, s.mappo.episode_slots).map_err(|e| e.to_string())?);
    let env = SpaceRisEnv::new(world, plan);
    let seed = derive_seed(s.seed, &[TAG_BATCH]);
    let mut agents = Agents::for_env(&env, &s.mappo, seed);
    let cfg = TrainConfig {
        total_steps: s.mappo.total_steps,
        workers,
        seed,
    };
    let rep = mappo::train(&env, &mut agents, &s.mappo, &cfg).map_err(|e| e.to_string())?;
    let last = rep.iterations.saturating_sub(1);
    Ok(rep.curve.iter().filter(|r| r.iter == last).map(|r| (r.agent, r.reward_mean)).collect())
}

/// Runs a sweep. Failed points are kept as rows carrying the error.
pub fn run(kind: SweepKind, scenario: &Scenario, grid: &[f64], workers: usize) -> Result<SweepResult, String> {
    if grid.is_empty() {
        return Err("sweep grid is empty".into());
    }
    let mut rows = Vec::new();
    for &x in grid {
        match kind {
            SweepKind::Distance | SweepKind::RisElements => {
                for scheme in Scheme::ALL {
                    let mut s = scenario.clone();
                    scheme.apply(&mut s);
                    if kind == SweepKind::Distance {
                        s.actors.rue_offset_km = Some(x);
                    } else {
                        s.ris.num_elements = x.round().max(1.0) as usize;
                    }
                    rows.push(row(x, scheme.name(), rate_point(&s, workers).map_err(|e| e.to_string())));
                }
            }
            SweepKind::PacketSize => {
                let mut s = scenario.clone();
                s.traffic.packet_size_bits = x;
                rows.push(row(x, Scheme::Ris.name(), latency_point(&s, workers).map_err(|e| e.to_string())));
            }
            SweepKind::BatchSize => {
                let mut s = scenario.clone();
                s.mappo.minibatch = x.round().max(1.0) as usize;
                match batch_point(&s, workers) {
                    Ok(rs) => rows.extend(rs.into_iter().map(|(agent, v)| row(x, agent, Ok((v, true))))),
                    Err(e) => rows.push(row(x, "all", Err(e))),
                }
            }
        }
    }
    Ok(SweepResult { kind, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> Scenario {
        let mut s = Scenario::default();
        s.mappo.episode_slots = 4;
        s.mappo.total_steps = 0;
        s.woa.pop_size = 8;
        s.woa.max_iters = 20;
        s.bcd.rounds = 1;
        s
    }

    #[test]
    fn kinds_parse() {
        for k in SweepKind::ALL {
            assert_eq!(k.name().parse::<SweepKind>().unwrap(), k);
        }
        assert!("nope".parse::<SweepKind>().is_err());
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(run(SweepKind::Distance, &desk(), &[], 1).is_err());
    }

    #[test]
    fn ris_elements_sweep_shapes() {
        let r = run(SweepKind::RisElements, &desk(), &[4.0, 8.0], 1).unwrap();
        assert_eq!(r.rows.len(), 6);
        let ris = r.series("ris");
        let non = r.series("nonris");
        assert!(ris[1] >= ris[0]);
        assert!(non.iter().zip(&ris).all(|(n, r)| n <= r));
        let t = r.table();
        assert_eq!(t.schema, "rate_vs_nr");
        assert_eq!(t.rows.len(), 6);
    }

    #[test]
    fn latency_grows_with_size() {
        let r = run(SweepKind::PacketSize, &desk(), &[1000.0, 4000.0], 1).unwrap();
        let v = r.series("ris");
        assert!(v[1] > v[0], "{v:?}");
    }

    #[test]
    fn batch_sweep_reports_each_agent() {
        let mut s = desk();
        s.mappo.total_steps = 32;
        s.mappo.iters_per_update = 2;
        s.mappo.actor_hidden = vec![8];
        let r = run(SweepKind::BatchSize, &s, &[8.0], 1).unwrap();
        let agents: Vec<&str> = r.rows.iter().map(|r| r.scheme).collect();
        assert_eq!(agents, vec!["RO", "PS"]);
    }
}
