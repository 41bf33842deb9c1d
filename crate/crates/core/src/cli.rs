//! Command-line front end: subcommands that load a scenario, run a block of
//! the pipeline and write versioned CSV tables under `--out`.

use crate::bcd::{self, BcdError};
use crate::geometry::{self, GroundSite};
use crate::link::{PathDescription, PathNodes};
use crate::mappo::{self, Agents, MappoError, TrainConfig};
use crate::output::{self, num, OutputError, ResultTable, RunStamp};
use crate::rng::derive_seed;
use crate::scenario::{parse_config, ConfigError, Scenario};
use crate::sweep::{self, SweepKind};
use crate::world::{SpaceRisEnv, World, WorldError};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::sync::Arc;

const TAG_TRAIN: u64 = 0x5452_4e31;

#[derive(Debug, Parser)]
#[command(name = "spaceris", version, about = "RIS-assisted LEO sub-THz downlink simulator")]
pub struct Cli {
    /// Scenario JSON; the built-in defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for rollouts and fitness evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full joint optimization (association, MAPPO, WOA power).
    Simulate,
    /// Trains the routing and phase agents on the scenario.
    Train,
    /// Per-slot satellite positions and orbit quantities.
    Geometry {
        /// Slots to dump; defaults to one episode.
        #[arg(long)]
        slots: Option<u64>,
    },
    /// Loss components of the reference link.
    Linkbudget,
    /// Parameter sweep.
    Sweep {
        /// distance, ris_elements, packet_size or batch_size.
        #[arg(long)]
        kind: SweepKind,
        /// Comma-separated grid; defaults per kind.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Bcd(#[from] BcdError),
    #[error(transparent)]
    Mappo(#[from] MappoError),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(ConfigError::Io { .. }) => "config_missing",
            Self::Config(_) => "config_invalid",
            Self::Output(_) => "output",
            Self::World(_) | Self::Bcd(_) | Self::Mappo(_) | Self::Run(_) => "run",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }

    /// One-line machine-readable form for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    OutputError::Io {
        path: path.display().to_string(),
        source,
    }
    .into()
}

/// Loads the scenario and applies the flag overrides.
pub fn load_scenario(cli: &Cli) -> Result<Scenario, CliError> {
    let mut s = match &cli.config {
        Some(p) => parse_config(p)?,
        None => Scenario::default(),
    };
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn write_all(dir: &Path, stamp: &RunStamp, tables: &[ResultTable]) -> Result<(), CliError> {
    for t in tables {
        let p = t.write(dir, stamp)?;
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

/// Positions of every satellite for slots `0..slots`.
pub fn positions_table(s: &Scenario, slots: u64) -> ResultTable {
    let mut t = ResultTable::new(
        "geometry",
        &[
            ("slot", "slot"),
            ("plane", "-"),
            ("sat", "-"),
            ("x_m", "m"),
            ("y_m", "m"),
            ("z_m", "m"),
            ("anomaly_rad", "rad"),
        ],
    );
    let c = s.constellation();
    for slot in 0..slots {
        let st = c.state(slot, &s.geo);
        for (i, p) in st.positions.iter().enumerate() {
            let (m, k) = st.grid[i];
            t.rows.push(vec![
                slot.to_string(),
                m.to_string(),
                k.to_string(),
                num(p[0]),
                num(p[1]),
                num(p[2]),
                num(st.anomalies_rad[i]),
            ]);
        }
    }
    t
}

/// Orbital period, slots per revolution and coverage of the first plane.
pub fn orbit_table(s: &Scenario) -> ResultTable {
    let mut t = ResultTable::new("orbit", &[("quantity", "-"), ("value", "-"), ("unit", "-")]);
    let c = s.constellation();
    let plane = &c.planes[0];
    let cov = geometry::coverage(plane, s.min_elev_rad(), &s.geo);
    let rows = [
        ("orbital_period", num(geometry::orbital_period_s(plane, &s.geo)), "s"),
        ("slots_per_revolution", geometry::slots_per_revolution(plane, &s.geo).to_string(), "slot"),
        ("coverage_beta", num(cov.beta_rad.to_degrees()), "deg"),
        ("coverage_area", num(cov.area_m2), "m2"),
        ("num_sats", c.num_sats().to_string(), "-"),
    ];
    for (k, v, u) in rows {
        t.rows.push(vec![k.into(), v, u.into()]);
    }
    t
}

/// Link budget of the configured reference GBS–satellite–RUE path.
pub fn reference_budget(s: &Scenario) -> Result<crate::channel::LinkBudget, CliError> {
    let r = &s.reference_link;
    let site = |d: [f64; 2]| GroundSite::from_degrees(d[0], d[1]);
    let sat = geometry::scale(site(r.sat_deg).unit_vector(), s.geo.earth_radius_m + s.constellation.altitude_m);
    let nodes = PathNodes {
        gbs: site(r.gbs_deg).position(&s.geo),
        sats: vec![sat],
        rue: site(r.rue_deg).position(&s.geo),
    };
    let params = s.link_params();
    let desc = PathDescription::new(&params, &nodes).map_err(|e| CliError::Run(e.to_string()))?;
    desc.budget(&params).map_err(|e| CliError::Run(e.to_string()))
}

fn simulate(s: &Scenario, workers: usize) -> Result<Vec<ResultTable>, CliError> {
    let world = Arc::new(World::new(s)?);
    let sol = bcd::solve_in(world.clone(), workers)?;
    if let Some(d) = &sol.diagnostic {
        log::warn!("rounds stopped early: {d}");
    }
    Ok(vec![
        output::bcd_table(&sol.round_trace),
        output::woa_table(&sol.woa_trace),
        output::curve_table(&sol.learning_curve),
        output::episode_table(&sol.evaluation.traffic.trace),
        output::association_table(&world, &sol.assoc),
        output::power_table(&sol.assoc, &sol.power),
        output::summary_table(&sol),
    ])
}

fn train(s: &Scenario, workers: usize, out: &Path) -> Result<Vec<ResultTable>, CliError> {
    let world = Arc::new(World::new(s)?);
    let assoc = world.associate()?;
    let plan = Arc::new(world.plan(&assoc, s.mappo.episode_slots)?);
    let env = SpaceRisEnv::new(world, plan);
    let seed = derive_seed(s.seed, &[TAG_TRAIN]);
    let mut agents = Agents::for_env(&env, &s.mappo, seed);
    let cfg = TrainConfig {
        total_steps: s.mappo.total_steps,
        workers,
        seed,
    };
    let rep = mappo::train(&env, &mut agents, &s.mappo, &cfg)?;
    let path = out.join("checkpoint.bin");
    let file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    agents
        .save(std::io::BufWriter::new(file))
        .map_err(|e| CliError::Run(e.to_string()))?;
    Ok(vec![output::curve_table(&rep.curve)])
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let s = load_scenario(cli)?;
    let workers = cli.workers.max(1);
    let stamp = RunStamp::new(s.to_json().as_bytes(), s.seed, workers);
    std::fs::create_dir_all(&cli.out).map_err(|e| io_err(&cli.out, e))?;
    let tables = match &cli.command {
        Command::Simulate => simulate(&s, workers)?,
        Command::Train => train(&s, workers, &cli.out)?,
        Command::Geometry { slots } => {
            let slots = slots.unwrap_or(s.mappo.episode_slots as u64);
            vec![positions_table(&s, slots), orbit_table(&s)]
        }
        Command::Linkbudget => vec![output::linkbudget_table(&reference_budget(&s)?)],
        Command::Sweep { kind, grid } => {
            let grid = grid.clone().unwrap_or_else(|| kind.default_grid());
            vec![sweep::run(*kind, &s, &grid, workers).map_err(CliError::Run)?.table()]
        }
    };
    write_all(&cli.out, &stamp, &tables)
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_budget_has_six_components() {
        let b = reference_budget(&Scenario::default()).unwrap();
        let t = output::linkbudget_table(&b);
        assert_eq!(t.rows.len(), 7);
        assert_eq!(t.rows[6][0], "total_db");
        let sum: f64 = b.components().iter().map(|c| c.1).sum();
        assert!((sum - b.gain_db - b.total_db).abs() < 1e-9 * b.total_db.abs());
    }

    #[test]
    fn positions_sit_on_the_shell() {
        let s = Scenario::default();
        let t = positions_table(&s, 2);
        assert_eq!(t.rows.len(), 2 * 66);
        let r = s.geo.earth_radius_m + s.constellation.altitude_m;
        for row in &t.rows {
            let p: Vec<f64> = row[3..6].iter().map(|x| x.parse().unwrap()).collect();
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((n - r).abs() < 1e-9 * r);
        }
    }

    #[test]
    fn missing_config_is_exit_two() {
        let code = main_with_args(["spaceris", "linkbudget", "--config", "/nonexistent/x.json"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn sweep_kind_parses_from_flag() {
        let cli = Cli::try_parse_from(["spaceris", "sweep", "--kind", "ris_elements", "--grid", "4,8"]).unwrap();
        match cli.command {
            Command::Sweep { kind, grid } => {
                assert_eq!(kind, SweepKind::RisElements);
                assert_eq!(grid, Some(vec![4.0, 8.0]));
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
