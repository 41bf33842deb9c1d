//! Versioned CSV tables: a provenance comment line, the header row and a
//! units row, then data rows. UTF-8, LF line endings.

use crate::bcd::{BcdSolution, RoundRow};
use crate::channel::LinkBudget;
use crate::mappo::CurveRow;
use crate::netsim::TraceRow;
use crate::woa;
use crate::world::{Association, World};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

/// Run identity echoed into every table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunStamp {
    pub config_sha256: String,
    pub seed: u64,
    pub workers: usize,
}

impl RunStamp {
    pub fn new(config: &[u8], seed: u64, workers: usize) -> Self {
        let digest = Sha256::digest(config);
        let config_sha256 = digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Self {
            config_sha256,
            seed,
            workers,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("table {schema}: row has {got} fields, schema has {expected}")]
    Width { schema: String, expected: usize, got: usize },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A named table with a fixed column schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub schema: &'static str,
    pub columns: Vec<&'static str>,
    pub units: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Shortest round-trip form; exponent notation for very small or large
/// magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

impl ResultTable {
    pub fn new(schema: &'static str, columns: &[(&'static str, &'static str)]) -> Self {
        Self {
            schema,
            columns: columns.iter().map(|c| c.0).collect(),
            units: columns.iter().map(|c| c.1).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<(), OutputError> {
        if row.len() != self.columns.len() {
            return Err(OutputError::Width {
                schema: self.schema.into(),
                expected: self.columns.len(),
                got: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn render(&self, stamp: &RunStamp) -> String {
        let mut s = format!(
            "# spaceris schema={}/v1 config_sha256={} seed={} workers={}\n",
            self.schema, stamp.config_sha256, stamp.seed, stamp.workers
        );
        for line in std::iter::once(&self.columns).chain(std::iter::once(&self.units)) {
            s.push_str(&line.join(","));
            s.push('\n');
        }
        for r in &self.rows {
            let fields: Vec<String> = r.iter().map(|f| quote(f)).collect();
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }

    /// Writes `<dir>/<schema>.csv`.
    pub fn write(&self, dir: &Path, stamp: &RunStamp) -> Result<std::path::PathBuf, OutputError> {
        let path = dir.join(format!("{}.csv", self.schema));
        std::fs::write(&path, self.render(stamp)).map_err(|source| OutputError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }
}

pub fn woa_table(trace: &[woa::TraceRow]) -> ResultTable {
    let mut t = ResultTable::new(
        "woa_trace",
        &[("iter", "-"), ("best_fitness", "-"), ("mean_fitness", "-"), ("violations", "count")],
    );
    for r in trace {
        t.rows.push(vec![r.iter.to_string(), num(r.best_fitness), num(r.mean_fitness), r.violations.to_string()]);
    }
    t
}

pub fn bcd_table(trace: &[RoundRow]) -> ResultTable {
    let mut t = ResultTable::new(
        "bcd_trace",
        &[("round", "-"), ("block", "-"), ("objective", "bps"), ("feasible", "bool")],
    );
    for r in trace {
        t.rows.push(vec![r.round.to_string(), r.block.into(), num(r.objective), r.feasible.to_string()]);
    }
    t
}

pub fn curve_table(curve: &[CurveRow]) -> ResultTable {
    let mut t = ResultTable::new(
        "learning_curve",
        &[
            ("iter", "-"),
            ("agent", "-"),
            ("reward_mean", "-"),
            ("reward_std", "-"),
            ("value_loss", "-"),
            ("policy_loss", "-"),
        ],
    );
    for r in curve {
        t.rows.push(vec![
            r.iter.to_string(),
            r.agent.into(),
            num(r.reward_mean),
            num(r.reward_std),
            num(r.value_loss),
            num(r.policy_loss),
        ]);
    }
    t
}

pub fn episode_table(trace: &[TraceRow]) -> ResultTable {
    let mut t = ResultTable::new(
        "episode_trace",
        &[
            ("slot", "slot"),
            ("packet", "-"),
            ("node", "-"),
            ("action", "-"),
            ("remaining_m", "m"),
            ("delivered", "bool"),
        ],
    );
    for r in trace {
        t.rows.push(vec![
            r.slot.to_string(),
            r.packet.to_string(),
            r.node.clone(),
            r.action.into(),
            num(r.remaining_m),
            r.delivered.to_string(),
        ]);
    }
    t
}

/// Serving satellite of each RUE with the slot-0 RUE–satellite distance.
pub fn association_table(world: &World, assoc: &Association) -> ResultTable {
    let mut t = ResultTable::new(
        "association",
        &[("rue", "-"), ("cluster", "-"), ("satellite", "-"), ("distance_m", "m")],
    );
    let state = world.constellation.state(0, &world.scenario.geo);
    for (u, sv) in assoc.serving.iter().enumerate() {
        let cluster = assoc.cluster.assignment[u].to_string();
        let (sat, d) = match sv {
            Some((_, s)) => (s.to_string(), num(crate::geometry::distance(state.positions[*s], world.rue_pos[u]))),
            None => (String::new(), String::new()),
        };
        t.rows.push(vec![u.to_string(), cluster, sat, d]);
    }
    t
}

pub fn power_table(assoc: &Association, power: &[f64]) -> ResultTable {
    let mut t = ResultTable::new("power", &[("gbs", "-"), ("satellite", "-"), ("power_w", "W")]);
    for (&(b, s), &p) in assoc.links.iter().zip(power) {
        t.rows.push(vec![b.to_string(), s.to_string(), num(p)]);
    }
    t
}

pub fn summary_table(sol: &BcdSolution) -> ResultTable {
    let mut t = ResultTable::new("summary", &[("metric", "-"), ("value", "-")]);
    let r = &sol.report;
    let rows: [(&str, String); 11] = [
        ("objective_bps", num(sol.objective)),
        ("mean_rate_bps", num(sol.evaluation.mean_rate())),
        ("active_pairs", r.active_pairs.to_string()),
        ("qos_rues", r.qos_rues.to_string()),
        ("delay_violations", r.delay_violations.to_string()),
        ("power_violations", r.power_violations.to_string()),
        ("delivered", r.delivered.to_string()),
        ("dropped", r.dropped.to_string()),
        ("mean_latency_s", num(r.mean_latency_s)),
        ("rounds", sol.rounds_run.to_string()),
        ("feasible", r.feasible().to_string()),
    ];
    for (k, v) in rows {
        t.rows.push(vec![k.into(), v]);
    }
    t
}

/// Six loss components plus the total, in dB.
pub fn linkbudget_table(b: &LinkBudget) -> ResultTable {
    let mut t = ResultTable::new("linkbudget", &[("component", "-"), ("db", "dB")]);
    for (name, db) in b.components() {
        t.rows.push(vec![name.into(), num(db)]);
    }
    t.rows.push(vec!["total_db".into(), num(b.total_db)]);
    t
}
