//! Scenario configuration: a strict JSON schema whose every field has a
//! default, so an empty file yields the reference setup.

use crate::channel::{AntennaGains, LossConfig, PlasmaConstants};
use crate::geometry::{Constellation, GeoConstants};
use crate::link::LinkParams;
use crate::mappo::PpoHyper;
use crate::netsim::TrafficConfig;
use crate::woa::WoaHyper;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error("invalid value for {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstellationConfig {
    pub num_planes: usize,
    pub sats_per_plane: usize,
    pub altitude_m: f64,
    pub inclination_deg: f64,
    pub min_elev_deg: f64,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        Self {
            num_planes: 3,
            sats_per_plane: 22,
            altitude_m: 500e3,
            inclination_deg: 87.0,
            min_elev_deg: 12.0,
        }
    }
}

impl ConstellationConfig {
    pub fn build(&self) -> Constellation {
        Constellation::walker_star(
            self.num_planes,
            self.sats_per_plane,
            self.altitude_m,
            self.inclination_deg.to_radians(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub loss: LossConfig,
    pub plasma_consts: PlasmaConstants,
    pub rician_k_h: f64,
    pub rician_k_g: f64,
    pub bandwidth_hz: f64,
    /// Noise power spectral density N_o, W/Hz.
    pub noise_psd: f64,
    pub gbs_gain_dbi: f64,
    pub rue_gain_dbi: f64,
    pub gbs_antennas: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            plasma_consts: PlasmaConstants::default(),
            rician_k_h: 10.0,
            rician_k_g: 10.0,
            bandwidth_hz: 1e9,
            noise_psd: 3.98e-20,
            gbs_gain_dbi: 60.0,
            rue_gain_dbi: 50.0,
            gbs_antennas: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RisConfig {
    pub num_elements: usize,
    pub element_size_m: [f64; 2],
}

impl Default for RisConfig {
    fn default() -> Self {
        Self {
            num_elements: 8,
            element_size_m: [1.5e-3, 1.5e-3],
        }
    }
}

/// Ground actors. Sites are `[lat_deg, lon_deg]`; when absent they are drawn
/// from a Poisson process inside discs around the serving footprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActorsConfig {
    pub num_gbs: usize,
    pub num_rues: usize,
    /// Per-GBS transmit power budget, W.
    pub p_max_w: f64,
    /// Satellites serving the area at slot 0 (BKMC cluster count).
    pub num_clusters: usize,
    /// RUE density per km²; when set the RUE count is Poisson over the
    /// footprint discs instead of `num_rues`.
    pub hppp_intensity_per_km2: Option<f64>,
    /// Radius of the GBS disc around the area centre.
    pub gbs_radius_km: f64,
    /// Radius of each RUE disc around a footprint centre.
    pub rue_radius_km: f64,
    /// Place the RUEs on a ring at this ground distance from the area centre.
    pub rue_offset_km: Option<f64>,
    pub gbs_sites_deg: Option<Vec<[f64; 2]>>,
    pub rue_sites_deg: Option<Vec<[f64; 2]>>,
}

impl Default for ActorsConfig {
    fn default() -> Self {
        Self {
            num_gbs: 1,
            num_rues: 8,
            p_max_w: 10.0,
            num_clusters: 2,
            hppp_intensity_per_km2: None,
            gbs_radius_km: 100.0,
            rue_radius_km: 600.0,
            rue_offset_km: None,
            gbs_sites_deg: None,
            rue_sites_deg: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcdConfig {
    pub rounds: usize,
    /// Relative improvement below which the rounds stop.
    pub tol: f64,
}

impl Default for BcdConfig {
    fn default() -> Self {
        Self { rounds: 3, tol: 0.01 }
    }
}

/// Comparison schemes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Single unit-amplitude element per satellite (plain relay).
    pub nonris: bool,
    /// Uniform power per GBS; the power block is skipped.
    pub fairness_p: bool,
}

/// Fixed GBS → satellite → RUE path for the `linkbudget` subcommand, as
/// `[lat_deg, lon_deg]` ground sites and the satellite's sub-point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceLink {
    pub gbs_deg: [f64; 2],
    pub sat_deg: [f64; 2],
    pub rue_deg: [f64; 2],
}

impl Default for ReferenceLink {
    fn default() -> Self {
        Self {
            gbs_deg: [2.0, -1.0],
            sat_deg: [0.0, 0.0],
            rue_deg: [-1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub constellation: ConstellationConfig,
    pub geo: GeoConstants,
    pub channel: ChannelConfig,
    pub ris: RisConfig,
    pub actors: ActorsConfig,
    pub traffic: TrafficConfig,
    pub mappo: PpoHyper,
    pub woa: WoaHyper,
    pub bcd: BcdConfig,
    pub baselines: BaselineConfig,
    pub reference_link: ReferenceLink,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            constellation: ConstellationConfig::default(),
            geo: GeoConstants::default(),
            channel: ChannelConfig::default(),
            ris: RisConfig::default(),
            actors: ActorsConfig::default(),
            traffic: TrafficConfig::default(),
            mappo: PpoHyper::default(),
            woa: WoaHyper::default(),
            bcd: BcdConfig::default(),
            baselines: BaselineConfig::default(),
            reference_link: ReferenceLink::default(),
            seed: 0,
        }
    }
}

fn positive(field: &str, x: f64) -> Result<(), ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {x}")))
    }
}

fn non_negative(field: &str, x: f64) -> Result<(), ConfigError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be non-negative and finite, got {x}")))
    }
}

fn sites(field: &str, s: &Option<Vec<[f64; 2]>>, expected: Option<usize>) -> Result<(), ConfigError> {
    let Some(s) = s else { return Ok(()) };
    if let Some(n) = expected {
        if s.len() != n {
            return Err(invalid(field, format!("{} sites for {n} actors", s.len())));
        }
    }
    for [lat, lon] in s {
        if !(lat.abs() <= 90.0 && lon.is_finite()) {
            return Err(invalid(field, format!("bad site [{lat}, {lon}]")));
        }
    }
    Ok(())
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.constellation;
        if c.num_planes == 0 || c.sats_per_plane == 0 {
            return Err(invalid("constellation", "num_planes and sats_per_plane must be at least 1"));
        }
        positive("constellation.altitude_m", c.altitude_m)?;
        if !(0.0..=180.0).contains(&c.inclination_deg) {
            return Err(invalid("constellation.inclination_deg", "must lie in [0, 180]"));
        }
        if !(0.0..90.0).contains(&c.min_elev_deg) {
            return Err(invalid("constellation.min_elev_deg", "must lie in [0, 90)"));
        }
        positive("geo.earth_radius_m", self.geo.earth_radius_m)?;
        positive("geo.light_speed_m_s", self.geo.light_speed_m_s)?;
        positive("geo.slot_seconds", self.geo.slot_seconds)?;
        positive("geo.grav_const", self.geo.grav_const)?;
        positive("geo.earth_mass_kg", self.geo.earth_mass_kg)?;
        self.channel
            .loss
            .validate()
            .map_err(|e| invalid("channel.loss", e.to_string()))?;
        non_negative("channel.rician_k_h", self.channel.rician_k_h)?;
        non_negative("channel.rician_k_g", self.channel.rician_k_g)?;
        positive("channel.bandwidth_hz", self.channel.bandwidth_hz)?;
        positive("channel.noise_psd", self.channel.noise_psd)?;
        if self.channel.gbs_antennas == 0 {
            return Err(invalid("channel.gbs_antennas", "must be at least 1"));
        }
        if self.ris.num_elements == 0 {
            return Err(invalid("ris.num_elements", "must be at least 1"));
        }
        positive("ris.element_size_m[0]", self.ris.element_size_m[0])?;
        positive("ris.element_size_m[1]", self.ris.element_size_m[1])?;
        let a = &self.actors;
        if a.num_gbs == 0 || a.num_rues == 0 || a.num_clusters == 0 {
            return Err(invalid("actors", "num_gbs, num_rues and num_clusters must be at least 1"));
        }
        if a.num_clusters > a.num_rues {
            return Err(invalid("actors.num_clusters", "cannot exceed num_rues"));
        }
        positive("actors.p_max_w", a.p_max_w)?;
        non_negative("actors.gbs_radius_km", a.gbs_radius_km)?;
        non_negative("actors.rue_radius_km", a.rue_radius_km)?;
        if let Some(d) = a.rue_offset_km {
            non_negative("actors.rue_offset_km", d)?;
        }
        if let Some(l) = a.hppp_intensity_per_km2 {
            positive("actors.hppp_intensity_per_km2", l)?;
        }
        sites("actors.gbs_sites_deg", &a.gbs_sites_deg, Some(a.num_gbs))?;
        let rue_count = a.hppp_intensity_per_km2.is_none().then_some(a.num_rues);
        sites("actors.rue_sites_deg", &a.rue_sites_deg, rue_count)?;
        let t = &self.traffic;
        positive("traffic.packet_size_bits", t.packet_size_bits)?;
        non_negative("traffic.arrival_rate", t.arrival_rate)?;
        positive("traffic.psi_max_s", t.psi_max_s)?;
        if t.max_packets == 0 || t.max_hops == 0 {
            return Err(invalid("traffic", "max_packets and max_hops must be at least 1"));
        }
        self.mappo.validate().map_err(|e| invalid("mappo", e))?;
        if self.mappo.episode_slots == 0 {
            return Err(invalid("mappo.episode_slots", "must be at least 1"));
        }
        self.woa.validate().map_err(|e| invalid("woa", e.to_string()))?;
        if self.bcd.rounds == 0 {
            return Err(invalid("bcd.rounds", "must be at least 1"));
        }
        if !(self.bcd.tol >= 0.0) {
            return Err(invalid("bcd.tol", "must be non-negative"));
        }
        Ok(())
    }

    pub fn constellation(&self) -> Constellation {
        self.constellation.build()
    }

    pub fn min_elev_rad(&self) -> f64 {
        self.constellation.min_elev_deg.to_radians()
    }

    pub fn link_params(&self) -> LinkParams {
        let ch = &self.channel;
        LinkParams {
            loss: ch.loss,
            plasma_consts: ch.plasma_consts,
            gains: AntennaGains::from_dbi(ch.gbs_gain_dbi, ch.rue_gain_dbi),
            gbs_antennas: ch.gbs_antennas,
            ris_elements: self.ris.num_elements,
            element_size_m: (self.ris.element_size_m[0], self.ris.element_size_m[1]),
            rician_k_h: ch.rician_k_h,
            rician_k_g: ch.rician_k_g,
            noise_psd: ch.noise_psd,
            nonris: self.baselines.nonris,
        }
    }

    /// Parses and validates JSON text. Empty or whitespace-only text is the
    /// default scenario.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = if text.trim().is_empty() {
            Scenario::default()
        } else {
            serde_json::from_str(text).map_err(|e| ConfigError::Schema {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?
        };
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<Scenario, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        let s = Scenario::from_json("").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(Scenario::from_json("{}").unwrap(), s);
    }

    #[test]
    fn defaults_match_reference_table() {
        let s = Scenario::default();
        assert_eq!(s.constellation.altitude_m, 500e3);
        assert_eq!(s.constellation.sats_per_plane, 22);
        assert_eq!(s.constellation.min_elev_deg, 12.0);
        assert_eq!(s.channel.loss.fc_hz, 0.1e12);
        assert_eq!(s.mappo.lr, 3e-4);
        assert_eq!(s.mappo.gamma, 0.95);
        assert_eq!(s.mappo.episode_slots, 513);
        assert_eq!(s.mappo.actor_hidden, vec![128, 128]);
        assert_eq!(s.mappo.critic_hidden, vec![16, 16]);
        assert_eq!(s.geo.earth_radius_m, 6_378_100.0);
        assert_eq!(s.geo.slot_seconds, 10.0);
    }

    #[test]
    fn rejects_bad_values() {
        let e = Scenario::from_json(r#"{"constellation": {"altitude_m": -1}}"#).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref field, .. } if field == "constellation.altitude_m"));
        let e = Scenario::from_json(r#"{"actors": {"num_gbs": 2, "gbs_sites_deg": [[0, 0]]}}"#).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { .. }));
    }

    #[test]
    fn rejects_unknown_keys_with_position() {
        let e = Scenario::from_json("{\n  \"ris\": {\"elements\": 4}\n}").unwrap_err();
        match e {
            ConfigError::Schema { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("elements"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Scenario::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut s = Scenario::default();
        s.seed = 7;
        s.ris.num_elements = 16;
        s.actors.rue_sites_deg = Some(vec![[1.0, 2.0]; 8]);
        s.actors.hppp_intensity_per_km2 = None;
        let again = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.to_json(), s.to_json());
    }

    #[test]
    fn parse_config_reads_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "").unwrap();
        assert_eq!(parse_config(&p).unwrap(), Scenario::default());
        assert!(matches!(parse_config(dir.path().join("missing.json")), Err(ConfigError::Io { .. })));
    }
}
