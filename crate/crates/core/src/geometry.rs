//! Constellation geometry: circular-orbit satellite positions, link distances,
//! elevation angles, coverage footprints and constellation constraint checks.
//!
//! All positions are Earth-centred Cartesian coordinates in metres. Earth
//! rotation is neglected, so ground sites are fixed in this frame.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

pub type Vec3 = [f64; 3];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("geometry inconsistency: arccos argument {0} outside [-1, 1]")]
    Inconsistent(f64),
    #[error("invalid orbital plane: {0}")]
    InvalidPlane(String),
}

pub fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn unit(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Physical constants shared by the orbit and link computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeoConstants {
    pub earth_radius_m: f64,
    pub grav_const: f64,
    pub earth_mass_kg: f64,
    pub light_speed_m_s: f64,
    pub slot_seconds: f64,
}

impl Default for GeoConstants {
    fn default() -> Self {
        Self {
            earth_radius_m: 6_378_100.0,
            grav_const: 6.674e-11,
            earth_mass_kg: 5.9722e24,
            light_speed_m_s: 299_792_458.0,
            slot_seconds: 10.0,
        }
    }
}

impl GeoConstants {
    /// Standard gravitational parameter G·M.
    pub fn mu(&self) -> f64 {
        self.grav_const * self.earth_mass_kg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitalPlane {
    pub inclination_rad: f64,
    /// Right ascension of the ascending node.
    pub raan_rad: f64,
    pub sats: usize,
    pub altitude_m: f64,
    /// Anomaly of satellite 0 at slot 0.
    #[serde(default)]
    pub phase_offset_rad: f64,
}

impl OrbitalPlane {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.altitude_m > 0.0) {
            return Err(GeometryError::InvalidPlane(format!(
                "altitude must be positive, got {}",
                self.altitude_m
            )));
        }
        if !(0.0..=PI).contains(&self.inclination_rad) {
            return Err(GeometryError::InvalidPlane(format!(
                "inclination {} outside [0, pi]",
                self.inclination_rad
            )));
        }
        if self.sats == 0 {
            return Err(GeometryError::InvalidPlane("plane has no satellites".into()));
        }
        Ok(())
    }

    pub fn radius(&self, consts: &GeoConstants) -> f64 {
        self.altitude_m + consts.earth_radius_m
    }

    /// Initial anomaly of a satellite; satellites are equally spaced in the plane.
    pub fn initial_anomaly(&self, sat_index: usize) -> f64 {
        self.phase_offset_rad + TAU * sat_index as f64 / self.sats as f64
    }
}

pub fn orbital_period_s(plane: &OrbitalPlane, consts: &GeoConstants) -> f64 {
    let a = plane.radius(consts);
    TAU * a.powf(1.5) / consts.mu().sqrt()
}

/// Number of slots needed for one revolution, rounded to the nearest integer
/// (at least one).
pub fn slots_per_revolution(plane: &OrbitalPlane, consts: &GeoConstants) -> u64 {
    let slots = orbital_period_s(plane, consts) / consts.slot_seconds;
    (slots.round() as u64).max(1)
}

/// Anomaly of a satellite after `slot` slots; advances by 2π/T_s per slot.
pub fn anomaly(plane: &OrbitalPlane, sat_index: usize, slot: u64, consts: &GeoConstants) -> f64 {
    let ts = slots_per_revolution(plane, consts);
    let phase = (slot % ts) as f64 / ts as f64;
    (plane.initial_anomaly(sat_index) + TAU * phase).rem_euclid(TAU)
}

/// Position on a circular orbit from (inclination, RAAN, anomaly).
pub fn orbit_point(radius: f64, inclination: f64, raan: f64, chi: f64) -> Vec3 {
    let (sc, cc) = chi.sin_cos();
    let (so, co) = raan.sin_cos();
    let (si, ci) = inclination.sin_cos();
    [
        radius * (cc * co - sc * ci * so),
        radius * (cc * so + sc * ci * co),
        radius * (sc * si),
    ]
}

pub fn sat_position(plane: &OrbitalPlane, sat_index: usize, slot: u64, consts: &GeoConstants) -> Vec3 {
    debug_assert!(sat_index < plane.sats);
    let chi = anomaly(plane, sat_index, slot, consts);
    orbit_point(plane.radius(consts), plane.inclination_rad, plane.raan_rad, chi)
}

/// Distance between two satellites on spheres of radii `r_a`, `r_b` separated
/// by the Earth-central angle `delta`.
pub fn sat_sat_distance(r_a: f64, r_b: f64, delta: f64) -> f64 {
    (r_a * r_a + r_b * r_b - 2.0 * r_a * r_b * delta.cos()).max(0.0).sqrt()
}

/// Slant range from a ground point to a satellite at `altitude_m` seen at
/// elevation `elevation_rad`.
pub fn ground_sat_distance(elevation_rad: f64, altitude_m: f64, consts: &GeoConstants) -> f64 {
    let r = consts.earth_radius_m;
    let rs = r * elevation_rad.sin();
    (rs * rs + altitude_m * altitude_m + 2.0 * altitude_m * r).sqrt() - rs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    SatSat,
    GbsSat,
    SatRue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkEnds {
    Positions(Vec3, Vec3),
    /// Two orbit radii and the central angle between them.
    CentralAngle { r_a: f64, r_b: f64, delta: f64 },
    /// Ground link described by elevation and satellite altitude.
    Elevation { elevation_rad: f64, altitude_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDistance {
    pub meters: f64,
    /// Set when both ends coincide.
    pub degenerate: bool,
}

pub fn link_distance(kind: LinkKind, ends: LinkEnds, consts: &GeoConstants) -> LinkDistance {
    let meters = match (kind, ends) {
        (_, LinkEnds::Positions(a, b)) => distance(a, b),
        (_, LinkEnds::CentralAngle { r_a, r_b, delta }) => sat_sat_distance(r_a, r_b, delta),
        (_, LinkEnds::Elevation { elevation_rad, altitude_m }) => {
            ground_sat_distance(elevation_rad, altitude_m, consts)
        }
    };
    LinkDistance {
        meters,
        degenerate: meters == 0.0,
    }
}

/// Elevation of `sat_pos` above the local horizon at `ground_pos`.
pub fn elevation_angle(ground_pos: Vec3, sat_pos: Vec3, consts: &GeoConstants) -> Result<f64, GeometryError> {
    let re = consts.earth_radius_m;
    let rs = norm(sat_pos);
    let d = distance(ground_pos, sat_pos);
    if d == 0.0 {
        return Err(GeometryError::Inconsistent(f64::NAN));
    }
    let arg = (re * re + d * d - rs * rs) / (2.0 * re * d);
    if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&arg) {
        return Err(GeometryError::Inconsistent(arg));
    }
    Ok(arg.clamp(-1.0, 1.0).acos() - FRAC_PI_2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    /// Angular radius of the coverage circle, seen from the Earth centre.
    pub beta_rad: f64,
    pub area_m2: f64,
}

pub fn coverage(plane: &OrbitalPlane, min_elevation_rad: f64, consts: &GeoConstants) -> Coverage {
    let re = consts.earth_radius_m;
    let beta = (re / plane.radius(consts) * min_elevation_rad.cos()).acos() - min_elevation_rad;
    let beta = beta.max(0.0);
    Coverage {
        beta_rad: beta,
        area_m2: TAU * re * re * (1.0 - beta.cos()),
    }
}

pub fn propagation_delay(d_bs: f64, d_ss: f64, d_su: f64, consts: &GeoConstants) -> f64 {
    (d_bs + d_ss + d_su) / consts.light_speed_m_s
}

/// A point on the Earth's surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundSite {
    pub lat_rad: f64,
    pub lon_rad: f64,
}

impl GroundSite {
    pub fn from_degrees(lat_deg: f64, lon_deg: f64) -> Self {
        Self {
            lat_rad: lat_deg.to_radians(),
            lon_rad: lon_deg.to_radians(),
        }
    }

    pub fn unit_vector(&self) -> Vec3 {
        let (sl, cl) = self.lat_rad.sin_cos();
        let (so, co) = self.lon_rad.sin_cos();
        [cl * co, cl * so, sl]
    }

    pub fn position(&self, consts: &GeoConstants) -> Vec3 {
        scale(self.unit_vector(), consts.earth_radius_m)
    }

    /// Sub-satellite point (or any radial projection) of `pos`.
    pub fn beneath(pos: Vec3) -> Self {
        let u = unit(pos);
        Self {
            lat_rad: u[2].clamp(-1.0, 1.0).asin(),
            lon_rad: u[1].atan2(u[0]),
        }
    }

    /// Earth-central angle to another site.
    pub fn central_angle(&self, other: &GroundSite) -> f64 {
        dot(self.unit_vector(), other.unit_vector()).clamp(-1.0, 1.0).acos()
    }

    /// Site reached by travelling `angle` radians of arc along `bearing`
    /// (clockwise from north).
    pub fn destination(&self, bearing: f64, angle: f64) -> Self {
        let (sl, cl) = self.lat_rad.sin_cos();
        let (sa, ca) = angle.sin_cos();
        let lat = (sl * ca + cl * sa * bearing.cos()).clamp(-1.0, 1.0).asin();
        let lon = self.lon_rad + (bearing.sin() * sa * cl).atan2(ca - sl * lat.sin());
        Self { lat_rad: lat, lon_rad: lon }
    }
}

/// Walker-style constellation: `num_planes` planes with RAANs spread over π
/// ("star" pattern) and equal satellites per plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    pub planes: Vec<OrbitalPlane>,
}

impl Constellation {
    pub fn walker_star(num_planes: usize, sats_per_plane: usize, altitude_m: f64, inclination_rad: f64) -> Self {
        let total = (num_planes * sats_per_plane).max(1) as f64;
        let planes = (0..num_planes)
            .map(|m| OrbitalPlane {
                inclination_rad,
                raan_rad: PI * m as f64 / num_planes as f64,
                sats: sats_per_plane,
                altitude_m,
                phase_offset_rad: TAU * m as f64 / total,
            })
            .collect();
        Self { planes }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.planes.is_empty() {
            return Err(GeometryError::InvalidPlane("constellation has no planes".into()));
        }
        self.planes.iter().try_for_each(OrbitalPlane::validate)
    }

    pub fn num_sats(&self) -> usize {
        self.planes.iter().map(|p| p.sats).sum()
    }

    /// Global satellite id for (plane, index).
    pub fn sat_id(&self, plane: usize, index: usize) -> usize {
        self.planes[..plane].iter().map(|p| p.sats).sum::<usize>() + index
    }

    /// (plane, index) for a global satellite id.
    pub fn locate(&self, id: usize) -> (usize, usize) {
        let mut rest = id;
        for (m, p) in self.planes.iter().enumerate() {
            if rest < p.sats {
                return (m, rest);
            }
            rest -= p.sats;
        }
        panic!("satellite id {id} out of range");
    }

    pub fn state(&self, slot: u64, consts: &GeoConstants) -> ConstellationState {
        let mut positions = Vec::with_capacity(self.num_sats());
        let mut anomalies = Vec::with_capacity(self.num_sats());
        let mut grid = Vec::with_capacity(self.num_sats());
        for (m, plane) in self.planes.iter().enumerate() {
            for s in 0..plane.sats {
                positions.push(sat_position(plane, s, slot, consts));
                anomalies.push(anomaly(plane, s, slot, consts));
                grid.push((m, s));
            }
        }
        ConstellationState {
            epoch_slot: slot,
            positions,
            anomalies_rad: anomalies,
            grid,
            neighbors: self.neighbor_graph(),
            plane_sizes: self.planes.iter().map(|p| p.sats).collect(),
        }
    }

    /// "+grid" inter-satellite links: fore/aft within the plane (a ring),
    /// left/right to the same index in adjacent planes (no seam wrap).
    pub fn neighbor_graph(&self) -> Vec<Neighbors> {
        let mut out = Vec::with_capacity(self.num_sats());
        let m_total = self.planes.len();
        for (m, plane) in self.planes.iter().enumerate() {
            let n = plane.sats;
            for s in 0..n {
                let fore = (n >= 2).then(|| self.sat_id(m, (s + 1) % n));
                let aft = (n >= 3).then(|| self.sat_id(m, (s + n - 1) % n));
                let left = (m > 0 && s < self.planes[m - 1].sats).then(|| self.sat_id(m - 1, s));
                let right = (m + 1 < m_total && s < self.planes[m + 1].sats).then(|| self.sat_id(m + 1, s));
                out.push(Neighbors { links: [fore, aft, left, right] });
            }
        }
        out
    }
}

/// Neighbour slots in the order fore, aft, left, right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbors {
    pub links: [Option<usize>; 4],
}

impl Neighbors {
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.links.iter().flatten().copied()
    }

    pub fn degree(&self) -> usize {
        let mut ids: Vec<usize> = self.iter().collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationState {
    pub epoch_slot: u64,
    pub positions: Vec<Vec3>,
    pub anomalies_rad: Vec<f64>,
    /// (plane, index-in-plane) per satellite.
    pub grid: Vec<(usize, usize)>,
    pub neighbors: Vec<Neighbors>,
    pub plane_sizes: Vec<usize>,
}

impl ConstellationState {
    pub fn num_sats(&self) -> usize {
        self.positions.len()
    }

    pub fn isl_distance(&self, a: usize, b: usize) -> f64 {
        distance(self.positions[a], self.positions[b])
    }

    /// Satellites visible from `ground` at or above `min_elev`, nearest first.
    pub fn visible_from(&self, ground: Vec3, min_elev: f64, consts: &GeoConstants) -> Vec<usize> {
        let mut vis: Vec<(usize, f64)> = self
            .positions
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| match elevation_angle(ground, p, consts) {
                Ok(e) if e >= min_elev => Some((i, distance(ground, p))),
                _ => None,
            })
            .collect();
        vis.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        vis.into_iter().map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstellationLimits {
    pub min_distance_m: f64,
    pub max_speed_m_s: f64,
    pub min_elevation_rad: f64,
    pub max_elevation_rad: f64,
}

impl Default for ConstellationLimits {
    fn default() -> Self {
        Self {
            min_distance_m: 100e3,
            max_speed_m_s: 7.7e3,
            min_elevation_rad: 12f64.to_radians(),
            max_elevation_rad: FRAC_PI_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MinDistance { a: usize, b: usize, meters: f64 },
    Speed { sat: usize, m_per_s: f64 },
    Elevation { ground: usize, sat: usize, elevation_rad: f64 },
}

/// Checks minimum separation, per-slot speed (displacement over one slot
/// duration) and the elevation window of every (ground site, satellite) link
/// in `ground_links`.
pub fn validate_constellation(
    state: &ConstellationState,
    next: Option<&ConstellationState>,
    limits: &ConstellationLimits,
    ground_links: &[(Vec3, usize)],
    consts: &GeoConstants,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = state.num_sats();
    for a in 0..n {
        for b in a + 1..n {
            let d = state.isl_distance(a, b);
            if d < limits.min_distance_m {
                out.push(Violation::MinDistance { a, b, meters: d });
            }
        }
    }
    if let Some(next) = next {
        for (sat, (p0, p1)) in state.positions.iter().zip(&next.positions).enumerate() {
            let v = distance(*p0, *p1) / consts.slot_seconds;
            if v > limits.max_speed_m_s {
                out.push(Violation::Speed { sat, m_per_s: v });
            }
        }
    }
    for (ground, &(pos, sat)) in ground_links.iter().enumerate() {
        let elev = elevation_angle(pos, state.positions[sat], consts).unwrap_or(-FRAC_PI_2);
        if elev < limits.min_elevation_rad || elev > limits.max_elevation_rad + 1e-12 {
            out.push(Violation::Elevation { ground, sat, elevation_rad: elev });
        }
    }
    out
}
