//! Builds cascaded-RIS links from constellation geometry: hop lengths,
//! radiation-pattern angles, line-of-sight steering matrices, and realized
//! channels with their SNR per watt.

use crate::channel::{
    self, AntennaGains, CascadeChannel, ChannelError, CMat, LinkBudget, LinkGeometry, LossConfig, NrpFactors,
    PlasmaConstants, RisPanel,
};
use crate::geometry::{cross, distance, dot, norm, sub, unit, Vec3};
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::f64::consts::PI;

/// Everything a link needs besides its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkParams {
    pub loss: LossConfig,
    pub plasma_consts: PlasmaConstants,
    pub gains: AntennaGains,
    pub gbs_antennas: usize,
    pub ris_elements: usize,
    pub element_size_m: (f64, f64),
    pub rician_k_h: f64,
    pub rician_k_g: f64,
    pub noise_psd: f64,
    /// Replace every RIS by a single unit element (plain relay baseline).
    pub nonris: bool,
}

impl LinkParams {
    pub fn elements(&self) -> usize {
        if self.nonris {
            1
        } else {
            self.ris_elements
        }
    }
}

/// End points of a GBS → satellites → RUE path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathNodes {
    pub gbs: Vec3,
    pub sats: Vec<Vec3>,
    pub rue: Vec3,
}

/// Angle between two directions, radians in [0, π].
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// In-plane array axis of a surface with normal `normal` (the local east
/// direction when the normal is radial).
fn array_axis(normal: Vec3) -> Vec3 {
    let east = cross([0.0, 0.0, 1.0], normal);
    if norm(east) < 1e-9 {
        [1.0, 0.0, 0.0]
    } else {
        unit(east)
    }
}

/// Spatial frequency of a half-wavelength-spaced linear array along `axis`
/// towards `dir`.
fn spatial_freq(axis: Vec3, dir: Vec3) -> f64 {
    PI * dot(axis, unit(dir))
}

/// Static description of a path: hop lengths, radiation-pattern factors and
/// line-of-sight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDescription {
    pub geometry: LinkGeometry,
    pub nrp: NrpFactors,
    pub los_hops: Vec<CMat>,
    pub los_terminal: Vec<C64>,
}

impl PathDescription {
    pub fn new(params: &LinkParams, nodes: &PathNodes) -> Result<Self, ChannelError> {
        let sats = &nodes.sats;
        if sats.is_empty() {
            return Err(ChannelError::Dimension("path needs at least one satellite".into()));
        }
        let n = params.elements();
        let k = params.gbs_antennas.max(1);
        let lambda = params.loss.wavelength_m();
        let first = sats[0];
        let last = *sats.last().unwrap();
        let geometry = LinkGeometry {
            d_bs: distance(nodes.gbs, first),
            d_isl: sats.windows(2).map(|w| distance(w[0], w[1])).collect(),
            d_su: distance(last, nodes.rue),
        };

        // Panels face nadir; ground antennas face zenith.
        let nadir = |p: Vec3| [-p[0], -p[1], -p[2]];
        let nrp = |a: f64| channel::nrp(a, 0.0);
        let mut ris_ris = 1.0;
        for w in sats.windows(2) {
            ris_ris *= nrp(angle_between(nadir(w[0]), sub(w[1], w[0])));
            ris_ris *= nrp(angle_between(nadir(w[1]), sub(w[0], w[1])));
        }
        let factors = NrpFactors {
            gbs_ris: nrp(angle_between(nadir(first), sub(nodes.gbs, first))),
            gbs: nrp(angle_between(nodes.gbs, sub(first, nodes.gbs))),
            ris_ris,
            rue: nrp(angle_between(nodes.rue, sub(last, nodes.rue))),
            ris_rue: nrp(angle_between(nadir(last), sub(nodes.rue, last))),
        };

        let gbs_axis = array_axis(nodes.gbs);
        let mut los_hops = Vec::with_capacity(sats.len());
        let ax0 = array_axis(nadir(first));
        los_hops.push(channel::los_matrix(
            n,
            k,
            geometry.d_bs,
            lambda,
            spatial_freq(ax0, sub(nodes.gbs, first)),
            spatial_freq(gbs_axis, sub(first, nodes.gbs)),
        ));
        for (i, w) in sats.windows(2).enumerate() {
            let ax_tx = array_axis(nadir(w[0]));
            let ax_rx = array_axis(nadir(w[1]));
            los_hops.push(channel::los_matrix(
                n,
                n,
                geometry.d_isl[i],
                lambda,
                spatial_freq(ax_rx, sub(w[0], w[1])),
                spatial_freq(ax_tx, sub(w[1], w[0])),
            ));
        }
        let ax_last = array_axis(nadir(last));
        let los_terminal = channel::los_matrix(n, 1, geometry.d_su, lambda, spatial_freq(ax_last, sub(nodes.rue, last)), 0.0).data;
        Ok(Self {
            geometry,
            nrp: factors,
            los_hops,
            los_terminal,
        })
    }

    pub fn num_panels(&self) -> usize {
        self.los_hops.len()
    }

    pub fn budget(&self, params: &LinkParams) -> Result<LinkBudget, ChannelError> {
        let panel = RisPanel::new(params.elements(), params.element_size_m);
        channel::total_loss(&params.loss, &params.plasma_consts, &self.geometry, &params.gains, &panel, &self.nrp)
    }

    /// Draws a channel realization around the line-of-sight matrices.
    pub fn realize(&self, params: &LinkParams, rng: &mut impl rand::Rng) -> Result<CascadeChannel, ChannelError> {
        CascadeChannel::sample(
            self.los_hops.clone(),
            self.los_terminal.clone(),
            params.rician_k_h,
            params.rician_k_g,
            params.noise_psd,
            rng,
        )
    }

    /// Panels co-phased on the line-of-sight part only (geometric steering).
    pub fn los_steering(&self, params: &LinkParams) -> Result<Vec<RisPanel>, ChannelError> {
        let mut los = CascadeChannel::los_only(self.los_hops.clone(), self.los_terminal.clone(), params.noise_psd)?;
        let mut panels = self.blank_panels(params);
        los.coherent_configuration(&mut panels, 2)?;
        Ok(panels)
    }

    pub fn blank_panels(&self, params: &LinkParams) -> Vec<RisPanel> {
        vec![RisPanel::new(params.elements(), params.element_size_m); self.num_panels()]
    }
}

/// How RIS phases are chosen when a link is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum PhasePolicy {
    /// Joint co-phasing of every panel on the realized channel.
    Coherent,
    /// Geometric line-of-sight steering on every panel.
    LosSteering,
    /// Relays use line-of-sight steering; the serving (last) panel uses
    /// these phases.
    Serving(Vec<f64>),
}

/// A realized link with the quantities the optimizer needs.
#[derive(Debug, Clone, Serialize)]
pub struct LinkEval {
    pub budget: LinkBudget,
    /// SNR per watt of transmit power.
    pub snr_per_watt: f64,
    pub ps_reward: f64,
    pub hops: usize,
}

pub fn configure(
    desc: &PathDescription,
    params: &LinkParams,
    cascade: &mut CascadeChannel,
    policy: &PhasePolicy,
) -> Result<Vec<RisPanel>, ChannelError> {
    let mut panels = match policy {
        PhasePolicy::Coherent => {
            let mut p = desc.los_steering(params)?;
            cascade.match_beamformer(&p)?;
            cascade.coherent_configuration(&mut p, 3)?;
            return Ok(p);
        }
        PhasePolicy::LosSteering => desc.los_steering(params)?,
        PhasePolicy::Serving(ph) => {
            let mut p = desc.los_steering(params)?;
            let last = p.last_mut().unwrap();
            if ph.len() != last.num_elements {
                return Err(ChannelError::Dimension(format!(
                    "{} serving phases for a {}-element panel",
                    ph.len(),
                    last.num_elements
                )));
            }
            last.phases_rad = ph.iter().map(|&x| channel::wrap_phase(x)).collect();
            p
        }
    };
    cascade.match_beamformer(&panels)?;
    // Keep the phases consistent with the wrapped representation.
    for p in &mut panels {
        p.phases_rad.iter_mut().for_each(|x| *x = channel::wrap_phase(*x));
    }
    Ok(panels)
}

pub fn evaluate(
    desc: &PathDescription,
    params: &LinkParams,
    policy: &PhasePolicy,
    rng: &mut impl rand::Rng,
) -> Result<LinkEval, ChannelError> {
    let budget = desc.budget(params)?;
    let mut cascade = desc.realize(params, rng)?;
    let panels = configure(desc, params, &mut cascade, policy)?;
    let snr_per_watt = channel::snr(&cascade, &panels, &budget, 1.0, true)?;
    let ps_reward = channel::ps_reward(&cascade, &panels)?;
    Ok(LinkEval {
        budget,
        snr_per_watt,
        ps_reward,
        hops: desc.num_panels(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{scale, GeoConstants, GroundSite};
    use crate::rng::stream;

    pub(crate) fn params(n: usize) -> LinkParams {
        LinkParams {
            loss: LossConfig::default(),
            plasma_consts: PlasmaConstants::default(),
            gains: AntennaGains::from_dbi(60.0, 50.0),
            gbs_antennas: 4,
            ris_elements: n,
            element_size_m: (1.5e-3, 1.5e-3),
            rician_k_h: 10.0,
            rician_k_g: 10.0,
            noise_psd: 3.98e-20,
            nonris: false,
        }
    }

    fn nodes(isl: bool) -> PathNodes {
        let c = GeoConstants::default();
        let r = c.earth_radius_m + 500e3;
        let s1 = scale(GroundSite::from_degrees(0.0, 0.0).unit_vector(), r);
        let s2 = scale(GroundSite::from_degrees(0.0, 16.0).unit_vector(), r);
        let gbs = GroundSite::from_degrees(2.0, -1.0).position(&c);
        let rue = if isl {
            GroundSite::from_degrees(-1.0, 17.0).position(&c)
        } else {
            GroundSite::from_degrees(-1.0, 1.0).position(&c)
        };
        PathNodes {
            gbs,
            sats: if isl { vec![s1, s2] } else { vec![s1] },
            rue,
        }
    }

    #[test]
    fn overhead_factors_are_unity() {
        let c = GeoConstants::default();
        let g = GroundSite::from_degrees(10.0, 10.0);
        let s = scale(g.unit_vector(), c.earth_radius_m + 500e3);
        let d = PathDescription::new(
            &params(4),
            &PathNodes {
                gbs: g.position(&c),
                sats: vec![s],
                rue: g.position(&c),
            },
        )
        .unwrap();
        assert!((d.nrp.product() - 1.0).abs() < 1e-12);
        assert!((d.geometry.d_bs - 500e3).abs() < 1e-6);
    }

    #[test]
    fn coherent_dominates_other_policies() {
        let p = params(8);
        for isl in [false, true] {
            let d = PathDescription::new(&p, &nodes(isl)).unwrap();
            let coh = evaluate(&d, &p, &PhasePolicy::Coherent, &mut stream(1, &[])).unwrap();
            let los = evaluate(&d, &p, &PhasePolicy::LosSteering, &mut stream(1, &[])).unwrap();
            let zero = evaluate(&d, &p, &PhasePolicy::Serving(vec![0.0; 8]), &mut stream(1, &[])).unwrap();
            assert!(coh.snr_per_watt >= los.snr_per_watt * (1.0 - 1e-9));
            assert!(los.snr_per_watt > zero.snr_per_watt);
            assert!(coh.ps_reward <= 1.0 && coh.ps_reward > 0.5);
        }
    }

    #[test]
    fn extra_hop_costs_orders_of_magnitude() {
        let p = params(8);
        let one = evaluate(&PathDescription::new(&p, &nodes(false)).unwrap(), &p, &PhasePolicy::Coherent, &mut stream(2, &[]))
            .unwrap();
        let two = evaluate(&PathDescription::new(&p, &nodes(true)).unwrap(), &p, &PhasePolicy::Coherent, &mut stream(2, &[]))
            .unwrap();
        assert!(two.snr_per_watt < one.snr_per_watt * 1e-6);
    }

    #[test]
    fn nonris_never_beats_ris() {
        let mut p = params(8);
        let d = PathDescription::new(&p, &nodes(false)).unwrap();
        let ris = evaluate(&d, &p, &PhasePolicy::Coherent, &mut stream(3, &[])).unwrap();
        p.nonris = true;
        let d1 = PathDescription::new(&p, &nodes(false)).unwrap();
        let relay = evaluate(&d1, &p, &PhasePolicy::Coherent, &mut stream(3, &[])).unwrap();
        assert!(relay.snr_per_watt < ris.snr_per_watt);
    }
}
