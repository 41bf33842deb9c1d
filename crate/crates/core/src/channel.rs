//! Sub-THz loss terms, the total cascaded-RIS loss, Rician channel sampling,
//! RIS phase matrices, cascaded SNR and achievable rate.

use num_complex::Complex64 as C64;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, LN_2, PI, TAU};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChannelError {
    #[error("degenerate link: zero distance in the array-factor product")]
    DegenerateLink,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid channel configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RainConfig {
    pub phi_r: f64,
    pub mu_r: f64,
    /// Rain rate exceeded 0.01% of the time.
    pub rate_mm_h: f64,
    pub path_km: f64,
}

impl Default for RainConfig {
    fn default() -> Self {
        Self {
            phi_r: 0.8,
            mu_r: 0.7,
            rate_mm_h: 10.0,
            path_km: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudConfig {
    /// Specific attenuation coefficient, dB/km per g/m³.
    pub xi_c: f64,
    pub chi_c_g_m3: f64,
    pub path_km: f64,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            xi_c: 4.0,
            chi_c_g_m3: 0.5,
            path_km: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlasmaConfig {
    pub n_e_per_m3: f64,
    pub f_col_hz: f64,
    pub b_avg_tesla: f64,
    /// Wave number k in rad/m; `None` uses 2π·f_c/c.
    pub wave_number: Option<f64>,
}

impl Default for PlasmaConfig {
    fn default() -> Self {
        Self {
            n_e_per_m3: 1e12,
            f_col_hz: 1e4,
            b_avg_tesla: 45e-6,
            wave_number: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub fc_hz: f64,
    pub kappa_abs_per_m: f64,
    pub rain: RainConfig,
    pub cloud: CloudConfig,
    pub plasma: PlasmaConfig,
    pub temperature_k: f64,
    pub pressure_pa: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            fc_hz: 0.1e12,
            kappa_abs_per_m: 1e-5,
            rain: RainConfig::default(),
            cloud: CloudConfig::default(),
            plasma: PlasmaConfig::default(),
            temperature_k: 1000.0,
            pressure_pa: 101_325.0,
        }
    }
}

impl LossConfig {
    /// Rejects negative or non-finite coefficients; returns warnings for
    /// carriers outside the 0.1–3 THz band.
    pub fn validate(&self) -> Result<Vec<String>, ChannelError> {
        let checks = [
            ("fc_hz", self.fc_hz),
            ("kappa_abs_per_m", self.kappa_abs_per_m),
            ("rain.phi_r", self.rain.phi_r),
            ("rain.mu_r", self.rain.mu_r),
            ("rain.rate_mm_h", self.rain.rate_mm_h),
            ("rain.path_km", self.rain.path_km),
            ("cloud.xi_c", self.cloud.xi_c),
            ("cloud.chi_c_g_m3", self.cloud.chi_c_g_m3),
            ("cloud.path_km", self.cloud.path_km),
            ("plasma.n_e_per_m3", self.plasma.n_e_per_m3),
            ("plasma.f_col_hz", self.plasma.f_col_hz),
            ("plasma.b_avg_tesla", self.plasma.b_avg_tesla),
            ("temperature_k", self.temperature_k),
            ("pressure_pa", self.pressure_pa),
        ];
        for (name, v) in checks {
            if !v.is_finite() || v < 0.0 {
                return Err(ChannelError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.fc_hz == 0.0 {
            return Err(ChannelError::InvalidConfig("fc_hz must be positive".into()));
        }
        if let Some(k) = self.plasma.wave_number {
            if !k.is_finite() || k < 0.0 {
                return Err(ChannelError::InvalidConfig(format!("plasma.wave_number must be >= 0, got {k}")));
            }
        }
        let mut warnings = Vec::new();
        if !(0.1e12..=3e12).contains(&self.fc_hz) {
            warnings.push(format!("carrier {} Hz is outside the 0.1-3 THz band", self.fc_hz));
        }
        Ok(warnings)
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.fc_hz
    }
}

/// Electron constants used by the plasma terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlasmaConstants {
    pub electron_charge_c: f64,
    pub electron_mass_kg: f64,
    pub vacuum_permittivity: f64,
}

impl Default for PlasmaConstants {
    fn default() -> Self {
        Self {
            electron_charge_c: 1.6021e-19,
            electron_mass_kg: 9.109e-31,
            vacuum_permittivity: 8.854e-12,
        }
    }
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn spreading_loss_db(f_hz: f64, d_m: f64) -> f64 {
    20.0 * (4.0 * PI * d_m * f_hz / SPEED_OF_LIGHT).log10()
}

pub fn absorption_loss_db(kappa_per_m: f64, d_m: f64) -> f64 {
    10.0 * std::f64::consts::E.log10() * kappa_per_m * d_m
}

/// Rain and cloud attenuation in dB.
pub fn weather_loss_db(cfg: &LossConfig) -> (f64, f64) {
    let r = &cfg.rain;
    let rain = if r.rate_mm_h == 0.0 {
        0.0
    } else {
        r.phi_r * r.rate_mm_h.powf(r.mu_r) * r.path_km
    };
    let c = &cfg.cloud;
    (rain, c.xi_c * c.chi_c_g_m3 * c.path_km)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlasmaMetrics {
    pub f_plasma_hz: f64,
    pub faraday_rad_per_m: f64,
    /// Attenuation exponent per metre (nepers/m).
    pub atten_per_m: f64,
}

pub fn plasma_metrics(cfg: &LossConfig, consts: &PlasmaConstants) -> PlasmaMetrics {
    let p = &cfg.plasma;
    let f = cfg.fc_hz;
    let fp = consts.electron_charge_c / TAU
        * (p.n_e_per_m3 / (consts.vacuum_permittivity * consts.electron_mass_kg)).sqrt();
    let k = p.wave_number.unwrap_or(TAU * f / SPEED_OF_LIGHT);
    let ratio = fp / f;
    PlasmaMetrics {
        f_plasma_hz: fp,
        faraday_rad_per_m: 2.36e4 * p.b_avg_tesla * f.powi(-2) * p.n_e_per_m3,
        atten_per_m: 0.5 * k * ratio * ratio * (p.f_col_hz / f) * (1.0 + 0.5 * ratio),
    }
}

/// Normalized radiation pattern of an element; `elev_rad` is measured from
/// boresight. The pattern is azimuth-symmetric.
pub fn nrp(elev_rad: f64, _azim_rad: f64) -> f64 {
    if (0.0..=FRAC_PI_2).contains(&elev_rad) {
        elev_rad.cos().powi(3)
    } else if elev_rad < 0.0 {
        // Symmetric about boresight.
        nrp(-elev_rad, 0.0)
    } else {
        0.0
    }
}

/// The five radiation-pattern factors of a cascaded path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrpFactors {
    pub gbs_ris: f64,
    pub gbs: f64,
    pub ris_ris: f64,
    pub rue: f64,
    pub ris_rue: f64,
}

impl NrpFactors {
    pub const UNIT: NrpFactors = NrpFactors {
        gbs_ris: 1.0,
        gbs: 1.0,
        ris_ris: 1.0,
        rue: 1.0,
        ris_rue: 1.0,
    };

    pub fn product(&self) -> f64 {
        self.gbs_ris * self.gbs * self.ris_ris * self.rue * self.ris_rue
    }
}

/// Hop lengths of a GBS → RIS … RIS → RUE path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub d_bs: f64,
    /// Inter-satellite hops, empty for a single-RIS path.
    pub d_isl: Vec<f64>,
    pub d_su: f64,
}

impl LinkGeometry {
    pub fn single(d_bs: f64, d_su: f64) -> Self {
        Self {
            d_bs,
            d_isl: Vec::new(),
            d_su,
        }
    }

    pub fn isl_total(&self) -> f64 {
        self.d_isl.iter().sum()
    }

    pub fn path_length(&self) -> f64 {
        self.d_bs + self.isl_total() + self.d_su
    }

    fn product_distances(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.d_bs).chain(self.d_isl.iter().copied()).chain(std::iter::once(self.d_su))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaGains {
    pub gbs_linear: f64,
    pub rue_linear: f64,
}

impl AntennaGains {
    pub fn from_dbi(gbs_dbi: f64, rue_dbi: f64) -> Self {
        Self {
            gbs_linear: 10f64.powf(gbs_dbi / 10.0),
            rue_linear: 10f64.powf(rue_dbi / 10.0),
        }
    }

    pub const UNIT: AntennaGains = AntennaGains {
        gbs_linear: 1.0,
        rue_linear: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisPanel {
    pub num_elements: usize,
    pub amplitude: f64,
    pub element_size_m: (f64, f64),
    pub phases_rad: Vec<f64>,
}

impl RisPanel {
    pub fn new(num_elements: usize, element_size_m: (f64, f64)) -> Self {
        Self {
            num_elements,
            amplitude: 1.0,
            element_size_m,
            phases_rad: vec![0.0; num_elements],
        }
    }

    pub fn with_phases(mut self, phases: Vec<f64>) -> Self {
        self.phases_rad = phases.into_iter().map(wrap_phase).collect();
        self
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.phases_rad.len() != self.num_elements {
            return Err(ChannelError::Dimension(format!(
                "panel has {} elements but {} phases",
                self.num_elements,
                self.phases_rad.len()
            )));
        }
        if (self.amplitude * self.amplitude - 1.0).abs() > 1e-12 {
            return Err(ChannelError::InvalidConfig("RIS amplitude must have unit modulus".into()));
        }
        if self.phases_rad.iter().any(|p| !(0.0..TAU).contains(p)) {
            return Err(ChannelError::InvalidConfig("RIS phases must lie in [0, 2pi)".into()));
        }
        Ok(())
    }
}

/// Wraps an angle into [0, 2π).
pub fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Per-link loss decomposition. All `*_db` loss terms are non-negative;
/// `gain_db` collects the antenna, aperture and array terms of the
/// denominator, so `total_db = spread + abs + rain + cloud + plasma + nrp - gain`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkBudget {
    pub spread_db: f64,
    pub abs_db: f64,
    pub rain_db: f64,
    pub cloud_db: f64,
    pub plasma_db: f64,
    pub nrp_db: f64,
    pub gain_db: f64,
    pub nrp_product: f64,
    pub total_db: f64,
    pub total_linear: f64,
    /// (d_bs, total inter-satellite length, d_su) in metres.
    pub distances: (f64, f64, f64),
    /// Reported only; it does not enter the total.
    pub faraday_rad_per_m: f64,
}

impl LinkBudget {
    /// Rows of the `linkbudget` table: six loss components.
    pub fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("spreading", self.spread_db),
            ("absorption", self.abs_db),
            ("rain", self.rain_db),
            ("cloud", self.cloud_db),
            ("plasma", self.plasma_db),
            ("nrp", self.nrp_db),
        ]
    }
}

/// Total loss of a cascaded path. The array factor is
/// |Σ_n √F / Π d|² over the elements of `panel`, and every distance-dependent
/// numerator term uses the end-to-end path length.
pub fn total_loss(
    cfg: &LossConfig,
    consts: &PlasmaConstants,
    geom: &LinkGeometry,
    gains: &AntennaGains,
    panel: &RisPanel,
    nrp_factors: &NrpFactors,
) -> Result<LinkBudget, ChannelError> {
    if geom.product_distances().any(|d| d == 0.0) {
        return Err(ChannelError::DegenerateLink);
    }
    if geom.product_distances().any(|d| !d.is_finite() || d < 0.0) {
        return Err(ChannelError::InvalidConfig("path distances must be finite and positive".into()));
    }
    let d = geom.path_length();
    let spread_db = spreading_loss_db(cfg.fc_hz, d);
    let abs_db = absorption_loss_db(cfg.kappa_abs_per_m, d);
    let (rain_db, cloud_db) = weather_loss_db(cfg);
    let plasma = plasma_metrics(cfg, consts);
    let plasma_db = absorption_loss_db(plasma.atten_per_m, d);
    let f_tot = nrp_factors.product();
    let nrp_db = -db(f_tot);
    let (dx, dy) = panel.element_size_m;
    let dist_db: f64 = geom.product_distances().map(|x| 20.0 * x.log10()).sum();
    let gain_db = db(gains.gbs_linear) + db(gains.rue_linear) + db(dx * dy) + 20.0 * panel.amplitude.abs().log10()
        + 20.0 * (panel.num_elements as f64).log10()
        - dist_db;
    let total_db = spread_db + abs_db + rain_db + cloud_db + plasma_db + nrp_db - gain_db;
    Ok(LinkBudget {
        spread_db,
        abs_db,
        rain_db,
        cloud_db,
        plasma_db,
        nrp_db,
        gain_db,
        nrp_product: f_tot,
        total_db,
        total_linear: 10f64.powf(total_db / 10.0),
        distances: (geom.d_bs, geom.isl_total(), geom.d_su),
        faraday_rad_per_m: plasma.faraday_rad_per_m,
    })
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(d: &[C64]) -> Self {
        Self::from_fn(d.len(), d.len(), |r, c| if r == c { d[r] } else { C64::new(0.0, 0.0) })
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![C64::new(1.0, 0.0); n])
    }

    pub fn at(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// xᵀ·A for a row vector x.
    pub fn vecmat(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.rows, "vecmat dimension mismatch");
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        for (row, xi) in self.data.chunks_exact(self.cols).zip(x) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        CMat::from_fn(self.rows, other.cols, |r, c| (0..self.cols).map(|k| self.at(r, k) * other.at(k, c)).sum())
    }

    pub fn conj_transpose(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |r, c| self.at(c, r).conj())
    }

    pub fn abs_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a.norm() * b).sum())
            .collect()
    }
}

/// Rank-one line-of-sight matrix with unit-modulus entries:
/// H̄[n][m] = exp(-j(2π·d/λ + ω_rx·n + ω_tx·m)).
pub fn los_matrix(rows: usize, cols: usize, distance_m: f64, wavelength_m: f64, omega_rx: f64, omega_tx: f64) -> CMat {
    let base = TAU * (distance_m / wavelength_m).fract();
    CMat::from_fn(rows, cols, |n, m| C64::from_polar(1.0, -(base + omega_rx * n as f64 + omega_tx * m as f64)))
}

fn complex_normal(rng: &mut impl rand::Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Rician mixture √(K/(K+1))·H̄ + √(1/(K+1))·H̃ with H̃ ~ CN(0, 1) entries.
pub fn sample_rician(los: &CMat, k_factor: f64, rng: &mut impl rand::Rng) -> CMat {
    let (a, b) = rician_weights(k_factor);
    let data = los.data.iter().map(|&h| h * a + complex_normal(rng) * b).collect();
    CMat {
        rows: los.rows,
        cols: los.cols,
        data,
    }
}

fn rician_weights(k: f64) -> (f64, f64) {
    if k.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
    }
}

pub fn sample_rician_vec(los: &[C64], k_factor: f64, rng: &mut impl rand::Rng) -> Vec<C64> {
    let (a, b) = rician_weights(k_factor);
    los.iter().map(|&h| h * a + complex_normal(rng) * b).collect()
}

pub fn phase_diagonal(panel: &RisPanel) -> Vec<C64> {
    panel.phases_rad.iter().map(|&t| C64::from_polar(panel.amplitude, t)).collect()
}

pub fn phase_matrix(panel: &RisPanel) -> CMat {
    CMat::diag(&phase_diagonal(panel))
}

/// A realized GBS → RIS₁ → … → RIS_R → RUE channel.
///
/// `hops[0]` is N₁×K, `hops[r]` is N_{r+1}×N_r, `terminal` has N_R entries and
/// `beamformer` is the K-entry column of W serving this RUE.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeChannel {
    pub hops: Vec<CMat>,
    pub terminal: Vec<C64>,
    pub los_hops: Vec<CMat>,
    pub los_terminal: Vec<C64>,
    pub rician_k_h: f64,
    pub rician_k_g: f64,
    pub beamformer: Vec<C64>,
    pub noise_psd: f64,
}

impl CascadeChannel {
    /// Draws the scattered components around the given LoS matrices; the
    /// beamformer starts as a uniform unit-norm vector.
    pub fn sample(
        los_hops: Vec<CMat>,
        los_terminal: Vec<C64>,
        rician_k_h: f64,
        rician_k_g: f64,
        noise_psd: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<Self, ChannelError> {
        let hops = los_hops.iter().map(|h| sample_rician(h, rician_k_h, rng)).collect();
        let terminal = sample_rician_vec(&los_terminal, rician_k_g, rng);
        Self::from_parts(hops, terminal, los_hops, los_terminal, rician_k_h, rician_k_g, noise_psd)
    }

    /// Pure line-of-sight realization.
    pub fn los_only(los_hops: Vec<CMat>, los_terminal: Vec<C64>, noise_psd: f64) -> Result<Self, ChannelError> {
        Self::from_parts(
            los_hops.clone(),
            los_terminal.clone(),
            los_hops,
            los_terminal,
            f64::INFINITY,
            f64::INFINITY,
            noise_psd,
        )
    }

    fn from_parts(
        hops: Vec<CMat>,
        terminal: Vec<C64>,
        los_hops: Vec<CMat>,
        los_terminal: Vec<C64>,
        rician_k_h: f64,
        rician_k_g: f64,
        noise_psd: f64,
    ) -> Result<Self, ChannelError> {
        let k = hops.first().ok_or_else(|| ChannelError::Dimension("cascade needs at least one hop".into()))?.cols;
        for pair in hops.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(ChannelError::Dimension("hop matrices do not compose".into()));
            }
        }
        if hops.last().map(|h| h.rows) != Some(terminal.len()) {
            return Err(ChannelError::Dimension("terminal vector does not match the last panel".into()));
        }
        let w = C64::new(1.0 / (k as f64).sqrt(), 0.0);
        Ok(Self {
            hops,
            terminal,
            los_hops,
            los_terminal,
            rician_k_h,
            rician_k_g,
            beamformer: vec![w; k],
            noise_psd,
        })
    }

    pub fn num_antennas(&self) -> usize {
        self.hops[0].cols
    }

    pub fn panel_sizes(&self) -> Vec<usize> {
        self.hops.iter().map(|h| h.rows).collect()
    }

    fn check_panels(&self, panels: &[RisPanel]) -> Result<(), ChannelError> {
        if panels.len() != self.hops.len() {
            return Err(ChannelError::Dimension(format!(
                "{} hops but {} panels",
                self.hops.len(),
                panels.len()
            )));
        }
        for (h, p) in self.hops.iter().zip(panels) {
            if h.rows != p.num_elements || p.phases_rad.len() != p.num_elements {
                return Err(ChannelError::Dimension("panel size does not match its hop".into()));
            }
        }
        Ok(())
    }

    /// Row vector gᵀ·Φ_R·H_R·…·Φ₁·H₁ over the transmit antennas.
    pub fn transmit_response(&self, panels: &[RisPanel]) -> Result<Vec<C64>, ChannelError> {
        self.check_panels(panels)?;
        let mut x = self.terminal.clone();
        for (h, p) in self.hops.iter().zip(panels).rev() {
            for (xi, phi) in x.iter_mut().zip(phase_diagonal(p)) {
                *xi *= phi;
            }
            x = h.vecmat(&x);
        }
        Ok(x)
    }

    /// Scalar effective channel gᵀ·∏Φ_r·H_r·w.
    pub fn effective_gain(&self, panels: &[RisPanel]) -> Result<C64, ChannelError> {
        let u = self.transmit_response(panels)?;
        Ok(u.iter().zip(&self.beamformer).map(|(a, b)| a * b).sum())
    }

    /// Sets the beamformer to the unit-norm matched filter of the current
    /// cascade.
    pub fn match_beamformer(&mut self, panels: &[RisPanel]) -> Result<(), ChannelError> {
        let u = self.transmit_response(panels)?;
        let n = u.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if n > 0.0 {
            self.beamformer = u.iter().map(|a| a.conj() / n).collect();
        }
        Ok(())
    }

    /// Triangle-inequality bound |g|ᵀ·|H_R|·…·|H₁|·|w| on |effective_gain|
    /// over all phase configurations.
    pub fn coherent_bound(&self) -> f64 {
        let mut v: Vec<f64> = self.beamformer.iter().map(|w| w.norm()).collect();
        for h in &self.hops {
            v = h.abs_matvec(&v);
        }
        self.terminal.iter().zip(&v).map(|(g, x)| g.norm() * x).sum()
    }

    /// Phases for panel `r` that co-phase every element given the other
    /// panels and the beamformer.
    pub fn align_panel(&self, panels: &[RisPanel], r: usize) -> Result<Vec<f64>, ChannelError> {
        self.check_panels(panels)?;
        let mut a = self.beamformer.clone();
        for (h, p) in self.hops.iter().zip(panels).take(r) {
            a = h.matvec(&a);
            for (ai, phi) in a.iter_mut().zip(phase_diagonal(p)) {
                *ai *= phi;
            }
        }
        a = self.hops[r].matvec(&a);
        let mut b = self.terminal.clone();
        for (h, p) in self.hops.iter().zip(panels).skip(r + 1).rev() {
            for (bi, phi) in b.iter_mut().zip(phase_diagonal(p)) {
                *bi *= phi;
            }
            b = h.vecmat(&b);
        }
        Ok(a.iter().zip(&b).map(|(x, y)| wrap_phase(-(x * y).arg())).collect())
    }

    /// Alternating maximization of |effective_gain| over all panel phases and
    /// the matched beamformer. Exact (reaches the coherent bound) on rank-one
    /// line-of-sight cascades.
    pub fn coherent_configuration(&mut self, panels: &mut [RisPanel], sweeps: usize) -> Result<(), ChannelError> {
        self.check_panels(panels)?;
        for _ in 0..sweeps.max(1) {
            for r in 0..panels.len() {
                let ph = self.align_panel(panels, r)?;
                panels[r].phases_rad = ph;
            }
            self.match_beamformer(panels)?;
        }
        Ok(())
    }
}

/// SNR Γ = p·|v·gᵀ·∏Φ_r·H_r·w|² / (N_o·L_tot); zero when not associated.
pub fn snr(
    cascade: &CascadeChannel,
    panels: &[RisPanel],
    budget: &LinkBudget,
    power_w: f64,
    associated: bool,
) -> Result<f64, ChannelError> {
    if !associated {
        return Ok(0.0);
    }
    let h = cascade.effective_gain(panels)?;
    Ok(power_w * h.norm_sqr() / (cascade.noise_psd * budget.total_linear))
}

/// Phase-shift reward: |effective gain|² over the squared coherent bound.
pub fn ps_reward(cascade: &CascadeChannel, panels: &[RisPanel]) -> Result<f64, ChannelError> {
    let h = cascade.effective_gain(panels)?.norm_sqr();
    let b = cascade.coherent_bound();
    if b == 0.0 {
        return Ok(0.0);
    }
    Ok((h / (b * b)).min(1.0))
}

/// Achievable rate B·log₂(1+Γ); evaluated through ln(1+Γ) so that tiny SNRs
/// keep full precision.
pub fn rate(bandwidth_hz: f64, gamma: f64) -> f64 {
    bandwidth_hz * gamma.ln_1p() / LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng as _;

    fn unit_panel(n: usize) -> RisPanel {
        RisPanel::new(n, (1.0, 1.0))
    }

    #[test]
    fn spreading_examples() {
        assert_relative_eq!(spreading_loss_db(0.1e12, 1e6), 192.447_783_5, epsilon = 1e-6);
        let d0 = SPEED_OF_LIGHT / (4.0 * PI * 0.1e12);
        assert!(spreading_loss_db(0.1e12, d0).abs() < 1e-9);
        let diff = spreading_loss_db(0.1e12, 2e6) - spreading_loss_db(0.1e12, 1e6);
        assert_relative_eq!(diff, 20.0 * 2f64.log10(), epsilon = 1e-9);
    }

    #[test]
    fn absorption_examples() {
        assert_eq!(absorption_loss_db(0.0, 1e6), 0.0);
        assert_relative_eq!(absorption_loss_db(1e-5, 1e5), 4.342_944_819, epsilon = 1e-8);
        assert_relative_eq!(
            absorption_loss_db(3e-5, 7e4) + absorption_loss_db(3e-5, 2e4),
            absorption_loss_db(3e-5, 9e4),
            epsilon = 1e-12
        );
    }

    #[test]
    fn weather_examples() {
        let mut cfg = LossConfig::default();
        cfg.rain = RainConfig {
            phi_r: 0.8,
            mu_r: 0.7,
            rate_mm_h: 10.0,
            path_km: 2.0,
        };
        assert_relative_eq!(weather_loss_db(&cfg).0, 8.018_996_0, epsilon = 1e-6);
        cfg.rain.rate_mm_h = 0.0;
        cfg.cloud.chi_c_g_m3 = 0.0;
        assert_eq!(weather_loss_db(&cfg), (0.0, 0.0));
    }

    #[test]
    fn plasma_examples() {
        let pc = PlasmaConstants::default();
        let mut cfg = LossConfig::default();
        cfg.plasma.n_e_per_m3 = 0.0;
        let m = plasma_metrics(&cfg, &pc);
        assert_eq!(m.f_plasma_hz, 0.0);
        assert_eq!(m.atten_per_m, 0.0);
        cfg.plasma.n_e_per_m3 = 1e12;
        let m = plasma_metrics(&cfg, &pc);
        assert_relative_eq!(m.f_plasma_hz, 8_978_517.7, max_relative = 1e-6);
        let ratio = (m.f_plasma_hz / cfg.fc_hz).powi(2);
        assert!((ratio - 8.06e-9).abs() < 1e-10);
        assert!(absorption_loss_db(m.atten_per_m, 1e6) < 1e-3);
    }

    #[test]
    fn nrp_examples() {
        assert_eq!(nrp(0.0, 0.0), 1.0);
        assert_relative_eq!(nrp(60f64.to_radians(), 1.0), 0.125, epsilon = 1e-12);
        assert_eq!(nrp(91f64.to_radians(), 0.0), 0.0);
    }

    fn quiet_cfg() -> LossConfig {
        let mut cfg = LossConfig::default();
        cfg.rain.rate_mm_h = 0.0;
        cfg.cloud.chi_c_g_m3 = 0.0;
        cfg.plasma.n_e_per_m3 = 0.0;
        cfg
    }

    #[test]
    fn total_loss_unit_distances() {
        let cfg = quiet_cfg();
        let geom = LinkGeometry::single(1.0, 1.0);
        let b = total_loss(&cfg, &PlasmaConstants::default(), &geom, &AntennaGains::UNIT, &unit_panel(1), &NrpFactors::UNIT)
            .unwrap();
        let d = geom.path_length();
        let expected = (4.0 * PI * cfg.fc_hz / SPEED_OF_LIGHT).powi(2) * d * d * (cfg.kappa_abs_per_m * d).exp();
        assert_relative_eq!(b.total_linear, expected, max_relative = 1e-9);
    }

    #[test]
    fn doubling_elements_gains_six_db() {
        let cfg = LossConfig::default();
        let geom = LinkGeometry::single(6e5, 7e5);
        let pc = PlasmaConstants::default();
        let a = total_loss(&cfg, &pc, &geom, &AntennaGains::UNIT, &unit_panel(8), &NrpFactors::UNIT).unwrap();
        let b = total_loss(&cfg, &pc, &geom, &AntennaGains::UNIT, &unit_panel(16), &NrpFactors::UNIT).unwrap();
        assert_relative_eq!(a.total_db - b.total_db, 20.0 * 2f64.log10(), epsilon = 1e-9);
    }

    #[test]
    fn zero_distance_is_degenerate() {
        let geom = LinkGeometry {
            d_bs: 5e5,
            d_isl: vec![0.0],
            d_su: 5e5,
        };
        let r = total_loss(
            &LossConfig::default(),
            &PlasmaConstants::default(),
            &geom,
            &AntennaGains::UNIT,
            &unit_panel(4),
            &NrpFactors::UNIT,
        );
        assert_eq!(r.unwrap_err(), ChannelError::DegenerateLink);
    }

    #[test]
    fn decomposition_identity() {
        let geom = LinkGeometry {
            d_bs: 8e5,
            d_isl: vec![1.9e6, 2.1e6],
            d_su: 9e5,
        };
        let nrp_f = NrpFactors {
            gbs_ris: 0.4,
            gbs: 0.3,
            ris_ris: 0.2,
            rue: 0.5,
            ris_rue: 0.6,
        };
        let b = total_loss(
            &LossConfig::default(),
            &PlasmaConstants::default(),
            &geom,
            &AntennaGains::from_dbi(50.0, 40.0),
            &RisPanel::new(16, (1.5e-3, 1.5e-3)),
            &nrp_f,
        )
        .unwrap();
        let sum: f64 = b.components().iter().map(|c| c.1).sum();
        assert!((b.total_db - (sum - b.gain_db)).abs() < 1e-9);
        assert!(b.components().iter().all(|c| c.1 >= 0.0));
        assert_relative_eq!(10.0 * b.total_linear.log10(), b.total_db, epsilon = 1e-9);
    }

    #[test]
    fn rician_limits() {
        let los = los_matrix(4, 3, 1234.5, 0.003, 0.3, -0.7);
        let mut rng = stream(1, &[]);
        let h = sample_rician(&los, 1e12, &mut rng);
        for (a, b) in h.data.iter().zip(&los.data) {
            assert!((a - b).norm() < 1e-5);
        }
        let a = sample_rician(&los, 3.0, &mut stream(9, &[1]));
        let b = sample_rician(&los, 3.0, &mut stream(9, &[1]));
        assert_eq!(a, b);
    }

    #[test]
    fn rician_second_moment() {
        let los = los_matrix(1, 1, 10.0, 0.003, 0.0, 0.0);
        let mut rng = stream(3, &[]);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_rician(&los, 0.0, &mut rng).data[0].norm_sqr()).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn phase_matrix_examples() {
        let p = unit_panel(3);
        assert_eq!(phase_matrix(&p), CMat::identity(3));
        let q = unit_panel(3).with_phases(vec![0.3, 2.0, 5.9]);
        let prod = phase_matrix(&q).matmul(&phase_matrix(&q).conj_transpose());
        for (a, b) in prod.data.iter().zip(&CMat::identity(3).data) {
            assert!((a - b).norm() < 1e-12);
        }
        let r = unit_panel(2).with_phases(vec![PI, PI]);
        for (a, b) in phase_matrix(&r).data.iter().zip(&CMat::identity(2).data) {
            assert!((a + b).norm() < 1e-12);
        }
    }

    fn single_hop(n: usize) -> CascadeChannel {
        let h = los_matrix(n, 1, 7.0e5, 0.003, 0.9, 0.0);
        let g = los_matrix(n, 1, 6.1e5, 0.003, -1.3, 0.0).data;
        CascadeChannel::los_only(vec![h], g, 1.0).unwrap()
    }

    #[test]
    fn snr_unit_case() {
        let one = CMat::identity(1);
        let c = CascadeChannel::los_only(vec![one], vec![C64::new(1.0, 0.0)], 2.0).unwrap();
        let budget = total_loss(
            &quiet_cfg(),
            &PlasmaConstants::default(),
            &LinkGeometry::single(1.0, 1.0),
            &AntennaGains::UNIT,
            &unit_panel(1),
            &NrpFactors::UNIT,
        )
        .unwrap();
        let p = c.noise_psd * budget.total_linear;
        let g = snr(&c, &[unit_panel(1)], &budget, p, true).unwrap();
        assert_relative_eq!(g, 1.0, epsilon = 1e-12);
        assert_eq!(snr(&c, &[unit_panel(1)], &budget, p, false).unwrap(), 0.0);
    }

    #[test]
    fn coherent_gain_steps() {
        let mut prev: Option<f64> = None;
        for n in [1usize, 2, 4, 8] {
            let mut c = single_hop(n);
            let mut panels = vec![unit_panel(n)];
            c.coherent_configuration(&mut panels, 2).unwrap();
            let g = c.effective_gain(&panels).unwrap().norm_sqr();
            assert_relative_eq!(g.sqrt(), c.coherent_bound(), max_relative = 1e-12);
            let g_db = 10.0 * g.log10();
            if let Some(p) = prev {
                assert!((g_db - p - 20.0 * 2f64.log10()).abs() < 1e-6);
            }
            prev = Some(g_db);
        }
    }

    #[test]
    fn exhaustive_grid_agrees_with_alignment() {
        let mut c = single_hop(2);
        let mut panels = vec![unit_panel(2)];
        c.coherent_configuration(&mut panels, 1).unwrap();
        let best = c.effective_gain(&panels).unwrap().norm_sqr();
        let mut grid_best: f64 = 0.0;
        for a in 0..8 {
            for b in 0..8 {
                let p = vec![unit_panel(2).with_phases(vec![TAU * a as f64 / 8.0, TAU * b as f64 / 8.0])];
                grid_best = grid_best.max(c.effective_gain(&p).unwrap().norm_sqr());
            }
        }
        assert!(grid_best <= best * (1.0 + 1e-12));
        // An 8-level grid loses at most cos²(π/8) of the bound.
        assert!(grid_best >= best * (PI / 8.0).cos().powi(2) - 1e-12);
    }

    #[test]
    fn random_phases_below_bound() {
        let c = single_hop(8);
        let bound = c.coherent_bound().powi(2);
        let mut total = 0.0;
        for seed in 0..100 {
            let mut rng = stream(seed, &[]);
            let ph: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * TAU).collect();
            let r = c.effective_gain(&[unit_panel(8).with_phases(ph)]).unwrap().norm_sqr();
            assert!(r <= bound * (1.0 + 1e-12));
            total += r;
        }
        assert!(total / 100.0 < bound);
    }

    #[test]
    fn ps_reward_examples() {
        let c = single_hop(1);
        for t in [0.0, 1.0, 4.0] {
            let r = ps_reward(&c, &[unit_panel(1).with_phases(vec![t])]).unwrap();
            assert_relative_eq!(r, 1.0, epsilon = 1e-12);
        }
        let mut c8 = single_hop(8);
        let mut panels = vec![unit_panel(8)];
        c8.coherent_configuration(&mut panels, 1).unwrap();
        assert_relative_eq!(ps_reward(&c8, &panels).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn multi_hop_alignment_reaches_bound_on_los() {
        let h1 = los_matrix(4, 3, 7e5, 0.003, 0.4, 1.1);
        let h2 = los_matrix(5, 4, 2e6, 0.003, -0.2, 2.3);
        let g = los_matrix(5, 1, 6e5, 0.003, 0.8, 0.0).data;
        let mut c = CascadeChannel::los_only(vec![h1, h2], g, 1.0).unwrap();
        let mut panels = vec![unit_panel(4), unit_panel(5)];
        c.coherent_configuration(&mut panels, 3).unwrap();
        assert_relative_eq!(c.effective_gain(&panels).unwrap().norm(), c.coherent_bound(), max_relative = 1e-9);
        assert_relative_eq!(c.coherent_bound(), 4.0 * 5.0 * 3f64.sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn rate_examples() {
        assert_relative_eq!(rate(1.0, 1.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(rate(1.0, 3.0), 2.0, epsilon = 1e-12);
        assert_eq!(rate(1.0, 0.0), 0.0);
        assert!(rate(1e9, 1e-30) > 0.0);
    }
}
