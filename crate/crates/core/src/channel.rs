//! Channel covariance construction, channel sampling, angular mobility and
//! angle-of-arrival estimate noise.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{sinc, CMatrix, CVector, HermitianMatrix};
use crate::scenario::{MpcSpec, ScenarioConfig};

/// `(1/sqrt(N)) [1, e^{j theta}, ..., e^{j(N-1) theta}]`.
pub fn steering_vector(theta: f64, n_antennas: usize) -> CVector {
    let s = 1.0 / (n_antennas as f64).sqrt();
    CVector::from_iterator(
        n_antennas,
        (0..n_antennas).map(|k| Complex64::from_polar(s, k as f64 * theta)),
    )
}

/// Half-wavelength ULA response to an incidence at azimuth `phi` (radians).
pub fn array_response(phi: f64, n_antennas: usize) -> CVector {
    steering_vector(PI * phi.sin(), n_antennas)
}

/// Azimuth to phase, `theta = pi sin(phi)`.
pub fn phi_to_theta(phi: f64) -> Result<f64> {
    if !(phi.abs() < FRAC_PI_2) {
        return Err(Error::Domain(phi));
    }
    Ok(PI * phi.sin())
}

/// An angular sector in the phase domain: center and width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSector {
    pub mu: f64,
    pub sigma: f64,
}

impl ThetaSector {
    /// Maps the azimuth sector `[mu - sigma/2, mu + sigma/2]` through the
    /// phase transformation by its endpoints.
    pub fn from_azimuth(mu_phi: f64, sigma_phi: f64) -> Result<Self> {
        let t1 = phi_to_theta(mu_phi - sigma_phi / 2.0)?;
        let t2 = phi_to_theta(mu_phi + sigma_phi / 2.0)?;
        Ok(Self {
            mu: 0.5 * (t1 + t2),
            sigma: t2 - t1,
        })
    }
}

/// The sinc kernel `D(sigma)_{m,n} = sinc((m - n) sigma / 2 pi)`.
pub fn d_kernel(sigma: f64, n: usize) -> DMatrix<f64> {
    let row: Vec<f64> = (0..n).map(|k| sinc(k as f64 * sigma / (2.0 * PI))).collect();
    DMatrix::from_fn(n, n, |a, b| row[a.abs_diff(b)])
}

/// Closed form CCM of a unit-mass rectangular phase-domain profile:
/// `(q(mu) q(mu)^H) .* D(sigma)`.
pub fn hadamard_ccm(mu_theta: f64, sigma_theta: f64, n: usize) -> HermitianMatrix {
    let inv_n = 1.0 / n as f64;
    // Toeplitz: entry (a, b) depends on a - b only
    let lag: Vec<Complex64> = (0..n)
        .map(|k| {
            Complex64::from_polar(
                inv_n * sinc(k as f64 * sigma_theta / (2.0 * PI)),
                k as f64 * mu_theta,
            )
        })
        .collect();
    toeplitz_hermitian(&lag)
}

/// Hermitian Toeplitz matrix from its first column.
pub(crate) fn toeplitz_hermitian(first_col: &[Complex64]) -> HermitianMatrix {
    let n = first_col.len();
    let m = CMatrix::from_fn(n, n, |a, b| {
        if a >= b {
            first_col[a - b]
        } else {
            first_col[b - a].conj()
        }
    });
    HermitianMatrix::from_hermitian_part(&m)
}

/// Midpoint-rule quadrature of the integral of `rho(theta) q q^H` for a
/// unit-mass rectangular profile of width `sigma_theta` about `mu_theta`.
pub fn ccm_from_profile_integral(
    mu_theta: f64,
    sigma_theta: f64,
    n: usize,
    quadrature_points: usize,
) -> Result<HermitianMatrix> {
    if quadrature_points < 2 {
        return Err(Error::InvalidArgument(
            "quadrature needs at least 2 points".into(),
        ));
    }
    if !(sigma_theta > 0.0) {
        return Err(Error::InvalidArgument("sigma_theta must be > 0".into()));
    }
    let h = sigma_theta / quadrature_points as f64;
    let lo = mu_theta - sigma_theta / 2.0;
    // weight per node: rho * h = 1 / Q
    let w = 1.0 / quadrature_points as f64;
    let mut lag = vec![Complex64::new(0.0, 0.0); n];
    let mut powers = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..quadrature_points {
        let theta = lo + (i as f64 + 0.5) * h;
        let z = Complex64::from_polar(1.0, theta);
        let mut p = Complex64::new(1.0, 0.0);
        for slot in powers.iter_mut() {
            *slot = p;
            p *= z;
        }
        for (acc, p) in lag.iter_mut().zip(&powers) {
            *acc += p;
        }
    }
    let scale = w / n as f64;
    for v in &mut lag {
        *v *= scale;
    }
    Ok(toeplitz_hermitian(&lag))
}

/// Covariance of one MPC of a group with its delay tap.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcCovariance {
    pub delay: usize,
    pub ccm: HermitianMatrix,
}

/// Per-group, per-MPC channel covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCovariances {
    pub groups: Vec<Vec<MpcCovariance>>,
}

impl ChannelCovariances {
    pub fn dim(&self) -> Option<usize> {
        self.groups.iter().flatten().next().map(|m| m.ccm.dim())
    }

    /// `sum_l R_l` for a group.
    pub fn group_sum(&self, group: usize, n: usize) -> Result<HermitianMatrix> {
        let mut acc = HermitianMatrix::zeros(n);
        for m in &self.groups[group] {
            acc.add_scaled(1.0, &m.ccm)?;
        }
        Ok(acc)
    }

    /// Covariances for the given azimuth centers, one slice per group.
    pub fn from_angles(config: &ScenarioConfig, centers_rad: &[Vec<f64>]) -> Result<Self> {
        let n = config.num_antennas;
        let mut groups = Vec::with_capacity(config.groups.len());
        for (g, spec) in config.groups.iter().enumerate() {
            let masses = spec.mpc_masses();
            let mut v = Vec::with_capacity(spec.mpcs.len());
            for (m, mpc) in spec.mpcs.iter().enumerate() {
                let sector = ThetaSector::from_azimuth(centers_rad[g][m], mpc.angular_spread_deg.to_radians())?;
                v.push(MpcCovariance {
                    delay: mpc.delay,
                    ccm: hadamard_ccm(sector.mu, sector.sigma, n).scale(masses[m]),
                });
            }
            groups.push(v);
        }
        Ok(Self { groups })
    }

    /// Covariances at the configured (initial) center angles.
    pub fn nominal(config: &ScenarioConfig) -> Result<Self> {
        let centers: Vec<Vec<f64>> = config
            .groups
            .iter()
            .map(|g| g.mpcs.iter().map(|m| m.center_angle_deg.to_radians()).collect())
            .collect();
        Self::from_angles(config, &centers)
    }
}

fn check_layout(ccms: &ChannelCovariances, config: &ScenarioConfig) -> Result<()> {
    if ccms.groups.len() != config.groups.len() {
        return Err(Error::Dimension {
            expected: config.groups.len(),
            got: ccms.groups.len(),
        });
    }
    for m in ccms.groups.iter().flatten() {
        if m.ccm.dim() != config.num_antennas {
            return Err(Error::Dimension {
                expected: config.num_antennas,
                got: m.ccm.dim(),
            });
        }
    }
    Ok(())
}

/// Observation correlation `R_y = sum_g K_g E_s sum_l R_l + N_0 I`.
pub fn assemble_ry(ccms: &ChannelCovariances, config: &ScenarioConfig) -> Result<HermitianMatrix> {
    check_layout(ccms, config)?;
    let n = config.num_antennas;
    let mut ry = HermitianMatrix::scaled_identity(n, config.noise_power);
    for (g, spec) in config.groups.iter().enumerate() {
        let w = spec.num_users as f64 * spec.symbol_energy;
        for m in &ccms.groups[g] {
            ry.add_scaled(w, &m.ccm)?;
        }
    }
    Ok(ry)
}

/// Interference-plus-noise correlation of `group`: `R_y - K_g E_s sum_l R_l`.
pub fn assemble_r_eta(
    ry: &HermitianMatrix,
    group: usize,
    ccms: &ChannelCovariances,
    config: &ScenarioConfig,
) -> Result<HermitianMatrix> {
    check_layout(ccms, config)?;
    if ry.dim() != config.num_antennas {
        return Err(Error::Dimension {
            expected: config.num_antennas,
            got: ry.dim(),
        });
    }
    let spec = config
        .groups
        .get(group)
        .ok_or_else(|| Error::InvalidArgument(format!("no group {group}")))?;
    let mut r = ry.clone();
    let w = spec.num_users as f64 * spec.symbol_energy;
    for m in &ccms.groups[group] {
        r.add_scaled(-w, &m.ccm)?;
    }
    Ok(r)
}

/// One draw of every group's channel: `taps[g][l]` is `N x K_g`, `None` for
/// delays without an MPC.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub taps: Vec<Vec<Option<CMatrix>>>,
}

impl ChannelRealization {
    pub fn tap(&self, group: usize, delay: usize) -> Option<&CMatrix> {
        self.taps[group].get(delay).and_then(|t| t.as_ref())
    }

    pub fn memory(&self) -> usize {
        self.taps.first().map_or(0, |t| t.len())
    }
}

/// Draws standard circular complex normal entries.
pub fn complex_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * s, im * s)
    })
}

/// Caches CCM square-root factors for repeated channel draws.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    n: usize,
    memory: usize,
    users: Vec<usize>,
    factors: Vec<Vec<(usize, CMatrix)>>,
}

impl ChannelSampler {
    pub fn new(ccms: &ChannelCovariances, config: &ScenarioConfig) -> Result<Self> {
        check_layout(ccms, config)?;
        let mut factors = Vec::with_capacity(ccms.groups.len());
        for g in &ccms.groups {
            let mut v = Vec::with_capacity(g.len());
            for m in g {
                v.push((m.delay, m.ccm.psd_factor()?));
            }
            factors.push(v);
        }
        Ok(Self {
            n: config.num_antennas,
            memory: config.channel_memory(),
            users: config.groups.iter().map(|g| g.num_users).collect(),
            factors,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        let mut taps = Vec::with_capacity(self.factors.len());
        for (g, fs) in self.factors.iter().enumerate() {
            let mut t: Vec<Option<CMatrix>> = vec![None; self.memory];
            for (delay, f) in fs {
                let w = complex_normal_matrix(f.ncols(), self.users[g], rng);
                let h = if f.ncols() == 0 {
                    CMatrix::zeros(self.n, self.users[g])
                } else {
                    f * w
                };
                t[*delay] = Some(h);
            }
            taps.push(t);
        }
        ChannelRealization { taps }
    }
}

/// Draws every user's channel taps as `R^{1/2} w`, independent across users,
/// delays and groups.
pub fn sample_channels<R: Rng + ?Sized>(
    ccms: &ChannelCovariances,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    Ok(ChannelSampler::new(ccms, config)?.sample(rng))
}

/// Slow-time state of one MPC. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcState {
    pub mu_phi_init: f64,
    pub delta_mu: f64,
    pub mu_phi_true: f64,
    pub mu_phi_est: f64,
    pub sigma_phi: f64,
    pub delay: usize,
}

impl MpcState {
    pub fn new(spec: &MpcSpec) -> Self {
        let mu = spec.center_angle_deg.to_radians();
        Self {
            mu_phi_init: mu,
            delta_mu: 0.0,
            mu_phi_true: mu,
            mu_phi_est: mu,
            sigma_phi: spec.angular_spread_deg.to_radians(),
            delay: spec.delay,
        }
    }

    pub fn true_sector(&self) -> Result<ThetaSector> {
        ThetaSector::from_azimuth(self.mu_phi_true, self.sigma_phi)
    }

    pub fn estimated_sector(&self) -> Result<ThetaSector> {
        ThetaSector::from_azimuth(self.mu_phi_est, self.sigma_phi)
    }
}

/// AR(1) mobility and Gaussian AoA-estimate noise parameters, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityModel {
    pub alpha: f64,
    pub sigma_v: f64,
    pub sigma_est: f64,
}

impl MobilityModel {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        Self {
            alpha: config.mobility_alpha,
            sigma_v: config.mobility_sigma_v_deg.to_radians(),
            sigma_est: config.aoa_error_std_deg.to_radians(),
        }
    }

    /// `dmu[n] = alpha dmu[n-1] + sqrt(1 - alpha^2) v[n]`, `v ~ N(0, sigma_v^2)`.
    pub fn step<R: Rng + ?Sized>(&self, state: &MpcState, rng: &mut R) -> MpcState {
        let v: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma_v;
        let delta_mu = self.alpha * state.delta_mu + (1.0 - self.alpha * self.alpha).sqrt() * v;
        MpcState {
            delta_mu,
            mu_phi_true: state.mu_phi_init + delta_mu,
            ..*state
        }
    }

    /// `mu_hat = mu + e`, `e ~ N(0, sigma_est^2)`.
    pub fn observe<R: Rng + ?Sized>(&self, state: &MpcState, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        state.mu_phi_true + self.sigma_est * e
    }
}

pub fn step_mobility<R: Rng + ?Sized>(state: &MpcState, config: &ScenarioConfig, rng: &mut R) -> MpcState {
    MobilityModel::from_config(config).step(state, rng)
}

pub fn observe_aoa<R: Rng + ?Sized>(state: &MpcState, config: &ScenarioConfig, rng: &mut R) -> f64 {
    MobilityModel::from_config(config).observe(state, rng)
}

/// Unit-modulus QPSK symbol.
pub fn qpsk<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re = if rng.random::<bool>() { s } else { -s };
    let im = if rng.random::<bool>() { s } else { -s };
    Complex64::new(re, im)
}

/// `K_g x count` i.i.d. QPSK symbols scaled to energy `E_s`.
pub fn generate_symbols<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    group: usize,
    count: usize,
    rng: &mut R,
) -> CMatrix {
    let spec = &config.groups[group];
    let amp = spec.symbol_energy.sqrt();
    CMatrix::from_fn(spec.num_users, count, |_, _| qpsk(rng) * amp)
}
