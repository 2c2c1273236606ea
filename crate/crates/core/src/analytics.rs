//! Closed-form performance measures: CMF signal and interference powers,
//! asymptotic statistics of recursively filtered CCM estimates, beamspace
//! spread profiles, outage and slow-time averages.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use nalgebra::DMatrix;

use crate::channel::array_response;
use crate::error::{Error, Result};
use crate::linalg::{trace_of_product, CMatrix, HermitianMatrix};
use crate::receiver::EffectiveCovariances;
use crate::scenario::ScenarioConfig;

/// Expected CMF output powers of one user under perfect CSI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmfPowers {
    pub signal: f64,
    pub interference_noise: f64,
}

impl CmfPowers {
    pub fn sinr_db(&self) -> f64 {
        10.0 * (self.signal / self.interference_noise).log10()
    }
}

/// Signal power `E_s [(tr R_sum)^2 + sum_l tr(R_l^2)]` and the remaining
/// output power. The total output power is
/// `E_s (tr R_sum)^2 + sum_g E_s^g K_g tr(R_sum R_sum^g) + N_0 tr(R_sum S^H S)`.
pub fn cmf_powers_analytical(eff: &EffectiveCovariances, config: &ScenarioConfig, group: usize) -> Result<CmfPowers> {
    let spec = config
        .groups
        .get(group)
        .ok_or_else(|| Error::InvalidArgument(format!("no group {group}")))?;
    let es = spec.symbol_energy;
    let r_sum = eff.group_sum(group);
    let tr = r_sum.trace();
    let own: f64 = eff.groups[group]
        .iter()
        .map(|(_, r)| trace_of_product(r.matrix(), r.matrix()).re)
        .sum();
    let signal = es * (tr * tr + own);
    let mut total = es * tr * tr;
    for (g, gs) in config.groups.iter().enumerate() {
        let other = eff.group_sum(g);
        total += gs.symbol_energy * gs.num_users as f64 * trace_of_product(r_sum.matrix(), other.matrix()).re;
    }
    total += eff.noise_power * trace_of_product(r_sum.matrix(), eff.gram.matrix()).re;
    let interference_noise = total - signal;
    if !(interference_noise > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "non-positive interference plus noise power {interference_noise}"
        )));
    }
    Ok(CmfPowers {
        signal,
        interference_noise,
    })
}

/// Analytical CMF output SINR in dB.
pub fn cmf_sinr_analytical(eff: &EffectiveCovariances, config: &ScenarioConfig, group: usize) -> Result<f64> {
    Ok(cmf_powers_analytical(eff, config, group)?.sinr_db())
}

/// Phase-domain error standard deviation for an azimuth error `sigma_est`
/// around `mu_phi`, by linearizing `theta = pi sin(phi)`.
pub fn sigma_e_from_sigma_est(mu_phi: f64, sigma_est: f64) -> f64 {
    PI * mu_phi.cos().abs() * sigma_est
}

/// Mean and variance of recursively filtered estimates
/// `R_ab e^{j (a - b) e}`, `e ~ N(0, sigma_e^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterAsymptotics {
    pub mean: CMatrix,
    /// Entrywise variance of a single estimate.
    pub single_variance: DMatrix<f64>,
    /// Entrywise steady-state variance of the filtered estimate.
    pub variance: DMatrix<f64>,
    pub limit_ratio: f64,
}

/// Variance of the filtered estimate after `n` steps relative to a single
/// estimate, for a recursion started at the first estimate.
pub fn filtered_variance_factor(beta: f64, n: u32) -> f64 {
    let b2n = beta.powi(2 * n as i32);
    b2n + (1.0 - beta) / (1.0 + beta) * (1.0 - b2n)
}

pub fn recursive_filter_asymptotics(ccm: &HermitianMatrix, sigma_e: f64, beta: f64) -> Result<FilterAsymptotics> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1)")));
    }
    let r = ccm.matrix();
    let n = r.nrows();
    let s2 = sigma_e * sigma_e;
    let lag2 = |a: usize, b: usize| {
        let m = a as f64 - b as f64;
        m * m
    };
    let mean = CMatrix::from_fn(n, n, |a, b| r[(a, b)] * (-lag2(a, b) * s2 / 2.0).exp());
    let single_variance = DMatrix::from_fn(n, n, |a, b| r[(a, b)].norm_sqr() * (1.0 - (-lag2(a, b) * s2).exp()));
    let limit_ratio = (1.0 - beta) / (1.0 + beta);
    let variance = &single_variance * limit_ratio;
    Ok(FilterAsymptotics {
        mean,
        single_variance,
        variance,
        limit_ratio,
    })
}

/// `u(phi)^H M u(phi)` over the grid.
pub fn spread_spectrum_plot(mean: &CMatrix, phi_grid: &[f64]) -> Result<Vec<f64>> {
    phi_grid
        .iter()
        .map(|&phi| {
            if !(phi.abs() <= FRAC_PI_2) {
                return Err(Error::Domain(phi));
            }
            let u = array_response(phi, mean.nrows());
            Ok(u.dotc(&(mean * &u)).re)
        })
        .collect()
}

/// Width of the region around the peak staying within `drop_db` of it,
/// in grid units of `phi_grid`.
pub fn beamwidth(profile: &[f64], phi_grid: &[f64], drop_db: f64) -> f64 {
    let Some((peak, &pmax)) = profile.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return 0.0;
    };
    let floor = pmax * 10f64.powf(-drop_db / 10.0);
    let mut lo = peak;
    while lo > 0 && profile[lo - 1] >= floor {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < profile.len() && profile[hi + 1] >= floor {
        hi += 1;
    }
    phi_grid[hi] - phi_grid[lo]
}

/// Fraction of values strictly below `threshold_db`.
pub fn outage_probability(sinr_db: &[f64], threshold_db: f64) -> Result<f64> {
    if sinr_db.is_empty() {
        return Err(Error::InvalidArgument("empty SINR series".into()));
    }
    Ok(sinr_db.iter().filter(|&&s| s < threshold_db).count() as f64 / sinr_db.len() as f64)
}

/// Mean of the linear SINR over steps `burn_in..`, in dB.
pub fn slow_time_average_db(series_db: &[f64], burn_in: usize) -> Result<f64> {
    let tail = series_db
        .get(burn_in..)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| Error::InvalidArgument("no samples after burn-in".into()))?;
    let mean = tail.iter().map(|s| 10f64.powf(s / 10.0)).sum::<f64>() / tail.len() as f64;
    Ok(10.0 * mean.log10())
}

/// A figure-ready `(x, y)` series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub figure_id: String,
    pub curve_id: String,
    pub points: Vec<(f64, f64)>,
}

/// Writes series as `figure_id,curve_id,x,y` rows.
pub fn write_series_csv<W: Write + ?Sized>(out: &mut W, series: &[Series]) -> std::io::Result<()> {
    writeln!(out, "figure_id,curve_id,x,y")?;
    for s in series {
        for (x, y) in &s.points {
            writeln!(out, "{},{},{},{}", s.figure_id, s.curve_id, x, y)?;
        }
    }
    Ok(())
}

/// Beamspace profiles of the mean filtered CCM of one MPC for several
/// azimuth error levels (degrees).
pub fn spread_profiles(
    mu_phi_deg: f64,
    sigma_phi_deg: f64,
    n: usize,
    sigma_est_deg: &[f64],
    phi_grid: &[f64],
) -> Result<Vec<Series>> {
    let sector = crate::channel::ThetaSector::from_azimuth(mu_phi_deg.to_radians(), sigma_phi_deg.to_radians())?;
    let r = crate::channel::hadamard_ccm(sector.mu, sector.sigma, n);
    sigma_est_deg
        .iter()
        .map(|&s| {
            let se = sigma_e_from_sigma_est(mu_phi_deg.to_radians(), s.to_radians());
            let asym = recursive_filter_asymptotics(&r, se, 0.0)?;
            let prof = spread_spectrum_plot(&asym.mean, phi_grid)?;
            Ok(Series {
                figure_id: "spread".into(),
                curve_id: format!("sigma_est={s}"),
                points: phi_grid.iter().map(|p| p.to_degrees()).zip(prof).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{hadamard_ccm, ChannelCovariances};
    use crate::linalg::frobenius;
    use crate::receiver::effective_covariances;
    use crate::scenario::small_preset;

    #[test]
    fn scalar_reduction() {
        // N = 1, one group, one MPC, unit S: R_eff = t
        let mut cfg = small_preset();
        cfg.num_antennas = 1;
        cfg.groups.truncate(1);
        cfg.groups[0].mpcs.truncate(1);
        cfg.groups[0].rf_chains_per_mpc = vec![1];
        let t = 0.7;
        let r = HermitianMatrix::scaled_identity(1, t);
        let eff = EffectiveCovariances {
            groups: vec![vec![(0, r.clone())]],
            eta: vec![HermitianMatrix::scaled_identity(1, cfg.noise_power)],
            gram: HermitianMatrix::scaled_identity(1, 1.0),
            noise_power: cfg.noise_power,
        };
        let p = cmf_powers_analytical(&eff, &cfg, 0).unwrap();
        let es = cfg.groups[0].symbol_energy;
        assert!((p.signal - es * 2.0 * t * t).abs() < 1e-12);
        assert!((p.interference_noise - cfg.noise_power * t).abs() < 1e-12);
    }

    #[test]
    fn weaker_interferers_raise_sinr() {
        let cfg = small_preset();
        let ccms = ChannelCovariances::nominal(&cfg).unwrap();
        let s = CMatrix::identity(cfg.num_antennas, 3);
        let eff = effective_covariances(&s, &ccms, &cfg).unwrap();
        let a = cmf_sinr_analytical(&eff, &cfg, 0).unwrap();
        let mut quiet = cfg.clone();
        for g in quiet.groups.iter_mut().skip(1) {
            g.symbol_energy *= 0.01;
        }
        let b = cmf_sinr_analytical(&eff, &quiet, 0).unwrap();
        assert!(b > a);
    }

    #[test]
    fn zero_error_asymptotics() {
        let r = hadamard_ccm(0.3, 0.2, 8);
        let a = recursive_filter_asymptotics(&r, 0.0, 0.9).unwrap();
        assert!(frobenius(&(&a.mean - r.matrix())) < 1e-15);
        assert!(a.variance.iter().all(|&v| v == 0.0));
        assert!((a.limit_ratio - 1.0 / 19.0).abs() < 1e-15);
    }

    #[test]
    fn finite_n_factor() {
        assert!((filtered_variance_factor(0.9, 0) - 1.0).abs() < 1e-15);
        let lim = filtered_variance_factor(0.9, 10_000);
        assert!((lim - 1.0 / 19.0).abs() < 1e-12);
        assert!(filtered_variance_factor(0.9, 1) > filtered_variance_factor(0.9, 10));
    }

    #[test]
    fn spread_widens_with_error() {
        let grid: Vec<f64> = (-900..=900).map(|i| (i as f64 * 0.02).to_radians()).collect();
        let series = spread_profiles(0.0, 3.0, 100, &[0.0, 0.5, 1.0, 2.0], &grid).unwrap();
        let widths: Vec<f64> = series
            .iter()
            .map(|s| {
                let prof: Vec<f64> = s.points.iter().map(|p| p.1).collect();
                beamwidth(&prof, &grid, 3.0)
            })
            .collect();
        assert!(widths.windows(2).all(|w| w[1] > w[0]), "{widths:?}");
        // flat-topped profiles: check the center of the -3 dB region
        for s in &series {
            let pmax = s.points.iter().map(|p| p.1).fold(0.0, f64::max);
            let inside: Vec<f64> = s.points.iter().filter(|p| p.1 >= pmax / 2.0).map(|p| p.0).collect();
            let center = 0.5 * (inside[0] + inside[inside.len() - 1]);
            assert!(center.abs() < 0.05, "{center}");
        }
    }

    #[test]
    fn spread_plot_rejects_out_of_range() {
        let m = CMatrix::identity(4, 4);
        assert!(spread_spectrum_plot(&m, &[2.0]).is_err());
        let p = spread_spectrum_plot(&m, &[0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outage_examples() {
        assert_eq!(outage_probability(&[30.0; 5], 20.0).unwrap(), 0.0);
        assert_eq!(outage_probability(&[10.0; 5], 20.0).unwrap(), 1.0);
        assert!(outage_probability(&[], 20.0).is_err());
    }

    #[test]
    fn slow_time_average() {
        assert!((slow_time_average_db(&[10.0, 10.0], 0).unwrap() - 10.0).abs() < 1e-12);
        let v = slow_time_average_db(&[0.0, 10.0], 0).unwrap();
        assert!((v - 10.0 * 5.5f64.log10()).abs() < 1e-12);
        assert!(slow_time_average_db(&[1.0], 1).is_err());
    }

    #[test]
    fn series_csv() {
        let mut buf = Vec::new();
        write_series_csv(
            &mut buf,
            &[Series {
                figure_id: "f".into(),
                curve_id: "c".into(),
                points: vec![(1.0, 2.0)],
            }],
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "figure_id,curve_id,x,y\nf,c,1,2\n");
    }
}
