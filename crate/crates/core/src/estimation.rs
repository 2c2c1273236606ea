//! Reduced-dimension channel estimation from a training block: training
//! matrices, the stacked observation model, the approximated MMSE estimator
//! built from effective covariances, and its normalized MSE.
//!
//! Stacked channel vectors are ordered user-major, then delay, then beam:
//! entry `(k L + l) D + b` is beam `b` of user `k` at delay `l`.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{complex_normal_matrix, generate_symbols, qpsk, ChannelSampler};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_pd, CMatrix, CVector};
use crate::receiver::{effective_channels, project, EffectiveCovariances, EffectiveTaps};
use crate::scenario::ScenarioConfig;

/// How training sequences are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainingFamily {
    /// Independent QPSK per user.
    #[default]
    RandomQpsk,
    /// One QPSK base sequence, cyclically shifted by `L` per user.
    CyclicShift,
}

/// Known training symbols of one group and their convolution matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBlock {
    length: usize,
    memory: usize,
    /// `K x (T + L - 1)`, column `j` is time `j - (L - 1)`.
    symbols: CMatrix,
    /// `T x K L`, `[X^(1) ... X^(K)]` with `X^(k)_{t,l} = x^(k)_{t-l}`.
    x_matrix: CMatrix,
}

impl TrainingBlock {
    /// Builds the block from explicit symbols (`K x (T + L - 1)`).
    pub fn from_symbols(symbols: CMatrix, length: usize, memory: usize) -> Result<Self> {
        if length < 1 || memory < 1 {
            return Err(Error::InvalidArgument("training needs T >= 1 and L >= 1".into()));
        }
        if symbols.ncols() != length + memory - 1 {
            return Err(Error::Dimension {
                expected: length + memory - 1,
                got: symbols.ncols(),
            });
        }
        let k = symbols.nrows();
        let x_matrix = CMatrix::from_fn(length, k * memory, |t, c| {
            let (u, l) = (c / memory, c % memory);
            symbols[(u, t + memory - 1 - l)]
        });
        Ok(Self {
            length,
            memory,
            symbols,
            x_matrix,
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn num_users(&self) -> usize {
        self.symbols.nrows()
    }

    pub fn symbols(&self) -> &CMatrix {
        &self.symbols
    }

    pub fn x_matrix(&self) -> &CMatrix {
        &self.x_matrix
    }

    /// `X kron I_D`.
    pub fn kron_identity(&self, d: usize) -> CMatrix {
        let x = &self.x_matrix;
        let mut out = CMatrix::zeros(x.nrows() * d, x.ncols() * d);
        for t in 0..x.nrows() {
            for c in 0..x.ncols() {
                let v = x[(t, c)];
                if v == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for b in 0..d {
                    out[(t * d + b, c * d + b)] = v;
                }
            }
        }
        out
    }
}

/// Channel memory of one group, `1 + ` its largest delay.
pub fn group_memory(config: &ScenarioConfig, group: usize) -> usize {
    1 + config.groups[group].mpcs.iter().map(|m| m.delay).max().unwrap_or(0)
}

/// Seeded training block of length `t_len` for `group`, scaled by
/// `sqrt(E_s)`.
pub fn build_training<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    group: usize,
    t_len: usize,
    family: TrainingFamily,
    rng: &mut R,
) -> Result<TrainingBlock> {
    if t_len < 1 {
        return Err(Error::InvalidArgument("training length must be >= 1".into()));
    }
    let spec = config
        .groups
        .get(group)
        .ok_or_else(|| Error::InvalidArgument(format!("no group {group}")))?;
    let memory = group_memory(config, group);
    let cols = t_len + memory - 1;
    let symbols = match family {
        TrainingFamily::RandomQpsk => generate_symbols(config, group, cols, rng),
        TrainingFamily::CyclicShift => {
            let amp = spec.symbol_energy.sqrt();
            let base: Vec<Complex64> = (0..cols).map(|_| qpsk(rng) * amp).collect();
            CMatrix::from_fn(spec.num_users, cols, |u, j| base[(j + u * memory) % cols])
        }
    };
    TrainingBlock::from_symbols(symbols, t_len, memory)
}

/// Stacks the first `memory` taps of a group's effective channel.
pub fn stack_channel(taps: &EffectiveTaps, memory: usize, users: usize, d: usize) -> CVector {
    let mut v = CVector::zeros(users * memory * d);
    for (l, h) in taps.iter().take(memory).enumerate() {
        let Some(h) = h else { continue };
        for u in 0..users {
            for b in 0..d {
                v[(u * memory + l) * d + b] = h[(b, u)];
            }
        }
    }
    v
}

/// Inverse of [`stack_channel`].
pub fn unstack_channel(v: &CVector, memory: usize, users: usize, d: usize) -> Vec<CMatrix> {
    (0..memory)
        .map(|l| CMatrix::from_fn(d, users, |b, u| v[(u * memory + l) * d + b]))
        .collect()
}

/// `s = (X kron I_D) h + interference + (I_T kron S^H) n`, with the other
/// groups in data mode. `symbols[g]` column `preamble + t` is time `t`
/// (the intended group's entry is ignored); `projected_noise` is `D x T`.
pub fn stacked_observation(
    training: &TrainingBlock,
    eff_channels: &[EffectiveTaps],
    symbols: &[CMatrix],
    preamble: usize,
    projected_noise: &CMatrix,
    group: usize,
) -> Result<CVector> {
    let t_len = training.length();
    let d = projected_noise.nrows();
    if projected_noise.ncols() != t_len {
        return Err(Error::Dimension {
            expected: t_len,
            got: projected_noise.ncols(),
        });
    }
    let k = training.num_users();
    let h = stack_channel(&eff_channels[group], training.memory(), k, d);
    let mut s = training.kron_identity(d) * h;
    for (g, taps) in eff_channels.iter().enumerate() {
        if g == group {
            continue;
        }
        let x = &symbols[g];
        for (l, hl) in taps.iter().enumerate() {
            let Some(hl) = hl else { continue };
            if l > preamble || x.ncols() < preamble + t_len {
                return Err(Error::InvalidArgument(format!("group {g} data stream too short")));
            }
            for t in 0..t_len {
                let y = hl * x.column(preamble + t - l);
                for b in 0..d {
                    s[t * d + b] += y[b];
                }
            }
        }
    }
    for t in 0..t_len {
        for b in 0..d {
            s[t * d + b] += projected_noise[(b, t)];
        }
    }
    Ok(s)
}

/// Second-order statistics of the stacked model.
#[derive(Debug, Clone)]
pub struct StackedStatistics {
    /// `I_K kron blockdiag_l(R_eff,l)`.
    pub r_bar_eff: CMatrix,
    /// `X kron I_D`.
    pub xk: CMatrix,
    /// `xk R_bar_eff xk^H + I_T kron R_eff,eta`.
    pub r_bar_s: CMatrix,
}

pub fn stacked_statistics(
    training: &TrainingBlock,
    eff: &EffectiveCovariances,
    group: usize,
) -> Result<StackedStatistics> {
    let d = eff.dim();
    let (k, mem, t_len) = (training.num_users(), training.memory(), training.length());
    let mut r_bar_eff = CMatrix::zeros(k * mem * d, k * mem * d);
    for (delay, r) in &eff.groups[group] {
        if *delay >= mem {
            return Err(Error::InvalidArgument(format!(
                "delay {delay} beyond training memory {mem}"
            )));
        }
        for u in 0..k {
            let at = (u * mem + delay) * d;
            r_bar_eff.view_mut((at, at), (d, d)).copy_from(r.matrix());
        }
    }
    let xk = training.kron_identity(d);
    let mut r_bar_s = &xk * &r_bar_eff * xk.adjoint();
    for t in 0..t_len {
        let mut blk = r_bar_s.view_mut((t * d, t * d), (d, d));
        blk += eff.eta[group].matrix();
    }
    Ok(StackedStatistics { r_bar_eff, xk, r_bar_s })
}

/// `Z = C R_s^{-1}` with `C = R_bar_eff (X kron I)^H`, from (possibly
/// estimated) effective covariances.
pub fn mmse_estimator(training: &TrainingBlock, r_eff_est: &EffectiveCovariances, group: usize) -> Result<CMatrix> {
    let st = stacked_statistics(training, r_eff_est, group)?;
    let c = &st.r_bar_eff * st.xk.adjoint();
    let chol = match cholesky_pd(&st.r_bar_s, "stacked observation covariance") {
        Ok(ch) => ch,
        Err(_) => {
            let tr: f64 = st.r_bar_s.diagonal().iter().map(|z| z.re).sum();
            log::warn!("stacked observation covariance singular, adding ridge");
            let n = st.r_bar_s.nrows();
            let ridge = CMatrix::identity(n, n) * Complex64::new(1e-10 * tr.max(f64::MIN_POSITIVE), 0.0);
            cholesky_pd(&(&st.r_bar_s + ridge), "stacked observation covariance")?
        }
    };
    // Z = C R_s^{-1}  <=>  Z^H = R_s^{-1} C^H
    Ok(chol.solve(&c.adjoint()).adjoint())
}

/// `(tr R + tr Phi - 2 Re tr Psi) / tr R` under the true statistics.
pub fn nmse_analytical(
    z: &CMatrix,
    training: &TrainingBlock,
    true_eff: &EffectiveCovariances,
    group: usize,
) -> Result<f64> {
    let st = stacked_statistics(training, true_eff, group)?;
    if z.nrows() != st.r_bar_eff.nrows() || z.ncols() != st.r_bar_s.nrows() {
        return Err(Error::Dimension {
            expected: st.r_bar_eff.nrows(),
            got: z.nrows(),
        });
    }
    let tr_r: f64 = st.r_bar_eff.diagonal().iter().map(|c| c.re).sum();
    if tr_r <= 0.0 {
        return Err(Error::InvalidArgument("zero effective channel power".into()));
    }
    let phi = z * &st.r_bar_s * z.adjoint();
    let psi = z * &st.xk * &st.r_bar_eff;
    let tr_phi: f64 = phi.diagonal().iter().map(|c| c.re).sum();
    let tr_psi: f64 = psi.diagonal().iter().map(|c| c.re).sum();
    Ok((tr_r + tr_phi - 2.0 * tr_psi) / tr_r)
}

/// Empirical nMSE of `Z` over `trials` channel, data and noise draws:
/// `sum ||h - Z s||^2 / (trials tr R_bar_eff)`.
#[allow(clippy::too_many_arguments)]
pub fn nmse_monte_carlo<R: Rng + ?Sized>(
    z: &CMatrix,
    training: &TrainingBlock,
    sampler: &ChannelSampler,
    true_eff: &EffectiveCovariances,
    s: &CMatrix,
    config: &ScenarioConfig,
    group: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be > 0".into()));
    }
    let st = stacked_statistics(training, true_eff, group)?;
    let tr_r: f64 = st.r_bar_eff.diagonal().iter().map(|c| c.re).sum();
    let t_len = training.length();
    let d = s.ncols();
    let pre = config.channel_memory() - 1;
    let noise_amp = Complex64::new(config.noise_power.sqrt(), 0.0);
    let mut err = 0.0;
    for _ in 0..trials {
        let ch = sampler.sample(rng);
        let heff = effective_channels(s, &ch);
        let symbols: Vec<CMatrix> = (0..config.groups.len())
            .map(|g| {
                if g == group {
                    CMatrix::zeros(0, 0)
                } else {
                    generate_symbols(config, g, pre + t_len, rng)
                }
            })
            .collect();
        let noise = complex_normal_matrix(config.num_antennas, t_len, rng) * noise_amp;
        let pn = project(&noise, s)?;
        let sbar = stacked_observation(training, &heff, &symbols, pre, &pn, group)?;
        let h = stack_channel(&heff[group], training.memory(), training.num_users(), d);
        err += (h - z * sbar).norm_squared();
    }
    Ok(err / (trials as f64 * tr_r))
}
