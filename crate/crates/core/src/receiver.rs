//! Uplink receiver chain: observation synthesis, analog projection,
//! effective channels and covariances, channel matched filter (CMF),
//! spatial zero forcing (SZF), and the output term decomposition.

use num_complex::Complex64;

use crate::channel::{ChannelCovariances, ChannelRealization};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_pd, CMatrix, HermitianMatrix};
use crate::scenario::ScenarioConfig;

/// Per-delay effective channel taps of one group, `D x K` where present.
pub type EffectiveTaps = Vec<Option<CMatrix>>;

/// Effective covariances `S^H R_l S` per group and MPC, the interference
/// plus noise covariances `S^H R_eta S` per group, and `S^H S`.
#[derive(Debug, Clone)]
pub struct EffectiveCovariances {
    /// `[group][mpc] = (delay, S^H R_l S)`.
    pub groups: Vec<Vec<(usize, HermitianMatrix)>>,
    pub eta: Vec<HermitianMatrix>,
    pub gram: HermitianMatrix,
    pub noise_power: f64,
}

impl EffectiveCovariances {
    pub fn dim(&self) -> usize {
        self.gram.dim()
    }

    /// `sum_l S^H R_l S` for `group`.
    pub fn group_sum(&self, group: usize) -> HermitianMatrix {
        let mut acc = HermitianMatrix::zeros(self.dim());
        for (_, r) in &self.groups[group] {
            // dimensions agree by construction
            let _ = acc.add_scaled(1.0, r);
        }
        acc
    }

    /// Effective covariance at `delay`, zero where the group has no MPC.
    pub fn tap(&self, group: usize, delay: usize) -> HermitianMatrix {
        self.groups[group]
            .iter()
            .find(|(l, _)| *l == delay)
            .map(|(_, r)| r.clone())
            .unwrap_or_else(|| HermitianMatrix::zeros(self.dim()))
    }
}

/// Effective channels of every group together with their statistics.
#[derive(Debug, Clone)]
pub struct EffectiveChannelSet {
    pub channels: Vec<EffectiveTaps>,
    pub covariances: EffectiveCovariances,
}

/// `y_n = sum_g sum_l H_l x_{n-l} + n_n` for `n` in `0..noise.ncols()`.
/// Column `preamble + t` of `symbols[g]` is the symbol at time `t`.
pub fn synthesize_observation(
    channels: &ChannelRealization,
    symbols: &[CMatrix],
    preamble: usize,
    noise: &CMatrix,
) -> Result<CMatrix> {
    let horizon = noise.ncols();
    let memory = channels.memory();
    if memory > preamble + 1 {
        return Err(Error::InvalidArgument(format!(
            "preamble {preamble} too short for channel memory {memory}"
        )));
    }
    if symbols.len() != channels.taps.len() {
        return Err(Error::Dimension {
            expected: channels.taps.len(),
            got: symbols.len(),
        });
    }
    let mut y = noise.clone();
    for (g, taps) in channels.taps.iter().enumerate() {
        let x = &symbols[g];
        if x.ncols() < preamble + horizon {
            return Err(Error::InvalidArgument(format!(
                "group {g} symbol stream shorter than preamble + horizon"
            )));
        }
        for (l, h) in taps.iter().enumerate() {
            let Some(h) = h else { continue };
            let contrib = h * x.columns(preamble - l, horizon);
            y += contrib;
        }
    }
    Ok(y)
}

/// `s_n = S^H y_n`.
pub fn project(y: &CMatrix, s: &CMatrix) -> Result<CMatrix> {
    if y.nrows() != s.nrows() {
        return Err(Error::Dimension {
            expected: s.nrows(),
            got: y.nrows(),
        });
    }
    Ok(s.adjoint() * y)
}

/// `S^H H_l` for every tap of every group.
pub fn effective_channels(s: &CMatrix, channels: &ChannelRealization) -> Vec<EffectiveTaps> {
    let sh = s.adjoint();
    channels
        .taps
        .iter()
        .map(|taps| taps.iter().map(|t| t.as_ref().map(|h| &sh * h)).collect())
        .collect()
}

/// Projects every CCM and forms the per-group interference covariances.
pub fn effective_covariances(
    s: &CMatrix,
    ccms: &ChannelCovariances,
    config: &ScenarioConfig,
) -> Result<EffectiveCovariances> {
    if s.nrows() != config.num_antennas {
        return Err(Error::Dimension {
            expected: config.num_antennas,
            got: s.nrows(),
        });
    }
    let sh = s.adjoint();
    let project = |r: &HermitianMatrix| HermitianMatrix::from_hermitian_part(&(&sh * (r.matrix() * s)));
    let gram = HermitianMatrix::from_hermitian_part(&(&sh * s));
    let groups: Vec<Vec<(usize, HermitianMatrix)>> = ccms
        .groups
        .iter()
        .map(|g| g.iter().map(|m| (m.delay, project(&m.ccm))).collect())
        .collect();
    let mut ry = gram.scale(config.noise_power);
    let weights: Vec<f64> = config
        .groups
        .iter()
        .map(|g| g.num_users as f64 * g.symbol_energy)
        .collect();
    for (g, mpcs) in groups.iter().enumerate() {
        for (_, r) in mpcs {
            ry.add_scaled(weights[g], r)?;
        }
    }
    let mut eta = Vec::with_capacity(groups.len());
    for (g, mpcs) in groups.iter().enumerate() {
        let mut e = ry.clone();
        for (_, r) in mpcs {
            e.add_scaled(-weights[g], r)?;
        }
        eta.push(e);
    }
    Ok(EffectiveCovariances {
        groups,
        eta,
        gram,
        noise_power: config.noise_power,
    })
}

pub fn effective_set(
    s: &CMatrix,
    channels: &ChannelRealization,
    ccms: &ChannelCovariances,
    config: &ScenarioConfig,
) -> Result<EffectiveChannelSet> {
    Ok(EffectiveChannelSet {
        channels: effective_channels(s, channels),
        covariances: effective_covariances(s, ccms, config)?,
    })
}

fn tap_shape(taps: &EffectiveTaps) -> Result<(usize, usize)> {
    taps.iter()
        .flatten()
        .next()
        .map(|h| (h.nrows(), h.ncols()))
        .ok_or_else(|| Error::InvalidArgument("no effective channel taps".into()))
}

/// CMF output and how many trailing samples could not be formed.
#[derive(Debug, Clone)]
pub struct CmfOutput {
    pub r: CMatrix,
    pub truncated: usize,
}

/// `r_n = sum_l H_l^H s_{n+l}` for every `n` with `n + L - 1` inside the
/// stream.
pub fn cmf(s_stream: &CMatrix, h_est: &EffectiveTaps) -> Result<CmfOutput> {
    let (d, k) = tap_shape(h_est)?;
    if s_stream.nrows() != d {
        return Err(Error::Dimension {
            expected: d,
            got: s_stream.nrows(),
        });
    }
    let memory = h_est.len();
    let t = s_stream.ncols();
    if t < memory {
        return Err(Error::InvalidArgument(format!(
            "stream of {t} samples shorter than channel memory {memory}"
        )));
    }
    let out_len = t + 1 - memory;
    let mut r = CMatrix::zeros(k, out_len);
    for (l, h) in h_est.iter().enumerate() {
        let Some(h) = h else { continue };
        r += h.adjoint() * s_stream.columns(l, out_len);
    }
    Ok(CmfOutput {
        r,
        truncated: memory - 1,
    })
}

/// `R_0 = sum_l H_l^H H_l`.
pub fn lag_zero_gram(h_est: &EffectiveTaps) -> Result<CMatrix> {
    let (_, k) = tap_shape(h_est)?;
    let mut r = CMatrix::zeros(k, k);
    for h in h_est.iter().flatten() {
        r += h.adjoint() * h;
    }
    Ok(r)
}

/// Spatial zero forcing `Y = R_0 (R_0^H R_0)^{-1}`, or `1` for one user.
pub fn szf(h_est: &EffectiveTaps) -> Result<CMatrix> {
    let r0 = lag_zero_gram(h_est)?;
    let k = r0.nrows();
    if k == 1 {
        return Ok(CMatrix::identity(1, 1));
    }
    // R_0 is square, so R_0 (R_0^H R_0)^{-1} = R_0^{-H}; solving with R_0
    // directly avoids squaring its condition number.
    let eye = CMatrix::identity(k, k);
    let lu = r0.adjoint().lu();
    if let Some(mut y) = lu.solve(&eye) {
        // one refinement step on the zero-forcing residual
        if let Some(dy) = lu.solve(&(&eye - r0.adjoint() * &y)) {
            y += dy;
        }
        if y.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Ok(y);
        }
    }
    let g = r0.adjoint() * &r0;
    let tr: f64 = g.diagonal().iter().map(|z| z.re).sum();
    log::warn!("rank-deficient SZF gram, adding ridge");
    let ridge = CMatrix::identity(k, k) * Complex64::new(1e-10 * tr.max(f64::MIN_POSITIVE), 0.0);
    let inv = cholesky_pd(&(g + ridge), "szf gram")?.inverse();
    Ok(r0 * inv)
}

/// Expected powers of the six output terms of one user.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TermPowers {
    pub signal: f64,
    pub sicee: f64,
    pub isi: f64,
    pub mui: f64,
    pub igi: f64,
    pub noise: f64,
}

impl TermPowers {
    pub fn interference_plus_noise(&self) -> f64 {
        self.sicee + self.isi + self.mui + self.igi + self.noise
    }

    pub fn total(&self) -> f64 {
        self.signal + self.interference_plus_noise()
    }

    fn add(&mut self, o: &TermPowers) {
        self.signal += o.signal;
        self.sicee += o.sicee;
        self.isi += o.isi;
        self.mui += o.mui;
        self.igi += o.igi;
        self.noise += o.noise;
    }

    fn scaled(&self, c: f64) -> TermPowers {
        TermPowers {
            signal: self.signal * c,
            sicee: self.sicee * c,
            isi: self.isi * c,
            mui: self.mui * c,
            igi: self.igi * c,
            noise: self.noise * c,
        }
    }
}

/// Per-user output decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDecomposition {
    pub users: Vec<TermPowers>,
}

impl OutputDecomposition {
    /// Entrywise mean of several decompositions with the same user count.
    pub fn mean(items: &[OutputDecomposition]) -> Result<OutputDecomposition> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("no decompositions to average".into()))?;
        let mut users = vec![TermPowers::default(); first.users.len()];
        for d in items {
            if d.users.len() != users.len() {
                return Err(Error::Dimension {
                    expected: users.len(),
                    got: d.users.len(),
                });
            }
            for (acc, u) in users.iter_mut().zip(&d.users) {
                acc.add(u);
            }
        }
        let c = 1.0 / items.len() as f64;
        Ok(OutputDecomposition {
            users: users.iter().map(|u| u.scaled(c)).collect(),
        })
    }
}

/// `10 log10(signal / rest)`, `+inf` when `rest` is zero.
pub fn sinr_db_from(signal: f64, rest: f64) -> f64 {
    if rest <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / rest).log10()
    }
}

/// Output SINR of every user in dB.
pub fn sinr(decomp: &OutputDecomposition) -> Vec<f64> {
    decomp
        .users
        .iter()
        .map(|u| sinr_db_from(u.signal, u.interference_plus_noise()))
        .collect()
}

/// `A_m = sum_l Hhat_l^H H_{l+m}` for `m` in `-(L-1)..=(L-1)`; entry `i`
/// of the result is lag `i - (L - 1)`. The symbol weighted by `A_m` in the
/// CMF output `r_n` is `x_{n-m}`.
pub fn lag_coefficients(h_est: &EffectiveTaps, h: &EffectiveTaps) -> Result<Vec<Option<CMatrix>>> {
    let memory = h_est.len().max(h.len());
    let mut out: Vec<Option<CMatrix>> = vec![None; 2 * memory - 1];
    for (l, he) in h_est.iter().enumerate() {
        let Some(he) = he else { continue };
        for (lp, ht) in h.iter().enumerate() {
            let Some(ht) = ht else { continue };
            if he.nrows() != ht.nrows() {
                return Err(Error::Dimension {
                    expected: he.nrows(),
                    got: ht.nrows(),
                });
            }
            let idx = lp + memory - 1 - l;
            let prod = he.adjoint() * ht;
            match &mut out[idx] {
                Some(acc) => *acc += prod,
                slot => *slot = Some(prod),
            }
        }
    }
    Ok(out)
}

/// Coefficients of the digital output `z = Y^H r` of the intended group.
struct OutputCoefficients {
    memory: usize,
    /// `[group][lag index]`, `K x K_g`.
    b: Vec<Vec<Option<CMatrix>>>,
    /// `(Y^H R_0^{hh})_{kk}`.
    signal: Vec<Complex64>,
    /// `Hhat_l y_k` per delay, per user.
    noise_filters: Vec<Vec<Option<nalgebra::DVector<Complex64>>>>,
}

fn output_coefficients(
    h_est: &EffectiveTaps,
    h_true: &[EffectiveTaps],
    y: &CMatrix,
    group: usize,
) -> Result<OutputCoefficients> {
    let r0 = lag_zero_gram(h_est)?;
    let k = r0.nrows();
    if y.nrows() != k || y.ncols() != k {
        return Err(Error::Dimension {
            expected: k,
            got: y.nrows(),
        });
    }
    let yh = y.adjoint();
    let sig = &yh * &r0;
    let memory = h_true
        .iter()
        .map(|t| t.len())
        .chain(std::iter::once(h_est.len()))
        .max()
        .unwrap_or(1);
    let mut b = Vec::with_capacity(h_true.len());
    for ht in h_true {
        let mut padded_est = h_est.clone();
        padded_est.resize(memory, None);
        let mut padded = ht.clone();
        padded.resize(memory, None);
        let a = lag_coefficients(&padded_est, &padded)?;
        b.push(a.into_iter().map(|m| m.map(|m| &yh * m)).collect());
    }
    let noise_filters = (0..k)
        .map(|u| {
            h_est
                .iter()
                .map(|h| h.as_ref().map(|h| h * y.column(u)))
                .collect()
        })
        .collect();
    let _ = group;
    Ok(OutputCoefficients {
        memory,
        b,
        signal: (0..k).map(|u| sig[(u, u)]).collect(),
        noise_filters,
    })
}

/// Expected term powers given the channels, averaging over symbols and
/// noise in closed form. `h_true` holds the effective channels of all
/// groups, `h_est` the intended group's estimate, `y` its SZF matrix and
/// `gram` is `S^H S`.
pub fn term_powers(
    h_est: &EffectiveTaps,
    h_true: &[EffectiveTaps],
    y: &CMatrix,
    gram: &CMatrix,
    config: &ScenarioConfig,
    group: usize,
) -> Result<OutputDecomposition> {
    let c = output_coefficients(h_est, h_true, y, group)?;
    let k = c.signal.len();
    let zero_lag = c.memory - 1;
    let mut users = Vec::with_capacity(k);
    for u in 0..k {
        let mut t = TermPowers::default();
        for (g, lags) in c.b.iter().enumerate() {
            let es = config.groups[g].symbol_energy;
            for (i, m) in lags.iter().enumerate() {
                let Some(m) = m else { continue };
                for j in 0..m.ncols() {
                    let v = m[(u, j)];
                    if g != group {
                        t.igi += es * v.norm_sqr();
                    } else if j != u {
                        t.mui += es * v.norm_sqr();
                    } else if i != zero_lag {
                        t.isi += es * v.norm_sqr();
                    } else {
                        t.signal += es * c.signal[u].norm_sqr();
                        t.sicee += es * (v - c.signal[u]).norm_sqr();
                    }
                }
            }
        }
        for f in c.noise_filters[u].iter().flatten() {
            t.noise += config.noise_power * f.dotc(&(gram * f)).re;
        }
        users.push(t);
    }
    Ok(OutputDecomposition { users })
}

/// Term-by-term realization of the digital output for given symbol and
/// projected noise streams.
#[derive(Debug, Clone)]
pub struct TermStreams {
    /// `[term][user]` sample streams in the order signal, SICEE, ISI, MUI,
    /// IGI, noise.
    pub terms: [CMatrix; 6],
}

impl TermStreams {
    /// Sum of all terms; equals the pipeline output.
    pub fn total(&self) -> CMatrix {
        let mut acc = self.terms[0].clone();
        for t in &self.terms[1..] {
            acc += t;
        }
        acc
    }

    /// Mean squared modulus of each term per user.
    pub fn decomposition(&self) -> OutputDecomposition {
        let k = self.terms[0].nrows();
        let n = self.terms[0].ncols().max(1) as f64;
        let p = |t: &CMatrix, u: usize| t.row(u).iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        OutputDecomposition {
            users: (0..k)
                .map(|u| TermPowers {
                    signal: p(&self.terms[0], u),
                    sicee: p(&self.terms[1], u),
                    isi: p(&self.terms[2], u),
                    mui: p(&self.terms[3], u),
                    igi: p(&self.terms[4], u),
                    noise: p(&self.terms[5], u),
                })
                .collect(),
        }
    }
}

/// Splits the output `z_n = Y^H r_n` into its six terms for output times
/// `0..count`. `symbols[g]` column `preamble + t` is time `t`;
/// `projected_noise` column `t` is `S^H n_t`.
#[allow(clippy::too_many_arguments)]
pub fn decompose_output(
    h_est: &EffectiveTaps,
    h_true: &[EffectiveTaps],
    y: &CMatrix,
    symbols: &[CMatrix],
    preamble: usize,
    projected_noise: &CMatrix,
    count: usize,
    group: usize,
) -> Result<TermStreams> {
    let c = output_coefficients(h_est, h_true, y, group)?;
    let k = c.signal.len();
    let memory = c.memory;
    if preamble + 1 < memory || projected_noise.ncols() + 1 < count + h_est.len() {
        return Err(Error::InvalidArgument("streams too short for decomposition".into()));
    }
    let mut terms: [CMatrix; 6] = std::array::from_fn(|_| CMatrix::zeros(k, count));
    for n in 0..count {
        for (g, lags) in c.b.iter().enumerate() {
            let x = &symbols[g];
            for (i, m) in lags.iter().enumerate() {
                let Some(m) = m else { continue };
                // lag value m_lag = i - (memory - 1); symbol time n - m_lag
                let col = (preamble + n + memory - 1) as isize - i as isize;
                if col < 0 || col as usize >= x.ncols() {
                    return Err(Error::InvalidArgument("symbol stream too short".into()));
                }
                let xs = x.column(col as usize);
                for u in 0..k {
                    for j in 0..m.ncols() {
                        let v = m[(u, j)] * xs[j];
                        if g != group {
                            terms[4][(u, n)] += v;
                        } else if j != u {
                            terms[3][(u, n)] += v;
                        } else if i != memory - 1 {
                            terms[2][(u, n)] += v;
                        } else {
                            let s = c.signal[u] * xs[j];
                            terms[0][(u, n)] += s;
                            terms[1][(u, n)] += v - s;
                        }
                    }
                }
            }
        }
        for u in 0..k {
            for (l, f) in c.noise_filters[u].iter().enumerate() {
                let Some(f) = f else { continue };
                terms[5][(u, n)] += f.dotc(&projected_noise.column(n + l));
            }
        }
    }
    Ok(TermStreams { terms })
}
