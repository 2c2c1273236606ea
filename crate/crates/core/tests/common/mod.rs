//! Invariant checks shared by the property suite and the acceptance runner.
#![allow(dead_code)]

use hybridbeam::analytics::cmf_powers_analytical;
use hybridbeam::beamformer::{geb, geb_beamformer, geb_pairs, geb_suboptimal, wiener_type, FilteredSteering};
use hybridbeam::channel::{
    assemble_ry, complex_normal_matrix, generate_symbols, hadamard_ccm, ChannelCovariances, ChannelSampler,
    MobilityModel, MpcState, ThetaSector,
};
use hybridbeam::estimation::{build_training, mmse_estimator, nmse_analytical, TrainingFamily};
use hybridbeam::linalg::{frobenius, spectral_norm};
use hybridbeam::patch::{
    assemble_py, expected_patch_level, patch_profile, patch_width, quantize_powers, reconstruct_ccm, DKernelBasis,
    PatchPowerProfile, QuantizedInverseState,
};
use hybridbeam::receiver::{
    cmf, effective_channels, effective_covariances, lag_zero_gram, project, synthesize_observation, szf, term_powers,
    EffectiveCovariances,
};
use hybridbeam::runner::{initial_beamformers, Method};
use hybridbeam::scenario::parse_scenario;
use hybridbeam::{CMatrix, HermitianMatrix, ScenarioConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Check = Result<(), String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Single group, single MPC configuration on `n` antennas.
pub fn single_mpc_config(n: usize, center_deg: f64, spread_deg: f64) -> ScenarioConfig {
    let mut cfg = hybridbeam::small_preset();
    cfg.num_antennas = n;
    cfg.groups.truncate(1);
    cfg.num_groups = 1;
    cfg.groups[0].mpcs.truncate(1);
    cfg.groups[0].rf_chains_per_mpc = vec![1];
    cfg.groups[0].mpcs[0].center_angle_deg = center_deg;
    cfg.groups[0].mpcs[0].angular_spread_deg = spread_deg;
    cfg.groups[0].mpcs[0].delay = 0;
    cfg.channel_memory = None;
    cfg.intended_group = 1;
    cfg
}

// ---- scenario

pub fn scenario_roundtrip(cfg: &ScenarioConfig) -> Check {
    let text = cfg.to_toml_string();
    let back = parse_scenario(&text).map_err(|e| format!("reparse failed: {e}"))?;
    ensure(&back == cfg, || "round trip changed the config".into())
}

// ---- channel model

pub fn ccm_is_valid(mu_theta: f64, sigma_theta: f64, n: usize) -> Check {
    let r = hadamard_ccm(mu_theta, sigma_theta, n);
    HermitianMatrix::new(r.matrix().clone()).map_err(|e| e.to_string())?;
    let lo = r.min_eigenvalue();
    ensure(lo >= -1e-10, || format!("min eigenvalue {lo}"))?;
    let tr = r.trace();
    ensure((tr - 1.0).abs() <= 1e-12 * n as f64, || format!("trace {tr}"))
}

/// Pools `chains` AR(1) chains started in the stationary law and stepped
/// `steps` times; the std of the visited offsets must be within `tol` of
/// `sigma_v`.
pub fn mobility_stationary_std(alpha: f64, chains: usize, steps: usize, seed: u64, tol: f64) -> Check {
    let sigma_v = 3f64.to_radians();
    let model = MobilityModel {
        alpha,
        sigma_v,
        sigma_est: 0.0,
    };
    let mut r = rng(seed);
    let spec = hybridbeam::small_preset().groups[0].mpcs[0].clone();
    let (mut s1, mut s2, mut count) = (0.0, 0.0, 0usize);
    for _ in 0..chains {
        let mut st = MpcState::new(&spec);
        st.delta_mu = sigma_v * r.sample::<f64, _>(StandardNormal);
        for _ in 0..steps {
            st = model.step(&st, &mut r);
            s1 += st.delta_mu;
            s2 += st.delta_mu * st.delta_mu;
            count += 1;
        }
    }
    let mean = s1 / count as f64;
    let std = (s2 / count as f64 - mean * mean).sqrt();
    let rel = (std / sigma_v - 1.0).abs();
    ensure(rel <= tol, || format!("alpha {alpha}: stationary std off by {:.2}%", 100.0 * rel))
}

pub fn sampling_second_moment(n: usize, samples: usize, seed: u64, tol: f64) -> Check {
    let cfg = single_mpc_config(n, 10.0, 3.0);
    let ccms = ChannelCovariances::nominal(&cfg).map_err(|e| e.to_string())?;
    let sampler = ChannelSampler::new(&ccms, &cfg).map_err(|e| e.to_string())?;
    let mut r = rng(seed);
    let mut acc = CMatrix::zeros(n, n);
    for _ in 0..samples {
        let ch = sampler.sample(&mut r);
        let h = ch.tap(0, 0).ok_or("missing tap")?;
        acc += h * h.adjoint();
    }
    acc /= c((samples * cfg.groups[0].num_users) as f64);
    let truth = ccms.groups[0][0].ccm.matrix();
    let rel = frobenius(&(&acc - truth)) / frobenius(truth);
    ensure(rel <= tol, || format!("sample covariance off by {:.3}%", 100.0 * rel))
}

// ---- patch engine

pub fn quantizer_idempotent(levels: &[f64], h: f64, nq: usize) -> Check {
    let p = PatchPowerProfile::new(levels.to_vec()).map_err(|e| e.to_string())?;
    let q = quantize_powers(&p, h, nq).map_err(|e| e.to_string())?;
    let qq = quantize_powers(&q, h, nq).map_err(|e| e.to_string())?;
    ensure(q == qq, || "quantizer is not idempotent".into())
}

pub fn patch_mass(mu: f64, sigma: f64, mass: f64, n: usize, nq: usize) -> Check {
    let p = patch_profile(mu, sigma, mass, n);
    let total = p.total();
    ensure((total - mass).abs() <= 1e-12 * mass.max(1.0), || format!("mass {total} vs {mass}"))?;
    let h = expected_patch_level(mass, sigma, n);
    let q = quantize_powers(&p, h, nq).map_err(|e| e.to_string())?;
    let bound = p.nonzero_count() as f64 * h / (2.0 * nq as f64) * (1.0 + 1e-12);
    let dev = (q.total() - mass).abs();
    ensure(dev <= bound, || format!("quantized mass deviates {dev} > {bound}"))
}

/// Random quantized observation profiles for an `n`-antenna version of the
/// evaluation scenario with every MPC jittered by up to `jitter_deg`.
pub struct PyWalk {
    cfg: ScenarioConfig,
    centers: Vec<Vec<f64>>,
    jitter: f64,
    nq: usize,
}

impl PyWalk {
    pub fn new(n: usize, nq: usize, jitter_deg: f64) -> Self {
        let mut cfg = hybridbeam::default_table1_scenario();
        cfg.num_antennas = n;
        let centers = cfg
            .groups
            .iter()
            .map(|g| g.mpcs.iter().map(|m| m.center_angle_deg).collect())
            .collect();
        Self {
            cfg,
            centers,
            jitter: jitter_deg,
            nq,
        }
    }

    pub fn next<R: Rng>(&mut self, r: &mut R) -> PatchPowerProfile {
        let n = self.cfg.num_antennas;
        let mut per = Vec::new();
        for (g, spec) in self.cfg.groups.iter().enumerate() {
            let masses = spec.mpc_masses();
            let mut v = Vec::new();
            for (m, mpc) in spec.mpcs.iter().enumerate() {
                let step: f64 = r.random_range(-self.jitter..=self.jitter);
                self.centers[g][m] = (self.centers[g][m] + step).clamp(-60.0, 60.0);
                let sec = ThetaSector::from_azimuth(
                    self.centers[g][m].to_radians(),
                    mpc.angular_spread_deg.to_radians(),
                )
                .expect("sector inside the visible region");
                let nominal = ThetaSector::from_azimuth(
                    mpc.center_angle_deg.to_radians(),
                    mpc.angular_spread_deg.to_radians(),
                )
                .expect("nominal sector");
                let h = masses[m] / (nominal.sigma / patch_width(n)).ceil().max(1.0);
                let p = patch_profile(sec.mu, sec.sigma, masses[m], n);
                v.push(quantize_powers(&p, h, self.nq).expect("valid quantizer"));
            }
            per.push(v);
        }
        assemble_py(&per, &self.cfg).expect("consistent layout")
    }
}

/// Incrementally maintained inverse against dense inversion along one
/// random update sequence. Returns the worst relative spectral error and
/// the worst `||R A - I||_2`.
pub fn woodbury_sequence(n: usize, r: usize, nq: usize, steps: usize, seed: u64) -> Result<(f64, f64), String> {
    let basis = DKernelBasis::for_width(patch_width(n), n, r).map_err(|e| e.to_string())?;
    let mut rg = rng(seed);
    let mut walk = PyWalk::new(n, nq, 1.5);
    let mut state = QuantizedInverseState::new(walk.next(&mut rg), &basis).map_err(|e| e.to_string())?;
    let (mut worst_rel, mut worst_id) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        let p = walk.next(&mut rg);
        state = state.advance(&p, &basis).map_err(|e| e.to_string())?;
        let ry = reconstruct_ccm(&p, &basis).map_err(|e| e.to_string())?;
        let dense = ry.inverse_pd().map_err(|e| e.to_string())?;
        let rel = spectral_norm(&(state.inverse() - &dense)) / spectral_norm(&dense);
        let id = spectral_norm(&(ry.matrix() * state.inverse() - CMatrix::identity(n, n)));
        worst_rel = worst_rel.max(rel);
        worst_id = worst_id.max(id);
    }
    Ok((worst_rel, worst_id))
}

// ---- beamformers

fn pencil(n: usize, mu1: f64, s1: f64, mu2: f64, s2: f64, inr: f64) -> (HermitianMatrix, HermitianMatrix) {
    let r = hadamard_ccm(mu1, s1, n);
    let mut ry = hadamard_ccm(mu2, s2, n).scale(inr);
    ry.add_scaled(1.0, &r).unwrap();
    ry.add_scaled(1e-2, &HermitianMatrix::scaled_identity(n, 1.0)).unwrap();
    (r, ry)
}

pub fn geb_residual(n: usize, mu1: f64, s1: f64, mu2: f64, s2: f64, inr: f64) -> Check {
    let (r, ry) = pencil(n, mu1, s1, mu2, s2, inr);
    let (vals, v) = geb_pairs(&r, &ry).map_err(|e| e.to_string())?;
    let scale = frobenius(r.matrix());
    for (i, lam) in vals.iter().enumerate() {
        let vi = v.column(i).clone_owned();
        let res = (r.matrix() * &vi - ry.matrix() * &vi * c(*lam)).norm();
        ensure(res <= 1e-8 * scale, || format!("pair {i}: residual {res:e}"))?;
    }
    let fast = geb(&r, &ry, 2).map_err(|e| e.to_string())?;
    for i in 0..2 {
        let vi = fast.column(i).clone_owned();
        let lam = vals[i];
        let res = (r.matrix() * &vi - ry.matrix() * &vi * c(lam)).norm();
        ensure(res <= 1e-8 * scale, || format!("dominant {i}: residual {res:e}"))?;
    }
    Ok(())
}

/// `sin` of the largest principal angle between two column spans.
pub fn subspace_gap(a: &CMatrix, b: &CMatrix) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let pa = &qa * qa.adjoint();
    let pb = &qb * qb.adjoint();
    spectral_norm(&(pa - pb))
}

pub fn geb_scale_invariance(n: usize, mu1: f64, s1: f64, mu2: f64, s2: f64, scale: f64) -> Check {
    let (r, ry) = pencil(n, mu1, s1, mu2, s2, 10.0);
    let a = geb(&r, &ry, 2).map_err(|e| e.to_string())?;
    let b = geb(&r.scale(scale), &ry, 2).map_err(|e| e.to_string())?;
    let gap = subspace_gap(&a, &b);
    ensure(gap <= 1e-10, || format!("subspace angle {gap:e} after scaling by {scale}"))
}

/// Wiener-type output from an exact full-rank patch model against the
/// rank-one shortcut on the same matrix.
pub fn wiener_matches_suboptimal(n: usize, mu: f64, seed: u64) -> Check {
    let mut r = rng(seed);
    let levels: Vec<f64> = (0..n).map(|_| 0.01 + r.random::<f64>()).collect();
    let p = PatchPowerProfile::new(levels).map_err(|e| e.to_string())?;
    let basis = DKernelBasis::for_width(patch_width(n), n, n).map_err(|e| e.to_string())?;
    let state = QuantizedInverseState::new(p.clone(), &basis).map_err(|e| e.to_string())?;
    let w = hybridbeam::channel::steering_vector(mu, n);
    let steer = FilteredSteering::new(vec![vec![w.clone()]]);
    let out = wiener_type(&state, &steer, 0, state.step()).map_err(|e| e.to_string())?;
    let dense = reconstruct_ccm(&p, &basis).map_err(|e| e.to_string())?.matrix().clone();
    let inv = dense.try_inverse().ok_or("singular")?;
    let reference = geb_suboptimal(&inv, &w).map_err(|e| e.to_string())?;
    let cos = hybridbeam::linalg::cosine_similarity(&out[0], &reference);
    ensure(cos >= 1.0 - 1e-10, || format!("cosine {cos}"))
}

/// Every method's column for intended MPC `m` has more gain at that MPC's
/// center than at any center of another group.
pub fn beam_pattern_sanity(cfg: &ScenarioConfig) -> Check {
    let mut cfg = cfg.clone();
    cfg.aoa_error_std_deg = 0.0;
    let g0 = cfg.intended();
    for (method, s) in initial_beamformers(&cfg, &Method::ALL).map_err(|e| e.to_string())? {
        let mut col = 0;
        for (m, mpc) in cfg.groups[g0].mpcs.iter().enumerate() {
            for _ in 0..cfg.groups[g0].rf_chains_per_mpc[m] {
                let sc = s.column(col).clone_owned();
                let gain = |deg: f64| {
                    let u = hybridbeam::channel::array_response(deg.to_radians(), cfg.num_antennas);
                    sc.dotc(&u).norm_sqr()
                };
                let own = gain(mpc.center_angle_deg);
                for (g, spec) in cfg.groups.iter().enumerate() {
                    if g == g0 {
                        continue;
                    }
                    for other in &spec.mpcs {
                        let o = gain(other.center_angle_deg);
                        ensure(own > o, || {
                            format!(
                                "{method}: MPC {m} gain {own:e} not above group {} center {} ({o:e})",
                                g + 1,
                                other.center_angle_deg
                            )
                        })?;
                    }
                }
                col += 1;
            }
        }
    }
    Ok(())
}

// ---- receiver

/// The six expected term powers, plus the S/SICEE cross term, add up to the
/// empirical `E|z|^2` of the full pipeline within three standard errors
/// (batch means).
pub fn power_bookkeeping(cfg: &ScenarioConfig, group: usize, batches: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let ccms = ChannelCovariances::nominal(cfg).map_err(|e| e.to_string())?;
    let ry = assemble_ry(&ccms, cfg).map_err(|e| e.to_string())?;
    let s = geb_beamformer(&ccms, &ry, group, cfg).map_err(|e| e.to_string())?.into_weights();
    let sampler = ChannelSampler::new(&ccms, cfg).map_err(|e| e.to_string())?;
    let ch = sampler.sample(&mut r);
    let heff = effective_channels(&s, &ch);
    // imperfect estimate so every term is exercised
    let h_est: Vec<Option<CMatrix>> = heff[group]
        .iter()
        .map(|t| t.as_ref().map(|h| h + complex_normal_matrix(h.nrows(), h.ncols(), &mut r) * c(0.05 * h.norm())))
        .collect();
    let y = szf(&h_est).map_err(|e| e.to_string())?;
    let gram = s.adjoint() * &s;
    let expected = term_powers(&h_est, &heff, &y, &gram, cfg, group).map_err(|e| e.to_string())?;
    let mem = cfg.channel_memory();
    let pre = mem - 1;
    let out_len = 64;
    let horizon = out_len + h_est.len() - 1;
    let k = cfg.groups[group].num_users;
    let mut batch_means = vec![Vec::with_capacity(batches); k];
    for _ in 0..batches {
        let symbols: Vec<CMatrix> = (0..cfg.groups.len())
            .map(|g| generate_symbols(cfg, g, pre + horizon + mem, &mut r))
            .collect();
        let noise = complex_normal_matrix(cfg.num_antennas, horizon, &mut r) * c(cfg.noise_power.sqrt());
        let obs = synthesize_observation(&ch, &symbols, pre, &noise).map_err(|e| e.to_string())?;
        let stream = project(&obs, &s).map_err(|e| e.to_string())?;
        let z = y.adjoint() * cmf(&stream, &h_est).map_err(|e| e.to_string())?.r;
        for u in 0..k {
            let m = z.row(u).iter().map(|v| v.norm_sqr()).sum::<f64>() / z.ncols() as f64;
            batch_means[u].push(m);
        }
    }
    // S and SICEE carry the same symbol, so E|z|^2 also holds their cross
    // term 2 E_s Re(conj(a) b) with a = [Y^H R0_hh]_uu, b = [Y^H (R0_hh' - R0_hh)]_uu
    let r0_est = lag_zero_gram(&h_est).map_err(|e| e.to_string())?;
    let mut r0_cross = CMatrix::zeros(k, k);
    for (he, ht) in h_est.iter().zip(&heff[group]) {
        if let (Some(he), Some(ht)) = (he, ht) {
            r0_cross += he.adjoint() * ht;
        }
    }
    let a = y.adjoint() * &r0_est;
    let b = y.adjoint() * (&r0_cross - &r0_est);
    let es = cfg.groups[group].symbol_energy;
    for u in 0..k {
        let cross = 2.0 * es * (a[(u, u)].conj() * b[(u, u)]).re;
        let b = &batch_means[u];
        let mean = b.iter().sum::<f64>() / b.len() as f64;
        let var = b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b.len() - 1) as f64;
        let se = (var / b.len() as f64).sqrt();
        let want = expected.users[u].total() + cross;
        ensure((mean - want).abs() <= 3.0 * se + 1e-12 * want, || {
            format!("user {u}: empirical {mean:e} vs expected {want:e} (se {se:e})")
        })?;
    }
    Ok(())
}

pub fn szf_zero_forcing(cfg: &ScenarioConfig, group: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let ccms = ChannelCovariances::nominal(cfg).map_err(|e| e.to_string())?;
    let ry = assemble_ry(&ccms, cfg).map_err(|e| e.to_string())?;
    let s = geb_beamformer(&ccms, &ry, group, cfg).map_err(|e| e.to_string())?.into_weights();
    let ch = ChannelSampler::new(&ccms, cfg).map_err(|e| e.to_string())?.sample(&mut r);
    let heff = effective_channels(&s, &ch);
    let y = szf(&heff[group]).map_err(|e| e.to_string())?;
    let r0 = lag_zero_gram(&heff[group]).map_err(|e| e.to_string())?;
    // the residual of any backward-stable solve is about eps cond(R0)
    let sv = r0.singular_values();
    let cond = sv.max() / sv.min();
    let tol = 1e-10f64.max(64.0 * f64::EPSILON * cond);
    let m = y.adjoint() * r0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                ensure(m[(i, j)].norm() <= tol, || {
                    format!("Y^H R0 off-diagonal {:e} (cond {cond:.2e})", m[(i, j)].norm())
                })?;
            }
        }
    }
    Ok(())
}

// ---- estimation

/// Estimation setup: ideal GEB combiner for `group` and perfect effective
/// covariances.
pub fn estimation_setup(cfg: &ScenarioConfig, group: usize) -> Result<(CMatrix, EffectiveCovariances), String> {
    let ccms = ChannelCovariances::nominal(cfg).map_err(|e| e.to_string())?;
    let ry = assemble_ry(&ccms, cfg).map_err(|e| e.to_string())?;
    let s = geb_beamformer(&ccms, &ry, group, cfg).map_err(|e| e.to_string())?.into_weights();
    let eff = effective_covariances(&s, &ccms, cfg).map_err(|e| e.to_string())?;
    Ok((s, eff))
}

pub fn mmse_is_optimal(cfg: &ScenarioConfig, t_len: usize, seed: u64, perturbations: usize) -> Check {
    let g = cfg.intended();
    let mut r = rng(seed);
    let (_, eff) = estimation_setup(cfg, g)?;
    let tb = build_training(cfg, g, t_len, TrainingFamily::RandomQpsk, &mut r).map_err(|e| e.to_string())?;
    let z = mmse_estimator(&tb, &eff, g).map_err(|e| e.to_string())?;
    let base = nmse_analytical(&z, &tb, &eff, g).map_err(|e| e.to_string())?;
    for i in 0..perturbations {
        let scale = 10f64.powi(-(i as i32 % 6)) * frobenius(&z) / (z.len() as f64).sqrt();
        let dz = complex_normal_matrix(z.nrows(), z.ncols(), &mut r) * c(scale);
        let other = nmse_analytical(&(&z + dz), &tb, &eff, g).map_err(|e| e.to_string())?;
        ensure(other >= base - 1e-9, || format!("perturbation lowered nMSE {base} -> {other}"))?;
    }
    Ok(())
}

/// Random `d x d` unitary from the QR of a Gaussian matrix.
pub fn random_unitary<R: Rng>(d: usize, r: &mut R) -> CMatrix {
    complex_normal_matrix(d, d, r).qr().q()
}

pub fn nmse_rotation_invariant(cfg: &ScenarioConfig, t_len: usize, seed: u64) -> Check {
    let g = cfg.intended();
    let mut r = rng(seed);
    let (s, _) = estimation_setup(cfg, g)?;
    let ccms = ChannelCovariances::nominal(cfg).map_err(|e| e.to_string())?;
    let tb = build_training(cfg, g, t_len, TrainingFamily::RandomQpsk, &mut r).map_err(|e| e.to_string())?;
    let u = random_unitary(s.ncols(), &mut r);
    let mut values = Vec::new();
    for sm in [s.clone(), &s * u] {
        let eff = effective_covariances(&sm, &ccms, cfg).map_err(|e| e.to_string())?;
        let z = mmse_estimator(&tb, &eff, g).map_err(|e| e.to_string())?;
        values.push(nmse_analytical(&z, &tb, &eff, g).map_err(|e| e.to_string())?);
    }
    ensure((values[0] - values[1]).abs() <= 1e-9 * values[0].abs().max(1e-12), || {
        format!("nMSE {} vs {} after rotation", values[0], values[1])
    })
}

/// Analytical nMSE at each SNR with the combiner rebuilt for that noise
/// floor.
pub fn nmse_vs_snr(cfg: &ScenarioConfig, t_len: usize, snrs: &[f64], seed: u64) -> Result<Vec<f64>, String> {
    let g = cfg.intended();
    let mut out = Vec::new();
    for &snr in snrs {
        let mut c2 = cfg.clone();
        c2.set_snr_db(snr);
        let mut r = rng(seed);
        let (_, eff) = estimation_setup(&c2, g)?;
        let tb = build_training(&c2, g, t_len, TrainingFamily::RandomQpsk, &mut r).map_err(|e| e.to_string())?;
        let z = mmse_estimator(&tb, &eff, g).map_err(|e| e.to_string())?;
        out.push(nmse_analytical(&z, &tb, &eff, g).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

pub fn non_increasing(v: &[f64], slack: f64) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + slack)
}

// ---- analytics

pub fn cmf_power_bookkeeping(cfg: &ScenarioConfig, group: usize) -> Check {
    let ccms = ChannelCovariances::nominal(cfg).map_err(|e| e.to_string())?;
    let ry = assemble_ry(&ccms, cfg).map_err(|e| e.to_string())?;
    let s = geb_beamformer(&ccms, &ry, group, cfg).map_err(|e| e.to_string())?.into_weights();
    let eff = effective_covariances(&s, &ccms, cfg).map_err(|e| e.to_string())?;
    let p = cmf_powers_analytical(&eff, cfg, group).map_err(|e| e.to_string())?;
    ensure(p.signal >= 0.0 && p.interference_noise >= 0.0, || format!("negative power {p:?}"))?;
    let rsum = eff.group_sum(group);
    let noise = cfg.noise_power * hybridbeam::linalg::trace_of_product(rsum.matrix(), eff.gram.matrix()).re;
    ensure(p.interference_noise >= noise - p.signal, || {
        format!("P_IN {} below N0 tr(R G) - P_S = {}", p.interference_noise, noise - p.signal)
    })
}
