//! Analog beamformer constructions: generalized eigen-beamformer (GEB) and
//! its rank-one shortcut, recursively filtered CCMs and steering vectors,
//! the Wiener-type and whitening-type patch-domain beamformers, and the DFT
//! baseline.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::ops::Range;

use num_complex::Complex64;

use crate::channel::{array_response, assemble_ry, steering_vector, ChannelCovariances, ThetaSector};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_pd, fix_phase, hermitian_part, CMatrix, CVector, HermitianMatrix};
use crate::patch::{
    patch_width, reconstruct_ccm, v_columns, woodbury_apply, DKernelBasis, KernelCache, PatchPowerProfile,
    QuantizedInverseState,
};
use crate::scenario::ScenarioConfig;

/// Per-group analog combiner `S = [S_1 ... S_M]` with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerMatrix {
    weights: CMatrix,
    block_map: BTreeMap<usize, Range<usize>>,
}

impl BeamformerMatrix {
    pub fn weights(&self) -> &CMatrix {
        &self.weights
    }

    pub fn into_weights(self) -> CMatrix {
        self.weights
    }

    /// Column range belonging to MPC `m`.
    pub fn block(&self, m: usize) -> Option<Range<usize>> {
        self.block_map.get(&m).cloned()
    }

    pub fn block_map(&self) -> &BTreeMap<usize, Range<usize>> {
        &self.block_map
    }

    pub fn num_antennas(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_columns(&self) -> usize {
        self.weights.ncols()
    }
}

/// Concatenates per-MPC column blocks in MPC order and normalizes columns.
pub fn assemble(blocks: Vec<(usize, CMatrix)>) -> Result<BeamformerMatrix> {
    let mut sorted: BTreeMap<usize, CMatrix> = BTreeMap::new();
    let mut n = None;
    for (m, b) in blocks {
        if *n.get_or_insert(b.nrows()) != b.nrows() {
            return Err(Error::Dimension {
                expected: n.unwrap_or(0),
                got: b.nrows(),
            });
        }
        if sorted.insert(m, b).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate MPC index {m}")));
        }
    }
    let n = n.ok_or_else(|| Error::InvalidArgument("no beamformer blocks".into()))?;
    let total: usize = sorted.values().map(|b| b.ncols()).sum();
    let mut weights = CMatrix::zeros(n, total);
    let mut block_map = BTreeMap::new();
    let mut at = 0;
    for (m, b) in sorted {
        for c in 0..b.ncols() {
            let col = b.column(c);
            let norm = col.norm();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "degenerate beamformer column for MPC {m}"
                )));
            }
            weights.set_column(at + c, &(col / Complex64::new(norm, 0.0)));
        }
        block_map.insert(m, at..at + b.ncols());
        at += b.ncols();
    }
    Ok(BeamformerMatrix { weights, block_map })
}

/// Whitening of the pencil `(., ry)` through the Cholesky factor of `ry`,
/// reusable across several CCMs.
#[derive(Debug, Clone)]
pub struct GebSolver {
    l: CMatrix,
}

impl GebSolver {
    pub fn new(ry: &HermitianMatrix) -> Result<Self> {
        Ok(Self {
            l: cholesky_pd(ry.matrix(), "observation covariance")?.l(),
        })
    }

    /// Generalized eigenpairs of `(ccm, ry)`, descending. Eigenvectors are
    /// `ry`-orthonormal with their largest entry real positive.
    pub fn pairs(&self, ccm: &HermitianMatrix) -> Result<(Vec<f64>, CMatrix)> {
        let l = &self.l;
        if ccm.dim() != l.nrows() {
            return Err(Error::Dimension {
                expected: l.nrows(),
                got: ccm.dim(),
            });
        }
        let left = l
            .solve_lower_triangular(ccm.matrix())
            .ok_or(Error::Singular("cholesky factor"))?;
        let white = l
            .solve_lower_triangular(&left.adjoint())
            .ok_or(Error::Singular("cholesky factor"))?;
        let (vals, u) = crate::linalg::hermitian_eig_desc(&hermitian_part(&white));
        let mut v = l
            .adjoint()
            .solve_upper_triangular(&u)
            .ok_or(Error::Singular("cholesky factor"))?;
        for mut c in v.column_iter_mut() {
            let mut col = c.clone_owned();
            fix_phase(&mut col);
            c.copy_from(&col);
        }
        Ok((vals, v))
    }

    /// The `d` most dominant generalized eigenvectors, normalized as in
    /// [`GebSolver::pairs`]. Uses Lanczos on the whitened pencil and falls
    /// back to the dense decomposition when it does not converge.
    pub fn dominant(&self, ccm: &HermitianMatrix, d: usize) -> Result<CMatrix> {
        let n = self.l.nrows();
        if d < 1 || d > n {
            return Err(Error::InvalidArgument(format!("d = {d} out of range")));
        }
        if ccm.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: ccm.dim(),
            });
        }
        if let Some(v) = self.lanczos(ccm, d) {
            return Ok(v);
        }
        log::debug!("lanczos did not converge, using dense generalized eigensolver");
        let (_, v) = self.pairs(ccm)?;
        Ok(v.columns(0, d).clone_owned())
    }

    fn whitened_apply(&self, ccm: &HermitianMatrix, x: &CVector) -> Option<CVector> {
        let y = self.l.ad_solve_lower_triangular(x)?;
        self.l.solve_lower_triangular(&(ccm.matrix() * y))
    }

    fn lanczos(&self, ccm: &HermitianMatrix, d: usize) -> Option<CMatrix> {
        const TOL: f64 = 1e-12;
        let n = self.l.nrows();
        let seed = CVector::from_fn(n, |i, _| Complex64::new(1.0 + i as f64 / n as f64, 0.5 - (i % 7) as f64 / 7.0));
        let mut v = self.whitened_apply(ccm, &seed)?;
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        v.unscale_mut(norm);
        let mut basis: Vec<CVector> = vec![v];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        loop {
            let k = basis.len();
            let mut w = self.whitened_apply(ccm, &basis[k - 1])?;
            alpha.push(basis[k - 1].dotc(&w).re);
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dotc(&w);
                    w.axpy(-c, b, Complex64::new(1.0, 0.0));
                }
            }
            let b_next = w.norm();
            let mut t = nalgebra::DMatrix::<f64>::zeros(k, k);
            for i in 0..k {
                t[(i, i)] = alpha[i];
                if i + 1 < k {
                    t[(i, i + 1)] = beta[i];
                    t[(i + 1, i)] = beta[i];
                }
            }
            let eig = nalgebra::SymmetricEigen::new(t);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let top = eig.eigenvalues[order[0]].abs();
            let exhausted = b_next <= 1e-14 * top.max(f64::MIN_POSITIVE) || k == n;
            let converged = k >= d
                && order
                    .iter()
                    .take(d)
                    .all(|&i| b_next * eig.eigenvectors[(k - 1, i)].abs() <= TOL * top);
            if converged || exhausted {
                if k < d {
                    return None;
                }
                let mut out = CMatrix::zeros(n, d);
                for (c, &i) in order.iter().take(d).enumerate() {
                    let mut x = CVector::zeros(n);
                    for (j, b) in basis.iter().enumerate() {
                        x.axpy(Complex64::new(eig.eigenvectors[(j, i)], 0.0), b, Complex64::new(1.0, 0.0));
                    }
                    let mut g = self.l.ad_solve_lower_triangular(&x)?;
                    fix_phase(&mut g);
                    out.set_column(c, &g);
                }
                return Some(out);
            }
            beta.push(b_next);
            basis.push(w.unscale(b_next));
        }
    }
}

/// Generalized eigenpairs of `(ccm, ry)`, descending.
pub fn geb_pairs(ccm: &HermitianMatrix, ry: &HermitianMatrix) -> Result<(Vec<f64>, CMatrix)> {
    if ccm.dim() != ry.dim() {
        return Err(Error::Dimension {
            expected: ry.dim(),
            got: ccm.dim(),
        });
    }
    GebSolver::new(ry)?.pairs(ccm)
}

/// The `d` most dominant generalized eigenvectors of `(ccm, ry)`.
pub fn geb(ccm: &HermitianMatrix, ry: &HermitianMatrix, d: usize) -> Result<CMatrix> {
    if ccm.dim() != ry.dim() {
        return Err(Error::Dimension {
            expected: ry.dim(),
            got: ccm.dim(),
        });
    }
    GebSolver::new(ry)?.dominant(ccm, d)
}

/// Rank-one shortcut `R_y^{-1} w_1`.
pub fn geb_suboptimal(ry_inv: &CMatrix, w1: &CVector) -> Result<CVector> {
    if ry_inv.ncols() != w1.len() {
        return Err(Error::Dimension {
            expected: ry_inv.ncols(),
            got: w1.len(),
        });
    }
    Ok(ry_inv * w1)
}

/// GEB combiner for `group`, `d_m` columns per MPC as configured.
pub fn geb_beamformer(
    ccms: &ChannelCovariances,
    ry: &HermitianMatrix,
    group: usize,
    config: &ScenarioConfig,
) -> Result<BeamformerMatrix> {
    let chains = &config.groups[group].rf_chains_per_mpc;
    let solver = GebSolver::new(ry)?;
    let mut blocks = Vec::with_capacity(chains.len());
    for (m, mpc) in ccms.groups[group].iter().enumerate() {
        blocks.push((m, solver.dominant(&mpc.ccm, chains[m])?));
    }
    assemble(blocks)
}

/// Recursively filtered per-MPC CCMs and the observation covariance rebuilt
/// from them.
#[derive(Debug, Clone)]
pub struct FilteredCcmState {
    ccms: ChannelCovariances,
    ry: HermitianMatrix,
}

impl FilteredCcmState {
    /// Starts the recursion at the first estimate.
    pub fn new(initial: ChannelCovariances, config: &ScenarioConfig) -> Result<Self> {
        let ry = assemble_ry(&initial, config)?;
        Ok(Self { ccms: initial, ry })
    }

    pub fn ccms(&self) -> &ChannelCovariances {
        &self.ccms
    }

    pub fn ry(&self) -> &HermitianMatrix {
        &self.ry
    }
}

/// `R^f[n] = beta R^f[n-1] + (1 - beta) R[n]` per MPC, then `R_y^f` from the
/// filtered CCMs.
pub fn filter_ccms(
    state: &FilteredCcmState,
    new_ccms: &ChannelCovariances,
    beta: f64,
    config: &ScenarioConfig,
) -> Result<FilteredCcmState> {
    check_beta(beta)?;
    if new_ccms.groups.len() != state.ccms.groups.len() {
        return Err(Error::Dimension {
            expected: state.ccms.groups.len(),
            got: new_ccms.groups.len(),
        });
    }
    let mut out = state.ccms.clone();
    for (g, mpcs) in out.groups.iter_mut().enumerate() {
        if mpcs.len() != new_ccms.groups[g].len() {
            return Err(Error::Dimension {
                expected: mpcs.len(),
                got: new_ccms.groups[g].len(),
            });
        }
        for (m, mpc) in mpcs.iter_mut().enumerate() {
            let mut f = mpc.ccm.scale(beta);
            f.add_scaled(1.0 - beta, &new_ccms.groups[g][m].ccm)?;
            mpc.ccm = f;
        }
    }
    FilteredCcmState::new(out, config)
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1)")))
    }
}

/// Filtered steering vectors `w_{n,m}`, indexed `[mpc][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSteering {
    vectors: Vec<Vec<CVector>>,
}

impl FilteredSteering {
    pub fn new(vectors: Vec<Vec<CVector>>) -> Self {
        Self { vectors }
    }

    pub fn mpc(&self, m: usize) -> &[CVector] {
        &self.vectors[m]
    }

    pub fn num_mpcs(&self) -> usize {
        self.vectors.len()
    }
}

/// Unfiltered `q(mu) .* d_i(sigma)`, `i < d`, with the spread rounded up to
/// a whole number of patch widths for the kernel lookup.
pub fn steering_inputs(sector: ThetaSector, n: usize, d: usize, cache: &mut KernelCache) -> Result<Vec<CVector>> {
    let basis = cache.quantized_spread_basis(sector.sigma, n, d)?;
    Ok((0..d).map(|i| basis.modulated(sector.mu, i)).collect())
}

/// `w^f[n] = beta w^f[n-1] + (1 - beta) w[n]`.
pub fn filter_steering(state: &FilteredSteering, new_w: &[Vec<CVector>], beta: f64) -> Result<FilteredSteering> {
    check_beta(beta)?;
    if new_w.len() != state.vectors.len() {
        return Err(Error::Dimension {
            expected: state.vectors.len(),
            got: new_w.len(),
        });
    }
    let b = Complex64::new(beta, 0.0);
    let a = Complex64::new(1.0 - beta, 0.0);
    let mut vectors = Vec::with_capacity(new_w.len());
    for (old, new) in state.vectors.iter().zip(new_w) {
        if old.len() != new.len() {
            return Err(Error::Dimension {
                expected: old.len(),
                got: new.len(),
            });
        }
        vectors.push(old.iter().zip(new).map(|(o, w)| o * b + w * a).collect());
    }
    Ok(FilteredSteering { vectors })
}

fn check_step(state: &QuantizedInverseState, step: u64) -> Result<()> {
    if state.step() != step {
        return Err(Error::StaleState {
            state: state.step(),
            requested: step,
        });
    }
    Ok(())
}

/// `(R_y^q)^{-1} w^f` for each filtered steering vector of MPC `mpc`.
pub fn wiener_type(
    inv_state: &QuantizedInverseState,
    w_filt: &FilteredSteering,
    mpc: usize,
    step: u64,
) -> Result<Vec<CVector>> {
    check_step(inv_state, step)?;
    w_filt
        .vectors
        .get(mpc)
        .ok_or_else(|| Error::InvalidArgument(format!("no MPC {mpc}")))?
        .iter()
        .map(|w| geb_suboptimal(inv_state.inverse(), w))
        .collect()
}

/// `(R_y^q - weight R_l^q)^{-1} w^f`, the interference-plus-noise inverse
/// obtained from the observation inverse by a second Woodbury step over the
/// MPC's own patches. `weight` is `K_g E_s`.
pub fn whitening_type(
    inv_state: &QuantizedInverseState,
    p_l_q: &PatchPowerProfile,
    weight: f64,
    w_filt: &FilteredSteering,
    mpc: usize,
    basis: &DKernelBasis,
    step: u64,
) -> Result<Vec<CVector>> {
    check_step(inv_state, step)?;
    if p_l_q.len() != basis.n() {
        return Err(Error::Dimension {
            expected: basis.n(),
            got: p_l_q.len(),
        });
    }
    let own: Vec<usize> = (0..p_l_q.len()).filter(|&k| weight * p_l_q.levels()[k] != 0.0).collect();
    let c: Vec<f64> = own.iter().map(|&k| -weight * p_l_q.levels()[k]).collect();
    let u = v_columns(&own, basis);
    let ws = w_filt
        .vectors
        .get(mpc)
        .ok_or_else(|| Error::InvalidArgument(format!("no MPC {mpc}")))?;
    let mut out = Vec::with_capacity(ws.len());
    for w in ws {
        match woodbury_apply(inv_state.inverse(), &u, &c, basis.rank(), w) {
            Some(v) => out.push(v),
            None => {
                log::warn!("whitening inner system singular at step {step}, inverting directly");
                let levels: Vec<f64> = inv_state
                    .p_y_q()
                    .levels()
                    .iter()
                    .zip(p_l_q.levels())
                    .map(|(y, p)| y - weight * p)
                    .collect();
                let eta = reconstruct_ccm(&PatchPowerProfile::signed(levels), basis)?;
                out.push(eta.inverse_pd()? * w);
            }
        }
    }
    Ok(out)
}

/// DFT column index `round(N sin(phi) / 2) mod N` for azimuth `phi`.
pub fn dft_index(phi: f64, n: usize) -> usize {
    let k = (n as f64 * phi.sin() / 2.0).round() as i64;
    k.rem_euclid(n as i64) as usize
}

/// Picks, per MPC, the `d_m` DFT columns nearest to its estimated phase;
/// a column already taken goes to the next nearest free one.
pub fn dft_baseline(mu_est: &[f64], n: usize, d: &[usize]) -> Result<BeamformerMatrix> {
    if mu_est.len() != d.len() {
        return Err(Error::Dimension {
            expected: mu_est.len(),
            got: d.len(),
        });
    }
    if d.iter().sum::<usize>() > n {
        return Err(Error::InvalidArgument("more DFT columns requested than N".into()));
    }
    let w = patch_width(n);
    let mut used = vec![false; n];
    let mut blocks = Vec::with_capacity(mu_est.len());
    for (m, (&phi, &dm)) in mu_est.iter().zip(d).enumerate() {
        let theta = PI * phi.sin();
        let center = dft_index(phi, n);
        // candidates by circular distance in phase, the rounded index first
        let mut order: Vec<usize> = (0..n).collect();
        let dist = |k: usize| {
            let x = (theta - k as f64 * w).rem_euclid(2.0 * PI);
            x.min(2.0 * PI - x)
        };
        order.sort_by(|&a, &b| (a != center).cmp(&(b != center)).then(dist(a).total_cmp(&dist(b))).then(a.cmp(&b)));
        let mut cols = CMatrix::zeros(n, dm);
        let mut taken = 0;
        for k in order {
            if taken == dm {
                break;
            }
            if !used[k] {
                used[k] = true;
                cols.set_column(taken, &steering_vector(k as f64 * w, n));
                taken += 1;
            }
        }
        blocks.push((m, cols));
    }
    assemble(blocks)
}

/// `|s_c^H u(phi)|^2` per grid angle (rows) and column (columns).
pub fn beam_pattern(s: &CMatrix, phi_grid: &[f64]) -> Vec<Vec<f64>> {
    phi_grid
        .iter()
        .map(|&phi| {
            let u = array_response(phi, s.nrows());
            (0..s.ncols()).map(|c| s.column(c).dotc(&u).norm_sqr()).collect()
        })
        .collect()
}

/// Writes a beam pattern as CSV: `phi_deg,col_0,col_1,...`.
pub fn write_beam_pattern_csv<W: Write + ?Sized>(out: &mut W, s: &CMatrix, phi_grid: &[f64]) -> std::io::Result<()> {
    write!(out, "phi_deg")?;
    for c in 0..s.ncols() {
        write!(out, ",col_{c}")?;
    }
    writeln!(out)?;
    for (phi, row) in phi_grid.iter().zip(beam_pattern(s, phi_grid)) {
        write!(out, "{}", phi.to_degrees())?;
        for v in row {
            write!(out, ",{v:e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
