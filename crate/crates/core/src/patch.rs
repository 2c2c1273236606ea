//! Angular patching of power profiles onto the N-point DFT grid, patch-power
//! quantization and filtering, and incremental inverse maintenance of the
//! quantized observation covariance via the Woodbury identity.
//!
//! A covariance built from patch powers `p_k` has the form
//! `(Q diag(p) Q^H) .* D_r`, where `Q` is the unitary DFT matrix and `D_r` a
//! rank-`r` truncation of the sinc kernel `D(2 pi / N)`. Writing
//! `D_r = sum_i d_i d_i^T` gives `V (diag(p) kron I_r) V^H` with columns
//! `q_k .* d_i`, which is what makes low-rank inverse updates possible.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::channel::{d_kernel, steering_vector};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, CMatrix, CVector, HermitianMatrix};
use crate::scenario::ScenarioConfig;

/// Width of one angular patch, `2 pi / N`.
pub fn patch_width(n: usize) -> f64 {
    2.0 * PI / n as f64
}

/// Per-patch power levels on the DFT grid (centers `k 2 pi / N`). Deltas
/// between profiles may carry negative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPowerProfile {
    levels: Vec<f64>,
}

impl PatchPowerProfile {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "patch powers must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { levels })
    }

    /// Signed profile, used for power deltas.
    pub fn signed(levels: Vec<f64>) -> Self {
        Self { levels }
    }

    pub fn zeros(n: usize) -> Self {
        Self { levels: vec![0.0; n] }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self { levels: vec![value; n] }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn total(&self) -> f64 {
        self.levels.iter().sum()
    }

    pub fn nonzero_count(&self) -> usize {
        self.levels.iter().filter(|&&p| p != 0.0).count()
    }

    /// `self - prev`, entrywise.
    pub fn delta_from(&self, prev: &PatchPowerProfile) -> Result<PatchPowerProfile> {
        if prev.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: prev.len(),
            });
        }
        Ok(Self::signed(
            self.levels.iter().zip(&prev.levels).map(|(a, b)| a - b).collect(),
        ))
    }
}

/// Equal-power patching of a unit-height rectangular profile
/// `[mu - sigma/2, mu + sigma/2]`: every patch the sector overlaps (strictly)
/// gets the same level, scaled so the levels sum to `mass`. Patch centers
/// wrap modulo `2 pi`.
pub fn patch_profile(mu_theta: f64, sigma_theta: f64, mass: f64, n: usize) -> PatchPowerProfile {
    let w = patch_width(n);
    let (lo, hi) = (mu_theta - sigma_theta / 2.0, mu_theta + sigma_theta / 2.0);
    let occupied: Vec<bool> = (0..n)
        .map(|k| {
            [-2.0 * PI, 0.0, 2.0 * PI].iter().any(|shift| {
                let c = k as f64 * w + shift;
                hi > c - w / 2.0 && lo < c + w / 2.0
            })
        })
        .collect();
    let count = occupied.iter().filter(|&&o| o).count();
    let a = if count == 0 { 0.0 } else { mass / count as f64 };
    PatchPowerProfile {
        levels: occupied.iter().map(|&o| if o { a } else { 0.0 }).collect(),
    }
}

/// Expected single-patch power `mass / ceil(sigma / (2 pi / N))`.
pub fn expected_patch_level(mass: f64, sigma_theta: f64, n: usize) -> f64 {
    let cells = (sigma_theta / patch_width(n)).ceil().max(1.0);
    mass / cells
}

/// Weighted eigenvectors `d_i = sqrt(lambda_i) e_i` of a sinc kernel,
/// most dominant first.
#[derive(Debug, Clone, PartialEq)]
pub struct DKernelBasis {
    n: usize,
    eigenvalues: Vec<f64>,
    /// `N x r`, column `i` is `d_i`.
    vectors: DMatrix<f64>,
}

impl DKernelBasis {
    /// Rank-`r` basis of `D(sigma)`.
    pub fn for_width(sigma: f64, n: usize, r: usize) -> Result<Self> {
        if r < 1 || r > n {
            return Err(Error::InvalidArgument(format!("rank {r} outside [1, {n}]")));
        }
        let eig = SymmetricEigen::new(d_kernel(sigma, n));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut vectors = DMatrix::zeros(n, r);
        let mut eigenvalues = Vec::with_capacity(r);
        for (c, &i) in order.iter().take(r).enumerate() {
            let lambda = eig.eigenvalues[i];
            let mut v = eig.eigenvectors.column(i).clone_owned();
            let peak = v.amax();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * peak) {
                if *first < 0.0 {
                    v.neg_mut();
                }
            }
            v *= lambda.max(0.0).sqrt();
            vectors.set_column(c, &v);
            eigenvalues.push(lambda);
        }
        Ok(Self {
            n,
            eigenvalues,
            vectors,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Column `i` as a real vector.
    pub fn vector(&self, i: usize) -> nalgebra::DVector<f64> {
        self.vectors.column(i).clone_owned()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// `D_r = sum_i d_i d_i^T`.
    pub fn kernel(&self) -> DMatrix<f64> {
        &self.vectors * self.vectors.transpose()
    }

    /// `q(theta) .* d_i`.
    pub fn modulated(&self, theta: f64, i: usize) -> CVector {
        let q = steering_vector(theta, self.n);
        CVector::from_iterator(
            self.n,
            q.iter().zip(self.vectors.column(i).iter()).map(|(a, &b)| a * b),
        )
    }
}

/// Rank-`r` basis of the patch kernel `D(2 pi / N)`.
pub fn d_kernel_eigenbasis(n: usize, r: usize) -> Result<DKernelBasis> {
    DKernelBasis::for_width(patch_width(n), n, r)
}

/// Memoizes kernel bases; `D` is a constant matrix per `(N, width)`.
#[derive(Debug, Default, Clone)]
pub struct KernelCache {
    map: HashMap<(usize, u64, usize), Arc<DKernelBasis>>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, sigma: f64, n: usize, r: usize) -> Result<Arc<DKernelBasis>> {
        let key = (n, sigma.to_bits(), r);
        if let Some(b) = self.map.get(&key) {
            return Ok(b.clone());
        }
        let b = Arc::new(DKernelBasis::for_width(sigma, n, r)?);
        self.map.insert(key, b.clone());
        Ok(b)
    }

    pub fn patch_basis(&mut self, n: usize, r: usize) -> Result<Arc<DKernelBasis>> {
        self.get(patch_width(n), n, r)
    }

    /// Basis for a spread quantized up to a whole number of patch widths.
    pub fn quantized_spread_basis(&mut self, sigma: f64, n: usize, r: usize) -> Result<Arc<DKernelBasis>> {
        let cells = (sigma / patch_width(n)).ceil().max(1.0);
        self.get(cells * patch_width(n), n, r)
    }
}

/// First column of the circulant `Q diag(p) Q^H`.
fn circulant_column(p: &[f64]) -> Vec<Complex64> {
    let n = p.len();
    let inv_n = 1.0 / n as f64;
    (0..n)
        .map(|m| {
            p.iter()
                .enumerate()
                .filter(|(_, &pk)| pk != 0.0)
                .map(|(k, &pk)| {
                    let phase = 2.0 * PI * ((m * k) % n) as f64 / n as f64;
                    Complex64::from_polar(pk * inv_n, phase)
                })
                .sum()
        })
        .collect()
}

/// `(Q diag(p) Q^H) .* kernel` for an arbitrary real symmetric kernel.
pub fn reconstruct_with_kernel(p: &PatchPowerProfile, kernel: &DMatrix<f64>) -> Result<HermitianMatrix> {
    let n = p.len();
    if kernel.nrows() != n || kernel.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: kernel.nrows(),
        });
    }
    let c = circulant_column(&p.levels);
    let m = CMatrix::from_fn(n, n, |a, b| {
        let lag = if a >= b { c[a - b] } else { c[n - (b - a)] };
        lag * kernel[(a, b)]
    });
    Ok(HermitianMatrix::from_hermitian_part(&m))
}

/// `(Q diag(p) Q^H) .* D_r` with `D_r` from `basis`.
pub fn reconstruct_ccm(p: &PatchPowerProfile, basis: &DKernelBasis) -> Result<HermitianMatrix> {
    reconstruct_with_kernel(p, &basis.kernel())
}

/// Snaps every level to the nearest multiple of `h / n_q` (ties to even).
pub fn quantize_powers(p: &PatchPowerProfile, h: f64, n_q: usize) -> Result<PatchPowerProfile> {
    if !(h > 0.0) || n_q < 1 {
        return Err(Error::InvalidArgument("quantizer needs h > 0 and n_q >= 1".into()));
    }
    let step = h / n_q as f64;
    Ok(PatchPowerProfile {
        levels: p
            .levels
            .iter()
            .map(|&x| (x / step).round_ties_even().max(0.0) * step)
            .collect(),
    })
}

/// `beta prev + (1 - beta) new`.
pub fn recursive_filter_powers(
    prev: &PatchPowerProfile,
    new: &PatchPowerProfile,
    beta: f64,
) -> Result<PatchPowerProfile> {
    if prev.len() != new.len() {
        return Err(Error::Dimension {
            expected: prev.len(),
            got: new.len(),
        });
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1)")));
    }
    Ok(PatchPowerProfile {
        levels: prev
            .levels
            .iter()
            .zip(&new.levels)
            .map(|(a, b)| beta * a + (1.0 - beta) * b)
            .collect(),
    })
}

/// `P_y = sum_g K_g E_s sum_l P_l + N_0`, indexed `[group][mpc]`.
pub fn assemble_py(per_mpc: &[Vec<PatchPowerProfile>], config: &ScenarioConfig) -> Result<PatchPowerProfile> {
    let n = config.num_antennas;
    let mut acc = vec![config.noise_power; n];
    for (g, profiles) in per_mpc.iter().enumerate() {
        let spec = config
            .groups
            .get(g)
            .ok_or_else(|| Error::InvalidArgument(format!("no group {g}")))?;
        let w = spec.num_users as f64 * spec.symbol_energy;
        for p in profiles {
            if p.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: p.len(),
                });
            }
            for (a, x) in acc.iter_mut().zip(&p.levels) {
                *a += w * x;
            }
        }
    }
    Ok(PatchPowerProfile { levels: acc })
}

/// Columns `q_k .* d_i` for the given patches, patch-major.
pub fn v_columns(patches: &[usize], basis: &DKernelBasis) -> CMatrix {
    let n = basis.n();
    let r = basis.rank();
    let mut u = CMatrix::zeros(n, patches.len() * r);
    for (j, &k) in patches.iter().enumerate() {
        let q = steering_vector(patch_width(n) * k as f64, n);
        for i in 0..r {
            let col = j * r + i;
            for a in 0..n {
                u[(a, col)] = q[a] * basis.vectors[(a, i)];
            }
        }
    }
    u
}

/// Relative threshold below which a patch-power change is treated as none.
const DELTA_TOL: f64 = 1e-12;

/// Patches whose level changed between `old` and `new`.
pub fn changed_patches(old: &PatchPowerProfile, new: &PatchPowerProfile) -> Vec<usize> {
    old.levels
        .iter()
        .zip(&new.levels)
        .enumerate()
        .filter(|(_, (a, b))| (*b - *a).abs() > DELTA_TOL * a.abs().max(b.abs()))
        .map(|(k, _)| k)
        .collect()
}

/// Inner-system condition number above which an update is redone by
/// direct inversion. Downdates that strip a strong patch to the noise floor
/// cancel most of the inner matrix and lose about `log10(cond)` digits.
const MAX_INNER_COND: f64 = 1e5;

/// Accepted estimate of `||R A - I||_2` for an incremental update; above it
/// the update is redone by direct inversion.
const PROBE_TOL: f64 = 5e-8;

/// Lower estimate of `||R A - I||_2`: the worst relative residual over the
/// columns of `u` and a fixed spread-phase vector, refined by two power steps
/// on `E^H E`. Costs `O(N^2 (N_dp r + 5))`, the order of the update itself.
fn probe_residual(r: &CMatrix, a: &CMatrix, u: &CMatrix) -> f64 {
    let n = r.nrows();
    let x = CVector::from_fn(n, |i, _| {
        let t = (i * i) as f64 * 0.618_033_988_749_895;
        Complex64::from_polar(1.0, std::f64::consts::TAU * t.fract())
    });
    let mut probes = CMatrix::zeros(n, u.ncols() + 1);
    probes.column_mut(0).copy_from(&x);
    probes.columns_mut(1, u.ncols()).copy_from(u);
    let res = r * (a * &probes) - &probes;
    let (mut worst, mut col) = (0.0, 0);
    for j in 0..probes.ncols() {
        let v = res.column(j).norm() / probes.column(j).norm();
        if v > worst {
            worst = v;
            col = j;
        }
    }
    // power steps on E^H E, E = R A - I, with E^H v = A R v - v
    let mut y = probes.column(col).into_owned();
    for _ in 0..2 {
        let e = r * (a * &y) - &y;
        worst = worst.max(e.norm() / y.norm());
        y = a * (r * &e) - &e;
        let ny = y.norm();
        if ny == 0.0 {
            break;
        }
        y /= Complex64::new(ny, 0.0);
    }
    let e = r * (a * &y) - &y;
    worst = worst.max(e.norm());
    worst
}

/// Symmetrically scaled Woodbury factors for `(A + U C U^H)^{-1}` with
/// `C = diag(c) kron I_r`: returns `A^{-1} U S` and the inner matrix
/// `sgn(C) + S U^H A^{-1} U S`, `S = |C|^{1/2}`, together with the digits-lost
/// estimate `max(1, ||S U^H A^{-1} U S||) / min |eig(inner)|`.
fn scaled_inner(a_inv: &CMatrix, u: &CMatrix, c: &[f64], r: usize) -> (CMatrix, CMatrix, f64) {
    let mut us = u.clone();
    for (j, &cj) in c.iter().enumerate() {
        for i in 0..r {
            us.column_mut(j * r + i).scale_mut(cj.abs().sqrt());
        }
    }
    let aus = a_inv * &us;
    let gram = hermitian_part(&(us.adjoint() * &aus));
    let mut inner = gram.clone();
    for (j, &cj) in c.iter().enumerate() {
        for i in 0..r {
            let d = j * r + i;
            inner[(d, d)] += Complex64::new(cj.signum(), 0.0);
        }
    }
    let eig = |m: &CMatrix| nalgebra::SymmetricEigen::new(m.clone()).eigenvalues;
    let hi = eig(&gram).iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let lo = eig(&inner).iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    (aus, inner, hi / lo)
}

/// Low-rank correction `A^{-1} - A^{-1} U (C^{-1} + U^H A^{-1} U)^{-1} U^H A^{-1}`
/// in scaled form, with the inner-system condition estimate. Returns `None`
/// when the inner system is singular.
fn woodbury(a_inv: &CMatrix, u: &CMatrix, c: &[f64], r: usize) -> Option<(CMatrix, f64)> {
    let (aus, inner, cond) = scaled_inner(a_inv, u, c, r);
    let z = inner.lu().solve(&aus.adjoint())?;
    let out = a_inv - &aus * z;
    out.iter()
        .all(|v| v.re.is_finite() && v.im.is_finite())
        .then(|| (hermitian_part(&out), cond))
}

/// `(A + U C U^H)^{-1} w` through the Woodbury identity, without forming the
/// updated inverse.
pub(crate) fn woodbury_apply(a_inv: &CMatrix, u: &CMatrix, c: &[f64], r: usize, w: &CVector) -> Option<CVector> {
    let aw = a_inv * w;
    if u.ncols() == 0 {
        return Some(aw);
    }
    let (aus, inner, _) = scaled_inner(a_inv, u, c, r);
    let z = inner.lu().solve(&(aus.adjoint() * w))?;
    let out = aw - aus * z;
    out.iter().all(|v| v.re.is_finite() && v.im.is_finite()).then_some(out)
}

/// Quantized observation patch powers together with the inverse of the
/// covariance they reconstruct.
#[derive(Debug, Clone)]
pub struct QuantizedInverseState {
    p_y_q: PatchPowerProfile,
    inverse: CMatrix,
    step: u64,
    last_n_delta_p: usize,
    fallbacks: usize,
}

impl QuantizedInverseState {
    /// Initial state by direct inversion.
    pub fn new(p_y_q: PatchPowerProfile, basis: &DKernelBasis) -> Result<Self> {
        let inverse = reconstruct_ccm(&p_y_q, basis)?.inverse_pd()?;
        Ok(Self {
            p_y_q,
            inverse,
            step: 0,
            last_n_delta_p: 0,
            fallbacks: 0,
        })
    }

    pub fn p_y_q(&self) -> &PatchPowerProfile {
        &self.p_y_q
    }

    pub fn inverse(&self) -> &CMatrix {
        &self.inverse
    }

    /// Slow-time index the inverse belongs to.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of patches changed by the last update.
    pub fn n_delta_p(&self) -> usize {
        self.last_n_delta_p
    }

    /// Updates that fell back to direct inversion, because the inner system
    /// was singular or too ill-conditioned.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }


    /// Applies a signed patch-power change. Only the columns of `V` for
    /// changed patches are formed and the inner inversion is of size
    /// `N_dp * r`.
    pub fn woodbury_update(&self, delta_p: &PatchPowerProfile, basis: &DKernelBasis) -> Result<Self> {
        let new_p = PatchPowerProfile::signed(
            self.p_y_q.levels.iter().zip(&delta_p.levels).map(|(a, d)| a + d).collect(),
        );
        if delta_p.len() != self.p_y_q.len() {
            return Err(Error::Dimension {
                expected: self.p_y_q.len(),
                got: delta_p.len(),
            });
        }
        self.update_to(new_p, basis)
    }

    /// Moves the state to the target powers `new_p`.
    pub fn advance(&self, new_p: &PatchPowerProfile, basis: &DKernelBasis) -> Result<Self> {
        if new_p.len() != self.p_y_q.len() {
            return Err(Error::Dimension {
                expected: self.p_y_q.len(),
                got: new_p.len(),
            });
        }
        self.update_to(new_p.clone(), basis)
    }

    fn update_to(&self, new_p: PatchPowerProfile, basis: &DKernelBasis) -> Result<Self> {
        if basis.n() != new_p.len() {
            return Err(Error::Dimension {
                expected: new_p.len(),
                got: basis.n(),
            });
        }
        let active = changed_patches(&self.p_y_q, &new_p);
        let mut next = Self {
            p_y_q: new_p,
            inverse: self.inverse.clone(),
            step: self.step + 1,
            last_n_delta_p: active.len(),
            fallbacks: self.fallbacks,
        };
        if active.is_empty() {
            return Ok(next);
        }
        let c: Vec<f64> = active
            .iter()
            .map(|&k| next.p_y_q.levels[k] - self.p_y_q.levels[k])
            .collect();
        let u = v_columns(&active, basis);
        let accepted = match woodbury(&self.inverse, &u, &c, basis.rank()) {
            Some((inv, cond)) if cond <= MAX_INNER_COND => {
                let ry = reconstruct_ccm(&next.p_y_q, basis)?;
                let res = probe_residual(ry.matrix(), &inv, &u);
                if res <= PROBE_TOL {
                    next.inverse = inv;
                    true
                } else {
                    log::debug!("woodbury probe residual {res:.2e} at step {}, inverting directly", next.step);
                    false
                }
            }
            Some((_, cond)) => {
                log::debug!("woodbury inner condition {cond:.2e} at step {}, inverting directly", next.step);
                false
            }
            None => {
                log::warn!("woodbury inner system singular at step {}, inverting directly", next.step);
                false
            }
        };
        if !accepted {
            next.inverse = reconstruct_ccm(&next.p_y_q, basis)?.inverse_pd()?;
            next.fallbacks += 1;
        }
        Ok(next)
    }
}

/// Analog beamformer construction family, for complexity accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComplexityClass {
    Wiener,
    Whitening,
    Geb,
}

impl std::str::FromStr for ComplexityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiener" => Ok(Self::Wiener),
            "whitening" => Ok(Self::Whitening),
            "geb" | "geb-filtered" | "geb-true" => Ok(Self::Geb),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Size of the dominant matrix inversion per construction.
pub fn complexity_measure(method: ComplexityClass, n_delta_p: usize, n_patch: usize, r: usize, n: usize) -> usize {
    match method {
        ComplexityClass::Wiener => n_delta_p * r,
        ComplexityClass::Whitening => (n_delta_p + n_patch) * r,
        ComplexityClass::Geb => n,
    }
}
