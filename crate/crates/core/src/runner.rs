//! Slow-time simulation loop, parameter sweeps and CSV output.
//!
//! Every trial owns four random streams derived from `(seed, trial)`:
//! mobility, angle estimate noise, channel draws and training symbols. All
//! methods in a run see the same draws, so their results are paired.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analytics::{cmf_powers_analytical, outage_probability, slow_time_average_db};
use crate::beamformer::{
    dft_baseline, filter_ccms, filter_steering, geb_beamformer, steering_inputs, whitening_type, wiener_type,
    FilteredCcmState, FilteredSteering,
};
use crate::channel::{assemble_ry, ChannelCovariances, ChannelSampler, MobilityModel, MpcState, ThetaSector};
use crate::error::{Error, Result};
use crate::estimation::{build_training, mmse_estimator, nmse_analytical, TrainingBlock, TrainingFamily};
use crate::linalg::CMatrix;
use crate::patch::{
    assemble_py, changed_patches, complexity_measure, patch_profile, patch_width, quantize_powers, recursive_filter_powers,
    ComplexityClass, DKernelBasis, KernelCache, PatchPowerProfile, QuantizedInverseState,
};
use crate::receiver::{effective_channels, effective_covariances, sinr_db_from, szf, term_powers, OutputDecomposition};
use crate::scenario::{with_overrides, ScenarioConfig};

/// Analog beamformer construction evaluated by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// GEB on the latest estimated CCMs.
    Geb,
    /// GEB on recursively filtered estimated CCMs.
    GebFiltered,
    /// GEB on the true CCMs.
    GebTrue,
    Wiener,
    Whitening,
    Dft,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Geb,
        Method::GebFiltered,
        Method::GebTrue,
        Method::Wiener,
        Method::Whitening,
        Method::Dft,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Geb => "geb",
            Method::GebFiltered => "geb-filtered",
            Method::GebTrue => "geb-true",
            Method::Wiener => "wiener",
            Method::Whitening => "whitening",
            Method::Dft => "dft",
        }
    }

    /// Comma separated names, duplicates dropped.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("no methods given".into()));
        }
        Ok(out)
    }

    fn complexity_class(&self) -> Option<ComplexityClass> {
        match self {
            Method::Geb | Method::GebFiltered | Method::GebTrue => Some(ComplexityClass::Geb),
            Method::Wiener => Some(ComplexityClass::Wiener),
            Method::Whitening => Some(ComplexityClass::Whitening),
            Method::Dft => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

const MOBILITY_STREAM: u64 = 1;
const AOA_STREAM: u64 = 2;
const CHANNEL_STREAM: u64 = 3;
const TRAINING_STREAM: u64 = 4;

/// Independent generator for one `(seed, trial, stream)` triple.
pub fn stream_rng(seed: u64, trial: usize, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((trial as u64) << 8) | stream);
    r
}

/// One output row: a user of the intended group, one method, one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub trial: usize,
    pub slow_time: usize,
    /// 1-based group index.
    pub group: usize,
    pub user: usize,
    pub method: Method,
    pub alpha: f64,
    pub beta: f64,
    pub sigma_est_deg: f64,
    pub nq: usize,
    pub rank: usize,
    pub snr_db: f64,
    pub sinr_db: f64,
    pub p_signal: f64,
    pub p_interference_noise: f64,
    pub terms: Option<[f64; 5]>,
    pub n_delta_p: Option<usize>,
    pub complexity: Option<usize>,
    pub nmse: Option<f64>,
}

/// Rows of a run in `(trial, step, method, user)` order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub records: Vec<StepRecord>,
}

impl ResultTable {
    pub fn extend(&mut self, other: ResultTable) {
        self.records.extend(other.records);
    }

    /// Mean N_dp over all recorded steps of `method`.
    pub fn mean_n_delta_p(&self, method: Method) -> Option<f64> {
        mean(self.records.iter().filter(|r| r.method == method).filter_map(|r| r.n_delta_p.map(|v| v as f64)))
    }

    /// Per `(trial, user)` SINR series of `method`, in step order.
    pub fn sinr_series(&self, method: Method) -> BTreeMap<(usize, usize), Vec<f64>> {
        let mut out: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.method == method) {
            out.entry((r.trial, r.user)).or_default().push(r.sinr_db);
        }
        out
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Quantized patch-power state shared by the Wiener-type and
/// whitening-type beamformers.
struct PatchEngine {
    basis: Arc<DKernelBasis>,
    /// Quantizer widths, fixed from the nominal sectors.
    h: Vec<Vec<f64>>,
    filtered: Vec<Vec<PatchPowerProfile>>,
    quantized: Vec<Vec<PatchPowerProfile>>,
    inverse: QuantizedInverseState,
    steering: FilteredSteering,
}

/// Quantizer widths, one per MPC, from the nominal sectors.
fn quantizer_widths(config: &ScenarioConfig) -> Result<Vec<Vec<f64>>> {
    let n = config.num_antennas;
    let mut h = Vec::with_capacity(config.groups.len());
    for spec in &config.groups {
        let masses = spec.mpc_masses();
        let mut hg = Vec::with_capacity(spec.mpcs.len());
        for (mpc, mass) in spec.mpcs.iter().zip(masses) {
            let sec = ThetaSector::from_azimuth(mpc.center_angle_deg.to_radians(), mpc.angular_spread_deg.to_radians())?;
            let cells = (sec.sigma / patch_width(n)).ceil().max(1.0);
            hg.push(mass / cells);
        }
        h.push(hg);
    }
    Ok(h)
}

fn quantize_all(filtered: &[Vec<PatchPowerProfile>], h: &[Vec<f64>], nq: usize) -> Result<Vec<Vec<PatchPowerProfile>>> {
    filtered
        .iter()
        .zip(h)
        .map(|(ps, hs)| ps.iter().zip(hs).map(|(p, &h)| quantize_powers(p, h, nq)).collect())
        .collect()
}

fn filter_all(old: &[Vec<PatchPowerProfile>], new: &[Vec<PatchPowerProfile>], beta: f64) -> Result<Vec<Vec<PatchPowerProfile>>> {
    old.iter()
        .zip(new)
        .map(|(o, n)| o.iter().zip(n).map(|(o, n)| recursive_filter_powers(o, n, beta)).collect())
        .collect()
}

impl PatchEngine {
    fn raw_profiles(states: &[Vec<MpcState>], config: &ScenarioConfig) -> Result<Vec<Vec<PatchPowerProfile>>> {
        let n = config.num_antennas;
        states
            .iter()
            .zip(&config.groups)
            .map(|(mpcs, spec)| {
                let masses = spec.mpc_masses();
                mpcs.iter()
                    .zip(masses)
                    .map(|(s, mass)| {
                        let sec = s.estimated_sector()?;
                        Ok(patch_profile(sec.mu, sec.sigma, mass, n))
                    })
                    .collect()
            })
            .collect()
    }

    fn steering(states: &[MpcState], config: &ScenarioConfig, cache: &mut KernelCache) -> Result<Vec<Vec<crate::linalg::CVector>>> {
        let chains = &config.groups[config.intended()].rf_chains_per_mpc;
        states
            .iter()
            .zip(chains)
            .map(|(s, &d)| steering_inputs(s.estimated_sector()?, config.num_antennas, d, cache))
            .collect()
    }

    fn quantize(&self, filtered: &[Vec<PatchPowerProfile>], nq: usize) -> Result<Vec<Vec<PatchPowerProfile>>> {
        quantize_all(filtered, &self.h, nq)
    }

    fn new(states: &[Vec<MpcState>], config: &ScenarioConfig, cache: &mut KernelCache) -> Result<Self> {
        let n = config.num_antennas;
        let basis = cache.patch_basis(n, config.d_rank)?;
        let h = quantizer_widths(config)?;
        let filtered = Self::raw_profiles(states, config)?;
        let steering = FilteredSteering::new(Self::steering(&states[config.intended()], config, cache)?);
        let mut engine = Self {
            basis: basis.clone(),
            h,
            quantized: Vec::new(),
            filtered,
            inverse: QuantizedInverseState::new(PatchPowerProfile::constant(n, 1.0), &basis)?,
            steering,
        };
        engine.quantized = engine.quantize(&engine.filtered, config.quantizer_depth)?;
        let py = assemble_py(&engine.quantized, config)?;
        engine.inverse = QuantizedInverseState::new(py, &basis)?;
        Ok(engine)
    }

    fn update(&mut self, states: &[Vec<MpcState>], config: &ScenarioConfig, cache: &mut KernelCache) -> Result<()> {
        let beta = config.recursion_beta;
        let raw = Self::raw_profiles(states, config)?;
        self.filtered = filter_all(&self.filtered, &raw, beta)?;
        self.quantized = self.quantize(&self.filtered, config.quantizer_depth)?;
        let py = assemble_py(&self.quantized, config)?;
        self.inverse = self.inverse.advance(&py, &self.basis)?;
        let w = Self::steering(&states[config.intended()], config, cache)?;
        self.steering = filter_steering(&self.steering, &w, beta)?;
        Ok(())
    }
}

fn columns(vectors: &[crate::linalg::CVector], n: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, vectors.len());
    for (c, v) in vectors.iter().enumerate() {
        m.set_column(c, v);
    }
    m
}

type Built = (Method, CMatrix, Option<usize>, Option<usize>);

/// State of one Monte Carlo trial across slow time.
struct Trial<'a> {
    config: &'a ScenarioConfig,
    methods: &'a [Method],
    index: usize,
    model: MobilityModel,
    mobility_rng: ChaCha8Rng,
    aoa_rng: ChaCha8Rng,
    channel_rng: ChaCha8Rng,
    states: Vec<Vec<MpcState>>,
    cache: KernelCache,
    training: Option<TrainingBlock>,
    filtered: Option<FilteredCcmState>,
    engine: Option<PatchEngine>,
}

impl<'a> Trial<'a> {
    fn new(config: &'a ScenarioConfig, methods: &'a [Method], index: usize) -> Result<Self> {
        let seed = config.rng_seed;
        let mut training_rng = stream_rng(seed, index, TRAINING_STREAM);
        let training = config
            .training_length
            .map(|t| build_training(config, config.intended(), t, TrainingFamily::RandomQpsk, &mut training_rng))
            .transpose()?;
        Ok(Self {
            config,
            methods,
            index,
            model: MobilityModel::from_config(config),
            mobility_rng: stream_rng(seed, index, MOBILITY_STREAM),
            aoa_rng: stream_rng(seed, index, AOA_STREAM),
            channel_rng: stream_rng(seed, index, CHANNEL_STREAM),
            states: config
                .groups
                .iter()
                .map(|g| g.mpcs.iter().map(MpcState::new).collect())
                .collect(),
            cache: KernelCache::new(),
            training,
            filtered: None,
            engine: None,
        })
    }

    fn centers(&self, estimated: bool) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|g| {
                g.iter()
                    .map(|s| if estimated { s.mu_phi_est } else { s.mu_phi_true })
                    .collect()
            })
            .collect()
    }

    fn advance(&mut self, step: usize) -> Result<Vec<StepRecord>> {
        let (true_ccms, est_ccms, built) = self.build(step)?;
        self.evaluate(step, &true_ccms, &est_ccms, built)
    }

    /// Moves the state to `step` and constructs every method's combiner.
    fn build(&mut self, step: usize) -> Result<(ChannelCovariances, ChannelCovariances, Vec<Built>)> {
        let config = self.config;
        let n = config.num_antennas;
        let g0 = config.intended();
        if step > 0 {
            for s in self.states.iter_mut().flatten() {
                *s = self.model.step(s, &mut self.mobility_rng);
            }
        }
        for s in self.states.iter_mut().flatten() {
            s.mu_phi_est = self.model.observe(s, &mut self.aoa_rng);
        }
        let true_ccms = ChannelCovariances::from_angles(config, &self.centers(false))?;
        let est_ccms = ChannelCovariances::from_angles(config, &self.centers(true))?;

        if self.methods.contains(&Method::GebFiltered) {
            self.filtered = Some(match &self.filtered {
                None => FilteredCcmState::new(est_ccms.clone(), config)?,
                Some(f) => filter_ccms(f, &est_ccms, config.recursion_beta, config)?,
            });
        }
        if self.methods.iter().any(|m| matches!(m, Method::Wiener | Method::Whitening)) {
            match &mut self.engine {
                None => self.engine = Some(PatchEngine::new(&self.states, config, &mut self.cache)?),
                Some(e) => e.update(&self.states, config, &mut self.cache)?,
            }
        }

        let chains = &config.groups[g0].rf_chains_per_mpc;
        let mut built: Vec<Built> = Vec::with_capacity(self.methods.len());
        for &method in self.methods {
            let (s, n_dp, n_patch) = match method {
                Method::Geb => {
                    let ry = assemble_ry(&est_ccms, config)?;
                    (geb_beamformer(&est_ccms, &ry, g0, config)?.into_weights(), None, 0)
                }
                Method::GebFiltered => {
                    let f = self.filtered.as_ref().expect("filtered state updated above");
                    (geb_beamformer(f.ccms(), f.ry(), g0, config)?.into_weights(), None, 0)
                }
                Method::GebTrue => {
                    let ry = assemble_ry(&true_ccms, config)?;
                    (geb_beamformer(&true_ccms, &ry, g0, config)?.into_weights(), None, 0)
                }
                Method::Wiener | Method::Whitening => {
                    let e = self.engine.as_ref().expect("patch engine updated above");
                    let st = e.inverse.step();
                    let mut blocks = Vec::with_capacity(chains.len());
                    let mut own_max = 0;
                    let weight = config.groups[g0].num_users as f64 * config.groups[g0].symbol_energy;
                    for m in 0..chains.len() {
                        let v = if method == Method::Wiener {
                            wiener_type(&e.inverse, &e.steering, m, st)?
                        } else {
                            let own = &e.quantized[g0][m];
                            own_max = own_max.max(own.nonzero_count());
                            whitening_type(&e.inverse, own, weight, &e.steering, m, &e.basis, st)?
                        };
                        blocks.push((m, columns(&v, n)));
                    }
                    let s = crate::beamformer::assemble(blocks)?.into_weights();
                    let n_dp = (step > 0).then(|| e.inverse.n_delta_p());
                    (s, n_dp, config.whitening_nominal_patches.unwrap_or(own_max))
                }
                Method::Dft => {
                    let mu: Vec<f64> = self.states[g0].iter().map(|s| s.mu_phi_est).collect();
                    (dft_baseline(&mu, n, chains)?.into_weights(), None, 0)
                }
            };
            let complexity = match (method.complexity_class(), method) {
                (Some(c), Method::Wiener | Method::Whitening) => {
                    n_dp.map(|d| complexity_measure(c, d, n_patch, config.d_rank, n))
                }
                (Some(c), _) => Some(complexity_measure(c, 0, 0, config.d_rank, n)),
                (None, _) => None,
            };
            built.push((method, s, n_dp, complexity));
        }
        Ok((true_ccms, est_ccms, built))
    }

    fn evaluate(
        &mut self,
        step: usize,
        true_ccms: &ChannelCovariances,
        est_ccms: &ChannelCovariances,
        built: Vec<Built>,
    ) -> Result<Vec<StepRecord>> {
        let config = self.config;
        let g0 = config.intended();

        let k = config.groups[g0].num_users;
        // multi-user groups need channel draws for the SZF path
        let draws = if k > 1 {
            let sampler = ChannelSampler::new(true_ccms, config)?;
            (0..config.channel_draws_per_step.max(1))
                .map(|_| sampler.sample(&mut self.channel_rng))
                .collect()
        } else {
            Vec::new()
        };

        let mut out = Vec::with_capacity(built.len() * k);
        for (method, s, n_dp, complexity) in built {
            let eff = effective_covariances(&s, true_ccms, config)?;
            let nmse = match &self.training {
                Some(tb) => {
                    let est = effective_covariances(&s, est_ccms, config)?;
                    let z = mmse_estimator(tb, &est, g0)?;
                    Some(nmse_analytical(&z, tb, &eff, g0)?)
                }
                None => None,
            };
            let base = StepRecord {
                trial: self.index,
                slow_time: step,
                group: g0 + 1,
                user: 0,
                method,
                alpha: config.mobility_alpha,
                beta: config.recursion_beta,
                sigma_est_deg: config.aoa_error_std_deg,
                nq: config.quantizer_depth,
                rank: config.d_rank,
                snr_db: config.snr_db(g0),
                sinr_db: 0.0,
                p_signal: 0.0,
                p_interference_noise: 0.0,
                terms: None,
                n_delta_p: n_dp,
                complexity,
                nmse,
            };
            if k == 1 {
                let p = cmf_powers_analytical(&eff, config, g0)?;
                out.push(StepRecord {
                    sinr_db: p.sinr_db(),
                    p_signal: p.signal,
                    p_interference_noise: p.interference_noise,
                    ..base
                });
            } else {
                let gram = s.adjoint() * &s;
                let mut decomps = Vec::with_capacity(draws.len());
                for ch in &draws {
                    let heff = effective_channels(&s, ch);
                    let y = szf(&heff[g0])?;
                    decomps.push(term_powers(&heff[g0], &heff, &y, &gram, config, g0)?);
                }
                let d = OutputDecomposition::mean(&decomps)?;
                for (u, t) in d.users.iter().enumerate() {
                    out.push(StepRecord {
                        user: u,
                        sinr_db: sinr_db_from(t.signal, t.interference_plus_noise()),
                        p_signal: t.signal,
                        p_interference_noise: t.interference_plus_noise(),
                        terms: Some([t.sicee, t.isi, t.mui, t.igi, t.noise]),
                        ..base.clone()
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Runs one trial over the whole horizon.
pub fn run_trial(config: &ScenarioConfig, methods: &[Method], trial: usize) -> Result<ResultTable> {
    let mut t = Trial::new(config, methods, trial)?;
    let mut records = Vec::new();
    for step in 0..config.slow_time_steps {
        let rows = t.advance(step).map_err(|e| Error::Step {
            step,
            source: Box::new(e),
        })?;
        records.extend(rows);
    }
    Ok(ResultTable { records })
}

/// Quantized patch-power change counts `N_dp` for steps `1..` of every
/// trial. Follows the same mobility and AoA draws as [`run_slow_time`], so
/// the counts equal the `n_delta_p` column of a wiener or whitening run,
/// but skips the inverse and all beamformers.
pub fn patch_change_counts(config: &ScenarioConfig) -> Result<Vec<Vec<usize>>> {
    config.validate()?;
    let h = quantizer_widths(config)?;
    let model = MobilityModel::from_config(config);
    let mut out = Vec::with_capacity(config.monte_carlo_trials);
    for trial in 0..config.monte_carlo_trials {
        let mut mobility_rng = stream_rng(config.rng_seed, trial, MOBILITY_STREAM);
        let mut aoa_rng = stream_rng(config.rng_seed, trial, AOA_STREAM);
        let mut states: Vec<Vec<MpcState>> = config
            .groups
            .iter()
            .map(|g| g.mpcs.iter().map(MpcState::new).collect())
            .collect();
        let mut filtered: Option<Vec<Vec<PatchPowerProfile>>> = None;
        let mut prev: Option<PatchPowerProfile> = None;
        let mut counts = Vec::with_capacity(config.slow_time_steps.saturating_sub(1));
        for step in 0..config.slow_time_steps {
            if step > 0 {
                for s in states.iter_mut().flatten() {
                    *s = model.step(s, &mut mobility_rng);
                }
            }
            for s in states.iter_mut().flatten() {
                s.mu_phi_est = model.observe(s, &mut aoa_rng);
            }
            let raw = PatchEngine::raw_profiles(&states, config)?;
            let f = match filtered.take() {
                None => raw,
                Some(old) => filter_all(&old, &raw, config.recursion_beta)?,
            };
            let py = assemble_py(&quantize_all(&f, &h, config.quantizer_depth)?, config)?;
            if let Some(p) = &prev {
                counts.push(changed_patches(p, &py).len());
            }
            prev = Some(py);
            filtered = Some(f);
        }
        out.push(counts);
    }
    Ok(out)
}

/// Combiners of the intended group at the first slow-time step of trial 0.
pub fn initial_beamformers(config: &ScenarioConfig, methods: &[Method]) -> Result<Vec<(Method, CMatrix)>> {
    config.validate()?;
    let mut t = Trial::new(config, methods, 0)?;
    let (_, _, built) = t.build(0)?;
    Ok(built.into_iter().map(|(m, s, _, _)| (m, s)).collect())
}

/// Runs every trial of `config`, in parallel over the available cores.
/// Output order and values do not depend on the worker count.
pub fn run_slow_time(config: &ScenarioConfig, methods: &[Method]) -> Result<ResultTable> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    run_slow_time_with_workers(config, methods, workers)
}

pub fn run_slow_time_with_workers(config: &ScenarioConfig, methods: &[Method], workers: usize) -> Result<ResultTable> {
    config.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods given".into()));
    }
    let trials = config.monte_carlo_trials;
    let workers = workers.clamp(1, trials.max(1));
    let mut slots: Vec<Option<Result<ResultTable>>> = (0..trials).map(|_| None).collect();
    if workers == 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_trial(config, methods, i));
        }
    } else {
        let chunks: Vec<Vec<(usize, Result<ResultTable>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        (w..trials)
                            .step_by(workers)
                            .map(|i| (i, run_trial(config, methods, i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("trial worker panicked")).collect()
        });
        for (i, r) in chunks.into_iter().flatten() {
            slots[i] = Some(r);
        }
    }
    let mut table = ResultTable::default();
    for slot in slots {
        table.extend(slot.expect("every trial ran")?);
    }
    Ok(table)
}

/// One swept parameter with its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<f64>,
}

/// Parses `name=v1,v2,...`.
pub fn parse_axis(spec: &str) -> Result<SweepAxis> {
    let (name, vals) = spec
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("axis `{spec}` is not name=v1,v2,...")))?;
    let values = vals
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("axis value `{v}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() || name.trim().is_empty() {
        return Err(Error::Parse(format!("empty axis `{spec}`")));
    }
    Ok(SweepAxis {
        name: name.trim().to_string(),
        values,
    })
}

/// Config with one axis value applied; `snr_db` sets the noise power.
pub fn apply_axis_value(config: &ScenarioConfig, name: &str, value: f64) -> Result<ScenarioConfig> {
    if matches!(name, "snr_db" | "snr") {
        let mut c = config.clone();
        c.set_snr_db(value);
        c.validate()?;
        return Ok(c);
    }
    let literal = if value.fract() == 0.0 && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value}")
    };
    with_overrides(config, &[format!("{name}={literal}")])
}

/// A grid point of a sweep and its results.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub params: Vec<(String, f64)>,
    pub table: ResultTable,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// All grid points of `axes` (first axis slowest).
pub fn grid_points(axes: &[SweepAxis]) -> Vec<Vec<(String, f64)>> {
    let mut points: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((axis.name.clone(), v));
                    q
                })
            })
            .collect();
    }
    points
}

/// Cross-product sweep. Each point gets its own seed derived from the
/// master seed and the point index.
pub fn sweep(config: &ScenarioConfig, axes: &[SweepAxis], methods: &[Method]) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for (i, params) in grid_points(axes).into_iter().enumerate() {
        let mut c = config.clone();
        for (name, v) in &params {
            c = apply_axis_value(&c, name, *v)?;
        }
        c.rng_seed = splitmix64(config.rng_seed ^ (i as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)) >> 1;
        log::info!("sweep point {i}: {params:?}");
        let table = run_slow_time(&c, methods)?;
        out.push(SweepPoint { params, table });
    }
    Ok(out)
}

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 22] = [
    "trial",
    "slow_time",
    "group",
    "user",
    "method",
    "alpha",
    "beta",
    "sigma_est_deg",
    "nq",
    "rank",
    "snr_db",
    "sinr_db",
    "p_signal",
    "p_interference_noise",
    "p_sicee",
    "p_isi",
    "p_mui",
    "p_igi",
    "p_noise",
    "n_delta_p",
    "complexity",
    "nmse",
];

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `#schema_version=1`, the header row and one row per record.
pub fn emit_csv<W: Write + ?Sized>(table: &ResultTable, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "#schema_version={CSV_SCHEMA_VERSION}")?;
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    for r in &table.records {
        let t = r.terms;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.slow_time,
            r.group,
            r.user,
            r.method,
            r.alpha,
            r.beta,
            r.sigma_est_deg,
            r.nq,
            r.rank,
            r.snr_db,
            r.sinr_db,
            r.p_signal,
            r.p_interference_noise,
            opt(t.map(|t| t[0])),
            opt(t.map(|t| t[1])),
            opt(t.map(|t| t[2])),
            opt(t.map(|t| t[3])),
            opt(t.map(|t| t[4])),
            opt(r.n_delta_p),
            opt(r.complexity),
            opt(r.nmse),
        )?;
    }
    Ok(())
}

/// Writes the CSV to `path`.
pub fn emit_csv_file(table: &ResultTable, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    emit_csv(table, &mut f).map_err(io)?;
    f.flush().map_err(io)
}

/// Aggregate over trials of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub series: usize,
    /// Mean over `(trial, user)` of the slow-time-averaged SINR, dB.
    pub mean_sinr_db: f64,
    /// Fraction of slow-time-averaged SINRs below the threshold.
    pub outage: f64,
    pub mean_n_delta_p: Option<f64>,
    pub mean_complexity: Option<f64>,
    pub mean_nmse: Option<f64>,
}

pub fn summarize(table: &ResultTable, methods: &[Method], burn_in: usize, threshold_db: f64) -> Result<Vec<MethodSummary>> {
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let series = table.sinr_series(m);
        let avgs = series
            .values()
            .map(|s| slow_time_average_db(s, burn_in))
            .collect::<Result<Vec<_>>>()?;
        if avgs.is_empty() {
            continue;
        }
        let rows = || table.records.iter().filter(move |r| r.method == m);
        out.push(MethodSummary {
            method: m,
            series: avgs.len(),
            mean_sinr_db: avgs.iter().sum::<f64>() / avgs.len() as f64,
            outage: outage_probability(&avgs, threshold_db)?,
            mean_n_delta_p: table.mean_n_delta_p(m),
            mean_complexity: mean(rows().filter_map(|r| r.complexity.map(|c| c as f64))),
            mean_nmse: mean(rows().filter_map(|r| r.nmse)),
        });
    }
    Ok(out)
}
