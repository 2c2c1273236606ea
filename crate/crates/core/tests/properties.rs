mod common;

use common::*;
use hybridbeam::patch::patch_width;
use hybridbeam::small_preset;
use proptest::prelude::*;

fn ok(c: Check) -> Result<(), TestCaseError> {
    c.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scenario_overrides_roundtrip(
        alpha in 0.01f64..0.9999,
        beta in 0.0f64..1.0,
        nq in 1usize..8,
        rank in 1usize..4,
        seed in 0..=i64::MAX as u64,
        snr in -10.0f64..40.0,
    ) {
        let mut cfg = small_preset();
        cfg.mobility_alpha = alpha;
        cfg.recursion_beta = beta;
        cfg.quantizer_depth = nq;
        cfg.d_rank = rank;
        cfg.rng_seed = seed;
        cfg.set_snr_db(snr);
        ok(scenario_roundtrip(&cfg))?;
    }

    #[test]
    fn ccm_hermitian_psd_unit_trace(
        mu in -2.5f64..2.5,
        sigma in 0.01f64..1.0,
        n in 2usize..48,
    ) {
        ok(ccm_is_valid(mu, sigma, n))?;
    }

    #[test]
    fn quantizer_is_idempotent(
        levels in prop::collection::vec(0.0f64..0.2, 1..40),
        h in 0.001f64..0.1,
        nq in 1usize..6,
    ) {
        ok(quantizer_idempotent(&levels, h, nq))?;
    }

    #[test]
    fn patch_mass_is_conserved(
        mu in -2.5f64..2.5,
        spread_patches in 0.5f64..6.0,
        mass in 0.01f64..10.0,
        n in 8usize..64,
        nq in 1usize..6,
    ) {
        ok(patch_mass(mu, spread_patches * patch_width(n), mass, n, nq))?;
    }

    #[test]
    fn geb_pairs_satisfy_pencil(
        mu1 in -1.0f64..1.0,
        s1 in 0.05f64..0.5,
        mu2 in -1.0f64..1.0,
        s2 in 0.05f64..0.5,
        inr in 0.1f64..100.0,
    ) {
        ok(geb_residual(24, mu1, s1, mu2, s2, inr))?;
    }

    #[test]
    fn geb_ignores_ccm_scale(
        mu1 in -1.0f64..1.0,
        s1 in 0.05f64..0.5,
        mu2 in -1.0f64..1.0,
        s2 in 0.05f64..0.5,
        scale in 1e-3f64..1e3,
    ) {
        ok(geb_scale_invariance(24, mu1, s1, mu2, s2, scale))?;
    }

    #[test]
    fn wiener_full_rank_matches_direct_inverse(
        mu in -3.0f64..3.0,
        n in 4usize..24,
        seed in any::<u64>(),
    ) {
        ok(wiener_matches_suboptimal(n, mu, seed))?;
    }

    #[test]
    fn szf_removes_lag_zero_crosstalk(group in 1usize..4, seed in any::<u64>()) {
        ok(szf_zero_forcing(&small_preset(), group, seed))?;
    }

    #[test]
    fn cmf_powers_are_consistent(group in 0usize..4, snr in -10.0f64..40.0) {
        let mut cfg = small_preset();
        cfg.set_snr_db(snr);
        ok(cmf_power_bookkeeping(&cfg, group))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn woodbury_tracks_dense_inverse(r in 1usize..4, nq in 1usize..4, seed in any::<u64>()) {
        let (rel, id) = woodbury_sequence(32, r, nq, 12, seed).map_err(TestCaseError::fail)?;
        prop_assert!(rel <= 1e-7, "relative error {rel:e}");
        prop_assert!(id <= 1e-7, "identity residual {id:e}");
    }

    #[test]
    fn mmse_beats_perturbed_estimators(t_len in 4usize..10, seed in any::<u64>()) {
        let mut cfg = small_preset();
        cfg.num_antennas = 16;
        ok(mmse_is_optimal(&cfg, t_len, seed, 12))?;
    }

    #[test]
    fn nmse_invariant_under_rotation(t_len in 4usize..10, seed in any::<u64>()) {
        let mut cfg = small_preset();
        cfg.num_antennas = 16;
        ok(nmse_rotation_invariant(&cfg, t_len, seed))?;
    }
}

#[test]
fn mobility_is_stationary() {
    for alpha in [0.9, 0.99, 0.999, 0.9999] {
        mobility_stationary_std(alpha, 4000, 10, 7, 0.05).unwrap();
    }
}

#[test]
fn channel_draws_match_ccm() {
    sampling_second_moment(16, 20_000, 3, 0.05).unwrap();
}

#[test]
fn nmse_falls_with_snr() {
    let mut cfg = small_preset();
    cfg.num_antennas = 16;
    let v = nmse_vs_snr(&cfg, 6, &[0.0, 10.0, 20.0, 30.0], 5).unwrap();
    assert!(non_increasing(&v, 1e-12), "{v:?}");
}

#[test]
fn beam_patterns_point_at_own_mpcs() {
    beam_pattern_sanity(&small_preset()).unwrap();
}

#[test]
fn output_powers_add_up() {
    for group in 0..4 {
        power_bookkeeping(&small_preset(), group, 40, 11 + group as u64).unwrap();
    }
}
