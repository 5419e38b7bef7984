//! Property-based checks of the invariants that hold across modules.

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sr_precoding::analysis::{
    efficiency, prob_perfect_sideinfo, ser_estimate, AnalysisInput, SinrForm,
};
use sr_precoding::channel::{draw_channel_set, ChannelSet, Dims, ErrorStats};
use sr_precoding::codebook::{random_unitary, Codebook, CodebookMethod};
use sr_precoding::design::{
    default_initial_precoder, design_pair, design_pair_with, relay_power, DesignContext,
    DesignInput, DesignParams, PrecodingPair,
};
use sr_precoding::linalg::{
    c, frobenius_sq, identity, solve_hpd, unitarity_residual, ComplexMatrix,
};
use sr_precoding::link_sim::draw_block;
use sr_precoding::modulation::{qpsk_demod, qpsk_mod};
use sr_precoding::quantizer::train_beta_quantizer;
use sr_precoding::selection::select_pair;
use sr_precoding::sideinfo::{bsc, from_bits, sideinfo_channel, to_bits};

fn channels(n: usize, sigma_e_sq: f64, theta: f64, noise: f64, seed: u64) -> ChannelSet {
    let dims = Dims::square(n);
    let stats = Arc::new(ErrorStats::exponential(dims, sigma_e_sq, theta, theta, false).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_channel_set(dims, &stats, (noise, noise), &mut rng).unwrap()
}

fn pairs_for(cs: &ChannelSet, cb: &Codebook) -> Vec<Option<PrecodingPair>> {
    let n = cs.dims().k;
    cb.entries()
        .iter()
        .enumerate()
        .map(|(l, t)| {
            design_pair(
                &DesignInput::from_channels(cs, t, DesignParams::for_users(n)),
                &default_initial_precoder(n, n),
                l,
            )
            .ok()
        })
        .collect()
}

/// The alternating design written out directly for perfect CSI.
fn plain_design(cs: &ChannelSet, t: &ComplexMatrix, params: DesignParams) -> ComplexMatrix {
    let k = cs.dims().k as f64;
    let nr = cs.dims().nr as f64;
    let heq = &cs.h2_hat * t * &cs.h1_hat;
    let g = heq.adjoint();
    let q = &g * &heq;
    let r = cs.h1_hat.adjoint() * &cs.h1_hat;
    let x = frobenius_sq(&cs.h2_hat);
    let (s1, s2) = (cs.sigma1_sq, cs.sigma2_sq);
    let quad = |p: &ComplexMatrix, a: &ComplexMatrix| (p.adjoint() * a * p).trace().re;
    let scale = |p: &ComplexMatrix| p * c((params.pt / frobenius_sq(p)).sqrt(), 0.0);
    let mut p = scale(&default_initial_precoder(cs.dims().nt, cs.dims().k));
    if (&heq * &p).trace().re < 0.0 {
        p = -p;
    }
    let settle = |p: &ComplexMatrix| {
        let s = (&heq * p).trace().re;
        let o1 = quad(p, &q) + s1 * x;
        let o2 = quad(p, &r) + s1 * nr;
        let lambda = ((s * (o2 / params.pr).sqrt() - o1) / o2).max(0.0);
        (lambda, s / (o1 + lambda * o2))
    };
    let (mut lambda, mut beta) = settle(&p);
    let mut beta_prev = {
        let s = (&heq * &p).trace().re;
        s / (quad(&p, &q) + s1 * x)
    };
    for _ in 0..params.max_iter {
        let b2 = beta * beta;
        let a = &q * c(b2, 0.0)
            + identity(q.nrows()) * c((b2 * s1 * x + k * s2) / params.pt, 0.0)
            + &r * c(lambda * b2, 0.0);
        let next = scale(&(solve_hpd(&a, &g).unwrap() * c(beta, 0.0)));
        let dp = frobenius_sq(&(&next - &p));
        let db = (beta - beta_prev).powi(2);
        beta_prev = beta;
        p = next;
        (lambda, beta) = settle(&p);
        if dp <= params.eps && db <= params.eps {
            break;
        }
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn haar_unitaries_are_unitary(n in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(unitarity_residual(&random_unitary(n, &mut rng).unwrap()) < 1e-10);
    }

    #[test]
    fn codebooks_are_unitary_and_round_trip(n in 1usize..5, bits in 0u32..4, seed in any::<u64>()) {
        let cb = Codebook::random(n, bits, seed).unwrap();
        prop_assert!(cb.max_unitarity_residual() < 1e-10);
        let back = Codebook::from_text(&cb.to_text()).unwrap();
        prop_assert_eq!(back.len(), cb.len());
        prop_assert_eq!(back.seed(), Some(seed));
        for (a, b) in back.entries().iter().zip(cb.entries()) {
            prop_assert!((a - b).norm() == 0.0);
        }
    }

    #[test]
    fn designs_meet_power_constraints(
        n in 2usize..4,
        se in prop::sample::select(vec![0.0, 0.002, 0.006]),
        snr in 0.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let noise = n as f64 / 10f64.powf(snr / 10.0);
        let cs = channels(n, se, 0.0, noise, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let t = random_unitary(n, &mut rng).unwrap();
        let params = DesignParams::for_users(n);
        let ctx = DesignContext::new(&DesignInput::from_channels(&cs, &t, params)).unwrap();
        let pair = design_pair_with(&ctx, &default_initial_precoder(n, n), 0).unwrap();
        prop_assert!((frobenius_sq(&pair.p) - params.pt).abs() < 1e-8);
        let rp = relay_power(&ctx, &pair.p, pair.beta);
        prop_assert!(rp <= params.pr + 1e-6);
        prop_assert!((pair.lambda * (rp - params.pr)).abs() < 1e-6 * params.pr);
        prop_assert!(pair.lambda >= 0.0 && pair.beta > 0.0);
    }

    #[test]
    fn perfect_csi_design_matches_plain_iteration(
        n in 2usize..4,
        theta in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let cs = channels(n, 0.0, theta, 0.2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let t = random_unitary(n, &mut rng).unwrap();
        let params = DesignParams::for_users(n);
        let pair = design_pair(
            &DesignInput::from_channels(&cs, &t, params),
            &default_initial_precoder(n, n),
            0,
        )
        .unwrap();
        prop_assume!(pair.converged);
        let plain = plain_design(&cs, &t, params);
        prop_assert!((&pair.p - plain).norm() < 1e-9);
    }

    #[test]
    fn selection_is_a_true_minimum(seed in any::<u64>(), bits in 1u32..4) {
        let cs = channels(2, 0.002, 0.0, 0.2, seed);
        let cb = Codebook::random(2, bits, seed).unwrap();
        let pairs = pairs_for(&cs, &cb);
        prop_assume!(pairs.iter().any(Option::is_some));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (block, _) = draw_block(2, 10, &mut rng);
        let sel = select_pair(&pairs, &cb, &cs.h1_hat, &cs.h2_hat, &block, None, 0).unwrap();
        for &d in &sel.distances {
            prop_assert!(d >= 0.0);
            prop_assert!(sel.distances[sel.l_opt] <= d);
        }
    }

    #[test]
    fn selection_follows_permutation_and_growth(seed in any::<u64>()) {
        let cs = channels(2, 0.002, 0.0, 0.2, seed);
        let cb = Codebook::random(2, 2, seed).unwrap();
        let pairs = pairs_for(&cs, &cb);
        prop_assume!(pairs.iter().all(Option::is_some));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (block, _) = draw_block(2, 10, &mut rng);
        let base = select_pair(&pairs, &cb, &cs.h1_hat, &cs.h2_hat, &block, None, 0).unwrap();

        let order = [2usize, 0, 3, 1];
        let entries: Vec<_> = order.iter().map(|&i| cb.entry(i).clone()).collect();
        let permuted = Codebook::new(entries, 2, CodebookMethod::Random, None).unwrap();
        let ppairs: Vec<_> = order.iter().map(|&i| pairs[i].clone()).collect();
        let sel = select_pair(&ppairs, &permuted, &cs.h1_hat, &cs.h2_hat, &block, None, 0).unwrap();
        prop_assert_eq!(order[sel.l_opt], base.l_opt);

        // The first half of the codebook can only do worse.
        let half = Codebook::new(cb.entries()[..2].to_vec(), 1, CodebookMethod::Random, None).unwrap();
        let hsel = select_pair(&pairs[..2], &half, &cs.h1_hat, &cs.h2_hat, &block, None, 0).unwrap();
        prop_assert!(hsel.distances[hsel.l_opt] >= base.distances[base.l_opt]);
    }

    #[test]
    fn quantizer_levels_are_sorted_and_nearest(
        samples in prop::collection::vec(0.01f64..10.0, 40..200),
        bits in 1u32..5,
        probe in 0.0f64..12.0,
    ) {
        let q = train_beta_quantizer(bits, &samples).unwrap();
        prop_assert!(q.codepoints.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(q.codepoints.len() <= 1 << bits);
        let (i, v) = q.quantize(probe);
        prop_assert_eq!(q.value(i), v);
        for &cp in &q.codepoints {
            prop_assert!((probe - v).abs() <= (probe - cp).abs());
        }
    }

    #[test]
    fn bits_and_symbols_round_trip(value in 0usize..4096, raw in prop::collection::vec(0u8..2, 0..20)) {
        prop_assert_eq!(from_bits(&to_bits(value, 12)), value);
        let bits: Vec<u8> = raw.iter().copied().take(raw.len() / 2 * 2).collect();
        prop_assert_eq!(qpsk_demod(&qpsk_mod(&bits).unwrap()), bits.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(value as u64);
        prop_assert_eq!(bsc(&bits, 0.0, &mut rng).unwrap(), bits.clone());
        let flipped: Vec<u8> = bits.iter().map(|b| 1 - b).collect();
        prop_assert_eq!(bsc(&bits, 1.0, &mut rng).unwrap(), flipped);
    }

    #[test]
    fn ser_estimate_is_monotone(g1 in 0.1f64..5.0, dg in 0.0f64..5.0, pb in 0.0f64..0.4, dpb in 0.0f64..0.1, bits in 0u32..8) {
        let make = |g: f64| AnalysisInput {
            p: identity(2),
            beta: 1.0,
            l_opt: 0,
            h_bar: identity(2) * c(g, 0.0),
            h2: identity(2),
            sigma1_sq: 0.0,
            sigma2_sq: 1.0,
            bits,
            beta_bits: 0,
            gamma: 0.0,
        };
        let lo = ser_estimate(&make(g1), pb, SinrForm::Corrected).unwrap();
        let hi_g = ser_estimate(&make(g1 + dg), pb, SinrForm::Corrected).unwrap();
        let hi_pb = ser_estimate(&make(g1), pb + dpb, SinrForm::Corrected).unwrap();
        prop_assert!(hi_g <= lo + 1e-15);
        prop_assert!(hi_pb >= lo - 1e-15);
    }

    #[test]
    fn efficiency_is_monotone(k in 1usize..8, m in 1usize..20, b in 0u32..8, cbits in 0u32..8) {
        let e = efficiency(k, m, 4, b, cbits).unwrap();
        prop_assert!(efficiency(k, m, 4, b + 1, cbits).unwrap() < e);
        prop_assert!(efficiency(k, m, 4, b, cbits + 1).unwrap() < e);
        prop_assert!(efficiency(k, m + 1, 4, b, cbits).unwrap() >= e);
    }
}

#[test]
fn analytic_side_information_matches_the_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for pe in [0.01, 0.05, 0.2] {
        let n = 40_000;
        let ok = (0..n)
            .filter(|_| {
                sideinfo_channel(5, 6, 3, 6, pe, &mut rng)
                    .unwrap()
                    .all_correct
            })
            .count();
        let p = prob_perfect_sideinfo(pe, 12);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((ok as f64 / n as f64 - p).abs() < 3.0 * se, "pe {pe}");
    }
}

#[test]
fn channel_draws_are_deterministic() {
    let a = channels(3, 0.006, 0.3, 0.1, 5);
    let b = channels(3, 0.006, 0.3, 0.1, 5);
    assert_eq!(a.h1_hat, b.h1_hat);
    assert_eq!(a.dh2, b.dh2);
}

#[test]
fn msc_is_deterministic() {
    use sr_precoding::codebook::{msc_design, MscConfig};
    let dims = Dims::square(2);
    let cfg = MscConfig {
        alpha: 8,
        experiments: 30,
        bits: 2,
        phi_budget: 16,
        dims,
        stats: Arc::new(ErrorStats::uncorrelated(dims, 0.002).unwrap()),
        noise: (0.2, 0.2),
        params: DesignParams::for_users(2),
        seed: 9,
    };
    let a = msc_design(&cfg).unwrap();
    let b = msc_design(&cfg).unwrap();
    assert_eq!(a.codebook, b.codebook);
    assert_eq!(a.histogram, b.histogram);
    assert!(a.codebook.max_unitarity_residual() < 1e-10);
}

#[test]
fn ser_falls_with_snr() {
    use sr_precoding::link_sim::{run_ser_experiment, SimConfig};
    let cfg = SimConfig {
        snr_db: vec![0.0, 5.0, 10.0, 15.0],
        n_blocks: 300,
        quantizer_training_draws: 200,
        ..SimConfig::for_dims(Dims::square(2))
    };
    let curve = run_ser_experiment(&cfg, &Codebook::random(2, 2, 1).unwrap()).unwrap();
    for w in curve.points.windows(2) {
        let slack = 2.0 * (w[0].half_width().powi(2) + w[1].half_width().powi(2)).sqrt();
        assert!(w[1].ser() <= w[0].ser() + slack, "{} dB", w[1].snr_db);
    }
}
