//! Censored sieve fit at the application's sample size, against data drawn
//! from a known sieve model.

use auction_uh::dist::{beta_pdf, BetaParams, ConditionalFamily};
use auction_uh::estimate::{fit_censored, FitConfig};
use auction_uh::order_stats::CensoredAuctionObs;
use auction_uh::sieve::{SieveModel, SieveWeights};
use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

const RESERVE: f64 = 0.7;

fn truth() -> SieveWeights {
    SieveWeights::from_theta(vec![vec![0.05, 0.05, 0.02], vec![0.20, 0.10, 0.05], vec![0.08, 0.15, 0.30]]).unwrap()
}

/// Draws one value profile: `tau` from the UH marginal, then each value from
/// the mixture of bid bases loaded at `tau`.
fn draw_values(w: &SieveWeights, count: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = w.p_m;
    let basis = |k: usize| Beta::new((k + 1) as f64, (p - k) as f64).unwrap();
    let j = WeightedIndex::new(&w.w1).unwrap().sample(rng);
    let tau = basis(j).sample(rng);
    let beta_tau: Vec<f64> =
        (0..p).map(|k| beta_pdf(&BetaParams::new((k + 1) as f64, (p - k) as f64).unwrap(), tau)).collect();
    let mix = WeightedIndex::new(w.loadings(&beta_tau)).unwrap();
    let mut v: Vec<f64> = (0..count).map(|_| basis(mix.sample(rng)).sample(rng)).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn simulate(w: &SieveWeights, m: usize, seed: u64) -> Vec<CensoredAuctionObs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // bidder counts spread over 1..=10, heavier in the middle
    let n_weights = [1.0, 2.0, 4.0, 6.0, 7.0, 7.0, 6.0, 4.0, 2.0, 1.0];
    let n_dist = WeightedIndex::new(n_weights).unwrap();
    (0..m)
        .map(|id| {
            let potential = n_dist.sample(&mut rng) as u32 + 1;
            let active: Vec<f64> = draw_values(w, potential, &mut rng).into_iter().filter(|&v| v >= RESERVE).collect();
            let bids = match active.len() {
                0 => Vec::new(),
                1 => vec![RESERVE],
                k => active[..k - 1].to_vec(),
            };
            CensoredAuctionObs { id: id as u64, n: active.len() as u32, bids, potential, reserve: RESERVE }
        })
        .collect()
}

#[test]
fn censored_fit_recovers_conditional_cdfs_above_reserve() {
    let w = truth();
    let data = simulate(&w, 477, 20);
    let fit = fit_censored(&data, &FitConfig { p_m: 3, n_starts: 4, ..FitConfig::censored_default() }).unwrap();
    let est = SieveModel::from_params(&fit.params);
    let true_model = w.model();
    for tau in [0.25, 0.5, 0.75] {
        let err = (0..=60)
            .map(|k| RESERVE + (1.0 - RESERVE) * k as f64 / 60.0)
            .map(|x| (est.cond_cdf(x, tau) - true_model.cond_cdf(x, tau)).abs())
            .fold(0.0, f64::max);
        println!("tau {tau}: sup |F_hat - F| on [R, 1] = {err:.4}");
        assert!(err <= 0.1, "tau = {tau}: sup error {err}");
    }
}
