//! Convergence diagnostics and posterior summaries.
//!
//! Both statistics work on split chains: every chain is halved so that
//! within-chain drift shows up as between-half disagreement. The effective
//! sample size estimator truncates the combined autocorrelation sequence
//! with Geyer's initial-positive-sequence rule (pair sums of consecutive
//! autocorrelations kept while positive, made monotone), and is capped at
//! N*log10(N). Strongly antithetic chains, where the truncated sum turns
//! non-positive, report the cap.

use crate::sampler::DrawsMatrix;
use crate::stats;

/// Summary line for one parameter. `rhat`/`n_eff` are `None` when the
/// draws are degenerate (zero variance).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub param: String,
    pub rhat: Option<f64>,
    pub n_eff: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

/// Which parameters a summary covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamSelection {
    /// The reported table: coefficients, nu and sigma_y.
    Default,
    /// Every stored column, latent blocks included.
    All,
    Named(Vec<String>),
}

/// Halves every chain, dropping the middle draw of odd-length chains.
fn split_halves(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut halves = Vec::with_capacity(chains.len() * 2);
    for chain in chains {
        let n = chain.len();
        let half = n / 2;
        if half == 0 {
            continue;
        }
        halves.push(&chain[..half]);
        halves.push(&chain[n - half..]);
    }
    halves
}

/// Split potential scale reduction factor. `None` when every half-chain
/// has zero variance (the statistic is undefined).
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let halves = split_halves(chains);
    if halves.len() < 2 {
        return None;
    }
    let n = halves.iter().map(|h| h.len()).min()?;
    if n < 2 {
        return None;
    }
    let means: Vec<f64> = halves.iter().map(|h| stats::mean(&h[..n])).collect();
    let vars: Vec<f64> = halves.iter().map(|h| stats::sample_variance(&h[..n])).collect();
    let w = stats::mean(&vars);
    if !(w > 0.0) {
        return None;
    }
    let b_over_n = stats::sample_variance(&means);
    let n = n as f64;
    let var_plus = (n - 1.0) / n * w + b_over_n;
    Some((var_plus / w).sqrt())
}

/// Biased (1/n) autocovariance of one series at the given lag.
fn autocov(xs: &[f64], mean: f64, lag: usize) -> f64 {
    let n = xs.len();
    if lag >= n {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n - lag {
        acc += (xs[i] - mean) * (xs[i + lag] - mean);
    }
    acc / n as f64
}

/// Effective sample size across split chains. `None` on degenerate input.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Option<f64> {
    let halves = split_halves(chains);
    if halves.len() < 2 {
        return None;
    }
    let n = halves.iter().map(|h| h.len()).min()?;
    if n < 4 {
        return None;
    }
    let halves: Vec<&[f64]> = halves.iter().map(|h| &h[..n]).collect();
    let m = halves.len();
    let means: Vec<f64> = halves.iter().map(|h| stats::mean(h)).collect();
    let acov0: Vec<f64> = halves
        .iter()
        .zip(&means)
        .map(|(h, &mu)| autocov(h, mu, 0))
        .collect();
    let mean_acov0 = stats::mean(&acov0);
    if !(mean_acov0 > 0.0) {
        return None;
    }
    let nf = n as f64;
    let w = mean_acov0 * nf / (nf - 1.0);
    let var_plus = mean_acov0 + stats::sample_variance(&means);

    let rho = |lag: usize| -> f64 {
        let ac: f64 = halves
            .iter()
            .zip(&means)
            .map(|(h, &mu)| autocov(h, mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (w - ac) / var_plus
    };

    // Geyer pairs: keep while positive, force monotone non-increasing.
    let mut tau_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau_pairs += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = 2.0 * tau_pairs - 1.0;
    let total = (m * n) as f64;
    let cap = total * total.log10();
    if tau <= 0.0 {
        return Some(cap);
    }
    Some((total / tau).min(cap))
}

/// Resolves a selection against the stored parameter names, preserving
/// the reported-table order for the default set.
pub fn select_params(draws: &DrawsMatrix, selection: &ParamSelection) -> Vec<usize> {
    match selection {
        ParamSelection::Default => ["b_home", "b_prev", "b_atten", "b_effort", "b_day", "nu", "sigma_y"]
            .iter()
            .filter_map(|name| draws.param_index(name))
            .collect(),
        ParamSelection::All => (0..draws.n_params()).collect(),
        ParamSelection::Named(names) => names
            .iter()
            .filter_map(|name| draws.param_index(name))
            .collect(),
    }
}

/// One summary row per selected parameter; quantiles by linear
/// interpolation over the pooled post-warmup draws.
pub fn summarize(draws: &DrawsMatrix, selection: &ParamSelection) -> Vec<SummaryRow> {
    select_params(draws, selection)
        .into_iter()
        .map(|p| {
            let per_chain = draws.per_chain(p);
            let pooled = draws.pooled(p);
            let mut sorted = pooled.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
            let sd = if pooled.len() > 1 {
                stats::sample_sd(&pooled)
            } else {
                0.0
            };
            SummaryRow {
                param: draws.names()[p].clone(),
                rhat: split_rhat(&per_chain),
                n_eff: effective_sample_size(&per_chain),
                mean: stats::mean(&pooled),
                sd,
                q025: stats::quantile(&sorted, 0.025),
                q500: stats::quantile(&sorted, 0.5),
                q975: stats::quantile(&sorted, 0.975),
            }
        })
        .collect()
}

/// Summary CSV (`param,rhat,n_eff,mean,sd,q025,q500,q975`); undefined
/// diagnostics are written as NA.
pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("param,rhat,n_eff,mean,sd,q025,q500,q975\n");
    let fmt_opt = |v: Option<f64>| match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    };
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            crate::csvio::escape(&r.param),
            fmt_opt(r.rhat),
            fmt_opt(r.n_eff),
            r.mean,
            r.sd,
            r.q025,
            r.q500,
            r.q975
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn iid_chains(nchains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..nchains)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    fn ar1_chains(nchains: usize, n: usize, phi: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stat_sd = (1.0 / (1.0 - phi * phi)).sqrt();
        (0..nchains)
            .map(|_| {
                let mut x = vec![0.0; n];
                x[0] = rng.sample::<f64, _>(StandardNormal) * stat_sd;
                for t in 1..n {
                    x[t] = phi * x[t - 1] + rng.sample::<f64, _>(StandardNormal);
                }
                x
            })
            .collect()
    }

    #[test]
    fn rhat_near_one_for_iid() {
        let rhat = split_rhat(&iid_chains(4, 1000, 1)).unwrap();
        assert!((0.99..=1.02).contains(&rhat), "rhat {rhat}");
    }

    #[test]
    fn rhat_large_for_disagreeing_chains() {
        let mut chains = iid_chains(2, 1000, 2);
        for v in &mut chains[1] {
            *v += 10.0;
        }
        let rhat = split_rhat(&chains).unwrap();
        assert!(rhat > 3.0, "rhat {rhat}");
    }

    #[test]
    fn rhat_undefined_for_constant_draws() {
        let chains = vec![vec![2.0; 100], vec![2.0; 100]];
        assert_eq!(split_rhat(&chains), None);
        assert_eq!(effective_sample_size(&chains), None);
    }

    #[test]
    fn rhat_detects_within_chain_drift() {
        // a single chain whose halves disagree
        let chain: Vec<f64> = (0..1000).map(|i| if i < 500 { 0.0 } else { 8.0 }).collect();
        let noisy: Vec<f64> = chain
            .iter()
            .enumerate()
            .map(|(i, v)| v + (i as f64 * 0.7).sin() * 0.1)
            .collect();
        let rhat = split_rhat(&[noisy]).unwrap();
        assert!(rhat > 3.0, "rhat {rhat}");
    }

    #[test]
    fn ess_of_iid_draws_is_near_total() {
        let ess = effective_sample_size(&iid_chains(4, 1000, 3)).unwrap();
        assert!((3000.0..=5000.0).contains(&ess), "ess {ess}");
    }

    #[test]
    fn ess_matches_ar1_closed_form() {
        for &phi in &[0.5, 0.9] {
            let n_total = 4000.0;
            let expected = n_total * (1.0 - phi) / (1.0 + phi);
            let ess = effective_sample_size(&ar1_chains(4, 1000, phi, 17)).unwrap();
            let rel = (ess - expected).abs() / expected;
            assert!(rel < 0.3, "phi {phi}: ess {ess} expected {expected}");
        }
    }

    #[test]
    fn ess_superefficient_for_antithetic_chain() {
        // perfectly alternating series: negative autocorrelation at lag 1
        let n = 1000;
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|c| {
                (0..n)
                    .map(|i| if (i + c) % 2 == 0 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        let total = (2 * n) as f64;
        let ess = effective_sample_size(&chains).unwrap();
        assert!(ess > total, "ess {ess} should exceed {total}");
    }

    #[test]
    fn summary_of_constant_param() {
        let names = vec!["c".to_string()];
        let draws = DrawsMatrix::new(names, 2, 50, vec![3.25; 100]);
        let rows = summarize(&draws, &ParamSelection::All);
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.mean, 3.25);
        assert_eq!(r.sd, 0.0);
        assert_eq!(r.q025, 3.25);
        assert_eq!(r.q500, 3.25);
        assert_eq!(r.q975, 3.25);
        assert_eq!(r.rhat, None);
        assert_eq!(r.n_eff, None);
    }

    #[test]
    fn summary_median_interpolates() {
        let names = vec!["x".to_string()];
        let data: Vec<f64> = (1..=100).map(f64::from).collect();
        let draws = DrawsMatrix::new(names, 1, 100, data);
        let rows = summarize(&draws, &ParamSelection::All);
        assert!((rows[0].q500 - 50.5).abs() < 1e-12);
    }

    #[test]
    fn default_selection_mirrors_reported_table_order() {
        let names: Vec<String> = [
            "b_home", "b_prev", "b_effort", "b_atten", "b_day", "nu", "sigma_y", "sigma_a[1]",
            "eta[1,1]", "a[1,1]",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let n_params = names.len();
        let draws = DrawsMatrix::new(names, 1, 2, vec![1.0; 2 * n_params]);
        let rows = summarize(&draws, &ParamSelection::Default);
        let order: Vec<&str> = rows.iter().map(|r| r.param.as_str()).collect();
        assert_eq!(
            order,
            vec!["b_home", "b_prev", "b_atten", "b_effort", "b_day", "nu", "sigma_y"]
        );
    }

    #[test]
    fn summary_csv_marks_undefined_as_na() {
        let names = vec!["c".to_string()];
        let draws = DrawsMatrix::new(names, 2, 50, vec![1.0; 100]);
        let csv = summary_to_csv(&summarize(&draws, &ParamSelection::All));
        assert!(csv.lines().nth(1).unwrap().starts_with("c,NA,NA,1,0,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn diagnostics_affine_invariant(a in 0.25f64..4.0, b in -10.0f64..10.0, neg: bool, seed in 0u64..100) {
            let a = if neg { -a } else { a };
            let chains = ar1_chains(3, 400, 0.4, seed);
            let mapped: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| c.iter().map(|x| a * x + b).collect())
                .collect();
            let r0 = split_rhat(&chains).unwrap();
            let r1 = split_rhat(&mapped).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-9 * r0.max(1.0));
            let e0 = effective_sample_size(&chains).unwrap();
            let e1 = effective_sample_size(&mapped).unwrap();
            prop_assert!((e0 - e1).abs() < 1e-6 * e0);
        }

        #[test]
        fn summary_quantiles_monotone(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let draws = DrawsMatrix::new(vec!["x".to_string()], 1, 200, data);
            let r = &summarize(&draws, &ParamSelection::All)[0];
            prop_assert!(r.q025 <= r.q500 && r.q500 <= r.q975);
        }
    }
}
