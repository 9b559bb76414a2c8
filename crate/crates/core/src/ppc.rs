//! Posterior predictive replication, residual-based outlier flagging, and
//! the performance-variance decomposition.

use rand::prelude::*;
use rand_distr::StudentT;
use rayon::prelude::*;
use serde::Serialize;

use crate::features::FeatureSet;
use crate::ingest::Dataset;
use crate::sampler::{stream_rng, DrawsMatrix};
use crate::stats;

#[derive(Debug, thiserror::Error)]
pub enum PpcError {
    #[error("draws are missing required parameter `{0}`")]
    MissingParam(String),
    #[error("draws and features disagree: {0}")]
    Dimension(String),
    #[error("luck decomposition needs at least 2 teams")]
    TooFewTeams,
    #[error("games per team must be >= 1")]
    NoGames,
}

/// Replicated standardized score differences: one row per replication,
/// one column per game, plus derived per-game p-values and per-replication
/// summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSet {
    pub n_reps: usize,
    pub n_games: usize,
    reps: Vec<f64>,
    pub observed: Vec<f64>,
    pub p_values: Vec<f64>,
    pub rep_means: Vec<f64>,
    pub rep_sds: Vec<f64>,
}

impl ReplicationSet {
    /// One replication across all games.
    pub fn replication(&self, r: usize) -> &[f64] {
        &self.reps[r * self.n_games..(r + 1) * self.n_games]
    }

    /// All replicated values for one game.
    pub fn for_game(&self, g: usize) -> Vec<f64> {
        (0..self.n_reps).map(|r| self.reps[r * self.n_games + g]).collect()
    }

    /// Posterior predictive mean for one game.
    pub fn pred_mean(&self, g: usize) -> f64 {
        stats::mean(&self.for_game(g))
    }

    /// Posterior predictive standard deviation for one game.
    pub fn pred_sd(&self, g: usize) -> f64 {
        stats::sample_sd(&self.for_game(g))
    }
}

/// Replicates every game from posterior draws: for each replication a
/// stored draw supplies (abilities, coefficients, nu, sigma_y) and a fresh
/// Student-t noise term is added. `n_reps = None` uses one replication per
/// stored draw; larger values cycle through the draws with fresh noise.
/// Deterministic given the seed, independent of thread schedule.
pub fn replicate_scores(
    draws: &DrawsMatrix,
    features: &FeatureSet,
    seed: u64,
    n_reps: Option<usize>,
) -> Result<ReplicationSet, PpcError> {
    let total_draws = draws.n_chains() * draws.n_draws();
    if total_draws == 0 {
        return Err(PpcError::Dimension("no stored draws".to_string()));
    }
    let n_games = features.ngames();
    let n_reps = n_reps.unwrap_or(total_draws);

    let need = |name: &str| {
        draws
            .param_index(name)
            .ok_or_else(|| PpcError::MissingParam(name.to_string()))
    };
    let i_home = need("b_home")?;
    let i_effort = need("b_effort")?;
    let i_atten = draws.param_index("b_atten");
    let i_day = draws.param_index("b_day");
    let i_nu = need("nu")?;
    let i_sigma = need("sigma_y")?;
    let nteams = features.nteams();
    let mut ability_idx = vec![0usize; features.nweeks * nteams];
    for w in 1..=features.nweeks {
        for t in 1..=nteams {
            ability_idx[(w - 1) * nteams + (t - 1)] = need(&format!("a[{w},{t}]"))?;
        }
    }
    for (g, obs) in features.observations.iter().enumerate() {
        if obs.home_idx >= nteams || obs.away_idx >= nteams {
            return Err(PpcError::Dimension(format!("game {g}: team index out of range")));
        }
    }

    let ability_idx = &ability_idx;
    let reps: Vec<f64> = (0..n_reps)
        .into_par_iter()
        .flat_map_iter(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let idx = r % total_draws;
            let row = draws.draw(idx / draws.n_draws(), idx % draws.n_draws());
            let nu = row[i_nu];
            let sigma_y = row[i_sigma];
            let t_dist = StudentT::new(nu).expect("positive nu in draws");
            features
                .observations
                .iter()
                .map(move |obs| {
                    let loc = row[ability_idx[(obs.home_week - 1) * nteams + obs.home_idx]]
                        - row[ability_idx[(obs.away_week - 1) * nteams + obs.away_idx]]
                        + row[i_effort] * obs.eff_diff()
                        + row[i_home]
                        + i_atten.map_or(0.0, |i| row[i] * obs.atten_value())
                        + i_day.map_or(0.0, |i| row[i] * obs.day_value());
                    loc + sigma_y * rng.sample::<f64, _>(&t_dist)
                })
                .collect::<Vec<f64>>()
        })
        .collect();

    let observed: Vec<f64> = features.observations.iter().map(|o| o.y).collect();
    let p_values: Vec<f64> = (0..n_games)
        .map(|g| {
            let col: Vec<f64> = (0..n_reps).map(|r| reps[r * n_games + g]).collect();
            ppc_pvalue(&col, observed[g])
        })
        .collect();
    let rep_means: Vec<f64> = (0..n_reps)
        .map(|r| stats::mean(&reps[r * n_games..(r + 1) * n_games]))
        .collect();
    let rep_sds: Vec<f64> = (0..n_reps)
        .map(|r| stats::sample_sd(&reps[r * n_games..(r + 1) * n_games]))
        .collect();

    Ok(ReplicationSet {
        n_reps,
        n_games,
        reps,
        observed,
        p_values,
        rep_means,
        rep_sds,
    })
}

/// Posterior predictive p-value: fraction of replications at or below the
/// observed value, with a mid-p correction for ties.
pub fn ppc_pvalue(replications: &[f64], observed: f64) -> f64 {
    let below = replications.iter().filter(|&&r| r < observed).count() as f64;
    let ties = replications.iter().filter(|&&r| r == observed).count() as f64;
    (below + 0.5 * ties) / replications.len() as f64
}

/// Which predictive tail an outlying game sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Observed far below the replications.
    Low,
    /// Observed far above the replications.
    High,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierFlag {
    /// 0-based game index.
    pub game: usize,
    pub p_value: f64,
    pub side: Side,
}

/// Games whose p-value falls outside [alpha, 1-alpha], most extreme first.
pub fn flag_outliers(reps: &ReplicationSet, alpha: f64) -> Vec<OutlierFlag> {
    let mut flags: Vec<OutlierFlag> = reps
        .p_values
        .iter()
        .enumerate()
        .filter_map(|(game, &p)| {
            if p < alpha {
                Some(OutlierFlag {
                    game,
                    p_value: p,
                    side: Side::Low,
                })
            } else if p > 1.0 - alpha {
                Some(OutlierFlag {
                    game,
                    p_value: p,
                    side: Side::High,
                })
            } else {
                None
            }
        })
        .collect();
    flags.sort_by(|a, b| {
        let ea = a.p_value.min(1.0 - a.p_value);
        let eb = b.p_value.min(1.0 - b.p_value);
        ea.partial_cmp(&eb).unwrap().then(a.game.cmp(&b.game))
    });
    flags
}

/// Variance decomposition of season performance in win-fraction units:
/// Var(Performance) = Var(Luck) + Var(Effort) + Var(Ability), with
/// Var(Luck) = p(1-p)/g. The ability share is the residual of the
/// identity and may come out negative (flagged).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LuckDecomposition {
    pub var_performance: f64,
    pub var_luck: f64,
    pub var_effort: f64,
    pub var_ability: f64,
    pub p: f64,
    pub g: u32,
    pub negative_ability: bool,
}

impl LuckDecomposition {
    /// Builds the decomposition from already-computed variances.
    pub fn from_variances(p: f64, g: u32, var_performance: f64, var_effort: f64) -> Self {
        let var_luck = p * (1.0 - p) / f64::from(g);
        let var_ability = var_performance - var_luck - var_effort;
        LuckDecomposition {
            var_performance,
            var_luck,
            var_effort,
            var_ability,
            p,
            g,
            negative_ability: var_ability < 0.0,
        }
    }
}

/// Decomposition from raw season inputs: per-team win counts (draws may
/// count as halves), the nominal games-per-team, and the pooled per-game
/// team efforts. Variances use n-1 denominators.
pub fn luck_decomposition(
    wins: &[f64],
    g: u32,
    efforts: &[f64],
    p: f64,
) -> Result<LuckDecomposition, PpcError> {
    if wins.len() < 2 {
        return Err(PpcError::TooFewTeams);
    }
    if g == 0 {
        return Err(PpcError::NoGames);
    }
    let fractions: Vec<f64> = wins.iter().map(|w| w / f64::from(g)).collect();
    let var_performance = stats::sample_variance(&fractions);
    let var_effort = if efforts.len() > 1 {
        stats::sample_variance(efforts)
    } else {
        0.0
    };
    Ok(LuckDecomposition::from_variances(p, g, var_performance, var_effort))
}

/// Win counts (draw = half a win), pooled per-game team efforts, and the
/// maximum games played by any team, extracted from a season.
pub fn season_luck_inputs(dataset: &Dataset) -> (Vec<f64>, Vec<f64>, u32) {
    let nteams = dataset.nteams();
    let mut wins = vec![0.0; nteams];
    let mut games = vec![0u32; nteams];
    let mut efforts = Vec::with_capacity(dataset.ngames() * 2);
    for m in dataset.played() {
        let h = dataset.team_index(&m.home_team).expect("team in index");
        let a = dataset.team_index(&m.away_team).expect("team in index");
        games[h] += 1;
        games[a] += 1;
        match m.home_score.cmp(&m.away_score) {
            std::cmp::Ordering::Greater => wins[h] += 1.0,
            std::cmp::Ordering::Less => wins[a] += 1.0,
            std::cmp::Ordering::Equal => {
                wins[h] += 0.5;
                wins[a] += 0.5;
            }
        }
        efforts.push(crate::features::compute_effort(
            m.home_tries,
            m.home_conv_att,
            m.home_pen_att,
            m.home_drop_att,
        ));
        efforts.push(crate::features::compute_effort(
            m.away_tries,
            m.away_conv_att,
            m.away_pen_att,
            m.away_drop_att,
        ));
    }
    (wins, efforts, games.iter().copied().max().unwrap_or(0))
}

/// Equal-width histogram; values outside [lo, hi] land in the end bins so
/// counts always total the input size.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub fn histogram(values: &[f64], n_bins: usize, lo: f64, hi: f64) -> Histogram {
    assert!(n_bins > 0 && hi > lo);
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        let bin = (((v - lo) / width).floor() as i64).clamp(0, n_bins as i64 - 1) as usize;
        counts[bin] += 1;
    }
    Histogram { edges, counts }
}
