//! Model covariates built from a parsed season: effort ratios,
//! previous-performance scores, per-team week indices and standardized
//! score differences.

use std::fmt::Write as _;

use crate::ingest::{Dataset, PrevSeasonTable};
use crate::stats;

#[derive(Debug, thiserror::Error)]
pub enum FeaturesError {
    #[error("previous-season table has a single team; ranking normalization undefined")]
    SingleTeam,
    #[error("need at least 2 played games to standardize score differences, found {0}")]
    TooFewGames(usize),
    #[error("score differences have zero variance; cannot standardize")]
    ZeroVariance,
}

/// Covariates of one game, ready for the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct GameObservation {
    pub home_idx: usize,
    pub away_idx: usize,
    /// 1-based index of the home team's played-match counter.
    pub home_week: usize,
    pub away_week: usize,
    /// Standardized home-minus-away score difference.
    pub y: f64,
    pub eff_home: f64,
    pub eff_away: f64,
    pub atten: bool,
    pub day: bool,
}

impl GameObservation {
    pub fn atten_value(&self) -> f64 {
        if self.atten {
            1.0
        } else {
            0.0
        }
    }

    pub fn day_value(&self) -> f64 {
        if self.day {
            1.0
        } else {
            0.0
        }
    }

    /// Effort difference entering the likelihood location.
    pub fn eff_diff(&self) -> f64 {
        self.eff_home - self.eff_away
    }
}

/// Everything the model consumes: observations, per-team previous
/// performance in [0,1], the week horizon, and the points-per-unit scale
/// that standardized the raw differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub observations: Vec<GameObservation>,
    pub prevperf: Vec<f64>,
    pub nweeks: usize,
    pub scale: f64,
}

impl FeatureSet {
    pub fn nteams(&self) -> usize {
        self.prevperf.len()
    }

    pub fn ngames(&self) -> usize {
        self.observations.len()
    }

    /// Audit dump: one row per game with every observation field plus the
    /// raw (pre-standardization) difference.
    pub fn to_csv_string(&self, teams: &[String]) -> String {
        let mut out = String::from(
            "game,home_team,away_team,home_week,away_week,y,raw_diff,eff_home,eff_away,atten,day\n",
        );
        for (g, obs) in self.observations.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                g + 1,
                crate::csvio::escape(&teams[obs.home_idx]),
                crate::csvio::escape(&teams[obs.away_idx]),
                obs.home_week,
                obs.away_week,
                obs.y,
                obs.y * self.scale,
                obs.eff_home,
                obs.eff_away,
                u8::from(obs.atten),
                u8::from(obs.day),
            );
        }
        out
    }
}

/// Effort ratio: tries over tries plus attempted scoring kicks, 0 when the
/// team neither scored a try nor attempted a kick.
pub fn compute_effort(tries: u32, conv_att: u32, pen_att: u32, drop_att: u32) -> f64 {
    let denom = tries + conv_att + pen_att + drop_att;
    if denom == 0 {
        0.0
    } else {
        f64::from(tries) / f64::from(denom)
    }
}

/// Fractional (tie-averaged) 1-based ranks of `keys` under `descending`
/// order.
fn fractional_ranks(keys: &[u64], descending: bool) -> Vec<f64> {
    let n = keys.len();
    let mut order: Vec<usize> = (0..n).collect();
    if descending {
        order.sort_by(|&a, &b| keys[b].cmp(&keys[a]).then(a.cmp(&b)));
    } else {
        order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
    }
    let mut ranks = vec![0.0; n];
    let mut pos = 0;
    while pos < n {
        let mut end = pos + 1;
        while end < n && keys[order[end]] == keys[order[pos]] {
            end += 1;
        }
        // positions pos..end hold tied keys; average their 1-based ranks
        let avg = (pos + 1 + end) as f64 / 2.0;
        for &idx in &order[pos..end] {
            ranks[idx] = avg;
        }
        pos = end;
    }
    ranks
}

/// Previous-performance score per team: the attack ranking (most scored
/// first) and the defense ranking (least received first) are each mapped
/// to [0,1] via (n - rank)/(n - 1) and averaged. Teams missing from the
/// table get the league midpoint 0.5.
pub fn compute_prevperf(
    table: &PrevSeasonTable,
    teams: &[String],
) -> Result<Vec<f64>, FeaturesError> {
    let n = table.len();
    if n < 2 {
        return Err(FeaturesError::SingleTeam);
    }
    let scored: Vec<u64> = table.rows().iter().map(|&(_, s, _)| s).collect();
    let received: Vec<u64> = table.rows().iter().map(|&(_, _, r)| r).collect();
    let attack = fractional_ranks(&scored, true);
    let defense = fractional_ranks(&received, false);
    let norm = |rank: f64| (n as f64 - rank) / (n as f64 - 1.0);

    Ok(teams
        .iter()
        .map(|team| {
            match table
                .rows()
                .iter()
                .position(|(t, _, _)| t == team)
            {
                Some(i) => 0.5 * (norm(attack[i]) + norm(defense[i])),
                None => 0.5,
            }
        })
        .collect())
}

/// Per-game (home_week, away_week): each team's counter of non-canceled
/// matches played so far, inclusive. Matches must already be in
/// chronological order.
pub fn assign_week_indices(dataset: &Dataset) -> Vec<(usize, usize)> {
    let mut counters = vec![0usize; dataset.nteams()];
    dataset
        .played()
        .map(|m| {
            let h = dataset.team_index(&m.home_team).expect("team in index");
            let a = dataset.team_index(&m.away_team).expect("team in index");
            counters[h] += 1;
            counters[a] += 1;
            (counters[h], counters[a])
        })
        .collect()
}

/// Divides raw differences by their sample standard deviation (no
/// centering) and returns the standardized values plus the scale.
pub fn standardize_diffs(raw: &[f64]) -> Result<(Vec<f64>, f64), FeaturesError> {
    if raw.len() < 2 {
        return Err(FeaturesError::TooFewGames(raw.len()));
    }
    let scale = stats::sample_sd(raw);
    if !(scale > 0.0) {
        return Err(FeaturesError::ZeroVariance);
    }
    Ok((raw.iter().map(|d| d / scale).collect(), scale))
}

/// Assembles the full covariate set for a season.
pub fn build_features(
    dataset: &Dataset,
    prev: &PrevSeasonTable,
) -> Result<FeatureSet, FeaturesError> {
    let prevperf = compute_prevperf(prev, &dataset.teams)?;
    let weeks = assign_week_indices(dataset);
    let raw: Vec<f64> = dataset.played().map(|m| m.raw_diff()).collect();
    let (ys, scale) = standardize_diffs(&raw)?;

    let observations: Vec<GameObservation> = dataset
        .played()
        .zip(weeks.iter())
        .zip(ys.iter())
        .map(|((m, &(home_week, away_week)), &y)| GameObservation {
            home_idx: dataset.team_index(&m.home_team).expect("team in index"),
            away_idx: dataset.team_index(&m.away_team).expect("team in index"),
            home_week,
            away_week,
            y,
            eff_home: compute_effort(m.home_tries, m.home_conv_att, m.home_pen_att, m.home_drop_att),
            eff_away: compute_effort(m.away_tries, m.away_conv_att, m.away_pen_att, m.away_drop_att),
            atten: m.attendance,
            day: m.weekend,
        })
        .collect();

    let nweeks = observations
        .iter()
        .map(|o| o.home_week.max(o.away_week))
        .max()
        .unwrap_or(1);

    Ok(FeatureSet {
        observations,
        prevperf,
        nweeks,
        scale,
    })
}

/// Five-number-plus-mean summary of one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl ColumnSummary {
    fn from(xs: &[f64]) -> Self {
        let mut sorted = xs.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in summary input"));
        ColumnSummary {
            min: sorted[0],
            q1: stats::quantile(&sorted, 0.25),
            median: stats::quantile(&sorted, 0.5),
            mean: stats::mean(xs),
            q3: stats::quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        }
    }
}

/// Descriptive statistics of one side's columns: score, tries, attempt
/// counts and effort.
#[derive(Debug, Clone, PartialEq)]
pub struct SideSummary {
    pub score: ColumnSummary,
    pub tries: ColumnSummary,
    pub conv_att: ColumnSummary,
    pub pen_att: ColumnSummary,
    pub drop_att: ColumnSummary,
    pub effort: ColumnSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffortSummary {
    pub home: SideSummary,
    pub away: SideSummary,
}

impl EffortSummary {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("side,column,min,q1,median,mean,q3,max\n");
        for (side, s) in [("home", &self.home), ("away", &self.away)] {
            for (name, c) in [
                ("score", &s.score),
                ("tries", &s.tries),
                ("conv_att", &s.conv_att),
                ("pen_att", &s.pen_att),
                ("drop_att", &s.drop_att),
                ("effort", &s.effort),
            ] {
                let _ = writeln!(
                    out,
                    "{side},{name},{},{},{},{},{},{}",
                    c.min, c.q1, c.median, c.mean, c.q3, c.max
                );
            }
        }
        out
    }
}

/// Per-side descriptive statistics over played games.
pub fn summarize_features(dataset: &Dataset) -> EffortSummary {
    let collect = |f: &dyn Fn(&crate::ingest::MatchRecord) -> f64| -> Vec<f64> {
        dataset.played().map(f).collect()
    };
    let side = |home: bool| -> SideSummary {
        let score = collect(&|m| f64::from(if home { m.home_score } else { m.away_score }));
        let tries = collect(&|m| f64::from(if home { m.home_tries } else { m.away_tries }));
        let conv = collect(&|m| f64::from(if home { m.home_conv_att } else { m.away_conv_att }));
        let pen = collect(&|m| f64::from(if home { m.home_pen_att } else { m.away_pen_att }));
        let drop = collect(&|m| f64::from(if home { m.home_drop_att } else { m.away_drop_att }));
        let effort: Vec<f64> = dataset
            .played()
            .map(|m| {
                if home {
                    compute_effort(m.home_tries, m.home_conv_att, m.home_pen_att, m.home_drop_att)
                } else {
                    compute_effort(m.away_tries, m.away_conv_att, m.away_pen_att, m.away_drop_att)
                }
            })
            .collect();
        SideSummary {
            score: ColumnSummary::from(&score),
            tries: ColumnSummary::from(&tries),
            conv_att: ColumnSummary::from(&conv),
            pen_att: ColumnSummary::from(&pen),
            drop_att: ColumnSummary::from(&drop),
            effort: ColumnSummary::from(&effort),
        }
    };
    EffortSummary {
        home: side(true),
        away: side(false),
    }
}
