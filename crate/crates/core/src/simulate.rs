//! Synthetic season generator: runs the score-difference model forward
//! from known parameter values, for recovery and calibration experiments.
//!
//! A double round-robin schedule (mirrored circle method) gives every team
//! one game per round, so a team's week index equals the round. Efforts
//! are exogenous: a target ratio is drawn per side, realized as integer
//! try/kick counts, and the realized ratio (which the fitted model will
//! recompute from those counts) drives the generated difference. The
//! generated y lives on the model scale; the emitted match file carries
//! y_raw = y * raw_scale.

use rand::prelude::*;
use rand_distr::{Beta, StudentT};
use serde::Serialize;

use crate::features::{compute_effort, FeatureSet, GameObservation};
use crate::ingest::{Dataset, MatchRecord, PrevSeasonTable};
use crate::sampler::stream_rng;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    Config(String),
}

/// Ground-truth generative parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueParams {
    pub b_home: f64,
    pub b_prev: f64,
    pub b_effort: f64,
    pub b_atten: Option<f64>,
    pub b_day: Option<f64>,
    pub nu: f64,
    pub sigma_y: f64,
    pub sigma_a: Vec<f64>,
}

/// How per-side effort targets are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EffortLaw {
    Beta { alpha: f64, beta: f64 },
    Fixed(f64),
}

impl EffortLaw {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            EffortLaw::Beta { alpha, beta } => {
                Beta::new(alpha, beta).expect("valid beta parameters").sample(rng)
            }
            EffortLaw::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nteams: usize,
    pub nrounds: usize,
    pub truth: TrueParams,
    pub effort_home: EffortLaw,
    pub effort_away: EffortLaw,
    /// Spread of the ability innovations, matching the model prior scale.
    pub eta_sd: f64,
    pub attendance_prob: f64,
    pub weekend_prob: f64,
    /// Points per model unit used for the raw-scale view.
    pub raw_scale: f64,
    pub seed: u64,
}

impl SimConfig {
    /// A full-size season with league-typical magnitudes.
    pub fn new(nteams: usize, nrounds: usize, seed: u64) -> Self {
        SimConfig {
            nteams,
            nrounds,
            truth: TrueParams {
                b_home: 0.35,
                b_prev: 1.7,
                b_effort: 3.0,
                b_atten: None,
                b_day: None,
                nu: 12.0,
                sigma_y: 1.6,
                sigma_a: vec![0.1; nteams],
            },
            effort_home: EffortLaw::Beta { alpha: 5.0, beta: 8.0 },
            effort_away: EffortLaw::Beta { alpha: 5.0, beta: 8.0 },
            eta_sd: 0.5,
            attendance_prob: 0.3,
            weekend_prob: 0.7,
            raw_scale: 14.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.nteams < 2 || self.nteams % 2 != 0 {
            return Err(SimError::Config(format!(
                "nteams must be even and >= 2, got {}",
                self.nteams
            )));
        }
        if self.nrounds == 0 {
            return Err(SimError::Config("nrounds must be >= 1".to_string()));
        }
        if !(self.truth.nu > 0.0) || !(self.truth.sigma_y > 0.0) {
            return Err(SimError::Config("nu and sigma_y must be positive".to_string()));
        }
        if self.truth.sigma_a.len() != self.nteams {
            return Err(SimError::Config("sigma_a must have one entry per team".to_string()));
        }
        if !(self.eta_sd >= 0.0) {
            return Err(SimError::Config("eta_sd must be nonnegative".to_string()));
        }
        for (name, p) in [("attendance_prob", self.attendance_prob), ("weekend_prob", self.weekend_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if !(self.raw_scale > 0.0) {
            return Err(SimError::Config("raw_scale must be positive".to_string()));
        }
        Ok(())
    }
}

/// Everything the generator knows, written alongside the data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRecord {
    pub params: TrueParams,
    pub prevperf: Vec<f64>,
    /// abilities[w][t] for 0-based week w and team t.
    pub abilities: Vec<Vec<f64>>,
    pub raw_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSeason {
    pub dataset: Dataset,
    pub prev_table: PrevSeasonTable,
    pub features: FeatureSet,
    pub truth: TruthRecord,
}

/// Mirrored circle-method schedule: rounds of nteams/2 pairings; round
/// r >= nteams-1 replays round r - (nteams-1) with sides swapped, and the
/// whole double cycle repeats if nrounds demands it.
fn schedule(nteams: usize, nrounds: usize) -> Vec<Vec<(usize, usize)>> {
    let single = nteams - 1;
    let mut rounds = Vec::with_capacity(nrounds);
    for r in 0..nrounds {
        let leg = (r / single) % 2;
        let base = r % single;
        // circle method: team 0 fixed at slot 0, the rest rotate
        let slot = |k: usize| -> usize {
            if k == 0 {
                0
            } else {
                1 + (k - 1 + base) % single
            }
        };
        let mut pairs = Vec::with_capacity(nteams / 2);
        for i in 0..nteams / 2 {
            let a = slot(i);
            let b = slot(nteams - 1 - i);
            // alternate sides so home games balance; mirror the second leg
            let (home, away) = if (base + i) % 2 == 0 { (a, b) } else { (b, a) };
            if leg == 0 {
                pairs.push((home, away));
            } else {
                pairs.push((away, home));
            }
        }
        rounds.push(pairs);
    }
    rounds
}

/// Integer try/kick counts whose effort ratio approximates `target`
/// (exact when the rounding divides evenly). Returns
/// (tries, conv_att, pen_att, drop_att).
fn realize_effort(target: f64, rng: &mut impl Rng) -> (u32, u32, u32, u32) {
    if target <= 0.0 {
        return (0, rng.random_range(2..=5), 1, 0);
    }
    let tries = rng.random_range(2u32..=6);
    let kicks = (f64::from(tries) * (1.0 - target) / target).round().clamp(0.0, 60.0) as u32;
    let conv = kicks.min(tries);
    let pen = kicks - conv;
    (tries, conv, pen, 0)
}

/// Runs the generative model forward.
pub fn simulate_season(config: &SimConfig) -> Result<SimulatedSeason, SimError> {
    config.validate()?;
    let n = config.nteams;
    let nweeks = config.nrounds;
    let mut rng = stream_rng(config.seed, 0);

    let teams: Vec<String> = (1..=n).map(|i| format!("T{i:02}")).collect();
    // evenly spaced previous performance, realized by a consistent table
    let prevperf: Vec<f64> = (0..n).map(|t| (n - 1 - t) as f64 / (n - 1) as f64).collect();
    let prev_table = PrevSeasonTable::new(
        (0..n)
            .map(|t| (teams[t].clone(), 100 * (n - t) as u64, 100 * (t + 1) as u64))
            .collect(),
    );

    // latent abilities by the random-walk recursion
    let normal = |rng: &mut ChaChaRng, sd: f64| -> f64 {
        if sd > 0.0 {
            rng.sample::<f64, _>(rand_distr::StandardNormal) * sd
        } else {
            0.0
        }
    };
    let mut abilities = vec![vec![0.0; n]; nweeks];
    for t in 0..n {
        abilities[0][t] = config.truth.b_prev * prevperf[t] + normal(&mut rng, config.eta_sd);
    }
    for w in 1..nweeks {
        for t in 0..n {
            abilities[w][t] = abilities[w - 1][t]
                + config.truth.sigma_a[t] * normal(&mut rng, config.eta_sd);
        }
    }

    let t_noise = StudentT::new(config.truth.nu).expect("validated nu");
    let mut records = Vec::with_capacity(config.nrounds * n / 2);
    let mut observations = Vec::with_capacity(config.nrounds * n / 2);
    for (r, pairs) in schedule(n, config.nrounds).into_iter().enumerate() {
        for (home, away) in pairs {
            let week = r; // every team plays once per round
            let (ht, hc, hp, hd) = realize_effort(config.effort_home.sample(&mut rng), &mut rng);
            let (at, ac, ap, ad) = realize_effort(config.effort_away.sample(&mut rng), &mut rng);
            let eff_home = compute_effort(ht, hc, hp, hd);
            let eff_away = compute_effort(at, ac, ap, ad);
            let atten = rng.random_range(0.0..1.0) < config.attendance_prob;
            let day = rng.random_range(0.0..1.0) < config.weekend_prob;

            let mut loc = abilities[week][home] - abilities[week][away]
                + config.truth.b_effort * (eff_home - eff_away)
                + config.truth.b_home;
            if let Some(b) = config.truth.b_atten {
                loc += b * if atten { 1.0 } else { 0.0 };
            }
            if let Some(b) = config.truth.b_day {
                loc += b * if day { 1.0 } else { 0.0 };
            }
            let y = loc + config.truth.sigma_y * rng.sample::<f64, _>(&t_noise);
            let y_raw = y * config.raw_scale;

            // cosmetic integer scores around a league-typical total
            let half = y_raw / 2.0;
            let home_score = (25.0 + half).round().max(0.0) as u32;
            let away_score = (25.0 - half).round().max(0.0) as u32;

            records.push(MatchRecord {
                round: r as u32 + 1,
                home_team: teams[home].clone(),
                away_team: teams[away].clone(),
                home_score,
                away_score,
                home_tries: ht,
                away_tries: at,
                home_conv_att: hc,
                home_pen_att: hp,
                home_drop_att: hd,
                away_conv_att: ac,
                away_pen_att: ap,
                away_drop_att: ad,
                attendance: atten,
                weekend: day,
                canceled: false,
                y_raw: Some(y_raw),
            });
            observations.push(GameObservation {
                home_idx: home,
                away_idx: away,
                home_week: week + 1,
                away_week: week + 1,
                y,
                eff_home,
                eff_away,
                atten,
                day,
            });
        }
    }

    // team list in first-appearance order, matching a reparse of the file
    let mut team_order: Vec<String> = Vec::with_capacity(n);
    for m in &records {
        for t in [&m.home_team, &m.away_team] {
            if !team_order.iter().any(|x| x == t) {
                team_order.push(t.clone());
            }
        }
    }
    let index_of: Vec<usize> = teams
        .iter()
        .map(|t| team_order.iter().position(|x| x == t).expect("team scheduled"))
        .collect();
    let mut reordered_prevperf = vec![0.0; n];
    for (t, &idx) in index_of.iter().enumerate() {
        reordered_prevperf[idx] = prevperf[t];
    }
    for obs in &mut observations {
        obs.home_idx = index_of[obs.home_idx];
        obs.away_idx = index_of[obs.away_idx];
    }

    let features = FeatureSet {
        observations,
        prevperf: reordered_prevperf,
        nweeks,
        scale: config.raw_scale,
    };
    let truth = TruthRecord {
        params: config.truth.clone(),
        prevperf: features.prevperf.clone(),
        abilities: reorder_abilities(abilities, &index_of),
        raw_scale: config.raw_scale,
        seed: config.seed,
    };

    Ok(SimulatedSeason {
        dataset: Dataset::new(team_order, records),
        prev_table,
        features,
        truth,
    })
}

type ChaChaRng = rand_chacha::ChaCha8Rng;

fn reorder_abilities(abilities: Vec<Vec<f64>>, index_of: &[usize]) -> Vec<Vec<f64>> {
    abilities
        .into_iter()
        .map(|row| {
            let mut out = vec![0.0; row.len()];
            for (t, &idx) in index_of.iter().enumerate() {
                out[idx] = row[t];
            }
            out
        })
        .collect()
}
