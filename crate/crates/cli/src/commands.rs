//! Command implementations and flag/config resolution.

use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::{json, Value};

use ruck::diagnostics::{self, ParamSelection};
use ruck::features::{build_features, summarize_features};
use ruck::ingest;
use ruck::model::{ModelConfig, PrevPerfMode, Variant};
use ruck::ppc;
use ruck::sampler::{run_sampler, DrawsMatrix, SamplerConfig};
use ruck::simulate::{self, EffortLaw, SimConfig, TrueParams};

use crate::manifest::ManifestBuilder;
use crate::{io_err, AppError};

/// Seed fallback when neither the flag nor the config file provides one.
const SEED_ENV: &str = "RUCK_SEED";

fn default_seed() -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

fn load_config(path: Option<&Path>) -> Result<Value, AppError> {
    match path {
        None => Ok(json!({})),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| AppError::Input(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| AppError::Input(format!("{}: invalid JSON: {e}", p.display())))
        }
    }
}

fn cfg_lookup<T, F: Fn(&Value) -> Option<T>>(
    cfg: &Value,
    key: &str,
    extract: F,
    what: &str,
) -> Result<Option<T>, AppError> {
    match cfg.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => extract(v)
            .map(Some)
            .ok_or_else(|| AppError::Input(format!("config key `{key}` must be {what}"))),
    }
}

fn resolve_u64(flag: Option<u64>, cfg: &Value, key: &str, default: u64) -> Result<u64, AppError> {
    Ok(flag
        .or(cfg_lookup(cfg, key, Value::as_u64, "an unsigned integer")?)
        .unwrap_or(default))
}

fn resolve_usize(
    flag: Option<usize>,
    cfg: &Value,
    key: &str,
    default: usize,
) -> Result<usize, AppError> {
    Ok(flag
        .or(cfg_lookup(cfg, key, Value::as_u64, "an unsigned integer")?.map(|v| v as usize))
        .unwrap_or(default))
}

fn resolve_f64(flag: Option<f64>, cfg: &Value, key: &str, default: f64) -> Result<f64, AppError> {
    Ok(flag
        .or(cfg_lookup(cfg, key, Value::as_f64, "a number")?)
        .unwrap_or(default))
}

fn resolve_string(
    flag: Option<String>,
    cfg: &Value,
    key: &str,
    default: &str,
) -> Result<String, AppError> {
    Ok(flag
        .or(cfg_lookup(cfg, key, |v| v.as_str().map(str::to_string), "a string")?)
        .unwrap_or_else(|| default.to_string()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn parse_variant(s: &str) -> Result<Variant, AppError> {
    Variant::parse(s).ok_or_else(|| AppError::Input(format!("unknown model variant `{s}` (expected I-IV)")))
}

fn init_thread_pool(threads: usize) {
    if threads > 0 {
        // ignore failure: the global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn load_season(
    data: &Path,
    prev: &Path,
) -> Result<(ingest::Dataset, ingest::PrevSeasonTable, ruck::FeatureSet), AppError> {
    let (dataset, report) = ingest::parse_matches(data)?;
    for w in report.warnings() {
        eprintln!("warning: {}: {w}", data.display());
    }
    eprintln!(
        "{}: {} teams, {} played games, {} canceled",
        data.display(),
        dataset.nteams(),
        dataset.ngames(),
        report.canceled
    );
    let prev_table = ingest::parse_prev_season(prev)?;
    let features = build_features(&dataset, &prev_table)?;
    Ok((dataset, prev_table, features))
}

#[derive(Args)]
pub struct FitArgs {
    /// Match CSV file
    #[arg(long)]
    data: PathBuf,
    /// Previous-season CSV file
    #[arg(long)]
    prev: PathBuf,
    /// Model variant: I, II, III or IV
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    chains: Option<usize>,
    /// Total iterations per chain (warmup included)
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    target_accept: Option<f64>,
    #[arg(long)]
    max_leapfrog: Option<usize>,
    #[arg(long)]
    init_radius: Option<f64>,
    /// Worker threads for chain parallelism (0 = rayon default)
    #[arg(long)]
    threads: Option<usize>,
    /// Which quantity the previous-season table carries: tries or points
    #[arg(long)]
    prevperf_mode: Option<String>,
    /// Output draws CSV
    #[arg(long)]
    out: PathBuf,
    /// JSON file with the same keys as the long flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

struct ResolvedFit {
    variant: Variant,
    model: ModelConfig,
    sampler: SamplerConfig,
    threads: usize,
}

fn resolve_fit(args: &FitArgs) -> Result<(ResolvedFit, Value), AppError> {
    let cfg = load_config(args.config.as_deref())?;
    let variant = parse_variant(&resolve_string(args.model.clone(), &cfg, "model", "II")?)?;
    let mut model = ModelConfig::new(variant);
    let mode = resolve_string(
        args.prevperf_mode.clone(),
        &cfg,
        "prevperf_mode",
        if variant == Variant::IV { "points" } else { "tries" },
    )?;
    model.prevperf_mode = match mode.as_str() {
        "tries" => PrevPerfMode::Tries,
        "points" => PrevPerfMode::Points,
        other => {
            return Err(AppError::Input(format!(
                "unknown prevperf mode `{other}` (expected tries|points)"
            )))
        }
    };
    let sampler = SamplerConfig {
        chains: resolve_usize(args.chains, &cfg, "chains", 4)?,
        iters: resolve_usize(args.iters, &cfg, "iters", 2500)?,
        warmup: resolve_usize(args.warmup, &cfg, "warmup", 1500)?,
        seed: resolve_u64(args.seed, &cfg, "seed", default_seed())?,
        target_accept: resolve_f64(args.target_accept, &cfg, "target_accept", 0.8)?,
        max_leapfrog_steps: resolve_usize(args.max_leapfrog, &cfg, "max_leapfrog", 1024)?,
        init_radius: resolve_f64(args.init_radius, &cfg, "init_radius", 2.0)?,
    };
    let threads = resolve_usize(args.threads, &cfg, "threads", 0)?;
    let resolved_json = json!({
        "model": variant.to_string(),
        "prevperf_mode": mode,
        "chains": sampler.chains,
        "iters": sampler.iters,
        "warmup": sampler.warmup,
        "seed": sampler.seed,
        "target_accept": sampler.target_accept,
        "max_leapfrog": sampler.max_leapfrog_steps,
        "init_radius": sampler.init_radius,
        "threads": threads,
    });
    Ok((
        ResolvedFit {
            variant,
            model,
            sampler,
            threads,
        },
        resolved_json,
    ))
}

pub fn fit(args: FitArgs) -> Result<(), AppError> {
    let (resolved, resolved_json) = resolve_fit(&args)?;
    init_thread_pool(resolved.threads);
    let mut manifest = ManifestBuilder::new("fit", resolved_json, Some(resolved.sampler.seed));
    manifest.input(&args.data)?;
    manifest.input(&args.prev)?;

    let (_, _, features) = load_season(&args.data, &args.prev)?;
    let draws = run_sampler(&features, &resolved.model, &resolved.sampler)?;
    write_file(&args.out, &draws.to_csv_string())?;
    manifest.output(&args.out);

    let total_div: usize = draws.divergences.iter().sum();
    eprintln!(
        "fit: model {}, {} chains x {} stored draws, mean acceptance {:.3}, {} divergent transitions",
        resolved.variant,
        draws.n_chains(),
        draws.n_draws(),
        draws.accept_rate.iter().sum::<f64>() / draws.n_chains() as f64,
        total_div
    );
    if total_div > 0 {
        eprintln!("warning: {total_div} post-warmup divergences; treat tail quantiles with care");
    }
    manifest.write(args.manifest.as_deref())
}

#[derive(Args)]
pub struct SummarizeArgs {
    /// Draws CSV produced by `fit`
    #[arg(long)]
    draws: PathBuf,
    /// `default` (reported table), `all`, or a comma-separated name list
    #[arg(long, default_value = "default")]
    params: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn summarize(args: SummarizeArgs) -> Result<(), AppError> {
    let mut manifest = ManifestBuilder::new("summarize", json!({"params": args.params}), None);
    manifest.input(&args.draws)?;
    let draws = DrawsMatrix::from_csv(&args.draws)?;
    let selection = match args.params.as_str() {
        "default" => ParamSelection::Default,
        "all" => ParamSelection::All,
        list => ParamSelection::Named(list.split(',').map(|s| s.trim().to_string()).collect()),
    };
    let rows = diagnostics::summarize(&draws, &selection);
    if rows.is_empty() {
        return Err(AppError::Input("no matching parameters in draws file".to_string()));
    }
    write_file(&args.out, &diagnostics::summary_to_csv(&rows))?;
    manifest.output(&args.out);
    eprintln!("summarize: {} parameters from {} draws", rows.len(), draws.n_chains() * draws.n_draws());
    manifest.write(args.manifest.as_deref())
}

#[derive(Args)]
pub struct PpcArgs {
    #[arg(long)]
    draws: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    prev: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Replication count (default: one per stored draw)
    #[arg(long)]
    reps: Option<usize>,
    /// Two-sided outlier threshold on the predictive p-value
    #[arg(long, default_value_t = 0.005)]
    alpha: f64,
    /// Histogram bin count for the auxiliary files
    #[arg(long, default_value_t = 15)]
    bins: usize,
    /// Also render the histogram comparison as SVG
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn aux_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("ppc");
    out.with_file_name(format!("{stem}{suffix}"))
}

pub fn ppc(args: PpcArgs) -> Result<(), AppError> {
    let seed = args.seed.unwrap_or_else(default_seed);
    let mut manifest = ManifestBuilder::new(
        "ppc",
        json!({"seed": seed, "reps": args.reps, "alpha": args.alpha, "bins": args.bins}),
        Some(seed),
    );
    manifest.input(&args.draws)?;
    manifest.input(&args.data)?;
    manifest.input(&args.prev)?;

    let draws = DrawsMatrix::from_csv(&args.draws)?;
    let (_, _, features) = load_season(&args.data, &args.prev)?;
    let reps = ppc::replicate_scores(&draws, &features, seed, args.reps)?;
    let flags = ppc::flag_outliers(&reps, args.alpha);

    // main table: one row per game, standardized units
    let mut out = String::from("game,observed,pred_mean,pred_sd,pvalue,flag\n");
    use std::fmt::Write as _;
    for g in 0..reps.n_games {
        let flag = flags
            .iter()
            .find(|f| f.game == g)
            .map(|f| match f.side {
                ppc::Side::Low => "low",
                ppc::Side::High => "high",
            })
            .unwrap_or("");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{flag}",
            g + 1,
            reps.observed[g],
            reps.pred_mean(g),
            reps.pred_sd(g),
            reps.p_values[g]
        );
    }
    write_file(&args.out, &out)?;
    manifest.output(&args.out);

    // histogram comparison in raw points: observed, one replication, mean
    let scale = features.scale;
    let observed_raw: Vec<f64> = reps.observed.iter().map(|y| y * scale).collect();
    let raw_values = |r: usize| reps.replication(r).iter().map(move |y| y * scale);
    let all_raw_min = (0..reps.n_reps)
        .flat_map(raw_values)
        .chain(observed_raw.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let all_raw_max = (0..reps.n_reps)
        .flat_map(raw_values)
        .chain(observed_raw.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let obs_hist = ppc::histogram(&observed_raw, args.bins, all_raw_min, all_raw_max);
    let mut mean_counts = vec![0.0; args.bins];
    let mut first_counts = vec![0.0; args.bins];
    for r in 0..reps.n_reps {
        let raw: Vec<f64> = reps.replication(r).iter().map(|y| y * scale).collect();
        let h = ppc::histogram(&raw, args.bins, all_raw_min, all_raw_max);
        for (b, &c) in h.counts.iter().enumerate() {
            mean_counts[b] += c as f64 / reps.n_reps as f64;
            if r == 0 {
                first_counts[b] = c as f64;
            }
        }
    }
    let hist_path = aux_path(&args.out, "_hist.csv");
    let mut hist_csv = String::from("bin_lo,bin_hi,observed,replicated_first,replicated_mean\n");
    for b in 0..args.bins {
        let _ = writeln!(
            hist_csv,
            "{},{},{},{},{}",
            obs_hist.edges[b], obs_hist.edges[b + 1], obs_hist.counts[b], first_counts[b], mean_counts[b]
        );
    }
    write_file(&hist_path, &hist_csv)?;
    manifest.output(&hist_path);

    // per-replication statistics (standardized and raw points)
    let stats_path = aux_path(&args.out, "_repstats.csv");
    let mut stats_csv = String::from("rep,mean,sd,mean_raw,sd_raw\n");
    for r in 0..reps.n_reps {
        let _ = writeln!(
            stats_csv,
            "{},{},{},{},{}",
            r + 1,
            reps.rep_means[r],
            reps.rep_sds[r],
            reps.rep_means[r] * scale,
            reps.rep_sds[r] * scale
        );
    }
    write_file(&stats_path, &stats_csv)?;
    manifest.output(&stats_path);

    if args.svg {
        let svg_path = aux_path(&args.out, "_hist.svg");
        let obs_counts: Vec<f64> = obs_hist.counts.iter().map(|&c| c as f64).collect();
        let svg = crate::svg::histogram_svg(
            "Observed vs replicated score differences (points)",
            &obs_hist.edges,
            &[
                crate::svg::Series {
                    label: "observed",
                    counts: &obs_counts,
                    color: "steelblue",
                },
                crate::svg::Series {
                    label: "replicated (mean)",
                    counts: &mean_counts,
                    color: "gray",
                },
            ],
        );
        write_file(&svg_path, &svg)?;
        manifest.output(&svg_path);
    }

    eprintln!(
        "ppc: {} replications x {} games, {} flagged at alpha {}",
        reps.n_reps,
        reps.n_games,
        flags.len(),
        args.alpha
    );
    for f in &flags {
        eprintln!("  game {} p = {:.5} ({:?})", f.game + 1, f.p_value, f.side);
    }
    manifest.write(args.manifest.as_deref())
}

#[derive(Args)]
pub struct LuckArgs {
    /// Match CSV file (optional when both variance overrides are given)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Win probability of an even match
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Games per team (default: maximum played in the data)
    #[arg(long)]
    g: Option<u32>,
    /// Use this performance variance instead of computing it from data
    #[arg(long)]
    var_performance: Option<f64>,
    /// Use this effort variance instead of computing it from data
    #[arg(long)]
    var_effort: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn luck(args: LuckArgs) -> Result<(), AppError> {
    let mut manifest = ManifestBuilder::new(
        "luck",
        json!({"p": args.p, "g": args.g, "var_performance": args.var_performance, "var_effort": args.var_effort}),
        None,
    );
    let decomp = match (args.var_performance, args.var_effort) {
        (Some(vp), Some(ve)) => {
            let g = args.g.ok_or_else(|| {
                AppError::Input("--g is required with variance overrides".to_string())
            })?;
            ppc::LuckDecomposition::from_variances(args.p, g, vp, ve)
        }
        _ => {
            let data = args.data.as_ref().ok_or_else(|| {
                AppError::Input("--data is required unless both variances are given".to_string())
            })?;
            manifest.input(data)?;
            let (dataset, report) = ingest::parse_matches(data)?;
            for w in report.warnings() {
                eprintln!("warning: {}: {w}", data.display());
            }
            let (wins, efforts, max_games) = ppc::season_luck_inputs(&dataset);
            let g = args.g.unwrap_or(max_games);
            let mut d = ppc::luck_decomposition(&wins, g, &efforts, args.p)?;
            if let Some(vp) = args.var_performance {
                d = ppc::LuckDecomposition::from_variances(args.p, g, vp, d.var_effort);
            }
            if let Some(ve) = args.var_effort {
                d = ppc::LuckDecomposition::from_variances(args.p, g, d.var_performance, ve);
            }
            d
        }
    };
    let doc = serde_json::to_string_pretty(&decomp)
        .map_err(|e| AppError::Numeric(format!("serialize: {e}")))?;
    write_file(&args.out, &format!("{doc}\n"))?;
    manifest.output(&args.out);
    eprintln!(
        "luck: performance {:.8} = luck {:.8} + effort {:.8} + ability {:.8}{}",
        decomp.var_performance,
        decomp.var_luck,
        decomp.var_effort,
        decomp.var_ability,
        if decomp.negative_ability { " (negative ability share)" } else { "" }
    );
    manifest.write(args.manifest.as_deref())
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 12)]
    teams: usize,
    #[arg(long, default_value_t = 22)]
    rounds: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.35)]
    b_home: f64,
    #[arg(long, default_value_t = 1.7)]
    b_prev: f64,
    #[arg(long, default_value_t = 3.0)]
    b_effort: f64,
    #[arg(long)]
    b_atten: Option<f64>,
    #[arg(long)]
    b_day: Option<f64>,
    #[arg(long, default_value_t = 12.0)]
    nu: f64,
    #[arg(long, default_value_t = 1.6)]
    sigma_y: f64,
    /// Random-walk innovation scale, shared by all teams
    #[arg(long, default_value_t = 0.1)]
    sigma_a: f64,
    #[arg(long, default_value_t = 0.5)]
    eta_sd: f64,
    #[arg(long, default_value_t = 5.0)]
    effort_alpha: f64,
    #[arg(long, default_value_t = 8.0)]
    effort_beta: f64,
    #[arg(long, default_value_t = 0.3)]
    attendance_prob: f64,
    #[arg(long, default_value_t = 0.7)]
    weekend_prob: f64,
    /// Points per model unit for the raw-scale columns
    #[arg(long, default_value_t = 14.0)]
    raw_scale: f64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn simulate(args: SimulateArgs) -> Result<(), AppError> {
    let seed = args.seed.unwrap_or_else(default_seed);
    let config = SimConfig {
        nteams: args.teams,
        nrounds: args.rounds,
        truth: TrueParams {
            b_home: args.b_home,
            b_prev: args.b_prev,
            b_effort: args.b_effort,
            b_atten: args.b_atten,
            b_day: args.b_day,
            nu: args.nu,
            sigma_y: args.sigma_y,
            sigma_a: vec![args.sigma_a; args.teams],
        },
        effort_home: EffortLaw::Beta {
            alpha: args.effort_alpha,
            beta: args.effort_beta,
        },
        effort_away: EffortLaw::Beta {
            alpha: args.effort_alpha,
            beta: args.effort_beta,
        },
        eta_sd: args.eta_sd,
        attendance_prob: args.attendance_prob,
        weekend_prob: args.weekend_prob,
        raw_scale: args.raw_scale,
        seed,
    };
    let resolved = json!({
        "teams": args.teams, "rounds": args.rounds, "seed": seed,
        "b_home": args.b_home, "b_prev": args.b_prev, "b_effort": args.b_effort,
        "b_atten": args.b_atten, "b_day": args.b_day, "nu": args.nu,
        "sigma_y": args.sigma_y, "sigma_a": args.sigma_a, "eta_sd": args.eta_sd,
        "effort_alpha": args.effort_alpha, "effort_beta": args.effort_beta,
        "attendance_prob": args.attendance_prob, "weekend_prob": args.weekend_prob,
        "raw_scale": args.raw_scale,
    });
    let mut manifest = ManifestBuilder::new("simulate", resolved, Some(seed));

    let season = simulate::simulate_season(&config)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    let matches_path = args.out_dir.join("matches.csv");
    let prev_path = args.out_dir.join("prev.csv");
    let truth_path = args.out_dir.join("truth.json");
    write_file(&matches_path, &season.dataset.to_csv_string())?;
    write_file(&prev_path, &season.prev_table.to_csv_string())?;
    let truth = serde_json::to_string_pretty(&season.truth)
        .map_err(|e| AppError::Numeric(format!("serialize: {e}")))?;
    write_file(&truth_path, &format!("{truth}\n"))?;
    manifest.output(&matches_path);
    manifest.output(&prev_path);
    manifest.output(&truth_path);
    eprintln!(
        "simulate: {} teams, {} rounds, {} games -> {}",
        args.teams,
        args.rounds,
        season.dataset.ngames(),
        args.out_dir.display()
    );
    manifest.write(args.manifest.as_deref())
}

#[derive(Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    prev: PathBuf,
    /// Covariate dump CSV (one row per game)
    #[arg(long)]
    out: PathBuf,
    /// Optional descriptive-statistics CSV
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn features(args: FeaturesArgs) -> Result<(), AppError> {
    let mut manifest = ManifestBuilder::new("features", json!({}), None);
    manifest.input(&args.data)?;
    manifest.input(&args.prev)?;
    let (dataset, _, features) = load_season(&args.data, &args.prev)?;
    write_file(&args.out, &features.to_csv_string(&dataset.teams))?;
    manifest.output(&args.out);
    if let Some(stats_path) = &args.stats {
        write_file(stats_path, &summarize_features(&dataset).to_csv_string())?;
        manifest.output(stats_path);
    }
    eprintln!(
        "features: {} games standardized with scale {:.4} points",
        features.ngames(),
        features.scale
    );
    manifest.write(args.manifest.as_deref())
}
