//! Command-line front end: simulate datasets, train the contrastive
//! localizer, evaluate estimators, and merge reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use csl::baselines::build_steering;
use csl::config::{load_run_config, resolve_seed, resolve_workers, RunConfig};
use csl::data::{load_dataset, FeatureConfig, SessionFeatures};
use csl::error::{CslError, Result};
use csl::eval::{
    confidence_analysis, prepare_dataset, two_source_eval, window_sweep, write_confidence_csv,
    write_scatter_csv, write_sweep_csv, write_sweep_json, Estimator, KdeConfig, SweepRow,
    WindowLen,
};
use csl::geometry::build_grid;
use csl::nn::load_checkpoint;
use csl::sim::{
    gen_dataset, load_manifest, load_session, ArraySpec, Condition, GenConfig, SessionData, Split,
};
use csl::train::{train, SignEvidence, SignMethod, TrainConfig};

#[derive(Parser)]
#[command(
    name = "csl",
    version,
    about = "Self-supervised sound localization: simulate rotating-array \
             recordings, train without labels, evaluate against classical \
             baselines"
)]
struct Cli {
    /// JSON run configuration; command-line flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global RNG seed (precedence: this flag, config file, $CSL_SEED, 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset of rotating-array sessions.
    Gen(GenArgs),
    /// Train the contrastive localization model on a dataset.
    Train(TrainArgs),
    /// Evaluate estimators over a dataset and emit CSV/JSON reports.
    Eval(EvalArgs),
    /// Merge evaluation reports into one table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Acoustic condition: anechoic, t250, t500, t750, or mixed.
    #[arg(long)]
    condition: Option<Condition>,
    /// Number of sessions.
    #[arg(long)]
    sessions: Option<usize>,
    /// Concurrent sources per session.
    #[arg(long)]
    sources: Option<usize>,
    /// Session length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Sensor noise level in dB SNR (omit for noise-free).
    #[arg(long)]
    snr: Option<f64>,
    /// STFT frames per impulse-response update block.
    #[arg(long)]
    block_frames: Option<usize>,
    /// Array angular speed in rad/s.
    #[arg(long)]
    angular_speed: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for the checkpoint and training log.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Sessions per batch.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden layer widths, e.g. 64,32,16.
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
    /// Cap on time-frequency bins drawn per interval per epoch.
    #[arg(long)]
    max_bins: Option<usize>,
    /// Sign disambiguation: mic-pair, initial-orientation, or oracle.
    #[arg(long)]
    sign: Option<SignMethod>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Trained checkpoint (required for the learned model).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory for report files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Estimator: srp-phat, lsdd, csl, or all.
    #[arg(long)]
    method: Option<String>,
    /// Window lengths in seconds, plus "full", e.g. 0.05,0.2,full.
    #[arg(long, value_delimiter = ',')]
    win: Vec<String>,
    /// Restrict to one split: train, val, or test.
    #[arg(long)]
    split: Option<Split>,
    /// Direction grid size for the baselines and peak search.
    #[arg(long)]
    grid: Option<usize>,
    /// Multi-source evaluation: density peaks scored by Chamfer distance.
    #[arg(long)]
    two_source: bool,
    /// Number of sources to extract in multi-source evaluation.
    #[arg(long)]
    nsrc: Option<usize>,
    /// Also emit the confidence calibration curve and scatter overlay.
    #[arg(long)]
    confidence: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation report JSON files to merge.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for the merged report.csv and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("csl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    };
    let workers = resolve_workers(cli.workers, cfg.workers);
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .ok();
    let seed = resolve_seed(cli.seed, cfg.seed)?;
    match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a, &cfg, seed),
        Cmd::Train(a) => cmd_train(a, &cfg, seed),
        Cmd::Eval(a) => cmd_eval(a, &cfg),
        Cmd::Report(a) => cmd_report(a),
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(CslError::invalid(format!(
            "{what} {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_gen(a: GenArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    let out = a
        .out
        .or_else(|| cfg.gen.out.clone())
        .ok_or_else(|| CslError::invalid("gen needs --out (or gen.out in the config)"))?;
    let mut g = GenConfig { seed, ..GenConfig::default() };
    if let Some(c) = a.condition.or(cfg.gen.condition) {
        g.condition = c;
    }
    if let Some(n) = a.sessions.or(cfg.gen.sessions) {
        g.n_sessions = n;
    }
    if let Some(n) = a.sources.or(cfg.gen.sources) {
        g.n_sources = n;
    }
    if let Some(d) = a.duration.or(cfg.gen.duration_s) {
        g.duration_s = d;
    }
    if let Some(w) = a.angular_speed.or(cfg.gen.angular_speed) {
        g.angular_speed = w;
    }
    if let Some(r) = cfg.gen.room_dims {
        g.room_dims = r;
    }
    if let Some(s) = a.snr.or(cfg.gen.snr_db) {
        g.snr_db = Some(s);
    }
    if let Some(b) = a.block_frames.or(cfg.gen.block_frames) {
        g.block_frames = b;
    }
    if let Some(f) = cfg.gen.split_fractions {
        g.split_fractions = f;
    }
    let manifest = gen_dataset(&g, &out)?;
    let mut counts = [0usize; 3];
    let mut t60_lo = f64::INFINITY;
    let mut t60_hi = f64::NEG_INFINITY;
    for e in &manifest.sessions {
        counts[match e.split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }] += 1;
        t60_lo = t60_lo.min(e.t60);
        t60_hi = t60_hi.max(e.t60);
    }
    println!("dataset {}", out.display());
    println!(
        "  sessions {}  condition {}  sources {}  seed {}",
        manifest.n_sessions, manifest.condition, manifest.n_sources, manifest.seed
    );
    println!(
        "  splits train/val/test: {}/{}/{}",
        counts[0], counts[1], counts[2]
    );
    println!(
        "  duration {} s  sample rate {} Hz  t60 {:.3}..{:.3} s",
        manifest.duration_s, manifest.sample_rate, t60_lo, t60_hi
    );
    Ok(())
}

fn cmd_train(a: TrainArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    let dataset = a
        .dataset
        .or_else(|| cfg.train.dataset.clone())
        .ok_or_else(|| CslError::invalid("train needs --dataset (or train.dataset in the config)"))?;
    require_dir(&dataset, "dataset")?;
    let out = a
        .out
        .or_else(|| cfg.train.out.clone())
        .unwrap_or_else(|| PathBuf::from("train_out"));
    let mut t = TrainConfig { seed, ..TrainConfig::default() };
    if let Some(e) = a.epochs.or(cfg.train.epochs) {
        t.epochs = e;
    }
    if let Some(b) = a.batch.or(cfg.train.batch_size) {
        t.batch_size = b;
    }
    if let Some(lr) = a.lr.or(cfg.train.lr) {
        t.lr = lr;
    }
    if !a.hidden.is_empty() {
        t.hidden = a.hidden.clone();
    } else if let Some(h) = cfg.train.hidden.clone() {
        t.hidden = h;
    }
    if let Some(m) = a.max_bins.or(cfg.train.max_bins_per_interval) {
        t.max_bins_per_interval = Some(m);
    }
    if let Some(s) = a.sign.or(cfg.train.sign_method) {
        t.sign_method = s;
    }
    if let Some(f) = cfg.train.features.clone() {
        t.features = f;
    }

    let train_set = load_dataset(&dataset, &t.features, Some(Split::Train))?;
    let val_set = match load_dataset(&dataset, &t.features, Some(Split::Val)) {
        Ok(v) => v,
        Err(CslError::InvalidInput(_)) => {
            eprintln!("note: no validation split; skipping per-epoch validation");
            Vec::new()
        }
        Err(e) => return Err(e),
    };

    // The mic-pair vote needs raw audio; a handful of sessions is plenty.
    let mic_sessions: Option<Vec<SessionData>> =
        if matches!(t.sign_method, SignMethod::MicPair) {
            let manifest = load_manifest(&dataset)?;
            let picked: Vec<String> = manifest
                .sessions
                .iter()
                .filter(|e| e.split == Split::Train)
                .take(8)
                .map(|e| e.session_id.clone())
                .collect();
            Some(
                picked
                    .iter()
                    .map(|id| load_session(&dataset.join(id)))
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        };
    let evidence = SignEvidence {
        features: &train_set,
        sessions: mic_sessions.as_deref(),
        array: ArraySpec::default(),
    };

    let report = train(&train_set, &val_set, &t, Some(&evidence), &out)?;
    println!("checkpoint {}", report.checkpoint_path.display());
    println!("log        {}", report.log_path.display());
    println!(
        "epochs {}  final train loss {:.6}",
        report.epochs_run, report.final_train_loss
    );
    if let Some(v) = report.final_val_error_deg {
        println!("validation error {v:.2} deg");
    }
    if let Some(sign) = &report.sign {
        println!(
            "sign: method {}  flipped {}  votes {} ({:.0}% agreement){}",
            sign.method,
            sign.flipped,
            sign.n_votes,
            100.0 * sign.vote_fraction.max(1.0 - sign.vote_fraction),
            if sign.ambiguous { "  AMBIGUOUS" } else { "" }
        );
    }
    Ok(())
}

fn parse_lens(win: &[String]) -> Result<Vec<WindowLen>> {
    if win.is_empty() {
        return Err(CslError::invalid("no window lengths given"));
    }
    win.iter().map(|s| s.parse()).collect()
}

fn print_rows(rows: &[SweepRow]) {
    println!(
        "{:<10} {:<10} {:<6} {:>9} {:>8} {:>7}",
        "method", "condition", "l_win", "mean_deg", "ci_deg", "n"
    );
    for r in rows {
        println!(
            "{:<10} {:<10} {:<6} {:>9.3} {:>8.3} {:>7}",
            r.method, r.condition, r.l_win, r.mean_deg, r.ci_deg, r.n
        );
    }
}

fn cmd_eval(a: EvalArgs, cfg: &RunConfig) -> Result<()> {
    let dataset = a
        .dataset
        .or_else(|| cfg.eval.dataset.clone())
        .ok_or_else(|| CslError::invalid("eval needs --dataset (or eval.dataset in the config)"))?;
    require_dir(&dataset, "dataset")?;
    let out = a
        .out
        .or_else(|| cfg.eval.out.clone())
        .unwrap_or_else(|| PathBuf::from("eval_out"));
    std::fs::create_dir_all(&out)?;

    let method = a
        .method
        .or_else(|| cfg.eval.method.clone())
        .unwrap_or_else(|| "all".to_string());
    let methods: Vec<&str> = match method.as_str() {
        "all" => vec!["srp-phat", "lsdd", "csl"],
        m @ ("srp-phat" | "lsdd" | "csl") => vec![m],
        other => {
            return Err(CslError::invalid(format!(
                "unknown method {other:?} (expected srp-phat, lsdd, csl, or all)"
            )))
        }
    };
    let win = if !a.win.is_empty() {
        a.win.clone()
    } else if let Some(w) = cfg.eval.win.clone() {
        w
    } else {
        ["0.05", "0.2", "0.5", "1.0", "full"].map(String::from).to_vec()
    };
    let lens = parse_lens(&win)?;
    let split = a.split.or(cfg.eval.split);

    let manifest = load_manifest(&dataset)?;
    let condition = manifest.condition.to_string();
    let fcfg = FeatureConfig::default();
    let sessions = prepare_dataset(&dataset, &fcfg, split)?;

    let needs_net =
        a.two_source || a.confidence || methods.contains(&"csl");
    let net = if needs_net {
        let ckpt = a
            .checkpoint
            .or_else(|| cfg.eval.checkpoint.clone())
            .ok_or_else(|| {
                CslError::invalid("evaluating the learned model needs --checkpoint")
            })?;
        Some(load_checkpoint(&ckpt)?.0)
    } else {
        None
    };

    let grid_size = a.grid.or(cfg.eval.grid_size).unwrap_or(2562);
    let grid_seed = cfg.eval.grid_seed.unwrap_or(2002);
    let needs_steering = methods.iter().any(|m| *m != "csl") && !a.two_source;
    let needs_grid = needs_steering || a.two_source;
    let grid = if needs_grid {
        Some(build_grid(grid_size, grid_seed)?)
    } else {
        None
    };
    let table = if needs_steering {
        let g = grid.as_ref().unwrap();
        Some(build_steering(
            &ArraySpec::default(),
            g,
            sessions[0].y.sample_rate,
            sessions[0].y.frame_len,
        )?)
    } else {
        None
    };

    let mut rows = Vec::new();
    if a.two_source {
        let net = net.as_ref().unwrap();
        let kcfg = KdeConfig {
            bandwidth_deg: cfg.eval.bandwidth_deg.unwrap_or(1.0),
            n_src: a.nsrc.or(cfg.eval.nsrc).unwrap_or(2),
        };
        rows.extend(two_source_eval(
            net,
            &sessions,
            &lens,
            &kcfg,
            grid.as_ref().unwrap(),
            &condition,
        )?);
    } else {
        for m in &methods {
            let est = match *m {
                "srp-phat" => Estimator::SrpPhat {
                    table: table.as_ref().unwrap(),
                    grid: grid.as_ref().unwrap(),
                },
                "lsdd" => Estimator::Lsdd {
                    table: table.as_ref().unwrap(),
                    grid: grid.as_ref().unwrap(),
                },
                _ => Estimator::Csl { net: net.as_ref().unwrap() },
            };
            rows.extend(window_sweep(&est, &sessions, &lens, &condition)?);
        }
    }

    write_sweep_csv(&out.join("report.csv"), &rows)?;
    write_sweep_json(&out.join("report.json"), &rows)?;
    print_rows(&rows);

    if a.confidence {
        let net = net.as_ref().unwrap();
        let feats: Vec<SessionFeatures> = sessions.iter().map(|es| es.sf.clone()).collect();
        let (report, scatter) = confidence_analysis(net, &feats)?;
        write_confidence_csv(&out.join("confidence.csv"), &report)?;
        write_scatter_csv(&out.join("confidence_scatter.csv"), &scatter)?;
        println!(
            "confidence calibration: {} bins, non-increasing fraction {:.2}",
            report.mean_error_deg.len(),
            report.non_increasing_fraction()
        );
    }
    println!("reports in {}", out.display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let mut rows: Vec<SweepRow> = Vec::new();
    for p in &a.inputs {
        let text = std::fs::read_to_string(p)?;
        let part: Vec<SweepRow> = serde_json::from_str(&text)
            .map_err(|e| CslError::invalid(format!("{}: {e}", p.display())))?;
        rows.extend(part);
    }
    print_rows(&rows);
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        write_sweep_csv(&out.join("report.csv"), &rows)?;
        write_sweep_json(&out.join("report.json"), &rows)?;
        println!("merged report in {}", out.display());
    }
    Ok(())
}
