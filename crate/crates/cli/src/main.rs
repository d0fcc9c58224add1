use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use posedrift::attack::{default_configs, AttackConfig, AttackMode, PartialAttackConfig};
use posedrift::autoencoder::ModelBundle;
use posedrift::config::FileConfig;
use posedrift::detector::DefenseMode;
use posedrift::experiment::{
    bench, gen_clean, run_session, sweep, train_from_logs, write_sweep, ExperimentSpec, SessionSpec, Transport,
    VerdictStats,
};
use posedrift::metrics::{evaluate, MetricReport};
use posedrift::net::server::run_server;
use posedrift::session::SessionLog;

#[derive(Parser)]
#[command(name = "posedrift", version, about = "Slow-pose spoofing simulator and autoencoder defense")]
struct Cli {
    /// TOML config file; command-line flags win over it, it wins over ILLIXR_VIO_SPOOF_* variables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// -v info, -vv debug. RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record clean, undefended sessions for training.
    GenClean {
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "clean")]
        out: PathBuf,
    },
    /// Fit scaler, PCA and autoencoder on clean logs and write a model bundle.
    Train {
        #[arg(long, default_value = "clean")]
        logs: PathBuf,
        #[arg(long, default_value = "model.pdb")]
        out: PathBuf,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One session against its clean twin.
    Run(RunArgs),
    /// Rate grid, defense on/off, every attack config; writes CSV tables.
    Sweep {
        #[arg(long, default_value = "model.pdb")]
        bundle: PathBuf,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        /// Slow poses per MSE bin.
        #[arg(long, default_value_t = 100)]
        bin: usize,
    },
    /// Metrics of a recorded session against a reference session.
    Eval {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Per-frame smoothed error series.
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Per-stage detection latency.
    Bench {
        #[arg(long, default_value = "model.pdb")]
        bundle: PathBuf,
        #[arg(long, default_value_t = 1000)]
        windows: usize,
        #[arg(long, default_value_t = 5000)]
        seed: u64,
    },
    /// Emulated VIO server with the attacker, over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long)]
        max_sessions: Option<usize>,
        #[command(flatten)]
        attack: AttackArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Inproc,
    Tcp,
}

#[derive(Args)]
struct AttackArgs {
    /// Start from one of the four preset drift configurations.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    attack_config: Option<u8>,
    #[arg(long)]
    probability: Option<f64>,
    #[arg(long)]
    bias_drift: Option<f64>,
    #[arg(long)]
    velocity_drift: Option<f64>,
    #[arg(long)]
    position_drift: Option<f64>,
    #[arg(long)]
    angle_drift: Option<f64>,
    #[arg(long)]
    attack_seed: Option<u64>,
    /// per-round or cumulative
    #[arg(long)]
    mode: Option<AttackMode>,
}

impl AttackArgs {
    fn resolve(&self, file: &FileConfig) -> Result<AttackConfig> {
        let base = match self.attack_config {
            Some(i) => default_configs()[i as usize - 1],
            None => AttackConfig::default(),
        };
        let cli = PartialAttackConfig {
            probability: self.probability,
            bias_drift: self.bias_drift,
            velocity_drift: self.velocity_drift,
            position_drift: self.position_drift,
            angle_drift: self.angle_drift,
            rng_seed: self.attack_seed,
            mode: self.mode,
        };
        Ok(file.attack(base, &PartialAttackConfig::from_env()?, &cli)?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 1000)]
    seed: u64,
    /// off, passive (score, forward everything) or on
    #[arg(long, default_value = "off")]
    defense: DefenseMode,
    #[arg(long, value_enum, default_value = "inproc")]
    transport: TransportArg,
    /// Existing server for --transport tcp; a loopback server is started otherwise.
    #[arg(long)]
    connect: Option<String>,
    #[arg(long, default_value = "model.pdb")]
    bundle: PathBuf,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[command(flatten)]
    attack: AttackArgs,
}

fn load_bundle(path: &Path) -> Result<Arc<ModelBundle>> {
    Ok(Arc::new(ModelBundle::load(path).with_context(|| format!("loading model bundle {}", path.display()))?))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = ["warn", "info", "debug"][cli.verbose.min(2) as usize];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => FileConfig::default(),
    };
    match cli.cmd {
        Cmd::GenClean { runs, seed, out } => {
            std::fs::create_dir_all(&out)?;
            let logs = gen_clean(runs, seed, &file.profile_options(), &file.vio()?)?;
            for l in &logs {
                l.save(&out.join(format!("session_{}.log", l.session_seed)))?;
            }
            println!("wrote {} clean sessions to {}", logs.len(), out.display());
        }
        Cmd::Train { logs, out, max_epochs, seed } => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&logs)
                .with_context(|| format!("reading {}", logs.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "log"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                bail!("no .log files in {}", logs.display());
            }
            let sessions = paths.iter().map(|p| SessionLog::load(p)).collect::<posedrift::Result<Vec<_>>>()?;
            let mut cfg = file.train()?;
            if let Some(e) = max_epochs {
                cfg.max_epochs = e;
            }
            if let Some(s) = seed {
                cfg.rng_seed = s;
            }
            let outcome = train_from_logs(&sessions, &cfg)?;
            let b = &outcome.bundle;
            b.save(&out)?;
            let th = b.thresholds;
            println!("sessions          {}", sessions.len());
            println!("rows              {} train / {} validation", b.metadata.train_rows, b.metadata.val_rows);
            println!("retained variance {:.4}", b.pca.retained_ratio);
            println!("d_out             {}", b.pca.d_out);
            println!(
                "epochs            {} (best {}, val loss {:.4e})",
                b.metadata.epochs_run, b.metadata.best_epoch, b.metadata.best_val_loss
            );
            println!("t_soft            {:.6e} (median {:.6e}, MAD {:.6e})", th.t_soft, th.median, th.mad);
            println!("t_hard            {:.6e}", th.t_hard);
            println!("bundle            {}", out.display());
        }
        Cmd::Run(args) => run(args, &file)?,
        Cmd::Sweep { bundle, out, runs, seed, bin } => {
            let spec = ExperimentSpec {
                runs_per_cell: runs,
                base_seed: seed,
                profile_opts: file.profile_options(),
                vio: file.vio()?,
                ..ExperimentSpec::default()
            };
            let result = sweep(&spec, load_bundle(&bundle)?)?;
            write_sweep(&result, &out, bin)?;
            for c in result.undefended.iter().chain(&result.defended).chain(&result.configs) {
                let r = c.best_report();
                println!(
                    "{:24} T-ATE {:8.3} cm  R-ATE {:7.3} deg  T-RPE {:7.3} cm  R-RPE {:7.3} deg",
                    c.label, r.t_ate_cm, r.r_ate_deg, r.t_rpe_cm, r.r_rpe_deg
                );
            }
            println!("tables in {}", out.display());
        }
        Cmd::Eval { log, reference, series } => {
            let est = SessionLog::load(&log)?;
            let refl = SessionLog::load(&reference)?;
            let report = evaluate(&est.trajectory(), &refl.trajectory())?;
            println!("{}\n{}", MetricReport::CSV_HEADER, report.csv_row());
            if let Some(p) = series {
                std::fs::write(&p, report.series_csv()?)?;
            }
        }
        Cmd::Bench { bundle, windows, seed } => {
            let r = bench(&bundle, windows, seed, &file.profile_options())?;
            print!("{}", r.table());
            println!("per_frame_total,{}", r.per_frame_ms());
            println!("windows,{}", r.windows);
        }
        Cmd::Serve { bind, max_sessions, attack } => {
            let attack = attack.resolve(&file)?;
            log::info!("serving on {bind} with {attack:?}");
            for r in run_server(bind.as_str(), file.vio()?, attack, max_sessions)? {
                if let Err(e) = r {
                    log::warn!("session failed: {e}");
                }
            }
        }
    }
    Ok(())
}

fn run(args: RunArgs, file: &FileConfig) -> Result<()> {
    let attack = args.attack.resolve(file)?;
    let mut spec = SessionSpec {
        profile_opts: file.profile_options(),
        vio: file.vio()?,
        ..SessionSpec::new(args.seed).with_attack(attack).with_defense(args.defense)
    };
    if let Some(t) = file.round_timeout() {
        spec.round_timeout = t;
    }
    let transport = match (args.transport, args.connect) {
        (TransportArg::Inproc, None) => Transport::InProc,
        (TransportArg::Inproc, Some(_)) => bail!("--connect needs --transport tcp"),
        (TransportArg::Tcp, None) => Transport::TcpLoopback,
        (TransportArg::Tcp, Some(addr)) => Transport::TcpRemote(addr),
    };
    let bundle = match args.defense {
        DefenseMode::Off => None,
        _ => Some(load_bundle(&args.bundle)?),
    };
    let out = run_session(&spec, &transport, bundle)?;
    let reference = run_session(&spec.clean_reference(), &Transport::InProc, None)?;
    let report = evaluate(&out.log.trajectory(), &reference.log.trajectory())?;
    let stats = VerdictStats::from_log(&out.log);

    std::fs::create_dir_all(&args.out)?;
    out.log.save(&args.out.join("session.log"))?;
    reference.log.save(&args.out.join("reference.log"))?;
    std::fs::write(args.out.join("metrics.csv"), format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row()))?;
    std::fs::write(args.out.join("series.csv"), report.series_csv()?)?;
    let mut timings = String::from("round,features_ms,preprocess_ms,inference_ms,postprocess_ms\n");
    for (i, t) in out.timings.iter().enumerate() {
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        timings.push_str(&format!(
            "{i},{},{},{},{}\n",
            ms(t.features),
            ms(t.preprocess),
            ms(t.inference),
            ms(t.postprocess)
        ));
    }
    std::fs::write(args.out.join("timings.csv"), timings)?;

    println!("{}\n{}", MetricReport::CSV_HEADER, report.csv_row());
    println!(
        "rounds {} spoofed {} lost {} | normal {} soft {} hard {} force_pass {} dropped {}",
        stats.rounds, stats.spoofed, stats.lost, stats.normal, stats.soft, stats.hard, stats.force_pass, stats.dropped
    );
    println!("outputs in {}", args.out.display());
    Ok(())
}
