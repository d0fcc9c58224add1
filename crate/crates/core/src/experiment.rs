//! Experiment harness: clean data generation, paired cells, sweeps and the latency bench.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::attack::{default_configs, AttackConfig};
use crate::autoencoder::{train, ModelBundle, TrainConfig, TrainOutcome};
use crate::detector::{DefenseMode, Detector, StageTimings};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::metrics::{evaluate, MetricReport};
use crate::motion::{ImuNoiseModel, ProfileOptions, TrajectoryProfile};
use crate::net::channel::{mem_pair, TcpChannel};
use crate::net::client::{run_client, ClientConfig, ClientOutput, DEFAULT_ROUND_TIMEOUT};
use crate::net::server::{serve_session, ServerConfig, TcpServer};
use crate::odometry::VioEmulatorConfig;
use crate::policy::{median, AnomalyClass, Decision};
use crate::session::SessionLog;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// Server thread connected by an in-memory byte queue.
    InProc,
    /// Server thread on an ephemeral loopback TCP port.
    TcpLoopback,
    /// An already running server (`host:port`); its own VIO and attack settings apply.
    TcpRemote(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    /// Selects the motion profile, IMU bias and every server-side random stream.
    pub seed: u64,
    pub profile_opts: ProfileOptions,
    pub vio: VioEmulatorConfig,
    pub attack: AttackConfig,
    pub defense: DefenseMode,
    pub round_timeout: Duration,
}

impl SessionSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            profile_opts: ProfileOptions::default(),
            vio: VioEmulatorConfig::default(),
            attack: AttackConfig::disabled(),
            defense: DefenseMode::Off,
            round_timeout: DEFAULT_ROUND_TIMEOUT,
        }
    }

    pub fn with_attack(mut self, attack: AttackConfig) -> Self {
        self.attack = attack;
        self
    }

    pub fn with_defense(mut self, defense: DefenseMode) -> Self {
        self.defense = defense;
        self
    }

    /// Same session with the attacker switched off and no defense.
    pub fn clean_reference(&self) -> Self {
        Self { attack: self.attack.with_probability(0.0), defense: DefenseMode::Off, ..self.clone() }
    }

    pub fn client_config(&self) -> ClientConfig {
        ClientConfig {
            session_seed: self.seed,
            profile: TrajectoryProfile::random(self.seed, &self.profile_opts),
            noise: ImuNoiseModel::with_random_bias(self.seed),
            defense: self.defense,
            round_timeout: self.round_timeout,
        }
    }

    pub fn server_config(&self) -> ServerConfig {
        ServerConfig { vio: self.vio, attack: self.attack }
    }
}

/// Runs one device/server session over the chosen transport.
pub fn run_session(
    spec: &SessionSpec,
    transport: &Transport,
    bundle: Option<Arc<ModelBundle>>,
) -> Result<ClientOutput> {
    let client_cfg = spec.client_config();
    let server_cfg = spec.server_config();
    server_cfg.attack.validate()?;
    match transport {
        Transport::InProc => {
            let (mut device, mut server) = mem_pair();
            let handle = thread::spawn(move || serve_session(&mut server, &server_cfg));
            let out = run_client(&mut device, &client_cfg, bundle);
            drop(device);
            let served = handle.join().map_err(|_| Error::InvalidArgument("server thread panicked".into()))?;
            let out = out?;
            served?;
            Ok(out)
        }
        Transport::TcpLoopback => {
            let server = TcpServer::bind("127.0.0.1:0", server_cfg)?;
            let addr = server.local_addr()?;
            let handle = thread::spawn(move || server.serve(Some(1)));
            let mut ch = TcpChannel::connect(addr)?;
            let out = run_client(&mut ch, &client_cfg, bundle);
            drop(ch);
            let served = handle.join().map_err(|_| Error::InvalidArgument("server thread panicked".into()))??;
            let out = out?;
            served.into_iter().collect::<Result<Vec<_>>>()?;
            Ok(out)
        }
        Transport::TcpRemote(addr) => {
            let mut ch = TcpChannel::connect(addr.as_str())?;
            run_client(&mut ch, &client_cfg, bundle)
        }
    }
}

/// Verdict and spoofing counts of one session.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerdictStats {
    pub rounds: usize,
    pub scored: usize,
    pub normal: usize,
    pub soft: usize,
    pub hard: usize,
    pub force_pass: usize,
    pub dropped: usize,
    pub spoofed: usize,
    pub lost: usize,
}

impl VerdictStats {
    pub fn from_log(log: &SessionLog) -> Self {
        let mut s = Self { rounds: log.rounds.len(), ..Self::default() };
        for r in &log.rounds {
            if r.received.is_none() {
                s.lost += 1;
            }
            if r.spoof.is_some_and(|x| x.was_spoofed) {
                s.spoofed += 1;
            }
            if r.decision == Decision::Drop {
                s.dropped += 1;
            }
            if let Some(v) = r.verdict {
                s.scored += 1;
                match v.class {
                    AnomalyClass::Normal => s.normal += 1,
                    AnomalyClass::SoftAnomaly => s.soft += 1,
                    AnomalyClass::HardAnomaly => s.hard += 1,
                }
                if v.decision == Decision::ForcePass {
                    s.force_pass += 1;
                }
            }
        }
        s
    }

    fn frac(n: usize, d: usize) -> f64 {
        if d == 0 {
            0.0
        } else {
            n as f64 / d as f64
        }
    }

    pub fn normal_fraction(&self) -> f64 {
        Self::frac(self.normal, self.scored)
    }

    pub fn hard_fraction(&self) -> f64 {
        Self::frac(self.hard, self.scored)
    }

    pub fn spoof_fraction(&self) -> f64 {
        Self::frac(self.spoofed, self.rounds)
    }
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub spec: SessionSpec,
    pub output: ClientOutput,
    pub report: MetricReport,
    pub stats: VerdictStats,
}

/// Runs `spec` and its clean, undefended twin, and scores the former against the latter.
pub fn run_cell(spec: &SessionSpec, transport: &Transport, bundle: Option<Arc<ModelBundle>>) -> Result<CellRun> {
    let reference = run_session(&spec.clean_reference(), &Transport::InProc, None)?;
    let output = run_session(spec, transport, bundle)?;
    let report = evaluate(&output.log.trajectory(), &reference.log.trajectory())?;
    let stats = VerdictStats::from_log(&output.log);
    Ok(CellRun { spec: spec.clone(), output, report, stats })
}

/// Clean, undefended sessions on seeds `base_seed..base_seed + n`.
pub fn gen_clean(n: usize, base_seed: u64, opts: &ProfileOptions, vio: &VioEmulatorConfig) -> Result<Vec<SessionLog>> {
    (0..n as u64)
        .map(|i| {
            let spec = SessionSpec { profile_opts: *opts, vio: *vio, ..SessionSpec::new(base_seed + i) };
            Ok(run_session(&spec, &Transport::InProc, None)?.log)
        })
        .collect()
}

pub fn train_from_logs(logs: &[SessionLog], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let rows: Vec<FeatureVector> = logs.iter().flat_map(|l| l.feature_rows()).collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput("feature rows in clean logs"));
    }
    let rows: Vec<&[f64]> = rows.iter().map(|f| f.as_slice()).collect();
    train(&rows, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub rates: Vec<f64>,
    /// Attack configurations; the first one is used for the rate grid.
    pub configs: Vec<AttackConfig>,
    /// Rate at which every configuration is compared.
    pub config_rate: f64,
    pub runs_per_cell: usize,
    pub base_seed: u64,
    pub profile_opts: ProfileOptions,
    pub vio: VioEmulatorConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            rates: vec![0.0, 0.25, 0.5, 0.75],
            configs: default_configs(),
            config_rate: 0.5,
            runs_per_cell: 10,
            base_seed: 1000,
            profile_opts: ProfileOptions::default(),
            vio: VioEmulatorConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rates.iter().chain([&self.config_rate]).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("spoofing rates must lie in [0, 1]".into()));
        }
        if self.configs.is_empty() || self.runs_per_cell == 0 {
            return Err(Error::Config("need at least one attack config and one run per cell".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CellSummary {
    pub label: String,
    pub rate: f64,
    pub config_index: usize,
    pub defense: DefenseMode,
    pub runs: Vec<(u64, MetricReport, VerdictStats)>,
    /// Index into `runs` of the minimum-T-ATE run.
    pub best: usize,
    /// Per-round scores of every run, `(spoofed, mse)`.
    pub scores: Vec<Vec<(bool, f64)>>,
}

impl CellSummary {
    pub fn best_report(&self) -> &MetricReport {
        &self.runs[self.best].1
    }
}

fn summarize_cell(
    label: String,
    rate: f64,
    config_index: usize,
    defense: DefenseMode,
    specs: &[SessionSpec],
    bundle: Option<&Arc<ModelBundle>>,
) -> Result<CellSummary> {
    let mut runs = Vec::with_capacity(specs.len());
    let mut scores = Vec::with_capacity(specs.len());
    for spec in specs {
        let run = run_cell(spec, &Transport::InProc, bundle.cloned())?;
        scores.push(
            run.output
                .log
                .rounds
                .iter()
                .filter_map(|r| r.verdict.map(|v| (r.spoof.is_some_and(|s| s.was_spoofed), v.mse)))
                .collect(),
        );
        runs.push((spec.seed, run.report, run.stats));
    }
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.t_ate_cm.total_cmp(&b.1 .1.t_ate_cm))
        .map(|(i, _)| i)
        .ok_or(Error::EmptyInput("cell runs"))?;
    Ok(CellSummary { label, rate, config_index, defense, runs, best, scores })
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Rate grid with the first attack configuration, defense off.
    pub undefended: Vec<CellSummary>,
    /// Same grid, defense on.
    pub defended: Vec<CellSummary>,
    /// Every configuration at `config_rate`, defense on.
    pub configs: Vec<CellSummary>,
    /// Rate grid in passive mode: every pose scored, none filtered.
    pub passive: Vec<CellSummary>,
}

/// Runs the full grid. Seeds are shared across cells so every cell is paired.
pub fn sweep(spec: &ExperimentSpec, bundle: Arc<ModelBundle>) -> Result<SweepResult> {
    spec.validate()?;
    let seeds: Vec<u64> = (0..spec.runs_per_cell as u64).map(|i| spec.base_seed + i).collect();
    let specs_for = |attack: AttackConfig, defense: DefenseMode| -> Vec<SessionSpec> {
        seeds
            .iter()
            .map(|&s| SessionSpec {
                profile_opts: spec.profile_opts,
                vio: spec.vio,
                attack,
                defense,
                ..SessionSpec::new(s)
            })
            .collect()
    };
    let base = spec.configs[0];
    let mut out = SweepResult { undefended: vec![], defended: vec![], configs: vec![], passive: vec![] };
    for &p in &spec.rates {
        let attack = base.with_probability(p);
        for (defense, dest) in [
            (DefenseMode::Off, &mut out.undefended),
            (DefenseMode::On, &mut out.defended),
            (DefenseMode::Passive, &mut out.passive),
        ] {
            let b = (defense != DefenseMode::Off).then_some(&bundle);
            let label = format!("config1_p{p}_{defense}");
            log::info!("sweep cell {label}");
            dest.push(summarize_cell(label, p, 0, defense, &specs_for(attack, defense), b)?);
        }
    }
    for (i, c) in spec.configs.iter().enumerate() {
        let label = format!("config{}_p{}_on", i + 1, spec.config_rate);
        log::info!("sweep cell {label}");
        let specs = specs_for(c.with_probability(spec.config_rate), DefenseMode::On);
        out.configs.push(summarize_cell(label, spec.config_rate, i, DefenseMode::On, &specs, Some(&bundle))?);
    }
    Ok(out)
}

fn metric_table(cells: &[CellSummary], key: &str, key_of: impl Fn(&CellSummary) -> String) -> String {
    let mut s = format!("{key},T-ATE_cm,R-ATE_deg,T-RPE_cm,R-RPE_deg,best_seed\n");
    for c in cells {
        let r = c.best_report();
        writeln!(s, "{},{},{},{},{},{}", key_of(c), r.t_ate_cm, r.r_ate_deg, r.t_rpe_cm, r.r_rpe_deg, c.runs[c.best].0)
            .expect("string write");
    }
    s
}

fn all_runs_table(cells: &[CellSummary]) -> String {
    let mut s = String::from(
        "cell,rate,config,defense,seed,T-ATE_cm,R-ATE_deg,T-RPE_cm,R-RPE_deg,rounds,spoofed,normal,soft,hard,force_pass,best\n",
    );
    for c in cells {
        for (i, (seed, r, st)) in c.runs.iter().enumerate() {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.label,
                c.rate,
                c.config_index + 1,
                c.defense,
                seed,
                r.t_ate_cm,
                r.r_ate_deg,
                r.t_rpe_cm,
                r.r_rpe_deg,
                st.rounds,
                st.spoofed,
                st.normal,
                st.soft,
                st.hard,
                st.force_pass,
                (i == c.best) as u8
            )
            .expect("string write");
        }
    }
    s
}

/// Mean score per consecutive bin of `bin` slow poses, pooled over the cell's runs.
pub fn binned_means(scores: &[Vec<(bool, f64)>], bin: usize) -> Vec<f64> {
    let longest = scores.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest.div_ceil(bin.max(1)))
        .map(|b| {
            let vals: Vec<f64> = scores
                .iter()
                .flat_map(|run| run.iter().skip(b * bin).take(bin).map(|x| x.1))
                .filter(|v| v.is_finite())
                .collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        })
        .collect()
}

/// Log-spaced histogram edges spanning every finite score.
fn histogram(scores: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut h = vec![0; bins];
    for &s in scores.iter().filter(|s| s.is_finite() && **s > 0.0) {
        let t = ((s.ln() - llo) / (lhi - llo) * bins as f64).floor();
        h[(t.max(0.0) as usize).min(bins - 1)] += 1;
    }
    h
}

/// Writes all sweep tables into `dir`:
/// `table_undefended.csv`, `table_defended.csv`, `table_configs.csv`,
/// `runs.csv`, `mse_bins.csv` and `mse_histogram.csv`.
pub fn write_sweep(result: &SweepResult, dir: &Path, bin: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let pct = |c: &CellSummary| format!("{}", c.rate * 100.0);
    std::fs::write(dir.join("table_undefended.csv"), metric_table(&result.undefended, "spoof_pct", pct))?;
    std::fs::write(dir.join("table_defended.csv"), metric_table(&result.defended, "spoof_pct", pct))?;
    std::fs::write(
        dir.join("table_configs.csv"),
        metric_table(&result.configs, "config", |c| format!("{}", c.config_index + 1)),
    )?;
    let every: Vec<CellSummary> = [&result.undefended, &result.defended, &result.passive, &result.configs]
        .into_iter()
        .flatten()
        .cloned()
        .collect();
    std::fs::write(dir.join("runs.csv"), all_runs_table(&every))?;

    let mut bins = String::from("cell,bin,mean_mse\n");
    for c in result.passive.iter().chain(&result.defended) {
        for (i, m) in binned_means(&c.scores, bin).iter().enumerate() {
            writeln!(bins, "{},{i},{m}", c.label).expect("string write");
        }
    }
    std::fs::write(dir.join("mse_bins.csv"), bins)?;

    let pooled: Vec<Vec<f64>> =
        result.passive.iter().map(|c| c.scores.iter().flatten().map(|x| x.1).collect()).collect();
    let finite = pooled.iter().flatten().copied().filter(|v| v.is_finite() && *v > 0.0);
    let (lo, hi) = finite.fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(v), h.max(v)));
    let mut hist = String::from("cell,bin_lo,bin_hi,count\n");
    if hi > lo {
        let n = 60;
        for (c, scores) in result.passive.iter().zip(&pooled) {
            for (i, count) in histogram(scores, n, lo, hi).iter().enumerate() {
                let edge = |k: usize| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / n as f64).exp();
                writeln!(hist, "{},{},{},{count}", c.label, edge(i), edge(i + 1)).expect("string write");
            }
        }
    }
    std::fs::write(dir.join("mse_histogram.csv"), hist)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub load: Duration,
    pub windows: usize,
    pub features_ms: f64,
    pub preprocess_ms: f64,
    pub inference_ms: f64,
    pub postprocess_ms: f64,
}

impl BenchReport {
    pub fn per_frame_ms(&self) -> f64 {
        self.features_ms + self.preprocess_ms + self.inference_ms + self.postprocess_ms
    }

    pub fn table(&self) -> String {
        format!(
            "stage,mean_ms\nmodel_and_scaler_load_once,{}\nfeature_extraction,{}\npreprocessing_pca,{}\nautoencoder_inference,{}\nthreshold_postprocessing,{}\n",
            self.load.as_secs_f64() * 1e3,
            self.features_ms,
            self.preprocess_ms,
            self.inference_ms,
            self.postprocess_ms
        )
    }
}

/// Loads the bundle once, then times every detection stage on at least
/// `min_windows` recorded windows taken from attacked sessions.
pub fn bench(bundle_path: &Path, min_windows: usize, base_seed: u64, opts: &ProfileOptions) -> Result<BenchReport> {
    let t0 = Instant::now();
    let bundle = Arc::new(ModelBundle::load(bundle_path)?);
    let load = t0.elapsed();

    let mut sessions = Vec::new();
    let mut available = 0;
    let mut seed = base_seed;
    while available < min_windows.max(1) {
        let spec = SessionSpec { profile_opts: *opts, ..SessionSpec::new(seed) }
            .with_attack(default_configs()[0].with_probability(0.5));
        let log = run_session(&spec, &Transport::InProc, None)?.log;
        available += log.rounds.iter().filter(|r| r.received.is_some()).count();
        sessions.push(log);
        seed += 1;
    }

    let mut total = StageTimings::default();
    let mut n = 0usize;
    for log in &sessions {
        let mut det = Detector::new(bundle.clone())?;
        let mut prev = log.rounds[0].anchor;
        for r in &log.rounds {
            let Some(incoming) = r.received else { continue };
            let window = log.window(r);
            let d = det.step(&window, &incoming, &prev)?;
            total.features += d.timings.features;
            total.preprocess += d.timings.preprocess;
            total.inference += d.timings.inference;
            total.postprocess += d.timings.postprocess;
            n += 1;
            if d.verdict.decision.adopts_pose() {
                prev = incoming;
            }
        }
    }
    let ms = |d: Duration| d.as_secs_f64() * 1e3 / n as f64;
    Ok(BenchReport {
        load,
        windows: n,
        features_ms: ms(total.features),
        preprocess_ms: ms(total.preprocess),
        inference_ms: ms(total.inference),
        postprocess_ms: ms(total.postprocess),
    })
}

/// Median of the finite scores, for quick summaries.
pub fn median_score(scores: &[f64]) -> Option<f64> {
    let f: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    median(&f)
}
