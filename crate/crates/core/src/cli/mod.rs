//! Command-line front end: `train`, `eval`, `md`, `bench` and `inspect`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
//! numerical failure.

mod config;

pub use config::{DataConfig, RunConfig, CONFIG_FIELDS};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{format_table, run_bench, supercell, BenchConfig};
use crate::data::{format_frame, read_extxyz, Dataset, LabeledFrame, LennardJones, Split};
use crate::md::{run_nve, ForceProvider, MdState};
use crate::model::{Checkpoint, ModelState};
use crate::train::{evaluate_frames, LogRecord, Trainer};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LOCALFRAME_OUT_DIR";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError::Usage(m.to_string())
}

fn runtime(m: impl std::fmt::Display) -> CliError {
    CliError::Runtime(m.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "localframe", version, about = "Local-frame equivariant interatomic potential", after_long_help = CONFIG_FIELDS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "runs")]
    out_dir: PathBuf,
    /// Worker threads for batched evaluation.
    #[arg(long, default_value_t = 1)]
    device_threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a run config.
    #[command(after_long_help = CONFIG_FIELDS)]
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Disable a model component; repeatable.
        #[arg(long, value_enum)]
        ablate: Vec<Ablation>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Energy and force errors with parity files.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Extended XYZ file to evaluate.
        #[arg(long, conflicts_with = "config")]
        data: Option<PathBuf>,
        /// Run config whose dataset split to evaluate.
        #[arg(long, requires = "split")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[command(flatten)]
        common: Common,
    },
    /// NVE molecular dynamics.
    Md {
        /// Model checkpoint; omit to use `--lj`.
        #[arg(long, required_unless_present = "lj")]
        checkpoint: Option<PathBuf>,
        /// Lennard-Jones potential `epsilon_eV,sigma_A,cutoff_A` instead of a model.
        #[arg(long, value_parser = parse_lj)]
        lj: Option<LennardJones>,
        /// Starting structure, first frame of an extended XYZ file.
        #[arg(long)]
        structure: PathBuf,
        /// Time step, fs.
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 10)]
        sample_every: usize,
        /// Initial Maxwell-Boltzmann temperature, K.
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluation time and memory across supercells.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Periodic base structure.
        #[arg(long)]
        structure: PathBuf,
        /// Comma-separated repeats such as `1x1x1,2x2x2`.
        #[arg(long, value_parser = parse_repeats, default_value = "1x1x1,2x1x1,2x2x1,2x2x2,4x2x2,4x4x2")]
        repeats: Repeats,
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Skip sizes whose estimated working set exceeds this, MB.
        #[arg(long, default_value_t = 8192.0)]
        memory_limit_mb: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a checkpoint, structure file or run config.
    Inspect { path: PathBuf },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Ablation {
    Rope,
    Temporal,
    Lse,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone)]
struct Repeats(Vec<[usize; 3]>);

fn parse_lj(s: &str) -> Result<LennardJones, String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    match v[..] {
        [eps, sigma, cutoff] if eps > 0.0 && sigma > 0.0 && cutoff > 0.0 => Ok(LennardJones::new(eps, sigma, cutoff)),
        _ => Err("expected three positive numbers epsilon,sigma,cutoff".into()),
    }
}

fn parse_repeats(s: &str) -> Result<Repeats, String> {
    s.split(',')
        .map(|item| {
            let parts: Vec<usize> = item
                .trim()
                .split('x')
                .map(|p| p.parse::<usize>().map_err(|e| format!("{item}: {e}")))
                .collect::<Result<_, _>>()?;
            <[usize; 3]>::try_from(parts).map_err(|_| format!("{item}: expected AxBxC"))
        })
        .collect::<Result<_, _>>()
        .map(Repeats)
}

/// Written once per invocation next to the artifacts.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config_path: Option<PathBuf>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub device_threads: usize,
    pub artifacts: BTreeMap<String, PathBuf>,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<PathBuf, String>,
}

impl RunManifest {
    fn new(subcommand: &str, common: &Common) -> Self {
        Self {
            subcommand: subcommand.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_path: None,
            config: serde_json::Value::Null,
            seed: None,
            device_threads: common.device_threads,
            artifacts: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        self.inputs.insert(path.to_path_buf(), crate::data::sha256_hex(&bytes));
        Ok(())
    }

    fn write(&mut self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join("manifest.json");
        self.artifacts.insert("manifest".into(), path.clone());
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train {
            config,
            seed,
            ablate,
            resume,
            common,
        } => cmd_train(&config, seed, &ablate, resume.as_deref(), &common),
        Command::Eval {
            checkpoint,
            data,
            config,
            split,
            common,
        } => cmd_eval(&checkpoint, data.as_deref(), config.as_deref().zip(split), &common),
        Command::Md {
            checkpoint,
            lj,
            structure,
            dt,
            steps,
            sample_every,
            temperature,
            seed,
            common,
        } => {
            let opts = MdOptions {
                dt,
                steps,
                sample_every,
                temperature,
                seed,
            };
            cmd_md(checkpoint.as_deref(), lj, &structure, &opts, &common)
        }
        Command::Bench {
            checkpoint,
            structure,
            repeats,
            batch_size,
            reps,
            warmup,
            memory_limit_mb,
            common,
        } => {
            let cfg = BenchConfig {
                repeats: repeats.0,
                batch_size,
                reps,
                warmup,
                threads: common.device_threads,
                memory_limit_mb,
            };
            cmd_bench(&checkpoint, &structure, &cfg, &common)
        }
        Command::Inspect { path } => cmd_inspect(&path),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    if let Some(p) = cfg.data.paths.iter().find(|p| !p.exists()) {
        return Err(usage(format!("dataset file {} does not exist", p.display())));
    }
    Dataset::from_files(&cfg.data.paths, cfg.data.ratios, cfg.data.seed).map_err(usage)
}

fn cloned(frames: Vec<&LabeledFrame>) -> Vec<LabeledFrame> {
    frames.into_iter().cloned().collect()
}

fn cmd_train(
    config_path: &Path,
    seed: Option<u64>,
    ablate: &[Ablation],
    resume: Option<&Path>,
    common: &Common,
) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config_path).map_err(usage)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    for a in ablate {
        match a {
            Ablation::Rope => cfg.model.rope_enabled = false,
            Ablation::Temporal => cfg.model.temporal_enabled = false,
            Ablation::Lse => cfg.model.lse_enabled = false,
        }
    }
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(usage(format!("invalid config {}:\n  {}", config_path.display(), v.join("\n  "))));
    }
    let ds = load_dataset(&cfg)?;
    let out = &common.out_dir;
    let ck_dir = out.join("checkpoints");
    create_dir(&ck_dir)?;
    let mut manifest = RunManifest::new("train", common);
    manifest.config_path = Some(config_path.to_path_buf());
    manifest.config = serde_json::to_value(&cfg).expect("config serializes");
    manifest.seed = Some(cfg.train.seed);
    manifest.input(config_path)?;
    for p in &cfg.data.paths {
        manifest.input(p)?;
    }

    let snapshot = out.join("config.toml");
    std::fs::write(&snapshot, cfg.to_toml()).map_err(runtime)?;
    let ds_manifest = out.join("dataset.toml");
    ds.manifest().save(&ds_manifest).map_err(runtime)?;
    manifest.artifacts.insert("config_snapshot".into(), snapshot);
    manifest.artifacts.insert("dataset_manifest".into(), ds_manifest);

    let train = cloned(ds.subset(Split::Train));
    let val = cloned(ds.subset(Split::Val));
    let mut trainer = match resume {
        Some(p) => {
            manifest.input(p)?;
            let ck = load_checkpoint(p)?;
            if ck.state.config() != &cfg.model {
                return Err(usage("model config differs from the checkpoint's"));
            }
            Trainer::resume(&ck, cfg.train.clone(), train, val).map_err(usage)?
        }
        None => {
            let state = ModelState::init(&cfg.model, cfg.train.seed).map_err(usage)?;
            Trainer::new(state, cfg.train.clone(), train, val).map_err(usage)?
        }
    };

    let log_path = out.join("train_log.jsonl");
    let mut log = if resume.is_some() {
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map(BufWriter::new)
            .map_err(runtime)?
    } else {
        create(&log_path)?
    };
    let spe = trainer.steps_per_epoch();
    let mut io_err = None;
    while !trainer.is_finished() {
        let chunk = spe - trainer.step_index() % spe;
        let result = trainer.run(Some(chunk), &mut |r: &LogRecord| {
            if let LogRecord::Epoch(e) = r {
                eprintln!(
                    "epoch {:>4}  val energy {:.3} meV/atom  force {:.3} meV/Å",
                    e.epoch, e.val_energy_mae_mev_atom, e.val_force_mae_mev_a
                );
            }
            let line = serde_json::to_string(r).expect("record serializes");
            if let Err(e) = writeln!(log, "{line}") {
                io_err.get_or_insert(e);
            }
        });
        if let Err(e) = result {
            log.flush().map_err(runtime)?;
            return Err(runtime(e));
        }
        if let Some(e) = io_err.take() {
            return Err(runtime(format!("{}: {e}", log_path.display())));
        }
        let epoch = trainer.step_index().div_ceil(spe);
        let path = ck_dir.join(format!("epoch-{epoch:04}.ckpt"));
        trainer.checkpoint().save(&path).map_err(runtime)?;
        trainer.set_last_good(path);
    }
    log.flush().map_err(runtime)?;
    let model_path = out.join("model.ckpt");
    trainer.checkpoint().save(&model_path).map_err(runtime)?;
    manifest.artifacts.insert("log".into(), log_path);
    manifest.artifacts.insert("checkpoints".into(), ck_dir);
    manifest.artifacts.insert("model".into(), model_path.clone());
    manifest.write(out)?;
    println!("{}", model_path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    frames: usize,
    energy_mae_mev_atom: f64,
    force_mae_mev_a: f64,
    unfitted_species_frames: Vec<usize>,
}

fn cmd_eval(
    checkpoint: &Path,
    data: Option<&Path>,
    split: Option<(&Path, SplitArg)>,
    common: &Common,
) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let mut manifest = RunManifest::new("eval", common);
    manifest.input(checkpoint)?;
    let frames = match (data, split) {
        (Some(p), _) => {
            manifest.input(p)?;
            read_extxyz(p).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        (None, Some((cfg_path, which))) => {
            let cfg = RunConfig::load(cfg_path).map_err(usage)?;
            manifest.input(cfg_path)?;
            manifest.config_path = Some(cfg_path.to_path_buf());
            manifest.config = serde_json::to_value(&cfg).expect("config serializes");
            let ds = load_dataset(&cfg)?;
            let which = match which {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            cloned(ds.subset(which))
        }
        (None, None) => return Err(usage("one of --data or --config with --split is required")),
    };
    if frames.is_empty() {
        return Err(runtime("dataset has no frames"));
    }
    let refs: Vec<&LabeledFrame> = frames.iter().collect();
    let report = evaluate_frames(&ck.state, &refs, None).map_err(runtime)?;
    for &k in &report.unfitted_species_frames {
        eprintln!("warning: frame {k} contains species without a fitted energy shift");
    }
    let out = &common.out_dir;
    create_dir(out)?;
    let mut w = create(&out.join("parity_energy.csv"))?;
    writeln!(w, "frame,n_atoms,reference_ev,predicted_ev,unfitted_species").map_err(runtime)?;
    for r in &report.energy_rows {
        let flag = report.unfitted_species_frames.contains(&r.frame);
        writeln!(w, "{},{},{},{},{}", r.frame, r.n_atoms, r.reference, r.predicted, flag).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    let mut w = create(&out.join("parity_forces.csv"))?;
    writeln!(w, "frame,atom,axis,reference_ev_a,predicted_ev_a").map_err(runtime)?;
    for r in &report.force_rows {
        writeln!(w, "{},{},{},{},{}", r.frame, r.atom, r.axis, r.reference, r.predicted).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    let summary = EvalSummary {
        frames: report.frames,
        energy_mae_mev_atom: report.energy_mae,
        force_mae_mev_a: report.force_mae,
        unfitted_species_frames: report.unfitted_species_frames.clone(),
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(out.join("metrics.json"), text + "\n").map_err(runtime)?;
    for name in ["parity_energy.csv", "parity_forces.csv", "metrics.json"] {
        manifest.artifacts.insert(name.into(), out.join(name));
    }
    manifest.write(out)?;
    println!(
        "energy MAE {:.4} meV/atom  force MAE {:.4} meV/Å  ({} frames)",
        report.energy_mae, report.force_mae, report.frames
    );
    Ok(())
}

struct MdOptions {
    dt: f64,
    steps: usize,
    sample_every: usize,
    temperature: f64,
    seed: u64,
}

fn first_frame(path: &Path) -> Result<crate::geom::AtomicSystem, CliError> {
    let file = File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut reader = crate::data::ExtxyzReader::new(std::io::BufReader::new(file)).allow_unlabeled();
    match reader.next() {
        Some(Ok(f)) => Ok(f.system),
        Some(Err(e)) => Err(usage(format!("{}: {e}", path.display()))),
        None => Err(usage(format!("{}: no frames", path.display()))),
    }
}

fn cmd_md(
    checkpoint: Option<&Path>,
    lj: Option<LennardJones>,
    structure: &Path,
    opts: &MdOptions,
    common: &Common,
) -> Result<(), CliError> {
    if opts.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    if opts.sample_every == 0 {
        return Err(usage("--sample-every must be at least 1"));
    }
    if !(opts.dt > 0.0) {
        return Err(usage("--dt must be positive"));
    }
    let mut manifest = RunManifest::new("md", common);
    manifest.seed = Some(opts.seed);
    manifest.input(structure)?;
    manifest.config = serde_json::json!({
        "dt_fs": opts.dt,
        "steps": opts.steps,
        "sample_every": opts.sample_every,
        "temperature_k": opts.temperature,
        "potential": match &lj {
            Some(l) => serde_json::json!({"lj": [l.epsilon, l.sigma, l.cutoff]}),
            None => serde_json::json!("model"),
        },
    });
    let mut provider: Box<dyn ForceProvider> = match (checkpoint, lj) {
        (Some(p), _) => {
            manifest.input(p)?;
            Box::new(load_checkpoint(p)?.state)
        }
        (None, Some(l)) => Box::new(l),
        (None, None) => return Err(usage("one of --checkpoint or --lj is required")),
    };
    let system = first_frame(structure)?;
    let state = MdState::thermalized(system, opts.temperature, opts.seed).map_err(usage)?;
    let out = &common.out_dir;
    create_dir(out)?;
    let traj_path = out.join("trajectory.xyz");
    let samples_path = out.join("md_samples.jsonl");
    let mut traj = create(&traj_path)?;
    let mut samples = create(&samples_path)?;
    let mut io_err = None;
    let result = run_nve(&state, provider.as_mut(), opts.dt, opts.steps, opts.sample_every, &mut |st, s| {
        let mut frame = LabeledFrame::new(st.output_system(), s.potential, vec![[0.0; 3]; st.system.len()])
            .expect("finite sample");
        frame.has_forces = false;
        frame.metadata.insert("time_fs".into(), s.time.to_string());
        frame.metadata.insert("step".into(), s.step.to_string());
        let line = serde_json::to_string(s).expect("sample serializes");
        if let Err(e) = traj.write_all(format_frame(&frame).as_bytes()).and_then(|_| writeln!(samples, "{line}")) {
            io_err.get_or_insert(e);
        }
    });
    traj.flush().map_err(runtime)?;
    samples.flush().map_err(runtime)?;
    let (_, report) = result.map_err(runtime)?;
    if let Some(e) = io_err {
        return Err(runtime(e));
    }
    let report_path = out.join("md_report.json");
    let summary = serde_json::json!({
        "num_atoms": report.num_atoms,
        "dt_fs": report.dt,
        "steps": opts.steps,
        "samples": report.samples.len(),
        "drift_mev_atom_ps": report.drift_mev_atom_ps,
        "max_energy_error_ev": report.max_energy_error,
    });
    std::fs::write(&report_path, serde_json::to_string_pretty(&summary).expect("json") + "\n").map_err(runtime)?;
    manifest.artifacts.insert("trajectory".into(), traj_path);
    manifest.artifacts.insert("samples".into(), samples_path);
    manifest.artifacts.insert("report".into(), report_path);
    manifest.write(out)?;
    println!("drift {:.6} meV/atom/ps over {} samples", report.drift_mev_atom_ps, report.samples.len());
    Ok(())
}

fn cmd_bench(checkpoint: &Path, structure: &Path, cfg: &BenchConfig, common: &Common) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let base = first_frame(structure)?;
    supercell(&base, [1, 1, 1]).map_err(usage)?;
    let mut manifest = RunManifest::new("bench", common);
    manifest.input(checkpoint)?;
    manifest.input(structure)?;
    manifest.config = serde_json::to_value(cfg).expect("config serializes");
    let out = &common.out_dir;
    create_dir(out)?;
    println!("{}", crate::bench::TABLE_HEADER);
    let rows = run_bench(&ck.state, &base, cfg, &mut |r| match &r.error {
        None => println!("{:>6} atoms  {:>10.3} ms  ({:.5} ms/atom)", r.n_atoms, r.mean_ms, r.per_atom_ms()),
        Some(e) => println!("{:>6} atoms  failed: {e}", r.n_atoms),
    })
    .map_err(usage)?;
    let table = out.join("bench.csv");
    std::fs::write(&table, format_table(&rows)).map_err(runtime)?;
    let records = out.join("bench.jsonl");
    let mut w = create(&records)?;
    for r in &rows {
        writeln!(w, "{}", serde_json::to_string(r).expect("row serializes")).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    manifest.artifacts.insert("table".into(), table);
    manifest.artifacts.insert("records".into(), records);
    manifest.write(out)?;
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<(), CliError> {
    let bytes = std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(crate::model::MAGIC) {
        let ck = Checkpoint::from_bytes(&bytes).map_err(usage)?;
        let s = &ck.state;
        println!("checkpoint {}", path.display());
        println!("config {}", serde_json::to_string(s.config()).expect("json"));
        println!("parameters {} ({} trainable)", s.parameter_count(), s.trainable_count());
        let shifts: Vec<String> = s.fitted_species().iter().map(|&z| format!("{}={:.6}", crate::data::symbol(z).unwrap_or("?"), s.energy_shift(z))).collect();
        println!("energy shifts (eV) {}", shifts.join(" "));
        println!("energy scale {}", s.energy_scale());
        println!("optimizer arrays {}", ck.extra.len());
        println!("metadata {}", serde_json::to_string(&ck.metadata).expect("json"));
        return Ok(());
    }
    let text = String::from_utf8(bytes).map_err(|_| usage(format!("{}: not a checkpoint or text file", path.display())))?;
    if path.extension().is_some_and(|e| e == "toml") {
        let cfg = RunConfig::load(path).map_err(usage)?;
        let v = cfg.violations();
        print!("{}", cfg.to_toml());
        if !v.is_empty() {
            return Err(usage(format!("invalid config:\n  {}", v.join("\n  "))));
        }
        return Ok(());
    }
    let frames = crate::data::ExtxyzReader::new(text.as_bytes()).allow_unlabeled().collect::<Result<Vec<_>, _>>().map_err(usage)?;
    let atoms: usize = frames.iter().map(|f| f.num_atoms()).sum();
    let mut species = BTreeMap::new();
    for f in &frames {
        for &z in &f.system.species {
            *species.entry(crate::data::symbol(z).unwrap_or("?")).or_insert(0usize) += 1;
        }
    }
    println!("{} frames, {} atoms", frames.len(), atoms);
    println!("species {species:?}");
    println!("periodic {}", frames.iter().filter(|f| f.system.is_periodic()).count());
    println!("with forces {}", frames.iter().filter(|f| f.has_forces).count());
    println!("with stress {}", frames.iter().filter(|f| f.stress.is_some()).count());
    Ok(())
}
