use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpaug_core::config::{MechanismTarget, ResolvedConfig, RunConfig, Seeds};
use dpaug_core::corpus::set_private_access_hook;
use dpaug_core::eval::{run_experiment, ExperimentConfig};
use dpaug_core::fixture::{generate, FixtureSpec};
use dpaug_core::rundir::{self, RunDir};
use dpaug_core::source::SourceKind;
use dpaug_core::Error;

/// Differentially private data augmentation for text classification.
#[derive(Parser)]
#[command(name = "dpaug", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize and deduplicate the private corpus into the run directory.
    Ingest(StageArgs),
    /// Assign private records to teacher shards.
    Partition(StageArgs),
    /// Train one teacher per shard.
    TrainTeachers(StageArgs),
    /// Query the teachers with noise and train the student discriminator.
    Distill(StageArgs),
    /// Release the noisy private label distribution.
    Tutor(StageArgs),
    /// Request candidates per class from the source.
    Generate(StageArgs),
    /// Score candidates, select the augmented set and close the ledger.
    Select(StageArgs),
    /// Run every stage.
    Run {
        #[command(flatten)]
        stage: StageArgs,
        /// Remove artifacts of an earlier run in the output directory.
        #[arg(long)]
        force: bool,
    },
    /// Experiments over the synthetic fixture.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Print the privacy budget of a run directory.
    Account {
        /// Run directory.
        #[arg(long)]
        run: PathBuf,
        /// δ at which to state ε; defaults to the run's report_delta.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Write the synthetic two-domain fixture corpora.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        classes: Option<usize>,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Run the experiment grid and write JSON/CSV series.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct StageArgs {
    /// TOML config, or the manifest.json of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    private: Option<PathBuf>,
    #[arg(long)]
    public: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    teachers: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    n_aug: Option<usize>,
    #[arg(long)]
    oversample: Option<usize>,
    #[arg(long)]
    min_score: Option<f64>,
    #[arg(long)]
    merge_pools: bool,
    #[arg(long)]
    sigma_kd: Option<f64>,
    #[arg(long)]
    epsilon_kd: Option<f64>,
    #[arg(long)]
    delta_kd: Option<f64>,
    #[arg(long)]
    sigma_tutor: Option<f64>,
    #[arg(long)]
    epsilon_tutor: Option<f64>,
    #[arg(long)]
    delta_tutor: Option<f64>,
    /// Derive every seed from this value.
    #[arg(long)]
    seed: Option<u64>,
    /// Draw privacy noise from OS entropy; runs are no longer reproducible.
    #[arg(long)]
    secure_noise: bool,
    #[arg(long, value_parser = ["file", "http"])]
    source: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    template_file: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Requests per minute.
    #[arg(long)]
    rate_limit: Option<u32>,
}

fn override_target(
    target: &mut MechanismTarget,
    name: &str,
    sigma: Option<f64>,
    epsilon: Option<f64>,
    delta: Option<f64>,
) -> Result<(), Error> {
    match (sigma, epsilon.is_some() || delta.is_some()) {
        (Some(_), true) => Err(Error::Config(format!(
            "--sigma-{name} conflicts with --epsilon-{name}/--delta-{name}"
        ))),
        (Some(s), false) => {
            *target = MechanismTarget::sigma(s);
            Ok(())
        }
        (None, true) => {
            let fallback = target.delta.unwrap_or(1e-6);
            *target = MechanismTarget {
                sigma: None,
                epsilon: epsilon.or(target.epsilon),
                delta: Some(delta.unwrap_or(fallback)),
            };
            Ok(())
        }
        (None, false) => Ok(()),
    }
}

impl StageArgs {
    fn resolve(&self) -> Result<ResolvedConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let paths = &mut cfg.paths;
        if let Some(p) = &self.out {
            paths.out = p.clone();
        }
        for (slot, flag) in [
            (&mut paths.private, &self.private),
            (&mut paths.public, &self.public),
            (&mut paths.vocab, &self.vocab),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if let Some(m) = self.teachers {
            cfg.teachers = m;
        }
        if let Some(q) = self.queries {
            cfg.queries = q;
        }
        if let Some(n) = self.n_aug {
            cfg.n_aug = n;
        }
        if let Some(o) = self.oversample {
            cfg.oversample = o;
        }
        if self.min_score.is_some() {
            cfg.min_score = self.min_score;
        }
        cfg.merge_pools |= self.merge_pools;
        cfg.secure_noise |= self.secure_noise;
        if let Some(s) = self.seed {
            cfg.seeds = Seeds::from_base(s);
        }
        override_target(&mut cfg.kd, "kd", self.sigma_kd, self.epsilon_kd, self.delta_kd)?;
        override_target(&mut cfg.tutor, "tutor", self.sigma_tutor, self.epsilon_tutor, self.delta_tutor)?;

        let src = &mut cfg.source;
        if let Some(kind) = &self.source {
            src.kind = if kind == "http" { SourceKind::Http } else { SourceKind::File };
        }
        if self.endpoint.is_some() {
            src.endpoint = self.endpoint.clone();
        }
        if let Some(m) = &self.model {
            src.model = m.clone();
        }
        if self.api_key_env.is_some() {
            src.api_key_env = self.api_key_env.clone();
        }
        if self.template_file.is_some() {
            src.template_file = self.template_file.clone();
        }
        if self.cache_dir.is_some() {
            src.cache_dir = self.cache_dir.clone();
        }
        if let Some(r) = self.rate_limit {
            src.rate_limit_per_minute = r;
        }
        cfg.resolve()
    }
}

/// With `DPAUG_ACCESS_AUDIT` set, every private-corpus open is appended to
/// that file as `<subcommand>\t<path>`.
fn install_access_audit(subcommand: &'static str) {
    let Some(log) = std::env::var_os("DPAUG_ACCESS_AUDIT") else {
        return;
    };
    let log = PathBuf::from(log);
    set_private_access_hook(move |path: &Path| {
        let line = format!("{subcommand}\t{}\n", path.display());
        let written = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .and_then(|mut f| f.write_all(line.as_bytes()));
        if let Err(e) = written {
            log::error!("cannot write access audit {}: {e}", log.display());
        }
    });
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::Parse { .. }
        | Error::UnknownLabel { .. } => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::PrivacyViolation(_) => 3,
        Error::Transport { .. } => 4,
        Error::Shortage { .. } | Error::Exhausted { .. } => 5,
        _ => 1,
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest(_) => "ingest",
        Command::Partition(_) => "partition",
        Command::TrainTeachers(_) => "train-teachers",
        Command::Distill(_) => "distill",
        Command::Tutor(_) => "tutor",
        Command::Generate(_) => "generate",
        Command::Select(_) => "select",
        Command::Run { .. } => "run",
        Command::Eval { .. } => "eval",
        Command::Account { .. } => "account",
        Command::MakeFixture { .. } => "make-fixture",
    }
}

fn execute(cmd: Command) -> Result<(), Error> {
    let stage = |args: &StageArgs| -> Result<(ResolvedConfig, RunDir), Error> {
        let resolved = args.resolve()?;
        let run = RunDir::new(resolved.config.paths.out.clone());
        Ok((resolved, run))
    };
    match cmd {
        Command::Ingest(a) => {
            let (cfg, run) = stage(&a)?;
            let s = rundir::stage_ingest(&cfg, &run)?;
            println!("kept {} of {} private records", s.kept, s.read);
        }
        Command::Partition(a) => {
            let (cfg, run) = stage(&a)?;
            let plan = rundir::stage_partition(&cfg, &run)?;
            println!("{} shards, sizes {:?}", plan.shard_count, plan.sizes());
        }
        Command::TrainTeachers(a) => {
            let (cfg, run) = stage(&a)?;
            let e = rundir::stage_train_teachers(&cfg, &run)?;
            println!("trained {} teachers", e.len());
        }
        Command::Distill(a) => {
            let (cfg, run) = stage(&a)?;
            let r = rundir::stage_distill(&cfg, &run)?;
            println!(
                "{} queries at sigma {:.6}; noisy/noiseless agreement {:.3}",
                r.queries, r.sigma_kd, r.agreement_rate
            );
        }
        Command::Tutor(a) => {
            let (cfg, run) = stage(&a)?;
            let d = rundir::stage_tutor(&cfg, &run)?;
            for (label, p) in d.labels.iter().zip(d.probs.probs()) {
                println!("{label}\t{p:.6}");
            }
        }
        Command::Generate(a) => {
            let (cfg, run) = stage(&a)?;
            let q = rundir::stage_generate(&cfg, &run)?;
            println!("quota {:?} (total {})", q.counts, q.total);
        }
        Command::Select(a) => {
            let (cfg, run) = stage(&a)?;
            let m = rundir::stage_select(&cfg, &run)?;
            print_manifest(&m);
        }
        Command::Run { stage: a, force } => {
            let (cfg, run) = stage(&a)?;
            if run.path(rundir::MANIFEST).exists() || run.path(rundir::LEDGER).exists() {
                if !force {
                    return Err(Error::Config(format!(
                        "{} already holds a run; pass --force to replace it",
                        run.root().display()
                    )));
                }
                run.clear()?;
            }
            let m = rundir::run_all(&cfg, &run)?;
            print_manifest(&m);
        }
        Command::Eval {
            command: EvalCommand::Grid { config, out },
        } => {
            let cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    ExperimentConfig::from_toml(&text)?
                }
                None => ExperimentConfig::default(),
            };
            let report = run_experiment(&cfg)?;
            report.save(&out)?;
            println!(
                "{} downstream rows, {} teacher rows written to {}",
                report.downstream.len(),
                report.teachers.len(),
                out.display()
            );
        }
        Command::Account { run, delta, json } => {
            let report = rundir::account(&RunDir::new(run), delta)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::MakeFixture { out, seed, classes } => {
            let mut spec = FixtureSpec {
                seed,
                ..FixtureSpec::default()
            };
            if let Some(c) = classes {
                spec.classes = c;
            }
            let f = generate(&spec)?;
            f.save(&out)?;
            println!(
                "wrote {} private, {} test and {} public records to {}",
                f.private.len(),
                f.test.len(),
                f.public.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn print_manifest(m: &rundir::Manifest) {
    println!("selected {} records", m.augmented_records);
    for (mech, b) in &m.mechanisms {
        println!("{mech}: (epsilon {:.6}, delta {:e})", b.epsilon, b.delta);
    }
    println!("total: (epsilon {:.6}, delta {:e})", m.total.epsilon, m.total.delta);
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    install_access_audit(name(&cli.command));
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
