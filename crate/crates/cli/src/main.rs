use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use madrec::agent::TaskKind;
use madrec::eval::render_table;
use madrec::llm::{Backend, HttpBackend, MockBackend};
use madrec::pipeline::{self, RunConfig, Stage};
use madrec::synth::{generate_corpus, SynthConfig};
use madrec::RerankWeights;

#[derive(Parser, Debug)]
#[command(name = "madrec", version, about = "Multi-aspect profile recommendation agent")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct GlobalOpts {
    /// TOML run configuration; relative paths resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every seeded step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the deterministic offline backend.
    #[arg(long, global = true)]
    mock: bool,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Rescale weights that do not sum to 1 instead of rejecting them.
    #[arg(long, global = true)]
    normalize_weights: bool,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    pool_size: Option<usize>,
    #[arg(long, global = true)]
    rerank_top_k: Option<usize>,
    #[arg(long, global = true)]
    max_rounds: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Keep feedback-adjusted weights across users (runs users one at a time).
    #[arg(long, global = true)]
    carry_weights: bool,
    /// Disable candidate re-ranking.
    #[arg(long, global = true)]
    no_rr: bool,
    /// Disable self-feedback.
    #[arg(long, global = true)]
    no_sf: bool,
    /// Validate the configuration and print the plan without running.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic corpus, word vectors and a matching config.
    Synth(SynthArgs),
    /// Load, k-core filter and split the reviews.
    Ingest,
    /// Cluster review vocabulary into named aspect categories.
    ExtractAspects,
    /// Summarize reviews into user and item profiles.
    BuildProfiles,
    /// Recommend for one evaluation user.
    Recommend(UserArgs),
    /// Recommend with explanations for one evaluation user.
    Explain {
        #[arg(long)]
        user: String,
    },
    /// Evaluate every user under the configured switches.
    Evaluate {
        #[arg(long)]
        task: Option<TaskKind>,
    },
    /// Run the re-ranking / self-feedback grid.
    Ablate,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
}

#[derive(Args, Debug)]
struct UserArgs {
    #[arg(long)]
    user: String,
    #[arg(long, default_value = "direct")]
    task: TaskKind,
}

fn load_config(opts: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            cfg.resolve_paths(base);
            cfg
        }
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, opts)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, o: &GlobalOpts) -> Result<()> {
    if let Some(s) = o.seed {
        cfg.set_seed(s);
    }
    if o.alpha.is_some() || o.beta.is_some() || o.gamma.is_some() || o.normalize_weights {
        let w = cfg.eval.weights;
        cfg.eval.weights = RerankWeights::from_user(
            o.alpha.unwrap_or(w.alpha),
            o.beta.unwrap_or(w.beta),
            o.gamma.unwrap_or(w.gamma),
            o.normalize_weights,
        )?;
    }
    if let Some(v) = o.top_k {
        cfg.eval.top_k = v;
    }
    if let Some(v) = o.pool_size {
        cfg.eval.pool_size = v;
    }
    if let Some(v) = o.rerank_top_k {
        cfg.eval.rerank_top_k = v;
    }
    if let Some(v) = o.max_rounds {
        cfg.eval.max_rounds = v;
    }
    if let Some(v) = o.workers {
        cfg.workers = v;
    }
    cfg.eval.carry_weights |= o.carry_weights;
    if o.no_rr {
        cfg.eval.use_rr = false;
    }
    if o.no_sf {
        cfg.eval.use_sf = false;
    }
    Ok(())
}

fn backend(cfg: &RunConfig, mock: bool) -> Result<Box<dyn Backend>> {
    if mock {
        return Ok(Box::new(MockBackend::new()));
    }
    Ok(Box::new(HttpBackend::from_env(cfg.llm.clone()).context(
        "live backend unavailable (set the API key variable named in [llm].api_key_env, or pass --mock)",
    )?))
}

/// Write to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn synth(args: &SynthArgs, opts: &GlobalOpts) -> Result<()> {
    let mut sc = SynthConfig::default();
    if let Some(s) = opts.seed {
        sc.seed = s;
    }
    if let Some(u) = args.users {
        sc.users = u;
    }
    if let Some(i) = args.items {
        sc.items = i;
    }
    if opts.dry_run {
        println!("would write {} users x {} items to {}", sc.users, sc.items, args.out.display());
        return Ok(());
    }
    let corpus = generate_corpus(&sc)?;
    corpus.write(&args.out)?;
    let mut cfg = RunConfig::default();
    cfg.paths.reviews = "reviews.jsonl".into();
    cfg.paths.word_vectors = Some("vectors.txt".into());
    cfg.paths.out = "out".into();
    cfg.paths.store = "out/store".into();
    cfg.aspects.k = madrec::synth::THEMES.len();
    fs::write(args.out.join("madrec.toml"), toml::to_string(&cfg)?)?;
    println!(
        "wrote {} reviews and {} vectors to {}",
        corpus.reviews.len(),
        corpus.vectors.len(),
        args.out.display()
    );
    Ok(())
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Synth(_) => return None,
        Command::Ingest => Stage::Ingest,
        Command::ExtractAspects => Stage::ExtractAspects,
        Command::BuildProfiles => Stage::BuildProfiles,
        Command::Recommend(_) => Stage::Recommend,
        Command::Explain { .. } => Stage::Explain,
        Command::Evaluate { .. } => Stage::Evaluate,
        Command::Ablate => Stage::Ablate,
    })
}

fn run(cli: Cli) -> Result<()> {
    let opts = &cli.global;
    let Some(stage) = stage_of(&cli.command) else {
        let Command::Synth(args) = &cli.command else { unreachable!() };
        return synth(args, opts);
    };
    let mut cfg = load_config(opts)?;
    if let Command::Evaluate { task: Some(t) } = &cli.command {
        cfg.eval.task = *t;
    }
    cfg.validate(stage)?;

    if opts.dry_run {
        println!("backend: {}", if opts.mock { "mock" } else { "live" });
        for line in pipeline::plan(&cfg, stage) {
            println!("{line}");
        }
        println!("\n{}", toml::to_string(&cfg)?);
        return Ok(());
    }

    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = Arc::clone(&cancel);
        ctrlc::set_handler(move || {
            if cancel.swap(true, Ordering::SeqCst) {
                std::process::exit(130);
            }
            eprintln!("interrupt: finishing in-flight users, press Ctrl-C again to abort");
        })
        .context("installing the interrupt handler")?;
    }

    let backend = backend(&cfg, opts.mock)?;
    let backend = backend.as_ref();
    match &cli.command {
        Command::Synth(_) => unreachable!(),
        Command::Ingest => print_json(&pipeline::ingest(&cfg)?)?,
        Command::ExtractAspects => print_json(&pipeline::extract_aspects_stage(&cfg, backend)?)?,
        Command::BuildProfiles => print_json(&pipeline::build_profiles_stage(&cfg, backend)?)?,
        Command::Recommend(a) => print_json(&pipeline::recommend(&cfg, backend, &a.user, a.task)?)?,
        Command::Explain { user } => print_json(&pipeline::recommend(&cfg, backend, user, TaskKind::Explanation)?)?,
        Command::Evaluate { .. } => {
            let report = pipeline::evaluate_stage(&cfg, backend, Some(&cancel))?;
            emit(&render_table(&[&report]))?;
        }
        Command::Ablate => {
            let reports = pipeline::ablate(&cfg, backend, Some(&cancel))?;
            emit(&fs::read_to_string(cfg.paths.out.join("ablation.txt"))?)?;
            log::info!("{} reports written", reports.len());
        }
    }
    if cancel.load(Ordering::SeqCst) {
        bail!("interrupted; partial results were written");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
