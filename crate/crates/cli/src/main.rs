//! `t2ijudge` command-line interface.
//!
//! Exit codes: 0 success, 1 partial failure (some chain recorded errors, or
//! a non-configuration failure), 2 configuration or input error.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use t2ijudge::gateway::{Gateway, ImageArtifact};
use t2ijudge::prompt::templates::TemplateSet;
use t2ijudge::runner::{self, read_ledger, report, Gateways, Mode, RunConfig, RunError, RunLedger};
use t2ijudge::scoring::{self, Scorer};
use t2ijudge::stats::{kendall_tau, spearman_rho, RankVector};

#[derive(Parser)]
#[command(name = "t2ijudge", version, about = "Agentic text-to-image evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Route every endpoint to a mock script: "echo", "synthetic",
    /// "scripted", "scripted-fault", or a TOML rule file.
    #[arg(long)]
    mock: Option<String>,
    /// Question-generation template family.
    #[arg(long, value_parser = parse_template_set)]
    template_set: Option<TemplateSet>,
}

#[derive(Subcommand)]
enum Command {
    /// Run generation and scoring; writes one ledger per model and repeat.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        iterations: Option<u32>,
        #[arg(long)]
        repeats: Option<u32>,
    },
    /// Score one image against a prompt with the configured judge.
    Score {
        #[command(flatten)]
        common: Common,
        /// PNG file.
        image: PathBuf,
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long, value_enum, default_value_t = Method::Vqascore)]
        method: Method,
    },
    /// Per-iteration series, charts and metric correlations from ledgers.
    Analyze {
        #[arg(required = true)]
        ledgers: Vec<PathBuf>,
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
    },
    /// Rank models from ledgers, optionally against a reference ranking.
    Rank {
        #[arg(required = true)]
        ledgers: Vec<PathBuf>,
        #[arg(long, default_value = "ranking")]
        out: PathBuf,
        #[arg(long)]
        reference_ranking: Option<PathBuf>,
    },
    /// Kendall tau and Spearman rho between two ranking files.
    Compare { a: PathBuf, b: PathBuf },
    /// Parse and check a configuration without running it.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Vqascore,
    VqaAccuracy,
    Aesthetic,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("unknown mode {s:?} (iterative, adaptive, static, aesthetic)"))
}

fn parse_template_set(s: &str) -> Result<TemplateSet, String> {
    TemplateSet::parse(s).ok_or_else(|| format!("unknown template set {s:?} (llama, molmo, llava)"))
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn other(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

impl From<t2ijudge::stats::StatsError> for Failure {
    fn from(e: t2ijudge::stats::StatsError) -> Self {
        Failure::other(e.to_string())
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut c = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &common.mock {
        c.apply_mock(m);
    }
    if let Some(t) = common.template_set {
        c.template_set = t;
    }
    Ok(c)
}

fn file_stem(model: &str) -> String {
    model.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn cmd_run(common: &Common, out: &Path, mode: Option<Mode>, iterations: Option<u32>, repeats: Option<u32>) -> Result<u8, Failure> {
    let mut config = load_config(common)?;
    if let Some(m) = mode {
        config.mode = m;
    }
    if let Some(n) = iterations {
        config.iterations_per_seed = n;
    }
    if let Some(n) = repeats {
        config.repeat_count = n;
    }
    let gateways = Gateways::connect(&config)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::other(format!("{}: {e}", out.display())))?;
    let mut partial = false;
    for m in 0..gateways.t2i.len() {
        let model = gateways.t2i[m].model_id().to_string();
        for r in 0..config.repeat_count {
            let path = out.join(format!("{}-r{r}.jsonl", file_stem(&model)));
            let file = File::create(&path).map_err(|e| Failure::other(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            let ledger = runner::run_one(&config, &gateways, m, r, Some(&mut w))?;
            drop(w);
            print_chains(&ledger);
            println!("wrote {} ({} records, {} errors)", path.display(), ledger.record_count(), ledger.error_count());
            partial |= ledger.has_errors();
        }
    }
    Ok(if partial { 1 } else { 0 })
}

fn print_chains(l: &RunLedger) {
    for ch in &l.chains {
        let seed = ch.category.map(|c| c.name().to_string()).unwrap_or_else(|| "-".into());
        let last = ch.records.last().map(|r| format!("{:.3}", r.score.value())).unwrap_or_else(|| "NA".into());
        let fin = ch.final_score.as_ref().map(|f| format!("{:.3}", f.value)).unwrap_or_else(|| "NA".into());
        let status = match ch.errors.first() {
            None => "ok".to_string(),
            Some(e) => format!("error at iteration {} ({:?}): {}", e.iteration, e.stage, e.message),
        };
        println!("{} r{} chain {} [{seed}] records={} last={last} final={fin} {status}", l.model, l.repeat, ch.index, ch.records.len());
    }
}

fn cmd_score(common: &Common, image: &Path, prompt: Option<&str>, method: Method) -> Result<u8, Failure> {
    let config = load_config(common)?;
    let ep = config.endpoints.mllm.clone().ok_or_else(|| Failure::config("missing required key endpoints.mllm"))?;
    let bytes = std::fs::read(image).map_err(|e| Failure::config(format!("{}: {e}", image.display())))?;
    let artifact = ImageArtifact::from_png(bytes, prompt.unwrap_or_default()).map_err(|e| Failure::config(format!("{}: {e}", image.display())))?;
    let gw = Gateway::connect(ep).map_err(|e| Failure::config(e.to_string()))?;
    let opts = config.judge_options();
    let need_prompt = || prompt.ok_or_else(|| Failure::config("--prompt is required for consistency scoring"));
    let value = match method {
        Method::Aesthetic => scoring::aesthetic_score(&gw, &artifact, &opts).map_err(|e| Failure::other(e.to_string()))?.value(),
        Method::Vqascore | Method::VqaAccuracy => {
            let scorer = if matches!(method, Method::Vqascore) { Scorer::Vqascore } else { Scorer::VqaAccuracy };
            scoring::consistency(&gw, &artifact, need_prompt()?, scorer, &opts).map_err(|e| Failure::other(e.to_string()))?.value()
        }
    };
    println!("{value}");
    Ok(0)
}

fn read_ledgers(paths: &[PathBuf]) -> Result<Vec<RunLedger>, Failure> {
    paths.iter().map(|p| read_ledger(p).map_err(|e| Failure::other(format!("{}: {e}", p.display())))).collect()
}

fn read_ranking(p: &Path) -> Result<RankVector, Failure> {
    let text = std::fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
    RankVector::from_tsv(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))
}

fn cmd_analyze(ledgers: &[PathBuf], out: &Path) -> Result<u8, Failure> {
    let r = report(&read_ledgers(ledgers)?, None)?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    for f in r.write_analysis(out)? {
        println!("{}", out.join(f).display());
    }
    Ok(0)
}

fn cmd_rank(ledgers: &[PathBuf], out: &Path, reference: Option<&Path>) -> Result<u8, Failure> {
    let reference = reference.map(read_ranking).transpose()?;
    let r = report(&read_ledgers(ledgers)?, reference.as_ref())?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", r.model_scores_tsv());
    if let (Some(t), Some(rho)) = (r.reference_tau, r.reference_rho) {
        println!("{t}\n{rho}");
    }
    r.write_ranking(out)?;
    Ok(0)
}

fn cmd_compare(a: &Path, b: &Path) -> Result<u8, Failure> {
    let (a, b) = (read_ranking(a)?, read_ranking(b)?);
    let tau = kendall_tau(&a, &b).map_err(|e| Failure::config(e.to_string()))?;
    let rho = spearman_rho(&a, &b).map_err(|e| Failure::config(e.to_string()))?;
    println!("{tau}\n{rho}");
    Ok(0)
}

fn cmd_validate(common: &Common) -> Result<u8, Failure> {
    let c = load_config(common)?;
    Gateways::connect(&c)?;
    let models: Vec<&str> = c.endpoints.t2i.iter().map(|e| e.model_id.as_str()).collect();
    let shape = match c.mode {
        Mode::Static | Mode::Aesthetic => format!("{} prompts", c.chain_count()),
        _ => format!("{} chains x {} iterations", c.chain_count(), c.iterations_per_seed),
    };
    println!("ok: mode {}, {shape}, {} repeats, models {models:?}", c.mode.name(), c.repeat_count);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, out, mode, iterations, repeats } => cmd_run(common, out, *mode, *iterations, *repeats),
        Command::Score { common, image, prompt, method } => cmd_score(common, image, prompt.as_deref(), *method),
        Command::Analyze { ledgers, out } => cmd_analyze(ledgers, out),
        Command::Rank { ledgers, out, reference_ranking } => cmd_rank(ledgers, out, reference_ranking.as_deref()),
        Command::Compare { a, b } => cmd_compare(a, b),
        Command::ValidateConfig { common } => cmd_validate(common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
