//! `mpf`: command-line front end for the multi-perspective fusion pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mpf_core::generation::BackendKind;
use mpf_core::pipeline::{
    load_benchmark_file, run_pipeline, stage_decompose, stage_evaluate, stage_generate,
    stage_perspectives, stage_score, stage_sweep, write_artifact, Overrides, PipelineError,
    RunContext, RunManifest, Stage,
};

#[derive(Parser)]
#[command(
    name = "mpf",
    version,
    about = "Multi-perspective fusion: fit perspective weights to a baseline and generate aligned responses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run manifest (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the manifest output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the manifest backend kind.
    #[arg(long, global = true)]
    backend: Option<BackendArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Collect and score baseline and perspective responses.
    Score,
    /// Fit perspective weights per concept from scores.json.
    Decompose {
        /// Also run the lattice oracle and require the optimizer to match it.
        #[arg(long)]
        oracle_check: bool,
    },
    /// Generate sampled, aggregated and normal responses from weights.json.
    Generate,
    /// Score generated responses and write the report.
    Evaluate,
    /// Repeat the decomposition over a hyperparameter grid.
    Sweep,
    /// Run every stage.
    Run {
        #[arg(long)]
        oracle_check: bool,
    },
    /// Expand question templates over the concepts.
    Expand {
        /// Newline-separated concept list replacing the benchmark's concepts.
        #[arg(long, value_name = "FILE")]
        concepts: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let config = cli
        .config
        .as_ref()
        .ok_or_else(|| PipelineError::validation(Stage::Load, "--config <FILE> is required"))?;
    if let Command::Expand { concepts } = &cli.command {
        return expand(config, concepts.as_ref(), cli.out.as_ref());
    }
    let overrides = Overrides {
        seed: cli.seed,
        output_dir: cli.out.clone(),
        backend: cli.backend.map(|b| match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Http => BackendKind::Http,
        }),
    };
    let ctx = RunContext::load(config, &overrides)?;
    let out = ctx.output_dir.display().to_string();
    match &cli.command {
        Command::Score => {
            let records = stage_perspectives(&ctx)?;
            let scores = stage_score(&ctx, &records)?;
            println!("scored {} questions into {out}", scores.questions.len());
        }
        Command::Decompose { oracle_check } => {
            let weights = stage_decompose(&ctx, &ctx.read_scores()?, *oracle_check)?;
            for (concept, w) in &weights.concepts {
                let values: Vec<String> =
                    w.result.weights.iter().map(|x| format!("{x:.4}")).collect();
                println!(
                    "{concept}: [{}] objective {:.6}",
                    values.join(", "),
                    w.result.objective_value
                );
            }
        }
        Command::Generate => {
            let records = stage_generate(&ctx, &ctx.read_weights()?)?;
            println!("generated {} records into {out}", records.records.len());
        }
        Command::Evaluate => {
            let report = stage_evaluate(&ctx, &ctx.read_scores()?, &ctx.read_records()?)?;
            print!("{}", report.table());
        }
        Command::Sweep => {
            let rows = stage_sweep(&ctx, &ctx.read_scores()?)?;
            println!("swept {} grid cells into {out}/sweep.tsv", rows.len());
        }
        Command::Run { oracle_check } => {
            let (report, _) = run_pipeline(&ctx, *oracle_check)?;
            print!("{}", report.table());
        }
        Command::Expand { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn expand(
    config: &Path,
    concepts: Option<&PathBuf>,
    out: Option<&PathBuf>,
) -> Result<(), PipelineError> {
    let (manifest, base_dir) = RunManifest::load(config)?;
    let mut file = load_benchmark_file(&base_dir.join(&manifest.benchmark))?;
    if let Some(path) = concepts {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::validation(Stage::Load, format!("{}: {e}", path.display()))
        })?;
        file.concepts = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        file.baseline_responses.clear();
        file.perspective_responses.clear();
    }
    let doc = file
        .expand()
        .map_err(|e| PipelineError::validation(Stage::Expand, e))?;
    let dir = out
        .cloned()
        .unwrap_or_else(|| base_dir.join(&manifest.output_dir));
    std::fs::create_dir_all(&dir)
        .map_err(|e| PipelineError::failure(Stage::Write, format!("{}: {e}", dir.display())))?;
    let path = dir.join("benchmark_expanded.json");
    write_artifact(&path, "benchmark", &doc)?;
    println!(
        "expanded {} questions into {}",
        doc.questions.len(),
        path.display()
    );
    Ok(())
}
