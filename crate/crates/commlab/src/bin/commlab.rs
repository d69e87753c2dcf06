use clap::{Parser, Subcommand};
use commlab::report::{
    emit_report, model_name, run_experiment, selftest, ExperimentConfig, ReportFormat, ALL_MODELS,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "commlab",
    about = "Two-party protocol laboratory: run seeded experiment pipelines and emit reports"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the per-case trial count.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long, global = true)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// List the problem families and their parameters.
    ListProblems,
    /// List the pipelines and the schemes each one exercises.
    ListSchemes,
    /// Run a quick fixed-seed health check.
    Selftest,
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { ref config } => run(&cli, config),
        Cmd::ListProblems => {
            list_problems();
            ExitCode::SUCCESS
        }
        Cmd::ListSchemes => {
            list_schemes();
            ExitCode::SUCCESS
        }
        Cmd::Selftest => run_selftest(cli.seed.unwrap_or(7)),
    }
}

fn run(cli: &Cli, path: &PathBuf) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read config {}: {}", path.display(), e);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut cfg: ExperimentConfig = match serde_json::from_str(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config: {}", e);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = cli.trials {
        cfg.trials = Some(t);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.display().to_string());
    }
    if let Some(f) = &cli.format {
        cfg.format = Some(f.clone());
    }
    let format = match cfg.format.as_deref().unwrap_or("csv").parse::<ReportFormat>() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("invalid config: {}", e);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("invalid config: {}", e);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out_path = cfg.out.as_ref().map(PathBuf::from);
    match emit_report(&report, format, out_path.as_deref()) {
        Ok(rendered) => {
            if out_path.is_none() {
                print!("{}", rendered);
            }
        }
        Err(e) => {
            eprintln!("cannot write report: {}", e);
            return ExitCode::from(EXIT_IO);
        }
    }
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}

fn list_problems() {
    let lines = [
        ("xor", "n", "bitwise XOR of the inputs"),
        ("split-id", "n", "identity woven from both inputs, even bits from Alice"),
        ("id-a", "n", "Alice's input"),
        ("id-b", "n", "Bob's input"),
        ("cond-id", "n", "Alice's input when the first bits agree, else Bob's"),
        ("eq", "n", "equality bit"),
        ("eqout", "n", "the common string when equal, silence otherwise"),
        ("ftfd", "n", "first differing position, n when equal"),
        ("max", "n", "maximum of the inputs as integers"),
        ("ghd", "n,l,u", "gap Hamming distance, promise dist <= l or >= u"),
        ("t-ftfd", "n,t", "first difference under a <= t differences promise"),
        ("t-int", "n,t", "intersection under a <= t overlap promise"),
    ];
    for (name, params, what) in lines {
        println!("{:<10} ({:<5}) {}", name, params, what);
    }
}

fn list_schemes() {
    println!("separations: separation protocols per output model, exact or sampled");
    println!("gapmaj-bench: xor-pub, xor-priv, open-pub, open-priv, det-uni, randomgraph");
    println!("amplify: standard, oot, xor, split, direct-sum");
    println!(
        "derand: one deterministic compile per model ({})",
        ALL_MODELS
            .iter()
            .map(|m| model_name(*m))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("certify: rank, xi, wprt");
}

fn run_selftest(seed: u64) -> ExitCode {
    let mut ok = true;
    for (name, pass) in selftest(seed) {
        println!("{} {}", if pass { "pass" } else { "FAIL" }, name);
        ok &= pass;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}
