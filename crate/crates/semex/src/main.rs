#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use semex::bench::{self, OVERHEAD_HEADER, REVENUE_HEADER};
use semex::export;
use semex::{AppError, ScenarioConfig};
use semex_core::fairshare::{self, Proof};
use semex_core::market;
use semex_core::{apply_transform, SemanticPayload};
use serde_json::json;

#[derive(Parser)]
#[command(name = "semex", version, about = "Semantic payload exchange on a simulated PBFT ledger")]
struct Cli {
    /// Scenario profile; the built-in default is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the profile seed.
    #[arg(long, global = true, env = "SEMEX_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one full sale and print the report as JSON.
    Exchange {
        /// Directory for report.json, events.jsonl, timings.csv and the store snapshot.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Consensus overhead per payload tier, as CSV.
    BenchOverhead {
        #[arg(long)]
        messages: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Producer revenue dynamics per cost scale, as CSV.
    BenchRevenue {
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Commit to a source file, transform it and write the proof.
    Prove {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        transformed_out: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a proof against a transformed payload. Exits 1 on rejection.
    Verify {
        #[arg(long)]
        transformed: PathBuf,
        #[arg(long)]
        proof: PathBuf,
    },
    /// Solve the pricing game and print the equilibrium.
    MarketSolve {
        /// Writes the iteration trace as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = AppError::Config(e.render().to_string().lines().next().unwrap_or_default().to_string());
            eprintln!("{}", err.to_record());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, AppError> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), AppError> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>, AppError> {
    fs::read(path).map_err(|e| AppError::Domain(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<ExitCode, AppError> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Exchange { out } => {
            let report = semex::run_exchange(&cfg)?;
            let json = report.to_json();
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("report.json"), &json)?;
                export::write_events_jsonl(&report.events, fs::File::create(dir.join("events.jsonl"))?)?;
                fs::write(dir.join("timings.csv"), export::timings_csv(&report.timings)?)?;
                export::snapshot_store(&report.store, &dir.join("store"))?;
            }
            println!("{json}");
            Ok(ExitCode::SUCCESS)
        }
        Command::BenchOverhead { messages, out } => {
            let rows = semex::bench_overhead(&cfg, messages.unwrap_or(cfg.bench.messages))?;
            emit(&bench::csv_string(&OVERHEAD_HEADER, &rows)?, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::BenchRevenue { scales, out } => {
            let scales = scales.unwrap_or_else(|| cfg.bench.cost_scales.clone());
            if scales.iter().any(|m| !(*m > 0.0)) {
                return Err(AppError::Config("cost scales must be positive".into()));
            }
            let (rows, _) = semex::bench_revenue(&cfg, &scales)?;
            emit(&bench::csv_string(&REVENUE_HEADER, &rows)?, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Prove { input, transformed_out, out } => {
            let crs = cfg.crs()?;
            let s = SemanticPayload::raw(read(&input)?);
            let t = apply_transform(&crs.transform, &s).map_err(|e| AppError::Domain(e.to_string()))?;
            let (commitment, opening) =
                fairshare::commit_source(&crs, &s, cfg.seed).map_err(|e| AppError::Domain(e.to_string()))?;
            let proof = fairshare::prove(&crs, &s, &t, &opening).map_err(|e| AppError::Domain(e.to_string()))?;
            fs::write(&transformed_out, t.bytes())?;
            fs::write(&out, proof.to_bytes())?;
            let summary = json!({
                "source_root": commitment.merkle_root.to_hex(),
                "n_blocks": commitment.n_blocks,
                "proof_id": proof.id().to_hex(),
                "transformed_bytes": t.size_bytes(),
            });
            println!("{summary}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { transformed, proof } => {
            let crs = cfg.crs()?;
            let t = SemanticPayload::raw(read(&transformed)?);
            let verdict = Proof::from_bytes(&read(&proof)?)
                .map_err(|e| e.to_string())
                .and_then(|p| fairshare::check(&crs, &t, &p).map_err(|r| r.to_string()));
            match verdict {
                Ok(()) => {
                    println!("{}", json!({ "accepted": true }));
                    Ok(ExitCode::SUCCESS)
                }
                Err(reason) => {
                    println!("{}", json!({ "accepted": false, "reason": reason }));
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::MarketSolve { out } => {
            let m = &cfg.market;
            let eq = market::solve_equilibrium(&m.producer, &m.consumers, &m.solver)
                .map_err(|e| AppError::Domain(e.to_string()))?;
            if let Some(path) = out {
                fs::write(path, export::trace_csv(&eq.iterations)?)?;
            }
            let summary = json!({
                "price": eq.price,
                "quantities": eq.quantities,
                "revenue": eq.revenue,
                "utilities": eq.utilities,
                "iterations": eq.iterations.len(),
                "closed_form_price": market::leader_price_closed_form(&m.producer, &m.consumers[0]).ok(),
            });
            println!("{summary}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
