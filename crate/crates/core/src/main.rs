use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qxdb::bench::{run_benchmark, BenchConfig, Thresholds};
use qxdb::engine::Database;
use qxdb::http::ServiceConfig;
use qxdb::types::{DistanceMetric, IndexChoice, QuantizationMode, DEFAULT_EF_CONSTRUCTION, DEFAULT_M};

const EXIT_CONFIG: u8 = 1;
const EXIT_BIND: u8 = 2;
const EXIT_ASSERT: u8 = 3;

#[derive(Parser)]
#[command(name = "qxdb", version, about = "Vector database server and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark an index on an fvecs/ivecs dataset.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    Run(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum IndexKind {
    Flat,
    Hnsw,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset directory, or a name under --data-dir.
    #[arg(long)]
    dataset: String,
    #[arg(long, env = "QX_DATASETS", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "euclidean")]
    metric: DistanceMetric,
    #[arg(long, value_enum, default_value = "hnsw")]
    index: IndexKind,
    #[arg(long, default_value_t = DEFAULT_M)]
    m: usize,
    #[arg(long, default_value_t = DEFAULT_EF_CONSTRUCTION)]
    ef_construction: usize,
    /// Comma-separated ef values.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    ef: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// `none`, `pq:<m>:<k>` or `bq:<m>`.
    #[arg(long, default_value = "none", value_parser = parse_quantization)]
    quantization: QuantizationMode,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the whole dataset instead of the named subset.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    max_train: Option<usize>,
    #[arg(long)]
    max_queries: Option<usize>,
    /// Exit 3 when any ef misses the thresholds.
    #[arg(long)]
    assert: bool,
    #[arg(long, default_value_t = Thresholds::default().min_recall)]
    min_recall: f64,
    #[arg(long, default_value_t = Thresholds::default().max_ratio)]
    max_ratio: f64,
    #[arg(long, default_value_t = Thresholds::default().min_fraction)]
    min_fraction: f64,
}

#[derive(Args)]
struct ServeArgs {
    /// TOML config file; QX_* variables and flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    in_memory: bool,
    #[arg(long)]
    default_ef: Option<usize>,
    #[arg(long)]
    default_m: Option<usize>,
    #[arg(long)]
    default_ef_construction: Option<usize>,
    #[arg(long)]
    max_body_bytes: Option<usize>,
}

fn parse_quantization(s: &str) -> Result<QuantizationMode, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.parse::<usize>().map_err(|_| format!("`{p}` is not a number"));
    match parts.as_slice() {
        ["none"] => Ok(QuantizationMode::None),
        ["pq", m, k] => Ok(QuantizationMode::Pq { m: num(m)?, k: num(k)? }),
        ["bq", m] => Ok(QuantizationMode::Bq { m: num(m)? }),
        _ => Err(format!("expected none, pq:<m>:<k> or bq:<m>, got `{s}`")),
    }
}

fn bench(args: BenchArgs) -> ExitCode {
    let config = BenchConfig {
        dataset: args.dataset,
        data_dir: args.data_dir,
        metric: args.metric,
        index: match args.index {
            IndexKind::Flat => IndexChoice::Flat,
            IndexKind::Hnsw => IndexChoice::Hnsw {
                m: args.m,
                ef_construction: args.ef_construction,
            },
        },
        quantization: args.quantization,
        ef: args.ef,
        k: args.k,
        seed: args.seed,
        full: args.full,
        max_train: args.max_train,
        max_queries: args.max_queries,
        parallel: args.parallel,
        out: args.out,
    };
    let report = match run_benchmark(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    print!("{}", report.table());
    if let Some(out) = &config.out {
        println!("report written to {}", out.display());
    }
    if args.assert {
        let failures = report.check(&Thresholds {
            min_recall: args.min_recall,
            max_ratio: args.max_ratio,
            min_fraction: args.min_fraction,
        });
        if !failures.is_empty() {
            for f in failures {
                eprintln!("FAIL {f}");
            }
            return ExitCode::from(EXIT_ASSERT);
        }
        println!("all thresholds met");
    }
    ExitCode::SUCCESS
}

fn service_config(args: ServeArgs) -> qxdb::Result<ServiceConfig> {
    let mut cfg = ServiceConfig::load(args.config.as_deref())?;
    if let Some(v) = args.listen {
        cfg.listen = v;
    }
    if let Some(v) = args.data_dir {
        cfg.data_dir = v;
    }
    if args.in_memory {
        cfg.in_memory = true;
    }
    if let Some(v) = args.default_ef {
        cfg.default_ef = Some(v);
    }
    if let Some(v) = args.default_m {
        cfg.default_m = v;
    }
    if let Some(v) = args.default_ef_construction {
        cfg.default_ef_construction = v;
    }
    if let Some(v) = args.max_body_bytes {
        cfg.max_body_bytes = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

fn serve(args: ServeArgs) -> ExitCode {
    let cfg = match service_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let db = if cfg.in_memory {
        Database::in_memory(cfg.engine)
    } else {
        match Database::open(&cfg.data_dir, cfg.engine) {
            Ok(db) => db,
            Err(e) => {
                eprintln!("cannot open {}: {e}", cfg.data_dir.display());
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    };
    let db = Arc::new(db);
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("cannot start runtime: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let code = rt.block_on(async {
        let addr = cfg.listen.clone();
        let listener = match tokio::net::TcpListener::bind(&addr).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("cannot bind {addr}: {e}");
                return ExitCode::from(EXIT_BIND);
            }
        };
        tracing::info!(%addr, "listening");
        match qxdb::http::serve(listener, db.clone(), cfg, shutdown_signal()).await {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("server error: {e}");
                ExitCode::FAILURE
            }
        }
    });
    drop(rt);
    match Arc::try_unwrap(db) {
        Ok(db) => {
            if let Err(e) = db.close() {
                eprintln!("flush on shutdown failed: {e}");
                return ExitCode::FAILURE;
            }
        }
        Err(_) => tracing::warn!("database still shared at shutdown; flushing on drop"),
    }
    code
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Bench {
            command: BenchCommand::Run(args),
        } => bench(args),
        Command::Serve(args) => serve(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_flags() {
        assert_eq!(parse_quantization("none"), Ok(QuantizationMode::None));
        assert_eq!(parse_quantization("pq:8:256"), Ok(QuantizationMode::Pq { m: 8, k: 256 }));
        assert_eq!(parse_quantization("bq:64"), Ok(QuantizationMode::Bq { m: 64 }));
        assert!(parse_quantization("pq:8").is_err());
        assert!(parse_quantization("bq:x").is_err());
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from([
            "qxdb", "bench", "run", "--dataset", "sift", "--metric", "euclidean", "--index", "hnsw", "--m", "16",
            "--ef-construction", "200", "--ef", "64,128", "--k", "10", "--seed", "1", "--out", "r.json", "--assert",
        ])
        .unwrap();
        let Command::Bench { command: BenchCommand::Run(a) } = cli.command else { panic!() };
        assert_eq!(a.ef, vec![64, 128]);
        assert!(a.assert);
    }
}
