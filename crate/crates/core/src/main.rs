use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use reglab::harness::config::{ExperimentConfig, OperatorKind};
use reglab::harness::output::{write_dim_csv, write_mismatch_csv, write_wc_curve, RunManifest};
use reglab::harness::{self, experiments};
use reglab::{Error, Result};

#[derive(Parser)]
#[command(name = "reglab", version, about = "Regularization experiments for linear inverse problems")]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an operator, write it and its singular system.
    Operator(OperatorArgs),
    /// Worst-case bound over an α grid as CSV `alpha,bound`.
    WcCurve(WcArgs),
    /// Error grid over tuning and data noise levels.
    MismatchGrid,
    /// Intrinsic-dimension scan.
    DimScan,
    /// Generalized-LASSO reconstruction of one sample.
    LassoSolve,
    /// Grid-search α per noise level and write the α rule.
    AlphaTune,
}

#[derive(Args)]
struct OperatorArgs {
    /// `integration` or `radon`; defaults to the config's operator.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    angles: Option<usize>,
    #[arg(long)]
    offsets: Option<usize>,
}

#[derive(Args)]
struct WcArgs {
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    delta: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.clone();
    if let Some(dir) = &out {
        fs::create_dir_all(dir)?;
    }
    match cli.command {
        Command::Operator(args) => cmd_operator(cfg, args, out.as_deref()),
        Command::WcCurve(args) => cmd_wc_curve(args, out.as_deref()),
        Command::MismatchGrid => experiment(cfg, "mismatch-grid", out.as_deref(), cmd_mismatch),
        Command::DimScan => experiment(cfg, "dim-scan", out.as_deref(), cmd_dim_scan),
        Command::LassoSolve => experiment(cfg, "lasso-solve", out.as_deref(), cmd_lasso_solve),
        Command::AlphaTune => experiment(cfg, "alpha-tune", out.as_deref(), cmd_alpha_tune),
    }
}

fn out_dir(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_operator(mut cfg: ExperimentConfig, args: OperatorArgs, out: Option<&Path>) -> Result<()> {
    let o = &mut cfg.operator;
    if let Some(k) = args.kind {
        o.kind = match k.as_str() {
            "integration" => OperatorKind::Integration,
            "radon" => OperatorKind::Radon,
            other => return Err(Error::Config(format!("unknown operator kind '{other}'"))),
        };
    }
    o.n = args.n.unwrap_or(o.n);
    o.side = args.side.unwrap_or(o.side);
    o.angles = args.angles.unwrap_or(o.angles);
    o.offsets = args.offsets.unwrap_or(o.offsets);
    cfg.validate()?;
    let op = harness::build_operator(&cfg.operator)?;
    let svd = op.svd()?;
    let dir = out_dir(out);
    op.save(dir.join("operator.bin"))?;
    svd.save(dir.join("operator.svd.bin"))?;
    println!("rows={}", op.rows());
    println!("cols={}", op.cols());
    println!("sigma_max={}", svd.sigma_max());
    println!("sigma_min={}", svd.sigma.min());
    println!("operator_sha256={}", op.checksum());
    Ok(())
}

fn cmd_wc_curve(args: WcArgs, out: Option<&Path>) -> Result<()> {
    let curve = experiments::wc_curve(args.delta, args.rho)?;
    write_wc_curve(std::io::stdout().lock(), &curve)?;
    if let Some(dir) = out {
        write_wc_curve(fs::File::create(dir.join("wc_curve.csv"))?, &curve)?;
    }
    Ok(())
}

type Runner = fn(&ExperimentConfig, &reglab::DenseOperator, &harness::Dataset, &Path, &mut RunManifest) -> Result<()>;

fn experiment(cfg: ExperimentConfig, name: &str, out: Option<&Path>, f: Runner) -> Result<()> {
    let start = Instant::now();
    cfg.validate()?;
    let text = cfg.to_toml();
    let op = harness::build_operator(&cfg.operator)?;
    let data = harness::load_dataset(&cfg, &op)?;
    let mut manifest = RunManifest::new(name, cfg.seed, &text, op.checksum());
    let dir = out_dir(out);
    f(&cfg, &op, &data, &dir, &mut manifest)?;
    manifest.wall_time = start.elapsed();
    manifest.write(&dir, &text)
}

fn cmd_mismatch(
    cfg: &ExperimentConfig,
    op: &reglab::DenseOperator,
    data: &harness::Dataset,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let grid = harness::run_mismatch_grid(cfg, op, data)?;
    write_mismatch_csv(dir.join("mismatch_grid.csv"), &grid)?;
    for db in grid.zero_reconstruction_rows() {
        eprintln!("warning: delta_bar={db} exceeds rho={}; zero reconstruction used", grid.rho);
    }
    manifest.extra.push(("rho".into(), grid.rho.to_string()));
    println!("rho={}", grid.rho);
    if grid.bound_checks() > 0 {
        println!("bound_checks={}", grid.bound_checks());
        println!("bound_violations={}", grid.bound_violations());
        manifest.extra.push(("bound_violations".into(), grid.bound_violations().to_string()));
    }
    Ok(())
}

fn cmd_dim_scan(
    cfg: &ExperimentConfig,
    op: &reglab::DenseOperator,
    data: &harness::Dataset,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let exp = harness::run_dim_experiment(cfg, op, data)?;
    write_dim_csv(dir.join("dim_scan.csv"), &exp)?;
    for ((kind, res), alpha) in exp.bases.iter().zip(&exp.results).zip(&exp.alphas) {
        manifest.extra.push((format!("alpha_{}", kind.name()), alpha.to_string()));
        println!("basis={} alpha={alpha}", kind.name());
        println!("estimated_N={}", res.estimated_n);
    }
    Ok(())
}

fn cmd_lasso_solve(
    cfg: &ExperimentConfig,
    op: &reglab::DenseOperator,
    data: &harness::Dataset,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let run = harness::run_lasso_solve(cfg, op, data)?;
    let mut w = csv::Writer::from_path(dir.join("lasso_solution.csv"))?;
    w.write_record(["index", "x_true", "x_hat"])?;
    for (i, (t, h)) in run.x_true.iter().zip(run.solution.x.iter()).enumerate() {
        w.write_record([i.to_string(), t.to_string(), h.to_string()])?;
    }
    w.flush()?;
    manifest.extra.push(("alpha".into(), run.alpha.to_string()));
    println!("alpha={}", run.alpha);
    println!("delta={}", run.delta);
    println!("iterations={}", run.solution.iterations);
    println!("residual={:e}", run.solution.residual);
    println!("kkt_residual={:e}", run.solution.kkt_residual);
    println!("objective={}", run.solution.objective);
    println!("subgradient_bound={}", if run.subgradient_ok { "ok" } else { "violated" });
    Ok(())
}

fn cmd_alpha_tune(
    cfg: &ExperimentConfig,
    op: &reglab::DenseOperator,
    data: &harness::Dataset,
    dir: &Path,
    _manifest: &mut RunManifest,
) -> Result<()> {
    let rule = harness::run_alpha_tune(cfg, op, data)?;
    rule.save(dir.join("alpha_rule.csv"))?;
    for (d, a) in rule.knots() {
        println!("delta={d} alpha={a}");
    }
    Ok(())
}
