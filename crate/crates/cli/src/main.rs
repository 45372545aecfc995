use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use pkifmm::experiments::{run_experiment, ExperimentConfig, Operators, EXPERIMENTS};
use pkifmm::fmm::{Mode, DEFAULT_LEAF_CAPACITY};
use pkifmm::{evaluate, EvalRequest, EwaldParams, Kernel, PeriodicSetup, Periodicity, PeriodizingOperator, Point};

#[derive(Parser)]
#[command(name = "pkifmm", version, about = "Periodic kernel-independent FMM")]
struct Cli {
    /// Worker threads (0 keeps the default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build and save a periodizing operator.
    Precompute {
        #[command(flatten)]
        sys: System,
        #[command(flatten)]
        ewald: Ewald,
        /// Output file (defaults to the operator cache directory or the working directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a periodic system.
    Eval {
        #[command(flatten)]
        sys: System,
        #[command(flatten)]
        ewald: Ewald,
        #[arg(long)]
        operator: Option<PathBuf>,
        /// CSV rows `x,y,z,s1[,s2,s3]`.
        #[arg(long)]
        sources: PathBuf,
        /// CSV rows `x,y,z`.
        #[arg(long)]
        targets: PathBuf,
        /// JSON results (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the compatibility gate.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        direct: bool,
        #[arg(long, default_value_t = DEFAULT_LEAF_CAPACITY)]
        leaf_capacity: usize,
    },
    /// Run a named experiment and write CSV and JSON reports.
    Experiment {
        name: String,
        /// JSON experiment config; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        periodicity: Option<String>,
        #[arg(long)]
        ell: Option<usize>,
        /// Comma-separated list.
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<usize>>,
        #[arg(long)]
        n_images: Option<u64>,
        #[arg(long)]
        xi: Option<f64>,
        /// Chebyshev (or Clenshaw-Curtis) points per axis.
        #[arg(long)]
        n_cheb: Option<usize>,
        /// Comma-separated point counts.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long)]
        leaf_capacity: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct System {
    #[arg(long, default_value = "laplace")]
    kernel: String,
    #[arg(long, default_value = "tp")]
    periodicity: String,
    /// Periodic axes such as `z` or `xy` (defaults depend on the periodicity).
    #[arg(long)]
    axes: Option<String>,
    #[arg(long, default_value_t = 2)]
    ell: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
}

#[derive(Args)]
struct Ewald {
    #[arg(long)]
    n_images: Option<u64>,
    #[arg(long)]
    xi: Option<f64>,
}

impl System {
    fn parse(&self) -> anyhow::Result<(Kernel, PeriodicSetup)> {
        let kernel = Kernel::from_name(&self.kernel)?;
        let per = Periodicity::from_name(&self.periodicity)?;
        let setup = match &self.axes {
            Some(s) => {
                let mut axes = [false; 3];
                for c in s.chars() {
                    let i = "xyz".find(c).with_context(|| format!("bad axis '{c}'"))?;
                    axes[i] = true;
                }
                PeriodicSetup::with_axes(per, axes, self.ell)?
            }
            None if per == Periodicity::None => PeriodicSetup::free(),
            None => PeriodicSetup::new(per, self.ell)?,
        };
        Ok((kernel, setup))
    }
}

impl Ewald {
    fn params(&self) -> EwaldParams {
        let mut p = self.xi.map(EwaldParams::with_xi).unwrap_or_default();
        if let Some(n) = self.n_images {
            p.n_images = n;
        }
        p
    }
}

fn read_rows(path: &Path, min: usize) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match vals {
            Ok(v) if v.len() >= min => rows.push(v),
            Ok(v) => bail!("{}: row {} has {} columns, need {min}", path.display(), i + 1, v.len()),
            Err(_) if i == 0 => continue,
            Err(e) => bail!("{}: row {}: {e}", path.display(), i + 1),
        }
    }
    Ok(rows)
}

fn operator_path(kernel: Kernel, setup: &PeriodicSetup, p: usize, params: &EwaldParams) -> PathBuf {
    let dir = std::env::var_os("PKIFMM_OPERATOR_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    dir.join(format!("{}.pkm2l", Operators::key(kernel, setup, p, params)))
}

fn precompute(sys: &System, ewald: &Ewald, out: Option<PathBuf>) -> anyhow::Result<()> {
    let (kernel, setup) = sys.parse()?;
    if setup.periodicity == Periodicity::None {
        bail!("free-space systems need no operator");
    }
    let params = ewald.params();
    let t = Instant::now();
    let op = pkifmm::solve_m2l(kernel, setup, sys.p, params)?;
    let secs = t.elapsed().as_secs_f64();
    let path = out.unwrap_or_else(|| operator_path(kernel, &setup, sys.p, &params));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    op.save(&path)?;
    let h = &op.header;
    println!("operator: {}", path.display());
    println!("dim: {}", h.dim());
    println!("residual_max: {:.3e}", h.residual_max);
    println!("kappa: {:.3e}", h.kappa);
    println!("rank: {}", h.rank);
    println!("crc64: {:016x}", h.crc64);
    println!("seconds: {secs:.2}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    sys: &System,
    ewald: &Ewald,
    operator: Option<PathBuf>,
    sources: &Path,
    targets: &Path,
    out: Option<PathBuf>,
    force: bool,
    direct: bool,
    leaf_capacity: usize,
) -> anyhow::Result<()> {
    let (kernel, setup) = sys.parse()?;
    let ks = kernel.source_dim();
    let src_rows = read_rows(sources, 3 + ks)?;
    let trg_rows = read_rows(targets, 3)?;
    let src: Vec<Point> = src_rows.iter().map(|r| [r[0], r[1], r[2]]).collect();
    let q: Vec<f64> = src_rows.iter().flat_map(|r| r[3..3 + ks].to_vec()).collect();
    let trg: Vec<Point> = trg_rows.iter().map(|r| [r[0], r[1], r[2]]).collect();
    let op = match (setup.periodicity, operator) {
        (Periodicity::None, _) => None,
        (_, Some(path)) => Some(PeriodizingOperator::load(&path)?),
        (_, None) => {
            let path = operator_path(kernel, &setup, sys.p, &ewald.params());
            Some(PeriodizingOperator::load(&path).with_context(|| format!("no operator given and none cached at {}", path.display()))?)
        }
    };
    let mut req = EvalRequest::new(kernel, &src, &q, &trg, setup, sys.p);
    req.operator = op.as_ref();
    req.force = force;
    req.leaf_capacity = leaf_capacity;
    if direct {
        req.mode = Mode::Direct;
    }
    let res = evaluate(&req)?;
    let json = serde_json::to_string_pretty(&res)?;
    match out {
        Some(path) => std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn experiment(name: &str, cfg: ExperimentConfig, out: &Path) -> anyhow::Result<bool> {
    if !EXPERIMENTS.contains(&name) {
        bail!("unknown experiment '{name}'; expected one of {}", EXPERIMENTS.join(", "));
    }
    let mut ops = Operators::from_env();
    let report = run_experiment(name, &cfg, &mut ops)?;
    std::fs::create_dir_all(out)?;
    let csv_path = out.join(format!("{name}.csv"));
    let json_path = out.join(format!("{name}.json"));
    std::fs::write(&csv_path, report.table.to_csv())?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
    print!("{}", report.table.to_csv());
    println!("{}: {}", name, if report.pass { "PASS" } else { "FAIL" });
    Ok(report.pass)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if cli.threads > 0 {
        pkifmm::set_threads(cli.threads);
    }
    match cli.cmd {
        Cmd::Precompute { sys, ewald, out } => precompute(&sys, &ewald, out).map(|_| true),
        Cmd::Eval { sys, ewald, operator, sources, targets, out, force, direct, leaf_capacity } => {
            eval(&sys, &ewald, operator, &sources, &targets, out, force, direct, leaf_capacity).map(|_| true)
        }
        Cmd::Experiment { name, config, kernel, periodicity, ell, p, n_images, xi, n_cheb, n, leaf_capacity, seed, out } => {
            let mut cfg: ExperimentConfig = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                None => ExperimentConfig::default(),
            };
            if let Some(k) = kernel {
                cfg.kernel = Some(Kernel::from_name(&k)?);
            }
            if let Some(s) = periodicity {
                cfg.periodicity = Some(Periodicity::from_name(&s)?);
            }
            cfg.ell = ell.or(cfg.ell);
            cfg.p_list = p.or(cfg.p_list);
            cfg.n_images = n_images.or(cfg.n_images);
            cfg.xi = xi.or(cfg.xi);
            cfg.n_cheb = n_cheb.or(cfg.n_cheb);
            cfg.n_points = n.or(cfg.n_points);
            cfg.leaf_capacity = leaf_capacity.or(cfg.leaf_capacity);
            cfg.seed = seed.or(cfg.seed);
            experiment(&name, cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
