//! `ssgic` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::SymmetricEigen;
use serde::Serialize;
use ssgic::experiment::{emit_plot_data, parse_report_csv, run_experiment, ExperimentConfig, Measure};
use ssgic::gic::{lft_from_path, select_ss, sscv_from_path, ssnet_from_path, GicStatus, RefitCache};
use ssgic::sim::{generate, M2Population};
use ssgic::solver::fit_path;
use ssgic::theory::{
    check_separation, check_subgaussian_product, check_tail_bound, estimate_kappa, m2_beta_star, SupVariant,
    TheoryCheckConfig,
};
use ssgic::{Dataset, Error, GicPenalty, GroundTruth, LossSpec, SelectionOutcome, SimModel, SimModelSpec, SolverConfig};

#[derive(Parser)]
#[command(name = "ssgic", version, about = "Lasso screening and GIC selection for binary regression")]
struct Cli {
    /// Random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file, standard output when omitted. For `experiment` this is
    /// the output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from model M1 or M2 and write it as CSV.
    Simulate {
        #[arg(long, value_enum)]
        model: ModelName,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        rho: f64,
    },
    /// Fit the Lasso path and write one row per λ.
    Path {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        loss: LossArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Run a selection procedure and write the refit coefficients.
    Select {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        loss: LossArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = ProcedureName::Ssnet)]
        procedure: ProcedureName,
        /// aic, bic, ebic:<d>, fan-tang or custom:<a>.
        #[arg(long, default_value = "ebic:1")]
        penalty: String,
        /// Screening λ, required for `ss`.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// Also write the GIC table as CSV to this file.
        #[arg(long)]
        gic_table: Option<PathBuf>,
    },
    /// Run a simulation sweep described by a TOML file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Print the run counts without running anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Monte Carlo checks of the concentration and separation results.
    TheoryCheck(TheoryArgs),
    /// Long-format plot data for one measure of a sweep report.
    PlotData {
        #[arg(long)]
        report: PathBuf,
        /// p_inc, p_equal, p_supset or angle.
        #[arg(long)]
        measure: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelName {
    M1,
    M2,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossName {
    Logistic,
    Quadratic,
    Huber,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcedureName {
    Ss,
    Ssnet,
    Sscv,
    Lft,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckName {
    TailS,
    TailS1,
    TailS2,
    Separation,
    Kappa,
    SubgProduct,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long, alias = "data")]
    input: PathBuf,
    /// Name of the 0/1 response column.
    #[arg(long, default_value = "y")]
    response: String,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long, value_enum, default_value_t = LossName::Logistic)]
    loss: LossName,
    #[arg(long, default_value_t = 0.1)]
    huber_delta: f64,
}

impl LossArgs {
    fn spec(&self) -> ssgic::Result<LossSpec> {
        match self.loss {
            LossName::Logistic => Ok(LossSpec::Logistic),
            LossName::Quadratic => Ok(LossSpec::Quadratic),
            LossName::Huber => LossSpec::huber(self.huber_delta),
        }
    }
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 20)]
    lambda_count: usize,
    /// Smallest λ as a fraction of λ_max.
    #[arg(long, default_value_t = 0.01)]
    lambda_ratio: f64,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, value_enum)]
    check: CheckName,
    #[arg(long, default_value_t = 4000)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    p: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    rho: f64,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long, default_value_t = 500)]
    mc_samples: usize,
    #[arg(long, default_value_t = 200)]
    sup_probes: usize,
    /// Ball radius.
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    /// Tail threshold.
    #[arg(long, default_value_t = 0.1)]
    t: f64,
    #[arg(long, default_value_t = 3)]
    k_n: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    s_n: f64,
    /// Lasso λ for `separation`; sqrt(ln p / n) when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 200)]
    replications: usize,
    /// Target separation fraction.
    #[arg(long, default_value_t = 0.9)]
    min_fraction: f64,
    /// Random cone members for `kappa`.
    #[arg(long, default_value_t = 2000)]
    probes: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 2.0)]
    m_bound: f64,
    #[arg(long, value_delimiter = ',', default_value = "-1,-0.5,0.5,1", allow_hyphen_values = true)]
    t_grid: Vec<f64>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_data_error() {
            2
        } else if e.is_numerical() || matches!(e, Error::GicUndefined(_)) {
            3
        } else {
            1
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p).map_err(|e| Failure {
            code: 2,
            message: format!("{}: {e}", p.display()),
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_rows<T: Serialize>(sink: Box<dyn Write>, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn load(data: &DataArgs) -> CliResult<(Dataset, Dataset)> {
    let raw = Dataset::load_csv(&data.input, &data.response)?;
    let std = raw.standardize()?;
    Ok((raw, std))
}

fn simulate(cli: &Cli, model: ModelName, n: usize, p: usize, rho: f64) -> CliResult<()> {
    let model = match model {
        ModelName::M1 => SimModel::M1,
        ModelName::M2 => SimModel::M2,
    };
    let (d, _) = generate(&SimModelSpec {
        model,
        n,
        p,
        rho,
        seed: cli.seed,
    })?;
    d.write_csv_to(open_output(cli.output.as_deref())?, "y")?;
    Ok(())
}

fn path(cli: &Cli, data: &DataArgs, loss: &LossArgs, grid: &GridArgs) -> CliResult<()> {
    let (_, d) = load(data)?;
    let spec = loss.spec()?;
    let path = fit_path(&d, &spec, grid.lambda_count, grid.lambda_ratio, &SolverConfig::default())?;
    let mut w = csv::Writer::from_writer(open_output(cli.output.as_deref())?);
    let mut header = vec!["lambda".to_string(), "support_size".into(), "objective".into(), "intercept".into()];
    header.extend(d.names().iter().cloned());
    w.write_record(&header)?;
    for fit in &path.fits {
        let (b0, b) = d.destandardize_coefficients(fit.intercept, &fit.coefficients)?;
        let mut row = vec![
            fit.lambda.to_string(),
            fit.support_size().to_string(),
            fit.objective.to_string(),
            b0.to_string(),
        ];
        row.extend(b.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CoefficientRow<'a> {
    term: &'a str,
    index: usize,
    coefficient: f64,
}

#[derive(Serialize)]
struct GicRow {
    size: usize,
    model: String,
    lambda: Option<f64>,
    status: &'static str,
    gic: f64,
}

#[allow(clippy::too_many_arguments)]
fn select(
    cli: &Cli,
    data: &DataArgs,
    loss: &LossArgs,
    grid: &GridArgs,
    procedure: ProcedureName,
    penalty: &str,
    lambda: Option<f64>,
    folds: usize,
    gic_table: Option<&Path>,
) -> CliResult<()> {
    let (_, d) = load(data)?;
    let spec = loss.spec()?;
    let pen: GicPenalty = penalty.parse()?;
    let cfg = SolverConfig::default();
    let cache = RefitCache::new();
    let run_path = || fit_path(&d, &spec, grid.lambda_count, grid.lambda_ratio, &cfg);
    let outcome: SelectionOutcome = match procedure {
        ProcedureName::Ss => {
            let lambda = lambda.ok_or_else(|| Failure::usage("--lambda is required for procedure ss"))?;
            select_ss(&d, &spec, lambda, &pen, &cfg)?
        }
        ProcedureName::Ssnet => ssnet_from_path(&d, &spec, &run_path()?, &pen, &cfg, &cache, false)?,
        ProcedureName::Sscv => sscv_from_path(&d, &spec, &run_path()?, folds, &pen, &cfg, cli.seed, &cache, false)?.0,
        ProcedureName::Lft => lft_from_path(&d, &spec, &run_path()?)?,
    };

    let (b0, b) = d.destandardize_coefficients(outcome.refit.intercept, &outcome.refit.coefficients)?;
    let mut rows = vec![CoefficientRow {
        term: "(intercept)",
        index: 0,
        coefficient: b0,
    }];
    for &j in outcome.selected.indices() {
        rows.push(CoefficientRow {
            term: &d.names()[j - 1],
            index: j,
            coefficient: b[j - 1],
        });
    }
    write_rows(open_output(cli.output.as_deref())?, &rows)?;
    eprintln!(
        "selected {} by {} with {} over {} models",
        outcome.selected,
        outcome.procedure,
        outcome.penalty,
        outcome.family.len()
    );
    if let Some(p) = gic_table {
        let table: Vec<GicRow> = outcome
            .gic_table
            .iter()
            .map(|e| GicRow {
                size: e.model.len(),
                model: e.model.joined(),
                lambda: e.lambda,
                status: match e.status {
                    GicStatus::Evaluated => "evaluated",
                    GicStatus::Separated => "separated",
                    GicStatus::Infeasible => "infeasible",
                    GicStatus::Pruned => "pruned",
                },
                gic: e.value,
            })
            .collect();
        write_rows(open_output(Some(p))?, &table)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PlanRow {
    cells: usize,
    datasets: usize,
    runs_per_loss: usize,
    selection_runs: usize,
}

fn experiment(cli: &Cli, config: &Path, dry_run: bool) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(dir) = &cli.output {
        cfg.output_dir = dir.clone();
    }
    if dry_run {
        let plan = cfg.plan()?;
        return write_rows(
            Box::new(io::stdout().lock()),
            &[PlanRow {
                cells: plan.cells,
                datasets: plan.datasets,
                runs_per_loss: plan.runs_per_loss,
                selection_runs: plan.selection_runs,
            }],
        );
    }
    let summary = run_experiment(&cfg, &SolverConfig::default())?;
    eprintln!(
        "{} cells run, {} reused; report in {}, replications in {}",
        summary.cells_run,
        summary.cells_reused,
        summary.report_path.display(),
        summary.replications_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CheckRow {
    check: String,
    estimate: f64,
    bound: f64,
    se: Option<f64>,
    pass: bool,
}

fn theory_check(cli: &Cli, a: &TheoryArgs) -> CliResult<()> {
    let spec = a.loss.spec()?;
    let sim = SimModelSpec {
        model: SimModel::M2,
        n: a.n,
        p: a.p,
        rho: a.rho,
        seed: cli.seed,
    };
    let cfg = TheoryCheckConfig {
        mc_samples: a.mc_samples,
        sup_probes: a.sup_probes,
        r: a.r,
        t: a.t,
        k_n: a.k_n,
        epsilon_cone: a.epsilon,
        s_n: a.s_n,
    };
    cfg.validate()?;
    let tail = |variant: SupVariant, name: &str| -> CliResult<Vec<CheckRow>> {
        let c = check_tail_bound(&spec, &sim, &cfg, variant)?;
        Ok(vec![CheckRow {
            check: name.into(),
            estimate: c.empirical,
            bound: c.bound,
            se: Some(c.se),
            pass: c.pass,
        }])
    };
    let rows = match a.check {
        CheckName::TailS => tail(SupVariant::S, "tail-s")?,
        CheckName::TailS1 => tail(SupVariant::S1, "tail-s1")?,
        CheckName::TailS2 => tail(SupVariant::S2, "tail-s2")?,
        CheckName::Separation => {
            let lambda = a.lambda.unwrap_or_else(|| ((a.p as f64).ln() / a.n as f64).sqrt());
            let c = check_separation(&spec, &sim, lambda, a.replications, &SolverConfig::default())?;
            vec![CheckRow {
                check: "separation".into(),
                estimate: c.fraction,
                bound: a.min_fraction,
                se: Some(c.se),
                pass: c.fraction + 2.0 * c.se >= a.min_fraction,
            }]
        }
        CheckName::Kappa => {
            sim.validate()?;
            let pop = M2Population::new(spec, a.rho)?;
            let (b0, beta) = m2_beta_star(a.rho, &spec, a.p)?;
            let h = pop.slope_hessian(b0, beta[0], a.p);
            let min_eig = SymmetricEigen::new(h.clone()).eigenvalues.min();
            let truth = GroundTruth::of(SimModel::M2).true_support;
            let kappa = estimate_kappa(&h, &truth, a.epsilon, a.probes, cli.seed)?;
            // the estimate is an upper bound; the smallest eigenvalue bounds it from below
            vec![CheckRow {
                check: "kappa".into(),
                estimate: kappa,
                bound: min_eig,
                se: None,
                pass: kappa >= min_eig - 1e-9,
            }]
        }
        CheckName::SubgProduct => {
            let c = check_subgaussian_product(a.sigma, a.m_bound, &a.t_grid, a.mc_samples, cli.seed)?;
            c.points
                .iter()
                .map(|p| CheckRow {
                    check: format!("subg-product(t={})", p.t),
                    estimate: p.empirical,
                    bound: p.bound,
                    se: Some(p.se),
                    pass: p.pass,
                })
                .collect()
        }
    };
    write_rows(open_output(cli.output.as_deref())?, &rows)
}

fn plot_data(cli: &Cli, report: &Path, measure: &str) -> CliResult<()> {
    let measure: Measure = measure.parse()?;
    let text = fs::read_to_string(report).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", report.display()),
    })?;
    let rows = parse_report_csv(&text)?;
    let csv = emit_plot_data(&rows, measure)?;
    open_output(cli.output.as_deref())?.write_all(csv.as_bytes())?;
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate { model, n, p, rho } => simulate(cli, *model, *n, *p, *rho),
        Command::Path { data, loss, grid } => path(cli, data, loss, grid),
        Command::Select {
            data,
            loss,
            grid,
            procedure,
            penalty,
            lambda,
            folds,
            gic_table,
        } => select(cli, data, loss, grid, *procedure, penalty, *lambda, *folds, gic_table.as_deref()),
        Command::Experiment { config, dry_run } => experiment(cli, config, *dry_run),
        Command::TheoryCheck(args) => theory_check(cli, args),
        Command::PlotData { report, measure } => plot_data(cli, report, measure),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
