use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use widthstrat::harness::{
    decimation_csv, emit_plotdata, run_decimation_audit, run_evaluate, run_stats, sizes_csv, sizes_table,
    write_evaluation, write_phantom_suite, ConditionSource, EmitFlags, ReportTable, RunConfig, StatsTest,
};
use widthstrat::metrics::UpsampleOrder;
use widthstrat::stats::TestMethod;
use widthstrat::{Size2D, StratumThresholds};

#[derive(Parser)]
#[command(name = "widthstrat", version, about = "Width-stratified audit of vessel segmentations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions for every manifest and condition; write the report.
    Evaluate(EvaluateArgs),
    /// Model-free decimation audit of ground-truth masks.
    Decimate(SweepArgs),
    /// Paired test or rank correlation on two columns of a results CSV.
    Stats(StatsArgs),
    /// Write the synthetic phantom suite and its manifest.
    Phantom(PhantomArgs),
    /// Print processed sizes for each condition.
    Sizes(SizesArgs),
    /// Write figure series from an existing report CSV.
    Plotdata(PlotdataArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset manifest (JSON); repeat for several datasets.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// Preset name or path to a JSON list of conditions.
    #[arg(long, default_value = "paper-table2")]
    conditions: String,
    /// Thin/thick half-width boundaries in pixels.
    #[arg(long, default_value = "3,7")]
    strata: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Output formats; may be repeated or comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv")]
    format: Vec<Format>,
    /// Also write the figure series.
    #[arg(long)]
    plotdata: bool,
    /// Restrict specificity to FOV masks listed in the manifest.
    #[arg(long)]
    fov: bool,
    /// Root for `<root>/<condition>/<image_id>.png`; overrides the manifest.
    #[arg(long)]
    pred_root: Option<PathBuf>,
    /// Upsample probabilities bilinearly before thresholding.
    #[arg(long)]
    bilinear_then_threshold: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Wilcoxon,
    Spearman,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    TApprox,
}

#[derive(Args)]
struct StatsArgs {
    /// Results CSV, for example a report written by `evaluate`.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    col_a: String,
    #[arg(long)]
    col_b: String,
    #[arg(long, value_enum)]
    test: TestArg,
    /// Spearman p-value method.
    #[arg(long, value_enum, default_value = "t-approx")]
    method: MethodArg,
    /// Keep only rows of this dataset.
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value = "phantoms")]
    out: PathBuf,
    /// Also write decimated masks as predictions for each condition.
    #[arg(long)]
    predictions: bool,
    #[arg(long, default_value = "paper-table2")]
    conditions: String,
}

#[derive(Args)]
struct SizesArgs {
    #[arg(long, visible_alias = "preset", default_value = "paper-table2")]
    conditions: String,
    /// Dataset name used to pick preset rows.
    #[arg(long)]
    dataset: Option<String>,
    /// Native size as WxH; requires --dataset.
    #[arg(long, requires = "dataset")]
    native: Option<String>,
}

#[derive(Args)]
struct PlotdataArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_strata(s: &str) -> anyhow::Result<StratumThresholds> {
    let (a, b) = s.split_once(',').context("--strata expects two numbers like 3,7")?;
    let thin: f64 = a.trim().parse().context("bad thin boundary")?;
    let thick: f64 = b.trim().parse().context("bad thick boundary")?;
    Ok(StratumThresholds::new(thin, thick)?)
}

fn parse_size(s: &str) -> anyhow::Result<Size2D> {
    let (w, h) = s.split_once(['x', 'X']).context("size must look like 565x584")?;
    Ok(Size2D::new(w.trim().parse()?, h.trim().parse()?)?)
}

fn sweep_config(args: &SweepArgs) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::new(args.manifests.clone(), &args.out);
    config.conditions = ConditionSource::from_arg(&args.conditions)?;
    config.strata = parse_strata(&args.strata)?;
    config.workers = args.workers;
    Ok(config)
}

fn write(path: &Path, body: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Ok(true) when the run was complete.
fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Evaluate(args) => {
            let mut config = sweep_config(&args.sweep)?;
            config.threshold = args.threshold;
            config.use_fov = args.fov;
            config.pred_root = args.pred_root;
            if args.bilinear_then_threshold {
                config.upsample = UpsampleOrder::BilinearThenThreshold;
            }
            config.emit = EmitFlags {
                csv: args.format.contains(&Format::Csv),
                json: args.format.contains(&Format::Json),
                plotdata: args.plotdata,
            };
            let outcome = run_evaluate(&config)?;
            for f in &outcome.failures {
                eprintln!("incomplete: {} {} {}: {}", f.dataset, f.condition, f.image_id, f.reason);
            }
            for path in write_evaluation(&outcome, &config)? {
                println!("{}", path.display());
            }
            Ok(!outcome.report.has_incomplete())
        }
        Command::Decimate(args) => {
            let config = sweep_config(&args)?;
            let rows = run_decimation_audit(&config)?;
            let path = config.out_dir.join("decimation.csv");
            write(&path, &decimation_csv(&rows))?;
            println!("{}", path.display());
            Ok(true)
        }
        Command::Stats(args) => {
            let test = match args.test {
                TestArg::Wilcoxon => StatsTest::Wilcoxon,
                TestArg::Spearman => StatsTest::Spearman,
            };
            let method = match args.method {
                MethodArg::Exact => TestMethod::ExactEnumeration,
                MethodArg::TApprox => TestMethod::TApproximation,
            };
            let filter = args.dataset.as_deref().map(|d| ("dataset", d));
            let r = run_stats(&args.csv, &args.col_a, &args.col_b, test, method, filter)?;
            println!("statistic={} p={} method={} n={}", r.statistic, r.p_value, r.method, r.n);
            if r.degenerate {
                eprintln!("warning: degenerate input");
            }
            Ok(true)
        }
        Command::Phantom(args) => {
            let source = args.predictions.then(|| ConditionSource::from_arg(&args.conditions)).transpose()?;
            let manifest = write_phantom_suite(&args.out, source.as_ref())?;
            println!("{}", manifest.display());
            Ok(true)
        }
        Command::Sizes(args) => {
            let source = ConditionSource::from_arg(&args.conditions)?;
            let datasets = match (args.dataset, args.native) {
                (Some(name), Some(native)) => vec![(name, parse_size(&native)?)],
                (Some(name), None) => {
                    let native = widthstrat::resample::PAPER_DATASETS
                        .iter()
                        .find(|(n, _)| n.eq_ignore_ascii_case(&name))
                        .map(|(_, s)| *s);
                    match native {
                        Some(s) => vec![(name, s)],
                        None => bail!("unknown dataset {name}; pass --native WxH"),
                    }
                }
                _ => Vec::new(),
            };
            print!("{}", sizes_csv(&sizes_table(&source, &datasets)?));
            Ok(true)
        }
        Command::Plotdata(args) => {
            let file = std::fs::File::open(&args.report).with_context(|| format!("opening {}", args.report.display()))?;
            let report = ReportTable::from_csv_reader(file)?;
            for path in emit_plotdata(&report, &args.out)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
