use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use income_dynamics::calibrate::{
    conversion_inputs, fit_conversion_for_years, median_mean_ratio, peak_group_history,
    regress_table, write_peak_history, write_ratios, write_regressions, ConversionFit,
};
use income_dynamics::format::fmt_f64;
use income_dynamics::ingest::{
    parse_income_table, parse_population_series, write_income_table, DollarBasis, GdpSeries,
    GroupLabels, PopulationTotals, Statistic, TableSchema, participation_table, correct_table,
};
use income_dynamics::kinetics::{
    five_year_bins, model_curveset, tcr_series, ten_year_bins, Anchor, CurveSet,
};
use income_dynamics::macrodyn::{
    coupled_run, gdp_growth_rates, invert_cohort, project_income, rms_relative_error,
    write_inversion, write_macro_run, write_totals, CohortSeries, InversionMode, MacroState,
    ScenarioConfig,
};
use income_dynamics::{Error, ErrorClass, Result};

#[derive(Parser, Debug)]
#[command(name = "incdyn", version, about = "Income vs. work experience model toolkit")]
struct Cli {
    /// Directory receiving the output files and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Scenario configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Encoding of curve-set outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Merge genders, apply participation correction, normalize.
    Ingest(IngestArgs),
    /// Critical work experience series and model curves.
    Model(ModelArgs),
    /// Fit the model-to-currency conversion factor.
    Calibrate(CalibrateArgs),
    /// Per-group trend lines, peak-group history, median/mean ratios.
    Regress(RegressArgs),
    /// Coupled GDP / critical experience run driven by a cohort series.
    MacroForward(MacroForwardArgs),
    /// Estimate the cohort series from GDP growth.
    MacroInvert(MacroInvertArgs),
    /// Constant-trend projection of curves and income totals.
    Project(ProjectArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Income table CSV.
    #[arg(long)]
    income: PathBuf,
    /// Population by group CSV (`year,exp_lo,exp_hi,population`).
    #[arg(long)]
    population: PathBuf,
    /// Group bounds in both files are ages (`age_lo,age_hi`).
    #[arg(long)]
    age_labels: bool,
    /// Dollar basis of the income table.
    #[arg(long, default_value = "chained_2001_dollars")]
    basis: DollarBasis,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// GDP per capita CSV (`year,gdp_per_capita`).
    #[arg(long)]
    gdp: PathBuf,
    /// Total population CSV (`year,population`); switches to the per-capita recurrence.
    #[arg(long)]
    population_total: Option<PathBuf>,
    /// Years to emit curves for (default: every year of the series).
    #[arg(long, value_delimiter = ',')]
    years: Vec<i32>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Model curves (`curves.csv` or `curves.json`).
    #[arg(long)]
    curves: PathBuf,
    /// Observed income table CSV.
    #[arg(long)]
    observed: PathBuf,
    /// Years fitted jointly.
    #[arg(long, value_delimiter = ',', required = true)]
    years: Vec<i32>,
    /// Keep the youngest group in the fit.
    #[arg(long)]
    include_youngest: bool,
}

#[derive(Args, Debug)]
struct RegressArgs {
    /// Mean income table CSV.
    #[arg(long)]
    table: PathBuf,
    /// Also fit every group with this imposed slope.
    #[arg(long, allow_hyphen_values = true)]
    slope: Option<f64>,
    /// Median income table (`median_income` value column) for ratio diagnostics.
    #[arg(long)]
    median: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MacroForwardArgs {
    /// Cohort CSV (`year,age,count`).
    #[arg(long)]
    cohort: PathBuf,
    /// Total population CSV (`year,population`).
    #[arg(long)]
    population_total: PathBuf,
    /// GDP per capita in the configuration's start year.
    #[arg(long)]
    gdp_per_capita: f64,
}

#[derive(Args, Debug)]
struct MacroInvertArgs {
    /// Observed cohort CSV (`year,age,count`).
    #[arg(long)]
    cohort: PathBuf,
    /// GDP per capita CSV (`year,gdp_per_capita`).
    #[arg(long)]
    gdp: PathBuf,
    /// Total population CSV; growth then refers to total rather than per-capita GDP.
    #[arg(long)]
    population_total: Option<PathBuf>,
    /// Chain estimates instead of restarting from each observed year.
    #[arg(long)]
    chained: bool,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    /// Projected population by group CSV.
    #[arg(long)]
    population: PathBuf,
    /// Group bounds are ages.
    #[arg(long)]
    age_labels: bool,
    /// Conversion fit JSON from `calibrate`.
    #[arg(long)]
    conversion: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    inputs: Vec<String>,
    config: serde_json::Value,
    outputs: Vec<String>,
    tool_version: &'static str,
}

/// Files produced by a command, held in memory until the run succeeds.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    inputs: Vec<String>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        self.inputs.push(path.display().to_string());
        fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

struct Context {
    format: Format,
    config: Option<ScenarioConfig>,
}

impl Context {
    fn config(&self) -> Result<&ScenarioConfig> {
        self.config
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs --config".into()))
    }
}

fn curves_output(out: &mut Outputs, format: Format, curves: &CurveSet) -> Result<()> {
    match format {
        Format::Csv => out.csv("curves.csv", |b| curves.write_csv(b)),
        Format::Json => {
            let mut text = curves.to_json()?;
            text.push('\n');
            out.add("curves.json", text.into_bytes());
            Ok(())
        }
    }
}

fn binned_output(out: &mut Outputs, name: &str, curves: &CurveSet, bins: &[income_dynamics::ingest::GroupInterval]) -> Result<()> {
    let binned = curves.binned(bins)?;
    out.csv(name, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["year", "exp_lo", "exp_hi", "value"])?;
        for (year, values) in &binned {
            for (g, v) in bins.iter().zip(values) {
                w.write_record([year.to_string(), g.lo.to_string(), g.hi.to_string(), fmt_f64(*v)])?;
            }
        }
        w.flush().map_err(|source| Error::Io { path: name.into(), source })?;
        Ok(())
    })
}

fn read_table(out: &mut Outputs, path: &Path, schema: &TableSchema) -> Result<income_dynamics::ingest::IncomeTable> {
    let bytes = out.read(path)?;
    parse_income_table(bytes.as_slice(), schema)
}

fn run_ingest(a: &IngestArgs, out: &mut Outputs) -> Result<()> {
    let labels = if a.age_labels { GroupLabels::Age } else { GroupLabels::WorkExperience };
    let mut schema = if a.age_labels { TableSchema::age_labelled() } else { TableSchema::default() };
    schema.basis = a.basis;
    let table = read_table(out, &a.income, &schema)?;
    let pop_bytes = out.read(&a.population)?;
    let pop = parse_population_series(pop_bytes.as_slice(), labels)?;

    let combined = table.combine_genders()?;
    let corrected = correct_table(&combined, &pop)?;
    let normalized = corrected.normalized_per_year()?;
    let participation = participation_table(&combined, &pop)?;
    for r in &participation {
        if let Some(w) = r.factor.warning {
            eprintln!(
                "warning: participation factor {} exceeds {} in {} {}",
                w.factor, w.threshold, r.year, r.group
            );
        }
    }
    out.csv("combined.csv", |b| write_income_table(&combined, b))?;
    out.csv("corrected.csv", |b| write_income_table(&corrected, b))?;
    out.csv("normalized.csv", |b| write_income_table(&normalized, b))?;
    out.csv("participation.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["year", "exp_lo", "exp_hi", "factor", "warning"])?;
        for r in &participation {
            w.write_record([
                r.year.to_string(),
                r.group.lo.to_string(),
                r.group.hi.to_string(),
                fmt_f64(r.factor.value),
                r.factor.warning.is_some().to_string(),
            ])?;
        }
        w.flush().map_err(|source| Error::Io { path: "participation.csv".into(), source })?;
        Ok(())
    })
}

fn run_model(a: &ModelArgs, ctx: &Context, out: &mut Outputs) -> Result<()> {
    let cfg = ctx.config()?;
    let params = cfg.model_params()?;
    let gdp = GdpSeries::parse(out.read(&a.gdp)?.as_slice())?;
    let pop = match &a.population_total {
        Some(p) => Some(PopulationTotals::parse(out.read(p)?.as_slice())?),
        None => None,
    };
    let tcr = tcr_series(&params, &gdp, pop.as_ref())?;
    let years: Vec<i32> = if a.years.is_empty() {
        tcr.iter().map(|(y, _)| y).collect()
    } else {
        a.years.clone()
    };
    let grid = cfg.grid();
    let curves = model_curveset(&params, &tcr, &years, grid)?;
    let t_max = grid.t_max.floor() as i32;
    let ten = model_curveset(&params.with_anchor(Anchor::TEN_YEAR)?, &tcr, &years, grid)?;
    let five = model_curveset(&params.with_anchor(Anchor::FIVE_YEAR)?, &tcr, &years, grid)?;

    out.csv("tcr.csv", |b| tcr.write_csv(b))?;
    curves_output(out, ctx.format, &curves)?;
    binned_output(out, "binned_10y.csv", &ten, &ten_year_bins(t_max))?;
    binned_output(out, "binned_5y.csv", &five, &five_year_bins(t_max))
}

fn read_curves(out: &mut Outputs, path: &Path) -> Result<CurveSet> {
    let bytes = out.read(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::Invalid(format!("{} is not UTF-8: {e}", path.display())))?;
        CurveSet::from_json(&text)
    } else {
        CurveSet::parse_csv(bytes.as_slice())
    }
}

fn run_calibrate(a: &CalibrateArgs, out: &mut Outputs) -> Result<()> {
    let curves = read_curves(out, &a.curves)?;
    let observed = read_table(out, &a.observed, &TableSchema::default())?;
    let fit = fit_conversion_for_years(&curves, &observed, &a.years, !a.include_youngest)?;
    let (pred, obs) = conversion_inputs(&curves, &observed, &a.years, &fit.excluded_groups)?;

    let mut json = fit.to_json()?;
    json.push('\n');
    out.add("conversion_fit.json", json.into_bytes());
    out.csv("comparison.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["year", "exp_lo", "exp_hi", "model", "observed", "fitted"])?;
        for ((year, g), p) in &pred {
            w.write_record([
                year.to_string(),
                g.lo.to_string(),
                g.hi.to_string(),
                fmt_f64(*p),
                fmt_f64(obs[&(*year, *g)]),
                fmt_f64(p * fit.factor),
            ])?;
        }
        w.flush().map_err(|source| Error::Io { path: "comparison.csv".into(), source })?;
        Ok(())
    })
}

fn run_regress(a: &RegressArgs, out: &mut Outputs) -> Result<()> {
    let table = read_table(out, &a.table, &TableSchema::default())?;
    let free = regress_table(&table, None)?;
    out.csv("regressions.csv", |b| write_regressions(&free, b))?;
    if let Some(slope) = a.slope {
        let imposed = regress_table(&table, Some(slope))?;
        out.csv("regressions_imposed.csv", |b| write_regressions(&imposed, b))?;
    }
    let peaks = peak_group_history(&table)?;
    out.csv("peak_groups.csv", |b| write_peak_history(&peaks, b))?;
    if let Some(path) = &a.median {
        let schema = TableSchema {
            mean: "median_income".into(),
            statistic: Statistic::Median,
            basis: table.basis,
            ..TableSchema::default()
        };
        let median = read_table(out, path, &schema)?;
        let ratios = median_mean_ratio(&median, &table)?;
        out.csv("ratios.csv", |b| write_ratios(&ratios, b))?;
    }
    Ok(())
}

fn run_macro_forward(a: &MacroForwardArgs, ctx: &Context, out: &mut Outputs) -> Result<()> {
    let cfg = ctx.config()?;
    let cohort = CohortSeries::parse_csv(out.read(&a.cohort)?.as_slice())?;
    let pop = PopulationTotals::parse(out.read(&a.population_total)?.as_slice())?;
    let initial = MacroState {
        year: cfg.start_year,
        tcr: cfg.tcr0,
        gdp_per_capita: a.gdp_per_capita,
    };
    let steps = coupled_run(initial, &cohort, &pop)?;
    out.csv("macro.csv", |b| write_macro_run(&initial, &steps, b))
}

fn run_macro_invert(a: &MacroInvertArgs, ctx: &Context, out: &mut Outputs) -> Result<()> {
    let cfg = ctx.config()?;
    let params = cfg.model_params()?;
    let cohort = CohortSeries::parse_csv(out.read(&a.cohort)?.as_slice())?;
    let gdp = GdpSeries::parse(out.read(&a.gdp)?.as_slice())?;
    let pop = match &a.population_total {
        Some(p) => Some(PopulationTotals::parse(out.read(p)?.as_slice())?),
        None => None,
    };
    let tcr = tcr_series(&params, &gdp, None)?;
    let growth = gdp_growth_rates(&gdp, pop.as_ref())?;
    let mode = if a.chained { InversionMode::Chained } else { InversionMode::OneStep };
    let points = invert_cohort(&cohort, &growth, &tcr, mode)?;
    if let Some(rms) = rms_relative_error(&points) {
        eprintln!("rms relative error: {}", fmt_f64(rms));
    }
    out.csv("inverse.csv", |b| write_inversion(&points, b))
}

fn run_project(a: &ProjectArgs, ctx: &Context, out: &mut Outputs) -> Result<()> {
    let cfg = ctx.config()?;
    let params = cfg.model_params()?;
    let labels = if a.age_labels { GroupLabels::Age } else { GroupLabels::WorkExperience };
    let pop = parse_population_series(out.read(&a.population)?.as_slice(), labels)?;
    let conversion = match &a.conversion {
        Some(p) => {
            let bytes = out.read(p)?;
            let text = String::from_utf8(bytes)
                .map_err(|e| Error::Invalid(format!("{} is not UTF-8: {e}", p.display())))?;
            Some(ConversionFit::from_json(&text)?)
        }
        None => None,
    };
    let spec = cfg.projection_spec();
    let projection = project_income(&params, &spec, &pop, conversion.as_ref())?;
    curves_output(out, ctx.format, &projection.curves)?;
    binned_output(out, "binned_10y.csv", &projection.curves, &ten_year_bins(spec.grid.t_max.floor() as i32))?;
    out.csv("totals.csv", |b| write_totals(&projection.snapshots, b))
}

/// Stages every file in a temporary directory inside `out_dir`, then moves
/// them into place with the manifest last.
fn commit(out_dir: &Path, outputs: Outputs, command: &str, config: serde_json::Value) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let staging = tempfile::Builder::new()
        .prefix(".incdyn-")
        .tempdir_in(out_dir)
        .map_err(io(out_dir))?;
    let manifest = RunManifest {
        command,
        inputs: outputs.inputs,
        config,
        outputs: outputs.files.iter().map(|(n, _)| n.clone()).collect(),
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    let mut manifest_text = serde_json::to_string_pretty(&manifest)?;
    manifest_text.push('\n');

    let mut staged = Vec::new();
    for (name, bytes) in outputs
        .files
        .iter()
        .map(|(n, b)| (n.as_str(), b.as_slice()))
        .chain([("manifest.json", manifest_text.as_bytes())])
    {
        let tmp = staging.path().join(name);
        fs::write(&tmp, bytes).map_err(io(&tmp))?;
        staged.push((tmp, out_dir.join(name)));
    }
    for (tmp, dest) in staged {
        fs::rename(&tmp, &dest).map_err(io(&dest))?;
    }
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Model(_) => "model",
        Command::Calibrate(_) => "calibrate",
        Command::Regress(_) => "regress",
        Command::MacroForward(_) => "macro-forward",
        Command::MacroInvert(_) => "macro-invert",
        Command::Project(_) => "project",
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut outputs = Outputs::default();
    let (config, config_json) = match &cli.config {
        Some(path) => {
            let bytes = outputs.read(path)?;
            let text = String::from_utf8(bytes)
                .map_err(|e| Error::Config(format!("{} is not UTF-8: {e}", path.display())))?;
            let cfg = ScenarioConfig::from_json(&text)?;
            let json = serde_json::to_value(&cfg)?;
            (Some(cfg), json)
        }
        None => (None, serde_json::Value::Null),
    };
    let ctx = Context {
        format: cli.format,
        config,
    };
    match &cli.command {
        Command::Ingest(a) => run_ingest(a, &mut outputs)?,
        Command::Model(a) => run_model(a, &ctx, &mut outputs)?,
        Command::Calibrate(a) => run_calibrate(a, &mut outputs)?,
        Command::Regress(a) => run_regress(a, &mut outputs)?,
        Command::MacroForward(a) => run_macro_forward(a, &ctx, &mut outputs)?,
        Command::MacroInvert(a) => run_macro_invert(a, &ctx, &mut outputs)?,
        Command::Project(a) => run_project(a, &ctx, &mut outputs)?,
    }
    commit(&cli.out_dir, outputs, command_name(&cli.command), config_json)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Data => ExitCode::from(2),
                ErrorClass::Numeric => ExitCode::from(3),
            }
        }
    }
}
