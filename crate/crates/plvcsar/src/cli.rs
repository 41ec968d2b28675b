use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use plvcsar_core::ivqr::{
    asymptotic_cov, confidence_intervals, select_knots, CiRate, KnotChoice, RhoGrid,
    WeightMatrix,
};
use plvcsar_core::model::{assemble_design_with, InstrumentSet};
use plvcsar_core::ranktest::{
    rs_beta_test, rs_constancy_test, BandwidthRule, DensityConfig, NullFit, RankTestConfig, ReferenceMode,
};
use plvcsar_core::sim::{
    band_data, made_grid, run_model_comparison, run_monte_carlo, size_power_study, DgpSampler, DgpSpec, Estimator,
    Example, FittedModel, MonteCarloReport, StudyConfig, TestKind,
};
use plvcsar_core::spline::{default_knot_candidates, SicPenalty};
use plvcsar_core::{estimate, Dataset, IvqrConfig, SplineBasis};

use crate::error::{Error, Result, EXIT_USAGE};
use crate::io;
use crate::report::{tau_label, Cell, EstimateReport, Format, Table, TestReport};
use crate::runner::Parallel;

#[derive(Debug, Parser)]
#[command(name = "plvcsar", version, about = "IVQR estimation and rank-score tests for PLVC-SAR models")]
pub struct Cli {
    /// key=value file supplying any long flag; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the model at each quantile level and write intervals and curves.
    Fit(FitArgs),
    /// Rank-score tests of linear coefficients or constancy of varying ones.
    Test(TestArgs),
    /// Monte Carlo studies on the simulated designs.
    Simulate(SimulateArgs),
    /// Knot-count selection table.
    Knots(KnotsArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV with columns y, x1..xp, z1..zq, u.
    #[arg(long)]
    pub data: PathBuf,
    /// Dense n x n CSV or i,j,w triplets (0-based).
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Instruments {
    #[value(name = "wx_wz")]
    WxWz,
    #[value(name = "wx")]
    Wx,
    #[value(name = "x_z")]
    XZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rate {
    #[value(name = "sqrt_n")]
    SqrtN,
    #[value(name = "paper_n")]
    InverseN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Penalty {
    Full,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Bandwidth {
    #[value(name = "hall_sheather")]
    HallSheather,
    Bofinger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightA {
    Identity,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Knots {
    Auto,
    Fixed(usize),
}

fn parse_knots(s: &str) -> std::result::Result<Knots, String> {
    if s == "auto" {
        return Ok(Knots::Auto);
    }
    s.parse().map(Knots::Fixed).map_err(|_| format!("expected `auto` or a knot count, found `{s}`"))
}

fn parse_grid(s: &str) -> std::result::Result<RhoGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: std::result::Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
    match nums.as_deref() {
        Ok(&[lo, hi, step]) => RhoGrid::new(lo, hi, step).map_err(|e| e.to_string()),
        _ => Err(format!("expected lo:hi:step, found `{s}`")),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Usage(format!("--{what}: cannot parse `{}`", v.trim())))
        })
        .collect()
}

/// Quantile levels: comma separated, strictly increasing, inside (0, 1).
pub fn parse_taus(s: &str) -> Result<Vec<f64>> {
    let taus: Vec<f64> = parse_list(s, "tau")?;
    if taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::Usage(format!("--tau values must lie in (0, 1): `{s}`")));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Usage(format!("--tau values must be strictly increasing: `{s}`")));
    }
    Ok(taus)
}

#[derive(Debug, Args)]
pub struct EstimationArgs {
    /// Interior knots: `auto` or a fixed count.
    #[arg(long, default_value = "auto", value_parser = parse_knots)]
    pub knots: Knots,
    /// Spatial coefficient grid as lo:hi:step.
    #[arg(long, value_name = "LO:HI:STEP", default_value = "-0.99:0.99:0.01", value_parser = parse_grid)]
    pub rho_grid: RhoGrid,
    #[arg(long, value_enum, default_value = "wx_wz")]
    pub instruments: Instruments,
    /// Parameter count in the knot-selection criterion.
    #[arg(long, value_enum, default_value = "full")]
    pub sic: Penalty,
    #[arg(long, value_enum, default_value = "hall_sheather")]
    pub bandwidth: Bandwidth,
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth_scale: f64,
    /// Weighting of the instrument coefficients in the grid criterion.
    #[arg(long, value_enum, default_value = "identity")]
    pub weight_a: WeightA,
    #[arg(long, default_value_t = 200)]
    pub bootstrap_reps: usize,
}

impl EstimationArgs {
    pub fn config(&self, tau: f64, seed: u64) -> IvqrConfig {
        let mut c = IvqrConfig::new(tau);
        c.rho_grid = self.rho_grid;
        c.instruments = match self.instruments {
            Instruments::WxWz => InstrumentSet::WxWz,
            Instruments::Wx => InstrumentSet::Wx,
            Instruments::XZ => InstrumentSet::XZ,
        };
        c.knots = match self.knots {
            Knots::Fixed(k) => KnotChoice::Fixed(k),
            Knots::Auto => KnotChoice::Auto {
                candidates: None,
                penalty: self.penalty(),
            },
        };
        c.density = DensityConfig {
            rule: match self.bandwidth {
                Bandwidth::HallSheather => BandwidthRule::HallSheather,
                Bandwidth::Bofinger => BandwidthRule::Bofinger,
            },
            scale: self.bandwidth_scale,
            ..DensityConfig::default()
        };
        c.weight_a = match self.weight_a {
            WeightA::Identity => WeightMatrix::Identity,
            WeightA::Bootstrap => WeightMatrix::InverseZetaCov {
                reps: self.bootstrap_reps,
                seed,
            },
        };
        c
    }

    fn penalty(&self) -> SicPenalty {
        match self.sic {
            Penalty::Full => SicPenalty::FullCount,
            Penalty::Literal => SicPenalty::Literal,
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

impl OutputArgs {
    fn dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated quantile levels.
    #[arg(long, default_value = "0.5")]
    pub tau: String,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[arg(long, value_enum, default_value = "sqrt_n")]
    pub ci_rate: Rate,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Points of the u grid for the coefficient curves.
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NullFitArg {
    Ivqr,
    #[value(name = "naive_qr")]
    NaiveQr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    Auto,
    #[value(name = "chi2")]
    ChiSquare,
    Normal,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "0.5")]
    pub tau: String,
    /// Test `beta = 0` for the named linear columns, e.g. `x1` or `x1,x2`
    /// (joint). Repeatable.
    #[arg(long = "beta", value_name = "COLUMNS")]
    pub beta: Vec<String>,
    /// Test constancy of the named varying coefficients, e.g. `z1`. Repeatable.
    #[arg(long = "constancy", value_name = "COLUMNS")]
    pub constancy: Vec<String>,
    /// Restricted-fit knots: `auto` is floor(n^(1/5)).
    #[arg(long, default_value = "auto", value_parser = parse_knots)]
    pub knots: Knots,
    #[arg(long, value_name = "LO:HI:STEP", default_value = "-0.99:0.99:0.01", value_parser = parse_grid)]
    pub rho_grid: RhoGrid,
    #[arg(long, value_enum, default_value = "wx_wz")]
    pub instruments: Instruments,
    #[arg(long, value_enum, default_value = "ivqr")]
    pub null_fit: NullFitArg,
    #[arg(long, value_enum, default_value = "auto")]
    pub reference: ReferenceArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// table1 | table2 | table3 | table4 | band, or a design name
    /// (ex1_plvc, ex2_plvc_hetero, ex1_sar, ex2_sar_hetero).
    #[arg(long)]
    pub preset: String,
    /// Comma-separated sample sizes; the default depends on the preset.
    #[arg(long)]
    pub n: Option<String>,
    /// Comma-separated quantile levels; the default depends on the preset.
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Dial values for the size/power study.
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    pub dials: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Also write the first replicate as sim_data.csv and sim_weights.csv.
    #[arg(long)]
    pub emit_data: bool,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct KnotsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "0.5")]
    pub tau: String,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

const SUBCOMMANDS: [&str; 4] = ["fit", "test", "simulate", "knots"];

/// Splices the `--config` file into `args`.
fn with_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let Some(position) = args.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let entries = crate::config::load(Path::new(&path))?;
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(&args[position]).expect("known subcommand");
    let known = |key: &str| sub.get_arguments().find(|a| a.get_long() == Some(key));
    let mut kept = Vec::new();
    for (key, value) in entries {
        if known(&key).is_some() {
            kept.push((key, value));
        } else if !cmd.get_subcommands().any(|s| s.get_arguments().any(|a| a.get_long() == Some(key.as_str()))) {
            return Err(Error::Usage(format!("{path}: unknown key `{key}`")));
        }
    }
    let switch = |key: &str| known(key).is_some_and(|a| !a.get_action().takes_values());
    Ok(crate::config::merge(&args, position, &kept, switch))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let args = match with_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Knots(a) => cmd_knots(a),
    };
    match result {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Usage(format!("--alpha must lie in (0, 1), found {alpha}")))
    }
}

fn load(data: &DataArgs) -> Result<Dataset> {
    io::read_dataset(&data.data, &data.weights)
}

pub fn cmd_fit(a: &FitArgs) -> Result<Vec<PathBuf>> {
    let taus = parse_taus(&a.tau)?;
    check_alpha(a.alpha)?;
    if a.grid_points < 2 {
        return Err(Error::Usage("--grid-points must be at least 2".into()));
    }
    let data = load(&a.data)?;
    let dir = a.output.dir()?;
    let (rate, rate_name) = match a.ci_rate {
        Rate::SqrtN => (CiRate::SqrtN, "sqrt_n"),
        Rate::InverseN => (CiRate::InverseN, "paper_n"),
    };
    let u = data.u();
    let grid = made_grid(u.min(), u.max(), a.grid_points);
    let mut curves = Table::new(["u"]);
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut written = Vec::new();

    for &tau in &taus {
        let cfg = a.estimation.config(tau, 0);
        let est = estimate(&data, &cfg)?;
        let design = assemble_design_with(&data, &est.basis, cfg.instruments)?;
        let bundle = asymptotic_cov(&est, &design, &cfg)?;
        let ci = confidence_intervals(&est, &bundle, a.alpha, &grid, rate)?;
        log::info!("tau {tau}: rho {:.4}, k_n {}", est.rho_hat, est.basis.interior_knot_count());

        let label = tau_label(tau);
        let report = EstimateReport::new(&est, &bundle, &ci, rate_name);
        let path = dir.join(format!("estimate_tau{label}.json"));
        crate::report::write_json(&path, &report)?;
        written.push(path);

        let mut table = Table::new(["parameter", "estimate", "std_error", "lower", "upper"]);
        for r in &report.intervals {
            table.push(vec![r.parameter.clone().into(), r.estimate.into(), r.std_error.into(), r.lower.into(), r.upper.into()]);
        }
        written.push(table.write(dir, &format!("ci_tau{label}"), a.output.format)?);

        for (l, band) in ci.gamma.iter().enumerate() {
            let stem = format!("gamma{}_tau{label}", l + 1);
            curves.columns.extend([stem.clone(), format!("{stem}_lower"), format!("{stem}_upper")]);
            columns.push(band.iter().map(|p| p.interval.estimate).collect());
            columns.push(band.iter().map(|p| p.interval.lower).collect());
            columns.push(band.iter().map(|p| p.interval.upper).collect());
        }
    }
    if data.q() > 0 {
        for (i, &u) in grid.iter().enumerate() {
            let mut row = vec![Cell::Num(u)];
            row.extend(columns.iter().map(|c| Cell::Num(c[i])));
            curves.push(row);
        }
        let path = dir.join("gamma_curves.csv");
        curves.write_csv(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Resolves `x1,x3` style names to 0-based indices of one column family.
fn column_indices(spec: &str, prefix: char, count: usize, flag: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for name in spec.split(',').map(str::trim) {
        let idx = name
            .strip_prefix(prefix)
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1 && k <= count)
            .ok_or_else(|| {
                Error::Usage(format!("--{flag}: `{name}` is not one of {prefix}1..{prefix}{count}"))
            })?;
        if out.contains(&(idx - 1)) {
            return Err(Error::Usage(format!("--{flag}: `{name}` listed twice")));
        }
        out.push(idx - 1);
    }
    Ok(out)
}

pub fn cmd_test(a: &TestArgs) -> Result<Vec<PathBuf>> {
    if a.beta.is_empty() && a.constancy.is_empty() {
        return Err(Error::Usage("no hypothesis given; use --beta and/or --constancy".into()));
    }
    let taus = parse_taus(&a.tau)?;
    check_alpha(a.alpha)?;
    let data = load(&a.data)?;
    let mut hypotheses = Vec::new();
    for h in &a.beta {
        hypotheses.push((TestKind::Beta, h.clone(), column_indices(h, 'x', data.p(), "beta")?));
    }
    for h in &a.constancy {
        hypotheses.push((TestKind::Constancy, h.clone(), column_indices(h, 'z', data.q(), "constancy")?));
    }
    let dir = a.output.dir()?;
    let k_n = match a.knots {
        Knots::Fixed(k) => k,
        Knots::Auto => (data.n() as f64).powf(0.2).floor() as usize,
    };
    let basis = SplineBasis::cubic(data.u().as_slice(), k_n)?;

    let mut reports = Vec::new();
    for &tau in &taus {
        let mut cfg = RankTestConfig::new(tau);
        cfg.ivqr.rho_grid = a.rho_grid;
        cfg.ivqr.instruments = match a.instruments {
            Instruments::WxWz => InstrumentSet::WxWz,
            Instruments::Wx => InstrumentSet::Wx,
            Instruments::XZ => InstrumentSet::XZ,
        };
        cfg.null_fit = match a.null_fit {
            NullFitArg::Ivqr => NullFit::Ivqr,
            NullFitArg::NaiveQr => NullFit::NaiveQr,
        };
        cfg.reference = match a.reference {
            ReferenceArg::Auto => ReferenceMode::Auto,
            ReferenceArg::ChiSquare => ReferenceMode::ChiSquare,
            ReferenceArg::Normal => ReferenceMode::Normal,
        };
        for (kind, name, idx) in &hypotheses {
            let (r, label) = match kind {
                TestKind::Beta => (rs_beta_test(&data, &basis, idx, &cfg)?, "beta"),
                TestKind::Constancy => (rs_constancy_test(&data, &basis, idx, &cfg)?, "constancy"),
            };
            reports.push(TestReport::new(tau, label, name.clone(), &r, a.alpha));
        }
    }
    let path = match a.output.format {
        Format::Json => {
            let p = dir.join("tests.json");
            crate::report::write_json(&p, &reports)?;
            p
        }
        Format::Csv => {
            let p = dir.join("tests.csv");
            let mut w = csv::Writer::from_path(&p)?;
            for r in &reports {
                w.serialize(r)?;
            }
            w.flush().map_err(|e| Error::io(&p, e))?;
            p
        }
    };
    Ok(vec![path])
}

pub fn cmd_knots(a: &KnotsArgs) -> Result<Vec<PathBuf>> {
    let taus = parse_taus(&a.tau)?;
    let data = load(&a.data)?;
    let dir = a.output.dir()?;
    let candidates = match a.estimation.knots {
        Knots::Auto => default_knot_candidates(data.n()),
        Knots::Fixed(k) => (0..=k).collect(),
    };
    let mut table = Table::new(["tau", "k_n", "objective", "sic", "selected"]);
    for &tau in &taus {
        let cfg = a.estimation.config(tau, 0);
        let (sel, _) = select_knots(&data, &cfg, &candidates, a.estimation.penalty())?;
        for s in &sel.table {
            table.push(vec![tau.into(), s.k_n.into(), s.objective.into(), s.sic.into(), (s.k_n == sel.selected).into()]);
        }
    }
    Ok(vec![table.write(dir, "knots", a.output.format)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Comparison,
    Accuracy(Example),
    Power,
    Band,
}

impl Preset {
    pub const NAMES: [&'static str; 9] = [
        "table1",
        "table2",
        "table3",
        "table4",
        "band",
        "ex1_plvc",
        "ex2_plvc_hetero",
        "ex1_sar",
        "ex2_sar_hetero",
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "table1" => Preset::Comparison,
            "table2" => Preset::Accuracy(Example::Ex1Plvc),
            "table3" => Preset::Accuracy(Example::Ex2PlvcHetero),
            "table4" => Preset::Power,
            "band" => Preset::Band,
            other => match Example::from_name(other) {
                Some(e) => Preset::Accuracy(e),
                None => {
                    return Err(Error::Usage(format!(
                        "unknown preset `{other}`; valid presets: {}",
                        Self::NAMES.join(", ")
                    )))
                }
            },
        })
    }

    fn default_n(self) -> &'static str {
        match self {
            Preset::Accuracy(_) => "100,200,500",
            Preset::Comparison => "100",
            Preset::Power | Preset::Band => "200",
        }
    }

    fn default_tau(self) -> &'static str {
        match self {
            Preset::Accuracy(_) => "0.25,0.5,0.75",
            _ => "0.5",
        }
    }

    fn primary(self) -> Example {
        match self {
            Preset::Accuracy(e) => e,
            _ => Example::Ex1Plvc,
        }
    }
}

fn summary_rows(r: &MonteCarloReport) -> Vec<(&'static str, &'static str, f64)> {
    let mut rows = vec![
        ("rho", "bias", r.rho.bias),
        ("rho", "rmse", r.rho.rmse),
        ("beta", "bias", r.beta.bias),
        ("beta", "rmse", r.beta.rmse),
    ];
    const GAMMA: [&str; 4] = ["gamma1", "gamma2", "gamma3", "gamma4"];
    for (l, &m) in r.made.iter().enumerate().take(GAMMA.len()) {
        rows.push((GAMMA[l], "made", m));
    }
    rows
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let preset = Preset::parse(&a.preset)?;
    let ns: Vec<usize> = parse_list(a.n.as_deref().unwrap_or(preset.default_n()), "n")?;
    let taus = parse_taus(a.tau.as_deref().unwrap_or(preset.default_tau()))?;
    let dials: Vec<f64> = parse_list(&a.dials, "dials")?;
    check_alpha(a.alpha)?;
    if a.reps == 0 {
        return Err(Error::Usage("--reps must be at least 1".into()));
    }
    let runner = Parallel::new(a.threads).map_err(|e| Error::Usage(format!("--threads: {e}")))?;
    let dir = a.output.dir()?;
    let mut written = Vec::new();

    if a.emit_data {
        let spec = DgpSpec::new(preset.primary(), ns[0], taus[0], a.seed);
        let d = DgpSampler::new(spec)?.replicate(0)?;
        let (dp, wp) = (dir.join("sim_data.csv"), dir.join("sim_weights.csv"));
        io::write_dataset(&dp, &d)?;
        io::write_weights_dense(&wp, d.w())?;
        written.extend([dp, wp]);
    }

    let tau_cols = |suffixes: &[&str]| -> Vec<String> {
        taus.iter()
            .flat_map(|t| suffixes.iter().map(move |s| format!("tau{}{s}", tau_label(*t))))
            .collect()
    };
    let (stem, table) = match preset {
        Preset::Accuracy(example) => {
            let fitted = if example.is_sar() { FittedModel::Sar } else { FittedModel::Plvc };
            let mut table = Table::new(["n", "param", "metric"].into_iter().map(String::from).chain(tau_cols(&["_ivqr", "_qr"])));
            for &n in &ns {
                let mut cols: Vec<Vec<(&'static str, &'static str, f64)>> = Vec::new();
                for &tau in &taus {
                    let spec = DgpSpec::new(example, n, tau, a.seed);
                    let cfg = a.estimation.config(tau, a.seed);
                    for est in [Estimator::Ivqr, Estimator::NaiveQr] {
                        cols.push(summary_rows(&run_monte_carlo(&spec, est, fitted, &cfg, a.reps, &runner)?));
                    }
                }
                for i in 0..cols[0].len() {
                    let (param, metric, _) = cols[0][i];
                    let mut row = vec![n.into(), param.into(), metric.into()];
                    row.extend(cols.iter().map(|c| Cell::Num(c[i].2)));
                    table.push(row);
                }
            }
            (a.preset.clone(), table)
        }
        Preset::Comparison => {
            let head = ["n", "underlying", "fitted", "param", "metric"];
            let mut table = Table::new(head.into_iter().map(String::from).chain(tau_cols(&[""])));
            for &n in &ns {
                for base in [Example::Ex1Plvc, Example::Ex2PlvcHetero] {
                    let mut per_tau = Vec::new();
                    for &tau in &taus {
                        let plvc = DgpSpec::new(base, n, tau, a.seed);
                        let sar = DgpSpec::new(base.counterpart(), n, tau, a.seed);
                        let cfg = a.estimation.config(tau, a.seed);
                        per_tau.push(run_model_comparison([&plvc, &sar], &cfg, a.reps, &runner)?);
                    }
                    for (c, cell) in per_tau[0].iter().enumerate() {
                        let fitted = match cell.fitted {
                            FittedModel::Plvc => "plvc",
                            FittedModel::Sar => "sar",
                        };
                        for (i, (param, metric, _)) in summary_rows(&cell.report).into_iter().enumerate() {
                            if param.starts_with("gamma") {
                                continue;
                            }
                            let mut row = vec![n.into(), cell.underlying.name().into(), fitted.into(), param.into(), metric.into()];
                            row.extend(per_tau.iter().map(|t| Cell::Num(summary_rows(&t[c].report)[i].2)));
                            table.push(row);
                        }
                    }
                }
            }
            (a.preset.clone(), table)
        }
        Preset::Power => {
            let head = ["n", "example", "test", "dial"];
            let mut table = Table::new(head.into_iter().map(String::from).chain(tau_cols(&["_qr", "_ivqr"])));
            for &n in &ns {
                for example in [Example::Ex1Plvc, Example::Ex2PlvcHetero] {
                    for (kind, name) in [(TestKind::Beta, "beta"), (TestKind::Constancy, "constancy")] {
                        let mut per_tau = Vec::new();
                        for &tau in &taus {
                            let spec = DgpSpec::new(example, n, tau, a.seed);
                            let mut study = StudyConfig::new(tau, n);
                            study.alpha = a.alpha;
                            per_tau.push(size_power_study(kind, &dials, &spec, &study, a.reps, &runner)?);
                        }
                        for (i, &dial) in dials.iter().enumerate() {
                            let mut row = vec![n.into(), example.name().into(), name.into(), dial.into()];
                            for rows in &per_tau {
                                row.extend([Cell::Num(rows[i].qr_rate), Cell::Num(rows[i].ivqr_rate)]);
                            }
                            table.push(row);
                        }
                    }
                }
            }
            (a.preset.clone(), table)
        }
        Preset::Band => {
            let mut table = Table::new(["n", "tau", "coefficient", "u", "truth", "estimate", "lower", "upper"]);
            let grid = made_grid(0.0, 2.0, 200);
            for &n in &ns {
                for &tau in &taus {
                    let spec = DgpSpec::new(Example::Ex1Plvc, n, tau, a.seed);
                    let cfg = a.estimation.config(tau, a.seed);
                    for (l, band) in band_data(&spec, 0, &cfg, a.alpha, &grid)?.iter().enumerate() {
                        for r in band {
                            table.push(vec![
                                n.into(),
                                tau.into(),
                                (l + 1).into(),
                                r.u.into(),
                                r.truth.into(),
                                r.estimate.into(),
                                r.lower.into(),
                                r.upper.into(),
                            ]);
                        }
                    }
                }
            }
            (a.preset.clone(), table)
        }
    };
    written.push(table.write(dir, &format!("simulate_{stem}"), a.output.format)?);
    Ok(written)
}
