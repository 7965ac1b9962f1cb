//! Subcommands, flag parsing and the per-run bookkeeping.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gapscope_core::ordinal::{check_embedding, entropy_series, phase_statistics, OrdinalPhaseStats};
use gapscope_core::panel::{log_returns, PricePanel, ReturnPanel};
use gapscope_core::portfolio::{quintile_report, PortfolioStudy, QuintileReport, StudyConfig, StudySkip};
use gapscope_core::regimes::{GapConfig, GapSeries, PhaseRule, PhaseWarning, PhaseWindows, ThresholdParams};
use gapscope_core::series::{DateInterval, DatedSeries};
use gapscope_core::spectral::{NormMode, RhoMode};
use gapscope_core::synth::{
    default_scenario_base, generate_factor_panel, three_phase_scenario_with, two_market_risk_scenario, RegimeSpan,
    ScenarioTruth, SynthConfig, ThreePhaseLayout,
};
use gapscope_core::{stats, Error};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{load_price_panel, write_long, write_meta, Layout};
use crate::manifest::{input_file, replayable_args, InputFile, RunManifest, MANIFEST_NAME};
use crate::output::{slug, to_json_pretty, Cell, Outputs, Table};
use crate::parallel;

#[derive(Debug, Parser)]
#[command(
    name = "gapscope",
    version,
    about = "Spectral complexity gap, ordinal entropy and portfolio-risk studies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rolling complexity-gap series per market (and optionally per sector).
    Gap(GapArgs),
    /// Cross-sectional ordinal entropy and shock-phase statistics.
    Entropy(EntropyArgs),
    /// Rolling random-portfolio risk study with quintile report.
    Portfolio(PortfolioArgs),
    /// Monthly sector grid of the intra-sector normalized largest eigenvalue.
    Heatmap(HeatmapArgs),
    /// Generate a synthetic price panel with its ground truth.
    Synth(SynthArgs),
    /// Re-run a recorded command and check its outputs match.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Price file (long `date,ticker,close` or wide `date,<tickers...>`).
    #[arg(long)]
    pub prices: PathBuf,
    /// Metadata file `ticker,sector,market`.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub layout: Layout,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses all cores. Never changes results.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoArg {
    Signed,
    Abs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormArg {
    Excess,
    Plain,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GapOpts {
    #[arg(long, default_value_t = 60)]
    pub window: usize,
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    #[arg(long, value_enum, default_value = "signed")]
    pub rho_mode: RhoArg,
    #[arg(long, value_enum, default_value = "excess")]
    pub norm_mode: NormArg,
}

impl GapOpts {
    fn config(&self) -> GapConfig {
        GapConfig {
            window: self.window,
            step: self.step,
            rho_mode: match self.rho_mode {
                RhoArg::Signed => RhoMode::SignedMean,
                RhoArg::Abs => RhoMode::AbsoluteMean,
            },
            norm_mode: match self.norm_mode {
                NormArg::Excess => NormMode::Excess,
                NormArg::Plain => NormMode::Plain,
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub gap: GapOpts,
    /// Also compute one series per sector (needs --meta).
    #[arg(long)]
    pub by_sector: bool,
    /// Report pre-shock and shock means around this date.
    #[arg(long)]
    pub event_date: Option<NaiveDate>,
    #[arg(long, default_value_t = 2)]
    pub shock_halfwidth: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EntropyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 60)]
    pub window: usize,
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    /// Embedding dimension; only 3 is supported.
    #[arg(long, default_value_t = 3)]
    pub dimension: usize,
    /// Embedding delay; only 1 is supported.
    #[arg(long, default_value_t = 1)]
    pub delay: usize,
    #[arg(long)]
    pub event_date: Option<NaiveDate>,
    #[arg(long, default_value_t = 2)]
    pub shock_halfwidth: usize,
    /// Restoration threshold in nats (strictly above).
    #[arg(long, default_value_t = 1.0)]
    pub entropy_threshold: f64,
    #[arg(long, default_value_t = 20)]
    pub sustain_days: usize,
    /// Phase intervals as FIRST:LAST dates. Giving --shock and
    /// --false-recovery switches to fixed calendar phases.
    #[arg(long, value_parser = parse_interval)]
    pub pre_shock: Option<DateInterval>,
    #[arg(long, value_parser = parse_interval)]
    pub shock: Option<DateInterval>,
    #[arg(long, value_parser = parse_interval)]
    pub false_recovery: Option<DateInterval>,
    #[arg(long, value_parser = parse_interval)]
    pub stabilized: Option<DateInterval>,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PortfolioArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 60)]
    pub formation: usize,
    #[arg(long, default_value_t = 20)]
    pub test: usize,
    #[arg(long, default_value_t = 10)]
    pub n_stocks: usize,
    #[arg(long, default_value_t = 500)]
    pub portfolios: usize,
    #[arg(long)]
    pub seed: u64,
    /// Trading days per year.
    #[arg(long, default_value_t = 252.0)]
    pub annualization: f64,
    /// Days between formation starts; defaults to --test.
    #[arg(long)]
    pub step: Option<usize>,
    /// Split the Spearman statistic at this date.
    #[arg(long)]
    pub event_date: Option<NaiveDate>,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub gap: GapOpts,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    ThreePhase,
    TwoMarketRisk,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Scenario document (JSON); see README for the format.
    #[arg(long, conflicts_with_all = ["scenario", "seed"])]
    pub config: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_enum, default_value = "three-phase")]
    pub scenario: ScenarioName,
    #[arg(long, required_unless_present = "config")]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A manifest.json written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

fn parse_interval(s: &str) -> Result<DateInterval, String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected FIRST:LAST, got '{s}'"))?;
    let d = |x: &str| NaiveDate::parse_from_str(x.trim(), "%Y-%m-%d").map_err(|e| format!("'{x}': {e}"));
    DateInterval::new(d(a)?, d(b)?).map_err(|e| e.to_string())
}

/// Synthetic scenario document accepted by `synth --config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioDoc {
    /// Free-form factor model.
    Factor {
        config: Box<SynthConfig>,
    },
    /// Shock scenario; `base` replaces the default assets and dates, its
    /// regimes are ignored.
    ThreePhase {
        seed: u64,
        #[serde(default)]
        base: Option<Box<SynthConfig>>,
        #[serde(default)]
        layout: Option<Box<ThreePhaseLayout>>,
    },
    TwoMarketRisk {
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Truth {
    Factor { regimes: Vec<RegimeSpan> },
    ThreePhase(ScenarioTruth),
    TwoMarketRisk { event_date: NaiveDate },
}

/// Parse `args` (program name first) and run; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            eprintln!("gapscope: {}", CliError::usage(one_line_clap(&e)));
            return 2;
        }
    };
    let raw: Vec<String> = argv.iter().skip(1).map(|s| s.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &raw) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gapscope: {}", one_line(&e.to_string()));
            e.exit_code()
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn one_line_clap(e: &clap::Error) -> String {
    let text = e.render().to_string();
    let body: Vec<&str> = text
        .lines()
        .take_while(|l| !l.starts_with("Usage:"))
        .filter(|l| !l.trim().is_empty())
        .collect();
    one_line(body.join(" ").trim_start_matches("error:"))
}

/// Bookkeeping shared by every command.
struct Run {
    command: &'static str,
    args: Vec<String>,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<InputFile>,
    conventions: Vec<String>,
    out: Outputs,
    threads: usize,
}

impl Run {
    fn new<C: Serialize>(command: &'static str, raw: &[String], config: &C, run: &RunArgs) -> CliResult<Self> {
        Ok(Self {
            command,
            args: replayable_args(raw),
            config: serde_json::to_value(config)?,
            seed: None,
            inputs: Vec::new(),
            conventions: Vec::new(),
            out: Outputs::new(&run.out_dir)?,
            threads: run.threads,
        })
    }

    fn load(&mut self, input: &InputArgs) -> CliResult<PricePanel> {
        let panel = load_price_panel(&input.prices, input.meta.as_deref(), input.layout)?;
        self.inputs.push(input_file(&input.prices)?);
        if let Some(m) = &input.meta {
            self.inputs.push(input_file(m)?);
        }
        Ok(panel)
    }

    fn finish(self) -> CliResult<()> {
        let manifest = RunManifest {
            tool: "gapscope".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            args: self.args,
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.out.files().to_vec(),
            conventions: self.conventions,
        };
        let path = self.out.dir().join(MANIFEST_NAME);
        std::fs::write(&path, to_json_pretty(&manifest)?)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        println!(
            "{}: wrote {} files and {} to {}",
            self.command,
            manifest.outputs.len(),
            MANIFEST_NAME,
            self.out.dir().display()
        );
        Ok(())
    }
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("gapscope: warning: {msg}");
}

fn execute(command: Command, raw: &[String]) -> CliResult<()> {
    match command {
        Command::Gap(a) => cmd_gap(a, raw),
        Command::Entropy(a) => cmd_entropy(a, raw),
        Command::Portfolio(a) => cmd_portfolio(a, raw),
        Command::Heatmap(a) => cmd_heatmap(a, raw),
        Command::Synth(a) => cmd_synth(a, raw),
        Command::Replay(a) => cmd_replay(a),
    }
}

/// Log returns of each market on its own trading calendar, in market order.
fn market_returns(panel: &PricePanel) -> CliResult<Vec<(String, ReturnPanel)>> {
    panel
        .markets()
        .into_iter()
        .map(|m| {
            let r =
                log_returns(&panel.market_panel(&m)?).map_err(|e| CliError::from(e).context(format!("market {m}")))?;
            Ok((m, r))
        })
        .collect()
}

const GAP_COLUMNS: [(&str, &str); 10] = [
    ("end_date", "date"),
    ("n_assets", "count"),
    ("lambda_max", "dimensionless"),
    ("lambda_norm", "dimensionless"),
    ("rho_signed", "dimensionless"),
    ("rho_abs", "dimensionless"),
    ("delta", "dimensionless"),
    ("mp_lower", "dimensionless"),
    ("mp_upper", "dimensionless"),
    ("n_above_mp", "count"),
];

fn gap_table(series: &GapSeries) -> String {
    let mut t = Table::new(&GAP_COLUMNS);
    for p in &series.points {
        t.row(&[
            p.end_date.to_string().into(),
            p.n_assets.into(),
            p.lambda_max.into(),
            p.lambda_norm.into(),
            p.rho_signed.into(),
            p.rho_abs.into(),
            p.delta.into(),
            p.mp.lower.into(),
            p.mp.upper.into(),
            p.n_above_mp.into(),
        ]);
    }
    t.into_string()
}

/// Shock window (event plus `k` trading days either side, clipped to the
/// series) and everything before it.
fn event_windows(series: &DatedSeries, event: NaiveDate, k: usize) -> CliResult<(Option<DateInterval>, DateInterval)> {
    let d = series.dates();
    match (d.first(), d.last()) {
        (Some(&a), Some(&b)) if a <= event && event <= b => {}
        (Some(&a), Some(&b)) => {
            return Err(Error::DateOutOfRange {
                date: event,
                first: a,
                last: b,
            }
            .into())
        }
        _ => return Err(CliError::data(format!("no windows to place the event date {event} in"))),
    }
    let e = series.index_on_or_after(event).expect("event within range");
    let lo = e.saturating_sub(k);
    let hi = (e + k).min(d.len() - 1);
    let shock = DateInterval::new(d[lo], d[hi])?;
    let pre = if lo > 0 {
        Some(DateInterval::new(d[0], d[lo - 1])?)
    } else {
        None
    };
    Ok((pre, shock))
}

#[derive(Debug, Serialize)]
struct EventSummary {
    event_date: NaiveDate,
    pre_shock: Option<DateInterval>,
    shock: DateInterval,
    pre_shock_mean_delta: Option<f64>,
    shock_mean_delta: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SeriesSummary {
    market: String,
    sector: Option<String>,
    file: String,
    n_windows: usize,
    n_skipped: usize,
    max_abs_delta: Option<f64>,
    mean_delta: Option<f64>,
    mean_lambda_norm: Option<f64>,
    mean_rho: Option<f64>,
    event: Option<EventSummary>,
}

fn mean_opt(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| stats::mean(v))
}

fn summarize(
    market: &str,
    sector: Option<&str>,
    file: &str,
    s: &GapSeries,
    event: Option<(NaiveDate, usize)>,
) -> CliResult<SeriesSummary> {
    let delta = s.delta();
    let lambda = s.lambda_norm();
    let rho: Vec<f64> = s.points.iter().map(|p| p.lambda_norm - p.delta).collect();
    let event = match event {
        Some((date, k)) => {
            let (pre, shock) = event_windows(&delta, date, k)?;
            Some(EventSummary {
                event_date: date,
                pre_shock: pre,
                shock,
                pre_shock_mean_delta: pre.and_then(|i| mean_opt(&delta.values_in(&i))),
                shock_mean_delta: mean_opt(&delta.values_in(&shock)),
            })
        }
        None => None,
    };
    Ok(SeriesSummary {
        market: market.into(),
        sector: sector.map(str::to_string),
        file: file.into(),
        n_windows: s.points.len(),
        n_skipped: s.skipped.len(),
        max_abs_delta: delta.values().iter().map(|d| d.abs()).reduce(f64::max),
        mean_delta: mean_opt(delta.values()),
        mean_lambda_norm: mean_opt(lambda.values()),
        mean_rho: mean_opt(&rho),
        event,
    })
}

fn note_skips(what: &str, s: &GapSeries) {
    if !s.skipped.is_empty() {
        warn(format!(
            "{what}: {} of {} windows skipped with fewer than 2 usable assets",
            s.skipped.len(),
            s.skipped.len() + s.points.len()
        ));
    }
}

#[derive(Serialize)]
struct GapSummaryDoc<'a> {
    config: &'a GapConfig,
    series: Vec<SeriesSummary>,
}

fn cmd_gap(a: GapArgs, raw: &[String]) -> CliResult<()> {
    if a.by_sector && a.input.meta.is_none() {
        return Err(CliError::usage("--by-sector needs --meta"));
    }
    let cfg = a.gap.config();
    let mut run = Run::new("gap", raw, &a, &a.run)?;
    run.conventions = vec![
        "correlation from population-standardized returns, C = Z Z^T / T".into(),
        "windows keep assets complete over the window with non-zero variance".into(),
    ];
    let panel = run.load(&a.input)?;
    let pool = parallel::pool(run.threads)?;
    let event = a.event_date.map(|d| (d, a.shock_halfwidth));
    let mut summaries = Vec::new();
    for (market, returns) in market_returns(&panel)? {
        let s = pool.install(|| parallel::gap_series(&returns, &cfg))?;
        note_skips(&format!("market {market}"), &s);
        let file = format!("gap_T{}_{}.csv", cfg.window, slug(&market));
        run.out.write(&file, &gap_table(&s))?;
        summaries.push(summarize(&market, None, &file, &s, event)?);
        if a.by_sector {
            for sector in returns.sectors() {
                let cols = returns.sector_columns(&sector);
                if cols.len() < 2 {
                    warn(format!(
                        "market {market}: sector {sector} has fewer than 2 tickers, no series"
                    ));
                    continue;
                }
                let sub = returns.select_columns(&cols);
                let s = pool.install(|| parallel::gap_series(&sub, &cfg))?;
                note_skips(&format!("market {market} sector {sector}"), &s);
                let file = format!("gap_T{}_{}_{}.csv", cfg.window, slug(&market), slug(&sector));
                run.out.write(&file, &gap_table(&s))?;
                summaries.push(summarize(&market, Some(&sector), &file, &s, event)?);
            }
        }
    }
    let doc = GapSummaryDoc {
        config: &cfg,
        series: summaries,
    };
    run.out.write("gap_summary.json", &to_json_pretty(&doc)?)?;
    run.finish()
}

#[derive(Serialize)]
struct PhaseDoc<'a> {
    market: &'a str,
    rule: &'a PhaseRule,
    /// Entropy on day t reads returns t-2..t.
    ordinal_lag_days: usize,
    phases: PhaseWindows,
    statistics: OrdinalPhaseStats,
}

fn phase_rule(a: &EntropyArgs) -> CliResult<PhaseRule> {
    match (a.shock, a.false_recovery) {
        (Some(shock), Some(false_recovery)) => {
            let (Some(pre_shock), Some(stabilized)) = (a.pre_shock, a.stabilized) else {
                return Err(CliError::usage(
                    "fixed calendar phases need --pre-shock, --shock, --false-recovery and --stabilized",
                ));
            };
            Ok(PhaseRule::FixedCalendar {
                pre_shock,
                shock,
                false_recovery,
                stabilized,
            })
        }
        (None, None) => Ok(PhaseRule::ThresholdBased(ThresholdParams {
            shock_halfwidth: a.shock_halfwidth,
            threshold: a.entropy_threshold,
            sustain_days: a.sustain_days,
            pre_shock: a.pre_shock,
            stabilized: a.stabilized,
        })),
        _ => Err(CliError::usage("--shock and --false-recovery must be given together")),
    }
}

fn cmd_entropy(a: EntropyArgs, raw: &[String]) -> CliResult<()> {
    check_embedding(a.dimension, a.delay)?;
    if a.sustain_days == 0 {
        return Err(CliError::usage("--sustain-days must be at least 1"));
    }
    let rule = a.event_date.map(|_| phase_rule(&a)).transpose()?;
    let mut run = Run::new("entropy", raw, &a, &a.run)?;
    run.conventions = vec![
        "ordinal patterns of three consecutive returns, ties ranked by time order".into(),
        "entropy in nats".into(),
        "95th percentile by linear interpolation".into(),
    ];
    let panel = run.load(&a.input)?;
    let mut columns = vec![("date", "date"), ("n_stocks", "count"), ("H_ord_nats", "nats")];
    let names = ["p0", "p1", "p2", "p3", "p4", "p5"];
    columns.extend(names.iter().map(|p| (*p, "probability")));
    for (market, returns) in market_returns(&panel)? {
        let series = entropy_series(&returns, a.window, a.step)?;
        if !series.skipped.is_empty() {
            warn(format!(
                "market {market}: {} dates skipped with no stock having three complete returns",
                series.skipped.len()
            ));
        }
        let mut t = Table::new(&columns);
        for p in &series.points {
            let mut row: Vec<Cell> = vec![
                p.date.to_string().into(),
                p.distribution.n_stocks.into(),
                p.entropy.into(),
            ];
            row.extend(p.distribution.probabilities.iter().map(|&x| Cell::from(x)));
            t.row(&row);
        }
        run.out
            .write(&format!("entropy_{}.csv", slug(&market)), &t.into_string())?;
        if let (Some(event), Some(rule)) = (a.event_date, rule.as_ref()) {
            let dated = series.to_dated();
            let phases = gapscope_core::regimes::phase_segmentation(&dated, event, rule)
                .map_err(|e| CliError::from(e).context(format!("market {market}")))?;
            if phases.warning == Some(PhaseWarning::SustainedThresholdNotMet) {
                warn(format!(
                    "market {market}: entropy never stayed above {} nats for {} days; false recovery runs to the end",
                    a.entropy_threshold, a.sustain_days
                ));
            }
            let doc = PhaseDoc {
                market: &market,
                rule,
                ordinal_lag_days: 2,
                phases,
                statistics: phase_statistics(&dated, &phases),
            };
            run.out
                .write(&format!("phases_{}.json", slug(&market)), &to_json_pretty(&doc)?)?;
        }
    }
    run.finish()
}

#[derive(Serialize)]
struct MarketReport<'a> {
    market: &'a str,
    n_windows: usize,
    report: QuintileReport,
    quintiles_strictly_decreasing: bool,
    skips: &'a [StudySkip],
}

#[derive(Serialize)]
struct PortfolioDoc<'a> {
    config: &'a StudyConfig,
    seed: u64,
    event_date: Option<NaiveDate>,
    sampling: &'a str,
    variance_denominators: &'a str,
    markets: Vec<MarketReport<'a>>,
}

const VARIANCE_NOTE: &str = "formation covariance 1/T; test-window volatility h-1";

fn cmd_portfolio(a: PortfolioArgs, raw: &[String]) -> CliResult<()> {
    let cfg = StudyConfig {
        formation: a.formation,
        test: a.test,
        n_stocks: a.n_stocks,
        portfolios: a.portfolios,
        annualization: a.annualization,
        step: a.step.unwrap_or(a.test),
    };
    cfg.validate()?;
    let mut run = Run::new("portfolio", raw, &a, &a.run)?;
    run.config["resolved"] = serde_json::to_value(cfg)?;
    run.seed = Some(a.seed);
    run.conventions = vec![
        VARIANCE_NOTE.into(),
        "minimum-variance weights through the Moore-Penrose pseudo-inverse, shorting allowed".into(),
        "stocks redrawn without replacement in every window".into(),
        "volatility annualized and in percent".into(),
    ];
    let panel = run.load(&a.input)?;
    let pool = parallel::pool(run.threads)?;
    let studies: Vec<PortfolioStudy> = market_returns(&panel)?
        .iter()
        .enumerate()
        .map(|(k, (m, r))| {
            pool.install(|| parallel::portfolio_study(r, m, k as u64, &cfg, a.seed))
                .map_err(|e| CliError::from(e).context(format!("market {m}")))
        })
        .collect::<CliResult<_>>()?;

    let mut t = Table::new(&[
        ("market", "label"),
        ("window_end", "date"),
        ("delta", "dimensionless"),
        ("rho_bar", "dimensionless"),
        ("sigma_hist", "% annualized"),
        ("sigma_mvp", "% annualized"),
        ("sigma_ew", "% annualized"),
        ("tickers", "label"),
    ]);
    let mut markets = Vec::new();
    for s in &studies {
        for o in &s.observations {
            t.row(&[
                o.market.as_str().into(),
                o.window_end.to_string().into(),
                o.delta.into(),
                o.rho_bar.into(),
                o.sigma_hist.into(),
                o.sigma_mvp.into(),
                o.sigma_ew.into(),
                o.tickers.join(";").into(),
            ]);
        }
        let too_few = s
            .skips
            .iter()
            .filter(|k| matches!(k.kind, gapscope_core::portfolio::SkipKind::TooFewEligible { .. }))
            .count();
        if too_few > 0 {
            warn(format!(
                "market {}: {too_few} of {} windows had too few eligible stocks",
                s.market, s.n_windows
            ));
        }
        let degenerate = s.skips.len() - too_few;
        if degenerate > 0 {
            warn(format!(
                "market {}: {degenerate} degenerate portfolios skipped",
                s.market
            ));
        }
        let report = quintile_report(&s.market, &s.observations, a.event_date)
            .map_err(|e| CliError::from(e).context(format!("market {}", s.market)))?;
        markets.push(MarketReport {
            market: &s.market,
            n_windows: s.n_windows,
            quintiles_strictly_decreasing: report.is_strictly_decreasing(),
            report,
            skips: &s.skips,
        });
    }
    run.out.write("portfolio_observations.csv", &t.into_string())?;
    let doc = PortfolioDoc {
        config: &cfg,
        seed: a.seed,
        event_date: a.event_date,
        sampling: studies.first().map_or("resample_per_window", |s| s.sampling.as_str()),
        variance_denominators: VARIANCE_NOTE,
        markets,
    };
    run.out.write("quintile_report.json", &to_json_pretty(&doc)?)?;
    run.finish()
}

fn cmd_heatmap(a: HeatmapArgs, raw: &[String]) -> CliResult<()> {
    if a.input.meta.is_none() {
        return Err(CliError::usage("heatmap needs --meta for sector labels"));
    }
    let cfg = a.gap.config();
    let mut run = Run::new("heatmap", raw, &a, &a.run)?;
    run.conventions = vec!["cell value is the mean over windows whose last day falls in the month".into()];
    let panel = run.load(&a.input)?;
    let pool = parallel::pool(run.threads)?;
    for (market, returns) in market_returns(&panel)? {
        let grid = pool
            .install(|| parallel::heatmap(&returns, &cfg))
            .map_err(|e| CliError::from(e).context(format!("market {market}")))?;
        for (sector, n) in &grid.omitted_windows {
            if *n > 0 {
                warn(format!(
                    "market {market} sector {sector}: {n} windows omitted with fewer than 2 usable tickers"
                ));
            }
        }
        let mut t = Table::new(&[
            ("sector", "label"),
            ("month", "YYYY-MM"),
            ("mean_lambda_norm", "dimensionless"),
            ("window_count", "count"),
        ]);
        for sector in &grid.sectors {
            for &month in &grid.months {
                match grid.cell(sector, month) {
                    Some(c) => t.row(&[
                        sector.as_str().into(),
                        month.to_string().into(),
                        c.mean_lambda_norm.into(),
                        c.window_count.into(),
                    ]),
                    None => t.row(&[
                        sector.as_str().into(),
                        month.to_string().into(),
                        "".into(),
                        0usize.into(),
                    ]),
                }
            }
        }
        let stem = format!("heatmap_{}", slug(&market));
        run.out.write(&format!("{stem}.csv"), &t.into_string())?;
        run.out.write(&format!("{stem}.json"), &to_json_pretty(&grid)?)?;
    }
    run.finish()
}

fn cmd_synth(a: SynthArgs, raw: &[String]) -> CliResult<()> {
    let mut run = Run::new("synth", raw, &a, &a.run)?;
    let doc = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            run.inputs.push(input_file(path)?);
            serde_json::from_str::<ScenarioDoc>(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
        }
        None => {
            let seed = a.seed.expect("clap requires --seed without --config");
            match a.scenario {
                ScenarioName::ThreePhase => ScenarioDoc::ThreePhase {
                    seed,
                    base: None,
                    layout: None,
                },
                ScenarioName::TwoMarketRisk => ScenarioDoc::TwoMarketRisk { seed },
            }
        }
    };
    run.config["scenario"] = serde_json::to_value(&doc)?;
    let (panel, truth) = match &doc {
        ScenarioDoc::Factor { config } => {
            run.seed = Some(config.seed);
            let panel = generate_factor_panel(config)?;
            let regimes = config
                .regimes
                .iter()
                .map(|r| RegimeSpan {
                    name: r.name.clone(),
                    start: config.date_of_day(r.start_day),
                    end: config.date_of_day(r.end_day),
                })
                .collect();
            (panel, Truth::Factor { regimes })
        }
        ScenarioDoc::ThreePhase { seed, base, layout } => {
            run.seed = Some(*seed);
            let mut b = base.as_deref().cloned().unwrap_or_else(|| default_scenario_base(*seed));
            b.seed = *seed;
            let s = three_phase_scenario_with(&b, &layout.as_deref().cloned().unwrap_or_default())?;
            (s.panel, Truth::ThreePhase(s.truth))
        }
        ScenarioDoc::TwoMarketRisk { seed } => {
            run.seed = Some(*seed);
            let (panel, event_date) = two_market_risk_scenario(*seed)?;
            (panel, Truth::TwoMarketRisk { event_date })
        }
    };
    let mut prices = Vec::new();
    write_long(&mut prices, &panel)?;
    let mut meta = Vec::new();
    write_meta(&mut meta, &panel)?;
    let utf8 = |b: Vec<u8>| String::from_utf8(b).expect("csv writer emits UTF-8");
    run.out.write("prices.csv", &utf8(prices))?;
    run.out.write("meta.csv", &utf8(meta))?;
    run.out.write("truth.json", &to_json_pretty(&truth)?)?;
    run.finish()
}

fn cmd_replay(a: ReplayArgs) -> CliResult<()> {
    let recorded = RunManifest::read(&a.manifest)?;
    if recorded.version != env!("CARGO_PKG_VERSION") {
        warn(format!(
            "manifest was written by version {}, this is {}",
            recorded.version,
            env!("CARGO_PKG_VERSION")
        ));
    }
    recorded.verify_inputs()?;
    if recorded.args.first().map(String::as_str) == Some("replay") {
        return Err(CliError::usage("a replay manifest cannot itself be replayed"));
    }
    let mut argv: Vec<OsString> = vec!["gapscope".into()];
    argv.extend(recorded.args.iter().map(OsString::from));
    argv.extend(["--out-dir".into(), a.run.out_dir.clone().into_os_string()]);
    argv.extend(["--threads".into(), a.run.threads.to_string().into()]);
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::usage(one_line_clap(&e)))?;
    let raw: Vec<String> = argv.iter().skip(1).map(|s| s.to_string_lossy().into_owned()).collect();
    execute(cli.command, &raw)?;
    let fresh = RunManifest::read(&a.run.out_dir.join(MANIFEST_NAME))?;
    compare_outputs(&recorded, &fresh, &a.run.out_dir)
}

fn compare_outputs(recorded: &RunManifest, fresh: &RunManifest, dir: &Path) -> CliResult<()> {
    for want in &recorded.outputs {
        match fresh.outputs.iter().find(|f| f.name == want.name) {
            Some(got) if got.sha256 == want.sha256 => {}
            Some(_) => {
                return Err(CliError::data(format!(
                    "replay output {} differs from the recorded digest",
                    dir.join(&want.name).display()
                )))
            }
            None => return Err(CliError::data(format!("replay did not produce {}", want.name))),
        }
    }
    if fresh.outputs.len() != recorded.outputs.len() {
        return Err(CliError::data("replay produced a different set of output files"));
    }
    println!("replay: {} outputs match the recorded digests", recorded.outputs.len());
    Ok(())
}
