//! `lyap` command-line front end.
//!
//! Exit codes: 0 on success, 1 when a computation fails, 2 for bad input
//! (unreadable or malformed files, invalid flags or parameters).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use serde::Serialize;

use lyap_bench::{bench_calibration, bench_variance, bench_variance_batched};
use lyap_core::calibration::{calibrate, surface_points, CalibrationConfig, CalibrationResult, SurfacePoint};
use lyap_core::data_io::{
    export_surface, generate_synthetic_chain, monthly_maturities, parse_chain, write_chain, OptionChainFile,
    ParsedChain, SyntheticChainSpec,
};
use lyap_core::pricing::{implied_vol, price_with_model};
use lyap_core::{
    GbmParams, LmrGwParams, ModelKind, ModelParams, OptionQuote, OuParams, PricingConfig, SchwartzParams,
    VarianceMethod,
};

#[derive(Debug, Parser)]
#[command(
    name = "lyap",
    version,
    about = "Option pricing and calibration with Lyapunov-equation variances"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price every quote of a chain file under a model.
    Price(PriceArgs),
    /// Fit a model to a chain file.
    Calibrate(CalibrateArgs),
    /// Time analytical against numerical variance evaluation.
    Bench(BenchArgs),
    /// Write a synthetic chain priced by a model.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Gbm,
    Ou,
    Lmrgw,
    Schwartz,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gbm => ModelKind::Gbm,
            ModelArg::Ou => ModelKind::Ou,
            ModelArg::Lmrgw => ModelKind::Lmrgw,
            ModelArg::Schwartz => ModelKind::Schwartz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Analytical,
    Numerical,
}

impl From<MethodArg> for VarianceMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Analytical => VarianceMethod::Analytical,
            MethodArg::Numerical => VarianceMethod::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    /// One fit per futures contract, i.e. per (maturity, underlying price).
    Underlying,
    /// One fit for the whole file.
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    /// One variance call per time point.
    PerPoint,
    /// One call for all time points.
    Batched,
    /// Whole calibrations on synthetic chains.
    Calibration,
}

/// Model choice and parameter values.
#[derive(Debug, Clone, Args)]
pub struct ModelFlags {
    #[arg(long, value_enum, default_value = "lmrgw")]
    pub model: ModelArg,
    /// Mean-reversion speed (ou, lmrgw).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Short-term factor vol (lmrgw).
    #[arg(long)]
    pub sigma1: Option<f64>,
    /// Long-term factor vol (lmrgw).
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Vol of the single factor (gbm, ou).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Mean-reversion speed (schwartz).
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub sigma_chi: Option<f64>,
    #[arg(long)]
    pub sigma_xi: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
}

impl ModelFlags {
    fn names(&self) -> &'static [&'static str] {
        match self.model {
            ModelArg::Gbm => &["sigma"],
            ModelArg::Ou => &["lambda", "sigma"],
            ModelArg::Lmrgw => &["lambda", "sigma1", "sigma2"],
            ModelArg::Schwartz => &["k", "sigma-chi", "sigma-xi", "rho"],
        }
    }

    fn value(&self, name: &str) -> Option<f64> {
        match name {
            "lambda" => self.lambda,
            "sigma1" => self.sigma1,
            "sigma2" => self.sigma2,
            "sigma" => self.sigma,
            "k" => self.k,
            "sigma-chi" => self.sigma_chi,
            "sigma-xi" => self.sigma_xi,
            "rho" => self.rho,
            _ => None,
        }
    }

    /// Parameters from the flags; `None` when none of the model's flags is
    /// given. Partially specified parameters are an error.
    pub fn params(&self) -> Result<Option<ModelParams>, CliError> {
        let names = self.names();
        let values: Vec<Option<f64>> = names.iter().map(|n| self.value(n)).collect();
        if values.iter().all(Option::is_none) {
            return Ok(None);
        }
        let missing: Vec<String> = names
            .iter()
            .zip(&values)
            .filter(|(_, v)| v.is_none())
            .map(|(n, _)| format!("--{n}"))
            .collect();
        if !missing.is_empty() {
            return Err(CliError::input(format!(
                "model {} also needs {}",
                ModelKind::from(self.model),
                missing.join(", ")
            )));
        }
        let v: Vec<f64> = values.into_iter().flatten().collect();
        let params: ModelParams = match self.model {
            ModelArg::Gbm => GbmParams::new(v[0])?.into(),
            ModelArg::Ou => OuParams::new(v[0], v[1])?.into(),
            ModelArg::Lmrgw => LmrGwParams::new(v[0], v[1], v[2])?.into(),
            ModelArg::Schwartz => SchwartzParams::new(v[0], v[1], v[2], v[3])?.into(),
        };
        Ok(Some(params))
    }

    pub fn required_params(&self) -> Result<ModelParams, CliError> {
        self.params()?.ok_or_else(|| {
            let flags: Vec<String> = self.names().iter().map(|n| format!("--{n}")).collect();
            CliError::input(format!(
                "model {} needs {}",
                ModelKind::from(self.model),
                flags.join(", ")
            ))
        })
    }
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Priced chain CSV; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, value_enum, default_value = "analytical")]
    pub method: MethodArg,
    /// Price the valid rows of a file that has invalid ones instead of failing.
    #[arg(long)]
    pub skip_invalid: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Result JSON; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Surface CSV; defaults to `<output stem>.surface.csv` next to the output.
    #[arg(long)]
    pub surface: Option<PathBuf>,
    /// Model flags given here are used as the starting point.
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, value_enum, default_value = "analytical")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_iterations: usize,
    #[arg(long, value_enum, default_value = "chain")]
    pub group_by: GroupBy,
    #[arg(long)]
    pub skip_invalid: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "per-point")]
    pub mode: BenchMode,
    /// Evaluation counts for the variance modes.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10, 100, 1000, 10000, 30000])]
    pub evaluations: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repetitions: usize,
    /// Chains and quotes per chain for the calibration mode.
    #[arg(long, default_value_t = 5)]
    pub chains: usize,
    #[arg(long, default_value_t = 100)]
    pub quotes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma1: f64,
    #[arg(long, default_value_t = 0.2)]
    pub sigma2: f64,
    /// CSV report; the table always goes to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, default_value_t = 500)]
    pub n_quotes: usize,
    /// Number of monthly maturities, 1/12 to n/12 years.
    #[arg(long, default_value_t = 12)]
    pub maturities: usize,
    #[arg(long, default_value_t = 0.8)]
    pub moneyness_min: f64,
    #[arg(long, default_value_t = 1.2)]
    pub moneyness_max: f64,
    #[arg(long, default_value_t = 100.0)]
    pub underlying: f64,
    /// Standard deviation of the additive price noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<lyap_core::Error> for CliError {
    fn from(e: lyap_core::Error) -> Self {
        Self {
            code: if e.is_input_error() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        lyap_core::Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub input: Option<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub model: Option<ModelKind>,
    pub method: Option<VarianceMethod>,
    pub seed: Option<u64>,
    pub settings: BTreeMap<&'static str, serde_json::Value>,
}

impl RunManifest {
    fn new(subcommand: &'static str) -> Self {
        Self {
            tool: "lyap",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            input: None,
            outputs: Vec::new(),
            model: None,
            method: None,
            seed: None,
            settings: BTreeMap::new(),
        }
    }

    fn set(&mut self, key: &'static str, value: impl Serialize) {
        self.settings
            .insert(key, serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    /// Written to `<primary output>.manifest.json`, or to standard error
    /// when the run wrote to standard output.
    fn emit(&self, primary: Option<&Path>) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        match primary {
            Some(p) => fs::write(manifest_path(p), text)?,
            None => eprint!("{text}"),
        }
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn load_chain(path: &Path, skip_invalid: bool) -> Result<OptionChainFile, CliError> {
    let ParsedChain { chain, diagnostics } = parse_chain(path)?;
    if diagnostics.is_empty() {
        return Ok(chain);
    }
    if skip_invalid {
        for d in &diagnostics {
            warn!("{}: skipped {d}", path.display());
        }
        return Ok(chain);
    }
    let listing: Vec<String> = diagnostics
        .iter()
        .map(|d| format!("  {}: {d}", path.display()))
        .collect();
    Err(CliError::input(format!(
        "{} invalid row(s) in {} (use --skip-invalid to ignore them):\n{}",
        diagnostics.len(),
        path.display(),
        listing.join("\n")
    )))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Price(a) => cmd_price(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

pub fn cmd_price(a: PriceArgs) -> Result<(), CliError> {
    let params = a.model.required_params()?;
    let method = VarianceMethod::from(a.method);
    let chain = load_chain(&a.input, a.skip_invalid)?;
    let cfg = PricingConfig::default();

    let mut out = String::from(
        "quote_id,option_type,strike,maturity_years,underlying_price,market_price,model_price,model_implied_vol\n",
    );
    for q in &chain.quotes {
        let price = price_with_model(q, &params, method, &cfg)?;
        let iv = implied_vol(q, price, &cfg).map_or(String::new(), |v| v.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            q.id, q.kind, q.strike, q.maturity, q.underlying_price, q.market_price, price, iv
        ));
    }
    write_or_print(a.output.as_deref(), &out)?;

    let mut m = RunManifest::new("price");
    m.input = Some(a.input.clone());
    m.outputs.extend(a.output.clone());
    m.model = Some(params.kind());
    m.method = Some(method);
    m.set("params", params);
    m.set("skip_invalid", a.skip_invalid);
    m.set("n_quotes", chain.quotes.len());
    m.emit(a.output.as_deref())
}

#[derive(Debug, Serialize)]
struct GroupOutcome {
    group: String,
    n_quotes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<CalibrationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Quotes split by futures contract, keyed by maturity then underlying price.
fn group_by_underlying(quotes: &[OptionQuote]) -> Vec<(String, Vec<OptionQuote>)> {
    let mut groups: BTreeMap<(u64, u64), Vec<OptionQuote>> = BTreeMap::new();
    for q in quotes {
        // positive finite floats order like their bit patterns
        groups
            .entry((q.maturity.to_bits(), q.underlying_price.to_bits()))
            .or_default()
            .push(q.clone());
    }
    groups
        .into_iter()
        .map(|((t, s), qs)| (format!("T={},S0={}", f64::from_bits(t), f64::from_bits(s)), qs))
        .collect()
}

fn default_surface_path(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "result".into());
    output.with_file_name(format!("{stem}.surface.csv"))
}

pub fn cmd_calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let kind = ModelKind::from(a.model.model);
    let method = VarianceMethod::from(a.method);
    let chain = load_chain(&a.input, a.skip_invalid)?;
    let cfg = CalibrationConfig {
        method,
        initial_guess: a.model.params()?,
        max_iterations: a.max_iterations,
        restarts: a.restarts,
        rng_seed: a.seed,
        train_fraction: a.train_fraction,
        ..Default::default()
    };
    cfg.validate()?;

    let mut surface: Vec<SurfacePoint> = Vec::new();
    let json = match a.group_by {
        GroupBy::Chain => {
            let res = calibrate(&chain.quotes, kind, &cfg)?;
            surface = surface_points(&res.params, &chain.quotes, method, &cfg.pricing)?;
            serde_json::to_string_pretty(&res)?
        }
        GroupBy::Underlying => {
            let mut outcomes = Vec::new();
            for (group, quotes) in group_by_underlying(&chain.quotes) {
                let outcome = match calibrate(&quotes, kind, &cfg) {
                    Ok(res) => {
                        surface.extend(surface_points(&res.params, &quotes, method, &cfg.pricing)?);
                        GroupOutcome {
                            group,
                            n_quotes: quotes.len(),
                            result: Some(res),
                            error: None,
                        }
                    }
                    Err(e) => {
                        warn!("group {group}: {e}");
                        GroupOutcome {
                            group,
                            n_quotes: quotes.len(),
                            result: None,
                            error: Some(e.to_string()),
                        }
                    }
                };
                outcomes.push(outcome);
            }
            if outcomes.iter().all(|o| o.error.is_some()) {
                return Err(CliError {
                    code: 1,
                    message: format!(
                        "calibration failed for every group, e.g. {}: {}",
                        outcomes[0].group,
                        outcomes[0].error.as_deref().unwrap_or_default()
                    ),
                });
            }
            serde_json::to_string_pretty(&outcomes)?
        }
    };
    write_or_print(a.output.as_deref(), &(json + "\n"))?;

    let surface_path = a
        .surface
        .clone()
        .or_else(|| a.output.as_deref().map(default_surface_path));
    let mut m = RunManifest::new("calibrate");
    m.input = Some(a.input.clone());
    m.outputs.extend(a.output.clone());
    if let Some(p) = &surface_path {
        if surface.is_empty() {
            warn!("no quote has an invertible market price; surface file not written");
        } else {
            export_surface(&surface, p)?;
            m.outputs.push(p.clone());
        }
    }
    m.model = Some(kind);
    m.method = Some(method);
    m.seed = Some(a.seed);
    m.set("train_fraction", a.train_fraction);
    m.set("restarts", a.restarts);
    m.set("max_iterations", a.max_iterations);
    m.set("loss_tolerance", cfg.loss_tolerance);
    m.set("param_tolerance", cfg.param_tolerance);
    m.set("initial_guess", cfg.initial_guess);
    m.set(
        "group_by",
        match a.group_by {
            GroupBy::Underlying => "underlying",
            GroupBy::Chain => "chain",
        },
    );
    m.set("skip_invalid", a.skip_invalid);
    m.emit(a.output.as_deref())
}

pub fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    let params = LmrGwParams::new(a.lambda, a.sigma1, a.sigma2)?;
    let mut m = RunManifest::new("bench");
    m.model = Some(ModelKind::Lmrgw);
    m.set("params", ModelParams::from(params));
    m.outputs.extend(a.output.clone());
    let (table, csv) = match a.mode {
        BenchMode::PerPoint | BenchMode::Batched => {
            let report = if a.mode == BenchMode::PerPoint {
                bench_variance(&params, &a.evaluations, a.repetitions)?
            } else {
                bench_variance_batched(&params, &a.evaluations, a.repetitions)?
            };
            m.set(
                "mode",
                if a.mode == BenchMode::PerPoint {
                    "per-point"
                } else {
                    "batched"
                },
            );
            m.set("evaluations", &a.evaluations);
            m.set("repetitions", a.repetitions);
            (report.to_table(), report.to_csv())
        }
        BenchMode::Calibration => {
            if a.chains == 0 {
                return Err(CliError::input("--chains must be at least 1"));
            }
            let truth = ModelParams::from(params);
            let chains = (0..a.chains)
                .map(|i| {
                    let spec = SyntheticChainSpec {
                        n_quotes: a.quotes,
                        noise_sd: 0.05,
                        rng_seed: a.seed.wrapping_add(i as u64),
                        market_label: format!("synthetic-{i}"),
                        ..Default::default()
                    };
                    generate_synthetic_chain(&truth, &spec)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let cfg = CalibrationConfig {
                rng_seed: a.seed,
                ..Default::default()
            };
            let bench = bench_calibration(&chains, ModelKind::Lmrgw, &cfg)?;
            m.seed = Some(a.seed);
            m.set("mode", "calibration");
            m.set("chains", a.chains);
            m.set("quotes", a.quotes);
            let mut csv = String::from("chain,quotes,analytical_s,numerical_s,max_price_rel_diff\n");
            for c in &bench.chains {
                let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    c.market_label,
                    c.n_quotes,
                    f(c.analytical_s),
                    f(c.numerical_s),
                    f(c.max_price_rel_diff)
                ));
            }
            (bench.to_table(), csv)
        }
    };
    print!("{table}");
    if let Some(p) = &a.output {
        fs::write(p, csv)?;
    }
    m.emit(a.output.as_deref())
}

pub fn cmd_generate(a: GenerateArgs) -> Result<(), CliError> {
    let params = a.model.required_params()?;
    let spec = SyntheticChainSpec {
        n_quotes: a.n_quotes,
        maturities: monthly_maturities(a.maturities),
        moneyness_min: a.moneyness_min,
        moneyness_max: a.moneyness_max,
        underlying_prices: vec![a.underlying],
        noise_sd: a.noise_sd,
        rng_seed: a.seed,
        market_label: a.label.clone().unwrap_or_else(|| "synthetic".into()),
    };
    let chain = generate_synthetic_chain(&params, &spec)?;
    write_chain(&chain, &a.output)?;

    let mut m = RunManifest::new("generate");
    m.outputs.push(a.output.clone());
    m.model = Some(params.kind());
    m.method = Some(VarianceMethod::Analytical);
    m.seed = Some(a.seed);
    m.set("params", params);
    m.set("spec", &spec);
    m.emit(Some(&a.output))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_model_flags_are_rejected() {
        let cli = Cli::try_parse_from(["lyap", "generate", "--output", "x.csv", "--lambda", "2"]).unwrap();
        let Command::Generate(g) = cli.command else { panic!() };
        let err = g.model.required_params().unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("--sigma1"), "{}", err.message);
    }

    #[test]
    fn negative_rho_parses() {
        let cli = Cli::try_parse_from([
            "lyap",
            "generate",
            "--output",
            "x.csv",
            "--model",
            "schwartz",
            "--k",
            "1",
            "--sigma-chi",
            "0.3",
            "--sigma-xi",
            "0.2",
            "--rho",
            "-0.5",
        ])
        .unwrap();
        let Command::Generate(g) = cli.command else { panic!() };
        assert_eq!(g.model.required_params().unwrap().kind(), ModelKind::Schwartz);
    }

    #[test]
    fn paths() {
        assert_eq!(
            manifest_path(Path::new("out/r.json")),
            PathBuf::from("out/r.json.manifest.json")
        );
        assert_eq!(
            default_surface_path(Path::new("out/r.json")),
            PathBuf::from("out/r.surface.csv")
        );
    }

    #[test]
    fn underlying_groups_are_ordered() {
        let q = |id: &str, t: f64, s: f64| OptionQuote::new(id, lyap_core::OptionKind::Call, 100.0, t, s, 1.0).unwrap();
        let groups = group_by_underlying(&[q("a", 0.5, 100.0), q("b", 0.25, 90.0), q("c", 0.5, 100.0)]);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0, "T=0.25,S0=90");
        assert_eq!(groups[1].1.len(), 2);
    }
}
