use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GRAPHCERT_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Every tunable value. Each comes from a flag, the config file, or a repeat entry.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Built-in graph (line:N, ring:N, star:N, complete:N, empty:N) or edge-list file.
    #[arg(long)]
    pub graph: Option<String>,
    /// Number of copies M requested from the source.
    #[arg(long)]
    pub copies: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Fraction of tests that must pass.
    #[arg(long)]
    pub tau: Option<f64>,
    /// honest, depolarizing, dephasing, replace-orthogonal, replace-partial,
    /// replace-mixed, product-random or coherent-random.
    #[arg(long)]
    pub source: Option<String>,
    /// Noise strength for depolarizing and dephasing sources.
    #[arg(long)]
    pub p: Option<f64>,
    /// 1-based copy replaced by the replace-* sources.
    #[arg(long)]
    pub position: Option<usize>,
    /// Squared fidelity of the replace-partial state.
    #[arg(long)]
    pub fidelity: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to $GRAPHCERT_OUT or ./graphcert-out.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; 0 picks the machine default.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub exclude_identity: Option<bool>,
    /// Measurement pattern file (TOML).
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    /// Angles for a line-graph pattern, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub angles: Option<Vec<f64>>,
    /// Highest frame-potential moment.
    #[arg(long)]
    pub t: Option<usize>,
    /// Number of Haar samples.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Secret-sharing threshold.
    #[arg(long)]
    pub access_k: Option<usize>,
    /// Authorised players, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub authorized: Option<Vec<usize>>,
    /// GHZ size for metrology.
    #[arg(long)]
    pub n: Option<usize>,
}

impl Settings {
    /// Values in `over` take precedence.
    pub fn merged(self, over: Settings) -> Settings {
        Settings {
            graph: over.graph.or(self.graph),
            copies: over.copies.or(self.copies),
            trials: over.trials.or(self.trials),
            tau: over.tau.or(self.tau),
            source: over.source.or(self.source),
            p: over.p.or(self.p),
            position: over.position.or(self.position),
            fidelity: over.fidelity.or(self.fidelity),
            seed: over.seed.or(self.seed),
            output: over.output.or(self.output),
            format: over.format.or(self.format),
            workers: over.workers.or(self.workers),
            exclude_identity: over.exclude_identity.or(self.exclude_identity),
            pattern: over.pattern.or(self.pattern),
            angles: over.angles.or(self.angles),
            t: over.t.or(self.t),
            samples: over.samples.or(self.samples),
            access_k: over.access_k.or(self.access_k),
            authorized: over.authorized.or(self.authorized),
            n: over.n.or(self.n),
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn require<T: Clone>(value: &Option<T>, flag: &str) -> Result<T, CliError> {
        value.clone().ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| {
            std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("graphcert-out"))
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RepeatFile {
    run: Vec<Settings>,
}

/// Reads a list of overrides from `[[run]]` tables.
pub fn read_repeat_file(path: &Path) -> Result<Vec<Settings>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let f: RepeatFile = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if f.run.is_empty() {
        return Err(CliError::Usage("repeat file has no [[run]] entries".into()));
    }
    Ok(f.run)
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML file with default values; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// TOML file with [[run]] override tables, one experiment each.
    #[arg(long)]
    pub repeat: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Certify,
    Spectrum,
    Mbqc,
    Tdesign,
    Metrology,
    Secretshare,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Certify => "certify",
            Experiment::Spectrum => "spectrum",
            Experiment::Mbqc => "mbqc",
            Experiment::Tdesign => "tdesign",
            Experiment::Metrology => "metrology",
            Experiment::Secretshare => "secretshare",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the failure probability of the certification protocol.
    Certify(RunArgs),
    /// Eigendecomposition of the Q operator against the predicted spectrum.
    Spectrum(RunArgs),
    /// Delegated computation on a certified graph state.
    Mbqc(RunArgs),
    /// Frame potentials of Haar samples and measurement-induced ensembles.
    Tdesign(RunArgs),
    /// Quantum Fisher information of certified GHZ states.
    Metrology(RunArgs),
    /// Certification restricted to an authorised set of players.
    Secretshare(RunArgs),
}

impl Command {
    pub fn split(self) -> (Experiment, RunArgs) {
        match self {
            Command::Certify(a) => (Experiment::Certify, a),
            Command::Spectrum(a) => (Experiment::Spectrum, a),
            Command::Mbqc(a) => (Experiment::Mbqc, a),
            Command::Tdesign(a) => (Experiment::Tdesign, a),
            Command::Metrology(a) => (Experiment::Metrology, a),
            Command::Secretshare(a) => (Experiment::Secretshare, a),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "graphcert", version, about = "Graph-state certification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Fully resolved experiment: file values, then flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub settings: Settings,
}

/// Parses argv into one config per experiment to run.
pub fn parse_config<I, T>(argv: I) -> Result<Vec<ExperimentConfig>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Clap)?;
    let (experiment, args) = cli.command.split();
    let base = match &args.config {
        Some(path) => Settings::from_toml_file(path)?,
        None => Settings::default(),
    };
    let settings = base.merged(args.settings);
    match &args.repeat {
        None => Ok(vec![ExperimentConfig { experiment, settings }]),
        Some(path) => {
            let root = settings.output_dir();
            Ok(read_repeat_file(path)?
                .into_iter()
                .enumerate()
                .map(|(i, over)| {
                    let mut s = settings.clone().merged(over);
                    if s.output.is_none() || s.output == settings.output {
                        s.output = Some(root.join(format!("run-{i:03}")));
                    }
                    ExperimentConfig { experiment, settings: s }
                })
                .collect())
        }
    }
}
