mod commands;
mod experiment;
mod manifest;
mod verify;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "temperley", version, about = "Killed walks, Doob transforms and Temperleyan dimers")]
pub struct Cli {
    /// worker threads (0 = all cores); never changes results
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// CSV (or graph file) output; stdout when absent
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// manifest path, defaults to <out>.manifest.json
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// dense `row,col,value` dump of the matrix behind the command
    #[arg(long, global = true)]
    pub dump_matrix: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GridKind {
    Square,
    Rhombic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExperimentKind {
    /// path-probability ratios against exp(2M⟨e^{iū}, y − x⟩)
    Girsanov,
    /// rectangle crossing by the killed walk
    Crossing,
    /// exit arcs of the drifted walk vs drifted Brownian motion
    Exitlaw,
    /// LERW branches conditioned to exit through an arc
    Branch,
    /// mean and variance of the dimer height
    Height,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Isoradial grid with Z-invariant weights, written as a graph file
    Grid {
        #[arg(long, value_enum, default_value = "square")]
        kind: GridKind,
        #[arg(long)]
        delta: f64,
        /// rhombi per side
        #[arg(long)]
        window: usize,
        /// near-critical mass M (q = Mδ/2)
        #[arg(long = "M", default_value_t = 0.0)]
        mass: f64,
        #[arg(long, default_value_t = 0.2)]
        jitter: f64,
    },
    /// Wilson forests: per-edge and per-root counts
    SampleForest {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Tilted spanning trees of the window rooted at o
    SampleTree {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        n: usize,
        /// JSON array of λ values, or `builtin`
        #[arg(long)]
        lambda: Option<String>,
    },
    /// Drifted dimers: half-edge indicators and heights per sample
    SampleDimers {
        /// window graph; without it a near-critical square grid on the unit square is used
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long = "u", default_value_t = 0.0)]
        ubar: f64,
        #[arg(long = "M", default_value_t = 0.0)]
        mass: f64,
        #[arg(long, default_value_t = 0.125)]
        delta: f64,
        #[arg(long)]
        n: usize,
    },
    /// Determinantal probability that the given edges of Gᵖ are all in the forest
    EdgeProb {
        #[arg(long)]
        graph: PathBuf,
        /// edge ids of Gᵖ (graph edges, then cemetery edges)
        #[arg(long, value_delimiter = ',', required = true)]
        edges: Vec<usize>,
        #[arg(long)]
        exact: bool,
    },
    /// Identity batteries
    Verify {
        #[command(subcommand)]
        what: VerifyCommand,
    },
    /// Characteristic polynomial coefficients of a periodic graph
    Charpoly {
        #[arg(long)]
        periodic_graph: PathBuf,
    },
    /// Near-critical experiments driven by a JSON config
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum VerifyCommand {
    /// Z_RSF = Z_RST_o on the window of a graph file, plus gauge and transfer checks
    Doob {
        #[arg(long)]
        graph: PathBuf,
        /// JSON array of λ values, or `builtin`
        #[arg(long)]
        lambda: Option<String>,
        /// rational arithmetic throughout
        #[arg(long)]
        exact: bool,
    },
    /// Kasteleyn, determinant and Temperley checks on a massive square grid
    Dimers,
    /// AGM, Legendre and near-critical expansion rates
    Elliptic,
    /// Perron point and translation identity (Z² and random graphs, or a given file)
    Periodic {
        #[arg(long)]
        periodic_graph: Option<PathBuf>,
    },
}

/// Bad input: exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A battery found a violated identity: exit code 1.
#[derive(Debug)]
pub struct VerificationFailed(pub Vec<String>);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.0.join(", "))
    }
}

impl std::error::Error for VerificationFailed {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn dispatch<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let line: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match temperley::par::with_threads(cli.threads, || commands::run(&cli, &line)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<VerificationFailed>().is_some() {
                1
            } else if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(dispatch(std::env::args_os()))
}
