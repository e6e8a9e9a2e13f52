use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use noncls::nonclassicality::WitnessKind;

#[derive(Debug, Parser)]
#[command(name = "noncls", version, about = "Twin-beam photocount statistics and nonclassicality depths")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,

    /// Re-run the command recorded in a manifest and check every output digest.
    #[arg(long, value_name = "MANIFEST")]
    pub replay: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline configuration (TOML); flags override its keys.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output file, or directory for gen-train, bench and plotdata.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Where to write the run manifest (default next to the output).
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    #[arg(long, global = true)]
    pub no_manifest: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Intensity,
    Probability,
}

impl From<Kind> for WitnessKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Intensity => WitnessKind::Intensity,
            Kind::Probability => WitnessKind::Probability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arm {
    Signal,
    Idler,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate joint or post-selected photocount histograms.
    Simulate(Simulate),
    /// Tabulate a detection matrix T(c, n).
    Detmat(Detmat),
    /// Reconstruct a photon-number distribution from a histogram by EM.
    Reconstruct(Reconstruct),
    /// Fit the six-parameter twin-beam model to a joint histogram.
    Fit(Fit),
    /// Nonclassicality depths of a photon-number distribution.
    Ncd(Ncd),
    /// Generate a labeled training set.
    GenTrain(GenTrain),
    /// Train a depth classifier.
    Train(Train),
    /// Classify a photocount histogram.
    Classify(Classify),
    /// Train and compare several architectures.
    Sweep(Sweep),
    /// Compare ANN, EM and fit depths against the truth.
    Bench(Bench),
    /// Export CSV series for plotting.
    Plotdata(Plotdata),
}

#[derive(Debug, Args)]
pub struct Simulate {
    /// Source parameters (TOML); the config's [source] otherwise.
    #[arg(long, value_name = "FILE")]
    pub source: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub detector_s: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub detector_i: Option<PathBuf>,
    /// Frames in the histogram (default 1.2e6).
    #[arg(long)]
    pub frames: Option<u64>,
    /// Post-select the idler on this many signal counts.
    #[arg(long)]
    pub c_s: Option<usize>,
    /// Write the exact distribution instead of a sampled histogram.
    #[arg(long)]
    pub exact: bool,
    /// Write photon numbers rather than photocounts (always exact).
    #[arg(long)]
    pub photon: bool,
}

#[derive(Debug, Args)]
pub struct Detmat {
    #[arg(long, value_name = "FILE")]
    pub detector: Option<PathBuf>,
    /// Configured detector to use when no file is given.
    #[arg(long, value_enum, default_value = "idler")]
    pub arm: Arm,
    #[arg(long)]
    pub n_max: usize,
    /// Largest click count; chosen from the column tails when absent.
    #[arg(long)]
    pub c_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Reconstruct {
    #[arg(long, value_name = "FILE")]
    pub histogram: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub detector: PathBuf,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Photon-number cutoff of the reconstruction.
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Plain multiplicative updates without over-relaxation.
    #[arg(long)]
    pub no_accelerate: bool,
}

#[derive(Debug, Args)]
pub struct Fit {
    #[arg(long, value_name = "FILE")]
    pub joint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub detector_s: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub detector_i: PathBuf,
    /// Initial source parameters (TOML).
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_evals: Option<usize>,
    /// Tie the noise intensities to the measured beam means.
    #[arg(long)]
    pub pin_means: bool,
}

#[derive(Debug, Args)]
pub struct Ncd {
    #[arg(long, value_name = "FILE")]
    pub distribution: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub max_order: usize,
    /// Effective mode number; estimated from the distribution when absent.
    #[arg(long)]
    pub m_eff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenTrain {
    /// Built-in grid to start from when the config has no [training] section.
    #[arg(long, value_enum)]
    pub preset: Option<Kind>,
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Sampling-noise frames; 0 keeps exact histograms.
    #[arg(long)]
    pub noise_frames: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Train {
    /// Training-set directory or JSON file.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Hidden-layer widths, e.g. 20,20.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Depth range MIN:MAX of the classes.
    #[arg(long)]
    pub range: Option<String>,
    #[arg(long, default_value_t = 250)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct Classify {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub histogram: PathBuf,
}

#[derive(Debug, Args)]
pub struct Sweep {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Layer counts, e.g. 1..4 or 1,2.
    #[arg(long, default_value = "1..4")]
    pub layers: String,
    /// Neurons per layer, e.g. 10,20,50.
    #[arg(long, default_value = "10,20,50")]
    pub neurons: String,
    #[arg(long, default_value_t = 250)]
    pub epochs: usize,
    /// Extra noisy test set evaluated by every network.
    #[arg(long, value_name = "PATH")]
    pub noisy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Bench {
    /// Trained classifier; required when the ann method is used.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<u64>,
    #[arg(long)]
    pub joint_frames: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Comma-separated subset of ann,em,fit.
    #[arg(long)]
    pub methods: Option<String>,
    /// Signal counts, e.g. 2..9.
    #[arg(long)]
    pub c_s: Option<String>,
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    #[arg(long)]
    pub max_order: Option<usize>,
    /// Use exact histograms instead of sampled ones.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Debug, Args)]
pub struct Plotdata {
    /// Bench report (report.json).
    #[arg(long, value_name = "FILE")]
    pub bench: Option<PathBuf>,
    /// Training set (directory or JSON file).
    #[arg(long, value_name = "PATH")]
    pub training: Option<PathBuf>,
    /// Sweep result (JSON).
    #[arg(long, value_name = "FILE")]
    pub sweep: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        super::Cli::command().debug_assert();
    }
}
