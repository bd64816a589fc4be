//! The `deepdim` command line: synthetic checks, estimation on stored
//! activations, the image-to-report pipeline and spectrum dumps.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 `--expect`
//! mismatch, 4 seed image rejected by the confidence filter.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index::sample;

use crate::activations::{feature_map_matrix, Estimator, LayerActivations};
use crate::augment::{generate_cluster, AugmentConfig, Image, Method};
use crate::forward::{
    forward_collect, seeded_random_weights, ClusterProbabilities, ForwardError, LayerKind, NetworkSpec,
    DEFAULT_CONFIDENCE,
};
use crate::rng;
use crate::spectrum::{log_spectrum, Theta, DEFAULT_THETA};
use crate::storage::{
    read_activations, read_image, spectra_to_csv, spectra_to_json, write_activations, write_image, write_report,
    ActivationEntry, DimensionReport, Dtype, MapSpectrum, NetworkRef, ReportFormat, RunManifest, MANIFEST_VERSION,
};
use crate::synthetic::{sample_hyperplane_cluster, HyperplaneSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_REJECTED: i32 = 4;

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "DEEPDIM_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Mismatch(String),
    Rejected(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Mismatch(_) => EXIT_MISMATCH,
            CliError::Rejected(_) => EXIT_REJECTED,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Mismatch(m) | CliError::Rejected(m) => m,
        }
    }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl From<ForwardError> for CliError {
    fn from(e: ForwardError) -> Self {
        match e {
            ForwardError::SeedRejected { .. } => CliError::Rejected(e.to_string()),
            other => config(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "deepdim", version, about = "Local dimension of deep-network activation spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the dimension of a synthetic noisy hyperplane cluster.
    Synth(SynthArgs),
    /// Estimate dimensions from stored ACTV activation files.
    Estimate(EstimateArgs),
    /// Augment an image, run the network, filter by confidence and estimate.
    Pipeline(PipelineArgs),
    /// Write an augmented image cluster as PPM files plus a manifest stub.
    Augment(AugmentArgs),
    /// Print the singular values of one feature map.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Crop,
    #[value(alias = "noise")]
    GaussianNoise,
    #[value(alias = "rotate")]
    Rotation,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Crop => Method::Crop,
            MethodArg::GaussianNoise => Method::GaussianNoise,
            MethodArg::Rotation => Method::Rotation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BuiltinNet {
    Tiny,
    Vgg19,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 512)]
    pub ambient: usize,
    #[arg(long, default_value_t = 37)]
    pub intrinsic: usize,
    /// Cluster size.
    #[arg(long, default_value_t = 8000)]
    pub n: usize,
    /// Scale of the additive Gaussian noise.
    #[arg(long, default_value_t = 1e-10)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub coefficient_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long)]
    pub center: bool,
    /// Exit 3 unless the estimate equals this value (default: the intrinsic dimension).
    #[arg(long, num_args = 0..=1, value_name = "D")]
    pub expect: Option<Option<usize>>,
}

#[derive(Debug, Args)]
pub struct EstimateOptions {
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    /// Only analyse these layers (repeatable).
    #[arg(long = "layer", value_name = "NAME")]
    pub layers: Vec<String>,
    /// Number of feature maps drawn at random per layer (default: all).
    #[arg(long, value_name = "K")]
    pub maps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub map_seed: u64,
    /// Also report the concatenated dimension of the selected maps.
    #[arg(long)]
    pub concat: bool,
    /// Also report the dimension of the full layer.
    #[arg(long)]
    pub original: bool,
    /// Subtract the cluster mean before each SVD.
    #[arg(long)]
    pub center: bool,
    /// Attach the singular values of every selected map.
    #[arg(long)]
    pub spectra: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Run manifest listing the activation files.
    #[arg(long, conflicts_with = "files")]
    pub manifest: Option<PathBuf>,
    /// ACTV files.
    pub files: Vec<PathBuf>,
    #[command(flatten)]
    pub opts: EstimateOptions,
}

#[derive(Debug, Args)]
pub struct AugmentOptions {
    #[arg(long, value_enum, default_value_t = MethodArg::GaussianNoise)]
    pub method: MethodArg,
    /// Cluster size, including the seed image.
    #[arg(long, default_value_t = 8000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub crop_max: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_mean: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise_var: f64,
    #[arg(long, default_value_t = 10.0)]
    pub rotation_max: f64,
}

impl AugmentOptions {
    fn to_config(&self) -> AugmentConfig {
        AugmentConfig {
            crop_max_strip: self.crop_max,
            noise_mean: self.noise_mean,
            noise_var: self.noise_var,
            rotation_max_deg: self.rotation_max,
            ..AugmentConfig::new(self.method.into(), self.seed)
        }
    }
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Seed image (binary PPM).
    pub image: PathBuf,
    /// Network spec JSON; overrides --builtin.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BuiltinNet::Tiny)]
    pub builtin: BuiltinNet,
    #[arg(long, default_value_t = 0)]
    pub weight_seed: u64,
    #[command(flatten)]
    pub augment: AugmentOptions,
    /// Keep only images whose class probability exceeds this value.
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    pub confidence: f64,
    /// Target class (default: the seed image's top class).
    #[arg(long)]
    pub class: Option<usize>,
    /// Persist images, activations and a run manifest here.
    #[arg(long)]
    pub save_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
    pub dtype: DtypeArg,
    #[command(flatten)]
    pub opts: EstimateOptions,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    pub image: PathBuf,
    #[command(flatten)]
    pub augment: AugmentOptions,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Confidence threshold recorded in the manifest for the exporter.
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    pub confidence: f64,
    /// Class index recorded in the manifest for the exporter.
    #[arg(long)]
    pub class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// ACTV file.
    pub file: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub map: usize,
    #[arg(long)]
    pub center: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command, writing results
/// to `out` and diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = out.write_all(rendered.as_bytes());
            } else {
                let _ = err.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Sizes the global worker pool from `DEEPDIM_THREADS`, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer (got '{raw}')")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(config)
}

fn execute(cmd: &Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Estimate(a) => cmd_estimate(a, out).map(|_| EXIT_OK),
        Command::Pipeline(a) => cmd_pipeline(a, out).map(|_| EXIT_OK),
        Command::Augment(a) => cmd_augment(a, out).map(|_| EXIT_OK),
        Command::Spectrum(a) => cmd_spectrum(a, out).map(|_| EXIT_OK),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(config)
}

fn theta(value: f64) -> Result<Theta, CliError> {
    Theta::new(value).map_err(|e| CliError::Config(format!("--theta: {e}")))
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let estimator = Estimator::new(theta(a.theta)?).centered(a.center);
    let spec = HyperplaneSpec {
        ambient_dim: a.ambient,
        intrinsic_dim: a.intrinsic,
        cluster_size: a.n,
        noise_scale: a.noise,
        coefficient_scale: a.coefficient_scale,
        seed: a.seed,
    };
    let m = sample_hyperplane_cluster(&spec).map_err(config)?;
    let report = estimator.drop_of(&m).map_err(config)?;
    let mut text = format!(
        "ambient_dim: {}\nintrinsic_dim: {}\ncluster_size: {}\nnoise_scale: {:e}\nseed: {}\ntheta: {:e}\n\
         estimated_dim: {}\nfull_space: {}\n",
        a.ambient, a.intrinsic, a.n, a.noise, a.seed, a.theta, report.dimension, report.full_space
    );
    if let (Some(i), Some(r)) = (report.drop_index, report.drop_ratio) {
        text.push_str(&format!("drop_index: {i}\ndrop_ratio: {r:e}\n"));
    }
    let mut code = EXIT_OK;
    if let Some(expect) = a.expect {
        let want = expect.unwrap_or(a.intrinsic);
        let matched = report.dimension == want;
        text.push_str(&format!("expected_dim: {want}\nmatch: {matched}\n"));
        if !matched {
            code = EXIT_MISMATCH;
        }
    }
    emit(out, &text)?;
    Ok(code)
}

/// Draws `k` distinct map indices from `[0, channels)` with a generator seeded
/// by `seed`, returned in ascending order. `None` selects every map.
pub fn select_maps(channels: usize, k: Option<usize>, seed: u64) -> Result<Vec<usize>, CliError> {
    match k {
        None => Ok((0..channels).collect()),
        Some(0) => Err(CliError::Config("--maps must be at least 1".into())),
        Some(k) if k > channels => Err(CliError::Config(format!(
            "--maps {k} exceeds the {channels} available feature maps"
        ))),
        Some(k) => {
            let mut picked = sample(&mut rng::seeded(seed), channels, k).into_vec();
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

fn map_spectrum(estimator: &Estimator, acts: &LayerActivations, map: usize) -> Result<MapSpectrum, CliError> {
    let m = feature_map_matrix(acts, map).map_err(config)?;
    let s = estimator.spectrum_of(&m).map_err(config)?;
    Ok(MapSpectrum {
        layer: acts.layer_name().to_owned(),
        map_index: map,
        log10: log_spectrum(&s),
        singular_values: s.values().to_vec(),
    })
}

/// Runs the dimension calculus on each layer and writes the report.
fn analyse(layers: &[LayerActivations], opts: &EstimateOptions, out: &mut dyn Write) -> Result<DimensionReport, CliError> {
    let estimator = Estimator::new(theta(opts.theta)?).centered(opts.center);
    let format = ReportFormat::from(opts.format);
    if opts.spectra && format == ReportFormat::Csv && opts.output.is_none() {
        return Err(CliError::Config("--spectra with --format csv needs --output".into()));
    }
    let mut report = DimensionReport::default();
    for acts in layers {
        let maps = select_maps(acts.channels(), opts.maps, opts.map_seed)?;
        let summary = estimator.summarize(acts, &maps, opts.concat, opts.original).map_err(config)?;
        report.layers.push(summary);
        if opts.spectra {
            for &m in &maps {
                report.spectra.push(map_spectrum(&estimator, acts, m)?);
            }
        }
    }
    match &opts.output {
        Some(path) => write_report(&report, format, path).map_err(config)?,
        None => emit(out, &report.render(format).map_err(config)?)?,
    }
    Ok(report)
}

pub fn cmd_estimate(a: &EstimateArgs, out: &mut dyn Write) -> Result<DimensionReport, CliError> {
    theta(a.opts.theta)?;
    let layers = match (&a.manifest, a.files.is_empty()) {
        (Some(path), _) => RunManifest::read(path)
            .and_then(|m| m.load_activations(path, &a.opts.layers))
            .map_err(config)?,
        (None, false) => {
            let mut loaded = Vec::new();
            for path in &a.files {
                loaded.push(read_activations(path).map_err(config)?);
            }
            for wanted in &a.opts.layers {
                if !loaded.iter().any(|l| l.layer_name() == wanted) {
                    return Err(CliError::Config(format!("unknown layer '{wanted}'")));
                }
            }
            loaded.retain(|l| a.opts.layers.is_empty() || a.opts.layers.iter().any(|w| w == l.layer_name()));
            loaded
        }
        (None, true) => return Err(CliError::Config("give --manifest or at least one ACTV file".into())),
    };
    analyse(&layers, &a.opts, out)
}

fn load_network(a: &PipelineArgs) -> Result<NetworkSpec, CliError> {
    match &a.network {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            NetworkSpec::from_json(&text).map_err(config)
        }
        None => Ok(match a.builtin {
            BuiltinNet::Tiny => NetworkSpec::tiny(),
            BuiltinNet::Vgg19 => NetworkSpec::vgg19(),
        }),
    }
}

fn image_name(i: usize) -> String {
    format!("{i:05}.ppm")
}

fn write_cluster(images: &[Image], dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    for (i, img) in images.iter().enumerate() {
        write_image(img, &dir.join(image_name(i))).map_err(config)?;
    }
    Ok(())
}

pub fn cmd_pipeline(a: &PipelineArgs, out: &mut dyn Write) -> Result<DimensionReport, CliError> {
    theta(a.opts.theta)?;
    if a.augment.n == 0 {
        return Err(CliError::Config("--n must be at least 1".into()));
    }
    let net = load_network(a)?;
    net.shapes()?;
    let img = read_image(&a.image).map_err(config)?;
    let cfg = a.augment.to_config();
    cfg.validate(img.height(), img.width()).map_err(config)?;

    let layer_names: Vec<String> = if a.opts.layers.is_empty() {
        net.layers
            .iter()
            .filter(|l| !matches!(l.kind, LayerKind::Softmax))
            .map(|l| l.name.clone())
            .collect()
    } else {
        a.opts.layers.clone()
    };
    for name in &layer_names {
        if net.layer_index(name).is_none() {
            return Err(CliError::Config(format!("unknown layer '{name}'")));
        }
    }

    let weights = seeded_random_weights(&net, a.weight_seed)?;
    let cluster = generate_cluster(&img, a.augment.n, &cfg).map_err(config)?;
    let probs = ClusterProbabilities::compute(&net, &weights, &cluster, a.class, a.confidence)?;
    let kept = probs.kept()?;
    let survivors: Vec<Image> = kept.iter().map(|&i| cluster[i].clone()).collect();
    let layers = forward_collect(&net, &weights, &survivors, &layer_names)?;

    if let Some(dir) = &a.save_dir {
        save_run(dir, a, &net, &cfg, &cluster, &kept, probs.class_index, &layers)?;
    }
    analyse(&layers, &a.opts, out)
}

#[allow(clippy::too_many_arguments)]
fn save_run(
    dir: &Path,
    a: &PipelineArgs,
    net: &NetworkSpec,
    cfg: &AugmentConfig,
    cluster: &[Image],
    kept: &[usize],
    class_index: usize,
    layers: &[LayerActivations],
) -> Result<(), CliError> {
    write_cluster(cluster, &dir.join("images"))?;
    let net_path = dir.join("network.json");
    fs::write(&net_path, net.to_json()).map_err(|e| CliError::Config(format!("{}: {e}", net_path.display())))?;
    let dtype = match a.dtype {
        DtypeArg::F32 => Dtype::F32,
        DtypeArg::F64 => Dtype::F64,
    };
    let mut entries = Vec::new();
    for acts in layers {
        let file = format!("{}.actv", acts.layer_name());
        write_activations(acts, dtype, &dir.join(&file)).map_err(config)?;
        entries.push(ActivationEntry { layer: acts.layer_name().to_owned(), file });
    }
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        network: NetworkRef {
            spec: Some("network.json".into()),
            name: net.name.clone(),
            weight_seed: Some(a.weight_seed),
        },
        augmentation: cfg.clone(),
        cluster_size: cluster.len(),
        confidence_threshold: a.confidence,
        class_index: Some(class_index),
        excluded_samples: (0..cluster.len()).filter(|i| !kept.contains(i)).collect(),
        preprocessing: None,
        activations: entries,
    };
    manifest.write(&dir.join("manifest.json")).map_err(config)
}

pub fn cmd_augment(a: &AugmentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.augment.n == 0 {
        return Err(CliError::Config("--n must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&a.confidence) {
        return Err(CliError::Config(format!("--confidence must lie in [0, 1) (got {})", a.confidence)));
    }
    let img = read_image(&a.image).map_err(config)?;
    let cfg = a.augment.to_config();
    cfg.validate(img.height(), img.width()).map_err(config)?;
    let cluster = generate_cluster(&img, a.augment.n, &cfg).map_err(config)?;
    write_cluster(&cluster, &a.out_dir.join("images"))?;
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        network: NetworkRef { spec: None, name: None, weight_seed: None },
        augmentation: cfg,
        cluster_size: cluster.len(),
        confidence_threshold: a.confidence,
        class_index: a.class,
        excluded_samples: Vec::new(),
        preprocessing: None,
        activations: Vec::new(),
    };
    manifest.write(&a.out_dir.join("manifest.json")).map_err(config)?;
    emit(out, &format!("wrote {} images to {}\n", cluster.len(), a.out_dir.join("images").display()))
}

pub fn cmd_spectrum(a: &SpectrumArgs, out: &mut dyn Write) -> Result<MapSpectrum, CliError> {
    let acts = read_activations(&a.file).map_err(config)?;
    if a.map >= acts.channels() {
        return Err(CliError::Config(format!(
            "map {} out of range: layer '{}' has {} maps",
            a.map,
            acts.layer_name(),
            acts.channels()
        )));
    }
    let estimator = Estimator::default().centered(a.center);
    let spectrum = map_spectrum(&estimator, &acts, a.map)?;
    let text = match a.format {
        FormatArg::Csv => spectra_to_csv(std::slice::from_ref(&spectrum)).map_err(config)?,
        FormatArg::Json => spectra_to_json(std::slice::from_ref(&spectrum)),
    };
    match &a.output {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => emit(out, &text)?,
    }
    Ok(spectrum)
}
