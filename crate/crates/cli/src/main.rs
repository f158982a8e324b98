//! `vlase`: synthesize or ingest edge maps, train a codebook, build a geo
//! index, run queries, score them, and sweep class-mask / alpha ablations.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use vlase_core::codebook::{DEFAULT_CLUSTERS, DEFAULT_MAX_EPOCHS, DEFAULT_TOL};
use vlase_core::features::{DEFAULT_ALPHA, DEFAULT_THRESHOLD};
use vlase_core::geoeval::{DEFAULT_KS, DEFAULT_THRESHOLDS_M};
use vlase_core::pipeline::{self, AblationSettings};
use vlase_core::synth::{self, CaptureNoise, Scenario, SynthConfig};
use vlase_core::vlad::DEFAULT_POWER;
use vlase_core::{store, AugmentConfig, ClassMask, EdgeFeatureMap, Error, GeoTag, InitMethod, TrainParams};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_EVAL: u8 = 4;

/// Largest class count accepted when checking mask syntax before any data is read.
const MASK_SYNTAX_CLASSES: usize = 1024;

#[derive(Parser, Debug)]
#[command(name = "vlase", version, about = "Semantic-edge VLAD place recognition")]
struct Cli {
    /// Worker threads for descriptor computation and ablation runs.
    #[arg(long, global = true, env = "VLASE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic capture passes (feature files + geotag CSVs).
    Synth(SynthArgs),
    /// Train a codebook from a directory of feature files.
    Train(TrainArgs),
    /// Describe the mapping images and store them in a geo index.
    Index(IndexArgs),
    /// Retrieve the top-N database images for every query image.
    Query(QueryArgs),
    /// Score retrieval results against ground-truth geotags.
    Eval(EvalArgs),
    /// Run train/index/query/eval once per (mask, alpha) configuration.
    Ablate(AblateArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ScenarioArg {
    Generic,
    SpatialTwin,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum InitArg {
    Kmeanspp,
    Uniform,
}

impl From<InitArg> for InitMethod {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Kmeanspp => InitMethod::KMeansPlusPlus,
            InitArg::Uniform => InitMethod::Uniform,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    locations: usize,
    #[arg(long, default_value_t = 2)]
    passes: u32,
    #[arg(long, value_enum, default_value = "generic")]
    scenario: ScenarioArg,
    /// Probability, pixel and GPS noise std-devs: `sigma_p,sigma_xy,sigma_g`.
    #[arg(long, default_value = "0,0,0", value_parser = parse_noise)]
    noise: CaptureNoise,
    #[arg(long, default_value_t = 160)]
    width: u32,
    #[arg(long, default_value_t = 120)]
    height: u32,
    #[arg(long, default_value_t = 19)]
    classes: usize,
    /// Expected stored pixels per image.
    #[arg(long, default_value_t = 300)]
    density: usize,
    /// Route step between consecutive locations, meters.
    #[arg(long, default_value_t = 10.0)]
    step: f64,
}

#[derive(Args, Debug, Clone)]
struct FeatureArgs {
    /// Edge probability threshold.
    #[arg(long = "te", default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Class-block weight; the spatial block gets `1 - alpha`.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long)]
    no_spatial: bool,
}

#[derive(Args, Debug, Clone)]
struct TrainingArgs {
    #[arg(long, default_value_t = DEFAULT_CLUSTERS)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, value_enum, default_value = "kmeanspp")]
    init: InitArg,
}

impl TrainingArgs {
    fn params(&self) -> TrainParams {
        TrainParams {
            max_epochs: self.epochs,
            tol: self.tol,
            init: self.init.into(),
            ..TrainParams::new(self.clusters, self.seed)
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    /// Class mask: all, static, bld-sky, veg-sky, veg-bld-sky, no-<class>, or `i+j+...`.
    #[arg(long, default_value = "all", value_parser = parse_mask_syntax)]
    mask: String,
    #[command(flatten)]
    feature: FeatureArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    geotags: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    /// Power-normalization exponent.
    #[arg(long, default_value_t = DEFAULT_POWER)]
    power: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 5)]
    top: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS_M)]
    thresholds: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    geotags: PathBuf,
    #[arg(long)]
    query_features: PathBuf,
    #[arg(long)]
    query_geotags: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "all", value_parser = parse_mask_syntax)]
    masks: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_ALPHA])]
    alphas: Vec<f64>,
    #[arg(long = "te", default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    no_spatial: bool,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long, default_value_t = DEFAULT_POWER)]
    power: f64,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS_M)]
    thresholds: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_noise(s: &str) -> Result<CaptureNoise, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("invalid noise value '{p}'")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        &[prob_sigma, pixel_sigma, gps_sigma_m] => Ok(CaptureNoise {
            prob_sigma,
            pixel_sigma,
            gps_sigma_m,
        }),
        _ => Err("expected three comma-separated values: sigma_p,sigma_xy,sigma_g".into()),
    }
}

fn parse_mask_syntax(s: &str) -> Result<String, String> {
    ClassMask::parse(s, MASK_SYNTAX_CLASSES)
        .map(|_| s.trim().to_owned())
        .map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Format { .. } | Error::Corruption { .. } | Error::Parse { .. } => EXIT_FORMAT,
        Error::Evaluation(_) => EXIT_EVAL,
        Error::Input(_) | Error::Training(_) | Error::Io { .. } => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Index(a) => cmd_index(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })
}

fn create_parent(path: &Path) -> Result<(), Error> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn read_maps(dir: &Path) -> Result<Vec<EdgeFeatureMap>, Error> {
    let maps = store::read_feature_dir(dir)?;
    if maps.is_empty() {
        return Err(Error::Input(format!("no .{} files in {}", store::FEATURE_EXT, dir.display())));
    }
    info!("read {} feature maps from {}", maps.len(), dir.display());
    Ok(maps)
}

fn uniform_classes(maps: &[EdgeFeatureMap]) -> Result<usize, Error> {
    let k = maps[0].num_classes();
    if let Some(m) = maps.iter().find(|m| m.num_classes() != k) {
        return Err(Error::Input(format!(
            "{} has {} classes, expected {k}",
            m.image_id(),
            m.num_classes()
        )));
    }
    Ok(k)
}

fn cmd_synth(a: SynthArgs) -> Result<(), Error> {
    let cfg = SynthConfig {
        seed: a.seed,
        num_locations: a.locations,
        step_m: a.step,
        width: a.width,
        height: a.height,
        num_classes: a.classes,
        edge_density: a.density,
        noise: a.noise,
        scenario: match a.scenario {
            ScenarioArg::Generic => Scenario::Generic,
            ScenarioArg::SpatialTwin => Scenario::SpatialTwin,
        },
        ..SynthConfig::default()
    };
    cfg.validate()?;
    if a.passes == 0 {
        return Err(Error::Config("need at least one pass".into()));
    }
    info!("synth: {cfg:?} passes={}", a.passes);
    for pass in 1..=a.passes {
        let data = synth::generate_pass(&cfg, pass)?;
        let dir = a.out.join(format!("pass{pass}"));
        let (maps, tags): (Vec<_>, Vec<_>) = data
            .into_iter()
            .map(|(m, t)| {
                let id = m.image_id().to_owned();
                (m, (id, t))
            })
            .unzip();
        store::write_feature_dir(dir.join("features"), &maps)?;
        store::write_geotags(dir.join("geotags.csv"), &tags)?;
        info!("wrote pass {pass} ({} images) to {}", maps.len(), dir.display());
    }
    if let Some((x, y)) = cfg.twin_pair() {
        info!("twin locations: {} and {}", SynthConfig::image_id(x), SynthConfig::image_id(y));
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let params = a.training.params();
    let maps = read_maps(&a.features)?;
    let k = uniform_classes(&maps)?;
    let mask = ClassMask::parse(&a.mask, k)?;
    let augment = AugmentConfig::new(a.feature.threshold, a.feature.alpha, !a.feature.no_spatial, mask)?;
    info!("train: {augment} clusters={} seed={} epochs={} tol={} init={:?}", params.clusters, params.seed, params.max_epochs, params.tol, params.init);
    let codebook = pipeline::train_from_maps(&maps, &augment, &params)?;
    create_parent(&a.out)?;
    store::write_codebook(&a.out, &codebook)?;
    info!(
        "wrote {}x{} codebook to {} after {} epochs",
        codebook.clusters(),
        codebook.dim(),
        a.out.display(),
        codebook.train_info().epochs_run
    );
    Ok(())
}

fn check_power(power: f64) -> Result<(), Error> {
    if !(power.is_finite() && power > 0.0) {
        return Err(Error::Config(format!("power exponent must be > 0, got {power}")));
    }
    Ok(())
}

fn cmd_index(a: IndexArgs) -> Result<(), Error> {
    check_power(a.power)?;
    info!("index: features={} geotags={} codebook={} power={}", a.features.display(), a.geotags.display(), a.codebook.display(), a.power);
    let codebook = store::read_codebook(&a.codebook, None)?;
    let tags: HashMap<String, GeoTag> = store::read_geotag_map(&a.geotags)?;
    let maps = read_maps(&a.features)?;
    let index = pipeline::build_index(&maps, &tags, &codebook, a.power)?;
    create_parent(&a.out)?;
    store::write_index(&a.out, &index)?;
    let empty = index.records().iter().filter(|r| r.descriptor.is_empty()).count();
    info!("wrote {} records ({empty} without edges) to {}", index.len(), a.out.display());
    Ok(())
}

fn cmd_query(a: QueryArgs) -> Result<(), Error> {
    if a.top == 0 {
        return Err(Error::Config("--top must be at least 1".into()));
    }
    info!("query: index={} codebook={} features={} top={}", a.index.display(), a.codebook.display(), a.features.display(), a.top);
    let codebook = store::read_codebook(&a.codebook, None)?;
    let fp = vlase_core::index::fingerprint(&codebook);
    let index = store::read_index(&a.index, Some(&fp))?;
    let maps = read_maps(&a.features)?;
    let results = pipeline::query_maps(&index, &codebook, &maps, a.top)?;
    create_parent(&a.out)?;
    store::write_results(&a.out, &results)?;
    info!("wrote results for {} queries to {}", results.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    info!("eval: results={} truth={} k={:?} thresholds={:?}", a.results.display(), a.truth.display(), a.k, a.thresholds);
    let results = store::read_results(&a.results)?;
    let truth = store::read_geotag_map(&a.truth)?;
    let report = vlase_core::evaluate(&results, &truth, &a.k, &a.thresholds)?;
    create_parent(&a.out)?;
    let file = fs::File::create(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    report.write_csv(file)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), Error> {
    check_power(a.power)?;
    if a.alphas.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Config(format!("alphas must lie in [0, 1], got {:?}", a.alphas)));
    }
    let settings = AblationSettings {
        threshold: a.threshold,
        spatial: !a.no_spatial,
        train: a.training.params(),
        power: a.power,
        ks: a.k.clone(),
        thresholds_m: a.thresholds.clone(),
    };
    info!("ablate: masks={:?} alphas={:?} {settings:?}", a.masks, a.alphas);
    let db_tags = store::read_geotag_map(&a.geotags)?;
    let query_tags = store::read_geotag_map(&a.query_geotags)?;
    let db_maps = read_maps(&a.features)?;
    let query_maps = read_maps(&a.query_features)?;
    let k = uniform_classes(&db_maps)?;
    let masks = a
        .masks
        .iter()
        .map(|m| ClassMask::parse(m, k))
        .collect::<Result<Vec<_>, _>>()?;
    let runs = pipeline::ablate(&db_maps, &db_tags, &query_maps, &query_tags, &masks, &a.alphas, &settings)?;

    create_dir(&a.out)?;
    let open = |name: &str| {
        let path = a.out.join(name);
        fs::File::create(&path).map_err(|e| Error::Io { path, source: e })
    };
    pipeline::write_ablation_table(open("ablation_table.csv")?, &runs)?;
    pipeline::write_ablation_curves(open("ablation_curves.csv")?, &runs)?;
    for run in &runs {
        println!("mask={} alpha={}", run.mask_label, run.alpha);
        print!("{}", run.report.to_table());
    }
    info!("wrote ablation_table.csv and ablation_curves.csv to {}", a.out.display());
    Ok(())
}
