//! `setagg` command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array1;

use setagg::aggregate::{self, AggregateMethod, AggregateOptions};
use setagg::bench::{self, BenchMethod};
use setagg::disentangle::{self, DisentangleModel, ModelDims, QualitySource, TrainConfig};
use setagg::io::{self, ProtocolFile, StoredRepresentation};
use setagg::metrics;
use setagg::synth::{self, GeneratorConfig};
use setagg::vbs::{AssignMode, DEFAULT_TAU, DEFAULT_WORDS};
use setagg::{Error, Execution, Result};

const EXIT_CODES: &str = "\
Exit codes:
   0  success
   2  usage error (unknown flag, malformed value)
  10  dimension mismatch between inputs
  11  invalid input data
  12  degenerate (zero) vector
  13  invalid parameter
  14  numerical failure
  15  training diverged
  20  bad file magic
  21  unsupported format version
  22  checksum mismatch
  23  truncated file
  24  i/o error (missing or unreadable file)
  25  malformed JSON";

const REPRESENTATION_EXTENSION: &str = "frep";

#[derive(Parser)]
#[command(name = "setagg", version, about = "Feature-set aggregation toolkit", after_help = EXIT_CODES)]
struct Cli {
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory with manifest and protocol.
    #[command(after_help = EXIT_CODES)]
    Synth(SynthArgs),
    /// Train the disentanglement model on a dataset directory.
    #[command(after_help = EXIT_CODES)]
    Train(TrainArgs),
    /// Aggregate every set of a dataset into one representation file.
    #[command(after_help = EXIT_CODES)]
    Aggregate(AggregateArgs),
    /// Score representations against a protocol file.
    #[command(after_help = EXIT_CODES)]
    Eval(EvalArgs),
    /// Time weighting methods over a grid of set sizes.
    #[command(after_help = EXIT_CODES)]
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// key=value generator config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Seed of the shared mixing matrix and variance modes (defaults to --seed).
    #[arg(long)]
    world_seed: Option<u64>,
    #[arg(long)]
    num_identities: Option<usize>,
    #[arg(long)]
    sets_per_identity: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    latent_id_dim: Option<usize>,
    #[arg(long)]
    latent_va_dim: Option<usize>,
    #[arg(long)]
    num_va_modes: Option<usize>,
    #[arg(long)]
    burst_concentration: Option<f64>,
    #[arg(long)]
    variance_scale: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    set_size_min: Option<usize>,
    #[arg(long)]
    set_size_max: Option<usize>,
    #[arg(long)]
    quality_fraction: Option<f64>,
    /// Verification pairs written to the protocol.
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 0.5)]
    pos_fraction: f64,
    /// Fraction of identities enrolled in the identification gallery.
    #[arg(long, default_value_t = 0.8)]
    enrolled_fraction: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory of .fset files.
    #[arg(long)]
    data: PathBuf,
    /// Model artifact to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV (defaults to the model path with a .loss.csv suffix).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.99)]
    smoothing: f64,
    /// Elements per training instance.
    #[arg(long, default_value_t = disentangle::DEFAULT_INSTANCE_SIZE)]
    instance_size: usize,
    /// Vocabulary size.
    #[arg(long, default_value_t = DEFAULT_WORDS)]
    k: usize,
    /// Soft-assignment temperature.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long)]
    d_id: Option<usize>,
    #[arg(long)]
    d_va: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Quality {
    Attention,
    Norm,
    Uniform,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model artifact; without it only sum, gmp and da are available.
    #[arg(long)]
    model: Option<PathBuf>,
    /// sum, attention, vbs, vba, gmp, da, vba+gmp or vba+da.
    #[arg(long, default_value = "vba")]
    method: AggregateMethod,
    /// Output directory for representation files and weights.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Quality::Attention)]
    quality: Quality,
    /// Hard word assignment instead of the soft one.
    #[arg(long)]
    hard: bool,
    /// Override the model's soft-assignment temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    l2_normalize_va: bool,
    #[arg(long, default_value_t = setagg::baselines::DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value_t = setagg::baselines::DEFAULT_DA_ITERATIONS)]
    da_iterations: usize,
    #[arg(long, default_value_t = setagg::baselines::DEFAULT_DA_TOL)]
    da_tol: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of representation files.
    #[arg(long)]
    reps: PathBuf,
    /// Protocol JSON (pairs, gallery, probes).
    #[arg(long)]
    protocol: PathBuf,
    /// Output directory for report JSON and ROC CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = metrics::DEFAULT_FAR_TARGETS)]
    far: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = metrics::DEFAULT_RANKS)]
    ranks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = metrics::DEFAULT_FPIR_TARGETS)]
    fpir: Vec<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// vbs, gram, gmp or da; comma separated.
    #[arg(long, value_delimiter = ',', default_value = "vbs")]
    method: Vec<BenchMethod>,
    #[arg(long, value_delimiter = ',', default_value = "1000,2000")]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    d: usize,
    #[arg(long, default_value_t = DEFAULT_WORDS)]
    k: usize,
    /// Timing samples per point; the median is reported.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// CSV output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let result = match cli.command {
        Command::Synth(a) => synth_cmd(a, exec),
        Command::Train(a) => train_cmd(a, exec),
        Command::Aggregate(a) => aggregate_cmd(a, exec),
        Command::Eval(a) => eval_cmd(a, exec),
        Command::Bench(a) => bench_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("setagg: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn synth_cmd(a: SynthArgs, exec: Execution) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            GeneratorConfig::from_kv_str(&text)?
        }
        None => GeneratorConfig::default(),
    };
    cfg.seed = a.seed;
    if a.world_seed.is_some() {
        cfg.world_seed = a.world_seed;
    }
    macro_rules! apply {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v; } )* };
    }
    apply!(
        num_identities,
        sets_per_identity,
        d,
        latent_id_dim,
        latent_va_dim,
        num_va_modes,
        burst_concentration,
        variance_scale,
        noise_sigma,
        set_size_min,
        set_size_max,
        quality_fraction
    );
    let data = synth::generate(&cfg, exec)?;
    let ids: Vec<i64> = data.sets.iter().map(|s| s.identity()).collect();
    let names: Vec<&str> = data.sets.iter().map(|s| s.source_id()).collect();
    let pairs = synth::make_verification_protocol(&ids, a.pairs, a.pos_fraction, cfg.seed)?;
    let split = synth::make_identification_protocol(&ids, a.enrolled_fraction, cfg.seed)?;
    io::write_dataset(&a.out, &data.sets, Some(&data.truth))?;
    io::write_json(
        &a.out.join(io::PROTOCOL_FILE),
        &ProtocolFile::from_indices(&names, &pairs, Some(&split)),
    )?;
    write_text(&a.out.join("config.txt"), &cfg.to_kv_string())?;
    eprintln!(
        "wrote {} sets of {} identities to {}",
        data.sets.len(),
        cfg.num_identities,
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs, exec: Execution) -> Result<()> {
    let sets = io::read_dataset(&a.data)?;
    let classes = sets
        .iter()
        .map(|s| s.identity())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let mut dims = ModelDims::for_feature_dim(sets[0].dim(), a.k, classes);
    if let Some(v) = a.d_id {
        dims.d_id = v;
    }
    if let Some(v) = a.d_va {
        dims.d_va = v;
    }
    let mut model = DisentangleModel::new(dims, a.tau, a.seed)?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        momentum: a.momentum,
        smoothing: a.smoothing,
        seed: a.seed,
        instance_size: a.instance_size,
        max_steps: a.max_steps,
        ..TrainConfig::default()
    };
    let report = disentangle::train(&mut model, &sets, &config, exec)?;
    io::write_model(&a.out, &model)?;
    let loss_path = a.loss_csv.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    write_text(&loss_path, &io::loss_csv(&report.steps))?;
    if let Some(last) = report.steps.last() {
        eprintln!(
            "{} steps; final L_total {:.4} (L_CE {:.4}, L_img {:.4}, L_set {:.4})",
            report.steps.len(),
            last.loss.total(),
            last.loss.ce,
            last.loss.img,
            last.loss.set
        );
    }
    Ok(())
}

fn aggregate_cmd(a: AggregateArgs, exec: Execution) -> Result<()> {
    let sets = io::read_dataset(&a.data)?;
    let model = a.model.as_deref().map(io::read_model).transpose()?;
    let mut opts = AggregateOptions {
        ridge: a.ridge,
        da_iterations: a.da_iterations,
        da_tol: a.da_tol,
        ..AggregateOptions::default()
    };
    opts.forward.quality = match a.quality {
        Quality::Attention => QualitySource::Attention,
        Quality::Norm => QualitySource::FeatureNorm,
        Quality::Uniform => QualitySource::Uniform,
    };
    opts.forward.l2_normalize_va = a.l2_normalize_va;
    opts.forward.mode = if a.hard {
        Some(AssignMode::Hard)
    } else {
        a.tau.map(AssignMode::soft).transpose()?
    };
    let out = aggregate::aggregate_all(&sets, a.method, model.as_ref(), &opts, exec)?;
    create_dir(&a.out)?;
    let mut weights = String::from(io::WEIGHTS_CSV_HEADER);
    weights.push('\n');
    for (set, agg) in sets.iter().zip(&out) {
        let path = a.out.join(format!("{}.{REPRESENTATION_EXTENSION}", set.source_id()));
        io::write_representation(
            &path,
            &StoredRepresentation {
                representation: agg.representation.clone(),
                identity: set.identity(),
                source_id: set.source_id().to_string(),
            },
        )?;
        io::weights_csv_rows(
            &mut weights,
            set.source_id(),
            agg.alpha.as_ref(),
            agg.beta.as_ref(),
            &agg.weights,
        );
    }
    write_text(&a.out.join("weights.csv"), &weights)?;
    eprintln!(
        "wrote {} {} representations to {}",
        out.len(),
        a.method,
        a.out.display()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs, exec: Execution) -> Result<()> {
    let protocol: ProtocolFile = io::read_json(&a.protocol)?;
    let stored: Vec<StoredRepresentation> = io::list_files(&a.reps, REPRESENTATION_EXTENSION)?
        .iter()
        .map(|p| io::read_representation(p))
        .collect::<Result<_>>()?;
    if stored.is_empty() {
        return Err(Error::Validation(format!(
            "no .{REPRESENTATION_EXTENSION} files in {}",
            a.reps.display()
        )));
    }
    let vectors: BTreeMap<&str, &Array1<f64>> = stored
        .iter()
        .map(|s| (s.source_id.as_str(), &s.representation.vector))
        .collect();
    let labelled: BTreeMap<&str, (&Array1<f64>, i64)> = stored
        .iter()
        .map(|s| (s.source_id.as_str(), (&s.representation.vector, s.identity)))
        .collect();
    create_dir(&a.out)?;
    if !protocol.pairs.is_empty() {
        let report = aggregate::evaluate_verification(&vectors, &protocol.pairs, &a.far, exec)?;
        io::write_json(&a.out.join("verification.json"), &report)?;
        write_text(&a.out.join("roc.csv"), &metrics::roc_csv(&report.roc))?;
        for (key, op) in &report.tar_at_far {
            let flag = if op.unstable { " (unstable)" } else { "" };
            eprintln!("TAR@FAR={key}: {:.4}{flag}", op.rate);
        }
    }
    if !protocol.gallery.is_empty() {
        let report = aggregate::evaluate_identification(
            &labelled,
            &protocol.gallery,
            &protocol.probes,
            &a.ranks,
            &a.fpir,
            exec,
        )?;
        io::write_json(&a.out.join("identification.json"), &report)?;
        for (k, rate) in &report.rank_k {
            eprintln!("rank-{k}: {rate:.4}");
        }
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let rows = bench::bench_table(&a.method, &a.n_grid, a.d, a.k, a.repeats, a.seed)?;
    let csv = bench::bench_csv(&rows);
    match &a.out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
