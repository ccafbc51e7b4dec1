use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use enhope::data::{normalize, stratified_split, LabelColumn, NormMode, Split};
use enhope::embedding::{init_high_order, init_linear, EmbeddingModel, HighOrderDims};
use enhope::exemplars::{build_exemplars, ExemplarConfig, ExemplarMode};
use enhope::knn::{benchmark, default_k, error_rate, knn_classify, knn_classify_parallel, BenchmarkConfig};
use enhope::model_file::{ModelFile, TrainingMeta};
use enhope::objective::{ExemplarLossState, Kernel, Normalization, PairwiseLossConfig};
use enhope::optimizer::{train, CgConfig, LossMode, TrainReport};
use enhope::{Dataset, Error, Result};
use serde_json::json;

use crate::input::{DataSource, Subset};
use crate::plot::{read_embedding_csv, render_svg};

#[derive(Debug, Parser)]
#[command(name = "enhope", version, about = "Exemplar-centered high-order embeddings for fast kNN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an embedding and write a model file.
    Train(TrainArgs),
    /// Write the embedding of a dataset (and the model's exemplars) as CSV.
    Embed(EmbedArgs),
    /// Render an embedding CSV as an SVG scatter plot.
    Plot(PlotArgs),
    /// kNN error rate of a model on a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Time exemplar kNN in the embedding against full kNN in input space.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory of IDX files or a CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// Which IDX pair to read from a directory (`train-*` or `t10k-*`).
    #[arg(long, value_enum)]
    pub subset: Option<Subset>,
    /// CSV label column: `last`, a zero-based index or a header name.
    #[arg(long, default_value = "last")]
    pub label_column: LabelColumn,
    /// The CSV file has no header row.
    #[arg(long)]
    pub no_header: bool,
}

impl DataArgs {
    fn source(&self, default_subset: Subset) -> DataSource {
        DataSource {
            path: self.data.clone(),
            subset: self.subset.unwrap_or(default_subset),
            label_column: self.label_column.clone(),
            has_header: !self.no_header,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Fixed exemplars from per-class k-means.
    Kmeans,
    /// Exemplars initialized by k-means and trained jointly.
    Learned,
    /// Exemplars initialized by random sampling and trained jointly.
    LearnedRandom,
    /// Fixed randomly sampled training points.
    Random,
    /// No exemplars: pairwise training.
    None,
}

impl ModeArg {
    fn exemplar_mode(self) -> Option<ExemplarMode> {
        match self {
            ModeArg::Kmeans => Some(ExemplarMode::KMeans),
            ModeArg::Learned => Some(ExemplarMode::LearnedFromKMeans),
            ModeArg::LearnedRandom => Some(ExemplarMode::LearnedFromRandom),
            ModeArg::Random => Some(ExemplarMode::Random),
            ModeArg::None => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapArg {
    HighOrder,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    StudentT,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    /// Each feature scaled to [0, 1] by its own range.
    Minmax01,
    /// All features scaled to [0, 1] by one shared range.
    Global01,
    Zscore,
    None,
}

impl From<NormArg> for NormMode {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Minmax01 => NormMode::MinMax01,
            NormArg::Global01 => NormMode::GlobalMinMax01,
            NormArg::Zscore => NormMode::ZScore,
            NormArg::None => NormMode::None,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Learned)]
    pub mode: ModeArg,
    /// Number of exemplars (default 20; not allowed with `--mode none`).
    #[arg(long)]
    pub z: Option<usize>,
    #[arg(long, value_enum, default_value_t = MapArg::HighOrder)]
    pub map: MapArg,
    /// Factor count F of the high-order map.
    #[arg(long, default_value_t = 800)]
    pub factors: usize,
    /// Hidden unit count m of the high-order map.
    #[arg(long, default_value_t = 400)]
    pub hidden: usize,
    /// Interaction order O.
    #[arg(long, default_value_t = 2)]
    pub order: u32,
    /// Embedding dimension h.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Similarity kernel of pairwise training (`--mode none`).
    #[arg(long, value_enum, default_value_t = KernelArg::StudentT)]
    pub kernel: KernelArg,
    /// Normalize exemplar similarities per point instead of globally.
    #[arg(long)]
    pub per_row: bool,
    #[arg(long, value_enum, default_value_t = NormArg::Minmax01)]
    pub norm: NormArg,
    /// Fraction of every class held out for model selection (0 disables).
    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Minibatch size (default 5000 with exemplars, 1000 pairwise).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Conjugate gradient steps per minibatch.
    #[arg(long, default_value_t = 3)]
    pub cg_steps: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Neighbors for validation kNN (default: 1 for z <= 10, else 5).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON training report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output CSV: y1..yh, label, is_exemplar.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Embedding CSV written by `embed`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 800)]
    pub width: u32,
    #[arg(long, default_value_t = 600)]
    pub height: u32,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Reference points for models trained without exemplars.
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Neighbors (default: 1 for z <= 10, else 5).
    #[arg(long)]
    pub k: Option<usize>,
    /// Spread queries over threads (ENHOPE_THREADS sets the count).
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Training set searched by the full kNN arm.
    #[arg(long)]
    pub train_data: PathBuf,
    /// Neighbors of the exemplar arm (default: 1 for z <= 10, else 5).
    #[arg(long)]
    pub k: Option<usize>,
    /// Neighbors of the full kNN arm.
    #[arg(long, default_value_t = 1)]
    pub k_full: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub parallel: bool,
    /// Optional JSON copy of the report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Runs one command, writing its results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Embed(a) => cmd_embed(&a, out),
        Command::Plot(a) => cmd_plot(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Benchmark(a) => cmd_benchmark(&a, out),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("ENHOPE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("ENHOPE_THREADS must be a positive integer, got {value:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn report_json(report: &TrainReport) -> serde_json::Value {
    let epochs: Vec<_> = report
        .epochs
        .iter()
        .map(|e| json!({"epoch": e.epoch, "loss": e.loss, "val_err": e.val_err, "secs": e.secs}))
        .collect();
    json!({
        "selected_epoch": report.selected_epoch,
        "full_batch": report.full_batch,
        "objective_evals": report.objective_evals,
        "distance_evals": report.distance_evals,
        "epochs": epochs,
    })
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let exemplar_mode = a.mode.exemplar_mode();
    if exemplar_mode.is_none() && a.z.is_some() {
        return Err(Error::InvalidArgument("--z needs an exemplar mode, not --mode none".into()));
    }
    if !(0.0..1.0).contains(&a.val_frac) {
        return Err(Error::InvalidArgument(format!("--val-frac must be in [0, 1), got {}", a.val_frac)));
    }
    let raw = a.data.source(Subset::Train).load()?;
    let (ds, stats) = normalize(&raw, a.norm.into());
    let split = if a.val_frac > 0.0 {
        stratified_split(&ds, a.val_frac, a.seed)?
    } else {
        Split::all_train(ds.len())
    };

    let state = match exemplar_mode {
        Some(mode) => {
            let fit = ds.subset(&split.train)?;
            let cfg = ExemplarConfig::new(a.z.unwrap_or(20), mode, a.seed.wrapping_add(1));
            let exemplars = build_exemplars(&fit, &cfg)?;
            let mut state = if mode.is_learned() {
                ExemplarLossState::learned(exemplars)
            } else {
                ExemplarLossState::fixed(exemplars)
            };
            if a.per_row {
                state.normalization = Normalization::PerRow;
            }
            Some(state)
        }
        None => None,
    };
    let loss_mode = match exemplar_mode {
        Some(_) => LossMode::Exemplar,
        None => LossMode::Pairwise(PairwiseLossConfig {
            kernel: match a.kernel {
                KernelArg::StudentT => Kernel::StudentT,
                KernelArg::Gaussian => Kernel::Gaussian,
            },
        }),
    };

    let init_seed = a.seed.wrapping_add(2);
    let embedding = match a.map {
        MapArg::HighOrder => init_high_order(
            HighOrderDims {
                input: ds.feature_dim(),
                output: a.dim,
                factors: a.factors,
                hidden: a.hidden,
            },
            a.order,
            init_seed,
        )?,
        MapArg::Linear => init_linear(ds.feature_dim(), a.dim, init_seed)?,
    };
    let model = EmbeddingModel::new(embedding, stats)?;
    let cfg = CgConfig {
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        cg_steps_per_batch: a.cg_steps,
        seed: a.seed.wrapping_add(3),
        patience: a.patience,
        k: a.k,
        ..Default::default()
    };
    let quiet = a.quiet;
    let trained = train(model, &ds, &split, state, loss_mode, &cfg, &mut |r| {
        if !quiet {
            eprintln!("{r}");
        }
    })?;

    let selected = trained.report.selected().copied();
    let val_err = selected.map_or(f64::NAN, |r| r.val_err);
    let file = ModelFile::new(
        trained.model,
        trained.exemplars,
        ds.class_count(),
        TrainingMeta {
            seed: a.seed,
            epochs: trained.report.epochs.len() as u32,
            final_val_error: val_err,
        },
    )?;
    file.save(&a.out)?;
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&report_json(&trained.report)).expect("plain JSON values");
        write_file(path, text.as_bytes())?;
    }
    emit(
        out,
        &format!(
            "model={}\nz={}\nepochs={}\nselected_epoch={}\nval_err={}\n",
            a.out.display(),
            file.z(),
            trained.report.epochs.len(),
            trained.report.selected_epoch,
            val_err
        ),
    )
}

fn check_dims(file: &ModelFile, ds: &Dataset) -> Result<()> {
    let expected = file.model.embedding.input_dim();
    if ds.feature_dim() != expected {
        return Err(Error::Dimension(format!(
            "model expects {expected} features, data has {}",
            ds.feature_dim()
        )));
    }
    Ok(())
}

pub fn cmd_embed(a: &EmbedArgs, out: &mut dyn Write) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let ds = a.data.source(Subset::Test).load()?;
    check_dims(&file, &ds)?;
    let y = file.model.embed_raw(ds.features())?;
    let h = y.ncols();
    let mut text = String::new();
    let header: Vec<String> = (1..=h).map(|j| format!("y{j}")).collect();
    text.push_str(&header.join(","));
    text.push_str(",label,is_exemplar\n");
    let mut push_row = |row: ndarray::ArrayView1<'_, f64>, label: usize, exemplar: bool| {
        for v in row {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{label},{}\n", u8::from(exemplar)));
    };
    for (row, &l) in y.rows().into_iter().zip(ds.labels()) {
        push_row(row, l, false);
    }
    if let Some(ex) = &file.exemplars {
        let ye = file.model.embed(ex.vectors.view())?;
        for (row, &l) in ye.rows().into_iter().zip(&ex.labels) {
            push_row(row, l, true);
        }
    }
    write_file(&a.out, text.as_bytes())?;
    emit(out, &format!("rows={}\nexemplars={}\nout={}\n", ds.len(), file.z(), a.out.display()))
}

pub fn cmd_plot(a: &PlotArgs, out: &mut dyn Write) -> Result<()> {
    let points = read_embedding_csv(&a.input)?;
    let svg = render_svg(&points, a.width, a.height);
    write_file(&a.out, svg.as_bytes())?;
    emit(out, &format!("points={}\nout={}\n", points.len(), a.out.display()))
}

pub fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let test = a.data.source(Subset::Test).load()?;
    check_dims(&file, &test)?;
    let classify = if a.parallel { knn_classify_parallel } else { knn_classify };
    let k = a.k.unwrap_or_else(|| default_k(file.z()));
    let queries = file.model.embed_raw(test.features())?;
    let predictions = match (&file.exemplars, &a.train_data) {
        (Some(ex), _) => {
            let refs = file.model.embed(ex.vectors.view())?;
            classify(refs.view(), &ex.labels, queries.view(), k)?
        }
        (None, Some(path)) => {
            let train = DataSource {
                path: path.clone(),
                subset: Subset::Train,
                label_column: a.data.label_column.clone(),
                has_header: !a.data.no_header,
            }
            .load()?;
            check_dims(&file, &train)?;
            let refs = file.model.embed_raw(train.features())?;
            classify(refs.view(), train.labels(), queries.view(), k)?
        }
        (None, None) => {
            return Err(Error::InvalidArgument(
                "model has no exemplars; pass --train-data for reference points".into(),
            ))
        }
    };
    let err = error_rate(&predictions, test.labels());
    emit(out, &format!("error={err}\nk={k}\nz={}\nn_test={}\n", file.z(), test.len()))
}

pub fn cmd_benchmark(a: &BenchmarkArgs, out: &mut dyn Write) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let exemplars = file
        .exemplars
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("benchmark needs a model with exemplars".into()))?;
    let test = a.data.source(Subset::Test).load()?;
    let train_src = DataSource {
        path: a.train_data.clone(),
        subset: Subset::Train,
        label_column: a.data.label_column.clone(),
        has_header: !a.data.no_header,
    };
    let train_ds = train_src.load()?;
    check_dims(&file, &test)?;
    check_dims(&file, &train_ds)?;
    let cfg = BenchmarkConfig {
        k_full: a.k_full,
        k_exemplar: a.k.unwrap_or_else(|| default_k(exemplars.len())),
        repeats: a.repeats,
        parallel: a.parallel,
    };
    let report = benchmark(&file.model, exemplars, &train_ds, &test, cfg)?;
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&report).expect("plain JSON values");
        write_file(path, text.as_bytes())?;
    }
    emit(out, &report.to_key_value())
}
