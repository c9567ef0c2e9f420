//! Command-line front end: training, mapping, benchmark metrics, color
//! transfer and domain adaptation, with JSON run reports and plot-ready CSV.
//!
//! Exit codes: 0 on success (a non-converged run is still a success and is
//! flagged in the report), 2 on usage or input errors, 3 on internal errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sdot::adapt::{domain_adapt, domain_adapt_partial, sample_indices, DomainAdaptOptions};
use sdot::checkpoint::{load_checkpoint, save_checkpoint};
use sdot::color::{color_transfer, ColorTransferOptions, Image};
use sdot::error::Error;
use sdot::rng::derive_seed;
use sdot::solver::{predict_heights, train_height_net, Scheme, TrainConfig};
use sdot::synth::{benchmark_by_name, make_da_dataset, sample_mixture, DaConfig, LabeledPoints};
use sdot::volume::VolumeConfig;
use sdot::{map_points, DiscreteTarget, SourceSpec};

#[derive(Parser)]
#[command(name = "sdot", version, about = "Semi-discrete optimal transport solver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a height network and write checkpoint, heights and report.
    Train(TrainCmd),
    /// Map query points through a trained checkpoint.
    Map(MapCmd),
    /// Train on a synthetic benchmark and report mode-collapse metrics.
    Metrics(MetricsCmd),
    /// Transfer the color palette of one image onto another.
    Color(ColorCmd),
    /// Domain adaptation with label-transfer accuracy.
    Da(DaCmd),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Global,
    Batched,
    Auto,
}

impl From<SchemeArg> for Scheme {
    fn from(v: SchemeArg) -> Scheme {
        match v {
            SchemeArg::Global => Scheme::Global,
            SchemeArg::Batched => Scheme::Batched,
            SchemeArg::Auto => Scheme::Auto,
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Root random seed (echoed in every report).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gradient-norm tolerance for termination.
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Source samples per volume pass and atom batch.
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    /// Atoms per batch under the batched scheme.
    #[arg(long = "batch-size", default_value_t = 512)]
    batch_size: usize,
    /// Batch count override; when set, the batch size is derived from it.
    #[arg(long)]
    batches: Option<usize>,
    /// Volume competition scheme.
    #[arg(long, value_enum, default_value_t = SchemeArg::Auto)]
    scheme: SchemeArg,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    /// Hidden widths of the height network.
    #[arg(long, default_value = "512,512,512", value_parser = parse_hidden)]
    hidden: HiddenWidths,
    /// Iteration budget.
    #[arg(long = "max-iters", default_value_t = 500)]
    max_iters: u64,
    /// Disable batch norm (ablation).
    #[arg(long = "no-batch-norm")]
    no_batch_norm: bool,
}

#[derive(Clone, Copy)]
struct HiddenWidths([usize; 3]);

fn parse_hidden(s: &str) -> Result<HiddenWidths, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match <[usize; 3]>::try_from(parts) {
        Ok(w) if !w.contains(&0) => Ok(HiddenWidths(w)),
        _ => Err("expected three positive widths, e.g. 512,512,512".into()),
    }
}

impl SolverArgs {
    /// Resolve to a TrainConfig; `n_atoms` is needed when --batches is given.
    fn to_config(&self, n_atoms: Option<usize>) -> Result<TrainConfig, Error> {
        let batch_size = match (self.batches, n_atoms) {
            (Some(b), Some(n)) => n.div_ceil(b.max(1)),
            (Some(_), None) => {
                return Err(Error::InvalidInput(
                    "--batches needs a known atom count; use --batch-size instead".into(),
                ))
            }
            (None, _) => self.batch_size,
        };
        let cfg = TrainConfig {
            delta: self.delta,
            max_iters: self.max_iters,
            volume: VolumeConfig {
                samples_per_batch: self.samples,
                atom_batches: 1,
                atom_batch_size: batch_size,
                seed: 0,
            },
            opt: sdot::AdamParams::with_lr(self.lr),
            scheme: self.scheme.into(),
            hidden: self.hidden.0,
            bn_enabled: !self.no_batch_norm,
            ..TrainConfig::default()
        }
        .with_seed(self.seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DatasetArgs {
    /// Named synthetic dataset.
    #[arg(long, conflicts_with = "atoms")]
    dataset: Option<String>,
    /// Atom CSV file (optional final mass column, optional header).
    #[arg(long)]
    atoms: Option<PathBuf>,
    /// Treat the final CSV column as masses.
    #[arg(long = "mass-column", requires = "atoms")]
    mass_column: bool,
    /// Atom dimension hint for CSV files.
    #[arg(long, requires = "atoms")]
    dim: Option<usize>,
    /// Source cube bounds `lo,hi` for CSV atoms (default: inflated bounding box).
    #[arg(long = "box", value_parser = parse_box, requires = "atoms")]
    source_box: Option<(f64, f64)>,
}

fn parse_box(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected lo,hi".into());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| "bad lower bound")?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| "bad upper bound")?;
    if lo >= hi {
        return Err("box needs lo < hi".into());
    }
    Ok((lo, hi))
}

struct Problem {
    name: String,
    target: DiscreteTarget,
    source: SourceSpec,
}

impl DatasetArgs {
    fn load(&self) -> Result<Problem, Error> {
        match (&self.dataset, &self.atoms) {
            (Some(name), None) => {
                let bench = benchmark_by_name(name)?;
                Ok(Problem {
                    name: bench.name.to_string(),
                    target: bench.target,
                    source: bench.source,
                })
            }
            (None, Some(path)) => {
                let dim = if self.mass_column {
                    // Force the mass interpretation by inferring dim from columns.
                    None
                } else {
                    self.dim
                };
                let mut target = DiscreteTarget::from_csv(path, dim)?;
                if self.mass_column && target.masses().iter().all(|m| (m - target.masses()[0]).abs() < 1e-15) {
                    // No header named the column; reparse with an explicit dim.
                    let probe = DiscreteTarget::from_csv(path, Some(target.dim() - 1));
                    if let Ok(t) = probe {
                        target = t;
                    }
                }
                let source = match self.source_box {
                    Some((lo, hi)) => SourceSpec::uniform_cube(target.dim(), lo, hi)?,
                    None => inflated_bbox(&target)?,
                };
                Ok(Problem {
                    name: path.display().to_string(),
                    target,
                    source,
                })
            }
            _ => Err(Error::InvalidInput(
                "exactly one of --dataset or --atoms is required".into(),
            )),
        }
    }
}

/// Uniform box over the atoms' bounding box, inflated by a quarter of the
/// extent per side (a full unit when the extent is degenerate).
fn inflated_bbox(target: &DiscreteTarget) -> Result<SourceSpec, Error> {
    let d = target.dim();
    let mut low = vec![f64::INFINITY; d];
    let mut high = vec![f64::NEG_INFINITY; d];
    for i in 0..target.len() {
        for (c, v) in target.atom(i).iter().enumerate() {
            low[c] = low[c].min(*v);
            high[c] = high[c].max(*v);
        }
    }
    for c in 0..d {
        let extent = high[c] - low[c];
        let pad = if extent > 0.0 { 0.25 * extent } else { 1.0 };
        low[c] -= pad;
        high[c] += pad;
    }
    SourceSpec::uniform_box(low, high)
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Fraction of atoms trained on; the rest get predicted heights.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct MapCmd {
    /// Trained checkpoint JSON.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Atom CSV the map targets.
    #[arg(long)]
    atoms: PathBuf,
    /// Query point CSV (coordinates only).
    #[arg(long)]
    queries: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsCmd {
    /// Synthetic dataset name (ring or grid).
    #[arg(long, default_value = "ring")]
    dataset: String,
    /// Fraction of atoms trained on.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    /// Generated sample count.
    #[arg(long = "gen-count", default_value_t = 10_000)]
    gen_count: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ColorCmd {
    /// Source image (recolored copy is written to --out).
    #[arg(long)]
    source: PathBuf,
    /// Target image providing the palette.
    #[arg(long)]
    target: PathBuf,
    /// Output image path.
    #[arg(long)]
    out: PathBuf,
    /// Palette size (distinct target colors).
    #[arg(long = "palette-size", default_value_t = 512)]
    palette_size: usize,
    #[command(flatten)]
    solver: SolverArgs,
    /// Optional JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DaCmd {
    /// Train on this fraction of target atoms and also score the full
    /// predicted map. Omit to train on everything.
    #[arg(long)]
    ratio: Option<f64>,
    /// Points per domain.
    #[arg(long, default_value_t = 4000)]
    count: usize,
    /// Mixture constants JSON (defaults to the built-in v1 constants).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(c) => cmd_train(c),
        Cmd::Map(c) => cmd_map(c),
        Cmd::Metrics(c) => cmd_metrics(c),
        Cmd::Color(c) => cmd_color(c),
        Cmd::Da(c) => cmd_da(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::InvalidInput(_) | Error::Io(_) => ExitCode::from(2),
                Error::InvalidState(_) | Error::Internal(_) => ExitCode::from(3),
            }
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn meta_block() -> serde_json::Value {
    let ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    json!({ "timestamp_unix_ms": ms })
}

fn heights_csv(heights: &[f64]) -> String {
    let mut out = String::from("index,height\n");
    for (i, h) in heights.iter().enumerate() {
        out.push_str(&format!("{i},{h}\n"));
    }
    out
}

fn split_for_ratio(n: usize, ratio: f64, seed: u64) -> Result<Vec<usize>, Error> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidInput(format!("--ratio must lie in (0, 1], got {ratio}")));
    }
    let k = ((ratio * n as f64).round() as usize).clamp(1, n);
    Ok(sample_indices(n, k, derive_seed(seed, 0x7a7105)))
}

fn cmd_train(cmd: TrainCmd) -> Result<(), Error> {
    let problem = cmd.dataset.load()?;
    let n = problem.target.len();
    let cfg = cmd.solver.to_config(Some(n))?;
    std::fs::create_dir_all(&cmd.out)?;

    let trained_idx = split_for_ratio(n, cmd.ratio, cmd.solver.seed)?;
    let trained_target = if trained_idx.len() == n {
        problem.target.clone()
    } else {
        problem.target.subset(&trained_idx)?
    };

    let outcome = train_height_net(&trained_target, &problem.source, &cfg)?;
    let predict_started = Instant::now();
    let heights = predict_heights(&outcome.net, &problem.target)?;
    let predict_seconds = predict_started.elapsed().as_secs_f64();

    save_checkpoint(&outcome.net, None, cmd.out.join("checkpoint.json"))?;
    std::fs::write(cmd.out.join("heights.csv"), heights_csv(heights.values()))?;

    let report = json!({
        "command": "train",
        "dataset": problem.name,
        "config": serde_json::to_value(&cfg).map_err(|e| Error::Internal(e.to_string()))?,
        "ratio": cmd.ratio,
        "seed": cmd.solver.seed,
        "atoms_total": n,
        "atoms_trained": trained_idx.len(),
        "result": {
            "converged": outcome.converged,
            "iterations": outcome.iterations,
            "final_grad_norm": outcome.final_grad_norm,
        },
        "timing": {
            "train_seconds": outcome.wall_seconds,
            "predict_seconds": predict_seconds,
            "meta": meta_block(),
        },
    });
    write_json(&cmd.out.join("report.json"), &report)
}

fn read_query_points(path: &Path, dim: usize) -> Result<Vec<f64>, Error> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let (rows, _) = sdot::target::parse_numeric_csv(std::io::BufReader::new(file))?;
    let mut out = Vec::with_capacity(rows.len() * dim);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::InvalidInput(format!(
                "query row {} has {} columns, expected {dim}",
                i + 1,
                row.len()
            )));
        }
        out.extend_from_slice(row);
    }
    Ok(out)
}

fn cmd_map(cmd: MapCmd) -> Result<(), Error> {
    let (net, _) = load_checkpoint(&cmd.checkpoint)?;
    let target = DiscreteTarget::from_csv(&cmd.atoms, Some(net.dim()))
        .or_else(|_| DiscreteTarget::from_csv(&cmd.atoms, None))?;
    let heights = predict_heights(&net, &target)?;
    let queries = read_query_points(&cmd.queries, target.dim())?;
    let (mapped, winners) = map_points(&queries, &target, &heights)?;

    let mut out = String::from("winner");
    for c in 0..target.dim() {
        out.push_str(&format!(",y{c}"));
    }
    out.push('\n');
    for (w, point) in winners.iter().zip(mapped.chunks_exact(target.dim())) {
        out.push_str(&w.to_string());
        for v in point {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(&cmd.out, out)?;
    Ok(())
}

fn cmd_metrics(cmd: MetricsCmd) -> Result<(), Error> {
    let bench = benchmark_by_name(&cmd.dataset)?;
    let n = bench.target.len();
    let cfg = cmd.solver.to_config(Some(n))?;
    std::fs::create_dir_all(&cmd.out)?;

    let trained_idx = split_for_ratio(n, cmd.ratio, cmd.solver.seed)?;
    let trained_target = if trained_idx.len() == n {
        bench.target.clone()
    } else {
        bench.target.subset(&trained_idx)?
    };
    let outcome = train_height_net(&trained_target, &bench.source, &cfg)?;
    let heights = predict_heights(&outcome.net, &bench.target)?;

    // Generate: draw from the source and push through the map.
    let gen_seed = derive_seed(cmd.solver.seed, 0x9e2);
    let noise = bench
        .source
        .sample(cmd.gen_count, &mut sdot::rng::stream_rng(gen_seed, 0));
    let (generated, _) = map_points(&noise, &bench.target, &heights)?;
    let metrics = sdot::synth::evaluate_modes(&generated, &bench.spec)?;

    // Plot data: generated next to a same-sized draw from the real mixture.
    let (real, _) = sample_mixture(&bench.spec, cmd.gen_count, derive_seed(cmd.solver.seed, 0x4ea1));
    let mut scatter = String::from("x,y,kind\n");
    for p in generated.chunks_exact(2) {
        scatter.push_str(&format!("{},{},generated\n", p[0], p[1]));
    }
    for p in real.chunks_exact(2) {
        scatter.push_str(&format!("{},{},real\n", p[0], p[1]));
    }
    std::fs::write(cmd.out.join("scatter.csv"), scatter)?;

    let report = json!({
        "command": "metrics",
        "dataset": bench.name,
        "config": serde_json::to_value(&cfg).map_err(|e| Error::Internal(e.to_string()))?,
        "ratio": cmd.ratio,
        "seed": cmd.solver.seed,
        "gen_count": cmd.gen_count,
        "metrics": {
            "modes_captured": metrics.modes_captured,
            "high_quality_fraction": metrics.high_quality_fraction,
            "reverse_kl": metrics.reverse_kl,
        },
        "result": {
            "converged": outcome.converged,
            "iterations": outcome.iterations,
            "final_grad_norm": outcome.final_grad_norm,
        },
        "timing": { "train_seconds": outcome.wall_seconds, "meta": meta_block() },
    });
    write_json(&cmd.out.join("report.json"), &report)
}

fn read_image(path: &Path) -> Result<Image, Error> {
    if path.extension().and_then(|e| e.to_str()) == Some("ppm") {
        Image::read_ppm(path)
    } else {
        let img = image::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
            .to_rgb8();
        Image::new(img.width() as usize, img.height() as usize, img.into_raw())
    }
}

fn write_image(img: &Image, path: &Path) -> Result<(), Error> {
    if path.extension().and_then(|e| e.to_str()) == Some("ppm") {
        img.write_ppm(path)
    } else {
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
                .ok_or_else(|| Error::Internal("image buffer size mismatch".into()))?;
        buf.save(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

fn cmd_color(cmd: ColorCmd) -> Result<(), Error> {
    let source = read_image(&cmd.source)?;
    let target = read_image(&cmd.target)?;
    let mut cfg = cmd.solver.to_config(None)?;
    if cmd.solver.lr == 0.005 {
        // Color runs default to the hotter rate unless the user overrode it.
        cfg.opt.lr = 0.05;
    }
    let opts = ColorTransferOptions {
        palette_size: cmd.palette_size,
        train: cfg.clone(),
        palette_seed: derive_seed(cmd.solver.seed, 0xc0105),
    };
    let out = color_transfer(&source, &target, &opts)?;
    if let Some(parent) = cmd.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_image(&out.image, &cmd.out)?;
    if let Some(report_path) = &cmd.report {
        let report = json!({
            "command": "color",
            "config": serde_json::to_value(&cfg).map_err(|e| Error::Internal(e.to_string()))?,
            "seed": cmd.solver.seed,
            "palette_size_requested": cmd.palette_size,
            "palette_size_actual": out.palette.len(),
            "histogram_l1_to_masses": out.histogram_l1_to_masses(),
            "result": {
                "converged": out.train.converged,
                "iterations": out.train.iterations,
                "final_grad_norm": out.train.final_grad_norm,
            },
            "timing": { "train_seconds": out.train.wall_seconds, "meta": meta_block() },
        });
        write_json(report_path, &report)?;
    }
    Ok(())
}

fn cmd_da(cmd: DaCmd) -> Result<(), Error> {
    let da_cfg: DaConfig = match &cmd.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Io(format!("bad DA config: {e}")))?
        }
        None => DaConfig::default(),
    };
    let cfg = cmd.solver.to_config(Some(cmd.count))?;
    std::fs::create_dir_all(&cmd.out)?;
    let (source, target) = make_da_dataset(&da_cfg, cmd.count, cmd.solver.seed)?;
    let opts = DomainAdaptOptions {
        train: cfg.clone(),
        subset_seed: derive_seed(cmd.solver.seed, 0xda7a),
    };

    let report = match cmd.ratio {
        None => {
            let out = domain_adapt(&source, &target, &opts)?;
            let mapped = LabeledPoints {
                points: out.mapped_points.clone(),
                labels: out.transferred_labels.clone(),
            };
            let mut buf = Vec::new();
            mapped.write_csv(&mut buf)?;
            std::fs::write(cmd.out.join("mapped.csv"), buf)?;
            json!({
                "command": "da",
                "config": serde_json::to_value(&cfg).map_err(|e| Error::Internal(e.to_string()))?,
                "da_config": serde_json::to_value(&da_cfg).map_err(|e| Error::Internal(e.to_string()))?,
                "seed": cmd.solver.seed,
                "count": cmd.count,
                "accuracy": out.accuracy,
                "result": {
                    "converged": out.train.converged,
                    "iterations": out.train.iterations,
                    "final_grad_norm": out.train.final_grad_norm,
                },
                "timing": { "train_seconds": out.train.wall_seconds, "meta": meta_block() },
            })
        }
        Some(ratio) => {
            let out = domain_adapt_partial(&source, &target, ratio, &opts)?;
            json!({
                "command": "da",
                "config": serde_json::to_value(&cfg).map_err(|e| Error::Internal(e.to_string()))?,
                "da_config": serde_json::to_value(&da_cfg).map_err(|e| Error::Internal(e.to_string()))?,
                "seed": cmd.solver.seed,
                "count": cmd.count,
                "ratio": ratio,
                "part_data_accuracy": out.accuracy_part,
                "all_data_accuracy": out.accuracy_all,
                "atoms_trained": out.trained_indices.len(),
                "result": {
                    "converged": out.train.converged,
                    "iterations": out.train.iterations,
                    "final_grad_norm": out.train.final_grad_norm,
                },
                "timing": { "train_seconds": out.train.wall_seconds, "meta": meta_block() },
            })
        }
    };
    write_json(&cmd.out.join("report.json"), &report)
}
