//! dcg: graph-to-sequence sketch modeling with drawing-order positional
//! encodings. Train, generate, heal, evaluate, interpolate, gradient-check.

mod artifacts;
mod config_file;

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dcg_core::checkpoint;
use dcg_core::classifier::train_classifier;
use dcg_core::config::{EvalConfig, ModelConfig, PeFlags, ScalePreset, TrainConfig};
use dcg_core::data::ndjson::LabeledSketch;
use dcg_core::data::{cache, parse_quickdraw_ndjson, rasterize, toy_dataset};
use dcg_core::eval::{evaluate_rec, evaluate_ret, heal, interpolate_latents, MetricsReport};
use dcg_core::model::SketchModel;
use dcg_core::pipeline;
use dcg_core::train::{loss_curve_csv, train, Dataset};

use config_file::RunConfig;

const EXIT_MISSING_CHECKPOINT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dcg",
    about = "Graph-to-sequence sketch model with drawing-order positional encodings",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input dataset: NDJSON file, DCS1 cache, or a directory holding one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (default: $DCG_OUT_DIR or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model checkpoint path.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Scale preset: paper | toy.
    #[arg(long)]
    scale: Option<ScalePreset>,
    /// Masking probability: 0, 0.1 or 0.3.
    #[arg(long)]
    mask: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Patch count M.
    #[arg(long)]
    patches: Option<usize>,
    /// Disable the absolute positional encoding.
    #[arg(long)]
    no_abs_pe: bool,
    /// Disable the relative positional encoding.
    #[arg(long)]
    no_rel_pe: bool,
    /// Ablation: let PEs enter the edge coefficients (softmaxed adjacency).
    #[arg(long)]
    pe_in_edges: bool,
    /// Export adjacency matrices as CSV next to the other artifacts.
    #[arg(long)]
    dump_graph: bool,
    /// Worker threads; 1 forces fully sequential work (results are
    /// bit-identical either way).
    #[arg(long)]
    threads: Option<usize>,
    /// Sampling temperature in [0, 1]; 0 is exact greedy decoding.
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse QuickDraw NDJSON into the binary dataset cache.
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write checkpoint + loss curve.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Encode inputs and regenerate them (controllable synthesis).
    Generate {
        #[command(flatten)]
        common: Common,
        /// Cap on the number of input sketches processed.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Corrupt inputs with masks and regenerate full sketches.
    Heal {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Compute Rec / Ret@k metrics and write metrics.json.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Decode linear interpolations between two sketches' codes.
    Interpolate {
        #[command(flatten)]
        common: Common,
        /// Interpolation frame count (>= 2).
        #[arg(long)]
        steps: Option<usize>,
        /// Two input sketch indices to interpolate between, e.g. --ids 0,1.
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<usize>>,
    },
    /// Run the end-to-end finite-difference gradient suite.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Write a deterministic synthetic dataset.
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Number of sketches.
        #[arg(long)]
        count: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig, String> {
    let mut rc = RunConfig::default();
    if let Some(path) = &common.config {
        let map = config_file::parse_config_file(path)?;
        rc.apply_file(&map)?;
    }
    if let Some(v) = &common.data {
        rc.data = Some(v.clone());
    }
    if let Some(v) = &common.out {
        rc.out = v.clone();
    }
    if let Some(v) = &common.ckpt {
        rc.ckpt = Some(v.clone());
    }
    if let Some(v) = common.scale {
        rc.scale = v;
        rc.scale_explicit = true;
    }
    if let Some(v) = common.mask {
        rc.mask = v;
    }
    if let Some(v) = common.seed {
        rc.seed = v;
    }
    if let Some(v) = common.epochs {
        rc.epochs = v;
    }
    if let Some(v) = common.batch {
        rc.batch = Some(v);
    }
    if let Some(v) = common.patches {
        rc.patches = Some(v);
    }
    if common.no_abs_pe {
        rc.use_abs_pe = false;
    }
    if common.no_rel_pe {
        rc.use_rel_pe = false;
    }
    if common.pe_in_edges {
        rc.pe_in_edges = true;
    }
    if common.dump_graph {
        rc.dump_graph = true;
    }
    if let Some(v) = common.threads {
        rc.threads = v;
    }
    if let Some(v) = common.temperature {
        rc.temperature = v;
    }
    rc.validate()?;
    Ok(rc)
}

fn model_config_from(rc: &RunConfig) -> ModelConfig {
    let mut cfg = rc.scale.model_config();
    if let Some(m) = rc.patches {
        cfg.patch_count = m;
    }
    cfg.flags = PeFlags {
        absolute_pe: rc.use_abs_pe,
        relative_pe: rc.use_rel_pe,
        pe_in_edges: rc.pe_in_edges,
    };
    cfg
}

/// Load sketches from NDJSON, a DCS1 cache, or a directory containing either.
fn load_sketches(path: &Path) -> Result<Vec<LabeledSketch>, String> {
    let file = resolve_data_file(path)?;
    let ext = file.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext == "dcs1" {
        let mut reader = BufReader::new(
            std::fs::File::open(&file).map_err(|e| format!("{}: {e}", file.display()))?,
        );
        return cache::read_cache(&mut reader).map_err(|e| e.to_string());
    }
    let reader = BufReader::new(
        std::fs::File::open(&file).map_err(|e| format!("{}: {e}", file.display()))?,
    );
    let (sketches, stats) = parse_quickdraw_ndjson(reader).map_err(|e| e.to_string())?;
    if stats.skipped_malformed + stats.skipped_empty > 0 {
        eprintln!(
            "warning: skipped {} malformed and {} empty lines",
            stats.skipped_malformed, stats.skipped_empty
        );
    }
    Ok(sketches)
}

fn resolve_data_file(path: &Path) -> Result<PathBuf, String> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    if path.is_dir() {
        for name in ["dataset.dcs1", "synthetic.ndjson"] {
            let candidate = path.join(name);
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
        // Fall back to the first .ndjson or .dcs1 entry, in name order.
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| format!("{}: {e}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|x| x.to_str()),
                    Some("ndjson") | Some("dcs1")
                )
            })
            .collect();
        entries.sort();
        if let Some(first) = entries.into_iter().next() {
            return Ok(first);
        }
        return Err(format!("no .ndjson or .dcs1 file under {}", path.display()));
    }
    Err(format!("data path {} does not exist", path.display()))
}

fn require_data(rc: &RunConfig) -> Result<Vec<LabeledSketch>, String> {
    let path = rc
        .data
        .as_deref()
        .ok_or_else(|| "--data is required for this command".to_string())?;
    load_sketches(path)
}

/// Load the checkpointed model; exit code 3 when it is absent.
fn require_model(rc: &RunConfig) -> Result<SketchModel<f32>, ExitCode> {
    let path = match rc.ckpt.as_deref() {
        Some(p) => p,
        None => {
            eprintln!("error: --ckpt is required for inference commands");
            return Err(ExitCode::from(EXIT_MISSING_CHECKPOINT));
        }
    };
    if !path.is_file() {
        eprintln!("error: checkpoint {} does not exist", path.display());
        return Err(ExitCode::from(EXIT_MISSING_CHECKPOINT));
    }
    let expected = rc.scale_explicit.then(|| model_config_from(rc));
    match checkpoint::load_model::<f32>(path, expected.as_ref()) {
        Ok(model) => Ok(model),
        Err(e) => {
            eprintln!("error: cannot load checkpoint: {e}");
            Err(ExitCode::FAILURE)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::SynthData { common, count } => {
            let mut rc = resolve(&common)?;
            if let Some(c) = count {
                rc.count = c;
            }
            rc.persist().map_err(|e| e.to_string())?;
            let sketches: Vec<(_, Option<String>)> = toy_dataset(rc.count, rc.seed)
                .into_iter()
                .map(|(seq, category)| (seq, Some(category)))
                .collect();
            let path = rc.out.join("synthetic.ndjson");
            artifacts::write_sequences_ndjson(&path, &sketches)?;
            println!("wrote {} sketches to {}", sketches.len(), path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ingest { common } => {
            let rc = resolve(&common)?;
            rc.persist().map_err(|e| e.to_string())?;
            let sketches = require_data(&rc)?;
            let path = rc.out.join("dataset.dcs1");
            let mut file = std::io::BufWriter::new(
                std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?,
            );
            cache::write_cache(&mut file, &sketches).map_err(|e| e.to_string())?;
            println!("cached {} sketches to {}", sketches.len(), path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { common } => {
            let rc = resolve(&common)?;
            rc.persist().map_err(|e| e.to_string())?;
            let raw = require_data(&rc)?;
            let cfg = model_config_from(&rc);
            let dataset = Dataset::prepare(raw, &cfg).map_err(|e| e.to_string())?;
            if dataset.skipped_too_long > 0 {
                eprintln!(
                    "warning: dropped {} sketches longer than the configured maximum",
                    dataset.skipped_too_long
                );
            }
            let mut model = SketchModel::<f32>::init(cfg, rc.seed).map_err(|e| e.to_string())?;
            let mut tc = TrainConfig::new(rc.scale);
            tc.epochs = rc.epochs;
            tc.seed = rc.seed;
            tc.threads = rc.threads;
            if let Some(b) = rc.batch {
                tc.batch_size = b;
            }
            let out = train(&mut model, &dataset, &tc).map_err(|e| e.to_string())?;
            std::fs::write(
                rc.out.join("loss_curve.csv"),
                loss_curve_csv(&out.loss_curve),
            )
            .map_err(|e| e.to_string())?;
            let ckpt_path = rc
                .ckpt
                .clone()
                .unwrap_or_else(|| rc.out.join("checkpoint.ckpt"));
            checkpoint::save_model(&model, &ckpt_path).map_err(|e| e.to_string())?;
            let final_nll = out.loss_curve.last().map(|p| p.nll);
            println!(
                "trained {} steps ({} skipped), final batch NLL {:?}, checkpoint {}",
                out.loss_curve.len(),
                out.skipped_steps,
                final_nll,
                ckpt_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate { common, count } => {
            let rc = resolve(&common)?;
            let model = match require_model(&rc) {
                Ok(m) => m,
                Err(code) => return Ok(code),
            };
            rc.persist().map_err(|e| e.to_string())?;
            let raw = require_data(&rc)?;
            let dataset = Dataset::prepare(raw, model.config()).map_err(|e| e.to_string())?;
            let cap = count.unwrap_or(dataset.len()).min(dataset.len());
            let mut generated = Vec::new();
            for (id, s) in dataset.sketches.iter().take(cap).enumerate() {
                let input = pipeline::prepare_input::<f32>(&s.seq, model.config(), None);
                let (code, graph) = model.encode(&input.images).map_err(|e| e.to_string())?;
                let mut rng = rand_seed(rc.seed, id as u64);
                let seq = model
                    .generate(&code, rc.temperature, &mut rng)
                    .map_err(|e| e.to_string())?;
                artifacts::write_png(&rc.out.join(format!("orig_{id:03}.png")), &input.canvas)?;
                artifacts::write_png(
                    &rc.out.join(format!("gen_{id:03}.png")),
                    &rasterize(&seq.centered(), model.config().pen_thickness),
                )?;
                if rc.dump_graph {
                    artifacts::dump_graph_csvs(&rc.out, &format!("{id:03}"), &graph)?;
                }
                generated.push((seq, s.category.clone()));
            }
            artifacts::write_sequences_ndjson(&rc.out.join("generated.ndjson"), &generated)?;
            println!("regenerated {cap} sketches into {}", rc.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Heal { common, count } => {
            let rc = resolve(&common)?;
            let model = match require_model(&rc) {
                Ok(m) => m,
                Err(code) => return Ok(code),
            };
            rc.persist().map_err(|e| e.to_string())?;
            let raw = require_data(&rc)?;
            let dataset = Dataset::prepare(raw, model.config()).map_err(|e| e.to_string())?;
            let cap = count.unwrap_or(dataset.len()).min(dataset.len());
            let mut healed_all = Vec::new();
            for (id, s) in dataset.sketches.iter().take(cap).enumerate() {
                let healed = heal(
                    &model,
                    &s.seq,
                    rc.mask,
                    dcg_core::config::derive_seed(rc.seed, "heal", id as u64),
                    rc.temperature,
                )
                .map_err(|e| e.to_string())?;
                artifacts::write_png(
                    &rc.out.join(format!("masked_{id:03}.png")),
                    &healed.masked_canvas,
                )?;
                artifacts::write_png(
                    &rc.out.join(format!("healed_{id:03}.png")),
                    &rasterize(&healed.healed.centered(), model.config().pen_thickness),
                )?;
                if rc.dump_graph {
                    artifacts::dump_graph_csvs(&rc.out, &format!("{id:03}"), &healed.graph)?;
                }
                healed_all.push((healed.healed, s.category.clone()));
            }
            artifacts::write_sequences_ndjson(&rc.out.join("healed.ndjson"), &healed_all)?;
            println!("healed {cap} sketches into {}", rc.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { common } => {
            let rc = resolve(&common)?;
            let model = match require_model(&rc) {
                Ok(m) => m,
                Err(code) => return Ok(code),
            };
            rc.persist().map_err(|e| e.to_string())?;
            let raw = require_data(&rc)?;
            let dataset = Dataset::prepare(raw, model.config()).map_err(|e| e.to_string())?;
            let ec = EvalConfig {
                mask_prob: rc.mask,
                seed: rc.seed,
                temperature: rc.temperature,
                threads: rc.threads,
                ..Default::default()
            };
            let ret = evaluate_ret(&model, &dataset, &ec).map_err(|e| e.to_string())?;
            let rec = if dataset.categories.len() >= 2 {
                let clf = train_classifier(&dataset, rc.seed, model.config().pen_thickness)
                    .map_err(|e| e.to_string())?;
                Some(evaluate_rec(&model, &dataset, &clf, &ec).map_err(|e| e.to_string())?)
            } else {
                None
            };
            let report =
                MetricsReport::build(model.config(), &ec, &ret, rec).map_err(|e| e.to_string())?;
            let json = report.to_json().map_err(|e| e.to_string())?;
            std::fs::write(rc.out.join("metrics.json"), &json).map_err(|e| e.to_string())?;
            if rc.dump_graph {
                for (id, s) in dataset.sketches.iter().enumerate() {
                    let input = pipeline::prepare_input::<f32>(&s.seq, model.config(), None);
                    let (_, graph) = model.encode(&input.images).map_err(|e| e.to_string())?;
                    artifacts::dump_graph_csvs(&rc.out, &format!("{id:03}"), &graph)?;
                }
            }
            println!("{json}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Interpolate { common, steps, ids } => {
            let rc = resolve(&common)?;
            let model = match require_model(&rc) {
                Ok(m) => m,
                Err(code) => return Ok(code),
            };
            rc.persist().map_err(|e| e.to_string())?;
            let raw = require_data(&rc)?;
            let dataset = Dataset::prepare(raw, model.config()).map_err(|e| e.to_string())?;
            let steps = steps.unwrap_or(rc.steps);
            let (ia, ib) = match ids.as_deref() {
                Some([a, b]) => (*a, *b),
                Some(other) => {
                    return Err(format!("--ids expects exactly two indices, got {other:?}"));
                }
                None => (0, 1.min(dataset.len() - 1)),
            };
            if ia >= dataset.len() || ib >= dataset.len() {
                return Err(format!(
                    "--ids {ia},{ib} out of range for {} sketches",
                    dataset.len()
                ));
            }
            let encode = |idx: usize| -> Result<_, String> {
                let input = pipeline::prepare_input::<f32>(
                    &dataset.sketches[idx].seq,
                    model.config(),
                    None,
                );
                Ok(model.encode(&input.images).map_err(|e| e.to_string())?.0)
            };
            let code_a = encode(ia)?;
            let code_b = encode(ib)?;
            let frames =
                interpolate_latents(&model, &code_a, &code_b, steps, rc.temperature, rc.seed)
                    .map_err(|e| e.to_string())?;
            let mut seqs = Vec::new();
            for (i, (_t, seq)) in frames.into_iter().enumerate() {
                artifacts::write_png(
                    &rc.out.join(format!("interp_{i:02}.png")),
                    &rasterize(&seq.centered(), model.config().pen_thickness),
                )?;
                seqs.push((seq, None));
            }
            artifacts::write_sequences_ndjson(&rc.out.join("interpolated.ndjson"), &seqs)?;
            println!("wrote {steps} interpolation frames into {}", rc.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { common } => {
            let rc = resolve(&common)?;
            rc.persist().map_err(|e| e.to_string())?;
            let report = dcg_core::gradcheck::run_gradcheck(rc.seed).map_err(|e| e.to_string())?;
            let rendered = report.render();
            std::fs::write(rc.out.join("gradcheck.txt"), &rendered).map_err(|e| e.to_string())?;
            print!("{rendered}");
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn rand_seed(seed: u64, item: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(dcg_core::config::derive_seed(seed, "gen", item))
}
