use std::collections::HashMap;
use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use splatloc::config::Config;
use splatloc::dataset::{frame_name, load_queries, write_color_png, Dataset};
use splatloc::eval::{read_frames_csv, write_frames_csv, EvalReport};
use splatloc::landmarks::Selection;
use splatloc::localize::parse_pairs;
use splatloc::mapper::reconstruct;
use splatloc::model::{load_model, save_model};
use splatloc::pipeline::{
    choose_landmarks, distill_scene, localize_queries, reference_frames, render_quality, SelectionMethod,
};
use splatloc::render::render;
use splatloc::synth::generate_dataset;

type Result<T> = std::result::Result<T, Box<dyn Error>>;

/// Gaussian-splatting mapping and visual localization.
#[derive(Parser)]
#[command(name = "splatloc", version)]
struct Cli {
    /// Overrides every stage's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML configuration; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic room dataset (training frames plus queries/).
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a Gaussian map from a dataset directory.
    Reconstruct {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Multiplies every iteration count of the schedule.
        #[arg(long)]
        iters_scale: Option<f64>,
    },
    /// Fit the descriptor field from the dataset's feature maps.
    Distill {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to overwriting --model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score key primitives and pick landmarks (written as JSON).
    SelectLandmarks {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Localize query frames; writes per-frame results as CSV.
    Localize {
        #[command(flatten)]
        io: LocalizeArgs,
    },
    /// Render the map at every training pose.
    Render {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Directory for rendered PNGs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize localization results (and rendering quality when a model
    /// and dataset are given) as JSON.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, requires = "dataset")]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Landmark JSON from select-landmarks; all key primitives when absent.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Training dataset, used as the retrieval database.
    #[arg(long)]
    dataset: PathBuf,
    /// Query directory; defaults to <dataset>/queries.
    #[arg(long)]
    query_dir: Option<PathBuf>,
    /// "query reference" pairs overriding retrieval.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    topk: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Saliency,
    Uniform,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        config = config.with_seed(s);
    }
    let clock = Instant::now();
    match cli.command {
        Command::Synth { out } => {
            let summary = generate_dataset(&config.synth, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Reconstruct { dataset, out, iters_scale } => {
            let ds = Dataset::load(&dataset)?;
            let mut rc = config.reconstruct.clone();
            if let Some(f) = iters_scale {
                rc = rc.scaled(f);
            }
            let scene = reconstruct(&ds.frames, &rc)?;
            let size = save_model(&scene, &out)?;
            println!(
                "{} primitives ({} key), {} bytes, {:.1}s",
                scene.len(),
                scene.key_indices().len(),
                size.total,
                clock.elapsed().as_secs_f64()
            );
        }
        Command::Distill { model, dataset, out } => {
            let ds = Dataset::load(&dataset)?;
            let mut scene = load_model(&model)?;
            let report = distill_scene(&mut scene, &ds.frames, &config)?;
            let size = save_model(&scene, out.as_ref().unwrap_or(&model))?;
            println!(
                "mean cosine {:.4} on {} surface samples; field {} bytes, {:.1}s",
                report.log.final_mean_cos,
                report.surface_samples,
                size.field,
                clock.elapsed().as_secs_f64()
            );
        }
        Command::SelectLandmarks { model, dataset, out, count, method } => {
            let ds = Dataset::load(&dataset)?;
            let scene = load_model(&model)?;
            let mut lc = config.landmarks.clone();
            if let Some(n) = count {
                lc.count = n;
            }
            if let Some(m) = method {
                lc.method = match m {
                    Method::Saliency => SelectionMethod::Saliency,
                    Method::Uniform => SelectionMethod::Uniform,
                };
            }
            let sel = choose_landmarks(&scene, &ds.frames, &lc)?;
            fs::write(&out, serde_json::to_string(&sel)?)?;
            println!("{} landmarks, final radius {:.4} m", sel.indices.len(), sel.final_radius);
        }
        Command::Localize { io } => localize_cmd(io, &mut config)?,
        Command::Render { model, dataset, out } => {
            let ds = Dataset::load(&dataset)?;
            let scene = load_model(&model)?;
            fs::create_dir_all(&out)?;
            for (kf, &i) in ds.frames.iter().zip(&ds.indices) {
                let maps = render(&scene, &kf.pose, &kf.intrinsics);
                write_color_png(&out.join(format!("{}.png", frame_name(i))), &maps.color)?;
            }
            let names: Vec<String> = ds.indices.iter().map(|&i| frame_name(i)).collect();
            let report = EvalReport::new(vec![], render_quality(&scene, &ds.frames, &names)?, None);
            println!(
                "{} views, mean PSNR {:.2} dB, mean SSIM {:.4}",
                report.views.len(),
                report.mean_psnr.unwrap_or(f64::NAN),
                report.mean_ssim.unwrap_or(f64::NAN)
            );
        }
        Command::Eval { results, model, dataset, out } => {
            let frames = read_frames_csv(&results)?;
            let (views, bytes) = match (model, dataset) {
                (Some(m), Some(d)) => {
                    let ds = Dataset::load(&d)?;
                    let scene = load_model(&m)?;
                    let names: Vec<String> = ds.indices.iter().map(|&i| frame_name(i)).collect();
                    (render_quality(&scene, &ds.frames, &names)?, Some(fs::metadata(&m)?.len()))
                }
                _ => (vec![], None),
            };
            let json = serde_json::to_string_pretty(&EvalReport::new(frames, views, bytes))?;
            match out {
                Some(p) => fs::write(p, json)?,
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

fn localize_cmd(io: LocalizeArgs, config: &mut Config) -> Result<()> {
    if let Some(k) = io.topk {
        config.localize.top_k = k;
    }
    let ds = Dataset::load(&io.dataset)?;
    let scene = load_model(&io.model)?;
    let landmarks = match &io.landmarks {
        Some(p) => serde_json::from_str::<Selection>(&fs::read_to_string(p)?)?.indices,
        None => scene.key_indices(),
    };
    let queries = load_queries(&io.query_dir.clone().unwrap_or_else(|| io.dataset.join("queries")))?;
    let pairs = io.pairs.as_deref().map(read_pairs).transpose()?;
    // Pair files name reference frames by dataset index; map to positions.
    let position: HashMap<usize, usize> = ds.indices.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let pairs = pairs.map(|m| {
        m.into_iter()
            .filter_map(|(q, r)| position.get(&r).map(|&p| (q, p)))
            .collect::<HashMap<_, _>>()
    });
    let db = reference_frames(&ds.frames);
    let results = localize_queries(&scene, &landmarks, &db, &queries, pairs.as_ref(), config);
    let frames: Vec<_> = results.into_iter().map(|r| r.0).collect();
    write_frames_csv(&io.out, &frames)?;
    let report = EvalReport::new(frames, vec![], None);
    println!(
        "{} queries, median dt {} cm, median dr {} deg, failure rate {:.1}%",
        report.frames.len(),
        report.median_dt_cm.map_or("-".into(), |v| format!("{v:.3}")),
        report.median_dr_deg.map_or("-".into(), |v| format!("{v:.3}")),
        100.0 * report.failure_rate
    );
    Ok(())
}

fn read_pairs(path: &Path) -> Result<HashMap<String, usize>> {
    Ok(parse_pairs(&fs::read_to_string(path)?)?)
}
