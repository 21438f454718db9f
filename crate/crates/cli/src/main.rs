use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advq_core::bovw::{load_index, query_bovw, save_index};
use advq_core::evalmetrics::{average_precision, ssim, RankedList};
use advq_core::harness::{
    apply_attack, build_synthetic_dataset, emit_leak_report, emit_report, load_dataset, load_network,
    run_experiment, run_leak_experiment, Attack, Backend, ExperimentConfig, QueryMode, ReportFormat, Retriever,
    SynthSpec,
};
use advq_core::imagecore::{calibrate_noise_to_ssim, load_image, round_trip_8bit, save_image};
use advq_core::localfeat::{write_jsonl, FeatureRecord};
use advq_core::neuralnet::save_weights;
use advq_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "advq", version, about = "Adversarial queries against image retrieval back-ends")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config (JSON, same fields as the report's config echo).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    backend: Option<BackendArg>,
    #[arg(long, global = true)]
    queries: Option<QueriesArg>,
    /// Dataset root holding `images/` and `gt/`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BackendArg {
    Neural,
    Bovw,
    Cedd,
    Gist,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum QueriesArg {
    Bb,
    Wi,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
#[value(rename_all = "snake_case")]
enum AttackArg {
    None,
    Pire,
    PireRefined,
    Ls,
    Inject,
    LsInject,
    Gaussian,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract features for the collection and write the index.
    Index,
    /// Modify one image with the configured attack.
    Attack {
        image: PathBuf,
        #[arg(long)]
        attack: Option<AttackArg>,
        /// PIRE iteration count T.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Rank the collection for one query image.
    Query {
        image: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Directory written by `index` (bovw only); rebuilt from --data otherwise.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// AP of a ranking file (one image id per line) for a named query.
    Evaluate {
        ranking: PathBuf,
        #[arg(long)]
        query: String,
    },
    /// Run the configured experiment over every query.
    Experiment,
    /// Replace a query's relevant images with perturbed versions and compare.
    Leak {
        #[arg(long)]
        query: String,
    },
    /// Render the synthetic landmark dataset into --out.
    SynthData {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 5)]
        views: usize,
        #[arg(long, default_value_t = 150)]
        distractors: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value = "synth")]
        name: String,
    },
    /// Find the noise level giving a target SSIM after 8-bit saving.
    NoiseCalibrate {
        image: PathBuf,
        #[arg(long)]
        target_ssim: f64,
        #[arg(long, default_value_t = 0.005)]
        tol: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn resolve_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            // the flag may supply the seed a config file omits
            if let (Some(s), Some(obj)) = (g.seed, v.as_object_mut()) {
                obj.insert("seed".into(), s.into());
            }
            serde_json::from_value::<ExperimentConfig>(v).map_err(|e| Error::Config(e.to_string()))?
        }
        None => {
            let seed = g
                .seed
                .ok_or_else(|| Error::Config("a seed is required: pass --seed or a config with \"seed\"".into()))?;
            ExperimentConfig::new(Backend::Neural, QueryMode::Wi, Attack::None, seed)
        }
    };
    if let Some(b) = g.backend {
        cfg.backend = match b {
            BackendArg::Neural => Backend::Neural,
            BackendArg::Bovw => Backend::Bovw,
            BackendArg::Cedd => Backend::Cedd,
            BackendArg::Gist => Backend::Gist,
        };
    }
    if let Some(q) = g.queries {
        cfg.queries = match q {
            QueriesArg::Bb => QueryMode::Bb,
            QueriesArg::Wi => QueryMode::Wi,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_dir(g: &Global) -> Result<&Path> {
    g.data.as_deref().ok_or_else(|| Error::Config("--data <dir> is required for this command".into()))
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn print_ranking(r: &RankedList, top: usize) {
    for (i, e) in r.entries().iter().take(top).enumerate() {
        println!("{:>4}  {:<32} {:.6}", i + 1, e.id, e.score);
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::SynthData { classes, views, distractors, size, name } => {
            let spec = SynthSpec {
                name: name.clone(),
                classes: *classes,
                views: *views,
                distractors: *distractors,
                height: *size,
                width: *size,
                ..Default::default()
            };
            let cfg = resolve_config(g)?;
            let build = build_synthetic_dataset(&spec, cfg.seed, &cfg, &g.out)?;
            println!(
                "wrote {} images to {} (seed {}, {} attempt(s), intra {:.4} < inter {:.4})",
                spec.total_images(),
                g.out.display(),
                build.seed,
                build.attempts,
                build.intra_distance,
                build.inter_distance
            );
        }
        Command::Index => {
            let cfg = resolve_config(g)?;
            let ds = load_dataset(data_dir(g)?)?;
            mkdir(&g.out)?;
            let net = load_network(&cfg)?;
            let collection: Vec<_> = ds.images.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            match Retriever::build(&cfg, &net, &collection)? {
                Retriever::Bovw { index, .. } => {
                    save_index(&index, &g.out.join("index.json"), &g.out.join("postings.bin"))?;
                    println!("indexed {} images into {} words", index.len(), index.codebook.k);
                }
                Retriever::Neural { features, .. } => {
                    save_weights(&net, &g.out.join("weights.json"), &g.out.join("weights.bin"))?;
                    write_vectors(&g.out.join("neural.jsonl"), "neural", features.iter().map(|(id, v)| (id, v.as_slice())))?;
                    println!("wrote {} neural vectors", features.len());
                }
                Retriever::Global { kind, vectors } => {
                    let path = g.out.join(format!("{}.jsonl", kind.name()));
                    write_vectors(&path, kind.name(), vectors.iter().map(|(id, v)| (id, v.values.as_slice())))?;
                    println!("wrote {} {} vectors", vectors.len(), kind.name());
                }
            }
            write_json(&g.out.join("config.json"), &cfg)?;
        }
        Command::Attack { image, attack, iterations } => {
            let mut cfg = resolve_config(g)?;
            if let Some(a) = attack {
                cfg.attack = match a {
                    AttackArg::None => Attack::None,
                    AttackArg::Pire => Attack::Pire,
                    AttackArg::PireRefined => Attack::PireRefined,
                    AttackArg::Ls => Attack::Ls,
                    AttackArg::Inject => Attack::Inject,
                    AttackArg::LsInject => Attack::LsInject,
                    AttackArg::Gaussian => Attack::Gaussian,
                };
            }
            if let Some(t) = iterations {
                cfg.pire.iterations = *t;
            }
            cfg.validate()?;
            let img = load_image(image)?;
            let net = load_network(&cfg)?;
            let (adv, note) = apply_attack(&net, &cfg, &img, 0)?;
            let saved = round_trip_8bit(&adv);
            mkdir(&g.out)?;
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let path = g.out.join(format!("{stem}_{}.png", cfg.attack.name()));
            save_image(&saved, &path)?;
            println!("{} ssim {:.4} {note}", path.display(), ssim(&img, &saved)?);
        }
        Command::Query { image, top, index } => {
            let cfg = resolve_config(g)?;
            let q = load_image(image)?;
            let ranking = match (index, cfg.backend) {
                (Some(dir), Backend::Bovw) => {
                    let idx = load_index(&dir.join("index.json"), &dir.join("postings.bin"))?;
                    query_bovw(&q, &idx, cfg.bovw.he_threshold)?
                }
                (Some(_), _) => return Err(Error::Config("--index is only read by the bovw backend".into())),
                (None, _) => {
                    let ds = load_dataset(data_dir(g)?)?;
                    let collection: Vec<_> = ds.images.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                    Retriever::build(&cfg, &load_network(&cfg)?, &collection)?.rank(&q)?
                }
            };
            print_ranking(&ranking, *top);
        }
        Command::Evaluate { ranking, query } => {
            let ds = load_dataset(data_dir(g)?)?;
            let text = fs::read_to_string(ranking).map_err(|e| Error::io(ranking, e))?;
            let list = RankedList::from_ids(text.lines().map(str::trim).filter(|l| !l.is_empty()))?;
            let judg = ds
                .judgments
                .get(query)
                .ok_or_else(|| Error::Data(format!("unknown query '{query}'")))?;
            println!("{:.6}", average_precision(&list, judg)?);
        }
        Command::Experiment => {
            let cfg = resolve_config(g)?;
            let ds = load_dataset(data_dir(g)?)?;
            let report = run_experiment(&cfg, &ds)?;
            mkdir(&g.out)?;
            emit_report(&report, &g.out.join("report.csv"), ReportFormat::Csv)?;
            emit_report(&report, &g.out.join("report.md"), ReportFormat::Markdown)?;
            write_json(&g.out.join("report.json"), &report)?;
            println!(
                "mAP {}  mean SSIM {:.4}  ({} queries, {:.1}s)",
                advq_core::evalmetrics::format_percent(report.map),
                report.mean_ssim,
                report.rows.len(),
                report.runtime_secs
            );
        }
        Command::Leak { query } => {
            let cfg = resolve_config(g)?;
            let ds = load_dataset(data_dir(g)?)?;
            let report = run_leak_experiment(&cfg, &ds, query)?;
            mkdir(&g.out)?;
            emit_leak_report(&report, &g.out.join("leak.csv"), ReportFormat::Csv)?;
            emit_leak_report(&report, &g.out.join("leak.md"), ReportFormat::Markdown)?;
            write_json(&g.out.join("leak.json"), &report)?;
            for r in &report.rows {
                println!("{:<18} {:<12} {}", r.background, r.query, advq_core::evalmetrics::format_percent(r.ap));
            }
        }
        Command::NoiseCalibrate { image, target_ssim, tol } => {
            let cfg = resolve_config(g)?;
            let img = load_image(image)?;
            let cal = calibrate_noise_to_ssim(&img, *target_ssim, *tol, cfg.seed)?;
            println!("sigma {:.6} ssim {:.4} steps {}", cal.sigma, cal.achieved_ssim, cal.steps);
        }
    }
    Ok(())
}

fn write_vectors<'a>(path: &Path, kind: &str, rows: impl Iterator<Item = (&'a String, &'a [f64])>) -> Result<()> {
    let records: Vec<FeatureRecord> = rows
        .map(|(id, v)| FeatureRecord {
            image_id: id.clone(),
            keypoint: None,
            kind: kind.into(),
            vector: v.iter().map(|&x| x as f32).collect(),
        })
        .collect();
    write_jsonl(path, &records)
}
