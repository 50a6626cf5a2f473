use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chunkrecon::config::PipelineConfig;
use chunkrecon::evalsuite::{evaluate_scene, raycast_render, save_rendered, ObservationEnvelope, Raycaster};
use chunkrecon::geometry::{Aabb, Axis};
use chunkrecon::pipeline::{
    attach_features, calibrate_model, chunk_scene, dense_to_tensor, generate, read_json, sparse_to_tensors, synth_scene,
    views_from_colmap, write_json, CalibrationManifest,
};
use chunkrecon::tensor_io::{parse_colmap, read_mesh, write_mesh, write_tensor, MeshFormat};
use chunkrecon::toynet::{ablate, gen_scene, load_model, save_model, train, write_loss_csv, ToyModel, ToyScene};
use chunkrecon::{chunker::ChunkLayout, Error};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "chunkrecon", version, about = "Chunked conditional 3D scene generation from posed images")]
struct Cli {
    /// Worker threads; 1 gives fully deterministic runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Pipeline configuration (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log level: error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpAxis {
    X,
    Y,
    Z,
}

impl From<UpAxis> for Axis {
    fn from(a: UpAxis) -> Self {
        match a {
            UpAxis::X => Axis::X,
            UpAxis::Y => Axis::Y,
            UpAxis::Z => Axis::Z,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Filter the sparse points of a COLMAP text model and estimate scene bounds.
    Calibrate {
        #[arg(long)]
        colmap: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        up_axis: Option<UpAxis>,
    },
    /// Tile the calibrated bounds into overlapping chunks and associate views.
    Chunk {
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        colmap: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Jointly generate all chunks and decode a mesh.
    Generate {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        colmap: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the toy denoiser and aggregator on synthetic box-world scenes.
    TrainToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        scenes: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also run the view-count ablation on the held-out scenes.
        #[arg(long)]
        ablate: bool,
    },
    /// Write synthetic box-world scenes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = 20_000)]
        points: usize,
        #[arg(long, default_value_t = 200)]
        outliers: usize,
    },
    /// Compare a predicted mesh with the ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// COLMAP model whose views are used for the pixel metrics.
        #[arg(long)]
        colmap: Option<PathBuf>,
        /// Clip the prediction to the ground-truth bounding box inflated by this fraction.
        #[arg(long)]
        bbox_inflate: Option<f64>,
        #[arg(long, default_value = "scene")]
        scene: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ray-cast depth and normal maps of a mesh from every view.
    Render {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        colmap: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn require(path: &Path, what: &str) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn create_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|source| Failure::Run(Error::Io { path: path.to_path_buf(), source }))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|source| Failure::Run(Error::Io { path: path.to_path_buf(), source }))
}

#[derive(Serialize)]
struct GenerationManifest {
    seed: u64,
    occupied_voxels: usize,
    detail_voxels: usize,
    vertices: usize,
    triangles: usize,
}

#[derive(Serialize)]
struct TrainManifest {
    seed: u64,
    steps: usize,
    scenes: u64,
    final_loss: f64,
}

fn run(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => {
            require(p, "config file")?;
            PipelineConfig::load(p)?
        }
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Calibrate { colmap, out, up_axis } => {
            require(&colmap, "COLMAP directory")?;
            let model = parse_colmap(&colmap)?;
            let mut params = cfg.calibrate;
            if let Some(a) = up_axis {
                params.up_axis = a.into();
            }
            let (_, manifest) = calibrate_model(&model, &params)?;
            log::info!("bounds {:?} .. {:?}, kept {} of {} points", manifest.bounds.min, manifest.bounds.max, manifest.kept_points, manifest.input_points);
            write_json(&out, &manifest)?;
        }
        Command::Chunk { calibration, colmap, out } => {
            require(&calibration, "calibration manifest")?;
            require(&colmap, "COLMAP directory")?;
            let manifest: CalibrationManifest = read_json(&calibration)?;
            let (views, _) = views_from_colmap(&parse_colmap(&colmap)?)?;
            let layout = chunk_scene(&manifest.scene_bounds()?, &views, &cfg)?;
            log::info!("{} chunks of edge {:.3} m", layout.chunks.len(), layout.edge);
            write_text(&out, &layout.to_json()?)?;
        }
        Command::Generate { layout, colmap, features, params, out, seed } => {
            for (p, what) in [(&layout, "layout"), (&colmap, "COLMAP directory"), (&features, "feature directory"), (&params, "parameter directory")] {
                require(p, what)?;
            }
            let text = std::fs::read_to_string(&layout).map_err(|source| Error::Io { path: layout.clone(), source })?;
            let layout = ChunkLayout::from_json(&text)?;
            let (mut views, names) = views_from_colmap(&parse_colmap(&colmap)?)?;
            attach_features(&mut views, &names, &features)?;
            let (model, _) = load_model(&params)?;
            let seed = seed.unwrap_or(cfg.generate.seed);
            let g = generate(&layout, &views, &model, &cfg, seed)?;
            create_dir(&out)?;
            write_mesh(out.join("mesh.ply"), &g.mesh, MeshFormat::Ply)?;
            write_tensor(out.join("occupancy.cgf"), &dense_to_tensor(&g.occupancy.occupancy)?)?;
            write_tensor(out.join("z0_occupancy.cgf"), &dense_to_tensor(&g.occupancy.latent.to_dense())?)?;
            // tensors cannot have zero-sized dims; an empty detail stage writes none
            if !g.detail.is_empty() {
                let (coords, data) = sparse_to_tensors(&g.detail)?;
                write_tensor(out.join("z0_detail_coords.cgf"), &coords)?;
                write_tensor(out.join("z0_detail.cgf"), &data)?;
            }
            write_json(
                &out.join("generation.json"),
                &GenerationManifest {
                    seed,
                    occupied_voxels: g.occupancy.occupied_count(),
                    detail_voxels: g.detail.coords.len(),
                    vertices: g.mesh.vertices.len(),
                    triangles: g.mesh.triangles.len(),
                },
            )?;
        }
        Command::TrainToy { out, steps, scenes, seed, ablate: run_ablation } => {
            let mut toy = cfg.toy.clone();
            if let Some(s) = steps {
                toy.train.steps = s;
            }
            if let Some(n) = scenes {
                toy.train_scenes = n;
            }
            if let Some(s) = seed {
                toy.train.seed = s;
            }
            let cfg = PipelineConfig { toy, ..cfg };
            cfg.validate()?;
            let toy = &cfg.toy;
            let train_set: Vec<ToyScene> = (0..toy.train_scenes).map(gen_scene).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(toy.train.seed);
            let init = ToyModel::init(toy.train.denoiser, toy.train.aggregator_hidden, &mut rng)?;
            let result = train(&train_set, init, &toy.train)?;
            create_dir(&out)?;
            save_model(&out.join("params"), &result.model, toy.train.seed)?;
            write_loss_csv(&out.join("loss.csv"), &result.losses)?;
            write_json(
                &out.join("train.json"),
                &TrainManifest {
                    seed: toy.train.seed,
                    steps: toy.train.steps,
                    scenes: toy.train_scenes,
                    final_loss: result.losses.last().copied().unwrap_or(f64::NAN),
                },
            )?;
            if run_ablation {
                let held: Vec<ToyScene> = (toy.heldout_first..toy.heldout_first + toy.heldout_scenes).map(gen_scene).collect();
                let table = ablate(&result.model, &held, &toy.protocol)?;
                print!("{}", table.to_csv());
                write_text(&out.join("ablation.csv"), &table.to_csv())?;
            }
        }
        Command::Synth { out, count, first_seed, points, outliers } => {
            for seed in first_seed..first_seed + count {
                let dir = out.join(format!("scene_{seed:05}"));
                let m = synth_scene(&dir, seed, points, outliers)?;
                log::info!("scene {seed}: {} boxes, {} views -> {}", m.boxes.len(), m.views, dir.display());
            }
        }
        Command::Eval { pred, gt, colmap, bbox_inflate, scene, out } => {
            require(&pred, "predicted mesh")?;
            require(&gt, "ground-truth mesh")?;
            let pred = read_mesh(&pred)?;
            let gt = read_mesh(&gt)?;
            let views = match &colmap {
                Some(dir) => {
                    require(dir, "COLMAP directory")?;
                    views_from_colmap(&parse_colmap(dir)?)?.0
                }
                None => Vec::new(),
            };
            let envelope = match bbox_inflate {
                Some(f) => {
                    let bbox = mesh_bounds(&gt).ok_or_else(|| Error::Input("ground-truth mesh is empty".into()))?;
                    let env = ObservationEnvelope::BboxInflate { bbox, inflation: f };
                    env.validate()?;
                    Some(env)
                }
                None => None,
            };
            let e = &cfg.eval;
            let report = evaluate_scene(&scene, &pred, &gt, &views, envelope.as_ref(), e.samples, e.seed, e.tau)?;
            create_dir(&out)?;
            print!("{}", report.to_text());
            write_text(&out.join("metrics.csv"), &format!("{}\n{}\n", report.csv_header(), report.csv_row()))?;
            write_text(&out.join("metrics.txt"), &report.to_text())?;
        }
        Command::Render { mesh, colmap, out } => {
            require(&mesh, "mesh")?;
            require(&colmap, "COLMAP directory")?;
            let mesh = read_mesh(&mesh)?;
            let (views, names) = views_from_colmap(&parse_colmap(&colmap)?)?;
            let caster = Raycaster::new(&mesh);
            create_dir(&out)?;
            let size = cfg.eval.resolution;
            for (v, name) in views.iter().zip(&names) {
                let res = size.unwrap_or((v.intrinsics.width, v.intrinsics.height));
                let r = raycast_render(&caster, v, (res.0 as usize, res.1 as usize), None);
                let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
                save_rendered(&r, &out, stem)?;
            }
        }
    }
    Ok(())
}

fn mesh_bounds(mesh: &chunkrecon::tensor_io::MeshData) -> Option<Aabb> {
    let first = mesh.vertices.first()?;
    let mut min = first.map(|v| v as f64);
    let mut max = min;
    for v in &mesh.vertices {
        for a in 0..3 {
            min[a] = min[a].min(v[a] as f64);
            max[a] = max[a].max(v[a] as f64);
        }
    }
    Some(Aabb { min, max })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
