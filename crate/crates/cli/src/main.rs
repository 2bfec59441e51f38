//! `motionforge` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O error.
//! Log level comes from `MOTIONFORGE_LOG` (default `warn`).

mod config;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use motionforge::compose::compose;
use motionforge::formats::{read_mask, read_tracks, FormatError};
use motionforge::manifest::{load_manifest, read_json, write_json, ManifestError};
use motionforge::metrics::{evaluate, Tracks2d, DEFAULT_IOU_THRESHOLD_PX};
use motionforge::pipeline::synthetic::generate_synthetic;
use motionforge::pipeline::{run_batch, sample_from_manifest, write_sample, PipelineError};
use motionforge::preview::render_preview;
use motionforge::script::MotionScript;
use motionforge::tensor::{read_tensor, sidecar_path, write_tensor, TensorManifest};

use config::FileConfig;

const DEFAULT_WIDTH: u32 = 704;
const DEFAULT_HEIGHT: u32 = 448;

#[derive(Debug, Parser)]
#[command(name = "motionforge", version, about = "Disentangled motion control signals")]
struct Cli {
    /// JSON file whose fields fill in options not given on the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scene manifest + motion script -> control tensor.
    Compose(ComposeArgs),
    /// Scene with tracks and segments -> training tensor + provenance.
    Pipeline(PipelineArgs),
    /// Tensor frames -> point-set JSON and PNG overlays.
    Preview(PreviewArgs),
    /// Generated tracks (+ reference) -> ObjMC / MSC / IoU report.
    Metrics(MetricsArgs),
    /// Synthetic scene with known ground truth.
    Synth(SynthArgs),
    /// HTTP authoring service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ComposeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    script: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the script's frame count.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long, conflicts_with = "batch", required_unless_present = "batch")]
    scene: Option<PathBuf>,
    /// Batch file listing scenes; scene k uses seed + k.
    #[arg(long)]
    batch: Option<PathBuf>,
    #[arg(long, required_unless_present = "batch")]
    out: Option<PathBuf>,
    #[arg(long, default_value = "sample")]
    stem: String,
}

#[derive(Debug, Args)]
struct PreviewArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Last frame (inclusive); defaults to `--frame`.
    #[arg(long)]
    to: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    gen: PathBuf,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Unit mask PNG for MSC and IoU.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Scene manifest; camera-frame tracks are projected through it.
    #[arg(long, conflicts_with_all = ["width", "height"])]
    scene: Option<PathBuf>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    host: Option<String>,
    /// Directory for session logs; sessions are in-memory without it.
    #[arg(long)]
    state_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

fn format_error(path: &Path) -> impl FnOnce(FormatError) -> CliError + '_ {
    move |e| match e {
        FormatError::Io(_) => CliError::Io(format!("{}: {e}", path.display())),
        _ => CliError::Invalid(format!("{}: {e}", path.display())),
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOTIONFORGE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::read(path)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed);
    match cli.command {
        Command::Compose(a) => run_compose(a, &file),
        Command::Pipeline(a) => run_pipeline(a, seed.unwrap_or(0), &file),
        Command::Preview(a) => run_preview(a),
        Command::Metrics(a) => run_metrics(a, &file),
        Command::Synth(a) => run_synth(a, seed, &file),
        Command::Serve(a) => run_serve(a, &file),
    }
}

fn run_compose(a: ComposeArgs, file: &FileConfig) -> Result<(), CliError> {
    let loaded = load_manifest(&a.scene)?;
    let mut script: MotionScript = read_json(&a.script)?;
    if let Some(frames) = a.frames.or(file.frames) {
        script.frame_count = frames;
    }
    let tensor = compose(&loaded.scene, &loaded.partition, &script).map_err(invalid)?;
    write_tensor(&tensor, &a.out).map_err(format_error(&a.out))?;
    let sidecar = sidecar_path(&a.out);
    TensorManifest::new(&tensor, &loaded.partition)
        .write(&sidecar)
        .map_err(format_error(&sidecar))?;
    log::info!("wrote {} with shape {:?}", a.out.display(), tensor.shape());
    Ok(())
}

fn run_pipeline(a: PipelineArgs, seed: u64, file: &FileConfig) -> Result<(), CliError> {
    if let Some(batch) = a.batch {
        let entries = run_batch(&batch)?;
        let failed = entries.iter().filter(|e| e.error.is_some()).count();
        println!("{}", serde_json::to_string_pretty(&entries).expect("serializable"));
        if failed > 0 {
            return Err(invalid(format!("{failed} of {} scenes failed", entries.len())));
        }
        return Ok(());
    }
    let scene = a.scene.expect("clap requires --scene");
    let out = a.out.expect("clap requires --out");
    let options = file.sample.unwrap_or_default();
    let sample = sample_from_manifest(&scene, seed, &options)?;
    let path = write_sample(&sample, &out, &a.stem)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn run_preview(a: PreviewArgs) -> Result<(), CliError> {
    let tensor = read_tensor(&a.tensor).map_err(format_error(&a.tensor))?;
    let to = a.to.unwrap_or(a.frame);
    if a.frame > to || to >= tensor.frame_count() {
        return Err(invalid(format!(
            "frames {}..={to} outside 0..{}",
            a.frame,
            tensor.frame_count()
        )));
    }
    fs::create_dir_all(&a.out).map_err(io(&a.out))?;
    for t in a.frame..=to {
        let frame = render_preview(&tensor, t).map_err(invalid)?;
        let json = a.out.join(format!("frame_{t:04}.json"));
        write_json(&frame, &json)?;
        let png = a.out.join(format!("frame_{t:04}.png"));
        fs::write(&png, frame.to_png(None)).map_err(io(&png))?;
    }
    Ok(())
}

fn run_metrics(a: MetricsArgs, file: &FileConfig) -> Result<(), CliError> {
    let scene = match &a.scene {
        Some(path) => Some(load_manifest(path)?.scene),
        None => None,
    };
    let width = a.width.or(file.width).unwrap_or(DEFAULT_WIDTH);
    let height = a.height.or(file.height).unwrap_or(DEFAULT_HEIGHT);
    let load = |path: &Path| -> Result<Tracks2d, CliError> {
        let field = read_tracks(path).map_err(format_error(path))?;
        match &scene {
            Some(scene) => Tracks2d::from_camera_field(&field, scene),
            None => Tracks2d::from_field_xy(&field, width, height),
        }
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
    };
    let generated = load(&a.gen)?;
    let reference = a.reference.as_deref().map(load).transpose()?;
    let mask = match &a.mask {
        Some(path) => Some(read_mask(path).map_err(format_error(path))?),
        None => None,
    };
    let threshold = a.threshold.or(file.threshold).unwrap_or(DEFAULT_IOU_THRESHOLD_PX);
    let report = evaluate(&generated, reference.as_ref(), mask.as_ref(), threshold).map_err(invalid)?;
    match &a.out {
        Some(path) => write_json(&report, path)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("serializable")),
    }
    if let Some(path) = &a.csv {
        report
            .write_csv(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn run_synth(a: SynthArgs, seed: Option<u64>, file: &FileConfig) -> Result<(), CliError> {
    let mut config = file.synth.clone().unwrap_or_default();
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(frames) = file.frames {
        config.frame_count = frames;
    }
    let synthetic = generate_synthetic(&config)?;
    let manifest = synthetic.write_files(&a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn run_serve(a: ServeArgs, file: &FileConfig) -> Result<(), CliError> {
    let host = a.host.or(file.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
    let port = a.port.or(file.port).unwrap_or(motionforge_service::DEFAULT_PORT);
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| invalid(format!("bad address {host}:{port}: {e}")))?;
    let state_dir = a.state_dir.or(file.state_dir.clone());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime
        .block_on(motionforge_service::serve(addr, state_dir.as_deref()))
        .map_err(|e| CliError::Io(e.to_string()))
}
