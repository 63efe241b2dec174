//! Command-line front end. Every subcommand prints one JSON document on
//! stdout; failures print a single JSON line on stderr and exit non-zero.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use framescope::features::{synth_image_features, synth_video_features, EncoderSpec};
use framescope::format::{read_features, write_features};
use framescope::gradcheck::{run_gradchecks, GradOp, GradcheckOptions};
use framescope::pipeline::{mac_report, token_budget, with_threads, BranchMode, FrameSelection};
use framescope::projector::{
    load_params, project_branch, save_params, ProjectorConfig, ProjectorKind, ProjectorParams,
};
use framescope::report::{bench, digest_hex, RunReport, REPORT_SCHEMA_VERSION};
use framescope::selection::{frame_scores, top_k_frames, DenseAttentionCap, ScoringPath};
use framescope::{FeatureSource, FrameFeatures, Pipeline, PipelineConfig, VideoFeatures};

#[derive(Parser)]
#[command(
    name = "framescope",
    version,
    about = "Key-frame selection, token projection and token/MAC budgeting"
)]
struct Cli {
    /// Worker threads for frame-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic encoder features to an MVGF file.
    Synth(SynthArgs),
    /// Score frames of a feature file and pick key-frames.
    Select(SelectArgs),
    /// Project a feature file into language-model tokens.
    Project(ProjectArgs),
    /// Run the full pipeline and print a run report.
    Run(ConfigArgs),
    /// Print the token budget of a configuration.
    Budget(ConfigArgs),
    /// Print the multiply count of a configuration.
    Flops(ConfigArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time the pipeline stages.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderKind {
    Image,
    Video,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Patch grid, `N` or `HxW`.
    #[arg(long, default_value = "14", value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 768)]
    depth: usize,
    /// Image stand-in (frames 0..T) or video stand-in.
    #[arg(long, value_enum, default_value = "image")]
    encoder: EncoderKind,
    /// Key-frame indices for the video stand-in, comma separated
    /// (default: 0..frames).
    #[arg(long, value_delimiter = ',')]
    indices: Option<Vec<usize>>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// MVGF file holding `T x H x W x D` image features.
    features: PathBuf,
    /// Key-frames to keep (default: T / 2).
    #[arg(long)]
    keyframes: Option<usize>,
    #[arg(long, value_enum, default_value = "streaming")]
    scoring: ScoringArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoringArg {
    Dense,
    Streaming,
}

impl From<ScoringArg> for ScoringPath {
    fn from(s: ScoringArg) -> Self {
        match s {
            ScoringArg::Dense => ScoringPath::Dense,
            ScoringArg::Streaming => ScoringPath::Streaming,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProjectorArg {
    Et,
    Mlp,
}

impl From<ProjectorArg> for ProjectorKind {
    fn from(p: ProjectorArg) -> Self {
        match p {
            ProjectorArg::Et => ProjectorKind::EtProj,
            ProjectorArg::Mlp => ProjectorKind::MlpProj,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Dual,
    Image,
    Video,
}

impl From<BranchArg> for BranchMode {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Dual => BranchMode::Dual,
            BranchArg::Image => BranchMode::ImageOnly,
            BranchArg::Video => BranchMode::VideoOnly,
        }
    }
}

#[derive(Args)]
struct ProjectArgs {
    /// MVGF file holding `F x H x W x D` features.
    features: PathBuf,
    /// Treat the features as the video branch.
    #[arg(long)]
    video: bool,
    #[arg(long, value_enum, default_value = "et")]
    projector: ProjectorArg,
    /// Pooled grid for ET-Proj, `N` or `HxW` (default 12x12 image, 7x7 video).
    #[arg(long, value_parser = parse_grid)]
    grid_out: Option<(usize, usize)>,
    #[arg(long, default_value_t = 896)]
    embed_width: usize,
    #[arg(long)]
    hidden_width: Option<usize>,
    /// Seed for projector initialisation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Load projector weights from a manifest instead of initialising them.
    #[arg(long, conflicts_with_all = ["grid_out", "embed_width", "hidden_width", "projector"])]
    params: Option<PathBuf>,
    /// Save the projector weights used to this manifest path.
    #[arg(long)]
    save_params: Option<PathBuf>,
    /// Write the `1 x M x C` token tensor here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration JSON (default configuration when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    keyframes: Option<usize>,
    #[arg(long)]
    no_frame_selection: bool,
    #[arg(long, value_enum)]
    projector: Option<ProjectorArg>,
    #[arg(long, value_enum)]
    branch: Option<BranchArg>,
    #[arg(long, value_enum)]
    scoring: Option<ScoringArg>,
    /// Read image features from this MVGF file instead of synthesising them.
    #[arg(long)]
    features: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).map_err(framescope::Error::from)?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.frames {
            cfg.frames = v;
        }
        if let Some(v) = self.keyframes {
            cfg.keyframes = Some(v);
        }
        if self.no_frame_selection {
            cfg.frame_selection = FrameSelection::None;
        }
        if let Some(v) = self.projector {
            cfg.projector_kind = v.into();
        }
        if let Some(v) = self.branch {
            cfg.branch_mode = v.into();
        }
        if let Some(v) = self.scoring {
            cfg.scoring = v.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn source(&self) -> anyhow::Result<FeatureSource> {
        Ok(match &self.features {
            Some(p) => FeatureSource::from_file(p)?,
            None => FeatureSource::Synthetic,
        })
    }
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random trials per op.
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Negative control: corrupt this op's analytic gradient.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad grid {s:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

fn print_json(v: &impl Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(out, "{text}") {
        // A closed downstream pipe is not our failure.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let part = cause.to_string();
        if msg.contains(&part) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&part);
    }
    msg
}

fn read_input(path: &std::path::Path) -> anyhow::Result<framescope::Tensor> {
    Ok(read_features(path)
        .with_context(|| format!("reading {}", path.display()))?
        .into_f32())
}

fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let spec = EncoderSpec::new(
        match a.encoder {
            EncoderKind::Image => "image",
            EncoderKind::Video => "video",
        },
        a.grid,
        a.depth,
    );
    let tensor = match a.encoder {
        EncoderKind::Image => synth_image_features(a.seed, a.frames, &spec)?.into_tensor(),
        EncoderKind::Video => {
            let indices = a.indices.clone().unwrap_or_else(|| (0..a.frames).collect());
            synth_video_features(a.seed, &indices, &spec)?.into_tensor()
        }
    };
    let shape = tensor.shape().to_vec();
    let digest = digest_hex(
        framescope::TokenSequence {
            tokens: tensor.clone(),
            segments: Vec::new(),
        }
        .digest(),
    );
    write_features(&a.output, tensor)?;
    print_json(&json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "path": a.output,
        "dtype": "f32",
        "shape": shape,
        "digest": digest,
    }))
}

fn cmd_select(a: &SelectArgs) -> anyhow::Result<()> {
    let features = FrameFeatures::new(read_input(&a.features)?)?;
    let t = features.frames();
    let k = a.keyframes.unwrap_or((t / 2).max(1));
    let scores = frame_scores(&features, a.scoring.into(), DenseAttentionCap::from_env()?)?;
    let keyframes = top_k_frames(&scores, k)?;
    print_json(&json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "frames": t,
        "tokens": t * features.tokens_per_frame(),
        "scores": scores.scores,
        "total_attention": scores.total(),
        "keyframes": keyframes.indices,
    }))
}

fn cmd_project(a: &ProjectArgs) -> anyhow::Result<()> {
    let tensor = read_input(&a.features)?;
    let &[_, h, w, d] = tensor.shape() else {
        bail!(framescope::Error::InvalidShape {
            shape: tensor.shape().to_vec(),
            reason: "features must be frames x height x width x depth".into(),
        });
    };
    let (cfg, params) = match &a.params {
        Some(manifest) => load_params(manifest)?,
        None => {
            let cfg = match ProjectorKind::from(a.projector) {
                ProjectorKind::EtProj => {
                    let default_out = if a.video { (7, 7) } else { (12, 12) };
                    ProjectorConfig::et(d, a.embed_width, (h, w), a.grid_out.unwrap_or(default_out))
                }
                ProjectorKind::MlpProj => ProjectorConfig::mlp(d, a.embed_width, (h, w)),
            }
            .with_hidden(a.hidden_width.unwrap_or(a.embed_width));
            let params = ProjectorParams::init(&cfg, a.seed)?;
            (cfg, params)
        }
    };
    let seq = if a.video {
        project_branch(&VideoFeatures::new(tensor)?, &cfg, &params)?
    } else {
        project_branch(&FrameFeatures::new(tensor)?, &cfg, &params)?
    };
    if let Some(path) = &a.save_params {
        save_params(path, &cfg, &params)?;
    }
    if let Some(path) = &a.output {
        write_features(path, seq.tokens.clone())?;
    }
    let frames = seq.segments.iter().map(|s| s.frames).sum::<usize>();
    print_json(&json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "projector": cfg,
        "frames": frames,
        "tokens": { "count": seq.len(), "width": seq.width() },
        "macs": frames as u64 * cfg.macs_per_frame(),
        "digest": digest_hex(seq.digest()),
    }))
}

fn cmd_run(a: &ConfigArgs) -> anyhow::Result<()> {
    let cfg = a.resolve()?;
    let out = Pipeline::new(cfg.clone())?.run(&a.source()?)?;
    print_json(&RunReport::new(&cfg, &out))
}

fn cmd_gradcheck(a: &GradcheckArgs) -> anyhow::Result<bool> {
    let fault = match &a.inject_fault {
        Some(name) => {
            Some(GradOp::from_name(name).ok_or_else(|| framescope::Error::Argument(format!("unknown op {name:?}")))?)
        }
        None => None,
    };
    let report = run_gradchecks(&GradcheckOptions {
        seeds: a.seeds,
        fault,
        ..Default::default()
    })?;
    for r in &report.ops {
        eprintln!(
            "{:<16} trials={:<3} max_rel_err={:.3e} {}",
            r.op.name(),
            r.trials,
            r.max_rel_err,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    print_json(&report)?;
    Ok(report.pass)
}

fn dispatch(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a)?,
        Command::Select(a) => cmd_select(a)?,
        Command::Project(a) => cmd_project(a)?,
        Command::Run(a) => cmd_run(a)?,
        Command::Budget(a) => {
            let cfg = a.resolve()?;
            print_json(&token_budget(&cfg)?)?
        }
        Command::Flops(a) => {
            let cfg = a.resolve()?;
            print_json(&mac_report(&cfg)?)?
        }
        Command::Gradcheck(a) => return cmd_gradcheck(a),
        Command::Bench(a) => {
            let cfg = a.config.resolve()?;
            let pipeline = Pipeline::new(cfg)?;
            print_json(&bench(&pipeline, &a.config.source()?, a.repeat)?)?
        }
    }
    Ok(true)
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            error_line("usage", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let result = match cli.threads {
        Some(n) => with_threads(n, || dispatch(&cli))
            .map_err(anyhow::Error::from)
            .and_then(|r| r),
        None => dispatch(&cli),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let kind = e.downcast_ref::<framescope::Error>().map_or("io", |e| e.kind());
            error_line(kind, &message(&e));
            ExitCode::FAILURE
        }
    }
}
