//! Command-line front end: dataset generation, training, evaluation,
//! decoding, scale recovery, receptive-field planning, gradient checks and a
//! decode-throughput benchmark.
//!
//! Every subcommand is a thin adapter over the library; with the same
//! configuration it produces exactly the results of the direct calls. Runs
//! are deterministic given `--seed` (fallback: the `METRO_SEED` environment
//! variable, then 0). Each run records its fully resolved configuration in a
//! manifest: `run_manifest.json` inside `--out` when an output location is
//! given, otherwise a single `manifest: {...}` line on stderr. Wall-clock
//! timestamps appear only in the manifest, so reruns with identical flags
//! and seed are byte-identical in their outputs.
//!
//! Exit status: 0 on success, 1 on domain errors (one line
//! `category: message` on stderr), 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use metro::geometry::Pose3D;
use metro::heatmaps::{
    decode_25d, decode_metric, root_relative, spatial_softmax, HeatmapLogits, Pose25D, VolumeSpec,
};
use metro::io;
use metro::scale_recovery::{recover_root_depth, reconstruct_3d, DepthSearch};
use metro::striding::{stride_mismatch_report, LayerSpec, StridePlan, StrideVariant};
use metro::synthdata::{self, AugmentConfig, DatasetConfig};
use metro::toytrain::{
    barycenter_baseline_mpjpe, evaluate, gradient_check, load_checkpoint, save_checkpoint, train,
    Head, ModelSpec, Protocol, TrainConfig,
};
use metro::{MetroError, Result};

#[derive(Parser)]
#[command(
    name = "metro",
    about = "Metric-scale volumetric-heatmap 3D pose toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset directory.
    SynthGen(SynthGenArgs),
    /// Train the toy network on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a generated dataset.
    Eval(EvalArgs),
    /// Decode a heatmap-logits tensor file into a pose JSON.
    Decode(DecodeArgs),
    /// Recover absolute root depth of a 2.5D pose from bone-length priors.
    RecoverScale(RecoverScaleArgs),
    /// Emit receptive-field centers of a strided stack as CSV.
    RfPlan(RfPlanArgs),
    /// Check analytic network gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Measure CPU soft-argmax decode throughput.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON file with configuration values; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed (fallback: METRO_SEED env var, then 0).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthGenArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of examples.
    #[arg(long)]
    n: Option<usize>,
    /// Sample truncating crops instead of full bounding squares.
    #[arg(long)]
    truncate: bool,
    /// Enable the default augmentation pass.
    #[arg(long)]
    augment: bool,
    /// Disable the metric reference cue in rendered scenes.
    #[arg(long)]
    no_cue: bool,
    /// Rendered crop resolution in pixels.
    #[arg(long)]
    out_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory produced by synth-gen.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Prediction head.
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    /// Main-schedule epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Cooldown epochs appended after the main schedule.
    #[arg(long)]
    cooldown: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Fraction of each batch supervised with 2D labels only.
    #[arg(long)]
    mix_2d: Option<f64>,
    /// Worker threads (bit-identical to serial).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint directory produced by train.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Evaluation protocol.
    #[arg(long, value_enum, default_value = "full")]
    protocol: ProtocolArg,
    /// Output directory for the evaluation report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Heatmap logits tensor (MTRT, shape J x nz x ny x nx).
    #[arg(long)]
    logits: PathBuf,
    /// Output directory for the decoded pose JSON.
    #[arg(long)]
    out: PathBuf,
    /// Crop size in pixels defining the default volume extents.
    #[arg(long, default_value_t = 64)]
    crop: usize,
    /// Root joint index.
    #[arg(long, default_value_t = 0)]
    root: usize,
    /// Decoding mode.
    #[arg(long, value_enum, default_value = "metric")]
    mode: DecodeMode,
}

#[derive(Args)]
struct RecoverScaleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// 2.5D pose JSON: {"joints": [[u, v, z_rel], ...], "mask": [...]}.
    #[arg(long)]
    pose: PathBuf,
    /// Camera intrinsics JSON: {"fx", "fy", "cx", "cy"}.
    #[arg(long)]
    camera: PathBuf,
    /// Skeleton JSON: {"edges": [[a, b], ...], "ref_lengths_mm": [...]}.
    #[arg(long)]
    skeleton: PathBuf,
    /// Output directory for recovery results.
    #[arg(long)]
    out: PathBuf,
    /// Root joint index for the reconstructed root-relative pose.
    #[arg(long, default_value_t = 0)]
    root: usize,
    #[arg(long)]
    z_min: Option<f64>,
    #[arg(long)]
    z_max: Option<f64>,
    /// Coarse grid step in mm.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args)]
struct RfPlanArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input resolution in pixels.
    #[arg(long)]
    input: usize,
    /// Comma-separated per-layer strides; layers are 3x3, padding 1.
    #[arg(long, value_delimiter = ',')]
    strides: Vec<usize>,
    /// JSON layer-stack file (overrides --strides).
    #[arg(long)]
    layers: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "centered")]
    variant: VariantArg,
    /// Also emit the dense test-time plan at this effective stride.
    #[arg(long)]
    test_stride: Option<usize>,
    /// Optional output directory; CSV is always printed to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    /// Maximum accepted relative error against finite differences.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of heatmaps to decode.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Joints per heatmap.
    #[arg(long, default_value_t = 17)]
    joints: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Metro,
    Baseline25d,
}

impl From<HeadArg> for Head {
    fn from(h: HeadArg) -> Head {
        match h {
            HeadArg::Metro => Head::Metro,
            HeadArg::Baseline25d => Head::Baseline25D,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Full,
    Truncated,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Centered,
    Normal,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeMode {
    /// Metric decode plus root-relative coordinates.
    Metric,
    /// Pixel u, v and root-relative metric depth.
    TwoFiveD,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.category(), message_of(&e));
            ExitCode::FAILURE
        }
    }
}

/// The bare message without the category prefix baked into Display.
fn message_of(e: &MetroError) -> String {
    let s = e.to_string();
    match s.split_once(": ") {
        Some((_, rest)) => rest.to_string(),
        None => s,
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthGen(a) => synth_gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::RecoverScale(a) => recover_scale_cmd(a),
        Command::RfPlan(a) => rf_plan_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

/// Seed precedence: explicit flag, config file field, METRO_SEED env, 0.
fn resolve_seed(flag: Option<u64>, config: &Value) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = config.get("seed").and_then(Value::as_u64) {
        return Ok(v);
    }
    match std::env::var("METRO_SEED") {
        Ok(s) => s
            .parse()
            .map_err(|_| MetroError::contract("METRO_SEED must be an unsigned integer")),
        Err(_) => Ok(0),
    }
}

/// Load the optional `--config` JSON file as an object.
fn load_config_value(path: &Option<PathBuf>) -> Result<Value> {
    match path {
        None => Ok(json!({})),
        Some(p) => {
            let v: Value = io::load_json(p)?;
            if !v.is_object() {
                return Err(MetroError::format("config file must be a JSON object"));
            }
            Ok(v)
        }
    }
}

/// Overlay `patch` onto `base` (recursive for objects), then decode.
fn merge_into<T: serde::de::DeserializeOwned + Serialize>(base: &T, patch: &Value) -> Result<T> {
    let mut v = serde_json::to_value(base).expect("config serializes");
    merge_value(&mut v, patch);
    serde_json::from_value(v).map_err(|e| MetroError::format(format!("invalid config: {e}")))
}

fn merge_value(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, pv) in p {
                match b.get_mut(k) {
                    Some(bv) => merge_value(bv, pv),
                    None => {
                        b.insert(k.clone(), pv.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Write the resolved-config manifest. Timestamps live only here, keeping
/// all other outputs byte-identical across reruns.
fn write_manifest(out: Option<&Path>, command: &str, resolved: Value) -> Result<()> {
    let unix_time = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "command": command,
        "resolved_config": resolved,
        "unix_time": unix_time,
    });
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            io::save_json(dir.join("run_manifest.json"), &manifest)
        }
        None => {
            eprintln!("manifest: {manifest}");
            Ok(())
        }
    }
}

fn synth_gen(a: SynthGenArgs) -> Result<()> {
    let file = load_config_value(&a.common.config)?;
    let seed = resolve_seed(a.common.seed, &file)?;
    let mut cfg: DatasetConfig = merge_into(
        &DatasetConfig::default(),
        file.get("dataset").unwrap_or(&json!({})),
    )?;
    if a.truncate {
        cfg.truncate = true;
    }
    if a.augment {
        cfg.augment = Some(AugmentConfig::default());
    }
    if a.no_cue {
        cfg.scene.cue = false;
    }
    if let Some(s) = a.out_size {
        cfg.out_size = s;
    }
    let n = a
        .n
        .or_else(|| file.get("n").and_then(Value::as_u64).map(|v| v as usize))
        .unwrap_or(1000);
    synthdata::save_dataset(&a.out, &cfg, n, seed)?;
    write_manifest(
        Some(&a.out),
        "synth-gen",
        json!({"dataset": cfg, "n": n, "seed": seed}),
    )?;
    println!("wrote {n} examples to {}", a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let file = load_config_value(&a.common.config)?;
    let seed = resolve_seed(a.common.seed, &file)?;
    let mut cfg: TrainConfig = merge_into(
        &TrainConfig::default(),
        file.get("train").unwrap_or(&json!({})),
    )?;
    cfg.seed = seed;
    if let Some(v) = a.epochs {
        cfg.main_epochs = v;
    }
    if let Some(v) = a.cooldown {
        cfg.cooldown_epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = a.lr0 {
        cfg.lr0 = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = a.mix_2d {
        cfg.mix_2d = v;
    }
    if let Some(v) = a.threads {
        cfg.threads = v;
    }
    let head: Head = a
        .head
        .map(Head::from)
        .or_else(|| {
            file.get("head")
                .and_then(Value::as_str)
                .and_then(|s| match s {
                    "metro" => Some(Head::Metro),
                    "baseline25d" => Some(Head::Baseline25D),
                    _ => None,
                })
        })
        .unwrap_or(Head::Metro);

    let (manifest, examples) = synthdata::load_dataset(&a.data)?;
    let spec = ModelSpec::default_toy(head, manifest.joint_names.len(), seed)?;
    let ckpt = train(&spec, &cfg, &examples)?;
    save_checkpoint(&a.out, &ckpt)?;
    let baseline = barycenter_baseline_mpjpe(&examples)?;
    io::save_json(
        a.out.join("train_metrics.json"),
        &json!({
            "final_train_mpjpe_mm": ckpt.final_train_mpjpe,
            "barycenter_baseline_mpjpe_mm": baseline,
            "loss_trace": ckpt.trace,
        }),
    )?;
    write_manifest(
        Some(&a.out),
        "train",
        json!({"train": cfg, "model": spec, "data": a.data.display().to_string()}),
    )?;
    println!(
        "final train MPJPE {:.2} mm (barycenter baseline {:.2} mm)",
        ckpt.final_train_mpjpe, baseline
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let file = load_config_value(&a.common.config)?;
    let seed = resolve_seed(a.common.seed, &file)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (_, examples) = synthdata::load_dataset(&a.data)?;
    let protocol = match a.protocol {
        ProtocolArg::Full => Protocol::Full,
        ProtocolArg::Truncated => Protocol::Truncated,
    };
    let ev = evaluate(&ckpt.model, &examples, protocol)?;
    std::fs::create_dir_all(&a.out)?;
    io::save_json(a.out.join("eval_report.json"), &ev)?;
    write_manifest(
        Some(&a.out),
        "eval",
        json!({
            "checkpoint": a.checkpoint.display().to_string(),
            "data": a.data.display().to_string(),
            "protocol": protocol,
            "seed": seed,
        }),
    )?;
    println!(
        "MPJPE {:.2} mm  P-MPJPE {:.2} mm  PCK {:.4}  AUC {:.4}  ({} examples)",
        ev.report.mpjpe_mm, ev.report.p_mpjpe_mm, ev.report.pck, ev.report.auc, ev.report.n_examples
    );
    Ok(())
}

fn decode_cmd(a: DecodeArgs) -> Result<()> {
    let file = load_config_value(&a.common.config)?;
    let seed = resolve_seed(a.common.seed, &file)?;
    let tensor = io::load_mtrt(&a.logits)?;
    let arr4 = tensor
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|_| MetroError::format("logits tensor must be 4-dimensional (J, nz, ny, nx)"))?;
    let logits = HeatmapLogits(arr4.mapv(f64::from));
    let spec = VolumeSpec::default_for_crop(a.crop)?;
    std::fs::create_dir_all(&a.out)?;
    let hm = spatial_softmax(&logits);
    match a.mode {
        DecodeMode::Metric => {
            let absolute = decode_metric(&hm, &spec)?;
            let relative = root_relative(&absolute, a.root)?;
            let names = generic_joint_names(absolute.len());
            io::save_json(
                a.out.join("pose.json"),
                &json!({
                    "volume": io::PoseRecord::from_pose(&absolute, &names)?,
                    "root_relative": io::PoseRecord::from_pose(&relative, &names)?,
                }),
            )?;
        }
        DecodeMode::TwoFiveD => {
            let p25d = decode_25d(&hm, &spec, a.root)?;
            io::save_json(a.out.join("pose.json"), &p25d)?;
        }
    }
    write_manifest(
        Some(&a.out),
        "decode",
        json!({
            "logits": a.logits.display().to_string(),
            "crop": a.crop,
            "root": a.root,
            "volume": spec,
            "seed": seed,
        }),
    )?;
    println!("decoded {} -> {}", a.logits.display(), a.out.join("pose.json").display());
    Ok(())
}

fn generic_joint_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("joint_{i}")).collect()
}

fn recover_scale_cmd(a: RecoverScaleArgs) -> Result<()> {
    let file = load_config_value(&a.common.config)?;
    let seed = resolve_seed(a.common.seed, &file)?;
    let pose: Pose25D = io::load_json(&a.pose)?;
    if pose.joints.len() != pose.mask.len() {
        return Err(MetroError::format("pose joints and mask lengths differ"));
    }
    let cam = io::load_camera(&a.camera)?;
    let skel = io::load_skeleton(&a.skeleton)?;
    let mut search: DepthSearch = merge_into(
        &DepthSearch::default(),
        file.get("search").unwrap_or(&json!({})),
    )?;
    if let Some(v) = a.z_min {
        search.z_min_mm = v;
    }
    if let Some(v) = a.z_max {
        search.z_max_mm = v;
    }
    if let Some(v) = a.step {
        search.grid_step_mm = v;
    }
    let recovery = recover_root_depth(&pose, &cam, &skel, &search)?;
    let pose3d: Pose3D = reconstruct_3d(&pose, &cam, &skel, &search, a.root)?;
    std::fs::create_dir_all(&a.out)?;
    io::save_json(a.out.join("recovery.json"), &recovery)?;
    io::save_json(
        a.out.join("pose3d.json"),
        &io::PoseRecord::from_pose(&pose3d, &generic_joint_names(pose3d.len()))?,
    )?;
    write_manifest(
        Some(&a.out),
        "recover-scale",
        json!({"search": search, "root": a.root, "seed": seed}),
    )?;
    println!(
        "root depth {:.3} mm (objective {:.6}{})",
        recovery.root_depth_mm,
        recovery.objective,
        if recovery.boundary_warning {
            ", boundary warning"
        } else {
            ""
        }
    );
    Ok(())
}

fn rf_plan_cmd(a: RfPlanArgs) -> Result<()> {
    let file = load_config_value(&a.common.config)?;
    let variant = match a.variant {
        VariantArg::Centered => StrideVariant::Centered,
        VariantArg::Normal => StrideVariant::Normal,
    };
    let layers: Vec<LayerSpec> = match &a.layers {
        Some(path) => io::load_layer_stack(path)?,
        None => {
            let strides = if a.strides.is_empty() {
                file.get("strides")
                    .and_then(Value::as_array)
                    .map(|arr| {
                        arr.iter()
                            .map(|v| v.as_u64().unwrap_or(0) as usize)
                            .collect()
                    })
                    .unwrap_or_default()
            } else {
                a.strides.clone()
            };
            if strides.is_empty() {
                return Err(MetroError::contract(
                    "provide --strides or --layers to define the stack",
                ));
            }
            strides
                .iter()
                .map(|&s| LayerSpec::new(3, s, 1, 1))
                .collect::<Result<_>>()?
        }
    };
    let plan = StridePlan::new(layers, variant, a.input)?;
    let mut csv = String::from("output_index,center_px\n");
    for (i, c) in plan.rf_centers().iter().enumerate() {
        csv.push_str(&format!("{i},{c}\n"));
    }
    if let Some(ts) = a.test_stride {
        let test = plan.to_test_stride(ts)?;
        csv.push_str("test_output_index,test_center_px\n");
        for (i, c) in test.rf_centers().iter().enumerate() {
            csv.push_str(&format!("{i},{c}\n"));
        }
        let report = stride_mismatch_report(&plan, &test)?;
        csv.push_str(&format!("mean_offset_px,{}\n", report.mean_offset_px));
    }
    print!("{csv}");
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("centers.csv"), &csv)?;
    }
    write_manifest(
        a.out.as_deref(),
        "rf-plan",
        json!({
            "input": a.input,
            "layers": plan.layers,
            "variant": variant,
            "test_stride": a.test_stride,
        }),
    )
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let file = load_config_value(&a.common.config)?;
    let seed = resolve_seed(a.common.seed, &file)?;
    let head: Head = a.head.map(Head::from).unwrap_or(Head::Metro);
    let max_rel = gradient_check(head, seed)?;
    println!("max relative error {max_rel:.3e} (tolerance {:.1e})", a.tol);
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        io::save_json(
            dir.join("gradcheck.json"),
            &json!({"max_rel_err": max_rel, "tol": a.tol}),
        )?;
    }
    write_manifest(
        a.out.as_deref(),
        "gradcheck",
        json!({"head": head, "seed": seed, "tol": a.tol}),
    )?;
    if max_rel > a.tol {
        return Err(MetroError::domain(format!(
            "gradient check failed: {max_rel:.3e} > {:.1e}",
            a.tol
        )));
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let file = load_config_value(&a.common.config)?;
    let seed = resolve_seed(a.common.seed, &file)?;
    let spec = VolumeSpec::default_for_crop(64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = HeatmapLogits(ndarray::Array4::from_shape_fn(
        (a.joints, spec.nz, spec.ny, spec.nx),
        |_| rng.gen_range(-3.0..3.0),
    ));
    let t0 = Instant::now();
    let mut sink = 0.0f64;
    for _ in 0..a.n {
        let pose = decode_metric(&spatial_softmax(&logits), &spec)?;
        sink += pose.joints[0][0];
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let rate = a.n as f64 / elapsed;
    println!(
        "decoded {} heatmaps ({} joints, {}x{}x{} bins) in {:.3} s: {:.0}/s",
        a.n, a.joints, spec.nx, spec.ny, spec.nz, elapsed, rate
    );
    // Keep the accumulator observable so the decode loop cannot be elided.
    if !sink.is_finite() {
        return Err(MetroError::domain("non-finite decode result in benchmark"));
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        io::save_json(
            dir.join("bench.json"),
            &json!({"n": a.n, "joints": a.joints, "seconds": elapsed, "per_second": rate}),
        )?;
    }
    write_manifest(
        a.out.as_deref(),
        "bench",
        json!({"n": a.n, "joints": a.joints, "seed": seed}),
    )
}
