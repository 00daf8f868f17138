use std::fs;
use std::io;
use std::path::Path;

use maskpipe::loss::{check_gradient, random_problem, LossWeights};
use maskpipe::train_config::{lr_at, parse_config, serialize_config, TrainConfig};
use maskpipe::video::{write_stream, SceneSpec, StreamInfo};
use maskpipe::yolo_head::AnchorSet;
use maskpipe::{Error, Result};

use crate::args::{ConfigCmd, GlobalArgs, LossCmd, SynthCmd};

/// Largest acceptable analytic vs. finite-difference disagreement.
const GRADIENT_TOLERANCE: f64 = 1e-4;

pub fn load_config(g: &GlobalArgs) -> Result<Option<TrainConfig>> {
    let Some(path) = &g.cfg else { return Ok(None) };
    need(path)?;
    let text = fs::read_to_string(path)?;
    let parsed = parse_config(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    for w in &parsed.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(Some(parsed.config))
}

pub fn loss(cmd: LossCmd, g: &GlobalArgs) -> Result<()> {
    let LossCmd::Check {
        trials,
        grid,
        classes,
        step,
    } = cmd;
    let weights: LossWeights<f64> = load_config(g)?.map(|c| c.loss_weights).unwrap_or_default();
    weights.validate()?;
    if trials == 0 || grid == 0 || classes == 0 {
        return Err(Error::Config("--trials, --grid and --classes must be positive".into()));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Config(format!("--step must be positive, got {step}")));
    }
    println!("alpha={:?} beta={:?}", weights.alpha, weights.beta);
    let anchors = AnchorSet::new(vec![(0.3, 0.3)])?;
    let mut worst = 0.0f64;
    for t in 0..trials {
        let (pred, targets) = random_problem(g.seed.wrapping_add(t as u64), grid, &anchors, classes)?;
        let check = check_gradient(&pred, &targets, &weights, step)?;
        worst = worst.max(check.max_relative_error);
    }
    println!("max relative error {worst:.3e} over {trials} problems");
    if worst >= GRADIENT_TOLERANCE {
        return Err(Error::Config(format!(
            "gradient check failed: {worst:.3e} exceeds {GRADIENT_TOLERANCE:e}"
        )));
    }
    Ok(())
}

pub fn config(cmd: ConfigCmd, g: &GlobalArgs) -> Result<()> {
    let ConfigCmd::Show { at } = cmd;
    let cfg = load_config(g)?.unwrap_or_default();
    print!("{}", serialize_config(&cfg));
    println!();
    for it in at {
        println!("lr@{it} = {}", lr_at(&cfg, it));
    }
    Ok(())
}

pub fn synth(cmd: SynthCmd, g: &GlobalArgs) -> Result<()> {
    let SynthCmd::Video {
        out,
        width,
        height,
        frames,
        objects,
        fps,
    } = cmd;
    if width == 0 || height == 0 || fps == 0 {
        return Err(Error::Config("--width, --height and --fps must be positive".into()));
    }
    let scene = SceneSpec::random(width, height, frames, objects, g.seed);
    let info = StreamInfo {
        width,
        height,
        fps_num: fps,
        fps_den: 1,
        frame_count: frames,
    };
    let rendered: Vec<_> = scene.frames().collect();
    write_stream(&out, info, &rendered)?;
    println!("{frames} frames of {width}x{height} written to {}", out.display());
    Ok(())
}

/// Fails with an I/O error naming `path` when it does not exist.
pub fn need(path: &Path) -> Result<()> {
    if path.exists() {
        return Ok(());
    }
    Err(Error::Io(io::Error::new(
        io::ErrorKind::NotFound,
        format!("{} does not exist", path.display()),
    )))
}
