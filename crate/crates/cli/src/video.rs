use std::path::PathBuf;
use std::time::Duration;

use maskpipe::dataset::LabelCatalog;
use maskpipe::video::{
    annotate_file, expected_model_calls, open_stream, pipeline_bench, DetectorModel, FixedCostModel, PipelineConfig,
    PlaybackModel, SyntheticDetector, TrackerConfig,
};
use maskpipe::yolo_head::{AnchorSet, DecodeConfig};
use maskpipe::{Error, Result};

use crate::args::{AnnotateArgs, BenchArgs, GlobalArgs, ModelArgs, ModelKind};
use crate::tools::need;

fn parse_anchors(spec: &str) -> Result<AnchorSet<f32>> {
    let bad = || Error::Config(format!("anchors {spec:?} must look like \"w,h;w,h\""));
    let pairs = spec
        .split(';')
        .map(|p| {
            let (w, h) = p.split_once(',').ok_or_else(bad)?;
            Ok((
                w.trim().parse().map_err(|_| bad())?,
                h.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect::<Result<Vec<(f32, f32)>>>()?;
    AnchorSet::new(pairs)
}

fn build_model(m: &ModelArgs) -> Result<Box<dyn DetectorModel>> {
    let labels = LabelCatalog::mask().names().to_vec();
    Ok(match m.model {
        ModelKind::Synthetic => Box::new(SyntheticDetector::new(labels)),
        ModelKind::Playback => {
            let dir = m
                .tensors
                .clone()
                .ok_or_else(|| Error::Config("--model playback needs --tensors".into()))?;
            let decode = DecodeConfig {
                conf_threshold: m.conf_thresh,
                iou_threshold: m.iou_thresh,
                class_aware: !m.class_agnostic,
            };
            Box::new(PlaybackModel::new(dir, parse_anchors(&m.anchors)?, decode, labels))
        }
        ModelKind::Stub => {
            if !(m.stub_ms.is_finite() && m.stub_ms >= 0.0) {
                return Err(Error::Config(format!(
                    "--stub-ms must be nonnegative, got {}",
                    m.stub_ms
                )));
            }
            Box::new(FixedCostModel::new(Duration::from_secs_f64(m.stub_ms / 1e3), labels))
        }
    })
}

fn check_skip(skip: usize) -> Result<()> {
    if skip == 0 {
        return Err(Error::Config("--skip must be at least 1".into()));
    }
    Ok(())
}

pub fn annotate(a: AnnotateArgs, _g: &GlobalArgs) -> Result<()> {
    check_skip(a.skip)?;
    if a.queue == 0 {
        return Err(Error::Config("--queue must be at least 1".into()));
    }
    need(&a.input)?;
    let mut model = build_model(&a.model)?;
    let cfg = PipelineConfig {
        skip: a.skip,
        track: a.track,
        tracker: TrackerConfig::default(),
        refine_radius: a.refine,
        queue_capacity: a.queue,
    };
    let sidecar = a.sidecar.clone().unwrap_or_else(|| {
        let mut p = PathBuf::from(&a.out);
        p.set_extension("jsonl");
        p
    });
    let s = annotate_file(&a.input, &a.out, &sidecar, model.as_mut(), &cfg)?;
    log::info!(
        "model calls {} (expected {} for {} frames at skip {})",
        s.model_calls,
        expected_model_calls(s.frames, a.skip),
        s.frames,
        a.skip
    );
    println!(
        "{} frames, {} model calls, {:.3} ms",
        s.frames,
        s.model_calls,
        s.total.as_secs_f64() * 1e3
    );
    Ok(())
}

pub fn bench(a: BenchArgs, _g: &GlobalArgs) -> Result<()> {
    check_skip(a.skip)?;
    need(&a.input)?;
    let mut model = build_model(&a.model)?;
    let report = pipeline_bench(open_stream(&a.input)?, model.as_mut(), a.skip)?;
    println!("{report}");
    Ok(())
}
