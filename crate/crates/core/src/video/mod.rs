//! Streaming video annotation: read frames, run a detector on every
//! `skip`-th frame, carry or track detections across skipped frames, draw
//! them, and write the annotated stream plus a JSON-lines sidecar.
//!
//! Stages are read → infer/track → draw/write. With a queue capacity of 1
//! they run one after another on the calling thread; larger capacities run
//! each stage on its own scoped thread joined by bounded channels. Output
//! is identical either way.

mod container;
mod draw;
mod model;
mod tracker;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::time::{Duration, Instant};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};
use crate::metrics::{per_100_ms, SpeedReport};

pub use container::{open_stream, write_stream, StreamInfo, StreamReader, StreamWriter, HEADER_LEN, MAGIC, VERSION};
pub use draw::{class_color, draw_annotations, pixel_rect, tag_rect, tag_text, PALETTE};
pub use model::{DetectorModel, FixedCostModel, PlaybackModel, SceneObject, SceneSpec, SyntheticDetector, MARKERS};
pub use tracker::{BoxRefiner, NccRefiner, Track, TrackedDetection, Tracker, TrackerConfig};

/// Where a frame's detections came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSource {
    /// The model ran on this frame.
    Fresh,
    /// Copied from the last fresh frame.
    Carried,
    /// Extrapolated by the tracker from the last fresh frame.
    Tracked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidecarDetection {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub conf: f32,
    pub class_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
}

impl SidecarDetection {
    pub fn new(d: &Detection<f32>, track_id: Option<u64>) -> Self {
        Self {
            x1: d.bbox.x1,
            y1: d.bbox.y1,
            x2: d.bbox.x2,
            y2: d.bbox.y2,
            conf: d.confidence,
            class_id: d.class_id,
            track_id,
        }
    }

    pub fn detection(&self) -> Detection<f32> {
        Detection::new(BBox::new(self.x1, self.y1, self.x2, self.y2), self.conf, self.class_id)
    }
}

/// First sidecar line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarHeader {
    pub labels: Vec<String>,
    #[serde(flatten)]
    pub stream: StreamInfo,
    pub skip: usize,
    pub track: bool,
}

/// One sidecar line per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: u64,
    pub source: FrameSource,
    /// Index of the fresh frame the detections derive from.
    pub from: u64,
    pub detections: Vec<SidecarDetection>,
}

pub fn read_sidecar<R: BufRead>(r: R) -> Result<(SidecarHeader, Vec<FrameRecord>)> {
    let mut lines = r.lines().enumerate();
    let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
        line: line + 1,
        message: e.to_string(),
    };
    let (i, first) = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("sidecar has no header line".into()))?;
    let header: SidecarHeader = serde_json::from_str(&first?).map_err(|e| parse_err(i, e))?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| parse_err(i, e))?);
    }
    Ok((header, records))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Run the model on every `skip`-th frame.
    pub skip: usize,
    /// Track instances and extrapolate boxes on skipped frames.
    pub track: bool,
    pub tracker: TrackerConfig,
    /// Pixel-content refinement of tracked boxes, searching this many
    /// pixels around the extrapolated position.
    pub refine_radius: Option<i32>,
    /// Bound of each inter-stage queue; 1 runs sequentially.
    pub queue_capacity: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            skip: 1,
            track: false,
            tracker: TrackerConfig::default(),
            refine_radius: None,
            queue_capacity: 1,
        }
    }
}

/// Accumulated time per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageTimes {
    pub read: Duration,
    pub model: Duration,
    pub track: Duration,
    pub draw: Duration,
    pub write: Duration,
}

impl StageTimes {
    /// Everything except model inference.
    pub fn overhead(&self) -> Duration {
        self.read + self.track + self.draw + self.write
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub stream: StreamInfo,
    pub frames: u64,
    pub model_calls: u64,
    pub times: StageTimes,
    pub total: Duration,
}

/// Number of model calls for `frames` frames at a given skip.
pub fn expected_model_calls(frames: u64, skip: usize) -> u64 {
    frames.div_ceil(skip as u64)
}

struct Inference<'m> {
    model: &'m mut dyn DetectorModel,
    tracker: Option<Tracker>,
    skip: u64,
    classes: usize,
    last_fresh: u64,
    last: Vec<Detection<f32>>,
    calls: u64,
    model_time: Duration,
    track_time: Duration,
}

impl<'m> Inference<'m> {
    fn new(model: &'m mut dyn DetectorModel, cfg: &PipelineConfig) -> Self {
        let classes = model.labels().len();
        let tracker = cfg.track.then(|| {
            let t = Tracker::new(cfg.tracker);
            match cfg.refine_radius {
                Some(r) => t.with_refiner(Box::new(NccRefiner::new(r))),
                None => t,
            }
        });
        Self {
            model,
            tracker,
            skip: cfg.skip as u64,
            classes,
            last_fresh: 0,
            last: Vec::new(),
            calls: 0,
            model_time: Duration::ZERO,
            track_time: Duration::ZERO,
        }
    }

    fn step(&mut self, index: u64, frame: &RgbImage) -> Result<FrameRecord> {
        let i = index as usize;
        if index % self.skip == 0 {
            let t = Instant::now();
            let dets = self.model.detect(frame, i).map_err(|e| match e {
                Error::Model { .. } => e,
                other => Error::Model {
                    frame: i,
                    message: other.to_string(),
                },
            })?;
            self.model_time += t.elapsed();
            self.calls += 1;
            if let Some(bad) = dets.iter().find(|d| !d.is_valid(self.classes)) {
                return Err(Error::Model {
                    frame: i,
                    message: format!("invalid detection {bad:?}"),
                });
            }
            self.last_fresh = index;
            let t = Instant::now();
            let detections = match &mut self.tracker {
                Some(tr) => tr
                    .update(&dets, i, Some(frame))
                    .iter()
                    .map(|td| SidecarDetection::new(&td.detection, Some(td.track_id)))
                    .collect(),
                None => dets.iter().map(|d| SidecarDetection::new(d, None)).collect(),
            };
            self.track_time += t.elapsed();
            self.last = dets;
            return Ok(FrameRecord {
                frame: index,
                source: FrameSource::Fresh,
                from: index,
                detections,
            });
        }
        let t = Instant::now();
        let record = match &mut self.tracker {
            Some(tr) => FrameRecord {
                frame: index,
                source: FrameSource::Tracked,
                from: self.last_fresh,
                detections: tr
                    .predict(i, Some(frame))
                    .iter()
                    .map(|td| SidecarDetection::new(&td.detection, Some(td.track_id)))
                    .collect(),
            },
            None => FrameRecord {
                frame: index,
                source: FrameSource::Carried,
                from: self.last_fresh,
                detections: self.last.iter().map(|d| SidecarDetection::new(d, None)).collect(),
            },
        };
        self.track_time += t.elapsed();
        Ok(record)
    }
}

struct Output<W: Write, S: Write> {
    writer: StreamWriter<W>,
    sidecar: S,
    labels: Vec<String>,
    draw_time: Duration,
    write_time: Duration,
}

impl<W: Write, S: Write> Output<W, S> {
    fn emit(&mut self, frame: &RgbImage, record: &FrameRecord) -> Result<()> {
        let t = Instant::now();
        let dets: Vec<Detection<f32>> = record.detections.iter().map(SidecarDetection::detection).collect();
        let annotated = draw_annotations(frame, &dets, &self.labels);
        self.draw_time += t.elapsed();
        let t = Instant::now();
        self.writer.write_frame(&annotated)?;
        serde_json::to_writer(&mut self.sidecar, record).map_err(std::io::Error::from)?;
        self.sidecar.write_all(b"\n")?;
        self.write_time += t.elapsed();
        Ok(())
    }
}

type Staged = Result<(u64, RgbImage)>;
type Inferred = Result<(RgbImage, FrameRecord)>;

/// Annotates `input` into `output` and writes one sidecar line per frame.
pub fn run_pipeline<R, W, S>(
    mut input: StreamReader<R>,
    model: &mut dyn DetectorModel,
    cfg: &PipelineConfig,
    output: W,
    mut sidecar: S,
) -> Result<PipelineSummary>
where
    R: Read + Send,
    W: Write + Send,
    S: Write + Send,
{
    if cfg.skip == 0 {
        return Err(Error::config("skip must be at least 1"));
    }
    if cfg.queue_capacity == 0 {
        return Err(Error::config("queue capacity must be at least 1"));
    }
    let start = Instant::now();
    let info = input.info();
    let labels = model.labels().to_vec();
    let header = SidecarHeader {
        labels: labels.clone(),
        stream: info,
        skip: cfg.skip,
        track: cfg.track,
    };
    serde_json::to_writer(&mut sidecar, &header).map_err(std::io::Error::from)?;
    sidecar.write_all(b"\n")?;

    let mut out = Output {
        writer: StreamWriter::new(output, info)?,
        sidecar,
        labels,
        draw_time: Duration::ZERO,
        write_time: Duration::ZERO,
    };
    let mut inference = Inference::new(model, cfg);
    let mut read_time = Duration::ZERO;
    let mut frames = 0u64;

    if cfg.queue_capacity <= 1 {
        loop {
            let t = Instant::now();
            let Some(frame) = input.read_frame()? else { break };
            read_time += t.elapsed();
            let record = inference.step(frames, &frame)?;
            out.emit(&frame, &record)?;
            frames += 1;
        }
    } else {
        let (raw_tx, raw_rx): (SyncSender<Staged>, Receiver<Staged>) = sync_channel(cfg.queue_capacity);
        let (inf_tx, inf_rx): (SyncSender<Inferred>, Receiver<Inferred>) = sync_channel(cfg.queue_capacity);
        let inference_ref = &mut inference;
        let result: Result<()> = std::thread::scope(|scope| {
            let reader = scope.spawn(move || {
                let mut elapsed = Duration::ZERO;
                let mut index = 0u64;
                loop {
                    let t = Instant::now();
                    let item = input.read_frame();
                    elapsed += t.elapsed();
                    let stop = !matches!(item, Ok(Some(_)));
                    let msg = item.transpose().map(|r| r.map(|f| (index, f)));
                    if let Some(msg) = msg {
                        if raw_tx.send(msg).is_err() {
                            break;
                        }
                    }
                    if stop {
                        break;
                    }
                    index += 1;
                }
                elapsed
            });
            scope.spawn(move || {
                for msg in raw_rx {
                    let res = msg.and_then(|(i, f)| inference_ref.step(i, &f).map(|r| (f, r)));
                    let failed = res.is_err();
                    if inf_tx.send(res).is_err() || failed {
                        break;
                    }
                }
            });
            for msg in inf_rx {
                let (frame, record) = msg?;
                out.emit(&frame, &record)?;
                frames += 1;
            }
            read_time = reader.join().expect("reader thread panicked");
            Ok(())
        });
        result?;
    }

    let Output {
        writer,
        mut sidecar,
        draw_time,
        write_time,
        ..
    } = out;
    writer.finish()?;
    sidecar.flush()?;
    Ok(PipelineSummary {
        stream: info,
        frames,
        model_calls: inference.calls,
        times: StageTimes {
            read: read_time,
            model: inference.model_time,
            track: inference.track_time,
            draw: draw_time,
            write: write_time,
        },
        total: start.elapsed(),
    })
}

/// File-to-file convenience wrapper around [`run_pipeline`].
pub fn annotate_file(
    input: &Path,
    output: &Path,
    sidecar: &Path,
    model: &mut dyn DetectorModel,
    cfg: &PipelineConfig,
) -> Result<PipelineSummary> {
    let reader = open_stream(input)?;
    let out = BufWriter::new(File::create(output)?);
    let side = BufWriter::new(File::create(sidecar)?);
    run_pipeline(reader, model, cfg, out, side)
}

/// End-to-end throughput with model time separated from overhead.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub width: u32,
    pub height: u32,
    pub frames: u64,
    pub skip: usize,
    pub model_calls: u64,
    pub total: Duration,
    pub model: Duration,
    /// Reading, tracking, drawing and writing.
    pub overhead: Duration,
    pub speed: SpeedReport,
}

impl BenchReport {
    pub fn fps(&self) -> f64 {
        let s = self.total.as_secs_f64();
        if s == 0.0 {
            0.0
        } else {
            self.frames as f64 / s
        }
    }

    pub fn model_ms_per_100(&self) -> f64 {
        per_100_ms(self.model, self.frames as usize)
    }

    /// `(model + overhead) / total`.
    pub fn accounted_fraction(&self) -> f64 {
        let t = self.total.as_secs_f64();
        if t == 0.0 {
            1.0
        } else {
            (self.model + self.overhead).as_secs_f64() / t
        }
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        writeln!(f, "resolution       {}x{}", self.width, self.height)?;
        writeln!(f, "frames           {}", self.frames)?;
        writeln!(f, "skip             {}", self.skip)?;
        writeln!(f, "model calls      {}", self.model_calls)?;
        writeln!(f, "total            {:.3} ms", ms(self.total))?;
        writeln!(f, "model            {:.3} ms", ms(self.model))?;
        writeln!(f, "overhead         {:.3} ms", ms(self.overhead))?;
        writeln!(f, "frames/s         {:.3}", self.fps())?;
        write!(f, "ms per 100 frames {:.3}", self.speed.ms_per_100)
    }
}

/// Runs the sequential pipeline into a sink and reports its timing.
pub fn pipeline_bench<R: Read + Send>(
    input: StreamReader<R>,
    model: &mut dyn DetectorModel,
    skip: usize,
) -> Result<BenchReport> {
    let cfg = PipelineConfig {
        skip,
        ..Default::default()
    };
    let s = run_pipeline(input, model, &cfg, std::io::sink(), std::io::sink())?;
    Ok(BenchReport {
        width: s.stream.width,
        height: s.stream.height,
        frames: s.frames,
        skip,
        model_calls: s.model_calls,
        total: s.total,
        model: s.times.model,
        overhead: s.times.overhead(),
        speed: SpeedReport::new(s.frames as usize, s.total),
    })
}

/// Writes every frame as `<dir>/<index:06>.ppm` for use with other tools.
pub fn export_frames<R: Read>(stream: StreamReader<R>, dir: &Path) -> Result<u64> {
    std::fs::create_dir_all(dir)?;
    let mut n = 0;
    for frame in stream {
        let f = BufWriter::new(File::create(dir.join(format!("{n:06}.ppm")))?);
        crate::dataset::write_ppm(f, &frame?)?;
        n += 1;
    }
    Ok(n)
}

/// Packs images (PPM or any format the image crate reads) into a stream.
pub fn import_frames(paths: &[PathBuf], fps: (u32, u32), output: &Path) -> Result<StreamInfo> {
    let first = paths
        .first()
        .ok_or_else(|| Error::EmptyInput("no frames to import".into()))?;
    let img = crate::dataset::load_image(first)?;
    let info = StreamInfo {
        width: img.width(),
        height: img.height(),
        fps_num: fps.0,
        fps_den: fps.1,
        frame_count: paths.len() as u64,
    };
    let mut w = StreamWriter::new(BufWriter::new(File::create(output)?), info)?;
    w.write_frame(&img)?;
    for p in &paths[1..] {
        w.write_frame(&crate::dataset::load_image(p)?)?;
    }
    w.finish()?;
    Ok(info)
}
