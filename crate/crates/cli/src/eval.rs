use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use maskpipe::dataset::{load_slices, read_voc_dir, split_4to1, split_grouped, LabelCatalog, SliceSample};
use maskpipe::fewshot::{
    embed_slices, read_embeddings, run_episode, sweep_support_sizes, BaselineEmbedder, CovarianceMode, DistanceMode,
    EpisodeConfig, EpisodeData, LabeledEmbedding, SupportSize, SweepTable,
};
use maskpipe::geometry::Detection;
use maskpipe::metrics::{
    match_detections, precision_recall_f1, render_report, CellFormat, ClassCounts, Column, Prf, ReportStyle,
    ReportTable,
};
use maskpipe::video::SidecarDetection;
use maskpipe::{Error, Result};

use crate::args::{EpisodeArgs, EvalCmd, GlobalArgs};
use crate::tools::need;

pub fn run(cmd: EvalCmd, g: &GlobalArgs) -> Result<()> {
    match cmd {
        EvalCmd::Detections {
            pred,
            truth,
            iou_thresh,
            conf_thresh,
            out,
        } => detections(&pred, &truth, iou_thresh, conf_thresh, out.as_deref()),
        EvalCmd::Episodic { episode, support_size } => {
            let size: SupportSize = support_size.parse()?;
            let (data, cfg) = prepare(&episode, g)?;
            let report = run_episode(
                &data,
                &EpisodeConfig {
                    support_size: size,
                    ..cfg
                },
            )?;
            for c in &report.per_class {
                println!("{:<24} {:>5} / {:<5} {:.4}", c.name, c.correct, c.total, c.accuracy());
            }
            println!();
            let table = SweepTable { rows: vec![report] }.to_report(&episode.extractor);
            emit(&table, episode.out.as_deref())
        }
        EvalCmd::Sweep { episode, support_size } => {
            let sizes = support_size
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<Vec<SupportSize>>>()?;
            let (data, cfg) = prepare(&episode, g)?;
            let sweep = sweep_support_sizes(&data, &sizes, &cfg)?;
            emit(&sweep.to_report(&episode.extractor), episode.out.as_deref())
        }
    }
}

fn emit(table: &ReportTable, csv: Option<&Path>) -> Result<()> {
    print!("{}", render_report(table, ReportStyle::Text));
    if let Some(path) = csv {
        fs::write(path, render_report(table, ReportStyle::Csv))?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct PredLine {
    image: String,
    detections: Vec<SidecarDetection>,
}

fn stem(name: &str) -> &str {
    Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name)
}

fn detections(pred: &Path, truth: &Path, iou: f64, conf: f64, out: Option<&Path>) -> Result<()> {
    need(pred)?;
    need(truth)?;
    let catalog = LabelCatalog::mask();
    let anns = read_voc_dir(truth, &catalog)?;
    if anns.is_empty() {
        return Err(Error::EmptyInput(format!("no annotations in {}", truth.display())));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, a) in anns.iter().enumerate() {
        index.insert(&a.filename, i);
        index.entry(stem(&a.filename)).or_insert(i);
    }

    let text = fs::read_to_string(pred)?;
    let mut predicted: Vec<Vec<Detection<f64>>> = vec![Vec::new(); anns.len()];
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredLine = serde_json::from_str(line).map_err(|e| Error::Format {
            offset: start,
            message: format!("{}: {e}", pred.display()),
        })?;
        let i = *index
            .get(rec.image.as_str())
            .or_else(|| index.get(stem(&rec.image)))
            .ok_or_else(|| Error::Config(format!("predictions for {:?} have no annotation", rec.image)))?;
        predicted[i].extend(
            rec.detections
                .iter()
                .map(|d| d.detection().cast::<f64>())
                .filter(|d| d.confidence >= conf),
        );
    }

    let counts = anns
        .iter()
        .zip(&predicted)
        .fold(vec![ClassCounts::default(); catalog.len()], |acc, (a, p)| {
            let c = match_detections(p, &a.unit_boxes(), iou, catalog.len());
            acc.into_iter().zip(c).map(|(x, y)| x.merge(y)).collect()
        });
    let report = precision_recall_f1(&counts);

    let row = |label: &str, p: &Prf, c: Option<&ClassCounts>| {
        let n = |v: Option<u64>| v.map(|x| x as f64);
        (
            label.to_string(),
            vec![
                Some(p.precision),
                Some(p.recall),
                Some(p.f1),
                n(c.map(|c| c.tp)),
                n(c.map(|c| c.fp)),
                n(c.map(|c| c.fn_)),
            ],
        )
    };
    let mut rows: Vec<_> = (0..catalog.len())
        .map(|k| {
            row(
                catalog.display_name(k).unwrap_or_default(),
                &report.per_class[k],
                Some(&counts[k]),
            )
        })
        .collect();
    rows.push(row("macro", &report.macro_avg, None));
    let total = counts.iter().fold(ClassCounts::default(), |a, &b| a.merge(b));
    rows.push(row("micro", &report.micro, Some(&total)));
    let table = ReportTable {
        label: Column::new("Class", "class", CellFormat::Shortest),
        columns: vec![
            Column::new("Precision", "precision", CellFormat::Fixed(3)),
            Column::new("Recall", "recall", CellFormat::Fixed(3)),
            Column::new("F1", "f1", CellFormat::Fixed(3)),
            Column::new("TP", "tp", CellFormat::Shortest),
            Column::new("FP", "fp", CellFormat::Shortest),
            Column::new("FN", "fn", CellFormat::Shortest),
        ],
        rows,
    };
    emit(&table, out)
}

enum Pool {
    Slices(Vec<SliceSample>),
    Embedded(Vec<LabeledEmbedding<f64>>),
}

fn load_pool(path: &Path) -> Result<Pool> {
    need(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("memb")) {
        let f = fs::File::open(path)?;
        Ok(Pool::Embedded(read_embeddings(std::io::BufReader::new(f))?))
    } else {
        Ok(Pool::Slices(load_slices(path)?))
    }
}

fn embed(pool: Pool) -> Vec<LabeledEmbedding<f64>> {
    match pool {
        Pool::Slices(s) => embed_slices(&BaselineEmbedder, &s),
        Pool::Embedded(e) => e,
    }
}

fn prepare(a: &EpisodeArgs, g: &GlobalArgs) -> Result<(EpisodeData<f64>, EpisodeConfig)> {
    let catalog = LabelCatalog::mask();
    let train = load_pool(&a.train)?;
    let (train, validation) = match &a.val {
        Some(v) => (embed(train), embed(load_pool(v)?)),
        None => match train {
            Pool::Slices(s) => {
                let (t, v) = split_grouped(&s, |x| x.image_id.clone(), g.seed);
                (embed(Pool::Slices(t)), embed(Pool::Slices(v)))
            }
            Pool::Embedded(e) => split_4to1(&e, g.seed),
        },
    };
    if validation.is_empty() {
        return Err(Error::EmptyInput("no validation samples".into()));
    }
    let cfg = EpisodeConfig {
        support_size: SupportSize::Full,
        seed: g.seed,
        epsilon: a.epsilon,
        covariance: if a.ridge_only {
            CovarianceMode::RidgeOnly
        } else {
            CovarianceMode::Blend
        },
        distance: if a.euclidean {
            DistanceMode::Euclidean
        } else {
            DistanceMode::Mahalanobis
        },
        undersample_cap: a.cap,
    };
    let data = EpisodeData {
        labels: catalog.display_names().to_vec(),
        train,
        validation,
    };
    Ok((data, cfg))
}
