use std::fs;
use std::path::{Path, PathBuf};

use maskpipe::augment::{apply_plan_to_slice, AugmentPlan};
use maskpipe::dataset::{
    build_slices, load_slices, read_manifest, read_voc_dir, split_4to1, split_grouped, undersample, write_manifest,
    write_slices, ClassHistogram, CropFormat, DirImageSource, LabelCatalog, ManifestEntry, SliceSample,
};
use maskpipe::{Error, Result};

use crate::args::{CropFormatArg, DatasetCmd, GlobalArgs, SplitBy};
use crate::tools::{load_config, need};

pub fn run(cmd: DatasetCmd, g: &GlobalArgs) -> Result<()> {
    let catalog = LabelCatalog::mask();
    match cmd {
        DatasetCmd::BuildSlices {
            annotations,
            images,
            out,
            format,
        } => {
            need(&annotations)?;
            need(&images)?;
            let anns = read_voc_dir(&annotations, &catalog)?;
            if anns.is_empty() {
                return Err(Error::EmptyInput(format!(
                    "no annotations in {}",
                    annotations.display()
                )));
            }
            let (slices, hist) = build_slices(&anns, &DirImageSource::new(images), catalog.len())?;
            let format = match format {
                CropFormatArg::Ppm => CropFormat::Ppm,
                CropFormatArg::Png => CropFormat::Png,
            };
            fs::create_dir_all(&out)?;
            write_slices(&out, &slices, format)?;
            println!("{} slices from {} annotations", slices.len(), anns.len());
            print_histogram(&hist);
            Ok(())
        }
        DatasetCmd::Stats { annotations, manifest } => {
            let hist = match (annotations, manifest) {
                (Some(dir), _) => {
                    need(&dir)?;
                    let anns = read_voc_dir(&dir, &catalog)?;
                    let objects: Vec<_> = anns.iter().flat_map(|a| a.objects.iter().map(|o| o.class_id)).collect();
                    if objects.is_empty() {
                        return Err(Error::EmptyInput(format!("no annotated objects in {}", dir.display())));
                    }
                    ClassHistogram::from_labels(&objects.iter().map(|&k| Id(k)).collect::<Vec<_>>(), catalog.len())
                }
                (None, Some(path)) => {
                    need(&path)?;
                    let entries = read_manifest(&path)?;
                    if entries.is_empty() {
                        return Err(Error::EmptyInput(format!("{} lists no slices", path.display())));
                    }
                    ClassHistogram::from_labels(&entries, catalog.len())
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            print_histogram(&hist);
            Ok(())
        }
        DatasetCmd::Undersample { manifest, cap, out } => {
            need(&manifest)?;
            let entries = read_manifest(&manifest)?;
            let kept = undersample(&entries, cap, g.seed)?;
            write_manifest(&out, &relocate(&kept, &manifest, &out)?)?;
            print_histogram(&ClassHistogram::from_labels(&kept, catalog.len()));
            Ok(())
        }
        DatasetCmd::Split { manifest, out, by } => {
            need(&manifest)?;
            let entries = read_manifest(&manifest)?;
            let (train, val) = match by {
                SplitBy::Image => split_grouped(&entries, |e| e.image_id.clone(), g.seed),
                SplitBy::Slice => split_4to1(&entries, g.seed),
            };
            fs::create_dir_all(&out)?;
            let train_path = out.join("train.tsv");
            let val_path = out.join("val.tsv");
            write_manifest(&train_path, &relocate(&train, &manifest, &train_path)?)?;
            write_manifest(&val_path, &relocate(&val, &manifest, &val_path)?)?;
            println!("train {}  val {}", train.len(), val.len());
            Ok(())
        }
        DatasetCmd::Augment { manifest, out, copies } => {
            need(&manifest)?;
            let slices = load_slices(&manifest)?;
            let mut plan = match load_config(g)? {
                Some(cfg) => cfg.augment.unwrap_or_default(),
                None => AugmentPlan::default(),
            };
            plan.seed = g.seed;
            plan.validate()?;
            let augmented: Vec<SliceSample> = slices
                .iter()
                .enumerate()
                .flat_map(|(i, s)| {
                    let plan = &plan;
                    (0..copies).map(move |c| apply_plan_to_slice(s, plan, (i * copies + c) as u64))
                })
                .collect();
            fs::create_dir_all(&out)?;
            write_slices(&out, &augmented, CropFormat::Ppm)?;
            println!(
                "{} augmented slices ({} transforms)",
                augmented.len(),
                plan.enabled.names().join(", ")
            );
            Ok(())
        }
    }
}

struct Id(usize);

impl maskpipe::dataset::Labeled for Id {
    fn class_id(&self) -> usize {
        self.0
    }
}

fn print_histogram(hist: &ClassHistogram) {
    println!("{hist}");
    match hist.imbalance_ratio() {
        Some(r) => println!("imbalance ratio {r:.2}"),
        None => println!("imbalance ratio undefined (empty class)"),
    }
}

/// Rewrites crop paths so they resolve from the directory of `to`.
fn relocate(entries: &[ManifestEntry], from: &Path, to: &Path) -> Result<Vec<ManifestEntry>> {
    let dir = |p: &Path| -> Result<PathBuf> {
        let parent = p
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Ok(fs::canonicalize(parent)?)
    };
    let src = dir(from)?;
    if let Some(parent) = to.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    if src == dir(to)? {
        return Ok(entries.to_vec());
    }
    Ok(entries
        .iter()
        .map(|e| ManifestEntry {
            path: src.join(&e.path),
            ..e.clone()
        })
        .collect())
}
