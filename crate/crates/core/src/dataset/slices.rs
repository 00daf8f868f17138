use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;

use super::ppm::{read_ppm, write_ppm};
use super::voc::{PixelBox, VocAnnotation};
use super::Labeled;
use crate::error::{Error, Result};

/// One annotated object cropped out of its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub image_id: String,
    pub bbox: PixelBox,
    pub class_id: usize,
    pub pixels: RgbImage,
}

impl Labeled for SliceSample {
    fn class_id(&self) -> usize {
        self.class_id
    }
}

/// Per-class sample counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassHistogram {
    pub counts: Vec<usize>,
}

impl ClassHistogram {
    pub fn from_labels<L: Labeled>(items: &[L], classes: usize) -> Self {
        let mut counts = vec![0; classes];
        for it in items {
            let k = it.class_id();
            if k >= counts.len() {
                counts.resize(k + 1, 0);
            }
            counts[k] += 1;
        }
        Self { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Largest over smallest class count; `None` if some class is empty.
    pub fn imbalance_ratio(&self) -> Option<f64> {
        let max = *self.counts.iter().max()?;
        let min = *self.counts.iter().min()?;
        (min > 0).then(|| max as f64 / min as f64)
    }

    /// Associative combination of two partial histograms.
    pub fn merge(&self, other: &Self) -> Self {
        let n = self.counts.len().max(other.counts.len());
        Self {
            counts: (0..n)
                .map(|i| self.counts.get(i).unwrap_or(&0) + other.counts.get(i).unwrap_or(&0))
                .collect(),
        }
    }
}

impl fmt::Display for ClassHistogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.counts.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" / "))
    }
}

/// Source of full-size images, addressed by annotation file name.
pub trait ImageSource {
    fn load(&self, filename: &str) -> Result<RgbImage>;
}

impl ImageSource for HashMap<String, RgbImage> {
    fn load(&self, filename: &str) -> Result<RgbImage> {
        self.get(filename)
            .cloned()
            .ok_or_else(|| Error::MissingImage(filename.to_string()))
    }
}

/// Images stored as files under one directory.
#[derive(Debug, Clone)]
pub struct DirImageSource {
    pub root: PathBuf,
}

impl DirImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ImageSource for DirImageSource {
    fn load(&self, filename: &str) -> Result<RgbImage> {
        let path = self.root.join(filename);
        if !path.is_file() {
            return Err(Error::MissingImage(path.display().to_string()));
        }
        load_image(&path)
    }
}

pub(crate) fn load_image(path: &Path) -> Result<RgbImage> {
    let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        return read_ppm(fs::File::open(path)?);
    }
    image::open(path).map(|img| img.to_rgb8()).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Crops every annotated object out of its image.
pub fn build_slices(
    annotations: &[VocAnnotation],
    source: &dyn ImageSource,
    classes: usize,
) -> Result<(Vec<SliceSample>, ClassHistogram)> {
    let mut slices = Vec::new();
    for ann in annotations {
        if ann.objects.is_empty() {
            continue;
        }
        let img = source.load(&ann.filename)?;
        for obj in &ann.objects {
            obj.bbox.validate(img.width(), img.height())?;
            let (x, y, w, h) = obj.bbox.crop_rect();
            let pixels = image::imageops::crop_imm(&img, x, y, w, h).to_image();
            slices.push(SliceSample {
                image_id: ann.filename.clone(),
                bbox: obj.bbox,
                class_id: obj.class_id,
                pixels,
            });
        }
    }
    let hist = ClassHistogram::from_labels(&slices, classes);
    Ok((slices, hist))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CropFormat {
    #[default]
    Ppm,
    Png,
}

impl CropFormat {
    fn extension(self) -> &'static str {
        match self {
            CropFormat::Ppm => "ppm",
            CropFormat::Png => "png",
        }
    }
}

/// One line of a slice manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: PixelBox,
    /// Crop file, relative to the manifest's directory.
    pub path: PathBuf,
}

impl Labeled for ManifestEntry {
    fn class_id(&self) -> usize {
        self.class_id
    }
}

const MANIFEST_HEADER: &str = "# image_id\tclass_id\tbox\tcrop";

/// Writes tab-separated records: image id, class id, `xmin,ymin,xmax,ymax`, crop path.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{MANIFEST_HEADER}")?;
    for e in entries {
        let b = e.bbox;
        writeln!(
            w,
            "{}\t{}\t{},{},{},{}\t{}",
            e.image_id,
            e.class_id,
            b.xmin,
            b.ymin,
            b.xmax,
            b.ymax,
            e.path.display()
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: format!("{}: {m}", path.display()),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [image_id, class_id, bbox, crop] = fields[..] else {
            return Err(bad("expected 4 tab-separated fields"));
        };
        let class_id = class_id.parse().map_err(|_| bad("class id is not an integer"))?;
        let coords: Vec<u32> = bbox
            .split(',')
            .map(|c| c.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("box must be four integers"))?;
        let [xmin, ymin, xmax, ymax] = coords[..] else {
            return Err(bad("box must be four integers"));
        };
        out.push(ManifestEntry {
            image_id: image_id.to_string(),
            class_id,
            bbox: PixelBox::new(xmin, ymin, xmax, ymax),
            path: PathBuf::from(crop),
        });
    }
    Ok(out)
}

/// Stores crops under `dir/crops/` and writes `dir/manifest.tsv`.
pub fn write_slices(dir: &Path, slices: &[SliceSample], format: CropFormat) -> Result<Vec<ManifestEntry>> {
    let crops = dir.join("crops");
    fs::create_dir_all(&crops)?;
    let mut per_image: HashMap<&str, usize> = HashMap::new();
    let mut entries = Vec::with_capacity(slices.len());
    for s in slices {
        let n = per_image.entry(&s.image_id).or_insert(0);
        let stem = Path::new(&s.image_id)
            .file_stem()
            .map(|x| x.to_string_lossy().into_owned())
            .unwrap_or_else(|| s.image_id.clone());
        let rel = PathBuf::from("crops").join(format!("{stem}_{n}.{}", format.extension()));
        *n += 1;
        let full = dir.join(&rel);
        match format {
            CropFormat::Ppm => write_ppm(BufWriter::new(fs::File::create(&full)?), &s.pixels)?,
            CropFormat::Png => s.pixels.save(&full).map_err(|e| Error::Image {
                path: full.clone(),
                message: e.to_string(),
            })?,
        }
        entries.push(ManifestEntry {
            image_id: s.image_id.clone(),
            class_id: s.class_id,
            bbox: s.bbox,
            path: rel,
        });
    }
    write_manifest(&dir.join("manifest.tsv"), &entries)?;
    Ok(entries)
}

/// Loads every crop listed in a manifest.
pub fn load_slices(manifest: &Path) -> Result<Vec<SliceSample>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let path = base.join(&e.path);
            if !path.is_file() {
                return Err(Error::MissingImage(path.display().to_string()));
            }
            Ok(SliceSample {
                image_id: e.image_id,
                bbox: e.bbox,
                class_id: e.class_id,
                pixels: load_image(&path)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabelCatalog, VocObject};

    fn annotation(name: &str, boxes: &[(PixelBox, usize)]) -> VocAnnotation {
        let catalog = LabelCatalog::mask();
        VocAnnotation {
            folder: "images".into(),
            filename: name.into(),
            width: 20,
            height: 10,
            depth: 3,
            segmented: false,
            objects: boxes
                .iter()
                .map(|&(bbox, k)| VocObject {
                    name: catalog.name(k).unwrap().into(),
                    class_id: k,
                    pose: "Unspecified".into(),
                    truncated: false,
                    occluded: false,
                    difficult: false,
                    bbox,
                })
                .collect(),
        }
    }

    fn source() -> HashMap<String, RgbImage> {
        let img = RgbImage::from_fn(20, 10, |x, y| image::Rgb([x as u8, y as u8, (x * y) as u8]));
        HashMap::from([("a.png".to_string(), img)])
    }

    #[test]
    fn empty_annotations_yield_nothing() {
        let (s, h) = build_slices(&[], &source(), 3).unwrap();
        assert!(s.is_empty());
        assert_eq!(h.counts, vec![0, 0, 0]);
    }

    #[test]
    fn one_slice_per_object_cropped_exactly() {
        let boxes = [
            (PixelBox::new(1, 1, 4, 3), 0),
            (PixelBox::new(5, 2, 20, 10), 1),
            (PixelBox::new(10, 5, 12, 6), 0),
        ];
        let src = source();
        let (slices, hist) = build_slices(&[annotation("a.png", &boxes)], &src, 3).unwrap();
        assert_eq!(slices.len(), 3);
        assert_eq!(hist.counts, vec![2, 1, 0]);
        let img = &src["a.png"];
        for s in &slices {
            let (x0, y0, w, h) = s.bbox.crop_rect();
            assert_eq!(s.pixels.dimensions(), (w, h));
            for (x, y, p) in s.pixels.enumerate_pixels() {
                assert_eq!(p, img.get_pixel(x0 + x, y0 + y));
            }
        }
    }

    #[test]
    fn missing_image_is_named() {
        let ann = annotation("b.png", &[(PixelBox::new(1, 1, 4, 3), 0)]);
        match build_slices(&[ann], &source(), 3) {
            Err(Error::MissingImage(n)) => assert_eq!(n, "b.png"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn histogram_display_and_ratio() {
        let h = ClassHistogram {
            counts: vec![2546, 508, 91],
        };
        assert_eq!(h.to_string(), "2546 / 508 / 91");
        assert!((h.imbalance_ratio().unwrap() - 2546.0 / 91.0).abs() < 1e-12);
        assert_eq!(ClassHistogram { counts: vec![3, 0] }.imbalance_ratio(), None);
        let m = h.merge(&ClassHistogram { counts: vec![1, 1, 1] });
        assert_eq!(m.counts, vec![2547, 509, 92]);
    }

    #[test]
    fn slices_survive_disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let boxes = [(PixelBox::new(1, 1, 4, 3), 2), (PixelBox::new(5, 2, 20, 10), 1)];
        let (slices, _) = build_slices(&[annotation("a.png", &boxes)], &source(), 3).unwrap();
        for format in [CropFormat::Ppm, CropFormat::Png] {
            let entries = write_slices(dir.path(), &slices, format).unwrap();
            assert_eq!(read_manifest(&dir.path().join("manifest.tsv")).unwrap(), entries);
            assert_eq!(load_slices(&dir.path().join("manifest.tsv")).unwrap(), slices);
        }
    }
}
