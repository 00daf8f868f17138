use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::LabelCatalog;
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// VOC pixel box: 1-based inclusive corner coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelBox {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

impl PixelBox {
    pub fn new(xmin: u32, ymin: u32, xmax: u32, ymax: u32) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        if self.xmin >= self.xmax || self.ymin >= self.ymax {
            return Err(Error::InvalidBox(format!(
                "{self:?}: min corner must be strictly below max corner"
            )));
        }
        if self.xmin < 1 || self.ymin < 1 || self.xmax > width || self.ymax > height {
            return Err(Error::InvalidBox(format!(
                "{self:?} outside image of {width}x{height} pixels"
            )));
        }
        Ok(())
    }

    /// Zero-based crop rectangle `(x, y, w, h)`.
    pub fn crop_rect(&self) -> (u32, u32, u32, u32) {
        (
            self.xmin - 1,
            self.ymin - 1,
            self.xmax - self.xmin + 1,
            self.ymax - self.ymin + 1,
        )
    }

    /// The box covered by the pixels, normalized to the image size.
    pub fn to_unit(&self, width: u32, height: u32) -> BBox<f64> {
        let (w, h) = (width as f64, height as f64);
        BBox::new(
            (self.xmin - 1) as f64 / w,
            (self.ymin - 1) as f64 / h,
            self.xmax as f64 / w,
            self.ymax as f64 / h,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocObject {
    pub name: String,
    pub class_id: usize,
    pub pose: String,
    pub truncated: bool,
    pub occluded: bool,
    pub difficult: bool,
    pub bbox: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocAnnotation {
    pub folder: String,
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub depth: u32,
    pub segmented: bool,
    pub objects: Vec<VocObject>,
}

impl VocAnnotation {
    /// `(box, class_id)` pairs in normalized coordinates.
    pub fn unit_boxes(&self) -> Vec<(BBox<f64>, usize)> {
        self.objects
            .iter()
            .map(|o| (o.bbox.to_unit(self.width, self.height), o.class_id))
            .collect()
    }
}

fn line_of(doc: &roxmltree::Document, node: roxmltree::Node) -> u32 {
    doc.text_pos_at(node.range().start).row
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn text_of<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).map(|c| c.text().unwrap_or("").trim())
}

fn required<'a>(doc: &roxmltree::Document, node: roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str> {
    text_of(node, name).ok_or_else(|| Error::Xml {
        line: line_of(doc, node),
        message: format!("<{}> lacks <{name}>", node.tag_name().name()),
    })
}

fn number(doc: &roxmltree::Document, node: roxmltree::Node, name: &str) -> Result<u32> {
    let raw = required(doc, node, name)?;
    let bad = || Error::Xml {
        line: line_of(doc, child(node, name).unwrap_or(node)),
        message: format!("<{name}> value {raw:?} is not a non-negative number"),
    };
    if let Ok(v) = raw.parse::<u32>() {
        return Ok(v);
    }
    // Some exporters write pixel coordinates as decimals.
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 && v <= u32::MAX as f64 => Ok(v.round() as u32),
        _ => Err(bad()),
    }
}

fn flag(node: roxmltree::Node, name: &str) -> bool {
    text_of(node, name).is_some_and(|t| t != "0" && !t.is_empty())
}

/// Parses one VOC annotation document against a label catalog.
pub fn parse_voc(xml: &str, catalog: &LabelCatalog) -> Result<VocAnnotation> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| Error::Xml {
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(Error::Xml {
            line: line_of(&doc, root),
            message: format!("root element is <{}>, expected <annotation>", root.tag_name().name()),
        });
    }
    let size = child(root, "size").ok_or_else(|| Error::Xml {
        line: line_of(&doc, root),
        message: "<annotation> lacks <size>".into(),
    })?;
    let width = number(&doc, size, "width")?;
    let height = number(&doc, size, "height")?;
    let depth = if child(size, "depth").is_some() {
        number(&doc, size, "depth")?
    } else {
        3
    };

    let mut objects = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let name = required(&doc, obj, "name")?.to_string();
        let class_id = catalog.id_of(&name).ok_or_else(|| Error::UnknownClass(name.clone()))?;
        let bnd = child(obj, "bndbox").ok_or_else(|| Error::Xml {
            line: line_of(&doc, obj),
            message: "<object> lacks <bndbox>".into(),
        })?;
        let bbox = PixelBox::new(
            number(&doc, bnd, "xmin")?,
            number(&doc, bnd, "ymin")?,
            number(&doc, bnd, "xmax")?,
            number(&doc, bnd, "ymax")?,
        );
        bbox.validate(width, height)?;
        objects.push(VocObject {
            name,
            class_id,
            pose: text_of(obj, "pose").unwrap_or("Unspecified").to_string(),
            truncated: flag(obj, "truncated"),
            occluded: flag(obj, "occluded"),
            difficult: flag(obj, "difficult"),
            bbox,
        });
    }

    Ok(VocAnnotation {
        folder: text_of(root, "folder").unwrap_or("").to_string(),
        filename: required(&doc, root, "filename")?.to_string(),
        width,
        height,
        depth,
        segmented: flag(root, "segmented"),
        objects,
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Writes the annotation in the common four-space-indented VOC layout.
pub fn serialize_voc(a: &VocAnnotation) -> String {
    let b = |v: bool| u8::from(v);
    let mut s = String::from("<annotation>\n");
    let _ = writeln!(s, "    <folder>{}</folder>", escape(&a.folder));
    let _ = writeln!(s, "    <filename>{}</filename>", escape(&a.filename));
    let _ = writeln!(
        s,
        "    <size>\n        <width>{}</width>\n        <height>{}</height>\n        <depth>{}</depth>\n    </size>",
        a.width, a.height, a.depth
    );
    let _ = writeln!(s, "    <segmented>{}</segmented>", b(a.segmented));
    for o in &a.objects {
        let _ = write!(
            s,
            "    <object>\n        <name>{}</name>\n        <pose>{}</pose>\n        <truncated>{}</truncated>\n        \
             <occluded>{}</occluded>\n        <difficult>{}</difficult>\n        <bndbox>\n            \
             <xmin>{}</xmin>\n            <ymin>{}</ymin>\n            <xmax>{}</xmax>\n            \
             <ymax>{}</ymax>\n        </bndbox>\n    </object>\n",
            escape(&o.name),
            escape(&o.pose),
            b(o.truncated),
            b(o.occluded),
            b(o.difficult),
            o.bbox.xmin,
            o.bbox.ymin,
            o.bbox.xmax,
            o.bbox.ymax
        );
    }
    s.push_str("</annotation>\n");
    s
}

/// Parses every `*.xml` file of a directory, sorted by file name.
pub fn read_voc_dir(dir: &Path, catalog: &LabelCatalog) -> Result<Vec<VocAnnotation>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            parse_voc(&text, catalog).map_err(|e| match e {
                Error::Xml { line, message } => Error::Xml {
                    line,
                    message: format!("{}: {message}", p.display()),
                },
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"<annotation>
    <folder>images</folder>
    <filename>maksssksksss0.png</filename>
    <size>
        <width>512</width>
        <height>366</height>
        <depth>3</depth>
    </size>
    <segmented>0</segmented>
    <object>
        <name>with_mask</name>
        <pose>Unspecified</pose>
        <truncated>0</truncated>
        <occluded>0</occluded>
        <difficult>0</difficult>
        <bndbox>
            <xmin>79</xmin>
            <ymin>105</ymin>
            <xmax>109</xmax>
            <ymax>142</ymax>
        </bndbox>
    </object>
</annotation>"#;

    #[test]
    fn parses_minimal_fixture() {
        let a = parse_voc(MINIMAL, &LabelCatalog::mask()).unwrap();
        assert_eq!(a.filename, "maksssksksss0.png");
        assert_eq!((a.width, a.height, a.depth), (512, 366, 3));
        assert_eq!(a.objects.len(), 1);
        assert_eq!(a.objects[0].class_id, 0);
        assert_eq!(a.objects[0].bbox, PixelBox::new(79, 105, 109, 142));
    }

    #[test]
    fn round_trip_fixpoint() {
        let a = parse_voc(MINIMAL, &LabelCatalog::mask()).unwrap();
        let text = serialize_voc(&a);
        let b = parse_voc(&text, &LabelCatalog::mask()).unwrap();
        assert_eq!(a, b);
        assert_eq!(serialize_voc(&b), text);
    }

    #[test]
    fn empty_box_is_rejected() {
        let xml = MINIMAL.replace("<xmax>109</xmax>", "<xmax>79</xmax>");
        assert!(matches!(
            parse_voc(&xml, &LabelCatalog::mask()),
            Err(Error::InvalidBox(_))
        ));
        let xml = MINIMAL
            .replace("<xmin>79</xmin>", "<xmin>50</xmin>")
            .replace("<xmax>109</xmax>", "<xmax>50</xmax>");
        assert!(matches!(
            parse_voc(&xml, &LabelCatalog::mask()),
            Err(Error::InvalidBox(_))
        ));
    }

    #[test]
    fn box_outside_image_is_rejected() {
        let xml = MINIMAL.replace("<xmax>109</xmax>", "<xmax>600</xmax>");
        assert!(matches!(
            parse_voc(&xml, &LabelCatalog::mask()),
            Err(Error::InvalidBox(_))
        ));
    }

    #[test]
    fn unknown_class_reports_name() {
        let xml = MINIMAL.replace("with_mask", "helmet");
        match parse_voc(&xml, &LabelCatalog::mask()) {
            Err(Error::UnknownClass(n)) => assert_eq!(n, "helmet"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_xml_reports_line() {
        let xml = MINIMAL.replace("</size>", "</sise>");
        match parse_voc(&xml, &LabelCatalog::mask()) {
            Err(Error::Xml { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn escapes_special_characters() {
        let mut a = parse_voc(MINIMAL, &LabelCatalog::mask()).unwrap();
        a.filename = "a&b <c>.png".into();
        let b = parse_voc(&serialize_voc(&a), &LabelCatalog::mask()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_box_conversion() {
        let b = PixelBox::new(1, 1, 100, 50).to_unit(100, 100);
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (0.0, 0.0, 1.0, 0.5));
        assert_eq!(PixelBox::new(3, 4, 5, 9).crop_rect(), (2, 3, 3, 6));
    }
}
