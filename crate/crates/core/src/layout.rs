//! Layout data model: visual elements, canonicalized layouts, and the JSON
//! layout document format.
//!
//! A [`Layout`] always holds normalized coordinates in `[0, 1]` and its
//! elements are sorted ascending by stacking order. Stacking order is
//! canonicalized to dense ranks `0..n`, ties resolved by source order.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest element sequence the model accepts.
pub const MAX_ELEMENTS: usize = 128;

/// Excursions outside `[0, 1]` up to this amount are clamped instead of rejected.
pub const CLAMP_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementType {
    PresetGeometry,
    FreeformShape,
    Text,
    Picture,
    Line,
    Chart,
    Table,
}

impl ElementType {
    pub const ALL: [ElementType; 7] = [
        ElementType::PresetGeometry,
        ElementType::FreeformShape,
        ElementType::Text,
        ElementType::Picture,
        ElementType::Line,
        ElementType::Chart,
        ElementType::Table,
    ];

    /// Row of this type in the type embedding table.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementType::PresetGeometry => "preset-geometry",
            ElementType::FreeformShape => "freeform-shape",
            ElementType::Text => "text",
            ElementType::Picture => "picture",
            ElementType::Line => "line",
            ElementType::Chart => "chart",
            ElementType::Table => "table",
        }
    }

    pub fn is_text(self) -> bool {
        self == ElementType::Text
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ElementType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ElementType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownCategory {
                feature: "type",
                value: s.to_string(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HAlign {
    Left,
    Right,
    Center,
    Mixed,
    None,
}

impl HAlign {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VAlign {
    Top,
    Middle,
    Bottom,
    Mixed,
    None,
}

impl VAlign {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Axis-aligned box, `(x1, y1)` top-left and `(x2, y2)` bottom-right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(c: [f64; 4]) -> Self {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x1.min(other.x1),
            self.y1.min(other.y1),
            self.x2.max(other.x2),
            self.y2.max(other.y2),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

/// One element's normalized features.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualElement {
    pub id: String,
    pub etype: ElementType,
    /// Stacking rank; dense `0..n` inside a canonical [`Layout`].
    pub z: u32,
    pub bbox: BBox,
    pub size: (f64, f64),
    /// Degrees clockwise in `[0, 360)`.
    pub rotation: f64,
    pub halign: HAlign,
    pub valign: VAlign,
}

impl VisualElement {
    /// Builds an element from already-normalized values, applying the same
    /// checks and defaults as [`normalize_element`].
    pub fn new(
        id: impl Into<String>,
        etype: ElementType,
        z: u32,
        bbox: BBox,
        rotation: f64,
        align: Option<(HAlign, VAlign)>,
    ) -> Result<Self> {
        let raw = RawElement {
            id: id.into(),
            etype,
            z,
            bbox: bbox.into(),
            rotation: Some(rotation),
            halign: align.map(|a| a.0),
            valign: align.map(|a| a.1),
        };
        finish_element(raw, 1.0, 1.0)
    }

    /// Stacking rank scaled by the sequence cap, so the feature does not
    /// depend on how sparse the source numbering was.
    pub fn z_feature(&self) -> f64 {
        self.z as f64 / MAX_ELEMENTS as f64
    }
}

/// Source element as it appears in a layout document, coordinates unscaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawElement {
    pub id: String,
    #[serde(rename = "type")]
    pub etype: ElementType,
    pub z: u32,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halign: Option<HAlign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valign: Option<VAlign>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: f64,
    pub height: f64,
}

/// The on-disk layout document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub id: String,
    pub canvas: Canvas,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub normalized: bool,
    pub elements: Vec<RawElement>,
}

/// Wraps a rotation in degrees into `[0, 360)`.
pub fn wrap_rotation(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

fn clamp_unit(id: &str, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::OutOfCanvas {
            id: id.to_string(),
            value: v,
        });
    }
    if v < -CLAMP_TOLERANCE || v > 1.0 + CLAMP_TOLERANCE {
        return Err(Error::OutOfCanvas {
            id: id.to_string(),
            value: v,
        });
    }
    Ok(v.clamp(0.0, 1.0))
}

fn finish_element(raw: RawElement, width: f64, height: f64) -> Result<VisualElement> {
    let [x1, y1, x2, y2] = raw.bbox;
    if !(x1 <= x2 && y1 <= y2) {
        return Err(Error::InvalidBBox { id: raw.id });
    }
    let bbox = BBox::new(
        clamp_unit(&raw.id, x1 / width)?,
        clamp_unit(&raw.id, y1 / height)?,
        clamp_unit(&raw.id, x2 / width)?,
        clamp_unit(&raw.id, y2 / height)?,
    );
    let rotation = raw.rotation.unwrap_or(0.0);
    if !rotation.is_finite() {
        return Err(Error::InvalidElement {
            id: raw.id,
            reason: "rotation is not finite".into(),
        });
    }
    let (halign, valign) = if raw.etype.is_text() {
        let h = raw.halign.unwrap_or(HAlign::Mixed);
        let v = raw.valign.unwrap_or(VAlign::Mixed);
        if h == HAlign::None || v == VAlign::None {
            return Err(Error::InvalidElement {
                id: raw.id,
                reason: "text elements cannot have alignment `none`".into(),
            });
        }
        (h, v)
    } else {
        (HAlign::None, VAlign::None)
    };
    Ok(VisualElement {
        id: raw.id,
        etype: raw.etype,
        z: raw.z,
        size: (bbox.width(), bbox.height()),
        bbox,
        rotation: wrap_rotation(rotation),
        halign,
        valign,
    })
}

/// Scales a raw element into the unit square of its canvas.
pub fn normalize_element(raw: RawElement, canvas: Canvas) -> Result<VisualElement> {
    if !(canvas.width > 0.0 && canvas.height > 0.0) {
        return Err(Error::NonPositiveCanvas {
            width: canvas.width,
            height: canvas.height,
        });
    }
    finish_element(raw, canvas.width, canvas.height)
}

/// A canonicalized layout: non-empty, at most [`MAX_ELEMENTS`] elements,
/// sorted by stacking rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub id: String,
    pub canvas: Canvas,
    elements: Vec<VisualElement>,
}

impl Layout {
    /// Canonicalizes `elements`: stable-sorts by `z` and replaces `z` with its
    /// dense rank.
    pub fn new(id: impl Into<String>, canvas: Canvas, elements: Vec<VisualElement>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::EmptyLayout);
        }
        if elements.len() > MAX_ELEMENTS {
            return Err(Error::TooManyElements(elements.len()));
        }
        let mut seen = HashSet::new();
        for e in &elements {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        let mut elements = elements;
        elements.sort_by_key(|e| e.z);
        for (rank, e) in elements.iter_mut().enumerate() {
            e.z = rank as u32;
        }
        Ok(Layout {
            id: id.into(),
            canvas,
            elements,
        })
    }

    pub fn elements(&self) -> &[VisualElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.elements.iter().position(|e| e.id == id)
    }

    pub fn from_document(doc: LayoutDocument) -> Result<Self> {
        if doc.elements.is_empty() {
            return Err(Error::EmptyLayout);
        }
        if doc.elements.len() > MAX_ELEMENTS {
            return Err(Error::TooManyElements(doc.elements.len()));
        }
        let scale = if doc.normalized {
            Canvas {
                width: 1.0,
                height: 1.0,
            }
        } else {
            doc.canvas
        };
        if !(doc.canvas.width > 0.0 && doc.canvas.height > 0.0) {
            return Err(Error::NonPositiveCanvas {
                width: doc.canvas.width,
                height: doc.canvas.height,
            });
        }
        let elements = doc
            .elements
            .into_iter()
            .map(|raw| normalize_element(raw, scale))
            .collect::<Result<Vec<_>>>()?;
        Layout::new(doc.id, doc.canvas, elements)
    }

    /// Emits a pre-normalized document that parses back to an identical layout.
    pub fn to_document(&self) -> LayoutDocument {
        LayoutDocument {
            id: self.id.clone(),
            canvas: self.canvas,
            normalized: true,
            elements: self
                .elements
                .iter()
                .map(|e| RawElement {
                    id: e.id.clone(),
                    etype: e.etype,
                    z: e.z,
                    bbox: e.bbox.into(),
                    rotation: Some(e.rotation),
                    halign: e.etype.is_text().then_some(e.halign),
                    valign: e.etype.is_text().then_some(e.valign),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("layout serializes")
    }
}

/// Parses a layout document and canonicalizes it.
pub fn parse_layout(document: &str) -> Result<Layout> {
    let doc: LayoutDocument =
        serde_json::from_str(document).map_err(|e| Error::Malformed(e.to_string()))?;
    Layout::from_document(doc)
}
