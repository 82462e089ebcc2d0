//! Synthetic slide generator with known flat and hierarchical groupings.
//!
//! Slides are assembled from a title, one or two content blocks (card grids,
//! icon lists, text blocks, timelines) and unrelated decorations. Gap scales
//! are drawn per slide, so whether two elements are close enough to belong
//! together depends on the rest of the slide.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::encoder::derive_seed;
use crate::error::{Error, Result};
use crate::layout::{parse_layout, BBox, Canvas, ElementType, HAlign, Layout, VAlign, VisualElement};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateMix {
    pub card_grid: f64,
    pub icon_list: f64,
    pub title_block: f64,
    pub timeline: f64,
}

impl Default for TemplateMix {
    fn default() -> Self {
        TemplateMix {
            card_grid: 1.0,
            icon_list: 1.0,
            title_block: 0.5,
            timeline: 0.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_layouts: usize,
    pub templates: TemplateMix,
    /// Maximum displacement per axis in canvas units.
    pub jitter: f64,
    pub distractor_prob: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            seed: 0,
            n_layouts: 100,
            templates: TemplateMix::default(),
            jitter: 0.004,
            distractor_prob: 0.5,
        }
    }
}

impl GeneratorSpec {
    pub fn new(seed: u64, n_layouts: usize) -> Self {
        GeneratorSpec {
            seed,
            n_layouts,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layouts == 0 {
            return Err(Error::Config("n_layouts must be at least 1".into()));
        }
        if !(0.0..=0.05).contains(&self.jitter) {
            return Err(Error::Config(format!("jitter {} outside [0, 0.05]", self.jitter)));
        }
        if !(0.0..=1.0).contains(&self.distractor_prob) {
            return Err(Error::Config(format!("distractor_prob {} outside [0, 1]", self.distractor_prob)));
        }
        let t = &self.templates;
        let w = [t.card_grid, t.icon_list, t.title_block, t.timeline];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("template weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }
}

/// Flat partition plus the full hierarchy, as element ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub flat: Vec<Vec<String>>,
    /// Levels from finest (equal to `flat`) to coarsest; each strictly
    /// coarsens the one before.
    pub hierarchy: Vec<Vec<Vec<String>>>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledLayout {
    pub layout: Layout,
    pub truth: GroundTruth,
}

/// 0/1 matrix over `layout`'s element order from the flat grouping, unit diagonal.
pub fn ground_truth_matrix(truth: &GroundTruth, layout: &Layout) -> Result<Tensor> {
    let n = layout.len();
    let mut group_of = vec![usize::MAX; n];
    for (g, members) in truth.flat.iter().enumerate() {
        for id in members {
            let i = layout
                .index_of(id)
                .ok_or_else(|| Error::TruthMismatch(format!("unknown element {id:?}")))?;
            if group_of[i] != usize::MAX {
                return Err(Error::TruthMismatch(format!("element {id:?} in two groups")));
            }
            group_of[i] = g;
        }
    }
    if let Some(i) = group_of.iter().position(|&g| g == usize::MAX) {
        return Err(Error::TruthMismatch(format!(
            "element {:?} missing from the grouping",
            layout.elements()[i].id
        )));
    }
    let mut m = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if group_of[i] == group_of[j] {
                m.set(i, j, 1.0);
            }
        }
    }
    Ok(m)
}

#[derive(Clone, Debug)]
struct Proto {
    etype: ElementType,
    bbox: BBox,
    align: Option<(HAlign, VAlign)>,
}

#[derive(Clone, Debug)]
enum Tree {
    Leaf(Vec<usize>),
    Node(Vec<Tree>),
}

impl Tree {
    fn leaves(&self, out: &mut Vec<Vec<usize>>) {
        match self {
            Tree::Leaf(m) => out.push(m.clone()),
            Tree::Node(c) => c.iter().for_each(|t| t.leaves(out)),
        }
    }

    fn members(&self) -> Vec<usize> {
        let mut l = Vec::new();
        self.leaves(&mut l);
        l.concat()
    }

    /// Partition with every subtree at `depth` (root children are depth 1)
    /// collapsed into one block.
    fn collapse(&self, depth: usize, out: &mut Vec<Vec<usize>>) {
        match self {
            Tree::Leaf(m) => out.push(m.clone()),
            Tree::Node(_) if depth == 0 => out.push(self.members()),
            Tree::Node(c) => c.iter().for_each(|t| t.collapse(depth - 1, out)),
        }
    }

    fn height(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Node(c) => 1 + c.iter().map(Tree::height).max().unwrap_or(0),
        }
    }
}

/// Gap scales for one slide.
#[derive(Clone, Copy, Debug)]
struct Gaps {
    inner: f64,
    unit: f64,
    sub: f64,
    block: f64,
}

struct Builder {
    rng: ChaCha8Rng,
    protos: Vec<Proto>,
    gaps: Gaps,
    deep: bool,
}

const TEXT_TOP: Option<(HAlign, VAlign)> = Some((HAlign::Left, VAlign::Top));
const TEXT_CENTER: Option<(HAlign, VAlign)> = Some((HAlign::Center, VAlign::Top));

impl Builder {
    fn push(&mut self, etype: ElementType, bbox: BBox, align: Option<(HAlign, VAlign)>) -> usize {
        self.protos.push(Proto { etype, bbox, align });
        self.protos.len() - 1
    }

    fn icon_type(&mut self) -> ElementType {
        if self.rng.gen_bool(0.5) {
            ElementType::Picture
        } else {
            ElementType::FreeformShape
        }
    }

    /// Icon, title and description stacked top-down inside `r`.
    fn stacked_unit(&mut self, r: BBox, with_icon: bool, with_desc: bool) -> Vec<usize> {
        let g = self.gaps.inner;
        let (w, h) = (r.width(), r.height());
        let mut heights = Vec::new();
        if with_icon {
            heights.push(h * self.rng.gen_range(0.25..0.4));
        }
        heights.push(h * self.rng.gen_range(0.12..0.2));
        if with_desc {
            heights.push(h * self.rng.gen_range(0.2..0.35));
        }
        let total: f64 = heights.iter().sum::<f64>() + g * (heights.len() - 1) as f64;
        let shrink = if total > h { (h - g * (heights.len() - 1) as f64).max(0.0) / (total - g * (heights.len() - 1) as f64) } else { 1.0 };
        let mut y = r.y1;
        let mut out = Vec::new();
        for (k, hk) in heights.iter().enumerate() {
            let hk = hk * shrink;
            let is_icon = with_icon && k == 0;
            let bw = if is_icon {
                (hk * 9.0 / 16.0).min(w)
            } else {
                w * self.rng.gen_range(0.7..=1.0)
            };
            let x = r.x1 + (w - bw) / 2.0;
            let b = BBox::new(x, y, x + bw, y + hk);
            let id = if is_icon {
                let t = self.icon_type();
                self.push(t, b, None)
            } else {
                self.push(ElementType::Text, b, TEXT_CENTER)
            };
            out.push(id);
            y += hk + g;
        }
        out
    }

    fn card_grid(&mut self, r: BBox) -> Tree {
        let rows = if r.height() > 0.45 {
            self.rng.gen_range(1..=3usize)
        } else {
            self.rng.gen_range(1..=2usize)
        };
        let max_cols = if r.width() < 0.5 { 2 } else { 4 };
        let cols = self.rng.gen_range(2..=max_cols);
        let with_bg = self.rng.gen_bool(0.5);
        let with_icon = self.rng.gen_bool(0.8);
        let with_desc = self.rng.gen_bool(0.8) || !with_icon;
        let gc = self.gaps.unit;
        let gr = if self.deep && rows > 1 { self.gaps.sub } else { self.gaps.unit };
        let cw = (r.width() - (cols - 1) as f64 * gc) / cols as f64;
        let ch = (r.height() - (rows - 1) as f64 * gr) / rows as f64;
        let mut row_trees = Vec::new();
        for i in 0..rows {
            let mut cards = Vec::new();
            for j in 0..cols {
                let x = r.x1 + j as f64 * (cw + gc);
                let y = r.y1 + i as f64 * (ch + gr);
                let cell = BBox::new(x, y, x + cw, y + ch);
                let mut members = Vec::new();
                let inner = if with_bg {
                    members.push(self.push(ElementType::PresetGeometry, cell, None));
                    let p = self.gaps.inner;
                    BBox::new(cell.x1 + p, cell.y1 + p, cell.x2 - p, cell.y2 - p)
                } else {
                    cell
                };
                members.extend(self.stacked_unit(inner, with_icon, with_desc));
                cards.push(Tree::Leaf(members));
            }
            row_trees.push(cards);
        }
        if self.deep && rows > 1 {
            Tree::Node(row_trees.into_iter().map(Tree::Node).collect())
        } else {
            Tree::Node(row_trees.concat())
        }
    }

    fn icon_list(&mut self, r: BBox) -> Tree {
        let vertical = r.width() < 0.45 || self.rng.gen_bool(0.6);
        let k = self.rng.gen_range(3..=6usize);
        let split = self.deep && k >= 4;
        let half = k.div_ceil(2);
        let g = self.gaps.unit;
        let extra = if split { self.gaps.sub - g } else { 0.0 };
        let g_in = self.gaps.inner;
        let mut items = Vec::new();
        let with_desc = self.rng.gen_bool(0.75);
        for i in 0..k {
            let shift = if split && i >= half { extra } else { 0.0 };
            if vertical {
                let ih = (r.height() - (k - 1) as f64 * g - extra) / k as f64;
                let y = r.y1 + i as f64 * (ih + g) + shift;
                let s = (ih * 0.8 * 9.0 / 16.0).min(r.width() * 0.2);
                let icon_type = self.icon_type();
                let icon = self.push(icon_type, BBox::new(r.x1, y, r.x1 + s, y + ih * 0.8), None);
                let tx = r.x1 + s + g_in;
                let tw = (r.x2 - tx) * self.rng.gen_range(0.5..=1.0);
                let mut members = vec![icon];
                if with_desc {
                    let th = (ih - g_in) * 0.4;
                    members.push(self.push(ElementType::Text, BBox::new(tx, y, tx + tw, y + th), TEXT_TOP));
                    let dw = (r.x2 - tx) * self.rng.gen_range(0.6..=1.0);
                    members.push(self.push(
                        ElementType::Text,
                        BBox::new(tx, y + th + g_in, tx + dw, y + ih),
                        TEXT_TOP,
                    ));
                } else {
                    members.push(self.push(ElementType::Text, BBox::new(tx, y + ih * 0.2, tx + tw, y + ih * 0.8), TEXT_TOP));
                }
                items.push(Tree::Leaf(members));
            } else {
                let iw = (r.width() - (k - 1) as f64 * g - extra) / k as f64;
                let x = r.x1 + i as f64 * (iw + g) + shift;
                let cell = BBox::new(x, r.y1, x + iw, r.y2);
                items.push(Tree::Leaf(self.stacked_unit(cell, true, with_desc)));
            }
        }
        if split {
            let second = items.split_off(half);
            Tree::Node(vec![Tree::Node(items), Tree::Node(second)])
        } else {
            Tree::Node(items)
        }
    }

    /// Heading plus one or two paragraphs; each paragraph with its own label.
    fn text_block(&mut self, r: BBox) -> Tree {
        let k = self.rng.gen_range(2..=4usize);
        let g = self.gaps.unit;
        let g_in = self.gaps.inner;
        let ph = (r.height() - (k - 1) as f64 * g) / k as f64;
        let mut parts = Vec::new();
        for i in 0..k {
            let y = r.y1 + i as f64 * (ph + g);
            let hh = (ph - g_in) * self.rng.gen_range(0.2..0.35);
            let hw = r.width() * self.rng.gen_range(0.3..0.7);
            let head = self.push(ElementType::Text, BBox::new(r.x1, y, r.x1 + hw, y + hh), TEXT_TOP);
            let bw = r.width() * self.rng.gen_range(0.7..=1.0);
            let body = self.push(ElementType::Text, BBox::new(r.x1, y + hh + g_in, r.x1 + bw, y + ph), TEXT_TOP);
            parts.push(Tree::Leaf(vec![head, body]));
        }
        Tree::Node(parts)
    }

    fn timeline(&mut self, r: BBox) -> Tree {
        let k = self.rng.gen_range(4..=7usize);
        let g_in = self.gaps.inner;
        let cy = (r.y1 + r.y2) / 2.0;
        let lh = 0.004;
        let line = self.push(ElementType::Line, BBox::new(r.x1, cy - lh / 2.0, r.x2, cy + lh / 2.0), None);
        let spacing = r.width() / k as f64;
        let label_w = (spacing - self.gaps.unit).max(spacing * 0.3);
        let dot_h = 0.03;
        let dot_w = dot_h * 9.0 / 16.0;
        let lab_h = (r.height() / 2.0 - dot_h / 2.0 - g_in) * self.rng.gen_range(0.3..0.6);
        let mut items = Vec::new();
        for i in 0..k {
            let cx = r.x1 + spacing * (i as f64 + 0.5);
            let dot = self.push(
                ElementType::PresetGeometry,
                BBox::new(cx - dot_w / 2.0, cy - dot_h / 2.0, cx + dot_w / 2.0, cy + dot_h / 2.0),
                None,
            );
            let top = cy - dot_h / 2.0 - g_in;
            let label = self.push(
                ElementType::Text,
                BBox::new(cx - label_w / 2.0, top - lab_h, cx + label_w / 2.0, top),
                Some((HAlign::Center, VAlign::Bottom)),
            );
            let bottom = cy + dot_h / 2.0 + g_in;
            let date = self.push(
                ElementType::Text,
                BBox::new(cx - label_w / 2.0, bottom, cx + label_w / 2.0, bottom + lab_h * 0.6),
                TEXT_CENTER,
            );
            items.push(Tree::Leaf(vec![dot, label, date]));
        }
        if self.deep && k >= 4 {
            let second = items.split_off(k / 2);
            Tree::Node(vec![Tree::Leaf(vec![line]), Tree::Node(items), Tree::Node(second)])
        } else {
            let mut children = vec![Tree::Leaf(vec![line])];
            children.extend(items);
            Tree::Node(children)
        }
    }
}

fn pick_template(rng: &mut ChaCha8Rng, mix: &TemplateMix) -> usize {
    let w = [mix.card_grid, mix.icon_list, mix.title_block, mix.timeline];
    let total: f64 = w.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, wi) in w.iter().enumerate() {
        if x < *wi {
            return i;
        }
        x -= wi;
    }
    w.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

fn ids_of(groups: &[Vec<usize>]) -> Vec<Vec<String>> {
    groups
        .iter()
        .map(|g| g.iter().map(|i| format!("e{i}")).collect())
        .collect()
}

/// One attempt at a slide; `None` when it fails the corpus criteria.
fn try_generate(spec: &GeneratorSpec, rng: ChaCha8Rng, id: &str) -> Option<LabeledLayout> {
    let mut b = Builder {
        rng,
        protos: Vec::new(),
        gaps: Gaps {
            inner: 0.0,
            unit: 0.0,
            sub: 0.0,
            block: 0.0,
        },
        deep: false,
    };
    let unit = b.rng.gen_range(0.015..0.06);
    b.gaps = Gaps {
        inner: unit * b.rng.gen_range(0.15..0.45),
        unit,
        sub: unit * b.rng.gen_range(1.8..2.4),
        block: unit * b.rng.gen_range(2.8..4.0),
    };
    b.deep = b.rng.gen_bool(0.5);
    let pd = spec.distractor_prob;

    let mut top: Vec<Tree> = Vec::new();
    let mut decor: Vec<usize> = Vec::new();
    if b.rng.gen_bool(pd) {
        decor.push(b.push(ElementType::PresetGeometry, BBox::new(0.0, 0.0, 1.0, 1.0), None));
    }
    let title_h = b.rng.gen_range(0.07..0.11);
    let title_y = b.rng.gen_range(0.04..0.07);
    let title_w = b.rng.gen_range(0.35..0.8);
    let centered = b.rng.gen_bool(0.3);
    let tx = if centered { (1.0 - title_w) / 2.0 } else { 0.06 };
    let title_align = Some((if centered { HAlign::Center } else { HAlign::Left }, VAlign::Middle));
    let title = b.push(
        ElementType::Text,
        BBox::new(tx, title_y, tx + title_w, title_y + title_h),
        title_align,
    );
    let mut title_group = vec![title];
    let mut content_top = title_y + title_h;
    if b.rng.gen_bool(0.5) {
        let sy = content_top + b.gaps.inner;
        let sh = b.rng.gen_range(0.035..0.05);
        let sw = title_w * b.rng.gen_range(0.5..1.0);
        title_group.push(b.push(ElementType::Text, BBox::new(tx, sy, tx + sw, sy + sh), title_align));
        content_top = sy + sh;
    }
    top.push(Tree::Leaf(title_group));
    if b.rng.gen_bool(pd * 0.5) {
        let ly = content_top + b.gaps.block * 0.5;
        decor.push(b.push(ElementType::Line, BBox::new(0.06, ly, 0.94, ly + 0.003), None));
        content_top = ly + 0.003;
    }

    let content = BBox::new(0.06, content_top + b.gaps.block, 0.94, b.rng.gen_range(0.88..0.95));
    let blocks = if b.rng.gen_bool(0.6) { 2 } else { 1 };
    let regions = if blocks == 1 {
        vec![content]
    } else if b.rng.gen_bool(0.6) {
        let split = content.x1 + content.width() * b.rng.gen_range(0.4..0.6);
        let gb = b.gaps.block;
        vec![
            BBox::new(content.x1, content.y1, split - gb / 2.0, content.y2),
            BBox::new(split + gb / 2.0, content.y1, content.x2, content.y2),
        ]
    } else {
        let split = content.y1 + content.height() * b.rng.gen_range(0.4..0.6);
        let gb = b.gaps.block;
        vec![
            BBox::new(content.x1, content.y1, content.x2, split - gb / 2.0),
            BBox::new(content.x1, split + gb / 2.0, content.x2, content.y2),
        ]
    };
    for r in regions {
        let t = pick_template(&mut b.rng, &spec.templates);
        let tree = match t {
            0 => b.card_grid(r),
            1 => b.icon_list(r),
            2 => b.text_block(r),
            _ => {
                if b.rng.gen_bool(0.15) {
                    let kind = if b.rng.gen_bool(0.5) { ElementType::Chart } else { ElementType::Table };
                    Tree::Leaf(vec![b.push(kind, r, None)])
                } else {
                    b.timeline(r)
                }
            }
        };
        top.push(tree);
    }

    if b.rng.gen_bool(pd * 0.5) {
        let s = 0.05;
        decor.push(b.push(ElementType::Picture, BBox::new(0.93 - s * 9.0 / 16.0, 0.03, 0.93, 0.03 + s), None));
    }
    if b.rng.gen_bool(pd * 0.5) {
        decor.push(b.push(
            ElementType::Text,
            BBox::new(0.9, 0.955, 0.97, 0.985),
            Some((HAlign::Right, VAlign::Middle)),
        ));
    }
    if b.rng.gen_bool(pd * 0.5) {
        let fw = b.rng.gen_range(0.2..0.5);
        decor.push(b.push(
            ElementType::Text,
            BBox::new(0.03, 0.955, fw, 0.985),
            Some((HAlign::Left, VAlign::Middle)),
        ));
    }
    if b.rng.gen_bool(pd * 0.4) {
        let ty = title_y + title_h / 2.0;
        decor.push(b.push(ElementType::PresetGeometry, BBox::new(0.0, ty - 0.05, 0.02, ty + 0.05), None));
    }
    for d in &decor {
        top.push(Tree::Leaf(vec![*d]));
    }
    let root = Tree::Node(top);

    // jitter
    let j = spec.jitter.min(b.gaps.unit / 4.0);
    if j > 0.0 {
        for p in b.protos.iter_mut() {
            if p.bbox == BBox::new(0.0, 0.0, 1.0, 1.0) {
                continue;
            }
            let dx = b.rng.gen_range(-j..=j);
            let dy = b.rng.gen_range(-j..=j);
            let moved = p.bbox.translate(dx, dy);
            p.bbox = BBox::new(
                moved.x1.clamp(0.0, 1.0),
                moved.y1.clamp(0.0, 1.0),
                moved.x2.clamp(0.0, 1.0),
                moved.y2.clamp(0.0, 1.0),
            );
        }
    }

    // stacking order: creation order, sometimes by kind or shuffled
    let n = b.protos.len();
    let mut order: Vec<usize> = (0..n).collect();
    let roll: f64 = b.rng.gen();
    if roll < 0.25 {
        order.sort_by_key(|&i| b.protos[i].etype.is_text());
    } else if roll < 0.4 {
        order.shuffle(&mut b.rng);
    }
    let background = decor.first().copied().filter(|&d| b.protos[d].bbox == BBox::new(0.0, 0.0, 1.0, 1.0));
    if let Some(bg) = background {
        order.retain(|&i| i != bg);
        order.insert(0, bg);
    }
    let mut z = vec![0u32; n];
    for (rank, &i) in order.iter().enumerate() {
        z[i] = rank as u32;
    }

    let mut elements = Vec::with_capacity(n);
    for (i, p) in b.protos.iter().enumerate() {
        elements.push(VisualElement::new(format!("e{i}"), p.etype, z[i], p.bbox, 0.0, p.align).ok()?);
    }
    let layout = Layout::new(id, Canvas { width: 1280.0, height: 720.0 }, elements).ok()?;

    let mut flat = Vec::new();
    root.leaves(&mut flat);
    let mut levels = vec![flat.clone()];
    let h = root.height();
    for depth in (1..h).rev() {
        let mut p = Vec::new();
        root.collapse(depth, &mut p);
        if p.len() < levels.last().map_or(usize::MAX, Vec::len) {
            levels.push(p);
        }
    }

    let has_text = layout.elements().iter().any(|e| e.etype.is_text());
    let has_graphic = layout.elements().iter().any(|e| !e.etype.is_text());
    if n <= 3 || flat.len() < 2 || !has_text || !has_graphic {
        return None;
    }
    Some(LabeledLayout {
        layout,
        truth: GroundTruth {
            flat: ids_of(&flat),
            hierarchy: levels.iter().map(|l| ids_of(l)).collect(),
        },
    })
}

/// Layout `index` of the corpus described by `spec`.
pub fn generate_layout(spec: &GeneratorSpec, index: usize) -> LabeledLayout {
    let id = format!("layout_{index:05}");
    let base = derive_seed(spec.seed, index as u64);
    (0u64..)
        .find_map(|attempt| try_generate(spec, ChaCha8Rng::seed_from_u64(derive_seed(base, attempt)), &id))
        .expect("generator eventually satisfies the corpus criteria")
}

pub fn generate_corpus(spec: &GeneratorSpec) -> Result<Vec<LabeledLayout>> {
    spec.validate()?;
    Ok((0..spec.n_layouts).map(|i| generate_layout(spec, i)).collect())
}

pub fn write_corpus(dir: &Path, corpus: &[LabeledLayout]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for item in corpus {
        let id = &item.layout.id;
        fs::write(dir.join(format!("{id}.json")), item.layout.to_json())?;
        fs::write(dir.join(format!("{id}.truth.json")), item.truth.to_json())?;
    }
    Ok(())
}

/// Reads every `*.json` layout in `dir` (sorted by file name) with its
/// `*.truth.json` sidecar.
pub fn load_corpus(dir: &Path) -> Result<Vec<LabeledLayout>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".json") && !n.ends_with(".truth.json"))
        .collect();
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let layout = parse_layout(&fs::read_to_string(dir.join(&name))?)?;
        let stem = name.trim_end_matches(".json");
        let truth_path = dir.join(format!("{stem}.truth.json"));
        let truth: GroundTruth = serde_json::from_str(&fs::read_to_string(&truth_path).map_err(|e| {
            Error::TruthMismatch(format!("{}: {e}", truth_path.display()))
        })?)?;
        ground_truth_matrix(&truth, &layout)?;
        out.push(LabeledLayout { layout, truth });
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no layouts in {}", dir.display())));
    }
    Ok(out)
}

/// Element-index partition from id groups.
pub fn partition_indices(groups: &[Vec<String>], layout: &Layout) -> Result<Vec<Vec<usize>>> {
    let index: HashMap<&str, usize> = layout
        .elements()
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::TruthMismatch(format!("unknown element {id:?}")))
                })
                .collect()
        })
        .collect()
}
