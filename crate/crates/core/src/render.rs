//! SVG output: layouts with group outlines, and the element-count histogram.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::eval::CorpusStats;
use crate::grouping::GroupingHierarchy;
use crate::layout::{BBox, ElementType, Layout};

const GROUP_STROKE: &str = "#d62728";
const GROUP_PAD: f64 = 4.0;

fn fill(t: ElementType) -> &'static str {
    match t {
        ElementType::PresetGeometry => "#9ecae1",
        ElementType::FreeformShape => "#c6dbef",
        ElementType::Text => "#fdd0a2",
        ElementType::Picture => "#a1d99b",
        ElementType::Line => "#636363",
        ElementType::Chart => "#bcbddc",
        ElementType::Table => "#d9d9d9",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn rect(out: &mut String, b: &BBox, w: f64, h: f64, attrs: &str) {
    let _ = writeln!(
        out,
        r#"  <rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" {attrs}/>"#,
        b.x1 * w,
        b.y1 * h,
        (b.width() * w).max(0.5),
        (b.height() * h).max(0.5)
    );
}

/// Draws every element of `layout`, and one outline per non-singleton group
/// of level `level` of `hierarchy`. Groups are matched to elements by id.
pub fn render_svg(layout: &Layout, hierarchy: &GroupingHierarchy, level: usize) -> Result<String> {
    let partition = hierarchy.level(level)?;
    let w = layout.canvas.width;
    let h = layout.canvas.height;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r##"  <rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff" stroke="#000000"/>"##);
    let mut order: Vec<usize> = (0..layout.len()).collect();
    order.sort_by_key(|&i| layout.elements()[i].z);
    for i in order {
        let e = &layout.elements()[i];
        let attrs = format!(
            r##"fill="{}" fill-opacity="0.6" stroke="#333333" stroke-width="1" data-id="{}""##,
            fill(e.etype),
            escape(&e.id)
        );
        rect(&mut out, &e.bbox, w, h, &attrs);
    }
    for (k, group) in partition.iter().enumerate() {
        if group.len() < 2 {
            continue;
        }
        let mut bbox: Option<BBox> = None;
        for &m in group {
            let id = hierarchy.ids.get(m).ok_or(Error::OutOfRange {
                index: m,
                len: hierarchy.ids.len(),
            })?;
            let i = layout
                .index_of(id)
                .ok_or_else(|| Error::InvalidInput(format!("group member {id} is not in the layout")))?;
            let b = layout.elements()[i].bbox;
            bbox = Some(bbox.map_or(b, |u| u.union(&b)));
        }
        let b = bbox.expect("non-empty group");
        let _ = writeln!(
            out,
            r#"  <rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="{GROUP_STROKE}" stroke-width="2" data-group="{k}"/>"#,
            b.x1 * w - GROUP_PAD,
            b.y1 * h - GROUP_PAD,
            b.width() * w + 2.0 * GROUP_PAD,
            b.height() * h + 2.0 * GROUP_PAD
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Bar chart of layouts per element count.
pub fn histogram_svg(stats: &CorpusStats) -> String {
    let (cw, ch, margin) = (640.0, 320.0, 40.0);
    let lo = stats.min_elements;
    let hi = stats.max_elements;
    let bins = (hi - lo + 1) as f64;
    let peak = stats.count_histogram.values().copied().max().unwrap_or(1) as f64;
    let bar = (cw - 2.0 * margin) / bins;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{cw}" height="{ch}" viewBox="0 0 {cw} {ch}">"#
    );
    for (&n, &count) in &stats.count_histogram {
        let bh = (ch - 2.0 * margin) * count as f64 / peak;
        let x = margin + (n - lo) as f64 * bar;
        let _ = writeln!(
            out,
            r##"  <rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="#4c72b0"><title>{n}: {count}</title></rect>"##,
            ch - margin - bh,
            (bar - 1.0).max(0.5)
        );
    }
    let _ = writeln!(
        out,
        r#"  <text x="{margin}" y="{:.0}" font-size="12">{lo}</text>"#,
        ch - margin / 2.0
    );
    let _ = writeln!(
        out,
        r#"  <text x="{:.0}" y="{:.0}" font-size="12" text-anchor="end">{hi}</text>"#,
        cw - margin,
        ch - margin / 2.0
    );
    out.push_str("</svg>\n");
    out
}
