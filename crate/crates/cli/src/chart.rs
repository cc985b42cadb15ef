//! Persistence charts as standalone SVG.

use std::fmt::Write;

use strucmp_core::DMatrix;

/// Colour of the largest values.
pub const SATURATED: [u8; 3] = [0xb2, 0x18, 0x2b];
pub const WHITE: [u8; 3] = [0xff, 0xff, 0xff];
/// Values at or above this percentile get the saturated colour.
pub const SCALE_PERCENTILE: f64 = 0.99;
/// Side of a non-significant cell relative to a full cell.
pub const REDUCED_SIZE: f64 = 0.6;
const CELL: f64 = 14.0;
const LABEL_WIDTH: f64 = 80.0;
const HEADER: f64 = 24.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChartData {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: DMatrix<f64>,
    /// `None` draws every cell full size.
    pub significant: Option<DMatrix<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ColorScale {
    pub min_color: [u8; 3],
    pub max_color: [u8; 3],
    pub percentile: f64,
    /// Value mapped to `max_color`; zero when every value is zero.
    pub vmax: f64,
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of finite values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn color_scale(values: &DMatrix<f64>) -> ColorScale {
    ColorScale {
        min_color: WHITE,
        max_color: SATURATED,
        percentile: SCALE_PERCENTILE,
        vmax: percentile(values.as_slice(), SCALE_PERCENTILE).max(0.0),
    }
}

pub fn color(scale: &ColorScale, v: f64) -> String {
    let t = if scale.vmax > 0.0 && v.is_finite() { (v / scale.vmax).clamp(0.0, 1.0) } else { 0.0 };
    let c: Vec<u8> = (0..3)
        .map(|i| {
            let a = scale.min_color[i] as f64;
            let b = scale.max_color[i] as f64;
            (a + (b - a) * t).round() as u8
        })
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
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

/// One `rect` per cell, nothing else drawn as a `rect`.
pub fn render_svg(data: &ChartData, alpha: f64, row_order_note: &str) -> (String, ColorScale) {
    let scale = color_scale(&data.values);
    let (nr, nc) = data.values.shape();
    let width = LABEL_WIDTH + CELL * nc as f64 + 10.0;
    let height = HEADER + CELL * nr as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(s, "<title>Residual persistence</title>");
    let marking = if data.significant.is_some() {
        format!("cells not significant at alpha={alpha} are drawn at {:.0}% size", REDUCED_SIZE * 100.0)
    } else {
        "no significance marking".to_string()
    };
    let _ = writeln!(
        s,
        "<desc>colour linear from #{:02x}{:02x}{:02x} at 0 to #{:02x}{:02x}{:02x} at {} ({}th percentile of cell values); {}; {}</desc>",
        scale.min_color[0],
        scale.min_color[1],
        scale.min_color[2],
        scale.max_color[0],
        scale.max_color[1],
        scale.max_color[2],
        scale.vmax,
        scale.percentile * 100.0,
        marking,
        escape(row_order_note)
    );
    let _ = writeln!(s, r##"<g font-family="sans-serif" font-size="9" fill="#000000">"##);
    for (j, c) in data.cols.iter().enumerate() {
        let x = LABEL_WIDTH + CELL * (j as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            HEADER - 6.0,
            escape(c)
        );
    }
    for (i, r) in data.rows.iter().enumerate() {
        let y = HEADER + CELL * (i as f64 + 0.5) + 3.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{y:.2}" text-anchor="end">{}</text>"#,
            LABEL_WIDTH - 4.0,
            escape(r)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="cells" stroke="none">"#);
    for i in 0..nr {
        for j in 0..nc {
            let v = data.values[(i, j)];
            let full = data.significant.as_ref().map_or(true, |m| m[(i, j)]);
            let side = if full { CELL } else { CELL * REDUCED_SIZE };
            let x = LABEL_WIDTH + CELL * j as f64 + (CELL - side) / 2.0;
            let y = HEADER + CELL * i as f64 + (CELL - side) / 2.0;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{side:.2}" height="{side:.2}" fill="{}"><title>{} k={}: {}</title></rect>"#,
                color(&scale, v),
                escape(&data.rows[i]),
                escape(&data.cols[j]),
                v
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    (s, scale)
}

/// Leaf order of the average-linkage dendrogram of the rows of `points`
/// (Euclidean distances). Ties merge the lowest index pair first.
pub fn average_linkage_order(points: &DMatrix<f64>) -> Vec<usize> {
    let n = points.nrows();
    if n == 0 {
        return Vec::new();
    }
    let mut dist = DMatrix::from_fn(n, n, |i, j| (points.row(i) - points.row(j)).norm());
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active: Vec<bool> = vec![true; n];
    for _ in 1..n {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && dist[(i, j)] < best.2 {
                    best = (i, j, dist[(i, j)]);
                }
            }
        }
        let (a, b, _) = best;
        let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
        for m in 0..n {
            if active[m] && m != a && m != b {
                let v = (na * dist[(a, m)] + nb * dist[(b, m)]) / (na + nb);
                dist[(a, m)] = v;
                dist[(m, a)] = v;
            }
        }
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        active[b] = false;
    }
    members.into_iter().find(|m| !m.is_empty()).unwrap_or_default()
}
