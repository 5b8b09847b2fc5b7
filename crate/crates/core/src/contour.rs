//! Ray-based edge selection, chain ordering, direction coding, signed
//! curvature profiles and the curvature-limit model.

use std::fmt::Write as _;

use rustc_hash::FxHashSet as HashSet;
use serde::{Deserialize, Serialize};

use crate::draw::{fill_ellipse, EllipseShape};
use crate::edgemap::{canny, extract_edges, thin, CannyParams, Edge};
use crate::geom::{wrap_pi, Pixel, Vec2, NEIGHBOUR_OFFSETS};
use crate::raster::GrayImage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContourError {
    #[error("edge contains a branch point at {0:?}")]
    Branching(Pixel),
    #[error("edge is not a single 8-connected chain")]
    Disconnected,
    #[error("edge is empty")]
    Empty,
    #[error("curvature model: {0}")]
    Model(String),
}

/// Ordered 8-connected point sequence; `cyclic` chains close back onto their first point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    pub points: Vec<Pixel>,
    pub cyclic: bool,
}

impl Chain {
    pub fn open(points: Vec<Pixel>) -> Self {
        Self { points, cyclic: false }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Step-metric length.
    pub fn length(&self) -> f64 {
        crate::geom::chain_length(&self.points, self.cyclic)
    }
}

/// Orders a non-branching point set into a chain, starting at a terminal
/// (the first in raster order) or, for a ring, at its first raster point.
pub fn order_chain(points: &[Pixel]) -> Result<Chain, ContourError> {
    if points.is_empty() {
        return Err(ContourError::Empty);
    }
    let set: HashSet<Pixel> = points.iter().copied().collect();
    let degree = |p: Pixel| p.neighbours().iter().filter(|n| set.contains(n)).count();
    let mut sorted: Vec<Pixel> = set.iter().copied().collect();
    sorted.sort_by_key(|p| (p.y, p.x));
    if sorted.len() == 1 {
        return Ok(Chain::open(sorted));
    }
    if let Some(&p) = sorted.iter().find(|&&p| degree(p) > 2) {
        return Err(ContourError::Branching(p));
    }
    let terminal = sorted.iter().copied().find(|&p| degree(p) == 1);
    let start = terminal.unwrap_or(sorted[0]);
    let mut out = vec![start];
    let mut seen = HashSet::from_iter([start]);
    loop {
        let cur = *out.last().unwrap();
        let next = cur.neighbours().into_iter().find(|n| set.contains(n) && !seen.contains(n));
        match next {
            Some(n) => {
                seen.insert(n);
                out.push(n);
            }
            None => break,
        }
    }
    if out.len() != sorted.len() {
        return Err(ContourError::Disconnected);
    }
    let cyclic = terminal.is_none() && out.len() > 2 && out[0].touches(*out.last().unwrap());
    Ok(Chain { points: out, cyclic })
}

/// Unit vector of an 8-neighbour step.
pub fn step_vector(from: Pixel, to: Pixel) -> Vec2 {
    Vec2::new((to.x - from.x) as f64, (to.y - from.y) as f64).normalized()
}

/// Direction label of each point: the unit vector towards its successor.
/// Open chains have no label for their last point; rings wrap.
pub fn direction_codes(chain: &Chain) -> Vec<Vec2> {
    let n = chain.points.len();
    let steps = if chain.cyclic { n } else { n.saturating_sub(1) };
    (0..steps).map(|i| step_vector(chain.points[i], chain.points[(i + 1) % n])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    /// Index into the chain.
    pub index: usize,
    /// Degrees per edge point, after sign normalization.
    pub kappa: f64,
    pub t1: Vec2,
    pub t2: Vec2,
    /// Normalized `t2 − t1`; zero where the tangents agree.
    pub inward: Vec2,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurvatureProfile {
    pub window: usize,
    pub points: Vec<ProfilePoint>,
    /// True when all signs were inverted to make positive curvature the majority.
    pub flipped: bool,
}

impl CurvatureProfile {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean_kappa(&self) -> Option<f64> {
        (!self.points.is_empty()).then(|| self.points.iter().map(|p| p.kappa).sum::<f64>() / self.points.len() as f64)
    }
}

/// Window-tangent curvature at every point with `window` labelled points on
/// each side, excluding the point's own label. Open chains need at least
/// `2·window + 2` points; shorter chains give an empty profile.
pub fn curvature_profile(chain: &Chain, window: usize) -> CurvatureProfile {
    let labels = direction_codes(chain);
    let n = chain.points.len();
    let nl = window.max(1);
    let indices: Vec<usize> = if chain.cyclic {
        if n < 2 * nl + 1 {
            Vec::new()
        } else {
            (0..n).collect()
        }
    } else if n < 2 * nl + 2 {
        Vec::new()
    } else {
        (nl..=n - 2 - nl).collect()
    };
    let label = |j: isize| labels[j.rem_euclid(labels.len() as isize) as usize];
    let mean = |from: isize, to: isize| {
        let mut s = Vec2::ZERO;
        for j in from..=to {
            s = s + label(j);
        }
        s * (1.0 / (to - from + 1) as f64)
    };
    let mut pts: Vec<ProfilePoint> = indices
        .into_iter()
        .map(|i| {
            let i_s = i as isize;
            let k = nl as isize;
            let t1 = mean(i_s - k, i_s - 1);
            let t2 = mean(i_s + 1, i_s + k);
            let dphi = wrap_pi(t2.y.atan2(t2.x) - t1.y.atan2(t1.x));
            ProfilePoint { index: i, kappa: dphi.to_degrees() / nl as f64, t1, t2, inward: (t2 - t1).normalized() }
        })
        .collect();
    let neg = pts.iter().filter(|p| p.kappa < 0.0).count();
    let pos = pts.iter().filter(|p| p.kappa > 0.0).count();
    let flipped = neg > pos;
    if flipped {
        for p in &mut pts {
            p.kappa = -p.kappa;
        }
    }
    CurvatureProfile { window: nl, points: pts, flipped }
}

/// Sends eight rays from `origin` through the label grid of `edges` and
/// returns the indices of selected edges in ascending order. Each ray takes
/// the first edge it meets and any further edge within `radius`. Edges with
/// fewer than `min_points` points are transparent.
pub fn select_edges(
    edges: &[Edge],
    width: usize,
    height: usize,
    origin: Vec2,
    radius: f64,
    min_points: usize,
) -> Vec<usize> {
    let mut grid = vec![usize::MAX; width * height];
    for (id, e) in edges.iter().enumerate() {
        if e.points.len() < min_points {
            continue;
        }
        for p in &e.points {
            if p.x >= 0 && p.y >= 0 && (p.x as usize) < width && (p.y as usize) < height {
                grid[p.y as usize * width + p.x as usize] = id;
            }
        }
    }
    let lookup = |x: i32, y: i32| -> Option<usize> {
        if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
            return None;
        }
        let id = grid[y as usize * width + x as usize];
        (id != usize::MAX).then_some(id)
    };
    let o = origin.round();
    let mut chosen: Vec<usize> = Vec::new();
    for (dx, dy) in NEIGHBOUR_OFFSETS {
        let mut first = true;
        let (mut x, mut y) = (o.x, o.y);
        let mut visit = |px: i32, py: i32, first: &mut bool| -> bool {
            if let Some(id) = lookup(px, py) {
                let d = Vec2::new(px as f64, py as f64).dist(origin);
                if *first || d <= radius {
                    if !chosen.contains(&id) {
                        chosen.push(id);
                    }
                    *first = false;
                } else {
                    return false;
                }
            }
            true
        };
        if !visit(x, y, &mut first) {
            continue;
        }
        loop {
            if dx != 0 && dy != 0 {
                // Diagonal rays also test the two pixels they squeeze between so
                // that 8-connected lines cannot slip through.
                let a = visit(x + dx, y, &mut first);
                let b = visit(x, y + dy, &mut first);
                if !a || !b {
                    break;
                }
            }
            x += dx;
            y += dy;
            if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
                break;
            }
            if !visit(x, y, &mut first) {
                break;
            }
            if !first && Vec2::new(x as f64, y as f64).dist(origin) > radius {
                break;
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Grid of curvature extremes over circumference, aspect ratio and window length.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureModel {
    pub circumferences: Vec<f64>,
    pub aspect_ratios: Vec<f64>,
    pub windows: Vec<usize>,
    /// Indexed `[window][aspect][circumference]`, flattened.
    kappa_min: Vec<f64>,
    kappa_max: Vec<f64>,
    extrapolated: Vec<bool>,
}

const MODEL_HEADER: &str = "pupiltrack-curvature v1";

impl CurvatureModel {
    /// The calibration table shipped with the crate.
    pub fn shipped() -> Self {
        Self::parse(include_str!("../data/curvature.cal")).expect("shipped curvature table parses")
    }

    fn idx(&self, w: usize, a: usize, c: usize) -> usize {
        (w * self.aspect_ratios.len() + a) * self.circumferences.len() + c
    }

    pub fn node(&self, window_idx: usize, ar_idx: usize, c_idx: usize) -> (f64, f64) {
        let i = self.idx(window_idx, ar_idx, c_idx);
        (self.kappa_min[i], self.kappa_max[i])
    }

    pub fn is_extrapolated(&self, window_idx: usize, ar_idx: usize, c_idx: usize) -> bool {
        self.extrapolated[self.idx(window_idx, ar_idx, c_idx)]
    }

    fn window_index(&self, window: usize) -> usize {
        let mut best = 0;
        for (i, &w) in self.windows.iter().enumerate() {
            if w.abs_diff(window) < self.windows[best].abs_diff(window) {
                best = i;
            }
        }
        best
    }

    /// Bilinear in (circumference, aspect ratio), nearest in window length;
    /// arguments are clamped to the grid.
    pub fn lookup(&self, c: f64, ar: f64, window: usize) -> (f64, f64) {
        let w = self.window_index(window);
        let (ci, cf) = bracket(&self.circumferences, c);
        let (ai, af) = bracket(&self.aspect_ratios, ar);
        let get = |a: usize, ci: usize| self.node(w, a, ci);
        let c1 = (ci + 1).min(self.circumferences.len() - 1);
        let a1 = (ai + 1).min(self.aspect_ratios.len() - 1);
        let lerp = |p: (f64, f64), q: (f64, f64), t: f64| (p.0 + (q.0 - p.0) * t, p.1 + (q.1 - p.1) * t);
        let lo = lerp(get(ai, ci), get(ai, c1), cf);
        let hi = lerp(get(a1, ci), get(a1, c1), cf);
        lerp(lo, hi, af)
    }

    pub fn parse(text: &str) -> Result<Self, ContourError> {
        let bad = |m: &str| ContourError::Model(m.to_string());
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let mut dims = header.split_whitespace();
        if dims.next() != Some("pupiltrack-curvature") || dims.next() != Some("v1") {
            return Err(bad("unknown header"));
        }
        let dim: Vec<usize> =
            dims.map(|d| d.parse::<usize>().map_err(|_| bad("bad grid dimension"))).collect::<Result<_, _>>()?;
        let [nc, na, nw] = dim[..] else {
            return Err(bad("header needs three grid dimensions"));
        };
        let mut rows: Vec<(f64, f64, usize, f64, f64)> = Vec::new();
        let mut flagged: Vec<(f64, f64, usize)> = Vec::new();
        for l in lines {
            if let Some(rest) = l.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                if parts.next() == Some("extrapolated") {
                    let v: Vec<&str> = parts.collect();
                    if v.len() == 3 {
                        let c = v[0].parse().map_err(|_| bad("bad flag row"))?;
                        let a = v[1].parse().map_err(|_| bad("bad flag row"))?;
                        let w = v[2].parse().map_err(|_| bad("bad flag row"))?;
                        flagged.push((c, a, w));
                    }
                }
                continue;
            }
            if l.starts_with('C') {
                continue;
            }
            let v: Vec<&str> = l.split_whitespace().collect();
            if v.len() != 5 {
                return Err(bad(&format!("row needs 5 columns: {l}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s}")));
            rows.push((num(v[0])?, num(v[1])?, v[2].parse().map_err(|_| bad("bad window"))?, num(v[3])?, num(v[4])?));
        }
        if rows.len() != nc * na * nw {
            return Err(bad(&format!("expected {} rows, found {}", nc * na * nw, rows.len())));
        }
        let uniq_f = |mut v: Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            v
        };
        let circumferences = uniq_f(rows.iter().map(|r| r.0).collect());
        let aspect_ratios = uniq_f(rows.iter().map(|r| r.1).collect());
        let mut windows: Vec<usize> = rows.iter().map(|r| r.2).collect();
        windows.sort_unstable();
        windows.dedup();
        if circumferences.len() != nc || aspect_ratios.len() != na || windows.len() != nw {
            return Err(bad("grid does not match header"));
        }
        let mut m = CurvatureModel {
            circumferences,
            aspect_ratios,
            windows,
            kappa_min: vec![f64::NAN; nc * na * nw],
            kappa_max: vec![f64::NAN; nc * na * nw],
            extrapolated: vec![false; nc * na * nw],
        };
        let pos = |v: &[f64], x: f64| v.iter().position(|&y| y == x).unwrap();
        for (c, a, w, lo, hi) in rows {
            let i = m.idx(m.windows.iter().position(|&y| y == w).unwrap(), pos(&m.aspect_ratios, a), pos(&m.circumferences, c));
            m.kappa_min[i] = lo;
            m.kappa_max[i] = hi;
        }
        if m.kappa_min.iter().chain(m.kappa_max.iter()).any(|v| v.is_nan()) {
            return Err(bad("grid has missing nodes"));
        }
        for (c, a, w) in flagged {
            if let (Some(ci), Some(ai), Some(wi)) = (
                m.circumferences.iter().position(|&y| y == c),
                m.aspect_ratios.iter().position(|&y| y == a),
                m.windows.iter().position(|&y| y == w),
            ) {
                let i = m.idx(wi, ai, ci);
                m.extrapolated[i] = true;
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{MODEL_HEADER} {} {} {}",
            self.circumferences.len(),
            self.aspect_ratios.len(),
            self.windows.len()
        );
        let _ = writeln!(s, "C AR N_l kappa_min kappa_max");
        for (wi, &w) in self.windows.iter().enumerate() {
            for (ai, &a) in self.aspect_ratios.iter().enumerate() {
                for (ci, &c) in self.circumferences.iter().enumerate() {
                    let (lo, hi) = self.node(wi, ai, ci);
                    if self.is_extrapolated(wi, ai, ci) {
                        let _ = writeln!(s, "# extrapolated {c} {a} {w}");
                    }
                    let _ = writeln!(s, "{c} {a} {w} {lo:.4} {hi:.4}");
                }
            }
        }
        s
    }
}

/// Lower grid index and interpolation fraction for `x`, clamped to the grid.
fn bracket(nodes: &[f64], x: f64) -> (usize, f64) {
    if nodes.len() == 1 || x <= nodes[0] {
        return (0, 0.0);
    }
    let last = nodes.len() - 1;
    if x >= nodes[last] {
        return (last, 0.0);
    }
    let i = nodes.windows(2).position(|w| x >= w[0] && x < w[1]).unwrap_or(last - 1);
    (i, (x - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

/// Curvature limits for the predicted pupil: the model is queried at the
/// smallest plausible circumference and aspect ratio and widened by `offset` degrees.
pub fn curvature_limits(
    model: &CurvatureModel,
    c_hat: f64,
    ar_hat: f64,
    delta_c: f64,
    delta_ar: f64,
    window: usize,
    offset: f64,
) -> (f64, f64) {
    let (lo, hi) = model.lookup(c_hat * (1.0 - delta_c), ar_hat - delta_ar, window);
    (lo - offset, hi + offset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationGrid {
    pub circumferences: Vec<f64>,
    pub aspect_ratios: Vec<f64>,
    pub windows: Vec<usize>,
    /// Rendered placements per (C, AR) node; each varies orientation and sub-pixel offset.
    pub placements: usize,
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        Self {
            circumferences: (0..36).map(|i| 30.0 + 10.0 * i as f64).collect(),
            aspect_ratios: (0..18).map(|i| (15 + 5 * i) as f64 / 100.0).collect(),
            windows: (5..=11).collect(),
            placements: 8,
        }
    }
}

/// Semi-axes of an ellipse with circumference `c` and aspect ratio `ar`.
pub fn axes_for(c: f64, ar: f64) -> (f64, f64) {
    // Perimeter is linear in scale; solve with a unit major axis.
    let unit = crate::ellipse::ramanujan_circumference(1.0, ar);
    let a = c / unit;
    (a, a * ar)
}

/// Measured (min, max) curvature for every window over the rendered placements,
/// or `None` when no placement produced a clean closed contour.
pub fn measure_node(c: f64, ar: f64, windows: &[usize], placements: usize) -> Vec<Option<(f64, f64)>> {
    let (a, b) = axes_for(c, ar);
    let margin = 8.0;
    let size = (2.0 * a + 2.0 * margin).ceil() as usize;
    let mut out: Vec<Option<(f64, f64)>> = vec![None; windows.len()];
    for k in 0..placements.max(1) {
        let angle = std::f64::consts::PI * k as f64 / placements.max(1) as f64;
        let frac = 0.125 * k as f64;
        let centre = size as f64 / 2.0 + frac;
        let mut img = GrayImage::filled(size + 1, size + 1, 255);
        fill_ellipse(&mut img, &EllipseShape { cx: centre, cy: centre - 0.5 * frac, a, b, angle }, 0, 4);
        let map = thin(&canny(&img, &CannyParams::default()));
        let Some(edge) = extract_edges(&map).into_iter().max_by_key(|e| e.points.len()) else {
            continue;
        };
        let Ok(chain) = order_chain(&edge.points) else {
            continue;
        };
        if !chain.cyclic {
            continue;
        }
        for (wi, &w) in windows.iter().enumerate() {
            let prof = curvature_profile(&chain, w);
            if prof.is_empty() {
                continue;
            }
            let lo = prof.points.iter().map(|p| p.kappa).fold(f64::INFINITY, f64::min);
            let hi = prof.points.iter().map(|p| p.kappa).fold(f64::NEG_INFINITY, f64::max);
            out[wi] = Some(match out[wi] {
                Some((l, h)) => (l.min(lo), h.max(hi)),
                None => (lo, hi),
            });
        }
    }
    out
}

/// Renders solid ellipses over the grid, records per-node curvature extremes,
/// fills failed nodes from their nearest measured neighbour (flagged), and
/// applies a monotone envelope: the range never narrows as aspect ratio
/// falls and never widens as the window grows.
pub fn calibrate_curvature(grid: &CalibrationGrid) -> CurvatureModel {
    use rayon::prelude::*;
    let (nc, na, nw) = (grid.circumferences.len(), grid.aspect_ratios.len(), grid.windows.len());
    let nodes: Vec<(usize, usize)> = (0..na).flat_map(|a| (0..nc).map(move |c| (a, c))).collect();
    let measured: Vec<Vec<Option<(f64, f64)>>> = nodes
        .par_iter()
        .map(|&(a, c)| measure_node(grid.circumferences[c], grid.aspect_ratios[a], &grid.windows, grid.placements))
        .collect();
    let mut m = CurvatureModel {
        circumferences: grid.circumferences.clone(),
        aspect_ratios: grid.aspect_ratios.clone(),
        windows: grid.windows.clone(),
        kappa_min: vec![0.0; nc * na * nw],
        kappa_max: vec![0.0; nc * na * nw],
        extrapolated: vec![false; nc * na * nw],
    };
    for w in 0..nw {
        let raw = |a: usize, c: usize| measured[a * nc + c][w];
        for a in 0..na {
            for c in 0..nc {
                let i = m.idx(w, a, c);
                let value = raw(a, c).or_else(|| {
                    m.extrapolated[i] = true;
                    // Nearest measured node by grid distance, preferring the same circumference.
                    let mut best: Option<((usize, usize), (f64, f64))> = None;
                    for a2 in 0..na {
                        for c2 in 0..nc {
                            if let Some(v) = raw(a2, c2) {
                                let d = (c2.abs_diff(c), a2.abs_diff(a));
                                if best.is_none_or(|(bd, _)| d < bd) {
                                    best = Some((d, v));
                                }
                            }
                        }
                    }
                    best.map(|(_, v)| v)
                });
                let (lo, hi) = value.unwrap_or((0.0, 0.0));
                m.kappa_min[i] = lo;
                m.kappa_max[i] = hi;
            }
        }
    }
    apply_envelope(&mut m);
    m
}

fn apply_envelope(m: &mut CurvatureModel) {
    let (nc, na, nw) = (m.circumferences.len(), m.aspect_ratios.len(), m.windows.len());
    for w in 0..nw {
        for c in 0..nc {
            for a in (0..na.saturating_sub(1)).rev() {
                let (i, up) = (m.idx(w, a, c), m.idx(w, a + 1, c));
                m.kappa_max[i] = m.kappa_max[i].max(m.kappa_max[up]);
                m.kappa_min[i] = m.kappa_min[i].min(m.kappa_min[up]);
            }
        }
    }
    for w in 1..nw {
        for a in 0..na {
            for c in 0..nc {
                let (i, prev) = (m.idx(w, a, c), m.idx(w - 1, a, c));
                m.kappa_max[i] = m.kappa_max[i].min(m.kappa_max[prev]);
                m.kappa_min[i] = m.kappa_min[i].max(m.kappa_min[prev]);
                if m.kappa_min[i] > m.kappa_max[i] {
                    let mid = 0.5 * (m.kappa_min[i] + m.kappa_max[i]);
                    m.kappa_min[i] = mid;
                    m.kappa_max[i] = mid;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(points: Vec<Pixel>) -> Edge {
        Edge { points, tagged: Vec::new() }
    }

    fn ring(cx: i32, cy: i32, r: f64) -> Vec<Pixel> {
        let mut pts: Vec<Pixel> = Vec::new();
        let n = (r * 16.0) as usize;
        for k in 0..n {
            let t = std::f64::consts::TAU * k as f64 / n as f64;
            let p = Pixel::new(cx + (r * t.cos()).round() as i32, cy + (r * t.sin()).round() as i32);
            if !pts.contains(&p) {
                pts.push(p);
            }
        }
        pts
    }

    fn thinned_ring(cx: f64, cy: f64, r: f64, size: usize) -> Chain {
        let mut img = GrayImage::filled(size, size, 220);
        fill_ellipse(&mut img, &EllipseShape { cx, cy, a: r, b: r, angle: 0.0 }, 30, 4);
        let map = thin(&canny(&img, &CannyParams::default()));
        let e = extract_edges(&map).into_iter().max_by_key(|e| e.len()).unwrap();
        order_chain(&e.points).unwrap()
    }

    #[test]
    fn horizontal_line_labels() {
        let c = order_chain(&(0..5).map(|x| Pixel::new(x, 3)).collect::<Vec<_>>()).unwrap();
        let d = direction_codes(&c);
        assert_eq!(d.len(), 4);
        assert!(d.iter().all(|v| *v == Vec2::new(1.0, 0.0)));
    }

    #[test]
    fn diagonal_labels() {
        let c = order_chain(&(0..5).map(|i| Pixel::new(i, i)).collect::<Vec<_>>()).unwrap();
        for v in direction_codes(&c) {
            assert!((v.x - 0.5f64.sqrt()).abs() < 1e-12 && (v.y - 0.5f64.sqrt()).abs() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn square_loop_labels_cycle() {
        let pts = vec![Pixel::new(0, 0), Pixel::new(1, 0), Pixel::new(1, 1), Pixel::new(0, 1)];
        let c = Chain { points: pts, cyclic: true };
        let d = direction_codes(&c);
        assert_eq!(d, vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(-1.0, 0.0), Vec2::new(0.0, -1.0)]);
    }

    #[test]
    fn branching_rejected() {
        let mut pts: Vec<Pixel> = (0..6).map(|x| Pixel::new(x, 0)).collect();
        pts.extend((1..4).map(|y| Pixel::new(3, y)));
        assert!(matches!(order_chain(&pts), Err(ContourError::Branching(_))));
    }

    #[test]
    fn straight_line_zero_curvature() {
        let c = order_chain(&(0..40).map(|x| Pixel::new(x, 2)).collect::<Vec<_>>()).unwrap();
        let p = curvature_profile(&c, 7);
        assert_eq!(p.points.len(), 40 - 2 * 7 - 1);
        assert!(p.points.iter().all(|q| q.kappa == 0.0));
    }

    #[test]
    fn short_chain_empty_profile() {
        let c = order_chain(&(0..15).map(|x| Pixel::new(x, 2)).collect::<Vec<_>>()).unwrap();
        assert!(curvature_profile(&c, 7).is_empty());
    }

    #[test]
    fn right_angle_peak_at_corner() {
        // Thinned corner: the cut pixel (14, 0) is absent.
        let mut pts: Vec<Pixel> = (0..14).map(|x| Pixel::new(x, 0)).collect();
        pts.extend((1..15).map(|y| Pixel::new(14, y)));
        let c = order_chain(&pts).unwrap();
        let p = curvature_profile(&c, 5);
        let peak = p.points.iter().max_by(|a, b| a.kappa.abs().partial_cmp(&b.kappa.abs()).unwrap()).unwrap();
        assert_eq!(c.points[peak.index], Pixel::new(13, 0));
        // Window tangents (1,0) and (0,1): 90° over 5 points.
        assert!((peak.kappa.abs() - 18.0).abs() < 1e-9);
    }

    #[test]
    fn circle_curvature_matches_polar_oracle() {
        let chain = thinned_ring(60.2, 59.7, 50.0, 122);
        assert!(chain.cyclic);
        let nl = 7;
        let prof = curvature_profile(&chain, nl);
        let n = chain.points.len();
        let polar = |p: Pixel| (p.y as f64 - 59.7).atan2(p.x as f64 - 60.2);
        // Tangent rotation between the window centres equals the polar angle swept.
        let mut oracle = 0.0;
        for q in &prof.points {
            let i = q.index as isize;
            let half = (nl as isize + 1) / 2;
            let ahead = chain.points[(i + half + 1).rem_euclid(n as isize) as usize];
            let behind = chain.points[(i - half).rem_euclid(n as isize) as usize];
            oracle += wrap_pi(polar(ahead) - polar(behind)).abs().to_degrees() / nl as f64;
        }
        oracle /= prof.points.len() as f64;
        let mean = prof.mean_kappa().unwrap();
        assert!(mean > 0.0);
        assert!(((mean - oracle) / oracle).abs() < 0.15, "{mean} vs {oracle}");
        let positive = prof.points.iter().filter(|p| p.kappa >= 0.0).count();
        assert!(positive as f64 >= 0.9 * prof.points.len() as f64);
        for q in &prof.points {
            let centre = Vec2::new(60.2, 59.7) - chain.points[q.index].to_vec();
            if q.inward != Vec2::ZERO {
                assert!(q.inward.x * centre.x + q.inward.y * centre.y > 0.0);
            }
        }
    }

    #[test]
    fn consecutive_labels_within_right_angle() {
        let chain = thinned_ring(40.4, 40.1, 25.0, 82);
        let d = direction_codes(&chain);
        for i in 0..d.len() {
            let (a, b) = (d[i], d[(i + 1) % d.len()]);
            assert!(a.x * b.x + a.y * b.y >= -1e-9, "turn over 90 degrees at {i}");
        }
    }

    #[test]
    fn rays_select_enclosing_ring_once() {
        let edges = vec![edge(ring(30, 30, 12.0))];
        let sel = select_edges(&edges, 60, 60, Vec2::new(30.0, 30.0), 20.0, 7);
        assert_eq!(sel, vec![0]);
    }

    #[test]
    fn rays_ignore_small_specks() {
        let speck = edge(vec![Pixel::new(35, 30), Pixel::new(36, 30), Pixel::new(37, 30), Pixel::new(38, 30)]);
        let edges = vec![speck, edge(ring(30, 30, 20.0))];
        let sel = select_edges(&edges, 60, 60, Vec2::new(30.0, 30.0), 5.0, 7);
        assert_eq!(sel, vec![1]);
    }

    #[test]
    fn rays_pass_inner_ring_within_radius() {
        let edges = vec![edge(ring(40, 40, 5.0)), edge(ring(40, 40, 20.0))];
        let sel = select_edges(&edges, 80, 80, Vec2::new(40.0, 40.0), 25.0, 7);
        assert_eq!(sel, vec![0, 1]);
        let sel = select_edges(&edges, 80, 80, Vec2::new(40.0, 40.0), 10.0, 7);
        assert_eq!(sel, vec![0]);
    }

    #[test]
    fn diagonal_ray_cannot_slip_through() {
        // Anti-diagonal line crossing the SE ray between lattice points.
        let line: Vec<Pixel> = (0..20).map(|i| Pixel::new(25 + i, 44 - i)).collect();
        let edges = vec![edge(line)];
        let sel = select_edges(&edges, 60, 60, Vec2::new(20.0, 20.0), 5.0, 7);
        assert_eq!(sel, vec![0]);
    }

    fn toy_model() -> CurvatureModel {
        let mut m = CurvatureModel {
            circumferences: vec![100.0, 200.0],
            aspect_ratios: vec![0.5, 1.0],
            windows: vec![5, 7],
            kappa_min: vec![0.0; 8],
            kappa_max: vec![0.0; 8],
            extrapolated: vec![false; 8],
        };
        for w in 0..2 {
            for a in 0..2 {
                for c in 0..2 {
                    let i = m.idx(w, a, c);
                    m.kappa_min[i] = -(w as f64) - a as f64 - c as f64;
                    m.kappa_max[i] = 10.0 + 4.0 * (1 - a) as f64 - c as f64 - w as f64;
                }
            }
        }
        m
    }

    #[test]
    fn lookup_exact_at_nodes_and_clamped() {
        let m = toy_model();
        assert_eq!(m.lookup(100.0, 0.5, 5), m.node(0, 0, 0));
        assert_eq!(m.lookup(200.0, 1.0, 7), m.node(1, 1, 1));
        assert_eq!(m.lookup(10.0, 0.1, 5), m.node(0, 0, 0));
        assert_eq!(m.lookup(150.0, 0.75, 6), {
            let v: Vec<(f64, f64)> = (0..2).flat_map(|a| (0..2).map(move |c| (a, c))).map(|(a, c)| m.node(0, a, c)).collect();
            let lo = v.iter().map(|x| x.0).sum::<f64>() / 4.0;
            let hi = v.iter().map(|x| x.1).sum::<f64>() / 4.0;
            (lo, hi)
        });
        let (lo, hi) = curvature_limits(&m, 100.0, 0.5, 0.0, 0.0, 5, 4.0);
        assert_eq!((lo, hi), (m.node(0, 0, 0).0 - 4.0, m.node(0, 0, 0).1 + 4.0));
    }

    #[test]
    fn text_round_trip() {
        let mut m = toy_model();
        m.extrapolated[3] = true;
        let back = CurvatureModel::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn shipped_model_is_monotone() {
        let m = CurvatureModel::shipped();
        let (nc, na, nw) = (m.circumferences.len(), m.aspect_ratios.len(), m.windows.len());
        for w in 0..nw {
            for a in 0..na {
                for c in 0..nc {
                    let (lo, hi) = m.node(w, a, c);
                    assert!(hi >= lo);
                    if a + 1 < na {
                        let (lo2, hi2) = m.node(w, a + 1, c);
                        assert!(hi >= hi2 && lo <= lo2);
                    }
                    if w + 1 < nw {
                        let (lo2, hi2) = m.node(w + 1, a, c);
                        assert!(hi2 <= hi && lo2 >= lo);
                    }
                }
            }
        }
    }

    #[test]
    fn shipped_circle_band_contains_ring_curvature() {
        let m = CurvatureModel::shipped();
        let a = m.aspect_ratios.len() - 1;
        let w = m.windows.iter().position(|&w| w == 7).unwrap();
        for c in 0..m.circumferences.len() {
            let (lo, hi) = m.node(w, a, c);
            // A closed 8-connected contour of length C has between C/√2 and C points.
            let fewest = 360.0 / m.circumferences[c];
            let most = fewest * std::f64::consts::SQRT_2;
            assert!(lo <= most * 1.1 && hi >= fewest * 0.9, "C {}: {lo}..{hi}", m.circumferences[c]);
        }
    }

    #[test]
    fn regenerated_column_matches_shipped() {
        let shipped = CurvatureModel::shipped();
        let c = shipped.circumferences.iter().position(|&c| c == 150.0).unwrap();
        // The envelope never mixes circumferences, so one column reproduces independently.
        let grid = CalibrationGrid { circumferences: vec![150.0], ..CalibrationGrid::default() };
        let fresh = calibrate_curvature(&grid);
        for w in 0..shipped.windows.len() {
            for a in 0..shipped.aspect_ratios.len() {
                let (lo, hi) = shipped.node(w, a, c);
                let (flo, fhi) = fresh.node(w, a, 0);
                assert!((lo - flo).abs() < 1e-3 && (hi - fhi).abs() < 1e-3);
            }
        }
    }
}
