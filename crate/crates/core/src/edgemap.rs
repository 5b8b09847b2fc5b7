//! Binary edge maps: Canny detection, morphological thinning with tagging of
//! removed points, and extraction of 8-connected edges.

use serde::{Deserialize, Serialize};

use crate::geom::{Pixel, NEIGHBOUR_OFFSETS};
use crate::raster::{gaussian_blur_f32, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CannyParams {
    pub low: f64,
    pub high: f64,
    pub blur_sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { low: 75.0, high: 150.0, blur_sigma: 1.4 }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.low >= 0.0 && self.low <= self.high) {
            return Err(format!("canny thresholds need 0 <= low <= high ({}, {})", self.low, self.high));
        }
        if self.blur_sigma < 0.0 {
            return Err("canny.blur_sigma must be >= 0".into());
        }
        Ok(())
    }
}

/// Binary edge grid plus the grid of points erased by thinning.
#[derive(Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    active: Vec<bool>,
    tagged: Vec<bool>,
}

impl std::fmt::Debug for EdgeMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "EdgeMap {}x{}", self.width, self.height)?;
        for y in 0..self.height {
            for x in 0..self.width {
                let c = if self.is_active(x, y) {
                    '#'
                } else if self.is_tagged(x, y) {
                    '+'
                } else {
                    '.'
                };
                write!(f, "{c}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl EdgeMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, active: vec![false; width * height], tagged: vec![false; width * height] }
    }

    /// Builds a map from rows of `#` (edge) and `.` (background).
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut m = Self::new(width, height);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                if ch == '#' {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_active(&self, x: usize, y: usize) -> bool {
        self.active[y * self.width + x]
    }

    pub fn is_tagged(&self, x: usize, y: usize) -> bool {
        self.tagged[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.active[y * self.width + x] = on;
    }

    /// Active state at a signed coordinate; outside the grid reads as background.
    pub fn at(&self, p: Pixel) -> bool {
        p.x >= 0
            && p.y >= 0
            && (p.x as usize) < self.width
            && (p.y as usize) < self.height
            && self.active[p.y as usize * self.width + p.x as usize]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_pixels(&self) -> Vec<Pixel> {
        self.pixels_where(&self.active)
    }

    pub fn tagged_pixels(&self) -> Vec<Pixel> {
        self.pixels_where(&self.tagged)
    }

    fn pixels_where(&self, grid: &[bool]) -> Vec<Pixel> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if grid[y * self.width + x] {
                    out.push(Pixel::new(x as i32, y as i32));
                }
            }
        }
        out
    }

    /// Debug rendering: active pixels white, tagged pixels gray.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            if self.is_active(x, y) {
                255
            } else if self.is_tagged(x, y) {
                128
            } else {
                0
            }
        })
    }
}

/// Gradient, non-maximum suppression and hysteresis on the blurred image.
pub fn canny(img: &GrayImage, params: &CannyParams) -> EdgeMap {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return EdgeMap::new(w, h);
    }
    let smooth: Vec<f32> = if params.blur_sigma > 0.0 {
        gaussian_blur_f32(img, params.blur_sigma)
    } else {
        img.data().iter().map(|&v| v as f32).collect()
    };
    // Sobel derivatives with clamped borders.
    let grad = |x: usize, y: usize| {
        let up = &smooth[y.saturating_sub(1) * w..][..w];
        let mid = &smooth[y * w..][..w];
        let down = &smooth[(y + 1).min(h - 1) * w..][..w];
        let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let dx = (up[r] + 2.0 * mid[r] + down[r]) - (up[l] + 2.0 * mid[l] + down[l]);
        let dy = (down[l] + 2.0 * down[x] + down[r]) - (up[l] + 2.0 * up[x] + up[r]);
        (dx, dy)
    };
    // Magnitudes on a grid with a one-pixel zero border, so suppression
    // needs no bounds checks.
    let pw = w + 2;
    let mut mag = vec![0f32; pw * (h + 2)];
    for y in 0..h {
        let up = &smooth[y.saturating_sub(1) * w..][..w];
        let mid = &smooth[y * w..][..w];
        let down = &smooth[(y + 1).min(h - 1) * w..][..w];
        let mrow = &mut mag[(y + 1) * pw + 1..][..w];
        // Interior columns in a branch-free loop; the two border columns clamp.
        if w > 2 {
            let n = w - 2;
            let (ul, uc, ur) = (&up[..n], &up[1..n + 1], &up[2..]);
            let (ml, mr) = (&mid[..n], &mid[2..]);
            let (dl, dc, dr) = (&down[..n], &down[1..n + 1], &down[2..]);
            let out = &mut mrow[1..n + 1];
            for i in 0..n {
                let dx = (ur[i] + 2.0 * mr[i] + dr[i]) - (ul[i] + 2.0 * ml[i] + dl[i]);
                let dy = (dl[i] + 2.0 * dc[i] + dr[i]) - (ul[i] + 2.0 * uc[i] + ur[i]);
                out[i] = (dx * dx + dy * dy).sqrt();
            }
        }
        for x in [0, w - 1] {
            let (dx, dy) = grad(x, y);
            mrow[x] = (dx * dx + dy * dy).sqrt();
        }
    }

    let low = params.low as f32;
    let high = params.high as f32;
    // Offsets of the (earlier, later) neighbour along the gradient per sector:
    // horizontal, vertical, then the two diagonals.
    let along: [(usize, usize); 4] = [(pw, pw + 2), (1, 2 * pw + 1), (0, 2 * pw + 2), (2, 2 * pw)];
    let tan22 = 0.414_213_56f32;
    // 0 = none, 1 = weak, 2 = strong
    let mut class = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let c = (y + 1) * pw + x + 1;
            let g = mag[c];
            if g < low || g == 0.0 {
                continue;
            }
            // Window origin is the top-left neighbour.
            let o = c - pw - 1;
            let (dx, dy) = grad(x, y);
            let (ax, ay) = (dx.abs(), dy.abs());
            let sector = if ay <= ax * tan22 {
                0
            } else if ax <= ay * tan22 {
                1
            } else if (dx > 0.0) == (dy > 0.0) {
                2
            } else {
                3
            };
            let (a, b) = along[sector];
            let (n1, n2) = (mag[o + a], mag[o + b]);
            // Ties broken towards the earlier neighbour so plateaus keep one pixel.
            if g > n1 && g >= n2 {
                class[y * w + x] = if g >= high { 2 } else { 1 };
            }
        }
    }

    let mut out = EdgeMap::new(w, h);
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..w * h {
        if class[i] == 2 && !out.active[i] {
            out.active[i] = true;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (jx, jy) = ((j % w) as i32, (j / w) as i32);
                for (dx, dy) in NEIGHBOUR_OFFSETS {
                    let (nx, ny) = (jx + dx, jy + dy);
                    if nx < 0 || ny < 0 || nx >= w as i32 || ny >= h as i32 {
                        continue;
                    }
                    let k = ny as usize * w + nx as usize;
                    if class[k] > 0 && !out.active[k] {
                        out.active[k] = true;
                        stack.push(k);
                    }
                }
            }
        }
    }
    out
}

/// A 3×3 neighbourhood template over the eight neighbours (clockwise from
/// east): `Some(true)` must be set, `Some(false)` must be clear, `None` is free.
type Template = [Option<bool>; 8];

// Indices into NEIGHBOUR_OFFSETS.
const E: usize = 0;
const SE: usize = 1;
const S: usize = 2;
const SW: usize = 3;
const W: usize = 4;
const NW: usize = 5;
const N: usize = 6;
const NE: usize = 7;

fn base_templates() -> [Template; 2] {
    let mut corner: Template = [None; 8];
    corner[N] = Some(true);
    corner[E] = Some(true);
    corner[W] = Some(false);
    corner[S] = Some(false);
    corner[SW] = Some(false);

    let mut flat: Template = [None; 8];
    for i in [NW, N, NE] {
        flat[i] = Some(false);
    }
    for i in [SW, S, SE] {
        flat[i] = Some(true);
    }
    [corner, flat]
}

/// All rotations and reflections of the two removal templates, deduplicated.
fn removal_templates() -> Vec<Template> {
    let rotate = |t: &Template| -> Template {
        let mut r = [None; 8];
        for (i, v) in t.iter().enumerate() {
            r[(i + 2) % 8] = *v;
        }
        r
    };
    // Mirror across the vertical axis: E<->W, NE<->NW, SE<->SW.
    let mirror = |t: &Template| -> Template {
        let mut r = [None; 8];
        for (i, v) in t.iter().enumerate() {
            r[(12 - i) % 8] = *v;
        }
        r
    };
    let mut out: Vec<Template> = Vec::new();
    for base in base_templates() {
        for m in [base, mirror(&base)] {
            let mut t = m;
            for _ in 0..4 {
                if !out.contains(&t) {
                    out.push(t);
                }
                t = rotate(&t);
            }
        }
    }
    out
}

/// Bit `i` set when neighbour `i` (in `NEIGHBOUR_OFFSETS` order) is active.
fn neighbour_bits(map: &EdgeMap, p: Pixel) -> u8 {
    NEIGHBOUR_OFFSETS
        .iter()
        .enumerate()
        .fold(0, |bits, (i, &(dx, dy))| bits | (u8::from(map.at(Pixel::new(p.x + dx, p.y + dy))) << i))
}

/// A template as (must-be-set, must-be-clear) neighbour masks.
fn template_masks(t: &Template) -> (u8, u8) {
    t.iter().enumerate().fold((0, 0), |(set, clear), (i, v)| match v {
        Some(true) => (set | 1 << i, clear),
        Some(false) => (set, clear | 1 << i),
        None => (set, clear),
    })
}

/// Removes corner and flat-boundary pixels until no template matches.
/// Removal happens in place during each raster pass; removed pixels are tagged.
pub fn thin(map: &EdgeMap) -> EdgeMap {
    let masks: Vec<(u8, u8)> = removal_templates().iter().map(template_masks).collect();
    let mut out = map.clone();
    // Raster-ordered active points; removals only ever shrink it.
    let mut live: Vec<usize> = (0..out.width * out.height).filter(|&i| out.active[i]).collect();
    loop {
        let mut removed = 0;
        for &i in &live {
            let p = Pixel::new((i % out.width) as i32, (i / out.width) as i32);
            let bits = neighbour_bits(&out, p);
            if masks.iter().any(|&(set, clear)| bits & set == set && bits & clear == 0) {
                out.active[i] = false;
                out.tagged[i] = true;
                removed += 1;
            }
        }
        if removed == 0 {
            return out;
        }
        live.retain(|&i| out.active[i]);
    }
}

/// One 8-connected set of edge points with the thinning-removed points next to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    /// Active points in discovery order.
    pub points: Vec<Pixel>,
    /// Points removed by thinning that belong to this component.
    pub tagged: Vec<Pixel>,
}

impl Edge {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Splits the active pixels into 8-connected components. Tagged pixels join
/// the component they are connected to through active or tagged pixels.
pub fn extract_edges(map: &EdgeMap) -> Vec<Edge> {
    let (w, h) = (map.width, map.height);
    let mut label = vec![u32::MAX; w * h];
    let mut edges: Vec<Edge> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !map.active[start] || label[start] != u32::MAX {
            continue;
        }
        let id = edges.len() as u32;
        let mut edge = Edge { points: Vec::new(), tagged: Vec::new() };
        label[start] = id;
        stack.push(start);
        while let Some(j) = stack.pop() {
            let (jx, jy) = ((j % w) as i32, (j / w) as i32);
            if map.active[j] {
                edge.points.push(Pixel::new(jx, jy));
            } else {
                edge.tagged.push(Pixel::new(jx, jy));
            }
            for (dx, dy) in NEIGHBOUR_OFFSETS {
                let (nx, ny) = (jx + dx, jy + dy);
                if nx < 0 || ny < 0 || nx >= w as i32 || ny >= h as i32 {
                    continue;
                }
                let k = ny as usize * w + nx as usize;
                if (map.active[k] || map.tagged[k]) && label[k] == u32::MAX {
                    label[k] = id;
                    stack.push(k);
                }
            }
        }
        edge.points.sort_by_key(|p| (p.y, p.x));
        edge.tagged.sort_by_key(|p| (p.y, p.x));
        edges.push(edge);
    }
    edges
}
