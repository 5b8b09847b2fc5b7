//! Edge segmentation ahead of classification: splitting branched edges into
//! simple paths, cutting at curvature breakpoints and trimming edges longer
//! than the predicted circumference.

use std::collections::{BTreeSet, VecDeque};

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};

use serde::{Deserialize, Serialize};

use crate::classify::{edge_features, tail_feature_values, tail_score, EdgeSigmas, EdgeWeights};
use crate::contour::{order_chain, Chain, CurvatureProfile, ProfilePoint};
use crate::geom::{chain_length, step_length, Pixel, Vec2};
use crate::raster::GrayImage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentError {
    #[error("edge has no branch or terminal vertices")]
    NoVertices,
    #[error("arc could not be ordered")]
    MalformedArc,
    #[error("more than {0} paths")]
    TooManyPaths(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentParams {
    /// Cap on enumerated paths before an edge is passed through unsegmented.
    pub path_cap: usize,
    /// Rounds of re-processing for arcs left over after path selection.
    pub max_rounds: usize,
    /// Degrees added to either side of the modelled curvature range.
    pub curvature_offset: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self { path_cap: 10_000, max_rounds: 3, curvature_offset: 4.0 }
    }
}

impl SegmentParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.path_cap == 0 || self.max_rounds == 0 {
            return Err("segment.path_cap and segment.max_rounds must be positive".into());
        }
        if !(self.curvature_offset >= 0.0) {
            return Err("segment.curvature_offset must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VertexKind {
    Branch,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub pixels: Vec<Pixel>,
    pub kind: VertexKind,
}

/// Points connecting two vertices, ordered from `ends.0` to `ends.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphArc {
    pub points: Vec<Pixel>,
    pub ends: (usize, usize),
}

impl GraphArc {
    pub fn is_self_loop(&self) -> bool {
        self.ends.0 == self.ends.1
    }

    pub fn other(&self, v: usize) -> usize {
        if self.ends.0 == v {
            self.ends.1
        } else {
            self.ends.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeGraph {
    pub vertices: Vec<Vertex>,
    pub arcs: Vec<GraphArc>,
    /// Points dropped by the arc filters.
    pub removed: Vec<Pixel>,
}

impl EdgeGraph {
    pub fn terminal_count(&self) -> usize {
        self.vertices.iter().filter(|v| v.kind == VertexKind::Terminal).count()
    }

    pub fn branch_count(&self) -> usize {
        self.vertices.iter().filter(|v| v.kind == VertexKind::Branch).count()
    }

    /// Every pixel still in the graph.
    pub fn pixels(&self) -> Vec<Pixel> {
        let mut out: Vec<Pixel> = self.vertices.iter().flat_map(|v| v.pixels.iter().copied()).collect();
        out.extend(self.arcs.iter().flat_map(|a| a.points.iter().copied()));
        out
    }
}

fn components(points: &[Pixel]) -> Vec<Vec<Pixel>> {
    let set: HashSet<Pixel> = points.iter().copied().collect();
    let mut sorted: Vec<Pixel> = set.iter().copied().collect();
    sorted.sort_by_key(|p| (p.y, p.x));
    let mut seen: HashSet<Pixel> = HashSet::default();
    let mut out = Vec::new();
    for &p in &sorted {
        if seen.contains(&p) {
            continue;
        }
        let mut comp = vec![p];
        seen.insert(p);
        let mut i = 0;
        while i < comp.len() {
            for n in comp[i].neighbours() {
                if set.contains(&n) && seen.insert(n) {
                    comp.push(n);
                }
            }
            i += 1;
        }
        comp.sort_by_key(|p| (p.y, p.x));
        out.push(comp);
    }
    out
}

fn has_branch(points: &[Pixel]) -> bool {
    let set: HashSet<Pixel> = points.iter().copied().collect();
    points.iter().any(|p| p.neighbours().iter().filter(|n| set.contains(n)).count() > 2)
}

/// Builds the vertex/arc graph of a thinned edge and applies the arc filters:
/// arcs with fewer than `window` points are removed when they end in a
/// terminal vertex, form a self-loop, or are the longer of two arcs joining
/// the same vertices.
pub fn edge_to_graph(points: &[Pixel], window: usize) -> Result<EdgeGraph, SegmentError> {
    let set: HashSet<Pixel> = points.iter().copied().collect();
    let degree = |p: Pixel| p.neighbours().iter().filter(|n| set.contains(n)).count();
    let vertex_px: Vec<Pixel> = points.iter().copied().filter(|&p| degree(p) != 2).collect();
    if vertex_px.is_empty() {
        return Err(SegmentError::NoVertices);
    }
    let mut owner: HashMap<Pixel, usize> = HashMap::default();
    let mut vertices = Vec::new();
    for comp in components(&vertex_px) {
        let kind = if comp.iter().any(|&p| degree(p) >= 3) { VertexKind::Branch } else { VertexKind::Terminal };
        for &p in &comp {
            owner.insert(p, vertices.len());
        }
        vertices.push(Vertex { pixels: comp, kind });
    }
    let arc_px: Vec<Pixel> = points.iter().copied().filter(|p| !owner.contains_key(p)).collect();
    let touching = |p: Pixel| {
        let mut v: Vec<usize> = p.neighbours().iter().filter_map(|n| owner.get(n).copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut arcs = Vec::new();
    for comp in components(&arc_px) {
        let chain = order_chain(&comp).map_err(|_| SegmentError::MalformedArc)?;
        let first = *chain.points.first().unwrap();
        let last = *chain.points.last().unwrap();
        let ends = if chain.points.len() == 1 {
            match touching(first)[..] {
                [a] => (a, a),
                [a, b, ..] => (a, b),
                [] => return Err(SegmentError::MalformedArc),
            }
        } else {
            let (s, e) = (touching(first), touching(last));
            match (s.first(), e.first()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => return Err(SegmentError::MalformedArc),
            }
        };
        arcs.push(GraphArc { points: chain.points, ends });
    }

    let short = |a: &GraphArc| a.points.len() < window;
    let mut drop = vec![false; arcs.len()];
    for (i, a) in arcs.iter().enumerate() {
        let terminal = vertices[a.ends.0].kind == VertexKind::Terminal || vertices[a.ends.1].kind == VertexKind::Terminal;
        if short(a) && (terminal || a.is_self_loop()) {
            drop[i] = true;
        }
    }
    let mut groups: HashMap<(usize, usize), Vec<usize>> = HashMap::default();
    for (i, a) in arcs.iter().enumerate() {
        if !drop[i] && !a.is_self_loop() {
            groups.entry((a.ends.0.min(a.ends.1), a.ends.0.max(a.ends.1))).or_default().push(i);
        }
    }
    for group in groups.values() {
        if group.len() < 2 {
            continue;
        }
        let keep = *group.iter().min_by_key(|&&i| (arcs[i].points.len(), i)).unwrap();
        for &i in group {
            if i != keep && short(&arcs[i]) {
                drop[i] = true;
            }
        }
    }

    let mut removed = Vec::new();
    let mut kept_arcs = Vec::new();
    for (i, a) in arcs.into_iter().enumerate() {
        if drop[i] {
            removed.extend(a.points.iter().copied());
        } else {
            kept_arcs.push(a);
        }
    }
    // Terminal vertices whose only arcs were removed go with them.
    let mut used = vec![false; vertices.len()];
    for a in &kept_arcs {
        used[a.ends.0] = true;
        used[a.ends.1] = true;
    }
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept_vertices = Vec::new();
    let any_arcs = !kept_arcs.is_empty();
    for (i, v) in vertices.into_iter().enumerate() {
        let orphan_terminal = v.kind == VertexKind::Terminal && !used[i];
        if orphan_terminal || (any_arcs && !used[i]) {
            removed.extend(v.pixels.iter().copied());
        } else {
            remap[i] = kept_vertices.len();
            kept_vertices.push(v);
        }
    }
    for a in &mut kept_arcs {
        a.ends = (remap[a.ends.0], remap[a.ends.1]);
    }
    Ok(EdgeGraph { vertices: kept_vertices, arcs: kept_arcs, removed })
}

/// A simple path through the graph. Cyclic paths repeat their first vertex at the end.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphPath {
    pub vertices: Vec<usize>,
    pub arcs: Vec<usize>,
    pub cyclic: bool,
}

impl GraphPath {
    /// Identity shared by a path, its reverse and (for cycles) every rotation.
    pub fn key(&self) -> (bool, Vec<usize>) {
        let mut a = self.arcs.clone();
        a.sort_unstable();
        (self.cyclic, a)
    }
}

struct PathSearch<'a> {
    graph: &'a EdgeGraph,
    incident: Vec<Vec<usize>>,
    cap: usize,
    found: usize,
    seen: HashSet<(bool, Vec<usize>)>,
    out: Vec<GraphPath>,
}

impl PathSearch<'_> {
    fn record(&mut self, path: GraphPath) -> Result<(), SegmentError> {
        self.found += 1;
        if self.found > self.cap {
            return Err(SegmentError::TooManyPaths(self.cap));
        }
        if self.seen.insert(path.key()) {
            self.out.push(path);
        }
        Ok(())
    }

    fn extends(&self, v: usize, on_path: &[bool]) -> bool {
        self.incident[v].iter().any(|&a| !on_path[self.graph.arcs[a].other(v)])
    }

    fn dfs(&mut self, verts: &mut Vec<usize>, arcs: &mut Vec<usize>, on_path: &mut Vec<bool>) -> Result<(), SegmentError> {
        let start = verts[0];
        let v = *verts.last().unwrap();
        for &a in &self.incident[v].clone() {
            if arcs.contains(&a) {
                continue;
            }
            let w = self.graph.arcs[a].other(v);
            if w == start {
                let mut cyc_arcs = arcs.clone();
                cyc_arcs.push(a);
                let mut cyc_verts = verts.clone();
                cyc_verts.push(start);
                self.record(GraphPath { vertices: cyc_verts, arcs: cyc_arcs, cyclic: true })?;
            } else if !on_path[w] {
                verts.push(w);
                arcs.push(a);
                on_path[w] = true;
                self.dfs(verts, arcs, on_path)?;
                on_path[w] = false;
                arcs.pop();
                verts.pop();
            }
        }
        if !arcs.is_empty() && !self.extends(v, on_path) && !self.extends(start, on_path) {
            self.record(GraphPath { vertices: verts.clone(), arcs: arcs.clone(), cyclic: false })?;
        }
        Ok(())
    }
}

/// Every simple cycle and every maximal simple acyclic path (one that cannot
/// be extended to a new vertex at either end), each listed once regardless
/// of direction or starting vertex. Searches start from terminal vertices.
pub fn enumerate_paths(graph: &EdgeGraph, cap: usize) -> Result<Vec<GraphPath>, SegmentError> {
    let mut incident = vec![Vec::new(); graph.vertices.len()];
    for (i, a) in graph.arcs.iter().enumerate() {
        incident[a.ends.0].push(i);
        if !a.is_self_loop() {
            incident[a.ends.1].push(i);
        }
    }
    let mut search = PathSearch { graph, incident, cap, found: 0, seen: HashSet::default(), out: Vec::new() };
    let mut order: Vec<usize> = (0..graph.vertices.len()).collect();
    order.sort_by_key(|&v| (graph.vertices[v].kind != VertexKind::Terminal, v));
    for s in order {
        let mut on_path = vec![false; graph.vertices.len()];
        on_path[s] = true;
        search.dfs(&mut vec![s], &mut Vec::new(), &mut on_path)?;
    }
    let mut out = search.out;
    out.sort_by_key(|p| p.key());
    Ok(out)
}

/// Shortest run of `cluster` pixels from one touching `from` to one touching `to`.
fn bridge(cluster: &[Pixel], from: Option<Pixel>, to: Option<Pixel>) -> Vec<Pixel> {
    let touches = |p: Pixel, q: Option<Pixel>| q.is_none_or(|q| p.touches(q));
    let set: HashSet<Pixel> = cluster.iter().copied().collect();
    let mut prev: HashMap<Pixel, Option<Pixel>> = HashMap::default();
    let mut queue: VecDeque<Pixel> = VecDeque::new();
    for &p in cluster {
        if touches(p, from) {
            prev.insert(p, None);
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        if touches(p, to) {
            let mut out = vec![p];
            let mut cur = p;
            while let Some(Some(q)) = prev.get(&cur) {
                out.push(*q);
                cur = *q;
            }
            out.reverse();
            return out;
        }
        for n in p.neighbours() {
            if set.contains(&n) && !prev.contains_key(&n) {
                prev.insert(n, Some(p));
                queue.push_back(n);
            }
        }
    }
    cluster.first().map(|&p| vec![p]).unwrap_or_default()
}

/// Pixel sequence of a path, threading through each vertex cluster by its
/// shortest crossing. Open ends keep one vertex pixel.
pub fn path_chain(graph: &EdgeGraph, path: &GraphPath) -> Chain {
    let oriented: Vec<Vec<Pixel>> = path
        .arcs
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let arc = &graph.arcs[a];
            let mut pts = arc.points.clone();
            if arc.ends.0 != path.vertices[i] {
                pts.reverse();
            }
            pts
        })
        .collect();
    let cluster = |v: usize| &graph.vertices[v].pixels;
    let k = oriented.len();
    let mut points: Vec<Pixel> = Vec::new();
    if !path.cyclic {
        points.extend(bridge(cluster(path.vertices[0]), None, oriented[0].first().copied()));
    }
    for i in 0..k {
        points.extend(oriented[i].iter().copied());
        let next = if i + 1 < k {
            oriented[i + 1].first().copied()
        } else if path.cyclic {
            oriented[0].first().copied()
        } else {
            None
        };
        points.extend(bridge(cluster(path.vertices[i + 1]), oriented[i].last().copied(), next));
    }
    let mut seen = HashSet::default();
    points.retain(|p| seen.insert(*p));
    Chain { points, cyclic: path.cyclic }
}

/// Accepted path of a graph: a cyclic path within the circumference window
/// closest to `c_hat`, else the acyclic path closest to `c_hat`.
pub fn select_path(
    graph: &EdgeGraph,
    paths: &[GraphPath],
    c_hat: f64,
    delta_c: f64,
    c_min: f64,
    c_max: f64,
) -> Option<(usize, Chain)> {
    let lo = c_min.max(c_hat * (1.0 - delta_c));
    let hi = c_max.min(c_hat * (1.0 + delta_c));
    let chains: Vec<Chain> = paths.iter().map(|p| path_chain(graph, p)).collect();
    let pick = |cyclic: bool| {
        (0..paths.len())
            .filter(|&i| paths[i].cyclic == cyclic)
            .filter(|&i| !cyclic || (lo..=hi).contains(&chains[i].length()))
            .min_by(|&i, &j| {
                let (di, dj) = ((chains[i].length() - c_hat).abs(), (chains[j].length() - c_hat).abs());
                di.partial_cmp(&dj).unwrap().then(i.cmp(&j))
            })
    };
    let best = pick(true).or_else(|| pick(false))?;
    Some((best, chains[best].clone()))
}

/// Inputs of the path segmentation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathWindow {
    pub c_hat: f64,
    pub delta_c: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub window: usize,
}

/// Splits a branched edge into non-branching chains. Non-branching edges are
/// returned unchanged; leftover arcs are re-processed for up to
/// `params.max_rounds` rounds, after which remaining arcs are emitted singly.
pub fn path_segment(points: &[Pixel], win: &PathWindow, params: &SegmentParams) -> Vec<Chain> {
    let mut out = Vec::new();
    segment_round(points, win, params, 1, &mut out);
    out
}

fn segment_round(points: &[Pixel], win: &PathWindow, params: &SegmentParams, round: usize, out: &mut Vec<Chain>) {
    if points.is_empty() {
        return;
    }
    if !has_branch(points) {
        if let Ok(c) = order_chain(points) {
            out.push(c);
        }
        return;
    }
    let graph = match edge_to_graph(points, win.window) {
        Ok(g) => g,
        Err(e) => {
            log::warn!("edge of {} points passed through unsegmented: {e}", points.len());
            out.push(Chain::open(points.to_vec()));
            return;
        }
    };
    if round > params.max_rounds {
        for a in &graph.arcs {
            out.push(Chain::open(a.points.clone()));
        }
        return;
    }
    let paths = match enumerate_paths(&graph, params.path_cap) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("edge of {} points passed through unsegmented: {e}", points.len());
            out.push(Chain::open(points.to_vec()));
            return;
        }
    };
    let Some((_, chain)) = select_path(&graph, &paths, win.c_hat, win.delta_c, win.c_min, win.c_max) else {
        return;
    };
    let used: HashSet<Pixel> = chain.points.iter().copied().collect();
    let rest: Vec<Pixel> = graph.pixels().into_iter().filter(|p| !used.contains(p)).collect();
    out.push(chain);
    for comp in components(&rest) {
        segment_round(&comp, win, params, round + 1, out);
    }
}

fn split_runs(chain: &Chain, breaks: &[bool], min_points: usize) -> Vec<Chain> {
    let n = chain.points.len();
    let mut out = Vec::new();
    let start = if chain.cyclic { breaks.iter().position(|&b| b).map_or(0, |i| i + 1) } else { 0 };
    let mut run: Vec<Pixel> = Vec::new();
    for k in 0..n {
        let i = (start + k) % n;
        if breaks[i] {
            if run.len() >= min_points {
                out.push(Chain::open(std::mem::take(&mut run)));
            }
            run.clear();
        } else {
            run.push(chain.points[i]);
        }
    }
    if run.len() >= min_points {
        out.push(Chain::open(run));
    }
    out
}

/// Cuts the chain at every point whose curvature leaves `[kappa_min, kappa_max]`.
/// Breakpoints belong to neither side; pieces with fewer than `window` points are dropped.
pub fn curvature_segment(
    chain: &Chain,
    profile: &CurvatureProfile,
    kappa_min: f64,
    kappa_max: f64,
    window: usize,
) -> Vec<Chain> {
    let mut breaks = vec![false; chain.points.len()];
    for p in &profile.points {
        if p.kappa > kappa_max || p.kappa < kappa_min {
            breaks[p.index] = true;
        }
    }
    if !breaks.iter().any(|&b| b) {
        return vec![chain.clone()];
    }
    split_runs(chain, &breaks, window)
}

/// Profile entries of `range`, re-indexed to the sub-chain.
pub fn sub_profile(profile: &CurvatureProfile, range: std::ops::Range<usize>) -> CurvatureProfile {
    let points: Vec<ProfilePoint> = profile
        .points
        .iter()
        .filter(|p| range.contains(&p.index))
        .map(|p| ProfilePoint { index: p.index - range.start, ..*p })
        .collect();
    CurvatureProfile { window: profile.window, points, flipped: profile.flipped }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tail {
    Leading,
    Trailing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthSplit {
    pub kept: Chain,
    /// Tail reattached to the body; `None` when the edge was not cut.
    pub tail: Option<Tail>,
    pub scores: Option<(f64, f64)>,
}

/// Inputs for scoring the two tails against the body.
#[derive(Debug, Clone, Copy)]
pub struct TailContext<'a> {
    pub image: &'a GrayImage,
    pub centre: Vec2,
    pub sigmas: &'a EdgeSigmas,
    pub weights: &'a EdgeWeights,
    pub position_certainty: f64,
}

fn nearest_index(cum: &[f64], target: f64) -> usize {
    let mut best = 0;
    for (i, &s) in cum.iter().enumerate() {
        if (s - target).abs() < (cum[best] - target).abs() {
            best = i;
        }
    }
    best
}

/// Shortens an edge longer than `c_hat` to body plus the better-matching tail,
/// each tail being `L − c_hat` long. Ties keep the leading tail; an edge too
/// long to leave a body keeps its leading `c_hat` section.
pub fn length_segment(chain: &Chain, profile: &CurvatureProfile, c_hat: f64, ctx: &TailContext) -> LengthSplit {
    let length = chain.length();
    if length <= c_hat || chain.points.len() < 3 {
        return LengthSplit { kept: chain.clone(), tail: None, scores: None };
    }
    let pts = &chain.points;
    let n = pts.len();
    let mut cum = vec![0.0; n];
    for i in 1..n {
        cum[i] = cum[i - 1] + step_length(pts[i - 1], pts[i]);
    }
    let open_length = cum[n - 1];
    let t = open_length - c_hat;
    let a = nearest_index(&cum, t);
    let b = nearest_index(&cum, open_length - t);
    if b <= a + 1 || t <= 0.0 {
        let end = nearest_index(&cum, c_hat.min(open_length)) + 1;
        return LengthSplit { kept: Chain::open(pts[..end].to_vec()), tail: Some(Tail::Leading), scores: None };
    }
    let feat = |r: std::ops::Range<usize>| {
        let c = Chain::open(pts[r.clone()].to_vec());
        let p = sub_profile(profile, r);
        edge_features(&c, ctx.centre, ctx.image, Some(&p))
    };
    let body = feat(a..b + 1);
    let lead = feat(0..a);
    let trail = feat(b + 1..n);
    let score = |tail| {
        let fv = tail_feature_values(tail, &body, c_hat);
        tail_score(&fv, ctx.sigmas, ctx.weights, ctx.position_certainty).normalized()
    };
    let (s_lead, s_trail) = (score(&lead), score(&trail));
    // Scores equal up to rounding count as a tie.
    let (kept, tail) = if s_lead >= s_trail - 1e-12 {
        (pts[..=b].to_vec(), Tail::Leading)
    } else {
        (pts[a..].to_vec(), Tail::Trailing)
    };
    LengthSplit { kept: Chain::open(kept), tail: Some(tail), scores: Some((s_lead, s_trail)) }
}

/// Length of a point sequence as an open chain.
pub fn open_length(points: &[Pixel]) -> f64 {
    chain_length(points, false)
}

/// Arc sets of every simple cycle and maximal acyclic path, found by testing
/// each subset of arcs; usable as a reference for small graphs.
pub fn brute_force_paths(graph: &EdgeGraph) -> BTreeSet<(bool, Vec<usize>)> {
    let m = graph.arcs.len();
    assert!(m <= 16, "brute force is limited to small graphs");
    let mut out = BTreeSet::new();
    for mask in 1u32..(1u32 << m) {
        let arcs: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let mut deg: HashMap<usize, usize> = HashMap::default();
        for &a in &arcs {
            let (u, v) = graph.arcs[a].ends;
            *deg.entry(u).or_default() += 1;
            *deg.entry(v).or_default() += 1;
        }
        // Connectivity over the chosen arcs.
        let verts: Vec<usize> = deg.keys().copied().collect();
        let mut reach: HashSet<usize> = HashSet::from_iter([verts[0]]);
        loop {
            let before = reach.len();
            for &a in &arcs {
                let (u, v) = graph.arcs[a].ends;
                if reach.contains(&u) || reach.contains(&v) {
                    reach.insert(u);
                    reach.insert(v);
                }
            }
            if reach.len() == before {
                break;
            }
        }
        if reach.len() != verts.len() {
            continue;
        }
        let cycle = verts.len() == arcs.len() && deg.values().all(|&d| d == 2);
        if cycle {
            out.insert((true, arcs));
            continue;
        }
        let loops = arcs.iter().any(|&a| graph.arcs[a].is_self_loop());
        let ends: Vec<usize> = deg.iter().filter(|(_, &d)| d == 1).map(|(&v, _)| v).collect();
        let path = !loops && verts.len() == arcs.len() + 1 && ends.len() == 2 && deg.values().all(|&d| d <= 2);
        if !path {
            continue;
        }
        let extendable = graph.arcs.iter().any(|a| {
            let (u, v) = a.ends;
            (ends.contains(&u) && !deg.contains_key(&v)) || (ends.contains(&v) && !deg.contains_key(&u))
        });
        if !extendable {
            out.insert((false, arcs));
        }
    }
    out
}
