//! Stroke recovery: turn a skeleton image into an ordered list of pen strokes.
//!
//! The skeleton is read as a pixel graph. Pixels with one neighbor are
//! endpoints, pixels with three or more are junction pixels, and
//! neighboring junction pixels are merged into a single junction area whose
//! outlets lead into the branches around it. Tracing starts at the endpoint
//! closest to the top-left corner, follows branches pixel by pixel, and at a
//! junction area leaves through the outlet whose direction best continues
//! the incoming curve. When a trace dies before the whole skeleton is
//! covered, a restart point is chosen either from the remaining endpoints or
//! from the unvisited outlets of junction areas met so far.
//!
//! Adjacency is the 8-neighborhood with the usual mixed-adjacency rule: a
//! diagonal link is dropped when the two pixels already share an ink
//! 4-neighbor. This keeps one-pixel staircases from posing as junctions.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{placement_for, rasterize, skeletonize, BinaryImage, Skeleton, RING};
use crate::seq::{Granularity, Point2, Stroke, StrokeSample};

pub type Pixel = (usize, usize);

#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    width: usize,
    height: usize,
    nodes: Vec<Pixel>,
    grid: Vec<Option<usize>>,
    adjacency: Vec<Vec<usize>>,
    endpoints: Vec<usize>,
    junctions: Vec<usize>,
}

impl SkeletonGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn pixel(&self, node: usize) -> Pixel {
        self.nodes[node]
    }

    pub fn node_at(&self, p: Pixel) -> Option<usize> {
        if p.0 < self.width && p.1 < self.height {
            self.grid[p.1 * self.width + p.0]
        } else {
            None
        }
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn is_junction(&self, node: usize) -> bool {
        self.degree(node) >= 3
    }

    pub fn endpoints(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.endpoints.iter().map(|&n| self.nodes[n])
    }

    pub fn junction_pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.junctions.iter().map(|&n| self.nodes[n])
    }

    pub fn endpoint_count(&self) -> usize {
        self.endpoints.len()
    }

    pub fn junction_count(&self) -> usize {
        self.junctions.len()
    }
}

/// Build the pixel graph of a skeleton. Nodes are numbered in row-major order.
pub fn build_graph(skel: &Skeleton) -> Result<SkeletonGraph> {
    let img = &skel.image;
    if img.is_blank() {
        return Err(Error::BlankImage);
    }
    let (w, h) = (img.width(), img.height());
    let nodes: Vec<Pixel> = img.ink_pixels().collect();
    let mut grid = vec![None; w * h];
    for (i, &(x, y)) in nodes.iter().enumerate() {
        grid[y * w + x] = Some(i);
    }
    let adjacency: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&(x, y)| {
            let (xi, yi) = (x as i64, y as i64);
            let mut adj: Vec<usize> = RING
                .iter()
                .filter(|&&(dx, dy)| {
                    let (nx, ny) = (xi + dx, yi + dy);
                    if !img.at(nx, ny) {
                        return false;
                    }
                    // diagonal: only when no shared 4-neighbor is ink
                    dx == 0 || dy == 0 || !(img.at(xi + dx, yi) || img.at(xi, yi + dy))
                })
                .map(|&(dx, dy)| grid[(yi + dy) as usize * w + (xi + dx) as usize].expect("ink pixel is a node"))
                .collect();
            adj.sort_unstable();
            adj
        })
        .collect();
    let endpoints = (0..nodes.len()).filter(|&n| adjacency[n].len() == 1).collect();
    let junctions = (0..nodes.len()).filter(|&n| adjacency[n].len() >= 3).collect();
    Ok(SkeletonGraph {
        width: w,
        height: h,
        nodes,
        grid,
        adjacency,
        endpoints,
        junctions,
    })
}

/// Remove terminal spurs: runs of at most `max_len` pixels that lead from
/// an endpoint straight into a junction pixel. Thick corners leave such
/// stubs behind after thinning. One pass only, so real strokes are not
/// eaten from their ends.
pub fn prune_spurs(skel: &Skeleton, max_len: usize) -> Result<Skeleton> {
    if max_len == 0 {
        return Ok(skel.clone());
    }
    let graph = build_graph(skel)?;
    let mut image = skel.image.clone();
    for &e in &graph.endpoints {
        let mut run = vec![e];
        let mut prev = usize::MAX;
        let mut cur = e;
        loop {
            let next = graph.neighbors(cur).iter().copied().find(|&m| m != prev);
            match next {
                Some(m) if graph.is_junction(m) => {
                    if run.len() <= max_len {
                        for &n in &run {
                            let (x, y) = graph.pixel(n);
                            image.set(x, y, false);
                        }
                    }
                    break;
                }
                Some(m) if graph.degree(m) == 2 && run.len() <= max_len => {
                    run.push(m);
                    prev = cur;
                    cur = m;
                }
                _ => break,
            }
        }
    }
    Ok(Skeleton::from_thin(image))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outlet {
    pub pixel: Pixel,
    /// Index of the branch (connected run of non-junction pixels) it leads into.
    pub branch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JunctionArea {
    pub members: Vec<Pixel>,
    pub outlets: Vec<Outlet>,
}

fn branch_ids(graph: &SkeletonGraph) -> Vec<Option<usize>> {
    let mut ids = vec![None; graph.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for n in 0..graph.len() {
        if graph.is_junction(n) || ids[n].is_some() {
            continue;
        }
        ids[n] = Some(next);
        stack.push(n);
        while let Some(c) = stack.pop() {
            for &m in graph.neighbors(c) {
                if !graph.is_junction(m) && ids[m].is_none() {
                    ids[m] = Some(next);
                    stack.push(m);
                }
            }
        }
        next += 1;
    }
    ids
}

/// Merge 8-connected clusters of junction pixels into junction areas. For
/// every junction pixel, the non-junction neighbors of its neighboring
/// junction pixels are attached to its area as outlets, so an area's outlets
/// are exactly the non-junction pixels adjacent to any member.
pub fn conjugate_junctions(graph: &SkeletonGraph) -> Vec<JunctionArea> {
    let junction = |p: Pixel| graph.node_at(p).is_some_and(|n| graph.is_junction(n));
    let branches = branch_ids(graph);

    // cluster junction pixels by 8-connectivity
    let mut cluster: Vec<Option<usize>> = vec![None; graph.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for &j in &graph.junctions {
        if cluster[j].is_some() {
            continue;
        }
        let id = members.len();
        let mut group = vec![j];
        cluster[j] = Some(id);
        let mut i = 0;
        while i < group.len() {
            let (x, y) = graph.pixel(group[i]);
            for (dx, dy) in RING {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 {
                    continue;
                }
                let q = (nx as usize, ny as usize);
                if junction(q) {
                    let m = graph.node_at(q).expect("junction is a node");
                    if cluster[m].is_none() {
                        cluster[m] = Some(id);
                        group.push(m);
                    }
                }
            }
            i += 1;
        }
        group.sort_unstable();
        members.push(group);
    }

    // attach outlets: for junction pixel i, every junction j in {i} and its
    // neighborhood contributes its non-junction neighbors k
    let mut outlets: Vec<Vec<usize>> = vec![Vec::new(); members.len()];
    for &i in &graph.junctions {
        let area = cluster[i].expect("clustered");
        let mut js = vec![i];
        js.extend(graph.neighbors(i).iter().copied().filter(|&j| graph.is_junction(j)));
        for j in js {
            for &k in graph.neighbors(j) {
                if !graph.is_junction(k) && !outlets[area].contains(&k) {
                    outlets[area].push(k);
                }
            }
        }
    }

    members
        .into_iter()
        .zip(outlets)
        .map(|(m, mut o)| {
            o.sort_unstable();
            JunctionArea {
                members: m.iter().map(|&n| graph.pixel(n)).collect(),
                outlets: o
                    .into_iter()
                    .map(|k| Outlet {
                        pixel: graph.pixel(k),
                        branch: branches[k].expect("non-junction pixel has a branch"),
                    })
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrokeOrigin {
    InitialStart,
    EndpointRestart,
    JunctionNeighborRestart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartStrategy {
    EndpointFirst,
    #[default]
    JunctionNeighborFirst,
}

impl std::str::FromStr for RestartStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "endpoint_first" | "endpoint-first" => Ok(RestartStrategy::EndpointFirst),
            "junction_neighbor_first" | "junction-neighbor-first" => Ok(RestartStrategy::JunctionNeighborFirst),
            other => Err(Error::Config(format!("unknown restart strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredStroke {
    pub pixels: Vec<Point2>,
    pub origin: StrokeOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub strokes: Vec<RecoveredStroke>,
    pub coverage: f64,
}

impl RecoveryResult {
    pub fn to_sample(&self, id: &str, label: &str, granularity: Granularity) -> StrokeSample {
        StrokeSample {
            id: id.to_string(),
            label: label.to_string(),
            granularity,
            strokes: self.strokes.iter().map(|s| Stroke::new(s.pixels.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub strategy: RestartStrategy,
    /// Pixels used to estimate a curve's direction at a junction.
    pub direction_window: usize,
    /// Longest terminal spur removed before tracing; 0 keeps the skeleton.
    pub spur_length: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            strategy: RestartStrategy::JunctionNeighborFirst,
            direction_window: 5,
            spur_length: 4,
        }
    }
}

/// Least-squares direction of a run of points, oriented from first to last.
pub fn fitted_direction(points: &[Point2]) -> Option<(f64, f64)> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let (first, last) = (points[0], points[n - 1]);
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n as f64;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        sxx += (p.x - mx).powi(2);
        syy += (p.y - my).powi(2);
        sxy += (p.x - mx) * (p.y - my);
    }
    if sxx + syy == 0.0 {
        return None;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (mut dx, mut dy) = (theta.cos(), theta.sin());
    let travel = (last.x - first.x, last.y - first.y);
    let along = dx * travel.0 + dy * travel.1;
    if along < 0.0 {
        dx = -dx;
        dy = -dy;
    } else if along == 0.0 {
        // travel perpendicular to the fit or closed: fall back to the chord
        let norm = travel.0.hypot(travel.1);
        if norm == 0.0 {
            return Some((dx, dy));
        }
        return Some((travel.0 / norm, travel.1 / norm));
    }
    Some((dx, dy))
}

/// Unsigned angle between two direction vectors, in `[0, pi]`.
pub fn angle_between(a: (f64, f64), b: (f64, f64)) -> f64 {
    let na = a.0.hypot(a.1);
    let nb = b.0.hypot(b.1);
    if na == 0.0 || nb == 0.0 {
        return std::f64::consts::PI;
    }
    ((a.0 * b.0 + a.1 * b.1) / (na * nb)).clamp(-1.0, 1.0).acos()
}

fn to_point(p: Pixel) -> Point2 {
    Point2::new(p.0 as f64, p.1 as f64)
}

fn top_left_key(p: Pixel) -> (u64, usize, usize) {
    ((p.0 * p.0 + p.1 * p.1) as u64, p.1, p.0)
}

/// Exit chosen at a junction area, with the angle of every candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitChoice {
    pub outlet: Pixel,
    pub candidates: Vec<(Pixel, f64)>,
}

/// Mutable tracing state over one skeleton.
pub struct Tracer<'a> {
    graph: &'a SkeletonGraph,
    areas: &'a [JunctionArea],
    area_of: Vec<Option<usize>>,
    outlet_of: Vec<Vec<usize>>,
    visited: Vec<bool>,
    encountered: Vec<bool>,
    queue: Vec<usize>,
    window: usize,
    exits: Vec<ExitChoice>,
}

impl<'a> Tracer<'a> {
    pub fn new(graph: &'a SkeletonGraph, areas: &'a [JunctionArea], window: usize) -> Self {
        let mut area_of = vec![None; graph.len()];
        let mut outlet_of = vec![Vec::new(); graph.len()];
        for (a, area) in areas.iter().enumerate() {
            for &m in &area.members {
                area_of[graph.node_at(m).expect("member is a node")] = Some(a);
            }
            for o in &area.outlets {
                outlet_of[graph.node_at(o.pixel).expect("outlet is a node")].push(a);
            }
        }
        Self {
            graph,
            areas,
            area_of,
            outlet_of,
            visited: vec![false; graph.len()],
            encountered: vec![false; areas.len()],
            queue: Vec::new(),
            window: window.max(2),
            exits: Vec::new(),
        }
    }

    pub fn is_visited(&self, p: Pixel) -> bool {
        self.graph.node_at(p).is_some_and(|n| self.visited[n])
    }

    pub fn mark_visited(&mut self, p: Pixel) {
        if let Some(n) = self.graph.node_at(p) {
            self.visited[n] = true;
        }
    }

    pub fn visited_count(&self) -> usize {
        self.visited.iter().filter(|&&v| v).count()
    }

    pub fn all_visited(&self) -> bool {
        self.visited.iter().all(|&v| v)
    }

    /// Exit decisions taken so far, in order.
    pub fn exits(&self) -> &[ExitChoice] {
        &self.exits
    }

    fn closest_unvisited<I: Iterator<Item = usize>>(&self, nodes: I) -> Option<usize> {
        nodes
            .filter(|&n| !self.visited[n])
            .min_by_key(|&n| top_left_key(self.graph.pixel(n)))
    }

    fn is_outlet(&self, n: usize) -> bool {
        !self.outlet_of[n].is_empty()
    }

    fn fallback(&self) -> Option<usize> {
        let g = self.graph;
        self.closest_unvisited((0..g.len()).filter(|&n| self.is_outlet(n)))
            .or_else(|| self.closest_unvisited((0..g.len()).filter(|&n| !g.is_junction(n))))
            .or_else(|| self.closest_unvisited(0..g.len()))
    }

    /// Unvisited endpoint nearest the top-left corner (ties: smaller y, then
    /// smaller x). Falls back to outlets, then to any unvisited pixel, so
    /// endpoint-free loops still get a start.
    pub fn select_start(&self) -> Result<Pixel> {
        self.closest_unvisited(self.graph.endpoints.iter().copied())
            .or_else(|| self.fallback())
            .map(|n| self.graph.pixel(n))
            .ok_or(Error::Exhausted)
    }

    pub fn select_restart(&self, strategy: RestartStrategy) -> Result<(Pixel, StrokeOrigin)> {
        let endpoint = || self.closest_unvisited(self.graph.endpoints.iter().copied());
        let queued = || self.queue.iter().copied().find(|&n| !self.visited[n]);
        let picked = match strategy {
            RestartStrategy::EndpointFirst => endpoint().or_else(queued),
            RestartStrategy::JunctionNeighborFirst => queued().or_else(endpoint),
        }
        .or_else(|| self.fallback())
        .ok_or(Error::Exhausted)?;
        let origin = if self.is_outlet(picked) {
            StrokeOrigin::JunctionNeighborRestart
        } else {
            StrokeOrigin::EndpointRestart
        };
        Ok((self.graph.pixel(picked), origin))
    }

    fn encounter(&mut self, area: usize) {
        if !self.encountered[area] {
            self.encountered[area] = true;
            for o in &self.areas[area].outlets {
                let n = self.graph.node_at(o.pixel).expect("outlet is a node");
                self.queue.push(n);
            }
        }
    }

    fn member_nodes(&self, area: usize) -> Vec<usize> {
        self.areas[area]
            .members
            .iter()
            .map(|&m| self.graph.node_at(m).expect("member is a node"))
            .collect()
    }

    /// Member of `area` adjacent to `node`, lowest index first.
    fn adjacent_member(&self, node: usize, area: usize) -> usize {
        self.graph
            .neighbors(node)
            .iter()
            .copied()
            .find(|&m| self.area_of[m] == Some(area))
            .unwrap_or_else(|| self.member_nodes(area)[0])
    }

    /// Shortest path between two members, moving through members only.
    fn member_path(&self, from: usize, to: usize, area: usize) -> Vec<usize> {
        if from == to {
            return vec![from];
        }
        let members = self.member_nodes(area);
        let mut prev = vec![usize::MAX; members.len()];
        let idx = |n: usize| members.iter().position(|&m| m == n).expect("member");
        let mut q = VecDeque::from([from]);
        prev[idx(from)] = from;
        while let Some(c) = q.pop_front() {
            if c == to {
                break;
            }
            let (x, y) = self.graph.pixel(c);
            for &m in &members {
                let (mx, my) = self.graph.pixel(m);
                let adjacent = x.abs_diff(mx) <= 1 && y.abs_diff(my) <= 1 && m != c;
                if adjacent && prev[idx(m)] == usize::MAX {
                    prev[idx(m)] = c;
                    q.push_back(m);
                }
            }
        }
        let mut path = vec![to];
        let mut c = to;
        while c != from {
            c = prev[idx(c)];
            path.push(c);
        }
        path.reverse();
        path
    }

    /// Walk from `entry` through the area, picking up unvisited members on
    /// the way, and finish at `exit` (or wherever the last member was).
    fn area_walk(&self, entry: usize, exit: Option<usize>, area: usize) -> Vec<usize> {
        let mut walk = vec![entry];
        let mut seen: Vec<usize> = vec![entry];
        let mut cur = entry;
        loop {
            let pending: Vec<usize> = self
                .member_nodes(area)
                .into_iter()
                .filter(|&m| !self.visited[m] && !seen.contains(&m) && Some(m) != exit)
                .collect();
            let Some(&target) = pending
                .iter()
                .min_by_key(|&&m| (self.member_path(cur, m, area).len(), m))
            else {
                break;
            };
            let leg = self.member_path(cur, target, area);
            seen.extend(leg.iter().copied());
            walk.extend(leg.into_iter().skip(1));
            cur = target;
        }
        if let Some(e) = exit {
            walk.extend(self.member_path(cur, e, area).into_iter().skip(1));
        }
        walk
    }

    /// Points from `outlet` outward along its branch, at most `window` long.
    fn outgoing_run(&self, outlet: usize, area: usize) -> Vec<Point2> {
        let mut run = vec![outlet];
        let mut prev = usize::MAX;
        let mut cur = outlet;
        while run.len() < self.window {
            let next = self
                .graph
                .neighbors(cur)
                .iter()
                .copied()
                .find(|&m| m != prev && !self.graph.is_junction(m) && self.area_of[m] != Some(area) && !run.contains(&m));
            match next {
                Some(m) => {
                    prev = cur;
                    cur = m;
                    run.push(m);
                }
                None => break,
            }
        }
        run.into_iter().map(|n| to_point(self.graph.pixel(n))).collect()
    }

    fn choose_exit(&mut self, stroke: &[usize], cur: usize, area: usize) -> Option<(usize, usize)> {
        let entry = self.adjacent_member(cur, area);
        let tail: Vec<Point2> = stroke[stroke.len().saturating_sub(self.window)..]
            .iter()
            .map(|&n| to_point(self.graph.pixel(n)))
            .collect();
        let (ex, ey) = self.graph.pixel(entry);
        let (cx, cy) = self.graph.pixel(cur);
        let incoming = fitted_direction(&tail).unwrap_or((ex as f64 - cx as f64, ey as f64 - cy as f64));

        let mut best: Option<(usize, f64)> = None;
        let mut candidates = Vec::new();
        for o in &self.areas[area].outlets {
            let n = self.graph.node_at(o.pixel).expect("outlet is a node");
            if self.visited[n] || n == cur {
                continue;
            }
            let exit_member = self.adjacent_member(n, area);
            let run = self.outgoing_run(n, area);
            let (mx, my) = self.graph.pixel(exit_member);
            let outgoing = fitted_direction(&run).unwrap_or((o.pixel.0 as f64 - mx as f64, o.pixel.1 as f64 - my as f64));
            let angle = angle_between(incoming, outgoing);
            candidates.push((o.pixel, angle));
            if best.is_none_or(|(_, a)| angle < a) {
                best = Some((n, angle));
            }
        }
        let (n, _) = best?;
        self.exits.push(ExitChoice {
            outlet: self.graph.pixel(n),
            candidates,
        });
        Some((entry, n))
    }

    fn push(&mut self, stroke: &mut Vec<usize>, n: usize) {
        self.visited[n] = true;
        stroke.push(n);
    }

    /// Trace one stroke from `start`.
    pub fn traverse(&mut self, start: Pixel, origin: StrokeOrigin) -> Result<RecoveredStroke> {
        let s = self
            .graph
            .node_at(start)
            .ok_or_else(|| Error::InvalidInput(format!("{start:?} is not a skeleton pixel")))?;
        if self.visited[s] {
            return Err(Error::InvalidStart(start.0, start.1));
        }
        let g = self.graph;
        let mut stroke = Vec::new();
        let mut cur;
        let mut left_area: Option<usize> = None;

        if let Some(area) = self.area_of[s] {
            // starting inside a junction area
            self.encounter(area);
            let exit = self.areas[area]
                .outlets
                .iter()
                .map(|o| g.node_at(o.pixel).expect("outlet"))
                .find(|&n| !self.visited[n]);
            let exit_member = exit.map(|n| self.adjacent_member(n, area));
            for m in self.area_walk(s, exit_member, area) {
                self.push(&mut stroke, m);
            }
            match exit {
                Some(n) => {
                    self.push(&mut stroke, n);
                    cur = n;
                    left_area = Some(area);
                }
                None => return Ok(self.finish(stroke, origin)),
            }
        } else {
            self.push(&mut stroke, s);
            cur = s;
        }

        loop {
            let next = g
                .neighbors(cur)
                .iter()
                .copied()
                .find(|&m| !g.is_junction(m) && !self.visited[m]);
            if let Some(m) = next {
                self.push(&mut stroke, m);
                cur = m;
                left_area = None;
                continue;
            }
            let enterable: Vec<usize> = self.outlet_of[cur].iter().copied().filter(|&a| Some(a) != left_area).collect();
            let Some(&area) = enterable.first() else {
                break;
            };
            self.encounter(area);
            match self.choose_exit(&stroke, cur, area) {
                Some((entry, exit)) => {
                    let exit_member = self.adjacent_member(exit, area);
                    for m in self.area_walk(entry, Some(exit_member), area) {
                        self.push(&mut stroke, m);
                    }
                    self.push(&mut stroke, exit);
                    cur = exit;
                    left_area = Some(area);
                }
                None => {
                    let entry = self.adjacent_member(cur, area);
                    if self.member_nodes(area).iter().any(|&m| !self.visited[m]) {
                        for m in self.area_walk(entry, None, area) {
                            self.push(&mut stroke, m);
                        }
                    }
                    break;
                }
            }
        }
        Ok(self.finish(stroke, origin))
    }

    fn finish(&self, stroke: Vec<usize>, origin: StrokeOrigin) -> RecoveredStroke {
        RecoveredStroke {
            pixels: stroke.into_iter().map(|n| to_point(self.graph.pixel(n))).collect(),
            origin,
        }
    }
}

/// Full recovery: start, trace, restart until every skeleton pixel is covered.
pub fn recover(skel: &Skeleton, config: &RecoveryConfig) -> Result<RecoveryResult> {
    let graph = build_graph(skel)?;
    let areas = conjugate_junctions(&graph);
    let mut tracer = Tracer::new(&graph, &areas, config.direction_window);
    let mut strokes = Vec::new();
    let start = tracer.select_start()?;
    strokes.push(tracer.traverse(start, StrokeOrigin::InitialStart)?);
    while !tracer.all_visited() {
        let (p, origin) = tracer.select_restart(config.strategy)?;
        strokes.push(tracer.traverse(p, origin)?);
    }
    let coverage = tracer.visited_count() as f64 / graph.len() as f64;
    Ok(RecoveryResult { strokes, coverage })
}

/// Rasterize, thin and recover a stroke sample in one go.
pub fn recover_sample(sample: &StrokeSample, canvas: (usize, usize), pen_width: usize, config: &RecoveryConfig) -> Result<StrokeSample> {
    let raster = rasterize(sample, canvas, pen_width)?;
    let skel = prune_spurs(&skeletonize(&raster.image)?, config.spur_length)?;
    let result = recover(&skel, config)?;
    Ok(result.to_sample(&sample.id, &sample.label, sample.granularity))
}

/// Pixel radius within which a selected start counts as matching a stroke
/// start or end point.
pub const START_TOLERANCE_PX: f64 = 3.0;

/// Whether the start-point heuristic picks the true first stroke start of
/// `sample` after rendering and thinning: within tolerance of it and not
/// within tolerance of any stroke end point.
pub fn start_selection_correct(sample: &StrokeSample, canvas: (usize, usize), pen_width: usize) -> Result<bool> {
    let raster = rasterize(sample, canvas, pen_width)?;
    let skel = skeletonize(&raster.image)?;
    let graph = build_graph(&skel)?;
    let areas = conjugate_junctions(&graph);
    let tracer = Tracer::new(&graph, &areas, 5);
    let chosen = to_point(tracer.select_start()?);
    let truth = sample.strokes[0].first().map(|p| raster.placement.apply(p)).ok_or(Error::InvalidSample(sample.id.clone()))?;
    let near_end = sample
        .strokes
        .iter()
        .filter_map(Stroke::last)
        .any(|e| raster.placement.apply(e).dist(&chosen) <= START_TOLERANCE_PX);
    Ok(chosen.dist(&truth) <= START_TOLERANCE_PX && !near_end)
}

/// Fraction of samples for which [`start_selection_correct`] holds.
pub fn validate_start_heuristic(samples: &[StrokeSample], canvas: (usize, usize), pen_width: usize) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if start_selection_correct(s, canvas, pen_width)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Whether the strokes of `sample`, drawn on `canvas`, stay clear of each
/// other and of themselves: no two pen positions come closer than the pen
/// allows unless they are close neighbors along the same stroke.
pub fn is_intersection_free(sample: &StrokeSample, canvas: (usize, usize), pen_width: usize) -> Result<bool> {
    let placement = placement_for(sample, canvas, pen_width)?;
    let clearance = pen_width as f64 + 1.5;
    // (stroke, arc position, point) every half pixel
    let mut dense: Vec<(usize, f64, Point2)> = Vec::new();
    for (k, stroke) in sample.strokes.iter().enumerate() {
        let pts: Vec<Point2> = stroke.points.iter().map(|p| placement.apply(p)).collect();
        let mut arc = 0.0;
        dense.push((k, 0.0, pts[0]));
        for w in pts.windows(2) {
            let len = w[0].dist(&w[1]);
            let n = (len / 0.5).ceil().max(1.0) as usize;
            for i in 1..=n {
                let t = i as f64 / n as f64;
                let p = Point2::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y));
                dense.push((k, arc + t * len, p));
            }
            arc += len;
        }
    }
    for (i, &(ka, sa, pa)) in dense.iter().enumerate() {
        for &(kb, sb, pb) in &dense[i + 1..] {
            if pa.dist(&pb) < clearance && (ka != kb || (sa - sb).abs() > 2.0 * clearance) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

const PALETTE: [&str; 8] = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#9a6324"];

/// SVG of the skeleton in grey with each recovered stroke drawn in its own
/// color, a dot at its start and an arrowhead at its end.
pub fn render_svg(skeleton: &BinaryImage, result: &RecoveryResult, cell: f64) -> String {
    let (w, h) = (skeleton.width() as f64 * cell, skeleton.height() as f64 * cell);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, "<defs>");
    for (i, color) in PALETTE.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<marker id="arrow{i}" viewBox="0 0 10 10" refX="8" refY="5" markerWidth="5" markerHeight="5" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="{color}"/></marker>"#
        );
    }
    let _ = writeln!(svg, "</defs>");
    let _ = writeln!(svg, r##"<rect width="{w}" height="{h}" fill="#ffffff"/>"##);
    for (x, y) in skeleton.ink_pixels() {
        let _ = writeln!(
            svg,
            r##"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="#dddddd"/>"##,
            x as f64 * cell,
            y as f64 * cell
        );
    }
    let center = |p: &Point2| ((p.x + 0.5) * cell, (p.y + 0.5) * cell);
    for (i, stroke) in result.strokes.iter().enumerate() {
        let k = i % PALETTE.len();
        let points: Vec<String> = stroke
            .pixels
            .iter()
            .map(|p| {
                let (x, y) = center(p);
                format!("{x},{y}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}" marker-end="url(#arrow{k})"/>"#,
            points.join(" "),
            PALETTE[k],
            cell * 0.4
        );
        if let Some(p) = stroke.pixels.first() {
            let (x, y) = center(p);
            let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="{}" fill="{}"/>"#, cell * 0.5, PALETTE[k]);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skel(rows: &[&str]) -> Skeleton {
        Skeleton::from_thin(BinaryImage::from_ascii(rows).unwrap())
    }

    fn pixels(s: &RecoveredStroke) -> Vec<Pixel> {
        s.pixels.iter().map(|p| (p.x as usize, p.y as usize)).collect()
    }

    #[test]
    fn line_degrees() {
        let g = build_graph(&skel(&["#####"])).unwrap();
        assert_eq!((g.endpoint_count(), g.junction_count()), (2, 0));
    }

    #[test]
    fn plus_degrees() {
        let g = build_graph(&skel(&[".#.", "###", ".#."])).unwrap();
        assert_eq!((g.endpoint_count(), g.junction_count()), (4, 1));
        let j = g.junctions[0];
        assert_eq!(g.pixel(j), (1, 1));
        assert_eq!(g.degree(j), 4);
    }

    #[test]
    fn tee_degrees() {
        let g = build_graph(&skel(&["#####", "..#..", "..#.."])).unwrap();
        assert_eq!((g.endpoint_count(), g.junction_count()), (3, 1));
        assert_eq!(g.junction_pixels().next(), Some((2, 0)));
    }

    #[test]
    fn staircase_is_a_path() {
        let g = build_graph(&skel(&["##..", ".##.", "..##"])).unwrap();
        assert_eq!((g.endpoint_count(), g.junction_count()), (2, 0));
    }

    #[test]
    fn blank_graph() {
        assert!(matches!(build_graph(&skel(&["...", "..."])), Err(Error::BlankImage)));
    }

    #[test]
    fn no_junctions_no_areas() {
        let g = build_graph(&skel(&["#####"])).unwrap();
        assert!(conjugate_junctions(&g).is_empty());
    }

    #[test]
    fn single_junction_area() {
        let g = build_graph(&skel(&[".#.", "###", ".#."])).unwrap();
        let areas = conjugate_junctions(&g);
        assert_eq!(areas.len(), 1);
        assert_eq!(areas[0].members, vec![(1, 1)]);
        let mut outs: Vec<Pixel> = areas[0].outlets.iter().map(|o| o.pixel).collect();
        outs.sort();
        assert_eq!(outs, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn start_selection_rules() {
        // endpoints at (9,0) and (5,5): the latter is closer
        let mut rows = vec![String::from("..........."); 7];
        rows[0].replace_range(9..10, "#");
        rows[1].replace_range(9..10, "#");
        rows[5].replace_range(5..6, "#");
        rows[6].replace_range(5..6, "#");
        let r: Vec<&str> = rows.iter().map(String::as_str).collect();
        let g = build_graph(&skel(&r)).unwrap();
        let areas = conjugate_junctions(&g);
        let t = Tracer::new(&g, &areas, 5);
        // endpoints: (9,0),(9,1),(5,5),(5,6); nearest to the corner is (5,5)
        assert_eq!(t.select_start().unwrap(), (5, 5));
    }

    #[test]
    fn start_tie_prefers_smaller_y() {
        // separate segments starting at (0,5) and (5,0), equally far from the corner
        let mut rows = vec![String::from("........"); 8];
        for row in rows.iter_mut().skip(5) {
            row.replace_range(0..1, "#");
        }
        rows[0].replace_range(5..8, "###");
        let r: Vec<&str> = rows.iter().map(String::as_str).collect();
        let g = build_graph(&skel(&r)).unwrap();
        let areas = conjugate_junctions(&g);
        let t = Tracer::new(&g, &areas, 5);
        assert_eq!(t.select_start().unwrap(), (5, 0));
    }

    #[test]
    fn single_endpoint_start() {
        // a loop with one tail
        let g = build_graph(&skel(&[".###.", "#...#", ".###.", "...#.", "...#."])).unwrap();
        let areas = conjugate_junctions(&g);
        let t = Tracer::new(&g, &areas, 5);
        assert_eq!(g.endpoint_count(), 1);
        assert_eq!(t.select_start().unwrap(), (3, 4));
    }

    #[test]
    fn l_shape_single_stroke() {
        let s = skel(&["#....", "#....", "#....", "#####"]);
        let r = recover(&s, &RecoveryConfig::default()).unwrap();
        assert_eq!(r.strokes.len(), 1);
        assert_eq!(
            pixels(&r.strokes[0]),
            vec![(0, 0), (0, 1), (0, 2), (0, 3), (1, 3), (2, 3), (3, 3), (4, 3)]
        );
        assert_eq!(r.coverage, 1.0);
    }

    #[test]
    fn traverse_rejects_visited_start() {
        let s = skel(&["#####"]);
        let g = build_graph(&s).unwrap();
        let areas = conjugate_junctions(&g);
        let mut t = Tracer::new(&g, &areas, 5);
        t.traverse((0, 0), StrokeOrigin::InitialStart).unwrap();
        assert!(matches!(t.traverse((0, 0), StrokeOrigin::EndpointRestart), Err(Error::InvalidStart(0, 0))));
    }

    #[test]
    fn ring_without_endpoints() {
        let s = skel(&[".###.", "#...#", "#...#", ".###."]);
        let r = recover(&s, &RecoveryConfig::default()).unwrap();
        assert_eq!(r.strokes.len(), 1);
        assert_eq!(r.strokes[0].pixels.len(), 10);
        assert_eq!(r.strokes[0].pixels[0], Point2::new(1.0, 0.0));
    }

    #[test]
    fn exhausted_after_full_cover() {
        let s = skel(&["###"]);
        let g = build_graph(&s).unwrap();
        let areas = conjugate_junctions(&g);
        let mut t = Tracer::new(&g, &areas, 5);
        let p = t.select_start().unwrap();
        t.traverse(p, StrokeOrigin::InitialStart).unwrap();
        assert!(matches!(t.select_start(), Err(Error::Exhausted)));
        assert!(matches!(t.select_restart(RestartStrategy::EndpointFirst), Err(Error::Exhausted)));
    }

    #[test]
    fn spur_pruning() {
        // a line with a one-pixel stub hanging off its middle
        let s = skel(&["#######", "...#...", "......."]);
        let pruned = prune_spurs(&s, 2).unwrap();
        assert_eq!(pruned.image.to_ascii(), vec!["#######", ".......", "......."]);
        assert_eq!(prune_spurs(&s, 0).unwrap(), s);
        // a bare line has no junction, so nothing is removed
        let line = skel(&["#####"]);
        assert_eq!(prune_spurs(&line, 10).unwrap(), line);
    }

    #[test]
    fn direction_fit() {
        let pts: Vec<Point2> = (0..5).map(|i| Point2::new(i as f64, 0.0)).collect();
        let d = fitted_direction(&pts).unwrap();
        assert!((d.0 - 1.0).abs() < 1e-12 && d.1.abs() < 1e-12);
        let rev: Vec<Point2> = pts.iter().rev().copied().collect();
        let d = fitted_direction(&rev).unwrap();
        assert!((d.0 + 1.0).abs() < 1e-12);
        assert!(fitted_direction(&pts[..1]).is_none());
    }

    #[test]
    fn svg_mentions_every_stroke() {
        let s = skel(&["###..", ".....", "..###"]);
        let r = recover(&s, &RecoveryConfig::default()).unwrap();
        let svg = render_svg(&s.image, &r, 4.0);
        assert_eq!(svg.matches("<polyline").count(), r.strokes.len());
        assert!(svg.starts_with("<svg"));
    }
}
