use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::critical::{find_critical_points, tangential_gradient, CriticalKind, CriticalPoint};
use super::trace::{project_to_curve, trace_level_curve, Integrand, LevelCurve, TraceOptions};
use crate::error::{Error, Result};
use crate::flow::project_to_level;
use crate::geometry::{SurfaceSystem, Vec3};
use crate::numerics::ode::{Dopri5, Workspace};
use crate::surface::Atlas;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VertexKind {
    Minimum,
    Maximum,
    Saddle,
    /// The outer boundary curve `{G = boundary level}`.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: usize,
    pub kind: VertexKind,
    pub g: f64,
    pub critical: Option<CriticalPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: usize,
    pub lo: f64,
    pub hi: f64,
    /// Vertex index at `lo`.
    pub lower: usize,
    /// Vertex index at `hi`.
    pub upper: usize,
    /// Points on the edge's curves at sampled levels, used to seed tracing.
    pub guide: Vec<(f64, Vec3)>,
}

impl Edge {
    pub fn contains(&self, g: f64) -> bool {
        g > self.lo && g < self.hi
    }
}

/// Tree of connected components of the level curves of `G` on the working region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReebGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub boundary_level: f64,
    /// Shortest fast-flow period over the region.
    pub shortest_period: f64,
    /// Levels closer than this to a saddle value are not classified.
    pub separatrix_margin: f64,
}

const WALK_STOP: f64 = 1e-5;
const SPINE_OFFSET: f64 = 1e-3;

fn walk_rhs(sys: &SurfaceSystem, x: &Vec3) -> Vec3 {
    let gt = tangential_gradient(sys, x);
    gt / gt.norm_squared().max(1e-300)
}

/// Follows the gradient line of `G` on the surface through the target levels
/// (monotone in the direction of travel), returning the crossings reached
/// before the line runs into a critical point.
pub(crate) fn gradient_walk(sys: &SurfaceSystem, start: &Vec3, targets: &[(usize, f64)]) -> Vec<(usize, Vec3)> {
    let solver = Dopri5 {
        rtol: 1e-9,
        atol: 1e-11,
        h_min: 1e-13,
        h_max: 0.05,
    };
    let mut ws = Workspace::new(3);
    let mut rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
        let v = walk_rhs(sys, &Vec3::new(y[0], y[1], y[2]));
        dy.copy_from_slice(v.as_slice());
    };
    let mut x = *start;
    let mut g = sys.g.value(&x);
    let mut out = Vec::new();
    let mut h: f64 = 1e-3;
    let mut budget = 20_000usize;
    for &(j, target) in targets {
        let dir = (target - g).signum();
        while (target - g) * dir > 0.0 {
            if budget == 0 || tangential_gradient(sys, &x).norm() < WALK_STOP {
                return out;
            }
            budget -= 1;
            let step = h.min((target - g).abs());
            let mut dy = [0.0; 3];
            rhs(g, x.as_slice(), &mut dy);
            let err = solver.attempt(&mut rhs, g, x.as_slice(), &dy, step * dir, &mut ws);
            if err <= 1.0 || step <= solver.h_min {
                let xn = Vec3::new(ws.y_new[0], ws.y_new[1], ws.y_new[2]);
                x = match project_to_level(&sys.f, sys.level, &xn, 1e-12, 50) {
                    Ok(p) => p,
                    Err(_) => return out,
                };
                g = if step == (target - g).abs() { target } else { g + step * dir };
            }
            h = solver.next_step(step, err);
        }
        match project_to_curve(&sys.f, sys.level, &sys.g, target, &x) {
            Ok(p) => {
                x = p;
                out.push((j, p));
            }
            Err(_) => return out,
        }
    }
    out
}

fn tangent_offset(sys: &SurfaceSystem, x: &Vec3, dir: &Vec3, r: f64) -> Vec3 {
    project_to_level(&sys.f, sys.level, &(x + dir * r), 1e-13, 50).unwrap_or(x + dir * r)
}

struct Line {
    crossings: BTreeMap<usize, Vec3>,
    /// Origin vertex and unstable-axis sign for spines.
    spine: Option<(usize, bool, f64)>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = i;
        while self.0[c] != r {
            let n = self.0[c];
            self.0[c] = r;
            c = n;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

impl ReebGraph {
    /// Builds the graph from the critical points of `G` below the boundary level.
    pub fn build(sys: &SurfaceSystem) -> Result<Self> {
        let gp = sys.boundary_level;
        let mut cps: Vec<CriticalPoint> = Vec::new();
        for c in find_critical_points(sys)? {
            if (c.g - gp).abs() < 1e-9 {
                return Err(Error::Config(format!("boundary level {gp} is a critical value")));
            }
            if c.g < gp {
                cps.push(c);
            }
        }
        if cps.is_empty() {
            return Err(Error::Config("no critical point of G inside the working region".into()));
        }
        // distinct critical levels; saddles must sit on their own level
        let mut vals: Vec<f64> = Vec::new();
        let mut lev: Vec<usize> = Vec::with_capacity(cps.len());
        for c in &cps {
            match vals.last() {
                Some(&v) if (c.g - v).abs() < 1e-9 => {}
                _ => vals.push(c.g),
            }
            lev.push(vals.len() - 1);
        }
        for (a, ca) in cps.iter().enumerate() {
            for cb in &cps[a + 1..] {
                let saddles = [ca, cb].iter().filter(|c| c.kind == CriticalKind::Saddle).count();
                if saddles > 0 && (ca.g - cb.g).abs() < 1e-9 {
                    return Err(Error::NonGenericLevels { a: ca.g, b: cb.g });
                }
            }
        }
        let m = vals.len();
        vals.push(gp);
        let mids: Vec<f64> = (0..m).map(|j| 0.5 * (vals[j] + vals[j + 1])).collect();
        let up_targets = |g0: f64| -> Vec<(usize, f64)> { (0..m).filter(|&j| mids[j] > g0).map(|j| (j, mids[j])).collect() };
        let down_targets =
            |g0: f64| -> Vec<(usize, f64)> { (0..m).rev().filter(|&j| mids[j] < g0).map(|j| (j, mids[j])).collect() };

        // gradient lines: spines from critical points, then lines through seed points
        let mut lines: Vec<Line> = Vec::new();
        for (i, c) in cps.iter().enumerate() {
            let mut spines: Vec<(Vec3, bool, f64)> = Vec::new();
            match c.kind {
                CriticalKind::Saddle => {
                    for s in [1.0, -1.0] {
                        spines.push((c.axes[0] * s, false, s));
                        spines.push((c.axes[1] * s, true, s));
                    }
                }
                CriticalKind::Minimum => {
                    for a in &c.axes {
                        spines.push((*a, true, 1.0));
                        spines.push((-a, true, -1.0));
                    }
                }
                CriticalKind::Maximum => {
                    for a in &c.axes {
                        spines.push((*a, false, 1.0));
                        spines.push((-a, false, -1.0));
                    }
                }
            }
            for (d, up, sign) in spines {
                let start = tangent_offset(sys, &c.x, &d, SPINE_OFFSET);
                let g0 = sys.g.value(&start);
                let targets = if up { up_targets(g0) } else { down_targets(g0) };
                let crossings = gradient_walk(sys, &start, &targets).into_iter().collect();
                lines.push(Line {
                    crossings,
                    spine: Some((i, up, sign)),
                });
            }
        }
        for s in Atlas::of(sys).seed_points(8)? {
            let g0 = sys.g.value(&s);
            if g0 >= gp || cps.iter().any(|c| (c.x - s).norm() < 1e-2) {
                continue;
            }
            let mut crossings: BTreeMap<usize, Vec3> = gradient_walk(sys, &s, &down_targets(g0)).into_iter().collect();
            crossings.extend(gradient_walk(sys, &s, &up_targets(g0)));
            lines.push(Line { crossings, spine: None });
        }

        // level components at each mid level
        let opts = TraceOptions::default();
        let mut comp_of: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut nodes: Vec<(usize, LevelCurve)> = Vec::new();
        for j in 0..m {
            let mut pending: Vec<(usize, Vec3)> =
                lines.iter().enumerate().filter_map(|(l, ln)| ln.crossings.get(&j).map(|x| (l, *x))).collect();
            while let Some((l, x)) = pending.first().cloned() {
                let curve = trace_level_curve(&sys.f, sys.level, &sys.g, mids[j], &x, &[], &opts)?;
                let node = nodes.len();
                comp_of.insert((l, j), node);
                pending.retain(|(l2, y)| {
                    if *l2 == l || curve.distance(y) < 1e-3 {
                        comp_of.insert((*l2, j), node);
                        false
                    } else {
                        true
                    }
                });
                nodes.push((j, curve));
            }
        }

        // adjacency of components to the critical points just above / below them
        let mut below_adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); cps.len()];
        let mut above_adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); cps.len()];
        for (l, ln) in lines.iter().enumerate() {
            if let Some((i, up, _)) = ln.spine {
                let j = if up { lev[i] } else { lev[i].wrapping_sub(1) };
                if let Some(&node) = comp_of.get(&(l, j)) {
                    if up {
                        above_adj[i].insert(node);
                    } else {
                        below_adj[i].insert(node);
                    }
                }
            }
        }
        let lev_ref = &lev;
        let at_level = |j: usize| (0..cps.len()).filter(move |&i| lev_ref[i] == j);
        let mut uf = UnionFind((0..nodes.len()).collect());
        for l in 0..lines.len() {
            for j in 0..m.saturating_sub(1) {
                if let (Some(&a), Some(&b)) = (comp_of.get(&(l, j)), comp_of.get(&(l, j + 1))) {
                    if !at_level(j + 1).any(|i| below_adj[i].contains(&a) || above_adj[i].contains(&b)) {
                        uf.union(a, b);
                    }
                }
            }
        }
        let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for n in 0..nodes.len() {
            classes.entry(uf.find(n)).or_default().push(n);
        }

        let mut vertices: Vec<Vertex> = cps
            .iter()
            .enumerate()
            .map(|(i, c)| Vertex {
                id: i,
                kind: match c.kind {
                    CriticalKind::Minimum => VertexKind::Minimum,
                    CriticalKind::Maximum => VertexKind::Maximum,
                    CriticalKind::Saddle => VertexKind::Saddle,
                },
                g: c.g,
                critical: Some(c.clone()),
            })
            .collect();
        let inconsistent = |what: &str| Error::Config(format!("level-set graph construction is inconsistent: {what}"));
        let mut edges: Vec<(Edge, Vec<usize>)> = Vec::new();
        for members in classes.values() {
            let mut js: Vec<usize> = members.iter().map(|&n| nodes[n].0).collect();
            js.sort_unstable();
            if js.windows(2).any(|w| w[1] != w[0] + 1) {
                return Err(inconsistent("an edge skips or repeats a level"));
            }
            let (j_lo, j_hi) = (js[0], *js.last().unwrap());
            let bottom = *members.iter().find(|&&n| nodes[n].0 == j_lo).unwrap();
            let top = *members.iter().find(|&&n| nodes[n].0 == j_hi).unwrap();
            let lower = at_level(j_lo)
                .find(|&i| above_adj[i].contains(&bottom))
                .ok_or_else(|| inconsistent("edge has no lower vertex"))?;
            let upper = if j_hi + 1 == m {
                vertices.push(Vertex {
                    id: vertices.len(),
                    kind: VertexKind::Boundary,
                    g: gp,
                    critical: None,
                });
                vertices.len() - 1
            } else {
                at_level(j_hi + 1)
                    .find(|&i| below_adj[i].contains(&top))
                    .ok_or_else(|| inconsistent("edge has no upper vertex"))?
            };
            let mut guide: Vec<(f64, Vec3)> = members.iter().map(|&n| (nodes[n].1.level, nodes[n].1.points[0])).collect();
            guide.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            edges.push((
                Edge {
                    id: 0,
                    lo: cps[lower].g,
                    hi: vertices[upper].g,
                    lower,
                    upper,
                    guide,
                },
                members.clone(),
            ));
        }

        // vertex degree check
        let mut degree = vec![0usize; vertices.len()];
        for (e, _) in &edges {
            degree[e.lower] += 1;
            degree[e.upper] += 1;
        }
        for v in &vertices {
            let want = match v.kind {
                VertexKind::Saddle => 3,
                _ => 1,
            };
            if degree[v.id] != want {
                return Err(inconsistent(&format!("vertex {} of kind {:?} has degree {}", v.id, v.kind, degree[v.id])));
            }
        }

        // edge numbering: 1 = well reached along the positive unstable axis of
        // the saddle, 2 = the edge above it, 3 = the other well
        let saddles: Vec<usize> = (0..cps.len()).filter(|&i| cps[i].kind == CriticalKind::Saddle).collect();
        let standard = saddles.len() == 1 && edges.len() == 3 && cps.len() == 3;
        if standard {
            let s = saddles[0];
            let plus_node = lines
                .iter()
                .enumerate()
                .find(|(_, ln)| ln.spine == Some((s, false, 1.0)))
                .and_then(|(l, _)| comp_of.get(&(l, lev[s] - 1)).copied());
            for (e, members) in edges.iter_mut() {
                e.id = if e.lower == s {
                    2
                } else if plus_node.is_some_and(|n| members.contains(&n)) {
                    1
                } else {
                    3
                };
            }
            if edges.iter().map(|(e, _)| e.id).collect::<BTreeSet<_>>().len() != 3 {
                return Err(inconsistent("could not label the wells"));
            }
        } else {
            edges.sort_by(|a, b| (a.0.lo, a.0.hi).partial_cmp(&(b.0.lo, b.0.hi)).unwrap());
            for (i, (e, _)) in edges.iter_mut().enumerate() {
                e.id = i + 1;
            }
        }
        let mut edges: Vec<Edge> = edges.into_iter().map(|(e, _)| e).collect();
        edges.sort_by_key(|e| e.id);

        let mut shortest = f64::INFINITY;
        for c in &cps {
            if let Some(p) = c.linear_period() {
                shortest = shortest.min(p);
            }
        }
        for (_, c) in &nodes {
            shortest = shortest.min(c.period);
        }
        Ok(Self {
            vertices,
            edges,
            boundary_level: gp,
            shortest_period: shortest,
            separatrix_margin: 1e-6,
        })
    }

    pub fn edge(&self, k: usize) -> &Edge {
        self.edges.iter().find(|e| e.id == k).unwrap_or_else(|| panic!("no edge {k}"))
    }

    pub fn try_edge(&self, k: usize) -> Result<&Edge> {
        self.edges
            .iter()
            .find(|e| e.id == k)
            .ok_or_else(|| Error::Config(format!("no edge with id {k}")))
    }

    pub fn edge_ids(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.id).collect()
    }

    pub fn saddles(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.iter().filter(|v| v.kind == VertexKind::Saddle)
    }

    pub fn minima(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.iter().filter(|v| v.kind == VertexKind::Minimum)
    }

    /// Edges running from a minimum to a saddle.
    pub fn is_well_edge(&self, k: usize) -> bool {
        let e = self.edge(k);
        self.vertices[e.lower].kind == VertexKind::Minimum && self.vertices[e.upper].kind == VertexKind::Saddle
    }

    pub fn well_edges(&self) -> Vec<usize> {
        self.edges.iter().filter(|e| self.is_well_edge(e.id)).map(|e| e.id).collect()
    }

    /// Highest upper end of a well edge.
    pub fn well_threshold(&self) -> f64 {
        self.edges
            .iter()
            .filter(|e| self.is_well_edge(e.id))
            .map(|e| e.hi)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Edges meeting at vertex `v` as `(edge id, true if the edge lies above v)`.
    pub fn incident(&self, v: usize) -> Vec<(usize, bool)> {
        let mut out = Vec::new();
        for e in &self.edges {
            if e.lower == v {
                out.push((e.id, true));
            }
            if e.upper == v {
                out.push((e.id, false));
            }
        }
        out
    }

    /// `#min - #saddle + #max`, which is 1 on a disk.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices
            .iter()
            .map(|v| match v.kind {
                VertexKind::Minimum | VertexKind::Maximum => 1,
                VertexKind::Saddle => -1,
                VertexKind::Boundary => 0,
            })
            .sum()
    }

    pub fn is_tree(&self) -> bool {
        if self.vertices.len() != self.edges.len() + 1 {
            return false;
        }
        let seen = self.reachable(0, None);
        seen.len() == self.vertices.len()
    }

    /// Vertices reachable from `start` without using edge `skip`.
    fn reachable(&self, start: usize, skip: Option<usize>) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for e in &self.edges {
                if Some(e.id) == skip {
                    continue;
                }
                let other = if e.lower == v {
                    e.upper
                } else if e.upper == v {
                    e.lower
                } else {
                    continue;
                };
                if seen.insert(other) {
                    queue.push_back(other);
                }
            }
        }
        seen
    }

    /// Whether the part of the region cut off by the curve `(k, g)` on the
    /// side away from the boundary lies below the curve.
    pub fn inside_is_lower(&self, k: usize) -> bool {
        let e = self.edge(k);
        let lower_side = self.reachable(e.lower, Some(k));
        !lower_side.iter().any(|&v| self.vertices[v].kind == VertexKind::Boundary)
    }

    /// Edge ids on the inside of the cut at edge `k` (excluding `k`) and the
    /// highest and lowest vertex levels there.
    pub fn inside_edges(&self, k: usize) -> (BTreeSet<usize>, f64, f64) {
        let e = self.edge(k);
        let start = if self.inside_is_lower(k) { e.lower } else { e.upper };
        let verts = self.reachable(start, Some(k));
        let ids = self
            .edges
            .iter()
            .filter(|x| x.id != k && verts.contains(&x.lower) && verts.contains(&x.upper))
            .map(|x| x.id)
            .collect();
        let hi = verts.iter().map(|&v| self.vertices[v].g).fold(f64::NEG_INFINITY, f64::max);
        let lo = verts.iter().map(|&v| self.vertices[v].g).fold(f64::INFINITY, f64::min);
        (ids, lo, hi)
    }

    /// Tree path between two vertices as a list of edge ids.
    fn path(&self, from: usize, to: usize) -> Vec<usize> {
        let mut prev: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(v) = queue.pop_front() {
            if v == to {
                break;
            }
            for e in &self.edges {
                let other = if e.lower == v {
                    e.upper
                } else if e.upper == v {
                    e.lower
                } else {
                    continue;
                };
                if seen.insert(other) {
                    prev.insert(other, (v, e.id));
                    queue.push_back(other);
                }
            }
        }
        let mut out = Vec::new();
        let mut v = to;
        while let Some(&(p, e)) = prev.get(&v) {
            out.push(e);
            v = p;
        }
        out
    }

    fn critical_vertices(&self, kind: VertexKind) -> impl Iterator<Item = (usize, Vec3)> + '_ {
        self.vertices
            .iter()
            .filter(move |v| v.kind == kind)
            .filter_map(|v| v.critical.as_ref().map(|c| (v.id, c.x)))
    }

    /// Follows `±∇_t G` from `x` to the extremum (or the boundary) it reaches.
    pub fn flow_to_extremum(&self, sys: &SurfaceSystem, x: &Vec3, ascend: bool) -> Result<usize> {
        let sign = if ascend { 1.0 } else { -1.0 };
        let kind = if ascend { VertexKind::Maximum } else { VertexKind::Minimum };
        let targets: Vec<(usize, Vec3)> = self.critical_vertices(kind).collect();
        let boundary = self.vertices.iter().find(|v| v.kind == VertexKind::Boundary).map(|v| v.id);
        let solver = Dopri5 {
            rtol: 1e-7,
            atol: 1e-9,
            h_min: 1e-10,
            h_max: 0.5,
        };
        let mut ws = Workspace::new(3);
        let mut rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
            let v = tangential_gradient(sys, &Vec3::new(y[0], y[1], y[2])) * sign;
            dy.copy_from_slice(v.as_slice());
        };
        let mut y = *x;
        let mut t = 0.0;
        let mut h = 0.05;
        let mut dy = [0.0; 3];
        for _ in 0..100_000 {
            if let Some((id, _)) = targets.iter().find(|(_, c)| (c - y).norm() < 2e-2) {
                return Ok(*id);
            }
            if ascend && sys.g.value(&y) >= self.boundary_level {
                if let Some(b) = boundary {
                    return Ok(b);
                }
            }
            rhs(t, y.as_slice(), &mut dy);
            let err = solver.attempt(&mut rhs, t, y.as_slice(), &dy, h, &mut ws);
            if err <= 1.0 || h <= solver.h_min {
                t += h;
                let yn = Vec3::new(ws.y_new[0], ws.y_new[1], ws.y_new[2]);
                y = project_to_level(&sys.f, sys.level, &yn, 1e-12, 50)?;
            }
            h = solver.next_step(h, err);
            if t > 1e4 {
                break;
            }
        }
        Err(Error::Config(format!("gradient flow from {x} did not reach an extremum")))
    }

    /// Edge and level of the level-curve component through `x`.
    pub fn classify_point(&self, sys: &SurfaceSystem, x: &Vec3) -> Result<(usize, f64)> {
        let g = sys.g.value(x);
        if g > self.boundary_level + 1e-9 {
            return Err(Error::EdgeRange { edge: 0, g });
        }
        for s in self.saddles() {
            if (g - s.g).abs() < self.separatrix_margin {
                return Err(Error::AmbiguousSeparatrix {
                    level: s.g,
                    margin: self.separatrix_margin,
                });
            }
        }
        let candidates: Vec<&Edge> = self.edges.iter().filter(|e| g >= e.lo && g <= e.hi).collect();
        if candidates.len() == 1 {
            return Ok((candidates[0].id, g));
        }
        let min = self.flow_to_extremum(sys, x, false)?;
        let mut v = min;
        loop {
            let ups: Vec<&Edge> = self.edges.iter().filter(|e| e.lower == v).collect();
            if ups.len() != 1 {
                break;
            }
            if g <= ups[0].hi {
                return Ok((ups[0].id, g));
            }
            v = ups[0].upper;
        }
        let top = self.flow_to_extremum(sys, x, true)?;
        for k in self.path(min, top) {
            let e = self.edge(k);
            if g >= e.lo && g <= e.hi {
                return Ok((k, g));
            }
        }
        Err(Error::EdgeRange { edge: 0, g })
    }

    /// A point on the curve `(k, g)`.
    pub fn seed(&self, sys: &SurfaceSystem, k: usize, g: f64) -> Result<Vec3> {
        let e = self.try_edge(k)?;
        if !(g >= e.lo && g <= e.hi) {
            return Err(Error::EdgeRange { edge: k, g });
        }
        let (g0, x0) = e
            .guide
            .iter()
            .min_by(|a, b| (a.0 - g).abs().partial_cmp(&(b.0 - g).abs()).unwrap())
            .copied()
            .ok_or(Error::Missing("edge guide points"))?;
        if g == g0 {
            return Ok(x0);
        }
        gradient_walk(sys, &x0, &[(0, g)])
            .pop()
            .map(|(_, x)| x)
            .ok_or_else(|| Error::CurveEscape {
                level: g,
                arclength: 0.0,
                reason: format!("gradient line from the guide of edge {k} stopped early"),
            })
    }

    /// Traces the curve `(k, g)` with the given integrands.
    pub fn trace(
        &self,
        sys: &SurfaceSystem,
        k: usize,
        g: f64,
        integrands: &[Integrand],
        opts: &TraceOptions,
    ) -> Result<LevelCurve> {
        let seed = self.seed(sys, k, g)?;
        trace_level_curve(&sys.f, sys.level, &sys.g, g, &seed, integrands, opts)
    }

    /// Whether `y` lies in the part of the region cut off by the curve `(k, g)`
    /// away from the boundary.
    pub fn region_contains(&self, sys: &SurfaceSystem, k: usize, g: f64, y: &Vec3) -> bool {
        let lower = self.inside_is_lower(k);
        let (inside, _, _) = self.inside_edges(k);
        match self.classify_point(sys, y) {
            Ok((k2, g2)) if k2 == k => (g2 < g) == lower,
            Ok((k2, _)) => inside.contains(&k2),
            Err(_) => false,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["edge", "lower_kind", "upper_kind", "lo", "hi"])
            .map_err(|e| Error::Config(e.to_string()))?;
        for e in &self.edges {
            out.write_record([
                e.id.to_string(),
                format!("{:?}", self.vertices[e.lower].kind).to_lowercase(),
                format!("{:?}", self.vertices[e.upper].kind).to_lowercase(),
                format!("{:.12}", e.lo),
                format!("{:.12}", e.hi),
            ])
            .map_err(|e| Error::Config(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SmoothField;

    fn canonical(beta: f64) -> (SurfaceSystem, ReebGraph) {
        let sys = SurfaceSystem::sphere_double_well(beta);
        let graph = ReebGraph::build(&sys).unwrap();
        (sys, graph)
    }

    #[test]
    fn canonical_graph_has_three_edges() {
        let (_, graph) = canonical(0.0);
        assert_eq!(graph.edges.len(), 3);
        assert_eq!(graph.vertices.len(), 4);
        assert!(graph.is_tree());
        assert_eq!(graph.euler_characteristic(), 1);
        let (e1, e2, e3) = (graph.edge(1), graph.edge(2), graph.edge(3));
        assert!((e1.lo + 0.25).abs() < 1e-12 && e1.hi.abs() < 1e-12);
        assert!((e3.lo + 0.25).abs() < 1e-12 && e3.hi.abs() < 1e-12);
        assert!(e2.lo.abs() < 1e-12 && (e2.hi - 1.5).abs() < 1e-12);
        assert!(graph.is_well_edge(1) && graph.is_well_edge(3) && !graph.is_well_edge(2));
        assert!(graph.well_threshold().abs() < 1e-12);
        assert!(graph.inside_is_lower(1) && graph.inside_is_lower(2));
        // period of small orbits at the minima of the canonical field: 2π/√(3/4·... )
        assert!(graph.shortest_period > 1.0 && graph.shortest_period < 20.0);
    }

    #[test]
    fn wells_are_labelled_by_sign_of_x1() {
        let (sys, graph) = canonical(0.1);
        for (x, want) in [
            (Vec3::new(0.8, 0.0, -0.6), 1),
            (Vec3::new(-0.8, 0.0, -0.6), 3),
            (Vec3::new(0.0, 0.8, -0.6), 2),
        ] {
            let x = x.normalize();
            let (k, g) = graph.classify_point(&sys, &x).unwrap();
            assert_eq!(k, want, "{x}");
            assert!((g - sys.g.value(&x)).abs() < 1e-15);
        }
        // well 1 is the deeper one
        assert!(graph.edge(1).lo < graph.edge(3).lo);
    }

    #[test]
    fn classification_refuses_separatrix_points() {
        let (sys, graph) = canonical(0.0);
        let x = Vec3::new(0.0, 0.0, -1.0);
        assert!(matches!(graph.classify_point(&sys, &x), Err(Error::AmbiguousSeparatrix { .. })));
    }

    #[test]
    fn seeded_curves_close_on_every_edge() {
        let (sys, graph) = canonical(0.1);
        for k in [1, 2, 3] {
            let e = graph.edge(k);
            for t in [0.1, 0.5, 0.9] {
                let g = e.lo + t * (e.hi - e.lo);
                let c = graph.trace(&sys, k, g, &[], &TraceOptions::default()).unwrap();
                assert!(c.closure < 1e-5);
                let (k2, _) = graph.classify_point(&sys, &c.points[c.points.len() / 2]).unwrap();
                assert_eq!(k2, k);
            }
        }
    }

    #[test]
    fn triple_well_graph() {
        // three wells along x₁ with a small tilt: two saddles
        let g = SmoothField::polynomial(&[
            (1.0, [0, 0, 1]),
            (10.0, [6, 0, 0]),
            (-7.2, [4, 0, 0]),
            (0.796, [2, 0, 0]),
            (0.05, [1, 0, 0]),
            (1.0, [0, 0, 0]),
        ]);
        let mut sys = SurfaceSystem::sphere_double_well(0.0);
        sys.perturbation = crate::geometry::Perturbation::Damping {
            b: crate::geometry::VectorFieldSpec::gradient_of(g.clone()),
        };
        sys.g = g;
        let cps = find_critical_points(&sys).unwrap();
        let saddles: Vec<f64> = cps.iter().filter(|c| c.kind == CriticalKind::Saddle).map(|c| c.g).collect();
        let top = saddles.iter().take(2).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        sys.boundary_level = top + 0.05;
        let graph = ReebGraph::build(&sys).unwrap();
        assert!(graph.is_tree());
        assert_eq!(graph.minima().count(), 3);
        assert_eq!(graph.saddles().count(), 2);
        assert_eq!(graph.edges.len(), 5);
        assert_eq!(graph.euler_characteristic(), 1);
        assert_eq!(graph.well_edges().len(), 3);
        for k in graph.edge_ids() {
            let e = graph.edge(k);
            let gm = 0.5 * (e.lo + e.hi);
            let c = graph.trace(&sys, k, gm, &[], &TraceOptions::default()).unwrap();
            let (k2, _) = graph.classify_point(&sys, &c.points[1]).unwrap();
            assert_eq!(k2, k);
        }
    }
}
