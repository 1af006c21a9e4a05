//! Alignment post-processing filters: confidence cut and maximum-weight
//! one-to-one assignment.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::alignment::{Alignment, Correspondence};
use crate::graph::Iri;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Reduces an alignment; the output is always a subset of the input.
pub trait Filter: Send + Sync {
    fn name(&self) -> String;
    fn apply(&self, alignment: &Alignment) -> Alignment;
}

/// Removes every correspondence with confidence below `threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceCut {
    pub threshold: f64,
}

impl Filter for ConfidenceCut {
    fn name(&self) -> String {
        format!("cut:{}", self.threshold)
    }

    fn apply(&self, alignment: &Alignment) -> Alignment {
        confidence_cut(alignment, self.threshold)
    }
}

pub fn confidence_cut(alignment: &Alignment, threshold: f64) -> Alignment {
    alignment.iter().filter(|c| c.confidence >= threshold).cloned().collect()
}

/// Maximum-weight bipartite one-to-one selection.
#[derive(Clone, Copy, Debug, Default)]
pub struct MwbFilter;

impl Filter for MwbFilter {
    fn name(&self) -> String {
        "mwb".to_string()
    }

    fn apply(&self, alignment: &Alignment) -> Alignment {
        mwb_filter(alignment)
    }
}

/// Fixed-point scale for confidences (which lie in [0, 1]); weights are
/// compared exactly as integers.
const WEIGHT_SCALE: f64 = (1u64 << 40) as f64;

/// The one-to-one subset of `alignment` with maximum total confidence.
///
/// Among several optimal subsets the result is the one obtained by walking
/// the correspondences in `(source, target)` order and keeping each one that
/// can still be completed to an optimum. Connected components of the
/// correspondence graph are solved independently.
pub fn mwb_filter(alignment: &Alignment) -> Alignment {
    let components = components(alignment);
    let selected: Vec<Vec<usize>> = components.par_iter().map(|c| c.solve()).collect();
    let mut out = Alignment::new();
    for (component, chosen) in components.iter().zip(selected) {
        for e in chosen {
            out.insert(component.corrs[e].clone());
        }
    }
    out
}

/// Greedy one-to-one selection by descending confidence, ties in key order.
pub fn greedy_one_to_one(alignment: &Alignment) -> Alignment {
    let mut corrs: Vec<&Correspondence> = alignment.iter().collect();
    corrs.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut out = Alignment::new();
    for c in corrs {
        if !out.has_source(&c.source) && !out.has_target(&c.target) {
            out.insert(c.clone());
        }
    }
    out
}

struct Component {
    n_left: usize,
    n_right: usize,
    /// `(left, right, weight)`, sorted by `(source, target)`.
    edges: Vec<(usize, usize, i64)>,
    corrs: Vec<Correspondence>,
}

fn components(alignment: &Alignment) -> Vec<Component> {
    let mut left_ids: BTreeMap<&Iri, usize> = BTreeMap::new();
    let mut right_ids: BTreeMap<&Iri, usize> = BTreeMap::new();
    for c in alignment.iter() {
        let n = left_ids.len();
        left_ids.entry(&c.source).or_insert(n);
        let n = right_ids.len();
        right_ids.entry(&c.target).or_insert(n);
    }
    let n_left = left_ids.len();
    let mut parent: Vec<usize> = (0..n_left + right_ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for c in alignment.iter() {
        let a = find(&mut parent, left_ids[&c.source]);
        let b = find(&mut parent, n_left + right_ids[&c.target]);
        parent[a] = b;
    }

    // Iteration is in (source, target) order, so per-component edge lists
    // stay sorted and first-seen local ids follow IRI order on the left.
    let mut by_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out: Vec<Component> = Vec::new();
    let mut local_left: Vec<Option<usize>> = vec![None; n_left];
    let mut local_right: Vec<Option<usize>> = vec![None; right_ids.len()];
    for c in alignment.iter() {
        let l = left_ids[&c.source];
        let r = right_ids[&c.target];
        let root = find(&mut parent, l);
        let idx = *by_root.entry(root).or_insert_with(|| {
            out.push(Component {
                n_left: 0,
                n_right: 0,
                edges: Vec::new(),
                corrs: Vec::new(),
            });
            out.len() - 1
        });
        let comp = &mut out[idx];
        let u = *local_left[l].get_or_insert_with(|| {
            comp.n_left += 1;
            comp.n_left - 1
        });
        let v = *local_right[r].get_or_insert_with(|| {
            comp.n_right += 1;
            comp.n_right - 1
        });
        let weight = (c.confidence * WEIGHT_SCALE).round() as i64;
        comp.edges.push((u, v, weight.max(0)));
        comp.corrs.push(c.clone());
    }
    out
}

const INF: i64 = i64::MAX / 4;

impl Component {
    fn solve(&self) -> Vec<usize> {
        if self.edges.len() == 1 {
            return vec![0];
        }
        let mut state = MatchState::new(self);
        self.max_weight_matching(&mut state);
        let Some(duals) = self.duals(&state) else {
            tracing::warn!("dual reconstruction failed; keeping unrefined optimum");
            return state.matched_edges();
        };
        self.lexicographic_optimum(state, &duals)
    }

    /// Successive shortest augmenting paths with Dijkstra on reduced costs,
    /// stopping when no path improves the total weight.
    fn max_weight_matching(&self, st: &mut MatchState) {
        let (nl, nr) = (self.n_left, self.n_right);
        let sink = nl + nr;
        let mut pot = vec![0i64; nl + nr + 1];
        for &(_, v, w) in &self.edges {
            pot[nl + v] = pot[nl + v].min(-w);
        }
        pot[sink] = (0..nr).map(|v| pot[nl + v]).min().unwrap_or(0);

        let mut dist = vec![INF; nl + nr + 1];
        // Predecessor: for rights the edge used; for lefts and the sink the
        // right vertex they were reached from.
        let mut prev = vec![usize::MAX; nl + nr + 1];
        loop {
            dist.fill(INF);
            prev.fill(usize::MAX);
            let mut heap = BinaryHeap::new();
            for (u, d) in dist.iter_mut().enumerate().take(nl) {
                if st.mate[0][u].is_none() {
                    *d = 0;
                    heap.push(Reverse((0i64, u)));
                }
            }
            while let Some(Reverse((d, x))) = heap.pop() {
                if d > dist[x] {
                    continue;
                }
                if x < nl {
                    for &e in &st.adj[0][x] {
                        if st.mate[0][x] == Some(e) {
                            continue;
                        }
                        let (_, v, w) = self.edges[e];
                        let y = nl + v;
                        let nd = d + (-w + pot[x] - pot[y]);
                        if nd < dist[y] {
                            dist[y] = nd;
                            prev[y] = e;
                            heap.push(Reverse((nd, y)));
                        }
                    }
                } else if x < sink {
                    let v = x - nl;
                    match st.mate[1][v] {
                        Some(e) => {
                            let (u, _, w) = self.edges[e];
                            let nd = d + (w + pot[x] - pot[u]);
                            if nd < dist[u] {
                                dist[u] = nd;
                                prev[u] = v;
                                heap.push(Reverse((nd, u)));
                            }
                        }
                        None => {
                            let nd = d + (pot[x] - pot[sink]);
                            if nd < dist[sink] {
                                dist[sink] = nd;
                                prev[sink] = v;
                                heap.push(Reverse((nd, sink)));
                            }
                        }
                    }
                }
            }
            if dist[sink] >= INF || dist[sink] + pot[sink] >= 0 {
                break;
            }
            let reach = dist.iter().copied().filter(|&d| d < INF).max().unwrap_or(0);
            for (p, d) in pot.iter_mut().zip(&dist) {
                *p += if *d < INF { *d } else { reach };
            }
            // Walk back from the sink flipping edges along the path.
            let mut v = prev[sink];
            loop {
                let e = prev[nl + v];
                let (u, _, _) = self.edges[e];
                let back = st.mate[0][u].map(|old| self.edges[old].1);
                st.mate[0][u] = Some(e);
                st.mate[1][v] = Some(e);
                match back {
                    Some(old_v) => v = old_v,
                    None => break,
                }
            }
        }
    }

    /// Optimal dual values `(left, right)` consistent with the matching in
    /// `st`, from shortest paths over the difference constraints implied by
    /// complementary slackness. Unmatched vertices get zero.
    fn duals(&self, st: &MatchState) -> Option<(Vec<i64>, Vec<i64>)> {
        let nl = self.n_left;
        let zero = nl;
        let var = |u: usize| if st.mate[0][u].is_some() { u } else { zero };
        // Arc i -> j with weight c encodes y_j - y_i <= c.
        let mut arcs: Vec<Vec<(usize, i64)>> = vec![Vec::new(); nl + 1];
        for (u, mate) in st.mate[0].iter().enumerate() {
            if let Some(e) = *mate {
                let w = self.edges[e].2;
                arcs[u].push((zero, 0));
                arcs[zero].push((u, w));
            }
        }
        for (e, &(u, v, w)) in self.edges.iter().enumerate() {
            if st.mate[0][u] == Some(e) {
                continue;
            }
            match st.mate[1][v] {
                Some(f) => {
                    let (u2, _, w2) = self.edges[f];
                    arcs[var(u)].push((u2, w2 - w));
                }
                None if var(u) != zero => arcs[u].push((zero, -w)),
                None => {}
            }
        }
        let n = nl + 1;
        let mut dist = vec![INF; n];
        let mut in_queue = vec![false; n];
        let mut relaxations = vec![0usize; n];
        let mut queue = VecDeque::from([zero]);
        dist[zero] = 0;
        in_queue[zero] = true;
        while let Some(i) = queue.pop_front() {
            in_queue[i] = false;
            for &(j, c) in &arcs[i] {
                if dist[i] + c < dist[j] {
                    dist[j] = dist[i] + c;
                    if !in_queue[j] {
                        relaxations[j] += 1;
                        if relaxations[j] > n {
                            return None;
                        }
                        in_queue[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if dist[zero] != 0 {
            return None;
        }
        let left: Vec<i64> = (0..nl).map(|u| if var(u) == zero { 0 } else { dist[u] }).collect();
        let mut right = vec![0i64; self.n_right];
        for (v, mate) in st.mate[1].iter().enumerate() {
            if let Some(e) = *mate {
                let (u, _, w) = self.edges[e];
                right[v] = w - left[u];
            }
        }
        Some((left, right))
    }

    /// Walks the tight edges in order, keeping each edge that some optimal
    /// matching containing all previously kept edges also contains.
    ///
    /// Optimal matchings are exactly the matchings of tight edges that cover
    /// every vertex with a positive dual; each test repairs the current
    /// optimum with alternating paths.
    fn lexicographic_optimum(&self, mut st: MatchState, duals: &(Vec<i64>, Vec<i64>)) -> Vec<usize> {
        let (yl, yr) = duals;
        st.excluded = self
            .edges
            .iter()
            .map(|&(u, v, w)| yl[u] + yr[v] != w)
            .collect();
        st.required = [yl.iter().map(|&y| y > 0).collect(), yr.iter().map(|&y| y > 0).collect()];
        for e in 0..self.edges.len() {
            if st.excluded[e] {
                continue;
            }
            let (u, v, _) = self.edges[e];
            if st.blocked[0][u] || st.blocked[1][v] {
                st.excluded[e] = true;
                continue;
            }
            if st.mate[0][u] == Some(e) {
                st.blocked[0][u] = true;
                st.blocked[1][v] = true;
                continue;
            }
            let saved = st.mate.clone();
            let old_right = st.mate[0][u].map(|f| self.edges[f].1);
            let old_left = st.mate[1][v].map(|f| self.edges[f].0);
            if let Some(v2) = old_right {
                st.mate[1][v2] = None;
            }
            if let Some(u2) = old_left {
                st.mate[0][u2] = None;
            }
            st.mate[0][u] = Some(e);
            st.mate[1][v] = Some(e);
            st.blocked[0][u] = true;
            st.blocked[1][v] = true;
            let repaired = old_left.is_none_or(|u2| st.cover(self, 0, u2))
                && old_right.is_none_or(|v2| st.cover(self, 1, v2));
            if !repaired {
                st.mate = saved;
                st.blocked[0][u] = false;
                st.blocked[1][v] = false;
                st.excluded[e] = true;
            }
        }
        st.matched_edges()
    }
}

/// Matching state indexed by side (0 = left/source, 1 = right/target).
struct MatchState {
    adj: [Vec<Vec<usize>>; 2],
    mate: [Vec<Option<usize>>; 2],
    blocked: [Vec<bool>; 2],
    required: [Vec<bool>; 2],
    excluded: Vec<bool>,
}

impl MatchState {
    fn new(c: &Component) -> Self {
        let mut adj = [vec![Vec::new(); c.n_left], vec![Vec::new(); c.n_right]];
        for (e, &(u, v, _)) in c.edges.iter().enumerate() {
            adj[0][u].push(e);
            adj[1][v].push(e);
        }
        MatchState {
            adj,
            mate: [vec![None; c.n_left], vec![None; c.n_right]],
            blocked: [vec![false; c.n_left], vec![false; c.n_right]],
            required: [vec![false; c.n_left], vec![false; c.n_right]],
            excluded: vec![false; c.edges.len()],
        }
    }

    fn matched_edges(&self) -> Vec<usize> {
        let mut edges: Vec<usize> = self.mate[0].iter().flatten().copied().collect();
        edges.sort_unstable();
        edges
    }

    /// Ensures `root` on `side` is covered, or no longer needs to be, via an
    /// alternating path that ends at a free vertex of the other side or
    /// releases a vertex whose dual is zero.
    fn cover(&mut self, c: &Component, side: usize, root: usize) -> bool {
        if !self.required[side][root] || self.mate[side][root].is_some() {
            return true;
        }
        let other = 1 - side;
        let end = |e: usize, s: usize| if s == 0 { c.edges[e].0 } else { c.edges[e].1 };
        let n_side = self.mate[side].len();
        let n_other = self.mate[other].len();
        let mut reached_by: Vec<Option<(usize, usize)>> = vec![None; n_other];
        let mut visited = vec![false; n_side];
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        let mut found: Option<usize> = None;
        'search: while let Some(x) = queue.pop_front() {
            for &e in &self.adj[side][x] {
                if self.excluded[e] || self.mate[side][x] == Some(e) {
                    continue;
                }
                let y = end(e, other);
                if self.blocked[other][y] || reached_by[y].is_some() {
                    continue;
                }
                reached_by[y] = Some((x, e));
                match self.mate[other][y] {
                    None => {
                        found = Some(y);
                        break 'search;
                    }
                    Some(g) => {
                        let x2 = end(g, side);
                        if !self.required[side][x2] {
                            self.mate[side][x2] = None;
                            found = Some(y);
                            break 'search;
                        }
                        if !visited[x2] {
                            visited[x2] = true;
                            queue.push_back(x2);
                        }
                    }
                }
            }
        }
        let Some(mut y) = found else { return false };
        loop {
            let (x, e) = reached_by[y].expect("path vertex");
            let previous = self.mate[side][x].map(|g| end(g, other));
            self.mate[side][x] = Some(e);
            self.mate[other][y] = Some(e);
            match previous {
                Some(y_prev) if x != root => y = y_prev,
                _ => break,
            }
        }
        true
    }
}

/// Filters applied left to right.
#[derive(Default)]
pub struct FilterChain {
    filters: Vec<Box<dyn Filter>>,
}

impl FilterChain {
    pub fn new() -> Self {
        Self::default()
    }

    /// Confidence cut at `threshold`, then maximum-weight assignment.
    pub fn standard(threshold: f64) -> Self {
        FilterChain::new()
            .with(ConfidenceCut { threshold })
            .with(MwbFilter)
    }

    pub fn with(mut self, filter: impl Filter + 'static) -> Self {
        self.filters.push(Box::new(filter));
        self
    }

    pub fn push(&mut self, filter: Box<dyn Filter>) {
        self.filters.push(filter);
    }

    pub fn names(&self) -> Vec<String> {
        self.filters.iter().map(|f| f.name()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn apply(&self, alignment: &Alignment) -> Alignment {
        let mut current = alignment.clone();
        for filter in &self.filters {
            let before = current.len();
            current = filter.apply(&current);
            tracing::debug!(filter = %filter.name(), before, after = current.len(), "filter applied");
        }
        current
    }
}

impl fmt::Debug for FilterChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

/// Parses comma-separated filters: `cut:<t>` or `mwb`. The empty string is
/// the empty chain.
impl FromStr for FilterChain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chain = FilterChain::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "mwb" {
                chain.push(Box::new(MwbFilter));
            } else if let Some(t) = part.strip_prefix("cut:") {
                let threshold: f64 = t.parse().map_err(|_| format!("invalid threshold in '{part}'"))?;
                if !(0.0..=1.0).contains(&threshold) {
                    return Err(format!("threshold {threshold} outside [0, 1]"));
                }
                chain.push(Box::new(ConfidenceCut { threshold }));
            } else {
                return Err(format!("unknown filter '{part}' (cut:<t>|mwb)"));
            }
        }
        Ok(chain)
    }
}

pub fn apply_chain(alignment: &Alignment, chain: &FilterChain) -> Alignment {
    chain.apply(alignment)
}
