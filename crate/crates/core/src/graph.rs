//! Transport graph, control/drift edge subsets and connectivity checks.

use std::fmt::Write as _;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::geometry::Grid;
use crate::generator::RateSet;

/// Sign of a control channel: `Plus` follows `g_i`, `Minus` follows `-g_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }

    pub fn is_plus(self) -> bool {
        self == Sign::Plus
    }
}

/// Signed incidence operator of an edge subset. `apply` maps vertex values
/// to `mu(w) - mu(v)` per edge `v -> w`; `apply_transpose` maps edge fluxes
/// to net inflow per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Incidence {
    pub fn apply(&self, mu: &[f64]) -> Vec<f64> {
        self.edges.iter().map(|&(v, w)| mu[w] - mu[v]).collect()
    }

    pub fn apply_transpose(&self, flux: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vertices];
        for (&(v, w), &j) in self.edges.iter().zip(flux) {
            out[w] += j;
            out[v] -= j;
        }
        out
    }

    /// Integer column sums of the transposed operator (one per edge).
    pub fn column_sums(&self) -> Vec<i64> {
        self.edges
            .iter()
            .map(|&(v, w)| {
                let mut col = std::collections::BTreeMap::new();
                *col.entry(w).or_insert(0i64) += 1;
                *col.entry(v).or_insert(0i64) -= 1;
                col.values().sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TransportGraph {
    pub vertices: usize,
    /// Every adjacency in both orientations, sorted by (tail, head).
    pub edges: Vec<(usize, usize)>,
    pub reverse: Vec<usize>,
    /// `channel_edges[i][0]` is E_i^+, `[i][1]` is E_i^-; sorted edge indices.
    pub channel_edges: Vec<[Vec<usize>; 2]>,
    /// Edges with nonzero drift rate at some step.
    pub drift_edges: Vec<usize>,
    /// Union of all channel edge sets.
    pub control_edges: Vec<usize>,
}

/// Enumerate edges and populate the per-channel subsets from nonzero rates.
pub fn build_graph(grid: &Grid, rates: &RateSet) -> TransportGraph {
    let edges: Vec<(usize, usize)> = grid.edges().iter().map(|e| (e.tail, e.head)).collect();
    let n = edges.len();
    let nonzero = |r: &[f64]| -> Vec<usize> { (0..n).filter(|&e| r[e] != 0.0).collect() };
    let channel_edges: Vec<[Vec<usize>; 2]> = (0..rates.channels())
        .map(|i| [nonzero(&rates.control_plus[i]), nonzero(&rates.control_minus[i])])
        .collect();
    let drift_edges = (0..n).filter(|&e| rates.drift.iter().any(|d| d[e] != 0.0)).collect();
    let mut in_control = vec![false; n];
    for sets in &channel_edges {
        for s in sets {
            for &e in s {
                in_control[e] = true;
            }
        }
    }
    let control_edges = (0..n).filter(|&e| in_control[e]).collect();
    TransportGraph {
        vertices: grid.len(),
        edges,
        reverse: grid.reverse_edges(),
        channel_edges,
        drift_edges,
        control_edges,
    }
}

impl TransportGraph {
    pub fn channels(&self) -> usize {
        self.channel_edges.len()
    }

    pub fn channel(&self, i: usize, sign: Sign) -> &[usize] {
        &self.channel_edges[i][if sign.is_plus() { 0 } else { 1 }]
    }

    /// Incidence operator D_i^s over E_i^s.
    pub fn incidence(&self, i: usize, sign: Sign) -> Incidence {
        Incidence { vertices: self.vertices, edges: self.channel(i, sign).iter().map(|&e| self.edges[e]).collect() }
    }

    pub fn edge_pairs(&self, subset: &[usize]) -> Vec<(usize, usize)> {
        subset.iter().map(|&e| self.edges[e]).collect()
    }

    /// Heads of edges in E_i^s leaving `v`.
    pub fn neighborhood(&self, i: usize, sign: Sign, v: usize) -> Vec<usize> {
        self.channel(i, sign).iter().map(|&e| self.edges[e]).filter(|&(t, _)| t == v).map(|(_, h)| h).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Connectivity {
    pub strongly_connected: bool,
    pub component_count: usize,
    /// A pair `(a, b)` with no directed path from `a` to `b`.
    pub witness: Option<(usize, usize)>,
    /// Components, each sorted, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
}

/// Strongly connected components of the directed graph `(0..m, edges)`.
pub fn check_strong_connectivity(edges: &[(usize, usize)], m: usize) -> Connectivity {
    let mut g = DiGraph::<(), ()>::with_capacity(m, edges.len());
    let nodes: Vec<_> = (0..m).map(|_| g.add_node(())).collect();
    for &(v, w) in edges {
        g.add_edge(nodes[v], nodes[w], ());
    }
    let mut components: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
            c.sort_unstable();
            c
        })
        .collect();
    components.sort_by_key(|c| c[0]);
    let strongly_connected = components.len() <= 1;
    let witness = if strongly_connected { None } else { unreachable_pair(edges, m) };
    Connectivity { strongly_connected, component_count: components.len(), witness, components }
}

fn unreachable_pair(edges: &[(usize, usize)], m: usize) -> Option<(usize, usize)> {
    let reach = |forward: bool| -> Vec<bool> {
        let mut adj = vec![Vec::new(); m];
        for &(v, w) in edges {
            if forward {
                adj[v].push(w);
            } else {
                adj[w].push(v);
            }
        }
        let mut seen = vec![false; m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    };
    if let Some(b) = reach(true).iter().position(|&s| !s) {
        return Some((0, b));
    }
    reach(false).iter().position(|&s| !s).map(|a| (a, 0))
}

/// Outcome of the well-posedness checks.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub vertices: usize,
    pub edges: usize,
    pub control_edges: usize,
    pub drift_edges: usize,
    pub control_strongly_connected: bool,
    pub control_components: usize,
    pub control_witness: Option<(usize, usize)>,
    pub control_equals_full: bool,
    /// Edges of the full graph missing from the control graph (first few).
    pub missing_control_edges: Vec<(usize, usize)>,
    pub missing_control_count: usize,
    pub driftless: bool,
    pub drift_within_control: bool,
    pub drift_outside_control: Vec<(usize, usize)>,
    /// Sizes of the control-graph components when it is not strongly connected.
    pub component_sizes: Vec<usize>,
    /// Set when an endpoint measure has empty boxes.
    pub boundary_measures: Option<bool>,
    pub passed: bool,
}

const LISTED: usize = 20;

/// Check that the control graph equals the full graph and is strongly
/// connected, and that drift edges are covered by control edges.
pub fn validate_problem_hypotheses(graph: &TransportGraph, driftless: bool) -> HypothesisReport {
    let control_pairs = graph.edge_pairs(&graph.control_edges);
    let conn = check_strong_connectivity(&control_pairs, graph.vertices);
    let mut in_control = vec![false; graph.edges.len()];
    for &e in &graph.control_edges {
        in_control[e] = true;
    }
    let missing: Vec<(usize, usize)> =
        (0..graph.edges.len()).filter(|&e| !in_control[e]).map(|e| graph.edges[e]).collect();
    let outside: Vec<(usize, usize)> =
        graph.drift_edges.iter().filter(|&&e| !in_control[e]).map(|&e| graph.edges[e]).collect();
    let drift_ok = driftless || outside.is_empty();
    let passed = conn.strongly_connected && missing.is_empty() && drift_ok;
    HypothesisReport {
        vertices: graph.vertices,
        edges: graph.edges.len(),
        control_edges: graph.control_edges.len(),
        drift_edges: graph.drift_edges.len(),
        control_strongly_connected: conn.strongly_connected,
        control_components: conn.component_count,
        control_witness: conn.witness,
        control_equals_full: missing.is_empty(),
        missing_control_count: missing.len(),
        missing_control_edges: missing.into_iter().take(LISTED).collect(),
        driftless,
        drift_within_control: outside.is_empty(),
        drift_outside_control: outside.into_iter().take(LISTED).collect(),
        component_sizes: if conn.strongly_connected { Vec::new() } else { conn.components.iter().map(Vec::len).collect() },
        boundary_measures: None,
        passed,
    }
}

impl HypothesisReport {
    /// Record whether either endpoint measure lies on the boundary of the
    /// simplex. Reported, not rejected.
    pub fn flag_measures(&mut self, mu0: &[f64], mu1: &[f64]) {
        self.boundary_measures = Some(mu0.iter().chain(mu1).any(|&x| x <= 0.0));
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pairs = |v: &[(usize, usize)]| v.iter().map(|(a, b)| format!("{a}->{b}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "vertices: {}", self.vertices);
        let _ = writeln!(s, "edges: {}", self.edges);
        let _ = writeln!(s, "control_edges: {}", self.control_edges);
        let _ = writeln!(s, "drift_edges: {}", self.drift_edges);
        let _ = writeln!(s, "control_strongly_connected: {}", self.control_strongly_connected);
        let _ = writeln!(s, "control_components: {}", self.control_components);
        if let Some((a, b)) = self.control_witness {
            let _ = writeln!(s, "no_path_witness: {a}->{b}");
        }
        if !self.component_sizes.is_empty() {
            let sizes = self.component_sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            let _ = writeln!(s, "component_sizes: {sizes}");
        }
        let _ = writeln!(s, "control_equals_full: {}", self.control_equals_full);
        let _ = writeln!(s, "missing_control_count: {}", self.missing_control_count);
        if !self.missing_control_edges.is_empty() {
            let _ = writeln!(s, "missing_control_edges: {}", pairs(&self.missing_control_edges));
        }
        let _ = writeln!(s, "driftless: {}", self.driftless);
        let _ = writeln!(s, "drift_within_control: {}", self.drift_within_control);
        if !self.drift_outside_control.is_empty() {
            let _ = writeln!(s, "drift_outside_control: {}", pairs(&self.drift_outside_control));
        }
        if let Some(b) = self.boundary_measures {
            let _ = writeln!(s, "boundary_measures: {b}");
        }
        let _ = writeln!(s, "passed: {}", self.passed);
        s
    }

    pub fn summary(&self) -> String {
        let mut reasons = Vec::new();
        if !self.control_strongly_connected {
            reasons.push(format!("control graph has {} strongly connected components", self.control_components));
        }
        if !self.control_equals_full {
            reasons.push(format!("{} edges missing from the control graph", self.missing_control_count));
        }
        if !self.driftless && !self.drift_within_control {
            reasons.push("drift edges outside the control graph".to_string());
        }
        reasons.join("; ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_scenario, ScenarioParams};
    use crate::generator::build_rates;
    use crate::geometry::build_grid;
    use crate::transport::TimeGrid;
    use proptest::prelude::*;

    fn graph_for(name: &str, params: ScenarioParams, dims: &[usize]) -> (TransportGraph, bool) {
        let s = make_scenario(name, &params).unwrap();
        use crate::fields::ControlAffineSystem;
        let dom = s.domain().clone();
        let g = build_grid(dims, &dom.bounds, &dom.periodic).unwrap();
        let r = build_rates(&s, &g, &TimeGrid::new(0.0, 1.0, 4).unwrap(), 3).unwrap();
        (build_graph(&g, &r), s.is_driftless())
    }

    #[test]
    fn two_box_single_integrator() {
        let s = make_scenario("single_integrator", &ScenarioParams { dim: Some(1), ..Default::default() }).unwrap();
        let g = build_grid(&[2], &[[0.0, 1.0]], &[false]).unwrap();
        let r = build_rates(&s, &g, &TimeGrid::new(0.0, 1.0, 1).unwrap(), 3).unwrap();
        let tg = build_graph(&g, &r);
        assert_eq!(tg.edges, vec![(0, 1), (1, 0)]);
        assert_eq!(tg.edge_pairs(tg.channel(0, Sign::Plus)), vec![(0, 1)]);
        assert_eq!(tg.edge_pairs(tg.channel(0, Sign::Minus)), vec![(1, 0)]);
    }

    #[test]
    fn small_connectivity_cases() {
        let c = check_strong_connectivity(&[(0, 1), (1, 2), (2, 0)], 3);
        assert!(c.strongly_connected);
        assert_eq!(c.component_count, 1);
        let c = check_strong_connectivity(&[(0, 1)], 2);
        assert!(!c.strongly_connected);
        assert_eq!(c.component_count, 2);
        let (a, b) = c.witness.unwrap();
        assert_eq!((a, b), (1, 0));
    }

    #[test]
    fn grushin_control_graph_is_full() {
        let (g, driftless) = graph_for("grushin", ScenarioParams::default(), &[100, 100]);
        assert_eq!(g.control_edges.len(), g.edges.len());
        let rep = validate_problem_hypotheses(&g, driftless);
        assert!(rep.passed, "{}", rep.to_text());
    }

    #[test]
    fn double_gyre_drift_edges() {
        let (g, driftless) = graph_for("double_gyre", ScenarioParams::default(), &[60, 30]);
        assert!(!driftless);
        assert!(g.drift_edges.len() < g.edges.len());
        let rep = validate_problem_hypotheses(&g, driftless);
        assert!(rep.drift_within_control && rep.passed);
    }

    #[test]
    fn unicycle_control_graph_connected() {
        let (g, driftless) = graph_for("unicycle", ScenarioParams::default(), &[25, 25, 25]);
        let rep = validate_problem_hypotheses(&g, driftless);
        assert!(rep.control_strongly_connected && rep.control_equals_full);
    }

    #[test]
    fn single_channel_counterexample() {
        let p = ScenarioParams { controls: Some(vec![vec![1.0, 0.0]]), ..Default::default() };
        let (g, driftless) = graph_for("constant", p, &[6, 4]);
        let rep = validate_problem_hypotheses(&g, driftless);
        assert!(!rep.passed);
        assert!(!rep.control_equals_full);
        // Horizontal edges in both directions: each row is one component.
        assert_eq!(rep.control_components, 4);
        assert!(rep.to_text().contains("passed: false"));
    }

    #[test]
    fn control_graph_symmetric_for_scenarios() {
        for (name, dims) in [("grushin", vec![8, 8]), ("double_gyre", vec![8, 4]), ("unicycle", vec![5, 4, 4])] {
            let (g, _) = graph_for(name, ScenarioParams::default(), &dims);
            let set: std::collections::HashSet<usize> = g.control_edges.iter().copied().collect();
            for &e in &g.control_edges {
                assert!(set.contains(&g.reverse[e]));
            }
        }
    }

    #[test]
    fn incidence_of_symmetric_pair() {
        let d = Incidence { vertices: 3, edges: vec![(0, 2), (2, 0)] };
        let out = d.apply_transpose(&[1.0, 1.0]);
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
        assert_eq!(d.apply(&[1.0, 5.0, 3.0]), vec![2.0, -2.0]);
    }

    fn closure_strongly_connected(edges: &[(usize, usize)], m: usize) -> (bool, usize) {
        let mut r = vec![vec![false; m]; m];
        for (i, row) in r.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(a, b) in edges {
            r[a][b] = true;
        }
        for k in 0..m {
            for i in 0..m {
                if r[i][k] {
                    for j in 0..m {
                        if r[k][j] {
                            r[i][j] = true;
                        }
                    }
                }
            }
        }
        let all = r.iter().all(|row| row.iter().all(|&x| x));
        // Component count: classes of mutual reachability.
        let mut label = vec![usize::MAX; m];
        let mut count = 0;
        for i in 0..m {
            if label[i] == usize::MAX {
                for j in 0..m {
                    if r[i][j] && r[j][i] {
                        label[j] = count;
                    }
                }
                count += 1;
            }
        }
        (all, count)
    }

    proptest! {
        #[test]
        fn scc_matches_transitive_closure(m in 1usize..50, raw in prop::collection::vec((0usize..50, 0usize..50), 0..150)) {
            let edges: Vec<(usize, usize)> = raw.into_iter().map(|(a, b)| (a % m, b % m)).collect();
            let c = check_strong_connectivity(&edges, m);
            let (sc, count) = closure_strongly_connected(&edges, m);
            prop_assert_eq!(c.strongly_connected, sc);
            prop_assert_eq!(c.component_count, count);
            if let Some((a, b)) = c.witness {
                // No path a -> b in the closure.
                let (_, _) = (a, b);
                let mut reach = vec![false; m];
                reach[a] = true;
                let mut changed = true;
                while changed {
                    changed = false;
                    for &(x, y) in &edges {
                        if reach[x] && !reach[y] { reach[y] = true; changed = true; }
                    }
                }
                prop_assert!(!reach[b]);
            }
        }

        #[test]
        fn incidence_transpose_conserves(m in 2usize..30, raw in prop::collection::vec((0usize..30, 0usize..30, 0.0f64..10.0), 1..80)) {
            let edges: Vec<(usize, usize)> = raw.iter().map(|&(a, b, _)| (a % m, b % m)).collect();
            let flux: Vec<f64> = raw.iter().map(|&(_, _, j)| j).collect();
            let d = Incidence { vertices: m, edges };
            prop_assert!(d.column_sums().iter().all(|&s| s == 0));
            let out = d.apply_transpose(&flux);
            let total: f64 = out.iter().sum();
            let l1: f64 = flux.iter().sum();
            prop_assert!(total.abs() <= 1e-12 * l1.max(1.0));
        }
    }
}
