//! Time-varying weighted digraphs: periodic schedules, their validators and
//! the one-round mixing step.
//!
//! Convention: `weight(i, j) > 0` means agent `i` listens to agent `j`, i.e.
//! information flows along the edge `j → i`.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::par::{for_each_row, Execution};
use crate::state::StateMatrix;
use crate::validation::ValidationReport;

/// Default tolerance for row and column sums.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    agents: usize,
    weights: Vec<f64>,
    /// Positive entries of each row in ascending column order.
    support: Vec<Vec<(usize, f64)>>,
}

impl WeightedDigraph {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let agents = rows.len();
        if agents == 0 {
            return Err(Error::Empty("weight matrix"));
        }
        let mut weights = Vec::with_capacity(agents * agents);
        for row in rows {
            ensure_len("weight matrix row", agents, row.len())?;
            weights.extend_from_slice(row);
        }
        ensure_finite("weight matrix", &weights)?;
        if let Some(idx) = weights.iter().position(|&w| w < 0.0) {
            return Err(Error::invalid(format!(
                "negative weight at ({}, {})",
                idx / agents,
                idx % agents
            )));
        }
        let support = (0..agents)
            .map(|i| {
                (0..agents)
                    .filter_map(|j| {
                        let w = weights[i * agents + j];
                        (w > 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        Ok(WeightedDigraph {
            agents,
            weights,
            support,
        })
    }

    pub fn identity(agents: usize) -> Self {
        let rows: Vec<Vec<f64>> = (0..agents)
            .map(|i| (0..agents).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::from_rows(&rows).expect("identity is a valid weight matrix")
    }

    /// `(1/N)·𝟙𝟙ᵀ`
    pub fn uniform(agents: usize) -> Self {
        let w = 1.0 / agents as f64;
        Self::from_rows(&vec![vec![w; agents]; agents]).expect("uniform is a valid weight matrix")
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.agents + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks(self.agents).map(<[f64]>::to_vec).collect()
    }

    /// In-neighbours of `i` (including `i` itself when `a_ii > 0`) with weights.
    pub fn in_neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.support[i]
    }
}

/// Periodic schedule `A_k = graphs[k mod P]` with its claimed connectivity
/// window `Q` and weight floor.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    graphs: Vec<WeightedDigraph>,
    window: usize,
    weight_floor: f64,
}

impl GraphSchedule {
    pub fn new(graphs: Vec<WeightedDigraph>, window: usize, weight_floor: f64) -> Result<Self> {
        let first = graphs.first().ok_or(Error::Empty("graph schedule"))?;
        if let Some(t) = graphs.iter().position(|g| g.agents != first.agents) {
            return Err(Error::invalid(format!("graph {t} has a different agent count")));
        }
        if window == 0 {
            return Err(Error::invalid("connectivity window must be at least 1"));
        }
        if !(weight_floor > 0.0 && weight_floor < 1.0) {
            return Err(Error::invalid(format!(
                "weight floor must lie in (0, 1), got {weight_floor}"
            )));
        }
        Ok(GraphSchedule {
            graphs,
            window,
            weight_floor,
        })
    }

    pub fn at(&self, k: u64) -> &WeightedDigraph {
        &self.graphs[(k % self.graphs.len() as u64) as usize]
    }

    pub fn period(&self) -> usize {
        self.graphs.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn weight_floor(&self) -> f64 {
        self.weight_floor
    }

    pub fn agents(&self) -> usize {
        self.graphs[0].agents
    }

    pub fn graphs(&self) -> &[WeightedDigraph] {
        &self.graphs
    }

    /// Same graphs under a different claimed window.
    pub fn with_window(&self, window: usize) -> Result<Self> {
        Self::new(self.graphs.clone(), window, self.weight_floor)
    }
}

pub fn schedule_at(schedule: &GraphSchedule, k: u64) -> &WeightedDigraph {
    schedule.at(k)
}

pub fn check_doubly_stochastic(g: &WeightedDigraph, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::new("doubly stochastic weights");
    let n = g.agents;
    for i in 0..n {
        for j in 0..n {
            if g.weight(i, j) < 0.0 {
                report.fail(format!("negative entry ({i}, {j}) = {}", g.weight(i, j)));
            }
        }
    }
    for i in 0..n {
        let sum: f64 = (0..n).map(|j| g.weight(i, j)).sum();
        if (sum - 1.0).abs() > tol {
            report.fail(format!("row {i} sums to {sum}"));
        }
    }
    for j in 0..n {
        let sum: f64 = (0..n).map(|i| g.weight(i, j)).sum();
        if (sum - 1.0).abs() > tol {
            report.fail(format!("column {j} sums to {sum}"));
        }
    }
    report
}

/// Doubly stochastic check over every graph of a schedule.
pub fn check_schedule_doubly_stochastic(s: &GraphSchedule, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::new("doubly stochastic weights");
    for (t, g) in s.graphs.iter().enumerate() {
        let sub = check_doubly_stochastic(g, tol);
        for finding in sub.findings {
            report.fail(format!("graph {t}: {finding}"));
        }
    }
    report
}

/// Every diagonal entry and every positive entry must exceed the weight floor.
pub fn check_weights_rule(s: &GraphSchedule) -> ValidationReport {
    let mut report = ValidationReport::new(format!("weight floor {}", s.weight_floor));
    let floor = s.weight_floor;
    for (t, g) in s.graphs.iter().enumerate() {
        for i in 0..g.agents {
            for j in 0..g.agents {
                let w = g.weight(i, j);
                if (i == j || w > 0.0) && w <= floor {
                    report.fail(format!("graph {t}: entry ({i}, {j}) = {w} does not exceed {floor}"));
                }
            }
        }
    }
    report
}

/// Adjacency of the union of the graphs used in rounds `start+1 ..= start+window`.
pub fn window_union(s: &GraphSchedule, start: usize, window: usize) -> Vec<Vec<bool>> {
    let n = s.agents();
    let mut adj = vec![vec![false; n]; n];
    for l in 1..=window {
        let g = s.at((start + l) as u64);
        for (i, row) in g.support.iter().enumerate() {
            for &(j, _) in row {
                if i != j {
                    // edge j → i
                    adj[j][i] = true;
                }
            }
        }
    }
    adj
}

/// Number of strongly connected components of a digraph given as adjacency.
pub fn count_strong_components(adj: &[Vec<bool>]) -> usize {
    let n = adj.len();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (from, row) in adj.iter().enumerate() {
        for (to, &present) in row.iter().enumerate() {
            if present {
                graph.add_edge(nodes[from], nodes[to], ());
            }
        }
    }
    tarjan_scc(&graph).len()
}

/// For every window offset in one period, the union over the claimed window
/// must be strongly connected. Periodicity makes the `P` offsets exhaustive.
pub fn check_q_strong_connectivity(s: &GraphSchedule) -> ValidationReport {
    let mut report = ValidationReport::new(format!("strong connectivity over windows of {}", s.window));
    for start in 0..s.period() {
        let components = count_strong_components(&window_union(s, start, s.window));
        if components != 1 {
            report.fail(format!(
                "window starting after round {start} has {components} strongly connected components"
            ));
        }
    }
    report
}

/// Builds a periodic schedule from overlapping directed cycles.
///
/// Agents are split into `period` contiguous chunks (earlier chunks take the
/// remainder). Graph `t` is `(1 − w)I + w·S_t` where `S_t` is the cyclic
/// permutation through chunk `t` and the first agent of chunk `t + 1`; agents
/// outside the cycle are fixed points. Each `S_t` is a permutation matrix, so
/// every graph is exactly doubly stochastic, and consecutive cycles share an
/// agent, so the union over one full period is strongly connected. With one
/// chunk the single graph is the full directed ring.
pub fn ring_schedule(agents: usize, period: usize, w: f64) -> Result<GraphSchedule> {
    if agents < 2 {
        return Err(Error::invalid(format!("ring schedule needs at least 2 agents, got {agents}")));
    }
    if period == 0 || period > agents {
        return Err(Error::invalid(format!(
            "ring schedule period must lie in [1, {agents}], got {period}"
        )));
    }
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::invalid(format!("mixing weight must lie in (0, 1), got {w}")));
    }
    let base = agents / period;
    let extra = agents % period;
    let mut starts = Vec::with_capacity(period + 1);
    let mut at = 0;
    for t in 0..period {
        starts.push(at);
        at += base + usize::from(t < extra);
    }
    starts.push(agents);

    let graphs = (0..period)
        .map(|t| {
            let mut cycle: Vec<usize> = (starts[t]..starts[t + 1]).collect();
            if period > 1 {
                cycle.push(starts[(t + 1) % period]);
            }
            let mut rows = vec![vec![0.0; agents]; agents];
            for (i, row) in rows.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            if cycle.len() >= 2 {
                for (pos, &to) in cycle.iter().enumerate() {
                    let from = cycle[(pos + cycle.len() - 1) % cycle.len()];
                    rows[to][to] = 1.0 - w;
                    rows[to][from] += w;
                }
            }
            WeightedDigraph::from_rows(&rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let floor = w.min(1.0 - w) * (1.0 - 1e-6);
    GraphSchedule::new(graphs, period, floor)
}

/// `X̂ = A·X`.
pub fn mix(g: &WeightedDigraph, states: &StateMatrix) -> Result<StateMatrix> {
    ensure_len("mixing state rows", g.agents, states.agents())?;
    let mut out = StateMatrix::zeros(states.agents(), states.dim());
    mix_into(g, states, &mut out, Execution::Sequential);
    Ok(out)
}

/// Row `i` of `out` becomes `Σ_j a_ij x_j`, summed in ascending `j` starting
/// from the first positive term, so that a unit weight reproduces `x_j` exactly.
pub(crate) fn mix_into(g: &WeightedDigraph, states: &StateMatrix, out: &mut StateMatrix, exec: Execution) {
    let dim = states.dim();
    for_each_row(exec, out.as_mut_slice(), dim, |i, row| {
        let neighbors = &g.support[i];
        match neighbors.split_first() {
            None => row.fill(0.0),
            Some((&(j0, w0), rest)) => {
                for (r, x) in row.iter_mut().zip(states.row(j0)) {
                    *r = w0 * x;
                }
                for &(j, w) in rest {
                    for (r, x) in row.iter_mut().zip(states.row(j)) {
                        *r += w * x;
                    }
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle_with_self_loops(n: usize) -> WeightedDigraph {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = 0.5;
                r[(i + n - 1) % n] += 0.5;
                r
            })
            .collect();
        WeightedDigraph::from_rows(&rows).unwrap()
    }

    #[test]
    fn schedule_indexing_is_cyclic() {
        let s = ring_schedule(6, 2, 0.5).unwrap();
        assert_eq!(schedule_at(&s, 0), &s.graphs()[0]);
        assert_eq!(schedule_at(&s, 1), &s.graphs()[1]);
        assert_eq!(schedule_at(&s, 2), &s.graphs()[0]);

        let one = ring_schedule(4, 1, 0.5).unwrap();
        assert_eq!(one.at(0), one.at(17));

        let ten = ring_schedule(100, 10, 0.5).unwrap();
        assert_eq!(ten.at(23), &ten.graphs()[3]);
    }

    #[test]
    fn doubly_stochastic_examples() {
        assert!(check_doubly_stochastic(&WeightedDigraph::identity(4), 1e-12).passed);
        assert!(check_doubly_stochastic(&WeightedDigraph::uniform(5), 1e-12).passed);
        let row_only = WeightedDigraph::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let report = check_doubly_stochastic(&row_only, 1e-12);
        assert!(!report.passed);
        assert!(report.findings.iter().any(|f| f.contains("column 0 sums to 1.5")));
        assert!(report.findings.iter().any(|f| f.contains("column 1 sums to 0.5")));
    }

    #[test]
    fn weights_rule_examples() {
        let g = cycle_with_self_loops(5);
        let s = GraphSchedule::new(vec![g.clone()], 1, 0.4).unwrap();
        assert!(check_weights_rule(&s).passed);
        let s = GraphSchedule::new(vec![g], 1, 0.6).unwrap();
        assert!(!check_weights_rule(&s).passed);
        let s = GraphSchedule::new(vec![WeightedDigraph::identity(3)], 1, 0.5).unwrap();
        assert!(check_weights_rule(&s).passed);
    }

    #[test]
    fn connectivity_examples() {
        let s = GraphSchedule::new(vec![cycle_with_self_loops(6)], 1, 0.4).unwrap();
        assert!(check_q_strong_connectivity(&s).passed);

        let s = ring_schedule(6, 2, 0.5).unwrap();
        assert_eq!(s.window(), 2);
        assert!(check_q_strong_connectivity(&s).passed);
        assert!(!check_q_strong_connectivity(&s.with_window(1).unwrap()).passed);

        let s = GraphSchedule::new(vec![WeightedDigraph::identity(4); 3], 3, 0.5).unwrap();
        assert!(!check_q_strong_connectivity(&s).passed);
    }

    #[test]
    fn two_agent_ring_is_uniform() {
        let s = ring_schedule(2, 1, 0.5).unwrap();
        assert_eq!(s.at(0).to_rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!(check_doubly_stochastic(s.at(0), 1e-12).passed);
        assert!(check_q_strong_connectivity(&s).passed);
    }

    #[test]
    fn ring_schedule_rejects_bad_parameters() {
        assert!(ring_schedule(1, 1, 0.5).is_err());
        assert!(ring_schedule(4, 0, 0.5).is_err());
        assert!(ring_schedule(4, 5, 0.5).is_err());
        assert!(ring_schedule(4, 2, 1.0).is_err());
        assert!(ring_schedule(4, 2, 0.0).is_err());
    }

    #[test]
    fn mix_examples() {
        let x = StateMatrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5], vec![0.0, 4.0]]).unwrap();
        assert_eq!(mix(&WeightedDigraph::identity(3), &x).unwrap(), x);

        let avg = mix(&WeightedDigraph::uniform(3), &x).unwrap();
        for row in avg.rows() {
            assert!((row[0] - 4.0 / 3.0).abs() < 1e-15);
            assert!((row[1] - 2.5 / 3.0).abs() < 1e-15);
        }

        let g = WeightedDigraph::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let x = StateMatrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(mix(&g, &x).unwrap().to_rows(), vec![vec![1.0], vec![1.0]]);

        assert!(mix(&WeightedDigraph::identity(2), &StateMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn constructors_validate() {
        assert!(WeightedDigraph::from_rows(&[vec![1.0, -0.1], vec![0.0, 1.0]]).is_err());
        assert!(WeightedDigraph::from_rows(&[vec![1.0], vec![0.0, 1.0]]).is_err());
        assert!(GraphSchedule::new(vec![], 1, 0.5).is_err());
        let g = WeightedDigraph::identity(2);
        assert!(GraphSchedule::new(vec![g.clone()], 0, 0.5).is_err());
        assert!(GraphSchedule::new(vec![g.clone()], 1, 1.0).is_err());
        assert!(GraphSchedule::new(vec![g, WeightedDigraph::identity(3)], 1, 0.5).is_err());
    }
}
