//! Recurrence structure of the unperturbed (`eps = 0`) chain.

use std::collections::VecDeque;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use super::chain::ChainModel;

/// A strongly connected component of the support graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommunicatingClass {
    pub states: Vec<usize>,
    /// No positive-probability transition leaves the class.
    pub closed: bool,
}

/// Strongly connected components of `{(i, j) : P[i][j] > 0}`, each with
/// sorted members.
pub fn communicating_classes(transitions: &[Vec<f64>]) -> Vec<CommunicatingClass> {
    let n = transitions.len();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (i, row) in transitions.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut component = vec![0usize; n];
    let sccs = tarjan_scc(&graph);
    for (c, scc) in sccs.iter().enumerate() {
        for v in scc {
            component[v.index()] = c;
        }
    }
    sccs.into_iter()
        .enumerate()
        .map(|(c, scc)| {
            let mut states: Vec<usize> = scc.into_iter().map(|v| v.index()).collect();
            states.sort_unstable();
            let closed = states
                .iter()
                .all(|&i| transitions[i].iter().enumerate().all(|(j, &p)| p == 0.0 || component[j] == c));
            CommunicatingClass { states, closed }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassificationReport {
    pub absorbing_states: Vec<usize>,
    /// Closed classes with more than one state.
    pub closed_classes: Vec<Vec<usize>>,
    pub transient_states: Vec<usize>,
    /// Every all-content joint state is absorbing.
    pub all_content_absorbing: bool,
    /// The all-discontent states form a closed set holding exactly one
    /// closed class, which every all-discontent state therefore reaches.
    pub all_discontent_closed: bool,
    /// Every mixed-mood state is transient and is absorbed into the
    /// all-discontent set with probability one.
    pub mixed_transient: bool,
}

/// Classifies the states of a chain built at `eps = 0` by reachability on
/// its support graph.
pub fn classify_p0(chain: &ChainModel) -> ClassificationReport {
    let p = &chain.transitions;
    let n = chain.len();
    let classes = communicating_classes(p);

    let mut absorbing_states = Vec::new();
    let mut closed_classes = Vec::new();
    let mut transient_states = Vec::new();
    let mut recurrent = vec![false; n];
    for c in &classes {
        if !c.closed {
            transient_states.extend(&c.states);
        } else {
            c.states.iter().for_each(|&i| recurrent[i] = true);
            if c.states.len() == 1 {
                absorbing_states.push(c.states[0]);
            } else {
                closed_classes.push(c.states.clone());
            }
        }
    }
    absorbing_states.sort_unstable();
    transient_states.sort_unstable();
    closed_classes.sort();

    let discontent: Vec<bool> = (0..n).map(|i| chain.all_discontent(i)).collect();
    let absorbing: Vec<bool> = {
        let mut v = vec![false; n];
        absorbing_states.iter().for_each(|&i| v[i] = true);
        v
    };

    let all_content_absorbing = (0..n).filter(|&i| chain.all_content(i)).all(|i| absorbing[i]);

    let z_d_closed = (0..n)
        .filter(|&i| discontent[i])
        .all(|i| p[i].iter().enumerate().all(|(j, &q)| q == 0.0 || discontent[j]));
    let closed_in_z_d = classes
        .iter()
        .filter(|c| c.closed && c.states.iter().all(|&i| discontent[i]))
        .count();
    let all_discontent_closed = z_d_closed && closed_in_z_d == 1;

    // States that can reach a closed class lying outside the discontent set.
    let escapes = backward_reachable(
        p,
        classes
            .iter()
            .filter(|c| c.closed && !c.states.iter().all(|&i| discontent[i]))
            .flat_map(|c| c.states.iter().copied()),
    );
    let mixed_transient = (0..n)
        .filter(|&i| !chain.all_content(i) && !discontent[i])
        .all(|i| !recurrent[i] && !escapes[i]);

    ClassificationReport {
        absorbing_states,
        closed_classes,
        transient_states,
        all_content_absorbing,
        all_discontent_closed,
        mixed_transient,
    }
}

fn backward_reachable(p: &[Vec<f64>], targets: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let n = p.len();
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for t in targets {
        if !seen[t] {
            seen[t] = true;
            queue.push_back(t);
        }
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if !seen[i] && p[i][j] > 0.0 {
                seen[i] = true;
                queue.push_back(i);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exploration::Estimates;
    use crate::matching::SyncSnapshot;
    use crate::model::AttackVector;
    use crate::oracle::chain::{build_chain, ChainParams};

    #[test]
    fn classes_of_small_matrix() {
        let p = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.6, 0.4], vec![0.0, 0.4, 0.6]];
        let mut classes = communicating_classes(&p);
        classes.sort_by_key(|c| c.states[0]);
        assert_eq!(classes[0], CommunicatingClass { states: vec![0], closed: false });
        assert_eq!(classes[1], CommunicatingClass { states: vec![1, 2], closed: true });
    }

    #[test]
    fn fixture_structure_under_both_snapshots() {
        let est = Estimates::from_rows(vec![vec![0.9, 0.2], vec![0.3, 0.8]]);
        for snapshot in [SyncSnapshot::PreUpdate, SyncSnapshot::PostUpdate] {
            let params = ChainParams { epsilon: 0.0, kappa: 3.0, beta: 2.0, sync_snapshot: snapshot };
            let chain = build_chain(&est, params, &[(AttackVector::none(2), 1.0)]).unwrap();
            let r = classify_p0(&chain);
            assert!(r.all_content_absorbing && r.all_discontent_closed && r.mixed_transient);
            let total = r.absorbing_states.len()
                + r.closed_classes.iter().map(Vec::len).sum::<usize>()
                + r.transient_states.len();
            assert_eq!(total, chain.len());
        }
    }
}
