//! Yen's k-shortest loop-free paths over the undirected link graph.
//!
//! Paths are ordered by total length, then by node-id sequence, then by link
//! ids (parallel links). The same total order drives both the spur-path search
//! and the candidate heap, so ties resolve identically on every run.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

/// Adjacency view used by the search: `adj[n]` lists `(neighbour, link, length_m)`.
pub(crate) struct Graph {
    pub adj: Vec<Vec<(usize, u32, u64)>>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct RawPath {
    pub cost: u64,
    pub nodes: Vec<usize>,
    pub links: Vec<u32>,
}

/// Least path from `src` to `dst` under the (cost, nodes, links) order,
/// avoiding `blocked_nodes` and `blocked_links`.
fn least_path(
    g: &Graph,
    src: usize,
    dst: usize,
    blocked_nodes: &HashSet<usize>,
    blocked_links: &HashSet<u32>,
) -> Option<RawPath> {
    let mut settled = vec![false; g.adj.len()];
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(RawPath { cost: 0, nodes: vec![src], links: vec![] }));
    while let Some(Reverse(label)) = heap.pop() {
        let at = *label.nodes.last().unwrap();
        if settled[at] {
            continue;
        }
        settled[at] = true;
        if at == dst {
            return Some(label);
        }
        for &(next, link, len) in &g.adj[at] {
            if settled[next] || blocked_nodes.contains(&next) || blocked_links.contains(&link) {
                continue;
            }
            if label.nodes.contains(&next) {
                continue;
            }
            let mut nodes = label.nodes.clone();
            nodes.push(next);
            let mut links = label.links.clone();
            links.push(link);
            heap.push(Reverse(RawPath { cost: label.cost + len, nodes, links }));
        }
    }
    None
}

pub(crate) fn yen(g: &Graph, src: usize, dst: usize, k: usize) -> Vec<RawPath> {
    let mut found: Vec<RawPath> = Vec::new();
    if k == 0 || src == dst {
        return found;
    }
    let Some(first) = least_path(g, src, dst, &HashSet::new(), &HashSet::new()) else {
        return found;
    };
    found.push(first);
    let link_len = |l: u32| -> u64 {
        g.adj.iter().flat_map(|v| v.iter()).find(|(_, id, _)| *id == l).map(|(_, _, len)| *len).unwrap()
    };
    let mut candidates: BTreeSet<RawPath> = BTreeSet::new();

    while found.len() < k {
        let last = found.last().unwrap().clone();
        for i in 0..last.nodes.len() - 1 {
            let spur = last.nodes[i];
            let root_nodes = &last.nodes[..=i];
            let root_links = &last.links[..i];

            let blocked_links: HashSet<u32> = found
                .iter()
                .filter(|p| p.nodes.len() > i + 1 && &p.nodes[..=i] == root_nodes && &p.links[..i] == root_links)
                .map(|p| p.links[i])
                .collect();
            let blocked_nodes: HashSet<usize> = root_nodes[..i].iter().copied().collect();

            if let Some(spur_path) = least_path(g, spur, dst, &blocked_nodes, &blocked_links) {
                let root_cost: u64 = root_links.iter().map(|&l| link_len(l)).sum();
                let mut nodes = root_nodes.to_vec();
                nodes.extend_from_slice(&spur_path.nodes[1..]);
                let mut links = root_links.to_vec();
                links.extend_from_slice(&spur_path.links);
                let total = RawPath { cost: root_cost + spur_path.cost, nodes, links };
                if !found.contains(&total) {
                    candidates.insert(total);
                }
            }
        }
        match candidates.pop_first() {
            Some(next) => found.push(next),
            None => break,
        }
    }
    found
}
