//! Directed coupling graph between agents.
//!
//! An edge `(i, j)` means agent `j`'s state enters agent `i`'s drift. Every
//! agent carries a self-loop. Indices are 0-based here; configuration files and
//! user-facing messages are 1-based.

use std::collections::BTreeSet;

use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingGraph {
    n: usize,
    // Sorted adjacency, computed once at construction.
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

impl CouplingGraph {
    /// Builds a graph from 0-based edges. Self-loops are inserted for every
    /// agent and duplicates collapse.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::EmptyGraph);
        }
        let mut set: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(ModelError::AgentOutOfRange { agent: i.max(j) + 1, n });
            }
            set.insert((i, j));
        }
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for &(i, j) in &set {
            incoming[i].push(j);
            outgoing[j].push(i);
        }
        for list in incoming.iter_mut().chain(outgoing.iter_mut()) {
            list.sort_unstable();
        }
        Ok(Self { n, incoming, outgoing })
    }

    /// Edges given with 1-based agent indices, as they appear in scenario files.
    pub fn from_one_based(n: usize, edges: &[(usize, usize)]) -> Result<Self, ModelError> {
        let mut zero_based = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i == 0 || j == 0 || i > n || j > n {
                return Err(ModelError::AgentOutOfRange { agent: if i == 0 || i > n { i } else { j }, n });
            }
            zero_based.push((i - 1, j - 1));
        }
        Self::new(n, zero_based)
    }

    pub fn complete(n: usize) -> Result<Self, ModelError> {
        Self::new(n, (0..n).flat_map(|i| (0..n).map(move |j| (i, j))))
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.incoming.iter().enumerate().flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && self.incoming[i].binary_search(&j).is_ok()
    }

    fn check(&self, i: usize) -> Result<(), ModelError> {
        if i < self.n {
            Ok(())
        } else {
            Err(ModelError::AgentOutOfRange { agent: i + 1, n: self.n })
        }
    }

    /// Agents whose state enters agent `i`'s drift (N_i⁺). Contains `i`.
    pub fn in_neighbors(&self, i: usize) -> Result<&[usize], ModelError> {
        self.check(i)?;
        Ok(&self.incoming[i])
    }

    /// Agents whose drift depends on agent `i` (N_i⁻). Contains `i`.
    pub fn out_neighbors(&self, i: usize) -> Result<&[usize], ModelError> {
        self.check(i)?;
        Ok(&self.outgoing[i])
    }

    /// N_i = N_i⁺ ∪ N_i⁻, sorted.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>, ModelError> {
        self.check(i)?;
        Ok(merge_sorted(&self.incoming[i], &self.outgoing[i]))
    }

    /// Union of N_j over all j ∈ N_i: the agents `i` must exchange messages with.
    pub fn two_hop(&self, i: usize) -> Result<Vec<usize>, ModelError> {
        let mut out = BTreeSet::new();
        for j in self.neighbors(i)? {
            out.extend(self.neighbors(j)?);
        }
        Ok(out.into_iter().collect())
    }
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut set: BTreeSet<usize> = a.iter().copied().collect();
    set.extend(b.iter().copied());
    set.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn one(v: &[usize]) -> Vec<usize> {
        v.iter().map(|i| i + 1).collect()
    }

    fn chain3() -> CouplingGraph {
        CouplingGraph::from_one_based(3, &[(1, 1), (2, 2), (3, 3), (1, 2), (2, 1), (2, 3), (3, 2)]).unwrap()
    }

    // Depth-2 BFS over the undirected neighbor relation.
    fn bfs_two_hop(g: &CouplingGraph, start: usize) -> Vec<usize> {
        let mut depth = vec![usize::MAX; g.agent_count()];
        depth[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            if depth[v] == 2 {
                continue;
            }
            for (a, b) in g.edges() {
                let w = if a == v { b } else if b == v { a } else { continue };
                if depth[w] == usize::MAX {
                    depth[w] = depth[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        (0..g.agent_count()).filter(|&v| depth[v] <= 2).collect()
    }

    #[test]
    fn complete_pair() {
        let g = CouplingGraph::complete(2).unwrap();
        assert_eq!(one(g.in_neighbors(0).unwrap()), vec![1, 2]);
        assert_eq!(one(g.out_neighbors(1).unwrap()), vec![1, 2]);
        assert_eq!(one(&g.two_hop(0).unwrap()), vec![1, 2]);
    }

    #[test]
    fn singleton() {
        let g = CouplingGraph::new(1, []).unwrap();
        assert_eq!(one(g.in_neighbors(0).unwrap()), vec![1]);
        assert_eq!(one(g.out_neighbors(0).unwrap()), vec![1]);
    }

    #[test]
    fn chain() {
        let g = chain3();
        assert_eq!(one(g.in_neighbors(1).unwrap()), vec![1, 2, 3]);
        assert_eq!(one(g.out_neighbors(2).unwrap()), vec![2, 3]);
        assert_eq!(one(&g.two_hop(0).unwrap()), vec![1, 2, 3]);
        assert_eq!(g.two_hop(0).unwrap(), bfs_two_hop(&g, 0));
    }

    #[test]
    fn rings() {
        let bidir: Vec<_> = (0..5).flat_map(|i| [(i, (i + 1) % 5), ((i + 1) % 5, i)]).collect();
        let g = CouplingGraph::new(5, bidir).unwrap();
        assert_eq!(one(&g.two_hop(0).unwrap()), vec![1, 2, 3, 4, 5]);
        let g = CouplingGraph::new(6, (0..6).map(|i| (i, (i + 1) % 6))).unwrap();
        assert_eq!(g.two_hop(0).unwrap(), bfs_two_hop(&g, 0));
    }

    #[test]
    fn out_of_range() {
        let g = chain3();
        assert!(matches!(g.in_neighbors(3), Err(ModelError::AgentOutOfRange { agent: 4, n: 3 })));
        assert!(CouplingGraph::from_one_based(2, &[(0, 1)]).is_err());
        assert!(CouplingGraph::from_one_based(2, &[(1, 3)]).is_err());
    }

    proptest! {
        #[test]
        fn neighbor_duality(n in 1usize..7, raw in proptest::collection::vec((0usize..7, 0usize..7), 0..20)) {
            let g = CouplingGraph::new(n, raw.into_iter().filter(|&(i, j)| i < n && j < n)).unwrap();
            for i in 0..n {
                let inn = g.in_neighbors(i).unwrap();
                let out = g.out_neighbors(i).unwrap();
                prop_assert!(inn.contains(&i) && out.contains(&i));
                for j in 0..n {
                    prop_assert_eq!(inn.contains(&j), g.out_neighbors(j).unwrap().contains(&i));
                }
                let hop = g.two_hop(i).unwrap();
                prop_assert!(inn.iter().chain(out).all(|v| hop.contains(v)));
                prop_assert_eq!(hop, bfs_two_hop(&g, i));
            }
        }
    }
}
