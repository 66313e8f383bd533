use std::collections::{HashSet, VecDeque};

use super::MemoryError;

/// Directed graph over buffer indices built from anchor transitions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExplorationGraph {
    nodes: usize,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    edge_set: HashSet<(usize, usize)>,
    anchor: Option<usize>,
}

impl ExplorationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of buffer entries the graph knows about.
    pub fn node_count(&self) -> usize {
        self.nodes
    }

    /// Edges in insertion order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn anchor(&self) -> Option<usize> {
        self.anchor
    }

    /// Forgets the current anchor so the next one starts without an edge.
    pub fn clear_anchor(&mut self) {
        self.anchor = None;
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Grows the node set to `count` buffer entries.
    pub fn sync_nodes(&mut self, count: usize) {
        if count > self.nodes {
            self.nodes = count;
            self.adjacency.resize(count, Vec::new());
        }
    }

    fn check(&self, index: usize) -> Result<(), MemoryError> {
        if index < self.nodes {
            Ok(())
        } else {
            Err(MemoryError::InvalidIndex {
                index,
                len: self.nodes,
            })
        }
    }

    /// Adds `from → to`; self-loops and duplicates are ignored. Returns whether the edge is new.
    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<bool, MemoryError> {
        self.check(from)?;
        self.check(to)?;
        if from == to || !self.edge_set.insert((from, to)) {
            return Ok(false);
        }
        self.edges.push((from, to));
        self.adjacency[from].push(to);
        Ok(true)
    }

    /// Sets the anchor for a buffer of `buffer_len` entries, adding the edge
    /// from the previous anchor when it changes. Returns whether an edge was added.
    pub fn move_anchor(&mut self, anchor: usize, buffer_len: usize) -> Result<bool, MemoryError> {
        self.sync_nodes(buffer_len);
        self.check(anchor)?;
        let added = match self.anchor {
            Some(prev) if prev != anchor => self.add_edge(prev, anchor)?,
            _ => false,
        };
        self.anchor = Some(anchor);
        Ok(added)
    }

    /// Hop count of the shortest directed path, `None` when unreachable.
    pub fn shortest_path_len(&self, from: usize, to: usize) -> Result<Option<u32>, MemoryError> {
        self.check(from)?;
        self.check(to)?;
        if from == to {
            return Ok(Some(0));
        }
        let mut dist = vec![u32::MAX; self.nodes];
        dist[from] = 0;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == u32::MAX {
                    dist[v] = dist[u] + 1;
                    if v == to {
                        return Ok(Some(dist[v]));
                    }
                    queue.push_back(v);
                }
            }
        }
        Ok(None)
    }
}
