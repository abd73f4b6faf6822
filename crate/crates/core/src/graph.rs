//! Labeled directed multigraphs describing which switching sequences a
//! system may follow, together with their finite languages, product lifts
//! and closed-walk enumeration.
//!
//! Nodes are identified by index. Labels are 1-based and must cover
//! `1..=label_count` without gaps, so that label `k` indexes matrix `A_k`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    NoNodes,
    #[error("edge {edge}: node index {node} out of range (node count {node_count})")]
    NodeOutOfRange {
        edge: usize,
        node: usize,
        node_count: usize,
    },
    #[error("edge {edge}: label must be >= 1")]
    ZeroLabel { edge: usize },
    #[error("label {label} does not appear on any edge (labels must cover 1..={max})")]
    LabelGap { label: usize, max: usize },
    #[error("node {node} has no outgoing edge")]
    SinkNode { node: usize },
    #[error("duplicate edge ({from} -> {to}, label {label})")]
    DuplicateEdge { from: usize, to: usize, label: usize },
    #[error("word length must be >= 1")]
    ZeroLength,
}

/// A directed edge carrying a 1-based label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub label: usize,
}

/// A nonempty finite sequence of labels, read in traversal order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn new(labels: Vec<usize>) -> Result<Self, GraphError> {
        if labels.is_empty() {
            return Err(GraphError::ZeroLength);
        }
        if labels.contains(&0) {
            return Err(GraphError::ZeroLabel { edge: 0 });
        }
        Ok(Word(labels))
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        f.write_str(")")
    }
}

/// Labeled graph `(G, σ)` constraining the switching signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    node_count: usize,
    edges: Vec<Edge>,
    label_count: usize,
    out_edges: Vec<Vec<usize>>,
}

impl LabeledGraph {
    /// Builds a graph from `(source, target, label)` triples.
    ///
    /// Rejects out-of-range nodes, label gaps, duplicate triples and nodes
    /// without an outgoing edge.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize, usize)>,
    ) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::NoNodes);
        }
        let mut seen = BTreeSet::new();
        let mut list = Vec::new();
        for (i, (source, target, label)) in edges.into_iter().enumerate() {
            for node in [source, target] {
                if node >= node_count {
                    return Err(GraphError::NodeOutOfRange {
                        edge: i,
                        node,
                        node_count,
                    });
                }
            }
            if label == 0 {
                return Err(GraphError::ZeroLabel { edge: i });
            }
            if !seen.insert((source, target, label)) {
                return Err(GraphError::DuplicateEdge {
                    from: source,
                    to: target,
                    label,
                });
            }
            list.push(Edge {
                source,
                target,
                label,
            });
        }
        let label_count = list.iter().map(|e| e.label).max().unwrap_or(0);
        let present: BTreeSet<usize> = list.iter().map(|e| e.label).collect();
        if let Some(label) = (1..=label_count).find(|l| !present.contains(l)) {
            return Err(GraphError::LabelGap {
                label,
                max: label_count,
            });
        }
        let mut out_edges = vec![Vec::new(); node_count];
        for (id, e) in list.iter().enumerate() {
            out_edges[e.source].push(id);
        }
        if let Some(node) = out_edges.iter().position(Vec::is_empty) {
            return Err(GraphError::SinkNode { node });
        }
        Ok(LabeledGraph {
            node_count,
            edges: list,
            label_count,
            out_edges,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    /// Ids of the edges leaving `node`; never empty.
    pub fn outgoing(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    /// Visits every directed path of exactly `len` edges, reporting the
    /// edge ids along it.
    fn for_each_path(&self, len: usize, mut visit: impl FnMut(&[usize])) {
        let mut path = Vec::with_capacity(len);
        for start in 0..self.node_count {
            self.extend_paths(start, len, &mut path, &mut visit);
        }
    }

    fn extend_paths(
        &self,
        node: usize,
        remaining: usize,
        path: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if remaining == 0 {
            visit(path);
            return;
        }
        for &id in &self.out_edges[node] {
            path.push(id);
            self.extend_paths(self.edges[id].target, remaining - 1, path, visit);
            path.pop();
        }
    }

    fn word_of(&self, path: &[usize]) -> Word {
        Word(path.iter().map(|&id| self.edges[id].label).collect())
    }

    /// Distinct label sequences read along paths of `len` edges.
    pub fn language(&self, len: usize) -> Result<BTreeSet<Word>, GraphError> {
        if len == 0 {
            return Err(GraphError::ZeroLength);
        }
        let mut words = BTreeSet::new();
        self.for_each_path(len, |p| {
            words.insert(self.word_of(p));
        });
        Ok(words)
    }

    /// `|language(len)|`, counting words rather than paths.
    pub fn count_words(&self, len: usize) -> Result<usize, GraphError> {
        Ok(self.language(len)?.len())
    }

    /// Number of directed paths with `len` edges (with multiplicity).
    pub fn count_paths(&self, len: usize) -> usize {
        let mut count = 0;
        self.for_each_path(len, |_| count += 1);
        count
    }

    /// Whether `word` can be read along some path.
    pub fn accepts(&self, word: &Word) -> bool {
        let mut current: BTreeSet<usize> = (0..self.node_count).collect();
        for &label in word.labels() {
            current = current
                .iter()
                .flat_map(|&u| self.out_edges[u].iter())
                .map(|&id| &self.edges[id])
                .filter(|e| e.label == label)
                .map(|e| e.target)
                .collect();
            if current.is_empty() {
                return false;
            }
        }
        true
    }

    /// The `len`-product lift: one edge per realizable `(source, target, word)`.
    pub fn product_lift(&self, len: usize) -> Result<LiftedGraph, GraphError> {
        if len == 0 {
            return Err(GraphError::ZeroLength);
        }
        let mut found: BTreeMap<(usize, usize, Word), Vec<usize>> = BTreeMap::new();
        self.for_each_path(len, |p| {
            let source = self.edges[p[0]].source;
            let target = self.edges[p[p.len() - 1]].target;
            found
                .entry((source, target, self.word_of(p)))
                .or_insert_with(|| p.to_vec());
        });
        let alphabet: Vec<Word> = found
            .keys()
            .map(|(_, _, w)| w.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&Word, usize> =
            alphabet.iter().enumerate().map(|(i, w)| (w, i)).collect();
        let mut edges = Vec::with_capacity(found.len());
        let mut triples = Vec::with_capacity(found.len());
        for ((source, target, word), path) in &found {
            let symbol = index[word];
            triples.push((*source, *target, symbol + 1));
            edges.push(LiftedEdge {
                source: *source,
                target: *target,
                symbol,
                path: path.clone(),
            });
        }
        let graph = LabeledGraph::new(self.node_count, triples)?;
        Ok(LiftedGraph {
            horizon: len,
            graph,
            alphabet,
            edges,
        })
    }

    /// Closed walks of at most `max_len` edges, as `(word, start node)` pairs
    /// without duplicates.
    pub fn cycles_up_to(&self, max_len: usize) -> Result<Vec<(Word, usize)>, GraphError> {
        if max_len == 0 {
            return Err(GraphError::ZeroLength);
        }
        let mut found = BTreeSet::new();
        let mut path = Vec::with_capacity(max_len);
        for start in 0..self.node_count {
            self.closed_walks(start, start, max_len, &mut path, &mut found);
        }
        let mut out: Vec<(Word, usize)> = found.into_iter().collect();
        out.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.cmp(b)));
        Ok(out)
    }

    fn closed_walks(
        &self,
        start: usize,
        node: usize,
        remaining: usize,
        path: &mut Vec<usize>,
        found: &mut BTreeSet<(Word, usize)>,
    ) {
        if remaining == 0 {
            return;
        }
        for &id in &self.out_edges[node] {
            path.push(id);
            let target = self.edges[id].target;
            if target == start {
                found.insert((self.word_of(path), start));
            }
            self.closed_walks(start, target, remaining - 1, path, found);
            path.pop();
        }
    }
}

/// The flower graph: one node with `m` self-loops labeled `1..=m`, i.e.
/// unconstrained switching.
pub fn flower(m: usize) -> LabeledGraph {
    assert!(m >= 1, "flower needs at least one label");
    LabeledGraph::new(1, (1..=m).map(|l| (0, 0, l))).expect("flower graph is valid")
}

/// Edge of a product lift, with one representative base path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedEdge {
    pub source: usize,
    pub target: usize,
    /// Index into [`LiftedGraph::alphabet`].
    pub symbol: usize,
    /// Base edge ids of a path realizing this lifted edge.
    pub path: Vec<usize>,
}

/// Result of [`LabeledGraph::product_lift`].
///
/// The lifted graph is itself a [`LabeledGraph`] whose label `k` stands for
/// `alphabet[k - 1]`, so lifts compose.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedGraph {
    horizon: usize,
    graph: LabeledGraph,
    alphabet: Vec<Word>,
    edges: Vec<LiftedEdge>,
}

impl LiftedGraph {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// The lift as a plain labeled graph over word symbols.
    pub fn graph(&self) -> &LabeledGraph {
        &self.graph
    }

    /// Distinct words carried by lifted edges, sorted.
    pub fn alphabet(&self) -> &[Word] {
        &self.alphabet
    }

    pub fn edges(&self) -> &[LiftedEdge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn word(&self, edge: usize) -> &Word {
        &self.alphabet[self.edges[edge].symbol]
    }

    /// Expands a word over lifted symbols (1-based labels of [`Self::graph`])
    /// into a word over the base labels.
    pub fn flatten(&self, word: &Word) -> Word {
        Word(
            word.labels()
                .iter()
                .flat_map(|&s| self.alphabet[s - 1].labels().iter().copied())
                .collect(),
        )
    }
}
