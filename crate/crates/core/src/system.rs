//! Constrained switching linear systems, their product lifts and
//! free-running simulation.

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::graph::{flower, GraphError, LabeledGraph, LiftedGraph, Word};
use crate::linalg::Vector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph uses {labels} labels but {matrices} matrices were given")]
    MatrixCount { labels: usize, matrices: usize },
    #[error("matrix {index} is {rows}x{cols}, expected {dim}x{dim}")]
    MatrixShape {
        index: usize,
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("matrix {index} has non-finite entries")]
    NonFinite { index: usize },
    #[error("system dimension must be positive")]
    ZeroDimension,
    #[error("edge {edge} does not exist (edge count {count})")]
    UnknownEdge { edge: usize, count: usize },
    #[error("state has length {got}, expected {expected}")]
    StateLength { expected: usize, got: usize },
}

/// `S(G, A)`: a labeled graph with one `n x n` matrix per label.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedSystem {
    graph: LabeledGraph,
    matrices: Vec<DMatrix<f64>>,
    dim: usize,
}

impl SwitchedSystem {
    pub fn new(graph: LabeledGraph, matrices: Vec<DMatrix<f64>>) -> Result<Self, SystemError> {
        if matrices.len() != graph.label_count() {
            return Err(SystemError::MatrixCount {
                labels: graph.label_count(),
                matrices: matrices.len(),
            });
        }
        let dim = matrices[0].nrows();
        if dim == 0 {
            return Err(SystemError::ZeroDimension);
        }
        for (index, m) in matrices.iter().enumerate() {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(SystemError::MatrixShape {
                    index,
                    rows: m.nrows(),
                    cols: m.ncols(),
                    dim,
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(SystemError::NonFinite { index });
            }
        }
        Ok(SwitchedSystem {
            graph,
            matrices,
            dim,
        })
    }

    pub fn graph(&self) -> &LabeledGraph {
        &self.graph
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// Matrix of a 1-based label.
    pub fn matrix(&self, label: usize) -> &DMatrix<f64> {
        &self.matrices[label - 1]
    }

    /// `A_{w[l-1]} ... A_{w[0]}`: the first label acts first.
    pub fn word_matrix(&self, word: &Word) -> DMatrix<f64> {
        let mut product = DMatrix::identity(self.dim, self.dim);
        for &label in word.labels() {
            product = self.matrix(label) * product;
        }
        product
    }

    pub fn build_lift(&self, horizon: usize) -> Result<LiftedSystem, SystemError> {
        let lift = self.graph.product_lift(horizon)?;
        let word_matrices = lift.alphabet().iter().map(|w| self.word_matrix(w)).collect();
        Ok(LiftedSystem {
            lift,
            word_matrices,
        })
    }

    /// The arbitrary-switching system whose matrices are the distinct
    /// products along words of length `horizon`.
    pub fn word_flower(&self, horizon: usize) -> Result<SwitchedSystem, SystemError> {
        let mut matrices: Vec<DMatrix<f64>> = Vec::new();
        for word in self.graph.language(horizon)? {
            let m = self.word_matrix(&word);
            if !matrices.contains(&m) {
                matrices.push(m);
            }
        }
        SwitchedSystem::new(flower(matrices.len()), matrices)
    }

    /// One transition: choose a successor of `edge` uniformly and apply its
    /// matrix to `x`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        edge: usize,
        x: &Vector,
        rng: &mut R,
    ) -> Result<(usize, Vector), SystemError> {
        self.check_state(edge, x)?;
        let node = self.graph.edge(edge).target;
        let out = self.graph.outgoing(node);
        let next = out[rng.random_range(0..out.len())];
        Ok((next, self.matrix(self.graph.edge(next).label) * x))
    }

    /// Trajectory `(e(0), x(0)), ..., (e(steps), x(steps))`.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        edge: usize,
        x: Vector,
        steps: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, Vector)>, SystemError> {
        self.check_state(edge, &x)?;
        let mut out = Vec::with_capacity(steps + 1);
        out.push((edge, x));
        for _ in 0..steps {
            let (e, x) = out.last().unwrap();
            let next = self.step(*e, x, rng)?;
            out.push(next);
        }
        Ok(out)
    }

    fn check_state(&self, edge: usize, x: &Vector) -> Result<(), SystemError> {
        if edge >= self.graph.edge_count() {
            return Err(SystemError::UnknownEdge {
                edge,
                count: self.graph.edge_count(),
            });
        }
        if x.len() != self.dim {
            return Err(SystemError::StateLength {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// The `l`-product lift of a system: lifted graph plus one matrix per word.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    lift: LiftedGraph,
    word_matrices: Vec<DMatrix<f64>>,
}

impl LiftedSystem {
    pub fn horizon(&self) -> usize {
        self.lift.horizon()
    }

    pub fn lifted_graph(&self) -> &LiftedGraph {
        &self.lift
    }

    pub fn edge_count(&self) -> usize {
        self.lift.edge_count()
    }

    /// Matrix product carried by lifted edge `edge`.
    pub fn edge_matrix(&self, edge: usize) -> &DMatrix<f64> {
        &self.word_matrices[self.lift.edges()[edge].symbol]
    }

    pub fn word_matrices(&self) -> &[DMatrix<f64>] {
        &self.word_matrices
    }

    /// The lift as an ordinary switched system over word symbols.
    pub fn as_system(&self) -> SwitchedSystem {
        SwitchedSystem::new(self.lift.graph().clone(), self.word_matrices.clone())
            .expect("lift of a valid system is valid")
    }
}
