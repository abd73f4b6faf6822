//! JSON system descriptions and the built-in networked control example.
//!
//! A system file looks like
//!
//! ```json
//! {
//!   "name": "ncs",
//!   "nodes": ["a", "b", "c"],
//!   "edges": [["a", "a", 1], ["a", "b", 2]],
//!   "matrices": [[0.45, 1.08, -0.06, -0.27], [0.45, 1.08, 0.36, 0.09]],
//!   "dimension": 2
//! }
//! ```
//!
//! Node names map to indices in declaration order and matrix `k` (0-based
//! in the list) is the matrix of label `k + 1`, stored row-major.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::LabeledGraph;
use crate::system::SwitchedSystem;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {what}: {message}")]
    Parse { what: String, message: String },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    fn field(field: impl Into<String>, message: impl ToString) -> Self {
        ConfigError::Field {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String, usize)>,
    pub matrices: Vec<Vec<f64>>,
    pub dimension: usize,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            what: "system config".into(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system config serializes")
    }

    /// Resolves names and validates every graph and matrix invariant.
    pub fn to_system(&self) -> Result<SwitchedSystem, ConfigError> {
        let n = self.dimension;
        if n == 0 {
            return Err(ConfigError::field("dimension", "must be positive"));
        }
        if self.nodes.is_empty() {
            return Err(ConfigError::field("nodes", "at least one node is required"));
        }
        let mut index = HashMap::with_capacity(self.nodes.len());
        for (i, name) in self.nodes.iter().enumerate() {
            if index.insert(name.as_str(), i).is_some() {
                return Err(ConfigError::field(format!("nodes[{i}]"), format!("duplicate node `{name}`")));
            }
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for (i, (src, dst, label)) in self.edges.iter().enumerate() {
            let lookup = |name: &String| {
                index
                    .get(name.as_str())
                    .copied()
                    .ok_or_else(|| ConfigError::field(format!("edges[{i}]"), format!("unknown node `{name}`")))
            };
            edges.push((lookup(src)?, lookup(dst)?, *label));
        }
        let graph = LabeledGraph::new(self.nodes.len(), edges).map_err(|e| ConfigError::field("edges", e))?;
        let mut matrices = Vec::with_capacity(self.matrices.len());
        for (i, data) in self.matrices.iter().enumerate() {
            if data.len() != n * n {
                return Err(ConfigError::field(
                    format!("matrices[{i}]"),
                    format!("has {} entries, expected {}", data.len(), n * n),
                ));
            }
            matrices.push(DMatrix::from_row_slice(n, n, data));
        }
        SwitchedSystem::new(graph, matrices).map_err(|e| ConfigError::field("matrices", e))
    }
}

/// Reads and validates a system file.
pub fn load_system(path: &Path) -> Result<SwitchedSystem, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SystemConfig::from_json(&text)?.to_system()
}

/// `"ncs"` selects the built-in example, anything else is a file path.
pub fn resolve_system(name_or_path: &str) -> Result<SwitchedSystem, ConfigError> {
    if name_or_path == "ncs" {
        Ok(ncs_example())
    } else {
        load_system(Path::new(name_or_path))
    }
}

/// Networked control loop whose packets may be dropped at most twice in a
/// row. Label 1 is a delivered packet (closed loop `A + BK`) and label 2 a
/// dropped one (open loop `A`).
pub fn ncs_config() -> SystemConfig {
    let a = [0.45, 1.08, 0.36, 0.09];
    let b = [0.0, 1.0];
    let k = [-0.42, -0.36];
    let mut closed = a;
    for i in 0..2 {
        for j in 0..2 {
            closed[2 * i + j] += b[i] * k[j];
        }
    }
    let edge = |s: &str, t: &str, l: usize| (s.to_string(), t.to_string(), l);
    SystemConfig {
        name: "ncs".into(),
        nodes: vec!["a".into(), "b".into(), "c".into()],
        edges: vec![
            edge("a", "a", 1),
            edge("a", "b", 2),
            edge("b", "a", 1),
            edge("b", "c", 2),
            edge("c", "a", 1),
        ],
        matrices: vec![closed.to_vec(), a.to_vec()],
        dimension: 2,
    }
}

pub fn ncs_example() -> SwitchedSystem {
    ncs_config().to_system().expect("built-in example is valid")
}
