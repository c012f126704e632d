use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Selection {
    pub u: usize,
    pub v: usize,
    pub op: usize,
}

/// Discrete per-edge operation choice defining a single-path finalnet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genotype {
    pub nodes: usize,
    pub catalog: Vec<String>,
    pub selections: Vec<Selection>,
}

impl Genotype {
    pub fn op_of(&self, u: usize, v: usize) -> Option<usize> {
        self.selections
            .iter()
            .find(|s| s.u == u && s.v == v)
            .map(|s| s.op)
    }

    /// Names of the selected ops in edge order, e.g. `["tanh_linear", "identity", "identity"]`.
    pub fn op_names(&self) -> Vec<&str> {
        self.selections
            .iter()
            .map(|s| self.catalog.get(s.op).map_or("?", String::as_str))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Genotype = serde_json::from_str(text)?;
        if g.selections.iter().any(|s| s.u >= s.v || s.v >= g.nodes) {
            return Err(Error::invalid("genotype edge indices out of range"));
        }
        if g.selections.iter().any(|s| s.op >= g.catalog.len()) {
            return Err(Error::invalid("genotype op index outside its catalog"));
        }
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl std::fmt::Display for Genotype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .selections
            .iter()
            .zip(self.op_names())
            .map(|(s, name)| format!("{}->{}:{}", s.u, s.v, name))
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}
