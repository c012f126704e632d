//! The toy candidate operations of a compound edge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    /// Outputs zeros; the "none" operation.
    Zero,
    /// Skip connection.
    Identity,
    /// `W h`
    Linear,
    /// `tanh(W h)`
    TanhLinear,
    /// `0.5 h`, a parameter-free pooling surrogate.
    HalfScale,
}

pub const DEFAULT_CATALOG: [OpKind; 5] = [
    OpKind::Zero,
    OpKind::Identity,
    OpKind::Linear,
    OpKind::TanhLinear,
    OpKind::HalfScale,
];

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Zero => "zero",
            OpKind::Identity => "identity",
            OpKind::Linear => "linear",
            OpKind::TanhLinear => "tanh_linear",
            OpKind::HalfScale => "half_scale",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        DEFAULT_CATALOG
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown operation {name:?}")))
    }

    pub fn has_weights(self) -> bool {
        matches!(self, OpKind::Linear | OpKind::TanhLinear)
    }

    /// Fresh weights for this op: `N(0, 1/dim)` entries, roughly orthogonal
    /// at the dimensions used here. `None` for parameter-free ops.
    pub fn init_weights<R: Rng + ?Sized>(self, dim: usize, rng: &mut R) -> Option<Matrix> {
        self.has_weights()
            .then(|| Matrix::random_normal(dim, dim, 1.0 / (dim as f64).sqrt(), rng))
    }

    /// Apply the op to `h`.
    pub fn forward(self, weights: Option<&Matrix>, h: &[f64]) -> Vec<f64> {
        match self {
            OpKind::Zero => vec![0.0; h.len()],
            OpKind::Identity => h.to_vec(),
            OpKind::HalfScale => h.iter().map(|x| 0.5 * x).collect(),
            OpKind::Linear => weights.expect("linear op has weights").matvec(h),
            OpKind::TanhLinear => weights
                .expect("tanh op has weights")
                .matvec(h)
                .into_iter()
                .map(f64::tanh)
                .collect(),
        }
    }

    /// Backpropagate `scale * upstream` through the op, given its input `h`
    /// and its own forward output. Accumulates into `d_weights` and `d_input`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_into(
        self,
        weights: Option<&Matrix>,
        h: &[f64],
        output: &[f64],
        upstream: &[f64],
        scale: f64,
        d_weights: Option<&mut Matrix>,
        d_input: &mut [f64],
    ) {
        match self {
            OpKind::Zero => {}
            OpKind::Identity => {
                for (d, g) in d_input.iter_mut().zip(upstream) {
                    *d += scale * g;
                }
            }
            OpKind::HalfScale => {
                for (d, g) in d_input.iter_mut().zip(upstream) {
                    *d += 0.5 * scale * g;
                }
            }
            OpKind::Linear => {
                let w = weights.expect("linear op has weights");
                if let Some(dw) = d_weights {
                    dw.add_outer(upstream, h, scale);
                }
                w.add_matvec_t(upstream, scale, d_input);
            }
            OpKind::TanhLinear => {
                let w = weights.expect("tanh op has weights");
                let dz: Vec<f64> = upstream
                    .iter()
                    .zip(output)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                if let Some(dw) = d_weights {
                    dw.add_outer(&dz, h, scale);
                }
                w.add_matvec_t(&dz, scale, d_input);
            }
        }
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
