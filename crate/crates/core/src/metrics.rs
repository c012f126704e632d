//! Entropy and accuracy measurements.

use serde::Serialize;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::space::{Genotype, Readout, SuperNet};

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn beta_entropy(beta: &[f64]) -> Result<f64> {
    if beta.is_empty() {
        return Err(Error::invalid("empty distribution"));
    }
    if beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::invalid(
            "distribution has negative or non-finite entries",
        ));
    }
    let total: f64 = beta.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "distribution sums to {total}, not 1"
        )));
    }
    Ok(beta
        .iter()
        .filter(|&&b| b > 0.0)
        .map(|&b| -b * b.ln())
        .sum::<f64>()
        .max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeEntropy {
    pub edge: usize,
    pub u: usize,
    pub v: usize,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub per_edge: Vec<EdgeEntropy>,
    pub mean: f64,
}

/// Entropy of every edge's cached `beta` and their mean.
pub fn mean_edge_entropy(net: &SuperNet) -> Result<EntropyReport> {
    let mixes = net.mixes()?;
    let per_edge = net
        .edges
        .iter()
        .zip(mixes)
        .enumerate()
        .map(|(i, (e, beta))| {
            Ok(EdgeEntropy {
                edge: i,
                u: e.u,
                v: e.v,
                entropy: beta_entropy(beta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = per_edge.iter().map(|e| e.entropy).sum::<f64>() / per_edge.len().max(1) as f64;
    Ok(EntropyReport { per_edge, mean })
}

/// Classification accuracy under explicit per-edge mixing weights.
pub fn accuracy_with(net: &SuperNet, mixes: &[&[f64]], split: &[Sample]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::invalid("empty split"));
    }
    let mut correct = 0usize;
    for s in split {
        if net.predict_with(mixes, &s.features)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Multi-path accuracy of the supernet under its cached distributions.
pub fn supernet_accuracy(net: &SuperNet, split: &[Sample]) -> Result<f64> {
    let mixes = net.mixes()?;
    accuracy_with(net, &mixes, split)
}

/// Single-path accuracy of `genotype` with the supernet's shared weights,
/// no retraining.
pub fn discretized_accuracy(net: &SuperNet, genotype: &Genotype, split: &[Sample]) -> Result<f64> {
    let owned = net.genotype_mixes(genotype)?;
    let mixes: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
    accuracy_with(net, &mixes, split)
}

/// Settings for [`fit_readout`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeFit {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for ProbeFit {
    fn default() -> Self {
        Self {
            iterations: 200,
            lr: 1.0,
            momentum: 0.9,
        }
    }
}

/// Fits a fresh softmax-regression readout on fixed features by full-batch
/// Nesterov gradient descent on standardized inputs.
pub fn fit_readout(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    fit: ProbeFit,
) -> Result<Readout> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::invalid(
            "features and labels must be non-empty and equally long",
        ));
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::invalid("label out of range"));
    }
    let n = features.len();
    let d = features[0].len();
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for x in features {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / nf;
        }
    }
    let mut sd = vec![0.0; d];
    for x in features {
        for ((s, v), m) in sd.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / nf;
        }
    }
    sd.iter_mut().for_each(|s| *s = s.sqrt() + 1e-8);
    let z: Vec<f64> = features
        .iter()
        .flat_map(|x| x.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s))
        .collect();

    // Weights are stored feature-major (`w[j * k + c]`) so the inner loops
    // run over classes without a reduction.
    let k = classes;
    let mut w = vec![0.0; d * k];
    let mut b = vec![0.0; k];
    let mut vw = vec![0.0; d * k];
    let mut vb = vec![0.0; k];
    let mut look_w = vec![0.0; d * k];
    let mut look_b = vec![0.0; k];
    let mut gw = vec![0.0; d * k];
    let mut gb = vec![0.0; k];
    let mut p = vec![0.0; k];
    for _ in 0..fit.iterations {
        for i in 0..d * k {
            look_w[i] = w[i] + fit.momentum * vw[i];
        }
        for c in 0..k {
            look_b[c] = b[c] + fit.momentum * vb[c];
        }
        gw.fill(0.0);
        gb.fill(0.0);
        for (row, &label) in z.chunks_exact(d).zip(labels) {
            p.copy_from_slice(&look_b);
            for (x, wj) in row.iter().zip(look_w.chunks_exact(k)) {
                for (pc, wc) in p.iter_mut().zip(wj) {
                    *pc += x * wc;
                }
            }
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for pc in p.iter_mut() {
                *pc = (*pc - max).exp();
                total += *pc;
            }
            let inv = 1.0 / (total * nf);
            for pc in p.iter_mut() {
                *pc *= inv;
            }
            p[label] -= 1.0 / nf;
            for (gc, pc) in gb.iter_mut().zip(&p) {
                *gc += pc;
            }
            for (x, gj) in row.iter().zip(gw.chunks_exact_mut(k)) {
                for (gc, pc) in gj.iter_mut().zip(&p) {
                    *gc += x * pc;
                }
            }
        }
        for i in 0..d * k {
            vw[i] = fit.momentum * vw[i] - fit.lr * gw[i];
            w[i] += vw[i];
        }
        for c in 0..k {
            vb[c] = fit.momentum * vb[c] - fit.lr * gb[c];
            b[c] += vb[c];
        }
    }
    // Fold the standardization back into the weights.
    let mut weight = Matrix::zeros(k, d);
    let mut bias = b;
    for c in 0..k {
        for j in 0..d {
            let wj = w[j * k + c] / sd[j];
            weight[(c, j)] = wj;
            bias[c] -= wj * mean[j];
        }
    }
    Ok(Readout { weight, bias })
}

/// Accuracy of a readout on fixed features.
pub fn readout_accuracy(head: &Readout, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::invalid("empty split"));
    }
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(x, &l)| argmax(&head.logits(x)) == l)
        .count();
    Ok(correct as f64 / features.len() as f64)
}
