//! Cell-based supernet: a dense DAG whose edges mix every candidate
//! operation, weighted by the tempered distribution of that edge's
//! architecture parameters.

mod genotype;
mod ops;

pub use genotype::{Genotype, Selection};
pub use ops::{OpKind, DEFAULT_CATALOG};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::linalg::{argmax, dot, Matrix};
use crate::schedules::DEFAULT_INIT_SCALE;
use crate::snsoftmax::{sn_backward, SoftmaxMode, TemperedDistribution};

fn default_nodes() -> usize {
    3
}
fn default_inputs() -> usize {
    1
}
fn default_dim() -> usize {
    16
}
fn default_classes() -> usize {
    4
}
fn default_catalog() -> Vec<OpKind> {
    DEFAULT_CATALOG.to_vec()
}
fn default_arch_scale() -> f64 {
    DEFAULT_INIT_SCALE
}

/// Shape of the supernet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    #[serde(default = "default_nodes", alias = "V")]
    pub num_nodes: usize,
    /// Leading nodes fed directly from the data; they have no incoming edges.
    #[serde(default = "default_inputs")]
    pub num_inputs: usize,
    #[serde(default = "default_dim", alias = "dim")]
    pub feature_dim: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_catalog")]
    pub catalog: Vec<OpKind>,
    #[serde(default = "default_arch_scale")]
    pub arch_init_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            num_nodes: default_nodes(),
            num_inputs: default_inputs(),
            feature_dim: default_dim(),
            num_classes: default_classes(),
            catalog: default_catalog(),
            arch_init_scale: default_arch_scale(),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_inputs < 1 || self.num_nodes <= self.num_inputs {
            return bad(format!(
                "need at least one input node and one computed node, got V={} with {} inputs",
                self.num_nodes, self.num_inputs
            ));
        }
        if self.feature_dim < 1 || self.num_classes < 2 {
            return bad("feature_dim must be >= 1 and num_classes >= 2".into());
        }
        if self.catalog.is_empty() {
            return bad("operation catalog is empty".into());
        }
        if !(self.arch_init_scale.is_finite() && self.arch_init_scale > 0.0) {
            return bad("arch_init_scale must be > 0".into());
        }
        Ok(())
    }

    /// `(u, v)` pairs of every compound edge, grouped by target node.
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        (self.num_inputs..self.num_nodes)
            .flat_map(|v| (0..v).map(move |u| (u, v)))
            .collect()
    }

    pub fn catalog_names(&self) -> Vec<String> {
        self.catalog.iter().map(|k| k.name().to_string()).collect()
    }
}

/// A compound edge `u -> v` carrying every candidate operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundEdge {
    pub u: usize,
    pub v: usize,
    /// Architecture parameters `A_c`, one per operation.
    pub arch: Vec<f64>,
    /// Operation weights `omega_c`; `None` for parameter-free operations.
    pub ops: Vec<Option<Matrix>>,
    #[serde(skip)]
    pub dist: Option<TemperedDistribution>,
}

/// Gradients produced by one compound-edge backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGrad {
    /// `dl/dA_c` through the edge's tempered distribution.
    pub arch: Vec<f64>,
    /// `dl/dbeta_c`
    pub beta: Vec<f64>,
    pub ops: Vec<Option<Matrix>>,
    pub input: Vec<f64>,
}

impl CompoundEdge {
    fn cached(&self) -> Result<&TemperedDistribution> {
        self.dist.as_ref().ok_or_else(|| {
            Error::State(format!(
                "edge {}->{} has no cached distribution; refresh the net first",
                self.u, self.v
            ))
        })
    }

    pub fn distribution(&self) -> Option<&TemperedDistribution> {
        self.dist.as_ref()
    }

    /// `sum_i beta_i o_i(h_u)`. Every op is evaluated, including ones with
    /// zero weight.
    pub fn forward_with(&self, catalog: &[OpKind], beta: &[f64], h_u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; h_u.len()];
        for ((kind, w), &b) in catalog.iter().zip(&self.ops).zip(beta) {
            let o = kind.forward(w.as_ref(), h_u);
            for (acc, x) in out.iter_mut().zip(&o) {
                *acc += b * x;
            }
        }
        out
    }

    /// Mixed output under the cached distribution.
    pub fn forward(&self, catalog: &[OpKind], h_u: &[f64]) -> Result<Vec<f64>> {
        let dist = self.cached()?;
        Ok(self.forward_with(catalog, &dist.beta, h_u))
    }

    /// Backward pass of one edge for one input, routing `dl/dbeta` through
    /// sn-softmax (or plain softmax, per the cached distribution).
    pub fn backward(&self, catalog: &[OpKind], h_u: &[f64], upstream: &[f64]) -> Result<EdgeGrad> {
        let dist = self.cached()?;
        if upstream.len() != h_u.len() {
            return Err(Error::invalid(
                "upstream gradient and edge input differ in length",
            ));
        }
        let mut beta_grad = vec![0.0; catalog.len()];
        let mut ops: Vec<Option<Matrix>> = self
            .ops
            .iter()
            .map(|w| w.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())))
            .collect();
        let mut input = vec![0.0; h_u.len()];
        for (i, kind) in catalog.iter().enumerate() {
            let w = self.ops[i].as_ref();
            let out = kind.forward(w, h_u);
            beta_grad[i] = dot(upstream, &out);
            kind.backward_into(
                w,
                h_u,
                &out,
                upstream,
                dist.beta[i],
                ops[i].as_mut(),
                &mut input,
            );
        }
        let arch = sn_backward(dist, &beta_grad)?;
        Ok(EdgeGrad {
            arch,
            beta: beta_grad,
            ops,
            input,
        })
    }
}

/// Linear classification head on the final node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Readout {
    pub fn new<R: Rng + ?Sized>(classes: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Matrix::random_normal(classes, dim, 1.0 / (dim as f64).sqrt(), rng),
            bias: vec![0.0; classes],
        }
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.weight.matvec(h);
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        z
    }
}

/// Cross-entropy of `logits` against `label` and its gradient w.r.t. the logits.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Accumulated gradients of a batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrad {
    /// `dl/dbeta` per edge. Map to architecture gradients with
    /// [`SuperNet::arch_gradient`].
    pub beta: Vec<Vec<f64>>,
    pub ops: Vec<Vec<Option<Matrix>>>,
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
}

impl NetGrad {
    fn zeros_like(net: &SuperNet) -> Self {
        Self {
            beta: net.edges.iter().map(|e| vec![0.0; e.arch.len()]).collect(),
            ops: net
                .edges
                .iter()
                .map(|e| {
                    e.ops
                        .iter()
                        .map(|w| w.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())))
                        .collect()
                })
                .collect(),
            head_weight: Matrix::zeros(net.head.weight.rows(), net.head.weight.cols()),
            head_bias: vec![0.0; net.head.bias.len()],
        }
    }

    /// Operation and head gradients flattened in [`SuperNet::weights_flat`] order.
    pub fn weights_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for edge in &self.ops {
            for m in edge.iter().flatten() {
                out.extend_from_slice(m.as_slice());
            }
        }
        out.extend_from_slice(self.head_weight.as_slice());
        out.extend_from_slice(&self.head_bias);
        out
    }
}

struct SampleTrace {
    nodes: Vec<Vec<f64>>,
    /// `op_outputs[e][i] = o_i(h_u)` for edge `e`.
    op_outputs: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperNet {
    pub config: NetConfig,
    pub edges: Vec<CompoundEdge>,
    pub head: Readout,
}

impl SuperNet {
    /// Random initialization: architecture parameters `arch_init_scale * N(0, 1)`,
    /// operation and head weights `N(0, 1/dim)`.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dim = config.feature_dim;
        let edges = config
            .edge_pairs()
            .into_iter()
            .map(|(u, v)| CompoundEdge {
                u,
                v,
                arch: (0..config.catalog.len())
                    .map(|_| config.arch_init_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
                ops: config
                    .catalog
                    .iter()
                    .map(|k| k.init_weights(dim, rng))
                    .collect(),
                dist: None,
            })
            .collect();
        let head = Readout::new(config.num_classes, dim, rng);
        Ok(Self {
            config,
            edges,
            head,
        })
    }

    pub fn catalog(&self) -> &[OpKind] {
        &self.config.catalog
    }

    pub fn num_ops(&self) -> usize {
        self.config.catalog.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Redraw only the architecture parameters.
    pub fn reinit_arch<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let scale = self.config.arch_init_scale;
        for e in &mut self.edges {
            for a in &mut e.arch {
                *a = scale * rng.sample::<f64, _>(StandardNormal);
            }
            e.dist = None;
        }
    }

    /// Recompute and cache every edge's tempered distribution.
    pub fn refresh(&mut self, t: f64, mode: SoftmaxMode) -> Result<()> {
        for e in &mut self.edges {
            e.dist = Some(mode.distribution(&e.arch, t)?);
        }
        Ok(())
    }

    pub fn arch_params_flat(&self) -> Vec<f64> {
        self.edges
            .iter()
            .flat_map(|e| e.arch.iter().copied())
            .collect()
    }

    /// Cached `beta` of every edge.
    pub fn mixes(&self) -> Result<Vec<&[f64]>> {
        self.edges
            .iter()
            .map(|e| e.cached().map(|d| d.beta.as_slice()))
            .collect()
    }

    /// One-hot mixes selecting the genotype's operation on every edge.
    pub fn genotype_mixes(&self, genotype: &Genotype) -> Result<Vec<Vec<f64>>> {
        if genotype.selections.len() != self.edges.len() {
            return Err(Error::invalid(format!(
                "genotype has {} selections, net has {} edges",
                genotype.selections.len(),
                self.edges.len()
            )));
        }
        let m = self.num_ops();
        self.edges
            .iter()
            .map(|e| {
                let op = genotype.op_of(e.u, e.v).ok_or_else(|| {
                    Error::invalid(format!(
                        "genotype has no selection for edge {}->{}",
                        e.u, e.v
                    ))
                })?;
                if op >= m {
                    return Err(Error::invalid(format!(
                        "op index {op} out of range for M={m}"
                    )));
                }
                let mut one_hot = vec![0.0; m];
                one_hot[op] = 1.0;
                Ok(one_hot)
            })
            .collect()
    }

    fn check_inputs(&self, inputs: &[&[f64]]) -> Result<()> {
        if inputs.len() != self.config.num_inputs {
            return Err(Error::invalid(format!(
                "expected features for {} input nodes, got {}",
                self.config.num_inputs,
                inputs.len()
            )));
        }
        if let Some(bad) = inputs.iter().find(|x| x.len() != self.config.feature_dim) {
            return Err(Error::invalid(format!(
                "input has dimension {}, net expects {}",
                bad.len(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    fn trace(&self, mixes: &[&[f64]], inputs: &[&[f64]]) -> SampleTrace {
        let dim = self.config.feature_dim;
        let mut nodes: Vec<Vec<f64>> = inputs.iter().map(|x| x.to_vec()).collect();
        nodes.resize(self.config.num_nodes, Vec::new());
        let mut op_outputs = Vec::with_capacity(self.edges.len());
        let mut e_idx = 0;
        for v in self.config.num_inputs..self.config.num_nodes {
            let mut acc = vec![0.0; dim];
            while e_idx < self.edges.len() && self.edges[e_idx].v == v {
                let edge = &self.edges[e_idx];
                let h_u = &nodes[edge.u];
                let outs: Vec<Vec<f64>> = self
                    .catalog()
                    .iter()
                    .zip(&edge.ops)
                    .map(|(k, w)| k.forward(w.as_ref(), h_u))
                    .collect();
                for (o, &b) in outs.iter().zip(mixes[e_idx]) {
                    for (a, x) in acc.iter_mut().zip(o) {
                        *a += b * x;
                    }
                }
                op_outputs.push(outs);
                e_idx += 1;
            }
            nodes[v] = acc;
        }
        SampleTrace { nodes, op_outputs }
    }

    /// Features of every node under explicit per-edge mixing weights.
    pub fn forward_with(&self, mixes: &[&[f64]], inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(inputs)?;
        if mixes.len() != self.edges.len() || mixes.iter().any(|m| m.len() != self.num_ops()) {
            return Err(Error::invalid("mixing weights do not match the net shape"));
        }
        Ok(self.trace(mixes, inputs).nodes)
    }

    /// `h_v = sum_{u<v} c_{u,v}(h_u)` under the cached distributions.
    pub fn node_forward(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mixes = self.mixes()?;
        self.forward_with(&mixes, inputs)
    }

    /// Single-path evaluation of a discretized architecture with the
    /// supernet's own weights.
    pub fn genotype_eval_forward(
        &self,
        genotype: &Genotype,
        inputs: &[&[f64]],
    ) -> Result<Vec<Vec<f64>>> {
        let owned = self.genotype_mixes(genotype)?;
        let mixes: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
        self.forward_with(&mixes, inputs)
    }

    fn sample_inputs<'a>(&self, x: &'a [f64]) -> Vec<&'a [f64]> {
        vec![x; self.config.num_inputs]
    }

    /// Class prediction for one sample (every input node receives `x`).
    pub fn predict_with(&self, mixes: &[&[f64]], x: &[f64]) -> Result<usize> {
        let nodes = self.forward_with(mixes, &self.sample_inputs(x))?;
        Ok(argmax(
            &self.head.logits(nodes.last().expect("net has nodes")),
        ))
    }

    /// Final-node features for one sample.
    pub fn final_features(&self, mixes: &[&[f64]], x: &[f64]) -> Result<Vec<f64>> {
        let mut nodes = self.forward_with(mixes, &self.sample_inputs(x))?;
        Ok(nodes.pop().expect("net has nodes"))
    }

    /// Mean cross-entropy over `samples`.
    pub fn batch_loss(&self, mixes: &[&[f64]], samples: &[&Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut total = 0.0;
        for s in samples {
            let nodes = self.forward_with(mixes, &self.sample_inputs(&s.features))?;
            let (l, _) = cross_entropy(&self.head.logits(nodes.last().unwrap()), s.label);
            total += l;
        }
        Ok(total / samples.len() as f64)
    }

    /// Mean cross-entropy and its gradient with respect to every `beta`,
    /// operation weight and head parameter.
    pub fn batch_loss_and_grad(
        &self,
        mixes: &[&[f64]],
        samples: &[&Sample],
    ) -> Result<(f64, NetGrad)> {
        if samples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if mixes.len() != self.edges.len() || mixes.iter().any(|m| m.len() != self.num_ops()) {
            return Err(Error::invalid("mixing weights do not match the net shape"));
        }
        let scale = 1.0 / samples.len() as f64;
        let mut grad = NetGrad::zeros_like(self);
        let mut total = 0.0;
        let last = self.config.num_nodes - 1;
        for s in samples {
            if s.label >= self.config.num_classes {
                return Err(Error::invalid(format!("label {} out of range", s.label)));
            }
            let inputs = self.sample_inputs(&s.features);
            self.check_inputs(&inputs)?;
            let tr = self.trace(mixes, &inputs);
            let (l, mut dz) = cross_entropy(&self.head.logits(&tr.nodes[last]), s.label);
            total += l;
            dz.iter_mut().for_each(|d| *d *= scale);

            grad.head_weight.add_outer(&dz, &tr.nodes[last], 1.0);
            for (gb, d) in grad.head_bias.iter_mut().zip(&dz) {
                *gb += d;
            }
            let mut d_nodes = vec![vec![0.0; self.config.feature_dim]; self.config.num_nodes];
            self.head.weight.add_matvec_t(&dz, 1.0, &mut d_nodes[last]);

            for e_idx in (0..self.edges.len()).rev() {
                let edge = &self.edges[e_idx];
                let upstream = d_nodes[edge.v].clone();
                let h_u = &tr.nodes[edge.u];
                let beta = mixes[e_idx];
                for (i, kind) in self.catalog().iter().enumerate() {
                    let out = &tr.op_outputs[e_idx][i];
                    grad.beta[e_idx][i] += dot(&upstream, out);
                    kind.backward_into(
                        edge.ops[i].as_ref(),
                        h_u,
                        out,
                        &upstream,
                        beta[i],
                        grad.ops[e_idx][i].as_mut(),
                        &mut d_nodes[edge.u],
                    );
                }
            }
        }
        Ok((total * scale, grad))
    }

    /// Architecture gradients: each edge's `dl/dbeta` pushed through the
    /// backward rule of its cached distribution.
    pub fn arch_gradient(&self, grad: &NetGrad) -> Result<Vec<Vec<f64>>> {
        self.edges
            .iter()
            .zip(&grad.beta)
            .map(|(e, gb)| sn_backward(e.cached()?, gb))
            .collect()
    }

    /// Operation weights followed by the head, flattened.
    pub fn weights_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.edges {
            for m in e.ops.iter().flatten() {
                out.extend_from_slice(m.as_slice());
            }
        }
        out.extend_from_slice(self.head.weight.as_slice());
        out.extend_from_slice(&self.head.bias);
        out
    }

    pub fn set_weights_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.weights_flat().len() {
            return Err(Error::invalid("flat weight vector has the wrong length"));
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for e in &mut self.edges {
            for m in e.ops.iter_mut().flatten() {
                take(m.as_mut_slice());
            }
        }
        take(self.head.weight.as_mut_slice());
        take(&mut self.head.bias);
        Ok(())
    }

    pub fn set_arch_flat(&mut self, flat: &[f64]) -> Result<()> {
        let m = self.num_ops();
        if flat.len() != m * self.edges.len() {
            return Err(Error::invalid(
                "flat architecture vector has the wrong length",
            ));
        }
        for (e, chunk) in self.edges.iter_mut().zip(flat.chunks(m)) {
            e.arch.copy_from_slice(chunk);
        }
        Ok(())
    }

    /// Argmax pruning. Uses the cached `beta` when present, otherwise the raw
    /// parameters (same argmax for any positive temperature). Ties go to the
    /// lowest index; `exclude_zero` skips zero operations.
    pub fn discretize(&self, exclude_zero: bool) -> Genotype {
        let selections = self
            .edges
            .iter()
            .map(|e| {
                let scores: &[f64] = e.dist.as_ref().map_or(&e.arch, |d| &d.beta);
                let op = if exclude_zero {
                    let mut best: Option<usize> = None;
                    for (i, kind) in self.catalog().iter().enumerate() {
                        if *kind == OpKind::Zero {
                            continue;
                        }
                        if best.is_none_or(|b| scores[i] > scores[b]) {
                            best = Some(i);
                        }
                    }
                    best.unwrap_or_else(|| argmax(scores))
                } else {
                    argmax(scores)
                };
                Selection { u: e.u, v: e.v, op }
            })
            .collect();
        Genotype {
            nodes: self.config.num_nodes,
            catalog: self.config.catalog_names(),
            selections,
        }
    }

    /// Every genotype of this net's shape, in lexicographic order of the
    /// per-edge op indices.
    pub fn enumerate_genotypes(&self) -> Vec<Genotype> {
        let m = self.num_ops();
        let n_edges = self.edges.len();
        let total = m.pow(n_edges as u32);
        (0..total)
            .map(|mut code| {
                let mut ops = vec![0; n_edges];
                for slot in ops.iter_mut().rev() {
                    *slot = code % m;
                    code /= m;
                }
                Genotype {
                    nodes: self.config.num_nodes,
                    catalog: self.config.catalog_names(),
                    selections: self
                        .edges
                        .iter()
                        .zip(ops)
                        .map(|(e, op)| Selection { u: e.u, v: e.v, op })
                        .collect(),
                }
            })
            .collect()
    }

    /// Genotype assembled from op kinds given in edge order.
    pub fn genotype_from_kinds(&self, kinds: &[OpKind]) -> Result<Genotype> {
        if kinds.len() != self.edges.len() {
            return Err(Error::invalid("one op kind per edge required"));
        }
        let selections = self
            .edges
            .iter()
            .zip(kinds)
            .map(|(e, k)| {
                let op = self
                    .catalog()
                    .iter()
                    .position(|c| c == k)
                    .ok_or_else(|| Error::invalid(format!("{k} is not in the catalog")))?;
                Ok(Selection { u: e.u, v: e.v, op })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Genotype {
            nodes: self.config.num_nodes,
            catalog: self.config.catalog_names(),
            selections,
        })
    }
}
