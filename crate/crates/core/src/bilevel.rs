//! First-order alternating bilevel search: architecture parameters descend
//! the validation loss, operation weights descend the training loss.

use std::io::Write;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TrainBatch, ValBatch};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::metrics::{discretized_accuracy, mean_edge_entropy, supernet_accuracy};
use crate::report::fmt_f64;
use crate::schedules::{estimate_e_a_with_scale, ScheduleConfig, TemperatureController};
use crate::snsoftmax::SoftmaxMode;
use crate::space::{Genotype, NetConfig, SuperNet};

fn default_epochs() -> usize {
    60
}
fn default_steps() -> usize {
    0
}
fn default_batch() -> usize {
    64
}
fn default_lr_omega() -> f64 {
    0.05
}
fn default_lr_arch() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Alternating iterations per epoch; 0 means one pass over the
    /// training batches.
    #[serde(default = "default_steps")]
    pub steps_per_epoch: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr_omega")]
    pub lr_omega: f64,
    #[serde(default = "default_lr_arch")]
    pub lr_arch: f64,
    /// Global-norm clip on the architecture gradient.
    #[serde(default)]
    pub grad_clip_arch: Option<f64>,
    pub softmax_mode: SoftmaxMode,
    pub schedule: ScheduleConfig,
    /// Skip zero operations when discretizing.
    #[serde(default)]
    pub exclude_zero: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            steps_per_epoch: default_steps(),
            batch_size: default_batch(),
            lr_omega: default_lr_omega(),
            lr_arch: default_lr_arch(),
            grad_clip_arch: None,
            softmax_mode: SoftmaxMode::Sn(crate::snsoftmax::ScalePolicy::StConst(1.0)),
            schedule: ScheduleConfig::default(),
            exclude_zero: false,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr_omega.is_finite() && self.lr_omega > 0.0) {
            return bad(format!("lr_omega must be > 0, got {}", self.lr_omega));
        }
        if !(self.lr_arch.is_finite() && self.lr_arch > 0.0) {
            return bad(format!("lr_arch must be > 0, got {}", self.lr_arch));
        }
        if let Some(c) = self.grad_clip_arch {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad_clip_arch must be > 0, got {c}"));
            }
        }
        self.schedule.validate()
    }
}

/// One epoch of the search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub epoch: usize,
    /// Schedule updates applied after this epoch.
    pub k: usize,
    /// Temperature the epoch ran at.
    pub t: f64,
    /// Temperature for the next epoch, and its unclamped value.
    pub t_next: f64,
    pub t_raw: f64,
    pub d_exp: f64,
    pub mean_entropy: f64,
    pub edge_entropy: Vec<f64>,
    pub supernet_val_acc: f64,
    pub discretized_val_acc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub e_a: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SearchTrace {
    /// `(u, v)` of every edge, naming the per-edge entropy columns.
    pub edges: Vec<(usize, usize)>,
    pub records: Vec<TraceRecord>,
}

impl SearchTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_entropy).collect()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "epoch",
            "k",
            "t",
            "t_next",
            "t_raw",
            "d_exp",
            "mean_entropy",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(self.edges.iter().map(|(u, v)| format!("entropy_{u}_{v}")));
        h.extend(
            [
                "supernet_val_acc",
                "discretized_val_acc",
                "train_loss",
                "val_loss",
                "e_a",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(self.header())?;
        for r in &self.records {
            let mut row = vec![
                r.epoch.to_string(),
                r.k.to_string(),
                fmt_f64(r.t),
                fmt_f64(r.t_next),
                fmt_f64(r.t_raw),
                fmt_f64(r.d_exp),
                fmt_f64(r.mean_entropy),
            ];
            row.extend(r.edge_entropy.iter().map(|&h| fmt_f64(h)));
            row.extend(
                [
                    r.supernet_val_acc,
                    r.discretized_val_acc,
                    r.train_loss,
                    r.val_loss,
                    r.e_a,
                ]
                .into_iter()
                .map(fmt_f64),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// Norm of the gradient actually applied.
    pub applied_norm: f64,
}

fn non_finite(phase: &'static str) -> Error {
    Error::NonFinite {
        epoch: 0,
        step: 0,
        phase,
        trace: Box::default(),
    }
}

/// Scale `grads` in place so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let total = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if total > max_norm {
        let f = max_norm / total;
        grads.iter_mut().flatten().for_each(|g| *g *= f);
    }
    total
}

/// One descent step on every architecture parameter using a validation batch.
/// The distributions are refreshed at `t` afterwards.
pub fn arch_step(
    net: &mut SuperNet,
    batch: &ValBatch<'_>,
    t: f64,
    config: &TrainerConfig,
) -> Result<StepOutcome> {
    if batch.samples().is_empty() {
        return Err(Error::invalid("empty validation batch"));
    }
    let mixes = net.mixes()?;
    let (loss, grad) = net.batch_loss_and_grad(&mixes, batch.samples())?;
    if !loss.is_finite() {
        return Err(non_finite("arch"));
    }
    let mut g = net.arch_gradient(&grad)?;
    let grad_norm = match config.grad_clip_arch {
        Some(c) => clip_global_norm(&mut g, c),
        None => g.iter().map(|e| norm(e).powi(2)).sum::<f64>().sqrt(),
    };
    if !grad_norm.is_finite() {
        return Err(non_finite("arch"));
    }
    let applied_norm = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for (edge, ge) in net.edges.iter_mut().zip(&g) {
        for (a, d) in edge.arch.iter_mut().zip(ge) {
            *a -= config.lr_arch * d;
        }
    }
    net.refresh(t, config.softmax_mode)?;
    Ok(StepOutcome {
        loss,
        grad_norm,
        applied_norm,
    })
}

/// One descent step on the operation weights and the readout using a
/// training batch. Architecture parameters are untouched.
pub fn weight_step(
    net: &mut SuperNet,
    batch: &TrainBatch<'_>,
    config: &TrainerConfig,
) -> Result<StepOutcome> {
    if batch.samples().is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let mixes = net.mixes()?;
    let (loss, grad) = net.batch_loss_and_grad(&mixes, batch.samples())?;
    if !loss.is_finite() {
        return Err(non_finite("weights"));
    }
    let flat = grad.weights_flat();
    let grad_norm = norm(&flat);
    if !grad_norm.is_finite() {
        return Err(non_finite("weights"));
    }
    let lr = config.lr_omega;
    for (edge, ge) in net.edges.iter_mut().zip(&grad.ops) {
        for (w, gw) in edge.ops.iter_mut().zip(ge) {
            if let (Some(w), Some(gw)) = (w.as_mut(), gw.as_ref()) {
                for (x, d) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                    *x -= lr * d;
                }
            }
        }
    }
    for (x, d) in net
        .head
        .weight
        .as_mut_slice()
        .iter_mut()
        .zip(grad.head_weight.as_slice())
    {
        *x -= lr * d;
    }
    for (x, d) in net.head.bias.iter_mut().zip(&grad.head_bias) {
        *x -= lr * d;
    }
    Ok(StepOutcome {
        loss,
        grad_norm,
        applied_norm: grad_norm,
    })
}

/// Result of a completed search.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub genotype: Genotype,
    pub trace: SearchTrace,
    pub net: SuperNet,
}

/// Search from a freshly initialized supernet seeded by `config.seed`.
pub fn run_search(
    config: &TrainerConfig,
    net_config: NetConfig,
    dataset: &Dataset,
) -> Result<SearchOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = SuperNet::new(net_config, &mut rng)?;
    run_search_from(config, net, dataset)
}

/// Search starting from the given supernet.
///
/// Warmup epochs train only the operation weights at `t0`. Every later
/// iteration takes one architecture step on a validation batch, then one
/// weight step on a training batch. After each post-warmup epoch the
/// temperature controller advances using the mean edge entropy of the
/// training distributions at the epoch's temperature.
pub fn run_search_from(
    config: &TrainerConfig,
    mut net: SuperNet,
    dataset: &Dataset,
) -> Result<SearchOutcome> {
    config.validate()?;
    if dataset.train().is_empty() || dataset.val().is_empty() {
        return Err(Error::invalid(
            "dataset needs both a training and a validation split",
        ));
    }
    if dataset.dim != net.config.feature_dim || dataset.num_classes != net.config.num_classes {
        return Err(Error::invalid(format!(
            "dataset (dim {}, {} classes) does not match the net (dim {}, {} classes)",
            dataset.dim, dataset.num_classes, net.config.feature_dim, net.config.num_classes
        )));
    }
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    batch_rng.set_stream(1);

    let e_a0 = estimate_e_a_with_scale(&net.arch_params_flat(), net.config.arch_init_scale)?;
    let mut ctl = TemperatureController::new(config.schedule.clone(), e_a0, config.epochs)?;
    let mut trace = SearchTrace {
        edges: net.edges.iter().map(|e| (e.u, e.v)).collect(),
        records: Vec::with_capacity(config.epochs),
    };
    info!(
        "search: {} epochs, schedule {:?}, E(a) = {:.4e}, softmax {:?}",
        config.epochs, config.schedule.kind, e_a0, config.softmax_mode
    );

    for epoch in 0..config.epochs {
        let t = ctl.temperature();
        net.refresh(t, config.softmax_mode)
            .map_err(|e| e.at_epoch(epoch))?;
        let train_batches = dataset.train_batches(config.batch_size, Some(&mut batch_rng));
        let val_batches = dataset.val_batches(config.batch_size, Some(&mut batch_rng));
        let steps = if config.steps_per_epoch == 0 {
            train_batches.len()
        } else {
            config.steps_per_epoch
        };
        let warm = ctl.in_warmup(epoch);
        let (mut train_loss, mut val_loss) = (0.0, 0.0);
        for step in 0..steps {
            let tag = |e: Error, trace: &SearchTrace| match e {
                Error::NonFinite { phase, .. } => Error::NonFinite {
                    epoch,
                    step,
                    phase,
                    trace: Box::new(trace.clone()),
                },
                other => other.at_epoch(epoch),
            };
            if !warm {
                let vb = &val_batches[step % val_batches.len()];
                let out = arch_step(&mut net, vb, t, config).map_err(|e| tag(e, &trace))?;
                val_loss += out.loss;
            }
            let tb = &train_batches[step % train_batches.len()];
            let out = weight_step(&mut net, tb, config).map_err(|e| tag(e, &trace))?;
            train_loss += out.loss;
        }
        let steps_f = steps.max(1) as f64;
        let report = mean_edge_entropy(&net).map_err(|e| e.at_epoch(epoch))?;
        let sup_acc = supernet_accuracy(&net, dataset.val()).map_err(|e| e.at_epoch(epoch))?;
        let genotype = net.discretize(config.exclude_zero);
        let dis_acc =
            discretized_accuracy(&net, &genotype, dataset.val()).map_err(|e| e.at_epoch(epoch))?;
        let e_a = estimate_e_a_with_scale(&net.arch_params_flat(), net.config.arch_init_scale)?;

        ctl.end_epoch(epoch, report.mean, e_a)
            .map_err(|e| e.at_epoch(epoch))?;
        let state = ctl.state();
        let record = TraceRecord {
            epoch,
            k: state.epoch_k,
            t,
            t_next: state.t,
            t_raw: state.t_raw,
            d_exp: state.d_exp,
            mean_entropy: report.mean,
            edge_entropy: report.per_edge.iter().map(|e| e.entropy).collect(),
            supernet_val_acc: sup_acc,
            discretized_val_acc: dis_acc,
            train_loss: train_loss / steps_f,
            val_loss: if warm { f64::NAN } else { val_loss / steps_f },
            e_a,
        };
        info!(
            "epoch {epoch:3} t={t:.3e} H={:.4} acc={sup_acc:.3} disc={dis_acc:.3} {genotype}",
            report.mean
        );
        debug!("epoch {epoch}: {record:?}");
        trace.records.push(record);
    }
    let t = ctl.temperature();
    net.refresh(t, config.softmax_mode)?;
    let genotype = net.discretize(config.exclude_zero);
    Ok(SearchOutcome {
        genotype,
        trace,
        net,
    })
}
