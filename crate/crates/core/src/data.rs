//! Synthetic datasets with a fixed interleaved train/validation split.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::{fit_readout, readout_accuracy, ProbeFit};
use crate::report::fmt_f64;
use crate::space::{Genotype, NetConfig, OpKind, SuperNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Samples split into training and validation halves. Sample `i` of the
/// generation order goes to train when `i` is even and to val when odd.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub num_classes: usize,
    pub seed: Option<u64>,
    train: Vec<Sample>,
    val: Vec<Sample>,
}

/// A batch drawn from the training split. Only [`Dataset`] can build one.
#[derive(Debug, Clone)]
pub struct TrainBatch<'a>(Vec<&'a Sample>);

/// A batch drawn from the validation split. Only [`Dataset`] can build one.
#[derive(Debug, Clone)]
pub struct ValBatch<'a>(Vec<&'a Sample>);

impl<'a> TrainBatch<'a> {
    pub fn samples(&self) -> &[&'a Sample] {
        &self.0
    }
}

impl<'a> ValBatch<'a> {
    pub fn samples(&self) -> &[&'a Sample] {
        &self.0
    }
}

fn batches_of<'a>(
    split: &'a [Sample],
    batch_size: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Vec<Vec<&'a Sample>> {
    let mut idx: Vec<usize> = (0..split.len()).collect();
    if let Some(rng) = rng {
        idx.shuffle(rng);
    }
    idx.chunks(batch_size.max(1))
        .map(|c| c.iter().map(|&i| &split[i]).collect())
        .collect()
}

impl Dataset {
    /// Rebuild from samples in generation order.
    pub fn from_ordered(
        samples: Vec<Sample>,
        num_classes: usize,
        seed: Option<u64>,
    ) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("need at least two samples"));
        }
        let dim = samples[0].features.len();
        if dim == 0 || samples.iter().any(|s| s.features.len() != dim) {
            return Err(Error::invalid(
                "samples must share a non-zero feature dimension",
            ));
        }
        if samples.iter().any(|s| s.label >= num_classes) {
            return Err(Error::invalid("label out of range"));
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (i, s) in samples.into_iter().enumerate() {
            if i % 2 == 0 {
                train.push(s);
            } else {
                val.push(s);
            }
        }
        Ok(Self {
            dim,
            num_classes,
            seed,
            train,
            val,
        })
    }

    pub fn train(&self) -> &[Sample] {
        &self.train
    }

    pub fn val(&self) -> &[Sample] {
        &self.val
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples back in generation order.
    pub fn ordered(&self) -> Vec<&Sample> {
        (0..self.len())
            .map(|i| {
                if i % 2 == 0 {
                    &self.train[i / 2]
                } else {
                    &self.val[i / 2]
                }
            })
            .collect()
    }

    /// Training batches, shuffled by `rng` when given.
    pub fn train_batches(
        &self,
        batch_size: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Vec<TrainBatch<'_>> {
        batches_of(&self.train, batch_size, rng)
            .into_iter()
            .map(TrainBatch)
            .collect()
    }

    /// Validation batches, shuffled by `rng` when given.
    pub fn val_batches(
        &self,
        batch_size: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Vec<ValBatch<'_>> {
        batches_of(&self.val, batch_size, rng)
            .into_iter()
            .map(ValBatch)
            .collect()
    }

    pub fn class_counts(split: &[Sample], num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for s in split {
            counts[s.label] += 1;
        }
        counts
    }

    /// Write every sample in generation order as `feature_0..feature_{d-1},label`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("feature_{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for s in self.ordered() {
            let mut row: Vec<String> = s.features.iter().map(|&x| fmt_f64(x)).collect();
            row.push(s.label.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Read a dataset written by [`Dataset::write_csv`]. The class count is
    /// one more than the largest label unless given.
    pub fn read_csv<R: std::io::Read>(reader: R, num_classes: Option<usize>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let dim = header.len().saturating_sub(1);
        let expected = (0..dim)
            .map(|j| format!("feature_{j}"))
            .chain(["label".to_string()]);
        if dim == 0 || !header.iter().zip(expected).all(|(h, e)| h.trim() == e) {
            return Err(Error::invalid(
                "dataset CSV header must be feature_0..feature_{d-1},label",
            ));
        }
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad number {s:?}: {e}")))
            };
            let features = rec
                .iter()
                .take(dim)
                .map(parse)
                .collect::<Result<Vec<_>>>()?;
            let label = rec[dim]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("bad label {:?}: {e}", &rec[dim])))?;
            samples.push(Sample { features, label });
        }
        let k =
            num_classes.unwrap_or_else(|| samples.iter().map(|s| s.label + 1).max().unwrap_or(0));
        Self::from_ordered(samples, k, None)
    }

    pub fn load_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, num_classes)
    }
}

/// Label of sample `i` in generation order. Consecutive pairs share a label,
/// so both interleaved halves cycle through every class.
fn label_of(i: usize, classes: usize) -> usize {
    (i / 2) % classes
}

/// Gaussian blobs: class `c` centred at `2 e_c`, isotropic noise `noise_sigma`.
pub fn generate(
    seed: u64,
    n_samples: usize,
    dim: usize,
    n_classes: usize,
    noise_sigma: f64,
) -> Result<Dataset> {
    if n_classes < 2 || n_samples < 2 * n_classes || dim < n_classes {
        return Err(Error::invalid(format!(
            "need n_classes >= 2, n_samples >= 2 * n_classes and dim >= n_classes \
             (got n={n_samples}, dim={dim}, K={n_classes})"
        )));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::invalid("noise_sigma must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n_samples)
        .map(|i| {
            let label = label_of(i, n_classes);
            let features = (0..dim)
                .map(|j| {
                    let centre = if j == label { 2.0 } else { 0.0 };
                    centre + noise_sigma * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            Sample { features, label }
        })
        .collect();
    Dataset::from_ordered(samples, n_classes, Some(seed))
}

/// Construction parameters of the planted-optimum task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub seed: u64,
    pub dim: usize,
    pub n_samples: usize,
    /// Label bits; the task has `2^bits` classes.
    pub bits: usize,
    pub input_sigma: f64,
    /// Gain of the designated nonlinear operation's weights.
    pub gain: f64,
    /// Samples closer than this to any label boundary are rejected.
    pub margin: f64,
}

impl PlantedConfig {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            seed,
            dim,
            n_samples: 2000,
            bits: if dim >= 8 { 4 } else { dim / 2 },
            input_sigma: 1.5,
            gain: 4.0,
            margin: 0.2,
        }
    }

    pub fn num_classes(&self) -> usize {
        1 << self.bits
    }
}

/// Accuracy of the best competitor found by the construction check.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCheck {
    pub planted_accuracy: f64,
    pub runner_up: Genotype,
    pub runner_up_accuracy: f64,
    /// Validation accuracy of every genotype, in enumeration order.
    pub accuracies: Vec<(Genotype, f64)>,
}

/// A dataset whose labels only one genotype can fit, together with the
/// shared weights that make it so.
#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub dataset: Dataset,
    pub genotype: Genotype,
    pub net: SuperNet,
    pub check: PlantedCheck,
}

pub const PLANTED_MIN_ACCURACY: f64 = 0.95;
pub const PLANTED_COMPETITOR_CAP: f64 = 0.80;
pub const PLANTED_MIN_MARGIN: f64 = 0.15;

/// Planted task with the default construction parameters.
pub fn planted_optimum_task(seed: u64, dim: usize) -> Result<PlantedTask> {
    planted_optimum_task_with(PlantedConfig::new(seed, dim))
}

/// Build and verify the planted-optimum task on a three-node cell.
///
/// The designated edge `0 -> 2` carries `tanh(W x)` where the first `bits`
/// rows of `W` read saturating directions from the trailing coordinates.
/// Label bit `j` is the sign of coordinate `j` of `x + tanh(W x)`, which is
/// exactly the final node of the cell with identity on the other two edges.
/// Every one of the `M^3` genotypes is then scored with a freshly fitted
/// readout; the construction fails unless the planted genotype is the clear
/// unique winner.
pub fn planted_optimum_task_with(cfg: PlantedConfig) -> Result<PlantedTask> {
    let bits = cfg.bits;
    if cfg.dim < 4 || bits < 1 || bits >= cfg.dim {
        return Err(Error::invalid(format!(
            "planted task needs dim >= 4 and 1 <= bits < dim (dim={}, bits={bits})",
            cfg.dim
        )));
    }
    let classes = cfg.num_classes();
    if cfg.n_samples < 2 * classes {
        return Err(Error::invalid("too few samples for the class count"));
    }
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net_cfg = NetConfig {
        num_nodes: 3,
        num_inputs: 1,
        feature_dim: dim,
        num_classes: classes,
        ..NetConfig::default()
    };
    let mut net = SuperNet::new(net_cfg, &mut rng)?;
    let tanh_idx = net
        .catalog()
        .iter()
        .position(|k| *k == OpKind::TanhLinear)
        .ok_or_else(|| Error::Internal("catalog lacks tanh_linear".into()))?;
    let edge02 = net
        .edges
        .iter()
        .position(|e| e.u == 0 && e.v == 2)
        .ok_or_else(|| Error::Internal("cell lacks edge 0->2".into()))?;

    let mut w = Matrix::zeros(dim, dim);
    for j in 0..bits {
        let mut u: Vec<f64> = (0..dim)
            .map(|c| {
                if c < bits {
                    0.0
                } else {
                    rng.sample::<f64, _>(StandardNormal)
                }
            })
            .collect();
        let n = crate::linalg::norm(&u);
        u.iter_mut().for_each(|x| *x *= cfg.gain / n);
        for (c, x) in u.into_iter().enumerate() {
            w[(j, c)] = x;
        }
    }
    net.edges[edge02].ops[tanh_idx] = Some(w.clone());

    let teacher = |x: &[f64]| -> Option<usize> {
        let t = w.matvec(x);
        let mut label = 0;
        for j in 0..bits {
            let m = x[j] + t[j].tanh();
            if m.abs() <= cfg.margin {
                return None;
            }
            if m > 0.0 {
                label |= 1 << j;
            }
        }
        Some(label)
    };

    // Fill per-class quotas by rejection, then lay samples out in the
    // canonical label order so both halves stay balanced.
    let mut quota = vec![0usize; classes];
    for i in 0..cfg.n_samples {
        quota[label_of(i, classes)] += 1;
    }
    let mut pools: Vec<Vec<Vec<f64>>> = vec![Vec::new(); classes];
    let mut missing = cfg.n_samples;
    let max_draws = 1000 * cfg.n_samples;
    let mut draws = 0;
    while missing > 0 {
        if draws >= max_draws {
            return Err(Error::Internal(format!(
                "planted task: rejection sampling stalled with {missing} samples missing"
            )));
        }
        draws += 1;
        let x: Vec<f64> = (0..dim)
            .map(|_| cfg.input_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if let Some(label) = teacher(&x) {
            if pools[label].len() < quota[label] {
                pools[label].push(x);
                missing -= 1;
            }
        }
    }
    let mut cursors = vec![0usize; classes];
    let samples = (0..cfg.n_samples)
        .map(|i| {
            let label = label_of(i, classes);
            let features = std::mem::take(&mut pools[label][cursors[label]]);
            cursors[label] += 1;
            Sample { features, label }
        })
        .collect();
    let dataset = Dataset::from_ordered(samples, classes, Some(cfg.seed))?;

    let kinds: Vec<OpKind> = net
        .edges
        .iter()
        .enumerate()
        .map(|(i, _)| {
            if i == edge02 {
                OpKind::TanhLinear
            } else {
                OpKind::Identity
            }
        })
        .collect();
    let genotype = net.genotype_from_kinds(&kinds)?;
    let check = verify_planted(&net, &dataset, &genotype)?;
    if check.planted_accuracy < PLANTED_MIN_ACCURACY
        || check.runner_up_accuracy >= PLANTED_COMPETITOR_CAP
        || check.planted_accuracy - check.runner_up_accuracy < PLANTED_MIN_MARGIN
    {
        return Err(Error::Internal(format!(
            "planted task verification failed: planted {} scores {:.4}, runner-up {} scores {:.4}",
            genotype, check.planted_accuracy, check.runner_up, check.runner_up_accuracy
        )));
    }
    Ok(PlantedTask {
        dataset,
        genotype,
        net,
        check,
    })
}

/// Score every genotype of `net` with a readout fitted on the training split
/// and evaluated on the validation split.
pub fn verify_planted(
    net: &SuperNet,
    dataset: &Dataset,
    planted: &Genotype,
) -> Result<PlantedCheck> {
    let train_labels: Vec<usize> = dataset.train().iter().map(|s| s.label).collect();
    let val_labels: Vec<usize> = dataset.val().iter().map(|s| s.label).collect();
    // Distinct genotypes often compute identical features (a zero op makes
    // the rest of its path irrelevant), so fits are shared by feature bits.
    let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let mut accuracies = Vec::new();
    for g in net.enumerate_genotypes() {
        let owned = net.genotype_mixes(&g)?;
        let mixes: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
        let feats = |split: &[Sample]| -> Result<Vec<Vec<f64>>> {
            split
                .iter()
                .map(|s| net.final_features(&mixes, &s.features))
                .collect()
        };
        let train = feats(dataset.train())?;
        let val = feats(dataset.val())?;
        let key: Vec<u64> = train
            .iter()
            .chain(&val)
            .flatten()
            .map(|x| x.to_bits())
            .collect();
        let acc = match cache.get(&key) {
            Some(&acc) => acc,
            None => {
                let head = fit_readout(
                    &train,
                    &train_labels,
                    dataset.num_classes,
                    ProbeFit::default(),
                )?;
                let acc = readout_accuracy(&head, &val, &val_labels)?;
                cache.insert(key, acc);
                acc
            }
        };
        accuracies.push((g, acc));
    }
    let planted_accuracy = accuracies
        .iter()
        .find(|(g, _)| g == planted)
        .map(|(_, a)| *a)
        .ok_or_else(|| Error::Internal("planted genotype missing from the enumeration".into()))?;
    let (runner_up, runner_up_accuracy) = accuracies
        .iter()
        .filter(|(g, _)| g != planted)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .ok_or_else(|| Error::Internal("no competing genotypes".into()))?;
    Ok(PlantedCheck {
        planted_accuracy,
        runner_up,
        runner_up_accuracy,
        accuracies,
    })
}
