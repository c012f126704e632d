use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use sparsetemp::metrics::supernet_accuracy;
use sparsetemp::report::{fmt_f64, write_preview, write_schedule_list, ProbeTable};
use sparsetemp::schedules::{
    estimate_e_a_with_scale, ets_build, lts_build, pcd_build, preview_schedule,
};
use sparsetemp::snsoftmax::{grad_norm_probe, log_grid};
use sparsetemp::{
    discretized_accuracy, mean_edge_entropy, run_search_from, Dataset, Genotype, ScalePolicy,
    ScheduleConfig, SearchConfig, SoftmaxMode, SuperNet,
};

use crate::ListKind;

/// Trained supernet plus the temperature and softmax mode it was left at.
#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    t: f64,
    softmax: SoftmaxMode,
    net: SuperNet,
}

#[derive(Debug, Serialize)]
struct Outputs {
    trace: PathBuf,
    genotype: PathBuf,
    final_entropy: PathBuf,
    supernet: PathBuf,
    manifest: PathBuf,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    version: &'static str,
    seed: u64,
    config: SearchConfig,
    outputs: Outputs,
    started_unix: u64,
    status: &'static str,
    wall_clock_secs: Option<f64>,
}

impl RunManifest {
    fn write(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&self.outputs.manifest, text)
            .with_context(|| format!("writing {}", self.outputs.manifest.display()))
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<SearchConfig> {
    let mut cfg = match path {
        Some(p) => SearchConfig::load(p)?,
        None => SearchConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn search(config: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Result<()> {
    let cfg = load_config(config, seed)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let outputs = Outputs {
        trace: out_dir.join("trace.csv"),
        genotype: out_dir.join("genotype.json"),
        final_entropy: out_dir.join("final_entropy.txt"),
        supernet: out_dir.join("supernet.json"),
        manifest: out_dir.join("manifest.json"),
    };
    let started = Instant::now();
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg.clone(),
        outputs,
        started_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        status: "running",
        wall_clock_secs: None,
    };
    manifest.write()?;

    let (data, net) = cfg.build()?;
    info!(
        "dataset: {} train / {} val samples",
        data.train().len(),
        data.val().len()
    );
    let trainer = cfg.trainer();
    let outcome = match run_search_from(&trainer, net, &data) {
        Ok(o) => o,
        Err(e) => {
            if let Some(trace) = e.partial_trace() {
                trace.write_csv(create(&manifest.outputs.trace)?)?;
                manifest.status = "non_finite";
                manifest.wall_clock_secs = Some(started.elapsed().as_secs_f64());
                manifest.write()?;
            }
            return Err(e.into());
        }
    };

    let out = &manifest.outputs;
    outcome.trace.write_csv(create(&out.trace)?)?;
    outcome.genotype.save(&out.genotype)?;
    let last = outcome.trace.last().context("search produced no epochs")?;
    fs::write(
        &out.final_entropy,
        format!("{}\n", fmt_f64(last.mean_entropy)),
    )?;
    let snap = Snapshot {
        t: last.t,
        softmax: trainer.softmax_mode,
        net: outcome.net,
    };
    serde_json::to_writer(create(&out.supernet)?, &snap)?;
    info!("genotype {}", outcome.genotype);

    manifest.status = "done";
    manifest.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    manifest.write()
}

pub fn preview_example(kind: ListKind, points: usize) -> Result<()> {
    let (e_a, t0, t_n) = (4e-4, 1.0, 1e-3);
    let list = match kind {
        ListKind::Ets => ets_build(e_a, t0, t_n, points)?,
        ListKind::Lts => lts_build(e_a, t0, t_n, points)?,
        ListKind::Pcd => pcd_build(e_a, t0, t_n, points, ScheduleConfig::default().cycles)?,
    };
    write_schedule_list(&list, io::stdout().lock())?;
    Ok(())
}

pub fn preview_config(config: Option<&Path>, e_a: Option<f64>, entropy: Option<f64>) -> Result<()> {
    let cfg = load_config(config, None)?;
    let e_a = match e_a {
        Some(v) => v,
        None => {
            let (_, net) = cfg.build()?;
            estimate_e_a_with_scale(&net.arch_params_flat(), cfg.net.arch_init_scale)?
        }
    };
    let entropy = entropy.unwrap_or_else(|| (cfg.net.catalog.len() as f64).ln());
    let rows = preview_schedule(&cfg.schedule, e_a, cfg.trainer.epochs, entropy)?;
    write_preview(&rows, io::stdout().lock())?;
    Ok(())
}

fn parse_logits(text: &str) -> Result<Vec<f64>> {
    let logits = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad logit {s:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    if logits.is_empty() || logits.iter().any(|a| !a.is_finite()) {
        bail!("logits must be a non-empty list of finite numbers");
    }
    Ok(logits)
}

pub fn probe_softmax(
    logits: &str,
    t_max: f64,
    t_min: f64,
    points: usize,
    s: &[f64],
    st: &[f64],
    out: Option<&Path>,
) -> Result<()> {
    let logits = parse_logits(logits)?;
    let grid = log_grid(t_max, t_min, points)?;
    let mut policies = Vec::new();
    for &v in s {
        if !(v.is_finite() && v > 1.0) {
            bail!("--s must be > 1, got {v}");
        }
        policies.push(ScalePolicy::Fixed(v));
    }
    for &v in st {
        if !(v.is_finite() && v > 0.0) {
            bail!("--st must be > 0, got {v}");
        }
        policies.push(ScalePolicy::StConst(v));
    }
    if policies.is_empty() {
        policies.push(ScalePolicy::StConst(1.0));
    }

    let mut table = ProbeTable {
        t: grid.clone(),
        plain_norm: Vec::new(),
        sn: Vec::new(),
    };
    for p in &policies {
        let rows = grad_norm_probe(&logits, &grid, *p)?;
        if table.plain_norm.is_empty() {
            table.plain_norm = rows.iter().map(|r| r.plain_norm).collect();
        }
        table
            .sn
            .push((p.label(), rows.iter().map(|r| r.sn_norm).collect()));
    }
    match out {
        Some(path) => table.write_csv(create(path)?)?,
        None => table.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

/// The snapshot if given, otherwise the config's freshly built net.
fn net_and_data(
    supernet: Option<&Path>,
    cfg: &SearchConfig,
) -> Result<(Dataset, Option<Snapshot>, SuperNet)> {
    let (data, built) = cfg.build()?;
    let Some(path) = supernet else {
        return Ok((data, None, built));
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let snap: Snapshot =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let c = &snap.net.config;
    if c.feature_dim != data.dim || c.num_classes != data.num_classes {
        bail!(
            "snapshot (dim {}, {} classes) does not match the dataset (dim {}, {} classes)",
            c.feature_dim,
            c.num_classes,
            data.dim,
            data.num_classes
        );
    }
    let net = snap.net.clone();
    Ok((data, Some(snap), net))
}

#[derive(Serialize)]
struct GenotypeEval {
    genotype: String,
    train_accuracy: f64,
    val_accuracy: f64,
}

pub fn eval_genotype(
    genotype: &Path,
    supernet: Option<&Path>,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let text =
        fs::read_to_string(genotype).with_context(|| format!("reading {}", genotype.display()))?;
    let g =
        Genotype::from_json(&text).with_context(|| format!("parsing {}", genotype.display()))?;
    let cfg = load_config(config, seed)?;
    let (data, _, net) = net_and_data(supernet, &cfg)?;
    print_json(&GenotypeEval {
        genotype: g.to_string(),
        train_accuracy: discretized_accuracy(&net, &g, data.train())?,
        val_accuracy: discretized_accuracy(&net, &g, data.val())?,
    })
}

#[derive(Serialize)]
struct EntropyOut {
    t: f64,
    #[serde(flatten)]
    report: sparsetemp::EntropyReport,
    supernet_val_accuracy: f64,
}

pub fn probe_entropy(
    supernet: Option<&Path>,
    config: Option<&Path>,
    seed: Option<u64>,
    t: Option<f64>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let (data, snap, mut net) = net_and_data(supernet, &cfg)?;
    let (t_saved, mode) = match &snap {
        Some(s) => (s.t, s.softmax),
        None => (cfg.schedule.t0, cfg.softmax_mode()),
    };
    let t = t.unwrap_or(t_saved);
    net.refresh(t, mode)?;
    print_json(&EntropyOut {
        t,
        report: mean_edge_entropy(&net)?,
        supernet_val_accuracy: supernet_accuracy(&net, data.val())?,
    })
}
