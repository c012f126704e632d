//! Temperature schedules.
//!
//! Every schedule except the linear baseline works in "exponential space":
//! a temperature `t` maps to `t_exp = exp(E_a / t)`, where `E_a` is the mean
//! positive architecture parameter. Softmax outputs are linear in `t_exp`, so
//! equidistant steps there give evenly paced sparsification, and the inverse
//! `t = E_a / ln(t_exp)` stays positive for any `t_exp > 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale of the standard-normal architecture parameter initialization.
pub const DEFAULT_INIT_SCALE: f64 = 1e-3;

/// EMA momentum of the entropy-driven decay. Fixed, not a tuning knob.
pub const EDD_MOMENTUM: f64 = 0.5;

/// Mean of `max(a, 0)` over every architecture parameter, falling back to
/// the analytic value for `init_scale * N(0, 1)` (`init_scale / sqrt(2 pi)`)
/// when no entry is positive.
pub fn estimate_e_a(params: &[f64]) -> Result<f64> {
    estimate_e_a_with_scale(params, DEFAULT_INIT_SCALE)
}

pub fn estimate_e_a_with_scale(params: &[f64], init_scale: f64) -> Result<f64> {
    if params.is_empty() {
        return Err(Error::invalid(
            "cannot estimate E(a) from an empty parameter list",
        ));
    }
    let mean = params.iter().map(|a| a.max(0.0)).sum::<f64>() / params.len() as f64;
    if mean > 0.0 {
        Ok(mean)
    } else {
        Ok(init_scale / (2.0 * std::f64::consts::PI).sqrt())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::invalid(format!(
            "{name} must be finite and > 0, got {v}"
        )));
    }
    Ok(())
}

pub fn to_exp_space(e_a: f64, t: f64) -> Result<f64> {
    check_positive("E(a)", e_a)?;
    check_positive("temperature", t)?;
    let v = (e_a / t).exp();
    if !v.is_finite() {
        return Err(Error::invalid(format!(
            "exp(E(a)/t) overflows for E(a)={e_a}, t={t}"
        )));
    }
    Ok(v)
}

pub fn from_exp_space(e_a: f64, t_exp: f64) -> Result<f64> {
    check_positive("E(a)", e_a)?;
    if !(t_exp.is_finite() && t_exp > 1.0) {
        return Err(Error::invalid(format!(
            "exp-space temperature must be > 1 (log must be positive), got {t_exp}"
        )));
    }
    // t_exp - 1 is exact near 1, so ln_1p keeps the full precision of t_exp.
    Ok(e_a / (t_exp - 1.0).ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Fixed,
    Lts,
    Ets,
    Pcd,
    Edd,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(Self::Fixed),
            "lts" => Ok(Self::Lts),
            "ets" => Ok(Self::Ets),
            "pcd" => Ok(Self::Pcd),
            "edd" => Ok(Self::Edd),
            other => Err(Error::Config(format!(
                "unknown schedule kind {other:?} (expected fixed, lts, ets, pcd or edd)"
            ))),
        }
    }
}

/// A precomputed list of decay points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleList {
    pub points_exp: Vec<f64>,
    pub temps: Vec<f64>,
    pub t0: f64,
    pub t_n: f64,
    /// Number of decay segments per cycle.
    pub n: usize,
    pub cycles: usize,
    /// Mean exp-space increment per decay point.
    pub d_exp: f64,
}

impl ScheduleList {
    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }
}

fn check_endpoints(t0: f64, t_n: f64, n: usize) -> Result<()> {
    check_positive("t0", t0)?;
    check_positive("tN", t_n)?;
    if t0 <= t_n {
        return Err(Error::invalid(format!(
            "schedule needs t0 > tN, got t0={t0}, tN={t_n}"
        )));
    }
    if n < 1 {
        return Err(Error::invalid("schedule needs N >= 1 decay points"));
    }
    Ok(())
}

/// Exponential temperature schedule: `N + 1` equidistant points in exp space
/// from `exp(E_a/t0)` to `exp(E_a/tN)`, mapped back to temperatures.
pub fn ets_build(e_a: f64, t0: f64, t_n: f64, n: usize) -> Result<ScheduleList> {
    check_endpoints(t0, t_n, n)?;
    let start = to_exp_space(e_a, t0)?;
    let end = to_exp_space(e_a, t_n)?;
    let d_exp = (end - start) / n as f64;
    let points_exp: Vec<f64> = (0..=n)
        .map(|i| {
            if i == n {
                end
            } else {
                start + i as f64 * d_exp
            }
        })
        .collect();
    let mut temps = points_exp
        .iter()
        .map(|&p| from_exp_space(e_a, p))
        .collect::<Result<Vec<_>>>()?;
    // The endpoints are known exactly; don't let the exp/log round trip
    // perturb them.
    temps[0] = t0;
    temps[n] = t_n;
    Ok(ScheduleList {
        points_exp,
        temps,
        t0,
        t_n,
        n,
        cycles: 1,
        d_exp,
    })
}

/// Linear temperature schedule baseline. `points_exp` is derived from the
/// temperatures for reporting only and may overflow to infinity.
pub fn lts_build(e_a: f64, t0: f64, t_n: f64, n: usize) -> Result<ScheduleList> {
    check_endpoints(t0, t_n, n)?;
    check_positive("E(a)", e_a)?;
    let step = (t0 - t_n) / n as f64;
    let temps: Vec<f64> = (0..=n)
        .map(|i| if i == n { t_n } else { t0 - i as f64 * step })
        .collect();
    let points_exp: Vec<f64> = temps.iter().map(|&t| (e_a / t).exp()).collect();
    let d_exp = (points_exp[n] - points_exp[0]) / n as f64;
    Ok(ScheduleList {
        points_exp,
        temps,
        t0,
        t_n,
        n,
        cycles: 1,
        d_exp,
    })
}

/// Periodic cyclic decay: the ETS list repeated `cycles` times, resetting
/// to `t0` at the start of each cycle.
pub fn pcd_build(e_a: f64, t0: f64, t_n: f64, n: usize, cycles: usize) -> Result<ScheduleList> {
    if cycles < 1 {
        return Err(Error::invalid("PCD needs at least one cycle"));
    }
    let one = ets_build(e_a, t0, t_n, n)?;
    Ok(ScheduleList {
        points_exp: one.points_exp.repeat(cycles),
        temps: one.temps.repeat(cycles),
        cycles,
        ..one
    })
}

/// `d_k = lambda (1 - rho) H + rho d_{k-1}`
pub fn edd_update_decay(d_prev: f64, mean_entropy: f64, lambda: f64, rho: f64) -> Result<f64> {
    if !(mean_entropy.is_finite() && mean_entropy >= 0.0) {
        return Err(Error::invalid(format!(
            "mean entropy must be >= 0, got {mean_entropy}"
        )));
    }
    if !(d_prev.is_finite() && d_prev >= 0.0) {
        return Err(Error::invalid(format!(
            "previous decay must be >= 0, got {d_prev}"
        )));
    }
    check_positive("lambda", lambda)?;
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(format!(
            "momentum must lie in [0, 1), got {rho}"
        )));
    }
    Ok(lambda * (1.0 - rho) * mean_entropy + rho * d_prev)
}

/// `t_k = E_a / ln(t0_exp + k d_k)`
pub fn edd_temperature(e_a: f64, t0_exp: f64, k: usize, d_k: f64) -> Result<f64> {
    let arg = t0_exp + k as f64 * d_k;
    if arg.is_nan() || arg <= 1.0 {
        return Err(Error::invalid(format!(
            "EDD log argument t0_exp + k*d = {arg} must exceed 1"
        )));
    }
    from_exp_space(e_a, arg)
}

fn default_kind() -> ScheduleKind {
    ScheduleKind::Edd
}
fn default_t0() -> f64 {
    1.0
}
fn default_t_n() -> f64 {
    1e-3
}
fn default_n_points() -> usize {
    4
}
fn default_cycles() -> usize {
    3
}
fn default_lambda() -> f64 {
    0.06
}
fn default_rho() -> f64 {
    EDD_MOMENTUM
}
fn default_warmup() -> usize {
    5
}

/// Schedule settings as read from the key-value config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(default = "default_kind")]
    pub kind: ScheduleKind,
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_t_n", alias = "tN", alias = "tn")]
    pub t_n: f64,
    #[serde(default = "default_n_points", alias = "N", alias = "n")]
    pub n_points: usize,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Read-only momentum; validation rejects anything but 0.5.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Re-estimate E(a) from the current parameters every epoch instead of
    /// freezing the initial estimate.
    #[serde(default)]
    pub reestimate_e_a: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            t0: default_t0(),
            t_n: default_t_n(),
            n_points: default_n_points(),
            cycles: default_cycles(),
            lambda: default_lambda(),
            rho: default_rho(),
            warmup: default_warmup(),
            reestimate_e_a: false,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.t0.is_finite() && self.t0 > 0.0) {
            return bad(format!("t0 must be > 0, got {}", self.t0));
        }
        if self.rho != EDD_MOMENTUM {
            return bad(format!("rho is fixed at {EDD_MOMENTUM}, got {}", self.rho));
        }
        match self.kind {
            ScheduleKind::Fixed => {}
            ScheduleKind::Edd => {
                if !(self.lambda.is_finite() && self.lambda > 0.0) {
                    return bad(format!("lambda must be > 0, got {}", self.lambda));
                }
            }
            ScheduleKind::Lts | ScheduleKind::Ets | ScheduleKind::Pcd => {
                if !(self.t_n > 0.0 && self.t0 > self.t_n) {
                    return bad(format!(
                        "schedule needs t0 > tN > 0, got t0={}, tN={}",
                        self.t0, self.t_n
                    ));
                }
                if self.n_points < 1 {
                    return bad("N (n_points) must be >= 1".into());
                }
                if self.kind == ScheduleKind::Pcd && self.cycles < 1 {
                    return bad("PCD cycles must be >= 1".into());
                }
            }
        }
        Ok(())
    }

    pub fn build_list(&self, e_a: f64) -> Result<Option<ScheduleList>> {
        Ok(match self.kind {
            ScheduleKind::Lts => Some(lts_build(e_a, self.t0, self.t_n, self.n_points)?),
            ScheduleKind::Ets => Some(ets_build(e_a, self.t0, self.t_n, self.n_points)?),
            ScheduleKind::Pcd => Some(pcd_build(
                e_a,
                self.t0,
                self.t_n,
                self.n_points,
                self.cycles,
            )?),
            ScheduleKind::Fixed | ScheduleKind::Edd => None,
        })
    }
}

/// Temperature bookkeeping carried through the search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemperatureState {
    pub t: f64,
    /// Unclamped EDD output (equals `t` for the other kinds).
    pub t_raw: f64,
    pub t_exp: f64,
    pub d_exp: f64,
    /// Number of post-warmup schedule updates applied so far.
    pub epoch_k: usize,
    pub e_a: f64,
    pub kind: ScheduleKind,
}

/// Drives the temperature epoch by epoch.
///
/// Epochs `0..warmup` and the first post-warmup epoch run at `t0`. After
/// every post-warmup epoch the controller either advances the prebuilt list
/// (LTS/ETS/PCD, spread uniformly over the post-warmup epochs and held
/// piecewise constant) or applies one EDD update.
#[derive(Debug, Clone)]
pub struct TemperatureController {
    config: ScheduleConfig,
    total_epochs: usize,
    list: Option<ScheduleList>,
    t0_exp: f64,
    state: TemperatureState,
}

impl TemperatureController {
    pub fn new(config: ScheduleConfig, e_a: f64, total_epochs: usize) -> Result<Self> {
        config.validate()?;
        let list = config.build_list(e_a)?;
        let t0_exp = to_exp_space(e_a, config.t0)?;
        let d_exp = list.as_ref().map_or(0.0, |l| l.d_exp);
        let state = TemperatureState {
            t: config.t0,
            t_raw: config.t0,
            t_exp: t0_exp,
            d_exp,
            epoch_k: 0,
            e_a,
            kind: config.kind,
        };
        Ok(Self {
            config,
            total_epochs,
            list,
            t0_exp,
            state,
        })
    }

    pub fn state(&self) -> &TemperatureState {
        &self.state
    }

    pub fn temperature(&self) -> f64 {
        self.state.t
    }

    pub fn list(&self) -> Option<&ScheduleList> {
        self.list.as_ref()
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn in_warmup(&self, epoch: usize) -> bool {
        epoch < self.config.warmup
    }

    fn list_index(&self, epoch: usize, len: usize) -> usize {
        let post = self.total_epochs.saturating_sub(self.config.warmup).max(1);
        let j = epoch.saturating_sub(self.config.warmup);
        (j * len / post).min(len - 1)
    }

    /// Finish `epoch` with the measured mean edge entropy and set the
    /// temperature for the next epoch. `e_a_current` is the latest estimate
    /// of E(a); it only feeds the schedule when re-estimation is enabled.
    pub fn end_epoch(&mut self, epoch: usize, mean_entropy: f64, e_a_current: f64) -> Result<()> {
        if self.in_warmup(epoch) {
            return Ok(());
        }
        let next = epoch + 1;
        match self.config.kind {
            ScheduleKind::Fixed => {}
            ScheduleKind::Lts | ScheduleKind::Ets | ScheduleKind::Pcd => {
                let list = self.list.as_ref().expect("list schedules are prebuilt");
                let idx = self.list_index(next, list.len());
                self.state.t = list.temps[idx];
                self.state.t_raw = self.state.t;
                self.state.epoch_k += 1;
            }
            ScheduleKind::Edd => {
                if self.config.reestimate_e_a {
                    self.state.e_a = e_a_current;
                    self.t0_exp = to_exp_space(e_a_current, self.config.t0)?;
                }
                let k = self.state.epoch_k + 1;
                let d = edd_update_decay(
                    self.state.d_exp,
                    mean_entropy,
                    self.config.lambda,
                    self.config.rho,
                )?;
                let raw = edd_temperature(self.state.e_a, self.t0_exp, k, d)?;
                self.state.d_exp = d;
                self.state.t_raw = raw;
                self.state.t = raw.min(self.state.t);
                self.state.epoch_k = k;
            }
        }
        self.state.t_exp = (self.state.e_a / self.state.t).exp();
        Ok(())
    }
}

/// One row of a schedule preview.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewRow {
    pub epoch: usize,
    pub t: f64,
    pub t_exp: f64,
    pub d_exp: f64,
    pub entropy: Option<f64>,
}

/// Per-epoch temperatures of a schedule without training. EDD needs an
/// entropy signal; `assumed_entropy` stands in for it at every epoch.
pub fn preview_schedule(
    config: &ScheduleConfig,
    e_a: f64,
    epochs: usize,
    assumed_entropy: f64,
) -> Result<Vec<PreviewRow>> {
    let mut ctl = TemperatureController::new(config.clone(), e_a, epochs)?;
    let uses_entropy = config.kind == ScheduleKind::Edd;
    let mut rows = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let s = ctl.state();
        rows.push(PreviewRow {
            epoch,
            t: s.t,
            t_exp: s.t_exp,
            d_exp: s.d_exp,
            entropy: uses_entropy.then_some(assumed_entropy),
        });
        ctl.end_epoch(epoch, assumed_entropy, e_a)?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::beta_entropy;
    use crate::snsoftmax::softmax_t;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn e_a_of_init_scale_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params: Vec<f64> = (0..200_000)
            .map(|_| {
                1e-3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        let e = estimate_e_a(&params).unwrap();
        assert!(rel(e, 3.989e-4) < 0.05, "E(a) = {e}");
        assert!(rel(e, 4e-4) < 0.05);
    }

    #[test]
    fn e_a_small_cases() {
        assert!((estimate_e_a(&[0.001, -0.001]).unwrap() - 0.0005).abs() < 1e-18);
        let fallback = estimate_e_a(&[-0.1, -0.2, 0.0]).unwrap();
        assert!(rel(fallback, 3.989e-4) < 1e-3);
        assert!(estimate_e_a(&[]).is_err());
    }

    #[test]
    fn exp_space_examples() {
        assert!(rel(to_exp_space(4e-4, 1.0).unwrap(), 1.0004) < 1e-7);
        assert!(rel(to_exp_space(4e-4, 1e-3).unwrap(), 1.4918) < 1e-4);
        assert!(rel(to_exp_space(0.4, 0.4).unwrap(), std::f64::consts::E) < 1e-15);
        assert!(to_exp_space(0.0, 1.0).is_err());
        assert!(to_exp_space(1.0, -1.0).is_err());
        assert!(to_exp_space(1.0, 1e-3).is_err());
    }

    #[test]
    fn from_exp_space_examples() {
        assert!(rel(from_exp_space(4e-4, 1.123).unwrap(), 0.00345) < 1e-3);
        assert!(rel(from_exp_space(4e-4, 1.492).unwrap(), 0.001) < 1e-3);
        for t in [1.0, 0.1, 0.001] {
            let back = from_exp_space(4e-4, to_exp_space(4e-4, t).unwrap()).unwrap();
            assert!(rel(back, t) < 1e-12, "t {t} -> {back}");
        }
        assert!(from_exp_space(4e-4, 1.0).is_err());
        assert!(from_exp_space(4e-4, 0.5).is_err());
    }

    #[test]
    fn ets_worked_example() {
        let list = ets_build(4e-4, 1.0, 1e-3, 4).unwrap();
        let table_points = [1.0, 1.123, 1.246, 1.369, 1.492];
        for (p, q) in list.points_exp.iter().zip(table_points) {
            assert!(rel(*p, q) < 1e-3, "{p} vs {q}");
        }
        // Direct evaluation of t = E_a / ln(t_exp) at the exact points.
        let exact = [
            1.0,
            0.0034413984263287735,
            0.0018179453530937904,
            0.0012736518415583538,
            0.001,
        ];
        for (t, e) in list.temps.iter().zip(exact) {
            assert!(rel(*t, e) < 1e-9, "{t} vs {e}");
        }
        assert!(rel(list.d_exp, 0.123) < 2e-3);
    }

    #[test]
    fn ets_single_segment_and_errors() {
        let list = ets_build(4e-4, 1.0, 1e-3, 1).unwrap();
        assert_eq!(list.points_exp.len(), 2);
        assert!(rel(list.temps[0], 1.0) < 1e-9);
        assert!(rel(list.temps[1], 1e-3) < 1e-9);
        assert!(ets_build(4e-4, 1e-3, 1.0, 4).is_err());
        assert!(ets_build(4e-4, 1.0, 1.0, 4).is_err());
        assert!(ets_build(4e-4, 1.0, 1e-3, 0).is_err());
    }

    #[test]
    fn lts_example() {
        let list = lts_build(4e-4, 1.0, 1e-3, 4).unwrap();
        let want = [1.0, 0.75025, 0.5005, 0.25075, 0.001];
        for (t, w) in list.temps.iter().zip(want) {
            assert!((t - w).abs() < 1e-12);
        }
        let diffs: Vec<f64> = list.temps.windows(2).map(|w| w[0] - w[1]).collect();
        assert!(diffs.iter().all(|d| (d - diffs[0]).abs() < 1e-12));
        let single = lts_build(4e-4, 1.0, 1e-3, 1).unwrap();
        assert_eq!(single.temps, vec![1.0, 1e-3]);
        assert!(lts_build(4e-4, 0.5, 0.5, 2).is_err());
    }

    /// Per-step entropy drop list for a dominant-logit vector along `temps`.
    fn entropy_drops(logits: &[f64], temps: &[f64]) -> Vec<f64> {
        let ents: Vec<f64> = temps
            .iter()
            .map(|&t| beta_entropy(&softmax_t(logits, t).unwrap()).unwrap())
            .collect();
        ents.windows(2).map(|w| w[0] - w[1]).collect()
    }

    #[test]
    fn ets_is_smoother_than_lts() {
        let e_a = 4e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut logits: Vec<f64> = (0..5)
                .map(|_| {
                    1e-3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
                .collect();
            logits[0] = 10.0 * e_a;
            let ets = ets_build(e_a, 1.0, 1e-3, 4).unwrap();
            let lts = lts_build(e_a, 1.0, 1e-3, 4).unwrap();
            let max_ets = entropy_drops(&logits, &ets.temps)
                .into_iter()
                .fold(f64::MIN, f64::max);
            let max_lts = entropy_drops(&logits, &lts.temps)
                .into_iter()
                .fold(f64::MIN, f64::max);
            assert!(max_ets < max_lts, "ets {max_ets} lts {max_lts}");
        }
    }

    #[test]
    fn pcd_repeats_ets() {
        let one = pcd_build(4e-4, 1.0, 1e-3, 4, 1).unwrap();
        assert_eq!(one, ets_build(4e-4, 1.0, 1e-3, 4).unwrap());
        let three = pcd_build(4e-4, 1.0, 1e-3, 4, 3).unwrap();
        assert_eq!(three.len(), 15);
        assert_eq!(three.temps[0..5], three.temps[5..10]);
        assert_eq!(three.temps[5..10], three.temps[10..15]);
        let resets = three.temps.windows(2).filter(|w| w[1] > w[0]).count();
        assert_eq!(resets + 1, 3);
        assert!(pcd_build(4e-4, 1.0, 1e-3, 4, 0).is_err());
    }

    #[test]
    fn edd_decay_examples() {
        let d = edd_update_decay(0.0, 5f64.ln(), 0.06, 0.5).unwrap();
        assert!((d - 0.048283).abs() < 1e-6);
        assert_eq!(edd_update_decay(0.3, 0.0, 0.06, 0.5).unwrap(), 0.15);
        assert!(edd_update_decay(0.0, -0.1, 0.06, 0.5).is_err());
        assert!(edd_update_decay(0.0, 1.0, 0.0, 0.5).is_err());
        assert!(edd_update_decay(0.0, 1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn edd_temperature_examples() {
        let t0_exp = to_exp_space(4e-4, 1.0).unwrap();
        assert!(rel(edd_temperature(4e-4, t0_exp, 0, 0.7).unwrap(), 1.0) < 1e-12);
        assert!(rel(edd_temperature(4e-4, t0_exp, 3, 0.0).unwrap(), 1.0) < 1e-12);
        assert!(rel(edd_temperature(4e-4, 1.0004, 1, 0.1226).unwrap(), 0.00345) < 1e-3);
        assert!(rel(edd_temperature(4e-4, 1.0004, 4, 0.1229).unwrap(), 0.001) < 1e-3);
        assert!(edd_temperature(4e-4, 1.0, 0, 0.0).is_err());
    }

    #[test]
    fn edd_controller_is_monotone_and_holds_warmup() {
        let cfg = ScheduleConfig {
            warmup: 3,
            ..ScheduleConfig::default()
        };
        let mut ctl = TemperatureController::new(cfg, 4e-4, 30).unwrap();
        let mut prev = ctl.temperature();
        for epoch in 0..30 {
            if epoch <= 3 {
                assert_eq!(ctl.temperature(), 1.0, "epoch {epoch}");
            }
            // Entropy collapsing sharply: raw EDD temperature would rise again.
            let h = 5f64.ln() * 0.5f64.powi(epoch as i32);
            ctl.end_epoch(epoch, h, 4e-4).unwrap();
            let s = ctl.state();
            assert!(s.t <= prev);
            assert!(s.d_exp >= 0.0);
            assert!(rel(s.t_exp, (s.e_a / s.t).exp()) < 1e-12);
            prev = s.t;
        }
        assert!(ctl.state().t_raw > ctl.state().t);
    }

    #[test]
    fn list_mapping_spreads_points_over_post_warmup_epochs() {
        let cfg = ScheduleConfig {
            kind: ScheduleKind::Ets,
            warmup: 5,
            ..ScheduleConfig::default()
        };
        let rows = preview_schedule(&cfg, 4e-4, 25, 0.0).unwrap();
        let list = ets_build(4e-4, 1.0, 1e-3, 4).unwrap();
        assert!(rows[..5].iter().all(|r| r.t == 1.0));
        // 20 post-warmup epochs, 5 points: 4 epochs each.
        for (j, row) in rows[5..].iter().enumerate() {
            assert_eq!(row.t, list.temps[j / 4], "post-warmup epoch {j}");
        }
    }

    #[test]
    fn warmup_covering_all_epochs_freezes_schedule() {
        for kind in [
            ScheduleKind::Edd,
            ScheduleKind::Ets,
            ScheduleKind::Pcd,
            ScheduleKind::Lts,
        ] {
            let cfg = ScheduleConfig {
                kind,
                warmup: 10,
                ..ScheduleConfig::default()
            };
            let rows = preview_schedule(&cfg, 4e-4, 10, 1.0).unwrap();
            assert!(rows.iter().all(|r| r.t == 1.0));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ScheduleConfig {
            kind: ScheduleKind::Ets,
            t0: 1e-3,
            t_n: 1.0,
            ..ScheduleConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("t0 > tN"), "{err}");
        cfg.t0 = 1.0;
        cfg.t_n = 1e-3;
        cfg.n_points = 0;
        assert!(cfg.validate().is_err());
        cfg.n_points = 4;
        cfg.rho = 0.9;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn exp_space_round_trip(t in 1e-4f64..10.0, e_a in 0.01f64..1.0) {
            prop_assume!(e_a / t < 700.0);
            let back = from_exp_space(e_a, to_exp_space(e_a, t).unwrap()).unwrap();
            prop_assert!(rel(back, t) < 1e-12);
        }

        #[test]
        fn ets_points_equidistant(
            e_a in 1e-3f64..1e-2,
            t0 in 0.5f64..2.0,
            ratio in 1e-3f64..0.05,
            n in 1usize..8,
        ) {
            let t_n = t0 * ratio;
            let list = ets_build(e_a, t0, t_n, n).unwrap();
            let diffs: Vec<f64> = list.points_exp.windows(2).map(|w| w[1] - w[0]).collect();
            for d in &diffs {
                prop_assert!(*d > 0.0);
                prop_assert!(rel(*d, list.d_exp) < 1e-12);
            }
            prop_assert!(list.temps.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(rel(list.temps[0], t0) < 1e-9);
            prop_assert!(rel(list.temps[n], t_n) < 1e-9);
            prop_assert!(list.temps.iter().all(|&t| t > 0.0));
        }

        #[test]
        fn edd_fixed_point_bound(h in 0.0f64..2.0, lambda in 0.01f64..0.5, k in 1usize..40) {
            let mut d = 0.0;
            for _ in 0..k {
                d = edd_update_decay(d, h, lambda, EDD_MOMENTUM).unwrap();
                prop_assert!(d >= 0.0);
            }
            let target = lambda * h;
            prop_assert!((d - target).abs() <= EDD_MOMENTUM.powi(k as i32) * target + 1e-15);
        }
    }
}
