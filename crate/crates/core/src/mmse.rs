//! The group-weighted MMSE engine.
//!
//! A channel reduces each epoch to `M = N / g` partial correlations `c`,
//! feeds them into a FIFO of the last `L` vectors while a running `M x M`
//! accumulator tracks `sum c c^T` (new outer product added, evicted one
//! subtracted), and once the window is full solves
//!
//! ```text
//! w = g * p * (R + nu I)^{-1} * 1_M,    R = accumulator / L
//! ```
//!
//! every epoch for the despreading weights. The ridge term `nu` keeps the
//! solve well posed when interference collapses the eigenvalue spread; by
//! default it is a small fraction of the mean diagonal so it scales with
//! received power. The recursive accumulator is rebuilt from the FIFO every
//! `recompute_period` pushes to bound floating-point drift.
//!
//! Weight solves cost `O(M^3)` instead of the `O(N^3)` of the dense
//! despreader, a gain of order `g^3`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlator::{complete_integrate, partial_integrate_dump, DecisionOutput, PartialCorrelations};
use crate::linalg::Matrix;
use crate::prn::{CodeId, PrnCode};
use crate::signal::EpochVector;
use crate::{Error, Result};

/// Group size / window length pairs calibrated for the reference receiver.
/// The last entry is the heavier four-fold window used for the aggregate
/// three-interferer experiment.
pub const CALIBRATED_PAIRS: [(usize, usize); 8] = [
    (1, 1500),
    (2, 1000),
    (4, 1000),
    (8, 1000),
    (16, 500),
    (32, 100),
    (64, 300),
    (64, 1200),
];

/// How the ridge parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuSelection {
    /// `nu = fraction * trace(R) / M`; tracks the received power.
    TraceFraction(f64),
    /// A fixed value, for experiments that must share `nu` across solvers.
    Absolute(f64),
}

impl Default for NuSelection {
    fn default() -> Self {
        NuSelection::TraceFraction(1e-3)
    }
}

/// Where the channel power fed into the weight solve comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerPolicy {
    /// Use the configured `signal_power` (the tracking loops of a real
    /// receiver estimate it continuously; the simulator knows it exactly).
    #[default]
    Configured,
    /// Estimate `p` as the mean of `d^2 / N^2` over the warm-up epochs,
    /// `d` being the matched-filter decision variable.
    EstimateDuringWarmup,
}

/// Configuration of one group-weighted channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MmseConfig {
    /// Group size `g`; must divide `n`.
    pub g: usize,
    /// Sliding window length `L` in epochs.
    pub window: usize,
    #[serde(default)]
    pub nu: NuSelection,
    /// Channel power `p` (linear).
    pub signal_power: f64,
    /// Chips per epoch.
    pub n: usize,
    /// Epochs between weight solves once the window is full; 1 solves every
    /// epoch.
    #[serde(default = "default_solve_period")]
    pub solve_period: usize,
    /// Pushes between drift-correcting rebuilds of the accumulator from the
    /// FIFO contents; defaults to `max(10 L, 10_000)`.
    #[serde(default)]
    pub recompute_period: Option<u64>,
    #[serde(default)]
    pub power_policy: PowerPolicy,
}

fn default_solve_period() -> usize {
    1
}

impl MmseConfig {
    pub fn new(g: usize, window: usize, n: usize) -> MmseConfig {
        MmseConfig {
            g,
            window,
            nu: NuSelection::default(),
            signal_power: 1.0,
            n,
            solve_period: 1,
            recompute_period: None,
            power_policy: PowerPolicy::Configured,
        }
    }

    /// The calibrated window for a group size, when one is on the list.
    pub fn calibrated(g: usize, n: usize) -> Option<MmseConfig> {
        CALIBRATED_PAIRS
            .iter()
            .find(|&&(cg, _)| cg == g)
            .map(|&(cg, l)| MmseConfig::new(cg, l, n))
    }

    pub fn group_count(&self) -> usize {
        self.n / self.g
    }

    pub fn validate(&self) -> Result<()> {
        if self.g == 0 || self.n == 0 || self.n % self.g != 0 {
            return Err(Error::invalid(format!(
                "group size {} does not divide epoch length {}",
                self.g, self.n
            )));
        }
        if self.window == 0 {
            return Err(Error::invalid("window must hold at least one epoch"));
        }
        if self.solve_period == 0 {
            return Err(Error::invalid("solve period must be >= 1"));
        }
        if !(self.signal_power.is_finite() && self.signal_power > 0.0) {
            return Err(Error::invalid("signal power must be positive"));
        }
        match self.nu {
            NuSelection::TraceFraction(f) if !(f.is_finite() && f > 0.0) => {
                return Err(Error::invalid("trace fraction must be positive"))
            }
            NuSelection::Absolute(v) if !(v.is_finite() && v > 0.0) => {
                return Err(Error::invalid("nu must be positive"))
            }
            _ => {}
        }
        if self.window < self.group_count() {
            log::warn!(
                "window L = {} is shorter than M = {}; the autocorrelation \
                 estimate will be rank deficient and lean on the ridge term",
                self.window,
                self.group_count()
            );
        }
        Ok(())
    }

    /// Resolves the ridge parameter against a concrete matrix.
    pub fn resolve_nu(&self, r: &Matrix) -> f64 {
        match self.nu {
            NuSelection::Absolute(v) => v,
            NuSelection::TraceFraction(f) => f * r.trace() / r.dim() as f64,
        }
    }

    fn effective_recompute_period(&self) -> u64 {
        self.recompute_period
            .unwrap_or_else(|| (10 * self.window as u64).max(10_000))
    }
}

/// FIFO of the last `L` partial-correlation vectors plus the running sum of
/// their outer products.
///
/// Storage is one contiguous `M x L` ring buffer sized at construction; it
/// does not grow or shrink afterwards.
#[derive(Debug, Clone)]
pub struct AutocorrWindow {
    m: usize,
    capacity: usize,
    fifo: Vec<f64>,
    head: usize,
    count: usize,
    accumulator: Matrix,
    pushes: u64,
    recompute_period: u64,
    scratch: Vec<f64>,
}

impl AutocorrWindow {
    pub fn new(m: usize, capacity: usize, recompute_period: u64) -> Result<AutocorrWindow> {
        if m == 0 || capacity == 0 {
            return Err(Error::invalid("window dimensions must be positive"));
        }
        Ok(AutocorrWindow {
            m,
            capacity,
            fifo: vec![0.0; m * capacity],
            head: 0,
            count: 0,
            accumulator: Matrix::zeros(m),
            pushes: 0,
            recompute_period,
            scratch: vec![0.0; m],
        })
    }

    pub fn group_count(&self) -> usize {
        self.m
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_full(&self) -> bool {
        self.count == self.capacity
    }

    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    /// Running `sum c c^T` over the vectors currently held.
    pub fn accumulator(&self) -> &Matrix {
        &self.accumulator
    }

    /// The windowed autocorrelation estimate, `accumulator / count`.
    pub fn mean_matrix(&self) -> Matrix {
        if self.count == 0 {
            return Matrix::zeros(self.m);
        }
        self.accumulator.scaled(1.0 / self.count as f64)
    }

    /// Vectors in FIFO order, oldest first.
    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.count).map(move |i| {
            let slot = (self.head + i) % self.capacity;
            &self.fifo[slot * self.m..(slot + 1) * self.m]
        })
    }

    /// Adds the newest vector and, once the window is full, simultaneously
    /// subtracts the evicted one from the accumulator.
    pub fn push(&mut self, c: &PartialCorrelations) -> Result<()> {
        let v = c.values();
        if v.len() != self.m {
            return Err(Error::invalid(format!(
                "vector of dimension {} pushed into window of dimension {}",
                v.len(),
                self.m
            )));
        }
        if self.count < self.capacity {
            let slot = (self.head + self.count) % self.capacity;
            self.fifo[slot * self.m..(slot + 1) * self.m].copy_from_slice(v);
            self.count += 1;
        } else {
            let slot = self.head;
            self.scratch
                .copy_from_slice(&self.fifo[slot * self.m..(slot + 1) * self.m]);
            self.accumulator.add_scaled_outer(&self.scratch, -1.0);
            self.fifo[slot * self.m..(slot + 1) * self.m].copy_from_slice(v);
            self.head = (self.head + 1) % self.capacity;
        }
        self.accumulator.add_scaled_outer(v, 1.0);
        self.pushes += 1;
        if self.recompute_period > 0 && self.pushes % self.recompute_period == 0 {
            self.rebuild();
        }
        Ok(())
    }

    /// Rebuilds the accumulator from the FIFO contents, discarding
    /// accumulated floating-point drift.
    pub fn rebuild(&mut self) {
        let mut fresh = Matrix::zeros(self.m);
        for i in 0..self.count {
            let slot = (self.head + i) % self.capacity;
            fresh.add_scaled_outer(&self.fifo[slot * self.m..(slot + 1) * self.m], 1.0);
        }
        self.accumulator = fresh;
    }
}

/// Mean of outer products over a history of partial-correlation vectors:
/// the batch form of the windowed estimate.
pub fn batch_autocorrelation(history: &[PartialCorrelations]) -> Result<Matrix> {
    if history.is_empty() {
        return Err(Error::invalid("empty history"));
    }
    let m = history[0].group_count();
    let mut sum = Matrix::zeros(m);
    for c in history {
        if c.group_count() != m {
            return Err(Error::invalid("history vectors differ in dimension"));
        }
        sum.add_scaled_outer(c.values(), 1.0);
    }
    Ok(sum.scaled(1.0 / history.len() as f64))
}

/// Group weights and the despreading code they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseWeights {
    /// Length-`M` weight vector.
    pub w: Vec<f64>,
    /// Length-`N` despreading code: `h[j] = w[j / g] * s[j]`.
    pub h: Vec<f64>,
    pub solved_at_epoch: u64,
}

/// Solves the regularized group-weighting system
/// `w = g p (R + nu I)^{-1} 1_M` through a symmetric positive-definite
/// factorization (never an explicit inverse) and expands the despreading
/// code `h = w (group-wise) * s`.
pub fn solve_weights(
    r: &Matrix,
    cfg: &MmseConfig,
    code: &PrnCode,
    solved_at_epoch: u64,
) -> Result<MmseWeights> {
    let m = cfg.group_count();
    if r.dim() != m {
        return Err(Error::invalid(format!(
            "matrix of dimension {} for M = {m}",
            r.dim()
        )));
    }
    if code.len() != cfg.n {
        return Err(Error::invalid(format!(
            "code of {} chips for N = {}",
            code.len(),
            cfg.n
        )));
    }
    if !r.is_finite() {
        return Err(Error::Numeric("non-finite autocorrelation matrix".into()));
    }
    let nu = cfg.resolve_nu(r);
    if !nu.is_finite() || nu < 0.0 {
        return Err(Error::Numeric(format!("resolved nu = {nu}")));
    }
    let mut reg = r.clone();
    reg.add_diagonal(nu);
    let chol = reg.cholesky()?;
    let ones = vec![1.0; m];
    let mut w = chol.solve(&ones);
    let gain = cfg.g as f64 * cfg.signal_power;
    for v in w.iter_mut() {
        *v *= gain;
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite weights".into()));
    }
    let h = code
        .chips()
        .iter()
        .enumerate()
        .map(|(j, &s)| w[j / cfg.g] * s as f64)
        .collect();
    Ok(MmseWeights {
        w,
        h,
        solved_at_epoch,
    })
}

/// The quadratic error surface at a weight vector:
/// `1 - 2 g w^T 1 + w^T R w / p`.
pub fn mse_estimate(w: &[f64], r: &Matrix, cfg: &MmseConfig) -> Result<f64> {
    if w.len() != r.dim() || w.len() != cfg.group_count() {
        return Err(Error::invalid(format!(
            "dimensions disagree: |w| = {}, R is {}x{}, M = {}",
            w.len(),
            r.dim(),
            r.dim(),
            cfg.group_count()
        )));
    }
    let linear: f64 = w.iter().sum();
    Ok(1.0 - 2.0 * cfg.g as f64 * linear + r.quadratic_form(w) / cfg.signal_power)
}

/// One channel of the reduced-complexity correlator: partial
/// integrate-and-dump, window update, per-epoch weight solve, complete
/// integrate-and-dump.
///
/// Single-writer: one channel per stream; independent channels may run on
/// separate threads.
#[derive(Debug, Clone)]
pub struct MmseChannel {
    cfg: MmseConfig,
    code: PrnCode,
    window: AutocorrWindow,
    weights: Option<MmseWeights>,
    unit_weights: Vec<f64>,
    epoch: u64,
    power_sum: f64,
    power_samples: u64,
}

impl MmseChannel {
    pub fn new(cfg: MmseConfig, code: PrnCode) -> Result<MmseChannel> {
        cfg.validate()?;
        if code.len() != cfg.n {
            return Err(Error::invalid(format!(
                "code of {} chips for configured N = {}",
                code.len(),
                cfg.n
            )));
        }
        let m = cfg.group_count();
        let window = AutocorrWindow::new(m, cfg.window, cfg.effective_recompute_period())?;
        Ok(MmseChannel {
            unit_weights: vec![1.0; m],
            cfg,
            code,
            window,
            weights: None,
            epoch: 0,
            power_sum: 0.0,
            power_samples: 0,
        })
    }

    pub fn config(&self) -> &MmseConfig {
        &self.cfg
    }

    pub fn window(&self) -> &AutocorrWindow {
        &self.window
    }

    pub fn weights(&self) -> Option<&MmseWeights> {
        self.weights.as_ref()
    }

    pub fn epochs_processed(&self) -> u64 {
        self.epoch
    }

    pub fn is_warm(&self) -> bool {
        self.window.is_full()
    }

    /// The channel power the solve uses: configured, or the warm-up
    /// estimate once one exists.
    pub fn power_in_use(&self) -> f64 {
        match self.cfg.power_policy {
            PowerPolicy::Configured => self.cfg.signal_power,
            PowerPolicy::EstimateDuringWarmup => {
                if self.power_samples > 0 {
                    self.power_sum / self.power_samples as f64
                } else {
                    self.cfg.signal_power
                }
            }
        }
    }

    /// Processes one epoch: partial integrate-and-dump, window push, weight
    /// solve when due, complete integrate-and-dump. During warm-up the
    /// decision falls back to unit weights (the matched filter) and is
    /// flagged.
    pub fn step(&mut self, r: &EpochVector) -> Result<DecisionOutput> {
        let c = partial_integrate_dump(r, &self.code, self.cfg.g)?;
        self.window.push(&c)?;
        self.epoch += 1;
        if self.window.is_full() {
            let due = match &self.weights {
                None => true,
                Some(w) => self.epoch - w.solved_at_epoch >= self.cfg.solve_period as u64,
            };
            if due {
                let r_ck = self.window.mean_matrix();
                let mut solve_cfg = self.cfg.clone();
                solve_cfg.signal_power = self.power_in_use();
                self.weights = Some(solve_weights(&r_ck, &solve_cfg, &self.code, self.epoch)?);
            }
            let w = &self.weights.as_ref().unwrap().w;
            complete_integrate(&c, w)
        } else {
            if self.cfg.power_policy == PowerPolicy::EstimateDuringWarmup {
                let d = complete_integrate(&c, &self.unit_weights)?.d;
                let n = self.cfg.n as f64;
                self.power_sum += (d / n) * (d / n);
                self.power_samples += 1;
            }
            let mut out = complete_integrate(&c, &self.unit_weights)?;
            out.warmup = true;
            Ok(out)
        }
    }

    /// The error surface value at the current weights and window estimate.
    pub fn current_mse(&self) -> Option<f64> {
        let weights = self.weights.as_ref()?;
        if !self.window.is_full() {
            return None;
        }
        let mut cfg = self.cfg.clone();
        cfg.signal_power = self.power_in_use();
        mse_estimate(&weights.w, &self.window.mean_matrix(), &cfg).ok()
    }

    /// Serializes the full channel state (FIFO, accumulator, weights,
    /// counters, code) to the versioned binary snapshot layout.
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        fs::write(path, self.snapshot_bytes())?;
        Ok(())
    }

    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        push_u32(&mut out, self.cfg.g as u32);
        push_u32(&mut out, self.cfg.n as u32);
        push_u32(&mut out, self.window.m as u32);
        push_u32(&mut out, self.window.capacity as u32);
        push_u32(&mut out, self.window.count as u32);
        push_u32(&mut out, self.cfg.solve_period as u32);
        push_u64(&mut out, self.epoch);
        push_u64(&mut out, self.window.pushes);
        push_u64(&mut out, self.window.recompute_period);
        match self.cfg.nu {
            NuSelection::TraceFraction(f) => {
                out.push(0);
                push_f64(&mut out, f);
            }
            NuSelection::Absolute(v) => {
                out.push(1);
                push_f64(&mut out, v);
            }
        }
        push_f64(&mut out, self.cfg.signal_power);
        out.push(match self.cfg.power_policy {
            PowerPolicy::Configured => 0,
            PowerPolicy::EstimateDuringWarmup => 1,
        });
        push_f64(&mut out, self.power_sum);
        push_u64(&mut out, self.power_samples);
        for v in self.window.vectors() {
            for &x in v {
                push_f64(&mut out, x);
            }
        }
        for &x in self.window.accumulator.as_slice() {
            push_f64(&mut out, x);
        }
        match &self.weights {
            None => out.push(0),
            Some(w) => {
                out.push(1);
                push_u64(&mut out, w.solved_at_epoch);
                for &x in &w.w {
                    push_f64(&mut out, x);
                }
                for &x in &w.h {
                    push_f64(&mut out, x);
                }
            }
        }
        match self.code.id() {
            CodeId::Gps(prn) => {
                out.push(0);
                push_u64(&mut out, *prn as u64);
            }
            CodeId::Synthetic(seed) => {
                out.push(1);
                push_u64(&mut out, *seed);
            }
        }
        for &c in self.code.chips() {
            out.push(c as u8);
        }
        out
    }

    /// Restores a channel from a snapshot file. Continuing a restored
    /// channel reproduces the decisions of the uninterrupted run exactly.
    pub fn load_snapshot(path: &Path) -> Result<MmseChannel> {
        let bytes = fs::read(path)?;
        Self::from_snapshot_bytes(&bytes)
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<MmseChannel> {
        let mut rd = SnapshotReader::new(bytes);
        let magic = rd.take(SNAPSHOT_MAGIC.len())?;
        if magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("not a channel snapshot".into()));
        }
        let g = rd.take_u32()? as usize;
        let n = rd.take_u32()? as usize;
        let m = rd.take_u32()? as usize;
        let capacity = rd.take_u32()? as usize;
        let count = rd.take_u32()? as usize;
        let solve_period = rd.take_u32()? as usize;
        let epoch = rd.take_u64()?;
        let pushes = rd.take_u64()?;
        let recompute_period = rd.take_u64()?;
        let nu = match rd.take_u8()? {
            0 => NuSelection::TraceFraction(rd.take_f64()?),
            1 => NuSelection::Absolute(rd.take_f64()?),
            k => return Err(Error::Format(format!("unknown nu kind {k}"))),
        };
        let signal_power = rd.take_f64()?;
        let power_policy = match rd.take_u8()? {
            0 => PowerPolicy::Configured,
            1 => PowerPolicy::EstimateDuringWarmup,
            k => return Err(Error::Format(format!("unknown power policy {k}"))),
        };
        let power_sum = rd.take_f64()?;
        let power_samples = rd.take_u64()?;
        if g == 0 || n == 0 || m == 0 || capacity == 0 || g * m != n || count > capacity {
            return Err(Error::Format("inconsistent snapshot dimensions".into()));
        }
        let mut fifo = vec![0.0f64; m * capacity];
        for i in 0..count {
            for j in 0..m {
                fifo[i * m + j] = rd.take_f64()?;
            }
        }
        let mut accumulator = Matrix::zeros(m);
        for i in 0..m {
            for j in 0..m {
                accumulator.set(i, j, rd.take_f64()?);
            }
        }
        let weights = match rd.take_u8()? {
            0 => None,
            1 => {
                let solved_at_epoch = rd.take_u64()?;
                let mut w = vec![0.0f64; m];
                for v in w.iter_mut() {
                    *v = rd.take_f64()?;
                }
                let mut h = vec![0.0f64; n];
                for v in h.iter_mut() {
                    *v = rd.take_f64()?;
                }
                Some(MmseWeights {
                    w,
                    h,
                    solved_at_epoch,
                })
            }
            k => return Err(Error::Format(format!("unknown weights flag {k}"))),
        };
        let id = match rd.take_u8()? {
            0 => CodeId::Gps(rd.take_u64()? as u8),
            1 => CodeId::Synthetic(rd.take_u64()?),
            k => return Err(Error::Format(format!("unknown code id kind {k}"))),
        };
        let chip_bytes = rd.take(n)?;
        let chips: Vec<i8> = chip_bytes.iter().map(|&b| b as i8).collect();
        let code = PrnCode::from_chips(chips, id)
            .map_err(|e| Error::Format(format!("snapshot code: {e}")))?;
        rd.expect_end()?;

        let cfg = MmseConfig {
            g,
            window: capacity,
            nu,
            signal_power,
            n,
            solve_period,
            recompute_period: Some(recompute_period),
            power_policy,
        };
        cfg.validate()?;
        Ok(MmseChannel {
            unit_weights: vec![1.0; m],
            cfg,
            code,
            window: AutocorrWindow {
                m,
                capacity,
                fifo,
                head: 0,
                count,
                accumulator,
                pushes,
                recompute_period,
                scratch: vec![0.0; m],
            },
            weights,
            epoch,
            power_sum,
            power_samples,
        })
    }
}

const SNAPSHOT_MAGIC: &[u8] = b"GWMMSE1\0";

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct SnapshotReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> SnapshotReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        SnapshotReader { bytes, at: 0 }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.at + len > self.bytes.len() {
            return Err(Error::Format("snapshot truncated".into()));
        }
        let s = &self.bytes[self.at..self.at + len];
        self.at += len;
        Ok(s)
    }

    fn take_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn expect_end(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after snapshot",
                self.bytes.len() - self.at
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::{full_mmse_oracle, matched_filter_decision};
    use crate::signal::{InterferenceSpec, Scenario, ScenarioConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pc(values: Vec<f64>, g: usize) -> PartialCorrelations {
        // Builds partial correlations through the public chain so the type
        // stays construction-checked.
        let n = values.len() * g;
        let code = PrnCode::from_chips(vec![1i8; n], CodeId::Synthetic(0)).unwrap();
        let mut samples = Vec::with_capacity(n);
        for v in &values {
            samples.push(*v);
            samples.extend(std::iter::repeat(0.0).take(g - 1));
        }
        let epoch = EpochVector {
            samples,
            epoch_index: 0,
            truth_bit: 1,
            signal_power: 1.0,
            interferer_bits: Vec::new(),
        };
        partial_integrate_dump(&epoch, &code, g).unwrap()
    }

    fn random_pc(m: usize, g: usize, rng: &mut ChaCha8Rng) -> PartialCorrelations {
        pc((0..m).map(|_| rng.random_range(-2.0..2.0)).collect(), g)
    }

    #[test]
    fn repeated_push_of_dyadic_vector_is_exact() {
        // Products of powers of two accumulate without rounding, so the sum
        // of L identical outer products must be exactly L times one of them.
        let v = vec![1.0, -2.0, 0.5, 4.0];
        let l = 37;
        let mut win = AutocorrWindow::new(4, l, 0).unwrap();
        let c = pc(v.clone(), 2);
        for _ in 0..l {
            win.push(&c).unwrap();
        }
        assert!(win.is_full());
        let mut expect = Matrix::zeros(4);
        expect.add_scaled_outer(&v, l as f64);
        assert_eq!(win.accumulator().as_slice(), expect.as_slice());
    }

    #[test]
    fn first_push_is_one_outer_product() {
        let v = vec![0.75, -1.5, 3.0];
        let mut win = AutocorrWindow::new(3, 10, 0).unwrap();
        win.push(&pc(v.clone(), 1)).unwrap();
        let mut expect = Matrix::zeros(3);
        expect.add_scaled_outer(&v, 1.0);
        assert_eq!(win.accumulator().as_slice(), expect.as_slice());
        assert_eq!(win.count(), 1);
        assert!(!win.is_full());
    }

    #[test]
    fn sliding_window_tracks_batch_estimate() {
        let m = 8;
        let l = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut win = AutocorrWindow::new(m, l, 0).unwrap();
        let mut history = Vec::new();
        for _ in 0..(2 * l) {
            let c = random_pc(m, 4, &mut rng);
            win.push(&c).unwrap();
            history.push(c);
        }
        let batch = batch_autocorrelation(&history[history.len() - l..]).unwrap();
        let recursive = win.mean_matrix();
        for i in 0..m {
            for j in 0..m {
                let err = (recursive.at(i, j) - batch.at(i, j)).abs();
                assert!(err <= 1e-9 * batch.at(i, j).abs().max(1.0));
            }
        }
        // The FIFO holds exactly the last L vectors, oldest first.
        let held: Vec<Vec<f64>> = win.vectors().map(|v| v.to_vec()).collect();
        assert_eq!(held.len(), l);
        for (kept, pushed) in held.iter().zip(&history[history.len() - l..]) {
            assert_eq!(kept.as_slice(), pushed.values());
        }
    }

    #[test]
    fn push_rejects_dimension_mismatch() {
        let mut win = AutocorrWindow::new(4, 10, 0).unwrap();
        assert!(win.push(&pc(vec![1.0; 3], 1)).is_err());
    }

    #[test]
    fn batch_autocorrelation_basics() {
        let e1 = pc(vec![1.0, 0.0, 0.0], 1);
        let m = batch_autocorrelation(&vec![e1; 5]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == 0 && j == 0 { 1.0 } else { 0.0 };
                assert_eq!(m.at(i, j), expect);
            }
        }
        assert!(batch_autocorrelation(&[]).is_err());
    }

    #[test]
    fn batch_autocorrelation_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let history: Vec<PartialCorrelations> =
                (0..40).map(|_| random_pc(6, 2, &mut rng)).collect();
            let m = batch_autocorrelation(&history).unwrap();
            assert!(m.max_asymmetry() <= 1e-12);
            let na = nalgebra::DMatrix::from_fn(6, 6, |i, j| m.at(i, j));
            let eig = na.symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&ev| ev >= -1e-10));
        }
    }

    #[test]
    fn solve_weights_diagonal_closed_form() {
        let n = 32;
        let g = 4;
        let code = PrnCode::synthetic(1, n).unwrap();
        let sigma2 = 2.5;
        let nu = 0.5;
        let mut cfg = MmseConfig::new(g, 100, n);
        cfg.nu = NuSelection::Absolute(nu);
        cfg.signal_power = 3.0;
        let r = Matrix::identity(n / g).scaled(sigma2);
        let weights = solve_weights(&r, &cfg, &code, 7).unwrap();
        let expect = g as f64 * cfg.signal_power / (sigma2 + nu);
        for &w in &weights.w {
            assert!((w - expect).abs() < 1e-12);
        }
        assert_eq!(weights.solved_at_epoch, 7);
        // h carries the group structure.
        for (j, &h) in weights.h.iter().enumerate() {
            assert_eq!(h, weights.w[j / g] * code.chips()[j] as f64);
        }
    }

    #[test]
    fn solve_weights_clean_signal_matrix_is_uniform() {
        // R = p g^2 1 1^T is invariant under coordinate permutation, so the
        // solution must be a multiple of the ones vector:
        // w = g p / (nu + p g^2 M) each.
        let n = 64;
        let g = 8;
        let m = n / g;
        let p = 2.0;
        let nu = 1e-2;
        let code = PrnCode::synthetic(2, n).unwrap();
        let mut r = Matrix::zeros(m);
        r.add_scaled_outer(&vec![1.0; m], p * (g * g) as f64);
        let mut cfg = MmseConfig::new(g, 100, n);
        cfg.nu = NuSelection::Absolute(nu);
        cfg.signal_power = p;
        let weights = solve_weights(&r, &cfg, &code, 0).unwrap();
        let expect = g as f64 * p / (nu + p * (g * g * m) as f64);
        // The ridge-dominated system has condition ~ p g^2 M / nu, so allow
        // the matching loss of precision.
        for &w in &weights.w {
            assert!((w - expect).abs() <= 1e-9 * expect.abs(), "{w} vs {expect}");
        }
    }

    #[test]
    fn solve_weights_is_bitwise_deterministic() {
        let n = 64;
        let g = 8;
        let code = PrnCode::synthetic(5, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let history: Vec<PartialCorrelations> =
            (0..50).map(|_| random_pc(n / g, g, &mut rng)).collect();
        let r = batch_autocorrelation(&history).unwrap();
        let cfg = MmseConfig::new(g, 50, n);
        let a = solve_weights(&r, &cfg, &code, 0).unwrap();
        let b = solve_weights(&r, &cfg, &code, 0).unwrap();
        for (x, y) in a.w.iter().zip(&b.w) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn solve_weights_flags_singular_when_nu_vanishes() {
        let n = 16;
        let g = 4;
        let code = PrnCode::synthetic(9, n).unwrap();
        let mut r = Matrix::zeros(n / g);
        r.add_scaled_outer(&[1.0, 2.0, 3.0, 4.0], 1.0);
        let mut cfg = MmseConfig::new(g, 10, n);
        cfg.nu = NuSelection::Absolute(f64::MIN_POSITIVE);
        assert!(matches!(
            solve_weights(&r, &cfg, &code, 0),
            Err(Error::SingularMatrix(_))
        ));

        let mut bad = Matrix::identity(n / g);
        bad.set(0, 0, f64::INFINITY);
        assert!(matches!(
            solve_weights(&bad, &MmseConfig::new(g, 10, n), &code, 0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn mse_of_zero_weights_is_one() {
        let cfg = MmseConfig::new(4, 10, 16);
        let r = Matrix::identity(4);
        assert_eq!(mse_estimate(&[0.0; 4], &r, &cfg).unwrap(), 1.0);
        assert!(mse_estimate(&[0.0; 3], &r, &cfg).is_err());
    }

    #[test]
    fn solved_weights_minimize_regularized_mse() {
        let n = 32;
        let g = 4;
        let m = n / g;
        let code = PrnCode::synthetic(31, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let history: Vec<PartialCorrelations> =
            (0..64).map(|_| random_pc(m, g, &mut rng)).collect();
        let r = batch_autocorrelation(&history).unwrap();
        let mut cfg = MmseConfig::new(g, 64, n);
        cfg.nu = NuSelection::Absolute(0.05);
        let weights = solve_weights(&r, &cfg, &code, 0).unwrap();

        let mut reg = r.clone();
        reg.add_diagonal(0.05);
        let at = |w: &[f64]| mse_estimate(w, &reg, &cfg).unwrap();
        let base = at(&weights.w);
        let norm = weights.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..100 {
            let mut delta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dn = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            for d in delta.iter_mut() {
                *d *= 1e-3 * norm / dn;
            }
            let probe: Vec<f64> = weights.w.iter().zip(&delta).map(|(w, d)| w + d).collect();
            assert!(at(&probe) >= base - 1e-15);
        }
    }

    /// With g = 1 the grouped solution has full design freedom and must
    /// coincide with the dense solve on the same epochs and ridge.
    #[test]
    fn g1_reduction_matches_dense_reference() {
        let n = 32;
        let cfg = ScenarioConfig {
            n,
            epochs: 200,
            seed: 1234,
            interference: Some(InterferenceSpec::new(vec![3, 11], 20.0, false)),
            ..ScenarioConfig::default()
        };
        let scenario = Scenario::new(cfg).unwrap();
        let code = scenario.code().clone();
        let epochs: Vec<EpochVector> = (0..200)
            .map(|e| scenario.compose_epoch(e).unwrap())
            .collect();

        let nu = 0.05;
        let dense = full_mmse_oracle(&epochs, &code, 1.0, nu).unwrap();

        let history: Vec<PartialCorrelations> = epochs
            .iter()
            .map(|e| partial_integrate_dump(e, &code, 1).unwrap())
            .collect();
        let r = batch_autocorrelation(&history).unwrap();
        let mut mcfg = MmseConfig::new(1, 200, n);
        mcfg.nu = NuSelection::Absolute(nu);
        let grouped = solve_weights(&r, &mcfg, &code, 0).unwrap();

        let scale = dense.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        for (a, b) in grouped.h.iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
        }
    }

    fn interfered_scenario(epochs: usize, seed: u64) -> Scenario {
        let native = PrnCode::ca(1).unwrap();
        let delays: Vec<usize> = crate::prn::worst_case_delays(&native, 1)
            .unwrap()
            .iter()
            .map(|&(lag, _)| lag)
            .collect();
        Scenario::new(ScenarioConfig {
            interference: Some(InterferenceSpec::new(delays, 30.0, false)),
            epochs,
            seed,
            ..ScenarioConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn warmup_flag_clears_when_window_fills() {
        let l = 40;
        let scenario = interfered_scenario(l + 10, 5);
        let mut cfg = MmseConfig::new(64, l, 1024);
        cfg.signal_power = 1.0;
        let mut chan = MmseChannel::new(cfg, scenario.code().clone()).unwrap();
        for e in 0..(l + 10) {
            let out = chan.step(&scenario.compose_epoch(e).unwrap()).unwrap();
            assert_eq!(out.warmup, e + 1 < l, "epoch {e}");
        }
        assert!(chan.current_mse().is_some());
    }

    #[test]
    fn clean_stream_decisions_match_matched_filter() {
        let cfg = ScenarioConfig {
            epochs: 200,
            seed: 3,
            ..ScenarioConfig::default()
        };
        let scenario = Scenario::new(cfg).unwrap();
        let mut chan =
            MmseChannel::new(MmseConfig::new(64, 50, 1024), scenario.code().clone()).unwrap();
        for e in 0..200 {
            let epoch = scenario.compose_epoch(e).unwrap();
            let mmse = chan.step(&epoch).unwrap();
            let mf = matched_filter_decision(&epoch, scenario.code()).unwrap();
            assert_eq!(mmse.bit_decision, mf.bit_decision, "epoch {e}");
            assert_eq!(mmse.bit_decision, epoch.truth_bit);
        }
    }

    #[test]
    fn mmse_beats_matched_filter_under_interference() {
        let epochs = 10_000 + 300;
        let scenario = interfered_scenario(epochs, 77);
        let cfg = MmseConfig::new(64, 300, 1024);
        let mut chan = MmseChannel::new(cfg, scenario.code().clone()).unwrap();
        let mut mmse_errors = 0usize;
        let mut mf_errors = 0usize;
        let mut scored = 0usize;
        for e in 0..epochs {
            let epoch = scenario.compose_epoch(e).unwrap();
            let mmse = chan.step(&epoch).unwrap();
            let mf = matched_filter_decision(&epoch, scenario.code()).unwrap();
            if !mmse.warmup {
                scored += 1;
                mmse_errors += (mmse.bit_decision != epoch.truth_bit) as usize;
                mf_errors += (mf.bit_decision != epoch.truth_bit) as usize;
            }
        }
        assert!(scored >= 10_000);
        assert!(
            mmse_errors < mf_errors,
            "mmse {mmse_errors} vs mf {mf_errors} over {scored}"
        );
        assert!(mf_errors as f64 / scored as f64 > 0.4);
    }

    #[test]
    fn power_estimate_converges_during_clean_warmup() {
        let cfg = ScenarioConfig {
            signal_power: 4.0,
            epochs: 120,
            seed: 8,
            ..ScenarioConfig::default()
        };
        let scenario = Scenario::new(cfg).unwrap();
        let mut mcfg = MmseConfig::new(64, 100, 1024);
        mcfg.signal_power = 1.0; // deliberately wrong
        mcfg.power_policy = PowerPolicy::EstimateDuringWarmup;
        let mut chan = MmseChannel::new(mcfg, scenario.code().clone()).unwrap();
        for e in 0..120 {
            chan.step(&scenario.compose_epoch(e).unwrap()).unwrap();
        }
        assert!((chan.power_in_use() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn snapshot_round_trips_and_resumes_exactly() {
        let epochs = 700;
        let scenario = interfered_scenario(epochs, 13);
        let cfg = MmseConfig::new(64, 300, 1024);

        let mut reference = MmseChannel::new(cfg.clone(), scenario.code().clone()).unwrap();
        let mut interrupted = MmseChannel::new(cfg, scenario.code().clone()).unwrap();
        for e in 0..400 {
            let epoch = scenario.compose_epoch(e).unwrap();
            reference.step(&epoch).unwrap();
            interrupted.step(&epoch).unwrap();
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("channel.snap");
        interrupted.save_snapshot(&path).unwrap();
        let mut restored = MmseChannel::load_snapshot(&path).unwrap();

        // Identical bytes when immediately re-saved.
        assert_eq!(interrupted.snapshot_bytes(), restored.snapshot_bytes());

        for e in 400..epochs {
            let epoch = scenario.compose_epoch(e).unwrap();
            let a = reference.step(&epoch).unwrap();
            let b = restored.step(&epoch).unwrap();
            assert_eq!(a.d.to_bits(), b.d.to_bits(), "epoch {e}");
        }
    }

    #[test]
    fn snapshot_rejects_corruption() {
        let scenario = interfered_scenario(10, 4);
        let chan = MmseChannel::new(MmseConfig::new(64, 5, 1024), scenario.code().clone()).unwrap();
        let mut bytes = chan.snapshot_bytes();
        bytes[0] ^= 0xff;
        assert!(MmseChannel::from_snapshot_bytes(&bytes).is_err());
        let bytes = chan.snapshot_bytes();
        assert!(MmseChannel::from_snapshot_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn calibrated_pairs_are_available() {
        assert!(CALIBRATED_PAIRS.contains(&(64, 300)));
        let cfg = MmseConfig::calibrated(64, 1024).unwrap();
        assert_eq!(cfg.window, 300);
        assert!(MmseConfig::calibrated(3, 1024).is_none());
        // g = 64, L = 300 keeps M x L = 4800 samples in the FIFO.
        assert_eq!(cfg.group_count() * cfg.window, 4800);
    }
}
