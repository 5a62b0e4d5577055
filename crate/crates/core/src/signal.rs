//! Received-signal composition at chip rate, plus the sample-rate front-end
//! pieces (synthesis, carrier wipe-off, chip pre-integration) and raw I/Q
//! file I/O.
//!
//! One epoch is one 1 ms code period. After carrier wipe-off and chip
//! pre-integration the received vector for a channel is
//!
//! ```text
//! r = b * sqrt(p) * s  +  sum_j A_j * b_j * s(alpha_j)  +  MAI  +  noise
//! ```
//!
//! where `s` is the prompt code, `s(alpha)` its replica delayed by `alpha`
//! chips, `b` the navigation bit of this epoch and `A_j` the interferer
//! amplitude implied by the configured ISR. Spoofing replicas are injected
//! after carrier wipe-off, so they carry no Doppler. The default simulation
//! runs entirely at chip rate with `N = 1024`; the sample-rate operations
//! exist for file-format fidelity and for the timing budget.
//!
//! Injection happens before the 1023 -> 1024 up-sampling, mirroring the
//! receiver chain where replicas are added ahead of chip pre-integration.
//! Delays therefore act on the native 1023-chip sequence and the padding
//! chip is duplicated per component afterwards; shifting the padded code
//! instead would manufacture sidelobes the real channel does not have.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::prn::{CodeId, PrnCode, CA_CODE_LEN, UPSAMPLED_LEN};
use crate::seed::derive_seed;
use crate::{Error, Result};

/// C/A chipping rate.
pub const CHIP_RATE_HZ: f64 = 1.023e6;
/// Sampling rate of the reference receiver configuration.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 5.0e6;
/// Epochs per navigation bit.
pub const DEFAULT_BIT_PERIOD: usize = 20;

const TAG_AUTH_BITS: u64 = 0x01;
const TAG_INTF_BITS: u64 = 0x10;
const TAG_INTF_PHASE: u64 = 0x20;
const TAG_MAI_BITS: u64 = 0x30;
const TAG_NOISE: u64 = 0x40;
const TAG_CODE: u64 = 0x50;

/// A +/-1 navigation bit per epoch, constant over each `bit_period` block.
#[derive(Debug, Clone)]
pub struct NavBitStream {
    bits: Vec<i8>,
    bit_period: usize,
    phase_offset: usize,
    seed: u64,
}

impl NavBitStream {
    /// Draws one equiprobable +/-1 value per bit period. Bit edges fall on
    /// epochs congruent to `phase_offset` modulo `bit_period`.
    pub fn generate(
        seed: u64,
        length_epochs: usize,
        bit_period: usize,
        phase_offset: usize,
    ) -> Result<NavBitStream> {
        if length_epochs == 0 {
            return Err(Error::invalid("bit stream length must be >= 1 epoch"));
        }
        if bit_period == 0 || phase_offset >= bit_period {
            return Err(Error::invalid(format!(
                "need 0 <= phase_offset < bit_period, got {phase_offset} / {bit_period}"
            )));
        }
        let blocks = length_epochs / bit_period + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<i8> = (0..blocks)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        let bits = (0..length_epochs)
            .map(|e| values[(e + bit_period - phase_offset) / bit_period])
            .collect();
        Ok(NavBitStream {
            bits,
            bit_period,
            phase_offset,
            seed,
        })
    }

    pub fn bit(&self, epoch: usize) -> i8 {
        self.bits[epoch]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit_period(&self) -> usize {
        self.bit_period
    }

    pub fn phase_offset(&self) -> usize {
        self.phase_offset
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// How the configured ISR maps onto multiple interferers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsrAccounting {
    /// Every interferer carries the full configured ISR.
    #[default]
    PerInterferer,
    /// The configured ISR is the aggregate power, split evenly.
    Total,
}

/// Spoofing interference: up to three delayed replicas of the prompt code.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterferenceSpec {
    /// Chip delays, each in `1..N`. Delay zero is the authentic signal and
    /// is rejected.
    pub delays: Vec<usize>,
    /// Interference-to-signal ratio in dB (see [`IsrAccounting`]).
    pub isr_db: f64,
    /// Force all interferers to share one bit stream (same values, same
    /// edges) on top of their common chip alignment.
    pub aligned: bool,
    #[serde(default)]
    pub isr_accounting: IsrAccounting,
    /// Explicit per-interferer bit-stream seeds; derived from the scenario
    /// seed when absent.
    #[serde(default)]
    pub bit_seeds: Option<Vec<u64>>,
    /// Explicit per-interferer bit phase offsets; derived when absent.
    #[serde(default)]
    pub bit_offsets: Option<Vec<usize>>,
}

impl InterferenceSpec {
    pub fn new(delays: Vec<usize>, isr_db: f64, aligned: bool) -> InterferenceSpec {
        InterferenceSpec {
            delays,
            isr_db,
            aligned,
            isr_accounting: IsrAccounting::PerInterferer,
            bit_seeds: None,
            bit_offsets: None,
        }
    }
}

/// Additive white Gaussian noise per chip. Disabled by default: after
/// synchronization and integration the interference dominates the noise in
/// the scenarios of interest.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub enabled: bool,
    pub sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            enabled: false,
            sigma: 0.0,
        }
    }
}

/// One other-satellite signal contributing multi-access interference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaiSpec {
    pub prn_id: u8,
    /// Linear power of the foreign signal.
    pub power: f64,
    /// Chip offset of the foreign code relative to the channel epoch.
    pub delay_chips: usize,
}

/// Full description of a simulated channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub prn_id: u8,
    /// Chips per epoch: 1023 native, 1024 up-sampled (default), or any
    /// synthetic length.
    pub n: usize,
    /// Authentic signal power `p` (linear).
    pub signal_power: f64,
    pub interference: Option<InterferenceSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub mai: Vec<MaiSpec>,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_bit_period")]
    pub bit_period: usize,
    /// Bit phase of the authentic stream.
    #[serde(default)]
    pub phase_offset: usize,
}

fn default_bit_period() -> usize {
    DEFAULT_BIT_PERIOD
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            prn_id: 1,
            n: UPSAMPLED_LEN,
            signal_power: 1.0,
            interference: None,
            noise: NoiseSpec::default(),
            mai: Vec::new(),
            epochs: 1000,
            seed: 1,
            bit_period: DEFAULT_BIT_PERIOD,
            phase_offset: 0,
        }
    }
}

/// One received 1 ms chip-rate vector with its ground truth.
#[derive(Debug, Clone)]
pub struct EpochVector {
    pub samples: Vec<f64>,
    pub epoch_index: usize,
    pub truth_bit: i8,
    pub signal_power: f64,
    /// The bit each interferer carried this epoch, for diagnostics.
    pub interferer_bits: Vec<i8>,
}

struct Injected {
    delayed_code: Vec<f64>,
    amplitude: f64,
    bits: NavBitStream,
}

/// A materialized scenario: code replicas, bit streams and amplitudes are
/// precomputed so epoch composition is a pure function of the epoch index.
/// Immutable after construction; disjoint epoch ranges can be composed
/// concurrently.
pub struct Scenario {
    cfg: ScenarioConfig,
    code: PrnCode,
    auth_bits: NavBitStream,
    interferers: Vec<Injected>,
    mai: Vec<Injected>,
    noise_seed: u64,
}

impl Scenario {
    /// Builds the scenario, deriving the code from `prn_id` and `n`
    /// (1023 native, 1024 up-sampled, anything else synthetic).
    pub fn new(cfg: ScenarioConfig) -> Result<Scenario> {
        let code = match cfg.n {
            CA_CODE_LEN => PrnCode::ca(cfg.prn_id)?,
            UPSAMPLED_LEN => PrnCode::ca(cfg.prn_id)?.upsampled()?,
            n => PrnCode::synthetic(derive_seed(cfg.seed, TAG_CODE), n)?,
        };
        Scenario::with_code(cfg, code)
    }

    /// Builds the scenario around an explicit code.
    pub fn with_code(cfg: ScenarioConfig, code: PrnCode) -> Result<Scenario> {
        if code.len() != cfg.n {
            return Err(Error::invalid(format!(
                "code length {} does not match configured N = {}",
                code.len(),
                cfg.n
            )));
        }
        if cfg.epochs == 0 {
            return Err(Error::invalid("scenario must run at least one epoch"));
        }
        if !cfg.signal_power.is_finite() || cfg.signal_power <= 0.0 {
            return Err(Error::invalid("signal power must be positive"));
        }
        if cfg.noise.sigma < 0.0 {
            return Err(Error::invalid("noise sigma must be >= 0"));
        }
        let auth_bits = NavBitStream::generate(
            derive_seed(cfg.seed, TAG_AUTH_BITS),
            cfg.epochs,
            cfg.bit_period,
            cfg.phase_offset,
        )?;

        let mut interferers = Vec::new();
        if let Some(spec) = &cfg.interference {
            if spec.delays.is_empty() || spec.delays.len() > 3 {
                return Err(Error::invalid(format!(
                    "1..=3 interferers supported, got {}",
                    spec.delays.len()
                )));
            }
            if let Some(seeds) = &spec.bit_seeds {
                if seeds.len() != spec.delays.len() {
                    return Err(Error::invalid("bit_seeds length must match delays"));
                }
            }
            if let Some(offsets) = &spec.bit_offsets {
                if offsets.len() != spec.delays.len() {
                    return Err(Error::invalid("bit_offsets length must match delays"));
                }
            }
            let amplitude = interferer_amplitude(
                cfg.signal_power,
                spec.isr_db,
                spec.isr_accounting,
                spec.delays.len(),
            );
            // When aligned, every interferer reuses the first stream so
            // values and edges coincide.
            let shared_seed = spec
                .bit_seeds
                .as_ref()
                .map(|s| s[0])
                .unwrap_or_else(|| derive_seed(cfg.seed, TAG_INTF_BITS));
            let shared_offset = spec
                .bit_offsets
                .as_ref()
                .map(|o| o[0])
                .unwrap_or_else(|| derive_offset(cfg.seed, 0, cfg.bit_period));
            for (j, &delay) in spec.delays.iter().enumerate() {
                let (seed, offset) = if spec.aligned {
                    (shared_seed, shared_offset)
                } else {
                    (
                        spec.bit_seeds
                            .as_ref()
                            .map(|s| s[j])
                            .unwrap_or_else(|| derive_seed(cfg.seed, TAG_INTF_BITS + j as u64)),
                        spec.bit_offsets
                            .as_ref()
                            .map(|o| o[j])
                            .unwrap_or_else(|| derive_offset(cfg.seed, j as u64, cfg.bit_period)),
                    )
                };
                let bits = NavBitStream::generate(seed, cfg.epochs, cfg.bit_period, offset)?;
                interferers.push(Injected {
                    delayed_code: delayed_replica(&code, delay)?,
                    amplitude,
                    bits,
                });
            }
        }

        let mut mai = Vec::new();
        for (j, spec) in cfg.mai.iter().enumerate() {
            if spec.power <= 0.0 {
                return Err(Error::invalid("MAI power must be positive"));
            }
            let foreign = match cfg.n {
                CA_CODE_LEN => PrnCode::ca(spec.prn_id)?,
                UPSAMPLED_LEN => PrnCode::ca(spec.prn_id)?.upsampled()?,
                _ => {
                    return Err(Error::invalid(
                        "MAI requires a native or up-sampled C/A scenario",
                    ))
                }
            };
            let bits = NavBitStream::generate(
                derive_seed(cfg.seed, TAG_MAI_BITS + j as u64),
                cfg.epochs,
                cfg.bit_period,
                derive_offset(cfg.seed, 100 + j as u64, cfg.bit_period),
            )?;
            mai.push(Injected {
                delayed_code: if spec.delay_chips == 0 {
                    foreign.to_f64()
                } else {
                    delayed_replica(&foreign, spec.delay_chips)?
                },
                amplitude: spec.power.sqrt(),
                bits,
            });
        }

        let noise_seed = derive_seed(cfg.seed, TAG_NOISE);
        Ok(Scenario {
            cfg,
            code,
            auth_bits,
            interferers,
            mai,
            noise_seed,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn code(&self) -> &PrnCode {
        &self.code
    }

    pub fn authentic_bits(&self) -> &NavBitStream {
        &self.auth_bits
    }

    /// Composes the received vector for one epoch. Pure: the same scenario
    /// and epoch index always produce the same vector.
    pub fn compose_epoch(&self, epoch_index: usize) -> Result<EpochVector> {
        if epoch_index >= self.cfg.epochs {
            return Err(Error::invalid(format!(
                "epoch {epoch_index} outside configured run of {} epochs",
                self.cfg.epochs
            )));
        }
        let truth_bit = self.auth_bits.bit(epoch_index);
        let scale = truth_bit as f64 * self.cfg.signal_power.sqrt();
        let mut samples: Vec<f64> = self.code.chips().iter().map(|&c| scale * c as f64).collect();

        let mut interferer_bits = Vec::with_capacity(self.interferers.len());
        for intf in &self.interferers {
            let b = intf.bits.bit(epoch_index);
            interferer_bits.push(b);
            add_scaled(&mut samples, &intf.delayed_code, intf.amplitude * b as f64);
        }
        for mai in &self.mai {
            let b = mai.bits.bit(epoch_index);
            add_scaled(&mut samples, &mai.delayed_code, mai.amplitude * b as f64);
        }
        if self.cfg.noise.enabled && self.cfg.noise.sigma > 0.0 {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(self.noise_seed, epoch_index as u64));
            for s in samples.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *s += self.cfg.noise.sigma * z;
            }
        }
        Ok(EpochVector {
            samples,
            epoch_index,
            truth_bit,
            signal_power: self.cfg.signal_power,
            interferer_bits,
        })
    }
}

/// The chip sequence a replica delayed by `delay` contributes to one epoch.
///
/// For an up-sampled 1024-chip code the shift is applied to the native
/// 1023-chip prefix and the final chip of the shifted sequence is then
/// duplicated, matching injection ahead of the up-sampling stage. For any
/// other length the shift is circular over the full code.
fn delayed_replica(code: &PrnCode, delay: usize) -> Result<Vec<f64>> {
    if code.len() == UPSAMPLED_LEN {
        if delay == 0 || delay >= CA_CODE_LEN {
            return Err(Error::invalid(format!(
                "delay must be in 1..{CA_CODE_LEN} native chips, got {delay}"
            )));
        }
        let native = &code.chips()[..CA_CODE_LEN];
        let mut out: Vec<f64> = (0..CA_CODE_LEN)
            .map(|k| native[(k + CA_CODE_LEN - delay) % CA_CODE_LEN] as f64)
            .collect();
        out.push(*out.last().unwrap());
        Ok(out)
    } else {
        if delay == 0 || delay >= code.len() {
            return Err(Error::invalid(format!(
                "delay must be in 1..{}, got {delay}",
                code.len()
            )));
        }
        Ok(code.delayed(delay).iter().map(|&c| c as f64).collect())
    }
}

/// `dst += scale * src`, the inner loop of every injection.
pub fn add_scaled(dst: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Amplitude of one interferer for a given ISR in dB.
pub fn interferer_amplitude(
    signal_power: f64,
    isr_db: f64,
    accounting: IsrAccounting,
    count: usize,
) -> f64 {
    let total = signal_power * 10f64.powf(isr_db / 10.0);
    match accounting {
        IsrAccounting::PerInterferer => total.sqrt(),
        IsrAccounting::Total => (total / count as f64).sqrt(),
    }
}

fn derive_offset(seed: u64, tag: u64, bit_period: usize) -> usize {
    (derive_seed(seed, TAG_INTF_PHASE + tag) % bit_period as u64) as usize
}

// ---------------------------------------------------------------------------
// Sample-rate synthesis and the front-end chain.
// ---------------------------------------------------------------------------

fn samples_per_epoch(fs: f64) -> usize {
    (fs * 1.0e-3).round() as usize
}

#[inline]
fn chip_of_sample(sample: usize, fs: f64, f_chip: f64) -> usize {
    (sample as f64 * f_chip / fs) as usize
}

/// Synthesizes 1 ms of baseband I/Q at sampling rate `fs`: each chip is held
/// for its integer sample span (4 or 5 samples per chip at 5 MHz), with zero
/// carrier and Doppler. The quadrature channel is zero in this idealized
/// scenario.
pub fn sample_rate_synthesize(
    code: &PrnCode,
    bit: i8,
    power: f64,
    fs: f64,
    f_chip: f64,
) -> Result<Vec<Complex64>> {
    if !(fs.is_finite() && f_chip.is_finite() && fs >= f_chip && f_chip > 0.0) {
        return Err(Error::invalid(format!(
            "need fs >= f_chip > 0, got fs = {fs}, f_chip = {f_chip}"
        )));
    }
    if bit != 1 && bit != -1 {
        return Err(Error::invalid("bit must be +1 or -1"));
    }
    let n_samples = samples_per_epoch(fs);
    let last_chip = chip_of_sample(n_samples.saturating_sub(1), fs, f_chip);
    if last_chip >= code.len() {
        return Err(Error::invalid(format!(
            "code holds {} chips but 1 ms at {fs} Hz spans chip {last_chip}",
            code.len()
        )));
    }
    let amp = bit as f64 * power.sqrt();
    let chips = code.chips();
    Ok((0..n_samples)
        .map(|s| Complex64::new(amp * chips[chip_of_sample(s, fs, f_chip)] as f64, 0.0))
        .collect())
}

/// Sums samples within each chip interval, reducing a 1 ms block to one
/// value per chip (1023 for C/A). Chip boundaries come from the accumulated
/// fractional chip phase; only the in-phase component is integrated.
pub fn chip_preintegrate(samples: &[Complex64], fs: f64, f_chip: f64) -> Result<Vec<f64>> {
    if !(fs.is_finite() && f_chip.is_finite() && fs >= f_chip && f_chip > 0.0) {
        return Err(Error::invalid("need fs >= f_chip > 0"));
    }
    let expect = samples_per_epoch(fs);
    if samples.len() != expect {
        return Err(Error::invalid(format!(
            "block holds {} samples, 1 ms at {fs} Hz is {expect}",
            samples.len()
        )));
    }
    let n_chips = (expect as f64 * f_chip / fs).round() as usize;
    let mut out = vec![0.0f64; n_chips];
    for (s, sample) in samples.iter().enumerate() {
        out[chip_of_sample(s, fs, f_chip).min(n_chips - 1)] += sample.re;
    }
    Ok(out)
}

/// Rotates a sample block by `exp(-i (2 pi f_if t + phase))`; with zero
/// frequency and phase this is the identity. Exists so the timing budget can
/// charge a carrier wipe-off stage.
pub fn carrier_wipeoff(
    samples: &[Complex64],
    fs: f64,
    f_if: f64,
    phase: f64,
) -> Result<Vec<Complex64>> {
    if !(fs.is_finite() && fs > 0.0 && f_if.is_finite() && phase.is_finite()) {
        return Err(Error::invalid("wipe-off parameters must be finite, fs > 0"));
    }
    let step = -2.0 * std::f64::consts::PI * f_if / fs;
    Ok(samples
        .iter()
        .enumerate()
        .map(|(n, &z)| {
            let angle = step * n as f64 - phase;
            z * Complex64::new(angle.cos(), angle.sin())
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Raw I/Q files: signed 8-bit, I then Q interleaved, with a sidecar holding
// the quantization scale and run metadata.
// ---------------------------------------------------------------------------

/// Metadata stored next to a raw I/Q capture.
#[derive(Debug, Clone, PartialEq)]
pub struct IqMeta {
    pub sample_rate_hz: f64,
    /// Multiplier that was applied before rounding to `i8`; reading divides
    /// by it. A scale of 0 is replaced by 1 on write.
    pub scale: f64,
    pub prn_id: Option<u8>,
    pub seed: Option<u64>,
}

impl IqMeta {
    pub fn new(sample_rate_hz: f64) -> IqMeta {
        IqMeta {
            sample_rate_hz,
            scale: 0.0,
            prn_id: None,
            seed: None,
        }
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    PathBuf::from(s)
}

/// Quantizes to signed 8-bit with symmetric scaling to +/-127; saturating.
/// Returns the interleaved bytes and the scale actually used.
pub fn quantize_iq(samples: &[Complex64], requested_scale: f64) -> (Vec<i8>, f64) {
    let scale = if requested_scale > 0.0 && requested_scale.is_finite() {
        requested_scale
    } else {
        let peak = samples
            .iter()
            .map(|z| z.re.abs().max(z.im.abs()))
            .fold(0.0f64, f64::max);
        if peak > 0.0 {
            127.0 / peak
        } else {
            1.0
        }
    };
    let mut bytes = Vec::with_capacity(samples.len() * 2);
    for z in samples {
        bytes.push((z.re * scale).round().clamp(-127.0, 127.0) as i8);
        bytes.push((z.im * scale).round().clamp(-127.0, 127.0) as i8);
    }
    (bytes, scale)
}

/// Writes a raw I/Q capture plus its `.meta` sidecar. Returns the scale
/// recorded in the sidecar. `meta.scale == 0` requests automatic scaling.
pub fn write_raw_iq(path: &Path, samples: &[Complex64], meta: &IqMeta) -> Result<f64> {
    let (bytes, scale) = quantize_iq(samples, meta.scale);
    let raw: Vec<u8> = bytes.iter().map(|&b| b as u8).collect();
    fs::write(path, raw)?;
    let mut side = String::new();
    side.push_str("format_version=1\n");
    side.push_str(&format!("sample_rate_hz={}\n", meta.sample_rate_hz));
    side.push_str(&format!("scale={scale}\n"));
    if let Some(prn) = meta.prn_id {
        side.push_str(&format!("prn_id={prn}\n"));
    }
    if let Some(seed) = meta.seed {
        side.push_str(&format!("seed={seed}\n"));
    }
    fs::write(sidecar_path(path), side)?;
    Ok(scale)
}

/// Reads the quantized interleaved stream as written. An empty file is a
/// zero-sample stream; an odd byte count is a format error.
pub fn read_raw_iq_bytes(path: &Path) -> Result<Vec<i8>> {
    let raw = fs::read(path)?;
    if raw.len() % 2 != 0 {
        return Err(Error::Format(format!(
            "raw I/Q file holds {} bytes; interleaved I/Q requires an even count",
            raw.len()
        )));
    }
    Ok(raw.iter().map(|&b| b as i8).collect())
}

/// Reads a capture back to complex samples, applying the sidecar scale when
/// present (scale 1 otherwise).
pub fn read_raw_iq(path: &Path) -> Result<(Vec<Complex64>, IqMeta)> {
    let bytes = read_raw_iq_bytes(path)?;
    let meta = match fs::read_to_string(sidecar_path(path)) {
        Ok(body) => parse_sidecar(&body)?,
        Err(_) => IqMeta {
            sample_rate_hz: 0.0,
            scale: 1.0,
            prn_id: None,
            seed: None,
        },
    };
    let inv = 1.0 / meta.scale;
    let samples = bytes
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0] as f64 * inv, p[1] as f64 * inv))
        .collect();
    Ok((samples, meta))
}

fn parse_sidecar(body: &str) -> Result<IqMeta> {
    let mut meta = IqMeta {
        sample_rate_hz: 0.0,
        scale: 1.0,
        prn_id: None,
        seed: None,
    };
    for line in body.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("sidecar line without '=': {line:?}")))?;
        let bad = |what: &str| Error::Format(format!("sidecar {what}: {value:?}"));
        match key {
            "format_version" => {}
            "sample_rate_hz" => {
                meta.sample_rate_hz = value.parse().map_err(|_| bad("sample rate"))?
            }
            "scale" => meta.scale = value.parse().map_err(|_| bad("scale"))?,
            "prn_id" => meta.prn_id = Some(value.parse().map_err(|_| bad("prn id"))?),
            "seed" => meta.seed = Some(value.parse().map_err(|_| bad("seed"))?),
            _ => {}
        }
    }
    if !(meta.scale.is_finite() && meta.scale > 0.0) {
        return Err(Error::Format("sidecar scale must be positive".into()));
    }
    Ok(meta)
}

// ---------------------------------------------------------------------------
// Chip-level epoch dumps: f32 little-endian, N values per epoch, epoch-major.
// ---------------------------------------------------------------------------

/// Appends epochs to a chip-level dump buffer (f32 LE, epoch-major).
pub fn write_epoch_dump(path: &Path, epochs: &[EpochVector]) -> Result<()> {
    let mut bytes = Vec::new();
    for e in epochs {
        for &v in &e.samples {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a chip-level dump of epochs of length `n`.
pub fn read_epoch_dump(path: &Path, n: usize) -> Result<Vec<Vec<f32>>> {
    let bytes = fs::read(path)?;
    if bytes.len() % (4 * n) != 0 {
        return Err(Error::Format(format!(
            "dump of {} bytes is not a whole number of {n}-chip epochs",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4 * n)
        .map(|epoch| {
            epoch
                .chunks_exact(4)
                .map(|w| f32::from_le_bytes(w.try_into().unwrap()))
                .collect()
        })
        .collect())
}
