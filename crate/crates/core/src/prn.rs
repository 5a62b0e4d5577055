//! GPS C/A Gold codes, synthetic short codes, and their correlation
//! structure.
//!
//! The C/A generator is the standard pair of 10-stage LFSRs: G1 with taps
//! 3 and 10, G2 with taps 2, 3, 6, 8, 9 and 10, both seeded with all ones.
//! The satellite-specific code XORs the G1 output with two phase-selector
//! taps of G2. Binary output maps 1 to chip -1 and 0 to chip +1 (the BPSK
//! convention), which makes the first ten chips of PRN 1 equal octal 1440.
//!
//! Correlation profiles are exact integer sums over circular lags. For the
//! length-1023 Gold family every off-peak value falls in {-65, -1, 63}; the
//! largest magnitudes mark the delays where a synchronized spoofing replica
//! couples most strongly into the prompt correlator.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Chips in one native C/A code period.
pub const CA_CODE_LEN: usize = 1023;
/// Chips per epoch after power-of-two up-sampling.
pub const UPSAMPLED_LEN: usize = 1024;

/// G2 phase-selector taps (1-based register positions) for PRN 1..=32.
const G2_TAPS: [(usize, usize); 32] = [
    (2, 6),
    (3, 7),
    (4, 8),
    (5, 9),
    (1, 9),
    (2, 10),
    (1, 8),
    (2, 9),
    (3, 10),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (1, 4),
    (2, 5),
    (3, 6),
    (4, 7),
    (5, 8),
    (6, 9),
    (1, 3),
    (4, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 6),
    (2, 7),
    (3, 8),
    (4, 9),
];

/// Identifies where a spreading code came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeId {
    /// GPS satellite PRN number, 1..=32.
    Gps(u8),
    /// Pseudo-random synthetic code tagged with its seed.
    Synthetic(u64),
}

/// A +/-1 spreading sequence.
///
/// Immutable after construction; every operation on codes returns a new
/// value, so codes can be shared freely across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrnCode {
    chips: Vec<i8>,
    id: CodeId,
}

impl PrnCode {
    /// Generates the native 1023-chip C/A code for a satellite.
    pub fn ca(prn_id: u8) -> Result<PrnCode> {
        if !(1..=32).contains(&prn_id) {
            return Err(Error::invalid(format!(
                "PRN id must be in 1..=32, got {prn_id}"
            )));
        }
        let (t1, t2) = G2_TAPS[(prn_id - 1) as usize];
        let mut g1 = [1u8; 10];
        let mut g2 = [1u8; 10];
        let mut chips = Vec::with_capacity(CA_CODE_LEN);
        for _ in 0..CA_CODE_LEN {
            let bit = g1[9] ^ g2[t1 - 1] ^ g2[t2 - 1];
            chips.push(if bit == 1 { -1 } else { 1 });
            let f1 = g1[2] ^ g1[9];
            let f2 = g2[1] ^ g2[2] ^ g2[5] ^ g2[7] ^ g2[8] ^ g2[9];
            g1.rotate_right(1);
            g2.rotate_right(1);
            g1[0] = f1;
            g2[0] = f2;
        }
        Ok(PrnCode {
            chips,
            id: CodeId::Gps(prn_id),
        })
    }

    /// Deterministic pseudo-random +/-1 code of arbitrary length (>= 2).
    /// Same seed, same code; meant for small oracle tests.
    pub fn synthetic(seed: u64, length: usize) -> Result<PrnCode> {
        if length < 2 {
            return Err(Error::invalid(format!(
                "synthetic code length must be >= 2, got {length}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chips = (0..length)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Ok(PrnCode {
            chips,
            id: CodeId::Synthetic(seed),
        })
    }

    /// Builds a code directly from chips. Every value must be +/-1.
    pub fn from_chips(chips: Vec<i8>, id: CodeId) -> Result<PrnCode> {
        if chips.len() < 2 {
            return Err(Error::invalid("code must hold at least 2 chips"));
        }
        if chips.iter().any(|&c| c != 1 && c != -1) {
            return Err(Error::invalid("chips must be +1 or -1"));
        }
        Ok(PrnCode { chips, id })
    }

    /// Pads a native 1023-chip code to 1024 chips by duplicating the final
    /// chip, so the epoch length is a power of two and divisible by the
    /// usual group sizes.
    pub fn upsampled(&self) -> Result<PrnCode> {
        if self.len() != CA_CODE_LEN {
            return Err(Error::invalid(format!(
                "up-sampling expects a {CA_CODE_LEN}-chip code, got {}",
                self.len()
            )));
        }
        let mut chips = self.chips.clone();
        chips.push(*chips.last().unwrap());
        Ok(PrnCode {
            chips,
            id: self.id.clone(),
        })
    }

    pub fn chips(&self) -> &[i8] {
        &self.chips
    }

    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    pub fn id(&self) -> &CodeId {
        &self.id
    }

    /// Sum of all chips; +/-1 for a balanced C/A code.
    pub fn chip_sum(&self) -> i32 {
        self.chips.iter().map(|&c| c as i32).sum()
    }

    /// The code circularly delayed by `delay` chips:
    /// `out[n] = self[(n - delay) mod len]`. Correlating the prompt code
    /// against `delayed(alpha)` reproduces the autocorrelation value at
    /// lag `alpha`.
    pub fn delayed(&self, delay: usize) -> Vec<i8> {
        let n = self.len();
        let d = delay % n;
        let mut out = Vec::with_capacity(n);
        out.extend_from_slice(&self.chips[n - d..]);
        out.extend_from_slice(&self.chips[..n - d]);
        out
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.chips.iter().map(|&c| c as f64).collect()
    }

    /// Writes the code as text, one chip per line (`+1` / `-1`).
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.len() * 3);
        for &c in &self.chips {
            out.push_str(if c == 1 { "+1\n" } else { "-1\n" });
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Reads a text code written by [`PrnCode::write_text`]. Accepts `1`,
    /// `+1` and `-1` lines; blank lines are ignored.
    pub fn read_text(path: &Path) -> Result<PrnCode> {
        let body = fs::read_to_string(path)?;
        let mut chips = Vec::new();
        for (lineno, line) in body.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "1" | "+1" => chips.push(1),
                "-1" => chips.push(-1),
                other => {
                    return Err(Error::Format(format!(
                        "line {}: expected +1 or -1, got {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        PrnCode::from_chips(chips, CodeId::Synthetic(0))
    }

    /// Writes the packed sign-bit form: a little-endian `u32` chip count
    /// followed by the chips packed 8 per byte, most significant bit first,
    /// with a set bit standing for chip -1. The final byte is zero-padded.
    pub fn write_packed(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(4 + self.len().div_ceil(8));
        bytes.extend_from_slice(&(self.len() as u32).to_le_bytes());
        let mut acc = 0u8;
        for (i, &c) in self.chips.iter().enumerate() {
            acc <<= 1;
            if c == -1 {
                acc |= 1;
            }
            if i % 8 == 7 {
                bytes.push(acc);
                acc = 0;
            }
        }
        let rem = self.len() % 8;
        if rem != 0 {
            bytes.push(acc << (8 - rem));
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    /// Reads a packed sign-bit code written by [`PrnCode::write_packed`].
    pub fn read_packed(path: &Path) -> Result<PrnCode> {
        let bytes = fs::read(path)?;
        if bytes.len() < 4 {
            return Err(Error::Format("packed code shorter than its header".into()));
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let need = len.div_ceil(8);
        if bytes.len() != 4 + need {
            return Err(Error::Format(format!(
                "packed code body holds {} bytes, header implies {need}",
                bytes.len() - 4
            )));
        }
        let mut chips = Vec::with_capacity(len);
        for i in 0..len {
            let byte = bytes[4 + i / 8];
            let bit = (byte >> (7 - i % 8)) & 1;
            chips.push(if bit == 1 { -1 } else { 1 });
        }
        PrnCode::from_chips(chips, CodeId::Synthetic(0))
    }
}

/// Exact circular correlation of two equal-length codes over every lag.
#[derive(Debug, Clone)]
pub struct CorrelationProfile {
    /// `values[tau] = sum_n a[n] * b[(n + tau) mod len]`.
    pub values: Vec<i32>,
    /// Lag of the largest absolute value (smallest lag wins ties).
    pub peak_lag: usize,
    /// Every other lag, sorted by descending absolute value, ties broken by
    /// smaller lag.
    pub sidelobes: Vec<(usize, i32)>,
}

/// Computes the full circular correlation profile of `a` against `b`.
pub fn correlation_profile(a: &PrnCode, b: &PrnCode) -> Result<CorrelationProfile> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "code lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut values = Vec::with_capacity(n);
    for tau in 0..n {
        let mut sum = 0i32;
        // Split at the wrap point so the inner loops stay branch-free.
        let head = n - tau;
        for i in 0..head {
            sum += (a.chips[i] * b.chips[i + tau]) as i32;
        }
        for i in head..n {
            sum += (a.chips[i] * b.chips[i + tau - n]) as i32;
        }
        values.push(sum);
    }
    let peak_lag = values
        .iter()
        .enumerate()
        .max_by_key(|(lag, v)| (v.unsigned_abs(), std::cmp::Reverse(*lag)))
        .map(|(lag, _)| lag)
        .unwrap();
    let mut sidelobes: Vec<(usize, i32)> = values
        .iter()
        .enumerate()
        .filter(|(lag, _)| *lag != peak_lag)
        .map(|(lag, &v)| (lag, v))
        .collect();
    sidelobes.sort_by_key(|&(lag, v)| (std::cmp::Reverse(v.unsigned_abs()), lag));
    Ok(CorrelationProfile {
        values,
        peak_lag,
        sidelobes,
    })
}

/// The `count` nonzero lags with the largest absolute autocorrelation,
/// descending, ties broken by the smaller lag. These are the delays at which
/// a synchronized replica leaks most power into the prompt correlator.
pub fn worst_case_delays(code: &PrnCode, count: usize) -> Result<Vec<(usize, i32)>> {
    if count == 0 || count > code.len() - 1 {
        return Err(Error::invalid(format!(
            "count must be in 1..={}, got {count}",
            code.len() - 1
        )));
    }
    let profile = correlation_profile(code, code)?;
    let mut lags: Vec<(usize, i32)> = profile
        .values
        .iter()
        .enumerate()
        .skip(1)
        .map(|(lag, &v)| (lag, v))
        .collect();
    lags.sort_by_key(|&(lag, v)| (std::cmp::Reverse(v.unsigned_abs()), lag));
    lags.truncate(count);
    Ok(lags)
}
