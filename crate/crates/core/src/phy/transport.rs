//! End-to-end transports over the simulated channel.
//!
//! The digital path (FEC, QAM, hard decisions, CRC) either delivers the
//! stream intact or reports an integrity failure, which produces the cliff
//! in quality as SNR drops. The analog path sends feature values directly as
//! amplitudes, so the received features degrade smoothly with noise.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::channel::{awgn, ChannelConfig};
use super::fec::{fec_decode, fec_encode, FecScheme};
use super::modulation::{demodulate, modulate, ModulationScheme, SymbolFrame};
use crate::codec::{BitWriter, Bitstream};
use crate::error::{Error, Result};
use crate::features::{truncate_utf8, SemanticPayload, MAX_TEXT_BYTES};
use crate::imaging::round_to_u8;
use crate::seed;

/// Channel resources consumed by one transmission, with error counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelUsage {
    pub info_bits: usize,
    pub coded_bits: usize,
    pub bits_per_symbol: usize,
    pub symbols_used: usize,
    /// Hard-decision errors before FEC decoding.
    pub channel_bit_errors: usize,
    pub symbol_errors: usize,
    /// Errors left after FEC decoding.
    pub info_bit_errors: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ChannelUsage {
    pub fn channel_ber(&self) -> f64 {
        ratio(self.channel_bit_errors, self.coded_bits)
    }

    pub fn ser(&self) -> f64 {
        ratio(self.symbol_errors, self.symbols_used)
    }

    pub fn ber(&self) -> f64 {
        ratio(self.info_bit_errors, self.info_bits)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DigitalOutcome {
    Delivered(Bitstream),
    /// The CRC did not match after decoding; `received` is what came out.
    IntegrityFailure { received: Bitstream },
}

impl DigitalOutcome {
    pub fn is_failure(&self) -> bool {
        matches!(self, DigitalOutcome::IntegrityFailure { .. })
    }

    pub fn received(&self) -> &Bitstream {
        match self {
            DigitalOutcome::Delivered(b) | DigitalOutcome::IntegrityFailure { received: b } => b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DigitalTransmission {
    pub outcome: DigitalOutcome,
    pub usage: ChannelUsage,
}

/// Symbols needed to send `info_bits` with `fec` and `scheme`.
pub fn digital_symbols(info_bits: usize, scheme: ModulationScheme, fec: &FecScheme) -> usize {
    fec.coded_len(info_bits).div_ceil(scheme.bits_per_symbol())
}

/// FEC encode, modulate, AWGN, demodulate, FEC decode, CRC check.
pub fn transmit_digital(
    b: &Bitstream,
    scheme: ModulationScheme,
    fec: &FecScheme,
    cfg: &ChannelConfig,
) -> DigitalTransmission {
    let bits = b.to_bits();
    let coded = fec_encode(&bits, fec);
    let frame = modulate(&coded.bits, scheme);
    let noisy = awgn(&frame, cfg);
    let rx = demodulate(&noisy, scheme);
    let decoded = fec_decode(&rx, coded.info_len, fec);

    let bps = scheme.bits_per_symbol();
    let channel_bit_errors = count_diff(&coded.bits, &rx);
    let symbol_errors = coded
        .bits
        .chunks(bps)
        .zip(rx.chunks(bps))
        .filter(|(a, b)| a != b)
        .count();
    let usage = ChannelUsage {
        info_bits: bits.len(),
        coded_bits: coded.bits.len(),
        bits_per_symbol: bps,
        symbols_used: frame.len(),
        channel_bit_errors,
        symbol_errors,
        info_bit_errors: count_diff(&bits, &decoded),
    };
    let received = Bitstream::from_bits(&decoded);
    let outcome = match received.verify() {
        Ok(()) => DigitalOutcome::Delivered(received),
        Err(_) => DigitalOutcome::IntegrityFailure { received },
    };
    DigitalTransmission { outcome, usage }
}

fn count_diff(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

/// Side information for the analog path always goes out digitally.
pub const SIDE_SCHEME: ModulationScheme = ModulationScheme::Bpsk;

/// Bits of the analog side packet: mean, RMS, caption, CRC.
pub fn side_packet_bits(text_len: usize) -> usize {
    8 + 16 + 8 * text_len + 32
}

/// Symbols the side packet occupies (BPSK, rate-1/3 repetition).
pub fn side_packet_symbols(text_len: usize) -> usize {
    digital_symbols(side_packet_bits(text_len), SIDE_SCHEME, &FecScheme::Repetition3)
}

fn feature_values(p: &SemanticPayload) -> Vec<u8> {
    let mut v = Vec::with_capacity(analog_value_count(p));
    v.extend_from_slice(p.color.cells.as_raw());
    v.extend_from_slice(p.texture.cells.as_raw());
    for map in p.extensions.values() {
        v.extend_from_slice(map.as_raw());
    }
    v
}

/// Real amplitudes carried by the analog path.
pub fn analog_value_count(p: &SemanticPayload) -> usize {
    p.color.cells.as_raw().len()
        + p.texture.cells.as_raw().len()
        + p.extensions.values().map(|m| m.as_raw().len()).sum::<usize>()
}

/// Fewest feature symbols the analog path accepts.
pub fn analog_min_budget(p: &SemanticPayload) -> usize {
    analog_value_count(p).div_ceil(2)
}

#[derive(Debug, Clone)]
pub struct AnalogTransmission {
    pub payload: SemanticPayload,
    pub usage: ChannelUsage,
    /// Whether the digitally protected caption and scaling stats passed their CRC.
    pub side_info_intact: bool,
    /// Complete copies of the amplitude sequence; some values get one more.
    pub repetitions: usize,
}

/// Mean and RMS deviation as carried in the side packet: mean rounded to
/// 8 bits, RMS in 8.8 fixed point.
fn scaling_stats(values: &[u8]) -> (u8, u16) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mean_q = round_to_u8(mean);
    let rms = (values
        .iter()
        .map(|&v| (v as f64 - mean_q as f64).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let rms_q = (rms * 256.0).round().clamp(1.0, u16::MAX as f64) as u16;
    (mean_q, rms_q)
}

/// Sends feature amplitudes as analog symbols over `budget` symbols and the
/// caption plus scaling stats over the digital path (BPSK, repetition-3).
///
/// Values are shifted by their mean and divided by their RMS deviation so the
/// transmitted sequence has zero mean and unit power. The whole budget is
/// always used: the sequence is repeated cyclically to fill `2 · budget`
/// real slots and the receiver averages every copy of each value.
pub fn transmit_analog(p: &SemanticPayload, cfg: &ChannelConfig, budget: usize) -> Result<AnalogTransmission> {
    cfg.validate()?;
    let values = feature_values(p);
    let needed = analog_min_budget(p);
    if budget < needed {
        return Err(Error::param(format!(
            "analog budget {budget} below the {needed} symbols the features need"
        )));
    }
    let repetitions = 2 * budget / values.len();
    let (mean_q, rms_q) = scaling_stats(&values);

    // Side packet.
    let mut side = BitWriter::new();
    side.push(mean_q as u64, 8);
    side.push(rms_q as u64, 16);
    side.push_bytes(p.text.as_bytes());
    let side = Bitstream::seal(side);
    let side_cfg = cfg.with_seed(seed::derive(cfg.seed, 1));
    let side_tx = transmit_digital(&side, SIDE_SCHEME, &FecScheme::Repetition3, &side_cfg);
    let side_info_intact = !side_tx.outcome.is_failure();
    // Even a damaged packet is used: each field is repetition-protected, and
    // the analog path has no failure outcome.
    let mut r = side_tx.outcome.received().body_reader();
    let rx_mean = r.read(8).expect("fixed layout") as f64;
    let rx_scale = r.read(16).expect("fixed layout").max(1) as f64 / 256.0;
    let text_bytes = r.read_bytes(p.text.len()).expect("fixed layout");
    let text = match String::from_utf8(text_bytes) {
        Ok(s) => s,
        Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
    };
    let mut text = truncate_utf8(&text, MAX_TEXT_BYTES).to_owned();
    if text.is_empty() {
        text.push('\u{fffd}');
    }

    // Feature amplitudes.
    let scale = rms_q as f64 / 256.0;
    let n = values.len();
    let reals: Vec<f64> = (0..2 * budget)
        .map(|i| (values[i % n] as f64 - mean_q as f64) / scale)
        .collect();
    let symbols: Vec<Complex64> = reals
        .chunks(2)
        .map(|c| Complex64::new(c[0], c.get(1).copied().unwrap_or(0.0)))
        .collect();
    let frame = SymbolFrame::new(symbols, 1.0);
    let noisy = awgn(&frame, cfg);
    let rx_reals: Vec<f64> = noisy.symbols.iter().flat_map(|s| [s.re, s.im]).collect();
    let mut sums = vec![0.0; n];
    for (i, v) in rx_reals.iter().enumerate() {
        sums[i % n] += v;
    }
    let copies = |i: usize| (2 * budget - i).div_ceil(n);
    let received: Vec<u8> = sums
        .iter()
        .enumerate()
        .map(|(i, &sum)| round_to_u8(sum / copies(i) as f64 * rx_scale + rx_mean))
        .collect();

    let mut out = p.clone();
    out.text = text;
    let mut rest = received.as_slice();
    let mut take = |dst: &mut [u8]| {
        let (head, tail) = rest.split_at(dst.len());
        dst.copy_from_slice(head);
        rest = tail;
    };
    take(out.color.cells.as_raw_mut());
    take(out.texture.cells.as_raw_mut());
    for map in out.extensions.values_mut() {
        take(map.as_raw_mut());
    }

    let mut usage = side_tx.usage;
    usage.symbols_used += frame.len();
    Ok(AnalogTransmission {
        payload: out,
        usage,
        side_info_intact,
        repetitions,
    })
}
