use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Gray-mapped constellations with unit average power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulationScheme {
    Bpsk,
    Qpsk,
    #[serde(rename = "16qam")]
    Qam16,
    #[serde(rename = "64qam")]
    Qam64,
}

impl ModulationScheme {
    pub const ALL: [ModulationScheme; 4] = [Self::Bpsk, Self::Qpsk, Self::Qam16, Self::Qam64];

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Self::Bpsk => 1,
            Self::Qpsk => 2,
            Self::Qam16 => 4,
            Self::Qam64 => 6,
        }
    }

    /// Amplitude scale that brings average symbol power to one.
    pub fn normalization(self) -> f64 {
        match self {
            Self::Bpsk => 1.0,
            Self::Qpsk => std::f64::consts::FRAC_1_SQRT_2,
            Self::Qam16 => 1.0 / 10f64.sqrt(),
            Self::Qam64 => 1.0 / 42f64.sqrt(),
        }
    }

    /// Bits carried on each of I and Q for the square QAM schemes.
    fn axis_bits(self) -> usize {
        self.bits_per_symbol() / 2
    }

    /// Per-axis `(label, level)` pairs in increasing level order; adjacent
    /// entries differ in exactly one label bit.
    pub fn axis_table(self) -> Vec<(u8, i32)> {
        match self {
            Self::Bpsk => vec![(1, -1), (0, 1)],
            Self::Qpsk => vec![(1, -1), (0, 1)],
            Self::Qam16 | Self::Qam64 => {
                let levels = 1i32 << self.axis_bits();
                (0..levels)
                    .map(|i| (gray(i as u8), 2 * i - (levels - 1)))
                    .collect()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bpsk => "bpsk",
            Self::Qpsk => "qpsk",
            Self::Qam16 => "16qam",
            Self::Qam64 => "64qam",
        }
    }

    /// All constellation points with their bit labels (MSB first).
    pub fn constellation(self) -> Vec<(Vec<u8>, Complex64)> {
        let bps = self.bits_per_symbol();
        (0..1u32 << bps)
            .map(|label| {
                let bits: Vec<u8> = (0..bps).rev().map(|i| ((label >> i) & 1) as u8).collect();
                let point = map_symbol(self, &bits);
                (bits, point)
            })
            .collect()
    }
}

impl std::fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModulationScheme {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Self::Bpsk),
            "qpsk" => Ok(Self::Qpsk),
            "16qam" | "qam16" => Ok(Self::Qam16),
            "64qam" | "qam64" => Ok(Self::Qam64),
            other => Err(crate::Error::param(format!("unknown modulation `{other}`"))),
        }
    }
}

#[inline]
fn gray(i: u8) -> u8 {
    i ^ (i >> 1)
}

#[inline]
fn inverse_gray(mut g: u8) -> u8 {
    let mut i = g;
    while g > 1 {
        g >>= 1;
        i ^= g;
    }
    i
}

fn bits_to_u8(bits: &[u8]) -> u8 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | (b & 1))
}

fn axis_level(scheme: ModulationScheme, bits: &[u8]) -> f64 {
    let levels = 1i32 << scheme.axis_bits();
    let index = inverse_gray(bits_to_u8(bits)) as i32;
    (2 * index - (levels - 1)) as f64
}

fn map_symbol(scheme: ModulationScheme, bits: &[u8]) -> Complex64 {
    let k = scheme.normalization();
    match scheme {
        ModulationScheme::Bpsk => Complex64::new(1.0 - 2.0 * bits[0] as f64, 0.0),
        ModulationScheme::Qpsk => {
            Complex64::new(1.0 - 2.0 * bits[0] as f64, 1.0 - 2.0 * bits[1] as f64) * k
        }
        ModulationScheme::Qam16 | ModulationScheme::Qam64 => {
            let half = scheme.axis_bits();
            Complex64::new(axis_level(scheme, &bits[..half]), axis_level(scheme, &bits[half..])) * k
        }
    }
}

/// Baseband symbols plus what the receiver needs to undo the framing.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub symbols: Vec<Complex64>,
    /// Declared average symbol power.
    pub power: f64,
    /// Zero bits appended to fill the last symbol.
    pub pad_bits: usize,
}

impl SymbolFrame {
    pub fn new(symbols: Vec<Complex64>, power: f64) -> Self {
        Self {
            symbols,
            power,
            pad_bits: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        if self.symbols.is_empty() {
            return 0.0;
        }
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }
}

/// Maps bits (one per element, 0 or 1) to symbols, zero-padding the tail.
pub fn modulate(bits: &[u8], scheme: ModulationScheme) -> SymbolFrame {
    let bps = scheme.bits_per_symbol();
    let pad_bits = (bps - bits.len() % bps) % bps;
    let mut symbols = Vec::with_capacity(bits.len().div_ceil(bps));
    let mut chunks = bits.chunks_exact(bps);
    for chunk in &mut chunks {
        symbols.push(map_symbol(scheme, chunk));
    }
    let rest = chunks.remainder();
    if !rest.is_empty() {
        let mut last = rest.to_vec();
        last.resize(bps, 0);
        symbols.push(map_symbol(scheme, &last));
    }
    SymbolFrame {
        symbols,
        power: 1.0,
        pad_bits,
    }
}

fn slice_axis(scheme: ModulationScheme, v: f64, out: &mut Vec<u8>) {
    let levels = 1i32 << scheme.axis_bits();
    let x = v / scheme.normalization();
    let index = ((x + (levels - 1) as f64) / 2.0).round().clamp(0.0, (levels - 1) as f64) as u8;
    let label = gray(index);
    for i in (0..scheme.axis_bits()).rev() {
        out.push((label >> i) & 1);
    }
}

/// Hard-decision demapping. For these square constellations per-axis
/// slicing picks the Euclidean-nearest point.
pub fn demodulate(frame: &SymbolFrame, scheme: ModulationScheme) -> Vec<u8> {
    let mut bits = Vec::with_capacity(frame.symbols.len() * scheme.bits_per_symbol());
    for s in &frame.symbols {
        match scheme {
            ModulationScheme::Bpsk => bits.push(u8::from(s.re < 0.0)),
            ModulationScheme::Qpsk => {
                bits.push(u8::from(s.re < 0.0));
                bits.push(u8::from(s.im < 0.0));
            }
            ModulationScheme::Qam16 | ModulationScheme::Qam64 => {
                slice_axis(scheme, s.re, &mut bits);
                slice_axis(scheme, s.im, &mut bits);
            }
        }
    }
    bits.truncate(bits.len() - frame.pad_bits);
    bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_points() {
        let f = modulate(&[0, 1, 0], ModulationScheme::Bpsk);
        let re: Vec<f64> = f.symbols.iter().map(|s| s.re).collect();
        assert_eq!(re, vec![1.0, -1.0, 1.0]);

        let s = modulate(&[0, 0, 0, 0], ModulationScheme::Qam16).symbols[0];
        let k = 1.0 / 10f64.sqrt();
        assert!((s - Complex64::new(-3.0 * k, -3.0 * k)).norm() < 1e-12);

        let s = modulate(&[1, 0], ModulationScheme::Qpsk).symbols[0];
        assert!((s - Complex64::new(-1.0, 1.0) / 2f64.sqrt()).norm() < 1e-12);
    }

    #[test]
    fn sixteen_qam_axis_labels() {
        let t = ModulationScheme::Qam16.axis_table();
        assert_eq!(t, vec![(0b00, -3), (0b01, -1), (0b11, 1), (0b10, 3)]);
        for (label, level) in &t {
            let bits = [label >> 1, label & 1, 0, 0];
            let s = modulate(&bits, ModulationScheme::Qam16).symbols[0];
            assert!((s.re * 10f64.sqrt() - *level as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn adjacent_levels_differ_in_one_bit() {
        for scheme in ModulationScheme::ALL {
            let t = scheme.axis_table();
            for w in t.windows(2) {
                assert_eq!((w[0].0 ^ w[1].0).count_ones(), 1, "{scheme}");
                assert!(w[0].1 < w[1].1);
            }
        }
    }

    #[test]
    fn constellations_have_unit_power() {
        for scheme in ModulationScheme::ALL {
            let pts = scheme.constellation();
            let p = pts.iter().map(|(_, s)| s.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((p - 1.0).abs() < 1e-12, "{scheme}: {p}");
        }
    }

    #[test]
    fn bpsk_sign_rule() {
        let frame = SymbolFrame::new(vec![Complex64::new(-0.2, 0.0)], 1.0);
        assert_eq!(demodulate(&frame, ModulationScheme::Bpsk), vec![1]);
    }

    #[test]
    fn slicer_agrees_with_nearest_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for scheme in ModulationScheme::ALL {
            let pts = scheme.constellation();
            for _ in 0..2000 {
                let z = Complex64::new(rng.gen_range(-1.6..1.6), rng.gen_range(-1.6..1.6));
                let z = if scheme == ModulationScheme::Bpsk { Complex64::new(z.re, 0.0) } else { z };
                let nearest = pts
                    .iter()
                    .min_by(|a, b| (a.1 - z).norm_sqr().total_cmp(&(b.1 - z).norm_sqr()))
                    .unwrap();
                let got = demodulate(&SymbolFrame::new(vec![z], 1.0), scheme);
                assert_eq!(got, nearest.0, "{scheme} at {z}");
            }
        }
    }

    proptest! {
        #[test]
        fn modulation_round_trips(bits in proptest::collection::vec(0u8..2, 0..200)) {
            for scheme in ModulationScheme::ALL {
                let frame = modulate(&bits, scheme);
                prop_assert_eq!(frame.len(), bits.len().div_ceil(scheme.bits_per_symbol()));
                prop_assert_eq!(demodulate(&frame, scheme), bits.clone());
            }
        }
    }
}
