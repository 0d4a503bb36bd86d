use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::modulation::SymbolFrame;

/// AWGN channel settings. `snr_db` is Es/N0; `f64::INFINITY` means noiseless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    #[serde(with = "crate::metrics::f64_inf")]
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        Self { snr_db, seed }
    }

    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(crate::Error::param(format!("snr must be finite or +inf, got {}", self.snr_db)));
        }
        Ok(())
    }

    /// Total complex noise variance for signal power `power`.
    pub fn noise_variance(&self, power: f64) -> f64 {
        if self.is_noiseless() {
            0.0
        } else {
            power / db_to_linear(self.snr_db)
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Es/N0 for a given Eb/N0, `bits_per_symbol` and code rate.
pub fn es_n0_db(eb_n0_db: f64, bits_per_symbol: usize, code_rate: f64) -> f64 {
    eb_n0_db + 10.0 * (bits_per_symbol as f64 * code_rate).log10()
}

/// Eb/N0 for a given Es/N0.
pub fn eb_n0_db(es_n0_db: f64, bits_per_symbol: usize, code_rate: f64) -> f64 {
    es_n0_db - 10.0 * (bits_per_symbol as f64 * code_rate).log10()
}

/// Adds circularly symmetric Gaussian noise of variance `N0 = P / snr`
/// (`N0 / 2` per component), with `P` the frame's declared power.
pub fn awgn(frame: &SymbolFrame, cfg: &ChannelConfig) -> SymbolFrame {
    let n0 = cfg.noise_variance(frame.power);
    if n0 == 0.0 {
        return frame.clone();
    }
    let sigma = (n0 / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let symbols = frame
        .symbols
        .iter()
        .map(|s| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            s + Complex64::new(re, im) * sigma
        })
        .collect();
    SymbolFrame {
        symbols,
        ..frame.clone()
    }
}
