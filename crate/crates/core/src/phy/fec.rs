use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ldpc::LdpcCode;
use crate::error::Result;

/// Forward error correction applied before modulation.
#[derive(Debug, Clone)]
pub enum FecScheme {
    None,
    /// Rate 1/3: every bit sent three times, majority vote.
    Repetition3,
    Ldpc(Arc<LdpcCode>),
}

/// Serializable selector for [`FecScheme`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FecChoice {
    None,
    Repetition,
    Ldpc {
        #[serde(default)]
        seed: u64,
    },
}

impl Default for FecChoice {
    fn default() -> Self {
        FecChoice::Ldpc { seed: 0 }
    }
}

impl FecChoice {
    pub fn build(self) -> Result<FecScheme> {
        Ok(match self {
            FecChoice::None => FecScheme::None,
            FecChoice::Repetition => FecScheme::Repetition3,
            FecChoice::Ldpc { seed } => FecScheme::Ldpc(LdpcCode::cached(seed)?),
        })
    }

    pub fn label(self) -> String {
        match self {
            FecChoice::None => "none".into(),
            FecChoice::Repetition => "rep3".into(),
            FecChoice::Ldpc { seed } => format!("ldpc{seed}"),
        }
    }
}

impl std::str::FromStr for FecChoice {
    type Err = crate::Error;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase();
        match s.as_str() {
            "none" => Ok(FecChoice::None),
            "rep" | "rep3" | "repetition" => Ok(FecChoice::Repetition),
            "ldpc" => Ok(FecChoice::Ldpc { seed: 0 }),
            _ => match s.strip_prefix("ldpc").and_then(|n| n.trim_start_matches(':').parse().ok()) {
                Some(seed) => Ok(FecChoice::Ldpc { seed }),
                None => Err(crate::Error::param(format!("unknown fec `{s}`"))),
            },
        }
    }
}

impl FecScheme {
    pub fn rate(&self) -> f64 {
        match self {
            FecScheme::None => 1.0,
            FecScheme::Repetition3 => 1.0 / 3.0,
            FecScheme::Ldpc(code) => code.k() as f64 / code.n() as f64,
        }
    }

    /// Coded length for `info_len` input bits.
    pub fn coded_len(&self, info_len: usize) -> usize {
        match self {
            FecScheme::None => info_len,
            FecScheme::Repetition3 => 3 * info_len,
            FecScheme::Ldpc(code) => info_len.div_ceil(code.k()) * code.n(),
        }
    }
}

/// Coded bits; `info_len` travels as frame metadata so the decoder can drop
/// the zero padding of the last LDPC block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedBits {
    pub bits: Vec<u8>,
    pub info_len: usize,
}

pub fn fec_encode(bits: &[u8], scheme: &FecScheme) -> CodedBits {
    let coded = match scheme {
        FecScheme::None => bits.to_vec(),
        FecScheme::Repetition3 => bits.iter().flat_map(|&b| [b, b, b]).collect(),
        FecScheme::Ldpc(code) => {
            let mut out = Vec::with_capacity(scheme.coded_len(bits.len()));
            for chunk in bits.chunks(code.k()) {
                if chunk.len() == code.k() {
                    out.extend(code.encode_block(chunk));
                } else {
                    let mut padded = chunk.to_vec();
                    padded.resize(code.k(), 0);
                    out.extend(code.encode_block(&padded));
                }
            }
            out
        }
    };
    CodedBits {
        bits: coded,
        info_len: bits.len(),
    }
}

/// Decodes hard bits back to `info_len` info bits.
pub fn fec_decode(received: &[u8], info_len: usize, scheme: &FecScheme) -> Vec<u8> {
    let mut out = match scheme {
        FecScheme::None => received.to_vec(),
        FecScheme::Repetition3 => received
            .chunks(3)
            .map(|c| u8::from(c.iter().map(|&b| b as usize).sum::<usize>() * 2 > c.len()))
            .collect(),
        FecScheme::Ldpc(code) => received
            .chunks(code.n())
            .flat_map(|block| code.decode_hard(block).info)
            .collect(),
    };
    out.truncate(info_len);
    out
}
