//! Regular (3, 6) LDPC code built from a seed, with a systematic encoder
//! from GF(2) elimination and a flooding min-sum decoder.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

pub const BLOCK_LEN: usize = 1024;
pub const INFO_LEN: usize = 512;
pub const COLUMN_WEIGHT: usize = 3;
pub const ROW_WEIGHT: usize = 6;
pub const MAX_ITERATIONS: usize = 50;
pub const MAX_RESEEDS: u64 = 16;

type BitRow = Vec<u64>;

fn words(bits: usize) -> usize {
    bits.div_ceil(64)
}

#[inline]
fn get(row: &[u64], i: usize) -> bool {
    (row[i / 64] >> (i % 64)) & 1 == 1
}

#[inline]
fn set(row: &mut [u64], i: usize) {
    row[i / 64] |= 1 << (i % 64);
}

#[derive(Debug)]
pub struct LdpcCode {
    n: usize,
    k: usize,
    /// Seed the parity matrix was actually built from (after reseeding).
    seed: u64,
    check_vars: Vec<Vec<u32>>,
    /// Edge ids of each variable, into the check-major edge order.
    var_edges: Vec<Vec<u32>>,
    edge_var: Vec<u32>,
    check_edge_start: Vec<u32>,
    info_cols: Vec<usize>,
    /// `(parity column, mask over info bits)` per pivot row.
    parity: Vec<(usize, BitRow)>,
}

/// Outcome of one block decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDecode {
    pub info: Vec<u8>,
    pub iterations: usize,
    pub converged: bool,
}

static CODE_CACHE: Mutex<Option<HashMap<u64, Arc<LdpcCode>>>> = Mutex::new(None);

impl LdpcCode {
    /// The n = 1024, rate-1/2 code for `seed`, built once per process.
    pub fn cached(seed: u64) -> Result<Arc<Self>> {
        let mut cache = CODE_CACHE.lock().unwrap_or_else(|e| e.into_inner());
        let map = cache.get_or_insert_with(HashMap::new);
        if let Some(code) = map.get(&seed) {
            return Ok(code.clone());
        }
        let code = Arc::new(Self::build(seed)?);
        map.insert(seed, code.clone());
        Ok(code)
    }

    pub fn build(seed: u64) -> Result<Self> {
        Self::build_with(BLOCK_LEN, seed)
    }

    /// Rate-1/2 (3, 6) code of length `n` (a multiple of 2).
    pub fn build_with(n: usize, seed: u64) -> Result<Self> {
        if n < ROW_WEIGHT || !n.is_multiple_of(2) {
            return Err(Error::Construction(format!("length {n} admits no (3,6) code")));
        }
        for attempt in 0..MAX_RESEEDS {
            let s = if attempt == 0 { seed } else { seed::derive(seed, attempt) };
            let checks = random_regular_graph(n, s);
            if let Some(code) = Self::from_checks(n, s, checks) {
                return Ok(code);
            }
        }
        Err(Error::Construction(format!(
            "no full-rank parity matrix after {MAX_RESEEDS} seeds from {seed}"
        )))
    }

    fn from_checks(n: usize, seed: u64, check_vars: Vec<Vec<u32>>) -> Option<Self> {
        let m = check_vars.len();
        let w = words(n);
        let mut rows: Vec<BitRow> = check_vars
            .iter()
            .map(|vars| {
                let mut r = vec![0u64; w];
                for &v in vars {
                    set(&mut r, v as usize);
                }
                r
            })
            .collect();
        // Reduced row echelon form.
        let mut pivots = Vec::with_capacity(m);
        let mut rank = 0;
        for col in 0..n {
            let Some(found) = (rank..m).find(|&r| get(&rows[r], col)) else {
                continue;
            };
            rows.swap(rank, found);
            let pivot_row = rows[rank].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != rank && get(row, col) {
                    row.iter_mut().zip(&pivot_row).for_each(|(a, b)| *a ^= b);
                }
            }
            pivots.push(col);
            rank += 1;
            if rank == m {
                break;
            }
        }
        if rank < m {
            return None;
        }
        let is_pivot = {
            let mut v = vec![false; n];
            pivots.iter().for_each(|&c| v[c] = true);
            v
        };
        let info_cols: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let k = info_cols.len();
        let parity = pivots
            .iter()
            .zip(&rows)
            .map(|(&col, row)| {
                let mut mask = vec![0u64; words(k)];
                for (i, &c) in info_cols.iter().enumerate() {
                    if get(row, c) {
                        set(&mut mask, i);
                    }
                }
                (col, mask)
            })
            .collect();

        let mut check_edge_start = Vec::with_capacity(m + 1);
        let mut edge_var = Vec::with_capacity(n * COLUMN_WEIGHT);
        let mut var_edges = vec![Vec::with_capacity(COLUMN_WEIGHT); n];
        for vars in &check_vars {
            check_edge_start.push(edge_var.len() as u32);
            for &v in vars {
                var_edges[v as usize].push(edge_var.len() as u32);
                edge_var.push(v);
            }
        }
        check_edge_start.push(edge_var.len() as u32);
        Some(Self {
            n,
            k,
            seed,
            check_vars,
            var_edges,
            edge_var,
            check_edge_start,
            info_cols,
            parity,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn checks(&self) -> &[Vec<u32>] {
        &self.check_vars
    }

    /// `H · cᵀ` over GF(2), one entry per check.
    pub fn syndrome(&self, codeword: &[u8]) -> Vec<u8> {
        self.check_vars
            .iter()
            .map(|vars| vars.iter().fold(0u8, |acc, &v| acc ^ (codeword[v as usize] & 1)))
            .collect()
    }

    pub fn is_codeword(&self, codeword: &[u8]) -> bool {
        self.syndrome(codeword).iter().all(|&s| s == 0)
    }

    /// Systematic encoding of exactly `k` info bits.
    pub fn encode_block(&self, info: &[u8]) -> Vec<u8> {
        assert_eq!(info.len(), self.k, "ldpc block takes {} info bits", self.k);
        let mut packed = vec![0u64; words(self.k)];
        let mut codeword = vec![0u8; self.n];
        for (i, (&b, &col)) in info.iter().zip(&self.info_cols).enumerate() {
            if b & 1 == 1 {
                set(&mut packed, i);
                codeword[col] = 1;
            }
        }
        for (col, mask) in &self.parity {
            let ones: u32 = mask.iter().zip(&packed).map(|(a, b)| (a & b).count_ones()).sum();
            codeword[*col] = (ones & 1) as u8;
        }
        codeword
    }

    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_cols.iter().map(|&c| codeword[c]).collect()
    }

    /// Min-sum decoding of one block of hard bits, mapped to ±1 LLRs.
    pub fn decode_hard(&self, bits: &[u8]) -> BlockDecode {
        let llr: Vec<f32> = bits.iter().map(|&b| if b & 1 == 0 { 1.0 } else { -1.0 }).collect();
        self.decode_llr(&llr)
    }

    /// Min-sum decoding; positive LLR favors bit 0.
    pub fn decode_llr(&self, llr: &[f32]) -> BlockDecode {
        assert_eq!(llr.len(), self.n);
        let hard_of = |total: f32, ch: f32| -> u8 {
            if total != 0.0 {
                u8::from(total < 0.0)
            } else {
                u8::from(ch < 0.0)
            }
        };
        let mut hard: Vec<u8> = llr.iter().map(|&l| u8::from(l < 0.0)).collect();
        if self.is_codeword(&hard) {
            return BlockDecode {
                info: self.extract_info(&hard),
                iterations: 0,
                converged: true,
            };
        }
        let edges = self.edge_var.len();
        let mut v2c: Vec<f32> = self.edge_var.iter().map(|&v| llr[v as usize]).collect();
        let mut c2v = vec![0f32; edges];
        for iteration in 1..=MAX_ITERATIONS {
            for c in 0..self.check_vars.len() {
                let (a, b) = (self.check_edge_start[c] as usize, self.check_edge_start[c + 1] as usize);
                let mut sign_neg = false;
                let (mut min1, mut min2, mut argmin) = (f32::INFINITY, f32::INFINITY, a);
                for e in a..b {
                    let m = v2c[e];
                    sign_neg ^= m < 0.0;
                    let mag = m.abs();
                    if mag < min1 {
                        min2 = min1;
                        min1 = mag;
                        argmin = e;
                    } else if mag < min2 {
                        min2 = mag;
                    }
                }
                for e in a..b {
                    let mag = if e == argmin { min2 } else { min1 };
                    let neg = sign_neg ^ (v2c[e] < 0.0);
                    c2v[e] = if neg { -mag } else { mag };
                }
            }
            for (v, es) in self.var_edges.iter().enumerate() {
                let total = llr[v] + es.iter().map(|&e| c2v[e as usize]).sum::<f32>();
                for &e in es {
                    v2c[e as usize] = total - c2v[e as usize];
                }
                hard[v] = hard_of(total, llr[v]);
            }
            if self.is_codeword(&hard) {
                return BlockDecode {
                    info: self.extract_info(&hard),
                    iterations: iteration,
                    converged: true,
                };
            }
        }
        BlockDecode {
            info: self.extract_info(&hard),
            iterations: MAX_ITERATIONS,
            converged: false,
        }
    }
}

/// Socket-permutation construction: each variable gets 3 sockets, each
/// check 6; repeated variables inside a check are swapped away.
fn random_regular_graph(n: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = n * COLUMN_WEIGHT;
    let m = edges / ROW_WEIGHT;
    let mut sockets: Vec<u32> = (0..n as u32).flat_map(|v| [v; COLUMN_WEIGHT]).collect();
    sockets.shuffle(&mut rng);
    let has_dup = |s: &[u32], c: usize| -> Option<usize> {
        let row = &s[c * ROW_WEIGHT..(c + 1) * ROW_WEIGHT];
        (0..ROW_WEIGHT).find(|&i| row[..i].contains(&row[i])).map(|i| c * ROW_WEIGHT + i)
    };
    for _ in 0..100 * edges {
        let Some(bad) = (0..m).find_map(|c| has_dup(&sockets, c)) else {
            break;
        };
        let other = rng.gen_range(0..edges);
        sockets.swap(bad, other);
    }
    sockets
        .chunks_exact(ROW_WEIGHT)
        .map(|row| {
            let mut r = row.to_vec();
            r.sort_unstable();
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_is_regular_and_full_rank() {
        let code = LdpcCode::build(1).unwrap();
        assert_eq!((code.n(), code.k()), (BLOCK_LEN, INFO_LEN));
        let mut col_weight = vec![0; BLOCK_LEN];
        for vars in code.checks() {
            assert_eq!(vars.len(), ROW_WEIGHT);
            let mut dedup = vars.clone();
            dedup.dedup();
            assert_eq!(dedup.len(), ROW_WEIGHT, "repeated variable in a check");
            vars.iter().for_each(|&v| col_weight[v as usize] += 1);
        }
        assert!(col_weight.iter().all(|&w| w == COLUMN_WEIGHT));
    }

    #[test]
    fn codewords_satisfy_every_check() {
        let code = LdpcCode::build(7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let info: Vec<u8> = (0..code.k()).map(|_| rng.gen_range(0..2)).collect();
            let cw = code.encode_block(&info);
            assert!(code.is_codeword(&cw));
            assert_eq!(code.extract_info(&cw), info);
            assert_eq!(code.decode_hard(&cw).info, info);
        }
    }

    #[test]
    fn corrects_scattered_errors() {
        let code = LdpcCode::build(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let info: Vec<u8> = (0..code.k()).map(|_| rng.gen_range(0..2)).collect();
        let mut cw = code.encode_block(&info);
        for i in rand::seq::index::sample(&mut rng, code.n(), 10) {
            cw[i] ^= 1;
        }
        let out = code.decode_hard(&cw);
        assert!(out.converged);
        assert_eq!(out.info, info);
    }

    #[test]
    fn construction_is_deterministic() {
        let a = LdpcCode::build(42).unwrap();
        let b = LdpcCode::build(42).unwrap();
        assert_eq!(a.checks(), b.checks());
        assert_eq!(a.seed(), b.seed());
        assert!(Arc::ptr_eq(&LdpcCode::cached(5).unwrap(), &LdpcCode::cached(5).unwrap()));
    }
}
