//! Payload serialization with exact bit accounting.
//!
//! # Layout
//!
//! All multi-bit fields are little-endian, and bits are packed LSB-first
//! within each byte.
//!
//! | field              | size                | notes                                  |
//! |--------------------|---------------------|----------------------------------------|
//! | magic              | 4 bytes             | `SMCP`                                 |
//! | version            | 1 byte              | [`VERSION`]                            |
//! | source width/height| 2 × u16             | stored minus one                       |
//! | color cols/rows    | 2 × u16             | stored minus one                       |
//! | texture cols/rows  | 2 × u16             | stored minus one                       |
//! | color bits         | u8                  | 2..=8 per channel                      |
//! | texture bits       | u8                  | 1..=8                                  |
//! | flags              | u8                  | bit 0 palette, bit 1 custom LBP weights|
//! | lbp weights        | 8 bytes             | only with flag bit 1                   |
//! | text length        | LEB128 varint       | bytes                                  |
//! | extension count    | u8                  |                                        |
//! | per extension      | u8 len, name, 2×u16 | dims stored minus one                  |
//! | palette            | 2^texture_bits bytes| only with flag bit 0, ascending        |
//! | header check       | u32                 | CRC-32 of the header bytes above       |
//! | color cells        | cols·rows·3·b_c bits| row-major, R G B                       |
//! | texture cells      | cols·rows·b_t bits  | levels, or palette indices             |
//! | text               | 8 bits per byte     | UTF-8                                  |
//! | extension samples  | 8 bits each         | in header order                        |
//! | crc                | 32 bits             | CRC-32 of everything before it         |
//!
//! The header is byte-aligned; the body and trailing CRC are not padded, so
//! `total_bits = header_bits + body_bits + 32` exactly. The header check lets
//! the decoder tell a truncated stream (format error) from a corrupted one
//! (integrity error).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ColorMosaic, LbpConfig, SemanticPayload, TextureMap, MAX_TEXT_BYTES};
use crate::imaging::{GrayImage, Image, RgbImage};

pub const MAGIC: [u8; 4] = *b"SMCP";
pub const VERSION: u8 = 1;
pub const CRC_BITS: usize = 32;

const FLAG_PALETTE: u8 = 0b01;
const FLAG_CUSTOM_LBP: u8 = 0b10;
/// Header without varint, extensions, palette or optional LBP weights.
const FIXED_HEADER_BYTES: usize = 4 + 1 + 4 + 4 + 4 + 3;
/// Smallest possible header: fixed part, 1-byte varint, extension count, check.
pub const MIN_HEADER_BYTES: usize = FIXED_HEADER_BYTES + 1 + 1 + 4;

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

/// LSB-first bit packer.
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_len(&self) -> usize {
        self.len
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().expect("pushed above") |= 1 << (self.len % 8);
        }
        self.len += 1;
    }

    pub fn push(&mut self, value: u64, bits: usize) {
        debug_assert!(bits <= 64);
        if self.len.is_multiple_of(8) && bits.is_multiple_of(8) {
            self.bytes.extend_from_slice(&value.to_le_bytes()[..bits / 8]);
            self.len += bits;
            return;
        }
        for i in 0..bits {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    pub fn push_bytes(&mut self, bytes: &[u8]) {
        if self.len.is_multiple_of(8) {
            self.bytes.extend_from_slice(bytes);
            self.len += bytes.len() * 8;
        } else {
            for &b in bytes {
                self.push(b as u64, 8);
            }
        }
    }

    pub fn into_parts(self) -> (Vec<u8>, usize) {
        (self.bytes, self.len)
    }
}

/// LSB-first bit reader over the first `len` bits of `bytes`.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    len: usize,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], len: usize) -> Self {
        Self {
            bytes,
            len: len.min(bytes.len() * 8),
            pos: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.len - self.pos
    }

    pub fn read(&mut self, bits: usize) -> Result<u64> {
        if bits > self.remaining() {
            return Err(Error::Format(format!(
                "truncated: need {bits} bits at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let mut v = 0u64;
        for i in 0..bits {
            let p = self.pos + i;
            v |= (((self.bytes[p / 8] >> (p % 8)) & 1) as u64) << i;
        }
        self.pos += bits;
        Ok(v)
    }

    pub fn read_u8(&mut self) -> Result<u8> {
        Ok(self.read(8)? as u8)
    }

    pub fn read_u16(&mut self) -> Result<u16> {
        Ok(self.read(16)? as u16)
    }

    pub fn read_bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        (0..n).map(|_| self.read_u8()).collect()
    }
}

fn push_varint(w: &mut BitWriter, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            w.push(byte as u64, 8);
            return;
        }
        w.push((byte | 0x80) as u64, 8);
    }
}

fn read_varint(r: &mut BitReader<'_>) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = r.read_u8()?;
        v |= ((byte & 0x7f) as u64) << shift;
        if byte & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::Format("varint too long".into()))
}

pub fn varint_len(mut v: u64) -> usize {
    let mut n = 1;
    while v >= 0x80 {
        v >>= 7;
        n += 1;
    }
    n
}

/// Bits packed LSB-first, with an exact length.
///
/// Payload streams produced by [`encode_payload`] and side packets produced
/// by [`Bitstream::seal`] both end in a CRC-32 over every preceding bit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitstream {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl Bitstream {
    /// Appends a CRC-32 to `body` and freezes it.
    pub fn seal(body: BitWriter) -> Self {
        let (bytes, len) = body.into_parts();
        let crc = crc32(&bytes);
        let mut w = BitWriter { bytes, len };
        w.push(crc as u64, CRC_BITS);
        let (bytes, bit_len) = w.into_parts();
        Self { bytes, bit_len }
    }

    /// Rebuilds a stream from one bit per element (0 or 1).
    pub fn from_bits(bits: &[u8]) -> Self {
        let mut bytes = vec![0u8; bits.len().div_ceil(8)];
        for (i, &b) in bits.iter().enumerate() {
            bytes[i / 8] |= (b & 1) << (i % 8);
        }
        Self {
            bytes,
            bit_len: bits.len(),
        }
    }

    /// Reads a stored payload stream. The exact bit length comes from the
    /// header; unreadable headers keep the full byte length and let
    /// [`decode_payload`] classify the damage.
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let bit_len = match parse_header(&bytes, bytes.len() * 8) {
            Ok((h, _)) if h.total_bits().div_ceil(8) == bytes.len() => h.total_bits(),
            _ => bytes.len() * 8,
        };
        Self { bytes, bit_len }
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    /// Packed bytes; bits past `bit_len` in the last byte are zero.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.bit_len)
            .map(|i| (self.bytes[i / 8] >> (i % 8)) & 1)
            .collect()
    }

    pub fn flip_bit(&mut self, index: usize) {
        assert!(index < self.bit_len, "bit {index} out of range");
        self.bytes[index / 8] ^= 1 << (index % 8);
    }

    /// Keeps the first `bits` bits.
    pub fn truncated(&self, bits: usize) -> Self {
        let bits = bits.min(self.bit_len);
        let mut bytes = self.bytes[..bits.div_ceil(8)].to_vec();
        if !bits.is_multiple_of(8) {
            *bytes.last_mut().unwrap() &= (1u8 << (bits % 8)) - 1;
        }
        Self {
            bytes,
            bit_len: bits,
        }
    }

    fn crc_pair(&self) -> Option<(u32, u32)> {
        let body_len = self.bit_len.checked_sub(CRC_BITS)?;
        let mut covered = self.bytes[..body_len.div_ceil(8)].to_vec();
        if body_len % 8 != 0 {
            *covered.last_mut().unwrap() &= (1u8 << (body_len % 8)) - 1;
        }
        let mut r = BitReader::new(&self.bytes, self.bit_len);
        r.pos = body_len;
        let stored = r.read(CRC_BITS).ok()? as u32;
        Some((stored, crc32(&covered)))
    }

    /// Checks the trailing CRC-32.
    pub fn verify(&self) -> Result<()> {
        match self.crc_pair() {
            Some((expected, actual)) if expected == actual => Ok(()),
            Some((expected, actual)) => Err(Error::Integrity { expected, actual }),
            None => Err(Error::Format("shorter than a crc".into())),
        }
    }

    /// Bits before the trailing CRC.
    pub fn body_reader(&self) -> BitReader<'_> {
        BitReader::new(&self.bytes, self.bit_len.saturating_sub(CRC_BITS))
    }
}

/// Quantization applied by the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizationSpec {
    pub color_bits: u8,
    pub texture_bits: u8,
    #[serde(default)]
    pub texture_palette: bool,
}

impl Default for QuantizationSpec {
    fn default() -> Self {
        Self::LOSSLESS
    }
}

impl QuantizationSpec {
    pub const LOSSLESS: Self = Self {
        color_bits: 8,
        texture_bits: 8,
        texture_palette: false,
    };

    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.color_bits) {
            return Err(Error::Encoding(format!(
                "color bits must be 2..=8, got {}",
                self.color_bits
            )));
        }
        if !(1..=8).contains(&self.texture_bits) {
            return Err(Error::Encoding(format!(
                "texture bits must be 1..=8, got {}",
                self.texture_bits
            )));
        }
        Ok(())
    }

    pub fn palette_len(&self) -> usize {
        if self.texture_palette {
            1 << self.texture_bits
        } else {
            0
        }
    }
}

/// Uniform mid-rise quantizer level for an 8-bit value.
#[inline]
pub fn quantize(v: u8, bits: u8) -> u8 {
    v >> (8 - bits)
}

/// Center of quantizer level `level`.
#[inline]
pub fn dequantize(level: u8, bits: u8) -> u8 {
    let shift = 8 - bits;
    let half = if shift == 0 { 0 } else { 1u8 << (shift - 1) };
    (level << shift) + half
}

/// The `2^bits` most frequent values (ties to the lower value), ascending.
pub fn build_palette(cells: &[u8], bits: u8) -> Vec<u8> {
    let mut counts = [0u32; 256];
    for &c in cells {
        counts[c as usize] += 1;
    }
    let mut ranked: Vec<u8> = (0..=255).collect();
    ranked.sort_by_key(|&v| (std::cmp::Reverse(counts[v as usize]), v));
    let mut palette = ranked[..1usize << bits].to_vec();
    palette.sort_unstable();
    palette
}

/// Index of the palette entry nearest to `v`; ties go to the lower entry.
pub fn nearest_palette_index(palette: &[u8], v: u8) -> usize {
    let mut best = 0;
    for (i, &p) in palette.iter().enumerate() {
        if (p as i16 - v as i16).abs() < (palette[best] as i16 - v as i16).abs() {
            best = i;
        }
    }
    best
}

/// Decoded header fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BitstreamHeader {
    pub version: u8,
    pub source_dims: (usize, usize),
    pub color_grid: (usize, usize),
    pub texture_grid: (usize, usize),
    pub quantization: QuantizationSpec,
    pub lbp_weights: [u8; 8],
    pub text_len: usize,
    pub extensions: Vec<ExtensionDescriptor>,
    pub palette: Vec<u8>,
    pub header_bits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtensionDescriptor {
    pub name: String,
    pub dims: (usize, usize),
}

impl BitstreamHeader {
    pub fn color_bits(&self) -> usize {
        self.color_grid.0 * self.color_grid.1 * 3 * self.quantization.color_bits as usize
    }

    pub fn texture_bits(&self) -> usize {
        self.texture_grid.0 * self.texture_grid.1 * self.quantization.texture_bits as usize
    }

    pub fn body_bits(&self) -> usize {
        self.color_bits()
            + self.texture_bits()
            + 8 * self.text_len
            + self
                .extensions
                .iter()
                .map(|e| 8 * e.dims.0 * e.dims.1)
                .sum::<usize>()
    }

    pub fn total_bits(&self) -> usize {
        self.header_bits + self.body_bits() + CRC_BITS
    }
}

fn push_dims(w: &mut BitWriter, (a, b): (usize, usize)) {
    w.push((a - 1) as u64, 16);
    w.push((b - 1) as u64, 16);
}

fn read_dims(r: &mut BitReader<'_>) -> Result<(usize, usize)> {
    Ok((r.read_u16()? as usize + 1, r.read_u16()? as usize + 1))
}

pub fn encode_payload(p: &SemanticPayload, q: &QuantizationSpec) -> Result<Bitstream> {
    q.validate()?;
    p.validate().map_err(|e| Error::Encoding(e.to_string()))?;
    if p.text.is_empty() {
        return Err(Error::Encoding("caption text must not be empty".into()));
    }
    if p.extensions.len() > 255 {
        return Err(Error::Encoding("at most 255 extensions".into()));
    }
    let mut w = BitWriter::new();
    w.push_bytes(&MAGIC);
    w.push(VERSION as u64, 8);
    push_dims(&mut w, p.source_dims());
    push_dims(&mut w, p.color.cells.dims());
    push_dims(&mut w, p.texture.cells.dims());
    w.push(q.color_bits as u64, 8);
    w.push(q.texture_bits as u64, 8);
    let custom_lbp = p.texture.lbp != LbpConfig::default();
    let flags = if q.texture_palette { FLAG_PALETTE } else { 0 } | if custom_lbp { FLAG_CUSTOM_LBP } else { 0 };
    w.push(flags as u64, 8);
    if custom_lbp {
        w.push_bytes(&p.texture.lbp.weights());
    }
    push_varint(&mut w, p.text.len() as u64);
    w.push(p.extensions.len() as u64, 8);
    for (name, map) in &p.extensions {
        w.push(name.len() as u64, 8);
        w.push_bytes(name.as_bytes());
        push_dims(&mut w, map.dims());
    }
    let palette = if q.texture_palette {
        build_palette(p.texture.cells.as_raw(), q.texture_bits)
    } else {
        Vec::new()
    };
    w.push_bytes(&palette);
    let (header_bytes, _) = w.clone().into_parts();
    w.push(crc32(&header_bytes) as u64, 32);

    let cb = q.color_bits as usize;
    for &v in p.color.cells.as_raw() {
        w.push(quantize(v, q.color_bits) as u64, cb);
    }
    let tb = q.texture_bits as usize;
    for &v in p.texture.cells.as_raw() {
        let symbol = if q.texture_palette {
            nearest_palette_index(&palette, v) as u8
        } else {
            quantize(v, q.texture_bits)
        };
        w.push(symbol as u64, tb);
    }
    w.push_bytes(p.text.as_bytes());
    for map in p.extensions.values() {
        w.push_bytes(map.as_raw());
    }
    Ok(Bitstream::seal(w))
}

/// Header parse result plus whether the header check matched.
fn parse_header(bytes: &[u8], bit_len: usize) -> Result<(BitstreamHeader, bool)> {
    let mut r = BitReader::new(bytes, bit_len);
    let magic = r.read_bytes(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02x?}")));
    }
    let version = r.read_u8()?;
    let source_dims = read_dims(&mut r)?;
    let color_grid = read_dims(&mut r)?;
    let texture_grid = read_dims(&mut r)?;
    let color_bits = r.read_u8()?;
    let texture_bits = r.read_u8()?;
    let flags = r.read_u8()?;
    let lbp_weights = if flags & FLAG_CUSTOM_LBP != 0 {
        r.read_bytes(8)?.try_into().expect("8 bytes")
    } else {
        LbpConfig::default().weights()
    };
    let text_len = read_varint(&mut r)? as usize;
    let ext_count = r.read_u8()?;
    let mut extensions = Vec::with_capacity(ext_count as usize);
    for _ in 0..ext_count {
        let n = r.read_u8()? as usize;
        let name = String::from_utf8_lossy(&r.read_bytes(n)?).into_owned();
        extensions.push(ExtensionDescriptor {
            name,
            dims: read_dims(&mut r)?,
        });
    }
    let quantization = QuantizationSpec {
        color_bits,
        texture_bits,
        texture_palette: flags & FLAG_PALETTE != 0,
    };
    let palette = if quantization.texture_palette && (1..=8).contains(&texture_bits) {
        r.read_bytes(1 << texture_bits)?
    } else {
        Vec::new()
    };
    let covered = r.position() / 8;
    let check = r.read(32)? as u32;
    let header = BitstreamHeader {
        version,
        source_dims,
        color_grid,
        texture_grid,
        quantization,
        lbp_weights,
        text_len,
        extensions,
        palette,
        header_bits: r.position(),
    };
    Ok((header, check == crc32(&bytes[..covered])))
}

/// Reads and validates only the header (for inspection).
pub fn read_header(b: &Bitstream) -> Result<BitstreamHeader> {
    match parse_header(&b.bytes, b.bit_len)? {
        (h, true) => Ok(h),
        (_, false) => Err(Error::Format("header check mismatch".into())),
    }
}

fn magic_distance(bytes: &[u8]) -> u32 {
    MAGIC
        .iter()
        .zip(bytes.iter().chain(std::iter::repeat(&0)))
        .map(|(a, b)| (a ^ b).count_ones())
        .sum()
}

fn integrity_error(b: &Bitstream) -> Error {
    match b.crc_pair() {
        Some((expected, actual)) if expected != actual => Error::Integrity { expected, actual },
        // The body CRC happens to agree but the header check did not.
        _ => Error::Integrity {
            expected: 0,
            actual: 1,
        },
    }
}

pub fn decode_payload(b: &Bitstream) -> Result<SemanticPayload> {
    if b.bit_len < MIN_HEADER_BYTES * 8 + CRC_BITS {
        return Err(Error::Format(format!("truncated: only {} bits", b.bit_len)));
    }
    let header = match parse_header(&b.bytes, b.bit_len) {
        Ok((h, true)) => h,
        // A single flipped magic bit is damage, not a foreign file.
        _ if magic_distance(&b.bytes) > 1 => return Err(Error::Format("bad magic".into())),
        Err(e) if b.verify().is_ok() => return Err(e),
        // Unreadable header and a failing crc: damage.
        _ => return Err(integrity_error(b)),
    };
    if header.version != VERSION {
        return Err(Error::Format(format!("unsupported version {}", header.version)));
    }
    let total = header.total_bits();
    if b.bit_len < total {
        return Err(Error::Format(format!(
            "truncated: header declares {total} bits, got {}",
            b.bit_len
        )));
    }
    if b.bit_len > total {
        return Err(Error::Format(format!(
            "trailing data: header declares {total} bits, got {}",
            b.bit_len
        )));
    }
    b.verify()?;
    decode_body(b, &header)
}

fn decode_body(b: &Bitstream, h: &BitstreamHeader) -> Result<SemanticPayload> {
    let q = h.quantization;
    q.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut r = b.body_reader();
    r.pos = h.header_bits;

    let color_samples = (0..h.color_grid.0 * h.color_grid.1 * 3)
        .map(|_| Ok(dequantize(r.read(q.color_bits as usize)? as u8, q.color_bits)))
        .collect::<Result<Vec<u8>>>()?;
    let texture_samples = (0..h.texture_grid.0 * h.texture_grid.1)
        .map(|_| {
            let s = r.read(q.texture_bits as usize)? as u8;
            Ok(if q.texture_palette {
                h.palette[s as usize]
            } else {
                dequantize(s, q.texture_bits)
            })
        })
        .collect::<Result<Vec<u8>>>()?;
    let text = String::from_utf8(r.read_bytes(h.text_len)?)
        .map_err(|e| Error::Format(format!("text is not UTF-8: {e}")))?;
    if text.is_empty() || text.len() > MAX_TEXT_BYTES {
        return Err(Error::Format(format!("text length {} out of range", text.len())));
    }
    let mut extensions = BTreeMap::new();
    for ext in &h.extensions {
        let samples = r.read_bytes(ext.dims.0 * ext.dims.1)?;
        extensions.insert(ext.name.clone(), GrayImage::new(ext.dims.0, ext.dims.1, samples)?);
    }
    let format = |e: Error| Error::Format(e.to_string());
    let payload = SemanticPayload {
        text,
        color: ColorMosaic::new(
            RgbImage::new(h.color_grid.0, h.color_grid.1, color_samples).map_err(format)?,
            h.source_dims,
        )
        .map_err(format)?,
        texture: TextureMap {
            cells: GrayImage::new(h.texture_grid.0, h.texture_grid.1, texture_samples).map_err(format)?,
            source_dims: h.source_dims,
            lbp: LbpConfig::with_weights(h.lbp_weights).map_err(format)?,
        },
        extensions,
    };
    payload.validate().map_err(format)?;
    Ok(payload)
}

/// The payload as the decoder will see it after quantization.
pub fn dequantized(p: &SemanticPayload, q: &QuantizationSpec) -> Result<SemanticPayload> {
    q.validate()?;
    let mut out = p.clone();
    map_samples(&mut out.color.cells, |v| dequantize(quantize(v, q.color_bits), q.color_bits));
    if q.texture_palette {
        let palette = build_palette(p.texture.cells.as_raw(), q.texture_bits);
        map_samples(&mut out.texture.cells, |v| palette[nearest_palette_index(&palette, v)]);
    } else {
        map_samples(&mut out.texture.cells, |v| {
            dequantize(quantize(v, q.texture_bits), q.texture_bits)
        });
    }
    Ok(out)
}

fn map_samples<const C: usize>(img: &mut Image<C>, f: impl Fn(u8) -> u8) {
    img.as_raw_mut().iter_mut().for_each(|v| *v = f(*v));
}

/// Source bits per pixel. Channel-coding redundancy is not part of a
/// [`Bitstream`], so it never enters this figure.
pub fn bpp(b: &Bitstream, source_dims: (usize, usize)) -> Result<f64> {
    bits_per_pixel(b.bit_len(), source_dims)
}

pub fn bits_per_pixel(bits: usize, (w, h): (usize, usize)) -> Result<f64> {
    if w == 0 || h == 0 {
        return Err(Error::param("source dimensions must be positive"));
    }
    Ok(bits as f64 / (w * h) as f64)
}
