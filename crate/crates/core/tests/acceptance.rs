//! Acceptance suite. One line per criterion; exits nonzero if any fails.
//!
//! Oracles here are written from the definitions and share no code with the
//! library beyond the types they are fed.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcom_core::codec::{decode_payload, encode_payload, read_header};
use semcom_core::features::{lbp_map, CaptionSource, ColorMosaic, LbpConfig, SemanticPayload, TextureMap};
use semcom_core::harness::{
    builtin_profile, cmd_transmit, sweep_snr_prepared, PreparedImage, RowKind, RunConfig, SystemSpec,
};
use semcom_core::imaging::{block_mean_downsample, median_filter, upsample, Resample};
use semcom_core::metrics::spearman;
use semcom_core::phy::{awgn, demodulate, fec_decode, fec_encode, modulate, FecChoice};
use semcom_core::restore::{RemoteRestorer, RestorationRequest, StubMode, StubServer};
use semcom_core::{BlockGrid, ChannelConfig, Error, GrayImage, ModulationScheme, QuantizationSpec, RgbImage};
use statrs::function::erf::erfc;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_gray(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
}

fn random_rgb(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    RgbImage::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
}

fn at(data: &[u8], w: usize, h: usize, x: isize, y: isize, c: usize, channels: usize) -> u8 {
    let x = x.clamp(0, w as isize - 1) as usize;
    let y = y.clamp(0, h as isize - 1) as usize;
    data[(y * w + x) * channels + c]
}

fn lbp_oracle(img: &GrayImage) -> Vec<u8> {
    let (w, h) = img.dims();
    let offsets = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let center = at(img.as_raw(), w, h, x, y, 0, 1);
            let mut code = 0u32;
            for (k, (dx, dy)) in offsets.iter().enumerate() {
                if at(img.as_raw(), w, h, x + dx, y + dy, 0, 1) > center {
                    code += 1 << k;
                }
            }
            out.push(code as u8);
        }
    }
    out
}

fn lbp_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..100 {
        let img = random_gray(&mut rng, 16, 16);
        let got = lbp_map(&img, &LbpConfig::default()).map_err(|e| e.to_string())?;
        ensure(got.as_raw() == lbp_oracle(&img).as_slice(), || format!("image {i} differs"))?;
    }
    Ok("100 images identical".into())
}

fn median_oracle(data: &[u8], w: usize, h: usize, c: usize, r: usize) -> Vec<u8> {
    let r = r as isize;
    let mut out = Vec::with_capacity(data.len());
    for y in 0..h as isize {
        for x in 0..w as isize {
            for ch in 0..c {
                let mut window = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        window.push(at(data, w, h, x + dx, y + dy, ch, c));
                    }
                }
                window.sort_unstable();
                out.push(window[window.len() / 2]);
            }
        }
    }
    out
}

/// Block boundaries: `len / count` each, the last `len % count` blocks one wider.
fn blocks(len: usize, count: usize) -> Vec<(usize, usize)> {
    let base = len / count;
    let extra = len % count;
    let mut start = 0;
    (0..count)
        .map(|i| {
            let size = base + usize::from(i >= count - extra);
            let b = (start, start + size);
            start += size;
            b
        })
        .collect()
}

fn median_and_downsample() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (w, h) = (rng.gen_range(8..=64), rng.gen_range(8..=64));
        let img = random_rgb(&mut rng, w, h);
        let r = rng.gen_range(1..=3);
        let got = median_filter(&img, r).map_err(|e| e.to_string())?;
        ensure(got.as_raw() == median_oracle(img.as_raw(), w, h, 3, r).as_slice(), || {
            format!("median image {i} ({w}x{h}, r={r}) differs")
        })?;

        let grid = BlockGrid::new(rng.gen_range(1..=w), rng.gen_range(1..=h)).unwrap();
        let down = block_mean_downsample(&img, grid).map_err(|e| e.to_string())?;
        let (xs, ys) = (blocks(w, grid.cols), blocks(h, grid.rows));
        let mut total_out = 0.0;
        for (by, &(y0, y1)) in ys.iter().enumerate() {
            for (bx, &(x0, x1)) in xs.iter().enumerate() {
                let area = ((x1 - x0) * (y1 - y0)) as f64;
                for ch in 0..3 {
                    let sum: f64 = (y0..y1)
                        .flat_map(|y| (x0..x1).map(move |x| (x, y)))
                        .map(|(x, y)| img.as_raw()[(y * w + x) * 3 + ch] as f64)
                        .sum();
                    let v = down.as_raw()[(by * grid.cols + bx) * 3 + ch] as f64;
                    let err = (v * area - sum).abs();
                    ensure(err <= 0.5 * area, || format!("image {i}: block conservation off by {err}"))?;
                    ensure(v == (sum / area + 0.5).floor(), || format!("image {i}: not round-half-up"))?;
                    worst = worst.max(err / area);
                    total_out += v * area;
                }
            }
        }
        let total_in: f64 = img.as_raw().iter().map(|&v| v as f64).sum();
        let bound = 0.5 * (w * h * 3) as f64;
        ensure((total_out - total_in).abs() <= bound, || format!("image {i}: global conservation"))?;
    }
    Ok(format!("100 images; worst per-block deviation {worst:.3} of 0.5"))
}

fn quantize_oracle(v: u8, bits: u8) -> u8 {
    if bits == 8 {
        return v;
    }
    let step = 1u16 << (8 - bits);
    ((v as u16 / step) * step + step / 2) as u8
}

fn palette_oracle(values: &[u8], bits: u8) -> Vec<u8> {
    let mut counts = [0usize; 256];
    for &v in values {
        counts[v as usize] += 1;
    }
    let mut present: Vec<u8> = (0..=255u8).filter(|&v| counts[v as usize] > 0).collect();
    present.sort_by_key(|&v| (std::cmp::Reverse(counts[v as usize]), v));
    present.truncate(1 << bits);
    present.sort_unstable();
    present
}

fn nearest(palette: &[u8], v: u8) -> u8 {
    let mut best = palette[0];
    for &p in palette {
        if (p as i32 - v as i32).abs() < (best as i32 - v as i32).abs() {
            best = p;
        }
    }
    best
}

fn random_payload(rng: &mut ChaCha8Rng) -> (SemanticPayload, QuantizationSpec) {
    let (w, h) = (rng.gen_range(1..=300), rng.gen_range(1..=300));
    let (cw, ch) = (rng.gen_range(1..=w.min(24)), rng.gen_range(1..=h.min(24)));
    let (tw, th) = (rng.gen_range(1..=w.min(48)), rng.gen_range(1..=h.min(48)));
    let alphabet: Vec<char> = "abcxyz .,é漢🙂".chars().collect();
    let len = rng.gen_range(1..=60);
    let text: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
    let mut lbp = LbpConfig::default();
    if rng.gen_bool(0.2) {
        let mut weights = [1u8, 2, 4, 8, 16, 32, 64, 128];
        for i in (1..8).rev() {
            weights.swap(i, rng.gen_range(0..=i));
        }
        lbp = LbpConfig::with_weights(weights).unwrap();
    }
    // Texture values drawn from a small set so palettes see ties and gaps.
    let levels: Vec<u8> = (0..rng.gen_range(1..20)).map(|_| rng.gen()).collect();
    let texture = GrayImage::from_fn(tw, th, |_, _| [levels[rng.gen_range(0..levels.len())]]).unwrap();
    let mut extensions = BTreeMap::new();
    if rng.gen_bool(0.3) {
        let (ew, eh) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        extensions.insert("depth".to_string(), random_gray(rng, ew, eh));
    }
    let payload = SemanticPayload {
        text,
        color: ColorMosaic {
            cells: random_rgb(rng, cw, ch),
            source_dims: (w, h),
        },
        texture: TextureMap {
            cells: texture,
            source_dims: (w, h),
            lbp,
        },
        extensions,
    };
    let quant = QuantizationSpec {
        color_bits: rng.gen_range(2..=8),
        texture_bits: rng.gen_range(1..=8),
        texture_palette: rng.gen_bool(0.5),
    };
    (payload, quant)
}

fn codec_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut flips = 0;
    for i in 0..1000 {
        let (p, q) = random_payload(&mut rng);
        let stream = encode_payload(&p, &q).map_err(|e| format!("payload {i}: {e}"))?;
        let got = decode_payload(&stream).map_err(|e| format!("payload {i}: {e}"))?;

        let mut want = p.clone();
        for v in want.color.cells.as_raw_mut() {
            *v = quantize_oracle(*v, q.color_bits);
        }
        if q.texture_palette {
            let palette = palette_oracle(p.texture.cells.as_raw(), q.texture_bits);
            for v in want.texture.cells.as_raw_mut() {
                *v = nearest(&palette, *v);
            }
        } else {
            for v in want.texture.cells.as_raw_mut() {
                *v = quantize_oracle(*v, q.texture_bits);
            }
        }
        ensure(got == want, || format!("payload {i} decoded differently"))?;
        let again = encode_payload(&got, &q).map_err(|e| e.to_string())?;
        ensure(decode_payload(&again).ok() == Some(want), || format!("payload {i} not idempotent"))?;

        for _ in 0..4 {
            let mut bad = stream.clone();
            bad.flip_bit(rng.gen_range(0..stream.bit_len()));
            flips += 1;
            ensure(bad.verify().is_err(), || format!("payload {i}: flip passed the CRC"))?;
            ensure(decode_payload(&bad).is_err(), || format!("payload {i}: flip decoded"))?;
        }
    }
    Ok(format!("1000 payloads bit-exact, {flips}/{flips} single-bit flips rejected"))
}

fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Measured BER of `scheme` at `es_n0_db`, over at least `min_bits` bits.
fn measured_ber(scheme: ModulationScheme, es_n0_db: f64, min_bits: usize, seed: u64) -> (f64, usize) {
    const CHUNK: usize = 1 << 20;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut errors, mut total, mut chunk) = (0usize, 0usize, 0u64);
    while total < min_bits {
        let bits: Vec<u8> = (0..CHUNK).map(|_| rng.gen_range(0..2)).collect();
        let frame = modulate(&bits, scheme);
        let rx = demodulate(&awgn(&frame, &ChannelConfig::new(es_n0_db, seed ^ (chunk << 32))), scheme);
        errors += bits.iter().zip(&rx).filter(|(a, b)| a != b).count();
        total += CHUNK;
        chunk += 1;
    }
    (errors as f64 / total as f64, total)
}

fn ber_vs_theory() -> Outcome {
    let mut lines = Vec::new();
    let mut worst = 0.0f64;
    for (k, &snr) in [0.0, 2.0, 4.0, 6.0, 8.0].iter().enumerate() {
        let theory = q_function((2.0 * 10f64.powf(snr / 10.0)).sqrt());
        let min_bits = 1_000_000usize.max((4000.0 / theory) as usize);
        // BPSK: Es = Eb. QPSK: same per-bit curve at Es/N0 = Eb/N0 + 3.01 dB.
        let (bpsk, n) = measured_ber(ModulationScheme::Bpsk, snr, min_bits, 100 + k as u64);
        let qpsk_es = snr + 10.0 * 2f64.log10();
        let (qpsk, _) = measured_ber(ModulationScheme::Qpsk, qpsk_es, min_bits, 200 + k as u64);
        for (name, v) in [("bpsk", bpsk), ("qpsk", qpsk)] {
            let rel = (v - theory).abs() / theory;
            worst = worst.max(rel);
            ensure(rel <= 0.05, || format!("{name} at {snr} dB: {v:.4e} vs {theory:.4e} ({:.1}%)", rel * 100.0))?;
        }
        lines.push(format!("{snr}dB {theory:.3e}/{bpsk:.3e}/{qpsk:.3e} n={n}"));
    }
    Ok(format!("worst {:.2}%; {}", worst * 100.0, lines.join("; ")))
}

fn constellation_power() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut parts = Vec::new();
    for scheme in ModulationScheme::ALL {
        let bits: Vec<u8> = (0..100_000 * scheme.bits_per_symbol()).map(|_| rng.gen_range(0..2)).collect();
        let frame = modulate(&bits, scheme);
        ensure(frame.len() == 100_000, || "symbol count".into())?;
        let p = frame.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / frame.len() as f64;
        ensure((p - 1.0).abs() <= 0.01, || format!("{scheme}: mean power {p:.4}"))?;
        parts.push(format!("{scheme} {p:.4}"));
    }
    Ok(parts.join(", "))
}

fn ldpc_gain() -> Outcome {
    let scheme = FecChoice::Ldpc { seed: 0 }.build().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let info: Vec<u8> = (0..200 * 512).map(|_| rng.gen_range(0..2)).collect();
    let coded = fec_encode(&info, &scheme);
    let frame = modulate(&coded.bits, ModulationScheme::Bpsk);
    let rx = demodulate(&awgn(&frame, &ChannelConfig::new(3.0, 77)), ModulationScheme::Bpsk);
    // Uncoded reference: hard decisions on the same noisy symbols.
    let uncoded = coded.bits.iter().zip(&rx).filter(|(a, b)| a != b).count() as f64 / rx.len() as f64;
    let decoded = fec_decode(&rx, coded.info_len, &scheme);
    let coded_ber = info.iter().zip(&decoded).filter(|(a, b)| a != b).count() as f64 / info.len() as f64;
    ensure(coded_ber <= 0.1 * uncoded, || format!("decoded {coded_ber:.3e} vs uncoded {uncoded:.3e}"))?;
    Ok(format!(
        "{} info bits: uncoded {uncoded:.4e}, decoded {coded_ber:.4e} (ratio {:.4})",
        info.len(),
        coded_ber / uncoded
    ))
}

fn synthetic_scene(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(w, h, |x, y| {
        let n: i32 = rng.gen_range(-20..=20);
        let stripe = if (x / 4 + y / 6) % 2 == 0 { 60 } else { 0 };
        [
            (x * 255 / w) as u8,
            ((y * 200 / h) as i32 + n).clamp(0, 255) as u8,
            (80 + stripe + n).clamp(0, 255) as u8,
        ]
    })
    .unwrap()
}

fn cliff_vs_graceful() -> Outcome {
    let profile = semcom_core::ExtractionProfile::new(8, 16, 1, CaptionSource::Fixed { text: "striped field".into() });
    let quant = QuantizationSpec { color_bits: 6, texture_bits: 4, texture_palette: false };
    let prep = PreparedImage::from_image(synthetic_scene(64, 64, 9), None, &profile, &quant).map_err(|e| e.to_string())?;
    let snrs: Vec<f64> = (0..=10).map(|i| 2.0 * i as f64).collect();
    let cfg = RunConfig {
        inputs: vec!["synthetic".into()],
        profile,
        quant,
        systems: vec![
            SystemSpec::digital(ModulationScheme::Qam16, FecChoice::Ldpc { seed: 0 }),
            SystemSpec::analog(),
        ],
        snr_db: snrs.clone(),
        trials: 50,
        seed: 2024,
        ..RunConfig::default()
    };
    let sweep = sweep_snr_prepared(&cfg, &[prep]).map_err(|e| e.to_string())?;
    let fail: Vec<f64> = sweep.aggregate(0, RowKind::Mean).iter().map(|r| r.integrity_failed).collect();
    let tex: Vec<f64> = sweep
        .aggregate(1, RowKind::Mean)
        .iter()
        .map(|r| r.texture_mse.unwrap_or(f64::NAN))
        .collect();
    let symbols: Vec<usize> = sweep.aggregate(0, RowKind::Mean).iter().map(|r| r.symbols_used).collect();
    let analog_symbols: Vec<usize> = sweep.aggregate(1, RowKind::Mean).iter().map(|r| r.symbols_used).collect();
    ensure(symbols == analog_symbols, || "unequal channel use".into())?;
    ensure(fail[0] >= 0.5, || format!("failure rate at 0 dB {}", fail[0]))?;
    ensure(fail[10] <= 0.01, || format!("failure rate at 20 dB {}", fail[10]))?;
    let rho = spearman(&snrs, &tex);
    ensure(rho <= -0.9, || format!("analog texture mse rho {rho:.3}: {tex:?}"))?;
    Ok(format!(
        "{} symbols; digital failure {:.2}@0dB -> {:.2}@20dB; analog texture mse {:.1} -> {:.2}, rho {rho:.3}",
        symbols[0], fail[0], fail[10], tex[0], tex[10]
    ))
}

fn extreme_budget() -> Outcome {
    let caption = "a small red boat on a calm lake."; // 32 bytes
    let (profile, quant) = builtin_profile("extreme", CaptionSource::Fixed { text: caption.into() }).map_err(|e| e.to_string())?;
    let prep = PreparedImage::from_image(synthetic_scene(512, 512, 4), None, &profile, &quant).map_err(|e| e.to_string())?;
    let header = read_header(&prep.bitstream).map_err(|e| e.to_string())?;

    let color = 24 * 24 * 3 * 8;
    let texture = 64 * 64 * 2;
    let text = 8 * caption.len();
    let body = color + texture + text;
    ensure(body == 22_272, || format!("body bits {body}"))?;
    ensure(header.body_bits() == body, || format!("codec body bits {}", header.body_bits()))?;
    let body_bpp = body as f64 / (512.0 * 512.0);
    ensure(body_bpp == 0.0849609375, || format!("body bpp {body_bpp}"))?;

    // magic 4, version 1, three dim pairs 12, bit widths and flags 3, text
    // length varint 1, extension count 1, palette 4, header check 4 (bytes)
    let header_bits = 8 * (4 + 1 + 12 + 3 + 1 + 1 + 4 + 4);
    let total = header_bits + body + 32;
    ensure(prep.bitstream.bit_len() == total, || format!("stream {} vs {total}", prep.bitstream.bit_len()))?;
    let bpp = prep.bpp();
    ensure(bpp == total as f64 / 262_144.0, || format!("bpp {bpp}"))?;
    ensure(bpp <= 0.1, || format!("bpp {bpp} over budget"))?;
    Ok(format!(
        "body {body} bits = {body_bpp} bpp; full stream {total} bits = {bpp} bpp"
    ))
}

fn read_tree(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("scene.png");
    synthetic_scene(96, 80, 1).save_png(&input).map_err(|e| e.to_string())?;
    let (mut profile, quant) =
        builtin_profile("extreme", CaptionSource::Fixed { text: "stripes".into() }).map_err(|e| e.to_string())?;
    profile.color_grid = BlockGrid::square(12).unwrap();
    profile.texture_grid = BlockGrid::square(32).unwrap();
    let mut cfg = RunConfig {
        inputs: vec![input],
        profile,
        quant,
        systems: vec![
            SystemSpec::digital(ModulationScheme::Qam16, FecChoice::Ldpc { seed: 3 }),
            SystemSpec::analog(),
        ],
        snr_db: vec![4.0, 12.0, f64::INFINITY],
        seed: 99,
        output_dir: dir.path().join("a"),
        ..RunConfig::default()
    };
    cmd_transmit(&cfg).map_err(|e| e.to_string())?;
    cfg.output_dir = dir.path().join("b");
    cmd_transmit(&cfg).map_err(|e| e.to_string())?;
    let (a, b) = (read_tree(&dir.path().join("a")), read_tree(&dir.path().join("b")));
    ensure(!a.is_empty() && a == b, || "outputs differ".into())?;
    let pngs = a.keys().filter(|k| k.ends_with(".png")).count();
    let reports = a.keys().filter(|k| k.ends_with("report.json")).count();
    Ok(format!("{} files identical ({reports} reports, {pngs} PNGs)", a.len()))
}

fn remote_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let req = RestorationRequest {
        text: "a lighthouse".into(),
        color: random_rgb(&mut rng, 4, 3),
        texture: random_gray(&mut rng, 8, 6),
        width: 40,
        height: 30,
        seed: 5,
    };
    let client = |s: &StubServer| RemoteRestorer::new(s.url(), Duration::from_secs(10), 4).unwrap();

    let echo = StubServer::start(StubMode::EchoUpsampledMosaic).map_err(|e| e.to_string())?;
    let got = client(&echo).restore(&req).map_err(|e| e.to_string())?;
    let want = upsample(&req.color, 40, 30, Resample::Bilinear).unwrap();
    ensure(got == want, || "echo round trip differs".into())?;

    let mut rejected = Vec::new();
    for mode in [StubMode::WrongDims, StubMode::Malformed, StubMode::ErrorStatus] {
        let stub = StubServer::start(mode).map_err(|e| e.to_string())?;
        match client(&stub).restore(&req) {
            Err(Error::Restoration { message, .. }) => rejected.push(format!("{mode:?}: {message}")),
            other => return Err(format!("{mode:?} not rejected: {other:?}")),
        }
    }
    Ok(format!("echo ok; rejected {}", rejected.join("; ")))
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "lbp oracle equivalence", limit: Some(Duration::from_secs(1)), run: lbp_equivalence },
        Criterion { name: "median and downsample oracles", limit: Some(Duration::from_secs(5)), run: median_and_downsample },
        Criterion { name: "codec round trip and corruption", limit: Some(Duration::from_secs(10)), run: codec_round_trip },
        Criterion { name: "ber vs theory", limit: Some(Duration::from_secs(60)), run: ber_vs_theory },
        Criterion { name: "constellation normalization", limit: None, run: constellation_power },
        Criterion { name: "ldpc gain at 3 dB", limit: Some(Duration::from_secs(120)), run: ldpc_gain },
        Criterion { name: "cliff vs graceful degradation", limit: None, run: cliff_vs_graceful },
        Criterion { name: "extreme compression budget", limit: None, run: extreme_budget },
        Criterion { name: "end-to-end determinism", limit: None, run: determinism },
        Criterion { name: "remote restorer contract", limit: None, run: remote_contract },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {} [{elapsed:.2?}] {detail}", c.name),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} [{elapsed:.2?}] {detail}", c.name);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

