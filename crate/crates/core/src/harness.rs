//! Experiment runner: single transmissions, SNR and bpp sweeps, feature edits.
//!
//! Every trial's channel seed is `seed::derive_all(base, [trial, snr_index])`,
//! so results do not depend on the order parallel trials finish in.
//!
//! `sweep_snr.csv` columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | schema_version | CSV layout version |
//! | row | `trial`, `mean` or `std` |
//! | config_index | position of the system in the comparison |
//! | system | system label |
//! | image | input path; `*` on aggregate rows |
//! | snr_db | Es/N0 in dB |
//! | trial | trial index; empty on aggregate rows |
//! | seed | channel seed; empty on aggregate rows |
//! | transport | `digital` or `analog` |
//! | modulation | scheme used at this SNR (`analog` for amplitude symbols) |
//! | fec | FEC label (`rep3-side` for the analog side packet) |
//! | symbols_used | channel symbols for the whole image |
//! | bpp | codec source bits per pixel |
//! | ber | bit error rate after FEC (side packet only on the analog path) |
//! | channel_ber | hard-decision bit error rate before FEC |
//! | ser | symbol error rate of digitally sent symbols |
//! | integrity_failed | 1 when the CRC rejected the stream; its mean is the failure rate |
//! | color_mse | received vs sent color mosaic; empty when nothing was decoded |
//! | texture_mse | received vs sent texture map; empty when nothing was decoded |
//!
//! `sweep_bpp.csv` columns: schema_version, row, rung_index, label, image,
//! color_grid, texture_grid, color_bits, texture_bits, texture_palette, bits,
//! bpp, color_mse (original image vs upsampled mosaic), texture_mse
//! (full-resolution LBP map vs upsampled texture map), image_psnr_db
//! (fallback restoration vs original).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, decode_payload, encode_payload, read_header, Bitstream, QuantizationSpec};
use crate::error::{Error, Result};
use crate::features::{
    self, decompose_with, edit_payload, lbp_map, CaptionSource, EditCommand, ExtractionProfile,
    FeatureRegistry, SemanticPayload,
};
use crate::imaging::{to_grayscale, upsample, GrayImage, Resample, RgbImage};
use crate::metrics::{self, f64_inf, MetricPlugins, TransmissionReport};
use crate::phy::transport::{analog_min_budget, digital_symbols, side_packet_symbols};
use crate::phy::{
    transmit_analog, transmit_digital, ChannelConfig, ChannelUsage, DigitalOutcome, FecChoice, FecScheme,
    ModulationScheme,
};
use crate::restore::{compose_fallback, RestorationRequest, RestorerBackend, RestorerChoice};
use crate::seed;

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const PAYLOAD_EXTENSION: &str = "smcp";
pub const BUILTIN_PROFILES: [&str; 3] = ["extreme", "balanced", "fine"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Digital,
    Analog,
}

impl TransportKind {
    pub fn name(self) -> &'static str {
        match self {
            TransportKind::Digital => "digital",
            TransportKind::Analog => "analog",
        }
    }
}

impl std::str::FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "digital" => Ok(TransportKind::Digital),
            "analog" => Ok(TransportKind::Analog),
            other => Err(Error::param(format!("unknown transport `{other}`"))),
        }
    }
}

/// Use `scheme` at and above `min_snr_db`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderStep {
    #[serde(with = "f64_inf")]
    pub min_snr_db: f64,
    pub scheme: ModulationScheme,
}

/// One transmission system in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub transport: TransportKind,
    #[serde(default = "default_modulation")]
    pub modulation: ModulationScheme,
    /// Overrides `modulation` when non-empty.
    #[serde(default)]
    pub modulation_ladder: Vec<LadderStep>,
    #[serde(default)]
    pub fec: FecChoice,
}

fn default_modulation() -> ModulationScheme {
    ModulationScheme::Qam16
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            label: String::new(),
            transport: TransportKind::Digital,
            modulation: default_modulation(),
            modulation_ladder: Vec::new(),
            fec: FecChoice::default(),
        }
    }
}

impl SystemSpec {
    pub fn digital(modulation: ModulationScheme, fec: FecChoice) -> Self {
        Self {
            modulation,
            fec,
            ..Self::default()
        }
    }

    pub fn analog() -> Self {
        Self {
            transport: TransportKind::Analog,
            ..Self::default()
        }
    }

    /// Scheme at `snr_db`; below the lowest ladder step the lowest step applies.
    pub fn scheme_at(&self, snr_db: f64) -> ModulationScheme {
        let mut steps = self.modulation_ladder.clone();
        steps.sort_by(|a, b| a.min_snr_db.total_cmp(&b.min_snr_db));
        match steps.first() {
            None => self.modulation,
            Some(first) => steps
                .iter()
                .rev()
                .find(|s| s.min_snr_db <= snr_db)
                .unwrap_or(first)
                .scheme,
        }
    }

    pub fn label(&self) -> String {
        if !self.label.is_empty() {
            return self.label.clone();
        }
        match self.transport {
            TransportKind::Analog => "analog".into(),
            TransportKind::Digital => {
                let m = if self.modulation_ladder.is_empty() {
                    self.modulation.name().to_owned()
                } else {
                    "ladder".to_owned()
                };
                format!("digital-{m}-{}", self.fec.label())
            }
        }
    }

    fn fec_label(&self) -> String {
        match self.transport {
            TransportKind::Digital => self.fec.label(),
            TransportKind::Analog => "rep3-side".into(),
        }
    }

    fn modulation_label(&self, snr_db: f64) -> String {
        match self.transport {
            TransportKind::Digital => self.scheme_at(snr_db).name().to_owned(),
            TransportKind::Analog => "analog".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self
            .modulation_ladder
            .iter()
            .any(|s| s.min_snr_db.is_nan())
        {
            return Err(Error::param("ladder thresholds must be numbers"));
        }
        Ok(())
    }
}

/// One extraction/quantization setting in a bpp sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BppRung {
    #[serde(default)]
    pub label: String,
    pub profile: ExtractionProfile,
    #[serde(default)]
    pub quant: QuantizationSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginSpec {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

/// Everything a run depends on. Echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// PNG files or directories of PNG files.
    pub inputs: Vec<PathBuf>,
    pub profile: ExtractionProfile,
    pub quant: QuantizationSpec,
    pub transport: TransportKind,
    pub modulation: ModulationScheme,
    pub modulation_ladder: Vec<LadderStep>,
    pub fec: FecChoice,
    /// Systems compared by `sweep_snr`; empty means the single system above.
    pub systems: Vec<SystemSpec>,
    #[serde(with = "f64_inf::vec")]
    pub snr_db: Vec<f64>,
    pub seed: u64,
    pub trials: usize,
    pub restorer: RestorerChoice,
    pub output_dir: PathBuf,
    /// Analog feature symbols; by default matched to the compared digital
    /// system, or the minimum when there is none.
    pub analog_budget: Option<usize>,
    pub bpp_ladder: Vec<BppRung>,
    pub metric_plugins: BTreeMap<String, PluginSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let (profile, quant) = builtin_profile("balanced", CaptionSource::Sidecar).expect("builtin");
        Self {
            inputs: Vec::new(),
            profile,
            quant,
            transport: TransportKind::Digital,
            modulation: default_modulation(),
            modulation_ladder: Vec::new(),
            fec: FecChoice::default(),
            systems: Vec::new(),
            snr_db: vec![f64::INFINITY],
            seed: 0,
            trials: 1,
            restorer: RestorerChoice::Fallback,
            output_dir: PathBuf::from("out"),
            analog_budget: None,
            bpp_ladder: Vec::new(),
            metric_plugins: BTreeMap::new(),
        }
    }
}

/// Built-in extraction profile and quantization by name.
///
/// `extreme` (24×24 color at 8 bits, 64×64 texture with a 4-entry palette)
/// stays under 0.1 bpp at 512×512 for captions up to 490 bytes.
pub fn builtin_profile(name: &str, caption: CaptionSource) -> Result<(ExtractionProfile, QuantizationSpec)> {
    let (color, texture, quant) = match name {
        "extreme" => (24, 64, QuantizationSpec { color_bits: 8, texture_bits: 2, texture_palette: true }),
        "balanced" => (32, 128, QuantizationSpec { color_bits: 6, texture_bits: 3, texture_palette: true }),
        "fine" => (64, 256, QuantizationSpec::LOSSLESS),
        other => {
            return Err(Error::param(format!(
                "unknown profile `{other}`, expected one of {BUILTIN_PROFILES:?}"
            )))
        }
    };
    Ok((ExtractionProfile::new(color, texture, 1, caption), quant))
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The systems this config runs.
    pub fn systems(&self) -> Vec<SystemSpec> {
        if self.systems.is_empty() {
            vec![SystemSpec {
                label: String::new(),
                transport: self.transport,
                modulation: self.modulation,
                modulation_ladder: self.modulation_ladder.clone(),
                fec: self.fec,
            }]
        } else {
            self.systems.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::param("no inputs"));
        }
        self.profile.validate()?;
        self.quant.validate()?;
        if self.trials == 0 {
            return Err(Error::param("trials must be at least 1"));
        }
        if self.snr_db.is_empty() {
            return Err(Error::param("snr list is empty"));
        }
        for &snr in &self.snr_db {
            ChannelConfig::new(snr, 0).validate()?;
        }
        for s in self.systems() {
            s.validate()?;
        }
        let labels: std::collections::BTreeSet<String> = self.systems().iter().map(SystemSpec::label).collect();
        if labels.len() != self.systems().len() {
            return Err(Error::param("system labels must be distinct"));
        }
        for rung in &self.bpp_ladder {
            rung.profile.validate()?;
            rung.quant.validate()?;
        }
        if self.analog_budget == Some(0) {
            return Err(Error::param("analog budget must be positive"));
        }
        Ok(())
    }

    /// Config as recorded in reports. The output location does not affect
    /// results and is left out.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        v
    }

    /// Input files in order: files as given, directories expanded to their
    /// `.png` entries sorted by name.
    pub fn resolve_inputs(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for input in &self.inputs {
            if input.is_dir() {
                let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                    .map_err(|e| Error::io(input, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.is_file()
                            && p.extension()
                                .is_some_and(|x| x.eq_ignore_ascii_case("png"))
                    })
                    .collect();
                found.sort();
                if found.is_empty() {
                    return Err(Error::param(format!("no PNG files in {}", input.display())));
                }
                out.extend(found);
            } else {
                out.push(input.clone());
            }
        }
        Ok(out)
    }

    fn plugins(&self) -> MetricPlugins {
        let mut plugins = MetricPlugins::new();
        for (name, spec) in &self.metric_plugins {
            plugins.register(name.clone(), spec.program.clone(), spec.args.clone());
        }
        plugins
    }
}

/// Channel seed for `trial` at SNR index `snr_index`.
pub fn trial_seed(base: u64, trial: usize, snr_index: usize) -> u64 {
    seed::derive_all(base, &[trial as u64, snr_index as u64])
}

/// An input image with its extracted and encoded features.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub path: PathBuf,
    pub image: RgbImage,
    pub payload: SemanticPayload,
    pub bitstream: Bitstream,
}

impl PreparedImage {
    pub fn load(path: &Path, profile: &ExtractionProfile, quant: &QuantizationSpec) -> Result<Self> {
        let image = RgbImage::load_png(path).map_err(|e| e.at("load"))?;
        Self::from_image(image, Some(path), profile, quant)
    }

    pub fn from_image(
        image: RgbImage,
        path: Option<&Path>,
        profile: &ExtractionProfile,
        quant: &QuantizationSpec,
    ) -> Result<Self> {
        let payload = decompose_with(&image, path, profile, &FeatureRegistry::default()).map_err(|e| e.at("decompose"))?;
        let bitstream = encode_payload(&payload, quant).map_err(|e| e.at("encode"))?;
        Ok(Self {
            path: path.map(Path::to_path_buf).unwrap_or_default(),
            image,
            payload,
            bitstream,
        })
    }

    pub fn bpp(&self) -> f64 {
        codec::bpp(&self.bitstream, self.image.dims()).expect("nonempty image")
    }

    /// Symbols `system` needs at `snr_db` with analog feature budget `budget`.
    pub fn symbols_for(&self, system: &SystemSpec, snr_db: f64, budget: usize) -> Result<usize> {
        Ok(match system.transport {
            TransportKind::Digital => {
                digital_symbols(self.bitstream.bit_len(), system.scheme_at(snr_db), &system.fec.build()?)
            }
            TransportKind::Analog => side_packet_symbols(self.payload.text.len()) + budget,
        })
    }
}

/// Result of sending one image once.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    /// `None` when the digital stream failed its integrity check.
    pub received: Option<SemanticPayload>,
    /// The decodable stream, for saving.
    pub received_bitstream: Option<Bitstream>,
    pub usage: ChannelUsage,
    pub integrity_failed: bool,
    pub side_info_intact: bool,
}

impl TrialOutcome {
    pub fn feature_mse(&self, sent: &SemanticPayload) -> Result<(Option<f64>, Option<f64>)> {
        match &self.received {
            None => Ok((None, None)),
            Some(r) => Ok((
                Some(metrics::mse(&sent.color.cells, &r.color.cells)?),
                Some(metrics::mse(&sent.texture.cells, &r.texture.cells)?),
            )),
        }
    }
}

/// Sends `prep` once over `system`. `budget` is the analog feature budget.
pub fn run_trial(
    prep: &PreparedImage,
    system: &SystemSpec,
    fec: &FecScheme,
    channel: &ChannelConfig,
    budget: usize,
) -> Result<TrialOutcome> {
    match system.transport {
        TransportKind::Digital => {
            let tx = transmit_digital(&prep.bitstream, system.scheme_at(channel.snr_db), fec, channel);
            match tx.outcome {
                DigitalOutcome::Delivered(b) => {
                    let payload = decode_payload(&b).map_err(|e| e.at("decode"))?;
                    Ok(TrialOutcome {
                        received: Some(payload),
                        received_bitstream: Some(b),
                        usage: tx.usage,
                        integrity_failed: false,
                        side_info_intact: true,
                    })
                }
                DigitalOutcome::IntegrityFailure { .. } => Ok(TrialOutcome {
                    received: None,
                    received_bitstream: None,
                    usage: tx.usage,
                    integrity_failed: true,
                    side_info_intact: false,
                }),
            }
        }
        TransportKind::Analog => {
            let tx = transmit_analog(&prep.payload, channel, budget).map_err(|e| e.at("transmit"))?;
            let bitstream = encode_payload(&tx.payload, &QuantizationSpec::LOSSLESS).map_err(|e| e.at("encode"))?;
            Ok(TrialOutcome {
                received: Some(tx.payload),
                received_bitstream: Some(bitstream),
                usage: tx.usage,
                integrity_failed: false,
                side_info_intact: tx.side_info_intact,
            })
        }
    }
}

/// Equal channel use at one SNR point for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessRecord {
    pub image: String,
    #[serde(with = "f64_inf")]
    pub snr_db: f64,
    pub symbols_used: usize,
    pub analog_budget: usize,
    pub systems: Vec<String>,
}

/// Picks the analog budget for `systems` at `snr_db` and checks that every
/// system uses the same number of symbols.
pub fn match_channel_use(
    prep: &PreparedImage,
    systems: &[SystemSpec],
    snr_db: f64,
    explicit_budget: Option<usize>,
) -> Result<FairnessRecord> {
    let min_budget = analog_min_budget(&prep.payload);
    let side = side_packet_symbols(prep.payload.text.len());
    let mut digital = Vec::new();
    for s in systems.iter().filter(|s| s.transport == TransportKind::Digital) {
        digital.push((s.label(), prep.symbols_for(s, snr_db, 0)?));
    }
    let budget = match (explicit_budget, digital.first()) {
        (Some(b), _) => b,
        (None, Some((label, d))) => d.checked_sub(side).filter(|&b| b >= min_budget).ok_or_else(|| {
            Error::Fairness(format!(
                "{label} uses {d} symbols, too few for the analog side packet ({side}) plus features ({min_budget})"
            ))
        })?,
        (None, None) => min_budget,
    };
    let mut used = Vec::new();
    for s in systems {
        used.push((s.label(), prep.symbols_for(s, snr_db, budget)?));
    }
    if let Some((_, first)) = used.first() {
        if used.iter().any(|(_, n)| n != first) {
            let detail: Vec<String> = used.iter().map(|(l, n)| format!("{l}={n}")).collect();
            return Err(Error::Fairness(format!(
                "unequal channel use at {snr_db} dB for {}: {}",
                prep.path.display(),
                detail.join(", ")
            )));
        }
    }
    Ok(FairnessRecord {
        image: prep.path.display().to_string(),
        snr_db,
        symbols_used: used.first().map_or(0, |u| u.1),
        analog_budget: budget,
        systems: used.into_iter().map(|u| u.0).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Trial,
    Mean,
    Std,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub schema_version: u32,
    pub row: RowKind,
    pub config_index: usize,
    pub system: String,
    pub image: String,
    #[serde(with = "f64_inf")]
    pub snr_db: f64,
    pub trial: Option<usize>,
    pub seed: Option<u64>,
    pub transport: String,
    pub modulation: String,
    pub fec: String,
    pub symbols_used: usize,
    pub bpp: f64,
    pub ber: f64,
    pub channel_ber: f64,
    pub ser: f64,
    pub integrity_failed: f64,
    pub color_mse: Option<f64>,
    pub texture_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SnrSweep {
    pub rows: Vec<SnrRow>,
    pub fairness: Vec<FairnessRecord>,
}

impl SnrSweep {
    /// Aggregate rows of `kind` for the system at `config_index`, in SNR order.
    pub fn aggregate(&self, config_index: usize, kind: RowKind) -> Vec<&SnrRow> {
        self.rows
            .iter()
            .filter(|r| r.config_index == config_index && r.row == kind)
            .collect()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate_rows(trials: &[&SnrRow]) -> [SnrRow; 2] {
    let stat = |f: &dyn Fn(&SnrRow) -> Option<f64>| {
        let v: Vec<f64> = trials.iter().filter_map(|r| f(r)).collect();
        if v.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&v);
            (Some(m), Some(s))
        }
    };
    let cols: [&dyn Fn(&SnrRow) -> Option<f64>; 7] = [
        &|r| Some(r.bpp),
        &|r| Some(r.ber),
        &|r| Some(r.channel_ber),
        &|r| Some(r.ser),
        &|r| Some(r.integrity_failed),
        &|r| r.color_mse,
        &|r| r.texture_mse,
    ];
    let stats: Vec<(Option<f64>, Option<f64>)> = cols.iter().map(|f| stat(*f)).collect();
    let first = trials[0];
    let build = |kind: RowKind, pick: &dyn Fn(&(Option<f64>, Option<f64>)) -> Option<f64>| SnrRow {
        schema_version: CSV_SCHEMA_VERSION,
        row: kind,
        config_index: first.config_index,
        system: first.system.clone(),
        image: "*".into(),
        snr_db: first.snr_db,
        trial: None,
        seed: None,
        transport: first.transport.clone(),
        modulation: first.modulation.clone(),
        fec: first.fec.clone(),
        symbols_used: first.symbols_used,
        bpp: pick(&stats[0]).unwrap_or(0.0),
        ber: pick(&stats[1]).unwrap_or(0.0),
        channel_ber: pick(&stats[2]).unwrap_or(0.0),
        ser: pick(&stats[3]).unwrap_or(0.0),
        integrity_failed: pick(&stats[4]).unwrap_or(0.0),
        color_mse: pick(&stats[5]),
        texture_mse: pick(&stats[6]),
    };
    [build(RowKind::Mean, &|s| s.0), build(RowKind::Std, &|s| s.1)]
}

/// Runs every system × image × SNR × trial and aggregates per system and SNR.
pub fn sweep_snr(cfg: &RunConfig) -> Result<SnrSweep> {
    cfg.validate()?;
    if cfg.snr_db.len() < 2 {
        return Err(Error::param("an SNR sweep needs at least two SNR points"));
    }
    let inputs = cfg.resolve_inputs()?;
    let images = inputs
        .par_iter()
        .map(|p| PreparedImage::load(p, &cfg.profile, &cfg.quant))
        .collect::<Result<Vec<_>>>()?;
    sweep_snr_prepared(cfg, &images)
}

/// [`sweep_snr`] over images already decomposed and encoded.
pub fn sweep_snr_prepared(cfg: &RunConfig, images: &[PreparedImage]) -> Result<SnrSweep> {
    let systems = cfg.systems();
    let fecs = systems
        .iter()
        .map(|s| s.fec.build())
        .collect::<Result<Vec<_>>>()?;

    let mut fairness = Vec::new();
    let mut budgets = BTreeMap::new();
    for (ii, prep) in images.iter().enumerate() {
        for (si, &snr) in cfg.snr_db.iter().enumerate() {
            let record = match_channel_use(prep, &systems, snr, cfg.analog_budget)?;
            budgets.insert((ii, si), record.analog_budget);
            fairness.push(record);
        }
    }

    let jobs: Vec<(usize, usize, usize, usize)> = (0..systems.len())
        .flat_map(|c| {
            (0..images.len()).flat_map(move |i| {
                (0..cfg.snr_db.len()).flat_map(move |s| (0..cfg.trials).map(move |t| (c, i, s, t)))
            })
        })
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(c, i, s, t)| {
            let (system, prep, snr) = (&systems[c], &images[i], cfg.snr_db[s]);
            let channel = ChannelConfig::new(snr, trial_seed(cfg.seed, t, s));
            let out = run_trial(prep, system, &fecs[c], &channel, budgets[&(i, s)])?;
            let (color_mse, texture_mse) = out.feature_mse(&prep.payload)?;
            Ok(((c, i, s, t), SnrRow {
                schema_version: CSV_SCHEMA_VERSION,
                row: RowKind::Trial,
                config_index: c,
                system: system.label(),
                image: prep.path.display().to_string(),
                snr_db: snr,
                trial: Some(t),
                seed: Some(channel.seed),
                transport: system.transport.name().into(),
                modulation: system.modulation_label(snr),
                fec: system.fec_label(),
                symbols_used: out.usage.symbols_used,
                bpp: prep.bpp(),
                ber: out.usage.ber(),
                channel_ber: out.usage.channel_ber(),
                ser: out.usage.ser(),
                integrity_failed: if out.integrity_failed { 1.0 } else { 0.0 },
                color_mse,
                texture_mse,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|(k, _)| *k);

    let trial_rows: Vec<SnrRow> = rows.into_iter().map(|(_, r)| r).collect();
    let mut all = trial_rows.clone();
    for c in 0..systems.len() {
        for &snr in &cfg.snr_db {
            let group: Vec<&SnrRow> = trial_rows
                .iter()
                .filter(|r| r.config_index == c && r.snr_db.total_cmp(&snr).is_eq())
                .collect();
            all.extend(aggregate_rows(&group));
        }
    }
    Ok(SnrSweep { rows: all, fairness })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

#[derive(Serialize)]
struct SweepManifest<'a> {
    schema_version: u32,
    inputs: Vec<String>,
    config: serde_json::Value,
    fairness: &'a [FairnessRecord],
}

/// Runs [`sweep_snr`] and writes `sweep_snr.csv` and `sweep_snr.json`
/// (config echo, resolved inputs, per-point channel use) to the output dir.
pub fn cmd_sweep_snr(cfg: &RunConfig) -> Result<SnrSweep> {
    let sweep = sweep_snr(cfg)?;
    create_dir(&cfg.output_dir)?;
    write_csv(&cfg.output_dir.join("sweep_snr.csv"), &sweep.rows).map_err(|e| e.at("write"))?;
    let manifest = SweepManifest {
        schema_version: CSV_SCHEMA_VERSION,
        inputs: cfg.resolve_inputs()?.iter().map(|p| p.display().to_string()).collect(),
        config: cfg.echo(),
        fairness: &sweep.fairness,
    };
    write_json(&cfg.output_dir.join("sweep_snr.json"), &manifest).map_err(|e| e.at("write"))?;
    Ok(sweep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BppRow {
    pub schema_version: u32,
    pub row: RowKind,
    pub rung_index: usize,
    pub label: String,
    pub image: String,
    pub color_grid: String,
    pub texture_grid: String,
    pub color_bits: u8,
    pub texture_bits: u8,
    pub texture_palette: bool,
    pub bits: f64,
    pub bpp: f64,
    pub color_mse: f64,
    pub texture_mse: f64,
    #[serde(with = "f64_inf")]
    pub image_psnr_db: f64,
}

/// Default ladder: the built-in profiles from coarsest to finest.
pub fn default_bpp_ladder(caption: &CaptionSource) -> Vec<BppRung> {
    BUILTIN_PROFILES
        .iter()
        .map(|name| {
            let (profile, quant) = builtin_profile(name, caption.clone()).expect("builtin");
            BppRung {
                label: (*name).into(),
                profile,
                quant,
            }
        })
        .collect()
}

/// Distortion of one image at one rung over a lossless channel.
pub fn bpp_point(image: &RgbImage, path: Option<&Path>, rung: &BppRung) -> Result<(usize, f64, f64, f64, f64)> {
    let prep = PreparedImage::from_image(image.clone(), path, &rung.profile, &rung.quant)?;
    let received = decode_payload(&prep.bitstream).map_err(|e| e.at("decode"))?;
    let (w, h) = image.dims();
    let color = upsample(&received.color.cells, w, h, Resample::Nearest)?;
    let color_mse = metrics::mse(image, &color)?;
    let lbp = lbp_map(&to_grayscale(image), &rung.profile.lbp)?;
    let texture = upsample(&received.texture.cells, w, h, Resample::Nearest)?;
    let texture_mse = metrics::mse(&lbp, &texture)?;
    let restored = compose_fallback(&RestorationRequest::from_payload(&received, 0)).map_err(|e| e.at("restore"))?;
    let psnr = metrics::psnr(image, &restored)?;
    Ok((prep.bitstream.bit_len(), prep.bpp(), color_mse, texture_mse, psnr))
}

/// Noiseless rate/distortion sweep over the configured ladder.
pub fn sweep_bpp(cfg: &RunConfig) -> Result<Vec<BppRow>> {
    cfg.validate()?;
    let ladder = if cfg.bpp_ladder.is_empty() {
        default_bpp_ladder(&cfg.profile.caption)
    } else {
        cfg.bpp_ladder.clone()
    };
    if ladder.len() < 2 {
        return Err(Error::param("a bpp sweep needs at least two rungs"));
    }
    let inputs = cfg.resolve_inputs()?;
    let images = inputs
        .iter()
        .map(|p| RgbImage::load_png(p).map_err(|e| e.at("load")))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..ladder.len())
        .flat_map(|r| (0..images.len()).map(move |i| (r, i)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(r, i)| bpp_point(&images[i], Some(&inputs[i]), &ladder[r]))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (r, rung) in ladder.iter().enumerate() {
        let base = |row, image: String, v: (f64, f64, f64, f64, f64)| BppRow {
            schema_version: CSV_SCHEMA_VERSION,
            row,
            rung_index: r,
            label: if rung.label.is_empty() { format!("rung{r}") } else { rung.label.clone() },
            image,
            color_grid: format!("{}x{}", rung.profile.color_grid.cols, rung.profile.color_grid.rows),
            texture_grid: format!("{}x{}", rung.profile.texture_grid.cols, rung.profile.texture_grid.rows),
            color_bits: rung.quant.color_bits,
            texture_bits: rung.quant.texture_bits,
            texture_palette: rung.quant.texture_palette,
            bits: v.0,
            bpp: v.1,
            color_mse: v.2,
            texture_mse: v.3,
            image_psnr_db: v.4,
        };
        let mine: Vec<_> = jobs
            .iter()
            .zip(&points)
            .filter(|((rr, _), _)| *rr == r)
            .map(|((_, i), p)| (*i, *p))
            .collect();
        for &(i, (bits, bpp, c, t, p)) in &mine {
            rows.push(base(RowKind::Trial, inputs[i].display().to_string(), (bits as f64, bpp, c, t, p)));
        }
        let col = |f: &dyn Fn(&(usize, f64, f64, f64, f64)) -> f64| {
            mean_std(&mine.iter().map(|(_, p)| f(p)).collect::<Vec<_>>())
        };
        let stats = [
            col(&|p| p.0 as f64),
            col(&|p| p.1),
            col(&|p| p.2),
            col(&|p| p.3),
            // Mean PSNR of the mean MSE would need the MSEs; average dB values.
            col(&|p| p.4),
        ];
        rows.push(base(
            RowKind::Mean,
            "*".into(),
            (stats[0].0, stats[1].0, stats[2].0, stats[3].0, stats[4].0),
        ));
        rows.push(base(
            RowKind::Std,
            "*".into(),
            (stats[0].1, stats[1].1, stats[2].1, stats[3].1, stats[4].1),
        ));
    }
    Ok(rows)
}

pub fn cmd_sweep_bpp(cfg: &RunConfig) -> Result<Vec<BppRow>> {
    let rows = sweep_bpp(cfg)?;
    create_dir(&cfg.output_dir)?;
    write_csv(&cfg.output_dir.join("sweep_bpp.csv"), &rows).map_err(|e| e.at("write"))?;
    Ok(rows)
}

/// Files written for one transmission.
#[derive(Debug, Clone)]
pub struct TransmitArtifacts {
    pub dir: PathBuf,
    pub report: TransmissionReport,
    pub restored: Option<RgbImage>,
}

fn snr_label(snr: f64) -> String {
    if snr.is_infinite() {
        "inf".into()
    } else {
        format!("{snr}")
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Full pipeline for every input × system × SNR (trial 0). Writes, under
/// `<output_dir>/<image stem>/<system>_snr<snr>/`: `report.json`, and unless
/// the integrity check failed, `received_color.png`,
/// `received_texture.png`, `payload.smcp` and `restored.png` (when the
/// backend produces images).
pub fn cmd_transmit(cfg: &RunConfig) -> Result<Vec<TransmitArtifacts>> {
    cfg.validate()?;
    let backend = cfg.restorer.build()?;
    let plugins = cfg.plugins();
    let mut out = Vec::new();
    for path in cfg.resolve_inputs()? {
        let prep = PreparedImage::load(&path, &cfg.profile, &cfg.quant)?;
        let stem = file_stem(&path);
        for system in cfg.systems() {
            for (si, &snr) in cfg.snr_db.iter().enumerate() {
                let dir = cfg
                    .output_dir
                    .join(&stem)
                    .join(format!("{}_snr{}", system.label(), snr_label(snr)));
                out.push(transmit_one(cfg, &prep, &system, si, snr, &backend, &plugins, &dir)?);
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn transmit_one(
    cfg: &RunConfig,
    prep: &PreparedImage,
    system: &SystemSpec,
    snr_index: usize,
    snr: f64,
    backend: &RestorerBackend,
    plugins: &MetricPlugins,
    dir: &Path,
) -> Result<TransmitArtifacts> {
    let fec = system.fec.build()?;
    let budget = match system.transport {
        TransportKind::Analog => match cfg.analog_budget {
            Some(b) => b,
            None => match_channel_use(prep, std::slice::from_ref(system), snr, None)?.analog_budget,
        },
        TransportKind::Digital => 0,
    };
    let channel = ChannelConfig::new(snr, trial_seed(cfg.seed, 0, snr_index));
    let outcome = run_trial(prep, system, &fec, &channel, budget)?;
    let (color_mse, texture_mse) = outcome.feature_mse(&prep.payload)?;

    create_dir(dir)?;
    let mut restored = None;
    if let (Some(received), Some(bitstream)) = (&outcome.received, &outcome.received_bitstream) {
        received.color.cells.save_png(&dir.join("received_color.png")).map_err(|e| e.at("write"))?;
        received.texture.cells.save_png(&dir.join("received_texture.png")).map_err(|e| e.at("write"))?;
        write_file(&dir.join(format!("payload.{PAYLOAD_EXTENSION}")), bitstream.as_bytes())?;
        restored = backend
            .restore(&RestorationRequest::from_payload(received, cfg.seed))
            .map_err(|e| e.at("restore"))?;
        if let Some(img) = &restored {
            img.save_png(&dir.join("restored.png")).map_err(|e| e.at("write"))?;
        }
    }

    let mut plugin_values = BTreeMap::new();
    if let Some(img) = &restored {
        for name in plugins.names() {
            let v = metrics::metric_plugin(plugins, name, &prep.image, img).map_err(|e| e.at("metrics"))?;
            plugin_values.insert(name.to_owned(), v);
        }
    }
    let report = TransmissionReport {
        image: prep.path.display().to_string(),
        transport: system.transport.name().into(),
        modulation: system.modulation_label(snr),
        fec: system.fec_label(),
        snr_db: snr,
        seed: cfg.seed,
        bpp: prep.bpp(),
        source_bits: prep.bitstream.bit_len(),
        symbols_used: outcome.usage.symbols_used,
        coded_bits: outcome.usage.coded_bits,
        ber: outcome.usage.ber(),
        channel_ber: outcome.usage.channel_ber(),
        ser: outcome.usage.ser(),
        color_mse,
        texture_mse,
        image_psnr_db: match &restored {
            Some(img) => Some(metrics::psnr(&prep.image, img)?),
            None => None,
        },
        integrity_failed: outcome.integrity_failed,
        side_info_intact: outcome.side_info_intact,
        metrics: plugin_values,
        config: cfg.echo(),
    };
    report.validate()?;
    write_file(&dir.join("report.json"), format!("{}\n", report.to_json()?).as_bytes())?;
    Ok(TransmitArtifacts {
        dir: dir.to_path_buf(),
        report,
        restored,
    })
}

pub fn load_payload(path: &Path) -> Result<SemanticPayload> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_payload(&Bitstream::from_bytes(bytes))
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub before: RgbImage,
    pub after: RgbImage,
    pub edited: SemanticPayload,
}

/// Applies `edits` in order to a saved payload and restores it before and
/// after. Writes `before.png`, `after.png` and `edited.smcp` (lossless) to
/// `out_dir`.
pub fn cmd_edit(
    payload_path: &Path,
    edits: &[EditCommand],
    backend: &RestorerBackend,
    seed: u64,
    out_dir: &Path,
) -> Result<EditOutcome> {
    let original = load_payload(payload_path).map_err(|e| e.at("load"))?;
    let outcome = edit_and_restore(&original, edits, backend, seed)?;
    create_dir(out_dir)?;
    outcome.before.save_png(&out_dir.join("before.png")).map_err(|e| e.at("write"))?;
    outcome.after.save_png(&out_dir.join("after.png")).map_err(|e| e.at("write"))?;
    let bitstream = encode_payload(&outcome.edited, &QuantizationSpec::LOSSLESS)?;
    write_file(&out_dir.join(format!("edited.{PAYLOAD_EXTENSION}")), bitstream.as_bytes())?;
    Ok(outcome)
}

pub fn edit_and_restore(
    original: &SemanticPayload,
    edits: &[EditCommand],
    backend: &RestorerBackend,
    seed: u64,
) -> Result<EditOutcome> {
    let mut edited = original.clone();
    for edit in edits {
        edited = edit_payload(&edited, edit).map_err(|e| e.at("edit"))?;
    }
    let restore = |p: &SemanticPayload| -> Result<RgbImage> {
        backend
            .restore(&RestorationRequest::from_payload(p, seed))
            .map_err(|e| e.at("restore"))?
            .ok_or_else(|| Error::param("editing needs a restorer that produces images"))
    };
    Ok(EditOutcome {
        before: restore(original)?,
        after: restore(&edited)?,
        edited,
    })
}

/// Header summary of a saved payload.
#[derive(Debug, Clone, Serialize)]
pub struct PayloadInfo {
    pub bytes: usize,
    pub bit_len: usize,
    pub bpp: f64,
    pub crc_ok: bool,
    pub header: codec::BitstreamHeader,
    pub text: Option<String>,
}

pub fn cmd_inspect(path: &Path) -> Result<PayloadInfo> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = bytes.len();
    let b = Bitstream::from_bytes(bytes);
    let header = read_header(&b)?;
    Ok(PayloadInfo {
        bytes: n,
        bit_len: b.bit_len(),
        bpp: codec::bpp(&b, header.source_dims)?,
        crc_ok: b.verify().is_ok(),
        text: decode_payload(&b).ok().map(|p| p.text),
        header,
    })
}

/// Captions one image file.
pub fn cmd_caption(path: &Path, source: &CaptionSource) -> Result<String> {
    let img = RgbImage::load_png(path).map_err(|e| e.at("load"))?;
    features::caption(&img, Some(path), source).map_err(|e| e.at("caption"))
}

/// Texture map upsampled to the source size, as the restorer sees it.
pub fn expanded_texture(p: &SemanticPayload) -> Result<GrayImage> {
    let (w, h) = p.source_dims();
    upsample(&p.texture.cells, w, h, Resample::Nearest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::CellRect;

    fn scene(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let stripe = if (x / 3 + y / 5) % 2 == 0 { 40 } else { 0 };
            [(x * 255 / w) as u8, (y * 255 / h) as u8, 90 + stripe]
        })
        .unwrap()
    }

    fn write_scene(dir: &Path, name: &str, w: usize, h: usize) -> PathBuf {
        let path = dir.join(name);
        scene(w, h).save_png(&path).unwrap();
        std::fs::write(features::sidecar_path(&path), "a gradient with stripes").unwrap();
        path
    }

    fn small_config(dir: &Path, inputs: Vec<PathBuf>) -> RunConfig {
        RunConfig {
            inputs,
            profile: ExtractionProfile::new(8, 16, 1, CaptionSource::Sidecar),
            quant: QuantizationSpec { color_bits: 6, texture_bits: 4, texture_palette: false },
            output_dir: dir.join("out"),
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = RunConfig {
            inputs: vec!["a.png".into()],
            snr_db: vec![0.0, f64::INFINITY],
            ..RunConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(RunConfig::from_json(&json).unwrap(), cfg);
        let partial = RunConfig::from_json(r#"{"inputs": ["x.png"], "snr_db": [3], "fec": {"kind": "repetition"}}"#).unwrap();
        assert_eq!(partial.fec, FecChoice::Repetition);
        assert_eq!(partial.trials, 1);
        assert!(RunConfig::from_json(r#"{"inptus": []}"#).is_err());
        assert!(!cfg.echo().as_object().unwrap().contains_key("output_dir"));
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_err());
        cfg.inputs = vec!["a.png".into()];
        cfg.validate().unwrap();
        cfg.trials = 0;
        assert!(matches!(cfg.validate(), Err(Error::Parameter(_))));
        cfg.trials = 1;
        cfg.quant.color_bits = 9;
        assert!(matches!(cfg.validate(), Err(Error::Encoding(_))));
        cfg.quant.color_bits = 8;
        cfg.systems = vec![SystemSpec::analog(), SystemSpec::analog()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn extreme_profile_at_512() {
        let (profile, quant) = builtin_profile("extreme", CaptionSource::Fixed { text: "ab".into() }).unwrap();
        let prep = PreparedImage::from_image(scene(512, 512), None, &profile, &quant).unwrap();
        // header 30 bytes, 24·24·3·8 color, 64·64·2 texture, 2 text bytes, CRC
        let bits = 240 + 13_824 + 8_192 + 16 + 32;
        assert_eq!(prep.bitstream.bit_len(), bits);
        assert_eq!(prep.bpp(), bits as f64 / 262_144.0);
        assert!(prep.bpp() <= 0.1);
        assert!(builtin_profile("huge", CaptionSource::Sidecar).is_err());
    }

    #[test]
    fn ladder_selection() {
        let s = SystemSpec {
            modulation_ladder: vec![
                LadderStep { min_snr_db: 12.0, scheme: ModulationScheme::Qam16 },
                LadderStep { min_snr_db: 4.0, scheme: ModulationScheme::Qpsk },
                LadderStep { min_snr_db: 18.0, scheme: ModulationScheme::Qam64 },
            ],
            ..SystemSpec::default()
        };
        assert_eq!(s.scheme_at(0.0), ModulationScheme::Qpsk);
        assert_eq!(s.scheme_at(12.0), ModulationScheme::Qam16);
        assert_eq!(s.scheme_at(f64::INFINITY), ModulationScheme::Qam64);
        assert_eq!(s.label(), "digital-ladder-ldpc0");
    }

    #[test]
    fn noiseless_digital_error_is_quantization_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene(dir.path(), "a.png", 48, 40);
        let cfg = small_config(dir.path(), vec![path]);
        let art = &cmd_transmit(&cfg).unwrap()[0];
        let prep = PreparedImage::load(&cfg.inputs[0], &cfg.profile, &cfg.quant).unwrap();
        let oracle = codec::dequantized(&prep.payload, &cfg.quant).unwrap();
        let expect_color = metrics::mse(&prep.payload.color.cells, &oracle.color.cells).unwrap();
        let expect_texture = metrics::mse(&prep.payload.texture.cells, &oracle.texture.cells).unwrap();
        assert_eq!(art.report.color_mse, Some(expect_color));
        assert_eq!(art.report.texture_mse, Some(expect_texture));
        // 6-bit color: error at most half a step of 4
        assert!(expect_color <= 4.0);
        assert!(!art.report.integrity_failed);
        for f in ["report.json", "restored.png", "received_color.png", "received_texture.png", "payload.smcp"] {
            assert!(art.dir.join(f).is_file(), "{f}");
        }
        let saved = load_payload(&art.dir.join("payload.smcp")).unwrap();
        assert_eq!(saved, oracle);
    }

    #[test]
    fn integrity_failure_writes_report_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene(dir.path(), "a.png", 48, 40);
        let cfg = RunConfig {
            snr_db: vec![-5.0],
            modulation: ModulationScheme::Qam64,
            ..small_config(dir.path(), vec![path])
        };
        let art = &cmd_transmit(&cfg).unwrap()[0];
        assert!(art.report.integrity_failed);
        assert!(art.restored.is_none());
        assert_eq!(art.report.image_psnr_db, None);
        assert!(art.dir.join("report.json").is_file());
        assert!(!art.dir.join("restored.png").exists());
        assert!(!art.dir.join("payload.smcp").exists());
    }

    #[test]
    fn analog_never_fails_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene(dir.path(), "a.png", 48, 40);
        let cfg = RunConfig {
            snr_db: vec![20.0, 0.0],
            transport: TransportKind::Analog,
            ..small_config(dir.path(), vec![path])
        };
        for art in cmd_transmit(&cfg).unwrap() {
            assert!(!art.report.integrity_failed);
            assert!(art.restored.is_some());
        }
    }

    #[test]
    fn transmit_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene(dir.path(), "a.png", 40, 40);
        let mut cfg = RunConfig {
            snr_db: vec![14.0],
            seed: 11,
            ..small_config(dir.path(), vec![path])
        };
        let a = cmd_transmit(&cfg).unwrap();
        cfg.output_dir = dir.path().join("second");
        let b = cmd_transmit(&cfg).unwrap();
        assert!(!a[0].report.integrity_failed);
        for f in ["report.json", "restored.png", "received_texture.png"] {
            let x = std::fs::read(a[0].dir.join(f)).unwrap();
            let y = std::fs::read(b[0].dir.join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }

    #[test]
    fn sweep_rows_fairness_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene(dir.path(), "a.png", 40, 32);
        let cfg = RunConfig {
            snr_db: vec![0.0, 10.0, 20.0],
            trials: 3,
            systems: vec![
                SystemSpec::digital(ModulationScheme::Qam16, FecChoice::Ldpc { seed: 0 }),
                SystemSpec::analog(),
            ],
            ..small_config(dir.path(), vec![path])
        };
        let sweep = cmd_sweep_snr(&cfg).unwrap();
        let trials: Vec<&SnrRow> = sweep.rows.iter().filter(|r| r.row == RowKind::Trial).collect();
        assert_eq!(trials.len(), 2 * 3 * 3);
        let keys: Vec<_> = trials.iter().map(|r| (r.config_index, r.snr_db as i64, r.trial)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for snr in [0.0, 10.0, 20.0] {
            let used: Vec<usize> = trials.iter().filter(|r| r.snr_db == snr).map(|r| r.symbols_used).collect();
            assert!(used.windows(2).all(|w| w[0] == w[1]), "{used:?}");
        }
        assert_eq!(sweep.aggregate(0, RowKind::Mean).len(), 3);
        assert!(cfg.output_dir.join("sweep_snr.csv").is_file());
        let text = std::fs::read_to_string(cfg.output_dir.join("sweep_snr.csv")).unwrap();
        assert!(text.starts_with("schema_version,row,config_index,system,image,snr_db,trial,seed,"));
        // Paired trials share channel seeds across systems.
        assert_eq!(trials[0].seed, trials[9].seed);
    }

    #[test]
    fn unequal_digital_systems_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene(dir.path(), "a.png", 40, 32);
        let mut cfg = RunConfig {
            snr_db: vec![0.0, 10.0],
            systems: vec![
                SystemSpec::digital(ModulationScheme::Qam16, FecChoice::Ldpc { seed: 0 }),
                SystemSpec::digital(ModulationScheme::Qpsk, FecChoice::Ldpc { seed: 0 }),
            ],
            ..small_config(dir.path(), vec![path])
        };
        assert!(matches!(sweep_snr(&cfg), Err(Error::Fairness(_))));
        // Same coded bits and scheme: accepted with identical channel use.
        cfg.systems[1] = SystemSpec {
            label: "twin".into(),
            ..SystemSpec::digital(ModulationScheme::Qam16, FecChoice::Ldpc { seed: 1 })
        };
        let sweep = sweep_snr(&cfg).unwrap();
        let a: Vec<_> = sweep.rows.iter().filter(|r| r.config_index == 0).map(|r| r.symbols_used).collect();
        let b: Vec<_> = sweep.rows.iter().filter(|r| r.config_index == 1).map(|r| r.symbols_used).collect();
        assert_eq!(a, b);
        // An explicit analog budget that does not match is refused too.
        cfg.systems[1] = SystemSpec::analog();
        cfg.analog_budget = Some(100);
        assert!(matches!(sweep_snr(&cfg), Err(Error::Fairness(_))));
    }

    #[test]
    fn sweep_needs_two_points() {
        let cfg = RunConfig {
            inputs: vec!["a.png".into()],
            snr_db: vec![3.0],
            ..RunConfig::default()
        };
        assert!(matches!(sweep_snr(&cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn bpp_sweep_ladder() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene(dir.path(), "a.png", 64, 64);
        let rung = |c: usize| BppRung {
            label: format!("c{c}"),
            profile: ExtractionProfile::new(c, 16, 1, CaptionSource::Sidecar),
            quant: QuantizationSpec { color_bits: 8, texture_bits: 3, texture_palette: true },
        };
        let cfg = RunConfig {
            bpp_ladder: vec![rung(1), rung(4), rung(16), rung(64)],
            ..small_config(dir.path(), vec![path])
        };
        let rows = cmd_sweep_bpp(&cfg).unwrap();
        let trials: Vec<&BppRow> = rows.iter().filter(|r| r.row == RowKind::Trial).collect();
        assert_eq!(trials.len(), 4);
        for w in trials.windows(2) {
            assert!(w[1].bpp > w[0].bpp);
            assert!(w[1].color_mse <= w[0].color_mse);
        }
        assert_eq!(trials[0].color_grid, "1x1");
        assert!(cfg.output_dir.join("sweep_bpp.csv").is_file());
    }

    #[test]
    fn edits_through_fallback() {
        let (profile, quant) = builtin_profile("extreme", CaptionSource::Fixed { text: "x".into() }).unwrap();
        let prep = PreparedImage::from_image(scene(96, 96), None, &profile, &quant).unwrap();
        let p = decode_payload(&prep.bitstream).unwrap();
        let backend = RestorerBackend::Fallback;

        let text_only = edit_and_restore(&p, &[EditCommand::SetText { text: "a dog".into() }], &backend, 0).unwrap();
        assert_eq!(text_only.before, text_only.after);

        let red = EditCommand::TintColor { rect: CellRect::full(p.color.grid()), rgb: [255, 0, 0] };
        let tinted = edit_and_restore(&p, &[red], &backend, 0).unwrap();
        let red_mean = |img: &RgbImage| img.as_raw().chunks(3).map(|c| c[0] as f64).sum::<f64>();
        assert!(red_mean(&tinted.after) > red_mean(&tinted.before));

        let bad = EditCommand::FillTexture { rect: CellRect { x: 60, y: 0, w: 5, h: 1 }, value: 3 };
        assert!(matches!(
            edit_and_restore(&p, &[bad], &backend, 0).map_err(|e| e.root().to_string()),
            Err(m) if m.contains("outside")
        ));
        assert!(edit_and_restore(&p, &[], &RestorerBackend::None, 0).is_err());
    }

    #[test]
    fn edit_and_inspect_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_scene(dir.path(), "a.png", 48, 40);
        let cfg = small_config(dir.path(), vec![path]);
        let art = &cmd_transmit(&cfg).unwrap()[0];
        let payload = art.dir.join("payload.smcp");
        let info = cmd_inspect(&payload).unwrap();
        assert!(info.crc_ok);
        assert_eq!(info.header.source_dims, (48, 40));
        assert_eq!(info.text.as_deref(), Some("a gradient with stripes"));
        let out = dir.path().join("edit");
        cmd_edit(&payload, &[EditCommand::SetText { text: "x".into() }], &RestorerBackend::Fallback, 0, &out).unwrap();
        for f in ["before.png", "after.png", "edited.smcp"] {
            assert!(out.join(f).is_file());
        }
        assert_eq!(load_payload(&out.join("edited.smcp")).unwrap().text, "x");
    }

    #[test]
    fn directory_inputs_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), "b.png", 8, 8);
        write_scene(dir.path(), "a.png", 8, 8);
        let cfg = RunConfig {
            inputs: vec![dir.path().to_path_buf()],
            ..RunConfig::default()
        };
        let names: Vec<String> = cfg.resolve_inputs().unwrap().iter().map(|p| file_stem(p)).collect();
        assert_eq!(names, ["a", "b"]);
    }
}
