//! Distortion and error-rate measures, run reports, and external metric plugins.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Serializes `f64` infinities (and NaN) as strings so JSON stays valid.
pub mod f64_inf {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(with = "super")] f64);
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Wrap(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for &x in v {
                seq.serialize_element(&Wrap(x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
        }
    }
}

fn same_dims<const C: usize>(a: &Image<C>, b: &Image<C>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::param(format!(
            "dimension mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean squared sample difference over every channel.
pub fn mse<const C: usize>(a: &Image<C>, b: &Image<C>) -> Result<f64> {
    same_dims(a, b)?;
    let sum: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as u64;
            d * d
        })
        .sum();
    Ok(sum as f64 / a.as_raw().len() as f64)
}

/// Peak signal-to-noise ratio for 8-bit samples; infinite for identical images.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

pub fn psnr<const C: usize>(a: &Image<C>, b: &Image<C>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn error_rate<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::param(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64)
}

pub fn ber(sent: &[u8], received: &[u8]) -> Result<f64> {
    error_rate(sent, received)
}

/// Symbol error rate over symbol labels (or any comparable symbols).
pub fn ser<T: PartialEq>(sent: &[T], received: &[T]) -> Result<f64> {
    error_rate(sent, received)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// External similarity metrics (`program args... <a.png> <b.png>`, one
/// number on stdout).
#[derive(Debug, Clone, Default)]
pub struct MetricPlugins {
    plugins: BTreeMap<String, PluginCommand>,
}

#[derive(Debug, Clone)]
struct PluginCommand {
    program: PathBuf,
    args: Vec<String>,
    /// Calls to one plugin run one at a time.
    lock: Arc<Mutex<()>>,
}

impl MetricPlugins {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, program: impl Into<PathBuf>, args: Vec<String>) {
        self.plugins.insert(
            name.into(),
            PluginCommand {
                program: program.into(),
                args,
                lock: Arc::default(),
            },
        );
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.plugins.keys().map(String::as_str)
    }

    /// Runs plugin `name` on two PNG files.
    pub fn evaluate_paths(&self, name: &str, a: &Path, b: &Path) -> Result<f64> {
        let err = |message: String| Error::Metric {
            name: name.to_owned(),
            message,
        };
        let plugin = self
            .plugins
            .get(name)
            .ok_or_else(|| err("not registered".into()))?;
        let _guard = plugin.lock.lock().unwrap_or_else(|e| e.into_inner());
        let output = Command::new(&plugin.program)
            .args(&plugin.args)
            .arg(a)
            .arg(b)
            .output()
            .map_err(|e| err(format!("cannot run {}: {e}", plugin.program.display())))?;
        if !output.status.success() {
            return Err(err(format!(
                "exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        stdout
            .trim()
            .parse::<f64>()
            .map_err(|_| err(format!("unparsable output {:?}", stdout.trim())))
    }
}

/// Writes both images to a temporary directory and runs plugin `name`.
pub fn metric_plugin<const C: usize>(
    plugins: &MetricPlugins,
    name: &str,
    a: &Image<C>,
    b: &Image<C>,
) -> Result<f64>
where
    Image<C>: PngWrite,
{
    let dir = tempfile::tempdir().map_err(|e| Error::Metric {
        name: name.to_owned(),
        message: e.to_string(),
    })?;
    let (pa, pb) = (dir.path().join("a.png"), dir.path().join("b.png"));
    a.write_png(&pa)?;
    b.write_png(&pb)?;
    plugins.evaluate_paths(name, &pa, &pb)
}

/// PNG output for either raster type.
pub trait PngWrite {
    fn write_png(&self, path: &Path) -> Result<()>;
}

impl PngWrite for crate::imaging::RgbImage {
    fn write_png(&self, path: &Path) -> Result<()> {
        self.save_png(path)
    }
}

impl PngWrite for crate::imaging::GrayImage {
    fn write_png(&self, path: &Path) -> Result<()> {
        self.save_png(path)
    }
}

/// Everything measured for one run, plus the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionReport {
    pub image: String,
    pub transport: String,
    pub modulation: String,
    pub fec: String,
    #[serde(with = "f64_inf")]
    pub snr_db: f64,
    pub seed: u64,
    pub bpp: f64,
    pub source_bits: usize,
    pub symbols_used: usize,
    pub coded_bits: usize,
    /// Bit error rate of the delivered source bits (after FEC).
    pub ber: f64,
    /// Hard-decision bit error rate before FEC.
    pub channel_ber: f64,
    pub ser: f64,
    /// Feature distortion against the features extracted at the sender
    /// (before quantization); absent when the digital stream failed its
    /// integrity check.
    pub color_mse: Option<f64>,
    pub texture_mse: Option<f64>,
    #[serde(with = "f64_inf::option")]
    pub image_psnr_db: Option<f64>,
    pub integrity_failed: bool,
    pub side_info_intact: bool,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    /// Full configuration echo for reproducing the run.
    pub config: serde_json::Value,
}

impl TransmissionReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ber", self.ber), ("channel_ber", self.channel_ber), ("ser", self.ser)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!("{name} {v} outside [0, 1]")));
            }
        }
        for v in [self.color_mse, self.texture_mse].into_iter().flatten() {
            if v < 0.0 {
                return Err(Error::param("negative mse"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
