//! Semantic feature decomposition: caption text, color mosaic, LBP texture.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    block_mean_downsample, median_filter, to_grayscale, BlockGrid, GrayImage, RgbImage,
};

/// Captions are capped at this many UTF-8 bytes.
pub const MAX_TEXT_BYTES: usize = 1024;

/// Neighbor offsets `(dx, dy)` clockwise from the top-left.
pub const CLOCKWISE_FROM_TOP_LEFT: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// 3×3 local binary pattern parameters.
///
/// Neighbor `k` (in clockwise order from the top-left) contributes
/// `weights[k]` when it is strictly brighter than the center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LbpConfig {
    weights: [u8; 8],
}

impl Default for LbpConfig {
    fn default() -> Self {
        Self {
            weights: [1, 2, 4, 8, 16, 32, 64, 128],
        }
    }
}

impl LbpConfig {
    /// Custom bit assignment; `weights` must be a permutation of the powers of two.
    pub fn with_weights(weights: [u8; 8]) -> Result<Self> {
        let mask = weights.iter().fold(0u16, |m, &w| {
            if w.is_power_of_two() {
                m | w as u16
            } else {
                m | 0x100
            }
        });
        if mask != 0xff {
            return Err(Error::param(format!(
                "lbp weights must be a permutation of 1..=128 powers of two, got {weights:?}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> [u8; 8] {
        self.weights
    }
}

/// Per-pixel LBP code with edge-replicated borders.
pub fn lbp_map(img: &GrayImage, cfg: &LbpConfig) -> Result<GrayImage> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::param(format!("lbp needs at least 3x3 pixels, got {w}x{h}")));
    }
    let src = img.as_raw();
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let interior_row = y > 0 && y + 1 < h;
        for x in 0..w {
            let center = src[y * w + x];
            let mut code = 0u8;
            if interior_row && x > 0 && x + 1 < w {
                for (k, &(dx, dy)) in CLOCKWISE_FROM_TOP_LEFT.iter().enumerate() {
                    let n = src[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                    if n > center {
                        code |= cfg.weights[k];
                    }
                }
            } else {
                for (k, &(dx, dy)) in CLOCKWISE_FROM_TOP_LEFT.iter().enumerate() {
                    if img.sample_clamped(x as isize + dx, y as isize + dy, 0) > center {
                        code |= cfg.weights[k];
                    }
                }
            }
            out[y * w + x] = code;
        }
    }
    GrayImage::new(w, h, out)
}

/// Downsampled mean color per block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorMosaic {
    pub cells: RgbImage,
    pub source_dims: (usize, usize),
}

impl ColorMosaic {
    pub fn new(cells: RgbImage, source_dims: (usize, usize)) -> Result<Self> {
        if cells.width() > source_dims.0 || cells.height() > source_dims.1 {
            return Err(Error::param("color grid larger than source image"));
        }
        Ok(Self { cells, source_dims })
    }

    pub fn grid(&self) -> BlockGrid {
        BlockGrid {
            cols: self.cells.width(),
            rows: self.cells.height(),
        }
    }
}

/// Downsampled LBP codes, treated as a grayscale conditioning image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextureMap {
    pub cells: GrayImage,
    pub source_dims: (usize, usize),
    pub lbp: LbpConfig,
}

impl TextureMap {
    pub fn grid(&self) -> BlockGrid {
        BlockGrid {
            cols: self.cells.width(),
            rows: self.cells.height(),
        }
    }
}

pub fn extract_texture(img: &RgbImage, grid: BlockGrid, cfg: &LbpConfig) -> Result<TextureMap> {
    let codes = lbp_map(&to_grayscale(img), cfg)?;
    Ok(TextureMap {
        cells: block_mean_downsample(&codes, grid)?,
        source_dims: img.dims(),
        lbp: *cfg,
    })
}

pub fn extract_color(img: &RgbImage, grid: BlockGrid, median_radius: usize) -> Result<ColorMosaic> {
    let filtered = median_filter(img, median_radius)?;
    Ok(ColorMosaic {
        cells: block_mean_downsample(&filtered, grid)?,
        source_dims: img.dims(),
    })
}

/// Where captions come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum CaptionSource {
    Fixed { text: String },
    /// `<image path>.txt` next to the image.
    #[default]
    Sidecar,
    /// External program invoked as `program args... <png path>`; stdout is the caption.
    Command { program: PathBuf, args: Vec<String> },
}


/// External captioners share one process-wide lock.
static CAPTION_COMMAND_LOCK: Mutex<()> = Mutex::new(());

/// Path of the sidecar caption for `image_path`.
pub fn sidecar_path(image_path: &Path) -> PathBuf {
    let mut s = image_path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Truncates to at most `max` bytes on a char boundary.
pub fn truncate_utf8(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

fn finish_caption(raw: &str) -> Result<String> {
    let text = truncate_utf8(raw.trim(), MAX_TEXT_BYTES).trim_end();
    if text.is_empty() {
        return Err(Error::Captioning("caption is empty".into()));
    }
    Ok(text.to_owned())
}

/// Produces the caption for `img`. `image_path` is needed for sidecar lookup
/// and is handed to external commands when present.
pub fn caption(img: &RgbImage, image_path: Option<&Path>, source: &CaptionSource) -> Result<String> {
    match source {
        CaptionSource::Fixed { text } => finish_caption(text),
        CaptionSource::Sidecar => {
            let path = image_path
                .ok_or_else(|| Error::Captioning("sidecar captions need the image path".into()))?;
            let sidecar = sidecar_path(path);
            let bytes = std::fs::read(&sidecar).map_err(|e| {
                Error::Captioning(format!("cannot read {}: {e}", sidecar.display()))
            })?;
            let head = &bytes[..bytes.len().min(MAX_TEXT_BYTES)];
            let text = match std::str::from_utf8(head) {
                Ok(s) => s,
                // A cut through a multi-byte char at the cap.
                Err(e) if e.error_len().is_none() => {
                    std::str::from_utf8(&head[..e.valid_up_to()]).expect("valid prefix")
                }
                Err(e) => {
                    return Err(Error::Captioning(format!(
                        "{} is not UTF-8: {e}",
                        sidecar.display()
                    )))
                }
            };
            finish_caption(text)
        }
        CaptionSource::Command { program, args } => {
            let _guard = CAPTION_COMMAND_LOCK.lock().unwrap_or_else(|e| e.into_inner());
            let tmp;
            let path = match image_path {
                Some(p) => p.to_path_buf(),
                None => {
                    tmp = tempfile::Builder::new()
                        .suffix(".png")
                        .tempfile()
                        .map_err(|e| Error::Captioning(e.to_string()))?;
                    img.save_png(tmp.path())?;
                    tmp.path().to_path_buf()
                }
            };
            let output = Command::new(program)
                .args(args)
                .arg(&path)
                .output()
                .map_err(|e| Error::Captioning(format!("cannot run {}: {e}", program.display())))?;
            if !output.status.success() {
                return Err(Error::Captioning(format!(
                    "{} exited with {}: {}",
                    program.display(),
                    output.status,
                    String::from_utf8_lossy(&output.stderr).trim()
                )));
            }
            let text = String::from_utf8(output.stdout)
                .map_err(|e| Error::Captioning(format!("captioner output is not UTF-8: {e}")))?;
            finish_caption(&text)
        }
    }
}

/// Extra feature maps beyond the three core ones (for example a depth map).
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn extract(&self, img: &RgbImage) -> Result<GrayImage>;
}

/// Named slots for additional features.
#[derive(Default)]
pub struct FeatureRegistry {
    extractors: BTreeMap<String, Box<dyn FeatureExtractor>>,
}

impl FeatureRegistry {
    /// Name reserved for a depth map. No extractor is built in.
    pub const DEPTH: &'static str = "depth";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, extractor: Box<dyn FeatureExtractor>) -> Result<()> {
        let name = extractor.name().to_owned();
        if name.is_empty() || name.len() > 255 {
            return Err(Error::param("feature name must be 1..=255 bytes"));
        }
        if matches!(name.as_str(), "text" | "color" | "texture") {
            return Err(Error::param(format!("`{name}` is a core feature")));
        }
        if self.extractors.contains_key(&name) {
            return Err(Error::param(format!("feature `{name}` already registered")));
        }
        self.extractors.insert(name, extractor);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.extractors.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&dyn FeatureExtractor> {
        self.extractors.get(name).map(|b| b.as_ref())
    }
}

/// Everything `decompose` needs to know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionProfile {
    pub color_grid: BlockGrid,
    pub texture_grid: BlockGrid,
    pub median_radius: usize,
    #[serde(default)]
    pub lbp: LbpConfig,
    #[serde(default)]
    pub caption: CaptionSource,
    /// Registered extra features to include.
    #[serde(default)]
    pub extensions: Vec<String>,
}

impl ExtractionProfile {
    pub fn new(color: usize, texture: usize, median_radius: usize, caption: CaptionSource) -> Self {
        Self {
            color_grid: BlockGrid { cols: color, rows: color },
            texture_grid: BlockGrid {
                cols: texture,
                rows: texture,
            },
            median_radius,
            lbp: LbpConfig::default(),
            caption,
            extensions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        BlockGrid::new(self.color_grid.cols, self.color_grid.rows)?;
        BlockGrid::new(self.texture_grid.cols, self.texture_grid.rows)?;
        if !crate::imaging::MEDIAN_RADII.contains(&self.median_radius) {
            return Err(Error::param(format!(
                "median radius must be one of {:?}",
                crate::imaging::MEDIAN_RADII
            )));
        }
        Ok(())
    }
}

/// The transmitted feature set: caption, color mosaic, texture map, and any
/// registered extras.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticPayload {
    pub text: String,
    pub color: ColorMosaic,
    pub texture: TextureMap,
    pub extensions: BTreeMap<String, GrayImage>,
}

impl SemanticPayload {
    pub fn source_dims(&self) -> (usize, usize) {
        self.color.source_dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.len() > MAX_TEXT_BYTES {
            return Err(Error::param(format!(
                "text is {} bytes, limit {MAX_TEXT_BYTES}",
                self.text.len()
            )));
        }
        if self.color.source_dims != self.texture.source_dims {
            return Err(Error::param(format!(
                "color source {:?} != texture source {:?}",
                self.color.source_dims, self.texture.source_dims
            )));
        }
        let (w, h) = self.source_dims();
        if !self.color.grid().fits(w, h) || !self.texture.grid().fits(w, h) {
            return Err(Error::param("feature grid larger than source image"));
        }
        for name in self.extensions.keys() {
            if name.is_empty() || name.len() > 255 {
                return Err(Error::param("extension name must be 1..=255 bytes"));
            }
        }
        Ok(())
    }
}

pub fn decompose(img: &RgbImage, image_path: Option<&Path>, profile: &ExtractionProfile) -> Result<SemanticPayload> {
    decompose_with(img, image_path, profile, &FeatureRegistry::default())
}

pub fn decompose_with(
    img: &RgbImage,
    image_path: Option<&Path>,
    profile: &ExtractionProfile,
    registry: &FeatureRegistry,
) -> Result<SemanticPayload> {
    profile.validate()?;
    let text = caption(img, image_path, &profile.caption)?;
    let color = extract_color(img, profile.color_grid, profile.median_radius)?;
    let texture = extract_texture(img, profile.texture_grid, &profile.lbp)?;
    let mut extensions = BTreeMap::new();
    for name in &profile.extensions {
        let extractor = registry
            .get(name)
            .ok_or_else(|| Error::param(format!("no extractor registered for `{name}`")))?;
        extensions.insert(name.clone(), extractor.extract(img)?);
    }
    Ok(SemanticPayload {
        text,
        color,
        texture,
        extensions,
    })
}

/// Rectangle in grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CellRect {
    pub fn full(grid: BlockGrid) -> Self {
        Self {
            x: 0,
            y: 0,
            w: grid.cols,
            h: grid.rows,
        }
    }

    fn check(&self, grid: BlockGrid) -> Result<()> {
        if self.w == 0
            || self.h == 0
            || self.x + self.w > grid.cols
            || self.y + self.h > grid.rows
        {
            return Err(Error::param(format!(
                "rect {self:?} outside {}x{} grid",
                grid.cols, grid.rows
            )));
        }
        Ok(())
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| (x, y)))
    }
}

/// Feature-level edits applied before restoration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditCommand {
    SetText { text: String },
    TintColor { rect: CellRect, rgb: [u8; 3] },
    FillTexture { rect: CellRect, value: u8 },
}

pub fn edit_payload(payload: &SemanticPayload, edit: &EditCommand) -> Result<SemanticPayload> {
    let mut out = payload.clone();
    match edit {
        EditCommand::SetText { text } => {
            if text.is_empty() || text.len() > MAX_TEXT_BYTES {
                return Err(Error::param(format!(
                    "text must be 1..={MAX_TEXT_BYTES} bytes"
                )));
            }
            out.text = text.clone();
        }
        EditCommand::TintColor { rect, rgb } => {
            rect.check(out.color.grid())?;
            for (x, y) in rect.cells() {
                out.color.cells.set_pixel(x, y, *rgb);
            }
        }
        EditCommand::FillTexture { rect, value } => {
            rect.check(out.texture.grid())?;
            for (x, y) in rect.cells() {
                out.texture.cells.set_pixel(x, y, [*value]);
            }
        }
    }
    Ok(out)
}
