//! `semcom`: run transmissions, sweeps and edits from the command line.
//!
//! Settings come from built-in defaults, then `--config <json>`, then flags.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use semcom_core::features::{CaptionSource, EditCommand};
use semcom_core::harness::{self, builtin_profile, RunConfig, SystemSpec, TransportKind};
use semcom_core::phy::FecChoice;
use semcom_core::restore::{RestorerChoice, StubMode, StubServer};
use semcom_core::{BlockGrid, Error, ModulationScheme, Result};

#[derive(Parser)]
#[command(name = "semcom", version, about = "Semantic image transmission experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Send each input once per SNR and write restored images and reports.
    Transmit(RunArgs),
    /// Compare systems across SNR points; writes sweep_snr.csv.
    SweepSnr(RunArgs),
    /// Noiseless rate/distortion sweep over profiles; writes sweep_bpp.csv.
    SweepBpp(RunArgs),
    /// Edit a saved payload and restore it before and after.
    Edit(EditArgs),
    /// Print the caption for an image.
    Caption(CaptionArgs),
    /// Dump the header of a saved payload as JSON.
    Inspect { payload: PathBuf },
    /// Run the bundled test restorer until interrupted.
    ServeStub {
        #[arg(long, default_value = "echo-upsampled-mosaic")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
}

#[derive(Args, Default)]
struct CaptionFlags {
    /// Use this caption for every image.
    #[arg(long)]
    caption_text: Option<String>,
    /// Caption with `<program> <image.png>`.
    #[arg(long, conflicts_with = "caption_text")]
    caption_command: Option<PathBuf>,
    /// Read `<image>.txt` next to each image.
    #[arg(long, conflicts_with_all = ["caption_text", "caption_command"])]
    caption_sidecar: bool,
}

impl CaptionFlags {
    fn source(&self) -> Option<CaptionSource> {
        if let Some(text) = &self.caption_text {
            Some(CaptionSource::Fixed { text: text.clone() })
        } else if let Some(program) = &self.caption_command {
            Some(CaptionSource::Command {
                program: program.clone(),
                args: Vec::new(),
            })
        } else if self.caption_sidecar {
            Some(CaptionSource::Sidecar)
        } else {
            None
        }
    }
}

#[derive(Args, Default)]
struct RestorerFlags {
    /// fallback, remote or none.
    #[arg(long)]
    restorer: Option<String>,
    /// Endpoint of a remote restorer.
    #[arg(long, env = "SEMCOM_RESTORER_URL")]
    restorer_url: Option<String>,
    /// Seconds per remote request [default: 120].
    #[arg(long)]
    restorer_timeout: Option<u64>,
    /// Concurrent remote requests [default: 4].
    #[arg(long)]
    max_in_flight: Option<usize>,
}

impl RestorerFlags {
    fn apply(&self, base: RestorerChoice) -> Result<RestorerChoice> {
        let kind = self.restorer.as_deref().map(str::to_ascii_lowercase);
        let choice = match kind.as_deref() {
            None => base,
            Some("fallback") => RestorerChoice::Fallback,
            Some("none") => RestorerChoice::None,
            Some("remote") => match base {
                r @ RestorerChoice::Remote { .. } => r,
                _ => RestorerChoice::remote(String::new()),
            },
            Some(other) => return Err(Error::Parameter(format!("unknown restorer `{other}`"))),
        };
        Ok(match choice {
            RestorerChoice::Remote {
                endpoint,
                timeout_secs,
                max_in_flight,
            } => {
                let endpoint = self.restorer_url.clone().unwrap_or(endpoint);
                if endpoint.is_empty() {
                    return Err(Error::Parameter(
                        "remote restorer needs --restorer-url or SEMCOM_RESTORER_URL".into(),
                    ));
                }
                RestorerChoice::Remote {
                    endpoint,
                    timeout_secs: self.restorer_timeout.unwrap_or(timeout_secs),
                    max_in_flight: self.max_in_flight.unwrap_or(max_in_flight),
                }
            }
            other => other,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// PNG file or directory (repeatable).
    #[arg(long = "input", short)]
    inputs: Vec<PathBuf>,
    /// Built-in profile: extreme, balanced or fine.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    color_grid: Option<usize>,
    #[arg(long)]
    texture_grid: Option<usize>,
    #[arg(long)]
    median_radius: Option<usize>,
    #[arg(long)]
    color_bits: Option<u8>,
    #[arg(long)]
    texture_bits: Option<u8>,
    #[arg(long)]
    texture_palette: Option<bool>,
    #[command(flatten)]
    caption: CaptionFlags,
    /// digital or analog.
    #[arg(long)]
    transport: Option<TransportKind>,
    /// bpsk, qpsk, 16qam or 64qam.
    #[arg(long)]
    modulation: Option<ModulationScheme>,
    /// none, rep3, ldpc or ldpc:<seed>.
    #[arg(long)]
    fec: Option<FecChoice>,
    /// System to compare, e.g. `digital:16qam:ldpc` or `analog` (repeatable).
    #[arg(long = "system", value_parser = parse_system)]
    systems: Vec<SystemSpec>,
    /// Es/N0 points in dB; `inf` for a noiseless channel. Comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_snr, allow_hyphen_values = true)]
    snr: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    analog_budget: Option<usize>,
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    restorer: RestorerFlags,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn parse_snr(s: &str) -> std::result::Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "noiseless" => Ok(f64::INFINITY),
        v => v.parse::<f64>().map_err(|e| e.to_string()),
    }
}

fn parse_system(s: &str) -> std::result::Result<SystemSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let err = |e: Error| e.to_string();
    match parts.as_slice() {
        ["analog"] => Ok(SystemSpec::analog()),
        ["digital", m] => Ok(SystemSpec::digital(m.parse().map_err(err)?, FecChoice::default())),
        ["digital", m, fec @ ..] => Ok(SystemSpec::digital(
            m.parse().map_err(err)?,
            fec.join(":").parse().map_err(err)?,
        )),
        _ => Err(format!("expected `analog` or `digital:<modulation>[:<fec>]`, got `{s}`")),
    }
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if !self.inputs.is_empty() {
            cfg.inputs = self.inputs.clone();
        }
        if let Some(name) = &self.profile {
            let (profile, quant) = builtin_profile(name, cfg.profile.caption.clone())?;
            cfg.profile = profile;
            cfg.quant = quant;
        }
        if let Some(n) = self.color_grid {
            cfg.profile.color_grid = BlockGrid::square(n)?;
        }
        if let Some(n) = self.texture_grid {
            cfg.profile.texture_grid = BlockGrid::square(n)?;
        }
        if let Some(r) = self.median_radius {
            cfg.profile.median_radius = r;
        }
        if let Some(b) = self.color_bits {
            cfg.quant.color_bits = b;
        }
        if let Some(b) = self.texture_bits {
            cfg.quant.texture_bits = b;
        }
        if let Some(p) = self.texture_palette {
            cfg.quant.texture_palette = p;
        }
        if let Some(source) = self.caption.source() {
            cfg.profile.caption = source;
        }
        if let Some(t) = self.transport {
            cfg.transport = t;
        }
        if let Some(m) = self.modulation {
            cfg.modulation = m;
            cfg.modulation_ladder.clear();
        }
        if let Some(f) = self.fec {
            cfg.fec = f;
        }
        if !self.systems.is_empty() {
            cfg.systems = self.systems.clone();
        }
        if !self.snr.is_empty() {
            cfg.snr_db = self.snr.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if self.analog_budget.is_some() {
            cfg.analog_budget = self.analog_budget;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        cfg.restorer = self.restorer.apply(cfg.restorer)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EditArgs {
    /// Saved payload (`.smcp`).
    #[arg(long)]
    payload: PathBuf,
    /// Edit as JSON, e.g. `{"op":"set_text","text":"a red car"}` (repeatable).
    #[arg(long = "edit", required = true)]
    edits: Vec<String>,
    #[arg(long, short, default_value = "edit-out")]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    restorer: RestorerFlags,
}

#[derive(Args)]
struct CaptionArgs {
    image: PathBuf,
    #[command(flatten)]
    caption: CaptionFlags,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Transmit(args) => {
            let cfg = args.config()?;
            if args.print_config {
                return print_json(&cfg);
            }
            for art in harness::cmd_transmit(&cfg)? {
                let r = &art.report;
                let quality = match (r.integrity_failed, r.image_psnr_db) {
                    (true, _) => "integrity check failed, no image".to_owned(),
                    (false, Some(p)) => format!("psnr {p:.2} dB"),
                    (false, None) => "features only".to_owned(),
                };
                println!(
                    "{}: {} {} {} snr {} dB, {:.4} bpp, {} symbols, {quality}",
                    art.dir.display(),
                    r.transport,
                    r.modulation,
                    r.fec,
                    r.snr_db,
                    r.bpp,
                    r.symbols_used
                );
            }
        }
        Command::SweepSnr(args) => {
            let cfg = args.config()?;
            if args.print_config {
                return print_json(&cfg);
            }
            let sweep = harness::cmd_sweep_snr(&cfg)?;
            println!(
                "{} rows written to {}",
                sweep.rows.len(),
                cfg.output_dir.join("sweep_snr.csv").display()
            );
        }
        Command::SweepBpp(args) => {
            let cfg = args.config()?;
            if args.print_config {
                return print_json(&cfg);
            }
            let rows = harness::cmd_sweep_bpp(&cfg)?;
            println!(
                "{} rows written to {}",
                rows.len(),
                cfg.output_dir.join("sweep_bpp.csv").display()
            );
        }
        Command::Edit(args) => {
            let edits = args
                .edits
                .iter()
                .map(|e| serde_json::from_str::<EditCommand>(e).map_err(Error::from))
                .collect::<Result<Vec<_>>>()?;
            let backend = args.restorer.apply(RestorerChoice::Fallback)?.build()?;
            harness::cmd_edit(&args.payload, &edits, &backend, args.seed, &args.output_dir)?;
            println!("wrote before.png and after.png to {}", args.output_dir.display());
        }
        Command::Caption(args) => {
            let source = args.caption.source().unwrap_or_default();
            println!("{}", harness::cmd_caption(&args.image, &source)?);
        }
        Command::Inspect { payload } => print_json(&harness::cmd_inspect(&payload)?)?,
        Command::ServeStub { mode, port } => {
            let mode: StubMode = mode.parse()?;
            let server = StubServer::start_on(port, mode, Duration::ZERO)?;
            println!("{}", server.url());
            server.join();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
