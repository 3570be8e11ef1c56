use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fmrisim_core::phantom::{generate_phantom, save_activation_map, save_phantom, TissueSet};
use fmrisim_core::recon::{reconstruct, ReconKind};
use fmrisim_core::session::analysis::{frame_grid, stat_map, Space};
use fmrisim_core::session::archive::{load_series, save_series, FrameRecord, SeriesReader};
use fmrisim_core::session::config::{parse_config, RunConfig};
use fmrisim_core::session::export::{export_image, Colormap};
use fmrisim_core::session::pipeline::simulate_to_dir;
use fmrisim_core::stats::{t_critical, Part, StatKind, DEFAULT_THRESHOLD};
use fmrisim_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "fmrisim", version, about = "Complex-valued fMRI k-space time series simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a config and write series.shk, summary.txt and config.json
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(short, long)]
        quiet: bool,
    },
    /// Reconstruct every frame and write an archive holding the images
    Recon {
        archive: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_parser = parse_recon)]
        method: Option<ReconKind>,
    },
    /// Voxelwise t or SNR map of the magnitude series, saved as PNG and JSON
    Stats {
        archive: PathBuf,
        #[arg(long, default_value = "tstat")]
        kind: StatKind,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// frames dropped from the start before testing
        #[arg(long, default_value_t = 0)]
        skip: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Render one frame as a PNG
    Export(ExportArgs),
    /// Start the HTTP service
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "fmrisim-runs")]
        data_dir: PathBuf,
    },
    /// Phantom utilities
    Phantom {
        #[command(subcommand)]
        action: PhantomCommand,
    },
    /// Print the worked-example config
    ExampleConfig,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    archive: PathBuf,
    /// 1-based frame index
    #[arg(long)]
    frame: usize,
    #[arg(long, default_value = "magnitude")]
    part: Part,
    #[arg(long, default_value = "image")]
    space: Space,
    #[arg(long)]
    coil: Option<usize>,
    #[arg(long, default_value = "gray")]
    colormap: Colormap,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PhantomCommand {
    /// Generate the default phantom
    Gen {
        #[arg(long)]
        size: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// JSON tissue table replacing the defaults
        #[arg(long)]
        tissues: Option<PathBuf>,
        /// also write the activation map on its own
        #[arg(long)]
        activation_out: Option<PathBuf>,
    },
}

fn parse_recon(s: &str) -> std::result::Result<ReconKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown method {s:?} (cartesian_ifft, gridded_ifft)"))
}

fn read_config(path: &Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn sibling(archive: &Path, name: &str) -> PathBuf {
    archive.parent().unwrap_or(Path::new(".")).join(name)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, output, quiet } => {
            let config = read_config(&config)?;
            let n = config.task_design().total();
            let out = simulate_to_dir(&config, &output, |t| {
                if !quiet && (t % 50 == 0 || t == n) {
                    eprintln!("frame {t}/{n}");
                }
            })?;
            println!("{}", out.metadata.summary);
            println!("seed: {}", out.metadata.config.seed.unwrap_or_default());
            println!("archive: {}", out.archive.display());
        }
        Command::Recon { archive, output, method } => {
            let mut a = load_series(&archive)?;
            let kind = method.unwrap_or(a.metadata.recon);
            for f in &mut a.frames {
                let images = f.kspace.iter().map(|k| reconstruct(k, kind)).collect::<Result<Vec<_>>>()?;
                *f = FrameRecord {
                    kspace: std::mem::take(&mut f.kspace),
                    images: Some(images),
                };
            }
            a.metadata.recon = kind;
            a.metadata.has_images = true;
            let out = output.unwrap_or_else(|| archive.with_extension("recon.shk"));
            save_series(&a, &out)?;
            println!("reconstructed {} frames with {}: {}", a.frames.len(), kind.description(), out.display());
        }
        Command::Stats {
            archive,
            kind,
            threshold,
            skip,
            output,
        } => {
            let mut reader = SeriesReader::open(&archive)?;
            let map = stat_map(&mut reader, kind, threshold, skip)?;
            let png = output.unwrap_or_else(|| sibling(&archive, &format!("{}.png", kind_name(kind))));
            export_image(&map.values, Part::Real, &png, Colormap::Hot)?;
            let json = png.with_extension("json");
            std::fs::write(&json, serde_json::to_string(&map)?)?;
            let above = map.above_threshold().iter().filter(|&&b| b).count();
            println!("{} map: {above} voxels with |value| > {threshold}", kind_name(kind));
            if let Some(df) = map.df {
                println!("df = {df}, two-sided 5% critical t = {:.4}", t_critical(0.05, df)?);
            }
            println!("image: {}", png.display());
            println!("grid: {}", json.display());
        }
        Command::Export(a) => {
            let mut reader = SeriesReader::open(&a.archive)?;
            let n = reader.metadata().n_frames;
            if a.frame == 0 || a.frame > n {
                return Err(Error::InvalidParameter {
                    field: "frame",
                    rule: format!("must lie in 1..={n}"),
                });
            }
            let rec = reader.read_frame(a.frame - 1)?;
            let grid = frame_grid(reader.metadata(), &rec, a.part, a.space, a.coil)?;
            let out = a
                .output
                .unwrap_or_else(|| sibling(&a.archive, &format!("frame{}_{}.png", a.frame, a.part.name())));
            let w = export_image(&grid, a.part, &out, a.colormap)?;
            println!("{} (window {:e} to {:e})", out.display(), w.lo, w.hi);
        }
        Command::Serve { port, data_dir } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::server::serve(port, data_dir))?;
        }
        Command::Phantom {
            action:
                PhantomCommand::Gen {
                    size,
                    output,
                    tissues,
                    activation_out,
                },
        } => {
            let tissues: TissueSet = match tissues {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Config {
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                })?,
                None => TissueSet::default(),
            };
            let p = generate_phantom(size, &tissues)?;
            save_phantom(&p, &output)?;
            if let Some(path) = activation_out {
                save_activation_map(p.act_map(), path)?;
            }
            println!("{}: {size}^3 voxels, {} in the object", output.display(), p.brain_voxel_count());
        }
        Command::ExampleConfig => {
            println!("{}", serde_json::to_string_pretty(&RunConfig::example())?);
        }
    }
    Ok(())
}

fn kind_name(kind: StatKind) -> &'static str {
    match kind {
        StatKind::Tstat => "tstat",
        StatKind::Snr => "snr",
    }
}
