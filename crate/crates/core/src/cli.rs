//! Command-line front end. `run` parses arguments, executes one command and
//! returns the process exit code: 0 on success, 1 for usage or configuration
//! errors, 2 for anything that fails at run time.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::embedding::{build_global_map, render_tsne_with, GlobalMap};
use crate::error::{Error, Result};
use crate::eval::{
    comparison_row, fit_representation, gather_matrix, grid_cells, run_grid, run_table, summary_line, write_csv,
    write_json, Cell, CvReport, Fitted, LogObserver,
};
use crate::ingest::{AbundanceTable, FeatureKind};
use crate::nn::{checkpoint, train, Architecture, Dataset, Network};

#[derive(Debug, Parser)]
#[command(
    name = "metaimage",
    version,
    about = "Image encodings of metagenomic abundance tables and CNN evaluation"
)]
#[command(after_help = "Any config value can be overridden with --section.key=value, e.g. --training.epochs=50")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for folds, initialisation and shuffling (eval.seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for cross-validation folds (eval.jobs).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (output.dir).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `section.key=value` override; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Merged abundance table (taxa as rows, samples as columns).
    #[arg(long)]
    pub abundance: Option<PathBuf>,
    /// Labels file: `sample<TAB>0|1` per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Use the generated dataset from the `synthetic` config section.
    #[arg(long)]
    pub synthetic: bool,
    /// Representation: raw-1d, fillup-abd, fillup-pre, tsne-abd or tsne-pre.
    #[arg(long)]
    pub representation: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one image per sample, the palette and, for t-SNE, the species map.
    Render {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Cross-validate one cell (or the ten-cell comparison row).
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Architecture: fc, conv1d:DEPTH:WIDTH or conv2d:DEPTH:WIDTH.
        #[arg(long)]
        arch: Option<String>,
        /// Evaluate FC and CNN cells for all five representations.
        #[arg(long)]
        comparison_row: bool,
    },
    /// Cross-validate the 100 CNN architectures and the FC baseline; resumable.
    Grid {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fit the t-SNE species map on all samples and export it.
    ExportMaps {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train (or load) a network and export the pooled feature maps of one sample.
    ExportFeatureMaps {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        arch: Option<String>,
        /// Sample id; defaults to the first sample.
        #[arg(long)]
        sample: Option<String>,
        /// Load this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the color palette of the configured binning.
    Palette,
}

/// Moves `--section.key=value` and `--section.key value` into `--set` form.
fn rewrite_dotted(args: Vec<OsString>) -> Vec<OsString> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    if let Some(first) = it.next() {
        out.push(first);
    }
    while let Some(arg) = it.next() {
        let dotted = arg
            .to_str()
            .and_then(|s| s.strip_prefix("--"))
            .filter(|s| {
                s.split('=')
                    .next()
                    .is_some_and(|k| k.contains('.') && !k.starts_with('.'))
            })
            .map(str::to_owned);
        match dotted {
            Some(body) if body.contains('=') => {
                out.push("--set".into());
                out.push(body.into());
            }
            Some(key) => {
                let value = it.next().map(|v| v.to_string_lossy().into_owned()).unwrap_or_default();
                out.push("--set".into());
                out.push(format!("{key}={value}").into());
            }
            None => out.push(arg),
        }
    }
    out
}

fn apply_data_args(cfg: &mut RunConfig, data: &DataArgs) -> Result<()> {
    if let Some(p) = &data.abundance {
        cfg.data.abundance = Some(p.clone());
        cfg.data.synthetic = false;
    }
    if let Some(p) = &data.labels {
        cfg.data.labels = Some(p.clone());
    }
    if data.synthetic {
        cfg.data.synthetic = true;
    }
    if let Some(r) = &data.representation {
        cfg.eval.representation = r.parse()?;
    }
    Ok(())
}

fn parse_arch(s: &Option<String>, cfg: &mut RunConfig) -> Result<()> {
    if let Some(a) = s {
        cfg.network.arch = a.parse()?;
    }
    Ok(())
}

/// Resolves the configuration: file, then `--set` overrides, then named flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &cli.set {
        cfg.set(s)?;
    }
    if let Some(seed) = cli.seed {
        cfg.eval.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.eval.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    match &cli.command {
        Command::Render { data } | Command::Grid { data } | Command::ExportMaps { data } => {
            apply_data_args(&mut cfg, data)?
        }
        Command::Eval { data, arch, .. } | Command::ExportFeatureMaps { data, arch, .. } => {
            apply_data_args(&mut cfg, data)?;
            parse_arch(arch, &mut cfg)?;
        }
        Command::Palette => {}
    }
    if cfg.eval.jobs == 0 {
        return Err(Error::Config("eval.jobs must be at least 1".into()));
    }
    Ok(cfg)
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    cfg.write_to(&dir)?;
    Ok(dir)
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn all_samples(table: &AbundanceTable) -> Vec<usize> {
    (0..table.n_samples()).collect()
}

fn write_palette(cfg: &RunConfig, table: Option<&AbundanceTable>, dir: &Path) -> Result<PathBuf> {
    let scheme = match table {
        Some(t) if cfg.binning.quantiles => cfg.binning.fit(t.values().iter().copied())?,
        _ => cfg.binning.base_scheme()?,
    };
    let path = dir.join("palette.tsv");
    scheme.write_palette(create(&path)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn map_on_all(cfg: &RunConfig, table: &AbundanceTable) -> Result<GlobalMap> {
    let all = gather_matrix(table, &all_samples(table));
    build_global_map(&all, &cfg.tsne.config(), cfg.tsne.target)
}

/// Writes `map.tsv` and the mean-abundance overview image.
fn export_map(cfg: &RunConfig, table: &AbundanceTable, map: &GlobalMap, dir: &Path) -> Result<()> {
    let path = dir.join("map.tsv");
    map.write_tsv(create(&path)?).map_err(|e| Error::io(&path, e))?;
    let n = table.n_samples() as f64;
    let mut mean = vec![0.0; table.n_features()];
    for i in 0..table.n_samples() {
        for (m, v) in mean.iter_mut().zip(table.row(i)) {
            *m += v / n;
        }
    }
    let scheme = cfg.binning.fit(table.values().iter().copied())?;
    let img = render_tsne_with(&mean, map, &scheme, FeatureKind::Abundance, &cfg.tsne.options())?;
    img.save_pnm(&dir.join("tsne_overview.ppm"))
}

pub fn cmd_render(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let table = cfg.load_table()?;
    let dir = prepare_out(cfg)?;
    let repr = cfg.eval.representation;
    write_palette(cfg, Some(&table), &dir)?;
    let fitted = fit_representation(&table, repr, &all_samples(&table), &cfg.eval_settings(), cfg.tsne.seed)?;
    if let Fitted::Tsne { map, .. } = &fitted {
        export_map(cfg, &table, map, &dir)?;
    }
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut written = Vec::with_capacity(table.n_samples());
    for (i, id) in table.samples().iter().enumerate() {
        let path = img_dir.join(format!("{}_{repr}.ppm", file_safe(id)));
        let row = table.row(i);
        match &fitted {
            Fitted::Raw => {
                // one grey pixel per feature, abundance scaled to the sample maximum
                let max = row.iter().copied().fold(0.0, f64::max);
                let data = row.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect();
                crate::image::ImageTensor::from_vec(1, 1, row.len(), data)?.save_pnm(&path)?
            }
            Fitted::Fillup { scheme, kind, opts } => {
                crate::fillup::render_fillup_with(row, scheme, *kind, opts)?.save_pnm(&path)?
            }
            Fitted::Tsne {
                scheme,
                kind,
                map,
                opts,
            } => render_tsne_with(row, map, scheme, *kind, opts)?.save_pnm(&path)?,
        }
        written.push(path);
    }
    log::info!("wrote {} images to {}", written.len(), img_dir.display());
    Ok(written)
}

fn save_reports(reports: &[CvReport], folds: usize, dir: &Path, stem: &str) -> Result<()> {
    let csv = dir.join(format!("{stem}.csv"));
    write_csv(reports, folds, create(&csv)?).map_err(|e| Error::io(&csv, e))?;
    let json = dir.join(format!("{stem}.json"));
    write_json(reports, create(&json)?).map_err(|e| Error::io(&json, e))
}

pub fn cmd_eval(cfg: &RunConfig, comparison: bool) -> Result<Vec<CvReport>> {
    let table = cfg.load_table()?;
    let cells = if comparison {
        comparison_row()
    } else {
        vec![Cell::new(cfg.eval.representation, cfg.network.arch)]
    };
    for c in &cells {
        c.representation.check_compatible(&c.arch)?;
    }
    let dir = prepare_out(cfg)?;
    let settings = cfg.eval_settings();
    let reports = run_table(&table, &cells, &settings, &LogObserver)?;
    save_reports(&reports, settings.folds, &dir, "results")?;
    for r in &reports {
        println!("{}", summary_line(r));
    }
    Ok(reports)
}

pub fn cmd_grid(cfg: &RunConfig) -> Result<Vec<CvReport>> {
    let table = cfg.load_table()?;
    let dir = prepare_out(cfg)?;
    let settings = cfg.eval_settings();
    let repr = cfg.eval.representation;
    let stem = format!("grid_{repr}");
    let reports = run_grid(
        &table,
        &grid_cells(repr),
        &settings,
        &dir.join(format!("{stem}.csv")),
        &LogObserver,
    )?;
    let json = dir.join(format!("{stem}.json"));
    write_json(&reports, create(&json)?).map_err(|e| Error::io(&json, e))?;
    for r in &reports {
        println!("{}", summary_line(r));
    }
    Ok(reports)
}

pub fn cmd_export_maps(cfg: &RunConfig) -> Result<PathBuf> {
    let table = cfg.load_table()?;
    let dir = prepare_out(cfg)?;
    let map = map_on_all(cfg, &table)?;
    export_map(cfg, &table, &map, &dir)?;
    Ok(dir.join("map.tsv"))
}

pub fn cmd_export_feature_maps(cfg: &RunConfig, sample: Option<&str>, ckpt: Option<&Path>) -> Result<Vec<PathBuf>> {
    let table = cfg.load_table()?;
    let repr = cfg.eval.representation;
    let arch: Architecture = cfg.network.arch;
    repr.check_compatible(&arch)?;
    let settings = cfg.eval_settings();
    let spec = settings.network_spec(repr, arch, table.n_features());
    spec.conv_trace()?;
    let which = match sample {
        Some(id) => table
            .sample_index(id)
            .ok_or_else(|| Error::Config(format!("no sample named {id:?}")))?,
        None => 0,
    };
    let dir = prepare_out(cfg)?;
    let all = all_samples(&table);
    let fitted = fit_representation(&table, repr, &all, &settings, cfg.tsne.seed)?;
    let net: Network<f32> = match ckpt {
        Some(p) => checkpoint::load(p, Some(&spec))?,
        None => {
            let mut data = Dataset::new(spec.input.len());
            for &i in &all {
                data.push(&fitted.render(table.row(i))?, table.labels()[i])?;
            }
            let mut net = Network::build(&spec, cfg.eval.seed)?;
            let tc = crate::nn::TrainingConfig {
                seed: cfg.eval.seed ^ cfg.training.seed,
                ..cfg.training.clone()
            };
            train(&mut net, &data, &tc)?;
            checkpoint::save(&net, &dir.join("network.ckpt"))?;
            net
        }
    };
    let input: Vec<f32> = fitted.render(table.row(which))?.iter().map(|&v| v as f32).collect();
    let maps = net.feature_maps(&input)?;
    let fm_dir = dir.join("feature_maps");
    fs::create_dir_all(&fm_dir).map_err(|e| Error::io(&fm_dir, e))?;
    let id = file_safe(&table.samples()[which]);
    let mut out = Vec::with_capacity(maps.len());
    for (i, m) in maps.iter().enumerate() {
        let p = fm_dir.join(format!("{id}_map{i:02}.pgm"));
        m.save_pnm(&p)?;
        out.push(p);
    }
    Ok(out)
}

pub fn cmd_palette(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = prepare_out(cfg)?;
    let path = write_palette(cfg, None, &dir)?;
    print!("{}", fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?);
    Ok(path)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Render { .. } => cmd_render(&cfg).map(drop),
        Command::Eval { comparison_row, .. } => cmd_eval(&cfg, *comparison_row).map(drop),
        Command::Grid { .. } => cmd_grid(&cfg).map(drop),
        Command::ExportMaps { .. } => cmd_export_maps(&cfg).map(drop),
        Command::ExportFeatureMaps { sample, checkpoint, .. } => {
            cmd_export_feature_maps(&cfg, sample.as_deref(), checkpoint.as_deref()).map(drop)
        }
        Command::Palette => cmd_palette(&cfg).map(drop),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_usage() {
        1
    } else {
        2
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = rewrite_dotted(args.into_iter().map(Into::into).collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            exit_code(&e)
        }
    }
}
