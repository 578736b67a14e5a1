//! `nfmimo` — near-field XL-MIMO channel estimation workbench.
//!
//! Subcommands cover the full pipeline: `gen-data` synthesizes datasets,
//! `corr` tabulates antenna-correlation models, `estimate` reports
//! per-sample classical estimates, `train` fits a network, `eval` sweeps
//! estimators over SNR, and `describe` prints architecture summaries.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use nfmimo_cli::corr::{self, CorrSpec};
use nfmimo_cli::evaluate::{self, Estimator, EvalOptions};
use nfmimo_cli::profiles::Profile;
use nfmimo_cli::train::TrainConfig;
use nfmimo_cli::{checkpoint, dataset, train};
use nfmimo_core::channel::DatasetConfig;
use nfmimo_core::mssan::{Network, NetworkVariant};

#[derive(Parser)]
#[command(
    name = "nfmimo",
    version,
    about = "Near-field XL-MIMO channel estimation: datasets, classical estimators, attention networks"
)]
struct Cli {
    /// Report measured wall time in CSV `seconds` columns instead of the
    /// deterministic placeholder 0.000.
    #[arg(long, global = true)]
    timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/test splits plus manifest).
    GenData {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Built-in scale: desk or paper.
        #[arg(long, default_value = "desk", value_parser = parse_profile)]
        profile: Profile,
        /// Generation seed (defaults to 17).
        #[arg(long)]
        seed: Option<u64>,
        /// Override the profile's sample count.
        #[arg(long)]
        samples: Option<usize>,
        /// Full dataset config as JSON; flags still override its seed and
        /// sample count.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Antenna-correlation tables and sweeps.
    Corr {
        /// closed | quadrature | monte-carlo | distance | r0-sweep
        #[arg(long, default_value = "closed")]
        mode: String,
        #[arg(long, default_value_t = 64)]
        elements: usize,
        /// Carrier frequency in GHz; element spacing is half a wavelength.
        #[arg(long, default_value_t = 60.0)]
        carrier_ghz: f64,
        /// Mean physical angle, degrees.
        #[arg(long, default_value_t = 30.0)]
        mean_angle_deg: f64,
        /// Angular spread (PAS standard deviation), degrees.
        #[arg(long, default_value_t = 5.0)]
        sigma_phi_deg: f64,
        /// Mean source distance, meters.
        #[arg(long, default_value_t = 20.0)]
        r0: f64,
        /// Distance spread (PDP standard deviation), meters.
        #[arg(long, default_value_t = 10.0)]
        sigma_psi: f64,
        /// Quadrature tolerance (quadrature mode).
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Draw count (monte-carlo mode).
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Element pair for the r0 sweep.
        #[arg(long, default_value_t = 160)]
        m: usize,
        #[arg(long, default_value_t = 96)]
        n: usize,
        /// Comma-separated mean distances for the r0 sweep, meters.
        #[arg(long, default_value = "10,100,1000,10000,100000")]
        r0_list: String,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-sample estimator diagnostics on the test split.
    Estimate {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated: ls, lmmse, omp, or variant=checkpoint.
        #[arg(long, default_value = "ls")]
        methods: String,
        #[arg(long, default_value_t = 10.0)]
        snr_db: f64,
        /// Cap on the number of samples reported.
        #[arg(long)]
        limit: Option<usize>,
        /// Noise seed; defaults to the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Architecture scale for rebuilding network methods.
        #[arg(long, default_value = "desk", value_parser = parse_profile)]
        profile: Profile,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a network; keeps the best-test-loss checkpoint.
    Train {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for model.nfpt and loss.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "mssan", value_parser = parse_variant)]
        variant: NetworkVariant,
        #[arg(long, default_value = "desk", value_parser = parse_profile)]
        profile: Profile,
        /// Override the profile's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Training seed; defaults to the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Full training config as JSON (overrides every other flag).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate estimators over an SNR sweep; writes the metrics CSV.
    Eval {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated: ls, lmmse, omp, and/or variant=checkpoint
        /// entries such as mssan=runs/mssan/model.nfpt.
        #[arg(long, default_value = "ls,lmmse,omp")]
        methods: String,
        /// Comma-separated SNR sweep in dB; defaults to the dataset's set.
        #[arg(long)]
        snr_db: Option<String>,
        /// Architecture scale for rebuilding network methods.
        #[arg(long, default_value = "desk", value_parser = parse_profile)]
        profile: Profile,
        /// Noise seed; defaults to the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a network's stage table, parameter count, and training recipe.
    Describe {
        #[arg(long, default_value = "mssan", value_parser = parse_variant)]
        variant: NetworkVariant,
        #[arg(long, default_value = "paper", value_parser = parse_profile)]
        profile: Profile,
        /// Override the profile's antenna extents.
        #[arg(long)]
        nr: Option<usize>,
        #[arg(long)]
        nt: Option<usize>,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse()
}

fn parse_variant(s: &str) -> Result<NetworkVariant, String> {
    match s {
        "mssan" => Ok(NetworkVariant::Mssan),
        "san" => Ok(NetworkVariant::San),
        "cnn-baseline" | "cnn" => Ok(NetworkVariant::CnnBaseline),
        other => Err(format!(
            "unknown variant {other:?} (expected mssan, san, or cnn-baseline)"
        )),
    }
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid number {x:?}"))
        })
        .collect()
}

/// Resolve a comma-separated method list into estimators; network entries
/// (`variant=checkpoint`) are rebuilt at the profile's scale for the
/// dataset's antenna extents and verified against the checkpoint.
fn parse_methods(
    spec: &str,
    profile: Profile,
    manifest: &dataset::Manifest,
) -> Result<Vec<Estimator>> {
    let mut methods = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let estimator = match part {
            "ls" => Estimator::ls(),
            "lmmse" => Estimator::lmmse(),
            "omp" => Estimator::omp(),
            entry if entry.contains('=') => {
                let (name, path) = entry.split_once('=').unwrap();
                let variant = parse_variant(name).map_err(anyhow::Error::msg)?;
                let cfg =
                    profile.network_config(variant, manifest.config.nr, manifest.config.nt);
                let mut net = Network::<f32>::new(cfg, 0)?;
                checkpoint::load_into_network(&mut net, Path::new(path))?;
                Estimator::network(net)
            }
            other => bail!(
                "unknown method {other:?} (expected ls, lmmse, omp, or variant=checkpoint)"
            ),
        };
        methods.push(estimator);
    }
    if methods.is_empty() {
        bail!("no estimation methods selected");
    }
    Ok(methods)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            profile,
            seed,
            samples,
            config,
        } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<DatasetConfig>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => profile.dataset_config(seed.unwrap_or(17)),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = samples {
                cfg.sample_count = n;
            }
            let manifest = dataset::generate(&cfg, &out)?;
            eprintln!(
                "wrote {} train + {} test samples ({}x{} at {:.0} GHz, sources {:.2}-{:.2} m) to {}",
                manifest.train_count,
                manifest.test_count,
                cfg.nr,
                cfg.nt,
                cfg.carrier_freq_hz / 1e9,
                cfg.distance_range_m[0],
                cfg.distance_range_m[1],
                out.display()
            );
            Ok(())
        }
        Command::Corr {
            mode,
            elements,
            carrier_ghz,
            mean_angle_deg,
            sigma_phi_deg,
            r0,
            sigma_psi,
            tol,
            draws,
            seed,
            m,
            n,
            r0_list,
            out,
        } => {
            let wavelength = nfmimo_core::SPEED_OF_LIGHT / (carrier_ghz * 1e9);
            let spec = CorrSpec {
                elements,
                spacing_m: wavelength / 2.0,
                mean_angle_rad: mean_angle_deg.to_radians(),
                sigma_phi: sigma_phi_deg.to_radians(),
                mean_distance_m: r0,
                sigma_psi_m: sigma_psi,
            };
            let csv = match mode.as_str() {
                "closed" => corr::matrix_csv(&corr::angular_closed(&spec)?),
                "quadrature" => corr::matrix_csv(&corr::angular_quadrature(&spec, tol)?),
                "monte-carlo" => corr::matrix_csv(&corr::monte_carlo(&spec, draws, seed)?),
                "distance" => corr::matrix_csv(&corr::distance(&spec)?),
                "r0-sweep" => corr::r0_sweep_csv(m, n, &spec, &parse_f64_list(&r0_list)?)?,
                other => bail!(
                    "unknown mode {other:?} (expected closed, quadrature, monte-carlo, distance, or r0-sweep)"
                ),
            };
            emit(out.as_deref(), &csv)
        }
        Command::Estimate {
            data,
            methods,
            snr_db,
            limit,
            seed,
            profile,
            out,
        } => {
            let manifest = dataset::read_manifest(&data)?;
            let estimators = parse_methods(&methods, profile, &manifest)?;
            let csv = evaluate::per_sample_rows(
                &data,
                &estimators,
                snr_db,
                limit,
                seed.unwrap_or(manifest.config.seed),
            )?;
            emit(out.as_deref(), &csv)
        }
        Command::Train {
            data,
            out,
            variant,
            profile,
            epochs,
            seed,
            config,
        } => {
            let manifest = dataset::read_manifest(&data)?;
            let cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<TrainConfig>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => {
                    let mut cfg = profile
                        .train_config(variant, seed.unwrap_or(manifest.config.seed));
                    cfg.network =
                        profile.network_config(variant, manifest.config.nr, manifest.config.nt);
                    if let Some(t) = epochs {
                        cfg.epochs = t;
                    }
                    cfg
                }
            };
            fs::create_dir_all(&out)?;
            fs::write(
                out.join("train_config.json"),
                serde_json::to_string_pretty(&cfg)? + "\n",
            )?;
            let report = train::train(&cfg, &data, &out)?;
            eprintln!(
                "kept epoch {} (test loss {:.6}) at {}",
                report.best_epoch,
                report.best_test_loss,
                report.checkpoint_path.display()
            );
            Ok(())
        }
        Command::Eval {
            data,
            methods,
            snr_db,
            profile,
            seed,
            out,
        } => {
            let manifest = dataset::read_manifest(&data)?;
            let estimators = parse_methods(&methods, profile, &manifest)?;
            let opts = EvalOptions {
                snr_db_set: match snr_db {
                    Some(list) => parse_f64_list(&list)?,
                    None => manifest.config.snr_db_set.clone(),
                },
                noise_seed: seed.unwrap_or(manifest.config.seed),
            };
            let rows = evaluate::evaluate(&data, &estimators, &opts)?;
            fs::write(&out, evaluate::rows_to_csv(&rows, cli.timing))
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!("wrote {} records to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Describe {
            variant,
            profile,
            nr,
            nt,
        } => {
            let (nr0, nt0) = profile.antenna_counts();
            let cfg = profile.network_config(variant, nr.unwrap_or(nr0), nt.unwrap_or(nt0));
            let net = Network::<f32>::new(cfg, 0)?;
            print!("{}", net.describe());
            let recipe = profile.train_config(variant, 0);
            println!(
                "training ({profile}): {} epochs, batch {}, peak lr {}, momentum {}, weight decay {}",
                recipe.epochs,
                recipe.batch_size,
                recipe.base_lr,
                recipe.momentum,
                recipe.weight_decay
            );
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
