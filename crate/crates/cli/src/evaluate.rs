//! Estimator evaluation over an SNR sweep.
//!
//! For every (sample, SNR) pair of the test split a fresh pilot observation
//! is drawn — full-aperture DFT beams, unit pilot power, noise power
//! `10^(-snr/10)` — from the evaluation-noise stream keyed by the pair, so
//! every estimator sees exactly the same observation and any processing
//! order yields the same records. Per-sample NMSE ratios and spectral
//! efficiencies are averaged per (method, SNR) cell in sample order.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};

use nfmimo_core::channel::rayleigh_distance;
use nfmimo_core::metrics::{nmse, nmse_db, spectral_efficiency};
use nfmimo_core::mssan::Network;
use nfmimo_core::pilot::{
    build_polar_dictionary, default_distance_grid, fit_channel_covariance, lmmse_estimate,
    ls_estimate, make_beams, observe, omp_estimate, BeamConfig, BeamKind, PilotObservation,
    PolarDictionary,
};
use nfmimo_core::rng::{eval_index, stream, StreamDomain};
use nfmimo_core::tensor::Graph;
use nfmimo_core::CMat;

use crate::dataset::{self, interleaved_to_matrix, matrix_to_interleaved, Split};

/// Relative residual threshold at which matching pursuit stops early.
const OMP_RESIDUAL_TOL: f64 = 1e-3;

pub enum EstimatorKind {
    Ls,
    Lmmse,
    Omp,
    Net(Box<Network<f32>>),
}

/// A method under evaluation, labeled as it should appear in the CSV.
pub struct Estimator {
    pub label: String,
    pub kind: EstimatorKind,
}

impl Estimator {
    pub fn ls() -> Self {
        Estimator {
            label: "ls".into(),
            kind: EstimatorKind::Ls,
        }
    }

    pub fn lmmse() -> Self {
        Estimator {
            label: "lmmse".into(),
            kind: EstimatorKind::Lmmse,
        }
    }

    pub fn omp() -> Self {
        Estimator {
            label: "omp".into(),
            kind: EstimatorKind::Omp,
        }
    }

    pub fn network(net: Network<f32>) -> Self {
        Estimator {
            label: net.config().variant.to_string(),
            kind: EstimatorKind::Net(Box::new(net)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub snr_db: f64,
    pub nmse_linear: f64,
    pub nmse_db: f64,
    pub se_bits: f64,
    pub samples: usize,
    pub seconds: f64,
}

pub struct EvalOptions {
    /// SNR sweep, one CSV row per method and value.
    pub snr_db_set: Vec<f64>,
    /// Seed of the evaluation noise streams (conventionally the dataset
    /// seed, so a dataset pins its evaluation noise too).
    pub noise_seed: u64,
}

/// Context shared by every estimator: the observation model plus the
/// fitted extras some methods need (channel covariance, polar dictionaries).
struct EvalContext {
    beams: BeamConfig,
    covariance: Option<CMat>,
    dicts: Option<(PolarDictionary, PolarDictionary, usize)>,
}

fn build_context(
    data_dir: &Path,
    manifest: &dataset::Manifest,
    estimators: &[Estimator],
) -> Result<EvalContext> {
    let cfg = &manifest.config;
    let beams = make_beams(cfg.nr, cfg.nt, cfg.nr, cfg.nt, 1.0, BeamKind::Dft)?;

    let covariance = if estimators.iter().any(|e| matches!(e.kind, EstimatorKind::Lmmse)) {
        let train = dataset::load_split(data_dir, Split::Train)?;
        let mats: Vec<CMat> = (0..train.len()).map(|i| train.gt_matrix(i)).collect();
        Some(fit_channel_covariance(&mats)?)
    } else {
        None
    };

    let dicts = if estimators.iter().any(|e| matches!(e.kind, EstimatorKind::Omp)) {
        let (rx, tx) = (cfg.geometry_rx(), cfg.geometry_tx());
        let grid = default_distance_grid(rayleigh_distance(&rx, &tx), cfg.distance_range_m[0]);
        let dict_rx = build_polar_dictionary(&rx, 2 * cfg.nr, &grid)?;
        let dict_tx = build_polar_dictionary(&tx, 2 * cfg.nt, &grid)?;
        let max_paths = (2.0 * cfg.mean_paths).round().max(1.0) as usize;
        Some((dict_rx, dict_tx, max_paths))
    } else {
        None
    };

    Ok(EvalContext {
        beams,
        covariance,
        dicts,
    })
}

fn estimate(est: &Estimator, ctx: &EvalContext, obs: &PilotObservation) -> Result<CMat> {
    match &est.kind {
        EstimatorKind::Ls => Ok(ls_estimate(obs)?),
        EstimatorKind::Lmmse => {
            let r_hh = ctx.covariance.as_ref().expect("covariance fitted");
            Ok(lmmse_estimate(obs, r_hh)?)
        }
        EstimatorKind::Omp => {
            let (rx, tx, max_paths) = ctx.dicts.as_ref().expect("dictionaries built");
            Ok(omp_estimate(obs, rx, tx, *max_paths, OMP_RESIDUAL_TOL)?.estimate)
        }
        EstimatorKind::Net(net) => {
            let x_ls = ls_estimate(obs)?;
            let (nr, nt) = x_ls.shape();
            let input = nfmimo_core::tensor::TensorData::new(
                vec![nr, nt, 2],
                matrix_to_interleaved(&x_ls),
            );
            let mut g = Graph::new();
            let bindings = net.bind(&mut g);
            let x = g.leaf(input);
            let y = net.forward(&mut g, x, &bindings)?;
            Ok(interleaved_to_matrix(g.value(y).data(), nr, nt))
        }
    }
}

/// Run every estimator over the test split at every SNR. Returns one row
/// per (method, SNR) in the given method order, SNR-major within a method.
pub fn evaluate(
    data_dir: &Path,
    estimators: &[Estimator],
    opts: &EvalOptions,
) -> Result<Vec<MetricsRow>> {
    if estimators.is_empty() {
        bail!("no estimation methods selected");
    }
    if opts.snr_db_set.is_empty() {
        bail!("the SNR sweep is empty");
    }
    let manifest = dataset::read_manifest(data_dir)?;
    let test = dataset::load_split(data_dir, Split::Test)?;
    if test.is_empty() {
        bail!("test split is empty");
    }
    for est in estimators {
        if let EstimatorKind::Net(net) = &est.kind {
            if net.config().nr != test.nr || net.config().nt != test.nt {
                bail!(
                    "{} checkpoint is {}x{} but the dataset is {}x{}",
                    est.label,
                    net.config().nr,
                    net.config().nt,
                    test.nr,
                    test.nt
                );
            }
        }
    }
    let ctx = build_context(data_dir, &manifest, estimators)?;

    // Accumulators per (method, snr-slot) cell, filled sample-major so the
    // reduction order is fixed regardless of how work might be scheduled.
    let mut nmse_sum = vec![vec![0.0f64; opts.snr_db_set.len()]; estimators.len()];
    let mut se_sum = vec![vec![0.0f64; opts.snr_db_set.len()]; estimators.len()];
    let mut seconds = vec![vec![0.0f64; opts.snr_db_set.len()]; estimators.len()];

    for (slot, &snr_db) in opts.snr_db_set.iter().enumerate() {
        let noise_power = 10f64.powf(-snr_db / 10.0);
        for i in 0..test.len() {
            let h_gt = test.gt_matrix(i);
            let mut rng = stream(
                opts.noise_seed,
                StreamDomain::EvalNoise,
                eval_index(i as u64, slot as u64),
            );
            let obs = observe(&h_gt, &ctx.beams, noise_power, &mut rng)?;
            for (m, est) in estimators.iter().enumerate() {
                let started = Instant::now();
                let h_est = estimate(est, &ctx, &obs)?;
                seconds[m][slot] += started.elapsed().as_secs_f64();
                nmse_sum[m][slot] += nmse(&h_gt, &h_est)?;
                se_sum[m][slot] += spectral_efficiency(&h_gt, &h_est, noise_power)?;
            }
        }
    }

    let n = test.len() as f64;
    let mut rows = Vec::with_capacity(estimators.len() * opts.snr_db_set.len());
    for (m, est) in estimators.iter().enumerate() {
        for (slot, &snr_db) in opts.snr_db_set.iter().enumerate() {
            let linear = nmse_sum[m][slot] / n;
            rows.push(MetricsRow {
                method: est.label.clone(),
                snr_db,
                nmse_linear: linear,
                nmse_db: nmse_db(linear),
                se_bits: se_sum[m][slot] / n,
                samples: test.len(),
                seconds: seconds[m][slot],
            });
        }
    }
    Ok(rows)
}

/// Render rows as the metrics CSV. Wall time is a measurement, not a
/// deterministic quantity, so it is reported as `0.000` unless `timing`
/// is set; all other columns are bit-stable across runs.
pub fn rows_to_csv(rows: &[MetricsRow], timing: bool) -> String {
    let mut out = String::from("method,snr_db,nmse_linear,nmse_db,se_bits,samples,seconds\n");
    for r in rows {
        let secs = if timing {
            format!("{:.3}", r.seconds)
        } else {
            "0.000".to_string()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method, r.snr_db, r.nmse_linear, r.nmse_db, r.se_bits, r.samples, secs
        ));
    }
    out
}

/// Per-sample diagnostic rows for one SNR: `sample,method,snr_db,
/// nmse_linear,nmse_db`. Noise comes from the same per-sample streams as
/// the sweep's first slot, so sample `i` here matches sample `i` there
/// when the SNR is the sweep's first entry.
pub fn per_sample_rows(
    data_dir: &Path,
    estimators: &[Estimator],
    snr_db: f64,
    limit: Option<usize>,
    noise_seed: u64,
) -> Result<String> {
    if estimators.is_empty() {
        bail!("no estimation methods selected");
    }
    let manifest = dataset::read_manifest(data_dir)?;
    let test = dataset::load_split(data_dir, Split::Test)?;
    let ctx = build_context(data_dir, &manifest, estimators)?;
    let count = limit.unwrap_or(test.len()).min(test.len());
    let noise_power = 10f64.powf(-snr_db / 10.0);

    let mut out = String::from("sample,method,snr_db,nmse_linear,nmse_db\n");
    for i in 0..count {
        let h_gt = test.gt_matrix(i);
        let mut rng = stream(noise_seed, StreamDomain::EvalNoise, eval_index(i as u64, 0));
        let obs = observe(&h_gt, &ctx.beams, noise_power, &mut rng)?;
        for est in estimators {
            let h_est = estimate(est, &ctx, &obs)?;
            let linear = nmse(&h_gt, &h_est)?;
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i,
                est.label,
                snr_db,
                linear,
                nmse_db(linear)
            ));
        }
    }
    Ok(out)
}

/// Group rows by method label, preserving order; used by reporting code
/// and tests that compare methods at a given SNR.
pub fn rows_by_method(rows: &[MetricsRow]) -> BTreeMap<String, Vec<&MetricsRow>> {
    let mut map: BTreeMap<String, Vec<&MetricsRow>> = BTreeMap::new();
    for row in rows {
        map.entry(row.method.clone()).or_default().push(row);
    }
    map
}
