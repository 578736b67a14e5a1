//! Dataset files: generation of (input, ground-truth) channel pairs and the
//! binary container they are stored in.
//!
//! A dataset directory holds `train.nfcd`, `test.nfcd`, and `manifest.json`.
//! Each `.nfcd` file is little-endian: magic `NFCD`, version `u32 = 1`,
//! `Nr: u32`, `Nt: u32`, `count: u64`, then per sample the ground-truth
//! channel followed by the model input, each as `Nr x Nt x 2` row-major
//! (receive-major) `f32` with the real part before the imaginary part.
//! The manifest records the full generation config, so every downstream
//! stage (training, evaluation) can re-derive geometry and noise streams.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use nfmimo_core::channel::{sample_channel, DatasetConfig};
use nfmimo_core::pilot::{ls_estimate, make_beams, observe, BeamKind};
use nfmimo_core::rng::{stream, StreamDomain};
use nfmimo_core::tensor::TensorData;
use nfmimo_core::CMat;

pub const MAGIC: [u8; 4] = *b"NFCD";
pub const VERSION: u32 = 1;

/// Which half of the split to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.nfcd",
            Split::Test => "test.nfcd",
        }
    }
}

/// Sidecar JSON written next to the sample files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub train_count: usize,
    pub test_count: usize,
}

/// One stored pair, in file layout (interleaved `f32`, length `Nr*Nt*2`).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub h_gt: Vec<f32>,
    pub x_in: Vec<f32>,
}

/// A loaded `.nfcd` file.
#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub nr: usize,
    pub nt: usize,
    pub samples: Vec<Sample>,
}

impl DatasetFile {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Ground truth of sample `i` as an `[Nr, Nt, 2]` tensor.
    pub fn gt_tensor(&self, i: usize) -> TensorData<f32> {
        TensorData::new(vec![self.nr, self.nt, 2], self.samples[i].h_gt.clone())
    }

    /// Model input of sample `i` as an `[Nr, Nt, 2]` tensor.
    pub fn input_tensor(&self, i: usize) -> TensorData<f32> {
        TensorData::new(vec![self.nr, self.nt, 2], self.samples[i].x_in.clone())
    }

    /// Ground truth of sample `i` as a complex matrix.
    pub fn gt_matrix(&self, i: usize) -> CMat {
        interleaved_to_matrix(&self.samples[i].h_gt, self.nr, self.nt)
    }
}

/// Flatten a complex matrix into the file layout: row-major scan with
/// re/im interleaved.
pub fn matrix_to_interleaved(m: &CMat) -> Vec<f32> {
    let (nr, nt) = m.shape();
    let mut out = Vec::with_capacity(nr * nt * 2);
    for r in 0..nr {
        for t in 0..nt {
            out.push(m[(r, t)].re as f32);
            out.push(m[(r, t)].im as f32);
        }
    }
    out
}

/// Inverse of [`matrix_to_interleaved`] (up to the `f32` rounding).
pub fn interleaved_to_matrix(data: &[f32], nr: usize, nt: usize) -> CMat {
    assert_eq!(data.len(), nr * nt * 2, "interleaved buffer length");
    CMat::from_fn(nr, nt, |r, t| {
        let k = (r * nt + t) * 2;
        Complex64::new(data[k] as f64, data[k + 1] as f64)
    })
}

/// Ground truth, model input, and the SNR slot used for sample `index`,
/// all in full precision.
///
/// The channel comes from the per-sample path stream; the input image is
/// the least-squares estimate of one full-aperture DFT pilot pass at
/// `snr_db_set[index mod |set|]` with unit pilot power, noise drawn from
/// the per-sample data-noise stream. At infinite SNR the input equals the
/// channel to rounding error.
pub fn generate_sample(cfg: &DatasetConfig, index: u64) -> Result<(CMat, CMat, f64)> {
    let real = sample_channel(cfg, index)?;
    let snr_db = cfg.snr_db_set[index as usize % cfg.snr_db_set.len()];
    let noise_power = 10f64.powf(-snr_db / 10.0);
    let beams = make_beams(cfg.nr, cfg.nt, cfg.nr, cfg.nt, 1.0, BeamKind::Dft)?;
    let mut rng = stream(cfg.seed, StreamDomain::DataNoise, index);
    let obs = observe(&real.matrix, &beams, noise_power, &mut rng)?;
    let x_in = ls_estimate(&obs)?;
    Ok((real.matrix, x_in, snr_db))
}

/// Generate the full dataset under `cfg` and write `train.nfcd`,
/// `test.nfcd`, and `manifest.json` into `dir`. The first `train_count`
/// sample indices form the training split.
pub fn generate(cfg: &DatasetConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(dir)
        .with_context(|| format!("creating dataset directory {}", dir.display()))?;
    let (train_count, test_count) = cfg.split_counts();
    let mut train = Vec::with_capacity(train_count);
    let mut test = Vec::with_capacity(test_count);
    for i in 0..cfg.sample_count {
        let (h, x, _) = generate_sample(cfg, i as u64)?;
        let sample = Sample {
            h_gt: matrix_to_interleaved(&h),
            x_in: matrix_to_interleaved(&x),
        };
        if i < train_count {
            train.push(sample);
        } else {
            test.push(sample);
        }
    }
    write_file(&dir.join(Split::Train.file_name()), cfg.nr, cfg.nt, &train)?;
    write_file(&dir.join(Split::Test.file_name()), cfg.nr, cfg.nt, &test)?;
    let manifest = Manifest {
        config: cfg.clone(),
        train_count,
        test_count,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading dataset manifest {}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing dataset manifest {}", path.display()))?;
    Ok(manifest)
}

pub fn load_split(dir: &Path, split: Split) -> Result<DatasetFile> {
    read_file(&dir.join(split.file_name()))
}

pub fn write_file(path: &Path, nr: usize, nt: usize, samples: &[Sample]) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(nr as u32).to_le_bytes())?;
    w.write_all(&(nt as u32).to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    let per = nr * nt * 2;
    let mut buf = Vec::with_capacity(per * 8);
    for s in samples {
        assert_eq!(s.h_gt.len(), per, "ground-truth buffer length");
        assert_eq!(s.x_in.len(), per, "input buffer length");
        buf.clear();
        for &v in s.h_gt.iter().chain(s.x_in.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<DatasetFile> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .with_context(|| format!("reading header of {}", path.display()))?;
    if magic != MAGIC {
        bail!("{} is not a channel dataset (bad magic)", path.display());
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        bail!("unsupported dataset version {version} in {}", path.display());
    }
    let nr = read_u32(&mut r)? as usize;
    let nt = read_u32(&mut r)? as usize;
    let count = read_u64(&mut r)? as usize;
    if nr == 0 || nt == 0 {
        bail!("degenerate array extents {nr}x{nt} in {}", path.display());
    }
    let per = nr * nt * 2;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let h_gt = read_f32_vec(&mut r, per)
            .with_context(|| format!("reading sample {i} of {}", path.display()))?;
        let x_in = read_f32_vec(&mut r, per)
            .with_context(|| format!("reading sample {i} of {}", path.display()))?;
        samples.push(Sample { h_gt, x_in });
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        bail!("trailing bytes after {count} samples in {}", path.display());
    }
    Ok(DatasetFile { nr, nt, samples })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32_vec<R: Read>(r: &mut R, len: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nfmimo_core::metrics::nmse;
    use std::f64::consts::FRAC_PI_3;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig {
            nr: 16,
            nt: 4,
            carrier_freq_hz: 60.0e9,
            mean_paths: 6.0,
            angle_bound_rad: FRAC_PI_3,
            distance_range_m: [1.0, 10.0],
            snr_db_set: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            sample_count: 25,
            split_ratio: [4, 1],
            seed: 99,
        }
    }

    #[test]
    fn interleaving_round_trips() {
        let m = CMat::from_fn(3, 2, |r, c| Complex64::new(r as f64 + 0.25, c as f64 - 0.5));
        let flat = matrix_to_interleaved(&m);
        assert_eq!(flat.len(), 12);
        // Receive-major scan: element (1, 0) sits at flat index (1*2+0)*2.
        assert_eq!(flat[4], 1.25);
        assert_eq!(flat[5], -0.5);
        let back = interleaved_to_matrix(&flat, 3, 2);
        assert_eq!(back, m);
    }

    #[test]
    fn snr_slots_rotate_through_the_set() {
        let cfg = small_cfg();
        for i in 0..7u64 {
            let (_, _, snr) = generate_sample(&cfg, i).unwrap();
            assert_eq!(snr, cfg.snr_db_set[i as usize % 5]);
        }
    }

    #[test]
    fn infinite_snr_input_equals_ground_truth() {
        let mut cfg = small_cfg();
        cfg.snr_db_set = vec![f64::INFINITY];
        let (h, x, _) = generate_sample(&cfg, 3).unwrap();
        assert!(nmse(&h, &x).unwrap() < 1e-20);
    }

    #[test]
    fn low_snr_inputs_are_noisier() {
        let cfg = small_cfg();
        // Index 0 lands on -10 dB, index 2 on 0 dB; LS error scales with
        // the noise power, an order of magnitude apart here.
        let (h0, x0, _) = generate_sample(&cfg, 0).unwrap();
        let (h2, x2, _) = generate_sample(&cfg, 2).unwrap();
        assert!(nmse(&h0, &x0).unwrap() > nmse(&h2, &x2).unwrap());
    }

    #[test]
    fn generate_splits_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let manifest = generate(&cfg, dir.path()).unwrap();
        assert_eq!((manifest.train_count, manifest.test_count), (20, 5));

        let train = load_split(dir.path(), Split::Train).unwrap();
        let test = load_split(dir.path(), Split::Test).unwrap();
        assert_eq!((train.nr, train.nt), (16, 4));
        assert_eq!(train.len(), 20);
        assert_eq!(test.len(), 5);

        // Test split continues the sample index sequence where train ended.
        let (h20, _, _) = generate_sample(&cfg, 20).unwrap();
        let stored = test.gt_matrix(0);
        for r in 0..16 {
            for t in 0..4 {
                assert_eq!(stored[(r, t)].re, h20[(r, t)].re as f32 as f64);
                assert_eq!(stored[(r, t)].im, h20[(r, t)].im as f32 as f64);
            }
        }

        let back = read_manifest(dir.path()).unwrap();
        assert_eq!(back, manifest);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let cfg = small_cfg();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate(&cfg, dir_a.path()).unwrap();
        generate(&cfg, dir_b.path()).unwrap();
        for name in ["train.nfcd", "test.nfcd", "manifest.json"] {
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let b = fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn tensor_views_match_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        generate(&cfg, dir.path()).unwrap();
        let train = load_split(dir.path(), Split::Train).unwrap();
        let t = train.gt_tensor(0);
        assert_eq!(t.shape(), &[16, 4, 2]);
        assert_eq!(t.data(), train.samples[0].h_gt.as_slice());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.nfcd");
        fs::write(&path, b"MAGIC-FREE").unwrap();
        let err = read_file(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "unexpected error: {err}");
    }

    #[test]
    fn rejects_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        generate(&cfg, dir.path()).unwrap();
        let path = dir.path().join("test.nfcd");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_file(&path).is_err());
    }
}
