//! Canned configuration profiles.
//!
//! `paper` is the published full-scale setup: a 256 x 8 link at 60 GHz with
//! sources between 3 m and the Rayleigh distance, networks trained for 120
//! epochs. `desk` shrinks that to a 32 x 4 link with 2000 samples and 30
//! epochs so the whole pipeline (generate, train, evaluate) runs in minutes
//! on a laptop. Both share the SNR sweep {-10, -5, 0, 5, 10} dB and the
//! optimizer settings (batch 32, peak rate 0.1, momentum 0.9, weight decay
//! 1e-4).

use std::fmt;
use std::str::FromStr;

use nfmimo_core::channel::{rayleigh_distance, ArrayGeometry, DatasetConfig};
use nfmimo_core::mssan::{NetworkConfig, NetworkVariant};

use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile {other:?} (expected desk or paper)")),
        }
    }
}

impl Profile {
    pub fn antenna_counts(self) -> (usize, usize) {
        match self {
            Profile::Desk => (32, 4),
            Profile::Paper => (256, 8),
        }
    }

    /// Dataset generation settings. Sources span from `r_min` up to the
    /// Rayleigh distance of the link, so every sample sits in the near
    /// field. The mean path count scales with the transmit array (3 paths
    /// for 4 antennas, 6 for 8) so the desk link keeps the full-scale
    /// problem's path-to-dimension ratio; holding it at 6 would leave a
    /// 32 x 4 channel essentially unstructured and erase the sparsity that
    /// the learned estimators exploit.
    pub fn dataset_config(self, seed: u64) -> DatasetConfig {
        let (nr, nt) = self.antenna_counts();
        let carrier_freq_hz = 60.0e9;
        let rx = ArrayGeometry::half_wavelength(nr, carrier_freq_hz);
        let tx = ArrayGeometry::half_wavelength(nt, carrier_freq_hz);
        let d_rayleigh = rayleigh_distance(&rx, &tx);
        let (r_min, sample_count, mean_paths) = match self {
            Profile::Desk => (1.0, 2000, 3.0),
            Profile::Paper => (3.0, 10000, 6.0),
        };
        DatasetConfig {
            nr,
            nt,
            carrier_freq_hz,
            mean_paths,
            angle_bound_rad: std::f64::consts::FRAC_PI_3,
            distance_range_m: [r_min, d_rayleigh],
            snr_db_set: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            sample_count,
            split_ratio: [4, 1],
            seed,
        }
    }

    /// Architecture for `variant` at this profile's scale.
    pub fn network_config(self, variant: NetworkVariant, nr: usize, nt: usize) -> NetworkConfig {
        let mut cfg = match variant {
            NetworkVariant::Mssan => NetworkConfig::mssan(nr, nt),
            NetworkVariant::San => NetworkConfig::san(nr, nt),
            NetworkVariant::CnnBaseline => NetworkConfig::cnn_baseline(nr, nt),
        };
        if self == Profile::Desk {
            cfg.embed_features = 16;
            if variant == NetworkVariant::San {
                cfg.blocks[0] = 4;
            }
        }
        cfg
    }

    pub fn train_config(self, variant: NetworkVariant, seed: u64) -> TrainConfig {
        let (nr, nt) = self.antenna_counts();
        TrainConfig {
            network: self.network_config(variant, nr, nt),
            epochs: match self {
                Profile::Desk => 30,
                Profile::Paper => 120,
            },
            batch_size: 32,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_dataset_matches_published_geometry() {
        let cfg = Profile::Paper.dataset_config(0);
        assert_eq!((cfg.nr, cfg.nt), (256, 8));
        assert_eq!(cfg.mean_paths, 6.0);
        assert_eq!(cfg.distance_range_m[0], 3.0);
        // Published boundary: 174.25 m (rounded); D = N d convention.
        assert!((cfg.distance_range_m[1] - 174.24).abs() < 0.01);
        assert_eq!(cfg.split_counts(), (8000, 2000));
    }

    #[test]
    fn desk_dataset_is_near_field_and_small() {
        let cfg = Profile::Desk.dataset_config(7);
        cfg.validate().unwrap();
        assert_eq!(cfg.sample_count, 2000);
        assert_eq!(cfg.split_counts(), (1600, 400));
        // 36 half-wavelength elements in total: boundary 2*(0.09 m)^2 / 5 mm.
        assert!((cfg.distance_range_m[1] - 3.24).abs() < 1e-12);
        assert!(cfg.distance_range_m[0] < cfg.distance_range_m[1]);
    }

    #[test]
    fn paper_networks_use_published_settings() {
        let cfg = Profile::Paper.network_config(NetworkVariant::Mssan, 256, 8);
        assert_eq!(cfg, NetworkConfig::mssan(256, 8));
        let train = Profile::Paper.train_config(NetworkVariant::Mssan, 0);
        assert_eq!(train.epochs, 120);
        assert_eq!(train.batch_size, 32);
        assert_eq!(train.base_lr, 0.1);
        assert_eq!(train.momentum, 0.9);
        assert_eq!(train.weight_decay, 1e-4);
    }

    #[test]
    fn desk_networks_shrink_but_validate() {
        for variant in [
            NetworkVariant::Mssan,
            NetworkVariant::San,
            NetworkVariant::CnnBaseline,
        ] {
            let cfg = Profile::Desk.network_config(variant, 32, 4);
            assert_eq!(cfg.embed_features, 16);
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn profile_names_round_trip() {
        for p in [Profile::Desk, Profile::Paper] {
            assert_eq!(p.to_string().parse::<Profile>().unwrap(), p);
        }
        assert!("prod".parse::<Profile>().is_err());
    }
}
