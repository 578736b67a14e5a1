//! Pilot observation model and classical channel estimators.
//!
//! During training the transmitter sends pilot symbols through a precoder
//! `F` while the receiver combines through `W`, producing the concatenated
//! observation `Y = W^H H F S + W^H N` with diagonal pilot symbols `S`
//! (default `sqrt(P_t) I`). Vectorized, `vec(Y) = sqrt(P_t) (F^T kron W^H)
//! vec(H) + vec(V)`, which is the linear model behind the least-squares,
//! linear-MMSE, and matching-pursuit estimators implemented here. The
//! Kronecker operator is never materialized: every estimator works on the
//! matrix form directly.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::channel::{steering_vector, ArrayGeometry, ChannelError};
use crate::{CMat, CVec};

#[derive(Debug, Error)]
pub enum PilotError {
    #[error("beam dimension violated: {0}")]
    BeamDimension(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("normal equations are rank deficient: {0}")]
    RankDeficient(String),
    #[error("pilot symbol matrix is singular at entry {0}")]
    SingularPilot(usize),
    #[error("regularized covariance is singular; noise power {0} too small for this covariance")]
    SingularCovariance(f64),
    #[error("covariance fit requires at least one sample")]
    EmptyCovarianceInput,
    #[error("dictionary has no atoms")]
    EmptyDictionary,
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Beam matrix construction kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamKind {
    /// Columns of the identity: element-selection pilots.
    IdentitySubset,
    /// Columns of the unitary DFT matrix: full-aperture pilots.
    Dft,
}

/// Combiner/precoder pair with pilot power and symbols.
#[derive(Debug, Clone)]
pub struct BeamConfig {
    /// Receive combiner, `Nr x Mr`, unit-norm columns.
    pub combiner: CMat,
    /// Transmit precoder, `Nt x Mt`, unit-norm columns.
    pub precoder: CMat,
    /// Pilot power `P_t` in watts.
    pub pilot_power: f64,
    /// Diagonal of the pilot symbol matrix `S`, length `Mt`.
    pub pilot_symbols: CVec,
    /// True when both beam matrices have orthonormal columns filling the
    /// full aperture, enabling the inversion-free estimator path.
    unitary: bool,
}

impl BeamConfig {
    pub fn mr(&self) -> usize {
        self.combiner.ncols()
    }

    pub fn mt(&self) -> usize {
        self.precoder.ncols()
    }
}

/// Received pilot matrix with everything needed to invert the observation.
#[derive(Debug, Clone)]
pub struct PilotObservation {
    /// `Mr x Mt` received matrix.
    pub y: CMat,
    pub beams: BeamConfig,
    /// Per-entry noise power `sigma^2` at the antennas, watts.
    pub noise_power: f64,
}

fn dft_column(n: usize, col: usize) -> CVec {
    let scale = 1.0 / (n as f64).sqrt();
    CVec::from_fn(n, |row, _| {
        let phase = -2.0 * std::f64::consts::PI * (row * col) as f64 / n as f64;
        Complex64::from_polar(scale, phase)
    })
}

/// Build a combiner/precoder pair with `Mr`/`Mt` unit-norm columns.
///
/// `Dft` takes the first columns of the unitary DFT matrix (orthonormal for
/// any `M`); `IdentitySubset` takes the first columns of the identity.
pub fn make_beams(
    nr: usize,
    nt: usize,
    mr: usize,
    mt: usize,
    pilot_power: f64,
    kind: BeamKind,
) -> Result<BeamConfig, PilotError> {
    if mr == 0 || mr > nr {
        return Err(PilotError::BeamDimension(format!(
            "combiner needs 1 <= Mr <= Nr, got Mr={mr}, Nr={nr}"
        )));
    }
    if mt == 0 || mt > nt {
        return Err(PilotError::BeamDimension(format!(
            "precoder needs 1 <= Mt <= Nt, got Mt={mt}, Nt={nt}"
        )));
    }
    let column = |n: usize, c: usize| match kind {
        BeamKind::Dft => dft_column(n, c),
        BeamKind::IdentitySubset => {
            let mut v = CVec::zeros(n);
            v[c] = Complex64::ONE;
            v
        }
    };
    let combiner = CMat::from_fn(nr, mr, |r, c| column(nr, c)[r]);
    let precoder = CMat::from_fn(nt, mt, |r, c| column(nt, c)[r]);
    Ok(BeamConfig {
        combiner,
        precoder,
        pilot_power,
        pilot_symbols: CVec::from_element(mt, Complex64::new(pilot_power.sqrt(), 0.0)),
        unitary: mr == nr && mt == nt,
    })
}

/// Pass a channel through the pilot stage: `Y = W^H H F S + W^H N`, with
/// antenna noise drawn column by column as circular complex Gaussian of
/// per-entry power `noise_power`.
pub fn observe<R: Rng>(
    h: &CMat,
    beams: &BeamConfig,
    noise_power: f64,
    rng: &mut R,
) -> Result<PilotObservation, PilotError> {
    let (nr, nt) = h.shape();
    if beams.combiner.nrows() != nr || beams.precoder.nrows() != nt {
        return Err(PilotError::DimensionMismatch(format!(
            "channel is {nr}x{nt} but beams expect {}x{}",
            beams.combiner.nrows(),
            beams.precoder.nrows()
        )));
    }
    let mut y = beams.combiner.adjoint() * h * &beams.precoder;
    for (c, s) in beams.pilot_symbols.iter().enumerate() {
        for r in 0..y.nrows() {
            y[(r, c)] *= s;
        }
    }
    if noise_power > 0.0 {
        let sd = (noise_power / 2.0).sqrt();
        let mt = beams.mt();
        let mut noise = CMat::zeros(nr, mt);
        for c in 0..mt {
            for r in 0..nr {
                let re: f64 = rng.sample(rand_distr::StandardNormal);
                let im: f64 = rng.sample(rand_distr::StandardNormal);
                noise[(r, c)] = Complex64::new(re * sd, im * sd);
            }
        }
        y += beams.combiner.adjoint() * noise;
    }
    Ok(PilotObservation {
        y,
        beams: beams.clone(),
        noise_power,
    })
}

/// Observation with the pilot symbols divided out: `Z = Y S^{-1}`, the
/// power-normalized measurement `W^H H F + noise`.
fn normalized_observation(obs: &PilotObservation) -> Result<CMat, PilotError> {
    let mut z = obs.y.clone();
    for (c, s) in obs.beams.pilot_symbols.iter().enumerate() {
        if s.norm() == 0.0 {
            return Err(PilotError::SingularPilot(c));
        }
        let inv = s.inv();
        for r in 0..z.nrows() {
            z[(r, c)] *= inv;
        }
    }
    Ok(z)
}

/// Least-squares channel estimate.
///
/// Solves the normal equations of `vec(Y) = sqrt(P_t) (F^T kron W^H) vec(H)`
/// without forming the Kronecker operator:
/// `H_ls = (W W^H)^{-1} W Z F^H (F F^H)^{-1}` with `Z = Y S^{-1}`.
/// For full-aperture orthonormal beams both Grams are the identity and the
/// estimate reduces to `W Z F^H`.
pub fn ls_estimate(obs: &PilotObservation) -> Result<CMat, PilotError> {
    let w = &obs.beams.combiner;
    let f = &obs.beams.precoder;
    let (nr, mr) = w.shape();
    let (nt, mt) = f.shape();
    if mr < nr {
        return Err(PilotError::RankDeficient(format!(
            "combiner observes only {mr} of {nr} receive dimensions"
        )));
    }
    if mt < nt {
        return Err(PilotError::RankDeficient(format!(
            "precoder excites only {mt} of {nt} transmit dimensions"
        )));
    }
    let z = normalized_observation(obs)?;
    if obs.beams.unitary {
        return Ok(w * z * f.adjoint());
    }
    let gram_w = w * w.adjoint();
    let gram_f = f * f.adjoint();
    let chol_w = gram_w
        .cholesky()
        .ok_or_else(|| PilotError::RankDeficient("receive Gram W W^H is singular".into()))?;
    let chol_f = gram_f
        .cholesky()
        .ok_or_else(|| PilotError::RankDeficient("transmit Gram F F^H is singular".into()))?;
    // (W W^H)^{-1} (W Z F^H) (F F^H)^{-1}, splitting the right solve through
    // an adjoint so both triangular solves act on the left.
    let lhs = chol_w.solve(&(w * z * f.adjoint()));
    Ok(chol_f.solve(&lhs.adjoint()).adjoint())
}

/// Sample covariance of vectorized channels: `(1/K) sum vec(H) vec(H)^H`,
/// symmetrized so the result is Hermitian to machine precision.
pub fn fit_channel_covariance(samples: &[CMat]) -> Result<CMat, PilotError> {
    let first = samples.first().ok_or(PilotError::EmptyCovarianceInput)?;
    let n = first.nrows() * first.ncols();
    let mut r = CMat::zeros(n, n);
    let weight = Complex64::new(1.0 / samples.len() as f64, 0.0);
    for h in samples {
        if h.nrows() * h.ncols() != n {
            return Err(PilotError::DimensionMismatch(
                "covariance samples must share one shape".into(),
            ));
        }
        let v = DVector::from_column_slice(h.as_slice());
        r.gerc(weight, &v, &v, Complex64::ONE);
    }
    let adj = r.adjoint();
    Ok((r + adj) * Complex64::new(0.5, 0.0))
}

/// Linear-MMSE refinement of the LS estimate:
/// `vec(H_lmmse) = R (R + (sigma^2 / P_t) I)^{-1} vec(H_ls)`.
///
/// `r_hh` is the covariance of the vectorized channel (column-major
/// stacking). With full-aperture orthonormal beams the LS error covariance
/// is `(sigma^2 / P_t) I`, which is the regularizer used here.
pub fn lmmse_estimate(obs: &PilotObservation, r_hh: &CMat) -> Result<CMat, PilotError> {
    let ls = ls_estimate(obs)?;
    let (nr, nt) = ls.shape();
    let n = nr * nt;
    if r_hh.shape() != (n, n) {
        return Err(PilotError::DimensionMismatch(format!(
            "covariance is {}x{}, expected {n}x{n}",
            r_hh.nrows(),
            r_hh.ncols()
        )));
    }
    let lambda = obs.noise_power / obs.beams.pilot_power;
    let mut regularized = r_hh.clone();
    for k in 0..n {
        regularized[(k, k)] += Complex64::new(lambda, 0.0);
    }
    let chol = regularized
        .cholesky()
        .ok_or(PilotError::SingularCovariance(obs.noise_power))?;
    let h_ls_vec = DVector::from_column_slice(ls.as_slice());
    let filtered = r_hh * chol.solve(&h_ls_vec);
    Ok(CMat::from_column_slice(nr, nt, filtered.as_slice()))
}

/// Grid of array responses over angle and distance, used as the sparse
/// representation basis for matching pursuit.
#[derive(Debug, Clone)]
pub struct PolarDictionary {
    /// `N x G` matrix of unit-norm atoms.
    pub atoms: CMat,
    /// `(theta, r)` per atom; `r = inf` marks a plane-wave atom.
    pub grid: Vec<(f64, f64)>,
}

impl PolarDictionary {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Largest off-diagonal Gram magnitude `max |a_i^H a_j|`, i != j.
    pub fn mutual_coherence(&self) -> f64 {
        let gram = self.atoms.adjoint() * &self.atoms;
        let g = self.len();
        let mut worst = 0.0f64;
        for i in 0..g {
            for j in 0..i {
                worst = worst.max(gram[(i, j)].norm());
            }
        }
        worst
    }
}

/// Distance rings for a polar grid: a plane-wave shell plus dyadic
/// fractions of the Rayleigh distance down to the closest expected source.
/// The progression is uniform-ish in inverse distance, where wavefront
/// curvature (proportional to `1/r`) changes linearly.
pub fn default_distance_grid(rayleigh_m: f64, r_min_m: f64) -> Vec<f64> {
    vec![
        f64::INFINITY,
        rayleigh_m / 2.0,
        rayleigh_m / 4.0,
        rayleigh_m / 8.0,
        rayleigh_m / 16.0,
        r_min_m,
    ]
}

/// Tabulate steering vectors over `angle_grid_size` spatial angles uniform
/// in `sin(phi)` on (-1, 1), crossed with every distance in `distance_grid`.
/// Atom `d * angle_grid_size + a` covers distance index `d`, angle index `a`.
pub fn build_polar_dictionary(
    geom: &ArrayGeometry,
    angle_grid_size: usize,
    distance_grid: &[f64],
) -> Result<PolarDictionary, PilotError> {
    if angle_grid_size == 0 || distance_grid.is_empty() {
        return Err(PilotError::EmptyDictionary);
    }
    let count = angle_grid_size * distance_grid.len();
    let mut atoms = CMat::zeros(geom.num_elements, count);
    let mut grid = Vec::with_capacity(count);
    let mut col = 0;
    for &r in distance_grid {
        for a in 0..angle_grid_size {
            let theta = (2 * a + 1) as f64 / angle_grid_size as f64 - 1.0;
            let atom = steering_vector(geom, theta, r)?;
            atoms.set_column(col, &atom);
            grid.push((theta, r));
            col += 1;
        }
    }
    Ok(PolarDictionary { atoms, grid })
}

/// Matching-pursuit outcome: the estimate plus per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct OmpReport {
    pub estimate: CMat,
    /// Residual Frobenius norm after each refit, starting with the
    /// norm of the (power-normalized) observation itself.
    pub residual_norms: Vec<f64>,
    /// Selected `(rx_atom, tx_atom)` index pairs in pick order.
    pub selected: Vec<(usize, usize)>,
}

/// Greedy sparse estimate over the product dictionary.
///
/// Works on `Z = Y S^{-1}`; the rank-one building blocks are sensed atom
/// pairs `(W^H a_rx)(F^H a_tx)^H`. Each iteration scores every pair by its
/// normalized correlation with the residual — the score matrix is
/// `G_r^H Z_resid G_t` for sensed dictionaries `G_r = W^H A_rx`,
/// `G_t = F^H A_tx` — then refits all selected coefficients by
/// least squares. Ties pick the lowest `(rx, tx)` pair; iteration stops at
/// `max_paths` atoms or when the residual drops below `residual_tol`
/// relative to `Z`.
pub fn omp_estimate(
    obs: &PilotObservation,
    dict_rx: &PolarDictionary,
    dict_tx: &PolarDictionary,
    max_paths: usize,
    residual_tol: f64,
) -> Result<OmpReport, PilotError> {
    if dict_rx.is_empty() || dict_tx.is_empty() {
        return Err(PilotError::EmptyDictionary);
    }
    let w = &obs.beams.combiner;
    let f = &obs.beams.precoder;
    if dict_rx.atoms.nrows() != w.nrows() || dict_tx.atoms.nrows() != f.nrows() {
        return Err(PilotError::DimensionMismatch(
            "dictionary element counts must match the beam arrays".into(),
        ));
    }
    let z = normalized_observation(obs)?;
    let (nr, nt) = (w.nrows(), f.nrows());
    let g_r = w.adjoint() * &dict_rx.atoms;
    let g_t = f.adjoint() * &dict_tx.atoms;
    let rx_norms: Vec<f64> = (0..g_r.ncols()).map(|c| g_r.column(c).norm()).collect();
    let tx_norms: Vec<f64> = (0..g_t.ncols()).map(|c| g_t.column(c).norm()).collect();

    let z_norm = z.norm();
    let mut residual = z.clone();
    let mut report = OmpReport {
        estimate: CMat::zeros(nr, nt),
        residual_norms: vec![z_norm],
        selected: Vec::new(),
    };
    if max_paths == 0 || z_norm == 0.0 {
        return Ok(report);
    }

    let mut coeffs: Vec<Complex64> = Vec::new();
    for _ in 0..max_paths {
        // Score matrix: correlation of every sensed pair with the residual.
        let scores = g_r.adjoint() * &residual * &g_t;
        let mut best = (0usize, 0usize, -1.0f64);
        for i in 0..scores.nrows() {
            for j in 0..scores.ncols() {
                let denom = rx_norms[i] * tx_norms[j];
                if denom == 0.0 || report.selected.contains(&(i, j)) {
                    continue;
                }
                let s = scores[(i, j)].norm() / denom;
                if s > best.2 {
                    best = (i, j, s);
                }
            }
        }
        if best.2 <= 0.0 {
            break;
        }
        report.selected.push((best.0, best.1));

        // Joint least-squares refit of all selected pairs against Z via the
        // k x k normal equations; Gram entries factor across the Kronecker
        // structure as conj(g_t_a^H g_t_b) * (g_r_a^H g_r_b).
        let k = report.selected.len();
        let mut gram = CMat::zeros(k, k);
        let mut rhs = CVec::zeros(k);
        for (a, &(ia, ja)) in report.selected.iter().enumerate() {
            for (b, &(ib, jb)) in report.selected.iter().enumerate() {
                let rx_ip = g_r.column(ia).dotc(&g_r.column(ib));
                let tx_ip = g_t.column(ja).dotc(&g_t.column(jb));
                gram[(a, b)] = tx_ip.conj() * rx_ip;
            }
            rhs[a] = (g_r.column(ia).adjoint() * &z * g_t.column(ja))[(0, 0)];
        }
        let solved = gram
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| gram.lu().solve(&rhs))
            .ok_or_else(|| PilotError::RankDeficient("selected atom set is degenerate".into()))?;
        coeffs = solved.iter().cloned().collect();

        residual = z.clone();
        for (c, &(i, j)) in coeffs.iter().zip(report.selected.iter()) {
            let gr = g_r.column(i).clone_owned();
            let gt = g_t.column(j).clone_owned();
            residual.gerc(-c, &gr, &gt, Complex64::ONE);
        }
        report.residual_norms.push(residual.norm());
        if residual.norm() <= residual_tol * z_norm {
            break;
        }
    }

    for (c, &(i, j)) in coeffs.iter().zip(report.selected.iter()) {
        let ar = dict_rx.atoms.column(i).clone_owned();
        let at = dict_tx.atoms.column(j).clone_owned();
        report.estimate.gerc(*c, &ar, &at, Complex64::ONE);
    }
    Ok(report)
}
