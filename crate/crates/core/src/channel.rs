//! Block-fading 2x2 channel: pico-cell pathloss, quasi-static log-normal
//! shadowing and i.i.d. Rayleigh small-scale fading, plus a finite
//! discretization used by the DP layers.
//!
//! Gains are expressed relative to the configured noise variance, calibrated
//! so that transmitting `ref_tx_power_dbm` at `edge_distance_km` yields
//! `edge_snr_db` on average (over both fading and shadowing).

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{domain, Result};
use crate::math;

pub type ComplexGain = Complex64;

/// Channel entries `h[i][k]`: row `i` is the user, column `k` the BS.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelMatrix {
    pub entries: [[Complex64; 2]; 2],
}

impl ChannelMatrix {
    pub fn new(entries: [[Complex64; 2]; 2]) -> Self {
        Self { entries }
    }

    pub fn identity() -> Self {
        Self::diag(1.0, 1.0)
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Self::from_real([[a, 0.0], [0.0, b]])
    }

    pub fn from_real(m: [[f64; 2]; 2]) -> Self {
        let c = |x: f64| Complex64::new(x, 0.0);
        Self {
            entries: [[c(m[0][0]), c(m[0][1])], [c(m[1][0]), c(m[1][1])]],
        }
    }

    /// `|h_ik|^2` for user `i`, BS `k` (0-based).
    pub fn gain(&self, user: usize, bs: usize) -> f64 {
        self.entries[user][bs].norm_sqr()
    }

    pub fn det(&self) -> Complex64 {
        let [[a, b], [c, d]] = self.entries;
        a * d - b * c
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().flatten().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Relative singularity test used to reject draws.
    pub fn is_near_singular(&self) -> bool {
        let scale = self.frobenius_sq();
        !(scale > 0.0) || self.det().norm() < 1e-12 * scale
    }

    /// Rotates row and column phases so that `h11`, `h21` and `h12` are real
    /// and non-negative. Every quantity the rate formulas use (`|h_ik|`, the
    /// ZF row powers, the Gram eigenvalues) is unchanged by this.
    pub fn canonical(&self) -> ChannelMatrix {
        let mut e = self.entries;
        for row in e.iter_mut() {
            let r = row[0].norm();
            if r > 0.0 {
                let rot = row[0].conj() / r;
                row[0] = row[0] * rot;
                row[1] = row[1] * rot;
            }
        }
        let r = e[0][1].norm();
        if r > 0.0 {
            let rot = e[0][1].conj() / r;
            e[0][1] = e[0][1] * rot;
            e[1][1] = e[1][1] * rot;
        }
        // exact zeros for the imaginary parts removed by the rotations
        e[0][0].im = 0.0;
        e[1][0].im = 0.0;
        e[0][1].im = 0.0;
        ChannelMatrix { entries: e }
    }

    /// Row-major `[re, im]` pairs.
    pub fn to_real_vec(&self) -> [f64; 8] {
        let mut v = [0.0; 8];
        for (n, z) in self.entries.iter().flatten().enumerate() {
            v[2 * n] = z.re;
            v[2 * n + 1] = z.im;
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelModelParams {
    /// Distance from user `i` (row) to BS `k` (column), km.
    pub distance_km: [[f64; 2]; 2],
    pub shadowing_std_db: f64,
    /// One shadowing draw shared by all four links instead of one per link.
    pub shared_shadowing: bool,
    pub edge_snr_db: f64,
    pub ref_tx_power_dbm: f64,
    pub edge_distance_km: f64,
    /// Noise variance, W.
    pub noise_variance: f64,
    /// Frame length, s.
    pub frame_length: f64,
}

impl Default for ChannelModelParams {
    /// Two pico BSs 100 m apart with both users on the shared cell edge.
    fn default() -> Self {
        Self {
            distance_km: [[0.05, 0.05], [0.05, 0.05]],
            shadowing_std_db: 10.0,
            shared_shadowing: true,
            edge_snr_db: 10.0,
            ref_tx_power_dbm: 30.0,
            edge_distance_km: 0.05,
            noise_variance: 1.0,
            frame_length: 1.0,
        }
    }
}

impl ChannelModelParams {
    pub fn validate(&self) -> Result<()> {
        if !self.distance_km.iter().flatten().all(|&d| d > 0.0 && d.is_finite()) {
            return Err(domain("distances must be positive"));
        }
        if !(self.edge_distance_km > 0.0) {
            return Err(domain("edge distance must be positive"));
        }
        if !(self.shadowing_std_db >= 0.0) {
            return Err(domain("shadowing std must be non-negative"));
        }
        if !(self.frame_length > 0.0) {
            return Err(domain("frame length must be positive"));
        }
        if !(self.noise_variance > 0.0) {
            return Err(domain("noise variance must be positive"));
        }
        if !self.edge_snr_db.is_finite() || !self.ref_tx_power_dbm.is_finite() {
            return Err(domain("edge SNR and reference power must be finite"));
        }
        Ok(())
    }

    /// Mean of the linear shadowing factor `10^(X/10)`, `X ~ N(0, std^2)` dB.
    fn mean_shadowing_factor(&self) -> f64 {
        let s = self.shadowing_std_db * core::f64::consts::LN_10 / 10.0;
        math::exp(0.5 * s * s)
    }
}

/// Pico-cell pathloss `140.7 + 36.7 log10(d)` dB, `d` in km.
pub fn pathloss_db(d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) || !d_km.is_finite() {
        return Err(domain("distance must be positive"));
    }
    Ok(140.7 + 36.7 * math::log10(d_km))
}

/// Per-link power gain `l_ik^2` (pathloss, shadowing and the SNR calibration),
/// drawn once per experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LargeScale {
    pub power_gain: [[f64; 2]; 2],
}

impl LargeScale {
    pub fn draw<R: Rng + ?Sized>(params: &ChannelModelParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let ref_power_w = math::db_to_linear(params.ref_tx_power_dbm - 30.0);
        let edge_pl = pathloss_db(params.edge_distance_km)?;
        let snr_edge = math::db_to_linear(params.edge_snr_db);
        let norm = params.noise_variance * snr_edge / ref_power_w / params.mean_shadowing_factor();
        let mut power_gain = [[0.0; 2]; 2];
        let common: f64 = StandardNormal.sample(rng);
        for (i, row) in power_gain.iter_mut().enumerate() {
            for (k, g) in row.iter_mut().enumerate() {
                let pl = pathloss_db(params.distance_km[i][k])?;
                let x: f64 = if params.shared_shadowing {
                    common
                } else {
                    StandardNormal.sample(rng)
                };
                let shadow = math::db_to_linear(params.shadowing_std_db * x);
                *g = norm * math::db_to_linear(edge_pl - pl) * shadow;
            }
        }
        Ok(Self { power_gain })
    }

    pub fn amplitude(&self, user: usize, bs: usize) -> f64 {
        math::sqrt(self.power_gain[user][bs])
    }
}

/// Deterministic stream of channel realizations sharing one large-scale draw.
#[derive(Clone, Debug)]
pub struct ChannelSampler {
    large_scale: LargeScale,
    rng: ChaCha8Rng,
}

impl ChannelSampler {
    pub fn new(params: &ChannelModelParams, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let large_scale = LargeScale::draw(params, &mut rng)?;
        Ok(Self { large_scale, rng })
    }

    pub fn with_large_scale(large_scale: LargeScale, seed: u64) -> Self {
        Self {
            large_scale,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn large_scale(&self) -> &LargeScale {
        &self.large_scale
    }

    /// Next non-singular realization; singular draws are discarded.
    pub fn next_channel(&mut self) -> ChannelMatrix {
        loop {
            let mut entries = [[Complex64::new(0.0, 0.0); 2]; 2];
            for (i, row) in entries.iter_mut().enumerate() {
                for (k, z) in row.iter_mut().enumerate() {
                    let re: f64 = StandardNormal.sample(&mut self.rng);
                    let im: f64 = StandardNormal.sample(&mut self.rng);
                    let l = self.large_scale.amplitude(i, k);
                    *z = Complex64::new(re, im) * (l * core::f64::consts::FRAC_1_SQRT_2);
                }
            }
            let h = ChannelMatrix { entries };
            if h.is_finite() && !h.is_near_singular() {
                return h;
            }
        }
    }
}

/// One channel realization (large-scale and small-scale) for a given seed.
pub fn sample_channel(params: &ChannelModelParams, seed: u64) -> Result<ChannelMatrix> {
    Ok(ChannelSampler::new(params, seed)?.next_channel())
}

/// Finite channel alphabet with i.i.d. transitions: the next-state
/// distribution is `probs` whatever the current state.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGrid {
    states: Vec<ChannelMatrix>,
    centroids: Vec<[f64; 8]>,
    probs: Vec<f64>,
}

impl ChannelGrid {
    /// Grid from explicit representatives; the representatives double as
    /// classification centroids.
    pub fn new(states: Vec<ChannelMatrix>, probs: Vec<f64>) -> Result<Self> {
        let centroids = states.iter().map(|h| h.canonical().to_real_vec()).collect();
        Self::from_parts(states, centroids, probs)
    }

    fn from_parts(states: Vec<ChannelMatrix>, centroids: Vec<[f64; 8]>, probs: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return Err(domain("channel grid must be non-empty"));
        }
        if states.len() != probs.len() || centroids.len() != states.len() {
            return Err(domain("one probability per channel state is required"));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(domain("channel probabilities must be non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(domain("channel probabilities must sum to 1"));
        }
        if states.iter().any(|h| !h.is_finite() || h.is_near_singular()) {
            return Err(domain("channel grid contains a singular matrix"));
        }
        Ok(Self { states, centroids, probs })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ChannelMatrix] {
        &self.states
    }

    pub fn state(&self, j: usize) -> &ChannelMatrix {
        &self.states[j]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Transition row from any current state.
    pub fn transition(&self, _from: usize) -> &[f64] {
        &self.probs
    }

    /// Most probable state (first on ties).
    pub fn most_probable(&self) -> usize {
        let mut best = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = j;
            }
        }
        best
    }

    /// Nearest centroid in the phase-canonical entry space.
    pub fn classify(&self, h: &ChannelMatrix) -> usize {
        nearest(&self.centroids, &h.canonical().to_real_vec())
    }

    pub fn sampler(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(self.probs.iter().copied()).map_err(|_| domain("invalid channel probabilities"))
    }
}

fn dist2(a: &[f64; 8], b: &[f64; 8]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[[f64; 8]], x: &[f64; 8]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(c, x);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Clusters `n_calib_samples` realizations into at most `n_states` states
/// (k-means++ seeding, Lloyd iterations on phase-canonical entries). Each
/// state is represented by its medoid sample, weighted by cluster frequency.
/// Empty clusters are dropped.
pub fn build_channel_grid(
    params: &ChannelModelParams,
    n_states: usize,
    n_calib_samples: usize,
    rng_seed: u64,
) -> Result<ChannelGrid> {
    if n_states < 1 {
        return Err(domain("need at least one channel state"));
    }
    if n_calib_samples < n_states {
        return Err(domain("need at least as many calibration samples as states"));
    }
    let mut sampler = ChannelSampler::new(params, rng_seed)?;
    let samples: Vec<ChannelMatrix> = (0..n_calib_samples).map(|_| sampler.next_channel()).collect();
    let points: Vec<[f64; 8]> = samples.iter().map(|h| h.canonical().to_real_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(rng_seed, 0x6b6d_6561_6e73));

    let mut centroids = kmeans_pp_init(&points, n_states, &mut rng);
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(&points) {
            let j = nearest(&centroids, p);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        let mut sums = vec![[0.0; 8]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (&a, p) in assign.iter().zip(&points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(&sums).zip(&counts) {
            if n > 0 {
                for (cv, sv) in c.iter_mut().zip(s) {
                    *cv = sv / n as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut states = Vec::new();
    let mut kept = Vec::new();
    let mut probs = Vec::new();
    for (j, c) in centroids.iter().enumerate() {
        let members: Vec<usize> = (0..points.len()).filter(|&n| assign[n] == j).collect();
        if members.is_empty() {
            continue;
        }
        let medoid = members
            .iter()
            .copied()
            .min_by(|&x, &y| dist2(&points[x], c).total_cmp(&dist2(&points[y], c)))
            .unwrap_or(members[0]);
        states.push(samples[medoid].canonical());
        kept.push(*c);
        probs.push(members.len() as f64 / points.len() as f64);
    }
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    ChannelGrid::from_parts(states, kept, probs)
}

fn kmeans_pp_init<R: Rng>(points: &[[f64; 8]], k: usize, rng: &mut R) -> Vec<[f64; 8]> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (n, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = n;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zf::{gram_eigenvalues, row_powers, zf_weights};

    #[test]
    fn pathloss_values() {
        assert!((pathloss_db(0.001).unwrap() - 30.6).abs() < 1e-9);
        assert!((pathloss_db(0.05).unwrap() - 92.95).abs() < 0.01);
        assert!((pathloss_db(0.1).unwrap() - 104.0).abs() < 0.01);
        assert!(pathloss_db(0.0).is_err());
        assert!(pathloss_db(-1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = ChannelModelParams::default();
        assert_eq!(sample_channel(&p, 7).unwrap(), sample_channel(&p, 7).unwrap());
        assert_ne!(sample_channel(&p, 7).unwrap(), sample_channel(&p, 8).unwrap());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = ChannelModelParams::default();
        p.distance_km[0][1] = 0.0;
        assert!(sample_channel(&p, 1).is_err());
        let mut p = ChannelModelParams::default();
        p.noise_variance = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn canonical_form_keeps_rate_quantities() {
        let p = ChannelModelParams::default();
        let mut s = ChannelSampler::new(&p, 3).unwrap();
        for _ in 0..50 {
            let h = s.next_channel();
            let c = h.canonical();
            for i in 0..2 {
                for k in 0..2 {
                    assert!((h.gain(i, k) - c.gain(i, k)).abs() <= 1e-12 * h.gain(i, k).max(1e-300));
                }
            }
            let (w, wc) = (row_powers(&zf_weights(&h).unwrap()), row_powers(&zf_weights(&c).unwrap()));
            for k in 0..2 {
                for i in 0..2 {
                    assert!((w[k][i] - wc[k][i]).abs() <= 1e-9 * w[k][i].max(1e-300));
                }
            }
            let (a, b) = (gram_eigenvalues(&h), gram_eigenvalues(&c));
            assert!((a.0 - b.0).abs() <= 1e-9 * a.0 && (a.1 - b.1).abs() <= 1e-9 * a.0);
            assert_eq!(c.entries[0][0].im, 0.0);
            assert_eq!(c.entries[0][1].im, 0.0);
        }
    }

    #[test]
    fn single_state_grid() {
        let g = build_channel_grid(&ChannelModelParams::default(), 1, 100, 5).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.probs(), &[1.0]);
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        let p = ChannelModelParams::default();
        assert!(build_channel_grid(&p, 0, 100, 1).is_err());
        assert!(ChannelGrid::new(vec![ChannelMatrix::identity()], vec![0.5]).is_err());
        assert!(ChannelGrid::new(vec![ChannelMatrix::from_real([[1.0, 1.0], [1.0, 1.0]])], vec![1.0]).is_err());
        assert!(ChannelGrid::new(vec![], vec![]).is_err());
    }

    #[test]
    fn transitions_do_not_depend_on_current_state() {
        let g = build_channel_grid(&ChannelModelParams::default(), 4, 2000, 9).unwrap();
        for a in 0..g.len() {
            assert_eq!(g.transition(a), g.transition(0));
        }
        assert!((g.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
