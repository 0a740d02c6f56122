//! Analog beam-training codebooks and compressive pilot acquisition.
//!
//! Each RX subarray applies one phase-shifter weight vector per training slot
//! and delivers a single complex measurement through its RF chain. The
//! training vectors are circulant shifts of a Zadoff-Chu sequence; the last
//! vector is a sign-flipped copy of the first, which lets the unknown
//! subchannel gain be recovered in closed form from two measurements.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::ChannelMatrix;
use crate::C64;

/// Gain estimates below this magnitude are treated as "no usable signal".
pub const GAIN_FLOOR: f64 = 1e-12;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Unit-norm Zadoff-Chu sequence of length `n` with the given root.
///
/// Every entry has modulus `1/sqrt(n)` and the periodic autocorrelation is
/// zero at all nonzero lags.
pub fn zc_sequence(n: usize, root: u64) -> Result<Vec<C64>> {
    if n == 0 {
        return Err(Error::InvalidCodebook("empty sequence".into()));
    }
    if gcd(root, n as u64) != 1 {
        return Err(Error::InvalidCodebook(format!(
            "root {root} is not coprime with the length {n}"
        )));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let seq = (0..n)
        .map(|m| {
            let m = m as f64;
            let quad = if n % 2 == 0 { m * m } else { m * (m + 1.0) };
            C64::from_polar(scale, -PI * root as f64 * quad / n as f64)
        })
        .collect();
    Ok(seq)
}

/// How the codebook recovers the unknown subchannel gain.
#[derive(Debug, Clone, PartialEq)]
pub enum CodebookKind {
    /// Circulant ZC shifts plus the sign-flipped probe as the last vector.
    ZcProbe { root: u64, shifts: Vec<usize> },
    /// Full DFT dictionary (exhaustive beam scan); the gain comes from the
    /// beam sum, which isolates the first antenna.
    Dft,
}

/// A per-subarray set of analog beam-training vectors.
///
/// `vectors[m]` holds the phase-shifter weights `w[m]`; a measurement applies
/// the conjugate transpose, `y[m] = w[m]^H h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    vectors: Vec<Vec<C64>>,
    kind: CodebookKind,
    seed: Option<u64>,
}

impl Codebook {
    /// Number of training slots `M`.
    pub fn m_count(&self) -> usize {
        self.vectors.len()
    }

    /// Subarray size `N`.
    pub fn n(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vector(&self, m: usize) -> &[C64] {
        &self.vectors[m]
    }

    pub fn vectors(&self) -> &[Vec<C64>] {
        &self.vectors
    }

    pub fn kind(&self) -> &CodebookKind {
        &self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// First entry of the first training vector; the probe identity returns
    /// the gain scaled by `2 conj(eta)`.
    pub fn eta(&self) -> C64 {
        self.vectors[0][0]
    }

    /// `w[m]^H h` for a length-`n` input.
    pub fn measure(&self, m: usize, h: &[C64]) -> C64 {
        beamform(&self.vectors[m], h)
    }
}

/// Conjugate-transpose projection `w^H h`.
pub fn beamform(w: &[C64], h: &[C64]) -> C64 {
    w.iter().zip(h.iter()).map(|(wn, hn)| wn.conj() * hn).sum()
}

/// Build the ZC training codebook for one subarray.
///
/// The first `m_count - 1` vectors are distinct random circulant shifts of the
/// root ZC sequence; the last vector is the first with entries `2..n` negated.
pub fn build_codebook(n: usize, m_count: usize, root: u64, seed: u64) -> Result<Codebook> {
    if m_count < 2 || m_count > n + 1 {
        return Err(Error::InvalidCodebook(format!(
            "m_count = {m_count} outside the feasible range [2, {}]",
            n + 1
        )));
    }
    let z = zc_sequence(n, root)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codebook = build_codebook_with(&z, n, m_count, root, &mut rng)?;
    codebook.seed = Some(seed);
    Ok(codebook)
}

/// As [`build_codebook`] but drawing the shifts from a caller-supplied stream.
pub fn build_codebook_rng<R: Rng>(n: usize, m_count: usize, root: u64, rng: &mut R) -> Result<Codebook> {
    if m_count < 2 || m_count > n + 1 {
        return Err(Error::InvalidCodebook(format!(
            "m_count = {m_count} outside the feasible range [2, {}]",
            n + 1
        )));
    }
    let z = zc_sequence(n, root)?;
    build_codebook_with(&z, n, m_count, root, rng)
}

fn build_codebook_with<R: Rng>(
    z: &[C64],
    n: usize,
    m_count: usize,
    root: u64,
    rng: &mut R,
) -> Result<Codebook> {
    let shifts: Vec<usize> = sample_indices(rng, n, m_count - 1).into_vec();
    let mut vectors: Vec<Vec<C64>> = shifts
        .iter()
        .map(|&c| (0..n).map(|p| z[(p + c) % n]).collect())
        .collect();
    let mut probe = vectors[0].clone();
    for e in probe.iter_mut().skip(1) {
        *e = -*e;
    }
    vectors.push(probe);
    Ok(Codebook {
        vectors,
        kind: CodebookKind::ZcProbe { root, shifts },
        seed: None,
    })
}

/// Full `n`-beam DFT dictionary; vector `m` has entries `exp(-j 2 pi m p / n) / sqrt(n)`.
pub fn dft_codebook(n: usize) -> Codebook {
    let scale = 1.0 / (n as f64).sqrt();
    let vectors = (0..n)
        .map(|m| {
            (0..n)
                .map(|p| C64::from_polar(scale, -2.0 * PI * (m * p) as f64 / n as f64))
                .collect()
        })
        .collect();
    Codebook {
        vectors,
        kind: CodebookKind::Dft,
        seed: None,
    }
}

/// Pilot measurements for every subarray and every sounded TX antenna.
///
/// `y[k][li][m]` is the slot-`m` measurement of subarray `k` while TX antenna
/// `sounded_tx[li]` transmits (time-orthogonal pilots: one active antenna per
/// slot group, all subarrays measured in parallel).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub y: Vec<Vec<Vec<C64>>>,
    pub sounded_tx: Vec<usize>,
    pub noise_var: f64,
    pub codebooks: Vec<Codebook>,
    /// Filled by [`MeasurementSet::estimate_all_gains`]; `None` where flagged.
    pub gain_estimates: Vec<Vec<Option<C64>>>,
}

impl MeasurementSet {
    pub fn n_rf(&self) -> usize {
        self.codebooks.len()
    }

    fn slot_index(&self, l: usize) -> Result<usize> {
        self.sounded_tx
            .iter()
            .position(|&s| s == l)
            .ok_or_else(|| Error::InvalidCodebook(format!("TX antenna {l} was not sounded")))
    }

    /// Raw measurement vector for (subarray `k`, TX antenna `l`), both 0-based.
    pub fn measurements(&self, k: usize, l: usize) -> Result<&[C64]> {
        Ok(&self.y[k][self.slot_index(l)?])
    }

    /// Run [`estimate_gain`] for every (subarray, sounded antenna) pair and
    /// record the results; flagged pairs are stored as `None`.
    pub fn estimate_all_gains(&mut self) {
        self.gain_estimates = (0..self.n_rf())
            .map(|k| {
                self.sounded_tx
                    .iter()
                    .map(|&l| estimate_gain(self, k, l).ok().map(|g| g.alpha))
                    .collect()
            })
            .collect();
    }
}

fn complex_noise<R: Rng>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Effective noise variance for disabled noise, relative to the mean signal
/// power: keeps likelihoods finite while making them effectively exact.
const NOISELESS_SNR_DB: f64 = 300.0;

/// Acquire pilot measurements through the given per-subarray codebooks.
///
/// The noise variance is set per acquisition so that the stated SNR holds for
/// the first training beam on average over subarrays and sounded antennas:
/// `sigma^2 = mean |w_k[0]^H h_{k,l}|^2 / 10^(snr_db/10)`. An infinite
/// `snr_db` disables the noise draws entirely.
pub fn acquire<R: Rng>(
    channel: &ChannelMatrix,
    codebooks: &[Codebook],
    sounded_tx: &[usize],
    snr_db: f64,
    rng: &mut R,
) -> Result<MeasurementSet> {
    if sounded_tx.is_empty() {
        return Err(Error::EmptyInput("no sounded TX antennas".into()));
    }
    let n_rf = codebooks.len();
    if n_rf == 0 || channel.n_rx() % n_rf != 0 {
        return Err(Error::InvalidCodebook(format!(
            "channel rows {} not divisible into {} subarrays",
            channel.n_rx(),
            n_rf
        )));
    }
    let n = channel.n_rx() / n_rf;
    for cb in codebooks {
        if cb.n() != n {
            return Err(Error::InvalidCodebook(format!(
                "codebook length {} does not match subarray size {n}",
                cb.n()
            )));
        }
    }
    for &l in sounded_tx {
        if l >= channel.n_tx() {
            return Err(Error::InvalidCodebook(format!("sounded TX antenna {l} out of range")));
        }
    }

    // Reference signal power of the first beam, averaged over (k, l).
    let mut signal = 0.0;
    for (k, cb) in codebooks.iter().enumerate() {
        for &l in sounded_tx {
            let h = channel.subchannel(k, l, n);
            signal += cb.measure(0, &h).norm_sqr();
        }
    }
    signal /= (n_rf * sounded_tx.len()) as f64;

    let (noise_var, add_noise) = if snr_db.is_infinite() {
        (signal * 10f64.powf(-NOISELESS_SNR_DB / 10.0), false)
    } else {
        (signal * 10f64.powf(-snr_db / 10.0), true)
    };
    acquire_with_noise_var(channel, codebooks, sounded_tx, noise_var, add_noise, rng)
}

/// Acquire with an explicit noise variance (used by tests and diagnostics).
pub fn acquire_with_noise_var<R: Rng>(
    channel: &ChannelMatrix,
    codebooks: &[Codebook],
    sounded_tx: &[usize],
    noise_var: f64,
    add_noise: bool,
    rng: &mut R,
) -> Result<MeasurementSet> {
    let n_rf = codebooks.len();
    let n = channel.n_rx() / n_rf;
    let mut y = Vec::with_capacity(n_rf);
    for (k, cb) in codebooks.iter().enumerate() {
        let mut per_l = Vec::with_capacity(sounded_tx.len());
        for &l in sounded_tx {
            let h = channel.subchannel(k, l, n);
            let mut slots = Vec::with_capacity(cb.m_count());
            for m in 0..cb.m_count() {
                let mut v = cb.measure(m, &h);
                if add_noise {
                    v += complex_noise(rng, noise_var);
                }
                slots.push(v);
            }
            per_l.push(slots);
        }
        y.push(per_l);
    }
    Ok(MeasurementSet {
        y,
        sounded_tx: sounded_tx.to_vec(),
        noise_var,
        codebooks: codebooks.to_vec(),
        gain_estimates: vec![vec![None; sounded_tx.len()]; n_rf],
    })
}

/// Gain estimate plus the gain-compensated measurements derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct GainEstimate {
    /// Estimated complex subchannel gain (the first-antenna channel entry).
    pub alpha: C64,
    /// `y / alpha`.
    pub compensated: Vec<C64>,
    /// Noise variance of the compensated measurements, `sigma^2 / |alpha|^2`.
    pub noise_var: f64,
}

/// Estimate the complex gain of subchannel (subarray `k`, TX antenna `l`).
///
/// For ZC codebooks this uses the sign-flip probe: `y[0] + y[M-1]` isolates
/// `2 conj(eta) h[0]`, so `alpha = (y[0] + y[M-1]) / (2 conj(eta))`. For the
/// DFT dictionary the beam sum plays the same role: `alpha = sum(y) / sqrt(N)`.
/// Gains below [`GAIN_FLOOR`] are flagged so callers can skip the subarray.
pub fn estimate_gain(set: &MeasurementSet, k: usize, l: usize) -> Result<GainEstimate> {
    let y = set.measurements(k, l)?;
    let cb = &set.codebooks[k];
    let alpha = match cb.kind() {
        CodebookKind::ZcProbe { .. } => {
            (y[0] + y[cb.m_count() - 1]) / (2.0 * cb.eta().conj())
        }
        CodebookKind::Dft => y.iter().sum::<C64>() / (cb.n() as f64).sqrt(),
    };
    if alpha.norm() < GAIN_FLOOR {
        return Err(Error::NoUsableSignal {
            subarray: k,
            magnitude: alpha.norm(),
        });
    }
    let compensated = y.iter().map(|v| v / alpha).collect();
    Ok(GainEstimate {
        alpha,
        compensated,
        noise_var: set.noise_var / alpha.norm_sqr(),
    })
}
