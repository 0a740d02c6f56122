//! Local-AoA inference on a discrete angular grid.
//!
//! Each subarray contributes a scaled likelihood over the grid. Neighbouring
//! subarrays are coupled by geometry factors: conditional distributions of
//! one local AoA given the neighbour's, induced by pushing a uniform prior on
//! the TX distance through the planar two-subarray angle map. Sum-product
//! messages flow once forward and once backward along the subarray chain and
//! are combined with the likelihoods into per-subarray posteriors.
//!
//! All message arithmetic runs in the log domain with max-subtraction, and
//! marginalization uses the log-sum-exp form; the scaled likelihoods would
//! otherwise underflow long before they stop carrying information.

use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::steering_vector;
use crate::sounding::Codebook;
use crate::C64;

/// Linear-domain floor applied to belief masses so products stay defined.
pub const MASS_FLOOR: f64 = 1e-300;

/// Uniform discretization of the open interval (-pi/2, pi/2).
///
/// The step is exactly `kappa * pi` and the `ceil(1/kappa) - 1` points are
/// strictly inside the interval and symmetric about zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    kappa: f64,
    step: f64,
    points: Vec<f64>,
}

impl AngularGrid {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 0.5) {
            return Err(Error::InvalidGrid(format!("kappa = {kappa} outside (0, 0.5)")));
        }
        let inv = 1.0 / kappa;
        let rounded = inv.round();
        let cells = if (inv - rounded).abs() < 1e-9 * inv {
            rounded
        } else {
            inv.ceil()
        } as usize;
        if cells < 2 {
            return Err(Error::InvalidGrid("grid needs at least one interior point".into()));
        }
        let n_points = cells - 1;
        let step = kappa * PI;
        let points = (0..n_points)
            .map(|i| -PI / 2.0 + (i as f64 + 1.0) * step)
            .collect();
        Ok(Self { kappa, step, points })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Index of the grid point nearest to `theta`, clamped to the grid.
    pub fn nearest_index(&self, theta: f64) -> usize {
        let raw = (theta - self.points[0]) / self.step;
        let idx = raw.round();
        if idx <= 0.0 {
            0
        } else if idx >= (self.points.len() - 1) as f64 {
            self.points.len() - 1
        } else {
            idx as usize
        }
    }
}

/// What a belief vector represents in the message-passing pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeliefKind {
    Likelihood,
    ForwardIn,
    BackwardIn,
    Posterior,
}

/// Nonnegative mass over the angular grid, normalized to sum 1.
///
/// Only ratios and argmaxes matter downstream, so normalization after every
/// update is harmless and keeps the numbers printable.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    mass: Vec<f64>,
    kind: BeliefKind,
}

impl Belief {
    /// Build from raw nonnegative mass (zeros allowed, but not everywhere).
    pub fn from_mass(mass: Vec<f64>, kind: BeliefKind) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::EmptyInput("empty belief".into()));
        }
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidGrid("belief mass must be finite and nonnegative".into()));
        }
        let sum: f64 = mass.iter().sum();
        if sum <= 0.0 {
            return Err(Error::ContradictoryEvidence("belief has zero total mass".into()));
        }
        let mass = mass.into_iter().map(|m| m / sum).collect();
        Ok(Self { mass, kind })
    }

    /// Build from log-domain values: max-subtract, exponentiate, floor, normalize.
    pub fn from_log(log_mass: &[f64], kind: BeliefKind) -> Result<Self> {
        let max = log_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::ContradictoryEvidence(
                "all log-mass entries are -inf".into(),
            ));
        }
        let mass: Vec<f64> = log_mass
            .iter()
            .map(|&l| (l - max).exp().max(MASS_FLOOR))
            .collect();
        Self::from_mass(mass, kind)
    }

    /// Uniform belief over `n` grid points.
    pub fn uniform(n: usize, kind: BeliefKind) -> Self {
        Self {
            mass: vec![1.0 / n as f64; n],
            kind,
        }
    }

    pub fn kind(&self) -> BeliefKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn log_mass(&self) -> Vec<f64> {
        self.mass.iter().map(|&m| m.ln()).collect()
    }

    /// Index of the largest mass; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = i;
            }
        }
        best
    }
}

/// Far-field steering vectors evaluated at every grid point.
#[derive(Debug, Clone)]
pub struct SteeringBasis {
    n: usize,
    grid: AngularGrid,
    data: Vec<C64>,
}

impl SteeringBasis {
    pub fn new(grid: &AngularGrid, n: usize) -> Self {
        let mut data = Vec::with_capacity(grid.len() * n);
        for &theta in grid.points() {
            data.extend(steering_vector(theta, n));
        }
        Self {
            n,
            grid: grid.clone(),
            data,
        }
    }

    pub fn grid(&self) -> &AngularGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Steering vector at grid point `g`.
    pub fn row(&self, g: usize) -> &[C64] {
        &self.data[g * self.n..(g + 1) * self.n]
    }
}

/// Raw log-likelihood of each grid angle given gain-compensated measurements.
///
/// `log p(theta) = -|alpha|^2 ||y_comp - A a(theta)||^2 / noise_var`; a zero
/// residual therefore gives exactly 0 (a unit unnormalized peak).
pub fn log_likelihood(
    y_comp: &[C64],
    codebook: &Codebook,
    alpha: C64,
    noise_var: f64,
    basis: &SteeringBasis,
) -> Vec<f64> {
    assert!(noise_var > 0.0, "noise variance must be positive");
    assert_eq!(y_comp.len(), codebook.m_count(), "measurement count mismatch");
    assert_eq!(codebook.n(), basis.n(), "codebook/basis size mismatch");
    let scale = alpha.norm_sqr() / noise_var;
    (0..basis.grid.len())
        .map(|g| {
            let a = basis.row(g);
            let mut res = 0.0;
            for m in 0..codebook.m_count() {
                let pred = crate::sounding::beamform(codebook.vector(m), a);
                res += (y_comp[m] - pred).norm_sqr();
            }
            -scale * res
        })
        .collect()
}

/// Normalized likelihood belief; see [`log_likelihood`].
pub fn likelihood(
    y_comp: &[C64],
    codebook: &Codebook,
    alpha: C64,
    noise_var: f64,
    basis: &SteeringBasis,
) -> Result<Belief> {
    Belief::from_log(
        &log_likelihood(y_comp, codebook, alpha, noise_var, basis),
        BeliefKind::Likelihood,
    )
}

/// Planar neighbour-angle map.
///
/// Given the local AoA at a subarray with signed offset `s_prev` and the
/// distance `r1` from the TX antenna to the array midpoint, solves the
/// quadratic for the subarray-to-TX distance and returns the local AoA at the
/// subarray with offset `s_next`. The solution is unique for `r1 > |s_prev|`.
pub fn geometry_map(theta_prev: f64, r1: f64, s_prev: f64, s_next: f64) -> Result<f64> {
    let (sin_t, cos_t) = theta_prev.sin_cos();
    let disc = r1 * r1 - s_prev * s_prev * cos_t * cos_t;
    if disc <= 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "no TX position at distance {r1} compatible with offset {s_prev}"
        )));
    }
    let r_sub = -s_prev * sin_t + disc.sqrt();
    if r_sub <= 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "nonpositive subarray distance for r1 = {r1}, offset {s_prev}"
        )));
    }
    Ok((s_prev - s_next + r_sub * sin_t).atan2(r_sub * cos_t))
}

/// Direction of a geometry factor along the subarray chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Conditions on subarray `k`, emits `k + 1`.
    Forward,
    /// Conditions on subarray `k + 1`, emits `k`.
    Backward,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::Config(format!("unknown direction `{other}`"))),
        }
    }
}

/// Construction parameters recorded alongside a factor table.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMeta {
    pub kappa: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub l_tx: f64,
    /// Offset of the conditioning subarray.
    pub s_cond: f64,
    /// Offset of the destination subarray.
    pub s_dest: f64,
    pub n_r_samples: usize,
    pub smoothing: f64,
}

/// Discretized conditional distribution `g(theta_dest | theta_cond)`.
///
/// Row `i` conditions on grid angle `i` and is a probability vector over the
/// destination angle, except for geometrically impossible rows which carry
/// zero mass and are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryFactorTable {
    g: usize,
    data: Vec<f64>,
    pair: usize,
    direction: Direction,
    meta: FactorMeta,
    impossible_rows: Vec<usize>,
}

impl GeometryFactorTable {
    /// Wrap a raw row-stochastic matrix (row-major, `g * g` entries).
    pub fn from_rows(
        g: usize,
        data: Vec<f64>,
        pair: usize,
        direction: Direction,
        meta: FactorMeta,
    ) -> Result<Self> {
        if data.len() != g * g {
            return Err(Error::InvalidGrid(format!(
                "factor table has {} entries, expected {}",
                data.len(),
                g * g
            )));
        }
        let mut impossible_rows = Vec::new();
        for r in 0..g {
            let row = &data[r * g..(r + 1) * g];
            if row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::InvalidGrid(format!("negative mass in row {r}")));
            }
            let sum: f64 = row.iter().sum();
            if sum == 0.0 {
                impossible_rows.push(r);
            } else if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidGrid(format!(
                    "row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self {
            g,
            data,
            pair,
            direction,
            meta,
            impossible_rows,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.g
    }

    pub fn pair(&self) -> usize {
        self.pair
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn meta(&self) -> &FactorMeta {
        &self.meta
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.g..(r + 1) * self.g]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rows whose conditioning angle admits no TX position in the distance prior.
    pub fn impossible_rows(&self) -> &[usize] {
        &self.impossible_rows
    }
}

/// Build one geometry factor table by histogramming the angle-map pushforward.
///
/// For each conditioning angle, `n_r_samples` stratified TX-antenna distances
/// spanning `[r_min - l_tx/2, r_max + l_tx/2]` are pushed through
/// [`geometry_map`] and accumulated into nearest grid bins; `smoothing` is
/// added to every cell before row normalization so no feasible row carries an
/// exact zero. Rows where every sample is geometrically impossible stay zero
/// and are flagged rather than erroring.
#[allow(clippy::too_many_arguments)]
pub fn build_factor_table(
    grid: &AngularGrid,
    s_cond: f64,
    s_dest: f64,
    r_min: f64,
    r_max: f64,
    l_tx: f64,
    n_r_samples: usize,
    smoothing: f64,
    pair: usize,
    direction: Direction,
) -> Result<GeometryFactorTable> {
    if n_r_samples < 2 {
        return Err(Error::InvalidGrid("need at least 2 distance samples".into()));
    }
    if !(smoothing >= 0.0) {
        return Err(Error::InvalidGrid("smoothing must be nonnegative".into()));
    }
    let g = grid.len();
    let lo = r_min - l_tx / 2.0;
    let hi = r_max + l_tx / 2.0;
    if !(lo > 0.0) || hi < lo {
        return Err(Error::InvalidGrid(format!(
            "invalid TX distance interval [{lo}, {hi}]"
        )));
    }
    let width = hi - lo;
    let rows: Vec<Vec<f64>> = grid
        .points()
        .par_iter()
        .map(|&theta_cond| {
            let mut counts = vec![0.0f64; g];
            let mut hits = 0usize;
            for t in 0..n_r_samples {
                let r1 = lo + (t as f64 + 0.5) / n_r_samples as f64 * width;
                if let Ok(theta_dest) = geometry_map(theta_cond, r1, s_cond, s_dest) {
                    counts[grid.nearest_index(theta_dest)] += 1.0;
                    hits += 1;
                }
            }
            if hits == 0 {
                return counts; // impossible row, left all-zero
            }
            for c in counts.iter_mut() {
                *c += smoothing;
            }
            let sum: f64 = counts.iter().sum();
            for c in counts.iter_mut() {
                *c /= sum;
            }
            counts
        })
        .collect();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    GeometryFactorTable::from_rows(
        g,
        data,
        pair,
        direction,
        FactorMeta {
            kappa: grid.kappa(),
            r_min,
            r_max,
            l_tx,
            s_cond,
            s_dest,
            n_r_samples,
            smoothing,
        },
    )
}

/// Forward and backward factor tables for every adjacent subarray pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTableSet {
    pub forward: Vec<GeometryFactorTable>,
    pub backward: Vec<GeometryFactorTable>,
}

impl FactorTableSet {
    pub fn n_pairs(&self) -> usize {
        self.forward.len()
    }
}

/// Build the full table set for a chain of subarrays at the given offsets.
pub fn build_factor_tables(
    grid: &AngularGrid,
    offsets: &[f64],
    r_min: f64,
    r_max: f64,
    l_tx: f64,
    n_r_samples: usize,
    smoothing: f64,
) -> Result<FactorTableSet> {
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    for pair in 0..offsets.len().saturating_sub(1) {
        forward.push(build_factor_table(
            grid,
            offsets[pair],
            offsets[pair + 1],
            r_min,
            r_max,
            l_tx,
            n_r_samples,
            smoothing,
            pair,
            Direction::Forward,
        )?);
        backward.push(build_factor_table(
            grid,
            offsets[pair + 1],
            offsets[pair],
            r_min,
            r_max,
            l_tx,
            n_r_samples,
            smoothing,
            pair,
            Direction::Backward,
        )?);
    }
    Ok(FactorTableSet { forward, backward })
}

/// Log-domain marginalization step: `out[c] = log sum_r exp(log_msg[r]) T[r][c] * step`.
///
/// Implemented as max-subtraction followed by a linear matrix-vector product,
/// which is the log-sum-exp form evaluated without per-entry exponentials.
fn lse_matvec(table: &GeometryFactorTable, log_msg: &[f64], step: f64) -> Result<Vec<f64>> {
    let g = table.grid_size();
    assert_eq!(log_msg.len(), g, "message/table size mismatch");
    let max = log_msg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::MessageCollapsed(
            "incoming message has no finite mass".into(),
        ));
    }
    let mut acc = vec![0.0f64; g];
    for r in 0..g {
        let w = (log_msg[r] - max).exp();
        if w <= 0.0 {
            continue;
        }
        let row = table.row(r);
        for (a, t) in acc.iter_mut().zip(row.iter()) {
            *a += w * t;
        }
    }
    if acc.iter().all(|&a| a <= 0.0) {
        return Err(Error::MessageCollapsed(format!(
            "marginalization through pair {} ({}) produced zero mass everywhere",
            table.pair(),
            table.direction().as_str()
        )));
    }
    let log_step = step.ln();
    Ok(acc.into_iter().map(|a| a.ln() + max + log_step).collect())
}

fn check_chain(likelihoods: &[Belief], tables: &[GeometryFactorTable], grid: &AngularGrid) -> Result<()> {
    if likelihoods.is_empty() {
        return Err(Error::EmptyInput("no likelihoods".into()));
    }
    if tables.len() + 1 != likelihoods.len() {
        return Err(Error::InvalidGrid(format!(
            "{} likelihoods need {} tables, got {}",
            likelihoods.len(),
            likelihoods.len() - 1,
            tables.len()
        )));
    }
    for b in likelihoods {
        if b.len() != grid.len() {
            return Err(Error::InvalidGrid("likelihood length != grid size".into()));
        }
    }
    for t in tables {
        if t.grid_size() != grid.len() {
            return Err(Error::InvalidGrid("table size != grid size".into()));
        }
    }
    Ok(())
}

/// Forward sum-product pass; returns the incoming belief at every subarray.
///
/// The first subarray receives a uniform prior; thereafter
/// `in(k) = sum_prev p(prev) * in(prev) * g(k | prev) * step`, normalized at
/// every step.
pub fn forward_pass(
    likelihoods: &[Belief],
    forward_tables: &[GeometryFactorTable],
    grid: &AngularGrid,
) -> Result<Vec<Belief>> {
    check_chain(likelihoods, forward_tables, grid)?;
    let n = likelihoods.len();
    let mut result = Vec::with_capacity(n);
    let mut incoming = Belief::uniform(grid.len(), BeliefKind::ForwardIn);
    result.push(incoming.clone());
    for k in 1..n {
        let log_out: Vec<f64> = likelihoods[k - 1]
            .mass()
            .iter()
            .zip(incoming.mass().iter())
            .map(|(&p, &q)| p.ln() + q.ln())
            .collect();
        let log_in = lse_matvec(&forward_tables[k - 1], &log_out, grid.step())?;
        incoming = Belief::from_log(&log_in, BeliefKind::ForwardIn)?;
        result.push(incoming.clone());
    }
    Ok(result)
}

/// Backward sum-product pass, the mirror image of [`forward_pass`].
pub fn backward_pass(
    likelihoods: &[Belief],
    backward_tables: &[GeometryFactorTable],
    grid: &AngularGrid,
) -> Result<Vec<Belief>> {
    check_chain(likelihoods, backward_tables, grid)?;
    let n = likelihoods.len();
    let mut result = vec![Belief::uniform(grid.len(), BeliefKind::BackwardIn); n];
    let mut incoming = result[n - 1].clone();
    for k in (1..n).rev() {
        let log_out: Vec<f64> = likelihoods[k]
            .mass()
            .iter()
            .zip(incoming.mass().iter())
            .map(|(&p, &q)| p.ln() + q.ln())
            .collect();
        let log_in = lse_matvec(&backward_tables[k - 1], &log_out, grid.step())?;
        incoming = Belief::from_log(&log_in, BeliefKind::BackwardIn)?;
        result[k - 1] = incoming.clone();
    }
    Ok(result)
}

/// Combine likelihood and both side-information beliefs; return the posterior
/// and the AoA estimate (argmax, lowest grid index on ties) per subarray.
pub fn combine_and_estimate(
    likelihoods: &[Belief],
    fwd_in: &[Belief],
    bwd_in: &[Belief],
    grid: &AngularGrid,
) -> Result<Vec<(Belief, f64)>> {
    if likelihoods.len() != fwd_in.len() || likelihoods.len() != bwd_in.len() {
        return Err(Error::InvalidGrid("belief list length mismatch".into()));
    }
    likelihoods
        .iter()
        .zip(fwd_in.iter().zip(bwd_in.iter()))
        .enumerate()
        .map(|(k, (p, (f, b)))| {
            let log_post: Vec<f64> = (0..grid.len())
                .map(|i| p.mass()[i].ln() + f.mass()[i].ln() + b.mass()[i].ln())
                .collect();
            let posterior = Belief::from_log(&log_post, BeliefKind::Posterior).map_err(|_| {
                Error::ContradictoryEvidence(format!(
                    "posterior for subarray {k} has zero mass everywhere"
                ))
            })?;
            let theta = grid.point(posterior.argmax());
            Ok((posterior, theta))
        })
        .collect()
}

/// Independent per-subarray maximum-likelihood estimates.
pub fn ml_estimate(likelihoods: &[Belief], grid: &AngularGrid) -> Vec<f64> {
    likelihoods
        .iter()
        .map(|p| grid.point(p.argmax()))
        .collect()
}

/// Result of one full geometry-aided message-passing run.
#[derive(Debug, Clone)]
pub struct GmpResult {
    pub fwd_in: Vec<Belief>,
    pub bwd_in: Vec<Belief>,
    pub posteriors: Vec<Belief>,
    pub estimates: Vec<f64>,
}

/// Run forward pass, backward pass and the combination step.
pub fn run_gmp(
    likelihoods: &[Belief],
    tables: &FactorTableSet,
    grid: &AngularGrid,
) -> Result<GmpResult> {
    let fwd_in = forward_pass(likelihoods, &tables.forward, grid)?;
    let bwd_in = backward_pass(likelihoods, &tables.backward, grid)?;
    let combined = combine_and_estimate(likelihoods, &fwd_in, &bwd_in, grid)?;
    let (posteriors, estimates) = combined.into_iter().unzip();
    Ok(GmpResult {
        fwd_in,
        bwd_in,
        posteriors,
        estimates,
    })
}
