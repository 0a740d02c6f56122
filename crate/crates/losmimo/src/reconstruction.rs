//! Channel reconstruction from per-subarray AoA estimates.
//!
//! Each subarray midpoint plus its estimated local AoA defines a bearing ray
//! toward a TX antenna. The two outermost TX antennas are triangulated
//! independently, the remaining TX antennas are interpolated along the
//! estimated segment, and the full channel is rebuilt from the spherical-wave
//! kernel on the estimated coordinates. Reconstructions are scored by the
//! achievable rate of SVD precoding computed against the true channel.

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};
use crate::geometry::{channel_from_positions, ArrayLayout, ChannelMatrix};
use crate::{C64, Vec2};

/// Counter-clockwise rotation by `delta` radians.
pub fn rotation(delta: f64) -> Matrix2<f64> {
    let (s, c) = delta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// A ray from a subarray midpoint toward a TX antenna.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing {
    /// Subarray midpoint, in the RX frame.
    pub origin: Vec2,
    /// Unit direction toward the transmitter.
    pub direction: Vec2,
}

impl Bearing {
    pub fn new(origin: Vec2, direction: Vec2) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateBearings("zero-length direction".into()));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    /// Bearing from a midpoint at signed offset `s_k` along the array axis,
    /// at local AoA `theta` (RX-frame convention: angle from the normal,
    /// positive toward `+s`).
    pub fn from_local_aoa(s_k: f64, theta: f64) -> Self {
        Self {
            origin: Vec2::new(s_k, 0.0),
            direction: Vec2::new(theta.sin(), theta.cos()),
        }
    }
}

/// Least-squares intersection point of bearing rays.
///
/// Minimizes the sum of squared perpendicular distances to the ray lines via
/// the 2x2 normal equations; exact for consistent bearings. Returns the point
/// and the RMS perpendicular distance as a residual diagnostic.
pub fn triangulate(bearings: &[Bearing]) -> Result<(Vec2, f64)> {
    if bearings.len() < 2 {
        return Err(Error::DegenerateBearings(format!(
            "need at least 2 bearings, got {}",
            bearings.len()
        )));
    }
    let mut a = Matrix2::zeros();
    let mut b = Vec2::zeros();
    for bearing in bearings {
        let d = bearing.direction;
        // Projector onto the ray's perpendicular complement.
        let proj = Matrix2::identity() - d * d.transpose();
        a += proj;
        b += proj * bearing.origin;
    }
    // The normal matrix is singular exactly when all bearings are parallel.
    let det = a.determinant();
    if det.abs() <= 1e-12 * a.trace().powi(2).max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateBearings(
            "all bearings are parallel; the normal equations are rank-deficient".into(),
        ));
    }
    let point = a
        .try_inverse()
        .ok_or_else(|| Error::DegenerateBearings("normal equations not invertible".into()))?
        * b;
    let mut sq = 0.0;
    for bearing in bearings {
        let d = bearing.direction;
        let r = point - bearing.origin;
        let perp = r - d * r.dot(&d);
        sq += perp.norm_squared();
    }
    let residual = (sq / bearings.len() as f64).sqrt();
    Ok((point, residual))
}

/// Triangulate the first and last TX antennas from their bearing sets.
pub fn tx_endpoints(
    bearings_first: &[Bearing],
    bearings_last: &[Bearing],
) -> Result<(Vec2, Vec2)> {
    let (q_first, _) = triangulate(bearings_first)?;
    let (q_last, _) = triangulate(bearings_last)?;
    Ok((q_first, q_last))
}

/// TX antenna positions interpolated along the estimated endpoint segment.
///
/// The nominal uniform spacing is rescaled to the estimated endpoint
/// separation, keeping the estimated geometry self-consistent.
pub fn interpolate_tx_positions(q_first: Vec2, q_last: Vec2, n_tx: usize) -> Result<Vec<Vec2>> {
    if n_tx == 0 {
        return Err(Error::InvalidGeometry("no TX antennas".into()));
    }
    if n_tx == 1 {
        return Ok(vec![q_first]);
    }
    if (q_last - q_first).norm() == 0.0 {
        return Err(Error::InvalidGeometry(
            "coincident TX endpoint estimates".into(),
        ));
    }
    Ok((0..n_tx)
        .map(|l| q_first + (q_last - q_first) * (l as f64 / (n_tx as f64 - 1.0)))
        .collect())
}

/// Rebuild the LoS channel from estimated TX endpoints and known RX positions.
pub fn rebuild_channel(
    q_first: Vec2,
    q_last: Vec2,
    layout: &ArrayLayout,
    rx_positions: &[Vec2],
) -> Result<ChannelMatrix> {
    let tx = interpolate_tx_positions(q_first, q_last, layout.n_tx)?;
    channel_from_positions(rx_positions, &tx, layout.wavelength)
}

/// Achievable rate of a precoding scheme, bits/s/Hz, with the method label
/// that produced the channel estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub rate: f64,
    pub snr_db: f64,
    pub method: String,
}

/// Water-filling power allocation over parallel channels with unit noise.
///
/// Returns the per-channel powers and the capacity `sum log2(1 + p_i g_i)`.
pub fn water_fill(gains: &[f64], total_power: f64) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].partial_cmp(&gains[a]).unwrap());
    let mut powers = vec![0.0; gains.len()];
    if order.is_empty() || total_power <= 0.0 {
        return (powers, 0.0);
    }
    // Highest water level whose active set is self-consistent.
    let mut active = order.len();
    let mut level = 0.0;
    while active > 0 {
        let inv_sum: f64 = order[..active].iter().map(|&i| 1.0 / gains[i]).sum();
        level = (total_power + inv_sum) / active as f64;
        if level > 1.0 / gains[order[active - 1]] {
            break;
        }
        active -= 1;
    }
    let mut capacity = 0.0;
    for &i in &order[..active] {
        powers[i] = level - 1.0 / gains[i];
        capacity += (level * gains[i]).log2();
    }
    (powers, capacity)
}

/// Achievable rate of SVD precoding configured from an estimated channel.
///
/// The estimated channel's singular vectors are applied to the true channel;
/// the rate is the water-filled capacity of the resulting effective channel,
/// truncated to `n_streams`. The total transmit power is normalized so that
/// the mean per-entry received SNR of the true channel equals `snr_db`, which
/// ties the budget to the midpoint path gain and keeps the rate invariant
/// under rigid transforms.
pub fn achievable_rate(
    true_channel: &ChannelMatrix,
    est_channel: &ChannelMatrix,
    snr_db: f64,
    n_streams: usize,
    method: &str,
) -> Result<RatePoint> {
    let (n_rx, n_tx) = (true_channel.n_rx(), true_channel.n_tx());
    if est_channel.n_rx() != n_rx || est_channel.n_tx() != n_tx {
        return Err(Error::InvalidGeometry(
            "channel dimension mismatch between truth and estimate".into(),
        ));
    }
    if n_streams == 0 || n_streams > n_rx.min(n_tx) {
        return Err(Error::InvalidGeometry(format!(
            "n_streams = {n_streams} outside [1, {}]",
            n_rx.min(n_tx)
        )));
    }

    let g_ref = true_channel
        .matrix()
        .iter()
        .map(|e| e.norm_sqr())
        .sum::<f64>()
        / (n_rx * n_tx) as f64;
    if g_ref <= 0.0 {
        return Err(Error::InvalidGeometry("true channel has zero energy".into()));
    }
    let total_power = 10f64.powf(snr_db / 10.0) / g_ref;

    let svd = est_channel.matrix().clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let u_s = u.columns(0, n_streams);
    let v_s = v_t.rows(0, n_streams).adjoint();
    let h_eff: DMatrix<C64> = u_s.adjoint() * true_channel.matrix() * v_s;

    let eff_singulars = h_eff.svd(false, false).singular_values;
    let gains: Vec<f64> = eff_singulars.iter().map(|s| s * s).collect();
    let (_, rate) = water_fill(&gains, total_power);
    Ok(RatePoint {
        rate,
        snr_db,
        method: method.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{los_channel, rx_antenna_positions, true_local_aoa, Pose, Scenario};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn rotation_basics() {
        let r = rotation(0.0);
        assert!((r - Matrix2::identity()).norm() < 1e-15);
        let v = rotation(PI / 2.0) * Vec2::new(1.0, 0.0);
        assert!((v - Vec2::new(0.0, 1.0)).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = rng.random_range(-PI..PI);
            let b = rng.random_range(-PI..PI);
            assert!((rotation(a) * rotation(b) - rotation(a + b)).norm() < 1e-12);
            assert!((rotation(a).determinant() - 1.0).abs() < 1e-14);
            assert!((rotation(a).transpose() * rotation(a) - Matrix2::identity()).norm() < 1e-14);
        }
    }

    fn exact_bearings(target: Vec2, offsets: &[f64]) -> Vec<Bearing> {
        offsets
            .iter()
            .map(|&s| {
                let theta = (target.x - s).atan2(target.y);
                Bearing::from_local_aoa(s, theta)
            })
            .collect()
    }

    const PAPER_OFFSETS: [f64; 4] = [0.07125, 0.02375, -0.02375, -0.07125];

    #[test]
    fn triangulate_two_exact_bearings() {
        let target = Vec2::new(0.12, 0.61);
        let bearings = exact_bearings(target, &[0.07125, -0.07125]);
        let (p, res) = triangulate(&bearings).unwrap();
        assert!((p - target).norm() < 1e-9);
        assert!(res < 1e-9);
    }

    #[test]
    fn triangulate_paper_layout_exact() {
        let target = Vec2::new(0.40, 0.10);
        let bearings = exact_bearings(target, &PAPER_OFFSETS);
        let (p, res) = triangulate(&bearings).unwrap();
        assert!((p - target).norm() < 1e-9, "error {}", (p - target).norm());
        assert!(res < 1e-9);
    }

    #[test]
    fn triangulate_rejects_parallel_bearings() {
        let bearings: Vec<Bearing> = PAPER_OFFSETS
            .iter()
            .map(|&s| Bearing::from_local_aoa(s, 0.2))
            .collect();
        match triangulate(&bearings) {
            Err(Error::DegenerateBearings(_)) => {}
            other => panic!("expected degenerate bearings, got {other:?}"),
        }
    }

    #[test]
    fn triangulate_one_grid_step_sensitivity() {
        // One-grid-step (0.125 deg) perturbations of exact bearings at 0.6 m.
        // The lateral error stays within a beam width (d * eps, about 1.3 mm);
        // the radial error is amplified by the distance-to-baseline ratio, so
        // the worst-case total error over all sign patterns is centimeter
        // scale. Both bounds frozen from this enumeration.
        let target = Vec2::new(0.0, 0.6);
        let eps = 0.125_f64.to_radians();
        let exact = exact_bearings(target, &PAPER_OFFSETS);
        let mut worst_total: f64 = 0.0;
        let mut worst_lateral: f64 = 0.0;
        for pattern in 0..16u32 {
            let bearings: Vec<Bearing> = exact
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let sign = if pattern & (1 << i) != 0 { 1.0 } else { -1.0 };
                    let theta = b.direction.x.atan2(b.direction.y) + sign * eps;
                    Bearing::from_local_aoa(b.origin.x, theta)
                })
                .collect();
            let (p, _) = triangulate(&bearings).unwrap();
            worst_total = worst_total.max((p - target).norm());
            worst_lateral = worst_lateral.max((p.x - target.x).abs());
        }
        assert!(
            worst_lateral <= 2.5e-3,
            "lateral error {worst_lateral} m exceeds 2.5 mm"
        );
        assert!(
            worst_total <= 2.0e-2,
            "total error {worst_total} m exceeds frozen bound"
        );
    }

    #[test]
    fn endpoints_exact_and_consistent_with_rotation_formula() {
        let layout = ArrayLayout::paper();
        let offsets = layout.subarray_offsets();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let tx = Pose::new(Vec2::new(0.17, 0.53), 2.1);
        let sc = Scenario::new(layout.clone(), tx, rx, 0.4, 0.8).unwrap();
        let tx_true: Vec<Vec2> = crate::geometry::tx_antenna_positions(&sc)
            .into_iter()
            .map(|p| sc.rx_pose.to_local(p))
            .collect();

        let bearings_first = exact_bearings(tx_true[0], &offsets);
        let bearings_last = exact_bearings(tx_true[3], &offsets);
        let (q1, q4) = tx_endpoints(&bearings_first, &bearings_last).unwrap();
        assert!((q1 - tx_true[0]).norm() < 1e-9);
        assert!((q4 - tx_true[3]).norm() < 1e-9);
        assert!(((q1 - q4).norm() - layout.l_tx()).abs() < 1e-9);

        // q1 = s1 + r11 R(pi/2 - theta1) s, with r11 the distance from the
        // triangulated point to the first subarray midpoint.
        let s1 = Vec2::new(offsets[0], 0.0);
        let s_axis = Vec2::new(1.0, 0.0);
        let theta1 = true_local_aoa(&sc, 0, 0);
        let r11 = (q1 - s1).norm();
        let q1_formula = s1 + rotation(PI / 2.0 - theta1) * s_axis * r11;
        assert!((q1 - q1_formula).norm() < 1e-9);
    }

    #[test]
    fn rebuild_exact_endpoints_reproduces_channel() {
        let layout = ArrayLayout::paper();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let tx = Pose::new(Vec2::new(-0.08, 0.47), 0.9);
        let sc = Scenario::new(layout.clone(), tx, rx, 0.4, 0.8).unwrap();
        let truth = los_channel(&sc).unwrap();
        let tx_local: Vec<Vec2> = crate::geometry::tx_antenna_positions(&sc)
            .into_iter()
            .map(|p| sc.rx_pose.to_local(p))
            .collect();
        let rx_local: Vec<Vec2> = rx_antenna_positions(&sc)
            .0
            .into_iter()
            .map(|p| sc.rx_pose.to_local(p))
            .collect();
        let rebuilt = rebuild_channel(tx_local[0], tx_local[3], &layout, &rx_local).unwrap();
        for j in 0..truth.n_tx() {
            for i in 0..truth.n_rx() {
                let t = truth.entry(i, j);
                let r = rebuilt.entry(i, j);
                assert!(
                    (t - r).norm() <= 1e-6 * t.norm(),
                    "entry ({i},{j}): {t} vs {r}"
                );
            }
        }
    }

    #[test]
    fn rebuild_two_antennas_uses_only_endpoints() {
        let layout = ArrayLayout::new(4, 16, 0.005, 0.0475, 2, 0.0133).unwrap();
        let rx_local: Vec<Vec2> = layout
            .rx_antenna_offsets()
            .into_iter()
            .map(|x| Vec2::new(x, 0.0))
            .collect();
        let q1 = Vec2::new(0.1, 0.5);
        let q2 = Vec2::new(0.12, 0.51);
        let h = rebuild_channel(q1, q2, &layout, &rx_local).unwrap();
        let direct = channel_from_positions(&rx_local, &[q1, q2], 0.005).unwrap();
        assert_eq!(h.max_abs_diff(&direct), 0.0);
    }

    #[test]
    fn rebuild_rejects_coincident_endpoints() {
        let layout = ArrayLayout::paper();
        let rx_local: Vec<Vec2> = layout
            .rx_antenna_offsets()
            .into_iter()
            .map(|x| Vec2::new(x, 0.0))
            .collect();
        let q = Vec2::new(0.1, 0.5);
        assert!(rebuild_channel(q, q, &layout, &rx_local).is_err());
    }

    #[test]
    fn millimeter_endpoint_error_scrambles_phases() {
        // 2.5 mm at a 5 mm wavelength is half a cycle: entrywise phase is not
        // a meaningful fidelity metric for reconstructions, the rate is.
        let layout = ArrayLayout::paper();
        let rx_local: Vec<Vec2> = layout
            .rx_antenna_offsets()
            .into_iter()
            .map(|x| Vec2::new(x, 0.0))
            .collect();
        let q1 = Vec2::new(0.05, 0.55);
        let q4 = q1 + Vec2::new(0.03, -0.026);
        let exact = rebuild_channel(q1, q4, &layout, &rx_local).unwrap();
        let shifted = rebuild_channel(
            q1 + Vec2::new(0.0, 2.5e-3),
            q4 + Vec2::new(0.0, 2.5e-3),
            &layout,
            &rx_local,
        )
        .unwrap();
        let max_phase_err = (0..exact.n_rx())
            .flat_map(|i| (0..exact.n_tx()).map(move |j| (i, j)))
            .map(|(i, j)| (exact.entry(i, j) / shifted.entry(i, j)).arg().abs())
            .fold(0.0f64, f64::max);
        assert!(
            max_phase_err > 1.0,
            "expected phase scrambling, got max {max_phase_err} rad"
        );
    }

    /// Test-local water-filling oracle: bisection on the water level.
    fn bisect_water_fill(gains: &[f64], total_power: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, total_power + gains.iter().map(|g| 1.0 / g).sum::<f64>());
        for _ in 0..200 {
            let level = 0.5 * (lo + hi);
            let used: f64 = gains.iter().map(|&g| (level - 1.0 / g).max(0.0)).sum();
            if used > total_power {
                hi = level;
            } else {
                lo = level;
            }
        }
        gains
            .iter()
            .map(|&g| {
                let p = (lo - 1.0 / g).max(0.0);
                (1.0 + p * g).log2()
            })
            .sum()
    }

    #[test]
    fn water_fill_matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(1..6);
            let gains: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..10.0)).collect();
            let p = rng.random_range(0.1..100.0);
            let (powers, cap) = water_fill(&gains, p);
            let cap_oracle = bisect_water_fill(&gains, p);
            assert!((cap - cap_oracle).abs() < 1e-9, "{cap} vs {cap_oracle}");
            let total: f64 = powers.iter().sum();
            assert!((total - p).abs() < 1e-9);
            assert!(powers.iter().all(|&x| x >= 0.0));
        }
    }

    fn random_channel(n_rx: usize, n_tx: usize, rng: &mut ChaCha8Rng) -> ChannelMatrix {
        let data: Vec<C64> = (0..n_rx * n_tx)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-4)
            .collect();
        ChannelMatrix::from_matrix(DMatrix::from_vec(n_rx, n_tx, data))
    }

    #[test]
    fn perfect_csi_rate_matches_eigenvalue_oracle() {
        let layout = ArrayLayout::paper();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let tx = Pose::new(Vec2::new(0.2, 0.5), 1.8);
        let sc = Scenario::new(layout, tx, rx, 0.4, 0.8).unwrap();
        let h = los_channel(&sc).unwrap();
        let rate = achievable_rate(&h, &h, 10.0, 4, "perfect").unwrap();
        assert_eq!(rate.method, "perfect");
        assert_eq!(rate.snr_db, 10.0);

        // Oracle: gains from the Hermitian eigenvalues of H^H H, water level
        // by bisection. Different decomposition route than the SVD path.
        let gram = h.matrix().adjoint() * h.matrix();
        let eig = gram.symmetric_eigen();
        let gains: Vec<f64> = eig.eigenvalues.iter().map(|&e| e.max(0.0)).collect();
        let g_ref = h.matrix().iter().map(|e| e.norm_sqr()).sum::<f64>() / 256.0;
        let cap = bisect_water_fill(&gains, 10f64.powf(1.0) / g_ref);
        assert!(
            (rate.rate - cap).abs() < 1e-6 * cap,
            "{} vs oracle {}",
            rate.rate,
            cap
        );
    }

    #[test]
    fn mismatched_precoders_never_beat_perfect_csi() {
        let layout = ArrayLayout::paper();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let tx = Pose::new(Vec2::new(0.2, 0.5), 1.8);
        let sc = Scenario::new(layout, tx, rx, 0.4, 0.8).unwrap();
        let h = los_channel(&sc).unwrap();
        let perfect = achievable_rate(&h, &h, 10.0, 4, "perfect").unwrap().rate;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let est = random_channel(64, 4, &mut rng);
            let r = achievable_rate(&h, &est, 10.0, 4, "random").unwrap().rate;
            assert!(
                r <= perfect * (1.0 + 1e-12),
                "random precoder rate {r} exceeds perfect {perfect}"
            );
            assert!(r >= 0.0);
        }
    }

    #[test]
    fn rate_invariant_under_rigid_transform_of_both() {
        // The rate depends on the channel only through distances, and the
        // power normalization is self-referential, so rigidly moving both
        // arrays leaves every rate unchanged.
        let layout = ArrayLayout::paper();
        let rx1 = Pose::new(Vec2::zeros(), 0.0);
        let tx1 = Pose::new(Vec2::new(0.2, 0.5), 1.8);
        let sc1 = Scenario::new(layout.clone(), tx1, rx1, 0.4, 0.8).unwrap();
        let rx2 = Pose::new(Vec2::new(5.0, -2.0), 1.1);
        let tx2 = Pose::new(
            rx2.to_world(rx1.to_local(tx1.center)),
            tx1.heading + 1.1,
        );
        let sc2 = Scenario::new(layout, tx2, rx2, 0.4, 0.8).unwrap();
        let h1 = los_channel(&sc1).unwrap();
        let h2 = los_channel(&sc2).unwrap();
        let r1 = achievable_rate(&h1, &h1, 10.0, 4, "perfect").unwrap().rate;
        let r2 = achievable_rate(&h2, &h2, 10.0, 4, "perfect").unwrap().rate;
        assert!((r1 - r2).abs() < 1e-9 * r1);
    }

    #[test]
    fn rate_rejects_bad_stream_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_channel(8, 4, &mut rng);
        assert!(achievable_rate(&h, &h, 10.0, 0, "x").is_err());
        assert!(achievable_rate(&h, &h, 10.0, 5, "x").is_err());
        assert!(achievable_rate(&h, &h, 10.0, 4, "x").is_ok());
    }
}
