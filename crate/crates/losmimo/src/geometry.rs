//! Planar transceiver geometry and near-field LoS channel synthesis.
//!
//! All placement is 2-D: both arrays live on a horizontal plane and every
//! derivation (local AoAs, the neighbour-angle map, triangulation) is planar.
//!
//! Coordinate conventions, fixed once and asserted by round-trip tests:
//!
//! * The RX frame has its origin at the RX array midpoint. Its x-axis is the
//!   unit vector `s` pointing from the last subarray toward the first, and
//!   its y-axis is the array normal on the transmitter side.
//! * Subarray midpoint offsets `s_k` are signed coordinates along `s`, so
//!   subarray 0 sits at the largest positive offset.
//! * Antennas are indexed in the same sense: global RX antenna index grows
//!   from the `+s` end toward the `-s` end, which makes a subchannel match
//!   `steering_vector(local_aoa)` in the far-field limit.
//! * A local AoA is the signed angle between the array normal and the ray
//!   from a subarray midpoint to a TX antenna, positive toward `+s`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::{C64, Vec2};

/// Guard band keeping sampled scenarios away from endfire, in radians.
pub const ENDFIRE_GUARD: f64 = 5.0 * PI / 180.0;

/// Maximum redraws before `sample_scenario` gives up.
pub const MAX_SCENARIO_ATTEMPTS: usize = 10_000;

/// Physical description of the TX and RX arrays.
///
/// The RX is a collinear stack of `n_rf` uniform linear subarrays with `n_per_sub`
/// antennas each; element spacing inside a subarray is half a wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayLayout {
    /// Number of RX subarrays (= RF chains).
    pub n_rf: usize,
    /// Antennas per subarray.
    pub n_per_sub: usize,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Element spacing within a subarray, always `wavelength / 2`.
    pub rx_elem_spacing: f64,
    /// Distance between midpoints of successive subarrays, in meters.
    pub rx_sub_pitch: f64,
    /// Number of TX antennas.
    pub n_tx: usize,
    /// Spacing between adjacent TX antennas, in meters.
    pub tx_spacing: f64,
}

impl ArrayLayout {
    pub fn new(
        n_rf: usize,
        n_per_sub: usize,
        wavelength: f64,
        rx_sub_pitch: f64,
        n_tx: usize,
        tx_spacing: f64,
    ) -> Result<Self> {
        if n_rf == 0 || n_per_sub == 0 || n_tx == 0 {
            return Err(Error::InvalidGeometry(
                "antenna and subarray counts must be positive".into(),
            ));
        }
        if !(wavelength > 0.0) || !(tx_spacing >= 0.0) || !(rx_sub_pitch >= 0.0) {
            return Err(Error::InvalidGeometry(
                "wavelength must be positive and spacings nonnegative".into(),
            ));
        }
        let rx_elem_spacing = wavelength / 2.0;
        if n_rf > 1 && rx_sub_pitch < (n_per_sub as f64 - 1.0) * rx_elem_spacing {
            return Err(Error::InvalidGeometry(format!(
                "subarray pitch {rx_sub_pitch} m is smaller than the subarray aperture; subarrays overlap"
            )));
        }
        if n_tx > 1 && tx_spacing <= 0.0 {
            return Err(Error::InvalidGeometry(
                "tx_spacing must be positive for multi-antenna transmitters".into(),
            ));
        }
        Ok(Self {
            n_rf,
            n_per_sub,
            wavelength,
            rx_elem_spacing,
            rx_sub_pitch,
            n_tx,
            tx_spacing,
        })
    }

    /// Paper-scale default: 4 subarrays of 16 antennas at 60 GHz, 4 TX antennas.
    pub fn paper() -> Self {
        Self::new(4, 16, 0.005, 0.0475, 4, 0.0133).expect("paper layout is valid")
    }

    /// Total number of RX antennas.
    pub fn n_rx(&self) -> usize {
        self.n_rf * self.n_per_sub
    }

    /// End-to-end RX aperture (outermost antenna to outermost antenna).
    pub fn l_rx(&self) -> f64 {
        (self.n_rf as f64 - 1.0) * self.rx_sub_pitch
            + (self.n_per_sub as f64 - 1.0) * self.rx_elem_spacing
    }

    /// End-to-end TX aperture.
    pub fn l_tx(&self) -> f64 {
        (self.n_tx as f64 - 1.0) * self.tx_spacing
    }

    /// Signed subarray midpoint offsets along `s`, one per subarray.
    ///
    /// Offsets are symmetric about the array center and decrease with the
    /// subarray index; adjacent offsets differ by exactly the pitch.
    pub fn subarray_offsets(&self) -> Vec<f64> {
        let mid = (self.n_rf as f64 - 1.0) / 2.0;
        (0..self.n_rf)
            .map(|k| (mid - k as f64) * self.rx_sub_pitch)
            .collect()
    }

    /// Signed RX antenna offsets along `s` (all `n_rx`, subarray-major order).
    pub fn rx_antenna_offsets(&self) -> Vec<f64> {
        let sub_mid = (self.n_per_sub as f64 - 1.0) / 2.0;
        let mut out = Vec::with_capacity(self.n_rx());
        for s_k in self.subarray_offsets() {
            for n in 0..self.n_per_sub {
                out.push(s_k + (sub_mid - n as f64) * self.rx_elem_spacing);
            }
        }
        out
    }

    /// Signed TX antenna offsets along the TX array axis.
    pub fn tx_antenna_offsets(&self) -> Vec<f64> {
        let mid = (self.n_tx as f64 - 1.0) / 2.0;
        (0..self.n_tx)
            .map(|l| (mid - l as f64) * self.tx_spacing)
            .collect()
    }
}

/// Position and orientation of an array in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Array midpoint in meters.
    pub center: Vec2,
    /// Direction of the array axis (the local `+s` direction), radians in `[-pi, pi)`.
    pub heading: f64,
}

impl Pose {
    pub fn new(center: Vec2, heading: f64) -> Self {
        Self {
            center,
            heading: wrap_angle(heading),
        }
    }

    /// Unit vector along the array axis.
    pub fn axis(&self) -> Vec2 {
        Vec2::new(self.heading.cos(), self.heading.sin())
    }

    /// Unit normal, 90 degrees counter-clockwise from the axis.
    pub fn normal(&self) -> Vec2 {
        Vec2::new(-self.heading.sin(), self.heading.cos())
    }

    /// Map a point from this pose's local frame to the world frame.
    pub fn to_world(&self, local: Vec2) -> Vec2 {
        self.center + self.axis() * local.x + self.normal() * local.y
    }

    /// Map a world point into this pose's local frame.
    pub fn to_local(&self, world: Vec2) -> Vec2 {
        let d = world - self.center;
        Vec2::new(d.dot(&self.axis()), d.dot(&self.normal()))
    }
}

/// Wrap an angle to `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = (theta + PI).rem_euclid(two_pi) - PI;
    if a >= PI {
        a -= two_pi;
    }
    a
}

/// A concrete placement of both arrays plus the prior distance bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub layout: ArrayLayout,
    pub tx_pose: Pose,
    pub rx_pose: Pose,
    /// Smallest admissible midpoint-to-midpoint distance.
    pub r_min: f64,
    /// Largest admissible midpoint-to-midpoint distance.
    pub r_max: f64,
}

impl Scenario {
    pub fn new(layout: ArrayLayout, tx_pose: Pose, rx_pose: Pose, r_min: f64, r_max: f64) -> Result<Self> {
        if !(r_min > 0.0) || r_min > r_max {
            return Err(Error::InvalidGeometry(format!(
                "invalid distance bounds [{r_min}, {r_max}]"
            )));
        }
        if r_min <= layout.l_rx() / 2.0 {
            return Err(Error::InvalidGeometry(format!(
                "r_min = {r_min} m does not keep the TX outside the RX array (L_rx/2 = {} m)",
                layout.l_rx() / 2.0
            )));
        }
        let r = (tx_pose.center - rx_pose.center).norm();
        let tol = 1e-9 * r_max.max(1.0);
        if r < r_min - tol || r > r_max + tol {
            return Err(Error::InvalidGeometry(format!(
                "midpoint distance {r} m outside [{r_min}, {r_max}]"
            )));
        }
        Ok(Self {
            layout,
            tx_pose,
            rx_pose,
            r_min,
            r_max,
        })
    }

    /// Midpoint-to-midpoint distance.
    pub fn r(&self) -> f64 {
        (self.tx_pose.center - self.rx_pose.center).norm()
    }
}

/// Complex channel matrix, `n_rx` rows by `n_tx` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    entries: DMatrix<C64>,
}

impl ChannelMatrix {
    pub fn from_matrix(entries: DMatrix<C64>) -> Self {
        Self { entries }
    }

    pub fn n_rx(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.entries
    }

    /// Subchannel between subarray `k` (0-based) and TX antenna `l` (0-based).
    pub fn subchannel(&self, k: usize, l: usize, n_per_sub: usize) -> Vec<C64> {
        (0..n_per_sub)
            .map(|n| self.entries[(k * n_per_sub + n, l)])
            .collect()
    }

    /// Largest entrywise absolute difference to another matrix.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// World positions of all RX antennas and of the subarray midpoints.
pub fn rx_antenna_positions(scenario: &Scenario) -> (Vec<Vec2>, Vec<Vec2>) {
    let pose = &scenario.rx_pose;
    let antennas = scenario
        .layout
        .rx_antenna_offsets()
        .into_iter()
        .map(|x| pose.to_world(Vec2::new(x, 0.0)))
        .collect();
    let midpoints = scenario
        .layout
        .subarray_offsets()
        .into_iter()
        .map(|x| pose.to_world(Vec2::new(x, 0.0)))
        .collect();
    (antennas, midpoints)
}

/// World positions of all TX antennas.
pub fn tx_antenna_positions(scenario: &Scenario) -> Vec<Vec2> {
    let pose = &scenario.tx_pose;
    scenario
        .layout
        .tx_antenna_offsets()
        .into_iter()
        .map(|x| pose.to_world(Vec2::new(x, 0.0)))
        .collect()
}

/// Far-field steering vector of an `n`-element half-wavelength ULA.
///
/// Entry `m` is `exp(-j m pi sin(theta))`; entry 0 is always 1.
pub fn steering_vector(theta: f64, n: usize) -> Vec<C64> {
    let s = theta.sin();
    (0..n)
        .map(|m| C64::from_polar(1.0, -(m as f64) * PI * s))
        .collect()
}

/// Spherical-wave propagation kernel: amplitude `lambda / (4 pi d)`, phase `-2 pi d / lambda`.
pub fn propagation_kernel(d: f64, wavelength: f64) -> C64 {
    let amp = wavelength / (4.0 * PI * d);
    C64::from_polar(amp, -2.0 * PI * d / wavelength)
}

/// Exact LoS channel from pairwise antenna distances.
pub fn los_channel(scenario: &Scenario) -> Result<ChannelMatrix> {
    let (rx, _) = rx_antenna_positions(scenario);
    let tx = tx_antenna_positions(scenario);
    channel_from_positions(&rx, &tx, scenario.layout.wavelength)
}

/// LoS channel between explicit antenna coordinate lists.
pub fn channel_from_positions(rx: &[Vec2], tx: &[Vec2], wavelength: f64) -> Result<ChannelMatrix> {
    let mut m = DMatrix::zeros(rx.len(), tx.len());
    for (j, t) in tx.iter().enumerate() {
        for (i, r) in rx.iter().enumerate() {
            let d = (t - r).norm();
            if d <= 0.0 {
                return Err(Error::InvalidGeometry(format!(
                    "coincident antennas: RX {i} and TX {j}"
                )));
            }
            m[(i, j)] = propagation_kernel(d, wavelength);
        }
    }
    Ok(ChannelMatrix::from_matrix(m))
}

/// Axis-aligned rectangular room used by the image-source reflection model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl RoomSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::InvalidGeometry("degenerate room".into()));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    /// Square room of the given side length centered at `center`.
    pub fn centered(center: Vec2, side: f64) -> Result<Self> {
        Self::new(
            center.x - side / 2.0,
            center.x + side / 2.0,
            center.y - side / 2.0,
            center.y + side / 2.0,
        )
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// First-order image of `p` across each of the four walls.
    pub fn images(&self, p: Vec2) -> [Vec2; 4] {
        [
            Vec2::new(2.0 * self.x_min - p.x, p.y),
            Vec2::new(2.0 * self.x_max - p.x, p.y),
            Vec2::new(p.x, 2.0 * self.y_min - p.y),
            Vec2::new(p.x, 2.0 * self.y_max - p.y),
        ]
    }
}

/// LoS channel plus single-bounce wall reflections.
///
/// Each wall contributes an image-source term scaled by the scalar amplitude
/// reflection coefficient; `reflect_coeff = 0` reproduces the LoS channel
/// exactly.
pub fn multipath_channel(
    scenario: &Scenario,
    room: &RoomSpec,
    reflect_coeff: f64,
) -> Result<ChannelMatrix> {
    if !(0.0..=1.0).contains(&reflect_coeff) {
        return Err(Error::InvalidGeometry(format!(
            "reflection coefficient {reflect_coeff} outside [0, 1]"
        )));
    }
    let (rx, _) = rx_antenna_positions(scenario);
    let tx = tx_antenna_positions(scenario);
    for p in rx.iter().chain(tx.iter()) {
        if !room.contains(*p) {
            return Err(Error::InvalidGeometry(format!(
                "antenna at ({}, {}) lies outside the room",
                p.x, p.y
            )));
        }
    }
    let lam = scenario.layout.wavelength;
    let mut m = los_channel(scenario)?.entries;
    if reflect_coeff > 0.0 {
        for (j, t) in tx.iter().enumerate() {
            let images = room.images(*t);
            for (i, r) in rx.iter().enumerate() {
                let mut extra = C64::new(0.0, 0.0);
                for img in images {
                    let d = (img - r).norm();
                    extra += propagation_kernel(d, lam) * reflect_coeff;
                }
                m[(i, j)] += extra;
            }
        }
    }
    Ok(ChannelMatrix::from_matrix(m))
}

/// Exact local AoA of TX antenna `l` seen from subarray `k` (both 0-based).
///
/// The angle is measured from the full-array normal and is positive toward
/// the `+s` end, matching the sign convention of [`steering_vector`].
pub fn true_local_aoa(scenario: &Scenario, k: usize, l: usize) -> f64 {
    let q = scenario.rx_pose.to_local(tx_antenna_positions(scenario)[l]);
    let s_k = scenario.layout.subarray_offsets()[k];
    (q.x - s_k).atan2(q.y)
}

/// Draw a random scenario: the RX sits at the origin with a uniform heading,
/// the TX midpoint is placed uniformly in distance over `[r_min, r_max]` and
/// uniformly in direction, with a uniform heading of its own.
///
/// Draws are rejected until every subarray sees every TX antenna within the
/// endfire guard band; exceeding [`MAX_SCENARIO_ATTEMPTS`] is an error.
pub fn sample_scenario<R: Rng>(
    layout: &ArrayLayout,
    r_min: f64,
    r_max: f64,
    rng: &mut R,
) -> Result<Scenario> {
    if r_min > r_max {
        return Err(Error::InvalidGeometry(format!(
            "r_min = {r_min} exceeds r_max = {r_max}"
        )));
    }
    let limit = PI / 2.0 - ENDFIRE_GUARD;
    for _ in 0..MAX_SCENARIO_ATTEMPTS {
        let r = if r_min == r_max {
            r_min
        } else {
            rng.random_range(r_min..r_max)
        };
        let rx_heading = rng.random_range(-PI..PI);
        let direction = rng.random_range(-PI..PI);
        let tx_heading = rng.random_range(-PI..PI);
        let rx_pose = Pose::new(Vec2::zeros(), rx_heading);
        let tx_center = Vec2::new(r * direction.cos(), r * direction.sin());
        let tx_pose = Pose::new(tx_center, tx_heading);
        let scenario = Scenario::new(layout.clone(), tx_pose, rx_pose, r_min, r_max)?;
        let ok = (0..layout.n_rf).all(|k| {
            (0..layout.n_tx).all(|l| true_local_aoa(&scenario, k, l).abs() < limit)
        });
        if ok {
            return Ok(scenario);
        }
    }
    Err(Error::ScenarioRejected {
        attempts: MAX_SCENARIO_ATTEMPTS,
        reason: "could not keep all local AoAs inside the endfire guard band".into(),
    })
}

/// Seeded convenience wrapper around [`sample_scenario`].
pub fn sample_scenario_seeded(
    layout: &ArrayLayout,
    r_min: f64,
    r_max: f64,
    seed: u64,
) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_scenario(layout, r_min, r_max, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_scenario(r: f64) -> Scenario {
        // TX broadside of the RX array at distance r, facing back at it.
        let layout = ArrayLayout::paper();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let tx = Pose::new(Vec2::new(0.0, r), PI);
        Scenario::new(layout, tx, rx, 0.4_f64.min(r), 100.0).unwrap()
    }

    #[test]
    fn paper_layout_dimensions() {
        let layout = ArrayLayout::paper();
        assert_eq!(layout.n_rx(), 64);
        assert!((layout.l_rx() - 0.18).abs() < 1e-12, "L_rx = {}", layout.l_rx());
        assert!((layout.l_tx() - 0.0399).abs() < 1e-12);
    }

    #[test]
    fn subarray_midpoints_match_hand_arithmetic() {
        let layout = ArrayLayout::paper();
        let offsets = layout.subarray_offsets();
        let expected = [0.07125, 0.02375, -0.02375, -0.07125];
        for (o, e) in offsets.iter().zip(expected.iter()) {
            assert!((o - e).abs() < 1e-12, "offset {o} vs {e}");
        }
        // Adjacent midpoints are exactly one pitch apart.
        for w in offsets.windows(2) {
            assert!((w[0] - w[1] - layout.rx_sub_pitch).abs() < 1e-12);
        }
        let span = offsets.first().unwrap() - offsets.last().unwrap();
        assert!((span - (layout.n_rf as f64 - 1.0) * layout.rx_sub_pitch).abs() < 1e-12);
    }

    #[test]
    fn single_subarray_midpoint_at_center() {
        let layout = ArrayLayout::new(1, 16, 0.005, 0.0, 4, 0.0133).unwrap();
        assert_eq!(layout.subarray_offsets(), vec![0.0]);
    }

    #[test]
    fn rx_positions_collinear_and_pitched() {
        let layout = ArrayLayout::paper();
        let rx = Pose::new(Vec2::new(0.3, -0.2), 0.7);
        let tx = Pose::new(Vec2::new(0.3, 0.4), 0.0);
        let sc = Scenario::new(layout, tx, rx, 0.4, 0.8).unwrap();
        let (ants, mids) = rx_antenna_positions(&sc);
        assert_eq!(ants.len(), 64);
        assert_eq!(mids.len(), 4);
        let axis = sc.rx_pose.axis();
        for a in &ants {
            let d = a - sc.rx_pose.center;
            let off_axis = d - axis * d.dot(&axis);
            assert!(off_axis.norm() < 1e-12, "antenna off the array line");
        }
        for w in mids.windows(2) {
            assert!(((w[0] - w[1]).norm() - 0.0475).abs() < 1e-12);
        }
    }

    #[test]
    fn tx_span_matches_paper_aperture() {
        let layout = ArrayLayout::paper();
        let sc = paper_scenario(0.5);
        let tx = tx_antenna_positions(&sc);
        assert_eq!(tx.len(), 4);
        let span = (tx[0] - tx[3]).norm();
        assert!((span - layout.l_tx()).abs() < 1e-12);
    }

    #[test]
    fn single_tx_antenna_sits_at_center() {
        let layout = ArrayLayout::new(4, 16, 0.005, 0.0475, 1, 0.0).unwrap();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let tx = Pose::new(Vec2::new(0.0, 0.5), 1.0);
        let sc = Scenario::new(layout, tx, rx, 0.4, 0.8).unwrap();
        let positions = tx_antenna_positions(&sc);
        assert_eq!(positions.len(), 1);
        assert!((positions[0] - Vec2::new(0.0, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn rotated_pose_rotates_positions() {
        let layout = ArrayLayout::paper();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let tx0 = Pose::new(Vec2::new(0.0, 0.5), 0.0);
        let tx90 = Pose::new(Vec2::new(0.0, 0.5), PI / 2.0);
        let sc0 = Scenario::new(layout.clone(), tx0, rx, 0.4, 0.8).unwrap();
        let sc90 = Scenario::new(layout, tx90, rx, 0.4, 0.8).unwrap();
        let p0 = tx_antenna_positions(&sc0);
        let p90 = tx_antenna_positions(&sc90);
        for (a, b) in p0.iter().zip(p90.iter()) {
            let d = a - Vec2::new(0.0, 0.5);
            let rotated = Vec2::new(-d.y, d.x) + Vec2::new(0.0, 0.5);
            assert!((rotated - b).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_vector_known_values() {
        let v = steering_vector(0.0, 4);
        for e in &v {
            assert!((e - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
        // sin(theta) = 1 exactly at the endfire limit.
        let v = steering_vector(PI / 2.0, 2);
        assert!((v[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((v[1] - C64::new(-1.0, 0.0)).norm() < 1e-9);
        // sin(pi/6) = 1/2: phases step by pi/2.
        let v = steering_vector(PI / 6.0, 4);
        let expected = [
            C64::new(1.0, 0.0),
            C64::new(0.0, -1.0),
            C64::new(-1.0, 0.0),
            C64::new(0.0, 1.0),
        ];
        for (a, b) in v.iter().zip(expected.iter()) {
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
        for e in &v {
            assert!((e.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_reference_values() {
        let lam = 0.005;
        let e = propagation_kernel(lam, lam);
        assert!((e.re - 1.0 / (4.0 * PI)).abs() < 1e-12);
        assert!(e.im.abs() < 1e-12);
        let e = propagation_kernel(lam / 2.0, lam);
        assert!((e.re + 1.0 / (2.0 * PI)).abs() < 1e-12);
        assert!(e.im.abs() < 1e-9);
        // d = 0.5 m at 5 mm: |entry| = lambda/(4 pi d), phase = -200 pi = 0 mod 2 pi.
        let e = propagation_kernel(0.5, lam);
        assert!((e.norm() - 7.957747154594767e-4).abs() < 1e-12);
        assert!(e.arg().abs() < 1e-9, "phase {}", e.arg());
    }

    #[test]
    fn los_channel_entry_magnitudes() {
        let sc = paper_scenario(0.5);
        let h = los_channel(&sc).unwrap();
        let lam = sc.layout.wavelength;
        let (rx, _) = rx_antenna_positions(&sc);
        let tx = tx_antenna_positions(&sc);
        for j in 0..h.n_tx() {
            for i in 0..h.n_rx() {
                let d = (tx[j] - rx[i]).norm();
                assert!((h.entry(i, j).norm() - lam / (4.0 * PI * d)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn los_channel_rejects_coincident_antennas() {
        let rx = vec![Vec2::zeros()];
        let tx = vec![Vec2::zeros()];
        assert!(channel_from_positions(&rx, &tx, 0.005).is_err());
    }

    #[test]
    fn multipath_zero_coefficient_is_los() {
        let sc = paper_scenario(0.5);
        let room = RoomSpec::centered(Vec2::new(0.0, 0.25), 5.0).unwrap();
        let los = los_channel(&sc).unwrap();
        let mp = multipath_channel(&sc, &room, 0.0).unwrap();
        assert_eq!(los.max_abs_diff(&mp), 0.0);
    }

    #[test]
    fn multipath_matches_hand_image_construction() {
        // Single-antenna arrays so the oracle is a four-term sum done by hand.
        let layout = ArrayLayout::new(1, 1, 0.005, 0.0, 1, 0.0).unwrap();
        let rx = Pose::new(Vec2::new(-0.1, 0.0), 0.0);
        let tx = Pose::new(Vec2::new(0.4, 0.1), PI);
        let sc = Scenario::new(layout, tx, rx, 0.3, 0.9).unwrap();
        let room = RoomSpec::new(-2.0, 3.0, -1.5, 2.5).unwrap();
        let gamma = 0.3;
        let got = multipath_channel(&sc, &room, gamma).unwrap().entry(0, 0);

        let p_rx = Vec2::new(-0.1, 0.0);
        let p_tx = Vec2::new(0.4, 0.1);
        let mut expected = propagation_kernel((p_tx - p_rx).norm(), 0.005);
        let mirrors = [
            Vec2::new(2.0 * -2.0 - 0.4, 0.1),
            Vec2::new(2.0 * 3.0 - 0.4, 0.1),
            Vec2::new(0.4, 2.0 * -1.5 - 0.1),
            Vec2::new(0.4, 2.0 * 2.5 - 0.1),
        ];
        for m in mirrors {
            expected += propagation_kernel((m - p_rx).norm(), 0.005) * gamma;
        }
        assert!((got - expected).norm() < 1e-15);
    }

    #[test]
    fn multipath_far_wall_contribution_vanishes() {
        let layout = ArrayLayout::new(1, 1, 0.005, 0.0, 1, 0.0).unwrap();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let tx = Pose::new(Vec2::new(0.5, 0.0), PI);
        let sc = Scenario::new(layout, tx, rx, 0.3, 0.9).unwrap();
        let near = RoomSpec::new(-2.0, 2.0, -2.0, 2.0).unwrap();
        let far = RoomSpec::new(-2.0e6, 2.0e6, -2.0e6, 2.0e6).unwrap();
        let los = los_channel(&sc).unwrap().entry(0, 0);
        let with_far = multipath_channel(&sc, &far, 1.0).unwrap().entry(0, 0);
        let with_near = multipath_channel(&sc, &near, 1.0).unwrap().entry(0, 0);
        assert!((with_far - los).norm() < 1e-9, "far walls must not contribute");
        assert!((with_near - los).norm() > 1e-6, "near walls must contribute");
    }

    #[test]
    fn multipath_rejects_antennas_outside_room() {
        let sc = paper_scenario(0.5);
        let room = RoomSpec::new(10.0, 11.0, 10.0, 11.0).unwrap();
        assert!(multipath_channel(&sc, &room, 0.3).is_err());
    }

    #[test]
    fn aoa_zero_on_subarray_normal() {
        let layout = ArrayLayout::paper();
        let offsets = layout.subarray_offsets();
        for k in 0..4 {
            // Place the single TX antenna on the normal through midpoint k.
            let lay1 = ArrayLayout::new(4, 16, 0.005, 0.0475, 1, 0.0).unwrap();
            let rx = Pose::new(Vec2::zeros(), 0.0);
            let tx = Pose::new(Vec2::new(offsets[k], 0.5), 0.0);
            let sc = Scenario::new(lay1, tx, rx, 0.4, 0.8).unwrap();
            assert!(true_local_aoa(&sc, k, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn aoa_negates_under_mirroring() {
        let layout = ArrayLayout::new(4, 16, 0.005, 0.0475, 1, 0.0).unwrap();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let sc_a = Scenario::new(layout.clone(), Pose::new(Vec2::new(0.2, 0.5), 0.0), rx, 0.4, 0.8).unwrap();
        let sc_b = Scenario::new(layout, Pose::new(Vec2::new(-0.2, 0.5), 0.0), rx, 0.4, 0.8).unwrap();
        // Mirroring across the normal swaps the roles of the outer subarrays.
        for k in 0..4 {
            let a = true_local_aoa(&sc_a, k, 0);
            let b = true_local_aoa(&sc_b, 3 - k, 0);
            assert!((a + b).abs() < 1e-12, "k = {k}: {a} vs {b}");
        }
    }

    #[test]
    fn far_field_subchannel_matches_steering_vector() {
        // r much larger than both the aperture and the Fresnel distance of a subarray.
        let layout = ArrayLayout::new(4, 16, 0.005, 0.0475, 1, 0.0).unwrap();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let tx = Pose::new(Vec2::new(300.0, 900.0), 0.0);
        let sc = Scenario::new(layout.clone(), tx, rx, 1.0, 2000.0).unwrap();
        let h = los_channel(&sc).unwrap();
        for k in 0..4 {
            let theta = true_local_aoa(&sc, k, 0);
            let a = steering_vector(theta, 16);
            let sub = h.subchannel(k, 0, 16);
            for (n, (hn, an)) in sub.iter().zip(a.iter()).enumerate() {
                let ratio = (hn / sub[0]) / (an / a[0]);
                assert!(
                    ratio.arg().abs() <= 1e-3,
                    "subarray {k} antenna {n}: phase error {}",
                    ratio.arg()
                );
            }
        }
    }

    #[test]
    fn channel_invariant_under_rigid_transforms() {
        let layout = ArrayLayout::paper();
        let rx = Pose::new(Vec2::new(0.1, -0.3), 0.4);
        let tx = Pose::new(Vec2::new(0.5, 0.2), -2.0);
        let sc = Scenario::new(layout.clone(), tx, rx, 0.4, 0.8).unwrap();
        let h = los_channel(&sc).unwrap();

        // Rotate everything by 1.1 rad about (2, -1) and translate by (3, 4).
        let ang = 1.1_f64;
        let pivot = Vec2::new(2.0, -1.0);
        let shift = Vec2::new(3.0, 4.0);
        let rot = |p: Vec2| {
            let d = p - pivot;
            pivot + Vec2::new(d.x * ang.cos() - d.y * ang.sin(), d.x * ang.sin() + d.y * ang.cos()) + shift
        };
        let rx2 = Pose::new(rot(rx.center), rx.heading + ang);
        let tx2 = Pose::new(rot(tx.center), tx.heading + ang);
        let sc2 = Scenario::new(layout, tx2, rx2, 0.4, 0.8).unwrap();
        let h2 = los_channel(&sc2).unwrap();
        assert!(h.max_abs_diff(&h2) < 1e-12);
    }

    #[test]
    fn distances_symmetric_under_role_swap() {
        let sc = paper_scenario(0.6);
        let (rx, _) = rx_antenna_positions(&sc);
        let tx = tx_antenna_positions(&sc);
        for (i, r) in rx.iter().enumerate() {
            for (j, t) in tx.iter().enumerate() {
                let d_ij = (t - r).norm();
                let d_ji = (r - t).norm();
                assert!((d_ij - d_ji).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn sampled_scenarios_are_deterministic() {
        let layout = ArrayLayout::paper();
        let a = sample_scenario_seeded(&layout, 0.4, 0.8, 17).unwrap();
        let b = sample_scenario_seeded(&layout, 0.4, 0.8, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_distance_is_uniform() {
        let layout = ArrayLayout::paper();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| sample_scenario(&layout, 0.4, 0.8, &mut rng).unwrap().r())
            .sum::<f64>()
            / n as f64;
        let target = 0.6;
        assert!(
            (mean - target).abs() < 0.01 * target,
            "mean r = {mean}, expected about {target}"
        );
    }

    #[test]
    fn degenerate_distance_interval() {
        let layout = ArrayLayout::paper();
        let sc = sample_scenario_seeded(&layout, 0.5, 0.5, 11).unwrap();
        assert!((sc.r() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sampled_scenarios_respect_guard_band() {
        let layout = ArrayLayout::paper();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let sc = sample_scenario(&layout, 0.4, 0.8, &mut rng).unwrap();
            for k in 0..4 {
                for l in 0..4 {
                    assert!(true_local_aoa(&sc, k, l).abs() < PI / 2.0 - ENDFIRE_GUARD);
                }
            }
        }
    }

    #[test]
    fn layout_rejects_overlapping_subarrays() {
        assert!(ArrayLayout::new(4, 16, 0.005, 0.03, 4, 0.0133).is_err());
    }

    #[test]
    fn scenario_rejects_tx_inside_rx_array() {
        let layout = ArrayLayout::paper();
        let rx = Pose::new(Vec2::zeros(), 0.0);
        let tx = Pose::new(Vec2::new(0.0, 0.05), 0.0);
        assert!(Scenario::new(layout, tx, rx, 0.05, 0.8).is_err());
    }
}
