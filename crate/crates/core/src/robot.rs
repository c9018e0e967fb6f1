//! Scatterer configuration, actuation spaces and the known design dynamics.
//!
//! A design is `M` sound-hard disks. Actions are constant rates applied over
//! one action period; the design trajectory is the rate integral projected
//! back onto the feasible set at every sample.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::field2d::SimConfig;
use crate::kv::{self, KvMap};

/// Which design coordinates the agent may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActuationMode {
    /// Radii adjustment; centers fixed on a ring.
    Radii,
    /// Positional adjustment; radii fixed.
    Positions,
    /// Positions and radii.
    Full,
}

impl ActuationMode {
    pub fn code(self) -> u8 {
        match self {
            ActuationMode::Radii => b'R',
            ActuationMode::Positions => b'P',
            ActuationMode::Full => b'F',
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            b'R' => Some(ActuationMode::Radii),
            b'P' => Some(ActuationMode::Positions),
            b'F' => Some(ActuationMode::Full),
            _ => None,
        }
    }

    pub fn moves_centers(self) -> bool {
        self != ActuationMode::Radii
    }

    pub fn moves_radii(self) -> bool {
        self != ActuationMode::Positions
    }
}

/// Physical limits of the robot. None of these values come from measured
/// hardware; they keep disks resolvable on the default grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotLimits {
    pub r_min: f64,
    pub r_max: f64,
    /// Minimum clearance between disk surfaces.
    pub gap: f64,
    /// Bound on each center-rate component, m/s.
    pub position_rate: f64,
    /// Bound on each radius rate, m/s.
    pub radius_rate: f64,
    /// Distance kept between disks and the PML.
    pub margin: f64,
    pub ring_radius: f64,
    /// Radius of ring layouts.
    pub r_init: f64,
    /// Radius of every disk in mode P.
    pub fixed_radius: f64,
    pub max_sweeps: usize,
}

impl Default for RobotLimits {
    fn default() -> Self {
        RobotLimits {
            r_min: 0.2,
            r_max: 1.0,
            gap: 0.1,
            position_rate: 200.0,
            radius_rate: 20.0,
            margin: 2.0,
            ring_radius: 5.0,
            r_init: 0.3,
            fixed_radius: 1.0,
            max_sweeps: 16,
        }
    }
}

impl RobotLimits {
    pub fn from_kv(kv: &mut KvMap) -> Result<Self> {
        let mut l = RobotLimits::default();
        kv.take("r_min", &mut l.r_min)?;
        kv.take("r_max", &mut l.r_max)?;
        kv.take("gap", &mut l.gap)?;
        kv.take("position_rate", &mut l.position_rate)?;
        kv.take("radius_rate", &mut l.radius_rate)?;
        kv.take("margin", &mut l.margin)?;
        kv.take("ring_radius", &mut l.ring_radius)?;
        kv.take("r_init", &mut l.r_init)?;
        kv.take("fixed_radius", &mut l.fixed_radius)?;
        kv.take("max_sweeps", &mut l.max_sweeps)?;
        if !(l.r_min > 0.0 && l.r_min <= l.r_max) {
            return Err(Error::Config(format!("need 0 < r_min <= r_max, got {} / {}", l.r_min, l.r_max)));
        }
        for (name, r) in [("r_init", l.r_init), ("fixed_radius", l.fixed_radius)] {
            if !(r >= l.r_min && r <= l.r_max) {
                return Err(Error::Config(format!("{name} {r} outside [r_min, r_max]")));
            }
        }
        if l.gap < 0.0 || l.position_rate < 0.0 || l.radius_rate < 0.0 || l.margin < 0.0 {
            return Err(Error::Config("gap, rates and margin must be non-negative".into()));
        }
        Ok(l)
    }

    pub fn to_text(&self) -> String {
        kv::render([
            ("r_min", format!("{:?}", self.r_min)),
            ("r_max", format!("{:?}", self.r_max)),
            ("gap", format!("{:?}", self.gap)),
            ("position_rate", format!("{:?}", self.position_rate)),
            ("radius_rate", format!("{:?}", self.radius_rate)),
            ("margin", format!("{:?}", self.margin)),
            ("ring_radius", format!("{:?}", self.ring_radius)),
            ("r_init", format!("{:?}", self.r_init)),
            ("fixed_radius", format!("{:?}", self.fixed_radius)),
            ("max_sweeps", self.max_sweeps.to_string()),
        ])
    }
}

/// Named actuation configurations: `R` (19-disk ring), `P1`, `P2`, `P4`, `F2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpaceName {
    pub mode: ActuationMode,
    pub count: usize,
}

impl SpaceName {
    pub const RING_COUNT: usize = 19;
}

impl fmt::Display for SpaceName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            ActuationMode::Radii => f.write_str("R"),
            ActuationMode::Positions => write!(f, "P{}", self.count),
            ActuationMode::Full => write!(f, "F{}", self.count),
        }
    }
}

impl FromStr for SpaceName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown actuation space `{s}` (expected R, P1, P2, P4 or F2)"));
        let (head, tail) = s.split_at(s.len().min(1));
        let mode = match head {
            "R" => ActuationMode::Radii,
            "P" => ActuationMode::Positions,
            "F" => ActuationMode::Full,
            _ => return Err(bad()),
        };
        let count = match (mode, tail) {
            (ActuationMode::Radii, "") => Self::RING_COUNT,
            (ActuationMode::Radii, t) => t.parse().map_err(|_| bad())?,
            (_, t) => t.parse().map_err(|_| bad())?,
        };
        if count == 0 {
            return Err(bad());
        }
        Ok(SpaceName { mode, count })
    }
}

/// Action-space descriptor: mode, scatterer count and per-coordinate bounds
/// in the flat design layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuationSpace {
    pub mode: ActuationMode,
    pub count: usize,
    pub bounds: Vec<f64>,
}

impl ActuationSpace {
    pub fn new(mode: ActuationMode, count: usize, limits: &RobotLimits) -> Self {
        let pos = if mode.moves_centers() { limits.position_rate } else { 0.0 };
        let rad = if mode.moves_radii() { limits.radius_rate } else { 0.0 };
        let mut bounds = vec![pos; 2 * count];
        bounds.extend(std::iter::repeat_n(rad, count));
        ActuationSpace { mode, count, bounds }
    }

    pub fn from_name(name: SpaceName, limits: &RobotLimits) -> Self {
        Self::new(name.mode, name.count, limits)
    }

    pub fn name(&self) -> SpaceName {
        SpaceName { mode: self.mode, count: self.count }
    }

    pub fn dim(&self) -> usize {
        3 * self.count
    }
}

/// Scatterer centers and radii, `d(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignState {
    pub centers: Vec<[f64; 2]>,
    pub radii: Vec<f64>,
}

impl DesignState {
    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Flat layout `[x1, y1, x2, y2, ..., r1, r2, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.centers.iter().flat_map(|c| c.iter().copied()).collect();
        v.extend_from_slice(&self.radii);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::ShapeMismatch(format!("design vector length {} is not a multiple of 3", flat.len())));
        }
        let m = flat.len() / 3;
        let centers = (0..m).map(|i| [flat[2 * i], flat[2 * i + 1]]).collect();
        Ok(DesignState { centers, radii: flat[2 * m..].to_vec() })
    }

    /// `self + rates * t`, without projection.
    fn advanced(&self, rates: &[f64], t: f64) -> DesignState {
        let m = self.len();
        let centers = self
            .centers
            .iter()
            .enumerate()
            .map(|(i, c)| [c[0] + rates[2 * i] * t, c[1] + rates[2 * i + 1] * t])
            .collect();
        let radii = self.radii.iter().enumerate().map(|(i, r)| r + rates[2 * m + i] * t).collect();
        DesignState { centers, radii }
    }
}

/// Constant-rate action over one period, flat layout matching [`DesignState::to_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpec {
    pub rates: Vec<f64>,
}

impl ActionSpec {
    pub fn zeros(dim: usize) -> Self {
        ActionSpec { rates: vec![0.0; dim] }
    }

    pub fn norm_squared(&self) -> f64 {
        self.rates.iter().map(|r| r * r).sum()
    }

    /// Componentwise clamp into `[-bound, bound]`.
    pub fn clamped(&self, space: &ActuationSpace) -> ActionSpec {
        ActionSpec {
            rates: self.rates.iter().zip(&space.bounds).map(|(r, b)| r.clamp(-b, *b)).collect(),
        }
    }
}

/// Feasibility tolerance on pairwise separations.
const SEPARATION_TOL: f64 = 1e-9;

/// The robot: an actuation space together with its geometric constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Robot {
    pub space: ActuationSpace,
    pub limits: RobotLimits,
    /// Disks must lie inside `[-h, h]^2` with `h = region_half_width`.
    pub region_half_width: f64,
}

impl Robot {
    pub fn new(space: ActuationSpace, limits: RobotLimits, sim: &SimConfig) -> Result<Self> {
        let region_half_width = sim.interior_half_width() - limits.margin;
        if region_half_width <= limits.r_max {
            return Err(Error::Config(format!(
                "design region half width {region_half_width:.3} m leaves no room for r_max {}",
                limits.r_max
            )));
        }
        Ok(Robot { space, limits, region_half_width })
    }

    pub fn from_name(name: SpaceName, limits: RobotLimits, sim: &SimConfig) -> Result<Self> {
        Self::new(ActuationSpace::from_name(name, &limits), limits, sim)
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    fn required_distance(&self, d: &DesignState, i: usize, j: usize) -> f64 {
        d.radii[i] + d.radii[j] + self.limits.gap
    }

    /// True when every constraint holds (separations to within 1e-9 m).
    pub fn is_feasible(&self, d: &DesignState) -> bool {
        let l = &self.limits;
        let h = self.region_half_width;
        let radii_ok = d.radii.iter().all(|&r| r >= l.r_min && r <= l.r_max);
        let inside = d
            .centers
            .iter()
            .zip(&d.radii)
            .all(|(c, &r)| c[0].abs() <= h - r + SEPARATION_TOL && c[1].abs() <= h - r + SEPARATION_TOL);
        radii_ok && inside && self.first_overlap(d).is_none()
    }

    fn first_overlap(&self, d: &DesignState) -> Option<(usize, usize)> {
        let m = d.len();
        for i in 0..m {
            for j in i + 1..m {
                if distance(d.centers[i], d.centers[j]) < self.required_distance(d, i, j) - SEPARATION_TOL {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Projects `d` onto the feasible set. Feasible inputs are returned unchanged.
    pub fn project(&self, d: &DesignState) -> Result<DesignState> {
        let l = &self.limits;
        let h = self.region_half_width;
        let mut out = d.clone();
        for r in &mut out.radii {
            *r = r.clamp(l.r_min, l.r_max);
        }
        let clamp_centers = |out: &mut DesignState| {
            for (c, &r) in out.centers.iter_mut().zip(&out.radii) {
                c[0] = c[0].clamp(-(h - r), h - r);
                c[1] = c[1].clamp(-(h - r), h - r);
            }
        };
        if self.space.mode.moves_centers() {
            clamp_centers(&mut out);
        }
        let m = out.len();
        for _ in 0..l.max_sweeps {
            let mut touched = false;
            for i in 0..m {
                for j in i + 1..m {
                    let need = self.required_distance(&out, i, j);
                    let dist = distance(out.centers[i], out.centers[j]);
                    if dist >= need - SEPARATION_TOL {
                        continue;
                    }
                    touched = true;
                    if self.space.mode.moves_centers() {
                        let (ux, uy) = if dist > 0.0 {
                            ((out.centers[j][0] - out.centers[i][0]) / dist, (out.centers[j][1] - out.centers[i][1]) / dist)
                        } else {
                            (1.0, 0.0)
                        };
                        let push = 0.5 * (need - dist);
                        out.centers[i][0] -= ux * push;
                        out.centers[i][1] -= uy * push;
                        out.centers[j][0] += ux * push;
                        out.centers[j][1] += uy * push;
                    } else {
                        let shrink = 0.5 * (need - dist);
                        out.radii[i] = (out.radii[i] - shrink).max(l.r_min);
                        out.radii[j] = (out.radii[j] - shrink).max(l.r_min);
                    }
                }
            }
            if self.space.mode.moves_centers() {
                clamp_centers(&mut out);
            }
            if !touched {
                break;
            }
        }
        if self.is_feasible(&out) {
            Ok(out)
        } else {
            Err(Error::ProjectionFailure { sweeps: l.max_sweeps })
        }
    }

    /// Integrates constant rates over `period` seconds, returning
    /// `substeps + 1` projected samples starting at `start`.
    pub fn integrate_design(
        &self,
        start: &DesignState,
        action: &ActionSpec,
        period: f64,
        substeps: usize,
    ) -> Result<Vec<DesignState>> {
        let a = action.clamped(&self.space);
        let mut traj = Vec::with_capacity(substeps + 1);
        traj.push(self.project(start)?);
        for k in 1..=substeps {
            let t = period * k as f64 / substeps as f64;
            traj.push(self.project(&start.advanced(&a.rates, t))?);
        }
        Ok(traj)
    }

    /// End state of [`integrate_design`](Self::integrate_design) without
    /// materializing the intermediate samples.
    pub fn advance(&self, start: &DesignState, action: &ActionSpec, period: f64) -> Result<DesignState> {
        let a = action.clamped(&self.space);
        self.project(&start.advanced(&a.rates, period))
    }

    /// `M` disks of radius `r_init`, equally spaced on a circle, the first on the +x axis.
    pub fn ring_layout(&self, count: usize, ring_radius: f64) -> Result<DesignState> {
        ring_layout(count, ring_radius, self.limits.r_init, self.limits.gap)
    }

    /// Uniform draw from each action component's `[-bound, bound]`.
    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> ActionSpec {
        random_action(&self.space, rng)
    }

    /// Randomized feasible initial design.
    ///
    /// Mode R perturbs the radii of the ring layout; modes P and F
    /// rejection-sample centers uniformly in the design region.
    pub fn sample_design<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DesignState> {
        let l = &self.limits;
        let m = self.space.count;
        match self.space.mode {
            ActuationMode::Radii => {
                let mut d = self.ring_layout(m, l.ring_radius)?;
                for r in &mut d.radii {
                    *r = rng.random_range(l.r_min..=l.r_max);
                }
                self.project(&d)
            }
            mode => {
                for _ in 0..10_000 {
                    let radii: Vec<f64> = (0..m)
                        .map(|_| if mode.moves_radii() { rng.random_range(l.r_min..=l.r_max) } else { l.fixed_radius })
                        .collect();
                    let centers = radii
                        .iter()
                        .map(|&r| {
                            let lim = self.region_half_width - r;
                            [rng.random_range(-lim..=lim), rng.random_range(-lim..=lim)]
                        })
                        .collect();
                    let d = DesignState { centers, radii };
                    if self.is_feasible(&d) {
                        return Ok(d);
                    }
                }
                Err(Error::ConstraintViolation(format!("could not sample a feasible design with {m} disks")))
            }
        }
    }
}

pub fn ring_layout(count: usize, ring_radius: f64, r_init: f64, gap: f64) -> Result<DesignState> {
    if count == 0 {
        return Err(Error::ConstraintViolation("ring layout needs at least one disk".into()));
    }
    let centers: Vec<[f64; 2]> = (0..count)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            [ring_radius * th.cos(), ring_radius * th.sin()]
        })
        .collect();
    if count > 1 {
        let chord = 2.0 * ring_radius * (std::f64::consts::PI / count as f64).sin();
        if chord < 2.0 * r_init + gap {
            return Err(Error::ConstraintViolation(format!(
                "adjacent ring disks overlap: chord {chord:.4} m < {:.4} m",
                2.0 * r_init + gap
            )));
        }
    }
    Ok(DesignState { centers, radii: vec![r_init; count] })
}

pub fn random_action<R: Rng + ?Sized>(space: &ActuationSpace, rng: &mut R) -> ActionSpec {
    ActionSpec {
        rates: space
            .bounds
            .iter()
            .map(|&b| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 })
            .collect(),
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn robot(mode: ActuationMode, m: usize) -> Robot {
        let limits = RobotLimits::default();
        Robot::new(ActuationSpace::new(mode, m, &limits), limits, &SimConfig::default()).unwrap()
    }

    #[test]
    fn space_names_parse() {
        assert_eq!("R".parse::<SpaceName>().unwrap(), SpaceName { mode: ActuationMode::Radii, count: 19 });
        assert_eq!("P4".parse::<SpaceName>().unwrap().count, 4);
        assert_eq!("F2".parse::<SpaceName>().unwrap().to_string(), "F2");
        assert!("Q1".parse::<SpaceName>().is_err());
        assert!("P".parse::<SpaceName>().is_err());
    }

    #[test]
    fn flat_layout_round_trips() {
        let d = DesignState { centers: vec![[1.0, 2.0], [3.0, 4.0]], radii: vec![0.5, 0.6] };
        assert_eq!(d.to_flat(), vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.6]);
        assert_eq!(DesignState::from_flat(&d.to_flat()).unwrap(), d);
        assert!(DesignState::from_flat(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn null_action_gives_constant_trajectory() {
        let r = robot(ActuationMode::Full, 2);
        let d = DesignState { centers: vec![[-2.0, 0.0], [2.0, 1.0]], radii: vec![0.5, 0.4] };
        let traj = r.integrate_design(&d, &ActionSpec::zeros(6), 1e-3, 3).unwrap();
        assert_eq!(traj.len(), 4);
        assert!(traj.iter().all(|s| *s == d));
    }

    #[test]
    fn linear_integration_moves_center() {
        let r = robot(ActuationMode::Positions, 1);
        let d = DesignState { centers: vec![[0.0, 0.0]], radii: vec![0.3] };
        let a = ActionSpec { rates: vec![1.0, 0.0, 0.0] };
        let traj = r.integrate_design(&d, &a, 1e-3, 3).unwrap();
        let end = traj.last().unwrap();
        assert!((end.centers[0][0] - 0.001).abs() < 1e-15);
        assert_eq!(end.centers[0][1], 0.0);
    }

    #[test]
    fn colliding_action_respects_separation() {
        let r = robot(ActuationMode::Positions, 2);
        let limits = r.limits.clone();
        let d = DesignState { centers: vec![[-1.0, 0.0], [1.0, 0.0]], radii: vec![0.3, 0.3] };
        let a = ActionSpec { rates: vec![200.0, 0.0, -200.0, 0.0, 0.0, 0.0] };
        let traj = r.integrate_design(&d, &a, 5e-3, 20).unwrap();
        for s in &traj {
            let sep = distance(s.centers[0], s.centers[1]);
            assert!(sep >= 0.3 + 0.3 + limits.gap - 1e-9, "separation {sep}");
            assert!(r.is_feasible(s));
        }
    }

    #[test]
    fn oversized_radius_is_clamped() {
        let r = robot(ActuationMode::Full, 1);
        let d = DesignState { centers: vec![[0.0, 0.0]], radii: vec![10.0] };
        assert_eq!(r.project(&d).unwrap().radii[0], r.limits.r_max);
    }

    #[test]
    fn coincident_centers_split_along_x() {
        let r = robot(ActuationMode::Positions, 2);
        let d = DesignState { centers: vec![[1.0, 1.0], [1.0, 1.0]], radii: vec![0.3, 0.4] };
        let p = r.project(&d).unwrap();
        let need = 0.3 + 0.4 + r.limits.gap;
        assert!((distance(p.centers[0], p.centers[1]) - need).abs() < 1e-12);
        assert!(p.centers[0][0] < p.centers[1][0]);
        assert_eq!(p.centers[0][1], 1.0);
        assert_eq!(p.centers[1][1], 1.0);
    }

    #[test]
    fn ring_mode_shrinks_radii_instead_of_moving() {
        let r = robot(ActuationMode::Radii, 19);
        let mut d = r.ring_layout(19, 5.0).unwrap();
        d.radii.iter_mut().for_each(|x| *x = 1.0);
        let p = r.project(&d).unwrap();
        assert_eq!(p.centers, d.centers);
        assert!(r.is_feasible(&p));
    }

    #[test]
    fn ring_layout_examples() {
        let one = ring_layout(1, 5.0, 0.3, 0.1).unwrap();
        assert_eq!(one.centers, vec![[5.0, 0.0]]);
        let d = ring_layout(19, 5.0, 0.3, 0.1).unwrap();
        let adjacent = distance(d.centers[0], d.centers[1]) - 0.6;
        let closed = 2.0 * 5.0 * (std::f64::consts::PI / 19.0).sin() - 0.6;
        assert!((adjacent - closed).abs() < 1e-12);
        assert!((adjacent - 1.05).abs() < 0.01);
        assert!(ring_layout(19, 1.0, 0.3, 0.1).is_err());
    }

    #[test]
    fn ring_layout_rotation_symmetry() {
        let m = 19;
        let d = ring_layout(m, 5.0, 0.3, 0.1).unwrap();
        let th = 2.0 * std::f64::consts::PI / m as f64;
        for c in &d.centers {
            let rot = [c[0] * th.cos() - c[1] * th.sin(), c[0] * th.sin() + c[1] * th.cos()];
            assert!(d.centers.iter().any(|o| distance(*o, rot) < 1e-12));
        }
    }

    #[test]
    fn random_action_properties() {
        let limits = RobotLimits { position_rate: 0.0, radius_rate: 0.0, ..RobotLimits::default() };
        let zero = ActuationSpace::new(ActuationMode::Full, 2, &limits);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(random_action(&zero, &mut rng).rates.iter().all(|&r| r == 0.0));

        let space = ActuationSpace::new(ActuationMode::Positions, 1, &RobotLimits::default());
        let b = space.bounds[0];
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mean = (0..n).map(|_| random_action(&space, &mut rng).rates[0]).sum::<f64>() / n as f64;
        let stderr = b / 3f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * stderr, "mean {mean} vs 3 se {}", 3.0 * stderr);

        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut c = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(random_action(&space, &mut a), random_action(&space, &mut c));
        }
    }

    #[test]
    fn sampled_designs_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (mode, m) in [(ActuationMode::Radii, 19), (ActuationMode::Positions, 4), (ActuationMode::Full, 2)] {
            let r = robot(mode, m);
            for _ in 0..20 {
                let d = r.sample_design(&mut rng).unwrap();
                assert!(r.is_feasible(&d), "{mode:?}");
            }
        }
    }

    fn arb_design(m: usize) -> impl Strategy<Value = DesignState> {
        (
            proptest::collection::vec((-12.0..12.0f64, -12.0..12.0f64), m),
            proptest::collection::vec(0.0..2.0f64, m),
        )
            .prop_map(|(c, r)| DesignState { centers: c.into_iter().map(|(x, y)| [x, y]).collect(), radii: r })
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(d in arb_design(3)) {
            let r = robot(ActuationMode::Full, 3);
            if let Ok(p) = r.project(&d) {
                prop_assert!(r.is_feasible(&p));
                prop_assert_eq!(r.project(&p).unwrap(), p);
            }
        }

        #[test]
        fn trajectories_stay_feasible_and_respect_mode(
            start in arb_design(2),
            rates in proptest::collection::vec(-1.0..1.0f64, 6),
            mode_ix in 0usize..3,
        ) {
            let mode = [ActuationMode::Radii, ActuationMode::Positions, ActuationMode::Full][mode_ix];
            let r = robot(mode, 2);
            let Ok(d0) = r.project(&start) else { return Ok(()) };
            let a = ActionSpec { rates: rates.iter().zip(&r.space.bounds).map(|(u, b)| u * b).collect() };
            if let Ok(traj) = r.integrate_design(&d0, &a, 1e-2, 5) {
                for s in &traj {
                    prop_assert!(r.is_feasible(s));
                    if mode == ActuationMode::Radii { prop_assert_eq!(&s.centers, &d0.centers); }
                    if mode == ActuationMode::Positions { prop_assert_eq!(&s.radii, &d0.radii); }
                }
            }
        }
    }
}
