//! Non-uniform sinh-stretched state grids and transition-rate validity checks.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::models::ModelSpec;

/// Relative tolerance below which an inserted value snaps to an existing point.
pub const SNAP_TOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    center: f64,
    alpha: f64,
}

/// Tavella-Randall grid concentrated around `center`.
///
/// Point `i` (0-based) sits at `center + alpha*sinh(c1 + (c2-c1)*i/(count-1))`
/// with `c1 = asinh((lo-center)/alpha)`, `c2 = asinh((hi-center)/alpha)`, so
/// the endpoints are `lo` and `hi` exactly.
pub fn build_grid(center: f64, lo: f64, hi: f64, count: usize, alpha: f64) -> Result<Grid> {
    if !(lo < center && center < hi) {
        return Err(Error::Grid(format!("need lo < center < hi, got {lo}, {center}, {hi}")));
    }
    if count < 3 {
        return Err(Error::Grid(format!("need at least 3 points, got {count}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Grid(format!("alpha must be positive, got {alpha}")));
    }
    let c1 = ((lo - center) / alpha).asinh();
    let c2 = ((hi - center) / alpha).asinh();
    let last = (count - 1) as f64;
    let mut points = Vec::with_capacity(count);
    points.push(lo);
    for i in 1..count - 1 {
        let u = i as f64 / last;
        let x = center + alpha * (c1 + (c2 - c1) * u).sinh();
        points.push(x.clamp(lo, hi));
    }
    points.push(hi);
    let grid = Grid { points, center, alpha };
    assert!(grid.is_strictly_increasing(), "sinh grid lost monotonicity");
    Ok(grid)
}

impl Grid {
    /// Grid from explicit points, which must be strictly increasing.
    pub fn from_points(points: Vec<f64>, center: f64) -> Result<Grid> {
        if points.is_empty() {
            return Err(Error::Grid("empty grid".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Grid("non-finite grid point".into()));
        }
        let grid = Grid { points, center, alpha: f64::INFINITY };
        if !grid.is_strictly_increasing() {
            return Err(Error::Grid("points must be strictly increasing".into()));
        }
        Ok(grid)
    }

    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Grid> {
        if count < 2 || !(lo < hi) {
            return Err(Error::Grid(format!("bad uniform grid [{lo}, {hi}] with {count} points")));
        }
        let h = (hi - lo) / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|i| lo + h * i as f64).collect();
        points[count - 1] = hi;
        Grid::from_points(points, 0.5 * (lo + hi))
    }

    fn is_strictly_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[0] < w[1])
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of a point equal to `value` up to the snap tolerance.
    pub fn index_of(&self, value: f64) -> Option<usize> {
        let pos = self.points.partition_point(|&p| p < value);
        [pos.checked_sub(1), Some(pos)]
            .into_iter()
            .flatten()
            .filter(|&i| i < self.points.len())
            .find(|&i| snaps(self.points[i], value))
    }

    /// Inserts `value`, returning the new grid and the value's index. A value
    /// within the snap tolerance of an existing point leaves the grid as is.
    pub fn insert_point(&self, value: f64) -> Result<(Grid, usize)> {
        if !(value >= self.lo() && value <= self.hi()) {
            return Err(Error::Grid(format!("cannot insert {value} outside [{}, {}]", self.lo(), self.hi())));
        }
        if let Some(i) = self.index_of(value) {
            return Ok((self.clone(), i));
        }
        let pos = self.points.partition_point(|&p| p < value);
        let mut points = self.points.clone();
        points.insert(pos, value);
        Ok((Grid { points, center: self.center, alpha: self.alpha }, pos))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,value\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(out, "{i},{p:.16e}");
        }
        out
    }
}

fn snaps(p: f64, value: f64) -> bool {
    let scale = p.abs().max(value.abs());
    (p - value).abs() <= SNAP_TOL * scale || p == value
}

/// Rate-condition check at one interior grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct RatePointCheck {
    pub index: usize,
    pub value: f64,
    pub mu: f64,
    pub sigma2: f64,
    /// The spacing constrained by the sign of the drift.
    pub spacing: f64,
    /// Largest admissible spacing, `sigma^2/|mu|`; `None` when `mu == 0`.
    pub required: Option<f64>,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub checks: Vec<RatePointCheck>,
    pub max_spacing: f64,
    /// `min sigma^2/|mu|` over interior points with non-zero drift.
    pub min_required: f64,
    pub global_ok: bool,
}

impl RateReport {
    pub fn failing(&self) -> impl Iterator<Item = &RatePointCheck> {
        self.checks.iter().filter(|c| !c.ok)
    }

    pub fn all_ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

/// Checks the pointwise conditions that keep the interior rates non-negative,
/// plus the sufficient global condition. Only reports; never fails.
pub fn validate_rate_conditions_with(grid: &Grid, mu: impl Fn(f64) -> f64, sigma2: impl Fn(f64) -> f64) -> RateReport {
    let p = grid.points();
    let d = grid.spacings();
    let mut checks = Vec::new();
    let mut min_required = f64::INFINITY;
    for i in 1..p.len().saturating_sub(1) {
        let (m, s2) = (mu(p[i]), sigma2(p[i]));
        let (spacing, required) = if m > 0.0 {
            (d[i], Some(s2 / m))
        } else if m < 0.0 {
            (d[i - 1], Some(s2 / -m))
        } else {
            (d[i], None)
        };
        if let Some(req) = required {
            min_required = min_required.min(req);
        }
        let ok = required.is_none_or(|req| spacing <= req);
        checks.push(RatePointCheck { index: i, value: p[i], mu: m, sigma2: s2, spacing, required, ok });
    }
    let max_spacing = d.iter().copied().fold(0.0, f64::max);
    RateReport { checks, max_spacing, min_required, global_ok: max_spacing <= min_required }
}

/// Rate conditions for the variance chain of `model` on `grid`.
pub fn validate_rate_conditions(grid: &Grid, model: &ModelSpec) -> RateReport {
    validate_rate_conditions_with(grid, |y| model.mu_v(y), |y| model.sigma_v(y).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_exact_and_interior_inside() {
        let g = build_grid(0.03, 0.0003, 0.21, 50, 0.6571).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g.lo(), 0.0003);
        assert_eq!(g.hi(), 0.21);
        assert!(g.points()[1..49].iter().all(|&p| p > 0.0003 && p < 0.21));
    }

    #[test]
    fn large_alpha_is_uniform() {
        let g = build_grid(0.0, -1.0, 2.0, 40, 1e8).unwrap();
        let d = g.spacings();
        let (lo, hi) = d.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(hi / lo - 1.0 < 1e-6);
    }

    #[test]
    fn three_points() {
        let g = build_grid(1.0, 0.0, 3.0, 3, 0.5).unwrap();
        assert_eq!(g.len(), 3);
        assert!(g.points()[1] > 0.0 && g.points()[1] < 3.0);
    }

    #[test]
    fn insert_and_snap() {
        let g = build_grid(0.03, 0.0003, 0.21, 50, 0.6571).unwrap();
        let (g2, k) = g.insert_point(0.03).unwrap();
        assert_eq!(g2.len(), g.len() + 1);
        assert_eq!(g2.points()[k], 0.03);
        let (g3, k3) = g2.insert_point(0.03 * (1.0 + 1e-16)).unwrap();
        assert_eq!(g3, g2);
        assert_eq!(k3, k);
        assert!(g.insert_point(0.5).is_err());
    }

    #[test]
    fn heston_x0() {
        let x0 = 100f64.ln() - (-0.75) * (0.03 / 0.2);
        assert!((x0 - 4.717670185).abs() < 1e-9);
    }

    #[test]
    fn forced_rate_violation() {
        let g = Grid::uniform(0.0, 10.0, 6).unwrap();
        let r = validate_rate_conditions_with(&g, |_| 5.0, |_| 0.1);
        assert!(r.failing().count() == 4);
        assert!(!r.global_ok);
    }

    #[test]
    fn zero_drift_has_no_condition() {
        let g = Grid::uniform(0.0, 1.0, 5).unwrap();
        let r = validate_rate_conditions_with(&g, |_| 0.0, |_| 1e-9);
        assert!(r.all_ok());
        assert!(r.checks.iter().all(|c| c.required.is_none()));
    }
}
