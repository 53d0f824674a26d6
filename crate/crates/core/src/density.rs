//! Densities on fixed equidistant grids: kernel density estimation,
//! distances and moment summaries.
//!
//! Every integral in this module is a trapezoid rule on the grid nodes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the trapezoid mass of a density read from outside the crate.
pub const MASS_TOLERANCE: f64 = 1e-2;

/// Kernel contributions beyond this many bandwidths are dropped. The Gaussian
/// kernel is below 2e-22 of its peak there.
const KERNEL_CUTOFF: f64 = 10.0;

/// `N` equidistant nodes spanning `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct Grid {
    lo: f64,
    hi: f64,
    n_points: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    lo: f64,
    hi: f64,
    n_points: usize,
}

impl TryFrom<RawGrid> for Grid {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        Grid::new(raw.lo, raw.hi, raw.n_points)
    }
}

impl From<Grid> for RawGrid {
    fn from(grid: Grid) -> Self {
        RawGrid {
            lo: grid.lo,
            hi: grid.hi,
            n_points: grid.n_points,
        }
    }
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidGrid(format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        if n_points < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {n_points}")));
        }
        Ok(Grid { lo, hi, n_points })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    /// Trapezoid rule of `values` over the grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_points);
        let interior: f64 = values[1..values.len() - 1].iter().sum();
        self.spacing() * (interior + 0.5 * (values[0] + values[values.len() - 1]))
    }

    /// Running trapezoid integral; the first entry is 0.
    pub fn cumulative(&self, values: &[f64]) -> Vec<f64> {
        let half = 0.5 * self.spacing();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(values.len());
        out.push(0.0);
        for w in values.windows(2) {
            acc += half * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    /// Piecewise-linear interpolation of node values at `x`; zero outside the grid.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        if !(self.lo..=self.hi).contains(&x) {
            return 0.0;
        }
        let pos = (x - self.lo) / self.spacing();
        let j = (pos.floor() as usize).min(self.n_points - 2);
        let frac = pos - j as f64;
        values[j] * (1.0 - frac) + values[j + 1] * frac
    }
}

/// Density heights at the nodes of a [`Grid`].
///
/// Construction checks shape, finiteness and nonnegativity. Unit mass is
/// checked separately with [`DensityGrid::check_mass`] because kernel
/// estimates on coarse grids legitimately deviate from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidDensity(format!(
                "expected {} heights, got {}",
                grid.n_points(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidDensity(format!("height {bad} is negative or not finite")));
        }
        Ok(DensityGrid { grid, values })
    }

    /// Evaluates `pdf` at every grid node.
    pub fn from_fn(grid: Grid, pdf: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().into_iter().map(pdf).collect();
        DensityGrid::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn check_mass(&self, tolerance: f64) -> Result<()> {
        let mass = self.mass();
        if (mass - 1.0).abs() > tolerance {
            return Err(Error::InvalidDensity(format!(
                "trapezoid mass {mass:.6} outside 1 ± {tolerance}"
            )));
        }
        Ok(())
    }

    /// Rescaled copy with unit trapezoid mass.
    pub fn normalized(&self) -> Result<Self> {
        let mass = self.mass();
        if mass <= 0.0 || !mass.is_finite() {
            return Err(Error::InvalidDensity("density has no mass on its grid".into()));
        }
        Ok(DensityGrid {
            grid: self.grid,
            values: self.values.iter().map(|v| v / mass).collect(),
        })
    }

    fn ensure_same_grid(&self, other: &DensityGrid) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

/// Raw observations `x_1..x_M` of one variable at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    observations: Vec<f64>,
}

impl SampleSet {
    pub fn new(observations: Vec<f64>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidSample("sample is empty".into()));
        }
        if observations.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSample("sample contains non-finite values".into()));
        }
        Ok(SampleSet { observations })
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.observations.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.observations.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Linear-interpolation quantile between order statistics ("type 7").
///
/// Partially reorders `xs` by selection instead of sorting it.
fn quantile_select(xs: &mut [f64], prob: f64) -> f64 {
    let h = (xs.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let (_, x_lo, right) = xs.select_nth_unstable_by(lo, f64::total_cmp);
    let x_lo = *x_lo;
    let x_hi = right.iter().copied().min_by(f64::total_cmp).unwrap_or(x_lo);
    x_lo + (h - lo as f64) * (x_hi - x_lo)
}

/// Rule-of-thumb bandwidth `0.9 · min(σ̂, IQR/1.34) · M^(-1/5)`.
pub fn bandwidth(samples: &SampleSet) -> Result<f64> {
    let xs = samples.observations();
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidSample(format!("bandwidth needs at least 2 observations, got {n}")));
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let mut buf = xs.to_vec();
    let iqr = quantile_select(&mut buf, 0.75) - quantile_select(&mut buf, 0.25);
    let spread = var.sqrt().min(iqr / 1.34);
    if spread <= 0.0 {
        return Err(Error::DegenerateSample);
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Gaussian kernel density estimate at the grid nodes, without any mass check.
///
/// Each observation is spread from its nearest node outwards with the
/// multiplicative recurrence `K(z+δ) = K(z)·e^{-zδ-δ²/2}`, so only two
/// exponentials are evaluated per observation.
pub fn kde_values(samples: &SampleSet, grid: &Grid, bandwidth: f64) -> Result<Vec<f64>> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidSample(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let n = grid.n_points();
    let ds = grid.spacing();
    let delta = ds / bandwidth;
    let step = (-delta * delta).exp();
    let reach = (KERNEL_CUTOFF / delta).ceil() as usize;
    let mut acc = vec![0.0; n];

    for &x in samples.observations() {
        let pos = ((x - grid.lo()) / ds).round();
        let j0 = pos.clamp(0.0, (n - 1) as f64) as usize;
        let z0 = (grid.point(j0) - x) / bandwidth;
        if z0.abs() > KERNEL_CUTOFF + delta {
            continue;
        }
        let k0 = (-0.5 * z0 * z0).exp();
        acc[j0] += k0;

        // Moving right, z grows by delta each step.
        let mut k = k0;
        let mut ratio = (-z0 * delta - 0.5 * delta * delta).exp();
        for slot in acc.iter_mut().take(n.min(j0 + reach + 1)).skip(j0 + 1) {
            k *= ratio;
            if k == 0.0 {
                break;
            }
            *slot += k;
            ratio *= step;
        }

        let mut k = k0;
        let mut ratio = (z0 * delta - 0.5 * delta * delta).exp();
        for j in (j0.saturating_sub(reach)..j0).rev() {
            k *= ratio;
            if k == 0.0 {
                break;
            }
            acc[j] += k;
            ratio *= step;
        }
    }

    let scale = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * PI).sqrt());
    acc.iter_mut().for_each(|v| *v *= scale);
    Ok(acc)
}

/// Gaussian kernel density estimate on `grid`.
///
/// Fails with [`Error::GridTooNarrow`] when less than 99% of the mass lands on
/// the grid; use [`kde_values`] to keep such estimates anyway.
pub fn kde(samples: &SampleSet, grid: &Grid, bandwidth: f64) -> Result<DensityGrid> {
    let values = kde_values(samples, grid, bandwidth)?;
    let density = DensityGrid::new(*grid, values)?;
    let mass = density.mass();
    if mass < 1.0 - MASS_TOLERANCE {
        return Err(Error::GridTooNarrow { mass });
    }
    Ok(density)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    L1,
    L2,
    Linf,
    Hellinger,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 4] = [
        DistanceKind::L1,
        DistanceKind::L2,
        DistanceKind::Linf,
        DistanceKind::Hellinger,
    ];
}

/// Distance between two densities on the same grid.
///
/// `Hellinger` is `∫(√f − √g)²`, without the conventional factor or root.
pub fn distance(f: &DensityGrid, g: &DensityGrid, kind: DistanceKind) -> Result<f64> {
    f.ensure_same_grid(g)?;
    let grid = f.grid();
    let pairs = f.values().iter().zip(g.values());
    let d = match kind {
        DistanceKind::L1 => grid.integrate(&pairs.map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()),
        DistanceKind::L2 => grid
            .integrate(&pairs.map(|(a, b)| (a - b).powi(2)).collect::<Vec<_>>())
            .sqrt(),
        DistanceKind::Linf => pairs.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        DistanceKind::Hellinger => grid.integrate(
            &pairs
                .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
                .collect::<Vec<_>>(),
        ),
    };
    Ok(d)
}

/// Normalized trapezoid CDF at the nodes.
fn cdf(f: &DensityGrid) -> Result<Vec<f64>> {
    let normalized = f.normalized()?;
    let mut cdf = f.grid().cumulative(normalized.values());
    // Pin the last node to exactly 1.
    let last = *cdf.last().unwrap();
    cdf.iter_mut().for_each(|c| *c /= last);
    Ok(cdf)
}

/// Order-1 Wasserstein distance `∫|F − G|` between unit-mass renormalizations.
pub fn wasserstein1(f: &DensityGrid, g: &DensityGrid) -> Result<f64> {
    f.ensure_same_grid(g)?;
    let cf = cdf(f)?;
    let cg = cdf(g)?;
    let gaps: Vec<f64> = cf.iter().zip(&cg).map(|(a, b)| (a - b).abs()).collect();
    Ok(f.grid().integrate(&gaps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub sd: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub skewness: f64,
    /// Kurtosis minus 3, so a normal density scores 0.
    pub excess_kurtosis: f64,
}

fn cdf_quantile(grid: &Grid, cdf: &[f64], prob: f64) -> f64 {
    let j = cdf.iter().position(|&c| c >= prob).unwrap_or(cdf.len() - 1);
    if j == 0 {
        return grid.point(0);
    }
    let (c0, c1) = (cdf[j - 1], cdf[j]);
    let frac = if c1 > c0 { (prob - c0) / (c1 - c0) } else { 0.0 };
    grid.point(j - 1) + frac * grid.spacing()
}

pub fn moments(f: &DensityGrid) -> Result<MomentSummary> {
    let density = f.normalized()?;
    let grid = density.grid();
    let xs = grid.points();
    let vals = density.values();
    let weighted = |g: &dyn Fn(f64) -> f64| -> f64 {
        let integrand: Vec<f64> = xs.iter().zip(vals).map(|(x, v)| g(*x) * v).collect();
        grid.integrate(&integrand)
    };
    let mean = weighted(&|x| x);
    let var = weighted(&|x| (x - mean).powi(2));
    let sd = var.sqrt();
    let (skewness, excess_kurtosis) = if sd > 0.0 {
        (
            weighted(&|x| (x - mean).powi(3)) / sd.powi(3),
            weighted(&|x| (x - mean).powi(4)) / var.powi(2) - 3.0,
        )
    } else {
        (0.0, 0.0)
    };
    let cdf = cdf(&density)?;
    Ok(MomentSummary {
        mean,
        sd,
        q25: cdf_quantile(grid, &cdf, 0.25),
        median: cdf_quantile(grid, &cdf, 0.5),
        q75: cdf_quantile(grid, &cdf, 0.75),
        skewness,
        excess_kurtosis,
    })
}

/// Standard normal density.
pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = (x - mean) / variance.sqrt();
    (-0.5 * z * z).exp() / (2.0 * PI * variance).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn normal_on(lo: f64, hi: f64, n: usize, mean: f64) -> DensityGrid {
        DensityGrid::from_fn(Grid::new(lo, hi, n).unwrap(), |x| normal_pdf(x, mean, 1.0)).unwrap()
    }

    #[test]
    fn grid_rejects_bad_bounds() {
        assert!(Grid::new(1.0, 1.0, 10).is_err());
        assert!(Grid::new(0.0, 1.0, 1).is_err());
        assert!(Grid::new(f64::NAN, 1.0, 3).is_err());
        let g = Grid::new(0.0, 1.0, 11).unwrap();
        assert_abs_diff_eq!(g.spacing(), 0.1);
        assert_eq!(g.point(10), 1.0);
    }

    #[test]
    fn density_rejects_negative_heights() {
        let g = Grid::new(0.0, 1.0, 3).unwrap();
        assert!(DensityGrid::new(g, vec![1.0, -0.1, 1.0]).is_err());
        assert!(DensityGrid::new(g, vec![1.0, 1.0]).is_err());
        assert!(DensityGrid::new(g, vec![1.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn bandwidth_of_one_to_five() {
        let s = SampleSet::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        // 0.9 * min(1.5811, 2/1.34) * 5^-0.2
        let expected = 0.9 * (2.0f64 / 1.34) * 5f64.powf(-0.2);
        assert_abs_diff_eq!(bandwidth(&s).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(bandwidth(&s).unwrap(), 0.9735, epsilon = 1e-4);
    }

    #[test]
    fn bandwidth_constant_sample_is_degenerate() {
        let s = SampleSet::new(vec![3.0; 10]).unwrap();
        assert!(matches!(bandwidth(&s), Err(Error::DegenerateSample)));
        let one = SampleSet::new(vec![3.0]).unwrap();
        assert!(bandwidth(&one).is_err());
    }

    proptest::proptest! {
        #[test]
        fn quantile_select_matches_sorted_type7(
            xs in proptest::collection::vec(-1e3f64..1e3, 2..60),
            prob in 0.0f64..=1.0,
        ) {
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            let h = (sorted.len() - 1) as f64 * prob;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            let expected = sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]);
            let mut buf = xs.clone();
            proptest::prop_assert_eq!(quantile_select(&mut buf, prob), expected);
        }
    }

    #[test]
    fn bandwidth_scales_with_data() {
        let xs = vec![0.3, -1.2, 2.2, 0.9, 4.1, -0.4, 1.7];
        let s = SampleSet::new(xs.clone()).unwrap();
        let scaled = SampleSet::new(xs.iter().map(|x| 2.5 * x).collect()).unwrap();
        assert_abs_diff_eq!(
            bandwidth(&scaled).unwrap(),
            2.5 * bandwidth(&s).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn kde_of_single_point_is_the_kernel() {
        let grid = Grid::new(-5.0, 5.0, 101).unwrap();
        let s = SampleSet::new(vec![0.0]).unwrap();
        let d = kde(&s, &grid, 1.0).unwrap();
        for (x, v) in grid.points().iter().zip(d.values()) {
            assert!((v - normal_pdf(*x, 0.0, 1.0)).abs() <= 1e-12);
        }
        assert_abs_diff_eq!(d.values()[50], 0.39894, epsilon = 1e-5);
    }

    #[test]
    fn kde_two_points_midpoint() {
        let grid = Grid::new(-5.0, 5.0, 11).unwrap();
        let s = SampleSet::new(vec![-1.0, 1.0]).unwrap();
        let d = kde(&s, &grid, 1.0).unwrap();
        // Direct summation: (φ(1) + φ(-1)) / 2
        let direct = 0.5 * (normal_pdf(0.0, 1.0, 1.0) + normal_pdf(0.0, -1.0, 1.0));
        assert_abs_diff_eq!(d.values()[5], direct, epsilon = 1e-14);
        assert_abs_diff_eq!(d.values()[5], 0.24197, epsilon = 1e-5);
    }

    #[test]
    fn kde_matches_direct_summation_off_grid() {
        let grid = Grid::new(-3.0, 4.0, 30).unwrap();
        let xs = vec![-2.7, -0.31, 0.05, 0.9, 1.41, 2.2, 3.99, 5.5, -4.0];
        let s = SampleSet::new(xs.clone()).unwrap();
        let bw = 0.37;
        let fast = kde_values(&s, &grid, bw).unwrap();
        for (i, x) in grid.points().iter().enumerate() {
            let direct: f64 = xs.iter().map(|xj| normal_pdf(*x, *xj, bw * bw)).sum::<f64>()
                / xs.len() as f64;
            assert!((fast[i] - direct).abs() <= 1e-13 * direct.max(1.0), "node {i}");
        }
    }

    #[test]
    fn kde_on_narrow_grid_is_flagged() {
        let grid = Grid::new(0.0, 1.0, 30).unwrap();
        let s = SampleSet::new(vec![5.0, 6.0, 7.0]).unwrap();
        assert!(matches!(kde(&s, &grid, 0.5), Err(Error::GridTooNarrow { .. })));
    }

    #[test]
    fn kde_length_matches_grid() {
        let grid = Grid::new(-4.0, 4.0, 30).unwrap();
        let s = SampleSet::new(vec![0.1, -0.2, 0.4]).unwrap();
        assert_eq!(kde(&s, &grid, 0.8).unwrap().values().len(), 30);
    }

    #[test]
    fn distance_identity_and_mismatch() {
        let f = normal_on(-6.0, 6.0, 30, 0.0);
        for kind in DistanceKind::ALL {
            assert_eq!(distance(&f, &f, kind).unwrap(), 0.0);
        }
        let uniform =
            DensityGrid::new(Grid::new(0.0, 2.0, 21).unwrap(), vec![0.5; 21]).unwrap();
        assert_eq!(distance(&uniform, &uniform, DistanceKind::L2).unwrap(), 0.0);
        let other = normal_on(-5.0, 6.0, 30, 0.0);
        assert!(matches!(distance(&f, &other, DistanceKind::L1), Err(Error::GridMismatch)));
        assert!(matches!(wasserstein1(&f, &other), Err(Error::GridMismatch)));
    }

    #[test]
    fn l2_between_shifted_normals_matches_fine_quadrature() {
        // Oracle: plain trapezoid sum of (φ(x) − φ(x−1))² on 10^5 nodes.
        let n = 100_000;
        let h = 12.0 / (n - 1) as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = -6.0 + i as f64 * h;
            let d = normal_pdf(x, 0.0, 1.0) - normal_pdf(x, 1.0, 1.0);
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            acc += w * d * d * h;
        }
        let fine = acc.sqrt();
        // Frozen value of the oracle above; analytically sqrt((1 − e^{−1/4})/√π).
        assert_abs_diff_eq!(fine, 0.353_268_0, epsilon = 1e-6);

        let f = normal_on(-6.0, 6.0, 30, 0.0);
        let g = normal_on(-6.0, 6.0, 30, 1.0);
        let coarse = distance(&f, &g, DistanceKind::L2).unwrap();
        assert_abs_diff_eq!(coarse, 0.353_268_0, epsilon = 1e-6);
    }

    #[test]
    fn wasserstein_of_shifted_uniforms() {
        let grid = Grid::new(-1.0, 3.0, 401).unwrap();
        let f = DensityGrid::from_fn(grid, |x| if (0.0..=1.0).contains(&x) { 1.0 } else { 0.0 })
            .unwrap();
        let g = DensityGrid::from_fn(grid, |x| if (0.5..=1.5).contains(&x) { 1.0 } else { 0.0 })
            .unwrap();
        let w = wasserstein1(&f, &g).unwrap();
        assert!((w - 0.5).abs() <= 2.0 * grid.spacing(), "w = {w}");
        assert_eq!(wasserstein1(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_of_shifted_normals() {
        let f = normal_on(-7.0, 9.0, 200, 0.0);
        let g = normal_on(-7.0, 9.0, 200, 2.0);
        let w = wasserstein1(&f, &g).unwrap();
        assert!((w - 2.0).abs() <= 2.0 * f.grid().spacing(), "w = {w}");
    }

    #[test]
    fn moments_of_standard_normal() {
        let f = normal_on(-6.0, 6.0, 200, 0.0);
        let m = moments(&f).unwrap();
        assert_abs_diff_eq!(m.mean, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.skewness, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.sd, 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(m.excess_kurtosis, 0.0, epsilon = 0.02);
        assert_abs_diff_eq!(m.median, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.q25, -0.6745, epsilon = 0.01);
        assert_abs_diff_eq!(m.q75, 0.6745, epsilon = 0.01);
    }

    #[test]
    fn narrow_density_median() {
        let grid = Grid::new(0.0, 10.0, 101).unwrap();
        let mut values = vec![0.0; 101];
        values[37] = 10.0;
        let f = DensityGrid::new(grid, values).unwrap();
        let m = moments(&f).unwrap();
        assert_abs_diff_eq!(m.median, 3.7, epsilon = 1e-9);
        assert_abs_diff_eq!(m.mean, 3.7, epsilon = 1e-9);
    }

    #[test]
    fn normalized_requires_mass() {
        let grid = Grid::new(0.0, 1.0, 5).unwrap();
        let zero = DensityGrid::new(grid, vec![0.0; 5]).unwrap();
        assert!(zero.normalized().is_err());
        assert!(moments(&zero).is_err());
    }

    #[test]
    fn interpolation_hits_nodes() {
        let grid = Grid::new(0.0, 4.0, 5).unwrap();
        let v = [0.0, 1.0, 4.0, 9.0, 16.0];
        assert_eq!(grid.interpolate(&v, 2.0), 4.0);
        assert_eq!(grid.interpolate(&v, 2.5), 6.5);
        assert_eq!(grid.interpolate(&v, 4.0), 16.0);
        assert_eq!(grid.interpolate(&v, 4.5), 0.0);
    }
}
