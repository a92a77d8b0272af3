//! Gridded univariate posterior densities with summary statistics.

use statrs::function::erf::erfc;

use crate::error::{GmrfError, Result};

/// Default number of abscissae for latent and hyperparameter marginals.
pub const MARGINAL_POINTS: usize = 75;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMarginal {
    /// `(abscissa, density)` pairs with ascending abscissae.
    pub grid: Vec<(f64, f64)>,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// Weighted Gaussian component `(weight, mean, variance)`.
pub type Component = (f64, f64, f64);

fn mixture_cdf(components: &[Component], x: f64) -> f64 {
    components
        .iter()
        .map(|&(w, m, v)| if v > 0.0 { w * normal_cdf((x - m) / v.sqrt()) } else if x >= m { w } else { 0.0 })
        .sum()
}

/// Solves `F(x) = p` by bisection on a bracketing interval.
fn invert_cdf(f: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Trapezoid integral of a gridded function.
pub fn trapezoid(grid: &[(f64, f64)]) -> f64 {
    grid.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

impl PosteriorMarginal {
    /// Mixture of Gaussians on an evenly spaced grid spanning `mean ± 5 sd` of
    /// every component. Summaries are exact mixture moments and quantiles.
    pub fn from_mixture(components: &[Component], n_points: usize) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.is_empty() || !(total > 0.0) {
            return Err(GmrfError::EmptyInput("mixture has no weight".into()));
        }
        let comps: Vec<Component> = components
            .iter()
            .filter(|c| c.0 > 0.0)
            .map(|&(w, m, v)| (w / total, m, v.max(0.0)))
            .collect();
        let mean: f64 = comps.iter().map(|c| c.0 * c.1).sum();
        let second: f64 = comps.iter().map(|c| c.0 * (c.2 + c.1 * c.1)).sum();
        let var = (second - mean * mean).max(0.0);
        let lo = comps.iter().map(|c| c.1 - 5.0 * c.2.sqrt()).fold(f64::INFINITY, f64::min);
        let hi = comps.iter().map(|c| c.1 + 5.0 * c.2.sqrt()).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (mean - 1e-12, mean + 1e-12) };
        let n = n_points.max(3);
        let step = (hi - lo) / (n - 1) as f64;
        let mut grid: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let x = lo + step * k as f64;
                let d = comps.iter().filter(|c| c.2 > 0.0).map(|&(w, m, v)| w * normal_pdf(x, m, v)).sum();
                (x, d)
            })
            .collect();
        normalize(&mut grid);
        let q = |p: f64| invert_cdf(|x| mixture_cdf(&comps, x), p, lo - 1.0, hi + 1.0);
        Ok(Self { grid, mean, sd: var.sqrt(), q025: q(0.025), q50: q(0.5), q975: q(0.975) })
    }

    pub fn gaussian(mean: f64, var: f64, n_points: usize) -> Result<Self> {
        Self::from_mixture(&[(1.0, mean, var)], n_points)
    }

    /// Builds a marginal from a density tabulated on an ascending grid;
    /// summaries are computed from the normalized grid by trapezoids.
    pub fn from_grid(mut grid: Vec<(f64, f64)>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(GmrfError::EmptyInput("density grid needs at least two points".into()));
        }
        if grid.windows(2).any(|w| w[1].0 <= w[0].0) || grid.iter().any(|p| !(p.1 >= 0.0)) {
            return Err(GmrfError::InvalidInput("density grid must be ascending and nonnegative".into()));
        }
        if !(trapezoid(&grid) > 0.0) {
            return Err(GmrfError::InvalidInput("density grid has zero mass".into()));
        }
        normalize(&mut grid);
        let mean = trapezoid(&grid.iter().map(|&(x, d)| (x, x * d)).collect::<Vec<_>>());
        let var = trapezoid(&grid.iter().map(|&(x, d)| (x, (x - mean) * (x - mean) * d)).collect::<Vec<_>>());
        let mut m = Self { grid, mean, sd: var.max(0.0).sqrt(), q025: 0.0, q50: 0.0, q975: 0.0 };
        m.q025 = m.grid_quantile(0.025);
        m.q50 = m.grid_quantile(0.5);
        m.q975 = m.grid_quantile(0.975);
        Ok(m)
    }

    /// Trapezoid integral of the gridded density.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid)
    }

    /// Cumulative trapezoid integrals at each abscissa.
    pub fn cdf(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.grid.windows(2) {
            acc += 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1);
            out.push(acc);
        }
        out
    }

    /// Quantile from the piecewise-linear density on the grid.
    pub fn grid_quantile(&self, p: f64) -> f64 {
        let cdf = self.cdf();
        let total = *cdf.last().unwrap_or(&1.0);
        let target = p * total;
        for k in 1..cdf.len() {
            if cdf[k] >= target {
                let (x0, d0) = self.grid[k - 1];
                let (x1, d1) = self.grid[k];
                let h = x1 - x0;
                let need = target - cdf[k - 1];
                // the density is linear on the segment, so the CDF is quadratic
                let slope = (d1 - d0) / h;
                let t = if slope.abs() < 1e-300 * (1.0 + d0.abs()) || slope == 0.0 {
                    if d0 > 0.0 { need / d0 } else { 0.5 * h }
                } else {
                    let disc = (d0 * d0 + 2.0 * slope * need).max(0.0);
                    (disc.sqrt() - d0) / slope
                };
                return x0 + t.clamp(0.0, h);
            }
        }
        self.grid.last().map(|g| g.0).unwrap_or(0.0)
    }

    /// Linear interpolation of the density, zero outside the grid.
    pub fn density_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if g.is_empty() || x < g[0].0 || x > g[g.len() - 1].0 {
            return 0.0;
        }
        match g.binary_search_by(|p| p.0.partial_cmp(&x).expect("finite abscissae")) {
            Ok(k) => g[k].1,
            Err(k) => {
                let (x0, d0) = g[k - 1];
                let (x1, d1) = g[k];
                d0 + (d1 - d0) * (x - x0) / (x1 - x0)
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.grid.first().map(|g| g.0).unwrap_or(0.0), self.grid.last().map(|g| g.0).unwrap_or(0.0))
    }
}

fn normalize(grid: &mut [(f64, f64)]) {
    let z = trapezoid(grid);
    if z > 0.0 {
        grid.iter_mut().for_each(|p| p.1 /= z);
    }
}
