//! Posterior marginal densities: tabulated grids, Gaussians and Gaussian mixtures.

use alloc::vec::Vec;

use crate::math::{exp, ln, normal_ln_pdf, sqrt, std_normal_cdf, std_normal_quantile};

use super::FitError;

/// Minimum number of abscissae a grid carries.
pub const MIN_GRID_POINTS: usize = 31;

/// Scale on which a grid's abscissae live.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scale {
    Identity,
    /// Abscissae are the logarithm of the reported parameter.
    Log,
}

/// Density tabulated on strictly increasing abscissae; linear between nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalGrid {
    x: Vec<f64>,
    density: Vec<f64>,
    scale: Scale,
}

impl MarginalGrid {
    pub fn new(x: Vec<f64>, density: Vec<f64>, scale: Scale) -> Result<Self, FitError> {
        if x.len() != density.len() || x.len() < MIN_GRID_POINTS {
            return Err(FitError::InvalidInput("grid needs matching abscissae and densities, at least 31 points"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidInput("grid abscissae must be finite and strictly increasing"));
        }
        if density.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(FitError::InvalidInput("grid densities must be finite and non-negative"));
        }
        Ok(Self { x, density, scale })
    }

    /// Tabulates `f` on `n` equally spaced points of `[lo, hi]`.
    pub fn tabulate(lo: f64, hi: f64, n: usize, scale: Scale, f: impl Fn(f64) -> f64) -> Result<Self, FitError> {
        let x = linspace(lo, hi, n);
        let density = x.iter().map(|&v| f(v)).collect();
        Self::new(x, density, scale)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn lower(&self) -> f64 {
        self.x[0]
    }

    pub fn upper(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Trapezoid integral of the density.
    pub fn integral(&self) -> f64 {
        self.x.windows(2).zip(self.density.windows(2)).map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1])).sum()
    }

    pub fn normalized(mut self) -> Self {
        let z = self.integral();
        if z > 0.0 {
            self.density.iter_mut().for_each(|d| *d /= z);
        }
        self
    }

    /// Linear interpolation, zero outside the grid.
    pub fn density_at(&self, v: f64) -> f64 {
        if !(v >= self.lower() && v <= self.upper()) {
            return 0.0;
        }
        let k = self.x.partition_point(|&a| a <= v).clamp(1, self.x.len() - 1);
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let t = (v - x0) / (x1 - x0);
        self.density[k - 1] * (1.0 - t) + self.density[k] * t
    }

    /// Mean and standard deviation of the piecewise-linear density.
    pub fn moments(&self) -> (f64, f64) {
        let z = self.integral();
        let (mut m1, mut m2) = (0.0, 0.0);
        for (x, d) in self.x.windows(2).zip(self.density.windows(2)) {
            // Exact moments of a linear segment.
            let h = x[1] - x[0];
            let (a, b) = (x[0], x[1]);
            let (p, q) = (d[0], d[1]);
            m1 += h * (p * (2.0 * a + b) + q * (a + 2.0 * b)) / 6.0;
            m2 += h * (p * (3.0 * a * a + 2.0 * a * b + b * b) + q * (a * a + 2.0 * a * b + 3.0 * b * b)) / 12.0;
        }
        let mean = m1 / z;
        let var = (m2 / z - mean * mean).max(0.0);
        (mean, sqrt(var))
    }

    pub fn mean(&self) -> f64 {
        self.moments().0
    }

    pub fn sd(&self) -> f64 {
        self.moments().1
    }

    /// Abscissa of the largest tabulated density.
    pub fn mode(&self) -> f64 {
        let k = (0..self.len()).fold(0, |best, i| if self.density[i] > self.density[best] { i } else { best });
        self.x[k]
    }

    /// Quantile of the piecewise-linear density, exact within each segment.
    pub fn quantile(&self, prob: f64) -> f64 {
        let z = self.integral();
        let target = prob.clamp(0.0, 1.0) * z;
        let mut acc = 0.0;
        for (x, d) in self.x.windows(2).zip(self.density.windows(2)) {
            let h = x[1] - x[0];
            let mass = 0.5 * h * (d[0] + d[1]);
            if acc + mass >= target && mass > 0.0 {
                // Solve p s + (q - p) s² / (2h) = r for the offset s.
                let r = target - acc;
                let (p, q) = (d[0], d[1]);
                let slope = (q - p) / h;
                let s = if slope.abs() < 1e-300 {
                    r / p
                } else {
                    let disc = (p * p + 2.0 * slope * r).max(0.0);
                    2.0 * r / (p + sqrt(disc))
                };
                return x[0] + s.clamp(0.0, h);
            }
            acc += mass;
        }
        self.upper()
    }

    /// Largest absolute density difference at this grid's abscissae.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.x.iter().zip(&self.density).map(|(&v, &d)| (d - other.density_at(v)).abs()).fold(0.0, f64::max)
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect()
}

/// One weighted Gaussian inside a mixture marginal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Posterior marginal of one named quantity inside a conditional fit.
#[derive(Clone, Debug, PartialEq)]
pub enum Marginal {
    Gaussian { mean: f64, sd: f64 },
    /// Normalized weights; components below `1e-12` weight are dropped on construction.
    Mixture(Vec<Component>),
    Grid(MarginalGrid),
}

impl Marginal {
    pub fn mixture(mut components: Vec<Component>) -> Self {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        components.iter_mut().for_each(|c| c.weight /= total);
        components.retain(|c| c.weight >= 1e-12);
        let kept: f64 = components.iter().map(|c| c.weight).sum();
        components.iter_mut().for_each(|c| c.weight /= kept);
        Marginal::Mixture(components)
    }

    pub fn scale(&self) -> Scale {
        match self {
            Marginal::Grid(g) => g.scale(),
            _ => Scale::Identity,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal::Gaussian { mean, .. } => *mean,
            Marginal::Mixture(cs) => cs.iter().map(|c| c.weight * c.mean).sum(),
            Marginal::Grid(g) => g.mean(),
        }
    }

    pub fn sd(&self) -> f64 {
        match self {
            Marginal::Gaussian { sd, .. } => *sd,
            Marginal::Mixture(cs) => {
                let m = self.mean();
                let second: f64 = cs.iter().map(|c| c.weight * (c.sd * c.sd + c.mean * c.mean)).sum();
                sqrt((second - m * m).max(0.0))
            }
            Marginal::Grid(g) => g.sd(),
        }
    }

    pub fn density_at(&self, v: f64) -> f64 {
        match self {
            Marginal::Gaussian { mean, sd } => gaussian_density(v, *mean, *sd),
            Marginal::Mixture(cs) => cs.iter().map(|c| c.weight * gaussian_density(v, c.mean, c.sd)).sum(),
            Marginal::Grid(g) => g.density_at(v),
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match self {
            Marginal::Gaussian { mean, sd } => gaussian_cdf(v, *mean, *sd),
            Marginal::Mixture(cs) => cs.iter().map(|c| c.weight * gaussian_cdf(v, c.mean, c.sd)).sum(),
            Marginal::Grid(g) => {
                let z = g.integral();
                let mut acc = 0.0;
                for (x, d) in g.x.windows(2).zip(g.density.windows(2)) {
                    if v <= x[0] {
                        break;
                    }
                    let b = v.min(x[1]);
                    let db = d[0] + (d[1] - d[0]) * (b - x[0]) / (x[1] - x[0]);
                    acc += 0.5 * (b - x[0]) * (d[0] + db);
                }
                acc / z
            }
        }
    }

    /// Interval holding all but `tail` probability in each tail.
    pub fn support(&self, tail: f64) -> (f64, f64) {
        match self {
            Marginal::Gaussian { mean, sd } => {
                let z = -std_normal_quantile(tail);
                (mean - z * sd, mean + z * sd)
            }
            Marginal::Mixture(cs) => {
                let z = -std_normal_quantile(tail);
                cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    (lo.min(c.mean - z * c.sd), hi.max(c.mean + z * c.sd))
                })
            }
            Marginal::Grid(g) => (g.lower(), g.upper()),
        }
    }

    /// Tabulates the marginal on `n` points spanning its support.
    pub fn to_grid(&self, n: usize) -> Result<MarginalGrid, FitError> {
        match self {
            Marginal::Grid(g) => Ok(g.clone()),
            _ => {
                let (lo, hi) = self.support(1e-9);
                MarginalGrid::tabulate(lo, hi, n, Scale::Identity, |v| self.density_at(v))
            }
        }
    }
}

fn gaussian_density(v: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        exp(normal_ln_pdf(v, mean, 1.0 / (sd * sd)))
    } else {
        0.0
    }
}

fn gaussian_cdf(v: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        std_normal_cdf((v - mean) / sd)
    } else if v >= mean {
        1.0
    } else {
        0.0
    }
}

/// Strictly monotone reparameterization of a marginal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    Identity,
    Exp,
    Ln,
    Affine { scale: f64, shift: f64 },
}

impl Transform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Exp => exp(v),
            Transform::Ln => ln(v),
            Transform::Affine { scale, shift } => scale * v + shift,
        }
    }

    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Exp => exp(v),
            Transform::Ln => 1.0 / v,
            Transform::Affine { scale, .. } => scale,
        }
    }

    fn output_scale(self, input: Scale) -> Scale {
        match (self, input) {
            (Transform::Exp, Scale::Log) => Scale::Identity,
            (Transform::Ln, Scale::Identity) => Scale::Log,
            (_, s) => s,
        }
    }
}

/// Change of variables `y = map(x)` applied node by node: the density at
/// `map(x_i)` is `p(x_i) / |map'(x_i)|`.
pub fn transform_marginal(grid: &MarginalGrid, map: Transform) -> Result<MarginalGrid, FitError> {
    if map == Transform::Identity {
        return Ok(grid.clone());
    }
    let y: Vec<f64> = grid.x.iter().map(|&v| map.apply(v)).collect();
    let jac: Vec<f64> = grid.x.iter().map(|&v| map.derivative(v).abs()).collect();
    if y.iter().chain(&jac).any(|v| !v.is_finite()) || jac.iter().any(|&j| j == 0.0) {
        return Err(FitError::NonMonotone);
    }
    let increasing = y.windows(2).all(|w| w[1] > w[0]);
    let decreasing = y.windows(2).all(|w| w[1] < w[0]);
    if !increasing && !decreasing {
        return Err(FitError::NonMonotone);
    }
    let mut pairs: Vec<(f64, f64)> = y.into_iter().zip(grid.density.iter().zip(&jac).map(|(d, j)| d / j)).collect();
    if decreasing {
        pairs.reverse();
    }
    let (x, density) = pairs.into_iter().unzip();
    MarginalGrid::new(x, density, map.output_scale(grid.scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn std_normal_grid(n: usize) -> MarginalGrid {
        MarginalGrid::tabulate(-8.0, 8.0, n, Scale::Log, |v| gaussian_density(v, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn rejects_short_or_unsorted_grids() {
        assert!(MarginalGrid::new(vec![0.0, 1.0], vec![1.0, 1.0], Scale::Identity).is_err());
        let mut x = linspace(0.0, 1.0, 40);
        x.swap(3, 4);
        assert!(MarginalGrid::new(x, vec![1.0; 40], Scale::Identity).is_err());
    }

    #[test]
    fn moments_and_quantiles_of_a_normal_grid() {
        let g = std_normal_grid(2001);
        assert!((g.integral() - 1.0).abs() < 1e-5);
        let (m, s) = g.moments();
        assert!(m.abs() < 1e-10 && (s - 1.0).abs() < 1e-4);
        assert!((g.quantile(0.975) - 1.959_964).abs() < 1e-3);
        assert!((Marginal::Grid(g.clone()).cdf(0.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn exp_transform_gives_log_normal() {
        let g = std_normal_grid(4001);
        let t = transform_marginal(&g, Transform::Exp).unwrap();
        assert_eq!(t.scale(), Scale::Identity);
        assert!((t.integral() - 1.0).abs() < 0.01);
        // Log-normal(0, 1) has its mode at e^-1.
        let spacing = t.x().windows(2).find(|w| w[1] >= (-1.0f64).exp()).map(|w| w[1] - w[0]).unwrap();
        assert!((t.mode() - (-1.0f64).exp()).abs() <= spacing);
        for (&y, &d) in t.x().iter().zip(t.density()) {
            let exact = gaussian_density(ln(y), 0.0, 1.0) / y;
            assert!((d - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_and_round_trip() {
        let g = std_normal_grid(201);
        assert_eq!(transform_marginal(&g, Transform::Identity).unwrap(), g);
        let back = transform_marginal(&transform_marginal(&g, Transform::Exp).unwrap(), Transform::Ln).unwrap();
        assert_eq!(back.scale(), Scale::Log);
        for ((a, b), (c, d)) in g.x().iter().zip(g.density()).zip(back.x().iter().zip(back.density())) {
            assert!((a - c).abs() < 1e-8 && (b - d).abs() < 1e-8);
        }
    }

    #[test]
    fn non_monotone_rejected() {
        let g = MarginalGrid::tabulate(-1.0, 1.0, 41, Scale::Identity, |_| 0.5).unwrap();
        assert_eq!(transform_marginal(&g, Transform::Ln), Err(FitError::NonMonotone));
        assert_eq!(transform_marginal(&g, Transform::Affine { scale: 0.0, shift: 1.0 }), Err(FitError::NonMonotone));
    }

    #[test]
    fn decreasing_map_reverses_order() {
        let g = MarginalGrid::tabulate(0.0, 2.0, 41, Scale::Identity, |v| v / 2.0).unwrap();
        let t = transform_marginal(&g, Transform::Affine { scale: -2.0, shift: 0.0 }).unwrap();
        assert!((t.integral() - g.integral()).abs() < 1e-12);
        assert_eq!(t.lower(), -4.0);
    }

    #[test]
    fn mixture_prunes_and_reports_moments() {
        let m = Marginal::mixture(vec![
            Component { weight: 1.0, mean: -1.0, sd: 0.5 },
            Component { weight: 1.0, mean: 1.0, sd: 0.5 },
            Component { weight: 1e-20, mean: 50.0, sd: 1.0 },
        ]);
        let Marginal::Mixture(cs) = &m else { unreachable!() };
        assert_eq!(cs.len(), 2);
        assert!(m.mean().abs() < 1e-15);
        assert!((m.sd() - (1.25f64).sqrt()).abs() < 1e-12);
    }
}
