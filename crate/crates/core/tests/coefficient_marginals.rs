//! Coefficient marginals under a Poisson likelihood against brute-force
//! quadrature of the exact two-dimensional posterior.

use dhglm_core::latent::{fit_laplace, CoefficientMarginals, FitOptions, LatentGaussianSubproblem, ObservationModel};
use dhglm_core::model::{Design, NormalPrior};

fn ln_factorial(k: f64) -> f64 {
    (1..=k as u64).map(|i| (i as f64).ln()).sum()
}

struct Data {
    y: Vec<f64>,
    x: Vec<f64>,
    prior: [NormalPrior; 2],
}

impl Data {
    fn small() -> Self {
        // Few, small counts make the posterior visibly skewed.
        Self {
            y: vec![0.0, 1.0, 0.0, 3.0, 2.0, 0.0, 1.0, 5.0],
            x: vec![-1.0, -0.7, -0.4, 0.1, 0.3, -0.2, 0.6, 0.9],
            prior: [NormalPrior { mean: 0.0, precision: 0.1 }, NormalPrior { mean: 0.0, precision: 0.5 }],
        }
    }

    fn log_joint(&self, b0: f64, b1: f64) -> f64 {
        let ll: f64 = self.y.iter().zip(&self.x).map(|(&y, &x)| {
            let eta = b0 + b1 * x;
            y * eta - eta.exp() - ln_factorial(y)
        }).sum();
        ll - 0.5 * self.prior[0].precision * b0 * b0 - 0.5 * self.prior[1].precision * b1 * b1
    }

    fn subproblem(&self) -> LatentGaussianSubproblem {
        let n = self.y.len();
        LatentGaussianSubproblem {
            name: "m".into(),
            response: self.y.clone().into(),
            observation: ObservationModel::Poisson,
            offset: None,
            fixed: Design::from_columns(vec!["b0".into(), "b1".into()], &[&vec![1.0; n], &self.x]).unwrap(),
            fixed_prior: self.prior.to_vec(),
            random: None,
            hyperparameter: None,
        }
    }

    /// Posterior mean and sd of each coefficient on a dense grid.
    fn exact_moments(&self) -> [(f64, f64); 2] {
        let (lo, hi, n) = (-6.0, 6.0, 1201);
        let h = (hi - lo) / (n - 1) as f64;
        let at = |k: usize| lo + h * k as f64;
        let mut peak = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                peak = peak.max(self.log_joint(at(i), at(j)));
            }
        }
        let mut s = [[0.0f64; 3]; 2];
        for i in 0..n {
            for j in 0..n {
                let w = (self.log_joint(at(i), at(j)) - peak).exp();
                for (c, v) in [(0, at(i)), (1, at(j))] {
                    s[c][0] += w;
                    s[c][1] += w * v;
                    s[c][2] += w * v * v;
                }
            }
        }
        s.map(|[w, m1, m2]| {
            let m = m1 / w;
            (m, (m2 / w - m * m).sqrt())
        })
    }
}

#[test]
fn corrected_marginals_track_the_exact_posterior() {
    let data = Data::small();
    let exact = data.exact_moments();
    let sub = data.subproblem();
    let corrected = fit_laplace(&sub, FitOptions::default()).unwrap();
    let gaussian = fit_laplace(&sub, FitOptions { coefficients: CoefficientMarginals::Gaussian, ..FitOptions::default() }).unwrap();
    for (k, name) in ["b0", "b1"].iter().enumerate() {
        let (mean, sd) = exact[k];
        let c = corrected.marginal(name).unwrap();
        let g = gaussian.marginal(name).unwrap();
        assert!((c.mean() - mean).abs() < 0.05 * sd, "{name}: corrected mean {} vs {mean}", c.mean());
        assert!((c.sd() / sd - 1.0).abs() < 0.05, "{name}: corrected sd {} vs {sd}", c.sd());
        assert!((c.mean() - mean).abs() < (g.mean() - mean).abs(), "{name}: correction does not help");
    }
    assert_eq!(corrected.log_marginal_likelihood, gaussian.log_marginal_likelihood);
}
