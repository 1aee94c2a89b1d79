//! Distributed linear estimation benchmark.
//!
//! Agent `i` observes `zᵢⱼ = Mᵢ·x_true + νᵢⱼ` and holds the regularised
//! empirical risk `fᵢ(x) = (1/nᵢ) Σⱼ ‖zᵢⱼ - Mᵢx‖² + ω‖x‖²`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{norm_sq, solve, symmetric_spectral_norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    /// Measurement dimension `p`.
    #[serde(alias = "p")]
    pub measurement_dim: usize,
    /// Parameter dimension `d`.
    #[serde(alias = "d")]
    pub dim: usize,
    pub samples_per_agent: usize,
    pub noise_halfwidth: f64,
    pub regularization: f64,
}

impl ProblemParams {
    pub fn reference() -> Self {
        Self {
            measurement_dim: 3,
            dim: 2,
            samples_per_agent: 50,
            noise_halfwidth: 0.5,
            regularization: 1.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.measurement_dim == 0 || self.dim == 0 || self.samples_per_agent == 0 {
            return Err(invalid("problem dimensions must be positive"));
        }
        if !(self.noise_halfwidth.is_finite() && self.noise_halfwidth >= 0.0) {
            return Err(invalid("noise half-width must be non-negative"));
        }
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return Err(invalid("regularization must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationProblem {
    measurements: Vec<Matrix>,
    samples: Vec<Vec<Vec<f64>>>,
    regularization: f64,
    truth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub vector: Vec<f64>,
    pub sample_index: usize,
}

/// `Mᵢ` entries and `x_true` are uniform on `[-1, 1]`; noise is uniform on
/// `[-h, h]`.
pub fn generate_problem<R: Rng + ?Sized>(n: usize, params: &ProblemParams, rng: &mut R) -> Result<EstimationProblem> {
    params.validate()?;
    if n == 0 {
        return Err(invalid("need at least one agent"));
    }
    let (p, d) = (params.measurement_dim, params.dim);
    let truth: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let mut measurements = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect();
        let m = Matrix::from_rows(&rows)?;
        let clean = m.matvec(&truth);
        let h = params.noise_halfwidth;
        let zs = (0..params.samples_per_agent)
            .map(|_| {
                clean
                    .iter()
                    .map(|c| if h > 0.0 { c + rng.gen_range(-h..=h) } else { *c })
                    .collect()
            })
            .collect();
        measurements.push(m);
        samples.push(zs);
    }
    Ok(EstimationProblem {
        measurements,
        samples,
        regularization: params.regularization,
        truth,
    })
}

impl EstimationProblem {
    pub fn from_parts(
        measurements: Vec<Matrix>,
        samples: Vec<Vec<Vec<f64>>>,
        regularization: f64,
        truth: Vec<f64>,
    ) -> Result<Self> {
        let n = measurements.len();
        if n == 0 || samples.len() != n {
            return Err(invalid("one measurement matrix and sample set per agent"));
        }
        let (p, d) = (measurements[0].rows(), measurements[0].cols());
        if truth.len() != d {
            return Err(Error::Shape { expected: d, got: truth.len() });
        }
        for (m, zs) in measurements.iter().zip(&samples) {
            if m.rows() != p || m.cols() != d {
                return Err(invalid("measurement matrices must share one shape"));
            }
            if zs.is_empty() {
                return Err(invalid("every agent needs at least one sample"));
            }
            if let Some(z) = zs.iter().find(|z| z.len() != p) {
                return Err(Error::Shape { expected: p, got: z.len() });
            }
        }
        Ok(Self {
            measurements,
            samples,
            regularization,
            truth,
        })
    }

    pub fn agents(&self) -> usize {
        self.measurements.len()
    }

    pub fn dim(&self) -> usize {
        self.truth.len()
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn samples(&self, i: usize) -> usize {
        self.samples[i].len()
    }

    fn check(&self, i: usize, x: &[f64]) -> Result<()> {
        if i >= self.agents() {
            return Err(invalid(format!("agent {i} out of range")));
        }
        if x.len() != self.dim() {
            return Err(Error::Shape { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn local_cost(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check(i, x)?;
        let mx = self.measurements[i].matvec(x);
        let zs = &self.samples[i];
        let fit: f64 = zs
            .iter()
            .map(|z| z.iter().zip(&mx).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / zs.len() as f64;
        Ok(fit + self.regularization * norm_sq(x))
    }

    /// `∇fᵢ(x) = (2/nᵢ) Σⱼ Mᵢᵀ(Mᵢx - zᵢⱼ) + 2ωx`.
    pub fn local_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check(i, x)?;
        let m = &self.measurements[i];
        let mx = m.matvec(x);
        let zs = &self.samples[i];
        let mut resid = vec![0.0; mx.len()];
        for z in zs {
            for ((r, a), b) in resid.iter_mut().zip(&mx).zip(z) {
                *r += a - b;
            }
        }
        let scale = 2.0 / zs.len() as f64;
        Ok(m.tr_matvec(&resid)
            .iter()
            .zip(x)
            .map(|(g, xi)| scale * g + 2.0 * self.regularization * xi)
            .collect())
    }

    /// Gradient of the `j`-th sample's loss, `2Mᵢᵀ(Mᵢx - zᵢⱼ) + 2ωx`.
    pub fn sample_gradient(&self, i: usize, j: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check(i, x)?;
        let m = &self.measurements[i];
        let z = self.samples[i]
            .get(j)
            .ok_or_else(|| invalid(format!("sample {j} out of range")))?;
        let resid: Vec<f64> = m.matvec(x).iter().zip(z).map(|(a, b)| a - b).collect();
        Ok(m.tr_matvec(&resid)
            .iter()
            .zip(x)
            .map(|(g, xi)| 2.0 * g + 2.0 * self.regularization * xi)
            .collect())
    }

    /// Single-sample stochastic gradient with a uniformly drawn index.
    pub fn stochastic_gradient<R: Rng + ?Sized>(&self, i: usize, x: &[f64], rng: &mut R) -> Result<GradientSample> {
        self.check(i, x)?;
        let j = rng.gen_range(0..self.samples(i));
        Ok(GradientSample {
            vector: self.sample_gradient(i, j, x)?,
            sample_index: j,
        })
    }

    /// `∇F(x) = (1/n) Σᵢ ∇fᵢ(x)`.
    pub fn global_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim()];
        for i in 0..self.agents() {
            for (a, b) in g.iter_mut().zip(self.local_gradient(i, x)?) {
                *a += b;
            }
        }
        let n = self.agents() as f64;
        Ok(g.into_iter().map(|v| v / n).collect())
    }

    /// Minimiser of `F`: solves `Σᵢ(MᵢᵀMᵢ + ωI)·x = Σᵢ Mᵢᵀ z̄ᵢ`.
    pub fn optimum(&self) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut lhs = Matrix::zeros(d, d);
        let mut rhs = vec![0.0; d];
        for (m, zs) in self.measurements.iter().zip(&self.samples) {
            let g = m.gram();
            for a in 0..d {
                for b in 0..d {
                    lhs[(a, b)] += g[(a, b)];
                }
                lhs[(a, a)] += self.regularization;
            }
            let mut zbar = vec![0.0; m.rows()];
            for z in zs {
                for (s, v) in zbar.iter_mut().zip(z) {
                    *s += v;
                }
            }
            let inv = 1.0 / zs.len() as f64;
            zbar.iter_mut().for_each(|v| *v *= inv);
            for (r, v) in rhs.iter_mut().zip(m.tr_matvec(&zbar)) {
                *r += v;
            }
        }
        solve(&lhs, &rhs)
    }

    /// Shared smoothness constant `L = maxᵢ 2‖MᵢᵀMᵢ‖₂ + 2ω`.
    pub fn lipschitz(&self) -> Result<f64> {
        let mut l = 0.0_f64;
        for m in &self.measurements {
            l = l.max(2.0 * symmetric_spectral_norm(&m.gram())?);
        }
        Ok(l + 2.0 * self.regularization)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn reference(seed: u64) -> EstimationProblem {
        generate_problem(5, &ProblemParams::reference(), &mut rng(seed)).unwrap()
    }

    #[test]
    fn reference_configuration_shapes_and_determinism() {
        let a = reference(1);
        assert_eq!(a.agents(), 5);
        assert_eq!(a.dim(), 2);
        assert!((0..5).all(|i| a.samples(i) == 50));
        assert_eq!(a, reference(1));
        assert_ne!(a, reference(2));
    }

    #[test]
    fn invalid_dimensions() {
        let mut p = ProblemParams::reference();
        p.dim = 0;
        assert!(generate_problem(5, &p, &mut rng(0)).is_err());
        let mut p = ProblemParams::reference();
        p.regularization = -1.0;
        assert!(generate_problem(5, &p, &mut rng(0)).is_err());
    }

    #[test]
    fn noiseless_truth_is_stationary() {
        let params = ProblemParams {
            noise_halfwidth: 0.0,
            regularization: 0.0,
            ..ProblemParams::reference()
        };
        let prob = generate_problem(3, &params, &mut rng(3)).unwrap();
        for i in 0..3 {
            for (z, m) in prob.samples[i].iter().zip(std::iter::repeat(&prob.measurements[i])) {
                assert_eq!(z, &m.matvec(prob.truth()));
            }
            let g = prob.local_gradient(i, prob.truth()).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-14), "{g:?}");
        }
    }

    #[test]
    fn pure_regularizer() {
        let prob = EstimationProblem::from_parts(
            vec![Matrix::zeros(3, 2)],
            vec![vec![vec![0.3, -0.2, 0.1]; 4]],
            1.0,
            vec![0.0, 0.0],
        )
        .unwrap();
        assert_eq!(prob.local_gradient(0, &[0.5, -2.0]).unwrap(), vec![1.0, -4.0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let prob = reference(4);
        let mut r = rng(5);
        let h = 1e-5;
        for _ in 0..20 {
            let i = r.gen_range(0..5);
            let x: Vec<f64> = (0..2).map(|_| r.gen_range(-3.0..3.0)).collect();
            let g = prob.local_gradient(i, &x).unwrap();
            for l in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[l] += h;
                xm[l] -= h;
                let fd = (prob.local_cost(i, &xp).unwrap() - prob.local_cost(i, &xm).unwrap()) / (2.0 * h);
                assert!((fd - g[l]).abs() < 1e-6, "fd {fd} vs {}", g[l]);
            }
        }
    }

    #[test]
    fn single_sample_stochastic_equals_exact() {
        let params = ProblemParams {
            samples_per_agent: 1,
            ..ProblemParams::reference()
        };
        let prob = generate_problem(2, &params, &mut rng(6)).unwrap();
        let mut r = rng(7);
        let x = [0.3, -0.4];
        let s = prob.stochastic_gradient(1, &x, &mut r).unwrap();
        let g = prob.local_gradient(1, &x).unwrap();
        assert_eq!(s.sample_index, 0);
        for (a, b) in s.vector.iter().zip(&g) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_noise_second_moment_is_finite() {
        let prob = reference(8);
        let mut r = rng(9);
        let x = [0.2, 0.1];
        let exact = prob.local_gradient(0, &x).unwrap();
        let n = 20_000;
        let mean_sq: f64 = (0..n)
            .map(|_| {
                let g = prob.stochastic_gradient(0, &x, &mut r).unwrap().vector;
                g.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        // Population value from enumerating all samples.
        let exact_sq: f64 = (0..50)
            .map(|j| {
                let g = prob.sample_gradient(0, j, &x).unwrap();
                g.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / 50.0;
        assert!(mean_sq.is_finite() && mean_sq > 0.0);
        assert!((mean_sq - exact_sq).abs() < 0.1 * exact_sq);
    }

    #[test]
    fn optimum_identity_measurement() {
        let truth = vec![0.7, -0.2];
        let id = Matrix::identity(2);
        let prob = EstimationProblem::from_parts(vec![id], vec![vec![truth.clone(); 3]], 0.0, truth.clone()).unwrap();
        let x = prob.optimum().unwrap();
        assert!((x[0] - 0.7).abs() < 1e-15 && (x[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn optimum_shrinks_with_regularization() {
        let base = reference(10);
        let mut prev = f64::INFINITY;
        for omega in [0.1, 1.0, 10.0, 100.0] {
            let p = EstimationProblem {
                regularization: omega,
                ..base.clone()
            };
            let nrm = norm_sq(&p.optimum().unwrap());
            assert!(nrm < prev);
            prev = nrm;
        }
    }

    #[test]
    fn rank_deficient_optimum() {
        let prob = EstimationProblem::from_parts(
            vec![Matrix::zeros(3, 2)],
            vec![vec![vec![1.0, 1.0, 1.0]]],
            0.0,
            vec![0.0, 0.0],
        )
        .unwrap();
        assert!(matches!(prob.optimum(), Err(Error::RankDeficient)));
    }

    #[test]
    fn shape_errors() {
        let prob = reference(11);
        assert!(matches!(prob.local_gradient(0, &[1.0]), Err(Error::Shape { .. })));
        assert!(prob.local_gradient(9, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn lipschitz_bounds_gradient_growth() {
        let prob = reference(12);
        let l = prob.lipschitz().unwrap();
        let mut r = rng(13);
        for _ in 0..50 {
            let i = r.gen_range(0..5);
            let x: Vec<f64> = (0..2).map(|_| r.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| r.gen_range(-2.0..2.0)).collect();
            let gx = prob.local_gradient(i, &x).unwrap();
            let gy = prob.local_gradient(i, &y).unwrap();
            let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
            let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            assert!(norm_sq(&dg).sqrt() <= l * norm_sq(&dx).sqrt() * (1.0 + 1e-12));
        }
    }
}
