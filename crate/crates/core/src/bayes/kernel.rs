//! Grid transition kernels of the unimodal and multimodal chains.
//!
//! Both kernels factor through the abstraction space: `T = L · R` where `R`
//! is the `K×S` stimulus likelihood and `L` is `S×K` (the stimulus posterior,
//! optionally followed by the language round trip). The stationary
//! distribution is found on the `K×K` chain `R · L` and lifted back.

use super::distribution::DistributionOverGrids;
use super::inference::{exact_states, posterior_from_description, posterior_from_stimulus};
use super::{AbstractionModel, BayesError};
use crate::grid::Grid;

const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryOptions {
    /// Required `‖πT − π‖₁`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        StationaryOptions {
            tolerance: 1e-12,
            max_iterations: 100_000,
        }
    }
}

/// A row-stochastic kernel over all grids of one size, indexed by
/// [`Grid::to_index`].
pub trait TransitionKernel {
    fn grid_size(&self) -> usize;

    fn n_states(&self) -> usize {
        1 << (self.grid_size() * self.grid_size())
    }

    /// `T(· | x)`.
    fn row(&self, x: usize) -> Vec<f64>;

    /// `π T`.
    fn apply(&self, pi: &[f64]) -> Vec<f64>;

    fn residual(&self, pi: &[f64]) -> f64 {
        l1(&self.apply(pi), pi)
    }

    /// Fixed point by power iteration from the uniform distribution.
    fn stationary(&self, opts: StationaryOptions) -> Result<DistributionOverGrids, BayesError> {
        let n = self.n_states();
        let mut pi = vec![1.0 / n as f64; n];
        let mut residual = f64::INFINITY;
        for _ in 0..opts.max_iterations {
            let mut next = self.apply(&pi);
            normalise(&mut next);
            residual = l1(&next, &pi);
            pi = next;
            if residual < opts.tolerance {
                return DistributionOverGrids::exact(self.grid_size(), pi);
            }
        }
        Err(BayesError::NoConvergence { residual })
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn normalise(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Row-major `rows × cols` product.
fn matmul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for k in 0..inner {
            let aik = a[i * inner + k];
            if aik == 0.0 {
                continue;
            }
            let out_row = &mut out[i * cols..(i + 1) * cols];
            for (o, bkj) in out_row.iter_mut().zip(&b[k * cols..(k + 1) * cols]) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// Explicit `S×S` kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel {
    size: usize,
    data: Vec<f64>,
}

impl DenseKernel {
    pub fn new(size: usize, rows: Vec<Vec<f64>>) -> Result<Self, BayesError> {
        let tiles = size * size;
        if tiles > super::EXACT_MAX_TILES {
            return Err(BayesError::StateSpaceTooLarge { tiles });
        }
        let n = 1 << tiles;
        if rows.len() != n {
            return Err(BayesError::LengthMismatch {
                what: "kernel rows",
                expected: n,
                found: rows.len(),
            });
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(BayesError::LengthMismatch {
                    what: "kernel columns",
                    expected: n,
                    found: row.len(),
                });
            }
            if row.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(BayesError::NegativeProbability { row: i });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(BayesError::RowNotNormalized { row: i, sum });
            }
            data.extend(row);
        }
        Ok(DenseKernel { size, data })
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.n_states() + to]
    }
}

impl TransitionKernel for DenseKernel {
    fn grid_size(&self) -> usize {
        self.size
    }

    fn row(&self, x: usize) -> Vec<f64> {
        let n = self.n_states();
        self.data[x * n..(x + 1) * n].to_vec()
    }

    fn apply(&self, pi: &[f64]) -> Vec<f64> {
        matmul(pi, &self.data, 1, self.n_states(), self.n_states())
    }
}

/// `T = left · right` with `left: S×K` and `right: K×S`, both row-stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredKernel {
    size: usize,
    k: usize,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl FactoredKernel {
    pub fn rank(&self) -> usize {
        self.k
    }

    pub fn to_dense(&self) -> DenseKernel {
        let n = self.n_states();
        DenseKernel {
            size: self.size,
            data: matmul(&self.left, &self.right, n, self.k, n),
        }
    }

    /// Stationary distribution of the reduced chain `A = right · left` on the
    /// abstractions, by repeated squaring of `A` and a few polishing steps.
    fn reduced_stationary(&self, opts: StationaryOptions) -> Vec<f64> {
        let k = self.k;
        let n = self.n_states();
        let a = matmul(&self.right, &self.left, k, n, k);
        let mut power = a.clone();
        for _ in 0..64 {
            let spread = (0..k)
                .map(|j| {
                    let col = (0..k).map(|i| power[i * k + j]);
                    let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                        (lo.min(x), hi.max(x))
                    });
                    hi - lo
                })
                .fold(0.0, f64::max);
            if spread < 1e-14 {
                break;
            }
            power = matmul(&power, &power, k, k, k);
            // Keep rounding drift in the row sums from compounding.
            power.chunks_mut(k).for_each(normalise);
        }
        let mut nu: Vec<f64> = (0..k)
            .map(|j| (0..k).map(|i| power[i * k + j]).sum::<f64>() / k as f64)
            .collect();
        normalise(&mut nu);
        for _ in 0..opts.max_iterations.min(1000) {
            let mut next = matmul(&nu, &a, 1, k, k);
            normalise(&mut next);
            let moved = l1(&next, &nu);
            nu = next;
            if moved < opts.tolerance * 1e-3 {
                break;
            }
        }
        nu
    }
}

impl TransitionKernel for FactoredKernel {
    fn grid_size(&self) -> usize {
        self.size
    }

    fn row(&self, x: usize) -> Vec<f64> {
        let k = self.k;
        matmul(
            &self.left[x * k..(x + 1) * k],
            &self.right,
            1,
            k,
            self.n_states(),
        )
    }

    fn apply(&self, pi: &[f64]) -> Vec<f64> {
        let n = self.n_states();
        let through = matmul(pi, &self.left, 1, n, self.k);
        matmul(&through, &self.right, 1, self.k, n)
    }

    fn stationary(&self, opts: StationaryOptions) -> Result<DistributionOverGrids, BayesError> {
        let nu = self.reduced_stationary(opts);
        let mut pi = matmul(&nu, &self.right, 1, self.k, self.n_states());
        normalise(&mut pi);
        let residual = self.residual(&pi);
        if residual >= opts.tolerance {
            return Err(BayesError::NoConvergence { residual });
        }
        DistributionOverGrids::exact(self.size, pi)
    }
}

/// `K×S` likelihood matrix `p_S(x | mu)`.
fn likelihood_matrix(m: &AbstractionModel, n: usize) -> Vec<f64> {
    let tiles = m.n_tiles();
    let eps = m.flip_rate();
    let by_distance: Vec<f64> = (0..=tiles)
        .map(|h| eps.powi(h as i32) * (1.0 - eps).powi((tiles - h) as i32))
        .collect();
    let mut out = Vec::with_capacity(m.n_abstractions() * n);
    for t in m.templates() {
        let ti = t.to_index().expect("exact mode grids are indexable");
        out.extend((0..n).map(|x| by_distance[(x ^ ti).count_ones() as usize]));
    }
    out
}

/// `S×K` stimulus posterior for every grid.
fn posterior_matrix(m: &AbstractionModel, n: usize) -> Result<Vec<f64>, BayesError> {
    let mut out = Vec::with_capacity(n * m.n_abstractions());
    for x in 0..n {
        out.extend(posterior_from_stimulus(m, &Grid::from_index(m.size(), x)?)?);
    }
    Ok(out)
}

/// `T(x' | x) = sum_mu p_S(x' | mu) p(mu | x)`.
pub fn unimodal_transition(m: &AbstractionModel) -> Result<FactoredKernel, BayesError> {
    let n = exact_states(m)?;
    Ok(FactoredKernel {
        size: m.size(),
        k: m.n_abstractions(),
        left: posterior_matrix(m, n)?,
        right: likelihood_matrix(m, n),
    })
}

/// `T(x' | x) = sum_mu' p_S(x' | mu') sum_l p(mu' | l) sum_mu p_L(l | mu) p(mu | x)`.
pub fn multimodal_transition(m: &AbstractionModel) -> Result<FactoredKernel, BayesError> {
    let n = exact_states(m)?;
    let k = m.n_abstractions();
    let v = m.n_descriptions();
    // round_trip[mu][mu'] = sum_l p_L(l | mu) p(mu' | l)
    let mut round_trip = vec![0.0; k * k];
    for l in 0..v {
        let back = match posterior_from_description(m, l) {
            Ok(p) => p,
            // No abstraction can emit l, so it never contributes.
            Err(BayesError::ZeroEvidence(_)) => continue,
            Err(e) => return Err(e),
        };
        for mu in 0..k {
            let d = m.description_likelihood()[mu][l];
            for (j, b) in back.iter().enumerate() {
                round_trip[mu * k + j] += d * b;
            }
        }
    }
    let posterior = posterior_matrix(m, n)?;
    Ok(FactoredKernel {
        size: m.size(),
        k,
        left: matmul(&posterior, &round_trip, n, k, k),
        right: likelihood_matrix(m, n),
    })
}

pub fn stationary_distribution(
    kernel: &dyn TransitionKernel,
) -> Result<DistributionOverGrids, BayesError> {
    kernel.stationary(StationaryOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::inference::{prior_predictive, stimulus_likelihood, PriorKind};
    use crate::bayes::{tv_distance, RandomModelSpec};
    use approx::assert_abs_diff_eq;
    use rand::distr::weighted::WeightedIndex;
    use rand::distr::Distribution;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(
        seed: u64,
        size: usize,
        k: usize,
        v: usize,
        eps: f64,
        aligned: bool,
    ) -> AbstractionModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RandomModelSpec {
            size,
            n_abstractions: k,
            n_descriptions: v,
            flip_rate: eps,
            aligned,
        }
        .generate(&mut rng)
    }

    fn assert_row_stochastic(t: &dyn TransitionKernel) {
        for x in 0..t.n_states() {
            let s: f64 = t.row(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {x} sums to {s}");
        }
    }

    #[test]
    fn kernels_are_row_stochastic() {
        for seed in 0..5 {
            let m = random_model(seed, 3, 6, 4, 0.1, false);
            assert_row_stochastic(&unimodal_transition(&m).unwrap());
            assert_row_stochastic(&multimodal_transition(&m).unwrap());
        }
    }

    #[test]
    fn pure_noise_channel_is_uniform() {
        // eps = 0.5 is excluded by the model invariants, so approach it.
        let m = AbstractionModel::new(
            vec![Grid::blank(2)],
            vec![1.0],
            vec![1.0],
            0.5 - 1e-15,
            vec!["a".into()],
            vec![vec![1.0]],
        )
        .unwrap();
        let t = unimodal_transition(&m).unwrap();
        for x in 0..16 {
            for p in t.row(x) {
                assert_abs_diff_eq!(p, 1.0 / 16.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unimodal_kernel_matches_monte_carlo() {
        let m = random_model(21, 2, 2, 2, 0.2, false);
        let t = unimodal_transition(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for x in [0usize, 5, 15] {
            let grid = Grid::from_index(2, x).unwrap();
            let post = posterior_from_stimulus(&m, &grid).unwrap();
            let pick = WeightedIndex::new(&post).unwrap();
            let draws = 100_000;
            let mut counts = [0usize; 16];
            for _ in 0..draws {
                let mu = pick.sample(&mut rng);
                let lk: Vec<f64> = (0..16)
                    .map(|y| stimulus_likelihood(&m, mu, &Grid::from_index(2, y).unwrap()).unwrap())
                    .collect();
                counts[WeightedIndex::new(&lk).unwrap().sample(&mut rng)] += 1;
            }
            let row = t.row(x);
            let tv: f64 = 0.5
                * row
                    .iter()
                    .zip(counts)
                    .map(|(p, c)| (p - c as f64 / draws as f64).abs())
                    .sum::<f64>();
            assert!(tv < 0.02, "row {x}: tv {tv}");
        }
    }

    #[test]
    fn uniform_description_channel_forgets_the_input() {
        let base = random_model(4, 2, 4, 3, 0.1, false);
        let m = AbstractionModel::new(
            base.templates().to_vec(),
            base.stimulus_prior().to_vec(),
            base.language_prior().to_vec(),
            0.1,
            base.vocabulary().to_vec(),
            vec![vec![1.0 / 3.0; 3]; 4],
        )
        .unwrap();
        let t = multimodal_transition(&m).unwrap();
        let language = prior_predictive(&m, PriorKind::Language).unwrap();
        for x in 0..16 {
            for (a, b) in t.row(x).iter().zip(language.masses().unwrap()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn identity_channel_with_aligned_priors() {
        let base = random_model(8, 2, 3, 3, 0.1, true);
        let m = AbstractionModel::new(
            base.templates().to_vec(),
            base.stimulus_prior().to_vec(),
            base.stimulus_prior().to_vec(),
            0.1,
            base.vocabulary().to_vec(),
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
        )
        .unwrap();
        let uni = unimodal_transition(&m).unwrap().to_dense();
        let multi = multimodal_transition(&m).unwrap().to_dense();
        for x in 0..16 {
            for y in 0..16 {
                assert_abs_diff_eq!(uni.get(x, y), multi.get(x, y), epsilon = 1e-14);
            }
        }
        let a = stationary_distribution(&uni).unwrap();
        let b = stationary_distribution(&multi).unwrap();
        assert!(tv_distance(&a, &b).unwrap() < 1e-9);
    }

    #[test]
    fn doubly_stochastic_kernel_has_uniform_stationary() {
        let n = 16;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.5
                        } else if (i + 1) % n == j || (j + 1) % n == i {
                            0.25
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let t = DenseKernel::new(2, rows).unwrap();
        let pi = stationary_distribution(&t).unwrap();
        for p in pi.masses().unwrap() {
            assert_abs_diff_eq!(*p, 1.0 / 16.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_abstraction_stationary_is_its_likelihood() {
        let t0 = Grid::from_fn(3, |r, c| r == c);
        let m = AbstractionModel::new(
            vec![t0.clone()],
            vec![1.0],
            vec![1.0],
            0.2,
            vec!["a".into()],
            vec![vec![1.0]],
        )
        .unwrap();
        let pi = stationary_distribution(&unimodal_transition(&m).unwrap()).unwrap();
        for (i, p) in pi.masses().unwrap().iter().enumerate() {
            let h = crate::grid::hamming(&t0, &Grid::from_index(3, i).unwrap()).unwrap() as i32;
            assert_abs_diff_eq!(*p, 0.2f64.powi(h) * 0.8f64.powi(9 - h), epsilon = 1e-15);
        }
    }

    #[test]
    fn factored_and_dense_solvers_agree() {
        let m = random_model(13, 2, 5, 4, 0.1, false);
        for t in [
            unimodal_transition(&m).unwrap(),
            multimodal_transition(&m).unwrap(),
        ] {
            let fast = stationary_distribution(&t).unwrap();
            let dense = t.to_dense();
            let slow = stationary_distribution(&dense).unwrap();
            assert!(tv_distance(&fast, &slow).unwrap() < 1e-10);
            assert!(dense.residual(fast.masses().unwrap()) < 1e-10);
        }
    }

    #[test]
    fn aligned_priors_share_stationary_distribution() {
        for seed in 0..6 {
            let m = random_model(100 + seed, 2 + (seed as usize % 2), 8, 5, 0.1, true);
            let uni = stationary_distribution(&unimodal_transition(&m).unwrap()).unwrap();
            let multi = stationary_distribution(&multimodal_transition(&m).unwrap()).unwrap();
            let predictive = prior_predictive(&m, PriorKind::Stimulus).unwrap();
            assert!(tv_distance(&uni, &multi).unwrap() < 1e-9);
            assert!(tv_distance(&uni, &predictive).unwrap() < 1e-9);
        }
    }

    #[test]
    fn exact_mode_is_capped() {
        let m = random_model(1, 4, 2, 2, 0.1, true);
        assert!(matches!(
            unimodal_transition(&m),
            Err(BayesError::StateSpaceTooLarge { tiles: 16 })
        ));
    }

    #[test]
    fn non_convergence_is_reported() {
        // Every state drifts slowly into state 0.
        let n = 16;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] += 0.999;
                r[0] += 0.001;
                r
            })
            .collect();
        let t = DenseKernel::new(2, rows).unwrap();
        let opts = StationaryOptions {
            tolerance: 1e-12,
            max_iterations: 5,
        };
        assert!(matches!(
            t.stationary(opts),
            Err(BayesError::NoConvergence { .. })
        ));
    }
}
