//! Path-parallel Monte Carlo with results independent of scheduling.
//!
//! Every path draws its noise from its own stream, per-path outputs are
//! collected in path order, and all reductions are pairwise sums over that
//! fixed order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pathsim::{sample_noise_refined, GridSpec, NoiseBundle};

/// Failed paths tolerated before a run is rejected, as a fraction of all paths.
pub const FAILURE_CAP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Pairs path `2j + 1` with the negated noise of path `2j`.
    pub antithetic: bool,
    /// Worker count; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Noise is drawn on the grid refined by this factor and summed back,
    /// so that runs at `Δ` and `Δ/r` share their Brownian paths.
    pub noise_refinement: usize,
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            antithetic: false,
            threads: None,
            noise_refinement: 1,
        }
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    pub fn with_refinement(mut self, r: usize) -> Self {
        self.noise_refinement = r;
        self
    }

    pub fn with_paths(mut self, n: usize) -> Self {
        self.n_paths = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::InvalidArgument("at least two paths are needed".into()));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::InvalidArgument(
                "antithetic sampling needs an even number of paths".into(),
            ));
        }
        if self.noise_refinement == 0 {
            return Err(Error::InvalidArgument("noise refinement must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        Ok(())
    }

    /// Noise of path `i`.
    pub fn path_noise(&self, grid: &GridSpec, dim: usize, i: usize) -> Result<NoiseBundle> {
        let (stream, negate) = if self.antithetic {
            ((i / 2) as u64, i % 2 == 1)
        } else {
            (i as u64, false)
        };
        let noise = sample_noise_refined(grid, dim, self.seed, stream, self.noise_refinement)?;
        Ok(if negate { noise.negated() } else { noise })
    }
}

/// Runs `job` on `n` indices on the configured pool, keeping index order.
pub fn par_map<T, F>(threads: Option<usize>, n: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let run = || (0..n).into_par_iter().map(&job).collect::<Vec<T>>();
    match threads {
        None => Ok(run()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Per-path output columns, one sampling unit per row. With antithetic
/// sampling a unit is the average of a pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    columns: Vec<Vec<f64>>,
    n_paths: usize,
    failed: usize,
}

impl Samples {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Number of sampling units.
    pub fn n_units(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Successful paths.
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn failed(&self) -> usize {
        self.failed
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn mean(&self, j: usize) -> f64 {
        pairwise_sum(&self.columns[j]) / self.n_units() as f64
    }

    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        let (ma, mb) = (self.mean(a), self.mean(b));
        let prods: Vec<f64> = self.columns[a]
            .iter()
            .zip(&self.columns[b])
            .map(|(x, y)| (x - ma) * (y - mb))
            .collect();
        pairwise_sum(&prods) / (self.n_units() as f64 - 1.0)
    }

    pub fn variance(&self, j: usize) -> f64 {
        self.covariance(j, j)
    }

    /// Sample standard deviation over `√n`.
    pub fn std_error(&self, j: usize) -> f64 {
        (self.variance(j) / self.n_units() as f64).sqrt()
    }

    /// Standard error of `Σ_j w_j·mean_j`.
    pub fn linear_std_error(&self, weights: &[(usize, f64)]) -> f64 {
        let mut var = 0.0;
        for &(a, wa) in weights {
            for &(b, wb) in weights {
                var += wa * wb * self.covariance(a, b);
            }
        }
        (var.max(0.0) / self.n_units() as f64).sqrt()
    }

    /// Delta-method standard error of `g(means)` given `∇g` at the means.
    pub fn delta_std_error(&self, columns: &[usize], grad: &[f64]) -> f64 {
        let w: Vec<(usize, f64)> = columns.iter().cloned().zip(grad.iter().cloned()).collect();
        self.linear_std_error(&w)
    }

    /// Delta-method standard error of `phi(means of columns)`, with the
    /// gradient taken by central differences.
    pub fn delta_std_error_fn(&self, columns: &[usize], phi: impl Fn(&[f64]) -> f64) -> f64 {
        let means: Vec<f64> = columns.iter().map(|&c| self.mean(c)).collect();
        let mut grad = Vec::with_capacity(columns.len());
        for (j, &c) in columns.iter().enumerate() {
            let h = 1e-6 * means[j].abs().max(self.std_error(c)).max(1e-300);
            let mut up = means.clone();
            let mut down = means.clone();
            up[j] += h;
            down[j] -= h;
            grad.push((phi(&up) - phi(&down)) / (2.0 * h));
        }
        self.delta_std_error(columns, &grad)
    }

    pub fn max(&self, j: usize) -> f64 {
        self.columns[j].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs `job(i, noise_i)` for every path and gathers its `n_columns` outputs.
/// Failed paths (and their antithetic partners) are dropped and counted; more
/// than [`FAILURE_CAP`] of them fails the run.
pub fn run_paths<F>(
    mc: &McConfig,
    grid: &GridSpec,
    dim: usize,
    n_columns: usize,
    job: F,
) -> Result<Samples>
where
    F: Fn(usize, &NoiseBundle) -> Result<Vec<f64>> + Sync + Send,
{
    mc.check()?;
    let rows = par_map(mc.threads, mc.n_paths, |i| {
        let noise = mc.path_noise(grid, dim, i)?;
        let row = job(i, &noise)?;
        debug_assert_eq!(row.len(), n_columns);
        Ok::<_, Error>(row)
    })?;
    let mut failed = 0;
    let mut columns = vec![Vec::with_capacity(rows.len()); n_columns];
    let mut first_error = None;
    let push = |row: &[f64], columns: &mut Vec<Vec<f64>>| {
        for (c, v) in columns.iter_mut().zip(row) {
            c.push(*v);
        }
    };
    if mc.antithetic {
        for pair in rows.chunks_exact(2) {
            match (&pair[0], &pair[1]) {
                (Ok(a), Ok(b)) => {
                    let avg: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
                    push(&avg, &mut columns);
                }
                (a, b) => {
                    for r in [a, b] {
                        if let Err(e) = r {
                            first_error.get_or_insert_with(|| e.clone());
                        }
                    }
                    failed += 2;
                }
            }
        }
    } else {
        for r in &rows {
            match r {
                Ok(row) => push(row, &mut columns),
                Err(e) => {
                    first_error.get_or_insert_with(|| e.clone());
                    failed += 1;
                }
            }
        }
    }
    if let Some(e) = &first_error {
        if !matches!(e, Error::IntegrationFailure { .. }) {
            return Err(e.clone());
        }
    }
    if failed as f64 > FAILURE_CAP * mc.n_paths as f64 {
        return Err(Error::TooManyFailures {
            failed,
            total: mc.n_paths,
        });
    }
    let samples = Samples {
        columns,
        n_paths: mc.n_paths - failed,
        failed,
    };
    if samples.n_units() < 2 {
        return Err(Error::TooManyFailures {
            failed,
            total: mc.n_paths,
        });
    }
    Ok(samples)
}

/// Path average of a per-path vector (e.g. a quantity at every grid node),
/// folded over fixed-size chunks of paths and merged in chunk order.
/// Returns the mean vector and the number of paths used.
pub fn mean_vector<F>(
    mc: &McConfig,
    grid: &GridSpec,
    dim: usize,
    len: usize,
    job: F,
) -> Result<(Vec<f64>, usize)>
where
    F: Fn(usize, &NoiseBundle) -> Result<Vec<f64>> + Sync + Send,
{
    const CHUNK: usize = 64;
    mc.check()?;
    let n_chunks = mc.n_paths.div_ceil(CHUNK);
    let partial = par_map(mc.threads, n_chunks, |c| {
        let mut acc = vec![0.0; len];
        let mut count = 0usize;
        let mut failed = 0usize;
        for i in c * CHUNK..((c + 1) * CHUNK).min(mc.n_paths) {
            let noise = mc.path_noise(grid, dim, i)?;
            match job(i, &noise) {
                Ok(v) => {
                    for (a, x) in acc.iter_mut().zip(&v) {
                        *a += x;
                    }
                    count += 1;
                }
                Err(Error::IntegrationFailure { .. }) => failed += 1,
                Err(e) => return Err(e),
            }
        }
        Ok((acc, count, failed))
    })?;
    let mut sums: Vec<Vec<f64>> = vec![Vec::with_capacity(n_chunks); len];
    let mut count = 0;
    let mut failed = 0;
    for p in partial {
        let (acc, c, f) = p?;
        for (s, a) in sums.iter_mut().zip(acc) {
            s.push(a);
        }
        count += c;
        failed += f;
    }
    if failed as f64 > FAILURE_CAP * mc.n_paths as f64 || count == 0 {
        return Err(Error::TooManyFailures {
            failed,
            total: mc.n_paths,
        });
    }
    Ok((
        sums.iter().map(|s| pairwise_sum(s) / count as f64).collect(),
        count,
    ))
}

/// `√(a² + b²)`
pub fn combined_se(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathsim::make_grid;

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn thread_count_does_not_change_samples() {
        let grid = make_grid(1.0, 2.0, 10).unwrap();
        let job = |_i: usize, n: &NoiseBundle| Ok(vec![n.increments().iter().sum::<f64>(), 1.0]);
        let base = McConfig::new(500, 17);
        let a = run_paths(&base.with_threads(Some(1)), &grid, 2, 2, job).unwrap();
        let b = run_paths(&base.with_threads(Some(4)), &grid, 2, 2, job).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mean(1), 1.0);
        assert_eq!(a.std_error(1), 0.0);
    }

    #[test]
    fn antithetic_pairs_cancel_odd_statistics() {
        let grid = make_grid(1.0, 2.0, 10).unwrap();
        let mc = McConfig::new(100, 3).with_antithetic(true);
        let s = run_paths(&mc, &grid, 1, 1, |_, n| Ok(vec![n.increment(0)[0]])).unwrap();
        assert_eq!(s.n_units(), 50);
        assert!(s.column(0).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn failure_cap() {
        let grid = make_grid(1.0, 2.0, 10).unwrap();
        let mc = McConfig::new(2000, 3);
        let ok = run_paths(&mc, &grid, 1, 1, |i, _| {
            if i == 5 {
                Err(Error::IntegrationFailure { step: 0 })
            } else {
                Ok(vec![1.0])
            }
        })
        .unwrap();
        assert_eq!((ok.failed(), ok.n_paths()), (1, 1999));
        let bad = run_paths(&mc, &grid, 1, 1, |i, _| {
            if i % 100 == 0 {
                Err(Error::IntegrationFailure { step: 0 })
            } else {
                Ok(vec![1.0])
            }
        });
        assert!(matches!(bad, Err(Error::TooManyFailures { failed: 20, .. })));
    }

    #[test]
    fn mean_vector_is_thread_independent() {
        let grid = make_grid(1.0, 2.0, 10).unwrap();
        let job = |_i: usize, n: &NoiseBundle| Ok(n.increments().iter().map(|x| x * x).collect());
        let base = McConfig::new(300, 1);
        let a = mean_vector(&base.with_threads(Some(1)), &grid, 1, 20, job).unwrap();
        let b = mean_vector(&base.with_threads(Some(3)), &grid, 1, 20, job).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1, 300);
    }

    #[test]
    fn delta_method_on_linear_map() {
        let grid = make_grid(1.0, 2.0, 10).unwrap();
        let mc = McConfig::new(400, 9);
        let s = run_paths(&mc, &grid, 1, 2, |_, n| {
            let x = n.increment(0)[0];
            Ok(vec![x, 2.0 * x])
        })
        .unwrap();
        let se = s.delta_std_error(&[0, 1], &[1.0, 1.0]);
        assert!((se - 3.0 * s.std_error(0)).abs() < 1e-12);
    }
}
