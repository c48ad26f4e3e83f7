//! Seeded Lloyd k-means over vectorised patches.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::patching::PatchSet;
use crate::{par, Error, Result};

pub const DEFAULT_MAX_ITER: usize = 100;

/// How the initial centroids are picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// `K` distinct patches drawn uniformly without replacement.
    #[default]
    Random,
    /// k-means++ D² seeding.
    PlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub clusters: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub init: Init,
}

impl KMeansConfig {
    pub fn new(clusters: usize, seed: u64) -> Self {
        Self {
            clusters,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            init: Init::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// `K × p²` centroid matrix.
    pub centroids: Array2<f64>,
    /// Cluster index of each patch.
    pub assignment: Vec<usize>,
    pub counts: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each centroid update.
    pub history: Vec<f64>,
}

impl ClusterModel {
    pub fn clusters(&self) -> usize {
        self.centroids.nrows()
    }

    /// Patch indices of cluster `k`, in extraction order.
    pub fn members(&self, k: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == k).then_some(i))
            .collect()
    }

    /// Contribution `f_k = Σ_{p ∈ C_k} ‖p − μ_k‖²` of one cluster.
    pub fn cluster_cost(&self, patches: ArrayView2<'_, f64>, k: usize) -> f64 {
        let mu = self.centroids.row(k);
        self.members(k)
            .into_iter()
            .map(|i| squared_distance(patches.row(i), mu))
            .sum()
    }
}

pub(crate) fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans(patches: &PatchSet, config: &KMeansConfig) -> Result<ClusterModel> {
    kmeans_rows(patches.vectors.view(), config)
}

/// Lloyd iterations on the rows of `data` until the assignment stops
/// changing or `max_iter` updates have run.
pub fn kmeans_rows(data: ArrayView2<'_, f64>, config: &KMeansConfig) -> Result<ClusterModel> {
    let n = data.nrows();
    let k = config.clusters;
    if k == 0 {
        return Err(Error::InvalidInput("at least one cluster is required".into()));
    }
    if k > n {
        return Err(Error::TooManyClusters {
            clusters: k,
            patches: n,
        });
    }
    if config.max_iter == 0 {
        return Err(Error::InvalidInput("max_iter must be at least 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds = match config.init {
        Init::Random => rand::seq::index::sample(&mut rng, n, k).into_vec(),
        Init::PlusPlus => plus_plus(data, k, &mut rng),
    };
    let mut centroids = Array2::<f64>::zeros((k, data.ncols()));
    for (c, &i) in seeds.iter().enumerate() {
        centroids.row_mut(c).assign(&data.row(i));
    }

    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let (next, _) = assign(data, centroids.view());
        if next == assignment {
            converged = true;
            break;
        }
        let previous = std::mem::replace(&mut assignment, next);
        update_centroids(data, &mut centroids, &mut assignment);
        iterations += 1;
        history.push(objective_of(data, centroids.view(), &assignment));
        // Empty-cluster repair can undo the assignment step exactly when
        // patches coincide; that state is a fixed point of the iteration.
        if assignment == previous {
            converged = true;
            break;
        }
    }

    let mut counts = vec![0; k];
    for &c in &assignment {
        counts[c] += 1;
    }
    let objective = objective_of(data, centroids.view(), &assignment);
    Ok(ClusterModel {
        centroids,
        assignment,
        counts,
        objective,
        iterations,
        converged,
        history,
    })
}

fn plus_plus(data: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| squared_distance(data.row(i), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).expect("positive total"))
        } else {
            // Every point coincides with a chosen centre; take the first unused index.
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(squared_distance(data.row(i), data.row(next)));
        }
    }
    chosen
}

/// Nearest-centroid assignment; ties go to the lowest cluster index.
fn assign(data: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>) -> (Vec<usize>, Vec<f64>) {
    let best = par::map_range(data.nrows(), |i| {
        let row = data.row(i);
        let mut best = (0, f64::INFINITY);
        for (c, mu) in centroids.rows().into_iter().enumerate() {
            let d = squared_distance(row, mu);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    });
    best.into_iter().unzip()
}

/// Recompute centroids as member means and reseed any empty cluster with the
/// patch farthest from its current centroid.
fn update_centroids(data: ArrayView2<'_, f64>, centroids: &mut Array2<f64>, assignment: &mut [usize]) {
    let k = centroids.nrows();
    recompute_means(data, centroids, assignment);
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let mut far = None::<(usize, f64)>;
        for (i, &c) in assignment.iter().enumerate() {
            if counts[c] < 2 {
                continue;
            }
            let d = squared_distance(data.row(i), centroids.row(c));
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (donor, _) = far.expect("k <= n leaves a cluster with two members");
        assignment[donor] = empty;
        recompute_means(data, centroids, assignment);
    }
}

fn recompute_means(data: ArrayView2<'_, f64>, centroids: &mut Array2<f64>, assignment: &[usize]) {
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; centroids.nrows()];
    for (i, &c) in assignment.iter().enumerate() {
        let mut row = sums.row_mut(c);
        row += &data.row(i);
        counts[c] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            let mean = &sums.row(c) / count as f64;
            centroids.row_mut(c).assign(&mean);
        }
    }
}

fn objective_of(data: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>, assignment: &[usize]) -> f64 {
    let parts = par::map_range(assignment.len(), |i| {
        squared_distance(data.row(i), centroids.row(assignment[i]))
    });
    parts.iter().sum()
}

/// Recompute `J = Σ_k Σ_{p ∈ C_k} ‖p − μ_k‖²` from scratch.
pub fn objective(model: &ClusterModel, patches: &PatchSet) -> Result<f64> {
    let data = patches.vectors.view();
    if model.assignment.len() != data.nrows() || model.centroids.ncols() != data.ncols() {
        return Err(Error::InvalidInput(format!(
            "model covers {} patches of dimension {}, got {}x{}",
            model.assignment.len(),
            model.centroids.ncols(),
            data.nrows(),
            data.ncols()
        )));
    }
    if model.assignment.iter().any(|&c| c >= model.clusters()) {
        return Err(Error::InvalidInput("assignment references a missing cluster".into()));
    }
    Ok(objective_of(data, model.centroids.view(), &model.assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn set_of(rows: Array2<f64>) -> PatchSet {
        use crate::patching::PatchGrid;
        let n = rows.nrows();
        PatchSet {
            grid: PatchGrid {
                shape: (1, n),
                patch_size: 1,
                stride: 1,
                positions: (0..n).map(|j| (0, j)).collect(),
            },
            vectors: rows,
        }
    }

    #[test]
    fn coincident_pairs_split_cleanly() {
        let data = array![[0.0, 0.0], [5.0, 5.0], [0.0, 0.0], [5.0, 5.0]];
        for seed in 0..10 {
            let model = kmeans_rows(data.view(), &KMeansConfig::new(2, seed)).unwrap();
            assert_eq!(model.objective, 0.0);
            assert_eq!(model.assignment[0], model.assignment[2]);
            assert_eq!(model.assignment[1], model.assignment[3]);
            assert_ne!(model.assignment[0], model.assignment[1]);
            assert!(model.converged);
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let data = array![[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]];
        let model = kmeans_rows(data.view(), &KMeansConfig::new(1, 3)).unwrap();
        assert_eq!(model.centroids.row(0).to_vec(), vec![3.0, 3.0]);
        let expected = 4.0 + 1.0 + 0.0 + 9.0 + 4.0 + 4.0;
        assert!((model.objective - expected).abs() < 1e-12);
    }

    #[test]
    fn one_cluster_per_patch() {
        let data = array![[0.0], [1.0], [4.0], [9.0]];
        let model = kmeans_rows(data.view(), &KMeansConfig::new(4, 1)).unwrap();
        assert_eq!(model.objective, 0.0);
        assert!(model.counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn objective_examples() {
        let single = set_of(array![[2.0, 3.0]]);
        let model = kmeans(&single, &KMeansConfig::new(1, 0)).unwrap();
        assert_eq!(objective(&model, &single).unwrap(), 0.0);

        let d = 3.0_f64;
        let pair = set_of(array![[0.0, 0.0], [d, 0.0]]);
        let model = kmeans(&pair, &KMeansConfig::new(1, 0)).unwrap();
        assert!((objective(&model, &pair).unwrap() - d * d / 2.0).abs() < 1e-12);

        let wrong = set_of(array![[0.0], [1.0]]);
        assert!(objective(&model, &wrong).is_err());
    }

    #[test]
    fn identical_points_still_fill_every_cluster() {
        let data = Array2::from_elem((10, 3), 7.0);
        for init in [Init::Random, Init::PlusPlus] {
            let config = KMeansConfig {
                init,
                ..KMeansConfig::new(4, 9)
            };
            let model = kmeans_rows(data.view(), &config).unwrap();
            assert!(model.counts.iter().all(|&c| c > 0), "{init:?}: {:?}", model.counts);
            assert_eq!(model.objective, 0.0);
            assert!(model.converged);
        }
    }

    #[test]
    fn errors() {
        let data = array![[0.0], [1.0]];
        assert!(matches!(
            kmeans_rows(data.view(), &KMeansConfig::new(3, 0)),
            Err(Error::TooManyClusters { .. })
        ));
        assert!(kmeans_rows(data.view(), &KMeansConfig::new(0, 0)).is_err());
        let config = KMeansConfig {
            max_iter: 0,
            ..KMeansConfig::new(1, 0)
        };
        assert!(kmeans_rows(data.view(), &config).is_err());
    }

    #[test]
    fn plus_plus_is_deterministic() {
        let data = Array2::from_shape_fn((40, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let config = KMeansConfig {
            init: Init::PlusPlus,
            ..KMeansConfig::new(5, 42)
        };
        let a = kmeans_rows(data.view(), &config).unwrap();
        let b = kmeans_rows(data.view(), &config).unwrap();
        assert_eq!(a, b);
    }
}
