//! Constellation sampling: random CW-consistent trajectories, per-step
//! sensing graphs, node features and train/validation/test splitting.

mod dataset;
mod features;

pub use dataset::{load_dataset, save_dataset, DATASET_SCHEMA_VERSION};
pub use features::{degree_column, node_features, relative_mean_map, snapshot, GraphSnapshot, FEATURE_DIM};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::orbit::{cw_propagate, ChiefOrbit, RelativeState, EARTH_MU};
use crate::rng::seeded_rng;
use crate::{Chief, Mat, State};

/// Reserved stream for the split shuffle; trajectory indices use streams
/// `0..trajectory_count`.
const STREAM_SPLIT: u64 = 1 << 48;

/// History window length consumed by the predictor.
pub const HISTORY_LEN: usize = 8;
/// Forecast horizon emitted by the predictor.
pub const HORIZON: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Chief orbital radius range, km.
    pub chief_radius_range: [f64; 2],
    /// Inclusive range of agents per trajectory.
    pub agent_count_range: [usize; 2],
    /// Sample interval, s.
    pub dt: f64,
    /// Timesteps per trajectory.
    pub step_count: usize,
    /// Step-0 edge density target, self-loops included.
    pub target_edge_density: f64,
    /// Initial positions are drawn from a ball of this radius, km.
    pub relative_position_radius: f64,
    /// Gaussian noise added to the bounded-motion initial velocity, km/s.
    pub velocity_noise_sigma: f64,
    /// Gravitational parameter, km^3/s^2.
    pub mu: f64,
    /// Zero the cross-track components of every initial state.
    pub planar: bool,
    /// Trajectories to generate.
    pub trajectory_count: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            chief_radius_range: [6880.0, 7800.0],
            agent_count_range: [3, 8],
            dt: 60.0,
            step_count: 120,
            target_edge_density: 0.6,
            relative_position_radius: 5.0,
            velocity_noise_sigma: 1e-3,
            mu: EARTH_MU,
            planar: false,
            trajectory_count: 100,
            seed: 7,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.chief_radius_range[0] > 0.0
            && self.chief_radius_range[0] <= self.chief_radius_range[1])
        {
            return fail(format!(
                "chief_radius_range must be positive and ordered, got {:?}",
                self.chief_radius_range
            ));
        }
        if !(self.agent_count_range[0] >= 1
            && self.agent_count_range[0] <= self.agent_count_range[1])
        {
            return fail(format!(
                "agent_count_range must be ordered with at least one agent, got {:?}",
                self.agent_count_range
            ));
        }
        if self.dt <= 0.0 {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if self.step_count < HISTORY_LEN + HORIZON {
            return fail(format!(
                "step_count must be at least {} (history + horizon), got {}",
                HISTORY_LEN + HORIZON,
                self.step_count
            ));
        }
        if !(self.target_edge_density > 0.0 && self.target_edge_density <= 1.0) {
            return fail(format!(
                "target_edge_density must lie in (0, 1], got {}",
                self.target_edge_density
            ));
        }
        if self.relative_position_radius <= 0.0 {
            return fail(format!(
                "relative_position_radius must be positive, got {}",
                self.relative_position_radius
            ));
        }
        if self.velocity_noise_sigma < 0.0 {
            return fail(format!(
                "velocity_noise_sigma must be non-negative, got {}",
                self.velocity_noise_sigma
            ));
        }
        if self.mu <= 0.0 {
            return fail(format!("mu must be positive, got {}", self.mu));
        }
        if self.trajectory_count == 0 {
            return fail("trajectory_count must be at least 1".into());
        }
        Ok(())
    }
}

/// One generated constellation: CW-consistent states for every agent plus
/// the per-step sensing adjacency (unit diagonal, symmetric).
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTrajectory {
    pub chief: Chief,
    pub dt: f64,
    /// `states[t][i]` is agent `i` at step `t`.
    pub states: Vec<Vec<State>>,
    /// One N x N 0/1 matrix per step.
    pub adjacency: Vec<Mat>,
}

impl ScenarioTrajectory {
    pub fn agent_count(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn step_count(&self) -> usize {
        self.states.len()
    }

    pub fn positions_at(&self, t: usize) -> Vec<[f64; 3]> {
        self.states[t].iter().map(|s| s.position()).collect()
    }

    /// Agent states at a step as an N x 6 row-state matrix.
    pub fn state_matrix(&self, t: usize) -> Mat {
        let rows: Vec<Vec<f64>> = self.states[t].iter().map(|s| s.to_array().to_vec()).collect();
        Matrix::from_rows(&rows).expect("uniform state rows")
    }

    /// Fraction of nonzero adjacency entries at a step, self-loops included.
    pub fn edge_density(&self, t: usize) -> f64 {
        let a = &self.adjacency[t];
        let n = a.rows();
        a.data().iter().filter(|&&v| v != 0.0).count() as f64 / (n * n) as f64
    }

    pub fn windows(&self) -> usize {
        (self.step_count() + 1).saturating_sub(HISTORY_LEN + HORIZON)
    }
}

/// Draw one trajectory. Deterministic in `(cfg.seed, index)`.
pub fn sample_scenario(cfg: &ScenarioConfig, index: usize) -> Result<ScenarioTrajectory> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed, index as u64);

    let [lo, hi] = cfg.chief_radius_range;
    let radius = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let chief = ChiefOrbit::new(radius, cfg.mu)?;

    let [alo, ahi] = cfg.agent_count_range;
    let agents = rng.random_range(alo..=ahi);

    let noise = if cfg.velocity_noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.velocity_noise_sigma).expect("validated sigma"))
    } else {
        None
    };

    let mut initial = Vec::with_capacity(agents);
    for _ in 0..agents {
        let [x, y, z] = sample_ball(&mut rng, cfg.relative_position_radius, cfg.planar);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            noise.as_ref().map_or(0.0, |d| d.sample(rng))
        };
        let vx = draw(&mut rng);
        let vy = -2.0 * chief.n * x + draw(&mut rng);
        let vz = if cfg.planar { 0.0 } else { draw(&mut rng) };
        initial.push(RelativeState::new(x, y, z, vx, vy, vz));
    }

    // Stepwise propagation keeps the stored sequence exactly equal to the
    // closed form applied step by step.
    let mut states = Vec::with_capacity(cfg.step_count);
    states.push(initial);
    for t in 1..cfg.step_count {
        let prev: &Vec<State> = &states[t - 1];
        let next = prev
            .iter()
            .map(|s| cw_propagate(s, chief.n, cfg.dt))
            .collect::<Result<Vec<_>>>()?;
        states.push(next);
    }

    let step0: Vec<[f64; 3]> = states[0].iter().map(|s| s.position()).collect();
    let range = calibrate_sensing_range(&step0, cfg.target_edge_density)?;

    let adjacency = states
        .iter()
        .map(|row| {
            let positions: Vec<[f64; 3]> = row.iter().map(|s| s.position()).collect();
            build_adjacency(&positions, range)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ScenarioTrajectory {
        chief,
        dt: cfg.dt,
        states,
        adjacency,
    })
}

fn sample_ball(rng: &mut impl Rng, radius: f64, planar: bool) -> [f64; 3] {
    loop {
        let x = rng.random_range(-radius..radius);
        let y = rng.random_range(-radius..radius);
        let z = if planar { 0.0 } else { rng.random_range(-radius..radius) };
        if (x * x + y * y + z * z).sqrt() <= radius {
            return [x, y, z];
        }
    }
}

/// Smallest pairwise-distance quantile whose inclusive threshold reaches
/// the target edge density at step 0. Self-loops count toward density.
pub fn calibrate_sensing_range(positions: &[[f64; 3]], target_density: f64) -> Result<f64> {
    if !(target_density > 0.0 && target_density <= 1.0) {
        return Err(Error::Config(format!(
            "target density must lie in (0, 1], got {target_density}"
        )));
    }
    let n = positions.len();
    if n <= 1 {
        return Ok(0.0);
    }

    let total = (n * n) as f64;
    // Self-loops alone may already satisfy the target.
    if n as f64 / total >= target_density {
        return Ok(0.0);
    }

    let mut distances: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            distances.push(distance(&positions[i], &positions[j]));
        }
    }
    distances.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));

    let mut pairs = 0usize;
    let mut k = 0usize;
    while k < distances.len() {
        let threshold = distances[k];
        // Consume every pair at exactly this distance before evaluating.
        while k < distances.len() && distances[k] == threshold {
            pairs += 1;
            k += 1;
        }
        let density = (n + 2 * pairs) as f64 / total;
        if density >= target_density {
            return Ok(threshold);
        }
    }
    // target_density <= 1 means the full graph always satisfies it.
    unreachable!("complete graph has density 1");
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Sensing graph at one step: `A[i][j] = 1` iff `i == j` or the pair sits
/// within the (inclusive) sensing range.
pub fn build_adjacency(positions: &[[f64; 3]], range: f64) -> Result<Mat> {
    if range < 0.0 {
        return Err(Error::Domain(format!("sensing range must be non-negative, got {range}")));
    }
    let n = positions.len();
    let mut a = Matrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if distance(&positions[i], &positions[j]) <= range {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    Ok(a)
}

/// Train/validation/test partition of generated trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub config: ScenarioConfig,
    pub train: Vec<ScenarioTrajectory>,
    pub validation: Vec<ScenarioTrajectory>,
    pub test: Vec<ScenarioTrajectory>,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn all(&self) -> impl Iterator<Item = &ScenarioTrajectory> {
        self.train
            .iter()
            .chain(self.validation.iter())
            .chain(self.test.iter())
    }
}

/// Seeded shuffle then partition. Validation and test sizes round to the
/// nearest count; train absorbs the remainder.
pub fn split_dataset(
    config: ScenarioConfig,
    trajectories: Vec<ScenarioTrajectory>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (r_train, r_val, r_test) = ratios;
    if r_train < 0.0 || r_val < 0.0 || r_test < 0.0 || (r_train + r_val + r_test - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }

    let n = trajectories.len();
    if n < 3 {
        log::warn!("only {n} trajectories: assigning all of them to the train split");
        return Ok(DatasetSplit {
            config,
            train: trajectories,
            validation: Vec::new(),
            test: Vec::new(),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed, STREAM_SPLIT);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let n_val = (r_val * n as f64).round() as usize;
    let n_test = (r_test * n as f64).round() as usize;
    let n_train = n - n_val - n_test;

    let mut pool: Vec<Option<ScenarioTrajectory>> = trajectories.into_iter().map(Some).collect();
    let mut take = |indices: &[usize]| -> Vec<ScenarioTrajectory> {
        indices
            .iter()
            .map(|&i| pool[i].take().expect("each index taken once"))
            .collect()
    };

    let train = take(&order[..n_train]);
    let validation = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(DatasetSplit {
        config,
        train,
        validation,
        test,
    })
}

/// Sample every trajectory of the config and split 70/20/10. Generation is
/// parallel over trajectory indices when `jobs > 1`; outputs are ordered by
/// index, so the result does not depend on the worker count.
pub fn generate_dataset(cfg: &ScenarioConfig, jobs: usize) -> Result<DatasetSplit> {
    cfg.validate()?;
    let indices: Vec<usize> = (0..cfg.trajectory_count).collect();
    let trajectories: Vec<ScenarioTrajectory> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            indices
                .par_iter()
                .map(|&i| sample_scenario(cfg, i))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        indices
            .iter()
            .map(|&i| sample_scenario(cfg, i))
            .collect::<Result<Vec<_>>>()?
    };
    split_dataset(cfg.clone(), trajectories, (0.7, 0.2, 0.1), cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            agent_count_range: [3, 5],
            step_count: 20,
            trajectory_count: 6,
            seed: 42,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn same_seed_and_index_reproduce_the_trajectory() {
        let cfg = small_config();
        let a = sample_scenario(&cfg, 3).unwrap();
        let b = sample_scenario(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_scenario(&cfg, 4).unwrap();
        assert_ne!(a.states[0], c.states[0]);
    }

    #[test]
    fn degenerate_radius_range_pins_the_chief_orbit() {
        let cfg = ScenarioConfig {
            chief_radius_range: [6880.0, 6880.0],
            step_count: 14,
            ..small_config()
        };
        for index in 0..50 {
            let traj = sample_scenario(&cfg, index).unwrap();
            assert_eq!(traj.chief.a, 6880.0);
        }
    }

    #[test]
    fn noiseless_planar_scenarios_stay_on_bounded_ellipses() {
        let cfg = ScenarioConfig {
            velocity_noise_sigma: 0.0,
            planar: true,
            step_count: 120,
            ..small_config()
        };
        let traj = sample_scenario(&cfg, 0).unwrap();
        for agent in 0..traj.agent_count() {
            let s0 = traj.states[0][agent];
            assert_eq!(s0.z, 0.0);
            assert_eq!(s0.vz, 0.0);
            assert_eq!(s0.vy, -2.0 * traj.chief.n * s0.x);
            // Bounded motion: no secular drift beyond the periodic amplitude.
            let bound = 2.0 * s0.x.abs() + 4.0 / traj.chief.n * s0.vx.abs() + 1e-6;
            for t in 0..traj.step_count() {
                let s = traj.states[t][agent];
                assert!(
                    (s.y - s0.y).abs() <= bound,
                    "agent {agent} drifted {} km at step {t}",
                    (s.y - s0.y).abs()
                );
            }
        }
    }

    #[test]
    fn stored_states_are_cw_consistent() {
        let cfg = small_config();
        let traj = sample_scenario(&cfg, 1).unwrap();
        for t in 0..traj.step_count() - 1 {
            for agent in 0..traj.agent_count() {
                let expected =
                    cw_propagate(&traj.states[t][agent], traj.chief.n, traj.dt).unwrap();
                let actual = traj.states[t + 1][agent];
                for (a, b) in expected.to_array().iter().zip(actual.to_array().iter()) {
                    assert!((a - b).abs() <= 1e-9, "CW consistency violated: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn calibration_with_target_one_yields_complete_graph() {
        let positions = [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 7.0, 0.0]];
        let range = calibrate_sensing_range(&positions, 1.0).unwrap();
        let a = build_adjacency(&positions, range).unwrap();
        assert_eq!(a, Matrix::filled(3, 3, 1.0));
    }

    #[test]
    fn calibration_walks_the_distance_quantiles() {
        // Pairwise distances {1, 2, 3}: threshold 1 km gives density 5/9,
        // so the calibrated range must step up to 2 km (density 7/9).
        let positions = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let range = calibrate_sensing_range(&positions, 0.6).unwrap();
        assert_eq!(range, 2.0);
        let a = build_adjacency(&positions, range).unwrap();
        let density = a.data().iter().filter(|&&v| v != 0.0).count() as f64 / 9.0;
        assert!((density - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_target_keeps_only_self_loops() {
        let positions = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let range = calibrate_sensing_range(&positions, 1e-9).unwrap();
        assert_eq!(range, 0.0);
        let a = build_adjacency(&positions, range).unwrap();
        assert_eq!(a, Matrix::identity(3));
    }

    #[test]
    fn single_agent_calibrates_to_zero_range() {
        assert_eq!(calibrate_sensing_range(&[[1.0, 2.0, 3.0]], 0.6).unwrap(), 0.0);
    }

    #[test]
    fn adjacency_range_zero_is_identity() {
        let positions = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(build_adjacency(&positions, 0.0).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn adjacency_boundary_is_inclusive() {
        let positions = [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let a = build_adjacency(&positions, 5.0).unwrap();
        assert_eq!(a, Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn adjacency_links_only_within_range() {
        // Collinear at 0, 4, 9 km with range 5: edges (1,2) and (2,3) only.
        let positions = [[0.0, 0.0, 0.0], [4.0, 0.0, 0.0], [9.0, 0.0, 0.0]];
        let a = build_adjacency(&positions, 5.0).unwrap();
        let expected = Matrix::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(a, expected);
    }

    #[test]
    fn step_zero_density_meets_the_target() {
        let cfg = small_config();
        for index in 0..cfg.trajectory_count {
            let traj = sample_scenario(&cfg, index).unwrap();
            assert!(
                traj.edge_density(0) >= cfg.target_edge_density,
                "trajectory {index} density {}",
                traj.edge_density(0)
            );
        }
    }

    #[test]
    fn split_proportions_round_to_nearest() {
        let cfg = ScenarioConfig {
            trajectory_count: 10,
            ..small_config()
        };
        let trajs: Vec<_> = (0..10).map(|i| sample_scenario(&cfg, i).unwrap()).collect();
        let split = split_dataset(cfg.clone(), trajs, (0.7, 0.2, 0.1), 1).unwrap();
        assert_eq!(split.train.len(), 7);
        assert_eq!(split.validation.len(), 2);
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let cfg = small_config();
        let trajs: Vec<_> = (0..6).map(|i| sample_scenario(&cfg, i).unwrap()).collect();
        let a = split_dataset(cfg.clone(), trajs.clone(), (0.7, 0.2, 0.1), 9).unwrap();
        let b = split_dataset(cfg.clone(), trajs, (0.7, 0.2, 0.1), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_datasets_all_go_to_train() {
        let cfg = ScenarioConfig {
            trajectory_count: 2,
            ..small_config()
        };
        let trajs: Vec<_> = (0..2).map(|i| sample_scenario(&cfg, i).unwrap()).collect();
        let split = split_dataset(cfg, trajs, (0.7, 0.2, 0.1), 1).unwrap();
        assert_eq!(split.train.len(), 2);
        assert!(split.validation.is_empty() && split.test.is_empty());
    }

    #[test]
    fn generation_is_stable_across_worker_counts() {
        let cfg = ScenarioConfig {
            trajectory_count: 4,
            step_count: 14,
            ..small_config()
        };
        let serial = generate_dataset(&cfg, 1).unwrap();
        let parallel = generate_dataset(&cfg, 4).unwrap();
        assert_eq!(serial, parallel);
    }
}
