//! Stochastic block model benchmark graphs.
//!
//! Features carry a one-hot block signal plus Gaussian noise, labels are the
//! block ids, and nodes get a deterministic 60/20/20 train/val/test split.
//! Everything is a pure function of the config, so equal configs produce
//! byte-identical graphs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::graph::{Graph, MaskKind};
use crate::scalar::Scalar;
use crate::seeding::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            block_sizes: vec![500; 4],
            p_in: 0.02,
            p_out: 0.002,
            feat_dim: 16,
            noise: 0.1,
            seed: 0,
        }
    }
}

pub fn generate_sbm<S: Scalar>(cfg: &SbmConfig) -> Result<Graph<S>> {
    let n: usize = cfg.block_sizes.iter().sum();
    if n == 0 {
        return Err(Error::data("SBM with zero total nodes"));
    }
    if cfg.feat_dim == 0 {
        return Err(Error::config("SBM feat_dim must be positive"));
    }
    for (name, p) in [("p_in", cfg.p_in), ("p_out", cfg.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("SBM {name} = {p} outside [0, 1]")));
        }
    }

    let mut block_of = Vec::with_capacity(n);
    for (b, &size) in cfg.block_sizes.iter().enumerate() {
        block_of.extend(std::iter::repeat(b).take(size));
    }
    let num_classes = cfg.block_sizes.len();

    let mut rng = rng_from(cfg.seed);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block_of[u] == block_of[v] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut features = Mat::zeros(n, cfg.feat_dim);
    for v in 0..n {
        let row = features.row_mut(v);
        row[block_of[v] % cfg.feat_dim] = S::one();
        for x in row.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *x += S::of(cfg.noise * g);
        }
    }

    let labels: Vec<i64> = block_of.iter().map(|&b| b as i64).collect();

    // Fisher-Yates permutation, then fixed 60/20/20 prefix split.
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let n_train = n * 60 / 100;
    let n_val = n * 20 / 100;
    let mut masks = vec![MaskKind::None; n];
    for (rank, &v) in perm.iter().enumerate() {
        masks[v] = if rank < n_train {
            MaskKind::Train
        } else if rank < n_train + n_val {
            MaskKind::Val
        } else {
            MaskKind::Test
        };
    }

    Graph::new(n, &edges, features, labels, masks, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> SbmConfig {
        SbmConfig {
            block_sizes: vec![3, 3],
            p_in: 1.0,
            p_out: 0.0,
            feat_dim: 4,
            noise: 0.1,
            seed: 11,
        }
    }

    #[test]
    fn extreme_probabilities_give_two_cliques() {
        let g: Graph<f64> = generate_sbm(&base_cfg()).unwrap();
        assert_eq!(g.n(), 6);
        assert_eq!(g.num_edges(), 6); // two triangles
        for v in 0..3 {
            assert_eq!(g.degree(v), 2);
            for &nb in g.neighbors(v) {
                assert_eq!(g.labels()[nb], g.labels()[v]);
            }
        }
    }

    #[test]
    fn same_seed_reproduces_exactly() {
        let a: Graph<f64> = generate_sbm(&base_cfg()).unwrap();
        let b: Graph<f64> = generate_sbm(&base_cfg()).unwrap();
        assert_eq!(a, b);
        let c: Graph<f64> = generate_sbm(&SbmConfig { seed: 12, ..base_cfg() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn edge_densities_track_probabilities() {
        // Monte-Carlo check: realized within/between-block densities on a
        // 4x500 graph stay within 10% of p_in/p_out.
        let cfg = SbmConfig {
            block_sizes: vec![500; 4],
            p_in: 0.02,
            p_out: 0.002,
            feat_dim: 8,
            noise: 0.1,
            seed: 5,
        };
        let g: Graph<f64> = generate_sbm(&cfg).unwrap();
        let n = g.n();
        let (mut within, mut between) = (0usize, 0usize);
        for u in 0..n {
            for &v in g.neighbors(u) {
                if v > u {
                    if g.labels()[u] == g.labels()[v] {
                        within += 1;
                    } else {
                        between += 1;
                    }
                }
            }
        }
        let within_pairs = 4.0 * (500.0 * 499.0 / 2.0);
        let between_pairs = (n * (n - 1) / 2) as f64 - within_pairs;
        let d_in = within as f64 / within_pairs;
        let d_out = between as f64 / between_pairs;
        assert!((d_in - cfg.p_in).abs() / cfg.p_in < 0.10, "d_in = {d_in}");
        assert!((d_out - cfg.p_out).abs() / cfg.p_out < 0.10, "d_out = {d_out}");
    }

    #[test]
    fn split_fractions_and_mask_labels() {
        let cfg = SbmConfig {
            block_sizes: vec![50, 50],
            p_in: 0.2,
            p_out: 0.02,
            feat_dim: 4,
            noise: 0.1,
            seed: 3,
        };
        let g: Graph<f64> = generate_sbm(&cfg).unwrap();
        assert_eq!(g.mask_count(MaskKind::Train), 60);
        assert_eq!(g.mask_count(MaskKind::Val), 20);
        assert_eq!(g.mask_count(MaskKind::Test), 20);
    }

    #[test]
    fn zero_nodes_rejected() {
        let cfg = SbmConfig { block_sizes: vec![], ..base_cfg() };
        assert!(generate_sbm::<f64>(&cfg).is_err());
    }
}
