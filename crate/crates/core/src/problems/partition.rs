use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Equal-size, label-skewed split of a labelled dataset across `n` clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPartition {
    pub alpha: f64,
    pub n: usize,
    /// `class_counts[j][c]`: samples of class `c` held by client `j`.
    pub class_counts: Vec<Vec<usize>>,
    /// Sample indices (into the untrimmed label list) held by each client.
    pub shards: Vec<Vec<usize>>,
    /// Dataset size after trimming to a multiple of `n`.
    pub trimmed_size: usize,
}

impl DirichletPartition {
    pub fn per_client(&self) -> usize {
        self.trimmed_size / self.n
    }
}

/// Rounds `weights · total` to non-negative integers summing exactly to
/// `total` (largest remainder, ties to the lower index).
pub fn rounded_allocation(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if !(sum > 0.0 && sum.is_finite()) {
        let mut out = vec![0; weights.len()];
        out[0] = total;
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().cycle().take(total.saturating_sub(assigned)) {
        out[c] += 1;
    }
    out
}

/// Takes `request[c]` from each pool, capped at what is left; any shortfall
/// is then taken from the pool with the most remaining samples (ties to the
/// lower class index), repeatedly. Updates `remaining` in place.
///
/// Fails only when the pools together hold fewer samples than requested.
pub fn allocate_with_topup(request: &[usize], remaining: &mut [usize]) -> Result<Vec<usize>> {
    if request.len() != remaining.len() {
        return Err(SimError::config("request and pool lists differ in length"));
    }
    let wanted: usize = request.iter().sum();
    if remaining.iter().sum::<usize>() < wanted {
        return Err(SimError::config("class pools hold fewer samples than requested"));
    }
    let mut got = vec![0; request.len()];
    let mut shortfall = 0;
    for c in 0..request.len() {
        let take = request[c].min(remaining[c]);
        got[c] = take;
        remaining[c] -= take;
        shortfall += request[c] - take;
    }
    while shortfall > 0 {
        let (c, &left) = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty pools");
        let take = shortfall.min(left);
        got[c] += take;
        remaining[c] -= take;
        shortfall -= take;
    }
    Ok(got)
}

fn dirichlet_proportions(classes: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        return draws.iter().map(|g| g / sum).collect();
    }
    // every draw underflowed: the Dirichlet mass sits on one vertex
    let mut p = vec![0.0; classes];
    p[rng.random_range(0..classes)] = 1.0;
    p
}

/// Equal-size Dirichlet partition of `labels` (values in `0..classes`).
///
/// The label list is first trimmed to a multiple of `n` by dropping its tail.
/// Clients are filled in order: client `j` draws `pⱼ ~ Dir(α)`, rounds it to a
/// request summing to `N/n`, and takes samples from the front of each class
/// pool, topping up shortfalls from the fullest remaining pools.
pub fn equal_size_dirichlet(
    labels: &[usize],
    classes: usize,
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<DirichletPartition> {
    if n == 0 || classes == 0 {
        return Err(SimError::config("partition needs n >= 1 and classes >= 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(SimError::config(format!("alpha must be positive and finite, got {alpha}")));
    }
    let trimmed_size = labels.len() / n * n;
    if trimmed_size == 0 {
        return Err(SimError::config("fewer samples than clients"));
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (idx, &y) in labels[..trimmed_size].iter().enumerate() {
        if y >= classes {
            return Err(SimError::config(format!("label {y} out of range for {classes} classes")));
        }
        pools[y].push(idx);
    }
    let mut remaining: Vec<usize> = pools.iter().map(Vec::len).collect();
    let mut cursor = vec![0usize; classes];
    let per_client = trimmed_size / n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut class_counts = Vec::with_capacity(n);
    let mut shards = Vec::with_capacity(n);
    for _ in 0..n {
        let p = dirichlet_proportions(classes, alpha, &mut rng);
        let request = rounded_allocation(&p, per_client);
        let got = allocate_with_topup(&request, &mut remaining)?;
        let mut shard = Vec::with_capacity(per_client);
        for (c, &k) in got.iter().enumerate() {
            shard.extend_from_slice(&pools[c][cursor[c]..cursor[c] + k]);
            cursor[c] += k;
        }
        class_counts.push(got);
        shards.push(shard);
    }
    Ok(DirichletPartition { alpha, n, class_counts, shards, trimmed_size })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rounding_sums_exactly() {
        assert_eq!(rounded_allocation(&[0.5, 0.5], 7), vec![4, 3]);
        assert_eq!(rounded_allocation(&[0.2, 0.3, 0.5], 10), vec![2, 3, 5]);
        assert_eq!(rounded_allocation(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(rounded_allocation(&[0.0, 0.0], 3), vec![3, 0]);
    }

    #[test]
    fn topup_toy_pool() {
        // pools 6,3,4; request 2,5,1: class 1 is short by 2
        // after capped takes the pools are 4,0,3, so the 2 come from class 0
        let mut remaining = vec![6, 3, 4];
        let got = allocate_with_topup(&[2, 5, 1], &mut remaining).unwrap();
        assert_eq!(got, vec![4, 3, 1]);
        assert_eq!(remaining, vec![2, 0, 3]);

        // shortfall larger than the fullest pool spills into the next one
        let mut remaining = vec![1, 2, 2];
        let got = allocate_with_topup(&[0, 0, 5], &mut remaining).unwrap();
        assert_eq!(got, vec![1, 2, 2]);
        assert_eq!(remaining, vec![0, 0, 0]);

        // ties go to the lower class index
        let mut remaining = vec![3, 3, 0];
        let got = allocate_with_topup(&[0, 0, 1], &mut remaining).unwrap();
        assert_eq!(got, vec![1, 0, 0]);
    }

    #[test]
    fn topup_rejects_impossible_request() {
        let mut remaining = vec![1, 1];
        assert!(allocate_with_topup(&[2, 1], &mut remaining).is_err());
    }

    #[test]
    fn two_clients_small_alpha_equal_sizes() {
        let labels: Vec<usize> = (0..101).map(|i| i % 2).collect();
        let part = equal_size_dirichlet(&labels, 2, 2, 0.1, 4).unwrap();
        assert_eq!(part.trimmed_size, 100);
        for j in 0..2 {
            assert_eq!(part.shards[j].len(), 50);
            assert_eq!(part.class_counts[j].iter().sum::<usize>(), 50);
        }
    }

    #[test]
    fn huge_alpha_reproduces_global_histogram() {
        let classes = 4;
        let labels: Vec<usize> = (0..800).map(|i| i % classes).collect();
        let part = equal_size_dirichlet(&labels, classes, 10, 1e9, 1).unwrap();
        for row in &part.class_counts {
            for &c in row {
                assert!((c as i64 - 20).abs() <= 1, "{row:?}");
            }
        }
    }

    #[test]
    fn tiny_alpha_underflow_falls_back_to_one_hot() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let part = equal_size_dirichlet(&labels, 3, 3, 1e-300, 2).unwrap();
        for row in &part.class_counts {
            assert_eq!(row.iter().sum::<usize>(), 20);
        }
    }

    proptest! {
        #[test]
        fn partition_conserves_samples(
            n in 1usize..12,
            classes in 2usize..6,
            size in 12usize..400,
            alpha in 0.01f64..10.0,
            seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = (0..size).map(|i| (i * 7 + i / 3) % classes).collect();
            let part = equal_size_dirichlet(&labels, classes, n, alpha, seed).unwrap();
            let per = size / n;
            let mut seen = vec![false; size];
            for (j, shard) in part.shards.iter().enumerate() {
                prop_assert_eq!(shard.len(), per);
                prop_assert_eq!(part.class_counts[j].iter().sum::<usize>(), per);
                for &idx in shard {
                    prop_assert!(idx < part.trimmed_size);
                    prop_assert!(!seen[idx]);
                    seen[idx] = true;
                }
            }
            prop_assert_eq!(seen.iter().filter(|s| **s).count(), part.trimmed_size);
            for c in 0..classes {
                let pool = labels[..part.trimmed_size].iter().filter(|&&y| y == c).count();
                let used: usize = part.class_counts.iter().map(|r| r[c]).sum();
                prop_assert_eq!(used, pool);
            }
        }
    }
}
