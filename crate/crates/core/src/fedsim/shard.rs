use rand::seq::SliceRandom;

use super::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::rng::Streams;

fn build(dataset: &Dataset, groups: Vec<Vec<usize>>, streams: &Streams) -> Vec<ClientShard> {
    groups
        .into_iter()
        .enumerate()
        .map(|(client_id, idx)| {
            let part = dataset.select(&idx);
            ClientShard {
                client_id,
                x: part.x,
                labels: part.labels,
                rng_seed: streams.client_seed(client_id),
            }
        })
        .collect()
}

/// Sizes of `parts` contiguous chunks of `n` items, the first `n % parts`
/// chunks one larger.
fn near_equal(n: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| n / parts + usize::from(i < n % parts))
        .collect()
}

/// Random permutation split into `num_clients` near-equal shards.
pub fn shard_iid(dataset: &Dataset, num_clients: usize, streams: &Streams) -> Result<Vec<ClientShard>> {
    if num_clients == 0 || num_clients > dataset.len() {
        return Err(Error::Partition(format!(
            "cannot split {} points among {num_clients} clients",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut streams.sharding());
    let mut groups = Vec::with_capacity(num_clients);
    let mut at = 0;
    for size in near_equal(dataset.len(), num_clients) {
        groups.push(order[at..at + size].to_vec());
        at += size;
    }
    Ok(build(dataset, groups, streams))
}

/// Sorts by label, cuts `num_clients * shards_per_client` contiguous shards
/// of `shard_size` points and deals `shards_per_client` random shards to each
/// client.
///
/// Points beyond `num_shards * shard_size` are spread one each over the first
/// shards, so every point is assigned; a remainder of `num_shards` or more is
/// rejected.
pub fn shard_noniid(
    dataset: &Dataset,
    num_clients: usize,
    shards_per_client: usize,
    shard_size: usize,
    streams: &Streams,
) -> Result<Vec<ClientShard>> {
    let num_shards = num_clients * shards_per_client;
    if num_shards == 0 || shard_size == 0 {
        return Err(Error::Partition("need at least one non-empty shard".into()));
    }
    let needed = num_shards * shard_size;
    if dataset.len() < needed {
        return Err(Error::Partition(format!(
            "{num_shards} shards of {shard_size} need {needed} points, dataset has {}",
            dataset.len()
        )));
    }
    let extra = dataset.len() - needed;
    if extra >= num_shards {
        return Err(Error::Partition(format!(
            "{extra} points would be left over; increase shard_size"
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    // stable sort keeps the original order within a label
    order.sort_by_key(|&i| dataset.labels[i]);
    let mut shards = Vec::with_capacity(num_shards);
    let mut at = 0;
    for k in 0..num_shards {
        let size = shard_size + usize::from(k < extra);
        shards.push(&order[at..at + size]);
        at += size;
    }
    let mut deal: Vec<usize> = (0..num_shards).collect();
    deal.shuffle(&mut streams.sharding());
    let groups = deal
        .chunks_exact(shards_per_client)
        .map(|ks| ks.iter().flat_map(|&k| shards[k].iter().copied()).collect())
        .collect();
    Ok(build(dataset, groups, streams))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;
    use std::collections::BTreeSet;

    /// Features encode the point index so shards can be traced back.
    fn indexed(n: usize, classes: usize) -> Dataset {
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let labels = (0..n).map(|i| (i * 7 + 3) % classes).collect();
        Dataset::new(x, labels, classes).unwrap()
    }

    fn ids(shards: &[ClientShard]) -> Vec<usize> {
        let mut all: Vec<usize> = shards
            .iter()
            .flat_map(|s| s.x.as_slice().iter().map(|&v| v as usize))
            .collect();
        all.sort_unstable();
        all
    }

    #[test]
    fn iid_even_split() {
        let d = indexed(100, 4);
        let shards = shard_iid(&d, 10, &Streams::new(1)).unwrap();
        assert!(shards.iter().all(|s| s.len() == 10));
        assert_eq!(ids(&shards), (0..100).collect::<Vec<_>>());
        let seeds: BTreeSet<u64> = shards.iter().map(|s| s.rng_seed).collect();
        assert_eq!(seeds.len(), 10);
    }

    #[test]
    fn iid_uneven_split_front_loads() {
        let d = indexed(23, 3);
        let shards = shard_iid(&d, 5, &Streams::new(2)).unwrap();
        let sizes: Vec<usize> = shards.iter().map(ClientShard::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        assert_eq!(ids(&shards), (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn iid_single_client_is_a_permutation() {
        let d = indexed(30, 3);
        let shards = shard_iid(&d, 1, &Streams::new(3)).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(ids(&shards), (0..30).collect::<Vec<_>>());
        assert!(shard_iid(&d, 31, &Streams::new(3)).is_err());
    }

    #[test]
    fn iid_label_histograms_track_the_global_one() {
        // Pearson χ² of each shard's label counts against the global
        // proportions; with 3 classes (2 dof) the 99.9% quantile is 13.8.
        let d = indexed(3000, 3);
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            for s in shard_iid(&d, 10, &Streams::new(seed)).unwrap() {
                let mut counts = [0.0f64; 3];
                for &c in &s.labels {
                    counts[c] += 1.0;
                }
                let expect = s.len() as f64 / 3.0;
                let chi2: f64 = counts.iter().map(|c| (c - expect).powi(2) / expect).sum();
                worst = worst.max(chi2);
            }
        }
        assert!(worst < 20.0, "max χ² {worst}");
    }

    #[test]
    fn noniid_mnist_shape() {
        // 60000 points, 10 balanced labels, 100 clients x 2 shards of 300
        let n = 60_000;
        let x = Matrix::zeros(n, 1);
        let labels = (0..n).map(|i| i % 10).collect();
        let d = Dataset::new(x, labels, 10).unwrap();
        let shards = shard_noniid(&d, 100, 2, 300, &Streams::new(4)).unwrap();
        assert_eq!(shards.len(), 100);
        for s in &shards {
            assert_eq!(s.len(), 600);
            let distinct: BTreeSet<usize> = s.labels.iter().copied().collect();
            assert!(distinct.len() <= 2);
        }
    }

    #[test]
    fn noniid_is_a_partition_with_few_labels() {
        let d = indexed(600, 3);
        let shards = shard_noniid(&d, 20, 2, 15, &Streams::new(5)).unwrap();
        assert_eq!(ids(&shards), (0..600).collect::<Vec<_>>());
        for s in &shards {
            let distinct: BTreeSet<usize> = s.labels.iter().copied().collect();
            assert!(distinct.len() <= 4);
        }
    }

    #[test]
    fn noniid_distributes_small_remainder_and_rejects_shortfall() {
        let d = indexed(605, 3);
        let shards = shard_noniid(&d, 20, 2, 15, &Streams::new(6)).unwrap();
        assert_eq!(ids(&shards), (0..605).collect::<Vec<_>>());
        assert!(shard_noniid(&d, 20, 2, 16, &Streams::new(6)).is_err());
        assert!(shard_noniid(&d, 20, 2, 10, &Streams::new(6)).is_err());
    }
}
