use std::collections::HashSet;

use rand::Rng;

use super::{DataError, DatasetSplit, Sequence};

/// Upper bound on rejection-sampling draws for one negative.
pub const NEGATIVE_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingConfig {
    /// Minimum number of history items in a training instance.
    pub min_history: usize,
    /// How many items after the split point may be drawn as the positive.
    /// `None` means the whole remaining sequence.
    pub future_window: Option<usize>,
    /// Histories are truncated to their most recent `max_history` items.
    pub max_history: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { min_history: 1, future_window: None, max_history: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainInstance {
    pub user: usize,
    pub history: Vec<usize>,
    pub positive: usize,
    /// Number of leading sequence items treated as history (before truncation).
    pub split_point: usize,
}

/// Draw the split point uniformly from `[min_history, len - 1]`, then the
/// positive uniformly from the future window. Returns `None` when the
/// sequence is too short.
pub fn sample_instance<R: Rng + ?Sized>(
    seq: &Sequence,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Option<TrainInstance> {
    let min_history = cfg.min_history.max(1);
    if seq.len() < min_history + 1 {
        return None;
    }
    let t = rng.random_range(min_history..seq.len());
    instance_at(seq, t, cfg, rng)
}

/// Build an instance with a fixed split point `t` (history = first `t` items).
pub fn instance_at<R: Rng + ?Sized>(
    seq: &Sequence,
    t: usize,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Option<TrainInstance> {
    if t == 0 || t >= seq.len() || cfg.max_history == 0 {
        return None;
    }
    let end = match cfg.future_window {
        Some(w) => (t + w.max(1)).min(seq.len()),
        None => seq.len(),
    };
    let positive = seq.items[rng.random_range(t..end)];
    let start = t.saturating_sub(cfg.max_history);
    Some(TrainInstance {
        user: seq.user,
        history: seq.items[start..t].to_vec(),
        positive,
        split_point: t,
    })
}

/// Per-user sets of interacted items, used to exclude negatives.
#[derive(Debug, Clone, Default)]
pub struct InteractedItems {
    per_user: Vec<HashSet<usize>>,
}

impl InteractedItems {
    pub fn from_split(split: &DatasetSplit) -> Self {
        let mut per_user = vec![HashSet::new(); split.users.len()];
        for seq in &split.train {
            per_user[seq.user].extend(seq.items.iter().copied());
        }
        Self { per_user }
    }

    pub fn from_sets(per_user: Vec<HashSet<usize>>) -> Self {
        Self { per_user }
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.per_user.get(user).is_some_and(|s| s.contains(&item))
    }

    pub fn count(&self, user: usize) -> usize {
        self.per_user.get(user).map_or(0, HashSet::len)
    }
}

/// B instances plus B negatives shared by every instance in the batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBatch {
    pub instances: Vec<TrainInstance>,
    pub shared_negatives: Vec<usize>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Candidate set for instance `i`: its positive first, then every shared
    /// negative that differs from that positive.
    pub fn candidates(&self, i: usize) -> Vec<usize> {
        let positive = self.instances[i].positive;
        std::iter::once(positive)
            .chain(self.shared_negatives.iter().copied().filter(|&n| n != positive))
            .collect()
    }
}

/// Sample one negative per instance, uniformly over items the instance's user
/// has not interacted with.
pub fn make_batch<R: Rng + ?Sized>(
    instances: Vec<TrainInstance>,
    catalog_size: usize,
    interacted: &InteractedItems,
    rng: &mut R,
) -> Result<TrainBatch, DataError> {
    let mut shared_negatives = Vec::with_capacity(instances.len());
    for inst in &instances {
        let mut found = None;
        if interacted.count(inst.user) < catalog_size {
            for _ in 0..NEGATIVE_RETRIES {
                let cand = rng.random_range(0..catalog_size);
                if !interacted.contains(inst.user, cand) {
                    found = Some(cand);
                    break;
                }
            }
        }
        shared_negatives
            .push(found.ok_or(DataError::CatalogExhausted { user: inst.user, retries: NEGATIVE_RETRIES })?);
    }
    Ok(TrainBatch { instances, shared_negatives })
}
