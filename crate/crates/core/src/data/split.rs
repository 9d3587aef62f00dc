use std::collections::{BTreeMap, HashMap};

use super::{dedup_earliest, DataError, Interaction};

/// A user's interactions in timestamp order, as catalog indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub user: usize,
    pub items: Vec<usize>,
    pub timestamps: Vec<i64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A (history, ground truth) pair for validation or test scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalRecord {
    pub user: usize,
    pub history: Vec<usize>,
    pub history_timestamps: Vec<i64>,
    pub truth: Vec<usize>,
    pub truth_timestamps: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    /// Index → external user id, sorted.
    pub users: Vec<String>,
    /// Index → external item id, sorted.
    pub catalog: Vec<String>,
    pub train: Vec<Sequence>,
    pub val: Vec<EvalRecord>,
    pub test: Vec<EvalRecord>,
    pub day_length: i64,
}

impl DatasetSplit {
    pub fn catalog_size(&self) -> usize {
        self.catalog.len()
    }

    pub fn item_lookup(&self) -> HashMap<&str, usize> {
        self.catalog.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    pub fn user_lookup(&self) -> HashMap<&str, usize> {
        self.users.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    /// Training sequence of `user`, if the user has one.
    pub fn train_sequence(&self, user: usize) -> Option<&Sequence> {
        self.train.binary_search_by_key(&user, |s| s.user).ok().map(|i| &self.train[i])
    }
}

/// Chronological split: the last `day_length` window ending at the latest
/// timestamp is the test truth, the window before it is the validation
/// truth, and everything earlier is training data.
///
/// Validation histories are the user's training interactions; test histories
/// are training plus validation interactions. Users whose history or truth
/// would be empty are left out of that split.
pub fn build_split(interactions: &[Interaction], day_length: i64) -> Result<DatasetSplit, DataError> {
    if day_length <= 0 {
        return Err(DataError::InvalidSpec(format!("day_length must be positive, got {day_length}")));
    }
    let interactions = dedup_earliest(interactions.to_vec());
    let max_ts = interactions.iter().map(|i| i.timestamp).max().ok_or(DataError::Empty)?;
    let min_ts = interactions.iter().map(|i| i.timestamp).min().ok_or(DataError::Empty)?;
    let test_start = max_ts - day_length;
    let val_start = max_ts - 2 * day_length;
    // The train window must be non-empty: at least one timestamp at or
    // before the start of the validation window.
    if min_ts > val_start {
        return Err(DataError::SpanTooShort {
            windows: (max_ts - min_ts) as f64 / day_length as f64 + 1.0,
        });
    }

    let mut catalog: Vec<String> = interactions.iter().map(|i| i.item_id.clone()).collect();
    catalog.sort_unstable();
    catalog.dedup();
    let item_index: HashMap<&str, usize> =
        catalog.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut per_user: BTreeMap<&str, Vec<(i64, usize)>> = BTreeMap::new();
    for it in &interactions {
        per_user.entry(it.user_id.as_str()).or_default().push((it.timestamp, item_index[it.item_id.as_str()]));
    }

    let users: Vec<String> = per_user.keys().map(|s| s.to_string()).collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (user, events) in per_user.into_values().enumerate() {
        let mut events = events;
        events.sort_by_key(|&(ts, _)| ts);
        let part = |lo: i64, hi: i64| -> (Vec<usize>, Vec<i64>) {
            events.iter().filter(|(ts, _)| *ts > lo && *ts <= hi).map(|&(ts, it)| (it, ts)).unzip()
        };
        let (train_items, train_ts) = part(i64::MIN, val_start);
        let (val_items, val_ts) = part(val_start, test_start);
        let (test_items, test_ts) = part(test_start, max_ts);

        if !train_items.is_empty() && !val_items.is_empty() {
            val.push(EvalRecord {
                user,
                history: train_items.clone(),
                history_timestamps: train_ts.clone(),
                truth: val_items.clone(),
                truth_timestamps: val_ts.clone(),
            });
        }
        let mut test_history = train_items.clone();
        test_history.extend_from_slice(&val_items);
        let mut test_history_ts = train_ts.clone();
        test_history_ts.extend_from_slice(&val_ts);
        if !test_history.is_empty() && !test_items.is_empty() {
            test.push(EvalRecord {
                user,
                history: test_history,
                history_timestamps: test_history_ts,
                truth: test_items,
                truth_timestamps: test_ts,
            });
        }
        if !train_items.is_empty() {
            train.push(Sequence { user, items: train_items, timestamps: train_ts });
        }
    }

    Ok(DatasetSplit { users, catalog, train, val, test, day_length })
}
