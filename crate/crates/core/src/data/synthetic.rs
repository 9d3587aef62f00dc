use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

use super::{DataError, Interaction};

/// Parameters of a planted-category interaction corpus.
///
/// Items are split into `n_categories` contiguous blocks of near-equal size.
/// Each user draws a category mixture from a symmetric Dirichlet, then
/// builds a sequence by repeatedly drawing a category from the mixture and
/// an item from that category.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    /// Symmetric Dirichlet concentration of each user's category mixture.
    pub concentration: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Timestamps are spread uniformly over `n_days * day_length` seconds.
    pub n_days: usize,
    pub day_length: i64,
    /// Re-draw the user's mixture at the sequence midpoint.
    pub drift: bool,
    /// Zipf exponent of item popularity inside a category; 0 is uniform.
    pub popularity_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 2000,
            n_categories: 4,
            concentration: 0.3,
            min_len: 40,
            max_len: 80,
            n_days: 10,
            day_length: 86_400,
            drift: false,
            popularity_skew: 0.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |msg: &str| Err(DataError::InvalidSpec(msg.to_string()));
        if self.n_categories == 0 {
            return fail("number of categories must be at least 1");
        }
        if self.n_items < self.n_categories {
            return fail("need at least one item per category");
        }
        if self.n_users == 0 {
            return fail("number of users must be at least 1");
        }
        if self.min_len == 0 || self.max_len < self.min_len {
            return fail("sequence lengths must satisfy 1 <= min_len <= max_len");
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return fail("concentration must be positive");
        }
        if self.n_days < 3 || self.day_length <= 0 {
            return fail("need at least 3 days of positive length");
        }
        if !(self.popularity_skew >= 0.0 && self.popularity_skew.is_finite()) {
            return fail("popularity_skew must be non-negative");
        }
        Ok(())
    }

    /// Planted category of item index `item`.
    pub fn category_of(&self, item: usize) -> usize {
        item * self.n_categories / self.n_items
    }

    pub fn item_id(&self, item: usize) -> String {
        format!("i{:0w$}", item, w = digits(self.n_items))
    }

    pub fn user_id(&self, user: usize) -> String {
        format!("u{:0w$}", user, w = digits(self.n_users))
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Raw generated log (repeats of a (user, item) pair are kept).
    pub interactions: Vec<Interaction>,
    /// `(item_id, category)` for every catalog item.
    pub labels: Vec<(String, usize)>,
    /// Per-user category of every generated interaction, in sequence order.
    pub categories: Vec<Vec<usize>>,
}

fn draw_mixture<R: Rng>(k: usize, gamma: &Gamma<f64>, rng: &mut R) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    loop {
        let raw: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 && total.is_finite() {
            return raw.into_iter().map(|x| x / total).collect();
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.n_categories;
    let gamma = Gamma::new(spec.concentration, 1.0)
        .map_err(|e| DataError::InvalidSpec(e.to_string()))?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for item in 0..spec.n_items {
        members[spec.category_of(item)].push(item);
    }
    let within: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| {
            let weights: Vec<f64> =
                (0..m.len()).map(|r| ((r + 1) as f64).powf(-spec.popularity_skew)).collect();
            WeightedIndex::new(weights).expect("non-empty positive weights")
        })
        .collect();

    let horizon = spec.n_days as i64 * spec.day_length;
    let mut interactions = Vec::new();
    let mut categories = Vec::with_capacity(spec.n_users);
    for user in 0..spec.n_users {
        let user_id = spec.user_id(user);
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut timestamps: Vec<i64> = (0..len).map(|_| rng.random_range(0..horizon)).collect();
        timestamps.sort_unstable();

        let mut mixture = WeightedIndex::new(draw_mixture(k, &gamma, &mut rng)).expect("valid mixture");
        let mut user_cats = Vec::with_capacity(len);
        for (pos, ts) in timestamps.into_iter().enumerate() {
            if spec.drift && pos == len / 2 && pos > 0 {
                mixture = WeightedIndex::new(draw_mixture(k, &gamma, &mut rng)).expect("valid mixture");
            }
            let cat = mixture.sample(&mut rng);
            let item = members[cat][within[cat].sample(&mut rng)];
            user_cats.push(cat);
            interactions.push(Interaction { user_id: user_id.clone(), item_id: spec.item_id(item), timestamp: ts });
        }
        categories.push(user_cats);
    }

    let labels = (0..spec.n_items).map(|i| (spec.item_id(i), spec.category_of(i))).collect();
    Ok(SyntheticData { interactions, labels, categories })
}
