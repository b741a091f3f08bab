//! Synthetic two-domain world generator.
//!
//! Latent user factors drive interactions in both domains. A planted
//! fraction of target interactions is genuinely caused by a preceding
//! source interaction: the target item is drawn cosine-close to the causing
//! item's attributes (or, for a small hidden-cause fraction, close to a
//! fixed rotation of them, so the cause is real but dissimilar in content
//! space). Ground-truth labels are retained for verification only and never
//! feed training.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{
    cosine, Domain, EmbeddingTable, GroundTruth, Interaction, InteractionLog, Space, TruthRecord,
};
use crate::error::{CecdrError, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub users: u32,
    pub source_items: u32,
    pub target_items: u32,
    pub latent_dim: usize,
    pub content_dim: usize,
    pub categories: usize,
    /// Fraction of target interactions caused by a source behavior.
    pub causal_fraction: f64,
    /// Fraction of causal pairs drawn through the hidden (content-dissimilar)
    /// mechanism.
    pub hidden_cause_fraction: f64,
    /// Noise scale added to item attributes to form content embeddings.
    pub noise: f64,
    /// Interactions per user per domain.
    pub events_per_user: usize,
    /// Sharpness of latent-affinity sampling.
    pub affinity_sharpness: f64,
    /// Sharpness of cause-conditioned sampling; higher means caused items
    /// hug their cause in attribute space.
    pub cause_sharpness: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            users: 1000,
            source_items: 2000,
            target_items: 2000,
            latent_dim: 16,
            content_dim: 16,
            categories: 12,
            causal_fraction: 0.5,
            hidden_cause_fraction: 0.1,
            noise: 0.1,
            events_per_user: 20,
            affinity_sharpness: 4.0,
            cause_sharpness: 64.0,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(CecdrError::Config(format!("world config: {msg}")))
            }
        };
        check(self.users > 0, "user count must be positive")?;
        check(self.source_items > 0 && self.target_items > 0, "item counts must be positive")?;
        check(self.latent_dim > 0 && self.content_dim > 0, "dimensions must be positive")?;
        check(self.categories > 0, "category count must be positive")?;
        check(
            (0.0..=1.0).contains(&self.causal_fraction),
            "causal fraction must lie in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.hidden_cause_fraction),
            "hidden-cause fraction must lie in [0, 1]",
        )?;
        check(self.noise >= 0.0, "noise must be nonnegative")?;
        check(self.events_per_user > 0, "events per user must be positive")?;
        check(
            (self.events_per_user as u32) <= self.source_items
                && (self.events_per_user as u32) <= self.target_items,
            "events per user cannot exceed the catalog size",
        )?;
        Ok(())
    }
}

/// A generated world: the observable log plus generator-side metadata used
/// only by diagnostics and tests.
pub struct World {
    pub cfg: WorldConfig,
    pub log: InteractionLog,
    pub truth: GroundTruth,
    pub content: EmbeddingTable,
    /// Unit attribute vectors, merged catalog order (source then target).
    pub attributes: Vec<Vec<f64>>,
    pub item_category: Vec<usize>,
    pub user_latents: Vec<Vec<f64>>,
}

impl World {
    pub fn global_item(&self, domain: Domain, item: u32) -> u32 {
        self.log.global_item(domain, item)
    }
}

fn normal_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Orthonormal rotation via Gram-Schmidt on a seeded Gaussian matrix.
fn random_rotation(dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v = normal_vec(dim, rng);
        for b in &basis {
            let proj = crate::data::dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

fn rotate(rot: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    rot.iter().map(|row| crate::data::dot(row, v)).collect()
}

/// Draw an index from unnormalized weights, excluding already-used indices.
/// The caller keeps `weights[used] == 0` and `total` in sync.
fn draw_weighted(weights: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    let mut r = rng.random::<f64>() * total;
    let mut last_alive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_alive = i;
            if r < w {
                return i;
            }
            r -= w;
        }
    }
    last_alive
}

// Per-coordinate cluster noise is scaled by 1/sqrt(dim) so the category
// signal survives in high dimension: cos(same-category pair) ≈ 1/(1+spread²).
const CATEGORY_SPREAD: f64 = 0.6;

struct UserDraw {
    records: Vec<Interaction>,
    truth: Vec<TruthRecord>,
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut global = stream(cfg.seed, Stream::WorldGlobal, 0);

    // category centers and item attributes (merged catalog, source first)
    let centers: Vec<Vec<f64>> = (0..cfg.categories)
        .map(|_| {
            let mut c = normal_vec(cfg.latent_dim, &mut global);
            normalize(&mut c);
            c
        })
        .collect();
    let total_items = (cfg.source_items + cfg.target_items) as usize;
    let mut item_category = Vec::with_capacity(total_items);
    let mut attributes = Vec::with_capacity(total_items);
    let cluster_noise = CATEGORY_SPREAD / (cfg.latent_dim as f64).sqrt();
    for _ in 0..total_items {
        let cat = global.random_range(0..cfg.categories);
        let mut a: Vec<f64> = centers[cat]
            .iter()
            .zip(normal_vec(cfg.latent_dim, &mut global))
            .map(|(c, n)| c + cluster_noise * n)
            .collect();
        normalize(&mut a);
        item_category.push(cat);
        attributes.push(a);
    }

    // hidden-cause mechanism: a fixed rotation of attribute space
    let rotation = random_rotation(cfg.latent_dim, &mut global);

    // content embeddings: attributes (optionally projected) plus noise
    let projection: Option<Vec<Vec<f64>>> = if cfg.content_dim == cfg.latent_dim {
        None
    } else {
        Some((0..cfg.content_dim).map(|_| {
            let mut row = normal_vec(cfg.latent_dim, &mut global);
            normalize(&mut row);
            row
        }).collect())
    };
    let mut content = EmbeddingTable::new(Space::Content, cfg.content_dim, total_items);
    let content_noise = cfg.noise / (cfg.content_dim as f64).sqrt();
    for (i, attr) in attributes.iter().enumerate() {
        let base: Vec<f64> = match &projection {
            None => attr.clone(),
            Some(p) => p.iter().map(|row| crate::data::dot(row, attr)).collect(),
        };
        let vec: Vec<f64> = base
            .iter()
            .zip(normal_vec(cfg.content_dim, &mut global))
            .map(|(b, n)| b + content_noise * n)
            .collect();
        content.insert(i as u32, vec)?;
    }

    let src_attrs = &attributes[..cfg.source_items as usize];
    let tgt_attrs = &attributes[cfg.source_items as usize..];

    // per-user generation on independent streams; assembled in user order
    let draws: Vec<(UserDraw, Vec<f64>)> = (0..cfg.users)
        .into_par_iter()
        .map(|uid| {
            let mut rng = stream(cfg.seed, Stream::WorldUser, uid as u64);
            let latent = normal_vec(cfg.latent_dim, &mut rng);

            // slot tags: first is always source so every causal target has a
            // candidate cause
            let mut tags: Vec<Domain> = std::iter::repeat_n(Domain::Source, cfg.events_per_user - 1)
                .chain(std::iter::repeat_n(Domain::Target, cfg.events_per_user))
                .collect();
            tags.shuffle(&mut rng);
            tags.insert(0, Domain::Source);

            let mut src_weights: Vec<f64> = src_attrs
                .iter()
                .map(|a| (cfg.affinity_sharpness * crate::data::dot(&latent, a)).exp())
                .collect();
            let mut src_total: f64 = src_weights.iter().sum();
            let tgt_latent_weights: Vec<f64> = tgt_attrs
                .iter()
                .map(|a| (cfg.affinity_sharpness * crate::data::dot(&latent, a)).exp())
                .collect();
            let mut tgt_used = vec![false; tgt_attrs.len()];

            let mut source_events: Vec<u32> = Vec::new();
            let mut records = Vec::with_capacity(tags.len());
            let mut truth = Vec::new();
            for (slot, &domain) in tags.iter().enumerate() {
                let ts = slot as u32 + 1;
                match domain {
                    Domain::Source => {
                        let item = draw_weighted(&src_weights, src_total, &mut rng);
                        src_total -= src_weights[item];
                        src_weights[item] = 0.0;
                        source_events.push(item as u32);
                        records.push(Interaction { user: uid, domain, item: item as u32, ts });
                    }
                    Domain::Target => {
                        let causal = rng.random::<f64>() < cfg.causal_fraction;
                        let (weights, cause): (Vec<f64>, Option<u32>) = if causal {
                            let cause = source_events[rng.random_range(0..source_events.len())];
                            let hidden = rng.random::<f64>() < cfg.hidden_cause_fraction;
                            let anchor = if hidden {
                                rotate(&rotation, &src_attrs[cause as usize])
                            } else {
                                src_attrs[cause as usize].clone()
                            };
                            let dots: Vec<f64> =
                                tgt_attrs.iter().map(|a| crate::data::dot(&anchor, a)).collect();
                            let top = dots.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let w = dots
                                .iter()
                                .map(|d| (cfg.cause_sharpness * (d - top)).exp())
                                .collect();
                            (w, Some(cause))
                        } else {
                            (tgt_latent_weights.clone(), None)
                        };
                        let masked: Vec<f64> = weights
                            .iter()
                            .zip(&tgt_used)
                            .map(|(&w, &used)| if used { 0.0 } else { w })
                            .collect();
                        let total: f64 = masked.iter().sum();
                        let item = draw_weighted(&masked, total, &mut rng);
                        tgt_used[item] = true;
                        records.push(Interaction { user: uid, domain, item: item as u32, ts });
                        truth.push(TruthRecord { user: uid, ts, y: cause.is_some(), cause_item: cause });
                    }
                }
            }
            (UserDraw { records, truth }, latent)
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.users as usize * cfg.events_per_user * 2);
    let mut truth_records = Vec::new();
    let mut user_latents = Vec::with_capacity(cfg.users as usize);
    for (draw, latent) in draws {
        records.extend(draw.records);
        truth_records.extend(draw.truth);
        user_latents.push(latent);
    }

    let log = InteractionLog {
        records,
        users: cfg.users,
        source_items: cfg.source_items,
        target_items: cfg.target_items,
    };
    log.validate()?;
    Ok(World {
        cfg: cfg.clone(),
        log,
        truth: GroundTruth { records: truth_records },
        content,
        attributes,
        item_category,
        user_latents,
    })
}

// ---- discrete oracle worlds -------------------------------------------------

/// Per-context Bernoulli tables for the brute-force-checkable universe:
/// y ~ Bernoulli(p_y[k]), s = y · Bernoulli(p_s_given_y1[k]).
#[derive(Clone, Debug)]
pub struct DiscreteSpec {
    pub p_y: Vec<f64>,
    pub p_s_given_y1: Vec<f64>,
}

impl DiscreteSpec {
    pub fn new(p_y: Vec<f64>, p_s_given_y1: Vec<f64>) -> Result<Self> {
        if p_y.len() != p_s_given_y1.len() || p_y.is_empty() {
            return Err(CecdrError::Config("discrete tables must be nonempty and equal length".into()));
        }
        if p_y.iter().chain(&p_s_given_y1).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(CecdrError::Config("discrete probabilities must lie in [0, 1]".into()));
        }
        Ok(DiscreteSpec { p_y, p_s_given_y1 })
    }

    pub fn contexts(&self) -> usize {
        self.p_y.len()
    }

    /// Marginal label rate P(s=1 | k) = p_y[k] · p_s_given_y1[k].
    pub fn label_rate(&self, k: usize) -> f64 {
        self.p_y[k] * self.p_s_given_y1[k]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscreteSample {
    pub context: u32,
    pub y: bool,
    pub s: bool,
}

pub fn generate_discrete_world(spec: &DiscreteSpec, n: usize, seed: u64) -> Vec<DiscreteSample> {
    let mut rng = stream(seed, Stream::Discrete, 0);
    let k = spec.contexts();
    (0..n)
        .map(|_| {
            let context = rng.random_range(0..k) as u32;
            let y = rng.random::<f64>() < spec.p_y[context as usize];
            let s = y && rng.random::<f64>() < spec.p_s_given_y1[context as usize];
            DiscreteSample { context, y, s }
        })
        .collect()
}

/// Mean cosine similarity between cause/effect attribute pairs, and between
/// random cross-domain pairs, for the planted-similarity diagnostics.
pub fn cause_effect_similarity(world: &World, random_pairs: usize, seed: u64) -> (f64, f64) {
    let truth_idx = world.truth.index();
    let n_src = world.cfg.source_items as usize;
    let mut caused = Vec::new();
    for r in &world.log.records {
        if r.domain != Domain::Target {
            continue;
        }
        if let Some(t) = truth_idx.get(&(r.user, r.ts)) {
            if let Some(cause) = t.cause_item {
                caused.push(cosine(
                    &world.attributes[cause as usize],
                    &world.attributes[n_src + r.item as usize],
                ));
            }
        }
    }
    let mean_caused = caused.iter().sum::<f64>() / caused.len().max(1) as f64;
    let mut rng = stream(seed, Stream::WorldGlobal, 1);
    let mut rand_sum = 0.0;
    for _ in 0..random_pairs {
        let a = rng.random_range(0..n_src);
        let b = rng.random_range(0..world.cfg.target_items as usize);
        rand_sum += cosine(&world.attributes[a], &world.attributes[n_src + b]);
    }
    (mean_caused, rand_sum / random_pairs.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> WorldConfig {
        WorldConfig {
            users: 60,
            source_items: 120,
            target_items: 120,
            events_per_user: 10,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn zero_causal_fraction_means_no_causal_labels() {
        let world = generate_world(&WorldConfig { causal_fraction: 0.0, ..small_cfg() }).unwrap();
        assert!(world.truth.records.iter().all(|r| !r.y));
    }

    #[test]
    fn full_causal_fraction_always_has_a_preceding_cause() {
        let world = generate_world(&WorldConfig {
            causal_fraction: 1.0,
            noise: 0.0,
            ..small_cfg()
        })
        .unwrap();
        let histories = world.log.histories();
        for t in &world.truth.records {
            assert!(t.y);
            let cause = t.cause_item.unwrap();
            let h = &histories[t.user as usize];
            assert!(
                h.source.iter().any(|&(item, ts)| item == cause && ts < t.ts),
                "cause must precede the target interaction"
            );
        }
    }

    #[test]
    fn default_world_causal_fraction_is_near_rho() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let frac = world.truth.causal_fraction();
        assert!((frac - 0.5).abs() < 0.03, "empirical causal fraction {frac}");
    }

    #[test]
    fn same_seed_regenerates_identical_world() {
        let cfg = small_cfg();
        let w1 = generate_world(&cfg).unwrap();
        let w2 = generate_world(&cfg).unwrap();
        assert_eq!(w1.log, w2.log);
        assert_eq!(w1.truth, w2.truth);
        for id in w1.content.ids() {
            assert_eq!(w1.content.get(id).unwrap(), w2.content.get(id).unwrap());
        }
    }

    #[test]
    fn caused_pairs_are_attribute_closer_than_random() {
        for seed in [1, 2, 3] {
            let world = generate_world(&WorldConfig { seed, ..small_cfg() }).unwrap();
            let (caused, random) = cause_effect_similarity(&world, 2000, seed);
            assert!(caused > random, "seed {seed}: caused {caused} vs random {random}");
        }
    }

    #[test]
    fn timestamps_strictly_increase_per_user_domain() {
        let world = generate_world(&small_cfg()).unwrap();
        world.log.validate().unwrap();
    }

    #[test]
    fn discrete_trivial_tables() {
        let all_on = DiscreteSpec::new(vec![1.0], vec![1.0]).unwrap();
        assert!(generate_discrete_world(&all_on, 500, 3).iter().all(|s| s.s && s.y));
        let none = DiscreteSpec::new(vec![0.0], vec![0.5]).unwrap();
        assert!(generate_discrete_world(&none, 500, 3).iter().all(|s| !s.s && !s.y));
    }

    #[test]
    fn discrete_label_rate_matches_product_of_tables() {
        let spec = DiscreteSpec::new(vec![0.8, 0.2], vec![0.5, 0.5]).unwrap();
        let samples = generate_discrete_world(&spec, 100_000, 11);
        for k in 0..2 {
            let in_ctx: Vec<_> = samples.iter().filter(|s| s.context == k as u32).collect();
            let rate = in_ctx.iter().filter(|s| s.s).count() as f64 / in_ctx.len() as f64;
            assert!(
                (rate - spec.label_rate(k)).abs() < 0.01,
                "context {k}: empirical {rate} vs expected {}",
                spec.label_rate(k)
            );
        }
    }

    #[test]
    fn discrete_frequencies_within_binomial_bounds() {
        // 3σ bounds at the generator's own tables
        let spec = DiscreteSpec::new(vec![0.3, 0.7, 0.5], vec![0.6, 0.4, 0.9]).unwrap();
        let n = 60_000;
        let samples = generate_discrete_world(&spec, n, 5);
        for k in 0..3 {
            let in_ctx: Vec<_> = samples.iter().filter(|s| s.context == k as u32).collect();
            let m = in_ctx.len() as f64;
            let y_rate = in_ctx.iter().filter(|s| s.y).count() as f64 / m;
            let sigma = (spec.p_y[k] * (1.0 - spec.p_y[k]) / m).sqrt();
            assert!(
                (y_rate - spec.p_y[k]).abs() < 3.0 * sigma + 1e-9,
                "context {k}: y rate {y_rate} vs {} (σ={sigma})",
                spec.p_y[k]
            );
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_world(&WorldConfig { causal_fraction: 1.5, ..small_cfg() }).is_err());
        assert!(generate_world(&WorldConfig { users: 0, ..small_cfg() }).is_err());
        assert!(generate_world(&WorldConfig {
            events_per_user: 200,
            source_items: 100,
            ..small_cfg()
        })
        .is_err());
    }
}
