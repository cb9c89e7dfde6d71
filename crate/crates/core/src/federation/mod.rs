//! FedAvg round loop with benign (optionally FLIP-hardened) and malicious
//! clients.

mod aggregate;

pub use aggregate::{
    aggregate, aggregate_coordinatewise, aggregate_fedavg, aggregate_krum, krum_scores, Aggregate,
    AggregatorKind, CoordinateRule,
};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dirichlet_partition, make_poison_batch, stamp_into, Batch, LabeledDataset, TriggerSpec};
use crate::error::{FlipError, Result};
use crate::guard::{backdoor_sources, compute_metrics, MetricSet};
use crate::inversion::{
    asymmetric_invert, invert_trigger, select_pairs, symmetric_invert, universal_hardening, warmup_distances,
    DistanceMatrix, InversionConfig,
};
use crate::model::{minibatch_indices, LinearModel, SgdConfig};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Benign,
    Malicious,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    None,
    Continuous,
    SingleShot,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    None,
    Flip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub clients_per_round: usize,
    /// Malicious clients in the population; all of them join every attack
    /// round.
    pub num_adversaries: usize,
    pub total_rounds: usize,
    pub attack_mode: AttackMode,
    pub attack_start_round: usize,
    /// Attack rounds for single-shot mode; empty means `[attack_start_round]`.
    pub single_shot_rounds: Vec<usize>,
    /// Malicious updates are submitted as `global + γ (local − global)`.
    pub scale_factor: f64,
    pub aggregator: AggregatorKind,
    pub defense: DefenseKind,
    /// Run trigger inversion and hardening on benign clients (FLIP only).
    pub adversarial_training: bool,
    /// First round in which benign clients harden; defaults to the attack
    /// start.
    pub defense_start_round: Option<usize>,
    pub benign_lr: f64,
    pub poison_lr: f64,
    pub batch_size: usize,
    pub poison_count: usize,
    pub epochs_continuous: usize,
    pub epochs_single_shot: usize,
    pub mean_gradients: bool,
    pub model_bias: bool,
    /// Standard deviation of the initial weights; zero gives a zero init.
    pub init_std: f64,
    /// Dirichlet concentration for the client split. `None` (written `"iid"`
    /// in config files) deals samples out uniformly at random.
    #[serde(with = "alpha_serde")]
    pub dirichlet_alpha: Option<f64>,
    /// Confidence threshold of global inference.
    pub tau: f64,
}

mod alpha_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Alpha(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(a) => Repr::Alpha(*a),
            None => Repr::Word("iid".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Alpha(a) => Ok(Some(a)),
            Repr::Word(w) if w == "iid" => Ok(None),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "dirichlet_alpha must be a positive number or \"iid\", got \"{w}\""
            ))),
        }
    }
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            clients_per_round: 10,
            num_adversaries: 4,
            total_rounds: 40,
            attack_mode: AttackMode::Continuous,
            attack_start_round: 20,
            single_shot_rounds: Vec::new(),
            scale_factor: 1.0,
            aggregator: AggregatorKind::Fedavg,
            defense: DefenseKind::Flip,
            adversarial_training: true,
            defense_start_round: None,
            benign_lr: 0.1,
            poison_lr: 0.05,
            batch_size: 64,
            poison_count: 20,
            epochs_continuous: 5,
            epochs_single_shot: 10,
            mean_gradients: true,
            model_bias: true,
            init_std: 0.01,
            dirichlet_alpha: Some(0.5),
            tau: 0.3,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| FlipError::Config {
            key: format!("federation.{key}"),
            message,
        };
        if self.num_clients == 0 {
            return Err(bad("num_clients", "must be at least 1".into()));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return Err(bad(
                "clients_per_round",
                format!("must lie in [1, num_clients = {}], got {}", self.num_clients, self.clients_per_round),
            ));
        }
        if self.num_adversaries > self.clients_per_round {
            return Err(bad(
                "num_adversaries",
                format!(
                    "must not exceed clients_per_round = {}, got {}",
                    self.clients_per_round, self.num_adversaries
                ),
            ));
        }
        if !(self.scale_factor >= 1.0 && self.scale_factor.is_finite()) {
            return Err(bad("scale_factor", format!("must be >= 1, got {}", self.scale_factor)));
        }
        for (key, lr) in [("benign_lr", self.benign_lr), ("poison_lr", self.poison_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(bad(key, format!("must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1".into()));
        }
        if self.poison_count > self.batch_size {
            return Err(bad(
                "poison_count",
                format!("must not exceed batch_size = {}, got {}", self.batch_size, self.poison_count),
            ));
        }
        if let Some(a) = self.dirichlet_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(bad("dirichlet_alpha", format!("must be positive, got {a}")));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(bad("tau", format!("must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(bad("init_std", "must be non-negative".into()));
        }
        Ok(())
    }

    /// Local epochs E for both roles.
    pub fn local_epochs(&self) -> usize {
        match self.attack_mode {
            AttackMode::SingleShot => self.epochs_single_shot,
            _ => self.epochs_continuous,
        }
    }

    pub fn benign_sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.benign_lr,
            batch_size: self.batch_size,
            epochs: self.local_epochs(),
            mean_gradients: self.mean_gradients,
        }
    }

    pub fn poison_sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.poison_lr,
            ..self.benign_sgd()
        }
    }

    pub fn attack_active(&self, round: usize) -> bool {
        match self.attack_mode {
            AttackMode::None => false,
            AttackMode::Continuous | AttackMode::Adaptive => round >= self.attack_start_round,
            AttackMode::SingleShot => {
                if self.single_shot_rounds.is_empty() {
                    round == self.attack_start_round
                } else {
                    self.single_shot_rounds.contains(&round)
                }
            }
        }
    }

    pub fn hardening_active(&self, round: usize) -> bool {
        self.defense == DefenseKind::Flip
            && self.adversarial_training
            && round >= self.defense_start_round.unwrap_or(self.attack_start_round)
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub role: Role,
    pub shard: LabeledDataset,
    pub distance_cache: DistanceMatrix,
    pub selected_before: bool,
    /// Round of the last warm-up, if any.
    pub warmed_up_at: Option<usize>,
    /// Universal triggers from the last warm-up.
    pub universal: Vec<TriggerSpec>,
}

impl ClientState {
    pub fn new(id: usize, role: Role, shard: LabeledDataset) -> Self {
        Self {
            id,
            role,
            distance_cache: DistanceMatrix::new(shard.num_classes),
            shard,
            selected_before: false,
            warmed_up_at: None,
            universal: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub acc: f64,
    pub asr: f64,
    pub clean_accepted: usize,
    pub clean_rejected: usize,
    pub bd_accepted: usize,
    pub bd_rejected: usize,
    pub auc: f64,
    pub selected: Vec<usize>,
    pub adversaries: usize,
    /// Client id chosen by Krum, when Krum is the aggregator.
    pub aggregator_pick: Option<usize>,
}

fn epoch_batches(
    model: &LinearModel,
    shard: &LabeledDataset,
    sgd: &SgdConfig,
    rng: &mut SeededRng,
    mut extend: impl FnMut(&mut Batch, &mut SeededRng),
) -> Result<LinearModel> {
    let mut m = model.clone();
    for _ in 0..sgd.epochs {
        for chunk in minibatch_indices(shard.len(), sgd.batch_size, rng) {
            let mut batch = Batch::with_capacity(shard.dim(), chunk.len());
            for i in chunk {
                batch.push(shard.image(i), shard.label(i));
            }
            extend(&mut batch, rng);
            m = m.train_batch(&batch, sgd)?;
        }
    }
    Ok(m)
}

/// Hardening pool for one benign update: warm up (first selection or stale
/// cache), pick the top pairs, and invert each pair symmetrically when both
/// classes have enough samples, otherwise in whichever single direction is
/// possible.
pub fn hardening_pool(
    global: &LinearModel,
    client: &mut ClientState,
    inv: &InversionConfig,
    round: usize,
    rng: &mut SeededRng,
) -> Result<(Batch, Vec<TriggerSpec>)> {
    let stale = inv.refresh_interval > 0
        && client
            .warmed_up_at
            .is_some_and(|r| round >= r + inv.refresh_interval);
    if client.warmed_up_at.is_none() || stale {
        let w = warmup_distances(global, &client.shard, inv, round, rng)?;
        client.distance_cache = w.distances;
        client.warmed_up_at = Some(round);
        client.universal = w.triggers;
    }
    let counts = client.shard.class_counts();
    let enough = |c: usize| counts[c] > inv.min_class_samples;
    let (mut pool, mut triggers) = if inv.harden_universal {
        let u = universal_hardening(&client.shard, &client.universal, inv.hardening_samples, rng);
        (u, client.universal.clone())
    } else {
        (Batch::with_capacity(client.shard.dim(), 0), Vec::new())
    };
    for (a, b) in select_pairs(&client.distance_cache, inv.top_k) {
        let cache = &mut client.distance_cache;
        let h = match (enough(a), enough(b)) {
            (true, true) => symmetric_invert(global, &client.shard, (a, b), inv, cache, round, rng)?,
            (true, false) => asymmetric_invert(global, &client.shard, (a, b), inv, cache, round, rng)?,
            (false, true) => asymmetric_invert(global, &client.shard, (b, a), inv, cache, round, rng)?,
            (false, false) => continue,
        };
        pool.extend(&h.samples);
        triggers.extend(h.triggers);
    }
    Ok((pool, triggers))
}

/// Benign local training from `global`. With hardening active every clean
/// batch is extended with `inv.augmented_per_batch` stamped samples drawn
/// from the client's hardening pool.
pub fn benign_local_update(
    global: &LinearModel,
    client: &mut ClientState,
    cfg: &FederationConfig,
    inv: &InversionConfig,
    round: usize,
    rng: &mut SeededRng,
) -> Result<LinearModel> {
    if client.role != Role::Benign {
        return Err(FlipError::Precondition(format!("client {} is not benign", client.id)));
    }
    if client.shard.is_empty() {
        log::warn!("client {} has an empty shard; returning the global model", client.id);
        return Ok(global.clone());
    }
    let pool = if cfg.hardening_active(round) {
        hardening_pool(global, client, inv, round, rng)?.0
    } else {
        Batch::with_capacity(client.shard.dim(), 0)
    };
    client.selected_before = true;
    let extra = if pool.is_empty() { 0 } else { inv.augmented_per_batch };
    epoch_batches(global, &client.shard, &cfg.benign_sgd(), rng, |batch, rng| {
        for _ in 0..extra {
            let j = rng.random_range(0..pool.len());
            batch.push(pool.input(j), pool.labels[j]);
        }
    })
}

/// Poisoned local training from `global`, then weight scaling. Adaptive
/// attackers also invert a trigger on the global model and add samples
/// stamped with it, relabeled to the target.
pub fn malicious_local_update(
    global: &LinearModel,
    client: &ClientState,
    trig: &TriggerSpec,
    cfg: &FederationConfig,
    inv: &InversionConfig,
    rng: &mut SeededRng,
) -> Result<LinearModel> {
    if client.role != Role::Malicious {
        return Err(FlipError::Precondition(format!("client {} is not malicious", client.id)));
    }
    let shard = &client.shard;
    if shard.is_empty() {
        return Err(FlipError::EmptyShard);
    }
    let adaptive = if cfg.attack_mode == AttackMode::Adaptive {
        let sources = shard.filter(|l| l != trig.target_label);
        match invert_trigger(global, &sources, trig.target_label, inv, rng) {
            Ok(found) => Some((sources, found.trigger)),
            Err(FlipError::EmptySourceSet) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let sgd = cfg.poison_sgd();
    let batches = shard.len().div_ceil(sgd.batch_size);
    let mut local = global.clone();
    let mut buf = vec![0.0; shard.dim()];
    for _ in 0..sgd.epochs {
        for _ in 0..batches {
            let mut batch = make_poison_batch(shard, trig, sgd.batch_size, cfg.poison_count, rng)?;
            if let Some((sources, own)) = &adaptive {
                for _ in 0..cfg.poison_count {
                    let i = rng.random_range(0..sources.len());
                    stamp_into(sources.image(i), own.mask.as_slice(), own.pattern.as_slice(), &mut buf);
                    batch.push(&buf, trig.target_label);
                }
            }
            local = local.train_batch(&batch, &sgd)?;
        }
    }
    scale_update(global, &local, cfg.scale_factor)
}

/// `global + γ (local − global)`.
pub fn scale_update(global: &LinearModel, local: &LinearModel, gamma: f64) -> Result<LinearModel> {
    let g = global.params();
    let p: Vec<f64> = local
        .params()
        .iter()
        .zip(&g)
        .map(|(l, g)| g + gamma * (l - g))
        .collect();
    global.with_params(p)
}

/// A full federation: clients, global model and evaluation sets.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub cfg: FederationConfig,
    pub inversion: InversionConfig,
    pub trigger: TriggerSpec,
    pub clients: Vec<ClientState>,
    pub global: LinearModel,
    pub clean_test: LabeledDataset,
    pub bd_test: LabeledDataset,
    pub round: usize,
    rng: SeededRng,
}

impl Simulation {
    pub fn new(
        cfg: FederationConfig,
        inversion: InversionConfig,
        trigger: TriggerSpec,
        train: &LabeledDataset,
        test: &LabeledDataset,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        inversion.validate()?;
        if train.dim() != trigger.dim() {
            return Err(crate::error::shape_err("Simulation::new", train.dim(), trigger.dim()));
        }
        let rng = SeededRng::new(seed);
        let mut setup = rng.derive(&[u64::MAX]);
        let shards: Vec<LabeledDataset> = match cfg.dirichlet_alpha {
            Some(alpha) => dirichlet_partition(train, cfg.num_clients, alpha, &mut setup)?.shards(train),
            None => {
                let mut idx: Vec<usize> = (0..train.len()).collect();
                idx.shuffle(&mut setup);
                (0..cfg.num_clients)
                    .map(|k| {
                        let mine: Vec<usize> = idx.iter().copied().skip(k).step_by(cfg.num_clients).collect();
                        train.select(&mine)
                    })
                    .collect()
            }
        };
        let mut ids: Vec<usize> = (0..cfg.num_clients).collect();
        ids.shuffle(&mut setup);
        let malicious: Vec<usize> = if cfg.attack_mode == AttackMode::None {
            Vec::new()
        } else {
            ids[..cfg.num_adversaries].to_vec()
        };
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| {
                let role = if malicious.contains(&id) { Role::Malicious } else { Role::Benign };
                ClientState::new(id, role, shard)
            })
            .collect();
        let global = if cfg.init_std > 0.0 {
            LinearModel::gaussian(train.dim(), train.num_classes, cfg.model_bias, cfg.init_std, &mut setup)?
        } else {
            LinearModel::zeros(train.dim(), train.num_classes, cfg.model_bias)
        };
        Ok(Self {
            bd_test: backdoor_sources(test, trigger.target_label),
            clean_test: test.clone(),
            cfg,
            inversion,
            trigger,
            clients,
            global,
            round: 0,
            rng,
        })
    }

    /// Ids chosen for `round`: every adversary when the attack is active,
    /// the rest uniformly from the benign clients.
    pub fn select_clients(&self, round: usize) -> Vec<usize> {
        let mut rng = self.rng.derive(&[round as u64, u64::MAX - 1]);
        let benign: Vec<usize> = self.clients.iter().filter(|c| c.role == Role::Benign).map(|c| c.id).collect();
        let mut chosen: Vec<usize> = if self.cfg.attack_active(round) {
            self.clients.iter().filter(|c| c.role == Role::Malicious).map(|c| c.id).collect()
        } else {
            Vec::new()
        };
        let want = self.cfg.clients_per_round.saturating_sub(chosen.len()).min(benign.len());
        chosen.extend(benign.choose_multiple(&mut rng, want).copied());
        chosen.sort_unstable();
        chosen
    }

    /// One FedAvg round: local updates from the same global weights (in
    /// parallel), aggregation in client order, evaluation.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let round = self.round;
        let selected = self.select_clients(round);
        let global = &self.global;
        let (cfg, inv, trig, base) = (&self.cfg, &self.inversion, &self.trigger, &self.rng);
        let results: Vec<Result<(usize, LinearModel, usize)>> = self
            .clients
            .par_iter_mut()
            .filter(|c| selected.binary_search(&c.id).is_ok())
            .map(|c| {
                let mut rng = base.derive(&[round as u64, c.id as u64]);
                let model = match c.role {
                    Role::Benign => benign_local_update(global, c, cfg, inv, round, &mut rng)?,
                    Role::Malicious => malicious_local_update(global, c, trig, cfg, inv, &mut rng)?,
                };
                Ok((c.id, model, c.shard.len()))
            })
            .collect();
        let mut ids = Vec::with_capacity(results.len());
        let mut updates = Vec::with_capacity(results.len());
        for r in results {
            let (id, m, n) = r?;
            ids.push(id);
            updates.push((m, n));
        }
        let agg = aggregate(&updates, self.cfg.aggregator)?;
        self.global = agg.model;
        let ms = self.metrics(self.cfg.tau)?;
        let adversaries = ids.iter().filter(|&&id| self.clients[id].role == Role::Malicious).count();
        self.round += 1;
        Ok(RoundRecord {
            round,
            acc: ms.acc,
            asr: ms.asr,
            clean_accepted: ms.clean_accepted,
            clean_rejected: ms.clean_rejected,
            bd_accepted: ms.bd_accepted,
            bd_rejected: ms.bd_rejected,
            auc: ms.auc,
            selected: ids.clone(),
            adversaries,
            aggregator_pick: agg.pick.map(|i| ids[i]),
        })
    }

    /// Run until `cfg.total_rounds` rounds have completed.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        let mut out = Vec::new();
        while self.round < self.cfg.total_rounds {
            out.push(self.run_round()?);
        }
        Ok(out)
    }

    pub fn metrics(&self, tau: f64) -> Result<MetricSet> {
        compute_metrics(&self.global, &self.clean_test, &self.bd_test, &self.trigger, tau)
    }

    pub fn rng(&self) -> &SeededRng {
        &self.rng
    }
}
