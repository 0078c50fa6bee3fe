//! Tabular learners for sample-based power regularization (SBPR) and power
//! regularization via intrinsic motivation (PRIM).
//!
//! Every player has a softmax actor over action preferences and two TD(0)
//! critics: one for its training reward and one for the task reward alone,
//! the latter feeding power estimates. Every ordered `(ego, coplayer)` pair
//! has an adversary table of one-step action values for hurting the ego.

mod eval;
mod train;

pub use eval::{
    exhaustive_power, mixing_report, rollout_ground_truth, simulator_power_report, Continuation, Evaluation, GroundTruth,
    MetricRow, MixingReport, StepPower,
};
pub use train::{
    adversary_targets, adversary_update, compute_power_sample, domain_randomized_start, run_alternating_training,
    train_adversarial_agent, train_agent, train_from, BatchStats, RngStreams, TrainOutcome,
};

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::game::{MarkovGame, PolicyProfile, Simulator};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sbpr,
    Prim,
    TaskOnly,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sbpr" => Ok(Algorithm::Sbpr),
            "prim" => Ok(Algorithm::Prim),
            "task-only" => Ok(Algorithm::TaskOnly),
            other => Err(Error::argument(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Sbpr => "sbpr",
            Algorithm::Prim => "prim",
            Algorithm::TaskOnly => "task-only",
        })
    }
}

/// Where the co-player's worst action comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryMode {
    /// Greedy action of the learned adversary table.
    Learned,
    /// One-step search over every co-player action, per sample.
    Exhaustive,
    /// Always the given action index.
    FixedAction(usize),
}

impl FromStr for AdversaryMode {
    type Err = Error;

    /// `learned`, `exhaustive` or `fixed-action:<index>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(AdversaryMode::Learned),
            "exhaustive" => Ok(AdversaryMode::Exhaustive),
            _ => s
                .strip_prefix("fixed-action:")
                .and_then(|a| a.parse().ok())
                .map(AdversaryMode::FixedAction)
                .ok_or_else(|| Error::argument(format!("unknown adversary mode '{s}'"))),
        }
    }
}

impl fmt::Display for AdversaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdversaryMode::Learned => f.write_str("learned"),
            AdversaryMode::Exhaustive => f.write_str("exhaustive"),
            AdversaryMode::FixedAction(a) => write!(f, "fixed-action:{a}"),
        }
    }
}

/// Training configuration. Learning rates decay linearly to
/// `final_lr_fraction` of their start value; temperature and the
/// adversary's epsilon move linearly from start to end over `total_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Power weight, PRIM only.
    pub lambda: Option<f64>,
    /// Substitution probability, SBPR only.
    pub p: Option<f64>,
    pub adversary_mode: AdversaryMode,
    pub normalize_adversary: bool,
    pub vf_bootstrap: bool,
    pub domain_randomization: bool,
    /// Share of episodes started from a randomized state when enabled.
    pub dr_fraction: f64,
    /// Overrides the environment's discount.
    pub gamma: Option<f64>,
    /// Overrides the environment's horizon.
    pub horizon: Option<usize>,
    pub total_steps: u64,
    pub seed: u64,
    /// Environment steps between ground-truth evaluations; 0 logs only the
    /// first and last.
    pub eval_every: u64,
    pub batch_episodes: usize,
    pub adversary_batch: usize,
    pub actor_lr: f64,
    /// Weight of the entropy bonus in the actor update.
    pub entropy_coef: f64,
    /// Bound on the magnitude of the TD error used by the actor.
    pub advantage_clip: Option<f64>,
    pub critic_lr: f64,
    pub adversary_lr: f64,
    pub final_lr_fraction: f64,
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::TaskOnly,
            lambda: None,
            p: None,
            adversary_mode: AdversaryMode::Learned,
            normalize_adversary: true,
            vf_bootstrap: true,
            domain_randomization: true,
            dr_fraction: 0.5,
            gamma: None,
            horizon: None,
            total_steps: 100_000,
            seed: 0,
            eval_every: 0,
            batch_episodes: 4,
            adversary_batch: 16,
            actor_lr: 0.1,
            entropy_coef: 0.0,
            advantage_clip: None,
            critic_lr: 0.2,
            adversary_lr: 0.1,
            final_lr_fraction: 0.1,
            temperature_start: 1.0,
            temperature_end: 0.3,
            epsilon_start: 0.5,
            epsilon_end: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn task_only() -> Self {
        TrainConfig::default()
    }

    pub fn prim(lambda: f64) -> Self {
        TrainConfig {
            algorithm: Algorithm::Prim,
            lambda: Some(lambda),
            ..Default::default()
        }
    }

    pub fn sbpr(p: f64) -> Self {
        TrainConfig {
            algorithm: Algorithm::Sbpr,
            p: Some(p),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.algorithm {
            Algorithm::Prim => {
                if self.p.is_some() {
                    return Err(Error::config("p is an SBPR setting; PRIM takes lambda"));
                }
                match self.lambda {
                    Some(l) if l.is_finite() && l >= 0.0 => {}
                    Some(l) => return Err(Error::config(format!("lambda must be finite and >= 0, got {l}"))),
                    None => return Err(Error::config("PRIM needs lambda")),
                }
            }
            Algorithm::Sbpr => {
                if self.lambda.is_some() {
                    return Err(Error::config("lambda is a PRIM setting; SBPR takes p"));
                }
                match self.p {
                    Some(p) if (0.0..=1.0).contains(&p) => {}
                    Some(p) => return Err(Error::config(format!("p must lie in [0, 1], got {p}"))),
                    None => return Err(Error::config("SBPR needs p")),
                }
            }
            Algorithm::TaskOnly => {
                if self.lambda.is_some() || self.p.is_some() {
                    return Err(Error::config("task-only training takes neither lambda nor p"));
                }
            }
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::config(format!("gamma {g} not in [0, 1]")));
            }
        }
        if self.horizon == Some(0) {
            return Err(Error::config("horizon must be positive"));
        }
        if let Some(c) = self.advantage_clip {
            if !(c > 0.0) {
                return Err(Error::config(format!("advantage_clip must be positive, got {c}")));
            }
        }
        if self.batch_episodes == 0 {
            return Err(Error::config("batch_episodes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.dr_fraction) {
            return Err(Error::config("dr_fraction must lie in [0, 1]"));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("adversary_lr", self.adversary_lr),
            ("final_lr_fraction", self.final_lr_fraction),
            ("temperature_start", self.temperature_start),
            ("temperature_end", self.temperature_end),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// λ for PRIM, p for SBPR, 0 otherwise.
    pub fn lambda_or_p(&self) -> f64 {
        match self.algorithm {
            Algorithm::Prim => self.lambda.unwrap_or(0.0),
            Algorithm::Sbpr => self.p.unwrap_or(0.0),
            Algorithm::TaskOnly => 0.0,
        }
    }

    /// Weight of the power reward in the training reward.
    pub fn power_weight(&self) -> f64 {
        match self.algorithm {
            Algorithm::Prim => self.lambda.unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn gamma_for<S: Simulator>(&self, sim: &S) -> f64 {
        self.gamma.unwrap_or_else(|| sim.gamma())
    }

    pub fn horizon_for<S: Simulator>(&self, sim: &S) -> usize {
        self.horizon.unwrap_or_else(|| sim.horizon())
    }

    /// Whether the run consults an adversary at all.
    pub fn uses_adversary(&self) -> bool {
        match self.algorithm {
            Algorithm::Prim => self.power_weight() > 0.0,
            Algorithm::Sbpr => self.p.unwrap_or(0.0) > 0.0,
            Algorithm::TaskOnly => false,
        }
    }
}

/// A hash table that serializes as a key-sorted list of entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Table<K: Eq + Hash, V>(pub HashMap<K, V>);

impl<K: Eq + Hash, V> Default for Table<K, V> {
    fn default() -> Self {
        Table(HashMap::new())
    }
}

impl<K: Eq + Hash + Ord + Serialize, V: Serialize> Serialize for Table<K, V> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut entries: Vec<(&K, &V)> = self.0.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        entries.serialize(s)
    }
}

impl<'de, K: Eq + Hash + Deserialize<'de>, V: Deserialize<'de>> Deserialize<'de> for Table<K, V> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries: Vec<(K, V)> = Vec::deserialize(d)?;
        Ok(Table(entries.into_iter().collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "K: Eq + Hash + Ord + Serialize",
    deserialize = "K: Eq + Hash + Deserialize<'de>"
))]
pub struct AdversaryTable<K: Eq + Hash> {
    pub ego: usize,
    pub coplayer: usize,
    /// Estimated one-step damage to the ego per co-player action.
    pub values: Table<K, Vec<f64>>,
    pub visits: Table<K, Vec<u64>>,
}

impl<K: Eq + Hash> AdversaryTable<K> {
    /// Greedy action, ties to the lowest index; 0 for unseen keys.
    pub fn action(&self, key: &K) -> usize {
        self.values.0.get(key).map_or(0, |v| argmax(v))
    }

    pub fn total_visits(&self, key: &K) -> u64 {
        self.visits.0.get(key).map_or(0, |v| v.iter().sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "K: Eq + Hash + Ord + Serialize",
    deserialize = "K: Eq + Hash + Deserialize<'de>"
))]
pub struct LearnerState<K: Eq + Hash> {
    pub num_players: usize,
    /// Action preferences per player.
    pub actors: Vec<Table<K, Vec<f64>>>,
    /// Critic of each player's training reward.
    pub values: Vec<Table<K, f64>>,
    /// Critic of each player's task reward.
    pub task_values: Vec<Table<K, f64>>,
    /// Co-player terms of both critics under partial observations, indexed
    /// `ego * num_players + coplayer` and keyed by the co-player's view.
    pub peer_values: Vec<Table<K, f64>>,
    pub peer_task_values: Vec<Table<K, f64>>,
    /// One table per ordered `(ego, coplayer)` pair, ego-major.
    pub adversaries: Vec<AdversaryTable<K>>,
    /// Current softmax temperature, used when sampling rollouts.
    pub temperature: f64,
    pub steps: u64,
    pub episodes: u64,
    pub adversary_updates: u64,
    /// SBPR substitutions made and opportunities offered.
    pub substitutions: u64,
    pub substitution_chances: u64,
    /// Batches trained per ego, for round-robin co-player rotation.
    pub batches: Vec<u64>,
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax of `prefs / temperature`.
pub fn softmax(prefs: &[f64], temperature: f64) -> Vec<f64> {
    let max = prefs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = prefs.iter().map(|&p| ((p - max) / temperature).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

impl<K: Eq + Hash + Clone> LearnerState<K> {
    pub fn new(num_players: usize, temperature: f64) -> Self {
        let mut adversaries = Vec::new();
        for ego in 0..num_players {
            for coplayer in (0..num_players).filter(|&j| j != ego) {
                adversaries.push(AdversaryTable {
                    ego,
                    coplayer,
                    values: Table::default(),
                    visits: Table::default(),
                });
            }
        }
        LearnerState {
            num_players,
            actors: (0..num_players).map(|_| Table::default()).collect(),
            values: (0..num_players).map(|_| Table::default()).collect(),
            task_values: (0..num_players).map(|_| Table::default()).collect(),
            peer_values: (0..num_players * num_players).map(|_| Table::default()).collect(),
            peer_task_values: (0..num_players * num_players).map(|_| Table::default()).collect(),
            adversaries,
            temperature,
            steps: 0,
            episodes: 0,
            adversary_updates: 0,
            substitutions: 0,
            substitution_chances: 0,
            batches: vec![0; num_players],
        }
    }

    /// Sampling distribution at the current temperature; uniform for unseen keys.
    pub fn policy(&self, player: usize, key: &K, num_actions: usize) -> Vec<f64> {
        match self.actors[player].0.get(key) {
            Some(prefs) => softmax(prefs, self.temperature),
            None => vec![1.0 / num_actions as f64; num_actions],
        }
    }

    /// Argmax action, ties to the lowest index; 0 for unseen keys.
    pub fn determinized(&self, player: usize, key: &K) -> usize {
        self.actors[player].0.get(key).map_or(0, |p| argmax(p))
    }

    pub fn value(&self, player: usize, key: &K) -> f64 {
        self.values[player].0.get(key).copied().unwrap_or(0.0)
    }

    pub fn task_value(&self, player: usize, key: &K) -> f64 {
        self.task_values[player].0.get(key).copied().unwrap_or(0.0)
    }

    fn adversary_index(&self, ego: usize, coplayer: usize) -> usize {
        let n = self.num_players;
        assert!(ego < n && coplayer < n && ego != coplayer, "bad adversary pair ({ego}, {coplayer})");
        ego * (n - 1) + if coplayer > ego { coplayer - 1 } else { coplayer }
    }

    pub fn adversary(&self, ego: usize, coplayer: usize) -> &AdversaryTable<K> {
        &self.adversaries[self.adversary_index(ego, coplayer)]
    }

    pub fn adversary_mut(&mut self, ego: usize, coplayer: usize) -> &mut AdversaryTable<K> {
        let i = self.adversary_index(ego, coplayer);
        &mut self.adversaries[i]
    }

    /// Observed SBPR substitution rate.
    pub fn substitution_rate(&self) -> f64 {
        if self.substitution_chances == 0 {
            0.0
        } else {
            self.substitutions as f64 / self.substitution_chances as f64
        }
    }
}

impl LearnerState<(usize, usize)> {
    /// Determinized layered profile of a learner trained on `game`.
    pub fn to_profile(&self, game: &MarkovGame, horizon: usize) -> PolicyProfile {
        let layers = (1..=horizon)
            .map(|k| {
                (0..game.num_players())
                    .map(|p| {
                        (0..game.num_states())
                            .map(|s| {
                                let n = game.num_actions(s, p);
                                let mut d = vec![0.0; n];
                                d[self.determinized(p, &(s, k)).min(n - 1)] = 1.0;
                                d
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        PolicyProfile::from_layers(layers)
    }
}

/// Persisted learner with a header identifying the game and configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(
    serialize = "K: Eq + Hash + Ord + Serialize",
    deserialize = "K: Eq + Hash + Deserialize<'de>"
))]
pub struct LearnerFile<K: Eq + Hash> {
    pub format_version: u32,
    pub game_hash: String,
    pub config: TrainConfig,
    pub learner: LearnerState<K>,
}

pub fn save_learner<S: Simulator>(
    path: &Path,
    sim: &S,
    config: &TrainConfig,
    learner: &LearnerState<S::Key>,
) -> Result<()> {
    let file = LearnerFile {
        format_version: FORMAT_VERSION,
        game_hash: sim.fingerprint(),
        config: config.clone(),
        learner: learner.clone(),
    };
    let w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(w, &file)?;
    Ok(())
}

/// Loads a learner saved by [`save_learner`] for the same game.
pub fn load_learner<S: Simulator>(path: &Path, sim: &S) -> Result<(TrainConfig, LearnerState<S::Key>)>
where
    S::Key: DeserializeOwned,
{
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let file: LearnerFile<S::Key> = serde_json::from_reader(r)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::config(format!(
            "learner file format {} is not supported (expected {FORMAT_VERSION})",
            file.format_version
        )));
    }
    if file.game_hash != sim.fingerprint() {
        return Err(Error::config("learner file was trained on a different game"));
    }
    Ok((file.config, file.learner))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;

    #[test]
    fn config_linkage_is_enforced() {
        assert!(TrainConfig::prim(0.5).validate().is_ok());
        assert!(TrainConfig::sbpr(0.5).validate().is_ok());
        let mut c = TrainConfig::prim(0.5);
        c.p = Some(0.5);
        assert!(matches!(c.validate(), Err(Error::Configuration(_))));
        let mut c = TrainConfig::sbpr(0.5);
        c.lambda = Some(0.5);
        assert!(matches!(c.validate(), Err(Error::Configuration(_))));
        assert!(TrainConfig::sbpr(1.5).validate().is_err());
        assert!(TrainConfig::prim(-1.0).validate().is_err());
        let mut c = TrainConfig::task_only();
        c.lambda = Some(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn modes_parse() {
        assert_eq!("fixed-action:5".parse::<AdversaryMode>().unwrap(), AdversaryMode::FixedAction(5));
        assert_eq!("exhaustive".parse::<AdversaryMode>().unwrap().to_string(), "exhaustive");
        assert!("fixed-action:x".parse::<AdversaryMode>().is_err());
        assert_eq!("task-only".parse::<Algorithm>().unwrap(), Algorithm::TaskOnly);
    }

    #[test]
    fn config_json_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"algorithm": "prim", "lambda": 0.25}"#).unwrap();
        assert_eq!(c.lambda, Some(0.25));
        assert_eq!(c.batch_episodes, TrainConfig::default().batch_episodes);
        let c: TrainConfig =
            serde_json::from_str(r#"{"algorithm": "sbpr", "p": 0.1, "adversary_mode": {"fixed-action": 5}}"#).unwrap();
        assert_eq!(c.adversary_mode, AdversaryMode::FixedAction(5));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda": 1}"#).is_err());
    }

    #[test]
    fn adversary_tables_cover_ordered_pairs() {
        let l: LearnerState<u8> = LearnerState::new(3, 1.0);
        assert_eq!(l.adversaries.len(), 6);
        for ego in 0..3 {
            for j in (0..3).filter(|&j| j != ego) {
                let t = l.adversary(ego, j);
                assert_eq!((t.ego, t.coplayer), (ego, j));
            }
        }
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1e6, 0.0, -1e6], 0.1);
        assert_eq!(p[0], 1.0);
        let q = softmax(&[0.0, 0.0], 1.0);
        assert_eq!(q, vec![0.5, 0.5]);
    }

    #[test]
    fn save_and_load_roundtrip() {
        let g = envs::attack_defense();
        let mut l: LearnerState<(usize, usize)> = LearnerState::new(2, 1.0);
        l.actors[0].0.insert((0, 1), vec![0.5, -1.0, 0.25]);
        l.task_values[1].0.insert((0, 1), 2.5);
        let dir = std::env::temp_dir().join(format!("powerreg-learner-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("l.json");
        save_learner(&path, &g, &TrainConfig::task_only(), &l).unwrap();
        let (c, back) = load_learner(&path, &g).unwrap();
        assert_eq!(c, TrainConfig::task_only());
        assert_eq!(back, l);
        let other = envs::larger_attack_defense();
        assert!(matches!(load_learner(&path, &other), Err(Error::Configuration(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
