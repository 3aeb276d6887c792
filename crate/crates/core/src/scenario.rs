//! Scenario sampling: user goals with typed constraints and user profiles.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;
use crate::task_spec::{Entity, TaskSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    Fixed { value: String },
    OneOf { values: Vec<String> },
    Flexible { preferred: String },
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub slot: String,
    #[serde(flatten)]
    pub kind: ConstraintKind,
}

impl Constraint {
    pub fn fixed(slot: impl Into<String>, value: impl Into<String>) -> Self {
        Constraint {
            slot: slot.into(),
            kind: ConstraintKind::Fixed {
                value: value.into(),
            },
        }
    }

    pub fn one_of<I, S>(slot: impl Into<String>, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Constraint {
            slot: slot.into(),
            kind: ConstraintKind::OneOf {
                values: values.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn flexible(slot: impl Into<String>, preferred: impl Into<String>) -> Self {
        Constraint {
            slot: slot.into(),
            kind: ConstraintKind::Flexible {
                preferred: preferred.into(),
            },
        }
    }

    pub fn open(slot: impl Into<String>) -> Self {
        Constraint {
            slot: slot.into(),
            kind: ConstraintKind::Open,
        }
    }

    /// The value the user states first for this slot, if any.
    pub fn initial_value(&self) -> Option<&str> {
        match &self.kind {
            ConstraintKind::Fixed { value } => Some(value),
            ConstraintKind::OneOf { values } => values.first().map(String::as_str),
            ConstraintKind::Flexible { preferred } => Some(preferred),
            ConstraintKind::Open => None,
        }
    }

    /// Whether a concrete value satisfies the constraint. Flexible and Open
    /// accept anything.
    pub fn accepts(&self, value: Option<&str>) -> bool {
        let eq = |a: &str| value.is_some_and(|v| v.to_lowercase() == a.to_lowercase());
        match &self.kind {
            ConstraintKind::Fixed { value } => eq(value),
            ConstraintKind::OneOf { values } => values.iter().any(|v| eq(v)),
            ConstraintKind::Flexible { .. } | ConstraintKind::Open => true,
        }
    }
}

/// A slot whose value is taken from an entity committed by an earlier goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalReference {
    pub goal: usize,
    pub source_slot: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    pub task: String,
    pub intent: String,
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub requests: Vec<String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub references: IndexMap<String, GoalReference>,
    /// Sampled with a value absent from the database on purpose.
    #[serde(default)]
    pub unsatisfiable: bool,
}

impl UserGoal {
    pub fn constraint(&self, slot: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.slot == slot)
    }

    pub fn constraint_mut(&mut self, slot: &str) -> Option<&mut Constraint> {
        self.constraints.iter_mut().find(|c| c.slot == slot)
    }

    /// Fixed constraints as a query filter.
    pub fn fixed_constraints(&self) -> BTreeMap<String, String> {
        self.constraints
            .iter()
            .filter_map(|c| match &c.kind {
                ConstraintKind::Fixed { value } => Some((c.slot.clone(), value.clone())),
                _ => None,
            })
            .collect()
    }

    /// True iff an entity was committed and it matches every Fixed constraint
    /// and one member of every OneOf.
    pub fn is_satisfied_by(&self, committed: Option<&Entity>) -> bool {
        let Some(entity) = committed else {
            return false;
        };
        self.constraints.iter().all(|c| match &c.kind {
            ConstraintKind::Fixed { .. } | ConstraintKind::OneOf { .. } => {
                c.accepts(entity.get(&c.slot))
            }
            ConstraintKind::Flexible { .. } | ConstraintKind::Open => true,
        })
    }
}

/// Free function form of [`UserGoal::is_satisfied_by`].
pub fn is_goal_satisfied(goal: &UserGoal, committed: Option<&Entity>) -> bool {
    goal.is_satisfied_by(committed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    #[serde(default)]
    pub name: String,
    pub p_multi_slot: f64,
    pub p_accept_flexible: f64,
    pub p_request_alts: f64,
    pub p_request_info: f64,
    pub max_goal_relaxations: u32,
}

impl UserProfile {
    pub fn probabilities(&self) -> [f64; 4] {
        [
            self.p_multi_slot,
            self.p_accept_flexible,
            self.p_request_alts,
            self.p_request_info,
        ]
    }

    pub fn is_valid(&self) -> bool {
        self.probabilities()
            .iter()
            .all(|p| (0.0..=1.0).contains(p))
    }

    /// Accepts every alternative and can always relax far enough.
    pub fn is_cooperative(&self) -> bool {
        self.p_accept_flexible >= 1.0 && self.max_goal_relaxations >= 3
    }

    pub fn terse_rigid() -> Self {
        UserProfile {
            name: "terse-rigid".into(),
            p_multi_slot: 0.15,
            p_accept_flexible: 0.2,
            p_request_alts: 0.1,
            p_request_info: 0.1,
            max_goal_relaxations: 1,
        }
    }

    pub fn verbose_rigid() -> Self {
        UserProfile {
            name: "verbose-rigid".into(),
            p_multi_slot: 0.8,
            p_accept_flexible: 0.2,
            p_request_alts: 0.15,
            p_request_info: 0.2,
            max_goal_relaxations: 1,
        }
    }

    pub fn verbose_flexible() -> Self {
        UserProfile {
            name: "verbose-flexible".into(),
            p_multi_slot: 0.8,
            p_accept_flexible: 1.0,
            p_request_alts: 0.25,
            p_request_info: 0.25,
            max_goal_relaxations: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedProfile {
    pub profile: UserProfile,
    pub weight: f64,
}

/// Half-width of the uniform noise added to each profile probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileJitter {
    pub p_multi_slot: f64,
    pub p_accept_flexible: f64,
    pub p_request_alts: f64,
    pub p_request_info: f64,
}

impl Default for ProfileJitter {
    fn default() -> Self {
        ProfileJitter {
            p_multi_slot: 0.05,
            p_accept_flexible: 0.0,
            p_request_alts: 0.05,
            p_request_info: 0.05,
        }
    }
}

impl ProfileJitter {
    pub fn none() -> Self {
        ProfileJitter {
            p_multi_slot: 0.0,
            p_accept_flexible: 0.0,
            p_request_alts: 0.0,
            p_request_info: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindWeights {
    pub fixed: f64,
    pub one_of: f64,
    pub flexible: f64,
    pub open: f64,
}

impl Default for KindWeights {
    fn default() -> Self {
        KindWeights {
            fixed: 0.45,
            one_of: 0.15,
            flexible: 0.2,
            open: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalConfig {
    pub kind_weights: KindWeights,
    /// Chance that one Fixed constraint uses a value absent from the database.
    pub p_unsat: f64,
    /// Number of values in a OneOf list.
    pub one_of_size: usize,
    /// Most OneOf constraints per goal; extra draws fall back to Fixed.
    pub max_one_of: usize,
    /// Chance that each requestable slot is something the user wants told.
    pub p_request_slot: f64,
    /// Chance that a Flexible preference is the anchor entity's own value
    /// rather than any known or distractor value.
    pub p_flexible_anchor: f64,
    /// Per-slot values known to be absent from the database.
    pub distractors: BTreeMap<String, Vec<String>>,
}

impl Default for GoalConfig {
    fn default() -> Self {
        GoalConfig {
            kind_weights: KindWeights::default(),
            p_unsat: 0.1,
            one_of_size: 2,
            max_one_of: 1,
            p_request_slot: 0.3,
            p_flexible_anchor: 0.5,
            distractors: BTreeMap::new(),
        }
    }
}

/// Declares that `slot` of goals for `task` may point at the entity committed
/// by an earlier goal for `source_task`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRule {
    pub task: String,
    pub slot: String,
    pub source_task: String,
    pub source_slot: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub goal: GoalConfig,
    /// Chance of appending a goal for each further task in a multi-task run.
    pub p_multi_goal: f64,
    pub references: Vec<ReferenceRule>,
    pub profiles: Vec<WeightedProfile>,
    pub jitter: ProfileJitter,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            goal: GoalConfig::default(),
            p_multi_goal: 0.2,
            references: Vec::new(),
            profiles: default_profiles(),
            jitter: ProfileJitter::default(),
        }
    }
}

pub fn default_profiles() -> Vec<WeightedProfile> {
    vec![
        WeightedProfile {
            profile: UserProfile::terse_rigid(),
            weight: 1.0,
        },
        WeightedProfile {
            profile: UserProfile::verbose_rigid(),
            weight: 1.0,
        },
        WeightedProfile {
            profile: UserProfile::verbose_flexible(),
            weight: 1.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub profile: UserProfile,
    pub goals: Vec<UserGoal>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("task `{0}` has no constrainable slots")]
    EmptySchema(String),
    #[error("profile distribution is empty or has no positive weight")]
    EmptyDistribution,
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    /// Checks goal slots against their task schemas and reference ordering.
    pub fn validate(&self, specs: &[TaskSpec]) -> Result<(), ScenarioError> {
        if self.goals.is_empty() {
            return Err(ScenarioError::Invalid("scenario has no goals".into()));
        }
        if !self.profile.is_valid() {
            return Err(ScenarioError::Invalid("profile probability outside [0, 1]".into()));
        }
        for (i, goal) in self.goals.iter().enumerate() {
            let spec = specs
                .iter()
                .find(|s| s.name() == goal.task)
                .ok_or_else(|| ScenarioError::Invalid(format!("goal {i}: unknown task `{}`", goal.task)))?;
            if !spec.schema.has_intent(&goal.intent) {
                return Err(ScenarioError::Invalid(format!(
                    "goal {i}: unknown intent `{}`",
                    goal.intent
                )));
            }
            for c in &goal.constraints {
                if !spec.slot(&c.slot).is_some_and(|s| s.constrainable) {
                    return Err(ScenarioError::Invalid(format!(
                        "goal {i}: `{}` is not constrainable",
                        c.slot
                    )));
                }
                if let ConstraintKind::OneOf { values } = &c.kind {
                    let mut distinct: Vec<String> = values.iter().map(|v| v.to_lowercase()).collect();
                    distinct.sort();
                    distinct.dedup();
                    if distinct.len() < 2 {
                        return Err(ScenarioError::Invalid(format!(
                            "goal {i}: OneOf on `{}` needs two distinct values",
                            c.slot
                        )));
                    }
                }
            }
            for (slot, reference) in &goal.references {
                if reference.goal >= i {
                    return Err(ScenarioError::Invalid(format!(
                        "goal {i}: `{slot}` references goal {} which does not precede it",
                        reference.goal
                    )));
                }
            }
        }
        Ok(())
    }
}

fn pick_weighted<R: Rng + ?Sized>(rng: &mut R, weights: &KindWeights) -> usize {
    let w = [weights.fixed, weights.one_of, weights.flexible, weights.open];
    match WeightedIndex::new(w) {
        Ok(dist) => dist.sample(rng),
        Err(_) => 3,
    }
}

fn distractors_for<'a>(spec: &TaskSpec, config: &'a GoalConfig, slot: &str) -> Vec<&'a str> {
    let present: Vec<String> = spec
        .column_values(slot)
        .into_iter()
        .map(str::to_lowercase)
        .collect();
    config
        .distractors
        .get(slot)
        .map(|vs| {
            vs.iter()
                .map(String::as_str)
                .filter(|v| !present.contains(&v.to_lowercase()))
                .collect()
        })
        .unwrap_or_default()
}

/// Samples one goal. Satisfiable goals are anchored on a random entity so
/// that Fixed and OneOf constraints admit at least that entity.
pub fn sample_goal<R: Rng + ?Sized>(
    spec: &TaskSpec,
    rng: &mut R,
    config: &GoalConfig,
) -> Result<UserGoal, ScenarioError> {
    let constrainable: Vec<_> = spec.schema.slots.iter().filter(|s| s.constrainable).collect();
    if constrainable.is_empty() {
        return Err(ScenarioError::EmptySchema(spec.name().to_string()));
    }
    let intent = spec
        .schema
        .intents
        .choose(rng)
        .cloned()
        .ok_or_else(|| ScenarioError::EmptySchema(spec.name().to_string()))?;
    let anchor = spec.db.entities.choose(rng);

    let mut constraints = Vec::with_capacity(constrainable.len());
    let mut one_of_count = 0;
    for slot in &constrainable {
        let name = slot.name.as_str();
        let known = spec.known_values(name);
        let target: Option<String> = if spec.is_column(name) {
            anchor.and_then(|e| e.get(name)).map(str::to_string)
        } else {
            known.choose(rng).cloned()
        };
        let Some(target) = target else {
            constraints.push(Constraint::open(name));
            continue;
        };
        let mut kind = pick_weighted(rng, &config.kind_weights);
        if kind == 1 && one_of_count >= config.max_one_of {
            kind = 0;
        }
        let constraint = match kind {
            0 => Constraint::fixed(name, target),
            1 => {
                let mut pool: Vec<&str> = known
                    .iter()
                    .map(String::as_str)
                    .chain(distractors_for(spec, config, name))
                    .filter(|v| v.to_lowercase() != target.to_lowercase())
                    .collect();
                pool.shuffle(rng);
                let extra = config.one_of_size.max(2) - 1;
                if pool.len() < extra {
                    Constraint::fixed(name, target)
                } else {
                    let mut values: Vec<String> =
                        pool[..extra].iter().map(|v| v.to_string()).collect();
                    values.push(target);
                    values.shuffle(rng);
                    one_of_count += 1;
                    Constraint::one_of(name, values)
                }
            }
            2 if rng.gen_bool(config.p_flexible_anchor.clamp(0.0, 1.0)) => {
                Constraint::flexible(name, target)
            }
            2 => {
                let pool: Vec<&str> = known
                    .iter()
                    .map(String::as_str)
                    .chain(distractors_for(spec, config, name))
                    .collect();
                let preferred = pool.choose(rng).map(|v| v.to_string()).unwrap_or(target);
                Constraint::flexible(name, preferred)
            }
            _ => Constraint::open(name),
        };
        constraints.push(constraint);
    }

    let mut unsatisfiable = false;
    if config.p_unsat > 0.0 && rng.gen_bool(config.p_unsat.min(1.0)) {
        let candidates: Vec<(&str, Vec<&str>)> = constrainable
            .iter()
            .filter(|s| spec.is_column(&s.name))
            .map(|s| (s.name.as_str(), distractors_for(spec, config, &s.name)))
            .filter(|(_, d)| !d.is_empty())
            .collect();
        if let Some((slot, values)) = candidates.choose(rng) {
            let value = values.choose(rng).expect("non-empty distractors");
            if let Some(c) = constraints.iter_mut().find(|c| c.slot == *slot) {
                *c = Constraint::fixed(*slot, *value);
                unsatisfiable = true;
            }
        }
    }

    let requests = spec
        .schema
        .slots
        .iter()
        .filter(|s| s.requestable && spec.is_column(&s.name))
        .filter(|_| rng.gen_bool(config.p_request_slot.clamp(0.0, 1.0)))
        .map(|s| s.name.clone())
        .collect();

    Ok(UserGoal {
        task: spec.name().to_string(),
        intent,
        constraints,
        requests,
        references: IndexMap::new(),
        unsatisfiable,
    })
}

/// Draws one profile from a weighted mixture and perturbs it by `jitter`,
/// clamping every probability to [0, 1].
pub fn sample_profile<R: Rng + ?Sized>(
    rng: &mut R,
    distribution: &[WeightedProfile],
    jitter: &ProfileJitter,
) -> Result<UserProfile, ScenarioError> {
    if distribution.is_empty() || distribution.iter().any(|w| w.weight.is_nan() || w.weight < 0.0) {
        return Err(ScenarioError::EmptyDistribution);
    }
    let index = WeightedIndex::new(distribution.iter().map(|w| w.weight))
        .map_err(|_| ScenarioError::EmptyDistribution)?;
    let mut profile = distribution[index.sample(rng)].profile.clone();
    let mut perturb = |p: &mut f64, half_width: f64| {
        if half_width > 0.0 {
            *p += rng.gen_range(-half_width..=half_width);
        }
        *p = p.clamp(0.0, 1.0);
    };
    perturb(&mut profile.p_multi_slot, jitter.p_multi_slot);
    perturb(&mut profile.p_accept_flexible, jitter.p_accept_flexible);
    perturb(&mut profile.p_request_alts, jitter.p_request_alts);
    perturb(&mut profile.p_request_info, jitter.p_request_info);
    Ok(profile)
}

/// Samples a scenario over one or more tasks. The first goal is always for
/// `specs[0]`; each later task gets a goal with probability `p_multi_goal`,
/// and its reference rules bind slots to earlier goals.
pub fn sample_scenario(
    specs: &[TaskSpec],
    config: &ScenarioConfig,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    let mut rng = seeded(seed);
    let first = specs
        .first()
        .ok_or_else(|| ScenarioError::Invalid("no task specification given".into()))?;
    let profile = sample_profile(&mut rng, &config.profiles, &config.jitter)?;
    let mut goals = vec![sample_goal(first, &mut rng, &config.goal)?];
    for spec in &specs[1..] {
        if !(config.p_multi_goal > 0.0 && rng.gen_bool(config.p_multi_goal.min(1.0))) {
            continue;
        }
        let mut goal = sample_goal(spec, &mut rng, &config.goal)?;
        for rule in config.references.iter().filter(|r| r.task == spec.name()) {
            let Some(source) = goals.iter().rposition(|g| g.task == rule.source_task) else {
                continue;
            };
            if let Some(c) = goal.constraint_mut(&rule.slot) {
                *c = Constraint::fixed(rule.slot.clone(), rule.description.clone());
                goal.references.insert(
                    rule.slot.clone(),
                    GoalReference {
                        goal: source,
                        source_slot: rule.source_slot.clone(),
                        description: rule.description.clone(),
                    },
                );
            }
        }
        goals.push(goal);
    }
    Ok(Scenario {
        profile,
        goals,
        seed,
    })
}
