//! Synthetic model ensembles driven through the full pipeline.
//!
//! Each synthetic model answers the gold label with probability `accuracy`
//! and otherwise a wrong label: uniform over the other labels of a closed
//! task, or a novel phrase from a small vocabulary on open tasks. Random
//! streams are keyed by (run seed, profile seed, model id, item id), so
//! scheduling never changes an answer.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    AdapterError, AdapterKind, AdapterRequest, ConfigError, LabelSpace, ModelAdapter, ModelRole, ModelSpec, Roster,
    TaskSpec, TemplateRegistry,
};
use crate::ingest::{ContentItem, DatasetManifest};
use crate::metrics::{self, MetricsError, RunReport};
use crate::pipeline::{self, Adapters, AnnotateOptions, ErrorPolicy, PipelineError};
use crate::review::ReviewError;
use crate::seed;
use crate::store::{EventLog, RunSession, RunState};
use crate::taxonomy::normalize_label;

pub const DEFAULT_CONF_CORRECT_LO: f64 = 0.7;
pub const DEFAULT_CONF_WRONG_LO: f64 = 0.3;
pub const DEFAULT_CONF_WRONG_HI: f64 = 0.9;
pub const DEFAULT_NOVEL_VOCAB: usize = 40;
pub const DEFAULT_OPEN_CATEGORIES: usize = 20;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

fn default_conf_correct_lo() -> f64 {
    DEFAULT_CONF_CORRECT_LO
}
fn default_conf_wrong_lo() -> f64 {
    DEFAULT_CONF_WRONG_LO
}
fn default_conf_wrong_hi() -> f64 {
    DEFAULT_CONF_WRONG_HI
}

/// Behavior of one synthetic model. Confidence is drawn from
/// `U(conf_correct_lo, 1)` when correct and `U(conf_wrong_lo, conf_wrong_hi)`
/// when wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelProfile {
    pub id: String,
    pub role: ModelRole,
    pub accuracy: f64,
    #[serde(default = "default_conf_correct_lo")]
    pub conf_correct_lo: f64,
    #[serde(default = "default_conf_wrong_lo")]
    pub conf_wrong_lo: f64,
    #[serde(default = "default_conf_wrong_hi")]
    pub conf_wrong_hi: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticModelProfile {
    pub fn new(id: &str, role: ModelRole, accuracy: f64) -> Self {
        SyntheticModelProfile {
            id: id.into(),
            role,
            accuracy,
            conf_correct_lo: DEFAULT_CONF_CORRECT_LO,
            conf_wrong_lo: DEFAULT_CONF_WRONG_LO,
            conf_wrong_hi: DEFAULT_CONF_WRONG_HI,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::Adapter { model: self.id.clone(), message };
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.accuracy) {
            return Err(bad(format!("accuracy {} outside [0,1]", self.accuracy)));
        }
        if !unit(self.conf_correct_lo) || !unit(self.conf_wrong_lo) || !unit(self.conf_wrong_hi) {
            return Err(bad("confidence bounds must lie in [0,1]".into()));
        }
        if self.conf_wrong_lo > self.conf_wrong_hi {
            return Err(bad("conf_wrong_lo exceeds conf_wrong_hi".into()));
        }
        Ok(())
    }

    /// Reads a profile from a synthetic model's config entry.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ConfigError> {
        let mut settings = spec.settings.clone();
        settings.insert("id".into(), spec.id.clone().into());
        settings.insert("role".into(), serde_json::to_value(spec.role).expect("role serializes"));
        let profile: SyntheticModelProfile = serde_json::from_value(serde_json::Value::Object(settings))
            .map_err(|e| ConfigError::Adapter { model: spec.id.clone(), message: e.to_string() })?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_spec(&self) -> ModelSpec {
        let mut settings = match serde_json::to_value(self).expect("profile serializes") {
            serde_json::Value::Object(m) => m,
            _ => unreachable!(),
        };
        settings.remove("id");
        settings.remove("role");
        ModelSpec { id: self.id.clone(), kind: AdapterKind::Synthetic, role: self.role, settings }
    }

    fn p_confident(&self, correct: bool, threshold: f64) -> f64 {
        let (lo, hi) = if correct { (self.conf_correct_lo, 1.0) } else { (self.conf_wrong_lo, self.conf_wrong_hi) };
        if hi <= lo {
            return if lo >= threshold { 1.0 } else { 0.0 };
        }
        ((hi - threshold.max(lo)) / (hi - lo)).clamp(0.0, 1.0)
    }
}

pub fn load_profiles(text: &str) -> Result<Vec<SyntheticModelProfile>, ConfigError> {
    let profiles: Vec<SyntheticModelProfile> = serde_json::from_str(text)
        .map_err(|e| ConfigError::Parse { what: "profiles".into(), message: e.to_string() })?;
    for p in &profiles {
        p.validate()?;
    }
    Ok(profiles)
}

/// How errors are shared between models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStructure {
    /// Probability that a model's outcome on an item follows a draw shared
    /// by all models instead of its own. 0 gives independent errors, which
    /// is optimistic for real models.
    pub correlation: f64,
    /// Distinct novel labels a wrong answer can take on open tasks.
    pub novel_vocab: usize,
}

impl Default for ErrorStructure {
    fn default() -> Self {
        ErrorStructure { correlation: 0.0, novel_vocab: DEFAULT_NOVEL_VOCAB }
    }
}

impl ErrorStructure {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(format!("correlation {} outside [0,1]", self.correlation));
        }
        if self.novel_vocab == 0 {
            return Err("novel_vocab must be at least 1".into());
        }
        Ok(())
    }
}

/// Answers with a profile's behavior, reading gold labels from a map.
#[derive(Debug, Clone)]
pub struct SyntheticAdapter {
    profile: SyntheticModelProfile,
    labels: LabelSpace,
    gold: Arc<HashMap<String, String>>,
    errors: ErrorStructure,
    model_seed: u64,
    shared_seed: u64,
}

impl SyntheticAdapter {
    pub fn new(
        profile: SyntheticModelProfile,
        task: &TaskSpec,
        gold: Arc<HashMap<String, String>>,
        errors: ErrorStructure,
        run_seed: u64,
    ) -> Self {
        let model_seed = seed::derive(run_seed, &["synthetic", &profile.seed.to_string(), &profile.id]);
        SyntheticAdapter {
            profile,
            labels: task.labels.clone(),
            gold,
            errors,
            model_seed,
            shared_seed: seed::derive(run_seed, &["shared-errors"]),
        }
    }

    /// The (label, confidence) this model gives for an item with `gold`.
    pub fn answer(&self, item: &str, gold: &str) -> Result<(String, f64), String> {
        let mut own = seed::stream(self.model_seed, &[item]);
        let follow = own.gen::<f64>() < self.errors.correlation;
        let u_own = own.gen::<f64>();
        let pick_own = own.gen::<f64>();
        let u_conf = own.gen::<f64>();
        let (u, pick) = if follow {
            let mut shared = seed::stream(self.shared_seed, &[item]);
            (shared.gen::<f64>(), shared.gen::<f64>())
        } else {
            (u_own, pick_own)
        };
        let correct = u < self.profile.accuracy;
        let gold = normalize_label(gold).map_err(|e| e.to_string())?;
        let label = match &self.labels {
            LabelSpace::Closed(labels) => {
                let gold = self
                    .labels
                    .match_closed(&gold)
                    .ok_or_else(|| format!("gold label {gold:?} is outside the label space"))?
                    .to_string();
                if correct || labels.len() < 2 {
                    gold
                } else {
                    let others: Vec<&String> = labels.iter().filter(|l| **l != gold).collect();
                    let idx = ((pick * others.len() as f64) as usize).min(others.len() - 1);
                    others[idx].clone()
                }
            }
            LabelSpace::Open => {
                if correct {
                    gold
                } else {
                    let j = ((pick * self.errors.novel_vocab as f64) as usize).min(self.errors.novel_vocab - 1);
                    let novel = format!("novel topic {j}");
                    if novel == gold {
                        format!("novel topic {j} variant")
                    } else {
                        novel
                    }
                }
            }
        };
        let p = &self.profile;
        let conf = if correct {
            p.conf_correct_lo + (1.0 - p.conf_correct_lo) * u_conf
        } else {
            p.conf_wrong_lo + (p.conf_wrong_hi - p.conf_wrong_lo) * u_conf
        };
        Ok((label, conf))
    }
}

impl ModelAdapter for SyntheticAdapter {
    fn complete(&self, request: &AdapterRequest<'_>) -> Result<String, AdapterError> {
        let gold = self
            .gold
            .get(request.item)
            .ok_or_else(|| AdapterError::Config(format!("synthetic model needs a gold label for item {}", request.item)))?;
        let (label, confidence) = self.answer(request.item, gold).map_err(AdapterError::Config)?;
        Ok(serde_json::json!({"label": label, "confidence": confidence, "reasoning": "synthetic"}).to_string())
    }
}

/// Who resolves review cases in a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HumanReviewer {
    /// Always answers gold.
    Oracle,
    /// Answers gold with probability `accuracy`, otherwise a wrong label.
    Noisy { accuracy: f64 },
}

impl HumanReviewer {
    fn answer(&self, task: &TaskSpec, item: &str, gold: &str, seed: u64) -> String {
        let HumanReviewer::Noisy { accuracy } = *self else { return gold.to_string() };
        let mut rng = seed::stream(seed, &["human", item]);
        if rng.gen::<f64>() < accuracy {
            return gold.to_string();
        }
        match &task.labels {
            LabelSpace::Closed(labels) => {
                let gold = normalize_label(gold).unwrap_or_default();
                let others: Vec<&String> = labels.iter().filter(|l| **l != gold).collect();
                if others.is_empty() {
                    gold
                } else {
                    others[rng.gen_range(0..others.len())].clone()
                }
            }
            LabelSpace::Open => format!("reviewer topic {}", rng.gen_range(0..DEFAULT_NOVEL_VOCAB)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub profiles: Vec<SyntheticModelProfile>,
    pub task: TaskSpec,
    pub n: usize,
    pub seed: u64,
    pub errors: ErrorStructure,
    pub human: HumanReviewer,
    /// Gold categories on open tasks.
    pub open_categories: usize,
    /// Worker threads; 0 means one per processor.
    pub workers: usize,
}

impl SimulationConfig {
    pub fn new(profiles: Vec<SyntheticModelProfile>, task: TaskSpec, n: usize, seed: u64) -> Self {
        SimulationConfig {
            profiles,
            task,
            n,
            seed,
            errors: ErrorStructure::default(),
            human: HumanReviewer::Oracle,
            open_categories: DEFAULT_OPEN_CATEGORIES,
            workers: 0,
        }
    }
}

/// A standalone model's score on the simulated items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleScore {
    pub k: usize,
    pub n: usize,
}

impl SingleScore {
    pub fn pct(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (1000.0 * self.k as f64 / self.n as f64).round() / 10.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub report: RunReport,
    pub singles: BTreeMap<String, SingleScore>,
    pub state: RunState,
}

#[derive(Serialize)]
struct SimulationOutput<'a> {
    #[serde(flatten)]
    report: &'a RunReport,
    singles: BTreeMap<&'a str, f64>,
}

impl SimulationResult {
    /// Report JSON plus `{"singles": {"<model id>": pct}}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SimulationOutput {
            report: &self.report,
            singles: self.singles.iter().map(|(k, v)| (k.as_str(), v.pct())).collect(),
        })
        .expect("report serializes")
    }

    pub fn render_table(&self) -> String {
        let mut out = self.report.render_table();
        out.push_str("\nSingle models\n");
        for (id, s) in &self.singles {
            out.push_str(&format!("{id:<16} {:.1}\n", s.pct()));
        }
        out
    }
}

fn sim_clock() -> String {
    "1970-01-01T00:00:00.000Z".into()
}

/// Items with gold labels drawn uniformly from the task's label space.
pub fn synthetic_items(task: &TaskSpec, n: usize, seed: u64, open_categories: usize) -> Vec<ContentItem> {
    let pool: Vec<String> = match &task.labels {
        LabelSpace::Closed(labels) => labels.clone(),
        LabelSpace::Open => (0..open_categories.max(1)).map(|j| format!("category {j}")).collect(),
    };
    let mut rng = seed::stream(seed, &["gold"]);
    (0..n)
        .map(|i| ContentItem {
            id: format!("sim-{i:06}"),
            content: format!("synthetic item {i}"),
            group: format!("g{:02}", i % 10),
            gold: Some(pool[rng.gen_range(0..pool.len())].clone()),
        })
        .collect()
}

/// Runs synthetic models over generated items, resolves every review case
/// with the configured reviewer, and reports.
pub fn simulate_run(cfg: &SimulationConfig) -> Result<SimulationResult, SimulationError> {
    cfg.task.validate()?;
    cfg.errors.validate().map_err(|m| ConfigError::Parse { what: "error structure".into(), message: m })?;
    for p in &cfg.profiles {
        p.validate()?;
    }
    let roster = Roster::from_specs(cfg.profiles.iter().map(|p| p.to_spec()).collect())?;
    let items = synthetic_items(&cfg.task, cfg.n, cfg.seed, cfg.open_categories);
    let gold: Arc<HashMap<String, String>> =
        Arc::new(items.iter().map(|i| (i.id.clone(), i.gold.clone().expect("generated gold"))).collect());

    let adapter = |role: ModelRole| -> Arc<SyntheticAdapter> {
        let profile = cfg.profiles.iter().find(|p| p.role == role).expect("roster checked roles").clone();
        Arc::new(SyntheticAdapter::new(profile, &cfg.task, gold.clone(), cfg.errors, cfg.seed))
    };
    let synth = [adapter(ModelRole::Primary1), adapter(ModelRole::Primary2), adapter(ModelRole::Tiebreaker)];
    let adapters = Adapters {
        primary_1: synth[0].clone(),
        primary_2: synth[1].clone(),
        tiebreaker: synth[2].clone(),
    };

    let manifest = DatasetManifest::from_items("synthetic", &items);
    let mut session = RunSession::new(EventLog::discard().with_clock(sim_clock));
    pipeline::annotate(
        &mut session,
        &cfg.task,
        &roster,
        &adapters,
        &TemplateRegistry::bundled(),
        &items,
        manifest,
        AnnotateOptions { seed: cfg.seed, workers: cfg.workers, on_error: ErrorPolicy::Abort },
    )?;

    for case_id in session.state().pending_case_ids() {
        let item = session.state().case(&case_id).expect("pending case").item.id.clone();
        let label = cfg.human.answer(&cfg.task, &item, &gold[&item], cfg.seed);
        session.apply_decision(&case_id, &label, "simulated-reviewer", "")?;
    }

    let state = session.into_state();
    let report = metrics::build_report(&[&state])?;

    let mut singles = BTreeMap::new();
    for (adapter, role) in synth.iter().zip(ModelRole::ALL) {
        let id = roster.get(role).id.clone();
        let mut score = SingleScore { k: 0, n: 0 };
        for item in &items {
            let g = &gold[&item.id];
            let (label, _) = adapter.answer(&item.id, g).map_err(|m| ConfigError::Parse { what: "gold".into(), message: m })?;
            let expected = normalize_label(g).ok().map(|g| match &cfg.task.labels {
                LabelSpace::Closed(_) => cfg.task.labels.match_closed(&g).map(str::to_string).unwrap_or(g),
                LabelSpace::Open => g,
            });
            score.n += 1;
            if expected.as_deref() == Some(label.as_str()) {
                score.k += 1;
            }
        }
        singles.insert(id, score);
    }
    Ok(SimulationResult { report, singles, state })
}

/// Exact expectations for a closed task under independent, uniformly
/// spread errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedOutcome {
    /// Accuracy of automatically finalized items.
    pub auto_accuracy: f64,
    /// Probability an item is escalated to a human.
    pub hrr: f64,
    /// Probability an item is finalized automatically with the gold label.
    pub p_auto_correct: f64,
}

/// Enumerates every joint answer of the three models (gold fixed as label
/// 0 by symmetry) and applies the routing rules to each.
pub fn expected_outcome_oracle(
    profiles: &[SyntheticModelProfile],
    task: &TaskSpec,
) -> Result<ExpectedOutcome, SimulationError> {
    let k = match &task.labels {
        LabelSpace::Closed(labels) => labels.len(),
        LabelSpace::Open => return Err(SimulationError::Unsupported("open label spaces have no enumeration oracle".into())),
    };
    let by_role = |role: ModelRole| {
        profiles
            .iter()
            .find(|p| p.role == role)
            .ok_or_else(|| SimulationError::Config(ConfigError::Roster(format!("no profile for role {role}"))))
    };
    let m = [by_role(ModelRole::Primary1)?, by_role(ModelRole::Primary2)?, by_role(ModelRole::Tiebreaker)?];
    let p_label = |p: &SyntheticModelProfile, l: usize| {
        if l == 0 {
            p.accuracy
        } else {
            (1.0 - p.accuracy) / (k - 1) as f64
        }
    };
    let theta = task.threshold;
    let (mut p_human, mut p_auto, mut p_auto_correct) = (0.0, 0.0, 0.0);
    for l1 in 0..k {
        for l2 in 0..k {
            let p12 = p_label(m[0], l1) * p_label(m[1], l2);
            if p12 == 0.0 {
                continue;
            }
            if l1 == l2 {
                p_auto += p12;
                if l1 == 0 {
                    p_auto_correct += p12;
                }
                continue;
            }
            for l3 in 0..k {
                let p = p12 * p_label(m[2], l3);
                let partner = if l3 == l1 {
                    m[0]
                } else if l3 == l2 {
                    m[1]
                } else {
                    p_human += p;
                    continue;
                };
                let correct = l3 == 0;
                let confident = partner.p_confident(correct, theta) * m[2].p_confident(correct, theta);
                p_auto += p * confident;
                p_human += p * (1.0 - confident);
                if correct {
                    p_auto_correct += p * confident;
                }
            }
        }
    }
    Ok(ExpectedOutcome {
        auto_accuracy: if p_auto > 0.0 { p_auto_correct / p_auto } else { 0.0 },
        hrr: p_human,
        p_auto_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profiles(a: [f64; 3]) -> Vec<SyntheticModelProfile> {
        vec![
            SyntheticModelProfile::new("m1", ModelRole::Primary1, a[0]),
            SyntheticModelProfile::new("m2", ModelRole::Primary2, a[1]),
            SyntheticModelProfile::new("m3", ModelRole::Tiebreaker, a[2]),
        ]
    }

    fn closed(k: usize) -> TaskSpec {
        let labels: Vec<String> = (0..k).map(|i| format!("label {i}")).collect();
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        TaskSpec::closed("sim", if k == 2 { 1 } else { 3 }, &refs, "classify")
    }

    #[test]
    fn perfect_models() {
        let out = simulate_run(&SimulationConfig::new(profiles([1.0; 3]), closed(5), 300, 3)).unwrap();
        let level = &out.report.levels[0];
        assert_eq!(level.all.unwrap().pct, 100.0);
        assert_eq!(level.hrr.to_string(), "0.00");
        assert!(out.singles.values().all(|s| s.pct() == 100.0));
        let exp = expected_outcome_oracle(&profiles([1.0; 3]), &closed(5)).unwrap();
        assert_eq!((exp.hrr, exp.auto_accuracy), (0.0, 1.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SimulationConfig::new(profiles([0.6, 0.7, 0.8]), closed(3), 500, 11);
        let a = simulate_run(&cfg).unwrap();
        let b = simulate_run(&SimulationConfig { workers: 1, ..cfg.clone() }).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.singles, b.singles);
        let c = simulate_run(&SimulationConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.singles, c.singles);
    }

    /// Brute-force expectation over the 8 correctness patterns of a
    /// 2-label task, written separately from the enumeration oracle.
    #[test]
    fn two_label_oracle_matches_pattern_sum() {
        let ps = profiles([0.5, 0.5, 0.5]);
        let task = closed(2);
        let p = &ps[0];
        let hi_c = p.p_confident(true, 0.8);
        let hi_w = p.p_confident(false, 0.8);
        // with two labels the tiebreaker always sides with one primary
        let (mut human, mut auto_ok, mut auto) = (0.0, 0.0, 0.0);
        for pattern in 0..8u8 {
            let c = [pattern & 1 != 0, pattern & 2 != 0, pattern & 4 != 0];
            let prob = 0.125;
            if c[0] == c[1] {
                auto += prob;
                if c[0] {
                    auto_ok += prob;
                }
            } else {
                let conf = if c[2] { hi_c * hi_c } else { hi_w * hi_w };
                auto += prob * conf;
                human += prob * (1.0 - conf);
                if c[2] {
                    auto_ok += prob * conf;
                }
            }
        }
        let exp = expected_outcome_oracle(&ps, &task).unwrap();
        assert!((exp.hrr - human).abs() < 1e-12);
        assert!((exp.auto_accuracy - auto_ok / auto).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_open_tasks() {
        assert!(matches!(
            expected_outcome_oracle(&profiles([0.5; 3]), &TaskSpec::open("o", "x")),
            Err(SimulationError::Unsupported(_))
        ));
    }

    #[test]
    fn open_tasks_escalate_more_than_closed() {
        let closed_run = simulate_run(&SimulationConfig::new(profiles([0.621, 0.8, 0.857]), closed(5), 2000, 5)).unwrap();
        let open_run =
            simulate_run(&SimulationConfig::new(profiles([0.299, 0.377, 0.452]), TaskSpec::open("o", "x"), 2000, 5))
                .unwrap();
        assert!(open_run.report.levels[0].hrr.0 > closed_run.report.levels[0].hrr.0 + 2000);
    }

    #[test]
    fn correlated_errors_hurt() {
        let base = SimulationConfig::new(profiles([0.7, 0.7, 0.7]), closed(3), 3000, 9);
        let corr = SimulationConfig { errors: ErrorStructure { correlation: 0.8, ..ErrorStructure::default() }, ..base.clone() };
        let a = simulate_run(&base).unwrap();
        let b = simulate_run(&corr).unwrap();
        assert!(b.report.levels[0].auto.unwrap().pct < a.report.levels[0].auto.unwrap().pct);
        // marginal accuracies are unchanged by correlation
        for s in b.singles.values() {
            assert!((s.pct() - 70.0).abs() < 3.5, "{}", s.pct());
        }
    }

    #[test]
    fn noisy_human_lowers_human_part() {
        let base = SimulationConfig::new(profiles([0.6, 0.6, 0.6]), closed(4), 2000, 2);
        let noisy = SimulationConfig { human: HumanReviewer::Noisy { accuracy: 0.5 }, ..base.clone() };
        let a = simulate_run(&base).unwrap();
        let b = simulate_run(&noisy).unwrap();
        assert_eq!(a.report.levels[0].human.unwrap().pct, 100.0);
        assert!(b.report.levels[0].human.unwrap().pct < 70.0);
    }

    #[test]
    fn profile_validation_and_spec_roundtrip() {
        let mut p = SyntheticModelProfile::new("m", ModelRole::Primary1, 0.8);
        p.seed = 4;
        assert_eq!(SyntheticModelProfile::from_spec(&p.to_spec()).unwrap(), p);
        p.conf_wrong_lo = 0.95;
        assert!(p.validate().is_err());
        assert!(load_profiles(r#"[{"id":"a","role":"primary-1","accuracy":1.5}]"#).is_err());
        let ok = load_profiles(r#"[{"id":"a","role":"primary-1","accuracy":0.5,"seed":1}]"#).unwrap();
        assert_eq!(ok[0].conf_correct_lo, DEFAULT_CONF_CORRECT_LO);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn lower_accuracy_never_lowers_expected_hrr(
                a in proptest::array::uniform3(0.0f64..=1.0),
                drop in proptest::array::uniform3(0.0f64..=0.3),
                k in 2usize..6,
            ) {
                let lower = [(a[0] - drop[0]).max(0.0), (a[1] - drop[1]).max(0.0), (a[2] - drop[2]).max(0.0)];
                // monotonicity holds where errors are the minority outcome
                prop_assume!(lower.iter().all(|&x| x >= 1.0 / k as f64));
                let hi = expected_outcome_oracle(&profiles(a), &closed(k)).unwrap();
                let lo = expected_outcome_oracle(&profiles(lower), &closed(k)).unwrap();
                prop_assert!(lo.hrr + 1e-12 >= hi.hrr, "{} < {}", lo.hrr, hi.hrr);
            }
        }
    }
}
