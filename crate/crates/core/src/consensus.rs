//! Staged consensus between the primary models and the tiebreaker, and the
//! routing rules that decide which items need a human.
//!
//! Stage one queries both primaries. If their canonical labels match the
//! item has full agreement and the tiebreaker is never asked. Otherwise the
//! tiebreaker is queried: siding with one primary gives partial agreement,
//! a third distinct answer gives none. Abstentions act as labels that match
//! nothing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AdapterError, ModelRole, ModelVerdict, TaskSpec};
use crate::ingest::ContentItem;
use crate::seed;
use crate::taxonomy::TaxonomyState;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgreementLevel {
    Full,
    Partial,
    None,
}

/// Why an item reached a reviewer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReviewReason {
    Disagreement,
    LowConfidence,
    Qc,
}

impl ReviewReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ReviewReason::Disagreement => "disagreement",
            ReviewReason::LowConfidence => "low-confidence",
            ReviewReason::Qc => "qc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "disagreement" => Some(ReviewReason::Disagreement),
            "low-confidence" => Some(ReviewReason::LowConfidence),
            "qc" => Some(ReviewReason::Qc),
            _ => None,
        }
    }
}

/// Reasons that escalate an item to human annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscalationReason {
    Disagreement,
    LowConfidence,
}

impl From<EscalationReason> for ReviewReason {
    fn from(r: EscalationReason) -> Self {
        match r {
            EscalationReason::Disagreement => ReviewReason::Disagreement,
            EscalationReason::LowConfidence => ReviewReason::LowConfidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "kebab-case")]
pub enum Route {
    AutoAccept,
    HumanReview(EscalationReason),
    QcSample,
}

impl Route {
    /// The review reason, for routes that create a case.
    pub fn review_reason(self) -> Option<ReviewReason> {
        match self {
            Route::AutoAccept => None,
            Route::HumanReview(r) => Some(r.into()),
            Route::QcSample => Some(ReviewReason::Qc),
        }
    }

    pub fn is_escalation(self) -> bool {
        matches!(self, Route::HumanReview(_))
    }
}

/// Label used for agreement comparisons. Abstentions carry the model id so
/// they never equal anything else.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CanonicalLabel {
    Label(String),
    Abstained(String),
}

impl CanonicalLabel {
    pub fn of(verdict: &ModelVerdict, taxonomy: &TaxonomyState, task: &TaskSpec) -> Self {
        match &verdict.label {
            Some(label) if verdict.is_labeled() => {
                let canonical = taxonomy.canonical(label, task).unwrap_or_else(|_| label.clone());
                CanonicalLabel::Label(canonical)
            }
            _ => CanonicalLabel::Abstained(verdict.model.clone()),
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            CanonicalLabel::Label(l) => Some(l),
            CanonicalLabel::Abstained(_) => None,
        }
    }
}

/// A distinct canonical label among an item's verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergencePoint {
    pub label: String,
    pub holders: Vec<String>,
    pub conf_min: f64,
    pub conf_max: f64,
}

/// Agreement result for one item, before routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consensus {
    pub item: String,
    pub agreement: AgreementLevel,
    pub label: Option<String>,
    pub verdicts: Vec<ModelVerdict>,
    pub divergence: Vec<DivergencePoint>,
}

impl Consensus {
    /// Confidence range of the models holding the consensus label.
    pub fn majority_confidence(&self) -> Option<(f64, f64)> {
        let label = self.label.as_deref()?;
        self.divergence
            .iter()
            .find(|d| d.label == label)
            .map(|d| (d.conf_min, d.conf_max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    #[serde(flatten)]
    pub consensus: Consensus,
    pub route: Route,
}

impl ConsensusOutcome {
    pub fn item(&self) -> &str {
        &self.consensus.item
    }

    pub fn agreement(&self) -> AgreementLevel {
        self.consensus.agreement
    }

    pub fn label(&self) -> Option<&str> {
        self.consensus.label.as_deref()
    }
}

pub fn agreement_level(
    first: &CanonicalLabel,
    second: &CanonicalLabel,
    tiebreak: Option<&CanonicalLabel>,
) -> Result<AgreementLevel, ConsensusError> {
    match (first == second, tiebreak) {
        (true, None) => Ok(AgreementLevel::Full),
        (true, Some(_)) => Err(ConsensusError::Contract(
            "tiebreaker verdict supplied although the primaries agree".into(),
        )),
        (false, None) => Err(ConsensusError::Contract(
            "primaries disagree but no tiebreaker verdict was supplied".into(),
        )),
        (false, Some(third)) if third == first || third == second => Ok(AgreementLevel::Partial),
        (false, Some(_)) => Ok(AgreementLevel::None),
    }
}

/// Where verdicts come from; implemented by the pipeline over real adapters.
pub trait VerdictSource: Sync {
    fn verdict(&self, role: ModelRole, item: &ContentItem) -> Result<ModelVerdict, AdapterError>;
}

fn divergence_points(verdicts: &[ModelVerdict], canon: &[CanonicalLabel]) -> Vec<DivergencePoint> {
    let mut points: Vec<DivergencePoint> = Vec::new();
    for (verdict, key) in verdicts.iter().zip(canon) {
        let (Some(label), Some(conf)) = (key.label(), verdict.confidence) else { continue };
        match points.iter_mut().find(|p| p.label == label) {
            Some(p) => {
                p.holders.push(verdict.model.clone());
                p.conf_min = p.conf_min.min(conf);
                p.conf_max = p.conf_max.max(conf);
            }
            None => points.push(DivergencePoint {
                label: label.to_string(),
                holders: vec![verdict.model.clone()],
                conf_min: conf,
                conf_max: conf,
            }),
        }
    }
    points
}

/// Builds the consensus from already-obtained verdicts.
pub fn assemble(
    item: &str,
    verdicts: Vec<ModelVerdict>,
    taxonomy: &TaxonomyState,
    task: &TaskSpec,
) -> Result<Consensus, ConsensusError> {
    if !(2..=3).contains(&verdicts.len()) {
        return Err(ConsensusError::Contract(format!("expected 2 or 3 verdicts, got {}", verdicts.len())));
    }
    let canon: Vec<CanonicalLabel> = verdicts.iter().map(|v| CanonicalLabel::of(v, taxonomy, task)).collect();
    let agreement = agreement_level(&canon[0], &canon[1], canon.get(2))?;
    let label = match agreement {
        AgreementLevel::Full => canon[0].label().map(str::to_string),
        AgreementLevel::Partial => canon[2].label().map(str::to_string),
        AgreementLevel::None => None,
    };
    let divergence = divergence_points(&verdicts, &canon);
    Ok(Consensus {
        item: item.to_string(),
        agreement,
        label,
        verdicts,
        divergence,
    })
}

/// Queries the primaries, then the tiebreaker only if they disagree.
pub fn decide(
    item: &ContentItem,
    task: &TaskSpec,
    source: &dyn VerdictSource,
    taxonomy: &TaxonomyState,
) -> Result<Consensus, ConsensusError> {
    let (first, second) = rayon::join(
        || source.verdict(ModelRole::Primary1, item),
        || source.verdict(ModelRole::Primary2, item),
    );
    let (first, second) = (first?, second?);
    let agree = CanonicalLabel::of(&first, taxonomy, task) == CanonicalLabel::of(&second, taxonomy, task);
    let mut verdicts = vec![first, second];
    if !agree {
        verdicts.push(source.verdict(ModelRole::Tiebreaker, item)?);
    }
    assemble(&item.id, verdicts, taxonomy, task)
}

/// Seeded Bernoulli stream choosing full-agreement items for QC audit.
#[derive(Debug, Clone)]
pub struct QcSampler {
    rate: f64,
    rng: ChaCha8Rng,
}

impl QcSampler {
    pub fn new(rate: f64, run_seed: u64) -> Self {
        QcSampler {
            rate,
            rng: seed::stream(run_seed, &["qc"]),
        }
    }

    pub fn draw(&mut self) -> bool {
        self.rng.gen::<f64>() < self.rate
    }
}

pub fn route(consensus: &Consensus, threshold: f64, qc: &mut QcSampler) -> Route {
    match consensus.agreement {
        AgreementLevel::None => Route::HumanReview(EscalationReason::Disagreement),
        AgreementLevel::Partial => {
            let (min, _) = consensus.majority_confidence().unwrap_or((0.0, 0.0));
            if min < threshold {
                Route::HumanReview(EscalationReason::LowConfidence)
            } else {
                Route::AutoAccept
            }
        }
        AgreementLevel::Full => {
            if qc.draw() {
                Route::QcSample
            } else {
                Route::AutoAccept
            }
        }
    }
}
