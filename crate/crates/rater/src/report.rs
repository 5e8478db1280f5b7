//! Scores recomputed from a session log.

use std::collections::HashMap;

use agf_core::dataset::LesionClass;
use serde::{Deserialize, Serialize};

use crate::error::{RaterError, Result};
use crate::log::{Created, Response};

/// `correct` out of `answered`; `accuracy` is absent when nothing was
/// answered in this category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub correct: usize,
    pub answered: usize,
    pub accuracy: Option<f64>,
}

impl Score {
    fn tally(outcomes: impl Iterator<Item = bool>) -> Score {
        let (mut correct, mut answered) = (0, 0);
        for ok in outcomes {
            answered += 1;
            correct += usize::from(ok);
        }
        Score { correct, answered, accuracy: (answered > 0).then(|| correct as f64 / answered as f64) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub real: Score,
    pub synthetic: Score,
    pub total: Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: LesionClass,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterReport {
    pub session_id: String,
    pub rater_id: String,
    pub total_items: usize,
    pub answered: usize,
    pub complete: bool,
    pub classification: Classification,
    /// Real-versus-synthetic judgments; absent in classification-only
    /// sessions.
    pub real_vs_fake: Option<Score>,
    /// Classification accuracy by true class.
    pub per_class: Vec<ClassScore>,
}

/// Report of one session; fails if nothing has been answered.
pub fn session_report(created: &Created, responses: &[Response]) -> Result<RaterReport> {
    if responses.is_empty() {
        return Err(RaterError::EmptyReport(format!("session {} has no responses", created.session_id)));
    }
    let truth: HashMap<&str, _> = created.items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let rows: Vec<(&crate::log::ItemTruth, &Response)> = responses.iter().map(|r| (truth[r.item_id.as_str()], r)).collect();
    let class_ok = |real: Option<bool>| {
        Score::tally(rows.iter().filter(|(t, _)| real.is_none_or(|x| t.real == x)).map(|(t, r)| t.class == r.class))
    };
    let per_class = LesionClass::ALL
        .iter()
        .map(|&class| ClassScore {
            class,
            score: Score::tally(rows.iter().filter(|(t, _)| t.class == class).map(|(t, r)| r.class == t.class)),
        })
        .collect();
    Ok(RaterReport {
        session_id: created.session_id.clone(),
        rater_id: created.rater_id.clone(),
        total_items: created.items.len(),
        answered: responses.len(),
        complete: responses.len() == created.items.len(),
        classification: Classification { real: class_ok(Some(true)), synthetic: class_ok(Some(false)), total: class_ok(None) },
        real_vs_fake: created
            .ask_real
            .then(|| Score::tally(rows.iter().map(|(t, r)| r.is_real == Some(t.real)))),
        per_class,
    })
}

/// Class agreement between two sessions over the items both answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub session_a: String,
    pub session_b: String,
    pub co_answered: usize,
    /// Items on which both chose the same class.
    pub agreed: usize,
    pub agreement: f64,
    /// Items both classified correctly.
    pub both_correct: usize,
}

pub fn agreement(a: (&Created, &[Response]), b: (&Created, &[Response])) -> Result<AgreementReport> {
    let truth: HashMap<&str, LesionClass> = a.0.items.iter().map(|i| (i.item_id.as_str(), i.class)).collect();
    let b_answers: HashMap<&str, LesionClass> = b.1.iter().map(|r| (r.item_id.as_str(), r.class)).collect();
    let (mut co, mut agreed, mut both) = (0, 0, 0);
    for r in a.1 {
        if let Some(&cb) = b_answers.get(r.item_id.as_str()) {
            co += 1;
            agreed += usize::from(r.class == cb);
            both += usize::from(r.class == cb && truth.get(r.item_id.as_str()) == Some(&cb));
        }
    }
    if co == 0 {
        return Err(RaterError::EmptyReport(format!(
            "sessions {} and {} have no co-answered items",
            a.0.session_id, b.0.session_id
        )));
    }
    Ok(AgreementReport {
        session_a: a.0.session_id.clone(),
        session_b: b.0.session_id.clone(),
        co_answered: co,
        agreed,
        agreement: agreed as f64 / co as f64,
        both_correct: both,
    })
}
