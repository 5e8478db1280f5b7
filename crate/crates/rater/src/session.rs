//! One rater's pass over a shuffled mixture of real and synthetic ROIs.

use std::collections::HashSet;

use agf_core::dataset::{LesionClass, Provenance, RoiImage};
use agf_core::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, RaterError, Result};
use crate::log::{Created, ItemTruth, Response};

/// Real and synthetic ROIs a session can draw from.
#[derive(Debug, Clone, Default)]
pub struct ItemPool {
    real: Vec<RoiImage>,
    synthetic: Vec<RoiImage>,
}

impl ItemPool {
    /// Accepts real and synthetic ROIs only; ids must be unique.
    pub fn new(rois: Vec<RoiImage>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut pool = ItemPool::default();
        for r in rois {
            if !seen.insert(r.id.clone()) {
                return Err(invalid(format!("duplicate ROI id {} in the rating pool", r.id)));
            }
            match r.provenance {
                Provenance::Real => pool.real.push(r),
                Provenance::Synthetic { .. } => pool.synthetic.push(r),
                Provenance::Augmented { .. } => {
                    return Err(invalid(format!("augmented ROI {} cannot be rated", r.id)));
                }
            }
        }
        pool.real.sort_by(|a, b| a.id.cmp(&b.id));
        pool.synthetic.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(pool)
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.real.len(), self.synthetic.len())
    }

    pub fn get(&self, id: &str) -> Option<&RoiImage> {
        let find = |v: &'_ [RoiImage]| v.binary_search_by(|r| r.id.as_str().cmp(id)).ok();
        find(&self.real).map(|i| &self.real[i]).or_else(|| find(&self.synthetic).map(|i| &self.synthetic[i]))
    }
}

/// What a new session should contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub rater_id: String,
    pub real: usize,
    pub synthetic: usize,
    pub seed: u64,
}

/// Draws `spec.real` real and `spec.synthetic` synthetic items and shuffles
/// them; a pure function of the pool and the `SessionSpec`.
pub fn draw_items(pool: &ItemPool, spec: &SessionSpec) -> Result<Vec<ItemTruth>> {
    if spec.rater_id.trim().is_empty() {
        return Err(invalid("rater_id must be non-empty"));
    }
    if spec.real + spec.synthetic == 0 {
        return Err(invalid("a session needs at least one item"));
    }
    let (nr, ns) = pool.counts();
    if spec.real > nr || spec.synthetic > ns {
        return Err(invalid(format!(
            "requested {} real + {} synthetic items but the pool holds {nr} + {ns}",
            spec.real, spec.synthetic
        )));
    }
    let pick = |v: &[RoiImage], n: usize, key: &str| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.shuffle(&mut rng::stream(spec.seed, key, &[]));
        idx[..n].iter().map(|&i| ItemTruth { item_id: v[i].id.clone(), class: v[i].class, real: v[i].provenance.is_real() }).collect::<Vec<_>>()
    };
    let mut items = pick(&pool.real, spec.real, "rater-real");
    items.extend(pick(&pool.synthetic, spec.synthetic, "rater-synthetic"));
    items.shuffle(&mut rng::stream(spec.seed, "rater-order", &[]));
    Ok(items)
}

/// Opaque per-item token. It hashes the session id, seed, position and
/// item id, so it reveals nothing about the item's label.
pub fn token_for(created: &Created, position: usize) -> String {
    let mut h = Sha256::new();
    h.update(created.session_id.as_bytes());
    h.update([0]);
    h.update(created.seed.to_le_bytes());
    h.update((position as u64).to_le_bytes());
    h.update(created.items[position].item_id.as_bytes());
    hex::encode(&h.finalize()[..12])
}

pub(crate) fn check_created(c: &Created) -> Result<()> {
    if c.items.is_empty() {
        return Err(invalid("session has no items"));
    }
    let mut ids = HashSet::new();
    if let Some(dup) = c.items.iter().find(|i| !ids.insert(i.item_id.as_str())) {
        return Err(invalid(format!("item {} listed twice", dup.item_id)));
    }
    if c.ask_real != c.items.iter().any(|i| !i.real) {
        return Err(invalid("the real/fake question is asked iff synthetic items are present"));
    }
    Ok(())
}

/// The item currently awaiting an answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServedItem {
    pub token: String,
    pub position: usize,
    pub total_items: usize,
    pub ask_real: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub created: Created,
    pub responses: Vec<Response>,
}

impl Session {
    pub fn new(session_id: String, spec: &SessionSpec, items: Vec<ItemTruth>, created_ms: u64) -> Result<Self> {
        let created = Created {
            session_id,
            rater_id: spec.rater_id.clone(),
            seed: spec.seed,
            ask_real: items.iter().any(|i| !i.real),
            created_ms,
            items,
        };
        check_created(&created)?;
        Ok(Session { created, responses: Vec::new() })
    }

    pub fn id(&self) -> &str {
        &self.created.session_id
    }

    pub fn cursor(&self) -> usize {
        self.responses.len()
    }

    pub fn is_complete(&self) -> bool {
        self.cursor() == self.created.items.len()
    }

    /// The cursor item, or `None` once every item is answered.
    pub fn next(&self) -> Option<ServedItem> {
        (!self.is_complete()).then(|| ServedItem {
            token: token_for(&self.created, self.cursor()),
            position: self.cursor(),
            total_items: self.created.items.len(),
            ask_real: self.created.ask_real,
        })
    }

    /// Item id behind a token of this session, answered or current.
    pub fn item_for_token(&self, token: &str) -> Option<&str> {
        let upto = (self.cursor() + 1).min(self.created.items.len());
        (0..upto).find(|&p| token_for(&self.created, p) == token).map(|p| self.created.items[p].item_id.as_str())
    }

    /// Validates an answer for the cursor item and returns the response to
    /// persist. The session itself is unchanged until [`Session::accept`].
    pub fn prepare(&self, token: &str, class: LesionClass, is_real: Option<bool>, at_ms: u64) -> Result<Response> {
        if self.responses.iter().any(|r| r.token == token) {
            return Err(RaterError::Conflict(format!("item {token} has already been answered")));
        }
        let Some(served) = self.next() else {
            return Err(RaterError::NotFound(format!("session {} is complete; token {token} is unknown", self.id())));
        };
        if served.token != token {
            return Err(RaterError::NotFound(format!("token {token} is not the current item of session {}", self.id())));
        }
        match (self.created.ask_real, is_real) {
            (true, None) => return Err(invalid("is_real is required: this session asks whether each ROI is real")),
            (false, Some(_)) => return Err(invalid("is_real must be omitted: this session has no synthetic items")),
            _ => {}
        }
        Ok(Response {
            position: served.position,
            item_id: self.created.items[served.position].item_id.clone(),
            token: served.token,
            class,
            is_real,
            at_ms,
        })
    }

    pub fn accept(&mut self, r: Response) {
        debug_assert_eq!(r.position, self.cursor());
        self.responses.push(r);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roi(id: &str, class: LesionClass, synthetic: bool) -> RoiImage {
        RoiImage {
            id: id.into(),
            patient_id: "p".into(),
            class,
            diameter_mm: if synthetic { 0.0 } else { 20.0 },
            pixels: vec![0.5; agf_core::dataset::ROI_PIXELS],
            provenance: if synthetic { Provenance::Synthetic { model: "m".into(), seed: 1 } } else { Provenance::Real },
        }
    }

    fn pool() -> ItemPool {
        let mut v: Vec<RoiImage> = (0..6).map(|i| roi(&format!("r{i}"), LesionClass::ALL[i % 3], false)).collect();
        v.extend((0..4).map(|i| roi(&format!("s{i}"), LesionClass::ALL[i % 3], true)));
        ItemPool::new(v).unwrap()
    }

    fn spec(real: usize, synthetic: usize) -> SessionSpec {
        SessionSpec { rater_id: "r".into(), real, synthetic, seed: 3 }
    }

    #[test]
    fn pool_rejects_augmented_and_duplicates() {
        let mut a = roi("a", LesionClass::Cyst, false);
        a.provenance = Provenance::Augmented { parent: "x".into() };
        assert!(ItemPool::new(vec![a]).is_err());
        assert!(ItemPool::new(vec![roi("a", LesionClass::Cyst, false), roi("a", LesionClass::Cyst, true)]).is_err());
        assert_eq!(pool().get("s2").unwrap().id, "s2");
        assert!(pool().get("zz").is_none());
    }

    #[test]
    fn insufficient_pool_is_rejected() {
        assert!(draw_items(&pool(), &spec(7, 0)).is_err());
        assert!(draw_items(&pool(), &spec(0, 5)).is_err());
        assert!(draw_items(&pool(), &spec(0, 0)).is_err());
    }

    #[test]
    fn submit_flow() {
        let items = draw_items(&pool(), &spec(2, 1)).unwrap();
        let mut s = Session::new("s1".into(), &spec(2, 1), items, 0).unwrap();
        assert!(s.created.ask_real);
        let t = s.next().unwrap().token;
        assert!(s.prepare(&t, LesionClass::Cyst, None, 1).is_err());
        let r = s.prepare(&t, LesionClass::Cyst, Some(true), 1).unwrap();
        s.accept(r);
        assert!(matches!(s.prepare(&t, LesionClass::Cyst, Some(true), 2), Err(RaterError::Conflict(_))));
        assert!(matches!(s.prepare("nope", LesionClass::Cyst, Some(true), 2), Err(RaterError::NotFound(_))));
        assert_eq!(s.item_for_token(&t), Some(s.created.items[0].item_id.as_str()));
    }

    #[test]
    fn classification_only_sessions_refuse_real_answers() {
        let items = draw_items(&pool(), &spec(3, 0)).unwrap();
        let s = Session::new("s1".into(), &spec(3, 0), items, 0).unwrap();
        assert!(!s.created.ask_real);
        let t = s.next().unwrap().token;
        assert!(s.prepare(&t, LesionClass::Cyst, Some(false), 1).is_err());
        assert!(s.prepare(&t, LesionClass::Cyst, None, 1).is_ok());
    }
}
