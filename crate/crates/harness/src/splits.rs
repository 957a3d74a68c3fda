//! Train/validation/test assignment for the evaluation schemes.

use std::collections::BTreeMap;

use nailforce_core::{Finger, SplitTag, TrialKey};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SplitScheme {
    /// One repetition of every participant/session/weight/surface
    /// combination is held out for testing.
    PerCombinationHoldout,
    /// Every trial on one surface is held out.
    SurfaceCross { surface: u8 },
    /// Every trial of one recording session is held out.
    TimeCross { session: u32 },
    /// Every trial of one participant is held out.
    ParticipantCross { participant: u32 },
    /// Per-combination holdout with one model shared by all participants,
    /// trained on a fraction of the training frames with a sparse GP.
    SingleModelAll { data_fraction: f64, inducing_fraction: f64 },
}

impl Default for SplitScheme {
    fn default() -> Self {
        SplitScheme::PerCombinationHoldout
    }
}

/// Fraction of the remaining repetitions of a combination moved to validation.
pub const VALIDATION_FRACTION: f64 = 0.25;

impl SplitScheme {
    pub fn validate(&self) -> Result<()> {
        if let SplitScheme::SingleModelAll {
            data_fraction,
            inducing_fraction,
        } = *self
        {
            for (name, v) in [("data", data_fraction), ("inducing", inducing_fraction)] {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::Config(format!("{name} fraction {v} outside (0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SplitScheme::PerCombinationHoldout => "per-combination-holdout",
            SplitScheme::SurfaceCross { .. } => "surface-cross",
            SplitScheme::TimeCross { .. } => "time-cross",
            SplitScheme::ParticipantCross { .. } => "participant-cross",
            SplitScheme::SingleModelAll { .. } => "single-model-all",
        }
    }

    /// Model a trial belongs to. Schemes that test on unseen participants or
    /// pool participants train one model per finger.
    pub fn model_group(&self, key: &TrialKey) -> ModelGroup {
        let participant = match self {
            SplitScheme::ParticipantCross { .. } | SplitScheme::SingleModelAll { .. } => None,
            _ => Some(key.participant),
        };
        ModelGroup {
            participant,
            finger: key.finger,
        }
    }

    fn held_out(&self, key: &TrialKey) -> Option<bool> {
        match *self {
            SplitScheme::PerCombinationHoldout | SplitScheme::SingleModelAll { .. } => None,
            SplitScheme::SurfaceCross { surface } => Some(key.surface_id == surface),
            SplitScheme::TimeCross { session } => Some(key.session == session),
            SplitScheme::ParticipantCross { participant } => Some(key.participant == participant),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelGroup {
    pub participant: Option<u32>,
    pub finger: Finger,
}

impl ModelGroup {
    pub fn label(&self) -> String {
        match self.participant {
            Some(p) => format!("p{p}-{}", self.finger.name()),
            None => format!("all-{}", self.finger.name()),
        }
    }
}

/// Participant, session, weight and surface: the unit whose repetitions
/// are distributed over the splits. Both fingers of a grasp share a fate.
type Combination = (u32, u32, u32, u8);

fn combination(k: &TrialKey) -> Combination {
    (k.participant, k.session, k.weight_g, k.surface_id)
}

/// Split tags for `keys`, one per key. With `validation`, a quarter
/// (rounded, at least one when two or more remain) of each combination's
/// non-test repetitions is tagged for validation.
pub fn make_splits(keys: &[TrialKey], scheme: &SplitScheme, validation: bool, rng: &mut impl Rng) -> Result<Vec<SplitTag>> {
    scheme.validate()?;
    if keys.is_empty() {
        return Err(Error::Infeasible("no trials".into()));
    }
    let mut reps: BTreeMap<Combination, Vec<u32>> = BTreeMap::new();
    for k in keys {
        let r = reps.entry(combination(k)).or_default();
        if !r.contains(&k.repetition) {
            r.push(k.repetition);
        }
    }
    reps.values_mut().for_each(|r| r.sort_unstable());

    let mut test_reps: BTreeMap<Combination, Vec<u32>> = BTreeMap::new();
    let mut val_reps: BTreeMap<Combination, Vec<u32>> = BTreeMap::new();
    let need = if validation { 3 } else { 2 };
    for (combo, r) in &reps {
        let sample_key = keys.iter().find(|k| combination(k) == *combo).expect("combination from keys");
        let mut remaining = r.clone();
        match scheme.held_out(sample_key) {
            None => {
                if r.len() < need {
                    return Err(Error::Infeasible(format!(
                        "combination {combo:?} has {} repetitions, needs {need}",
                        r.len()
                    )));
                }
                let i = rng.random_range(0..remaining.len());
                test_reps.insert(*combo, vec![remaining.remove(i)]);
            }
            Some(true) => {
                test_reps.insert(*combo, remaining.clone());
                remaining.clear();
            }
            Some(false) => {}
        }
        if validation && remaining.len() >= 2 {
            let n_val = ((VALIDATION_FRACTION * remaining.len() as f64).round() as usize).max(1);
            remaining.shuffle(rng);
            let mut v: Vec<u32> = remaining[..n_val].to_vec();
            v.sort_unstable();
            val_reps.insert(*combo, v);
        }
    }
    let tags: Vec<SplitTag> = keys
        .iter()
        .map(|k| {
            let c = combination(k);
            if test_reps.get(&c).is_some_and(|r| r.contains(&k.repetition)) {
                SplitTag::Test
            } else if val_reps.get(&c).is_some_and(|r| r.contains(&k.repetition)) {
                SplitTag::Validation
            } else {
                SplitTag::Train
            }
        })
        .collect();
    if !tags.contains(&SplitTag::Test) {
        return Err(Error::Infeasible(format!("{} selects no test trials", scheme.name())));
    }
    if !tags.contains(&SplitTag::Train) {
        return Err(Error::Infeasible(format!("{} leaves no training trials", scheme.name())));
    }
    Ok(tags)
}
