use rand::seq::index::sample;
use rand::Rng;

use super::{ContactAssignment, StabilityError};
use crate::physics::{BodyId, SceneSpec, Shape};

/// Every (object, other frame) pair that may carry a contact, in a fixed order:
/// per object its surfaces, robots, then objects with a larger index.
pub fn admissible_pairs(scene: &SceneSpec) -> Vec<(BodyId, BodyId)> {
    let mut out = Vec::new();
    for (o, obj) in scene.objects.iter().enumerate() {
        let a = BodyId::Object(o);
        out.extend((0..scene.static_surfaces.len()).map(|s| (a, BodyId::Surface(s))));
        out.extend((0..scene.robots.len()).map(|r| (a, BodyId::Robot(r))));
        for (b, other) in scene.objects.iter().enumerate().skip(o + 1) {
            let both_boxes = matches!(obj.shape, Shape::Box { .. }) && matches!(other.shape, Shape::Box { .. });
            if !both_boxes {
                out.push((a, BodyId::Object(b)));
            }
        }
    }
    out
}

/// Draws 1 to 3 distinct admissible pairs: the count uniformly, then a
/// uniform subset of that size.
pub fn sample_contact_assignment<R: Rng + ?Sized>(
    scene: &SceneSpec,
    rng: &mut R,
) -> Result<ContactAssignment, StabilityError> {
    sample_contact_assignment_with_count(scene, rng, None)
}

pub fn sample_contact_assignment_with_count<R: Rng + ?Sized>(
    scene: &SceneSpec,
    rng: &mut R,
    count: Option<usize>,
) -> Result<ContactAssignment, StabilityError> {
    let pairs = admissible_pairs(scene);
    if scene.objects.is_empty() || pairs.is_empty() {
        return Err(StabilityError::InvalidAssignment("scene has no free object".into()));
    }
    let max = pairs.len().min(3);
    let count = match count {
        Some(c) if (1..=max).contains(&c) => c,
        Some(c) => {
            return Err(StabilityError::InvalidAssignment(format!(
                "cannot draw {c} of {} admissible pairs",
                pairs.len()
            )))
        }
        None => rng.random_range(1..=max),
    };
    let mut picked = sample(rng, pairs.len(), count).into_vec();
    picked.sort_unstable();
    Ok(ContactAssignment { contacts: picked.into_iter().map(|i| pairs[i]).collect() })
}

impl ContactAssignment {
    pub fn count(&self) -> usize {
        self.contacts.len()
    }

    pub fn validate(&self, scene: &SceneSpec) -> Result<(), StabilityError> {
        let bad = |m: &str| Err(StabilityError::InvalidAssignment(m.into()));
        if !(1..=3).contains(&self.contacts.len()) {
            return bad("contact count must be between 1 and 3");
        }
        let admissible = admissible_pairs(scene);
        for (i, pair) in self.contacts.iter().enumerate() {
            if !admissible.contains(pair) {
                return bad("pair is not admissible");
            }
            if self.contacts[..i].contains(pair) {
                return bad("pairs must be distinct");
            }
        }
        Ok(())
    }
}
