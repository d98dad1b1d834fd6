use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{ClassId, Volume};

/// Assignment of query slices to support slices by relative depth.
///
/// Both volumes are restricted to the slices that contain the class; each
/// restricted range is split into `n_sections` contiguous sections and every
/// query slice in section `k` is paired with the middle support slice of
/// section `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceMatchPlan {
    pub n_sections: usize,
    pub class_id: ClassId,
    /// Section index → support slice index.
    pub support_slices: Vec<usize>,
    /// Query slice index → section index.
    pub query_sections: BTreeMap<usize, usize>,
}

impl SliceMatchPlan {
    pub fn support_for(&self, query_slice: usize) -> Option<usize> {
        self.query_sections
            .get(&query_slice)
            .map(|&k| self.support_slices[k])
    }

    /// `(query slice, support slice)` pairs in query order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.query_sections
            .iter()
            .map(|(&q, &k)| (q, self.support_slices[k]))
    }
}

fn slices_with(volume: &Volume, class_id: ClassId) -> Vec<usize> {
    (0..volume.depth())
        .filter(|&z| volume.slice_contains(z, class_id))
        .collect()
}

pub fn build_slice_match(
    support: &Volume,
    query: &Volume,
    class_id: ClassId,
    n_sections: usize,
) -> Result<SliceMatchPlan> {
    if n_sections == 0 {
        return Err(Error::config("n_sections must be positive"));
    }
    let s = slices_with(support, class_id);
    let q = slices_with(query, class_id);
    for (zs, v) in [(&s, support), (&q, query)] {
        if zs.is_empty() {
            return Err(Error::Eval(format!(
                "class {class_id} absent from volume {}",
                v.id
            )));
        }
    }
    let n = s.len();
    let support_slices = (0..n_sections)
        .map(|k| {
            let centre = ((2 * k + 1) * n) / (2 * n_sections);
            s[centre.min(n - 1)]
        })
        .collect();
    let m = q.len();
    let query_sections = q
        .iter()
        .enumerate()
        .map(|(i, &z)| (z, i * n_sections / m))
        .collect();
    Ok(SliceMatchPlan {
        n_sections,
        class_id,
        support_slices,
        query_sections,
    })
}
