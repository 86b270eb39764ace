//! Coverage-guaranteed subset selection ranked by a per-image priority score.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use thiserror::Error;

use crate::annotation::AnnotationDoc;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("budget {budget} cannot cover every category; uncovered: {uncovered:?}")]
    BudgetTooSmall { budget: usize, uncovered: Vec<u32> },
    #[error("reduction factor must be in (0, 1], got {0}")]
    InvalidReduction(String),
    #[error("entry {0} has no categories or fewer boxes than categories")]
    InvalidEntry(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub image_id: String,
    pub categories: BTreeSet<u32>,
    pub bbox_count: usize,
}

impl IndexEntry {
    pub fn new(image_id: impl Into<String>, categories: impl IntoIterator<Item = u32>, bbox_count: usize) -> Result<Self, SelectError> {
        let e = Self {
            image_id: image_id.into(),
            categories: categories.into_iter().collect(),
            bbox_count,
        };
        if e.categories.is_empty() || e.bbox_count < e.categories.len() {
            return Err(SelectError::InvalidEntry(e.image_id));
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    /// One entry per image that carries at least one annotation.
    pub fn from_doc(doc: &AnnotationDoc) -> Self {
        let mut acc: BTreeMap<&str, (BTreeSet<u32>, usize)> = BTreeMap::new();
        for a in &doc.annotations {
            let e = acc.entry(a.image_id.as_str()).or_default();
            e.0.insert(a.category_id);
            e.1 += 1;
        }
        let entries = acc
            .into_iter()
            .map(|(id, (categories, bbox_count))| IndexEntry {
                image_id: id.to_string(),
                categories,
                bbox_count,
            })
            .collect();
        Self { entries }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionParams {
    Budget(usize),
    /// Keep this fraction of the index, rounded up.
    Reduction(f64),
}

impl SelectionParams {
    pub fn budget_for(&self, n: usize) -> Result<usize, SelectError> {
        match *self {
            SelectionParams::Budget(b) => Ok(b),
            SelectionParams::Reduction(k) => {
                if !(k > 0.0 && k <= 1.0) {
                    return Err(SelectError::InvalidReduction(k.to_string()));
                }
                Ok(((n as f64) * k).ceil() as usize)
            }
        }
    }
}

/// Number of boxes plus number of distinct categories.
pub fn priority_score(entry: &IndexEntry) -> usize {
    entry.bbox_count + entry.categories.len()
}

/// Descending score, then ascending image id.
fn rank(a: &IndexEntry, b: &IndexEntry) -> Ordering {
    priority_score(b)
        .cmp(&priority_score(a))
        .then_with(|| a.image_id.cmp(&b.image_id))
}

/// Picks images so that every category is covered, then fills the budget by
/// rank. Coverage visits categories in ascending id order; a category already
/// covered by an earlier pick is skipped, otherwise its best-ranked image is
/// taken.
pub fn select_subset(index: &DatasetIndex, params: SelectionParams) -> Result<Vec<String>, SelectError> {
    let budget = params.budget_for(index.entries.len())?;
    let mut ranked: Vec<&IndexEntry> = index.entries.iter().collect();
    ranked.sort_by(|a, b| rank(a, b));

    let all_categories: BTreeSet<u32> = index.entries.iter().flat_map(|e| e.categories.iter().copied()).collect();
    let mut covered: HashSet<u32> = HashSet::new();
    let mut picked: HashSet<&str> = HashSet::new();
    let mut order: Vec<String> = Vec::new();
    for &c in &all_categories {
        if covered.contains(&c) {
            continue;
        }
        let best = ranked
            .iter()
            .find(|e| e.categories.contains(&c) && !picked.contains(e.image_id.as_str()))
            .expect("category comes from some entry");
        picked.insert(&best.image_id);
        covered.extend(best.categories.iter().copied());
        order.push(best.image_id.clone());
    }
    if order.len() > budget {
        // categories whose coverage pick falls beyond the budget
        let kept: HashSet<u32> = order[..budget]
            .iter()
            .flat_map(|id| {
                index
                    .entries
                    .iter()
                    .find(|e| &e.image_id == id)
                    .map(|e| e.categories.iter().copied().collect::<Vec<_>>())
                    .unwrap_or_default()
            })
            .collect();
        return Err(SelectError::BudgetTooSmall {
            budget,
            uncovered: all_categories.into_iter().filter(|c| !kept.contains(c)).collect(),
        });
    }
    for e in &ranked {
        if order.len() >= budget {
            break;
        }
        if picked.insert(&e.image_id) {
            order.push(e.image_id.clone());
        }
    }
    Ok(order)
}
