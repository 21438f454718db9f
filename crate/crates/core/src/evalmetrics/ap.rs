use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub id: String,
    pub score: f64,
}

/// Result list, best first. Ids are unique.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    entries: Vec<Ranked>,
}

impl RankedList {
    pub fn new(entries: Vec<Ranked>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid(format!("duplicate id '{}' in ranking", e.id)));
            }
        }
        Ok(Self { entries })
    }

    /// Ranking from ids alone; scores count down from the list length.
    pub fn from_ids<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Result<Self> {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let n = ids.len();
        Self::new(
            ids.into_iter()
                .enumerate()
                .map(|(i, id)| Ranked { id, score: (n - i) as f64 })
                .collect(),
        )
    }

    /// Sorts by descending score, breaking ties (and NaN) by ascending id.
    pub fn by_score(mut entries: Vec<Ranked>) -> Result<Self> {
        // adding 0.0 folds -0.0 into 0.0 so they tie
        entries.sort_by(|a, b| (b.score + 0.0).total_cmp(&(a.score + 0.0)).then_with(|| a.id.cmp(&b.id)));
        Self::new(entries)
    }

    pub fn entries(&self) -> &[Ranked] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }
}

/// Relevance grades for one query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgments {
    pub query_id: String,
    pub good: BTreeSet<String>,
    pub ok: BTreeSet<String>,
    pub junk: BTreeSet<String>,
}

impl Judgments {
    pub fn new(
        query_id: impl Into<String>,
        good: impl IntoIterator<Item = String>,
        ok: impl IntoIterator<Item = String>,
        junk: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let j = Self {
            query_id: query_id.into(),
            good: good.into_iter().collect(),
            ok: ok.into_iter().collect(),
            junk: junk.into_iter().collect(),
        };
        j.validate()?;
        Ok(j)
    }

    pub fn validate(&self) -> Result<()> {
        let overlap = self
            .good
            .intersection(&self.ok)
            .chain(self.good.intersection(&self.junk))
            .chain(self.ok.intersection(&self.junk))
            .next();
        match overlap {
            Some(id) => Err(Error::Data(format!(
                "query '{}': '{id}' appears in more than one relevance set",
                self.query_id
            ))),
            None => Ok(()),
        }
    }

    pub fn is_relevant(&self, id: &str) -> bool {
        id != self.query_id && (self.good.contains(id) || self.ok.contains(id))
    }

    /// good ∪ ok, minus the query itself.
    pub fn relevant(&self) -> BTreeSet<&str> {
        self.good
            .iter()
            .chain(&self.ok)
            .map(String::as_str)
            .filter(|id| *id != self.query_id)
            .collect()
    }

    fn ignored(&self, id: &str) -> bool {
        id == self.query_id || self.junk.contains(id)
    }
}

pub type RelevanceJudgments = BTreeMap<String, Judgments>;

/// Non-interpolated average precision.
///
/// Junk images and the query itself are dropped from the ranking before
/// scoring. Relevant images that never appear contribute zero precision.
pub fn average_precision(ranking: &RankedList, judg: &Judgments) -> Result<f64> {
    let relevant = judg.relevant();
    if relevant.is_empty() {
        return Err(Error::Data(format!("query '{}' has no relevant images", judg.query_id)));
    }
    let mut rank = 0usize;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for id in ranking.ids().filter(|id| !judg.ignored(id)) {
        rank += 1;
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / rank as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Arithmetic mean of per-query AP values, as a fraction in `[0, 1]`.
pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::Data("mAP over zero valid queries".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Percent with two decimals, the form used in result tables.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ap_hand_example() {
        let j = Judgments::new("q", set(&["a", "b"]), set(&[]), set(&[])).unwrap();
        let r = RankedList::from_ids(["a", "n", "b"]).unwrap();
        assert!((average_precision(&r, &j).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking_and_ok_counts_as_relevant() {
        let j = Judgments::new("q", set(&["a"]), set(&["b"]), set(&[])).unwrap();
        let r = RankedList::from_ids(["b", "a", "x", "y"]).unwrap();
        assert_eq!(average_precision(&r, &j).unwrap(), 1.0);
    }

    #[test]
    fn junk_and_query_are_skipped() {
        let j = Judgments::new("q", set(&["r"]), set(&[]), set(&["j"])).unwrap();
        assert_eq!(average_precision(&RankedList::from_ids(["j", "r"]).unwrap(), &j).unwrap(), 1.0);
        assert_eq!(average_precision(&RankedList::from_ids(["q", "r"]).unwrap(), &j).unwrap(), 1.0);
    }

    #[test]
    fn missing_relevant_contributes_zero() {
        let j = Judgments::new("q", set(&["a", "b"]), set(&[]), set(&[])).unwrap();
        let r = RankedList::from_ids(["a", "x"]).unwrap();
        assert_eq!(average_precision(&r, &j).unwrap(), 0.5);
    }

    #[test]
    fn empty_relevant_set_is_error() {
        let j = Judgments::new("q", set(&["q"]), set(&[]), set(&["z"])).unwrap();
        assert!(average_precision(&RankedList::from_ids(["a"]).unwrap(), &j).is_err());
    }

    #[test]
    fn overlapping_sets_rejected() {
        assert!(Judgments::new("q", set(&["a"]), set(&["a"]), set(&[])).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(RankedList::from_ids(["a", "a"]).is_err());
    }

    #[test]
    fn map_and_formatting() {
        assert_eq!(format_percent(mean_average_precision(&[0.7839]).unwrap()), "78.39");
        assert_eq!(format_percent(mean_average_precision(&[1.0, 0.0]).unwrap()), "50.00");
        assert!((mean_average_precision(&[0.3, 0.3, 0.3]).unwrap() - 0.3).abs() < 1e-15);
        assert!(mean_average_precision(&[]).is_err());
    }
}
