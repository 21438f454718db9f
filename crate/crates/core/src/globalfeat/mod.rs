//! Global descriptors (simplified CEDD and GIST) and distance ranking.

mod cedd;
mod gist;

use serde::{Deserialize, Serialize};

pub use cedd::{cedd, cedd_bin, CEDD_COLORS, CEDD_LEN, CEDD_TEXTURES, TEXTURE_NAMES};
pub use gist::{gist, GIST_GRID, GIST_LEN, GIST_ORIENTATIONS, GIST_SCALES};

use crate::evalmetrics::{Ranked, RankedList};
use crate::imagecore::Image;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalKind {
    Cedd,
    Gist,
}

impl GlobalKind {
    pub fn default_metric(self) -> Metric {
        match self {
            GlobalKind::Cedd => Metric::L1,
            GlobalKind::Gist => Metric::L2,
        }
    }

    pub fn extract(self, img: &Image) -> Result<GlobalVector> {
        Ok(match self {
            GlobalKind::Cedd => cedd(img)?,
            GlobalKind::Gist => gist(img)?,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            GlobalKind::Cedd => "cedd",
            GlobalKind::Gist => "gist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    L1,
    L2,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalVector {
    pub kind: GlobalKind,
    pub values: Vec<f64>,
}

/// Ascending distance, ties by ascending id. Scores are negated distances.
pub fn rank_by_global(query: &GlobalVector, collection: &[(String, GlobalVector)], metric: Metric) -> Result<RankedList> {
    let entries = collection
        .iter()
        .map(|(id, v)| {
            if v.kind != query.kind {
                return Err(Error::invalid(format!(
                    "cannot rank {} against {} vectors",
                    query.kind.name(),
                    v.kind.name()
                )));
            }
            if v.values.len() != query.values.len() {
                return Err(Error::mismatch(query.values.len(), v.values.len()));
            }
            Ok(Ranked { id: id.clone(), score: -metric.distance(&query.values, &v.values) })
        })
        .collect::<Result<Vec<_>>>()?;
    RankedList::by_score(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(kind: GlobalKind, values: &[f64]) -> GlobalVector {
        GlobalVector { kind, values: values.to_vec() }
    }

    #[test]
    fn self_first_and_ties_by_id() {
        let q = v(GlobalKind::Cedd, &[0.5, 0.5]);
        let coll = vec![
            ("c".to_string(), v(GlobalKind::Cedd, &[0.0, 1.0])),
            ("b".to_string(), v(GlobalKind::Cedd, &[0.0, 1.0])),
            ("a".to_string(), q.clone()),
        ];
        let r = rank_by_global(&q, &coll, Metric::L1).unwrap();
        let ids: Vec<&str> = r.ids().collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(r.entries()[0].score, 0.0);
    }

    #[test]
    fn mixed_kinds_rejected() {
        let q = v(GlobalKind::Cedd, &[1.0]);
        let coll = vec![("a".to_string(), v(GlobalKind::Gist, &[1.0]))];
        assert!(rank_by_global(&q, &coll, Metric::L1).is_err());
    }
}
