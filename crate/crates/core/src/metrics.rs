//! Conformation coverage/matching and ranking metrics.

use thiserror::Error;

use crate::geom3d::{kabsch_rmsd, GeomError};
use crate::moldata::Molecule3D;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no generated conformations")]
    EmptyGenerated,
    #[error("no reference conformations")]
    EmptyReferences,
    #[error("conformer {index} has {got} atoms, expected {expected}")]
    AtomCount {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("conformer {index} has a different atom order")]
    AtomOrder { index: usize },
    #[error("threshold must be non-negative and finite, got {0}")]
    Threshold(f64),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Coverage and matching of a generated conformer set against references.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatReport {
    /// Fraction of references whose best match is within `threshold`.
    pub coverage: f64,
    /// Mean over references of the best-match RMSD, in Å.
    pub matching: f64,
    pub threshold: f64,
    pub min_rmsd: Vec<f64>,
}

/// Compares every reference with every generated conformer by Kabsch RMSD.
pub fn cov_mat(
    references: &[Molecule3D],
    generated: &[Molecule3D],
    threshold: f64,
) -> Result<CovMatReport, MetricError> {
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(MetricError::Threshold(threshold));
    }
    let Some(first) = references.first() else {
        return Err(MetricError::EmptyReferences);
    };
    if generated.is_empty() {
        return Err(MetricError::EmptyGenerated);
    }
    for (index, m) in references.iter().chain(generated).enumerate() {
        if m.num_atoms() != first.num_atoms() {
            return Err(MetricError::AtomCount {
                index,
                expected: first.num_atoms(),
                got: m.num_atoms(),
            });
        }
        if m.atom_types != first.atom_types {
            return Err(MetricError::AtomOrder { index });
        }
    }
    let mut min_rmsd = Vec::with_capacity(references.len());
    for r in references {
        let mut best = f64::INFINITY;
        for g in generated {
            let (_, d) = kabsch_rmsd(&g.coords, &r.coords)?;
            best = best.min(d);
        }
        min_rmsd.push(best);
    }
    let n = min_rmsd.len() as f64;
    let covered = min_rmsd.iter().filter(|&&d| d <= threshold).count();
    Ok(CovMatReport {
        coverage: covered as f64 / n,
        matching: min_rmsd.iter().sum::<f64>() / n,
        threshold,
        min_rmsd,
    })
}

/// How per-molecule values are combined into one number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    Median,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            _ => Err(format!("expected mean or median, got {s:?}")),
        }
    }
}

/// Mean or median of `values`; `None` when empty.
pub fn aggregate(values: &[f64], how: Aggregation) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(match how {
        Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregation::Median => {
            let mut v = values.to_vec();
            v.sort_by(f64::total_cmp);
            let mid = v.len() / 2;
            if v.len() % 2 == 1 {
                v[mid]
            } else {
                0.5 * (v[mid - 1] + v[mid])
            }
        }
    })
}

/// Area under the ROC curve, ties counted as one half. `None` unless both
/// classes are present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut end = k + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[k]] {
            end += 1;
        }
        // average 1-based rank of the tie block
        let rank = (k + 1 + end) as f64 / 2.0;
        rank_sum += rank * idx[k..end].iter().filter(|&&i| labels[i]).count() as f64;
        k = end;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mol(coords: Vec<[f64; 3]>) -> Molecule3D {
        Molecule3D {
            atom_types: vec![6; coords.len()],
            coords,
        }
    }

    #[test]
    fn identical_sets_cover_fully() {
        let a = mol(vec![[0.0, 0.0, 0.0], [1.5, 0.0, 0.0], [1.5, 1.5, 0.3]]);
        let r = cov_mat(std::slice::from_ref(&a), std::slice::from_ref(&a), 0.1).unwrap();
        assert_eq!(r.coverage, 1.0);
        assert!(r.matching < 1e-7);
    }

    #[test]
    fn empty_generated_set_is_an_error() {
        let a = mol(vec![[0.0; 3]]);
        assert!(matches!(
            cov_mat(&[a], &[], 0.5),
            Err(MetricError::EmptyGenerated)
        ));
    }

    #[test]
    fn atom_order_must_match() {
        let a = mol(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let mut b = a.clone();
        b.atom_types[0] = 7;
        assert!(matches!(
            cov_mat(&[a], &[b], 0.5),
            Err(MetricError::AtomOrder { index: 1 })
        ));
    }

    #[test]
    fn auc_with_ties() {
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(
            roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]),
            Some(0.75)
        );
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(aggregate(&[3.0, 1.0, 2.0], Aggregation::Median), Some(2.0));
        assert_eq!(
            aggregate(&[4.0, 1.0, 2.0, 3.0], Aggregation::Median),
            Some(2.5)
        );
        assert_eq!(aggregate(&[1.0, 2.0], Aggregation::Mean), Some(1.5));
        assert_eq!(aggregate(&[], Aggregation::Mean), None);
        assert_eq!("median".parse::<Aggregation>(), Ok(Aggregation::Median));
        assert!("max".parse::<Aggregation>().is_err());
    }
}
