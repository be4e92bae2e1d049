//! Candidate model families built from Lasso coefficient magnitudes.

use std::collections::BTreeSet;
use std::io::Write;

use crate::data::PredictorSet;
use crate::error::{Error, Result};
use crate::solver::{PathResult, PenalizedFit};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilySource {
    /// Prefix chain of one Lasso fit.
    SingleLambda,
    /// Union of prefix chains over a λ path.
    UnionOverPath,
    /// Lasso supports themselves, one per grid point (used by the Fan–Tang rule).
    PathSupports,
}

/// Ordered list of candidate models; the empty model is always first.
#[derive(Clone, Debug, PartialEq)]
pub struct NestedFamily {
    pub models: Vec<PredictorSet>,
    pub source: FamilySource,
}

impl NestedFamily {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn contains(&self, w: &PredictorSet) -> bool {
        self.models.iter().any(|m| m == w)
    }

    pub fn largest_size(&self) -> usize {
        self.models.iter().map(PredictorSet::len).max().unwrap_or(0)
    }

    /// One row per model: `size,indices`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["size", "indices"])?;
        for m in &self.models {
            w.write_record([m.len().to_string(), m.joined()])?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<family csv>".into(),
            source,
        })
    }
}

/// 1-based indices of the nonzero coefficients by decreasing magnitude,
/// ties broken by ascending index.
pub fn order_support(fit: &PenalizedFit) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fit.coefficients.len())
        .filter(|&j| fit.coefficients[j] != 0.0)
        .collect();
    idx.sort_by(|&a, &b| {
        fit.coefficients[b]
            .abs()
            .total_cmp(&fit.coefficients[a].abs())
            .then(a.cmp(&b))
    });
    idx.into_iter().map(|j| j + 1).collect()
}

/// `{∅, {j1}, {j1, j2}, …}` for the given order.
pub fn nested_from_order(order: &[usize]) -> Result<NestedFamily> {
    let mut seen = BTreeSet::new();
    let mut models = Vec::with_capacity(order.len() + 1);
    models.push(PredictorSet::empty());
    for &j in order {
        if j == 0 {
            return Err(Error::InvalidArgument("predictor index 0 in order".into()));
        }
        if !seen.insert(j) {
            return Err(Error::InvalidArgument(format!("duplicate index {j} in order")));
        }
        models.push(seen.iter().copied().collect());
    }
    Ok(NestedFamily {
        models,
        source: FamilySource::SingleLambda,
    })
}

/// Union of the prefix chains of every fit on the path, plus the empty
/// model, sorted by size then lexicographically.
pub fn union_families(path: &PathResult) -> NestedFamily {
    let mut all: BTreeSet<(usize, PredictorSet)> = BTreeSet::new();
    all.insert((0, PredictorSet::empty()));
    for fit in &path.fits {
        let chain = nested_from_order(&order_support(fit)).expect("support order has no duplicates");
        for m in chain.models {
            all.insert((m.len(), m));
        }
    }
    NestedFamily {
        models: all.into_iter().map(|(_, m)| m).collect(),
        source: FamilySource::UnionOverPath,
    }
}

/// Distinct Lasso supports along the path, plus the empty model.
pub fn path_supports(path: &PathResult) -> NestedFamily {
    let mut all: BTreeSet<(usize, PredictorSet)> = BTreeSet::new();
    all.insert((0, PredictorSet::empty()));
    for fit in &path.fits {
        let s = fit.support();
        all.insert((s.len(), s));
    }
    NestedFamily {
        models: all.into_iter().map(|(_, m)| m).collect(),
        source: FamilySource::PathSupports,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossSpec;
    use proptest::prelude::*;

    fn fit_with(coefs: Vec<f64>) -> PenalizedFit {
        PenalizedFit {
            lambda: 0.1,
            intercept: 0.0,
            coefficients: coefs,
            objective: 0.0,
            converged: true,
            iterations: 1,
            separated: false,
        }
    }

    fn set(v: &[usize]) -> PredictorSet {
        PredictorSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn order_by_magnitude() {
        assert_eq!(order_support(&fit_with(vec![0.0, 3.0, -5.0, 0.0, 1.0])), vec![3, 2, 5]);
        assert!(order_support(&fit_with(vec![0.0; 4])).is_empty());
        let mut c = vec![0.0; 8];
        c[6] = -1.5;
        c[1] = 1.5;
        assert_eq!(order_support(&fit_with(c)), vec![2, 7]);
    }

    #[test]
    fn prefixes() {
        let f = nested_from_order(&[3, 2, 5]).unwrap();
        assert_eq!(
            f.models,
            vec![PredictorSet::empty(), set(&[3]), set(&[2, 3]), set(&[2, 3, 5])]
        );
        assert_eq!(nested_from_order(&[]).unwrap().models, vec![PredictorSet::empty()]);
        assert!(nested_from_order(&[1, 2, 1]).is_err());
    }

    fn path_of(fits: Vec<PenalizedFit>) -> PathResult {
        PathResult {
            fits,
            loss: LossSpec::Logistic,
            lambda_max: 1.0,
        }
    }

    #[test]
    fn union_over_path() {
        let path = path_of(vec![fit_with(vec![1.0, 0.0]), fit_with(vec![2.0, 1.0])]);
        let f = union_families(&path);
        assert_eq!(f.models, vec![PredictorSet::empty(), set(&[1]), set(&[1, 2])]);
        assert_eq!(f.source, FamilySource::UnionOverPath);

        let one = union_families(&path_of(vec![fit_with(vec![0.5, -2.0, 0.0])]));
        let twice = union_families(&path_of(vec![
            fit_with(vec![0.5, -2.0, 0.0]),
            fit_with(vec![0.5, -2.0, 0.0]),
        ]));
        assert_eq!(one.models, twice.models);
    }

    #[test]
    fn family_csv() {
        let f = nested_from_order(&[3, 1]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "size,indices\n0,\n1,3\n2,\"1,3\"\n");
    }

    proptest! {
        #[test]
        fn union_members_are_prefixes(raw in prop::collection::vec(prop::collection::vec(-3i32..=3, 6), 1..6)) {
            let fits: Vec<PenalizedFit> = raw
                .iter()
                .map(|c| fit_with(c.iter().map(|&v| v as f64 * 0.7).collect()))
                .collect();
            let orders: Vec<Vec<usize>> = fits.iter().map(order_support).collect();
            let path = path_of(fits);
            let fam = union_families(&path);
            prop_assert_eq!(&fam.models[0], &PredictorSet::empty());
            let bound = 1 + orders.iter().map(Vec::len).sum::<usize>();
            prop_assert!(fam.len() <= bound);
            for m in &fam.models {
                let is_prefix = orders.iter().any(|o| {
                    o.len() >= m.len() && &o[..m.len()].iter().copied().collect::<PredictorSet>() == m
                });
                prop_assert!(m.is_empty() || is_prefix);
            }
        }

        #[test]
        fn chain_has_k_plus_one_members(order in Just((1..=12usize).collect::<Vec<_>>()).prop_shuffle(), k in 0usize..=12) {
            let f = nested_from_order(&order[..k]).unwrap();
            prop_assert_eq!(f.len(), k + 1);
            for w in f.models.windows(2) {
                prop_assert!(w[0].is_subset(&w[1]) && w[1].len() == w[0].len() + 1);
            }
        }
    }
}
