//! K-fold cross-fitting. Nuisances for each fold come from networks trained
//! on the other folds; `K = 1` falls back to a single full-sample fit.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{arms_present, Dataset};
use crate::error::{Error, Result};
use crate::firststage::{predict_nuisances, train_outcome, train_propensity, NetHyper, NuisanceEstimates};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossfitSpec {
    pub k: usize,
    pub stratify: bool,
}

impl Default for CrossfitSpec {
    fn default() -> Self {
        Self { k: 5, stratify: true }
    }
}

impl CrossfitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidSpec("crossfit.k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn rows_in(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn rows_outside(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignment {
            s[f] += 1;
        }
        s
    }
}

/// Seeded permutation split. With `strata`, each stratum is shuffled on its
/// own and dealt round-robin, the deal counter running on across strata, so
/// both total fold sizes and per-stratum counts differ by at most one.
pub fn split_folds(n: usize, k: usize, seed: u64, strata: Option<&[u8]>) -> Result<FoldPlan> {
    if k == 0 || k > n {
        return Err(Error::InvalidSpec(format!("cannot split {n} rows into {k} folds")));
    }
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    match strata {
        Some(s) => {
            if s.len() != n {
                return Err(Error::Data(format!("{} strata labels for {n} rows", s.len())));
            }
            let mut labels: Vec<u8> = s.to_vec();
            labels.sort_unstable();
            labels.dedup();
            for label in labels {
                let mut group: Vec<usize> = (0..n).filter(|&i| s[i] == label).collect();
                group.shuffle(&mut rng);
                order.extend(group);
            }
        }
        None => {
            order.extend(0..n);
            order.shuffle(&mut rng);
        }
    }
    let mut assignment = vec![0; n];
    for (c, &i) in order.iter().enumerate() {
        assignment[i] = c % k;
    }
    Ok(FoldPlan { k, assignment, seed })
}

/// Assembles out-of-fold predictions. `fit_predict(train_rows, predict_rows)`
/// must return predictions for `predict_rows` in order.
pub fn crossfit_with<F>(data: &Dataset, plan: &FoldPlan, fit_predict: F) -> Result<NuisanceEstimates>
where
    F: Fn(usize, &[usize], &[usize]) -> Result<NuisanceEstimates> + Sync,
{
    if plan.n() != data.n() {
        return Err(Error::Data(format!("fold plan covers {} rows, data has {}", plan.n(), data.n())));
    }
    if plan.k == 1 {
        let all: Vec<usize> = (0..data.n()).collect();
        let mut out = fit_predict(0, &all, &all)?;
        out.fold_id = Some(vec![0; data.n()]);
        return Ok(out);
    }
    for fold in 0..plan.k {
        let train = plan.rows_outside(fold);
        if arms_present(train.iter().map(|&i| data.a[i])).is_err() {
            let arm = if train.iter().all(|&i| data.a[i] == 0) { "treated" } else { "control" };
            return Err(Error::FoldArm { fold, arm });
        }
    }
    let parts: Vec<(Vec<usize>, NuisanceEstimates)> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let held = plan.rows_in(fold);
            let preds = fit_predict(fold, &plan.rows_outside(fold), &held)?;
            if preds.len() != held.len() {
                return Err(Error::Data(format!("fold {fold}: {} predictions for {} rows", preds.len(), held.len())));
            }
            Ok((held, preds))
        })
        .collect::<Result<_>>()?;

    let n = data.n();
    let (mut q1, mut q0, mut g) = (vec![0.0; n], vec![0.0; n], vec![0.5; n]);
    for (held, preds) in &parts {
        for (j, &i) in held.iter().enumerate() {
            q1[i] = preds.q1_hat[j];
            q0[i] = preds.q0_hat[j];
            g[i] = preds.g_hat[j];
        }
    }
    let mut out = NuisanceEstimates::new(q1, q0, g)?;
    out.fold_id = Some(plan.assignment.clone());
    Ok(out)
}

/// Network nuisances, cross-fitted per `plan`. Fold `j` trains with seed
/// `derive(hyper.seed, j)` when `K ≥ 2`; `K = 1` uses `hyper.seed` unchanged.
pub fn crossfit_nuisances(data: &Dataset, hyper: &NetHyper, plan: &FoldPlan) -> Result<NuisanceEstimates> {
    hyper.validate()?;
    let out = crossfit_with(data, plan, |fold, train, held| {
        let mut h = hyper.clone();
        if plan.k > 1 {
            h.seed = seed::derive(hyper.seed, fold as u64);
        }
        let outcome = train_outcome(data, &h, train)?;
        let propensity = train_propensity(data, &h, train)?;
        predict_nuisances(&outcome, &propensity, data, held, h.clamp_eps)
    })?;
    Ok(out.with_diagnostics(data))
}

/// Where nuisances come from.
#[derive(Clone, Debug, PartialEq)]
pub enum NuisanceSource {
    /// True `g, Q¹, Q⁰` of a synthetic dataset.
    Oracle,
    Networks { hyper: NetHyper, crossfit: CrossfitSpec },
}

impl NuisanceSource {
    pub fn estimate(&self, data: &Dataset, split_seed: u64) -> Result<NuisanceEstimates> {
        match self {
            Self::Oracle => NuisanceEstimates::oracle(data),
            Self::Networks { hyper, crossfit } => {
                crossfit.validate()?;
                let strata = crossfit.stratify.then_some(data.a.as_slice());
                let plan = split_folds(data.n(), crossfit.k, split_seed, strata)?;
                crossfit_nuisances(data, hyper, &plan)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use std::sync::Mutex;

    #[test]
    fn even_split() {
        let plan = split_folds(10, 5, 3, None).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2; 5]);
    }

    #[test]
    fn stratified_exact() {
        let a = [1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let plan = split_folds(12, 3, 9, Some(&a)).unwrap();
        for f in 0..3 {
            let treated = plan.rows_in(f).iter().filter(|&&i| a[i] == 1).count();
            assert_eq!(treated, 2);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(split_folds(57, 4, 11, None).unwrap(), split_folds(57, 4, 11, None).unwrap());
        assert_ne!(split_folds(57, 4, 11, None).unwrap(), split_folds(57, 4, 12, None).unwrap());
    }

    #[test]
    fn bad_fold_counts() {
        assert!(split_folds(3, 0, 0, None).is_err());
        assert!(split_folds(3, 4, 0, None).is_err());
    }

    fn toy() -> Dataset {
        Dataset::new(Array2::from_shape_fn((4, 1), |(i, _)| i as f64), vec![1, 0, 1, 0], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
    }

    #[test]
    fn no_leakage_and_row_order() {
        let data = toy();
        let plan = FoldPlan { k: 2, assignment: vec![0, 0, 1, 1], seed: 0 };
        let seen = Mutex::new(Vec::new());
        let out = crossfit_with(&data, &plan, |fold, train, held| {
            seen.lock().unwrap().push((fold, train.to_vec(), held.to_vec()));
            // Predict the mean training outcome, tagged by the fold's first row.
            let m = train.iter().map(|&i| data.y[i]).sum::<f64>() / train.len() as f64;
            NuisanceEstimates::new(vec![m; held.len()], held.iter().map(|&i| i as f64).collect(), vec![0.5; held.len()])
        })
        .unwrap();
        for (fold, train, held) in seen.into_inner().unwrap() {
            assert!(train.iter().all(|i| !held.contains(i)), "fold {fold} leaked");
        }
        assert_eq!(out.q0_hat, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(out.q1_hat, vec![3.5, 3.5, 1.5, 1.5]);
        assert_eq!(out.fold_id, Some(vec![0, 0, 1, 1]));
    }

    #[test]
    fn single_arm_complement_names_fold() {
        let data = toy();
        let plan = FoldPlan { k: 2, assignment: vec![1, 0, 1, 0], seed: 0 };
        let err = crossfit_with(&data, &plan, |_, _, h| NuisanceEstimates::new(vec![0.0; h.len()], vec![0.0; h.len()], vec![0.5; h.len()]))
            .unwrap_err();
        match err {
            Error::FoldArm { fold: 0, arm: "control" } => {}
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn oracle_passthrough() {
        let mut spec = crate::dgp::DgpSpec::small_design();
        spec.n = 200;
        let data = crate::dgp::generate(&spec).unwrap();
        let got = NuisanceSource::Oracle.estimate(&data, 0).unwrap();
        let t = data.truth.as_ref().unwrap();
        assert_eq!((&got.q1_hat, &got.q0_hat, &got.g_hat), (&t.q1, &t.q0, &t.g));
    }

    proptest! {
        #[test]
        fn balanced_partition(n in 2usize..200, k in 1usize..10, seed: u64, a in proptest::collection::vec(0u8..2, 200)) {
            prop_assume!(k <= n);
            let strata = &a[..n];
            let plan = split_folds(n, k, seed, Some(strata)).unwrap();
            let sizes = plan.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let treated: Vec<usize> = (0..k).map(|f| plan.rows_in(f).iter().filter(|&&i| strata[i] == 1).count()).collect();
            prop_assert!(treated.iter().max().unwrap() - treated.iter().min().unwrap() <= 1);
        }
    }
}
