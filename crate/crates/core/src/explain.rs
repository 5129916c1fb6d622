//! Exact Shapley values and SHAP-style explanations of fitted models.
//!
//! A model explanation is the Shapley value of the game whose value for a
//! coalition `S` is the mean prediction over a background set when the
//! features in `S` are taken from the explained instance and the rest from
//! each background row (interventional expectation), shifted so the empty
//! coalition is worth zero.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::models::{Regressor, TrainedModel};
use crate::stats::ZScore;
use crate::{Error, Result};

/// Largest agent count for which the 2^n enumeration is attempted.
pub const MAX_AGENTS: usize = 25;

/// A cooperative game stored as its full value table, indexed by coalition
/// bitmask (bit `i` set means agent `i` is in the coalition).
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionGame {
    n: usize,
    values: Vec<f64>,
}

impl CoalitionGame {
    /// Tabulates `v` once per coalition and shifts it so `v(∅) = 0`.
    pub fn from_fn<F: FnMut(u32) -> f64>(n: usize, mut v: F) -> Result<Self> {
        if n > MAX_AGENTS {
            return Err(Error::TooManyAgents(n));
        }
        let mut values: Vec<f64> = (0..1u32 << n).map(&mut v).collect();
        let empty = values[0];
        values.iter_mut().for_each(|x| *x -= empty);
        Ok(CoalitionGame { n, values })
    }

    pub fn from_table(n: usize, values: Vec<f64>) -> Result<Self> {
        if n > MAX_AGENTS {
            return Err(Error::TooManyAgents(n));
        }
        if values.len() != 1 << n {
            return Err(Error::LengthMismatch { left: values.len(), right: 1 << n });
        }
        Self::from_fn(n, |m| values[m as usize])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn value(&self, coalition: u32) -> f64 {
        self.values[coalition as usize]
    }
}

/// `φ_i = Σ_{S ⊆ N∖{i}} |S|!(n−|S|−1)!/n! · (v(S∪{i}) − v(S))`, in one pass
/// over the value table.
pub fn shapley_exact(game: &CoalitionGame) -> Result<Vec<f64>> {
    let n = game.n;
    if n > MAX_AGENTS {
        return Err(Error::TooManyAgents(n));
    }
    if n == 0 {
        return Ok(vec![]);
    }
    // |S|!(n-|S|-1)!/n! = 1 / (n · C(n-1, |S|))
    let mut binom = vec![1.0f64; n];
    for s in 1..n {
        binom[s] = binom[s - 1] * (n - s) as f64 / s as f64;
    }
    let weight: Vec<f64> = binom.iter().map(|c| 1.0 / (n as f64 * c)).collect();
    let mut phi = vec![0.0; n];
    for mask in 0..(1u32 << n) {
        let w = weight.get(mask.count_ones() as usize).copied().unwrap_or(0.0);
        let base = game.values[mask as usize];
        for (i, p) in phi.iter_mut().enumerate() {
            let bit = 1u32 << i;
            if mask & bit == 0 {
                *p += w * (game.values[(mask | bit) as usize] - base);
            }
        }
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub prediction: f64,
}

/// Interventional SHAP values for one instance.
pub fn shap_for_instance<M: Regressor + ?Sized>(
    model: &M,
    x: &[f64],
    background: &Matrix,
) -> Result<ShapExplanation> {
    let n = model.n_features();
    if x.len() != n {
        return Err(Error::LengthMismatch { left: x.len(), right: n });
    }
    if background.cols() != n {
        return Err(Error::LengthMismatch { left: background.cols(), right: n });
    }
    if background.rows() == 0 {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    if n > MAX_AGENTS {
        return Err(Error::TooManyAgents(n));
    }
    let mut composite = background.clone();
    let game = CoalitionGame::from_fn(n, |mask| {
        for i in 0..composite.rows() {
            let src = background.row(i);
            for (j, v) in composite.row_mut(i).iter_mut().enumerate() {
                *v = if mask & (1 << j) != 0 { x[j] } else { src[j] };
            }
        }
        let preds = model.predict(&composite);
        preds.iter().sum::<f64>() / preds.len() as f64
    })?;
    let base_value = {
        let p = model.predict(background);
        p.iter().sum::<f64>() / p.len() as f64
    };
    let phi = shapley_exact(&game)?;
    let prediction = model.predict(&Matrix::from_vec(1, n, x.to_vec())?)[0];
    Ok(ShapExplanation { base_value, phi, prediction })
}

/// Uniform subsample of `k` background rows, order preserved.
pub fn subsample_background(background: &Matrix, k: usize, seed: u64) -> Matrix {
    if k >= background.rows() {
        return background.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, background.rows(), k).into_vec();
    idx.sort_unstable();
    background.select_rows(&idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmRecord {
    pub instance: usize,
    pub feature: String,
    pub raw_value: f64,
    pub norm_value: f64,
    pub shap: f64,
}

/// One record per (instance, feature), grouped by feature in descending
/// mean |shap| with ties broken by feature name. `scaling` maps raw values
/// to the normalised values shown on plot colour scales; without it the
/// raw value is repeated.
pub fn beeswarm_export<M: Regressor + Sync + ?Sized>(
    model: &M,
    feature_names: &[String],
    scaling: Option<&[ZScore]>,
    x: &Matrix,
    background: &Matrix,
) -> Result<Vec<BeeswarmRecord>> {
    let n = model.n_features();
    if feature_names.len() != n {
        return Err(Error::LengthMismatch { left: feature_names.len(), right: n });
    }
    let explanations = (0..x.rows())
        .into_par_iter()
        .map(|i| shap_for_instance(model, x.row(i), background))
        .collect::<Result<Vec<_>>>()?;
    let order = rank_features(feature_names, &explanations);
    let mut out = Vec::with_capacity(x.rows() * n);
    for &j in &order {
        for (i, e) in explanations.iter().enumerate() {
            let raw = x[(i, j)];
            out.push(BeeswarmRecord {
                instance: i,
                feature: feature_names[j].clone(),
                raw_value: raw,
                norm_value: scaling.map_or(raw, |s| s[j].apply(raw)),
                shap: e.phi[j],
            });
        }
    }
    Ok(out)
}

pub fn beeswarm_for_model(model: &TrainedModel, x: &Matrix, background: &Matrix) -> Result<Vec<BeeswarmRecord>> {
    beeswarm_export(model, &model.feature_names, Some(&model.feature_scaling), x, background)
}

fn rank_features(names: &[String], explanations: &[ShapExplanation]) -> Vec<usize> {
    let m = explanations.len().max(1) as f64;
    let importance: Vec<f64> = (0..names.len())
        .map(|j| explanations.iter().map(|e| e.phi[j].abs()).sum::<f64>() / m)
        .collect();
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| {
        importance[b]
            .total_cmp(&importance[a])
            .then_with(|| names[a].cmp(&names[b]))
    });
    order
}

/// Mean |shap| per feature in beeswarm order.
pub fn feature_importance(records: &[BeeswarmRecord]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some((name, sum, count)) if *name == r.feature => {
                *sum += r.shap.abs();
                *count += 1;
            }
            _ => out.push((r.feature.clone(), r.shap.abs(), 1)),
        }
    }
    out.into_iter().map(|(f, s, c)| (f, s / c as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDependenceCurve {
    pub feature: String,
    pub grid: Vec<f64>,
    pub mean_prediction: Vec<f64>,
}

/// Mean prediction over the rows of `x` as feature `feature` is swept over
/// an evenly spaced grid spanning its observed range.
pub fn partial_dependence<M: Regressor + ?Sized>(
    model: &M,
    feature: usize,
    feature_name: &str,
    x: &Matrix,
    grid_size: usize,
) -> Result<PartialDependenceCurve> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter("partial dependence grid needs at least 2 points".into()));
    }
    if feature >= x.cols() {
        return Err(Error::InvalidParameter(format!("feature index {feature} out of range")));
    }
    let col = x.column(feature);
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "feature `{feature_name}` has a degenerate range [{lo}, {hi}]"
        )));
    }
    let step = (hi - lo) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size)
        .map(|g| if g + 1 == grid_size { hi } else { lo + step * g as f64 })
        .collect();
    let mut work = x.clone();
    let mean_prediction = grid
        .iter()
        .map(|&g| {
            for i in 0..work.rows() {
                work[(i, feature)] = g;
            }
            let p = model.predict(&work);
            p.iter().sum::<f64>() / p.len() as f64
        })
        .collect();
    Ok(PartialDependenceCurve {
        feature: feature_name.to_string(),
        grid,
        mean_prediction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_symmetric_game() {
        let g = CoalitionGame::from_fn(3, |m| m.count_ones() as f64).unwrap();
        assert_eq!(shapley_exact(&g).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn glove_game() {
        // agent 0 holds the left glove, agents 1 and 2 right gloves
        let g = CoalitionGame::from_fn(3, |m| ((m & 1 != 0) && (m & 0b110 != 0)) as u8 as f64).unwrap();
        let phi = shapley_exact(&g).unwrap();
        for (p, e) in phi.iter().zip([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dummy_agent_gets_exact_zero() {
        let table = [0.0, 0.3, 1.1, 2.0];
        let g = CoalitionGame::from_fn(3, |m| table[(m & 0b11) as usize]).unwrap();
        assert_eq!(shapley_exact(&g).unwrap()[2], 0.0);
    }

    #[test]
    fn refuses_too_many_agents() {
        assert!(matches!(CoalitionGame::from_fn(26, |_| 0.0), Err(Error::TooManyAgents(26))));
    }

    #[test]
    fn empty_coalition_shifted() {
        let g = CoalitionGame::from_fn(2, |m| 5.0 + m as f64).unwrap();
        assert_eq!(g.value(0), 0.0);
        assert_eq!(g.value(3), 3.0);
    }

    fn linear() -> (usize, impl Fn(&[f64]) -> f64 + Sync) {
        (3usize, |r: &[f64]| 2.0 * r[0] - 1.5 * r[1] + 0.0 * r[2] + 4.0)
    }

    fn background() -> Matrix {
        Matrix::from_rows(&[[0.0, 1.0, 5.0], [2.0, -1.0, 3.0], [1.0, 0.0, 4.0], [3.0, 4.0, 0.0]]).unwrap()
    }

    #[test]
    fn linear_closed_form_and_efficiency() {
        let m = linear();
        let bg = background();
        let x = [1.7, 0.2, -3.0];
        let e = shap_for_instance(&m, &x, &bg).unwrap();
        let means: Vec<f64> = (0..3).map(|j| bg.column(j).iter().sum::<f64>() / 4.0).collect();
        for (j, w) in [2.0, -1.5, 0.0].iter().enumerate() {
            assert!((e.phi[j] - w * (x[j] - means[j])).abs() < 1e-9);
        }
        assert!((e.base_value + e.phi.iter().sum::<f64>() - e.prediction).abs() < 1e-9);
        let at_mean = shap_for_instance(&m, &means, &bg).unwrap();
        assert!(at_mean.phi.iter().all(|p| p.abs() < 1e-9));
    }

    #[test]
    fn shap_feature_mismatch() {
        assert!(shap_for_instance(&linear(), &[1.0, 2.0], &background()).is_err());
    }

    #[test]
    fn beeswarm_ordering() {
        let names: Vec<String> = ["c", "b", "a"].iter().map(|s| s.to_string()).collect();
        let bg = background();
        let recs = beeswarm_export(&linear(), &names, None, &bg, &bg).unwrap();
        assert_eq!(recs.len(), 12);
        let order: Vec<_> = feature_importance(&recs).into_iter().map(|(f, _)| f).collect();
        // feature 0 (w=2, spread 3) vs feature 1 (w=-1.5, spread 5)
        assert_eq!(order, vec!["b", "c", "a"]);
        let constant = (3usize, |_: &[f64]| 7.0);
        let recs = beeswarm_export(&constant, &names, None, &bg, &bg).unwrap();
        assert!(recs.iter().all(|r| r.shap == 0.0));
        let order: Vec<_> = feature_importance(&recs).into_iter().map(|(f, _)| f).collect();
        assert_eq!(order, vec!["a", "b", "c"]);
        assert_eq!(recs[0].raw_value, recs[0].norm_value);
    }

    #[test]
    fn beeswarm_carries_normalized_values() {
        let names: Vec<String> = ["x0", "x1", "x2"].iter().map(|s| s.to_string()).collect();
        let scaling = [ZScore { mean: 1.0, std: 2.0 }; 3];
        let bg = background();
        let recs = beeswarm_export(&linear(), &names, Some(&scaling), &bg, &bg).unwrap();
        for r in &recs {
            assert_eq!(r.norm_value, (r.raw_value - 1.0) / 2.0);
        }
    }

    #[test]
    fn partial_dependence_linear() {
        let bg = background();
        let c = partial_dependence(&linear(), 1, "x1", &bg, 6).unwrap();
        assert_eq!(c.grid.first(), Some(&-1.0));
        assert_eq!(c.grid.last(), Some(&4.0));
        assert!(c.grid.windows(2).all(|w| w[1] > w[0]));
        for w in c.grid.windows(2).zip(c.mean_prediction.windows(2)) {
            let slope = (w.1[1] - w.1[0]) / (w.0[1] - w.0[0]);
            assert!((slope + 1.5).abs() < 1e-9);
        }
        let flat = partial_dependence(&linear(), 2, "x2", &bg, 4).unwrap();
        assert!(flat.mean_prediction.iter().all(|v| (v - flat.mean_prediction[0]).abs() < 1e-12));
        let degenerate = Matrix::from_rows(&[[1.0, 1.0, 1.0], [2.0, 1.0, 3.0]]).unwrap();
        assert!(partial_dependence(&linear(), 1, "x1", &degenerate, 4).is_err());
        assert!(partial_dependence(&linear(), 0, "x0", &bg, 1).is_err());
    }

    #[test]
    fn subsample_is_deterministic() {
        let bg = background();
        let a = subsample_background(&bg, 2, 5);
        assert_eq!(a.rows(), 2);
        assert_eq!(a, subsample_background(&bg, 2, 5));
        assert_eq!(subsample_background(&bg, 10, 5), bg);
    }
}
