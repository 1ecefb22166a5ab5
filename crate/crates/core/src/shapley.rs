//! Exact and permutation-sampled Shapley attribution with an interventional
//! value function: v(S) is the mean prediction over background rows with the
//! instance's values substituted on S.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::Regressor;

/// Largest feature count for exhaustive 2^n enumeration.
pub const MAX_EXACT_FEATURES: usize = 20;
/// Largest feature count a coalition bitmask can address.
pub const MAX_FEATURES: usize = 63;
/// Largest n for which the sampler can enumerate all n! orderings.
const MAX_ENUMERATED_PERMUTATION_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSet {
    rows: Vec<Vec<f64>>,
}

impl BackgroundSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("background set is empty".into()));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Schema("background rows have differing lengths".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("background contains non-finite values".into()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }
}

/// A subset of players as a bitmask; bit `i` set means player `i` is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coalition(pub u64);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn full(n: usize) -> Self {
        Coalition(if n >= 64 { u64::MAX } else { (1u64 << n) - 1 })
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn with(self, i: usize) -> Self {
        Coalition(self.0 | 1 << i)
    }

    pub fn size(self) -> usize {
        self.0.count_ones() as usize
    }
}

/// |S|!(n-|S|-1)!/n!, computed as 1 / (n * C(n-1, |S|)).
pub fn coalition_weight(s_size: usize, n: usize) -> Result<f64> {
    if n == 0 || s_size >= n {
        return Err(Error::Domain(format!(
            "coalition size {s_size} is outside [0, {}] for {n} players",
            n.saturating_sub(1)
        )));
    }
    let k = s_size.min(n - 1 - s_size);
    let mut binom = 1.0f64;
    for j in 0..k {
        binom = binom * (n - 1 - j) as f64 / (j + 1) as f64;
    }
    Ok(1.0 / (n as f64 * binom.round()))
}

fn check_inputs(model: &dyn Regressor, instance: &[f64], background: &BackgroundSet) -> Result<usize> {
    let schema = model.schema();
    schema.check_input(instance)?;
    if background.width() != schema.len() {
        return Err(Error::Schema(format!(
            "background rows have {} values, model expects {}",
            background.width(),
            schema.len()
        )));
    }
    if schema.len() > MAX_FEATURES {
        return Err(Error::Domain(format!(
            "{} features exceed the {MAX_FEATURES}-feature coalition limit",
            schema.len()
        )));
    }
    Ok(schema.len())
}

fn value_unchecked(
    model: &dyn Regressor,
    instance: &[f64],
    background: &BackgroundSet,
    coalition: Coalition,
) -> Result<f64> {
    let mut merged = vec![0.0; instance.len()];
    let mut total = 0.0;
    for row in background.rows() {
        for (j, slot) in merged.iter_mut().enumerate() {
            *slot = if coalition.contains(j) { instance[j] } else { row[j] };
        }
        total += model.predict(&merged)?;
    }
    Ok(total / background.len() as f64)
}

/// Interventional coalition value v(S).
pub fn value_of(
    model: &dyn Regressor,
    instance: &[f64],
    background: &BackgroundSet,
    coalition: Coalition,
) -> Result<f64> {
    let n = check_inputs(model, instance, background)?;
    if coalition.0 & !Coalition::full(n).0 != 0 {
        return Err(Error::Domain("coalition names players outside the feature set".into()));
    }
    value_unchecked(model, instance, background, coalition)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub name: String,
    pub value: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub features: Vec<FeatureAttribution>,
    pub base_value: f64,
    pub prediction: f64,
    pub background_size: usize,
    pub method: Method,
}

impl Attribution {
    pub fn phis(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.phi).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.value).collect()
    }

    pub fn phi_of(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|f| f.name == name).map(|f| f.phi)
    }
}

fn assemble(
    model: &dyn Regressor,
    instance: &[f64],
    phi: Vec<f64>,
    base_value: f64,
    background: &BackgroundSet,
    method: Method,
) -> Result<Attribution> {
    let features = model
        .schema()
        .features
        .iter()
        .zip(instance)
        .zip(phi)
        .map(|((f, &value), phi)| FeatureAttribution {
            name: f.name.clone(),
            value,
            phi,
        })
        .collect();
    Ok(Attribution {
        features,
        base_value,
        prediction: model.predict(instance)?,
        background_size: background.len(),
        method,
    })
}

/// Exact attribution by enumerating all 2^n coalitions.
pub fn shapley(model: &dyn Regressor, instance: &[f64], background: &BackgroundSet) -> Result<Attribution> {
    let n = check_inputs(model, instance, background)?;
    if n > MAX_EXACT_FEATURES {
        return Err(Error::Domain(format!(
            "{n} features exceed the exact-enumeration limit of {MAX_EXACT_FEATURES}; \
             use shapley_sampled instead"
        )));
    }
    let n_subsets = 1usize << n;
    // Collecting from an indexed parallel iterator keeps table order fixed.
    let table: Vec<f64> = (0..n_subsets)
        .into_par_iter()
        .map(|mask| value_unchecked(model, instance, background, Coalition(mask as u64)))
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = (0..n).map(|s| coalition_weight(s, n)).collect::<Result<_>>()?;

    let phi = (0..n)
        .map(|i| {
            let bit = 1usize << i;
            (0..n_subsets)
                .filter(|mask| mask & bit == 0)
                .map(|mask| weights[mask.count_ones() as usize] * (table[mask | bit] - table[mask]))
                .sum()
        })
        .collect();
    assemble(model, instance, phi, table[0], background, Method::Exact)
}

fn for_each_permutation(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    if k == items.len() {
        return visit(items);
    }
    for j in k..items.len() {
        items.swap(k, j);
        for_each_permutation(items, k + 1, visit)?;
        items.swap(k, j);
    }
    Ok(())
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Monte Carlo estimate averaging marginal contributions over orderings.
///
/// When `n_permutations` is a multiple of n! (n <= 8) every ordering is
/// visited once, which reproduces the exact value.
pub fn shapley_sampled(
    model: &dyn Regressor,
    instance: &[f64],
    background: &BackgroundSet,
    n_permutations: usize,
    seed: u64,
) -> Result<Attribution> {
    let n = check_inputs(model, instance, background)?;
    if n_permutations == 0 {
        return Err(Error::Domain("n_permutations must be >= 1".into()));
    }
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut value = |c: Coalition| -> Result<f64> {
        if let Some(&v) = cache.get(&c.0) {
            return Ok(v);
        }
        let v = value_unchecked(model, instance, background, c)?;
        cache.insert(c.0, v);
        Ok(v)
    };

    let mut phi = vec![0.0; n];
    let mut visits = 0usize;
    let mut accumulate = |order: &[usize]| -> Result<()> {
        let mut s = Coalition::EMPTY;
        let mut v_s = value(s)?;
        for &i in order {
            let next = s.with(i);
            let v_next = value(next)?;
            phi[i] += v_next - v_s;
            s = next;
            v_s = v_next;
        }
        visits += 1;
        Ok(())
    };

    let enumerate_all =
        n <= MAX_ENUMERATED_PERMUTATION_FEATURES && n_permutations.is_multiple_of(factorial(n));
    if enumerate_all {
        let mut order: Vec<usize> = (0..n).collect();
        for_each_permutation(&mut order, 0, &mut accumulate)?;
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..n_permutations {
            order.shuffle(&mut rng);
            accumulate(&order)?;
        }
    }
    let phi: Vec<f64> = phi.into_iter().map(|p| p / visits as f64).collect();
    let base = value(Coalition::EMPTY)?;
    assemble(model, instance, phi, base, background, Method::Sampled)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Additivity {
    pub residual: f64,
    pub ok: bool,
}

/// Checks base + sum(phi) against the prediction.
pub fn verify_additivity(attr: &Attribution) -> Additivity {
    let total = attr.base_value + attr.features.iter().map(|f| f.phi).sum::<f64>();
    let residual = (total - attr.prediction).abs();
    Additivity {
        residual,
        ok: residual <= 1e-6 * attr.prediction.abs().max(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{Feature, FeatureSchema, FnRegressor};

    fn schema(n: usize) -> FeatureSchema {
        FeatureSchema::new(
            (1..=n).map(|i| Feature::new(&format!("x{i}"), "")).collect(),
            Feature::new("y", ""),
        )
        .unwrap()
    }

    fn bg(rows: Vec<Vec<f64>>) -> BackgroundSet {
        BackgroundSet::new(rows).unwrap()
    }

    fn attr_from(phis: &[f64], base: f64, prediction: f64) -> Attribution {
        Attribution {
            features: phis
                .iter()
                .enumerate()
                .map(|(i, &phi)| FeatureAttribution {
                    name: format!("f{i}"),
                    value: 0.0,
                    phi,
                })
                .collect(),
            base_value: base,
            prediction,
            background_size: 1,
            method: Method::Exact,
        }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(coalition_weight(0, 2).unwrap(), 0.5);
        assert!((coalition_weight(1, 3).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(matches!(coalition_weight(3, 3), Err(Error::Domain(_))));
        assert!(coalition_weight(0, 0).is_err());
    }

    #[test]
    fn weights_sum_to_one_over_subsets_excluding_a_player() {
        // Direct enumeration of the 2^(n-1) subsets of the other players,
        // with the weight written out with factorials.
        let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
        for n in 1..=10usize {
            let mut total = 0.0;
            let mut total_fact = 0.0;
            for mask in 0u32..(1 << (n - 1)) {
                let s = mask.count_ones() as usize;
                total += coalition_weight(s, n).unwrap();
                total_fact += fact(s) * fact(n - s - 1) / fact(n);
            }
            assert!((total - 1.0).abs() < 1e-12, "n={n}: {total}");
            assert!((total_fact - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn value_function_examples() {
        let model = FnRegressor::new(schema(2), |x: &[f64]| 2.0 * x[0] + 3.0 * x[1]);
        let b = bg(vec![vec![0.0, 0.0]]);
        let inst = [1.0, 1.0];
        assert_eq!(value_of(&model, &inst, &b, Coalition(0b01)).unwrap(), 2.0);
        assert_eq!(value_of(&model, &inst, &b, Coalition(0b10)).unwrap(), 3.0);
        assert_eq!(value_of(&model, &inst, &b, Coalition(0b11)).unwrap(), 5.0);
        let b2 = bg(vec![vec![4.0, -1.0]]);
        assert_eq!(value_of(&model, &inst, &b2, Coalition::EMPTY).unwrap(), 5.0);
        assert!(matches!(BackgroundSet::new(vec![]), Err(Error::Config(_))));
    }

    #[test]
    fn linear_example() {
        let model = FnRegressor::new(schema(2), |x: &[f64]| 2.0 * x[0] + 3.0 * x[1]);
        let a = shapley(&model, &[1.0, 1.0], &bg(vec![vec![0.0, 0.0]])).unwrap();
        assert_eq!(a.phis(), vec![2.0, 3.0]);
        assert_eq!((a.base_value, a.prediction), (0.0, 5.0));
        assert_eq!(a.method, Method::Exact);
        assert!(verify_additivity(&a).ok);
    }

    #[test]
    fn symmetric_and_dummy_features() {
        let model = FnRegressor::new(schema(3), |x: &[f64]| x[0] * x[1] + x[0] + x[1]);
        let b = bg(vec![vec![0.5, 0.5, 9.0], vec![-1.0, -1.0, 2.0]]);
        let a = shapley(&model, &[2.0, 2.0, 7.0], &b).unwrap();
        assert_eq!(a.features[0].phi, a.features[1].phi);
        assert_eq!(a.features[2].phi, 0.0);
    }

    #[test]
    fn too_many_features_is_refused() {
        let model = FnRegressor::new(schema(21), |x: &[f64]| x[0]);
        let err = shapley(&model, &[0.0; 21], &bg(vec![vec![0.0; 21]])).unwrap_err();
        assert!(err.to_string().contains("shapley_sampled"), "{err}");
        let a = shapley_sampled(&model, &[1.0; 21], &bg(vec![vec![0.0; 21]]), 10, 3).unwrap();
        assert!((a.features[0].phi - 1.0).abs() < 1e-12);
        assert!(a.features[1..].iter().all(|f| f.phi == 0.0));
    }

    #[test]
    fn sampler_covering_both_orders_is_exact() {
        let model = FnRegressor::new(schema(2), |x: &[f64]| x[0] * x[1] + x[0].sin());
        let b = bg(vec![vec![0.3, -0.2], vec![1.5, 0.7]]);
        let inst = [0.9, 2.0];
        let exact = shapley(&model, &inst, &b).unwrap();
        // Hand-written two-ordering average.
        let v = |c: u64| value_of(&model, &inst, &b, Coalition(c)).unwrap();
        let phi1 = 0.5 * ((v(0b01) - v(0)) + (v(0b11) - v(0b10)));
        let phi2 = 0.5 * ((v(0b10) - v(0)) + (v(0b11) - v(0b01)));
        let sampled = shapley_sampled(&model, &inst, &b, 2, 11).unwrap();
        for (e, (s, o)) in exact.phis().iter().zip(sampled.phis().iter().zip([phi1, phi2])) {
            assert!((e - o).abs() < 1e-12);
            assert!((s - o).abs() < 1e-12);
        }
        assert_eq!(sampled.method, Method::Sampled);
    }

    #[test]
    fn sampler_is_reproducible_and_respects_dummy() {
        let model = FnRegressor::new(schema(4), |x: &[f64]| x[0] * x[1] - x[2].powi(2));
        let b = bg(vec![vec![0.1, 0.2, 0.3, 0.4], vec![1.0, -1.0, 0.5, 2.0]]);
        let inst = [1.0, 2.0, 3.0, 4.0];
        let a = shapley_sampled(&model, &inst, &b, 7, 99).unwrap();
        let b2 = shapley_sampled(&model, &inst, &b, 7, 99).unwrap();
        assert_eq!(a, b2);
        assert_eq!(a.features[3].phi, 0.0);
        assert!(verify_additivity(&a).ok);
        assert!(shapley_sampled(&model, &inst, &b, 0, 1).is_err());
    }

    #[test]
    fn additivity_examples_from_reported_values() {
        let fig = attr_from(&[0.4, -0.3, 0.1, 0.1], 0.1, 0.4);
        let check = verify_additivity(&fig);
        assert!(check.ok && check.residual < 1e-15, "{check:?}");

        let phis = [680.369781, 33.052102, 18.838554, -113.826475, -98.523013];
        let reported = attr_from(&phis, 1544.673602, 2064.584551);
        let check = verify_additivity(&reported);
        assert!(check.ok && check.residual < 1e-9, "{check:?}");
        // A prediction 1.3e-5 away is still inside the relative tolerance.
        let check = verify_additivity(&attr_from(&phis, 1544.673602, 2064.584564));
        assert!(check.ok && (check.residual - 1.3e-5).abs() < 1e-9, "{check:?}");

        let off = attr_from(&[1.0], 0.0, 1.1);
        assert!(!verify_additivity(&off).ok);
    }

    #[test]
    fn mismatched_inputs_error() {
        let model = FnRegressor::new(schema(2), |x: &[f64]| x[0]);
        assert!(matches!(
            shapley(&model, &[1.0], &bg(vec![vec![0.0, 0.0]])),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            shapley(&model, &[1.0, 1.0], &bg(vec![vec![0.0]])),
            Err(Error::Schema(_))
        ));
    }
}
