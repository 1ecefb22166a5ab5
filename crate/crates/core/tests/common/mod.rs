//! Independent reference implementations and random stub models shared by the
//! property and acceptance tests.
#![allow(dead_code)]

use imlc_core::surrogate::{Feature, FeatureSchema};
use imlc_core::testbed::Disturbance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn schema(n: usize) -> FeatureSchema {
    FeatureSchema::new(
        (0..n).map(|i| Feature::new(&format!("x{i}"), "")).collect(),
        Feature::new("y", ""),
    )
    .unwrap()
}

/// Random smooth function with linear, pairwise and saturating terms.
#[derive(Debug, Clone)]
pub struct Poly {
    pub linear: Vec<f64>,
    pub pairwise: Vec<(usize, usize, f64)>,
    pub squash: f64,
    pub bias: f64,
}

impl Poly {
    pub fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut pairwise = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.5) {
                    pairwise.push((i, j, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        Self {
            linear: (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            pairwise,
            squash: rng.gen_range(-2.0..2.0),
            bias: rng.gen_range(-1.0..1.0),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(a, v)| a * v).sum();
        let pair: f64 = self.pairwise.iter().map(|&(i, j, b)| b * x[i] * x[j]).sum();
        let s: f64 = x.iter().sum();
        self.bias + lin + pair + self.squash * s.tanh()
    }
}

pub fn random_rows(n_rows: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n_rows)
        .map(|_| (0..width).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean of `f` over the background with the features in `present` taken
/// from `instance`.
fn coalition_value(f: &dyn Fn(&[f64]) -> f64, instance: &[f64], bg: &[Vec<f64>], present: &[bool]) -> f64 {
    let total: f64 = bg
        .iter()
        .map(|row| {
            let x: Vec<f64> = (0..instance.len())
                .map(|i| if present[i] { instance[i] } else { row[i] })
                .collect();
            f(&x)
        })
        .sum();
    total / bg.len() as f64
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Shapley values as the average marginal contribution over all n! orderings.
pub fn permutation_shapley(f: &dyn Fn(&[f64]) -> f64, instance: &[f64], bg: &[Vec<f64>]) -> Vec<f64> {
    let n = instance.len();
    let perms = permutations(n);
    let mut phi = vec![0.0; n];
    for order in &perms {
        let mut present = vec![false; n];
        let mut before = coalition_value(f, instance, bg, &present);
        for &i in order {
            present[i] = true;
            let after = coalition_value(f, instance, bg, &present);
            phi[i] += after - before;
            before = after;
        }
    }
    phi.iter().map(|p| p / perms.len() as f64).collect()
}

pub fn background_mean(f: &dyn Fn(&[f64]) -> f64, bg: &[Vec<f64>]) -> f64 {
    bg.iter().map(|r| f(r)).sum::<f64>() / bg.len() as f64
}

/// Random disturbance in the summer operating range.
pub fn disturbance(rng: &mut ChaCha8Rng) -> Disturbance {
    Disturbance {
        oa_temp: rng.gen_range(20.0..40.0),
        oa_radiation: rng.gen_range(0.0..800.0),
        occupancy: f64::from(rng.gen_range(0u8..=5)),
    }
}

/// Linear temperature and quadratic power stubs with random coefficients.
#[derive(Debug, Clone, Copy)]
pub struct PlantStub {
    pub a: [f64; 5],
    pub b: [f64; 5],
    pub c: f64,
}

impl PlantStub {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            a: [
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.0..0.1),
                rng.gen_range(0.0..0.002),
                rng.gen_range(0.0..0.2),
            ],
            b: [
                rng.gen_range(-400.0..0.0),
                rng.gen_range(0.0..600.0),
                rng.gen_range(0.0..60.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..100.0),
            ],
            c: rng.gen_range(-5.0..5.0),
        }
    }

    pub fn fx(&self, x: &[f64]) -> f64 {
        self.c + self.a.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }

    pub fn fy(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.b.iter().zip(x).map(|(b, v)| b * v).sum();
        lin + 3.0 * (x[1] - 22.0).powi(2)
    }
}

pub struct OracleResult {
    pub u1: f64,
    pub u2: f64,
    pub cost: f64,
    pub n_candidates: usize,
}

/// Brute force over the 22..=26 °C grid; ties go to the larger pair.
pub fn brute_force_mpc(
    stub: &PlantStub,
    zone_temp: f64,
    d: [Disturbance; 2],
    limits: [f64; 2],
) -> OracleResult {
    let over = |p: f64, l: f64| if p > l { (p - l) * (p - l) } else { 0.0 };
    let feat = |u: f64, x: f64, d: &Disturbance| [u, x, d.oa_temp, d.oa_radiation, d.occupancy];
    let mut best = OracleResult {
        u1: f64::NAN,
        u2: f64::NAN,
        cost: f64::INFINITY,
        n_candidates: 0,
    };
    for u1 in [22.0, 23.0, 24.0, 25.0, 26.0] {
        for u2 in [22.0, 23.0, 24.0, 25.0, 26.0] {
            let x1 = stub.fx(&feat(u1, zone_temp, &d[0]));
            let y1 = stub.fy(&feat(u1, x1, &d[0])).max(0.0);
            let x2 = stub.fx(&feat(u2, x1, &d[1]));
            let y2 = stub.fy(&feat(u2, x2, &d[1])).max(0.0);
            let cost = y1 + over(y1, limits[0]) + y2 + over(y2, limits[1]);
            best.n_candidates += 1;
            let better = cost < best.cost || (cost == best.cost && (u1, u2) > (best.u1, best.u2));
            if better {
                best = OracleResult {
                    u1,
                    u2,
                    cost,
                    n_candidates: best.n_candidates,
                };
            }
        }
    }
    best
}

fn collect_numbers(v: &serde_json::Value, out: &mut Vec<f64>) {
    match v {
        serde_json::Value::Number(n) => out.extend(n.as_f64()),
        serde_json::Value::Array(a) => a.iter().for_each(|x| collect_numbers(x, out)),
        serde_json::Value::Object(o) => o.values().for_each(|x| collect_numbers(x, out)),
        _ => {}
    }
}

/// Numerals in `text` that match no number of `source` at their printed
/// precision. Identifier digits (after `+`, `_` or a letter) are skipped.
pub fn untraced_numbers(text: &str, source: &serde_json::Value) -> Vec<String> {
    let mut known = Vec::new();
    collect_numbers(source, &mut known);
    let re = regex::Regex::new(r"(?:^|[\s(=:,*])(-?[0-9]+(?:\.([0-9]+))?)").unwrap();
    re.captures_iter(text)
        .filter_map(|cap| {
            let s = cap[1].to_owned();
            let prec = cap.get(2).map_or(0, |m| m.as_str().len());
            let unsigned = s.trim_start_matches('-');
            let hit = known.iter().any(|v| {
                let f = format!("{v:.prec$}");
                f == s || f.trim_start_matches('-') == unsigned && unsigned.trim_matches(['0', '.']).is_empty()
            });
            (!hit).then_some(s)
        })
        .collect()
}
