//! Nonuniform scalar quantizer for the relay scale, trained by Lloyd-Max
//! iteration on an empirical sample.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const MAX_LLOYD_ITERS: usize = 10_000;
const REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaQuantizer {
    pub bits: u32,
    /// Strictly increasing reconstruction levels. There are `2^bits` of them
    /// unless the training sample had fewer distinct values, in which case
    /// each distinct value is its own level.
    pub codepoints: Vec<f64>,
    pub iterations: usize,
    /// Mean squared error on the training sample.
    pub distortion: f64,
    pub training_size: usize,
}

fn mse_on(sorted: &[f64], codepoints: &[f64]) -> f64 {
    let sum: f64 = sorted
        .iter()
        .map(|&x| (x - codepoints[nearest(codepoints, x)]).powi(2))
        .sum();
    sum / sorted.len() as f64
}

fn nearest(codepoints: &[f64], x: f64) -> usize {
    let i = codepoints.partition_point(|&c| c < x);
    if i == 0 {
        0
    } else if i == codepoints.len() || x - codepoints[i - 1] <= codepoints[i] - x {
        i - 1
    } else {
        i
    }
}

/// Trains a `2^bits`-level quantizer.
///
/// Levels start at the sample quantiles and alternate between midpoint
/// boundaries and cell centroids until the relative distortion change drops
/// below `1e-6`.
pub fn train_beta_quantizer(bits: u32, samples: &[f64]) -> Result<BetaQuantizer> {
    if bits == 0 || bits > 16 {
        return invalid(format!("quantizer bits must be in 1..=16, got {bits}"));
    }
    let levels = 1usize << bits;
    if samples.len() < levels {
        return invalid(format!(
            "{} training samples for {levels} levels",
            samples.len()
        ));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return invalid("training samples must be finite");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));

    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= levels {
        return Ok(BetaQuantizer {
            bits,
            codepoints: distinct,
            iterations: 0,
            distortion: 0.0,
            training_size: samples.len(),
        });
    }

    let n = sorted.len();
    let mut cp: Vec<f64> = (0..levels)
        .map(|i| sorted[((i as f64 + 0.5) / levels as f64 * n as f64) as usize])
        .collect();
    cp.dedup();
    // Quantile seeding can collide on heavy ties; fill gaps from the
    // remaining distinct values.
    let extra: Vec<f64> = distinct
        .iter()
        .copied()
        .filter(|v| !cp.contains(v))
        .collect();
    let missing = levels - cp.len();
    cp.extend(extra.into_iter().take(missing));
    cp.sort_by(|a, b| a.total_cmp(b));

    let mut distortion = mse_on(&sorted, &cp);
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERS {
        iterations += 1;
        let mut next = Vec::with_capacity(levels);
        let mut lo = 0usize;
        for i in 0..levels {
            let hi = if i + 1 == levels {
                n
            } else {
                let edge = 0.5 * (cp[i] + cp[i + 1]);
                sorted.partition_point(|&x| x <= edge)
            };
            if hi > lo {
                let cell = &sorted[lo..hi];
                next.push(cell.iter().sum::<f64>() / cell.len() as f64);
            } else {
                next.push(cp[i]);
            }
            lo = hi;
        }
        cp = next;
        let d = mse_on(&sorted, &cp);
        let change = (distortion - d).abs() / distortion.max(f64::MIN_POSITIVE);
        distortion = d;
        if change < REL_TOL {
            break;
        }
    }
    cp.dedup();
    Ok(BetaQuantizer {
        bits,
        codepoints: cp,
        iterations,
        distortion,
        training_size: samples.len(),
    })
}

impl BetaQuantizer {
    /// Nearest level and its index.
    pub fn quantize(&self, beta: f64) -> (usize, f64) {
        let i = nearest(&self.codepoints, beta);
        (i, self.codepoints[i])
    }

    /// Level for a received index; indices past the last level clamp to it.
    pub fn value(&self, index: usize) -> f64 {
        self.codepoints[index.min(self.codepoints.len() - 1)]
    }

    pub fn mse(&self, samples: &[f64]) -> f64 {
        let sum: f64 = samples
            .iter()
            .map(|&x| (x - self.quantize(x).1).powi(2))
            .sum();
        sum / samples.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_sample_collapses() {
        let q = train_beta_quantizer(3, &[0.7; 20]).unwrap();
        assert_eq!(q.codepoints, vec![0.7]);
        assert_eq!(q.quantize(0.7), (0, 0.7));
        assert_eq!(q.value(5), 0.7);
    }

    #[test]
    fn codepoint_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let q = train_beta_quantizer(4, &s).unwrap();
        for (i, &v) in q.codepoints.iter().enumerate() {
            assert_eq!(q.quantize(v), (i, v));
        }
        assert!(q.codepoints.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn too_few_samples() {
        assert!(train_beta_quantizer(3, &[1.0, 2.0]).is_err());
        assert!(train_beta_quantizer(0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn beats_uniform_quantizer_on_uniform_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<f64> = (0..20_000).map(|_| 1.0 + rng.random::<f64>()).collect();
        let q = train_beta_quantizer(6, &s).unwrap();
        // Independent reference: 64 equal cells on the sample range,
        // reconstructing at the cell mid-points.
        let (lo, hi) = s
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        let step = (hi - lo) / 64.0;
        let uniform: f64 = s
            .iter()
            .map(|&x| {
                let cell = (((x - lo) / step) as usize).min(63);
                (x - (lo + (cell as f64 + 0.5) * step)).powi(2)
            })
            .sum::<f64>()
            / s.len() as f64;
        assert!(
            q.mse(&s) <= uniform,
            "lloyd {} uniform {}",
            q.mse(&s),
            uniform
        );
    }

    #[test]
    fn lloyd_fixed_point_on_skewed_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..5000).map(|_| rng.random::<f64>().powi(3)).collect();
        let q = train_beta_quantizer(3, &s).unwrap();
        // One more centroid pass barely moves the levels.
        let mut sorted = s.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let cp = &q.codepoints;
        let mut lo = 0;
        for i in 0..cp.len() {
            let hi = if i + 1 == cp.len() {
                sorted.len()
            } else {
                sorted.partition_point(|&x| x <= 0.5 * (cp[i] + cp[i + 1]))
            };
            let cell = &sorted[lo..hi];
            let centroid = cell.iter().sum::<f64>() / cell.len() as f64;
            assert!(
                (centroid - cp[i]).abs() < 1e-3,
                "level {i}: {centroid} vs {}",
                cp[i]
            );
            lo = hi;
        }
    }
}
