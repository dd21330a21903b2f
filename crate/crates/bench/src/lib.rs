//! Seeded workloads shaped like a national health examination survey, shared
//! by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svyml::{DesignBuilder, DesignFrame};

/// `strata` strata of two PSUs with `per_psu` rows each. Columns: `age`,
/// `bmi`, `y` (0/1 outcome); features `age` and `bmi`.
pub fn survey_frame(strata: usize, per_psu: usize, seed: u64) -> DesignFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = strata * 2 * per_psu;
    let (mut w, mut s, mut p) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut age, mut bmi, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for h in 0..strata {
        for j in 0..2 {
            for _ in 0..per_psu {
                let a: f64 = rng.random_range(20.0..80.0);
                let b: f64 = rng.random_range(18.0..45.0);
                let risk = -7.5 + 0.06 * a + 0.08 * b;
                w.push((30_000.0 - 250.0 * a) * rng.random_range(0.7..1.3));
                s.push(h.to_string());
                p.push(j.to_string());
                age.push(a);
                bmi.push(b);
                y.push(if rng.random::<f64>() < 1.0 / (1.0 + (-risk).exp()) { 1.0 } else { 0.0 });
            }
        }
    }
    DesignBuilder::new(w, s, p)
        .values("age", &age)
        .values("bmi", &bmi)
        .values("y", &y)
        .outcome("y")
        .features(["age", "bmi"])
        .build()
        .expect("benchmark frame is well formed")
}

/// Labels, scores on a coarse grid (so ties occur) and weights.
pub fn scored(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y: Vec<f64> = (0..n).map(|_| f64::from(rng.random::<f64>() < 0.15)).collect();
    y[0] = 1.0;
    y[1] = 0.0;
    let s = (0..n).map(|_| rng.random_range(0..500) as f64 / 499.0).collect();
    let w = (0..n).map(|_| rng.random_range(1_000.0..60_000.0)).collect();
    (y, s, w)
}
