#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use svyml::{DesignBuilder, DesignFrame};

/// Clustered frame with `strata` strata of `psus` PSUs holding `rows` rows
/// each. Variables: `y` continuous with a PSU effect, `b` binary, `x1`
/// related to `b`, `x2` pure noise, `g` a three-level category. Weights are
/// drawn from [0.5, 3].
pub fn clustered_frame(strata: usize, psus: usize, rows: usize, seed: u64) -> DesignFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut w, mut s, mut c) = (Vec::new(), Vec::new(), Vec::new());
    let (mut y, mut b, mut x1, mut x2, mut g) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for h in 0..strata {
        for j in 0..psus {
            let u: f64 = rng.sample(StandardNormal);
            for _ in 0..rows {
                let e: f64 = rng.sample(StandardNormal);
                let xa: f64 = rng.sample(StandardNormal);
                let xb: f64 = rng.sample(StandardNormal);
                let p = 1.0 / (1.0 + (-(-0.5 + 0.8 * xa + 0.3 * u)).exp());
                w.push(rng.random_range(0.5..3.0));
                s.push(format!("{}", h + 1));
                c.push(format!("{}", j + 1));
                y.push(10.0 + 2.0 * u + e + h as f64);
                b.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
                x1.push(xa);
                x2.push(xb);
                g.push(rng.random_range(0..3u32) as f64);
            }
        }
    }
    DesignBuilder::new(w, s, c)
        .values("y", &y)
        .values("b", &b)
        .values("x1", &x1)
        .values("x2", &x2)
        .values("g", &g)
        .outcome("b")
        .features(["x1", "x2"])
        .build()
        .unwrap()
}

pub fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
