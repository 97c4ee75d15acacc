#![allow(dead_code)]

pub mod gradcheck;

/// Unbiased squared MMD by direct summation over all pairs.
pub fn brute_force_mmd(u: &[Vec<f64>], v: &[Vec<f64>], h: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 / (h * h)).exp()
    };
    let within = |s: &[Vec<f64>]| {
        let mut total = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    total += k(&s[i], &s[j]);
                }
            }
        }
        let m = s.len() as f64;
        total / (m * (m - 1.0))
    };
    let mut cross = 0.0;
    for a in u {
        for b in v {
            cross += k(a, b);
        }
    }
    within(u) + within(v) - 2.0 * cross / (u.len() * v.len()) as f64
}
