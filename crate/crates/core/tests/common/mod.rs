#![allow(dead_code)]

use medtransport::StructuralParams;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// ∫ f(c) N(c; mu, sd) dc by composite Simpson on mu ± 12 sd.
pub fn gauss_expect(f: impl Fn(f64) -> f64, mu: f64, sd: f64) -> f64 {
    let n = 20_000;
    let (lo, hi) = (mu - 12.0 * sd, mu + 12.0 * sd);
    let h = (hi - lo) / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let c = lo + i as f64 * h;
        let z = (c - mu) / sd;
        let dens = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let k = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        s += k * f(c) * dens;
    }
    s * h / 3.0
}

/// Closed-form mediator law under a*: C | a*, w ~ N(cr·ar·a* + shift(w), √(cr²σr² + σc²)).
pub fn quad_psi(p: &StructuralParams, a: f64, a_star: f64, w: u8) -> f64 {
    let shift = if w == 1 { p.coef_c_given_w1 } else { p.coef_c_given_w0 };
    let mu = p.coef_c_given_r * p.coef_r_given_a * a_star + shift;
    let sd = (p.coef_c_given_r.powi(2) * p.noise_sd_r.powi(2) + p.noise_sd_c.powi(2)).sqrt();
    let o = p.outcome_coefs;
    gauss_expect(|c| sigmoid(p.outcome_intercept + o.a * a + o.c * c + o.w * w as f64), mu, sd)
}

pub fn quad_sie(p: &StructuralParams, w: u8) -> f64 {
    quad_psi(p, 1.0, 1.0, w) - quad_psi(p, 1.0, 0.0, w)
}

pub fn quad_sde(p: &StructuralParams, w: u8) -> f64 {
    quad_psi(p, 1.0, 0.0, w) - quad_psi(p, 0.0, 0.0, w)
}

/// Quadrature truth for the default parameters, frozen: (sde, sie) per group.
pub const TRUTH_W0: (f64, f64) = (0.0212206, 0.1726879);
pub const TRUTH_W1: (f64, f64) = (0.0280830, 0.3213240);

pub fn gauss_density(c: f64, mu: f64, sd: f64) -> f64 {
    let z = (c - mu) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}
