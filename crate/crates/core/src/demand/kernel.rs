//! Choice kernels: probabilities of picking each alternative (and the
//! outside option) given systematic values, for one chooser type.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};

use super::quadrature::{gauss_hermite, gauss_legendre};
use super::{Family, ShockSpec};

/// Half-width of the logistic integration domain, in scale units.
const LOGISTIC_HALF_WIDTH: f64 = 36.0;
/// Width of one Gauss–Legendre panel for logistic shocks.
const LOGISTIC_PANEL: f64 = 4.0;

#[derive(Debug, Clone)]
pub(crate) enum Kernel {
    Logit {
        sigma: f64,
    },
    /// `∫ f(e) h(e) de ≈ Σ weights[i] h(nodes[i])` with the density folded
    /// into the weights.
    Quadrature {
        family: Family,
        sigma: f64,
        nodes: Vec<f64>,
        weights: Vec<f64>,
    },
    /// Common random numbers: `draws` holds `count` rows of standardized
    /// shocks, one column per alternative with the outside option first.
    Sampled {
        sigma: f64,
        draws: Vec<f64>,
        count: usize,
    },
}

impl Kernel {
    /// Builds the kernel for a chooser facing `alternatives` options besides
    /// the outside option. `stream` separates the random streams of choosers.
    pub(crate) fn new(spec: &ShockSpec, alternatives: usize, stream: u64) -> Kernel {
        match *spec {
            ShockSpec::Logit { sigma }
            | ShockSpec::Iid {
                family: Family::Gumbel,
                sigma,
                ..
            } => Kernel::Logit { sigma },
            ShockSpec::Iid {
                family: Family::Normal,
                sigma,
                order,
            } => {
                let (t, w) = gauss_hermite(order);
                let norm = std::f64::consts::PI.sqrt();
                Kernel::Quadrature {
                    family: Family::Normal,
                    sigma,
                    nodes: t.iter().map(|t| std::f64::consts::SQRT_2 * t).collect(),
                    weights: w.iter().map(|w| w / norm).collect(),
                }
            }
            ShockSpec::Iid {
                family: Family::Logistic,
                sigma,
                order,
            } => {
                let (t, w) = gauss_legendre(order);
                let panels = (2.0 * LOGISTIC_HALF_WIDTH / LOGISTIC_PANEL) as usize;
                let half = LOGISTIC_PANEL / 2.0;
                let mut nodes = Vec::with_capacity(panels * order);
                let mut weights = Vec::with_capacity(panels * order);
                for p in 0..panels {
                    let mid = -LOGISTIC_HALF_WIDTH + half * (2 * p + 1) as f64;
                    for (t, w) in t.iter().zip(&w) {
                        let e = mid + half * t;
                        nodes.push(e);
                        weights.push(half * w * logistic_pdf(e));
                    }
                }
                Kernel::Quadrature {
                    family: Family::Logistic,
                    sigma,
                    nodes,
                    weights,
                }
            }
            ShockSpec::Montecarlo {
                family,
                sigma,
                draws,
                seed,
            } => {
                let width = alternatives + 1;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                let data = (0..draws * width)
                    .map(|_| sample_standard(family, &mut rng))
                    .collect();
                Kernel::Sampled {
                    sigma,
                    draws: data,
                    count: draws,
                }
            }
        }
    }

    pub(crate) fn sigma(&self) -> f64 {
        match self {
            Kernel::Logit { sigma }
            | Kernel::Quadrature { sigma, .. }
            | Kernel::Sampled { sigma, .. } => *sigma,
        }
    }

    /// Writes choice probabilities for each alternative given systematic
    /// values `w` (utility minus wait), and returns the outside probability.
    pub(crate) fn probabilities(&self, w: &[f64], out: &mut [f64]) -> f64 {
        debug_assert_eq!(w.len(), out.len());
        match self {
            Kernel::Logit { sigma } => logit(w, *sigma, out),
            Kernel::Quadrature {
                family,
                sigma,
                nodes,
                weights,
            } => quadrature(*family, *sigma, nodes, weights, w, out),
            Kernel::Sampled {
                sigma,
                draws,
                count,
            } => sampled(*sigma, draws, *count, w, out),
        }
    }
}

fn logit(w: &[f64], sigma: f64, out: &mut [f64]) -> f64 {
    let top = w.iter().fold(0.0f64, |a, &v| a.max(v / sigma));
    let base = (-top).exp();
    let mut total = base;
    for (o, &v) in out.iter_mut().zip(w) {
        *o = (v / sigma - top).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    base / total
}

fn quadrature(
    family: Family,
    sigma: f64,
    nodes: &[f64],
    weights: &[f64],
    w: &[f64],
    out: &mut [f64],
) -> f64 {
    // Index 0 is the outside option with value 0.
    let k = w.len() + 1;
    let value = |i: usize| if i == 0 { 0.0 } else { w[i - 1] / sigma };
    let mut probs = vec![0.0; k];
    for (&e, &wt) in nodes.iter().zip(weights) {
        for (a, p) in probs.iter_mut().enumerate() {
            let va = value(a);
            let mut log_prod = 0.0;
            for b in 0..k {
                if b != a {
                    log_prod += log_cdf(family, va - value(b) + e);
                }
            }
            *p += wt * log_prod.exp();
        }
    }
    let total: f64 = probs.iter().sum();
    for (o, p) in out.iter_mut().zip(&probs[1..]) {
        *o = p / total;
    }
    probs[0] / total
}

fn sampled(sigma: f64, draws: &[f64], count: usize, w: &[f64], out: &mut [f64]) -> f64 {
    let width = w.len() + 1;
    let mut hits = vec![0usize; width];
    for row in draws.chunks_exact(width).take(count) {
        let mut best = 0;
        let mut best_val = row[0];
        for a in 1..width {
            let val = w[a - 1] / sigma + row[a];
            if val > best_val {
                best = a;
                best_val = val;
            }
        }
        hits[best] += 1;
    }
    for (o, &h) in out.iter_mut().zip(&hits[1..]) {
        *o = h as f64 / count as f64;
    }
    hits[0] as f64 / count as f64
}

fn log_cdf(family: Family, z: f64) -> f64 {
    match family {
        Family::Normal => {
            if z > 0.0 {
                (-0.5 * libm::erfc(z / std::f64::consts::SQRT_2)).ln_1p()
            } else {
                (0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)).ln()
            }
        }
        Family::Logistic => -softplus(-z),
        Family::Gumbel => -(-z).exp(),
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic_pdf(e: f64) -> f64 {
    let a = (-e.abs()).exp();
    a / ((1.0 + a) * (1.0 + a))
}

fn sample_standard(family: Family, rng: &mut ChaCha8Rng) -> f64 {
    match family {
        Family::Normal => StandardNormal.sample(rng),
        Family::Gumbel => Gumbel::new(0.0, 1.0).expect("valid gumbel").sample(rng),
        Family::Logistic => {
            let u: f64 = rand::Rng::random_range(rng, f64::EPSILON..1.0);
            (u / (1.0 - u)).ln()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn iid(family: Family, order: usize) -> Kernel {
        Kernel::new(
            &ShockSpec::Iid {
                family,
                sigma: 1.0,
                order,
            },
            1,
            0,
        )
    }

    #[test]
    fn logit_two_options() {
        let mut out = [0.0];
        let p0 = logit(&[-1.0], 1.0, &mut out);
        assert_abs_diff_eq!(out[0], 0.2689414213699951, epsilon = 1e-15);
        assert_abs_diff_eq!(p0 + out[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn logit_survives_extreme_scale() {
        let mut out = [0.0, 0.0];
        let p0 = logit(&[2.0, 1.0], 2f64.powi(-20), &mut out);
        assert!(out[0] > 0.999_999 && p0 == 0.0 && out[1] == 0.0);
    }

    #[test]
    fn binary_symmetric_ties_split_evenly() {
        for family in [Family::Normal, Family::Logistic] {
            let mut out = [0.0];
            let p0 = iid(family, 32).probabilities(&[0.0], &mut out);
            assert_abs_diff_eq!(out[0], 0.5, epsilon = 1e-14);
            assert_abs_diff_eq!(p0, 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn binary_normal_matches_closed_form() {
        // Difference of two independent standard normals is N(0, 2).
        let k = iid(Family::Normal, 64);
        for v in [-3.0, -0.7, 0.4, 2.5] {
            let mut out = [0.0];
            k.probabilities(&[v], &mut out);
            let exact = 0.5 * libm::erfc(-v / 2.0);
            assert_abs_diff_eq!(out[0], exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn binary_logistic_matches_closed_form() {
        // Difference of two standard logistics has CDF with closed form
        // F(z) = e^z (e^z - 1 - z) / (e^z - 1)^2.
        let k = iid(Family::Logistic, 32);
        for v in [-3.0, -0.7f64, 0.4, 2.5] {
            let mut out = [0.0];
            k.probabilities(&[v], &mut out);
            let e = v.exp();
            let exact = e * (e - 1.0 - v) / ((e - 1.0) * (e - 1.0));
            assert_abs_diff_eq!(out[0], exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn gumbel_quadrature_reproduces_logit() {
        let nodes: Vec<f64> = (0..20001).map(|i| -10.0 + 50.0 * i as f64 / 20000.0).collect();
        let h = 50.0 / 20000.0;
        let weights: Vec<f64> = nodes
            .iter()
            .map(|&e| h * (-e - (-e).exp()).exp())
            .collect();
        let w = [0.3, -1.2, 0.9];
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        quadrature(Family::Gumbel, 1.0, &nodes, &weights, &w, &mut a);
        logit(&w, 1.0, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_cdf_tails_are_finite() {
        assert!(log_cdf(Family::Normal, 40.0).abs() < 1e-300);
        assert!(log_cdf(Family::Normal, -30.0).is_finite());
        assert_abs_diff_eq!(log_cdf(Family::Logistic, 800.0), 0.0);
        assert_abs_diff_eq!(log_cdf(Family::Logistic, -800.0), -800.0);
    }
}
