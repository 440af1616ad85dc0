//! Gauss-Hermite rules for integrals of the form `∫ exp(-x²) f(x) dx`, and
//! Gauss-Legendre rules on `[-1, 1]`.

use std::sync::OnceLock;

use crate::error::{invalid, Error, Result};

/// Node count used by the reference policy unless told otherwise.
pub const DEFAULT_NODES: usize = 32;

const MAX_NEWTON_ITERATIONS: usize = 100;

/// Beyond this the smallest Hermite weights underflow.
pub const MAX_HERMITE_NODES: usize = 180;

/// Hermite roots and Christoffel weights, nodes in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    // ln(w_q) + x_q^2, used when the weight function is divided back out.
    log_unweighted: Vec<f64>,
}

impl QuadratureRule {
    /// Builds an `n`-node rule by Newton refinement of the roots of the
    /// orthonormal Hermite polynomial, using the three-term recurrence.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_HERMITE_NODES {
            return invalid(format!(
                "Hermite rule needs 1 to {MAX_HERMITE_NODES} nodes, got {n}"
            ));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let nf = n as f64;
        let mut z = 0.0_f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut derivative = 0.0;
            let mut converged = false;
            for _ in 0..MAX_NEWTON_ITERATIONS {
                let (mut p1, mut p2) = (pim4, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                derivative = (2.0 * nf).sqrt() * p2;
                let step = p1 / derivative;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NumericalFailure(format!(
                    "Hermite root {i} of degree {n} did not converge"
                )));
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (derivative * derivative);
            weights[n - 1 - i] = weights[i];
        }
        // Roots were produced from the largest down.
        nodes.reverse();
        weights.reverse();
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let log_unweighted = nodes
            .iter()
            .zip(&weights)
            .map(|(&x, &w)| w.ln() + x * x)
            .collect();
        Ok(Self {
            nodes,
            weights,
            log_unweighted,
        })
    }

    /// The shared 32-node rule.
    pub fn default_rule() -> &'static QuadratureRule {
        static RULE: OnceLock<QuadratureRule> = OnceLock::new();
        RULE.get_or_init(|| {
            QuadratureRule::gauss_hermite(DEFAULT_NODES).expect("32-node Hermite rule converges")
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `ln(w_q) + x_q²` for each node.
    pub fn log_unweighted(&self) -> &[f64] {
        &self.log_unweighted
    }

    /// `Σ w_q f(x_q)`, approximating `∫ exp(-x²) f(x) dx`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Node count of the shared Legendre rule.
pub const LEGENDRE_NODES: usize = 12;

/// Legendre roots and weights on `[-1, 1]`, nodes in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LegendreRule {
    /// Newton iteration on `P_n` from the Tricomi starting guesses.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("quadrature needs at least one node");
        }
        let nf = n as f64;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut derivative = 0.0;
            let mut converged = false;
            for _ in 0..MAX_NEWTON_ITERATIONS {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
                }
                derivative = nf * (z * p1 - p2) / (z * z - 1.0);
                let step = p1 / derivative;
                z -= step;
                if step.abs() <= 1e-15 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NumericalFailure(format!(
                    "Legendre root {i} of degree {n} did not converge"
                )));
            }
            let w = 2.0 / ((1.0 - z * z) * derivative * derivative);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    /// The shared 12-node rule.
    pub fn default_rule() -> &'static LegendreRule {
        static RULE: OnceLock<LegendreRule> = OnceLock::new();
        RULE.get_or_init(|| {
            LegendreRule::gauss_legendre(LEGENDRE_NODES).expect("12-node Legendre rule converges")
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫_lo^hi f(x) dx` with the rule mapped onto `[lo, hi]`.
    pub fn integrate(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * f(mid + half * u))
            .sum::<f64>()
    }
}
