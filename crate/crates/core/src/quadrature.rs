//! Composite Gauss-Legendre quadrature.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Roots of `P_n` by Newton iteration from the Chebyshev-like guess.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
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

    /// Integral of `f` over `[a, b]` split into `pieces` equal subintervals.
    pub fn composite<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64, pieces: usize) -> f64 {
        let h = (b - a) / pieces as f64;
        let mut total = 0.0;
        for p in 0..pieces {
            let lo = a + h * p as f64;
            let mid = lo + 0.5 * h;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + 0.5 * h * x);
            }
            total += 0.5 * h * s;
        }
        total
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// Outcome of [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    /// Total nodes of the final (finest) rule.
    pub nodes: usize,
    pub converged: bool,
}

pub const NODES_PER_PIECE: usize = 64;
pub const START_PIECES: usize = 16;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;
const MAX_PIECES: usize = 1 << 14;

/// Composite 64-point rule over 16 pieces, doubling the piece count until
/// successive estimates agree to [`RELATIVE_TOLERANCE`].
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> Quadrature {
    integrate_from(&mut f, a, b, START_PIECES)
}

/// As [`integrate`], with a minimum total node count.
pub fn integrate_with_nodes<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, min_nodes: usize) -> Quadrature {
    let pieces = min_nodes.div_ceil(NODES_PER_PIECE).max(START_PIECES);
    integrate_from(&mut f, a, b, pieces)
}

fn integrate_from<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, mut pieces: usize) -> Quadrature {
    let rule = GaussLegendre::new(NODES_PER_PIECE);
    let mut prev = rule.composite(&mut *f, a, b, pieces);
    loop {
        let next_pieces = pieces * 2;
        let next = rule.composite(&mut *f, a, b, next_pieces);
        let scale = next.abs().max(f64::MIN_POSITIVE);
        let agreed = (next - prev).abs() <= RELATIVE_TOLERANCE * scale;
        if agreed || next_pieces >= MAX_PIECES {
            return Quadrature { value: next, nodes: next_pieces * NODES_PER_PIECE, converged: agreed };
        }
        prev = next;
        pieces = next_pieces;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_nodes_are_symmetric() {
        for n in [1, 2, 5, 16, 64] {
            let r = GaussLegendre::new(n);
            assert!((r.weights().iter().sum::<f64>() - 2.0).abs() < 1e-13, "n={n}");
            for i in 0..n {
                assert!((r.nodes()[i] + r.nodes()[n - 1 - i]).abs() < 1e-14);
            }
            assert!(r.nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn three_point_rule_matches_table() {
        let r = GaussLegendre::new(3);
        assert!((r.nodes()[2] - (0.6f64).sqrt()).abs() < 1e-15);
        assert!((r.weights()[1] - 8.0 / 9.0).abs() < 1e-15);
        assert!((r.weights()[0] - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let r = GaussLegendre::new(5);
        for deg in 0..10 {
            let got = r.composite(|x| x.powi(deg), 0.0, 1.0, 1);
            let want = 1.0 / (deg as f64 + 1.0);
            assert!((got - want).abs() < 1e-14, "deg={deg}");
        }
    }

    #[test]
    fn gaussian_integrals() {
        let q = integrate(|x| (-x * x / 2.0).exp(), -8.0, 8.0);
        assert!(q.converged);
        assert!((q.value - (2.0 * PI).sqrt()).abs() < 1e-12);
        let q = integrate(|r| (-r * r / 2.0).exp() * 2.0 * PI * r, 0.0, 8.0);
        assert!((q.value - 2.0 * PI).abs() < 1e-10);
        assert!(q.nodes >= 1024);
    }

    #[test]
    fn minimum_node_count_is_honoured() {
        let q = integrate_with_nodes(|x| x.cos(), 0.0, 1.0, 10_000);
        assert!(q.nodes >= 10_000);
        assert!((q.value - 1f64.sin()).abs() < 1e-13);
    }
}
