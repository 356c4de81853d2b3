//! Chebyshev interpolants used to memoize smooth one-dimensional maps.

#[derive(Debug, Clone)]
pub struct Chebyshev {
    a: f64,
    b: f64,
    coef: Vec<f64>,
}

impl Chebyshev {
    /// Interpolates `f` on `[a, b]`, doubling the degree until the trailing
    /// coefficients fall below `tol`, up to `max_degree`.
    pub fn fit(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64, max_degree: usize) -> Self {
        let mut n = 16;
        loop {
            let coef = coefficients(&mut f, a, b, n);
            let tail = coef[coef.len() - 4..]
                .iter()
                .map(|c| c.abs())
                .fold(0.0, f64::max);
            if tail <= tol || n >= max_degree {
                let mut keep = coef.len();
                while keep > 1 && coef[keep - 1].abs() < 0.01 * tol {
                    keep -= 1;
                }
                return Self {
                    a,
                    b,
                    coef: coef[..keep].to_vec(),
                };
            }
            n *= 2;
        }
    }

    pub fn degree(&self) -> usize {
        self.coef.len() - 1
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let t = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let t2 = 2.0 * t;
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &c in self.coef[1..].iter().rev() {
            let b0 = c + t2 * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        self.coef[0] + t * b1 - b2
    }
}

// Values at the n + 1 Chebyshev–Lobatto points, transformed by a direct
// discrete cosine sum.
fn coefficients(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, n: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let nf = n as f64;
    let vals: Vec<f64> = (0..=n)
        .map(|j| {
            let t = (pi * j as f64 / nf).cos();
            f(0.5 * (a + b) + 0.5 * (b - a) * t)
        })
        .collect();
    (0..=n)
        .map(|k| {
            let mut s = 0.0;
            for (j, v) in vals.iter().enumerate() {
                let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                s += w * v * (pi * (k * j) as f64 / nf).cos();
            }
            let scale = if k == 0 || k == n { 1.0 / nf } else { 2.0 / nf };
            s * scale
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_smooth_functions() {
        let cheb = Chebyshev::fit(f64::exp, -1.0, 2.0, 1e-15, 256);
        for i in 0..=100 {
            let x = -1.0 + 3.0 * i as f64 / 100.0;
            assert!((cheb.eval(x) - x.exp()).abs() < 1e-13);
        }
        assert!(cheb.degree() < 40);
    }
}
