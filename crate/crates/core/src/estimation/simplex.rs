//! Downhill simplex (Nelder-Mead) minimization.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop once `f_worst - f_best <= rel_tol * |f_best|`, or once the
    /// simplex has shrunk to the rounding level of `T`.
    pub rel_tol: f64,
    /// Edge length of the initial simplex.
    pub step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evals: 100_000,
            rel_tol: 1e-9,
            step: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub evaluations: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Non-finite objective values are treated as `+∞`.
    pub fn minimize<T: Real>(&self, mut f: impl FnMut(&[T]) -> T, x0: &[T]) -> Minimum<T> {
        let dim = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[T], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                T::max_value().unwrap()
            }
        };
        let mut pts: Vec<Vec<T>> = Vec::with_capacity(dim + 1);
        pts.push(x0.to_vec());
        for i in 0..dim {
            let mut p = x0.to_vec();
            p[i] += T::lit(self.step);
            pts.push(p);
        }
        let mut vals: Vec<T> = pts.iter().map(|p| eval(p, &mut evals)).collect();
        let half = T::lit(0.5);
        let two = T::lit(2.0);
        let mut converged = false;
        let eps = T::default_epsilon().as_f64();
        let ftol = self.rel_tol.max(8.0 * eps);

        while evals < self.max_evals {
            let mut idx: Vec<usize> = (0..=dim).collect();
            idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
            pts = idx.iter().map(|&i| pts[i].clone()).collect();
            vals = idx.iter().map(|&i| vals[i]).collect();
            let best = vals[0].as_f64();
            let worst = vals[dim].as_f64();
            let spread = pts[1..].iter().fold(0.0f64, |m, p| {
                p.iter().zip(&pts[0]).fold(m, |m, (&a, &b)| {
                    m.max((a - b).abs().as_f64() / (1.0 + b.abs().as_f64()))
                })
            });
            if worst - best <= ftol * best.abs() || spread <= 16.0 * eps {
                converged = true;
                break;
            }
            let mut centroid = vec![T::zero(); dim];
            for p in &pts[..dim] {
                for (c, &x) in centroid.iter_mut().zip(p) {
                    *c += x;
                }
            }
            let inv = T::one() / T::lit(dim as f64);
            centroid.iter_mut().for_each(|c| *c *= inv);
            let along = |t: T| -> Vec<T> {
                centroid
                    .iter()
                    .zip(&pts[dim])
                    .map(|(&c, &w)| c + t * (c - w))
                    .collect()
            };

            let xr = along(T::one());
            let fr = eval(&xr, &mut evals);
            if fr < vals[0] {
                let xe = along(two);
                let fe = eval(&xe, &mut evals);
                if fe < fr {
                    pts[dim] = xe;
                    vals[dim] = fe;
                } else {
                    pts[dim] = xr;
                    vals[dim] = fr;
                }
                continue;
            }
            if fr < vals[dim - 1] {
                pts[dim] = xr;
                vals[dim] = fr;
                continue;
            }
            let (xc, fc) = if fr < vals[dim] {
                let xc = along(half);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-half);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fr.min(vals[dim]) {
                pts[dim] = xc;
                vals[dim] = fc;
                continue;
            }
            for i in 1..=dim {
                let p: Vec<T> = pts[0]
                    .iter()
                    .zip(&pts[i])
                    .map(|(&b, &x)| b + half * (x - b))
                    .collect();
                vals[i] = eval(&p, &mut evals);
                pts[i] = p;
            }
        }
        let best = (0..=dim)
            .min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap())
            .unwrap();
        Minimum {
            x: pts[best].clone(),
            value: vals[best],
            evaluations: evals,
            converged,
        }
    }
}
