//! Bounded derivative-free minimization: a coarse grid to seed, then
//! Nelder-Mead in unit-scaled coordinates with projection onto the box.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "bound vectors differ in length");
        assert!(
            lower.iter().zip(&upper).all(|(l, u)| l <= u),
            "lower bound above upper bound"
        );
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn to_x(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(ui, (l, h))| (l + ui.clamp(0.0, 1.0) * (h - l)).clamp(*l, *h))
            .collect()
    }

    fn to_u(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(xi, (l, h))| if h > l { ((xi - l) / (h - l)).clamp(0.0, 1.0) } else { 0.0 })
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(xi, (l, h))| xi >= l && xi <= h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMead {
    pub max_iter: usize,
    /// Simplex size tolerance in unit coordinates.
    pub xtol: f64,
    pub ftol: f64,
    /// Initial simplex edge in unit coordinates.
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iter: 200,
            xtol: 1e-6,
            ftol: 1e-10,
            initial_step: 0.1,
        }
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

impl NelderMead {
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], bounds: &Bounds) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = bounds.dim();
        assert_eq!(x0.len(), n, "start point has wrong dimension");
        let mut evals = 0usize;
        let mut eval = |u: &[f64]| {
            evals += 1;
            sanitize(f(&bounds.to_x(u)))
        };
        let clamp = |u: Vec<f64>| -> Vec<f64> { u.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() };

        let u0 = bounds.to_u(x0);
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let f0 = eval(&u0);
        simplex.push((u0.clone(), f0));
        for i in 0..n {
            let mut v = u0.clone();
            // Step inward when the start sits on the upper face.
            v[i] = if v[i] + self.initial_step <= 1.0 {
                v[i] + self.initial_step
            } else {
                v[i] - self.initial_step
            };
            let fv = eval(&v);
            simplex.push((v, fv));
        }

        let mut iterations = 0;
        let mut converged = n == 0;
        while iterations < self.max_iter && !converged {
            iterations += 1;
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            let size = simplex[1..]
                .iter()
                .map(|(v, _)| {
                    v.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if size <= self.xtol && (worst - best).abs() <= self.ftol.max(self.ftol * best.abs()) {
                converged = true;
                break;
            }
            if size <= self.xtol * 1e-3 {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
                .collect();
            let toward = |coef: f64, from: &[f64]| -> Vec<f64> {
                clamp(
                    centroid
                        .iter()
                        .zip(from)
                        .map(|(c, w)| c + coef * (c - w))
                        .collect(),
                )
            };
            let worst_v = simplex[n].0.clone();
            let xr = toward(1.0, &worst_v);
            let fr = eval(&xr);
            if fr < simplex[0].1 {
                let xe = toward(2.0, &worst_v);
                let fe = eval(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = toward(0.5, &worst_v);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = toward(-0.5, &worst_v);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
                continue;
            }
            let best_v = simplex[0].0.clone();
            for item in simplex.iter_mut().skip(1) {
                let v: Vec<f64> = best_v
                    .iter()
                    .zip(&item.0)
                    .map(|(b, x)| b + 0.5 * (x - b))
                    .collect();
                let fv = eval(&v);
                *item = (v, fv);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (u, fbest) = simplex.swap_remove(0);
        Minimum {
            x: bounds.to_x(&u),
            f: fbest,
            iterations,
            evaluations: evals,
            converged,
        }
    }
}

/// Evaluate `f` on a regular grid with `per_dim` points per axis (bounds
/// included) and return the best point. Ties keep the first in scan order.
pub fn grid_search<F>(mut f: F, bounds: &Bounds, per_dim: usize) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = bounds.dim();
    let per_dim = per_dim.max(1);
    let total = per_dim.pow(n as u32);
    let mut best = (bounds.lower.clone(), f64::INFINITY);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let u: Vec<f64> = idx
            .iter()
            .map(|&i| if per_dim == 1 { 0.5 } else { i as f64 / (per_dim - 1) as f64 })
            .collect();
        let x = bounds.to_x(&u);
        let v = sanitize(f(&x));
        if v < best.1 {
            best = (x, v);
        }
        for d in idx.iter_mut() {
            *d += 1;
            if *d < per_dim {
                break;
            }
            *d = 0;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let b = Bounds::new(vec![-2.0, -1.0], vec![2.0, 3.0]);
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let nm = NelderMead {
            max_iter: 2000,
            xtol: 1e-9,
            ftol: 1e-14,
            ..Default::default()
        };
        let m = nm.minimize(rosen, &[-1.5, 2.0], &b);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn respects_active_bound() {
        let b = Bounds::new(vec![2.0], vec![5.0]);
        let m = NelderMead::default().minimize(|x| x[0] * x[0], &[4.0], &b);
        assert!((m.x[0] - 2.0).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn grid_includes_corners() {
        let b = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let (x, f) = grid_search(|x| -(x[0] + x[1]), &b, 5);
        assert_eq!(x, vec![1.0, 1.0]);
        assert_eq!(f, -2.0);
    }

    #[test]
    fn nan_objective_is_avoided() {
        let b = Bounds::new(vec![-1.0], vec![1.0]);
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) };
        let m = NelderMead::default().minimize(f, &[0.1], &b);
        assert!((m.x[0] - 0.5).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn result_always_within_bounds(
            lo in -10.0f64..0.0, w in 0.0f64..10.0, target in -20.0f64..20.0, start in 0.0f64..1.0
        ) {
            let b = Bounds::new(vec![lo, lo], vec![lo + w, lo + 2.0 * w]);
            let x0 = vec![lo + start * w, lo + start * 2.0 * w];
            let m = NelderMead::default().minimize(
                |x| (x[0] - target).powi(2) + (x[1] + target).powi(2), &x0, &b);
            prop_assert!(b.contains(&m.x));
        }
    }
}
