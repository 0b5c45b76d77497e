//! Derivative-free minimization (Nelder–Mead simplex).

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMead {
    /// Initial simplex edge length along each axis.
    pub initial_step: f64,
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            max_evals: 200,
            f_tol: 1e-10,
            x_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

impl NelderMead {
    /// Minimizes `f` from `x0`. Never calls `f` more than `max_evals` times
    /// (at least once).
    pub fn minimize(&self, x0: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Minimum {
        let n = x0.len();
        let budget = self.max_evals.max(1);
        let mut evals = 0;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let f0 = eval(x0, &mut evals);
        simplex.push((x0.to_vec(), f0));
        for k in 0..n {
            if evals >= budget {
                break;
            }
            let mut x = x0.to_vec();
            x[k] += self.initial_step;
            let v = eval(&x, &mut evals);
            simplex.push((x, v));
        }
        if simplex.len() < n + 1 || n == 0 {
            return best_of(simplex, evals);
        }

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let along = |c: &[f64], d: &[f64], t: f64| -> Vec<f64> {
            c.iter().zip(d).map(|(a, b)| a + t * (b - a)).collect()
        };
        while evals < budget {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[n].1 - simplex[0].1;
            let diam = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread.abs() <= self.f_tol || diam <= self.x_tol {
                break;
            }
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / n as f64;
                }
            }
            let worst = simplex[n].clone();
            let xr = along(&centroid, &worst.0, -alpha);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                if evals >= budget {
                    simplex[n] = (xr, fr);
                    break;
                }
                let xe = along(&centroid, &worst.0, -gamma);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            if evals >= budget {
                break;
            }
            // contraction toward the better of the worst and reflected points
            let (xc, fc) = if fr < worst.1 {
                let xc = along(&centroid, &xr, rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(&centroid, &worst.0, rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
                continue;
            }
            let best = simplex[0].0.clone();
            for item in simplex.iter_mut().skip(1) {
                if evals >= budget {
                    break;
                }
                let x = along(&best, &item.0, sigma);
                let v = eval(&x, &mut evals);
                *item = (x, v);
            }
        }
        best_of(simplex, evals)
    }
}

fn best_of(simplex: Vec<(Vec<f64>, f64)>, evals: usize) -> Minimum {
    let (x, f) = simplex
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex has at least one vertex");
    Minimum { x, f, evals }
}
