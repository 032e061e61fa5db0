//! Bateman equations ∂ₜη = Σ_r(η)·η for a four-reaction, 11-species system,
//! an explicit Euler solver, and a dataset generator.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Two reactants combine into a list of products at rate `rate`.
/// Species indices are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub reactants: [usize; 2],
    pub products: Vec<usize>,
    pub rate: f64,
}

/// One coefficient of Σ_r(η): a linear form Σ c·η_k stored as (k, c) pairs.
pub type LinearForm = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct BatemanSystem {
    pub m: usize,
    pub reactions: Vec<Reaction>,
}

impl Default for BatemanSystem {
    fn default() -> Self {
        Self::with_rates([1.0, 5.0, 3.0, 0.1])
    }
}

impl BatemanSystem {
    /// S1 + S2 → S3 + S4 + S6 + S7, S3 + S4 → S2 + S8 + S11,
    /// S2 + S11 → S3 + S5 + S9, S3 + S11 → S2 + S5 + S6 + S10.
    pub fn with_rates(sigma: [f64; 4]) -> Self {
        let r = |a: usize, b: usize, products: &[usize], rate: f64| Reaction {
            reactants: [a - 1, b - 1],
            products: products.iter().map(|p| p - 1).collect(),
            rate,
        };
        BatemanSystem {
            m: 11,
            reactions: vec![
                r(1, 2, &[3, 4, 6, 7], sigma[0]),
                r(3, 4, &[2, 8, 11], sigma[1]),
                r(2, 11, &[3, 5, 9], sigma[2]),
                r(3, 11, &[2, 5, 6, 10], sigma[3]),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.reactions {
            if !(r.rate > 0.0) {
                return Err(Error::InvalidArgument(format!("reaction rate {} is not positive", r.rate)));
            }
            if r.reactants.iter().chain(&r.products).any(|s| *s >= self.m) {
                return Err(Error::InvalidArgument("species index out of range".into()));
            }
        }
        Ok(())
    }

    /// Σ_r as linear forms in η. Reaction a + b (a < b) at rate σ contributes
    /// ±σ·η_a in column b of every affected species' row, so that row·η
    /// carries the mass-action term σ·η_a·η_b.
    pub fn symbolic(&self) -> Vec<Vec<LinearForm>> {
        let mut s = vec![vec![LinearForm::new(); self.m]; self.m];
        for r in &self.reactions {
            let (a, b) = (r.reactants[0].min(r.reactants[1]), r.reactants[0].max(r.reactants[1]));
            let mut add = |row: usize, sign: f64| {
                let cell = &mut s[row][b];
                match cell.iter_mut().find(|(k, _)| *k == a) {
                    Some((_, c)) => *c += sign * r.rate,
                    None => cell.push((a, sign * r.rate)),
                }
            };
            for &x in &r.reactants {
                add(x, -1.0);
            }
            for &p in &r.products {
                add(p, 1.0);
            }
        }
        s
    }

    pub fn matrix(&self, eta: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(eta)?;
        Ok(self
            .symbolic()
            .iter()
            .map(|row| row.iter().map(|form| form.iter().map(|(k, c)| c * eta[*k]).sum()).collect())
            .collect())
    }

    fn check_len(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, got: eta.len() });
        }
        Ok(())
    }

    /// Σ_r(η)·η evaluated directly from the reaction list.
    pub fn rhs(&self, eta: &[f64]) -> Result<Vec<f64>> {
        self.check_len(eta)?;
        let mut out = vec![0.0; self.m];
        self.rhs_into(eta, &mut out);
        Ok(out)
    }

    fn rhs_into(&self, eta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for r in &self.reactions {
            let flux = r.rate * eta[r.reactants[0]] * eta[r.reactants[1]];
            for &x in &r.reactants {
                out[x] -= flux;
            }
            for &p in &r.products {
                out[p] += flux;
            }
        }
    }
}

pub fn bateman_rhs(eta: &[f64], system: &BatemanSystem) -> Result<Vec<f64>> {
    system.rhs(eta)
}

/// Explicit Euler up to `t_end`; the last step is shortened to land on it.
pub fn bateman_solve(system: &BatemanSystem, eta0: &[f64], t_end: f64, dt: f64) -> Result<Vec<f64>> {
    system.check_len(eta0)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0) {
        return Err(Error::InvalidArgument(format!("t_end must be nonnegative, got {t_end}")));
    }
    let n = ((t_end / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut eta = eta0.to_vec();
    let mut k = vec![0.0; system.m];
    for step in 0..n {
        let h = if step + 1 == n { t_end - step as f64 * dt } else { dt };
        system.rhs_into(&eta, &mut k);
        for (e, d) in eta.iter_mut().zip(&k) {
            *e += h * d;
        }
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDiverged { step });
        }
    }
    Ok(eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatemanSample {
    pub eta0: Vec<f64>,
    pub t: f64,
    /// `None` when the solver diverged.
    pub label: Option<Vec<f64>>,
}

/// η₀ ~ U[0,1]¹¹, t ~ U[0,5], labelled with Euler at dt = 1e-3.
pub fn bateman_dataset(system: &BatemanSystem, n: usize, seed: u64) -> Result<Vec<BatemanSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    system.validate()?;
    let mut r = rng::stream(rng::derive_named(seed, "bateman", &[]));
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let eta0: Vec<f64> = (0..system.m).map(|_| r.gen::<f64>()).collect();
        let t = 5.0 * r.gen::<f64>();
        out.push(BatemanSample { label: bateman_solve(system, &eta0, t, 1e-3).ok(), eta0, t });
    }
    Ok(out)
}

/// Columns eta0_1..eta0_M, t, eta_1..eta_M; diverged labels are left empty.
pub fn write_dataset_csv<W: Write>(samples: &[BatemanSample], m: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=m).map(|i| format!("eta0_{i}")).collect();
    header.push("t".into());
    header.extend((1..=m).map(|i| format!("eta_{i}")));
    w.write_record(&header)?;
    for s in samples {
        let mut row: Vec<String> = s.eta0.iter().map(|v| v.to_string()).collect();
        row.push(s.t.to_string());
        match &s.label {
            Some(l) => row.extend(l.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat(String::new()).take(m)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_second_row() {
        let sys = BatemanSystem::default();
        let row = &sys.symbolic()[1];
        for (col, form) in row.iter().enumerate() {
            let mut f = form.clone();
            f.sort_by_key(|(k, _)| *k);
            let expect: LinearForm = match col {
                1 => vec![(0, -1.0)],
                3 => vec![(2, 5.0)],
                10 => vec![(1, -3.0), (2, 0.1)],
                _ => vec![],
            };
            assert_eq!(f, expect, "column {}", col + 1);
        }
    }

    #[test]
    fn rhs_examples() {
        let sys = BatemanSystem::default();
        assert!(sys.rhs(&[0.0; 11]).unwrap().iter().all(|v| *v == 0.0));
        let r = sys.rhs(&[1.0; 11]).unwrap();
        assert!((r[1] - 1.1).abs() < 1e-12);
        let mut g = rng::stream(2);
        for _ in 0..20 {
            let eta: Vec<f64> = (0..11).map(|_| g.gen::<f64>()).collect();
            let r = sys.rhs(&eta).unwrap();
            assert!((r[0] + eta[0] * eta[1]).abs() < 1e-15);
            let mat = sys.matrix(&eta).unwrap();
            for i in 0..11 {
                let via: f64 = mat[i].iter().zip(&eta).map(|(a, b)| a * b).sum();
                assert!((via - r[i]).abs() < 1e-12);
            }
        }
        assert!(matches!(sys.rhs(&[1.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn solver_edges() {
        let sys = BatemanSystem::default();
        let eta0: Vec<f64> = (0..11).map(|i| i as f64 / 11.0).collect();
        assert_eq!(bateman_solve(&sys, &eta0, 0.0, 1e-3).unwrap(), eta0);
        let one = bateman_solve(&sys, &eta0, 1e-3, 1e-3).unwrap();
        let k = sys.rhs(&eta0).unwrap();
        for i in 0..11 {
            assert_eq!(one[i], eta0[i] + 1e-3 * k[i]);
        }
        let partial = bateman_solve(&sys, &eta0, 2.5e-3, 1e-3).unwrap();
        let mut e = eta0.clone();
        for h in [1e-3, 1e-3, 2.5e-3 - 2.0 * 1e-3] {
            let k = sys.rhs(&e).unwrap();
            for i in 0..11 {
                e[i] += h * k[i];
            }
        }
        assert_eq!(partial, e);
    }

    #[test]
    fn dataset_is_seeded_and_bounded() {
        let sys = BatemanSystem::default();
        let a = bateman_dataset(&sys, 100, 4).unwrap();
        assert_eq!(a, bateman_dataset(&sys, 100, 4).unwrap());
        for s in &a {
            assert!(s.eta0.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((0.0..=5.0).contains(&s.t));
            assert!(s.label.is_some());
        }
    }
}
