//! Geometry of `C = {x : psi_i(x) <= 0 for all i}`: the log-sum-exp
//! smoothing, shrunken level sets, normal cones, projection, and sampled
//! checks of the constraint qualifications.

pub mod qp;
mod schedule;

pub use schedule::PenaltySchedule;

use crate::expr::{Expr, ExprAst, ExprError, FieldKind, ScalarField};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default membership tolerance.
pub const FEAS_TOL: f64 = 1e-9;

const MAX_SQP_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid sweeping set: {0}")]
    Invalid(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("no boundary samples with an active constraint")]
    NoBoundarySamples,
    #[error("no constraint is active at the query point")]
    EmptyActiveSet,
    #[error("point is not on the boundary of C (max psi = {0:e})")]
    NotOnBoundary(f64),
    #[error("point is outside C (max psi = {0:e})")]
    Outside(f64),
    #[error("interior direction violates its bound: {0}")]
    DegenerateCone(String),
    #[error("projection did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("no shift along the interior direction reaches the shrunken set")]
    StartNotShrinkable,
}

/// Classification of a point against the nested sets
/// `C^gamma(k) ⊆ C^gamma ⊆ C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Membership {
    InCk,
    InCgamma,
    InC,
    Outside,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaEval {
    pub value: f64,
    pub grad: DVector<f64>,
    /// Softmax weights, summing to one.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct A22Report {
    pub eta_hat: f64,
    pub witness: Option<DVector<f64>>,
    pub samples_used: usize,
}

impl A22Report {
    pub fn pass(&self) -> bool {
        self.eta_hat > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub z: DVector<f64>,
    /// KKT multipliers, one per constraint.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetEstimates {
    pub eta_hat: f64,
    pub mbar_psi: f64,
    pub boundary_samples: usize,
    pub interior_samples: usize,
    pub witness: Option<DVector<f64>>,
}

/// Intersection of sublevel sets of `C^{1,1}` fields of the state.
#[derive(Debug, Clone)]
pub struct SweepingSet {
    psi: Vec<ScalarField>,
    n: usize,
    eta: f64,
    mbar_psi: f64,
    feas_tol: f64,
}

impl SweepingSet {
    /// `mbar_psi` is raised to `2 eta` if smaller.
    pub fn new(psi: Vec<ScalarField>, eta: f64, mbar_psi: f64) -> Result<Self, SweepError> {
        let Some(first) = psi.first() else {
            return Err(SweepError::Invalid("at least one constraint is required".into()));
        };
        let n = first.n();
        for (i, f) in psi.iter().enumerate() {
            if f.n() != n {
                return Err(SweepError::Invalid(format!("psi{} has dimension {}", i + 1, f.n())));
            }
            if f.kind() != FieldKind::Constraint {
                return Err(SweepError::Invalid(format!("psi{} is not a constraint field", i + 1)));
            }
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(SweepError::Invalid(format!("eta must be positive, got {eta}")));
        }
        Ok(SweepingSet {
            psi,
            n,
            eta,
            mbar_psi: mbar_psi.max(2.0 * eta),
            feas_tol: FEAS_TOL,
        })
    }

    pub fn with_constants(&self, eta: f64, mbar_psi: f64) -> Result<Self, SweepError> {
        Self::new(self.psi.clone(), eta, mbar_psi)
    }

    pub fn r(&self) -> usize {
        self.psi.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn mbar_psi(&self) -> f64 {
        self.mbar_psi
    }

    pub fn feas_tol(&self) -> f64 {
        self.feas_tol
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.psi
    }

    fn zero_u(&self, i: usize) -> Vec<f64> {
        vec![0.0; self.psi[i].m()]
    }

    pub fn psi_values(&self, x: &[f64]) -> Result<Vec<f64>, SweepError> {
        (0..self.r())
            .map(|i| Ok(self.psi[i].value(0.0, x, &self.zero_u(i))?))
            .collect()
    }

    pub fn psi_grad(&self, i: usize, x: &[f64]) -> Result<(f64, DVector<f64>), SweepError> {
        let e = self.psi[i].eval(0.0, x, &self.zero_u(i), 1)?;
        Ok((e.value, e.grad.unwrap()))
    }

    pub fn psi_hess(
        &self,
        i: usize,
        x: &[f64],
    ) -> Result<(f64, DVector<f64>, DMatrix<f64>), SweepError> {
        let e = self.psi[i].eval(0.0, x, &self.zero_u(i), 2)?;
        Ok((e.value, e.grad.unwrap(), e.hess.unwrap()))
    }

    pub fn psi_max(&self, x: &[f64]) -> Result<f64, SweepError> {
        Ok(self
            .psi_values(x)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Log-sum-exp smoothing, shifted by the max so it never overflows.
    pub fn psi_gamma(&self, gamma: f64, x: &[f64]) -> Result<GammaEval, SweepError> {
        let mut vals = Vec::with_capacity(self.r());
        let mut grads = Vec::with_capacity(self.r());
        for i in 0..self.r() {
            let (v, g) = self.psi_grad(i, x)?;
            vals.push(v);
            grads.push(g);
        }
        let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = vals.iter().map(|v| (gamma * (v - top)).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        let mut grad = DVector::zeros(self.n);
        for (w, g) in weights.iter().zip(&grads) {
            grad.axpy(*w, g, 1.0);
        }
        Ok(GammaEval {
            value: top + total.ln() / gamma,
            grad,
            weights,
        })
    }

    pub fn level_membership(
        &self,
        sched: &PenaltySchedule,
        k: usize,
        x: &[f64],
    ) -> Result<Membership, SweepError> {
        let pg = self.psi_gamma(sched.gamma(k), x)?.value;
        Ok(if pg <= -sched.alpha(k) {
            Membership::InCk
        } else if pg <= 0.0 {
            Membership::InCgamma
        } else if self.psi_max(x)? <= 0.0 {
            Membership::InC
        } else {
            Membership::Outside
        })
    }

    /// Indices `i` with `-a <= psi_i(x) <= feas_tol`.
    pub fn active_set(&self, x: &[f64], a: f64) -> Result<Vec<usize>, SweepError> {
        Ok(self
            .psi_values(x)?
            .into_iter()
            .enumerate()
            .filter(|&(_, v)| v >= -a && v <= self.feas_tol)
            .map(|(i, _)| i)
            .collect())
    }

    pub fn normal_cone_rays(
        &self,
        x: &[f64],
        a: f64,
    ) -> Result<Vec<(usize, DVector<f64>)>, SweepError> {
        let top = self.psi_max(x)?;
        if top > self.feas_tol {
            return Err(SweepError::Outside(top));
        }
        self.active_set(x, a)?
            .into_iter()
            .map(|i| Ok((i, self.psi_grad(i, x)?.1)))
            .collect()
    }

    /// Half the smallest distance from the origin to the hull of active
    /// gradients over the samples.
    pub fn check_a22(&self, samples: &[DVector<f64>]) -> Result<A22Report, SweepError> {
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut used = 0;
        for s in samples {
            let active = self.active_set(s.as_slice(), self.feas_tol)?;
            if active.is_empty() {
                continue;
            }
            used += 1;
            let grads = active
                .iter()
                .map(|&i| Ok(self.psi_grad(i, s.as_slice())?.1))
                .collect::<Result<Vec<_>, SweepError>>()?;
            let (p, _) = qp::min_norm_in_hull(&grads);
            let d = p.norm();
            if best.as_ref().is_none_or(|(b, _)| d < *b) {
                best = Some((d, s.clone()));
            }
        }
        let (d, w) = best.ok_or(SweepError::NoBoundarySamples)?;
        Ok(A22Report {
            eta_hat: 0.5 * d,
            witness: Some(w),
            samples_used: used,
        })
    }

    /// Largest normalized off-diagonal Gram row sum over the active set.
    pub fn check_a23(&self, x: &[f64], a: f64) -> Result<(f64, bool), SweepError> {
        let active = self.active_set(x, a)?;
        if active.is_empty() {
            return Err(SweepError::EmptyActiveSet);
        }
        let grads = active
            .iter()
            .map(|&i| Ok(self.psi_grad(i, x)?.1))
            .collect::<Result<Vec<_>, SweepError>>()?;
        let mut b_hat: f64 = 0.0;
        for (j, gj) in grads.iter().enumerate() {
            let off: f64 = grads
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, gi)| gi.dot(gj).abs())
                .sum();
            b_hat = b_hat.max(off / gj.norm_squared());
        }
        Ok((b_hat, b_hat < 1.0))
    }

    fn raw_interior_direction(
        &self,
        c: &[f64],
        active: &[usize],
    ) -> Result<(DVector<f64>, Vec<DVector<f64>>), SweepError> {
        let grads = active
            .iter()
            .map(|&i| Ok(self.psi_grad(i, c)?.1))
            .collect::<Result<Vec<_>, SweepError>>()?;
        let g = DMatrix::from_columns(&grads);
        let mut d = DVector::zeros(self.n);
        for gj in &grads {
            let w = -gj;
            // Moreau split of -g_j: subtract its projection onto the normal cone
            let mu = qp::nnls(&g, &w);
            d += &w - &g * mu;
        }
        Ok((d, grads))
    }

    /// Sum of the polar-cone parts of the negated active gradients.
    pub fn interior_direction(&self, c: &[f64]) -> Result<DVector<f64>, SweepError> {
        let top = self.psi_max(c)?;
        if top.abs() > self.feas_tol {
            return Err(SweepError::NotOnBoundary(top));
        }
        let active = self.active_set(c, self.feas_tol)?;
        let (d, grads) = self.raw_interior_direction(c, &active)?;
        let r = self.r() as f64;
        let norm = d.norm();
        let lower = 4.0 * self.eta * self.eta / self.mbar_psi;
        if norm < lower || norm > r * self.mbar_psi {
            return Err(SweepError::DegenerateCone(format!(
                "|d_c| = {norm:e} outside [{lower:e}, {:e}]",
                r * self.mbar_psi
            )));
        }
        let bound = -4.0 * self.eta * self.eta / (r * self.mbar_psi);
        for (i, g) in active.iter().zip(&grads) {
            let s = d.dot(g) / norm;
            if s > bound {
                return Err(SweepError::DegenerateCone(format!(
                    "<d_c/|d_c|, grad psi{}> = {s:e} exceeds {bound:e}",
                    i + 1
                )));
            }
        }
        Ok(d)
    }

    /// Move `c` into `C^gamma(k)` along the interior direction.
    ///
    /// Uses the smallest dyadic fraction `sigma_k 2^-j` of the shift that
    /// still lands in the shrunken set; the full `sigma_k` is usually far
    /// larger than needed. Returns the start and the shift length used.
    pub fn shifted_start(
        &self,
        sched: &PenaltySchedule,
        k: usize,
        c: &[f64],
    ) -> Result<(DVector<f64>, f64), SweepError> {
        if self.level_membership(sched, k, c)? == Membership::InCk {
            return Ok((DVector::from_column_slice(c), 0.0));
        }
        let sigma = sched.sigma(k);
        let active = self.active_set(c, sigma.max(self.feas_tol))?;
        if active.is_empty() {
            return Err(SweepError::StartNotShrinkable);
        }
        let (d, _) = self.raw_interior_direction(c, &active)?;
        if d.norm() == 0.0 {
            return Err(SweepError::StartNotShrinkable);
        }
        let dir = d.normalize();
        let base = DVector::from_column_slice(c);
        let mut found = None;
        for j in 0..48 {
            let s = sigma * 0.5f64.powi(j);
            let x = &base + &dir * s;
            if self.level_membership(sched, k, x.as_slice())? == Membership::InCk {
                found = Some((x, s));
            } else {
                break;
            }
        }
        found.ok_or(SweepError::StartNotShrinkable)
    }

    /// Adds `0.5 (|x - y0|^2 - R0^2) <= 0` as a final constraint.
    pub fn augment_with_ball(&self, y0: &[f64], r0: f64) -> Result<SweepingSet, SweepError> {
        if !(r0 > 0.0) || y0.len() != self.n {
            return Err(SweepError::Invalid("ball needs R0 > 0 and a center in R^n".into()));
        }
        let mut sum = Expr::Const(-r0 * r0);
        for (i, &c) in y0.iter().enumerate() {
            sum = Expr::add(sum, Expr::pow(Expr::sub(Expr::state(i), Expr::Const(c)), 2));
        }
        let root = Expr::mul(Expr::Const(0.5), sum);
        let ball = ScalarField::from_ast(
            ExprAst {
                root,
                n: self.n,
                m: 0,
            },
            FieldKind::Constraint,
        )?;
        let mut psi = self.psi.clone();
        psi.push(ball);
        SweepingSet::new(psi, self.eta, self.mbar_psi)
    }

    /// Euclidean projection onto `C` by damped SQP on the KKT system.
    pub fn project(&self, y: &[f64], tol: f64) -> Result<Projection, SweepError> {
        let (n, r) = (self.n, self.r());
        let yv = DVector::from_column_slice(y);
        if self.psi_values(y)?.iter().all(|&v| v <= 0.0) {
            return Ok(Projection {
                z: yv,
                multipliers: vec![0.0; r],
                iterations: 0,
            });
        }
        let merit = |z: &DVector<f64>, rho: f64| -> Result<f64, SweepError> {
            let viol: f64 = self.psi_values(z.as_slice())?.iter().map(|v| v.max(0.0)).sum();
            Ok(0.5 * (z - &yv).norm_squared() + rho * viol)
        };

        let mut z = yv.clone();
        let mut mu = vec![0.0; r];
        for it in 1..=MAX_SQP_ITERS {
            let mut psi = DVector::zeros(r);
            let mut g = DMatrix::zeros(r, n);
            let mut h = DMatrix::identity(n, n);
            for i in 0..r {
                let (v, gi, hi) = self.psi_hess(i, z.as_slice())?;
                psi[i] = v;
                g.set_row(i, &gi.transpose());
                h += hi * mu[i];
            }
            let c = &z - &yv;
            let chol = h
                .clone()
                .cholesky()
                .unwrap_or_else(|| DMatrix::identity(n, n).cholesky().unwrap());
            let hinv_gt = chol.solve(&g.transpose());
            let hinv_c = chol.solve(&c);
            let qm = &g * &hinv_gt;
            let qv = &g * &hinv_c - &psi;
            let mu_new = qp::nonneg_qp(&qm, &qv);
            let d = -(&hinv_c + &hinv_gt * &mu_new);

            let viol = psi.iter().map(|v| v.max(0.0)).fold(0.0, f64::max);
            if viol <= tol && d.norm() <= tol {
                return Ok(Projection {
                    z,
                    multipliers: mu_new.iter().copied().collect(),
                    iterations: it,
                });
            }

            let rho = 2.0 * mu_new.amax() + 1.0;
            let m0 = merit(&z, rho)?;
            let slope = c.dot(&d) - rho * psi.iter().map(|v| v.max(0.0)).sum::<f64>();
            let mut t = 1.0;
            let mut next = &z + &d;
            while t > 1e-10 {
                next = &z + &d * t;
                if merit(&next, rho)? <= m0 + 1e-4 * t * slope.min(0.0) {
                    break;
                }
                t *= 0.5;
            }
            z = next;
            mu = mu_new.iter().copied().collect();
        }
        Err(SweepError::NoConvergence(MAX_SQP_ITERS))
    }

    /// Boundary points in the box `[lo, hi]`, reached by Gauss-Newton
    /// correction onto one or two constraint surfaces at a time.
    pub fn sample_boundary(
        &self,
        lo: &[f64],
        hi: &[f64],
        count: usize,
        seed: u64,
    ) -> Result<Vec<DVector<f64>>, SweepError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.r();
        let mut subsets: Vec<Vec<usize>> = (0..r).map(|i| vec![i]).collect();
        let singles = subsets.len();
        for i in 0..r {
            for j in (i + 1)..r {
                subsets.push(vec![i, j]);
            }
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count * 20 {
            if out.len() >= count {
                break;
            }
            let pick = if subsets.len() > singles && rng.gen_bool(0.5) {
                rng.gen_range(singles..subsets.len())
            } else {
                rng.gen_range(0..singles)
            };
            let x0 = random_in_box(&mut rng, lo, hi);
            if let Some(x) = self.correct_onto(&subsets[pick], x0)? {
                let inside = x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v >= *a && *v <= *b);
                if inside && self.psi_max(x.as_slice())? <= self.feas_tol {
                    out.push(x);
                }
            }
        }
        Ok(out)
    }

    fn correct_onto(
        &self,
        subset: &[usize],
        mut x: DVector<f64>,
    ) -> Result<Option<DVector<f64>>, SweepError> {
        let k = subset.len();
        for _ in 0..40 {
            let mut vals = DVector::zeros(k);
            let mut g = DMatrix::zeros(k, self.n);
            for (row, &i) in subset.iter().enumerate() {
                let (v, gi) = self.psi_grad(i, x.as_slice())?;
                vals[row] = v;
                g.set_row(row, &gi.transpose());
            }
            if vals.amax() <= 1e-13 * (1.0 + x.amax()) {
                return Ok(Some(x));
            }
            let ggt = &g * g.transpose();
            let Some(step) = ggt.lu().solve(&vals) else {
                return Ok(None);
            };
            x -= g.transpose() * step;
            if !x.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
        }
        Ok(None)
    }

    pub fn sample_interior(
        &self,
        lo: &[f64],
        hi: &[f64],
        count: usize,
        seed: u64,
    ) -> Result<Vec<DVector<f64>>, SweepError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count * 50 {
            if out.len() >= count {
                break;
            }
            let x = random_in_box(&mut rng, lo, hi);
            if self.psi_max(x.as_slice())? <= 0.0 {
                out.push(x);
            }
        }
        Ok(out)
    }

    /// Sampled `eta` and gradient bound over `C` intersected with the box.
    pub fn estimate_constants(
        &self,
        lo: &[f64],
        hi: &[f64],
        count: usize,
        seed: u64,
    ) -> Result<SetEstimates, SweepError> {
        let boundary = self.sample_boundary(lo, hi, count, seed)?;
        let interior = self.sample_interior(lo, hi, count, seed.wrapping_add(1))?;
        let a22 = self.check_a22(&boundary)?;
        let mut gmax: f64 = 0.0;
        for x in boundary.iter().chain(&interior) {
            for i in 0..self.r() {
                gmax = gmax.max(self.psi_grad(i, x.as_slice())?.1.norm());
            }
        }
        Ok(SetEstimates {
            eta_hat: a22.eta_hat,
            mbar_psi: (1.1 * gmax).max(2.0 * a22.eta_hat),
            boundary_samples: boundary.len(),
            interior_samples: interior.len(),
            witness: a22.witness,
        })
    }

    /// A unit direction along which `C` extends to radius `1e4` from
    /// `center`, if one is found among random rays.
    pub fn recession_direction(
        &self,
        center: &[f64],
        rays: usize,
        seed: u64,
    ) -> Result<Option<DVector<f64>>, SweepError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = DVector::from_column_slice(center);
        let mut dirs: Vec<DVector<f64>> = Vec::new();
        for i in 0..self.n {
            for s in [1.0, -1.0] {
                let mut e = DVector::zeros(self.n);
                e[i] = s;
                dirs.push(e);
            }
        }
        for _ in 0..rays {
            let v = DVector::from_fn(self.n, |_, _| rng.gen_range(-1.0..1.0));
            if v.norm() > 1e-3 {
                dirs.push(v.normalize());
            }
        }
        for d in dirs {
            let mut unbounded = true;
            for radius in [1e1, 1e2, 1e3, 1e4] {
                let x = &c + &d * radius;
                match self.psi_max(x.as_slice()) {
                    Ok(v) if v <= 0.0 => {}
                    _ => {
                        unbounded = false;
                        break;
                    }
                }
            }
            if unbounded {
                return Ok(Some(d));
            }
        }
        Ok(None)
    }
}

fn random_in_box(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        lo.len(),
        lo.iter().zip(hi).map(|(&a, &b)| if b > a { rng.gen_range(a..b) } else { a }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(src: &str, n: usize) -> ScalarField {
        ScalarField::parse(src, n, 0, FieldKind::Constraint).unwrap()
    }

    fn example() -> SweepingSet {
        SweepingSet::new(
            vec![field("x1^2 + x2^2 + x3", 3), field("x1^2 + (x2 - 2)^2 + x3", 3)],
            0.5,
            5.0,
        )
        .unwrap()
    }

    fn sched() -> PenaltySchedule {
        PenaltySchedule::from_constants(vec![50.0, 100.0, 200.0], 7.0, 0.5, 5.0, 2).unwrap()
    }

    #[test]
    fn psi_max_examples() {
        let s = example();
        assert_eq!(s.psi_max(&[0.0, 1.0, -1.0]).unwrap(), 0.0);
        assert_eq!(s.psi_max(&[0.0, 1.0, -2.0]).unwrap(), -1.0);
        let single = SweepingSet::new(vec![field("x1^2 - x2", 2)], 0.5, 5.0).unwrap();
        assert_eq!(single.psi_max(&[2.0, 1.0]).unwrap(), 3.0);
    }

    #[test]
    fn psi_gamma_on_gamma_curve() {
        let s = example();
        for gamma in [1.0, 10.0, 1e3, 1e8] {
            let e = s.psi_gamma(gamma, &[0.2, 1.0, -1.04]).unwrap();
            assert!((e.value - 2f64.ln() / gamma).abs() < 1e-12);
            assert!((e.grad.clone() - DVector::from_vec(vec![0.4, 0.0, 1.0])).norm() < 1e-12);
        }
    }

    #[test]
    fn psi_gamma_single_constraint_is_exact() {
        let s = SweepingSet::new(vec![field("x1^2 - x2", 2)], 0.5, 5.0).unwrap();
        let e = s.psi_gamma(7.0, &[1.5, 0.25]).unwrap();
        assert_eq!(e.value, 2.0);
        assert_eq!(e.grad.as_slice(), &[3.0, -1.0]);
    }

    #[test]
    fn psi_gamma_survives_extreme_values() {
        let s = SweepingSet::new(vec![field("x1", 1), field("-x1 - 2e4", 1)], 0.5, 5.0).unwrap();
        let e = s.psi_gamma(1e8, &[1e4]).unwrap();
        assert!(e.value.is_finite() && (e.value - 1e4).abs() < 1e-6);
    }

    #[test]
    fn membership_classes() {
        let s = example();
        let sc = sched();
        assert_eq!(s.level_membership(&sc, 0, &[0.0, 1.0, -5.0]).unwrap(), Membership::InCk);
        assert_eq!(s.level_membership(&sc, 2, &[0.0, 1.0, -1.0]).unwrap(), Membership::InC);
        assert_eq!(s.level_membership(&sc, 2, &[0.0, 1.0, 0.0]).unwrap(), Membership::Outside);
    }

    #[test]
    fn normal_cone_examples() {
        let s = example();
        let rays = s.normal_cone_rays(&[0.0, 1.0, -1.0], 0.0).unwrap();
        assert_eq!(rays.len(), 2);
        assert_eq!(rays[0].1.as_slice(), &[0.0, 2.0, 1.0]);
        assert_eq!(rays[1].1.as_slice(), &[0.0, -2.0, 1.0]);
        assert!(s.normal_cone_rays(&[0.0, 1.0, -2.0], 0.0).unwrap().is_empty());
        let end = s.normal_cone_rays(&[0.5, 1.0, -1.25], 0.0).unwrap();
        assert_eq!(end.iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![0, 1]);
        assert!(matches!(
            s.normal_cone_rays(&[0.0, 1.0, 0.0], 0.0),
            Err(SweepError::Outside(_))
        ));
    }

    #[test]
    fn a22_on_gamma_curve_matches_closed_form() {
        let s = example();
        let ts: Vec<f64> = (0..=50).map(|j| j as f64 / 100.0).collect();
        let samples: Vec<_> = ts
            .iter()
            .map(|&t| DVector::from_vec(vec![t, 1.0, -1.0 - t * t]))
            .collect();
        let rep = s.check_a22(&samples).unwrap();
        assert!((rep.eta_hat - 0.5).abs() < 1e-7, "{}", rep.eta_hat);
        assert_eq!(rep.witness.unwrap()[0], 0.0);
        // independent check by grid search over the weight
        for &t in &ts {
            let g1 = DVector::from_vec(vec![2.0 * t, 2.0, 1.0]);
            let g2 = DVector::from_vec(vec![2.0 * t, -2.0, 1.0]);
            let best = (0..=1000)
                .map(|k| {
                    let l = k as f64 / 1000.0;
                    (&g1 * l + &g2 * (1.0 - l)).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn a22_singleton_and_opposing() {
        let ball = SweepingSet::new(vec![field("x1^2 + x2^2 - 1", 2)], 0.5, 5.0).unwrap();
        let rep = ball
            .check_a22(&[DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, -1.0])])
            .unwrap();
        assert!((rep.eta_hat - 1.0).abs() < 1e-12);
        let slab = SweepingSet::new(vec![field("x1", 2), field("-x1", 2)], 0.5, 5.0).unwrap();
        let rep = slab.check_a22(&[DVector::from_vec(vec![0.0, 3.0])]).unwrap();
        assert!(rep.eta_hat < 1e-9 && !rep.pass());
        assert!(matches!(
            slab.check_a22(&[]),
            Err(SweepError::NoBoundarySamples)
        ));
    }

    #[test]
    fn a23_examples() {
        let s = example();
        let (b, pass) = s.check_a23(&[0.0, 1.0, -1.0], 0.0).unwrap();
        assert!((b - 0.6).abs() < 1e-15 && pass);
        let (b, pass) = s.check_a23(&[0.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!((b, pass), (0.0, true));
        let dup = SweepingSet::new(vec![field("x1", 1), field("x1", 1)], 0.5, 5.0).unwrap();
        assert_eq!(dup.check_a23(&[0.0], 0.0).unwrap(), (1.0, false));
        assert!(matches!(
            s.check_a23(&[0.0, 1.0, -3.0], 0.0),
            Err(SweepError::EmptyActiveSet)
        ));
    }

    #[test]
    fn interior_direction_example() {
        let s = example();
        let d = s.interior_direction(&[0.0, 1.0, -1.0]).unwrap();
        assert!((d.clone() - DVector::from_vec(vec![0.0, 0.0, -3.2])).norm() < 1e-12);
        // independent check: -g1 minus its nearest cone point found by grid search
        let g1 = DVector::from_vec(vec![0.0, 2.0, 1.0]);
        let g2 = DVector::from_vec(vec![0.0, -2.0, 1.0]);
        let w = -&g1;
        let mut best = (f64::INFINITY, DVector::zeros(3));
        for a in 0..=200 {
            for b in 0..=200 {
                let p = &g1 * (a as f64 / 100.0) + &g2 * (b as f64 / 100.0);
                let dist = (&w - &p).norm();
                if dist < best.0 {
                    best = (dist, p);
                }
            }
        }
        let v1 = &w - &best.1;
        assert!((v1 - DVector::from_vec(vec![0.0, -0.8, -1.6])).norm() < 1e-9);
        assert!(d.dot(&g1) < 0.0 && d.dot(&g2) < 0.0);
    }

    #[test]
    fn interior_direction_half_space() {
        let s = SweepingSet::new(vec![field("x1", 3)], 0.5, 5.0).unwrap();
        let d = s.interior_direction(&[0.0, 4.0, -1.0]).unwrap();
        assert_eq!(d.as_slice(), &[-1.0, 0.0, 0.0]);
        assert!(matches!(
            s.interior_direction(&[-1.0, 0.0, 0.0]),
            Err(SweepError::NotOnBoundary(_))
        ));
    }

    #[test]
    fn shifted_start_lands_in_shrunken_set() {
        let s = example();
        let sc = sched();
        for k in 0..sc.len() {
            let (x, shift) = s.shifted_start(&sc, k, &[0.0, 1.0, -1.0]).unwrap();
            assert_eq!(s.level_membership(&sc, k, x.as_slice()).unwrap(), Membership::InCk);
            assert!(shift > 0.0 && shift <= sc.sigma(k));
            // halving once more leaves the shrunken set
            let closer = DVector::from_vec(vec![0.0, 1.0, -1.0 - shift / 2.0]);
            assert_ne!(s.level_membership(&sc, k, closer.as_slice()).unwrap(), Membership::InCk);
        }
    }

    #[test]
    fn ball_augmentation() {
        let s = example();
        let b = s.augment_with_ball(&[0.0, 1.0, -2.0], 10.0).unwrap();
        assert_eq!(b.r(), 3);
        for j in 0..=50 {
            let t = j as f64 / 100.0;
            let v = b.psi_values(&[t, 1.0, -1.0 - t * t]).unwrap();
            assert!(v[2] < -40.0);
        }
        assert_eq!(
            b.active_set(&[0.0, 1.0, -1.0], 0.0).unwrap(),
            s.active_set(&[0.0, 1.0, -1.0], 0.0).unwrap()
        );
        let on_sphere = [0.0, 1.0, 8.0];
        let (v, g) = b.psi_grad(2, &on_sphere).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.as_slice(), &[0.0, 0.0, 10.0]);
    }

    #[test]
    fn projection_examples() {
        let s = example();
        let inside = [0.1, 1.0, -3.0];
        assert_eq!(s.project(&inside, 1e-12).unwrap().z.as_slice(), &inside);
        let p = s.project(&[0.0, 1.0, -0.9], 1e-12).unwrap();
        assert!((p.z.clone() - DVector::from_vec(vec![0.0, 1.0, -1.0])).norm() < 1e-10);
        assert!((p.multipliers[0] - 0.05).abs() < 1e-9);
        assert!((p.multipliers[1] - 0.05).abs() < 1e-9);
        let half = SweepingSet::new(vec![field("x1", 2)], 0.5, 5.0).unwrap();
        let p = half.project(&[0.3, 7.0], 1e-12).unwrap();
        assert!(p.z[0].abs() < 1e-12 && (p.z[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn projection_beats_local_grid() {
        let s = example();
        let y = [0.0, 1.0, -0.9];
        let z = s.project(&y, 1e-12).unwrap().z;
        let dz = (z - DVector::from_column_slice(&y)).norm();
        let mut best = f64::INFINITY;
        for a in -20..=20 {
            for b in -20..=20 {
                for c in -20..=20 {
                    let w = [a as f64 * 0.01, 1.0 + b as f64 * 0.01, -1.0 + c as f64 * 0.01];
                    if s.psi_max(&w).unwrap() <= 0.0 {
                        let d = (DVector::from_column_slice(&w) - DVector::from_column_slice(&y)).norm();
                        best = best.min(d);
                    }
                }
            }
        }
        assert!(dz <= best + 1e-12);
        assert!(best - dz < 0.02);
    }

    #[test]
    fn boundary_sampling_and_estimates() {
        let s = example();
        let lo = [-1.0, 0.0, -3.0];
        let hi = [1.0, 2.0, -1.0];
        let est = s.estimate_constants(&lo, &hi, 400, 7).unwrap();
        assert!(est.eta_hat >= 0.5 - 1e-9 && est.eta_hat < 0.6, "{}", est.eta_hat);
        assert!(est.mbar_psi > 3.5 && est.mbar_psi < 5.2, "{}", est.mbar_psi);
        let again = s.estimate_constants(&lo, &hi, 400, 7).unwrap();
        assert_eq!(est, again);
    }

    #[test]
    fn unbounded_set_detected() {
        let s = example();
        let d = s.recession_direction(&[0.0, 1.0, -2.0], 16, 1).unwrap();
        assert!(d.is_some());
        let ball = s.augment_with_ball(&[0.0, 1.0, -2.0], 10.0).unwrap();
        assert!(ball.recession_direction(&[0.0, 1.0, -2.0], 16, 1).unwrap().is_none());
    }
}
