use super::{SweepError, SweepingSet};

/// Increasing penalty parameters with the shrink margins derived from them.
///
/// `alpha_k = ln(eta gamma_k / (2 Mbar)) / gamma_k` and
/// `sigma_k = (r Mbar_psi / (2 eta^2)) (ln r / gamma_k + alpha_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySchedule {
    gammas: Vec<f64>,
    mbar: f64,
    eta: f64,
    mbar_psi: f64,
    r: usize,
}

impl PenaltySchedule {
    pub fn new(gammas: Vec<f64>, mbar: f64, set: &SweepingSet) -> Result<Self, SweepError> {
        Self::from_constants(gammas, mbar, set.eta(), set.mbar_psi(), set.r())
    }

    pub fn from_constants(
        gammas: Vec<f64>,
        mbar: f64,
        eta: f64,
        mbar_psi: f64,
        r: usize,
    ) -> Result<Self, SweepError> {
        if gammas.is_empty() {
            return Err(SweepError::Schedule("schedule is empty".into()));
        }
        if !(mbar > 0.0 && eta > 0.0 && mbar_psi > 0.0) {
            return Err(SweepError::Schedule(
                "Mbar, eta and Mbar_psi must be positive".into(),
            ));
        }
        let floor = 2.0 * mbar / eta;
        for (k, w) in gammas.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(SweepError::Schedule(format!(
                    "gammas must increase strictly (entry {} is {} after {})",
                    k + 1,
                    w[1],
                    w[0]
                )));
            }
        }
        if let Some(&g) = gammas.iter().find(|&&g| g <= floor) {
            return Err(SweepError::Schedule(format!(
                "gamma {g} must exceed 2*Mbar/eta = {floor:.6}"
            )));
        }
        Ok(PenaltySchedule {
            gammas,
            mbar,
            eta,
            mbar_psi,
            r,
        })
    }

    /// `steps` log-uniform values from `gamma_min` to `gamma_max`.
    pub fn log_uniform(gamma_min: f64, gamma_max: f64, steps: usize) -> Vec<f64> {
        if steps <= 1 {
            return vec![gamma_max];
        }
        let (a, b) = (gamma_min.ln(), gamma_max.ln());
        (0..steps)
            .map(|i| (a + (b - a) * i as f64 / (steps - 1) as f64).exp())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gammas[k]
    }

    pub fn mbar(&self) -> f64 {
        self.mbar
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Bound on each multiplier along runs started in the shrunken set.
    pub fn xi_bound(&self) -> f64 {
        2.0 * self.mbar / self.eta
    }

    pub fn alpha(&self, k: usize) -> f64 {
        let g = self.gammas[k];
        (self.eta * g / (2.0 * self.mbar)).ln() / g
    }

    pub fn sigma(&self, k: usize) -> f64 {
        let g = self.gammas[k];
        let r = self.r as f64;
        r * self.mbar_psi / (2.0 * self.eta * self.eta) * (r.ln() / g + self.alpha(k))
    }

    /// `alpha_k` only decreases once `gamma_k > 2 e Mbar / eta`; below that
    /// threshold it rises before it falls.
    pub fn margins_decrease(&self) -> bool {
        (1..self.len())
            .all(|k| self.alpha(k) < self.alpha(k - 1) && self.sigma(k) < self.sigma(k - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margins_follow_formulas() {
        let s = PenaltySchedule::from_constants(vec![50.0, 100.0], 7.0, 0.5, 5.0, 2).unwrap();
        let a0 = (0.5f64 * 50.0 / 14.0).ln() / 50.0;
        assert!((s.alpha(0) - a0).abs() < 1e-15);
        let s0 = 2.0 * 5.0 / (2.0 * 0.25) * (2f64.ln() / 50.0 + a0);
        assert!((s.sigma(0) - s0).abs() < 1e-14);
        assert_eq!(s.xi_bound(), 28.0);
    }

    #[test]
    fn rejects_small_or_unsorted_gammas() {
        assert!(PenaltySchedule::from_constants(vec![20.0], 7.0, 0.5, 5.0, 2).is_err());
        assert!(PenaltySchedule::from_constants(vec![100.0, 50.0], 7.0, 0.5, 5.0, 2).is_err());
        assert!(PenaltySchedule::from_constants(vec![], 7.0, 0.5, 5.0, 2).is_err());
    }

    #[test]
    fn margins_decrease_past_threshold() {
        let threshold = 2.0 * std::f64::consts::E * 7.0 / 0.5;
        let g = PenaltySchedule::log_uniform(threshold * 1.01, 1e4, 8);
        let s = PenaltySchedule::from_constants(g, 7.0, 0.5, 5.0, 2).unwrap();
        assert!(s.margins_decrease());
        assert!(s.alpha(s.len() - 1) > 0.0);
    }

    #[test]
    fn log_uniform_endpoints() {
        let g = PenaltySchedule::log_uniform(10.0, 1000.0, 3);
        assert!((g[0] - 10.0).abs() < 1e-12 && (g[1] - 100.0).abs() < 1e-9);
        assert!((g[2] - 1000.0).abs() < 1e-9);
    }
}
