use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub t: f64,
    #[serde(rename = "w")]
    pub weight: f64,
}

/// Signed measure on `[0, T]`: a density constant on each grid cell plus
/// finitely many atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointMeasure {
    pub times: Vec<f64>,
    /// One value per cell; cells folded into atoms carry zero.
    pub density: Vec<f64>,
    pub atoms: Vec<Atom>,
}

impl AdjointMeasure {
    pub fn zero(times: Vec<f64>) -> Self {
        let cells = times.len().saturating_sub(1);
        AdjointMeasure {
            times,
            density: vec![0.0; cells],
            atoms: vec![],
        }
    }

    pub fn cell_mass(&self, k: usize) -> f64 {
        self.density[k] * (self.times[k + 1] - self.times[k])
    }

    pub fn ac_mass(&self) -> f64 {
        (0..self.density.len()).map(|k| self.cell_mass(k)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.ac_mass() + self.atoms.iter().map(|a| a.weight).sum::<f64>()
    }

    pub fn total_variation(&self) -> f64 {
        (0..self.density.len()).map(|k| self.cell_mass(k).abs()).sum::<f64>()
            + self.atoms.iter().map(|a| a.weight.abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureThresholds {
    /// Minimum share of the total variation an atom must carry.
    pub atom: f64,
    /// Spike level as a multiple of the median density magnitude.
    pub spike: f64,
}

impl Default for MeasureThresholds {
    fn default() -> Self {
        MeasureThresholds {
            atom: 0.05,
            spike: 10.0,
        }
    }
}

/// Split cell densities into a density part and atoms.
///
/// A run of consecutive cells whose density magnitude exceeds
/// `spike * median` becomes one atom at the run's midpoint when its mass
/// exceeds `atom * total variation`. The median is taken over the cells
/// where the density is not negligible, so a density supported on a short
/// arc is not mistaken for a spike train.
pub fn accumulate_measures(
    nu_densities: &[Vec<f64>],
    times: &[f64],
    th: MeasureThresholds,
) -> Vec<AdjointMeasure> {
    nu_densities
        .iter()
        .map(|dens| split_one(dens, times, th))
        .collect()
}

/// Cell ranges `[start, end)` that [`accumulate_measures`] folds into atoms.
pub fn atom_runs(dens: &[f64], times: &[f64], th: MeasureThresholds) -> Vec<(usize, usize)> {
    let cells = dens.len();
    let mass = |k: usize| dens[k] * (times[k + 1] - times[k]);
    let tv: f64 = (0..cells).map(|k| mass(k).abs()).sum();
    if tv == 0.0 {
        return vec![];
    }
    let peak = dens.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut mags: Vec<f64> = dens
        .iter()
        .map(|v| v.abs())
        .filter(|&v| v > 1e-12 * peak)
        .collect();
    mags.sort_by(f64::total_cmp);
    let level = th.spike * mags[mags.len() / 2];

    let mut runs = vec![];
    let mut k = 0;
    while k < cells {
        if dens[k].abs() <= level {
            k += 1;
            continue;
        }
        let start = k;
        while k < cells && dens[k].abs() > level {
            k += 1;
        }
        let w: f64 = (start..k).map(mass).sum();
        if w.abs() > th.atom * tv {
            runs.push((start, k));
        }
    }
    runs
}

fn split_one(dens: &[f64], times: &[f64], th: MeasureThresholds) -> AdjointMeasure {
    let mut out = AdjointMeasure {
        times: times.to_vec(),
        density: dens.to_vec(),
        atoms: vec![],
    };
    for (start, end) in atom_runs(dens, times, th) {
        let weight = (start..end).map(|k| dens[k] * (times[k + 1] - times[k])).sum();
        out.atoms.push(Atom {
            t: 0.5 * (times[start] + times[end]),
            weight,
        });
        for c in start..end {
            out.density[c] = 0.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..=n).map(|j| 0.5 * j as f64 / n as f64).collect()
    }

    fn closed_form_density(t: f64) -> f64 {
        (12.0 * t.powi(3) + 24.0 * t * t + 3.0 * t - 6.0) / (8.0 * (4.0 * t * t + 1.0).powi(2))
    }

    #[test]
    fn zero_density_is_empty() {
        let m = accumulate_measures(&[vec![0.0; 10]], &grid(10), MeasureThresholds::default());
        assert!(m[0].atoms.is_empty());
        assert_eq!(m[0].total_variation(), 0.0);
    }

    #[test]
    fn smooth_density_has_no_atoms() {
        let g = grid(2000);
        let d: Vec<f64> = (0..2000).map(|k| closed_form_density(0.5 * (g[k] + g[k + 1]))).collect();
        let m = accumulate_measures(&[d], &g, MeasureThresholds::default());
        assert!(m[0].atoms.is_empty());
    }

    #[test]
    fn spike_becomes_atom() {
        let g = grid(2000);
        let mut d: Vec<f64> = (0..2000).map(|k| closed_form_density(0.5 * (g[k] + g[k + 1]))).collect();
        let h = g[1];
        for k in 1996..2000 {
            d[k] += 3.0 / 16.0 / (4.0 * h);
        }
        let m = accumulate_measures(&[d], &g, MeasureThresholds::default());
        assert_eq!(m[0].atoms.len(), 1);
        let a = m[0].atoms[0];
        assert!((a.t - 0.4995).abs() < 1e-12);
        assert!((a.weight - 3.0 / 16.0).abs() < 0.01);
    }
}
