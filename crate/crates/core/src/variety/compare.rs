use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::{VarietyCell, VarietyError, VarietyReport};

/// Significance level of the dispersion test.
pub const ALPHA: f64 = 0.05;

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionTest {
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Brown–Forsythe test for equal dispersion of two samples: a one-way ANOVA
/// on absolute deviations from each sample's median.
pub fn brown_forsythe(a: &[f64], b: &[f64]) -> Result<DispersionTest, VarietyError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(VarietyError::Invalid(format!("samples of {} and {} values; need at least two each", a.len(), b.len())));
    }
    let deviations = |s: &[f64]| {
        let m = median(s);
        s.iter().map(|v| (v - m).abs()).collect::<Vec<_>>()
    };
    let groups = [deviations(a), deviations(b)];
    let n = (a.len() + b.len()) as f64;
    let mean = |g: &[f64]| g.iter().sum::<f64>() / g.len() as f64;
    let grand = groups.iter().flatten().sum::<f64>() / n;
    let between: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
    let within: f64 = groups.iter().map(|g| {
        let m = mean(g);
        g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    }).sum();
    let (df1, df2) = (1.0, n - 2.0);
    let (statistic, p_value) = if within == 0.0 {
        if between == 0.0 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) }
    } else {
        let f = (between / df1) / (within / df2);
        let dist = FisherSnedecor::new(df1, df2).expect("positive degrees of freedom");
        (f, dist.sf(f))
    };
    Ok(DispersionTest { statistic, p_value, significant: p_value < ALPHA })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellComparison {
    pub p_train: f64,
    pub p_dropout: f64,
    pub delta_std: f64,
    pub delta_mean: f64,
    pub test: DispersionTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementComparison {
    pub cells: Vec<CellComparison>,
}

impl PlacementComparison {
    pub fn significant(&self) -> usize {
        self.cells.iter().filter(|c| c.test.significant).count()
    }
}

fn compare_cells(a: &VarietyCell, b: &VarietyCell) -> Result<CellComparison, VarietyError> {
    Ok(CellComparison {
        p_train: a.spec.p_train.get(),
        p_dropout: a.spec.p_dropout.get(),
        delta_std: b.std - a.std,
        delta_mean: b.mean - a.mean,
        test: brown_forsythe(&a.distances, &b.distances)?,
    })
}

/// Per-cell differences (`first − all`) and dispersion tests between two
/// reports over the same grid.
pub fn compare_placements(all: &VarietyReport, first: &VarietyReport) -> Result<PlacementComparison, VarietyError> {
    let (ma, mb) = (&all.matrix, &first.matrix);
    if ma.p_train != mb.p_train || ma.p_generation != mb.p_generation {
        return Err(VarietyError::GridMismatch("training or generation p values differ".into()));
    }
    if ma.n != mb.n || ma.r != mb.r || ma.scaling != mb.scaling {
        return Err(VarietyError::GridMismatch("N, R or scaling differ".into()));
    }
    let mut cells = Vec::new();
    for (ra, rb) in all.cells.iter().zip(&first.cells) {
        for (a, b) in ra.iter().zip(rb) {
            if a.distances.len() != a.samples() || b.distances.len() != b.samples() {
                return Err(VarietyError::Invalid("report cells carry no raw distances".into()));
            }
            cells.push(compare_cells(a, b)?);
        }
    }
    Ok(PlacementComparison { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_samples_are_not_significant() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = brown_forsythe(&a, &a).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        assert!(!t.significant);
    }

    #[test]
    fn reference_statistic() {
        // Deviations from medians: a → [1, 0, 1], b → [10, 0, 10];
        // group means 2/3 and 20/3, grand mean 11/3.
        // between = 3·(3² + 3²) = 54; within = 2/3 + 200/3 = 202/3; F = 54 / (202/3 / 4).
        let t = brown_forsythe(&[1.0, 2.0, 3.0], &[0.0, 10.0, 20.0]).unwrap();
        assert!((t.statistic - 54.0 * 12.0 / 202.0).abs() < 1e-12);
        let expected = FisherSnedecor::new(1.0, 4.0).unwrap().sf(54.0 * 12.0 / 202.0);
        assert!((t.p_value - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_samples() {
        let t = brown_forsythe(&[0.0; 4], &[0.0; 4]).unwrap();
        assert!(!t.significant);
        assert!(brown_forsythe(&[1.0], &[1.0, 2.0]).is_err());
    }
}
