//! Split-conformal interval around an ordinary least-squares line.

use serde::{Deserialize, Serialize};

use crate::conformal::Interval;
use crate::dataset::SortedDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    pub intercept: f64,
    pub slope: f64,
}

impl OlsModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn ols_fit(train: &SortedDataset) -> Result<OlsModel> {
    let obs = train.observations();
    let n = obs.len() as f64;
    let mx = obs.iter().map(|o| o.x).sum::<f64>() / n;
    let my = obs.iter().map(|o| o.y).sum::<f64>() / n;
    let sxx: f64 = obs.iter().map(|o| (o.x - mx).powi(2)).sum();
    let sxy: f64 = obs.iter().map(|o| (o.x - mx) * (o.y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateX);
    }
    let slope = sxy / sxx;
    Ok(OlsModel {
        intercept: my - slope * mx,
        slope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConformalModel {
    pub ols: OlsModel,
    /// `+inf` when `whole_line`.
    pub halfwidth: f64,
    pub epsilon: f64,
    /// The calibration set is too small for this `epsilon`.
    pub whole_line: bool,
}

/// `ceil((1 - epsilon)(n + 1))`, guarding against rounding just above an
/// integer.
pub fn conformal_rank(n_cal: usize, epsilon: f64) -> usize {
    ((1.0 - epsilon) * (n_cal + 1) as f64 - 1e-9)
        .ceil()
        .max(1.0) as usize
}

pub fn calibrate(
    ols: OlsModel,
    calib: &SortedDataset,
    epsilon: f64,
) -> Result<SplitConformalModel> {
    let residuals: Vec<f64> = calib
        .observations()
        .iter()
        .map(|o| (o.y - ols.predict(o.x)).abs())
        .collect();
    calibrate_residuals(ols, residuals, epsilon)
}

/// [`calibrate`] from precomputed absolute residuals.
pub fn calibrate_residuals(
    ols: OlsModel,
    mut residuals: Vec<f64>,
    epsilon: f64,
) -> Result<SplitConformalModel> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    if residuals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rank = conformal_rank(residuals.len(), epsilon);
    if rank > residuals.len() {
        return Ok(SplitConformalModel {
            ols,
            halfwidth: f64::INFINITY,
            epsilon,
            whole_line: true,
        });
    }
    residuals.sort_by(f64::total_cmp);
    Ok(SplitConformalModel {
        ols,
        halfwidth: residuals[rank - 1],
        epsilon,
        whole_line: false,
    })
}

pub fn predict_interval(m: &SplitConformalModel, x_star: f64) -> Interval {
    let c = m.ols.predict(x_star);
    Interval {
        lo: c - m.halfwidth,
        hi: c + m.halfwidth,
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    use super::*;
    use crate::dataset::Observation;

    fn ds(points: &[(f64, f64)]) -> SortedDataset {
        SortedDataset::new(
            points
                .iter()
                .map(|&(x, y)| Observation::new(x, y))
                .collect(),
        )
        .unwrap()
    }

    const LINE: OlsModel = OlsModel {
        intercept: 0.0,
        slope: 1.0,
    };

    #[test]
    fn ols_examples() {
        assert_eq!(ols_fit(&ds(&[(0.0, 0.0), (1.0, 1.0)])).unwrap(), LINE);
        let flat = ols_fit(&ds(&[(0.0, 1.0), (1.0, 1.0)])).unwrap();
        assert_eq!((flat.intercept, flat.slope), (1.0, 0.0));
        assert!(matches!(
            ols_fit(&ds(&[(2.0, 0.0), (2.0, 5.0)])),
            Err(Error::DegenerateX)
        ));
    }

    #[test]
    fn ols_slope_within_three_standard_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ux = Uniform::new(0.0, 10.0).unwrap();
        let pts: Vec<(f64, f64)> = (0..100)
            .map(|_| {
                let x = ux.sample(&mut rng);
                let z: f64 = StandardNormal.sample(&mut rng);
                (x, 2.0 * x + 3.0 + z)
            })
            .collect();
        let fit = ols_fit(&ds(&pts)).unwrap();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / 100.0;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let rss: f64 = pts.iter().map(|p| (p.1 - fit.predict(p.0)).powi(2)).sum();
        let se = (rss / 98.0 / sxx).sqrt();
        assert!((fit.slope - 2.0).abs() < 3.0 * se);
    }

    #[test]
    fn calibration_examples() {
        let res: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(conformal_rank(9, 0.1), 9);
        assert_eq!(calibrate_residuals(LINE, res, 0.1).unwrap().halfwidth, 9.0);
        let m = calibrate_residuals(LINE, vec![0.0; 20], 0.1).unwrap();
        assert_eq!(m.halfwidth, 0.0);
        let m = calibrate_residuals(LINE, vec![1.0; 5], 0.1).unwrap();
        assert!(m.whole_line && m.halfwidth.is_infinite());
        assert!(calibrate_residuals(LINE, vec![1.0], 0.0).is_err());
        let cal = ds(&[(0.0, 1.0), (1.0, 3.0), (2.0, 2.0)]);
        assert_eq!(calibrate(LINE, &cal, 0.5).unwrap().halfwidth, 1.0);
    }

    #[test]
    fn interval_examples() {
        let m = SplitConformalModel {
            ols: LINE,
            halfwidth: 2.0,
            epsilon: 0.1,
            whole_line: false,
        };
        assert_eq!(predict_interval(&m, 3.0), Interval { lo: 1.0, hi: 5.0 });
        for x in [-4.0, 0.0, 2.5, 100.0] {
            assert_eq!(predict_interval(&m, x).len(), 4.0);
        }
        let point = SplitConformalModel {
            halfwidth: 0.0,
            ..m
        };
        assert_eq!(predict_interval(&point, 3.0), Interval { lo: 3.0, hi: 3.0 });
    }

    #[test]
    fn marginal_coverage_on_iid_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let ux = Uniform::new(0.0, 3.0).unwrap();
        let mut draw = |n: usize| {
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let x = ux.sample(&mut rng);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (x, x + (1.0 + x) * z)
                })
                .collect();
            ds(&pts)
        };
        let (mut covered, mut total) = (0usize, 0usize);
        for _ in 0..200 {
            let model = calibrate(ols_fit(&draw(50)).unwrap(), &draw(50), 0.1).unwrap();
            for o in draw(20).observations() {
                covered += usize::from(predict_interval(&model, o.x).contains(o.y));
                total += 1;
            }
        }
        let cov = covered as f64 / total as f64;
        assert!(
            cov >= 0.9 - 3.0 * (0.09f64 / total as f64).sqrt(),
            "coverage {cov}"
        );
    }
}
