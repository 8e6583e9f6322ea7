//! Forecasters for renewable infeed and load.

use thiserror::Error;

use crate::model::UncertaintySample;
use crate::mpc::ForecastBundle;
use crate::registry::Registry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("forecast needs at least one past sample")]
    EmptyHistory,
    #[error("profile ends at step {available}, forecast needs step {needed}")]
    ProfileTooShort { needed: usize, available: usize },
}

/// Realized uncertainty per step, plus the number of steps in one day.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub samples: Vec<UncertaintySample>,
    pub period: usize,
}

impl Profile {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples a forecaster may look at when planning for step `k`. At the
    /// first step nothing has been observed yet, so the sample of step 0 is
    /// treated as already known.
    pub fn history(&self, k: usize) -> &[UncertaintySample] {
        &self.samples[..k.max(1).min(self.samples.len())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaiveMode {
    Persistence,
    /// Same step one period earlier.
    Seasonal(usize),
}

fn bundle(samples: impl Iterator<Item = UncertaintySample>, first: &UncertaintySample) -> ForecastBundle {
    let mut w_r = vec![Vec::new(); first.w_r.len()];
    let mut w_l = vec![Vec::new(); first.w_l.len()];
    for s in samples {
        for (row, v) in w_r.iter_mut().zip(&s.w_r) {
            row.push(*v);
        }
        for (row, v) in w_l.iter_mut().zip(&s.w_l) {
            row.push(*v);
        }
    }
    ForecastBundle { w_r, w_l }
}

/// Forecast for the `h + 1` steps following `history`.
pub fn naive_forecast(history: &[UncertaintySample], h: usize, mode: NaiveMode) -> Result<ForecastBundle, ForecastError> {
    let last = history.last().ok_or(ForecastError::EmptyHistory)?;
    let k = history.len();
    Ok(match mode {
        NaiveMode::Seasonal(period) if period > 0 && k >= period => bundle(
            (0..=h).map(|j| {
                let mut idx = k + j - period;
                while idx >= k {
                    idx -= period;
                }
                history[idx].clone()
            }),
            last,
        ),
        _ => bundle((0..=h).map(|_| last.clone()), last),
    })
}

pub trait Forecaster: Send + Sync {
    fn name(&self) -> &str;

    /// Forecast for steps `k ..= k + h`.
    fn forecast(&self, profile: &Profile, k: usize, h: usize) -> Result<ForecastBundle, ForecastError>;
}

pub struct Persistence;

impl Forecaster for Persistence {
    fn name(&self) -> &str {
        "persistence"
    }

    fn forecast(&self, profile: &Profile, k: usize, h: usize) -> Result<ForecastBundle, ForecastError> {
        naive_forecast(profile.history(k), h, NaiveMode::Persistence)
    }
}

pub struct Seasonal;

impl Forecaster for Seasonal {
    fn name(&self) -> &str {
        "seasonal"
    }

    fn forecast(&self, profile: &Profile, k: usize, h: usize) -> Result<ForecastBundle, ForecastError> {
        naive_forecast(profile.history(k), h, NaiveMode::Seasonal(profile.period))
    }
}

/// Reads the realized profile ahead of time; useful to isolate the effect
/// of communication failures from forecast error.
pub struct Perfect;

impl Forecaster for Perfect {
    fn name(&self) -> &str {
        "perfect"
    }

    fn forecast(&self, profile: &Profile, k: usize, h: usize) -> Result<ForecastBundle, ForecastError> {
        if k + h >= profile.len() {
            return Err(ForecastError::ProfileTooShort {
                needed: k + h,
                available: profile.len().saturating_sub(1),
            });
        }
        let first = &profile.samples[k];
        Ok(bundle(profile.samples[k..=k + h].iter().cloned(), first))
    }
}

pub fn forecasters() -> Registry<dyn Forecaster> {
    let mut r: Registry<dyn Forecaster> = Registry::default();
    r.register("persistence", || Box::new(Persistence));
    r.register("seasonal", || Box::new(Seasonal));
    r.register("perfect", || Box::new(Perfect));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(r: f64, l: f64) -> UncertaintySample {
        UncertaintySample {
            w_r: vec![r],
            w_l: vec![l],
        }
    }

    #[test]
    fn persistence_repeats_last_sample() {
        let f = naive_forecast(&[s(0.1, -1.0), s(0.7, -0.5)], 3, NaiveMode::Persistence).unwrap();
        assert_eq!(f.w_r[0], vec![0.7; 4]);
        assert_eq!(f.w_l[0], vec![-0.5; 4]);
    }

    #[test]
    fn constant_history_in_both_modes() {
        let hist = vec![s(0.3, -0.2); 10];
        for mode in [NaiveMode::Persistence, NaiveMode::Seasonal(4)] {
            let f = naive_forecast(&hist, 5, mode).unwrap();
            assert!(f.w_r[0].iter().all(|&v| v == 0.3));
        }
    }

    #[test]
    fn seasonal_is_exact_on_periodic_signal() {
        let sig = |t: usize| ((t % 6) as f64) * 0.1;
        let hist: Vec<_> = (0..20).map(|t| s(sig(t), -sig(t))).collect();
        let f = naive_forecast(&hist, 8, NaiveMode::Seasonal(6)).unwrap();
        for j in 0..=8 {
            assert_eq!(f.w_r[0][j], sig(20 + j));
        }
    }

    #[test]
    fn seasonal_falls_back_before_one_period() {
        let hist: Vec<_> = (0..3).map(|t| s(t as f64, 0.0)).collect();
        let f = naive_forecast(&hist, 2, NaiveMode::Seasonal(6)).unwrap();
        assert_eq!(f.w_r[0], vec![2.0; 3]);
    }

    #[test]
    fn empty_history_is_an_error() {
        assert_eq!(naive_forecast(&[], 2, NaiveMode::Persistence), Err(ForecastError::EmptyHistory));
    }

    #[test]
    fn registry_lists_builtin_forecasters() {
        let r = forecasters();
        assert_eq!(r.names(), vec!["persistence", "seasonal", "perfect"]);
        assert_eq!(r.create("seasonal").unwrap().name(), "seasonal");
    }
}
