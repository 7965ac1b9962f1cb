//! Dated scalar series and inclusive date intervals.

use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[start, end]` of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DateInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateInterval {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::Config(alloc::format!("interval {start}..{end} is reversed")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn overlaps(&self, other: &DateInterval) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Scalar values keyed by strictly increasing dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatedSeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl DatedSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::LengthMismatch {
                left: dates.len(),
                right: values.len(),
            });
        }
        if let Some(p) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::UnsortedDates { position: p + 1 });
        }
        Ok(Self { dates, values })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Values whose date falls in `interval`.
    pub fn values_in(&self, interval: &DateInterval) -> Vec<f64> {
        self.dates
            .iter()
            .zip(&self.values)
            .filter(|(d, _)| interval.contains(**d))
            .map(|(_, v)| *v)
            .collect()
    }

    /// Index of the first date on or after `d`.
    pub fn index_on_or_after(&self, d: NaiveDate) -> Option<usize> {
        let i = self.dates.partition_point(|x| *x < d);
        (i < self.dates.len()).then_some(i)
    }
}
