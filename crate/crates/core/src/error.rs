use alloc::string::String;

use chrono::NaiveDate;
use thiserror::Error;

/// Broad failure class, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("conflicting prices for {ticker} on {date}: {first} vs {second}")]
    ConflictingObservation {
        date: NaiveDate,
        ticker: String,
        first: f64,
        second: f64,
    },
    #[error("non-positive price {price} for {ticker} on {date}")]
    NonPositivePrice {
        date: NaiveDate,
        ticker: String,
        price: f64,
    },
    #[error("dates must be strictly increasing (violated at position {position})")]
    UnsortedDates { position: usize },
    #[error("no sector/market label for ticker {0}")]
    MissingLabel(String),
    #[error("panel shape mismatch: {0}")]
    Shape(String),
    #[error("need at least {needed} dates, panel has {got}")]
    TooFewDates { needed: usize, got: usize },
    #[error("degenerate window ending {end_date}: {surviving} usable assets")]
    DegenerateWindow { end_date: NaiveDate, surviving: usize },
    #[error("degenerate date {date}: no stock has three complete returns")]
    DegenerateDate { date: NaiveDate },
    #[error("window [{start}, {end}) does not fit a panel of {len} rows")]
    WindowOutOfRange { start: usize, end: usize, len: usize },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("eigen solver did not converge (n = {n}, max |entry| = {max_abs:e})")]
    NonConvergence { n: usize, max_abs: f64 },
    #[error("degenerate portfolio: 1'V+1 is zero within tolerance")]
    DegeneratePortfolio,
    #[error("correlation undefined: zero rank variance")]
    UndefinedCorrelation,
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("date {date} is outside the series range {first}..={last}")]
    DateOutOfRange {
        date: NaiveDate,
        first: NaiveDate,
        last: NaiveDate,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonConvergence { .. } | Error::DegeneratePortfolio | Error::UndefinedCorrelation => {
                ErrorClass::Numeric
            }
            Error::Config(_) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
