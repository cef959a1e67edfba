//! Calendar quarters and quarter arithmetic.
//!
//! Quarters are `(year, 1..=4)` and map onto a dense ordinal so that
//! differences between quarters are plain integer subtraction.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};

use crate::error::ParseError;

/// A calendar quarter such as `2020Q1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    year: i32,
    q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self, ParseError> {
        if !(1..=4).contains(&q) {
            return Err(ParseError::Quarter(format!("{year}Q{q}")));
        }
        Ok(Self { year, q })
    }

    /// Compile-time constructor; panics on an invalid quarter number.
    pub const fn of(year: i32, q: u8) -> Self {
        assert!(q >= 1 && q <= 4, "quarter number must be 1..=4");
        Self { year, q }
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.q
    }

    /// Dense ordinal: consecutive quarters differ by one.
    pub fn ordinal(self) -> i64 {
        i64::from(self.year) * 4 + i64::from(self.q) - 1
    }

    pub fn from_ordinal(ord: i64) -> Self {
        let year = ord.div_euclid(4) as i32;
        let q = (ord.rem_euclid(4) + 1) as u8;
        Self { year, q }
    }

    pub fn of_date(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            q: ((date.month() - 1) / 3 + 1) as u8,
        }
    }

    pub fn first_day(self) -> NaiveDate {
        let month = u32::from(self.q - 1) * 3 + 1;
        NaiveDate::from_ymd_opt(self.year, month, 1).expect("valid quarter start")
    }

    pub fn last_day(self) -> NaiveDate {
        self.offset(1)
            .first_day()
            .pred_opt()
            .expect("quarter end is representable")
    }

    /// The quarter `n` steps later (earlier when negative).
    pub fn offset(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    /// Number of quarters from `earlier` to `self`.
    pub fn since(self, earlier: Quarter) -> i64 {
        self.ordinal() - earlier.ordinal()
    }

    /// Development quarter of a report in `report` for an occurrence in
    /// `self`, counting the occurrence quarter as DQ 1.
    pub fn dev_quarter(self, report: Quarter) -> i64 {
        report.since(self) + 1
    }

    /// Inclusive range of quarters.
    pub fn range_inclusive(from: Quarter, to: Quarter) -> impl Iterator<Item = Quarter> {
        (from.ordinal()..=to.ordinal()).map(Quarter::from_ordinal)
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

impl FromStr for Quarter {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || ParseError::Quarter(s.to_string());
        let (y, q) = t
            .split_once(['Q', 'q'])
            .ok_or_else(bad)?;
        if y.len() != 4 || q.len() != 1 {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        let q: u8 = q.parse().map_err(|_| bad())?;
        Quarter::new(year, q).map_err(|_| bad())
    }
}

/// Closed window of quarters `[first, last]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuarterRange {
    pub first: Quarter,
    pub last: Quarter,
}

impl QuarterRange {
    pub fn new(first: Quarter, last: Quarter) -> Self {
        Self { first, last }
    }

    pub fn contains(&self, q: Quarter) -> bool {
        self.first <= q && q <= self.last
    }

    pub fn len(&self) -> usize {
        (self.last.since(self.first) + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Quarter> {
        Quarter::range_inclusive(self.first, self.last)
    }
}

impl fmt::Display for QuarterRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first, self.last)
    }
}

impl FromStr for QuarterRange {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(['-', ':'])
            .ok_or_else(|| ParseError::Quarter(s.to_string()))?;
        Ok(Self::new(a.parse()?, b.parse()?))
    }
}
