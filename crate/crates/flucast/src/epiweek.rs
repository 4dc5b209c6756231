//! ISO-8601 epidemiological week arithmetic.
//!
//! Weekly surveillance data is indexed by (year, week) where `week` follows
//! ISO week numbering: a year has 52 or 53 weeks depending on where its
//! Thursdays fall.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::FlucastError;

/// An ISO week-of-year calendar coordinate, the panel's time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpiWeek {
    year: i32,
    week: u32,
}

/// Day-of-week of January 1st, as an offset where 0 = Monday.
fn jan1_weekday(year: i32) -> i32 {
    // Zeller-style: day of week for Jan 1 via Gauss's formula.
    let y = year - 1;
    let dow = (1 + 5 * (y.rem_euclid(4)) + 4 * (y.rem_euclid(100)) + 6 * (y.rem_euclid(400)))
        .rem_euclid(7);
    // dow: 0 = Sunday. Convert to 0 = Monday.
    (dow + 6) % 7
}

fn is_leap(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

/// Number of ISO weeks in `year`: 53 iff Jan 1 is a Thursday, or the year is
/// a leap year and Jan 1 is a Wednesday.
pub fn weeks_in_year(year: i32) -> u32 {
    let jan1 = jan1_weekday(year);
    if jan1 == 3 || (is_leap(year) && jan1 == 2) {
        53
    } else {
        52
    }
}

impl EpiWeek {
    pub fn new(year: i32, week: u32) -> Result<Self, FlucastError> {
        if week < 1 || week > weeks_in_year(year) {
            return Err(FlucastError::InvalidWeek { year, week });
        }
        Ok(Self { year, week })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn week(&self) -> u32 {
        self.week
    }

    pub fn succ(&self) -> Self {
        if self.week < weeks_in_year(self.year) {
            Self { year: self.year, week: self.week + 1 }
        } else {
            Self { year: self.year + 1, week: 1 }
        }
    }

    pub fn pred(&self) -> Self {
        if self.week > 1 {
            Self { year: self.year, week: self.week - 1 }
        } else {
            Self { year: self.year - 1, week: weeks_in_year(self.year - 1) }
        }
    }

    /// Weeks from an (arbitrary) epoch; differences are week counts.
    pub fn index(&self) -> i64 {
        let mut total: i64 = 0;
        if self.year >= 2000 {
            for y in 2000..self.year {
                total += weeks_in_year(y) as i64;
            }
        } else {
            for y in self.year..2000 {
                total -= weeks_in_year(y) as i64;
            }
        }
        total + self.week as i64 - 1
    }

    /// Number of weeks from `self` to `other` (positive if `other` is later).
    pub fn weeks_until(&self, other: &EpiWeek) -> i64 {
        other.index() - self.index()
    }

    pub fn add_weeks(&self, n: i64) -> Self {
        let mut w = *self;
        if n >= 0 {
            for _ in 0..n {
                w = w.succ();
            }
        } else {
            for _ in 0..(-n) {
                w = w.pred();
            }
        }
        w
    }

    /// Inclusive iterator over [self, end].
    pub fn range_inclusive(self, end: EpiWeek) -> impl Iterator<Item = EpiWeek> {
        let n = if end >= self { self.weeks_until(&end) + 1 } else { 0 };
        std::iter::successors(Some(self), |w| Some(w.succ())).take(n as usize)
    }
}

impl fmt::Display for EpiWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

impl FromStr for EpiWeek {
    type Err = FlucastError;

    /// Accepts `2010-W05`, `2010W05`, and `2010W5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FlucastError::InvalidWeekString(s.to_string());
        let up = s.trim().to_ascii_uppercase();
        let (y, w) = up.split_once("-W").or_else(|| up.split_once('W')).ok_or_else(bad)?;
        let year: i32 = y.parse().map_err(|_| bad())?;
        let week: u32 = w.parse().map_err(|_| bad())?;
        EpiWeek::new(year, week).map_err(|_| bad())
    }
}
