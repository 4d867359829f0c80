//! Price histories, driver panels and the month-end calendar derived from them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::linalg::Matrix;

/// Default trailing window, in trading days.
pub const DEFAULT_WINDOW: usize = 21;

/// Calendar month, ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        debug_assert!((1..=12).contains(&month));
        Self { year, month }
    }

    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    /// Months since year 0, usable as a dense ordinal.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(12) as i32,
            month: ord.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn succ(self) -> Self {
        Self::from_ordinal(self.ordinal() + 1)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl core::str::FromStr for YearMonth {
    type Err = Error;

    /// Accepts `YYYY-MM`.
    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| Error::Validation(alloc::format!("expected YYYY-MM, got {s:?}")))?;
        let year: i32 = y.parse().map_err(|_| Error::Validation(alloc::format!("bad year in {s:?}")))?;
        let month: u32 = m.parse().map_err(|_| Error::Validation(alloc::format!("bad month in {s:?}")))?;
        if !(1..=12).contains(&month) {
            bail!(Validation, "month out of range in {s:?}");
        }
        Ok(Self { year, month })
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Daily level history of one market index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    index_id: String,
    dates: Vec<NaiveDate>,
    levels: Vec<f64>,
}

impl PriceSeries {
    pub fn new(index_id: impl Into<String>, dates: Vec<NaiveDate>, levels: Vec<f64>) -> Result<Self> {
        let index_id = index_id.into();
        if dates.len() != levels.len() {
            bail!(Validation, "{index_id}: {} dates but {} levels", dates.len(), levels.len());
        }
        if dates.len() < 2 {
            bail!(Validation, "{index_id}: series needs at least 2 observations, got {}", dates.len());
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            bail!(Validation, "{index_id}: dates not strictly increasing at {} -> {}", w[0], w[1]);
        }
        if let Some((d, l)) = dates.iter().zip(&levels).find(|(_, l)| !(l.is_finite() && **l > 0.0)) {
            bail!(Validation, "{index_id}: level {l} on {d} is not strictly positive and finite");
        }
        Ok(Self { index_id, dates, levels })
    }

    pub fn index_id(&self) -> &str {
        &self.index_id
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Position of the last observation on or before `date`.
    pub fn position_at_or_before(&self, date: NaiveDate) -> Option<usize> {
        self.dates.partition_point(|d| *d <= date).checked_sub(1)
    }

    /// Observations up to and including `date`. `None` if fewer than two remain.
    pub fn truncated(&self, date: NaiveDate) -> Option<PriceSeries> {
        let n = self.dates.partition_point(|d| *d <= date);
        (n >= 2).then(|| PriceSeries {
            index_id: self.index_id.clone(),
            dates: self.dates[..n].to_vec(),
            levels: self.levels[..n].to_vec(),
        })
    }
}

/// Last trading day of a calendar month plus the trailing window ending on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthBoundary {
    pub month: YearMonth,
    pub date: NaiveDate,
    /// Position of `date` in the owning series.
    pub end: usize,
    /// Window length in trading days.
    pub window: usize,
}

impl MonthBoundary {
    /// First position of the trailing window.
    pub fn window_start(&self) -> usize {
        self.end + 1 - self.window
    }
}

/// Month-end boundaries of `dates` that have at least `window + 1` observations of history,
/// so both the window and its returns are defined.
pub fn month_boundaries(dates: &[NaiveDate], window: usize) -> Result<Vec<MonthBoundary>> {
    if window == 0 {
        bail!(Validation, "window must be positive");
    }
    let mut out = Vec::new();
    for (pos, date) in dates.iter().enumerate() {
        let last_of_month = dates.get(pos + 1).is_none_or(|next| YearMonth::of(*next) != YearMonth::of(*date));
        if last_of_month && pos >= window {
            out.push(MonthBoundary {
                month: YearMonth::of(*date),
                date: *date,
                end: pos,
                window,
            });
        }
    }
    Ok(out)
}

/// Whether a driver is an ordinary numeric series or a pre-embedded text vector component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DriverKind {
    Structured,
    Unstructured,
}

impl fmt::Display for DriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriverKind::Structured => "structured",
            DriverKind::Unstructured => "unstructured",
        })
    }
}

/// Daily panel of raw drivers, one row per date and one column per driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverPanel {
    driver_ids: Vec<String>,
    kinds: Vec<DriverKind>,
    dates: Vec<NaiveDate>,
    values: Matrix,
}

impl DriverPanel {
    pub fn new(driver_ids: Vec<String>, kinds: Vec<DriverKind>, dates: Vec<NaiveDate>, values: Matrix) -> Result<Self> {
        if kinds.len() != driver_ids.len() {
            bail!(Validation, "{} driver ids but {} kinds", driver_ids.len(), kinds.len());
        }
        if values.rows() != dates.len() || values.cols() != driver_ids.len() {
            bail!(
                Validation,
                "panel is {}x{} but has {} dates and {} drivers",
                values.rows(),
                values.cols(),
                dates.len(),
                driver_ids.len()
            );
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            bail!(Validation, "panel dates not strictly increasing");
        }
        if let Some(i) = values.as_slice().iter().position(|v| !v.is_finite()) {
            let (r, c) = (i / values.cols(), i % values.cols());
            bail!(Validation, "non-finite value for driver {} on {}", driver_ids[c], dates[r]);
        }
        let mut seen = BTreeMap::new();
        for id in &driver_ids {
            if seen.insert(id.as_str(), ()).is_some() {
                bail!(Validation, "duplicate driver id {id}");
            }
        }
        Ok(Self {
            driver_ids,
            kinds,
            dates,
            values,
        })
    }

    /// Builds a panel from sparse `(date, column, value)` observations on the union of their dates.
    /// A `None` value marks a missing cell. Gaps are carried forward from the last observation;
    /// leading gaps take the first observation.
    pub fn from_observations(
        driver_ids: Vec<String>,
        kinds: Vec<DriverKind>,
        observations: &[(NaiveDate, usize, Option<f64>)],
    ) -> Result<Self> {
        let cols = driver_ids.len();
        let mut by_date: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
        for &(date, col, value) in observations {
            if col >= cols {
                bail!(Validation, "observation column {col} out of range");
            }
            if value.is_some_and(|v| !v.is_finite()) {
                bail!(Validation, "non-finite value for driver {} on {date}", driver_ids[col]);
            }
            let row = by_date.entry(date).or_insert_with(|| vec![None; cols]);
            if value.is_some() {
                row[col] = value;
            }
        }
        let dates: Vec<NaiveDate> = by_date.keys().copied().collect();
        let mut values = Matrix::zeros(dates.len(), cols);
        for c in 0..cols {
            let first = by_date.values().find_map(|row| row[c]);
            let Some(first) = first else {
                bail!(Validation, "driver {} has no observations", driver_ids[c]);
            };
            let mut last = first;
            for (r, row) in by_date.values().enumerate() {
                if let Some(v) = row[c] {
                    last = v;
                }
                values[(r, c)] = last;
            }
        }
        Self::new(driver_ids, kinds, dates, values)
    }

    pub fn driver_ids(&self) -> &[String] {
        &self.driver_ids
    }

    pub fn kinds(&self) -> &[DriverKind] {
        &self.kinds
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn column_of(&self, driver_id: &str) -> Option<usize> {
        self.driver_ids.iter().position(|d| d == driver_id)
    }

    /// Re-indexes the panel onto `dates` using the last panel row on or before each date.
    /// Dates before the first panel row take the first row.
    pub fn align_to(&self, dates: &[NaiveDate]) -> Result<DriverPanel> {
        if self.dates.is_empty() {
            bail!(Validation, "cannot align an empty panel");
        }
        let cols = self.driver_ids.len();
        let mut values = Matrix::zeros(dates.len(), cols);
        for (r, d) in dates.iter().enumerate() {
            let src = self.dates.partition_point(|x| x <= d).saturating_sub(1);
            values.row_mut(r).copy_from_slice(self.values.row(src));
        }
        DriverPanel::new(self.driver_ids.clone(), self.kinds.clone(), dates.to_vec(), values)
    }

    /// Columns for `driver_ids`, in that order.
    pub fn select(&self, driver_ids: &[String]) -> Result<Matrix> {
        let cols: Vec<usize> = driver_ids
            .iter()
            .map(|id| {
                self.column_of(id)
                    .ok_or_else(|| Error::Config(alloc::format!("driver {id:?} not in panel")))
            })
            .collect::<Result<_>>()?;
        let mut m = Matrix::zeros(self.dates.len(), cols.len());
        for r in 0..self.dates.len() {
            let src = self.values.row(r);
            for (j, &c) in cols.iter().enumerate() {
                m[(r, j)] = src[c];
            }
        }
        Ok(m)
    }

    /// Rows dated on or before `date`.
    pub fn truncated(&self, date: NaiveDate) -> DriverPanel {
        let n = self.dates.partition_point(|d| *d <= date);
        DriverPanel {
            driver_ids: self.driver_ids.clone(),
            kinds: self.kinds.clone(),
            dates: self.dates[..n].to_vec(),
            values: self.values.slice_rows(0, n),
        }
    }
}

impl fmt::Display for PriceSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} obs)", self.index_id, self.len())
    }
}

#[cfg(test)]
pub(crate) fn ids(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| String::from(*s)).collect()
}
