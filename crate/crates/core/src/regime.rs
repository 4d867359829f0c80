//! Ex-post bull / range / bear segmentation of a price path and the cluster
//! assignment it induces at a given as-of date.
//!
//! The scan is greedy and left to right. A piece starts at an anchor level and
//! grows while every level stays on one side of the anchor (ties are compatible
//! with either side until the first strict move fixes the direction). The first
//! level on the wrong side closes the piece and becomes the next anchor. A piece
//! is a bull segment if its running maximum reached `(1 + λ)·anchor`, a bear
//! segment if its running minimum reached `(1 − λ)·anchor`, and range-bound
//! otherwise. Adjacent range-bound pieces are merged.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::series::PriceSeries;

pub const DEFAULT_LAMBDA: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegimeKind {
    Bull = 1,
    Range = 2,
    Bear = 3,
}

impl RegimeKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::Bull),
            2 => Some(Self::Range),
            3 => Some(Self::Bear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bull => "bull",
            Self::Range => "range",
            Self::Bear => "bear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bull" => Some(Self::Bull),
            "range" => Some(Self::Range),
            "bear" => Some(Self::Bear),
            _ => None,
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One labelled interval of a series, `[start_pos, end_pos]` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSegment {
    pub index_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub start_pos: usize,
    pub end_pos: usize,
    pub kind: RegimeKind,
    pub anchor_level: f64,
    /// End positions of the scan pieces making up the segment, ascending.
    /// Only merged range segments have more than one.
    pub pieces: Vec<usize>,
}

impl RegimeSegment {
    /// Start, end and kind of every scan piece, in order.
    pub fn piece_spans(&self) -> impl Iterator<Item = (usize, usize, RegimeKind)> + '_ {
        let starts = core::iter::once(self.start_pos).chain(self.pieces.iter().map(|e| e + 1));
        starts.zip(self.pieces.iter()).map(|(s, e)| (s, *e, self.kind))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Undecided,
    Up,
    Down,
}

struct Piece {
    start: usize,
    end: usize,
    kind: RegimeKind,
}

fn scan_pieces(levels: &[f64], lambda: f64) -> Vec<Piece> {
    let n = levels.len();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < n {
        let anchor = levels[start];
        let mut dir = Direction::Undecided;
        let (mut hi, mut lo) = (anchor, anchor);
        let mut end = start;
        for (j, &x) in levels.iter().enumerate().skip(start + 1) {
            match dir {
                Direction::Undecided if x > anchor => dir = Direction::Up,
                Direction::Undecided if x < anchor => dir = Direction::Down,
                Direction::Up if x < anchor => break,
                Direction::Down if x > anchor => break,
                _ => {}
            }
            hi = hi.max(x);
            lo = lo.min(x);
            end = j;
        }
        let kind = match dir {
            Direction::Up if hi >= (1.0 + lambda) * anchor => RegimeKind::Bull,
            Direction::Down if lo <= (1.0 - lambda) * anchor => RegimeKind::Bear,
            _ => RegimeKind::Range,
        };
        pieces.push(Piece { start, end, kind });
        start = end + 1;
    }
    pieces
}

/// Segments `series` into an exhaustive, non-overlapping list of regimes.
pub fn label_regimes(series: &PriceSeries, lambda: f64) -> Result<Vec<RegimeSegment>> {
    if !(lambda > 0.0 && lambda < 1.0) {
        bail!(Validation, "lambda must lie in (0, 1), got {lambda}");
    }
    if series.len() < 2 {
        bail!(Validation, "{}: series shorter than 2", series.index_id());
    }
    let levels = series.levels();
    let dates = series.dates();
    let mut out: Vec<RegimeSegment> = Vec::new();
    for p in scan_pieces(levels, lambda) {
        if let Some(last) = out.last_mut() {
            if last.kind == RegimeKind::Range && p.kind == RegimeKind::Range {
                last.end_pos = p.end;
                last.end = dates[p.end];
                last.pieces.push(p.end);
                continue;
            }
        }
        out.push(RegimeSegment {
            index_id: series.index_id().into(),
            start: dates[p.start],
            end: dates[p.end],
            start_pos: p.start,
            end_pos: p.end,
            kind: p.kind,
            anchor_level: levels[p.start],
            pieces: alloc::vec![p.end],
        });
    }
    Ok(out)
}

/// Feature-conditioning cluster: the three concluded regimes plus the whole history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cluster {
    Bull = 1,
    Range = 2,
    Bear = 3,
    Cycle = 4,
}

impl Cluster {
    pub const ALL: [Cluster; 4] = [Cluster::Bull, Cluster::Range, Cluster::Bear, Cluster::Cycle];

    pub fn of(kind: RegimeKind) -> Self {
        match kind {
            RegimeKind::Bull => Cluster::Bull,
            RegimeKind::Range => Cluster::Range,
            RegimeKind::Bear => Cluster::Bear,
        }
    }
}

/// Per-day cluster membership as known at `as_of`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub as_of: NaiveDate,
    /// Dates up to and including `as_of`.
    pub dates: Vec<NaiveDate>,
    /// Concluded regime of each day, `None` while its segment is still open.
    pub regime: Vec<Option<RegimeKind>>,
}

impl ClusterAssignment {
    pub fn contains(&self, pos: usize, cluster: Cluster) -> bool {
        match cluster {
            Cluster::Cycle => pos < self.dates.len(),
            c => self.regime.get(pos).copied().flatten().map(Cluster::of) == Some(c),
        }
    }

    /// Positions belonging to `cluster`, in chronological order.
    pub fn members(&self, cluster: Cluster) -> impl Iterator<Item = usize> + '_ {
        (0..self.dates.len()).filter(move |&p| self.contains(p, cluster))
    }

    pub fn count(&self, cluster: Cluster) -> usize {
        self.members(cluster).count()
    }
}

/// Scan pieces that closed before position `pos`, as `(start, end, kind)`.
///
/// A day's regime is settled once the piece containing it has closed. Piece
/// boundaries never move when later data arrives, so this is the unit of
/// conclusion; a merged range segment can be partly settled.
pub fn concluded_pieces(segments: &[RegimeSegment], pos: usize) -> impl Iterator<Item = (usize, usize, RegimeKind)> + '_ {
    segments
        .iter()
        .take_while(move |s| s.start_pos < pos)
        .flat_map(RegimeSegment::piece_spans)
        .take_while(move |(_, end, _)| *end < pos)
}

/// Assigns days up to `as_of` to clusters. Only days whose regime concluded
/// strictly before `as_of` carry a regime label; the open segment contributes nothing.
pub fn assign_clusters(segments: &[RegimeSegment], dates: &[NaiveDate], as_of: NaiveDate) -> Result<ClusterAssignment> {
    let Some(first) = dates.first() else {
        bail!(Validation, "empty calendar");
    };
    if as_of < *first {
        bail!(Validation, "as-of date {as_of} precedes first date {first}");
    }
    let n = dates.partition_point(|d| *d <= as_of);
    let before = dates.partition_point(|d| *d < as_of);
    let mut regime = alloc::vec![None; n];
    for (start, end, kind) in concluded_pieces(segments, before) {
        for slot in &mut regime[start..=end] {
            *slot = Some(kind);
        }
    }
    Ok(ClusterAssignment {
        as_of,
        dates: dates[..n].to_vec(),
        regime,
    })
}
