//! CSV formats: prices (`date,index_id,level`), drivers (`date,driver_id,value`)
//! the regime export (`index_id,start,end,kind,anchor`) and predictions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use indexcast_core::backtest::PredictionRecord;
use indexcast_core::graph::NodeConfig;
use indexcast_core::regime::RegimeSegment;
use indexcast_core::series::{DriverPanel, PriceSeries};
use indexcast_core::{Error as CoreError, Result as CoreResult};

use crate::error::{Error, Result};

fn parse_error(line: u64, message: impl Into<String>) -> CoreError {
    CoreError::Parse {
        line: line as usize,
        message: message.into(),
    }
}

fn csv_error(e: csv::Error) -> CoreError {
    let line = e.position().map_or(0, |p| p.line());
    parse_error(line, e.to_string())
}

fn reader<R: Read>(r: R, header: &[&str]) -> CoreResult<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let got = rdr.headers().map_err(csv_error)?;
    if got.iter().ne(header.iter().copied()) {
        return Err(parse_error(
            1,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(rdr)
}

fn parse_date(s: &str, line: u64) -> CoreResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| parse_error(line, format!("invalid date {s:?}")))
}

/// One series per distinct `index_id`, ordered by id. Within an id, dates must
/// strictly increase in file order; ids may be interleaved.
pub fn read_prices<R: Read>(r: R) -> CoreResult<Vec<PriceSeries>> {
    let mut rdr = reader(r, &["date", "index_id", "level"])?;
    let mut by_id: BTreeMap<String, (Vec<NaiveDate>, Vec<f64>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = parse_date(&rec[0], line)?;
        let id = &rec[1];
        if id.is_empty() {
            return Err(parse_error(line, "empty index_id"));
        }
        let level: f64 = rec[2]
            .parse()
            .map_err(|_| parse_error(line, format!("invalid level {:?}", &rec[2])))?;
        if !(level > 0.0 && level.is_finite()) {
            return Err(CoreError::Validation(format!(
                "line {line}: level {level} for {id} is not positive and finite"
            )));
        }
        let (dates, levels) = by_id.entry(id.to_string()).or_default();
        if let Some(last) = dates.last() {
            if date == *last {
                return Err(CoreError::Validation(format!("line {line}: duplicate date {date} for {id}")));
            }
            if date < *last {
                return Err(CoreError::Validation(format!("line {line}: date {date} for {id} follows {last}")));
            }
        }
        dates.push(date);
        levels.push(level);
    }
    if by_id.is_empty() {
        return Err(CoreError::Validation("price file has no rows".into()));
    }
    by_id.into_iter().map(|(id, (d, l))| PriceSeries::new(id, d, l)).collect()
}

pub fn write_prices<W: Write>(w: W, series: &[PriceSeries]) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "date,index_id,level")?;
    for s in series {
        for (d, l) in s.dates().iter().zip(s.levels()) {
            writeln!(w, "{d},{},{l:?}", s.index_id())?;
        }
    }
    w.flush()
}

/// Panel of the drivers referenced by `config`, in node order, on the union of
/// the file's dates. An empty, `NA` or `NaN` value is missing and forward-filled.
pub fn read_drivers<R: Read>(r: R, config: &NodeConfig) -> CoreResult<DriverPanel> {
    let mut ids: Vec<String> = Vec::new();
    let mut kinds = Vec::new();
    for node in &config.nodes {
        for id in &node.driver_ids {
            if !ids.contains(id) {
                ids.push(id.clone());
                kinds.push(node.kind);
            }
        }
    }
    let column: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rdr = reader(r, &["date", "driver_id", "value"])?;
    let mut seen = vec![false; ids.len()];
    let mut cells = BTreeMap::new();
    let mut obs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = parse_date(&rec[0], line)?;
        let Some(&c) = column.get(&rec[1]) else { continue };
        let value = match &rec[2] {
            "" | "NA" | "NaN" | "nan" => None,
            v => Some(v.parse::<f64>().map_err(|_| parse_error(line, format!("invalid value {v:?}")))?),
        };
        if cells.insert((date, c), line).is_some() {
            return Err(CoreError::Validation(format!("line {line}: second value for {} on {date}", ids[c])));
        }
        seen[c] = true;
        obs.push((date, c, value));
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(CoreError::Config(format!(
            "driver {:?} referenced by the node config is not in the driver file",
            ids[c]
        )));
    }
    DriverPanel::from_observations(ids, kinds, &obs)
}

pub fn write_drivers<W: Write>(w: W, panel: &DriverPanel) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "date,driver_id,value")?;
    for (r, d) in panel.dates().iter().enumerate() {
        for (id, v) in panel.driver_ids().iter().zip(panel.values().row(r)) {
            writeln!(w, "{d},{id},{v:?}")?;
        }
    }
    w.flush()
}

pub fn write_regimes<W: Write>(w: W, segments: &[Vec<RegimeSegment>]) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "index_id,start,end,kind,anchor")?;
    for s in segments.iter().flatten() {
        writeln!(w, "{},{},{},{},{:?}", s.index_id, s.start, s.end, s.kind, s.anchor_level)?;
    }
    w.flush()
}

/// `month,index_id,prob_up,label`; `ids[r.index]` names each row's index.
pub fn write_predictions<W: Write>(w: W, records: &[PredictionRecord], ids: &[&str]) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "month,index_id,prob_up,label")?;
    for r in records {
        writeln!(w, "{},{},{:?},{}", r.month, ids[r.index], r.prob_up, r.label)?;
    }
    w.flush()
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(Error::io(path))
}

pub fn load_prices(path: &Path) -> Result<Vec<PriceSeries>> {
    read_prices(open(path)?).map_err(Error::input(path))
}

pub fn load_drivers(path: &Path, config: &NodeConfig) -> Result<DriverPanel> {
    read_drivers(open(path)?, config).map_err(Error::input(path))
}

pub fn load_node_config(path: &Path) -> Result<NodeConfig> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    NodeConfig::parse(&text).map_err(Error::input(path))
}
