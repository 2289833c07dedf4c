//! Reference POIs and the cell labels derived from them.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{cell_of_geo, CellId, GeoPoint, GridSpec};
use crate::ingest::{check_header, csv_reader, ParseMode};

pub const POI_HEADER: [&str; 5] = ["id", "lon", "lat", "code", "category"];

/// Label of a cell holding more than one POI.
pub const MIXED: &str = "mixed";
/// Display label for a cell without any POI.
pub const NO_POI: &str = "NO POI";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub id: String,
    pub pos: GeoPoint,
    pub code: i64,
    pub category: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedPois {
    pub records: Vec<PoiRecord>,
    pub skipped: usize,
}

fn parse_row(rec: &csv::StringRecord) -> std::result::Result<PoiRecord, String> {
    if rec.len() != 5 {
        return Err(format!("expected 5 fields, found {}", rec.len()));
    }
    let id = rec[0].trim();
    if id.is_empty() {
        return Err("empty id".into());
    }
    let lon: f64 = rec[1].trim().parse().map_err(|_| "unparseable lon")?;
    let lat: f64 = rec[2].trim().parse().map_err(|_| "unparseable lat")?;
    let pos = GeoPoint::new(lon, lat).map_err(|e| e.to_string())?;
    let code: i64 = rec[3].trim().parse().map_err(|_| "unparseable code")?;
    let category = rec[4].trim();
    if category.is_empty() {
        return Err("empty category".into());
    }
    if category.eq_ignore_ascii_case(MIXED) || category == NO_POI {
        return Err(format!("category {category:?} is reserved"));
    }
    Ok(PoiRecord {
        id: id.to_string(),
        pos,
        code,
        category: category.to_string(),
    })
}

/// Parse a POI CSV (`id,lon,lat,code,category`).
pub fn load_pois<R: Read>(source: R, mode: ParseMode) -> Result<ParsedPois> {
    let mut reader = csv_reader(source);
    check_header(&mut reader, &POI_HEADER)?;
    let mut out = ParsedPois::default();
    let mut rec = csv::StringRecord::new();
    loop {
        let line = reader.position().line() as usize;
        let parsed = match reader.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => parse_row(&rec),
            Err(e) => Err(e.to_string()),
        };
        match parsed {
            Ok(p) => out.records.push(p),
            Err(msg) if mode == ParseMode::Strict => return Err(Error::format(line, msg)),
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Category per cell, or [`MIXED`] when a cell holds two or more POIs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellLabelMap {
    labels: BTreeMap<CellId, String>,
}

impl CellLabelMap {
    pub fn get(&self, c: CellId) -> Option<&str> {
        self.labels.get(&c).map(String::as_str)
    }

    /// Label for display, [`NO_POI`] when absent.
    pub fn display(&self, c: CellId) -> &str {
        self.get(c).unwrap_or(NO_POI)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellId, &str)> {
        self.labels.iter().map(|(c, l)| (*c, l.as_str()))
    }

    /// Distinct single-POI categories, sorted.
    pub fn categories(&self) -> Vec<String> {
        let mut cats: Vec<String> = self
            .labels
            .values()
            .filter(|l| l.as_str() != MIXED)
            .cloned()
            .collect();
        cats.sort();
        cats.dedup();
        cats
    }
}

pub fn label_cells(pois: &[PoiRecord], grid: &GridSpec) -> Result<CellLabelMap> {
    let mut labels: BTreeMap<CellId, String> = BTreeMap::new();
    for p in pois {
        let c = cell_of_geo(p.pos, grid)?;
        labels
            .entry(c)
            .and_modify(|l| *l = MIXED.to_string())
            .or_insert_with(|| p.category.clone());
    }
    Ok(CellLabelMap { labels })
}
