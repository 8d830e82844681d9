//! Wide-CSV panel ingestion and CSV emission.
//!
//! Panel layout: a header row `date,<unit id>,<unit id>,...`, then one row per
//! period with an ISO-8601 date in the first column. Roster layout: columns
//! `unit_id,treated` with `treated` in `{0, 1}`.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_model::PanelData;

/// What the cells of a panel file hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelKind {
    Prices,
    Returns,
}

/// Parsed wide panel before alignment with a roster.
#[derive(Debug, Clone, PartialEq)]
pub struct WidePanel {
    pub dates: Vec<String>,
    pub unit_ids: Vec<String>,
    /// `periods x units`.
    pub values: DMatrix<f64>,
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter().enumerate().all(|(k, c)| k == 4 || k == 7 || c.is_ascii_digit())
}

/// Parse a wide panel CSV. Dates must be ISO-8601 (`YYYY-MM-DD`) and strictly
/// increasing; every cell must parse as a finite number.
pub fn read_wide_csv(path: &Path) -> Result<WidePanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Data(format!("{}: header needs a date column and at least one unit", path.display())));
    }
    let unit_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for id in &unit_ids {
        if id.is_empty() {
            return Err(Error::Data(format!("{}: empty unit id in header", path.display())));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("{}: duplicate unit id {id}", path.display())));
        }
    }
    let n = unit_ids.len();
    let mut dates: Vec<String> = Vec::new();
    let mut cells: Vec<f64> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let date = rec.get(0).unwrap_or("").trim().to_string();
        if !is_iso_date(&date) {
            return Err(Error::Data(format!("{}: row {row}: unparsable date {date:?}", path.display())));
        }
        if let Some(prev) = dates.last() {
            if date.as_str() <= prev.as_str() {
                return Err(Error::Data(format!(
                    "{}: row {row}: dates not strictly increasing ({prev} then {date})",
                    path.display()
                )));
            }
        }
        if rec.len() != n + 1 {
            return Err(Error::Data(format!(
                "{}: row {row}: expected {} cells, found {}",
                path.display(),
                n + 1,
                rec.len()
            )));
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::Data(format!(
                    "{}: row {row}, column {}: missing value for unit {}",
                    path.display(),
                    j + 2,
                    unit_ids[j]
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {row}, column {}: unparsable value {cell:?}",
                    path.display(),
                    j + 2
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: row {row}, column {}: non-finite value {cell:?}",
                    path.display(),
                    j + 2
                )));
            }
            cells.push(v);
        }
        dates.push(date);
    }
    if dates.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let values = DMatrix::from_row_slice(dates.len(), n, &cells);
    Ok(WidePanel { dates, unit_ids, values })
}

/// Parse a roster CSV into `unit id -> treated`.
pub fn read_roster(path: &Path) -> Result<HashMap<String, bool>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let (id_col, z_col) = match (col("unit_id"), col("treated")) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Data(format!(
                "{}: roster needs columns unit_id and treated",
                path.display()
            )))
        }
    };
    let mut out = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        let z = match rec.get(z_col).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(Error::Data(format!(
                    "{}: row {row}: treated must be 0 or 1, got {:?}",
                    path.display(),
                    other.unwrap_or("")
                )))
            }
        };
        if out.insert(id.clone(), z).is_some() {
            return Err(Error::Data(format!("{}: duplicate roster entry {id}", path.display())));
        }
    }
    Ok(out)
}

/// Align a wide panel with a roster and cut it at `treatment_time`.
///
/// Rows after the treatment date are ignored. For prices, the row before the
/// first return is only used as the base of that return.
pub fn panel_from_wide(
    wide: &WidePanel,
    roster: &HashMap<String, bool>,
    treatment_time: &str,
    kind: PanelKind,
) -> Result<PanelData> {
    let missing: Vec<&str> = wide
        .unit_ids
        .iter()
        .filter(|id| !roster.contains_key(id.as_str()))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("units missing from roster: {}", missing.join(", "))));
    }
    let mut extra: Vec<&str> = roster
        .keys()
        .filter(|id| !wide.unit_ids.contains(id))
        .map(String::as_str)
        .collect();
    if !extra.is_empty() {
        extra.sort_unstable();
        return Err(Error::Data(format!("roster units absent from panel: {}", extra.join(", "))));
    }
    let end = wide
        .dates
        .iter()
        .position(|d| d == treatment_time)
        .ok_or_else(|| Error::Data(format!("treatment date {treatment_time} not found in panel")))?;
    let treated: Vec<bool> = wide.unit_ids.iter().map(|id| roster[id]).collect();
    let rows = wide.values.rows(0, end + 1).into_owned();
    match kind {
        PanelKind::Prices => PanelData::from_prices(&rows, treated, wide.unit_ids.clone(), wide.dates[1..=end].to_vec()),
        PanelKind::Returns => PanelData::from_returns(rows, treated, wide.unit_ids.clone(), wide.dates[..=end].to_vec()),
    }
}

/// Read a panel file and a roster file into a prepared [`PanelData`].
pub fn load_panel(panel_path: &Path, roster_path: &Path, treatment_time: &str, kind: PanelKind) -> Result<PanelData> {
    let wide = read_wide_csv(panel_path)?;
    let roster = read_roster(roster_path)?;
    panel_from_wide(&wide, &roster, treatment_time, kind)
}

/// Format a float so it parses back to the same value, independent of locale.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Write a wide panel in the format [`read_wide_csv`] accepts.
pub fn write_wide_csv(path: &Path, wide: &WidePanel) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(wide.unit_ids.iter().cloned());
    w.write_record(&header)?;
    for (t, date) in wide.dates.iter().enumerate() {
        let mut rec = vec![date.clone()];
        rec.extend(wide.values.row(t).iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a `unit_id,treated` roster.
pub fn write_roster(path: &Path, unit_ids: &[String], treated: &[bool]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit_id", "treated"])?;
    for (id, &z) in unit_ids.iter().zip(treated) {
        w.write_record([id.as_str(), if z { "1" } else { "0" }])?;
    }
    w.flush()?;
    Ok(())
}

/// Write serializable rows as CSV with a header.
pub fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a header and pre-formatted string rows.
pub fn write_table<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn iso_dates() {
        assert!(is_iso_date("2016-03-31"));
        assert!(!is_iso_date("31/03/2016"));
        assert!(!is_iso_date("2016-3-31"));
    }

    #[test]
    fn error_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "p.csv", "date,a,b\n2000-01-01,1,2\n2000-02-01,3,x\n");
        let msg = read_wide_csv(&p).unwrap_err().to_string();
        assert!(msg.contains("row 3") && msg.contains("column 3"), "{msg}");
    }

    #[test]
    fn rejects_duplicates_order_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write(dir.path(), "d.csv", "date,a,a\n2000-01-01,1,2\n");
        assert!(read_wide_csv(&dup).unwrap_err().to_string().contains("duplicate unit id a"));
        let order = write(dir.path(), "o.csv", "date,a\n2000-02-01,1\n2000-01-01,2\n");
        assert!(read_wide_csv(&order).unwrap_err().to_string().contains("not strictly increasing"));
        let gap = write(dir.path(), "g.csv", "date,a,b\n2000-01-01,1,\n");
        assert!(read_wide_csv(&gap).unwrap_err().to_string().contains("missing value for unit b"));
    }

    #[test]
    fn roster_validation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(dir.path(), "r.csv", "unit_id,treated\na,2\n");
        assert!(read_roster(&bad).is_err());
        let no_cols = write(dir.path(), "r2.csv", "id,z\na,1\n");
        assert!(read_roster(&no_cols).is_err());
    }

    #[test]
    fn fmt_roundtrips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 123456789.125, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
