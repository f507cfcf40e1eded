//! Reader and writer for the recorder CSV layout.

use std::path::Path;

use chrono::NaiveDate;

use crate::domain::{Dataset, FlightSample};
use crate::error::{Error, Result};

/// Mandatory header, in canonical order.
pub const QAR_COLUMNS: [&str; 12] = [
    "tail_id",
    "flight_id",
    "date",
    "t_s",
    "pressure_alt_ft",
    "tas_kt",
    "ground_speed_kt",
    "vertical_speed_fpm",
    "sat_k",
    "mass_kg",
    "age_yr",
    "fuel_flow_kgh",
];

/// Optional trailing column carrying the derived acceleration.
pub const ACCEL_COLUMN: &str = "dtas_dt_kt_s";

/// Outcome of reading a recorder CSV.
#[derive(Debug, Clone)]
pub struct ParsedCsv {
    pub dataset: Dataset,
    /// Rows dropped because a value was non-finite or out of range.
    pub rejected: usize,
}

pub fn parse_qar_csv(path: &Path) -> Result<ParsedCsv> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_qar_reader(file, &path.display().to_string())
}

pub fn parse_qar_reader(reader: impl std::io::Read, provenance: &str) -> Result<ParsedCsv> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let index = |name: &str| headers.iter().position(|h| h == name);
    let mut cols = [0usize; 12];
    for (slot, name) in cols.iter_mut().zip(QAR_COLUMNS) {
        *slot = index(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let accel_col = index(ACCEL_COLUMN);

    let mut samples = Vec::new();
    let mut rejected = 0usize;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let num = |col: usize, name: &str| -> Result<f64> {
            let raw = field(col);
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: name.to_string(),
                value: raw.to_string(),
            })
        };
        let optional = |col: usize, name: &str| -> Result<Option<f64>> {
            if field(col).is_empty() {
                Ok(None)
            } else {
                num(col, name).map(Some)
            }
        };
        let date_raw = field(cols[2]);
        let date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d").map_err(|_| Error::Parse {
            line,
            column: "date".into(),
            value: date_raw.to_string(),
        })?;
        let sample = FlightSample {
            tail_id: field(cols[0]).to_string(),
            flight_id: field(cols[1]).to_string(),
            date,
            t: num(cols[3], QAR_COLUMNS[3])?,
            pressure_alt: num(cols[4], QAR_COLUMNS[4])?,
            tas: num(cols[5], QAR_COLUMNS[5])?,
            ground_speed: num(cols[6], QAR_COLUMNS[6])?,
            vertical_speed: num(cols[7], QAR_COLUMNS[7])?,
            sat: num(cols[8], QAR_COLUMNS[8])?,
            mass: num(cols[9], QAR_COLUMNS[9])?,
            age: num(cols[10], QAR_COLUMNS[10])?,
            fuel_flow: optional(cols[11], QAR_COLUMNS[11])?,
            dtas_dt: match accel_col {
                Some(c) => optional(c, ACCEL_COLUMN)?,
                None => None,
            },
        };
        if sample.validate().is_err() {
            rejected += 1;
            continue;
        }
        samples.push(sample);
    }
    if samples.is_empty() && rejected == 0 {
        return Err(Error::EmptyDataset);
    }
    if rejected > 0 {
        log::warn!("{provenance}: rejected {rejected} rows with non-finite or out-of-range values");
    }

    samples.sort_by(|a, b| {
        (a.tail_id.as_str(), a.flight_id.as_str())
            .cmp(&(b.tail_id.as_str(), b.flight_id.as_str()))
            .then(a.t.total_cmp(&b.t))
    });
    let dataset = Dataset::new(samples, provenance);
    for (key, range) in dataset.flight_ranges() {
        let flight = &dataset.samples[range];
        for w in flight.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::Data(format!(
                    "flight {}/{} has repeated timestamp t = {}",
                    key.tail_id, key.flight_id, w[1].t
                )));
            }
            if w[1].date != w[0].date {
                return Err(Error::Data(format!(
                    "flight {}/{} spans several dates",
                    key.tail_id, key.flight_id
                )));
            }
        }
    }
    Ok(ParsedCsv { dataset, rejected })
}

/// Writes the recorder layout; the acceleration column is appended when
/// any sample carries it.
pub fn write_qar_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_qar_writer(std::io::BufWriter::new(file), ds)
}

pub fn write_qar_writer(writer: impl std::io::Write, ds: &Dataset) -> Result<()> {
    let with_accel = ds.samples.iter().any(|s| s.dtas_dt.is_some());
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let mut header: Vec<&str> = QAR_COLUMNS.to_vec();
    if with_accel {
        header.push(ACCEL_COLUMN);
    }
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &ds.samples {
        let mut row = vec![
            s.tail_id.clone(),
            s.flight_id.clone(),
            s.date.format("%Y-%m-%d").to_string(),
            s.t.to_string(),
            s.pressure_alt.to_string(),
            s.tas.to_string(),
            s.ground_speed.to_string(),
            s.vertical_speed.to_string(),
            s.sat.to_string(),
            s.mass.to_string(),
            s.age.to_string(),
            opt(s.fuel_flow),
        ];
        if with_accel {
            row.push(opt(s.dtas_dt));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
