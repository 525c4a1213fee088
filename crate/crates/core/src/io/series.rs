//! CSV time series: drive cycles (`time_s,current_A[,amb_temp_K]`) and
//! measurements (`time_s,voltage_V,surf_temp_K`).
//!
//! Lines starting with `#` are comments; writers use them to record the
//! producing config hash. Data rows are numbered from 1, header excluded.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::OutputSample;
use crate::sim::{CycleSample, DriveCycle, MeasurementSeries};

pub const CYCLE_HEADER: [&str; 3] = ["time_s", "current_A", "amb_temp_K"];
pub const MEASUREMENT_HEADER: [&str; 3] = ["time_s", "voltage_V", "surf_temp_K"];

/// Relative tolerance when pairing measurement and cycle time stamps.
const PAIRING_RTOL: f64 = 1e-9;

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source)
}

fn csv_error(e: csv::Error) -> Error {
    let location = e
        .position()
        .map(|p| format!("line {}", p.line()))
        .unwrap_or_else(|| "input".into());
    Error::parse(location, e.to_string())
}

fn check_header(found: &csv::StringRecord, expected: &[&str], optional_last: bool) -> Result<usize> {
    let n = found.len();
    let min = if optional_last { expected.len() - 1 } else { expected.len() };
    if n == 0 {
        return Err(Error::parse("row 1", "empty file"));
    }
    if n < min || n > expected.len() {
        return Err(Error::parse(
            "header",
            format!("expected `{}`, found `{}`", expected.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    for (col, (got, want)) in found.iter().zip(expected).enumerate() {
        if got != *want {
            return Err(Error::parse(
                format!("header column {}", col + 1),
                format!("expected `{want}`, found `{got}`"),
            ));
        }
    }
    Ok(n)
}

/// Reads every data row as numbers, checking the column count.
fn numeric_rows<R: Read>(rdr: &mut csv::Reader<R>, header: &[&str], columns: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(csv_error)?;
        if record.len() != columns {
            return Err(Error::parse(
                format!("row {row}"),
                format!("expected {columns} fields, found {}", record.len()),
            ));
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::parse(
                            format!("row {row}, column {}", header[c]),
                            format!("`{cell}` is not a finite number"),
                        )
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::parse("row 1", "no data rows"));
    }
    Ok(rows)
}

/// First data row (1-based) whose time stamp breaks uniform spacing.
fn spacing_row(times: &[f64]) -> Option<usize> {
    crate::sim::cycle::spacing_violation(times.iter().copied()).map(|k| k + 1)
}

/// Parses a drive cycle. Without an ambient column every sample takes
/// `default_ambient`; its absence is then an error.
pub fn parse_drive_cycle<R: Read>(
    source: R,
    default_ambient: Option<f64>,
    max_current: f64,
) -> Result<DriveCycle> {
    let mut rdr = reader(source);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let columns = check_header(&header, &CYCLE_HEADER, true)?;
    let rows = numeric_rows(&mut rdr, &CYCLE_HEADER, columns)?;
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    if let Some(row) = spacing_row(&times) {
        return Err(Error::parse(format!("row {row}"), format!("non-uniform spacing at row {row}")));
    }
    let ambient = match (columns, default_ambient) {
        (3, _) => None,
        (_, Some(t)) => Some(t),
        (_, None) => {
            return Err(Error::parse(
                "header",
                "no amb_temp_K column and no ambient temperature configured",
            ))
        }
    };
    let mut samples = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        let amb = ambient.unwrap_or(r.get(2).copied().unwrap_or(f64::NAN));
        if !(amb > 0.0) {
            return Err(Error::parse(
                format!("row {}, column amb_temp_K", k + 1),
                format!("ambient temperature must be positive, got {amb}"),
            ));
        }
        if r[1].abs() > max_current {
            return Err(Error::parse(
                format!("row {}, column current_A", k + 1),
                format!("|I| = {} exceeds the {max_current} A limit", r[1].abs()),
            ));
        }
        samples.push(CycleSample {
            time: r[0],
            current: r[1],
            ambient: amb,
        });
    }
    DriveCycle::new(samples, max_current)
}

fn write_comments<W: Write>(sink: &mut W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(sink, "# {c}")?;
    }
    Ok(())
}

/// Writes a cycle with the ambient column. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_drive_cycle<W: Write>(cycle: &DriveCycle, mut sink: W, comments: &[String]) -> Result<()> {
    write_comments(&mut sink, comments)?;
    writeln!(sink, "{}", CYCLE_HEADER.join(","))?;
    for s in cycle.samples() {
        writeln!(sink, "{:?},{:?},{:?}", s.time, s.current, s.ambient)?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_measurements<R: Read>(source: R) -> Result<MeasurementSeries> {
    let mut rdr = reader(source);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let columns = check_header(&header, &MEASUREMENT_HEADER, false)?;
    let rows = numeric_rows(&mut rdr, &MEASUREMENT_HEADER, columns)?;
    let (times, samples) = rows
        .into_iter()
        .map(|r| {
            (
                r[0],
                OutputSample {
                    voltage: r[1],
                    surf_temp: r[2],
                },
            )
        })
        .unzip();
    MeasurementSeries::new(times, samples)
}

/// Writes a measurement series; an empty series yields a header-only file.
pub fn write_measurements<W: Write>(
    series: &MeasurementSeries,
    mut sink: W,
    comments: &[String],
) -> Result<()> {
    write_comments(&mut sink, comments)?;
    writeln!(sink, "{}", MEASUREMENT_HEADER.join(","))?;
    for (t, y) in series.times.iter().zip(&series.samples) {
        writeln!(sink, "{:?},{:?},{:?}", t, y.voltage, y.surf_temp)?;
    }
    sink.flush()?;
    Ok(())
}

/// Checks that a measurement series belongs to `cycle`: same length and
/// matching time stamps.
pub fn pair_with_cycle(series: &MeasurementSeries, cycle: &DriveCycle) -> Result<()> {
    if series.len() != cycle.len() {
        return Err(Error::LengthMismatch(format!(
            "{} measurement rows for a drive cycle of {} samples",
            series.len(),
            cycle.len()
        )));
    }
    for (k, (t, s)) in series.times.iter().zip(cycle.samples()).enumerate() {
        if (t - s.time).abs() > PAIRING_RTOL * s.time.abs().max(1.0) {
            return Err(Error::LengthMismatch(format!(
                "measurement row {} is at t = {t} s but the cycle sample is at {} s",
                k + 1,
                s.time
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows_give_unit_spacing() {
        let text = "time_s,current_A,amb_temp_K\n0,1.0,298\n1,-1.0,298\n2,0,298\n";
        let c = parse_drive_cycle(text.as_bytes(), None, 4.0).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.dt(), 1.0);
    }

    #[test]
    fn non_uniform_spacing_names_the_row() {
        let text = "time_s,current_A\n0,0\n1,0\n2.5,0\n";
        let err = parse_drive_cycle(text.as_bytes(), Some(298.0), 4.0).unwrap_err();
        assert!(err.to_string().contains("non-uniform spacing at row 3"), "{err}");
    }

    #[test]
    fn ambient_filled_from_default() {
        let text = "# produced by hand\ntime_s,current_A\n0,0.5\n1,0.5\n";
        let c = parse_drive_cycle(text.as_bytes(), Some(298.0), 4.0).unwrap();
        assert!(c.samples().iter().all(|s| s.ambient == 298.0));
        assert!(parse_drive_cycle(text.as_bytes(), None, 4.0).is_err());
    }

    #[test]
    fn malformed_inputs_are_located() {
        let err = parse_drive_cycle("".as_bytes(), Some(298.0), 4.0).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let err = parse_drive_cycle("time_s,current_A\n0,x\n".as_bytes(), Some(298.0), 4.0).unwrap_err();
        assert!(err.to_string().contains("row 1, column current_A"), "{err}");
        let err = read_measurements("time_s,voltage_V,surf_temp_K\n0,3.9,298\n1,abc,298\n".as_bytes())
            .unwrap_err();
        assert!(err.to_string().contains("row 2, column voltage_V"), "{err}");
        let err = read_measurements("time,voltage_V,surf_temp_K\n0,3.9,298\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");
    }

    #[test]
    fn empty_series_writes_header_only() {
        let mut out = Vec::new();
        write_measurements(&MeasurementSeries::new(vec![], vec![]).unwrap(), &mut out, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "time_s,voltage_V,surf_temp_K\n");
    }

    #[test]
    fn pairing_detects_length_mismatch() {
        let c = DriveCycle::from_currents(&[0.0, 0.0, 0.0], 1.0, 298.0, 4.0).unwrap();
        let y = OutputSample {
            voltage: 4.0,
            surf_temp: 298.0,
        };
        let m = MeasurementSeries::new(vec![0.0, 1.0], vec![y, y]).unwrap();
        assert!(matches!(pair_with_cycle(&m, &c), Err(Error::LengthMismatch(_))));
        let m = MeasurementSeries::new(vec![0.0, 1.0, 2.0], vec![y, y, y]).unwrap();
        pair_with_cycle(&m, &c).unwrap();
    }
}
