//! CSV interchange: sample paths, chain traces, posterior draws and
//! observation files.
//!
//! All files are comma separated with a header row. Floats are written in
//! shortest round-trip form, so rerunning with the same seed reproduces the
//! files byte for byte.
//!
//! | schema        | columns                                                    |
//! |---------------|------------------------------------------------------------|
//! | paths         | `path,time,x1..xd[,p1,p2,p3],log_psi`                      |
//! | chain         | `iteration,accepted,log_alpha,log_psi`                     |
//! | posterior     | `iteration,theta1..thetaK,accepted_1..accepted_S`          |
//! | observations  | `time,x1..xd`                                              |
//!
//! In `paths`, `log_psi` is the running value of `ln Ψ` and `p1..p3` are
//! embedded coordinates when present. Booleans are written as `0`/`1`.

use std::io::{Read, Write};
use std::path::Path;

use crate::bayes::{Observations, PosteriorSample};
use crate::bridge_mcmc::IterationRecord;
use crate::geometry::Chart;
use crate::{Error, Result, Vector};

/// One path for the `paths` schema.
#[derive(Debug, Clone, Copy)]
pub struct PathRecord<'a> {
    pub id: usize,
    pub times: &'a [f64],
    pub states: &'a [Vector],
    /// Embedded coordinates, one ℝ³ point per state.
    pub embedded: Option<&'a [Vector]>,
    pub cumulative_log_psi: &'a [f64],
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_paths<W: Write>(
    out: W,
    dim: usize,
    embedded: bool,
    paths: &[PathRecord<'_>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["path".to_string(), "time".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    if embedded {
        header.extend(["p1", "p2", "p3"].map(String::from));
    }
    header.push("log_psi".into());
    w.write_record(&header)?;
    for p in paths {
        let n = p.times.len();
        if p.states.len() != n || p.cumulative_log_psi.len() != n {
            return Err(Error::Config(format!("path {} has ragged columns", p.id)));
        }
        if embedded != p.embedded.is_some() {
            return Err(Error::Config(format!(
                "path {} embedded coordinates do not match the header",
                p.id
            )));
        }
        for j in 0..n {
            let mut row = vec![p.id.to_string(), num(p.times[j])];
            if p.states[j].len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: p.states[j].len(),
                });
            }
            row.extend(p.states[j].iter().map(|&v| num(v)));
            if let Some(e) = p.embedded {
                row.extend(e[j].iter().map(|&v| num(v)));
            }
            row.push(num(p.cumulative_log_psi[j]));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_chain<W: Write>(out: W, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "accepted", "log_alpha", "log_psi"])?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            flag(r.accepted).to_string(),
            num(r.log_alpha),
            num(r.log_psi),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_posterior<W: Write>(out: W, sample: &PosteriorSample) -> Result<()> {
    let k = sample.thetas.first().map_or(0, |t| t.len());
    let s = sample.accepted.first().map_or(0, |a| a.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=k).map(|i| format!("theta{i}")));
    header.extend((1..=s).map(|i| format!("accepted_{i}")));
    w.write_record(&header)?;
    for (i, (theta, acc)) in sample.thetas.iter().zip(&sample.accepted).enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(theta.iter().map(|&v| num(v)));
        row.extend(acc.iter().map(|&a| flag(a).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_observations<W: Write>(out: W, obs: &Observations) -> Result<()> {
    let d = obs.chart().dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (t, x) in obs.times().iter().zip(obs.points()) {
        let mut row = vec![num(*t)];
        row.extend(x.iter().map(|&v| num(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// The four file layouts understood by [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Paths { dim: usize, embedded: bool },
    Chain,
    Posterior { thetas: usize, segments: usize },
    Observations { dim: usize },
}

impl Schema {
    pub fn name(&self) -> &'static str {
        match self {
            Schema::Paths { .. } => "paths",
            Schema::Chain => "chain",
            Schema::Posterior { .. } => "posterior",
            Schema::Observations { .. } => "observations",
        }
    }
}

fn numbered(cols: &[&str], prefix: &str) -> usize {
    cols.iter()
        .enumerate()
        .take_while(|(i, c)| **c == format!("{prefix}{}", i + 1))
        .count()
}

/// Identifies the schema of a header row.
pub fn detect_schema(header: &[&str]) -> Option<Schema> {
    match header.first().copied()? {
        "path" => {
            if header.get(1) != Some(&"time") {
                return None;
            }
            let dim = numbered(&header[2..], "x");
            let rest = &header[2 + dim..];
            match rest {
                ["log_psi"] if dim > 0 => Some(Schema::Paths {
                    dim,
                    embedded: false,
                }),
                ["p1", "p2", "p3", "log_psi"] if dim > 0 => Some(Schema::Paths {
                    dim,
                    embedded: true,
                }),
                _ => None,
            }
        }
        "iteration" => {
            if header == ["iteration", "accepted", "log_alpha", "log_psi"] {
                return Some(Schema::Chain);
            }
            let thetas = numbered(&header[1..], "theta");
            let segments = numbered(&header[1 + thetas..], "accepted_");
            (thetas > 0 && 1 + thetas + segments == header.len())
                .then_some(Schema::Posterior { thetas, segments })
        }
        "time" => {
            let dim = numbered(&header[1..], "x");
            (dim > 0 && 1 + dim == header.len()).then_some(Schema::Observations { dim })
        }
        _ => None,
    }
}

/// Summary returned by a successful validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemaReport {
    pub schema: Schema,
    pub rows: usize,
}

fn schema_err(file: &str, reason: impl Into<String>) -> Error {
    Error::Schema {
        file: file.to_string(),
        reason: reason.into(),
    }
}

/// Checks that `input` is a non-empty file of one of the documented schemas:
/// recognised header, one value per column, numeric cells, `0`/`1` flags,
/// increasing time within each path and increasing iteration counters.
pub fn validate<R: Read>(name: &str, input: R) -> Result<SchemaReport> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let cols: Vec<&str> = header.iter().map(String::as_str).collect();
    let schema = detect_schema(&cols)
        .ok_or_else(|| schema_err(name, format!("unrecognised header {}", header.join(","))))?;
    let mut rows = 0usize;
    let mut last_key: Option<(f64, f64)> = None;
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(schema_err(
                name,
                format!("line {line}: expected {} fields", header.len()),
            ));
        }
        let mut values = Vec::with_capacity(rec.len());
        for (col, cell) in header.iter().zip(rec.iter()) {
            let v: f64 = cell.trim().parse().map_err(|_| {
                schema_err(name, format!("line {line}: column {col} is not numeric"))
            })?;
            let is_flag = col == "accepted" || col.starts_with("accepted_");
            if is_flag && v != 0.0 && v != 1.0 {
                return Err(schema_err(
                    name,
                    format!("line {line}: column {col} must be 0 or 1"),
                ));
            }
            if v.is_nan() || (v.is_infinite() && col != "log_alpha") {
                return Err(schema_err(
                    name,
                    format!("line {line}: column {col} is not finite"),
                ));
            }
            values.push(v);
        }
        let key = match schema {
            Schema::Paths { .. } => (values[0], values[1]),
            Schema::Observations { .. } => (0.0, values[0]),
            Schema::Chain | Schema::Posterior { .. } => (0.0, values[0]),
        };
        if let Some(prev) = last_key {
            let ordered = if key.0 == prev.0 {
                key.1 > prev.1
            } else {
                key.0 > prev.0
            };
            if !ordered {
                let what = match schema {
                    Schema::Paths { .. } => "path/time",
                    Schema::Observations { .. } => "time",
                    _ => "iteration",
                };
                return Err(schema_err(
                    name,
                    format!("line {line}: {what} is not increasing"),
                ));
            }
        }
        last_key = Some(key);
        rows += 1;
    }
    if rows == 0 {
        return Err(schema_err(name, "file has a header but no rows"));
    }
    Ok(SchemaReport { schema, rows })
}

pub fn validate_file(path: &Path) -> Result<SchemaReport> {
    let file = std::fs::File::open(path)?;
    validate(&path.display().to_string(), file)
}

/// Reads an `observations` file for `chart`.
pub fn read_observations<R: Read>(name: &str, input: R, chart: Chart) -> Result<Observations> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let cols: Vec<&str> = header.iter().map(String::as_str).collect();
    match detect_schema(&cols) {
        Some(Schema::Observations { dim }) if dim == chart.dim() => {}
        _ => {
            return Err(schema_err(
                name,
                format!(
                    "expected header time,x1..x{}, got {}",
                    chart.dim(),
                    header.join(",")
                ),
            ))
        }
    }
    let mut times = Vec::new();
    let mut points = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| schema_err(name, format!("line {}: non-numeric value", i + 2)))?;
        times.push(values[0]);
        points.push(Vector::from_vec(values[1..].to_vec()));
    }
    if times.is_empty() {
        return Err(schema_err(name, "no observations"));
    }
    Observations::new(chart, times, points).map_err(|e| schema_err(name, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    #[test]
    fn header_detection() {
        assert_eq!(
            detect_schema(&["path", "time", "x1", "x2", "log_psi"]),
            Some(Schema::Paths {
                dim: 2,
                embedded: false
            })
        );
        assert_eq!(
            detect_schema(&["path", "time", "x1", "x2", "p1", "p2", "p3", "log_psi"]),
            Some(Schema::Paths {
                dim: 2,
                embedded: true
            })
        );
        assert_eq!(
            detect_schema(&["iteration", "theta1", "theta2", "accepted_1"]),
            Some(Schema::Posterior {
                thetas: 2,
                segments: 1
            })
        );
        assert_eq!(
            detect_schema(&["iteration", "accepted", "log_alpha", "log_psi"]),
            Some(Schema::Chain)
        );
        assert_eq!(
            detect_schema(&["time", "x1", "x2"]),
            Some(Schema::Observations { dim: 2 })
        );
        assert_eq!(detect_schema(&["time", "x2", "x1"]), None);
        assert_eq!(detect_schema(&["path", "time", "log_psi"]), None);
        assert_eq!(detect_schema(&["foo"]), None);
    }

    #[test]
    fn paths_round_trip_through_validation() {
        let times = [0.0, 0.5, 1.0];
        let states = [v(0.0, 0.0), v(0.1, 0.2), v(0.3, 0.1)];
        let psi = [0.0, -0.1, -0.25];
        let mut buf = Vec::new();
        write_paths(
            &mut buf,
            2,
            false,
            &[
                PathRecord {
                    id: 0,
                    times: &times,
                    states: &states,
                    embedded: None,
                    cumulative_log_psi: &psi,
                },
                PathRecord {
                    id: 1,
                    times: &times,
                    states: &states,
                    embedded: None,
                    cumulative_log_psi: &psi,
                },
            ],
        )
        .unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("path,time,x1,x2,log_psi\n0,0,0,0,0\n"));
        let r = validate("paths.csv", &buf[..]).unwrap();
        assert_eq!(r.rows, 6);
        assert_eq!(
            r.schema,
            Schema::Paths {
                dim: 2,
                embedded: false
            }
        );
    }

    #[test]
    fn empty_and_malformed_files_are_rejected() {
        assert!(matches!(
            validate("p.csv", "path,time,x1,x2,log_psi\n".as_bytes()),
            Err(Error::Schema { .. })
        ));
        let err = validate("p.csv", "path,time,x1,x2,log_psi\n0,0,a,0,0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("x1"));
        assert!(validate(
            "c.csv",
            "iteration,accepted,log_alpha,log_psi\n1,2,0,0\n".as_bytes()
        )
        .is_err());
        assert!(validate(
            "c.csv",
            "iteration,accepted,log_alpha,log_psi\n2,1,0,0\n1,1,0,0\n".as_bytes()
        )
        .is_err());
        assert!(validate(
            "c.csv",
            "iteration,accepted,log_alpha,log_psi\n1,0,-inf,0\n".as_bytes()
        )
        .is_ok());
        assert!(validate("o.csv", "time,x1,x2\n0,0,0\n0,1,1\n".as_bytes()).is_err());
    }

    #[test]
    fn chain_and_posterior_writers() {
        let recs = [
            IterationRecord {
                iteration: 1,
                accepted: true,
                log_alpha: 0.0,
                log_psi: -1.5,
            },
            IterationRecord {
                iteration: 2,
                accepted: false,
                log_alpha: f64::NEG_INFINITY,
                log_psi: -1.5,
            },
        ];
        let mut buf = Vec::new();
        write_chain(&mut buf, &recs).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "iteration,accepted,log_alpha,log_psi\n1,1,0,-1.5\n2,0,-inf,-1.5\n"
        );
        assert_eq!(validate("c", &buf[..]).unwrap().schema, Schema::Chain);

        let post = PosteriorSample {
            thetas: vec![v(1.0, 2.0), v(3.0, 4.0)],
            accepted: vec![vec![true, false], vec![false, false]],
            burn_in: 0,
        };
        let mut buf = Vec::new();
        write_posterior(&mut buf, &post).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "iteration,theta1,theta2,accepted_1,accepted_2\n1,1,2,1,0\n2,3,4,0,0\n"
        );
        assert_eq!(
            validate("p", &buf[..]).unwrap().schema,
            Schema::Posterior {
                thetas: 2,
                segments: 2
            }
        );
    }

    #[test]
    fn observations_round_trip() {
        let obs = Observations::new(
            Chart::PoincareDisk,
            vec![0.0, 0.5, 1.0],
            vec![v(0.0, 0.6), v(0.1, 0.0), v(0.0, -0.6)],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_observations(&mut buf, &obs).unwrap();
        let back = read_observations("obs.csv", &buf[..], Chart::PoincareDisk).unwrap();
        assert_eq!(back, obs);
        assert!(read_observations("obs.csv", &buf[..], Chart::FlatTorus).is_ok());
        assert!(read_observations(
            "obs.csv",
            "time,x1,x2\n0,0,1.5\n".as_bytes(),
            Chart::PoincareDisk
        )
        .is_err());
        assert!(
            read_observations("obs.csv", "time,x1\n0,0\n".as_bytes(), Chart::PoincareDisk).is_err()
        );
    }
}
