//! CSV interchange formats.
//!
//! Every file may start with `#` comment lines (the provenance header);
//! readers skip them. Floats are written in shortest round-trip form, so a
//! write/read cycle is lossless.
//!
//! | file      | columns |
//! |-----------|---------|
//! | sensor log| `t_sec,channel_id,y,a_x,a_y,a_z,b_x,b_y,b_z` |
//! | truth     | `t_sec,r11..r33,wx,wy,wz` |
//! | estimate  | `t_sec,r11..r33[,err_rad],trace_P` |
//! | aggregate | `t_sec,mean,p<q>...` |
//! | runs      | `trial,stream,initial_err_rad,final_err_rad,convergence_time,converged,diverged` |

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::filter::StepOutput;
use crate::measurements::ScalarMeasurement;
use crate::sim::{Aggregate, RunResult, Truth, TruthSample};
use crate::so3::{RotationMatrix, Vec3};

pub const LOG_HEADER: [&str; 9] = [
    "t_sec",
    "channel_id",
    "y",
    "a_x",
    "a_y",
    "a_z",
    "b_x",
    "b_y",
    "b_z",
];

const R_COLUMNS: [&str; 9] = [
    "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33",
];

/// `# scalatt version=<v> config_hash=<h> seed=<s>`
pub fn provenance_line(version: &str, config_hash: &str, seed: u64) -> String {
    format!("# scalatt version={version} config_hash={config_hash} seed={seed}")
}

fn writer<W: Write>(mut w: W, comment: Option<&str>) -> Result<csv::Writer<W>> {
    if let Some(c) = comment {
        writeln!(w, "{c}")?;
    }
    Ok(csv::WriterBuilder::new().from_writer(w))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn row_number(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback)
}

fn parse_f64(rec: &csv::StringRecord, i: usize, row: usize, name: &str) -> Result<f64> {
    let field = rec.get(i).ok_or_else(|| Error::MalformedRecord {
        row,
        msg: format!("missing column `{name}`"),
    })?;
    field.parse::<f64>().map_err(|_| Error::MalformedRecord {
        row,
        msg: format!("column `{name}`: cannot parse `{field}` as a number"),
    })
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(Error::MalformedRecord {
            row: 1,
            msg: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    Ok(())
}

pub fn write_sensor_log<W: Write>(
    w: W,
    comment: Option<&str>,
    log: &[ScalarMeasurement<f64>],
) -> Result<()> {
    let mut wtr = writer(w, comment)?;
    wtr.write_record(LOG_HEADER)?;
    for m in log {
        wtr.write_record([
            m.t.to_string(),
            m.channel_id.clone(),
            m.y.to_string(),
            m.a.x.to_string(),
            m.a.y.to_string(),
            m.a.z.to_string(),
            m.b.x.to_string(),
            m.b.y.to_string(),
            m.b.z.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a sensor log; malformed rows report their 1-based line number.
pub fn read_sensor_log<R: Read>(r: R) -> Result<Vec<ScalarMeasurement<f64>>> {
    let mut rdr = reader(r);
    check_header(&mut rdr, &LOG_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedRecord {
            row: e.position().map(|p| p.line() as usize).unwrap_or(i + 2),
            msg: e.to_string(),
        })?;
        let row = row_number(&rec, i + 2);
        if rec.len() != LOG_HEADER.len() {
            return Err(Error::MalformedRecord {
                row,
                msg: format!("expected {} columns, found {}", LOG_HEADER.len(), rec.len()),
            });
        }
        let channel_id = rec[1].to_owned();
        if channel_id.is_empty() {
            return Err(Error::MalformedRecord {
                row,
                msg: "empty channel_id".into(),
            });
        }
        let f = |k: usize| parse_f64(&rec, k, row, LOG_HEADER[k]);
        out.push(ScalarMeasurement {
            channel_id,
            t: f(0)?,
            y: f(2)?,
            a: Vec3::new(f(3)?, f(4)?, f(5)?),
            b: Vec3::new(f(6)?, f(7)?, f(8)?),
        });
    }
    Ok(out)
}

pub fn write_truth<W: Write>(w: W, comment: Option<&str>, truth: &Truth) -> Result<()> {
    let mut wtr = writer(w, comment)?;
    let mut header = vec!["t_sec"];
    header.extend(R_COLUMNS);
    header.extend(["wx", "wy", "wz"]);
    wtr.write_record(&header)?;
    for s in &truth.samples {
        let mut row = Vec::with_capacity(13);
        row.push(s.t.to_string());
        row.extend(s.r.row_major().iter().map(|v| v.to_string()));
        row.extend(s.omega.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a truth file; the IMU rate is recovered from the first time step.
pub fn read_truth<R: Read>(r: R) -> Result<Truth> {
    let mut rdr = reader(r);
    let mut header = vec!["t_sec"];
    header.extend(R_COLUMNS);
    header.extend(["wx", "wy", "wz"]);
    check_header(&mut rdr, &header)?;
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedRecord {
            row: i + 2,
            msg: e.to_string(),
        })?;
        let row = row_number(&rec, i + 2);
        let vals: Vec<f64> = (0..13)
            .map(|k| parse_f64(&rec, k, row, header[k]))
            .collect::<Result<_>>()?;
        let r =
            RotationMatrix::from_row_slice(&vals[1..10]).map_err(|e| Error::MalformedRecord {
                row,
                msg: e.to_string(),
            })?;
        samples.push(TruthSample {
            t: vals[0],
            r,
            omega: Vec3::new(vals[10], vals[11], vals[12]),
        });
    }
    let imu_rate = match samples.as_slice() {
        [a, b, ..] if b.t > a.t => 1.0 / (b.t - a.t),
        [_, _, ..] => {
            return Err(Error::MalformedRecord {
                row: 3,
                msg: "truth timestamps must increase".into(),
            })
        }
        _ => 1.0,
    };
    Ok(Truth { samples, imu_rate })
}

/// Writes the estimate trajectory; `errors` adds the `err_rad` column.
pub fn write_estimate<W: Write>(
    w: W,
    comment: Option<&str>,
    points: &[StepOutput<f64>],
    errors: Option<&[f64]>,
) -> Result<()> {
    if let Some(e) = errors {
        if e.len() != points.len() {
            return Err(Error::Dimension(format!(
                "{} error values for {} estimate rows",
                e.len(),
                points.len()
            )));
        }
    }
    let mut wtr = writer(w, comment)?;
    let mut header = vec!["t_sec"];
    header.extend(R_COLUMNS);
    if errors.is_some() {
        header.push("err_rad");
    }
    header.push("trace_P");
    wtr.write_record(&header)?;
    for (k, p) in points.iter().enumerate() {
        let mut row = Vec::with_capacity(header.len());
        row.push(p.t.to_string());
        row.extend(p.rotation.row_major().iter().map(|v| v.to_string()));
        if let Some(e) = errors {
            row.push(e[k].to_string());
        }
        row.push(p.trace_p.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

fn percentile_label(p: f64) -> String {
    format!("p{p}")
}

pub fn write_aggregate<W: Write>(w: W, comment: Option<&str>, agg: &Aggregate) -> Result<()> {
    let mut wtr = writer(w, comment)?;
    let mut header = vec!["t_sec".to_owned(), "mean".to_owned()];
    header.extend(agg.percentiles.iter().map(|(p, _)| percentile_label(*p)));
    wtr.write_record(&header)?;
    for (k, t) in agg.times.iter().enumerate() {
        let mut row = vec![t.to_string(), agg.mean[k].to_string()];
        row.extend(agg.percentiles.iter().map(|(_, c)| c[k].to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_runs<W: Write>(w: W, comment: Option<&str>, runs: &[RunResult]) -> Result<()> {
    let mut wtr = writer(w, comment)?;
    wtr.write_record([
        "trial",
        "stream",
        "initial_err_rad",
        "final_err_rad",
        "convergence_time",
        "converged",
        "diverged",
    ])?;
    for r in runs {
        wtr.write_record([
            r.trial.to_string(),
            r.stream.to_string(),
            r.initial_error.to_string(),
            r.final_error.to_string(),
            r.convergence_time
                .map(|t| t.to_string())
                .unwrap_or_default(),
            r.converged().to_string(),
            r.diverged().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `t_sec,err_rad` trace of one run on the given time grid.
pub fn write_error_trace<W: Write>(
    w: W,
    comment: Option<&str>,
    times: &[f64],
    errors: &[f64],
) -> Result<()> {
    let mut wtr = writer(w, comment)?;
    wtr.write_record(["t_sec", "err_rad"])?;
    for (t, e) in times.iter().zip(errors) {
        wtr.write_record([t.to_string(), e.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
