//! File formats: JSON/CSV datasets and replay-exact float rendering.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PaccError, Result};
use crate::iv::IvRecord;
use crate::propensity::{ObsData, ObsRecord, MAX_COVARIATES};

/// Serde adapter for floats that may be `±∞`: finite values are plain
/// numbers, infinities are the strings `"inf"` and `"-inf"`.
pub mod signed_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a float: {other}"))),
            },
        }
    }
}

/// Renders a float with 17 significant digits, enough to round-trip any f64.
pub fn sig17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// JSON formatter emitting every float with 17 significant digits.
#[derive(Default)]
struct Sig17Formatter {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

macro_rules! forward {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.inner.$name(w $(, $arg)*)
        })*
    };
}

impl serde_json::ser::Formatter for Sig17Formatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(sig17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    forward! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }
}

/// Pretty JSON with 17-significant-digit floats.
pub fn to_json_sig17<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17Formatter::default());
    value
        .serialize(&mut ser)
        .map_err(|e| PaccError::Format(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| PaccError::Format(e.to_string()))
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PaccError + '_ {
    move |source| PaccError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(io_err(path))?;
    Ok(s)
}

fn csv_err(e: csv::Error) -> PaccError {
    PaccError::Format(e.to_string())
}

#[derive(Serialize, Deserialize)]
struct ObsJson {
    x: Vec<u8>,
    z: u8,
    y: u8,
}

fn bit(v: u8, what: &str) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(PaccError::Format(format!("{what} must be 0 or 1, got {v}"))),
    }
}

/// JSON array of `{x: [0/1...], z, y}` records.
pub fn obs_to_json(data: &ObsData) -> Result<String> {
    let rows: Vec<ObsJson> = data
        .records
        .iter()
        .map(|r| ObsJson {
            x: (0..data.n_covariates).map(|j| r.covariate(j) as u8).collect(),
            z: r.z as u8,
            y: r.y as u8,
        })
        .collect();
    serde_json::to_string(&rows).map_err(|e| PaccError::Format(e.to_string()))
}

pub fn obs_from_json(text: &str) -> Result<ObsData> {
    let rows: Vec<ObsJson> = serde_json::from_str(text).map_err(|e| PaccError::Format(e.to_string()))?;
    let n = rows.first().map_or(0, |r| r.x.len());
    if n > MAX_COVARIATES {
        return Err(PaccError::Format(format!("at most {MAX_COVARIATES} covariates supported")));
    }
    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.x.len() != n {
            return Err(PaccError::Format(format!("record {i}: expected {n} covariates")));
        }
        let mut x = 0u64;
        for (j, &v) in row.x.iter().enumerate() {
            if bit(v, "covariate")? {
                x |= 1 << j;
            }
        }
        records.push(ObsRecord {
            x,
            z: bit(row.z, "z")?,
            y: bit(row.y, "y")?,
        });
    }
    ObsData::new(n, records)
}

/// CSV with header `x0..x{n-1},z,y`.
pub fn write_obs_csv<W: Write>(data: &ObsData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..data.n_covariates).map(|j| format!("x{j}")).collect();
    header.push("z".into());
    header.push("y".into());
    w.write_record(&header).map_err(csv_err)?;
    let mut row: Vec<&str> = Vec::with_capacity(header.len());
    for r in &data.records {
        row.clear();
        for j in 0..data.n_covariates {
            row.push(if r.covariate(j) { "1" } else { "0" });
        }
        row.push(if r.z { "1" } else { "0" });
        row.push(if r.y { "1" } else { "0" });
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| PaccError::Format(e.to_string()))
}

pub fn read_obs_csv<R: Read>(input: R) -> Result<ObsData> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let n = cols.len().checked_sub(2).ok_or_else(|| PaccError::Format("missing z,y columns".into()))?;
    let expected: Vec<String> = (0..n).map(|j| format!("x{j}")).chain(["z".into(), "y".into()]).collect();
    if cols != expected {
        return Err(PaccError::Format(format!("unexpected header {cols:?}")));
    }
    if n > MAX_COVARIATES {
        return Err(PaccError::Format(format!("at most {MAX_COVARIATES} covariates supported")));
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let parse = |s: &str| -> Result<bool> {
            match s.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(PaccError::Format(format!("expected 0/1, got {other:?}"))),
            }
        };
        let mut x = 0u64;
        for j in 0..n {
            if parse(&row[j])? {
                x |= 1 << j;
            }
        }
        records.push(ObsRecord {
            x,
            z: parse(&row[n])?,
            y: parse(&row[n + 1])?,
        });
    }
    ObsData::new(n, records)
}

/// CSV with columns `d,z,y`, plus `u_hidden` when requested.
pub fn write_iv_csv<W: Write>(data: &[IvRecord], include_hidden: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if include_hidden {
        w.write_record(["d", "z", "y", "u_hidden"]).map_err(csv_err)?;
    } else {
        w.write_record(["d", "z", "y"]).map_err(csv_err)?;
    }
    for r in data {
        let mut row = vec![sig17(r.d), sig17(r.z), sig17(r.y)];
        if include_hidden {
            row.push(sig17(r.u_hidden));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| PaccError::Format(e.to_string()))
}

/// Reads `d,z,y[,u_hidden]`; a missing hidden column reads as NaN.
pub fn read_iv_csv<R: Read>(input: R) -> Result<Vec<IvRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let pos = |name: &str| header.iter().position(|h| h == name);
    let (d, z, y) = match (pos("d"), pos("z"), pos("y")) {
        (Some(d), Some(z), Some(y)) => (d, z, y),
        _ => return Err(PaccError::Format(format!("IV CSV needs d,z,y columns, got {header:?}"))),
    };
    let u = pos("u_hidden");
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| PaccError::Format(format!("bad number {:?}: {e}", &row[i])))
        };
        out.push(IvRecord {
            d: num(d)?,
            z: num(z)?,
            y: num(y)?,
            u_hidden: match u {
                Some(i) => num(i)?,
                None => f64::NAN,
            },
        });
    }
    Ok(out)
}

/// JSON array of `{d, z, y}` objects (plus `u_hidden` when requested).
pub fn iv_to_json(data: &[IvRecord], include_hidden: bool) -> Result<String> {
    let rows: Vec<serde_json::Value> = data
        .iter()
        .map(|r| {
            let mut v = serde_json::json!({"d": r.d, "z": r.z, "y": r.y});
            if include_hidden {
                v["u_hidden"] = serde_json::json!(r.u_hidden);
            }
            v
        })
        .collect();
    to_json_sig17(&rows)
}

pub fn iv_from_json(text: &str) -> Result<Vec<IvRecord>> {
    #[derive(Deserialize)]
    struct Row {
        d: f64,
        z: f64,
        y: f64,
        #[serde(default)]
        u_hidden: Option<f64>,
    }
    let rows: Vec<Row> = serde_json::from_str(text).map_err(|e| PaccError::Format(e.to_string()))?;
    Ok(rows
        .into_iter()
        .map(|r| IvRecord {
            d: r.d,
            z: r.z,
            y: r.y,
            u_hidden: r.u_hidden.unwrap_or(f64::NAN),
        })
        .collect())
}

/// Opens `path` for buffered writing.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}
