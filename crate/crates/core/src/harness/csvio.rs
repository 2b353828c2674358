use std::io::{Read, Write};
use std::path::Path;

use crate::error::HarnessError;
use crate::models::Measurement;

/// Measurement frames indexed `[n - 1][j - 1]`.
pub type FrameSeries = Vec<Vec<Vec<Measurement>>>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads `n,j,z,sigma` rows (1-based `n` and `j`) into per-step frames for
/// `num_pas` anchors. Rows may come in any order; rows of the same `(n, j)`
/// keep their file order. Steps without rows yield empty frames.
pub fn parse_measurement_csv(path: &Path, num_pas: usize) -> Result<FrameSeries, HarnessError> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err(path))?;
    parse_measurements(&text, num_pas, &path.display().to_string())
}

pub fn parse_measurements(text: &str, num_pas: usize, origin: &str) -> Result<FrameSeries, HarnessError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let expected = ["n", "j", "z", "sigma"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(HarnessError::Parse {
            path: origin.to_string(),
            line: 1,
            msg: format!("expected header `n,j,z,sigma`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows: Vec<(usize, usize, Measurement)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |msg: String| HarnessError::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        if record.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", record.len())));
        }
        let int = |i: usize, name: &str| {
            record[i]
                .parse::<usize>()
                .map_err(|e| err(format!("bad {name} `{}`: {e}", &record[i])))
        };
        let float = |i: usize, name: &str| {
            record[i]
                .parse::<f64>()
                .map_err(|e| err(format!("bad {name} `{}`: {e}", &record[i])))
        };
        let n = int(0, "n")?;
        let j = int(1, "j")?;
        let z = float(2, "z")?;
        let sigma = float(3, "sigma")?;
        if n == 0 {
            return Err(err("time index n starts at 1".into()));
        }
        if j == 0 || j > num_pas {
            return Err(err(format!("anchor index j = {j} outside 1..={num_pas}")));
        }
        let m = Measurement::new(z, sigma).map_err(|e| err(e.to_string()))?;
        rows.push((n, j, m));
    }
    let steps = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let mut frames: FrameSeries = vec![vec![Vec::new(); num_pas]; steps];
    // stable sort keeps file order within each (n, j)
    rows.sort_by_key(|r| (r.0, r.1));
    for (n, j, m) in rows {
        frames[n - 1][j - 1].push(m);
    }
    Ok(frames)
}

pub fn write_measurements<W: Write>(out: W, frames: &FrameSeries) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "j", "z", "sigma"])?;
    for (n, frame) in frames.iter().enumerate() {
        for (j, ms) in frame.iter().enumerate() {
            for m in ms {
                w.write_record(&[(n + 1).to_string(), (j + 1).to_string(), m.z.to_string(), m.sigma.to_string()])?;
            }
        }
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: "<measurements>".into(),
        source,
    })?;
    Ok(())
}

pub fn write_measurement_csv(path: &Path, frames: &FrameSeries) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_measurements(std::io::BufWriter::new(file), frames)
}

/// Writes rows of display-formatted cells under `header`.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
