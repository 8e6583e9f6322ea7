//! Profile tables: `step,w_r_1..w_r_R,w_l_1..w_l_L`, one row per step.

use std::path::Path;

use mgfall_core::model::UncertaintySample;

use crate::LoadError;

pub fn profile_header(n_r: usize, n_l: usize) -> Vec<String> {
    std::iter::once("step".to_string())
        .chain((1..=n_r).map(|i| format!("w_r_{i}")))
        .chain((1..=n_l).map(|i| format!("w_l_{i}")))
        .collect()
}

pub fn read_profiles(path: &Path, n_r: usize, n_l: usize) -> Result<Vec<UncertaintySample>, LoadError> {
    let err = |line: usize, message: String| LoadError::Profile {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => LoadError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => err(1, format!("{other:?}")),
        })?;
    let want = profile_header(n_r, n_l);
    let got: Vec<String> = rdr.headers().map_err(|e| err(1, e.to_string()))?.iter().map(String::from).collect();
    if got != want {
        return Err(err(1, format!("header {got:?}, expected {want:?}")));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        let step: usize = rec[0].parse().map_err(|_| err(line, format!("step {:?} is not an index", &rec[0])))?;
        if step != k {
            return Err(err(line, format!("step {step}, expected {k}")));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| err(line, format!("{v:?} is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
            return Err(err(line, format!("non-finite value {v}")));
        }
        out.push(UncertaintySample {
            w_r: vals[..n_r].to_vec(),
            w_l: vals[n_r..].to_vec(),
        });
    }
    Ok(out)
}

pub fn write_profiles(path: &Path, samples: &[UncertaintySample]) -> Result<(), LoadError> {
    let io = |e: csv::Error| LoadError::Profile {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let (n_r, n_l) = samples.first().map_or((0, 0), |s| (s.w_r.len(), s.w_l.len()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(profile_header(n_r, n_l)).map_err(io)?;
    for (k, s) in samples.iter().enumerate() {
        let row: Vec<String> = std::iter::once(k.to_string())
            .chain(s.w_r.iter().chain(&s.w_l).map(|v| v.to_string()))
            .collect();
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}
