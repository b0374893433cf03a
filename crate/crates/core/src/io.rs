//! Trajectory CSV format.
//!
//! One file per trajectory, one row per timestep, header mandatory:
//!
//! ```text
//! t,x0,x1[,mode]
//! 0,1.02,0
//! 0.05,1.01,-0.51
//! ```
//!
//! The `mode` column carries simulator ground truth and is optional.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{LabeledDataset, ModeLabel, StateVec, Trajectory};

fn csv_err(e: csv::Error) -> Error {
    Error::input(format!("csv: {e}"))
}

/// Write one trajectory. `labels`, when given, adds the `mode` column.
pub fn write_trajectory<W: Write>(
    w: W,
    traj: &Trajectory,
    labels: Option<&[ModeLabel]>,
) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != traj.len() {
            return Err(Error::input("label count does not match trajectory length"));
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((0..traj.dim()).map(|i| format!("x{i}")));
    if labels.is_some() {
        header.push("mode".into());
    }
    out.write_record(&header).map_err(csv_err)?;
    for (k, s) in traj.states().iter().enumerate() {
        let mut rec = vec![format!("{}", k as f64 * traj.dt())];
        rec.extend(s.as_slice().iter().map(|v| format!("{v}")));
        if let Some(l) = labels {
            rec.push(l[k].to_string());
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Read one trajectory; `dt` is taken from the first two timestamps.
pub fn read_trajectory<R: Read>(r: R) -> Result<(Trajectory, Option<Vec<ModeLabel>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("t") {
        return Err(Error::input("trajectory csv must start with a `t` column"));
    }
    let has_mode = header.iter().next_back() == Some("mode");
    let d = header.len() - 1 - usize::from(has_mode);
    for i in 0..d {
        if header.get(i + 1) != Some(format!("x{i}").as_str()) {
            return Err(Error::input(format!(
                "expected column x{i}, found {:?}",
                header.get(i + 1)
            )));
        }
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut modes = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse = |j: usize| -> Result<f64> {
            rec.get(j)
                .ok_or_else(|| Error::input(format!("row {}: missing column {j}", row + 2)))?
                .parse::<f64>()
                .map_err(|e| Error::input(format!("row {}: {e}", row + 2)))
        };
        times.push(parse(0)?);
        let x = (1..=d).map(parse).collect::<Result<Vec<_>>>()?;
        states.push(StateVec::from_slice(&x)?);
        if has_mode {
            let m = rec
                .get(d + 1)
                .unwrap_or_default()
                .parse::<usize>()
                .map_err(|e| Error::input(format!("row {}: bad mode: {e}", row + 2)))?;
            modes.push(ModeLabel(m));
        }
    }
    if times.len() < 2 {
        return Err(Error::input("trajectory csv needs at least two rows"));
    }
    let dt = times[1] - times[0];
    Ok((Trajectory::new(states, dt)?, has_mode.then_some(modes)))
}

pub fn write_trajectory_file(
    path: &Path,
    traj: &Trajectory,
    labels: Option<&[ModeLabel]>,
) -> Result<()> {
    write_trajectory(fs::File::create(path)?, traj, labels)
}

pub fn read_trajectory_file(path: &Path) -> Result<(Trajectory, Option<Vec<ModeLabel>>)> {
    read_trajectory(fs::File::open(path)?).map_err(|e| match e {
        Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Write a dataset as `traj_000.csv`, `traj_001.csv`, ... in `dir`.
pub fn write_dataset_dir(dir: &Path, ds: &LabeledDataset, with_modes: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    ds.trajectories()
        .iter()
        .zip(ds.labels())
        .enumerate()
        .map(|(i, (t, l))| {
            let p = dir.join(format!("traj_{i:03}.csv"));
            write_trajectory_file(&p, t, with_modes.then_some(l.as_slice()))?;
            Ok(p)
        })
        .collect()
}

/// Read every `*.csv` in `dir` in lexicographic order. Trajectories without
/// a mode column are labeled 0.
pub fn read_dataset_dir(dir: &Path) -> Result<LabeledDataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::input(format!("no trajectory csv files in {}", dir.display())));
    }
    let mut trajs = Vec::with_capacity(paths.len());
    let mut labels = Vec::with_capacity(paths.len());
    for p in &paths {
        let (t, l) = read_trajectory_file(p)?;
        labels.push(l.unwrap_or_else(|| vec![ModeLabel(0); t.len()]));
        trajs.push(t);
    }
    LabeledDataset::new(trajs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj() -> Trajectory {
        let s = |a: f64, b: f64| StateVec::from_slice(&[a, b]).unwrap();
        Trajectory::new(vec![s(1.0, 0.0), s(0.98775, -0.49), s(0.951, -0.98)], 0.05).unwrap()
    }

    #[test]
    fn round_trip_with_modes() {
        let t = traj();
        let labels = vec![ModeLabel(0), ModeLabel(0), ModeLabel(1)];
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &t, Some(&labels)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x0,x1,mode\n"));
        let (back, l) = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back.states(), t.states());
        assert!((back.dt() - 0.05).abs() < 1e-15);
        assert_eq!(l.unwrap(), labels);
    }

    #[test]
    fn mode_column_is_optional() {
        let csv = "t,x0\n0,1.5\n0.2,1.7\n";
        let (t, l) = read_trajectory(csv.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert!(l.is_none());
    }

    #[test]
    fn header_is_mandatory() {
        assert!(read_trajectory("0,1.5\n0.2,1.7\n".as_bytes()).is_err());
        assert!(read_trajectory("t,y\n0,1.5\n0.2,1.7\n".as_bytes()).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(read_trajectory("t,x0\n0,NaN\n0.2,1.7\n".as_bytes()).is_err());
    }
}
