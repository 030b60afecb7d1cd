//! CSV and JSON persistence for snapshots, sweeps and manifests.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use boltzsim::levy::SymbolValue;
use boltzsim::{EmpiricalMeasure, Error, GridDensity, Result, Snapshot, Vec3};
use serde::Serialize;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Streams a velocity CSV with header `t,vx,vy,vz` or `vx,vy,vz` into a
/// uniform-weight measure. Only the parsed velocities are kept in memory.
pub fn load_samples(path: &Path) -> Result<EmpiricalMeasure> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (header_line, header) = loop {
        match lines.next() {
            None => return Err(parse_err(path, 1, "empty file")),
            Some((i, l)) => {
                let l = l?;
                if !l.trim().is_empty() {
                    break (i + 1, l);
                }
            }
        }
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let offset = match cols.as_slice() {
        ["t", "vx", "vy", "vz"] => 1,
        ["vx", "vy", "vz"] => 0,
        _ => {
            return Err(parse_err(
                path,
                header_line,
                format!("expected header t,vx,vy,vz or vx,vy,vz, found {header:?}"),
            ))
        }
    };
    let width = offset + 3;
    let mut samples = Vec::new();
    for (i, l) in lines {
        let line_no = i + 1;
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let mut v = [0.0; 3];
        for (c, f) in fields.iter().enumerate() {
            let x: f64 = f.parse().map_err(|_| {
                parse_err(path, line_no, format!("column {}: {f:?} is not a number", c + 1))
            })?;
            if !x.is_finite() {
                return Err(parse_err(path, line_no, format!("column {}: non-finite value", c + 1)));
            }
            if c >= offset {
                v[c - offset] = x;
            }
        }
        samples.push(Vec3::from_array(v));
    }
    if samples.is_empty() {
        return Err(parse_err(path, header_line, "no data rows after header"));
    }
    EmpiricalMeasure::uniform(samples)
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut buf = BufWriter::new(Vec::new());
    writeln!(buf, "{header}")?;
    for r in rows {
        writeln!(buf, "{r}")?;
    }
    let bytes = buf.into_inner().map_err(|e| e.into_error())?;
    write_atomic(path, &bytes)
}

/// Shortest round-trip formatting keeps load(save(x)) == x.
fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Serialize)]
struct Sidecar<'a> {
    t: f64,
    seed: u64,
    config_hash: &'a str,
    n: usize,
    diagnostics: &'a boltzsim::sde::Diagnostics,
}

/// `t,vx,vy,vz` rows plus a JSON sidecar with seed, config hash and
/// diagnostics.
pub fn save_snapshot(path: &Path, sn: &Snapshot, seed: u64, config_hash: &str) -> Result<()> {
    let t = num(sn.t);
    write_csv(
        path,
        "t,vx,vy,vz",
        sn.measure
            .samples()
            .iter()
            .map(|v| format!("{t},{},{},{}", num(v.x), num(v.y), num(v.z))),
    )?;
    let side = Sidecar {
        t: sn.t,
        seed,
        config_hash,
        n: sn.measure.len(),
        diagnostics: &sn.diagnostics,
    };
    write_json(&path.with_extension("json"), &side)
}

pub fn save_symbol_sweep(path: &Path, values: &[SymbolValue]) -> Result<()> {
    write_csv(
        path,
        "xi_x,xi_y,xi_z,psi_re,psi_im",
        values.iter().map(|s| {
            format!("{},{},{},{},{}", num(s.xi.x), num(s.xi.y), num(s.xi.z), num(s.psi_re), num(s.psi_im))
        }),
    )
}

pub fn save_grid(path: &Path, g: &GridDensity) -> Result<()> {
    let centers: Vec<Vec3> = g.grid.centers().collect();
    write_csv(
        path,
        "x,y,z,value",
        centers
            .iter()
            .zip(&g.values)
            .map(|(c, v)| format!("{},{},{},{}", num(c.x), num(c.y), num(c.z), num(*v))),
    )
}

pub fn save_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_csv(
        path,
        &header.join(","),
        rows.iter().map(|r| r.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")),
    )
}

pub fn save_cloud(path: &Path, cloud: &[Vec3]) -> Result<()> {
    write_csv(
        path,
        "vx,vy,vz",
        cloud.iter().map(|v| format!("{},{},{}", num(v.x), num(v.y), num(v.z))),
    )
}
