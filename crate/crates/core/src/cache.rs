//! Plain-text controller cache with a bit-exact float round trip.
//!
//! ```text
//! # drro controller cache v1
//! plant_hash = <sha256 hex>
//! grid_k = 12
//! gamma = 1.5e-3        (or "none")
//! radius = 1e0          (or "none")
//! provenance = DR-RO    (DR-RO | H2 | RO | imported)
//! source = <text>       (imported only)
//! rows = 1
//! cols = 1
//! data
//! <re_0_0> <im_0_0> ...  one line per grid point
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{FrequencyGrid, GridSamples};
use crate::synthesis::{ControllerSamples, Provenance};

const MAGIC: &str = "# drro controller cache v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CachedController {
    pub plant_hash: String,
    pub controller: ControllerSamples,
}

impl CachedController {
    pub fn radius(&self) -> Option<f64> {
        match self.controller.provenance {
            Provenance::DrRo { radius, .. } => radius,
            _ => None,
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".to_string(), |v| format!("{v:e}"))
}

pub fn write_controller<W: Write>(mut w: W, plant_hash: &str, k: &ControllerSamples) -> Result<()> {
    let (kind, gamma, radius, source) = match &k.provenance {
        Provenance::DrRo { gamma, radius } => ("DR-RO", Some(*gamma), *radius, None),
        Provenance::H2 => ("H2", None, None, None),
        Provenance::Ro { gamma } => ("RO", Some(*gamma), None, None),
        Provenance::Imported { source } => ("imported", None, None, Some(source.as_str())),
    };
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "plant_hash = {plant_hash}")?;
    writeln!(w, "grid_k = {}", k.grid().k())?;
    writeln!(w, "gamma = {}", opt(gamma))?;
    writeln!(w, "gamma_used = {}", opt(k.gamma_used))?;
    writeln!(w, "radius = {}", opt(radius))?;
    writeln!(w, "provenance = {kind}")?;
    if let Some(s) = source {
        writeln!(w, "source = {}", s.replace('\n', " "))?;
    }
    writeln!(w, "rows = {}", k.k.rows())?;
    writeln!(w, "cols = {}", k.k.cols())?;
    writeln!(w, "data")?;
    let mut line = String::new();
    for m in k.k.values() {
        line.clear();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if !line.is_empty() {
                    line.push(' ');
                }
                line.push_str(&format!("{:e} {:e}", m[(r, c)].re, m[(r, c)].im));
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Writes the cache atomically (temporary file in the target directory, then rename).
pub fn save_controller(path: impl AsRef<Path>, plant_hash: &str, k: &ControllerSamples) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write_controller(std::io::BufWriter::new(tmp.as_file_mut()), plant_hash, k)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn parse_opt(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "none" {
        return Ok(None);
    }
    v.parse::<f64>().map(Some).map_err(|_| Error::Parse(format!("cache field `{key}` is not a number: {v}")))
}

pub fn read_controller<R: BufRead>(reader: R) -> Result<CachedController> {
    let mut lines = reader.lines();
    let mut next = || -> Result<String> {
        lines.next().ok_or_else(|| Error::Parse("controller cache truncated".into()))?.map_err(Error::from)
    };
    if next()?.trim_end() != MAGIC {
        return Err(Error::Parse("not a controller cache file".into()));
    }
    let mut fields = std::collections::BTreeMap::new();
    loop {
        let line = next()?;
        let line = line.trim();
        if line == "data" {
            break;
        }
        let (key, value) =
            line.split_once(" = ").ok_or_else(|| Error::Parse(format!("malformed cache header line `{line}`")))?;
        fields.insert(key.to_string(), value.to_string());
    }
    let field = |key: &str| -> Result<&String> {
        fields.get(key).ok_or_else(|| Error::Parse(format!("cache header lacks `{key}`")))
    };
    let count = |key: &str| -> Result<usize> {
        field(key)?.parse().map_err(|_| Error::Parse(format!("cache field `{key}` is not an integer")))
    };
    let plant_hash = field("plant_hash")?.clone();
    let grid = FrequencyGrid::new(count("grid_k")? as u32)?;
    let gamma = parse_opt("gamma", field("gamma")?)?;
    let gamma_used = parse_opt("gamma_used", field("gamma_used")?)?;
    let radius = parse_opt("radius", field("radius")?)?;
    let (rows, cols) = (count("rows")?, count("cols")?);
    let need = |g: Option<f64>| g.ok_or_else(|| Error::Parse("cache provenance requires gamma".into()));
    let provenance = match field("provenance")?.as_str() {
        "DR-RO" => Provenance::DrRo { gamma: need(gamma)?, radius },
        "H2" => Provenance::H2,
        "RO" => Provenance::Ro { gamma: need(gamma)? },
        "imported" => Provenance::Imported { source: fields.get("source").cloned().unwrap_or_default() },
        other => return Err(Error::Parse(format!("unknown provenance `{other}`"))),
    };

    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let line = next()?;
        let nums = line
            .split_ascii_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{t}` on data line {i}"))))
            .collect::<Result<Vec<f64>>>()?;
        if nums.len() != 2 * rows * cols {
            return Err(Error::Parse(format!(
                "data line {i} has {} numbers, expected {}",
                nums.len(),
                2 * rows * cols
            )));
        }
        let entries: Vec<Complex64> = nums.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        values.push(DMatrix::from_row_slice(rows, cols, &entries));
    }
    let k = GridSamples::new(grid, rows, cols, values)?;
    Ok(CachedController { plant_hash, controller: ControllerSamples::new(k, provenance, gamma_used) })
}

pub fn load_controller(path: impl AsRef<Path>) -> Result<CachedController> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    read_controller(BufReader::new(file))
}
