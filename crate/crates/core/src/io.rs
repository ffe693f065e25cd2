//! Text and image formats shared by the pipeline: 6-significant-digit float
//! rounding, row-major CSV maps, 8-bit binary PGM and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gridmdp::GridMap;

/// Rounds `x` to 6 significant decimal digits.
///
/// The result prints (via `Display` or serde_json) as its shortest round-trip
/// representation, which is what keeps the JSON and CSV outputs byte-stable.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        // folds -0.0 into 0.0
        return if x == 0.0 { 0.0 } else { x };
    }
    let s = format!("{:.5e}", x);
    let r: f64 = s.parse().expect("formatted float parses");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn fmt_sig6(x: f64) -> String {
    format!("{}", round_sig6(x))
}

/// Writes `bytes` to `path` through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = match dir {
        Some(dir) => dir.join(tmp_name),
        None => tmp_name.into(),
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Row-major CSV, one grid row per line, values at 6 significant digits.
pub fn map_to_csv(map: &GridMap) -> String {
    let mut out = String::with_capacity(map.rows() * map.cols() * 8);
    for r in 0..map.rows() {
        let line: Vec<String> = (0..map.cols()).map(|c| fmt_sig6(map.get(r, c))).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn map_from_csv(text: &str) -> Result<GridMap> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {:?}: {}", i + 1, v, e)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n_rows = rows.len();
    if n_rows == 0 {
        return Err(Error::Format("empty CSV map".into()));
    }
    let n_cols = rows[0].len();
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::Format("ragged CSV map".into()));
    }
    GridMap::from_vec(n_rows, n_cols, rows.into_iter().flatten().collect())
}

/// Maps values linearly onto 0..=255 (minimum to black, maximum to white).
/// A constant map renders as uniform mid-gray.
pub fn map_to_gray(map: &GridMap) -> Vec<u8> {
    let values = map.values();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Binary 8-bit PGM (P5).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel buffer does not match PGM size");
    let mut out = format!("P5\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn map_to_pgm(map: &GridMap) -> Vec<u8> {
    encode_pgm(map.cols(), map.rows(), &map_to_gray(map))
}

/// Places maps side by side (each normalised on its own) separated by a
/// one-pixel white column.
pub fn triptych_pgm(maps: &[&GridMap]) -> Vec<u8> {
    let height = maps.iter().map(|m| m.rows()).max().unwrap_or(0);
    let width = maps.iter().map(|m| m.cols()).sum::<usize>() + maps.len().saturating_sub(1);
    let mut pixels = vec![255u8; width * height];
    let mut x0 = 0;
    for map in maps {
        let gray = map_to_gray(map);
        for r in 0..map.rows() {
            for c in 0..map.cols() {
                pixels[r * width + x0 + c] = gray[r * map.cols() + c];
            }
        }
        x0 += map.cols() + 1;
    }
    encode_pgm(width, height, &pixels)
}
