//! PGM image grids, CSV tables and gnuplot scripts.

use std::path::Path;

use lsps_core::depth::DepthImage;
use lsps_core::posekit::Pose;

use crate::binio::{read_file, write_file};
use crate::error::{Error, Result};

/// Maps `[-1, 1]` linearly onto `[0, 255]`.
pub fn depth_to_gray(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0).round() as u8
}

pub fn gray_to_depth(g: u8) -> f32 {
    g as f32 / 255.0 * 2.0 - 1.0
}

/// Binary P5 bytes of a grid with one row per slice of `rows`. Missing
/// tiles in short rows are left at background.
pub fn pgm_grid(rows: &[Vec<DepthImage>]) -> Vec<u8> {
    let res = rows.iter().flatten().map(DepthImage::resolution).next().unwrap_or(1);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let (w, h) = (cols * res, rows.len().max(1) * res);
    let mut px = vec![255u8; w * h];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            for y in 0..res {
                for x in 0..res {
                    px[(r * res + y) * w + c * res + x] = depth_to_gray(img.get(y, x));
                }
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(px);
    out
}

pub fn write_pgm_grid(path: &Path, rows: &[Vec<DepthImage>]) -> Result<()> {
    write_file(path, &pgm_grid(rows))
}

/// Parses a binary P5 image into `(width, height, pixels)`.
pub fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |why: &str| Error::format(path, format!("not a P5 PGM: {why}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("only maxval 255 binary images are supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimensions"));
    let (w, h) = (num(fields[1])?, num(fields[2])?);
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if data.len() != w * h {
        return Err(bad("raster size does not match header"));
    }
    Ok((w, h, data.to_vec()))
}

/// Splits a PGM grid into `res × res` tiles, row-major.
pub fn read_pgm_tiles(path: &Path, res: usize) -> Result<Vec<DepthImage>> {
    let (w, h, px) = parse_pgm(path, &read_file(path)?)?;
    if res == 0 || w % res != 0 || h % res != 0 {
        return Err(Error::format(path, format!("{w}×{h} image is not a grid of {res}×{res} tiles")));
    }
    let mut tiles = Vec::new();
    for r in 0..h / res {
        for c in 0..w / res {
            let pixels = (0..res * res).map(|k| gray_to_depth(px[(r * res + k / res) * w + c * res + k % res])).collect();
            tiles.push(DepthImage::from_pixels(res, pixels));
        }
    }
    Ok(tiles)
}

/// `index,joint,x_mm,y_mm,z_mm` rows.
pub fn write_pose_csv(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["index", "joint", "x_mm", "y_mm", "z_mm"])?;
    for (i, p) in poses.iter().enumerate() {
        for (j, q) in p.joints.iter().enumerate() {
            w.write_record([i.to_string(), j.to_string(), q[0].to_string(), q[1].to_string(), q[2].to_string()])?;
        }
    }
    w.flush().map_err(Error::io(path))
}

/// `threshold_mm,fraction` rows.
pub fn write_curve_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    write_pairs_csv(path, ("threshold_mm", "fraction"), curve)
}

pub fn write_pairs_csv(path: &Path, header: (&str, &str), rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record([header.0, header.1])?;
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(Error::io(path))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.into(), source },
        other => Error::format(path, format!("{other:?}")),
    }
}

/// A gnuplot script plotting each `(title, csv file)` curve.
pub fn gnuplot_script(title: &str, xlabel: &str, ylabel: &str, output_png: &str, series: &[(String, String)]) -> String {
    let mut s = format!(
        "set terminal pngcairo size 800,600\nset output '{output_png}'\nset datafile separator ','\nset key bottom right\n\
         set title '{title}'\nset xlabel '{xlabel}'\nset ylabel '{ylabel}'\nset grid\n"
    );
    let plots: Vec<String> = series.iter().map(|(name, file)| format!("'{file}' skip 1 using 1:2 with linespoints title '{name}'")).collect();
    s.push_str("plot ");
    s.push_str(&plots.join(", \\\n     "));
    s.push('\n');
    s
}
