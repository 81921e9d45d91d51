//! Readers and writers for episode files: Middlebury `.flo`, PFM depth,
//! 16-bit PGM label masks, PPM color images, and small text records.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{DepthMap, FlowField, Intrinsics};
use crate::geometry::Pose;
use crate::grid::Grid;
use crate::segmenter::{LabelMask, SeedRecord};
use crate::simulator::Rgb;

const FLO_MAGIC: f32 = 202021.25;
/// Components above this magnitude mark unknown flow in `.flo` files.
const FLO_UNKNOWN: f32 = 1e10;

fn format_err(kind: &'static str, path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        kind,
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(&FLO_MAGIC.to_le_bytes())?;
    f.write_all(&(flow.width() as i32).to_le_bytes())?;
    f.write_all(&(flow.height() as i32).to_le_bytes())?;
    for v in 0..flow.height() {
        for u in 0..flow.width() {
            let (a, b) = match flow.at(u, v) {
                Some(x) => (x[0] as f32, x[1] as f32),
                None => (FLO_UNKNOWN, FLO_UNKNOWN),
            };
            f.write_all(&a.to_le_bytes())?;
            f.write_all(&b.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path)?;
    let err = |m: &str| format_err("flo", path, m);
    if bytes.len() < 12 {
        return Err(err("truncated header"));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(err("bad magic"));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 {
        return Err(err("non-positive dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    if bytes.len() != 12 + w * h * 8 {
        return Err(err("payload size does not match dimensions"));
    }
    let mut flow = FlowField::invalid(w, h);
    for v in 0..h {
        for u in 0..w {
            let i = 12 + (v * w + u) * 8;
            let a = f32::from_le_bytes(word(i));
            let b = f32::from_le_bytes(word(i + 4));
            let known = a.is_finite() && b.is_finite() && a.abs() < 1e9 && b.abs() < 1e9;
            flow.set(u, v, known.then_some([a as f64, b as f64]));
        }
    }
    Ok(flow)
}

/// Single-channel little-endian PFM; rows are stored bottom to top. Invalid
/// depth is written as 0.
pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut f = create(path)?;
    write!(f, "Pf\n{} {}\n-1.0\n", depth.width(), depth.height())?;
    for v in (0..depth.height()).rev() {
        for u in 0..depth.width() {
            let d = depth.at(u, v).unwrap_or(0.0) as f32;
            f.write_all(&d.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Reads whitespace-separated header tokens of a netpbm-style file, skipping `#` comments.
fn header_tokens<R: BufRead>(r: &mut R, n: usize) -> std::io::Result<Vec<String>> {
    let mut tokens = Vec::new();
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    let mut comment = false;
    while tokens.len() < n {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0] as char;
        if comment {
            comment = c != '\n';
            continue;
        }
        if c == '#' && tok.is_empty() {
            comment = true;
        } else if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                tokens.push(std::mem::take(&mut tok));
            }
        } else {
            tok.push(c);
        }
    }
    Ok(tokens)
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let err = |m: &str| format_err("pfm", path, m);
    let t = header_tokens(&mut r, 4)?;
    if t.len() < 4 || t[0] != "Pf" {
        return Err(err("expected single-channel `Pf` header"));
    }
    let w: usize = t[1].parse().map_err(|_| err("bad width"))?;
    let h: usize = t[2].parse().map_err(|_| err("bad height"))?;
    let scale: f64 = t[3].parse().map_err(|_| err("bad scale"))?;
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() != w * h * 4 {
        return Err(err("payload size does not match dimensions"));
    }
    let little = scale < 0.0;
    let mut values = Grid::new(w, h, 0.0);
    for row in 0..h {
        let v = h - 1 - row;
        for u in 0..w {
            let i = (row * w + u) * 4;
            let b = [data[i], data[i + 1], data[i + 2], data[i + 3]];
            let x = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            values.set(u, v, x as f64);
        }
    }
    Ok(DepthMap::from_values(values))
}

/// Binary 16-bit PGM (big-endian samples).
pub fn write_pgm16(path: &Path, mask: &LabelMask) -> Result<()> {
    let mut f = create(path)?;
    write!(f, "P5\n{} {}\n65535\n", mask.width(), mask.height())?;
    for &l in mask.labels.as_slice() {
        let l = u16::try_from(l)
            .map_err(|_| format_err("pgm", path, format!("label {l} exceeds 16 bits")))?;
        f.write_all(&l.to_be_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_pgm16(path: &Path) -> Result<LabelMask> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let err = |m: &str| format_err("pgm", path, m);
    let t = header_tokens(&mut r, 4)?;
    if t.len() < 4 || t[0] != "P5" {
        return Err(err("expected `P5` header"));
    }
    let w: usize = t[1].parse().map_err(|_| err("bad width"))?;
    let h: usize = t[2].parse().map_err(|_| err("bad height"))?;
    let maxval: u32 = t[3].parse().map_err(|_| err("bad maxval"))?;
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let labels: Vec<u32> = if maxval > 255 {
        if data.len() != w * h * 2 {
            return Err(err("payload size does not match dimensions"));
        }
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    } else {
        if data.len() != w * h {
            return Err(err("payload size does not match dimensions"));
        }
        data.iter().map(|&b| b as u32).collect()
    };
    Ok(LabelMask::from_grid(Grid::from_vec(w, h, labels)?))
}

pub fn write_ppm(path: &Path, rgb: &Grid<Rgb>) -> Result<()> {
    let mut f = create(path)?;
    write!(f, "P6\n{} {}\n255\n", rgb.width(), rgb.height())?;
    for px in rgb.as_slice() {
        f.write_all(px)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Grid<Rgb>> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let err = |m: &str| format_err("ppm", path, m);
    let t = header_tokens(&mut r, 4)?;
    if t.len() < 4 || t[0] != "P6" || t[3] != "255" {
        return Err(err("expected 8-bit `P6` header"));
    }
    let w: usize = t[1].parse().map_err(|_| err("bad width"))?;
    let h: usize = t[2].parse().map_err(|_| err("bad height"))?;
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() != w * h * 3 {
        return Err(err("payload size does not match dimensions"));
    }
    Grid::from_vec(
        w,
        h,
        data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    )
}

fn parse_floats(path: &Path, kind: &'static str, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format_err(kind, path, format!("bad number {t:?}")))
        })
        .collect()
}

/// Row-major 3×4 `[R | t]`, one row per line.
pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    let mut s = String::new();
    for row in pose.to_rows() {
        s.push_str(&format!(
            "{:.17e} {:.17e} {:.17e} {:.17e}\n",
            row[0], row[1], row[2], row[3]
        ));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    let v = parse_floats(path, "pose", &fs::read_to_string(path)?)?;
    if v.len() != 12 {
        return Err(format_err("pose", path, "expected 12 numbers"));
    }
    let mut rows = [[0.0; 4]; 3];
    for (i, x) in v.into_iter().enumerate() {
        rows[i / 4][i % 4] = x;
    }
    Ok(Pose::from_rows(&rows))
}

/// `fx fy cx cy width height`
pub fn write_intrinsics(path: &Path, k: &Intrinsics) -> Result<()> {
    fs::write(
        path,
        format!(
            "{} {} {} {} {} {}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        ),
    )?;
    Ok(())
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let v = parse_floats(path, "intrinsics", &fs::read_to_string(path)?)?;
    if v.len() != 6 || v[4] < 1.0 || v[5] < 1.0 || v[4].fract() != 0.0 || v[5].fract() != 0.0 {
        return Err(format_err(
            "intrinsics",
            path,
            "expected `fx fy cx cy width height`",
        ));
    }
    Intrinsics::new(v[0], v[1], v[2], v[3], v[4] as usize, v[5] as usize)
}

/// One `id u v` line per seed pixel.
pub fn write_seeds(path: &Path, records: &[SeedRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        for &(u, v) in &r.seeds {
            s.push_str(&format!("{} {} {}\n", r.id, u, v));
        }
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_about;
    use nalgebra::Vector3;

    #[test]
    fn flo_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.flo");
        let mut f = FlowField::from_vectors(Grid::from_fn(7, 5, |u, v| {
            [u as f64 * 0.5, -(v as f64) * 0.25]
        }));
        f.set(3, 2, None);
        write_flo(&p, &f).unwrap();
        assert_eq!(read_flo(&p).unwrap(), f);
        assert_eq!(fs::metadata(&p).unwrap().len(), 12 + 7 * 5 * 8);
    }

    #[test]
    fn pfm_roundtrip_and_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let d = DepthMap::from_values(Grid::from_fn(4, 3, |u, v| {
            if u == 1 && v == 1 {
                0.0
            } else {
                0.5 + v as f64 * 0.25
            }
        }));
        write_pfm(&p, &d).unwrap();
        assert_eq!(read_pfm(&p).unwrap(), d);
        // First stored row is the bottom image row.
        let bytes = fs::read(&p).unwrap();
        let header = "Pf\n4 3\n-1.0\n".len();
        let first = f32::from_le_bytes(bytes[header..header + 4].try_into().unwrap());
        assert_eq!(first, 1.0);
    }

    #[test]
    fn pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let m = LabelMask::from_grid(Grid::from_fn(6, 4, |u, v| (u * v) as u32 * 300));
        write_pgm16(&p, &m).unwrap();
        assert_eq!(read_pgm16(&p).unwrap(), m);
        let big = LabelMask::from_grid(Grid::new(2, 2, 70_000));
        assert!(write_pgm16(&p, &big).is_err());
    }

    #[test]
    fn ppm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        let img = Grid::from_fn(5, 3, |u, v| [u as u8, v as u8, 200]);
        write_ppm(&p, &img).unwrap();
        assert_eq!(read_ppm(&p).unwrap(), img);
    }

    #[test]
    fn pose_and_intrinsics_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.txt");
        let pose = Pose::new(
            rotation_about(&Vector3::new(0.3, 1.0, 0.2), 0.7),
            Vector3::new(0.1, -0.2, 0.6),
        );
        write_pose(&p, &pose).unwrap();
        assert_eq!(read_pose(&p).unwrap(), pose);
        let q = dir.path().join("k.txt");
        let k = Intrinsics::default();
        write_intrinsics(&q, &k).unwrap();
        assert_eq!(read_intrinsics(&q).unwrap(), k);
    }

    #[test]
    fn malformed_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        fs::write(&p, b"PIEH").unwrap();
        assert!(matches!(
            read_flo(&p),
            Err(Error::Format { kind: "flo", .. })
        ));
        fs::write(&p, b"P6\n2 2\n255\nabc").unwrap();
        assert!(matches!(
            read_ppm(&p),
            Err(Error::Format { kind: "ppm", .. })
        ));
        fs::write(&p, b"1 2 3").unwrap();
        assert!(matches!(
            read_pose(&p),
            Err(Error::Format { kind: "pose", .. })
        ));
    }
}
