//! Readers and writers for events, trajectories, maps and masks.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::events::Event;
use crate::geometry::{MapSize, Rotation};
use crate::panorama::{GradientMap, IntensityMap, ValidMask};
use crate::trajectory::{StampedRotation, Trajectory};

const QUATERNION_TOLERANCE: f64 = 1e-3;
const BINARY_MAGIC: &[u8; 4] = b"EVT1";
const BINARY_RECORD: usize = 13;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Calls `f` with the 1-based line number and fields of every non-comment line.
fn for_each_record(path: &Path, mut f: impl FnMut(usize, &[&str]) -> Result<()>) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        f(i + 1, &fields)?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_error(path, line, format!("invalid {what} '{s}'")))
}

// ---------------------------------------------------------------- events

/// Reads events in either the text or the binary format, detected by the
/// binary magic bytes.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let mut head = [0u8; 4];
    let n = {
        use std::io::Read;
        let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        f.read(&mut head).map_err(|e| Error::io(path, e))?
    };
    if n == 4 && &head == BINARY_MAGIC {
        read_events_binary(path)
    } else {
        read_events_text(path)
    }
}

/// `t x y p` per line; `p` is 0/1 (or -1/+1).
pub fn read_events_text(path: &Path) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for_each_record(path, |line, f| {
        if f.len() != 4 {
            return Err(parse_error(path, line, format!("expected 4 fields, found {}", f.len())));
        }
        let t: f64 = parse_field(path, line, f[0], "timestamp")?;
        if !t.is_finite() {
            return Err(parse_error(path, line, "non-finite timestamp"));
        }
        let x = parse_field(path, line, f[1], "x coordinate")?;
        let y = parse_field(path, line, f[2], "y coordinate")?;
        let polarity = match f[3] {
            "1" | "+1" => 1,
            "0" | "-1" => -1,
            other => return Err(parse_error(path, line, format!("invalid polarity '{other}'"))),
        };
        events.push(Event::new(t, x, y, polarity));
        Ok(())
    })?;
    Ok(events)
}

pub fn write_events_text(path: &Path, events: &[Event]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for e in events {
        writeln!(w, "{} {} {} {}", e.t, e.x, e.y, u8::from(e.polarity > 0)).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_events_binary(path: &Path) -> Result<Vec<Event>> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 4 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::format(path, "missing EVT1 header"));
    }
    let body = &bytes[4..];
    if body.len() % BINARY_RECORD != 0 {
        return Err(Error::format(
            path,
            format!("truncated record: {} trailing bytes", body.len() % BINARY_RECORD),
        ));
    }
    body.chunks_exact(BINARY_RECORD)
        .enumerate()
        .map(|(i, r)| {
            let t = f64::from_le_bytes(r[0..8].try_into().expect("8 bytes"));
            let x = u16::from_le_bytes([r[8], r[9]]);
            let y = u16::from_le_bytes([r[10], r[11]]);
            let p = r[12] as i8;
            if !t.is_finite() || !(p == 1 || p == -1) {
                return Err(Error::format(path, format!("invalid record {i}")));
            }
            Ok(Event::new(t, x, y, p))
        })
        .collect()
}

pub fn write_events_binary(path: &Path, events: &[Event]) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + BINARY_RECORD * events.len());
    bytes.extend_from_slice(BINARY_MAGIC);
    for e in events {
        bytes.extend_from_slice(&e.t.to_le_bytes());
        bytes.extend_from_slice(&e.x.to_le_bytes());
        bytes.extend_from_slice(&e.y.to_le_bytes());
        bytes.push(e.polarity as u8);
    }
    write_bytes(path, &bytes)
}

// ------------------------------------------------------------ trajectories

/// `t qw qx qy qz` per line.
pub fn read_trajectory_samples(path: &Path) -> Result<Vec<StampedRotation>> {
    let mut out = Vec::new();
    for_each_record(path, |line, f| {
        if f.len() != 5 {
            return Err(parse_error(path, line, format!("expected 5 fields, found {}", f.len())));
        }
        let v = f
            .iter()
            .map(|s| parse_field::<f64>(path, line, s, "number"))
            .collect::<Result<Vec<_>>>()?;
        let norm = (v[1] * v[1] + v[2] * v[2] + v[3] * v[3] + v[4] * v[4]).sqrt();
        if !v.iter().all(|x| x.is_finite()) || (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(parse_error(
                path,
                line,
                format!("quaternion norm {norm} is not within {QUATERNION_TOLERANCE} of 1"),
            ));
        }
        out.push(StampedRotation {
            t: v[0],
            rotation: Rotation::from_quaternion(v[1], v[2], v[3], v[4]),
        });
        Ok(())
    })?;
    Ok(out)
}

/// Reads samples and resamples them onto a uniform grid at `rate`.
pub fn read_trajectory(path: &Path, rate: f64) -> Result<Trajectory> {
    let samples = read_trajectory_samples(path)?;
    Trajectory::resample(&samples, rate).map_err(|e| match e {
        Error::InvalidTrajectory(m) => Error::format(path, m),
        other => other,
    })
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut s = String::from("# t qw qx qy qz\n");
    for (i, r) in traj.poses().iter().enumerate() {
        let [w, x, y, z] = r.to_quaternion();
        s.push_str(&format!("{} {} {} {} {}\n", traj.time_of(i), w, x, y, z));
    }
    write_bytes(path, s.as_bytes())
}

// -------------------------------------------------------------------- PFM

/// Reads a single-channel PFM in either byte order. Rows are returned top
/// to bottom.
pub fn read_pfm(path: &Path) -> Result<(MapSize, Vec<f64>)> {
    let bytes = read_bytes(path)?;
    let mut pos = 0;
    let mut token = || -> Option<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token().ok_or_else(|| Error::format(path, "empty file"))?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(Error::format(path, format!("bad PFM magic '{magic}'"))),
    };
    let mut num = |what: &str| -> Result<String> {
        token().ok_or_else(|| Error::format(path, format!("missing {what}")))
    };
    let width: usize = num("width")?.parse().map_err(|_| Error::format(path, "bad width"))?;
    let height: usize = num("height")?.parse().map_err(|_| Error::format(path, "bad height"))?;
    let scale: f64 = num("scale")?.parse().map_err(|_| Error::format(path, "bad scale"))?;
    if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, "invalid PFM header"));
    }
    let data_start = pos + 1;
    let expected = width * height * channels * 4;
    if bytes.len() < data_start + expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes of pixel data, found {}", bytes.len().saturating_sub(data_start)),
        ));
    }
    let little = scale < 0.0;
    let px = &bytes[data_start..data_start + expected];
    let mut data = vec![0.0; width * height];
    for row in 0..height {
        // File rows run bottom to top.
        let src_row = height - 1 - row;
        for col in 0..width {
            let o = (src_row * width + col) * channels * 4;
            let b: [u8; 4] = px[o..o + 4].try_into().expect("4 bytes");
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            data[row * width + col] = f64::from(v);
        }
    }
    Ok((MapSize::new(width, height), data))
}

pub fn write_pfm(path: &Path, size: MapSize, data: &[f64]) -> Result<()> {
    let mut bytes = format!("Pf\n{} {}\n-1.0\n", size.width, size.height).into_bytes();
    bytes.reserve(data.len() * 4);
    for row in (0..size.height).rev() {
        for v in &data[row * size.width..(row + 1) * size.width] {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write_bytes(path, &bytes)
}

/// `<prefix>.gx.pfm` and `<prefix>.gy.pfm`.
pub fn gradient_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let s = prefix.as_os_str().to_string_lossy();
    (PathBuf::from(format!("{s}.gx.pfm")), PathBuf::from(format!("{s}.gy.pfm")))
}

pub fn write_gradient_map(prefix: &Path, g: &GradientMap) -> Result<()> {
    let (px, py) = gradient_paths(prefix);
    write_pfm(&px, g.size(), g.gx())?;
    write_pfm(&py, g.size(), g.gy())
}

pub fn read_gradient_map(prefix: &Path) -> Result<GradientMap> {
    let (px, py) = gradient_paths(prefix);
    let (sx, gx) = read_pfm(&px)?;
    let (sy, gy) = read_pfm(&py)?;
    if sx != sy {
        return Err(Error::format(&py, "gradient channels differ in size"));
    }
    GradientMap::from_channels(sx, gx, gy)
}

// -------------------------------------------------------------------- PGM

/// 16-bit PGM after mapping the value range over `mask` (or the whole image)
/// onto [0, 65535]. A constant image maps to mid-gray.
pub fn write_intensity_pgm(path: &Path, map: &IntensityMap, mask: Option<&ValidMask>) -> Result<()> {
    let size = map.size();
    let valid = |p: usize| mask.is_none_or(|m| m.is_valid(p));
    let (lo, hi) = map
        .data()
        .iter()
        .enumerate()
        .filter(|(p, _)| valid(*p))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| (lo.min(*v), hi.max(*v)));
    let mut bytes = format!("P5\n{} {}\n65535\n", size.width, size.height).into_bytes();
    for v in map.data() {
        let level = if hi > lo {
            ((v - lo) / (hi - lo) * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            32768
        };
        bytes.extend_from_slice(&level.to_be_bytes());
    }
    write_bytes(path, &bytes)
}

pub fn write_mask_pgm(path: &Path, mask: &ValidMask) -> Result<()> {
    let size = mask.size();
    let mut bytes = format!("P5\n{} {}\n255\n", size.width, size.height).into_bytes();
    bytes.extend((0..size.n_pixels()).map(|p| if mask.is_valid(p) { 255u8 } else { 0 }));
    write_bytes(path, &bytes)
}

/// Reads a binary PGM (8 or 16 bit) as raw levels in [0, maxval].
pub fn read_pgm(path: &Path) -> Result<(MapSize, Vec<f64>, u32)> {
    let bytes = read_bytes(path)?;
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::format(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::format(path, format!("unsupported PGM magic '{}'", fields[0])));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::format(path, format!("bad {what}")))
    };
    let (w, h, maxval) = (parse(&fields[1], "width")?, parse(&fields[2], "height")?, parse(&fields[3], "maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, "invalid PGM header"));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    let bpp = if maxval > 255 { 2 } else { 1 };
    if data.len() < w * h * bpp {
        return Err(Error::format(path, "truncated PGM data"));
    }
    let values = (0..w * h)
        .map(|i| {
            if bpp == 2 {
                f64::from(u16::from_be_bytes([data[2 * i], data[2 * i + 1]]))
            } else {
                f64::from(data[i])
            }
        })
        .collect();
    Ok((MapSize::new(w, h), values, maxval as u32))
}

/// Loads a panorama as log intensity. PFM holds log intensity directly; PGM
/// levels are taken as linear intensity and mapped to `ln((v + 1) / (max + 1))`.
pub fn read_log_intensity(path: &Path) -> Result<IntensityMap> {
    let is_pfm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    if is_pfm {
        let (size, data) = read_pfm(path)?;
        return IntensityMap::new(size, data);
    }
    let (size, levels, maxval) = read_pgm(path)?;
    let top = f64::from(maxval) + 1.0;
    IntensityMap::new(size, levels.iter().map(|v| ((v + 1.0) / top).ln()).collect())
}
