//! On-disk formats: `.lscan` scans, `scans.csv` manifests, `imu.csv`, and
//! TUM trajectories.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::features::{LidarFrame, ScanPoint};
use crate::geometry::{Pose, Rotation};
use crate::imu::ImuSample;

const LSCAN_MAGIC: &[u8; 4] = b"LSCN";
const LSCAN_VERSION: u32 = 1;
const LSCAN_HEADER: usize = 4 + 4 + 4 + 8;

/// Serializes a frame: magic, version, count, stamp, then per point
/// `x y z rel_time ring` as little-endian `f32`.
pub fn encode_lscan(frame: &LidarFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(LSCAN_HEADER + 20 * frame.len());
    out.extend_from_slice(LSCAN_MAGIC);
    out.extend_from_slice(&LSCAN_VERSION.to_le_bytes());
    out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
    out.extend_from_slice(&frame.stamp.to_le_bytes());
    for p in &frame.points {
        let v = [p.position.x, p.position.y, p.position.z, p.rel_time, p.ring as f64];
        for x in v {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_lscan(bytes: &[u8], path: &Path) -> Result<LidarFrame> {
    let bad = |msg: &str| Error::parse(path, 0, msg);
    if bytes.len() < LSCAN_HEADER || &bytes[..4] != LSCAN_MAGIC {
        return Err(bad("not an LSCN file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != LSCAN_VERSION {
        return Err(bad("unsupported LSCN version"));
    }
    let count = u32_at(8) as usize;
    let stamp = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if bytes.len() != LSCAN_HEADER + 20 * count {
        return Err(bad("point payload length does not match the header count"));
    }
    let f = |o: usize| f64::from(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()));
    let mut points = Vec::with_capacity(count);
    for k in 0..count {
        let o = LSCAN_HEADER + 20 * k;
        let ring = f(o + 16);
        if !(ring >= 0.0 && ring.fract() == 0.0) {
            return Err(bad("ring must be a non-negative integer"));
        }
        points.push(ScanPoint::new(Vector3::new(f(o), f(o + 4), f(o + 8)), ring as u32, f(o + 12)));
    }
    Ok(LidarFrame::new(stamp, points))
}

pub fn write_lscan(path: &Path, frame: &LidarFrame) -> Result<()> {
    fs::write(path, encode_lscan(frame))?;
    Ok(())
}

pub fn read_lscan(path: &Path) -> Result<LidarFrame> {
    decode_lscan(&fs::read(path)?, path)
}

/// One row of `scans.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanEntry {
    pub index: usize,
    pub stamp: f64,
    /// Path relative to the manifest's directory.
    pub file: String,
}

pub fn scan_file_name(index: usize) -> String {
    format!("scan_{index}.lscan")
}

pub fn write_scan_manifest(path: &Path, entries: &[ScanEntry]) -> Result<()> {
    let mut s = String::from("index,stamp,file\n");
    for e in entries {
        let _ = writeln!(s, "{},{},{}", e.index, e.stamp, e.file);
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_scan_manifest(path: &Path) -> Result<Vec<ScanEntry>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "index,stamp,file" => {}
        _ => return Err(Error::parse(path, 1, "expected header `index,stamp,file`")),
    }
    let mut out: Vec<ScanEntry> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::parse(path, n + 1, msg);
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let [index, stamp, file] = f.as_slice() else {
            return Err(bad("expected 3 fields"));
        };
        let entry = ScanEntry {
            index: index.parse().map_err(|_| bad("bad index"))?,
            stamp: stamp.parse().map_err(|_| bad("bad stamp"))?,
            file: file.to_string(),
        };
        if !entry.stamp.is_finite() {
            return Err(bad("non-finite stamp"));
        }
        if let Some(prev) = out.last() {
            if entry.stamp <= prev.stamp {
                return Err(bad("stamps must be strictly increasing"));
            }
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,ax,ay,az,gx,gy,gz")?;
    for s in samples {
        let (a, g) = (s.accel, s.gyro);
        writeln!(w, "{},{},{},{},{},{},{}", s.t, a.x, a.y, a.z, g.x, g.y, g.z)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "t,ax,ay,az,gx,gy,gz" => {}
        _ => return Err(Error::parse(path, 1, "expected header `t,ax,ay,az,gx,gy,gz`")),
    }
    let mut out: Vec<ImuSample> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::parse(path, n + 1, msg);
        let v: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad number"))?;
        let [t, ax, ay, az, gx, gy, gz] = v.as_slice() else {
            return Err(bad("expected 7 fields"));
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite value"));
        }
        if let Some(prev) = out.last() {
            if *t <= prev.t {
                return Err(bad("timestamps must be strictly increasing"));
            }
        }
        out.push(ImuSample::new(*t, Vector3::new(*ax, *ay, *az), Vector3::new(*gx, *gy, *gz)));
    }
    Ok(out)
}

/// `printf("%.9g")`: nine significant digits, trailing zeros dropped.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..9).contains(&exp) {
        trim(&format!("{:.*}", (8 - exp) as usize, x))
    } else {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

/// Keyframe trajectory with strictly increasing stamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryEstimate {
    pub stamps: Vec<f64>,
    pub poses: Vec<Pose>,
}

impl TrajectoryEstimate {
    pub fn new(stamps: Vec<f64>, poses: Vec<Pose>) -> Result<Self> {
        if stamps.len() != poses.len() {
            return Err(Error::InvalidArgument("stamp and pose counts differ".into()));
        }
        for w in stamps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::NonMonotonicTime { prev: w[0], next: w[1] });
            }
        }
        Ok(TrajectoryEstimate { stamps, poses })
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn push(&mut self, stamp: f64, pose: Pose) -> Result<()> {
        if let Some(&prev) = self.stamps.last() {
            if stamp <= prev {
                return Err(Error::NonMonotonicTime { prev, next: stamp });
            }
        }
        self.stamps.push(stamp);
        self.poses.push(pose);
        Ok(())
    }

    /// Pose whose stamp is nearest to `t`, if within `tolerance`.
    pub fn nearest(&self, t: f64, tolerance: f64) -> Option<(f64, Pose)> {
        let k = self.stamps.partition_point(|&s| s < t);
        [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&i| i < self.stamps.len())
            .map(|i| (self.stamps[i], self.poses[i]))
            .filter(|(s, _)| (s - t).abs() <= tolerance)
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
    }

    /// TUM text: `stamp tx ty tz qx qy qz qw`, nine significant digits.
    pub fn to_tum(&self) -> String {
        let mut s = String::new();
        for (t, p) in self.stamps.iter().zip(&self.poses) {
            let (v, r) = (p.translation, p.rotation);
            let fields = [*t, v.x, v.y, v.z, r.x(), r.y(), r.z(), r.w()].map(format_sig9);
            let _ = writeln!(s, "{}", fields.join(" "));
        }
        s
    }

    pub fn from_tum(text: &str, path: &Path) -> Result<Self> {
        let mut out = TrajectoryEstimate::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::parse(path, n + 1, msg);
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad number"))?;
            let [t, x, y, z, qx, qy, qz, qw] = v.as_slice() else {
                return Err(bad("expected 8 fields"));
            };
            if v.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite value"));
            }
            let q_norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
            if (q_norm - 1.0).abs() > 1e-3 {
                return Err(bad("quaternion is not unit length"));
            }
            let rotation = Rotation::from_wxyz_within(*qw, *qx, *qy, *qz, 1e-6);
            out.push(*t, Pose::new(rotation, Vector3::new(*x, *y, *z)))
                .map_err(|_| bad("stamps must be strictly increasing"))?;
        }
        Ok(out)
    }

    pub fn write_tum(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tum())?;
        Ok(())
    }

    pub fn read_tum(path: &Path) -> Result<Self> {
        Self::from_tum(&fs::read_to_string(path)?, path)
    }
}

/// A directory holding `scans.csv`, the scans it lists, and `imu.csv`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub scans: Vec<ScanEntry>,
    pub imu: Vec<ImuSample>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let scans = read_scan_manifest(&root.join("scans.csv"))?;
        let imu_path = root.join("imu.csv");
        let imu = if imu_path.exists() {
            read_imu_csv(&imu_path)?
        } else {
            Vec::new()
        };
        Ok(Dataset {
            root: root.to_path_buf(),
            scans,
            imu,
        })
    }

    pub fn frame(&self, k: usize) -> Result<LidarFrame> {
        let e = &self.scans[k];
        let mut frame = read_lscan(&self.root.join(&e.file))?;
        // the manifest stamp is authoritative
        frame.stamp = e.stamp;
        Ok(frame)
    }
}

/// Writes frames as `scan_<index>.lscan` plus `scans.csv` into `dir`.
pub fn write_scan_archive(dir: &Path, frames: &[(usize, LidarFrame)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(frames.len());
    for (index, frame) in frames {
        let file = scan_file_name(*index);
        write_lscan(&dir.join(&file), frame)?;
        entries.push(ScanEntry {
            index: *index,
            stamp: frame.stamp,
            file,
        });
    }
    write_scan_manifest(&dir.join("scans.csv"), &entries)
}
