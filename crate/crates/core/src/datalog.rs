//! Frame-by-frame persistence and the post-processing editor: lap log file
//! format, PWM normalization, image resizing, zone labeling, per-zone frame
//! extraction and train/test splitting.

use crate::error::{Error, Result};
use crate::sim::track::Track;
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"HMTL";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Cw,
    Ccw,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Cw => "cw",
            Direction::Ccw => "ccw",
        }
    }

    pub fn sign(&self) -> f64 {
        match self {
            Direction::Cw => 1.0,
            Direction::Ccw => -1.0,
        }
    }
}

/// One logged time step. Images are stored quantized (value·255, rounded);
/// `s` is the recording-time arc length, carried in memory only — it does
/// not survive the log format.
#[derive(Clone, Debug)]
pub struct FrameRecord {
    pub frame_index: u32,
    pub timestamp: f64,
    pub steering: f32,
    pub throttle: f32,
    pub frame_rate: f32,
    /// 0 = unlabeled, 1..=5 = zone.
    pub zone: u8,
    /// 6·H·W bytes, channel-major.
    pub image: Vec<u8>,
    pub s: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LapHeader {
    pub track_hash: u64,
    pub direction: Direction,
    pub dt: f32,
    pub height: u16,
    pub width: u16,
}

#[derive(Clone, Debug)]
pub struct LapLog {
    pub header: LapHeader,
    pub frames: Vec<FrameRecord>,
}

impl LapLog {
    pub fn image_len(&self) -> usize {
        6 * self.header.height as usize * self.header.width as usize
    }

    /// Frame image as a [6,H,W] float tensor in [0,1].
    pub fn image_f32(&self, frame: usize) -> Tensor<f32> {
        let f = &self.frames[frame];
        let data: Vec<f32> = f.image.iter().map(|&b| b as f32 / 255.0).collect();
        Tensor::new(
            vec![6, self.header.height as usize, self.header.width as usize],
            data,
        )
        .expect("image shape")
    }

    /// CSV of the scalar columns for plotting.
    pub fn export_csv(&self) -> String {
        let mut out = String::from("frame_index,timestamp,steering,throttle,frame_rate,zone\n");
        for f in &self.frames {
            out.push_str(&format!(
                "{},{:.6},{:.4},{:.4},{:.2},{}\n",
                f.frame_index, f.timestamp, f.steering, f.throttle, f.frame_rate, f.zone
            ));
        }
        out
    }
}

pub fn quantize_image(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

// ---------------------------------------------------------------------------
// Lap log binary format
// ---------------------------------------------------------------------------

pub fn write_lap(log: &LapLog, path: &Path) -> Result<()> {
    let image_len = log.image_len();
    for f in &log.frames {
        if f.image.len() != image_len {
            return Err(Error::dimension(format!(
                "frame {} image has {} bytes, header implies {}",
                f.frame_index,
                f.image.len(),
                image_len
            )));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(log.header.track_hash)?;
    w.write_u8(match log.header.direction {
        Direction::Cw => 0,
        Direction::Ccw => 1,
    })?;
    w.write_f32::<LittleEndian>(log.header.dt)?;
    w.write_u16::<LittleEndian>(log.header.height)?;
    w.write_u16::<LittleEndian>(log.header.width)?;
    w.write_u32::<LittleEndian>(log.frames.len() as u32)?;
    for f in &log.frames {
        w.write_u32::<LittleEndian>(f.frame_index)?;
        w.write_f64::<LittleEndian>(f.timestamp)?;
        w.write_f32::<LittleEndian>(f.steering)?;
        w.write_f32::<LittleEndian>(f.throttle)?;
        w.write_f32::<LittleEndian>(f.frame_rate)?;
        w.write_u8(f.zone)?;
        w.write_all(&f.image)?;
    }
    w.flush()?;
    Ok(())
}

struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

pub fn read_lap(path: &Path) -> Result<LapLog> {
    let mut r = Counting {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let fail = |r: &Counting<BufReader<File>>, msg: String| Error::format(r.offset, msg);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(0, "file shorter than magic"))?;
    if &magic != MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:?}, expected HMTL"),
        ));
    }
    let version = r
        .read_u16::<LittleEndian>()
        .map_err(|_| fail(&r, "missing version".into()))?;
    if version != VERSION {
        return Err(fail(&r, format!("unsupported version {version}")));
    }
    let track_hash = r
        .read_u64::<LittleEndian>()
        .map_err(|_| fail(&r, "missing track hash".into()))?;
    let direction = match r.read_u8().map_err(|_| fail(&r, "missing direction".into()))? {
        0 => Direction::Cw,
        1 => Direction::Ccw,
        d => return Err(fail(&r, format!("invalid direction byte {d}"))),
    };
    let dt = r
        .read_f32::<LittleEndian>()
        .map_err(|_| fail(&r, "missing dt".into()))?;
    let height = r
        .read_u16::<LittleEndian>()
        .map_err(|_| fail(&r, "missing image height".into()))?;
    let width = r
        .read_u16::<LittleEndian>()
        .map_err(|_| fail(&r, "missing image width".into()))?;
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| fail(&r, "missing frame count".into()))?;

    let header = LapHeader {
        track_hash,
        direction,
        dt,
        height,
        width,
    };
    let image_len = 6 * height as usize * width as usize;
    let mut frames = Vec::with_capacity(count as usize);
    for i in 0..count {
        let frame_fail =
            |r: &Counting<BufReader<File>>| Error::format(r.offset, format!("truncated in frame {i}"));
        let frame_index = r.read_u32::<LittleEndian>().map_err(|_| frame_fail(&r))?;
        let timestamp = r.read_f64::<LittleEndian>().map_err(|_| frame_fail(&r))?;
        let steering = r.read_f32::<LittleEndian>().map_err(|_| frame_fail(&r))?;
        let throttle = r.read_f32::<LittleEndian>().map_err(|_| frame_fail(&r))?;
        let frame_rate = r.read_f32::<LittleEndian>().map_err(|_| frame_fail(&r))?;
        let zone = r.read_u8().map_err(|_| frame_fail(&r))?;
        if zone > 5 {
            return Err(fail(&r, format!("frame {i}: invalid zone {zone}")));
        }
        let mut image = vec![0u8; image_len];
        r.read_exact(&mut image).map_err(|_| frame_fail(&r))?;
        frames.push(FrameRecord {
            frame_index,
            timestamp,
            steering,
            throttle,
            frame_rate,
            zone,
            image,
            s: None,
        });
    }
    // Frame indices must be strictly increasing within a lap.
    for pair in frames.windows(2) {
        if pair[1].frame_index <= pair[0].frame_index {
            return Err(Error::format(
                0,
                format!(
                    "frame indices not strictly increasing: {} then {}",
                    pair[0].frame_index, pair[1].frame_index
                ),
            ));
        }
    }
    Ok(LapLog { header, frames })
}

// ---------------------------------------------------------------------------
// Editor operations
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PwmCalibration {
    pub min_us: f64,
    pub mid_us: f64,
    pub max_us: f64,
}

impl Default for PwmCalibration {
    fn default() -> Self {
        PwmCalibration {
            min_us: 1000.0,
            mid_us: 1500.0,
            max_us: 2000.0,
        }
    }
}

/// Piecewise-linear PWM → steering map: min→−100 (full left), mid→0,
/// max→+100 (full right), clamped outside.
pub fn normalize_pwm(raw_us: f64, cal: &PwmCalibration) -> Result<f32> {
    if !(cal.min_us < cal.mid_us && cal.mid_us < cal.max_us) {
        return Err(Error::parameter(format!(
            "inverted PWM calibration: {} / {} / {}",
            cal.min_us, cal.mid_us, cal.max_us
        )));
    }
    let v = if raw_us <= cal.mid_us {
        (raw_us - cal.mid_us) / (cal.mid_us - cal.min_us) * 100.0
    } else {
        (raw_us - cal.mid_us) / (cal.max_us - cal.mid_us) * 100.0
    };
    Ok(v.clamp(-100.0, 100.0) as f32)
}

/// 4×4 block average per channel: [6, 4h, 4w] → [6, h, w].
pub fn resize_image(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 6 {
        return Err(Error::dimension(format!(
            "resize expects a [6,H,W] image, got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::parameter(format!(
            "image dims {h}x{w} are not divisible by 4"
        )));
    }
    let (oh, ow) = (h / 4, w / 4);
    let src = image.data();
    let mut out = Tensor::zeros(vec![6, oh, ow]);
    let dst = out.data_mut();
    for c in 0..6 {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for dy in 0..4 {
                    let row = (c * h + oy * 4 + dy) * w + ox * 4;
                    for dx in 0..4 {
                        acc += src[row + dx];
                    }
                }
                dst[(c * oh + oy) * ow + ox] = acc / 16.0;
            }
        }
    }
    Ok(out)
}

/// Relabel every frame from its recorded arc length. Requires the lap to
/// carry in-memory `s` values (fresh recordings do; logs loaded from disk
/// do not, by format).
pub fn label_zones(log: &mut LapLog, track: &Track) -> Result<()> {
    if log.header.track_hash != track.hash() {
        return Err(Error::IncompatibleTrack(format!(
            "lap was recorded on track {:#018x}, labeling against {:#018x}",
            log.header.track_hash,
            track.hash()
        )));
    }
    for f in &mut log.frames {
        let s = f.s.ok_or_else(|| {
            Error::data(format!(
                "frame {} has no recorded arc length; relabeling is only \
                 possible on in-memory recordings",
                f.frame_index
            ))
        })?;
        f.zone = track.zone_of(s);
    }
    Ok(())
}

/// A maximal run of same-zone frames within one lap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZoneSegment {
    pub lap: usize,
    pub start: usize,
    pub len: usize,
    pub zone: u8,
}

/// Maximal contiguous runs of `zone` across the given laps, in temporal
/// order. Runs shorter than a model's window are retained; padding is the
/// consumer's job.
pub fn extract_zone_frames(laps: &[&LapLog], zone: u8) -> Vec<ZoneSegment> {
    let mut segments = Vec::new();
    for (lap_idx, lap) in laps.iter().enumerate() {
        let mut start = None;
        for (i, f) in lap.frames.iter().enumerate() {
            if f.zone == zone {
                if start.is_none() {
                    start = Some(i);
                }
            } else if let Some(s) = start.take() {
                segments.push(ZoneSegment {
                    lap: lap_idx,
                    start: s,
                    len: i - s,
                    zone,
                });
            }
        }
        if let Some(s) = start {
            segments.push(ZoneSegment {
                lap: lap_idx,
                start: s,
                len: lap.frames.len() - s,
                zone,
            });
        }
    }
    segments
}

/// Train/test lap partition. Frames are referenced, never copied, and a lap
/// is never split across the two sides.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train_laps: Vec<usize>,
    pub test_laps: Vec<usize>,
}

/// Build a split from `laps`: per direction, the first `n_base/2` laps go to
/// training and the last `n_test/2` to testing.
pub fn make_split(
    laps: &[&LapLog],
    n_base_total: usize,
    n_test_total: usize,
) -> Result<DatasetSplit> {
    if n_base_total % 2 != 0 || n_test_total % 2 != 0 {
        return Err(Error::parameter(
            "lap budgets must be even for exact direction balance",
        ));
    }
    let per_dir_base = n_base_total / 2;
    let per_dir_test = n_test_total / 2;
    let mut train_laps = Vec::new();
    let mut test_laps = Vec::new();
    for dir in [Direction::Cw, Direction::Ccw] {
        let available: Vec<usize> = laps
            .iter()
            .enumerate()
            .filter(|(_, l)| l.header.direction == dir)
            .map(|(i, _)| i)
            .collect();
        let needed = per_dir_base + per_dir_test;
        if available.len() < needed {
            return Err(Error::data(format!(
                "need {needed} {} laps ({per_dir_base} train + {per_dir_test} test), \
                 have {}",
                dir.as_str(),
                available.len()
            )));
        }
        train_laps.extend_from_slice(&available[..per_dir_base]);
        test_laps.extend_from_slice(&available[available.len() - per_dir_test..]);
    }
    Ok(DatasetSplit {
        train_laps,
        test_laps,
    })
}
