//! Media probing, frame sampling and placeholder synthesis.
//!
//! Placeholder videos are minimal ISO-BMFF files (`ftyp` + `moov` with
//! `mvhd`/`tkhd`) that carry a PNG poster frame in a `uuid` box. They probe
//! like real MP4 files but hold no coded samples.

use std::io::Cursor;
use std::path::Path;
use std::process::Command;

use image::ImageReader;

use crate::model::MediaKind;

#[derive(Debug, thiserror::Error)]
pub enum MediaError {
    #[error("unsupported media type: {0}")]
    Unsupported(String),
    #[error("cannot probe {path}: {reason}")]
    Probe { path: String, reason: String },
    #[error("frame extraction unavailable for {0}")]
    NoFrames(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MediaError {
    fn probe(path: &Path, reason: impl ToString) -> Self {
        MediaError::Probe {
            path: path.display().to_string(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaInfo {
    pub kind: MediaKind,
    pub duration_s: Option<f64>,
    pub width: Option<u32>,
    pub height: Option<u32>,
}

/// Media kind implied by a file extension, if supported.
pub fn kind_for_extension(ext: &str) -> Option<MediaKind> {
    match ext.to_ascii_lowercase().as_str() {
        "jpg" | "jpeg" | "png" => Some(MediaKind::Image),
        "mp4" => Some(MediaKind::Video),
        "wav" | "mp3" => Some(MediaKind::Audio),
        _ => None,
    }
}

pub fn extension_of(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

/// Reads kind, dimensions and duration from a media file.
pub fn probe(path: &Path) -> Result<MediaInfo, MediaError> {
    let ext = extension_of(path);
    let kind = kind_for_extension(&ext).ok_or_else(|| MediaError::Unsupported(ext.clone()))?;
    match (kind, ext.as_str()) {
        (MediaKind::Image, _) => {
            let (w, h) = ImageReader::open(path)?
                .with_guessed_format()?
                .into_dimensions()
                .map_err(|e| MediaError::probe(path, e))?;
            Ok(MediaInfo {
                kind,
                duration_s: None,
                width: Some(w),
                height: Some(h),
            })
        }
        (MediaKind::Video, _) => {
            let bytes = std::fs::read(path)?;
            let info = probe_mp4(&bytes).map_err(|e| MediaError::probe(path, e))?;
            Ok(MediaInfo {
                kind,
                duration_s: Some(info.duration_s),
                width: Some(info.width),
                height: Some(info.height),
            })
        }
        (MediaKind::Audio, "wav") => {
            let reader = hound::WavReader::open(path).map_err(|e| MediaError::probe(path, e))?;
            let spec = reader.spec();
            let frames = reader.duration() as f64;
            Ok(MediaInfo {
                kind,
                duration_s: Some(frames / spec.sample_rate as f64),
                width: None,
                height: None,
            })
        }
        (MediaKind::Audio, _) => {
            let d = mp3_duration::from_path(path).map_err(|e| MediaError::probe(path, e))?;
            Ok(MediaInfo {
                kind,
                duration_s: Some(d.as_secs_f64()),
                width: None,
                height: None,
            })
        }
    }
}

/// Duration and display size read from an MP4 `moov` box.
#[derive(Debug, Clone, PartialEq)]
pub struct Mp4Info {
    pub duration_s: f64,
    pub width: u32,
    pub height: u32,
}

const POSTER_UUID: [u8; 16] = *b"storyloom-poster";
const TAG_UUID: [u8; 16] = *b"storyloom-tag-v1";

struct BoxIter<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Iterator for BoxIter<'a> {
    type Item = Result<([u8; 4], &'a [u8]), String>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos + 8 > self.data.len() {
            return None;
        }
        let d = &self.data[self.pos..];
        let size32 = u32::from_be_bytes([d[0], d[1], d[2], d[3]]) as usize;
        let kind = [d[4], d[5], d[6], d[7]];
        let (header, size) = match size32 {
            0 => (8, d.len()),
            1 => {
                if d.len() < 16 {
                    return Some(Err("truncated largesize box".into()));
                }
                let mut b = [0u8; 8];
                b.copy_from_slice(&d[8..16]);
                (16, u64::from_be_bytes(b) as usize)
            }
            n => (8, n),
        };
        if size < header || size > d.len() {
            self.pos = self.data.len();
            return Some(Err(format!("box {} has bad size {size}", String::from_utf8_lossy(&kind))));
        }
        self.pos += size;
        Some(Ok((kind, &d[header..size])))
    }
}

fn boxes(data: &[u8]) -> BoxIter<'_> {
    BoxIter { data, pos: 0 }
}

fn be_u32(d: &[u8], at: usize) -> Result<u32, String> {
    d.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| "truncated box".to_string())
}

fn be_u64(d: &[u8], at: usize) -> Result<u64, String> {
    d.get(at..at + 8)
        .map(|b| {
            let mut a = [0u8; 8];
            a.copy_from_slice(b);
            u64::from_be_bytes(a)
        })
        .ok_or_else(|| "truncated box".to_string())
}

/// Parses `moov/mvhd` and the first `trak/tkhd` with a visual size.
pub fn probe_mp4(data: &[u8]) -> Result<Mp4Info, String> {
    let mut moov = None;
    for b in boxes(data) {
        let (kind, body) = b?;
        if &kind == b"moov" {
            moov = Some(body);
        }
    }
    let moov = moov.ok_or("no moov box")?;
    let mut duration_s = None;
    let (mut width, mut height) = (0, 0);
    for b in boxes(moov) {
        let (kind, body) = b?;
        match &kind {
            b"mvhd" => {
                let version = *body.first().ok_or("empty mvhd")?;
                let (timescale, duration) = if version == 1 {
                    (be_u32(body, 20)?, be_u64(body, 24)?)
                } else {
                    (be_u32(body, 12)?, be_u32(body, 16)? as u64)
                };
                if timescale == 0 {
                    return Err("mvhd timescale is zero".into());
                }
                duration_s = Some(duration as f64 / timescale as f64);
            }
            b"trak" if width == 0 => {
                for t in boxes(body) {
                    let (tk, tb) = t?;
                    if &tk == b"tkhd" {
                        let version = *tb.first().ok_or("empty tkhd")?;
                        let off = if version == 1 { 88 } else { 76 };
                        width = be_u32(tb, off)? >> 16;
                        height = be_u32(tb, off + 4)? >> 16;
                    }
                }
            }
            _ => {}
        }
    }
    Ok(Mp4Info {
        duration_s: duration_s.ok_or("no mvhd box")?,
        width,
        height,
    })
}

fn mp4_box(kind: &[u8; 4], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(&((body.len() + 8) as u32).to_be_bytes());
    out.extend_from_slice(kind);
    out.extend_from_slice(body);
    out
}

const UNITY_MATRIX: [u32; 9] = [0x0001_0000, 0, 0, 0, 0x0001_0000, 0, 0, 0, 0x4000_0000];

/// Writes a placeholder MP4 with the given duration, size, poster and tag.
pub fn placeholder_mp4(duration_ms: u64, width: u32, height: u32, poster_png: &[u8], tag: &str) -> Vec<u8> {
    let mut ftyp = Vec::new();
    ftyp.extend_from_slice(b"isom");
    ftyp.extend_from_slice(&0x200u32.to_be_bytes());
    for brand in [b"isom", b"iso2", b"mp41"] {
        ftyp.extend_from_slice(brand);
    }

    let mut mvhd = vec![0u8; 4]; // version 0, flags 0
    mvhd.extend_from_slice(&0u32.to_be_bytes());
    mvhd.extend_from_slice(&0u32.to_be_bytes());
    mvhd.extend_from_slice(&1000u32.to_be_bytes());
    mvhd.extend_from_slice(&(duration_ms as u32).to_be_bytes());
    mvhd.extend_from_slice(&0x0001_0000u32.to_be_bytes());
    mvhd.extend_from_slice(&0x0100u16.to_be_bytes());
    mvhd.extend_from_slice(&[0u8; 10]);
    for m in UNITY_MATRIX {
        mvhd.extend_from_slice(&m.to_be_bytes());
    }
    mvhd.extend_from_slice(&[0u8; 24]);
    mvhd.extend_from_slice(&2u32.to_be_bytes());

    let mut tkhd = vec![0, 0, 0, 3];
    tkhd.extend_from_slice(&0u32.to_be_bytes());
    tkhd.extend_from_slice(&0u32.to_be_bytes());
    tkhd.extend_from_slice(&1u32.to_be_bytes());
    tkhd.extend_from_slice(&0u32.to_be_bytes());
    tkhd.extend_from_slice(&(duration_ms as u32).to_be_bytes());
    tkhd.extend_from_slice(&[0u8; 8]);
    tkhd.extend_from_slice(&0u16.to_be_bytes());
    tkhd.extend_from_slice(&0u16.to_be_bytes());
    tkhd.extend_from_slice(&0u16.to_be_bytes());
    tkhd.extend_from_slice(&0u16.to_be_bytes());
    for m in UNITY_MATRIX {
        tkhd.extend_from_slice(&m.to_be_bytes());
    }
    tkhd.extend_from_slice(&(width << 16).to_be_bytes());
    tkhd.extend_from_slice(&(height << 16).to_be_bytes());

    let trak = mp4_box(b"trak", &mp4_box(b"tkhd", &tkhd));
    let mut moov_body = mp4_box(b"mvhd", &mvhd);
    moov_body.extend_from_slice(&trak);

    let mut poster = POSTER_UUID.to_vec();
    poster.extend_from_slice(poster_png);
    let mut tag_box = TAG_UUID.to_vec();
    tag_box.extend_from_slice(tag.as_bytes());

    let mut out = mp4_box(b"ftyp", &ftyp);
    out.extend_from_slice(&mp4_box(b"moov", &moov_body));
    out.extend_from_slice(&mp4_box(b"uuid", &tag_box));
    out.extend_from_slice(&mp4_box(b"uuid", &poster));
    out
}

/// PNG poster embedded in a placeholder MP4, if present.
pub fn mp4_poster(data: &[u8]) -> Option<Vec<u8>> {
    boxes(data)
        .filter_map(Result::ok)
        .find_map(|(kind, body)| (&kind == b"uuid" && body.len() > 16 && body[..16] == POSTER_UUID).then(|| body[16..].to_vec()))
}

/// Writes an RGB PNG filled with a soft gradient of `rgb`, with `tag`
/// stored as a `tEXt` chunk.
pub fn placeholder_png(width: u32, height: u32, rgb: [u8; 3], tag: &str) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.add_text_chunk("storyloom".to_string(), tag.to_string())
            .expect("text chunk");
        let mut writer = enc.write_header().expect("png header");
        let mut data = Vec::with_capacity((width * height * 3) as usize);
        for y in 0..height {
            for x in 0..width {
                let shade = ((x + y) * 64 / (width + height).max(1)) as u8;
                data.extend_from_slice(&[
                    rgb[0].saturating_add(shade),
                    rgb[1].saturating_add(shade / 2),
                    rgb[2].saturating_sub(shade / 2),
                ]);
            }
        }
        writer.write_image_data(&data).expect("png data");
    }
    out
}

/// Reads the `tEXt` tag written by [`placeholder_png`].
pub fn png_tag(data: &[u8]) -> Option<String> {
    let decoder = png::Decoder::new(Cursor::new(data));
    let reader = decoder.read_info().ok()?;
    reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == "storyloom")
        .map(|t| t.text.clone())
}

pub const WAV_RATE: u32 = 8_000;

/// Mono 16-bit WAV of exactly `duration_ms` at 8 kHz with a quiet tone.
pub fn placeholder_wav(duration_ms: u64, pitch_seed: u64) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: WAV_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let samples = duration_ms * WAV_RATE as u64 / 1000;
    let freq = 110.0 + (pitch_seed % 440) as f64;
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).expect("wav header");
        for i in 0..samples {
            let t = i as f64 / WAV_RATE as f64;
            let v = (t * freq * std::f64::consts::TAU).sin() * 1200.0;
            w.write_sample(v as i16).expect("wav sample");
        }
        w.finalize().expect("wav finalize");
    }
    cursor.into_inner()
}

/// Re-encodes an image so that its long edge is at most `max_edge` pixels.
pub fn downscale_png(data: &[u8], max_edge: u32) -> Result<Vec<u8>, MediaError> {
    let img = image::load_from_memory(data).map_err(|e| MediaError::Probe {
        path: "<memory>".into(),
        reason: e.to_string(),
    })?;
    let img = if img.width().max(img.height()) > max_edge {
        img.resize(max_edge, max_edge, image::imageops::FilterType::Triangle)
    } else {
        img
    };
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| MediaError::Probe {
            path: "<memory>".into(),
            reason: e.to_string(),
        })?;
    Ok(out.into_inner())
}

/// Extracts still frames from a video at the given fractions of its length
/// (0.0 = first frame, 1.0 = last). Placeholder videos yield their poster;
/// other files go through `frame_command` (`{video}`, `{time}`, `{out}`
/// placeholders) when one is configured.
pub fn sample_frames(path: &Path, fractions: &[f64], frame_command: Option<&str>) -> Result<Vec<Vec<u8>>, MediaError> {
    let bytes = std::fs::read(path)?;
    if let Some(poster) = mp4_poster(&bytes) {
        return Ok(fractions.iter().map(|_| poster.clone()).collect());
    }
    let Some(template) = frame_command else {
        return Err(MediaError::NoFrames(path.display().to_string()));
    };
    let info = probe_mp4(&bytes).map_err(|e| MediaError::probe(path, e))?;
    let dir = tempfile::tempdir()?;
    fractions
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let out = dir.path().join(format!("frame-{i}.png"));
            let at = (info.duration_s * f.clamp(0.0, 1.0) - 0.05).max(0.0);
            let cmd = template
                .replace("{video}", &shell_quote(&path.display().to_string()))
                .replace("{time}", &format!("{at:.3}"))
                .replace("{out}", &shell_quote(&out.display().to_string()));
            let status = Command::new("sh").arg("-c").arg(&cmd).output()?;
            if !status.status.success() {
                return Err(MediaError::probe(path, String::from_utf8_lossy(&status.stderr)));
            }
            Ok(std::fs::read(&out)?)
        })
        .collect()
}

pub(crate) fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mp4_roundtrip_probe() {
        let poster = placeholder_png(8, 4, [10, 20, 30], "p");
        let mp4 = placeholder_mp4(8_250, 1920, 1080, &poster, "tag");
        let info = probe_mp4(&mp4).unwrap();
        assert_eq!(
            info,
            Mp4Info {
                duration_s: 8.25,
                width: 1920,
                height: 1080
            }
        );
        assert_eq!(mp4_poster(&mp4).unwrap(), poster);
    }

    #[test]
    fn truncated_mp4_is_an_error() {
        let mp4 = placeholder_mp4(1000, 2, 2, &[], "");
        assert!(probe_mp4(&mp4[..20]).is_err());
        assert!(probe_mp4(b"not a video").is_err());
    }

    #[test]
    fn png_tag_and_probe() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = placeholder_png(32, 18, [200, 100, 50], "hash-abc");
        assert_eq!(png_tag(&bytes).as_deref(), Some("hash-abc"));
        let path = dir.path().join("x.png");
        std::fs::write(&path, &bytes).unwrap();
        let info = probe(&path).unwrap();
        assert_eq!((info.kind, info.width, info.height), (MediaKind::Image, Some(32), Some(18)));
    }

    #[test]
    fn wav_duration_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.wav");
        std::fs::write(&path, placeholder_wav(1_260, 3)).unwrap();
        let info = probe(&path).unwrap();
        assert_eq!(info.duration_s, Some(1.26));
    }

    #[test]
    fn downscale_caps_long_edge() {
        let big = placeholder_png(1024, 600, [1, 2, 3], "t");
        let small = downscale_png(&big, 512).unwrap();
        let img = image::load_from_memory(&small).unwrap();
        assert_eq!(img.width(), 512);
        assert!(img.height() <= 512);
    }

    #[test]
    fn unsupported_extension() {
        assert!(matches!(probe(Path::new("clip.mov")), Err(MediaError::Unsupported(_))));
        assert_eq!(kind_for_extension("JPG"), Some(MediaKind::Image));
    }
}
