//! Qualitative snapshots: render explicit signal maps (student or teacher)
//! to portable graymap/pixmap files for visual progress tracking.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use super::{rearrange_hidden, student_explicit, PerceptionDecoder, D4DP_PREFIX};
use crate::nnkit::Tape;
use crate::scenegen::{Modality, VideoTensor};
use crate::student::StudentModel;
use crate::teacher4d::TeacherModel;
use crate::{P4dError, Result};

/// A rendered image: grayscale (1 byte/px) or RGB (3 bytes/px).
pub struct ImageData {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bytes: Vec<u8>,
}

impl ImageData {
    pub fn extension(&self) -> &'static str {
        if self.channels == 1 {
            "pgm"
        } else {
            "ppm"
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.bytes);
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [((r + m) * 255.0) as u8, ((g + m) * 255.0) as u8, ((b + m) * 255.0) as u8]
}

/// Render one `(H, W, ch(m))` frame of a signal map.
///
/// Depth: min-to-max grayscale. Flow: color wheel (angle as hue, magnitude as
/// value). Motion: binary at 0.5. Camera rays: direction mapped to RGB.
pub fn render_frame(frame: &Array3<f64>, m: Modality) -> Result<ImageData> {
    let (h, w, ch) = frame.dim();
    if ch != m.channels() {
        return Err(P4dError::ShapeMismatch(format!(
            "{} frame has {ch} channels, expected {}",
            m.name(),
            m.channels()
        )));
    }
    match m {
        Modality::Depth => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in frame.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let span = if hi > lo { hi - lo } else { 1.0 };
            let bytes = frame
                .iter()
                .map(|&v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect();
            Ok(ImageData { width: w, height: h, channels: 1, bytes })
        }
        Modality::Motion => {
            let bytes = frame.iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
            Ok(ImageData { width: w, height: h, channels: 1, bytes })
        }
        Modality::Flow => {
            let max_mag = frame
                .outer_iter()
                .flat_map(|row| {
                    row.outer_iter()
                        .map(|px| (px[0] * px[0] + px[1] * px[1]).sqrt())
                        .collect::<Vec<_>>()
                })
                .fold(0.0f64, f64::max)
                .max(1e-12);
            let mut bytes = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = (frame[[y, x, 0]], frame[[y, x, 1]]);
                    let mag = (u * u + v * v).sqrt() / max_mag;
                    let hue = v.atan2(u).to_degrees();
                    bytes.extend_from_slice(&hsv_to_rgb(hue, 1.0, mag));
                }
            }
            Ok(ImageData { width: w, height: h, channels: 3, bytes })
        }
        Modality::Camray => {
            let mut bytes = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let v = (frame[[y, x, c]] + 1.0) / 2.0;
                        bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            Ok(ImageData { width: w, height: h, channels: 3, bytes })
        }
    }
}

fn frame_from_rows(rows: &Array2<f64>, frame: usize, h: usize, w: usize, ch: usize) -> Array3<f64> {
    let mut out = Array3::<f64>::zeros((h, w, ch));
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out[[y, x, c]] = rows[[frame * h * w + y * w + x, c]];
            }
        }
    }
    out
}

/// Render the student's explicit prediction for frame 0 of `video` through
/// the frozen teacher head, writing `{step_tag}-{modality}.pgm|ppm`.
pub fn snapshot_explicit(
    student: &StudentModel,
    teacher: &TeacherModel,
    d4dp_hidden: usize,
    video: &VideoTensor,
    m: Modality,
    step_tag: &str,
    out_dir: &Path,
) -> Result<PathBuf> {
    if student.params.get(&format!("{D4DP_PREFIX}.w1")).is_none() {
        return Err(P4dError::MissingPrerequisite(
            "snapshot needs the trained perception decoder parameters".into(),
        ));
    }
    let dec = PerceptionDecoder::new(
        student.config.llm_width,
        d4dp_hidden,
        teacher.config.latent_dim,
    );
    let mut tape = Tape::new();
    let seq = student.build_sequence("how many objects are moving in the video", None)?;
    let (_, _, hidden) = student.llm_forward(&mut tape, None, video, &seq, None)?;
    let (lh, lw) = teacher.config.latent_grid();
    let nt = teacher.config.latent_frames();
    let rearranged = rearrange_hidden(&mut tape, &hidden, student.config.token_grid(), (nt, lh, lw))?;
    let latent = dec.forward(&mut tape, &mut None, &student.params, rearranged)?;
    let pred = student_explicit(&mut tape, teacher, latent, m)?;
    let rows = tape.value(pred);
    let s = rows.shape().to_vec();
    let rows = rows.clone().into_shape_with_order((s[0], s[1])).unwrap();
    let (h, w) = teacher.config.image_size;
    let frame = frame_from_rows(&rows, 0, h, w, m.channels());
    let image = render_frame(&frame, m)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{step_tag}-{}.{}", m.name(), image.extension()));
    image.write(&path)?;
    Ok(path)
}

/// Render the teacher's own prediction for frame 0 through the identical
/// renderer, for side-by-side comparison.
pub fn snapshot_teacher(
    teacher: &TeacherModel,
    video: &VideoTensor,
    m: Modality,
    step_tag: &str,
    out_dir: &Path,
) -> Result<PathBuf> {
    let latent = teacher.teacher_encode(video, "snapshot")?;
    let decoded = teacher.teacher_decode(&latent, m)?;
    let frame = decoded.index_axis(ndarray::Axis(0), 0).to_owned();
    let image = render_frame(&frame, m)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{step_tag}-teacher-{}.{}", m.name(), image.extension()));
    image.write(&path)?;
    Ok(path)
}
