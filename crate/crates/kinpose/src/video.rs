//! Video preprocessing: temporal-median background extraction, clip motion
//! scoring, and separation of clips into paired and unpaired tuple sets.
//!
//! A clip with a static background admits a clean background estimate (the
//! per-pixel temporal median), so its frame pairs go to the paired set
//! together with that background. Clips with global background motion go
//! to the unpaired set. The motion score is the 30th percentile of the
//! per-pixel temporal standard deviation, normalized to [0, 1]: a low
//! percentile ignores the minority of pixels covered by the moving subject
//! and responds only to background motion. The plain mean L2 distance to
//! the median frame is computed alongside for comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("clip has no frames")]
    EmptyClip,
    #[error("median window must be >= 3, got {0}")]
    WindowTooSmall(usize),
    #[error("motion score needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {index} is {got_w}x{got_h}, clip is {want_w}x{want_h}")]
    MixedDimensions {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("frame data length {got} does not match {width}x{height}x3")]
    BadFrameData {
        got: usize,
        width: usize,
        height: usize,
    },
    #[error("fps must be positive, got {0}")]
    BadFps(f64),
    #[error("center index {center} out of range ({frames} frames)")]
    CenterOutOfRange { center: usize, frames: usize },
}

/// One RGB frame, 8 bits per channel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, VideoError> {
        if data.len() != width * height * 3 {
            return Err(VideoError::BadFrameData {
                got: data.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// An ordered frame sequence with a frame rate.
#[derive(Debug, Clone)]
pub struct Clip {
    pub frames: Vec<Frame>,
    pub fps: f64,
    pub source_id: String,
}

impl Clip {
    pub fn new(
        frames: Vec<Frame>,
        fps: f64,
        source_id: impl Into<String>,
    ) -> Result<Self, VideoError> {
        if frames.is_empty() {
            return Err(VideoError::EmptyClip);
        }
        if fps.is_nan() || fps <= 0.0 {
            return Err(VideoError::BadFps(fps));
        }
        let (w, h) = (frames[0].width, frames[0].height);
        for (index, f) in frames.iter().enumerate() {
            if f.width != w || f.height != h {
                return Err(VideoError::MixedDimensions {
                    index,
                    got_w: f.width,
                    got_h: f.height,
                    want_w: w,
                    want_h: h,
                });
            }
        }
        Ok(Self {
            frames,
            fps,
            source_id: source_id.into(),
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }
}

/// Indices of a centered window of up to `window` frames, shifted (not
/// shrunk) at the clip boundaries while enough frames exist.
fn window_bounds(center: usize, window: usize, frames: usize) -> (usize, usize) {
    let window = window.min(frames);
    let half = window / 2;
    let start = center.saturating_sub(half).min(frames - window);
    (start, start + window)
}

/// Per-pixel, per-channel temporal median over a window centered on
/// `center`. Even window sizes take the lower median, deterministically.
pub fn median_background(clip: &Clip, center: usize, window: usize) -> Result<Frame, VideoError> {
    if clip.frames.is_empty() {
        return Err(VideoError::EmptyClip);
    }
    if window < 3 {
        return Err(VideoError::WindowTooSmall(window));
    }
    if center >= clip.frames.len() {
        return Err(VideoError::CenterOutOfRange {
            center,
            frames: clip.frames.len(),
        });
    }
    let (start, end) = window_bounds(center, window, clip.frames.len());
    let count = end - start;
    let bytes = clip.frames[0].data.len();
    let mut out = vec![0u8; bytes];
    let mut column = vec![0u8; count];
    for i in 0..bytes {
        for (k, f) in clip.frames[start..end].iter().enumerate() {
            column[k] = f.data[i];
        }
        column.sort_unstable();
        out[i] = column[(count - 1) / 2];
    }
    Frame::new(clip.width(), clip.height(), out)
}

/// Median over the whole clip (used by the motion statistics).
fn median_frame(clip: &Clip) -> Frame {
    let n = clip.frames.len();
    let bytes = clip.frames[0].data.len();
    let mut out = vec![0u8; bytes];
    let mut column = vec![0u8; n];
    for i in 0..bytes {
        for (k, f) in clip.frames.iter().enumerate() {
            column[k] = f.data[i];
        }
        column.sort_unstable();
        out[i] = column[(n - 1) / 2];
    }
    Frame {
        width: clip.width(),
        height: clip.height(),
        data: out,
    }
}

/// Both motion statistics for a clip, each normalized to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionStats {
    /// 30th percentile of per-pixel temporal standard deviation (channel
    /// variances averaged per pixel), divided by the maximum possible
    /// std-dev (255/2). Ignores motion confined to a small fraction of
    /// pixels.
    pub score: f64,
    /// Mean over frames and pixels of the L2 RGB distance to the clip
    /// median frame, divided by the maximum distance (255 * sqrt(3)).
    pub mean_l2_to_median: f64,
}

/// Percentile rank used for the background-motion score.
pub const SCORE_PERCENTILE: f64 = 0.30;

pub fn clip_motion_stats(clip: &Clip) -> Result<MotionStats, VideoError> {
    let n = clip.frames.len();
    if n < 2 {
        return Err(VideoError::TooFewFrames(n));
    }
    let pixels = clip.width() * clip.height();

    // Per-pixel temporal variance: channel variances averaged, computed
    // exactly in integer sums so the result is frame-order invariant.
    let mut stds = Vec::with_capacity(pixels);
    for p in 0..pixels {
        let mut var_sum = 0.0;
        for c in 0..3 {
            let mut sum = 0u64;
            let mut sum_sq = 0u64;
            for f in &clip.frames {
                let v = f.data[3 * p + c] as u64;
                sum += v;
                sum_sq += v * v;
            }
            // population variance, exact numerator: n*sum_sq - sum^2
            let num = (n as u64 * sum_sq) as f64 - (sum as f64) * (sum as f64);
            var_sum += num / (n * n) as f64;
        }
        stds.push((var_sum / 3.0).sqrt());
    }
    stds.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((pixels - 1) as f64 * SCORE_PERCENTILE).floor() as usize;
    let score = stds[rank] / 127.5;

    let median = median_frame(clip);
    let mut total = 0.0;
    for f in &clip.frames {
        for p in 0..pixels {
            let mut d2 = 0.0;
            for c in 0..3 {
                let d = f.data[3 * p + c] as f64 - median.data[3 * p + c] as f64;
                d2 += d * d;
            }
            total += d2.sqrt();
        }
    }
    let mean_l2 = total / (n * pixels) as f64 / (255.0 * 3.0f64.sqrt());

    Ok(MotionStats {
        score,
        mean_l2_to_median: mean_l2,
    })
}

/// The background-motion score alone (see [`MotionStats::score`]).
pub fn clip_motion_score(clip: &Clip) -> Result<f64, VideoError> {
    Ok(clip_motion_stats(clip)?.score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClipClass {
    Paired,
    Unpaired,
}

/// Paired iff the background-motion score is below the threshold.
pub fn classify_clip(score: f64, threshold: f64) -> ClipClass {
    if score < threshold {
        ClipClass::Paired
    } else {
        ClipClass::Unpaired
    }
}

/// Reference to one frame of one clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub clip: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedTuple {
    pub source: FrameRef,
    pub target: FrameRef,
    /// Median background centered on the target frame.
    pub background: FrameRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnpairedTuple {
    pub source: FrameRef,
    pub target: FrameRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedClip {
    pub clip: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub threshold: f64,
    pub gap_s: f64,
    pub window: usize,
    pub scores: BTreeMap<String, MotionStats>,
    pub classes: BTreeMap<String, ClipClass>,
    pub skipped: Vec<SkippedClip>,
    /// Clip id to source directory, filled by file-based callers so frame
    /// refs resolve to `sorted(*.ppm)[index]` in that directory.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub clip_dirs: BTreeMap<String, String>,
}

/// The separated dataset: paired tuples (with background refs) from
/// static-background clips, unpaired tuples from the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleManifest {
    pub paired: Vec<PairedTuple>,
    pub unpaired: Vec<UnpairedTuple>,
    pub meta: ManifestMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifestConfig {
    /// Score threshold separating paired from unpaired clips.
    pub threshold: f64,
    /// Minimum source/target time difference, seconds.
    pub gap_s: f64,
    /// Median window (frames) for background extraction.
    pub window: usize,
    /// Clips shorter than this are skipped.
    pub min_duration_s: f64,
}

impl Default for ManifestConfig {
    fn default() -> Self {
        Self {
            threshold: 0.02,
            gap_s: 1.0,
            window: 121,
            min_duration_s: 5.0,
        }
    }
}

/// Classifies each clip and emits frame tuples. Source/target pairs are
/// consecutive windows `(k*g, (k+1)*g)` with `g = ceil(gap_s * fps)`, so
/// every pair respects the time gap and no frame is used twice as a
/// source. Clips shorter than the minimum duration are recorded in
/// `meta.skipped` and produce no tuples.
pub fn build_manifest(
    clips: &[Clip],
    config: &ManifestConfig,
) -> Result<TupleManifest, VideoError> {
    let mut manifest = TupleManifest {
        paired: Vec::new(),
        unpaired: Vec::new(),
        meta: ManifestMeta {
            threshold: config.threshold,
            gap_s: config.gap_s,
            window: config.window,
            scores: BTreeMap::new(),
            classes: BTreeMap::new(),
            skipped: Vec::new(),
            clip_dirs: BTreeMap::new(),
        },
    };

    for clip in clips {
        if clip.duration_s() < config.min_duration_s {
            manifest.meta.skipped.push(SkippedClip {
                clip: clip.source_id.clone(),
                reason: format!(
                    "duration {:.2}s below minimum {:.2}s",
                    clip.duration_s(),
                    config.min_duration_s
                ),
            });
            continue;
        }
        let stats = clip_motion_stats(clip)?;
        let class = classify_clip(stats.score, config.threshold);
        manifest.meta.scores.insert(clip.source_id.clone(), stats);
        manifest.meta.classes.insert(clip.source_id.clone(), class);

        let gap = (config.gap_s * clip.fps).ceil().max(1.0) as usize;
        let mut s = 0;
        while s + gap < clip.frames.len() {
            let t = s + gap;
            let source = FrameRef {
                clip: clip.source_id.clone(),
                index: s,
            };
            let target = FrameRef {
                clip: clip.source_id.clone(),
                index: t,
            };
            match class {
                ClipClass::Paired => manifest.paired.push(PairedTuple {
                    source,
                    target: target.clone(),
                    background: FrameRef {
                        clip: clip.source_id.clone(),
                        index: t,
                    },
                }),
                ClipClass::Unpaired => manifest.unpaired.push(UnpairedTuple { source, target }),
            }
            s = t;
        }
    }
    Ok(manifest)
}
