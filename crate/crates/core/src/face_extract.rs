//! Face box expansion, cropping and per-video face sequences.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::video_ingest::FrameBatch;

/// Face box expansion used by both frame-level pipelines (a 20% margin).
pub const DEFAULT_CROP_FACTOR: f64 = 1.2;

/// File name of the per-video box fixture inside a frame directory.
pub const BBOX_FILE: &str = "bboxes.txt";

/// Axis-aligned box in pixel coordinates, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn is_within(&self, frame_w: f64, frame_h: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x + self.w <= frame_w && self.y + self.h <= frame_h
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(invalid!("degenerate box {:?}", self));
        }
        Ok(())
    }
}

/// Scales `b` about its center by `factor` and clamps the result to the frame.
pub fn expand_bbox(b: BBox, factor: f64, frame_w: usize, frame_h: usize) -> Result<BBox> {
    b.validate()?;
    if !(factor >= 1.0) || !factor.is_finite() {
        return Err(invalid!("expansion factor {factor} must be a finite value >= 1"));
    }
    if frame_w == 0 || frame_h == 0 {
        return Err(invalid!("empty frame {frame_w}x{frame_h}"));
    }
    let (cx, cy) = b.center();
    let (w, h) = (b.w * factor, b.h * factor);
    let x0 = (cx - w / 2.0).max(0.0);
    let y0 = (cy - h / 2.0).max(0.0);
    let x1 = (cx + w / 2.0).min(frame_w as f64);
    let y1 = (cy + h / 2.0).min(frame_h as f64);
    let out = BBox::new(x0, y0, x1 - x0, y1 - y0);
    out.validate().map_err(|_| invalid!("box {:?} lies outside the {frame_w}x{frame_h} frame", b))?;
    Ok(out)
}

/// Crops `b` from `frame` and bilinearly resizes it to `out_size × out_size`.
pub fn crop_resize(frame: &Image, b: BBox, out_size: usize) -> Result<Image> {
    b.validate()?;
    if out_size == 0 {
        return Err(invalid!("output size must be positive"));
    }
    Ok(frame.resample_region(b.y, b.x, b.h, b.w, out_size, out_size))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
}

/// A face detector. Implementations are shared read-only across threads.
pub trait DetectorBackend: Send + Sync {
    fn detect(&self, frame: &Image, frame_index: usize) -> Vec<Detection>;
}

/// Replays boxes recorded in a fixture file instead of running a detector.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct FixtureDetector {
    by_frame: BTreeMap<usize, Vec<Detection>>,
}

impl FixtureDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame_index: usize, det: Detection) {
        self.by_frame.entry(frame_index).or_default().push(det);
    }

    /// Parses `frame_index x y w h confidence` records, one per line.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut out = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::parse(path, lineno + 1, format!("expected 6 fields, found {}", fields.len())));
            }
            let frame_index: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, format!("bad frame index {:?}", fields[0])))?;
            let mut nums = [0.0f64; 5];
            for (slot, field) in nums.iter_mut().zip(&fields[1..]) {
                *slot = field
                    .parse()
                    .map_err(|_| Error::parse(path, lineno + 1, format!("bad number {field:?}")))?;
            }
            let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3]);
            bbox.validate()
                .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
            out.insert(
                frame_index,
                Detection {
                    bbox,
                    confidence: nums[4],
                },
            );
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (frame, dets) in &self.by_frame {
            for d in dets {
                let b = d.bbox;
                writeln!(s, "{frame} {} {} {} {} {}", b.x, b.y, b.w, b.h, d.confidence).unwrap();
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &[Detection])> {
        self.by_frame.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

impl DetectorBackend for FixtureDetector {
    fn detect(&self, _frame: &Image, frame_index: usize) -> Vec<Detection> {
        self.by_frame.get(&frame_index).cloned().unwrap_or_default()
    }
}

/// Treats the whole frame as the face; for inputs that are already face crops.
#[derive(Debug, Default, Clone, Copy)]
pub struct FullFrameDetector;

impl DetectorBackend for FullFrameDetector {
    fn detect(&self, frame: &Image, _frame_index: usize) -> Vec<Detection> {
        vec![Detection {
            bbox: BBox::new(0.0, 0.0, frame.width() as f64, frame.height() as f64),
            confidence: 1.0,
        }]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceCrop {
    pub image: Image,
    pub src_bbox: BBox,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceSequence {
    pub video_id: String,
    pub crops: Vec<FaceCrop>,
}

impl FaceSequence {
    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.crops.iter().map(|c| &c.image)
    }
}

/// Highest confidence wins; ties go to the larger box, then to the earlier one.
pub fn select_primary(dets: &[Detection]) -> Option<&Detection> {
    dets.iter().fold(None, |best: Option<&Detection>, d| match best {
        None => Some(d),
        Some(b) => {
            let better = d.confidence > b.confidence
                || (d.confidence == b.confidence && d.bbox.area() > b.bbox.area());
            Some(if better { d } else { b })
        }
    })
}

/// Runs the detector on every frame, keeps one face per frame, expands it by
/// `factor` and resizes the crop to `out_size`. Frames without a usable
/// detection are skipped.
pub fn extract_face_sequence(
    video_id: &str,
    frames: &FrameBatch,
    detector: &dyn DetectorBackend,
    factor: f64,
    out_size: usize,
) -> Result<FaceSequence> {
    if out_size == 0 {
        return Err(invalid!("output size must be positive"));
    }
    let mut crops = Vec::with_capacity(frames.len());
    for (frame_index, frame) in frames.iter() {
        let dets = detector.detect(frame, frame_index);
        let Some(det) = select_primary(&dets) else {
            continue;
        };
        let Ok(bbox) = expand_bbox(det.bbox, factor, frame.width(), frame.height()) else {
            continue;
        };
        crops.push(FaceCrop {
            image: crop_resize(frame, bbox, out_size)?,
            src_bbox: bbox,
            frame_index,
        });
    }
    Ok(FaceSequence {
        video_id: video_id.to_string(),
        crops,
    })
}
