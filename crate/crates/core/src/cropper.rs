//! Analytical pupil localization and fixed-size crop selection.
//!
//! The pipeline is: border mask -> inverse binarization -> morphological
//! opening -> largest 8-connected component -> roundness test -> window
//! centered on the component centroid. A frame-difference event map decides
//! whether a frame needs the pipeline at all or can reuse the buffered result.

use std::collections::VecDeque;
use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{BinaryMask, GrayFrame};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CropError {
    #[error("border margin {margin} too large for a {width}x{height} frame")]
    MarginTooLarge { margin: usize, width: usize, height: usize },
    #[error("crop window {w}x{h} does not fit in a {frame_w}x{frame_h} frame")]
    WindowTooLarge {
        w: usize,
        h: usize,
        frame_w: usize,
        frame_h: usize,
    },
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid event parameters: {0}")]
    BadEventParams(String),
}

/// Sets every pixel within `margin` of an edge to white.
pub fn border_mask(frame: &GrayFrame, margin: usize) -> Result<GrayFrame, CropError> {
    let (w, h) = (frame.width(), frame.height());
    if 2 * margin >= w.min(h) {
        return Err(CropError::MarginTooLarge {
            margin,
            width: w,
            height: h,
        });
    }
    let mut out = frame.clone();
    if margin == 0 {
        return Ok(out);
    }
    for y in 0..h {
        let edge_row = y < margin || y >= h - margin;
        for x in 0..w {
            if edge_row || x < margin || x >= w - margin {
                out.set(x, y, 255);
            }
        }
    }
    Ok(out)
}

/// 1 where intensity is strictly below `threshold`.
pub fn inverse_binarize(frame: &GrayFrame, threshold: u8) -> BinaryMask {
    let bits = frame.data().iter().map(|&v| (v < threshold) as u8).collect();
    BinaryMask::from_bits(frame.width(), frame.height(), bits)
}

/// Otsu split of a histogram: returns `(t, separability)` where the dark class
/// is `v < t` and separability is between-class over total variance.
fn otsu_split(hist: &[u64; 256], lo: usize, hi: usize) -> Option<(u8, f64)> {
    let total: u64 = hist[lo..hi].iter().sum();
    if total == 0 {
        return None;
    }
    let n = total as f64;
    let sum: f64 = (lo..hi).map(|v| v as f64 * hist[v] as f64).sum();
    let mean = sum / n;
    let var_total: f64 = (lo..hi).map(|v| hist[v] as f64 * (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var_total <= 0.0 {
        return None;
    }
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: Option<(u8, f64)> = None;
    for t in lo + 1..hi {
        w0 += hist[t - 1] as f64;
        sum0 += (t - 1) as f64 * hist[t - 1] as f64;
        let w1 = n - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2) / (n * n);
        if best.map_or(true, |(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, b)| (t, b / var_total))
}

/// Minimum Otsu separability for the dark class to be split again. A single
/// Gaussian mode scores about 0.64.
const DARK_SPLIT_SEPARABILITY: f64 = 0.8;

/// Automatic threshold isolating the darkest intensity mode of the frame
/// interior (pixels at least `margin` from the edges).
///
/// A first Otsu split separates dark from bright; while the dark class is
/// itself clearly bimodal (pupil under iris under skin) it is split again.
pub fn dark_mode_threshold(frame: &GrayFrame, margin: usize) -> u8 {
    let mut hist = [0u64; 256];
    let (w, h) = (frame.width(), frame.height());
    for y in margin..h.saturating_sub(margin) {
        for x in margin..w.saturating_sub(margin) {
            hist[frame.get(x, y) as usize] += 1;
        }
    }
    let Some((mut t, _)) = otsu_split(&hist, 0, 256) else {
        return 0;
    };
    while let Some((next, sep)) = otsu_split(&hist, 0, t as usize) {
        if sep < DARK_SPLIT_SEPARABILITY {
            break;
        }
        t = next;
    }
    t
}

fn erode_or_dilate(mask: &BinaryMask, radius: usize, erode: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let pick = |a: u8, b: u8| if erode { a.min(b) } else { a.max(b) };
    let src = mask.bits();
    // Separable pass over the in-bounds part of the square window.
    let mut tmp = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            let mut acc = src[y * w + lo];
            for xx in lo + 1..=hi {
                acc = pick(acc, src[y * w + xx]);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            let mut acc = tmp[lo * w + x];
            for yy in lo + 1..=hi {
                acc = pick(acc, tmp[yy * w + x]);
            }
            out[y * w + x] = acc;
        }
    }
    BinaryMask::from_bits(w, h, out)
}

pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    erode_or_dilate(mask, radius, true)
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    erode_or_dilate(mask, radius, false)
}

/// Opening with a `(2r+1)`-square structuring element. Pixels outside the
/// frame are ignored rather than treated as background.
pub fn morph_open(mask: &BinaryMask, kernel_radius: usize) -> BinaryMask {
    if kernel_radius == 0 {
        return mask.clone();
    }
    dilate(&erode(mask, kernel_radius), kernel_radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectedComponent {
    /// `(x, y)` in raster order.
    pub pixels: Vec<(u32, u32)>,
    pub area: usize,
    /// Length of the outer 8-connected boundary contour (see [`contour_length`]).
    pub perimeter: f64,
    pub centroid: (f64, f64),
}

const NEIGHBORS_CW: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

/// Moore-neighbour trace of the outer boundary starting at the component's
/// first raster pixel; axis steps count 1, diagonal steps `sqrt(2)`.
/// Returns 0 for an isolated pixel.
pub fn contour_length(mask: &BinaryMask, start: (usize, usize)) -> f64 {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let on = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && mask.get(x as usize, y as usize);
    let s = (start.0 as i64, start.1 as i64);
    // The raster-first pixel always has its west neighbour off.
    let mut cur = s;
    let mut back_dir = 0usize;
    let mut first_move: Option<usize> = None;
    let mut length = 0.0;
    // A contour visits each boundary pixel at most 4 times.
    let limit = 4 * (w * h) as usize + 8;
    for _ in 0..limit {
        let mut found = None;
        for i in 1..=8 {
            let k = (back_dir + i) % 8;
            let (dx, dy) = NEIGHBORS_CW[k];
            if on(cur.0 + dx, cur.1 + dy) {
                found = Some(k);
                break;
            }
        }
        let Some(k) = found else {
            return 0.0;
        };
        if cur == s {
            match first_move {
                Some(m) if m == k => break,
                None => first_move = Some(k),
                _ => {}
            }
        }
        let (dx, dy) = NEIGHBORS_CW[k];
        length += if dx != 0 && dy != 0 { SQRT_2 } else { 1.0 };
        // Backtrack = the off neighbour examined just before k, seen from the new pixel.
        let prev = (k + 7) % 8;
        let (bx, by) = NEIGHBORS_CW[prev];
        let b = (cur.0 + bx, cur.1 + by);
        cur = (cur.0 + dx, cur.1 + dy);
        let rel = (b.0 - cur.0, b.1 - cur.1);
        back_dir = NEIGHBORS_CW.iter().position(|&d| d == rel).unwrap_or(0);
    }
    length
}

fn build_component(mask: &BinaryMask, pixels: Vec<(u32, u32)>) -> ConnectedComponent {
    let area = pixels.len();
    let (sx, sy) = pixels
        .iter()
        .fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x as f64, ay + y as f64));
    let start = pixels.iter().min_by_key(|&&(x, y)| (y, x)).copied().unwrap();
    let perimeter = if area == 1 {
        4.0
    } else {
        contour_length(mask, (start.0 as usize, start.1 as usize))
    };
    ConnectedComponent {
        centroid: (sx / area as f64, sy / area as f64),
        pixels,
        area,
        perimeter,
    }
}

/// All 8-connected components in order of their first raster pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if seen[y0 * w + x0] || !mask.get(x0, y0) {
                continue;
            }
            seen[y0 * w + x0] = true;
            queue.push_back((x0, y0));
            let mut pixels = Vec::new();
            while let Some((x, y)) = queue.pop_front() {
                pixels.push((x as u32, y as u32));
                for &(dx, dy) in &NEIGHBORS_CW {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if !seen[ny * w + nx] && mask.get(nx, ny) {
                        seen[ny * w + nx] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            pixels.sort_by_key(|&(x, y)| (y, x));
            out.push(pixels);
        }
    }
    out
}

/// The maximal-area 8-connected component; ties go to the component found
/// first in raster order.
pub fn largest_cc(mask: &BinaryMask) -> Option<ConnectedComponent> {
    let mut best: Option<Vec<(u32, u32)>> = None;
    for comp in connected_components(mask) {
        if best.as_ref().map_or(true, |b| comp.len() > b.len()) {
            best = Some(comp);
        }
    }
    best.map(|p| build_component(mask, p))
}

/// `4*pi*area / perimeter^2`.
pub fn roundness(cc: &ConnectedComponent) -> f64 {
    let p = if cc.perimeter > 0.0 { cc.perimeter } else { 4.0 };
    4.0 * PI * cc.area as f64 / (p * p)
}

pub fn is_pupil(cc: &ConnectedComponent, min_roundness: f64, min_area: usize) -> bool {
    roundness(cc) >= min_roundness && cc.area >= min_area
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

pub const DEFAULT_WINDOW: (usize, usize) = (450, 200);

/// Window of size `window` centered at `center`, translated minimally to fit
/// inside a frame of size `frame_dims`.
pub fn crop_around(
    center: (f64, f64),
    window: (usize, usize),
    frame_dims: (usize, usize),
) -> Result<CropWindow, CropError> {
    let (w, h) = window;
    let (fw, fh) = frame_dims;
    if w > fw || h > fh || w == 0 || h == 0 {
        return Err(CropError::WindowTooLarge {
            w,
            h,
            frame_w: fw,
            frame_h: fh,
        });
    }
    let place = |c: f64, size: usize, limit: usize| -> usize {
        let start = (c - size as f64 / 2.0).round();
        start.clamp(0.0, (limit - size) as f64) as usize
    };
    Ok(CropWindow {
        x0: place(center.0, w, fw),
        y0: place(center.1, h, fh),
        width: w,
        height: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    /// Relative intensity change above which a pixel fires.
    pub beta1: f64,
    /// Number of firing pixels above which the frame is recomputed.
    pub beta2: usize,
}

impl Default for EventParams {
    fn default() -> Self {
        Self {
            beta1: 0.2,
            beta2: 500,
        }
    }
}

impl EventParams {
    pub fn validate(&self) -> Result<(), CropError> {
        if !(self.beta1 > 0.0 && self.beta1.is_finite()) {
            return Err(CropError::BadEventParams(format!("beta1 must be > 0, got {}", self.beta1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventDecision {
    Reuse,
    Recompute,
}

/// Per-pixel event map: `|curr - prev| / max(prev, 1) > beta1`.
pub fn event_map(curr: &GrayFrame, prev: &GrayFrame, beta1: f64) -> Result<BinaryMask, CropError> {
    if curr.width() != prev.width() || curr.height() != prev.height() {
        return Err(CropError::DimensionMismatch(
            curr.width(),
            curr.height(),
            prev.width(),
            prev.height(),
        ));
    }
    let bits = curr
        .data()
        .iter()
        .zip(prev.data())
        .map(|(&c, &p)| {
            let diff = (c as f64 - p as f64).abs();
            (diff / (p.max(1) as f64) > beta1) as u8
        })
        .collect();
    Ok(BinaryMask::from_bits(curr.width(), curr.height(), bits))
}

pub fn event_decision(curr: &GrayFrame, prev: &GrayFrame, params: &EventParams) -> Result<EventDecision, CropError> {
    let active = event_map(curr, prev, params.beta1)?.count_ones();
    Ok(if active > params.beta2 {
        EventDecision::Recompute
    } else {
        EventDecision::Reuse
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum ThresholdMode {
    /// [`dark_mode_threshold`] on the masked interior.
    DarkOtsu,
    Fixed(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropConfig {
    pub margin: usize,
    pub threshold: ThresholdMode,
    pub kernel_radius: usize,
    pub min_roundness: f64,
    pub min_area: usize,
    pub window_width: usize,
    pub window_height: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            margin: 16,
            threshold: ThresholdMode::DarkOtsu,
            kernel_radius: 2,
            min_roundness: 0.6,
            min_area: 100,
            window_width: DEFAULT_WINDOW.0,
            window_height: DEFAULT_WINDOW.1,
        }
    }
}

/// Intermediate results of one pupil search.
#[derive(Debug, Clone)]
pub struct PupilDetection {
    pub threshold: u8,
    pub opened: BinaryMask,
    pub component: Option<ConnectedComponent>,
    pub is_pupil: bool,
}

pub fn detect_pupil(frame: &GrayFrame, config: &CropConfig) -> Result<PupilDetection, CropError> {
    let masked = border_mask(frame, config.margin)?;
    let threshold = match config.threshold {
        ThresholdMode::DarkOtsu => dark_mode_threshold(frame, config.margin),
        ThresholdMode::Fixed(t) => t,
    };
    let opened = morph_open(&inverse_binarize(&masked, threshold), config.kernel_radius);
    let component = largest_cc(&opened);
    let is_pupil = component
        .as_ref()
        .is_some_and(|cc| is_pupil(cc, config.min_roundness, config.min_area));
    Ok(PupilDetection {
        threshold,
        opened,
        component,
        is_pupil,
    })
}

/// Full cropping pipeline; `None` when no component passes the pupil test.
pub fn locate_and_crop(frame: &GrayFrame, config: &CropConfig) -> Result<Option<CropWindow>, CropError> {
    let det = detect_pupil(frame, config)?;
    match det.component {
        Some(cc) if det.is_pupil => crop_around(
            cc.centroid,
            (config.window_width, config.window_height),
            (frame.width(), frame.height()),
        )
        .map(Some),
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionStep {
    pub decision: EventDecision,
    pub window: Option<CropWindow>,
}

/// Streaming cropper holding the reference frame and the buffered window.
///
/// The reference frame only advances when a frame is recomputed and a pupil
/// is found; on reuse it stays put so slow drift keeps accumulating against
/// the same reference.
#[derive(Debug, Clone)]
pub struct CropSession {
    params: EventParams,
    config: CropConfig,
    reference: Option<GrayFrame>,
    buffered: Option<CropWindow>,
}

impl CropSession {
    pub fn new(params: EventParams, config: CropConfig) -> Result<Self, CropError> {
        params.validate()?;
        Ok(Self {
            params,
            config,
            reference: None,
            buffered: None,
        })
    }

    pub fn buffered(&self) -> Option<CropWindow> {
        self.buffered
    }

    pub fn process(&mut self, frame: &GrayFrame) -> Result<SessionStep, CropError> {
        let decision = match &self.reference {
            Some(prev) => event_decision(frame, prev, &self.params)?,
            None => EventDecision::Recompute,
        };
        if decision == EventDecision::Recompute {
            if let Some(window) = locate_and_crop(frame, &self.config)? {
                self.buffered = Some(window);
                self.reference = Some(frame.clone());
            }
        }
        Ok(SessionStep {
            decision,
            window: self.buffered,
        })
    }
}
