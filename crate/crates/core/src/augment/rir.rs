use std::f64::consts::PI;

use super::AugmentError;
use crate::audio::{AudioClip, SAMPLE_RATE};

/// Upper bound on the per-axis reflection order.
pub const MAX_ORDER: u32 = 10;

/// Tail energy (relative to total) below which taps are dropped.
const TAIL_ENERGY: f64 = 1e-4;

/// Shoebox room with a single omnidirectional source and microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    /// `(Lx, Ly, Lz)` in meters.
    pub dimensions: [f64; 3],
    pub source: [f64; 3],
    pub mic: [f64; 3],
    /// Wall pressure reflection coefficient, shared by all six walls.
    pub reflection_coeff: f64,
    /// Largest reflection count along any single axis.
    pub max_order: u32,
    pub speed_of_sound: f64,
    pub sample_rate: u32,
}

impl RoomSpec {
    pub fn new(dimensions: [f64; 3], source: [f64; 3], mic: [f64; 3], reflection_coeff: f64, max_order: u32) -> Self {
        RoomSpec {
            dimensions,
            source,
            mic,
            reflection_coeff,
            max_order,
            speed_of_sound: 343.0,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let err = |m: String| Err(AugmentError::Room(m));
        for axis in 0..3 {
            let l = self.dimensions[axis];
            if !(l > 0.0 && l.is_finite()) {
                return err(format!("dimension {axis} must be positive, got {l}"));
            }
            for (name, p) in [("source", self.source), ("mic", self.mic)] {
                if !(p[axis] > 0.0 && p[axis] < l) {
                    return err(format!("{name} position {:?} is outside the room", p));
                }
            }
        }
        if self.source == self.mic {
            return err("source and mic coincide".into());
        }
        if !(0.0..1.0).contains(&self.reflection_coeff) {
            return err(format!("reflection_coeff {} not in [0, 1)", self.reflection_coeff));
        }
        if self.max_order > MAX_ORDER {
            return err(format!("max_order {} exceeds {MAX_ORDER}", self.max_order));
        }
        if !(self.speed_of_sound > 0.0) || self.sample_rate == 0 {
            return err("speed_of_sound and sample_rate must be positive".into());
        }
        Ok(())
    }

    pub fn direct_distance(&self) -> f64 {
        distance(self.source, self.mic)
    }
}

/// Ranges for drawing random shoebox rooms.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSampler {
    pub dims_min: [f64; 3],
    pub dims_max: [f64; 3],
    pub reflection_min: f64,
    pub reflection_max: f64,
    pub max_order: u32,
    /// Minimum distance of source and mic from every wall.
    pub margin: f64,
}

impl Default for RoomSampler {
    fn default() -> Self {
        RoomSampler {
            dims_min: [3.0, 3.0, 2.4],
            dims_max: [8.0, 7.0, 3.5],
            reflection_min: 0.6,
            reflection_max: 0.9,
            max_order: 8,
            margin: 0.5,
        }
    }
}

impl RoomSampler {
    pub fn validate(&self) -> Result<(), AugmentError> {
        for k in 0..3 {
            if !(self.dims_min[k] > 2.0 * self.margin && self.dims_min[k] <= self.dims_max[k]) {
                return Err(AugmentError::Room(format!(
                    "axis {k}: need 2 * margin < dims_min <= dims_max"
                )));
            }
        }
        if !(0.0 <= self.reflection_min && self.reflection_min <= self.reflection_max && self.reflection_max < 1.0) {
            return Err(AugmentError::Room("need 0 <= reflection_min <= reflection_max < 1".into()));
        }
        if self.max_order > MAX_ORDER {
            return Err(AugmentError::Room(format!("max_order {} exceeds {MAX_ORDER}", self.max_order)));
        }
        Ok(())
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> RoomSpec {
        let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let dims = [0, 1, 2].map(|k| uniform(self.dims_min[k], self.dims_max[k]));
        let source = [0, 1, 2].map(|k| uniform(self.margin, dims[k] - self.margin));
        let mic = [0, 1, 2].map(|k| uniform(self.margin, dims[k] - self.margin));
        let beta = uniform(self.reflection_min, self.reflection_max);
        RoomSpec::new(dims, source, mic, beta, self.max_order)
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// A mirrored copy of the source and the number of wall bounces it stands for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: [f64; 3],
    pub reflections: u32,
}

/// Per-axis image coordinates as `(coordinate, bounces)`.
///
/// Along an axis of length `L`, image `(n, q)` sits at `(1 - 2q) * s + 2nL`
/// and has `|n - q| + |n|` bounces.
fn axis_images(s: f64, l: f64, max_order: u32) -> Vec<(f64, u32)> {
    let k = max_order as i64;
    let mut out = Vec::new();
    for n in -k..=k {
        for q in 0..=1i64 {
            let bounces = ((n - q).abs() + n.abs()) as u32;
            if bounces <= max_order {
                out.push(((1 - 2 * q) as f64 * s + 2.0 * n as f64 * l, bounces));
            }
        }
    }
    out
}

/// All image sources with at most `max_order` bounces along each axis.
pub fn image_sources(room: &RoomSpec) -> Vec<ImageSource> {
    let per_axis: Vec<Vec<(f64, u32)>> = (0..3)
        .map(|a| axis_images(room.source[a], room.dimensions[a], room.max_order))
        .collect();
    let mut out = Vec::with_capacity(per_axis.iter().map(Vec::len).product());
    for &(x, rx) in &per_axis[0] {
        for &(y, ry) in &per_axis[1] {
            for &(z, rz) in &per_axis[2] {
                out.push(ImageSource {
                    position: [x, y, z],
                    reflections: rx + ry + rz,
                });
            }
        }
    }
    out
}

/// Drops trailing taps once the remaining energy is below the tail threshold.
pub fn truncate_tail(taps: &mut Vec<f64>) {
    let total: f64 = taps.iter().map(|t| t * t).sum();
    let limit = TAIL_ENERGY * total;
    let mut tail = 0.0;
    let mut keep = taps.len();
    for i in (0..taps.len()).rev() {
        let e = taps[i] * taps[i];
        if tail + e < limit {
            tail += e;
            keep = i;
        } else {
            break;
        }
    }
    taps.truncate(keep);
}

/// Finite impulse response at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct RirFilter {
    pub id: String,
    pub taps: Vec<f64>,
}

impl RirFilter {
    pub fn new(id: impl Into<String>, taps: Vec<f64>) -> Result<Self, AugmentError> {
        let rir = RirFilter { id: id.into(), taps };
        rir.validate()?;
        Ok(rir)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.taps.is_empty() {
            return Err(AugmentError::Rir(format!("{}: no taps", self.id)));
        }
        if !self.taps.iter().all(|t| t.is_finite()) {
            return Err(AugmentError::Rir(format!("{}: non-finite tap", self.id)));
        }
        if self.taps.iter().all(|&t| t == 0.0) {
            return Err(AugmentError::Rir(format!("{}: all taps are zero", self.id)));
        }
        Ok(())
    }

    pub fn unit_impulse(id: impl Into<String>) -> Self {
        RirFilter {
            id: id.into(),
            taps: vec![1.0],
        }
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    pub fn to_clip(&self) -> AudioClip {
        AudioClip::new(self.id.clone(), self.taps.clone())
    }

    pub fn from_clip(clip: AudioClip) -> Result<Self, AugmentError> {
        RirFilter::new(clip.id, clip.samples)
    }
}

/// Image-source impulse response: every image adds
/// `beta^bounces / (4 pi d)` at the sample nearest `d / c`.
pub fn synthesize_rir(room: &RoomSpec, id: impl Into<String>) -> Result<RirFilter, AugmentError> {
    room.validate()?;
    let fs = room.sample_rate as f64;
    let contributions: Vec<(usize, f64)> = image_sources(room)
        .into_iter()
        .map(|img| {
            let d = distance(img.position, room.mic);
            let delay = (d / room.speed_of_sound * fs).round() as usize;
            let amp = room.reflection_coeff.powi(img.reflections as i32) / (4.0 * PI * d);
            (delay, amp)
        })
        .filter(|&(_, a)| a != 0.0)
        .collect();
    let len = contributions.iter().map(|c| c.0).max().unwrap_or(0) + 1;
    let mut taps = vec![0.0; len];
    for (delay, amp) in contributions {
        taps[delay] += amp;
    }
    truncate_tail(&mut taps);
    RirFilter::new(id, taps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room(beta: f64, order: u32) -> RoomSpec {
        RoomSpec::new([5.0, 4.0, 3.0], [1.0, 1.5, 1.2], [3.5, 2.0, 1.6], beta, order)
    }

    #[test]
    fn anechoic_is_one_tap_at_direct_delay() {
        let r = room(0.0, 3);
        let d = r.direct_distance();
        let rir = synthesize_rir(&r, "a").unwrap();
        let delay = (d / 343.0 * 16000.0).round() as usize;
        let nonzero: Vec<(usize, f64)> = rir
            .taps
            .iter()
            .copied()
            .enumerate()
            .filter(|t| t.1 != 0.0)
            .collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, delay);
        assert!((nonzero[0].1 - 1.0 / (4.0 * PI * d)).abs() < 1e-15);
        assert_eq!(rir.taps.len(), delay + 1);
    }

    #[test]
    fn order_zero_equals_anechoic() {
        let a = synthesize_rir(&room(0.6, 0), "x").unwrap();
        let b = synthesize_rir(&room(0.0, 0), "x").unwrap();
        let c = synthesize_rir(&room(0.0, 4), "x").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn image_count_per_axis() {
        for k in 0..4u32 {
            assert_eq!(axis_images(1.0, 5.0, k).len(), 2 * k as usize + 1);
        }
        assert_eq!(image_sources(&room(0.5, 2)).len(), 125);
    }

    #[test]
    fn rejects_bad_rooms() {
        let mut r = room(0.5, 2);
        r.mic = [6.0, 1.0, 1.0];
        assert!(synthesize_rir(&r, "x").is_err());
        let mut r = room(0.5, 11);
        assert!(synthesize_rir(&r, "x").is_err());
        r.max_order = 2;
        r.source = r.mic;
        assert!(synthesize_rir(&r, "x").is_err());
        assert!(synthesize_rir(&room(1.0, 2), "x").is_err());
    }

    #[test]
    fn tail_truncation() {
        let mut taps = vec![1.0, 0.5, 0.001, 0.0, 0.0];
        truncate_tail(&mut taps);
        assert_eq!(taps, vec![1.0, 0.5]);
        let mut one = vec![0.0, 0.0, 2.0];
        truncate_tail(&mut one);
        assert_eq!(one, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn rir_validation() {
        assert!(RirFilter::new("e", vec![]).is_err());
        assert!(RirFilter::new("z", vec![0.0, 0.0]).is_err());
        assert!(RirFilter::new("n", vec![f64::NAN]).is_err());
        assert!(RirFilter::new("ok", vec![0.0, 0.3]).is_ok());
    }
}
