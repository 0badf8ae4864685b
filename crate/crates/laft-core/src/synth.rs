//! Mask-based anomalous-sample synthesis and pseudo-validation construction.
//!
//! Masks of configurable shape, size, and rotation are rasterized onto the
//! tensor grid; synthesis pastes donor content into the masked region of a
//! target, and the pseudo validation set shuffles masked areas among the
//! samples of each batch while a fraction stays normal.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::Label;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Rectangle,
    Ellipse,
    Polygon,
}

impl MaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rectangle" => Ok(Self::Rectangle),
            "ellipse" => Ok(Self::Ellipse),
            "polygon" => Ok(Self::Polygon),
            other => Err(Error::config(format!(
                "synth.mask_kind must be rectangle, ellipse or polygon, got {other}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Rectangle => "rectangle",
            Self::Ellipse => "ellipse",
            Self::Polygon => "polygon",
        }
    }
}

/// Shape family and ranges for mask generation.
#[derive(Debug, Clone)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Mask area as a fraction of the tensor area.
    pub area_min: f64,
    pub area_max: f64,
    /// Rotation range in degrees.
    pub rotation_min: f64,
    pub rotation_max: f64,
    /// Number of masks per sample.
    pub count_min: usize,
    pub count_max: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            kind: MaskKind::Rectangle,
            area_min: 0.05,
            area_max: 0.2,
            rotation_min: 0.0,
            rotation_max: 0.0,
            count_min: 1,
            count_max: 3,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_min > 0.0 && self.area_min <= self.area_max && self.area_max < 1.0) {
            return Err(Error::config(format!(
                "synth area range [{}, {}] must satisfy 0 < min <= max < 1",
                self.area_min, self.area_max
            )));
        }
        if self.rotation_min > self.rotation_max {
            return Err(Error::config("synth rotation range is empty".to_string()));
        }
        if self.count_min == 0 || self.count_min > self.count_max {
            return Err(Error::config(format!(
                "synth count range [{}, {}] must satisfy 1 <= min <= max",
                self.count_min, self.count_max
            )));
        }
        Ok(())
    }
}

fn sample_range(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Axis-aligned integer rectangle hitting the target pixel count up to the
/// rounding of one row.
fn rect_mask_axis_aligned(h: usize, w: usize, target: usize, rng: &mut impl Rng) -> Tensor {
    let target = target.max(1);
    let a_min = target.div_ceil(w).max(1);
    let a_max = target.min(h).max(a_min);
    let a = rng.random_range(a_min..=a_max);
    let b = ((target as f64 / a as f64).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - a);
    let left = rng.random_range(0..=w - b);
    let mut m = Tensor::zeros(&[h, w]);
    for i in top..top + a {
        for j in left..left + b {
            m.data_mut()[i * w + j] = 1.0;
        }
    }
    m
}

/// Rasterizes a rotated shape given its inside-test in centered local
/// coordinates and the half extents of its rotated bounding box.
fn rasterize_rotated(
    h: usize,
    w: usize,
    half_x: f64,
    half_y: f64,
    theta: f64,
    rng: &mut impl Rng,
    inside: impl Fn(f64, f64) -> bool,
) -> Tensor {
    // Clamp the box to the grid; shapes larger than the tensor shrink later
    // through the caller's area scaling, this only protects placement.
    let hx = half_x.min(w as f64 / 2.0);
    let hy = half_y.min(h as f64 / 2.0);
    let cx = sample_range(rng, hx, w as f64 - hx);
    let cy = sample_range(rng, hy, h as f64 - hy);
    let (sin_t, cos_t) = theta.sin_cos();
    let mut m = Tensor::zeros(&[h, w]);
    let y0 = ((cy - hy).floor().max(0.0)) as usize;
    let y1 = ((cy + hy).ceil().min(h as f64)) as usize;
    let x0 = ((cx - hx).floor().max(0.0)) as usize;
    let x1 = ((cx + hx).ceil().min(w as f64)) as usize;
    for i in y0..y1 {
        for j in x0..x1 {
            let py = i as f64 + 0.5 - cy;
            let px = j as f64 + 0.5 - cx;
            // Rotate the pixel back into shape coordinates.
            let u = cos_t * px + sin_t * py;
            let v = -sin_t * px + cos_t * py;
            if inside(u, v) {
                m.data_mut()[i * w + j] = 1.0;
            }
        }
    }
    m
}

fn one_mask(h: usize, w: usize, spec: &MaskSpec, rng: &mut impl Rng) -> Tensor {
    let frac = sample_range(rng, spec.area_min, spec.area_max);
    let target = (frac * (h * w) as f64).floor().max(1.0);
    let theta = sample_range(rng, spec.rotation_min, spec.rotation_max).to_radians();
    match spec.kind {
        MaskKind::Rectangle => {
            if theta == 0.0 {
                return rect_mask_axis_aligned(h, w, target as usize, rng);
            }
            let aspect = sample_range(rng, 0.5, 2.0);
            let a = (target * aspect).sqrt();
            let b = target / a;
            let hx = (a * theta.cos().abs() + b * theta.sin().abs()) / 2.0;
            let hy = (a * theta.sin().abs() + b * theta.cos().abs()) / 2.0;
            rasterize_rotated(h, w, hx, hy, theta, rng, |u, v| {
                u.abs() <= a / 2.0 && v.abs() <= b / 2.0
            })
        }
        MaskKind::Ellipse => {
            let aspect = sample_range(rng, 0.5, 2.0);
            let r1 = (target * aspect / std::f64::consts::PI).sqrt();
            let r2 = target / (std::f64::consts::PI * r1);
            let hx = (r1 * r1 * theta.cos().powi(2) + r2 * r2 * theta.sin().powi(2)).sqrt();
            let hy = (r1 * r1 * theta.sin().powi(2) + r2 * r2 * theta.cos().powi(2)).sqrt();
            rasterize_rotated(h, w, hx, hy, theta, rng, |u, v| {
                (u / r1).powi(2) + (v / r2).powi(2) <= 1.0
            })
        }
        MaskKind::Polygon => {
            // Convex polygon with 3-6 vertices on an ellipse, rescaled so the
            // shoelace area hits the target exactly (up to rasterization).
            // Jittered regular angle spacing keeps the polygon fat; clustered
            // angles would make a sliver that blows past the grid when scaled
            // to the target area.
            let n = rng.random_range(3..=6usize);
            let step = std::f64::consts::TAU / n as f64;
            let angles: Vec<f64> = (0..n)
                .map(|i| (i as f64 + sample_range(rng, 0.15, 0.85)) * step)
                .collect();
            let aspect = sample_range(rng, 0.5, 2.0);
            let mut verts: Vec<(f64, f64)> = angles
                .iter()
                .map(|&p| (p.cos() * aspect, p.sin() / aspect))
                .collect();
            let mut shoelace = 0.0f64;
            for i in 0..n {
                let (x0, y0) = verts[i];
                let (x1, y1) = verts[(i + 1) % n];
                shoelace += x0 * y1 - x1 * y0;
            }
            let shoelace = shoelace.abs() / 2.0;
            if shoelace < 1e-9 {
                // Degenerate draw; fall back to an axis-aligned rectangle.
                return rect_mask_axis_aligned(h, w, target as usize, rng);
            }
            let scale = (target / shoelace).sqrt();
            for v in verts.iter_mut() {
                v.0 *= scale;
                v.1 *= scale;
            }
            let hx = verts.iter().map(|v| v.0.abs()).fold(0.0, f64::max);
            let hy = verts.iter().map(|v| v.1.abs()).fold(0.0, f64::max);
            let rot = (
                (hx * theta.cos().abs() + hy * theta.sin().abs()),
                (hx * theta.sin().abs() + hy * theta.cos().abs()),
            );
            rasterize_rotated(h, w, rot.0, rot.1, theta, rng, move |u, v| {
                // Inside test for a convex polygon: consistent cross-product
                // signs over all edges.
                let mut sign = 0.0f64;
                for i in 0..verts.len() {
                    let (x0, y0) = verts[i];
                    let (x1, y1) = verts[(i + 1) % verts.len()];
                    let cross = (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0);
                    if cross.abs() < 1e-12 {
                        continue;
                    }
                    if sign == 0.0 {
                        sign = cross.signum();
                    } else if cross.signum() != sign {
                        return false;
                    }
                }
                true
            })
        }
    }
}

/// Generates `count` binary masks per the spec (deterministic given the rng
/// state).
pub fn make_masks(h: usize, w: usize, spec: &MaskSpec, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
    spec.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("mask grid must be non-empty"));
    }
    let count = rng.random_range(spec.count_min..=spec.count_max);
    Ok((0..count).map(|_| one_mask(h, w, spec, rng)).collect())
}

/// A synthesized sample: donor content pasted into the target under the mask
/// union.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub tensor: Tensor,
    pub gt_mask: Tensor,
    pub source_id: String,
    pub target_id: String,
}

/// Pastes `donor` into `target` wherever any mask is set; the ground truth is
/// exactly the mask union. No blending: every output value comes from one of
/// the two inputs.
pub fn synthesize(
    target: &Tensor,
    donor: &Tensor,
    masks: &[Tensor],
    target_id: &str,
    source_id: &str,
) -> Result<SynthSample> {
    if target.shape() != donor.shape() {
        return Err(Error::shape(format!(
            "target {:?} vs donor {:?}",
            target.shape(),
            donor.shape()
        )));
    }
    let &[h, w, c] = target.shape() else {
        return Err(Error::shape(format!(
            "synthesize expects [h,w,c], got {:?}",
            target.shape()
        )));
    };
    let mut union = Tensor::zeros(&[h, w]);
    for m in masks {
        if m.shape() != [h, w] {
            return Err(Error::shape(format!(
                "mask {:?} does not cover [{h},{w}]",
                m.shape()
            )));
        }
        for (u, &v) in union.data_mut().iter_mut().zip(m.data()) {
            if v > 0.5 {
                *u = 1.0;
            }
        }
    }
    let mut out = target.clone();
    for pos in 0..h * w {
        if union.data()[pos] > 0.5 {
            let base = pos * c;
            out.data_mut()[base..base + c].copy_from_slice(&donor.data()[base..base + c]);
        }
    }
    Ok(SynthSample {
        tensor: out,
        gt_mask: union,
        source_id: source_id.to_string(),
        target_id: target_id.to_string(),
    })
}

/// A pseudo-validation sample with its label and ground truth.
#[derive(Debug, Clone)]
pub struct PseudoSample {
    pub id: String,
    pub label: Label,
    pub tensor: Tensor,
    pub gt_mask: Option<Tensor>,
}

/// Builds the pseudo validation set: samples are shuffled, grouped into
/// batches, and within each batch masked areas move from a random donor into
/// roughly `1 - normal_fraction` of the members; the rest stay normal.
pub fn build_pseudo_validation(
    samples: &[(String, Tensor)],
    spec: &MaskSpec,
    batch: usize,
    normal_fraction: f64,
    seed: u64,
) -> Result<Vec<PseudoSample>> {
    spec.validate()?;
    if batch < 2 {
        return Err(Error::invalid("pseudo-validation batch must be at least 2"));
    }
    if !(0.0..1.0).contains(&normal_fraction) {
        return Err(Error::invalid(format!(
            "normal fraction {normal_fraction} outside [0, 1)"
        )));
    }
    if samples.is_empty() {
        return Err(Error::data("pseudo validation needs at least one sample"));
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = rng::stream(seed, "pseudo-shuffle", 0);
    for i in (1..order.len()).rev() {
        let j = shuffle_rng.random_range(0..=i);
        order.swap(i, j);
    }

    let mut out = Vec::with_capacity(samples.len());
    for (batch_idx, chunk) in order.chunks(batch).enumerate() {
        let n_anom = ((1.0 - normal_fraction) * chunk.len() as f64).round() as usize;
        let n_anom = if chunk.len() < 2 { 0 } else { n_anom.min(chunk.len()) };
        for (pos, &sample_idx) in chunk.iter().enumerate() {
            let (id, tensor) = &samples[sample_idx];
            let make_anomalous = pos < n_anom;
            if !make_anomalous {
                out.push(PseudoSample {
                    id: format!("pv_{id}"),
                    label: Label::Normal,
                    tensor: tensor.clone(),
                    gt_mask: None,
                });
                continue;
            }
            let mut r = rng::stream(
                seed,
                "pseudo-mask",
                rng::salt(&[batch_idx as u64, pos as u64]),
            );
            let donor_pos = {
                let other = r.random_range(0..chunk.len() - 1);
                if other >= pos {
                    other + 1
                } else {
                    other
                }
            };
            let (donor_id, donor) = &samples[chunk[donor_pos]];
            let (h, w) = (tensor.shape()[0], tensor.shape()[1]);
            let masks = make_masks(h, w, spec, &mut r)?;
            let synth = synthesize(tensor, donor, &masks, id, donor_id)?;
            let has_area = synth.gt_mask.data().iter().any(|&v| v > 0.5);
            out.push(PseudoSample {
                id: format!("pv_{id}"),
                label: if has_area { Label::Anomalous } else { Label::Normal },
                tensor: synth.tensor,
                gt_mask: if has_area { Some(synth.gt_mask) } else { None },
            });
        }
    }
    Ok(out)
}
