//! Body regions derived from head boxes, and the location & scale features of
//! a person pair.
//!
//! The body box is 3 head widths wide and 6 head heights tall, centered
//! horizontally on the head and sharing its top edge, then clamped to the
//! image. The anchoring is a convention, not something the box sizes imply.
//!
//! Pairs are oriented before features are computed: the person whose head
//! is left-most comes first (ties fall back to top-most, then identity id), so
//! swapping the two slots of a [`PersonPair`] yields the same feature.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{BBox, Person, PersonPair};

pub const BODY_WIDTH_FACTOR: f64 = 3.0;
pub const BODY_HEIGHT_FACTOR: f64 = 6.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("input error: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeomThresholds {
    /// Head-center distance, in mean head diagonals, at or above which a pair
    /// is "far".
    pub far_distance: f64,
    /// Larger-over-smaller area ratio at or above which a pair is "large".
    pub large_ratio: f64,
}

impl Default for GeomThresholds {
    fn default() -> Self {
        Self {
            far_distance: 2.0,
            large_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampedBox {
    pub bbox: BBox,
    pub clamped: bool,
}

pub fn body_from_head(head: &BBox, image_w: f64, image_h: f64) -> Result<ClampedBox, GeomError> {
    if !(head.w > 0.0 && head.h > 0.0) {
        return Err(GeomError::Input(format!("degenerate head box {head:?}")));
    }
    if head.clamp_to(image_w, image_h).is_none() {
        return Err(GeomError::Input(format!(
            "head {head:?} outside {image_w}x{image_h} image"
        )));
    }
    let raw = BBox {
        x: head.x + 0.5 * head.w - 0.5 * BODY_WIDTH_FACTOR * head.w,
        y: head.y,
        w: BODY_WIDTH_FACTOR * head.w,
        h: BODY_HEIGHT_FACTOR * head.h,
    };
    Ok(clamp_box(&raw, image_w, image_h))
}

/// Clamps `b` to the image. Idempotent.
pub fn clamp_box(b: &BBox, image_w: f64, image_h: f64) -> ClampedBox {
    // x + (W - x) can overshoot W by an ulp; such a box is already inside
    let slack = 1e-12 * image_w.max(image_h);
    let clamped = b.x < 0.0 || b.y < 0.0 || b.right() > image_w + slack || b.bottom() > image_h + slack;
    let bbox = if clamped {
        b.clamp_to(image_w, image_h).unwrap_or(*b)
    } else {
        *b
    };
    ClampedBox { bbox, clamped }
}

/// Head and body regions of both persons, already oriented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPair {
    pub head_a: BBox,
    pub head_b: BBox,
    pub body_a: BBox,
    pub body_b: BBox,
    pub body_a_clamped: bool,
    pub body_b_clamped: bool,
}

/// Geometry of one region type (head or body) for an oriented pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionGeom {
    /// `(x, y, w, h)` of person A divided by image width/height.
    pub a: [f64; 4],
    pub b: [f64; 4],
    /// Center distance over mean diagonal.
    pub distance: f64,
    /// Larger area over smaller area, >= 1.
    pub size_ratio: f64,
    pub far: bool,
    pub large: bool,
}

impl RegionGeom {
    /// Length of [`RegionGeom::to_vec`].
    pub const DIM: usize = 14;

    /// `a(4) b(4) distance far close size_ratio large small`.
    pub fn to_vec(&self) -> Vec<f64> {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let mut v = Vec::with_capacity(Self::DIM);
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.b);
        v.extend([
            self.distance,
            flag(self.far),
            flag(!self.far),
            self.size_ratio,
            flag(self.large),
            flag(!self.large),
        ]);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeomFeature {
    pub head: RegionGeom,
    pub body: RegionGeom,
    pub regions: RegionPair,
}

/// Orders the two persons of a pair: left-most head first.
pub fn orient(pair: &PersonPair) -> (&Person, &Person) {
    let (a, b) = (&pair.person_a, &pair.person_b);
    let key = |p: &Person| (p.head.x, p.head.y);
    let ka = key(a);
    let kb = key(b);
    let a_first = match ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.identity_id <= b.identity_id,
    };
    if a_first {
        (a, b)
    } else {
        (b, a)
    }
}

fn normalized(b: &BBox, image_w: f64, image_h: f64) -> [f64; 4] {
    [b.x / image_w, b.y / image_h, b.w / image_w, b.h / image_h]
}

fn region_geom(a: &BBox, b: &BBox, image_w: f64, image_h: f64, th: &GeomThresholds) -> Result<RegionGeom, GeomError> {
    let (area_a, area_b) = (a.area(), b.area());
    if !(area_a > 0.0 && area_b > 0.0) {
        return Err(GeomError::Input("zero-area region".into()));
    }
    let (ca, cb) = (a.center(), b.center());
    let mean_diag = 0.5 * (a.diagonal() + b.diagonal());
    let distance = (ca.0 - cb.0).hypot(ca.1 - cb.1) / mean_diag;
    let size_ratio = area_a.max(area_b) / area_a.min(area_b);
    Ok(RegionGeom {
        a: normalized(a, image_w, image_h),
        b: normalized(b, image_w, image_h),
        distance,
        size_ratio,
        far: distance >= th.far_distance,
        large: size_ratio >= th.large_ratio,
    })
}

pub fn regions(pair: &PersonPair) -> Result<RegionPair, GeomError> {
    let (a, b) = orient(pair);
    let body_a = body_from_head(&a.head, pair.image_w, pair.image_h)?;
    let body_b = body_from_head(&b.head, pair.image_w, pair.image_h)?;
    Ok(RegionPair {
        head_a: a.head,
        head_b: b.head,
        body_a: body_a.bbox,
        body_b: body_b.bbox,
        body_a_clamped: body_a.clamped,
        body_b_clamped: body_b.clamped,
    })
}

pub fn geom_feature(pair: &PersonPair, th: &GeomThresholds) -> Result<GeomFeature, GeomError> {
    if !(pair.image_w > 0.0 && pair.image_h > 0.0) {
        return Err(GeomError::Input(format!("pair {}: bad image size", pair.pair_id)));
    }
    let r = regions(pair)?;
    let head = region_geom(&r.head_a, &r.head_b, pair.image_w, pair.image_h, th)?;
    let body = region_geom(&r.body_a, &r.body_b, pair.image_w, pair.image_h, th)?;
    Ok(GeomFeature {
        head,
        body,
        regions: r,
    })
}
