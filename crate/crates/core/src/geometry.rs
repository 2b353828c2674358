//! Floor plans, image-source virtual anchors and agent trajectories.
//!
//! A virtual anchor (VA) is the mirror image of a physical anchor (PA) across
//! the supporting line of a reflecting wall. Only first-order images are
//! produced by default; occlusion is not modeled.

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// 2-D position or displacement in meters.
pub type Vec2 = nalgebra::Vector2<f64>;

/// Tolerance below which two anchor positions are considered identical.
pub const DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub start: Vec2,
    pub end: Vec2,
}

impl WallSegment {
    pub fn new(start: Vec2, end: Vec2) -> Result<Self, GeometryError> {
        let wall = Self { start, end };
        wall.validate()?;
        Ok(wall)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let len = (self.end - self.start).norm();
        if !len.is_finite() || len == 0.0 {
            return Err(GeometryError::DegenerateWall {
                start: [self.start.x, self.start.y],
                end: [self.end.x, self.end.y],
            });
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }
}

/// Reflecting walls plus the circular region of interest (ROI) on which
/// uniform feature priors are defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub walls: Vec<WallSegment>,
    pub roi_center: Vec2,
    pub roi_radius: f64,
}

impl FloorPlan {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.roi_radius > 0.0) || !self.roi_radius.is_finite() {
            return Err(GeometryError::InvalidRoi(self.roi_radius));
        }
        for (i, wall) in self.walls.iter().enumerate() {
            wall.validate()?;
            for p in [wall.start, wall.end] {
                if (p - self.roi_center).norm() > self.roi_radius {
                    return Err(GeometryError::WallOutsideRoi(i));
                }
            }
        }
        Ok(())
    }

    pub fn roi_area(&self) -> f64 {
        std::f64::consts::PI * self.roi_radius * self.roi_radius
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        (p - self.roi_center).norm_squared() <= self.roi_radius * self.roi_radius
    }
}

/// Ground-truth feature map: per PA, the PA itself followed by its VAs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorMap {
    pub pa_positions: Vec<Vec2>,
    pub va_positions: Vec<Vec<Vec2>>,
}

impl AnchorMap {
    pub fn num_pas(&self) -> usize {
        self.pa_positions.len()
    }

    /// All features (PA first, then VAs) belonging to PA `j`.
    pub fn features(&self, j: usize) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(1 + self.va_positions[j].len());
        out.push(self.pa_positions[j]);
        out.extend_from_slice(&self.va_positions[j]);
        out
    }

    pub fn feature_counts(&self) -> Vec<usize> {
        self.va_positions.iter().map(|v| v.len() + 1).collect()
    }
}

/// Reflects `point` across the infinite line supporting `wall`.
pub fn mirror_across_segment(point: Vec2, wall: &WallSegment) -> Result<Vec2, GeometryError> {
    wall.validate()?;
    let dir = (wall.end - wall.start).normalize();
    let rel = point - wall.start;
    let along = dir * rel.dot(&dir);
    let perp = rel - along;
    Ok(wall.start + along - perp)
}

/// First-order image-source map. Images that coincide with the PA or with an
/// earlier image are dropped.
pub fn build_anchor_map(pas: &[Vec2], plan: &FloorPlan) -> Result<AnchorMap, GeometryError> {
    if pas.is_empty() {
        return Err(GeometryError::NoAnchors);
    }
    let mut va_positions = Vec::with_capacity(pas.len());
    for pa in pas {
        let mut vas: Vec<Vec2> = Vec::with_capacity(plan.walls.len());
        for wall in &plan.walls {
            let va = mirror_across_segment(*pa, wall)?;
            let dup = (va - pa).norm() <= DEDUP_TOL
                || vas.iter().any(|v| (v - va).norm() <= DEDUP_TOL);
            if !dup {
                vas.push(va);
            }
        }
        va_positions.push(vas);
    }
    Ok(AnchorMap {
        pa_positions: pas.to_vec(),
        va_positions,
    })
}

/// Resamples a waypoint polyline at uniform arc-length spacing.
///
/// Each leg restarts the spacing at its first waypoint, so every corner is
/// part of the output. When a leg length is not a multiple of the step, the
/// last gap on that leg absorbs the remainder.
pub fn generate_trajectory(waypoints: &[Vec2], step_length: f64) -> Result<Vec<Vec2>, GeometryError> {
    if waypoints.len() < 2 {
        return Err(GeometryError::TooFewWaypoints(waypoints.len()));
    }
    if !(step_length > 0.0) || !step_length.is_finite() {
        return Err(GeometryError::InvalidStep(step_length));
    }
    let mut out = vec![waypoints[0]];
    for (i, leg) in waypoints.windows(2).enumerate() {
        let (a, b) = (leg[0], leg[1]);
        let len = (b - a).norm();
        if len == 0.0 {
            return Err(GeometryError::CoincidentWaypoints(i));
        }
        let dir = (b - a) / len;
        let steps = (len / step_length).round().max(1.0) as usize;
        for s in 1..steps {
            out.push(a + dir * (s as f64 * step_length));
        }
        out.push(b);
    }
    Ok(out)
}
