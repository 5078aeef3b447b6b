//! Workspace objects and the scene file format.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest object identifier, in UTF-8 bytes. Keeps a full 64-object scene
/// snapshot inside one 4 KiB frame.
pub const MAX_OBJECT_ID_LEN: usize = 12;

/// Most objects a scene (and a scene snapshot) may hold.
pub const MAX_SCENE_OBJECTS: usize = 64;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid object {id:?}: {reason}")]
    InvalidObject { id: String, reason: String },
    #[error("duplicate object id {0:?}")]
    DuplicateId(String),
    #[error("scene holds {0} objects, limit is {MAX_SCENE_OBJECTS}")]
    TooManyObjects(usize),
    #[error("scene file: {0}")]
    Parse(String),
    #[error("scene file I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis-aligned box.
    Box { half_extents: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub centroid: [f64; 3],
    pub shape: Shape,
}

impl SceneObject {
    pub fn sphere(id: impl Into<String>, centroid: [f64; 3], radius: f64) -> Self {
        Self { id: id.into(), centroid, shape: Shape::Sphere { radius } }
    }

    pub fn cuboid(id: impl Into<String>, centroid: [f64; 3], half_extents: [f64; 3]) -> Self {
        Self { id: id.into(), centroid, shape: Shape::Box { half_extents } }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        Vector3::from(self.centroid)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let fail = |reason: &str| SceneError::InvalidObject { id: self.id.clone(), reason: reason.into() };
        if self.id.is_empty() || self.id.len() > MAX_OBJECT_ID_LEN {
            return Err(fail("id must be 1..=12 bytes"));
        }
        if !self.centroid.iter().all(|v| v.is_finite()) {
            return Err(fail("non-finite centroid"));
        }
        let sizes_ok = match self.shape {
            Shape::Sphere { radius } => radius.is_finite() && radius > 0.0,
            Shape::Box { half_extents } => half_extents.iter().all(|h| h.is_finite() && *h > 0.0),
        };
        if !sizes_ok {
            return Err(fail("sizes must be finite and > 0"));
        }
        Ok(())
    }

    /// Distance from a point to the object's surface; zero inside.
    pub fn distance_to_point(&self, p: &Vector3<f64>) -> f64 {
        let c = self.centroid();
        match self.shape {
            Shape::Sphere { radius } => ((p - c).norm() - radius).max(0.0),
            Shape::Box { half_extents } => {
                let h = Vector3::from(half_extents);
                let d = (p - c).abs() - h;
                d.map(|v| v.max(0.0)).norm()
            }
        }
    }

    /// Distance from the segment `a`-`b` to the object's surface; zero on
    /// contact or overlap.
    pub fn distance_to_segment(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => (point_segment_distance(&self.centroid(), a, b) - radius).max(0.0),
            // Distance to a convex set is convex along the segment.
            Shape::Box { .. } => {
                let f = |t: f64| self.distance_to_point(&(a + (b - a) * t));
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..80 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if f(m1) <= f(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                f(0.5 * (lo + hi)).min(f(0.0)).min(f(1.0))
            }
        }
    }
}

pub fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_squared();
    let t = if len_sq > 0.0 { ((p - a).dot(&ab) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn new(objects: Vec<SceneObject>) -> Result<Self, SceneError> {
        let scene = Self { objects };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.objects.len() > MAX_SCENE_OBJECTS {
            return Err(SceneError::TooManyObjects(self.objects.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for obj in &self.objects {
            obj.validate()?;
            if !seen.insert(obj.id.as_str()) {
                return Err(SceneError::DuplicateId(obj.id.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Adds or replaces an object by id.
    pub fn upsert(&mut self, object: SceneObject) -> Result<(), SceneError> {
        object.validate()?;
        if let Some(slot) = self.objects.iter_mut().find(|o| o.id == object.id) {
            *slot = object;
        } else {
            if self.objects.len() >= MAX_SCENE_OBJECTS {
                return Err(SceneError::TooManyObjects(self.objects.len() + 1));
            }
            self.objects.push(object);
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SceneError> {
        let scene: Scene = toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_segment_cases() {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(point_segment_distance(&Vector3::new(0.5, 2.0, 0.0), &a, &b), 2.0);
        assert_eq!(point_segment_distance(&Vector3::new(-3.0, 4.0, 0.0), &a, &b), 5.0);
        assert_eq!(point_segment_distance(&Vector3::new(2.0, 0.0, 0.0), &a, &a), 2.0);
    }

    #[test]
    fn box_segment_distance_matches_hand_values() {
        let boxed = SceneObject::cuboid("b", [0.0, 0.0, 0.0], [0.5, 0.5, 0.5]);
        // Parallel to a face, 1 m above it.
        let d = boxed.distance_to_segment(&Vector3::new(-2.0, 0.0, 1.5), &Vector3::new(2.0, 0.0, 1.5));
        assert!((d - 1.0).abs() < 1e-9);
        // Passing through.
        let d = boxed.distance_to_segment(&Vector3::new(-2.0, 0.1, 0.0), &Vector3::new(2.0, 0.1, 0.0));
        assert!(d < 1e-12);
        // Nearest feature is an edge: (1, 1) corner in xy, distance sqrt(0.5^2 + 0.5^2).
        let d = boxed.distance_to_segment(&Vector3::new(1.0, 1.0, -3.0), &Vector3::new(1.0, 1.0, 3.0));
        assert!((d - 0.5f64.hypot(0.5)).abs() < 1e-9);
    }

    #[test]
    fn scene_toml_roundtrip() {
        let scene = Scene::new(vec![
            SceneObject::sphere("cup", [0.7, 0.1, 0.05], 0.04),
            SceneObject::cuboid("crate", [0.5, -0.4, 0.1], [0.1, 0.1, 0.1]),
        ])
        .unwrap();
        let back = Scene::from_toml_str(&scene.to_toml_string()).unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn scene_rejects_duplicates_and_bad_sizes() {
        let dup = Scene::new(vec![
            SceneObject::sphere("a", [0.0; 3], 0.1),
            SceneObject::sphere("a", [1.0; 3], 0.1),
        ]);
        assert!(matches!(dup, Err(SceneError::DuplicateId(_))));
        assert!(Scene::new(vec![SceneObject::sphere("a", [0.0; 3], 0.0)]).is_err());
        assert!(Scene::new(vec![SceneObject::sphere("much-too-long-id", [0.0; 3], 0.1)]).is_err());
    }

    #[test]
    fn upsert_replaces_by_id() {
        let mut scene = Scene::default();
        scene.upsert(SceneObject::sphere("a", [0.0; 3], 0.1)).unwrap();
        scene.upsert(SceneObject::sphere("a", [1.0; 3], 0.2)).unwrap();
        assert_eq!(scene.objects.len(), 1);
        assert_eq!(scene.objects[0].centroid, [1.0; 3]);
    }
}
