use crate::geometry::{Point3, RigidTransform};

/// Ordered 3D points with optional per-point intensity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    /// Returns `None` when the intensity channel length differs from the
    /// point count.
    pub fn with_intensity(points: Vec<Point3>, intensity: Vec<f64>) -> Option<Self> {
        (points.len() == intensity.len()).then_some(Self {
            points,
            intensity: Some(intensity),
        })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points for which `keep` is true, carrying intensity along.
    pub fn retain_by<F: FnMut(&Point3) -> bool>(&self, mut keep: F) -> PointCloud {
        let mask: Vec<bool> = self.points.iter().map(&mut keep).collect();
        self.select(&mask)
    }

    pub fn select(&self, mask: &[bool]) -> PointCloud {
        let points = self
            .points
            .iter()
            .zip(mask)
            .filter_map(|(p, &m)| m.then_some(*p))
            .collect();
        let intensity = self.intensity.as_ref().map(|v| {
            v.iter()
                .zip(mask)
                .filter_map(|(i, &m)| m.then_some(*i))
                .collect()
        });
        PointCloud { points, intensity }
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            intensity: self.intensity.clone(),
        }
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}
