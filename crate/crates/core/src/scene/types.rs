//! Scene vocabulary, objects and cameras.
//!
//! World frame: right-handed, z up, ground plane z = 0. The canonical
//! camera sits on the -y side of the origin at azimuth 0 and looks at the
//! origin; positive azimuth orbits counter-clockwise seen from above.

use serde::{Deserialize, Serialize};

use crate::geometry::euler_rotation;

macro_rules! attribute {
    ($name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn word(self) -> &'static str {
                match self {
                    $($name::$variant => $word),+
                }
            }

            pub fn index(self) -> u8 {
                Self::ALL.iter().position(|&v| v == self).unwrap() as u8
            }

            pub fn from_index(i: u8) -> Option<Self> {
                Self::ALL.get(i as usize).copied()
            }

            pub fn from_word(w: &str) -> Option<Self> {
                Self::ALL.iter().copied().find(|v| v.word() == w)
            }
        }
    };
}

attribute!(Shape { Cube => "cube", Sphere => "sphere", Cylinder => "cylinder" });
attribute!(Color {
    Gray => "gray",
    Red => "red",
    Blue => "blue",
    Green => "green",
    Brown => "brown",
    Purple => "purple",
    Cyan => "cyan",
    Yellow => "yellow",
});
attribute!(Size { Small => "small", Large => "large" });
attribute!(Material { Rubber => "rubber", Metal => "metal" });

impl Shape {
    pub fn plural(self) -> &'static str {
        match self {
            Shape::Cube => "cubes",
            Shape::Sphere => "spheres",
            Shape::Cylinder => "cylinders",
        }
    }
}

impl Color {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Gray => [87, 87, 87],
            Color::Red => [173, 35, 35],
            Color::Blue => [42, 75, 215],
            Color::Green => [29, 105, 20],
            Color::Brown => [129, 74, 25],
            Color::Purple => [129, 38, 192],
            Color::Cyan => [41, 208, 208],
            Color::Yellow => [255, 238, 51],
        }
    }
}

impl Size {
    /// Bounding radius in world units.
    pub fn radius(self) -> f64 {
        match self {
            Size::Small => 0.35,
            Size::Large => 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    pub material: Material,
    /// Center; z is the resting height implied by shape and size.
    pub position: [f64; 3],
    /// Rotation about the vertical axis (radians); only visible on cubes.
    pub yaw: f64,
}

impl SceneObject {
    pub fn radius(&self) -> f64 {
        self.size.radius()
    }

    /// Half side length for cubes, radius for the round shapes.
    pub fn half_extent(&self) -> f64 {
        match self.shape {
            Shape::Cube => self.radius() / std::f64::consts::SQRT_2,
            _ => self.radius(),
        }
    }

    pub fn resting_height(shape: Shape, size: Size) -> f64 {
        match shape {
            Shape::Cube => size.radius() / std::f64::consts::SQRT_2,
            _ => size.radius(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
}

pub const CAMERA_RADIUS: f64 = 7.5;
pub const CANONICAL_ELEVATION_DEG: f64 = 30.0;

impl CameraPose {
    pub fn canonical() -> Self {
        CameraPose {
            azimuth_deg: 0.0,
            elevation_deg: CANONICAL_ELEVATION_DEG,
            radius: CAMERA_RADIUS,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        let (a, e) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        let d = self.radius * e.cos();
        [d * a.sin(), -d * a.cos(), self.radius * e.sin()]
    }

    /// Camera-to-world Euler angles `(θx, θy, θz)` for `Rz·Ry·Rx`, with the
    /// camera looking down its local -z axis and local +y up.
    pub fn euler(&self) -> [f64; 3] {
        [
            std::f64::consts::FRAC_PI_2 - self.elevation_deg.to_radians(),
            0.0,
            self.azimuth_deg.to_radians(),
        ]
    }

    /// Raw camera vector `c = (θx, θy, θz, tx, ty, tz)`.
    pub fn raw(&self) -> [f64; 6] {
        let [a, b, c] = self.euler();
        let [x, y, z] = self.position();
        [a, b, c, x, y, z]
    }

    /// Camera-to-world rotation; columns are (right, up, backward).
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let [a, b, c] = self.euler();
        euler_rotation(a, b, c)
    }

    pub fn right(&self) -> [f64; 3] {
        let r = self.rotation();
        [r[0][0], r[1][0], r[2][0]]
    }

    pub fn up(&self) -> [f64; 3] {
        let r = self.rotation();
        [r[0][1], r[1][1], r[2][1]]
    }

    pub fn forward(&self) -> [f64; 3] {
        let r = self.rotation();
        [-r[0][2], -r[1][2], -r[2][2]]
    }

    /// Viewing direction projected onto the ground plane, unit length.
    pub fn ground_forward(&self) -> [f64; 3] {
        let a = self.azimuth_deg.to_radians();
        [-a.sin(), a.cos(), 0.0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub id: u64,
    pub objects: Vec<SceneObject>,
    pub canonical: CameraPose,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn canonical_camera_frame() {
        let c = CameraPose::canonical();
        let p = c.position();
        assert!(p[0].abs() < 1e-12 && p[1] < 0.0 && p[2] > 0.0);
        assert!((p.iter().map(|v| v * v).sum::<f64>().sqrt() - 7.5).abs() < 1e-12);
        assert!(close(c.right(), [1.0, 0.0, 0.0]));
        assert!(close(c.ground_forward(), [0.0, 1.0, 0.0]));
        // forward points from the camera at the origin
        let f = c.forward();
        let to_origin: Vec<f64> = p.iter().map(|v| -v / 7.5).collect();
        assert!(close(f, [to_origin[0], to_origin[1], to_origin[2]]));
    }

    #[test]
    fn quarter_azimuth_moves_camera_to_plus_x() {
        let c = CameraPose {
            azimuth_deg: 90.0,
            ..CameraPose::canonical()
        };
        assert!(c.position()[0] > 6.0);
        assert!(close(c.right(), [0.0, 1.0, 0.0]));
        assert!(close(c.ground_forward(), [-1.0, 0.0, 0.0]));
    }

    #[test]
    fn attribute_words_round_trip() {
        for c in Color::ALL {
            assert_eq!(Color::from_word(c.word()), Some(*c));
            assert_eq!(Color::from_index(c.index()), Some(*c));
        }
        assert_eq!(Shape::ALL.len(), 3);
        assert_eq!(Color::ALL.len(), 8);
    }
}
