//! Synthetic ground-truth worlds: a textured ground plane scattered with
//! spherical landmarks, rendered to multi-view images and sampled by a
//! spinning range sensor, plus revisit trajectories with known poses.
//!
//! Everything is seed-deterministic: the same seed reproduces the same
//! scene, pixels and points bit for bit. The ground texture is value noise
//! evaluated from a hash of the lattice coordinates, so it can be queried
//! at any point without storing a map.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{backproject_ray, CameraRig, GeometryError};
use crate::lidar::{LidarError, PointCloud};
use nalgebra::{Matrix3, Vector3};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scene config needs positive extent, radii, texture scale and amplitude in [0, 0.5]")]
    BadSceneConfig,
    #[error("pose contains a non-finite value")]
    BadPose,
    #[error("lidar config needs positive steps, elevation_min <= elevation_max, max_range > 0")]
    BadLidarConfig,
    #[error("revisit config needs places >= 1 and jitter below half the grid spacing")]
    BadRevisitConfig,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lidar(#[from] LidarError),
}

/// Brightness of rays that hit neither ground nor a landmark.
pub const SKY_SHADE: f64 = 0.85;

/// Mean brightness of the ground plane.
pub const GROUND_SHADE: f64 = 0.5;

/// World generation parameters. The world covers
/// `[-half_extent, half_extent]^2` with the ground plane at z = 0.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub half_extent: f64,
    pub landmarks: usize,
    pub radius_range: (f64, f64),
    /// Peak deviation of the ground brightness from its mean, in [0, 0.5].
    pub texture_amplitude: f64,
    /// Spatial period of the ground texture, in meters.
    pub texture_scale: f64,
    /// Scales landmark shades toward the ground gray, in [0, 1]: at 0 the
    /// landmarks are invisible to cameras while range sensors still see
    /// their geometry. The layout is unaffected, so the same seed gives the
    /// same world at any contrast.
    pub landmark_contrast: f64,
    /// Landmark-free discs as (center, radius): navigable ground where a
    /// rig can stand without an obstacle pressed against its cameras.
    pub clearings: Vec<((f64, f64), f64)>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            half_extent: 60.0,
            landmarks: 40,
            radius_range: (0.4, 1.5),
            texture_amplitude: 0.25,
            texture_scale: 1.5,
            landmark_contrast: 1.0,
            clearings: Vec::new(),
        }
    }
}

/// A matte sphere resting on the ground: its center sits at z = radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub center: (f64, f64),
    pub radius: f64,
    pub shade: f64,
}

impl Landmark {
    fn center3(&self) -> Vector3<f64> {
        Vector3::new(self.center.0, self.center.1, self.radius)
    }
}

/// A generated world; landmark layout is fixed at generation time, ground
/// texture is evaluated on demand from the seed.
#[derive(Debug, Clone)]
pub struct Scene {
    seed: u64,
    config: SceneConfig,
    landmarks: Vec<Landmark>,
}

fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Hash of a lattice corner to [0, 1).
fn lattice_value(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix64(
        seed ^ (ix as u64).wrapping_mul(0x9e3779b97f4a7c15)
            ^ (iy as u64).wrapping_mul(0xc2b2ae3d27d4eb4f),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smooth value noise in [0, 1), continuous in both coordinates.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let ix = x.floor();
    let iy = y.floor();
    let fx = smoothstep(x - ix);
    let fy = smoothstep(y - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = lattice_value(seed, ix, iy);
    let v10 = lattice_value(seed, ix + 1, iy);
    let v01 = lattice_value(seed, ix, iy + 1);
    let v11 = lattice_value(seed, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    top + (bottom - top) * fy
}

impl Scene {
    pub fn generate(seed: u64, config: SceneConfig) -> Result<Self, SynthError> {
        let ok = config.half_extent.is_finite()
            && config.half_extent > 0.0
            && config.radius_range.0 > 0.0
            && config.radius_range.0 <= config.radius_range.1
            && config.radius_range.1 < config.half_extent
            && (0.0..=0.5).contains(&config.texture_amplitude)
            && config.texture_scale > 0.0
            && config.texture_scale.is_finite()
            && (0.0..=1.0).contains(&config.landmark_contrast)
            && config.clearings.iter().all(|((x, y), r)| {
                x.is_finite() && y.is_finite() && r.is_finite() && *r >= 0.0
            });
        if !ok {
            return Err(SynthError::BadSceneConfig);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let margin = config.radius_range.1;
        let span = config.half_extent - margin;
        let mut landmarks: Vec<Landmark> = Vec::with_capacity(config.landmarks);
        for _ in 0..config.landmarks {
            // Clearings are a hard constraint; non-overlap between
            // landmarks is best-effort, keeping the last admissible draw
            // so generation always terminates.
            let mut fallback: Option<Landmark> = None;
            for _attempt in 0..100 {
                let radius = rng.random_range(config.radius_range.0..=config.radius_range.1);
                let center = (
                    rng.random_range(-span..span),
                    rng.random_range(-span..span),
                );
                let raw = if rng.random_bool(0.5) {
                    rng.random_range(0.05..0.30)
                } else {
                    rng.random_range(0.70..0.95)
                };
                let shade = GROUND_SHADE + (raw - GROUND_SHADE) * config.landmark_contrast;
                let candidate = Landmark {
                    center,
                    radius,
                    shade,
                };
                let outside_clearings = config.clearings.iter().all(|((cx, cy), cr)| {
                    (center.0 - cx).hypot(center.1 - cy) >= cr + radius
                });
                if !outside_clearings {
                    continue;
                }
                fallback = Some(candidate);
                let clear = landmarks.iter().all(|other| {
                    let dx = other.center.0 - center.0;
                    let dy = other.center.1 - center.1;
                    dx.hypot(dy) >= other.radius + radius + 0.25
                });
                if clear {
                    break;
                }
            }
            if let Some(landmark) = fallback {
                landmarks.push(landmark);
            }
        }
        Ok(Self {
            seed,
            config,
            landmarks,
        })
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    /// Ground brightness at a world point, in [0, 1].
    pub fn ground_shade(&self, x: f64, y: f64) -> f64 {
        let n = value_noise(
            self.seed,
            x / self.config.texture_scale,
            y / self.config.texture_scale,
        );
        (GROUND_SHADE + self.config.texture_amplitude * (2.0 * n - 1.0)).clamp(0.0, 1.0)
    }
}

/// World pose of the camera rig: position of the rig origin and heading
/// about the world z axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw_deg: f64,
}

impl RigPose {
    fn validate(&self) -> Result<(), SynthError> {
        let ok = self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
            && self.yaw_deg.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SynthError::BadPose)
        }
    }

    /// Rotation taking rig-frame directions into the world frame.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sin, cos) = self.yaw_deg.to_radians().sin_cos();
        Matrix3::new(cos, -sin, 0.0, sin, cos, 0.0, 0.0, 0.0, 1.0)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Distance along the unit ray `o + t d` to the ground plane z = 0, if hit.
fn ground_hit(origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    if dir.z >= -1e-12 {
        return None;
    }
    let t = -origin.z / dir.z;
    (t > 0.0).then_some(t)
}

/// Distance along the unit ray to a sphere, if hit from outside.
fn sphere_hit(origin: &Vector3<f64>, dir: &Vector3<f64>, landmark: &Landmark) -> Option<f64> {
    let oc = origin - landmark.center3();
    let b = dir.dot(&oc);
    let c = oc.dot(&oc) - landmark.radius * landmark.radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then_some(t)
}

/// Renders one image per rig view: ground and sky are ray-cast per pixel,
/// landmarks are painted far to near as projected discs of pixel radius
/// `fx * radius / depth`. Grayscale replicated to RGB.
pub fn render_views(
    scene: &Scene,
    rig: &CameraRig,
    pose: &RigPose,
) -> Result<Vec<image::RgbImage>, SynthError> {
    pose.validate()?;
    let world_r = pose.rotation();
    let world_t = pose.translation();
    let mut images = Vec::with_capacity(rig.view_count());
    for (k, view) in rig.views().iter().enumerate() {
        let intr = &view.intrinsics;
        let (w, h) = (intr.width as usize, intr.height as usize);
        let mut shades = vec![0.0f64; w * h];
        for py in 0..h {
            for px in 0..w {
                let (origin_rig, dir_rig) = backproject_ray(rig, k, px as f64, py as f64)?;
                let origin = world_r * origin_rig + world_t;
                let dir = world_r * dir_rig;
                shades[py * w + px] = match ground_hit(&origin, &dir) {
                    Some(t) => {
                        let hit = origin + dir * t;
                        scene.ground_shade(hit.x, hit.y)
                    }
                    None => SKY_SHADE,
                };
            }
        }
        // Painter's algorithm over the landmarks: sort far to near from the
        // camera center so closer spheres overwrite farther ones.
        let cam_center_world = world_r * view.extrinsics.center() + world_t;
        let mut order: Vec<usize> = (0..scene.landmarks.len()).collect();
        let depth_of = |l: &Landmark| (l.center3() - cam_center_world).norm();
        order.sort_by(|&a, &b| {
            depth_of(&scene.landmarks[b]).total_cmp(&depth_of(&scene.landmarks[a]))
        });
        for index in order {
            let landmark = &scene.landmarks[index];
            let p_rig = world_r.transpose() * (landmark.center3() - world_t);
            let cam = view.extrinsics.rotation * p_rig + view.extrinsics.translation;
            if cam.z <= landmark.radius.max(0.05) {
                continue;
            }
            let u = intr.cx + intr.fx * cam.x / cam.z;
            let v = intr.cy + intr.fy * cam.y / cam.z;
            let radius_px = intr.fx * landmark.radius / cam.z;
            let x_lo = ((u - radius_px).floor().max(0.0)) as usize;
            let x_hi = ((u + radius_px).ceil().min((w - 1) as f64)) as usize;
            let y_lo = ((v - radius_px).floor().max(0.0)) as usize;
            let y_hi = ((v + radius_px).ceil().min((h - 1) as f64)) as usize;
            if u + radius_px < 0.0 || v + radius_px < 0.0 {
                continue;
            }
            for py in y_lo..=y_hi {
                for px in x_lo..=x_hi {
                    let du = px as f64 - u;
                    let dv = py as f64 - v;
                    if du * du + dv * dv <= radius_px * radius_px {
                        shades[py * w + px] = landmark.shade;
                    }
                }
            }
        }
        let mut image = image::RgbImage::new(w as u32, h as u32);
        for py in 0..h {
            for px in 0..w {
                let value = (shades[py * w + px].clamp(0.0, 1.0) * 255.0).round() as u8;
                image.put_pixel(px as u32, py as u32, image::Rgb([value, value, value]));
            }
        }
        images.push(image);
    }
    Ok(images)
}

/// Renders and converts to the float layout the feature extractor expects.
pub fn render_view_arrays(
    scene: &Scene,
    rig: &CameraRig,
    pose: &RigPose,
) -> Result<Vec<Array3<f32>>, SynthError> {
    Ok(render_views(scene, rig, pose)?
        .iter()
        .map(crate::bev::rgb_to_array)
        .collect())
}

/// Spinning range sensor: `azimuth_steps` horizontal directions, each with
/// `elevation_steps` rays spaced evenly over the elevation span.
#[derive(Debug, Clone, Copy)]
pub struct LidarConfig {
    pub azimuth_steps: usize,
    pub elevation_steps: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub max_range: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            azimuth_steps: 180,
            elevation_steps: 16,
            elevation_min_deg: -25.0,
            elevation_max_deg: 3.0,
            max_range: 60.0,
        }
    }
}

/// Casts the sensor rays from the rig origin and returns hits as rig-frame
/// points, azimuth-major. Rays that hit nothing within `max_range` produce
/// no point.
pub fn sample_lidar(
    scene: &Scene,
    pose: &RigPose,
    config: &LidarConfig,
) -> Result<PointCloud, SynthError> {
    pose.validate()?;
    let ok = config.azimuth_steps > 0
        && config.elevation_steps > 0
        && config.elevation_min_deg <= config.elevation_max_deg
        && config.max_range > 0.0
        && config.max_range.is_finite();
    if !ok {
        return Err(SynthError::BadLidarConfig);
    }
    let world_r = pose.rotation();
    let origin = pose.translation();
    let mut points = Vec::new();
    for a in 0..config.azimuth_steps {
        let phi = a as f64 * std::f64::consts::TAU / config.azimuth_steps as f64;
        for e in 0..config.elevation_steps {
            let frac = if config.elevation_steps == 1 {
                0.0
            } else {
                e as f64 / (config.elevation_steps - 1) as f64
            };
            let elev = (config.elevation_min_deg
                + frac * (config.elevation_max_deg - config.elevation_min_deg))
                .to_radians();
            let dir_rig = Vector3::new(
                elev.cos() * phi.cos(),
                elev.cos() * phi.sin(),
                elev.sin(),
            );
            let dir = world_r * dir_rig;
            let mut nearest = ground_hit(&origin, &dir);
            for landmark in &scene.landmarks {
                if let Some(t) = sphere_hit(&origin, &dir, landmark) {
                    nearest = Some(match nearest {
                        Some(best) => best.min(t),
                        None => t,
                    });
                }
            }
            if let Some(t) = nearest {
                if t <= config.max_range {
                    let p = dir_rig * t;
                    points.push([p.x as f32, p.y as f32, p.z as f32]);
                }
            }
        }
    }
    Ok(PointCloud::new(points, None)?)
}

/// Layout of a mapping run and a revisit run over the same world: database
/// poses on a square grid, each revisited once nearby with a fresh heading.
#[derive(Debug, Clone, Copy)]
pub struct RevisitConfig {
    pub places: usize,
    pub grid_spacing: f64,
    /// Maximum planar distance between a place and its revisit.
    pub translation_jitter: f64,
    /// Revisit heading = database heading + U[0, yaw_range_deg).
    pub yaw_range_deg: f64,
    pub rig_height: f64,
}

impl Default for RevisitConfig {
    fn default() -> Self {
        Self {
            places: 100,
            grid_spacing: 6.0,
            translation_jitter: 1.0,
            yaw_range_deg: 360.0,
            rig_height: 1.0,
        }
    }
}

/// Paired pose lists; `queries[i]` revisits `database[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RevisitSet {
    pub database: Vec<RigPose>,
    pub queries: Vec<RigPose>,
}

/// The origin-centered square grid of place locations that
/// [`make_revisit_set`] draws poses at, row-major. Useful for carving
/// matching clearings into a [`SceneConfig`].
pub fn revisit_grid_points(config: &RevisitConfig) -> Result<Vec<(f64, f64)>, SynthError> {
    if config.places < 1 || !(config.grid_spacing > 0.0) || !config.grid_spacing.is_finite() {
        return Err(SynthError::BadRevisitConfig);
    }
    let side = (config.places as f64).sqrt().ceil() as usize;
    let offset = -0.5 * (side as f64 - 1.0) * config.grid_spacing;
    Ok((0..config.places)
        .map(|place| {
            let row = place / side;
            let col = place % side;
            (
                offset + col as f64 * config.grid_spacing,
                offset + row as f64 * config.grid_spacing,
            )
        })
        .collect())
}

/// Generates the revisit layout. Jitter stays below half the grid spacing
/// so each query is strictly closest to its own database place.
pub fn make_revisit_set(seed: u64, config: &RevisitConfig) -> Result<RevisitSet, SynthError> {
    let ok = config.translation_jitter >= 0.0
        && config.translation_jitter < 0.5 * config.grid_spacing
        && (0.0..=360.0).contains(&config.yaw_range_deg)
        && config.rig_height.is_finite();
    if !ok {
        return Err(SynthError::BadRevisitConfig);
    }
    let grid = revisit_grid_points(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut database = Vec::with_capacity(config.places);
    let mut queries = Vec::with_capacity(config.places);
    for (x, y) in grid {
        let db_yaw = rng.random_range(0.0..360.0);
        database.push(RigPose {
            x,
            y,
            z: config.rig_height,
            yaw_deg: db_yaw,
        });
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = rng.random_range(0.0..=config.translation_jitter);
        let delta = if config.yaw_range_deg == 0.0 {
            0.0
        } else {
            rng.random_range(0.0..config.yaw_range_deg)
        };
        queries.push(RigPose {
            x: x + radius * angle.cos(),
            y: y + radius * angle.sin(),
            z: config.rig_height,
            yaw_deg: (db_yaw + delta).rem_euclid(360.0),
        });
    }
    Ok(RevisitSet { database, queries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;

    fn small_rig(views: usize) -> CameraRig {
        let intr = CameraIntrinsics::new(40.0, 40.0, 40.0, 30.0, 80, 60).unwrap();
        CameraRig::ring(views, intr, 15.0, 0.1, 0.0).unwrap()
    }

    fn flat_scene() -> Scene {
        let config = SceneConfig {
            landmarks: 0,
            texture_amplitude: 0.0,
            ..SceneConfig::default()
        };
        Scene::generate(1, config).unwrap()
    }

    #[test]
    fn generation_and_rendering_are_seed_deterministic() {
        let config = SceneConfig::default();
        let a = Scene::generate(7, config.clone()).unwrap();
        let b = Scene::generate(7, config.clone()).unwrap();
        assert_eq!(a.landmarks(), b.landmarks());
        let c = Scene::generate(8, config).unwrap();
        assert_ne!(a.landmarks(), c.landmarks());

        let rig = small_rig(2);
        let pose = RigPose { x: 3.0, y: -2.0, z: 1.0, yaw_deg: 40.0 };
        let img_a = render_views(&a, &rig, &pose).unwrap();
        let img_b = render_views(&b, &rig, &pose).unwrap();
        assert_eq!(img_a, img_b);

        let lidar = LidarConfig { azimuth_steps: 60, elevation_steps: 4, ..LidarConfig::default() };
        let cloud_a = sample_lidar(&a, &pose, &lidar).unwrap();
        let cloud_b = sample_lidar(&b, &pose, &lidar).unwrap();
        assert_eq!(cloud_a, cloud_b);
    }

    #[test]
    fn empty_scene_shows_sky_above_and_ground_below() {
        // Pitch-free forward camera 1 m up: the horizon crosses cy, rows
        // above are sky, rows below untextured mid-gray ground.
        let intr = CameraIntrinsics::new(40.0, 40.0, 40.0, 30.0, 80, 60).unwrap();
        let rig = CameraRig::ring(1, intr, 0.0, 0.0, 0.0).unwrap();
        let scene = flat_scene();
        let pose = RigPose { x: 0.0, y: 0.0, z: 1.0, yaw_deg: 0.0 };
        let image = &render_views(&scene, &rig, &pose).unwrap()[0];
        let sky = (SKY_SHADE * 255.0).round() as u8;
        let ground = (GROUND_SHADE * 255.0).round() as u8;
        assert_eq!(image.get_pixel(40, 0)[0], sky);
        assert_eq!(image.get_pixel(0, 10)[0], sky);
        assert_eq!(image.get_pixel(40, 59)[0], ground);
        assert_eq!(image.get_pixel(5, 45)[0], ground);
    }

    #[test]
    fn landmark_ahead_projects_to_the_principal_point() {
        let intr = CameraIntrinsics::new(40.0, 40.0, 40.0, 30.0, 80, 60).unwrap();
        let rig = CameraRig::ring(1, intr, 0.0, 0.0, 0.0).unwrap();
        let mut scene = flat_scene();
        scene.landmarks.push(Landmark {
            center: (10.0, 0.0),
            radius: 1.0,
            shade: 0.1,
        });
        // Camera height equals the sphere center height, so the center
        // lands exactly on (cx, cy).
        let pose = RigPose { x: 0.0, y: 0.0, z: 1.0, yaw_deg: 0.0 };
        let image = &render_views(&scene, &rig, &pose).unwrap()[0];
        let dark = (0.1f64 * 255.0).round() as u8;
        assert_eq!(image.get_pixel(40, 30)[0], dark);
        // Disc radius fx * r / z = 4 px: symmetric about the center and
        // absent beyond it.
        assert_eq!(image.get_pixel(37, 30)[0], dark);
        assert_eq!(image.get_pixel(43, 30)[0], dark);
        assert_ne!(image.get_pixel(46, 30)[0], dark);
        assert_eq!(image.get_pixel(40, 27)[0], image.get_pixel(40, 33)[0]);
    }

    #[test]
    fn nearer_landmarks_paint_over_farther_ones() {
        let intr = CameraIntrinsics::new(40.0, 40.0, 40.0, 30.0, 80, 60).unwrap();
        let rig = CameraRig::ring(1, intr, 0.0, 0.0, 0.0).unwrap();
        let mut scene = flat_scene();
        scene.landmarks.push(Landmark {
            center: (20.0, 0.0),
            radius: 1.0,
            shade: 0.9,
        });
        scene.landmarks.push(Landmark {
            center: (8.0, 0.0),
            radius: 1.0,
            shade: 0.1,
        });
        let pose = RigPose { x: 0.0, y: 0.0, z: 1.0, yaw_deg: 0.0 };
        let image = &render_views(&scene, &rig, &pose).unwrap()[0];
        let near = (0.1f64 * 255.0).round() as u8;
        assert_eq!(image.get_pixel(40, 30)[0], near);
    }

    #[test]
    fn lidar_ray_hits_a_sphere_dead_ahead_at_center_distance_minus_radius() {
        let mut scene = flat_scene();
        scene.landmarks.push(Landmark {
            center: (12.0, 0.0),
            radius: 1.5,
            shade: 0.2,
        });
        // One ray straight ahead at the sphere-center height.
        let config = LidarConfig {
            azimuth_steps: 4,
            elevation_steps: 1,
            elevation_min_deg: 0.0,
            elevation_max_deg: 0.0,
            max_range: 100.0,
        };
        let pose = RigPose { x: 0.0, y: 0.0, z: 1.5, yaw_deg: 0.0 };
        let cloud = sample_lidar(&scene, &pose, &config).unwrap();
        // Level rays other than the one that hits the sphere hit nothing.
        assert_eq!(cloud.len(), 1);
        let p = cloud.points()[0];
        assert!((p[0] - 10.5).abs() < 1e-5, "hit at {}", p[0]);
        assert!(p[1].abs() < 1e-6 && p[2].abs() < 1e-6);
    }

    #[test]
    fn downward_lidar_ring_lands_at_the_expected_radius() {
        let scene = flat_scene();
        let config = LidarConfig {
            azimuth_steps: 32,
            elevation_steps: 1,
            elevation_min_deg: -45.0,
            elevation_max_deg: -45.0,
            max_range: 100.0,
        };
        let pose = RigPose { x: 5.0, y: -3.0, z: 2.0, yaw_deg: 33.0 };
        let cloud = sample_lidar(&scene, &pose, &config).unwrap();
        assert_eq!(cloud.len(), 32);
        for p in cloud.points() {
            let planar = (p[0] as f64).hypot(p[1] as f64);
            assert!((planar - 2.0).abs() < 1e-5, "planar {planar}");
            assert!((p[2] as f64 + 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn rotating_the_rig_by_whole_azimuth_steps_remaps_ray_indices() {
        let config = SceneConfig {
            landmarks: 25,
            half_extent: 40.0,
            ..SceneConfig::default()
        };
        let scene = Scene::generate(3, config).unwrap();
        let lidar = LidarConfig {
            azimuth_steps: 90,
            elevation_steps: 5,
            elevation_min_deg: -40.0,
            elevation_max_deg: -10.0,
            max_range: 1000.0,
        };
        // All rays point down far enough to hit ground within range, so
        // both clouds are complete and index remapping is well defined.
        let base_pose = RigPose { x: 1.0, y: 2.0, z: 1.8, yaw_deg: 0.0 };
        let base = sample_lidar(&scene, &base_pose, &lidar).unwrap();
        let k = 7usize;
        let psi = k as f64 * 360.0 / lidar.azimuth_steps as f64;
        let rotated_pose = RigPose { yaw_deg: psi, ..base_pose };
        let rotated = sample_lidar(&scene, &rotated_pose, &lidar).unwrap();
        assert_eq!(base.len(), lidar.azimuth_steps * lidar.elevation_steps);
        assert_eq!(rotated.len(), base.len());
        let rot = RigPose { x: 0.0, y: 0.0, z: 0.0, yaw_deg: -psi }.rotation();
        for a in 0..lidar.azimuth_steps {
            for e in 0..lidar.elevation_steps {
                let got = rotated.points()[a * lidar.elevation_steps + e];
                let src = base.points()
                    [((a + k) % lidar.azimuth_steps) * lidar.elevation_steps + e];
                let expect = rot * Vector3::new(src[0] as f64, src[1] as f64, src[2] as f64);
                for (g, x) in got.iter().zip(expect.iter()) {
                    assert!((*g as f64 - x).abs() < 2e-4, "ray ({a},{e}): {g} vs {x}");
                }
            }
        }
    }

    #[test]
    fn ground_texture_is_smooth_and_bounded() {
        let config = SceneConfig {
            landmarks: 0,
            texture_amplitude: 0.3,
            texture_scale: 2.0,
            ..SceneConfig::default()
        };
        let scene = Scene::generate(11, config).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..200 {
            let x = -20.0 + i as f64 * 0.2;
            for j in 0..20 {
                let y = -2.0 + j as f64 * 0.2;
                let s = scene.ground_shade(x, y);
                assert_eq!(s, scene.ground_shade(x, y));
                assert!((0.2..=0.8).contains(&s), "shade {s}");
                let step = scene.ground_shade(x + 1e-4, y);
                assert!((s - step).abs() < 1e-3, "jump at ({x}, {y})");
                lo = lo.min(s);
                hi = hi.max(s);
            }
        }
        // The texture actually varies.
        assert!(hi - lo > 0.1, "range {}", hi - lo);
    }

    #[test]
    fn revisit_sets_pair_each_query_with_its_own_place() {
        let config = RevisitConfig {
            places: 30,
            grid_spacing: 5.0,
            translation_jitter: 1.2,
            yaw_range_deg: 360.0,
            rig_height: 1.0,
        };
        let set = make_revisit_set(42, &config).unwrap();
        assert_eq!(set, make_revisit_set(42, &config).unwrap());
        assert_eq!(set.database.len(), 30);
        assert_eq!(set.queries.len(), 30);
        for (i, query) in set.queries.iter().enumerate() {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for (j, db) in set.database.iter().enumerate() {
                let d = (query.x - db.x).hypot(query.y - db.y);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(best, i, "query {i} closest to place {best}");
            assert!(best_d <= config.translation_jitter + 1e-12);
        }
        for pair in set.database.windows(2) {
            let d = (pair[0].x - pair[1].x).hypot(pair[0].y - pair[1].y);
            assert!(d >= config.grid_spacing - 1e-9 || (pair[0].y - pair[1].y).abs() > 1.0);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_scene = SceneConfig {
            texture_amplitude: 0.7,
            ..SceneConfig::default()
        };
        assert!(matches!(
            Scene::generate(0, bad_scene),
            Err(SynthError::BadSceneConfig)
        ));
        let scene = flat_scene();
        let rig = small_rig(1);
        let bad_pose = RigPose { x: f64::NAN, y: 0.0, z: 1.0, yaw_deg: 0.0 };
        assert!(matches!(
            render_views(&scene, &rig, &bad_pose),
            Err(SynthError::BadPose)
        ));
        let bad_lidar = LidarConfig {
            azimuth_steps: 0,
            ..LidarConfig::default()
        };
        let pose = RigPose { x: 0.0, y: 0.0, z: 1.0, yaw_deg: 0.0 };
        assert!(matches!(
            sample_lidar(&scene, &pose, &bad_lidar),
            Err(SynthError::BadLidarConfig)
        ));
        let bad_revisit = RevisitConfig {
            translation_jitter: 4.0,
            grid_spacing: 6.0,
            ..RevisitConfig::default()
        };
        assert!(matches!(
            make_revisit_set(0, &bad_revisit),
            Err(SynthError::BadRevisitConfig)
        ));
    }
}
