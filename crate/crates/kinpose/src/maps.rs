//! Differentiable rendering of 2D landmarks into per-joint Gaussian
//! heat-maps and per-limb rotated-Gaussian affinity maps on an H x W
//! lattice.
//!
//! Landmarks arrive in normalized [0, 1] coordinates and are mapped to
//! lattice coordinates by `x * (W - 1)`, `y * (H - 1)`, so the corners of
//! the unit square sit on the corner pixels. All map formulas are evaluated
//! in lattice units:
//!
//! ```text
//! heat_j(u)     = exp(-0.5 * ||u - q_j||^2 / sigma^2)
//! affinity_l(u) = exp(-0.5 * (u'_x / sigma_x)^2 - 0.5 * (u'_y / sigma_y)^2)
//! ```
//!
//! where for a limb with endpoints A, B: the midpoint is `mu = (A + B) / 2`,
//! the slope angle comes from `B - A`, `u' = R(-theta) * (u - mu)` aligns
//! the limb with the local x-axis, and `sigma_x = max(alpha * len, 0.5)`.
//! A zero-length limb keeps `theta = 0` and the floored `sigma_x`, so the
//! map degrades continuously to an axis-aligned Gaussian.
//!
//! Derivatives with respect to every landmark coordinate are available as
//! Jacobian-vector and vector-Jacobian products ([`maps_jvp`], [`maps_vjp`]),
//! which avoids materializing the `H*W*(J+L) x 2J` Jacobian.

use nalgebra::Vector2;
use thiserror::Error;

use crate::skeleton::{KinematicTree, Landmarks2D};

/// Smallest allowed `sigma_x` for a limb, in lattice cells.
pub const SIGMA_X_FLOOR: f64 = 0.5;

const DEGENERATE_LIMB_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("{name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("lattice must be at least 2x2, got {height}x{width}")]
    LatticeTooSmall { height: usize, width: usize },
    #[error("limb {limb} references joint {joint}, but only {joints} landmarks given")]
    LimbOutOfRange {
        limb: usize,
        joint: usize,
        joints: usize,
    },
    #[error("channel length {got} does not match lattice {expected}")]
    ChannelSize { got: usize, expected: usize },
    #[error("tangent/cotangent joint count {got}, expected {expected}")]
    SeedSize { got: usize, expected: usize },
    #[error("map contains a negative value")]
    NegativeValue,
    #[error("map is all zero")]
    AllZero,
}

/// Render lattice dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub height: usize,
    pub width: usize,
}

impl Lattice {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn check(&self) -> Result<(), MapError> {
        if self.height < 2 || self.width < 2 {
            return Err(MapError::LatticeTooSmall {
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }

    /// Normalized landmark to lattice coordinates.
    pub fn to_lattice(&self, p: Vector2<f64>) -> (f64, f64) {
        (
            p.x * (self.width - 1) as f64,
            p.y * (self.height - 1) as f64,
        )
    }

    /// Lattice coordinates back to normalized.
    pub fn to_normalized(&self, x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x / (self.width - 1) as f64, y / (self.height - 1) as f64)
    }
}

/// Rendering parameters for both map families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub lattice: Lattice,
    /// Heat-map std-dev, lattice cells.
    pub sigma: f64,
    /// Limb half-width std-dev, lattice cells.
    pub sigma_y: f64,
    /// Limb-length scale: `sigma_x = max(alpha * len, SIGMA_X_FLOOR)`.
    pub alpha: f64,
    /// Optional truncation radius in units of sigma. `None` renders dense
    /// (exact); around 6 sigma the truncation error stays below 1e-6.
    pub window_sigmas: Option<f64>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            lattice: Lattice::new(56, 56),
            sigma: 2.0,
            sigma_y: 1.5,
            alpha: 0.5,
            window_sigmas: None,
        }
    }
}

impl MapConfig {
    fn check(&self) -> Result<(), MapError> {
        self.lattice.check()?;
        for (name, value) in [
            ("sigma", self.sigma),
            ("sigma_y", self.sigma_y),
            ("alpha", self.alpha),
        ] {
            if value.is_nan() || value <= 0.0 {
                return Err(MapError::NonPositiveParameter { name, value });
            }
        }
        if let Some(w) = self.window_sigmas {
            if w.is_nan() || w <= 0.0 {
                return Err(MapError::NonPositiveParameter {
                    name: "window_sigmas",
                    value: w,
                });
            }
        }
        Ok(())
    }
}

/// A stack of same-sized channels, each row-major `height * width`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStack {
    pub lattice: Lattice,
    pub channels: Vec<Vec<f64>>,
}

impl MapStack {
    pub fn zeros(lattice: Lattice, channels: usize) -> Self {
        Self {
            lattice,
            channels: vec![vec![0.0; lattice.pixels()]; channels],
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn at(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.channels[channel][y * self.lattice.width + x]
    }

    /// Lattice coordinates of the maximum pixel of a channel.
    pub fn argmax(&self, channel: usize) -> (usize, usize) {
        let mut best = (0usize, 0usize);
        let mut val = f64::NEG_INFINITY;
        for y in 0..self.lattice.height {
            for x in 0..self.lattice.width {
                let v = self.at(channel, y, x);
                if v > val {
                    val = v;
                    best = (x, y);
                }
            }
        }
        best
    }
}

/// Heat and affinity channels rendered for one set of landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMaps {
    pub heat: MapStack,
    pub affinity: MapStack,
    pub config: MapConfig,
}

impl SpatialMaps {
    /// All channels, heat first, then affinity.
    pub fn all_channels(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.heat
            .channels
            .iter()
            .chain(self.affinity.channels.iter())
    }
}

/// One Gaussian heat-map per landmark, peak value 1 at the landmark.
pub fn render_heatmaps(
    landmarks: &Landmarks2D,
    lattice: Lattice,
    sigma: f64,
    window_sigmas: Option<f64>,
) -> Result<MapStack, MapError> {
    lattice.check()?;
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(MapError::NonPositiveParameter {
            name: "sigma",
            value: sigma,
        });
    }
    let mut stack = MapStack::zeros(lattice, landmarks.joint_count());
    let inv_two_sigma2 = 0.5 / (sigma * sigma);
    for (j, &p) in landmarks.points.iter().enumerate() {
        let (qx, qy) = lattice.to_lattice(p);
        let (x_range, y_range) = match window_sigmas {
            Some(r) => (
                clamp_range(qx - r * sigma, qx + r * sigma, lattice.width),
                clamp_range(qy - r * sigma, qy + r * sigma, lattice.height),
            ),
            None => (0..lattice.width, 0..lattice.height),
        };
        let channel = &mut stack.channels[j];
        for y in y_range {
            let dy = y as f64 - qy;
            for x in x_range.clone() {
                let dx = x as f64 - qx;
                channel[y * lattice.width + x] = (-(dx * dx + dy * dy) * inv_two_sigma2).exp();
            }
        }
    }
    Ok(stack)
}

/// Per-limb geometry in lattice coordinates, shared by the renderer and
/// its derivative products.
#[derive(Debug, Clone, Copy)]
struct LimbGeometry {
    mu_x: f64,
    mu_y: f64,
    cos_t: f64,
    sin_t: f64,
    sigma_x: f64,
    sigma_y: f64,
    /// False for a zero-length limb: theta and sigma_x are pinned.
    geometric: bool,
    /// False when sigma_x sits at the floor (its length derivative is 0).
    sigma_x_active: bool,
    alpha: f64,
    len: f64,
}

impl LimbGeometry {
    fn new(a: (f64, f64), b: (f64, f64), sigma_y: f64, alpha: f64) -> Self {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = (dx * dx + dy * dy).sqrt();
        let geometric = len > DEGENERATE_LIMB_TOL;
        let (cos_t, sin_t) = if geometric {
            (dx / len, dy / len)
        } else {
            (1.0, 0.0)
        };
        let raw_sigma_x = alpha * len;
        let sigma_x_active = geometric && raw_sigma_x > SIGMA_X_FLOOR;
        let sigma_x = if sigma_x_active {
            raw_sigma_x
        } else {
            SIGMA_X_FLOOR
        };
        Self {
            mu_x: (a.0 + b.0) / 2.0,
            mu_y: (a.1 + b.1) / 2.0,
            cos_t,
            sin_t,
            sigma_x,
            sigma_y,
            geometric,
            sigma_x_active,
            alpha,
            len,
        }
    }

    fn value(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mu_x;
        let dy = py - self.mu_y;
        let ux = self.cos_t * dx + self.sin_t * dy;
        let uy = -self.sin_t * dx + self.cos_t * dy;
        let ax = ux / self.sigma_x;
        let ay = uy / self.sigma_y;
        (-0.5 * ax * ax - 0.5 * ay * ay).exp()
    }

    /// Map value and its gradient with respect to the endpoint lattice
    /// coordinates `[Ax, Ay, Bx, By]`.
    fn value_and_grad(&self, px: f64, py: f64) -> (f64, [f64; 4]) {
        let dx = px - self.mu_x;
        let dy = py - self.mu_y;
        let (c, s) = (self.cos_t, self.sin_t);
        let ux = c * dx + s * dy;
        let uy = -s * dx + c * dy;
        let a = ux / self.sigma_x;
        let b = uy / self.sigma_y;
        let f = (-0.5 * a * a - 0.5 * b * b).exp();

        // Partials of the limb frame wrt [Ax, Ay, Bx, By].
        let (d_len, d_cos, d_sin) = if self.geometric {
            let inv = 1.0 / self.len;
            (
                [-c, -s, c, s],
                [-s * s * inv, c * s * inv, s * s * inv, -c * s * inv],
                [c * s * inv, -c * c * inv, -c * s * inv, c * c * inv],
            )
        } else {
            ([0.0; 4], [0.0; 4], [0.0; 4])
        };
        let d_mu = 0.5;

        let mut grad = [0.0; 4];
        for v in 0..4 {
            // d(u - mu) terms: only mu moves with the endpoints.
            let ddx = if v % 2 == 0 { -d_mu } else { 0.0 };
            let ddy = if v % 2 == 1 { -d_mu } else { 0.0 };
            let dux = d_cos[v] * dx + d_sin[v] * dy + c * ddx + s * ddy;
            let duy = -d_sin[v] * dx + d_cos[v] * dy - s * ddx + c * ddy;
            let d_sigma_x = if self.sigma_x_active {
                self.alpha * d_len[v]
            } else {
                0.0
            };
            let da = dux / self.sigma_x - a * d_sigma_x / self.sigma_x;
            let db = duy / self.sigma_y;
            grad[v] = -f * (a * da + b * db);
        }
        (f, grad)
    }

    /// Conservative axis-aligned bounding box of the `r`-sigma support.
    fn window(&self, r: f64, lattice: Lattice) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let hx = r * (self.sigma_x * self.cos_t.abs() + self.sigma_y * self.sin_t.abs());
        let hy = r * (self.sigma_x * self.sin_t.abs() + self.sigma_y * self.cos_t.abs());
        (
            clamp_range(self.mu_x - hx, self.mu_x + hx, lattice.width),
            clamp_range(self.mu_y - hy, self.mu_y + hy, lattice.height),
        )
    }
}

fn clamp_range(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let lo = lo.ceil().max(0.0) as usize;
    let hi = (hi.floor() as isize).min(n as isize - 1);
    if hi < lo as isize {
        0..0
    } else {
        lo..(hi as usize + 1)
    }
}

fn check_limbs(limbs: &[(usize, usize)], joints: usize) -> Result<(), MapError> {
    for (l, &(a, b)) in limbs.iter().enumerate() {
        for joint in [a, b] {
            if joint >= joints {
                return Err(MapError::LimbOutOfRange {
                    limb: l,
                    joint,
                    joints,
                });
            }
        }
    }
    Ok(())
}

/// One rotated anisotropic Gaussian per limb, peak value 1 at the midpoint.
pub fn render_affinity(
    landmarks: &Landmarks2D,
    limbs: &[(usize, usize)],
    lattice: Lattice,
    sigma_y: f64,
    alpha: f64,
    window_sigmas: Option<f64>,
) -> Result<MapStack, MapError> {
    lattice.check()?;
    if sigma_y.is_nan() || sigma_y <= 0.0 {
        return Err(MapError::NonPositiveParameter {
            name: "sigma_y",
            value: sigma_y,
        });
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(MapError::NonPositiveParameter {
            name: "alpha",
            value: alpha,
        });
    }
    check_limbs(limbs, landmarks.joint_count())?;

    let mut stack = MapStack::zeros(lattice, limbs.len());
    for (l, &(ja, jb)) in limbs.iter().enumerate() {
        let geom = LimbGeometry::new(
            lattice.to_lattice(landmarks.points[ja]),
            lattice.to_lattice(landmarks.points[jb]),
            sigma_y,
            alpha,
        );
        let (x_range, y_range) = match window_sigmas {
            Some(r) => geom.window(r, lattice),
            None => (0..lattice.width, 0..lattice.height),
        };
        let channel = &mut stack.channels[l];
        for y in y_range {
            for x in x_range.clone() {
                channel[y * lattice.width + x] = geom.value(x as f64, y as f64);
            }
        }
    }
    Ok(stack)
}

/// Renders both map families for a tree's limb list.
pub fn render_spatial_maps(
    landmarks: &Landmarks2D,
    tree: &KinematicTree,
    config: &MapConfig,
) -> Result<SpatialMaps, MapError> {
    config.check()?;
    let heat = render_heatmaps(
        landmarks,
        config.lattice,
        config.sigma,
        config.window_sigmas,
    )?;
    let affinity = render_affinity(
        landmarks,
        tree.limbs(),
        config.lattice,
        config.sigma_y,
        config.alpha,
        config.window_sigmas,
    )?;
    Ok(SpatialMaps {
        heat,
        affinity,
        config: *config,
    })
}

/// Directional derivative of every map pixel along a landmark tangent
/// (one 2-vector per joint, normalized coordinates). Returns dense heat
/// and affinity tangent stacks.
pub fn maps_jvp(
    landmarks: &Landmarks2D,
    limbs: &[(usize, usize)],
    config: &MapConfig,
    tangent: &[Vector2<f64>],
) -> Result<(MapStack, MapStack), MapError> {
    config.check()?;
    check_limbs(limbs, landmarks.joint_count())?;
    if tangent.len() != landmarks.joint_count() {
        return Err(MapError::SeedSize {
            got: tangent.len(),
            expected: landmarks.joint_count(),
        });
    }
    let lattice = config.lattice;
    let (sx, sy) = ((lattice.width - 1) as f64, (lattice.height - 1) as f64);
    let inv_sigma2 = 1.0 / (config.sigma * config.sigma);

    let mut heat_dot = MapStack::zeros(lattice, landmarks.joint_count());
    for (j, &p) in landmarks.points.iter().enumerate() {
        let (qx, qy) = lattice.to_lattice(p);
        let (tx, ty) = (tangent[j].x * sx, tangent[j].y * sy);
        let channel = &mut heat_dot.channels[j];
        for y in 0..lattice.height {
            let dy = y as f64 - qy;
            for x in 0..lattice.width {
                let dx = x as f64 - qx;
                let f = (-0.5 * (dx * dx + dy * dy) * inv_sigma2).exp();
                channel[y * lattice.width + x] = f * inv_sigma2 * (dx * tx + dy * ty);
            }
        }
    }

    let mut affinity_dot = MapStack::zeros(lattice, limbs.len());
    for (l, &(ja, jb)) in limbs.iter().enumerate() {
        let geom = LimbGeometry::new(
            lattice.to_lattice(landmarks.points[ja]),
            lattice.to_lattice(landmarks.points[jb]),
            config.sigma_y,
            config.alpha,
        );
        let seed = [
            tangent[ja].x * sx,
            tangent[ja].y * sy,
            tangent[jb].x * sx,
            tangent[jb].y * sy,
        ];
        let channel = &mut affinity_dot.channels[l];
        for y in 0..lattice.height {
            for x in 0..lattice.width {
                let (_, grad) = geom.value_and_grad(x as f64, y as f64);
                channel[y * lattice.width + x] =
                    grad.iter().zip(seed.iter()).map(|(g, s)| g * s).sum();
            }
        }
    }
    Ok((heat_dot, affinity_dot))
}

/// Pullback of pixel cotangents to landmark coordinates: returns one
/// 2-vector per joint (normalized coordinates). Either cotangent stack
/// may be omitted.
pub fn maps_vjp(
    landmarks: &Landmarks2D,
    limbs: &[(usize, usize)],
    config: &MapConfig,
    heat_cotangent: Option<&MapStack>,
    affinity_cotangent: Option<&MapStack>,
) -> Result<Vec<Vector2<f64>>, MapError> {
    config.check()?;
    check_limbs(limbs, landmarks.joint_count())?;
    let lattice = config.lattice;
    let (sx, sy) = ((lattice.width - 1) as f64, (lattice.height - 1) as f64);
    let inv_sigma2 = 1.0 / (config.sigma * config.sigma);
    let mut grad = vec![Vector2::zeros(); landmarks.joint_count()];

    if let Some(cot) = heat_cotangent {
        if cot.channel_count() != landmarks.joint_count() || cot.lattice != lattice {
            return Err(MapError::SeedSize {
                got: cot.channel_count(),
                expected: landmarks.joint_count(),
            });
        }
        for (j, &p) in landmarks.points.iter().enumerate() {
            let (qx, qy) = lattice.to_lattice(p);
            let channel = &cot.channels[j];
            let (mut gx, mut gy) = (0.0, 0.0);
            for y in 0..lattice.height {
                let dy = y as f64 - qy;
                for x in 0..lattice.width {
                    let dx = x as f64 - qx;
                    let f = (-0.5 * (dx * dx + dy * dy) * inv_sigma2).exp();
                    let w = channel[y * lattice.width + x] * f * inv_sigma2;
                    gx += w * dx;
                    gy += w * dy;
                }
            }
            grad[j] += Vector2::new(gx * sx, gy * sy);
        }
    }

    if let Some(cot) = affinity_cotangent {
        if cot.channel_count() != limbs.len() || cot.lattice != lattice {
            return Err(MapError::SeedSize {
                got: cot.channel_count(),
                expected: limbs.len(),
            });
        }
        for (l, &(ja, jb)) in limbs.iter().enumerate() {
            let geom = LimbGeometry::new(
                lattice.to_lattice(landmarks.points[ja]),
                lattice.to_lattice(landmarks.points[jb]),
                config.sigma_y,
                config.alpha,
            );
            let channel = &cot.channels[l];
            let mut acc = [0.0; 4];
            for y in 0..lattice.height {
                for x in 0..lattice.width {
                    let w = channel[y * lattice.width + x];
                    if w == 0.0 {
                        continue;
                    }
                    let (_, g) = geom.value_and_grad(x as f64, y as f64);
                    for v in 0..4 {
                        acc[v] += w * g[v];
                    }
                }
            }
            grad[ja] += Vector2::new(acc[0] * sx, acc[1] * sy);
            grad[jb] += Vector2::new(acc[2] * sx, acc[3] * sy);
        }
    }
    Ok(grad)
}

/// Intensity-weighted centroid of a nonnegative map, in normalized
/// coordinates.
pub fn soft_argmax(channel: &[f64], lattice: Lattice) -> Result<Vector2<f64>, MapError> {
    lattice.check()?;
    if channel.len() != lattice.pixels() {
        return Err(MapError::ChannelSize {
            got: channel.len(),
            expected: lattice.pixels(),
        });
    }
    let mut total = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for y in 0..lattice.height {
        for x in 0..lattice.width {
            let v = channel[y * lattice.width + x];
            if v < 0.0 {
                return Err(MapError::NegativeValue);
            }
            total += v;
            cx += v * x as f64;
            cy += v * y as f64;
        }
    }
    if total == 0.0 {
        return Err(MapError::AllZero);
    }
    Ok(lattice.to_normalized(cx / total, cy / total))
}
