//! Colored pose maps: one uniquely colored disc per joint over gray bone lines.

use std::path::Path;

use nalgebra::{Point3, Vector2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::io;
use crate::skeleton::{JointPositions3D, Skeleton};

pub type Rgb = [u8; 3];

pub const MIN_COLOR_DISTANCE: f64 = 48.0;
pub const LINE_COLOR: Rgb = [128, 128, 128];
pub const BACKGROUND_COLOR: Rgb = [0, 0, 0];
pub const DEFAULT_COLOR_THRESHOLD: f64 = 40.0;
pub const DEFAULT_MIN_PIXELS: usize = 4;
const LATTICE_STEP: usize = 51;

pub fn color_distance(a: Rgb, b: Rgb) -> f64 {
    let d: i32 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (*x as i32 - *y as i32).pow(2))
        .sum();
    (d as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorPalette {
    pub line: Rgb,
    pub background: Rgb,
    pub joints: Vec<Rgb>,
}

impl ColorPalette {
    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.joints.iter().enumerate() {
            for reserved in [self.line, self.background] {
                if color_distance(*c, reserved) < MIN_COLOR_DISTANCE {
                    return Err(Error::invalid(
                        "palette",
                        format!("joint color {i} is within {MIN_COLOR_DISTANCE} of a reserved color"),
                    ));
                }
            }
            for (j, d) in self.joints[..i].iter().enumerate() {
                if color_distance(*c, *d) < MIN_COLOR_DISTANCE {
                    return Err(Error::invalid(
                        "palette",
                        format!("joint colors {j} and {i} closer than {MIN_COLOR_DISTANCE}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.joints.len() {
            for j in 0..i {
                best = best.min(color_distance(self.joints[i], self.joints[j]));
            }
        }
        best
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: ColorPalette = io::read_json(path)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

fn palette_candidates() -> Vec<Rgb> {
    let levels: Vec<u8> = (0..=255).step_by(LATTICE_STEP).map(|v| v as u8).collect();
    let mut out = Vec::new();
    for &r in &levels {
        for &g in &levels {
            for &b in &levels {
                let c = [r, g, b];
                if color_distance(c, LINE_COLOR) >= MIN_COLOR_DISTANCE
                    && color_distance(c, BACKGROUND_COLOR) >= MIN_COLOR_DISTANCE
                {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// Largest joint count `make_palette` can serve.
pub fn palette_capacity() -> usize {
    palette_candidates().len()
}

/// Deterministic palette: seeded shuffle of an RGB lattice followed by
/// greedy farthest-point ordering, so small palettes get maximally distinct
/// colors and any prefix keeps lattice spacing.
pub fn make_palette(joint_count: usize, seed: u64) -> Result<ColorPalette> {
    let mut candidates = palette_candidates();
    let capacity = candidates.len().min(256);
    if joint_count == 0 || joint_count > capacity {
        return Err(Error::Capacity {
            requested: joint_count,
            capacity,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);

    let mut chosen = Vec::with_capacity(joint_count);
    let mut nearest: Vec<f64> = candidates
        .iter()
        .map(|c| color_distance(*c, LINE_COLOR).min(color_distance(*c, BACKGROUND_COLOR)))
        .collect();
    let mut used = vec![false; candidates.len()];
    for _ in 0..joint_count {
        let mut best = None;
        for (i, d) in nearest.iter().enumerate() {
            if !used[i] && best.is_none_or(|b: usize| *d > nearest[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("capacity checked");
        used[pick] = true;
        chosen.push(candidates[pick]);
        for (i, c) in candidates.iter().enumerate() {
            nearest[i] = nearest[i].min(color_distance(*c, candidates[pick]));
        }
    }
    let palette = ColorPalette {
        line: LINE_COLOR,
        background: BACKGROUND_COLOR,
        joints: chosen,
    };
    palette.validate()?;
    Ok(palette)
}

/// An RGB8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoseMap {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Rgb>,
    pub view: usize,
    pub frame: usize,
}

impl PoseMap {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; (width * height) as usize],
            view: 0,
            frame: 0,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[(y * self.width + x) as usize]
    }

    fn set(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height {
            let idx = (y as u32 * self.width + x as u32) as usize;
            self.pixels[idx] = c;
        }
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
            let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
            writer.write_image_data(&flat).map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_png_bytes()?)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = png::Decoder::new(std::io::BufReader::new(file));
        let mut reader = decoder.read_info().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Png(format!("{}: expected 8-bit channels", path.display())));
        }
        let channels = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            other => return Err(Error::Png(format!("{}: unsupported color type {other:?}", path.display()))),
        };
        let pixels = buf[..info.buffer_size()]
            .chunks_exact(channels)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Self {
            width: info.width,
            height: info.height,
            pixels,
            view: 0,
            frame: 0,
        })
    }
}

/// Marker radius in pixels for an image of the given height.
pub fn marker_radius(height: u32) -> f64 {
    (0.012 * height as f64).round().max(2.0)
}

#[derive(Debug, Clone, Copy)]
pub struct RenderStyle {
    pub marker_radius: f64,
    pub line_half_width: f64,
}

impl RenderStyle {
    pub fn for_height(height: u32) -> Self {
        Self {
            marker_radius: marker_radius(height),
            line_half_width: 0.75,
        }
    }
}

pub fn render_posemap(
    skeleton: &Skeleton,
    positions: &JointPositions3D,
    camera: &Camera,
    palette: &ColorPalette,
) -> Result<PoseMap> {
    render_posemap_with(skeleton, positions, camera, palette, RenderStyle::for_height(camera.height))
}

/// Lines first, then markers far-to-near so nearer joints overdraw.
pub fn render_posemap_with(
    skeleton: &Skeleton,
    positions: &JointPositions3D,
    camera: &Camera,
    palette: &ColorPalette,
    style: RenderStyle,
) -> Result<PoseMap> {
    let n = skeleton.joint_count();
    if positions.len() != n {
        return Err(Error::Structural(format!(
            "{} positions for a {n}-joint skeleton",
            positions.len()
        )));
    }
    if palette.joints.len() < n {
        return Err(Error::Structural(format!(
            "palette has {} colors for {n} joints",
            palette.joints.len()
        )));
    }
    let mut map = PoseMap::filled(camera.width, camera.height, palette.background);
    let proj: Vec<_> = positions
        .positions
        .iter()
        .map(|p| camera.project(&Point3::from(*p)))
        .collect();
    let visible = |j: usize| positions.valid[j] && proj[j].in_front();

    for (p, c) in skeleton.bones() {
        if visible(p) && visible(c) {
            draw_segment(&mut map, proj[p].pixel, proj[c].pixel, style.line_half_width, palette.line);
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|j| visible(*j)).collect();
    // Stable sort keeps joint order for equal depths.
    order.sort_by(|a, b| proj[*b].depth.total_cmp(&proj[*a].depth));
    for j in order {
        draw_disc(&mut map, proj[j].pixel, style.marker_radius, palette.joints[j]);
    }
    Ok(map)
}

/// Fills pixels whose centers lie within `radius` of `center`.
pub fn draw_disc(map: &mut PoseMap, center: Vector2<f64>, radius: f64, color: Rgb) {
    let (x0, x1) = ((center.x - radius).floor() as i64, (center.x + radius).ceil() as i64);
    let (y0, y1) = ((center.y - radius).floor() as i64, (center.y + radius).ceil() as i64);
    let r2 = radius * radius;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - center.x;
            let dy = y as f64 + 0.5 - center.y;
            if dx * dx + dy * dy <= r2 {
                map.set(x, y, color);
            }
        }
    }
}

/// Fills pixels whose centers lie within `half_width` of the segment `a–b`.
pub fn draw_segment(map: &mut PoseMap, a: Vector2<f64>, b: Vector2<f64>, half_width: f64, color: Rgb) {
    let lo = a.inf(&b);
    let hi = a.sup(&b);
    let x0 = ((lo.x - half_width).floor() as i64).max(0);
    let x1 = ((hi.x + half_width).ceil() as i64).min(map.width as i64 - 1);
    let y0 = ((lo.y - half_width).floor() as i64).max(0);
    let y1 = ((hi.y + half_width).ceil() as i64).min(map.height as i64 - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            if point_segment_distance(p, a, b) <= half_width {
                map.set(x, y, color);
            }
        }
    }
}

pub fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// 2D joint estimates decoded from a pose map.
#[derive(Debug, Clone, PartialEq)]
pub struct Joints2D {
    pub positions: Vec<Vector2<f64>>,
    pub valid: Vec<bool>,
    /// Number of pixels in each joint's final cluster.
    pub support: Vec<usize>,
}

impl Joints2D {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeParams {
    pub color_threshold: f64,
    pub min_pixels: usize,
    /// Cluster refinement keeps pixels within this many marker radii of the center.
    pub cluster_radius_factor: f64,
    pub max_iterations: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            color_threshold: DEFAULT_COLOR_THRESHOLD,
            min_pixels: DEFAULT_MIN_PIXELS,
            cluster_radius_factor: 2.5,
            max_iterations: 20,
        }
    }
}

pub fn decode_posemap(map: &PoseMap, palette: &ColorPalette) -> Joints2D {
    decode_posemap_with(map, palette, DecodeParams::default())
}

/// Per-joint color clustering.
///
/// Pixels within `color_threshold` of a joint color are assigned to the
/// nearest such color with weight `1 - distance / threshold`. Each joint's
/// center starts at the weighted centroid of its pixels and is refined by
/// single-cluster Lloyd iterations restricted to a window around the current
/// center, which drops stray pixels of the same color.
pub fn decode_posemap_with(map: &PoseMap, palette: &ColorPalette, params: DecodeParams) -> Joints2D {
    let n = palette.joints.len();
    let mut members: Vec<Vec<(Vector2<f64>, f64)>> = vec![Vec::new(); n];
    let tau = params.color_threshold;
    for y in 0..map.height {
        for x in 0..map.width {
            let c = map.get(x, y);
            if c == palette.background || c == palette.line {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (j, jc) in palette.joints.iter().enumerate() {
                let d = color_distance(c, *jc);
                if d <= tau && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            if let Some((j, d)) = best {
                let w = if tau > 0.0 { 1.0 - d / tau } else { 1.0 };
                members[j].push((Vector2::new(x as f64 + 0.5, y as f64 + 0.5), w.max(1e-3)));
            }
        }
    }

    let window = params.cluster_radius_factor * marker_radius(map.height);
    let mut positions = vec![Vector2::zeros(); n];
    let mut valid = vec![false; n];
    let mut support = vec![0; n];
    for j in 0..n {
        let pix = &members[j];
        if pix.len() < params.min_pixels {
            continue;
        }
        let mut center = weighted_mean(pix.iter().map(|(p, w)| (*p, *w)));
        let mut count = pix.len();
        for _ in 0..params.max_iterations {
            let near = pix.iter().filter(|(p, _)| (p - center).norm() <= window);
            count = near.clone().count();
            if count == 0 {
                break;
            }
            let next = weighted_mean(near.map(|(p, w)| (*p, *w)));
            let moved = (next - center).norm();
            center = next;
            if moved < 1e-9 {
                break;
            }
        }
        if count >= params.min_pixels {
            center.x = center.x.clamp(0.0, map.width as f64 - 1e-9);
            center.y = center.y.clamp(0.0, map.height as f64 - 1e-9);
            positions[j] = center;
            valid[j] = true;
            support[j] = count;
        }
    }
    Joints2D {
        positions,
        valid,
        support,
    }
}

fn weighted_mean(items: impl Iterator<Item = (Vector2<f64>, f64)>) -> Vector2<f64> {
    let (mut acc, mut wsum) = (Vector2::zeros(), 0.0);
    for (p, w) in items {
        acc += p * w;
        wsum += w;
    }
    acc / wsum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::canonical_rig;
    use crate::skeleton::JointDef;
    use nalgebra::Vector3;

    fn two_joint() -> Skeleton {
        Skeleton::new(vec![
            JointDef::new("a", None, Vector3::zeros()),
            JointDef::new("b", Some(0), Vector3::new(0.0, 0.6, 0.3)),
        ])
        .unwrap()
    }

    #[test]
    fn palette_separation_and_determinism() {
        let p2 = make_palette(2, 7).unwrap();
        assert!(color_distance(p2.joints[0], p2.joints[1]) >= MIN_COLOR_DISTANCE);
        assert_eq!(make_palette(2, 7).unwrap(), p2);

        let p64 = make_palette(64, 3).unwrap();
        // Exhaustive pairwise check, independent of validate().
        for i in 0..64 {
            for j in 0..64 {
                if i != j {
                    assert!(color_distance(p64.joints[i], p64.joints[j]) >= 48.0);
                }
            }
            assert!(color_distance(p64.joints[i], p64.line) >= 48.0);
            assert!(color_distance(p64.joints[i], p64.background) >= 48.0);
        }
        assert_ne!(make_palette(64, 4).unwrap(), p64);
    }

    #[test]
    fn palette_capacity_error() {
        let cap = palette_capacity();
        assert!(cap >= 150, "capacity {cap}");
        assert!(make_palette(cap, 0).is_ok());
        assert!(matches!(make_palette(cap + 1, 0), Err(Error::Capacity { .. })));
        assert!(matches!(make_palette(0, 0), Err(Error::Capacity { .. })));
    }

    #[test]
    fn single_joint_renders_centered_disc() {
        let s = Skeleton::new(vec![JointDef::new("a", None, Vector3::zeros())]).unwrap();
        let cam = &canonical_rig(3.0, 128).unwrap()[0];
        let pal = make_palette(1, 0).unwrap();
        let map = render_posemap(&s, &s.rest_positions(), cam, &pal).unwrap();
        let r = marker_radius(128);
        let mut count = 0;
        for y in 0..128 {
            for x in 0..128 {
                let px = map.get(x, y);
                let inside = ((x as f64 + 0.5 - 64.0).powi(2) + (y as f64 + 0.5 - 64.0).powi(2)).sqrt() <= r;
                assert_eq!(px == pal.joints[0], inside);
                count += inside as usize;
            }
        }
        assert!(count > 0);
    }

    #[test]
    fn line_pixels_lie_on_segment() {
        let s = two_joint();
        let cam = &canonical_rig(3.0, 256).unwrap()[0];
        let pal = make_palette(2, 0).unwrap();
        let pos = s.rest_positions();
        let map = render_posemap(&s, &pos, cam, &pal).unwrap();
        let a = cam.project(&Point3::from(pos.positions[0])).pixel;
        let b = cam.project(&Point3::from(pos.positions[1])).pixel;
        let mut lines = 0;
        for y in 0..256 {
            for x in 0..256 {
                if map.get(x, y) == pal.line {
                    lines += 1;
                    // Line equation check: distance to the infinite line, then extent.
                    let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let dir = (b - a).normalize();
                    let normal = Vector2::new(-dir.y, dir.x);
                    assert!((p - a).dot(&normal).abs() <= 1.0);
                    let t = (p - a).dot(&dir);
                    assert!(t >= -1.0 && t <= (b - a).norm() + 1.0);
                }
            }
        }
        assert!(lines > 10);
    }

    #[test]
    fn nearer_marker_overdraws() {
        // Two joints on the optical axis of view 0 (camera on +X).
        let s = Skeleton::new(vec![
            JointDef::new("far", None, Vector3::zeros()),
            JointDef::new("near", Some(0), Vector3::new(0.5, 0.0, 0.0)),
        ])
        .unwrap();
        let cam = &canonical_rig(3.0, 256).unwrap()[0];
        let pal = make_palette(2, 0).unwrap();
        let map = render_posemap(&s, &s.rest_positions(), cam, &pal).unwrap();
        assert!(map.pixels.contains(&pal.joints[1]));
        assert!(!map.pixels.contains(&pal.joints[0]));

        let joints = decode_posemap(&map, &pal);
        assert!(!joints.valid[0]);
        assert!(joints.valid[1]);
        assert!((joints.positions[1] - Vector2::new(128.0, 128.0)).norm() < 0.5);
    }

    #[test]
    fn render_decode_round_trip_subpixel() {
        let pal = make_palette(3, 1).unwrap();
        let centers = [
            Vector2::new(100.0, 50.0),
            Vector2::new(40.3, 170.8),
            Vector2::new(201.77, 120.25),
        ];
        let mut map = PoseMap::filled(256, 256, pal.background);
        for (c, col) in centers.iter().zip(&pal.joints) {
            draw_disc(&mut map, *c, marker_radius(256), *col);
        }
        let d = decode_posemap(&map, &pal);
        for (j, c) in centers.iter().enumerate() {
            assert!(d.valid[j]);
            assert!((d.positions[j] - c).norm() < 0.5, "{j}: {:?} vs {c:?}", d.positions[j]);
        }
    }

    #[test]
    fn blank_image_has_no_joints() {
        let pal = make_palette(5, 1).unwrap();
        let d = decode_posemap(&PoseMap::filled(64, 64, pal.background), &pal);
        assert!(d.valid.iter().all(|v| !v));
    }

    #[test]
    fn tolerates_color_noise_within_threshold() {
        let pal = make_palette(2, 2).unwrap();
        let mut map = PoseMap::filled(128, 128, pal.background);
        draw_disc(&mut map, Vector2::new(60.0, 60.0), 4.0, pal.joints[0]);
        for (i, px) in map.pixels.iter_mut().enumerate() {
            if *px == pal.joints[0] {
                let k = (i % 7) as u8 * 3;
                *px = [px[0].saturating_sub(k), px[1].saturating_add(k), px[2]];
            }
        }
        // A stray pixel of the same color far away must not drag the center.
        map.pixels[5] = pal.joints[0];
        let d = decode_posemap(&map, &pal);
        assert!(d.valid[0]);
        assert!((d.positions[0] - Vector2::new(60.0, 60.0)).norm() < 0.5);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = two_joint();
        let cam = &canonical_rig(3.0, 64).unwrap()[1];
        let pal = make_palette(2, 0).unwrap();
        let map = render_posemap(&s, &s.rest_positions(), cam, &pal).unwrap();
        let path = dir.path().join("m.png");
        map.save_png(&path).unwrap();
        let back = PoseMap::load_png(&path).unwrap();
        assert_eq!(back.pixels, map.pixels);

        let ppath = dir.path().join("palette.json");
        pal.save(&ppath).unwrap();
        assert_eq!(ColorPalette::load(&ppath).unwrap(), pal);
    }

    #[test]
    fn radius_rule() {
        assert_eq!(marker_radius(512), 6.0);
        assert_eq!(marker_radius(480), 6.0);
        assert_eq!(marker_radius(32), 2.0);
    }
}
