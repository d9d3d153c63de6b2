//! Multi-view lifting of 2D joints to 3D.
//!
//! Each joint is initialized by linear (DLT) triangulation and the whole
//! frame is then refined with Levenberg-Marquardt on
//!
//! ```text
//! E = Σ_v Σ_j w_vj ‖π(C_v, P_j) − p_vj‖² + λ Σ_bones s² (‖P_parent − P_child‖ − L)²
//! ```
//!
//! where `s` converts model units to pixels so that λ is resolution-free.

use nalgebra::{DMatrix, DVector, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::posemap::Joints2D;
use crate::skeleton::{JointPositions3D, Skeleton};

pub const DEFAULT_LAMBDA_BONE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub relative_decrease_tol: f64,
    pub gradient_tol: f64,
    pub initial_damping_factor: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_decrease_tol: 1e-10,
            gradient_tol: 1e-10,
            initial_damping_factor: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TriangulationProblem<'a> {
    pub observations: &'a [Joints2D],
    pub cameras: &'a [Camera],
    pub skeleton: &'a Skeleton,
    pub lambda_bone: f64,
    /// Per view, per joint. Invalid observations carry weight 0.
    pub weights: Vec<Vec<f64>>,
    /// Pixels per model unit for the bone term; estimated from the
    /// initialization when `None`.
    pub bone_scale: Option<f64>,
    pub settings: SolverSettings,
}

impl<'a> TriangulationProblem<'a> {
    pub fn new(
        observations: &'a [Joints2D],
        cameras: &'a [Camera],
        skeleton: &'a Skeleton,
        lambda_bone: f64,
    ) -> Result<Self> {
        if observations.len() != cameras.len() {
            return Err(Error::Structural(format!(
                "{} observation sets for {} cameras",
                observations.len(),
                cameras.len()
            )));
        }
        if cameras.len() < 2 {
            return Err(Error::invalid("triangulation problem", "at least two views required"));
        }
        if !(lambda_bone >= 0.0 && lambda_bone.is_finite()) {
            return Err(Error::invalid("triangulation problem", "lambda_bone must be nonnegative"));
        }
        let n = skeleton.joint_count();
        for (v, obs) in observations.iter().enumerate() {
            if obs.len() != n || obs.valid.len() != n {
                return Err(Error::Structural(format!(
                    "view {v} has {} joints, skeleton has {n}",
                    obs.len()
                )));
            }
        }
        let weights = observations
            .iter()
            .map(|o| o.valid.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect())
            .collect();
        Ok(Self {
            observations,
            cameras,
            skeleton,
            lambda_bone,
            weights,
            bone_scale: None,
            settings: SolverSettings::default(),
        })
    }

    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    fn observed(&self, view: usize, joint: usize) -> bool {
        self.weights[view][joint] > 0.0 && self.observations[view].valid[joint]
    }

    fn views_observing(&self, joint: usize) -> usize {
        (0..self.views()).filter(|v| self.observed(*v, joint)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationResult {
    pub positions: JointPositions3D,
    pub reproj_rms_px: f64,
    pub bone_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    pub reproj_rms_px: f64,
    pub bone_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl TriangulationResult {
    pub fn report(&self, frame: usize) -> FrameReport {
        FrameReport {
            frame,
            reproj_rms_px: self.reproj_rms_px,
            bone_rms: self.bone_rms,
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

/// Linear triangulation of one joint from every view where it is valid.
///
/// Rows are built in normalized image coordinates and the null vector of the
/// stacked system is taken from its SVD.
pub fn dlt_triangulate(observations: &[Joints2D], cameras: &[Camera], joint: usize) -> Result<Vector3<f64>> {
    let views: Vec<usize> = (0..cameras.len())
        .filter(|v| observations[*v].valid.get(joint).copied().unwrap_or(false))
        .collect();
    dlt_from_views(
        views
            .iter()
            .map(|v| (&cameras[*v], observations[*v].positions[joint])),
        joint,
    )
}

fn dlt_from_views<'c>(
    items: impl Iterator<Item = (&'c Camera, Vector2<f64>)>,
    joint: usize,
) -> Result<Vector3<f64>> {
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for (cam, px) in items {
        let xn = (px.x - cam.cx) / cam.fx;
        let yn = (px.y - cam.cy) / cam.fy;
        let r = &cam.rotation;
        let t = &cam.translation;
        let row = |i: usize| [r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]];
        let (r0, r1, r2) = (row(0), row(1), row(2));
        rows.push(std::array::from_fn(|k| xn * r2[k] - r0[k]));
        rows.push(std::array::from_fn(|k| yn * r2[k] - r1[k]));
    }
    if rows.len() < 4 {
        return Err(Error::Underdetermined(format!(
            "joint {joint} is valid in {} view(s), need 2",
            rows.len() / 2
        )));
    }
    let a = DMatrix::from_fn(rows.len(), 4, |i, k| rows[i][k]);
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("svd did not produce right singular vectors".into()))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("four singular values");
    let h = v_t.row(min_idx);
    if h[3].abs() < 1e-300 {
        return Err(Error::Numerical(format!("joint {joint} triangulates to a point at infinity")));
    }
    Ok(Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

struct Residuals {
    values: Vec<f64>,
    /// Sparse Jacobian rows: (column, value) pairs.
    jacobian: Vec<Vec<(usize, f64)>>,
}

fn evaluate(problem: &TriangulationProblem, bone_scale: f64, x: &[Vector3<f64>], with_jacobian: bool) -> Option<Residuals> {
    let mut values = Vec::new();
    let mut jacobian = Vec::new();
    for (v, cam) in problem.cameras.iter().enumerate() {
        for (j, p) in x.iter().enumerate() {
            if !problem.observed(v, j) {
                continue;
            }
            let sw = problem.weights[v][j].sqrt();
            let pc = cam.rotation * p + cam.translation;
            if !(pc.z > 0.0) {
                return None;
            }
            let obs = problem.observations[v].positions[j];
            let u = cam.fx * pc.x / pc.z + cam.cx;
            let w = cam.fy * pc.y / pc.z + cam.cy;
            values.push(sw * (u - obs.x));
            values.push(sw * (w - obs.y));
            if with_jacobian {
                let r = &cam.rotation;
                let inv_z = 1.0 / pc.z;
                let du: Vec<(usize, f64)> = (0..3)
                    .map(|k| (3 * j + k, sw * cam.fx * (r[(0, k)] * inv_z - pc.x * r[(2, k)] * inv_z * inv_z)))
                    .collect();
                let dv: Vec<(usize, f64)> = (0..3)
                    .map(|k| (3 * j + k, sw * cam.fy * (r[(1, k)] * inv_z - pc.y * r[(2, k)] * inv_z * inv_z)))
                    .collect();
                jacobian.push(du);
                jacobian.push(dv);
            }
        }
    }
    if problem.lambda_bone > 0.0 {
        let k = problem.lambda_bone.sqrt() * bone_scale;
        for ((p, c), len) in problem.skeleton.bones().zip(problem.skeleton.bone_lengths()) {
            let d = x[p] - x[c];
            let n = d.norm();
            values.push(k * (n - len));
            if with_jacobian {
                let g = if n > 0.0 { d / n } else { Vector3::zeros() };
                let mut row = Vec::with_capacity(6);
                for a in 0..3 {
                    row.push((3 * p + a, k * g[a]));
                    row.push((3 * c + a, -k * g[a]));
                }
                jacobian.push(row);
            }
        }
    }
    Some(Residuals { values, jacobian })
}

fn cost_of(r: &Residuals) -> f64 {
    r.values.iter().map(|v| v * v).sum()
}

fn estimate_bone_scale(problem: &TriangulationProblem, init: &[Vector3<f64>]) -> f64 {
    let centroid = init.iter().fold(Vector3::zeros(), |a, p| a + p) / init.len().max(1) as f64;
    let mut acc = 0.0;
    for cam in problem.cameras {
        let depth = (cam.rotation * centroid + cam.translation).z;
        let depth = if depth > 1e-6 { depth } else { (cam.center().coords - centroid).norm().max(1e-6) };
        acc += 0.5 * (cam.fx + cam.fy) / depth;
    }
    acc / problem.cameras.len() as f64
}

/// Levenberg-Marquardt refinement. The returned cost never exceeds the cost of `init`.
pub fn refine(problem: &TriangulationProblem, init: &JointPositions3D) -> Result<TriangulationResult> {
    let n = problem.skeleton.joint_count();
    if init.len() != n {
        return Err(Error::Structural(format!("init has {} joints, skeleton has {n}", init.len())));
    }
    if !init.positions.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(Error::Numerical("initial positions are not finite".into()));
    }
    let bone_scale = problem
        .bone_scale
        .unwrap_or_else(|| estimate_bone_scale(problem, &init.positions));
    let settings = problem.settings;
    let mut x = init.positions.clone();
    let mut res = evaluate(problem, bone_scale, &x, true)
        .ok_or_else(|| Error::Numerical("initial estimate lies behind a camera".into()))?;
    let mut cost = cost_of(&res);
    if !cost.is_finite() {
        return Err(Error::Numerical(format!("non-finite initial cost {cost}")));
    }
    let initial_cost = cost;
    let dim = 3 * n;

    let normal_equations = |res: &Residuals| {
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for (row, r) in res.jacobian.iter().zip(&res.values) {
            for &(i, a) in row {
                g[i] += a * r;
                for &(k, b) in row {
                    h[(i, k)] += a * b;
                }
            }
        }
        (h, g)
    };

    let (mut h, mut g) = normal_equations(&res);
    let max_diag = (0..dim).map(|i| h[(i, i)]).fold(0.0, f64::max);
    let mut mu = settings.initial_damping_factor * if max_diag > 0.0 { max_diag } else { 1.0 };
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iterations {
        if cost == 0.0 || g.amax() < settings.gradient_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut damped = h.clone();
        for i in 0..dim {
            damped[(i, i)] += mu;
        }
        let Some(chol) = damped.cholesky() else {
            mu *= 2.0;
            continue;
        };
        let step = chol.solve(&(-&g));
        if !step.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite LM step at iteration {iterations}")));
        }
        let trial: Vec<Vector3<f64>> = x
            .iter()
            .enumerate()
            .map(|(j, p)| p + Vector3::new(step[3 * j], step[3 * j + 1], step[3 * j + 2]))
            .collect();
        let trial_res = evaluate(problem, bone_scale, &trial, false);
        let trial_cost = trial_res.as_ref().map(cost_of).unwrap_or(f64::INFINITY);
        if trial_cost.is_nan() {
            return Err(Error::Numerical(format!("cost became NaN at iteration {iterations}")));
        }
        if trial_cost < cost {
            let rel = (cost - trial_cost) / cost;
            x = trial;
            cost = trial_cost;
            res = evaluate(problem, bone_scale, &x, true).expect("accepted point is in front of all cameras");
            (h, g) = normal_equations(&res);
            mu /= 3.0;
            if rel < settings.relative_decrease_tol {
                converged = true;
                break;
            }
        } else {
            mu *= 2.0;
            if mu > 1e30 {
                // No descent direction left at working precision.
                converged = true;
                break;
            }
        }
    }
    if !cost.is_finite() {
        return Err(Error::Numerical(format!("non-finite final cost {cost}")));
    }

    let (reproj_rms_px, bone_rms) = summary_metrics(problem, &x);
    let valid = (0..n).map(|j| problem.views_observing(j) > 0).collect();
    Ok(TriangulationResult {
        positions: JointPositions3D { positions: x, valid },
        reproj_rms_px,
        bone_rms,
        iterations,
        converged,
        initial_cost,
        final_cost: cost,
    })
}

fn summary_metrics(problem: &TriangulationProblem, x: &[Vector3<f64>]) -> (f64, f64) {
    let (mut sum, mut count) = (0.0, 0usize);
    for (v, cam) in problem.cameras.iter().enumerate() {
        for (j, p) in x.iter().enumerate() {
            if problem.observed(v, j) {
                let proj = cam.project(&Point3::from(*p)).pixel;
                sum += (proj - problem.observations[v].positions[j]).norm_squared();
                count += 1;
            }
        }
    }
    let reproj = if count > 0 { (sum / count as f64).sqrt() } else { 0.0 };
    let lengths = problem.skeleton.bone_lengths();
    let bone = if lengths.is_empty() {
        0.0
    } else {
        let s: f64 = problem
            .skeleton
            .bones()
            .zip(&lengths)
            .map(|((p, c), l)| ((x[p] - x[c]).norm() - l).powi(2))
            .sum();
        (s / lengths.len() as f64).sqrt()
    };
    (reproj, bone)
}

/// DLT initialization for every joint seen in two or more views, kinematic
/// fallback for the rest, then LM refinement.
pub fn triangulate_frame(problem: &TriangulationProblem) -> Result<TriangulationResult> {
    let skel = problem.skeleton;
    let n = skel.joint_count();
    if (0..n).all(|j| problem.views_observing(j) == 0) {
        return Err(Error::EmptyObservations("every joint is invalid in every view".into()));
    }
    let mut init: Vec<Option<Vector3<f64>>> = (0..n)
        .map(|j| {
            if problem.views_observing(j) < 2 {
                return None;
            }
            dlt_from_views(
                (0..problem.views())
                    .filter(|v| problem.observed(*v, j))
                    .map(|v| (&problem.cameras[v], problem.observations[v].positions[j])),
                j,
            )
            .ok()
        })
        .collect();

    let root = skel.root_index();
    if init[root].is_none() {
        let guesses: Vec<Vector3<f64>> = skel
            .children(root)
            .iter()
            .filter_map(|c| init[*c].map(|p| p - skel.joints()[*c].rest_offset))
            .collect();
        init[root] = Some(if guesses.is_empty() {
            Vector3::zeros()
        } else {
            guesses.iter().fold(Vector3::zeros(), |a, p| a + p) / guesses.len() as f64
        });
    }
    for j in 0..n {
        if init[j].is_none() {
            let p = skel.parent(j).expect("root already initialized");
            init[j] = Some(init[p].expect("topological order") + skel.joints()[j].rest_offset);
        }
    }
    let init = JointPositions3D::all_valid(init.into_iter().map(|p| p.expect("filled")).collect());
    refine(problem, &init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::canonical_rig;
    use crate::skeleton::{forward_kinematics, JointDef, Pose};
    use nalgebra::{Quaternion, Rotation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn exact_obs(cams: &[Camera], pts: &[Vector3<f64>]) -> Vec<Joints2D> {
        cams.iter()
            .map(|c| Joints2D {
                positions: pts.iter().map(|p| c.project(&Point3::from(*p)).pixel).collect(),
                valid: vec![true; pts.len()],
                support: vec![0; pts.len()],
            })
            .collect()
    }

    fn chain(n: usize, rng: &mut impl Rng) -> Skeleton {
        Skeleton::new(
            (0..n)
                .map(|i| {
                    let off = if i == 0 {
                        Vector3::zeros()
                    } else {
                        Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.15..0.3))
                    };
                    JointDef::new(format!("j{i}"), i.checked_sub(1), off)
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_pose(n: usize, rng: &mut impl Rng) -> Pose {
        Pose {
            rotations: (0..n)
                .map(|_| {
                    UnitQuaternion::from_quaternion(Quaternion::new(
                        3.0,
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ))
                })
                .collect(),
            root_translation: Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), -0.4),
        }
    }

    #[test]
    fn origin_at_image_centers() {
        let rig = canonical_rig(3.0, 512).unwrap();
        let obs = exact_obs(&rig, &[Vector3::zeros()]);
        let p = dlt_triangulate(&obs, &rig, 0).unwrap();
        assert!(p.norm() < 1e-9);
    }

    #[test]
    fn two_view_exact_recovery() {
        let rig = canonical_rig(3.0, 512).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let pair = [rig[0].clone(), rig[1].clone()];
            let obs = exact_obs(&pair, &[p]);
            let q = dlt_triangulate(&obs, &pair, 0).unwrap();
            assert!((q - p).norm() <= 1e-7 * p.norm().max(1.0));
        }
    }

    #[test]
    fn underdetermined_with_one_view() {
        let rig = canonical_rig(3.0, 512).unwrap();
        let mut obs = exact_obs(&rig, &[Vector3::zeros()]);
        for o in &mut obs[1..] {
            o.valid[0] = false;
        }
        assert!(matches!(dlt_triangulate(&obs, &rig, 0), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn dlt_noise_error_bounded_monte_carlo() {
        // 0.5 px noise at distance 3: single-ray back-projection uncertainty
        // is 0.5 px * depth / focal.
        let rig = canonical_rig(3.0, 512).unwrap();
        let sigma_ray = 0.5 * 3.0 / rig[0].fy;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = Vector3::new(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7));
            let mut obs = exact_obs(&rig, &[p]);
            for o in &mut obs {
                o.positions[0] += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
            let q = dlt_triangulate(&obs, &rig, 0).unwrap();
            worst = worst.max((q - p).norm());
        }
        assert!(worst < 10.0 * sigma_ray, "worst {worst} vs bound {}", 10.0 * sigma_ray);
    }

    #[test]
    fn exact_observations_reach_ground_truth() {
        let rig = canonical_rig(3.5, 512).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let skel = chain(6, &mut rng);
        let gt = forward_kinematics(&skel, &random_pose(6, &mut rng)).unwrap();
        let obs = exact_obs(&rig, &gt.positions);
        let problem = TriangulationProblem::new(&obs, &rig, &skel, 0.0).unwrap();
        // Start away from the optimum so the solver has work to do.
        let init = JointPositions3D::all_valid(gt.positions.iter().map(|p| p + Vector3::new(0.05, -0.03, 0.02)).collect());
        let r = refine(&problem, &init).unwrap();
        assert!(r.final_cost < 1e-12, "cost {}", r.final_cost);
        for (a, b) in r.positions.positions.iter().zip(&gt.positions) {
            assert!((a - b).norm() < 1e-6);
        }
        let full = triangulate_frame(&problem).unwrap();
        assert!(full.reproj_rms_px < 1e-6);
        assert!(full.converged);
    }

    #[test]
    fn strong_bone_weight_keeps_lengths() {
        let rig = canonical_rig(3.5, 512).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let skel = chain(8, &mut rng);
        let gt = forward_kinematics(&skel, &random_pose(8, &mut rng)).unwrap();
        let mut obs = exact_obs(&rig, &gt.positions);
        for o in &mut obs {
            for p in &mut o.positions {
                *p += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
        }
        let problem = TriangulationProblem::new(&obs, &rig, &skel, 1e3).unwrap();
        let r = triangulate_frame(&problem).unwrap();
        for ((p, c), len) in skel.bones().zip(skel.bone_lengths()) {
            let got = (r.positions.positions[p] - r.positions.positions[c]).norm();
            assert!((got - len).abs() < 0.01 * len, "bone {p}-{c}: {got} vs {len}");
        }
        assert!(r.final_cost <= r.initial_cost);
    }

    #[test]
    fn lm_beats_grid_search_on_two_joints() {
        let rig = canonical_rig(3.0, 128).unwrap();
        let skel = Skeleton::new(vec![
            JointDef::new("a", None, Vector3::zeros()),
            JointDef::new("b", Some(0), Vector3::new(0.0, 0.0, 0.3)),
        ])
        .unwrap();
        let gt = [Vector3::new(0.01, 0.02, -0.01), Vector3::new(0.03, -0.01, 0.31)];
        let mut obs = exact_obs(&rig, &gt);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for o in &mut obs {
            for p in &mut o.positions {
                *p += Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            }
        }
        let mut problem = TriangulationProblem::new(&obs, &rig, &skel, 10.0).unwrap();
        problem.bone_scale = Some(40.0);
        let r = triangulate_frame(&problem).unwrap();

        // Grid oracle: joint a on a 1e-3 grid around the LM answer, joint b
        // searched independently with joint a fixed, alternating twice.
        let cost = |x: &[Vector3<f64>]| {
            let res = evaluate(&problem, 40.0, x, false).unwrap();
            cost_of(&res)
        };
        let mut best = [gt[0], gt[1]];
        let mut best_cost = cost(&best);
        for _ in 0..2 {
            for joint in 0..2 {
                let center = best[joint];
                for i in -12..=12 {
                    for j in -12..=12 {
                        for k in -12..=12 {
                            let mut cand = best;
                            cand[joint] = center + Vector3::new(i as f64, j as f64, k as f64) * 1e-3;
                            let c = cost(&cand);
                            if c < best_cost {
                                best_cost = c;
                                best = cand;
                            }
                        }
                    }
                }
            }
        }
        assert!(r.final_cost <= best_cost + 1e-12, "lm {} grid {best_cost}", r.final_cost);
    }

    #[test]
    fn dropped_view_and_single_view_joint() {
        let rig = canonical_rig(3.5, 512).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let skel = chain(6, &mut rng);
        let gt = forward_kinematics(&skel, &random_pose(6, &mut rng)).unwrap();
        let diag = gt.bbox_diagonal();
        let obs = exact_obs(&rig, &gt.positions);

        let three = &rig[..3];
        let p3 = TriangulationProblem::new(&obs[..3], three, &skel, 100.0).unwrap();
        let r3 = triangulate_frame(&p3).unwrap();
        assert!(r3.bone_rms < 1e-6);

        let mut occluded = obs.clone();
        for o in &mut occluded[1..] {
            o.valid[3] = false;
        }
        let p = TriangulationProblem::new(&occluded, &rig, &skel, 100.0).unwrap();
        let r = triangulate_frame(&p).unwrap();
        assert!((r.positions.positions[3] - gt.positions[3]).norm() < 0.05 * diag);
    }

    #[test]
    fn all_invalid_is_empty_observation_error() {
        let rig = canonical_rig(3.0, 64).unwrap();
        let skel = Skeleton::new(vec![JointDef::new("a", None, Vector3::zeros())]).unwrap();
        let mut obs = exact_obs(&rig, &[Vector3::zeros()]);
        for o in &mut obs {
            o.valid[0] = false;
        }
        let p = TriangulationProblem::new(&obs, &rig, &skel, 1.0).unwrap();
        assert!(matches!(triangulate_frame(&p), Err(Error::EmptyObservations(_))));
    }

    #[test]
    fn rig_rotation_equivariance_and_determinism() {
        let rig = canonical_rig(3.5, 512).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let skel = chain(5, &mut rng);
        let gt = forward_kinematics(&skel, &random_pose(5, &mut rng)).unwrap();
        let mut obs = exact_obs(&rig, &gt.positions);
        for o in &mut obs {
            for p in &mut o.positions {
                *p += Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        let base = triangulate_frame(&TriangulationProblem::new(&obs, &rig, &skel, 100.0).unwrap()).unwrap();
        let again = triangulate_frame(&TriangulationProblem::new(&obs, &rig, &skel, 100.0).unwrap()).unwrap();
        assert_eq!(base, again);

        let r = Rotation3::from_euler_angles(0.3, -0.2, 1.1);
        let rotated: Vec<Camera> = rig.iter().map(|c| c.rotated_world(&r)).collect();
        let rot = triangulate_frame(&TriangulationProblem::new(&obs, &rotated, &skel, 100.0).unwrap()).unwrap();
        for (a, b) in base.positions.positions.iter().zip(&rot.positions.positions) {
            assert!((r * a - b).norm() < 1e-6);
        }
    }
}
