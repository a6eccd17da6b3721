//! End-to-end acceptance checks. Each criterion prints one line with its
//! verdict, measured values and runtime; the process fails if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use collide_refine::agreement::{AgreementConfig, HypothesisBuffer};
use collide_refine::fusion::{extract_grids, CellState, Occupancy};
use collide_refine::geometry::{Aabb, Mesh, ModelConfig, ObjectModel, Pose, Twist};
use collide_refine::gradcheck::{point_fixture, twist_fixture, TwistFixture};
use collide_refine::losses::{add_loss, adds_loss, Denominator};
use collide_refine::metrics::auc;
use collide_refine::pipeline::{build_hypothesis, fuse_frames, render_frames, two_cube_fixture};
use collide_refine::refine::{evaluate_scene_objective, icc_refine, icp_all, RefineConfig};
use collide_refine::scenegen::{
    generate_scene, perturb_poses, random_rotation, visible_surface_samples, ModelLibrary, SceneSpec,
};
use collide_refine::voxelize::{voxelize_occupancy, voxelize_occupancy_backward, GridSpec};
use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn library() -> ModelLibrary {
    ModelLibrary::standard(ModelConfig::default()).unwrap()
}

// ---------------------------------------------------------------------------
// Oracles

/// All-pairs voxelization: every cell against every point.
fn brute_voxelize(points: &[Point3<f64>], spec: &GridSpec) -> Vec<f64> {
    let n = spec.dim;
    let mut out = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let c = Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5);
                let d = points
                    .iter()
                    .map(|p| {
                        let u = (p.coords - Vector3::from(spec.origin)) / spec.voxel_size;
                        (u - c).norm()
                    })
                    .fold(f64::INFINITY, f64::min);
                out.push(1.0 - d.min(spec.delta_t) / spec.delta_t);
            }
        }
    }
    out
}

/// Mean over objects of `l_col - l_surf`, recomputed from the brute-force
/// voxelization and the cell states alone.
fn oracle_scene_loss(fx: &TwistFixture, poses: &[Pose]) -> f64 {
    let cut = fx.cfg.model_points;
    let posed: Vec<Vec<Point3<f64>>> = fx
        .objects
        .iter()
        .zip(poses)
        .map(|(o, p)| p.transform_points(&o.model.points[..cut.min(o.model.points.len())]))
        .collect();
    let mut total = 0.0;
    for (m, o) in fx.objects.iter().enumerate() {
        let spec = o.surround.grid_spec(fx.cfg.delta_t);
        let target = brute_voxelize(&posed[m], &spec);
        let others: Vec<Vec<f64>> = (0..posed.len())
            .filter(|n| *n != m)
            .map(|n| brute_voxelize(&posed[n], &spec))
            .collect();
        let (mut col, mut surf, mut tsum, mut ssum) = (0.0, 0.0, 0.0, 0.0);
        for (k, state) in o.surround.states.iter().enumerate() {
            let impen = matches!(state, CellState::Other | CellState::Free) as u8 as f64;
            let own = (*state == CellState::SelfOccupied) as u8 as f64;
            let neg = others.iter().map(|g| g[k]).fold(impen, f64::max);
            col += target[k] * neg;
            surf += target[k] * own;
            tsum += target[k];
            ssum += own;
        }
        total += col / tsum - surf / ssum;
    }
    total / fx.objects.len() as f64
}

/// Per 3-vector relative error in the max norm, floored at 1e-6 of the
/// largest component.
fn block_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let floor = 1e-6 * analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .chunks(3)
        .zip(numeric.chunks(3))
        .map(|(a, n)| {
            let diff = a.iter().zip(n).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            let scale = a.iter().chain(n).fold(floor, |m, v| m.max(v.abs()));
            if diff == 0.0 {
                0.0
            } else {
                diff / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Crossing parity of a fixed, slightly skewed ray against the triangles.
fn inside(mesh: &Mesh, p: &Point3<f64>) -> bool {
    let dir = Vector3::new(1.0, 0.000_123_7, 0.000_071_3).normalize();
    let mut crossings = 0;
    for [a, b, c] in mesh.triangles() {
        let e1 = b - a;
        let e2 = c - a;
        let h = dir.cross(&e2);
        let det = e1.dot(&h);
        if det.abs() < 1e-15 {
            continue;
        }
        let s = p - a;
        let u = s.dot(&h) / det;
        if !(0.0..=1.0).contains(&u) {
            continue;
        }
        let q = s.cross(&e1);
        let v = dir.dot(&q) / det;
        if v < 0.0 || u + v > 1.0 {
            continue;
        }
        if e2.dot(&q) / det > 0.0 {
            crossings += 1;
        }
    }
    crossings % 2 == 1
}

/// Fraction of a 1 mm lattice over `a`'s bounding box, restricted to `a`,
/// that also lies inside `b`.
fn penetration_ratio(a: (&Mesh, &Pose), b: (&Mesh, &Pose)) -> f64 {
    let pitch = 0.001;
    let bb = Aabb::from_points(a.0.vertices.iter()).unwrap();
    let n = bb.extent().map(|e| (e / pitch).round() as usize);
    let ib = b.1.inverse();
    let (mut own, mut shared) = (0usize, 0usize);
    for i in 0..n.x {
        for j in 0..n.y {
            for k in 0..n.z {
                let local = bb.min + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * pitch;
                if !inside(a.0, &local) {
                    continue;
                }
                own += 1;
                if inside(b.0, &ib.transform_point(&a.1.transform_point(&local))) {
                    shared += 1;
                }
            }
        }
    }
    shared as f64 / own as f64
}

/// Trapezoidal integral of the empirical accuracy curve on `steps` intervals.
fn auc_numeric(d: &[f64], d_max: f64, steps: usize) -> f64 {
    let acc = |t: f64| d.iter().filter(|x| **x <= t).count() as f64 / d.len() as f64;
    let h = d_max / steps as f64;
    let mut sum = 0.5 * (acc(0.0) + acc(d_max));
    for i in 1..steps {
        sum += acc(i as f64 * h);
    }
    sum * h / d_max
}

fn random_pose(rng: &mut ChaCha8Rng, spread: f64) -> Pose {
    let t = Vector3::from_fn(|_, _| rng.random_range(-spread..spread));
    Pose::new(random_rotation(rng), t)
}

// ---------------------------------------------------------------------------
// Criteria

fn voxelization_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = [4, 8, 16][rng.random_range(0..3)];
        let delta_t = [0.5, 1.0, 2.0][rng.random_range(0..3)];
        let s = rng.random_range(0.005..0.05);
        let origin = Point3::from(Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2)));
        let spec = GridSpec::new(origin, s, dim, delta_t).unwrap();
        let count = rng.random_range(1..=50);
        // Points range a little beyond the grid so edge cells are exercised.
        let extent = s * dim as f64;
        let points: Vec<Point3<f64>> = (0..count)
            .map(|_| origin + Vector3::from_fn(|_, _| rng.random_range(-0.1 * extent..1.1 * extent)))
            .collect();
        let fast = voxelize_occupancy(&points, &spec).unwrap();
        let slow = brute_voxelize(&points, &spec);
        for (a, b) in fast.values.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst < 1e-12, format!("max abs error {worst:.2e} over 100 configs"))
}

fn gradient_correctness() -> Verdict {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut point_err: f64 = 0.0;
    for _ in 0..50 {
        let fx = point_fixture(&mut rng);
        let analytic: Vec<f64> = voxelize_occupancy_backward(&fx.points, &fx.spec, &fx.upstream)
            .unwrap()
            .iter()
            .flat_map(|g| [g.x, g.y, g.z])
            .collect();
        let objective = |pts: &[Point3<f64>]| -> f64 {
            brute_voxelize(pts, &fx.spec).iter().zip(&fx.upstream).map(|(o, u)| o * u).sum()
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for q in 0..fx.points.len() {
            for a in 0..3 {
                let mut plus = fx.points.clone();
                plus[q][a] += h;
                let mut minus = fx.points.clone();
                minus[q][a] -= h;
                numeric.push((objective(&plus) - objective(&minus)) / (2.0 * h));
            }
        }
        point_err = point_err.max(block_error(&analytic, &numeric));
    }

    let mut twist_err: f64 = 0.0;
    let mut value_err: f64 = 0.0;
    for _ in 0..50 {
        let fx = twist_fixture(&mut rng, h, 2.0).unwrap();
        let objective = evaluate_scene_objective(&fx.objects, &fx.poses, &fx.cfg, Denominator::Exact).unwrap();
        value_err = value_err.max((objective.total - oracle_scene_loss(&fx, &fx.poses)).abs());
        let analytic: Vec<f64> = objective.gradients.iter().flat_map(|g| g.to_array()).collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..fx.poses.len() {
            for c in 0..6 {
                let mut e = [0.0; 6];
                e[c] = h;
                let mut plus = fx.poses.clone();
                plus[i] = fx.poses[i].exp_update(&Twist::from_array(e));
                e[c] = -h;
                let mut minus = fx.poses.clone();
                minus[i] = fx.poses[i].exp_update(&Twist::from_array(e));
                numeric.push((oracle_scene_loss(&fx, &plus) - oracle_scene_loss(&fx, &minus)) / (2.0 * h));
            }
        }
        twist_err = twist_err.max(block_error(&analytic, &numeric));
    }
    verdict(
        point_err < 1e-4 && twist_err < 1e-3 && value_err < 1e-12,
        format!("point rel {point_err:.2e}, twist rel {twist_err:.2e}, loss value {value_err:.1e} on 50+50 fixtures"),
    )
}

fn collision_resolution() -> Verdict {
    let (scene, lib, init) = two_cube_fixture(0.1, 0.004, 0.3).unwrap();
    let frames = render_frames(&scene, &lib).unwrap();
    let map = fuse_frames(&scene.bounds, &frames).unwrap();
    let hypothesis = build_hypothesis(&scene, &lib, &map, &frames, &init).unwrap();
    let mesh = &lib.get("cube").unwrap().mesh;
    let before = penetration_ratio((mesh, &init[0].1), (mesh, &init[1].1));
    let cfg = RefineConfig {
        max_iters: 500,
        ..RefineConfig::default()
    };
    let out = icc_refine(&hypothesis, &cfg).unwrap();
    let poses = out.scene.poses();
    let after = penetration_ratio((mesh, &poses[0]), (mesh, &poses[1]));
    let finite = out.trace.iter().all(|r| r.total.is_finite() && r.l_col_mean.is_finite() && r.l_surf_mean.is_finite());
    let (first, last) = (out.trace[0].total, out.trace.last().unwrap().total);
    let iters = out.trace.len() - 1;
    verdict(
        after < 0.05 && finite && last < first && iters <= 500,
        format!(
            "penetration {:.2}% -> {:.2}% in {iters} iterations, loss {first:.4} -> {last:.4}, finite {finite}",
            100.0 * before,
            100.0 * after
        ),
    )
}

fn refinement_ordering() -> Verdict {
    let lib = library();
    let cfg = RefineConfig::default();
    let mut sums = [0.0; 4];
    let (mut objects, mut under) = (0usize, 0usize);
    for seed in 0..20u64 {
        let scene = generate_scene(&SceneSpec::tabletop(seed, 5, 8).unwrap(), &lib).unwrap();
        let frames = render_frames(&scene, &lib).unwrap();
        let map = fuse_frames(&scene.bounds, &frames).unwrap();
        let init = perturb_poses(&scene.poses(), 0.01, 5f64.to_radians(), seed + 1000).unwrap();
        let hypothesis = build_hypothesis(&scene, &lib, &map, &frames, &init).unwrap();
        let icc = icc_refine(&hypothesis, &cfg).unwrap();
        icc.check().unwrap();
        // ICC+ICP is ICP started from the ICC result.
        let results = [
            hypothesis.poses(),
            icc.scene.poses(),
            icp_all(&hypothesis, &cfg).poses(),
            icp_all(&icc.scene, &cfg).poses(),
        ];
        for (mode, poses) in results.iter().enumerate() {
            for (o, p) in scene.objects.iter().zip(poses) {
                let d = add_loss(&o.pose, p, &lib.get(&o.model).unwrap().points).unwrap();
                sums[mode] += d;
                if mode == 3 {
                    objects += 1;
                    under += (d < 0.005) as usize;
                }
            }
        }
    }
    let [none, icc, icp, both] = sums.map(|s| 1e3 * s / objects as f64);
    let share = under as f64 / objects as f64;
    verdict(
        both <= icc.min(icp) && icc.min(icp) <= none && share >= 0.8,
        format!(
            "mean ADD mm: none {none:.3}, icc {icc:.3}, icp {icp:.3}, icc+icp {both:.3}; under 5 mm {under}/{objects}"
        ),
    )
}

fn loss_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lib = library();
    let mut violations = 0;
    for i in 0..1000 {
        let model = lib.get(["box", "lshape", "cube", "cylinder", "bowl"][i % 5]).unwrap();
        let pts = &model.points[..500];
        let (a, b) = (random_pose(&mut rng, 0.1), random_pose(&mut rng, 0.1));
        if adds_loss(&a, &b, pts).unwrap() > add_loss(&a, &b, pts).unwrap() {
            violations += 1;
        }
    }
    // A square-symmetric point set: every point has a partner a quarter
    // turn away about z.
    let mut square = Vec::new();
    for x in [-0.03, -0.01, 0.01, 0.03] {
        for y in [-0.03, -0.01, 0.01, 0.03] {
            for z in [-0.02, 0.0, 0.02] {
                square.push(Point3::new(x, y, z));
            }
        }
    }
    let quarter = Pose::new(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2), Vector3::zeros());
    let sym_adds = adds_loss(&Pose::identity(), &quarter, &square).unwrap();
    let sym_add = add_loss(&Pose::identity(), &quarter, &square).unwrap();

    let mut trans_err: f64 = 0.0;
    for _ in 0..100 {
        let base = random_pose(&mut rng, 0.2);
        let t = Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05));
        let moved = Pose::new(base.rotation, base.translation + t);
        let add = add_loss(&base, &moved, &square).unwrap();
        trans_err = trans_err.max((add - t.norm()).abs());
    }
    // A quarter turn in floating point moves lattice points by at most a
    // few ulps, so their nearest partners sit at rounding distance.
    verdict(
        violations == 0 && sym_adds < 1e-15 && sym_add > 0.0 && trans_err < 1e-12,
        format!(
            "adds > add on {violations}/1000 pairs; quarter turn adds {sym_adds:.1e}, add {sym_add:.4}; translation error {trans_err:.1e}"
        ),
    )
}

fn auc_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..200);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.15)).collect();
        worst = worst.max((auc(&d, 0.1).unwrap() - auc_numeric(&d, 0.1, 10_000)).abs());
    }
    let zeros = auc(&[0.0; 17], 0.1).unwrap();
    let far = auc(&[0.1, 0.2, 3.0], 0.1).unwrap();
    verdict(
        worst < 1e-4 && zeros == 1.0 && far == 0.0,
        format!("max deviation {worst:.2e} over 100 lists; all zero {zeros}, all >= 0.1 {far}"),
    )
}

fn fusion_consistency() -> Verdict {
    let lib = library();
    let mut worst_ratio: f64 = 1.0;
    let (mut grids, mut bad_cells) = (0, 0);
    for seed in [2u64, 8, 13] {
        let scene = generate_scene(&SceneSpec::tabletop(seed, 5, 8).unwrap(), &lib).unwrap();
        let frames = render_frames(&scene, &lib).unwrap();
        let map = fuse_frames(&scene.bounds, &frames).unwrap();
        let samples = visible_surface_samples(&scene, &lib, &frames).unwrap();
        let visible: Vec<_> = samples.iter().filter(|s| s.2).collect();
        let hits = visible
            .iter()
            .filter(|(id, p, _)| map.query_occupancy(p) == Occupancy::Occupied(*id))
            .count();
        worst_ratio = worst_ratio.min(hits as f64 / visible.len() as f64);
        for o in &scene.objects {
            let g = extract_grids(&map, o.id, lib.get(&o.model).unwrap()).unwrap();
            grids += 1;
            let masks: Vec<Vec<bool>> = [CellState::SelfOccupied, CellState::Other, CellState::Free, CellState::Unknown]
                .iter()
                .map(|s| g.mask(*s))
                .collect();
            if g.len() != 32 * 32 * 32 {
                bad_cells += g.len().abs_diff(32 * 32 * 32);
            }
            bad_cells += (0..g.len()).filter(|k| masks.iter().filter(|m| m[*k]).count() != 1).count();
        }
    }
    verdict(
        bad_cells == 0 && worst_ratio >= 0.99,
        format!("{grids} grids, {bad_cells} cells outside exactly one state; worst visible-sample hit rate {:.2}%", 100.0 * worst_ratio),
    )
}

fn agreement_protocol() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let lib = library();
    let mut mismatches = 0;
    for i in 0..100 {
        let model: &Arc<ObjectModel> = lib.get(["box", "cube", "lshape", "cylinder"][i % 4]).unwrap();
        let capacity = rng.random_range(2..8);
        let cfg = AgreementConfig {
            capacity,
            threshold: rng.random_range(0.005..0.05),
            min_agreements: rng.random_range(1..=capacity * (capacity - 1)),
        };
        let mut buffer = HypothesisBuffer::new(cfg).unwrap();
        let center = random_pose(&mut rng, 0.1);
        let spread = rng.random_range(0.0..0.04);
        let mut recent: Vec<Pose> = Vec::new();
        let pushes = capacity + rng.random_range(0..4);
        let mut last = None;
        for _ in 0..pushes {
            let dq = UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * spread);
            let dt = Vector3::from_fn(|_, _| rng.random_range(-spread..spread));
            let p = Pose::new(dq * center.rotation, center.translation + dt);
            recent.push(p);
            last = buffer.push_and_check(p, model).unwrap();
        }
        let window = &recent[recent.len() - capacity..];
        let loss = |a: &Pose, b: &Pose| {
            if model.symmetric {
                adds_loss(a, b, &model.points).unwrap()
            } else {
                add_loss(a, b, &model.points).unwrap()
            }
        };
        let mut count = 0;
        for (a, pa) in window.iter().enumerate() {
            for (b, pb) in window.iter().enumerate() {
                if a != b && loss(pa, pb) < cfg.threshold {
                    count += 1;
                }
            }
        }
        let expected = count >= cfg.min_agreements;
        let got = buffer.evaluate(model).unwrap().count;
        if got != count || last.is_some() != expected {
            mismatches += 1;
        }
    }

    let model = lib.get("lshape").unwrap();
    let pose = random_pose(&mut rng, 0.1);
    let mut same = HypothesisBuffer::new(AgreementConfig::default()).unwrap();
    let mut fired = None;
    for _ in 0..5 {
        fired = same.push_and_check(pose, model).unwrap();
    }
    let mut scattered = HypothesisBuffer::new(AgreementConfig::default()).unwrap();
    let mut stray = None;
    for _ in 0..5 {
        stray = stray.or(scattered.push_and_check(random_pose(&mut rng, 0.3), model).unwrap());
    }
    verdict(
        mismatches == 0 && fired == Some(pose) && stray.is_none(),
        format!(
            "{mismatches}/100 buffers disagree with the pairwise count; identical fires {}, scattered fires {}",
            fired.is_some(),
            stray.is_some()
        ),
    )
}

/// Every file under `dir`, by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn run_all(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let bin = env!("CARGO_BIN_EXE_collide-refine");
    let run = |args: &[&str]| -> Vec<u8> {
        let out = Command::new(bin)
            .args(args)
            .current_dir(dir)
            .env("COLLIDE_REFINE_THREADS", "2")
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let mut outputs = BTreeMap::new();
    outputs.insert("gen.stdout".into(), run(&["gen", "--seed", "4", "--objects", "3", "--frames", "6", "--out", "scene"]));
    outputs.insert(
        "fuse.stdout".into(),
        run(&["fuse", "--scene", "scene", "--out", "map.bin", "--grids", "grids", "--seed", "3"]),
    );
    outputs.insert(
        "refine.stdout".into(),
        run(&[
            "refine", "--scene", "scene", "--mode", "icc+icp", "--grids", "grids", "--out", "poses.json", "--trace",
            "trace.csv", "--seed", "5",
        ]),
    );
    outputs.insert("eval.stdout".into(), run(&["eval", "--gt", "scene", "--est", "poses.json"]));
    outputs.extend(snapshot(dir));
    outputs
}

fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_all(a.path());
    let second = run_all(b.path());
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let same_set = first.keys().eq(second.keys());
    let spawns = first["fuse.stdout"].split(|c| *c == b'\n').filter(|l| !l.is_empty()).count();
    verdict(
        same_set && differing.is_empty() && spawns > 0,
        format!("{} artifacts compared, {} differ; {spawns} spawn events", first.len(), differing.len()),
    )
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Verdict); 9] = [
        ("voxelization oracle equivalence", Duration::from_secs(10), voxelization_oracle),
        ("gradient correctness", Duration::from_secs(30), gradient_correctness),
        ("ICC collision resolution", Duration::from_secs(10), collision_resolution),
        ("refinement ordering", Duration::from_secs(300), refinement_ordering),
        ("loss identities", Duration::MAX, loss_identities),
        ("AUC equivalence", Duration::MAX, auc_equivalence),
        ("fusion partition and consistency", Duration::MAX, fusion_consistency),
        ("agreement protocol", Duration::MAX, agreement_protocol),
        ("determinism", Duration::MAX, determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(v) => (v.pass && elapsed < *limit, v.detail),
            Err(_) => (false, "panicked".to_string()),
        };
        let budget = if *limit == Duration::MAX { String::new() } else { format!(", limit {}s", limit.as_secs()) };
        println!(
            "criterion {} {name}: {} ({detail}; {:.1}s{budget})",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        failed += !pass as usize;
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
