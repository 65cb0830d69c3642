//! Acceptance run over the ten criteria; prints one PASS/FAIL line each.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fbopt_core::certification::{eta_star, GainCeilingInputs};
use fbopt_core::controller::fit_decay_rate;
use fbopt_core::linalg::solve_lyapunov;
use fbopt_core::numerics::{rk4_step, ConvexRegion};
use fbopt_core::objective::{composite_cost, composite_gradient, CostFn, CostSpec};
use fbopt_core::perception::{check_rho_cover, CoverMode, WeightFile};
use fbopt_core::plants::{lti_plant, polar_transform, sis_plant, stabilized_unicycle};
use fbopt_core::surrogate::centered_difference;
use fbopt_core::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<(bool, String), String>;
type Criterion = (&'static str, f64, fn() -> Check);

fn fbopt(dir: &Path, args: &[&str]) -> Result<(i32, String), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fbopt"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("cannot run fbopt: {e}"))?;
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    Ok((out.status.code().unwrap_or(-1), stderr))
}

fn reproduce(recipe: &str) -> Result<tempfile::TempDir, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (code, stderr) = fbopt(dir.path(), &["reproduce", recipe, "--out", "out"])?;
    if code != 0 {
        return Err(format!("reproduce {recipe} exited {code}: {stderr}"));
    }
    Ok(dir)
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn f(v: &Value, key: &str) -> Result<f64, String> {
    v.pointer(key).and_then(Value::as_f64).ok_or_else(|| format!("missing number {key}"))
}

fn vec_of(v: &Value, key: &str) -> Result<Vec<f64>, String> {
    v.pointer(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .ok_or_else(|| format!("missing array {key}"))
}

fn theorem_envelope() -> Check {
    let dir = reproduce("lti-theorem1-validation")?;
    let v = read_json(&dir.path().join("out/validation.json"))?;
    let runs = v["runs"].as_array().ok_or("no runs")?;
    let mut grid: Vec<(String, f64, f64)> = runs
        .iter()
        .map(|r| {
            (
                r["disturbance"].as_str().unwrap_or("").to_string(),
                r["eta_fraction"].as_f64().unwrap_or(f64::NAN),
                r["delta"].as_f64().unwrap_or(f64::NAN),
            )
        })
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut expected = Vec::new();
    for d in ["constant", "sinusoid"] {
        for e in [0.1, 0.5, 0.9] {
            for delta in [0.0, 0.01, 0.1] {
                expected.push((d.to_string(), e, delta));
            }
        }
    }
    let held = runs.iter().filter(|r| r["holds"].as_bool() == Some(true)).count();
    let worst = runs.iter().filter_map(|r| r["max_violation"].as_f64()).fold(f64::NEG_INFINITY, f64::max);
    Ok((
        grid == expected && held == 18 && worst <= 1e-9,
        format!("{held}/18 runs within the envelope, worst excess {worst:.3e}"),
    ))
}

fn exact_convergence() -> Check {
    let dir = reproduce("sis-exact")?;
    let s = read_json(&dir.path().join("out/summary.json"))?;
    let sse = f(&s, "/steady_state_error")?;
    let u = vec_of(&s, "/final_input")?[0];
    let (beta, gamma, mu) = (4.0, 1.0 / 9.0, 1e-4);
    let c = (mu + gamma) / beta;
    let closed_form = (1.0 / 0.36 + 0.15 * c) / (1.0 + c * c);
    let gap = (u - closed_form).abs();
    Ok((
        sse <= 1e-3 && gap <= 1e-3,
        format!("steady-state error {sse:.3e}, |u - u*| = {gap:.3e} (u* = {closed_form:.6})"),
    ))
}

fn state_perception_plateau() -> Check {
    let dir = reproduce("sis-state-perception")?;
    let out = dir.path().join("out");
    let s = read_json(&out.join("summary.json"))?;
    let cert = read_json(&out.join("certificate.json"))?;
    let train = read_json(&out.join("train_report.json"))?;
    let sse = f(&s, "/steady_state_error")?;
    let sup = f(&train, "/0/sup_training_error")?;
    let (ell_hu, ell_x) = (f(&cert, "/certificate/inputs/ell_hu")?, f(&cert, "/certificate/inputs/ell_x")?);
    let kappa3 = f(&cert, "/certificate/constants/kappa3")?;
    let delta = ell_hu * ell_x * 1f64.sqrt() * sup;
    let budget = kappa3 * delta;
    let reported = f(&s, "/delta")?;
    Ok((
        (1e-4..=1e-1).contains(&sse) && sse <= budget && (reported - delta).abs() <= 1e-12 * delta.max(1.0),
        format!("steady-state error {sse:.3e}, kappa3*delta = {budget:.3e} (sup training error {sup:.3e})"),
    ))
}

fn cost_perception_budget() -> Check {
    let dir = reproduce("sis-cost-perception")?;
    let out = dir.path().join("out");
    let s = read_json(&out.join("summary.json"))?;
    let cert = read_json(&out.join("certificate.json"))?;
    let sweep = read_json(&out.join("sweep.json"))?;
    let weights = WeightFile::from_json(&std::fs::read_to_string(out.join("cost_weights.json")).map_err(|e| e.to_string())?)
        .and_then(|w| w.to_net())
        .map_err(|e| e.to_string())?;
    let sse = f(&s, "/steady_state_error")?;
    let eps = f(&s, "/delta_budget/epsilon")?;
    let e_fd = f(&s, "/delta_budget/e_x_fd")?;
    let (lo, hi, resolution) = (0.04, 0.982, 1e-4);
    let mut e_hat: f64 = 0.0;
    for i in 0..=4000 {
        let x = lo + (hi - lo) * i as f64 / 4000.0;
        let raw = weights.forward(&Vector::from_element(1, x)).map_err(|e| e.to_string())?[0];
        let read = (raw / resolution).round() * resolution;
        e_hat = e_hat.max((read - (x - 0.85) * (x - 0.85)).abs());
    }
    let ell_hu = f(&cert, "/certificate/inputs/ell_hu")?;
    let kappa3 = f(&cert, "/certificate/constants/kappa3")?;
    let budget = kappa3 * (ell_hu * e_hat / eps + ell_hu * e_fd);
    let errors: Vec<f64> = sweep["cells"]
        .as_array()
        .ok_or("no sweep cells")?
        .iter()
        .map(|c| c["steady_state_error"].as_f64().unwrap_or(f64::NAN))
        .collect();
    let argmin = errors
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, e)| if *e < b.1 { (i, *e) } else { b })
        .0;
    let interior = errors.iter().all(|e| e.is_finite()) && argmin > 0 && argmin + 1 < errors.len();
    Ok((
        sse > 0.0 && e_fd == 0.0 && sse <= budget && interior,
        format!(
            "steady-state error {sse:.3e} <= kappa3*delta = {budget:.3e} (e_hat {e_hat:.2e}, eps {eps}); sweep minimum at cell {argmin} of {}",
            errors.len()
        ),
    ))
}

fn centered_difference_order() -> Check {
    let u0 = 0.3_f64;
    let point = Vector::from_element(1, u0);
    let mut logs = Vec::new();
    for eps in [1e-1, 1e-2, 1e-3] {
        let g = centered_difference(|v| Ok(v[0].exp()), &point, eps).map_err(|e| e.to_string())?;
        logs.push((f64::ln(eps), f64::ln((g[0] - u0.exp()).abs())));
    }
    let n = logs.len() as f64;
    let (mx, my) = (logs.iter().map(|p| p.0).sum::<f64>() / n, logs.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / logs.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..3.0)).collect();
        let r: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p = Vector::from_iterator(3, (0..3).map(|_| rng.gen_range(-2.0..2.0)));
        let value = |v: &Vector| Ok((0..3).map(|i| 0.5 * q[i] * (v[i] - r[i]).powi(2)).sum::<f64>());
        let g = centered_difference(value, &p, rng.gen_range(1e-3..0.5)).map_err(|e| e.to_string())?;
        for i in 0..3 {
            worst = worst.max((g[i] - q[i] * (p[i] - r[i])).abs());
        }
    }
    Ok((
        (slope - 2.0).abs() <= 0.1 && worst <= 1e-10,
        format!("log-log slope {slope:.4}, worst quadratic error {worst:.2e}"),
    ))
}

fn unicycle_stabilizer() -> Check {
    let k = 1.0;
    let plant = stabilized_unicycle(k).map_err(|e| e.to_string())?;
    let reference = Vector::from_column_slice(&[-0.5, -0.5]);
    let w = Vector::zeros(0);
    let mut x = Vector::from_column_slice(&[-1.5, -1.5, -FRAC_PI_2]);
    let (dt, steps, every) = (1e-3, 10_000, 10);
    let mut field = |_: f64, s: &Vector| Ok(plant.field(s, &reference, &w));
    let polar = |s: &Vector| polar_transform([s[0], s[1], s[2]], [reference[0], reference[1]]).map_err(|e| e.to_string());
    let (mut times, mut xi) = (vec![0.0], Vec::new());
    let (rho0, phi0) = polar(&x)?;
    xi.push(rho0.hypot(phi0));
    let mut v_prev = 0.5 * phi0 * phi0;
    let v_start = v_prev;
    let mut worst: f64 = 0.0;
    for i in 1..=steps {
        x = rk4_step(&mut field, (i - 1) as f64 * dt, &x, dt).map_err(|e| e.to_string())?;
        if i % every != 0 {
            continue;
        }
        let t = i as f64 * dt;
        let (rho, phi) = polar(&x)?;
        let v = 0.5 * phi * phi;
        let step_bound = (-2.0 * k * every as f64 * dt).exp() * v_prev;
        let total_bound = (-2.0 * k * t).exp() * v_start;
        worst = worst.max((v - step_bound) / step_bound.max(f64::MIN_POSITIVE)).max((v - total_bound) / total_bound.max(f64::MIN_POSITIVE));
        v_prev = v;
        times.push(t);
        xi.push(rho.hypot(phi));
    }
    let rate = fit_decay_rate(&times, &xi, 1e-12).unwrap_or(f64::NAN);
    Ok((
        worst <= 1e-6 && rate > 0.0 && phi0.abs() < PI,
        format!("largest relative excess over exp(-2k dt) contraction {worst:.2e}; fitted xi decay rate {rate:.4}"),
    ))
}

fn unicycle_perception() -> Check {
    let perceived = reproduce("unicycle-perception")?;
    let exact = reproduce("unicycle-exact")?;
    let p = read_json(&perceived.path().join("out/summary.json"))?;
    let e = read_json(&exact.path().join("out/summary.json"))?;
    let dist = |s: &Value| -> Result<f64, String> {
        let x = vec_of(s, "/final_state")?;
        Ok((x[0] + 0.5).hypot(x[1] + 0.5))
    };
    let cell = 4.0 / 16.0;
    let (dp, de) = (dist(&p)?, dist(&e)?);
    let (sp, se) = (f(&p, "/steady_state_error")?, f(&e, "/steady_state_error")?);
    Ok((
        dp <= 2.0 * cell && sp <= 2.0 * cell && de <= 1e-3 && se <= 1e-3 && sp > se,
        format!("perception: |r - r*| = {dp:.3e}, tail error {sp:.3e}; exact: |r - r*| = {de:.3e}, tail error {se:.3e}"),
    ))
}

fn sup(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn below(a: &Vector, b: &Vector) -> bool {
    a.iter().zip(b.iter()).all(|(p, q)| p <= q)
}

fn cover_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut agree, mut holds_seen, mut fails_seen) = (0, 0, 0);
    for _ in 0..100 {
        let dim = rng.gen_range(1..=3);
        let ns = rng.gen_range(1..=50);
        let np = rng.gen_range(1..=30);
        let point = |r: &mut ChaCha8Rng| Vector::from_iterator(dim, (0..dim).map(|_| (r.gen_range(0..8) as f64) * 0.125));
        let samples: Vec<Vector> = (0..ns).map(|_| point(&mut rng)).collect();
        let probes: Vec<Vector> = (0..np).map(|_| point(&mut rng)).collect();
        let rho = rng.gen_range(0..6) as f64 * 0.125;
        let plain: Vec<usize> = (0..np).filter(|&i| !samples.iter().any(|s| sup(s, &probes[i]) <= rho)).collect();
        let order: Vec<usize> = (0..np)
            .filter(|&i| {
                let x = &probes[i];
                !samples.iter().any(|w| below(w, x) && samples.iter().any(|z| below(x, z) && sup(w, z) <= rho))
            })
            .collect();
        let a = check_rho_cover(&samples, &probes, rho, CoverMode::Plain);
        let b = check_rho_cover(&samples, &probes, rho, CoverMode::PartialOrder);
        let ok = a.failures == plain
            && a.holds == plain.is_empty()
            && a.partial_order_ok == order.is_empty()
            && b.failures == order
            && b.holds == order.is_empty();
        agree += ok as usize;
        holds_seen += a.holds as usize + b.holds as usize;
        fails_seen += !a.holds as usize + !b.holds as usize;
    }
    Ok((
        agree == 100 && holds_seen > 0 && fails_seen > 0,
        format!("{agree}/100 instances agree ({holds_seen} covers hold, {fails_seen} fail)"),
    ))
}

fn gradient_and_lyapunov() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let box2 = ConvexRegion::boxed(vec![-2.0, -2.0], vec![2.0, 2.0]).map_err(|e| e.to_string())?;
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
    let b = Matrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.0]);
    let e = Matrix::identity(2, 2);
    let lti = lti_plant(a.clone(), b, e).map_err(|e| e.to_string())?;
    let lti_cost = CostSpec::new(
        CostFn::quadratic(vec![1.0, 2.0], vec![1.0, -0.5]).map_err(|e| e.to_string())?,
        CostFn::quadratic(vec![3.0, 1.0], vec![0.5, 1.0]).map_err(|e| e.to_string())?,
        box2,
        None,
    )
    .map_err(|e| e.to_string())?;
    let sis = sis_plant(4.0, 1.0 / 9.0, 1e-4).map_err(|e| e.to_string())?;
    let sis_cost = CostSpec::new(
        CostFn::quadratic(vec![2.0], vec![1.0 / 0.36]).map_err(|e| e.to_string())?,
        CostFn::quadratic(vec![2.0], vec![0.85]).map_err(|e| e.to_string())?,
        sis.input_box.clone().ok_or("sis has no input box")?,
        None,
    )
    .map_err(|e| e.to_string())?;
    let mut worst_grad: f64 = 0.0;
    for i in 0..100 {
        let (plant, cost, u, w) = if i % 2 == 0 {
            let u = Vector::from_iterator(2, (0..2).map(|_| rng.gen_range(-2.0..2.0)));
            let w = Vector::from_iterator(2, (0..2).map(|_| rng.gen_range(-0.5..0.5)));
            (&lti, &lti_cost, u, w)
        } else {
            (&sis, &sis_cost, Vector::from_element(1, rng.gen_range(1.0..30.0)), Vector::zeros(0))
        };
        let analytic = composite_gradient(cost, plant, &u, &w).map_err(|e| e.to_string())?;
        let numeric = centered_difference(|v| composite_cost(cost, plant, v, &w), &u, 1e-5).map_err(|e| e.to_string())?;
        worst_grad = worst_grad.max((analytic - &numeric).norm() / numeric.norm().max(1e-8));
    }
    let p = solve_lyapunov(&a, &Matrix::identity(2, 2)).map_err(|e| e.to_string())?;
    let mut worst_lyap: f64 = 0.0;
    for _ in 0..100 {
        let x = Vector::from_iterator(2, (0..2).map(|_| rng.gen_range(-3.0..3.0)));
        let u = Vector::from_iterator(2, (0..2).map(|_| rng.gen_range(-2.0..2.0)));
        let w = Vector::from_iterator(2, (0..2).map(|_| rng.gen_range(-0.5..0.5)));
        let h = lti.steady_state(&u, &w);
        let lyap = |y: &Vector| {
            let d = y - &h;
            (d.transpose() * &p * &d)[(0, 0)]
        };
        let fx = lti.field(&x, &u, &w);
        let tau = 1e-4;
        let wdot = (lyap(&(&x + &fx * tau)) - lyap(&(&x - &fx * tau))) / (2.0 * tau);
        worst_lyap = worst_lyap.max((wdot + (&x - &h).norm_squared()).abs());
    }
    Ok((
        worst_grad <= 1e-5 && worst_lyap <= 1e-8,
        format!("worst relative gradient gap {worst_grad:.2e}; worst |dW/dt + |x - h|^2| = {worst_lyap:.2e}"),
    ))
}

fn lti_config(eta_fraction: f64) -> String {
    format!(
        r#"name = "gate"
seed = 1
[plant]
kind = "lti"
a = [[-1.0, 0.0], [0.0, -1.0]]
b = [[1.0, 0.0], [0.0, 1.0]]
e = [[1.0, 0.0], [0.0, 1.0]]
[cost.phi]
kind = "quadratic"
weights = [1.0, 1.0]
reference = [1.0, -0.5]
[cost.psi]
kind = "quadratic"
weights = [1.0, 1.0]
reference = [0.5, 1.0]
[cost.region]
kind = "box"
lower = [-2.0, -2.0]
upper = [2.0, 2.0]
[controller]
eta_fraction = {eta_fraction:?}
mode = {{ kind = "exact" }}
[initial]
u0 = [0.0, 0.0]
[stepper]
dt = 0.01
t1 = 1.0
"#
    )
}

fn certification_gate() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut codes = Vec::new();
    let mut named = true;
    for frac in [2.0, 1.0, 0.5] {
        let path = dir.path().join(format!("gate_{frac}.toml"));
        std::fs::write(&path, lti_config(frac)).map_err(|e| e.to_string())?;
        let (code, stderr) = fbopt(dir.path(), &["certify", "--config", path.to_str().unwrap(), "--out", "out"])?;
        if code == 4 {
            named &= stderr.contains("gain condition");
        }
        codes.push(code);
    }
    let hand = eta_star(&GainCeilingInputs {
        mu: 1.0,
        ell: 2.0,
        s: 0.5,
        d3: 1.0,
        d4: 1.0,
        d5: 1.0,
        ell_hu: 1.0,
        ell_y: 2.0,
    })
    .map_err(|e| e.to_string())?;
    Ok((
        codes == [4, 4, 0] && named && (hand - 0.0138889).abs() <= 1e-7,
        format!("exit codes at 2, 1, 0.5 eta*: {codes:?}; hand-check eta* = {hand:.7}"),
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("envelope soundness on the LTI grid", 60.0, theorem_envelope),
        ("exact controller converges on sis-exact", 10.0, exact_convergence),
        ("state-perception plateau on sis-state-perception", 120.0, state_perception_plateau),
        ("cost-perception budget on sis-cost-perception", 120.0, cost_perception_budget),
        ("centered-difference order", 1.0, centered_difference_order),
        ("unicycle stabilizer contraction", 5.0, unicycle_stabilizer),
        ("unicycle perception vs exact", 180.0, unicycle_perception),
        ("cover checker against exhaustive oracle", 10.0, cover_oracle),
        ("gradient and Lyapunov numeric checks", 5.0, gradient_and_lyapunov),
        ("certification gate", 1.0, certification_gate),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok((ok, detail)) if secs > *budget => (false, format!("{detail}; over the {budget} s budget (ok = {ok})")),
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "criterion {:>2} {} {name}: {detail} [{secs:.2} s / {budget} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" }
        );
        failed += !pass as usize;
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all {} acceptance criteria passed", criteria.len());
}
