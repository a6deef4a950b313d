//! End-to-end acceptance checks, one pass/fail line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines as
//! they print. The criteria run sequentially inside one test so the per-check
//! runtime budgets are measured without interference.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rasa::harness::{
    convergence_diagnostics, emit_csv, final_metric, grid_search_alpha0, run_experiment,
    DatasetSource, MetricRecord, OptimizerKind, ProblemKind, RunConfig,
};
use rasa::manifold::{
    gaussian_matrix, inner, project, random_point, retract, ManifoldDescriptor, ManifoldKind,
    ManifoldPoint, TangentVector,
};
use rasa::optim::{
    adapt_gradient, assumption2_enforce, col_weights, kron_sqrt, rasa_step, rasa_update_weights,
    row_weights, rsgd_step, step_size, AdaptiveState, RasaConfig, RasaMode, StepSchedule,
};
use rasa::problems::{
    fd_directional_check, ica_cost, ica_grad, mc_grad, mc_solve_coefficients, pca_cost, pca_grad,
    Batch, IcaProblem, McProblem, PcaProblem,
};

type Matrix = DMatrix<f64>;
type Vector = DVector<f64>;
type Check = std::result::Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, budget: Duration, what: &str) -> Check {
    ensure(elapsed <= budget, || {
        format!(
            "{what} took {:.2}s, budget {:.0}s",
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        )
    })
}

fn random_tangent(x: &ManifoldPoint, rng: &mut ChaCha8Rng) -> TangentVector {
    let w = gaussian_matrix(rng, x.descriptor.n, x.descriptor.r);
    project(x, &w).unwrap()
}

// --- 1. Kronecker scaling agrees with the explicit vectorized form ---------

fn check_kronecker_oracle() -> Check {
    let start = Instant::now();
    let cfg = RasaConfig::with_defaults(RasaMode::Both, 0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    for trial in 0..500 {
        let n = rng.gen_range(1..=8);
        let r = rng.gen_range(1..=6);
        let g = gaussian_matrix(&mut rng, n, r);
        let l_hat = Vector::from_fn(n, |_, _| rng.gen_range(0.0..4.0));
        let r_hat = Vector::from_fn(r, |_, _| rng.gen_range(0.0..4.0));
        let scaled = adapt_gradient(&g, &l_hat, &r_hat, &cfg);

        let kron = kron_sqrt(
            &l_hat.map(|v| v + cfg.epsilon),
            &r_hat.map(|v| v + cfg.epsilon),
        );
        let gv = Vector::from_column_slice(g.as_slice());
        let explicit = gv.zip_map(&kron, |gi, ki| gi / ki.sqrt());
        let diff = (Vector::from_column_slice(scaled.as_slice()) - explicit)
            .amax();
        ensure(diff <= 1e-12, || {
            format!("trial {trial}: max abs diff {diff:e} > 1e-12")
        })?;
    }
    within_budget(start.elapsed(), Duration::from_secs(1), "kronecker oracle")
}

// --- 2. Projection/retraction invariants -----------------------------------

fn check_manifold_contract() -> Check {
    let start = Instant::now();
    for kind in [ManifoldKind::Stiefel, ManifoldKind::Grassmann] {
        let mut rng = ChaCha8Rng::seed_from_u64(2002);
        for trial in 0..1000 {
            let n = rng.gen_range(2..=12);
            let r = rng.gen_range(1..=n.min(6));
            let d = ManifoldDescriptor::new(kind, n, r).unwrap();
            let x = random_point(d, rng.gen());
            let w = gaussian_matrix(&mut rng, n, r);
            let xi = project(&x, &w).unwrap();

            let tangency = xi.tangency_defect();
            ensure(tangency <= 1e-10, || {
                format!("{kind:?} trial {trial}: tangency defect {tangency:e}")
            })?;

            let y = retract(&x, &xi).unwrap();
            let ortho = y.orthonormality_defect();
            ensure(ortho <= 1e-10, || {
                format!("{kind:?} trial {trial}: retraction orthonormality defect {ortho:e}")
            })?;

            let xi2 = project(&x, &xi.xi).unwrap();
            let idem = (&xi2.xi - &xi.xi).amax();
            ensure(idem <= 1e-12, || {
                format!("{kind:?} trial {trial}: projection idempotence defect {idem:e}")
            })?;

            // The projection residual is metric-orthogonal to the tangent space.
            let eta = random_tangent(&x, &mut rng);
            let residual = &w - &xi.xi;
            let ip = (residual.transpose() * &eta.xi).trace();
            let scale = 1.0 + residual.norm() * eta.xi.norm();
            ensure(ip.abs() / scale <= 1e-10, || {
                format!("{kind:?} trial {trial}: residual not orthogonal, <res,eta> = {ip:e}")
            })?;
        }
    }
    within_budget(start.elapsed(), Duration::from_secs(5), "manifold contract")
}

// --- 3. Finite-difference gradient checks ----------------------------------

fn check_fd_gradients() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let tol = 1e-5;

    for trial in 0..50 {
        let n = rng.gen_range(4..=10);
        let r = rng.gen_range(1..=3.min(n - 1));
        let num = rng.gen_range(10..=30);
        let d = ManifoldDescriptor::stiefel(n, r).unwrap();
        let z = gaussian_matrix(&mut rng, n, num);
        let p = PcaProblem::new(z, d).unwrap();
        let x = random_point(d, rng.gen());
        let b = Batch::full(num);
        let eta = random_tangent(&x, &mut rng);
        let g = pca_grad(&p, &x, &b).unwrap();
        let err = fd_directional_check(|pt| pca_cost(&p, pt, &b), &g, &x, &eta, 1e-6)
            .map_err(|e| format!("pca trial {trial}: {e}"))?;
        ensure(err <= tol, || format!("pca trial {trial}: fd error {err:e}"))?;
    }

    for trial in 0..50 {
        let n = rng.gen_range(3..=8);
        let r = rng.gen_range(1..=n.min(3));
        let num = rng.gen_range(4..=10);
        let d = ManifoldDescriptor::stiefel(n, r).unwrap();
        let cs: Vec<Matrix> = (0..num)
            .map(|_| {
                let a = gaussian_matrix(&mut rng, n, n);
                (&a + a.transpose()) * 0.5
            })
            .collect();
        let p = IcaProblem::new(cs, d).unwrap();
        let x = random_point(d, rng.gen());
        let b = Batch::full(num);
        let eta = random_tangent(&x, &mut rng);
        let g = ica_grad(&p, &x, &b).unwrap();
        let err = fd_directional_check(|pt| ica_cost(&p, pt, &b), &g, &x, &eta, 1e-6)
            .map_err(|e| format!("ica trial {trial}: {e}"))?;
        ensure(err <= tol, || format!("ica trial {trial}: fd error {err:e}"))?;
    }

    for trial in 0..50 {
        let n = rng.gen_range(5..=10);
        let r = rng.gen_range(1..=3.min(n - 2));
        let num_cols = rng.gen_range(6..=12);
        let d = ManifoldDescriptor::grassmann(n, r).unwrap();
        let mut triplets = Vec::new();
        for col in 0..num_cols {
            // Guarantee at least r+1 observed rows per column.
            let mut rows: Vec<usize> = (0..n).collect();
            for i in (1..rows.len()).rev() {
                rows.swap(i, rng.gen_range(0..=i));
            }
            let keep = rng.gen_range((r + 1)..=n);
            for &row in rows.iter().take(keep) {
                triplets.push((row, col, rng.sample::<f64, _>(StandardNormal)));
            }
        }
        let p = McProblem::new(&triplets, n, num_cols, 0.01, d).unwrap();
        let x = random_point(d, rng.gen());
        let b = Batch::full(num_cols);
        let eta = random_tangent(&x, &mut rng);
        let g = mc_grad(&p, &x, &b).unwrap();
        // The gradient holds the per-column coefficients fixed, so the
        // differenced cost freezes them at their base-point values.
        let frozen: Vec<Vector> = b
            .indices
            .iter()
            .map(|&i| mc_solve_coefficients(&p, &x, i).unwrap())
            .collect();
        let cost_fixed = |pt: &ManifoldPoint| -> rasa::Result<f64> {
            let mut acc = 0.0;
            for (k, &i) in b.indices.iter().enumerate() {
                for &(row, val) in &p.cols[i] {
                    let e = pt.u.row(row).transpose().dot(&frozen[k]) - val;
                    acc += e * e;
                }
            }
            Ok(acc / b.len() as f64)
        };
        let err = fd_directional_check(cost_fixed, &g, &x, &eta, 1e-6)
            .map_err(|e| format!("mc trial {trial}: {e}"))?;
        ensure(err <= tol, || format!("mc trial {trial}: fd error {err:e}"))?;
    }

    within_budget(start.elapsed(), Duration::from_secs(10), "fd gradients")
}

// --- 4. Hatted weights stay under the gradient-norm square and never shrink -

fn check_weight_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    for stream in 0..20 {
        let n = rng.gen_range(2..=10);
        let r = rng.gen_range(1..=6);
        let scale = rng.gen_range(0.1..3.0);
        let mut state = AdaptiveState::zeros(n, r);
        let mut h = 0.0f64;
        let mut prev_l = state.l_hat.clone();
        let mut prev_r = state.r_hat.clone();
        for step in 0..200 {
            let g = gaussian_matrix(&mut rng, n, r) * scale;
            h = h.max(g.norm());
            state = rasa_update_weights(&state, &g, 0.99);
            let bound = h * h + 1e-9;
            let l_max = state.l_hat.max();
            let r_max = state.r_hat.max();
            ensure(l_max <= bound && r_max <= bound, || {
                format!(
                    "stream {stream} step {step}: weight {:e} above H^2 {bound:e}",
                    l_max.max(r_max)
                )
            })?;
            let v_max = kron_sqrt(&state.l_hat, &state.r_hat).max();
            ensure(v_max <= bound, || {
                format!("stream {stream} step {step}: v_hat {v_max:e} above H^2 {bound:e}")
            })?;
            for i in 0..n {
                ensure(state.l_hat[i] >= prev_l[i], || {
                    format!("stream {stream} step {step}: l_hat[{i}] decreased")
                })?;
            }
            for j in 0..r {
                ensure(state.r_hat[j] >= prev_r[j], || {
                    format!("stream {stream} step {step}: r_hat[{j}] decreased")
                })?;
            }
            prev_l = state.l_hat.clone();
            prev_r = state.r_hat.clone();
        }
    }
    Ok(())
}

// --- 5. Variable-beta running maximum dominates the squared-gradient mean --

fn check_varbeta_lower_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5005);
    for stream in 0..20 {
        let n = rng.gen_range(2..=8);
        let r = rng.gen_range(1..=5);
        let mut l = Vector::zeros(n);
        let mut rvec = Vector::zeros(r);
        let mut v_hat = Vector::zeros(n * r);
        let mut sum_sq = Vector::zeros(n * r);
        for t in 1..=200u64 {
            let g = gaussian_matrix(&mut rng, n, r) * rng.gen_range(0.2..2.0);
            let beta = 1.0 - 1.0 / (t as f64);
            let (p_hat, q_hat) = assumption2_enforce(&row_weights(&g), &col_weights(&g), &g);
            l = &l * beta + p_hat * (1.0 - beta);
            rvec = &rvec * beta + q_hat * (1.0 - beta);
            v_hat = v_hat.zip_map(&kron_sqrt(&l, &rvec), f64::max);
            let gv = Vector::from_column_slice(g.as_slice());
            sum_sq += gv.component_mul(&gv);
            for j in 0..n * r {
                let avg = sum_sq[j] / t as f64;
                ensure(v_hat[j] >= avg - 1e-9, || {
                    format!(
                        "stream {stream} t={t} entry {j}: v_hat {:e} < mean square {avg:e}",
                        v_hat[j]
                    )
                })?;
            }
        }
    }
    Ok(())
}

// --- 6. Unit adaptive weights reduce the update to plain SGD, bitwise ------

fn check_rsgd_equivalence() -> Check {
    // With hats pinned at 1 and a subnormal epsilon, the scaling divides by
    // exactly 1.0, so both paths feed identical bits into project/retract.
    let eps = f64::MIN_POSITIVE;
    assert_eq!((1.0f64 + eps).powf(0.25), 1.0);
    let cfg = RasaConfig::new(RasaMode::Both, 0.99, eps, 4.0, 4.0).unwrap();
    let schedule = StepSchedule::new(0.2).unwrap();
    let d = ManifoldDescriptor::stiefel(7, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6006);

    let mut x_a = random_point(d, 60);
    let mut x_b = x_a.clone();
    let mut state = AdaptiveState {
        t: 0,
        l: Vector::zeros(7),
        l_hat: Vector::from_element(7, 1.0),
        r: Vector::zeros(3),
        r_hat: Vector::from_element(3, 1.0),
    };
    for step in 0..100u64 {
        // Small gradients keep the running weights strictly below the pinned 1s.
        let w = gaussian_matrix(&mut rng, 7, 3) * 0.05;
        let g_a = project(&x_a, &w).unwrap();
        let (next_a, next_state) = rasa_step(&x_a, &g_a, &state, &cfg, schedule).unwrap();
        ensure(
            next_state.l_hat == state.l_hat && next_state.r_hat == state.r_hat,
            || format!("step {step}: pinned weights moved"),
        )?;

        // The adaptive step re-projects its scaled gradient, so the reference
        // path applies the same (idempotent) projection before retracting.
        let g_b = project(&x_b, &w).unwrap();
        let g_b2 = project(&x_b, &g_b.xi).unwrap();
        let next_b = rsgd_step(&x_b, &g_b2, step_size(schedule, next_state.t)).unwrap();

        ensure(next_a.u == next_b.u, || {
            format!(
                "step {step}: iterates differ, max abs diff {:e}",
                (&next_a.u - &next_b.u).amax()
            )
        })?;
        x_a = next_a;
        x_b = next_b;
        state = next_state;
    }
    Ok(())
}

// --- 7. Rank-one columns make left-only and two-sided scaling collinear ----

fn check_r1_collinearity() -> Check {
    let cfg_lr = RasaConfig::with_defaults(RasaMode::Both, 0.99).unwrap();
    let cfg_l = RasaConfig::with_defaults(RasaMode::LeftOnly, 0.99).unwrap();
    let d = ManifoldDescriptor::stiefel(8, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7007);
    let mut x = random_point(d, 70);
    let mut state = AdaptiveState::zeros(8, 1);
    let schedule = StepSchedule::new(0.1).unwrap();
    for step in 0..100u64 {
        let w = gaussian_matrix(&mut rng, 8, 1);
        let g = project(&x, &w).unwrap();
        state = rasa_update_weights(&state, &g.xi, cfg_lr.beta);
        let dir_lr = project(&x, &adapt_gradient(&g.xi, &state.l_hat, &state.r_hat, &cfg_lr))
            .unwrap();
        let dir_l = project(&x, &adapt_gradient(&g.xi, &state.l_hat, &state.r_hat, &cfg_l))
            .unwrap();
        let cos = inner(&dir_lr, &dir_l).unwrap() / (dir_lr.norm() * dir_l.norm());
        ensure(cos >= 1.0 - 1e-12, || {
            format!("step {step}: cosine {cos} below 1 - 1e-12")
        })?;
        x = rsgd_step(&x, &g, step_size(schedule, state.t)).unwrap();
    }
    Ok(())
}

// --- Desk-scale experiment helpers ----------------------------------------

fn desk_config(problem: ProblemKind, optimizer: OptimizerKind) -> RunConfig {
    let (manifold, num_points, n, r, noise_sd, density) = match problem {
        ProblemKind::Pca => (ManifoldKind::Stiefel, 1000, 50, 5, 0.0, 1.0),
        ProblemKind::Ica => (ManifoldKind::Stiefel, 200, 20, 10, 0.0, 1.0),
        ProblemKind::Mc => (ManifoldKind::Grassmann, 500, 100, 5, 0.01, 0.3),
    };
    // PCA decay matches the figure-scale instance; the ICA family gets the
    // same conditioning so the planted top-r directions carry a clear margin.
    let condition = match problem {
        ProblemKind::Pca | ProblemKind::Ica => 10.0,
        ProblemKind::Mc => 1.0,
    };
    RunConfig {
        problem,
        optimizer,
        manifold,
        alpha0: vec![0.5, 0.1, 0.05, 0.01],
        beta: 0.99,
        epsilon: 1e-8,
        batch_size: 10,
        iters: 5000,
        seed: 2024,
        lambda: 0.01,
        dataset: DatasetSource::Synthetic {
            num_points,
            n,
            r,
            condition,
            noise_sd,
            density,
            seed: Some(77),
        },
        record_every: None,
    }
}

fn best_final(cfg: &RunConfig, metric: &str) -> Result<(f64, Vec<MetricRecord>), String> {
    let outcome = grid_search_alpha0(cfg).map_err(|e| e.to_string())?;
    let mut best: Option<(f64, Vec<MetricRecord>)> = None;
    for (_, records) in outcome.runs {
        let v = final_metric(&records, metric).map_err(|e| e.to_string())?;
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, records));
        }
    }
    Ok(best.expect("grid nonempty"))
}

// --- 8. Desk-scale PCA: tuned adaptive run beats the gap target and SGD ----

fn check_desk_pca() -> Result<Vec<MetricRecord>, String> {
    let start = Instant::now();
    let (rasa_gap, records) = best_final(&desk_config(ProblemKind::Pca, OptimizerKind::RasaLr), "optgap")?;
    let (rsgd_gap, _) = best_final(&desk_config(ProblemKind::Pca, OptimizerKind::Rsgd), "optgap")?;
    ensure(rasa_gap <= 1e-3, || {
        format!("best rasa-lr optgap {rasa_gap:e} > 1e-3")
    })?;
    ensure(rasa_gap <= rsgd_gap, || {
        format!("rasa-lr optgap {rasa_gap:e} worse than rsgd {rsgd_gap:e}")
    })?;
    within_budget(start.elapsed(), Duration::from_secs(60), "desk pca")?;
    Ok(records)
}

// --- 9. Desk-scale ICA: relative gap against the exact diagonalizer --------

fn check_desk_ica() -> Check {
    let start = Instant::now();
    let (gap, _) = best_final(&desk_config(ProblemKind::Ica, OptimizerKind::RasaLr), "reloptgap")?;
    ensure(gap <= 1e-3, || format!("best rasa-lr reloptgap {gap:e} > 1e-3"))?;
    within_budget(start.elapsed(), Duration::from_secs(60), "desk ica")
}

// --- 10. Desk-scale MC: holdout RMSE target and SGD comparison -------------

fn check_desk_mc() -> Check {
    let start = Instant::now();
    let (rasa_rmse, _) = best_final(&desk_config(ProblemKind::Mc, OptimizerKind::RasaLr), "rmse_test")?;
    let (rsgd_rmse, _) = best_final(&desk_config(ProblemKind::Mc, OptimizerKind::Rsgd), "rmse_test")?;
    ensure(rasa_rmse <= 0.05, || {
        format!("best rasa-lr holdout rmse {rasa_rmse:e} > 0.05")
    })?;
    ensure(rasa_rmse <= rsgd_rmse, || {
        format!("rasa-lr rmse {rasa_rmse:e} worse than rsgd {rsgd_rmse:e}")
    })?;
    within_budget(start.elapsed(), Duration::from_secs(120), "desk mc")
}

// --- 11. Repeated runs produce identical results ---------------------------

fn check_determinism() -> Check {
    let mut cfg = desk_config(ProblemKind::Pca, OptimizerKind::RasaLr);
    cfg.iters = 500;
    cfg.alpha0 = vec![0.1];
    let r1 = run_experiment(&cfg, 0.1).map_err(|e| e.to_string())?;
    let r2 = run_experiment(&cfg, 0.1).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p1 = dir.path().join("a.csv");
    let p2 = dir.path().join("b.csv");
    emit_csv(&r1, &p1).map_err(|e| e.to_string())?;
    emit_csv(&r2, &p2).map_err(|e| e.to_string())?;
    let t1 = std::fs::read_to_string(&p1).map_err(|e| e.to_string())?;
    let t2 = std::fs::read_to_string(&p2).map_err(|e| e.to_string())?;

    // elapsed_sec is wall-clock, so it is masked; every other byte must match.
    let mask = |text: &str| -> Vec<String> {
        text.lines()
            .map(|line| {
                let parts: Vec<&str> = line.split(',').collect();
                if parts.len() == 4 {
                    format!("{},{},{}", parts[0], parts[2], parts[3])
                } else {
                    line.to_string()
                }
            })
            .collect()
    };
    let (m1, m2) = (mask(&t1), mask(&t2));
    ensure(m1.len() == m2.len(), || {
        format!("line counts differ: {} vs {}", m1.len(), m2.len())
    })?;
    for (i, (a, b)) in m1.iter().zip(m2.iter()).enumerate() {
        ensure(a == b, || format!("line {} differs: `{a}` vs `{b}`", i + 1))?;
    }
    Ok(())
}

// --- 12. The min-gradient rate diagnostic stays bounded --------------------

fn check_rate_shape(pca_records: &[MetricRecord]) -> Check {
    let diag = convergence_diagnostics(pca_records).map_err(|e| e.to_string())?;
    let at_100 = diag
        .checkpoints
        .iter()
        .find(|(t, _, _)| *t >= 100)
        .ok_or_else(|| "no checkpoint at t >= 100".to_string())?;
    let last = diag.checkpoints.last().unwrap();
    ensure(last.2.is_finite(), || format!("final ratio {} not finite", last.2))?;
    ensure(last.2 <= 10.0 * at_100.2, || {
        format!(
            "ratio grew: {:e} at t={} vs {:e} at t={}",
            last.2, last.0, at_100.2, at_100.0
        )
    })
}

// --- driver ----------------------------------------------------------------

#[test]
fn acceptance() {
    let mut failures: Vec<String> = Vec::new();
    let mut report = |name: &str, res: Check| match res {
        Ok(()) => println!("PASS {name}"),
        Err(msg) => {
            println!("FAIL {name}: {msg}");
            failures.push(format!("{name}: {msg}"));
        }
    };

    report("kronecker-oracle", check_kronecker_oracle());
    report("manifold-contract", check_manifold_contract());
    report("fd-gradients", check_fd_gradients());
    report("weight-bound", check_weight_bound());
    report("varbeta-lower-bound", check_varbeta_lower_bound());
    report("rsgd-equivalence", check_rsgd_equivalence());
    report("r1-collinearity", check_r1_collinearity());

    let mut pca_records = Vec::new();
    report(
        "desk-pca",
        match check_desk_pca() {
            Ok(records) => {
                pca_records = records;
                Ok(())
            }
            Err(e) => Err(e),
        },
    );
    report("desk-ica", check_desk_ica());
    report("desk-mc", check_desk_mc());
    report("determinism", check_determinism());
    report(
        "rate-shape",
        if pca_records.is_empty() {
            Err("desk pca produced no records".to_string())
        } else {
            check_rate_shape(&pca_records)
        },
    );

    assert!(
        failures.is_empty(),
        "{} acceptance criteria failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}
