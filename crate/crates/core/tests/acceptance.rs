//! Acceptance checks, one test per criterion. Each prints a single
//! `PASS`/`FAIL` line before asserting.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use schmidt_core::diophantine::{
    badness_witness, badness_witness_between, continued_fraction, rate, simplex_hyperplane, window, window_ratio,
    AffineMap, MAX_CF_TERMS,
};
use schmidt_core::dimension::{box_dimension, box_scales, dim_lower_bound, limit_bound, pack_count, packing_constant_m};
use schmidt_core::game::{check_transcript, Transcript};
use schmidt_core::geometry::{Matrix, Point};
use schmidt_core::ifs::IfSystem;
use schmidt_core::measure::{decay_samples, DOUBLING_RATIO};
use schmidt_core::pipeline::{
    certify_ifs, random_simplex_instance, run_winning_game, AdversaryKind, CertifyOptions, RunOptions, WinningRun,
    AUTO_ALPHA_DIVISOR,
};
use schmidt_core::strategy::{stage_windows, TargetFamily};

fn verdict(criterion: u32, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let pass = pass && elapsed < limit;
    println!(
        "{} criterion {criterion}: {detail} ({:.2?}, limit {:?})",
        if pass { "PASS" } else { "FAIL" },
        elapsed,
        limit
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn cantor() -> Arc<IfSystem> {
    Arc::new(IfSystem::preset("cantor3").unwrap())
}

fn p1(x: f64) -> Point {
    Point::new(&[x]).unwrap()
}

#[test]
fn criterion_01_moran_dimensions() {
    let t = Instant::now();
    let expected = [
        ("cantor3", 0.6309297536),
        ("sierpinski", 1.5849625007),
        ("koch", 1.2618595071),
    ];
    let mut worst = 0f64;
    let mut detail = Vec::new();
    for (name, want) in expected {
        let got = IfSystem::preset(name).unwrap().moran_dimension();
        // Closed forms: log 2 / log 3, log 3 / log 2, log 4 / log 3.
        let closed = match name {
            "cantor3" => 2f64.ln() / 3f64.ln(),
            "sierpinski" => 3f64.ln() / 2f64.ln(),
            _ => 4f64.ln() / 3f64.ln(),
        };
        worst = worst.max((got - want).abs()).max((got - closed).abs());
        detail.push(format!("{name} {got:.10}"));
    }
    verdict(
        1,
        worst < 1e-9,
        t.elapsed(),
        Duration::from_secs(1),
        &format!("{}; max error {worst:.1e}", detail.join(", ")),
    );
}

/// Rank of an integer matrix by fraction-free (Bareiss) elimination.
fn bareiss_rank(rows: &[Vec<i128>]) -> usize {
    let mut m: Vec<Vec<i128>> = rows.to_vec();
    let n_rows = m.len();
    let n_cols = m.first().map_or(0, Vec::len);
    let mut rank = 0;
    let mut prev = 1i128;
    for col in 0..n_cols {
        let Some(pivot) = (rank..n_rows).find(|&r| m[r][col] != 0) else {
            continue;
        };
        m.swap(rank, pivot);
        for r in rank + 1..n_rows {
            for c in col + 1..n_cols {
                m[r][c] = (m[rank][col] * m[r][c] - m[r][col] * m[rank][c]) / prev;
            }
            m[r][col] = 0;
        }
        prev = m[rank][col];
        rank += 1;
        if rank == n_rows {
            break;
        }
    }
    rank
}

/// Every `(p, q)` with `q` in window `k` and `|Λ(p/q) − x| ≤ ρ`, by scanning
/// a box around `q Λ⁻¹(x)` whose half-width bounds `q ρ ‖A⁻¹‖`.
fn brute_targets(lam: &AffineMap, theta: f64, k: u32, x: &Point, rho: f64) -> Vec<(Vec<i64>, u64)> {
    let n = lam.dim();
    let (q_lo, q_hi) = window(window_ratio(theta, n), k);
    let inv = lam.matrix().inverse().unwrap();
    let frob = inv.row_major().iter().map(|v| v * v).sum::<f64>().sqrt();
    let base = lam.pull_back(x);
    let tol = 1e-12 * rho + 8.0 * f64::EPSILON * (x.max_abs() + 1.0);
    let mut out = Vec::new();
    let q_start = q_lo.ceil().max(1.0) as u64;
    let mut q = q_start;
    while (q as f64) < q_hi {
        let qf = q as f64;
        let half = qf * rho * frob * (1.0 + 1e-9) + 1e-9;
        let lo: Vec<i64> = (0..n).map(|i| (qf * base[i] - half).ceil() as i64).collect();
        let hi: Vec<i64> = (0..n).map(|i| (qf * base[i] + half).floor() as i64).collect();
        if lo.iter().zip(&hi).all(|(a, b)| a <= b) {
            let mut p = lo.clone();
            'odometer: loop {
                let img = lam.image_of(&p, q);
                if img.dist(x) <= rho + tol {
                    out.push((p.clone(), q));
                }
                for i in 0..n {
                    if p[i] < hi[i] {
                        p[i] += 1;
                        continue 'odometer;
                    }
                    p[i] = lo[i];
                }
                break;
            }
        }
        q += 1;
    }
    out
}

#[test]
fn criterion_02_simplex_lemma_oracle() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut nonempty = 0;
    let mut max_points = 0;
    for n in 1..=3usize {
        for i in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + n as u64);
            rng.set_stream(i);
            let inst = random_simplex_instance(n, &mut rng).unwrap();
            let rho = inst.theta.powi(inst.k as i32 - 1) * inst.r;
            let oracle = brute_targets(&inst.lam, inst.theta, inst.k, &inst.x, rho);
            let rows: Vec<Vec<i128>> = oracle
                .iter()
                .map(|(p, q)| p.iter().map(|&v| v as i128).chain([*q as i128]).collect())
                .collect();
            // Homogeneous rank = affine span dimension + 1.
            let span = bareiss_rank(&rows).saturating_sub(1);
            nonempty += usize::from(!oracle.is_empty());
            max_points = max_points.max(oracle.len());
            match simplex_hyperplane(&inst.lam, inst.theta, inst.k, &inst.x, inst.r) {
                Ok(out) => {
                    if !oracle.is_empty() && span > n - 1 {
                        failures.push(format!("N={n} #{i}: oracle span {span}"));
                    }
                    if out.residual >= 1e-9 * inst.r {
                        failures.push(format!("N={n} #{i}: residual {:.2e}", out.residual / inst.r));
                    }
                    if out.targets.len() != oracle.len() {
                        failures.push(format!("N={n} #{i}: {} targets vs oracle {}", out.targets.len(), oracle.len()));
                    }
                }
                Err(e) => failures.push(format!("N={n} #{i}: {e}")),
            }
        }
    }
    for f in failures.iter().take(5) {
        println!("  {f}");
    }
    verdict(
        2,
        failures.is_empty(),
        t.elapsed(),
        Duration::from_secs(60),
        &format!(
            "3000 instances, {nonempty} with targets (max {max_points} points), {} failures",
            failures.len()
        ),
    );
}

#[test]
fn criterion_03_rate_identity() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0f64;
    for _ in 0..100 {
        let alpha: f64 = rng.random_range(0.01..0.99);
        let beta: f64 = rng.random_range(0.01..0.99);
        for n in 1..=3 {
            for k in 1..=40u32 {
                let (_, f_k) = stage_windows(alpha, beta, n, k);
                let want = (alpha * beta).powi(k as i32);
                worst = worst.max((rate(f_k, n) - want).abs() / want);
            }
        }
    }
    verdict(
        3,
        worst < 1e-12,
        t.elapsed(),
        Duration::from_secs(1),
        &format!("max relative error {worst:.2e} over 100 (alpha, beta), N <= 3, k <= 40"),
    );
}

fn cantor_run(ifs: &Arc<IfSystem>, families: Vec<TargetFamily>, beta: f64, seed: u64) -> WinningRun {
    let cert = certify_ifs(ifs, &CertifyOptions::default(), seed).unwrap();
    let opts = RunOptions {
        alpha: cert.alpha_prime / AUTO_ALPHA_DIVISOR,
        beta,
        target_radius: 1e-10,
        seed,
        adversary: AdversaryKind::Greedy,
        initial_radius: None,
    };
    run_winning_game(ifs.clone(), &cert, families, &opts).unwrap()
}

/// Number of leading quotients whose convergent denominators stay below `limit`.
fn prefix_below(quotients: &[u64], limit: f64) -> usize {
    let (mut q_prev, mut q_cur) = (0f64, 1f64);
    let mut count = 0;
    for &a in quotients {
        (q_prev, q_cur) = (q_cur, a as f64 * q_cur + q_prev);
        if q_cur >= limit {
            break;
        }
        count += 1;
    }
    count
}

#[test]
fn criterion_04_cantor_winning_runs() {
    let t = Instant::now();
    let ifs = cantor();
    let mut runs = 0;
    let mut witness_fail = Vec::new();
    let mut cf_fail = Vec::new();
    let mut trusted_lengths = Vec::new();
    let mut long_horizon = Vec::new();
    for beta in [0.1, 0.25, 0.5] {
        for seed in 0..10 {
            let run = cantor_run(&ifs, vec![TargetFamily::new(AffineMap::identity(1))], beta, seed);
            runs += 1;
            let fam = &run.families[0];
            let delta_g = fam.state.delta_guaranteed;
            let w = fam.witness.as_ref().map_or(f64::NAN, |w| w.delta_hat);
            if !(fam.passes && w >= 0.99 * delta_g && run.all_pass()) {
                witness_fail.push(format!("beta {beta} seed {seed}: witness {w:.3e} vs delta {delta_g:.3e}"));
            }
            let cf = continued_fraction(run.outcome_point[0], MAX_CF_TERMS).unwrap();
            let max_q = cf.max_trusted_quotient().unwrap_or(0) as f64;
            trusted_lengths.push(cf.trusted);
            long_horizon.push(prefix_below(&cf.quotients, 2f64.powi(52)));
            if cf.trusted < 12 || max_q > 1.0 / delta_g + 2.0 {
                cf_fail.push(format!(
                    "beta {beta} seed {seed}: x = {}, trusted {} {:?}",
                    run.outcome_point[0],
                    cf.trusted,
                    cf.trusted_quotients()
                ));
            }
        }
    }
    for f in witness_fail.iter().chain(&cf_fail) {
        println!("  {f}");
    }
    println!(
        "  trusted prefix lengths {:?}; prefix lengths with q_k < 2^52 {:?}",
        trusted_lengths, long_horizon
    );
    verdict(
        4,
        witness_fail.is_empty() && cf_fail.is_empty(),
        t.elapsed(),
        Duration::from_secs(300),
        &format!(
            "{runs} runs: {} witness failures, {} continued-fraction failures",
            witness_fail.len(),
            cf_fail.len()
        ),
    );
}

#[test]
fn criterion_05_two_map_intersection() {
    let t = Instant::now();
    let ifs = cantor();
    let second = AffineMap::new(Matrix::from_rows(&[vec![2.0]]).unwrap(), p1(1.0 / 7.0)).unwrap();
    let mut failures = Vec::new();
    let mut runs = 0;
    for beta in [0.1, 0.25, 0.5] {
        for seed in 0..10 {
            let families = vec![TargetFamily::new(AffineMap::identity(1)), TargetFamily::new(second.clone())];
            let run = cantor_run(&ifs, families, beta, seed);
            runs += 1;
            for fam in &run.families {
                let w = fam.witness.as_ref().map_or(f64::NAN, |w| w.delta_hat);
                if w.is_nan() || w < 0.99 * fam.state.delta_guaranteed {
                    failures.push(format!(
                        "beta {beta} seed {seed} family {}: witness {w:.3e} vs delta {:.3e}",
                        fam.family, fam.state.delta_guaranteed
                    ));
                }
            }
            if !run.all_pass() {
                failures.push(format!("beta {beta} seed {seed}: checks failed"));
            }
        }
    }
    for f in &failures {
        println!("  {f}");
    }
    verdict(
        5,
        failures.is_empty(),
        t.elapsed(),
        Duration::from_secs(300),
        &format!("{runs} runs with identity and x -> 2x + 1/7, {} failures", failures.len()),
    );
}

/// Left endpoints of the level-`m` Cantor intervals, in units of `3^-m`.
fn cantor_endpoints(m: u32) -> Vec<u64> {
    (0..1u64 << m)
        .map(|bits| (0..m).map(|i| ((bits >> (m - 1 - i)) & 1) * 2 * 3u64.pow(m - 1 - i)).sum())
        .collect()
}

#[test]
fn criterion_06_packing_counts() {
    let t = Instant::now();
    let ifs = cantor();
    let cert = certify_ifs(&ifs, &CertifyOptions::default(), 6).unwrap();
    let m_const = packing_constant_m(cert.a_pl, cert.b_pl, 1).unwrap();
    let delta = ifs.moran_dimension();
    let mut problems = Vec::new();
    for m in 1..=16u32 {
        let beta = 3f64.powi(-(m as i32));
        if m <= 8 {
            // Each level-m interval has length β, so it holds at most one
            // centre of a 2β-separated family: the optimum is 2^m, attained
            // by the left endpoints.
            let ends = cantor_endpoints(m);
            let unit = 3u64.pow(m);
            let separated = ends.iter().enumerate().all(|(i, a)| ends[i + 1..].iter().all(|b| a.abs_diff(*b) >= 2));
            let inside = ends.iter().all(|a| *a < unit);
            if !(separated && inside && ends.len() == 1 << m) {
                problems.push(format!("m={m}: endpoint oracle inconsistent"));
            }
        }
        let n = pack_count(&ifs, &p1(0.0), 1.0, beta).unwrap();
        if n < 1 << m {
            problems.push(format!("m={m}: pack_count {n} < {}", 1u64 << m));
        }
        let promised = m_const * beta.powf(-delta);
        if (n as f64) < promised {
            problems.push(format!("m={m}: {n} < M beta^-delta = {promised:.2}"));
        }
    }
    for p in &problems {
        println!("  {p}");
    }
    verdict(
        6,
        problems.is_empty(),
        t.elapsed(),
        Duration::from_secs(60),
        &format!("m = 1..16, M = {m_const:.4}, {} problems", problems.len()),
    );
}

#[test]
fn criterion_07_dimension_sweep() {
    let t = Instant::now();
    let ifs = cantor();
    let alpha = 0.05;
    let delta = ifs.moran_dimension();
    let mut bounds = Vec::new();
    for m in [4, 8, 12, 16] {
        let beta = 3f64.powi(-m);
        let n = pack_count(&ifs, &p1(0.0), 1.0, beta).unwrap();
        bounds.push(dim_lower_bound(n, alpha, beta).unwrap());
    }
    let monotone = bounds.windows(2).all(|w| w[1] > w[0]);
    let last = *bounds.last().unwrap();
    let target = limit_bound(delta, alpha, 3f64.powi(-16));
    let points = ifs.chaos_sample(200_000, 7).unwrap();
    let box_dim = box_dimension(&points, &box_scales(&ifs, points.len())).unwrap();
    let pass = monotone && last >= 0.53 && (last - target).abs() <= 0.01 && (box_dim - 0.63).abs() <= 0.05;
    verdict(
        7,
        pass,
        t.elapsed(),
        Duration::from_secs(120),
        &format!(
            "bounds {:?}, target {target:.4}, box dimension {box_dim:.4}",
            bounds.iter().map(|b| (b * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
}

/// The Cantor function, which is the distribution function of the natural
/// measure.
fn cantor_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let (mut y, mut acc, mut w) = (x, 0.0, 0.5);
    for _ in 0..60 {
        y *= 3.0;
        let d = y.floor();
        y -= d;
        match d as u8 {
            0 => {}
            1 => return acc + w,
            _ => acc += w,
        }
        w *= 0.5;
    }
    acc
}

fn cantor_mass(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        0.0
    } else {
        cantor_cdf(hi) - cantor_cdf(lo)
    }
}

#[test]
fn criterion_08_measure_certificate() {
    let t = Instant::now();
    let ifs = cantor();
    let cert = certify_ifs(&ifs, &CertifyOptions::default(), 8).unwrap();
    let delta = ifs.moran_dimension();
    let samples = decay_samples(&ifs, &cert.plan, cert.n_planes, &cert.eps_ratios).unwrap();
    let mut violations = 0;
    let mut checked = 0;
    for s in &samples {
        let Some(bound_ratio) = s.ratio else { continue };
        let (x, r) = (s.ball.center[0], s.ball.radius);
        let eps = s.eps_ratio * r;
        // In one dimension the plane is the point {n z = offset} with n = ±1.
        let t0 = s.plane.offset() * s.plane.normal()[0];
        let ball_mass = cantor_mass(x - r, x + r);
        let slab_mass = cantor_mass((x - r).max(t0 - eps), (x + r).min(t0 + eps));
        let envelope = cert.c * s.eps_ratio.powf(cert.a_decay);
        checked += 1;
        if bound_ratio > envelope || (ball_mass > 0.0 && slab_mass / ball_mass > envelope) {
            violations += 1;
        }
    }
    let doubling_floor = cert.a_pl / cert.b_pl * DOUBLING_RATIO.powf(delta);
    let pass = (cert.delta_hat - delta).abs() <= 0.05
        && cert.d >= doubling_floor
        && cert.a_decay > 0.3
        && violations == 0
        && checked > 0;
    verdict(
        8,
        pass,
        t.elapsed(),
        Duration::from_secs(120),
        &format!(
            "delta_hat {:.4}, D {:.4} >= {doubling_floor:.4}, a {:.4}, C {:.4}, {violations} envelope violations in {checked} samples",
            cert.delta_hat, cert.d, cert.a_decay, cert.c
        ),
    );
}

#[test]
fn criterion_09_badness_witnesses() {
    let t = Instant::now();
    let cases = [
        ("golden", (5f64.sqrt() - 1.0) / 2.0, 1.0 / 5f64.sqrt()),
        ("sqrt2-1", 2f64.sqrt() - 1.0, 1.0 / 8f64.sqrt()),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, x, want) in cases {
        let w = badness_witness(&p1(x), 100_000).unwrap();
        let tail = badness_witness_between(&p1(x), 300, 100_000).unwrap();
        let ok = (w.delta_hat - want).abs() <= 0.02 * want;
        pass &= ok;
        detail.push(format!("{name} {:.4} (want {want:.4})", w.delta_hat));
        println!(
            "  {name}: min over q <= 1e5 is {:.6} at p/q = {:?}/{}; over 300 <= q <= 1e5 it is {:.6}",
            w.delta_hat, w.argmin.p, w.argmin.q, tail.delta_hat
        );
    }
    let half = badness_witness(&p1(0.5), 2).unwrap().delta_hat;
    pass &= half == 0.0;
    detail.push(format!("1/2 {half}"));
    verdict(9, pass, t.elapsed(), Duration::from_secs(10), &detail.join(", "));
}

#[test]
fn criterion_10_transcript_replay() {
    let t = Instant::now();
    let mut checked = 0;
    let mut problems = Vec::new();
    for (preset, seeds) in [("cantor3", 0..6u64), ("sierpinski", 0..2), ("koch", 0..2)] {
        let ifs = Arc::new(IfSystem::preset(preset).unwrap());
        let n = ifs.dim();
        for seed in seeds {
            let cert = certify_ifs(&ifs, &CertifyOptions::default(), seed).unwrap();
            for adversary in [AdversaryKind::Greedy, AdversaryKind::Concentric] {
                let opts = RunOptions {
                    alpha: cert.alpha_prime / AUTO_ALPHA_DIVISOR,
                    beta: 0.25,
                    target_radius: 1e-8,
                    seed,
                    adversary,
                    initial_radius: None,
                };
                let run = run_winning_game(ifs.clone(), &cert, vec![TargetFamily::new(AffineMap::identity(n))], &opts)
                    .unwrap();
                let transcript = run.transcript.as_ref().unwrap();
                // Replay the serialised form, not the in-memory one.
                let parsed = Transcript::from_jsonl(&transcript.to_jsonl()).unwrap();
                let replay = check_transcript(&parsed, &ifs);
                checked += 1;
                if !replay.is_clean() || !run.separation.violations.is_empty() {
                    problems.push(format!(
                        "{preset} seed {seed} {adversary:?}: {} replay, {} separation violations",
                        replay.violations.len(),
                        run.separation.violations.len()
                    ));
                }
            }
        }
    }
    for p in &problems {
        println!("  {p}");
    }
    verdict(
        10,
        problems.is_empty(),
        t.elapsed(),
        Duration::from_secs(300),
        &format!("{checked} transcripts replayed, {} with violations", problems.len()),
    );
}
