//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured values. Benchmark-scale checks run single-threaded
//! where a runtime budget applies.

mod common;

use std::time::Instant;

use gmsfem::adaptive::{adaptive_loop, AdaptiveParams};
use gmsfem::analysis::lemma1_certificate;
use gmsfem::assembly::{assemble_mass, assemble_stiffness, solve_dirichlet, Region};
use gmsfem::coarse::{build_coarse_space, snapshot_ratio_pct, solve_coarse};
use gmsfem::config::RunConfig;
use gmsfem::experiment::{
    run_buffer_study, run_compare, run_oversampling_study, run_skin_compare, Session,
};
use gmsfem::field::{generate_channels, CoefficientField};
use gmsfem::grid::build_geometry;
use gmsfem::snapshot::{random_snapshots, SnapshotMode};
use gmsfem::spectral::{reduce_all, snapshot_gram, total_dimension, OfflineBasis};
use nalgebra::{DMatrix, DVector};

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("local pool")
        .install(f)
}

fn cfg_with(pairs: &[(&str, &str)]) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in pairs {
        cfg.apply(k, v).expect("valid config pair");
    }
    cfg.validate().expect("valid config");
    cfg
}

#[test]
fn criterion_01_exactness_constant_coefficient() {
    let start = Instant::now();
    let cfg = cfg_with(&[("contrast", "1"), ("k_nb", "0"), ("k_nb_list", "0")]);
    let session: Session<f64> = Session::new(&cfg).unwrap();
    let bases = reduce_all(
        &session.geom,
        &session.field,
        &session.weight,
        &cfg.plan(SnapshotMode::Random, 0, 0, 3),
    )
    .unwrap();
    let (report, _) = session.solve_with_bases(&bases, 0.0).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(report.l2() <= 1e-7, "L2 error {} above 1e-7 %", report.l2());
    assert!(report.h1() <= 1e-7, "H1 error {} above 1e-7 %", report.h1());
    assert!(elapsed < 5.0, "took {elapsed:.2} s, budget 5 s");
    println!(
        "criterion 01 exactness: PASS (l2 {:.2e} %, h1 {:.2e} %, {:.2} s)",
        report.l2(),
        report.h1(),
        elapsed
    );
}

#[test]
fn criterion_02_geometry_arithmetic() {
    let geom = build_geometry(10, 10, 10).unwrap();
    let nb = geom.neighborhood(geom.coarse_node_id(5, 5), 3).unwrap();
    assert_eq!(nb.full_snapshot_count(), 104);

    let ratio = snapshot_ratio_pct(&geom, 14, 3);
    assert!((ratio - 1400.0 / 104.0).abs() < 1e-12, "ratio {ratio}");
    assert_eq!(format!("{ratio:.2}"), "13.46");

    // Exact offline dimensions across the sweep, from the real pipeline.
    let cfg = cfg_with(&[("k_nb", "25")]);
    let session: Session<f64> = Session::new(&cfg).unwrap();
    let bases = reduce_all(
        &session.geom,
        &session.field,
        &session.weight,
        &cfg.plan(SnapshotMode::Random, 25, 4, 3),
    )
    .unwrap();
    let expected = [
        (5usize, 526usize),
        (10, 931),
        (15, 1336),
        (20, 1741),
        (25, 2146),
    ];
    let mut dims = Vec::new();
    for (k, want) in expected {
        let cut: Vec<OfflineBasis<f64>> = bases
            .iter()
            .map(|b| b.truncated((k + 1).min(b.mode_count())).unwrap())
            .collect();
        let dim = total_dimension(&cut);
        assert_eq!(dim, want, "k_nb = {k}");
        dims.push(dim);
    }
    println!("criterion 02 geometry arithmetic: PASS (104 snapshots, ratio 13.46, dims {dims:?})");
}

#[test]
fn criterion_03_error_decay_and_random_factor() {
    let start = Instant::now();
    let cfg = RunConfig::default(); // contrast 1e4 channel field, seed 1
    let rows = single_threaded(|| {
        let session: Session<f64> = Session::new(&cfg).unwrap();
        run_compare(&session).unwrap()
    });
    let elapsed = start.elapsed().as_secs_f64();

    let full: Vec<f64> = rows.iter().map(|r| r.full.unwrap().1).collect();
    let rand: Vec<f64> = rows.iter().map(|r| r.random.1).collect();
    assert!(
        full.windows(2).all(|w| w[1] < w[0]),
        "full-mode energy errors not strictly decreasing: {full:?}"
    );
    assert!(
        rand.windows(2).all(|w| w[1] < w[0]),
        "random-mode energy errors not strictly decreasing: {rand:?}"
    );
    for (i, &k) in cfg.k_nb_list.iter().enumerate() {
        if k >= 10 {
            let factor = rand[i] / full[i];
            assert!(
                factor <= 2.0,
                "random/full factor {factor:.3} above 2.0 at k_nb = {k}"
            );
        }
    }
    assert!(elapsed < 600.0, "took {elapsed:.1} s, budget 600 s");
    println!(
        "criterion 03 error decay: PASS (full {:?}, random {:?}, {:.1} s single-threaded)",
        full.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>(),
        rand.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>(),
        elapsed
    );
}

#[test]
fn criterion_04_oversampling_effect() {
    let cfg = cfg_with(&[("k_nb", "10"), ("field_seed", "8"), ("t_list", "0,2,4,7")]);
    let session: Session<f64> = Session::new(&cfg).unwrap();
    let rows = run_oversampling_study(&session).unwrap();
    let h1: Vec<f64> = rows.iter().map(|r| r.h1_pct).collect();
    let ratio = h1[0] / h1[1];
    assert!(ratio >= 1.3, "t=0 vs t=2 ratio {ratio:.3} below 1.3");
    assert!(
        (h1[2] - h1[1]).abs() <= 1.5,
        "t=4 differs from t=2 by {:.3} %",
        (h1[2] - h1[1]).abs()
    );
    assert!(
        (h1[3] - h1[1]).abs() <= 1.5,
        "t=7 differs from t=2 by {:.3} %",
        (h1[3] - h1[1]).abs()
    );
    println!(
        "criterion 04 oversampling: PASS (h1 {:?}, t0/t2 = {ratio:.3})",
        h1.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>()
    );
}

#[test]
fn criterion_05_buffer_effect() {
    let cfg = cfg_with(&[("k_nb", "20"), ("p_bf_list", "4,10,15,20")]);
    let session: Session<f64> = Session::new(&cfg).unwrap();
    let rows = run_buffer_study(&session).unwrap();
    assert_eq!(rows.len(), 4);
    let at = |p: usize| rows.iter().find(|r| r.param == p).unwrap().h1_pct;
    let (h4, h20) = (at(4), at(20));
    assert!(
        h20 <= h4 + 0.5,
        "p_bf=20 error {h20:.3} above p_bf=4 error {h4:.3} + 0.5"
    );
    println!("criterion 05 buffer effect: PASS (p4 {h4:.3} %, p20 {h20:.3} %)");
}

#[test]
fn criterion_06_skin_mode_ordering() {
    let mut reports = Vec::new();
    for field_seed in ["7", "8", "9"] {
        let cfg = cfg_with(&[("k_nb_list", "10"), ("field_seed", field_seed)]);
        let session: Session<f64> = Session::new(&cfg).unwrap();
        let rows = run_skin_compare(&session).unwrap();
        let row = &rows[0];
        assert_eq!(row.dim, 931);
        assert!(
            row.skin.1 <= row.random.1,
            "field seed {field_seed}: skin {:.3} above random {:.3}",
            row.skin.1,
            row.random.1
        );
        reports.push(format!(
            "seed {field_seed}: {:.2} <= {:.2}",
            row.skin.1, row.random.1
        ));
    }
    println!("criterion 06 skin ordering: PASS ({})", reports.join("; "));
}

#[test]
fn criterion_07_lemma_certificates() {
    let start = Instant::now();
    let geom = build_geometry(4, 4, 2).unwrap();
    let field: CoefficientField<f64> = generate_channels(&geom, 1e3, 3).unwrap();
    let nbhd = geom.neighborhood(geom.coarse_node_id(2, 2), 1).unwrap();
    assert_eq!(
        nbhd.omega.element_count(),
        16,
        "4x4-element toy neighborhood"
    );

    let mut max_ratio = 0.0f64;
    let mut m_full = 0;
    for seed in 1..=5u64 {
        let cert = lemma1_certificate(&geom, &field, &field, &nbhd, 2, 6, seed, 50).unwrap();
        assert!(cert.draw_ok, "seed {seed}: sketch block rank deficient");
        assert!(
            cert.pass,
            "seed {seed}: bound violated, ratio {}",
            cert.max_ratio
        );
        assert_eq!(cert.tests.len(), 50);
        for t in &cert.tests {
            assert!(
                t.optimal <= t.observed * (1.0 + 1e-8) + 1e-12,
                "seed {seed}: optimal {} above constructed {}",
                t.optimal,
                t.observed
            );
        }
        max_ratio = max_ratio.max(cert.max_ratio);
        m_full = cert.m;
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "took {elapsed:.2} s, budget 30 s");
    println!(
        "criterion 07 lemma certificates: PASS (k=2, l=6, m={m_full}, 250 tests, max ratio {max_ratio:.3e}, {elapsed:.2} s)"
    );
}

#[test]
fn criterion_08_oracle_equivalence() {
    // Local harmonic solves against a dense elimination oracle.
    let geom = build_geometry(3, 3, 2).unwrap();
    let field: CoefficientField<f64> = generate_channels(&geom, 1e4, 5).unwrap();
    let nbhd = geom.neighborhood(geom.coarse_node_id(1, 1), 1).unwrap();
    let region = Region::rect(&geom, &nbhd.omega_plus).unwrap();
    assert!(region.len() <= 200);
    let a_op = assemble_stiffness(&geom, &field, &region);
    let dense = a_op.to_dense();
    let mut fixed = Vec::new();
    for (li, &n) in region.nodes.iter().enumerate() {
        let (ix, iy) = geom.node_coords(n);
        if nbhd.omega_plus.on_node_boundary(ix, iy) {
            fixed.push(li);
        }
    }
    let mut worst_solve = 0.0f64;
    for probe in 0..4 {
        let mut bc = DVector::<f64>::zeros(region.len());
        for (j, &li) in fixed.iter().enumerate() {
            bc[li] = ((j + probe) as f64 * 0.7).sin();
        }
        let ours = solve_dirichlet(&a_op, None, &fixed, &bc).unwrap();
        let oracle = common::dirichlet_oracle(&dense, &fixed, &bc, None);
        worst_solve = worst_solve.max((ours - oracle).amax());
    }
    assert!(
        worst_solve <= 1e-9,
        "harmonic solve deviates by {worst_solve:.3e}"
    );

    // Generalized eigenpairs against the Jacobi oracle.
    let snaps = random_snapshots(&geom, &field, &nbhd, 4, 2, 9).unwrap();
    let omega_region = Region::rect(&geom, &nbhd.omega).unwrap();
    let a_om = assemble_stiffness(&geom, &field, &omega_region);
    let m_om = assemble_mass(&geom, &field, &omega_region);
    let basis = gmsfem::spectral::offline_reduce_with(&snaps, &a_om, &m_om, 5).unwrap();
    let (a_off, s_off) = snapshot_gram(&snaps.rows, &a_om, &m_om);
    let (oracle_vals, oracle_vecs) = common::jacobi_generalized(&a_off, &s_off);
    let scale = oracle_vals.last().unwrap().abs().max(1.0);
    let mut worst_eig = 0.0f64;
    for k in 0..basis.mode_count() {
        worst_eig = worst_eig.max((basis.eigenvalues[k] - oracle_vals[k]).abs() / scale);
        // Vector match up to sign when the eigenvalue is simple.
        let gap_ok = (k == 0 || (oracle_vals[k] - oracle_vals[k - 1]).abs() > 1e-6 * scale)
            && (k + 1 >= oracle_vals.len()
                || (oracle_vals[k + 1] - oracle_vals[k]).abs() > 1e-6 * scale);
        if gap_ok {
            let ours: DVector<f64> = basis.coeffs.column(k).into();
            let theirs: DVector<f64> = oracle_vecs.column(k).into();
            let dot = ours.dot(&(&s_off * &theirs));
            let dev = (&ours * dot.signum() - theirs).amax();
            assert!(dev <= 1e-8, "eigenvector {k} deviates by {dev:.3e}");
        }
    }
    assert!(worst_eig <= 1e-9, "eigenvalues deviate by {worst_eig:.3e}");

    // Coarse coefficients against an explicit dense Galerkin oracle.
    let cfg = cfg_with(&[
        ("coarse_nx", "3"),
        ("coarse_ny", "3"),
        ("fine_per_coarse", "2"),
        ("oversample_t", "1"),
        ("k_nb", "1"),
        ("p_bf", "1"),
        ("contrast", "1000"),
    ]);
    let session: Session<f64> = Session::new(&cfg).unwrap();
    assert!(session.geom.fine_node_count() <= 200);
    let bases = reduce_all(
        &session.geom,
        &session.field,
        &session.weight,
        &cfg.plan(SnapshotMode::Random, 1, 1, 1),
    )
    .unwrap();
    let g = cfg.g;
    let space = build_coarse_space(&session.geom, &session.pou, &bases, move |x, y| {
        g.eval(x, y)
    })
    .unwrap();
    let sol = solve_coarse(&space, &session.geom, &session.field, |_, _| 0.0).unwrap();

    let n = session.geom.fine_node_count();
    let dim = space.dim();
    let mut phi = DMatrix::<f64>::zeros(dim, n);
    for d in 0..dim {
        let mut unit = DVector::<f64>::zeros(dim);
        unit[d] = 1.0;
        phi.row_mut(d)
            .copy_from(&space.downscale(&session.geom, &unit).transpose());
    }
    let a_dense = {
        let region = Region::full(&session.geom);
        assemble_stiffness(&session.geom, &session.field, &region).to_dense()
    };
    let a_c = &phi * &a_dense * phi.transpose();
    let free: Vec<usize> = (0..dim).filter(|&d| space.dirichlet[d].is_none()).collect();
    let nf = free.len();
    let mut sys = DMatrix::<f64>::zeros(nf, nf);
    let mut rhs = DVector::<f64>::zeros(nf);
    for (i, &di) in free.iter().enumerate() {
        for (j, &dj) in free.iter().enumerate() {
            sys[(i, j)] = a_c[(di, dj)];
        }
        let mut s = 0.0;
        for (d, bc) in space.dirichlet.iter().enumerate() {
            if let Some(v) = bc {
                s -= a_c[(di, d)] * v;
            }
        }
        rhs[i] = s;
    }
    let oracle_free = common::gauss_solve(&sys, &rhs);
    let mut worst_coeff = 0.0f64;
    for (i, &di) in free.iter().enumerate() {
        worst_coeff = worst_coeff.max((sol.coeffs[di] - oracle_free[i]).abs());
    }
    assert!(
        worst_coeff <= 1e-9,
        "coarse coefficients deviate by {worst_coeff:.3e}"
    );

    println!(
        "criterion 08 oracle equivalence: PASS (solve {worst_solve:.1e}, eig {worst_eig:.1e}, coarse {worst_coeff:.1e})"
    );
}

#[test]
fn criterion_09_adaptive_dominance() {
    let start = Instant::now();
    let mut successes = Vec::new();
    for seed in 1..=5u64 {
        let seed_str = seed.to_string();
        let cfg = cfg_with(&[("seed", &seed_str), ("k_nb", "25")]);
        let session: Session<f64> = Session::new(&cfg).unwrap();
        // Uniform reference: random snapshots with 25 modes per node.
        let bases = reduce_all(
            &session.geom,
            &session.field,
            &session.weight,
            &cfg.plan(SnapshotMode::Random, 25, 4, 3),
        )
        .unwrap();
        let uniform_dim = total_dimension(&bases);
        assert_eq!(uniform_dim, 2146);
        let ratio = snapshot_ratio_pct(&session.geom, 29, 3);
        let (uniform, _) = session.solve_with_bases(&bases, ratio).unwrap();

        // Adaptive run from 5 modes per node until it beats the uniform
        // error.
        let params = AdaptiveParams {
            theta: 0.5,
            c_nb: 2,
            c_bf: 1,
            max_iter: 45,
            target_h1_pct: uniform.h1(),
        };
        let plan = cfg.plan(SnapshotMode::Random, 5, 4, 3);
        let rows = adaptive_loop(
            &session.geom,
            &session.field,
            &session.weight,
            &session.pou,
            &session.u_fine,
            &plan,
            &params,
            |x, y| x + y,
            |_, _| 0.0,
        )
        .unwrap();
        assert_eq!(rows[0].dim, 526, "adaptive run must start from 526 dofs");
        let budget = (1.05 * uniform_dim as f64).floor() as usize;
        let hit = rows
            .iter()
            .find(|r| r.h1_pct <= uniform.h1())
            .filter(|r| r.dim <= budget);
        if let Some(row) = hit {
            successes.push(format!(
                "seed {seed}: {:.2} % at dim {} (uniform {:.2} % at {uniform_dim})",
                row.h1_pct,
                row.dim,
                uniform.h1()
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        successes.len() >= 3,
        "adaptive dominance held on only {} of 5 seeds",
        successes.len()
    );
    println!(
        "criterion 09 adaptive dominance: PASS on {} of 5 seeds ({}; {:.1} s)",
        successes.len(),
        successes.join("; "),
        elapsed
    );
}

#[test]
fn criterion_10_byte_identical_csv() {
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_gmsfem");
    let base = [
        "--coarse_nx",
        "4",
        "--coarse_ny",
        "4",
        "--fine_per_coarse",
        "4",
        "--oversample_t",
        "2",
        "--k_nb_list",
        "2,3",
        "--k_nb",
        "3",
        "--contrast",
        "1000",
        "--max_iter",
        "3",
    ];
    for sub in ["compare", "adaptive", "lemma-check"] {
        let run = |threads: &str| {
            let out = Command::new(bin)
                .arg(sub)
                .args(base)
                .args(["--threads", threads])
                .output()
                .expect("binary runs");
            assert!(out.status.success(), "{sub} failed: {:?}", out);
            out.stdout
        };
        let a = run("1");
        let b = run("4");
        let c = run("1");
        assert_eq!(a, b, "{sub}: thread count changed the output");
        assert_eq!(a, c, "{sub}: repeated run changed the output");
    }
    println!("criterion 10 determinism: PASS (compare/adaptive/lemma-check byte-identical across runs and thread counts)");
}
