//! Experiment drivers behind the CLI subcommands: mode comparisons,
//! buffer/oversampling sweeps, the skin-layer study, the adaptive loop,
//! and the analysis certificates, each rendered as deterministic CSV.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::adaptive::{adaptive_loop, AdaptiveParams, AdaptiveRow};
use crate::analysis::{lemma1_certificate, BoundCertificate};
use crate::assembly::{
    assemble_mass, assemble_stiffness, fine_reference_solve, Region, SparseOperator,
};
use crate::coarse::{
    build_coarse_space, error_report_with, snapshot_ratio_pct, solve_coarse, ErrorReport,
};
use crate::config::{KappaTildeMode, RunConfig};
use crate::error::Result;
use crate::field::CoefficientField;
use crate::grid::GridGeometry;
use crate::pou::{build_pou, weighted_kappa, PartitionOfUnity};
use crate::scalar::{to_f64, Real};
use crate::snapshot::{full_snapshots, random_snapshots, skin_snapshots};
use crate::spectral::{offline_reduce_capped, OfflineBasis};

/// Shared state of one experiment: grid, fields, partition of unity, the
/// fine reference solution, and the norm matrices.
pub struct Session<T> {
    pub cfg: RunConfig,
    pub geom: GridGeometry,
    pub field: CoefficientField<T>,
    pub weight: CoefficientField<T>,
    pub pou: PartitionOfUnity<T>,
    pub a_full: SparseOperator<T>,
    pub m_kappa: SparseOperator<T>,
    pub u_fine: DVector<T>,
}

impl<T: Real> Session<T> {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let geom = cfg.geometry()?;
        let field = cfg.coefficient_field::<T>(&geom)?;
        let pou = build_pou(&geom, &field, cfg.pou_mode)?;
        let weight = match cfg.kappa_tilde_mode {
            KappaTildeMode::Kappa => field.clone(),
            KappaTildeMode::PouWeighted => weighted_kappa(&geom, &field, &pou),
        };
        let region = Region::full(&geom);
        let a_full = assemble_stiffness(&geom, &field, &region);
        let m_kappa = assemble_mass(&geom, &field, &region);
        let g = cfg.g;
        let f = cfg.f;
        let u_fine = fine_reference_solve(
            &geom,
            &field,
            move |x, y| f.eval(x, y),
            move |x, y| g.eval(x, y),
        )?;
        Ok(Session {
            cfg: cfg.clone(),
            geom,
            field,
            weight,
            pou,
            a_full,
            m_kappa,
            u_fine,
        })
    }

    /// Solves the coarse problem for one family of bases and reports the
    /// errors of the downscaled solution.
    pub fn solve_with_bases(
        &self,
        bases: &[OfflineBasis<T>],
        ratio_pct: f64,
    ) -> Result<(ErrorReport<T>, DVector<T>)> {
        let g = self.cfg.g;
        let f = self.cfg.f;
        let space = build_coarse_space(&self.geom, &self.pou, bases, move |x, y| g.eval(x, y))?;
        let sol = solve_coarse(&space, &self.geom, &self.field, move |x, y| f.eval(x, y))?;
        let report = error_report_with(
            &self.a_full,
            &self.m_kappa,
            &self.u_fine,
            &sol.u_h,
            sol.dim,
            ratio_pct,
        )?;
        Ok((report, sol.u_h))
    }

    /// Constant-only bases for every coarse node.
    fn constant_bases(&self) -> Vec<OfflineBasis<T>> {
        (0..self.geom.coarse_node_count())
            .map(|cn| OfflineBasis::constant_only(cn, self.geom.neighborhood_rect(cn)))
            .collect()
    }

    /// Interior coarse nodes in index order.
    fn interior_nodes(&self) -> Vec<usize> {
        (0..self.geom.coarse_node_count())
            .filter(|&cn| self.geom.is_interior_coarse_node(cn))
            .collect()
    }

    /// Energy of the fine reference solution.
    pub fn fine_energy(&self) -> T {
        self.a_full.quad_form(&self.u_fine, &self.u_fine)
    }
}

/// Per-node state reused across a sweep. The full-sweep reduction is
/// shared and truncated by modes (its snapshot set does not depend on the
/// sweep point); randomized and skin sets keep their drawn rows so every
/// sweep point reduces exactly the snapshot set a fresh run would draw.
struct NodeReductions<T> {
    node: usize,
    full: Option<OfflineBasis<T>>,
    random: Option<crate::snapshot::SnapshotSet<T>>,
    skin: Option<crate::snapshot::SnapshotSet<T>>,
    a_op: SparseOperator<T>,
    m_op: SparseOperator<T>,
}

fn reduce_node<T: Real>(
    session: &Session<T>,
    node: usize,
    t: usize,
    want_full: Option<usize>,
    want_random: Option<(usize, usize)>,
    want_skin: Option<(usize, usize)>,
) -> Result<NodeReductions<T>> {
    let cfg = &session.cfg;
    let geom = &session.geom;
    let nbhd = geom.neighborhood_with_skin(node, t, cfg.skin_inner, cfg.skin_outer)?;
    let region = Region::rect(geom, &nbhd.omega)?;
    let a_op = assemble_stiffness(geom, &session.field, &region);
    let m_op = assemble_mass(geom, &session.weight, &region);

    let full = match want_full {
        Some(max_k) => {
            let snaps = full_snapshots(geom, &session.field, &nbhd)?;
            Some(offline_reduce_capped(&snaps, &a_op, &m_op, max_k + 1)?)
        }
        None => None,
    };
    let random = match want_random {
        Some((max_k, p_bf)) => Some(random_snapshots(
            geom,
            &session.field,
            &nbhd,
            max_k,
            p_bf,
            cfg.seed,
        )?),
        None => None,
    };
    let skin = match want_skin {
        Some((max_k, p_bf)) => Some(skin_snapshots(
            geom,
            &session.field,
            &session.weight,
            &nbhd,
            max_k + p_bf,
        )?),
        None => None,
    };
    Ok(NodeReductions {
        node,
        full,
        random,
        skin,
        a_op,
        m_op,
    })
}

fn bases_at<T: Real>(
    session: &Session<T>,
    reductions: &[NodeReductions<T>],
    pick: impl Fn(&NodeReductions<T>) -> Result<OfflineBasis<T>>,
) -> Result<Vec<OfflineBasis<T>>> {
    let mut bases = session.constant_bases();
    for red in reductions {
        bases[red.node] = pick(red)?;
    }
    Ok(bases)
}

/// One row of the full-vs-random comparison table.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub dim: usize,
    pub ratio_pct: f64,
    /// Absent when the full pipeline is skipped at this size.
    pub full: Option<(f64, f64)>,
    pub random: (f64, f64),
}

/// Runs the full and randomized pipelines side by side over the
/// configured mode counts, on the same field and seed.
pub fn run_compare<T: Real>(session: &Session<T>) -> Result<Vec<CompareRow>> {
    let cfg = &session.cfg;
    let t = cfg.oversample_t;
    let max_k = *cfg.k_nb_list.iter().max().expect("nonempty list");
    let max_full_k = cfg
        .k_nb_list
        .iter()
        .copied()
        .filter(|&k| cfg.full_k_max.map_or(true, |cap| k <= cap))
        .max();

    let interior = session.interior_nodes();
    let reductions: Result<Vec<NodeReductions<T>>> = interior
        .par_iter()
        .map(|&cn| reduce_node(session, cn, t, max_full_k, Some((max_k, cfg.p_bf)), None))
        .collect();
    let reductions = reductions?;

    let mut rows = Vec::new();
    for &k in &cfg.k_nb_list {
        let ratio = snapshot_ratio_pct(&session.geom, k + cfg.p_bf, t);
        let run_full = cfg.full_k_max.map_or(true, |cap| k <= cap);
        let full = if run_full {
            let bases = bases_at(session, &reductions, |red| {
                let b = red.full.as_ref().expect("full reduction present");
                b.truncated((k + 1).min(b.mode_count()))
            })?;
            let (report, _) = session.solve_with_bases(&bases, ratio)?;
            Some((report.l2(), report.h1()))
        } else {
            None
        };
        let bases = bases_at(session, &reductions, |red| {
            let snaps = red.random.as_ref().expect("random draws present");
            let cut = snaps.truncated(k, cfg.p_bf)?;
            offline_reduce_capped(&cut, &red.a_op, &red.m_op, k + 1)
        })?;
        let (report, _) = session.solve_with_bases(&bases, ratio)?;
        rows.push(CompareRow {
            dim: report.dim,
            ratio_pct: ratio,
            full,
            random: (report.l2(), report.h1()),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct StudyRow {
    /// Swept parameter (`p_bf` or `t`).
    pub param: usize,
    pub dim: usize,
    pub ratio_pct: f64,
    pub l2_pct: f64,
    pub h1_pct: f64,
}

/// Sweeps the buffer count at fixed `k_nb` (randomized snapshots).
pub fn run_buffer_study<T: Real>(session: &Session<T>) -> Result<Vec<StudyRow>> {
    let cfg = &session.cfg;
    let k = cfg.k_nb;
    let t = cfg.oversample_t;
    let max_p = *cfg.p_bf_list.iter().max().expect("nonempty list");

    let interior = session.interior_nodes();
    let reductions: Result<
        Vec<(
            usize,
            crate::snapshot::SnapshotSet<T>,
            SparseOperator<T>,
            SparseOperator<T>,
        )>,
    > = interior
        .par_iter()
        .map(|&cn| {
            let nbhd =
                session
                    .geom
                    .neighborhood_with_skin(cn, t, cfg.skin_inner, cfg.skin_outer)?;
            let region = Region::rect(&session.geom, &nbhd.omega)?;
            let a_op = assemble_stiffness(&session.geom, &session.field, &region);
            let m_op = assemble_mass(&session.geom, &session.weight, &region);
            let snaps = random_snapshots(&session.geom, &session.field, &nbhd, k, max_p, cfg.seed)?;
            Ok((cn, snaps, a_op, m_op))
        })
        .collect();
    let reductions = reductions?;

    let mut rows = Vec::new();
    for &p in &cfg.p_bf_list {
        let mut bases = session.constant_bases();
        for (cn, snaps, a_op, m_op) in &reductions {
            let cut = snaps.truncated(k, p)?;
            bases[*cn] = offline_reduce_capped(&cut, a_op, m_op, k + 1)?;
        }
        let ratio = snapshot_ratio_pct(&session.geom, k + p, t);
        let (report, _) = session.solve_with_bases(&bases, ratio)?;
        rows.push(StudyRow {
            param: p,
            dim: report.dim,
            ratio_pct: ratio,
            l2_pct: report.l2(),
            h1_pct: report.h1(),
        });
    }
    Ok(rows)
}

/// Sweeps the oversampling width (randomized snapshots).
pub fn run_oversampling_study<T: Real>(session: &Session<T>) -> Result<Vec<StudyRow>> {
    let cfg = &session.cfg;
    let k = cfg.k_nb;
    let mut rows = Vec::new();
    for &t in &cfg.t_list {
        let interior = session.interior_nodes();
        let reductions: Result<Vec<NodeReductions<T>>> = interior
            .par_iter()
            .map(|&cn| reduce_node(session, cn, t, None, Some((k, cfg.p_bf)), None))
            .collect();
        let bases = bases_at(session, &reductions?, |red| {
            let snaps = red.random.as_ref().expect("random draws present");
            offline_reduce_capped(snaps, &red.a_op, &red.m_op, k + 1)
        })?;
        let ratio = snapshot_ratio_pct(&session.geom, k + cfg.p_bf, t);
        let (report, _) = session.solve_with_bases(&bases, ratio)?;
        rows.push(StudyRow {
            param: t,
            dim: report.dim,
            ratio_pct: ratio,
            l2_pct: report.l2(),
            h1_pct: report.h1(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct SkinCompareRow {
    pub dim: usize,
    pub ratio_pct: f64,
    pub skin: (f64, f64),
    pub random: (f64, f64),
}

/// Skin-layer boundary modes against randomized snapshots at equal
/// offline dimension.
pub fn run_skin_compare<T: Real>(session: &Session<T>) -> Result<Vec<SkinCompareRow>> {
    let cfg = &session.cfg;
    let t = cfg.oversample_t;
    let max_k = *cfg.k_nb_list.iter().max().expect("nonempty list");

    let interior = session.interior_nodes();
    let reductions: Result<Vec<NodeReductions<T>>> = interior
        .par_iter()
        .map(|&cn| {
            reduce_node(
                session,
                cn,
                t,
                None,
                Some((max_k, cfg.p_bf)),
                Some((max_k, cfg.p_bf)),
            )
        })
        .collect();
    let reductions = reductions?;

    let mut rows = Vec::new();
    for &k in &cfg.k_nb_list {
        let ratio = snapshot_ratio_pct(&session.geom, k + cfg.p_bf, t);
        let skin_bases = bases_at(session, &reductions, |red| {
            let snaps = red.skin.as_ref().expect("skin draws present");
            let cut = snaps.truncated(k, cfg.p_bf)?;
            offline_reduce_capped(&cut, &red.a_op, &red.m_op, k + 1)
        })?;
        let (skin_report, _) = session.solve_with_bases(&skin_bases, ratio)?;
        let rand_bases = bases_at(session, &reductions, |red| {
            let snaps = red.random.as_ref().expect("random draws present");
            let cut = snaps.truncated(k, cfg.p_bf)?;
            offline_reduce_capped(&cut, &red.a_op, &red.m_op, k + 1)
        })?;
        let (rand_report, _) = session.solve_with_bases(&rand_bases, ratio)?;
        debug_assert_eq!(skin_report.dim, rand_report.dim);
        rows.push(SkinCompareRow {
            dim: skin_report.dim,
            ratio_pct: ratio,
            skin: (skin_report.l2(), skin_report.h1()),
            random: (rand_report.l2(), rand_report.h1()),
        });
    }
    Ok(rows)
}

/// Adaptive enrichment driver.
pub fn run_adaptive<T: Real>(session: &Session<T>) -> Result<Vec<AdaptiveRow>> {
    let cfg = &session.cfg;
    let plan = cfg.plan(cfg.snapshot_mode, cfg.k_nb, cfg.p_bf, cfg.oversample_t);
    let params = AdaptiveParams {
        theta: cfg.theta,
        c_nb: cfg.c_nb,
        c_bf: cfg.c_bf,
        max_iter: cfg.max_iter,
        target_h1_pct: cfg.target_err,
    };
    let g = cfg.g;
    let f = cfg.f;
    adaptive_loop(
        &session.geom,
        &session.field,
        &session.weight,
        &session.pou,
        &session.u_fine,
        &plan,
        &params,
        move |x, y| g.eval(x, y),
        move |x, y| f.eval(x, y),
    )
}

/// Bound certificates for every interior neighborhood of the configured
/// grid.
pub fn run_lemma_check<T: Real>(session: &Session<T>) -> Result<Vec<BoundCertificate<T>>> {
    let cfg = &session.cfg;
    let interior = session.interior_nodes();
    interior
        .par_iter()
        .map(|&cn| {
            let nbhd = session.geom.neighborhood_with_skin(
                cn,
                cfg.oversample_t,
                cfg.skin_inner,
                cfg.skin_outer,
            )?;
            let ops = crate::analysis::lemma_operands(
                &session.geom,
                &session.field,
                &session.weight,
                &nbhd,
            )?;
            let l = cfg.lemma_l.min(ops.m());
            lemma1_certificate(
                &session.geom,
                &session.field,
                &session.weight,
                &nbhd,
                cfg.lemma_k,
                l,
                cfg.seed,
                cfg.lemma_tests,
            )
        })
        .collect()
}

/// `%.6g`-style formatting: six significant digits, fixed or scientific
/// notation by magnitude, trailing zeros trimmed.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let neg = x < 0.0;
    let a = x.abs();
    // Rounded scientific form decides the exponent (handles carries).
    let sci = format!("{:.5e}", a);
    let (mant_str, exp_str) = sci.split_once('e').expect("scientific format");
    let mut mant = mant_str.to_string();
    let mut exp: i32 = exp_str.parse().expect("exponent");
    if mant.starts_with("10") {
        mant = "1.00000".to_string();
        exp += 1;
    }
    let body = if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, a);
        trim_zeros(&fixed)
    } else {
        let m = trim_zeros(&mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn opt_pair(v: &Option<(f64, f64)>) -> (String, String) {
    match v {
        Some((l2, h1)) => (fmt_g(*l2), fmt_g(*h1)),
        None => ("-".to_string(), "-".to_string()),
    }
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("dim,ratio,l2_full,h1_full,l2_rand,h1_rand\n");
    for r in rows {
        let (l2f, h1f) = opt_pair(&r.full);
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.dim,
            fmt_g(r.ratio_pct),
            l2f,
            h1f,
            fmt_g(r.random.0),
            fmt_g(r.random.1)
        ));
    }
    out
}

pub fn study_csv(param_name: &str, rows: &[StudyRow]) -> String {
    let mut out = format!("{param_name},dim,ratio,l2_rand,h1_rand\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.param,
            r.dim,
            fmt_g(r.ratio_pct),
            fmt_g(r.l2_pct),
            fmt_g(r.h1_pct)
        ));
    }
    out
}

pub fn skin_csv(rows: &[SkinCompareRow]) -> String {
    let mut out = String::from("dim,ratio,l2_skin,h1_skin,l2_rand,h1_rand\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.dim,
            fmt_g(r.ratio_pct),
            fmt_g(r.skin.0),
            fmt_g(r.skin.1),
            fmt_g(r.random.0),
            fmt_g(r.random.1)
        ));
    }
    out
}

pub fn adaptive_csv(rows: &[AdaptiveRow]) -> String {
    let mut out = String::from("iter,dim,marked_count,l2_err,h1_err,sum_eta2\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iter,
            r.dim,
            r.marked,
            fmt_g(r.l2_pct),
            fmt_g(r.h1_pct),
            fmt_g(r.sum_eta_sq)
        ));
    }
    out
}

pub fn lemma_csv<T: Real>(certs: &[BoundCertificate<T>]) -> String {
    let mut out = String::from("nbhd,k,l,m,lambda_k1,HS_norm,max_ratio_observed_to_bound,pass\n");
    for c in certs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.coarse_node,
            c.k,
            c.l,
            c.m,
            fmt_g(to_f64(c.lambda_k1)),
            fmt_g(to_f64(c.hs_norm)),
            fmt_g(c.max_ratio),
            if c.pass { 1 } else { 0 }
        ));
    }
    out
}

/// Per-neighborhood spectrum dump: one row per kept eigenvalue.
pub fn spectrum_csv<T: Real>(bases: &[OfflineBasis<T>]) -> String {
    let mut out = String::from("node,k,lambda\n");
    for b in bases {
        for (k, v) in b.eigenvalues.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", b.coarse_node, k, fmt_g(to_f64(*v))));
        }
    }
    out
}

/// Nodal field in the plain-text grid format (same container as
/// coefficient fields, with node counts in the header).
pub fn solution_to_text<T: Real>(geom: &GridGeometry, u: &DVector<T>) -> String {
    let nx = geom.fine_nodes_x();
    let ny = geom.fine_nodes_y();
    let mut out = format!("{nx} {ny}\n");
    for iy in 0..ny {
        let row: Vec<String> = (0..nx)
            .map(|ix| format!("{}", to_f64(u[geom.node_index(ix, iy)])))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
