//! Command-line driver: experiment subcommands over a `key = value`
//! config file with flag overrides.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use gmsfem::config::RunConfig;
use gmsfem::error::{Error, Result};
use gmsfem::experiment::{
    adaptive_csv, compare_csv, fmt_g, lemma_csv, run_adaptive, run_buffer_study, run_compare,
    run_lemma_check, run_oversampling_study, run_skin_compare, skin_csv, solution_to_text,
    study_csv, Session,
};
use gmsfem::scalar::to_f64;

const USAGE: &str = "\
usage: gmsfem <subcommand> [--config <file>] [--<key> <value> ...]
              [--out <path>] [--dump-solution <path>]
              [--dump-spectrum <path>] [--threads <N>]

subcommands:
  solve-fine        fine-scale reference solve; reports norms
  compare           full vs randomized snapshots over k_nb_list
  buffer-study      randomized errors over p_bf_list at fixed k_nb
  oversample-study  randomized errors over t_list at fixed k_nb, p_bf
  skin-compare      skin-layer vs randomized snapshots over k_nb_list
  adaptive          residual-driven local enrichment loop
  lemma-check       randomized-approximation bound certificates
  gen-field         write the generated coefficient field
  help              print this message

Any configuration key can be overridden with `--<key> <value>`; flags are
applied after the config file. CSV goes to stdout unless --out is given.
";

struct CliArgs {
    subcommand: String,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    dump_solution: Option<PathBuf>,
    dump_spectrum: Option<PathBuf>,
    threads: Option<usize>,
    overrides: Vec<(String, String)>,
}

fn parse_args(argv: &[String]) -> Result<CliArgs> {
    let mut it = argv.iter();
    let subcommand = it
        .next()
        .ok_or_else(|| Error::Config("missing subcommand; try `gmsfem help`".into()))?
        .clone();
    let mut args = CliArgs {
        subcommand,
        config: None,
        out: None,
        dump_solution: None,
        dump_spectrum: None,
        threads: None,
        overrides: Vec::new(),
    };
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected a --flag, got '{flag}'")))?;
        let value = it
            .next()
            .ok_or_else(|| Error::Config(format!("flag --{key} needs a value")))?
            .clone();
        match key {
            "config" => args.config = Some(PathBuf::from(value)),
            "out" => args.out = Some(PathBuf::from(value)),
            "dump-solution" => args.dump_solution = Some(PathBuf::from(value)),
            "dump-spectrum" => args.dump_spectrum = Some(PathBuf::from(value)),
            "threads" => {
                args.threads = Some(
                    value
                        .parse()
                        .map_err(|e| Error::Config(format!("bad --threads: {e}")))?,
                )
            }
            _ => args.overrides.push((key.to_string(), value)),
        }
    }
    Ok(args)
}

fn load_config(args: &CliArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::parse(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    for (key, value) in &args.overrides {
        cfg.apply(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &CliArgs) -> Result<String> {
    let cfg = load_config(args)?;
    match args.subcommand.as_str() {
        "gen-field" => {
            let geom = cfg.geometry()?;
            let field = cfg.coefficient_field::<f64>(&geom)?;
            return Ok(field.to_text());
        }
        "solve-fine" => {
            let session: Session<f64> = Session::new(&cfg)?;
            if let Some(path) = &args.dump_solution {
                fs::write(path, solution_to_text(&session.geom, &session.u_fine))?;
            }
            let energy = to_f64(session.fine_energy()).sqrt();
            let l2 = to_f64(session.m_kappa.quad_form(&session.u_fine, &session.u_fine)).sqrt();
            return Ok(format!(
                "nodes,h1_energy,l2_kappa\n{},{},{}\n",
                session.geom.fine_node_count(),
                fmt_g(energy),
                fmt_g(l2)
            ));
        }
        _ => {}
    }

    let session: Session<f64> = Session::new(&cfg)?;
    let mut dump: Option<nalgebra::DVector<f64>> = None;
    let csv = match args.subcommand.as_str() {
        "compare" => {
            let rows = run_compare(&session)?;
            compare_csv(&rows)
        }
        "buffer-study" => study_csv("p_bf", &run_buffer_study(&session)?),
        "oversample-study" => study_csv("t", &run_oversampling_study(&session)?),
        "skin-compare" => skin_csv(&run_skin_compare(&session)?),
        "adaptive" => adaptive_csv(&run_adaptive(&session)?),
        "lemma-check" => lemma_csv(&run_lemma_check(&session)?),
        other => {
            return Err(Error::Config(format!(
                "unknown subcommand '{other}'; try `gmsfem help`"
            )))
        }
    };

    if args.dump_solution.is_some() || args.dump_spectrum.is_some() {
        // Spectrum and coarse solution of the configured single run.
        let plan = cfg.plan(cfg.snapshot_mode, cfg.k_nb, cfg.p_bf, cfg.oversample_t);
        let bases =
            gmsfem::spectral::reduce_all(&session.geom, &session.field, &session.weight, &plan)?;
        if let Some(path) = &args.dump_spectrum {
            fs::write(path, gmsfem::experiment::spectrum_csv(&bases))?;
        }
        if args.dump_solution.is_some() {
            let ratio = gmsfem::coarse::snapshot_ratio_pct(
                &session.geom,
                cfg.k_nb + cfg.p_bf,
                cfg.oversample_t,
            );
            let (_, u_h) = session.solve_with_bases(&bases, ratio)?;
            dump = Some(u_h);
        }
    }
    if let (Some(path), Some(u)) = (&args.dump_solution, &dump) {
        fs::write(path, solution_to_text(&session.geom, u))?;
    }
    Ok(csv)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.is_empty() || argv[0] == "help" || argv[0] == "--help" || argv[0] == "-h" {
        print!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("gmsfem: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = args.threads {
        // Ignore failure: the global pool can only be set once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(&args) {
        Ok(csv) => {
            match &args.out {
                Some(path) => {
                    if let Err(e) = fs::write(path, &csv) {
                        eprintln!("gmsfem: {e}");
                        return ExitCode::from(2);
                    }
                }
                None => print!("{csv}"),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gmsfem: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
