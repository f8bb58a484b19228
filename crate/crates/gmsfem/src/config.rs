//! Run configuration: a flat `key = value` text format, flag overrides,
//! and typed accessors for the pipeline builders.

use std::fmt;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::field::{generate_channels, load_field, CoefficientField};
use crate::grid::{build_geometry, GridGeometry};
use crate::pou::PouMode;
use crate::scalar::{real, Real};
use crate::snapshot::SnapshotMode;
use crate::spectral::ReductionPlan;

/// Where the coefficient field comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldSource {
    /// Seeded channel generator (`contrast`, `field_seed`).
    Generate,
    /// Plain-text field file.
    Path(PathBuf),
}

/// Boundary data on the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundarySpec {
    Zero,
    /// `x + y`, the default linear data.
    Linear,
    Const(f64),
    /// `a x + b y + c`.
    Affine(f64, f64, f64),
}

impl BoundarySpec {
    pub fn eval<T: Real>(&self, x: f64, y: f64) -> T {
        match *self {
            BoundarySpec::Zero => T::zero(),
            BoundarySpec::Linear => real::<T>(x + y),
            BoundarySpec::Const(c) => real::<T>(c),
            BoundarySpec::Affine(a, b, c) => real::<T>(a * x + b * y + c),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        if s == "zero" {
            return Ok(BoundarySpec::Zero);
        }
        if s == "linear" {
            return Ok(BoundarySpec::Linear);
        }
        if let Some(v) = s.strip_prefix("const:") {
            return Ok(BoundarySpec::Const(parse_f64("g", v)?));
        }
        if let Some(rest) = s.strip_prefix("affine:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() == 3 {
                return Ok(BoundarySpec::Affine(
                    parse_f64("g", parts[0])?,
                    parse_f64("g", parts[1])?,
                    parse_f64("g", parts[2])?,
                ));
            }
        }
        Err(Error::Config(format!(
            "boundary data must be zero | linear | const:<v> | affine:a,b,c; got '{s}'"
        )))
    }
}

impl fmt::Display for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundarySpec::Zero => write!(f, "zero"),
            BoundarySpec::Linear => write!(f, "linear"),
            BoundarySpec::Const(c) => write!(f, "const:{c}"),
            BoundarySpec::Affine(a, b, c) => write!(f, "affine:{a},{b},{c}"),
        }
    }
}

/// Volumetric forcing term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForcingSpec {
    Zero,
    Const(f64),
}

impl ForcingSpec {
    pub fn eval<T: Real>(&self, _x: f64, _y: f64) -> T {
        match *self {
            ForcingSpec::Zero => T::zero(),
            ForcingSpec::Const(c) => real::<T>(c),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        if s == "zero" {
            return Ok(ForcingSpec::Zero);
        }
        if let Some(v) = s.strip_prefix("const:") {
            return Ok(ForcingSpec::Const(parse_f64("f", v)?));
        }
        Err(Error::Config(format!(
            "forcing must be zero | const:<v>; got '{s}'"
        )))
    }
}

impl fmt::Display for ForcingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForcingSpec::Zero => write!(f, "zero"),
            ForcingSpec::Const(c) => write!(f, "const:{c}"),
        }
    }
}

/// Weight used in local mass matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaTildeMode {
    /// The coefficient itself (the default).
    Kappa,
    /// `kappa` scaled by the summed squared partition-function gradients.
    PouWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    pub fine_per_coarse: usize,
    pub oversample_t: usize,
    pub k_nb: usize,
    pub p_bf: usize,
    pub snapshot_mode: SnapshotMode,
    pub kappa_tilde_mode: KappaTildeMode,
    pub pou_mode: PouMode,
    pub seed: u64,
    pub field: FieldSource,
    pub contrast: f64,
    pub field_seed: u64,
    pub g: BoundarySpec,
    pub f: ForcingSpec,
    pub theta: f64,
    pub c_nb: usize,
    pub c_bf: usize,
    pub max_iter: usize,
    pub target_err: f64,
    pub skin_inner: usize,
    pub skin_outer: usize,
    pub k_nb_list: Vec<usize>,
    pub p_bf_list: Vec<usize>,
    pub t_list: Vec<usize>,
    /// Skip the full-snapshot pipeline above this mode count in `compare`.
    pub full_k_max: Option<usize>,
    pub lemma_k: usize,
    pub lemma_l: usize,
    pub lemma_tests: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            coarse_nx: 10,
            coarse_ny: 10,
            fine_per_coarse: 10,
            oversample_t: 3,
            k_nb: 10,
            p_bf: 4,
            snapshot_mode: SnapshotMode::Random,
            kappa_tilde_mode: KappaTildeMode::Kappa,
            pou_mode: PouMode::Multiscale,
            seed: 1,
            field: FieldSource::Generate,
            contrast: 1e4,
            field_seed: 7,
            g: BoundarySpec::Linear,
            f: ForcingSpec::Zero,
            theta: 0.3,
            c_nb: 2,
            c_bf: 1,
            max_iter: 30,
            target_err: 0.0,
            skin_inner: 2,
            skin_outer: 3,
            k_nb_list: vec![5, 10, 15, 20, 25],
            p_bf_list: vec![4, 10, 15, 20],
            t_list: vec![0, 2, 4, 7],
            full_k_max: None,
            lemma_k: 2,
            lemma_l: 6,
            lemma_tests: 50,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|e| Error::Config(format!("{key}: bad number '{v}': {e}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|e| Error::Config(format!("{key}: bad count '{v}': {e}")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|e| Error::Config(format!("{key}: bad seed '{v}': {e}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|item| parse_usize(key, item.trim()))
        .collect()
}

fn join_list(list: &[usize]) -> String {
    list.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment (file line or CLI flag).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "coarse_nx" => self.coarse_nx = parse_usize(key, value)?,
            "coarse_ny" => self.coarse_ny = parse_usize(key, value)?,
            "fine_per_coarse" => self.fine_per_coarse = parse_usize(key, value)?,
            "oversample_t" => self.oversample_t = parse_usize(key, value)?,
            "k_nb" => self.k_nb = parse_usize(key, value)?,
            "p_bf" => self.p_bf = parse_usize(key, value)?,
            "snapshot_mode" => {
                self.snapshot_mode = match value {
                    "full" => SnapshotMode::Full,
                    "random" => SnapshotMode::Random,
                    "skin" => SnapshotMode::Skin,
                    _ => {
                        return Err(Error::Config(format!(
                            "snapshot_mode must be full | random | skin; got '{value}'"
                        )))
                    }
                }
            }
            "kappa_tilde_mode" => {
                self.kappa_tilde_mode = match value {
                    "kappa" => KappaTildeMode::Kappa,
                    "pou_weighted" => KappaTildeMode::PouWeighted,
                    _ => {
                        return Err(Error::Config(format!(
                            "kappa_tilde_mode must be kappa | pou_weighted; got '{value}'"
                        )))
                    }
                }
            }
            "pou_mode" => {
                self.pou_mode = match value {
                    "standard" => PouMode::Standard,
                    "multiscale" => PouMode::Multiscale,
                    _ => {
                        return Err(Error::Config(format!(
                            "pou_mode must be standard | multiscale; got '{value}'"
                        )))
                    }
                }
            }
            "seed" => self.seed = parse_u64(key, value)?,
            "field" => {
                self.field = if value == "generate" {
                    FieldSource::Generate
                } else {
                    FieldSource::Path(PathBuf::from(value))
                }
            }
            "contrast" => self.contrast = parse_f64(key, value)?,
            "field_seed" => self.field_seed = parse_u64(key, value)?,
            "g" => self.g = BoundarySpec::parse(value)?,
            "f" => self.f = ForcingSpec::parse(value)?,
            "theta" => self.theta = parse_f64(key, value)?,
            "c_nb" => self.c_nb = parse_usize(key, value)?,
            "c_bf" => self.c_bf = parse_usize(key, value)?,
            "max_iter" => self.max_iter = parse_usize(key, value)?,
            "target_err" => self.target_err = parse_f64(key, value)?,
            "skin_inner" => self.skin_inner = parse_usize(key, value)?,
            "skin_outer" => self.skin_outer = parse_usize(key, value)?,
            "k_nb_list" => self.k_nb_list = parse_list(key, value)?,
            "p_bf_list" => self.p_bf_list = parse_list(key, value)?,
            "t_list" => self.t_list = parse_list(key, value)?,
            "full_k_max" => {
                self.full_k_max = if value == "none" {
                    None
                } else {
                    Some(parse_usize(key, value)?)
                }
            }
            "lemma_k" => self.lemma_k = parse_usize(key, value)?,
            "lemma_l" => self.lemma_l = parse_usize(key, value)?,
            "lemma_tests" => self.lemma_tests = parse_usize(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses the `key = value` text format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Emits every key; parsing the result reproduces the config.
    pub fn to_text(&self) -> String {
        let field = match &self.field {
            FieldSource::Generate => "generate".to_string(),
            FieldSource::Path(p) => p.display().to_string(),
        };
        let full_k_max = match self.full_k_max {
            None => "none".to_string(),
            Some(v) => v.to_string(),
        };
        format!(
            "coarse_nx = {}\ncoarse_ny = {}\nfine_per_coarse = {}\noversample_t = {}\n\
             k_nb = {}\np_bf = {}\nsnapshot_mode = {}\nkappa_tilde_mode = {}\npou_mode = {}\n\
             seed = {}\nfield = {}\ncontrast = {}\nfield_seed = {}\ng = {}\nf = {}\n\
             theta = {}\nc_nb = {}\nc_bf = {}\nmax_iter = {}\ntarget_err = {}\n\
             skin_inner = {}\nskin_outer = {}\nk_nb_list = {}\np_bf_list = {}\nt_list = {}\n\
             full_k_max = {}\nlemma_k = {}\nlemma_l = {}\nlemma_tests = {}\n",
            self.coarse_nx,
            self.coarse_ny,
            self.fine_per_coarse,
            self.oversample_t,
            self.k_nb,
            self.p_bf,
            self.snapshot_mode.as_str(),
            match self.kappa_tilde_mode {
                KappaTildeMode::Kappa => "kappa",
                KappaTildeMode::PouWeighted => "pou_weighted",
            },
            match self.pou_mode {
                PouMode::Standard => "standard",
                PouMode::Multiscale => "multiscale",
            },
            self.seed,
            field,
            self.contrast,
            self.field_seed,
            self.g,
            self.f,
            self.theta,
            self.c_nb,
            self.c_bf,
            self.max_iter,
            self.target_err,
            self.skin_inner,
            self.skin_outer,
            join_list(&self.k_nb_list),
            join_list(&self.p_bf_list),
            join_list(&self.t_list),
            full_k_max,
            self.lemma_k,
            self.lemma_l,
            self.lemma_tests,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.coarse_nx == 0 || self.coarse_ny == 0 || self.fine_per_coarse == 0 {
            return Err(Error::Config("grid counts must be positive".into()));
        }
        if self.contrast < 1.0 {
            return Err(Error::Config("contrast must be >= 1".into()));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config("theta must be in (0, 1]".into()));
        }
        if self.c_nb == 0 {
            return Err(Error::Config("c_nb must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if self.k_nb_list.is_empty() || self.p_bf_list.is_empty() || self.t_list.is_empty() {
            return Err(Error::Config("study lists must be nonempty".into()));
        }
        if self.lemma_k == 0 || self.lemma_k >= self.lemma_l {
            return Err(Error::Config(
                "lemma cutoffs need 0 < lemma_k < lemma_l".into(),
            ));
        }
        if self.lemma_tests == 0 {
            return Err(Error::Config("lemma_tests must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        build_geometry(self.coarse_nx, self.coarse_ny, self.fine_per_coarse)
    }

    pub fn coefficient_field<T: Real>(&self, geom: &GridGeometry) -> Result<CoefficientField<T>> {
        match &self.field {
            FieldSource::Generate => generate_channels(geom, self.contrast, self.field_seed),
            FieldSource::Path(p) => load_field(p, geom),
        }
    }

    /// Reduction plan for the configured snapshot mode with explicit
    /// counts (studies sweep them).
    pub fn plan(&self, mode: SnapshotMode, k_nb: usize, p_bf: usize, t: usize) -> ReductionPlan {
        ReductionPlan {
            mode,
            oversample_t: t,
            k_nb,
            p_bf,
            seed: self.seed,
            skin_inner: self.skin_inner,
            skin_outer: self.skin_outer,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trips_through_text() {
        let mut cfg = RunConfig::default();
        cfg.apply("snapshot_mode", "skin").unwrap();
        cfg.apply("contrast", "123.5").unwrap();
        cfg.apply("g", "affine:2,-1,0.25").unwrap();
        cfg.apply("f", "const:3").unwrap();
        cfg.apply("field", "fields/perm.txt").unwrap();
        cfg.apply("full_k_max", "20").unwrap();
        cfg.apply("k_nb_list", "3, 6, 9").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = RunConfig::parse("# a comment\n\nk_nb = 7 # trailing\n").unwrap();
        assert_eq!(cfg.k_nb, 7);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::parse("k_nbb = 7\n").is_err());
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::parse("k_nb = seven\n").is_err());
        assert!(RunConfig::parse("theta = 0\n").is_err());
        assert!(RunConfig::parse("theta = 1.5\n").is_err());
        assert!(RunConfig::parse("contrast = 0.5\n").is_err());
        assert!(RunConfig::parse("snapshot_mode = fulll\n").is_err());
        assert!(RunConfig::parse("g = quadratic\n").is_err());
    }

    #[test]
    fn boundary_eval() {
        let g = BoundarySpec::Affine(2.0, -1.0, 0.5);
        let v: f64 = g.eval(1.0, 3.0);
        assert_eq!(v, -0.5);
        let lin: f64 = BoundarySpec::Linear.eval(0.25, 0.5);
        assert_eq!(lin, 0.75);
    }
}
