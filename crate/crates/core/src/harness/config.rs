//! Run configuration from key=value files and command-line overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{build_cartesian, deform, BoundaryKind, Material, Mesh};
use crate::operator::{AcousticOperator, FluxParams};
use crate::tck::ReductionPolicy;
use crate::time::{SchemeConfig, SchemeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Convergence,
    Throughput,
    Opcount,
    Courant,
    Run,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Convergence => "convergence",
            Command::Throughput => "throughput",
            Command::Opcount => "opcount",
            Command::Courant => "courant",
            Command::Run => "run",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convergence" => Ok(Command::Convergence),
            "throughput" => Ok(Command::Throughput),
            "opcount" => Ok(Command::Opcount),
            "courant" => Ok(Command::Courant),
            "run" => Ok(Command::Run),
            _ => Err(Error::Config(format!("unknown command '{s}'"))),
        }
    }
}

fn parse_boundary(s: &str) -> Result<BoundaryKind> {
    match s {
        "soft" | "sound-soft" => Ok(BoundaryKind::SoundSoft),
        "periodic" => Ok(BoundaryKind::Periodic),
        _ => Err(Error::Config(format!("unknown boundary '{s}'"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub dim: usize,
    pub degree: usize,
    /// elements per direction; the coarsest mesh for convergence studies
    pub elements: usize,
    pub schemes: Vec<SchemeKind>,
    pub courant: f64,
    pub end_time: f64,
    pub mode: u32,
    pub deform: f64,
    pub boundary: BoundaryKind,
    pub reduction: ReductionPolicy,
    pub tau_scale: f64,
    pub c: f64,
    pub rho: f64,
    pub threads: usize,
    /// meshes in a convergence study
    pub levels: usize,
    /// measured steps (throughput) or steps per trial (courant)
    pub steps: Option<usize>,
    pub warmup: usize,
    pub repeats: usize,
    pub output: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            dim: 2,
            degree: 2,
            elements: 8,
            schemes: vec![SchemeKind::Lsrk45],
            courant: 0.1,
            end_time: 1.0,
            mode: 1,
            deform: 0.0,
            boundary: BoundaryKind::SoundSoft,
            reduction: ReductionPolicy::EverySecond,
            tau_scale: 1.0,
            c: 1.0,
            rho: 1.0,
            threads: 1,
            levels: 3,
            steps: None,
            warmup: 10,
            repeats: 3,
            output: None,
            json: None,
        }
    }

    /// Sets one option from its textual form. Keys use the long flag names;
    /// underscores and dashes are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
        }
        let v = value.trim();
        match key.trim().replace('_', "-").as_str() {
            "command" => self.command = v.parse()?,
            "dim" => self.dim = num(key, v)?,
            "degree" => self.degree = num(key, v)?,
            "elements" => self.elements = num(key, v)?,
            "scheme" | "schemes" => {
                self.schemes = v.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?;
            }
            "courant" => self.courant = num(key, v)?,
            "end-time" => self.end_time = num(key, v)?,
            "mode" => self.mode = num(key, v)?,
            "deform" => self.deform = num(key, v)?,
            "boundary" => self.boundary = parse_boundary(v)?,
            "reduction" => self.reduction = v.parse()?,
            "tau" | "tau-scale" => self.tau_scale = num(key, v)?,
            "c" => self.c = num(key, v)?,
            "rho" => self.rho = num(key, v)?,
            "threads" => self.threads = num(key, v)?,
            "levels" => self.levels = num(key, v)?,
            "steps" => self.steps = Some(num(key, v)?),
            "warmup" => self.warmup = num(key, v)?,
            "repeats" => self.repeats = num(key, v)?,
            "output" => self.output = Some(PathBuf::from(v)),
            "json" => self.json = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown option '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(2..=3).contains(&self.dim) {
            return bad(format!("dim must be 2 or 3, got {}", self.dim));
        }
        if !(1..=crate::basis::MAX_DEGREE).contains(&self.degree) {
            return bad(format!(
                "degree must be in 1..={}, got {}",
                crate::basis::MAX_DEGREE,
                self.degree
            ));
        }
        if self.elements == 0 || self.threads == 0 || self.levels == 0 || self.repeats == 0 || self.mode == 0 {
            return bad("elements, threads, levels, repeats and mode must be positive".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        for (name, x) in [
            ("courant", self.courant),
            ("end-time", self.end_time),
            ("tau", self.tau_scale),
            ("c", self.c),
            ("rho", self.rho),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return bad(format!("{name} must be positive, got {x}"));
            }
        }
        if !(self.deform >= 0.0 && self.deform.is_finite()) {
            return bad(format!("deform must be non-negative, got {}", self.deform));
        }
        if self.steps == Some(0) {
            return bad("steps must be positive".into());
        }
        Ok(())
    }

    pub fn scheme_config(&self, scheme: SchemeKind, courant: f64) -> Result<SchemeConfig> {
        let mut c = SchemeConfig::new(scheme, courant)?;
        c.degree_reduction = self.reduction;
        Ok(c)
    }

    pub fn build_mesh(&self, elements: usize) -> Result<Mesh> {
        let mesh = build_cartesian(elements, self.dim, self.boundary)?;
        if self.deform > 0.0 {
            deform(&mesh, self.deform)
        } else {
            Ok(mesh)
        }
    }

    /// Operator on an `elements`^d mesh with the configured material, flux
    /// and reduction geometry.
    pub fn build_operator(&self, elements: usize) -> Result<AcousticOperator> {
        let mesh = self.build_mesh(elements)?;
        let mat = Material::uniform(mesh.n_elements(), self.c, self.rho)?;
        let flux = FluxParams::hdg(&mesh, &mat, self.tau_scale)?;
        let sets = self.reduction.point_sets(self.degree);
        let mut op = AcousticOperator::with_point_sets(mesh, self.degree, mat, flux, &sets)?;
        if self.threads > 1 {
            op.set_threads(self.threads)?;
        }
        Ok(op)
    }
}
