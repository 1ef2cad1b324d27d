use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::algo::{Engine, VariantSpec};
use crate::error::{Error, Result};
use crate::ops::{OperatorKind, OperatorSpec};

/// `auto` or an explicit value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    Auto,
    Value(f64),
}

/// How the peter-paul constant `b` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BChoice {
    Value(f64),
    /// Equalize the two terms of the rate.
    Balance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Saga,
    Lsvrg,
    Elvira,
    DianaPP,
    ProxGD,
    Murana,
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "saga" => VariantKind::Saga,
            "lsvrg" => VariantKind::Lsvrg,
            "elvira" => VariantKind::Elvira,
            "diana_pp" => VariantKind::DianaPP,
            "prox_gd" => VariantKind::ProxGD,
            "murana" => VariantKind::Murana,
            other => {
                return Err(Error::Config(format!(
                    "variant.kind: unknown variant {other:?} (expected saga, lsvrg, elvira, diana_pp, prox_gd or murana)"
                )))
            }
        })
    }
}

/// Sampling probability, possibly relative to `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probability {
    Value(f64),
    /// `num / M`.
    PerComponent(f64),
}

impl Probability {
    pub fn resolve(&self, num_components: usize) -> f64 {
        match *self {
            Probability::Value(p) => p,
            Probability::PerComponent(num) => num / num_components as f64,
        }
    }
}

impl FromStr for Probability {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("variant.p: cannot parse {s:?} (expected a number, a fraction a/b, or a/M)"));
        match s.split_once('/') {
            Some((num, den)) => {
                let num: f64 = num.trim().parse().map_err(|_| bad())?;
                match den.trim() {
                    "M" => Ok(Probability::PerComponent(num)),
                    den => Ok(Probability::Value(num / den.parse::<f64>().map_err(|_| bad())?)),
                }
            }
            None => Ok(Probability::Value(s.parse().map_err(|_| bad())?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub num_components: usize,
    pub dim: usize,
    pub rows: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantConfig {
    pub kind: VariantKind,
    pub n: Option<usize>,
    pub p: Option<Probability>,
    pub compressor: Option<OperatorSpec>,
    pub c: Option<OperatorSpec>,
    pub u: Option<OperatorSpec>,
    pub r: Option<OperatorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamsConfig {
    pub gamma: Setting,
    pub b: BChoice,
    pub lambda: Setting,
    pub rho: Setting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Sequential,
    Distributed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunsConfig {
    pub rounds: usize,
    pub num_seeds: usize,
    pub base_seed: u64,
    pub engine: Engine,
    pub mode: RunMode,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputsConfig {
    pub csv_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub variant: VariantConfig,
    pub params: ParamsConfig,
    pub runs: RunsConfig,
    pub outputs: OutputsConfig,
}

/// Rounds used when `runs.K` is not given.
pub const DEFAULT_ROUNDS: usize = 10_000;

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("line {line}: {key}: cannot parse {v:?}: {e}"))),
        }
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    fn spec(&mut self, key: &str) -> Result<Option<OperatorSpec>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<OperatorSpec>()
                .map(Some)
                .map_err(|e| Error::Config(format!("line {line}: {key}: {e}"))),
        }
    }

    fn setting(&mut self, key: &str) -> Result<Setting> {
        match self.take(key) {
            None => Ok(Setting::Auto),
            Some((_, v)) if v == "auto" => Ok(Setting::Auto),
            Some((line, v)) => v
                .parse()
                .map(Setting::Value)
                .map_err(|_| Error::Config(format!("line {line}: {key}: expected \"auto\" or a number, got {v:?}"))),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    /// Range checks that do not need the generated problem.
    pub fn validate(&self) -> Result<()> {
        let m = self.problem.num_components;
        let d = self.problem.dim;
        if m == 0 || d == 0 || self.problem.rows == 0 {
            return Err(Error::Config("problem.M, problem.d and problem.d_prime must be >= 1".into()));
        }
        if self.problem.rows > d {
            return Err(Error::Config(format!(
                "problem.d_prime = {} must not exceed problem.d = {d}",
                self.problem.rows
            )));
        }
        if let Some(n) = self.variant.n {
            if n == 0 || n > m {
                return Err(Error::Config(format!("variant.N = {n} must satisfy 1 <= N <= M = {m}")));
            }
        }
        if let Some(p) = self.variant.p {
            let p = p.resolve(m);
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("variant.p = {p} must lie in (0, 1]")));
            }
        }
        for (key, spec) in [
            ("variant.compressor", &self.variant.compressor),
            ("variant.C", &self.variant.c),
            ("variant.U", &self.variant.u),
            ("variant.R", &self.variant.r),
        ] {
            if let Some(spec) = spec {
                check_rand_k(key, spec, d)?;
            }
        }
        if let BChoice::Value(b) = self.params.b {
            if !(b > 1.0 && b.is_finite()) {
                return Err(Error::Config(format!("params.b = {b} must be > 1")));
            }
        }
        for (key, s) in [("params.gamma", self.params.gamma), ("params.lambda", self.params.lambda), ("params.rho", self.params.rho)] {
            if let Setting::Value(v) = s {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{key} = {v} must be > 0")));
                }
            }
        }
        if self.runs.num_seeds == 0 {
            return Err(Error::Config("runs.num_seeds must be >= 1".into()));
        }
        self.variant_spec().map(|_| ())
    }

    /// The variant with its parameters resolved against `M`.
    pub fn variant_spec(&self) -> Result<VariantSpec> {
        let v = &self.variant;
        let m = self.problem.num_components;
        let need_n = || v.n.ok_or_else(|| Error::Config("variant.N is required for this variant".into()));
        let need_p = || {
            v.p.map(|p| p.resolve(m))
                .ok_or_else(|| Error::Config("variant.p is required for this variant".into()))
        };
        Ok(match v.kind {
            VariantKind::ProxGD => VariantSpec::ProxGD,
            VariantKind::Saga => VariantSpec::MinibatchSaga { n: need_n()? },
            VariantKind::Lsvrg => VariantSpec::MinibatchLsvrg { n: need_n()?, p: need_p()? },
            VariantKind::Elvira => VariantSpec::Elvira { n: need_n()?, p: need_p()? },
            VariantKind::DianaPP => VariantSpec::DianaPP {
                n: need_n()?,
                compressor: v.compressor.clone().unwrap_or_else(OperatorSpec::identity),
                r: v.r.clone().unwrap_or_else(OperatorSpec::identity),
            },
            VariantKind::Murana => VariantSpec::GenericMurana {
                c: v.c.clone().ok_or_else(|| Error::Config("variant.C is required for murana".into()))?,
                u: v.u.clone(),
                r: v.r.clone().unwrap_or_else(OperatorSpec::identity),
            },
        })
    }
}

fn check_rand_k(key: &str, spec: &OperatorSpec, dim: usize) -> Result<()> {
    match &spec.kind {
        OperatorKind::RandK(k) if *k == 0 || *k > dim => {
            Err(Error::Config(format!("{key}: rand_k needs 1 <= k <= d = {dim}, got k = {k}")))
        }
        OperatorKind::Compose(a, b) => {
            check_rand_k(key, a, dim)?;
            check_rand_k(key, b, dim)
        }
        _ => Ok(()),
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    /// Flat `key = value` lines with dotted keys; `#` starts a comment.
    fn from_str(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if map.insert(key.clone(), (i + 1, value)).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
            }
        }
        let mut e = Entries { map };
        let problem = ProblemConfig {
            num_components: e.required("problem.M")?,
            dim: e.required("problem.d")?,
            rows: e.required("problem.d_prime")?,
            seed: e.parse("problem.seed")?.unwrap_or(0),
        };
        let variant = VariantConfig {
            kind: e.required("variant.kind")?,
            n: e.parse("variant.N")?,
            p: e.parse("variant.p")?,
            compressor: e.spec("variant.compressor")?,
            c: e.spec("variant.C")?,
            u: e.spec("variant.U")?,
            r: e.spec("variant.R")?,
        };
        let b = match e.take("params.b") {
            None => BChoice::Value(1.4),
            Some((_, v)) if v == "balance" => BChoice::Balance,
            Some((line, v)) => BChoice::Value(
                v.parse()
                    .map_err(|_| Error::Config(format!("line {line}: params.b: expected a number or \"balance\", got {v:?}")))?,
            ),
        };
        let params = ParamsConfig {
            gamma: e.setting("params.gamma")?,
            b,
            lambda: e.setting("params.lambda")?,
            rho: e.setting("params.rho")?,
        };
        let engine = match e.take("runs.engine") {
            None => Engine::Direct,
            Some((_, v)) if v == "direct" => Engine::Direct,
            Some((_, v)) if v == "generic" => Engine::Generic,
            Some((line, v)) => return Err(Error::Config(format!("line {line}: runs.engine: expected direct or generic, got {v:?}"))),
        };
        let mode = match e.take("runs.mode") {
            None => RunMode::Sequential,
            Some((_, v)) if v == "sequential" => RunMode::Sequential,
            Some((_, v)) if v == "distributed" => RunMode::Distributed,
            Some((line, v)) => {
                return Err(Error::Config(format!("line {line}: runs.mode: expected sequential or distributed, got {v:?}")))
            }
        };
        let runs = RunsConfig {
            rounds: e.parse("runs.K")?.unwrap_or(DEFAULT_ROUNDS),
            num_seeds: e.parse("runs.num_seeds")?.unwrap_or(1),
            base_seed: e.parse("runs.base_seed")?.unwrap_or(0),
            engine,
            mode,
        };
        let outputs = OutputsConfig {
            csv_path: e.take("outputs.csv_path").map(|(_, v)| PathBuf::from(v)),
            report_path: e.take("outputs.report_path").map(|(_, v)| PathBuf::from(v)),
        };
        if let Some((key, (line, _))) = e.map.into_iter().next() {
            return Err(Error::Config(format!("line {line}: unknown key {key}")));
        }
        let config = ExperimentConfig { problem, variant, params, runs, outputs };
        config.validate()?;
        Ok(config)
    }
}
