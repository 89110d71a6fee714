//! Plain key = value configuration files for the solve and plan commands,
//! and the run-metadata snapshot written next to every output.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use saapde_core::experiments::DEFAULT_GAMMA;
use saapde_core::planner::{case_study_constants, ProblemConstants, Tagged};

/// Parses `key = value` lines with # comments into a map.
pub fn parse_kv(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", ln + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Settings for the solve subcommands.
#[derive(Clone, Debug)]
pub struct SolveConfig {
    pub mesh_n: usize,
    pub samples: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
    pub tol: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            mesh_n: 32,
            samples: 10,
            alpha: 1e-3,
            gamma: DEFAULT_GAMMA,
            lo: -10.0,
            hi: 10.0,
            seed: 0,
            tol: 1e-9,
        }
    }
}

impl SolveConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let map = parse_kv(&text)?;
        let mut cfg = SolveConfig::default();
        for (k, v) in &map {
            match k.as_str() {
                "n" => cfg.mesh_n = v.parse().context("bad n")?,
                "N" => cfg.samples = v.parse().context("bad N")?,
                "alpha" => cfg.alpha = v.parse().context("bad alpha")?,
                "gamma" => cfg.gamma = v.parse().context("bad gamma")?,
                "lo" => cfg.lo = v.parse().context("bad lo")?,
                "hi" => cfg.hi = v.parse().context("bad hi")?,
                "seed" => cfg.seed = v.parse().context("bad seed")?,
                "tol" => cfg.tol = v.parse().context("bad tol")?,
                other => bail!("unknown key {other} in solve config"),
            }
        }
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        format!(
            "n = {}\nN = {}\nalpha = {}\ngamma = {}\nlo = {}\nhi = {}\nseed = {}\ntol = {}\n",
            self.mesh_n, self.samples, self.alpha, self.gamma, self.lo, self.hi, self.seed, self.tol
        )
    }
}

/// Reads a constants file; keys absent fall back to the case-study defaults,
/// present keys are tagged as user inputs.
pub fn constants_from_file(path: Option<&Path>, alpha: f64) -> Result<ProblemConstants> {
    let mut constants = case_study_constants(alpha)?;
    let Some(path) = path else {
        return Ok(constants);
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading constants {}", path.display()))?;
    let map = parse_kv(&text)?;
    for (k, v) in &map {
        if k == "d" {
            constants.dim = v.parse().context("bad d")?;
            continue;
        }
        let value: f64 = v.parse().with_context(|| format!("bad value for {k}"))?;
        let slot = match k.as_str() {
            "kappa_min" => &mut constants.kappa_min,
            "b_max" => &mut constants.b_max,
            "g_max" => &mut constants.g_max,
            "r_ad" => &mut constants.r_ad,
            "c_q" => &mut constants.c_q,
            "d_q" => &mut constants.d_q,
            "p" => &mut constants.growth_p,
            "c_d" => &mut constants.friedrichs,
            "c_p" => &mut constants.embedding_cp,
            "domain_measure" => &mut constants.domain_measure,
            "yd_norm" => &mut constants.target_norm,
            "alpha" => &mut constants.alpha,
            "rho" => &mut constants.covering_rho,
            other => bail!("unknown constant {other}"),
        };
        *slot = Tagged::user(value);
    }
    constants.validate()?;
    Ok(constants)
}

/// Run metadata written alongside every output: version, command line,
/// seeds, tolerances, wall time.
pub struct RunMetadata {
    pub command: String,
    pub seed: Option<u64>,
    pub wall_s: f64,
    pub extra: Vec<(String, String)>,
}

impl RunMetadata {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut s = String::new();
        s.push_str(&format!("artifact_version = {}\n", env!("CARGO_PKG_VERSION")));
        s.push_str(&format!("command = {}\n", self.command));
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed = {seed}\n"));
        }
        s.push_str(&format!("wall_s = {}\n", self.wall_s));
        s.push_str("state_newton_tol = 1e-10\n");
        s.push_str("cg_tol_rel = 1e-12\n");
        s.push_str("normal_map_tol = 1e-9\n");
        for (k, v) in &self.extra {
            s.push_str(&format!("{k} = {v}\n"));
        }
        std::fs::write(dir.join("metadata.txt"), s).context("writing metadata")?;
        Ok(())
    }
}
