//! Run configuration.
//!
//! Settings come from three layers, later ones winning: built-in defaults, an
//! optional config file, and command-line flags. The config file is flat
//! text, one `key = value` per line; `#` starts a comment, blank lines are
//! skipped, and keys use the flag spelling without the leading dashes
//! (`burn-in = 2000`; underscores are accepted too).

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use fidcov::diagnostics::MIN_QQ_REPLICATIONS;
use fidcov::NormChoice;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = CliError;

            fn from_str(s: &str) -> Result<Self> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
                    .ok_or_else(|| {
                        let options: Vec<&str> = $name::ALL.iter().map(|v| v.as_str()).collect();
                        CliError::Config(format!("`{s}` is not one of {}", options.join(", ")))
                    })
            }
        }
    };
}

keyword_enum!(Mode {
    FitFull => "fit-full",
    FitClique => "fit-clique",
    FitGeneral => "fit-general",
    Simulate => "simulate",
    Coverage => "coverage",
});

keyword_enum!(NormArg { L2 => "l2", LInf => "linf" });

keyword_enum!(Penalty {
    Clique => "clique",
    Mdl => "mdl",
    None => "none",
});

keyword_enum!(InitArg {
    SnPa => "snpa",
    Chol => "chol",
    Dcho => "dcho",
    Diag => "diag",
    Oracle => "oracle",
});

keyword_enum!(GeneratorKind { Clique => "clique", Sparse => "sparse" });

impl NormArg {
    pub fn choice(&self) -> NormChoice {
        match self {
            NormArg::L2 => NormChoice::L2,
            NormArg::LInf => NormChoice::linf(),
        }
    }
}

/// Synthetic data settings for `simulate` and `coverage`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioArgs {
    pub p: usize,
    pub n: usize,
    pub generator: GeneratorKind,
    pub cliques: usize,
    pub intra_corr: f64,
}

impl Default for ScenarioArgs {
    fn default() -> Self {
        Self {
            p: 20,
            n: 1000,
            generator: GeneratorKind::Clique,
            cliques: 4,
            intra_corr: 0.5,
        }
    }
}

/// Fully resolved settings of one run; echoed verbatim into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub norm: NormArg,
    pub chains: usize,
    pub burn_in: usize,
    pub window: usize,
    pub thin: usize,
    pub seed: u64,
    pub max_c: Option<usize>,
    /// `None` until resolved; then the mode's default.
    pub penalty: Option<Penalty>,
    /// Starting state of covariate chains (`fit-general` only).
    pub init: Option<InitArg>,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub sigma0: Option<PathBuf>,
    pub a0: Option<PathBuf>,
    pub scenario: ScenarioArgs,
    /// Replications in `coverage` mode.
    pub reps: usize,
}

impl RunConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            norm: NormArg::L2,
            chains: 4,
            burn_in: 5000,
            window: 10_000,
            thin: 1,
            seed: 1,
            max_c: None,
            penalty: None,
            init: None,
            input: None,
            out: PathBuf::from("fidcov-out"),
            sigma0: None,
            a0: None,
            scenario: ScenarioArgs::default(),
            reps: 200,
        }
    }

    /// Sets one key from its textual value.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('_', "-");
        let value = value.trim();
        let bad = |what: &str| CliError::Config(format!("`{key}` expects {what}, got `{value}`"));
        let count = || value.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        match key.as_str() {
            "mode" => self.mode = value.parse()?,
            "norm" => self.norm = value.parse()?,
            "chains" => self.chains = count()?,
            "burn-in" => self.burn_in = count()?,
            "window" => self.window = count()?,
            "thin" => self.thin = count()?,
            "seed" => self.seed = value.parse().map_err(|_| bad("an unsigned 64-bit integer"))?,
            "maxc" | "max-c" => self.max_c = Some(count()?),
            "penalty" => self.penalty = Some(value.parse()?),
            "init" => self.init = Some(value.parse()?),
            "input" => self.input = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "sigma0" => self.sigma0 = Some(PathBuf::from(value)),
            "a0" => self.a0 = Some(PathBuf::from(value)),
            "p" => self.scenario.p = count()?,
            "n" => self.scenario.n = count()?,
            "generator" => self.scenario.generator = value.parse()?,
            "cliques" => self.scenario.cliques = count()?,
            "intra-corr" => self.scenario.intra_corr = value.parse().map_err(|_| bad("a number"))?,
            "reps" => self.reps = count()?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Fills mode-dependent defaults and checks cross-field constraints.
    pub fn resolve(mut self) -> Result<Self> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.chains == 0 {
            return fail("chains must be at least 1".into());
        }
        if self.thin == 0 {
            return fail("thin must be at least 1".into());
        }
        if self.window == 0 {
            return fail("window must be at least 1".into());
        }
        if self.max_c == Some(0) {
            return fail("maxc must be at least 1".into());
        }
        let default_penalty = match self.mode {
            Mode::FitFull | Mode::Simulate => Penalty::None,
            Mode::FitClique | Mode::Coverage => Penalty::Clique,
            Mode::FitGeneral => Penalty::Mdl,
        };
        let penalty = *self.penalty.get_or_insert(default_penalty);
        let allowed: &[Penalty] = match self.mode {
            Mode::FitFull | Mode::Simulate => &[Penalty::None],
            Mode::FitClique | Mode::Coverage => &[Penalty::Clique, Penalty::None],
            Mode::FitGeneral => &[Penalty::Mdl],
        };
        if !allowed.contains(&penalty) {
            return fail(format!("penalty `{penalty}` does not apply to {}", self.mode));
        }
        match self.mode {
            Mode::FitGeneral => {
                if self.max_c.is_none() {
                    return fail("fit-general requires maxc".into());
                }
                if *self.init.get_or_insert(InitArg::SnPa) == InitArg::Oracle
                    && self.sigma0.is_none()
                    && self.a0.is_none()
                {
                    return fail("oracle init requires sigma0 or a0".into());
                }
            }
            _ if self.init.is_some() => {
                return fail(format!("init only applies to fit-general, not {}", self.mode));
            }
            _ => {}
        }
        match self.mode {
            Mode::FitFull | Mode::FitClique | Mode::FitGeneral if self.input.is_none() => {
                return fail(format!("{} requires an input file", self.mode));
            }
            Mode::Simulate if self.scenario.generator == GeneratorKind::Sparse && self.max_c.is_none() => {
                return fail("the sparse generator requires maxc".into());
            }
            Mode::Coverage => {
                if self.scenario.generator != GeneratorKind::Clique {
                    return fail("coverage runs on the clique generator".into());
                }
                if self.reps < MIN_QQ_REPLICATIONS {
                    return fail(format!("coverage needs at least {MIN_QQ_REPLICATIONS} reps"));
                }
            }
            _ => {}
        }
        if matches!(self.mode, Mode::Simulate | Mode::Coverage) && (self.scenario.p == 0 || self.scenario.n == 0) {
            return fail("p and n must be positive".into());
        }
        Ok(self)
    }
}

/// Parses the flat `key = value` format into ordered pairs.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!("config line {}: expected `key = value`", k + 1)));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::Config(format!("config line {}: empty key", k + 1)));
        }
        let norm = key.to_ascii_lowercase().replace('_', "-");
        if out.iter().any(|(seen, _)| seen.to_ascii_lowercase().replace('_', "-") == norm) {
            return Err(CliError::Config(format!("config line {}: duplicate key `{key}`", k + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Defaults, then the config file, then flags.
pub fn build_config(
    mode: Mode,
    file_pairs: &[(String, String)],
    flag_pairs: &[(String, String)],
) -> Result<RunConfig> {
    let mut config = RunConfig::new(mode);
    for (k, v) in file_pairs {
        config.apply(k, v)?;
    }
    // the subcommand names the mode, whatever the file says
    config.mode = mode;
    for (k, v) in flag_pairs {
        config.apply(k, v)?;
    }
    config.resolve()
}
