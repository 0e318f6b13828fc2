//! Command-line front end. Every command writes one CSV document.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::channels::LossMode;
use crate::error::{Error, Result};
use crate::measurement::{
    best_phase, default_phi_grid, optimize_ucs_measurement, run_trials, MeasurementConfig, TwoBranchReadout,
};
use crate::precision::{
    chop_ceiling, chop_curve, chop_optimize, crb_curve, crb_curve_labeled, noon_chop_curve, noon_n_max, optimize_ucs_a,
    snl_curve, ucs_optimized_curve, CurveOptions, EtaGrid, PrecisionCurve, PrecisionPoint, DEFAULT_ALPHA_BAL_MAX,
    DEFAULT_R_PHI,
};
use crate::qfi::QfiRoute;
use crate::states::{mean_photons_through_phase, parse_spec_list, StateSpec};

pub const SCHEMA: &str = "#schema=1";
pub const CURVE_HEADER: &str = "eta,label,delta_phi,m,n_phi,a_opt";
pub const OPTIMIZE_HEADER: &str = "eta,a_opt,n_phi_opt,delta_phi";
pub const MEASURE_HEADER: &str = "trial,phi_true,mean_phi,std_phi,m";

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TRUNCATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qmetro", version, about = "Phase-estimation precision under photon loss")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Curve,
    Fig2,
    Fig3,
    Fig4,
    Optimize,
    Measure,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Curve => "curve",
            CommandKind::Fig2 => "fig2",
            CommandKind::Fig3 => "fig3",
            CommandKind::Fig4 => "fig4",
            CommandKind::Optimize => "optimize",
            CommandKind::Measure => "measure",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cramér-Rao curves for explicit states
    Curve(Flags),
    /// cat, ECS, NOON, NO, coherent and shot-noise curves at one amplitude
    Fig2(Flags),
    /// cat, optimized UCS, chopping, NOON and NOON chopping
    Fig3(Flags),
    /// displace-and-count readout of the optimized UCS against its bound
    Fig4(Flags),
    /// joint optimum over state size and unbalancing per transmissivity
    Optimize(Flags),
    /// seeded Bayesian phase inference from simulated photon counts
    Measure(Flags),
}

impl Command {
    pub fn split(&self) -> (CommandKind, &Flags) {
        match self {
            Command::Curve(f) => (CommandKind::Curve, f),
            Command::Fig2(f) => (CommandKind::Fig2, f),
            Command::Fig3(f) => (CommandKind::Fig3, f),
            Command::Fig4(f) => (CommandKind::Fig4, f),
            Command::Optimize(f) => (CommandKind::Optimize, f),
            Command::Measure(f) => (CommandKind::Measure, f),
        }
    }
}

/// Raw settings; flags win over the config file, which wins over defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// state specs, e.g. `cat:alpha=3,ucs:a=0.7,nphi=4.45,noon:N=4`
    #[arg(long)]
    pub states: Option<String>,
    /// transmissivity grid MIN:MAX:COUNT
    #[arg(long)]
    pub eta: Option<String>,
    /// photons sent through the phase shift in total
    #[arg(long)]
    pub rphi: Option<f64>,
    /// readout displacement amplitude
    #[arg(long)]
    pub beta: Option<f64>,
    /// amplitude of the balanced reference cat
    #[arg(long = "alpha-bal")]
    pub alpha_bal: Option<f64>,
    /// largest balanced-cat amplitude allowed when chopping
    #[arg(long = "alpha-bal-max")]
    pub alpha_bal_max: Option<f64>,
    /// fix the state size instead of optimizing it
    #[arg(long)]
    pub nphi: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// counts per simulated trial
    #[arg(long)]
    pub m: Option<usize>,
    /// `both` or `phase-arm`
    #[arg(long)]
    pub loss: Option<String>,
    /// output file; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// per-mode Fock cutoff; forces the Fock-space route
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// key=value file with the same keys as the flags
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const CONFIG_KEYS: &[&str] = &[
    "states",
    "eta",
    "rphi",
    "beta",
    "alpha-bal",
    "alpha-bal-max",
    "nphi",
    "seed",
    "trials",
    "m",
    "loss",
    "out",
    "cutoff",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: `{line}` is not key=value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !CONFIG_KEYS.contains(&k) {
            return Err(Error::Parse(format!("config line {}: unknown key `{k}`", i + 1)));
        }
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| Error::Parse(format!("`{key}={v}`: bad value")))
}

impl Flags {
    /// Fills unset flags from `file`.
    pub fn merged_with(&self, file: &BTreeMap<String, String>) -> Result<Flags> {
        let mut f = self.clone();
        let s = |k: &str| file.get(k).cloned();
        f.states = f.states.or(s("states"));
        f.eta = f.eta.or(s("eta"));
        f.loss = f.loss.or(s("loss"));
        f.out = f.out.or(s("out").map(PathBuf::from));
        macro_rules! num {
            ($field:ident, $key:literal) => {
                if f.$field.is_none() {
                    if let Some(v) = file.get($key) {
                        f.$field = Some(parse_value($key, v)?);
                    }
                }
            };
        }
        num!(rphi, "rphi");
        num!(beta, "beta");
        num!(alpha_bal, "alpha-bal");
        num!(alpha_bal_max, "alpha-bal-max");
        num!(nphi, "nphi");
        num!(seed, "seed");
        num!(trials, "trials");
        num!(m, "m");
        num!(cutoff, "cutoff");
        Ok(f)
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub states: Vec<StateSpec>,
    pub eta: EtaGrid,
    pub r_phi: f64,
    pub alpha_bal: f64,
    pub alpha_bal_max: f64,
    pub beta: f64,
    pub n_phi: Option<f64>,
    pub seed: Option<u64>,
    pub trials: u64,
    pub m: usize,
    pub loss_mode: LossMode,
    pub out: Option<PathBuf>,
    pub cutoff: Option<usize>,
}

impl RunConfig {
    pub fn resolve(command: CommandKind, flags: &Flags) -> Result<RunConfig> {
        let flags = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Parse(format!("config `{}`: {e}", path.display())))?;
                flags.merged_with(&parse_config_text(&text)?)?
            }
            None => flags.clone(),
        };
        let states = match &flags.states {
            Some(s) => parse_spec_list(s)?,
            None => Vec::new(),
        };
        let eta = match (&flags.eta, command) {
            (Some(s), _) => s.parse::<EtaGrid>()?,
            (None, CommandKind::Measure) => EtaGrid::new(0.8, 0.8, 1)?,
            (None, _) => EtaGrid::default(),
        };
        let alpha_bal = flags.alpha_bal.unwrap_or(match command {
            CommandKind::Fig4 | CommandKind::Measure => 4.0,
            _ => 3.0,
        });
        let loss_mode = match flags.loss.as_deref() {
            None | Some("both") => LossMode::BothArms,
            Some("phase-arm") => LossMode::PhaseArmOnly,
            Some(other) => return Err(Error::Parse(format!("`loss={other}`: expected `both` or `phase-arm`"))),
        };
        let cfg = RunConfig {
            command,
            states,
            eta,
            r_phi: flags.rphi.unwrap_or(DEFAULT_R_PHI),
            alpha_bal,
            alpha_bal_max: flags.alpha_bal_max.unwrap_or(DEFAULT_ALPHA_BAL_MAX),
            beta: flags.beta.unwrap_or(4.0 * alpha_bal),
            n_phi: flags.nphi,
            seed: flags.seed,
            trials: flags.trials.unwrap_or(200),
            m: flags.m.unwrap_or(10_000),
            loss_mode,
            out: flags.out.clone(),
            cutoff: flags.cutoff,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(Error::Parse(m));
        if !(self.r_phi > 0.0) || !self.r_phi.is_finite() {
            return usage(format!("`rphi={}`: must be positive", self.r_phi));
        }
        if !(self.alpha_bal > 0.0) || !self.alpha_bal.is_finite() {
            return usage(format!("`alpha-bal={}`: must be positive", self.alpha_bal));
        }
        if !(self.alpha_bal_max > 0.0) || !self.alpha_bal_max.is_finite() {
            return usage(format!("`alpha-bal-max={}`: must be positive", self.alpha_bal_max));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return usage(format!("`beta={}`: must be non-negative", self.beta));
        }
        if let Some(n) = self.n_phi {
            if !(n > 0.0) || !n.is_finite() {
                return usage(format!("`nphi={n}`: must be positive"));
            }
        }
        if self.cutoff == Some(0) {
            return usage("`cutoff=0`: must be positive".into());
        }
        match self.command {
            CommandKind::Curve if self.states.is_empty() => usage("`curve` needs --states".into()),
            CommandKind::Measure => {
                if self.seed.is_none() {
                    return usage("`measure` needs --seed".into());
                }
                if self.eta.count != 1 {
                    return usage(format!("`eta={}`: `measure` takes a single transmissivity", self.eta));
                }
                if self.m == 0 || self.trials == 0 {
                    return usage("`measure` needs m >= 1 and trials >= 1".into());
                }
                match self.states.as_slice() {
                    [] => Ok(()),
                    [s] if s.two_branch().ok().flatten().is_some() => Ok(()),
                    [s] => usage(format!("`{s}`: `measure` supports coherent, cat and ucs states")),
                    _ => usage("`measure` takes at most one state".into()),
                }
            }
            _ => Ok(()),
        }
    }

    fn curve_options(&self) -> CurveOptions {
        CurveOptions {
            loss_mode: self.loss_mode,
            route: QfiRoute::Auto,
            cutoff: self.cutoff,
        }
    }

    /// Resolved settings as `#key=value` lines.
    pub fn comment_lines(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "#{k}={v}");
        };
        kv("command", self.command.name().into());
        if !self.states.is_empty() {
            let list: Vec<String> = self.states.iter().map(|x| x.to_string()).collect();
            kv("states", list.join(" "));
        }
        kv("eta", self.eta.to_string());
        kv("rphi", self.r_phi.to_string());
        kv(
            "loss",
            if self.loss_mode == LossMode::BothArms {
                "both".into()
            } else {
                "phase-arm".into()
            },
        );
        match self.command {
            CommandKind::Curve => {}
            CommandKind::Fig2 => kv("alpha", self.alpha_bal.to_string()),
            CommandKind::Fig3 | CommandKind::Optimize => {
                kv("alpha-bal", self.alpha_bal.to_string());
                kv("alpha-bal-max", self.alpha_bal_max.to_string());
            }
            CommandKind::Fig4 | CommandKind::Measure => {
                kv("alpha-bal", self.alpha_bal.to_string());
                kv("beta", self.beta.to_string());
            }
        }
        if let Some(n) = self.n_phi {
            kv("nphi", n.to_string());
        }
        if let Some(seed) = self.seed {
            kv("seed", seed.to_string());
        }
        if self.command == CommandKind::Measure {
            kv("trials", self.trials.to_string());
            kv("m", self.m.to_string());
        }
        if let Some(c) = self.cutoff {
            kv("cutoff", c.to_string());
        }
        s
    }
}

/// Twelve significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

fn curve_rows(curves: &[PrecisionCurve]) -> String {
    let mut rows: Vec<(&str, f64, &PrecisionPoint)> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(move |p| (c.label.as_str(), p.eta, p)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(b.0).then(a.1.total_cmp(&b.1)));
    let mut s = String::new();
    s.push_str(CURVE_HEADER);
    s.push('\n');
    for (label, _, p) in rows {
        let a = p.a_opt.map(fmt_num).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_num(p.eta),
            label,
            fmt_num(p.delta_phi),
            fmt_num(p.m),
            fmt_num(p.n_phi),
            a
        );
    }
    s
}

fn document(cfg: &RunConfig, extra: &[String], body: &str) -> String {
    let mut s = String::new();
    s.push_str(SCHEMA);
    s.push('\n');
    s.push_str(&cfg.comment_lines());
    for line in extra {
        let _ = writeln!(s, "#{line}");
    }
    s.push_str(body);
    s
}

fn cat_photons(alpha_bal: f64) -> Result<f64> {
    mean_photons_through_phase(&StateSpec::Cat { alpha: alpha_bal })
}

pub fn cmd_curve(cfg: &RunConfig) -> Result<String> {
    let etas = cfg.eta.values();
    let curves = cfg
        .states
        .iter()
        .map(|s| crb_curve(s, &etas, cfg.r_phi, cfg.curve_options()))
        .collect::<Result<Vec<_>>>()?;
    Ok(document(cfg, &[], &curve_rows(&curves)))
}

/// Curves of one figure plus `key=value` notes for the CSV preamble.
#[derive(Debug, Clone)]
pub struct Figure {
    pub curves: Vec<PrecisionCurve>,
    pub notes: Vec<String>,
}

impl Figure {
    pub fn curve(&self, label: &str) -> Option<&PrecisionCurve> {
        self.curves.iter().find(|c| c.label == label)
    }
}

pub fn fig2_curves(cfg: &RunConfig) -> Result<Figure> {
    let etas = cfg.eta.values();
    let alpha = cfg.alpha_bal;
    let n = noon_n_max(cat_photons(alpha)?);
    let opts = cfg.curve_options();
    let curves = vec![
        crb_curve_labeled(&StateSpec::Cat { alpha }, &etas, cfg.r_phi, opts, "cat")?,
        crb_curve_labeled(&StateSpec::Ecs { alpha }, &etas, cfg.r_phi, opts, "ECS")?,
        crb_curve_labeled(&StateSpec::Noon { n }, &etas, cfg.r_phi, opts, "NOON")?,
        crb_curve_labeled(&StateSpec::No { n }, &etas, cfg.r_phi, opts, "NO")?,
        crb_curve_labeled(&StateSpec::Coherent { alpha }, &etas, cfg.r_phi, opts, "CS")?,
        snl_curve(&etas, cfg.r_phi)?,
    ];
    let notes = vec!["figure=2".to_string(), format!("noon-N={n}")];
    Ok(Figure { curves, notes })
}

fn figure_document(cfg: &RunConfig, fig: &Figure) -> String {
    document(cfg, &fig.notes, &curve_rows(&fig.curves))
}

pub fn cmd_fig2(cfg: &RunConfig) -> Result<String> {
    Ok(figure_document(cfg, &fig2_curves(cfg)?))
}

pub fn fig3_curves(cfg: &RunConfig) -> Result<Figure> {
    let etas = cfg.eta.values();
    let n_phi = cat_photons(cfg.alpha_bal)?;
    let n = noon_n_max(n_phi);
    let ceiling = chop_ceiling(cfg.alpha_bal_max);
    let n_max = noon_n_max(ceiling);
    let opts = cfg.curve_options();
    // the balanced cat is the a = 1 member of the fixed-size UCS family
    let cat = crb_curve_labeled(&StateSpec::Ucs { a: 1.0, n_phi }, &etas, cfg.r_phi, opts, "cat")?;
    let curves = vec![
        cat,
        ucs_optimized_curve(n_phi, &etas, cfg.r_phi, "UCS")?,
        chop_curve(&etas, cfg.r_phi, cfg.alpha_bal_max, &[n_phi], "CC")?,
        crb_curve_labeled(&StateSpec::Noon { n }, &etas, cfg.r_phi, opts, "NOON")?,
        noon_chop_curve(&etas, cfg.r_phi, n_max, opts, "NC")?,
        snl_curve(&etas, cfg.r_phi)?,
    ];
    let notes = vec![
        "figure=3".to_string(),
        format!("nphi={}", fmt_num(n_phi)),
        format!("nphi-ceiling={}", fmt_num(ceiling)),
        format!("noon-N={n}"),
        format!("noon-N-max={n_max}"),
    ];
    Ok(Figure { curves, notes })
}

pub fn cmd_fig3(cfg: &RunConfig) -> Result<String> {
    Ok(figure_document(cfg, &fig3_curves(cfg)?))
}

/// Measured-UCS curve: best `(a, phi)` per transmissivity at fixed size.
pub fn ucs_measured_curve(n_phi: f64, etas: &[f64], beta: f64, r_phi: f64, label: &str) -> Result<PrecisionCurve> {
    let grid = default_phi_grid();
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let o = optimize_ucs_measurement(n_phi, eta, beta, &grid, r_phi).map_err(|e| e.at(label, eta))?;
        points.push(PrecisionPoint {
            eta,
            delta_phi: o.delta_phi,
            m: o.m,
            n_phi,
            a_opt: Some(o.a),
            spec: Some(StateSpec::Ucs { a: o.a, n_phi }),
        });
    }
    PrecisionCurve::new(label, points)
}

/// Re-evaluates a readout on the Fock-space route at the cutoff override,
/// so a too-small cutoff surfaces as a truncation error.
fn check_readout_cutoff(spec: &StateSpec, eta: f64, phi: f64, beta: f64, cutoff: usize, label: &str) -> Result<()> {
    crate::measurement::outcome_distribution_numeric(spec, eta, phi, beta, Some(cutoff))
        .map(|_| ())
        .map_err(|e| e.at(label, eta))
}

pub fn fig4_curves(cfg: &RunConfig) -> Result<Figure> {
    let etas = cfg.eta.values();
    let n_phi = cat_photons(cfg.alpha_bal)?;
    let n = noon_n_max(n_phi);
    let opts = cfg.curve_options();
    let measured = ucs_measured_curve(n_phi, &etas, cfg.beta, cfg.r_phi, "UCSM")?;
    if let Some(c) = cfg.cutoff {
        let grid = default_phi_grid();
        for p in &measured.points {
            let spec = p.spec.expect("measured points carry their state");
            let r = TwoBranchReadout::for_spec(&spec, p.eta, cfg.beta)?;
            let (phi, _) = best_phase(&r, &grid)?;
            check_readout_cutoff(&spec, p.eta, phi, cfg.beta, c, "UCSM")?;
        }
    }
    let bound = if cfg.cutoff.is_some() {
        // fixed-a numerics at each optimum so the override is exercised
        let mut pts = Vec::with_capacity(etas.len());
        for &eta in &etas {
            let o = optimize_ucs_a(n_phi, eta, cfg.r_phi).map_err(|e| e.at("UCS-CRB", eta))?;
            let c = crb_curve_labeled(&StateSpec::Ucs { a: o.a, n_phi }, &[eta], cfg.r_phi, opts, "UCS-CRB")?;
            pts.push(PrecisionPoint {
                a_opt: Some(o.a),
                ..c.points[0]
            });
        }
        PrecisionCurve::new("UCS-CRB", pts)?
    } else {
        ucs_optimized_curve(n_phi, &etas, cfg.r_phi, "UCS-CRB")?
    };
    let curves = vec![
        measured,
        bound,
        crb_curve_labeled(&StateSpec::Noon { n }, &etas, cfg.r_phi, opts, "NOON")?,
        snl_curve(&etas, cfg.r_phi)?,
    ];
    let notes = vec![
        "figure=4".to_string(),
        format!("nphi={}", fmt_num(n_phi)),
        format!("noon-N={n}"),
        "ECSM=not computed; the entangled-coherent-state readout relies on a scheme outside this tool".to_string(),
    ];
    Ok(Figure { curves, notes })
}

pub fn cmd_fig4(cfg: &RunConfig) -> Result<String> {
    Ok(figure_document(cfg, &fig4_curves(cfg)?))
}

pub fn cmd_optimize(cfg: &RunConfig) -> Result<String> {
    let mut body = String::new();
    body.push_str(OPTIMIZE_HEADER);
    body.push('\n');
    for eta in cfg.eta.values() {
        let (a, n, d) = match cfg.n_phi {
            Some(n) => {
                let o = optimize_ucs_a(n, eta, cfg.r_phi).map_err(|e| e.at("UCS", eta))?;
                (o.a, n, o.delta_phi)
            }
            None => {
                let o = chop_optimize(eta, cfg.r_phi, cfg.alpha_bal_max, &[]).map_err(|e| e.at("CC", eta))?;
                (o.a, o.n_phi, o.delta_phi)
            }
        };
        let _ = writeln!(body, "{},{},{},{}", fmt_num(eta), fmt_num(a), fmt_num(n), fmt_num(d));
    }
    let extra = [format!("nphi-ceiling={}", fmt_num(chop_ceiling(cfg.alpha_bal_max)))];
    Ok(document(cfg, &extra, &body))
}

pub fn cmd_measure(cfg: &RunConfig) -> Result<String> {
    let eta = cfg.eta.values()[0];
    let grid = default_phi_grid();
    let spec = match cfg.states.first() {
        Some(s) => *s,
        None => {
            let n_phi = cat_photons(cfg.alpha_bal)?;
            let o = optimize_ucs_measurement(n_phi, eta, cfg.beta, &grid, cfg.r_phi)?;
            StateSpec::Ucs { a: o.a, n_phi }
        }
    };
    let readout = TwoBranchReadout::for_spec(&spec, eta, cfg.beta)?;
    let (phi, f_c) = best_phase(&readout, &grid)?;
    if let Some(c) = cfg.cutoff {
        check_readout_cutoff(&spec, eta, phi, cfg.beta, c, &spec.to_string())?;
    }
    let seed = cfg.seed.expect("validated");
    let mc = MeasurementConfig::new(spec, eta, cfg.beta, cfg.m, seed, phi);
    let trials = run_trials(&mc, phi, cfg.trials)?;
    let mut body = String::new();
    body.push_str(MEASURE_HEADER);
    body.push('\n');
    for t in &trials {
        let _ = writeln!(
            body,
            "{},{},{},{},{}",
            t.trial,
            fmt_num(t.phi_true),
            fmt_num(t.mean_phi),
            fmt_num(t.std_phi),
            t.n_updates
        );
    }
    let extra = [
        format!("state={spec}"),
        format!("phi-opt={}", fmt_num(phi)),
        format!("fisher-classical={}", fmt_num(f_c)),
        format!("std-expected={}", fmt_num(1.0 / (cfg.m as f64 * f_c).sqrt())),
    ];
    Ok(document(cfg, &extra, &body))
}

pub fn execute(cfg: &RunConfig) -> Result<String> {
    match cfg.command {
        CommandKind::Curve => cmd_curve(cfg),
        CommandKind::Fig2 => cmd_fig2(cfg),
        CommandKind::Fig3 => cmd_fig3(cfg),
        CommandKind::Fig4 => cmd_fig4(cfg),
        CommandKind::Optimize => cmd_optimize(cfg),
        CommandKind::Measure => cmd_measure(cfg),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes())
        }
    }
}

/// Exit code for an error: usage problems, truncation breaches, the rest.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Parse(_) => EXIT_USAGE,
        Error::Truncation { .. } => EXIT_TRUNCATION,
        _ => EXIT_FAILURE,
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let (kind, flags) = cli.command.split();
    let result = RunConfig::resolve(kind, flags).and_then(|cfg| execute(&cfg).map(|text| (cfg, text)));
    match result {
        Ok((cfg, text)) => match write_output(cfg.out.as_deref(), &text) {
            Ok(()) => 0,
            Err(e) => {
                let path = cfg.out.as_deref().map(|p| p.display().to_string()).unwrap_or_default();
                eprintln!("error: cannot write `{path}`: {e}");
                EXIT_FAILURE
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(kind: CommandKind, f: Flags) -> Result<RunConfig> {
        RunConfig::resolve(kind, &f)
    }

    #[test]
    fn config_file_parsing() {
        let m = parse_config_text("# preset\nrphi = 200\n\neta=0.5:1:3  # trailing\n").unwrap();
        assert_eq!(m["rphi"], "200");
        assert_eq!(m["eta"], "0.5:1:3");
        assert!(parse_config_text("bogus=1").unwrap_err().to_string().contains("bogus"));
        assert!(parse_config_text("rphi").is_err());
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = parse_config_text("rphi=200\nbeta=9\n").unwrap();
        let flags = Flags {
            rphi: Some(100.0),
            ..Flags::default()
        }
        .merged_with(&file)
        .unwrap();
        let cfg = resolve(CommandKind::Fig4, flags).unwrap();
        assert_eq!(cfg.r_phi, 100.0);
        assert_eq!(cfg.beta, 9.0);
        assert_eq!(cfg.alpha_bal, 4.0);
        assert_eq!(cfg.eta, EtaGrid::default());
        let d = resolve(CommandKind::Fig4, Flags::default()).unwrap();
        assert_eq!(d.beta, 16.0);
    }

    #[test]
    fn usage_errors_name_the_token() {
        let bad = |f: Flags| resolve(CommandKind::Curve, f).unwrap_err().to_string();
        let e = bad(Flags {
            states: Some("cat:alpha=3,squeezed:r=1".into()),
            ..Flags::default()
        });
        assert!(e.contains("squeezed"), "{e}");
        let e = bad(Flags {
            states: Some("cat:alpha=x".into()),
            ..Flags::default()
        });
        assert!(e.contains("alpha=x"), "{e}");
        assert!(bad(Flags::default()).contains("--states"));
        let e = resolve(CommandKind::Measure, Flags::default()).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
    }

    #[test]
    fn curve_rows_sorted_and_formatted() {
        let cfg = resolve(
            CommandKind::Curve,
            Flags {
                states: Some("noon:N=4,cat:alpha=3".into()),
                eta: Some("0.5:1:2".into()),
                ..Flags::default()
            },
        )
        .unwrap();
        let text = cmd_curve(&cfg).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SCHEMA);
        let h = lines.iter().position(|l| *l == CURVE_HEADER).unwrap();
        assert!(lines[..h].iter().all(|l| l.starts_with('#')));
        let rows = &lines[h + 1..];
        assert_eq!(rows.len(), 4);
        assert!(rows[0].starts_with("5.00000000000e-1,cat:alpha=3,"));
        assert!(rows[3].starts_with("1.00000000000e0,noon:N=4,1.76776695297e-2,"));
    }

    #[test]
    fn truncation_maps_to_its_exit_code() {
        let cfg = resolve(
            CommandKind::Curve,
            Flags {
                states: Some("cat:alpha=3".into()),
                eta: Some("0.5:0.5:1".into()),
                cutoff: Some(10),
                ..Flags::default()
            },
        )
        .unwrap();
        let e = cmd_curve(&cfg).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_TRUNCATION);
        let msg = e.to_string();
        assert!(msg.contains("cat:alpha=3") && msg.contains("eta=0.5"), "{msg}");
    }
}
