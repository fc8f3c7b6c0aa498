//! Command-line front end.
//!
//! Every subcommand reads an optional JSON config (`--config`) and lets flags
//! override its fields. Failures print `{"error": kind, "message": ...}` on
//! stderr and exit with 2 (validation), 3 (certification), 4 (convergence),
//! 5 (size cap) or 1 (I/O, failed verification).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::directional::second_directional;
use crate::dynamics::{escape_experiment, gd_run, EscapeConfig, GdConfig, InitDirection};
use crate::factors::{make_minimizer, product, DimSignature, EntryLaw, FactorChain, InstanceDoc, Target};
use crate::hessian_oracle::{
    dense_hessian_at_minimum, fd_dense_hessian, DEFAULT_ENTRY_CAP, FD_STEP, NULLITY_TOL,
};
use crate::landscape::{attach_projection, contour_grid, BasisMode, GridSpec, ProjectionBasis};
use crate::linalg::rel_err;
use crate::sharpness::{
    lambda_max, lambda_max_depth2_chain, lambda_max_general, lambda_max_scalar_chain, SharpnessReport,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "sharpfactor", version, about = "Exact Hessian sharpness of deep matrix factorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random minimizer instance as JSON.
    Generate(CommonArgs),
    /// Closed-form λ_max at a minimizer.
    Sharpness(CommonArgs),
    /// Compare the closed form with the dense and finite-difference Hessians.
    Verify(CommonArgs),
    /// GD escape experiment over a step-size grid.
    Escape(CommonArgs),
    /// Loss-landscape contour grid around a minimizer.
    Contour(CommonArgs),
    /// Dispatch on the `kind` field of a config file.
    Run(CommonArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated widths d_0,…,d_L.
    #[arg(long)]
    pub dims: Option<String>,
    /// Random widths `L,d_0,d_L,lo,hi`: hidden widths uniform in `[lo, hi]`,
    /// drawn with `--seed`.
    #[arg(long = "random-dims")]
    pub random_dims: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seeds for the escape experiment.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Use identity factors instead of random ones.
    #[arg(long)]
    pub identity: bool,
    /// Instance JSON (`dims`, `factors`, `target`) instead of generating one.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Comma-separated multiples of 2/λ_max.
    #[arg(long = "eta-multipliers")]
    pub eta_multipliers: Option<String>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    #[arg(long = "record-every")]
    pub record_every: Option<usize>,
    /// `N`, `A,N` or `X0,X1,Y0,Y1,NX,NY`.
    #[arg(long)]
    pub grid: Option<String>,
    /// `hessian` (v_1, v_N) or `random`.
    #[arg(long)]
    pub basis: Option<String>,
    /// Step-size multiplier of a GD run to overlay on the contour grid.
    #[arg(long)]
    pub overlay: Option<f64>,
    /// Formula: `auto`, `general`, `scalar_chain` or `depth2`.
    #[arg(long)]
    pub method: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Sharpness,
    Verify,
    Escape,
    Contour,
    ScalarChain,
    Depth2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomDims {
    pub depth: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub range: (usize, usize),
    /// Defaults to the experiment seed.
    pub seed: Option<u64>,
}

/// Declarative experiment description; unknown fields are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,
    pub dims: Option<Vec<usize>>,
    /// File holding the widths as a JSON array or comma-separated text.
    pub dims_file: Option<PathBuf>,
    pub random_dims: Option<RandomDims>,
    pub instance: Option<PathBuf>,
    #[serde(default)]
    pub identity: bool,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub eta_multipliers: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub max_iters: Option<usize>,
    pub record_every: Option<usize>,
    pub grid: Option<String>,
    pub basis: Option<String>,
    pub overlay: Option<f64>,
    pub method: Option<String>,
    pub out: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| Error::Config(format!("cannot parse {what} entry {t:?}")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Config file (if any) with flag overrides applied.
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(d) = &args.dims {
            cfg.dims = Some(parse_list(d, "dims")?);
            cfg.random_dims = None;
        }
        if let Some(r) = &args.random_dims {
            let v: Vec<usize> = parse_list(r, "random dims")?;
            let [depth, input_dim, output_dim, lo, hi] = v[..] else {
                return Err(Error::Config("--random-dims takes L,d_0,d_L,lo,hi".into()));
            };
            cfg.dims = None;
            cfg.random_dims = Some(RandomDims {
                depth,
                input_dim,
                output_dim,
                range: (lo, hi),
                seed: None,
            });
        }
        if let Some(s) = args.seed {
            cfg.seed = Some(s);
        }
        if let Some(s) = &args.seeds {
            cfg.seeds = Some(parse_list(s, "seeds")?);
        }
        if args.identity {
            cfg.identity = true;
        }
        if let Some(p) = &args.instance {
            cfg.instance = Some(p.clone());
        }
        if let Some(m) = &args.eta_multipliers {
            cfg.eta_multipliers = Some(parse_list(m, "eta multipliers")?);
        }
        if args.radius.is_some() {
            cfg.radius = args.radius;
        }
        if args.max_iters.is_some() {
            cfg.max_iters = args.max_iters;
        }
        if args.record_every.is_some() {
            cfg.record_every = args.record_every;
        }
        if args.grid.is_some() {
            cfg.grid = args.grid.clone();
        }
        if args.basis.is_some() {
            cfg.basis = args.basis.clone();
        }
        if args.overlay.is_some() {
            cfg.overlay = args.overlay;
        }
        if args.method.is_some() {
            cfg.method = args.method.clone();
        }
        if args.out.is_some() {
            cfg.out = args.out.clone();
        }
        Ok(cfg)
    }

    fn signature(&self) -> Result<DimSignature> {
        if let (None, Some(r)) = (&self.dims, &self.random_dims) {
            let seed = r.seed.or(self.seed).unwrap_or(0);
            return DimSignature::random(r.depth, r.input_dim, r.output_dim, r.range, seed);
        }
        let dims = match (&self.dims, &self.dims_file) {
            (Some(d), _) => d.clone(),
            (None, Some(p)) => {
                let text = fs::read_to_string(p)?;
                match serde_json::from_str::<Vec<usize>>(&text) {
                    Ok(d) => d,
                    Err(_) => parse_list(text.trim(), "dims")?,
                }
            }
            (None, None) => {
                return Err(Error::Config("no dims given (--dims, --random-dims or dims_file)".into()))
            }
        };
        DimSignature::new(dims)
    }

    /// The instance: a file, the identity chain, or a seeded random minimizer.
    pub fn instance(&self) -> Result<(FactorChain, Target, Option<u64>)> {
        if let Some(p) = &self.instance {
            let doc: InstanceDoc = serde_json::from_str(&fs::read_to_string(p)?)?;
            let (c, t) = doc.to_instance()?;
            return Ok((c, t, doc.seed));
        }
        let sig = self.signature()?;
        if self.identity {
            let c = FactorChain::identity(&sig);
            let t = Target(product(&c));
            return Ok((c, t, None));
        }
        let seed = self.seed.unwrap_or(0);
        let (c, t) = make_minimizer(&sig, seed, EntryLaw::default())?;
        Ok((c, t, Some(seed)))
    }

    fn grid_spec(&self, points: &[(f64, f64)]) -> Result<GridSpec> {
        let fallback = 1.0;
        let spec = match &self.grid {
            None => GridSpec::fitted(points, fallback),
            Some(g) => {
                let vals: Vec<f64> = parse_list(g, "grid")?;
                let count = |v: f64| -> Result<usize> {
                    if v >= 2.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::Config(format!("grid resolution must be an integer ≥ 2, got {v}")))
                    }
                };
                match vals.as_slice() {
                    [n] => {
                        let mut s = GridSpec::fitted(points, fallback);
                        s.nx = count(*n)?;
                        s.ny = s.nx;
                        s
                    }
                    [a, n] => GridSpec::square(*a, count(*n)?),
                    [x0, x1, y0, y1, nx, ny] => GridSpec {
                        x_range: (*x0, *x1),
                        y_range: (*y0, *y1),
                        nx: count(*nx)?,
                        ny: count(*ny)?,
                    },
                    _ => return Err(Error::Config(format!("cannot parse grid {g:?}"))),
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Parses arguments, runs, and reports errors; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(&cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            let doc = json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{doc}");
            e.exit_code()
        }
    }
}

/// Runs one command, writing its primary JSON document to `out`.
pub fn run<W: Write>(command: &Command, out: &mut W) -> Result<i32> {
    match command {
        Command::Generate(a) => cmd_generate(&ExperimentConfig::resolve(a)?, out),
        Command::Sharpness(a) => cmd_sharpness(&expect_kind(a, &[Kind::Sharpness, Kind::ScalarChain, Kind::Depth2])?, out),
        Command::Verify(a) => cmd_verify(&expect_kind(a, &[Kind::Verify])?, out),
        Command::Escape(a) => cmd_escape(&expect_kind(a, &[Kind::Escape])?, out),
        Command::Contour(a) => cmd_contour(&expect_kind(a, &[Kind::Contour])?, out),
        Command::Run(a) => {
            let cfg = ExperimentConfig::resolve(a)?;
            match cfg.kind {
                Some(Kind::Sharpness | Kind::ScalarChain | Kind::Depth2) => cmd_sharpness(&cfg, out),
                Some(Kind::Verify) => cmd_verify(&cfg, out),
                Some(Kind::Escape) => cmd_escape(&cfg, out),
                Some(Kind::Contour) => cmd_contour(&cfg, out),
                None => Err(Error::Config("`run` needs a config with a `kind` field".into())),
            }
        }
    }
}

fn expect_kind(args: &CommonArgs, allowed: &[Kind]) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::resolve(args)?;
    if let Some(k) = cfg.kind {
        if !allowed.contains(&k) {
            return Err(Error::Config(format!("config kind {k:?} does not match this command")));
        }
    }
    Ok(cfg)
}

fn write_doc<W: Write, T: Serialize>(out: &mut W, doc: &T, file: Option<PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)?;
    writeln!(out, "{text}")?;
    if let Some(path) = file {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, format!("{text}\n"))?;
    }
    Ok(())
}

fn out_file(cfg: &ExperimentConfig, name: &str) -> Option<PathBuf> {
    cfg.out.as_ref().map(|d| d.join(name))
}

pub fn cmd_generate<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<i32> {
    let (c, t, seed) = cfg.instance()?;
    write_doc(out, &InstanceDoc::from_instance(&c, &t, seed), out_file(cfg, "instance.json"))?;
    Ok(0)
}

fn sharpness_report(cfg: &ExperimentConfig, c: &FactorChain, t: &Target) -> Result<SharpnessReport> {
    let method = match (cfg.kind, cfg.method.as_deref()) {
        (_, Some(m)) => m.to_string(),
        (Some(Kind::ScalarChain), None) => "scalar_chain".into(),
        (Some(Kind::Depth2), None) => "depth2".into(),
        _ => "auto".into(),
    };
    match method.as_str() {
        "auto" => lambda_max(c, t),
        "general" | "general_kron" => lambda_max_general(c, t),
        "scalar_chain" => lambda_max_scalar_chain(c, t),
        "depth2" => lambda_max_depth2_chain(c, t),
        other => Err(Error::Config(format!("unknown method {other:?}"))),
    }
}

pub fn cmd_sharpness<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<i32> {
    let (c, t, _) = cfg.instance()?;
    let report = sharpness_report(cfg, &c, &t)?;
    write_doc(out, &report.to_doc(true), out_file(cfg, "sharpness.json"))?;
    Ok(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, reference: f64, tol: f64) -> Self {
        let e = rel_err(value, reference);
        Self {
            name: name.into(),
            value,
            reference,
            rel_err: e,
            tol,
            pass: e <= tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub dims: Vec<usize>,
    pub n: usize,
    pub lambda_general: f64,
    pub lambda_dense: f64,
    pub lambda_fd: f64,
    pub nullity: usize,
    pub nullity_bound: usize,
    pub checks: Vec<Check>,
    pub pass: bool,
}

pub fn cmd_verify<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<i32> {
    let (c, t, _) = cfg.instance()?;
    let report = verify_instance(&c, &t)?;
    let pass = report.pass;
    write_doc(out, &report, out_file(cfg, "verify.json"))?;
    Ok(if pass { 0 } else { 1 })
}

/// All closed forms against each other and against both dense oracles.
pub fn verify_instance(c: &FactorChain, t: &Target) -> Result<VerifyReport> {
    let sig = c.signature();
    let general = lambda_max_general(c, t)?;
    let dense = dense_hessian_at_minimum(c, t, DEFAULT_ENTRY_CAP)?;
    let fd = fd_dense_hessian(c, t, FD_STEP, DEFAULT_ENTRY_CAP)?;
    let lg = general.lambda_max;
    let mut checks = vec![
        Check::new("general_vs_dense", lg, dense.lambda_max(), 1e-8),
        Check::new("fd_vs_general", fd.lambda_max(), lg, 1e-4),
    ];
    if sig.is_scalar() {
        let s = lambda_max_scalar_chain(c, t)?.lambda_max;
        checks.push(Check::new("scalar_chain_vs_general", s, lg, 1e-10));
    }
    if sig.depth() == 2 {
        let s = lambda_max_depth2_chain(c, t)?.lambda_max;
        checks.push(Check::new("depth2_vs_general", s, lg, 1e-10));
    }
    let best = lambda_max(c, t)?;
    let dir = best.extremal_direction.as_ref().expect("closed forms carry a direction");
    let rayleigh = second_directional(c, t, dir)?;
    checks.push(Check::new("extremal_rayleigh", rayleigh, best.lambda_max, 1e-6));
    let nullity = dense.nullity(NULLITY_TOL).unwrap_or(0);
    let nullity_bound = sig.num_params().saturating_sub(sig.input_dim() * sig.output_dim());
    let pass = checks.iter().all(|k| k.pass) && nullity >= nullity_bound;
    Ok(VerifyReport {
        dims: sig.dims().to_vec(),
        n: sig.num_params(),
        lambda_general: lg,
        lambda_dense: dense.lambda_max(),
        lambda_fd: fd.lambda_max(),
        nullity,
        nullity_bound,
        checks,
        pass,
    })
}

fn mult_label(m: f64) -> String {
    format!("{m}").replace('.', "p")
}

pub fn cmd_escape<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<i32> {
    let sig = cfg.signature()?;
    let seeds = match (&cfg.seeds, cfg.seed) {
        (Some(s), _) => s.clone(),
        (None, Some(s)) => vec![s],
        (None, None) => vec![0],
    };
    let mults = cfg
        .eta_multipliers
        .clone()
        .unwrap_or_else(|| vec![0.5, 0.9, 1.0, 1.1, 2.0]);
    let mut ec = EscapeConfig::new(sig.dims().to_vec(), seeds, mults, cfg.radius.unwrap_or(1e-9));
    if let Some(m) = cfg.max_iters {
        ec.max_iters = m;
    }
    if let Some(r) = cfg.record_every {
        ec.record_every = r;
    }
    let report = escape_experiment(&ec)?;
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        for cell in &report.cells {
            if let Some(traj) = &cell.trajectory {
                let name = format!("traj_seed{}_eta{}.csv", cell.seed, mult_label(cell.multiplier));
                let file = fs::File::create(dir.join(name))?;
                traj.write_csv(std::io::BufWriter::new(file))?;
            }
        }
    }
    write_doc(out, &report, out_file(cfg, "report.json"))?;
    Ok(0)
}

fn parse_basis(s: Option<&str>) -> Result<BasisMode> {
    match s.unwrap_or("hessian") {
        "hessian" | "hessian_v1_vn" => Ok(BasisMode::HessianV1VN),
        "random" => Ok(BasisMode::Random),
        other => Err(Error::Config(format!("unknown basis {other:?}"))),
    }
}

pub fn cmd_contour<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<i32> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("contour needs --out".into()))?;
    let (c, t, seed) = cfg.instance()?;
    let mode = parse_basis(cfg.basis.as_deref())?;
    let hessian = dense_hessian_at_minimum(&c, &t, DEFAULT_ENTRY_CAP)?;
    let basis = match mode {
        BasisMode::HessianV1VN => ProjectionBasis::from_hessian(&c, &hessian)?,
        BasisMode::Random => ProjectionBasis::random(&c, seed.unwrap_or(0)),
    };

    let mut traj = None;
    if let Some(mult) = cfg.overlay {
        let lambda = lambda_max(&c, &t)?.lambda_max;
        let v1 = hessian.top_eigenvector().expect("dense path keeps eigenvectors");
        let mut gd = GdConfig::new(mult * 2.0 / lambda);
        gd.init_radius = cfg.radius.unwrap_or(1e-9);
        gd.init_direction =
            InitDirection::Custom(crate::Direction::from_flat(c.signature(), v1.as_slice())?);
        gd.max_iters = cfg.max_iters.unwrap_or(10_000);
        gd.record_every = cfg.record_every.unwrap_or(1);
        gd.record_params = true;
        gd.min_iters = gd.max_iters.min(5_000);
        let mut tr = gd_run(&c, &t, &gd)?;
        attach_projection(&mut tr, &basis)?;
        traj = Some(tr);
    }
    let points: Vec<(f64, f64)> = traj
        .iter()
        .flat_map(|tr| tr.snapshots.iter().filter_map(|s| s.proj))
        .collect();
    let spec = cfg.grid_spec(&points)?;
    let grid = contour_grid(&c, &t, &basis, &spec)?;

    fs::create_dir_all(&dir)?;
    fs::write(
        dir.join("instance.json"),
        serde_json::to_string(&InstanceDoc::from_instance(&c, &t, seed))? + "\n",
    )?;
    grid.write_csv(std::io::BufWriter::new(fs::File::create(dir.join("grid.csv"))?))?;
    fs::write(
        dir.join("basis.json"),
        serde_json::to_string(&basis.to_doc(Some("instance.json".into())))? + "\n",
    )?;
    if let Some(tr) = &traj {
        tr.write_csv(std::io::BufWriter::new(fs::File::create(dir.join("trajectory.csv"))?))?;
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("overlay.csv"))?);
        writeln!(f, "iter,x,y")?;
        for s in &tr.snapshots {
            let (x, y) = s.proj.expect("projection attached");
            writeln!(f, "{},{},{}", s.iter, crate::dynamics::fmt_f64(x), crate::dynamics::fmt_f64(y))?;
        }
    }
    let summary = json!({
        "mode": basis.mode,
        "x_range": spec.x_range,
        "y_range": spec.y_range,
        "nx": spec.nx,
        "ny": spec.ny,
        "center_loss": crate::factors::loss(&c, &t)?,
        "overlay_rows": traj.as_ref().map(|tr| tr.snapshots.len()),
        "hessian": hessian.summary(),
    });
    write_doc(out, &summary, None)?;
    Ok(0)
}
