//! Command-line front end: one subcommand per module plus the acceptance runner.

use crate::acceptance::{self, check_region_invariants, Profile, CRITERIA};
use crate::config::{parse_window, RunConfig};
use crate::covariance::{sample_fields, CovarianceContext, PaddedDomain, PolarizationMode};
use crate::error::{Error, Result};
use crate::expansion::{
    enumerate_forests, interpolate_inf_rule, mayer_connectivity, mayer_tree_formula, pairs, positivity_decomposition,
    verify_forest_formula, Forest, OverlapGraph, TestFunction,
};
use crate::kernels::{
    default_half_extent, polarization_kernel, propagator_kernel, sqrt_one_plus_pi_kernel, SampledKernel, SqrtSign,
};
use crate::model::{params_for_mass, solve_gap_equation, gap_residual, Regulator};
use crate::operators::*;
use crate::regions::*;
use crate::results::{ResultRow, ResultsTable};
use crate::twopoint::{estimate_s2, SamplerConfig};
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "largen-sigma", version, about = "Numerical checks for mass generation in the large-N σ-model")]
pub struct Cli {
    /// Output directory; defaults to the config value or $LARGEN_SIGMA_OUT.
    #[arg(long, global = true)]
    pub outdir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long = "K")]
    pub big_k: Option<f64>,
    #[arg(long = "N")]
    pub big_n: Option<u64>,
    #[arg(long)]
    pub regulator: Option<Regulator>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the gap equation and report derived parameters.
    GapSolve(ModelArgs),
    /// Build F, π and (1+π)^{±1/2} kernels, write caches and radial profiles.
    Kernels {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        m: Option<f64>,
        #[arg(long, default_value_t = 0.125)]
        grid_step: f64,
        #[arg(long)]
        extent: Option<f64>,
    },
    /// Classify squares of a field file and build the regions.
    Decompose {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        field: PathBuf,
    },
    /// Operator checks on a field file or on one C₀ sample.
    Opcheck {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "norm,detsplit,dsplit,traceineq,linknorm")]
        checks: Vec<String>,
    },
    /// Corridor covariance, normalization and δC for a large-square list.
    Covariance {
        #[command(flatten)]
        model: ModelArgs,
        /// Lines `i j [level]` naming large squares.
        #[arg(long)]
        regions: PathBuf,
    },
    /// Forest formula, positivity and Mayer checks.
    ForestVerify {
        #[arg(long, default_value_t = 4)]
        max_size: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Reweighted Monte Carlo two-point function and its decay rate.
    Twopoint {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fit window `lo,hi` in units of the square side.
        #[arg(long)]
        separations: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite.
    AcceptAll {
        #[arg(long, default_value = "quick")]
        profile: Profile,
        /// Subset of criteria, e.g. `1,3,12`.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
        #[arg(long)]
        timings: bool,
    },
}

/// Exit status for a finished run.
pub fn exit_code(outcome: &Result<bool>) -> i32 {
    match outcome {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(Error::Config(_)) | Err(Error::InvalidParameter { .. }) | Err(Error::Io { .. }) | Err(Error::Format { .. }) => {
            EXIT_CONFIG
        }
        Err(_) => EXIT_NUMERICAL,
    }
}

fn load_config(args: &ModelArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.big_k {
        cfg.big_k = v;
    }
    if let Some(v) = args.big_n {
        cfg.big_n = v;
    }
    if let Some(v) = args.regulator {
        cfg.regulator = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Output {
    dir: PathBuf,
    table: ResultsTable,
}

impl Output {
    fn new(outdir: &Option<PathBuf>, cfg: Option<&RunConfig>) -> Self {
        let dir = outdir
            .clone()
            .or_else(|| cfg.map(|c| c.output_dir.clone()))
            .unwrap_or_else(|| RunConfig::default().output_dir);
        let mut table = ResultsTable::new();
        table.record_timings = cfg.map(|c| c.timings).unwrap_or(false);
        table.config_hash = cfg.map(|c| c.hash());
        Output { dir, table }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn finish(self, name: &str) -> Result<bool> {
        for r in self.table.rows() {
            println!(
                "{} {} = {:.6e} (bound {:.6e})",
                if r.pass { "PASS" } else { "FAIL" },
                r.check_id,
                r.value,
                r.bound
            );
        }
        let path = self.table.persist(&self.dir, name)?;
        println!("results: {}", path.display());
        Ok(self.table.all_pass())
    }
}

pub fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::GapSolve(model) => gap_solve(&cli, model),
        Command::Kernels {
            model,
            m,
            grid_step,
            extent,
        } => kernels(&cli, model, *m, *grid_step, *extent),
        Command::Decompose { model, field } => decompose(&cli, model, field),
        Command::Opcheck { model, field, checks } => opcheck(&cli, model, field.as_deref(), checks),
        Command::Covariance { model, regions } => covariance(&cli, model, regions),
        Command::ForestVerify { max_size, trials, seed } => forest_verify(&cli, *max_size, *trials, *seed),
        Command::Twopoint {
            model,
            samples,
            seed,
            separations,
            out,
        } => twopoint(&cli, model, *samples, *seed, separations.as_deref(), out.as_deref()),
        Command::AcceptAll {
            profile,
            criteria,
            timings,
        } => accept_all(&cli, *profile, criteria, *timings),
    }
}

fn gap_solve(cli: &Cli, model: &ModelArgs) -> Result<bool> {
    let cfg = load_config(model)?;
    let p = cfg.params()?;
    println!("{}", p.report());
    let mut out = Output::new(&cli.outdir, Some(&cfg));
    let m2 = solve_gap_equation(cfg.lambda, cfg.big_k, cfg.regulator)?;
    let res = gap_residual(m2, cfg.lambda, cfg.big_k, cfg.regulator)?;
    out.table.push(ResultRow::at_most("gap.residual", "model-core", "gap equation residual", res.abs(), 1e-10));
    out.table.push(ResultRow::info("gap.m2", "model-core", "squared mass", m2));
    out.table.push(ResultRow::info("gap.c_m", "model-core", "mass constant", p.c_m()));
    out.finish("gap-solve")
}

fn kernels(cli: &Cli, model: &ModelArgs, m: Option<f64>, grid_step: f64, extent: Option<f64>) -> Result<bool> {
    let cfg = load_config(model)?;
    let p = match m {
        Some(m) => params_for_mass(m, cfg.big_k, cfg.big_n, cfg.regulator)?,
        None => cfg.params()?,
    };
    let he = extent.unwrap_or_else(|| default_half_extent(p.m));
    let mut out = Output::new(&cli.outdir, Some(&cfg));
    let hash = cfg.hash();
    let built: [(&str, SampledKernel, f64); 4] = [
        ("F", propagator_kernel(p.m, grid_step, he)?, p.m),
        ("pi", polarization_kernel(&p, grid_step, he)?, 2.0 * p.m),
        ("sqrt_plus", sqrt_one_plus_pi_kernel(&p, SqrtSign::Plus, grid_step, he)?, 2.0 * p.m),
        ("sqrt_minus", sqrt_one_plus_pi_kernel(&p, SqrtSign::Minus, grid_step, he)?, 2.0 * p.m),
    ];
    std::fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
    for (tag, k, target) in &built {
        k.write_cache(&out.dir.join(format!("kernel_{tag}.bin")), &hash)?;
        out.write(&format!("kernel_{tag}_profile.csv"), &k.profile_csv())?;
        out.table.push(ResultRow::at_most(
            format!("kernels.{tag}.rate"),
            "kernels",
            "decay rate relative deviation",
            (k.fitted_decay_rate / target - 1.0).abs(),
            0.1,
        ));
    }
    let min = built[0].1.values.iter().copied().fold(f64::INFINITY, f64::min);
    out.table.push(ResultRow::new("kernels.F.positive", "kernels", "propagator positive", min, 0.0, min > 0.0));
    out.finish("kernels")
}

fn decompose(cli: &Cli, model: &ModelArgs, field: &Path) -> Result<bool> {
    let cfg = load_config(model)?;
    let p = cfg.params()?;
    let f = FieldConfig::read(field)?;
    let g = f.geometry;
    let a = classify_squares(&f, &p);
    let r = build_regions(&a, &g, p.corridor_m)?;
    let mut out = Output::new(&cli.outdir, Some(&cfg));
    out.write("decompose_regions.csv", &r.report_csv(&a, &g))?;
    println!(
        "squares {} large {} components {} e-components {} |γ| {} |Γ| {} |Γᵉ| {}",
        g.num_squares(),
        a.large_squares().len(),
        r.components.len(),
        r.e_components.len(),
        r.gamma.len(),
        r.big_gamma.len(),
        r.big_gamma_e.len()
    );
    let violations = check_region_invariants(&r, &g).err();
    if let Some(v) = &violations {
        println!("invariant violated: {v}");
    }
    out.table.push(ResultRow::at_most(
        "decompose.invariants",
        "regions",
        "region nesting and corridor",
        violations.is_some() as u8 as f64,
        0.0,
    ));
    let s = large_field_suppression(&a, &r, &f, &p);
    out.table.push(ResultRow::new(
        "decompose.suppression",
        "regions",
        "large-field suppression bound",
        s.ln_lhs,
        s.ln_rhs,
        s.holds,
    ));
    out.finish("decompose")
}

fn c0_sample(p: &crate::model::ModelParams, cfg: &RunConfig) -> Result<FieldConfig> {
    let g = cfg.geometry()?;
    let ctx = CovarianceContext::new(p, PaddedDomain::new(&g, 2)?, &cfg.cutoff, PolarizationMode::Full)?;
    let c = ctx.domain.restrict_to_lambda(&ctx.c0);
    sample_fields(&c, ctx.cell_weight(), g, cfg.seed, 1)?
        .pop()
        .ok_or_else(|| Error::Resolution("empty sample".into()))
}

fn opcheck(cli: &Cli, model: &ModelArgs, field: Option<&Path>, checks: &[String]) -> Result<bool> {
    let cfg = load_config(model)?;
    let p = cfg.params()?;
    let f = match field {
        Some(path) => FieldConfig::read(path)?,
        None => c0_sample(&p, &cfg)?,
    };
    let g = f.geometry;
    let layout = g.layout();
    let assignment = classify_squares(&f, &p);
    let large = assignment.large_squares();
    let a = build_a(&f, &p, &propagator_table(p.m, &layout)?)?;
    let blocks = ABlocks::split(a.clone(), &layout, &large);
    let mass = f.mass_of(f.masses.keys());
    let mut out = Output::new(&cli.outdir, Some(&cfg));
    for check in checks {
        match check.as_str() {
            "norm" => out.table.push(ResultRow::at_most(
                "opcheck.norm_As",
                "operators",
                "small-field operator norm bound",
                operator_norm(&blocks.a_s)?,
                p.n_f64().powf(-0.4),
            )),
            "detsplit" => {
                let r = det_split_identity(&blocks, &p, mass)?;
                out.table.push(ResultRow::at_most("opcheck.split", "operators", "determinant split", r.residual_split, 1e-8));
                out.table.push(ResultRow::at_most("opcheck.rewrite", "operators", "det2 rewriting", r.residual_rewrite, 1e-8));
            }
            "dsplit" => {
                let r = d_decomposition(&blocks, &p, mass)?;
                out.table.push(ResultRow::at_most(
                    "opcheck.dsplit",
                    "operators",
                    "modulus through D",
                    r.modulus_identity_residual,
                    1e-8,
                ));
                out.table.push(ResultRow::info("opcheck.d_minus_norm", "operators", "negative part of D", r.d_minus_norm));
            }
            "traceineq" => {
                let psd = a.compose(&a.adjoint());
                for r in 2..=4 {
                    let (lhs, rhs) = trace_projection_inequality(&psd, &blocks.mask_s, r)?;
                    out.table.push(ResultRow::at_most(
                        format!("opcheck.traceineq.r{r}"),
                        "operators",
                        "projected trace inequality",
                        lhs,
                        rhs * (1.0 + 1e-12),
                    ));
                }
                let (lhs, rhs) = cubic_trace_bound(&blocks.a_s)?;
                out.table.push(ResultRow::at_most("opcheck.cubic_trace", "operators", "cubic trace bound", lhs, rhs * (1.0 + 1e-12)));
            }
            "linknorm" => {
                let squares = g.squares();
                let links: Vec<(Square, Square)> = squares
                    .iter()
                    .flat_map(|&x| squares.iter().map(move |&y| (x, y)))
                    .filter(|(x, y)| x != y && square_distance(*x, *y) == 0.0)
                    .collect();
                let mut sum = 0.0;
                for &l in &links {
                    sum += derived_link_norm(&a, &layout, l)?;
                }
                let ones = vec![Complex64::new(1.0, 0.0); links.len()];
                out.table.push(ResultRow::at_most(
                    "opcheck.link_sum",
                    "operators",
                    "link sum triangle inequality",
                    link_sum_norm(&a, &layout, &links, &ones)?,
                    sum * (1.0 + 1e-12),
                ));
            }
            other => return Err(Error::Config(format!("unknown check `{other}` in `checks`"))),
        }
    }
    out.finish("opcheck")
}

/// Large squares from lines `i j [level]`; `#` starts a comment.
pub fn read_region_file(path: &Path, g: &LatticeGeometry) -> Result<LSAssignment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels: BTreeMap<Square, SquareLabel> = g.squares().into_iter().map(|s| (s, SquareLabel::Small)).collect();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Config(format!("{}: line {}: expected `i j [level]`", path.display(), k + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(bad());
        }
        let i: i64 = parts[0].parse().map_err(|_| bad())?;
        let j: i64 = parts[1].parse().map_err(|_| bad())?;
        let level: u32 = parts.get(2).map(|s| s.parse()).transpose().map_err(|_| bad())?.unwrap_or(1);
        if !g.contains((i, j)) || level == 0 {
            return Err(Error::Config(format!("{}: line {}: square ({i}, {j}) level {level} outside Λ", path.display(), k + 1)));
        }
        labels.insert((i, j), SquareLabel::Large(level));
    }
    Ok(LSAssignment::from_labels(labels))
}

fn covariance(cli: &Cli, model: &ModelArgs, regions: &Path) -> Result<bool> {
    let cfg = load_config(model)?;
    let p = cfg.params()?;
    let g = cfg.geometry()?;
    let a = read_region_file(regions, &g)?;
    let r = build_regions(&a, &g, p.corridor_m)?;
    let ctx = CovarianceContext::new(&p, PaddedDomain::new(&g, 2)?, &cfg.cutoff, PolarizationMode::Full)?;
    let set = ctx.build_cgamma(&r)?;
    let z = ctx.compute_zgamma(&set, &r)?;
    let dc = ctx.build_delta_c(&r)?;
    let ev = hermitian_eigenvalues(&set.cgamma.matrix);
    let mut out = Output::new(&cli.outdir, Some(&cfg));
    let t = &mut out.table;
    t.push(ResultRow::info("covariance.cgamma_min_eig", "covariance", "corridor covariance spectrum", ev.first().copied().unwrap_or(f64::NAN)));
    t.push(ResultRow::info("covariance.cgamma_max_eig", "covariance", "corridor covariance spectrum", ev.last().copied().unwrap_or(f64::NAN)));
    t.push(ResultRow::info("covariance.ln_z", "covariance", "corridor normalization", z.ln_z));
    t.push(ResultRow::at_least("covariance.ln_z_nonnegative", "covariance", "normalization at least one", z.ln_z, 0.0));
    t.push(ResultRow::at_most("covariance.neumann", "covariance", "corridor covariance series", set.neumann_residual, 1e-8));
    t.push(ResultRow::at_most("covariance.factorization", "covariance", "factorization over components", set.factorization_residual.max(z.factorization_residual), 1e-8));
    t.push(ResultRow::at_most("covariance.delta_c_identity", "covariance", "inverse covariance difference", dc.eq_residual, 1e-8));
    t.push(ResultRow::at_most("covariance.dc1_max_eig", "covariance", "first covariance difference negative", dc.dc1_max_eig, 1e-10));
    t.push(ResultRow::at_most("covariance.dc3_max_eig", "covariance", "third covariance difference bound", dc.dc3_max_eig, 1.0 + ctx.pi0));
    out.finish("covariance")
}

/// Forests on n labels (OEIS A001858).
const FOREST_COUNTS: [usize; 8] = [1, 1, 2, 7, 38, 291, 2932, 36961];

fn forest_verify(cli: &Cli, max_size: usize, trials: usize, seed: u64) -> Result<bool> {
    if !(2..=5).contains(&max_size) {
        return Err(Error::Config("`max-size` must lie in 2..=5".into()));
    }
    let mut out = Output::new(&cli.outdir, None);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for n in 1..=max_size {
        let count = enumerate_forests(n)?.len();
        println!("forests on {n} labels: {count}");
        out.table.push(ResultRow::at_most(
            format!("forest.count.n{n}"),
            "expansion",
            "forest enumeration",
            (count as f64 - FOREST_COUNTS[n] as f64).abs(),
            0.0,
        ));
    }
    for n in 2..=max_size {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let pairs_n = n * (n - 1) / 2;
            let mut coeffs = || (0..pairs_n).map(|_| rng.gen_range(-0.8..0.8)).collect::<Vec<f64>>();
            for f in [
                TestFunction::Exponential { n, coeffs: coeffs() },
                TestFunction::ProductLinear { n, coeffs: coeffs() },
            ] {
                worst = worst.max(verify_forest_formula(&f, 12)?.residual);
            }
        }
        out.table.push(ResultRow::at_most(format!("forest.formula.I{n}"), "expansion", "forest interpolation formula", worst, 1e-8));
    }
    let forests: Vec<Forest> = enumerate_forests(4)?.into_iter().filter(|f| !f.is_empty()).collect();
    let block_of: Vec<usize> = (0..8).map(|i| i / 2).collect();
    let (mut recon, mut min_eig) = (0.0f64, f64::INFINITY);
    for _ in 0..trials {
        let b = DMatrix::from_fn(8, 8, |_, _| rng.gen::<f64>() - 0.5);
        let k = &b * b.transpose();
        let f = forests.choose(&mut rng).expect("nonempty").clone();
        let h: Vec<f64> = (0..f.len()).map(|_| rng.gen::<f64>()).collect();
        let mut sum = DMatrix::zeros(8, 8);
        for (w, t) in positivity_decomposition(&k, &block_of, &f, &h)? {
            min_eig = min_eig.min(SymmetricEigen::new(t.clone()).eigenvalues.min());
            sum += t * w;
        }
        recon = recon.max((sum - interpolate_inf_rule(&k, &block_of, &f, &h)).amax());
    }
    out.table.push(ResultRow::at_most("forest.positivity.reconstruction", "expansion", "positivity-preserving decomposition", recon, 1e-10));
    out.table.push(ResultRow::at_least("forest.positivity.min_eig", "expansion", "decomposition terms nonnegative", min_eig, -1e-10));
    let mut worst = 0.0f64;
    let mut graphs = 0usize;
    for q in 1..=max_size.min(5) {
        let all = pairs(q);
        for mask in 0u32..(1 << all.len()) {
            let edges = all.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, e)| *e);
            let g = OverlapGraph::new(q, edges)?;
            worst = worst.max((mayer_connectivity(&g) - mayer_tree_formula(&g)?).abs());
            graphs += 1;
        }
    }
    println!("overlap graphs checked: {graphs}");
    out.table.push(ResultRow::at_most("forest.mayer", "expansion", "tree formula for connectivity factor", worst, 1e-6));
    out.finish("forest-verify")
}

fn twopoint(
    cli: &Cli,
    model: &ModelArgs,
    samples: Option<usize>,
    seed: Option<u64>,
    separations: Option<&str>,
    csv_out: Option<&Path>,
) -> Result<bool> {
    let mut cfg = load_config(model)?;
    if let Some(s) = samples {
        cfg.samples = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = separations {
        cfg.window = Some(parse_window(w)?);
    }
    cfg.validate()?;
    let p = cfg.params()?;
    let g = cfg.geometry()?;
    let sampler = SamplerConfig {
        seed: cfg.seed,
        n_samples: cfg.samples,
        batches: cfg.batches,
        window: cfg.window,
        ..Default::default()
    };
    let r = estimate_s2(&p, &g, &cfg.cutoff, &sampler)?;
    let mut out = Output::new(&cli.outdir, Some(&cfg));
    let csv = format!("# config_hash={}\n{}", cfg.hash(), r.csv());
    match csv_out {
        Some(path) => std::fs::write(path, csv).map_err(|e| Error::io(path, e))?,
        None => {
            out.write("twopoint.csv", &csv)?;
        }
    }
    println!("fitted_mprime = {:.10e}", r.fitted_mprime);
    println!("m = {:.10e}", r.m);
    println!("ratio = {:.10e} ± {:.3e}", r.ratio(), r.fit.mass_se / r.m);
    println!("log_linear_rate = {:.10e}", r.log_linear_rate);
    println!("sign_diagnostic = {:.6}", r.sign_diagnostic);
    let t = &mut out.table;
    t.push(ResultRow::new("twopoint.ratio", "twopoint", "decay rate close to mass", r.ratio(), 1.3, (0.7..=1.3).contains(&r.ratio())));
    t.push(ResultRow::at_least("twopoint.r_squared", "twopoint", "decay fit quality", r.fit.r_squared, 0.95));
    t.push(ResultRow::at_least("twopoint.sign", "twopoint", "reweighting sign diagnostic", r.sign_diagnostic, 0.05));
    t.push(ResultRow::info("twopoint.symmetry_defect", "twopoint", "reflection symmetry in standard errors", r.symmetry_defect()));
    t.push(ResultRow::info("twopoint.normalization_defect", "twopoint", "half-sample normalization in standard errors", r.normalization_defect()));
    out.finish("twopoint_checks")
}

fn accept_all(cli: &Cli, profile: Profile, criteria: &[u32], timings: bool) -> Result<bool> {
    let ids: Vec<u32> = if criteria.is_empty() { (1..=CRITERIA).collect() } else { criteria.to_vec() };
    let mut out = Output::new(&cli.outdir, None);
    out.table.record_timings = timings;
    let mut all = true;
    for id in ids {
        let report = acceptance::run_criterion(id, profile)?;
        println!("{}", report.line());
        all &= report.pass();
        out.table.extend(report.rows);
    }
    let path = out.table.persist(&out.dir, "acceptance")?;
    println!("results: {}", path.display());
    Ok(all)
}

/// Parse arguments, run, and map the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    let outcome = run(cli);
    if let Err(e) = &outcome {
        eprintln!("error: {e}");
    }
    exit_code(&outcome)
}
