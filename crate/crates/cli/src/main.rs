use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use reedhb::bifurcation::{BifurcationReport, ClarinetModel};
use reedhb::hbsolver::{continue_branch, gamma_schedule, read_branch_csv, write_branch_csv, BranchRow, HbSystem};
use reedhb::oracle::{
    check_convolution_bounds, check_decay, check_smallness, check_worman, compare_magnitudes, simulate,
    steady_spectrum, DECAY_GATE,
};
use reedhb::ClarinetParams;

use reedhb_cli::config::RunConfig;
use reedhb_cli::output::{key_values, num, write_atomic, Table};

#[derive(Parser)]
#[command(name = "reedhb", version, about = "Harmonic balance and oscillation threshold analysis of a reed instrument model")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Exit nonzero when a verification check fails.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Locate the oscillation threshold and the local branch laws.
    Threshold,
    /// Continue the periodic branch from the threshold.
    Branch,
    /// Check harmonic bounds and decay on a stored branch.
    Verify {
        /// Branch CSV; defaults to branch.csv in the output directory.
        #[arg(long)]
        branch: Option<PathBuf>,
    },
    /// Compare one stored branch point with a time-domain simulation.
    OracleCompare {
        #[arg(long)]
        branch: Option<PathBuf>,
        /// Row index (0-based); defaults to the row closest to the target amplitude.
        #[arg(long)]
        row: Option<usize>,
    },
    /// Bore impedance.
    Transfer {
        #[command(subcommand)]
        action: TransferAction,
    },
    /// Coefficients of the harmonic balance equations.
    Clarinet {
        #[command(subcommand)]
        action: ClarinetAction,
    },
}

#[derive(Subcommand)]
enum TransferAction {
    /// Write omega, re, im of the impedance over the configured grid.
    Dump,
}

#[derive(Subcommand)]
enum ClarinetAction {
    /// Write A_q and u00 at the configured mouth pressure.
    Coeffs {
        /// Fundamental; defaults to the first mode frequency.
        #[arg(long)]
        omega: Option<f64>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Analysis(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    fn config_err(self) -> Outcome<T>;
    fn analysis_err(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> Outcome<T> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn analysis_err(self) -> Outcome<T> {
        self.map_err(|e| Failure::Analysis(e.into()))
    }
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
    strict: bool,
}

impl Run {
    fn write(&self, name: &str, contents: &str) -> Outcome<PathBuf> {
        write_atomic(&self.out, name, contents).analysis_err()
    }

    fn branch_path(&self, given: Option<PathBuf>) -> PathBuf {
        given.unwrap_or_else(|| self.out.join("branch.csv"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Analysis(e)) => {
            eprintln!("analysis error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).config_err()?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let ctx = Run { cfg, out, seed: cli.seed, strict: cli.strict };
    match cli.command {
        Command::Threshold => cmd_threshold(&ctx).map(|_| ()),
        Command::Branch => cmd_branch(&ctx),
        Command::Verify { branch } => cmd_verify(&ctx, &ctx.branch_path(branch)),
        Command::OracleCompare { branch, row } => cmd_oracle_compare(&ctx, &ctx.branch_path(branch), row).map(|_| ()),
        Command::Transfer { action: TransferAction::Dump } => cmd_transfer_dump(&ctx),
        Command::Clarinet { action: ClarinetAction::Coeffs { omega } } => cmd_clarinet_coeffs(&ctx, omega),
    }
}

fn cmd_threshold(ctx: &Run) -> Outcome<BifurcationReport> {
    let params = ctx.cfg.params().config_err()?;
    let report = BifurcationReport::analyze(&ClarinetModel::new(params), &ctx.cfg.grid()).analysis_err()?;
    ctx.write("threshold.kv", &report.to_key_values())?;
    ctx.write("threshold.txt", &format!("{report}\n"))?;
    println!("{report}");
    println!("direction = {}", report.direction);
    Ok(report)
}

fn fit_line(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| (my - sxy / sxx * mx, sxy / sxx))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

fn cmd_branch(ctx: &Run) -> Outcome<()> {
    let report = cmd_threshold(ctx)?;
    let cfg = &ctx.cfg;
    let system = HbSystem::new(cfg.params().config_err()?).with_jacobian(cfg.jacobian());
    let s = &cfg.sweep;
    let gammas = gamma_schedule(report.gamma0, s.delta_start, s.delta_end, s.steps, cfg.spacing()).config_err()?;
    let branch = continue_branch(&system, &report, &gammas, cfg.solver.tol, cfg.solver.max_iter).analysis_err()?;
    let rows: Vec<BranchRow> = branch.points.iter().map(BranchRow::from_point).collect();
    ctx.write("branch.csv", &write_branch_csv(&rows))?;

    let live: Vec<_> = branch.points.iter().filter(|p| !p.is_trivial() && p.gamma > report.gamma0).collect();
    let amp = fit_line(&live.iter().map(|p| ((p.gamma - report.gamma0).ln(), p.amplitude().ln())).collect::<Vec<_>>());
    let freq = fit_line(&branch.points.iter().map(|p| (p.gamma - report.gamma0, p.omega)).collect::<Vec<_>>());
    let largest = branch.points.iter().max_by(|a, b| a.amplitude().total_cmp(&b.amplitude())).expect("first point converged");
    let worman = check_worman(&largest.spectrum, cfg.verify.worman_c);
    let mut lines = vec![
        format!("points = {} of {}", rows.len(), gammas.len()),
        format!("amplitude law slope = {}", fmt_opt(amp.map(|f| f.1))),
        format!("amplitude law prefactor = {}", fmt_opt(amp.map(|f| f.0.exp()))),
        format!("predicted prefactor sqrt|alpha| = {:.6}", report.alpha.abs().sqrt()),
        format!("frequency law slope = {}", fmt_opt(freq.map(|f| f.1))),
        format!("predicted frequency slope = {:.6}", report.omega_slope),
        format!(
            "worman k_max at |P1| = {:.6} (C = {}) = {}",
            largest.amplitude(),
            cfg.verify.worman_c,
            worman.k_max_verified
        ),
    ];
    if branch.is_trivial() {
        lines.push("trivial branch: every point collapsed onto the static regime".into());
    }
    if let Some(why) = &branch.stopped {
        lines.push(format!("stopped early: {why}"));
    }
    let summary = lines.join("\n") + "\n";
    ctx.write("branch_summary.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

fn load_rows(path: &Path) -> Outcome<Vec<BranchRow>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading branch {}", path.display()))
        .config_err()?;
    let rows = read_branch_csv(&text).config_err()?;
    if rows.is_empty() {
        return Err(Failure::Config(anyhow!("branch {} has no rows", path.display())));
    }
    Ok(rows)
}

struct Comparison {
    passed: bool,
    summary: String,
}

/// Simulates at the row's mouth pressure and writes the per-harmonic table.
fn compare_row(ctx: &Run, row: &BranchRow) -> Outcome<Comparison> {
    let cfg = &ctx.cfg;
    let params: ClarinetParams = cfg.params().config_err()?.with_gamma(row.gamma);
    let hb = row.magnitude_spectrum().analysis_err()?;
    let amplitude = row.magnitudes[0];
    let sim_cfg = cfg.sim_config(&params, 2.0 * amplitude);
    let signal = simulate(&params, &sim_cfg).analysis_err()?;
    let sim = steady_spectrum(&signal, row.omega, params.order).analysis_err()?;
    let errors = compare_magnitudes(&sim, &hb, cfg.oracle.max_harmonic);
    let mut table = Table::new(&["q", "hb_abs", "sim_abs", "abs_error", "rel_error"]);
    for e in &errors {
        table.push(vec![e.q.to_string(), num(e.reference), num(e.simulated), num(e.absolute()), num(e.relative())]);
    }
    ctx.write("oracle_compare.csv", &table.to_csv())?;
    let freq_err = (sim.omega() / row.omega - 1.0).abs();
    let gate = 1e-3 * amplitude;
    let worst = errors.iter().map(|e| e.relative()).fold(0.0, f64::max);
    let passed = worst <= gate && freq_err <= 1e-3;
    ctx.write(
        "oracle_compare.kv",
        &key_values(&[
            ("gamma", num(row.gamma)),
            ("omega_hb", num(row.omega)),
            ("omega_sim", num(sim.omega())),
            ("frequency_rel_error", num(freq_err)),
            ("max_rel_error", num(worst)),
            ("gate", num(gate)),
            ("dt", num(sim_cfg.dt)),
            ("duration", num(sim_cfg.duration)),
            ("kick", num(sim_cfg.kick)),
            ("passed", passed.to_string()),
        ]),
    )?;
    let mut summary = format!(
        "oracle at gamma = {:.6}: |P1| = {amplitude:.6}, frequency error {freq_err:.3e}, max relative harmonic error {worst:.3e} (gate {gate:.3e}) {}\n",
        row.gamma,
        if passed { "pass" } else { "FAIL" }
    );
    for e in &errors {
        summary += &format!("  q = {}: hb {:.6e}, sim {:.6e}, rel {:.3e}\n", e.q, e.reference, e.simulated, e.relative());
    }
    Ok(Comparison { passed, summary })
}

fn pick_row(ctx: &Run, rows: &[BranchRow], row: Option<usize>) -> Outcome<usize> {
    match row {
        Some(k) if k < rows.len() => Ok(k),
        Some(k) => Err(Failure::Config(anyhow!("row {k} out of range ({} rows)", rows.len()))),
        None => {
            let target = ctx.cfg.oracle.target_amplitude;
            Ok((0..rows.len())
                .min_by(|&a, &b| {
                    (rows[a].magnitudes[0] - target).abs().total_cmp(&(rows[b].magnitudes[0] - target).abs())
                })
                .expect("rows are not empty"))
        }
    }
}

fn cmd_oracle_compare(ctx: &Run, path: &Path, row: Option<usize>) -> Outcome<bool> {
    let rows = load_rows(path)?;
    let k = pick_row(ctx, &rows, row)?;
    let c = compare_row(ctx, &rows[k])?;
    print!("{}", c.summary);
    if ctx.strict && !c.passed {
        return Err(Failure::Analysis(anyhow!("oracle comparison outside tolerance")));
    }
    Ok(c.passed)
}

fn cmd_verify(ctx: &Run, path: &Path) -> Outcome<()> {
    let rows = load_rows(path)?;
    let v = &ctx.cfg.verify;
    let mut table = Table::new(&[
        "gamma",
        "P1_abs",
        "worman_k_max",
        "worman_fitted_c",
        "decay_exponent",
        "decay_a0",
        "smallness_max",
        "worman_pass",
        "decay_pass",
    ]);
    let mut failures = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        let s = row.magnitude_spectrum().analysis_err()?;
        let worman = check_worman(&s, v.worman_c);
        let decay = check_decay(&s);
        let small = check_smallness(&s, f64::INFINITY);
        let rank = v.worman_rank.min(s.order());
        let worman_pass = worman.k_max_verified >= rank;
        let decay_pass = decay.exponent <= DECAY_GATE;
        if !worman_pass {
            failures.push(format!("row {k}: worman bound fails above q = {}", worman.k_max_verified));
        }
        if !decay_pass {
            failures.push(format!("row {k}: decay exponent {:.3} above {DECAY_GATE}", decay.exponent));
        }
        table.push(vec![
            num(row.gamma),
            num(row.magnitudes[0]),
            worman.k_max_verified.to_string(),
            num(worman.fitted_c),
            num(decay.exponent),
            num(decay.a0),
            num(small.max_ratio()),
            worman_pass.to_string(),
            decay_pass.to_string(),
        ]);
    }
    ctx.write("verify.csv", &table.to_csv())?;

    let stats = check_convolution_bounds(v.bound_trials, v.bound_half_width, ctx.seed);
    let bounds_pass = stats.young_violations == 0 && stats.explicit_violations == 0 && stats.c1_growth() <= 1.2;
    if !bounds_pass {
        failures.push("convolution bound suite".into());
    }
    ctx.write(
        "bounds.kv",
        &key_values(&[
            ("seed", stats.seed.to_string()),
            ("trials", stats.trials.to_string()),
            ("half_width", v.bound_half_width.to_string()),
            ("young_violations", stats.young_violations.to_string()),
            ("explicit_violations", stats.explicit_violations.to_string()),
            ("c1_half", num(stats.c1_half)),
            ("c1", num(stats.c1)),
            ("fitted_violations", stats.fitted_violations.to_string()),
            ("max_tail", num(stats.max_tail)),
        ]),
    )?;

    let mut summary = format!(
        "{} branch points: {} worman failures (C = {}, rank {}), {} decay failures (gate {DECAY_GATE})\n",
        rows.len(),
        table.rows.iter().filter(|r| r[7] == "false").count(),
        v.worman_c,
        v.worman_rank,
        table.rows.iter().filter(|r| r[8] == "false").count(),
    );
    summary += &format!(
        "bound suite (seed {}, {} trials): {} violations, c1 {:.6} -> {:.6} on doubling\n",
        stats.seed,
        stats.trials,
        stats.young_violations + stats.explicit_violations,
        stats.c1_half,
        stats.c1
    );
    if ctx.cfg.oracle.enabled {
        let k = pick_row(ctx, &rows, None)?;
        let c = compare_row(ctx, &rows[k])?;
        if !c.passed {
            failures.push(format!("row {k}: oracle comparison"));
        }
        summary += &c.summary;
    }
    for f in &failures {
        summary += &format!("failure: {f}\n");
    }
    ctx.write("verify_summary.txt", &summary)?;
    print!("{summary}");
    if ctx.strict && !failures.is_empty() {
        return Err(Failure::Analysis(anyhow!("{} verification check(s) failed", failures.len())));
    }
    Ok(())
}

fn cmd_transfer_dump(ctx: &Run) -> Outcome<()> {
    let z = ctx.cfg.impedance().config_err()?;
    let t = &ctx.cfg.transfer;
    let mut table = Table::new(&["omega", "re", "im"]);
    for k in 0..t.points {
        let w = t.omega_min + (t.omega_max - t.omega_min) * k as f64 / (t.points - 1) as f64;
        let v = z.impedance(w);
        table.push(vec![num(w), num(v.re), num(v.im)]);
    }
    let path = ctx.write("transfer.csv", &table.to_csv())?;
    println!("wrote {} ({} points)", path.display(), t.points);
    Ok(())
}

fn cmd_clarinet_coeffs(ctx: &Run, omega: Option<f64>) -> Outcome<()> {
    let params = ctx.cfg.params().config_err()?;
    let omega = omega.unwrap_or(ctx.cfg.model.omega1);
    let coeffs = params.coefficients(omega).config_err()?;
    let mut table = Table::new(&["q", "omega_q", "re_a", "im_a", "u00"]);
    for q in 0..=params.order as isize {
        let a = coeffs.a(q);
        table.push(vec![q.to_string(), num(q as f64 * omega), num(a.re), num(a.im), num(coeffs.u00())]);
    }
    let path = ctx.write("coeffs.csv", &table.to_csv())?;
    println!("wrote {} (u00 = {:.6})", path.display(), coeffs.u00());
    Ok(())
}
