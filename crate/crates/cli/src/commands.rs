//! Subcommand implementations. Each returns the written artifacts and
//! whether the run counts as a success for the exit code.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use lowrank_core::adapters::{self, initialize, InitSpec, Schedule};
use lowrank_core::nn::{self, NnInit};
use lowrank_core::objective::optimal_loss;
use lowrank_core::verify::{self, run_trials, FrozenInit, McStats, WiseVariant};
use lowrank_core::{Side, TheoremReport, Trajectory};
use serde::Serialize;

use crate::config::{Figure1Settings, RunConfig, VariantKind};
use crate::output::{self, line_chart_svg, ReportBundle, Row, Series, SCHEMA_VERSION};

pub struct Outcome {
    pub bundle: ReportBundle,
    pub success: bool,
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

#[derive(Serialize)]
struct RunEntry {
    init: String,
    seed: usize,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_loss_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct FactorizeSummary<'a> {
    schema_version: u32,
    command: &'static str,
    master_seed: u64,
    target: String,
    optimal_loss: f64,
    config: &'a RunConfig,
    runs: Vec<RunEntry>,
}

pub fn factorize(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let target = cfg.validate_factorize()?;
    ensure_dir(out)?;
    let ad = &cfg.adapter;
    let hrp = cfg.hrp.resolve(ad.eta);
    let variant = ad.variant.with_eta(ad.eta);
    let schedule = Schedule {
        order: ad.order,
        ..Schedule::new(ad.steps, ad.record_stride)
    };
    let master = cfg.seeds.master_seed;
    let mut bundle = ReportBundle::default();
    let mut runs = Vec::new();
    let mut success = true;
    for (j, init) in ad.inits.iter().enumerate() {
        let spec = init.spec(hrp);
        let label = init.label();
        let results = run_trials(cfg.seeds.count, master.wrapping_add(j as u64), |_, rng| {
            let pair = initialize(&spec, target.a(), target.b(), ad.r, ad.alpha, Some(&target), rng)?;
            let (_, traj) = adapters::train_observed(&target, pair, &variant, schedule, |_, _| {})?;
            Ok(traj)
        });
        for (k, res) in results.into_iter().enumerate() {
            match res {
                Ok(traj) => {
                    let name = format!("{label}_seed{k:03}.csv");
                    let path = out.join(&name);
                    output::write_csv(&path, &output::rows(&traj))?;
                    let last = traj.last().expect("trajectory records step 0");
                    runs.push(RunEntry {
                        init: label.clone(),
                        seed: k,
                        status: "ok",
                        csv: Some(name),
                        final_loss: Some(last.loss),
                        final_loss_gap: Some(last.loss_gap),
                        error: None,
                    });
                    bundle.csv.push(path);
                }
                Err(e) => {
                    success = false;
                    runs.push(RunEntry {
                        init: label.clone(),
                        seed: k,
                        status: "diverged",
                        csv: None,
                        final_loss: None,
                        final_loss_gap: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }
    let summary = FactorizeSummary {
        schema_version: SCHEMA_VERSION,
        command: "factorize",
        master_seed: master,
        target: cfg.target.label(),
        optimal_loss: optimal_loss(&target, ad.r)?,
        config: cfg,
        runs,
    };
    let json = out.join("summary.json");
    output::write_json(&json, &summary)?;
    bundle.json = Some(json);
    Ok(Outcome { bundle, success })
}

/// Seed-mean curve of one (panel, init) pair.
#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    pub panel: String,
    pub init: String,
    pub csv: String,
    pub final_loss_mean: f64,
    pub final_loss_stderr: f64,
    pub final_gap_mean: f64,
    #[serde(skip)]
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureCheck {
    pub name: String,
    pub pass: bool,
    pub measured: BTreeMap<String, f64>,
    pub tolerance: String,
}

#[derive(Serialize)]
struct Figure1Summary<'a> {
    schema_version: u32,
    command: &'static str,
    master_seed: u64,
    settings: &'a Figure1Settings,
    curves: &'a [Curve],
    checks: &'a [FigureCheck],
    failures: &'a [String],
}

pub struct Figure1Result {
    pub outcome: Outcome,
    pub curves: Vec<Curve>,
    pub checks: Vec<FigureCheck>,
}

const FIGURE_INITS: [&str; 4] = ["gaussian", "orthogonal", "hrp", "target_svd"];

fn figure_spec(label: &str, s: &Figure1Settings) -> InitSpec {
    let side = s.side;
    match label {
        "gaussian" => InitSpec::ZeroPlusGaussian { side, sigma: s.sigma },
        "orthogonal" => InitSpec::ZeroPlusOrthogonal { side },
        "hrp" => InitSpec::HrpDerived(lowrank_core::HrpConfig { orientation: side, ..s.hrp }),
        _ => InitSpec::TargetSvd { side },
    }
}

fn mean_rows(trajs: &[Trajectory]) -> Vec<Row> {
    let n = trajs.len() as f64;
    let first = trajs[0].records();
    (0..first.len())
        .map(|i| Row {
            step: first[i].step,
            loss: trajs.iter().map(|t| t.records()[i].loss).sum::<f64>() / n,
            loss_gap: trajs.iter().map(|t| t.records()[i].loss_gap).sum::<f64>() / n,
        })
        .collect()
}

pub fn figure1(s: &Figure1Settings, master_seed: u64, out: &Path) -> Result<Figure1Result> {
    s.validate()?;
    ensure_dir(out)?;
    let target = s.preset.target();
    let mut bundle = ReportBundle::default();
    let mut curves = Vec::new();
    let mut failures = Vec::new();
    let panels = [VariantKind::Classic, VariantKind::Asymmetric];
    for panel in panels {
        let variant = panel.with_eta(s.eta);
        let panel_name = variant.label();
        let mut series_rows = Vec::new();
        for (j, label) in FIGURE_INITS.iter().enumerate() {
            let spec = figure_spec(label, s);
            let results = run_trials(s.n_seeds, master_seed.wrapping_add(j as u64), |_, rng| {
                let pair = initialize(&spec, target.a(), target.b(), s.r, s.alpha, Some(&target), rng)?;
                Ok(adapters::train(&target, pair, &variant, s.steps, s.record_stride)?.1)
            });
            let mut trajs = Vec::new();
            for (k, r) in results.into_iter().enumerate() {
                match r {
                    Ok(t) => trajs.push(t),
                    Err(e) => failures.push(format!("{panel_name}/{label}/seed{k}: {e}")),
                }
            }
            if trajs.len() < 2 {
                continue;
            }
            let rows = mean_rows(&trajs);
            let finals = McStats::from_values(trajs.iter().map(Trajectory::final_loss).collect())?;
            let name = format!("{panel_name}_{label}.csv");
            let path = out.join(&name);
            output::write_csv(&path, &rows)?;
            bundle.csv.push(path);
            curves.push(Curve {
                panel: panel_name.to_string(),
                init: label.to_string(),
                csv: name,
                final_loss_mean: finals.mean,
                final_loss_stderr: finals.stderr,
                final_gap_mean: rows.last().map_or(f64::NAN, |r| r.loss_gap),
                rows: rows.clone(),
            });
            series_rows.push((*label, rows));
        }
        let series: Vec<Series<'_>> = series_rows
            .iter()
            .map(|(label, rows)| Series {
                label,
                points: rows.iter().map(|r| (r.step as f64, r.loss_gap)).collect(),
            })
            .collect();
        let svg = line_chart_svg(
            &format!("{} LoRA on {}, r = {}", panel_name, s.preset, s.r),
            "step",
            "loss gap (seed mean)",
            &series,
        );
        let path = out.join(format!("{panel_name}.svg"));
        fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        bundle.svg.push(path);
    }

    let checks = figure_checks(s, &curves);
    let success = failures.is_empty() && curves.len() == 2 * FIGURE_INITS.len() && checks.iter().all(|c| c.pass);
    let json = out.join("figure1.json");
    output::write_json(
        &json,
        &Figure1Summary {
            schema_version: SCHEMA_VERSION,
            command: "figure1",
            master_seed,
            settings: s,
            curves: &curves,
            checks: &checks,
            failures: &failures,
        },
    )?;
    bundle.json = Some(json);
    Ok(Figure1Result {
        outcome: Outcome { bundle, success },
        curves,
        checks,
    })
}

fn figure_checks(s: &Figure1Settings, curves: &[Curve]) -> Vec<FigureCheck> {
    let find = |panel: &str, init: &str| curves.iter().find(|c| c.panel == panel && c.init == init);
    let mut checks = Vec::new();
    for panel in ["classic", "asymmetric"] {
        let (Some(svd), Some(hrp), Some(gauss), Some(orth)) =
            (find(panel, "target_svd"), find(panel, "hrp"), find(panel, "gaussian"), find(panel, "orthogonal"))
        else {
            continue;
        };
        let slack = 1e-9 * hrp.final_loss_mean.abs().max(1.0);
        let mut measured = BTreeMap::new();
        measured.insert("target_svd".to_string(), svd.final_loss_mean);
        measured.insert("hrp".to_string(), hrp.final_loss_mean);
        measured.insert("gaussian".to_string(), gauss.final_loss_mean);
        measured.insert("orthogonal".to_string(), orth.final_loss_mean);
        let pass = svd.final_loss_mean <= hrp.final_loss_mean + slack
            && hrp.final_loss_mean < gauss.final_loss_mean
            && hrp.final_loss_mean < orth.final_loss_mean;
        checks.push(FigureCheck {
            name: format!("figure1/{panel}/ordering"),
            pass,
            measured,
            tolerance: "target_svd <= hrp (1e-9 relative slack) < gaussian, orthogonal at the final step".to_string(),
        });

        let pooled = (gauss.final_loss_stderr.powi(2) + orth.final_loss_stderr.powi(2)).sqrt();
        let diff = (gauss.final_loss_mean - orth.final_loss_mean).abs();
        checks.push(FigureCheck {
            name: format!("figure1/{panel}/gaussian_vs_orthogonal"),
            pass: diff <= 3.0 * pooled,
            measured: BTreeMap::from([("difference".to_string(), diff), ("pooled_stderr".to_string(), pooled)]),
            tolerance: "|difference| <= 3*pooled stderr".to_string(),
        });
    }
    if let Some(svd) = find("asymmetric", "target_svd") {
        let gap0 = svd.rows[0].loss_gap;
        let (xs, ys): (Vec<f64>, Vec<f64>) = svd
            .rows
            .iter()
            .filter(|r| r.loss_gap > 1e-10 * gap0)
            .map(|r| (r.step as f64, r.loss_gap.ln()))
            .unzip();
        let slope = verify::fit_slope(&xs, &ys);
        let expected = -2.0 * s.eta * (s.alpha / s.r as f64).powi(2);
        checks.push(FigureCheck {
            name: "figure1/asymmetric/target_svd_slope".to_string(),
            pass: ((slope - expected) / expected).abs() <= 0.05,
            measured: BTreeMap::from([("slope".to_string(), slope), ("expected".to_string(), expected)]),
            tolerance: "log-gap slope within 5% of -2*eta*(alpha/r)^2".to_string(),
        });
    }
    checks
}

/// Theorem suites selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Suite {
    All,
    LowerBound,
    Trap,
    Similarity,
    Wise,
    ClosedForm,
    Hrp,
    Conserved,
}

impl Suite {
    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

fn failed_report(name: String, err: impl std::fmt::Display) -> TheoremReport {
    TheoremReport {
        name,
        pass: false,
        inconclusive: false,
        measured: BTreeMap::new(),
        expected: BTreeMap::new(),
        tolerance: String::new(),
        n_seeds: 0,
        runtime_secs: 0.0,
        notes: vec![format!("check errored: {err}")],
    }
}

fn collect(reports: &mut Vec<TheoremReport>, name: impl Into<String>, r: lowrank_core::Result<TheoremReport>) {
    reports.push(r.unwrap_or_else(|e| failed_report(name.into(), e)));
}

#[derive(Serialize)]
struct VerifySummary<'a> {
    schema_version: u32,
    command: &'static str,
    suite: Suite,
    master_seed: u64,
    config: &'a crate::config::VerifyBlock,
    all_pass: bool,
    checks: &'a [TheoremReport],
}

/// Runs the selected suite; `--seeds` and `--master-seed` have already been
/// folded into `cfg.verify`.
pub fn verify_suite(cfg: &RunConfig, suite: Suite, out: &Path) -> Result<(Outcome, Vec<TheoremReport>)> {
    cfg.validate_verify()?;
    ensure_dir(out)?;
    let v = &cfg.verify;
    let mut reports = Vec::new();
    if suite.includes(Suite::LowerBound) {
        for s in &v.lower_bound {
            collect(&mut reports, format!("lower_bound/{}", s.preset), verify::check_random_lower_bound(s));
        }
        for s in &v.frozen_init {
            let s = verify::LowerBoundSettings { init: FrozenInit::Gaussian, ..*s };
            collect(&mut reports, format!("lower_bound/{}/gaussian_vs_orthogonal", s.preset), verify::check_frozen_init_agreement(&s));
        }
    }
    if suite.includes(Suite::Trap) {
        for s in &v.trap {
            collect(&mut reports, format!("trap/{}/i{}", s.preset, s.i), verify::check_orthogonal_trap(s));
        }
    }
    if suite.includes(Suite::Similarity) {
        for s in &v.similarity {
            collect(&mut reports, format!("similarity/{}", s.preset), verify::check_similarity_exponent(s));
        }
    }
    if suite.includes(Suite::Wise) {
        for s in &v.wise {
            for w in [WiseVariant::Asymmetric, WiseVariant::Classic] {
                collect(&mut reports, format!("wise/{}/{}", s.preset, w.label()), verify::check_wise_convergence(s, w));
            }
        }
    }
    if suite.includes(Suite::ClosedForm) {
        for s in &v.closed_form {
            collect(&mut reports, format!("closed_form/{}", s.preset), verify::check_closed_form(s));
        }
    }
    if suite.includes(Suite::Hrp) {
        for s in &v.hrp {
            collect(&mut reports, format!("hrp/{}", s.preset), verify::check_hrp_bound(s));
        }
    }
    if suite.includes(Suite::Conserved) {
        for s in &v.conserved {
            collect(&mut reports, format!("conserved/{}", s.preset), verify::check_conserved(s));
        }
    }
    let all_pass = !reports.is_empty() && reports.iter().all(|r| r.pass);
    let json = out.join("verify.json");
    output::write_json(
        &json,
        &VerifySummary {
            schema_version: SCHEMA_VERSION,
            command: "verify",
            suite,
            master_seed: cfg.seeds.master_seed,
            config: v,
            all_pass,
            checks: &reports,
        },
    )?;
    let bundle = ReportBundle {
        json: Some(json),
        ..ReportBundle::default()
    };
    Ok((Outcome { bundle, success: all_pass }, reports))
}

/// Applies `--seeds` to Monte Carlo checks and `--master-seed` to every
/// seeded check.
pub fn override_verify_seeds(cfg: &mut RunConfig, seeds: Option<usize>, master_seed: Option<u64>) {
    let v = &mut cfg.verify;
    if let Some(n) = seeds {
        v.lower_bound.iter_mut().for_each(|s| s.n_seeds = n);
        v.frozen_init.iter_mut().for_each(|s| s.n_seeds = n);
        v.trap.iter_mut().for_each(|s| s.n_seeds = n);
        v.hrp.iter_mut().for_each(|s| s.n_seeds = n);
    }
    if let Some(m) = master_seed {
        cfg.seeds.master_seed = m;
        v.lower_bound.iter_mut().for_each(|s| s.master_seed = m);
        v.frozen_init.iter_mut().for_each(|s| s.master_seed = m);
        v.trap.iter_mut().for_each(|s| s.master_seed = m);
        v.similarity.iter_mut().for_each(|s| s.master_seed = m);
        v.closed_form.iter_mut().for_each(|s| s.master_seed = m);
        v.hrp.iter_mut().for_each(|s| s.master_seed = m);
    }
}

#[derive(Serialize)]
struct NnEntry {
    init: NnInit,
    mean: f64,
    stderr: f64,
    n: usize,
    final_losses: Vec<f64>,
    csv: Vec<String>,
}

#[derive(Serialize)]
struct NnSummary<'a> {
    schema_version: u32,
    command: &'static str,
    master_seed: u64,
    n_seeds: usize,
    side: Side,
    config: &'a nn::NnSettings,
    results: Vec<NnEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hrp_le_gaussian: Option<bool>,
}

pub fn nn_compare(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    cfg.validate_nn()?;
    ensure_dir(out)?;
    let settings = &cfg.nn;
    let master = cfg.seeds.master_seed;
    let outcomes = nn::run_comparison(settings, cfg.seeds.count, master)?;
    let mut bundle = ReportBundle::default();
    let mut results = Vec::new();
    for o in &outcomes {
        let mut names = Vec::new();
        for (k, traj) in o.trajectories.iter().enumerate() {
            let name = format!("{}_seed{k:03}.csv", o.init);
            let path = out.join(&name);
            output::write_csv(&path, &output::rows(traj))?;
            bundle.csv.push(path);
            names.push(name);
        }
        results.push(NnEntry {
            init: o.init,
            mean: o.final_losses.mean,
            stderr: o.final_losses.stderr,
            n: o.final_losses.n,
            final_losses: o.final_losses.values.clone(),
            csv: names,
        });
    }
    let mean_of = |init: NnInit| results.iter().find(|e| e.init == init).map(|e| e.mean);
    let hrp_le_gaussian = match (mean_of(NnInit::Hrp), mean_of(NnInit::ZeroPlusGaussian)) {
        (Some(h), Some(g)) => Some(h <= g),
        _ => None,
    };
    let json = out.join("nn.json");
    output::write_json(
        &json,
        &NnSummary {
            schema_version: SCHEMA_VERSION,
            command: "nn",
            master_seed: master,
            n_seeds: cfg.seeds.count,
            side: settings.side,
            config: settings,
            results,
            hrp_le_gaussian,
        },
    )?;
    bundle.json = Some(json);
    Ok(Outcome { bundle, success: true })
}

