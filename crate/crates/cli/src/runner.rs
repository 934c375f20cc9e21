//! Experiment dispatch and artifact emission.
//!
//! Every run writes into one output directory: a manifest naming the config
//! hash and seeds, CSV tables, two-column plot data, and a plain-text
//! summary. Output content is a pure function of the parsed config, so
//! repeated runs produce byte-identical files.

use crate::config::{ExperimentConfig, ExperimentKind, InstanceRef};
use couplab_core::chain::{FiniteChain, InvariantSolver};
use couplab_core::chainfile::{parse_chain, ChainDef};
use couplab_core::coupling::{PairSampler, SynchronousCoupling};
use couplab_core::diagnostics::{
    self, ConvergenceReport, EquicontinuityThresholds, GammaTable, McSettings,
    PositivityThresholds, Verdict,
};
use couplab_core::metric::{Metric, MetricPair};
use couplab_core::sdde::{self, SegmentState, SfdeSpec};
use couplab_core::seeding::derive_seed;
use couplab_core::testbed::{
    build_example, catalog, ConditionedDescentPair, CoupledFlipRotation, ExampleInstance,
    ExampleParams, FrozenVsOrbitPair,
};
use couplab_core::{Error, Result};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// What a completed run hands back to the command layer.
#[derive(Debug)]
pub struct RunOutcome {
    pub verdict: Verdict,
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

pub fn exit_code(verdict: Verdict) -> i32 {
    match verdict {
        Verdict::Supports => 0,
        Verdict::Refutes => 2,
        Verdict::Inconclusive => 3,
    }
}

/// Catalog text for the `list` subcommand: instances, delay systems, and
/// experiment kinds. Stable across runs.
pub fn list_text() -> String {
    let mut out = String::from("instances:\n");
    for entry in catalog() {
        let _ = writeln!(out, "  {:<14} {:<22} {}", entry.anchor, entry.name, entry.summary);
    }
    out.push_str("\ndelay systems (anchor 6.1):\n");
    for (name, desc) in [
        ("linear", "drift -rate * x(0), diffusion sigma * I"),
        ("delayed-sine", "drift amp * sin(x(-1)), unit diffusion"),
        (
            "logistic-delay",
            "drift rate * x(0) * (1 - x(-1)), diagonal diffusion base + gain * sin(x(0))",
        ),
    ] {
        let _ = writeln!(out, "  {name:<14} {desc}");
    }
    out.push_str("\nexperiment kinds:\n");
    for kind in ExperimentKind::ALL {
        let _ = writeln!(out, "  {:<16} {}", kind.name(), kind.describe());
    }
    out
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| Error::InvalidInput(format!("output dir {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, content)
            .map_err(|e| Error::InvalidInput(format!("write {}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }

    /// Two-column plot data for every series of a report.
    fn write_plot_data(&mut self, report: &ConvergenceReport) -> Result<()> {
        for series in &report.series {
            let slug: String = series
                .label
                .chars()
                .map(|c| if c.is_alphanumeric() { c } else { '_' })
                .collect();
            let mut data = String::new();
            for (x, y) in &series.points {
                let _ = writeln!(data, "{x} {y}");
            }
            self.write(&format!("plot_{}_{slug}.dat", report.quantity), &data)?;
        }
        Ok(())
    }
}

fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let canonical = config.serialize()?;
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    Ok(format!("{:x}", h.finalize()))
}

fn manifest_text(
    config: &ExperimentConfig,
    seed: u64,
    artifacts: &[PathBuf],
) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "code_version = {:?}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "config_sha256 = {:?}", config_hash(config)?);
    let _ = writeln!(out, "kind = {:?}", config.kind.name());
    if let Some(inst) = &config.instance {
        if let Some(anchor) = &inst.anchor {
            let _ = writeln!(out, "instance = {anchor:?}");
        }
        if let Some(file) = &inst.chain_file {
            let _ = writeln!(out, "chain_file = {:?}", file.display().to_string());
        }
    }
    let _ = writeln!(out, "seed = {seed}");
    let names: Vec<String> = artifacts
        .iter()
        .filter_map(|p| p.file_name().map(|n| format!("{:?}", n.to_string_lossy())))
        .collect();
    let _ = writeln!(out, "artifacts = [{}]", names.join(", "));
    Ok(out)
}

/// A resolved instance: what the config's `[instance]` table pointed at.
enum Resolved {
    Catalog(Box<ExampleInstance>),
    File {
        chain: Option<FiniteChain>,
        sampler_name: Option<String>,
        sampler_params: std::collections::BTreeMap<String, f64>,
        metric: MetricPair,
        label: String,
    },
}

impl Resolved {
    fn finite(&self) -> Result<&FiniteChain> {
        let chain = match self {
            Resolved::Catalog(inst) => inst.finite.as_ref(),
            Resolved::File { chain, .. } => chain.as_ref(),
        };
        chain.ok_or_else(|| {
            Error::InvalidInput(format!(
                "{} has no exact finite realization; this experiment kind needs one",
                self.label()
            ))
        })
    }

    fn metric(&self) -> &MetricPair {
        match self {
            Resolved::Catalog(inst) => &inst.metric,
            Resolved::File { metric, .. } => metric,
        }
    }

    fn label(&self) -> String {
        match self {
            Resolved::Catalog(inst) => format!("instance {}", inst.anchor),
            Resolved::File { label, .. } => format!("chain file {label}"),
        }
    }
}

fn resolve_instance(inst: &InstanceRef) -> Result<(Resolved, ExampleParams)> {
    let params = inst.params.apply(ExampleParams::default());
    if let Some(anchor) = &inst.anchor {
        let built = build_example(anchor, &params)?;
        return Ok((Resolved::Catalog(Box::new(built)), params));
    }
    let path = inst.chain_file.as_ref().expect("validated by config");
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("chain file {}: {e}", path.display())))?;
    let metric = match &inst.metric {
        Some(name) => MetricPair::same(Metric::from_name(name)?),
        None => MetricPair::same(Metric::EuclideanTruncated),
    };
    let label = path.display().to_string();
    match parse_chain(&text)? {
        ChainDef::Finite(chain) => Ok((
            Resolved::File {
                chain: Some(chain),
                sampler_name: None,
                sampler_params: Default::default(),
                metric,
                label,
            },
            params,
        )),
        ChainDef::Sampler { name, params: file_params } => Ok((
            Resolved::File {
                chain: None,
                sampler_name: Some(name),
                sampler_params: file_params,
                metric,
                label,
            },
            params,
        )),
    }
}

/// Folds a chain file's numeric parameters into the example parameter set.
fn apply_file_params(
    mut base: ExampleParams,
    map: &std::collections::BTreeMap<String, f64>,
) -> Result<ExampleParams> {
    for (key, &v) in map {
        match key.as_str() {
            "denominator" => base.denominator = v as u64,
            "sampler_grid" => base.sampler_grid = v as u64,
            "sampler_rotation" => base.sampler_rotation = v as u64,
            "switch_scale" => base.switch_scale = v,
            "switch_power" => base.switch_power = v,
            other => {
                return Err(Error::InvalidInput(format!(
                    "chain file parameter {other:?} is not a sampler parameter"
                )))
            }
        }
    }
    Ok(base)
}

fn invariant_of(chain: &FiniteChain) -> Result<couplab_core::chain::InvariantMeasure> {
    match chain.invariant_measure(InvariantSolver::Nullspace) {
        Err(Error::Resource(_)) => chain.invariant_measure(InvariantSolver::Iterative),
        other => other,
    }
}

fn gamma_table_csv(chain: &FiniteChain, table: &GammaTable) -> String {
    let mut out = String::from("x,y,horizon,eps,gamma\n");
    for (pi, &(x, y)) in table.pairs.iter().enumerate() {
        for (hi, &n) in table.horizons.iter().enumerate() {
            for (ei, &eps) in table.epsilons.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{n},{eps},{}",
                    chain.labels()[x],
                    chain.labels()[y],
                    table.value(pi, hi, ei)
                );
            }
        }
    }
    out
}

/// Builds the canonical pair sampler for Monte-Carlo kinds on an instance.
fn canonical_pair<'a>(
    resolved: &'a Resolved,
    inst: &InstanceRef,
    params: &ExampleParams,
) -> Result<Box<dyn PairSampler + 'a>> {
    if let Resolved::Catalog(example) = resolved {
        match example.anchor {
            "5.1" => {
                return Ok(Box::new(FrozenVsOrbitPair {
                    denominator: params.denominator,
                }))
            }
            "5.5" => {
                let x0 = if inst.x0 == 0 { 10 } else { inst.x0 };
                return Ok(Box::new(ConditionedDescentPair::new(params.truncation, x0)?));
            }
            "5.7" => {
                let y0 = inst.y0.unwrap_or(1) as u64;
                return Ok(Box::new(CoupledFlipRotation::with_defaults(
                    params,
                    (inst.x0 as u64 % params.sampler_grid, 1.0),
                    (y0 % params.sampler_grid, 1.0),
                )?));
            }
            _ => {}
        }
    }
    if let Resolved::File {
        chain: None,
        sampler_name: Some(name),
        sampler_params,
        ..
    } = resolved
    {
        let merged = apply_file_params(params.clone(), sampler_params)?;
        match name.as_str() {
            "doubling-torus" => {
                return Ok(Box::new(FrozenVsOrbitPair {
                    denominator: merged.denominator,
                }))
            }
            "coupled-flip-rotation" => {
                let y0 = inst.y0.unwrap_or(1) as u64;
                return Ok(Box::new(CoupledFlipRotation::with_defaults(
                    &merged,
                    (inst.x0 as u64 % merged.sampler_grid, 1.0),
                    (y0 % merged.sampler_grid, 1.0),
                )?));
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "sampler {other:?} has no canonical pair construction"
                )))
            }
        }
    }
    let chain = resolved.finite()?;
    let x0 = inst.x0;
    let y0 = inst.y0.unwrap_or(chain.len() - 1);
    if x0 >= chain.len() || y0 >= chain.len() {
        return Err(Error::UnknownState(format!(
            "pair start ({x0}, {y0}) outside 0..{}",
            chain.len()
        )));
    }
    Ok(Box::new(SynchronousCoupling { chain, x0, y0 }))
}

fn join_report_csv(reports: &[&ConvergenceReport]) -> String {
    let mut out = String::from("quantity,series,x,value,half_width\n");
    for report in reports {
        let body = report.to_csv();
        for line in body.lines().skip(1) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v
}

fn sorted_usize(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

pub fn run(
    config: &ExperimentConfig,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<RunOutcome> {
    config.validate()?;
    let seed = seed_override.unwrap_or(config.seed);
    let default_dir = PathBuf::from(format!("couplab-out-{}", config.kind.name()));
    let out_dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| config.out.clone())
        .unwrap_or(default_dir);
    let mut artifacts = Artifacts::create(&out_dir)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "kind: {}", config.kind.name());

    let verdict = match config.kind {
        ExperimentKind::Sdde => run_sdde(config, seed, &mut artifacts, &mut summary)?,
        _ => run_chain_kind(config, seed, &mut artifacts, &mut summary)?,
    };

    let _ = writeln!(summary, "verdict: {verdict}");
    artifacts.write("summary.txt", &summary)?;
    let manifest = manifest_text(config, seed, &artifacts.files)?;
    artifacts.write("manifest.toml", &manifest)?;

    Ok(RunOutcome {
        verdict,
        out_dir,
        artifacts: artifacts.files,
        summary,
    })
}

fn run_chain_kind(
    config: &ExperimentConfig,
    seed: u64,
    artifacts: &mut Artifacts,
    summary: &mut String,
) -> Result<Verdict> {
    let inst_ref = config.instance.as_ref().expect("validated");
    let (resolved, params) = resolve_instance(inst_ref)?;
    let _ = writeln!(summary, "target: {}", resolved.label());

    let horizons = sorted_usize(config.grids.horizons.clone());
    let epsilons = sorted(config.grids.epsilons.clone());
    let tol = &config.tolerances;

    let finish = |report: ConvergenceReport, artifacts: &mut Artifacts, summary: &mut String| -> Result<Verdict> {
        let verdict = report.verdict;
        let _ = writeln!(summary, "{}", report.summary());
        for note in &report.notes {
            let _ = writeln!(summary, "note: {note}");
        }
        artifacts.write("report.csv", &report.to_csv())?;
        artifacts.write_plot_data(&report)?;
        Ok(verdict)
    };

    match config.kind {
        ExperimentKind::GammaTable => {
            let chain = resolved.finite()?;
            let inv = invariant_of(chain)?;
            let table = diagnostics::gamma_table_from_measure(
                chain,
                &resolved.metric().d,
                &inv.measure,
                &horizons,
                &epsilons,
            )?;
            artifacts.write("table.csv", &gamma_table_csv(chain, &table))?;
            let _ = writeln!(
                summary,
                "table over {} pairs, {} horizons, {} thresholds",
                table.pairs.len(),
                table.horizons.len(),
                table.epsilons.len()
            );
            let _ = writeln!(
                summary,
                "construction invariants held (threshold monotonicity, range)"
            );
            Ok(Verdict::Supports)
        }
        ExperimentKind::BigGamma => {
            let chain = resolved.finite()?;
            let inv = invariant_of(chain)?;
            let mut report = ConvergenceReport {
                quantity: "averaged_closeness".into(),
                series: Vec::new(),
                verdict: Verdict::Supports,
                tolerances: vec![("monotone_slack".into(), 1e-9)],
                notes: vec![format!("invariance residual {}", inv.residual)],
            };
            let mut worst = f64::INFINITY;
            for &eps in &epsilons {
                let mut points = Vec::with_capacity(horizons.len());
                let mut prev = f64::NEG_INFINITY;
                for &n in &horizons {
                    let avg = diagnostics::big_gamma(
                        chain,
                        &resolved.metric().d,
                        &inv.measure,
                        n,
                        eps,
                    )?;
                    worst = worst.min(avg.value - prev);
                    prev = avg.value;
                    points.push((n as f64, avg.value));
                }
                report.series.push(diagnostics::Series {
                    label: format!("eps={eps}"),
                    points,
                    half_widths: Vec::new(),
                });
            }
            if worst < -1e-9 {
                report.verdict = Verdict::Refutes;
                report
                    .notes
                    .push(format!("averaged closeness dropped by {}", -worst));
            } else {
                report
                    .notes
                    .push("averaged closeness is monotone over the horizon grid".into());
            }
            finish(report, artifacts, summary)
        }
        ExperimentKind::Conv1 => {
            let th = PositivityThresholds {
                gamma_min: tol.gamma_min,
                mass_fraction: tol.mass_fraction,
                zero_ceiling: 1e-9,
            };
            match resolved.finite() {
                Ok(chain) => {
                    let inv = invariant_of(chain)?;
                    let table = diagnostics::gamma_table_from_measure(
                        chain,
                        &resolved.metric().d,
                        &inv.measure,
                        &horizons,
                        &epsilons,
                    )?;
                    artifacts.write("table.csv", &gamma_table_csv(chain, &table))?;
                    finish(
                        diagnostics::closeness_positivity_check(&table, &th),
                        artifacts,
                        summary,
                    )
                }
                Err(_) => {
                    // no exact route: Monte-Carlo occupation along a pair
                    let pair = canonical_pair(&resolved, inst_ref, &params)?;
                    let _ = writeln!(summary, "pair sampler: {}", pair.describe());
                    let eps = epsilons.first().copied().expect("validated");
                    let settings = McSettings {
                        threshold: tol.occupation_threshold,
                        tail_fraction: 0.5,
                        min_ess: tol.min_ess,
                    };
                    finish(
                        diagnostics::occupation_check(
                            pair.as_ref(),
                            &resolved.metric().d,
                            eps,
                            config.run.n_max,
                            config.run.reps,
                            derive_seed(seed, &[1]),
                            &settings,
                        )?,
                        artifacts,
                        summary,
                    )
                }
            }
        }
        ExperimentKind::Unique => {
            let chain = resolved.finite()?;
            let inv = invariant_of(chain)?;
            let mut csv = String::from("state,weight\n");
            for (s, w) in inv.measure.points().iter().zip(inv.measure.weights()) {
                let _ = writeln!(csv, "{},{w}", chain.labels()[*s]);
            }
            artifacts.write("invariant.csv", &csv)?;
            let verdict = match inv.unique {
                Some(true) => Verdict::Supports,
                Some(false) => Verdict::Refutes,
                None => Verdict::Inconclusive,
            };
            let _ = writeln!(
                summary,
                "invariant law residual {}; uniqueness {:?}",
                inv.residual, inv.unique
            );
            Ok(verdict)
        }
        ExperimentKind::Conv2 => {
            let pair = canonical_pair(&resolved, inst_ref, &params)?;
            let _ = writeln!(summary, "pair sampler: {}", pair.describe());
            let settings = McSettings {
                threshold: tol.occupation_threshold,
                tail_fraction: 0.5,
                min_ess: tol.min_ess,
            };
            finish(
                diagnostics::pair_convergence_check(
                    pair.as_ref(),
                    &resolved.metric().d,
                    &epsilons,
                    &horizons,
                    config.run.reps,
                    derive_seed(seed, &[2]),
                    &settings,
                )?,
                artifacts,
                summary,
            )
        }
        ExperimentKind::WeakInProb => {
            let chain = resolved.finite()?;
            let inv = invariant_of(chain)?;
            let eps = epsilons.first().copied().expect("validated");
            finish(
                diagnostics::weak_in_prob_estimate(
                    chain,
                    &resolved.metric().rho,
                    &inv.measure,
                    &horizons,
                    eps,
                    tol.mass_tol,
                )?,
                artifacts,
                summary,
            )
        }
        ExperimentKind::Mixing => {
            let chain = resolved.finite()?;
            let inv = invariant_of(chain)?;
            let obs: Vec<f64> = (0..chain.len()).map(|i| chain.point(i)[0]).collect();
            let _ = writeln!(summary, "observable: first coordinate of the state embedding");
            finish(
                diagnostics::mixing_estimate(
                    chain,
                    &inv.measure,
                    &obs,
                    &obs,
                    &horizons,
                    tol.decay_tol,
                    tol.refute_floor,
                )?,
                artifacts,
                summary,
            )
        }
        ExperimentKind::EChain => {
            let chain = resolved.finite()?;
            let th = EquicontinuityThresholds {
                refute_floor: tol.refute_floor,
                support_ceiling: tol.support_ceiling,
            };
            finish(
                diagnostics::equicontinuity_probe(
                    chain,
                    &resolved.metric().rho,
                    inst_ref.x0,
                    &epsilons,
                    &horizons,
                    &th,
                )?,
                artifacts,
                summary,
            )
        }
        ExperimentKind::Supermartingale => {
            let chain = resolved.finite()?;
            let inv = invariant_of(chain)?;
            let eps = epsilons.first().copied().expect("validated");
            finish(
                diagnostics::supermartingale_check(
                    chain,
                    &resolved.metric().d,
                    &inv.measure,
                    &horizons,
                    eps,
                )?,
                artifacts,
                summary,
            )
        }
        ExperimentKind::Example => {
            let example = match &resolved {
                Resolved::Catalog(inst) => inst,
                Resolved::File { .. } => {
                    return Err(Error::InvalidInput(
                        "kind example needs a catalog anchor".into(),
                    ))
                }
            };
            let _ = writeln!(summary, "{}", example.summary);
            let mut csv = String::from("assertion,status,message\n");
            let mut all_ok = true;
            for (label, outcome) in example.run_assertions() {
                match outcome {
                    Ok(()) => {
                        let _ = writeln!(csv, "{:?},pass,", label);
                        let _ = writeln!(summary, "pass: {label}");
                    }
                    Err(e) => {
                        all_ok = false;
                        let _ = writeln!(csv, "{:?},fail,{:?}", label, e.to_string());
                        let _ = writeln!(summary, "FAIL: {label}: {e}");
                    }
                }
            }
            artifacts.write("assertions.csv", &csv)?;
            Ok(if all_ok {
                Verdict::Supports
            } else {
                Verdict::Refutes
            })
        }
        ExperimentKind::Sdde => unreachable!("dispatched before"),
    }
}

fn run_sdde(
    config: &ExperimentConfig,
    seed: u64,
    artifacts: &mut Artifacts,
    summary: &mut String,
) -> Result<Verdict> {
    let settings = config.sdde.clone().unwrap_or_default();
    let spec = SfdeSpec::by_name(&settings.system, &settings.params)?;
    let _ = writeln!(summary, "system: {} (dim {})", spec.name, spec.dim);

    let lambdas = sorted(config.grids.lambdas.clone());
    let dts = sorted(config.grids.dts.clone());
    let x0 = vec![settings.x0; spec.dim];
    let y0 = vec![settings.y0; spec.dim];

    let mut reports: Vec<ConvergenceReport> = Vec::new();
    let mut girsanov_csv =
        String::from("lambda,dt,divergent_fraction,q10,q50,q90,density_mean,density_half_width,verdict\n");
    let mut worst = Verdict::Supports;
    let downgrade = |v: Verdict, worst: &mut Verdict| {
        *worst = match (*worst, v) {
            (_, Verdict::Refutes) | (Verdict::Refutes, _) => Verdict::Refutes,
            (_, Verdict::Inconclusive) | (Verdict::Inconclusive, _) => Verdict::Inconclusive,
            _ => Verdict::Supports,
        };
    };

    for (li, &lambda) in lambdas.iter().enumerate() {
        for (di, &dt) in dts.iter().enumerate() {
            let k = (1.0 / dt).round() as usize;
            let f = SegmentState::constant(&x0, k)?;
            let g = SegmentState::constant(&y0, k)?;
            let threshold = if lambda > 0.0 {
                settings.threshold_frac * lambda
            } else {
                settings.threshold_frac
            };

            let combo_seed = derive_seed(seed, &[li as u64, di as u64]);
            let contraction = sdde::contraction_ensemble(
                &spec,
                &f,
                &g,
                lambda,
                settings.t_max,
                dt,
                config.run.reps,
                combo_seed,
                threshold,
            )?;
            let _ = writeln!(
                summary,
                "lambda={lambda} dt={dt}: contraction {}",
                contraction.verdict
            );
            downgrade(contraction.verdict, &mut worst);

            let girsanov = sdde::girsanov_diagnostics(
                &spec,
                &f,
                &g,
                lambda,
                settings.t_max,
                dt,
                config.run.reps.max(30),
                combo_seed,
                settings.cap,
            )?;
            let _ = writeln!(
                girsanov_csv,
                "{lambda},{dt},{},{},{},{},{},{},{}",
                girsanov.divergent_fraction,
                girsanov.int_beta_sq_quantiles.0,
                girsanov.int_beta_sq_quantiles.1,
                girsanov.int_beta_sq_quantiles.2,
                girsanov.density_mean,
                girsanov.density_half_width,
                girsanov.verdict
            );
            let _ = writeln!(
                summary,
                "lambda={lambda} dt={dt}: change-of-measure {} (weight mean {})",
                girsanov.verdict, girsanov.density_mean
            );
            for note in &girsanov.notes {
                let _ = writeln!(summary, "note: {note}");
            }
            downgrade(girsanov.verdict, &mut worst);

            let sample = sdde::integrate_pair(
                &spec,
                &f,
                &g,
                lambda,
                settings.t_max,
                dt,
                derive_seed(combo_seed, &[0]),
            )?;
            artifacts.write(&format!("path_lambda{lambda}_dt{dt}.csv"), &sample.to_csv())?;

            artifacts.write_plot_data(&contraction)?;
            reports.push(contraction);
        }
    }

    let report_refs: Vec<&ConvergenceReport> = reports.iter().collect();
    artifacts.write("report.csv", &join_report_csv(&report_refs))?;
    artifacts.write("girsanov.csv", &girsanov_csv)?;
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_is_stable_and_names_anchors() {
        let a = list_text();
        let b = list_text();
        assert_eq!(a, b);
        for anchor in ["5.1", "5.2", "5.3", "5.4", "5.5", "5.6", "5.7", "6.1"] {
            assert!(a.contains(anchor), "catalog listing lost {anchor}");
        }
        for kind in ExperimentKind::ALL {
            assert!(a.contains(kind.name()));
        }
    }

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(exit_code(Verdict::Supports), 0);
        assert_eq!(exit_code(Verdict::Refutes), 2);
        assert_eq!(exit_code(Verdict::Inconclusive), 3);
    }
}
