//! Subcommand bodies. Each writes its outputs under `cfg.out`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use geom_core::buffer::{load_trajectory, save_trajectory, train_experts};
use geom_core::condenser::{
    condense_observed, init_condensed, load_condensed, save_condensed, trajectory_digest, CondensedMeta, MatchOutcome,
};
use geom_core::evaluator::{
    coreset as select_coreset, decompose_trajectory, error_decomposition, evaluate_condensed, evaluate_full_graph,
    write_decomposition_csv, write_eval_csv, write_eval_json, EvalError, EvalReport, EvalSummary,
    LinearRegressionDynamics,
};
use geom_core::graph::{generate_sbm, load_graph, save_graph};
use geom_core::{ExpertTrajectory, GraphDataset, ModelSpec};

use crate::config::RunConfig;
use crate::{runtime, CliError};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Writes `<out>/<command>.resolved.toml` with every default filled in.
pub fn write_snapshot(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join(format!("{command}.resolved.toml")), &cfg.to_toml())
}

fn load_dataset(cfg: &RunConfig) -> Result<GraphDataset, CliError> {
    match &cfg.dataset.path {
        Some(p) => load_graph(p).map_err(runtime),
        None => generate_sbm(&cfg.dataset.sbm).map_err(runtime),
    }
}

fn eval_spec(cfg: &RunConfig, g: &GraphDataset) -> ModelSpec {
    ModelSpec {
        arch: cfg.model.arch,
        in_dim: g.feature_dim(),
        hidden_dim: cfg.model.hidden_dim,
        out_dim: g.num_classes(),
        seed: cfg.seed,
    }
}

pub fn trajectory_file(dir: &Path, expert_id: usize) -> PathBuf {
    dir.join(format!("expert_{expert_id:03}.traj"))
}

pub fn buffer(cfg: &RunConfig) -> Result<(), CliError> {
    let g = load_dataset(cfg)?;
    let trajs = train_experts(&g, &cfg.buffer).map_err(runtime)?;
    println!("expert  snapshots  final_val_acc");
    for t in &trajs {
        save_trajectory(t, trajectory_file(&cfg.out, t.meta.expert_id)).map_err(runtime)?;
        println!("{:>6}  {:>9}  {:.4}", t.meta.expert_id, t.len(), t.final_val_accuracy());
    }
    println!("wrote {} trajectories to {}", trajs.len(), cfg.out.display());
    Ok(())
}

fn load_trajectories(dir: &Path) -> Result<Vec<ExpertTrajectory>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "traj"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no .traj files in {}", dir.display())));
    }
    let trajs = files
        .iter()
        .map(|f| load_trajectory(f).map_err(runtime))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &trajs[0].spec;
    for (t, f) in trajs.iter().zip(&files).skip(1) {
        let mut diff = String::new();
        for (field, a, b) in [
            ("arch", format!("{:?}", first.arch), format!("{:?}", t.spec.arch)),
            ("in_dim", first.in_dim.to_string(), t.spec.in_dim.to_string()),
            (
                "hidden_dim",
                first.hidden_dim.to_string(),
                t.spec.hidden_dim.to_string(),
            ),
            ("out_dim", first.out_dim.to_string(), t.spec.out_dim.to_string()),
        ] {
            if a != b {
                writeln!(diff, "  {field}: {a} ({}) vs {b} ({})", files[0].display(), f.display()).unwrap();
            }
        }
        if !diff.is_empty() {
            return Err(CliError::Usage(format!(
                "trajectory specs differ:\n{}",
                diff.trim_end()
            )));
        }
    }
    Ok(trajs)
}

fn log_row(o: &MatchOutcome) -> String {
    format!(
        "{},{},{},{},{},{},{},{}\n",
        o.iteration, o.expert, o.start, o.window_upper, o.matching_loss, o.kee_loss, o.total_loss, o.skipped
    )
}

pub const CONDENSE_LOG_HEADER: &str = "iteration,expert,start,window_upper,matching_loss,kee_loss,total_loss,skipped\n";

pub fn condense(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg
        .inputs
        .trajectories
        .as_ref()
        .ok_or_else(|| CliError::Usage("condense needs a trajectory directory (--trajectories)".into()))?;
    let trajs = load_trajectories(dir)?;
    let g = load_dataset(cfg)?;
    let spec = &trajs[0].spec;
    if spec.in_dim != g.feature_dim() || spec.out_dim != g.num_classes() {
        return Err(CliError::Usage(format!(
            "trajectories expect {} features and {} classes, dataset has {} and {}",
            spec.in_dim,
            spec.out_dim,
            g.feature_dim(),
            g.num_classes()
        )));
    }
    let c = &cfg.condense;
    let init = init_condensed(&g, c.ratio, cfg.matching.seed, c.soft_labels, c.inner_lr).map_err(runtime)?;
    println!(
        "condensing {} training nodes to {} with {} experts",
        g.train_indices().len(),
        init.len(),
        trajs.len()
    );
    let every = (cfg.matching.iterations / 10).max(1);
    let mut log = String::from(CONDENSE_LOG_HEADER);
    let result = condense_observed(&trajs, &cfg.matching, &init, |o, _| {
        log.push_str(&log_row(o));
        if (o.iteration + 1) % every == 0 {
            println!(
                "iter {:>5}  window {:>3}  start {:>3}  L_M {:.5}",
                o.iteration + 1,
                o.window_upper,
                o.start,
                o.matching_loss
            );
        }
    })
    .map_err(runtime)?;
    write_text(&cfg.out.join("condense_log.csv"), &log)?;
    let meta = CondensedMeta {
        inner_lr: result.set.inner_lr,
        num_classes: result.set.num_classes,
        source: "geom".into(),
        config: serde_json::to_value(cfg).map_err(runtime)?,
        trajectory_hash: Some(trajectory_digest(&trajs)),
    };
    let bundle = cfg.out.join("condensed");
    save_condensed(&result.set, &meta, &bundle).map_err(runtime)?;
    println!("wrote {}", bundle.display());
    Ok(())
}

fn report_eval(cfg: &RunConfig, summary: EvalSummary) -> Result<(), CliError> {
    let r = &summary.report;
    println!(
        "{} ({}): {:.4} ± {:.4} over {} repeats",
        summary.method,
        summary.arch,
        r.mean,
        r.std,
        r.accuracies.len()
    );
    let summaries = [summary];
    write_eval_csv(cfg.out.join("eval.csv"), &summaries).map_err(runtime)?;
    write_eval_json(cfg.out.join("eval.json"), &summaries).map_err(runtime)
}

fn arch_name(cfg: &RunConfig) -> String {
    serde_json::to_value(cfg.model.arch)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Contract(m) => CliError::Usage(m),
        other => runtime(other),
    }
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let g = load_dataset(cfg)?;
    let spec = eval_spec(cfg, &g);
    let (method, report): (String, EvalReport) = match &cfg.inputs.condensed {
        Some(dir) => {
            let (set, meta) = load_condensed(dir).map_err(runtime)?;
            (
                meta.source,
                evaluate_condensed(&set, &g, &spec, &cfg.eval).map_err(eval_error)?,
            )
        }
        None => (
            "full".into(),
            evaluate_full_graph(&g, &spec, &cfg.eval).map_err(eval_error)?,
        ),
    };
    report_eval(
        cfg,
        EvalSummary {
            method,
            arch: arch_name(cfg),
            report,
        },
    )
}

pub fn coreset(cfg: &RunConfig) -> Result<(), CliError> {
    let g = load_dataset(cfg)?;
    let method = cfg.coreset.method;
    let set = select_coreset(&g, cfg.coreset.ratio, method, cfg.seed).map_err(runtime)?;
    let source = format!("coreset:{}", method.name());
    let meta = CondensedMeta {
        inner_lr: set.inner_lr,
        num_classes: set.num_classes,
        source: source.clone(),
        config: serde_json::to_value(cfg).map_err(runtime)?,
        trajectory_hash: None,
    };
    save_condensed(&set, &meta, cfg.out.join("coreset")).map_err(runtime)?;
    let report = evaluate_condensed(&set, &g, &eval_spec(cfg, &g), &cfg.eval).map_err(eval_error)?;
    report_eval(
        cfg,
        EvalSummary {
            method: source,
            arch: arch_name(cfg),
            report,
        },
    )
}

/// Full-batch gradient descent on four points (expert) against one point
/// (student).
fn linear_toy() -> (LinearRegressionDynamics, LinearRegressionDynamics) {
    let expert = LinearRegressionDynamics {
        inputs: vec![vec![1.0], vec![2.0], vec![-1.5], vec![0.5]],
        targets: vec![1.9, 4.2, -2.8, 1.1],
        lr: 0.1,
    };
    let student = LinearRegressionDynamics {
        inputs: vec![vec![1.3]],
        targets: vec![2.5],
        lr: 0.15,
    };
    (expert, student)
}

pub fn analyze(cfg: &RunConfig) -> Result<(), CliError> {
    let dcfg = cfg.analyze.decomposition();
    let result = if cfg.analyze.toy {
        let (expert, mut student) = linear_toy();
        if let Some(lr) = cfg.analyze.lr {
            student.lr = lr;
        }
        let snapshots = expert.trajectory(&[0.0], dcfg.stages * dcfg.expert_steps);
        error_decomposition(&snapshots, &student, &dcfg)
    } else {
        let (Some(traj_path), Some(set_dir)) = (&cfg.inputs.trajectory, &cfg.inputs.condensed) else {
            return Err(CliError::Usage(
                "analyze needs --toy, or both --trajectory and --condensed".into(),
            ));
        };
        let traj = load_trajectory(traj_path).map_err(runtime)?;
        let (set, _) = load_condensed(set_dir).map_err(runtime)?;
        let lr = cfg.analyze.lr.unwrap_or(set.inner_lr);
        decompose_trajectory(&traj, &set, lr, &dcfg)
    };
    let decomposition = result.map_err(eval_error)?;
    let rows = decomposition.rows();
    println!("stage  |accumulated|  |initialization|  |matching|  residual");
    for r in &rows {
        println!(
            "{:>5}  {:>13.6e}  {:>16.6e}  {:>10.6e}  {:.2e}",
            r.stage, r.accumulated_norm, r.initialization_norm, r.matching_norm, r.residual
        );
    }
    println!(
        "max residual {:.3e} (tolerance {:.1e}), total matching error {:.6e}",
        decomposition.max_residual(),
        dcfg.tolerance,
        decomposition.matching_total()
    );
    write_decomposition_csv(cfg.out.join("decomposition.csv"), &rows).map_err(runtime)
}

pub fn sbm_gen(cfg: &RunConfig) -> Result<(), CliError> {
    let g = generate_sbm(&cfg.dataset.sbm).map_err(runtime)?;
    save_graph(&g, &cfg.out).map_err(runtime)?;
    println!(
        "wrote {} nodes, {} edges, {} classes (edge homophily {:.3}) to {}",
        g.num_nodes(),
        g.edges().len(),
        g.num_classes(),
        g.edge_homophily(),
        cfg.out.display()
    );
    Ok(())
}
