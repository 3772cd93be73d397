use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nodebias::config::AuditConfig;
use nodebias::datagen::generate;
use nodebias::debias::debias_run;
use nodebias::graph::{load_graph, load_mask, save_graph, split, GraphFiles, Masks};
use nodebias::influence::estimate_all;
use nodebias::model::{forward, train, train_detailed};
use nodebias::oracle::{bound_sweep, consistency_experiment, fidelity_experiment, speedup_experiment};
use nodebias::pdd::{MetricKind, PddReport};
use nodebias::{Graph, Parameters, SeedTree};

use crate::error::CliError;
use crate::manifest::{Manifest, Outputs, MANIFEST_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Train,
    Audit,
    Fidelity,
    Speedup,
    Consistency,
    Prop1,
    Debias,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Gen,
        Command::Train,
        Command::Audit,
        Command::Fidelity,
        Command::Speedup,
        Command::Consistency,
        Command::Prop1,
        Command::Debias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Audit => "audit",
            Command::Fidelity => "fidelity",
            Command::Speedup => "speedup",
            Command::Consistency => "consistency",
            Command::Prop1 => "prop1",
            Command::Debias => "debias",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| CliError::Input(format!("unknown command `{name}`")))
    }

    /// Metric kind embedded in output names.
    fn kind(self, config: &AuditConfig) -> MetricKind {
        match self {
            Command::Consistency | Command::Debias => MetricKind::Mix,
            _ => config.metric.kind,
        }
    }
}

/// `<command>-<kind>-s<seed>-<short hash>`.
pub fn output_stem(command: Command, config: &AuditConfig) -> String {
    format!(
        "{}-{}-s{}-{}",
        command.name(),
        command.kind(config).as_str(),
        config.seed,
        config.short_hash()
    )
}

/// File-based graph when configured, otherwise the synthetic generator.
pub fn input_graph(config: &AuditConfig) -> Result<Graph, CliError> {
    let paths = &config.paths;
    if let Some(dir) = &paths.graph_dir {
        return Ok(GraphFiles::in_dir(Path::new(dir)).load(&config.schema)?);
    }
    match (&paths.edges, &paths.attributes) {
        (Some(edges), Some(attrs)) => {
            let graph = load_graph(Path::new(edges), Path::new(attrs), &config.schema)?;
            let masks = match (&paths.train_mask, &paths.val_mask, &paths.test_mask) {
                (Some(tr), Some(va), Some(te)) => Masks::from_lists(
                    graph.node_count(),
                    &load_mask(Path::new(tr))?,
                    &load_mask(Path::new(va))?,
                    &load_mask(Path::new(te))?,
                )?,
                (None, None, None) => split(&graph, SeedTree::new(config.seed).derive("split"), &config.split)?,
                _ => return Err(CliError::Config("set all three mask paths or none".into())),
            };
            Ok(graph.with_masks(masks)?)
        }
        (None, None) => Ok(generate(config)?),
        _ => Err(CliError::Config("paths.edges and paths.attributes must be set together".into())),
    }
}

pub fn train_seed(config: &AuditConfig) -> u64 {
    SeedTree::new(config.seed).derive("train")
}

fn input_params(graph: &Graph, config: &AuditConfig) -> Result<Parameters, CliError> {
    match &config.paths.params {
        Some(path) => {
            let params = Parameters::load(Path::new(path))?;
            if params.spec.input_dim != graph.dim() || params.spec.classes != graph.num_classes() {
                return Err(CliError::Input(format!(
                    "{path}: parameters expect {} attributes and {} classes, graph has {} and {}",
                    params.spec.input_dim,
                    params.spec.classes,
                    graph.dim(),
                    graph.num_classes()
                )));
            }
            Ok(params)
        }
        None => Ok(train(graph, &config.model, train_seed(config))?),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

/// Runs `command`, writes its artifacts and manifest into `out`, and returns
/// the manifest path with a short human-readable summary.
pub fn execute(command: Command, config: &AuditConfig, out: &Path) -> Result<(PathBuf, String), CliError> {
    config.validate()?;
    let stem = output_stem(command, config);
    let mut outputs = Outputs::new(out)?;
    outputs.write(&format!("{stem}.config.toml"), &config.to_toml_string())?;
    let graph = input_graph(config)?;
    let seed = train_seed(config);
    let summary = match command {
        Command::Gen => {
            let dir = format!("{stem}.graph");
            let files = save_graph(&graph, &out.join(&dir))?;
            for path in [&files.edges, &files.attributes, &files.train, &files.val, &files.test] {
                let name = path.file_name().expect("file name").to_string_lossy();
                outputs.register(&format!("{dir}/{name}"), true);
            }
            let text = format!(
                "nodes = {}\nedges = {}\ntrain = {}\nval = {}\ntest = {}\ngraph_dir = {}\n",
                graph.node_count(),
                graph.edges().len(),
                graph.train_nodes().len(),
                graph.val_nodes().len(),
                graph.test_nodes().len(),
                dir
            );
            outputs.write(&format!("{stem}.summary.txt"), &text)?;
            text
        }
        Command::Train => {
            let (params, stats) = train_detailed(&graph, &config.model, seed)?;
            let name = format!("{stem}.params.json");
            params.save(&out.join(&name))?;
            outputs.register(&name, true);
            let preds = forward(&params, &graph)?;
            let report = PddReport::evaluate(&preds, &graph, &graph.test_nodes(), &config.metric)?;
            let mut text = format!(
                "epochs = {}\npolish_steps = {}\nobjective = {}\ngradient_norm = {}\nparams = {}\n",
                stats.epochs,
                stats.polish_steps,
                stats.objective,
                stats.gradient_norm,
                name
            );
            text.push_str(&report.to_key_value());
            outputs.write(&format!("{stem}.summary.txt"), &text)?;
            text
        }
        Command::Audit => {
            let params = input_params(&graph, config)?;
            let audit = estimate_all(&params, &graph, config)?;
            outputs.write(&format!("{stem}.influence.tsv"), &audit.to_table(&graph))?;
            outputs.write(&format!("{stem}.influence.json"), &to_json(&audit))?;
            let mut timing = format!("setup\t{}\n", audit.setup_seconds);
            for (r, t) in audit.records.iter().zip(&audit.node_seconds) {
                let _ = writeln!(timing, "{}\t{t}", r.node);
            }
            outputs.write_timing(&format!("{stem}.timing.tsv"), &timing)?;
            let failed = audit.records.iter().filter(|r| !r.is_usable()).count();
            let text = format!(
                "kind = {}\ngradient_method = {:?}\ngamma = {}\ntraining_nodes = {}\nnon_iid = {}\ngradient_norm = {}\nsolve_failures = {}\n",
                audit.metric.as_str(),
                audit.gradient_method,
                audit.gamma,
                audit.training_count,
                audit.non_iid,
                audit.gradient_norm,
                failed
            );
            outputs.write(&format!("{stem}.summary.txt"), &text)?;
            text
        }
        Command::Fidelity => {
            let report = fidelity_experiment(&graph, config, seed)?;
            outputs.write(&format!("{stem}.fidelity.tsv"), &report.to_table())?;
            outputs.write(&format!("{stem}.fidelity.json"), &to_json(&report))?;
            let text = report.summary();
            outputs.write(&format!("{stem}.summary.txt"), &text)?;
            text
        }
        Command::Speedup => {
            let report = speedup_experiment(&graph, config, seed)?;
            let mut per_node = String::from("kind\tindex\tseconds\n");
            for (k, t) in report.retrain_seconds.iter().enumerate() {
                let _ = writeln!(per_node, "retrain\t{k}\t{t}");
            }
            for (k, t) in report.estimate_seconds.iter().enumerate() {
                let _ = writeln!(per_node, "estimate\t{k}\t{t}");
            }
            outputs.write_timing(&format!("{stem}.timings.tsv"), &per_node)?;
            let text = report.summary();
            outputs.write_timing(&format!("{stem}.summary.txt"), &text)?;
            text
        }
        Command::Consistency => {
            let report = consistency_experiment(&graph, config, &config.experiment.budgets, seed)?;
            outputs.write(&format!("{stem}.consistency.tsv"), &report.to_table())?;
            let text = report.summary();
            outputs.write(&format!("{stem}.summary.txt"), &text)?;
            text
        }
        Command::Prop1 => {
            let e = &config.experiment;
            let sweep = bound_sweep(
                &graph,
                e.prop1_hops,
                config.model.self_loops,
                e.prop1_pairs,
                SeedTree::new(config.seed).derive("prop1"),
            )?;
            outputs.write(&format!("{stem}.bounds.tsv"), &sweep.to_table())?;
            let text = format!(
                "hops = {}\npairs = {}\nviolations = {}\n",
                sweep.hops,
                sweep.pairs.len(),
                sweep.violations
            );
            outputs.write(&format!("{stem}.summary.txt"), &text)?;
            text
        }
        Command::Debias => {
            let e = &config.experiment;
            let outcome = debias_run(&graph, config, e.budget_fraction, config.metric.lambda, seed)?;
            outputs.write(&format!("{stem}.debias.json"), &to_json(&outcome.report))?;
            let deleted: String = outcome
                .report
                .deleted_nodes
                .iter()
                .map(|&v| format!("{v}\t{}\n", graph.original_ids()[v]))
                .collect();
            outputs.write(&format!("{stem}.deleted.tsv"), &format!("node_id\toriginal_id\n{deleted}"))?;
            let dir = format!("{stem}.pruned");
            let files = save_graph(&outcome.pruned, &out.join(&dir))?;
            for path in [&files.edges, &files.attributes, &files.train, &files.val, &files.test] {
                let name = path.file_name().expect("file name").to_string_lossy();
                outputs.register(&format!("{dir}/{name}"), true);
            }
            let params_name = format!("{stem}.pruned-params.json");
            outcome.params.save(&out.join(&params_name))?;
            outputs.register(&params_name, true);
            let text = outcome.report.summary();
            outputs.write(&format!("{stem}.summary.txt"), &text)?;
            text
        }
    };
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: nodebias::VERSION.to_string(),
        command: command.name().to_string(),
        seed: config.seed,
        config_hash: config.hash(),
        config: config.to_toml_string(),
        outputs: outputs.finish()?,
    };
    let path = out.join(format!("{stem}.manifest.json"));
    manifest.save(&path)?;
    Ok((path, summary))
}

/// Re-executes a manifest into `out` and compares every deterministic
/// output by SHA-256. Returns one line per compared file.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<String, CliError> {
    let manifest = Manifest::load(manifest_path)?;
    let config = AuditConfig::from_toml_str(&manifest.config)?;
    if config.hash() != manifest.config_hash {
        return Err(CliError::Input(format!(
            "{}: recorded config does not match its hash",
            manifest_path.display()
        )));
    }
    let command = Command::parse(&manifest.command)?;
    let (new_path, _) = execute(command, &config, out)?;
    let fresh = Manifest::load(&new_path)?;
    let mut report = String::new();
    let mut mismatches = Vec::new();
    for entry in &manifest.outputs {
        if !entry.deterministic {
            let _ = writeln!(report, "skip\t{}\t(timing)", entry.file);
            continue;
        }
        let found = fresh.outputs.iter().find(|o| o.file == entry.file);
        match found {
            Some(o) if o.sha256 == entry.sha256 => {
                let _ = writeln!(report, "match\t{}", entry.file);
            }
            _ => {
                let _ = writeln!(report, "differ\t{}", entry.file);
                mismatches.push(entry.file.clone());
            }
        }
    }
    if mismatches.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Mismatch(mismatches.join(", ")))
    }
}
