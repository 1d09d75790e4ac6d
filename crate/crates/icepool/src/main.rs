//! Command-line front end: inspect per-graph intermediates, run
//! randomized self-checks, train the classifier, and sweep stage
//! ablations over flat-file or synthetic datasets.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use icepool::cegat::{
    backward, dsn, forward, CegatParams, CegatVariant, CoarseGraphInput,
};
use icepool::coarsen::coarsen;
use icepool::entropy::{connection_distribution, connection_entropy};
use icepool::graph::{
    degree_features, generate_synthetic, load_tu_dataset, Dataset, Graph, SyntheticFamily,
};
use icepool::partition::{assignment_matrix, load_partition, Partition};
use icepool::pipeline::{
    ablate, cross_validate, inspect_graph, train, Combine, IceConfig,
};
use icepool::svdpool::{build_components, verify_reconstruction};
use icepool::{Error, Result};

#[derive(Parser)]
#[command(
    name = "icepool",
    version,
    about = "Entropy-aware graph coarsening, pooling, and classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump every intermediate for one graph as a JSON document.
    Inspect(InspectArgs),
    /// Run randomized self-checks over the numeric kernels.
    Verify(VerifyArgs),
    /// Train the classifier and report per-epoch metrics.
    Train(TrainArgs),
    /// Train every stage combination and tabulate the accuracies.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding flat-file datasets (default: $ICEPOOL_DATA or data/tu).
    #[arg(long)]
    root: Option<PathBuf>,
    /// Name of a flat-file dataset under the root directory.
    #[arg(long)]
    dataset: Option<String>,
    /// Generate a synthetic family (two_community or ring_of_cliques)
    /// instead of loading from disk.
    #[arg(long, value_parser = parse_family)]
    synthetic: Option<SyntheticFamily>,
    /// Number of synthetic graphs to generate.
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Seed for synthetic generation.
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        if let Some(family) = self.synthetic {
            return generate_synthetic(family, self.count, self.data_seed);
        }
        if let Some(name) = &self.dataset {
            let root = self.root.clone().unwrap_or_else(|| {
                PathBuf::from(
                    std::env::var("ICEPOOL_DATA").unwrap_or_else(|_| "data/tu".to_string()),
                )
            });
            return load_tu_dataset(&root, name);
        }
        Err(Error::InvalidArgument(
            "pass --dataset <NAME> or --synthetic <FAMILY>".into(),
        ))
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Clusters per graph (clamped to the node count on small graphs).
    #[arg(long, default_value_t = 4)]
    target_k: usize,
    /// Components kept per connection block.
    #[arg(long, default_value_t = 2)]
    rank: usize,
    /// Walk radius for connection blocks.
    #[arg(long, default_value_t = 1)]
    radius: usize,
    /// Attention scoring rule (gat or egat).
    #[arg(long, default_value = "gat", value_parser = parse_variant)]
    variant: CegatVariant,
    /// Skip the pooling stage.
    #[arg(long)]
    no_svdpool: bool,
    /// Skip the attention stage.
    #[arg(long)]
    no_cegat: bool,
    /// How pooled features join the coarse features (concat or sum).
    #[arg(long, default_value = "concat", value_parser = parse_combine)]
    combine: Combine,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Attention embedding width.
    #[arg(long, default_value_t = 16)]
    d_hidden: usize,
    /// Feed raw edge attributes to attention instead of standardized ones.
    #[arg(long)]
    raw_edges: bool,
    /// Lift singular vectors without the sqrt-singular-value weighting.
    #[arg(long)]
    unweighted_svd: bool,
}

impl ConfigArgs {
    fn to_config(&self) -> IceConfig {
        IceConfig {
            target_k: self.target_k,
            rank: self.rank,
            radius: self.radius,
            variant: self.variant,
            use_svdpool: !self.no_svdpool,
            use_cegat: !self.no_cegat,
            combine: self.combine,
            seed: self.seed,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            d_hidden: self.d_hidden,
            weight_by_sqrt_sigma: !self.unweighted_svd,
            standardize_edges: !self.raw_edges,
        }
    }
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Which graph to inspect.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Load the cluster assignment from a file (one cluster id per line)
    /// instead of running the built-in partitioner.
    #[arg(long)]
    partition_file: Option<PathBuf>,
    /// Write the JSON document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Number of random graphs per check.
    #[arg(long, default_value_t = 200)]
    graphs: usize,
    /// Largest random graph size.
    #[arg(long, default_value_t = 30)]
    max_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    /// Save the trained parameters to this file.
    #[arg(long)]
    save_params: Option<PathBuf>,
    /// Run k-fold cross-validation instead of a single split.
    #[arg(long)]
    cv: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
}

fn parse_family(s: &str) -> std::result::Result<SyntheticFamily, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<CegatVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_combine(s: &str) -> std::result::Result<Combine, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Inspect(args) => run_inspect(args),
        Command::Verify(args) => run_verify(args),
        Command::Train(args) => run_train(args),
        Command::Ablate(args) => run_ablate(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run_inspect(args: InspectArgs) -> Result<ExitCode> {
    let ds = args.data.load()?;
    if args.index >= ds.len() {
        return Err(Error::InvalidArgument(format!(
            "graph index {} outside 0..{}",
            args.index,
            ds.len()
        )));
    }
    let g = ds.graph(args.index);
    let partition = match &args.partition_file {
        Some(path) => Some(load_partition(path, g)?),
        None => None,
    };
    let doc = inspect_graph(g, &args.config.to_config(), partition)?;
    let rendered = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Config(format!("JSON rendering failed: {e}")))?;
    match &args.out {
        Some(path) => std::fs::write(path, rendered + "\n")?,
        None => println!("{rendered}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_train(args: TrainArgs) -> Result<ExitCode> {
    let ds = args.data.load()?;
    let cfg = args.config.to_config();

    if let Some(folds) = args.cv {
        let accs = cross_validate(&ds, &cfg, folds)?;
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
        match args.format {
            OutputFormat::Text => {
                for (fold, acc) in accs.iter().enumerate() {
                    println!("fold {fold}: accuracy {acc:.4}");
                }
                println!("mean {:.4}  std {:.4}", mean, var.sqrt());
            }
            OutputFormat::Json => {
                let doc = serde_json::json!({
                    "fold_accuracies": accs,
                    "mean": mean,
                    "std": var.sqrt(),
                });
                println!("{}", serde_json::to_string_pretty(&doc).unwrap());
            }
            OutputFormat::Csv => {
                println!("fold,accuracy");
                for (fold, acc) in accs.iter().enumerate() {
                    println!("{fold},{acc:.4}");
                }
            }
        }
        return Ok(ExitCode::SUCCESS);
    }

    let report = train(&ds, &cfg)?;
    if let Some(path) = &args.save_params {
        report.params.save(path)?;
    }
    match args.format {
        OutputFormat::Text => {
            let stride = (cfg.epochs / 10).max(1);
            for m in &report.history {
                if m.epoch % stride == 0 || m.epoch + 1 == report.history.len() {
                    println!(
                        "epoch {:>4}  loss {:.4}  train {:.4}  val {:.4}",
                        m.epoch, m.loss, m.train_accuracy, m.val_accuracy
                    );
                }
            }
            println!(
                "final: train {:.4}  val {:.4}  ({} train / {} val graphs)",
                report.final_train_accuracy,
                report.final_val_accuracy,
                report.train_indices.len(),
                report.val_indices.len()
            );
            if let Some(residual) = report.mean_residual {
                println!("mean reconstruction residual: {residual:.3e}");
            }
        }
        OutputFormat::Json => {
            let doc = serde_json::json!({
                "final_train_accuracy": report.final_train_accuracy,
                "final_val_accuracy": report.final_val_accuracy,
                "train_size": report.train_indices.len(),
                "val_size": report.val_indices.len(),
                "mean_reconstruction_residual": report.mean_residual,
                "history": report.history,
            });
            println!("{}", serde_json::to_string_pretty(&doc).unwrap());
        }
        OutputFormat::Csv => {
            println!("epoch,loss,train_accuracy,val_accuracy");
            for m in &report.history {
                println!(
                    "{},{:.6},{:.4},{:.4}",
                    m.epoch, m.loss, m.train_accuracy, m.val_accuracy
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_ablate(args: AblateArgs) -> Result<ExitCode> {
    let ds = args.data.load()?;
    let table = ablate(&ds, &args.config.to_config())?;
    match args.format {
        OutputFormat::Csv => print!("{}", table.to_csv()),
        OutputFormat::Json => {
            println!("{}", serde_json::to_string_pretty(&table).unwrap());
        }
        OutputFormat::Text => {
            println!(
                "{:<12} {:<8} {:>8} {:>8} {:>12}",
                "config", "variant", "train", "val", "residual"
            );
            for row in &table.rows {
                let residual = row
                    .mean_residual
                    .map(|r| format!("{r:.2e}"))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "{:<12} {:<8} {:>8.4} {:>8.4} {:>12}",
                    row.name, row.variant, row.train_accuracy, row.val_accuracy, residual
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

struct CheckResult {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn run_verify(args: VerifyArgs) -> Result<ExitCode> {
    if args.max_n < 4 {
        return Err(Error::InvalidArgument("--max-n must be at least 4".into()));
    }
    if args.graphs < 1 {
        return Err(Error::InvalidArgument("--graphs must be at least 1".into()));
    }
    let checks = vec![
        check_coarse_recomposition(&args)?,
        check_pooling_reconstruction(&args)?,
        check_normalization(&args),
        check_entropy_bounds(&args)?,
        check_attention_gradients(&args)?,
    ];
    let all_pass = checks.iter().all(|c| c.pass);
    match args.format {
        OutputFormat::Json => {
            let doc = serde_json::json!({
                "checks": checks.iter().map(|c| serde_json::json!({
                    "name": c.name,
                    "pass": c.pass,
                    "detail": c.detail,
                })).collect::<Vec<_>>(),
                "all_pass": all_pass,
            });
            println!("{}", serde_json::to_string_pretty(&doc).unwrap());
        }
        OutputFormat::Csv => {
            println!("name,pass,detail");
            for c in &checks {
                println!("{},{},{}", c.name, c.pass, c.detail.replace(',', ";"));
            }
        }
        OutputFormat::Text => {
            for c in &checks {
                let tag = if c.pass { "PASS" } else { "FAIL" };
                println!("{}: {} ({})", c.name, tag, c.detail);
            }
        }
    }
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn random_graph(rng: &mut ChaCha8Rng, max_n: usize) -> Graph {
    let n = rng.random_range(4..=max_n);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1));
    }
    let mut g = Graph::from_edges(n, &edges, Array2::zeros((n, 1)), 0)
        .expect("generated edges are valid");
    let feats = degree_features(&g, 10);
    g.set_features(feats).expect("feature rows match");
    g
}

fn random_partition(rng: &mut ChaCha8Rng, n: usize) -> Partition {
    let k = rng.random_range(2..=n.min(6));
    let membership: Vec<usize> = (0..n)
        .map(|i| if i < k { i } else { rng.random_range(0..k) })
        .collect();
    Partition::from_membership(&membership)
}

fn check_coarse_recomposition(args: &VerifyArgs) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    rng.set_stream(1);
    let mut max_dev = 0.0f64;
    for _ in 0..args.graphs {
        let g = random_graph(&mut rng, args.max_n);
        let p = random_partition(&mut rng, g.n());
        let cr = coarsen(&g, &p);
        let s = assignment_matrix(&p).mapv(f64::from);
        let a = g.adjacency().mapv(f64::from);
        let coarse = s.t().dot(&a).dot(&s);
        for i in 0..p.k() {
            for j in 0..p.k() {
                max_dev = max_dev.max((coarse[[i, j]] - cr.a_coar[[i, j]] as f64).abs());
            }
        }
        for i in 0..g.n() {
            for j in 0..g.n() {
                let total = cr.a_int[[i, j]] + cr.a_ext[[i, j]];
                max_dev = max_dev.max((f64::from(total) - f64::from(g.adjacency()[[i, j]])).abs());
            }
        }
        for (&(i, j), block) in &cr.pair_blocks {
            let sum: u64 = block.iter().map(|&x| u64::from(x)).sum();
            max_dev = max_dev.max((sum as f64 - cr.a_coar[[i, j]] as f64).abs());
        }
    }
    Ok(CheckResult {
        name: "coarse_operator_recomposition",
        pass: max_dev == 0.0,
        detail: format!("{} graphs, max deviation {max_dev:.1e}", args.graphs),
    })
}

fn check_pooling_reconstruction(args: &VerifyArgs) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    rng.set_stream(2);
    let mut max_residual = 0.0f64;
    let mut all_exact_expected = true;
    for _ in 0..args.graphs {
        let g = random_graph(&mut rng, args.max_n);
        let p = random_partition(&mut rng, g.n());
        let cr = coarsen(&g, &p);
        let comps = build_components(&g, &p, &cr, g.n(), 1, true)?;
        let report = verify_reconstruction(&g, &p, &comps);
        max_residual = max_residual.max(report.residual);
        all_exact_expected &= report.exact_expected;
    }
    Ok(CheckResult {
        name: "pooling_reconstruction",
        pass: max_residual <= 1e-8 && all_exact_expected,
        detail: format!("{} graphs, max residual {max_residual:.2e}", args.graphs),
    })
}

fn check_normalization(args: &VerifyArgs) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    rng.set_stream(3);
    let mut max_dev = 0.0f64;
    for _ in 0..args.graphs {
        let k = rng.random_range(1..=8);
        let s = Array2::from_shape_fn((k, k), |_| rng.random_range(0.1..1.0));
        let alpha = dsn(&s);
        for i in 0..k {
            let row: f64 = alpha.row(i).sum();
            let col: f64 = alpha.column(i).sum();
            max_dev = max_dev.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
    }
    CheckResult {
        name: "normalization_row_col_sums",
        pass: max_dev <= 1e-10,
        detail: format!("{} matrices, max deviation {max_dev:.2e}", args.graphs),
    }
}

fn check_entropy_bounds(args: &VerifyArgs) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    rng.set_stream(4);
    let mut max_excess = f64::NEG_INFINITY;
    let mut max_sum_dev = 0.0f64;
    for _ in 0..args.graphs {
        let g = random_graph(&mut rng, args.max_n);
        let p = random_partition(&mut rng, g.n());
        let cr = coarsen(&g, &p);
        let feats = connection_entropy(&cr);
        for &(i, j) in cr.pair_blocks.keys() {
            let dist = connection_distribution(&cr, i, j)?;
            max_sum_dev = max_sum_dev.max((dist.sum() - 1.0).abs());
            let bound = (p.node_list(i).len() as f64).ln();
            max_excess = max_excess
                .max(-feats.h[[i, j]])
                .max(feats.h[[i, j]] - bound);
        }
    }
    Ok(CheckResult {
        name: "entropy_bounds",
        pass: max_sum_dev <= 1e-12 && max_excess <= 1e-12,
        detail: format!(
            "{} graphs, max distribution deviation {max_sum_dev:.2e}, max bound excess {max_excess:.2e}",
            args.graphs
        ),
    })
}

fn check_attention_gradients(args: &VerifyArgs) -> Result<CheckResult> {
    let instances = args.graphs.min(5);
    let mut max_rel = 0.0f64;
    for variant in [CegatVariant::Gat, CegatVariant::Egat] {
        for i in 0..instances {
            let rel = directional_gradient_error(variant, args.seed.wrapping_add(i as u64))?;
            max_rel = max_rel.max(rel);
        }
    }
    Ok(CheckResult {
        name: "attention_gradients",
        pass: max_rel < 1e-4,
        detail: format!(
            "{} instances x 2 variants, max relative error {max_rel:.2e}",
            instances
        ),
    })
}

/// Compares the analytic directional derivative against a central
/// finite difference along one random direction through every
/// parameter and input tensor.
fn directional_gradient_error(variant: CegatVariant, seed: u64) -> Result<f64> {
    let k = 4;
    let (d_in, d_out, d_edge_in, d_edge) = (3, 3, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(5);

    let h = Array2::from_shape_fn((k, d_in), |_| rng.random_range(-1.0..1.0));
    let e = Array3::from_shape_fn((k, k, d_edge_in), |_| rng.random_range(-1.0..1.0));
    let mut mask = Array2::from_elem((k, k), false);
    for i in 0..k {
        mask[[i, i]] = true;
    }
    for i in 0..k {
        for j in (i + 1)..k {
            if rng.random_bool(0.7) {
                mask[[i, j]] = true;
                mask[[j, i]] = true;
            }
        }
    }
    mask[[0, 1]] = true;
    mask[[1, 0]] = true;
    let params = CegatParams::init(variant, d_in, d_out, d_edge_in, d_edge, 0.2, seed);
    let upstream = Array2::from_shape_fn((k, d_out), |_| rng.random_range(-1.0..1.0));

    let dir_w = Array2::from_shape_fn(params.w.dim(), |_| rng.random_range(-1.0..1.0));
    let dir_a = Array1::from_shape_fn(params.a.len(), |_| rng.random_range(-1.0..1.0));
    let dir_w_e = params
        .w_e
        .as_ref()
        .map(|w_e| Array2::from_shape_fn(w_e.dim(), |_| rng.random_range(-1.0..1.0)));
    let dir_h = Array2::from_shape_fn(h.dim(), |_| rng.random_range(-1.0..1.0));
    let dir_e = Array3::from_shape_fn(e.dim(), |_| rng.random_range(-1.0..1.0));

    let inp = CoarseGraphInput::new(h.clone(), e.clone(), mask.clone())?;
    let grads = backward(variant, &inp, &params, &upstream)?;
    let mut analytic = (&grads.w * &dir_w).sum() + (&grads.a * &dir_a).sum();
    analytic += (&grads.h * &dir_h).sum() + (&grads.e * &dir_e).sum();
    if let (Some(g), Some(d)) = (&grads.w_e, &dir_w_e) {
        analytic += (g * d).sum();
    }

    let loss_at = |t: f64| -> Result<f64> {
        let mut p = params.clone();
        p.w = &p.w + &(t * &dir_w);
        p.a = &p.a + &(t * &dir_a);
        if let (Some(w_e), Some(d)) = (p.w_e.as_mut(), &dir_w_e) {
            *w_e = &*w_e + &(t * d);
        }
        let inp_t = CoarseGraphInput::new(&h + &(t * &dir_h), &e + &(t * &dir_e), mask.clone())?;
        let out = forward(variant, &inp_t, &p)?;
        Ok((&out * &upstream).sum())
    };
    let step = 1e-5;
    let numeric = (loss_at(step)? - loss_at(-step)?) / (2.0 * step);
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    Ok((numeric - analytic).abs() / denom)
}
