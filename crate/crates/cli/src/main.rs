use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use relnet::extract::{degeneracy_probes, load_matrices, verify_matrix_relations, write_matrices, LinearRep};
use relnet::knotlab::{check_moves, evaluate_bracket, parse_diagram};
use relnet::netcore::{Checkpoint, Regime};
use relnet::presentation::{builtin, parse_presentation, Builtin, Monoidal, Presentation};
use relnet::relcomp::{compile, relation_residual, NetSet};
use relnet::trainer::{held_out_points, train, Interval, Optimizer, TrainConfig, TrainError, TrainReport};
use relnet::Nets;

const CONVERGED: u8 = 0;
const ERROR: u8 = 1;
const NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "relnet", version, about = "Learn maps that satisfy the relations of a finitely presented structure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train networks for every generator of a presentation.
    Train(TrainArgs),
    /// Check matrices against a presentation exactly.
    Verify(VerifyArgs),
    /// Evaluate the bracket of a closed sliced diagram with trained maps.
    Bracket(BracketArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Built-in presentation: braid, temperley_lieb, yang_baxter or rt_system.
    #[arg(long)]
    builtin: Option<String>,
    /// Presentation source file.
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    /// Coordinates uniform in [-1, 1].
    Sym,
    /// Coordinates uniform in [0, 1].
    Unit,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "linear")]
    regime: Regime,
    /// Width of a generator's input. For tensor presentations, the dimension of one strand.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Dimension of one block; overrides the value derived from --dim.
    #[arg(long)]
    block_dim: Option<usize>,
    /// The Temperley-Lieb loop value.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum, default_value = "sym")]
    domain: DomainArg,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 20_000)]
    max_steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    target: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Omit wall time so identical runs write identical reports.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "adam")]
    optimizer: Optimizer,
    #[arg(long, default_value_t = 200)]
    eval_every: usize,
    /// Comma-separated relation weights, in presentation order.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    source: Source,
    /// Matrix text file.
    #[arg(long)]
    matrices: PathBuf,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
}

#[derive(Args)]
struct BracketArgs {
    /// Diagram file, one slice per line from the bottom.
    #[arg(long)]
    diagram: PathBuf,
    /// Training output directory, or a checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also evaluate each applicable move and compare against the trained residuals.
    #[arg(long)]
    check_moves: bool,
    #[arg(long)]
    threads: Option<usize>,
}

fn load_presentation(source: &Source, delta: Option<f64>) -> Result<Presentation> {
    match (&source.builtin, &source.file) {
        (Some(name), None) => {
            let which: Builtin = name.parse()?;
            let params: BTreeMap<String, f64> = delta.map(|d| ("delta".to_string(), d)).into_iter().collect();
            Ok(builtin(which, &params)?)
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let mut pres = parse_presentation(&text).with_context(|| format!("{}", path.display()))?;
            if let Some(d) = delta {
                pres.scalars.insert("delta".into(), d);
            }
            Ok(pres)
        }
        _ => bail!("give exactly one of --builtin and --file"),
    }
}

fn block_dim_for(pres: &Presentation, args: &TrainArgs) -> Result<usize> {
    if let Some(b) = args.block_dim {
        if b == 0 {
            bail!("--block-dim must be positive");
        }
        return Ok(b);
    }
    if args.dim == 0 {
        bail!("--dim must be positive");
    }
    if pres.monoidal == Monoidal::Tensor {
        return Ok(args.dim);
    }
    let blocks = pres.generators.first().map(|g| g.arity.inputs).ok_or_else(|| anyhow!("presentation has no generators"))?;
    if args.dim % blocks != 0 {
        bail!("--dim {} is not a multiple of the {} input blocks of `{}`", args.dim, blocks, pres.generators[0].name);
    }
    Ok(args.dim / blocks)
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn write_artifacts(out: &Path, pres: &Presentation, nets: &Nets, report: &TrainReport) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    Checkpoint::new(&pres.name, pres.monoidal, nets.block_dim(), nets.nets()).save(&out.join("checkpoint.json"))?;
    fs::write(out.join("report.json"), report.to_json())?;
    if nets.nets().iter().all(|n| n.regime() != Regime::Nonlinear) {
        let rep = LinearRep::from_nets(nets.block_dim(), nets.nets())?;
        fs::write(out.join("matrices.txt"), write_matrices(&rep))?;
    }
    Ok(())
}

fn print_residuals(report: &TrainReport) {
    for (label, value) in &report.final_residuals {
        println!("{label}\t{value:.6e}");
    }
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    set_threads(args.threads)?;
    let pres = load_presentation(&args.source, args.delta)?;
    let block_dim = block_dim_for(&pres, &args)?;
    let mut nets = NetSet::init(&pres, block_dim, args.regime, args.seed)?;
    let cfg = TrainConfig {
        optimizer: args.optimizer,
        learning_rate: args.lr,
        batch_size: args.batch,
        max_steps: args.max_steps,
        target_residual: args.target,
        seed: args.seed,
        domain: match args.domain {
            DomainArg::Sym => Interval::SYMMETRIC,
            DomainArg::Unit => Interval::UNIT,
        },
        relation_weights: args.weights.clone(),
        deterministic: args.deterministic,
        eval_every: args.eval_every,
        ..TrainConfig::default()
    };
    match train(&pres, &mut nets, &cfg) {
        Ok(report) => {
            write_artifacts(&args.out, &pres, &nets, &report)?;
            print_residuals(&report);
            println!(
                "{} after {} steps (best at step {})",
                if report.converged { "converged" } else { "not converged" },
                report.steps_used,
                report.best_step
            );
            Ok(if report.converged { CONVERGED } else { NOT_CONVERGED })
        }
        Err(TrainError::Diverged { step, report }) => {
            write_artifacts(&args.out, &pres, &nets, &report)?;
            Err(anyhow!("training diverged at step {step}; last finite state written to {}", args.out.display()))
        }
        Err(e) => Err(e.into()),
    }
}

fn infer_block_dim(pres: &Presentation, path: &Path) -> Result<Option<usize>> {
    // Only consulted when the file has no block_dim line.
    let rep: LinearRep<f64> = load_matrices(path, Some(1))?;
    for (name, arity) in pres.network_names() {
        let Some(m) = rep.maps.get(&name) else { continue };
        let cols = m.matrix.cols();
        return Ok(match pres.monoidal {
            Monoidal::Cartesian if arity.inputs > 0 && cols % arity.inputs == 0 => Some(cols / arity.inputs),
            Monoidal::Tensor if arity.inputs > 0 => {
                let root = (cols as f64).powf(1.0 / arity.inputs as f64).round() as usize;
                (root.pow(arity.inputs as u32) == cols).then_some(root)
            }
            _ => None,
        });
    }
    Ok(None)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8> {
    let pres = load_presentation(&args.source, args.delta)?;
    let fallback = infer_block_dim(&pres, &args.matrices)?;
    let rep: LinearRep<f64> = load_matrices(&args.matrices, fallback)?;
    let residuals = verify_matrix_relations(&rep, &pres)?;
    let mut ok = true;
    for (label, r) in &residuals {
        let pass = *r < args.threshold;
        ok &= pass;
        println!("{label}\t{r:.6e}\t{}", if pass { "ok" } else { "above threshold" });
    }
    for (label, r) in degeneracy_probes(&rep) {
        let flag = if r < args.threshold { "\tdegenerate" } else { "" };
        println!("probe {label}\t{r:.6e}{flag}");
    }
    Ok(if ok { CONVERGED } else { NOT_CONVERGED })
}

fn cmd_bracket(args: BracketArgs) -> Result<u8> {
    set_threads(args.threads)?;
    let text = fs::read_to_string(&args.diagram).with_context(|| format!("cannot read {}", args.diagram.display()))?;
    let diagram = parse_diagram(&text).with_context(|| format!("{}", args.diagram.display()))?;
    let (ckpt_path, dir) = if args.checkpoint.is_dir() {
        (args.checkpoint.join("checkpoint.json"), Some(args.checkpoint.clone()))
    } else {
        (args.checkpoint.clone(), args.checkpoint.parent().map(Path::to_path_buf))
    };
    let ckpt = Checkpoint::load(&ckpt_path)?;
    if ckpt.presentation != Builtin::RtSystem.name() {
        bail!("checkpoint holds `{}` networks; the bracket needs rt_system maps", ckpt.presentation);
    }
    let pres = builtin(Builtin::RtSystem, &BTreeMap::new())?;
    let nets: Nets = NetSet::new(ckpt.monoidal, ckpt.block_dim, ckpt.nets()?);
    if !args.check_moves {
        let value = evaluate_bracket(&diagram, &pres, &nets)?;
        println!("bracket\t{:.16e}", value.scalar());
        return Ok(CONVERGED);
    }

    let residuals = trained_residuals(dir.as_deref(), &pres, &nets)?;
    let (base, checks) = check_moves(&diagram, &pres, &nets)?;
    println!("bracket\t{base:.16e}");
    let mut ok = true;
    for c in checks {
        let r = residuals.get(c.mv.relation_label()).copied().unwrap_or(f64::NAN);
        let within = c.delta <= 10.0 * r;
        ok &= within;
        println!(
            "{}\t{:.16e}\tdelta {:.3e}\tresidual {:.3e}\t{}",
            c.mv.name(),
            c.value,
            c.delta,
            r,
            if within { "within 10x residual" } else { "exceeds 10x residual" }
        );
    }
    Ok(if ok { CONVERGED } else { NOT_CONVERGED })
}

/// Residuals from the run's report when present, otherwise measured afresh.
fn trained_residuals(dir: Option<&Path>, pres: &Presentation, nets: &Nets) -> Result<BTreeMap<String, f64>> {
    if let Some(report_path) = dir.map(|d| d.join("report.json")).filter(|p| p.exists()) {
        let report: TrainReport = serde_json::from_str(&fs::read_to_string(&report_path)?)
            .with_context(|| format!("{}", report_path.display()))?;
        return Ok(report.final_residuals);
    }
    let rels = compile(pres, nets)?;
    let widths: Vec<usize> = rels.iter().map(|r| r.in_width()).collect();
    let points = held_out_points::<f64>(&widths, &TrainConfig::default());
    rels.iter()
        .zip(&points)
        .map(|(r, p)| Ok((r.label.clone(), relation_residual(r, nets, p)?)))
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bracket(a) => cmd_bracket(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(ERROR)
        }
    }
}
