//! `molsde` command-line interface.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on configuration or
//! usage errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use molsde::autodiff::checkpoint;
use molsde::autodiff::gradcheck::check_param_gradients;
use molsde::config::{load_from_params, store_in_params, RunConfig};
use molsde::metrics::{aggregate, cov_mat, roc_auc};
use molsde::moldata::{parse_corpus, serialize_corpus, MoleculePair};
use molsde::objectives::{loss_csv, total_loss, train, Batch};
use molsde::pipeline::{bond_labels, sample_conformations, sample_topologies};
use molsde::scorenets::symmetry::{check_symmetry, default_tolerance, ScoreNet, SymmetryKind};
use molsde::scorenets::{init_params, FrameMode};
use molsde::synthetic::generate_corpus;

#[derive(Parser)]
#[command(name = "molsde", version, about = "Score-based SDE models between molecular topologies and conformations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus of chains, rings and branched molecules.
    GenSynthetic {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both score networks and the contrastive heads.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        loss_csv: Option<String>,
    },
    /// Generate conformations for the topologies of a corpus.
    SampleConf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// Conformations per topology.
        #[arg(long)]
        per_molecule: Option<usize>,
    },
    /// Generate topologies for the conformations of a corpus.
    SampleTopo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Coverage and matching of generated conformations against references.
    EvalCovmat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        /// RMSD threshold in Å.
        #[arg(long)]
        threshold: Option<f64>,
        /// `mean` or `median` over molecules.
        #[arg(long)]
        aggregate: Option<String>,
        /// Per-molecule CSV report.
        #[arg(long)]
        out: Option<String>,
    },
    /// Symmetry and gradient checks on a checkpoint or a fresh initialization.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<String>,
        /// Random transforms per check.
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Fraction of parameters checked against finite differences.
        #[arg(long, default_value_t = 0.002)]
        grad_fraction: f64,
        /// Build the coordinate score without the pseudo-vector axis.
        #[arg(long, hide = true)]
        drop_pseudo_axis: bool,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

type CmdResult = Result<(), Failure>;

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(usage)?;
    }
    for item in &common.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got {item:?}")))?;
        cfg.set(key.trim(), value).map_err(usage)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn require_seed(common: &Common) -> Result<u64, Failure> {
    common.seed.ok_or_else(|| usage("--seed is required for this command"))
}

fn override_path(slot: &mut Option<String>, flag: &Option<String>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

fn required_path(value: &Option<String>, key: &str) -> Result<String, Failure> {
    value.clone().ok_or_else(|| usage(format!("{key} is not set")))
}

fn existing_file(value: &Option<String>, key: &str) -> Result<String, Failure> {
    let p = required_path(value, key)?;
    if !Path::new(&p).is_file() {
        return Err(usage(format!("{key}: no such file {p}")));
    }
    Ok(p)
}

fn read_corpus(path: &str) -> anyhow::Result<Vec<MoleculePair>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    parse_corpus(&text).with_context(|| format!("parsing {path}"))
}

fn write_text(path: impl AsRef<Path>, text: &str) -> anyhow::Result<()> {
    let path = path.as_ref();
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(cfg: &mut RunConfig) -> Result<molsde::autodiff::Params, Failure> {
    let path = existing_file(&cfg.checkpoint, "paths.checkpoint")?;
    let raw = checkpoint::load(&path).with_context(|| format!("loading {path}"))?;
    Ok(load_from_params(cfg, raw).with_context(|| format!("checkpoint {path}"))?)
}

fn gen_synthetic(n: usize, seed: u64, out: &Path) -> CmdResult {
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    write_text(out, &serialize_corpus(&generate_corpus(n, seed)))?;
    Ok(())
}

fn pretrain(common: &Common, corpus: &Option<String>, ckpt: &Option<String>, losses: &Option<String>) -> CmdResult {
    let seed = require_seed(common)?;
    let mut cfg = load_config(common)?;
    override_path(&mut cfg.corpus, corpus);
    override_path(&mut cfg.checkpoint, ckpt);
    override_path(&mut cfg.loss_csv, losses);
    cfg.train.seed = seed;
    cfg.validate().map_err(usage)?;
    let corpus_path = existing_file(&cfg.corpus, "paths.corpus")?;
    let ckpt_path = required_path(&cfg.checkpoint, "paths.checkpoint")?;
    let data = read_corpus(&corpus_path)?;
    let outcome = train(&data, &cfg.model, &cfg.sched, &cfg.train, |e| {
        eprintln!(
            "epoch {} loss {:.6} (contrastive {:.6}, 2d3d {:.6}, 3d2d {:.6})",
            e.epoch, e.total, e.contrastive, e.geom, e.topo
        );
    })
    .context("training")?;
    let mut params = outcome.params;
    store_in_params(&cfg, &mut params);
    checkpoint::save(&ckpt_path, &params).with_context(|| format!("writing {ckpt_path}"))?;
    if let Some(path) = &cfg.loss_csv {
        write_text(path, &loss_csv(&outcome.history))?;
    }
    eprintln!("{} steps, checkpoint {ckpt_path}", outcome.steps);
    Ok(())
}

fn sample_conf(common: &Common, ckpt: &Option<String>, corpus: &Option<String>, out: &Option<String>, k: Option<usize>) -> CmdResult {
    let seed = require_seed(common)?;
    let mut cfg = load_config(common)?;
    override_path(&mut cfg.checkpoint, ckpt);
    override_path(&mut cfg.corpus, corpus);
    override_path(&mut cfg.output, out);
    if let Some(k) = k {
        cfg.per_molecule = k;
    }
    cfg.validate().map_err(usage)?;
    let corpus_path = existing_file(&cfg.corpus, "paths.corpus")?;
    let out_path = required_path(&cfg.output, "paths.output")?;
    let params = load_checkpoint(&mut cfg)?;
    let data = read_corpus(&corpus_path)?;
    let topos: Vec<_> = data.iter().map(|p| p.topo.clone()).collect();
    let confs = sample_conformations(&topos, cfg.per_molecule, &params, &cfg.model, &cfg.sched, &cfg.sample, seed)
        .context("sampling conformations")?;
    let mut records = Vec::with_capacity(topos.len() * cfg.per_molecule);
    for (topo, set) in topos.iter().zip(confs) {
        for geom in set {
            records.push(MoleculePair::new(topo.clone(), geom).context("generated record")?);
        }
    }
    write_text(&out_path, &serialize_corpus(&records))?;
    Ok(())
}

fn sample_topo(common: &Common, ckpt: &Option<String>, corpus: &Option<String>, out: &Option<String>) -> CmdResult {
    let seed = require_seed(common)?;
    let mut cfg = load_config(common)?;
    override_path(&mut cfg.checkpoint, ckpt);
    override_path(&mut cfg.corpus, corpus);
    override_path(&mut cfg.output, out);
    cfg.validate().map_err(usage)?;
    let corpus_path = existing_file(&cfg.corpus, "paths.corpus")?;
    let out_path = required_path(&cfg.output, "paths.output")?;
    let params = load_checkpoint(&mut cfg)?;
    let data = read_corpus(&corpus_path)?;
    let geoms: Vec<_> = data.iter().map(|p| p.geom.clone()).collect();
    let samples = sample_topologies(&geoms, &params, &cfg.model, &cfg.sched, &cfg.sample, seed).context("sampling topologies")?;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    let (mut atoms_right, mut atoms) = (0usize, 0usize);
    let mut records = Vec::with_capacity(samples.len());
    for (s, p) in samples.into_iter().zip(&data) {
        scores.extend_from_slice(&s.pair_scores);
        labels.extend(bond_labels(&p.topo));
        atoms += s.atom_types.len();
        atoms_right += s.atom_types.iter().zip(&p.geom.atom_types).filter(|(a, b)| a == b).count();
        records.push(MoleculePair::new(s.topo, p.geom.clone()).context("decoded record")?);
    }
    write_text(&out_path, &serialize_corpus(&records))?;
    let auc = roc_auc(&scores, &labels).map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
    println!("bond_auc,atom_accuracy");
    println!("{auc},{:.6}", atoms_right as f64 / atoms.max(1) as f64);
    Ok(())
}

fn eval_covmat(
    common: &Common,
    reference: &Path,
    generated: &Path,
    threshold: Option<f64>,
    how: &Option<String>,
    out: &Option<String>,
) -> CmdResult {
    let mut cfg = load_config(common)?;
    if let Some(t) = threshold {
        cfg.threshold = t;
    }
    if let Some(h) = how {
        cfg.aggregate = h.parse().map_err(usage)?;
    }
    override_path(&mut cfg.output, out);
    cfg.validate().map_err(usage)?;
    for p in [reference, generated] {
        if !p.is_file() {
            return Err(usage(format!("no such file {}", p.display())));
        }
    }
    let refs = read_corpus(&reference.to_string_lossy())?;
    let gens = read_corpus(&generated.to_string_lossy())?;
    if refs.is_empty() {
        return Err(Failure::Runtime(anyhow!("reference corpus is empty")));
    }
    if gens.is_empty() || gens.len() % refs.len() != 0 {
        return Err(Failure::Runtime(anyhow!(
            "{} generated records cannot be split evenly over {} references",
            gens.len(),
            refs.len()
        )));
    }
    let k = gens.len() / refs.len();
    let mut csv = String::from("molecule,coverage,matching\n");
    let (mut covs, mut mats) = (Vec::new(), Vec::new());
    for (m, r) in refs.iter().enumerate() {
        let set: Vec<_> = gens[m * k..(m + 1) * k].iter().map(|p| p.geom.clone()).collect();
        let rep = cov_mat(std::slice::from_ref(&r.geom), &set, cfg.threshold).with_context(|| format!("molecule {m}"))?;
        csv.push_str(&format!("{m},{},{}\n", rep.coverage, rep.matching));
        covs.push(rep.coverage);
        mats.push(rep.matching);
    }
    if let Some(path) = &cfg.output {
        write_text(path, &csv)?;
    }
    println!("coverage,matching,threshold,molecules");
    println!(
        "{},{},{},{}",
        aggregate(&covs, cfg.aggregate).expect("nonempty"),
        aggregate(&mats, cfg.aggregate).expect("nonempty"),
        cfg.threshold,
        refs.len()
    );
    Ok(())
}

fn check(common: &Common, ckpt: &Option<String>, trials: usize, grad_fraction: f64, drop_pseudo: bool) -> CmdResult {
    let mut cfg = load_config(common)?;
    override_path(&mut cfg.checkpoint, ckpt);
    cfg.validate().map_err(usage)?;
    if !(grad_fraction > 0.0 && grad_fraction <= 1.0) {
        return Err(usage("--grad-fraction must lie in (0, 1]"));
    }
    let params = if cfg.checkpoint.is_some() {
        load_checkpoint(&mut cfg)?
    } else {
        init_params(&cfg.model, cfg.seed)
    };
    if drop_pseudo {
        cfg.model.frame_mode = FrameMode::DropPseudo;
    }
    let mols = generate_corpus(32, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ok = true;
    println!("check,network,trials,max_deviation,min_relative,fraction_above,tolerance,status");
    for net in [ScoreNet::TopoToGeom, ScoreNet::GeomToTopo] {
        for kind in SymmetryKind::ALL {
            let tol = default_tolerance(kind, net);
            let r = check_symmetry(kind, net, &mols, &params, &cfg.model, &cfg.sched, trials, tol, &mut rng)
                .context("symmetry check")?;
            ok &= r.passed;
            let name = match net {
                ScoreNet::TopoToGeom => "2d_to_3d",
                ScoreNet::GeomToTopo => "3d_to_2d",
            };
            println!(
                "{},{name},{},{:.3e},{:.3e},{:.4},{:e},{}",
                kind.name(),
                r.trials,
                r.max_deviation,
                r.min_relative,
                r.fraction_above,
                r.tolerance,
                if r.passed { "pass" } else { "FAIL" }
            );
        }
    }

    let pairs: Vec<&MoleculePair> = mols.iter().take(3).collect();
    let batch = Batch::unmasked(pairs).context("gradient batch")?;
    let weights = cfg.train.weights;
    let eval = |p: &molsde::autodiff::Params| total_loss(&batch, p, &cfg.model, &cfg.sched, &weights, cfg.train.t_eps, cfg.seed);
    let (_, grads) = eval(&params).context("gradient check")?;
    let report = check_param_gradients(&params, &grads, grad_fraction, 1e-4, &mut rng, |p| eval(p).map(|(v, _)| v.total))
        .context("gradient check")?;
    let grad_tol = 1e-4;
    let passed = report.passed(grad_tol);
    ok &= passed;
    println!(
        "gradient,total_loss,{},{:.3e},,,{grad_tol:e},{}",
        report.checked,
        report.max_rel_error,
        if passed { "pass" } else { "FAIL" }
    );
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("one or more checks failed")))
    }
}

fn run(cli: Cli) -> CmdResult {
    match &cli.command {
        Command::GenSynthetic { n, seed, out } => gen_synthetic(*n, *seed, out),
        Command::Pretrain {
            common,
            corpus,
            checkpoint,
            loss_csv,
        } => pretrain(common, corpus, checkpoint, loss_csv),
        Command::SampleConf {
            common,
            checkpoint,
            corpus,
            out,
            per_molecule,
        } => sample_conf(common, checkpoint, corpus, out, *per_molecule),
        Command::SampleTopo {
            common,
            checkpoint,
            corpus,
            out,
        } => sample_topo(common, checkpoint, corpus, out),
        Command::EvalCovmat {
            common,
            reference,
            generated,
            threshold,
            aggregate,
            out,
        } => eval_covmat(common, reference, generated, *threshold, aggregate, out),
        Command::Check {
            common,
            checkpoint,
            trials,
            grad_fraction,
            drop_pseudo_axis,
        } => check(common, checkpoint, *trials, *grad_fraction, *drop_pseudo_axis),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
