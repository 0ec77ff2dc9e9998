use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use trex::data::{filter_eligible, generate_labeled, holdout_split, load_dataset, parse_history, save_dataset, TestPair};
use trex::evalkit::{evaluate as run_eval, write_matrix_csv, write_per_k_csv, EvalReport, PTop, Predictor, Recommender};
use trex::model::Model;
use trex::trainer::{check_vocab, train as run_train, write_run_log, Checkpoint};

use crate::config::RunConfig;
use crate::CliError;

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg.out_dir()?;
    fs::create_dir_all(dir)?;
    Ok(dir)
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let synthetic = cfg.synthetic()?;
    let dir = out_dir(cfg)?;
    let labeled = generate_labeled(&synthetic, cfg.seed)?;
    save_dataset(&labeled.dataset, &dir.join("data.jsonl"), &dir.join("vocab.json"))?;
    cfg.echo(dir)?;

    let mut counts = BTreeMap::new();
    for a in &labeled.archetypes {
        *counts.entry(a.as_str()).or_insert(0usize) += 1;
    }
    println!("customers  {}", labeled.dataset.customers.len());
    println!("sessions   {}", labeled.dataset.num_sessions());
    for (name, n) in counts {
        println!("{name:<14} {n}");
    }
    Ok(())
}

/// Eligible customers split into train, validation and test pairs, the same
/// way for `train` and `evaluate`.
fn load_split(cfg: &RunConfig) -> Result<trex::data::SplitDataset, CliError> {
    let data = cfg.input_file(&cfg.data, "data")?;
    let vocab = cfg.input_file(&cfg.vocab, "vocab")?;
    let ds = filter_eligible(&load_dataset(data, vocab)?, cfg.eligible_sessions.max(2));
    if ds.customers.is_empty() {
        return Err(CliError::Usage(format!(
            "no customer has at least {} sessions",
            cfg.eligible_sessions.max(2)
        )));
    }
    Ok(holdout_split(&ds, cfg.val_frac, cfg.seed)?)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let split = load_split(cfg)?;
    let model = Model::new(cfg.model(split.train.vocab.size())?)?;
    let tc = cfg.train()?;
    let dir = out_dir(cfg)?;
    cfg.echo(dir)?;
    println!(
        "customers  train {}  validation {}  test {}",
        split.train.customers.len(),
        split.validation.customers.len(),
        split.test.len()
    );

    let outcome = run_train(&model, &tc, &split, Some(&dir.join("model.ckpt")), |e| {
        let train = e.train_loss.map_or("-".to_string(), |l| format!("{l:.4}"));
        println!("epoch {:>3}  train {train:>8}  val {:.4}  {:.1}s", e.epoch, e.val_loss, e.wall_time);
    })?;
    write_run_log(&dir.join("run_log.jsonl"), &outcome.log)?;

    let meta = &outcome.checkpoint.meta;
    match outcome.final_train_loss() {
        Some(l) => println!("final train loss {l:.6}"),
        None => println!("final train loss n/a (no epochs run)"),
    }
    println!("best epoch {}  val {:.6}", meta.epoch, meta.best_val_loss);
    if outcome.stopped_early {
        println!("stopped early after epoch {}", meta.epochs_run);
    }
    Ok(())
}

fn evaluate_system(name: &str, cfg: &RunConfig, test: &[TestPair], vocab: &trex::data::CategoryVocab) -> Result<EvalReport, CliError> {
    let eval = cfg.eval()?;
    match name {
        "ptop" => Ok(run_eval(
            &PTop {
                num_categories: vocab.num_categories(),
            },
            test,
            &eval,
        )?),
        "trex" => {
            let path = cfg.input_file(&cfg.checkpoint, "checkpoint")?;
            let ckpt = Checkpoint::load(path)?;
            check_vocab(&ckpt, vocab)?;
            let predictor = Predictor::from_checkpoint(&ckpt, cfg.generation_mode()?)?;
            Ok(run_eval(&predictor as &dyn Recommender, test, &eval)?)
        }
        other => Err(CliError::Usage(format!("unknown system {other:?} (expected trex or ptop)"))),
    }
}

fn print_report(r: &EvalReport) {
    println!("{}  ({} customers)", r.system, r.customers);
    println!("{:>4}  {:>8}  {:>8}  {:>9}  {:>8}", "k", "recall", "r_median", "precision", "p_median");
    for row in &r.per_k {
        println!(
            "{:>4}  {:>8.4}  {:>8.4}  {:>9.4}  {:>8.4}",
            row.k, row.recall_mean, row.recall.median, row.precision_mean, row.precision.median
        );
    }
    println!(
        "rank match R={}  exact {:.4}  within-one {:.4}  matched {}  misses {}",
        r.rank_match.r,
        r.exact_match,
        r.within_one,
        r.rank_match.total(),
        r.rank_match.misses
    );
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let split = load_split(cfg)?;
    let vocab = &split.train.vocab;
    let mut systems = vec![cfg.system.as_str()];
    if cfg.compare {
        systems.push(if cfg.system == "ptop" { "trex" } else { "ptop" });
    }
    let reports = systems
        .iter()
        .map(|s| evaluate_system(s, cfg, &split.test, vocab))
        .collect::<Result<Vec<_>, _>>()?;

    let dir = out_dir(cfg)?;
    cfg.echo(dir)?;
    for r in &reports {
        fs::write(dir.join(format!("report_{}.json", r.system)), r.to_json()?)?;
        write_matrix_csv(&dir.join(format!("rank_match_{}.csv", r.system)), &r.rank_match)?;
        print_report(r);
        println!();
    }
    write_per_k_csv(&dir.join("per_k.csv"), &reports.iter().collect::<Vec<_>>())?;

    if let [a, b] = reports.as_slice() {
        println!("{} - {}", a.system, b.system);
        println!("{:>4}  {:>8}  {:>9}", "k", "recall", "precision");
        for (ra, rb) in a.per_k.iter().zip(&b.per_k) {
            println!(
                "{:>4}  {:>+8.4}  {:>+9.4}",
                ra.k,
                ra.recall_mean - rb.recall_mean,
                ra.precision_mean - rb.precision_mean
            );
        }
        println!("exact match {:+.4}  within-one {:+.4}", a.exact_match - b.exact_match, a.within_one - b.within_one);
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let path = cfg.input_file(&cfg.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::load(path)?;
    let source = cfg
        .history
        .as_deref()
        .ok_or_else(|| CliError::Usage("--history is required".into()))?;
    let json = if source.trim_start().starts_with('{') {
        source.to_string()
    } else {
        fs::read_to_string(source).map_err(|e| CliError::Usage(format!("cannot read history {source}: {e}")))?
    };
    let history = parse_history(json.trim(), &ckpt.vocab)?;
    let prefix = cfg
        .partial
        .iter()
        .map(|n| ckpt.vocab.id(n))
        .collect::<trex::Result<Vec<_>>>()?;

    let predictor = Predictor::from_checkpoint(&ckpt, cfg.generation_mode()?)?;
    let basket = predictor.generate(&history, cfg.k, &prefix)?;
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        cfg.echo(dir)?;
    }
    for &(c, score) in basket.items() {
        println!("{}\t{score:.6}", ckpt.vocab.name(c));
    }
    Ok(())
}
