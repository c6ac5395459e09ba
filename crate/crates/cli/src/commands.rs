use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;
use std::time::Instant;

use bnbcp::allocation::VbRule;
use bnbcp::evaluation::{effective_rank, heldout_loglik, heldout_mae};
use bnbcp::export::{read_model, write_model, write_trace};
use bnbcp::gibbs::{run_gibbs, GibbsConfig};
use bnbcp::online::{run_online, Engine, LearningRateSchedule, OnlineConfig, Sampling, SviOptions};
use bnbcp::synthetic::{generate, SyntheticConfig};
use bnbcp::vb::{run_vb, VbConfig};
use bnbcp::{DuplicatePolicy, FitTrace, Hyperparams, ModelState, SparseCountTensor, TensorShape};
use serde_json::{json, Value};

use crate::{CliError, EvalArgs, ExportSample, FitArgs, Method, PriorArgs, Rule, SamplingArg, SynthArgs, TopicsArgs};

type Result<T> = std::result::Result<T, CliError>;

fn policy(sum_duplicates: bool) -> DuplicatePolicy {
    if sum_duplicates {
        DuplicatePolicy::Sum
    } else {
        DuplicatePolicy::Reject
    }
}

fn hyperparams(prior: &PriorArgs, num_modes: usize, rank: usize) -> Result<Hyperparams> {
    let mut hyper = Hyperparams::with_defaults(num_modes, rank);
    if let Some(a) = &prior.a {
        hyper.a = match a.len() {
            1 => vec![a[0]; num_modes],
            n if n == num_modes => a.clone(),
            n => return Err(CliError::Usage(format!("--a has {n} values for {num_modes} modes"))),
        };
    }
    if let Some(g) = prior.g {
        hyper.g = g;
    }
    if let Some(c) = prior.c {
        hyper.c = c;
    }
    if let Some(e) = prior.epsilon {
        hyper.epsilon = e;
    }
    hyper.validate()?;
    Ok(hyper)
}

fn hyper_json(h: &Hyperparams) -> Value {
    json!({ "rank_bound": h.rank_bound, "a": h.a, "g": h.g, "c": h.c, "epsilon": h.epsilon })
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn metrics(heldout: &SparseCountTensor, model: &ModelState, threshold: f64) -> Result<Value> {
    Ok(json!({
        "loglik": heldout_loglik(heldout, model),
        "mae": heldout_mae(heldout, model),
        "effective_rank": effective_rank(&model.lambda, threshold)?,
    }))
}

struct Fitted {
    model: ModelState,
    trace: FitTrace,
    details: Value,
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let started = Instant::now();
    if args.rank == 0 {
        return Err(CliError::Usage("--rank must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&args.heldout_frac) {
        return Err(CliError::Usage(format!("--heldout-frac {} outside [0, 1)", args.heldout_frac)));
    }
    let tensor = SparseCountTensor::load(&args.input, policy(args.sum_duplicates))?;
    let (train, heldout) = if args.heldout_frac > 0.0 {
        tensor.split_heldout(args.heldout_frac, args.seed)?
    } else {
        (tensor.clone(), SparseCountTensor::empty(tensor.shape().clone()))
    };
    let hyper = hyperparams(&args.prior, tensor.num_modes(), args.rank)?;
    let eval_every = args.eval_every.unwrap_or(if args.method == Method::Vb { 1 } else { 10 });
    let rule = match args.vb_rule {
        Rule::Printed => VbRule::Printed,
        Rule::MeanField => VbRule::MeanField,
    };

    let fitted = match args.method {
        Method::Gibbs => {
            let config = GibbsConfig {
                burnin: args.burnin,
                collection: args.samples,
                seed: args.seed,
                eval_every,
                workers: args.workers,
                rank_threshold: args.rank_threshold,
            };
            let out = run_gibbs(&train, &heldout, &config, &hyper)?;
            let histogram: serde_json::Map<String, Value> =
                out.summary.rank_histogram.iter().map(|(r, n)| (r.to_string(), json!(n))).collect();
            let details = json!({
                "rank_histogram": histogram,
                "modal_rank": out.summary.modal_rank(),
                "lambda_spectrum": out.summary.lambda_spectrum,
            });
            let model = match args.export_sample {
                ExportSample::Mean => out.summary.mean_model,
                ExportSample::Last => out.last_sample,
            };
            Fitted { model, trace: out.trace, details }
        }
        Method::Vb => {
            let config = VbConfig {
                max_iters: args.iters,
                tolerance: args.tolerance,
                eval_every,
                seed: args.seed,
                workers: args.workers,
                rule,
                rank_threshold: args.rank_threshold,
            };
            let out = run_vb(&train, &heldout, &config, &hyper)?;
            Fitted { model: out.state.mean_model(), trace: out.trace, details: json!({ "iterations": out.iterations }) }
        }
        Method::Cdf | Method::Svi => {
            let engine = if args.method == Method::Cdf { Engine::Cdf } else { Engine::Svi };
            let mut config = OnlineConfig::new(engine, args.minibatch, args.iters);
            config.schedule = LearningRateSchedule::new(args.t0, args.kappa)?;
            config.plan.sampling = match args.sampling {
                SamplingArg::Replacement => Sampling::WithReplacement,
                SamplingArg::Epoch => Sampling::EpochShuffle,
            };
            config.plan.seed = args.seed.wrapping_add(1);
            config.eval_every = eval_every;
            config.seed = args.seed;
            config.workers = args.workers;
            config.svi = SviOptions { rule, strict_lambda_rate: args.strict_lambda_rate };
            config.rank_threshold = args.rank_threshold;
            let out = run_online(&train, &heldout, &config, &hyper)?;
            Fitted { model: out.state.point_estimate(), trace: out.trace, details: json!({}) }
        }
    };

    fs::create_dir_all(&args.outdir)?;
    write_model(&args.outdir, &fitted.model)?;
    write_trace(args.outdir.join("trace.csv"), &fitted.trace)?;
    heldout.save(args.outdir.join("heldout.tns"))?;
    let manifest = json!({
        "command": "fit",
        "version": env!("CARGO_PKG_VERSION"),
        "argv": std::env::args().collect::<Vec<_>>(),
        "args": args,
        "seed": args.seed,
        "hyperparameters": hyper_json(&hyper),
        "data": {
            "dims": tensor.shape().dims(),
            "nnz": tensor.nnz(),
            "train_nnz": train.nnz(),
            "heldout_nnz": heldout.nnz(),
        },
        "engine": fitted.details,
        "final": metrics(&heldout, &fitted.model, args.rank_threshold)?,
        "wall_seconds": started.elapsed().as_secs_f64(),
    });
    write_json(&args.outdir.join("manifest.json"), &manifest)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let tensor = SparseCountTensor::load(&args.input, policy(args.sum_duplicates))?;
    model.check_shape(tensor.shape())?;
    println!("{}", serde_json::to_string(&metrics(&tensor, &model, args.rank_threshold)?)?);
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let shape = TensorShape::new(args.dims.clone())?;
    let hyper = hyperparams(&args.prior, shape.num_modes(), args.rank)?;
    let mut config = SyntheticConfig::new(args.rank, args.significant, args.lambda_scale, args.seed);
    config.blockwise = args.blockwise;
    let (tensor, truth) = generate(&shape, &hyper, &config)?;

    fs::create_dir_all(&args.outdir)?;
    tensor.save(args.outdir.join("tensor.tns"))?;
    write_model(args.outdir.join("truth"), &truth)?;
    let mut w = csv::Writer::from_path(args.outdir.join("truth.csv"))?;
    w.write_record(["component", "lambda", "significant"])?;
    for (r, l) in truth.lambda.iter().enumerate() {
        w.write_record([r.to_string(), format!("{l:.16e}"), (r < args.significant).to_string()])?;
    }
    w.flush()?;
    let manifest = json!({
        "command": "synth",
        "version": env!("CARGO_PKG_VERSION"),
        "argv": std::env::args().collect::<Vec<_>>(),
        "args": args,
        "hyperparameters": hyper_json(&hyper),
        "nnz": tensor.nnz(),
        "total_count": tensor.total_count(),
    });
    write_json(&args.outdir.join("manifest.json"), &manifest)
}

fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| bnbcp::Error::io(path, e))?;
    BufReader::new(file).lines().map(|l| l.map_err(|e| bnbcp::Error::io(path, e).into())).collect()
}

pub fn topics(args: &TopicsArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let Some(factor) = model.factors.get(args.mode) else {
        return Err(CliError::Usage(format!("--mode {} but the model has {} modes", args.mode, model.num_modes())));
    };
    let labels = match &args.vocab {
        Some(path) => {
            let labels = read_vocab(path)?;
            if labels.len() < factor.rows() {
                return Err(CliError::Labels(format!(
                    "vocabulary {} has {} labels but mode {} has {} entries; {} missing (indices {}..{})",
                    path.display(),
                    labels.len(),
                    args.mode,
                    factor.rows(),
                    factor.rows() - labels.len(),
                    labels.len(),
                    factor.rows() - 1
                )));
            }
            Some(labels)
        }
        None => None,
    };

    let max = model.lambda.iter().cloned().fold(0.0, f64::max);
    let mut components: Vec<usize> =
        (0..model.rank()).filter(|&r| model.lambda[r] > args.rank_threshold * max).collect();
    components.sort_by(|&a, &b| model.lambda[b].total_cmp(&model.lambda[a]).then(a.cmp(&b)));

    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["component", "lambda", "rank", "index", "label", "weight"])?;
    for r in components {
        let column = factor.column(r);
        let mut order: Vec<usize> = (0..column.len()).collect();
        order.sort_by(|&i, &j| column[j].total_cmp(&column[i]).then(i.cmp(&j)));
        for (pos, &i) in order.iter().take(args.top).enumerate() {
            let label = labels.as_ref().map_or_else(|| i.to_string(), |l| l[i].clone());
            w.write_record([
                r.to_string(),
                format!("{:.6e}", model.lambda[r]),
                (pos + 1).to_string(),
                i.to_string(),
                label,
                format!("{:.6e}", column[i]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
