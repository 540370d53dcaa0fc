use std::io::{BufRead, Write};

use nalgebra::DVector;
use serde::Serialize;
use tagm::ext::{inc_from_fit, update, StreamMode, UpdateRecord};
use tagm::hmm::{forward_backward, rolling_predictions};
use tagm::metrics::{mae, network_score, v_measure, EvaluationReport};
use tagm::model::ModelJson;
use tagm::selection::{select_k, select_lambda, SelectionReport};
use tagm::synth::{generate as synth_generate, CovMode, GeneratorConfig, MeanMode, TransitionMode, TruthJson};
use tagm::{evaluate_params, fit_em, FitResult, ModelParams, ObservationSequence};

use crate::error::{CliError, CliResult};
use crate::io::{
    labels_text, matrix_csv, parse_row, read_json, read_labels, read_observations, Manifest, OutputDir, Timer,
};
use crate::{EvaluateArgs, FitArgs, GenerateArgs, ModeArg, PredictArgs, SelectArgs, StreamArgs};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<T> {
    s.trim().parse().map_err(|_| usage(format!("cannot parse {what} from {s:?}")))
}

fn split_option(s: &str) -> (&str, Vec<&str>) {
    let mut parts = s.split(':');
    let name = parts.next().unwrap_or_default();
    (name, parts.collect())
}

pub fn parse_means(s: &str) -> CliResult<MeanMode> {
    match split_option(s) {
        ("normal", a) if a.is_empty() => Ok(MeanMode::Normal),
        ("uniform", a) if a.len() == 2 => Ok(MeanMode::Uniform {
            a: parse_num(a[0], "uniform lower bound")?,
            b: parse_num(a[1], "uniform upper bound")?,
        }),
        _ => Err(usage(format!("unknown means option {s:?}; use normal or uniform:A:B"))),
    }
}

pub fn parse_cov(s: &str) -> CliResult<CovMode> {
    match split_option(s) {
        ("degree_bounded", a) if a.len() == 1 => Ok(CovMode::DegreeBounded {
            max_degree: parse_num(a[0], "max degree")?,
        }),
        ("random_spd", a) if a.is_empty() => Ok(CovMode::RandomSpd),
        ("stressed_identity", a) if a.len() == 1 => Ok(CovMode::StressedIdentity {
            edge_prob: parse_num(a[0], "edge probability")?,
        }),
        _ => Err(usage(format!(
            "unknown cov option {s:?}; use degree_bounded:M, random_spd or stressed_identity:P"
        ))),
    }
}

pub fn parse_transition(s: &str) -> CliResult<TransitionMode> {
    let range = |a: &[&str]| -> CliResult<(usize, usize)> { Ok((parse_num(a[0], "lo")?, parse_num(a[1], "hi")?)) };
    match split_option(s) {
        ("sudden", a) if a.is_empty() => Ok(TransitionMode::Sudden),
        ("fixed_smooth", a) if a.len() == 1 => Ok(TransitionMode::FixedSmooth {
            steps: parse_num(a[0], "steps")?,
        }),
        ("random_smooth", a) if a.len() == 2 => {
            let (lo, hi) = range(&a)?;
            Ok(TransitionMode::RandomSmooth { lo, hi })
        }
        ("random_smooth_random_weights", a) if a.len() == 2 => {
            let (lo, hi) = range(&a)?;
            Ok(TransitionMode::RandomSmoothRandomWeights { lo, hi })
        }
        _ => Err(usage(format!(
            "unknown transition option {s:?}; use sudden, fixed_smooth:S, random_smooth:LO:HI or random_smooth_random_weights:LO:HI"
        ))),
    }
}

pub fn parse_k_range(s: &str) -> CliResult<Vec<usize>> {
    let s = s.trim();
    let ks: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = parse_num(lo, "k range start")?;
        let hi: usize = parse_num(hi.trim_start_matches('='), "k range end")?;
        (lo..=hi).collect()
    } else {
        s.split(',').map(|v| parse_num(v, "k")).collect::<CliResult<_>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(usage(format!("k range {s:?} must be non-empty and positive")));
    }
    Ok(ks)
}

pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let grid: Vec<f64> = s.split(',').map(|v| parse_num(v, "lambda")).collect::<CliResult<_>>()?;
    if grid.is_empty() || grid.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(usage("lambda grid must be non-empty, finite and >= 0"));
    }
    Ok(grid)
}

fn generator_config(a: &GenerateArgs) -> CliResult<GeneratorConfig> {
    let mut cfg = match &a.config {
        Some(path) => read_json::<GeneratorConfig>(path)?,
        None => GeneratorConfig {
            n_obs: 2000,
            n_states: 3,
            dim: 10,
            mean_mode: MeanMode::Normal,
            cov_mode: CovMode::DegreeBounded { max_degree: 3 },
            kappa: 20.0,
            transition_mode: TransitionMode::Sudden,
            seed: 0,
        },
    };
    if let Some(v) = a.n {
        cfg.n_obs = v;
    }
    if let Some(v) = a.k {
        cfg.n_states = v;
    }
    if let Some(v) = a.d {
        cfg.dim = v;
    }
    if let Some(s) = &a.means {
        cfg.mean_mode = parse_means(s)?;
    }
    if let Some(s) = &a.cov {
        cfg.cov_mode = parse_cov(s)?;
    }
    if let Some(s) = &a.transition {
        cfg.transition_mode = parse_transition(s)?;
    }
    if let Some(v) = a.kappa {
        cfg.kappa = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn generate(a: &GenerateArgs) -> CliResult<()> {
    let cfg = generator_config(a)?;
    let mut manifest = Manifest::new("generate", &cfg, cfg.seed)?;
    let timer = Timer::start();
    let ds = synth_generate(&cfg)?;
    timer.stop(&mut manifest, "generate");

    let mut out = OutputDir::create(&a.out)?;
    out.write("observations.csv", &matrix_csv(ds.x.data(), a.header))?;
    out.write("labels.txt", &labels_text(&ds.labels))?;
    out.write_json("truth.json", &ds.truth_json())?;
    out.finish(manifest)
}

#[derive(Serialize)]
struct FitReport {
    k: usize,
    lambda: f64,
    loglik: f64,
    penalized_loglik: f64,
    bic: f64,
    n_free_params: usize,
    iterations: usize,
    converged: bool,
    restart: usize,
    seed: u64,
    trace: Vec<f64>,
    labels: Vec<usize>,
}

impl FitReport {
    fn new(fit: &FitResult, lambda: f64) -> Self {
        Self {
            k: fit.params.n_states(),
            lambda,
            loglik: fit.loglik(),
            penalized_loglik: fit.penalized_loglik(),
            bic: fit.bic,
            n_free_params: fit.n_free_params,
            iterations: fit.iterations,
            converged: fit.converged,
            restart: fit.restart,
            seed: fit.seed,
            trace: fit.trace.clone(),
            labels: fit.labels.clone(),
        }
    }
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let cfg = a.em.fit_config(a.k, a.lambda);
    let mut manifest = Manifest::new("fit", a, a.em.seed)?;
    let timer = Timer::start();
    let x = read_observations(&a.data, a.header)?;
    timer.stop(&mut manifest, "read");
    let timer = Timer::start();
    let fit = fit_em(&x, &cfg)?;
    timer.stop(&mut manifest, "fit");

    let mut out = OutputDir::create(&a.out)?;
    out.write_json("model.json", &fit.params.to_json())?;
    out.write_json("report.json", &FitReport::new(&fit, a.lambda))?;
    out.finish(manifest)
}

pub fn select(a: &SelectArgs) -> CliResult<()> {
    let ks = parse_k_range(&a.k_range)?;
    let grid = parse_grid(&a.lambda_grid)?;
    let lambda_for_k = a.lambda.unwrap_or(grid[(grid.len() - 1) / 2]);
    let mut manifest = Manifest::new("select", a, a.em.seed)?;
    let x = read_observations(&a.data, a.header)?;
    let cfg = a.em.fit_config(ks[0], lambda_for_k);

    let timer = Timer::start();
    let (chosen_k, k_candidates) = select_k(&x, &ks, lambda_for_k, &cfg)?;
    timer.stop(&mut manifest, "select_k");
    let (chosen_lambda, lambda_candidates) = if grid.len() == 1 {
        // A single candidate wins without spending the stability fits.
        (grid[0], Vec::new())
    } else {
        let timer = Timer::start();
        let r = select_lambda(&x, chosen_k, &grid, a.repeats, &cfg)?;
        timer.stop(&mut manifest, "select_lambda");
        r
    };
    let report = SelectionReport {
        lambda_for_k,
        k_candidates,
        chosen_k,
        lambda_candidates,
        chosen_lambda,
    };
    let mut out = OutputDir::create(&a.out)?;
    out.write_json("selection.json", &report)?;
    out.finish(manifest)
}

fn load_model(path: &std::path::Path) -> CliResult<ModelParams> {
    let json: ModelJson = read_json(path)?;
    Ok(ModelParams::from_json(&json)?)
}

fn check_dims(model: &ModelParams, x: &ObservationSequence) -> CliResult<()> {
    if model.dim() != x.dim() {
        return Err(CliError::Data(format!(
            "model has dimension {} but the data has {} columns",
            model.dim(),
            x.dim()
        )));
    }
    Ok(())
}

/// Rolling forecasts and their error against the next observation.
fn forecast(model: &ModelParams, x: &ObservationSequence) -> CliResult<(nalgebra::DMatrix<f64>, Option<f64>)> {
    let preds = rolling_predictions(model, x)?;
    let n = x.n_obs();
    if n < 2 {
        return Ok((preds, None));
    }
    let realized = x.slice(1, n)?;
    let predicted = ObservationSequence::new(preds.rows(0, n - 1).into_owned())?;
    Ok((preds, Some(mae(&realized, &predicted)?)))
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let mut manifest = Manifest::new("evaluate", a, 0)?;
    let model = load_model(&a.model)?;
    let x = read_observations(&a.data, a.header)?;
    check_dims(&model, &x)?;
    let pred_labels = forward_backward(&model, &x)?.labels();

    let (truth_labels, truth_model) = match (&a.truth, &a.labels) {
        (Some(path), _) => {
            let t: TruthJson = read_json(path)?;
            (t.labels.clone(), Some(ModelParams::from_json(&t.model)?))
        }
        (None, Some(path)) => (read_labels(path)?, None),
        (None, None) => return Err(usage("one of --truth or --labels is required")),
    };
    if truth_labels.len() != x.n_obs() {
        return Err(CliError::Data(format!(
            "{} truth labels for {} observations",
            truth_labels.len(),
            x.n_obs()
        )));
    }

    let timer = Timer::start();
    let mapping = tagm::metrics::map_clusters(&truth_labels, &pred_labels)?;
    let mut report = EvaluationReport {
        v_measure: v_measure(&truth_labels, &pred_labels)?,
        mcc_per_state: None,
        mcc_mean: None,
        mae: None,
        mapping,
        coverage: None,
    };
    if let Some(truth) = &truth_model {
        if truth.dim() != model.dim() {
            return Err(CliError::Data(format!(
                "truth has dimension {} but the model has {}",
                truth.dim(),
                model.dim()
            )));
        }
        let score = network_score(&truth_labels, &truth.precisions, &pred_labels, &model.precisions)?;
        report.mcc_per_state = Some(score.per_state);
        report.mcc_mean = Some(score.mean);
        report.coverage = Some(score.coverage);
    }
    if a.mae {
        report.mae = forecast(&model, &x)?.1;
    }
    timer.stop(&mut manifest, "evaluate");

    let mut out = OutputDir::create(&a.out)?;
    out.write_json("evaluation.json", &report)?;
    out.finish(manifest)
}

#[derive(Serialize)]
struct PredictReport {
    horizon: usize,
    n_predictions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mae: Option<f64>,
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    if a.horizon != 1 {
        return Err(usage(format!("only --horizon 1 is supported, got {}", a.horizon)));
    }
    let mut manifest = Manifest::new("predict", a, 0)?;
    let model = load_model(&a.model)?;
    let x = read_observations(&a.data, a.header)?;
    check_dims(&model, &x)?;
    let timer = Timer::start();
    let (preds, err) = forecast(&model, &x)?;
    timer.stop(&mut manifest, "predict");

    let mut out = OutputDir::create(&a.out)?;
    out.write("predictions.csv", &matrix_csv(&preds, false))?;
    out.write_json(
        "report.json",
        &PredictReport {
            horizon: 1,
            n_predictions: preds.nrows(),
            mae: err,
        },
    )?;
    out.finish(manifest)?;
    if let Some(v) = err {
        println!("mae {v:?}");
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum StreamLine {
    Update(UpdateRecord),
    Error { t: usize, line: usize, error: String },
}

pub fn stream(a: &StreamArgs) -> CliResult<()> {
    let mode = match a.mode {
        ModeArg::Inc => StreamMode::Inc,
        ModeArg::Slide => StreamMode::Slide {
            window: a.window.ok_or_else(|| usage("--mode slide needs --window"))?,
        },
    };
    let cfg = a.em.fit_config(a.k, a.lambda);
    let mut manifest = Manifest::new("stream", a, a.em.seed)?;
    let batch = read_observations(&a.batch, a.header)?;

    let timer = Timer::start();
    let fit = match &a.model {
        Some(path) => {
            let model = load_model(path)?;
            check_dims(&model, &batch)?;
            evaluate_params(&batch, model, a.lambda)?
        }
        None => fit_em(&batch, &cfg)?,
    };
    let mut state = inc_from_fit(&batch, &fit, &cfg, mode, a.refit_stride)?;
    timer.stop(&mut manifest, "batch");

    let timer = Timer::start();
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut sink = std::io::BufWriter::new(stdout.lock());
    for (i, line) in stdin.lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_row(&line, i + 1)
            .and_then(|v| update(&mut state, &DVector::from_vec(v)).map_err(CliError::from));
        let out = match record {
            Ok(r) => StreamLine::Update(r),
            Err(e) => StreamLine::Error {
                t: state.t,
                line: i + 1,
                error: e.to_string(),
            },
        };
        let text = serde_json::to_string(&out).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(sink, "{text}")?;
    }
    sink.flush()?;
    timer.stop(&mut manifest, "stream");

    let mut out = OutputDir::create(&a.out)?;
    out.write_json("model.json", &state.params.to_json())?;
    out.finish(manifest)
}
