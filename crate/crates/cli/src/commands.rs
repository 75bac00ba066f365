//! Subcommand implementations. Each returns the process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use snapuq::calibrate::BudgetConfig;
use snapuq::container::{load_model, save_model};
use snapuq::experiment::{
    calibrate as fit_mapping, dev_set, train_model, DevSet, ExperimentConfig, MappingChoice,
};
use snapuq::kv::KvConfig;
use snapuq::model::{ModelConfig, SnapModel};
use snapuq::quantize::{calibrate_quant, report_overhead};
use snapuq::rng::substream;
use snapuq::score::{score_input, score_input_int8, ScoreRecord};
use snapuq::stream::{
    build_report, build_stream, curve_csv, event_curve, frame_correct, id_band, read_stream,
    read_truth, spearman, write_stream, DatasetKind, Frame, Regime, ReportInput, StreamSpec,
    SyntheticTask, Truth,
};
use snapuq::train::TrainConfig;
use snapuq::{Result, SnapError};

use crate::manifest::RunTimer;
use crate::{
    BaselineArg, CalibrateArgs, EngineArg, MappingArg, QuantizeArgs, ReportArgs, ScoreArgs,
    StreamArgs, StreamKind, TrainArgs,
};

pub const MODEL_FILE: &str = "model.snapuq";
pub const STREAM_FILE: &str = "stream.bin";
pub const SPEC_FILE: &str = "stream_spec.json";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const SCORES_META: &str = "scores_meta.json";

const RUN_KEYS: [&str; 3] = ["dataset", "train_size", "dev_size"];

fn read_kv(path: Option<&PathBuf>) -> Result<KvConfig> {
    match path {
        Some(p) => KvConfig::parse(&fs::read_to_string(p)?),
        None => Ok(KvConfig::default()),
    }
}

fn kv_text(kv: &KvConfig) -> String {
    kv.keys()
        .map(|k| format!("{k}={}\n", kv.raw(k).unwrap_or("")))
        .collect()
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<u8> {
    let timer = RunTimer::start("train");
    let mut kv = read_kv(a.config.as_ref())?;
    if let Some(v) = a.seed {
        kv.set("seed", v.to_string());
    }
    if let Some(v) = &a.dataset {
        kv.set("dataset", v.clone());
    }
    if let Some(v) = a.epochs {
        kv.set("epochs", v.to_string());
    }
    if let Some(v) = a.lambda_ss {
        kv.set("lambda_ss", v.to_string());
    }
    if let Some(v) = a.train_size {
        kv.set("train_size", v.to_string());
    }
    let known: Vec<&str> = RUN_KEYS
        .iter()
        .chain(&ModelConfig::KEYS)
        .chain(&TrainConfig::KEYS)
        .copied()
        .collect();
    kv.reject_unknown(&known)?;

    let dataset: DatasetKind = kv.get_or("dataset", DatasetKind::Vectors)?;
    let seed = kv.get_or("seed", 13u64)?;
    let task = SyntheticTask::new(dataset, seed);
    if kv.raw("backbone").is_none() {
        let b = match dataset {
            DatasetKind::Vectors => "mlp",
            DatasetKind::Glyphs => "conv",
        };
        kv.set("backbone", b);
    }
    let model_cfg = ModelConfig::from_kv(&kv)?;
    if model_cfg.backbone.input_shape != task.input_shape() {
        return Err(SnapError::config(format!(
            "backbone input {:?} does not match the {dataset:?} task {:?}",
            model_cfg.backbone.input_shape,
            task.input_shape()
        )));
    }
    let mut exp = ExperimentConfig::desk(dataset, seed);
    exp.train = TrainConfig::for_backbone(model_cfg.backbone.kind).apply_kv(&kv)?;
    exp.train.seed = seed;
    exp.train.validate(model_cfg.backbone.tap_indices.len())?;
    exp.train_size = kv.get_or("train_size", exp.train_size)?;
    exp.dev_size = kv.get_or("dev_size", exp.dev_size)?;

    let trained = train_model(&exp, Some(&model_cfg))?;
    out_dir(&a.out)?;
    let model_path = a.out.join(MODEL_FILE);
    let log_path = a.out.join("train_log.jsonl");
    save_model(&model_path, &trained.model)?;
    fs::write(&log_path, trained.log.to_jsonl()?)?;
    if let Some(last) = trained.log.records.last() {
        println!(
            "trained {} epochs: clf {:.4}, ss {:.4}, mean ebar {:?}",
            trained.log.records.len(),
            last.clf_loss,
            last.ss_loss,
            last.ebar_mean
        );
    }
    let inputs = a.config.into_iter().collect();
    timer.finish(
        &a.out,
        &kv_text(&kv),
        vec![seed],
        inputs,
        vec![model_path, log_path],
    )?;
    Ok(0)
}

fn load_dev(path: &Path) -> Result<DevSet> {
    let inputs = read_stream(path)?;
    let truth = read_truth(path)?;
    if inputs.len() != truth.len() {
        return Err(SnapError::format(
            "stream and truth sidecar differ in length",
        ));
    }
    Ok(DevSet { inputs, truth })
}

pub fn calibrate(a: CalibrateArgs) -> Result<u8> {
    let timer = RunTimer::start("calibrate");
    let choice = match a.mapping {
        MappingArg::Logistic => {
            if a.gamma.is_some() {
                return Err(SnapError::config("--gamma applies to the isotonic mapping"));
            }
            MappingChoice::Logistic {
                label_free: a.label_free,
            }
        }
        MappingArg::Isotonic => {
            if a.label_free {
                return Err(SnapError::config(
                    "--label-free applies to the logistic mapping",
                ));
            }
            if let Some(g) = a.gamma {
                if !(0.0..=1.0).contains(&g) {
                    return Err(SnapError::config("--gamma must lie in [0, 1]"));
                }
            }
            MappingChoice::Isotonic { gamma: a.gamma }
        }
    };
    let mut model = load_model(&a.model)?;
    let dev = load_dev(&a.dev)?;
    let summary = fit_mapping(&mut model, &dev, choice)?;
    if let Some(b) = a.budget {
        let cfg = BudgetConfig::new(b);
        cfg.validate()?;
        if let Some(m) = model.mapping.as_mut() {
            m.budget = Some(cfg);
        }
    }
    out_dir(&a.out)?;
    let model_path = a.out.join(MODEL_FILE);
    let mapping_path = a.out.join("mapping.json");
    save_model(&model_path, &model)?;
    write_json(&mapping_path, &model.mapping)?;
    println!("temperature T = {}", summary.temperature);
    println!(
        "threshold tau* = {} (dev F1 {:.4})",
        summary.threshold, summary.f1
    );
    println!("layer weights w = {:?}", summary.weights);
    let config = serde_json::to_string(&choice)?;
    timer.finish(
        &a.out,
        &config,
        vec![],
        vec![a.model, a.dev],
        vec![model_path, mapping_path],
    )?;
    Ok(0)
}

pub fn quantize(a: QuantizeArgs) -> Result<u8> {
    let timer = RunTimer::start("quantize");
    let mut model = load_model(&a.model)?;
    let dev = read_stream(&a.dev)?;
    let bundle = calibrate_quant(&model, &dev)?;
    let monotone = bundle.lut.entries.windows(2).all(|w| w[0] >= w[1]);
    model.quant = Some(bundle);
    out_dir(&a.out)?;
    let model_path = a.out.join(MODEL_FILE);
    let overhead_path = a.out.join("overhead.json");
    save_model(&model_path, &model)?;
    let overhead = report_overhead(model.spec(), &model.heads);
    write_json(&overhead_path, &overhead)?;
    println!(
        "quantized {} heads; LUT monotone: {monotone}",
        model.heads.len()
    );
    println!(
        "head params {}, projector params {}, FLOP ratio {:.4}",
        overhead.total_head_params, overhead.total_projector_params, overhead.flop_ratio
    );
    timer.finish(
        &a.out,
        "",
        vec![],
        vec![a.model, a.dev],
        vec![model_path, overhead_path],
    )?;
    Ok(0)
}

pub fn stream(a: StreamArgs) -> Result<u8> {
    let timer = RunTimer::start("stream");
    let mut kv = read_kv(a.config.as_ref())?;
    kv.reject_unknown(&StreamSpec::KEYS)?;
    if let Some(v) = &a.dataset {
        kv.set("dataset", v.clone());
    }
    if let Some(v) = a.seed {
        kv.set("seed", v.to_string());
    }
    if let Some(v) = a.task_seed {
        kv.set("task_seed", v.to_string());
    }
    if let Some(v) = &a.preset {
        kv.set("preset", v.clone());
    }
    let spec = StreamSpec::from_kv(&kv)?;
    let task = SyntheticTask::new(spec.dataset, spec.task_seed);
    let frames = match a.kind {
        StreamKind::Stream => build_stream(&spec, &task)?.frames,
        StreamKind::Dev => {
            let dev = dev_set(&task, a.size, spec.seed)?;
            dev.inputs
                .into_iter()
                .zip(dev.truth)
                .map(|(x, truth)| Frame { x, truth })
                .collect()
        }
        StreamKind::Clean => task
            .id_set(a.size, &mut substream(spec.seed, 103))
            .into_iter()
            .map(|(x, label)| Frame {
                x,
                truth: Truth {
                    label,
                    regime: Regime::Id,
                    corruption: None,
                },
            })
            .collect(),
    };
    out_dir(&a.out)?;
    let path = a.out.join(STREAM_FILE);
    write_stream(&path, &frames)?;
    let spec_path = a.out.join(SPEC_FILE);
    write_json(&spec_path, &spec)?;
    println!("wrote {} frames to {}", frames.len(), path.display());
    let truth = snapuq::stream::truth_path(&path);
    timer.finish(
        &a.out,
        &kv_text(&kv),
        vec![spec.seed, spec.task_seed],
        vec![],
        vec![path, truth, spec_path],
    )?;
    Ok(0)
}

/// One line of `scores.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreLine {
    pub frame: usize,
    /// Detector score, larger = more uncertain.
    pub score: f64,
    #[serde(flatten)]
    pub record: ScoreRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub detector: String,
    pub engine: String,
    pub threshold: Option<f64>,
    pub frames: usize,
    pub overflow_frames: usize,
}

fn detector_score(
    model: &SnapModel,
    r: &ScoreRecord,
    baseline: Option<BaselineArg>,
) -> Result<f64> {
    Ok(match baseline {
        None => r.u.unwrap_or(r.s),
        Some(BaselineArg::Msp) => r.baselines.msp,
        Some(BaselineArg::Entropy) => r.baselines.entropy,
        Some(BaselineArg::Energy) => r.baselines.energy,
        Some(BaselineArg::Maha) => r.baselines.maha.ok_or_else(|| {
            debug_assert!(model.maha.is_none());
            SnapError::incompatible("model carries no Mahalanobis statistics")
        })?,
    })
}

pub fn score(a: ScoreArgs) -> Result<u8> {
    let timer = RunTimer::start("score");
    let model = load_model(&a.model)?;
    let inputs = read_stream(&a.stream)?;
    if let Some(x) = inputs.first() {
        if x.shape() != model.spec().input_shape.as_slice() {
            return Err(SnapError::incompatible(
                "stream frames do not fit the model input",
            ));
        }
    }
    let mut lines = String::new();
    let mut overflow_frames = 0;
    for (i, x) in inputs.iter().enumerate() {
        let record = match a.engine {
            EngineArg::Float => score_input(&model, x)?,
            EngineArg::Int8 => {
                let (r, overflow) = score_input_int8(&model, x)?;
                overflow_frames += usize::from(overflow);
                r
            }
        };
        let line = ScoreLine {
            frame: i,
            score: detector_score(&model, &record, a.baseline)?,
            record,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    let detector = match a.baseline {
        None if model.mapping.is_some() => "snap-u",
        None => "snap-s",
        Some(BaselineArg::Msp) => "msp",
        Some(BaselineArg::Entropy) => "entropy",
        Some(BaselineArg::Energy) => "energy",
        Some(BaselineArg::Maha) => "maha",
    };
    let meta = ScoreMeta {
        detector: detector.to_string(),
        engine: match a.engine {
            EngineArg::Float => "float",
            EngineArg::Int8 => "int8",
        }
        .to_string(),
        threshold: match a.baseline {
            None => model.mapping.as_ref().and_then(|m| m.threshold),
            Some(_) => None,
        },
        frames: inputs.len(),
        overflow_frames,
    };
    if overflow_frames > 0 {
        log::warn!("{overflow_frames} frames saturated an integer accumulator");
    }
    out_dir(&a.out)?;
    let scores_path = a.out.join(SCORES_FILE);
    let meta_path = a.out.join(SCORES_META);
    fs::write(&scores_path, lines)?;
    write_json(&meta_path, &meta)?;
    println!(
        "scored {} frames with {} ({})",
        meta.frames, meta.detector, meta.engine
    );
    let config = serde_json::to_string(&meta)?;
    timer.finish(
        &a.out,
        &config,
        vec![],
        vec![a.model, a.stream],
        vec![scores_path, meta_path],
    )?;
    Ok(0)
}

pub fn read_scores(dir: &Path) -> Result<(Vec<ScoreLine>, ScoreMeta)> {
    let text = fs::read_to_string(dir.join(SCORES_FILE))?;
    let lines = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| SnapError::format(format!("bad score line: {e}")))
        })
        .collect::<Result<Vec<ScoreLine>>>()?;
    let meta = serde_json::from_str(&fs::read_to_string(dir.join(SCORES_META))?)?;
    Ok((lines, meta))
}

/// Rank agreement between the float and integer engines.
#[derive(Debug, Clone, Serialize)]
pub struct EngineCheck {
    pub spearman_s: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
struct ReportFile {
    #[serde(flatten)]
    report: snapuq::stream::MetricReport,
    engine_check: Option<EngineCheck>,
}

fn window_for(stream: &Path, arg: Option<usize>) -> Result<usize> {
    if let Some(w) = arg {
        return Ok(w);
    }
    let spec_path = stream.with_file_name(SPEC_FILE);
    if spec_path.exists() {
        let spec: StreamSpec = serde_json::from_str(&fs::read_to_string(spec_path)?)?;
        return Ok(spec.window);
    }
    Ok(20)
}

pub fn report(a: ReportArgs) -> Result<u8> {
    let timer = RunTimer::start("report");
    let truth = read_truth(&a.stream)?;
    let (lines, meta) = read_scores(&a.scores)?;
    if lines.len() != truth.len() {
        return Err(SnapError::incompatible(
            "scores and stream differ in length",
        ));
    }
    let window = window_for(&a.stream, a.window)?;
    let records: Vec<ScoreRecord> = lines.iter().map(|l| l.record.clone()).collect();
    let scores: Vec<f64> = lines.iter().map(|l| l.score).collect();
    let band = match (&a.clean_scores, &a.clean_stream) {
        (Some(cs), Some(ct)) => {
            let (clean, _) = read_scores(cs)?;
            let clean_truth = read_truth(ct)?;
            let preds: Vec<usize> = clean.iter().map(|l| l.record.pred).collect();
            id_band(&frame_correct(&clean_truth, &preds), window)?
        }
        (None, None) => {
            let correct: Vec<bool> = truth
                .iter()
                .zip(&records)
                .filter(|(t, _)| t.regime == Regime::Id)
                .map(|(t, r)| r.pred == t.label)
                .collect();
            id_band(&correct, window)?
        }
        _ => {
            return Err(SnapError::config(
                "--clean-scores and --clean-stream go together",
            ))
        }
    };
    let input = ReportInput {
        records: &records,
        truth: &truth,
        band,
        window,
        seed: a.seed,
    };
    let report = build_report(&input, &meta.detector, &scores, meta.threshold)?;
    let engine_check = match &a.int8_scores {
        Some(dir) => {
            let (q, _) = read_scores(dir)?;
            if q.len() != records.len() {
                return Err(SnapError::incompatible(
                    "int8 scores and float scores differ in length",
                ));
            }
            let fs_: Vec<f64> = records.iter().map(|r| r.s).collect();
            let qs: Vec<f64> = q.iter().map(|l| l.record.s).collect();
            let rho = spearman(&fs_, &qs)?;
            Some(EngineCheck {
                spearman_s: rho,
                threshold: 0.99,
                pass: rho >= 0.99,
            })
        }
        None => None,
    };
    out_dir(&a.out)?;
    let preds: Vec<usize> = records.iter().map(|r| r.pred).collect();
    let curve = event_curve(&truth, &preds, &scores, band, window);
    let curve_path = a.out.join("curve.csv");
    match curve {
        Ok(points) => fs::write(&curve_path, curve_csv(&points))?,
        Err(SnapError::Undefined(why)) => fs::write(&curve_path, format!("# undefined: {why}\n"))?,
        Err(e) => return Err(e),
    }
    let severity_path = a.out.join("severity.csv");
    let mut sev = String::from("severity,auprc\n");
    for p in &report.severity {
        sev.push_str(&format!(
            "{},{}\n",
            p.severity,
            p.auprc.map_or(String::new(), |v| v.to_string())
        ));
    }
    fs::write(&severity_path, sev)?;
    let metrics_path = a.out.join("metrics.json");
    let file = ReportFile {
        report,
        engine_check,
    };
    write_json(&metrics_path, &file)?;
    match &file.report.auprc {
        Some(ci) => println!(
            "{}: AUPRC {:.4} [{:.4}, {:.4}], {} events",
            file.report.detector,
            ci.point,
            ci.lo,
            ci.hi,
            file.report.events.len()
        ),
        None => println!(
            "{}: AUPRC undefined, {} events",
            file.report.detector,
            file.report.events.len()
        ),
    }
    for note in &file.report.notes {
        println!("note: {note}");
    }
    if let Some(c) = &file.engine_check {
        println!(
            "int8 rank check: spearman {:.5} ({})",
            c.spearman_s,
            if c.pass { "pass" } else { "fail" }
        );
    }
    let mut inputs = vec![a.stream, a.scores];
    inputs.extend(a.int8_scores);
    timer.finish(
        &a.out,
        &format!("window={window} seed={}", a.seed),
        vec![a.seed],
        inputs,
        vec![metrics_path, curve_path, severity_path],
    )?;
    Ok(0)
}

pub fn selftest() -> Result<u8> {
    let checks = snapuq::selftest::run_all()?;
    let mut ok = true;
    for c in &checks {
        ok &= c.pass;
        println!(
            "{} {:<28} {:.3e} (tolerance {:.0e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    Ok(if ok { 0 } else { 3 })
}
