//! End-to-end pipeline: train, fit weights and mapping, replay a corrupted
//! stream and compare detectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    dev_hash, fit_isotonic, fit_logistic, fit_temperature, select_threshold_f1, MappingParams,
    GAMMA_GRID, TEMPERATURE_GRID,
};
use crate::error::{Result, SnapError};
use crate::model::{ModelConfig, SnapModel};
use crate::nnet::Tensor;
use crate::rng::substream;
use crate::score::{fit_maha, score_input, ScoreRecord};
use crate::stream::{
    auprc, build_stream, corrupt, event_weights, frame_correct, frame_labels, id_band,
    label_events, severity_auprc, Corruption, DatasetKind, EventInterval, IdBand, Regime,
    StreamSpec, SyntheticTask, Truth,
};
use crate::train::{fit, fit_layer_weights, TrainConfig, TrainLog};

/// Mapping family fitted during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mapping", rename_all = "snake_case")]
pub enum MappingChoice {
    Logistic { label_free: bool },
    Isotonic { gamma: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Seed of the task, the weights and the data draws.
    pub seed: u64,
    pub train_size: usize,
    /// Size of each development slice (clean, corrupted); OOD gets a quarter.
    pub dev_size: usize,
    /// Length of the clean run used for the ID accuracy band.
    pub band_len: usize,
    pub train: TrainConfig,
    pub mapping: MappingChoice,
    pub stream: StreamSpec,
}

impl ExperimentConfig {
    pub fn desk(dataset: DatasetKind, seed: u64) -> Self {
        let kind = SyntheticTask::new(dataset, seed).backbone().kind;
        let mut train = TrainConfig::for_backbone(kind);
        train.seed = seed;
        Self {
            dataset,
            seed,
            train_size: match dataset {
                DatasetKind::Vectors => 2000,
                DatasetKind::Glyphs => 1200,
            },
            dev_size: 400,
            band_len: 400,
            train,
            mapping: MappingChoice::Logistic { label_free: false },
            stream: StreamSpec::desk(dataset, seed.wrapping_add(1), seed),
        }
    }
}

/// Development data for calibration: clean, corrupted and OOD inputs with
/// their hidden truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DevSet {
    pub inputs: Vec<Tensor>,
    pub truth: Vec<Truth>,
}

impl DevSet {
    pub fn clean_inputs(&self) -> Vec<Tensor> {
        self.inputs
            .iter()
            .zip(&self.truth)
            .filter(|(_, t)| t.regime == Regime::Id)
            .map(|(x, _)| x.clone())
            .collect()
    }
}

/// Draws `n` clean, `n` corrupted and `n / 4` OOD examples from a dedicated
/// substream of `seed`.
pub fn dev_set(task: &SyntheticTask, n: usize, seed: u64) -> Result<DevSet> {
    let mut rng = substream(seed, 101);
    let total = 2 * n + n / 4;
    let mut inputs = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    for _ in 0..n {
        let (x, label) = task.sample_id(&mut rng);
        inputs.push(x);
        truth.push(Truth {
            label,
            regime: Regime::Id,
            corruption: None,
        });
    }
    for _ in 0..n {
        let (x, label) = task.sample_id(&mut rng);
        let kind = Corruption::ALL[rng.random_range(0..Corruption::ALL.len())];
        let severity = rng.random_range(1..=5u8);
        inputs.push(corrupt(&x, kind, severity, &mut rng)?);
        truth.push(Truth {
            label,
            regime: Regime::Cid { severity },
            corruption: Some(kind),
        });
    }
    for _ in 0..n / 4 {
        let (x, label) = task.sample_ood(&mut rng);
        inputs.push(x);
        truth.push(Truth {
            label,
            regime: Regime::Ood,
            corruption: None,
        });
    }
    Ok(DevSet { inputs, truth })
}

pub struct Trained {
    pub task: SyntheticTask,
    pub model: SnapModel,
    pub log: TrainLog,
}

/// Builds the task, trains backbone and heads jointly, and freezes the result.
pub fn train_model(cfg: &ExperimentConfig, model_cfg: Option<&ModelConfig>) -> Result<Trained> {
    let task = SyntheticTask::new(cfg.dataset, cfg.seed);
    let model_cfg = match model_cfg {
        Some(m) => m.clone(),
        None => ModelConfig::new(task.backbone()),
    };
    let mut model = SnapModel::init(&model_cfg, cfg.seed)?;
    let train = task.id_set(cfg.train_size, &mut substream(cfg.seed, 100));
    let val = task.id_set(cfg.dev_size / 2, &mut substream(cfg.seed, 102));
    let log = fit(&mut model, &train, Some(&val), &cfg.train)?;
    model.freeze();
    let maha = fit_maha(&model, &train, model.score.maha_shrinkage)?;
    model.maha = Some(maha);
    model.freeze();
    Ok(Trained { task, model, log })
}

/// Summary of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub temperature: f64,
    pub weights: Vec<f64>,
    pub uniform_fallback: bool,
    pub mapping: MappingParams,
    pub threshold: f64,
    pub f1: f64,
}

/// Fits layer weights, temperature, the mapping and an F1 threshold on `dev`,
/// storing everything in the model.
pub fn calibrate(
    model: &mut SnapModel,
    dev: &DevSet,
    choice: MappingChoice,
) -> Result<CalibrationSummary> {
    if dev.inputs.len() != dev.truth.len() {
        return Err(SnapError::argument(
            "one truth record per dev input is required",
        ));
    }
    let clean: Vec<usize> = (0..dev.truth.len())
        .filter(|&i| dev.truth[i].regime == Regime::Id)
        .collect();
    if clean.len() < 2 {
        return Err(SnapError::argument(
            "dev set needs at least two clean examples",
        ));
    }
    let clean_x: Vec<Tensor> = clean.iter().map(|&i| dev.inputs[i].clone()).collect();
    let weights = fit_layer_weights(model, &clean_x)?;
    model.score.weights = weights.w.clone();

    let mut logits = Vec::with_capacity(clean.len());
    for x in &clean_x {
        logits.push(model.backbone.forward_collect(x)?.0.logits);
    }
    let ys: Vec<usize> = clean.iter().map(|&i| dev.truth[i].label).collect();
    let temperature = fit_temperature(&logits, &ys, &TEMPERATURE_GRID)?;
    model.score.temperature = temperature;

    model.mapping = None;
    let records = dev
        .inputs
        .iter()
        .map(|x| score_input(model, x))
        .collect::<Result<Vec<_>>>()?;
    let s: Vec<f64> = records.iter().map(|r| r.s).collect();
    let m: Vec<f64> = records.iter().map(|r| r.m).collect();
    let preds: Vec<usize> = records.iter().map(|r| r.pred).collect();
    let errors: Vec<bool> = frame_correct(&dev.truth, &preds)
        .iter()
        .map(|c| !c)
        .collect();
    let mut mapping = match choice {
        MappingChoice::Logistic { label_free } => {
            MappingParams::logistic(fit_logistic(&s, &m, &errors, label_free)?.beta)
        }
        MappingChoice::Isotonic { gamma } => {
            let grid: Vec<f64> = gamma.map_or(GAMMA_GRID.to_vec(), |g| vec![g]);
            fit_isotonic(&s, &m, &errors, &grid)?
        }
    };
    let u = s
        .iter()
        .zip(&m)
        .map(|(s, m)| mapping.map(*s, *m))
        .collect::<Result<Vec<_>>>()?;
    let (threshold, f1) = select_threshold_f1(&u, &errors)?;
    mapping.threshold = Some(threshold);
    mapping.fitted_on = Some(dev_hash(dev.inputs.iter().map(|x| x.data())));
    model.mapping = Some(mapping.clone());
    Ok(CalibrationSummary {
        temperature,
        weights: weights.w,
        uniform_fallback: weights.uniform_fallback,
        mapping,
        threshold,
        f1,
    })
}

/// ID accuracy band from a clean run of `n` frames.
pub fn clean_band(
    model: &SnapModel,
    task: &SyntheticTask,
    n: usize,
    window: usize,
    seed: u64,
) -> Result<IdBand> {
    let data = task.id_set(n, &mut substream(seed, 103));
    let correct = data
        .iter()
        .map(|(x, y)| Ok(crate::nnet::argmax(&model.backbone.forward_collect(x)?.1) == *y))
        .collect::<Result<Vec<_>>>()?;
    id_band(&correct, window)
}

/// AUPRC of SNAP-UQ and entropy at one corruption severity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityPoint {
    pub severity: u8,
    pub snap: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEval {
    pub frames: usize,
    pub events: Vec<EventInterval>,
    pub band: IdBand,
    pub accuracy_id: f64,
    pub snap_auprc: f64,
    pub entropy_auprc: f64,
    pub snap_auprc_weighted: f64,
    pub entropy_auprc_weighted: f64,
    pub severity: Vec<SeverityPoint>,
}

impl StreamEval {
    /// Adjacent severity pairs whose SNAP-UQ AUPRC does not decrease.
    pub fn monotone_pairs(&self) -> usize {
        self.severity
            .windows(2)
            .filter(|w| w[1].snap >= w[0].snap)
            .count()
    }
}

/// Scores the unlabelled stream copy and evaluates against the hidden truth.
pub fn evaluate_stream(
    records: &[ScoreRecord],
    truth: &[Truth],
    band: IdBand,
    window: usize,
) -> Result<StreamEval> {
    if records.len() != truth.len() {
        return Err(SnapError::argument(
            "one score record per frame is required",
        ));
    }
    let u = records
        .iter()
        .map(|r| {
            r.u.ok_or_else(|| SnapError::state("records carry no mapped uncertainty"))
        })
        .collect::<Result<Vec<_>>>()?;
    let ent: Vec<f64> = records.iter().map(|r| r.baselines.entropy).collect();
    let preds: Vec<usize> = records.iter().map(|r| r.pred).collect();
    let events = label_events(truth, &preds, window, &band)?;
    let labels = frame_labels(truth.len(), &events);
    let weights = event_weights(truth.len(), &events);
    let correct = frame_correct(truth, &preds);
    let id: Vec<bool> = truth
        .iter()
        .zip(&correct)
        .filter(|(t, _)| t.regime == Regime::Id)
        .map(|(_, &c)| c)
        .collect();
    let severity = (1..=5u8)
        .map(|s| {
            Ok(SeverityPoint {
                severity: s,
                snap: severity_auprc(truth, &u, s)?,
                entropy: severity_auprc(truth, &ent, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StreamEval {
        frames: truth.len(),
        band,
        accuracy_id: id.iter().filter(|&&c| c).count() as f64 / id.len().max(1) as f64,
        snap_auprc: auprc(&u, &labels, None)?,
        entropy_auprc: auprc(&ent, &labels, None)?,
        snap_auprc_weighted: auprc(&u, &labels, Some(&weights))?,
        entropy_auprc_weighted: auprc(&ent, &labels, Some(&weights))?,
        events,
        severity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub calibration: CalibrationSummary,
    pub stream: StreamEval,
}

/// Full pipeline for one seed.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let Trained {
        task, mut model, ..
    } = train_model(cfg, None)?;
    let dev = dev_set(&task, cfg.dev_size, cfg.seed)?;
    let calibration = calibrate(&mut model, &dev, cfg.mapping)?;
    let band = clean_band(&model, &task, cfg.band_len, cfg.stream.window, cfg.seed)?;
    let stream = build_stream(&cfg.stream, &task)?;
    let records = stream
        .unlabeled
        .iter()
        .map(|x| score_input(&model, x))
        .collect::<Result<Vec<_>>>()?;
    let eval = evaluate_stream(&records, &stream.truth(), band, cfg.stream.window)?;
    Ok(ExperimentReport {
        seed: cfg.seed,
        calibration,
        stream: eval,
    })
}
