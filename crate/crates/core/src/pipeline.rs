//! End-to-end orchestration: raw recordings to feature tables, rankings
//! and cross-validated reports, under one serialisable configuration.

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, FeatureRow, FeatureTable, RawRecording, Target, TrialLabel};
use crate::demod::{demodulate, DemodConfig, DemodError, Demodulated};
use crate::eval::{cross_validate, CvConfig, EvalError, EvalReport};
use crate::featsel::{rank_features, select_top_k, FeatselError, RankedFeatureSet, SelectionMethod};
use crate::features::{extract_all, FeatureConfig};
use crate::preprocess::{
    apply_fir, apply_sg, design_fir, segment, FirSpec, PreprocessError, SegmentLabels, SgMode, SgSpec, WindowSpec,
};
use crate::regress::{ForestConfig, ModelConfig, ModelKind, RegressError};
use crate::synth::{generate, SynthConfig, SynthError};
use crate::ProcessedSeries;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Demod(#[from] DemodError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Featsel(#[from] FeatselError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PipelineError {
    /// Module the failure originated in.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Dataset(_) => "dataset-io",
            PipelineError::Synth(_) => "synthgen",
            PipelineError::Demod(_) => "demod",
            PipelineError::Preprocess(_) => "preprocess",
            PipelineError::Featsel(FeatselError::Regress(_)) => "featsel",
            PipelineError::Featsel(FeatselError::Eval(_)) => "eval",
            PipelineError::Featsel(_) => "featsel",
            PipelineError::Regress(_) => "regress",
            PipelineError::Eval(EvalError::Regress(_)) => "regress",
            PipelineError::Eval(_) => "eval",
            PipelineError::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Band for the impedance channel. The sample rate is taken from the
    /// demodulated series at run time.
    pub bioz_fir: FirSpec,
    pub ecg_fir: FirSpec,
    pub sg: SgSpec,
    pub window: WindowSpec,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            bioz_fir: FirSpec::default(),
            ecg_fir: FirSpec {
                high_hz: 40.0,
                ..FirSpec::default()
            },
            sg: SgSpec::default(),
            window: WindowSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub method: SelectionMethod,
    pub k: usize,
    pub forest: ForestConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            method: SelectionMethod::RfImpurity,
            k: SelectionMethod::RfImpurity.default_k(),
            forest: ForestConfig::default(),
        }
    }
}

/// Synthetic cohort: every trial draws its heart rate and PTT uniformly
/// from the given ranges, every subject its pulse amplitude and shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub duration_s: f64,
    pub heart_rate_bpm: (f64, f64),
    pub ptt_s: (f64, f64),
    pub delta_z_ohm: (f64, f64),
    pub systolic_fraction: (f64, f64),
    pub base: SynthConfig,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_subjects: 13,
            trials_per_subject: 10,
            duration_s: 16.0,
            heart_rate_bpm: (60.0, 100.0),
            ptt_s: (0.08, 0.22),
            delta_z_ohm: (20.0, 40.0),
            systolic_fraction: (0.25, 0.35),
            base: SynthConfig {
                rr_jitter_fraction: 0.03,
                respiration_amp_ohm: 2.0,
                noise_snr_db: Some(40.0),
                ..SynthConfig::default()
            },
        }
    }
}

impl CohortConfig {
    /// Configuration of one trial, a pure function of `(self, seed, subject, trial)`.
    pub fn trial(&self, seed: u64, subject: usize, trial: usize) -> SynthConfig {
        let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let mut srng = ChaCha8Rng::seed_from_u64(seed);
        srng.set_stream(1 + subject as u64);
        let delta_z = draw(&mut srng, self.delta_z_ohm);
        let systolic = draw(&mut srng, self.systolic_fraction);
        let mut trng = ChaCha8Rng::seed_from_u64(seed);
        trng.set_stream(((1 + subject as u64) << 20) + 1 + trial as u64);
        SynthConfig {
            heart_rate_bpm: draw(&mut trng, self.heart_rate_bpm),
            ptt_s: draw(&mut trng, self.ptt_s),
            delta_z_ohm: delta_z,
            systolic_fraction: systolic,
            seed: trng.random(),
            subject_id: format!("S{:02}", subject + 1),
            trial_id: format!("T{:02}", trial + 1),
            ..self.base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub manifest_version: u32,
    /// Drives the cohort, the selection forest, the model and the fold
    /// shuffle; [`PipelineConfig::resolved`] copies it into each of them.
    pub seed: u64,
    pub targets: Vec<Target>,
    pub synth: CohortConfig,
    pub demod: DemodConfig,
    pub preprocess: PreprocessConfig,
    pub features: FeatureConfig,
    pub selection: SelectionConfig,
    pub model: ModelConfig,
    pub cv: CvConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest_version: MANIFEST_VERSION,
            seed: 0,
            targets: vec![Target::Sbp, Target::Dbp],
            synth: CohortConfig::default(),
            demod: DemodConfig::default(),
            preprocess: PreprocessConfig::default(),
            features: FeatureConfig::default(),
            selection: SelectionConfig::default(),
            model: ModelConfig::default_for(ModelKind::Rf),
            cv: CvConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Copy with the global seed pushed into every seeded stage.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.selection.forest.seed = c.seed;
        c.model = c.model.with_seed(c.seed);
        c.cv.shuffle_seed = c.seed;
        c.synth.base.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifest_version != MANIFEST_VERSION {
            return Err(PipelineError::Config(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                self.manifest_version
            )));
        }
        if self.synth.base.n_block != self.demod.n_block {
            return Err(PipelineError::Config(format!(
                "synthetic impedance is held over {} samples but demodulation uses blocks of {}",
                self.synth.base.n_block, self.demod.n_block
            )));
        }
        if self.targets.is_empty() {
            return Err(PipelineError::Config("no targets requested".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// FIR taps designed once per sample rate.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    cfg: PreprocessConfig,
    sample_rate_hz: f64,
    bioz_taps: Vec<f64>,
    ecg_taps: Vec<f64>,
}

impl Preprocessor {
    pub fn new(cfg: &PreprocessConfig, sample_rate_hz: f64) -> Result<Self> {
        let bioz_taps = design_fir(&FirSpec {
            sample_rate_hz,
            ..cfg.bioz_fir
        })?;
        let ecg_taps = design_fir(&FirSpec {
            sample_rate_hz,
            ..cfg.ecg_fir
        })?;
        Ok(Preprocessor {
            cfg: *cfg,
            sample_rate_hz,
            bioz_taps,
            ecg_taps,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    fn channel(&self, s: &ProcessedSeries, spec: &FirSpec, taps: &[f64]) -> Result<ProcessedSeries> {
        let mut f = apply_fir(s, taps)?;
        f.push_step(FirSpec { sample_rate_hz: self.sample_rate_hz, ..*spec }.descriptor());
        Ok(apply_sg(&f, &self.cfg.sg, SgMode::Detrend)?)
    }

    /// Band-passes and detrends an impedance and an ECG series.
    pub fn filter_pair(&self, biz: &ProcessedSeries, ecg: &ProcessedSeries) -> Result<(ProcessedSeries, ProcessedSeries)> {
        for s in [biz, ecg] {
            if s.sample_rate_hz != self.sample_rate_hz {
                return Err(PipelineError::Config(format!(
                    "taps designed for {} Hz, series sampled at {} Hz",
                    self.sample_rate_hz, s.sample_rate_hz
                )));
            }
        }
        let biz = self.channel(biz, &self.cfg.bioz_fir, &self.bioz_taps)?;
        let ecg = self.channel(ecg, &self.cfg.ecg_fir, &self.ecg_taps)?;
        Ok((biz, ecg))
    }

    pub fn filter(&self, d: &Demodulated) -> Result<(ProcessedSeries, ProcessedSeries)> {
        self.filter_pair(&d.biz_abs, &d.ecg)
    }

    /// Demodulates, filters, segments and extracts features for one trial.
    pub fn trial_rows(
        &self,
        rec: &RawRecording,
        label: &TrialLabel,
        demod: &DemodConfig,
        features: &FeatureConfig,
    ) -> Result<Vec<FeatureRow>> {
        let d = demodulate(rec, demod)?;
        let (biz, ecg) = self.filter(&d)?;
        let labels = SegmentLabels {
            sbp_mmhg: label.sbp_mmhg,
            dbp_mmhg: label.dbp_mmhg,
            subject_id: label.subject_id.clone(),
            trial_id: label.trial_id.clone(),
        };
        let segments = segment(&biz, &ecg, &labels, &self.cfg.window)?;
        Ok(segments
            .par_iter()
            .map(|s| {
                let v = extract_all(s, features);
                FeatureRow {
                    subject_id: s.subject_id.clone(),
                    trial_id: s.trial_id.clone(),
                    segment_index: s.segment_index,
                    invalid_reason: (!v.is_valid()).then(|| v.invalid_reasons.join(";")),
                    values: v.values,
                    sbp_mmhg: s.sbp_mmhg,
                    dbp_mmhg: s.dbp_mmhg,
                }
            })
            .collect())
    }
}

/// Feature table for labelled trials, rows ordered as `labels`. Each
/// recording is fetched with `load` when its trial is processed and dropped
/// afterwards.
pub fn extract_trials<F>(labels: &[TrialLabel], load: F, cfg: &PipelineConfig) -> Result<FeatureTable>
where
    F: Fn(&TrialLabel) -> Result<RawRecording> + Sync,
{
    let cache: Mutex<Vec<Arc<Preprocessor>>> = Mutex::new(Vec::new());
    let preprocessor = |rate: f64| -> Result<Arc<Preprocessor>> {
        let mut c = cache.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(p) = c.iter().find(|p| p.sample_rate_hz() == rate) {
            return Ok(p.clone());
        }
        let p = Arc::new(Preprocessor::new(&cfg.preprocess, rate)?);
        c.push(p.clone());
        Ok(p)
    };
    let per_trial: Vec<Vec<FeatureRow>> = labels
        .par_iter()
        .map(|label| {
            let rec = load(label)?;
            let rate = rec.meta().sample_rate_hz / cfg.demod.n_block as f64;
            preprocessor(rate)?.trial_rows(&rec, label, &cfg.demod, &cfg.features)
        })
        .collect::<Result<_>>()?;
    let mut table = FeatureTable::canonical();
    for r in per_trial.into_iter().flatten() {
        table.push(r)?;
    }
    Ok(table)
}

/// Generates the configured synthetic cohort and extracts its feature
/// table. Recordings are produced and dropped one trial at a time.
pub fn synth_feature_table(cfg: &PipelineConfig) -> Result<FeatureTable> {
    cfg.validate()?;
    let c = &cfg.synth;
    let rate = c.base.sample_rate_hz / cfg.demod.n_block as f64;
    let pre = Preprocessor::new(&cfg.preprocess, rate)?;
    let jobs: Vec<(usize, usize)> = (0..c.n_subjects)
        .flat_map(|s| (0..c.trials_per_subject).map(move |t| (s, t)))
        .collect();
    let per_trial: Vec<Vec<FeatureRow>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let tc = c.trial(cfg.seed, s, t);
            let (rec, truth) = generate(&tc, c.duration_s)?;
            let label = TrialLabel {
                subject_id: tc.subject_id.clone(),
                trial_id: tc.trial_id.clone(),
                sbp_mmhg: truth.sbp_mmhg,
                dbp_mmhg: truth.dbp_mmhg,
            };
            pre.trial_rows(&rec, &label, &cfg.demod, &cfg.features)
        })
        .collect::<Result<_>>()?;
    let mut table = FeatureTable::canonical();
    for r in per_trial.into_iter().flatten() {
        table.push(r)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub target: Target,
    pub ranking: RankedFeatureSet,
    pub report: EvalReport,
}

/// Ranks features, projects onto the top k and cross-validates the model,
/// once per target.
pub fn analyse(table: &FeatureTable, cfg: &PipelineConfig) -> Result<Vec<TargetOutcome>> {
    cfg.targets
        .iter()
        .map(|&target| {
            let sel = &cfg.selection;
            let ranking =
                rank_features(table, target, sel.method, &sel.forest, sel.forest.seed)?.with_k(sel.k);
            let projected = select_top_k(table, &ranking, sel.k)?;
            let cv = CvConfig { target, ..cfg.cv };
            let report = cross_validate(&projected, &cfg.model, &cv)?;
            Ok(TargetOutcome {
                target,
                ranking,
                report,
            })
        })
        .collect()
}

/// Synthetic cohort end to end.
pub fn run_synthetic(cfg: &PipelineConfig) -> Result<(FeatureTable, Vec<TargetOutcome>)> {
    cfg.validate()?;
    let table = synth_feature_table(cfg)?;
    let outcomes = analyse(&table, cfg)?;
    Ok((table, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PipelineConfig { seed: 9, ..PipelineConfig::default() }.resolved();
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.cv.shuffle_seed, 9);
    }

    #[test]
    fn trial_configs_are_deterministic_and_in_range() {
        let c = CohortConfig::default();
        let a = c.trial(3, 2, 4);
        assert_eq!(a, c.trial(3, 2, 4));
        assert_ne!(a.heart_rate_bpm, c.trial(3, 2, 5).heart_rate_bpm);
        assert_eq!(a.delta_z_ohm, c.trial(3, 2, 5).delta_z_ohm);
        assert!((60.0..100.0).contains(&a.heart_rate_bpm) && (0.08..0.22).contains(&a.ptt_s));
        assert_eq!((a.subject_id.as_str(), a.trial_id.as_str()), ("S03", "T05"));
    }

    #[test]
    fn small_cohort_yields_valid_rows() {
        let cfg = PipelineConfig {
            synth: CohortConfig {
                n_subjects: 1,
                trials_per_subject: 2,
                ..CohortConfig::default()
            },
            ..PipelineConfig::default()
        };
        let t = synth_feature_table(&cfg).unwrap();
        assert_eq!(t.len(), 2 * 5);
        let valid = t.rows.iter().filter(|r| r.is_valid()).count();
        assert!(valid >= 9, "{:?}", t.rows.iter().map(|r| &r.invalid_reason).collect::<Vec<_>>());
    }
}
