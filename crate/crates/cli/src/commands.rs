use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use biozbp::dataset::{
    load_feature_table, load_labels, load_raw, load_series, save_feature_table, save_labels, save_raw, save_series,
    FeatureTable, Target, TrialLabel,
};
use biozbp::demod::demodulate;
use biozbp::eval::{cross_validate, export_plots, render_report, CvConfig, EvalReport};
use biozbp::featsel::{rank_features, save_sweep_csv, select_top_k, sweep_top_k, RankedFeatureSet, SelectionMethod};
use biozbp::pipeline::{analyse, extract_trials, synth_feature_table, PipelineConfig, PipelineError, Preprocessor};
use biozbp::regress::{self, ModelConfig, ModelKind};
use biozbp::synth::generate;

use crate::manifest::{self, ConfigError};
use crate::{Cli, Command, FormatArg};

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn target_tag(t: Target) -> &'static str {
    match t {
        Target::Sbp => "sbp",
        Target::Dbp => "dbp",
    }
}

fn raw_path(dir: &Path, subject: &str, trial: &str, format: FormatArg) -> PathBuf {
    dir.join(format!("{subject}_{trial}.{}", format.ext()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn apply_model(cfg: &mut PipelineConfig, kind: Option<ModelKind>) {
    if let Some(kind) = kind {
        if cfg.model.kind() != kind {
            cfg.model = ModelConfig::default_for(kind);
        }
    }
}

fn apply_selection(cfg: &mut PipelineConfig, method: Option<SelectionMethod>, k: Option<usize>) {
    if let Some(m) = method {
        if m != cfg.selection.method {
            cfg.selection.method = m;
            cfg.selection.k = m.default_k();
        }
    }
    if let Some(k) = k {
        cfg.selection.k = k;
    }
}

fn load_table(path: &Path) -> Result<FeatureTable> {
    let t = load_feature_table(path).with_context(|| format!("loading feature table {}", path.display()))?;
    log::info!("{} rows ({} valid) from {}", t.len(), t.valid_only().len(), path.display());
    Ok(t)
}

fn rank(table: &FeatureTable, target: Target, cfg: &PipelineConfig) -> Result<RankedFeatureSet> {
    let sel = &cfg.selection;
    Ok(rank_features(table, target, sel.method, &sel.forest, sel.forest.seed)?.with_k(sel.k))
}

fn save_report(dir: &Path, report: &EvalReport) -> Result<()> {
    let tag = target_tag(report.target);
    write_json(&dir.join(format!("report_{tag}.json")), report)?;
    export_plots(report, dir, tag)?;
    Ok(())
}

fn write_text_report(dir: &Path, reports: &[EvalReport]) -> Result<String> {
    let text = render_report(reports);
    fs::write(dir.join("report.txt"), &text).context("writing report.txt")?;
    Ok(text)
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = manifest::base_config(g)?;
    match &cli.command {
        Command::Synth {
            out,
            subjects,
            trials,
            duration,
        } => {
            if let Some(n) = subjects {
                cfg.synth.n_subjects = *n;
            }
            if let Some(n) = trials {
                cfg.synth.trials_per_subject = *n;
            }
            if let Some(d) = duration {
                cfg.synth.duration_s = *d;
            }
            let cfg = cfg.resolved();
            out_dir(out)?;
            let mut labels = Vec::new();
            for s in 0..cfg.synth.n_subjects {
                for t in 0..cfg.synth.trials_per_subject {
                    let tc = cfg.synth.trial(cfg.seed, s, t);
                    let (rec, truth) = generate(&tc, cfg.synth.duration_s)?;
                    save_raw(&rec, raw_path(out, &tc.subject_id, &tc.trial_id, g.format), g.format.raw())?;
                    write_json(&out.join(format!("{}_{}.truth.json", tc.subject_id, tc.trial_id)), &truth)?;
                    labels.push(TrialLabel {
                        subject_id: tc.subject_id.clone(),
                        trial_id: tc.trial_id.clone(),
                        sbp_mmhg: truth.sbp_mmhg,
                        dbp_mmhg: truth.dbp_mmhg,
                    });
                }
            }
            save_labels(&labels, out.join("labels.csv"))?;
            log::info!("wrote {} synthetic trials to {}", labels.len(), out.display());
            manifest::write(out, "synth", &[], &cfg)
        }
        Command::Demod { input, out } => {
            let cfg = cfg.resolved();
            let rec = load_raw(input, g.format.raw())?;
            let d = demodulate(&rec, &cfg.demod)?;
            out_dir(out)?;
            for (name, s) in [
                ("biz_abs", &d.biz_abs),
                ("biz_real", &d.biz_real),
                ("biz_imag", &d.biz_imag),
                ("ecg", &d.ecg),
            ] {
                save_series(s, out.join(format!("{name}.csv")))?;
            }
            if d.dropped_samples > 0 {
                log::warn!("dropped {} trailing raw samples (partial block)", d.dropped_samples);
            }
            manifest::write(out, "demod", &[input], &cfg)
        }
        Command::Preprocess { input, out } => {
            let cfg = cfg.resolved();
            let biz = load_series(input.join("biz_abs.csv"))?;
            let ecg = load_series(input.join("ecg.csv"))?;
            let pre = Preprocessor::new(&cfg.preprocess, biz.sample_rate_hz)?;
            let (biz, ecg) = pre.filter_pair(&biz, &ecg)?;
            out_dir(out)?;
            save_series(&biz, out.join("biz_abs.csv"))?;
            save_series(&ecg, out.join("ecg.csv"))?;
            manifest::write(out, "preprocess", &[input], &cfg)
        }
        Command::Extract { raw_dir, labels, out } => {
            let cfg = cfg.resolved();
            let trial_labels = load_labels(labels)?;
            let table = extract_trials(
                &trial_labels,
                |l| {
                    let path = raw_path(raw_dir, &l.subject_id, &l.trial_id, g.format);
                    load_raw(&path, g.format.raw()).map_err(PipelineError::from)
                },
                &cfg,
            )?;
            out_dir(out)?;
            save_feature_table(&table, out.join("features.csv"))?;
            log::info!("{} segments, {} valid", table.len(), table.valid_only().len());
            manifest::write(out, "extract", &[raw_dir, labels], &cfg)
        }
        Command::Select {
            features,
            method,
            k,
            sweep,
            out,
        } => {
            apply_selection(&mut cfg, *method, *k);
            let cfg = cfg.resolved();
            let table = load_table(features)?;
            out_dir(out)?;
            let mut curves = Vec::new();
            for &target in &cfg.targets {
                let ranking = rank(&table, target, &cfg)?;
                let tag = target_tag(target);
                ranking.save_csv(out.join(format!("ranking_{tag}.csv")))?;
                write_json(&out.join(format!("ranking_{tag}.json")), &ranking)?;
                let projected = select_top_k(&table, &ranking, cfg.selection.k)?;
                save_feature_table(&projected, out.join(format!("selected_{tag}.csv")))?;
                if let Some(grid) = sweep {
                    let cv = CvConfig { target, ..cfg.cv };
                    curves.push((target, sweep_top_k(&table, &ranking, grid, &cfg.selection.forest, &cv)?));
                }
            }
            if !curves.is_empty() {
                save_sweep_csv(&curves, out.join("sweep.csv"))?;
            }
            manifest::write(out, "select", &[features], &cfg)
        }
        Command::Train { features, model, out } => {
            apply_model(&mut cfg, *model);
            let cfg = cfg.resolved();
            let table = load_table(features)?.valid_only();
            out_dir(out)?;
            for &target in &cfg.targets {
                let m = regress::train(&cfg.model, &table.matrix(), &table.labels(target), table.feature_names())?;
                m.save(out.join(format!("model_{}.json", target_tag(target))))?;
            }
            manifest::write(out, "train", &[features], &cfg)
        }
        Command::Evaluate {
            features,
            model,
            k,
            method,
            out,
        } => {
            apply_model(&mut cfg, *model);
            apply_selection(&mut cfg, *method, *k);
            let cfg = cfg.resolved();
            let table = load_table(features)?;
            out_dir(out)?;
            let mut reports = Vec::new();
            for &target in &cfg.targets {
                let projected = if k.is_some() || method.is_some() {
                    let ranking = rank(&table, target, &cfg)?;
                    select_top_k(&table, &ranking, cfg.selection.k)?
                } else {
                    table.clone()
                };
                let report = cross_validate(&projected, &cfg.model, &CvConfig { target, ..cfg.cv })?;
                save_report(out, &report)?;
                reports.push(report);
            }
            print!("{}", write_text_report(out, &reports)?);
            manifest::write(out, "evaluate", &[features], &cfg)
        }
        Command::Report { input, out } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("listing {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("report_") && n.ends_with(".json"))
                })
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(ConfigError(format!("no report_*.json files in {}", input.display())).into());
            }
            let mut reports = paths
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<EvalReport>(&text).with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            reports.sort_by_key(|r| (r.target == Target::Dbp, r.model.to_string()));
            let text = render_report(&reports);
            match out {
                Some(path) => fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Pipeline { raw_dir, labels, out } => {
            let cfg = cfg.resolved();
            let table = match (raw_dir, labels) {
                (Some(dir), labels) => {
                    let labels_path = labels.clone().unwrap_or_else(|| dir.join("labels.csv"));
                    let trial_labels = load_labels(&labels_path)?;
                    extract_trials(
                        &trial_labels,
                        |l| {
                            let path = raw_path(dir, &l.subject_id, &l.trial_id, g.format);
                            load_raw(&path, g.format.raw()).map_err(PipelineError::from)
                        },
                        &cfg,
                    )?
                }
                (None, _) => synth_feature_table(&cfg)?,
            };
            out_dir(out)?;
            save_feature_table(&table, out.join("features.csv"))?;
            let outcomes = analyse(&table, &cfg)?;
            let mut reports = Vec::new();
            for o in outcomes {
                o.ranking.save_csv(out.join(format!("ranking_{}.csv", target_tag(o.target))))?;
                save_report(out, &o.report)?;
                reports.push(o.report);
            }
            print!("{}", write_text_report(out, &reports)?);
            let inputs: Vec<&Path> = raw_dir.iter().chain(labels.iter()).map(|p| p.as_path()).collect();
            manifest::write(out, "pipeline", &inputs, &cfg)
        }
    }
}
