//! Run directories, parameter sweeps, and aggregated reports.
//!
//! A run lives in `<root>/run-<config hash>/` and holds `config.toml`,
//! `split.json`, `steps.csv`, `epochs.csv`, `predictions.csv`,
//! `metrics.json`, a `checkpoint/` directory, and finally `manifest.json`.
//! Everything except the wall-clock field of the manifest is a pure
//! function of the inputs and the configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    decode_payload, encode_payload, read_manifest, sample_few_shot_split, window_snippets,
    FeatureDataset, SnippetSequence,
};
use crate::error::{Error, Result};
use crate::model::write_checkpoint;
use crate::train::{train, Ablation, EpochMetrics, ExperimentConfig, NegativePool, StepRecord};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "RELAMIX_OUT";
pub const METRICS_FILE: &str = "metrics.json";
pub const RUN_MANIFEST_FILE: &str = "manifest.json";

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// SHA-256 over every sample's id, label, domain, and payload bytes, in
/// dataset order.
pub fn dataset_digest(ds: &FeatureDataset) -> String {
    let mut h = Sha256::new();
    h.update(format!(
        "{} {} {}\n",
        ds.class_count(),
        ds.snippet_count(),
        ds.dim()
    ));
    for s in ds.sequences() {
        h.update(format!("{}\t{}\t{}\n", s.sample_id, s.label, s.domain));
        h.update(encode_payload(&s.features));
    }
    hex::encode(h.finalize())
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes through a temporary file and a rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDigest {
    pub role: String,
    pub samples: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub inputs: Vec<DatasetDigest>,
    pub outputs: Vec<OutputDigest>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config_hash: String,
    pub label: String,
    pub negatives_pool: NegativePool,
    pub shot_count: usize,
    pub seed: u64,
    pub epochs: usize,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub synthesized_count: usize,
    pub final_loss: f64,
}

/// The three datasets a run consumes.
#[derive(Debug, Clone, Copy)]
pub struct RunInputs<'a> {
    pub source: &'a FeatureDataset,
    pub target_pool: &'a FeatureDataset,
    pub test: &'a FeatureDataset,
}

impl RunInputs<'_> {
    fn digests(&self) -> Vec<DatasetDigest> {
        [
            ("source", self.source),
            ("target_pool", self.target_pool),
            ("target_test", self.test),
        ]
        .iter()
        .map(|(role, ds)| DatasetDigest {
            role: (*role).into(),
            samples: ds.len(),
            sha256: dataset_digest(ds),
        })
        .collect()
    }
}

pub fn run_dir(root: &Path, config: &ExperimentConfig) -> PathBuf {
    root.join(format!("run-{}", config.hash()))
}

pub fn steps_csv(steps: &[StepRecord]) -> String {
    let mut s = String::from("step,L_CDIA,L_CES,L_CET,L_CEA,L_aux,total\n");
    for r in steps {
        let c = &r.components;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step, c.cdia, c.ce_source, c.ce_target, c.ce_synth, c.aux, r.total
        );
    }
    s
}

fn epochs_csv(epochs: &[EpochMetrics]) -> String {
    let mut s =
        String::from("epoch,learning_rate,L_CDIA,L_CES,L_CET,L_CEA,L_aux,total,test_accuracy\n");
    for e in epochs {
        let c = &e.components;
        let acc = e.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{acc}",
            e.epoch, e.learning_rate, c.cdia, c.ce_source, c.ce_target, c.ce_synth, c.aux, e.total
        );
    }
    s
}

/// Samples the few-shot split, trains, evaluates, and writes the run
/// directory. Returns the metrics that were written.
pub fn execute_run(
    inputs: RunInputs<'_>,
    config: &ExperimentConfig,
    root: &Path,
) -> Result<(RunMetrics, PathBuf)> {
    let start = Instant::now();
    let split = sample_few_shot_split(inputs.target_pool, config.shot_count.max(1), config.seed)?;
    let few = split.apply(inputs.target_pool)?;
    let out = train(inputs.source, &few, config, Some(inputs.test))?;
    let eval = out.final_eval.as_ref().expect("test set was given");

    let dir = run_dir(root, config);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let hash = config.hash();
    let metrics = RunMetrics {
        config_hash: hash.clone(),
        label: config.ablation.label(),
        negatives_pool: config.negatives_pool,
        shot_count: config.shot_count,
        seed: config.seed,
        epochs: config.epochs,
        accuracy: eval.accuracy,
        per_class_accuracy: eval.per_class_accuracy.clone(),
        synthesized_count: out.synthesized_count,
        final_loss: out.epochs.last().map_or(0.0, |e| e.total),
    };
    let mut predictions = String::from("sample_id,label,prediction");
    for c in 0..inputs.test.class_count() {
        let _ = write!(predictions, ",logit_{c}");
    }
    predictions.push('\n');
    for (((id, l), p), logits) in eval
        .sample_ids
        .iter()
        .zip(&eval.labels)
        .zip(&eval.predictions)
        .zip(&eval.logits)
    {
        let _ = write!(predictions, "{id},{l},{p}");
        for v in logits {
            let _ = write!(predictions, ",{v}");
        }
        predictions.push('\n');
    }
    let files: [(&str, Vec<u8>); 6] = [
        ("config.toml", config.to_toml()?.into_bytes()),
        ("split.json", serde_json::to_vec_pretty(&split)?),
        ("steps.csv", steps_csv(&out.steps).into_bytes()),
        ("epochs.csv", epochs_csv(&out.epochs).into_bytes()),
        ("predictions.csv", predictions.into_bytes()),
        (METRICS_FILE, serde_json::to_vec_pretty(&metrics)?),
    ];
    let mut outputs = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        write_atomic(&dir.join(name), bytes)?;
        outputs.push(OutputDigest {
            path: (*name).into(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }
    let ckpt = dir.join("checkpoint");
    write_checkpoint(&out.params, &ckpt)?;
    outputs.push(OutputDigest {
        path: "checkpoint/checkpoint.json".into(),
        sha256: file_digest(&ckpt.join("checkpoint.json"))?,
    });
    let manifest = RunManifest {
        config_hash: hash,
        artifact_version: env!("CARGO_PKG_VERSION").into(),
        inputs: inputs.digests(),
        outputs,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_atomic(
        &dir.join(RUN_MANIFEST_FILE),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    log::info!(
        "run {} ({}, shot {}, seed {}): {:.2}%",
        metrics.config_hash,
        metrics.label,
        metrics.shot_count,
        metrics.seed,
        metrics.accuracy
    );
    Ok((metrics, dir))
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub shot_count: usize,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Groups runs by (label, shot count), ordered by label then shot.
pub fn summarize(runs: &[RunMetrics]) -> Vec<ReportRow> {
    let mut sorted: Vec<&RunMetrics> = runs.iter().collect();
    let key = |m: &RunMetrics| {
        let negatives = match m.negatives_pool {
            NegativePool::Mixed => "",
            NegativePool::SourceOnly => "/source_negatives",
        };
        format!("{}{negatives}", m.label)
    };
    sorted.sort_by_key(|a| (key(a), a.shot_count, a.seed));
    let mut rows: Vec<ReportRow> = Vec::new();
    for m in sorted {
        let label = key(m);
        match rows.last_mut() {
            Some(r) if r.label == label && r.shot_count == m.shot_count => {
                r.seeds.push(m.seed);
                r.accuracies.push(m.accuracy);
            }
            _ => rows.push(ReportRow {
                label,
                shot_count: m.shot_count,
                seeds: vec![m.seed],
                accuracies: vec![m.accuracy],
                mean: 0.0,
                std: 0.0,
            }),
        }
    }
    for r in &mut rows {
        (r.mean, r.std) = mean_std(&r.accuracies);
    }
    rows
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("label,shot,runs,mean,std,accuracies\n");
    for r in rows {
        let accs: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.2}")).collect();
        let _ = writeln!(
            s,
            "{},{},{},{:.2},{:.2},{}",
            r.label,
            r.shot_count,
            r.accuracies.len(),
            r.mean,
            r.std,
            accs.join(";")
        );
    }
    s
}

/// Accuracy-versus-shot line chart, one polyline per label.
pub fn report_svg(rows: &[ReportRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f",
    ];
    let mut shots: Vec<usize> = rows.iter().map(|r| r.shot_count).collect();
    shots.sort_unstable();
    shots.dedup();
    let x_of = |shot: usize| {
        let i = shots.iter().position(|&s| s == shot).unwrap_or(0) as f64;
        let n = (shots.len().max(2) - 1) as f64;
        M + i * (W - 2.0 * M) / n
    };
    let y_of = |acc: f64| H - M - acc / 100.0 * (H - 2.0 * M);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lx}\" text-anchor=\"middle\">shots per class</text>\n\
         <text x=\"14\" y=\"{cy}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {cy})\">accuracy (%)</text>\n",
        b = H - M,
        r = W - M,
        cx = W / 2.0,
        lx = H - 12.0,
        cy = H / 2.0,
    );
    for tick in [0, 25, 50, 75, 100] {
        let y = y_of(f64::from(tick));
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick}</text>",
            M - 6.0,
            y + 4.0
        );
    }
    for &shot in &shots {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{shot}</text>",
            x_of(shot),
            H - M + 16.0
        );
    }
    let mut labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    labels.dedup();
    for (i, label) in labels.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = rows
            .iter()
            .filter(|r| r.label == *label)
            .map(|r| format!("{:.1},{:.1}", x_of(r.shot_count), y_of(r.mean)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        );
        for p in &points {
            let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(
                s,
                "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>"
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>",
            W - M - 120.0,
            M + 16.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.csv`, `<stem>.json` and `<stem>.svg` into `dir`.
pub fn write_report(rows: &[ReportRow], dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(
        &dir.join(format!("{stem}.csv")),
        report_csv(rows).as_bytes(),
    )?;
    write_atomic(
        &dir.join(format!("{stem}.json")),
        &serde_json::to_vec_pretty(rows)?,
    )?;
    write_atomic(
        &dir.join(format!("{stem}.svg")),
        report_svg(rows).as_bytes(),
    )
}

/// Runs every (shot, seed) cell with `base` otherwise unchanged, then
/// writes `sweep.{csv,json,svg}` under `root`. Cells run concurrently when
/// `parallel` is set; each has its own run directory.
pub fn sweep(
    inputs: RunInputs<'_>,
    base: &ExperimentConfig,
    shots: &[usize],
    seeds: &[u64],
    root: &Path,
    parallel: bool,
) -> Result<Vec<ReportRow>> {
    if shots.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one shot and one seed".into(),
        ));
    }
    let cells: Vec<ExperimentConfig> = shots
        .iter()
        .flat_map(|&shot| {
            seeds.iter().map(move |&seed| ExperimentConfig {
                shot_count: shot,
                seed,
                ..base.clone()
            })
        })
        .collect();
    let run = |cfg: &ExperimentConfig| execute_run(inputs, cfg, root).map(|(m, _)| m);
    let metrics: Vec<RunMetrics> = if parallel {
        cells.par_iter().map(run).collect::<Result<_>>()?
    } else {
        cells.iter().map(run).collect::<Result<_>>()?
    };
    let rows = summarize(&metrics);
    write_report(&rows, root, "sweep")?;
    Ok(rows)
}

/// Reads `metrics.json` from every run directory directly under `root`.
pub fn collect_runs(root: &Path) -> Result<Vec<RunMetrics>> {
    let mut runs = Vec::new();
    if root.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for dir in entries {
            let path = dir.join(METRICS_FILE);
            if path.is_file() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                runs.push(serde_json::from_str(&text)?);
            }
        }
    }
    if runs.is_empty() {
        return Err(Error::NoRuns(root.to_path_buf()));
    }
    Ok(runs)
}

/// Aggregates every run under `root` and writes `report.{csv,json,svg}`.
pub fn report(root: &Path) -> Result<Vec<ReportRow>> {
    let rows = summarize(&collect_runs(root)?);
    write_report(&rows, root, "report")?;
    Ok(rows)
}

/// Reads a frame-level dataset (same directory layout, but each payload is
/// an `(N_frames, d)` matrix) and windows every stream into snippets.
pub fn import_frames(
    dir: &Path,
    window: usize,
    stride: usize,
    pad: usize,
) -> Result<FeatureDataset> {
    let manifest = read_manifest(dir)?;
    let mut sequences = Vec::with_capacity(manifest.samples.len());
    let mut snippet_count = None;
    for entry in &manifest.samples {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let frames = decode_payload(&bytes, &path)?;
        if frames.cols() != manifest.dim {
            return Err(Error::format(
                &path,
                format!(
                    "frames have {} dims, manifest says {}",
                    frames.cols(),
                    manifest.dim
                ),
            ));
        }
        let snippets = window_snippets(&frames, window, stride, pad)?;
        match snippet_count {
            None => snippet_count = Some(snippets.rows()),
            Some(t) if t != snippets.rows() => {
                return Err(Error::format(
                    &path,
                    format!(
                        "{} frames give {} snippets, earlier samples gave {t}",
                        frames.rows(),
                        snippets.rows()
                    ),
                ))
            }
            _ => {}
        }
        sequences.push(SnippetSequence::new(
            entry.sample_id.clone(),
            entry.label,
            entry.domain,
            snippets,
        )?);
    }
    let t = snippet_count
        .ok_or_else(|| Error::InvalidArgument(format!("{} lists no samples", dir.display())))?;
    FeatureDataset::new(sequences, manifest.class_count, t, manifest.dim)
}

/// Parses `"1,5,10"` style lists.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse '{s}' in list '{text}'")))
        })
        .collect()
}

/// Applies comma-separated ablation names on top of `config`.
pub fn apply_ablations(config: &mut ExperimentConfig, list: &str) -> Result<()> {
    let parsed = Ablation::parse_list(list)?;
    let a = &mut config.ablation;
    a.disable_rd_mhsa |= parsed.disable_rd_mhsa;
    a.disable_scale_mhsa |= parsed.disable_scale_mhsa;
    a.disable_rd |= parsed.disable_rd;
    a.disable_sdfm |= parsed.disable_sdfm;
    a.disable_cdia |= parsed.disable_cdia;
    a.source_only |= parsed.source_only;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        write_dataset, write_payload, Domain, FeatureMatrix, Manifest, ManifestEntry, MANIFEST_FILE,
    };
    use crate::synthetic::{generate_pair, DomainShiftSpec};

    fn tiny() -> (FeatureDataset, FeatureDataset, FeatureDataset) {
        let shift = DomainShiftSpec {
            seed: 2,
            ..Default::default()
        };
        generate_pair(2, 6, 8, 3, 4, &shift).unwrap()
    }

    fn quick(seed: u64, shot: usize) -> ExperimentConfig {
        ExperimentConfig {
            seed,
            shot_count: shot,
            epochs: 1,
            batch_size: 4,
            heads: 2,
            per_class_synth: 4,
            negatives_per_anchor: 2,
            steps_per_epoch: Some(2),
            ..Default::default()
        }
    }

    #[test]
    fn run_directory_is_reproducible() {
        let (s, p, t) = tiny();
        let inputs = RunInputs {
            source: &s,
            target_pool: &p,
            test: &t,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (m1, d1) = execute_run(inputs, &quick(3, 1), a.path()).unwrap();
        let (m2, d2) = execute_run(inputs, &quick(3, 1), b.path()).unwrap();
        assert_eq!(m1, m2);
        for f in [
            "config.toml",
            "split.json",
            "steps.csv",
            "epochs.csv",
            "predictions.csv",
            METRICS_FILE,
        ] {
            assert_eq!(
                fs::read(d1.join(f)).unwrap(),
                fs::read(d2.join(f)).unwrap(),
                "{f}"
            );
        }
        let read = |d: &Path| -> RunManifest {
            serde_json::from_slice(&fs::read(d.join(RUN_MANIFEST_FILE)).unwrap()).unwrap()
        };
        let (r1, r2) = (read(&d1), read(&d2));
        assert_eq!((r1.inputs, r1.outputs), (r2.inputs, r2.outputs));
        assert!(d1.ends_with(format!("run-{}", quick(3, 1).hash())));
        let steps = fs::read_to_string(d1.join("steps.csv")).unwrap();
        assert!(steps.starts_with("step,L_CDIA,L_CES,L_CET,L_CEA,L_aux,total\n"));
        assert_eq!(steps.lines().count(), 3);
    }

    #[test]
    fn sweep_grid_counts() {
        let (s, p, t) = tiny();
        let inputs = RunInputs {
            source: &s,
            target_pool: &p,
            test: &t,
        };
        let root = tempfile::tempdir().unwrap();
        let rows = sweep(
            inputs,
            &quick(0, 1),
            &[1, 2, 3, 4],
            &[0, 1, 2],
            root.path(),
            false,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.accuracies.len() == 3));
        assert_eq!(collect_runs(root.path()).unwrap().len(), 12);
        for ext in ["csv", "json", "svg"] {
            assert!(root.path().join(format!("sweep.{ext}")).is_file());
        }
        let again = report(root.path()).unwrap();
        assert_eq!(again, rows);
        let csv = fs::read_to_string(root.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn empty_root_has_no_runs() {
        let root = tempfile::tempdir().unwrap();
        let err = report(root.path()).unwrap_err();
        assert!(err.to_string().contains("no runs found"), "{err}");
        assert!(report(&root.path().join("missing")).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let (s, p, _) = tiny();
        assert_eq!(dataset_digest(&s), dataset_digest(&s.clone()));
        assert_ne!(dataset_digest(&s), dataset_digest(&p));
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&s, dir.path()).unwrap();
        let back = crate::data::read_dataset(dir.path()).unwrap();
        assert_eq!(dataset_digest(&back), dataset_digest(&s));
    }

    #[test]
    fn statistics_helpers() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        assert_eq!(parse_list::<usize>("1, 5,10").unwrap(), vec![1, 5, 10]);
        assert!(parse_list::<usize>("1,x").is_err());
        let mut c = ExperimentConfig::default();
        apply_ablations(&mut c, "sdfm").unwrap();
        apply_ablations(&mut c, "cdia").unwrap();
        assert_eq!(c.ablation.label(), "no_sdfm+cdia");
    }

    #[test]
    fn svg_has_one_line_per_label() {
        let mk = |label: &str, shot, acc| ReportRow {
            label: label.into(),
            shot_count: shot,
            seeds: vec![0],
            accuracies: vec![acc],
            mean: acc,
            std: 0.0,
        };
        let svg = report_svg(&[mk("a", 1, 40.0), mk("a", 5, 60.0), mk("b", 1, 30.0)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn frames_are_windowed_on_import() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = Vec::new();
        for i in 0..2 {
            let rows: Vec<Vec<f32>> = (0..32).map(|f| vec![f as f32, i as f32]).collect();
            let file = format!("{i:06}.rmfx");
            write_payload(
                &FeatureMatrix::from_rows(&rows).unwrap(),
                &dir.path().join(&file),
            )
            .unwrap();
            samples.push(ManifestEntry {
                sample_id: format!("v{i}"),
                label: i,
                domain: Domain::Target,
                file,
            });
        }
        let manifest = Manifest {
            version: 1,
            class_count: 2,
            snippet_count: 0,
            dim: 2,
            samples,
        };
        fs::write(
            dir.path().join(MANIFEST_FILE),
            serde_json::to_string(&manifest).unwrap(),
        )
        .unwrap();
        let ds = import_frames(dir.path(), 16, 8, 8).unwrap();
        assert_eq!((ds.len(), ds.snippet_count(), ds.dim()), (2, 5, 2));
        // first window covers 8 zero-padded frames and frames 0..8
        let first = ds.get("v0").unwrap().features.row(0)[0];
        assert!((first - (0..8).sum::<i32>() as f32 / 16.0).abs() < 1e-6);
    }
}
