//! End-to-end orchestration driven by a single [`RunConfig`]: dataset
//! generation, oracle solves, surrogate training, prediction, evaluation,
//! and parameter sweeps. All stages are deterministic in the config seed
//! and write their outputs atomically under the config's output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::elasticity::solver::{solve_local_strain, Scheme, SolverOptions};
use crate::elasticity::{
    assemble_stiffness_field, hooke, strain_components, strain_dim, von_mises, MaterialSpec,
    ReferenceRule, StrainField, VoigtField,
};
use crate::error::{Error, Result};
use crate::io::{self, DatasetManifest, ManifestEntry, Split};
use crate::metrics::{evaluate as metrics_evaluate, EvalOptions, EvalReport};
use crate::microstructure::{
    gen_dual_phase, gen_porous, gen_two_phase, gen_voronoi_polycrystal, Microstructure,
};
use crate::model::{fit, predict, predict_rank1, TrainConfig, XlraModel};

/// Which generator produces the dataset's microstructures.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    TwoPhase { hard_vf: f64, sigma: f64 },
    Porous { porosity: f64, sigma: f64 },
    VoronoiPolycrystal { n_grains: usize, elongation: Vec<f64> },
    DualPhase { n_grains: usize, hard_vf: f64 },
}

impl GeneratorSpec {
    pub fn generate(&self, seed: u64, dims: &[usize]) -> Result<Microstructure> {
        match self {
            GeneratorSpec::TwoPhase { hard_vf, sigma } => {
                gen_two_phase(seed, dims, *hard_vf, *sigma)
            }
            GeneratorSpec::Porous { porosity, sigma } => gen_porous(seed, dims, *porosity, *sigma),
            GeneratorSpec::VoronoiPolycrystal {
                n_grains,
                elongation,
            } => gen_voronoi_polycrystal(seed, dims, *n_grains, elongation),
            GeneratorSpec::DualPhase { n_grains, hard_vf } => {
                gen_dual_phase(seed, dims, *n_grains, *hard_vf)
            }
        }
    }
}

/// The one configuration document every command consumes. Serialized as
/// JSON; the effective value is echoed into the output directory for
/// provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub n_instances: usize,
    /// Fraction of instances labeled `train`; the first
    /// `round(fraction * n)` entries in seed order.
    pub train_fraction: f64,
    pub generator: GeneratorSpec,
    pub material: MaterialSpec,
    pub mean_strain: Vec<f64>,
    pub solver: SolverOptions,
    pub basis: BasisSpec,
    /// Strain component label (e.g. "e11") or "von_mises".
    pub target: String,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dims: vec![31, 31],
            n_instances: 200,
            train_fraction: 0.05,
            generator: GeneratorSpec::TwoPhase {
                hard_vf: 0.2,
                sigma: 2.0,
            },
            material: MaterialSpec::two_phase(10.0, 0.3),
            mean_strain: vec![1e-4, 0.0, 0.0],
            solver: SolverOptions {
                // converges for any positive-definite reference; the basic
                // scheme requires the reference to dominate half the
                // stiffest phase, which a 20% hard fraction violates
                scheme: Scheme::Accelerated,
                ..SolverOptions::default()
            },
            basis: BasisSpec::Primitive { n_phases: 2 },
            target: "e11".into(),
            train: TrainConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let ndim = self.dims.len();
        if !(2..=3).contains(&ndim) {
            return Err(Error::invalid("dims must be 2D or 3D"));
        }
        if self.mean_strain.len() != strain_dim(ndim) {
            return Err(Error::invalid(format!(
                "mean strain needs {} components for {ndim}D",
                strain_dim(ndim)
            )));
        }
        if self.mean_strain.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("applied mean strain is zero"));
        }
        if self.n_instances < 2 {
            return Err(Error::invalid("need at least 2 instances"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction must lie in (0, 1)"));
        }
        let known = self.target == "von_mises"
            || strain_components(ndim).iter().any(|l| *l == self.target);
        if !known {
            return Err(Error::invalid(format!(
                "unknown target '{}' (expected a strain component or 'von_mises')",
                self.target
            )));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join("manifest.json")
    }

    pub fn model_path(&self) -> PathBuf {
        self.output_dir.join("model.xlm")
    }

    fn instance_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    fn n_train(&self) -> usize {
        ((self.train_fraction * self.n_instances as f64).round() as usize)
            .clamp(1, self.n_instances - 1)
    }

    /// Normalization applied to targets before the log transform: the
    /// applied-mean-strain norm for strain targets; von Mises magnitudes are
    /// normalized during training against the same strain scale times the
    /// material's stiffest modulus surrogate (the targets' own max).
    fn target_scale(&self, train_targets: &[Vec<f64>]) -> f64 {
        if self.target == "von_mises" {
            let max = train_targets
                .iter()
                .flat_map(|t| t.iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if max > 0.0 {
                max
            } else {
                1.0
            }
        } else {
            self.mean_strain.iter().map(|v| v * v).sum::<f64>().sqrt()
        }
    }
}

/// Writes the effective config next to the outputs it produced.
fn echo_config(config: &RunConfig) -> Result<()> {
    io::write_json(&config.output_dir.join("config.json"), config)
}

/// Generates the dataset: one microstructure file per instance (derived
/// seeds `seed + i`), plus the manifest with train/test split labels.
pub fn generate(config: &RunConfig) -> Result<DatasetManifest> {
    config.validate()?;
    echo_config(config)?;
    let n_train = config.n_train();
    let instances: Vec<(usize, Microstructure)> = (0..config.n_instances)
        .into_par_iter()
        .map(|i| {
            let ms = config
                .generator
                .generate(config.instance_seed(i), &config.dims)?;
            Ok((i, ms))
        })
        .collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(config.n_instances);
    for (i, ms) in &instances {
        let rel = format!("ms/{i:04}.xms");
        io::write_microstructure(&config.output_dir.join(&rel), ms)?;
        entries.push(ManifestEntry {
            microstructure: rel,
            field: None,
            split: if *i < n_train { Split::Train } else { Split::Test },
            seed: config.instance_seed(*i),
            iterations: None,
            residual: None,
            error: None,
        });
    }
    let manifest = DatasetManifest {
        material: config.material.clone(),
        mean_strain: config.mean_strain.clone(),
        dims: config.dims.clone(),
        entries,
    };
    io::write_manifest(&config.manifest_path(), &manifest)?;
    Ok(manifest)
}

/// Runs the oracle on every manifest entry, writing one field file per
/// instance and recording iteration counts and residuals. A non-converging
/// instance is marked failed in the manifest without aborting the batch.
pub fn solve(config: &RunConfig) -> Result<DatasetManifest> {
    let manifest_path = config.manifest_path();
    let mut manifest = io::read_manifest(&manifest_path)?;
    let results: Vec<(Option<(String, StrainField)>, ManifestEntry)> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let mut entry = entry.clone();
            let run = || -> Result<(String, StrainField, usize, f64)> {
                let ms =
                    io::read_microstructure(&io::resolve(&manifest_path, &entry.microstructure))?;
                let c_field =
                    assemble_stiffness_field(&ms, &manifest.material, ReferenceRule::Mean)?;
                let (strain, report) =
                    solve_local_strain(&c_field, &manifest.mean_strain, &config.solver)?;
                Ok((format!("fields/{i:04}.xfd"), strain, report.iterations, report.residual))
            };
            match run() {
                Ok((rel, strain, iterations, residual)) => {
                    entry.field = Some(rel.clone());
                    entry.iterations = Some(iterations);
                    entry.residual = Some(residual);
                    entry.error = None;
                    (Some((rel, strain)), entry)
                }
                Err(e) => {
                    entry.field = None;
                    entry.error = Some(e.to_string());
                    (None, entry)
                }
            }
        })
        .collect();
    let mut entries = Vec::with_capacity(results.len());
    for (field, entry) in results {
        if let Some((rel, strain)) = field {
            io::write_field(&config.output_dir.join(rel), &strain)?;
        }
        entries.push(entry);
    }
    manifest.entries = entries;
    io::write_manifest(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// Extracts the configured target field from a solved strain field.
fn target_values(
    config: &RunConfig,
    manifest: &DatasetManifest,
    ms: &Microstructure,
    strain: &StrainField,
) -> Result<Vec<f64>> {
    if config.target == "von_mises" {
        let c_field = assemble_stiffness_field(ms, &manifest.material, ReferenceRule::Mean)?;
        let stress = hooke(&c_field, strain)?;
        Ok(von_mises(&stress))
    } else {
        strain
            .component_by_label(&config.target)
            .ok_or_else(|| Error::invalid(format!("field has no component '{}'", config.target)))
    }
}

fn load_split(
    config: &RunConfig,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<(Vec<Microstructure>, Vec<Vec<f64>>)> {
    let manifest_path = config.manifest_path();
    let mut instances = Vec::new();
    let mut targets = Vec::new();
    for entry in manifest.split_entries(split) {
        if let Some(err) = &entry.error {
            return Err(Error::Numerical(format!(
                "entry {} failed during solve: {err}",
                entry.microstructure
            )));
        }
        let field_rel = entry.field.as_ref().ok_or_else(|| {
            Error::invalid(format!("entry {} has no solved field", entry.microstructure))
        })?;
        let ms = io::read_microstructure(&io::resolve(&manifest_path, &entry.microstructure))?;
        let strain = io::read_field(&io::resolve(&manifest_path, field_rel))?;
        targets.push(target_values(config, manifest, &ms, &strain)?);
        instances.push(ms);
    }
    Ok((instances, targets))
}

fn check_no_leakage(manifest: &DatasetManifest) -> Result<()> {
    let train: std::collections::HashSet<&str> = manifest
        .split_entries(Split::Train)
        .iter()
        .map(|e| e.microstructure.as_str())
        .collect();
    for entry in manifest.split_entries(Split::Test) {
        if train.contains(entry.microstructure.as_str()) {
            return Err(Error::invalid(format!(
                "split leakage: {} appears in both train and test",
                entry.microstructure
            )));
        }
    }
    Ok(())
}

/// Trains the surrogate on the manifest's train split and writes the model
/// file.
pub fn train(config: &RunConfig) -> Result<XlraModel> {
    config.validate()?;
    let manifest = io::read_manifest(&config.manifest_path())?;
    check_no_leakage(&manifest)?;
    let (instances, targets) = load_split(config, &manifest, Split::Train)?;
    if instances.is_empty() {
        return Err(Error::invalid("train split is empty"));
    }
    let scale = config.target_scale(&targets);
    let model = fit(
        &instances,
        &targets,
        &config.basis,
        &config.target,
        scale,
        &config.train,
    )?;
    io::write_model(&config.model_path(), &model)?;
    Ok(model)
}

/// Predicts the model's target for each microstructure file and writes one
/// single-component field file per input into `out_dir`.
pub fn predict_files(model_path: &Path, inputs: &[PathBuf], out_dir: &Path) -> Result<()> {
    let model = io::read_model(model_path)?;
    for input in inputs {
        let ms = io::read_microstructure(input)?;
        let values = predict(&model, &ms)?;
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let field = VoigtField {
            grid: ms.grid.clone(),
            components: vec![model.target.clone()],
            mean: vec![mean],
            data: values,
        };
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "prediction".into());
        io::write_field(&out_dir.join(format!("{stem}.pred.xfd")), &field)?;
    }
    Ok(())
}

/// Evaluation artifacts: the report plus the optional rank-1-only baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Pooled R² of the rank-1-only model, for rank-ablation comparisons.
    pub r2_rank1: f64,
    pub n_ranks: usize,
    pub config: RunConfig,
}

/// Evaluates the trained model on the manifest's test split; writes
/// `report.json`, `histogram.csv`, and `parity.csv` into the output
/// directory.
pub fn evaluate(config: &RunConfig) -> Result<Evaluation> {
    config.validate()?;
    let manifest = io::read_manifest(&config.manifest_path())?;
    check_no_leakage(&manifest)?;
    let model = io::read_model(&config.model_path())?;
    if model.dims != config.dims {
        return Err(Error::GridMismatch(format!(
            "model dims {:?} vs dataset dims {:?}",
            model.dims, config.dims
        )));
    }
    let (instances, oracle) = load_split(config, &manifest, Split::Test)?;
    if instances.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let prediction: Vec<Vec<f64>> = instances
        .par_iter()
        .map(|ms| predict(&model, ms))
        .collect::<Result<_>>()?;
    let rank1: Vec<Vec<f64>> = instances
        .par_iter()
        .map(|ms| predict_rank1(&model, ms))
        .collect::<Result<_>>()?;
    let mean_strain_norm = config.mean_strain.iter().map(|v| v * v).sum::<f64>().sqrt();
    let opts = EvalOptions {
        flag_threshold: config.train.delta_t,
        ..EvalOptions::default()
    };
    let report = metrics_evaluate(&oracle, &prediction, mean_strain_norm, &opts)?;
    let pooled_o: Vec<f64> = oracle.iter().flatten().copied().collect();
    let pooled_r1: Vec<f64> = rank1.iter().flatten().copied().collect();
    let r2_rank1 = crate::metrics::r2(&pooled_o, &pooled_r1)?;
    let evaluation = Evaluation {
        r2_rank1,
        n_ranks: model.ranks.len(),
        report,
        config: config.clone(),
    };
    io::write_json(&config.output_dir.join("report.json"), &evaluation)?;
    write_report_csv(&config.output_dir, &evaluation.report)?;
    Ok(evaluation)
}

/// Exports the histogram and parity tables of a report as CSV files.
pub fn write_report_csv(dir: &Path, report: &EvalReport) -> Result<()> {
    let hist_rows: Vec<Vec<f64>> = report
        .oracle_counts
        .iter()
        .zip(&report.prediction_counts)
        .enumerate()
        .map(|(i, (o, p))| {
            vec![
                report.histogram_edges[i],
                report.histogram_edges[i + 1],
                *o as f64,
                *p as f64,
            ]
        })
        .collect();
    io::write_csv(
        &dir.join("histogram.csv"),
        &["bin_lo", "bin_hi", "oracle_count", "prediction_count"],
        &hist_rows,
    )?;
    let parity_rows: Vec<Vec<f64>> = report.parity.iter().map(|&(o, p)| vec![o, p]).collect();
    io::write_csv(&dir.join("parity.csv"), &["oracle", "prediction"], &parity_rows)
}

/// Runs generate → solve → train → evaluate in one output directory,
/// returning the evaluation and wall-clock seconds per phase.
pub fn run_all(config: &RunConfig) -> Result<(Evaluation, [f64; 4])> {
    let mut timings = [0.0; 4];
    let t = Instant::now();
    generate(config)?;
    timings[0] = t.elapsed().as_secs_f64();
    let t = Instant::now();
    solve(config)?;
    timings[1] = t.elapsed().as_secs_f64();
    let t = Instant::now();
    train(config)?;
    timings[2] = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let evaluation = evaluate(config)?;
    timings[3] = t.elapsed().as_secs_f64();
    Ok((evaluation, timings))
}

/// Sweep axis: which config knob each row varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TrainSize,
    DeltaT,
    Ec,
    Zener,
    BasisCount,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_size" => Ok(SweepAxis::TrainSize),
            "delta_t" => Ok(SweepAxis::DeltaT),
            "ec" => Ok(SweepAxis::Ec),
            "zener" => Ok(SweepAxis::Zener),
            "basis_count" => Ok(SweepAxis::BasisCount),
            other => Err(Error::invalid(format!("unknown sweep axis '{other}'"))),
        }
    }
}

fn apply_axis(config: &mut RunConfig, axis: SweepAxis, value: f64) -> Result<()> {
    match axis {
        SweepAxis::TrainSize => config.train_fraction = value,
        SweepAxis::DeltaT => config.train.delta_t = value,
        SweepAxis::Ec => config.material = MaterialSpec::two_phase(value, 0.3),
        SweepAxis::Zener => {
            // keep C11/C12 fixed and move C44 to hit Z = 2 C44 / (C11 - C12)
            let (c11, c12) = (250.0, 150.0);
            config.material = MaterialSpec::polycrystal(c11, c12, value * (c11 - c12) / 2.0);
        }
        SweepAxis::BasisCount => match &mut config.basis {
            BasisSpec::PlanarFourier2d { n_harmonics } => *n_harmonics = value as usize,
            other => {
                return Err(Error::invalid(format!(
                    "basis_count sweep needs a planar Fourier basis, found {other:?}"
                )))
            }
        },
    }
    Ok(())
}

/// One sweep result row; `error` is set (and metrics are NaN) when the row
/// failed, and the sweep continues.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub r2: f64,
    pub relative_l2: f64,
    pub t_generate: f64,
    pub t_solve: f64,
    pub t_train: f64,
    pub t_evaluate: f64,
    pub error: Option<String>,
}

/// Runs the full pipeline once per axis value, each in its own
/// subdirectory, and writes `sweep.csv` in the base output directory.
/// Per-row failures are recorded and do not stop the sweep.
pub fn sweep(config: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let mut rows = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let mut sub = config.clone();
        sub.output_dir = config.output_dir.join(format!("sweep-{i:02}"));
        let run = apply_axis(&mut sub, axis, value).and_then(|_| run_all(&sub));
        rows.push(match run {
            Ok((evaluation, t)) => SweepRow {
                value,
                r2: evaluation.report.r2,
                relative_l2: evaluation.report.relative_l2,
                t_generate: t[0],
                t_solve: t[1],
                t_train: t[2],
                t_evaluate: t[3],
                error: None,
            },
            Err(e) => SweepRow {
                value,
                r2: f64::NAN,
                relative_l2: f64::NAN,
                t_generate: f64::NAN,
                t_solve: f64::NAN,
                t_train: f64::NAN,
                t_evaluate: f64::NAN,
                error: Some(e.to_string()),
            },
        });
    }
    let csv_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            vec![
                r.value,
                r.r2,
                r.relative_l2,
                r.t_generate,
                r.t_solve,
                r.t_train,
                r.t_evaluate,
            ]
        })
        .collect();
    io::write_csv(
        &config.output_dir.join("sweep.csv"),
        &[
            "value",
            "r2",
            "relative_l2",
            "t_generate",
            "t_solve",
            "t_train",
            "t_evaluate",
        ],
        &csv_rows,
    )?;
    Ok(rows)
}
