//! Subcommand implementations. Each returns its JSON result and CSV
//! tables; nothing is written here.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{ensure, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use nnsym::correlators::{
    combined_z, estimate_correlators, fraction_within, gp_limit_check, perturbative_ngp_2pt,
    slots_at, ward_identity_sum, wick_correlator, ComplexNetworks, CorrelatorTensor, InputSet,
    Kernel, RealNetworks, Slot,
};
use nnsym::ensembles::{zoo, NetworkSampler};
use nnsym::linalg::{DenseTensor, Matrix};
use nnsym::mc::McConfig;
use nnsym::rng::{derive_seed, RngStream};
use nnsym::symmetry::{
    deviation_report, random_group_elements, run_experiments, so_generators, transform_correlator,
    ActionSide, DeviationConfig, DeviationReport, GroupSpec,
};
use nnsym::training::{
    breaking_spec, density_flow_check, ensemble_ntk, finite_difference_jacobian, forward_tape,
    gaussian_blobs, jacobian, max_relative_error, one_cold_experiment, summarize, train_grid,
    Dataset, Encoding, FlowConfig, GridCell, GridConfig, Loss, RunRecord, Tape, TrainingConfig,
};

use crate::config::{self, Architecture, DatasetSource, Params, RunConfig};
use crate::idx;

pub const DATA_DIR_ENV: &str = "NNSYM_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/fashion-mnist";

/// A named CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl Table {
    fn new(name: impl Into<String>, header: &str) -> Self {
        Self {
            name: name.into(),
            header: header.into(),
            rows: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = self.header.clone();
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub json: Value,
    pub tables: Vec<Table>,
}

fn to_json<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

pub fn run(config: &RunConfig, workers: usize) -> Result<Outcome> {
    let name = config.subcommand.name();
    match &config.params {
        Params::CheckSymmetry(p) => check_symmetry(config, p, workers),
        Params::GpLimit(p) => gp_limit(config, p, workers),
        Params::TranslateCheck(p) => translate_check(config, p, workers),
        Params::SuCheck(p) => su_check(config, p, workers),
        Params::Ward(p) => ward(config, p, workers),
        Params::Ntk(p) => ntk(config, p, workers),
        Params::Train(p) => train(config, p, workers),
        Params::FlowCheck(p) => flow_check(config, p, workers),
        Params::Perturbative(p) => perturbative(config, p, workers),
    }
    .with_context(|| format!("running {name}"))
}

fn mc(config: &RunConfig, samples: u64, tag: u64, workers: usize) -> McConfig {
    McConfig::new(samples, derive_seed(config.seed, tag)).with_workers(workers)
}

fn inputs(points: &[Vec<f64>]) -> Result<InputSet> {
    Ok(InputSet::new(points.to_vec())?)
}

fn exact_gp_tensor(
    points: &[usize],
    kernel: &Kernel,
    d: usize,
    seed: u64,
) -> Result<CorrelatorTensor> {
    let shape = vec![d; points.len()];
    let mean = if points.len().is_multiple_of(2) {
        wick_correlator(kernel, points, d)?.mean
    } else {
        DenseTensor::zeros(shape.clone())
    };
    Ok(CorrelatorTensor {
        slots: slots_at(points),
        mean,
        stderr: DenseTensor::zeros(shape),
        samples: 0,
        seed,
    })
}

#[derive(Serialize)]
struct SymmetryRow {
    width: Option<usize>,
    order: usize,
    samples: u64,
    assignments: Vec<Vec<usize>>,
    report: DeviationReport,
}

fn check_symmetry(
    config: &RunConfig,
    p: &config::CheckSymmetry,
    workers: usize,
) -> Result<Outcome> {
    let xs = inputs(&p.inputs)?;
    let d = p.architecture.output_dim();
    let group = p.group.unwrap_or(GroupSpec::so(d, ActionSide::Output));
    let widths: Vec<Option<usize>> = if p.widths.is_empty() {
        vec![None]
    } else {
        p.widths.iter().copied().map(Some).collect()
    };
    let dev = DeviationConfig {
        elements: p.elements,
        threshold: p.threshold,
        seed: derive_seed(config.seed, 3),
        workers,
    };
    let mut rows = Vec::new();
    let mut table = Table::new("check-symmetry", DeviationReport::CSV_HEADER);
    for (wi, &width) in widths.iter().enumerate() {
        for (oi, &order) in p.orders.iter().enumerate() {
            let assignments = p.assignments_for(order);
            let samples = p.order_samples.as_ref().map_or(config.samples, |s| s[oi]);
            let tag = 1000 + (wi * p.orders.len() + oi) as u64;
            let report = if let Architecture::ExactGp { .. } = p.architecture {
                let kernel = Kernel::exact(Matrix::from_fn(xs.len(), xs.len(), |a, b| {
                    1.0 + xs
                        .point(a)
                        .iter()
                        .zip(xs.point(b))
                        .map(|(u, v)| u * v)
                        .sum::<f64>()
                }));
                let one: Vec<CorrelatorTensor> = assignments
                    .iter()
                    .map(|a| exact_gp_tensor(a, &kernel, d, config.seed))
                    .collect::<Result<_>>()?;
                deviation_report(&vec![one; p.experiments], &group, &dev)?
            } else {
                let ens = RealNetworks::new(p.architecture.build(width, config.seed)?)?;
                let slot_sets: Vec<Vec<Slot>> = assignments.iter().map(|a| slots_at(a)).collect();
                let exps = run_experiments(
                    &ens,
                    &xs,
                    &slot_sets,
                    &mc(config, samples, tag, workers),
                    p.experiments,
                )?;
                deviation_report(&exps, &group, &dev)?
            };
            let w = width.or(p.architecture.width()).unwrap_or(0);
            table.rows.push(report.csv_row(w));
            rows.push(SymmetryRow {
                width,
                order,
                samples,
                assignments,
                report,
            });
        }
    }
    Ok(Outcome {
        json: json!({ "rows": to_json(&rows)? }),
        tables: vec![table],
    })
}

fn gp_limit(config: &RunConfig, p: &config::GpLimit, workers: usize) -> Result<Outcome> {
    let xs = inputs(&p.inputs)?;
    let rows = gp_limit_check(
        |w| {
            RealNetworks::new(
                p.architecture
                    .build(Some(w), config.seed)
                    .map_err(|e| nnsym::Error::InvalidArchitecture(format!("{e:#}")))?,
            )
        },
        &p.widths,
        &xs,
        &p.assignments,
        &mc(config, config.samples, 1, workers),
        p.threshold,
    )?;
    let mut table = Table::new(
        "gp-limit",
        "N,max_discrepancy,mean_discrepancy,fraction_within",
    );
    for r in &rows {
        table.rows.push(format!(
            "{},{:e},{:e},{}",
            r.width, r.max_discrepancy, r.mean_discrepancy, r.fraction_within
        ));
    }
    let decreasing = rows
        .windows(2)
        .all(|w| w[1].max_discrepancy < w[0].max_discrepancy);
    Ok(Outcome {
        json: json!({ "rows": to_json(&rows)?, "strictly_decreasing": decreasing }),
        tables: vec![table],
    })
}

fn translate_check(
    config: &RunConfig,
    p: &config::TranslateCheck,
    workers: usize,
) -> Result<Outcome> {
    let xs = inputs(&p.inputs)?;
    let ens = RealNetworks::new(p.architecture.build(None, config.seed)?)?;
    let group = GroupSpec::translation(xs.dim(), p.shift_scale);
    let elements = random_group_elements(&group, p.shifts, derive_seed(config.seed, 5))?;
    let slot_sets: Vec<Vec<Slot>> = p.assignments.iter().map(|a| slots_at(a)).collect();
    let check = nnsym::symmetry::input_invariance_check(
        &ens,
        &xs,
        &slot_sets,
        &elements,
        &mc(config, config.samples, 1, workers),
        p.threshold,
    )?;
    let passed = check.fraction_within >= p.required_fraction;
    let shifts: Vec<Value> = elements
        .iter()
        .map(|e| to_json(&e.action))
        .collect::<Result<_>>()?;
    let mut table = Table::new("translate-check", "shifts,max_z,fraction_within,passed");
    table.rows.push(format!(
        "{},{:e},{},{}",
        p.shifts, check.max_z, check.fraction_within, passed
    ));
    Ok(Outcome {
        json: json!({ "check": to_json(&check)?, "shifts": shifts, "passed": passed }),
        tables: vec![table],
    })
}

fn su_check(config: &RunConfig, p: &config::SuCheck, workers: usize) -> Result<Outcome> {
    let xs = inputs(&p.inputs)?;
    let ens = ComplexNetworks::new(p.spec())?;
    let unbalanced = vec![
        vec![Slot::at(0)],
        vec![Slot::at(0), Slot::at(1), Slot::conj(0)],
    ];
    let measured = estimate_correlators(
        &ens,
        &xs,
        &unbalanced,
        &mc(config, config.samples, 1, workers),
    )?;
    let mut table = Table::new("su-check", "check,statistic,threshold,passed");
    let mut checks = Vec::new();
    for (slots, t) in unbalanced.iter().zip(&measured) {
        let z = t.max_z();
        let label = slots
            .iter()
            .map(|s| if s.conjugate { "fdag" } else { "f" })
            .collect::<Vec<_>>()
            .join("_");
        let ok = z <= p.vanishing_threshold;
        table.rows.push(format!(
            "vanishes:{label},{z:e},{},{ok}",
            p.vanishing_threshold
        ));
        checks.push(json!({ "slots": to_json(slots)?, "max_z": z, "passed": ok }));
    }
    let balanced = vec![vec![Slot::at(0), Slot::conj(1)]];
    let exps = run_experiments(
        &ens,
        &xs,
        &balanced,
        &mc(config, config.samples, 2, workers),
        p.experiments,
    )?;
    let report = deviation_report(
        &exps,
        &GroupSpec::su(p.output_dim),
        &DeviationConfig {
            elements: p.elements,
            threshold: p.threshold,
            seed: derive_seed(config.seed, 3),
            workers,
        },
    )?;
    let invariant = report.pass_fraction == 1.0;
    table.rows.push(format!(
        "invariant:f_fdag,{:e},{},{invariant}",
        report.mu_m / report.delta_m,
        p.threshold
    ));
    Ok(Outcome {
        json: json!({
            "unbalanced": checks,
            "balanced": to_json(&report)?,
            "balanced_invariant": invariant,
        }),
        tables: vec![table],
    })
}

fn ward(config: &RunConfig, p: &config::Ward, workers: usize) -> Result<Outcome> {
    let xs = inputs(&p.inputs)?;
    let base = p.architecture.build(None, config.seed)?;
    let generator = so_generators(base.output_dim)?.swap_remove(p.generator);
    let mut table = Table::new("ward", "mu_W,max_z,within_threshold");
    let mut rows = Vec::new();
    for (k, &mu) in p.mu_ws.iter().enumerate() {
        let ens = RealNetworks::new(breaking_spec(&base, p.k, mu)?)?;
        let sum = ward_identity_sum(
            &ens,
            &xs,
            &generator,
            &p.points,
            &mc(config, config.samples, 10 + k as u64, workers),
        )?;
        let z = sum.max_z();
        let within = z <= p.threshold;
        table.rows.push(format!("{mu},{z:e},{within}"));
        rows.push(
            json!({ "mu_w": mu, "max_z": z, "within_threshold": within, "sum": to_json(&sum)? }),
        );
    }
    Ok(Outcome {
        json: json!({ "generator": to_json(&generator)?, "rows": rows }),
        tables: vec![table],
    })
}

/// Draws networks until no hidden relu preactivation at `x` is within
/// `margin` of the kink; returns the draw and the number of rejections.
fn smooth_draw(
    spec: &Arc<nnsym::ensembles::ArchitectureSpec>,
    x: &[f64],
    margin: f64,
    rng: &mut RngStream,
) -> Result<(nnsym::ensembles::NetworkDraw, usize)> {
    let mut sampler = NetworkSampler::new(spec.clone(), rng)?;
    let mut tape = Tape::default();
    for redraws in 0..1000 {
        let draw = sampler.sample(rng)?;
        forward_tape(&draw, x, &mut tape)?;
        let near_kink = spec.layers.iter().enumerate().any(|(l, layer)| {
            matches!(
                layer,
                nnsym::ensembles::LayerSpec::Activation {
                    function: nnsym::ensembles::Activation::Relu
                }
            ) && tape.layer_input(l).iter().any(|v| v.abs() < margin)
        });
        if !near_kink {
            return Ok((draw, redraws));
        }
    }
    anyhow::bail!("no draw away from relu kinks in 1000 attempts")
}

fn ntk(config: &RunConfig, p: &config::Ntk, workers: usize) -> Result<Outcome> {
    let spec = Arc::new(p.spec());
    let d = p.output_dim;
    let theta = ensemble_ntk(
        &spec,
        &p.x,
        &p.x_prime,
        &mc(config, config.samples, 1, workers),
    )?;
    let se = theta.stderr.clone().context("ensemble stderr")?;
    let mut off_diagonal = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                off_diagonal = off_diagonal.max(theta.values[(i, j)].abs() / se[(i, j)]);
            }
        }
    }
    let tensor = CorrelatorTensor {
        slots: slots_at(&[0, 1]),
        mean: DenseTensor::new(vec![d, d], theta.values.as_slice().to_vec())?,
        stderr: DenseTensor::new(vec![d, d], se.as_slice().to_vec())?,
        samples: theta.samples,
        seed: config.seed,
    };
    let elements = random_group_elements(
        &GroupSpec::so(d, ActionSide::Output),
        p.elements,
        derive_seed(config.seed, 3),
    )?;
    let mut z = Vec::new();
    for e in &elements {
        let r = transform_correlator(&tensor, e)?;
        z.extend(combined_z(
            &tensor.mean,
            &tensor.stderr,
            &r.mean,
            &r.stderr,
        )?);
    }
    let rotation_max_z = z.iter().copied().fold(0.0, f64::max);
    let rotation_within = fraction_within(&z, 3.0);
    let mut rng = RngStream::new(derive_seed(config.seed, 4), 0);
    let (draw, redraws) = smooth_draw(&spec, &p.x, 1e-2, &mut rng)?;
    let fd_error = max_relative_error(
        &jacobian(&draw, &p.x)?,
        &finite_difference_jacobian(&draw, &p.x, p.fd_step)?,
        1e-12,
    );
    let diagonal_nonnegative = (0..d).all(|i| {
        nnsym::training::empirical_ntk(&draw, &p.x, &p.x)
            .map(|t| t.values[(i, i)] >= 0.0)
            .unwrap_or(false)
    });
    let mut table = Table::new("ntk", "statistic,value");
    table
        .rows
        .push(format!("off_diagonal_max_z,{off_diagonal:e}"));
    table
        .rows
        .push(format!("rotation_max_z,{rotation_max_z:e}"));
    table
        .rows
        .push(format!("rotation_fraction_within_3,{rotation_within}"));
    table
        .rows
        .push(format!("fd_max_relative_error,{fd_error:e}"));
    Ok(Outcome {
        json: json!({
            "ntk": to_json(&theta)?,
            "off_diagonal_max_z": off_diagonal,
            "rotation_max_z": rotation_max_z,
            "rotation_fraction_within_3": rotation_within,
            "fd_max_relative_error": fd_error,
            "fd_redraws": redraws,
            "diagonal_nonnegative": diagonal_nonnegative,
        }),
        tables: vec![table],
    })
}

/// Resolves the Fashion-MNIST directory: environment, then config, then
/// the default relative path.
pub fn data_dir(configured: Option<&PathBuf>) -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| configured.cloned())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

pub fn load_datasets(source: &DatasetSource, seed: u64) -> Result<(Dataset, Dataset)> {
    match source {
        DatasetSource::FashionMnist {
            dir,
            train_limit,
            test_limit,
        } => {
            let dir = data_dir(dir.as_ref());
            let (train, test) = idx::load_fashion_mnist(&dir)
                .with_context(|| format!("loading Fashion-MNIST from {}", dir.display()))?;
            Ok((
                train.into_dataset(*train_limit)?,
                test.into_dataset(*test_limit)?,
            ))
        }
        DatasetSource::Blobs {
            classes,
            dim,
            train_per_class,
            test_per_class,
            spread,
            separation,
        } => {
            let centers: Vec<Vec<f64>> = (0..*classes)
                .map(|c| {
                    let sign = if (c / dim) % 2 == 0 { 1.0 } else { -1.0 };
                    (0..*dim)
                        .map(|j| if j == c % dim { sign * separation } else { 0.0 })
                        .collect()
                })
                .collect();
            let s = derive_seed(seed, 0xb10b);
            let train = gaussian_blobs(
                &centers,
                *train_per_class,
                *spread,
                &mut RngStream::new(s, 0),
            )?;
            let test = gaussian_blobs(
                &centers,
                *test_per_class,
                *spread,
                &mut RngStream::new(s, 1),
            )?;
            Ok((train, test))
        }
    }
}

fn epoch_table(name: &str, records: &[RunRecord]) -> Table {
    let mut t = Table::new(name, "seed,k,mu_W,epoch,train_loss,acc");
    for r in records {
        for m in &r.metrics {
            t.rows.push(format!(
                "{},{},{},{},{:e},{}",
                r.seed, r.k, r.mu_w, m.epoch, m.train_loss, m.test_accuracy
            ));
        }
    }
    t
}

fn summary_table(name: &str, cells: &[GridCell]) -> Table {
    let mut t = Table::new(name, "k,mu_W,seeds,mean_acc,std_acc,ci95");
    for c in cells {
        t.rows.push(format!(
            "{},{},{},{},{},{}",
            c.k, c.mu_w, c.seeds, c.mean_max_accuracy, c.std_max_accuracy, c.ci95
        ));
    }
    t
}

fn train(config: &RunConfig, p: &config::Train, workers: usize) -> Result<Outcome> {
    let (train, test) = load_datasets(&p.dataset, config.seed)?;
    let training = TrainingConfig {
        epochs: p.epochs,
        batch_size: p.batch_size,
        learning_rate: p.learning_rate,
        loss: Loss::Mse,
        encoding: Encoding::OneHot,
        seed: config.seed,
    };
    let seeds: Vec<u64> = p
        .seeds
        .iter()
        .map(|&s| derive_seed(config.seed, s))
        .collect();
    let name = config.subcommand.name();
    if config.subcommand == config::Subcommand::TrainGrid {
        for &k in &p.ks {
            ensure!(
                k <= train.classes(),
                "field `ks`: k = {k} exceeds {} classes",
                train.classes()
            );
        }
        let grid = GridConfig {
            width: p.width,
            ks: p.ks.clone(),
            mu_ws: p.mu_ws.clone(),
            seeds,
            training,
            workers,
        };
        let records = train_grid(&train, &test, &grid)?;
        let cells = summarize(&records);
        return Ok(Outcome {
            json: json!({ "records": to_json(&records)?, "cells": to_json(&cells)? }),
            tables: vec![
                epoch_table(name, &records),
                summary_table(&format!("{name}-summary"), &cells),
            ],
        });
    }
    let mut mu_ws = p.mu_ws.clone();
    mu_ws.sort_by(f64::total_cmp);
    mu_ws.dedup();
    let (records, mut cells) =
        one_cold_experiment(&train, &test, &mu_ws, &seeds, p.width, &training, workers)?;
    cells.sort_by(|a, b| a.mu_w.total_cmp(&b.mu_w));
    let best = cells
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean_max_accuracy.total_cmp(&b.1.mean_max_accuracy))
        .map(|(i, c)| (i, c.mu_w))
        .context("empty grid")?;
    let interior = best.0 > 0 && best.0 + 1 < cells.len();
    Ok(Outcome {
        json: json!({
            "records": to_json(&records)?,
            "cells": to_json(&cells)?,
            "peak_mu_w": best.1,
            "interior_peak": interior,
        }),
        tables: vec![
            epoch_table(name, &records),
            summary_table(&format!("{name}-summary"), &cells),
        ],
    })
}

fn flow_check(config: &RunConfig, p: &config::FlowCheck, workers: usize) -> Result<Outcome> {
    let (train, _) = load_datasets(&p.dataset, config.seed)?;
    let spec = Arc::new(zoo::relu_classifier(
        train.dim(),
        p.width,
        train.classes(),
        None,
    ));
    let xs = inputs(&p.inputs)?;
    ensure!(
        xs.dim() == train.dim(),
        "field `inputs`: dimension differs from the dataset"
    );
    let report = density_flow_check(
        &spec,
        &train,
        &xs,
        &FlowConfig {
            members: p.members,
            experiments: p.experiments,
            steps: p.steps,
            learning_rate: p.learning_rate,
            elements: p.elements,
            seed: config.seed,
            workers,
        },
    )?;
    let invariant_holds = report.invariant.iter().all(|r| r.mu_m <= 3.0 * r.delta_m);
    let mse_breaks = report.mse[0].mu_m > report.mse[0].delta_m;
    let mut table = Table::new("flow-check", "phase,n,mu_M,delta_M,ratio");
    for (phase, reps) in [
        ("initial", &report.initial),
        ("invariant", &report.invariant),
        ("mse", &report.mse),
    ] {
        for r in reps {
            table.rows.push(format!(
                "{phase},{},{:e},{:e},{}",
                r.order,
                r.mu_m,
                r.delta_m,
                r.mu_m / r.delta_m
            ));
        }
    }
    Ok(Outcome {
        json: json!({
            "report": to_json(&report)?,
            "invariant_within_3_delta_m": invariant_holds,
            "mse_breaks_one_point": mse_breaks,
        }),
        tables: vec![table],
    })
}

fn perturbative(config: &RunConfig, p: &config::Perturbative, workers: usize) -> Result<Outcome> {
    let h = p.hidden_matrix()?;
    let width = h.rows();
    let xs = inputs(&p.inputs)?;
    let g: Vec<Vec<f64>> = xs
        .points()
        .iter()
        .map(|x| h.apply(x))
        .collect::<nnsym::Result<_>>()?;
    let m = xs.len();
    let kernel = Kernel::exact(Matrix::from_fn(m, m, |a, b| {
        g[a].iter().zip(&g[b]).map(|(u, v)| u * v).sum::<f64>() / width as f64
    }));
    let pred = perturbative_ngp_2pt(p.std, p.coupling, &kernel, width, p.output_dim)?;
    let mut table = Table::new("perturbative", "a,b,G_pert,G_mc,stderr_mc,z");
    let mut sampled = Value::Null;
    if p.metropolis_samples > 0 {
        let ens = RealNetworks::new(zoo::quartic_readout_net(
            h.clone(),
            p.output_dim,
            p.std,
            p.coupling,
        ))?;
        let mut comparisons = Vec::new();
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect();
        let slot_sets: Vec<Vec<Slot>> = pairs.iter().map(|&(a, b)| slots_at(&[a, b])).collect();
        let est = estimate_correlators(
            &ens,
            &xs,
            &slot_sets,
            &mc(config, p.metropolis_samples, 1, workers),
        )?;
        for (&(a, b), t) in pairs.iter().zip(&est) {
            let (mean, se) = (t.mean.get(&[0, 0]), t.stderr.get(&[0, 0]));
            let want = pred.kernel.values[(a, b)];
            let z = (mean - want).abs() / se;
            table
                .rows
                .push(format!("{a},{b},{want:e},{mean:e},{se:e},{z}"));
            comparisons.push(
                json!({ "a": a, "b": b, "predicted": want, "sampled": mean, "stderr": se, "z": z }),
            );
        }
        sampled = Value::Array(comparisons);
    } else {
        for a in 0..m {
            for b in a..m {
                table
                    .rows
                    .push(format!("{a},{b},{:e},,,", pred.kernel.values[(a, b)]));
            }
        }
    }
    Ok(Outcome {
        json: json!({ "prediction": to_json(&pred)?, "metropolis": sampled }),
        tables: vec![table],
    })
}
