//! Subcommand implementations. Each writes its artifacts under the output
//! directory and returns the path of the main one.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gbs_core::blocks::SampleBlocks;
use gbs_core::dataset::{CountDataset, Detector, Provenance};
use gbs_core::gaussian_state::{fit_ground_truth_correction, FitOptions};
use gbs_core::gcd::{gcd_pnr_from_ensemble, gcd_threshold_from_ensemble, GcdResult, Partition};
use gbs_core::oracle::{brute_force_gcd, click_pattern_probability, pnr_pattern_probability, GaussianOutputState, OracleXebModel};
use gbs_core::sampler::{draw_input_samples, photon_number, propagate, run_sampler, vacuum_probability, SamplerConfig};
use gbs_core::stats::{xeb_protocol, XebOptions};
use gbs_core::suite::{run_suite, sample_gcd, SuiteOptions, TruthSource};
use num_complex::Complex64;
use serde_json::json;

use crate::config::{Loaded, TestKind, MIN_SAMPLES};
use crate::CliError;

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn prepare(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serialises") + "\n"
}

fn read_dataset(path: &Path) -> Result<CountDataset, CliError> {
    Ok(CountDataset::read_file(path, Provenance::Experiment)?)
}

fn sampler_config(cfg: &Loaded) -> SamplerConfig {
    let s = &cfg.config.sampler;
    SamplerConfig {
        samples: s.samples,
        seed: s.seed,
        eta_max: s.eta_max,
        detector: s.detector,
        c_max: s.c_max,
        block_size: s.block_size,
    }
}

/// `"total"`, `"halves"` or groups such as `"0,1;2,3"`.
pub fn parse_partition(spec: &str, modes: usize) -> Result<Partition, CliError> {
    let part = match spec.trim() {
        "total" => Partition::total(modes),
        "halves" => Partition::halves(modes),
        groups => {
            let subsets = groups
                .split(';')
                .map(|g| {
                    g.split(',')
                        .map(|x| x.trim().parse::<usize>().map_err(|_| CliError::config(format!("bad mode index '{x}' in partition"))))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            Partition::new(subsets, modes)
        }
    };
    Ok(part?)
}

fn raw_ensemble(cfg: &Loaded, samples: usize, seed: u64, detector: Detector) -> Result<SampleBlocks<Complex64>, CliError> {
    let ens = propagate(&draw_input_samples(&cfg.bank()?, samples, seed)?, &cfg.transmission()?)?;
    Ok(match detector {
        Detector::Threshold => vacuum_probability(&ens),
        Detector::Pnr => photon_number(&ens),
    })
}

pub fn sample(cfg: &Loaded, out: &Path) -> Result<PathBuf, CliError> {
    prepare(out)?;
    let sc = sampler_config(cfg);
    log::info!("sampling {} records over {} modes", sc.samples, cfg.config.instance.r.len());
    let run = run_sampler(&cfg.bank()?, &cfg.transmission()?, &sc)?;
    let data_path = out.join("samples.txt");
    run.dataset.write_file(&data_path)?;
    let sidecar = json!({
        "config_sha256": cfg.sha256,
        "dataset": "samples.txt",
        "samples": run.dataset.len(),
        "modes": run.dataset.modes(),
        "detector": sc.detector,
        "seed": sc.seed,
        "eta_max": sc.eta_max,
        "out_of_range": run.out_of_range,
        "timings": run.timings,
    });
    write(&out.join("samples.json"), &pretty(&sidecar))?;
    Ok(data_path)
}

/// Truth named on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthArg {
    Exact,
    Ensemble,
    Counts(PathBuf),
}

impl std::str::FromStr for TruthArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(TruthArg::Exact),
            "ensemble" => Ok(TruthArg::Ensemble),
            other => match other.strip_prefix("counts:") {
                Some(p) if !p.is_empty() => Ok(TruthArg::Counts(PathBuf::from(p))),
                _ => Err(format!("truth must be 'exact', 'ensemble' or 'counts:<path>', got '{other}'")),
            },
        }
    }
}

fn comparison_csv(truth: &GcdResult, sample: &GcdResult) -> String {
    let mut out = String::new();
    for a in 0..truth.shape.len() {
        let _ = write!(out, "m_{},", a + 1);
    }
    out.push_str("truth,truth_stderr,sample,sample_stderr\n");
    for f in 0..truth.len() {
        for i in truth.bin(f) {
            let _ = write!(out, "{i},");
        }
        let _ = writeln!(out, "{:e},{:e},{:e},{:e}", truth.probabilities[f], truth.stderr[f], sample.probabilities[f], sample.stderr[f]);
    }
    out
}

pub fn validate(cfg: &Loaded, data_path: &Path, truth: &TruthArg, out: &Path, override_min_n: bool) -> Result<PathBuf, CliError> {
    let v = cfg.validation()?;
    let data = read_dataset(data_path)?;
    if data.is_empty() {
        return Err(CliError::config(format!("dataset {} has no records", data_path.display())));
    }
    if data.len() < MIN_SAMPLES && !override_min_n {
        return Err(CliError::config(format!(
            "dataset has {} records; chi-square tests need at least {MIN_SAMPLES} (use --override-min-n)",
            data.len()
        )));
    }
    let detector = data.detector();
    if !matches!(truth, TruthArg::Counts(_)) && detector != cfg.config.sampler.detector {
        return Err(CliError::config(format!(
            "dataset is {} but the configured instance is {}",
            detector.as_str(),
            cfg.config.sampler.detector.as_str()
        )));
    }
    prepare(out)?;

    let state;
    let raw;
    let counts;
    let source = match truth {
        TruthArg::Exact => {
            state = GaussianOutputState::from_bank(&cfg.bank()?, &cfg.transmission()?)?;
            TruthSource::Exact(&state)
        }
        TruthArg::Ensemble => {
            let spec = v.truth_ensemble.ok_or_else(|| CliError::config("ensemble truth needs validation.truth_ensemble"))?;
            raw = raw_ensemble(cfg, spec.samples, spec.seed, detector)?;
            TruthSource::Ensemble { values: &raw, batch_size: spec.batch_size }
        }
        TruthArg::Counts(p) => {
            counts = read_dataset(p)?;
            TruthSource::Counts(&counts)
        }
    };

    let opts = SuiteOptions {
        total_gcd: v.tests.contains(&TestKind::TotalGcd),
        gcd2d: v.tests.contains(&TestKind::Gcd2d),
        marginal_orders: if v.tests.contains(&TestKind::Marginals) { v.marginal_orders.clone() } else { vec![] },
        pnr_cap: v.pnr_cap,
        subset_seed: v.subset_seed,
        ..SuiteOptions::default()
    };
    let mut report = run_suite(&data, source, &opts)?;

    if v.tests.contains(&TestKind::Xeb) {
        match (truth, detector) {
            (TruthArg::Exact, Detector::Threshold) => {
                let model = OracleXebModel::new(GaussianOutputState::from_bank(&cfg.bank()?, &cfg.transmission()?)?);
                match xeb_protocol(&data, &model, XebOptions::with_seed(v.xeb_seed.unwrap_or(v.subset_seed))) {
                    Ok(x) => report.xeb = Some(x),
                    Err(e) if !e.is_numerical() => report.notices.push(format!("xeb skipped: {e}")),
                    Err(e) => return Err(e.into()),
                }
            }
            _ => report.notices.push("xeb skipped: needs threshold data and the exact truth".into()),
        }
    }
    report.metadata.insert("config_sha256".into(), json!(cfg.sha256));
    report.metadata.insert("dataset".into(), json!(data_path.display().to_string()));

    let plots = [(opts.total_gcd, "total_gcd", "total"), (opts.gcd2d && data.modes() >= 2, "gcd2d", "halves")];
    for (enabled, name, spec) in plots {
        if enabled {
            let part = parse_partition(spec, data.modes())?;
            let t = source.gcd(&part, detector, opts.pnr_cap)?;
            let s = sample_gcd(&data, &part, opts.pnr_cap)?;
            write(&out.join(format!("{name}.csv")), &comparison_csv(&t, &s))?;
        }
    }
    let mut summary = String::from("test,chi2,k,z,method\n");
    for t in &report.tests {
        let method = serde_json::to_value(t.result.method).expect("enum serialises");
        let _ = writeln!(summary, "{},{},{},{},{}", t.name, t.result.chi2, t.result.k, t.result.z, method.as_str().unwrap_or(""));
    }
    write(&out.join("tests.csv"), &summary)?;
    let path = out.join("report.json");
    write(&path, &(report.to_json() + "\n"))?;
    Ok(path)
}

pub fn fit(cfg: &Loaded, data_path: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let data = read_dataset(data_path)?;
    if data.is_empty() {
        return Err(CliError::config(format!("dataset {} has no records", data_path.display())));
    }
    prepare(out)?;
    let cap = cfg.config.validation.as_ref().map_or(4, |v| v.pnr_cap);
    let reference = sample_gcd(&data, &Partition::total(data.modes())?, cap)?;
    let opts = FitOptions { model: cfg.fit_model(), ..FitOptions::default() };
    let r = fit_ground_truth_correction(&reference, &cfg.bank()?, &cfg.transmission()?, &opts)?;
    for w in &r.warnings {
        log::warn!("fit: {w}");
    }
    let doc = json!({
        "t": r.t,
        "eps": r.eps,
        "chi2_before": r.chi2_before,
        "chi2_after": r.chi2_after,
        "converged": r.converged,
        "warnings": r.warnings,
        "config_sha256": cfg.sha256,
    });
    let path = out.join("fit.json");
    write(&path, &pretty(&doc))?;
    Ok(path)
}

/// What the oracle is asked for.
#[derive(Debug, Clone)]
pub enum OracleQuery {
    Pattern(String),
    Partition { spec: String, cap: usize },
}

pub fn oracle(cfg: &Loaded, query: &OracleQuery, out: &Path) -> Result<PathBuf, CliError> {
    prepare(out)?;
    let state = GaussianOutputState::from_bank(&cfg.bank()?, &cfg.transmission()?)?;
    let detector = cfg.config.sampler.detector;
    let text = match query {
        OracleQuery::Pattern(p) => {
            let (counts, prob) = match detector {
                Detector::Threshold => {
                    let clicks: Vec<bool> = p
                        .chars()
                        .map(|c| match c {
                            '0' => Ok(false),
                            '1' => Ok(true),
                            _ => Err(CliError::config(format!("click pattern '{p}' may only contain 0 and 1"))),
                        })
                        .collect::<Result<_, _>>()?;
                    let prob = click_pattern_probability(&state, &clicks)?;
                    (clicks.iter().map(|&c| c as usize).collect::<Vec<_>>(), prob)
                }
                Detector::Pnr => {
                    let counts: Vec<usize> = p
                        .split(',')
                        .map(|x| x.trim().parse().map_err(|_| CliError::config(format!("bad count '{x}' in pattern"))))
                        .collect::<Result<_, _>>()?;
                    let prob = pnr_pattern_probability(&state, &counts)?;
                    (counts, prob)
                }
            };
            pretty(&json!({ "detector": detector, "pattern": counts, "probability": prob, "config_sha256": cfg.sha256 }))
        }
        OracleQuery::Partition { spec, cap } => {
            let part = parse_partition(spec, state.modes())?;
            brute_force_gcd(&state, &part, detector, *cap)?.to_json() + "\n"
        }
    };
    let path = out.join("oracle.json");
    write(&path, &text)?;
    Ok(path)
}

pub fn gcd(cfg: &Loaded, data_path: Option<&Path>, spec: &str, cap: usize, out: &Path) -> Result<PathBuf, CliError> {
    prepare(out)?;
    let g = match data_path {
        Some(p) => {
            let data = read_dataset(p)?;
            sample_gcd(&data, &parse_partition(spec, data.modes())?, cap)?
        }
        None => {
            let s = &cfg.config.sampler;
            let raw = raw_ensemble(cfg, s.samples, s.seed, s.detector)?;
            let part = parse_partition(spec, raw.cols())?;
            let batch = gbs_core::gcd::DEFAULT_BATCH_SIZE.min(s.samples / 2).max(1);
            match s.detector {
                Detector::Threshold => gcd_threshold_from_ensemble(&raw, &part, batch)?,
                Detector::Pnr => gcd_pnr_from_ensemble(&raw, &part, cap, batch)?,
            }
        }
    };
    write(&out.join("gcd.csv"), &g.to_csv())?;
    let path = out.join("gcd.json");
    write(&path, &(g.to_json() + "\n"))?;
    Ok(path)
}
