//! Command-line front end chaining simulation, reconstruction, training,
//! denoising and evaluation inside one experiment directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use super::config::{ExperimentConfig, Split};
use super::container::Provenance;
use super::experiment::{write_atomic, ExperimentDir, Outputs};
use super::persist::*;
use crate::analysis::{
    adc_map, bland_altman, intensity_profile, metric_report, profiles_csv, summarize, wilcoxon_signed_rank, ProfileAxis,
};
use crate::dataset::simulate_raw;
use crate::error::{Error, Result};
use crate::nn::ModelState;
use crate::recon::{reconstruct_case, DwiCase};
use crate::sim::{PhantomCase, TissueLabel};
use crate::tensor::Tensor;
use crate::train::{compare_designs, denoise_case, loss_curve_csv, train, TrainConfig, TrainLog};

#[derive(Debug, Parser)]
#[command(name = "dwi-denoise", version, about = "Synthetic DWI simulation and guided residual CNN denoising")]
struct Cli {
    /// Experiment configuration (JSON). Defaults to <out>/config.json, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-case work.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Experiment directory.
    #[arg(long, global = true, default_value = "experiment")]
    out: PathBuf,
    /// Replace the configured training section with the full-size preset.
    #[arg(long, global = true)]
    full_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate phantoms and raw k-space for every case.
    Simulate,
    /// Reconstruct guidance / noisy / reference images from raw k-space.
    Reconstruct,
    /// Train the configured network on the training split.
    Train,
    /// Denoise the test split with the trained network.
    Denoise,
    /// Per-tissue ADC statistics of the test split.
    Adc,
    /// PSNR / SSIM / nMSE of the test split against the references.
    Evaluate,
    /// Train guided and plain variants and write their loss curves.
    Compare,
    /// Aggregate the per-case CSVs into summary tables.
    Report,
}

/// Parse `argv` (including the program name), run the command and return
/// the process exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    let dir = ExperimentDir::new(&cli.out);
    let _lock = dir.lock()?;
    let mut base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if dir.config_path().exists() => ExperimentConfig::load(&dir.config_path())?,
        None => ExperimentConfig::default(),
    };
    if cli.full_scale {
        base.train = TrainConfig::full_scale();
    }
    let cfg = base.resolve(cli.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    let mut outputs = Outputs::default();
    let ctx = Ctx { dir: &dir, cfg: &cfg };
    let result = pool.install(|| {
        write_atomic(&dir.config_path(), cfg.to_json()?.as_bytes())?;
        match cli.command {
            Command::Simulate => ctx.simulate(&mut outputs),
            Command::Reconstruct => ctx.reconstruct(&mut outputs),
            Command::Train => ctx.train(&mut outputs),
            Command::Denoise => ctx.denoise(&mut outputs),
            Command::Adc => ctx.adc(&mut outputs),
            Command::Evaluate => ctx.evaluate(&mut outputs),
            Command::Compare => ctx.compare(&mut outputs),
            Command::Report => ctx.report(&mut outputs),
        }
    });
    if result.is_err() {
        outputs.rollback();
    }
    result
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

struct Ctx<'a> {
    dir: &'a ExperimentDir,
    cfg: &'a ExperimentConfig,
}

impl Ctx<'_> {
    fn provenance(&self, hash: &str) -> Provenance {
        Provenance {
            seed: self.cfg.seed,
            config_hash: hash.into(),
        }
    }

    fn data_hash(&self) -> Result<String> {
        let key = serde_json::to_vec(&(self.cfg.seed, &self.cfg.cohort, &self.cfg.acquisition))?;
        Ok(super::container::sha256_hex(&key)[..16].to_string())
    }

    /// Run `f` per case id in parallel; successful writes are recorded even
    /// when another case fails so they can be rolled back.
    fn per_case<F>(&self, ids: std::ops::Range<u64>, outputs: &mut Outputs, f: F) -> Result<()>
    where
        F: Fn(u64) -> (Vec<PathBuf>, Result<()>) + Sync + Send,
    {
        let results: Vec<(Vec<PathBuf>, Result<()>)> = ids.into_par_iter().map(&f).collect();
        let mut first_err = None;
        for (paths, r) in results {
            outputs.record(paths);
            if let Err(e) = r {
                first_err.get_or_insert(e);
            }
        }
        first_err.map_or(Ok(()), Err)
    }

    fn require(path: &Path, hint: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Config(format!("missing {}; run `{hint}` first", path.display())))
        }
    }

    fn load_case(&self, id: u64) -> Result<DwiCase> {
        let p = self.dir.case_path(id);
        Self::require(&p, "reconstruct")?;
        case_from_container(&read_container(&p, ROLE_CASE)?)
    }

    fn load_phantom(&self, id: u64) -> Result<PhantomCase> {
        let p = self.dir.phantom_path(id);
        Self::require(&p, "simulate")?;
        phantom_from_container(&read_container(&p, ROLE_PHANTOM)?)
    }

    fn load_cases(&self, split: Split) -> Result<Vec<DwiCase>> {
        self.cfg.cohort.ids(split).map(|id| self.load_case(id)).collect()
    }

    fn simulate(&self, outputs: &mut Outputs) -> Result<()> {
        let m = self.cfg.cohort.matrix;
        let prov = self.provenance(&self.data_hash()?);
        self.per_case(self.cfg.cohort.all_ids(), outputs, |id| {
            let mut written = Vec::new();
            let r = (|| {
                let (phantom, raw) = simulate_raw((m, m), &self.cfg.acquisition, self.cfg.seed, id)?;
                for (path, c) in [
                    (self.dir.phantom_path(id), phantom_to_container(&phantom, prov.clone())?),
                    (self.dir.raw_path(id), raw_to_container(&raw, prov.clone())?),
                ] {
                    write_atomic(&path, &c.to_bytes()?)?;
                    written.push(path);
                }
                Ok(())
            })();
            (written, r)
        })
    }

    fn reconstruct(&self, outputs: &mut Outputs) -> Result<()> {
        let prov = self.provenance(&self.data_hash()?);
        self.per_case(self.cfg.cohort.all_ids(), outputs, |id| {
            let mut written = Vec::new();
            let r = (|| {
                let p = self.dir.raw_path(id);
                Self::require(&p, "simulate")?;
                let raw = raw_from_container(&read_container(&p, ROLE_RAW)?)?;
                let case = reconstruct_case(&raw, id, self.cfg.seed)?;
                let path = self.dir.case_path(id);
                write_atomic(&path, &case_to_container(&case, prov.clone())?.to_bytes()?)?;
                written.push(path);
                Ok(())
            })();
            (written, r)
        })
    }

    fn save_trained(&self, outputs: &mut Outputs, tc: &TrainConfig, model: &ModelState<f32>, log: &TrainLog) -> Result<String> {
        let hash = self.cfg.model_hash(tc)?;
        let c = model_to_container(model, self.provenance(&hash))?;
        outputs.write(&self.dir.model_path(&hash), &c.to_bytes()?)?;
        let mut csv = String::from("epoch,lr,train_loss,val_mse\n");
        for e in &log.epochs {
            let _ = writeln!(csv, "{},{},{},{}", e.epoch, fmt(e.lr), fmt(e.train_loss), e.val_mse.map(fmt).unwrap_or_default());
        }
        outputs.write(&self.dir.model_dir(&hash).join("train_log.csv"), csv.as_bytes())?;
        let mut tc_json = serde_json::to_string_pretty(tc)?;
        tc_json.push('\n');
        outputs.write(&self.dir.model_dir(&hash).join("train_config.json"), tc_json.as_bytes())?;
        Ok(hash)
    }

    fn train(&self, outputs: &mut Outputs) -> Result<()> {
        let tr = self.load_cases(Split::Train)?;
        let va = self.load_cases(Split::Val)?;
        let (model, log) = train(&tr, &va, &self.cfg.train)?;
        self.save_trained(outputs, &self.cfg.train, &model, &log)?;
        Ok(())
    }

    fn compare(&self, outputs: &mut Outputs) -> Result<()> {
        let tr = self.load_cases(Split::Train)?;
        let va = self.load_cases(Split::Val)?;
        let designs = vec![
            ("guided".to_string(), TrainConfig { guided: true, ..self.cfg.train }),
            ("plain".to_string(), TrainConfig { guided: false, ..self.cfg.train }),
        ];
        let results = compare_designs(&tr, &va, &designs)?;
        let mut table = String::from("design,model,best_epoch,best_val_mse\n");
        for r in &results {
            let hash = self.save_trained(outputs, &r.config, &r.model, &r.log)?;
            let _ = writeln!(table, "{},{},{},{}", r.name, hash, r.log.best_epoch, fmt(r.best_val_mse));
        }
        outputs.write(&self.dir.report_path("design_comparison.csv"), table.as_bytes())?;
        outputs.write(&self.dir.report_path("loss_curves.csv"), loss_curve_csv(&results).as_bytes())?;
        Ok(())
    }

    fn model_hash(&self) -> Result<String> {
        self.cfg.model_hash(&self.cfg.train)
    }

    fn denoise(&self, outputs: &mut Outputs) -> Result<()> {
        let hash = self.model_hash()?;
        let path = self.dir.model_path(&hash);
        Self::require(&path, "train")?;
        let spec = self.cfg.train.network_spec()?;
        let model: ModelState<f32> = load_model(&path, Some(&spec))?;
        let prov = self.provenance(&hash);
        self.per_case(self.cfg.cohort.ids(Split::Test), outputs, |id| {
            let mut written = Vec::new();
            let r = (|| {
                let case = self.load_case(id)?;
                let d = denoise_case(&model, &case)?;
                let meta = serde_json::json!({ "case_id": id, "model": hash });
                let path = self.dir.denoised_path(&hash, id);
                write_atomic(&path, &image_to_container("denoised_hb", &d, meta, prov.clone())?.to_bytes()?)?;
                written.push(path);
                Ok(())
            })();
            (written, r)
        })
    }

    /// Denoised image of test case `id`, if `denoise` has run for the configured model.
    fn load_denoised(&self, id: u64) -> Result<Option<Tensor<f64>>> {
        let path = self.dir.denoised_path(&self.model_hash()?, id);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(image_from_container(&read_container(&path, ROLE_IMAGE)?, "denoised_hb")?))
    }

    fn adc(&self, outputs: &mut Outputs) -> Result<()> {
        let ids: Vec<u64> = self.cfg.cohort.ids(Split::Test).collect();
        let rows: Vec<Result<String>> = ids
            .par_iter()
            .map(|&id| {
                let case = self.load_case(id)?;
                let phantom = self.load_phantom(id)?;
                let mut images = vec![("noisy", case.noisy_hb.clone()), ("reference", case.reference_hb.clone())];
                if let Some(d) = self.load_denoised(id)? {
                    images.push(("denoised", d));
                }
                let mut out = String::new();
                for label in TissueLabel::EVALUATED {
                    let mask = phantom.mask(label);
                    if !mask.iter().any(|&m| m) {
                        continue;
                    }
                    let t = crate::analysis::roi_stats(&phantom.adc_truth, &mask)?;
                    let _ = writeln!(
                        out,
                        "{id},{},truth,{},{},{},{},{},0",
                        label.name(),
                        t.n_pixels,
                        fmt(t.mean),
                        fmt(t.sd),
                        fmt(t.median),
                        fmt(t.iqr)
                    );
                    for (name, hb) in &images {
                        let map = adc_map(&case.guidance_lb, hb, case.b_low, case.b_high, &case.norm)?;
                        let s = map.roi_stats(&mask)?;
                        let max_err = mask
                            .iter()
                            .enumerate()
                            .filter(|&(i, &m)| m && map.valid[i])
                            .map(|(i, _)| (map.values.data()[i] - phantom.adc_truth.data()[i]).abs())
                            .fold(0.0, f64::max);
                        let _ = writeln!(
                            out,
                            "{id},{},{name},{},{},{},{},{},{}",
                            label.name(),
                            s.n_pixels,
                            fmt(s.mean),
                            fmt(s.sd),
                            fmt(s.median),
                            fmt(s.iqr),
                            fmt(max_err)
                        );
                    }
                }
                Ok(out)
            })
            .collect();
        let mut csv = String::from("case,tissue,pipeline,n_pixels,mean,sd,median,iqr,max_abs_error_vs_truth\n");
        for r in rows {
            csv.push_str(&r?);
        }
        outputs.write(&self.dir.report_path("adc_roi.csv"), csv.as_bytes())
    }

    fn evaluate(&self, outputs: &mut Outputs) -> Result<()> {
        let ids: Vec<u64> = self.cfg.cohort.ids(Split::Test).collect();
        let ssim = self.cfg.analysis.ssim;
        let rows: Vec<Result<String>> = ids
            .par_iter()
            .map(|&id| {
                let case = self.load_case(id)?;
                let r = &case.reference_hb;
                let mut images = vec![("noisy", case.noisy_hb.clone()), ("reference", r.clone())];
                if let Some(d) = self.load_denoised(id)? {
                    images.push(("denoised", d));
                }
                let mut out = String::new();
                for (name, img) in &images {
                    let m = metric_report(img, r, &ssim)?;
                    let _ = writeln!(out, "{id},{name},{},{},{}", fmt(m.psnr_db), fmt(m.ssim), fmt(100.0 * m.nmse));
                }
                Ok(out)
            })
            .collect();
        let mut csv = String::from("case,image,psnr_db,ssim,nmse_percent\n");
        for r in rows {
            csv.push_str(&r?);
        }
        outputs.write(&self.dir.report_path("metrics.csv"), csv.as_bytes())?;

        let first = ids[0];
        let case = self.load_case(first)?;
        let row = self.cfg.analysis.profile_row.unwrap_or(case.shape().0 / 2);
        let mut profiles = vec![
            ("reference", intensity_profile(&case.reference_hb, ProfileAxis::Row, row)?),
            ("noisy", intensity_profile(&case.noisy_hb, ProfileAxis::Row, row)?),
        ];
        if let Some(d) = self.load_denoised(first)? {
            profiles.push(("denoised", intensity_profile(&d, ProfileAxis::Row, row)?));
        }
        let named: Vec<(&str, &[f64])> = profiles.iter().map(|(n, p)| (*n, p.as_slice())).collect();
        outputs.write(&self.dir.report_path("profiles.csv"), profiles_csv(&named)?.as_bytes())
    }

    fn report(&self, outputs: &mut Outputs) -> Result<()> {
        let metrics = read_csv(&self.dir.report_path("metrics.csv"), "evaluate")?;
        let mut by_image: BTreeMap<String, Vec<[f64; 3]>> = BTreeMap::new();
        let mut psnr_by_case: BTreeMap<(String, String), f64> = BTreeMap::new();
        for r in &metrics {
            let vals = [parse(&r[2])?, parse(&r[3])?, parse(&r[4])?];
            psnr_by_case.insert((r[1].clone(), r[0].clone()), vals[0]);
            by_image.entry(r[1].clone()).or_default().push(vals);
        }
        let mut summary = String::from("image,metric,n,mean,sd,median,iqr\n");
        for image in ["noisy", "reference", "denoised"] {
            let Some(rows) = by_image.get(image) else { continue };
            for (k, metric) in ["psnr_db", "ssim", "nmse_percent"].iter().enumerate() {
                let v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                let _ = writeln!(summary, "{image},{metric},{}", stat_cells(&v)?);
            }
        }
        outputs.write(&self.dir.report_path("summary_metrics.csv"), summary.as_bytes())?;

        if by_image.contains_key("denoised") {
            let cases: Vec<&String> = psnr_by_case.keys().filter(|(i, _)| i == "noisy").map(|(_, c)| c).collect();
            let a: Vec<f64> = cases.iter().map(|c| psnr_by_case[&("denoised".to_string(), (*c).clone())]).collect();
            let b: Vec<f64> = cases.iter().map(|c| psnr_by_case[&("noisy".to_string(), (*c).clone())]).collect();
            let w = wilcoxon_signed_rank(&a, &b)?;
            let csv = format!(
                "comparison,metric,n,w_plus,w_minus,p_value,exact\ndenoised_vs_noisy,psnr_db,{},{},{},{},{}\n",
                w.n,
                fmt(w.w_plus),
                fmt(w.w_minus),
                fmt(w.p_value),
                w.exact
            );
            outputs.write(&self.dir.report_path("wilcoxon.csv"), csv.as_bytes())?;
        }

        let adc = read_csv(&self.dir.report_path("adc_roi.csv"), "adc")?;
        // (tissue, pipeline) -> case -> ROI mean
        let mut roi: BTreeMap<(String, String), BTreeMap<u64, f64>> = BTreeMap::new();
        for r in &adc {
            let case: u64 = r[0].parse().map_err(|_| Error::Config(format!("bad case id '{}'", r[0])))?;
            roi.entry((r[1].clone(), r[2].clone())).or_default().insert(case, parse(&r[4])?);
        }
        let mut table = String::from("tissue,pipeline,n_cases,mean,sd,median,iqr\n");
        let mut ba = String::from("tissue,comparison,case,pair_mean,difference\n");
        let mut ba_sum = String::from("tissue,comparison,n,bias,sd,loa_low,loa_high\n");
        for label in TissueLabel::EVALUATED {
            let tissue = label.name().to_string();
            for pipeline in ["truth", "reference", "noisy", "denoised"] {
                if let Some(m) = roi.get(&(tissue.clone(), pipeline.to_string())) {
                    let v: Vec<f64> = m.values().copied().collect();
                    let _ = writeln!(table, "{tissue},{pipeline},{}", stat_cells(&v)?);
                }
            }
            let Some(reference) = roi.get(&(tissue.clone(), "reference".to_string())) else { continue };
            for pipeline in ["denoised", "noisy"] {
                let Some(other) = roi.get(&(tissue.clone(), pipeline.to_string())) else { continue };
                let cases: Vec<u64> = other.keys().filter(|c| reference.contains_key(c)).copied().collect();
                if cases.len() < 2 {
                    continue;
                }
                let a: Vec<f64> = cases.iter().map(|c| other[c]).collect();
                let b: Vec<f64> = cases.iter().map(|c| reference[c]).collect();
                let res = bland_altman(&a, &b)?;
                let cmp = format!("{pipeline}_vs_reference");
                for (i, c) in cases.iter().enumerate() {
                    let _ = writeln!(ba, "{tissue},{cmp},{c},{},{}", fmt(0.5 * (a[i] + b[i])), fmt(res.differences[i]));
                }
                let _ = writeln!(
                    ba_sum,
                    "{tissue},{cmp},{},{},{},{},{}",
                    cases.len(),
                    fmt(res.bias),
                    fmt(res.sd),
                    fmt(res.loa_low),
                    fmt(res.loa_high)
                );
            }
        }
        outputs.write(&self.dir.report_path("adc_table.csv"), table.as_bytes())?;
        outputs.write(&self.dir.report_path("bland_altman.csv"), ba.as_bytes())?;
        outputs.write(&self.dir.report_path("bland_altman_summary.csv"), ba_sum.as_bytes())
    }
}

fn parse(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Config(format!("cannot parse number '{s}'")))
}

/// `n,mean,sd,median,iqr`; all `inf` when any value is infinite.
fn stat_cells(v: &[f64]) -> Result<String> {
    if v.iter().any(|x| x.is_infinite()) {
        return Ok(format!("{},inf,inf,inf,inf", v.len()));
    }
    let s = summarize(v)?;
    Ok(format!("{},{},{},{},{}", s.n_pixels, fmt(s.mean), fmt(s.sd), fmt(s.median), fmt(s.iqr)))
}

/// Data rows of a CSV written by this tool (no quoting).
fn read_csv(path: &Path, producer: &str) -> Result<Vec<Vec<String>>> {
    Ctx::require(path, producer)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().skip(1).filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect())
}
