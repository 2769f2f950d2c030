use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpn_core::arch::{dual_vs_split_suite, parse_spec, preset, reference, ArchSpec, Init, Network, Pooling, PUBLISHED};
use dpn_core::complexity::{analyze, check_savings, compare_report, compare_to_reference, MADD_TOLERANCE, PARAM_TOLERANCE};
use dpn_core::gradcheck::run_suite;
use dpn_core::hornn::equivalence_report;
use dpn_core::train::{
    checkpoint_of, evaluate, ingest_folder, load_checkpoint, refine_bn, synth_dataset, train, write_metrics_csv,
    Checkpoint, Dataset, Normalization, SizePolicy, TrainConfig,
};
use dpn_core::{Real, Tensor};

use crate::{
    ArchArgs, Cli, Command, ComplexityArgs, DataArgs, EvalArgs, Format, GradcheckArgs, Outcome, Policy, PoolingArg,
    Precision, Status, TrainArgs, Verify,
};

const DEFAULT_RUN_DIR: &str = "dpn-out";
const MEAN_TENSOR: &str = "input.mean";
const STD_TENSOR: &str = "input.std";

pub fn run(cli: Cli) -> Result<Outcome> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Arch(a) => arch(a),
        Command::Complexity(a) => complexity(a, out),
        Command::Verify(v) => verify(v, cli.seed, out),
        Command::Gradcheck(a) => gradcheck(a, cli.seed, out),
        Command::Train(a) => match a.data.precision {
            Precision::F32 => train_cmd::<f32>(a, cli.seed, out),
            Precision::F64 => train_cmd::<f64>(a, cli.seed, out),
        },
        Command::Eval(a) => match a.data.precision {
            Precision::F32 => eval_cmd::<f32>(a, cli.seed, out),
            Precision::F64 => eval_cmd::<f64>(a, cli.seed, out),
        },
    }
}

fn outcome(summary: String, status: Status) -> Result<Outcome> {
    Ok(Outcome { summary, status })
}

fn verdict(passed: bool) -> Status {
    if passed {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// A spec file wins over a preset name.
fn resolve_arch(name: Option<&str>, input: Option<&Path>) -> Result<ArchSpec> {
    match (input, name) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_spec(&text).with_context(|| format!("in {}", path.display()))
        }
        (None, Some(name)) => Ok(preset(name)?),
        (None, None) => bail!("give a preset name or --input <FILE>"),
    }
}

fn write_output(dir: Option<&Path>, file: &str, body: &str) -> Result<()> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(file);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn render(format: Format, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    match format {
        Format::Csv => {
            s += &header.join(",");
            s.push('\n');
            for r in rows {
                s += &r.join(",");
                s.push('\n');
            }
        }
        Format::Table => {
            let widths: Vec<usize> = (0..header.len())
                .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
                .collect();
            let line = |cells: Vec<&str>| {
                let mut l = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ");
                l.truncate(l.trim_end().len());
                l + "\n"
            };
            s += &line(header.to_vec());
            for r in rows {
                s += &line(r.iter().map(String::as_str).collect());
            }
        }
    }
    s
}

fn arch(a: ArchArgs) -> Result<Outcome> {
    let spec = resolve_arch(a.arch.as_deref(), a.input.as_deref())?;
    let extents = spec.stage_extents(a.hw)?;
    let rows: Vec<Vec<String>> = spec
        .stages
        .iter()
        .zip(&extents)
        .enumerate()
        .map(|(i, (s, hw))| {
            vec![
                (i + 1).to_string(),
                s.family.to_string(),
                s.blocks.to_string(),
                s.bottleneck.to_string(),
                s.groups.to_string(),
                s.residual_width.to_string(),
                s.dense_increment.to_string(),
                s.stride.to_string(),
                format!("{hw}x{hw}"),
            ]
        })
        .collect();
    let header = ["stage", "family", "blocks", "bottleneck", "groups", "R", "k", "stride", "out_hw"];
    if a.format == Format::Table {
        print!("{}", spec.to_text());
        println!();
    }
    print!("{}", render(a.format, &header, &rows));
    let params = analyze(&spec, a.hw)?.total_params;
    outcome(format!("arch {}: {} stages, {params} params", spec.name, spec.stages.len()), Status::Ok)
}

fn complexity(a: ComplexityArgs, out: Option<&Path>) -> Result<Outcome> {
    let spec = resolve_arch(a.arch.as_deref(), a.input.as_deref())?;
    let report = analyze(&spec, a.hw)?;
    match a.format {
        Format::Table => {
            print!("{}", report.to_table());
            println!("convention: {}", report.convention);
        }
        Format::Csv => print!("{}", report.to_csv()),
    }
    write_output(out, &format!("{}.complexity.csv", spec.name), &report.to_csv())?;
    let totals = format!(
        "complexity {}: params {:.3}e6 madds {:.3}e9",
        spec.name,
        report.total_params as f64 / 1e6,
        report.total_madds as f64 / 1e9
    );
    // Published figures exist only for named presets counted at 224.
    let published = if a.input.is_none() && a.hw == 224 { a.arch.as_deref().and_then(reference) } else { None };
    let Some(r) = published else {
        return outcome(totals, Status::Ok);
    };
    let (p, m) = match a.tol {
        Some(t) => (
            compare_to_reference(report.total_params as f64, r.params, t)?,
            compare_to_reference(report.total_madds as f64, r.madds, t)?,
        ),
        None => compare_report(&report, r)?,
    };
    if a.format == Format::Table {
        println!("params {p}");
        println!("madds  {m}");
    }
    outcome(format!("{totals} (ref {:.1}e6 / {:.1}e9)", r.params / 1e6, r.madds / 1e9), verdict(p.passed && m.passed))
}

fn verify(v: Verify, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    match v {
        Verify::DualVsSplit { trials, tol, format } => {
            if trials == 0 {
                bail!("--trials must be at least 1");
            }
            let seeds: Vec<u64> = (0..trials as u64).map(|i| seed + i).collect();
            let reports = dual_vs_split_suite(&seeds)?;
            let rows: Vec<Vec<String>> = reports
                .iter()
                .map(|r| {
                    vec![
                        r.case.clone(),
                        r.seed.to_string(),
                        format!("{:.3e}", r.deviation.forward),
                        format!("{:.3e}", r.deviation.gradient),
                        if r.deviation.max() <= tol { "PASS" } else { "FAIL" }.to_string(),
                    ]
                })
                .collect();
            let header = ["case", "seed", "forward", "gradient", "verdict"];
            print!("{}", render(format, &header, &rows));
            write_output(out, "dual-vs-split.csv", &render(Format::Csv, &header, &rows))?;
            let worst = reports.iter().map(|r| r.deviation.max()).fold(0.0, f64::max);
            outcome(
                format!("verify dual-vs-split: max deviation {worst:.3e} over {trials} seeds (tol {tol:e})"),
                verdict(worst <= tol),
            )
        }
        Verify::ResidualVsDense { trials, tol, steps, dim, precision, format } => {
            let report = match precision {
                Precision::F64 => equivalence_report::<f64>(steps, dim, trials, seed, tol)?,
                Precision::F32 => equivalence_report::<f32>(steps, dim, trials, seed, tol)?,
            };
            let rows: Vec<Vec<String>> =
                report.per_step.iter().enumerate().map(|(k, d)| vec![(k + 1).to_string(), format!("{d:.3e}")]).collect();
            let header = ["step", "max_deviation"];
            print!("{}", render(format, &header, &rows));
            write_output(out, "residual-vs-dense.csv", &render(Format::Csv, &header, &rows))?;
            outcome(
                format!(
                    "verify residual-vs-dense: max deviation {:.3e} over {trials} trials, K={steps}, dim={dim} (tol {tol:e})",
                    report.max_deviation
                ),
                verdict(report.passed),
            )
        }
        Verify::Table1 { format } => {
            let mut rows = Vec::new();
            let mut all = true;
            for name in PUBLISHED {
                let report = analyze(&preset(name)?, 224)?;
                let r = reference(name).expect("published preset has a reference");
                let (p, m) = compare_report(&report, r)?;
                all &= p.passed && m.passed;
                for (what, v) in [("params", &p), ("madds", &m)] {
                    rows.push(vec![
                        name.to_string(),
                        what.to_string(),
                        format!("{:.0}", v.value),
                        format!("{:.0}", v.reference),
                        format!("{:+.2}%", 100.0 * v.deviation),
                        format!("{:.0}%", 100.0 * v.tolerance),
                        if v.passed { "PASS" } else { "FAIL" }.to_string(),
                    ]);
                }
            }
            let header = ["arch", "metric", "value", "reference", "deviation", "tolerance", "verdict"];
            print!("{}", render(format, &header, &rows));
            let mut csv = render(Format::Csv, &header, &rows);
            let savings = check_savings(224)?;
            if format == Format::Table {
                println!();
            }
            let mut srows = Vec::new();
            for c in &savings {
                all &= c.passed;
                srows.push(vec![
                    c.claim.model.to_string(),
                    c.claim.baseline.to_string(),
                    if c.claim.madds { "madds" } else { "params" }.to_string(),
                    format!("{:.2}", c.measured),
                    format!("{:.0}", c.claim.percent),
                    if c.passed { "PASS" } else { "FAIL" }.to_string(),
                ]);
            }
            let sheader = ["model", "baseline", "metric", "fewer_pct", "claimed_pct", "verdict"];
            print!("{}", render(format, &sheader, &srows));
            let _ = write!(csv, "\n{}", render(Format::Csv, &sheader, &srows));
            write_output(out, "table1.csv", &csv)?;
            outcome(
                format!(
                    "verify table1: {} architectures (tol {:.0}% params, {:.0}% madds) and {} savings claims",
                    PUBLISHED.len(),
                    100.0 * PARAM_TOLERANCE,
                    100.0 * MADD_TOLERANCE,
                    savings.len()
                ),
                verdict(all),
            )
        }
    }
}

fn gradcheck(a: GradcheckArgs, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let checks = run_suite(seed, a.trials, a.tol)?;
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![c.op.to_string(), c.trials.to_string(), format!("{:.3e}", c.worst), if c.passed() { "PASS" } else { "FAIL" }.to_string()]
        })
        .collect();
    let header = ["op", "trials", "max_rel_error", "verdict"];
    print!("{}", render(a.format, &header, &rows));
    write_output(out, "gradcheck.csv", &render(Format::Csv, &header, &rows))?;
    let worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    let passed = checks.iter().all(|c| c.passed());
    outcome(
        format!("gradcheck: {} ops x {} trials, max relative error {worst:.3e} (tol {:e})", checks.len(), a.trials, a.tol),
        verdict(passed),
    )
}

fn policy(p: Policy) -> SizePolicy {
    match p {
        Policy::Exact => SizePolicy::Exact,
        Policy::Crop => SizePolicy::Crop,
        Policy::Resize => SizePolicy::Resize,
    }
}

/// Synthetic blobs, or a manifest standardized with `norm` when given.
fn load_data<T: Real>(d: &DataArgs, classes: usize, seed: u64, norm: Option<&Normalization>) -> Result<(Dataset<T>, Option<Normalization>)> {
    if d.data == "synthetic" {
        return Ok((synth_dataset(classes, d.samples, seed, d.hw)?, None));
    }
    let manifest = PathBuf::from(&d.data);
    let root = match &d.root {
        Some(r) => r.clone(),
        None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let (ds, n) = ingest_folder(&root, &manifest, d.hw, policy(d.policy), Some(classes), norm)?;
    Ok((ds, Some(n)))
}

fn model_spec(arch: &str, input: Option<&Path>, classes: Option<usize>) -> Result<ArchSpec> {
    let mut spec = resolve_arch(Some(arch), input)?;
    if let Some(k) = classes {
        spec.classifier.classes = k;
        spec.validate()?;
    }
    Ok(spec)
}

fn train_cmd<T: Real>(a: TrainArgs, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    let spec = model_spec(&a.arch, a.input.as_deref(), a.classes)?;
    let mut cfg = TrainConfig { seed, batch_size: a.data.batch, ..TrainConfig::for_arch(&spec.name) };
    cfg.precision = T::DTYPE;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = a.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    cfg.random_crop = !a.no_crop;
    cfg.flip = !a.no_flip;
    cfg.validate()?;

    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_DIR));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let metrics_path = dir.join("metrics.csv");
    // The header goes out before training so an aborted run still leaves a valid file.
    write_metrics_csv(&metrics_path, &[])?;

    let (data, norm) = load_data::<T>(&a.data, spec.classifier.classes, seed, None)?;
    let mut net = Network::<T>::new(&spec, Init::Random { seed })?;
    println!("epoch,lr,loss,top1,top5");
    let log = train(&mut net, &data, &cfg, |m| {
        println!("{},{:.6e},{:.6},{:.4},{:.4}", m.epoch, m.lr, m.loss, m.top1, m.top5);
    })?;
    write_metrics_csv(&metrics_path, &log)?;
    if a.refine_bn {
        refine_bn(&mut net, &data, cfg.batch_size)?;
    }

    let mut ck = checkpoint_of(&net);
    if let Some(n) = norm {
        ck.tensors.push((MEAN_TENSOR.into(), Tensor::new(vec![3], n.mean.iter().map(|&v| T::lit(v)).collect())?));
        ck.tensors.push((STD_TENSOR.into(), Tensor::new(vec![3], n.std.iter().map(|&v| T::lit(v)).collect())?));
    }
    ck.save(&dir.join("checkpoint.dpnc"))?;
    fs::write(dir.join("arch.txt"), spec.to_text())?;

    let last = log.last().map(|m| format!(", final train top1 {:.4} loss {:.4}", m.top1, m.loss)).unwrap_or_default();
    outcome(format!("train {}: {} epochs on {} samples{last}, outputs in {}", spec.name, log.len(), data.len(), dir.display()), Status::Ok)
}

fn eval_cmd<T: Real>(a: EvalArgs, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    let spec = model_spec(&a.arch, a.input.as_deref(), a.classes)?;
    let ck = Checkpoint::<T>::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let mut net = Network::<T>::new(&spec, Init::Zeros)?;
    load_checkpoint(&mut net, &ck)?;
    let channel = |name: &str| -> Option<[f64; 3]> {
        let t = ck.get(name)?;
        let v: Vec<f64> = t.data().iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
        v.try_into().ok()
    };
    let norm = match (channel(MEAN_TENSOR), channel(STD_TENSOR)) {
        (Some(mean), Some(std)) => Some(Normalization { mean, std }),
        _ => None,
    };
    let (data, _) = load_data::<T>(&a.data, spec.classifier.classes, seed, norm.as_ref())?;
    let pooling = match a.pooling {
        Some(PoolingArg::Avg) => Pooling::Avg,
        Some(PoolingArg::Meanmax) => Pooling::MeanMax,
        None => spec.classifier.pooling,
    };
    let acc = evaluate(&net, &data, pooling, a.data.batch)?;
    let body = format!("samples,pooling,top1,top5\n{},{pooling},{:.4},{:.4}\n", acc.samples, acc.top1, acc.top5);
    print!("{body}");
    write_output(out, "eval.csv", &body)?;
    outcome(
        format!("eval {}: top1 {:.4} top5 {:.4} on {} samples ({pooling} pooling)", spec.name, acc.top1, acc.top5, acc.samples),
        Status::Ok,
    )
}
