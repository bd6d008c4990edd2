//! One function per subcommand. Each writes its files into `--out` and a
//! manifest beside them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use icessm::data::{
    self, degrade, read_grid, split_chronological, synth_generate, windows, write_grid,
    DegradeConfig, Grid3, IdwConfig, PreprocessOptions, SampleWindow, SynthConfig,
};
use icessm::metrics::{self, bias_map, write_bias_pgm, write_bias_ppm, EvalOptions};
use icessm::model::{
    self, check_params, write_history_csv, AdamWConfig, ModelConfig, TrainConfig, TrainData,
};
use icessm::nd::{ParamStore, Tensor};
use icessm::sfc::{locality_score, routes, write_golden, ScanKind};
use icessm::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::{
    BenchArgs, EvalArgs, ModelArgs, PredictArgs, PreprocessArgs, RecurseArgs, ScanArgs, Split,
    SynthArgs, TrainArgs,
};

const GRID_FILE: &str = "grid.sicg";
const MODEL_CONFIG: &str = "model.json";
const CHECKPOINT: &str = "model.ckpt";

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn scan(a: &ScanArgs) -> Result<()> {
    let order = a.kind.generate(a.dims)?;
    let all = routes(&order, a.routes)?;
    out_dir(&a.out)?;
    let mut out = create(&a.out, "order.txt")?;
    write_golden(&mut out, &all)?;
    out.flush()?;
    #[derive(Serialize)]
    struct Config {
        kind: &'static str,
        dims: String,
        routes: usize,
    }
    let config = Config {
        kind: a.kind.name(),
        dims: a.dims.to_string(),
        routes: a.routes,
    };
    Manifest::new("scan", None, config, &["order.txt"])?.write(&a.out)
}

pub fn bench_locality(a: &BenchArgs) -> Result<()> {
    out_dir(&a.out)?;
    let mut out = create(&a.out, "locality.csv")?;
    writeln!(
        out,
        "kind,mean_gap,geo_mean_gap,max_gap,mean_gap_t,mean_gap_h,mean_gap_w,pairs"
    )?;
    for kind in ScanKind::ALL {
        let s = locality_score(&kind.generate(a.dims)?);
        writeln!(
            out,
            "{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{}",
            kind.name(),
            s.mean_gap,
            s.geo_mean_gap,
            s.max_gap,
            s.axis_mean_gap[0],
            s.axis_mean_gap[1],
            s.axis_mean_gap[2],
            s.pairs
        )?;
        println!(
            "{:<10} mean gap {:>9.4}  geometric {:>7.4}",
            kind.name(),
            s.mean_gap,
            s.geo_mean_gap
        );
    }
    out.flush()?;
    let config = serde_json::json!({ "dims": a.dims.to_string() });
    Manifest::new("bench-locality", None, config, &["locality.csv"])?.write(&a.out)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let [t, h, w] = a.dims.as_array();
    let cfg = SynthConfig {
        seed: a.seed,
        t,
        h,
        w,
        n_blobs: a.blobs,
        drift: a.drift,
        start_day: a.start_day,
    };
    let clean = synth_generate(&cfg)?;
    let degrade_cfg = a.raw.then_some(DegradeConfig {
        missing_fraction: a.missing,
        gap_days: a.gap_days,
        seed: a.seed,
    });
    let grid = match &degrade_cfg {
        Some(d) => degrade(&clean, d)?,
        None => clean,
    };
    out_dir(&a.out)?;
    write_grid(&grid, a.out.join(GRID_FILE))?;
    let config = serde_json::json!({ "synth": cfg, "degrade": degrade_cfg });
    Manifest::new("synth", Some(a.seed), config, &[GRID_FILE])?.write(&a.out)
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let raw = read_grid(&a.input)?;
    let opts = PreprocessOptions {
        land_threshold: a.land_threshold,
        idw: (!a.no_idw).then(IdwConfig::default),
    };
    let grid = data::preprocess(&raw, &opts)?;
    let (t, h, w) = grid.dims();
    println!(
        "{} frames of {h}x{w} ({} added), {} land cells",
        t,
        t - raw.dims().0,
        grid.land().iter().filter(|&&l| l).count()
    );
    out_dir(&a.out)?;
    write_grid(&grid, a.out.join(GRID_FILE))?;
    let config = serde_json::json!({ "input": a.input, "options": opts });
    Manifest::new("preprocess", None, config, &[GRID_FILE])?.write(&a.out)
}

fn model_config(m: &ModelArgs) -> Result<ModelConfig> {
    let cfg = ModelConfig {
        in_len: m.in_len,
        out_len: m.out_len,
        channels: 1,
        hidden: m.hidden,
        n_fssm: m.fssm,
        n_routes: m.routes,
        scan: m.kind,
        lambda: m.lambda,
        head: m.head,
        basis: m.basis,
        fusion: m.fusion,
        state_size: m.state_size,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Split recorded with a trained model so evaluation reuses it.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct SplitFractions {
    train: f64,
    val: f64,
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    model: ModelConfig,
    split: SplitFractions,
}

fn complete_grid(path: &Path) -> Result<Grid3> {
    let g = read_grid(path)?;
    match g.count_missing() {
        0 => Ok(g),
        n => Err(Error::Data(format!(
            "{} has {n} missing values; run `icessm preprocess` first",
            path.display()
        ))),
    }
}

type Splits = (Vec<SampleWindow>, Vec<SampleWindow>, Vec<SampleWindow>);

fn split_windows(g: &Grid3, cfg: &ModelConfig, split: SplitFractions) -> Result<Splits> {
    split_chronological(
        &windows(g, cfg.in_len, cfg.out_len, 1)?,
        split.train,
        split.val,
    )
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = model_config(&a.model)?;
    let grid = complete_grid(&a.data)?;
    let split = SplitFractions {
        train: a.train_frac,
        val: a.val_frac,
    };
    let (train, val, test) = split_windows(&grid, &cfg, split)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "{} training and {} validation windows; the series is too short for this split",
            train.len(),
            val.len()
        )));
    }
    let tcfg = TrainConfig {
        optim: AdamWConfig {
            lr: a.lr,
            ..Default::default()
        },
        batch_size: a.batch,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
    };
    println!(
        "{} train, {} validation, {} test windows",
        train.len(),
        val.len(),
        test.len()
    );
    let ocean = grid.ocean();
    let outcome = model::train(
        &cfg,
        &tcfg,
        TrainData {
            train: &train,
            val: &val,
            ocean: Some(&ocean),
        },
    )?;
    for row in &outcome.history {
        println!(
            "epoch {:>3}  loss {:.6}  val MAE {:.4}%",
            row.epoch, row.train_loss, row.val_mae
        );
    }
    println!(
        "best epoch {} with validation MAE {:.4}%",
        outcome.best_epoch, outcome.best_val_mae
    );

    out_dir(&a.out)?;
    outcome.params.save(a.out.join(CHECKPOINT))?;
    let saved = SavedModel { model: cfg, split };
    serde_json::to_writer_pretty(create(&a.out, MODEL_CONFIG)?, &saved)?;
    let mut hist = create(&a.out, "history.csv")?;
    write_history_csv(&outcome.history, &mut hist)?;
    hist.flush()?;
    let config = serde_json::json!({
        "data": a.data,
        "model": saved.model,
        "train": tcfg,
        "split": split,
        "best_epoch": outcome.best_epoch,
        "best_val_mae": outcome.best_val_mae,
    });
    Manifest::new(
        "train",
        Some(a.seed),
        config,
        &[CHECKPOINT, MODEL_CONFIG, "history.csv"],
    )?
    .write(&a.out)
}

fn load_model(dir: &Path) -> Result<(SavedModel, ParamStore)> {
    let path = dir.join(MODEL_CONFIG);
    let file = File::open(&path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let saved: SavedModel = serde_json::from_reader(std::io::BufReader::new(file))?;
    saved.model.validate()?;
    let path = dir.join(CHECKPOINT);
    if !path.exists() {
        return Err(Error::Data(format!(
            "missing checkpoint {}",
            path.display()
        )));
    }
    let params = ParamStore::load(&path)?;
    check_params(&saved.model, &params)?;
    Ok((saved, params))
}

/// Frames `[start, start + len)` as `[len, 1, H, W]`.
fn frames(g: &Grid3, start: usize, len: usize) -> Result<Tensor> {
    let (_, h, w) = g.dims();
    let plane = h * w;
    Tensor::new(
        vec![len, 1, h, w],
        g.frames().data()[start * plane..(start + len) * plane].to_vec(),
    )
}

fn input_window(g: &Grid3, cfg: &ModelConfig, at: Option<usize>) -> Result<(usize, Tensor)> {
    let t = g.dims().0;
    if t < cfg.in_len {
        return Err(Error::Data(format!(
            "series of {t} frames is shorter than the {}-day input",
            cfg.in_len
        )));
    }
    let at = at.unwrap_or(t - cfg.in_len);
    if at + cfg.in_len > t {
        return Err(Error::InvalidArgument(format!(
            "window at {at} of {} frames runs past the {t}-frame series",
            cfg.in_len
        )));
    }
    Ok((at, frames(g, at, cfg.in_len)?))
}

/// A forecast `[L, 1, H, W]` as a grid dated after the last input day.
fn forecast_grid(g: &Grid3, last_input: usize, forecast: &Tensor) -> Result<Grid3> {
    let (_, h, w) = g.dims();
    let l = forecast.shape()[0];
    let day = g.dates()[last_input];
    Grid3::new(
        forecast.clone().reshape(vec![l, h, w])?,
        (1..=l as i64).map(|k| day + k).collect(),
        g.land().to_vec(),
    )
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let (saved, params) = load_model(&a.model)?;
    let cfg = &saved.model;
    let grid = complete_grid(&a.data)?;
    let (at, x) = input_window(&grid, cfg, a.at)?;
    let f = model::predict(cfg, &params, &x)?;
    let last = at + cfg.in_len - 1;
    out_dir(&a.out)?;
    write_grid(
        &forecast_grid(&grid, last, &f.mean)?,
        a.out.join("forecast.sicg"),
    )?;
    let mut outputs = vec!["forecast.sicg"];
    if let Some(sigma) = &f.sigma {
        write_grid(
            &forecast_grid(&grid, last, sigma)?,
            a.out.join("sigma.sicg"),
        )?;
        outputs.push("sigma.sicg");
    }
    println!(
        "forecast of {} days after day {}",
        cfg.out_len,
        grid.dates()[last]
    );
    let config = serde_json::json!({ "model": a.model, "data": a.data, "at": at, "config": cfg });
    Manifest::new("predict", None, config, &outputs)?.write(&a.out)
}

pub fn recurse(a: &RecurseArgs) -> Result<()> {
    let (saved, params) = load_model(&a.model)?;
    let cfg = &saved.model;
    let grid = complete_grid(&a.data)?;
    let (at, x) = input_window(&grid, cfg, a.at)?;
    let f = model::recursive_forecast(cfg, &params, &x, a.steps)?;
    out_dir(&a.out)?;
    write_grid(
        &forecast_grid(&grid, at + cfg.in_len - 1, &f)?,
        a.out.join("forecast.sicg"),
    )?;
    println!("{} chained windows, {} days", a.steps, f.shape()[0]);
    let config = serde_json::json!({ "model": a.model, "data": a.data, "at": at, "steps": a.steps, "config": cfg });
    Manifest::new("recurse", None, config, &["forecast.sicg"])?.write(&a.out)
}

/// Forecast and truth frames `[L, H, W]` for the dates of `forecast`.
fn align(forecast: &Grid3, truth: &Grid3) -> Result<(Tensor, Tensor)> {
    let (l, h, w) = forecast.dims();
    if truth.dims().1 != h || truth.dims().2 != w {
        return Err(Error::Shape(format!(
            "forecast frames {h}x{w} do not match truth frames {}x{}",
            truth.dims().1,
            truth.dims().2
        )));
    }
    let mut out = Vec::with_capacity(l * h * w);
    for day in forecast.dates() {
        let Some(t) = truth.dates().iter().position(|d| d == day) else {
            return Err(Error::Data(format!("truth has no frame for day {day}")));
        };
        out.extend_from_slice(truth.frame(t));
    }
    Ok((forecast.frames().clone(), Tensor::new(vec![l, h, w], out)?))
}

fn mean_bias(pairs: &[(Tensor, Tensor)], ocean: &[bool]) -> Result<Tensor> {
    let plane = ocean.len();
    let mut sum = vec![0.0f64; plane];
    let mut n = 0usize;
    for (p, y) in pairs {
        let b = bias_map(p, y)?;
        for frame in b.data().chunks(plane) {
            for (s, v) in sum.iter_mut().zip(frame) {
                *s += *v as f64;
            }
            n += 1;
        }
    }
    let (h, w) = {
        let s = pairs[0].0.shape();
        (s[s.len() - 2], s[s.len() - 1])
    };
    let data = sum
        .iter()
        .zip(ocean)
        .map(|(s, &o)| if o { (s / n as f64) as f32 } else { f32::NAN })
        .collect();
    Tensor::new(vec![h, w], data)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (pairs, ocean, source) = match (&a.model, &a.data, &a.forecast, &a.truth) {
        (Some(dir), Some(data), None, None) => {
            let (saved, params) = load_model(dir)?;
            let grid = complete_grid(data)?;
            let (train, val, test) = split_windows(&grid, &saved.model, saved.split)?;
            let chosen = match a.split {
                Split::Train => train,
                Split::Val => val,
                Split::Test => test,
                Split::All => windows(&grid, saved.model.in_len, saved.model.out_len, 1)?,
            };
            if chosen.is_empty() {
                return Err(Error::Data(format!(
                    "the {:?} split has no windows",
                    a.split
                )));
            }
            let pairs = chosen
                .iter()
                .map(|win| {
                    Ok((
                        model::predict(&saved.model, &params, &win.input)?.mean,
                        win.target.clone(),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let source = serde_json::json!({ "model": dir, "data": data, "split": a.split, "windows": pairs.len() });
            (pairs, grid.ocean(), source)
        }
        (None, _, Some(forecast), Some(truth)) => {
            let (f, t) = (read_grid(forecast)?, read_grid(truth)?);
            let pair = align(&f, &t)?;
            let source = serde_json::json!({ "forecast": forecast, "truth": truth });
            (vec![pair], t.ocean(), source)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "give either --model with --data, or --forecast with --truth".into(),
            ))
        }
    };
    let opts = EvalOptions {
        threshold: a.threshold,
        cell_area: a.cell_area,
    };
    let report = metrics::evaluate(&pairs, &ocean, &opts)?;
    let o = &report.overall;
    println!(
        "RMSE {:.4}%  MAE {:.4}%  NSE {}  IoU {:.4}",
        o.rmse,
        o.mae,
        o.nse.map_or("n/a".into(), |v| format!("{v:.4}%")),
        o.iou
    );
    out_dir(&a.out)?;
    serde_json::to_writer_pretty(create(&a.out, "report.json")?, &report)?;
    let bias = mean_bias(&pairs, &ocean)?;
    for (name, ppm) in [("bias.ppm", true), ("bias.pgm", false)] {
        let mut out = create(&a.out, name)?;
        if ppm {
            write_bias_ppm(&bias, &mut out)?;
        } else {
            write_bias_pgm(&bias, &mut out)?;
        }
        out.flush()?;
    }
    let config = serde_json::json!({ "source": source, "options": opts });
    Manifest::new(
        "eval",
        None,
        config,
        &["report.json", "bias.ppm", "bias.pgm"],
    )?
    .write(&a.out)
}
