use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use glyphfield::autodecoder::Checkpoint;
use glyphfield::config::RunConfig;
use glyphfield::field::{aa_range, rasterize_ground_truth, Supervision};
use glyphfield::geometry::detect_corners;
use glyphfield::glyph::{load_glyph, load_manifest, Alphabet};
use glyphfield::render::{
    contours_to_json, corner_region_metrics, extract_zero_level, laplacian_smoothness, median_grid, mse, predict_grid,
    read_pgm, render_bilateral, render_channel, render_implicit, resample_bilinear, soft_iou, write_pgm, CornerMetrics,
    RasterImage,
};
use glyphfield::sampling::SampleKind;
use glyphfield::trainer::{fit_latent, mix_seed, prepare_glyph, Dataset, EpochMetrics, FitSettings, Trainer};
use glyphfield::{Error, Result};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::{
    Cli, Command, EvalArgs, FitArgs, InterpolateArgs, Method, Mode, PrepareArgs, RenderArgs, SupervisionArg, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.output_dir {
        cfg.paths.output_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.train.threads = t;
    }
    match cli.command {
        Command::Prepare(a) => prepare(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Render(a) => render(cfg, a),
        Command::Interpolate(a) => interpolate(cfg, a),
        Command::Fit(a) => fit(cfg, a),
        Command::Eval(a) => eval(cfg, a),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn save_image(img: &RasterImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write_pgm(img, path)
}

/// File-name safe form of a family or label name.
fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c.to_string()
            } else {
                format!("u{:x}", c as u32)
            }
        })
        .collect()
}

/// Labels get their index in front so case-folding file systems keep
/// `a` and `A` apart.
fn label_tag(alphabet: &Alphabet, label: usize) -> String {
    let sym = alphabet.symbol(label).map(String::from).unwrap_or_default();
    format!("{label:02}-{}", slug(&sym))
}

fn resolve_label(alphabet: &Alphabet, label: &str) -> Result<usize> {
    alphabet
        .index_of(label)
        .ok_or_else(|| Error::Config(format!("label '{label}' is not in the alphabet")))
}

fn manifest_path(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.dataset.manifest.clone())
        .ok_or_else(|| Error::Config("no manifest: set dataset.manifest or pass --manifest".into()))
}

/// Prefix an error with the glyph it came from, keeping its exit class.
fn with_identity(e: Error, who: &str) -> Error {
    match e {
        Error::Io { .. } => e,
        Error::Numerical(m) => Error::Numerical(format!("{who}: {m}")),
        other => Error::Dataset(format!("{who}: {other}")),
    }
}

fn run_config_of(ck: &Checkpoint) -> Result<RunConfig> {
    serde_json::from_value(ck.config.clone()).map_err(|e| Error::Format(format!("checkpoint configuration: {e}")))
}

fn prepare(cfg: RunConfig, args: PrepareArgs) -> Result<()> {
    let manifest = manifest_path(&cfg, args.manifest)?;
    let entries = load_manifest(&manifest, &cfg.dataset.alphabet)?;
    let root = cfg.paths.output_dir.join("prepared");
    let w = cfg.field.train_width;
    let gamma = cfg.field.final_gamma();
    let sampling = cfg.train.sampling_config();
    let params = json!({
        "train_width": w,
        "aa_k": cfg.field.aa_k,
        "margin": cfg.dataset.margin,
        "corner_threshold": cfg.dataset.corner_threshold,
        "homogeneous_ratio": sampling.homogeneous_ratio,
        "min_homogeneous": sampling.min_homogeneous,
        "seed": cfg.train.seed,
    })
    .to_string();

    let mut rebuilt = 0;
    for (gi, e) in entries.iter().enumerate() {
        let who = format!("family '{}', label '{}' ({})", e.family, e.label, e.file.display());
        let bytes = fs::read(&e.file).map_err(|err| io_err(&e.file, err))?;
        let mut h = Sha256::new();
        h.update(&bytes);
        h.update(params.as_bytes());
        h.update(gi.to_le_bytes());
        let hash: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();

        let dir = root
            .join(slug(&e.family))
            .join(label_tag(&cfg.dataset.alphabet, e.label_index));
        let hash_path = dir.join("hash");
        if fs::read_to_string(&hash_path).is_ok_and(|s| s.trim() == hash) {
            continue;
        }

        let glyph = load_glyph(e, cfg.dataset.margin).map_err(|err| with_identity(err, &who))?;
        detect_corners(&glyph, cfg.dataset.corner_threshold).map_err(|err| with_identity(err, &who))?;
        let ds = Dataset::new(
            cfg.dataset.alphabet.clone(),
            vec![e.family.clone()],
            vec![(glyph, 0)],
            w,
            cfg.dataset.corner_threshold,
        )
        .map_err(|err| with_identity(err, &who))?;
        let tg = &ds.glyphs[0];
        // Same stream the trainer uses for this glyph once warm-up is over.
        let seed = mix_seed(mix_seed(cfg.train.seed, gi as u64), gamma.to_bits());
        let prep = prepare_glyph(tg, w, gamma, &sampling, seed).map_err(|err| with_identity(err, &who))?;

        save_image(&prep.raster, &dir.join("raster.pgm"))?;
        let sdf = glyphfield::field::Grid::new(1, w, w, tg.sdf.iter().map(|&d| d as f32).collect())?;
        sdf.save(&dir.join("sdf.grid"))?;
        let templates: Vec<_> = prep
            .templates
            .iter()
            .map(|t| {
                json!({
                    "corner": t.corner,
                    "window": t.window,
                    "normals": t.normals,
                    "points": t.points,
                    "quadrants": t.quadrants,
                    "targets": t.targets,
                    "clipped": t.clipped,
                    "supervised": t.supervised().count(),
                })
            })
            .collect();
        write_json(&dir.join("templates.json"), &json!(templates))?;
        write_json(
            &dir.join("samples.json"),
            &json!({
                "gamma": gamma,
                "seed": prep.samples.seed,
                "edge": prep.samples.count(SampleKind::Edge),
                "corner": prep.samples.count(SampleKind::Corner),
                "homogeneous": prep.samples.count(SampleKind::Homogeneous),
            }),
        )?;
        write_file(&hash_path, hash.as_bytes())?;
        log::info!("prepared {who}: {} corners", prep.templates.len());
        rebuilt += 1;
    }
    write_json(
        &cfg.paths.output_dir.join("effective_config.json"),
        &serde_json::to_value(&cfg)?,
    )?;
    println!("{rebuilt} rebuilt, {} unchanged", entries.len() - rebuilt);
    Ok(())
}

fn train(mut cfg: RunConfig, args: TrainArgs) -> Result<()> {
    let manifest = manifest_path(&cfg, args.manifest)?;
    cfg.dataset.manifest = Some(manifest.clone());
    match args.mode {
        Some(Mode::N1) => cfg.field.channels = 1,
        Some(Mode::N3) => cfg.field.channels = 3,
        None => {}
    }
    match args.supervision {
        Some(SupervisionArg::Sdf) => cfg.train.supervision = Supervision::Sdf,
        Some(SupervisionArg::Pixel) => cfg.train.supervision = Supervision::Pixel,
        None => {}
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if args.no_warmup {
        cfg.train.warmup.enabled = false;
    }
    cfg.validate()?;

    let out = cfg.paths.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    write_json(&out.join("effective_config.json"), &serde_json::to_value(&cfg)?)?;
    let ck_path = out.join("checkpoint.gfck");
    let log_path = out.join("train_log.csv");

    let ds = Dataset::from_manifest(&manifest, &cfg)?;
    let mut trainer = match &args.resume {
        Some(p) => Trainer::resume(cfg.clone(), ds, Checkpoint::load(p)?)?,
        None => Trainer::new(cfg.clone(), ds)?,
    };

    // Keep log rows from before the starting epoch so a resumed run's log
    // matches an uninterrupted one.
    let mut log_text = String::from(EpochMetrics::CSV_HEADER);
    log_text.push('\n');
    if trainer.epoch > 0 {
        if let Ok(old) = fs::read_to_string(&log_path) {
            for line in old.lines().skip(1) {
                let epoch: Option<usize> = line.split(',').next().and_then(|f| f.parse().ok());
                if epoch.is_some_and(|e| e < trainer.epoch) {
                    log_text.push_str(line);
                    log_text.push('\n');
                }
            }
        }
    }
    write_file(&log_path, log_text.as_bytes())?;
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;

    let total = cfg.train.epochs;
    let stop = args.stop_at.unwrap_or(total).min(total);
    let every = (total / 20).max(1);
    let mut result = Ok(());
    while trainer.epoch < stop {
        let m = match trainer.run_epoch() {
            Ok(m) => m,
            Err(e) => {
                result = Err(e);
                break;
            }
        };
        writeln!(log, "{}", m.csv_row()).map_err(|e| io_err(&log_path, e))?;
        if trainer.epoch % every == 0 || trainer.epoch == total {
            log::info!(
                "epoch {}/{total}: loss {:.5} (global {:.5}, local {:.5}, grad {:.5}), gamma {:.4}",
                trainer.epoch,
                m.loss_total,
                m.loss_global,
                m.loss_local,
                m.loss_grad,
                m.gamma
            );
        }
    }
    match result {
        Ok(()) => {
            trainer.checkpoint()?.save(&ck_path)?;
            println!("wrote {} after {} epochs", ck_path.display(), trainer.epoch);
            Ok(())
        }
        Err(e @ Error::Numerical(_)) => {
            // The failing step was not applied, so this is the last good state.
            trainer.checkpoint()?.save(&ck_path)?;
            eprintln!(
                "saved last good state (epoch {}) to {}",
                trainer.epoch,
                ck_path.display()
            );
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn render(cfg: RunConfig, args: RenderArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let run = run_config_of(&ck)?;
    let family = ck.family_index(&args.family)?;
    let label = resolve_label(&ck.alphabet, &args.label)?;
    let z = ck.latents.code(family);
    let (aa_k, sup) = (run.field.aa_k, run.train.supervision);
    let level = match sup {
        Supervision::Sdf => 0.0,
        Supervision::Pixel => 0.5,
    };
    let dir = cfg.paths.output_dir.join("render");
    let stem = format!(
        "{}_{}_{}",
        slug(&args.family),
        label_tag(&ck.alphabet, label),
        args.method.name()
    );
    let train_grid = match args.method {
        Method::Bilateral => Some(predict_grid(&ck.network, z, label, run.field.train_width)?),
        Method::Implicit => None,
    };

    for &w in &args.res {
        let img = match &train_grid {
            None => render_implicit(&ck.network, z, label, w, aa_k, sup)?,
            Some(g) => {
                if w < 8 {
                    return Err(Error::Config(format!("render width {w} is below 8")));
                }
                render_bilateral(g, w, aa_k, sup)?
            }
        };
        let path = dir.join(format!("{stem}_{w}.pgm"));
        save_image(&img, &path)?;
        println!("{}", path.display());

        if args.channels || args.contours {
            let grid = match &train_grid {
                None => predict_grid(&ck.network, z, label, w)?,
                Some(g) => resample_bilinear(g, w),
            };
            if args.channels {
                for c in 0..grid.channels {
                    save_image(
                        &render_channel(&grid, c, aa_k, sup)?,
                        &dir.join(format!("{stem}_{w}_ch{c}.pgm")),
                    )?;
                }
                grid.save(&dir.join(format!("{stem}_{w}.grid")))?;
            }
            if args.contours {
                let m: Vec<f64> = median_grid(&grid).iter().map(|v| v - level).collect();
                let loops = extract_zero_level(&m, w);
                write_json(
                    &dir.join(format!("{stem}_{w}_contours.json")),
                    &contours_to_json(&loops),
                )?;
            }
        }
    }
    Ok(())
}

fn interpolate(cfg: RunConfig, args: InterpolateArgs) -> Result<()> {
    if args.steps < 2 {
        return Err(Error::Config(format!("--steps must be at least 2, got {}", args.steps)));
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    let run = run_config_of(&ck)?;
    let za = ck.latents.code(ck.family_index(&args.family_a)?);
    let zb = ck.latents.code(ck.family_index(&args.family_b)?);
    let label = resolve_label(&ck.alphabet, &args.label)?;
    let dir = cfg.paths.output_dir.join("interpolate");
    let stem = format!(
        "{}_{}_{}",
        slug(&args.family_a),
        slug(&args.family_b),
        label_tag(&ck.alphabet, label)
    );
    for k in 0..args.steps {
        let t = k as f64 / (args.steps - 1) as f64;
        let z: Vec<f64> = za.iter().zip(zb).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let img = render_implicit(&ck.network, &z, label, args.res, run.field.aa_k, run.train.supervision)?;
        let path = dir.join(format!("{stem}_{k:03}.pgm"));
        save_image(&img, &path)?;
        println!("{t:.6} {}", path.display());
    }
    Ok(())
}

fn fit(cfg: RunConfig, args: FitArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let run = run_config_of(&ck)?;
    let label = resolve_label(&ck.alphabet, &args.label)?;
    let target = read_pgm(&args.target)?;
    let mask = args.mask.as_deref().map(read_pgm).transpose()?;
    let settings = FitSettings {
        aa_k: run.field.aa_k,
        supervision: run.train.supervision,
        gamma_reg: run.train.weights.gamma_reg,
        fit: cfg.train.fit,
    };
    let result = fit_latent(
        &ck.network,
        &ck.latents.mean(),
        &target,
        label,
        mask.as_ref(),
        &settings,
    )?;
    let dir = cfg.paths.output_dir.join("fit");
    write_json(
        &dir.join("latent.json"),
        &json!({
            "label": args.label,
            "latent": result.latent,
            "initial_loss": result.losses.first(),
            "final_loss": result.losses.last(),
        }),
    )?;
    let w = args.res.unwrap_or(target.width);
    for l in 0..ck.alphabet.len() {
        let img = render_implicit(&ck.network, &result.latent, l, w, run.field.aa_k, run.train.supervision)?;
        save_image(&img, &dir.join(format!("{}_{w}.pgm", label_tag(&ck.alphabet, l))))?;
    }
    println!(
        "fitted {} steps, loss {:.6} -> {:.6}; {} renders in {}",
        result.losses.len(),
        result.losses.first().copied().unwrap_or(f64::NAN),
        result.losses.last().copied().unwrap_or(f64::NAN),
        ck.alphabet.len(),
        dir.display()
    );
    Ok(())
}

const EVAL_HEADER: &str = "method,res,mse,siou,c_mse,c_siou,laplacian";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn eval(cfg: RunConfig, args: EvalArgs) -> Result<()> {
    let mut table = String::from(EVAL_HEADER);
    table.push('\n');
    if let Some(pair) = &args.compare {
        let a = read_pgm(&pair[0])?;
        let b = read_pgm(&pair[1])?;
        table.push_str(&format!(
            "image,{},{:.6},{:.6},,,\n",
            a.width,
            mse(&a, &b)?,
            soft_iou(&a, &b)?
        ));
    } else {
        let ck_path = args.checkpoint.as_ref().expect("clap requires a checkpoint");
        let ck = Checkpoint::load(ck_path)?;
        let run = run_config_of(&ck)?;
        let manifest = manifest_path(&run, args.manifest.clone())?;
        let ds = Dataset::from_manifest(&manifest, &run)?;
        let codes: Vec<usize> = ds.families.iter().map(|f| ck.family_index(f)).collect::<Result<_>>()?;
        let (aa_k, sup, tw) = (run.field.aa_k, run.train.supervision, run.field.train_width);

        let mut grids = Vec::with_capacity(ds.glyphs.len());
        let mut lap = 0.0;
        for g in &ds.glyphs {
            let grid = predict_grid(&ck.network, ck.latents.code(codes[g.family]), g.label, tw)?;
            lap += laplacian_smoothness(&median_grid(&grid), tw);
            grids.push(grid);
        }
        let lap = lap / ds.glyphs.len().max(1) as f64;

        for method in [Method::Implicit, Method::Bilateral] {
            for &w in &cfg.eval.resolutions {
                let (mut m, mut s, mut cm, mut cs, mut nc) = (0.0, 0.0, 0.0, 0.0, 0);
                for (g, grid) in ds.glyphs.iter().zip(&grids) {
                    let img = match method {
                        Method::Implicit => {
                            render_implicit(&ck.network, ck.latents.code(codes[g.family]), g.label, w, aa_k, sup)?
                        }
                        Method::Bilateral => render_bilateral(grid, w, aa_k, sup)?,
                    };
                    let truth = rasterize_ground_truth(&g.glyph, w, aa_range(aa_k, w));
                    m += mse(&img, &truth)?;
                    s += soft_iou(&img, &truth)?;
                    if let CornerMetrics::Region { mse, siou } = corner_region_metrics(&img, &truth, &g.corners)? {
                        cm += mse;
                        cs += siou;
                        nc += 1;
                    }
                }
                let n = ds.glyphs.len().max(1) as f64;
                let corner = |v: f64| (nc > 0).then(|| v / nc as f64);
                table.push_str(&format!(
                    "{},{w},{:.6},{:.6},{},{},{lap:.6}\n",
                    method.name(),
                    m / n,
                    s / n,
                    fmt_opt(corner(cm)),
                    fmt_opt(corner(cs)),
                ));
            }
        }
    }
    print!("{table}");
    write_file(&cfg.paths.output_dir.join("eval.csv"), table.as_bytes())
}
