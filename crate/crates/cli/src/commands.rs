use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;
use stitchwork_core::colorsplit::{self, Palette};
use stitchwork_core::dataio::{build_manifest, generate_synthetic_corpus, list_swatches, write_procedural_swatches, DatasetManifest};
use stitchwork_core::embgan::{self, Direction, GanState};
use stitchwork_core::gradsuite::{self, TOLERANCE};
use stitchwork_core::preview::{embgan_preview, neural_style_preview, split_style_preview};
use stitchwork_core::Image;
use stitchwork_service::{Service, ServiceConfig};

use crate::config::CliConfig;
use crate::exit::CliError;
use crate::{Command, GradcheckArgs, ManifestArgs, SplitArgs, StyleArgs, StyleMode, SwatchesArgs, SynthArgs, TrainArgs, TranslateArgs};

type CliResult = Result<(), CliError>;

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Overlays the flags of `command` on `cfg`.
pub fn apply_flags(mut cfg: CliConfig, command: &Command) -> CliConfig {
    match command {
        Command::Split(a) => {
            set(&mut cfg.split.max_colors, a.max_colors);
            set(&mut cfg.split.tolerance, a.tolerance);
        }
        Command::Style(a) => {
            set(&mut cfg.split.max_colors, a.max_colors);
            set(&mut cfg.split.tolerance, a.tolerance);
            set(&mut cfg.style.iterations, a.iterations);
            set(&mut cfg.style.alpha, a.alpha);
            set(&mut cfg.style.beta, a.beta);
            set(&mut cfg.style.learning_rate, a.learning_rate);
            set(&mut cfg.style.working_size, a.working_size);
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            set(&mut t.epochs, a.epochs);
            set(&mut t.image_size, a.size);
            set(&mut t.generator.embed_channels, a.k);
            set(&mut t.weights.lambda_cyc, a.lambda_cyc);
            set(&mut t.weights.lambda_idt, a.lambda_idt);
            set(&mut t.weights.lambda_emb, a.lambda_emb);
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.generator.base_filters, a.base_filters);
        }
        Command::Synth(a) => {
            set(&mut cfg.synth.n, a.n);
            set(&mut cfg.synth.size, a.size);
            set(&mut cfg.synth.eval_pairs, a.eval_pairs);
            set(&mut cfg.synth.train_fraction, a.train_fraction);
        }
        Command::Serve(a) => {
            let s = &mut cfg.serve;
            s.port = a.port.or(s.port);
            s.stitch_dir = a.stitch_dir.clone().or(s.stitch_dir.take());
            s.checkpoint = a.checkpoint.clone().or(s.checkpoint.take());
            s.data_dir = a.data_dir.clone().or(s.data_dir.take());
            s.static_dir = a.static_dir.clone().or(s.static_dir.take());
            s.workers = a.workers.or(s.workers);
        }
        Command::Translate(_) | Command::Gradcheck(_) | Command::Manifest(_) | Command::Swatches(_) => {}
    }
    cfg
}

fn load_image(path: &Path) -> Result<Image, CliError> {
    Ok(Image::load(path)?)
}

fn print_json(value: serde_json::Value) {
    println!("{value}");
}

fn hex(c: &[f32; 3]) -> String {
    let b = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", b(c[0]), b(c[1]), b(c[2]))
}

pub fn split(cfg: &CliConfig, a: &SplitArgs) -> CliResult {
    let image = load_image(&a.input)?;
    let palette = colorsplit::quantize_palette(&image, cfg.split.max_colors, cfg.split.tolerance)?;
    let regions = colorsplit::split(&image, &palette)?;
    colorsplit::check_partition(&regions, image.height(), image.width())?;
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(format!("{}: {e}", a.out_dir.display())))?;
    let mut listed = Vec::new();
    for r in &regions {
        r.sub_image.save(a.out_dir.join(format!("region-{:02}.png", r.index)))?;
        let bits: Vec<f32> = r.mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Image::new(1, image.height(), image.width(), bits)?.save(a.out_dir.join(format!("mask-{:02}.png", r.index)))?;
        listed.push(json!({ "index": r.index, "color": r.color, "hex": hex(&r.color), "pixel_count": r.pixel_count() }));
    }
    let doc = json!({
        "max_colors": cfg.split.max_colors,
        "tolerance": cfg.split.tolerance,
        "height": palette.height,
        "width": palette.width,
        "colors": palette.colors,
        "regions": listed,
    });
    let path = a.out_dir.join("palette.json");
    fs::write(&path, serde_json::to_string_pretty(&doc).expect("JSON value")).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    print_json(json!({ "regions": regions.len(), "out_dir": a.out_dir }));
    Ok(())
}

fn region_list(palette: &Palette) -> String {
    palette
        .colors
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{i}: {}", hex(c)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn style(cfg: &CliConfig, a: &StyleArgs) -> CliResult {
    let content = load_image(&a.content)?;
    let styles: Vec<Image> = a.style.iter().map(|p| load_image(p)).collect::<Result<_, _>>()?;
    let weights = cfg.style.weights();
    weights.validate()?;
    let settings = cfg.style.settings(cfg.seed);
    let log_path = a.loss_log.clone().unwrap_or_else(|| a.out.with_extension("losses.jsonl"));
    let mut log = create(&log_path)?;
    let mut write_err = None;
    let mut record = |line: serde_json::Value| {
        if write_err.is_none() {
            if let Err(e) = writeln!(log, "{line}") {
                write_err = Some(e);
            }
        }
    };
    let (output, regions) = match a.mode {
        StyleMode::Neural => {
            if styles.len() != 1 {
                return Err(CliError::usage(format!("neural mode takes exactly one --style, got {}", styles.len())));
            }
            let out = neural_style_preview(&content, &styles[0], &weights, &settings, cfg.style.working_size, &mut |step, loss| {
                record(json!({ "step": step, "total": loss }))
            })?;
            (out, 1)
        }
        StyleMode::Split => {
            let palette = colorsplit::quantize_palette(&content, cfg.split.max_colors, cfg.split.tolerance)?;
            let assigned: BTreeMap<usize, Image> = match styles.len() {
                1 => (0..palette.len()).map(|r| (r, styles[0].clone())).collect(),
                n if n == palette.len() => styles.into_iter().enumerate().collect(),
                n => {
                    return Err(CliError::usage(format!(
                        "the palette has {} regions ({}) but {n} styles were given; pass one style or one per region",
                        palette.len(),
                        region_list(&palette)
                    )))
                }
            };
            let out = split_style_preview(&content, &palette, &assigned, &weights, &settings, cfg.style.working_size, &mut |region, _, step, loss| {
                record(json!({ "region": region, "step": step, "total": loss }))
            })?;
            (out, palette.len())
        }
    };
    if let Some(e) = write_err {
        return Err(CliError::io(format!("{}: {e}", log_path.display())));
    }
    log.flush().map_err(|e| CliError::io(format!("{}: {e}", log_path.display())))?;
    output.save(&a.out)?;
    print_json(json!({ "output": a.out, "loss_log": log_path, "regions": regions }));
    Ok(())
}

pub fn train(cfg: &CliConfig, a: &TrainArgs) -> CliResult {
    cfg.train.validate()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let outcome = embgan::train(&cfg.train, &manifest, &a.checkpoint_dir, a.resume.as_deref(), &mut |s| {
        println!("{}", serde_json::to_string(s).expect("summary serializes"));
    })?;
    eprintln!(
        "checkpoint {} ({} image(s) skipped); metrics {}",
        outcome.checkpoint.display(),
        outcome.skipped,
        outcome.metrics.display()
    );
    Ok(())
}

pub fn translate(a: &TranslateArgs) -> CliResult {
    let direction: Direction = a.direction.parse()?;
    let state = GanState::load(&a.checkpoint)?;
    let image = load_image(&a.input)?;
    let out = embgan_preview(&state, &image, direction, 0)?;
    out.save(&a.out)?;
    print_json(json!({ "output": a.out, "width": out.width(), "height": out.height() }));
    Ok(())
}

pub fn gradcheck(cfg: &CliConfig, a: &GradcheckArgs) -> CliResult {
    if a.seeds == 0 || !(a.step > 0.0) {
        return Err(CliError::usage("--seeds and --step must be positive"));
    }
    let reports = gradsuite::run_suite(a.seeds, cfg.seed, a.step, a.filter.as_deref())?;
    if reports.is_empty() {
        return Err(CliError::usage("no gradient check matches the filter"));
    }
    println!("{:<28} {:>5} {:>14} {:>9}  status", "case", "seeds", "max_rel_error", "time_ms");
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<28} {:>5} {:>14.3e} {:>9}  {status}", r.name, r.seeds, r.max_rel_error, r.elapsed_ms);
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::numerical(format!(
            "relative error at or above {TOLERANCE:e} in: {}",
            failed.join(", ")
        )))
    }
}

pub fn synth(cfg: &CliConfig, a: &SynthArgs) -> CliResult {
    let s = &cfg.synth;
    let layout = generate_synthetic_corpus(s.n, s.size, cfg.seed, s.eval_pairs, &a.out_dir)?;
    let manifest = build_manifest(&layout.x_dir, &layout.y_dir, s.train_fraction, cfg.seed, true)?;
    let manifest_path = a.out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    print_json(json!({ "files_written": layout.files_written, "manifest": manifest_path }));
    Ok(())
}

pub fn manifest(cfg: &CliConfig, a: &ManifestArgs) -> CliResult {
    let m = build_manifest(&a.x, &a.y, a.train_fraction, cfg.seed, a.allow_empty_test)?;
    m.save(&a.out)?;
    print_json(json!({ "total": m.len(), "train": m.train.len(), "test": m.test.len(), "manifest": a.out }));
    Ok(())
}

pub fn swatches(a: &SwatchesArgs) -> CliResult {
    let written = write_procedural_swatches(&a.out_dir)?;
    print_json(json!({ "stitches": written.iter().map(|e| &e.id).collect::<Vec<_>>() }));
    Ok(())
}

pub fn serve(cfg: &CliConfig) -> CliResult {
    let mut sc = ServiceConfig::from_env()?;
    let s = &cfg.serve;
    set(&mut sc.port, s.port);
    set(&mut sc.stitch_dir, s.stitch_dir.clone());
    set(&mut sc.data_dir, s.data_dir.clone());
    set(&mut sc.workers, s.workers);
    sc.checkpoint = s.checkpoint.clone().or(sc.checkpoint);
    sc.static_dir = s.static_dir.clone().or(sc.static_dir);
    sc.validate()?;
    let empty = !sc.stitch_dir.exists() || list_swatches(&sc.stitch_dir).map(|l| l.is_empty()).unwrap_or(true);
    if empty {
        write_procedural_swatches(&sc.stitch_dir)?;
        eprintln!("wrote procedural stitch swatches to {}", sc.stitch_dir.display());
    }
    let service = Service::start(sc)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io(e.to_string()))?;
    runtime.block_on(service.serve()).map_err(|e| CliError::io(e.to_string()))
}

