use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use medgrad_core::checkpoint::{self, CheckpointMeta, SplitInfo, FORMAT_VERSION};
use medgrad_core::eval::evaluate;
use medgrad_core::explain::{explain as explain_one, render_compare_grid, render_panel, Method, SaliencyMap};
use medgrad_core::model::{self, ClipModel, TrainConfig};
use medgrad_core::numerics::Rng;
use medgrad_core::raster::Raster;
use medgrad_core::synthdata::{generate_dataset, ingest_external, split_dataset, ClassInfo, Dataset, SynthConfig};

use crate::config::RunConfig;
use crate::{CompareArgs, EvalArgs, ExplainArgs, GenDataArgs, InspectArgs, SplitArg, TrainArgs};

pub fn gen_data(mut cfg: RunConfig, args: &GenDataArgs) -> anyhow::Result<()> {
    if let Some(k) = args.k_classes {
        cfg.data.k_classes = k;
    }
    if let Some(n) = args.n_pairs {
        cfg.data.n_pairs = n;
    }
    cfg.validate()?;
    let synth = SynthConfig {
        k_classes: cfg.data.k_classes,
        n_pairs: cfg.data.n_pairs,
        image_size: cfg.model.image_size,
        context_length: cfg.model.context_length,
        seed: cfg.train.seed,
    };
    let data = generate_dataset(&synth)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    data.write_to_dir(&args.out)?;
    let mut per_class = vec![0usize; data.classes.len()];
    for p in &data.pairs {
        per_class[p.class_id] += 1;
    }
    println!(
        "wrote {} pairs in {} classes to {}",
        data.len(),
        data.classes.len(),
        args.out.display()
    );
    for (c, n) in data.classes.iter().zip(&per_class) {
        println!("  {:<24} {n}", c.name);
    }
    println!("content hash {}", dir_hash(&args.out)?);
    Ok(())
}

fn data_dir(cfg: &RunConfig, flag: Option<&PathBuf>) -> anyhow::Result<PathBuf> {
    flag.cloned()
        .or_else(|| cfg.data.dir.clone())
        .context("no dataset directory: pass --data or set data.dir in the config")
}

pub fn train(mut cfg: RunConfig, args: &TrainArgs) -> anyhow::Result<()> {
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    cfg.validate()?;
    let dir = data_dir(&cfg, args.data.as_ref())?;
    let data = ingest_external(&dir, cfg.model.image_size, cfg.model.context_length, None)?;
    let split = split_dataset(data.pairs.clone(), cfg.train.split_fraction, cfg.train.seed)?;
    info!(
        "split {} pairs into {} train / {} test",
        data.len(),
        split.train.len(),
        split.test.len()
    );
    let train_set = data.with_pairs(split.train);

    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = data.vocab.len();
    let mut clip = ClipModel::<f32>::new(model_cfg.clone(), cfg.train.seed)?;

    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let mut log_file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let tc = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        lr: cfg.train.lr,
        seed: cfg.train.seed,
        augment: cfg.train.augment,
    };
    let mut write_err = None;
    let history = model::train(&mut clip, &train_set, &tc, |e| {
        let line = serde_json::to_string(e).expect("epoch log serializes");
        if let Err(err) = writeln!(log_file, "{line}") {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(err).with_context(|| format!("writing {}", log_path.display()));
    }

    let mut meta = CheckpointMeta::new(&model_cfg, &data.vocab, &data.classes);
    meta.split = Some(SplitInfo {
        seed: cfg.train.seed,
        fraction: cfg.train.split_fraction,
    });
    checkpoint::save(&args.out, &clip, &meta)?;
    if let Some(last) = history.last() {
        println!(
            "epoch {}: loss {:.4} train_acc {:.4}",
            last.epoch, last.loss, last.train_acc
        );
    }
    println!(
        "checkpoint {} ({} epochs), log {}",
        args.out.display(),
        history.len(),
        log_path.display()
    );
    Ok(())
}

/// Loads `dir` tokenized with the checkpoint vocabulary and labeled with the
/// checkpoint's classes.
pub fn dataset_for_checkpoint(meta: &CheckpointMeta, dir: &Path) -> anyhow::Result<Dataset> {
    let vocab = meta.vocabulary()?;
    let ctx = meta.model.context_length;
    let mut data = ingest_external(dir, meta.model.image_size, ctx, Some(vocab.clone()))?;
    for p in &mut data.pairs {
        p.class_id = meta
            .classes
            .iter()
            .position(|c| c.name == p.class_name)
            .with_context(|| format!("pair {} has class '{}' unknown to the checkpoint", p.id, p.class_name))?;
    }
    data.classes = meta
        .classes
        .iter()
        .map(|c| {
            Ok(ClassInfo {
                name: c.name.clone(),
                prompt: c.prompt.clone(),
                prompt_tokens: vocab.tokenize(&c.prompt, ctx)?,
            })
        })
        .collect::<medgrad_core::Result<_>>()?;
    Ok(data)
}

pub fn eval(cfg: RunConfig, args: &EvalArgs) -> anyhow::Result<()> {
    let (clip, meta) = checkpoint::load(&args.checkpoint)?;
    let dir = data_dir(&cfg, args.data.as_ref())?;
    let data = dataset_for_checkpoint(&meta, &dir)?;
    let split_info = meta.split.unwrap_or(SplitInfo {
        seed: cfg.train.seed,
        fraction: cfg.train.split_fraction,
    });
    let split = split_dataset(data.pairs.clone(), split_info.fraction, split_info.seed)?;
    let pairs = match args.split {
        SplitArg::Train => split.train,
        SplitArg::Test => split.test,
    };
    let subset = data.with_pairs(pairs);
    let batch = args.batch_size.unwrap_or(cfg.train.batch_size);
    let (report, _) = evaluate(&clip, &subset, batch)?;
    let json = report.to_json();
    println!("{json}");
    if let Some(out) = &args.out {
        fs::write(out, format!("{json}\n")).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

pub fn parse_methods(list: &str) -> anyhow::Result<Vec<Method>> {
    let methods = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<medgrad_core::Result<Vec<Method>>>()?;
    if methods.is_empty() {
        bail!("no methods requested");
    }
    Ok(methods)
}

fn load_image(path: &Path, size: usize) -> anyhow::Result<Raster> {
    let img = Raster::load_png(path)?;
    Ok(if img.height() == size && img.width() == size {
        img
    } else {
        img.resize(size, size)
    })
}

fn sidecar_path(out: &Path, method: Method) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "panel".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.{}.json", method.name()))
}

pub fn explain(cfg: RunConfig, args: &ExplainArgs) -> anyhow::Result<()> {
    let methods = parse_methods(&args.methods)?;
    cfg.explain.validate()?;
    let (clip, meta) = checkpoint::load(&args.checkpoint)?;
    let image = load_image(&args.image, meta.model.image_size)?;
    let tokens = meta.vocabulary()?.tokenize(&args.caption, meta.model.context_length)?;
    let maps = methods
        .iter()
        .map(|&m| Ok(explain_one(m, &clip, &image, &tokens, &args.caption, &cfg.explain)?))
        .collect::<anyhow::Result<Vec<SaliencyMap>>>()?;
    let labels: Vec<String> = std::iter::once("original".to_string())
        .chain(methods.iter().map(|m| m.name().to_string()))
        .collect();
    let png = render_panel(&image, &maps, &labels, cfg.explain.overlay_alpha)?;
    fs::write(&args.out, png).with_context(|| format!("writing {}", args.out.display()))?;
    for map in &maps {
        let path = sidecar_path(&args.out, map.method);
        fs::write(&path, map.sidecar_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} ({} panels)", args.out.display(), maps.len() + 1);
    Ok(())
}

pub fn compare(cfg: RunConfig, args: &CompareArgs) -> anyhow::Result<()> {
    let methods = parse_methods(&args.methods)?;
    cfg.explain.validate()?;
    let (clip, meta) = checkpoint::load(&args.checkpoint)?;
    let dir = data_dir(&cfg, args.data.as_ref())?;
    let data = dataset_for_checkpoint(&meta, &dir)?;
    let mut n = args.n;
    if n > data.len() {
        warn!("--n {n} exceeds dataset size {}; using {}", data.len(), data.len());
        n = data.len();
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::new(cfg.train.seed).shuffle(&mut order);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let vocab = meta.vocabulary()?;
    for &i in &order[..n] {
        let pair = &data.pairs[i];
        let captions = compare_captions(&pair.caption, &pair.criteria);
        let mut grid = Vec::with_capacity(methods.len());
        for &m in &methods {
            let row = captions
                .iter()
                .map(|c| {
                    let tokens = vocab.tokenize(c, meta.model.context_length)?;
                    explain_one(m, &clip, &pair.image, &tokens, c, &cfg.explain)
                })
                .collect::<medgrad_core::Result<Vec<_>>>()?;
            grid.push(row);
        }
        let png = render_compare_grid(&pair.image, &captions, &grid, cfg.explain.overlay_alpha)?;
        let path = args.out.join(format!("compare-{}.png", pair.id));
        fs::write(&path, png).with_context(|| format!("writing {}", path.display()))?;
        println!(
            "wrote {} ({} rows x {} columns)",
            path.display(),
            methods.len() + 1,
            captions.len()
        );
    }
    Ok(())
}

/// Grid columns: the full caption, then each criterion on its own.
pub fn compare_captions(caption: &str, criteria: &[String]) -> Vec<String> {
    std::iter::once(caption.to_string())
        .chain(criteria.iter().cloned())
        .collect()
}

#[derive(Serialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize)]
struct Inspection {
    format_version: u32,
    sha256: String,
    parameters: usize,
    config: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn inspect(args: &InspectArgs) -> anyhow::Result<()> {
    let bytes = fs::read(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let (meta, tensors) = checkpoint::decode(&bytes)?;
    let report = Inspection {
        format_version: FORMAT_VERSION,
        sha256: checkpoint::hash_bytes(&bytes),
        parameters: tensors.iter().map(|(_, t)| t.numel()).sum(),
        config: meta,
        tensors: tensors
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// SHA-256 over every file below `dir`: relative paths in sorted order, each
/// followed by its bytes.
pub fn dir_hash(dir: &Path) -> anyhow::Result<String> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
        for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                out.push(path.strip_prefix(base)?.to_path_buf());
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(fs::read(dir.join(&f))?);
    }
    Ok(hex::encode(h.finalize()))
}
