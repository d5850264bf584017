use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::Rng;
use crate::raster::{Mask, Raster};
use crate::{Error, Result};

use super::lesion::{class_template, render_lesion, LesionSpec, MAX_CLASSES};
use super::vocab::{TokenSeq, Vocabulary};

/// One image with its caption and ground truth.
#[derive(Debug, Clone)]
pub struct ImageTextPair {
    pub id: String,
    pub image: Raster,
    pub caption: String,
    /// Filled once a vocabulary exists (see [`Dataset::tokenize`]).
    pub tokens: TokenSeq,
    pub class_id: usize,
    pub class_name: String,
    pub criteria: Vec<String>,
    pub mask: Option<Mask>,
    /// Generator parameters; `None` for ingested data.
    pub spec: Option<LesionSpec>,
}

/// A class and the prompt used to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassInfo {
    pub name: String,
    pub prompt: String,
    pub prompt_tokens: TokenSeq,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<ImageTextPair>,
    pub classes: Vec<ClassInfo>,
    pub vocab: Vocabulary,
    pub image_size: usize,
    pub context_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub k_classes: usize,
    pub n_pairs: usize,
    pub image_size: usize,
    pub context_length: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k_classes: 8,
            n_pairs: 800,
            image_size: 64,
            context_length: 32,
            seed: 42,
        }
    }
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub mask: Option<String>,
    pub class: String,
    pub caption: String,
    pub criteria: Vec<String>,
}

/// Renders `spec` and attaches its caption. Tokens are left empty.
pub fn generate_pair(spec: &LesionSpec, rng: &mut Rng, image_size: usize, id: &str) -> Result<ImageTextPair> {
    spec.validate()?;
    let rendered = render_lesion(spec, rng, image_size);
    Ok(ImageTextPair {
        id: id.to_string(),
        image: rendered.image,
        caption: spec.caption(),
        tokens: Vec::new(),
        class_id: spec.class_id,
        class_name: spec.class_name.clone(),
        criteria: spec.criteria(),
        mask: Some(rendered.mask),
        spec: Some(spec.clone()),
    })
}

/// Per-item variation of a class template.
pub fn jittered_spec(class_id: usize, rng: &mut Rng) -> LesionSpec {
    let mut spec = class_template(class_id);
    spec.lesion_radius_fraction = rng.range(0.22, 0.36);
    spec.border_irregularity = (spec.border_irregularity + rng.range(-0.04, 0.04)).clamp(0.0, 1.0);
    spec
}

/// Pairs are assigned to classes round-robin; pair `i` draws from its own
/// stream `Rng::derive(seed, i)`, so the result is independent of threading.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.k_classes < 1 || cfg.k_classes > MAX_CLASSES {
        return Err(Error::Contract(format!(
            "k_classes must be in 1..={MAX_CLASSES}, got {}",
            cfg.k_classes
        )));
    }
    let pairs: Vec<ImageTextPair> = (0..cfg.n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::derive(cfg.seed, i as u64);
            let spec = jittered_spec(i % cfg.k_classes, &mut rng);
            generate_pair(&spec, &mut rng, cfg.image_size, &format!("syn-{i:05}"))
        })
        .collect::<Result<_>>()?;
    let classes = (0..cfg.k_classes)
        .map(|k| {
            let t = class_template(k);
            (t.class_name.clone(), t.caption())
        })
        .collect();
    Dataset::assemble(pairs, classes, None, cfg.image_size, cfg.context_length)
}

impl Dataset {
    /// Builds the vocabulary (class prompts first, then captions, by first
    /// occurrence) unless one is given, and tokenizes every caption.
    pub fn assemble(
        pairs: Vec<ImageTextPair>,
        classes: Vec<(String, String)>,
        vocab: Option<Vocabulary>,
        image_size: usize,
        context_length: usize,
    ) -> Result<Self> {
        let vocab = vocab.unwrap_or_else(|| {
            Vocabulary::from_corpus(
                classes
                    .iter()
                    .map(|(_, p)| p.as_str())
                    .chain(pairs.iter().map(|p| p.caption.as_str())),
            )
        });
        let classes = classes
            .into_iter()
            .map(|(name, prompt)| {
                let prompt_tokens = vocab.tokenize(&prompt, context_length)?;
                Ok(ClassInfo {
                    name,
                    prompt,
                    prompt_tokens,
                })
            })
            .collect::<Result<_>>()?;
        let mut ds = Self {
            pairs,
            classes,
            vocab,
            image_size,
            context_length,
        };
        ds.tokenize()?;
        Ok(ds)
    }

    pub fn tokenize(&mut self) -> Result<()> {
        for p in &mut self.pairs {
            p.tokens = self.vocab.tokenize(&p.caption, self.context_length)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn class_prompts(&self) -> Vec<TokenSeq> {
        self.classes.iter().map(|c| c.prompt_tokens.clone()).collect()
    }

    /// Same metadata, different pairs.
    pub fn with_pairs(&self, pairs: Vec<ImageTextPair>) -> Self {
        Self {
            pairs,
            classes: self.classes.clone(),
            vocab: self.vocab.clone(),
            image_size: self.image_size,
            context_length: self.context_length,
        }
    }

    /// SHA-256 over ids, captions, labels, raw pixels and masks, in order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.pairs {
            h.update(p.id.as_bytes());
            h.update([0]);
            h.update(p.caption.as_bytes());
            h.update([0]);
            h.update((p.class_id as u64).to_le_bytes());
            h.update(p.image.content_hash().as_bytes());
            if let Some(m) = &p.mask {
                let bits: Vec<u8> = m.data().iter().map(|&b| u8::from(b)).collect();
                h.update(&bits);
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes `images/`, `masks/`, `manifest.jsonl` and `vocab.txt`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        let masks = dir.join("masks");
        for d in [&images, &masks] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let manifest_path = dir.join("manifest.jsonl");
        let mut manifest = Vec::new();
        for p in &self.pairs {
            let file = format!("images/{}.png", p.id);
            p.image.save_png(&dir.join(&file))?;
            let mask = match &p.mask {
                Some(m) => {
                    let f = format!("masks/{}.png", p.id);
                    m.save_png(&dir.join(&f))?;
                    Some(f)
                }
                None => None,
            };
            let entry = ManifestEntry {
                id: p.id.clone(),
                file,
                mask,
                class: p.class_name.clone(),
                caption: p.caption.clone(),
                criteria: p.criteria.clone(),
            };
            serde_json::to_writer(&mut manifest, &entry)?;
            manifest.push(b'\n');
        }
        let mut f = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        f.write_all(&manifest).map_err(|e| Error::io(&manifest_path, e))?;
        self.vocab.save(&dir.join("vocab.txt"))
    }
}

/// Loads a dataset directory (`manifest.jsonl`, images, optional masks and
/// `vocab.txt`). Images are bilinearly resized to `image_size`. Class ids
/// follow first appearance in the manifest; each class is scored with the
/// first caption listed for it.
///
/// Captions are tokenized with `vocab` when given, else with `vocab.txt`
/// when present, else with a vocabulary built from the manifest.
pub fn ingest_external(
    dir: &Path,
    image_size: usize,
    context_length: usize,
    vocab: Option<Vocabulary>,
) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.jsonl");
    let file = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", manifest_path.display(), n + 1)))?;
        entries.push(entry);
    }

    let mut classes: Vec<(String, String)> = Vec::new();
    for e in &entries {
        if !classes.iter().any(|(name, _)| name == &e.class) {
            classes.push((e.class.clone(), e.caption.clone()));
        }
    }

    let pairs = entries
        .par_iter()
        .map(|e| {
            let path = dir.join(&e.file);
            if !path.exists() {
                return Err(Error::io(
                    &path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file referenced by manifest is missing"),
                ));
            }
            let image = Raster::load_png(&path)?.resize(image_size, image_size);
            let mask = match &e.mask {
                Some(m) => {
                    let mp = dir.join(m);
                    if !mp.exists() {
                        return Err(Error::io(
                            &mp,
                            std::io::Error::new(std::io::ErrorKind::NotFound, "mask referenced by manifest is missing"),
                        ));
                    }
                    Some(Mask::load_png(&mp, image_size, image_size)?)
                }
                None => None,
            };
            let class_id = classes
                .iter()
                .position(|(n, _)| n == &e.class)
                .expect("class registered above");
            Ok(ImageTextPair {
                id: e.id.clone(),
                image,
                caption: e.caption.clone(),
                tokens: Vec::new(),
                class_id,
                class_name: e.class.clone(),
                criteria: e.criteria.clone(),
                mask,
                spec: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let vocab_path = dir.join("vocab.txt");
    let vocab = match vocab {
        Some(v) => Some(v),
        None if vocab_path.exists() => Some(Vocabulary::load(&vocab_path)?),
        None => None,
    };
    Dataset::assemble(pairs, classes, vocab, image_size, context_length)
}

/// Drops pairs whose (image, caption) repeats an earlier pair.
pub fn dedupe(pairs: Vec<ImageTextPair>) -> Vec<ImageTextPair> {
    let mut seen = HashSet::new();
    pairs
        .into_iter()
        .filter(|p| seen.insert((p.image.content_hash(), p.caption.clone())))
        .collect()
}

/// Train/test partition.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<ImageTextPair>,
    pub test: Vec<ImageTextPair>,
}

/// Stratified split after de-duplication.
///
/// Per class, items are shuffled with `Rng::derive(seed, class_id)`. Train
/// counts are `floor(fraction · n_class)`, and the remaining
/// `round(fraction · n) − Σ floor` slots go to the classes with the largest
/// fractional parts (ties by class id). Every class keeps at least one test
/// item. Classes with fewer than two items go entirely to train.
pub fn split_dataset(pairs: Vec<ImageTextPair>, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!("split fraction {fraction} not in (0, 1)")));
    }
    if pairs.len() < 4 {
        return Err(Error::Contract(format!(
            "split needs at least 4 pairs, got {}",
            pairs.len()
        )));
    }
    let pairs = dedupe(pairs);

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        by_class.entry(p.class_id).or_default().push(i);
    }

    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut quotas: Vec<(usize, usize, f64)> = Vec::new();
    let mut eligible_total = 0usize;
    for (&class, members) in &by_class {
        if members.len() < 2 {
            log::warn!(
                "class {class} has {} item(s); cannot stratify, assigning to train",
                members.len()
            );
            train_idx.extend(members);
            continue;
        }
        let exact = fraction * members.len() as f64;
        quotas.push((class, exact.floor() as usize, exact - exact.floor()));
        eligible_total += members.len();
    }
    let target = (fraction * eligible_total as f64).round() as usize;
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(quotas[a].0.cmp(&quotas[b].0)));
    let mut extra = target.saturating_sub(assigned);
    for &qi in &order {
        if extra == 0 {
            break;
        }
        let n = by_class[&quotas[qi].0].len();
        if quotas[qi].1 + 1 < n {
            quotas[qi].1 += 1;
            extra -= 1;
        }
    }

    for (class, n_train, _) in quotas {
        let mut members = by_class[&class].clone();
        Rng::derive(seed, class as u64).shuffle(&mut members);
        let n_train = n_train.clamp(1, members.len() - 1);
        train_idx.extend(&members[..n_train]);
        test_idx.extend(&members[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let mut slots: Vec<Option<ImageTextPair>> = pairs.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| idx.iter().map(|&i| slots[i].take().expect("index used once")).collect();
    let train = take(&train_idx);
    let test = take(&test_idx);
    Ok(Split { train, test })
}
