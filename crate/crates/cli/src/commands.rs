use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ccl_core::annotation::{mask_file_name, AnnotatedImage, AnnotationDoc, ImageEntry};
use ccl_core::augment::{categorical_augment, AugmentOutcome, AugmentParams, PlacementAttempt, SkipReason};
use ccl_core::background::{
    build_background_set, read_manifest, reference_split, BackgroundPool, BgSetConfig, Expander, GenBackend,
    HttpBackend, StubBackend, CANONICAL_SIZE, DEFAULT_SEEDS_PER_PROMPT,
};
use ccl_core::bench::{
    build_background_variants, corrupt_with_table, apply_corruption, CorruptionKind, CorruptionSpec, CorruptionTable,
    SampleOrigin,
};
use ccl_core::corpus::Corpus;
use ccl_core::eval::{default_thresholds, load_predictions, metrics_report, MetricsReport, Partition, Prediction};
use ccl_core::features::FeatureBatch;
use ccl_core::fixture::{synthetic_corpus, write_fixture, FixtureSpec};
use ccl_core::geometry::Mask;
use ccl_core::loss::{consistency_terms, grad_check as core_grad_check, random_batch, GradCheckReport, LossConfig};
use ccl_core::provenance::{config_digest, Provenance};
use ccl_core::raster::{load_rgb, ObjectCutout};
use ccl_core::replace::{expand_image, extract_foreground, ExpandOptions, ExpandOutcome, QualityFilterParams};
use ccl_core::seed::derive_seed;
use ccl_core::select::{select_subset, DatasetIndex, SelectionParams};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{existing_path, pick, BackendKind};
use crate::output::{save_mask, save_rgb, write_json, write_jsonl, write_text};
use crate::{
    AugmentArgs, BuildBenchArgs, CorpusArgs, CorruptArgs, Ctx, EvalArgs, FixtureArgs, GenBgArgs, GradCheckArgs,
    LossArgs, ReplaceArgs, SelectArgs,
};

/// Provenance for a run: digest of the effective parameters (no paths, no
/// worker count) plus the seed.
fn provenance<T: Serialize>(verb: &str, params: &T, seed: u64) -> Provenance {
    Provenance::new(config_digest(&json!({ "verb": verb, "params": params })), seed)
}

fn open_corpus(ctx: &Ctx, args: &CorpusArgs) -> Result<Corpus> {
    let path = existing_path(args.annotations.clone(), ctx.file.paths.annotations.clone(), "annotations")?;
    Corpus::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn masks_dir(ctx: &Ctx, args: &CorpusArgs) -> Result<PathBuf> {
    existing_path(args.masks.clone(), ctx.file.paths.masks.clone(), "masks")
}

/// Every image of the corpus with its per-annotation masks, in document order.
fn load_with_masks(corpus: &Corpus, masks: &Path) -> Result<Vec<(AnnotatedImage, Vec<Mask>)>> {
    corpus
        .image_ids()
        .par_iter()
        .map(|id| {
            let img = corpus.annotated(id).with_context(|| format!("loading image {id}"))?;
            let m = corpus.masks(&img, masks).with_context(|| format!("loading masks of {id}"))?;
            Ok((img, m))
        })
        .collect()
}

/// Writes images, masks and the annotation document of `samples` under `out`.
fn write_corpus(
    out: &Path,
    categories_from: &AnnotationDoc,
    samples: &[(AnnotatedImage, Vec<Mask>)],
    prov: &Provenance,
) -> Result<usize> {
    let written: Vec<usize> = samples
        .par_iter()
        .map(|(img, masks)| {
            let mut n = save_rgb(&out.join(format!("images/{}.png", img.source_id)), &img.pixels, prov)? as usize;
            for (i, m) in masks.iter().enumerate() {
                n += save_mask(&out.join("masks").join(mask_file_name(&img.source_id, i)), m, prov)? as usize;
            }
            Ok(n)
        })
        .collect::<Result<_>>()?;
    let mut doc = categories_from.empty_like();
    doc.provenance = Some(prov.clone());
    for (img, _) in samples {
        doc.push_image(
            ImageEntry {
                id: img.source_id.clone(),
                file: format!("images/{}.png", img.source_id),
                width: img.width(),
                height: img.height(),
            },
            &img.annotations,
        );
    }
    doc.save(&out.join("annotations.json"))?;
    Ok(written.iter().sum())
}

pub fn fixture(ctx: &Ctx, a: FixtureArgs) -> Result<()> {
    let seed = ctx.seed()?;
    let out = ctx.out()?;
    let spec = FixtureSpec {
        n_images: a.n,
        width: a.width,
        height: a.height,
        seed,
    };
    let prov = provenance("fixture", &spec, seed);
    let fx = synthetic_corpus(&spec);
    write_fixture(&fx, &out, &prov)?;
    let perfect: Vec<Prediction> = fx
        .doc
        .annotations
        .iter()
        .map(|a| Prediction {
            image_id: a.image_id.clone(),
            bbox: a.bbox,
            category_id: a.category_id,
            score: 1.0,
        })
        .collect();
    write_json(&out.join("predictions_perfect.json"), &perfect)?;
    println!("fixture: {} images, {} annotations -> {}", fx.samples.len(), fx.doc.annotations.len(), out.display());
    Ok(())
}

pub fn select(ctx: &Ctx, a: SelectArgs) -> Result<()> {
    let seed = ctx.seed()?;
    let out = ctx.out()?;
    let corpus = open_corpus(ctx, &a.corpus)?;
    let params = match (a.budget.or(ctx.file.select.budget), a.reduction.or(ctx.file.select.reduction)) {
        (Some(b), _) => SelectionParams::Budget(b),
        (None, Some(r)) => SelectionParams::Reduction(r),
        (None, None) => bail!("config invalid: select needs --budget or --reduction"),
    };
    let ids = select_subset(&DatasetIndex::from_doc(&corpus.doc), params)?;
    let budget = params.budget_for(corpus.doc.images.len())?;
    let prov = provenance("select", &json!({ "budget": budget }), seed);
    let chosen: HashSet<&str> = ids.iter().map(String::as_str).collect();

    let masks = a.corpus.masks.clone().or_else(|| ctx.file.paths.masks.clone());
    let mut doc = corpus.doc.empty_like();
    doc.provenance = Some(prov.clone());
    let by_image = corpus.doc.annotations_by_image();
    for entry in corpus.doc.images.iter().filter(|e| chosen.contains(e.id.as_str())) {
        let anns = by_image.get(entry.id.as_str()).cloned().unwrap_or_default();
        copy_if_missing(&corpus.root.join(&entry.file), &out.join(&entry.file))?;
        if let Some(dir) = &masks {
            for i in 0..anns.len() {
                let name = mask_file_name(&entry.id, i);
                copy_if_missing(&dir.join(&name), &out.join("masks").join(&name))?;
            }
        }
        doc.push_image(entry.clone(), &anns);
    }
    doc.save(&out.join("annotations.json"))?;
    write_json(&out.join("selection.json"), &json!({ "provenance": prov, "budget": budget, "ids": ids }))?;
    println!("select: {} of {} images", ids.len(), corpus.doc.images.len());
    Ok(())
}

fn copy_if_missing(src: &Path, dst: &Path) -> Result<()> {
    if dst.exists() {
        return Ok(());
    }
    if let Some(dir) = dst.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::copy(src, dst).with_context(|| format!("copying {} to {}", src.display(), dst.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct AugmentRecord {
    image_id: String,
    outcome: &'static str,
    inserted: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skip_reason: Option<SkipReason>,
    attempts: Vec<PlacementAttempt>,
}

pub fn augment(ctx: &Ctx, a: AugmentArgs) -> Result<()> {
    let seed = ctx.seed()?;
    let out = ctx.out()?;
    let f = &ctx.file.augment;
    let d = AugmentParams::default();
    let base = AugmentParams {
        n_positions: pick(a.n_positions, f.n_positions, d.n_positions),
        alpha: pick(a.alpha, f.alpha, d.alpha),
        n_r: pick(a.n_r, f.n_r, d.n_r),
        min_free_positions: pick(a.min_free_positions, f.min_free_positions, d.min_free_positions),
        seed: 0,
    };
    base.validate()?;
    let repeat = pick(a.repeat, f.repeat, 1);
    let all_images = a.all_images || f.all_images.unwrap_or(false);
    let prov = provenance("augment", &json!({ "params": base, "repeat": repeat, "all_images": all_images }), seed);

    let corpus = open_corpus(ctx, &a.corpus)?;
    let samples = load_with_masks(&corpus, &masks_dir(ctx, &a.corpus)?)?;
    let donor_samples = match (&a.donor_annotations, &a.donor_masks) {
        (Some(ann), Some(m)) => load_with_masks(&Corpus::load(ann)?, m)?,
        _ => samples.clone(),
    };
    let mut donors = Vec::new();
    for (img, masks) in &donor_samples {
        for (ann, m) in img.annotations.iter().zip(masks) {
            let (cut, _) = extract_foreground(img, m).with_context(|| format!("donor from {}", img.source_id))?;
            donors.push(ObjectCutout::new(cut.pixels().clone(), ann.category_id)?);
        }
    }

    let results: Vec<((AnnotatedImage, Vec<Mask>), AugmentRecord)> = samples
        .into_par_iter()
        .map(|(img, masks)| {
            let mut rec = AugmentRecord {
                image_id: img.source_id.clone(),
                outcome: "passed-through",
                inserted: Vec::new(),
                skip_reason: None,
                attempts: Vec::new(),
            };
            if !all_images && img.categories().len() != 1 {
                return Ok(((img, masks), rec));
            }
            let (mut img, mut masks) = (img, masks);
            for r in 0..repeat {
                let params = AugmentParams {
                    seed: derive_seed(seed, &format!("augment/{}/{r}", img.source_id)),
                    ..base.clone()
                };
                match categorical_augment(&img, &donors, &params)? {
                    AugmentOutcome::Augmented {
                        image,
                        inserted,
                        position: (px, py),
                        attempts,
                        ..
                    } => {
                        let alpha = inserted.alpha_mask();
                        masks.push(Mask::from_fn(image.width(), image.height(), |x, y| {
                            x >= px
                                && y >= py
                                && x - px < alpha.width()
                                && y - py < alpha.height()
                                && alpha.get(x - px, y - py)
                        }));
                        rec.inserted.push(inserted.category_id());
                        rec.attempts.extend(attempts);
                        rec.outcome = "augmented";
                        img = image;
                    }
                    AugmentOutcome::Skipped { reason, attempts } => {
                        rec.attempts.extend(attempts);
                        rec.skip_reason = Some(reason);
                        if rec.inserted.is_empty() {
                            rec.outcome = "skipped";
                        }
                        break;
                    }
                }
            }
            Ok(((img, masks), rec))
        })
        .collect::<Result<_>>()?;
    let (samples, records): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    write_corpus(&out, &corpus.doc, &samples, &prov)?;

    let count = |o: &str| records.iter().filter(|r| r.outcome == o).count();
    let (aug, skip, pass) = (count("augmented"), count("skipped"), count("passed-through"));
    write_json(
        &out.join("augment_report.json"),
        &json!({ "provenance": prov, "augmented": aug, "skipped": skip, "passed_through": pass, "images": records }),
    )?;
    println!("augment: {aug} augmented, {skip} skipped, {pass} passed through");
    Ok(())
}

pub fn gen_bg(ctx: &Ctx, a: GenBgArgs) -> Result<()> {
    let seed = ctx.seed()?;
    let out = ctx.out()?;
    let f = &ctx.file.genbg;
    let kind = pick(a.backend, ctx.file.backend.kind, BackendKind::Stub);
    let backend: Box<dyn GenBackend> = match kind {
        BackendKind::Stub => Box::new(StubBackend),
        BackendKind::Http => {
            let url = a
                .url
                .clone()
                .or_else(|| ctx.file.backend.url.clone())
                .context("config invalid: the http backend needs --url, CCL_BACKEND_URL or [backend] url")?;
            Box::new(HttpBackend::new(url))
        }
    };
    let prompts_per_theme = match (a.total_prompts.or(f.total_prompts), &f.prompts_per_theme) {
        (Some(total), _) => reference_split(total),
        (None, Some(m)) => m.clone(),
        (None, None) => bail!("config invalid: gen-bg needs --total-prompts or [genbg] prompts_per_theme"),
    };
    let expander = match a.llm_url.clone().or_else(|| f.llm_url.clone()) {
        Some(url) => Expander::LlmEndpoint { url },
        None => Expander::StaticCorpus,
    };
    let cfg = BgSetConfig {
        prompts_per_theme,
        seeds_per_prompt: pick(a.seeds_per_prompt, f.seeds_per_prompt, DEFAULT_SEEDS_PER_PROMPT),
        width: pick(a.width, f.width, CANONICAL_SIZE),
        height: pick(a.height, f.height, CANONICAL_SIZE),
        expander,
        seed,
        out_dir: out.clone(),
    };
    let prov = provenance(
        "gen-bg",
        &json!({
            "backend": backend.id(),
            "prompts_per_theme": cfg.prompts_per_theme,
            "seeds_per_prompt": cfg.seeds_per_prompt,
            "size": [cfg.width, cfg.height],
            "expander": match &cfg.expander { Expander::StaticCorpus => "static".to_string(), Expander::LlmEndpoint { url } => url.clone() },
        }),
        seed,
    );
    let report = build_background_set(&cfg, backend.as_ref(), &prov)?;
    println!(
        "gen-bg: {} backgrounds ({} generated, {} already present) -> {}",
        report.total,
        report.generated,
        report.skipped,
        cfg.manifest_path().display()
    );
    Ok(())
}

fn load_pool(ctx: &Ctx, flag: Option<PathBuf>) -> Result<BackgroundPool> {
    let path = existing_path(flag, ctx.file.paths.backgrounds.clone(), "backgrounds manifest")?;
    BackgroundPool::load(&path).with_context(|| format!("loading {}", path.display()))
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
enum GroupLine {
    Group {
        source_id: String,
        images: Vec<String>,
        background_ids: Vec<String>,
    },
    Rejected {
        source_id: String,
        reason: ccl_core::replace::RejectReason,
        ious: Vec<Option<f64>>,
    },
}

pub fn replace(ctx: &Ctx, a: ReplaceArgs) -> Result<()> {
    let seed = ctx.seed()?;
    let out = ctx.out()?;
    let f = &ctx.file.replace;
    let k = pick(a.k, f.k, 4);
    let include_original = pick(a.include_original, f.include_original, true);
    let erode = a.erode || f.erode.unwrap_or(false);
    let filter = QualityFilterParams::new(pick(a.t_iou, ctx.file.filter.t_iou, QualityFilterParams::default().t_iou))?;
    let prov = provenance(
        "replace",
        &json!({ "k": k, "include_original": include_original, "erode": erode, "t_iou": filter.t_iou }),
        seed,
    );
    let corpus = open_corpus(ctx, &a.corpus)?;
    let mdir = masks_dir(ctx, &a.corpus)?;
    let pool = load_pool(ctx, a.backgrounds.clone())?;
    let ids = corpus.image_ids();

    let groups: Vec<(Vec<(AnnotatedImage, Vec<Mask>)>, GroupLine)> = ids
        .par_iter()
        .map(|id| {
            let img = corpus.annotated(id)?;
            let masks = corpus.masks(&img, &mdir)?;
            let outcome = expand_image(
                &img,
                &masks,
                &pool,
                k,
                &filter,
                derive_seed(seed, &format!("replace/{id}")),
                ExpandOptions { erode },
            )
            .with_context(|| format!("expanding {id}"))?;
            Ok(match outcome {
                ExpandOutcome::Group(g) => {
                    let mut outs = Vec::new();
                    if include_original {
                        outs.push((img.clone(), masks.clone()));
                    }
                    for (j, mut v) in g.variants.into_iter().enumerate() {
                        v.source_id = format!("{id}_v{j}");
                        outs.push((v, masks.clone()));
                    }
                    let line = GroupLine::Group {
                        source_id: id.clone(),
                        images: outs.iter().map(|(v, _)| format!("images/{}.png", v.source_id)).collect(),
                        background_ids: g.background_ids,
                    };
                    (outs, line)
                }
                ExpandOutcome::Rejected { reason, verdicts } => (
                    Vec::new(),
                    GroupLine::Rejected {
                        source_id: id.clone(),
                        reason,
                        ious: verdicts.iter().map(|v| v.map(|v| v.iou())).collect(),
                    },
                ),
            })
        })
        .collect::<Result<_>>()?;

    let rejected = groups.iter().filter(|(_, l)| matches!(l, GroupLine::Rejected { .. })).count();
    let (samples, lines): (Vec<_>, Vec<_>) = groups.into_iter().unzip();
    let samples: Vec<_> = samples.into_iter().flatten().collect();
    write_corpus(&out, &corpus.doc, &samples, &prov)?;
    write_jsonl(&out.join("groups.jsonl"), &prov, &lines)?;
    println!(
        "replace: {} outputs from {} images ({} rejected)",
        samples.len(),
        ids.len(),
        rejected
    );
    Ok(())
}

#[derive(Serialize)]
struct IndexLine<'a> {
    id: &'a str,
    image: String,
    #[serde(flatten)]
    origin: &'a SampleOrigin,
}

fn write_bench_set(dir: &Path, doc: &AnnotationDoc, samples: Vec<(AnnotatedImage, SampleOrigin)>, prov: &Provenance) -> Result<usize> {
    let n = samples.len();
    let lines: Vec<String> = samples
        .iter()
        .map(|(img, origin)| {
            serde_json::to_string(&IndexLine {
                id: &img.source_id,
                image: format!("images/{}.png", img.source_id),
                origin,
            })
            .map_err(Into::into)
        })
        .collect::<Result<_>>()?;
    let corpus: Vec<(AnnotatedImage, Vec<Mask>)> = samples.into_iter().map(|(img, _)| (img, Vec::new())).collect();
    write_corpus(dir, doc, &corpus, prov)?;
    let values: Vec<serde_json::Value> = lines.iter().map(|l| serde_json::from_str(l)).collect::<Result<_, _>>()?;
    write_jsonl(&dir.join("index.jsonl"), prov, &values)?;
    Ok(n)
}

pub fn build_bench(ctx: &Ctx, a: BuildBenchArgs) -> Result<()> {
    let seed = ctx.seed()?;
    let out = ctx.out()?;
    let f = &ctx.file.bench;
    let variants = pick(a.variants, f.variants_per_image, 3);
    let kinds = a.corruptions.clone().or_else(|| f.corruptions.clone()).unwrap_or_else(|| CorruptionKind::ALL.to_vec());
    let severities: Vec<u8> = if a.all_severities || f.all_severities.unwrap_or(false) {
        (1..=5).collect()
    } else {
        vec![pick(a.severity, f.severity, 3)]
    };
    let table = f.table.clone().unwrap_or_default();
    let prov = provenance(
        "build-bench",
        &json!({ "variants": variants, "corruptions": kinds, "severities": severities, "table": table, "with_backgrounds": a.backgrounds.is_some() || ctx.file.paths.backgrounds.is_some() }),
        seed,
    );
    let corpus = open_corpus(ctx, &a.corpus)?;

    let mut summary = BTreeMap::new();
    if a.backgrounds.is_some() || ctx.file.paths.backgrounds.is_some() {
        let pool = load_pool(ctx, a.backgrounds.clone())?;
        let exclude_paths: Vec<PathBuf> = if a.exclude.is_empty() { ctx.file.paths.exclude.clone() } else { a.exclude.clone() };
        let mut exclude = HashSet::new();
        for p in &exclude_paths {
            let (_, recs) = read_manifest(p).with_context(|| format!("reading exclusion manifest {}", p.display()))?;
            exclude.extend(recs.into_iter().map(|r| r.id));
        }
        let dataset = load_with_masks(&corpus, &masks_dir(ctx, &a.corpus)?)?;
        let bench = build_background_variants(&dataset, &pool, variants, derive_seed(seed, "bench"), &exclude)?;
        let n = write_bench_set(&out.join("bc"), &corpus.doc, bench.into_iter().map(|s| (s.image, s.origin)).collect(), &prov)?;
        summary.insert("bc".to_string(), n);
    }

    let originals: Vec<AnnotatedImage> = corpus
        .image_ids()
        .par_iter()
        .map(|id| corpus.annotated(id).with_context(|| format!("loading {id}")))
        .collect::<Result<_>>()?;
    for &kind in &kinds {
        for &sev in &severities {
            let name = format!("{kind}@{sev}");
            let samples: Vec<(AnnotatedImage, SampleOrigin)> = originals
                .par_iter()
                .map(|img| {
                    let spec = CorruptionSpec::new(kind, sev, derive_seed(seed, &format!("corrupt/{name}/{}", img.source_id)))?;
                    let out_img = AnnotatedImage {
                        pixels: corrupt_with_table(&img.pixels, &spec, &table),
                        ..img.clone()
                    };
                    Ok((
                        out_img,
                        SampleOrigin::Corruption {
                            variant_of: img.source_id.clone(),
                            spec,
                        },
                    ))
                })
                .collect::<Result<_>>()?;
            let n = write_bench_set(&out.join("corrupt").join(&name), &corpus.doc, samples, &prov)?;
            summary.insert(name, n);
        }
    }
    write_json(&out.join("bench_report.json"), &json!({ "provenance": prov, "sets": summary }))?;
    for (name, n) in &summary {
        println!("build-bench: {name}: {n} samples");
    }
    Ok(())
}

pub fn corrupt(ctx: &Ctx, a: CorruptArgs) -> Result<()> {
    let seed = ctx.seed()?;
    let out = ctx.out()?;
    let img = load_rgb(&a.input)?;
    let table: CorruptionTable = ctx.file.bench.table.clone().unwrap_or_default();
    let (img_out, tag, params) = match a.param {
        Some(p) => (apply_corruption(&img, a.kind, p, seed), format!("{}={p}", a.kind), json!({ "kind": a.kind, "param": p })),
        None => {
            let spec = CorruptionSpec::new(a.kind, pick(a.severity, ctx.file.bench.severity, 3), seed)?;
            (
                corrupt_with_table(&img, &spec, &table),
                format!("{}@{}", a.kind, spec.severity),
                json!({ "spec": spec, "table": table }),
            )
        }
    };
    let prov = provenance("corrupt", &params, seed);
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let path = out.join(format!("{stem}.{tag}.png"));
    save_rgb(&path, &img_out, &prov)?;
    println!("corrupt: {}", path.display());
    Ok(())
}

fn render_table(r: &MetricsReport) -> String {
    let mut s = String::from("partition  AP\n");
    for p in Partition::ALL {
        match r.ap.get(&p).copied().flatten() {
            Some(v) => s.push_str(&format!("{:<10} {v:.1}\n", p.to_string())),
            None => s.push_str(&format!("{:<10} n/a\n", p.to_string())),
        }
    }
    if !r.corrupted_full.is_empty() {
        s.push_str("\ncorruption FULL\n");
        for (name, v) in &r.corrupted_full {
            s.push_str(&format!("{name:<24} {v:.1}\n"));
        }
    }
    if let Some(m) = r.mfull {
        s.push_str(&format!("\nmFULL {m:.1}\n"));
    }
    if let Some(rf) = r.rfull {
        s.push_str(&format!("rFULL {rf:.1}\n"));
    }
    s
}

pub fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let gt = existing_path(a.annotations.clone(), ctx.file.paths.annotations.clone(), "ground-truth annotations")?;
    let doc = AnnotationDoc::load(&gt)?;
    doc.validate()?;
    let pred_path = existing_path(a.pred.clone(), ctx.file.paths.predictions.clone(), "predictions")?;
    let clean = load_predictions(&pred_path)?;
    let mut corrupted = BTreeMap::new();
    for spec in &a.corrupted {
        let (name, path) = spec
            .split_once('=')
            .with_context(|| format!("--corrupted expects name=path, got {spec:?}"))?;
        corrupted.insert(name.to_string(), load_predictions(Path::new(path))?);
    }
    let thresholds = a
        .thresholds
        .clone()
        .or_else(|| ctx.file.eval.thresholds.clone())
        .unwrap_or_else(default_thresholds);
    let report = metrics_report(&doc, clean, &corrupted, &thresholds)?;
    let table = render_table(&report);
    print!("{table}");
    if let Some(out) = &ctx.out {
        let prov = provenance("eval", &json!({ "thresholds": thresholds }), ctx.seed.unwrap_or(0));
        write_json(&out.join("metrics.json"), &json!({ "provenance": prov, "metrics": report }))?;
        write_text(&out.join("metrics.txt"), &table)?;
    }
    Ok(())
}

fn loss_config(ctx: &Ctx, tau: Option<f64>, prenormalize: bool, li: Option<f64>, lt: Option<f64>) -> LossConfig {
    let f = &ctx.file.loss;
    let d = LossConfig::default();
    LossConfig {
        tau: pick(tau, f.tau, d.tau),
        lambda_i: pick(li, f.lambda_i, d.lambda_i),
        lambda_t: pick(lt, f.lambda_t, d.lambda_t),
        prenormalize: prenormalize || f.prenormalize.unwrap_or(false),
    }
}

pub fn loss(ctx: &Ctx, a: LossArgs) -> Result<()> {
    let cfg = loss_config(ctx, a.loss.tau, a.loss.prenormalize, a.lambda_i, a.lambda_t);
    let img = FeatureBatch::read(&a.image)?;
    let txt = a.text.as_deref().map(FeatureBatch::read).transpose()?;
    let terms = consistency_terms(&img, txt.as_ref(), &cfg)?;
    let report = json!({ "config": cfg, "terms": terms });
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &ctx.out {
        let prov = provenance("loss", &cfg, ctx.seed.unwrap_or(0));
        write_json(&out.join("loss.json"), &json!({ "provenance": prov, "config": cfg, "terms": terms }))?;
    }
    Ok(())
}

pub fn grad_check(ctx: &Ctx, a: GradCheckArgs) -> Result<()> {
    let cfg = loss_config(ctx, a.loss.tau, a.loss.prenormalize, None, None);
    let h = pick(a.h, ctx.file.loss.h, 1e-4);
    let batches: Vec<FeatureBatch> = match (&a.features, &a.random) {
        (Some(p), _) => vec![FeatureBatch::read(p)?],
        (None, Some(shape)) => {
            let seed = ctx.seed()?;
            (0..a.batches)
                .map(|i| random_batch(shape[0], shape[1], shape[2], derive_seed(seed, &format!("grad-check/{i}"))))
                .collect()
        }
        (None, None) => bail!("config invalid: grad-check needs --features or --random C,K,D"),
    };
    let reports: Vec<GradCheckReport> = batches
        .par_iter()
        .map(|fb| core_grad_check(fb, cfg.tau, h, cfg.prenormalize).map_err(Into::into))
        .collect::<Result<_>>()?;
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let summary = json!({ "h": h, "tau": cfg.tau, "prenormalize": cfg.prenormalize, "max_rel_error": worst, "batches": reports });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(out) = &ctx.out {
        let prov = provenance("grad-check", &json!({ "h": h, "loss": cfg }), ctx.seed.unwrap_or(0));
        write_json(&out.join("grad_check.json"), &json!({ "provenance": prov, "summary": summary }))?;
    }
    if worst >= a.tol {
        bail!("max relative error {worst:.3e} exceeds tolerance {:.1e}", a.tol);
    }
    Ok(())
}
