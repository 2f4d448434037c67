use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cora::encoders::{write_regions, RegionSet};
use cora::retrieval::{
    bench_latency, embed_captions, embed_images, read_embeddings, write_embeddings, EmbeddingIndex, IndexKind,
    Metrics, ScoredSplit, CaptionIndexes,
};
use cora::sgparse::{extract_scene_graph, graphs_to_json, parse_conllu};
use cora::training::rng::named_rng;
use cora::training::synth::{SynthConfig, SynthWorld};
use cora::training::{init_params, load_checkpoint, save_checkpoint, train, Dataset, ModelConfig};

use crate::files::{caption_ids, format_pairs, load_dataset, load_regions, read_graphs, read_pairs, resolve_pairs};
use crate::settings::Settings;
use crate::{Cli, Command, Global};

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    match cli.command {
        Command::Parse { input, out } => parse(&input, &out),
        Command::Train {
            regions,
            captions,
            pairs,
            out,
            epochs,
            batch_size,
            log,
        } => {
            let mut s = settings(&g)?;
            if let Some(e) = epochs {
                s.train.epochs = e;
            }
            if let Some(b) = batch_size {
                s.train.batch_size = b;
            }
            let log = log.unwrap_or_else(|| with_suffix(&out, ".log.jsonl"));
            train_cmd(&s, &regions, &captions, &pairs, &out, &log)
        }
        Command::Embed {
            ckpt,
            regions,
            graphs,
            out,
        } => embed(&ckpt, regions.as_deref(), graphs.as_deref(), &out),
        Command::Eval {
            image_index,
            caption_index,
            pairs,
            beta,
        } => eval(&image_index, &caption_index, &pairs, beta),
        Command::Bench {
            sizes,
            trials,
            ckpt,
            out,
        } => bench(&settings(&g)?, &sizes, trials, ckpt.as_deref(), &out),
        Command::Synth {
            out_dir,
            train,
            test,
            region_dim,
        } => synth(&settings(&g)?, &out_dir, train, test, region_dim),
    }
}

fn settings(g: &Global) -> Result<Settings> {
    let mut s = Settings::load(g.config.as_deref())?;
    if let Some(seed) = g.seed {
        s.train.seed = seed;
    }
    if let Some(dim) = g.dim {
        s.model.dim = dim;
    }
    Ok(s)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse(input: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let sentences = parse_conllu(&text).with_context(|| format!("parsing {}", input.display()))?;
    let graphs: Vec<_> = sentences.iter().map(|s| extract_scene_graph(s)).collect();
    fs::write(out, graphs_to_json(&graphs)?).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("parsed {} sentences", graphs.len());
    Ok(())
}

fn train_cmd(s: &Settings, regions: &Path, captions: &Path, pairs: &Path, out: &Path, log: &Path) -> Result<()> {
    let data = load_dataset(regions, captions, pairs)?;
    let model = ModelConfig {
        region_dim: data.images.first().map_or(s.model.region_dim, |m| m.cols()),
        ..s.model.clone()
    };
    let effective = Settings {
        train: s.train.clone(),
        model: model.clone(),
    };
    eprintln!("config {}", effective.describe());
    let mut params = init_params(&data, model, s.train.seed)?;
    let mut w = BufWriter::new(fs::File::create(log).with_context(|| format!("creating {}", log.display()))?);
    let means = train(&mut params, &data, &s.train, Some(&mut w))?;
    w.flush()?;
    for (e, m) in means.iter().enumerate() {
        eprintln!("epoch {} mean loss {m:.6}", e + 1);
    }
    save_checkpoint(&params, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn embed(ckpt: &Path, regions: Option<&Path>, graphs: Option<&Path>, out: &Path) -> Result<()> {
    let params = load_checkpoint(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let blocks: Vec<EmbeddingIndex> = match (regions, graphs) {
        (Some(r), None) => {
            let set = load_regions(r)?;
            vec![embed_images(&params, &set.images, &set.ids)?]
        }
        (None, Some(g)) => {
            let graphs = read_graphs(g)?;
            let c = embed_captions(&params, &graphs, &caption_ids(graphs.len()))?;
            vec![c.captions, c.entities]
        }
        _ => bail!("give exactly one of --regions and --graphs"),
    };
    let refs: Vec<&EmbeddingIndex> = blocks.iter().collect();
    write_embeddings(out, &refs).with_context(|| format!("writing {}", out.display()))?;
    let rows: Vec<String> = blocks.iter().map(|b| format!("{} {:?}", b.len(), b.kind())).collect();
    eprintln!("embedded {}", rows.join(", "));
    Ok(())
}

fn single_block(path: &Path, kind: IndexKind) -> Result<Vec<EmbeddingIndex>> {
    let blocks = read_embeddings(path).with_context(|| format!("reading {}", path.display()))?;
    if blocks[0].kind() != kind {
        bail!("{} holds {:?} embeddings, expected {kind:?}", path.display(), blocks[0].kind());
    }
    Ok(blocks)
}

/// Caption position of every entity, recovered from `<caption>#<object>` ids.
fn entity_owners(captions: &EmbeddingIndex, entities: &EmbeddingIndex) -> Result<Vec<usize>> {
    let pos: HashMap<&str, usize> = captions.ids().iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    entities
        .ids()
        .iter()
        .map(|id| {
            id.rsplit_once('#')
                .and_then(|(c, _)| pos.get(c).copied())
                .with_context(|| format!("entity {id:?} has no caption in the index"))
        })
        .collect()
}

fn eval(image_index: &Path, caption_index: &Path, pairs: &Path, beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        bail!("beta {beta} outside [0,1]");
    }
    let images = single_block(image_index, IndexKind::Image)?.remove(0);
    let mut blocks = single_block(caption_index, IndexKind::Caption)?.into_iter();
    let captions = blocks.next().expect("at least one block");
    let entities = match blocks.next() {
        Some(e) if e.kind() == IndexKind::Entity => e,
        Some(_) => bail!("second block of {} is not an entity index", caption_index.display()),
        None => cora::retrieval::build_index(&[], IndexKind::Entity)?,
    };
    let owners = entity_owners(&captions, &entities)?;
    let manifest = read_pairs(pairs)?;
    let pairs = resolve_pairs(&manifest, images.ids(), captions.ids())?;
    let split = ScoredSplit::new(
        &images,
        &CaptionIndexes {
            captions,
            entities,
            owners,
        },
        pairs,
    )?;
    print_metrics("baseline", &split.baseline()?);
    if beta < 1.0 {
        print_metrics(&format!("rerank beta={beta}"), &split.metrics(beta)?);
    }
    Ok(())
}

fn print_metrics(label: &str, m: &Metrics) {
    println!("{label}");
    println!("  i2t R@1 {:.2} R@5 {:.2} R@10 {:.2}", m.i2t[0], m.i2t[1], m.i2t[2]);
    println!("  t2i R@1 {:.2} R@5 {:.2} R@10 {:.2}", m.t2i[0], m.t2i[1], m.t2i[2]);
    println!("  rsum {:.2}", m.rsum());
}

fn bench(s: &Settings, sizes: &[usize], trials: usize, ckpt: Option<&Path>, out: &Path) -> Result<()> {
    let mut rng = named_rng(s.train.seed, "bench.world");
    let world = SynthWorld::new(SynthConfig::default(), &mut rng)?;
    let (_, caption) = world.sample(&mut rng);
    let params = match ckpt {
        Some(p) => load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?,
        None => {
            let data = Dataset {
                images: Vec::new(),
                captions: vec![caption.clone()],
                pairs: Vec::new(),
            };
            init_params(&data, s.model.clone(), s.train.seed)?
        }
    };
    let report = bench_latency(&params, &caption, sizes, trials, s.train.seed)?;
    fs::write(out, report.to_jsonl()).with_context(|| format!("writing {}", out.display()))?;
    fs::write(out.with_extension("csv"), report.to_csv())?;
    for r in &report.rows {
        println!("size {:>8}  encode {:.4} ms  scan {:.4} ms", r.size, r.encode_ms, r.matmul_ms);
    }
    if let Some(slope) = report.scan_slope() {
        println!("scan log-log slope {slope:.3}");
    }
    println!("per-query image encodes {}", report.image_encodes);
    Ok(())
}

fn write_split(dir: &Path, name: &str, data: &Dataset) -> Result<()> {
    let ids: Vec<String> = (0..data.images.len()).map(|i| format!("{name}{i:05}")).collect();
    write_regions(
        &dir.join(format!("{name}.corf")),
        &RegionSet {
            ids: ids.clone(),
            images: data.images.clone(),
        },
    )?;
    fs::write(dir.join(format!("{name}.graphs.json")), graphs_to_json(&data.captions)?)?;
    let caps = caption_ids(data.captions.len());
    let pairs: Vec<(String, String)> = data.pairs.iter().map(|&(i, c)| (ids[i].clone(), caps[c].clone())).collect();
    fs::write(dir.join(format!("{name}.pairs")), format_pairs(&pairs))?;
    Ok(())
}

fn synth(s: &Settings, dir: &Path, n_train: usize, n_test: usize, region_dim: usize) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let config = SynthConfig {
        region_dim,
        ..SynthConfig::default()
    };
    let world = SynthWorld::new(config, &mut named_rng(s.train.seed, "synth.world"))?;
    let train = world.dataset(n_train, &mut named_rng(s.train.seed, "synth.train"));
    let test = world.dataset(n_test, &mut named_rng(s.train.seed, "synth.test"));
    write_split(dir, "train", &train)?;
    write_split(dir, "test", &test)?;
    eprintln!("wrote {n_train} train and {n_test} test pairs to {}", dir.display());
    Ok(())
}

