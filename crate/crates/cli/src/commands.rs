use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use grounded_core::catalog::{load_catalog, load_embeddings, load_interactions, Catalog, CatalogFormat, Item};
use grounded_core::decoder::{
    decode_response, GroundingStrategy, LanguageModel, RandomLogitModel, RetrievalIndex, Selection, UniformModel,
};
use grounded_core::eval::{bench_tree, csn, evaluate_run, ood_at_k, resolve_response, BenchConfig, RecommendationList};
use grounded_core::objectives::{
    build_examples, prompt_tokens, train_toy, ExampleOptions, LossKind, ProjectionParams, ToyLm, TrainConfig,
    TrainResources, TreeScope,
};
use grounded_core::rewards::{
    build_dpr_candidates, combine_rewards, conditional_perplexity, contribution_similarity, cosine,
    cosine_discriminator, r_cr, r_dc, r_dpr, r_i2i, r_u2i, u2i_rank, RewardComponents, RewardWeights,
    DEFAULT_ALPHA_PPL, DEFAULT_TAU,
};
use grounded_core::seed;
use grounded_core::tokenizer::{
    assign_codes, codes_to_surfaces, collision_rate, read_codes, train_codebooks, write_codes, CodeVocabulary,
    CodebookConfig, CodebookStack,
};
use grounded_core::{EmbeddingSet, PrefixTree, TokenId, Vocab};

use crate::config::{write_atomic, write_json, write_manifest, Settings, Timings};
use crate::{
    BenchArgs, BuildTreeArgs, CatalogArgs, Cli, Command, Common, DecodeArgs, EvalArgs, ModelArgs, RewardArgs,
    TokenizeArgs, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let s = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::BuildTree(a) => build_tree(a, s),
        Command::TokenizeItems(a) => tokenize_items(a, s),
        Command::TrainToy(a) => train(a, s),
        Command::Decode(a) => decode(a, s),
        Command::Reward(a) => reward(a, s),
        Command::Eval(a) => eval(a, s),
        Command::Bench(a) => bench(a, s),
    }
}

struct Base {
    seed: u64,
    out: PathBuf,
}

fn base(s: &mut Settings, c: Common) -> Result<Base> {
    Ok(Base {
        seed: s.value("seed", c.seed, 0)?,
        out: s.required("out", c.out.map(PathArg::from))?.0,
    })
}

/// `PathBuf` does not implement `Display`; this wrapper lets paths flow
/// through [`Settings`].
#[derive(Debug, Clone)]
struct PathArg(PathBuf);

impl From<PathBuf> for PathArg {
    fn from(p: PathBuf) -> Self {
        PathArg(p)
    }
}

impl std::str::FromStr for PathArg {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(PathArg(PathBuf::from(s)))
    }
}

impl std::fmt::Display for PathArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0.display())
    }
}

fn path(s: &mut Settings, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
    Ok(s.optional(key, flag.map(PathArg))?.map(|d| d.0))
}

fn required_path(s: &mut Settings, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
    Ok(s.required(key, flag.map(PathArg))?.0)
}

struct CatalogSource {
    path: PathBuf,
    format: CatalogFormat,
}

impl CatalogSource {
    fn resolve(s: &mut Settings, a: CatalogArgs) -> Result<Self> {
        let path = required_path(s, "catalog", a.catalog)?;
        let format: String = s.value("format", a.format, "jsonl".into())?;
        let format = format.parse::<CatalogFormat>().map_err(|e| anyhow!("`format`: {e}"))?;
        Ok(CatalogSource { path, format })
    }

    fn load(&self) -> Result<Catalog> {
        load_catalog(&self.path, self.format).with_context(|| format!("loading catalog {}", self.path.display()))
    }
}

fn histories(path: &Path, cat: &Catalog) -> Result<Vec<Vec<usize>>> {
    let logs = load_interactions(path, cat).with_context(|| format!("loading interactions {}", path.display()))?;
    logs.iter().map(|l| Ok(l.positions(cat)?)).collect()
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(
        fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

/// Codes, their vocabulary block and the extended vocabulary.
struct CodeSetup {
    vocab: Vocab,
    surfaces: Vec<Vec<TokenId>>,
    representative: Vec<usize>,
    collisions: usize,
}

fn load_codes(cat: &Catalog, codes: &Path, codebooks: &Path) -> Result<CodeSetup> {
    let stack = CodebookStack::read_jsonl(open(codebooks)?)
        .with_context(|| format!("reading codebooks {}", codebooks.display()))?;
    let codes = read_codes(open(codes)?, cat).with_context(|| format!("reading codes {}", codes.display()))?;
    let mut vocab = cat.vocab().clone();
    let cv = CodeVocabulary::extend(&mut vocab, stack.depth(), stack.size())?;
    let s = codes_to_surfaces(&codes, &cv)?;
    Ok(CodeSetup {
        vocab,
        surfaces: s.surfaces,
        representative: s.representative,
        collisions: s.collisions,
    })
}

fn build_tree(a: BuildTreeArgs, mut s: Settings) -> Result<()> {
    let b = base(&mut s, a.common)?;
    let src = CatalogSource::resolve(&mut s, a.catalog)?;
    let codes = path(&mut s, "codes", a.codes)?;
    let codebooks = path(&mut s, "codebooks", a.codebooks)?;
    let config = s.finish("build-tree")?;

    let mut t = Timings::default();
    let cat = t.time("load", || src.load())?;
    let (surfaces, positions, collisions) = match (&codes, &codebooks) {
        (Some(c), Some(cb)) => {
            let setup = load_codes(&cat, c, cb)?;
            (setup.surfaces, setup.representative, setup.collisions)
        }
        (None, None) => (cat.surfaces(), (0..cat.len()).collect(), 0),
        _ => bail!("`codes` and `codebooks` must be given together"),
    };
    let tree = t.time("build", || PrefixTree::build(&surfaces, &positions))?;
    write_atomic(&b.out, |w| Ok(tree.write_jsonl(w)?))?;
    let summary = json!({
        "nodes": tree.node_count(),
        "surfaces": tree.leaf_count(tree.root())?,
        "items": cat.len(),
        "collisions": collisions,
    });
    eprintln!("tree: {summary}");
    write_manifest(&b.out, "build-tree", &config, &[&b.out], &summary, &t)
}

fn tokenize_items(a: TokenizeArgs, mut s: Settings) -> Result<()> {
    let b = base(&mut s, a.common)?;
    let src = CatalogSource::resolve(&mut s, a.catalog)?;
    let emb_path = path(&mut s, "embeddings", a.embeddings)?;
    let dim = s.value("dim", a.dim, 16)?;
    let depth = s.value("depth", a.depth, 4)?;
    let size = s.value("size", a.size, 256)?;
    let iters = s.value("iters", a.iters, 10)?;
    let books_out =
        path(&mut s, "codebooks-out", a.codebooks_out)?.unwrap_or_else(|| sibling(&b.out, ".codebooks.jsonl"));
    let config = s.finish("tokenize-items")?;

    let mut t = Timings::default();
    let cat = t.time("load", || src.load())?;
    let emb = match &emb_path {
        Some(p) => load_embeddings(p, &cat).with_context(|| format!("loading embeddings {}", p.display()))?,
        None => EmbeddingSet::synthesize(&cat, dim, seed::derive(b.seed, "embeddings"))?,
    };
    let cfg = CodebookConfig::new(depth, size, iters, seed::derive(b.seed, "tokenizer"));
    let (stack, report) = t.time("train", || train_codebooks(emb.vectors(), &cfg))?;
    let codes = t.time("assign", || assign_codes(&emb, &stack))?;
    let rate = collision_rate(&codes)?;

    write_atomic(&books_out, |w| Ok(stack.write_jsonl(w)?))?;
    write_atomic(&b.out, |w| Ok(write_codes(w, &cat, &codes)?))?;
    let summary = json!({
        "collision_rate": rate,
        "stage_errors": report.stage_errors,
        "reseeded": report.reseeded,
    });
    eprintln!("codes: collision rate {rate:.4}");
    write_manifest(&b.out, "tokenize-items", &config, &[&b.out, &books_out], &summary, &t)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    model: ToyLm,
    projection: Option<ProjectionParams>,
}

fn read_model(path: &Path) -> Result<ModelFile> {
    serde_json::from_reader(open(path)?).with_context(|| format!("reading model {}", path.display()))
}

fn train(a: TrainArgs, mut s: Settings) -> Result<()> {
    let b = base(&mut s, a.common)?;
    let src = CatalogSource::resolve(&mut s, a.catalog)?;
    let inter = required_path(&mut s, "interactions", a.interactions)?;
    let loss: String = s.value("loss", a.loss, "scope-mask".into())?;
    let loss: LossKind = loss.parse().map_err(|e| anyhow!("`loss`: {e}"))?;
    let steps = s.value("steps", a.steps, 300)?;
    let lr = s.value("lr", a.lr, 0.5)?;
    let batch = s.value("batch", a.batch, 50)?;
    let width = s.value("width", a.width, 16)?;
    let window = s.value("window", a.window, 4)?;
    let max_labels = s.value("max-labels", a.max_labels, 3)?;
    let samples = s.value("samples", a.samples, 2)?;
    let alpha_ret = s.value("alpha-ret", a.alpha_ret, 1.0)?;
    let dim = s.value("dim", a.dim, 16)?;
    let model_out = path(&mut s, "model-out", a.model_out)?.unwrap_or_else(|| sibling(&b.out, ".model.json"));
    let config = s.finish("train-toy")?;

    let mut t = Timings::default();
    let cat = t.time("load", || src.load())?;
    let train_part: Vec<Vec<usize>> = histories(&inter, &cat)?
        .into_iter()
        .map(|h| h[..h.len().saturating_sub(2)].to_vec())
        .collect();
    let opts = ExampleOptions {
        max_labels,
        samples_per_history: samples,
    };
    let examples = build_examples(&cat, &train_part, opts, seed::derive(b.seed, "examples"))?;
    let positions: Vec<usize> = (0..cat.len()).collect();
    let tree = PrefixTree::build(&cat.surfaces(), &positions)?;
    let scope = TreeScope {
        tree: &tree,
        controls: cat.vocab().controls(),
    };
    let emb = EmbeddingSet::synthesize(&cat, dim, seed::derive(b.seed, "embeddings"))?;
    let resources = TrainResources {
        scope: Some(&scope),
        embeddings: Some(&emb),
    };
    let model = ToyLm::new(cat.vocab().len(), width, window, seed::derive(b.seed, "model"))?;
    let mut cfg = TrainConfig::new(loss, steps, lr, seed::derive(b.seed, "train"));
    cfg.alpha_ret = alpha_ret;
    cfg.batch_size = (batch > 0).then_some(batch);
    let outcome = t.time("train", || train_toy(model, None, &examples, resources, &cfg))?;

    let file = ModelFile {
        model: outcome.model,
        projection: outcome.projection,
    };
    write_atomic(&model_out, |w| Ok(serde_json::to_writer(&mut *w, &file)?))?;
    write_atomic(&b.out, |w| {
        for (step, l) in outcome.trace.iter().enumerate() {
            writeln!(w, "{}", json!({"step": step, "loss": l}))?;
        }
        Ok(())
    })?;
    let first = outcome.trace.first().copied().unwrap_or(f64::NAN);
    let last = outcome.trace.last().copied().unwrap_or(f64::NAN);
    let summary = json!({"examples": examples.len(), "first_loss": first, "last_loss": last});
    eprintln!("train: {} examples, loss {first:.4} -> {last:.4}", examples.len());
    write_manifest(&b.out, "train-toy", &config, &[&b.out, &model_out], &summary, &t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Strategy {
    Ret,
    Cgen,
    Token,
}

struct ModelOptions {
    strategy: Strategy,
    model: Option<PathBuf>,
    soi_bias: f64,
    tree: Option<PathBuf>,
    codes: Option<PathBuf>,
    codebooks: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    dim: usize,
    k: usize,
    max_len: usize,
    sampled: bool,
}

impl ModelOptions {
    fn resolve(s: &mut Settings, a: ModelArgs) -> Result<Self> {
        let strategy: String = s.value("strategy", a.strategy, "cgen".into())?;
        let strategy = match strategy.as_str() {
            "ret" => Strategy::Ret,
            "cgen" => Strategy::Cgen,
            "token" => Strategy::Token,
            other => bail!("`strategy`: expected ret, cgen or token, got `{other}`"),
        };
        let selection: String = s.value("selection", a.selection, "greedy".into())?;
        let sampled = match selection.as_str() {
            "greedy" => false,
            "sampled" => true,
            other => bail!("`selection`: expected greedy or sampled, got `{other}`"),
        };
        let k = s.value("k", a.k, 10)?;
        if k == 0 {
            bail!("`k` must be at least 1");
        }
        Ok(ModelOptions {
            strategy,
            model: path(s, "model", a.model)?,
            soi_bias: s.value("soi-bias", a.soi_bias, 4.0)?,
            tree: path(s, "tree", a.tree)?,
            codes: path(s, "codes", a.codes)?,
            codebooks: path(s, "codebooks", a.codebooks)?,
            embeddings: path(s, "embeddings", a.embeddings)?,
            dim: s.value("dim", a.dim, 16)?,
            k,
            max_len: s.value("max-len", a.max_len, 200)?,
            sampled,
        })
    }
}

/// Everything a decode needs, owned so the borrowed strategy can point
/// into it.
struct Decoder {
    catalog: Catalog,
    vocab: Vocab,
    strategy: Strategy,
    tree: Option<PrefixTree>,
    model: Box<dyn LanguageModel>,
    projection: Option<ProjectionParams>,
    embeddings: Option<EmbeddingSet>,
    surfaces: Vec<Vec<TokenId>>,
    k: usize,
    max_len: usize,
    sampled: bool,
    decode_seed: u64,
}

impl Decoder {
    fn new(catalog: Catalog, o: &ModelOptions, root: u64) -> Result<Self> {
        let mut vocab = catalog.vocab().clone();
        let mut tree = None;
        match o.strategy {
            Strategy::Cgen => {
                tree = Some(match &o.tree {
                    Some(p) => {
                        PrefixTree::read_jsonl(open(p)?).with_context(|| format!("reading tree {}", p.display()))?
                    }
                    None => PrefixTree::build(&catalog.surfaces(), &(0..catalog.len()).collect::<Vec<_>>())?,
                });
            }
            Strategy::Token => {
                let (codes, books) = match (&o.codes, &o.codebooks) {
                    (Some(c), Some(b)) => (c, b),
                    _ => bail!("the token strategy needs `codes` and `codebooks`"),
                };
                let setup = load_codes(&catalog, codes, books)?;
                vocab = setup.vocab;
                tree = Some(match &o.tree {
                    Some(p) => {
                        PrefixTree::read_jsonl(open(p)?).with_context(|| format!("reading tree {}", p.display()))?
                    }
                    None => PrefixTree::build(&setup.surfaces, &setup.representative)?,
                });
            }
            Strategy::Ret => {}
        }

        let (model, stored_projection): (Box<dyn LanguageModel>, _) = match &o.model {
            Some(p) => {
                let f = read_model(p)?;
                (Box::new(f.model), f.projection)
            }
            None => {
                let m = RandomLogitModel::new(vocab.len(), seed::derive(root, "model"))
                    .with_bias(vocab.soi_id(), o.soi_bias);
                (Box::new(m), None)
            }
        };
        if model.vocab_size() != vocab.len() {
            bail!(
                "model vocabulary has {} tokens but the {:?} strategy needs {}",
                model.vocab_size(),
                o.strategy,
                vocab.len()
            );
        }

        let (mut projection, mut embeddings) = (None, None);
        if o.strategy == Strategy::Ret {
            let emb = match &o.embeddings {
                Some(p) => {
                    load_embeddings(p, &catalog).with_context(|| format!("loading embeddings {}", p.display()))?
                }
                None => EmbeddingSet::synthesize(&catalog, o.dim, seed::derive(root, "embeddings"))?,
            };
            let width = model.hidden(&[]).len();
            projection = Some(match stored_projection {
                Some(p) => p,
                None => ProjectionParams::random(width, emb.dim(), seed::derive(root, "projection"))?,
            });
            embeddings = Some(emb);
        }
        let surfaces = catalog.surfaces();
        Ok(Decoder {
            catalog,
            vocab,
            strategy: o.strategy,
            tree,
            model,
            projection,
            embeddings,
            surfaces,
            k: o.k,
            max_len: o.max_len,
            sampled: o.sampled,
            decode_seed: seed::derive(root, "decode"),
        })
    }

    fn grounding(&self) -> GroundingStrategy<'_> {
        match self.strategy {
            Strategy::Ret => GroundingStrategy::Retrieval(RetrievalIndex {
                projection: self.projection.as_ref().expect("set for ret"),
                embeddings: self.embeddings.as_ref().expect("set for ret"),
                surfaces: &self.surfaces,
            }),
            Strategy::Cgen => GroundingStrategy::TitleTree(self.tree.as_ref().expect("set for cgen")),
            Strategy::Token => GroundingStrategy::CodeTree(self.tree.as_ref().expect("set for token")),
        }
    }

    fn resolve(&self, segment: &[TokenId]) -> Option<usize> {
        match self.strategy {
            Strategy::Token => self.tree.as_ref().and_then(|t| t.lookup(segment)),
            _ => self.catalog.lookup_surface(segment),
        }
    }

    fn run(&self, prompt: &[TokenId], stream: u64) -> Result<(grounded_core::DecodeOutput, RecommendationList)> {
        let selection = if self.sampled {
            Selection::Sampled {
                seed: seed::mix(self.decode_seed, stream),
            }
        } else {
            Selection::Greedy
        };
        let controls = self.vocab.controls();
        let out = decode_response(
            self.model.as_ref(),
            prompt,
            &self.grounding(),
            controls,
            self.k,
            self.max_len,
            selection,
        )?;
        let list = resolve_response(&out.response_tokens, controls, &self.vocab, |s| self.resolve(s));
        Ok((out, list))
    }
}

#[derive(Serialize)]
struct DecodeRecord {
    response_tokens: Vec<TokenId>,
    response_text: String,
    items: Vec<usize>,
    item_ids: Vec<String>,
    truncated: bool,
    ood: f64,
    timing: BTreeMap<String, f64>,
}

fn decode(a: DecodeArgs, mut s: Settings) -> Result<()> {
    let b = base(&mut s, a.common)?;
    let src = CatalogSource::resolve(&mut s, a.catalog)?;
    let opts = ModelOptions::resolve(&mut s, a.model)?;
    let prompt_ids = s.optional("prompt", a.prompt)?.map(|l| l.0).unwrap_or_default();
    let config = s.finish("decode")?;

    let mut t = Timings::default();
    let cat = t.time("load", || src.load())?;
    let prompt_pos = cat.positions_of(&prompt_ids)?;
    let prompt = prompt_tokens(&cat, &prompt_pos);
    let dec = t.time("setup", || Decoder::new(cat, &opts, b.seed))?;
    let (out, list) = t.time("decode", || dec.run(&prompt, 0))?;
    let record = DecodeRecord {
        response_text: dec.vocab.detokenize(&out.response_tokens),
        item_ids: out
            .items
            .iter()
            .map(|&i| dec.catalog.items()[i].item_id.clone())
            .collect(),
        ood: ood_at_k(&list, list.len().max(1))?,
        response_tokens: out.response_tokens,
        items: out.items,
        truncated: out.truncated,
        timing: t.as_map(),
    };
    write_json(&b.out, &record)?;
    let summary = json!({"items": record.items.len(), "truncated": record.truncated, "ood": record.ood});
    write_manifest(&b.out, "decode", &config, &[&b.out], &summary, &t)
}

#[derive(Deserialize)]
struct RewriteLine {
    item_id: String,
    rewrite: String,
    #[serde(default)]
    history: Option<Vec<String>>,
}

const COMPONENTS: [&str; 5] = ["u2i", "i2i", "dc", "cr", "dpr"];

fn parse_weights(text: &str) -> Result<RewardWeights> {
    if let Some(w) = RewardWeights::preset(text) {
        return Ok(w);
    }
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow!("`weights`: expected a preset or five numbers, got `{text}`"))?;
    match parts[..] {
        [a, b, c, d, e] => Ok(RewardWeights::new(a, b, c, d, e)?),
        _ => bail!("`weights`: expected five numbers, got {}", parts.len()),
    }
}

fn reward(a: RewardArgs, mut s: Settings) -> Result<()> {
    let b = base(&mut s, a.common)?;
    let src = CatalogSource::resolve(&mut s, a.catalog)?;
    let input = required_path(&mut s, "input", a.input)?;
    let component: String = s.value("component", a.component, "all".into())?;
    if component != "all" && !COMPONENTS.contains(&component.as_str()) {
        bail!("`component`: expected one of {COMPONENTS:?} or all, got `{component}`");
    }
    let weights_text: String = s.value("weights", a.weights, "uniform".into())?;
    let weights = parse_weights(&weights_text)?;
    let inter = path(&mut s, "interactions", a.interactions)?;
    let model_path = path(&mut s, "model", a.model)?;
    let tau = s.value("tau", a.tau, DEFAULT_TAU)?;
    let alpha_ppl = s.value("alpha-ppl", a.alpha_ppl, DEFAULT_ALPHA_PPL)?;
    let neighbors = s.value("neighbors", a.neighbors, 10)?;
    let dim = s.value("dim", a.dim, 16)?;
    let config = s.finish("reward")?;

    let wanted: Vec<&str> = if component == "all" {
        COMPONENTS.to_vec()
    } else {
        vec![component.as_str()]
    };
    let mut t = Timings::default();
    let cat = t.time("load", || src.load())?;
    let emb_seed = seed::derive(b.seed, "embeddings");
    let emb = EmbeddingSet::synthesize(&cat, dim, emb_seed)?;
    let sim = match (&inter, wanted.contains(&"i2i")) {
        (Some(p), true) => Some(contribution_similarity(&histories(p, &cat)?, cat.len())?),
        (None, true) => bail!("the i2i reward needs `interactions`"),
        _ => None,
    };
    let model: Box<dyn LanguageModel> = match &model_path {
        Some(p) => Box::new(read_model(p)?.model),
        None => Box::new(UniformModel {
            vocab_size: cat.vocab().len(),
            hidden_width: 1,
        }),
    };

    let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
    let mut rows = Vec::new();
    t.time("score", || -> Result<()> {
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let ctx = || format!("{} line {}", input.display(), n + 1);
            let rec: RewriteLine = serde_json::from_str(line).with_context(ctx)?;
            let pos = cat
                .position(&rec.item_id)
                .ok_or_else(|| anyhow!("unknown item `{}`", rec.item_id))
                .with_context(ctx)?;
            let orig = &cat.items()[pos];
            let rewritten = Item {
                title: rec.rewrite.clone(),
                surface: Vec::new(),
                ..orig.clone()
            };
            let rv = grounded_core::catalog::synth_embedding(&rewritten, dim, emb_seed)?;
            let mut values = BTreeMap::new();
            for &c in &wanted {
                let v = match c {
                    "u2i" => {
                        let ids = rec
                            .history
                            .as_ref()
                            .ok_or_else(|| anyhow!("`history` is required for u2i"))
                            .with_context(ctx)?;
                        let hist = cat.positions_of(ids).with_context(ctx)?;
                        let mut vectors = emb.vectors().to_vec();
                        vectors[pos] = rv.clone();
                        let swapped = EmbeddingSet::new(dim, vectors)?;
                        r_u2i(u2i_rank(&hist, pos, &swapped)?, tau)?
                    }
                    "i2i" => {
                        let orig_rank = sim.as_ref().expect("built above").neighbors(pos, neighbors);
                        let mut gen = orig_rank.clone();
                        gen.sort_by(|&x, &y| {
                            cosine(&rv, emb.vector(y))
                                .total_cmp(&cosine(&rv, emb.vector(x)))
                                .then(x.cmp(&y))
                        });
                        r_i2i(&orig_rank, &gen).with_context(ctx)?
                    }
                    "dc" => {
                        let target = cat
                            .vocab()
                            .tokenize(&rec.rewrite)
                            .map_err(|e| anyhow!("rewrite is not in the catalog vocabulary: {e}"))
                            .with_context(ctx)?;
                        let ppl = conditional_perplexity(model.as_ref(), &orig.surface, &target).with_context(ctx)?;
                        r_dc(ppl, alpha_ppl)?
                    }
                    "cr" => {
                        let len_y = grounded_core::catalog::normalize_title(&rec.rewrite)
                            .split_whitespace()
                            .count();
                        r_cr(orig.surface.len(), len_y).with_context(ctx)?
                    }
                    "dpr" => {
                        let cands = build_dpr_candidates(pos, &emb)?;
                        let picked = cosine_discriminator(&rv, &cands, &emb).expect("four candidates");
                        r_dpr(picked, pos)
                    }
                    _ => unreachable!("checked above"),
                };
                values.insert(c.to_string(), v);
            }
            let mut row = json!({"item_id": rec.item_id, "components": values});
            if wanted.len() == COMPONENTS.len() {
                let comps = RewardComponents {
                    u2i: values["u2i"],
                    i2i: values["i2i"],
                    dc: values["dc"],
                    cr: values["cr"],
                    dpr: values["dpr"],
                };
                row["combined"] = json!(combine_rewards(&comps, &weights)?);
            }
            rows.push(row);
        }
        Ok(())
    })?;

    write_atomic(&b.out, |w| {
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    let summary = json!({"rewrites": rows.len()});
    write_manifest(&b.out, "reward", &config, &[&b.out], &summary, &t)
}

fn eval(a: EvalArgs, mut s: Settings) -> Result<()> {
    let b = base(&mut s, a.common)?;
    let src = CatalogSource::resolve(&mut s, a.catalog)?;
    let opts = ModelOptions::resolve(&mut s, a.model)?;
    let inter = required_path(&mut s, "interactions", a.interactions)?;
    let context = s.value("context", a.context, 10)?;
    let config = s.finish("eval")?;

    let mut t = Timings::default();
    let cat = t.time("load", || src.load())?;
    let hist = histories(&inter, &cat)?;
    let dec = t.time("setup", || Decoder::new(cat, &opts, b.seed))?;
    let mut decodes = Vec::new();
    let mut responses = Vec::new();
    let mut truncated = 0;
    t.time("decode", || -> Result<()> {
        for (u, h) in hist.iter().enumerate().filter(|(_, h)| h.len() >= 2) {
            let n = h.len();
            let ctx = &h[(n - 1).saturating_sub(context)..n - 1];
            let prompt = prompt_tokens(&dec.catalog, ctx);
            let (out, list) = dec.run(&prompt, u as u64)?;
            truncated += usize::from(out.truncated);
            decodes.push((list, h[n - 1]));
            responses.push(out.response_tokens);
        }
        Ok(())
    })?;
    if decodes.is_empty() {
        bail!("no history has at least two items");
    }
    let run = evaluate_run(&decodes, &[5, 10])?;
    let mut report = BTreeMap::new();
    for key in ["hr@5", "hr@10", "ndcg@5", "ndcg@10", "repeat@10", "ood@10"] {
        report.insert(key.to_string(), json!(run.get(key).expect("computed for k = 5, 10")));
    }
    report.insert("csn".into(), json!(csn(&responses, dec.k, &dec.vocab)));
    report.insert("decodes".into(), json!(run.decodes));
    report.insert("truncated".into(), json!(truncated));
    write_json(&b.out, &report)?;
    eprintln!("eval: {}", serde_json::to_string(&report)?);
    let summary = json!({"decodes": run.decodes});
    write_manifest(&b.out, "eval", &config, &[&b.out], &summary, &t)
}

fn bench(a: BenchArgs, mut s: Settings) -> Result<()> {
    let b = base(&mut s, a.common)?;
    let d = BenchConfig::default();
    let cfg = BenchConfig {
        sizes: s.value("sizes", a.sizes, crate::config::List(d.sizes))?.0,
        trials: s.value("trials", a.trials, d.trials)?,
        warmup: s.value("warmup", a.warmup, d.warmup)?,
        probes: s.value("probes", a.probes, d.probes)?,
        title_len: s.value("title-len", a.title_len, d.title_len)?,
        word_vocab: s.value("word-vocab", a.word_vocab, d.word_vocab)?,
        items_per_response: s.value("items-per-response", a.items_per_response, d.items_per_response)?,
        seed: seed::derive(b.seed, "bench"),
    };
    let config = s.finish("bench")?;

    let mut t = Timings::default();
    let rows = t.time("bench", || bench_tree(&cfg))?;
    for r in &rows {
        eprintln!(
            "bench: {} titles, {} nodes, build {:.4}s, inner {:.1}ns/token, outer {:.1}ns/token",
            r.size,
            r.nodes,
            r.build_seconds,
            r.inner_seconds_per_token * 1e9,
            r.outer_seconds_per_token * 1e9
        );
    }
    write_json(&b.out, &json!({ "rows": rows }))?;
    let summary = json!({"sizes": cfg.sizes});
    write_manifest(&b.out, "bench", &config, &[&b.out], &summary, &t)
}
