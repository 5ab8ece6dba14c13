use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use anyhow::{Context, Result};

use evs_core::baselines::{self, merge_tokens_matched, BaselineConfig, BaselineMethod};
use evs_core::cost::{self, Calibration, KVCacheSpec};
use evs_core::io::container::{self, Kind, Magic};
use evs_core::io::{self as evs_io, netpbm};
use evs_core::rate::{self, BetaRateSpec, RateSampler};
use evs_core::{
    build_mask_embedding, build_mask_rgb, gather_tokens, stream_stats, EmbeddingGrid, GridShape,
    PositionMode, PruningConfig, RetentionMask, Selector, VideoClip,
};

use crate::args::{
    Cli, Command, CompareArgs, CostArgs, MaskArgs, MethodArg, PruneArgs, SampleRateArgs, StatsArgs,
    VizArgs,
};

/// Invocation problems detectable before any computation: wrong input kind for
/// a flag, or a missing input a method needs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mask(a) => cmd_mask(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Cost(a) => cmd_cost(a),
        Command::SampleRate(a) => cmd_sample_rate(a),
        Command::Viz(a) => cmd_viz(a),
        Command::Stats(a) => cmd_stats(a),
    }
}

fn tensor_kind(bytes: &[u8], path: &Path) -> Result<Kind> {
    let (header, _) = container::decode(Magic::Tensor, bytes)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(header.kind)
}

fn load_clip(path: &Path) -> Result<VideoClip> {
    if path.is_dir() {
        return netpbm::read_frame_dir(path)
            .with_context(|| format!("reading frames from {}", path.display()));
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match tensor_kind(&bytes, path)? {
        Kind::Clip => {
            Ok(evs_io::decode_clip(&bytes)
                .with_context(|| format!("reading {}", path.display()))?)
        }
        other => Err(usage(format!(
            "{} holds {other:?} data, but a clip is required",
            path.display()
        ))),
    }
}

fn load_embeddings(path: &Path) -> Result<EmbeddingGrid<f32>> {
    if path.is_dir() {
        return Err(usage(format!(
            "{} is a frame directory, but an embedding file is required",
            path.display()
        )));
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match tensor_kind(&bytes, path)? {
        Kind::Embedding => Ok(evs_io::decode_embeddings(&bytes)
            .with_context(|| format!("reading {}", path.display()))?),
        other => Err(usage(format!(
            "{} holds {other:?} data, but embeddings are required",
            path.display()
        ))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    container::write_atomic(path, text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_mask(a: MaskArgs) -> Result<()> {
    let selector = Selector::from(a.selector);
    let config = PruningConfig::new(a.q, a.mode.into(), selector)?;
    let mask = match selector {
        Selector::Rgb => {
            let clip = load_clip(&a.input)?;
            let geometry = clip.geometry(a.geometry.patch_size, a.geometry.downsample)?;
            build_mask_rgb::<f64>(&clip, &geometry, &config)?
        }
        Selector::Embedding => build_mask_embedding(&load_embeddings(&a.input)?, &config)?,
    };
    evs_io::write_mask(&mask, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("selector {}", mask.selector());
    println!("mode {}", config.threshold_mode);
    println!("{}", stream_stats(&mask));
    Ok(())
}

fn cmd_prune(a: PruneArgs) -> Result<()> {
    let grid = load_embeddings(&a.embeddings)?;
    let mask =
        evs_io::read_mask(&a.mask).with_context(|| format!("reading {}", a.mask.display()))?;
    let mode = PositionMode::from(a.positions);
    let stream = gather_tokens(Some(&grid), &mask, mode)?;
    evs_io::write_tokens(&stream, &a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("tokens {}", stream.len());
    println!("source_tokens {}", stream.source_token_count());
    println!("positions {}", stream.position_mode());
    Ok(())
}

struct MethodResult {
    method: MethodArg,
    kept: Vec<bool>,
    file: String,
}

fn compare_shape(
    clip: Option<&VideoClip>,
    grid: Option<&EmbeddingGrid<f32>>,
    a: &CompareArgs,
) -> Result<GridShape> {
    let from_clip = clip
        .map(|c| {
            c.geometry(a.geometry.patch_size, a.geometry.downsample)
                .map(|g| g.grid(c.frames()))
        })
        .transpose()?;
    match (from_clip, grid.map(|g| g.shape())) {
        (Some(c), Some(e)) if c != e => Err(usage(format!(
            "clip grid {}x{}x{} does not match embedding grid {}x{}x{}",
            c.frames, c.height, c.width, e.frames, e.height, e.width
        ))),
        (Some(s), _) | (None, Some(s)) => Ok(s),
        (None, None) => Err(usage("compare needs --clip, --embeddings, or both")),
    }
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let mut methods = if a.method.is_empty() {
        vec![
            MethodArg::Evs,
            MethodArg::Random,
            MethodArg::Subsample,
            MethodArg::Merge,
        ]
    } else {
        a.method.clone()
    };
    methods.sort();
    methods.dedup();
    if methods.contains(&MethodArg::Merge) && a.embeddings.is_none() {
        return Err(usage("--method merge requires --embeddings"));
    }
    let clip = a.clip.as_deref().map(load_clip).transpose()?;
    let grid = a.embeddings.as_deref().map(load_embeddings).transpose()?;
    let shape = compare_shape(clip.as_ref(), grid.as_ref(), &a)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let mut summary = String::new();
    let mut results = Vec::new();
    let save_mask = |mask: &RetentionMask, name: &str| -> Result<String> {
        let file = format!("{name}.evsm");
        let path = a.out_dir.join(&file);
        evs_io::write_mask(mask, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(file)
    };
    let bits = |mask: &RetentionMask| {
        (0..shape.len())
            .map(|i| mask.is_kept(i))
            .collect::<Vec<_>>()
    };

    for &method in &methods {
        let result = match method {
            MethodArg::Evs => {
                let mask = if let Some(clip) = &clip {
                    let geometry = clip.geometry(a.geometry.patch_size, a.geometry.downsample)?;
                    build_mask_rgb::<f64>(
                        clip,
                        &geometry,
                        &PruningConfig::rgb(a.q, Default::default())?,
                    )?
                } else {
                    let grid = grid.as_ref().expect("shape came from embeddings");
                    build_mask_embedding(grid, &PruningConfig::embedding(a.q, Default::default())?)?
                };
                MethodResult {
                    method,
                    kept: bits(&mask),
                    file: save_mask(&mask, "evs")?,
                }
            }
            MethodArg::Random => {
                let config = BaselineConfig::new(BaselineMethod::Random, a.q, a.seed)?;
                let mask = baselines::random_mask(shape, &config)?;
                MethodResult {
                    method,
                    kept: bits(&mask),
                    file: save_mask(&mask, "random")?,
                }
            }
            MethodArg::Subsample => {
                let frames = baselines::subsample_frames(shape.frames, a.q)?;
                let list: Vec<String> = frames.iter().map(|t| t.to_string()).collect();
                writeln!(
                    summary,
                    "subsample kept_frames {} [{}]",
                    frames.len(),
                    list.join(",")
                )?;
                let mask = baselines::subsample_mask(shape, a.q)?;
                MethodResult {
                    method,
                    kept: bits(&mask),
                    file: save_mask(&mask, "subsample")?,
                }
            }
            MethodArg::Merge => {
                let grid = grid.as_ref().expect("checked above");
                let (stream, _) = merge_tokens_matched(grid, a.q, a.positions.into())?;
                let path = a.out_dir.join("merge.evst");
                evs_io::write_tokens(&stream, &path)
                    .with_context(|| format!("writing {}", path.display()))?;
                let mut kept = vec![false; shape.len()];
                for site in stream.sites() {
                    kept[shape.flat_index(site)?] = true;
                }
                MethodResult {
                    method,
                    kept,
                    file: "merge.evst".into(),
                }
            }
        };
        results.push(result);
    }

    writeln!(
        summary,
        "q {} grid {}x{}x{} tokens {}",
        a.q,
        shape.frames,
        shape.height,
        shape.width,
        shape.len()
    )?;
    for r in &results {
        let k = r.kept.iter().filter(|&&b| b).count();
        writeln!(
            summary,
            "{} retained {} fraction {:.6} file {}",
            r.method.name(),
            k,
            k as f64 / shape.len() as f64,
            r.file
        )?;
    }
    for (i, x) in results.iter().enumerate() {
        for y in &results[i + 1..] {
            let both = x
                .kept
                .iter()
                .zip(&y.kept)
                .filter(|(p, q)| **p && **q)
                .count();
            let either = x
                .kept
                .iter()
                .zip(&y.kept)
                .filter(|(p, q)| **p || **q)
                .count();
            writeln!(
                summary,
                "overlap {} {} shared {} jaccard {:.6}",
                x.method.name(),
                y.method.name(),
                both,
                both as f64 / either.max(1) as f64
            )?;
        }
    }
    write_text(&a.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_cost(a: CostArgs) -> Result<()> {
    let cal = match &a.calibration {
        Some(p) => cost::read_calibration(p).with_context(|| format!("reading {}", p.display()))?,
        None => Calibration::embedded(),
    };
    let report = cost::speedup_report(&cal, &a.q, &a.model)?;
    print!("{report}");
    if let Some(path) = &a.csv {
        write_text(path, &report.to_csv())?;
    }

    let kv = &a.kv;
    let Some(kv_dim) = kv.kv_dim else {
        return Ok(());
    };
    if kv.vision_tokens + kv.text_tokens == 0 {
        return Err(usage("--kv-dim needs --vision-tokens and/or --text-tokens"));
    }
    let base = KVCacheSpec {
        seq_len: 0,
        batch: kv.batch,
        prefill_queue: kv.prefill_queue,
        kv_dim_per_token: kv_dim,
        kv_elem_bytes: kv.kv_bytes,
        weight_elem_bytes: kv.weight_bytes,
        model_dim: kv.model_dim,
        attn_params: kv.attn_params,
        query_prefill: kv.query_prefill,
    };
    println!("q\tseq_len\tkv_cache_mib\ttotal_attention_mib");
    for q in std::iter::once(0.0).chain(a.q.iter().copied()) {
        let s = cost::pruned_seq_len(kv.vision_tokens, q, kv.text_tokens)?;
        let spec = base.with_seq_len(s as u64);
        println!(
            "{q:.2}\t{s}\t{:.4}\t{:.4}",
            cost::kv_cache_memory::<f64>(&spec)?,
            cost::total_attention_memory::<f64>(&spec)?
        );
    }
    Ok(())
}

fn cmd_sample_rate(a: SampleRateArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let spec = BetaRateSpec::new(a.mode_target, a.concentration)?;
    let draws = RateSampler::new(spec, a.seed)?.sample_n(a.n);
    let summary = rate::summarize(&draws, a.bins)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    writeln!(out, "alpha {}", spec.alpha())?;
    writeln!(out, "beta {}", spec.beta())?;
    writeln!(out, "n {}", summary.n)?;
    writeln!(out, "mean {:.6}", summary.mean)?;
    writeln!(out, "histogram_mode {:.4}", summary.histogram_mode)?;
    let mut lines = String::with_capacity(draws.len() * 20);
    for q in &draws {
        writeln!(lines, "{q}")?;
    }
    match &a.out {
        Some(path) => write_text(path, &lines)?,
        None => out.write_all(lines.as_bytes())?,
    }
    out.flush()?;
    Ok(())
}

fn cmd_viz(a: VizArgs) -> Result<()> {
    let clip = load_clip(&a.clip)?;
    let geometry = clip.geometry(a.geometry.patch_size, a.geometry.downsample)?;
    let mask =
        evs_io::read_mask(&a.mask).with_context(|| format!("reading {}", a.mask.display()))?;
    let frames = evs_core::viz::render_overlay(&clip, &geometry, &mask, a.darken)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (t, planes) in frames.iter().enumerate() {
        let path = a.out_dir.join(format!("frame_{t:04}.ppm"));
        let bytes = netpbm::encode_ppm(clip.width(), clip.height(), planes);
        container::write_atomic(&path, &bytes)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("frames {}", frames.len());
    println!("out_dir {}", a.out_dir.display());
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let magic = bytes.get(..8);
    if magic == Some(&Magic::Mask.bytes()[..]) {
        let mask = evs_io::decode_mask(&bytes)
            .with_context(|| format!("reading {}", a.input.display()))?;
        println!("selector {}", mask.selector());
        println!("pruning_rate {}", mask.pruning_rate());
        println!("{}", stream_stats(&mask));
    } else if magic == Some(&Magic::Tokens.bytes()[..]) {
        let stream = evs_io::decode_tokens(&bytes)
            .with_context(|| format!("reading {}", a.input.display()))?;
        let shape = stream.shape();
        let mut per_frame = vec![0usize; shape.frames];
        for site in stream.sites() {
            per_frame[site.t] += 1;
        }
        let counts: Vec<String> = per_frame.iter().map(|c| c.to_string()).collect();
        println!("tokens {}", stream.len());
        println!("source_tokens {}", stream.source_token_count());
        println!(
            "retained_fraction {:.6}",
            stream.len() as f64 / stream.source_token_count().max(1) as f64
        );
        println!("positions {}", stream.position_mode());
        println!("channels {}", stream.channels());
        println!("per_frame {}", counts.join(","));
    } else {
        return Err(usage(format!(
            "{} is neither a mask nor a token file",
            a.input.display()
        )));
    }
    Ok(())
}
