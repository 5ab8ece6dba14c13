use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evs_core::io::{self as evs_io, netpbm};
use evs_core::{
    build_mask_embedding, gather_tokens, EmbeddingGrid, GridShape, PixelData, PositionMode,
    PruningConfig, RetentionMask, SelectorTag, ThresholdMode, VideoClip,
};
use tempfile::TempDir;

fn evs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evs"))
        .args(args)
        .output()
        .expect("spawn evs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = evs(args);
    assert!(
        o.status.success(),
        "evs {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("no '{key}' line in:\n{text}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn clip_with(
    frames: usize,
    h: usize,
    w: usize,
    f: impl Fn(usize, usize, usize, usize) -> u8,
) -> VideoClip {
    let mut data = Vec::with_capacity(frames * 3 * h * w);
    for t in 0..frames {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(t, c, y, x));
                }
            }
        }
    }
    VideoClip::new(frames, h, w, PixelData::U8(data)).unwrap()
}

/// Deterministic pseudo-random embeddings; no RNG crate needed for fixtures.
fn embeddings(shape: GridShape, channels: usize, salt: u32) -> EmbeddingGrid<f32> {
    let data = (0..shape.len() * channels)
        .map(|i| {
            let h = (i as u32 ^ salt)
                .wrapping_mul(2_654_435_761)
                .rotate_left(13);
            (h % 2001) as f32 / 1000.0 - 1.0
        })
        .collect();
    EmbeddingGrid::new(shape, channels, data).unwrap()
}

fn write_clip(dir: &TempDir, name: &str, clip: &VideoClip) -> PathBuf {
    let path = dir.path().join(name);
    evs_io::write_clip(clip, &path).unwrap();
    path
}

fn write_emb(dir: &TempDir, name: &str, grid: &EmbeddingGrid<f32>) -> PathBuf {
    let path = dir.path().join(name);
    evs_io::write_embeddings(grid, &path).unwrap();
    path
}

#[test]
fn mask_on_constant_clip_prints_budget_fraction() {
    let dir = TempDir::new().unwrap();
    // 5 frames of 8x8 pixels, 2x2 effective patches: grid 4x4
    let clip = write_clip(&dir, "c.tbin", &clip_with(5, 8, 8, |_, _, _, _| 7));
    let out = dir.path().join("m.evsm");
    let text = ok(&[
        "mask",
        p(&clip),
        "--selector",
        "rgb",
        "--q",
        "0.75",
        "--mode",
        "exact-budget",
        "--patch-size",
        "2",
        "--downsample",
        "1",
        "--out",
        p(&out),
    ]);
    let expected = (16.0 + (0.25f64 * 64.0).round()) / 80.0;
    let printed: f64 = field(&text, "retained_fraction").parse().unwrap();
    assert!((printed - expected).abs() < 1e-6, "{printed} vs {expected}");
    assert_eq!(evs_io::read_mask(&out).unwrap().kept_count(), 32);
}

#[test]
fn zero_rate_keeps_everything() {
    let dir = TempDir::new().unwrap();
    let clip = write_clip(
        &dir,
        "c.tbin",
        &clip_with(3, 8, 8, |t, c, y, x| (t * 40 + c + y * x) as u8),
    );
    let out = dir.path().join("m.evsm");
    let text = ok(&[
        "mask",
        p(&clip),
        "--selector",
        "rgb",
        "--q",
        "0",
        "--patch-size",
        "4",
        "--downsample",
        "1",
        "--out",
        p(&out),
    ]);
    assert_eq!(field(&text, "retained_fraction"), "1.000000");
}

#[test]
fn rgb_and_embedding_masks_disagreement_matches_site_oracle() {
    let dir = TempDir::new().unwrap();
    let clip = clip_with(4, 8, 8, |t, c, y, x| {
        ((t * 13 + c * 7 + y * 5 + x * 3) * (t + 1) % 251) as u8
    });
    let grid = embeddings(GridShape::new(4, 2, 2), 6, 99);
    let clip_path = write_clip(&dir, "c.tbin", &clip);
    let emb_path = write_emb(&dir, "e.tbin", &grid);
    let rgb_out = dir.path().join("rgb.evsm");
    let emb_out = dir.path().join("emb.evsm");
    ok(&[
        "mask",
        p(&clip_path),
        "--selector",
        "rgb",
        "--q",
        "0.5",
        "--patch-size",
        "4",
        "--downsample",
        "1",
        "--out",
        p(&rgb_out),
    ]);
    ok(&[
        "mask",
        p(&emb_path),
        "--selector",
        "embedding",
        "--q",
        "0.5",
        "--out",
        p(&emb_out),
    ]);
    let a = evs_io::read_mask(&rgb_out).unwrap();
    let b = evs_io::read_mask(&emb_out).unwrap();
    let oracle = (0..16).filter(|&i| a.is_kept(i) != b.is_kept(i)).count();
    assert_eq!(a.disagreement(&b).unwrap(), oracle);
    assert_eq!(a.selector(), SelectorTag::Rgb);
    assert_eq!(b.selector(), SelectorTag::Embedding);
}

#[test]
fn selector_input_mismatch_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let emb = write_emb(&dir, "e.tbin", &embeddings(GridShape::new(2, 2, 2), 3, 1));
    let clip = write_clip(&dir, "c.tbin", &clip_with(2, 4, 4, |_, _, _, _| 0));
    let out = dir.path().join("m.evsm");
    let o = evs(&[
        "mask",
        p(&emb),
        "--selector",
        "rgb",
        "--q",
        "0.5",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = evs(&[
        "mask",
        p(&clip),
        "--selector",
        "embedding",
        "--q",
        "0.5",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_and_missing_flags_are_rejected() {
    assert!(!evs(&[
        "mask",
        "x",
        "--selector",
        "rgb",
        "--q",
        "0.5",
        "--out",
        "y",
        "--bogus"
    ])
    .status
    .success());
    assert!(
        !evs(&["prune", "--embeddings", "a", "--mask", "b", "--out", "c"])
            .status
            .success()
    );
    assert!(!evs(&["frobnicate"]).status.success());
}

#[test]
fn mask_then_prune_matches_library_composition() {
    let dir = TempDir::new().unwrap();
    let grid = embeddings(GridShape::new(3, 2, 3), 4, 7);
    let emb = write_emb(&dir, "e.tbin", &grid);
    let mask_path = dir.path().join("m.evsm");
    ok(&[
        "mask",
        p(&emb),
        "--selector",
        "embedding",
        "--q",
        "0.6",
        "--out",
        p(&mask_path),
    ]);
    let config = PruningConfig::embedding(0.6, ThresholdMode::ExactBudget).unwrap();
    let lib_mask = build_mask_embedding(&grid, &config).unwrap();
    assert_eq!(evs_io::read_mask(&mask_path).unwrap(), lib_mask);

    for (flag, mode) in [
        ("preserve", PositionMode::Preserving),
        ("sequential", PositionMode::Sequential),
    ] {
        let out = dir.path().join(format!("{flag}.evst"));
        let text = ok(&[
            "prune",
            "--embeddings",
            p(&emb),
            "--mask",
            p(&mask_path),
            "--positions",
            flag,
            "--out",
            p(&out),
        ]);
        let lib = gather_tokens(Some(&grid), &lib_mask, mode).unwrap();
        assert_eq!(
            std::fs::read(&out).unwrap(),
            evs_io::encode_tokens(&lib).unwrap()
        );
        assert_eq!(field(&text, "tokens"), lib.len().to_string());
        assert_eq!(field(&text, "positions"), mode.as_str());
    }
}

#[test]
fn prune_shape_mismatch_fails() {
    let dir = TempDir::new().unwrap();
    let emb = write_emb(&dir, "e.tbin", &embeddings(GridShape::new(2, 2, 2), 3, 1));
    let mask = RetentionMask::all_kept(GridShape::new(2, 2, 3), SelectorTag::Rgb);
    let mask_path = dir.path().join("m.evsm");
    evs_io::write_mask(&mask, &mask_path).unwrap();
    let out = dir.path().join("t.evst");
    let o = evs(&[
        "prune",
        "--embeddings",
        p(&emb),
        "--mask",
        p(&mask_path),
        "--positions",
        "sequential",
        "--out",
        p(&out),
    ]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn compare_matches_budgets() {
    let dir = TempDir::new().unwrap();
    let (t, h, w) = (6, 8, 8);
    let clip = write_clip(
        &dir,
        "c.tbin",
        &clip_with(t, h, w, |t, c, y, x| {
            ((t * 31 + c * 3 + y * 17 + x * 11) % 256) as u8
        }),
    );
    let emb = write_emb(&dir, "e.tbin", &embeddings(GridShape::new(t, 4, 4), 5, 3));
    let out_dir = dir.path().join("cmp");
    let text = ok(&[
        "compare",
        "--q",
        "0.75",
        "--clip",
        p(&clip),
        "--embeddings",
        p(&emb),
        "--patch-size",
        "2",
        "--downsample",
        "1",
        "--out-dir",
        p(&out_dir),
        "--seed",
        "5",
    ]);
    let per_frame_fraction = 16.0 / (t as f64 * 16.0);
    for method in ["evs", "random", "subsample", "merge"] {
        let line = text
            .lines()
            .find(|l| l.starts_with(&format!("{method} retained")))
            .unwrap();
        let frac: f64 = line.split_whitespace().nth(4).unwrap().parse().unwrap();
        assert!(
            (frac - 0.25).abs() <= per_frame_fraction,
            "{method}: {frac}"
        );
    }
    let retained = |m: &str| {
        field(&text, &format!("{m} retained"))
            .split(' ')
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(retained("evs"), (16 + 20).to_string());
    assert_eq!(retained("random"), retained("evs"));
    assert_eq!(retained("merge"), retained("evs"));
    for file in [
        "evs.evsm",
        "random.evsm",
        "subsample.evsm",
        "merge.evst",
        "summary.txt",
    ] {
        assert!(out_dir.join(file).exists(), "{file}");
    }
    assert!(text.contains("overlap evs random shared"));
}

#[test]
fn compare_subsample_lists_kept_frames() {
    let dir = TempDir::new().unwrap();
    let clip = write_clip(&dir, "c.tbin", &clip_with(32, 4, 4, |_, _, _, _| 1));
    let out_dir = dir.path().join("cmp");
    let text = ok(&[
        "compare",
        "--method",
        "subsample",
        "--q",
        "0.75",
        "--clip",
        p(&clip),
        "--patch-size",
        "2",
        "--downsample",
        "1",
        "--out-dir",
        p(&out_dir),
    ]);
    let line = field(&text, "subsample kept_frames");
    assert!(line.starts_with("8 ["), "{line}");
    // stride oracle: round(i * 31 / 7), half up
    let expected: Vec<String> = (0..8)
        .map(|i| ((i * 31) as f64 / 7.0 + 0.5).floor().to_string())
        .collect();
    assert!(
        line.ends_with(&format!("[{}]", expected.join(","))),
        "{line}"
    );
}

#[test]
fn compare_merge_needs_embeddings() {
    let dir = TempDir::new().unwrap();
    let clip = write_clip(&dir, "c.tbin", &clip_with(2, 4, 4, |_, _, _, _| 1));
    let o = evs(&[
        "compare",
        "--method",
        "merge",
        "--q",
        "0.5",
        "--clip",
        p(&clip),
        "--out-dir",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cost_reports_table_speedup() {
    let text = ok(&["cost", "--model", "7B", "--q", "0.75"]);
    let row = text.lines().find(|l| l.starts_with("0.75\t")).unwrap();
    let measured: f64 = row.split('\t').nth(1).unwrap().parse().unwrap();
    assert!((measured - 3.93).abs() <= 0.01, "{measured}");
}

#[test]
fn cost_memory_and_csv() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("s.csv");
    let text = ok(&[
        "cost",
        "--model",
        "14B",
        "--q",
        "0.5",
        "--csv",
        p(&csv),
        "--kv-dim",
        "1",
        "--kv-bytes",
        "1",
        "--vision-tokens",
        "2097152",
    ]);
    // 2^21 vision tokens at 1 byte each: 2 MiB unpruned, 1 MiB at q = 0.5
    assert!(
        text.lines().any(|l| l == "0.00\t2097152\t2.0000\t2.0000"),
        "{text}"
    );
    assert!(
        text.lines().any(|l| l == "0.50\t1048576\t1.0000\t1.0000"),
        "{text}"
    );
    let csv = std::fs::read_to_string(&csv).unwrap();
    assert!(csv.starts_with("model,q,"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn cost_rejects_unknown_model() {
    assert!(!evs(&["cost", "--model", "70B"]).status.success());
}

#[test]
fn sample_rate_histogram_mode() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("draws.txt");
    let text = ok(&[
        "sample-rate",
        "--mode-target",
        "0.75",
        "--concentration",
        "20",
        "--n",
        "1e6",
        "--out",
        p(&out),
    ]);
    let mode: f64 = field(&text, "histogram_mode").parse().unwrap();
    assert!((mode - 0.75).abs() <= 0.02, "{mode}");
    assert_eq!(
        std::fs::read_to_string(&out).unwrap().lines().count(),
        1_000_000
    );
}

#[test]
fn sample_rate_is_seeded() {
    let a = ok(&[
        "sample-rate",
        "--mode-target",
        "0.6",
        "--n",
        "50",
        "--seed",
        "9",
    ]);
    let b = ok(&[
        "sample-rate",
        "--mode-target",
        "0.6",
        "--n",
        "50",
        "--seed",
        "9",
    ]);
    let c = ok(&[
        "sample-rate",
        "--mode-target",
        "0.6",
        "--n",
        "50",
        "--seed",
        "10",
    ]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.lines().count(), 5 + 50);
    assert!(!evs(&[
        "sample-rate",
        "--mode-target",
        "0.6",
        "--concentration",
        "2"
    ])
    .status
    .success());
}

#[test]
fn viz_with_all_kept_mask_is_identity() {
    let dir = TempDir::new().unwrap();
    let frames_dir = dir.path().join("frames");
    std::fs::create_dir(&frames_dir).unwrap();
    let (h, w) = (6, 10);
    for t in 0..3 {
        let planes: Vec<u8> = (0..3 * h * w)
            .map(|i| ((i * 7 + t * 50) % 256) as u8)
            .collect();
        std::fs::write(
            frames_dir.join(format!("{t:03}.ppm")),
            netpbm::encode_ppm(w, h, &planes),
        )
        .unwrap();
    }
    let mask = RetentionMask::all_kept(GridShape::new(3, 2, 4), SelectorTag::Rgb);
    let mask_path = dir.path().join("m.evsm");
    evs_io::write_mask(&mask, &mask_path).unwrap();
    let out_dir = dir.path().join("viz");
    ok(&[
        "viz",
        p(&frames_dir),
        "--mask",
        p(&mask_path),
        "--patch-size",
        "3",
        "--downsample",
        "1",
        "--out-dir",
        p(&out_dir),
    ]);
    for t in 0..3 {
        let input = std::fs::read(frames_dir.join(format!("{t:03}.ppm"))).unwrap();
        let output = std::fs::read(out_dir.join(format!("frame_{t:04}.ppm"))).unwrap();
        assert_eq!(input, output);
    }
}

#[test]
fn viz_darkens_pruned_patches() {
    let dir = TempDir::new().unwrap();
    let clip = write_clip(&dir, "c.tbin", &clip_with(2, 4, 4, |_, _, _, _| 200));
    let out = dir.path().join("m.evsm");
    ok(&[
        "mask",
        p(&clip),
        "--selector",
        "rgb",
        "--q",
        "0.75",
        "--patch-size",
        "2",
        "--downsample",
        "1",
        "--out",
        p(&out),
    ]);
    let out_dir = dir.path().join("viz");
    ok(&[
        "viz",
        p(&clip),
        "--mask",
        p(&out),
        "--patch-size",
        "2",
        "--downsample",
        "1",
        "--out-dir",
        p(&out_dir),
    ]);
    let frame =
        netpbm::decode_pnm(&std::fs::read(out_dir.join("frame_0001.ppm")).unwrap()).unwrap();
    // one of four frame-1 patches survives; the rest are scaled by 0.25
    let dark = frame.planes.iter().filter(|&&v| v == 50).count();
    assert_eq!(dark, 3 * 3 * 4);
}

#[test]
fn stats_reads_masks_and_tokens() {
    let dir = TempDir::new().unwrap();
    let grid = embeddings(GridShape::new(2, 2, 2), 3, 4);
    let emb = write_emb(&dir, "e.tbin", &grid);
    let mask = dir.path().join("m.evsm");
    ok(&[
        "mask",
        p(&emb),
        "--selector",
        "embedding",
        "--q",
        "0.5",
        "--out",
        p(&mask),
    ]);
    let text = ok(&["stats", p(&mask)]);
    assert_eq!(field(&text, "per_frame"), "4,2");
    let tokens = dir.path().join("t.evst");
    ok(&[
        "prune",
        "--embeddings",
        p(&emb),
        "--mask",
        p(&mask),
        "--positions",
        "preserve",
        "--out",
        p(&tokens),
    ]);
    let text = ok(&["stats", p(&tokens)]);
    assert_eq!(field(&text, "tokens"), "6");
    assert_eq!(field(&text, "per_frame"), "4,2");
    assert_eq!(field(&text, "positions"), "preserving");
    assert_eq!(evs(&["stats", p(&emb)]).status.code(), Some(2));
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let clip = write_clip(
        &dir,
        "c.tbin",
        &clip_with(8, 12, 12, |t, c, y, x| {
            ((t * t * 7 + c + y * 3 + x * x) % 256) as u8
        }),
    );
    let mut masks = Vec::new();
    for threads in ["1", "0", "3"] {
        let out = dir.path().join(format!("m{threads}.evsm"));
        let o = Command::new(env!("CARGO_BIN_EXE_evs"))
            .env("EVS_THREADS", threads)
            .args([
                "mask",
                p(&clip),
                "--selector",
                "rgb",
                "--q",
                "0.7",
                "--patch-size",
                "3",
                "--downsample",
                "1",
                "--out",
                p(&out),
            ])
            .output()
            .unwrap();
        assert!(o.status.success());
        masks.push(std::fs::read(&out).unwrap());
    }
    assert!(masks.windows(2).all(|w| w[0] == w[1]));
    let o = Command::new(env!("CARGO_BIN_EXE_evs"))
        .env("EVS_THREADS", "many")
        .args(["stats", "x"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
