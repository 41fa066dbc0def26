//! Tiny IDX dataset and helpers for driving the `resp` binary.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use responsibility::dataset::{write_idx_images, write_idx_labels};
use responsibility::experiments::{OutputManifest, MANIFEST_FILE};

pub const SIDE: usize = 8;

/// Ten noisy 8x8 class templates: a bright block whose position encodes the class.
fn images(n: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 10) as u8;
        let (by, bx) = ((label as usize / 5) * 4, (label as usize % 5) + 1);
        let mut img = vec![0u8; SIDE * SIDE];
        for (p, px) in img.iter_mut().enumerate() {
            let (y, x) = (p / SIDE, p % SIDE);
            let on = y >= by && y < by + 4 && x >= bx && x < bx + 3;
            let base: f32 = if on { 0.7 } else { 0.1 };
            let v = base + rng.gen_range(-0.45f32..0.45);
            *px = (v.clamp(0.0, 1.0) * 255.0) as u8;
        }
        images.push(img);
        labels.push(label);
    }
    (images, labels)
}

/// Writes the fixture under `dir` and returns the manifest path.
pub fn fixture(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    for (name, n, seed) in [("train", 400, 1), ("test", 200, 2)] {
        let (imgs, labels) = images(n, seed);
        write_idx_images(&data.join(format!("{name}-images")), SIDE, SIDE, &imgs).unwrap();
        write_idx_labels(&data.join(format!("{name}-labels")), &labels).unwrap();
    }
    let manifest = dir.join("tiny.toml");
    fs::write(
        &manifest,
        r#"schema_version = 1
name = "tiny"
class_names = ["c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9"]

[train]
images = "data/train-images"
labels = "data/train-labels"

[test]
images = "data/test-images"
labels = "data/test-labels"
"#,
    )
    .unwrap();
    manifest
}

pub fn resp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resp"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RESP_OUTPUT_DIR")
        .output()
        .expect("resp runs")
}

pub fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("schema_version = 1\ndataset = \"tiny.toml\"\n{body}")).unwrap();
    path
}

/// File name -> sha256 of every file in an output directory, manifest included.
pub fn checksums(dir: &Path) -> BTreeMap<String, String> {
    let manifest: OutputManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    let mut out: BTreeMap<String, String> =
        manifest.files.into_iter().map(|f| (f.path, f.sha256)).collect();
    let raw = fs::read(dir.join(MANIFEST_FILE)).unwrap();
    out.insert(MANIFEST_FILE.to_string(), sha256_hex(&raw));
    for (path, sum) in &out {
        if path != MANIFEST_FILE {
            assert_eq!(&sha256_hex(&fs::read(dir.join(path)).unwrap()), sum, "{path}");
        }
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Small-data settings for each subcommand.
pub fn small_config(cmd: &str) -> &'static str {
    match cmd {
        "train" | "interclass" | "stats" => "architecture = \"mlp:16\"\nepochs = 2\ntrain_subset = 0\n",
        "eval" => "architecture = \"mlp:16\"\nlearning_rate = 0.02\nepochs = 2\neval_pool = 0\nseeds = [0, 1]\nevaluator_epochs = 2\n",
        "misclass" => "architecture = \"mlp:16\"\nlearning_rate = 0.005\neval_pool = 0\nmisclass_per_class = 8\n",
        "debug-data" => "architecture = \"mlp:8\"\nepochs = 2\ndebug_examples = 60\ncheckpoint_step = 0.25\nseeds = [0, 1]\n",
        "seeds" => "architecture = \"mlp:16\"\ntrain_subset = 0\nseeds = [1, 2]\nlist_len = 4\n",
        _ => panic!("no small config for {cmd}"),
    }
}
