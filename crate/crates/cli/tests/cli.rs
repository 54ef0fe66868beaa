use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SQUARE: &str = "M 0 0 L 1 0 L 1 1 L 0 1 Z";
const ELL: &str = "M 0 0 L 2 0 L 2 1 L 1 1 L 1 2 L 0 2 Z";

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Glyph files are `(family, label, path text)`; `train` is merged into
    /// the config's train section.
    fn new(glyphs: &[(&str, &str, &str)], train: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = Vec::new();
        for (k, (family, label, text)) in glyphs.iter().enumerate() {
            let file = format!("g{k}.txt");
            fs::write(dir.path().join(&file), text).unwrap();
            manifest.push(format!(r#"{{"family":"{family}","label":"{label}","file":"{file}"}}"#));
        }
        fs::write(dir.path().join("manifest.json"), format!("[{}]", manifest.join(","))).unwrap();
        let config = format!(
            r#"{{
  "dataset": {{"manifest": "manifest.json", "alphabet": "AB"}},
  "network": {{"hidden_layers": 2, "hidden_width": 16, "latent_dim": 4, "skip_after": null}},
  "train": {{"epochs": 6, "threads": 1{train}}},
  "eval": {{"resolutions": [32, 64]}},
  "paths": {{"output_dir": "out"}}
}}"#
        );
        fs::write(dir.path().join("config.json"), config).unwrap();
        Workspace { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_glyphfield"))
            .current_dir(self.dir.path())
            .env("GLYPHFIELD_CONFIG", "config.json")
            .env("RUST_LOG", "warn")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        fs::read(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn prepare_square_then_skip_unchanged() {
    let ws = Workspace::new(&[("f", "A", SQUARE)], "");
    let first = ws.ok(&["prepare"]);
    assert!(first.contains("1 rebuilt"), "{first}");
    let dir = ws.path("out/prepared/f/00-A");
    assert!(dir.join("raster.pgm").is_file());
    let templates: serde_json::Value = serde_json::from_slice(&ws.read("out/prepared/f/00-A/templates.json")).unwrap();
    assert_eq!(templates.as_array().unwrap().len(), 4);

    let again = ws.ok(&["prepare"]);
    assert!(again.contains("0 rebuilt"), "{again}");

    // A change in the glyph file invalidates only that glyph.
    fs::write(ws.path("g0.txt"), "M 0 0 L 2 0 L 2 1 L 0 1 Z").unwrap();
    assert!(ws.ok(&["prepare"]).contains("1 rebuilt"));
}

#[test]
fn prepare_names_corrupted_file() {
    let ws = Workspace::new(&[("f", "A", SQUARE), ("f", "B", "M 0 0 L 1 Q Z")], "");
    let out = ws.run(&["prepare"]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("g1.txt"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_one() {
    let ws = Workspace::new(&[("f", "A", SQUARE)], r#", "epochz": 3"#);
    let out = ws.run(&["train"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("epochz"));

    let ws = Workspace::new(&[("f", "A", SQUARE)], "");
    assert_eq!(code(&ws.run(&["no-such-command"])), 1);
    assert_eq!(code(&ws.run(&["render", "--family", "f"])), 1);
}

#[test]
fn missing_checkpoint_is_io_error() {
    let ws = Workspace::new(&[("f", "A", SQUARE)], "");
    let out = ws.run(&["render", "--checkpoint", "absent.gfck", "--family", "f", "--label", "A"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("absent.gfck"));
}

#[test]
fn train_writes_checkpoint_log_and_config() {
    let ws = Workspace::new(&[("f", "A", SQUARE)], "");
    ws.ok(&["train", "--seed", "11"]);
    let log = String::from_utf8(ws.read("out/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 7);
    assert!(log.starts_with("epoch,gamma,"));
    let cfg: serde_json::Value = serde_json::from_slice(&ws.read("out/effective_config.json")).unwrap();
    // The flag wins over the config file.
    assert_eq!(cfg["train"]["seed"], 11);
    assert!(ws.path("out/checkpoint.gfck").is_file());
}

#[test]
fn single_threaded_training_is_byte_identical() {
    let ws = Workspace::new(&[("f", "A", SQUARE), ("g", "B", ELL)], "");
    ws.ok(&["train"]);
    let (ck, log) = (ws.read("out/checkpoint.gfck"), ws.read("out/train_log.csv"));
    fs::remove_dir_all(ws.path("out")).unwrap();
    ws.ok(&["train"]);
    assert!(ck == ws.read("out/checkpoint.gfck"), "checkpoints differ");
    assert!(log == ws.read("out/train_log.csv"), "logs differ");
}

#[test]
fn resume_continues_bit_exactly() {
    let ws = Workspace::new(&[("f", "A", SQUARE), ("g", "B", ELL)], "");
    ws.ok(&["train", "--epochs", "6"]);
    let (ck, log) = (ws.read("out/checkpoint.gfck"), ws.read("out/train_log.csv"));

    fs::remove_dir_all(ws.path("out")).unwrap();
    ws.ok(&["train", "--epochs", "6", "--stop-at", "3"]);
    fs::rename(ws.path("out/checkpoint.gfck"), ws.path("half.gfck")).unwrap();
    ws.ok(&["train", "--epochs", "6", "--resume", "half.gfck"]);
    assert!(ck == ws.read("out/checkpoint.gfck"), "resumed checkpoint differs");
    assert!(log == ws.read("out/train_log.csv"), "resumed log differs");
}

#[test]
fn divergence_exits_two_and_keeps_last_good_state() {
    let ws = Workspace::new(&[("f", "A", SQUARE)], r#", "lr": 1e300"#);
    let out = ws.run(&["train"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("numerical"));
    assert!(ws.path("out/checkpoint.gfck").is_file());
    let render = ws.run(&[
        "render",
        "--checkpoint",
        "out/checkpoint.gfck",
        "--family",
        "f",
        "--label",
        "A",
        "--res",
        "16",
    ]);
    assert!(matches!(code(&render), 0 | 2), "{}", stderr(&render));
}

#[test]
fn render_resolutions_channels_and_contours() {
    let ws = Workspace::new(&[("f", "A", SQUARE)], "");
    ws.ok(&["train"]);
    ws.ok(&[
        "render",
        "--checkpoint",
        "out/checkpoint.gfck",
        "--family",
        "f",
        "--label",
        "A",
    ]);
    let files = files_in(&ws.path("out/render"));
    assert_eq!(files.len(), 4, "{files:?}");
    for w in [128, 256, 512, 1024] {
        let bytes = ws.read(&format!("out/render/f_00-A_implicit_{w}.pgm"));
        assert!(bytes.starts_with(format!("P5\n{w} {w}\n255\n").as_bytes()));
    }

    ws.ok(&[
        "render",
        "--checkpoint",
        "out/checkpoint.gfck",
        "--family",
        "f",
        "--label",
        "A",
        "--res",
        "32",
        "--method",
        "bilateral",
        "--channels",
        "--contours",
    ]);
    for c in 0..3 {
        assert!(ws.path(&format!("out/render/f_00-A_bilateral_32_ch{c}.pgm")).is_file());
    }
    assert!(ws.path("out/render/f_00-A_bilateral_32.grid").is_file());
    let contours: serde_json::Value =
        serde_json::from_slice(&ws.read("out/render/f_00-A_bilateral_32_contours.json")).unwrap();
    assert!(contours.is_array() || contours.is_object());

    let out = ws.run(&[
        "render",
        "--checkpoint",
        "out/checkpoint.gfck",
        "--family",
        "nobody",
        "--label",
        "A",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nobody"));
}

#[test]
fn single_channel_mode() {
    let ws = Workspace::new(&[("f", "A", SQUARE)], "");
    ws.ok(&["train", "--mode", "n1"]);
    ws.ok(&[
        "render",
        "--checkpoint",
        "out/checkpoint.gfck",
        "--family",
        "f",
        "--label",
        "A",
        "--res",
        "16",
        "--channels",
    ]);
    assert!(ws.path("out/render/f_00-A_implicit_16_ch0.pgm").is_file());
    assert!(!ws.path("out/render/f_00-A_implicit_16_ch1.pgm").exists());
}

#[test]
fn interpolation_frames() {
    let ws = Workspace::new(&[("f", "A", SQUARE), ("g", "A", ELL)], "");
    ws.ok(&["train", "--epochs", "40"]);
    let ck = "out/checkpoint.gfck";
    let out = ws.run(&[
        "interpolate",
        "--checkpoint",
        ck,
        "--family-a",
        "f",
        "--family-b",
        "g",
        "--label",
        "A",
        "--steps",
        "1",
    ]);
    assert_eq!(code(&out), 1);

    ws.ok(&[
        "interpolate",
        "--checkpoint",
        ck,
        "--family-a",
        "f",
        "--family-b",
        "g",
        "--label",
        "A",
        "--steps",
        "3",
        "--res",
        "32",
    ]);
    ws.ok(&[
        "render",
        "--checkpoint",
        ck,
        "--family",
        "f",
        "--label",
        "A",
        "--res",
        "32",
    ]);
    ws.ok(&[
        "render",
        "--checkpoint",
        ck,
        "--family",
        "g",
        "--label",
        "A",
        "--res",
        "32",
    ]);
    let frame = |k: usize| ws.read(&format!("out/interpolate/f_g_00-A_{k:03}.pgm"));
    let own_f = ws.read("out/render/f_00-A_implicit_32.pgm");
    let own_g = ws.read("out/render/g_00-A_implicit_32.pgm");
    assert!(frame(0) == own_f);
    assert!(frame(2) == own_g);
    assert!(frame(1) != own_f && frame(1) != own_g);
}

#[test]
fn fit_with_and_without_mask() {
    let ws = Workspace::new(&[("f", "A", SQUARE)], r#", "fit": {"steps": 5}"#);
    ws.ok(&["train"]);
    ws.ok(&["prepare"]);
    let target = "out/prepared/f/00-A/raster.pgm";
    ws.ok(&[
        "fit",
        "--checkpoint",
        "out/checkpoint.gfck",
        "--target",
        target,
        "--label",
        "A",
    ]);
    // Every label of the alphabet is rendered with the fitted code.
    assert!(ws.path("out/fit/00-A_64.pgm").is_file());
    assert!(ws.path("out/fit/01-B_64.pgm").is_file());
    let latent: serde_json::Value = serde_json::from_slice(&ws.read("out/fit/latent.json")).unwrap();
    assert_eq!(latent["latent"].as_array().unwrap().len(), 4);

    fs::write(ws.path("mask.pgm"), [b"P5\n4 4\n255\n".as_slice(), &[0u8; 16]].concat()).unwrap();
    let out = ws.run(&[
        "fit",
        "--checkpoint",
        "out/checkpoint.gfck",
        "--target",
        target,
        "--label",
        "A",
        "--mask",
        "mask.pgm",
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn eval_table_columns_and_self_comparison() {
    let ws = Workspace::new(&[("f", "A", SQUARE)], "");
    ws.ok(&["train"]);
    let table = ws.ok(&["eval", "--checkpoint", "out/checkpoint.gfck"]);
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "method,res,mse,siou,c_mse,c_siou,laplacian");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows
        .iter()
        .all(|r| r.len() == 7 && !r[4].is_empty() && !r[6].is_empty()));
    assert_eq!(rows[0][..2], ["implicit", "32"]);
    assert_eq!(rows[3][..2], ["bilateral", "64"]);
    assert!(ws.path("out/eval.csv").is_file());

    let mut pixels = vec![0u8; 64];
    pixels[10..30].fill(255);
    fs::write(ws.path("bin.pgm"), [b"P5\n8 8\n255\n".as_slice(), &pixels].concat()).unwrap();
    let table = ws.ok(&["eval", "--compare", "bin.pgm", "bin.pgm"]);
    assert_eq!(table.lines().nth(1).unwrap(), "image,8,0.000000,1.000000,,,");
}

#[test]
fn config_path_from_environment() {
    let ws = Workspace::new(&[("f", "A", SQUARE)], "");
    // Without the variable the default config has no manifest.
    let out = Command::new(env!("CARGO_BIN_EXE_glyphfield"))
        .current_dir(ws.path("."))
        .env_remove("GLYPHFIELD_CONFIG")
        .arg("prepare")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("manifest"));
    assert!(ws.ok(&["prepare"]).contains("1 rebuilt"));
}
