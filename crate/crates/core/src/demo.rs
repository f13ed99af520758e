//! Synthetic audio-transcription project used by the examples and tests.
//!
//! Instances are short text files standing in for audio clips. The bundled
//! mock plugin "transcribes" them with an error rate that falls with the model
//! number (`m1` is worst), rises for quiet clips and rises further under the
//! `white_noise` transform.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pipeline::PluginCommand;

/// Source of the mock plugin.
pub const MOCK_PLUGIN: &str = include_str!("../assets/mock_plugin.py");

const WORDS: &[&str] = &[
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "turn", "left", "at", "next",
    "light", "call", "mom", "play", "some", "music", "set", "timer", "for", "ten", "minutes", "what",
    "is", "weather", "today", "open", "door", "please",
];
const COUNTRIES: &[&str] = &["us", "uk", "in", "ng", "au", "ca", "ie", "za"];
const GENDERS: &[&str] = &["female", "male", "nonbinary"];

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub instances: usize,
    pub models: Vec<String>,
    pub transforms: Vec<String>,
    pub seed: u64,
    /// Extra arguments for the mock plugin (`--sleep-ms`, `--fail-model`, ...).
    pub plugin_args: Vec<String>,
    pub workers: usize,
    /// Per-model predictions written as `pred_<model>` metadata columns; the
    /// mock model echoes them instead of transcribing.
    pub preset_predictions: Vec<(String, Vec<String>)>,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            instances: 200,
            models: vec!["m1".into(), "m2".into(), "m3".into()],
            transforms: vec!["white_noise".into()],
            seed: 7,
            plugin_args: Vec::new(),
            workers: 4,
            preset_predictions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoProject {
    pub root: PathBuf,
    pub config: PathBuf,
    pub metadata: PathBuf,
    pub data_root: PathBuf,
    pub plugin: PathBuf,
}

/// Launch command for the mock plugin script.
pub fn plugin_command(script: &Path, args: &[String]) -> PluginCommand {
    let mut argv = vec!["python3".to_string(), "-S".to_string(), script.display().to_string()];
    argv.extend(args.iter().cloned());
    PluginCommand { argv, cwd: None }
}

/// Writes the mock plugin into `dir` and returns its path.
pub fn write_plugin(dir: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("mock_plugin.py");
    fs::write(&path, MOCK_PLUGIN)?;
    Ok(path)
}

/// Three to eight random words.
fn transcript(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(3..=8);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Creates a complete project under `dir`: metadata.csv, data/, plugins/ and
/// slicelens.toml.
pub fn create(dir: &Path, options: &DemoOptions) -> io::Result<DemoProject> {
    let data_root = dir.join("data");
    fs::create_dir_all(&data_root)?;
    let plugin = write_plugin(&dir.join("plugins"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);

    let mut csv = String::from("id,file,transcript,speaker_age,gender,country,recorded_at,noisy_env");
    for (model, _) in &options.preset_predictions {
        write!(csv, ",pred_{model}").unwrap();
    }
    csv.push('\n');
    for i in 0..options.instances {
        let id = format!("clip{i:05}");
        let file = format!("{id}.txt");
        let text = transcript(&mut rng);
        let amplitude: f64 = rng.gen_range(0.005..0.2);
        let noisy = rng.gen_bool(0.2);
        fs::write(
            data_root.join(&file),
            format!("amplitude {amplitude:.6}\nnoise {}\ntranscript {text}\n", if noisy { "0.1" } else { "0" }),
        )?;
        let age = rng.gen_range(18..80);
        let gender = GENDERS[rng.gen_range(0..GENDERS.len())];
        let country = COUNTRIES[rng.gen_range(0..COUNTRIES.len())];
        let day = rng.gen_range(0..365);
        let recorded = chrono::NaiveDate::from_ymd_opt(2023, 1, 1).unwrap() + chrono::Days::new(day);
        write!(csv, "{id},{file},{text},{age},{gender},{country},{recorded},{noisy}").unwrap();
        for (_, preds) in &options.preset_predictions {
            write!(csv, ",{}", preds.get(i).map_or("", String::as_str)).unwrap();
        }
        csv.push('\n');
    }
    let metadata = dir.join("metadata.csv");
    fs::write(&metadata, csv)?;

    let config = dir.join("slicelens.toml");
    fs::write(&config, config_toml(options))?;
    Ok(DemoProject { root: dir.to_path_buf(), config, metadata, data_root, plugin })
}

fn toml_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("{s:?}")).collect();
    format!("[{}]", quoted.join(", "))
}

fn config_toml(options: &DemoOptions) -> String {
    let mut argv = vec!["python3".to_string(), "-S".to_string(), "plugins/mock_plugin.py".to_string()];
    argv.extend(options.plugin_args.iter().cloned());
    let mut s = String::new();
    writeln!(s, "metadata = \"metadata.csv\"").unwrap();
    writeln!(s, "data_root = \"data\"").unwrap();
    writeln!(s, "id_column = \"id\"").unwrap();
    writeln!(s, "label_column = \"transcript\"").unwrap();
    writeln!(s, "data_file_column = \"file\"").unwrap();
    writeln!(s, "view = \"audio-transcription\"").unwrap();
    writeln!(s, "cache_dir = \".cache\"").unwrap();
    writeln!(s, "workers = {}", options.workers).unwrap();
    writeln!(s, "transforms = {}", toml_list(&options.transforms)).unwrap();
    writeln!(s, "\n[[plugins]]\ncommand = {}", toml_list(&argv)).unwrap();
    for m in &options.models {
        writeln!(s, "\n[[models]]\nid = \"{m}\"\nplugin = \"transcriber\"").unwrap();
    }
    writeln!(s, "\n[[metrics]]\nid = \"accuracy\"\nbuiltin = \"accuracy\"").unwrap();
    writeln!(s, "\n[[metrics]]\nid = \"exact_match\"\nplugin = \"exact_match\"").unwrap();
    s
}
