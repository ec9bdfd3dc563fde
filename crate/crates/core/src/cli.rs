//! `hofmtl` command line: preprocess → build-vocab → ingest → train →
//! eval / predict / experiment.
//!
//! Exit status is 0 on success, 2 on usage errors and 1 on any other
//! failure, which prints a single `error[<category>]: <message>` line.
//! Artifact-producing commands write a [`RunManifest`] next to their output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, sha256_hex};
use crate::corpus::{load_corpus, load_data_dir, load_unified, write_jsonl, CorpusSchema};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::grid::{run_grid, GridConfig, GridData, DEFAULT_VOCAB_SIZE};
use crate::model::{MtlModel, TaskSpec};
use crate::normalize::{Normalizer, NormalizerConfig};
use crate::tokenizer::{build_vocab, Vocab};
use crate::trainer::{evaluate, train, TrainConfig};

pub const DATA_ENV: &str = "HOFMTL_DATA";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "hofmtl", version = VERSION, arg_required_else_help = true,
    about = "Multi-task hate and offensive language classification")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct NormArgs {
    /// Emoji alias table (emoji<TAB>alias per line).
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// Word list for splitting lowercase hashtags.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

impl NormArgs {
    fn normalizer(&self) -> Result<Normalizer> {
        let mut c = NormalizerConfig::default();
        if let Some(p) = &self.aliases {
            c = c.with_alias_file(p)?;
        }
        if let Some(p) = &self.lexicon {
            c = c.with_lexicon_file(p)?;
        }
        Normalizer::new(c)
    }

    fn files(&self) -> Vec<&Path> {
        self.aliases.iter().chain(&self.lexicon).map(PathBuf::as_path).collect()
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize one text per line.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        norm: NormArgs,
    },
    /// Learn a WordPiece vocabulary from one text per line.
    BuildVocab {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        norm: NormArgs,
    },
    /// Convert a raw corpus to jsonl-unified under a schema file.
    Ingest {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a data directory.
    Train {
        /// TOML training config; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Data directory (defaults to $HOFMTL_DATA).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path, or a directory (trailing `/` or existing) to hold `model.mtl1`.
        #[arg(long)]
        out: PathBuf,
        /// baseline, sentiment, emotion, target, all (or the HASOC_* names).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Vocabulary file; built from the training texts when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
        vocab_size: usize,
        #[command(flatten)]
        norm: NormArgs,
    },
    /// Score one task of a checkpoint on a jsonl-unified file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "hof")]
        task: String,
        #[command(flatten)]
        norm: NormArgs,
    },
    /// Predict every task for one text.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text: String,
        #[command(flatten)]
        norm: NormArgs,
    },
    /// Run a preset × seed grid.
    Experiment {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Reproducibility record written next to every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Directory relative paths in `argv` resolve against.
    pub working_dir: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path → sha256.
    pub artifacts: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn digest_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn digests<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<BTreeMap<String, String>> {
    paths
        .into_iter()
        .map(|p| Ok((p.display().to_string(), digest_file(p)?)))
        .collect()
}

struct Run {
    command: &'static str,
    argv: Vec<String>,
    seed: Option<u64>,
    started: Instant,
}

impl Run {
    fn finish(
        &self,
        manifest_path: &Path,
        config: serde_json::Value,
        inputs: &[&Path],
        artifacts: &[&Path],
    ) -> Result<()> {
        let m = RunManifest {
            command: self.command.to_string(),
            argv: self.argv.clone(),
            working_dir: std::env::current_dir()
                .map(|d| d.display().to_string())
                .unwrap_or_default(),
            config,
            seed: self.seed,
            inputs: digests(inputs.iter().copied())?,
            artifacts: digests(artifacts.iter().copied())?,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            version: VERSION.to_string(),
        };
        write_file(manifest_path, &serde_json::to_vec_pretty(&m)?)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `<path>.manifest.json`
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value)?;
    writeln!(out, "{line}").map_err(|e| Error::io(Path::new("<stdout>"), e))
}

/// Where `train --out` puts the checkpoint.
fn checkpoint_target(out: &Path) -> PathBuf {
    let as_dir = out.is_dir() || out.as_os_str().to_string_lossy().ends_with('/');
    if as_dir {
        out.join("model.mtl1")
    } else {
        out.to_path_buf()
    }
}

fn resolve_train_config(
    config: Option<&Path>,
    preset: Option<&str>,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut c = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::preset(preset.unwrap_or("baseline"))?,
    };
    if let (Some(_), Some(name)) = (config, preset) {
        let p = TrainConfig::preset(name)?;
        c.preset_name = p.preset_name;
        c.epochs = p.epochs;
        c.learning_rate = p.learning_rate;
        c.batch_size = p.batch_size;
        c.tasks_enabled = p.tasks_enabled;
    }
    if let Some(e) = epochs {
        c.epochs = e;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli, argv: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let started = Instant::now();
    let seed = cli.seed;
    let run = |command| Run {
        command,
        argv: argv.clone(),
        seed,
        started,
    };
    match cli.command {
        Command::Preprocess { input, out: dest, norm } => {
            let normalizer = norm.normalizer()?;
            let mut body = String::new();
            for line in read_lines(&input)? {
                body.push_str(&normalizer.normalize(&line));
                body.push('\n');
            }
            write_file(&dest, body.as_bytes())?;
            let mut inputs = vec![input.as_path()];
            inputs.extend(norm.files());
            run("preprocess").finish(&manifest_path(&dest), serde_json::json!({}), &inputs, &[&dest])
        }
        Command::BuildVocab {
            input,
            size,
            out: dest,
            norm,
        } => {
            let normalizer = norm.normalizer()?;
            let texts: Vec<String> = read_lines(&input)?
                .iter()
                .map(|l| normalizer.normalize(l))
                .filter(|l| !l.is_empty())
                .collect();
            let vocab = build_vocab(&texts, size, &normalizer.config().atomic_tokens())?;
            vocab.save(&dest)?;
            let mut inputs = vec![input.as_path()];
            inputs.extend(norm.files());
            run("build-vocab").finish(
                &manifest_path(&dest),
                serde_json::json!({ "size": size, "built": vocab.len() }),
                &inputs,
                &[&dest],
            )
        }
        Command::Ingest {
            schema,
            input,
            out: dest,
        } => {
            let s = CorpusSchema::load(&schema)?;
            let ds = load_corpus(&input, &s)?;
            write_jsonl(&ds, &dest)?;
            emit(
                out,
                &serde_json::json!({
                    "task": ds.task,
                    "examples": ds.len(),
                    "class_counts": ds.labels.iter().zip(ds.class_counts()).collect::<BTreeMap<_, _>>(),
                    "provenance": ds.provenance,
                }),
            )?;
            run("ingest").finish(
                &manifest_path(&dest),
                serde_json::to_value(&s)?,
                &[&schema, &input],
                &[&dest],
            )
        }
        Command::Train {
            config,
            data,
            out: dest,
            preset,
            epochs,
            vocab,
            vocab_size,
            norm,
        } => {
            let data = data
                .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
                .ok_or_else(|| Error::Config(format!("no --data given and ${DATA_ENV} is unset")))?;
            let tc = resolve_train_config(config.as_deref(), preset.as_deref(), epochs, seed)?;
            let normalizer = norm.normalizer()?;
            let dir = load_data_dir(&data, tc.seed)?;
            let vocab_file = vocab;
            let vocab = match &vocab_file {
                Some(p) => Vocab::load(p)?,
                None => {
                    let texts: Vec<String> = dir
                        .train
                        .values()
                        .flat_map(|d| d.texts())
                        .map(|t| normalizer.normalize(t))
                        .collect();
                    build_vocab(&texts, vocab_size, &normalizer.config().atomic_tokens())?
                }
            };
            let mut ec = EncoderConfig::desk(vocab.len());
            ec.seed = tc.seed;
            let mut model = MtlModel::new(ec, vocab, TaskSpec::defaults())?;
            let history = train(&mut model, &dir.train, &tc, &dir.validation, &normalizer)?;
            let ckpt = checkpoint_target(&dest);
            save_checkpoint(&model, &ckpt)?;
            let mut log = String::new();
            for h in &history {
                emit(out, h)?;
                log.push_str(&serde_json::to_string(h)?);
                log.push('\n');
            }
            let mut hist_path = ckpt.clone().into_os_string();
            hist_path.push(".history.jsonl");
            let hist_path = PathBuf::from(hist_path);
            write_file(&hist_path, log.as_bytes())?;
            let mut inputs: Vec<&Path> = dir.files.iter().map(PathBuf::as_path).collect();
            inputs.extend(config.as_deref());
            inputs.extend(vocab_file.as_deref());
            inputs.extend(norm.files());
            run("train").finish(
                &manifest_path(&ckpt),
                serde_json::json!({ "train": tc, "encoder": model.config }),
                &inputs,
                &[&ckpt, &hist_path],
            )
        }
        Command::Eval {
            ckpt,
            data,
            task,
            norm,
        } => {
            let model = load_checkpoint(&ckpt)?;
            let spec = model.task(&task)?.spec.clone();
            let ds = load_unified(&data, &spec)?;
            let report = evaluate(&model, &ds, &task, &norm.normalizer()?)?;
            emit(out, &report)
        }
        Command::Predict { ckpt, text, norm } => {
            let model = load_checkpoint(&ckpt)?;
            let predictions = model.predict_all(&text, &norm.normalizer()?)?;
            emit(out, &serde_json::json!({ "text": text, "predictions": predictions }))
        }
        Command::Experiment { grid, out: dest } => {
            let config = GridConfig::load(&grid)?;
            let data = GridData::from_config(&config)?;
            let normalizer = Normalizer::new(NormalizerConfig::default())?;
            let outcome = run_grid(&config, &data, &normalizer, &dest)?;
            write!(out, "{}", outcome.table).map_err(|e| Error::io(Path::new("<stdout>"), e))?;
            let mut inputs = vec![grid.as_path()];
            let files = match &config.data {
                Some(d) => load_data_dir(d, config.split_seed)?.files,
                None => Vec::new(),
            };
            inputs.extend(files.iter().map(PathBuf::as_path));
            let mut artifacts: Vec<PathBuf> = ["results.jsonl", "summary.json", "table.txt"]
                .iter()
                .map(|n| dest.join(n))
                .collect();
            artifacts.extend(
                outcome
                    .cells
                    .iter()
                    .filter_map(|c| c.checkpoint.as_ref())
                    .map(|c| dest.join(c)),
            );
            let refs: Vec<&Path> = artifacts.iter().map(PathBuf::as_path).collect();
            run("experiment").finish(&dest.join("manifest.json"), serde_json::to_value(&config)?, &inputs, &refs)
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, argv, out) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "error[{}]: {msg}", e.category());
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("hofmtl").chain(args.iter().copied());
        let code = dispatch(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn no_arguments_is_usage_error() {
        let (code, _, err) = call(&[]);
        assert_eq!(code, 2);
        assert!(err.contains("Usage"));
    }

    #[test]
    fn unknown_command_is_usage_error() {
        assert_eq!(call(&["frobnicate"]).0, 2);
    }

    #[test]
    fn module_error_has_category() {
        let (code, _, err) = call(&["predict", "--ckpt", "/nonexistent/m.mtl1", "--text", "hi"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error[io]: "), "{err}");
        assert_eq!(err.lines().count(), 1);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "preset_name = \"mine\"\nepochs = 9\nlearning_rate = 1e-3\nbatch_size = 8\nseed = 5\ntasks_enabled = [\"hof\"]\n",
        )
        .unwrap();
        let c = resolve_train_config(Some(&p), None, None, None).unwrap();
        assert_eq!((c.epochs, c.seed), (9, 5));
        let c = resolve_train_config(Some(&p), Some("all"), Some(1), Some(7)).unwrap();
        assert_eq!((c.preset_name.as_str(), c.epochs, c.seed, c.tasks_enabled.len()), ("HASOC_all", 1, 7, 4));
    }

    #[test]
    fn checkpoint_target_for_directories() {
        assert_eq!(checkpoint_target(Path::new("run1/")), PathBuf::from("run1/model.mtl1"));
        assert_eq!(checkpoint_target(Path::new("m.mtl1")), PathBuf::from("m.mtl1"));
    }
}
