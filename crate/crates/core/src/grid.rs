//! Preset × seed experiment grid: train, score hof on a held-out test set,
//! aggregate over seeds.
//!
//! Outputs in the grid directory:
//!
//! * `checkpoints/<preset>-seed<seed>.mtl1`, one per successful cell
//! * `results.jsonl`, one [`CellResult`] per cell in grid order
//! * `summary.json`, one [`PresetSummary`] per preset
//! * `table.txt`, the summary rendered as Macro P/R/F1 and HOF P/R/F1 columns
//!
//! None of these contain timings, so reruns with the same seeds are
//! byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, sha256_hex, to_bytes};
use crate::corpus::{load_data_dir, synth_fixture, Dataset, SynthSpec};
use crate::encoder::{splitmix64, EncoderConfig};
use crate::error::{Error, Result};
use crate::metrics::Scores;
use crate::model::{MtlModel, TaskSpec, HOF, HOF_LABELS};
use crate::normalize::Normalizer;
use crate::tokenizer::{build_vocab, Vocab};
use crate::trainer::{evaluate, train, EpochRecord, TrainConfig};

pub const DEFAULT_VOCAB_SIZE: usize = 600;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub presets: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default = "vocab_size")]
    pub vocab_size: usize,
    /// Replaces every preset's epoch count when set.
    #[serde(default)]
    pub epochs: Option<usize>,
    /// Data directory (relative paths resolve against the grid file).
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub synthetic: Option<SyntheticSource>,
}

fn vocab_size() -> usize {
    DEFAULT_VOCAB_SIZE
}

/// Generated corpora: training sets from `spec`, hof validation and test
/// sets from an independent stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub seed: u64,
    pub validation: usize,
    pub test: usize,
    pub spec: SynthSpec,
}

impl GridConfig {
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut c: GridConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("grid config: {e}")))?;
        if let (Some(base), Some(d)) = (base_dir, c.data.as_mut()) {
            if d.is_relative() {
                *d = base.join(&*d);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        if self.presets.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one preset and one seed".into()));
        }
        for p in &self.presets {
            TrainConfig::preset(p)?;
        }
        match (&self.data, &self.synthetic) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(Error::Config(
                "grid needs exactly one of `data` or `[synthetic]`".into(),
            )),
        }
    }

    /// Train config for one cell.
    pub fn cell_config(&self, preset: &str, seed: u64) -> Result<TrainConfig> {
        let mut c = TrainConfig::preset(preset)?;
        c.seed = seed;
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridData {
    pub train: BTreeMap<String, Dataset>,
    pub validation: Dataset,
    pub test: Dataset,
}

impl GridData {
    pub fn from_config(config: &GridConfig) -> Result<Self> {
        if let Some(dir) = &config.data {
            let d = load_data_dir(dir, config.split_seed)?;
            let test = d.test.ok_or_else(|| {
                Error::ingestion(&dir.join(crate::corpus::TEST_FILE), "grid needs a hof test set")
            })?;
            return Ok(GridData {
                train: d.train,
                validation: d.validation,
                test,
            });
        }
        let s = config.synthetic.as_ref().expect("validated");
        let train = synth_fixture(&s.spec, s.seed)?;
        if !train.contains_key(HOF) {
            return Err(Error::Config("synthetic spec must include hof".into()));
        }
        let mut held_spec = s.spec.clone();
        held_spec.sizes = BTreeMap::from([(HOF.to_string(), s.validation + s.test)]);
        let held = synth_fixture(&held_spec, splitmix64(s.seed ^ 0x7e57))?
            .remove(HOF)
            .expect("requested");
        let spec = TaskSpec::default_for(HOF).expect("built-in");
        let mut examples = held.examples;
        let test_examples = examples.split_off(s.validation.min(examples.len()));
        let relabel = |xs: Vec<crate::corpus::Example>, part: &str| {
            xs.into_iter()
                .enumerate()
                .map(|(i, mut e)| {
                    e.id = format!("hof-{part}-{i:05}");
                    e
                })
                .collect()
        };
        let mut prov = held.provenance;
        prov.source = format!("{} held-out", prov.source);
        Ok(GridData {
            train,
            validation: Dataset::new(&spec, relabel(examples, "val"), prov.clone())?,
            test: Dataset::new(&spec, relabel(test_examples, "test"), prov)?,
        })
    }

    /// Vocabulary over every normalized training text.
    pub fn vocab(&self, normalizer: &Normalizer, size: usize) -> Result<Vocab> {
        let texts: Vec<String> = self
            .train
            .values()
            .flat_map(|d| d.texts())
            .map(|t| normalizer.normalize(t))
            .collect();
        build_vocab(&texts, size, &normalizer.config().atomic_tokens())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub preset: String,
    pub seed: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(rename = "macro")]
    pub macro_avg: Option<Scores>,
    pub hof: Option<Scores>,
    pub checkpoint: Option<String>,
    pub checkpoint_sha256: Option<String>,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stdev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetSummary {
    pub preset: String,
    pub cells: usize,
    pub failed: usize,
    pub macro_precision: Stat,
    pub macro_recall: Stat,
    pub macro_f1: Stat,
    pub hof_precision: Stat,
    pub hof_recall: Stat,
    pub hof_f1: Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    pub cells: Vec<CellResult>,
    pub summary: Vec<PresetSummary>,
    pub table: String,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_stdev(xs: &[f64]) -> Stat {
    if xs.is_empty() {
        return Stat {
            mean: f64::NAN,
            stdev: f64::NAN,
        };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let stdev = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Stat { mean, stdev }
}

fn run_cell(
    config: &GridConfig,
    data: &GridData,
    vocab: &Vocab,
    normalizer: &Normalizer,
    preset: &str,
    seed: u64,
    out: &Path,
) -> CellResult {
    let mut history = Vec::new();
    let mut attempt = || -> Result<(Scores, Scores, String, String)> {
        let tc = config.cell_config(preset, seed)?;
        let mut ec = EncoderConfig::desk(vocab.len());
        ec.seed = seed;
        let mut model = MtlModel::new(ec, vocab.clone(), TaskSpec::defaults())?;
        history = train(&mut model, &data.train, &tc, &data.validation, normalizer)?;
        let r = evaluate(&model, &data.test, HOF, normalizer)?;
        let hof = *r
            .class(HOF_LABELS[1])
            .ok_or_else(|| Error::Config("hof test set lacks the HOF class".into()))?;
        let rel = format!("checkpoints/{}-seed{seed}.mtl1", tc.preset_name);
        save_checkpoint(&model, &out.join(&rel))?;
        Ok((r.macro_avg, hof, rel, sha256_hex(&to_bytes(&model)?)))
    };
    let result = attempt();
    let base = CellResult {
        preset: preset.to_string(),
        seed,
        ok: result.is_ok(),
        error: None,
        macro_avg: None,
        hof: None,
        checkpoint: None,
        checkpoint_sha256: None,
        history,
    };
    match result {
        Ok((m, h, rel, digest)) => CellResult {
            macro_avg: Some(m),
            hof: Some(h),
            checkpoint: Some(rel),
            checkpoint_sha256: Some(digest),
            ..base
        },
        Err(e) => CellResult {
            error: Some(format!("{}: {e}", e.category())),
            ..base
        },
    }
}

fn summarize(presets: &[String], cells: &[CellResult]) -> Vec<PresetSummary> {
    presets
        .iter()
        .map(|p| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| &c.preset == p).collect();
            let ok: Vec<(Scores, Scores)> = mine
                .iter()
                .filter_map(|c| Some((c.macro_avg?, c.hof?)))
                .collect();
            let col = |f: &dyn Fn(&(Scores, Scores)) -> f64| mean_stdev(&ok.iter().map(f).collect::<Vec<_>>());
            PresetSummary {
                preset: p.clone(),
                cells: mine.len(),
                failed: mine.len() - ok.len(),
                macro_precision: col(&|s| s.0.precision),
                macro_recall: col(&|s| s.0.recall),
                macro_f1: col(&|s| s.0.f1),
                hof_precision: col(&|s| s.1.precision),
                hof_recall: col(&|s| s.1.recall),
                hof_f1: col(&|s| s.1.f1),
            }
        })
        .collect()
}

/// Plain-text table: one row per preset, six mean ± stdev columns.
pub fn render_table(summary: &[PresetSummary]) -> String {
    let headers = ["Model", "Macro P", "Macro R", "Macro F1", "HOF P", "HOF R", "HOF F1"];
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            let mut r = vec![s.preset.clone()];
            for st in [
                &s.macro_precision,
                &s.macro_recall,
                &s.macro_f1,
                &s.hof_precision,
                &s.hof_recall,
                &s.hof_f1,
            ] {
                r.push(if st.mean.is_nan() {
                    "n/a".to_string()
                } else {
                    format!("{:.3} ± {:.3}", st.mean, st.stdev)
                });
            }
            r
        })
        .collect();
    let widths: Vec<usize> = (0..headers.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].chars().count())
                .chain([headers[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join(" | ").trim_end().to_string()
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", line(headers.to_vec()));
    let _ = writeln!(
        out,
        "{}",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
    );
    for r in &rows {
        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
    }
    out
}

/// Runs every preset × seed cell (concurrently, results kept in grid
/// order) and writes the artifacts under `out`.
pub fn run_grid(config: &GridConfig, data: &GridData, normalizer: &Normalizer, out: &Path) -> Result<GridOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out.join("checkpoints")).map_err(|e| Error::io(out, e))?;
    let vocab = data.vocab(normalizer, config.vocab_size)?;
    let keys: Vec<(String, u64)> = config
        .presets
        .iter()
        .flat_map(|p| config.seeds.iter().map(move |&s| (p.clone(), s)))
        .collect();
    let slots: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; keys.len()]);
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(keys.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((preset, seed)) = keys.get(i) else { break };
                let cell = run_cell(config, data, &vocab, normalizer, preset, *seed, out);
                slots.lock().expect("no poisoned workers")[i] = Some(cell);
            });
        }
    });
    let cells: Vec<CellResult> = slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();

    let presets: Vec<String> = config
        .presets
        .iter()
        .map(|p| TrainConfig::preset(p).map(|c| c.preset_name))
        .collect::<Result<_>>()?;
    let summary = summarize(&presets, &cells);
    let table = render_table(&summary);

    let mut jsonl = String::new();
    for c in &cells {
        jsonl.push_str(&serde_json::to_string(c)?);
        jsonl.push('\n');
    }
    let write = |name: &str, body: &[u8]| {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("results.jsonl", jsonl.as_bytes())?;
    write("summary.json", &serde_json::to_vec_pretty(&summary)?)?;
    write("table.txt", table.as_bytes())?;
    Ok(GridOutcome {
        cells,
        summary,
        table,
    })
}
