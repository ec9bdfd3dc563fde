//! Corpus ingestion, stratified splitting and synthetic fixtures.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::splitmix64;
use crate::error::{Error, Result};
use crate::model::{TaskSpec, EMOTION, HOF, SENTIMENT, TARGET};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    /// Tab-separated with a header row.
    #[serde(rename = "tsv-hasoc")]
    TsvHasoc,
    /// One `{"id", "text", "task", "label"}` object per line.
    #[serde(rename = "jsonl-unified")]
    JsonlUnified,
}

/// How to read one corpus file into a task dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSchema {
    #[serde(default = "default_name")]
    pub name: String,
    pub format: CorpusFormat,
    pub task: String,
    /// Canonical label set; defaults to the built-in set for the task.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    /// Raw label → canonical label. Empty means identity over `labels`.
    #[serde(default)]
    pub label_map: BTreeMap<String, String>,
    #[serde(default = "default_id_field")]
    pub id_field: String,
    #[serde(default = "default_text_field")]
    pub text_field: String,
    #[serde(default = "default_label_field")]
    pub label_field: String,
    /// Unmapped labels are errors when true, dropped rows otherwise.
    #[serde(default = "default_strict")]
    pub strict: bool,
}

fn default_name() -> String {
    "unnamed".into()
}
fn default_id_field() -> String {
    "id".into()
}
fn default_text_field() -> String {
    "text".into()
}
fn default_label_field() -> String {
    "label".into()
}
fn default_strict() -> bool {
    true
}

impl CorpusSchema {
    /// HASOC subtask 1A columns: `text_id`, `text`, `task_1`.
    pub fn hasoc() -> Self {
        CorpusSchema {
            name: "hasoc-1a".into(),
            format: CorpusFormat::TsvHasoc,
            task: HOF.into(),
            labels: None,
            label_map: BTreeMap::new(),
            id_field: "text_id".into(),
            text_field: "text".into(),
            label_field: "task_1".into(),
            strict: true,
        }
    }

    pub fn unified(task: &str) -> Self {
        CorpusSchema {
            name: format!("unified-{task}"),
            format: CorpusFormat::JsonlUnified,
            task: task.into(),
            labels: None,
            label_map: BTreeMap::new(),
            id_field: default_id_field(),
            text_field: default_text_field(),
            label_field: default_label_field(),
            strict: true,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: CorpusSchema =
            toml::from_str(text).map_err(|e| Error::Config(format!("schema: {e}")))?;
        schema.task_spec()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CorpusSchema::from_toml(&text)
    }

    /// Resolved label set, validated against `label_map`.
    pub fn task_spec(&self) -> Result<TaskSpec> {
        let spec = match &self.labels {
            Some(labels) => TaskSpec {
                name: self.task.clone(),
                labels: labels.clone(),
            },
            None => TaskSpec::default_for(&self.task).ok_or_else(|| {
                Error::Config(format!(
                    "task `{}` has no built-in labels; list them in the schema",
                    self.task
                ))
            })?,
        };
        spec.validate()?;
        if let Some((raw, canon)) = self
            .label_map
            .iter()
            .find(|(_, c)| spec.label_index(c).is_none())
        {
            return Err(Error::Config(format!(
                "label_map sends `{raw}` to `{canon}`, which is not a `{}` label",
                self.task
            )));
        }
        Ok(spec)
    }

    fn map_label(&self, spec: &TaskSpec, raw: &str) -> Option<usize> {
        if self.label_map.is_empty() {
            spec.label_index(raw)
        } else {
            self.label_map.get(raw).and_then(|c| spec.label_index(c))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub schema: String,
    /// Rows skipped for unmapped labels in lenient mode.
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub task: String,
    pub labels: Vec<String>,
    pub examples: Vec<Example>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(spec: &TaskSpec, examples: Vec<Example>, provenance: Provenance) -> Result<Self> {
        let mut ids = HashSet::new();
        for e in &examples {
            if e.label >= spec.num_labels() {
                return Err(Error::Data(format!(
                    "example `{}` has label index {} but `{}` has {} labels",
                    e.id,
                    e.label,
                    spec.name,
                    spec.num_labels()
                )));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Data(format!("duplicate example id `{}`", e.id)));
            }
        }
        Ok(Dataset {
            task: spec.name.clone(),
            labels: spec.labels.clone(),
            examples,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn spec(&self) -> TaskSpec {
        TaskSpec {
            name: self.task.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn texts(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.text.as_str()).collect()
    }

    pub fn gold(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.labels.len()];
        for e in &self.examples {
            c[e.label] += 1;
        }
        c
    }
}

/// Reads `path` under `schema`.
pub fn load_corpus(path: &Path, schema: &CorpusSchema) -> Result<Dataset> {
    let spec = schema.task_spec()?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::ingestion(path, "file is empty"));
    }
    let rows = match schema.format {
        CorpusFormat::TsvHasoc => read_tsv(path, &text, schema)?,
        CorpusFormat::JsonlUnified => read_jsonl(path, &text, schema)?,
    };
    let mut examples = Vec::with_capacity(rows.len());
    let mut unmapped: BTreeMap<String, usize> = BTreeMap::new();
    let mut dropped = 0;
    for (line, id, text, raw) in rows {
        match schema.map_label(&spec, &raw) {
            Some(label) => examples.push(Example { id, text, label }),
            None if schema.strict => *unmapped.entry(format!("{raw:?} (line {line})")).or_default() += 1,
            None => dropped += 1,
        }
    }
    if !unmapped.is_empty() {
        let listed: Vec<&str> = unmapped.keys().map(String::as_str).take(10).collect();
        return Err(Error::ingestion(
            path,
            format!(
                "{} rows carry unmapped labels: {}",
                unmapped.values().sum::<usize>(),
                listed.join(", ")
            ),
        ));
    }
    if examples.is_empty() {
        return Err(Error::ingestion(path, "no usable rows"));
    }
    let provenance = Provenance {
        source: path.display().to_string(),
        schema: schema.name.clone(),
        dropped,
    };
    Dataset::new(&spec, examples, provenance).map_err(|e| Error::ingestion(path, e.to_string()))
}

type RawRow = (usize, String, String, String);

fn read_tsv(path: &Path, text: &str, schema: &CorpusSchema) -> Result<Vec<RawRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::ingestion(path, "missing header row"))?;
    let header: Vec<&str> = header.trim_end_matches('\r').split('\t').map(str::trim).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::ingestion(path, format!("header has no `{name}` column")))
    };
    let (ci, ct, cl) = (col(&schema.id_field)?, col(&schema.text_field)?, col(&schema.label_field)?);
    let mut rows = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() != header.len() {
            return Err(Error::ingestion(
                path,
                format!(
                    "line {}: expected {} columns, found {}",
                    n + 1,
                    header.len(),
                    fields.len()
                ),
            ));
        }
        rows.push((
            n + 1,
            fields[ci].trim().to_string(),
            fields[ct].to_string(),
            fields[cl].trim().to_string(),
        ));
    }
    Ok(rows)
}

fn json_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn read_jsonl(path: &Path, text: &str, schema: &CorpusSchema) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::ingestion(path, format!("line {}: {e}", n + 1)))?;
        let field = |name: &str| {
            v.get(name)
                .and_then(json_string)
                .ok_or_else(|| Error::ingestion(path, format!("line {}: missing field `{name}`", n + 1)))
        };
        let task = field("task")?;
        if task != schema.task {
            return Err(Error::ingestion(
                path,
                format!("line {}: task `{task}` but schema reads `{}`", n + 1, schema.task),
            ));
        }
        rows.push((
            n + 1,
            field(&schema.id_field)?,
            field(&schema.text_field)?,
            field(&schema.label_field)?,
        ));
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct UnifiedRecord<'a> {
    id: &'a str,
    text: &'a str,
    task: &'a str,
    label: &'a str,
}

/// Serializes to jsonl-unified, one record per line.
pub fn to_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    for e in &dataset.examples {
        let rec = UnifiedRecord {
            id: &e.id,
            text: &e.text,
            task: &dataset.task,
            label: &dataset.labels[e.label],
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain strings serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(to_jsonl(dataset).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Reads a jsonl-unified file with the built-in (or given) label set.
pub fn load_unified(path: &Path, spec: &TaskSpec) -> Result<Dataset> {
    let mut schema = CorpusSchema::unified(&spec.name);
    schema.labels = Some(spec.labels.clone());
    load_corpus(path, &schema)
}

pub const VALIDATION_FILE: &str = "hof_val.jsonl";
pub const TEST_FILE: &str = "hof_test.jsonl";

/// Corpora found in a data directory laid out as `<task>.jsonl` per task,
/// plus optional `hof_val.jsonl` and `hof_test.jsonl`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataDir {
    pub train: BTreeMap<String, Dataset>,
    pub validation: Dataset,
    pub test: Option<Dataset>,
    /// Every file read, in reading order.
    pub files: Vec<PathBuf>,
}

/// Reads a data directory. Without `hof_val.jsonl`, the hof corpus is split
/// 80/20 into train and validation with `split_seed`.
pub fn load_data_dir(dir: &Path, split_seed: u64) -> Result<DataDir> {
    let mut train = BTreeMap::new();
    let mut files = Vec::new();
    for spec in TaskSpec::defaults() {
        let path = dir.join(format!("{}.jsonl", spec.name));
        if path.is_file() {
            train.insert(spec.name.clone(), load_unified(&path, &spec)?);
            files.push(path);
        }
    }
    let hof_spec = TaskSpec::default_for(HOF).expect("built-in");
    let Some(hof) = train.remove(HOF) else {
        return Err(Error::ingestion(&dir.join("hof.jsonl"), "hof corpus is required"));
    };
    let val_path = dir.join(VALIDATION_FILE);
    let (hof, validation) = if val_path.is_file() {
        files.push(val_path.clone());
        (hof, load_unified(&val_path, &hof_spec)?)
    } else {
        split(&hof, (0.8, 0.2), split_seed)?
    };
    train.insert(HOF.to_string(), hof);
    let test_path = dir.join(TEST_FILE);
    let test = if test_path.is_file() {
        files.push(test_path.clone());
        Some(load_unified(&test_path, &hof_spec)?)
    } else {
        None
    };
    Ok(DataDir {
        train,
        validation,
        test,
        files,
    })
}

/// Stratified, seeded two-way split. Per class, the train share is allotted
/// by largest remainder so totals hit `round(n * train)` and every class
/// stays within one example of its proportion.
pub fn split(dataset: &Dataset, fractions: (f64, f64), seed: u64) -> Result<(Dataset, Dataset)> {
    let (ft, fv) = fractions;
    if !(ft > 0.0 && fv > 0.0 && ((ft + fv) - 1.0).abs() < 1e-9) {
        return Err(Error::Split(format!(
            "fractions ({ft}, {fv}) must both be positive and sum to 1"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Split(format!("cannot split {n} example(s)")));
    }
    let k = dataset.labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, e) in dataset.examples.iter().enumerate() {
        by_class[e.label].push(i);
    }
    for group in &mut by_class {
        group.shuffle(&mut rng);
    }
    let total_train = ((n as f64 * ft).round() as usize).clamp(1, n - 1);
    let exact: Vec<f64> = by_class.iter().map(|g| g.len() as f64 * ft).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = quota.iter().sum();
    for &c in order.iter().cycle().take(2 * k) {
        if assigned >= total_train {
            break;
        }
        if quota[c] < by_class[c].len() && (quota[c] as f64) < exact[c].ceil() {
            quota[c] += 1;
            assigned += 1;
        }
    }
    let mut train_idx = Vec::with_capacity(total_train);
    let mut val_idx = Vec::with_capacity(n - total_train);
    for (c, group) in by_class.iter().enumerate() {
        train_idx.extend_from_slice(&group[..quota[c]]);
        val_idx.extend_from_slice(&group[quota[c]..]);
    }
    train_idx.shuffle(&mut rng);
    val_idx.shuffle(&mut rng);
    let pick = |idx: &[usize], part: &str| Dataset {
        task: dataset.task.clone(),
        labels: dataset.labels.clone(),
        examples: idx.iter().map(|&i| dataset.examples[i].clone()).collect(),
        provenance: Provenance {
            source: format!("{}#{part}", dataset.provenance.source),
            ..dataset.provenance.clone()
        },
    };
    Ok((pick(&train_idx, "train"), pick(&val_idx, "validation")))
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

const FILLER: [&str; 40] = [
    "the", "a", "today", "people", "just", "really", "game", "news", "city", "work", "home",
    "friends", "weekend", "coffee", "movie", "phone", "team", "music", "school", "road", "night",
    "morning", "video", "story", "post", "time", "week", "show", "match", "party", "lunch",
    "train", "bus", "store", "book", "song", "street", "office", "class", "meeting",
];

const EXTRAS: [&str; 6] = ["@mike", "#GameDay", "😂", "https://t.co/x1", "#MondayMood", "🔥"];

const HOF_CUES: [&str; 5] = ["idiot", "moron", "scum", "trash", "loser"];

fn sentiment_markers(label: &str) -> &'static [&'static str] {
    match label {
        "negative" => &["awful", "terrible", "horrible", "disgusting", "pathetic"],
        "positive" => &["great", "lovely", "wonderful", "amazing", "brilliant"],
        _ => &["okay", "usual", "regular", "average", "standard"],
    }
}

fn emotion_markers(label: &str) -> &'static [&'static str] {
    match label {
        "anger" => &["furious", "angry"],
        "disgust" => &["gross", "nasty"],
        "fear" => &["scared", "afraid"],
        "joy" => &["happy", "glad"],
        "sadness" => &["sad", "miserable"],
        "surprise" => &["shocked", "unexpected"],
        "enthusiasm" => &["excited", "eager"],
        "fun" => &["funny", "hilarious"],
        "hate" => &["hatred", "despise"],
        "neutral" => &["meh", "whatever"],
        "love" => &["adore", "cherish"],
        "boredom" => &["bored", "boring"],
        "relief" => &["relieved", "finally"],
        _ => &[],
    }
}

fn target_markers(label: &str) -> &'static [&'static str] {
    match label {
        "IND" => &["you", "he"],
        "GRP" => &["they", "those"],
        "OTH" => &["it", "that"],
        _ => &[],
    }
}

/// Shape of a synthetic multi-task corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Examples per task name (any of hof, sentiment, emotion, target).
    pub sizes: BTreeMap<String, usize>,
    /// Strength with which auxiliary labels track the latent hof label.
    pub rho: f64,
    #[serde(default = "half")]
    pub hof_rate: f64,
    /// P(direct offensive cue word | HOF).
    #[serde(default = "half")]
    pub cue_rate: f64,
    /// P(direct offensive cue word | NOT).
    #[serde(default)]
    pub cue_noise: f64,
    #[serde(default = "min_filler")]
    pub min_filler: usize,
    #[serde(default = "max_filler")]
    pub max_filler: usize,
}

fn half() -> f64 {
    0.5
}
fn min_filler() -> usize {
    3
}
fn max_filler() -> usize {
    8
}

impl SynthSpec {
    pub fn new(sizes: &[(&str, usize)], rho: f64) -> Self {
        SynthSpec {
            sizes: sizes.iter().map(|(t, n)| (t.to_string(), *n)).collect(),
            rho,
            hof_rate: half(),
            cue_rate: half(),
            cue_noise: 0.0,
            min_filler: min_filler(),
            max_filler: max_filler(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("rho", self.rho),
            ("hof_rate", self.hof_rate),
            ("cue_rate", self.cue_rate),
            ("cue_noise", self.cue_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if self.min_filler > self.max_filler {
            return Err(Error::Config("min_filler exceeds max_filler".into()));
        }
        if let Some(t) = self.sizes.keys().find(|t| TaskSpec::default_for(t).is_none()) {
            return Err(Error::Config(format!("synthetic corpus has no generator for task `{t}`")));
        }
        Ok(())
    }
}

/// One synthetic tweet with all four latent labels (indices into the
/// built-in label sets).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthRecord {
    pub text: String,
    pub hof: usize,
    pub sentiment: usize,
    pub emotion: usize,
    pub target: usize,
}

impl SynthRecord {
    pub fn label(&self, task: &str) -> usize {
        match task {
            HOF => self.hof,
            SENTIMENT => self.sentiment,
            EMOTION => self.emotion,
            _ => self.target,
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

/// Draws `n` records from the stream identified by `seed`.
pub fn synth_records(spec: &SynthSpec, n: usize, seed: u64) -> Result<Vec<SynthRecord>> {
    spec.validate()?;
    let sentiment = TaskSpec::default_for(SENTIMENT).expect("built-in");
    let emotion = TaskSpec::default_for(EMOTION).expect("built-in");
    let target = TaskSpec::default_for(TARGET).expect("built-in");
    let idx = |s: &TaskSpec, l: &str| s.label_index(l).expect("built-in label");
    let (neg, pos, neu) = (idx(&sentiment, "negative"), idx(&sentiment, "positive"), idx(&sentiment, "neutral"));
    let hostile = [idx(&emotion, "anger"), idx(&emotion, "hate")];
    let (none_t, ind_t) = (idx(&target, "NONE"), idx(&target, "IND"));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let offensive = rng.random_bool(spec.hof_rate);
        let tied = |rng: &mut ChaCha8Rng| rng.random_bool(spec.rho);
        let s = match (offensive, tied(&mut rng)) {
            (true, true) => neg,
            (false, true) => [pos, neu][rng.random_range(0..2)],
            _ => rng.random_range(0..sentiment.num_labels()),
        };
        let e = match (offensive, tied(&mut rng)) {
            (true, true) => hostile[rng.random_range(0..2)],
            (false, true) => {
                let others: Vec<usize> = (0..emotion.num_labels()).filter(|i| !hostile.contains(i)).collect();
                others[rng.random_range(0..others.len())]
            }
            _ => rng.random_range(0..emotion.num_labels()),
        };
        let t = match (offensive, tied(&mut rng)) {
            (true, true) => ind_t,
            (false, true) => none_t,
            _ => rng.random_range(0..target.num_labels()),
        };
        let cue = rng.random_bool(if offensive { spec.cue_rate } else { spec.cue_noise });

        let mut words: Vec<String> = Vec::new();
        let n_fill = rng.random_range(spec.min_filler..=spec.max_filler);
        for _ in 0..n_fill {
            words.push(pick(&mut rng, &FILLER).to_string());
        }
        words.push(pick(&mut rng, sentiment_markers(&sentiment.labels[s])).to_string());
        let em = emotion_markers(&emotion.labels[e]);
        if !em.is_empty() {
            words.push(pick(&mut rng, em).to_string());
        }
        let tm = target_markers(&target.labels[t]);
        if !tm.is_empty() {
            words.push(pick(&mut rng, tm).to_string());
        }
        if cue {
            words.push(pick(&mut rng, &HOF_CUES).to_string());
        }
        if rng.random_bool(0.2) {
            words.push(pick(&mut rng, &EXTRAS).to_string());
        }
        words.shuffle(&mut rng);
        out.push(SynthRecord {
            text: words.join(" "),
            hof: usize::from(offensive),
            sentiment: s,
            emotion: e,
            target: t,
        });
    }
    Ok(out)
}

fn task_stream(seed: u64, task: &str) -> u64 {
    task.bytes()
        .fold(splitmix64(seed), |h, b| splitmix64(h ^ u64::from(b)))
}

/// One dataset per task in `spec.sizes`, each exposing only its own label.
pub fn synth_fixture(spec: &SynthSpec, seed: u64) -> Result<BTreeMap<String, Dataset>> {
    spec.validate()?;
    let mut out = BTreeMap::new();
    for (task, &n) in &spec.sizes {
        let tspec = TaskSpec::default_for(task).expect("validated");
        let records = synth_records(spec, n, task_stream(seed, task))?;
        let examples = records
            .iter()
            .enumerate()
            .map(|(i, r)| Example {
                id: format!("{task}-{i:05}"),
                text: r.text.clone(),
                label: r.label(task),
            })
            .collect();
        let provenance = Provenance {
            source: format!("synthetic(seed={seed}, rho={})", spec.rho),
            schema: "synthetic".into(),
            dropped: 0,
        };
        out.insert(task.clone(), Dataset::new(&tspec, examples, provenance)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(labels: &[usize]) -> Dataset {
        let spec = TaskSpec::default_for(HOF).unwrap();
        let ex = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Example {
                id: i.to_string(),
                text: format!("t{i}"),
                label: l,
            })
            .collect();
        Dataset::new(&spec, ex, Provenance::default()).unwrap()
    }

    #[test]
    fn split_eighty_twenty() {
        let d = ds(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let (tr, va) = split(&d, (0.8, 0.2), 1).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
    }

    #[test]
    fn split_rejects_empty_validation_and_tiny_sets() {
        let d = ds(&[0, 1, 0]);
        assert!(matches!(split(&d, (1.0, 0.0), 1), Err(Error::Split(_))));
        assert!(matches!(split(&ds(&[0]), (0.8, 0.2), 1), Err(Error::Split(_))));
    }

    #[test]
    fn rho_one_marks_every_offensive_text() {
        let spec = SynthSpec::new(&[(HOF, 300)], 1.0);
        let recs = synth_records(&spec, 300, 5).unwrap();
        let negs = sentiment_markers("negative");
        for r in recs.iter().filter(|r| r.hof == 1) {
            assert!(r.text.split(' ').any(|w| negs.contains(&w)), "{}", r.text);
        }
    }

    #[test]
    fn fixture_sizes_exact() {
        let spec = SynthSpec::new(&[(HOF, 500), (SENTIMENT, 500), (EMOTION, 500), (TARGET, 500)], 0.5);
        let f = synth_fixture(&spec, 9).unwrap();
        assert_eq!(f.len(), 4);
        assert!(f.values().all(|d| d.len() == 500));
    }

    #[test]
    fn rho_out_of_range() {
        let spec = SynthSpec::new(&[(HOF, 10)], 1.5);
        assert!(matches!(synth_fixture(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn schema_label_map_must_target_label_set() {
        let toml = r#"
            format = "tsv-hasoc"
            task = "target"
            [label_map]
            NULL = "NOBODY"
        "#;
        assert!(matches!(CorpusSchema::from_toml(toml), Err(Error::Config(_))));
    }
}
