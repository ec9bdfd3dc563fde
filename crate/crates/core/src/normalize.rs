//! Tweet normalization: entity substitution, hashtag splitting, emoji
//! aliasing and whitespace canonicalization.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entity grammars, tried left to right at each position.
pub mod patterns {
    pub const URL: &str = r"(?:(?i:https?://)|(?i:www\.))\S+";
    pub const EMAIL: &str = r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+";
    pub const USER: &str = r"@\w+";
    pub const HASHTAG: &str = r"#\w+";
    pub const MONEY: &str = r"(?i:[$€£¥]\s?\d+(?:[.,]\d+)*(?:\s?(?:k|m|bn|million|billion)\b)?|\b\d+(?:[.,]\d+)*\s?(?:dollars?|euros?|pounds?|usd|eur|gbp)\b)";
    pub const PERCENT: &str = r"(?i:\b\d+(?:[.,]\d+)?\s?(?:%|percent\b))";
    pub const PHONE: &str = r"(?:\+\d{1,3}[\s.-]?)?(?:\(\d{3}\)|\b\d{3})[\s.-]?\d{3}[\s.-]?\d{4}\b";
    const MONTH: &str = r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)";
    pub const TIME: &str = r"(?i:\b\d{1,2}:\d{2}(?::\d{2})?(?:\s?[ap]m\b)?|\b\d{1,2}\s?[ap]m\b)";

    pub fn date() -> String {
        format!(
            r"(?i:\b\d{{1,4}}[/.-]\d{{1,2}}[/.-]\d{{1,4}}\b|\b{MONTH}\.?\s\d{{1,2}}(?:st|nd|rd|th)?(?:,?\s\d{{4}})?\b|\b\d{{1,2}}(?:st|nd|rd|th)?\s{MONTH}(?:,?\s\d{{4}})?\b)"
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityClass {
    Url,
    Email,
    User,
    Percent,
    Money,
    Time,
    Date,
    Phone,
}

impl EntityClass {
    pub const ALL: [EntityClass; 8] = [
        EntityClass::Url,
        EntityClass::Email,
        EntityClass::User,
        EntityClass::Percent,
        EntityClass::Money,
        EntityClass::Time,
        EntityClass::Date,
        EntityClass::Phone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityClass::Url => "url",
            EntityClass::Email => "email",
            EntityClass::User => "user",
            EntityClass::Percent => "percent",
            EntityClass::Money => "money",
            EntityClass::Time => "time",
            EntityClass::Date => "date",
            EntityClass::Phone => "phone",
        }
    }

    pub fn default_token(self) -> String {
        format!("<{}>", self.name())
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const DEFAULT_ALIASES: &str = include_str!("../data/emoji_aliases.tsv");

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizerConfig {
    pub entity_tokens: BTreeMap<EntityClass, String>,
    /// Emoji codepoint sequence → alias token such as `:fire:`.
    pub emoji_aliases: Vec<(String, String)>,
    /// Lowercase words used to split all-lowercase hashtags.
    pub segmentation_lexicon: Option<HashSet<String>>,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        NormalizerConfig {
            entity_tokens: EntityClass::ALL
                .into_iter()
                .map(|c| (c, c.default_token()))
                .collect(),
            emoji_aliases: parse_alias_table(DEFAULT_ALIASES).expect("bundled alias table is valid"),
            segmentation_lexicon: None,
        }
    }
}

/// Parses `emoji<TAB>alias` lines; blank lines and `#` comments are skipped.
pub fn parse_alias_table(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (emoji, alias) = line.split_once('\t').ok_or_else(|| {
            Error::Config(format!("alias table line {}: expected `emoji<TAB>alias`", n + 1))
        })?;
        out.push((emoji.to_string(), alias.trim().to_string()));
    }
    Ok(out)
}

/// One word per line, lowercased.
pub fn parse_lexicon(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl NormalizerConfig {
    pub fn with_alias_file(mut self, path: &Path) -> Result<Self> {
        self.emoji_aliases = parse_alias_table(&read_to_string(path)?)?;
        Ok(self)
    }

    pub fn with_lexicon_file(mut self, path: &Path) -> Result<Self> {
        self.segmentation_lexicon = Some(parse_lexicon(&read_to_string(path)?));
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for class in EntityClass::ALL {
            let tok = self
                .entity_tokens
                .get(&class)
                .ok_or_else(|| Error::Config(format!("no replacement token for `{class}`")))?;
            let ok = tok.len() > 2
                && tok.starts_with('<')
                && tok.ends_with('>')
                && !tok.chars().any(char::is_whitespace);
            if !ok {
                return Err(Error::Config(format!(
                    "replacement token {tok:?} for `{class}` must look like <name>"
                )));
            }
        }
        for (emoji, alias) in &self.emoji_aliases {
            if emoji.is_empty() {
                return Err(Error::Config("empty emoji key in alias table".into()));
            }
            let name = alias
                .strip_prefix(':')
                .and_then(|a| a.strip_suffix(':'))
                .unwrap_or("");
            if name.is_empty() || name.contains(':') || name.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("alias {alias:?} must look like :name:")));
            }
        }
        Ok(())
    }

    /// Every token the normalizer can emit atomically: entity tokens then aliases.
    pub fn atomic_tokens(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entity_tokens
            .values()
            .chain(self.emoji_aliases.iter().map(|(_, a)| a))
            .filter(|t| seen.insert(t.as_str()))
            .cloned()
            .collect()
    }
}

const VARIATION_SELECTOR: char = '\u{FE0F}';

fn is_emoji_modifier(c: char) -> bool {
    c == VARIATION_SELECTOR || ('\u{1F3FB}'..='\u{1F3FF}').contains(&c)
}

/// Stateless once built; share freely across threads.
#[derive(Clone, Debug)]
pub struct Normalizer {
    config: NormalizerConfig,
    entities: Regex,
    /// First char → (key chars, alias), longest keys first.
    emoji_index: HashMap<char, Vec<(Vec<char>, String)>>,
}

const MAX_PASSES: usize = 8;

impl Normalizer {
    pub fn new(config: NormalizerConfig) -> Result<Self> {
        config.validate()?;
        let date = patterns::date();
        let alternatives = [
            ("url", patterns::URL),
            ("email", patterns::EMAIL),
            ("user", patterns::USER),
            ("hashtag", patterns::HASHTAG),
            ("money", patterns::MONEY),
            ("percent", patterns::PERCENT),
            ("phone", patterns::PHONE),
            ("date", date.as_str()),
            ("time", patterns::TIME),
        ];
        let joined = alternatives
            .iter()
            .map(|(name, pat)| format!("(?P<{name}>{pat})"))
            .collect::<Vec<_>>()
            .join("|");
        let entities = Regex::new(&joined).map_err(|e| Error::Config(e.to_string()))?;

        let mut emoji_index: HashMap<char, Vec<(Vec<char>, String)>> = HashMap::new();
        for (emoji, alias) in &config.emoji_aliases {
            let mut keys = vec![emoji.chars().collect::<Vec<_>>()];
            let bare: Vec<char> = emoji.chars().filter(|&c| c != VARIATION_SELECTOR).collect();
            if !bare.is_empty() && bare != keys[0] {
                keys.push(bare);
            }
            for key in keys {
                let slot = emoji_index.entry(key[0]).or_default();
                if !slot.iter().any(|(k, _)| *k == key) {
                    slot.push((key, alias.clone()));
                }
            }
        }
        for list in emoji_index.values_mut() {
            list.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }
        Ok(Normalizer {
            config,
            entities,
            emoji_index,
        })
    }

    pub fn config(&self) -> &NormalizerConfig {
        &self.config
    }

    /// Normalizes to a fixed point, so the result is stable under re-normalization.
    pub fn normalize(&self, text: &str) -> String {
        let mut current = self.pass(text);
        for _ in 1..MAX_PASSES {
            let next = self.pass(&current);
            if next == current {
                break;
            }
            current = next;
        }
        current
    }

    fn pass(&self, text: &str) -> String {
        let text = self.replace_entities(text);
        let text = self.replace_emoji(&text);
        collapse_whitespace(&text)
    }

    fn token(&self, class: EntityClass) -> &str {
        &self.config.entity_tokens[&class]
    }

    fn replace_entities(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut pos = 0;
        let mut last = 0;
        while let Some(caps) = self.entities.captures_at(text, pos) {
            let whole = caps.get(0).expect("group 0 always present");
            if caps.name("hashtag").is_some() && is_glued(text, whole.start()) {
                // Not a hashtag; rescan just past the `#` so entities inside still match.
                pos = whole.start() + 1;
                continue;
            }
            out.push_str(&text[last..whole.start()]);
            let class = if caps.name("url").is_some() {
                EntityClass::Url
            } else if caps.name("email").is_some() {
                EntityClass::Email
            } else if caps.name("user").is_some() {
                EntityClass::User
            } else if caps.name("hashtag").is_some() {
                out.push_str(&self.expand_hashtag(whole.as_str()));
                pos = whole.end();
                last = pos;
                continue;
            } else if caps.name("money").is_some() {
                EntityClass::Money
            } else if caps.name("percent").is_some() {
                EntityClass::Percent
            } else if caps.name("phone").is_some() {
                EntityClass::Phone
            } else if caps.name("date").is_some() {
                EntityClass::Date
            } else {
                EntityClass::Time
            };
            out.push_str(self.token(class));
            pos = whole.end();
            last = pos;
        }
        out.push_str(&text[last..]);
        out
    }

    fn expand_hashtag(&self, matched: &str) -> String {
        let lexicon = self.config.segmentation_lexicon.as_ref();
        matched[1..]
            .split('_')
            .filter(|part| !part.is_empty())
            .flat_map(|part| segment_hashtag(part, lexicon))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn replace_emoji(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        while i < chars.len() {
            let hit = self.emoji_index.get(&chars[i]).and_then(|cands| {
                cands
                    .iter()
                    .find(|(key, _)| chars[i..].starts_with(key))
            });
            match hit {
                Some((key, alias)) => {
                    out.push(' ');
                    out.push_str(alias);
                    out.push(' ');
                    i += key.len();
                    while i < chars.len() && is_emoji_modifier(chars[i]) {
                        i += 1;
                    }
                }
                None => {
                    out.push(chars[i]);
                    i += 1;
                }
            }
        }
        out
    }
}

/// A `#` glued to a preceding word character, `@` or `#` is not a hashtag.
fn is_glued(text: &str, start: usize) -> bool {
    text[..start]
        .chars()
        .next_back()
        .is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '@' || c == '#')
}

/// Line breaks and other whitespace become single spaces; ends are trimmed.
fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Upper,
    Lower,
    Digit,
    Other,
}

fn classify(c: char) -> CharClass {
    if c.is_uppercase() {
        CharClass::Upper
    } else if c.is_numeric() {
        CharClass::Digit
    } else if c.is_alphabetic() {
        CharClass::Lower
    } else {
        CharClass::Other
    }
}

/// Splits a hashtag body into words. Case changes and letter/digit
/// boundaries always split; an all-lowercase run is further split against
/// `lexicon` (fewest words, then longest leading words) when a complete
/// segmentation exists.
pub fn segment_hashtag(tag_body: &str, lexicon: Option<&HashSet<String>>) -> Vec<String> {
    let chars: Vec<char> = tag_body.chars().collect();
    let mut runs: Vec<String> = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if i > 0 && !current.is_empty() {
            let prev = classify(chars[i - 1]);
            let cur = classify(c);
            let next = chars.get(i + 1).map(|&n| classify(n));
            let boundary = match (prev, cur) {
                (CharClass::Lower, CharClass::Upper) => true,
                (CharClass::Digit, CharClass::Upper | CharClass::Lower) => true,
                (CharClass::Upper | CharClass::Lower, CharClass::Digit) => true,
                // "HTMLParser": split before the last capital of an acronym.
                (CharClass::Upper, CharClass::Upper) => next == Some(CharClass::Lower),
                _ => false,
            };
            if boundary {
                runs.push(std::mem::take(&mut current));
            }
        }
        current.push(c);
    }
    if !current.is_empty() {
        runs.push(current);
    }

    let Some(lexicon) = lexicon.filter(|l| !l.is_empty()) else {
        return runs;
    };
    runs.into_iter()
        .flat_map(|run| {
            let lowercase = run.chars().all(|c| classify(c) == CharClass::Lower);
            if lowercase {
                if let Some(words) = segment_with_lexicon(&run, lexicon) {
                    return words;
                }
            }
            vec![run]
        })
        .collect()
}

/// Fewest-words segmentation; ties go to the candidate whose word lengths
/// are lexicographically largest (longest words first).
fn segment_with_lexicon(run: &str, lexicon: &HashSet<String>) -> Option<Vec<String>> {
    let chars: Vec<char> = run.chars().collect();
    let n = chars.len();
    // best[i]: best split of chars[i..] as word lengths.
    let mut best: Vec<Option<Vec<usize>>> = vec![None; n + 1];
    best[n] = Some(Vec::new());
    for i in (0..n).rev() {
        let mut choice: Option<Vec<usize>> = None;
        for j in (i + 1..=n).rev() {
            let Some(rest) = &best[j] else { continue };
            let word: String = chars[i..j].iter().collect();
            if !lexicon.contains(&word) {
                continue;
            }
            let mut cand = Vec::with_capacity(rest.len() + 1);
            cand.push(j - i);
            cand.extend_from_slice(rest);
            let better = match &choice {
                None => true,
                Some(cur) => cand.len() < cur.len() || (cand.len() == cur.len() && cand > *cur),
            };
            if better {
                choice = Some(cand);
            }
        }
        best[i] = choice;
    }
    let lengths = best[0].take()?;
    let mut pos = 0;
    Some(
        lengths
            .into_iter()
            .map(|len| {
                let w: String = chars[pos..pos + len].iter().collect();
                pos += len;
                w
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(s: &str) -> String {
        Normalizer::new(NormalizerConfig::default()).unwrap().normalize(s)
    }

    fn lex(words: &[&str]) -> HashSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn mention_becomes_user_token() {
        assert_eq!(norm("@user hello"), "<user> hello");
    }

    #[test]
    fn camel_hashtag_is_split() {
        assert_eq!(norm("#CovidVaccine"), "Covid Vaccine");
    }

    #[test]
    fn whitespace_and_line_breaks_collapse() {
        assert_eq!(norm("a  b\nc"), "a b c");
        assert_eq!(norm(""), "");
        assert_eq!(norm("  \r\n\t "), "");
    }

    #[test]
    fn emoji_becomes_alias() {
        assert_eq!(norm("😂"), ":face_with_tears_joy:");
        assert_eq!(norm("lol😂😂"), "lol :face_with_tears_joy: :face_with_tears_joy:");
        assert_eq!(norm("❤ and ❤️"), ":red_heart: and :red_heart:");
        assert_eq!(norm("👍🏽"), ":thumbs_up:");
    }

    #[test]
    fn entity_classes() {
        assert_eq!(norm("see https://t.co/xyz now"), "see <url> now");
        assert_eq!(norm("www.example.org"), "<url>");
        assert_eq!(norm("mail me@example.com"), "mail <email>");
        assert_eq!(norm("up 25% today"), "up <percent> today");
        assert_eq!(norm("costs $1,200"), "costs <money>");
        assert_eq!(norm("only 30 dollars"), "only <money>");
        assert_eq!(norm("at 10:30 pm"), "at <time>");
        assert_eq!(norm("at 5pm"), "at <time>");
        assert_eq!(norm("on 12/03/2021"), "on <date>");
        assert_eq!(norm("on March 3rd, 2021"), "on <date>");
        assert_eq!(norm("call 555-123-4567"), "call <phone>");
        assert_eq!(norm("call +1 (555) 123-4567"), "call <phone>");
    }

    #[test]
    fn bare_numbers_stay() {
        assert_eq!(norm("I have 3 cats and 1234 dogs"), "I have 3 cats and 1234 dogs");
    }

    #[test]
    fn glued_hash_is_not_a_hashtag() {
        assert_eq!(norm("C#Sharp"), "C#Sharp");
    }

    #[test]
    fn underscore_hashtags_split() {
        assert_eq!(norm("#stop_the_Hate"), "stop the Hate");
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(segment_hashtag("CovidVaccine", None), vec!["Covid", "Vaccine"]);
        assert_eq!(segment_hashtag("hello", Some(&lex(&[]))), vec!["hello"]);
        assert_eq!(
            segment_hashtag("covidvaccine", Some(&lex(&["covid", "vaccine", "vac", "cine"]))),
            vec!["covid", "vaccine"]
        );
        assert_eq!(segment_hashtag("HTMLParser", None), vec!["HTML", "Parser"]);
        assert_eq!(segment_hashtag("Covid19", None), vec!["Covid", "19"]);
        // no full segmentation: keep the run whole
        assert_eq!(segment_hashtag("covidxyz", Some(&lex(&["covid"]))), vec!["covidxyz"]);
    }

    #[test]
    fn lexicon_applies_inside_normalize() {
        let cfg = NormalizerConfig {
            segmentation_lexicon: Some(lex(&["stop", "hate", "speech"])),
            ..NormalizerConfig::default()
        };
        let n = Normalizer::new(cfg).unwrap();
        assert_eq!(n.normalize("#stophatespeech now"), "stop hate speech now");
    }

    #[test]
    fn invalid_tokens_rejected() {
        let mut cfg = NormalizerConfig::default();
        cfg.entity_tokens.insert(EntityClass::Url, "url".into());
        assert!(matches!(Normalizer::new(cfg), Err(Error::Config(_))));
        let cfg = NormalizerConfig {
            emoji_aliases: vec![("😂".into(), "face joy".into())],
            ..NormalizerConfig::default()
        };
        assert!(Normalizer::new(cfg).is_err());
    }
}
