use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::Rng;

use super::grammar::join_tokens;
use super::{AmlError, AmssDescription, Grammar, Level, Symbol, Task, DEFAULT_SOURCES};

/// Words with a fixed meaning in the language. Any other terminal is a source name.
const KEYWORDS: &[&str] = &[
    "separate", "mute", "increase", "decrease", "the", "volume", "of", "pan", "to", "left",
    "right", "apply", "lowpass", "highpass", "remove", "reverb", "from", "light", "medium",
    "heavy", ",",
];

const END: &str = "end of input";

fn is_keyword(tok: &str) -> bool {
    KEYWORDS.contains(&tok)
}

/// Lower-cases and splits on whitespace; commas become tokens of their own.
/// Tokens must be ASCII alphanumeric words (hyphen and underscore allowed).
pub fn tokenize(text: &str) -> Result<Vec<String>, AmlError> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        for (i, piece) in chunk.split(',').enumerate() {
            if i > 0 {
                tokens.push(",".to_string());
            }
            if piece.is_empty() {
                continue;
            }
            let word = piece.to_lowercase();
            if !word
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return Err(AmlError::UnknownWord {
                    token: piece.to_string(),
                    position: tokens.len() + 1,
                });
            }
            tokens.push(word);
        }
    }
    Ok(tokens)
}

/// A query language instance: a grammar plus the configured source vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Aml {
    grammar: Grammar,
    sources: Vec<String>,
}

impl Default for Aml {
    fn default() -> Self {
        Aml::new(Grammar::full(&DEFAULT_SOURCES), &DEFAULT_SOURCES)
    }
}

impl Aml {
    pub fn new<S: AsRef<str>>(grammar: Grammar, sources: &[S]) -> Self {
        Aml {
            grammar,
            sources: sources.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    /// Full language over the given sources.
    pub fn with_sources<S: AsRef<str>>(sources: &[S]) -> Self {
        Aml::new(Grammar::full(sources), sources)
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn parse(&self, text: &str) -> Result<AmssDescription, AmlError> {
        let tokens = tokenize(text)?;
        let mut recognizer = Recognizer {
            grammar: &self.grammar,
            tokens: &tokens,
            far_pos: 0,
            far_expected: BTreeSet::new(),
        };
        let ends = recognizer.symbol(&Symbol::NonTerminal(self.grammar.start.clone()), 0);
        let derivations = ends.get(&tokens.len()).copied().unwrap_or(0);
        if derivations > 1 {
            return Err(AmlError::Ambiguous {
                text: text.to_string(),
                count: derivations,
            });
        }
        if derivations == 0 {
            // Complete prefixes that stop early expect the end of input next.
            for &end in ends.keys() {
                recognizer.expect(end, END);
            }
            return Err(recognizer.error(&self.sources));
        }
        let desc = extract(&tokens)?;
        desc.check_sources(&self.sources)?;
        Ok(desc)
    }

    /// Draws a random query and its description.
    pub fn generate_random<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<(String, AmssDescription), AmlError> {
        generate_random(&self.grammar, rng)
    }

    pub fn enumerate_queries(&self) -> Result<Vec<String>, AmlError> {
        self.grammar.enumerate()
    }
}

fn default_language() -> &'static Aml {
    static LANG: OnceLock<Aml> = OnceLock::new();
    LANG.get_or_init(Aml::default)
}

/// Parses with the full default grammar over vocals/drums/bass.
pub fn parse(text: &str) -> Result<AmssDescription, AmlError> {
    default_language().parse(text)
}

/// Samples a query from `grammar` and returns it with its description.
pub fn generate_random<R: Rng + ?Sized>(
    grammar: &Grammar,
    rng: &mut R,
) -> Result<(String, AmssDescription), AmlError> {
    let tokens = grammar.sample_tokens(rng)?;
    let desc = extract(&tokens)?;
    Ok((join_tokens(&tokens), desc))
}

/// Canonical surface form. The level is always spelled out for tasks that take one.
pub fn render(desc: &AmssDescription) -> String {
    let srcs = desc.targets.join(", ");
    let lvl = desc.level.word();
    match desc.task {
        Task::Separate => format!("separate {srcs}"),
        Task::Mute => format!("mute {srcs}"),
        Task::IncreaseVol => format!("increase the {lvl} volume of {srcs}"),
        Task::DecreaseVol => format!("decrease the {lvl} volume of {srcs}"),
        Task::PanLeft => format!("pan {srcs} to the {lvl} left"),
        Task::PanRight => format!("pan {srcs} to the {lvl} right"),
        Task::Lowpass => format!("apply {lvl} lowpass to {srcs}"),
        Task::Highpass => format!("apply {lvl} highpass to {srcs}"),
        Task::Dereverb => format!("remove {lvl} reverb from {srcs}"),
    }
}

/// Reads the description off a derivable token sequence.
fn extract(tokens: &[String]) -> Result<AmssDescription, AmlError> {
    let has = |w: &str| tokens.iter().any(|t| t == w);
    let task = if has("separate") {
        Task::Separate
    } else if has("mute") {
        Task::Mute
    } else if has("increase") {
        Task::IncreaseVol
    } else if has("decrease") {
        Task::DecreaseVol
    } else if has("pan") && has("left") {
        Task::PanLeft
    } else if has("pan") && has("right") {
        Task::PanRight
    } else if has("lowpass") {
        Task::Lowpass
    } else if has("highpass") {
        Task::Highpass
    } else if has("remove") && has("reverb") {
        Task::Dereverb
    } else {
        return Err(AmlError::MissingTask(join_tokens(tokens)));
    };
    let level = tokens
        .iter()
        .find_map(|t| Level::from_word(t))
        .unwrap_or_default();
    let targets: Vec<&str> = tokens
        .iter()
        .map(String::as_str)
        .filter(|t| !is_keyword(t))
        .collect();
    AmssDescription::new(task, level, targets)
}

/// Counts derivations for every reachable end position while recording the
/// farthest point where a terminal was expected.
struct Recognizer<'a> {
    grammar: &'a Grammar,
    tokens: &'a [String],
    far_pos: usize,
    far_expected: BTreeSet<String>,
}

impl<'a> Recognizer<'a> {
    fn expect(&mut self, pos: usize, what: &str) {
        if pos > self.far_pos {
            self.far_pos = pos;
            self.far_expected.clear();
        }
        if pos == self.far_pos {
            self.far_expected.insert(what.to_string());
        }
    }

    fn symbol(&mut self, sym: &Symbol, pos: usize) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        match sym {
            Symbol::Terminal(w) => {
                if self.tokens.get(pos) == Some(w) {
                    out.insert(pos + 1, 1);
                } else {
                    self.expect(pos, w);
                }
            }
            Symbol::NonTerminal(n) => {
                let grammar = self.grammar;
                for p in &grammar.rules[n] {
                    let mut frontier: BTreeMap<usize, usize> = BTreeMap::from([(pos, 1)]);
                    for s in &p.symbols {
                        let mut next = BTreeMap::new();
                        for (&at, &count) in &frontier {
                            for (end, c) in self.symbol(s, at) {
                                *next.entry(end).or_insert(0) += count * c;
                            }
                        }
                        frontier = next;
                        if frontier.is_empty() {
                            break;
                        }
                    }
                    for (end, c) in frontier {
                        *out.entry(end).or_insert(0) += c;
                    }
                }
            }
        }
        out
    }

    fn error<S: AsRef<str>>(&self, sources: &[S]) -> AmlError {
        let got = self
            .tokens
            .get(self.far_pos)
            .cloned()
            .unwrap_or_else(|| END.to_string());
        let wants_source = self
            .far_expected
            .iter()
            .any(|e| sources.iter().any(|s| s.as_ref() == e));
        let is_source = sources.iter().any(|s| s.as_ref() == got);
        if wants_source && self.far_pos < self.tokens.len() && !is_keyword(&got) && !is_source {
            return AmlError::UnknownSource(got);
        }
        AmlError::SyntaxError {
            expected: self.far_expected.iter().cloned().collect(),
            got,
            position: self.far_pos + 1,
        }
    }
}
