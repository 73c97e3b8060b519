use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AmlError, Task, TaskClass};

/// A grammar symbol. In JSON, `"<name>"` is a non-terminal and anything else a terminal word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Symbol {
    Terminal(String),
    NonTerminal(String),
}

impl Symbol {
    pub fn t(word: &str) -> Symbol {
        Symbol::Terminal(word.to_string())
    }

    pub fn nt(name: &str) -> Symbol {
        Symbol::NonTerminal(name.to_string())
    }
}

impl From<String> for Symbol {
    fn from(s: String) -> Self {
        match s.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
            Some(name) if !name.is_empty() => Symbol::NonTerminal(name.to_string()),
            _ => Symbol::Terminal(s),
        }
    }
}

impl From<Symbol> for String {
    fn from(s: Symbol) -> Self {
        s.to_string()
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Terminal(w) => f.write_str(w),
            Symbol::NonTerminal(n) => write!(f, "<{n}>"),
        }
    }
}

fn unit_weight() -> f64 {
    1.0
}

/// One alternative on the right-hand side of a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Production {
    pub symbols: Vec<Symbol>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

impl Production {
    pub fn new(symbols: Vec<Symbol>) -> Self {
        Production {
            symbols,
            weight: 1.0,
        }
    }
}

/// Probabilistic context-free grammar over whitespace/comma separated words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub start: String,
    pub rules: BTreeMap<String, Vec<Production>>,
}

impl Grammar {
    /// Validates symbol references and weights.
    pub fn new(start: &str, rules: BTreeMap<String, Vec<Production>>) -> Result<Self, AmlError> {
        let g = Grammar {
            start: start.to_string(),
            rules,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self, AmlError> {
        let g: Grammar =
            serde_json::from_str(text).map_err(|e| AmlError::InvalidGrammar(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), AmlError> {
        if !self.rules.contains_key(&self.start) {
            return Err(AmlError::UndefinedSymbol(self.start.clone()));
        }
        for (name, alts) in &self.rules {
            if alts.is_empty() {
                return Err(AmlError::InvalidGrammar(format!("<{name}> has no alternatives")));
            }
            for p in alts {
                if !(p.weight.is_finite() && p.weight > 0.0) {
                    return Err(AmlError::InvalidGrammar(format!(
                        "<{name}> has a non-positive weight {}",
                        p.weight
                    )));
                }
                for s in &p.symbols {
                    if let Symbol::NonTerminal(n) = s {
                        if !self.rules.contains_key(n) {
                            return Err(AmlError::UndefinedSymbol(n.clone()));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Errors with the first recursive non-terminal reachable from `symbol`.
    pub fn check_finite_from(&self, symbol: &str) -> Result<(), AmlError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        fn visit<'a>(
            g: &'a Grammar,
            name: &'a str,
            marks: &mut BTreeMap<&'a str, Mark>,
        ) -> Result<(), AmlError> {
            match marks.get(name) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Active) => return Err(AmlError::GrammarNotFinite(name.to_string())),
                None => {}
            }
            marks.insert(name, Mark::Active);
            let alts = g
                .rules
                .get(name)
                .ok_or_else(|| AmlError::UndefinedSymbol(name.to_string()))?;
            for p in alts {
                for s in &p.symbols {
                    if let Symbol::NonTerminal(n) = s {
                        visit(g, n, marks)?;
                    }
                }
            }
            marks.insert(name, Mark::Done);
            Ok(())
        }
        visit(self, symbol, &mut BTreeMap::new())
    }

    pub fn is_finite(&self) -> bool {
        self.check_finite_from(&self.start).is_ok()
    }

    /// Every string derivable from the start symbol, sorted and duplicate-free.
    pub fn enumerate(&self) -> Result<Vec<String>, AmlError> {
        self.enumerate_from(&self.start)
    }

    /// Every string derivable from `symbol`, sorted and duplicate-free.
    pub fn enumerate_from(&self, symbol: &str) -> Result<Vec<String>, AmlError> {
        self.check_finite_from(symbol)?;
        let mut out: BTreeSet<String> = BTreeSet::new();
        for seq in self.expand(&Symbol::NonTerminal(symbol.to_string())) {
            out.insert(join_tokens(&seq));
        }
        Ok(out.into_iter().collect())
    }

    fn expand(&self, sym: &Symbol) -> Vec<Vec<String>> {
        match sym {
            Symbol::Terminal(w) => vec![vec![w.clone()]],
            Symbol::NonTerminal(n) => {
                let mut all = Vec::new();
                for p in &self.rules[n] {
                    let mut partial: Vec<Vec<String>> = vec![Vec::new()];
                    for s in &p.symbols {
                        let tails = self.expand(s);
                        partial = partial
                            .iter()
                            .flat_map(|head| {
                                tails.iter().map(move |tail| {
                                    let mut v = head.clone();
                                    v.extend(tail.iter().cloned());
                                    v
                                })
                            })
                            .collect();
                    }
                    all.extend(partial);
                }
                all
            }
        }
    }

    /// Derives one token sequence by repeatedly rewriting the leftmost
    /// non-terminal with a weighted random alternative.
    pub fn sample_tokens<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<String>, AmlError> {
        self.check_finite_from(&self.start)?;
        let mut out = Vec::new();
        self.sample_into(&self.start, rng, &mut out);
        Ok(out)
    }

    fn sample_into<R: Rng + ?Sized>(&self, name: &str, rng: &mut R, out: &mut Vec<String>) {
        let alts = &self.rules[name];
        let idx = if alts.len() == 1 {
            0
        } else {
            WeightedIndex::new(alts.iter().map(|p| p.weight))
                .expect("weights validated")
                .sample(rng)
        };
        for s in &alts[idx].symbols {
            match s {
                Symbol::Terminal(w) => out.push(w.clone()),
                Symbol::NonTerminal(n) => self.sample_into(n, rng, out),
            }
        }
    }

    /// All terminal words used anywhere in the grammar.
    pub fn terminals(&self) -> BTreeSet<String> {
        self.rules
            .values()
            .flatten()
            .flat_map(|p| p.symbols.iter())
            .filter_map(|s| match s {
                Symbol::Terminal(w) => Some(w.clone()),
                Symbol::NonTerminal(_) => None,
            })
            .collect()
    }

    /// The complete query language over `sources`.
    pub fn full<S: AsRef<str>>(sources: &[S]) -> Grammar {
        let mut b = Builder::new(sources);
        b.rule(
            "desc",
            &[&["<cls-vc>"], &["<cls-vcm>"], &["<cls-f>"], &["<cls-d>"]],
        );
        b.volume_class();
        b.pan_class();
        b.filter_class();
        b.delay_class();
        b.finish("desc")
    }

    /// The rules of a single task class; for the filter class these are
    /// exactly `desc -> cls-f -> apply <opt-filter> to <srcs>`.
    pub fn for_class<S: AsRef<str>>(class: TaskClass, sources: &[S]) -> Grammar {
        let mut b = Builder::new(sources);
        let top = match class {
            TaskClass::VolumeControl => {
                b.volume_class();
                "<cls-vc>"
            }
            TaskClass::VolumeControlMulti => {
                b.pan_class();
                "<cls-vcm>"
            }
            TaskClass::Filter => {
                b.filter_class();
                "<cls-f>"
            }
            TaskClass::Delay => {
                b.delay_class();
                "<cls-d>"
            }
        };
        b.rule("desc", &[&[top]]);
        b.finish("desc")
    }

    /// Subset of the language producing only queries for `task`.
    pub fn for_task<S: AsRef<str>>(task: Task, sources: &[S]) -> Grammar {
        let mut b = Builder::new(sources);
        match task {
            Task::Separate => b.rule("desc", &[&["separate", "<srcs>"]]),
            Task::Mute => b.rule("desc", &[&["mute", "<srcs>"]]),
            Task::IncreaseVol | Task::DecreaseVol => {
                let verb = if task == Task::IncreaseVol {
                    "increase"
                } else {
                    "decrease"
                };
                b.rule("desc", &[&[verb, "the", "<opt-volume>", "of", "<srcs>"]]);
                b.optioned("opt-volume", "volume");
            }
            Task::PanLeft | Task::PanRight => {
                let side = if task == Task::PanLeft { "left" } else { "right" };
                let nt = format!("opt-{side}");
                let nt_ref = format!("<{nt}>");
                b.rule("desc", &[&["pan", "<srcs>", "to", "the", nt_ref.as_str()]]);
                b.optioned(&nt, side);
            }
            Task::Lowpass | Task::Highpass => {
                let word = task.name();
                let nt = format!("opt-{word}");
                let nt_ref = format!("<{nt}>");
                b.rule("desc", &[&["apply", nt_ref.as_str(), "to", "<srcs>"]]);
                b.optioned(&nt, word);
            }
            Task::Dereverb => {
                b.rule("desc", &[&["remove", "<opt-reverb>", "from", "<srcs>"]]);
                b.optioned("opt-reverb", "reverb");
            }
        }
        b.finish("desc")
    }
}

/// Joins tokens with single spaces, attaching commas to the preceding word.
pub(crate) fn join_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        if !out.is_empty() && tok != "," {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

struct Builder {
    rules: BTreeMap<String, Vec<Production>>,
    sources: Vec<String>,
}

impl Builder {
    fn new<S: AsRef<str>>(sources: &[S]) -> Self {
        let mut b = Builder {
            rules: BTreeMap::new(),
            sources: sources.iter().map(|s| s.as_ref().to_string()).collect(),
        };
        b.rule("opt", &[&["light"], &["medium"], &["heavy"]]);
        b.sources_rule();
        b
    }

    fn rule(&mut self, name: &str, alts: &[&[&str]]) {
        let prods = alts
            .iter()
            .map(|alt| Production::new(alt.iter().map(|s| Symbol::from(s.to_string())).collect()))
            .collect();
        self.rules.insert(name.to_string(), prods);
    }

    /// `<name> -> <opt> word | word`
    fn optioned(&mut self, name: &str, word: &str) {
        self.rule(name, &[&["<opt>", word], &[word]]);
    }

    /// Every non-empty ordered sequence of distinct sources, comma separated.
    fn sources_rule(&mut self) {
        let n = self.sources.len();
        let mut seqs: Vec<Vec<usize>> = Vec::new();
        let mut stack: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        while let Some(seq) = stack.pop() {
            for j in 0..n {
                if !seq.contains(&j) {
                    let mut next = seq.clone();
                    next.push(j);
                    stack.push(next);
                }
            }
            seqs.push(seq);
        }
        seqs.sort();
        let prods = seqs
            .into_iter()
            .map(|seq| {
                let mut symbols = Vec::new();
                for (k, &i) in seq.iter().enumerate() {
                    if k > 0 {
                        symbols.push(Symbol::t(","));
                    }
                    symbols.push(Symbol::Terminal(self.sources[i].clone()));
                }
                Production::new(symbols)
            })
            .collect();
        self.rules.insert("srcs".into(), prods);
    }

    fn volume_class(&mut self) {
        self.rule(
            "cls-vc",
            &[
                &["separate", "<srcs>"],
                &["mute", "<srcs>"],
                &["<vol-dir>", "the", "<opt-volume>", "of", "<srcs>"],
            ],
        );
        self.rule("vol-dir", &[&["increase"], &["decrease"]]);
        self.optioned("opt-volume", "volume");
    }

    fn pan_class(&mut self) {
        self.rule("cls-vcm", &[&["pan", "<srcs>", "to", "the", "<opt-side>"]]);
        self.rule("opt-side", &[&["<opt>", "<side>"], &["<side>"]]);
        self.rule("side", &[&["left"], &["right"]]);
    }

    fn filter_class(&mut self) {
        self.rule("cls-f", &[&["apply", "<opt-filter>", "to", "<srcs>"]]);
        self.rule("opt-filter", &[&["<opt>", "<filter>"], &["<filter>"]]);
        self.rule("filter", &[&["lowpass"], &["highpass"]]);
    }

    fn delay_class(&mut self) {
        self.rule("cls-d", &[&["remove", "<opt-reverb>", "from", "<srcs>"]]);
        self.optioned("opt-reverb", "reverb");
    }

    fn finish(mut self, start: &str) -> Grammar {
        // Drop helper rules that the chosen start symbol never reaches.
        let mut reachable = BTreeSet::new();
        let mut todo = vec![start.to_string()];
        while let Some(n) = todo.pop() {
            if reachable.insert(n.clone()) {
                for p in &self.rules[&n] {
                    for s in &p.symbols {
                        if let Symbol::NonTerminal(m) = s {
                            todo.push(m.clone());
                        }
                    }
                }
            }
        }
        self.rules.retain(|k, _| reachable.contains(k));
        Grammar::new(start, self.rules).expect("built-in grammar is well formed")
    }
}
