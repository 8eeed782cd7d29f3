//! Grammar DSL parsing and compilation into weighted acceptor FSTs.
//!
//! The DSL is a small rule language. Rules are `name = expression ;`,
//! `#` starts a line comment, and expressions combine:
//!
//! - whitespace sequencing: `a b c`
//! - alternation with optional branch weights: `("a":2 | "b" | rule_ref)`
//! - grouping: `( ... )`
//! - optionality: `[ ... ]` or a `?` suffix
//! - quoted literals: `"word"`; surrounding brackets inside the quotes are
//!   cosmetic and are stripped, so `"[want]"` is the word `want`
//!
//! Lowercase identifiers refer to other rules of the grammar (the rule graph
//! must be acyclic; rules are inlined at compile time). ALL-CAPS identifiers
//! such as `DISH_NAME` are non-terminals backed by entity catalogs; they
//! compile either to an inlined catalog sub-FST or to a non-terminal arc for
//! later [`crate::wfst::WeightedFst::replace`].
//!
//! Within one alternation, explicit branch weights are normalized by their
//! sum; in a mixed alternation, unweighted branches each receive the mean of
//! the explicit weights before normalization, so fully unweighted alternations
//! stay uniform.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use indexmap::IndexMap;
use thiserror::Error;

use crate::wfst::{Label, StateId, WeightedFst};

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("syntax error at line {line}, column {col}: {reason}")]
    Syntax { line: usize, col: usize, reason: String },
    #[error("duplicate rule `{name}` at line {line}")]
    DuplicateRule { name: String, line: usize },
    #[error("unresolved rule reference `{0}`")]
    UnresolvedRule(String),
    #[error("cyclic rule reference through `{0}`")]
    CyclicRule(String),
    #[error("unknown root rule `{0}`")]
    UnknownRoot(String),
    #[error("no catalog for non-terminal `{0}`")]
    MissingCatalog(String),
    #[error("alternation weights sum to zero")]
    ZeroWeightAlternation,
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("catalog `{name}` line {line}: {reason}")]
    MalformedCatalogLine { name: String, line: usize, reason: String },
    #[error("catalog `{0}` has no positive-weight entry")]
    AllZeroCatalog(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Expression tree of one grammar rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Sequence(Vec<Expression>),
    /// Branches with optional explicit weights (nonnegative).
    Alternation(Vec<(Expression, Option<f64>)>),
    Optional(Box<Expression>),
    Literal(String),
    RuleRef(String),
    NonTerminalRef(String),
}

/// Parsed grammar: rule name to expression, in definition order.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarAst {
    rules: IndexMap<String, Expression>,
}

impl GrammarAst {
    pub fn rules(&self) -> impl Iterator<Item = (&str, &Expression)> {
        self.rules.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn rule(&self, name: &str) -> Option<&Expression> {
        self.rules.get(name)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Non-terminal (catalog) names referenced anywhere, in first-use order.
    pub fn non_terminal_refs(&self) -> Vec<String> {
        let mut out = Vec::new();
        fn walk(e: &Expression, out: &mut Vec<String>) {
            match e {
                Expression::Sequence(items) => items.iter().for_each(|i| walk(i, out)),
                Expression::Alternation(branches) => {
                    branches.iter().for_each(|(b, _)| walk(b, out))
                }
                Expression::Optional(inner) => walk(inner, out),
                Expression::NonTerminalRef(name) => {
                    if !out.contains(name) {
                        out.push(name.clone());
                    }
                }
                Expression::Literal(_) | Expression::RuleRef(_) => {}
            }
        }
        for (_, expr) in self.rules.iter() {
            walk(expr, &mut out);
        }
        out
    }
}

/// Weighted list of entity phrases backing one non-terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub name: String,
    pub entries: Vec<(Vec<String>, f64)>,
}

impl Catalog {
    pub fn new(name: impl Into<String>, entries: Vec<(Vec<String>, f64)>) -> Self {
        Self { name: name.into(), entries }
    }

    /// Reads the line-based catalog format: `phrase words[\tweight]`, weight
    /// defaulting to 1.0, blank lines ignored.
    pub fn read<R: BufRead>(name: impl Into<String>, reader: R) -> Result<Self, GrammarError> {
        let name = name.into();
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (phrase_part, weight) = match line.split_once('\t') {
                None => (line.as_str(), 1.0),
                Some((p, w)) => {
                    let weight: f64 = w.trim().parse().map_err(|_| {
                        GrammarError::MalformedCatalogLine {
                            name: name.clone(),
                            line: lineno,
                            reason: format!("bad weight `{}`", w.trim()),
                        }
                    })?;
                    if weight < 0.0 || !weight.is_finite() {
                        return Err(GrammarError::MalformedCatalogLine {
                            name: name.clone(),
                            line: lineno,
                            reason: format!("negative weight `{weight}`"),
                        });
                    }
                    (p, weight)
                }
            };
            let phrase: Vec<String> =
                phrase_part.split_whitespace().map(str::to_string).collect();
            if phrase.is_empty() {
                return Err(GrammarError::MalformedCatalogLine {
                    name: name.clone(),
                    line: lineno,
                    reason: "empty phrase".to_string(),
                });
            }
            entries.push((phrase, weight));
        }
        if entries.is_empty() {
            return Err(GrammarError::EmptyCatalog);
        }
        if entries.iter().all(|(_, w)| *w == 0.0) {
            return Err(GrammarError::AllZeroCatalog(name));
        }
        Ok(Self { name, entries })
    }

    /// Compiles to a normalized FST: path probabilities are entry weights
    /// divided by their sum, so the total path mass is 1.
    pub fn to_fst(&self) -> WeightedFst {
        let total: f64 = self.entries.iter().map(|(_, w)| w).sum();
        let mut fst = WeightedFst::new();
        let start = fst.add_state();
        fst.set_start(start);
        let end = fst.add_state();
        fst.set_final(end, 1.0);
        for (phrase, weight) in &self.entries {
            if *weight == 0.0 {
                continue;
            }
            let mut prev = start;
            for (i, word) in phrase.iter().enumerate() {
                let arc_weight = if i == 0 { weight / total } else { 1.0 };
                let next = if i + 1 == phrase.len() { end } else { fst.add_state() };
                fst.add_arc(prev, Label::word(word.clone()), arc_weight, next);
                prev = next;
            }
        }
        fst
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Literal(String),
    Number(f64),
    Equals,
    Semi,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Pipe,
    Question,
    Colon,
}

#[derive(Debug, Clone)]
struct SpannedTok {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Self { chars: text.chars().peekable(), line: 1, col: 1 }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }
}

fn lex(text: &str) -> Result<Vec<SpannedTok>, GrammarError> {
    let mut lx = Lexer::new(text);
    let mut toks = Vec::new();
    while let Some(c) = lx.peek() {
        let (line, col) = (lx.line, lx.col);
        match c {
            c if c.is_whitespace() => {
                lx.bump();
            }
            '#' => {
                while let Some(c) = lx.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            }
            '"' => {
                lx.bump();
                let mut content = String::new();
                let mut closed = false;
                while let Some(c) = lx.bump() {
                    if c == '"' {
                        closed = true;
                        break;
                    }
                    content.push(c);
                }
                if !closed {
                    return Err(GrammarError::Syntax {
                        line,
                        col,
                        reason: "unterminated string literal".to_string(),
                    });
                }
                // `"[want]"` and `"want"` both denote the word `want`.
                let content = content.trim();
                let content = content.strip_prefix('[').unwrap_or(content);
                let content = content.strip_suffix(']').unwrap_or(content);
                let content = content.trim();
                if content.is_empty() {
                    return Err(GrammarError::Syntax {
                        line,
                        col,
                        reason: "empty string literal".to_string(),
                    });
                }
                toks.push(SpannedTok { tok: Tok::Literal(content.to_string()), line, col });
            }
            '=' | ';' | '(' | ')' | '[' | ']' | '|' | '?' | ':' => {
                lx.bump();
                let tok = match c {
                    '=' => Tok::Equals,
                    ';' => Tok::Semi,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    '|' => Tok::Pipe,
                    '?' => Tok::Question,
                    _ => Tok::Colon,
                };
                toks.push(SpannedTok { tok, line, col });
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut num = String::new();
                while let Some(c) = lx.peek() {
                    if c.is_ascii_digit()
                        || c == '.'
                        || c == 'e'
                        || c == 'E'
                        || (c == '-' && (num.ends_with('e') || num.ends_with('E')))
                    {
                        num.push(c);
                        lx.bump();
                    } else {
                        break;
                    }
                }
                let value: f64 = num.parse().map_err(|_| GrammarError::Syntax {
                    line,
                    col,
                    reason: format!("bad number `{num}`"),
                })?;
                toks.push(SpannedTok { tok: Tok::Number(value), line, col });
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut ident = String::new();
                while let Some(c) = lx.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        ident.push(c);
                        lx.bump();
                    } else {
                        break;
                    }
                }
                toks.push(SpannedTok { tok: Tok::Ident(ident), line, col });
            }
            other => {
                return Err(GrammarError::Syntax {
                    line,
                    col,
                    reason: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<SpannedTok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn span(&self) -> (usize, usize) {
        if self.toks.is_empty() {
            return (1, 1);
        }
        let idx = self.pos.min(self.toks.len() - 1);
        (self.toks[idx].line, self.toks[idx].col)
    }

    fn error(&self, reason: impl Into<String>) -> GrammarError {
        let (line, col) = self.span();
        GrammarError::Syntax { line, col, reason: reason.into() }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), GrammarError> {
        match self.peek() {
            Some(t) if t == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }

    fn parse_grammar(&mut self) -> Result<GrammarAst, GrammarError> {
        let mut rules: IndexMap<String, Expression> = IndexMap::new();
        while self.peek().is_some() {
            let (line, _) = self.span();
            let name = match self.next() {
                Some(Tok::Ident(name)) => name,
                _ => {
                    self.pos = self.pos.saturating_sub(1);
                    return Err(self.error("expected rule name"));
                }
            };
            self.expect(&Tok::Equals, "`=` after rule name")?;
            let expr = self.parse_alternation()?;
            self.expect(&Tok::Semi, "`;` terminating rule definition")?;
            if rules.contains_key(&name) {
                return Err(GrammarError::DuplicateRule { name, line });
            }
            rules.insert(name, expr);
        }
        Ok(GrammarAst { rules })
    }

    fn parse_alternation(&mut self) -> Result<Expression, GrammarError> {
        let mut branches = vec![self.parse_branch()?];
        while matches!(self.peek(), Some(Tok::Pipe)) {
            self.pos += 1;
            branches.push(self.parse_branch()?);
        }
        if branches.len() == 1 && branches[0].1.is_none() {
            Ok(branches.pop().unwrap().0)
        } else {
            Ok(Expression::Alternation(branches))
        }
    }

    fn parse_branch(&mut self) -> Result<(Expression, Option<f64>), GrammarError> {
        let expr = self.parse_sequence()?;
        let weight = if matches!(self.peek(), Some(Tok::Colon)) {
            self.pos += 1;
            match self.next() {
                Some(Tok::Number(w)) => Some(w),
                _ => {
                    self.pos = self.pos.saturating_sub(1);
                    return Err(self.error("expected weight after `:`"));
                }
            }
        } else {
            None
        };
        Ok((expr, weight))
    }

    fn parse_sequence(&mut self) -> Result<Expression, GrammarError> {
        let mut items = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Literal(_)) | Some(Tok::Ident(_)) | Some(Tok::LParen)
                | Some(Tok::LBracket) => {
                    items.push(self.parse_postfix()?);
                }
                _ => break,
            }
        }
        match items.len() {
            0 => Err(self.error("expected expression")),
            1 => Ok(items.pop().unwrap()),
            _ => Ok(Expression::Sequence(items)),
        }
    }

    fn parse_postfix(&mut self) -> Result<Expression, GrammarError> {
        let mut expr = self.parse_atom()?;
        while matches!(self.peek(), Some(Tok::Question)) {
            self.pos += 1;
            expr = Expression::Optional(Box::new(expr));
        }
        Ok(expr)
    }

    fn parse_atom(&mut self) -> Result<Expression, GrammarError> {
        match self.next() {
            Some(Tok::Literal(content)) => {
                // A quoted multi-word phrase is a sequence of word literals.
                let words: Vec<&str> = content.split_whitespace().collect();
                if words.len() == 1 {
                    Ok(Expression::Literal(words[0].to_string()))
                } else {
                    Ok(Expression::Sequence(
                        words.into_iter().map(|w| Expression::Literal(w.to_string())).collect(),
                    ))
                }
            }
            Some(Tok::Ident(name)) => {
                if is_non_terminal_name(&name) {
                    Ok(Expression::NonTerminalRef(name))
                } else {
                    Ok(Expression::RuleRef(name))
                }
            }
            Some(Tok::LParen) => {
                let expr = self.parse_alternation()?;
                self.expect(&Tok::RParen, "closing `)`")?;
                Ok(expr)
            }
            Some(Tok::LBracket) => {
                let expr = self.parse_alternation()?;
                self.expect(&Tok::RBracket, "closing `]`")?;
                Ok(Expression::Optional(Box::new(expr)))
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.error("expected literal, identifier, `(`, or `[`"))
            }
        }
    }
}

/// ALL-CAPS identifiers name catalog-backed non-terminals; anything else
/// refers to a rule of the grammar.
fn is_non_terminal_name(name: &str) -> bool {
    name.chars().any(|c| c.is_ascii_uppercase())
        && !name.chars().any(|c| c.is_ascii_lowercase())
}

/// Parses DSL text into an AST, checking that weights are nonnegative, rule
/// references resolve, and the rule graph is acyclic.
pub fn parse_grammar(text: &str) -> Result<GrammarAst, GrammarError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    let ast = parser.parse_grammar()?;
    validate_weights(&ast)?;
    validate_references(&ast)?;
    Ok(ast)
}

fn validate_weights(ast: &GrammarAst) -> Result<(), GrammarError> {
    fn walk(e: &Expression) -> bool {
        match e {
            Expression::Sequence(items) => items.iter().all(walk),
            Expression::Alternation(branches) => branches
                .iter()
                .all(|(b, w)| w.map_or(true, |w| w >= 0.0 && w.is_finite()) && walk(b)),
            Expression::Optional(inner) => walk(inner),
            _ => true,
        }
    }
    for (_, expr) in ast.rules() {
        if !walk(expr) {
            return Err(GrammarError::ZeroWeightAlternation);
        }
    }
    Ok(())
}

fn validate_references(ast: &GrammarAst) -> Result<(), GrammarError> {
    fn rule_refs(e: &Expression, out: &mut Vec<String>) {
        match e {
            Expression::Sequence(items) => items.iter().for_each(|i| rule_refs(i, out)),
            Expression::Alternation(branches) => {
                branches.iter().for_each(|(b, _)| rule_refs(b, out))
            }
            Expression::Optional(inner) => rule_refs(inner, out),
            Expression::RuleRef(name) => out.push(name.clone()),
            Expression::Literal(_) | Expression::NonTerminalRef(_) => {}
        }
    }
    let mut graph: IndexMap<String, Vec<String>> = IndexMap::new();
    for (name, expr) in ast.rules() {
        let mut refs = Vec::new();
        rule_refs(expr, &mut refs);
        for r in &refs {
            if ast.rule(r).is_none() {
                return Err(GrammarError::UnresolvedRule(r.clone()));
            }
        }
        graph.insert(name.to_string(), refs);
    }
    // Iterative DFS three-color cycle check over the rule graph.
    const WHITE: u8 = 0;
    const GRAY: u8 = 1;
    const BLACK: u8 = 2;
    let mut marks: HashMap<&str, u8> = graph.keys().map(|k| (k.as_str(), WHITE)).collect();
    for root in graph.keys() {
        if marks[root.as_str()] != WHITE {
            continue;
        }
        let mut stack: Vec<(&str, usize)> = vec![(root.as_str(), 0)];
        marks.insert(root.as_str(), GRAY);
        while let Some((node, child_idx)) = stack.pop() {
            let children = &graph[node];
            if child_idx < children.len() {
                stack.push((node, child_idx + 1));
                let child = children[child_idx].as_str();
                let child_key = graph.get_key_value(child).map(|(k, _)| k.as_str()).unwrap();
                match marks[child_key] {
                    GRAY => return Err(GrammarError::CyclicRule(child.to_string())),
                    WHITE => {
                        marks.insert(child_key, GRAY);
                        stack.push((child_key, 0));
                    }
                    _ => {}
                }
            } else {
                marks.insert(node, BLACK);
            }
        }
    }
    Ok(())
}

/// How the compiler treats catalog-backed non-terminals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonTerminalMode {
    /// Inline each catalog as a sub-FST at the reference site; every
    /// referenced non-terminal must have a catalog.
    Inline,
    /// Emit a non-terminal arc per reference, to be expanded later with
    /// [`crate::wfst::WeightedFst::replace`].
    KeepArcs,
}

#[derive(Debug, Clone)]
pub struct CompileOptions {
    pub mode: NonTerminalMode,
    /// Probability of taking an optional element; the skip branch gets the
    /// complement.
    pub optional_prob: f64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self { mode: NonTerminalMode::KeepArcs, optional_prob: 0.5 }
    }
}

/// Compiles `root` (with rule references inlined) into a weighted acceptor.
///
/// Arc weights are branch probabilities normalized per alternation; complete
/// path weights multiply them, so a grammar of uniform alternations produces
/// equal-weight paths.
pub fn compile(
    ast: &GrammarAst,
    root: &str,
    catalogs: &HashMap<String, Catalog>,
    options: &CompileOptions,
) -> Result<WeightedFst, GrammarError> {
    let root_expr = ast.rule(root).ok_or_else(|| GrammarError::UnknownRoot(root.to_string()))?;
    if options.mode == NonTerminalMode::Inline {
        let mut missing: HashSet<String> = HashSet::new();
        for nt in ast.non_terminal_refs() {
            if !catalogs.contains_key(&nt) {
                missing.insert(nt);
            }
        }
        if let Some(name) = missing.into_iter().min() {
            return Err(GrammarError::MissingCatalog(name));
        }
    }
    let mut fst = WeightedFst::new();
    let start = fst.add_state();
    fst.set_start(start);
    let compiler = Compiler { ast, catalogs, options };
    let end = compiler.emit(root_expr, &mut fst, start)?;
    fst.set_final(end, 1.0);
    Ok(fst)
}

struct Compiler<'a> {
    ast: &'a GrammarAst,
    catalogs: &'a HashMap<String, Catalog>,
    options: &'a CompileOptions,
}

impl Compiler<'_> {
    /// Adds states/arcs realizing `expr` from `entry`; returns the exit state.
    fn emit(
        &self,
        expr: &Expression,
        fst: &mut WeightedFst,
        entry: StateId,
    ) -> Result<StateId, GrammarError> {
        match expr {
            Expression::Literal(word) => {
                let next = fst.add_state();
                fst.add_arc(entry, Label::word(word.clone()), 1.0, next);
                Ok(next)
            }
            Expression::Sequence(items) => {
                let mut state = entry;
                for item in items {
                    state = self.emit(item, fst, state)?;
                }
                Ok(state)
            }
            Expression::Alternation(branches) => {
                let probs = normalize_branch_weights(branches)?;
                let join = fst.add_state();
                for ((branch, _), prob) in branches.iter().zip(probs) {
                    let head = fst.add_state();
                    fst.add_arc(entry, Label::Epsilon, prob, head);
                    let exit = self.emit(branch, fst, head)?;
                    fst.add_arc(exit, Label::Epsilon, 1.0, join);
                }
                Ok(join)
            }
            Expression::Optional(inner) => {
                let join = fst.add_state();
                let head = fst.add_state();
                fst.add_arc(entry, Label::Epsilon, self.options.optional_prob, head);
                let exit = self.emit(inner, fst, head)?;
                fst.add_arc(exit, Label::Epsilon, 1.0, join);
                fst.add_arc(entry, Label::Epsilon, 1.0 - self.options.optional_prob, join);
                Ok(join)
            }
            Expression::RuleRef(name) => {
                // Rule graph is acyclic by construction, so inlining terminates.
                let target = self
                    .ast
                    .rule(name)
                    .ok_or_else(|| GrammarError::UnresolvedRule(name.clone()))?;
                self.emit(target, fst, entry)
            }
            Expression::NonTerminalRef(name) => match self.options.mode {
                NonTerminalMode::KeepArcs => {
                    let next = fst.add_state();
                    fst.add_arc(entry, Label::non_terminal(name.clone()), 1.0, next);
                    Ok(next)
                }
                NonTerminalMode::Inline => {
                    let catalog = self
                        .catalogs
                        .get(name)
                        .ok_or_else(|| GrammarError::MissingCatalog(name.clone()))?;
                    let sub = catalog.to_fst();
                    let join = fst.add_state();
                    let offset = fst.num_states();
                    for _ in 0..sub.num_states() {
                        fst.add_state();
                    }
                    fst.add_arc(entry, Label::Epsilon, 1.0, offset + sub.start().unwrap());
                    for s in 0..sub.num_states() {
                        for arc in sub.arcs(s) {
                            fst.add_arc(
                                offset + s,
                                arc.label.clone(),
                                arc.weight,
                                offset + arc.next,
                            );
                        }
                        let fw = sub.final_weight(s);
                        if fw > 0.0 {
                            fst.add_arc(offset + s, Label::Epsilon, fw, join);
                        }
                    }
                    Ok(join)
                }
            },
        }
    }
}

/// Branch probabilities of one alternation after weight normalization.
fn normalize_branch_weights(
    branches: &[(Expression, Option<f64>)],
) -> Result<Vec<f64>, GrammarError> {
    let explicit: Vec<f64> = branches.iter().filter_map(|(_, w)| *w).collect();
    let weights: Vec<f64> = if explicit.is_empty() {
        vec![1.0; branches.len()]
    } else {
        let mean = explicit.iter().sum::<f64>() / explicit.len() as f64;
        branches.iter().map(|(_, w)| w.unwrap_or(mean)).collect()
    };
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(GrammarError::ZeroWeightAlternation);
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Compiled catalog FSTs for [`crate::wfst::WeightedFst::replace`] bindings.
pub fn catalog_bindings(catalogs: &HashMap<String, Catalog>) -> HashMap<String, WeightedFst> {
    catalogs.iter().map(|(name, c)| (name.clone(), c.to_fst())).collect()
}
