//! Line-oriented reaction text format.
//!
//! ```text
//! # comment
//! X + Z -> 2 Y ; k = 4
//! 0 <-> X ; kf = 0.2, kr = 2
//! ```
//!
//! An optional first line `species: A, B, C` fixes the species order; otherwise
//! species are numbered in order of first appearance.

use std::fmt;

use thiserror::Error;

use super::{Complex, Network, Reaction};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Syntax(String),
    NonPositiveRate(f64),
    DuplicateSpecies(String),
    NullReaction,
    SymbolicRateNotAllowed,
    MisplacedSpeciesDirective,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Syntax(msg) => write!(f, "syntax error: {msg}"),
            Self::NonPositiveRate(v) => write!(f, "rate constant must be positive, got {v}"),
            Self::DuplicateSpecies(s) => {
                write!(f, "species `{s}` appears more than once in one complex")
            }
            Self::NullReaction => write!(f, "reactant and product complexes are identical"),
            Self::SymbolicRateNotAllowed => {
                write!(
                    f,
                    "symbolic rate expressions are only accepted in extension files"
                )
            }
            Self::MisplacedSpeciesDirective => {
                write!(f, "`species:` directive must precede all reactions")
            }
        }
    }
}

/// A rate constant as written: a plain number, or a product such as
/// `eps^-1 * eta^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateValue {
    Number(f64),
    Symbolic {
        coefficient: f64,
        eps_power: i32,
        eta_power: i32,
    },
}

impl RateValue {
    pub fn evaluate(&self, eps: f64, eta: f64) -> f64 {
        match *self {
            Self::Number(v) => v,
            Self::Symbolic {
                coefficient,
                eps_power,
                eta_power,
            } => coefficient * signed_power(eps, eps_power) * signed_power(eta, eta_power),
        }
    }
}

/// `base^p`, taking the reciprocal first for negative `p` so that e.g.
/// `0.2^-3` evaluates to exactly 125.
pub fn signed_power(base: f64, p: i32) -> f64 {
    if p < 0 {
        (1.0 / base).powi(-p)
    } else {
        base.powi(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateSpec {
    Missing,
    Irreversible(RateValue),
    Reversible(RateValue, RateValue),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReaction {
    pub reactant: Complex,
    pub product: Complex,
    pub reversible: bool,
    pub rates: RateSpec,
    /// 1-based source line.
    pub line: usize,
}

/// Reactions over a species table, before rate constants are required to be
/// numeric.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionList {
    pub species: Vec<String>,
    pub reactions: Vec<ParsedReaction>,
}

/// Parses a network file. Every reaction must carry numeric rate constants.
pub fn parse_network(text: &str) -> Result<Network, ParseError> {
    let list = Parser::new(text, &[], false).run()?;
    let mut reactions = Vec::with_capacity(list.reactions.len());
    for r in list.reactions {
        let (kf, kb) = match r.rates {
            RateSpec::Irreversible(RateValue::Number(k)) => (k, None),
            RateSpec::Reversible(RateValue::Number(kf), RateValue::Number(kr)) => (kf, Some(kr)),
            _ => unreachable!("strict mode only yields numeric rates"),
        };
        reactions.push(Reaction {
            reactant: r.reactant,
            product: r.product,
            k_forward: kf,
            k_backward: kb,
        });
    }
    Ok(Network::new(list.species, reactions).expect("parser enforces network invariants"))
}

/// Parses reactions whose species may extend `known`. Rate sections are
/// optional and may be symbolic in `eps` and `eta`.
pub fn parse_reaction_list(text: &str, known: &[String]) -> Result<ReactionList, ParseError> {
    Parser::new(text, known, true).run()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Plus,
    Arrow { reversible: bool },
    Semi,
    Comma,
    Equals,
    Caret,
    Star,
    Colon,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Number(s) => write!(f, "`{s}`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Arrow { reversible: true } => f.write_str("`<->`"),
            Tok::Arrow { reversible: false } => f.write_str("`->`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Equals => f.write_str("`=`"),
            Tok::Caret => f.write_str("`^`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Colon => f.write_str("`:`"),
        }
    }
}

fn lex(line: &str, line_no: usize) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |col: usize, msg: String| ParseError {
        line: line_no,
        column: col,
        kind: ParseErrorKind::Syntax(msg),
    };
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let starts_number = |j: usize| {
            chars.get(j).is_some_and(|d| d.is_ascii_digit())
                || (chars.get(j) == Some(&'.')
                    && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit()))
        };
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
        } else if starts_number(i) || (c == '-' && starts_number(i + 1)) {
            let start = i;
            if c == '-' {
                i += 1;
            }
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if chars.get(i) == Some(&'.') {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if matches!(chars.get(i), Some('e' | 'E')) {
                let sign = usize::from(matches!(chars.get(i + 1), Some('+' | '-')));
                if chars.get(i + 1 + sign).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1 + sign;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            out.push((Tok::Number(chars[start..i].iter().collect()), col));
        } else if c == '-' && chars.get(i + 1) == Some(&'>') {
            out.push((Tok::Arrow { reversible: false }, col));
            i += 2;
        } else if c == '<' && chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') {
            out.push((Tok::Arrow { reversible: true }, col));
            i += 3;
        } else {
            let tok = match c {
                '+' => Tok::Plus,
                ';' => Tok::Semi,
                ',' => Tok::Comma,
                '=' => Tok::Equals,
                '^' => Tok::Caret,
                '*' => Tok::Star,
                ':' => Tok::Colon,
                _ => return Err(err(col, format!("unexpected character `{c}`"))),
            };
            out.push((tok, col));
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    text: &'a str,
    species: Vec<String>,
    relaxed: bool,
}

/// Cursor over the tokens of one line.
struct Line {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line_no: usize,
    end_col: usize,
}

impl Line {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn error(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: self.line_no,
            column: self.col(),
            kind,
        }
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let found = match self.peek() {
            Some(t) => t.to_string(),
            None => "end of line".to_string(),
        };
        self.error(ParseErrorKind::Syntax(format!(
            "expected {wanted}, found {found}"
        )))
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unexpected(&format!("`{kw}`"))),
        }
    }
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, known: &[String], relaxed: bool) -> Self {
        Self {
            text,
            species: known.to_vec(),
            relaxed,
        }
    }

    fn run(mut self) -> Result<ReactionList, ParseError> {
        let mut reactions = Vec::new();
        for (k, raw) in self.text.lines().enumerate() {
            let line_no = k + 1;
            let toks = lex(raw, line_no)?;
            if toks.is_empty() {
                continue;
            }
            let mut line = Line {
                toks,
                pos: 0,
                line_no,
                end_col: raw.chars().count() + 1,
            };
            let is_directive = matches!(line.toks.first(), Some((Tok::Ident(s), _)) if s == "species")
                && matches!(line.toks.get(1), Some((Tok::Colon, _)));
            if is_directive {
                if !reactions.is_empty() {
                    return Err(line.error(ParseErrorKind::MisplacedSpeciesDirective));
                }
                self.species_directive(&mut line)?;
                continue;
            }
            reactions.push(self.reaction(&mut line)?);
        }
        Ok(ReactionList {
            species: self.species,
            reactions,
        })
    }

    fn species_directive(&mut self, line: &mut Line) -> Result<(), ParseError> {
        line.pos = 2;
        loop {
            match line.next() {
                Some(Tok::Ident(name)) => {
                    if self.species.contains(&name) {
                        line.pos -= 1;
                        return Err(line.error(ParseErrorKind::Syntax(format!(
                            "species `{name}` declared twice"
                        ))));
                    }
                    self.species.push(name);
                }
                _ => {
                    line.pos -= 1;
                    return Err(line.unexpected("species name"));
                }
            }
            match line.peek() {
                None => return Ok(()),
                Some(Tok::Comma) => line.pos += 1,
                Some(_) => return Err(line.unexpected("`,` or end of line")),
            }
        }
    }

    fn intern(&mut self, name: &str) -> usize {
        match self.species.iter().position(|s| s == name) {
            Some(i) => i,
            None => {
                self.species.push(name.to_string());
                self.species.len() - 1
            }
        }
    }

    fn reaction(&mut self, line: &mut Line) -> Result<ParsedReaction, ParseError> {
        let reactant = self.complex(line)?;
        let reversible = match line.next() {
            Some(Tok::Arrow { reversible }) => reversible,
            _ => {
                line.pos -= 1;
                return Err(line.unexpected("`->` or `<->`"));
            }
        };
        let product_col = line.col();
        let product = self.complex(line)?;
        if reactant == product {
            return Err(ParseError {
                line: line.line_no,
                column: product_col,
                kind: ParseErrorKind::NullReaction,
            });
        }
        let rates = match line.peek() {
            None if self.relaxed => RateSpec::Missing,
            Some(Tok::Semi) => {
                line.pos += 1;
                self.rates(line, reversible)?
            }
            _ => return Err(line.unexpected("`;`")),
        };
        if line.peek().is_some() {
            return Err(line.unexpected("end of line"));
        }
        Ok(ParsedReaction {
            reactant,
            product,
            reversible,
            rates,
            line: line.line_no,
        })
    }

    fn complex(&mut self, line: &mut Line) -> Result<Complex, ParseError> {
        if matches!(line.peek(), Some(Tok::Number(s)) if s == "0")
            && !matches!(line.toks.get(line.pos + 1), Some((Tok::Ident(_), _)))
        {
            line.pos += 1;
            return Ok(Complex::zero());
        }
        let mut terms: Vec<(usize, u32)> = Vec::new();
        loop {
            let coeff = match line.peek() {
                Some(Tok::Number(s)) => {
                    let c = s.parse::<u32>().ok().filter(|&c| c >= 1).ok_or_else(|| {
                        line.error(ParseErrorKind::Syntax(format!(
                            "stoichiometric coefficient must be a positive integer, got `{s}`"
                        )))
                    })?;
                    line.pos += 1;
                    c
                }
                _ => 1,
            };
            let col = line.col();
            let name = match line.next() {
                Some(Tok::Ident(name)) => name,
                _ => {
                    line.pos -= 1;
                    return Err(line.unexpected("species name"));
                }
            };
            let idx = self.intern(&name);
            if terms.iter().any(|t| t.0 == idx) {
                return Err(ParseError {
                    line: line.line_no,
                    column: col,
                    kind: ParseErrorKind::DuplicateSpecies(name),
                });
            }
            terms.push((idx, coeff));
            if line.peek() == Some(&Tok::Plus) {
                line.pos += 1;
            } else {
                break;
            }
        }
        Ok(Complex::from_terms(terms).expect("terms checked above"))
    }

    fn rates(&mut self, line: &mut Line, reversible: bool) -> Result<RateSpec, ParseError> {
        if reversible {
            line.expect_keyword("kf")?;
            line.expect(Tok::Equals, "`=`")?;
            let kf = self.rate_value(line)?;
            line.expect(Tok::Comma, "`,`")?;
            line.expect_keyword("kr")?;
            line.expect(Tok::Equals, "`=`")?;
            let kr = self.rate_value(line)?;
            Ok(RateSpec::Reversible(kf, kr))
        } else {
            line.expect_keyword("k")?;
            line.expect(Tok::Equals, "`=`")?;
            Ok(RateSpec::Irreversible(self.rate_value(line)?))
        }
    }

    fn rate_value(&mut self, line: &mut Line) -> Result<RateValue, ParseError> {
        let start = line.col();
        let mut coefficient = 1.0;
        let mut eps_power = 0;
        let mut eta_power = 0;
        let mut symbolic = false;
        loop {
            match line.next() {
                Some(Tok::Number(s)) => {
                    let v: f64 = s.parse().map_err(|_| {
                        line.pos -= 1;
                        line.error(ParseErrorKind::Syntax(format!("invalid number `{s}`")))
                    })?;
                    coefficient *= v;
                }
                Some(Tok::Ident(s)) if s == "eps" || s == "eta" => {
                    symbolic = true;
                    let mut power = 1;
                    if line.peek() == Some(&Tok::Caret) {
                        line.pos += 1;
                        power = match line.next() {
                            Some(Tok::Number(p)) => p.parse::<i32>().map_err(|_| {
                                line.pos -= 1;
                                line.error(ParseErrorKind::Syntax(format!(
                                    "exponent must be an integer, got `{p}`"
                                )))
                            })?,
                            _ => {
                                line.pos -= 1;
                                return Err(line.unexpected("integer exponent"));
                            }
                        };
                    }
                    if s == "eps" {
                        eps_power += power;
                    } else {
                        eta_power += power;
                    }
                }
                _ => {
                    line.pos -= 1;
                    return Err(line.unexpected("rate constant"));
                }
            }
            if line.peek() == Some(&Tok::Star) {
                line.pos += 1;
            } else {
                break;
            }
        }
        let at_start = |kind| ParseError {
            line: line.line_no,
            column: start,
            kind,
        };
        if symbolic && !self.relaxed {
            return Err(at_start(ParseErrorKind::SymbolicRateNotAllowed));
        }
        if !(coefficient.is_finite() && coefficient > 0.0) {
            return Err(at_start(ParseErrorKind::NonPositiveRate(coefficient)));
        }
        Ok(if symbolic {
            RateValue::Symbolic {
                coefficient,
                eps_power,
                eta_power,
            }
        } else {
            RateValue::Number(coefficient)
        })
    }
}
