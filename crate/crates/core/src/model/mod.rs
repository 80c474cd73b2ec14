//! Species, complexes, reactions and networks.
//!
//! A [`Network`] is immutable once built. Its stoichiometric matrix is computed
//! at construction time, one column per reaction; a reversible reaction
//! contributes a single column in its forward orientation.

mod parse;

use std::fmt;

pub use parse::{
    parse_network, parse_reaction_list, signed_power, ParseError, ParseErrorKind, ParsedReaction,
    RateSpec, RateValue, ReactionList,
};

use nalgebra::DMatrix;
use thiserror::Error;

/// Errors raised when assembling a network from already-tokenised parts.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid species name `{0}`")]
    InvalidSpeciesName(String),
    #[error("species `{0}` declared twice")]
    DuplicateSpecies(String),
    #[error("reaction {reaction} refers to species index {index}, but only {count} species exist")]
    UnknownSpecies {
        reaction: usize,
        index: usize,
        count: usize,
    },
    #[error("reaction {0} has a nonpositive or non-finite rate constant")]
    NonPositiveRate(usize),
    #[error("reaction {0} has identical reactant and product complexes")]
    NullReaction(usize),
    #[error("species index {index} appears twice in one complex")]
    RepeatedTerm { index: usize },
    #[error("zero stoichiometric coefficient for species index {index}")]
    ZeroCoefficient { index: usize },
}

/// A species together with its position in the owning network.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpeciesId {
    pub index: usize,
    pub name: String,
}

/// Returns true if `name` matches `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_valid_species_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A formal nonnegative integer combination of species. Zero coefficients are
/// never stored; the empty complex is the zero complex `0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Complex {
    terms: Vec<(usize, u32)>,
}

impl Complex {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// Builds a complex from `(species index, coefficient)` pairs.
    pub fn from_terms<I: IntoIterator<Item = (usize, u32)>>(terms: I) -> Result<Self, ModelError> {
        let mut terms: Vec<(usize, u32)> = terms.into_iter().collect();
        terms.sort_unstable_by_key(|t| t.0);
        for pair in terms.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(ModelError::RepeatedTerm { index: pair[0].0 });
            }
        }
        if let Some(&(index, _)) = terms.iter().find(|t| t.1 == 0) {
            return Err(ModelError::ZeroCoefficient { index });
        }
        Ok(Self { terms })
    }

    /// Builds a complex from a dense coefficient vector, dropping zeros.
    pub fn from_dense(coefficients: &[u32]) -> Self {
        Self {
            terms: coefficients
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (i, c))
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, species: usize) -> u32 {
        self.terms
            .binary_search_by_key(&species, |t| t.0)
            .map(|i| self.terms[i].1)
            .unwrap_or(0)
    }

    /// Sparse terms sorted by species index.
    pub fn terms(&self) -> &[(usize, u32)] {
        &self.terms
    }

    pub fn dense(&self, n: usize) -> Vec<u32> {
        let mut out = vec![0; n];
        for &(i, c) in &self.terms {
            out[i] = c;
        }
        out
    }

    /// Evaluates the monomial `x^c`. Uses the empty-product convention, so the
    /// zero complex gives 1 and `0^0 = 1`.
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(i, c)| x[i].powi(c as i32))
            .product()
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.last().map(|t| t.0)
    }
}

/// A mass-action reaction. `k_backward` is present exactly when the reaction
/// is reversible.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub reactant: Complex,
    pub product: Complex,
    pub k_forward: f64,
    pub k_backward: Option<f64>,
}

impl Reaction {
    pub fn irreversible(reactant: Complex, product: Complex, k: f64) -> Self {
        Self {
            reactant,
            product,
            k_forward: k,
            k_backward: None,
        }
    }

    pub fn reversible(reactant: Complex, product: Complex, kf: f64, kr: f64) -> Self {
        Self {
            reactant,
            product,
            k_forward: kf,
            k_backward: Some(kr),
        }
    }

    pub fn is_reversible(&self) -> bool {
        self.k_backward.is_some()
    }

    /// Net change of species `i` (product minus reactant coefficient).
    pub fn net_change(&self, i: usize) -> i64 {
        self.product.coefficient(i) as i64 - self.reactant.coefficient(i) as i64
    }
}

/// Dense row-major integer matrix. Used for stoichiometric data, which is
/// integral by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: i64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<i64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) as f64)
    }
}

impl fmt::Display for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:>3}")).collect();
            writeln!(f, "[{}]", row.join(" "))?;
        }
        Ok(())
    }
}

/// An ordered list of species with an ordered list of reactions among them.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    species: Vec<SpeciesId>,
    reactions: Vec<Reaction>,
    stoich: IntMatrix,
}

impl Network {
    pub fn new(species: Vec<String>, reactions: Vec<Reaction>) -> Result<Self, ModelError> {
        for (i, name) in species.iter().enumerate() {
            if !is_valid_species_name(name) {
                return Err(ModelError::InvalidSpeciesName(name.clone()));
            }
            if species[..i].contains(name) {
                return Err(ModelError::DuplicateSpecies(name.clone()));
            }
        }
        let n = species.len();
        for (j, r) in reactions.iter().enumerate() {
            for c in [&r.reactant, &r.product] {
                if let Some(index) = c.max_index().filter(|&i| i >= n) {
                    return Err(ModelError::UnknownSpecies {
                        reaction: j,
                        index,
                        count: n,
                    });
                }
            }
            let rate_ok = |k: f64| k.is_finite() && k > 0.0;
            if !rate_ok(r.k_forward) || r.k_backward.is_some_and(|k| !rate_ok(k)) {
                return Err(ModelError::NonPositiveRate(j));
            }
            if r.reactant == r.product {
                return Err(ModelError::NullReaction(j));
            }
        }
        let mut stoich = IntMatrix::zeros(n, reactions.len());
        for (j, r) in reactions.iter().enumerate() {
            for &(i, c) in r.product.terms() {
                stoich.set(i, j, stoich.get(i, j) + c as i64);
            }
            for &(i, c) in r.reactant.terms() {
                stoich.set(i, j, stoich.get(i, j) - c as i64);
            }
        }
        let species = species
            .into_iter()
            .enumerate()
            .map(|(index, name)| SpeciesId { index, name })
            .collect();
        Ok(Self {
            species,
            reactions,
            stoich,
        })
    }

    pub fn empty() -> Self {
        Self {
            species: Vec::new(),
            reactions: Vec::new(),
            stoich: IntMatrix::zeros(0, 0),
        }
    }

    pub fn species(&self) -> &[SpeciesId] {
        &self.species
    }

    pub fn species_names(&self) -> Vec<String> {
        self.species.iter().map(|s| s.name.clone()).collect()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn num_species(&self) -> usize {
        self.species.len()
    }

    pub fn num_reactions(&self) -> usize {
        self.reactions.len()
    }

    /// The stoichiometric matrix: column `j` is product minus reactant of
    /// reaction `j`.
    pub fn stoichiometric_matrix(&self) -> &IntMatrix {
        &self.stoich
    }

    /// Text form of a single reaction, e.g. `X + Z -> 2 Y ; k = 4`.
    pub fn format_reaction(&self, r: &Reaction) -> String {
        let lhs = self.format_complex(&r.reactant);
        let rhs = self.format_complex(&r.product);
        match r.k_backward {
            None => format!("{lhs} -> {rhs} ; k = {}", format_number(r.k_forward)),
            Some(kr) => format!(
                "{lhs} <-> {rhs} ; kf = {}, kr = {}",
                format_number(r.k_forward),
                format_number(kr)
            ),
        }
    }

    pub fn format_complex(&self, c: &Complex) -> String {
        if c.is_zero() {
            return "0".to_string();
        }
        c.terms()
            .iter()
            .map(|&(i, k)| {
                let name = &self.species[i].name;
                if k == 1 {
                    name.clone()
                } else {
                    format!("{k} {name}")
                }
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }

    /// Species order implied by scanning the reactions left to right.
    fn appearance_order(&self) -> Vec<usize> {
        let mut seen = vec![false; self.species.len()];
        let mut order = Vec::new();
        for r in &self.reactions {
            for &(i, _) in r.reactant.terms().iter().chain(r.product.terms()) {
                if !seen[i] {
                    seen[i] = true;
                    order.push(i);
                }
            }
        }
        order
    }
}

/// Shortest decimal that round-trips, switching to exponent form for very
/// large or small magnitudes.
pub fn format_number(v: f64) -> String {
    let plain = format!("{v}");
    if plain.len() > 24 {
        format!("{v:e}")
    } else {
        plain
    }
}

/// Writes a network in the line-oriented text format. A leading
/// `species:` directive is emitted only when the reaction lines alone would
/// not reproduce the species order.
pub fn serialize_network(net: &Network) -> String {
    let mut lines = Vec::with_capacity(net.reactions.len() + 1);
    let natural: Vec<usize> = (0..net.species.len()).collect();
    if net.appearance_order() != natural {
        lines.push(format!("species: {}", net.species_names().join(", ")));
    }
    lines.extend(net.reactions.iter().map(|r| net.format_reaction(r)));
    lines.join("\n")
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_network(self))
    }
}
