//! Coarse-grained intensity observables and their outcome classes.
//!
//! Three-output observable `A`: `+1` on `{n_φ ≤ Nσ, n_⊥ > Nσ}`, `−1` on
//! `{n_φ > Nσ, n_⊥ ≤ Nσ}` (where `|Φ⟩` concentrates), `0` on the two
//! diagonal quadrants. Binary observable `Ā`: `+1` on `n_φ < Nσ`, `−1` on
//! `n_φ ≥ Nσ`. The loophole weight is the probability of the `0` class of `A`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::belltest::SingletContext;
use crate::error::{Error, Result};
use crate::preselect::GramSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObservableKind {
    /// Three outputs on both polarizations.
    #[serde(rename = "A")]
    ThreeOutput,
    /// Two outputs on the `φ` polarization only.
    #[serde(rename = "Abar")]
    Binary,
}

impl ObservableKind {
    pub const ALL: [ObservableKind; 2] = [ObservableKind::ThreeOutput, ObservableKind::Binary];

    pub fn label(self) -> &'static str {
        match self {
            ObservableKind::ThreeOutput => "A",
            ObservableKind::Binary => "Abar",
        }
    }
}

impl fmt::Display for ObservableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ObservableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "three" | "three_output" | "a_three_output" => Ok(ObservableKind::ThreeOutput),
            "abar" | "a_bar" | "binary" | "a_bar_binary" => Ok(ObservableKind::Binary),
            other => Err(Error::Usage(format!("unknown observable kind '{other}' (use A or Abar)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSpec {
    pub kind: ObservableKind,
    pub n_sigma: u64,
    pub theta: f64,
}

impl ObservableSpec {
    pub fn new(kind: ObservableKind, n_sigma: u64, theta: f64) -> Self {
        ObservableSpec { kind, n_sigma, theta }
    }

    pub fn at(self, theta: f64) -> Self {
        ObservableSpec { theta, ..self }
    }
}

/// Half-line of photon numbers, as `n < split` or `n ≥ split`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interval {
    Below(u64),
    AtLeast(u64),
    All,
}

impl Interval {
    pub fn contains(self, n: u64) -> bool {
        match self {
            Interval::Below(s) => n < s,
            Interval::AtLeast(s) => n >= s,
            Interval::All => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// `n_φ ≤ Nσ, n_⊥ > Nσ`
    PhiLowPerpHigh,
    /// `n_φ > Nσ, n_⊥ ≤ Nσ`
    PhiHighPerpLow,
    /// Both at most `Nσ` or both above it.
    Diagonal,
    /// `n_φ < Nσ`
    PhiBelow,
    /// `n_φ ≥ Nσ`
    PhiAtLeast,
}

impl Region {
    pub fn contains(self, n_sigma: u64, n_phi: u64, n_perp: u64) -> bool {
        match self {
            Region::PhiLowPerpHigh => n_phi <= n_sigma && n_perp > n_sigma,
            Region::PhiHighPerpLow => n_phi > n_sigma && n_perp <= n_sigma,
            Region::Diagonal => (n_phi <= n_sigma) == (n_perp <= n_sigma),
            Region::PhiBelow => n_phi < n_sigma,
            Region::PhiAtLeast => n_phi >= n_sigma,
        }
    }

    /// Disjoint rectangles `(n_φ interval, n_⊥ interval)` whose union is the region.
    pub fn rectangles(self, n_sigma: u64) -> Vec<(Interval, Interval)> {
        let s = n_sigma + 1;
        match self {
            Region::PhiLowPerpHigh => vec![(Interval::Below(s), Interval::AtLeast(s))],
            Region::PhiHighPerpLow => vec![(Interval::AtLeast(s), Interval::Below(s))],
            Region::Diagonal => vec![
                (Interval::Below(s), Interval::Below(s)),
                (Interval::AtLeast(s), Interval::AtLeast(s)),
            ],
            Region::PhiBelow => vec![(Interval::Below(n_sigma), Interval::All)],
            Region::PhiAtLeast => vec![(Interval::AtLeast(n_sigma), Interval::All)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeClass {
    pub eigenvalue: i8,
    pub region: Region,
}

/// Outcome classes ordered by eigenvalue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomePartition {
    pub kind: ObservableKind,
    pub n_sigma: u64,
    pub classes: Vec<OutcomeClass>,
}

impl OutcomePartition {
    pub fn class_index(&self, n_phi: u64, n_perp: u64) -> usize {
        self.classes
            .iter()
            .position(|c| c.region.contains(self.n_sigma, n_phi, n_perp))
            .expect("partition covers every cell")
    }

    pub fn eigenvalue(&self, n_phi: u64, n_perp: u64) -> i8 {
        self.classes[self.class_index(n_phi, n_perp)].eigenvalue
    }

    pub fn eigenvalues(&self) -> Vec<i8> {
        self.classes.iter().map(|c| c.eigenvalue).collect()
    }

    /// Index of the zero class, if the observable has one.
    pub fn zero_class(&self) -> Option<usize> {
        self.classes.iter().position(|c| c.eigenvalue == 0)
    }
}

pub fn partition(spec: &ObservableSpec) -> OutcomePartition {
    let classes = match spec.kind {
        ObservableKind::ThreeOutput => vec![
            OutcomeClass { eigenvalue: -1, region: Region::PhiHighPerpLow },
            OutcomeClass { eigenvalue: 0, region: Region::Diagonal },
            OutcomeClass { eigenvalue: 1, region: Region::PhiLowPerpHigh },
        ],
        ObservableKind::Binary => vec![
            OutcomeClass { eigenvalue: -1, region: Region::PhiAtLeast },
            OutcomeClass { eigenvalue: 1, region: Region::PhiBelow },
        ],
    };
    OutcomePartition { kind: spec.kind, n_sigma: spec.n_sigma, classes }
}

fn check_theta(gram: &GramSet, spec: &ObservableSpec) -> Result<()> {
    match gram.theta {
        Some(t) if t == spec.theta => Ok(()),
        Some(t) => Err(Error::Usage(format!("Gram set was built at θ = {t}, observable asks for θ = {}", spec.theta))),
        None => Err(Error::Usage("Gram set carries no measurement setting".into())),
    }
}

/// Outcome-class probabilities of one mode of the singlet, the other mode
/// measured with the identity. `gram` is mode A's Gram set at `spec`.
pub fn class_probabilities(
    gram: &GramSet,
    spec: &ObservableSpec,
    ctx: &SingletContext,
) -> Result<BTreeMap<i8, f64>> {
    check_theta(gram, spec)?;
    if gram.kind != Some(spec.kind) || gram.n_sigma != Some(spec.n_sigma) {
        return Err(Error::Usage("Gram set was built for a different observable".into()));
    }
    let other = ctx.identity_b();
    let norm = ctx.normalization()?;
    let mut out = BTreeMap::new();
    for c in &gram.classes {
        let v = crate::belltest::bilinear(&c.g, &other).re / norm;
        *out.entry(c.eigenvalue).or_insert(0.0) += v;
    }
    Ok(out)
}

/// Loophole weight at `θ = 0`: `(per mode, either mode)`.
///
/// The per-mode value is the zero-class probability of `A` on one mode; the
/// second is the probability that at least one of the two modes lands in
/// the zero class.
pub fn loophole(ctx: &SingletContext, n_sigma: u64) -> Result<(f64, f64)> {
    let spec = ObservableSpec::new(ObservableKind::ThreeOutput, n_sigma, 0.0);
    let joint = ctx.joint_class_probabilities(&spec, &spec)?;
    let mut per_mode = 0.0;
    let mut both_conclusive = 0.0;
    for (&(ea, eb), &p) in &joint {
        if ea == 0 {
            per_mode += p;
        }
        if ea != 0 && eb != 0 {
            both_conclusive += p;
        }
    }
    Ok((per_mode.clamp(0.0, 1.0), (1.0 - both_conclusive).clamp(0.0, 1.0)))
}
