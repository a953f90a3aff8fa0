//! Lie brackets of polynomial fields, bracket spans and the flag of a
//! distribution at a point.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{VectorField, VectorFieldSystem};
use crate::rng::substream;

/// Letters index the fields, `0` being the drift.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BracketWord {
    pub letters: Vec<usize>,
}

impl BracketWord {
    pub fn new(letters: Vec<usize>) -> Self {
        Self { letters }
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    fn prepend(&self, letter: usize) -> Self {
        let mut letters = Vec::with_capacity(self.len() + 1);
        letters.push(letter);
        letters.extend_from_slice(&self.letters);
        Self { letters }
    }
}

impl fmt::Display for BracketWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.letters.iter().map(|l| l.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Which words are admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BracketMode {
    /// First letter in `{0..d}`, the rest in `{1..d}`.
    #[default]
    Weak,
    /// All letters in `{1..d}`.
    Strong,
}

impl std::str::FromStr for BracketMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(BracketMode::Weak),
            "strong" => Ok(BracketMode::Strong),
            other => Err(Error::domain(format!(
                "unknown bracket mode '{other}' (weak|strong)"
            ))),
        }
    }
}

/// `[V, W] = DW V - DV W`.
pub fn lie_bracket(v: &VectorField, w: &VectorField) -> Result<VectorField> {
    v.bracket(w)
}

/// A bracket field together with the word that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketField {
    pub word: BracketWord,
    pub field: VectorField,
}

pub const DEFAULT_WORD_CAP: usize = 100_000;

type FieldKey = Vec<(usize, Vec<u32>, u64)>;

fn field_key(v: &VectorField) -> FieldKey {
    v.components()
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            p.monomials()
                .into_iter()
                .map(move |m| (i, m.exps, m.coeff.to_bits()))
        })
        .collect()
}

/// Keeps the first occurrence of each field up to sign; zero fields are dropped.
struct Dedup {
    seen: HashSet<FieldKey>,
}

impl Dedup {
    fn new() -> Self {
        Self {
            seen: HashSet::new(),
        }
    }

    fn insert(&mut self, v: &VectorField) -> bool {
        if v.is_zero() {
            return false;
        }
        let key = field_key(v);
        if self.seen.contains(&key) || self.seen.contains(&field_key(&v.scale(-1.0))) {
            return false;
        }
        self.seen.insert(key);
        true
    }
}

fn letter_field(sys: &VectorFieldSystem, letter: usize) -> &VectorField {
    if letter == 0 {
        sys.drift
            .as_ref()
            .expect("drift letter only used when a drift exists")
    } else {
        &sys.fields[letter - 1]
    }
}

/// Brackets `[V_l, W]` for every letter and every `W`, in word order.
fn extend_level(
    sys: &VectorFieldSystem,
    letters: &[usize],
    prev: &[BracketField],
) -> Result<Vec<BracketField>> {
    let pairs: Vec<(usize, &BracketField)> = letters
        .iter()
        .flat_map(|&l| prev.iter().map(move |w| (l, w)))
        .collect();
    pairs
        .into_par_iter()
        .map(|(l, w)| {
            Ok(BracketField {
                word: w.word.prepend(l),
                field: lie_bracket(letter_field(sys, l), &w.field)?,
            })
        })
        .collect()
}

/// Bracket fields grouped by word length `1..=n_max`, duplicates removed.
pub fn bracket_levels(
    sys: &VectorFieldSystem,
    n_max: usize,
    mode: BracketMode,
    cap: usize,
) -> Result<Vec<Vec<BracketField>>> {
    if n_max == 0 {
        return Err(Error::Precondition(
            "the bracket level cap must be at least 1".into(),
        ));
    }
    let diffusion: Vec<usize> = (1..=sys.d).collect();
    let with_drift = mode == BracketMode::Weak && sys.drift.is_some();
    // strong levels feed the recursion; they are deduplicated among themselves
    let mut strong_seen = Dedup::new();
    let mut all_seen = Dedup::new();
    let mut strong_prev: Vec<BracketField> = Vec::new();
    let mut levels = Vec::with_capacity(n_max);
    let mut count = 0usize;
    for k in 1..=n_max {
        let (strong_new, drift_new) = if k == 1 {
            let strong = diffusion
                .iter()
                .map(|&l| BracketField {
                    word: BracketWord::new(vec![l]),
                    field: sys.fields[l - 1].clone(),
                })
                .collect();
            let drift = match (with_drift, &sys.drift) {
                (true, Some(v0)) => vec![BracketField {
                    word: BracketWord::new(vec![0]),
                    field: v0.clone(),
                }],
                _ => Vec::new(),
            };
            (strong, drift)
        } else {
            let extra = if with_drift { 1 } else { 0 };
            count += (diffusion.len() + extra) * strong_prev.len();
            if count > cap {
                return Err(Error::TooManyWords { count, cap });
            }
            let strong = extend_level(sys, &diffusion, &strong_prev)?;
            let drift = if with_drift {
                extend_level(sys, &[0], &strong_prev)?
            } else {
                Vec::new()
            };
            (strong, drift)
        };
        let mut level = Vec::new();
        let mut next_prev = Vec::new();
        for bf in drift_new.into_iter().chain(strong_new) {
            let is_strong = bf.word.letters[0] != 0;
            if is_strong && strong_seen.insert(&bf.field) {
                next_prev.push(bf.clone());
            }
            if all_seen.insert(&bf.field) {
                level.push(bf);
            }
        }
        level.sort_by(|a, b| a.word.cmp(&b.word));
        next_prev.sort_by(|a, b| a.word.cmp(&b.word));
        levels.push(level);
        strong_prev = next_prev;
    }
    Ok(levels)
}

/// All bracket fields of length at most `n_max`, flattened in level order.
pub fn bracket_sets(
    sys: &VectorFieldSystem,
    n_max: usize,
    mode: BracketMode,
) -> Result<Vec<BracketField>> {
    Ok(bracket_levels(sys, n_max, mode, DEFAULT_WORD_CAP)?
        .into_iter()
        .flatten()
        .collect())
}

/// Relative rank threshold `n sigma_max 2^{-40}`.
pub fn rank_threshold(n: usize, sigma_max: f64) -> f64 {
    n as f64 * sigma_max * 2f64.powi(-40)
}

/// Numerical rank of the columns `vs` in `R^n`.
pub fn numerical_rank(n: usize, vs: &[DVector<f64>]) -> usize {
    if vs.is_empty() {
        return 0;
    }
    let m = DMatrix::from_columns(vs);
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let tau = rank_threshold(n, smax);
    sv.iter().filter(|&&s| s > tau).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub word: BracketWord,
    pub value: Vec<f64>,
}

/// Span data of successive levels at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanLevel {
    pub level: usize,
    pub n_fields: usize,
    /// Rank of the span of all fields of length `<= level`.
    pub rank: usize,
    /// Words that raised the rank at this level.
    pub witnesses: Vec<Witness>,
}

fn span_levels(
    sys: &VectorFieldSystem,
    x: &[f64],
    levels: &[Vec<BracketField>],
    stop_at_full: bool,
) -> Vec<SpanLevel> {
    let n = sys.n;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for (i, level) in levels.iter().enumerate() {
        let values: Vec<DVector<f64>> = level.par_iter().map(|bf| bf.field.eval(x)).collect();
        let mut witnesses = Vec::new();
        let mut rank = numerical_rank(n, &basis);
        for (bf, v) in level.iter().zip(&values) {
            if rank == n {
                break;
            }
            basis.push(v.clone());
            let r = numerical_rank(n, &basis);
            if r > rank {
                rank = r;
                witnesses.push(Witness {
                    word: bf.word.clone(),
                    value: v.iter().copied().collect(),
                });
            } else {
                basis.pop();
            }
        }
        out.push(SpanLevel {
            level: i + 1,
            n_fields: level.len(),
            rank,
            witnesses,
        });
        if stop_at_full && rank == n {
            break;
        }
    }
    out
}

fn check_point(sys: &VectorFieldSystem, x: &[f64]) -> Result<()> {
    if x.len() != sys.n {
        return Err(Error::domain(format!(
            "point has {} coordinates, expected {}",
            x.len(),
            sys.n
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("point must be finite"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HormanderReport {
    pub mode: BracketMode,
    pub point: Vec<f64>,
    pub max_level: usize,
    pub satisfied: bool,
    /// First level whose fields span `R^n`.
    pub n_star: Option<usize>,
    pub levels: Vec<SpanLevel>,
    pub basis: Vec<Witness>,
}

/// Does the span of all bracket fields of length `<= n_max` at `x0` fill `R^n`?
pub fn hormander_check(
    sys: &VectorFieldSystem,
    x0: &[f64],
    n_max: usize,
    mode: BracketMode,
) -> Result<HormanderReport> {
    check_point(sys, x0)?;
    let levels = bracket_levels(sys, n_max, mode, DEFAULT_WORD_CAP)?;
    let spans = span_levels(sys, x0, &levels, true);
    let n_star = spans.iter().find(|l| l.rank == sys.n).map(|l| l.level);
    let basis = spans.iter().flat_map(|l| l.witnesses.clone()).collect();
    Ok(HormanderReport {
        mode,
        point: x0.to_vec(),
        max_level: n_max,
        satisfied: n_star.is_some(),
        n_star,
        levels: spans,
        basis,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagReport {
    pub point: Vec<f64>,
    pub level_cap: usize,
    pub levels: Vec<SpanLevel>,
    /// First level at which the flag fills `R^n`.
    pub r: Option<usize>,
    pub growth_vector: Vec<usize>,
    /// Set by `regular_point_check`; a single flag cannot decide it.
    pub regular: Option<bool>,
    /// `sum_k k (dim D^k - dim D^{k-1})`.
    pub homogeneous_dimension: Option<usize>,
    /// `sum_k k dim D^k`, reported alongside.
    pub weighted_rank_sum: Option<usize>,
}

/// Flag `D^1 ⊂ D^2 ⊂ ...` of the diffusion fields at `x`.
pub fn strong_hormander_flag(
    sys: &VectorFieldSystem,
    x: &[f64],
    level_cap: usize,
) -> Result<FlagReport> {
    check_point(sys, x)?;
    let levels = bracket_levels(sys, level_cap, BracketMode::Strong, DEFAULT_WORD_CAP)?;
    let spans = span_levels(sys, x, &levels, true);
    let r = spans.iter().find(|l| l.rank == sys.n).map(|l| l.level);
    let growth_vector: Vec<usize> = spans.iter().map(|l| l.rank).collect();
    let (homogeneous_dimension, weighted_rank_sum) = match r {
        Some(_) => {
            let mut prev = 0;
            let mut d = 0;
            let mut s = 0;
            for (k, &g) in growth_vector.iter().enumerate() {
                d += (k + 1) * (g - prev);
                s += (k + 1) * g;
                prev = g;
            }
            (Some(d), Some(s))
        }
        None => (None, None),
    };
    Ok(FlagReport {
        point: x.to_vec(),
        level_cap,
        levels: spans,
        r,
        growth_vector,
        regular: None,
        homogeneous_dimension,
        weighted_rank_sum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// Sampled test: `true` means no differing growth vector was found.
    pub regular: bool,
    pub growth_vector: Vec<usize>,
    pub radius: f64,
    pub n_samples: usize,
    /// First sampled point whose growth vector differs, with that vector.
    pub witness: Option<(Vec<f64>, Vec<usize>)>,
}

/// Compares the growth vector at `x` with those at `n_samples` uniform
/// points of the ball of radius `radius` around `x`.
pub fn regular_point_check(
    sys: &VectorFieldSystem,
    x: &[f64],
    radius: f64,
    n_samples: usize,
    level_cap: usize,
    seed: u64,
) -> Result<RegularityReport> {
    if !(radius > 0.0) {
        return Err(Error::Precondition(
            "neighbourhood radius must be positive".into(),
        ));
    }
    let centre = strong_hormander_flag(sys, x, level_cap)?;
    let n = sys.n;
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
    let points: Vec<Vec<f64>> = (0..n_samples as u64)
        .map(|i| {
            let mut rng = substream(seed, "regular-point", i);
            let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            let rad = radius * unit.sample(&mut rng).powf(1.0 / n as f64);
            x.iter()
                .zip(&dir)
                .map(|(xi, di)| xi + rad * di / norm)
                .collect()
        })
        .collect();
    let growth: Vec<Result<Vec<usize>>> = points
        .par_iter()
        .map(|p| Ok(strong_hormander_flag(sys, p, level_cap)?.growth_vector))
        .collect();
    let mut witness = None;
    for (p, g) in points.into_iter().zip(growth) {
        let g = g?;
        if g != centre.growth_vector {
            witness = Some((p, g));
            break;
        }
    }
    Ok(RegularityReport {
        regular: witness.is_none(),
        growth_vector: centre.growth_vector,
        radius,
        n_samples,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Polynomial;
    use crate::systems;

    #[test]
    fn bracket_of_grushin_pair() {
        let v = VectorField::constant(&[1.0, 0.0]);
        let w = VectorField::new(vec![Polynomial::zero(2), Polynomial::var(2, 0)]).unwrap();
        assert_eq!(
            lie_bracket(&v, &w).unwrap(),
            VectorField::constant(&[0.0, 1.0])
        );
        assert!(lie_bracket(&w, &w).unwrap().is_zero());
    }

    #[test]
    fn first_level_lists_all_fields() {
        let drift = VectorField::constant(&[0.0, 1.0]);
        let sys = VectorFieldSystem::new(
            2,
            Some(drift),
            vec![
                VectorField::constant(&[1.0, 0.0]),
                VectorField::constant(&[1.0, 1.0]),
            ],
        )
        .unwrap();
        let words: Vec<String> = bracket_sets(&sys, 1, BracketMode::Weak)
            .unwrap()
            .iter()
            .map(|b| b.word.to_string())
            .collect();
        assert_eq!(words, vec!["(0)", "(1)", "(2)"]);
        let strong = bracket_sets(&sys, 1, BracketMode::Strong).unwrap();
        assert_eq!(strong.len(), 2);
    }

    #[test]
    fn heisenberg_brackets() {
        let sets = bracket_sets(&systems::heisenberg(), 2, BracketMode::Weak).unwrap();
        let e3 = VectorField::constant(&[0.0, 0.0, 1.0]);
        assert!(sets
            .iter()
            .any(|b| b.field == e3 || b.field == e3.scale(-1.0)));
    }

    #[test]
    fn constant_fields_commute() {
        let v = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, -1.0]);
        let levels = bracket_levels(
            &systems::constant_fields(&v),
            4,
            BracketMode::Strong,
            DEFAULT_WORD_CAP,
        )
        .unwrap();
        assert_eq!(levels[0].len(), 2);
        assert!(levels[1..].iter().all(|l| l.is_empty()));
    }

    #[test]
    fn span_examples() {
        let e = hormander_check(&systems::elliptic(3), &[0.0; 3], 4, BracketMode::Weak).unwrap();
        assert_eq!(e.n_star, Some(1));
        let h = hormander_check(&systems::heisenberg(), &[0.0; 3], 4, BracketMode::Weak).unwrap();
        assert_eq!(h.n_star, Some(2));
        assert_eq!(h.basis.len(), 3);
        let r =
            hormander_check(&systems::rank_deficient(), &[0.0; 2], 6, BracketMode::Weak).unwrap();
        assert!(!r.satisfied);
        assert_eq!(r.levels.last().unwrap().rank, 1);
    }

    #[test]
    fn word_cap_is_enforced() {
        let n = 3;
        let x = |i| Polynomial::var(n, i);
        let fields = vec![
            VectorField::new(vec![x(1).mul(&x(1)), Polynomial::zero(n), x(0)]).unwrap(),
            VectorField::new(vec![
                Polynomial::zero(n),
                x(2).mul(&x(0)),
                Polynomial::constant(n, 1.0),
            ])
            .unwrap(),
            VectorField::new(vec![x(2), x(0).mul(&x(1)), Polynomial::zero(n)]).unwrap(),
        ];
        let sys = VectorFieldSystem::new(n, None, fields).unwrap();
        let err = bracket_levels(&sys, 30, BracketMode::Strong, 1000).unwrap_err();
        assert!(matches!(err, Error::TooManyWords { .. }));
    }

    #[test]
    fn flags_and_dimensions() {
        let h = strong_hormander_flag(&systems::heisenberg(), &[0.0; 3], 5).unwrap();
        assert_eq!(h.growth_vector, vec![2, 3]);
        assert_eq!(
            (h.r, h.homogeneous_dimension, h.weighted_rank_sum),
            (Some(2), Some(4), Some(8))
        );
        let g0 = strong_hormander_flag(&systems::grushin(), &[0.0, 0.0], 5).unwrap();
        assert_eq!(g0.growth_vector, vec![1, 2]);
        assert_eq!(g0.homogeneous_dimension, Some(3));
        let g1 = strong_hormander_flag(&systems::grushin(), &[1.0, 0.0], 5).unwrap();
        assert_eq!(g1.growth_vector, vec![2]);
        assert_eq!(g1.homogeneous_dimension, Some(2));
        let e = strong_hormander_flag(&systems::elliptic(2), &[0.3, 0.1], 5).unwrap();
        assert_eq!(
            (e.growth_vector.clone(), e.homogeneous_dimension),
            (vec![2], Some(2))
        );
        let deg = strong_hormander_flag(&systems::rank_deficient(), &[0.0, 0.0], 3).unwrap();
        assert_eq!(deg.r, None);
        assert_eq!(deg.homogeneous_dimension, None);
    }

    #[test]
    fn regularity_examples() {
        let g = regular_point_check(&systems::grushin(), &[0.0, 0.0], 0.1, 20, 5, 1).unwrap();
        assert!(!g.regular);
        assert_eq!(g.witness.as_ref().unwrap().1, vec![2]);
        let h = regular_point_check(&systems::heisenberg(), &[0.0; 3], 0.5, 20, 5, 1).unwrap();
        assert!(h.regular);
        let e = regular_point_check(&systems::elliptic(2), &[1.0, -1.0], 1.0, 20, 5, 1).unwrap();
        assert!(e.regular);
    }
}
