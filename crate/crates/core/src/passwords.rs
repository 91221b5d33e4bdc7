//! The label space: 4-digit PINs and 3x3 pattern locks.
//!
//! Pattern validity follows the standard Android rule: a move between two
//! collinear dots that jumps over the dot between them is only legal if
//! that middle dot was already visited. Depth-first enumeration under this
//! rule yields exactly 389,112 patterns of length 4 to 9.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::SeededRng;

#[derive(Debug, Error)]
pub enum PasswordError {
    #[error("invalid pattern: {0:?}")]
    InvalidPattern(Vec<u8>),
    #[error("invalid pin digits: {0:?}")]
    InvalidPin(Vec<u8>),
    #[error("requested {requested} passwords but the space holds {space}")]
    SampleTooLarge { requested: usize, space: usize },
    #[error("empty password database")]
    EmptyDb,
}

/// A tapped 4-digit numeric password.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pin {
    digits: [u8; 4],
}

impl Pin {
    pub fn new(digits: [u8; 4]) -> Result<Self, PasswordError> {
        if digits.iter().any(|d| *d > 9) {
            return Err(PasswordError::InvalidPin(digits.to_vec()));
        }
        Ok(Self { digits })
    }

    /// The i-th PIN in lexicographic order, `index < 10_000`.
    pub fn from_index(index: usize) -> Self {
        assert!(index < PIN_SPACE);
        let d = |k: u32| ((index / 10usize.pow(k)) % 10) as u8;
        Self {
            digits: [d(3), d(2), d(1), d(0)],
        }
    }

    pub fn digits(&self) -> &[u8; 4] {
        &self.digits
    }
}

/// A swiped pattern over the 3x3 grid, dots numbered 1 (top-left) to 9
/// (bottom-right) in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AplPattern {
    dots: Vec<u8>,
}

impl AplPattern {
    pub fn new(dots: Vec<u8>) -> Result<Self, PasswordError> {
        if !apl_is_valid(&dots) {
            return Err(PasswordError::InvalidPattern(dots));
        }
        Ok(Self { dots })
    }

    pub fn dots(&self) -> &[u8] {
        &self.dots
    }

    pub fn len(&self) -> usize {
        self.dots.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length is always >= 4 by construction
    }

    /// Grid coordinates of a dot in grid units: column, row in {0,1,2}.
    pub fn dot_coords(dot: u8) -> (f64, f64) {
        debug_assert!((1..=9).contains(&dot));
        let idx = (dot - 1) as f64;
        (idx % 3.0, (idx / 3.0).floor())
    }
}

/// Either password kind.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Password {
    Pin(Pin),
    Apl(AplPattern),
}

impl Password {
    pub fn kind(&self) -> PasswordKind {
        match self {
            Password::Pin(_) => PasswordKind::Pin,
            Password::Apl(_) => PasswordKind::Apl,
        }
    }

    pub fn symbols(&self) -> Vec<u8> {
        match self {
            Password::Pin(p) => p.digits().to_vec(),
            Password::Apl(a) => a.dots().to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PasswordKind {
    Pin,
    Apl,
}

impl std::fmt::Display for PasswordKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PasswordKind::Pin => write!(f, "pin"),
            PasswordKind::Apl => write!(f, "apl"),
        }
    }
}

/// Wire format: `{"kind":"pin"|"apl","digits":[...]}`.
#[derive(Serialize, Deserialize)]
struct PasswordWire {
    kind: PasswordKind,
    digits: Vec<u8>,
}

impl Serialize for Password {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PasswordWire {
            kind: self.kind(),
            digits: self.symbols(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Password {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = PasswordWire::deserialize(deserializer)?;
        match wire.kind {
            PasswordKind::Pin => {
                let arr: [u8; 4] = wire.digits.as_slice().try_into().map_err(|_| {
                    serde::de::Error::custom(format!("pin needs 4 digits, got {}", wire.digits.len()))
                })?;
                Pin::new(arr).map(Password::Pin).map_err(serde::de::Error::custom)
            }
            PasswordKind::Apl => AplPattern::new(wire.digits)
                .map(Password::Apl)
                .map_err(serde::de::Error::custom),
        }
    }
}

pub const PIN_SPACE: usize = 10_000;
pub const APL_SPACE: usize = 389_112;

/// Dot skipped when moving directly between two collinear dots, if any.
/// The eight grid lines: three rows, three columns, two diagonals.
fn midpoint(a: u8, b: u8) -> Option<u8> {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    match (lo, hi) {
        (1, 3) => Some(2),
        (4, 6) => Some(5),
        (7, 9) => Some(8),
        (1, 7) => Some(4),
        (2, 8) => Some(5),
        (3, 9) => Some(6),
        (1, 9) => Some(5),
        (3, 7) => Some(5),
        _ => None,
    }
}

/// Whether `dots` is a well-formed pattern: length 4..=9, all dots
/// distinct and in 1..=9, and every move that jumps over a third dot on
/// the same grid line has that dot visited earlier.
pub fn apl_is_valid(dots: &[u8]) -> bool {
    if !(4..=9).contains(&dots.len()) {
        return false;
    }
    let mut seen = [false; 10];
    for (i, &d) in dots.iter().enumerate() {
        if !(1..=9).contains(&d) || seen[d as usize] {
            return false;
        }
        if i > 0 {
            if let Some(mid) = midpoint(dots[i - 1], d) {
                if !seen[mid as usize] {
                    return false;
                }
            }
        }
        seen[d as usize] = true;
    }
    true
}

/// Exhaustive pattern enumeration by lexicographic depth-first search.
///
/// Emits every valid pattern exactly once, in a fixed order, to the
/// visitor; returns the total count. Re-running yields the identical
/// sequence.
pub fn enumerate_apls<F: FnMut(&[u8])>(mut visit: F) -> usize {
    let mut path = Vec::with_capacity(9);
    let mut seen = [false; 10];
    let mut count = 0usize;
    for start in 1..=9u8 {
        path.push(start);
        seen[start as usize] = true;
        dfs(&mut path, &mut seen, &mut count, &mut visit);
        seen[start as usize] = false;
        path.pop();
    }
    count
}

fn dfs<F: FnMut(&[u8])>(path: &mut Vec<u8>, seen: &mut [bool; 10], count: &mut usize, visit: &mut F) {
    if path.len() >= 4 {
        *count += 1;
        visit(path);
    }
    if path.len() == 9 {
        return;
    }
    let last = *path.last().unwrap();
    for next in 1..=9u8 {
        if seen[next as usize] {
            continue;
        }
        if let Some(mid) = midpoint(last, next) {
            if !seen[mid as usize] {
                continue;
            }
        }
        path.push(next);
        seen[next as usize] = true;
        dfs(path, seen, count, visit);
        seen[next as usize] = false;
        path.pop();
    }
}

/// Total pattern count and counts per length 4..=9.
pub fn apl_counts() -> (usize, [usize; 6]) {
    let mut per_len = [0usize; 6];
    let total = enumerate_apls(|p| per_len[p.len() - 4] += 1);
    (total, per_len)
}

/// A finite password database with popularity weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PasswordDb {
    kind: PasswordKind,
    entries: Vec<(Password, f64)>,
}

impl PasswordDb {
    /// `size` distinct passwords sampled uniformly from the valid space,
    /// with Zipf(`skew`) popularity weights assigned by sampling rank and
    /// normalized to sum to 1. `skew = 0` gives uniform weights.
    pub fn sample(
        rng: &mut SeededRng,
        kind: PasswordKind,
        size: usize,
        skew: f64,
    ) -> Result<Self, PasswordError> {
        assert!(skew >= 0.0, "zipf skew must be non-negative");
        let space = match kind {
            PasswordKind::Pin => PIN_SPACE,
            PasswordKind::Apl => APL_SPACE,
        };
        if size > space || size == 0 {
            return Err(PasswordError::SampleTooLarge {
                requested: size,
                space,
            });
        }
        let universe: Vec<Password> = match kind {
            PasswordKind::Pin => (0..PIN_SPACE).map(|i| Password::Pin(Pin::from_index(i))).collect(),
            PasswordKind::Apl => {
                let mut all = Vec::with_capacity(APL_SPACE);
                enumerate_apls(|p| all.push(Password::Apl(AplPattern { dots: p.to_vec() })));
                all
            }
        };
        // Partial Fisher-Yates: the first `size` slots end up a uniform
        // distinct sample in random order.
        let mut indices: Vec<usize> = (0..universe.len()).collect();
        for i in 0..size {
            let j = i + rng.gen_index(universe.len() - i);
            indices.swap(i, j);
        }
        let mut entries: Vec<(Password, f64)> = indices[..size]
            .iter()
            .enumerate()
            .map(|(rank, &idx)| {
                let w = 1.0 / ((rank + 1) as f64).powf(skew);
                (universe[idx].clone(), w)
            })
            .collect();
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        for (_, w) in &mut entries {
            *w /= total;
        }
        Ok(Self { kind, entries })
    }

    pub fn kind(&self) -> PasswordKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Password, f64)] {
        &self.entries
    }

    pub fn passwords(&self) -> impl Iterator<Item = &Password> {
        self.entries.iter().map(|(p, _)| p)
    }

    pub fn index_of(&self, pwd: &Password) -> Option<usize> {
        self.entries.iter().position(|(p, _)| p == pwd)
    }

    /// Weighted draw; deterministic given the generator state.
    pub fn draw(&self, rng: &mut SeededRng) -> Result<&Password, PasswordError> {
        if self.entries.is_empty() {
            return Err(PasswordError::EmptyDb);
        }
        let u = rng.next_f64();
        let mut acc = 0.0;
        for (p, w) in &self.entries {
            acc += w;
            if u < acc {
                return Ok(p);
            }
        }
        Ok(&self.entries.last().unwrap().0)
    }
}

/// Weighted draw as a free function, mirroring the database method.
pub fn draw_password<'a>(rng: &mut SeededRng, db: &'a PasswordDb) -> Result<&'a Password, PasswordError> {
    db.draw(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validity_basics() {
        assert!(apl_is_valid(&[1, 2, 3, 6]));
        assert!(!apl_is_valid(&[1, 2, 3])); // too short
        assert!(!apl_is_valid(&[1, 3, 2, 6])); // 1->3 jumps unvisited 2
        assert!(apl_is_valid(&[1, 5, 9, 6, 3]));
        assert!(apl_is_valid(&[2, 1, 3, 5])); // 1->3 after 2 visited
        assert!(!apl_is_valid(&[1, 2, 3, 2])); // repeat
        assert!(!apl_is_valid(&[0, 2, 3, 6])); // out of range
        assert!(!apl_is_valid(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 9])); // too long
    }

    #[test]
    fn prefixes_of_valid_patterns_stay_valid() {
        let mut checked = 0usize;
        enumerate_apls(|p| {
            if p.len() > 4 && checked < 50_000 {
                for k in 4..p.len() {
                    assert!(apl_is_valid(&p[..k]));
                }
                checked += 1;
            }
        });
        assert!(checked > 0);
    }

    #[test]
    fn pin_space_is_exhaustive() {
        let mut seen = vec![false; PIN_SPACE];
        for i in 0..PIN_SPACE {
            let pin = Pin::from_index(i);
            let v = pin.digits();
            let back = v[0] as usize * 1000 + v[1] as usize * 100 + v[2] as usize * 10 + v[3] as usize;
            assert_eq!(back, i);
            assert!(!seen[back]);
            seen[back] = true;
        }
        assert!(seen.iter().all(|b| *b));
    }

    #[test]
    fn sample_db_uniform_weights_at_zero_skew() {
        let mut rng = SeededRng::new(1);
        let db = PasswordDb::sample(&mut rng, PasswordKind::Pin, 25, 0.0).unwrap();
        for (_, w) in db.entries() {
            assert!((w - 1.0 / 25.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_db_full_pin_space() {
        let mut rng = SeededRng::new(2);
        let db = PasswordDb::sample(&mut rng, PasswordKind::Pin, PIN_SPACE, 0.0).unwrap();
        assert_eq!(db.len(), PIN_SPACE);
        let mut seen = vec![false; PIN_SPACE];
        for p in db.passwords() {
            if let Password::Pin(pin) = p {
                let d = pin.digits();
                let idx = d[0] as usize * 1000 + d[1] as usize * 100 + d[2] as usize * 10 + d[3] as usize;
                assert!(!seen[idx], "duplicate pin");
                seen[idx] = true;
            }
        }
        assert!(seen.iter().all(|b| *b));
    }

    #[test]
    fn sample_db_zipf_weights() {
        let mut rng = SeededRng::new(3);
        let db = PasswordDb::sample(&mut rng, PasswordKind::Pin, 4, 1.0).unwrap();
        // Weights proportional to 1, 1/2, 1/3, 1/4.
        let z = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
        let expect = [1.0 / z, 0.5 / z, (1.0 / 3.0) / z, 0.25 / z];
        for ((_, w), e) in db.entries().iter().zip(expect) {
            assert!((w - e).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_db_rejects_oversize() {
        let mut rng = SeededRng::new(4);
        assert!(PasswordDb::sample(&mut rng, PasswordKind::Pin, PIN_SPACE + 1, 0.0).is_err());
    }

    #[test]
    fn draw_single_entry_db() {
        let mut rng = SeededRng::new(5);
        let db = PasswordDb::sample(&mut rng, PasswordKind::Pin, 1, 0.0).unwrap();
        let only = db.entries()[0].0.clone();
        for _ in 0..50 {
            assert_eq!(*db.draw(&mut rng).unwrap(), only);
        }
    }

    #[test]
    fn draw_uniform_frequencies() {
        let mut rng = SeededRng::new(6);
        let db = PasswordDb::sample(&mut rng, PasswordKind::Pin, 2, 0.0).unwrap();
        let first = db.entries()[0].0.clone();
        let n = 100_000;
        let mut hits = 0usize;
        for _ in 0..n {
            if *db.draw(&mut rng).unwrap() == first {
                hits += 1;
            }
        }
        // 3 sigma of Binomial(n, 0.5)
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((hits as f64 - n as f64 * 0.5).abs() < 3.0 * sigma, "hits {hits}");
    }

    #[test]
    fn draw_zipf_frequency_ordering() {
        let mut rng = SeededRng::new(7);
        let db = PasswordDb::sample(&mut rng, PasswordKind::Pin, 5, 1.2).unwrap();
        let mut counts = vec![0usize; db.len()];
        for _ in 0..100_000 {
            let p = db.draw(&mut rng).unwrap().clone();
            counts[db.index_of(&p).unwrap()] += 1;
        }
        for i in 1..counts.len() {
            assert!(
                counts[i - 1] > counts[i],
                "rank {i} out of order: {counts:?}"
            );
        }
    }

    #[test]
    fn password_json_round_trip() {
        let p = Password::Apl(AplPattern::new(vec![1, 2, 3, 6]).unwrap());
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"kind":"apl","digits":[1,2,3,6]}"#);
        let back: Password = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);

        let q = Password::Pin(Pin::new([0, 7, 3, 9]).unwrap());
        let s = serde_json::to_string(&q).unwrap();
        assert_eq!(s, r#"{"kind":"pin","digits":[0,7,3,9]}"#);
        let back: Password = serde_json::from_str(&s).unwrap();
        assert_eq!(back, q);

        // Invalid patterns are rejected at the boundary.
        let bad = r#"{"kind":"apl","digits":[1,3,2,6]}"#;
        assert!(serde_json::from_str::<Password>(bad).is_err());
    }
}
