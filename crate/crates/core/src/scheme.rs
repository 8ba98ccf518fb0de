//! Inducing schemes: basic elements, the induced map, coding, and verification.
//!
//! Elements are stored as families of equal-length pieces sharing an inducing
//! time and a branch-word prefix, so the refined doubling construction can
//! describe its `2^{2^n}` pieces per level without materializing them.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{exponential_bound, ols};
use crate::maps::{Interval, MapDescriptor, PiecewiseMap, UnimodalMap};

/// Endpoint tolerance for the full-branch condition.
pub const EPS_H1: f64 = 1e-9;
/// Coding resolution.
pub const EPS_CODE: f64 = 1e-12;
const CODE_ITERATION_CAP: usize = 10_000;
/// Families larger than this are never listed element by element.
pub const MATERIALIZE_CAP: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementFamily {
    pub tau: u32,
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub prefix: Vec<usize>,
    /// Number of binary branch digits appended to `prefix`, encoding the piece index.
    pub suffix_digits: u32,
}

impl ElementFamily {
    pub fn single(interval: Interval, tau: u32, word: Vec<usize>) -> Self {
        Self { tau, lo: interval.lo, hi: interval.hi, count: 1, prefix: word, suffix_digits: 0 }
    }

    pub fn piece_len(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }

    pub fn piece(&self, i: u64) -> Interval {
        let len = self.piece_len();
        let lo = if i == 0 { self.lo } else { self.lo + i as f64 * len };
        let hi = if i + 1 == self.count { self.hi } else { self.lo + (i + 1) as f64 * len };
        Interval { lo, hi }
    }

    pub fn piece_word(&self, i: u64) -> Vec<usize> {
        let mut w = self.prefix.clone();
        for d in (0..self.suffix_digits).rev() {
            w.push(((i >> d) & 1) as usize);
        }
        w
    }

    pub fn span(&self) -> Interval {
        Interval { lo: self.lo, hi: self.hi }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicElement {
    pub symbol: u64,
    pub interval: Interval,
    pub tau: u32,
    pub word: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeMeta {
    pub variant: String,
    pub tau_convention: String,
    pub truncation: u64,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoublingVariant {
    Plain,
    Refined,
}

#[derive(Debug, Clone)]
pub struct InducingScheme {
    map: PiecewiseMap,
    w: Interval,
    families: Vec<ElementFamily>,
    offsets: Vec<u64>,
    by_position: Vec<usize>,
    base_a: Option<Interval>,
    meta: SchemeMeta,
}

const H3_NOTE: &str = "(H3) assumed: the uncoded set is the countable set of endpoint preimages";

impl InducingScheme {
    pub fn new(
        map: PiecewiseMap,
        w: Interval,
        mut families: Vec<ElementFamily>,
        base_a: Option<Interval>,
        meta: SchemeMeta,
    ) -> Result<Self> {
        if families.is_empty() {
            return Err(Error::InvalidParameter("scheme has no elements".into()));
        }
        for f in &families {
            if f.tau == 0 || f.count == 0 || !(f.lo < f.hi) {
                return Err(Error::InvalidParameter(format!("bad element family at ({}, {}]", f.lo, f.hi)));
            }
        }
        families.sort_by(|a, b| a.tau.cmp(&b.tau).then(a.lo.total_cmp(&b.lo)));
        let mut offsets = Vec::with_capacity(families.len() + 1);
        let mut acc = 0u64;
        offsets.push(0);
        for f in &families {
            acc = acc
                .checked_add(f.count)
                .ok_or_else(|| Error::InvalidParameter("element count overflows".into()))?;
            offsets.push(acc);
        }
        let mut by_position: Vec<usize> = (0..families.len()).collect();
        by_position.sort_by(|&a, &b| families[a].lo.total_cmp(&families[b].lo));
        for w2 in by_position.windows(2) {
            if families[w2[1]].lo < families[w2[0]].hi {
                return Err(Error::InvalidParameter("element intervals overlap".into()));
            }
        }
        Ok(Self { map, w, families, offsets, by_position, base_a, meta })
    }

    pub fn map(&self) -> &PiecewiseMap {
        &self.map
    }

    pub fn w(&self) -> Interval {
        self.w
    }

    pub fn base_a(&self) -> Option<Interval> {
        self.base_a
    }

    pub fn meta(&self) -> &SchemeMeta {
        &self.meta
    }

    pub fn families(&self) -> &[ElementFamily] {
        &self.families
    }

    /// Total number of elements.
    pub fn len(&self) -> u64 {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn family_of(&self, symbol: u64) -> (usize, u64) {
        let f = self.offsets.partition_point(|&o| o <= symbol) - 1;
        (f, symbol - self.offsets[f])
    }

    pub fn tau(&self, symbol: u64) -> u32 {
        self.families[self.family_of(symbol).0].tau
    }

    pub fn interval(&self, symbol: u64) -> Interval {
        let (f, i) = self.family_of(symbol);
        self.families[f].piece(i)
    }

    pub fn word(&self, symbol: u64) -> Vec<usize> {
        let (f, i) = self.family_of(symbol);
        self.families[f].piece_word(i)
    }

    pub fn element(&self, symbol: u64) -> BasicElement {
        let (f, i) = self.family_of(symbol);
        let fam = &self.families[f];
        BasicElement { symbol, interval: fam.piece(i), tau: fam.tau, word: fam.piece_word(i) }
    }

    /// The first `limit` elements in alphabet order (by τ, then position).
    pub fn elements(&self, limit: u64) -> Vec<BasicElement> {
        (0..self.len().min(limit)).map(|s| self.element(s)).collect()
    }

    /// Maximal τ among the first `alphabet` symbols.
    pub fn max_tau(&self, alphabet: u64) -> u32 {
        self.tau(alphabet.min(self.len()) - 1)
    }

    /// Number of leading symbols with `τ ≤ max_tau`.
    pub fn alphabet_up_to_tau(&self, max_tau: u32) -> u64 {
        let k = self.families.partition_point(|f| f.tau <= max_tau);
        self.offsets[k]
    }

    /// The scheme restricted to elements with `τ ≤ max_tau`.
    pub fn restrict_tau(&self, max_tau: u32) -> Result<Self> {
        let fams: Vec<ElementFamily> = self.families.iter().filter(|f| f.tau <= max_tau).cloned().collect();
        let mut meta = self.meta.clone();
        meta.truncation = max_tau as u64;
        Self::new(self.map.clone(), self.w, fams, self.base_a, meta)
    }

    /// Symbol of the element containing `x` (half-open membership).
    pub fn locate(&self, x: f64) -> Option<u64> {
        let k = self.by_position.partition_point(|&f| self.families[f].lo < x);
        if k == 0 {
            return None;
        }
        let fi = self.by_position[k - 1];
        let fam = &self.families[fi];
        if x > fam.hi {
            return None;
        }
        let mut i = (((x - fam.lo) / fam.piece_len()).ceil() as i64 - 1).clamp(0, fam.count as i64 - 1) as u64;
        while i > 0 && fam.piece(i).lo >= x {
            i -= 1;
        }
        while i + 1 < fam.count && fam.piece(i).hi < x {
            i += 1;
        }
        Some(self.offsets[fi] + i)
    }

    /// Symbol of an element whose closure contains `x`.
    pub fn locate_closed(&self, x: f64) -> Option<u64> {
        self.locate(x).or_else(|| {
            let k = self.by_position.partition_point(|&f| self.families[f].lo <= x);
            (k > 0 && self.families[self.by_position[k - 1]].lo == x)
                .then(|| self.offsets[self.by_position[k - 1]])
        })
    }

    /// `F(x) = f^{τ(x)}(x)` together with the symbol of the element containing `x`.
    pub fn induced_map(&self, x: f64) -> Result<(f64, u64)> {
        let s = self.locate(x).ok_or(Error::NotInW { x })?;
        Ok((self.map.apply_word(&self.word(s), x), s))
    }

    /// `F` on element `symbol`, without membership checks.
    pub fn apply(&self, symbol: u64, x: f64) -> f64 {
        self.map.apply_word(&self.word(symbol), x)
    }

    /// `dF` on element `symbol`.
    pub fn derivative(&self, symbol: u64, x: f64) -> f64 {
        self.map.word_derivative(&self.word(symbol), x)
    }

    /// The inverse of `F` on element `symbol`, mapping `W` onto the element.
    pub fn inverse(&self, symbol: u64, y: f64) -> f64 {
        self.map.inverse_word(&self.word(symbol), self.w.clamp(y))
    }

    /// Closed interval `J_[w]` of a finite symbol word.
    pub fn cylinder(&self, word: &[u64]) -> Interval {
        let words: Vec<Vec<usize>> = word.iter().map(|&s| self.word(s)).collect();
        self.pull_back_interval(&words, self.w)
    }

    fn pull_back_interval(&self, words: &[Vec<usize>], mut iv: Interval) -> Interval {
        for bw in words.iter().rev() {
            let a = self.map.inverse_word(bw, self.w.clamp(iv.lo));
            let b = self.map.inverse_word(bw, self.w.clamp(iv.hi));
            iv = Interval { lo: a.min(b), hi: a.max(b) };
        }
        iv
    }

    /// Midpoint of the nested cylinder of a finite word.
    pub fn code_finite(&self, word: &[u64]) -> Result<f64> {
        if word.is_empty() {
            return Err(Error::InvalidParameter("empty word".into()));
        }
        Ok(self.cylinder(word).mid())
    }

    /// `h(prefix · cycle^∞)`.
    pub fn code_word(&self, prefix: &[u64], cycle: &[u64]) -> Result<f64> {
        let y = self.periodic_point(cycle)?;
        let words: Vec<Vec<usize>> = prefix.iter().map(|&s| self.word(s)).collect();
        Ok(words.iter().rev().fold(y, |z, bw| self.map.inverse_word(bw, self.w.clamp(z))))
    }

    /// The point coded by `cycle^∞`, a fixed point of `F^{|cycle|}`.
    pub fn periodic_point(&self, cycle: &[u64]) -> Result<f64> {
        if cycle.is_empty() {
            return Err(Error::InvalidParameter("empty cycle".into()));
        }
        let words: Vec<Vec<usize>> = cycle.iter().map(|&s| self.word(s)).collect();
        self.periodic_point_of_words(&words)
    }

    pub(crate) fn periodic_point_of_words(&self, words: &[Vec<usize>]) -> Result<f64> {
        let tol = EPS_CODE * self.w.len().max(1.0);
        let mut iv = self.w;
        let mut iterations = 0;
        while iv.len() >= tol {
            if iterations == CODE_ITERATION_CAP {
                return Err(Error::NoConvergence { tol, width: iv.len(), iterations });
            }
            let next = self.pull_back_interval(words, iv);
            if next == iv {
                break;
            }
            iv = next;
            iterations += 1;
        }
        let mut x = iv.mid();
        for _ in 0..8 {
            let nx = words.iter().rev().fold(x, |z, bw| self.map.inverse_word(bw, self.w.clamp(z)));
            if nx == x {
                break;
            }
            x = nx;
        }
        Ok(x)
    }

    /// Level intervals `f^k(J)`, `0 ≤ k < τ(J)`.
    pub fn tower_levels(&self, symbol: u64) -> Vec<Interval> {
        let e = self.element(symbol);
        let mut iv = e.interval;
        let mut out = Vec::with_capacity(e.tau as usize);
        for &b in &e.word {
            out.push(iv);
            iv = self.map.branch(b).push_forward(&iv);
        }
        out
    }

    /// `S(n)`: number of elements with `τ = n`.
    pub fn s_counts(&self) -> BTreeMap<u32, u64> {
        let mut out = BTreeMap::new();
        for f in &self.families {
            *out.entry(f.tau).or_insert(0) += f.count;
        }
        out
    }

    /// Total length of the elements at each τ.
    pub fn level_lengths(&self) -> BTreeMap<u32, f64> {
        let mut out = BTreeMap::new();
        for f in &self.families {
            *out.entry(f.tau).or_insert(0.0) += f.hi - f.lo;
        }
        out
    }

    pub fn to_json(&self) -> SchemeJson {
        let elements = (self.len() <= MATERIALIZE_CAP).then(|| {
            self.elements(MATERIALIZE_CAP)
                .into_iter()
                .map(|e| ElementJson {
                    sym: e.symbol,
                    lo: e.interval.lo,
                    hi: e.interval.hi,
                    tau: e.tau,
                    word: e.word,
                })
                .collect()
        });
        SchemeJson {
            map: self.map.descriptor(),
            w: self.w,
            elements,
            families: self.families.clone(),
            base_a: self.base_a,
            meta: self.meta.clone(),
        }
    }

    pub fn from_json(doc: &SchemeJson) -> Result<Self> {
        let map = PiecewiseMap::from_descriptor(&doc.map)?;
        let families = if doc.families.is_empty() {
            doc.elements
                .iter()
                .flatten()
                .map(|e| Interval::new(e.lo, e.hi).map(|iv| ElementFamily::single(iv, e.tau, e.word.clone())))
                .collect::<Result<Vec<_>>>()?
        } else {
            doc.families.clone()
        };
        Self::new(map, doc.w, families, doc.base_a, doc.meta.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementJson {
    pub sym: u64,
    pub lo: f64,
    pub hi: f64,
    pub tau: u32,
    pub word: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeJson {
    pub map: MapDescriptor,
    #[serde(rename = "W")]
    pub w: Interval,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements: Option<Vec<ElementJson>>,
    #[serde(default)]
    pub families: Vec<ElementFamily>,
    #[serde(rename = "base_A", default, skip_serializing_if = "Option::is_none")]
    pub base_a: Option<Interval>,
    pub meta: SchemeMeta,
}

/// The doubling-map schemes of the non-liftable example.
pub fn build_doubling_scheme(variant: DoublingVariant, n_max: u32) -> Result<InducingScheme> {
    if n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    if variant == DoublingVariant::Refined && n_max > 5 {
        return Err(Error::InvalidParameter("refined variant supports n_max ≤ 5".into()));
    }
    let map = PiecewiseMap::doubling();
    let mut families = Vec::new();
    for n in 0..=n_max {
        let lo = 0.5f64.powi(n as i32 + 1);
        let hi = 0.5f64.powi(n as i32);
        let mut prefix = vec![0; n as usize];
        prefix.push(1);
        let fam = match variant {
            DoublingVariant::Plain => ElementFamily { tau: n + 1, lo, hi, count: 1, prefix, suffix_digits: 0 },
            DoublingVariant::Refined => {
                let digits = 1u32 << n;
                ElementFamily { tau: n + 1 + digits, lo, hi, count: 1u64 << digits, prefix, suffix_digits: digits }
            }
        };
        families.push(fam);
    }
    let (name, note) = match variant {
        DoublingVariant::Plain => ("plain", "tau(I_n) = n + 1: I_0 needs one iterate to cover W"),
        DoublingVariant::Refined => (
            "refined",
            "tau = 2^n + n + 1 for the 2^(2^n) pieces of I_n: n + 1 iterates onto W, then 2^n binary digits",
        ),
    };
    let meta = SchemeMeta {
        variant: name.into(),
        tau_convention: "constructive".into(),
        truncation: n_max as u64,
        notes: vec![note.into(), H3_NOTE.into()],
    };
    InducingScheme::new(map, Interval { lo: 0.0, hi: 1.0 }, families, None, meta)
}

/// First returns to `base` with return time at most `depth`.
pub fn build_first_return_scheme(map: &PiecewiseMap, base: Interval, depth: u32) -> Result<InducingScheme> {
    if depth < 1 {
        return Err(Error::InvalidParameter("depth must be at least 1".into()));
    }
    let tol = 1e-12 * map.ambient.len();
    let mut families = Vec::new();
    let mut stack: Vec<(Interval, Vec<usize>)> = vec![(base, Vec::new())];
    while let Some((image, word)) = stack.pop() {
        if word.len() as u32 == depth {
            continue;
        }
        for (b, branch) in map.branches().iter().enumerate() {
            let Some(piece) = image.intersect(&branch.domain) else { continue };
            let img = branch.push_forward(&piece);
            let mut next = word.clone();
            next.push(b);
            if let Some(inner) = img.intersect(&base) {
                if (inner.lo - base.lo).abs() > tol || (inner.hi - base.hi).abs() > tol {
                    return Err(Error::NotMarkov(format!(
                        "image {img} of word {next:?} meets base {base} only in part"
                    )));
                }
                let j = map.inverse_branch_compose(&next, &base)?;
                families.push(ElementFamily::single(j, next.len() as u32, next.clone()));
            }
            if img.lo < base.lo - tol {
                stack.push((Interval { lo: img.lo, hi: base.lo.min(img.hi) }, next.clone()));
            }
            if img.hi > base.hi + tol {
                stack.push((Interval { lo: base.hi.max(img.lo), hi: img.hi }, next));
            }
        }
    }
    let meta = SchemeMeta {
        variant: "first-return".into(),
        tau_convention: "constructive".into(),
        truncation: depth as u64,
        notes: vec![H3_NOTE.into()],
    };
    InducingScheme::new(map.clone(), base, families, None, meta)
}

/// Maximal regular intervals of order at most `tau_max` strictly inside `A`.
pub fn build_unimodal_scheme(map: &UnimodalMap, tau_max: u32) -> Result<InducingScheme> {
    let a = map.base_a()?;
    let a_hat = map.base_a_hat()?;
    let f = map.map();
    let slack = 1e-13;
    let mut candidates: Vec<(Interval, u32, Vec<usize>)> = Vec::new();
    let mut level: Vec<(Interval, Vec<usize>)> = vec![(f.ambient, Vec::new())];
    for n in 1..=tau_max {
        let mut next_level = Vec::new();
        for (image, word) in &level {
            for (b, branch) in f.branches().iter().enumerate() {
                let lo = image.lo.max(branch.domain.lo);
                let hi = image.hi.min(branch.domain.hi);
                if !(lo < hi) {
                    continue;
                }
                let img = branch.push_forward(&Interval { lo, hi });
                let mut next = word.clone();
                next.push(b);
                let d0 = f.inverse_word(&next, img.lo);
                let d1 = f.inverse_word(&next, img.hi);
                let domain = Interval { lo: d0.min(d1), hi: d0.max(d1) };
                if domain.hi <= a.lo || domain.lo >= a.hi {
                    continue;
                }
                if img.lo <= a_hat.lo && img.hi >= a_hat.hi {
                    let j0 = f.inverse_word(&next, a.lo);
                    let j1 = f.inverse_word(&next, a.hi);
                    let j = Interval { lo: j0.min(j1), hi: j0.max(j1) };
                    if a.lo <= j.lo && j.hi <= a.hi && j != a && j.lo < j.hi {
                        candidates.push((j, n, next.clone()));
                    }
                }
                next_level.push((img, next));
            }
        }
        level = next_level;
    }
    candidates.sort_by(|x, y| x.0.lo.total_cmp(&y.0.lo).then(y.0.hi.total_cmp(&x.0.hi)));
    let mut kept: Vec<(Interval, u32, Vec<usize>)> = Vec::new();
    let mut overlaps = 0usize;
    for c in candidates {
        if kept.iter().any(|k| k.0.lo <= c.0.lo + slack && c.0.hi <= k.0.hi + slack) {
            continue;
        }
        if let Some(last) = kept.last() {
            if c.0.lo < last.0.hi - slack {
                overlaps += 1;
                if c.1 < last.1 {
                    kept.pop();
                    kept.push(c);
                }
                continue;
            }
        }
        kept.push(c);
    }
    if kept.is_empty() {
        return Err(Error::Degenerate);
    }
    let mut notes = vec![H3_NOTE.into()];
    if overlaps > 0 {
        notes.push(format!("{overlaps} partially overlapping regular intervals resolved by lower tau"));
    }
    let families = kept.into_iter().map(|(j, t, w)| ElementFamily::single(j, t, w)).collect();
    let meta = SchemeMeta {
        variant: format!("unimodal-a{}", map.a()),
        tau_convention: "constructive".into(),
        truncation: tau_max as u64,
        notes,
    };
    InducingScheme::new(f.clone(), a, families, Some(a), meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub c1: f64,
    pub lambda1: f64,
    pub max_residual: f64,
    pub pass: bool,
    /// `(n, Σ_{τ ≥ n} |J|)`.
    pub tail: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionFit {
    pub c2: f64,
    /// `None` stands for an exactly zero defect (affine branches).
    pub lambda2: Option<f64>,
    pub max_residual: f64,
    pub pass: bool,
    /// `(n, sup |dF(x)/dF(y) - 1|)` over sampled points of depth-n cylinders.
    pub table: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub gamma: f64,
    pub d: f64,
    pub max_residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub h1_pass: bool,
    pub h1_max_defect: f64,
    pub h1_checked: u64,
    pub h2_pass: bool,
    pub h2_worst_ratio: f64,
    pub tail: TailFit,
    /// λ₁ refitted on the tail with the top two τ levels dropped.
    pub lambda1_coarse: Option<f64>,
    pub distortion: DistortionFit,
    pub c3: f64,
    pub c4: f64,
    pub lambda3: f64,
    pub s_counts: BTreeMap<u32, u64>,
    pub gamma: GammaFit,
}

fn sampled_pieces(fam: &ElementFamily) -> Vec<u64> {
    if fam.count <= 64 {
        (0..fam.count).collect()
    } else {
        let mut v: Vec<u64> = (0..64).map(|k| k * (fam.count - 1) / 63).collect();
        v.dedup();
        v
    }
}

fn fit_tail(tail: &[(u32, f64)]) -> Option<TailFit> {
    let pts: Vec<(f64, f64)> = tail.iter().filter(|t| t.1 > 0.0).map(|&(n, v)| (n as f64, v)).collect();
    let (ns, vs): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (c1, r, res) = exponential_bound(&ns, &vs)?;
    let lambda1 = 1.0 / r;
    Some(TailFit { c1, lambda1, max_residual: res, pass: res < 0.1 && lambda1 > 1.0, tail: tail.to_vec() })
}

/// Checks (H1), (H2), (H4)–(H6) and the derivative bounds on a scheme.
pub fn verify_scheme(scheme: &InducingScheme, sample_depth: u32) -> Result<SchemeReport> {
    let map = scheme.map();
    let w = scheme.w();

    let mut h1_max_defect: f64 = 0.0;
    let mut h1_checked = 0u64;
    let mut c3 = f64::INFINITY;
    let mut c4: f64 = 0.0;
    let mut lambda3: f64 = 0.0;
    let mut dmin_by_tau = Vec::new();
    for fam in scheme.families() {
        for i in sampled_pieces(fam) {
            let j = fam.piece(i);
            let word = fam.piece_word(i);
            let y0 = map.apply_word(&word, j.lo);
            let y1 = map.apply_word(&word, j.hi);
            let defect = (y0.min(y1) - w.lo).abs().max((y0.max(y1) - w.hi).abs());
            h1_max_defect = h1_max_defect.max(defect);
            h1_checked += 1;
            let mut sup: f64 = 0.0;
            let mut inf = f64::INFINITY;
            for k in 0..=8 {
                let d = map.word_derivative(&word, j.at(k as f64 / 8.0)).abs();
                sup = sup.max(d);
                inf = inf.min(d);
            }
            lambda3 = lambda3.max(sup.powf(1.0 / fam.tau as f64));
            dmin_by_tau.push((fam.tau, inf, sup));
        }
    }
    let h1_pass = h1_max_defect < EPS_H1;

    let total_len = w.len();
    let lengths = scheme.level_lengths();
    let tau_min = *lengths.keys().next().unwrap();
    let tau_max = *lengths.keys().last().unwrap();
    let mut tail = Vec::new();
    let mut below = 0.0;
    for n in tau_min..=tau_max {
        tail.push((n, total_len - below));
        below += lengths.get(&n).copied().unwrap_or(0.0);
    }
    let tail_fit = if tail.len() >= 2 {
        fit_tail(&tail).ok_or(Error::TailNotExponential { lambda1: f64::NAN })?
    } else {
        TailFit { c1: 1.0, lambda1: f64::NAN, max_residual: 0.0, pass: false, tail: tail.clone() }
    };
    if !(tail_fit.lambda1 > 1.0) && tail.len() >= 2 {
        return Err(Error::TailNotExponential { lambda1: tail_fit.lambda1 });
    }
    let lambda1_coarse = (tail.len() > 4)
        .then(|| fit_tail(&tail[..tail.len() - 2]).map(|f| f.lambda1))
        .flatten();
    let lambda1 = tail_fit.lambda1;
    if lambda1.is_finite() {
        for &(tau, inf, sup) in &dmin_by_tau {
            c3 = c3.min(inf / lambda1.powi(tau as i32));
            c4 = c4.max(sup / lambda3.powi(tau as i32));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let n_sym = scheme.len();
    let depth = sample_depth.max(1);
    let mut h2_worst_ratio: f64 = 0.0;
    for _ in 0..500 {
        let word: Vec<u64> = (0..depth).map(|_| rng.gen_range(0..n_sym)).collect();
        let len = scheme.cylinder(&word).len();
        let bound = if lambda1 > 1.0 {
            lambda1.powf(-0.9 * depth as f64) * total_len
        } else {
            total_len
        };
        h2_worst_ratio = h2_worst_ratio.max(len / bound);
    }
    let h2_pass = h2_worst_ratio < 1.0;

    let mut table = Vec::new();
    for n in 1..=depth.min(6) {
        let mut worst: f64 = 0.0;
        for _ in 0..64 {
            let word: Vec<u64> = (0..n).map(|_| rng.gen_range(0..n_sym)).collect();
            let words: Vec<Vec<usize>> = word.iter().map(|&s| scheme.word(s)).collect();
            let first = &words[0];
            let mut hi: f64 = 0.0;
            let mut lo = f64::INFINITY;
            for k in 0..=4 {
                let u = w.at(0.02 + 0.96 * k as f64 / 4.0);
                let x = words.iter().rev().fold(u, |z, bw| map.inverse_word(bw, w.clamp(z)));
                let d = map.word_derivative(first, x).abs();
                hi = hi.max(d);
                lo = lo.min(d);
            }
            worst = worst.max(hi / lo - 1.0);
        }
        table.push((n, worst));
    }
    let distortion = if table.iter().all(|t| t.1 < 1e-13) {
        DistortionFit { c2: 0.0, lambda2: None, max_residual: 0.0, pass: true, table }
    } else {
        let (ns, vs): (Vec<f64>, Vec<f64>) = table.iter().map(|&(n, v)| (n as f64, v)).unzip();
        match exponential_bound(&ns, &vs) {
            Some((c2, r, res)) => {
                let lambda2 = 1.0 / r;
                if lambda2 <= 1.0 {
                    return Err(Error::DistortionUnbounded { lambda2 });
                }
                DistortionFit { c2, lambda2: Some(lambda2), max_residual: res, pass: res < 0.1, table }
            }
            None => DistortionFit { c2: table[0].1, lambda2: None, max_residual: f64::NAN, pass: false, table },
        }
    };

    let s_counts = scheme.s_counts();
    let (xs, ys): (Vec<f64>, Vec<f64>) = s_counts.iter().map(|(&n, &c)| (n as f64, (c as f64).ln())).unzip();
    let gamma = match ols(&xs, &ys) {
        Some(line) => {
            let g = line.slope.exp();
            let d = s_counts
                .iter()
                .map(|(&n, &c)| c as f64 / g.powi(n as i32))
                .fold(0.0, f64::max);
            GammaFit { gamma: g, d, max_residual: line.max_residual, pass: line.max_residual < 0.1 }
        }
        None => GammaFit { gamma: 1.0, d: ys.first().map_or(1.0, |y| y.exp()), max_residual: 0.0, pass: true },
    };

    Ok(SchemeReport {
        h1_pass,
        h1_max_defect,
        h1_checked,
        h2_pass,
        h2_worst_ratio,
        tail: tail_fit,
        lambda1_coarse,
        distortion,
        c3,
        c4,
        lambda3,
        s_counts,
        gamma,
    })
}

/// First `n ≥ 1` with `|x_n| < |alpha|` along `orbit = (x_1, x_2, …)`.
pub fn first_entry(orbit: impl IntoIterator<Item = f64>, alpha: f64, cap: usize) -> Result<usize> {
    orbit
        .into_iter()
        .take(cap)
        .position(|x| x.abs() < alpha.abs())
        .map(|p| p + 1)
        .ok_or(Error::CapExceeded { cap })
}

/// `N₀ = min { n : |f^n(0)| < |α| }`.
pub fn compute_n0(map: &UnimodalMap, cap: usize) -> Result<usize> {
    let alpha = map.alpha()?;
    let orbit = std::iter::successors(Some(map.step(0.0)?), |&x| map.step(x).ok());
    first_entry(orbit, alpha, cap)
}

/// Default `M̄`: the midpoint of the window `(log² N₀, 2N₀/3)`, rounded up.
pub fn default_m_bar(n0: usize) -> usize {
    let l = (n0 as f64).ln();
    ((l * l + 2.0 * n0 as f64 / 3.0) / 2.0).ceil() as usize
}

/// First `k` where `Σ_{i ≤ k, τ_i ≥ M̄} τ_i ≥ ρ k`, if any.
pub fn budget_check(taus: &[u32], m_bar: usize, rho: f64) -> Option<usize> {
    let mut sum = 0.0;
    for (i, &t) in taus.iter().enumerate() {
        if t as usize >= m_bar {
            sum += t as f64;
        }
        if sum >= rho * (i + 1) as f64 {
            return Some(i + 1);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongRegularReport {
    pub n0: Option<usize>,
    pub m_bar: usize,
    pub rho: f64,
    pub window_ok: bool,
    /// `M̄ 2^{-M̄} < ρ/100`.
    pub guard_ok: bool,
    /// `(k, F^k(0), τ(F^k(0)))`.
    pub orbit: Vec<(usize, f64, u32)>,
    pub first_failure: Option<usize>,
    pub pass: bool,
}

/// Tracks the induced critical orbit and the large-τ budget.
pub fn strongly_regular_check(
    map: &UnimodalMap,
    scheme: &InducingScheme,
    k_max: usize,
    m_bar: usize,
    rho: f64,
) -> Result<StrongRegularReport> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho} not in (0, 1)")));
    }
    let guard_ok = (m_bar as f64) * 2f64.powi(-(m_bar as i32)) < rho / 100.0;
    if k_max == 0 {
        return Ok(StrongRegularReport {
            n0: None,
            m_bar,
            rho,
            window_ok: true,
            guard_ok,
            orbit: Vec::new(),
            first_failure: None,
            pass: true,
        });
    }
    let n0 = compute_n0(map, 10_000)?;
    let l = (n0 as f64).ln();
    let window_ok = l * l < m_bar as f64 && (m_bar as f64) < 2.0 * n0 as f64 / 3.0;
    if !window_ok {
        return Err(Error::InvalidParameter(format!(
            "M_bar = {m_bar} outside the window (log^2 N0, 2 N0 / 3) for N0 = {n0}"
        )));
    }
    let mut x = map.eval(0.0, n0)?;
    let mut orbit = Vec::with_capacity(k_max);
    let mut taus = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let s = scheme.locate_closed(x).ok_or(Error::OrbitEscapes { k, x })?;
        let tau = scheme.tau(s);
        orbit.push((k, x, tau));
        taus.push(tau);
        x = scheme.apply(s, x);
    }
    let first_failure = budget_check(&taus, m_bar, rho);
    Ok(StrongRegularReport {
        n0: Some(n0),
        m_bar,
        rho,
        window_ok,
        guard_ok,
        orbit,
        first_failure,
        pass: first_failure.is_none(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn plain_elements() {
        let s = build_doubling_scheme(DoublingVariant::Plain, 3).unwrap();
        let got: Vec<(f64, u32)> = s.elements(10).iter().map(|e| (e.interval.len(), e.tau)).collect();
        assert_eq!(got, vec![(0.5, 1), (0.25, 2), (0.125, 3), (0.0625, 4)]);
        let s1 = build_doubling_scheme(DoublingVariant::Plain, 1).unwrap();
        let total: f64 = s1.elements(10).iter().map(|e| e.interval.len()).sum();
        assert_eq!(total, 0.75);
    }

    #[test]
    fn refined_counts() {
        let s = build_doubling_scheme(DoublingVariant::Refined, 3).unwrap();
        let counts = s.s_counts();
        assert_eq!(counts, BTreeMap::from([(2, 2), (4, 4), (7, 16), (12, 256)]));
        let big = build_doubling_scheme(DoublingVariant::Refined, 5).unwrap();
        assert_eq!(big.s_counts()[&38], 1u64 << 32);
        assert!(build_doubling_scheme(DoublingVariant::Refined, 6).is_err());
    }

    #[test]
    fn refined_pieces_cover_w() {
        let s = build_doubling_scheme(DoublingVariant::Refined, 3).unwrap();
        for e in s.elements(u64::MAX) {
            let y0 = s.map().apply_word(&e.word, e.interval.lo);
            let y1 = s.map().apply_word(&e.word, e.interval.hi);
            assert_eq!((y0, y1), (0.0, 1.0), "element {}", e.symbol);
        }
    }

    #[test]
    fn induced_map_examples() {
        let s = build_doubling_scheme(DoublingVariant::Plain, 5).unwrap();
        assert_eq!(s.induced_map(0.75).unwrap(), (0.5, 0));
        let (y, sym) = s.induced_map(0.3).unwrap();
        assert_abs_diff_eq!(y, 0.2, epsilon = 1e-15);
        assert_eq!(sym, 1);
        assert!(matches!(s.induced_map(0.0), Err(Error::NotInW { .. })));
    }

    #[test]
    fn locate_refined_pieces() {
        let s = build_doubling_scheme(DoublingVariant::Refined, 5).unwrap();
        for x in [0.3, 0.51, 0.2600001, 0.02, 0.015625 + 1e-12] {
            let sym = s.locate(x).unwrap();
            assert!(s.interval(sym).contains(x));
        }
    }

    #[test]
    fn coded_periodic_points() {
        let s = build_doubling_scheme(DoublingVariant::Plain, 5).unwrap();
        assert_abs_diff_eq!(s.periodic_point(&[0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.periodic_point(&[1]).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        let x = s.periodic_point(&[0, 1]).unwrap();
        let y = s.apply(1, s.apply(0, x));
        assert_abs_diff_eq!(y, x, epsilon = 1e-10);
        // x = 4(2x - 1) - 1
        assert_abs_diff_eq!(x, 5.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn first_return_doubling() {
        let f = PiecewiseMap::doubling();
        let s = build_first_return_scheme(&f, Interval::new(0.5, 1.0).unwrap(), 3).unwrap();
        let got: Vec<(u32, f64)> = s.elements(10).iter().map(|e| (e.tau, e.interval.len())).collect();
        assert_eq!(got, vec![(1, 0.25), (2, 0.125), (3, 0.0625)]);
        let full = build_first_return_scheme(&f, Interval::new(0.0, 1.0).unwrap(), 1).unwrap();
        assert_eq!(full.len(), 2);
        assert!(full.elements(2).iter().all(|e| e.tau == 1));
    }

    #[test]
    fn first_return_tent() {
        let t = PiecewiseMap::tent(2.0).unwrap();
        let s = build_first_return_scheme(&t, Interval::new(0.5, 1.0).unwrap(), 2).unwrap();
        let taus: Vec<u32> = s.elements(10).iter().map(|e| e.tau).collect();
        assert_eq!(taus, vec![1, 2]);
        assert_abs_diff_eq!(s.interval(0).lo, 0.5);
        assert_abs_diff_eq!(s.interval(0).hi, 0.75);
        assert_abs_diff_eq!(s.interval(1).lo, 0.75);
        assert_abs_diff_eq!(s.interval(1).hi, 0.875);
    }

    #[test]
    fn first_return_rejects_misaligned_base() {
        let f = PiecewiseMap::doubling();
        let r = build_first_return_scheme(&f, Interval::new(0.3, 0.9).unwrap(), 2);
        assert!(matches!(r, Err(Error::NotMarkov(_))));
    }

    #[test]
    fn plain_report() {
        let s = build_doubling_scheme(DoublingVariant::Plain, 20).unwrap();
        let r = verify_scheme(&s, 8).unwrap();
        assert!(r.h1_pass && r.h2_pass);
        assert_abs_diff_eq!(r.tail.lambda1, 2.0, epsilon = 1e-9);
        assert!(r.s_counts.values().all(|&c| c == 1));
        assert_abs_diff_eq!(r.gamma.gamma, 1.0, epsilon = 1e-12);
        assert_eq!(r.distortion.c2, 0.0);
        assert_abs_diff_eq!(r.lambda3, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn unimodal_scheme_is_full_branch() {
        let m = UnimodalMap::quadratic(1.9).unwrap();
        let s = build_unimodal_scheme(&m, 8).unwrap();
        assert!(!s.is_empty());
        let r = verify_scheme(&s, 6).unwrap();
        assert!(r.h1_max_defect < EPS_H1, "defect {}", r.h1_max_defect);
    }

    #[test]
    fn n0_cap_at_two() {
        let m = UnimodalMap::quadratic(2.0).unwrap();
        assert!(matches!(compute_n0(&m, 1000), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn n0_minimal_case() {
        assert_eq!(first_entry([0.1, 0.9], 0.5, 10).unwrap(), 1);
    }

    #[test]
    fn budget_synthetic() {
        assert_eq!(budget_check(&[9, 1, 1], 5, 0.5), Some(1));
        assert_eq!(budget_check(&[1, 1, 1], 5, 0.05), None);
    }

    #[test]
    fn json_round_trip_preserves_elements() {
        let s = build_doubling_scheme(DoublingVariant::Refined, 2).unwrap();
        let doc = s.to_json();
        let text = serde_json::to_string(&doc).unwrap();
        let back = InducingScheme::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.elements(100), s.elements(100));
    }
}
