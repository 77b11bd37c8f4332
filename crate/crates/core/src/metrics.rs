//! Answer and localization metrics: EM@1, corpus BLEU, ROUGE-L, METEOR,
//! CIDEr-D and Acc@IoU.
//!
//! Every text metric uses [`crate::text::tokenize`]. Stored values are raw
//! (CIDEr in `[0, 10]`); the ×100 display scaling happens only in
//! [`MetricReport::table`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, AxisAlignedBox};
use crate::text::{normalize_answer, tokenize};

pub const ROUGE_BETA: f64 = 1.2;
pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_GAMMA: f64 = 0.5;
pub const METEOR_THETA: f64 = 3.0;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_MAX_N: usize = 4;
/// Node budget for the METEOR minimum-chunk alignment search.
pub const METEOR_SEARCH_NODES: usize = 200_000;

/// One predicted answer with its references and optional boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    #[serde(default)]
    pub id: String,
    pub prediction: String,
    pub references: Vec<String>,
    pub pred_box: Option<AxisAlignedBox>,
    pub gt_box: Option<AxisAlignedBox>,
}

impl EvalPair {
    pub fn new(prediction: &str, references: &[&str]) -> Self {
        EvalPair {
            id: String::new(),
            prediction: prediction.to_string(),
            references: references.iter().map(|s| s.to_string()).collect(),
            pred_box: None,
            gt_box: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::Metric(format!("sample {:?} has no references", self.id)));
        }
        if self.pred_box.is_some() != self.gt_box.is_some() {
            return Err(Error::Metric(format!("sample {:?} has only one of its two boxes", self.id)));
        }
        Ok(())
    }
}

/// 1 when the normalized prediction equals any normalized reference.
pub fn em_at_1(pred: &str, refs: &[String]) -> f64 {
    let p = normalize_answer(pred);
    f64::from(u8::from(refs.iter().any(|r| normalize_answer(r) == p)))
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Per-sample BLEU statistics; corpus BLEU sums them before combining.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuCounts {
    /// Clipped matches for n = 1..4.
    pub matches: [usize; 4],
    /// Candidate n-gram counts for n = 1..4.
    pub totals: [usize; 4],
    pub hyp_len: usize,
    /// Length of the reference closest in length (shorter on ties).
    pub ref_len: usize,
}

impl BleuCounts {
    pub fn of(pred: &str, refs: &[String]) -> Self {
        let hyp = tokenize(pred);
        let refs: Vec<Vec<String>> = refs.iter().map(|r| tokenize(r)).collect();
        let mut c = BleuCounts { hyp_len: hyp.len(), ..Default::default() };
        c.ref_len = refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .unwrap_or(0);
        for n in 1..=4 {
            let h = ngrams(&hyp, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (g, k) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            c.totals[n - 1] = h.values().sum();
            c.matches[n - 1] = h.iter().map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        }
        c
    }
}

/// Corpus BLEU from summed statistics. No smoothing: a zero match count at
/// any order gives 0.
pub fn bleu_from_counts(counts: &[BleuCounts], max_n: usize) -> Result<f64> {
    if !(1..=4).contains(&max_n) {
        return Err(Error::Metric(format!("BLEU order {max_n} outside 1..=4")));
    }
    if counts.is_empty() {
        return Err(Error::Metric("BLEU needs a nonempty corpus".into()));
    }
    let c: usize = counts.iter().map(|x| x.hyp_len).sum();
    let r: usize = counts.iter().map(|x| x.ref_len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let m: usize = counts.iter().map(|x| x.matches[n]).sum();
        let t: usize = counts.iter().map(|x| x.totals[n]).sum();
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * (log_sum / max_n as f64).exp())
}

pub fn bleu(preds: &[String], refs: &[Vec<String>], max_n: usize) -> Result<f64> {
    if preds.len() != refs.len() {
        return Err(Error::Metric("predictions and references differ in length".into()));
    }
    let counts: Vec<BleuCounts> = preds.iter().zip(refs).map(|(p, r)| BleuCounts::of(p, r)).collect();
    bleu_from_counts(&counts, max_n)
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS F-measure `(1+β²)PR/(R+β²P)`, maximized over references.
pub fn rouge_l(pred: &str, refs: &[String]) -> f64 {
    let hyp = tokenize(pred);
    let b2 = ROUGE_BETA * ROUGE_BETA;
    refs.iter()
        .map(|r| {
            let r = tokenize(r);
            let l = lcs(&hyp, &r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / hyp.len() as f64;
            let rec = l / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

/// Suffix-stripping stemmer used for METEOR's stem matches. Words of three
/// letters or fewer are kept. Otherwise the first applicable rule fires:
/// `sses→ss`, `ies→y`, `ss` kept, `us` kept, `s→`; then, on the result,
/// `ing→`, `ed→` or `ly→` when at least three letters remain.
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    if w.chars().count() <= 3 {
        return w;
    }
    let mut s = if let Some(b) = w.strip_suffix("sses") {
        format!("{b}ss")
    } else if let Some(b) = w.strip_suffix("ies") {
        format!("{b}y")
    } else if w.ends_with("ss") || w.ends_with("us") {
        w.clone()
    } else if let Some(b) = w.strip_suffix('s') {
        b.to_string()
    } else {
        w.clone()
    };
    for suf in ["ing", "ed", "ly"] {
        if let Some(b) = s.strip_suffix(suf) {
            if b.chars().count() >= 3 {
                s = b.to_string();
                break;
            }
        }
    }
    s
}

struct ChunkSearch<'a> {
    hyp: &'a [String],
    ref_stems: &'a [String],
    skips_left: HashMap<String, usize>,
    used: Vec<bool>,
    best: usize,
    nodes: usize,
}

impl ChunkSearch<'_> {
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        self.nodes += 1;
        if chunks >= self.best || self.nodes > METEOR_SEARCH_NODES {
            return;
        }
        if i == self.hyp.len() {
            self.best = chunks;
            return;
        }
        let s = &self.hyp[i];
        // Prefer continuing the current chunk, then other positions in order.
        let mut options: Vec<usize> = (0..self.ref_stems.len())
            .filter(|&j| !self.used[j] && &self.ref_stems[j] == s)
            .collect();
        if let Some(p) = prev {
            if let Some(pos) = options.iter().position(|&j| j == p + 1) {
                options.swap(0, pos);
            }
        }
        for j in options {
            self.used[j] = true;
            let extra = usize::from(prev.is_none_or(|p| p + 1 != j));
            self.run(i + 1, Some(j), chunks + extra);
            self.used[j] = false;
        }
        let left = self.skips_left.get(s).copied().unwrap_or(0);
        if left > 0 {
            self.skips_left.insert(s.clone(), left - 1);
            self.run(i + 1, None, chunks);
            self.skips_left.insert(s.clone(), left);
        }
    }
}

/// `(matches, chunks)` of the maximum alignment with fewest chunks.
fn align(hyp: &[String], reference: &[String]) -> (usize, usize) {
    let hs: Vec<String> = hyp.iter().map(|w| stem(w)).collect();
    let rs: Vec<String> = reference.iter().map(|w| stem(w)).collect();
    let mut hc: HashMap<&str, usize> = HashMap::new();
    let mut rc: HashMap<&str, usize> = HashMap::new();
    hs.iter().for_each(|s| *hc.entry(s).or_insert(0) += 1);
    rs.iter().for_each(|s| *rc.entry(s).or_insert(0) += 1);
    let mut matches = 0;
    let mut skips_left = HashMap::new();
    for (s, &h) in &hc {
        let m = h.min(rc.get(s).copied().unwrap_or(0));
        matches += m;
        skips_left.insert(s.to_string(), h - m);
    }
    if matches == 0 {
        return (0, 0);
    }
    let mut search = ChunkSearch { hyp: &hs, ref_stems: &rs, skips_left, used: vec![false; rs.len()], best: usize::MAX, nodes: 0 };
    search.run(0, None, 0);
    (matches, search.best)
}

/// Exact-or-stem unigram METEOR, maximized over references.
pub fn meteor(pred: &str, refs: &[String]) -> f64 {
    let hyp = tokenize(pred);
    refs.iter()
        .map(|r| {
            let r = tokenize(r);
            let (m, chunks) = align(&hyp, &r);
            if m == 0 {
                return 0.0;
            }
            let m = m as f64;
            let p = m / hyp.len() as f64;
            let rec = m / r.len() as f64;
            let f = p * rec / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * rec);
            let penalty = METEOR_GAMMA * (chunks as f64 / m).powf(METEOR_THETA);
            f * (1.0 - penalty)
        })
        .fold(0.0, f64::max)
}

type NgramVec = Vec<HashMap<Vec<String>, f64>>;

fn all_ngrams(tokens: &[String]) -> HashMap<Vec<String>, usize> {
    let mut out = HashMap::new();
    for n in 1..=CIDER_MAX_N {
        if tokens.len() >= n {
            for w in tokens.windows(n) {
                *out.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
    }
    out
}

struct Cider {
    df: HashMap<Vec<String>, f64>,
    log_n: f64,
}

impl Cider {
    fn vector(&self, counts: &HashMap<Vec<String>, usize>) -> (NgramVec, [f64; CIDER_MAX_N], usize) {
        let mut vec: NgramVec = vec![HashMap::new(); CIDER_MAX_N];
        let mut norm = [0.0; CIDER_MAX_N];
        let mut length = 0;
        for (g, &tf) in counts {
            let n = g.len() - 1;
            let df = self.df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
            let v = tf as f64 * (self.log_n - df);
            norm[n] += v * v;
            vec[n].insert(g.clone(), v);
            if n == 1 {
                length += tf;
            }
        }
        (vec, norm.map(f64::sqrt), length)
    }

    fn score(&self, pred: &str, refs: &[String]) -> f64 {
        let (hv, hn, hl) = self.vector(&all_ngrams(&tokenize(pred)));
        let mut total = [0.0; CIDER_MAX_N];
        for r in refs {
            let (rv, rn, rl) = self.vector(&all_ngrams(&tokenize(r)));
            let delta = hl as f64 - rl as f64;
            let gauss = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for n in 0..CIDER_MAX_N {
                let mut val = 0.0;
                for (g, &h) in &hv[n] {
                    if let Some(&r) = rv[n].get(g) {
                        val += h.min(r) * r;
                    }
                }
                if hn[n] != 0.0 && rn[n] != 0.0 {
                    val /= hn[n] * rn[n];
                }
                total[n] += val * gauss;
            }
        }
        total.iter().sum::<f64>() / CIDER_MAX_N as f64 / refs.len() as f64 * 10.0
    }
}

/// Per-sample CIDEr-D scores; the corpus score is their mean. Document
/// frequencies come from the references, so at least two samples are needed.
pub fn cider_scores(preds: &[String], refs: &[Vec<String>]) -> Result<Vec<f64>> {
    if preds.len() != refs.len() {
        return Err(Error::Metric("predictions and references differ in length".into()));
    }
    if preds.len() < 2 {
        return Err(Error::Metric("CIDEr needs at least two samples".into()));
    }
    let mut df: HashMap<Vec<String>, f64> = HashMap::new();
    for rs in refs {
        let mut seen = HashSet::new();
        for r in rs {
            seen.extend(all_ngrams(&tokenize(r)).into_keys());
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let c = Cider { df, log_n: (preds.len() as f64).ln() };
    Ok(preds.iter().zip(refs).map(|(p, r)| c.score(p, r)).collect())
}

pub fn cider(preds: &[String], refs: &[Vec<String>]) -> Result<f64> {
    let s = cider_scores(preds, refs)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Share of pairs whose predicted box has IoU strictly above `threshold`.
pub fn acc_at_iou(pairs: &[EvalPair], threshold: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    let mut hits = 0usize;
    for p in pairs {
        match (&p.pred_box, &p.gt_box) {
            (Some(a), Some(b)) => hits += usize::from(iou(a, b) > threshold),
            _ => return Err(Error::Metric(format!("sample {:?} is missing a box", p.id))),
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub id: String,
    pub em1: f64,
    pub bleu: BleuCounts,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: Option<f64>,
    pub iou: Option<f64>,
}

/// Aggregates: `em1`, `rouge_l`, `meteor`, `cider` and both accuracies are
/// means over samples; BLEU is computed from the summed per-sample counts.
/// `cider` is absent for single-sample corpora and the accuracies when the
/// samples carry no boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub em1: f64,
    pub bleu1: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: Option<f64>,
    pub acc025: Option<f64>,
    pub acc05: Option<f64>,
    pub samples: Vec<SampleScores>,
}

pub fn evaluate(pairs: &[EvalPair]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Metric("no samples to evaluate".into()));
    }
    for p in pairs {
        p.validate()?;
    }
    let preds: Vec<String> = pairs.iter().map(|p| p.prediction.clone()).collect();
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.references.clone()).collect();
    let ciders = if pairs.len() >= 2 { Some(cider_scores(&preds, &refs)?) } else { None };
    let with_boxes = pairs.iter().filter(|p| p.gt_box.is_some()).count();
    if with_boxes != 0 && with_boxes != pairs.len() {
        return Err(Error::Metric("either every sample or none must carry boxes".into()));
    }
    let samples: Vec<SampleScores> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| SampleScores {
            id: p.id.clone(),
            em1: em_at_1(&p.prediction, &p.references),
            bleu: BleuCounts::of(&p.prediction, &p.references),
            rouge_l: rouge_l(&p.prediction, &p.references),
            meteor: meteor(&p.prediction, &p.references),
            cider: ciders.as_ref().map(|c| c[i]),
            iou: p.pred_box.zip(p.gt_box).map(|(a, b)| iou(&a, &b)),
        })
        .collect();
    let n = samples.len() as f64;
    let mean = |f: &dyn Fn(&SampleScores) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let counts: Vec<BleuCounts> = samples.iter().map(|s| s.bleu).collect();
    let acc = |t: f64| (with_boxes > 0).then(|| mean(&|s| f64::from(u8::from(s.iou.expect("boxes present") > t))));
    Ok(MetricReport {
        em1: mean(&|s| s.em1),
        bleu1: bleu_from_counts(&counts, 1)?,
        bleu4: bleu_from_counts(&counts, 4)?,
        rouge_l: mean(&|s| s.rouge_l),
        meteor: mean(&|s| s.meteor),
        cider: ciders.as_ref().map(|_| mean(&|s| s.cider.expect("cider present"))),
        acc025: acc(0.25),
        acc05: acc(0.5),
        samples,
    })
}

impl MetricReport {
    /// Aligned plain-text table, every value ×100.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let cols = [
            ("EM@1", Some(self.em1)),
            ("BLEU-1", Some(self.bleu1)),
            ("BLEU-4", Some(self.bleu4)),
            ("ROUGE", Some(self.rouge_l)),
            ("METEOR", Some(self.meteor)),
            ("CIDEr", self.cider),
            ("Acc@0.25", self.acc025),
            ("Acc@0.5", self.acc05),
        ];
        let cells: Vec<(String, String)> = cols.iter().map(|(h, v)| (h.to_string(), fmt(*v))).collect();
        let widths: Vec<usize> = cells.iter().map(|(h, v)| h.len().max(v.len())).collect();
        let mut out = String::new();
        for (i, (h, _)) in cells.iter().enumerate() {
            let _ = write!(out, "{}{:>w$}", if i == 0 { "" } else { "  " }, h, w = widths[i]);
        }
        out.push('\n');
        for (i, (_, v)) in cells.iter().enumerate() {
            let _ = write!(out, "{}{:>w$}", if i == 0 { "" } else { "  " }, v, w = widths[i]);
        }
        out.push('\n');
        out
    }

    pub fn summary(&self) -> BTreeMap<&'static str, Option<f64>> {
        BTreeMap::from([
            ("em1", Some(self.em1)),
            ("bleu1", Some(self.bleu1)),
            ("bleu4", Some(self.bleu4)),
            ("rouge_l", Some(self.rouge_l)),
            ("meteor", Some(self.meteor)),
            ("cider", self.cider),
            ("acc025", self.acc025),
            ("acc05", self.acc05),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn em_examples() {
        assert_eq!(em_at_1("Brown", &s(&["brown"])), 1.0);
        assert_eq!(em_at_1("brown chair", &s(&["brown"])), 0.0);
        assert_eq!(em_at_1(" two ", &s(&["two", "2"])), 1.0);
    }

    #[test]
    fn bleu_examples() {
        let p = s(&["the cat sat on the mat", "a dog"]);
        let r = vec![s(&["the cat sat on the mat"]), s(&["a dog"])];
        assert_eq!(bleu(&p, &r, 1).unwrap(), 1.0);
        assert_eq!(bleu(&s(&["the cat"]), &[s(&["the dog"])], 1).unwrap(), 0.5);
        let v = bleu(&s(&["a"]), &[s(&["a b c d"])], 1).unwrap();
        assert!((v - (-3.0f64).exp()).abs() < 1e-15);
        assert_eq!(bleu(&s(&["a b"]), &[s(&["a c"])], 2).unwrap(), 0.0);
        assert_eq!(bleu(&s(&[""]), &[s(&["a"])], 1).unwrap(), 0.0);
        assert!(bleu(&s(&["a"]), &[s(&["a"])], 5).is_err());
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("a b c", &s(&["a b c"])), 1.0);
        let b2 = 1.44;
        let expect = (1.0 + b2) * (2.0 / 3.0) / (2.0 / 3.0 + b2);
        assert!((rouge_l("a c", &s(&["a b c"])) - expect).abs() < 1e-15);
        assert_eq!(rouge_l("x y", &s(&["a b"])), 0.0);
        assert_eq!(rouge_l("a c", &s(&["q", "a c"])), 1.0);
    }

    #[test]
    fn stemmer_rules() {
        assert_eq!(stem("chairs"), "chair");
        assert_eq!(stem("glasses"), "glass");
        assert_eq!(stem("shelves"), "shelve");
        assert_eq!(stem("libraries"), "library");
        assert_eq!(stem("running"), "runn");
        assert_eq!(stem("bus"), "bus");
        assert_eq!(stem("quickly"), "quick");
        assert_eq!(stem("sing"), "sing");
    }

    #[test]
    fn meteor_examples() {
        assert_eq!(meteor("red", &s(&["red"])), 0.5);
        assert_eq!(meteor("red", &s(&["blue"])), 0.0);
        let same = meteor("the brown chair near the door", &s(&["the brown chair near the door"]));
        let swapped = meteor("the door near the brown chair", &s(&["the brown chair near the door"]));
        assert!(swapped < same);
        assert_eq!(meteor("chairs", &s(&["chair"])), 0.5);
    }

    #[test]
    fn meteor_prefers_contiguous_alignment() {
        // "a b" can align as one chunk even though "a" occurs twice.
        let (m, c) = align(&s(&["a", "b"]), &s(&["a", "x", "a", "b"]));
        assert_eq!((m, c), (2, 1));
    }

    #[test]
    fn cider_examples() {
        let p = s(&["the red chair is next to the table", "blue sofa by window", "two beds"]);
        let r = vec![s(&["the red chair is next to the table"]), s(&["one green lamp on a desk"]), s(&["three doors"])];
        let sc = cider_scores(&p, &r).unwrap();
        assert!((sc[0] - 10.0).abs() < 1e-9, "{}", sc[0]);
        assert_eq!(sc[1], 0.0);
        assert!(cider(&p[..1], &r[..1]).is_err());
    }

    #[test]
    fn acc_boundary_is_strict() {
        let b = AxisAlignedBox::new([0.0; 3], [1.0; 3]).unwrap();
        let mut pair = EvalPair::new("x", &["x"]);
        pair.pred_box = Some(b);
        pair.gt_box = Some(b);
        assert_eq!(acc_at_iou(&[pair.clone()], 0.5).unwrap(), 1.0);
        assert_eq!(acc_at_iou(&[pair.clone()], 1.0).unwrap(), 0.0);
        pair.gt_box = None;
        assert!(acc_at_iou(&[pair], 0.5).is_err());
    }

    #[test]
    fn report_aggregates_and_table() {
        let mut a = EvalPair::new("brown", &["brown"]);
        let mut b = EvalPair::new("two", &["three", "3"]);
        let g = AxisAlignedBox::new([0.0; 3], [1.0; 3]).unwrap();
        a.pred_box = Some(g);
        a.gt_box = Some(g);
        b.pred_box = Some(AxisAlignedBox::new([3.0; 3], [1.0; 3]).unwrap());
        b.gt_box = Some(g);
        let r = evaluate(&[a, b]).unwrap();
        assert_eq!(r.em1, 0.5);
        assert_eq!(r.acc025, Some(0.5));
        assert_eq!(r.rouge_l, (r.samples[0].rouge_l + r.samples[1].rouge_l) / 2.0);
        let t = r.table();
        assert!(t.lines().next().unwrap().contains("EM@1"));
        assert!(t.contains("50.00"));
    }
}
