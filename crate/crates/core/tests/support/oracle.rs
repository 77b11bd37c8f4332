//! Slow reference implementations of the text metrics, written from the
//! metric definitions without sharing any code with the library.

#![allow(dead_code)]

use std::collections::BTreeMap;

pub fn tokens(s: &str) -> Vec<String> {
    let lower = s.to_lowercase();
    let mut out: Vec<String> = Vec::new();
    let mut word = false;
    for c in lower.chars() {
        if c.is_alphanumeric() {
            if word {
                out.last_mut().unwrap().push(c);
            } else {
                out.push(c.to_string());
                word = true;
            }
        } else {
            word = false;
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    out
}

fn count(seq: &[String], gram: &[String]) -> usize {
    if gram.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - gram.len()).filter(|&i| &seq[i..i + gram.len()] == gram).count()
}

pub fn bleu(preds: &[String], refs: &[Vec<String>], max_n: usize) -> f64 {
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (p, rs) in preds.iter().zip(refs) {
        let h = tokens(p);
        let rt: Vec<Vec<String>> = rs.iter().map(|x| tokens(x)).collect();
        c += h.len();
        let mut best = rt[0].len();
        for x in &rt {
            let (d, bd) = (x.len().abs_diff(h.len()), best.abs_diff(h.len()));
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
        for n in 1..=max_n {
            if h.len() < n {
                continue;
            }
            let mut seen: Vec<&[String]> = Vec::new();
            for i in 0..=h.len() - n {
                let g = &h[i..i + n];
                total[n - 1] += 1;
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let cap = rt.iter().map(|x| count(x, g)).max().unwrap_or(0);
                matched[n - 1] += count(&h, g).min(cap);
            }
        }
    }
    if c == 0 || matched.contains(&0) {
        return 0.0;
    }
    let mut s = 0.0;
    for n in 0..max_n {
        s += (matched[n] as f64).ln() - (total[n] as f64).ln();
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (s / max_n as f64).exp()
}

fn lcs(a: &[String], b: &[String], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let key = (a.len(), b.len());
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let v = if a[0] == b[0] {
        1 + lcs(&a[1..], &b[1..], memo)
    } else {
        lcs(&a[1..], b, memo).max(lcs(a, &b[1..], memo))
    };
    memo.insert(key, v);
    v
}

pub fn rouge_l(pred: &str, refs: &[String]) -> f64 {
    let h = tokens(pred);
    let mut best: f64 = 0.0;
    for r in refs {
        let r = tokens(r);
        let l = lcs(&h, &r, &mut BTreeMap::new()) as f64;
        if l > 0.0 {
            let (p, rc) = (l / h.len() as f64, l / r.len() as f64);
            let b = 1.2f64 * 1.2;
            best = best.max((1.0 + b) * p * rc / (rc + b * p));
        }
    }
    best
}

/// Rules: keep words of at most three letters; first of sses→ss, ies→y,
/// keep ss, keep us, drop s; then the first of ing, ed, ly whose removal
/// leaves at least three letters.
pub fn stem(w: &str) -> String {
    let w = w.to_lowercase();
    let ch: Vec<char> = w.chars().collect();
    if ch.len() <= 3 {
        return w;
    }
    let ends = |v: &[char], s: &str| {
        let s: Vec<char> = s.chars().collect();
        v.len() >= s.len() && v[v.len() - s.len()..] == s[..]
    };
    let mut v = ch.clone();
    if ends(&v, "sses") {
        v.truncate(v.len() - 2);
    } else if ends(&v, "ies") {
        v.truncate(v.len() - 3);
        v.push('y');
    } else if ends(&v, "ss") || ends(&v, "us") {
    } else if ends(&v, "s") {
        v.pop();
    }
    for suf in ["ing", "ed", "ly"] {
        let k = suf.chars().count();
        if ends(&v, suf) && v.len() - k >= 3 {
            v.truncate(v.len() - k);
            break;
        }
    }
    v.into_iter().collect()
}

/// Enumerates every partial one-to-one matching of equal stems and keeps the
/// one with most matches, then fewest chunks.
fn best_alignment(h: &[String], r: &[String]) -> (usize, usize) {
    fn rec(i: usize, h: &[String], r: &[String], used: &mut Vec<bool>, pairs: &mut Vec<(usize, usize)>, best: &mut (usize, usize)) {
        if i == h.len() {
            let m = pairs.len();
            let mut chunks = 0;
            for k in 0..m {
                if k == 0 || pairs[k].0 != pairs[k - 1].0 + 1 || pairs[k].1 != pairs[k - 1].1 + 1 {
                    chunks += 1;
                }
            }
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        rec(i + 1, h, r, used, pairs, best);
        for j in 0..r.len() {
            if !used[j] && h[i] == r[j] {
                used[j] = true;
                pairs.push((i, j));
                rec(i + 1, h, r, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    rec(0, h, r, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    best
}

pub fn meteor(pred: &str, refs: &[String]) -> f64 {
    let h: Vec<String> = tokens(pred).iter().map(|w| stem(w)).collect();
    let mut best: f64 = 0.0;
    for r in refs {
        let r: Vec<String> = tokens(r).iter().map(|w| stem(w)).collect();
        let (m, ch) = best_alignment(&h, &r);
        if m == 0 {
            continue;
        }
        let m = m as f64;
        let (p, rc) = (m / h.len() as f64, m / r.len() as f64);
        let f = 10.0 * p * rc / (rc + 9.0 * p);
        best = best.max(f * (1.0 - 0.5 * (ch as f64 / m).powi(3)));
    }
    best
}

fn grams(t: &[String]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for n in 1..=4 {
        for i in 0..t.len().saturating_sub(n - 1) {
            out.push(t[i..i + n].to_vec());
        }
    }
    out
}

pub fn cider(preds: &[String], refs: &[Vec<String>]) -> f64 {
    let n_docs = preds.len() as f64;
    let ref_grams: Vec<Vec<Vec<String>>> =
        refs.iter().map(|rs| rs.iter().flat_map(|r| grams(&tokens(r))).collect()).collect();
    let df = |g: &Vec<String>| ref_grams.iter().filter(|set| set.contains(g)).count() as f64;
    let tfidf = |t: &[String]| -> Vec<(Vec<String>, f64)> {
        let mut v: Vec<(Vec<String>, f64)> = Vec::new();
        for g in grams(t) {
            if v.iter().any(|(x, _)| *x == g) {
                continue;
            }
            let tf = grams(t).iter().filter(|x| **x == g).count() as f64;
            v.push((g.clone(), tf * (n_docs.ln() - df(&g).max(1.0).ln())));
        }
        v
    };
    let mut sum = 0.0;
    for (p, rs) in preds.iter().zip(refs) {
        let ht = tokens(p);
        let hv = tfidf(&ht);
        let mut acc = 0.0;
        for r in rs {
            let rt = tokens(r);
            let rv = tfidf(&rt);
            let d = ht.len().saturating_sub(1) as f64 - rt.len().saturating_sub(1) as f64;
            let gauss = (-d * d / 72.0).exp();
            for n in 1..=4 {
                let hn: f64 = hv.iter().filter(|(g, _)| g.len() == n).map(|(_, x)| x * x).sum::<f64>().sqrt();
                let rn: f64 = rv.iter().filter(|(g, _)| g.len() == n).map(|(_, x)| x * x).sum::<f64>().sqrt();
                let mut dot = 0.0;
                for (g, a) in hv.iter().filter(|(g, _)| g.len() == n) {
                    for (g2, b) in &rv {
                        if g == g2 {
                            dot += a.min(*b) * b;
                        }
                    }
                }
                if hn > 0.0 && rn > 0.0 {
                    dot /= hn * rn;
                }
                acc += gauss * dot / 4.0;
            }
        }
        sum += 10.0 * acc / rs.len() as f64;
    }
    sum / n_docs
}
