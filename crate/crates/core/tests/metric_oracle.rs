#[path = "support/oracle.rs"]
mod oracle;

use clip3d::metrics::{self, EvalPair};
use clip3d::AxisAlignedBox;

#[derive(serde::Deserialize)]
struct Sample {
    prediction: String,
    references: Vec<String>,
}

fn corpus() -> (Vec<String>, Vec<Vec<String>>) {
    let raw = include_str!("fixtures/metric_corpus.json");
    let s: Vec<Sample> = serde_json::from_str(raw).unwrap();
    assert_eq!(s.len(), 20);
    s.into_iter().map(|x| (x.prediction, x.references)).unzip()
}

fn close(name: &str, got: f64, want: f64) {
    assert!((got - want).abs() <= 1e-6, "{name}: library {got} vs oracle {want}");
}

#[test]
fn tokenizers_agree() {
    let (p, r) = corpus();
    for s in p.iter().chain(r.iter().flatten()) {
        assert_eq!(clip3d::text::tokenize(s), oracle::tokens(s));
    }
}

#[test]
fn stemmers_agree() {
    for w in ["chairs", "glasses", "bodies", "bus", "glass", "running", "turned", "quickly", "sing", "ties", "tables", "is"] {
        assert_eq!(metrics::stem(w), oracle::stem(w), "{w}");
    }
}

#[test]
fn bleu_matches_oracle() {
    let (p, r) = corpus();
    for n in [1, 2, 3, 4] {
        close(&format!("bleu{n}"), metrics::bleu(&p, &r, n).unwrap(), oracle::bleu(&p, &r, n));
    }
    assert!(oracle::bleu(&p, &r, 4) > 0.0);
}

#[test]
fn rouge_and_meteor_match_oracle_per_sample() {
    let (p, r) = corpus();
    for (x, rs) in p.iter().zip(&r) {
        close("rouge_l", metrics::rouge_l(x, rs), oracle::rouge_l(x, rs));
        close("meteor", metrics::meteor(x, rs), oracle::meteor(x, rs));
    }
}

#[test]
fn cider_matches_oracle() {
    let (p, r) = corpus();
    let lib = metrics::cider(&p, &r).unwrap();
    close("cider", lib, oracle::cider(&p, &r));
    let sub = 5..12;
    close("cider subset", metrics::cider(&p[sub.clone()], &r[sub.clone()]).unwrap(), oracle::cider(&p[sub.clone()], &r[sub]));
}

#[test]
fn exact_match_hand_count() {
    let (p, r) = corpus();
    let pairs: Vec<EvalPair> = p
        .iter()
        .zip(&r)
        .map(|(x, rs)| EvalPair::new(x, &rs.iter().map(String::as_str).collect::<Vec<_>>()))
        .collect();
    // Exact hits: samples 0, 1 and 9.
    let em: f64 = pairs.iter().map(|e| metrics::em_at_1(&e.prediction, &e.references)).sum::<f64>() / 20.0;
    assert_eq!(em, 3.0 / 20.0);
    assert_eq!(metrics::evaluate(&pairs).unwrap().em1, 0.15);
}

fn slab(x0: f64, x1: f64) -> AxisAlignedBox {
    AxisAlignedBox::from_min_max([x0, 0.0, 0.0], [x1, 1.0, 1.0]).unwrap()
}

pub fn iou_pairs() -> Vec<EvalPair> {
    // IoUs: 1, 1/2, 1/4, 1/3, 0.
    [((0.0, 1.0), (0.0, 1.0)), ((0.0, 3.0), (1.0, 4.0)), ((0.0, 5.0), (3.0, 8.0)), ((0.0, 2.0), (1.0, 3.0)), ((0.0, 1.0), (2.0, 3.0))]
        .iter()
        .map(|&((a, b), (c, d))| EvalPair { pred_box: Some(slab(a, b)), gt_box: Some(slab(c, d)), ..EvalPair::new("x", &["x"]) })
        .collect()
}

#[test]
fn acc_at_iou_hand_count() {
    let pairs = iou_pairs();
    assert_eq!(metrics::acc_at_iou(&pairs, 0.25).unwrap(), 0.6);
    assert_eq!(metrics::acc_at_iou(&pairs, 0.5).unwrap(), 0.2);
}
