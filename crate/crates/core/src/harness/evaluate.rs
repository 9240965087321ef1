//! Deterministic evaluation with per-template, per-relation and per-azimuth
//! breakdowns, plus the majority-answer floor.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::loader::{eval_view, prepare, run_ordered, BatchSpec, EncodedSplit, ViewPick, Vocabs};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, VqaModel};
use crate::scene::Split;

/// Width of one azimuth bin, degrees.
pub const AZIMUTH_BIN_DEG: f64 = 30.0;
pub const AZIMUTH_BINS: usize = 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn add(&mut self, ok: bool) {
        self.correct += ok as usize;
        self.total += 1;
    }

    /// `None` when empty.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub questions: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub per_template: BTreeMap<String, Tally>,
    pub per_relation: BTreeMap<String, Tally>,
    /// Bin `b` covers azimuths in `[30b, 30(b+1))` degrees.
    pub per_azimuth_bin: Vec<Tally>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{}: {} questions, loss {:.4}, accuracy {:.2}%\n",
            self.split,
            self.questions,
            self.loss,
            100.0 * self.accuracy
        );
        let mut section = |title: &str, rows: Vec<(String, Tally)>| {
            s.push_str(title);
            s.push('\n');
            for (k, t) in rows {
                let acc = t.accuracy().map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a));
                s.push_str(&format!("  {k:<22} {acc:>8}  ({}/{})\n", t.correct, t.total));
            }
        };
        section("per template", self.per_template.iter().map(|(k, t)| (k.clone(), *t)).collect());
        section("per relation", self.per_relation.iter().map(|(k, t)| (k.clone(), *t)).collect());
        section(
            "per azimuth bin",
            self.per_azimuth_bin
                .iter()
                .enumerate()
                .map(|(b, t)| {
                    let lo = b as f64 * AZIMUTH_BIN_DEG;
                    (format!("[{lo:.0}, {:.0})", lo + AZIMUTH_BIN_DEG), *t)
                })
                .collect(),
        );
        s
    }
}

pub fn azimuth_bin(azimuth_deg: f64) -> usize {
    let a = azimuth_deg.rem_euclid(360.0);
    ((a / AZIMUTH_BIN_DEG) as usize).min(AZIMUTH_BINS - 1)
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            batch_size: 64,
            workers: 1,
        }
    }
}

/// Full pass over `split` in eval mode. Each question is shown its fixed
/// [`eval_view`], or the canonical render when `canonical` is non-empty.
pub fn evaluate_encoded(
    model: &VqaModel<f32>,
    split: &Split,
    enc: &EncodedSplit,
    canonical: &[Tensor<f32>],
    opts: EvalOptions,
) -> Result<EvalReport> {
    if enc.is_empty() {
        return Err(Error::Data(format!("split {} has no questions", split.name)));
    }
    let items: Vec<usize> = (0..enc.len()).collect();
    let jobs: Vec<BatchSpec> = items
        .chunks(opts.batch_size.max(1))
        .map(|chunk| BatchSpec {
            items: chunk.to_vec(),
            views: chunk
                .iter()
                .map(|&i| {
                    if canonical.is_empty() {
                        let (s, q) = enc.index[i];
                        let r = &split.records[s];
                        ViewPick::Index(eval_view(r.scene.id, q, r.images.len()))
                    } else {
                        ViewPick::Canonical
                    }
                })
                .collect(),
        })
        .collect();
    let mut report = EvalReport {
        split: split.name.clone(),
        questions: enc.len(),
        loss: 0.0,
        accuracy: 0.0,
        per_template: BTreeMap::new(),
        per_relation: BTreeMap::new(),
        per_azimuth_bin: vec![Tally::default(); AZIMUTH_BINS],
    };
    let mut overall = Tally::default();
    let mut loss_sum = 0.0;
    run_ordered(&jobs, opts.workers, |spec| prepare(split, enc, canonical, spec), |p| {
        let tape = Tape::new();
        let logits = model.forward(&tape, &p.batch, false)?;
        let loss = tape.softmax_cross_entropy(logits, &p.targets)?.item()? as f64;
        loss_sum += loss * p.targets.len() as f64;
        let preds = argmax_rows(&logits.value());
        for (k, (&pred, &target)) in preds.iter().zip(&p.targets).enumerate() {
            let ok = pred == target;
            let (s, q) = enc.index[p.items[k]];
            let qa = &split.records[s].qa[q];
            overall.add(ok);
            report.per_template.entry(qa.template.name().to_string()).or_default().add(ok);
            let rels: BTreeSet<&str> = qa.program.relations().iter().map(|r| r.name()).collect();
            for r in rels {
                report.per_relation.entry(r.to_string()).or_default().add(ok);
            }
            report.per_azimuth_bin[azimuth_bin(p.azimuths[k])].add(ok);
        }
        Ok(())
    })?;
    report.loss = loss_sum / overall.total as f64;
    report.accuracy = overall.accuracy().unwrap_or(0.0);
    if !report.loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss while evaluating {}", split.name)));
    }
    Ok(report)
}

/// Encodes `split` with `vocabs` and evaluates it. Questions or answers the
/// vocabularies cannot represent are a compatibility error.
pub fn evaluate(
    model: &VqaModel<f32>,
    split: &Split,
    vocabs: &Vocabs,
    canonical_only: bool,
    opts: EvalOptions,
) -> Result<EvalReport> {
    let enc = encode_compatible(vocabs, split)?;
    let canonical = if canonical_only {
        super::loader::render_canonical(split)
    } else {
        Vec::new()
    };
    evaluate_encoded(model, split, &enc, &canonical, opts)
}

/// Like [`Vocabs::encode`] but reports vocabulary gaps as [`Error::Compat`].
pub fn encode_compatible(vocabs: &Vocabs, split: &Split) -> Result<EncodedSplit> {
    let longest = split.max_question_len(&vocabs.question);
    let mut v = vocabs.clone();
    match longest {
        Ok(l) => v.max_question_len = v.max_question_len.max(l),
        Err(e) => return Err(Error::Compat(format!("dataset does not match checkpoint vocabulary: {e}"))),
    }
    v.encode(split).map_err(|e| match e {
        Error::Vocab(m) => Error::Compat(format!("dataset does not match checkpoint vocabulary: {m}")),
        other => other,
    })
}

/// Most frequent answer; ties go to the lexicographically smallest.
pub fn majority_answer(split: &Split) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &split.records {
        for q in &r.qa {
            *counts.entry(q.answer.as_str()).or_default() += 1;
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for (a, c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((a, c));
        }
    }
    best.map(|(a, _)| a.to_string())
}

/// Fraction of questions in `split` whose answer is `answer`.
pub fn answer_share(split: &Split, answer: &str) -> f64 {
    let n = split.num_questions();
    if n == 0 {
        return 0.0;
    }
    let hits = split.records.iter().flat_map(|r| &r.qa).filter(|q| q.answer == answer).count();
    hits as f64 / n as f64
}
