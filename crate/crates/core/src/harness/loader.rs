//! Batch preparation: question encoding, view selection and an ordered
//! worker pool feeding the trainer through a bounded queue.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::sync_channel;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{AnswerVocab, VqaBatch};
use crate::scene::{render_view, Dataset, QuestionVocab, Split, PAD_ID};
use crate::seeds;

/// Question and answer vocabularies plus the padding length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabs {
    pub question: QuestionVocab,
    pub answer: AnswerVocab,
    pub max_question_len: usize,
}

impl Vocabs {
    /// Standard vocabularies, padded to the longest question in `data`.
    pub fn for_dataset(data: &Dataset) -> Result<Self> {
        let question = QuestionVocab::standard();
        let max_question_len = data.max_question_len(&question)?;
        Ok(Vocabs {
            question,
            answer: AnswerVocab::standard(),
            max_question_len,
        })
    }

    pub fn pad_id(&self) -> usize {
        PAD_ID
    }

    /// Tokens and answer ids for every question of `split`, in
    /// [`Split::question_index`] order. Questions longer than the padding
    /// length are rejected.
    pub fn encode(&self, split: &Split) -> Result<EncodedSplit> {
        let index = split.question_index();
        let len = self.max_question_len;
        let mut tokens = Vec::with_capacity(index.len() * len);
        let mut targets = Vec::with_capacity(index.len());
        for &(s, q) in &index {
            let qa = &split.records[s].qa[q];
            tokens.extend(self.question.encode_padded(&qa.question, len)?);
            targets.push(self.answer.id(&qa.answer)?);
        }
        Ok(EncodedSplit {
            index,
            tokens,
            targets,
            len,
        })
    }
}

/// Model-ready questions of one split.
#[derive(Clone, Debug)]
pub struct EncodedSplit {
    pub index: Vec<(usize, usize)>,
    /// Row-major `questions × len`.
    pub tokens: Vec<usize>,
    pub targets: Vec<usize>,
    pub len: usize,
}

impl EncodedSplit {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Which image of a scene to show the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewPick {
    Canonical,
    Index(usize),
}

/// The fixed evaluation view of question `q` of scene `scene_id`. It does
/// not depend on the run seed, so every model sees the same inputs.
pub fn eval_view(scene_id: u64, q: usize, n_views: usize) -> usize {
    (seeds::child_seed(scene_id, &format!("eval-view/{q}")) % n_views as u64) as usize
}

/// Canonical-view renders of every scene of `split`, as `[3, H, W]` tensors.
pub fn render_canonical(split: &Split) -> Vec<Tensor<f32>> {
    split
        .records
        .par_iter()
        .map(|r| {
            let (h, w) = r.images.first().map_or((0, 0), |i| (i.height, i.width));
            render_view(&r.scene, &r.scene.canonical, h, w).to_tensor()
        })
        .collect()
}

/// Questions to batch (positions into an [`EncodedSplit`]) and their views.
#[derive(Clone, Debug)]
pub struct BatchSpec {
    pub items: Vec<usize>,
    pub views: Vec<ViewPick>,
}

pub struct Prepared {
    pub batch: VqaBatch<f32>,
    pub targets: Vec<usize>,
    pub items: Vec<usize>,
    /// Camera azimuth of each input, degrees.
    pub azimuths: Vec<f64>,
}

/// Assembles images, tokens and raw cameras for one batch.
pub fn prepare(split: &Split, enc: &EncodedSplit, canonical: &[Tensor<f32>], spec: &BatchSpec) -> Result<Prepared> {
    let n = spec.items.len();
    let mut images: Vec<f32> = Vec::new();
    let mut hw = None;
    let mut tokens = Vec::with_capacity(n * enc.len);
    let mut cameras = Vec::with_capacity(n * 6);
    let mut targets = Vec::with_capacity(n);
    let mut azimuths = Vec::with_capacity(n);
    for (&item, &pick) in spec.items.iter().zip(&spec.views) {
        let (s, _) = enc.index[item];
        let rec = &split.records[s];
        let (img, pose) = match pick {
            ViewPick::Canonical => {
                let t = canonical
                    .get(s)
                    .ok_or_else(|| Error::State("canonical renders were not prepared".into()))?;
                (t.clone(), rec.scene.canonical)
            }
            ViewPick::Index(v) => (rec.images[v].to_tensor(), rec.views[v]),
        };
        let shape = (img.shape()[1], img.shape()[2]);
        if *hw.get_or_insert(shape) != shape {
            return Err(Error::Data(format!("scene {} has images of a different size", rec.scene.id)));
        }
        images.extend_from_slice(img.data());
        tokens.extend_from_slice(&enc.tokens[item * enc.len..(item + 1) * enc.len]);
        cameras.extend(pose.raw().iter().map(|&c| c as f32));
        targets.push(enc.targets[item]);
        azimuths.push(pose.azimuth_deg);
    }
    let (h, w) = hw.unwrap_or((0, 0));
    Ok(Prepared {
        batch: VqaBatch {
            images: Tensor::new([n, 3, h, w], images)?,
            tokens,
            cameras: Tensor::new([n, 6], cameras)?,
        },
        targets,
        items: spec.items.clone(),
        azimuths,
    })
}

/// Runs `prep` over `jobs` on `workers` threads and hands the results to
/// `consume` in job order. The queue holds at most `2 * workers` prepared
/// jobs. The first error, from either side, stops the pool.
pub fn run_ordered<J, P, F, C>(jobs: &[J], workers: usize, prep: F, mut consume: C) -> Result<()>
where
    J: Sync,
    P: Send,
    F: Fn(&J) -> Result<P> + Sync,
    C: FnMut(P) -> Result<()>,
{
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel::<(usize, Result<P>)>(2 * workers.max(1));
        for _ in 0..workers.max(1) {
            let tx = tx.clone();
            let (next, prep) = (&next, &prep);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() || tx.send((i, prep(&jobs[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        for want in 0..jobs.len() {
            let p = loop {
                if let Some(p) = pending.remove(&want) {
                    break p;
                }
                let (i, p) = rx
                    .recv()
                    .map_err(|_| Error::State("batch workers stopped early".into()))?;
                pending.insert(i, p);
            };
            if let Err(e) = p.and_then(&mut consume) {
                // stop handing out work; dropping the receiver unblocks senders
                next.store(jobs.len(), Ordering::Relaxed);
                return Err(e);
            }
        }
        Ok(())
    })
}
