//! Dataset generation, answer balancing, splits and the `genconfig` file.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{generate_scene_retrying, sample_views, SceneConfig, ViewMode};
use super::questions::{generate_questions, QaItem, QuestionVocab, TemplateId};
use super::render::render_view;
use super::shard::{read_shard, write_shard, SceneRecord};
use crate::autodiff::Tensor;
use crate::contrastive::ViewSource;
use crate::error::{Error, Result};
use crate::seeds;

/// Largest share of one answer within one template.
pub const BALANCE_CAP: f64 = 0.6;
const SCENE_TRIES: usize = 100;
/// Candidate questions drawn per kept question before balancing.
const CANDIDATE_FACTOR: usize = 3;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Generator settings; see [`GenConfig::parse`] for the file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_views: usize,
    pub mode: ViewMode,
    pub image_size: usize,
    pub questions_per_scene: usize,
    pub scene: SceneConfig,
    pub templates: Vec<TemplateId>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            n_train: 2000,
            n_val: 100,
            n_test: 200,
            n_views: 8,
            mode: ViewMode::V1,
            image_size: 64,
            questions_per_scene: 6,
            scene: SceneConfig::default(),
            templates: TemplateId::ALL.to_vec(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

impl GenConfig {
    /// `key = value` lines; `#` starts a comment. `n_scenes` sets the train
    /// count and derives val (1/20) and test (1/10) unless those are given.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = GenConfig::default();
        let (mut val, mut test, mut scenes) = (None, None, None);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "seed" => cfg.seed = parse_num(k, v)?,
                "n_scenes" | "n_train" => scenes = Some(parse_num(k, v)?),
                "n_val" => val = Some(parse_num(k, v)?),
                "n_test" => test = Some(parse_num(k, v)?),
                "n_views" => cfg.n_views = parse_num(k, v)?,
                "mode" => cfg.mode = v.parse()?,
                "image_size" => cfg.image_size = parse_num(k, v)?,
                "questions_per_scene" => cfg.questions_per_scene = parse_num(k, v)?,
                "min_objects" => cfg.scene.min_objects = parse_num(k, v)?,
                "max_objects" => cfg.scene.max_objects = parse_num(k, v)?,
                "small_objects" => cfg.scene.small_objects = parse_bool(k, v)?,
                "templates" => {
                    cfg.templates = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::parse)
                        .collect::<Result<_>>()?
                }
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", lineno + 1))),
            }
        }
        if let Some(n) = scenes {
            cfg.n_train = n;
            cfg.n_val = n / 20;
            cfg.n_test = n / 10;
        }
        cfg.n_val = val.unwrap_or(cfg.n_val);
        cfg.n_test = test.unwrap_or(cfg.n_test);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Inverse of [`GenConfig::parse`].
    pub fn to_text(&self) -> String {
        let templates: Vec<&str> = self.templates.iter().map(|t| t.name()).collect();
        format!(
            "seed = {}\nn_train = {}\nn_val = {}\nn_test = {}\nn_views = {}\nmode = {}\nimage_size = {}\n\
             questions_per_scene = {}\nmin_objects = {}\nmax_objects = {}\nsmall_objects = {}\ntemplates = {}\n",
            self.seed,
            self.n_train,
            self.n_val,
            self.n_test,
            self.n_views,
            self.mode,
            self.image_size,
            self.questions_per_scene,
            self.scene.min_objects,
            self.scene.max_objects,
            self.scene.small_objects,
            templates.join(",")
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.n_views < 2 {
            return Err(Error::Config("n_views must be at least 2".into()));
        }
        if self.image_size < 32 || self.image_size % 8 != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a multiple of 8 and at least 32",
                self.image_size
            )));
        }
        if self.templates.is_empty() || self.questions_per_scene == 0 {
            return Err(Error::Config("need at least one template and one question per scene".into()));
        }
        if self.n_train < 2 || self.n_val < 2 || self.n_test < 1 {
            return Err(Error::Config("need at least 2 train, 2 val and 1 test scene".into()));
        }
        Ok(())
    }

    fn split_range(&self, split: &str) -> std::ops::Range<u64> {
        let (a, b, c) = (self.n_train as u64, self.n_val as u64, self.n_test as u64);
        match split {
            "train" => 0..a,
            "val" => a..a + b,
            _ => a + b..a + b + c,
        }
    }
}

/// Scenes of one split, loaded into memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: String,
    pub records: Vec<SceneRecord>,
}

impl Split {
    pub fn num_questions(&self) -> usize {
        self.records.iter().map(|r| r.qa.len()).sum()
    }

    /// `(record index, question index)` for every question.
    pub fn question_index(&self) -> Vec<(usize, usize)> {
        self.records
            .iter()
            .enumerate()
            .flat_map(|(s, r)| (0..r.qa.len()).map(move |q| (s, q)))
            .collect()
    }

    pub fn max_question_len(&self, vocab: &QuestionVocab) -> Result<usize> {
        let mut m = 0;
        for r in &self.records {
            for q in &r.qa {
                m = m.max(vocab.tokenize(&q.question)?.len());
            }
        }
        Ok(m)
    }
}

/// Images only: the contrastive stage never sees cameras.
impl ViewSource for Split {
    fn num_scenes(&self) -> usize {
        self.records.len()
    }

    fn num_views(&self, scene: usize) -> usize {
        self.records[scene].images.len()
    }

    fn view(&self, scene: usize, view: usize) -> Tensor<f32> {
        self.records[scene].images[view].to_tensor()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&Split> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }

    /// Longest tokenized question across all splits.
    pub fn max_question_len(&self, vocab: &QuestionVocab) -> Result<usize> {
        let mut m = 0;
        for s in [&self.train, &self.val, &self.test] {
            m = m.max(s.max_question_len(vocab)?);
        }
        Ok(m)
    }
}

/// Scene, views, renders and unbalanced candidate questions for scene `id`.
pub fn generate_record(cfg: &GenConfig, id: u64, candidates: usize) -> Result<SceneRecord> {
    let seed = seeds::child_seed(cfg.seed, &format!("scene/{id}"));
    let mut rng = seeds::stream(seed, "content");
    let scene = generate_scene_retrying(id, seed, &cfg.scene, &mut rng, SCENE_TRIES)?;
    let views = sample_views(cfg.n_views, cfg.mode, &mut rng)?;
    let images = views
        .iter()
        .map(|c| render_view(&scene, c, cfg.image_size, cfg.image_size))
        .collect();
    let qa = generate_questions(&scene, &mut rng, candidates, &cfg.templates);
    Ok(SceneRecord {
        scene,
        views,
        images,
        qa,
    })
}

/// Picks up to `per_scene` questions from each record's candidates so that
/// no answer exceeds [`BALANCE_CAP`] of its template across the split.
pub fn balance_questions<R: Rng + ?Sized>(records: &mut [SceneRecord], per_scene: usize, rng: &mut R) {
    let mut counts: HashMap<(TemplateId, String), usize> = HashMap::new();
    let mut totals: HashMap<TemplateId, usize> = HashMap::new();
    for r in records.iter_mut() {
        let mut pool = std::mem::take(&mut r.qa);
        pool.shuffle(rng);
        for q in pool {
            if r.qa.len() == per_scene {
                break;
            }
            let c = counts.get(&(q.template, q.answer.clone())).copied().unwrap_or(0);
            let t = totals.get(&q.template).copied().unwrap_or(0);
            // one item of slack so the first question of a template is admissible
            if (c + 1) as f64 <= BALANCE_CAP * (t + 1) as f64 + 1.0 {
                *counts.entry((q.template, q.answer.clone())).or_default() += 1;
                *totals.entry(q.template).or_default() += 1;
                r.qa.push(q);
            }
        }
    }
    // the slack can leave a share just above the cap; drop random excess
    loop {
        let over = counts
            .iter()
            .filter(|((t, _), &c)| c as f64 > BALANCE_CAP * totals[t] as f64)
            .map(|(k, _)| k.clone())
            .min();
        let Some((template, answer)) = over else { break };
        let holders: Vec<(usize, usize)> = records
            .iter()
            .enumerate()
            .flat_map(|(s, r)| {
                r.qa.iter()
                    .enumerate()
                    .filter(|(_, q)| q.template == template && q.answer == answer)
                    .map(move |(i, _)| (s, i))
            })
            .collect();
        let &(s, i) = holders.choose(rng).expect("over-represented answer has holders");
        records[s].qa.remove(i);
        *counts.get_mut(&(template, answer)).unwrap() -= 1;
        *totals.get_mut(&template).unwrap() -= 1;
    }
}

pub fn generate_split(cfg: &GenConfig, split: &str) -> Result<Split> {
    cfg.validate()?;
    let per_scene = cfg.questions_per_scene;
    let mut records = cfg
        .split_range(split)
        .into_par_iter()
        .map(|id| generate_record(cfg, id, per_scene * CANDIDATE_FACTOR))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = seeds::stream(cfg.seed, &format!("balance/{split}"));
    balance_questions(&mut records, per_scene, &mut rng);
    Ok(Split {
        name: split.to_string(),
        records,
    })
}

pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    Ok(Dataset {
        train: generate_split(cfg, "train")?,
        val: generate_split(cfg, "val")?,
        test: generate_split(cfg, "test")?,
    })
}

fn histogram<I: IntoIterator<Item = String>>(items: I) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for k in items {
        *h.entry(k).or_default() += 1;
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub scenes: usize,
    pub questions: usize,
    pub answers: BTreeMap<String, usize>,
    pub templates: BTreeMap<String, usize>,
    pub template_answers: BTreeMap<String, BTreeMap<String, usize>>,
    /// Share of "yes" among yes/no questions.
    pub yes_fraction: f64,
    pub objects_per_scene: BTreeMap<String, usize>,
    pub shapes: BTreeMap<String, usize>,
    pub colors: BTreeMap<String, usize>,
    pub sizes: BTreeMap<String, usize>,
    pub materials: BTreeMap<String, usize>,
}

impl SplitStats {
    pub fn of(split: &Split) -> Self {
        let qa: Vec<&QaItem> = split.records.iter().flat_map(|r| &r.qa).collect();
        let objects: Vec<_> = split.records.iter().flat_map(|r| &r.scene.objects).collect();
        let mut template_answers: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for q in &qa {
            *template_answers
                .entry(q.template.name().to_string())
                .or_default()
                .entry(q.answer.clone())
                .or_default() += 1;
        }
        let yn: Vec<&&QaItem> = qa.iter().filter(|q| q.template.is_yes_no()).collect();
        let yes = yn.iter().filter(|q| q.answer == "yes").count();
        SplitStats {
            scenes: split.records.len(),
            questions: qa.len(),
            answers: histogram(qa.iter().map(|q| q.answer.clone())),
            templates: histogram(qa.iter().map(|q| q.template.name().to_string())),
            template_answers,
            yes_fraction: if yn.is_empty() { 0.0 } else { yes as f64 / yn.len() as f64 },
            objects_per_scene: histogram(split.records.iter().map(|r| r.scene.objects.len().to_string())),
            shapes: histogram(objects.iter().map(|o| o.shape.word().to_string())),
            colors: histogram(objects.iter().map(|o| o.color.word().to_string())),
            sizes: histogram(objects.iter().map(|o| o.size.word().to_string())),
            materials: histogram(objects.iter().map(|o| o.material.word().to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub config: GenConfig,
    pub max_question_len: usize,
    /// val / (train + val) scenes.
    pub validation_fraction: f64,
    pub splits: BTreeMap<String, SplitStats>,
}

impl DatasetStats {
    pub fn of(cfg: &GenConfig, data: &Dataset) -> Result<Self> {
        let vocab = QuestionVocab::standard();
        let mut splits = BTreeMap::new();
        for name in SPLITS {
            splits.insert(name.to_string(), SplitStats::of(data.split(name)?));
        }
        let (t, v) = (data.train.records.len() as f64, data.val.records.len() as f64);
        Ok(DatasetStats {
            config: cfg.clone(),
            max_question_len: data.max_question_len(&vocab)?,
            validation_fraction: v / (t + v),
            splits,
        })
    }
}

/// Generates all splits and writes `{train,val,test}.mrts`, `stats.json`
/// and a `genconfig` echo into `out`.
pub fn build_dataset(cfg: &GenConfig, out: impl AsRef<Path>) -> Result<(Dataset, DatasetStats)> {
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    let data = generate_dataset(cfg)?;
    for name in SPLITS {
        write_shard(out.join(format!("{name}.mrts")), &data.split(name)?.records)?;
    }
    let stats = DatasetStats::of(cfg, &data)?;
    fs::write(out.join("stats.json"), serde_json::to_string_pretty(&stats)?)?;
    fs::write(out.join("genconfig"), cfg.to_text())?;
    Ok((data, stats))
}

pub fn load_split(dir: impl AsRef<Path>, name: &str) -> Result<Split> {
    let path = dir.as_ref().join(format!("{name}.mrts"));
    if !path.exists() {
        return Err(Error::Data(format!("missing shard {}", path.display())));
    }
    Ok(Split {
        name: name.to_string(),
        records: read_shard(path)?,
    })
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    Ok(Dataset {
        train: load_split(dir, "train")?,
        val: load_split(dir, "val")?,
        test: load_split(dir, "test")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn genconfig_text_round_trip() {
        let mut cfg = GenConfig::default();
        cfg.mode = ViewMode::V2;
        cfg.templates = vec![TemplateId::CountRel, TemplateId::RelatePair];
        cfg.scene.small_objects = false;
        assert_eq!(GenConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn n_scenes_derives_split_sizes() {
        let cfg = GenConfig::parse("n_scenes = 2000\n# comment\nseed = 7").unwrap();
        assert_eq!((cfg.n_train, cfg.n_val, cfg.n_test, cfg.seed), (2000, 100, 200, 7));
        let cfg = GenConfig::parse("n_scenes = 40\nn_test = 3").unwrap();
        assert_eq!((cfg.n_val, cfg.n_test), (2, 3));
    }

    #[test]
    fn genconfig_errors() {
        assert!(matches!(GenConfig::parse("colour = red"), Err(Error::Config(_))));
        assert!(matches!(GenConfig::parse("mode = v3"), Err(Error::Config(_))));
        assert!(matches!(GenConfig::parse("n_views = 1"), Err(Error::Config(_))));
        assert!(matches!(GenConfig::parse("templates = nope"), Err(Error::Config(_))));
    }
}
