//! Spatial-relation question templates and the ground-truth answer oracle.
//!
//! Relations are judged in the canonical camera's ground frame: "left of"
//! and "right of" along its right vector, "in front of" (closer to the
//! camera) and "behind" along its forward vector projected to the ground.

use std::collections::{HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{Color, Material, SceneGraph, SceneObject, Shape, Size};
use crate::error::{Error, Result};
use crate::nn::vocab::MAX_COUNT;

/// Dot products closer to zero than this make a relation ambiguous.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ExistRel,
    CountRel,
    QueryColorRel,
    CompareCountRel,
    QueryShapeRel,
    QuerySizeRel,
    QueryMaterialRel,
    RelatePair,
}

impl TemplateId {
    pub const ALL: &'static [TemplateId] = &[
        TemplateId::ExistRel,
        TemplateId::CountRel,
        TemplateId::QueryColorRel,
        TemplateId::CompareCountRel,
        TemplateId::QueryShapeRel,
        TemplateId::QuerySizeRel,
        TemplateId::QueryMaterialRel,
        TemplateId::RelatePair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::ExistRel => "exist_rel",
            TemplateId::CountRel => "count_rel",
            TemplateId::QueryColorRel => "query_color_rel",
            TemplateId::CompareCountRel => "compare_count_rel",
            TemplateId::QueryShapeRel => "query_shape_rel",
            TemplateId::QuerySizeRel => "query_size_rel",
            TemplateId::QueryMaterialRel => "query_material_rel",
            TemplateId::RelatePair => "relate_pair",
        }
    }

    pub fn is_yes_no(self) -> bool {
        matches!(self, TemplateId::ExistRel | TemplateId::CompareCountRel | TemplateId::RelatePair)
    }
}

impl std::str::FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown question template {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Left,
    Right,
    Front,
    Behind,
}

impl Relation {
    pub const ALL: &'static [Relation] = &[Relation::Left, Relation::Right, Relation::Front, Relation::Behind];

    pub fn phrase(self) -> &'static str {
        match self {
            Relation::Left => "left of",
            Relation::Right => "right of",
            Relation::Front => "in front of",
            Relation::Behind => "behind",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Left => "left",
            Relation::Right => "right",
            Relation::Front => "front",
            Relation::Behind => "behind",
        }
    }

    /// Signed offset of `a` from `b` along the relation's axis, oriented so
    /// that the relation holds when it is negative.
    fn signed_offset(self, scene: &SceneGraph, a: &SceneObject, b: &SceneObject) -> f64 {
        let axis = match self {
            Relation::Left | Relation::Right => scene.canonical.right(),
            Relation::Front | Relation::Behind => scene.canonical.ground_forward(),
        };
        let d: f64 = (0..3).map(|k| (a.position[k] - b.position[k]) * axis[k]).sum();
        match self {
            Relation::Left | Relation::Front => d,
            Relation::Right | Relation::Behind => -d,
        }
    }
}

/// Whether object `a` stands in `rel` to object `b` (irreflexive).
pub fn holds(scene: &SceneGraph, rel: Relation, a: usize, b: usize) -> bool {
    a != b && rel.signed_offset(scene, &scene.objects[a], &scene.objects[b]) < 0.0
}

/// Some pair of objects sits within [`TIE_EPS`] on a relation axis.
pub fn has_ties(scene: &SceneGraph) -> bool {
    let n = scene.objects.len();
    (0..n).any(|a| {
        (a + 1..n).any(|b| {
            [Relation::Left, Relation::Front]
                .iter()
                .any(|r| r.signed_offset(scene, &scene.objects[a], &scene.objects[b]).abs() < TIE_EPS)
        })
    })
}

/// Partial attribute filter; unset fields match anything.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Description {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<Size>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<Material>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Shape>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Size,
    Color,
    Material,
    Shape,
}

impl Attribute {
    fn word(self) -> &'static str {
        match self {
            Attribute::Size => "size",
            Attribute::Color => "color",
            Attribute::Material => "material",
            Attribute::Shape => "shape",
        }
    }

    fn value_of(self, o: &SceneObject) -> &'static str {
        match self {
            Attribute::Size => o.size.word(),
            Attribute::Color => o.color.word(),
            Attribute::Material => o.material.word(),
            Attribute::Shape => o.shape.word(),
        }
    }
}

impl Description {
    /// Keeps the attributes of `o` selected by `mask` (bits: size, color,
    /// material, shape).
    pub fn of(o: &SceneObject, mask: u8) -> Self {
        Description {
            size: (mask & 1 != 0).then_some(o.size),
            color: (mask & 2 != 0).then_some(o.color),
            material: (mask & 4 != 0).then_some(o.material),
            shape: (mask & 8 != 0).then_some(o.shape),
        }
    }

    pub fn matches(&self, o: &SceneObject) -> bool {
        self.size.is_none_or(|v| v == o.size)
            && self.color.is_none_or(|v| v == o.color)
            && self.material.is_none_or(|v| v == o.material)
            && self.shape.is_none_or(|v| v == o.shape)
    }

    pub fn mentions(&self, a: Attribute) -> bool {
        match a {
            Attribute::Size => self.size.is_some(),
            Attribute::Color => self.color.is_some(),
            Attribute::Material => self.material.is_some(),
            Attribute::Shape => self.shape.is_some(),
        }
    }

    fn words(&self, plural: bool) -> String {
        let mut w: Vec<&str> = Vec::new();
        w.extend(self.size.map(Size::word));
        w.extend(self.color.map(Color::word));
        w.extend(self.material.map(Material::word));
        w.push(match (self.shape, plural) {
            (Some(s), false) => s.word(),
            (Some(s), true) => s.plural(),
            (None, false) => "thing",
            (None, true) => "things",
        });
        w.join(" ")
    }

    pub fn phrase(&self) -> String {
        self.words(false)
    }

    pub fn plural_phrase(&self) -> String {
        self.words(true)
    }
}

/// Attribute masks from least to most specific; shape is always named.
const ANCHOR_MASKS: [u8; 8] = [8, 10, 9, 12, 11, 14, 13, 15];

/// Smallest description that picks `idx` out of `pool` (indices into the
/// scene), if any.
pub fn minimal_unique(scene: &SceneGraph, idx: usize, pool: &[usize], masks: &[u8]) -> Option<Description> {
    let o = &scene.objects[idx];
    masks.iter().map(|&m| Description::of(o, m)).find(|d| {
        pool.iter().filter(|&&j| d.matches(&scene.objects[j])).count() == 1
    })
}

/// `target rel anchor`: objects matching `target` that stand in `rel` to
/// the unique object matching `anchor`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Clause {
    pub target: Description,
    pub rel: Relation,
    pub anchor: Description,
}

/// Slot bindings of an instantiated template.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Program {
    Exist { clause: Clause },
    Count { clause: Clause },
    Query { attribute: Attribute, clause: Clause },
    CompareCount { first: Clause, second: Clause },
    Relate { subject: Description, rel: Relation, object: Description },
}

impl Program {
    pub fn relations(&self) -> Vec<Relation> {
        match self {
            Program::Exist { clause } | Program::Count { clause } | Program::Query { clause, .. } => vec![clause.rel],
            Program::CompareCount { first, second } => vec![first.rel, second.rel],
            Program::Relate { rel, .. } => vec![*rel],
        }
    }

    pub fn text(&self) -> String {
        match self {
            Program::Exist { clause } => format!(
                "Is there a {} {} the {}?",
                clause.target.phrase(),
                clause.rel.phrase(),
                clause.anchor.phrase()
            ),
            Program::Count { clause } => format!(
                "How many {} are {} the {}?",
                clause.target.plural_phrase(),
                clause.rel.phrase(),
                clause.anchor.phrase()
            ),
            Program::Query { attribute, clause } => format!(
                "What {} is the {} {} the {}?",
                attribute.word(),
                clause.target.phrase(),
                clause.rel.phrase(),
                clause.anchor.phrase()
            ),
            Program::CompareCount { first, second } => format!(
                "Are there more {} {} the {} than {} {} the {}?",
                first.target.plural_phrase(),
                first.rel.phrase(),
                first.anchor.phrase(),
                second.target.plural_phrase(),
                second.rel.phrase(),
                second.anchor.phrase()
            ),
            Program::Relate { subject, rel, object } => {
                format!("Is the {} {} the {}?", subject.phrase(), rel.phrase(), object.phrase())
            }
        }
    }
}

/// One question about one scene; every view of the scene is a valid input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub scene_id: u64,
    pub template: TemplateId,
    pub program: Program,
    pub question: String,
    pub answer: String,
}

fn resolve_unique(scene: &SceneGraph, d: &Description) -> Result<usize> {
    let hits: Vec<usize> = (0..scene.objects.len()).filter(|&i| d.matches(&scene.objects[i])).collect();
    match hits.as_slice() {
        [i] => Ok(*i),
        _ => Err(Error::State(format!(
            "description {:?} matches {} objects in scene {}",
            d.phrase(),
            hits.len(),
            scene.id
        ))),
    }
}

fn clause_set(scene: &SceneGraph, c: &Clause) -> Result<Vec<usize>> {
    let anchor = resolve_unique(scene, &c.anchor)?;
    Ok((0..scene.objects.len())
        .filter(|&i| holds(scene, c.rel, i, anchor) && c.target.matches(&scene.objects[i]))
        .collect())
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

/// Ground-truth answer from the scene graph and its canonical camera.
/// Unresolvable bindings are a generator bug and surface as state errors.
pub fn answer_oracle(scene: &SceneGraph, program: &Program) -> Result<String> {
    match program {
        Program::Exist { clause } => Ok(yes_no(!clause_set(scene, clause)?.is_empty())),
        Program::Count { clause } => Ok(clause_set(scene, clause)?.len().to_string()),
        Program::Query { attribute, clause } => match clause_set(scene, clause)?.as_slice() {
            [i] => Ok(attribute.value_of(&scene.objects[*i]).to_string()),
            other => Err(Error::State(format!(
                "query target {:?} matches {} objects",
                clause.target.phrase(),
                other.len()
            ))),
        },
        Program::CompareCount { first, second } => {
            Ok(yes_no(clause_set(scene, first)?.len() > clause_set(scene, second)?.len()))
        }
        Program::Relate { subject, rel, object } => {
            let (s, o) = (resolve_unique(scene, subject)?, resolve_unique(scene, object)?);
            if s == o {
                return Err(Error::State("relate question compares an object with itself".into()));
            }
            Ok(yes_no(holds(scene, *rel, s, o)))
        }
    }
}

/// Objects with a minimal unique description, paired with it.
fn anchors(scene: &SceneGraph) -> Vec<(usize, Description)> {
    let all: Vec<usize> = (0..scene.objects.len()).collect();
    all.iter()
        .filter_map(|&i| minimal_unique(scene, i, &all, &ANCHOR_MASKS).map(|d| (i, d)))
        .collect()
}

fn random_filter<R: Rng + ?Sized>(scene: &SceneGraph, rng: &mut R) -> Description {
    let o = scene.objects.choose(rng).expect("non-empty scene");
    Description::of(o, rng.random_range(1..16u8))
}

fn random_clause<R: Rng + ?Sized>(scene: &SceneGraph, anchors: &[(usize, Description)], rng: &mut R) -> Clause {
    let (_, anchor) = *anchors.choose(rng).expect("anchors available");
    Clause {
        target: random_filter(scene, rng),
        rel: *Relation::ALL.choose(rng).unwrap(),
        anchor,
    }
}

fn query_masks(attribute: Attribute) -> Vec<u8> {
    let bit = match attribute {
        Attribute::Size => 1,
        Attribute::Color => 2,
        Attribute::Material => 4,
        Attribute::Shape => 8,
    };
    // fewest attributes first; never mention the asked-about one
    let mut masks: Vec<u8> = (0..16u8).filter(|m| m & bit == 0).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    masks
}

const BINDING_ATTEMPTS: usize = 24;

/// One random instance of `template`, or `None` if the scene admits no
/// unambiguous binding.
pub fn sample_instance<R: Rng + ?Sized>(scene: &SceneGraph, template: TemplateId, rng: &mut R) -> Option<QaItem> {
    if scene.objects.len() < 2 || has_ties(scene) {
        return None;
    }
    let anchors = anchors(scene);
    if anchors.is_empty() {
        return None;
    }
    for _ in 0..BINDING_ATTEMPTS {
        let program = match template {
            TemplateId::ExistRel => Some(Program::Exist {
                clause: random_clause(scene, &anchors, rng),
            }),
            TemplateId::CountRel => Some(Program::Count {
                clause: random_clause(scene, &anchors, rng),
            }),
            TemplateId::CompareCountRel => Some(Program::CompareCount {
                first: random_clause(scene, &anchors, rng),
                second: random_clause(scene, &anchors, rng),
            }),
            TemplateId::QueryColorRel
            | TemplateId::QueryShapeRel
            | TemplateId::QuerySizeRel
            | TemplateId::QueryMaterialRel => {
                let attribute = match template {
                    TemplateId::QueryColorRel => Attribute::Color,
                    TemplateId::QueryShapeRel => Attribute::Shape,
                    TemplateId::QuerySizeRel => Attribute::Size,
                    _ => Attribute::Material,
                };
                let &(a, anchor) = anchors.choose(rng).unwrap();
                let rel = *Relation::ALL.choose(rng).unwrap();
                let related: Vec<usize> = (0..scene.objects.len()).filter(|&i| holds(scene, rel, i, a)).collect();
                related.choose(rng).and_then(|&t| {
                    minimal_unique(scene, t, &related, &query_masks(attribute)).map(|target| Program::Query {
                        attribute,
                        clause: Clause { target, rel, anchor },
                    })
                })
            }
            TemplateId::RelatePair => {
                let picks: Vec<&(usize, Description)> = anchors.choose_multiple(rng, 2).collect();
                (picks.len() == 2).then(|| Program::Relate {
                    subject: picks[0].1,
                    rel: *Relation::ALL.choose(rng).unwrap(),
                    object: picks[1].1,
                })
            }
        };
        let Some(program) = program else { continue };
        let answer = answer_oracle(scene, &program).expect("generated bindings resolve");
        if answer.parse::<usize>().is_ok_and(|c| c > MAX_COUNT) {
            continue;
        }
        return Some(QaItem {
            scene_id: scene.id,
            template,
            question: program.text(),
            program,
            answer,
        });
    }
    None
}

/// Up to `count` distinct questions, spread round-robin over `templates`.
pub fn generate_questions<R: Rng + ?Sized>(
    scene: &SceneGraph,
    rng: &mut R,
    count: usize,
    templates: &[TemplateId],
) -> Vec<QaItem> {
    let mut order = templates.to_vec();
    order.shuffle(rng);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    if order.is_empty() {
        return out;
    }
    for i in 0..count * 4 {
        if out.len() == count {
            break;
        }
        if let Some(q) = sample_instance(scene, order[i % order.len()], rng) {
            if seen.insert(q.question.clone()) {
                out.push(q);
            }
        }
    }
    out
}

pub const PAD_TOKEN: &str = "<pad>";
pub const PAD_ID: usize = 0;

/// Word-level question vocabulary; index 0 is padding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct QuestionVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl QuestionVocab {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.first().map(String::as_str) != Some(PAD_TOKEN) {
            return Err(Error::Vocab(format!("question vocabulary must start with {PAD_TOKEN}")));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate question word {w:?}")));
            }
        }
        Ok(QuestionVocab { words, index })
    }

    /// Every word the templates can produce.
    pub fn standard() -> Self {
        let fixed = [
            PAD_TOKEN, "?", "is", "there", "a", "the", "how", "many", "are", "what", "more", "than", "left", "right",
            "of", "in", "front", "behind", "thing", "things", "color", "shape", "size", "material",
        ];
        let mut w: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
        w.extend(Size::ALL.iter().map(|v| v.word().to_string()));
        w.extend(Color::ALL.iter().map(|v| v.word().to_string()));
        w.extend(Material::ALL.iter().map(|v| v.word().to_string()));
        w.extend(Shape::ALL.iter().map(|v| v.word().to_string()));
        w.extend(Shape::ALL.iter().map(|v| v.plural().to_string()));
        Self::new(w).expect("standard words are distinct")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tokenize(&self, question: &str) -> Result<Vec<usize>> {
        question
            .to_lowercase()
            .replace('?', " ?")
            .split_whitespace()
            .map(|w| {
                self.index
                    .get(w)
                    .copied()
                    .ok_or_else(|| Error::Vocab(format!("unknown question word {w:?}")))
            })
            .collect()
    }

    /// Tokenizes and right-pads with [`PAD_ID`] to `len`.
    pub fn encode_padded(&self, question: &str, len: usize) -> Result<Vec<usize>> {
        let mut ids = self.tokenize(question)?;
        if ids.len() > len {
            return Err(Error::Argument(format!("question has {} tokens, pad length is {len}", ids.len())));
        }
        ids.resize(len, PAD_ID);
        Ok(ids)
    }
}

impl TryFrom<Vec<String>> for QuestionVocab {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        Self::new(words)
    }
}

impl From<QuestionVocab> for Vec<String> {
    fn from(v: QuestionVocab) -> Self {
        v.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::types::CameraPose;

    fn obj(shape: Shape, color: Color, x: f64, y: f64) -> SceneObject {
        SceneObject {
            shape,
            color,
            size: Size::Large,
            material: Material::Rubber,
            position: [x, y, 0.7],
            yaw: 0.0,
        }
    }

    fn two_spheres() -> SceneGraph {
        SceneGraph {
            id: 1,
            objects: vec![obj(Shape::Sphere, Color::Red, -1.0, 0.0), obj(Shape::Sphere, Color::Blue, 1.0, 0.0)],
            canonical: CameraPose::canonical(),
            seed: 0,
        }
    }

    #[test]
    fn left_right_from_canonical_camera() {
        let s = two_spheres();
        assert!(holds(&s, Relation::Left, 0, 1));
        assert!(holds(&s, Relation::Right, 1, 0));
        assert!(!holds(&s, Relation::Left, 0, 0));
        assert!(!holds(&s, Relation::Front, 0, 1) && !holds(&s, Relation::Behind, 0, 1));
    }

    #[test]
    fn front_is_closer_to_camera() {
        let mut s = two_spheres();
        s.objects[0].position = [0.0, -2.0, 0.7];
        s.objects[1].position = [0.0, 2.0, 0.7];
        assert!(holds(&s, Relation::Front, 0, 1));
        assert!(holds(&s, Relation::Behind, 1, 0));
    }

    #[test]
    fn descriptions_render_in_attribute_order() {
        let o = obj(Shape::Cube, Color::Cyan, 0.0, 0.0);
        assert_eq!(Description::of(&o, 15).phrase(), "large cyan rubber cube");
        assert_eq!(Description::of(&o, 2).plural_phrase(), "cyan things");
    }

    #[test]
    fn oracle_answers_hand_built_scene() {
        let s = two_spheres();
        let red = Description {
            color: Some(Color::Red),
            shape: Some(Shape::Sphere),
            ..Description::default()
        };
        let blue = Description {
            color: Some(Color::Blue),
            shape: Some(Shape::Sphere),
            ..Description::default()
        };
        let q = Program::Relate {
            subject: red,
            rel: Relation::Left,
            object: blue,
        };
        assert_eq!(answer_oracle(&s, &q).unwrap(), "yes");
        let count = Program::Count {
            clause: Clause {
                target: Description::default(),
                rel: Relation::Right,
                anchor: red,
            },
        };
        assert_eq!(answer_oracle(&s, &count).unwrap(), "1");
        let ambiguous = Program::Count {
            clause: Clause {
                target: Description::default(),
                rel: Relation::Right,
                anchor: Description::default(),
            },
        };
        assert!(matches!(answer_oracle(&s, &ambiguous), Err(Error::State(_))));
    }

    #[test]
    fn vocab_covers_every_template() {
        let v = QuestionVocab::standard();
        let s = two_spheres();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        use rand::SeedableRng;
        for q in generate_questions(&s, &mut rng, 30, TemplateId::ALL) {
            v.tokenize(&q.question).unwrap();
        }
        assert!(matches!(v.tokenize("is there a dragon?"), Err(Error::Vocab(_))));
        assert_eq!(v.encode_padded("Is the red sphere left of the blue sphere?", 12).unwrap()[11], PAD_ID);
    }
}
