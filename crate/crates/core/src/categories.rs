use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{parse_json_file, write_json_file};

/// COCO detection categories in the usual 80-entry order, each with the
/// article used in "a photo of a/an {object}".
pub const COCO_OBJECTS: [(&str, &str); 80] = [
    ("person", "a"),
    ("bicycle", "a"),
    ("car", "a"),
    ("motorcycle", "a"),
    ("airplane", "an"),
    ("bus", "a"),
    ("train", "a"),
    ("truck", "a"),
    ("boat", "a"),
    ("traffic light", "a"),
    ("fire hydrant", "a"),
    ("stop sign", "a"),
    ("parking meter", "a"),
    ("bench", "a"),
    ("bird", "a"),
    ("cat", "a"),
    ("dog", "a"),
    ("horse", "a"),
    ("sheep", "a"),
    ("cow", "a"),
    ("elephant", "an"),
    ("bear", "a"),
    ("zebra", "a"),
    ("giraffe", "a"),
    ("backpack", "a"),
    ("umbrella", "an"),
    ("handbag", "a"),
    ("tie", "a"),
    ("suitcase", "a"),
    ("frisbee", "a"),
    ("skis", "a"),
    ("snowboard", "a"),
    ("sports ball", "a"),
    ("kite", "a"),
    ("baseball bat", "a"),
    ("baseball glove", "a"),
    ("skateboard", "a"),
    ("surfboard", "a"),
    ("tennis racket", "a"),
    ("bottle", "a"),
    ("wine glass", "a"),
    ("cup", "a"),
    ("fork", "a"),
    ("knife", "a"),
    ("spoon", "a"),
    ("bowl", "a"),
    ("banana", "a"),
    ("apple", "an"),
    ("sandwich", "a"),
    ("orange", "an"),
    ("broccoli", "a"),
    ("carrot", "a"),
    ("hot dog", "a"),
    ("pizza", "a"),
    ("donut", "a"),
    ("cake", "a"),
    ("chair", "a"),
    ("couch", "a"),
    ("potted plant", "a"),
    ("bed", "a"),
    ("dining table", "a"),
    ("toilet", "a"),
    ("tv", "a"),
    ("laptop", "a"),
    ("mouse", "a"),
    ("remote", "a"),
    ("keyboard", "a"),
    ("cell phone", "a"),
    ("microwave", "a"),
    ("oven", "an"),
    ("toaster", "a"),
    ("sink", "a"),
    ("refrigerator", "a"),
    ("book", "a"),
    ("clock", "a"),
    ("vase", "a"),
    ("scissors", "a"),
    ("teddy bear", "a"),
    ("hair drier", "a"),
    ("toothbrush", "a"),
];

pub const COMMON_ACTIONS: [&str; 16] = [
    "hold",
    "ride",
    "sit_on",
    "eat",
    "drink_with",
    "cut_with",
    "carry",
    "throw",
    "catch",
    "hit",
    "look_at",
    "pour",
    "swing",
    "wash",
    "type_on",
    "talk_on",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCategory {
    pub name: String,
    pub article: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CategoryFile {
    objects: Vec<ObjectCategory>,
    actions: Vec<String>,
    human: String,
}

/// Object and action vocabularies plus the designated human category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTable {
    objects: Vec<ObjectCategory>,
    actions: Vec<String>,
    human: usize,
}

impl CategoryTable {
    pub fn new(objects: Vec<ObjectCategory>, actions: Vec<String>, human: &str) -> Result<Self> {
        let mut names = HashSet::new();
        for (i, o) in objects.iter().enumerate() {
            if o.name.is_empty() {
                return Err(Error::validation(
                    "scene-model",
                    format!("objects[{i}].name"),
                    "empty name",
                ));
            }
            if !names.insert(o.name.as_str()) {
                return Err(Error::validation(
                    "scene-model",
                    format!("objects[{i}].name"),
                    format!("duplicate object name `{}`", o.name),
                ));
            }
            if o.article != "a" && o.article != "an" {
                return Err(Error::validation(
                    "scene-model",
                    format!("objects[{i}].article"),
                    format!("article must be `a` or `an`, got `{}`", o.article),
                ));
            }
        }
        let mut acts = HashSet::new();
        for (i, a) in actions.iter().enumerate() {
            if a.is_empty() || !acts.insert(a.as_str()) {
                return Err(Error::validation(
                    "scene-model",
                    format!("actions[{i}]"),
                    format!("empty or duplicate action `{a}`"),
                ));
            }
        }
        if actions.is_empty() {
            return Err(Error::validation("scene-model", "actions", "no action classes"));
        }
        let human = objects
            .iter()
            .position(|o| o.name == human)
            .ok_or_else(|| Error::validation("scene-model", "human", format!("`{human}` is not an object category")))?;
        Ok(CategoryTable {
            objects,
            actions,
            human,
        })
    }

    /// The first `num_objects` COCO categories and `num_actions` actions
    /// (common verbs first, then `action_k`).
    pub fn coco_subset(num_objects: usize, num_actions: usize) -> Result<Self> {
        if num_objects < 2 || num_objects > COCO_OBJECTS.len() {
            return Err(Error::config(
                "scene-model",
                format!("num_objects must be in 2..=80, got {num_objects}"),
            ));
        }
        let objects = COCO_OBJECTS[..num_objects]
            .iter()
            .map(|(n, a)| ObjectCategory {
                name: n.to_string(),
                article: a.to_string(),
            })
            .collect();
        let actions = (0..num_actions)
            .map(|k| match COMMON_ACTIONS.get(k) {
                Some(a) => a.to_string(),
                None => format!("action_{k}"),
            })
            .collect();
        Self::new(objects, actions, "person")
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn human(&self) -> usize {
        self.human
    }

    pub fn objects(&self) -> &[ObjectCategory] {
        &self.objects
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn object_name(&self, id: usize) -> Option<&str> {
        self.objects.get(id).map(|o| o.name.as_str())
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    /// Text used for the per-category embedding, e.g. "a photo of an apple".
    pub fn text_prompt(&self, id: usize) -> Option<String> {
        self.objects
            .get(id)
            .map(|o| format!("a photo of {} {}", o.article, o.name))
    }

    /// Interaction prompt with `act_len` placeholder slots, e.g.
    /// "a photo of a person [ACT] [ACT] cup".
    pub fn interaction_prompt(&self, prefix: &[String], act_len: usize, object: usize) -> Option<String> {
        let name = self.object_name(object)?;
        let mut parts: Vec<&str> = prefix.iter().map(String::as_str).collect();
        parts.push("person");
        parts.extend(std::iter::repeat_n("[ACT]", act_len));
        parts.push(name);
        Some(parts.join(" "))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f: CategoryFile = parse_json_file(path.as_ref())?;
        Self::new(f.objects, f.actions, &f.human)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = CategoryFile {
            objects: self.objects.clone(),
            actions: self.actions.clone(),
            human: self.objects[self.human].name.clone(),
        };
        write_json_file(path.as_ref(), &f)
    }
}
