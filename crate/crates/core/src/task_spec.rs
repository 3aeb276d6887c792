//! Task schema and the in-memory entity database queried by the system bot.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dialogue::{is_dontcare, INTENT_SLOT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Categorical,
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub kind: SlotKind,
    #[serde(default)]
    pub values: Vec<String>,
    #[serde(default)]
    pub requestable: bool,
    #[serde(default)]
    pub constrainable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub task_name: String,
    pub intents: Vec<String>,
    /// Intents whose transaction is summarised with CONFIRM before completion.
    #[serde(default)]
    pub confirm_intents: Vec<String>,
    /// Slot naming an entity; used when several entities are offered at once.
    #[serde(default)]
    pub entity_name_slot: Option<String>,
    pub slots: Vec<SlotDef>,
}

impl TaskSchema {
    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn has_intent(&self, intent: &str) -> bool {
        self.intents.iter().any(|i| i == intent)
    }

    pub fn confirms(&self, intent: &str) -> bool {
        self.confirm_intents.iter().any(|i| i == intent)
    }

    fn validate(&self) -> Result<(), TaskSpecError> {
        if self.task_name.trim().is_empty() {
            return Err(invalid("task_name", "must not be empty"));
        }
        if self.intents.is_empty() {
            return Err(invalid("intents", "at least one intent is required"));
        }
        for (i, intent) in self.intents.iter().enumerate() {
            if intent.trim().is_empty() {
                return Err(invalid(format!("intents[{i}]"), "must not be empty"));
            }
        }
        for (i, intent) in self.confirm_intents.iter().enumerate() {
            if !self.has_intent(intent) {
                return Err(invalid(
                    format!("confirm_intents[{i}]"),
                    format!("`{intent}` is not a declared intent"),
                ));
            }
        }
        let mut seen = HashSet::new();
        for (i, slot) in self.slots.iter().enumerate() {
            let path = format!("slots[{i}]");
            if slot.name.trim().is_empty() {
                return Err(invalid(format!("{path}.name"), "must not be empty"));
            }
            if slot.name == INTENT_SLOT {
                return Err(invalid(format!("{path}.name"), "`intent` is reserved"));
            }
            if !seen.insert(slot.name.as_str()) {
                return Err(invalid(
                    format!("{path}.name"),
                    format!("duplicate slot name `{}`", slot.name),
                ));
            }
            match slot.kind {
                SlotKind::Categorical if slot.values.is_empty() => {
                    return Err(invalid(
                        format!("{path}.values"),
                        "categorical slots need a non-empty value list",
                    ))
                }
                SlotKind::FreeText if !slot.values.is_empty() => {
                    return Err(invalid(
                        format!("{path}.values"),
                        "free_text slots take no value list",
                    ))
                }
                _ => {}
            }
        }
        if !self.slots.iter().any(|s| s.constrainable) {
            return Err(invalid("slots", "at least one constrainable slot is required"));
        }
        if let Some(name) = &self.entity_name_slot {
            if self.slot(name).is_none() {
                return Err(invalid(
                    "entity_name_slot",
                    format!("`{name}` is not a declared slot"),
                ));
            }
        }
        Ok(())
    }
}

/// A database row: slot name to value.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Entity {
    pub attributes: IndexMap<String, String>,
}

impl Entity {
    pub fn get(&self, slot: &str) -> Option<&str> {
        self.attributes.get(slot).map(String::as_str)
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Entity {
            attributes: pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    /// Exact case-insensitive match on every constraint; `dontcare` never filters.
    pub fn matches<'a, I>(&self, constraints: I) -> bool
    where
        I: IntoIterator<Item = (&'a String, &'a String)>,
    {
        constraints.into_iter().all(|(slot, value)| {
            is_dontcare(value)
                || self
                    .get(slot)
                    .is_some_and(|v| v.to_lowercase() == value.to_lowercase())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDatabase {
    pub task_name: String,
    pub entities: Vec<Entity>,
}

/// Schema plus database: everything the bots know about a task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub schema: TaskSchema,
    pub db: EntityDatabase,
    columns: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TaskSpecError {
    #[error("cannot parse {what}: {source}")]
    Parse {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid task specification at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> TaskSpecError {
    TaskSpecError::Validation {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("constraint on undeclared slot `{0}`")]
pub struct UnknownSlot(pub String);

impl TaskSpec {
    pub fn new(schema: TaskSchema, db: EntityDatabase) -> Result<Self, TaskSpecError> {
        schema.validate()?;
        if db.task_name != schema.task_name {
            return Err(invalid(
                "task_name",
                format!(
                    "database is for `{}` but schema is `{}`",
                    db.task_name, schema.task_name
                ),
            ));
        }
        for (i, entity) in db.entities.iter().enumerate() {
            for (slot, value) in &entity.attributes {
                let path = format!("entities[{i}].{slot}");
                let Some(def) = schema.slot(slot) else {
                    return Err(invalid(path, "attribute is not a declared slot"));
                };
                if def.kind == SlotKind::Categorical
                    && !def.values.iter().any(|v| v.eq_ignore_ascii_case(value))
                {
                    return Err(invalid(
                        path,
                        format!("`{value}` is not in the slot's value list"),
                    ));
                }
            }
        }
        let columns = schema
            .slots
            .iter()
            .filter(|s| db.entities.iter().any(|e| e.get(&s.name).is_some()))
            .map(|s| s.name.clone())
            .collect();
        Ok(TaskSpec {
            schema,
            db,
            columns,
        })
    }

    /// Parses and validates a schema document and a database document.
    pub fn load(schema_doc: &str, db_doc: &str) -> Result<Self, TaskSpecError> {
        let schema: TaskSchema =
            serde_json::from_str(schema_doc).map_err(|source| TaskSpecError::Parse {
                what: "schema",
                source,
            })?;
        let db: EntityDatabase =
            serde_json::from_str(db_doc).map_err(|source| TaskSpecError::Parse {
                what: "database",
                source,
            })?;
        TaskSpec::new(schema, db)
    }

    pub fn load_files(schema: &Path, db: &Path) -> Result<Self, TaskSpecError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| TaskSpecError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        TaskSpec::load(&read(schema)?, &read(db)?)
    }

    pub fn name(&self) -> &str {
        &self.schema.task_name
    }

    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.schema.slot(name)
    }

    /// Slots that appear as attributes of at least one entity, in schema order.
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn is_column(&self, slot: &str) -> bool {
        self.columns.iter().any(|c| c == slot)
    }

    /// Constrainable slots stored in the database: the search criteria.
    pub fn search_slots(&self) -> impl Iterator<Item = &SlotDef> {
        self.schema
            .slots
            .iter()
            .filter(|s| s.constrainable && self.is_column(&s.name))
    }

    /// Constrainable slots not stored in the database: transaction parameters.
    pub fn param_slots(&self) -> impl Iterator<Item = &SlotDef> {
        self.schema
            .slots
            .iter()
            .filter(|s| s.constrainable && !self.is_column(&s.name))
    }

    /// Distinct values of a column, in database order.
    pub fn column_values(&self, slot: &str) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.db
            .entities
            .iter()
            .filter_map(|e| e.get(slot))
            .filter(|v| seen.insert(v.to_lowercase()))
            .collect()
    }

    /// Every value the slot can take: database values first, then the
    /// schema vocabulary.
    pub fn known_values(&self, slot: &str) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let vocab = self
            .slot(slot)
            .map(|s| s.values.iter().map(String::as_str).collect::<Vec<_>>())
            .unwrap_or_default();
        for v in self.column_values(slot).into_iter().chain(vocab) {
            if seen.insert(v.to_lowercase()) {
                out.push(v.to_string());
            }
        }
        out
    }

    /// Entities matching every constraint, in database order.
    pub fn query<'a, I>(&self, constraints: I) -> Result<Vec<&Entity>, UnknownSlot>
    where
        I: IntoIterator<Item = (&'a String, &'a String)>,
    {
        let constraints: Vec<(&String, &String)> = constraints.into_iter().collect();
        for (slot, _) in &constraints {
            if self.slot(slot).is_none() {
                return Err(UnknownSlot((*slot).clone()));
            }
        }
        Ok(self
            .db
            .entities
            .iter()
            .filter(|e| e.matches(constraints.iter().copied()))
            .collect())
    }

    /// Convenience wrapper over [`query`](Self::query) for a map of constraints.
    pub fn query_map(&self, constraints: &BTreeMap<String, String>) -> Result<Vec<&Entity>, UnknownSlot> {
        self.query(constraints.iter())
    }
}
