//! Clinical case data model, the category registry, case-file I/O and the
//! synthetic vignette generator.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon;

#[derive(Debug, Error)]
pub enum VignetteError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed case record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line} (case {case_id}): {message}")]
    Validation { line: usize, case_id: String, message: String },
    #[error("invalid category registry: {0}")]
    Registry(String),
    #[error("invalid generator arguments: {0}")]
    Generator(String),
}

/// One category label with its clinical importance weight `w_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub label: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryRegistry {
    categories: Vec<Category>,
}

impl CategoryRegistry {
    pub fn new(categories: Vec<Category>) -> Result<Self, VignetteError> {
        let registry = Self { categories };
        registry.validate()?;
        Ok(registry)
    }

    pub fn validate(&self) -> Result<(), VignetteError> {
        if self.categories.is_empty() {
            return Err(VignetteError::Registry("at least one category is required".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.categories {
            if c.label.trim().is_empty() {
                return Err(VignetteError::Registry("empty category label".into()));
            }
            if !seen.insert(c.label.as_str()) {
                return Err(VignetteError::Registry(format!("duplicate label {:?}", c.label)));
            }
            if !(c.weight > 0.0 && c.weight <= 2.0) {
                return Err(VignetteError::Registry(format!(
                    "weight for {:?} must lie in (0, 2], got {}",
                    c.label, c.weight
                )));
            }
        }
        Ok(())
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.label == label)
    }

    pub fn weight(&self, label: &str) -> Option<f64> {
        self.categories.iter().find(|c| c.label == label).map(|c| c.weight)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.label.as_str())
    }
}

impl Default for CategoryRegistry {
    fn default() -> Self {
        let categories = [
            ("symptom", 1.0),
            ("temporal_pattern", 0.9),
            ("severity", 0.8),
            ("location", 0.8),
            ("quality_character", 0.7),
            ("aggravating_factor", 0.7),
            ("alleviating_factor", 0.7),
            ("associated_symptom", 0.9),
            ("medical_history", 0.8),
            ("medication", 0.6),
        ]
        .into_iter()
        .map(|(label, weight)| Category { label: label.to_string(), weight })
        .collect();
        Self { categories }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    Other,
}

impl std::fmt::Display for Sex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Other => "patient",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEntity {
    pub id: String,
    pub surface: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub category: String,
    /// The category weight, resolved from the registry at load time.
    #[serde(skip)]
    pub importance_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VignetteCase {
    pub case_id: String,
    pub age: u32,
    pub sex: Sex,
    pub chief_complaint: String,
    pub hpi_text: String,
    pub entities: Vec<ClinicalEntity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_statements: Option<Vec<String>>,
}

impl VignetteCase {
    pub fn entity(&self, id: &str) -> Option<&ClinicalEntity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Checks the per-case invariants and fills in entity weights.
    pub fn resolve(&mut self, registry: &CategoryRegistry) -> Result<(), String> {
        if self.case_id.trim().is_empty() {
            return Err("case_id is empty".into());
        }
        if self.entities.is_empty() {
            return Err("case has no entities".into());
        }
        let mut ids = BTreeSet::new();
        for e in &mut self.entities {
            if !ids.insert(e.id.clone()) {
                return Err(format!("duplicate entity id {:?}", e.id));
            }
            if e.surface.trim().is_empty() {
                return Err(format!("entity {:?} has an empty surface", e.id));
            }
            let weight = registry
                .weight(&e.category)
                .ok_or_else(|| format!("unknown category {:?} on entity {:?}", e.category, e.id))?;
            e.importance_weight = weight;
        }
        Ok(())
    }
}

/// Reads line-delimited case records. Blank lines are skipped.
pub fn load_cases(path: &Path, registry: &CategoryRegistry) -> Result<Vec<VignetteCase>, VignetteError> {
    let file = File::open(path).map_err(|source| VignetteError::Io { path: path.display().to_string(), source })?;
    read_cases(BufReader::new(file), registry).map_err(|e| match e {
        VignetteError::Io { source, .. } => VignetteError::Io { path: path.display().to_string(), source },
        other => other,
    })
}

pub fn read_cases<R: BufRead>(reader: R, registry: &CategoryRegistry) -> Result<Vec<VignetteCase>, VignetteError> {
    let mut cases = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| VignetteError::Io { path: String::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut case: VignetteCase =
            serde_json::from_str(&line).map_err(|e| VignetteError::Parse { line: line_no, message: e.to_string() })?;
        case.resolve(registry).map_err(|message| VignetteError::Validation {
            line: line_no,
            case_id: case.case_id.clone(),
            message,
        })?;
        cases.push(case);
    }
    Ok(cases)
}

pub fn write_cases<W: Write>(mut writer: W, cases: &[VignetteCase]) -> std::io::Result<()> {
    for case in cases {
        serde_json::to_writer(&mut writer, case)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_cases(path: &Path, cases: &[VignetteCase]) -> Result<(), VignetteError> {
    let io_err = |source| VignetteError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    write_cases(BufWriter::new(file), cases).map_err(io_err)
}

/// Deterministic synthetic vignettes. Categories are assigned round-robin in
/// registry order, so with at least as many entities as categories every
/// category is represented. Each case's HPI is built from category sentence
/// frames and contains every entity surface verbatim.
pub fn generate_synthetic_cases(
    n: usize,
    seed: u64,
    registry: &CategoryRegistry,
    entity_range: (usize, usize),
) -> Result<Vec<VignetteCase>, VignetteError> {
    let (min, max) = entity_range;
    if min < 1 || max < min {
        return Err(VignetteError::Generator(format!("entity range ({min}, {max}) must satisfy 1 <= min <= max")));
    }
    registry.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sexes = [Sex::Female, Sex::Male];
    let mut cases = Vec::with_capacity(n);
    for case_idx in 0..n {
        let count = rng.gen_range(min..=max);
        let age = rng.gen_range(18..=85);
        let sex = *sexes.choose(&mut rng).expect("non-empty");

        // Shuffled phrase pools per category, consumed without replacement.
        let mut pools: Vec<Vec<String>> = registry
            .categories()
            .iter()
            .map(|c| {
                let mut pool = lexicon::entity_phrases(&c.label);
                pool.shuffle(&mut rng);
                pool
            })
            .collect();

        let mut entities = Vec::with_capacity(count);
        for i in 0..count {
            let cat_idx = i % registry.len();
            let category = &registry.categories()[cat_idx];
            let round = i / registry.len();
            let pool = &mut pools[cat_idx];
            let surface = pool
                .pop()
                .unwrap_or_else(|| format!("{} finding {}", lexicon::display_name(&category.label), round + 1));
            entities.push(ClinicalEntity {
                id: format!("e{:02}", i + 1),
                surface,
                aliases: Vec::new(),
                category: category.label.clone(),
                importance_weight: category.weight,
            });
        }
        for e in &mut entities {
            e.aliases = lexicon::aliases_for(&e.surface);
        }

        let chief_complaint = entities[0].surface.clone();
        let mut sentences = vec![lexicon::intro_sentence(age, sex, &chief_complaint)];
        let mut statements = Vec::with_capacity(entities.len());
        for e in &entities {
            let sentence = lexicon::statement_frame(&e.category, &e.surface);
            sentences.push(format!("{sentence}."));
            statements.push(sentence);
        }
        cases.push(VignetteCase {
            case_id: format!("syn-{seed}-{case_idx:04}"),
            age,
            sex,
            chief_complaint,
            hpi_text: sentences.join(" "),
            entities,
            ground_truth_statements: Some(statements),
        });
    }
    Ok(cases)
}
