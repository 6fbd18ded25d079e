//! Built-in clinical phrase banks for the default categories: entity surfaces
//! for the synthetic generator, question templates for the policy's action
//! space, and the sentence frames used in HPI text.
//!
//! Every entity phrase shares at least half of its important words with one of
//! its category's question templates, so each generated entity can be elicited
//! by asking the right kind of question.

use crate::vignette::Sex;

struct CategoryLexicon {
    label: &'static str,
    display: &'static str,
    phrases: &'static [&'static str],
    templates: [&'static str; 2],
    cue: &'static str,
    frame: &'static str,
}

const LEXICON: &[CategoryLexicon] = &[
    CategoryLexicon {
        label: "symptom",
        display: "symptoms",
        phrases: &[
            "chest pain",
            "abdominal pain",
            "headache",
            "shortness of breath",
            "persistent cough",
            "sore throat",
            "back pain",
            "dizziness",
            "fatigue",
            "palpitations",
            "joint pain",
            "skin rash",
        ],
        templates: [
            "Besides the {hint}, have you noticed any other symptom such as pain, cough, headache, dizziness, fatigue, rash, palpitations, sore throat, or shortness of breath?",
            "What symptom bothers you most right now: the {hint}, pain somewhere else, a cough, fatigue, or dizziness?",
        ],
        cue: "other symptoms such as pain, cough, headache, dizziness, fatigue, or rash",
        frame: "The patient reports {s}",
    },
    CategoryLexicon {
        label: "temporal_pattern",
        display: "timing",
        phrases: &[
            "sudden onset",
            "gradual onset",
            "intermittent episodes",
            "worse at night",
            "worse in the morning",
            "constant for days",
            "recurring for weeks",
            "lasting several hours",
        ],
        templates: [
            "When did the {hint} start: was the onset sudden or gradual, and is it constant or intermittent?",
            "Is the {hint} worse at night or in the morning, and how many hours, days, or weeks has it been recurring or lasting?",
        ],
        cue: "timing, such as sudden or gradual onset, constant or intermittent episodes, worse at night or in the morning",
        frame: "Timing is notable for {s}",
    },
    CategoryLexicon {
        label: "severity",
        display: "severity",
        phrases: &[
            "mild",
            "moderate",
            "severe",
            "worst ever",
            "eight out of ten",
            "disrupts sleep",
            "limits daily activity",
        ],
        templates: [
            "How severe is the {hint} out of ten: mild, moderate, severe, or the worst ever?",
            "How much does the {hint} limit your daily activity, and does it disrupt your sleep?",
        ],
        cue: "severity, whether mild, moderate, or severe, out of ten",
        frame: "Severity is described as {s}",
    },
    CategoryLexicon {
        label: "location",
        display: "location",
        phrases: &[
            "left side",
            "right side",
            "center of the chest",
            "upper abdomen",
            "lower back",
            "radiating to the jaw",
            "radiating down the arm",
            "behind the eyes",
        ],
        templates: [
            "Where exactly is the {hint} located: the left side, right side, center, upper, or lower area?",
            "Does the {hint} spread anywhere, radiating to your jaw, down your arm, your back, or behind your eyes?",
        ],
        cue: "location, such as the left side, right side, center, upper or lower area, radiating anywhere",
        frame: "Location is reported as {s}",
    },
    CategoryLexicon {
        label: "quality_character",
        display: "character",
        phrases: &[
            "sharp",
            "dull ache",
            "burning sensation",
            "throbbing",
            "stabbing",
            "pressure sensation",
            "tightness",
            "cramping",
        ],
        templates: [
            "How would you describe the {hint}: sharp, dull, burning, throbbing, or stabbing?",
            "Does the {hint} feel more like pressure, tightness, cramping, or an ache?",
        ],
        cue: "character, whether sharp, dull, burning, throbbing, pressure, or cramping",
        frame: "The character is described as {s}",
    },
    CategoryLexicon {
        label: "aggravating_factor",
        display: "aggravating factors",
        phrases: &[
            "physical exertion",
            "deep breathing",
            "eating fatty meals",
            "lying flat",
            "bright light",
            "cold weather",
            "walking upstairs",
            "emotional stress",
        ],
        templates: [
            "What makes the {hint} worse, such as exertion, walking upstairs, eating meals, deep breathing, or lying flat?",
            "Do things like cold weather, bright light, stress, or physical activity make the {hint} worse?",
        ],
        cue: "things that make it worse, such as exertion, walking, eating meals, breathing, lying flat, or stress",
        frame: "Symptoms worsen with {s}",
    },
    CategoryLexicon {
        label: "alleviating_factor",
        display: "relieving factors",
        phrases: &[
            "rest",
            "sitting forward",
            "heat packs",
            "cool compress",
            "antacids",
            "pain relievers",
            "quiet dark room",
            "drinking water",
        ],
        templates: [
            "Does anything relieve the {hint}, like rest, sitting forward, heat packs, or a cool compress?",
            "Have you tried anything that helps, such as antacids, pain relievers, drinking water, or a quiet dark room?",
        ],
        cue: "things that relieve it, such as rest, heat packs, a cool compress, antacids, or pain relievers",
        frame: "Symptoms improve with {s}",
    },
    CategoryLexicon {
        label: "associated_symptom",
        display: "associated symptoms",
        phrases: &[
            "nausea",
            "vomiting",
            "sweating",
            "fever",
            "chills",
            "lightheadedness",
            "blurred vision",
            "loss of appetite",
        ],
        templates: [
            "Along with the {hint}, have you had nausea, vomiting, sweating, fever, or chills?",
            "Have you noticed any lightheadedness, blurred vision, loss of appetite, or weight changes?",
        ],
        cue: "associated symptoms like nausea, vomiting, sweating, fever, chills, or blurred vision",
        frame: "The patient also notes {s}",
    },
    CategoryLexicon {
        label: "medical_history",
        display: "medical history",
        phrases: &[
            "hypertension",
            "type 2 diabetes",
            "asthma",
            "prior heart attack",
            "high cholesterol",
            "chronic migraines",
            "kidney stones",
            "previous surgery",
        ],
        templates: [
            "Do you have any past medical history such as hypertension, diabetes, asthma, high cholesterol, or a heart attack?",
            "Have you ever had surgery, kidney stones, chronic migraines, or any previous hospital stays?",
        ],
        cue: "past medical history such as hypertension, diabetes, asthma, high cholesterol, or previous surgery",
        frame: "Past history includes {s}",
    },
    CategoryLexicon {
        label: "medication",
        display: "medications",
        phrases: &[
            "daily aspirin",
            "lisinopril",
            "metformin",
            "rescue inhaler",
            "birth control pills",
            "blood thinner",
            "vitamin supplements",
            "statin",
        ],
        templates: [
            "What medications do you take regularly, like aspirin, metformin, lisinopril, a statin, or a blood thinner?",
            "Do you use an inhaler, vitamin supplements, birth control pills, or any other medications?",
        ],
        cue: "medications such as aspirin, metformin, lisinopril, an inhaler, supplements, or pills",
        frame: "Current medications include {s}",
    },
];

/// Open-ended templates that do not target a single category. The `{category}`
/// slot receives the cue phrase of the most promising uncovered category.
pub const GENERIC_TEMPLATES: [&str; 4] = [
    "Can you tell me more about how you have been feeling?",
    "Is there anything else you think I should know?",
    "Is there anything about {category} that you have not mentioned yet?",
    "Could you describe any {category} related to the {hint}?",
];

const ALIASES: &[(&str, &[&str])] = &[
    ("shortness of breath", &["trouble breathing", "breathlessness"]),
    ("abdominal pain", &["stomach pain", "belly pain"]),
    ("headache", &["head pain"]),
    ("palpitations", &["racing heart"]),
    ("hypertension", &["high blood pressure"]),
    ("lightheadedness", &["feeling faint"]),
    ("prior heart attack", &["previous myocardial infarction"]),
    ("blood thinner", &["anticoagulant"]),
];

fn lookup(label: &str) -> Option<&'static CategoryLexicon> {
    LEXICON.iter().find(|c| c.label == label)
}

/// Human-readable category name ("temporal_pattern" -> "timing").
pub fn display_name(label: &str) -> String {
    match lookup(label) {
        Some(c) => c.display.to_string(),
        None => label.replace('_', " "),
    }
}

pub fn entity_phrases(label: &str) -> Vec<String> {
    match lookup(label) {
        Some(c) => c.phrases.iter().map(|s| s.to_string()).collect(),
        None => Vec::new(),
    }
}

pub fn aliases_for(surface: &str) -> Vec<String> {
    ALIASES
        .iter()
        .find(|(s, _)| *s == surface)
        .map(|(_, a)| a.iter().map(|s| s.to_string()).collect())
        .unwrap_or_default()
}

/// The two question templates targeting `label`.
pub fn category_templates(label: &str) -> [String; 2] {
    match lookup(label) {
        Some(c) => c.templates.map(String::from),
        None => {
            let name = label.replace('_', " ");
            [
                format!("Can you tell me about any {name} related to the {{hint}}?"),
                format!("Is there anything regarding {name} that I should know about?"),
            ]
        }
    }
}

/// Phrase substituted into `{category}` slots.
pub fn category_cue(label: &str) -> String {
    match lookup(label) {
        Some(c) => c.cue.to_string(),
        None => label.replace('_', " "),
    }
}

/// The atomic statement for an entity, without terminal punctuation.
pub fn statement_frame(label: &str, surface: &str) -> String {
    match lookup(label) {
        Some(c) => c.frame.replace("{s}", surface),
        None => format!("Additional {} finding is {surface}", label.replace('_', " ")),
    }
}

pub fn intro_sentence(age: u32, sex: Sex, chief_complaint: &str) -> String {
    format!("A {age}-year-old {sex} presents with {chief_complaint}.")
}
