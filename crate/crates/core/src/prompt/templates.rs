//! Verbatim system and user prompt texts, embedded from `assets/templates`.
//!
//! `assets/template_digests.txt` records the SHA-256 of every asset; the
//! test suite recomputes them so an accidental edit is caught.

use serde::{Deserialize, Serialize};

/// Marker the prompt-writing templates ask the model to emit.
pub const REPLY_MARKER: &str = "Prompt:";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub id: &'static str,
    pub file: &'static str,
    pub text: &'static str,
}

macro_rules! template {
    ($id:literal, $file:literal) => {
        Template { id: $id, file: $file, text: include_str!(concat!("../../assets/templates/", $file)) }
    };
}

pub const ITERATIVE: Template = template!("iterative", "iterative.txt");
pub const ADAPTIVE_HALVE: Template = template!("adaptive-halve", "adaptive_halve.txt");
pub const ADAPTIVE_REDUCE: Template = template!("adaptive-reduce", "adaptive_reduce.txt");
pub const ADAPTIVE_REPHRASE: Template = template!("adaptive-rephrase", "adaptive_rephrase.txt");
pub const ADAPTIVE_INCREASE1: Template = template!("adaptive-increase1", "adaptive_increase1.txt");
pub const ADAPTIVE_INCREASE2: Template = template!("adaptive-increase2", "adaptive_increase2.txt");
pub const QGEN_LLAMA: Template = template!("qgen-llama", "qgen_llama.txt");
pub const QGEN_MOLMO: Template = template!("qgen-molmo", "qgen_molmo.txt");
pub const QGEN_LLAVA: Template = template!("qgen-llava", "qgen_llava.txt");
pub const VALIDATE_LLAMA: Template = template!("validate-llama", "validate_llama.txt");
pub const VALIDATE_MOLMO: Template = template!("validate-molmo", "validate_molmo.txt");
pub const AESTHETIC_SYSTEM: Template = template!("aesthetic-system", "aesthetic_system.txt");
pub const AESTHETIC_USER: Template = template!("aesthetic-user", "aesthetic_user.txt");

pub const ALL: &[Template] = &[
    ITERATIVE,
    ADAPTIVE_HALVE,
    ADAPTIVE_REDUCE,
    ADAPTIVE_REPHRASE,
    ADAPTIVE_INCREASE1,
    ADAPTIVE_INCREASE2,
    QGEN_LLAMA,
    QGEN_MOLMO,
    QGEN_LLAVA,
    VALIDATE_LLAMA,
    VALIDATE_MOLMO,
    AESTHETIC_SYSTEM,
    AESTHETIC_USER,
];

pub const RECORDED_DIGESTS: &str = include_str!("../../assets/template_digests.txt");

pub fn by_id(id: &str) -> Option<&'static Template> {
    ALL.iter().find(|t| t.id == id)
}

impl Template {
    /// Asset text without the trailing newline.
    pub fn body(&self) -> &'static str {
        self.text.trim_end_matches('\n')
    }

    pub fn digest(&self) -> String {
        crate::gateway::image::sha256_hex(self.text.as_bytes())
    }
}

/// Recorded digest for an asset file name.
pub fn recorded_digest(file: &str) -> Option<&'static str> {
    RECORDED_DIGESTS.lines().find_map(|line| {
        let (name, digest) = line.split_once(' ')?;
        (name == file).then_some(digest.trim())
    })
}

/// Which family of judge prompts to use for question generation/validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateSet {
    Llama,
    Molmo,
    #[default]
    Llava,
}

impl TemplateSet {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "llama" => Some(TemplateSet::Llama),
            "molmo" => Some(TemplateSet::Molmo),
            "llava" => Some(TemplateSet::Llava),
            _ => None,
        }
    }

    pub fn question_generation(self) -> Template {
        match self {
            TemplateSet::Llama => QGEN_LLAMA,
            TemplateSet::Molmo => QGEN_MOLMO,
            TemplateSet::Llava => QGEN_LLAVA,
        }
    }

    // No validation prompt is published for the llava family; it shares llama's.
    pub fn validation(self) -> Template {
        match self {
            TemplateSet::Molmo => VALIDATE_MOLMO,
            TemplateSet::Llama | TemplateSet::Llava => VALIDATE_LLAMA,
        }
    }
}
