//! Versioned prompt templates with `{{name}}` placeholders.
//!
//! Each template file starts with a `version: <tag>` line. Built-in
//! templates are compiled in; a configured directory may override any of
//! them by file name, and the principles document may be swapped whole.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::PromptConfig;

const BUILTIN: &[(&str, &str)] = &[
    ("system", include_str!("../../prompts/system.txt")),
    ("describe_shot", include_str!("../../prompts/describe_shot.txt")),
    ("group_shots", include_str!("../../prompts/group_shots.txt")),
    ("sequence_scenes", include_str!("../../prompts/sequence_scenes.txt")),
    ("contextual_scene", include_str!("../../prompts/contextual_scene.txt")),
    ("story_variation", include_str!("../../prompts/story_variation.txt")),
    ("compare_versions", include_str!("../../prompts/compare_versions.txt")),
    ("story_suggestions", include_str!("../../prompts/story_suggestions.txt")),
    ("scene_suggestions", include_str!("../../prompts/scene_suggestions.txt")),
    ("sync_notes", include_str!("../../prompts/sync_notes.txt")),
    ("refine_text", include_str!("../../prompts/refine_text.txt")),
    ("align_script", include_str!("../../prompts/align_script.txt")),
    ("sequence_visuals", include_str!("../../prompts/sequence_visuals.txt")),
    ("contextual_shot", include_str!("../../prompts/contextual_shot.txt")),
    ("augment_video_prompt", include_str!("../../prompts/augment_video_prompt.txt")),
    ("video_prompt_fields", include_str!("../../prompts/video_prompt_fields.txt")),
    ("image_variation", include_str!("../../prompts/image_variation.txt")),
    ("music", include_str!("../../prompts/music.txt")),
];

const BUILTIN_PRINCIPLES: &str = include_str!("../../prompts/principles.md");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    Unknown(String),
    #[error("template {template:?} has no value for placeholder {placeholder:?}")]
    Unfilled { template: String, placeholder: String },
    #[error("template {template:?}: {message}")]
    Malformed { template: String, message: String },
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub version: String,
    pub body: String,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Template, TemplateError> {
        let (first, body) = text.split_once('\n').unwrap_or((text, ""));
        let version = first
            .strip_prefix("version:")
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| TemplateError::Malformed {
                template: name.into(),
                message: "first line must be `version: <tag>`".into(),
            })?;
        let t = Template {
            name: name.into(),
            version: version.into(),
            body: body.trim_end().to_string(),
        };
        t.placeholders()?;
        Ok(t)
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Result<Vec<String>, TemplateError> {
        let mut out: Vec<String> = Vec::new();
        for piece in self.pieces()? {
            if let Piece::Slot(name) = piece {
                if !out.iter().any(|n| n == name) {
                    out.push(name.to_string());
                }
            }
        }
        Ok(out)
    }

    /// Substitutes every placeholder in one pass; values are not re-scanned.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        for piece in self.pieces()? {
            match piece {
                Piece::Lit(s) => out.push_str(s),
                Piece::Slot(name) => {
                    let value =
                        vars.iter()
                            .find(|(k, _)| *k == name)
                            .map(|(_, v)| *v)
                            .ok_or_else(|| TemplateError::Unfilled {
                                template: self.name.clone(),
                                placeholder: name.to_string(),
                            })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    fn pieces(&self) -> Result<Vec<Piece<'_>>, TemplateError> {
        let mut rest = self.body.as_str();
        let mut out = Vec::new();
        while let Some(open) = rest.find("{{") {
            out.push(Piece::Lit(&rest[..open]));
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| TemplateError::Malformed {
                template: self.name.clone(),
                message: "unclosed placeholder".into(),
            })?;
            let name = after[..close].trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(TemplateError::Malformed {
                    template: self.name.clone(),
                    message: format!("bad placeholder name {name:?}"),
                });
            }
            out.push(Piece::Slot(name));
            rest = &after[close + 2..];
        }
        out.push(Piece::Lit(rest));
        Ok(out)
    }
}

enum Piece<'a> {
    Lit(&'a str),
    Slot(&'a str),
}

/// The template set plus the narrative-principles document.
#[derive(Debug, Clone)]
pub struct Prompts {
    templates: BTreeMap<String, Template>,
    principles: Template,
}

impl Prompts {
    pub fn builtin() -> Prompts {
        let templates = BUILTIN
            .iter()
            .map(|(name, text)| {
                let t = Template::parse(name, text).expect("built-in templates are well formed");
                (name.to_string(), t)
            })
            .collect();
        Prompts {
            templates,
            principles: Template::parse("principles", BUILTIN_PRINCIPLES).expect("built-in principles are well formed"),
        }
    }

    /// Built-ins with the configured overrides applied.
    pub fn load(config: &PromptConfig) -> Result<Prompts, TemplateError> {
        let mut p = Prompts::builtin();
        if let Some(dir) = &config.template_dir {
            let names: Vec<String> = p.templates.keys().cloned().collect();
            for name in names {
                let path = dir.join(format!("{name}.txt"));
                if path.exists() {
                    let t = Template::parse(&name, &read(&path)?)?;
                    p.templates.insert(name, t);
                }
            }
        }
        if let Some(path) = &config.principles {
            let text = read(path)?;
            let t = if text.starts_with("version:") {
                Template::parse("principles", &text)?
            } else {
                Template {
                    name: "principles".into(),
                    version: crate::ids::short_hash(&[&text]),
                    body: text.trim_end().to_string(),
                }
            };
            if t.body.trim().is_empty() {
                return Err(TemplateError::Malformed {
                    template: "principles".into(),
                    message: "principles document is empty".into(),
                });
            }
            p.principles = t;
        }
        Ok(p)
    }

    pub fn template(&self, name: &str) -> Result<&Template, TemplateError> {
        self.templates.get(name).ok_or_else(|| TemplateError::Unknown(name.into()))
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        self.template(name)?.render(vars)
    }

    pub fn principles(&self) -> &Template {
        &self.principles
    }

    /// System prompt with the principles document inserted verbatim.
    pub fn system(&self) -> String {
        self.render("system", &[("principles", &self.principles.body)])
            .expect("system template takes only the principles")
    }

    /// `name@version` of every template, for audit records.
    pub fn versions(&self) -> BTreeMap<String, String> {
        let mut m: BTreeMap<String, String> = self.templates.values().map(|t| (t.name.clone(), t.version.clone())).collect();
        m.insert("principles".into(), self.principles.version.clone());
        m
    }
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts::builtin()
    }
}

fn read(path: &Path) -> Result<String, TemplateError> {
    std::fs::read_to_string(path).map_err(|e| TemplateError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_system_carries_principles() {
        let p = Prompts::builtin();
        let system = p.system();
        assert!(system.contains(&p.principles().body));
        assert!(!system.contains("{{"));
        assert_eq!(p.versions().len(), BUILTIN.len() + 1);
    }

    #[test]
    fn missing_value_is_an_error() {
        let t = Template::parse("t", "version: 2\nHello {{ who }} and {{who}}.").unwrap();
        assert_eq!(t.version, "2");
        assert_eq!(t.placeholders().unwrap(), vec!["who".to_string()]);
        assert_eq!(t.render(&[("who", "{{x}}")]).unwrap(), "Hello {{x}} and {{x}}.");
        assert!(matches!(t.render(&[]), Err(TemplateError::Unfilled { .. })));
    }

    #[test]
    fn malformed_templates_are_rejected() {
        assert!(Template::parse("t", "no header\n{{a}}").is_err());
        assert!(Template::parse("t", "version: 1\n{{a").is_err());
        assert!(Template::parse("t", "version: 1\n{{a b}}").is_err());
    }

    #[test]
    fn overrides_replace_builtins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("music.txt"), "version: custom\nCalm piano for {{scene}}.").unwrap();
        std::fs::write(dir.path().join("rules.md"), "Keep it short.").unwrap();
        let p = Prompts::load(&PromptConfig {
            template_dir: Some(dir.path().to_path_buf()),
            principles: Some(dir.path().join("rules.md")),
        })
        .unwrap();
        assert_eq!(p.template("music").unwrap().version, "custom");
        assert_eq!(p.render("music", &[("scene", "x")]).unwrap(), "Calm piano for x.");
        assert!(p.system().ends_with("Keep it short."));
    }
}
