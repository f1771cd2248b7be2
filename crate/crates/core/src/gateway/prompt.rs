use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfigError, LabelSpace, TaskSpec};
use crate::ingest::ContentItem;

pub const DEFAULT_TEMPLATE: &str = "default";

/// Response contract quoted verbatim in every prompt.
pub const RESPONSE_FORMAT: &str = r#"{"label": "<string>", "confidence": <number 0..1>, "reasoning": "<string>"}"#;

const DEFAULT_TEMPLATE_TEXT: &str = "\
You are annotating one item for the classification task \"{{task_id}}\".

Task: {{instruction}}

{{labels}}

Item:
<<<
{{content}}
>>>

Respond with a single JSON object and nothing else, in exactly this format:
{{response_format}}
\"confidence\" is your probability, between 0 and 1, that the label is correct. \
\"reasoning\" briefly explains the evidence for the label.
";

/// A prompt ready to send. Identical bytes for every model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template_id: String,
    pub item_id: String,
    pub text: String,
}

/// Prompt templates by id. Templates use `{{task_id}}`, `{{instruction}}`,
/// `{{labels}}`, `{{content}}` and `{{response_format}}` placeholders.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, String>,
}

impl TemplateRegistry {
    pub fn bundled() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(DEFAULT_TEMPLATE.to_string(), DEFAULT_TEMPLATE_TEXT.to_string());
        TemplateRegistry { templates }
    }

    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) {
        self.templates.insert(id.into(), text.into());
    }

    /// Adds every `<id>.txt` file in `dir` as template `<id>`.
    pub fn load_dir(&mut self, dir: &Path) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                let text = std::fs::read_to_string(&path)?;
                self.insert(stem, text);
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.templates.get(id).map(String::as_str)
    }
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::bundled()
    }
}

fn label_section(space: &LabelSpace) -> String {
    match space {
        LabelSpace::Closed(labels) => {
            let mut out = String::from("Choose exactly one label from this list and copy it verbatim:\n");
            for label in labels {
                out.push_str("- ");
                out.push_str(label);
                out.push('\n');
            }
            out.pop();
            out
        }
        LabelSpace::Open => "There is no fixed label list. Use the most fitting established category name; \
if none fits, propose an appropriate new category label as a short noun phrase."
            .to_string(),
    }
}

pub fn render_prompt(
    templates: &TemplateRegistry,
    task: &TaskSpec,
    item: &ContentItem,
) -> Result<RenderedPrompt, ConfigError> {
    let template = templates
        .get(&task.template)
        .ok_or_else(|| ConfigError::UnknownTemplate(task.template.clone()))?;
    let text = template
        .replace("{{task_id}}", &task.id)
        .replace("{{instruction}}", &task.instruction)
        .replace("{{labels}}", &label_section(&task.labels))
        .replace("{{response_format}}", RESPONSE_FORMAT)
        // content last so placeholder-like text inside items is left alone
        .replace("{{content}}", &item.content);
    Ok(RenderedPrompt {
        template_id: task.template.clone(),
        item_id: item.id.clone(),
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(content: &str) -> ContentItem {
        ContentItem {
            id: "x".into(),
            content: content.into(),
            group: "javascript".into(),
            gold: Some("yes".into()),
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let task = TaskSpec::closed("is-javascript", 1, &["yes", "no"], "Is this JavaScript?");
        let reg = TemplateRegistry::bundled();
        let a = render_prompt(&reg, &task, &item("console.log(1)")).unwrap();
        let b = render_prompt(&reg, &task, &item("console.log(1)")).unwrap();
        assert_eq!(a.text.as_bytes(), b.text.as_bytes());
        assert!(a.text.contains("console.log(1)"));
        assert!(a.text.contains("Is this JavaScript?"));
        assert!(a.text.contains(RESPONSE_FORMAT));
    }

    #[test]
    fn level3_prompt_lists_the_five_labels() {
        let task = TaskSpec::level3_default("domain");
        let p = render_prompt(&TemplateRegistry::bundled(), &task, &item("x")).unwrap();
        let listed: Vec<&str> = p.text.lines().filter_map(|l| l.strip_prefix("- ")).collect();
        assert_eq!(listed, ["frontend", "backend", "full-stack", "database", "supporting tools"]);
    }

    #[test]
    fn open_prompt_asks_for_new_category() {
        let task = TaskSpec::open("domain-open", "Name the application domain.");
        let p = render_prompt(&TemplateRegistry::bundled(), &task, &item("x")).unwrap();
        assert!(p.text.contains("propose an appropriate new category label"));
        assert!(!p.text.contains("- frontend"));
    }

    #[test]
    fn prompt_never_carries_group_or_gold() {
        let task = TaskSpec::closed("t", 1, &["yes", "no"], "Is this code?");
        let p = render_prompt(&TemplateRegistry::bundled(), &task, &item("x")).unwrap();
        assert!(!p.text.contains("javascript"));
    }

    #[test]
    fn unknown_template_is_config_error() {
        let mut task = TaskSpec::level3_default("t");
        task.template = "missing".into();
        assert_eq!(
            render_prompt(&TemplateRegistry::bundled(), &task, &item("x")),
            Err(ConfigError::UnknownTemplate("missing".into()))
        );
    }

    #[test]
    fn custom_templates_load_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("terse.txt"), "{{instruction}} | {{content}}").unwrap();
        std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let mut reg = TemplateRegistry::bundled();
        reg.load_dir(dir.path()).unwrap();
        let mut task = TaskSpec::level3_default("t");
        task.template = "terse".into();
        task.instruction = "Classify".into();
        let p = render_prompt(&reg, &task, &item("{{labels}}")).unwrap();
        assert_eq!(p.text, "Classify | {{labels}}");
        assert!(reg.get("notes").is_none());
    }
}
