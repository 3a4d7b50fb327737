//! Prompt texts for the three chain roles.
//!
//! The templates live in `prompts/*.txt` and are sent byte for byte, with
//! `{size}` replaced by the board side and `{description}` by the text
//! being rendered.

const REPRODUCE: &str = include_str!("../prompts/reproduce.txt");
const DESCRIBE: &str = include_str!("../prompts/describe.txt");
const RENDER: &str = include_str!("../prompts/render.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Reproduce,
    Describe,
    Render,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Reproduce => "reproduce",
            Task::Describe => "describe",
            Task::Render => "render",
        }
    }
}

fn sized(template: &str, size: usize) -> String {
    template.replace("{size}", &size.to_string())
}

pub fn reproduce_prompt(size: usize) -> String {
    sized(REPRODUCE, size)
}

pub fn describe_prompt(size: usize) -> String {
    sized(DESCRIBE, size)
}

pub fn render_prompt(size: usize, description: &str) -> String {
    sized(RENDER, size).replace("{description}", description)
}

/// Follow-up turn sent after an unusable reply.
pub fn corrective_prompt(task: Task, diagnostic: &str) -> String {
    let ask = match task {
        Task::Reproduce | Task::Render => {
            "Reply with only the matrix, one row per line, using 0 and 1 separated by spaces."
        }
        Task::Describe => "Reply with only the description.",
    };
    format!("Your previous reply could not be used: {diagnostic}. {ask}")
}
