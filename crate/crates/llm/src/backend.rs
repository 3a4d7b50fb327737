//! Chain backend that sends every role to a chat model.

use std::sync::Arc;
use std::time::Instant;

use serial_repro_core::chain::{AgentBackend, BackendError, Description, Produced, StepContext};
use serial_repro_core::grid::{Grid, DEFAULT_SIZE};

use crate::client::{
    ChatMessage, ContentPart, ExchangeLog, LlmClient, LlmError, LlmExchange, Outcome,
};
use crate::parse::parse_matrix_sized;
use crate::prompts::{corrective_prompt, describe_prompt, render_prompt, reproduce_prompt, Task};

pub fn request_id(ctx: &StepContext, retry: u32) -> String {
    let base = format!("req-{}-{}-{}", ctx.chain_id, ctx.index, ctx.attempt);
    if retry == 0 {
        base
    } else {
        format!("{base}.{retry}")
    }
}

enum Rejection {
    Parse(String),
    Description(String),
}

impl Rejection {
    fn message(&self) -> &str {
        match self {
            Rejection::Parse(m) | Rejection::Description(m) => m,
        }
    }

    fn outcome(&self) -> Outcome {
        match self {
            Rejection::Parse(m) => Outcome::ParseFailure { message: m.clone() },
            Rejection::Description(m) => Outcome::InvalidDescription { message: m.clone() },
        }
    }
}

#[derive(Debug)]
pub struct LlmBackend {
    client: LlmClient,
    log: Arc<ExchangeLog>,
    grid_size: usize,
}

impl LlmBackend {
    pub fn new(client: LlmClient, log: Arc<ExchangeLog>) -> Self {
        LlmBackend {
            client,
            log,
            grid_size: DEFAULT_SIZE,
        }
    }

    /// Board side assumed when rendering from a description.
    pub fn with_grid_size(mut self, size: usize) -> Self {
        self.grid_size = size;
        self
    }

    pub fn log(&self) -> &Arc<ExchangeLog> {
        &self.log
    }

    fn record(&self, ex: LlmExchange) -> Result<(), BackendError> {
        self.log
            .record(ex)
            .map_err(|e| BackendError::Transport(format!("exchange log: {e}")))
    }

    /// Ask, parse, and on an unusable reply send a corrective follow-up,
    /// up to `max_retries` times.
    fn converse<T>(
        &self,
        ctx: &StepContext,
        task: Task,
        first: Vec<ContentPart>,
        accept: impl Fn(&str) -> Result<T, Rejection>,
    ) -> Result<Produced<T>, BackendError> {
        let cfg = self.client.config();
        let image_attached = first
            .iter()
            .any(|p| matches!(p, ContentPart::ImageUrl { .. }));
        let ContentPart::Text { text: prompt } = &first[0] else {
            unreachable!("first part is the prompt")
        };
        let mut prompt = prompt.clone();
        let mut messages = vec![ChatMessage::user(first)];
        let mut last = String::new();
        for retry in 0..=cfg.max_retries {
            let id = request_id(ctx, retry);
            let started = Instant::now();
            let result = self.client.complete(&id, &messages);
            let mut ex = LlmExchange {
                request_id: id.clone(),
                chain_id: ctx.chain_id.clone(),
                step_index: ctx.index,
                attempt: ctx.attempt,
                retry,
                task,
                model: cfg.model.clone(),
                temperature: cfg.temperature,
                prompt: prompt.clone(),
                image_attached: image_attached && retry == 0,
                response: None,
                outcome: Outcome::Ok,
                latency_ms: started.elapsed().as_millis() as u64,
            };
            let reply = match result {
                Ok(r) => r,
                Err(e) => {
                    let message = match &e {
                        LlmError::Status { status, .. } => format!("status {status}"),
                        other => other.to_string(),
                    };
                    ex.outcome = Outcome::TransportError {
                        message: message.clone(),
                    };
                    self.record(ex)?;
                    return Err(BackendError::Transport(message));
                }
            };
            ex.response = Some(reply.clone());
            match accept(&reply) {
                Ok(value) => {
                    self.record(ex)?;
                    return Ok(Produced::new(value, id));
                }
                Err(rejection) => {
                    ex.outcome = rejection.outcome();
                    self.record(ex)?;
                    last = rejection.message().to_string();
                    prompt = corrective_prompt(task, &last);
                    messages.push(ChatMessage::assistant(&reply));
                    messages.push(ChatMessage::user(vec![ContentPart::Text {
                        text: prompt.clone(),
                    }]));
                }
            }
        }
        Err(BackendError::InvalidOutput(format!(
            "{} failed after {} retries: {last}",
            task.as_str(),
            cfg.max_retries
        )))
    }

    fn matrix(&self, size: usize) -> impl Fn(&str) -> Result<Grid, Rejection> {
        move |reply| parse_matrix_sized(reply, size).map_err(|e| Rejection::Parse(e.to_string()))
    }
}

fn clean_description(reply: &str) -> String {
    let t = reply.trim();
    let t = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(t);
    t.trim().to_string()
}

impl AgentBackend for LlmBackend {
    fn tag(&self) -> String {
        "llm".into()
    }

    fn reproduce(&self, ctx: &StepContext, grid: &Grid) -> Result<Produced<Grid>, BackendError> {
        let parts = self.client.grid_parts(reproduce_prompt(grid.size()), grid);
        self.converse(ctx, Task::Reproduce, parts, self.matrix(grid.size()))
    }

    fn describe(&self, ctx: &StepContext, grid: &Grid) -> Result<Produced<String>, BackendError> {
        let parts = self.client.grid_parts(describe_prompt(grid.size()), grid);
        self.converse(ctx, Task::Describe, parts, |reply| {
            let text = clean_description(reply);
            Description::validated(text.clone())
                .map(|_| text)
                .map_err(|e| Rejection::Description(e.to_string()))
        })
    }

    fn render(&self, ctx: &StepContext, description: &str) -> Result<Produced<Grid>, BackendError> {
        let parts = vec![ContentPart::Text {
            text: render_prompt(self.grid_size, description),
        }];
        self.converse(ctx, Task::Render, parts, self.matrix(self.grid_size))
    }
}
