//! Prompt templates. The wording is fixed data: agents are prompted with
//! exactly these strings, and fixtures and transcripts depend on them.

use crate::agent::PromptClass;
use crate::eval::{EvalResult, EvalStatus};
use crate::lesson::{Lesson, LessonKind};
use crate::problem::TaskKind;
use crate::scalar::Real;

pub const OPENMP_SENTENCE: &str = "You should use OpenMP to parallelize the code.";

pub const IMPROVE_LESSONS_INTRO: &str = "While you rewrite the code, consider the following lessons. \
If Code A and Code B appear in the lessons, Code A refers to the given code and Code B refers to an \
attempted rewrite. Code B may not be optimal and it could be even worse than Code A.";

pub const IMPROVE_LESSONS_OUTRO: &str = "Besides the above lessons, consider other optimization \
strategies that can more significantly improve the performance of the given code.";

pub const GENERATE_LESSONS_INTRO: &str = "While you implement the function, consider the following lessons.";

pub const EXAMPLE_SIGNATURE: &str =
    "def sum(a: float, b: float) -> float:\n  \"\"\" Return the sum of two floats a and b \"\"\"";

pub const EXAMPLE_BODY: &str = "  return a + b";

/// Settings shared by every prompt of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub task: TaskKind,
    pub language: String,
    /// Adds the OpenMP sentence to optimization prompts.
    pub parallel_hint: bool,
    /// Speedup lessons at or above this score are "significant".
    pub significant_cutoff: f64,
}

impl PromptContext {
    pub fn new(task: TaskKind, language: impl Into<String>, parallel_hint: bool, significant_cutoff: f64) -> Self {
        Self { task, language: language.into(), parallel_hint, significant_cutoff }
    }
}

fn optimize_header(language: &str, parallel_hint: bool, with_lessons: bool) -> String {
    let mut parts = vec![
        format!("You are given a piece of code written in {language}."),
        "Your task is to rewrite it in the same language to improve its performance (i.e., execution time).".into(),
    ];
    if parallel_hint {
        parts.push(OPENMP_SENTENCE.into());
    }
    parts.push("Do not change the input/output behaviors of the code.".into());
    if with_lessons {
        parts.push("Some lessons regarding correctness and performance are provided to help you rewrite the code.".into());
    }
    parts.push(format!("Include the generated code between ```{language} and ```."));
    parts.join(" ")
}

fn generate_header(language: &str, with_lessons: bool) -> String {
    let mut parts = vec![
        format!("You are given a function signature in {language} together with a docstring that explains what the function does."),
        "Your task is to implement the function according to the docstring.".into(),
        "You should restate the function signature and docstring.".into(),
    ];
    if with_lessons {
        parts.push("Some lessons are provided to help you implement the function.".into());
    }
    parts.push(format!("Include the generated code between ```{language} and ```."));
    parts.push("For example, given the function signature and docstring".into());
    parts.join(" ")
}

fn generate_body(language: &str, with_lessons: bool, signature: &str) -> String {
    format!(
        "{}\n\n{EXAMPLE_SIGNATURE}\n\nYou should respond with\n\n```{language}\n{EXAMPLE_SIGNATURE}\n{EXAMPLE_BODY}\n```\n\n### Here is the function to implement:\n\n{signature}",
        generate_header(language, with_lessons),
    )
}

/// The first-round prompt, without lessons.
pub fn initial_prompt(ctx: &PromptContext, original: &str) -> String {
    match ctx.task {
        TaskKind::Optimize => format!(
            "{}\n\n// Code:\n\n{original}",
            optimize_header(&ctx.language, ctx.parallel_hint, false)
        ),
        TaskKind::Generate => generate_body(&ctx.language, false, original),
    }
}

/// One lesson item; `idx` is the 1-based position in the selection.
pub fn render_lesson_item<S: Real>(idx: usize, lesson: &Lesson<S>, ctx: &PromptContext) -> String {
    let content = lesson.content.trim();
    match (ctx.task, lesson.kind) {
        (TaskKind::Generate, _) | (_, LessonKind::TestFailure) => {
            format!("Lesson {idx} reasons why the code does not pass all test cases. {content}")
        }
        (_, LessonKind::Speedup) => {
            if lesson.score.to_f64().unwrap_or(0.0) >= ctx.significant_cutoff {
                format!("Lesson {idx} significantly improves the code performance. {content}")
            } else {
                format!(
                    "Lesson {idx} slightly improves the code performance. {content} However, despite the code \
                     performance improvement, the speedup is only marginal."
                )
            }
        }
        (_, LessonKind::Slowdown) => format!("Lesson {idx} degrades the code performance. {content}"),
        (_, LessonKind::Incorrect) => format!("Lesson {idx} compromises code equivalence. {content}"),
        (_, LessonKind::CompileError) => format!("Lesson {idx} produces non-compilable code. {content}"),
    }
}

/// The improvement prompt. With no lessons it is the initial prompt.
pub fn assemble_improve_prompt<S: Real>(original: &str, lessons: &[&Lesson<S>], ctx: &PromptContext) -> String {
    if lessons.is_empty() {
        return initial_prompt(ctx, original);
    }
    let items: Vec<String> = lessons
        .iter()
        .enumerate()
        .map(|(i, l)| render_lesson_item(i + 1, l, ctx))
        .collect();
    let items = items.join("\n\n");
    match ctx.task {
        TaskKind::Optimize => format!(
            "{}\n\n// Code:\n\n{original}\n\n{IMPROVE_LESSONS_INTRO}\n\n{items}\n\n{IMPROVE_LESSONS_OUTRO}",
            optimize_header(&ctx.language, ctx.parallel_hint, true)
        ),
        TaskKind::Generate => format!(
            "{}\n\n{GENERATE_LESSONS_INTRO}\n\n{items}",
            generate_body(&ctx.language, true, original)
        ),
    }
}

fn pair(original: &str, candidate: &str) -> String {
    format!("// Code A:\n\n{original}\n\n// Code B:\n\n{candidate}")
}

/// The lesson-solicitation prompt for a graded candidate, with its class.
/// Returns `None` for a generation candidate that passed every test.
pub fn solicitation_prompt(
    task: TaskKind,
    original: &str,
    candidate: &str,
    eval: &EvalResult,
) -> Option<(PromptClass, String)> {
    let note = eval.note.as_deref().map(|n| format!("\n\nExecution note: {n}")).unwrap_or_default();
    if task == TaskKind::Generate {
        if eval.status == EvalStatus::Passed {
            return None;
        }
        let (p, t) = (eval.tests_passed, eval.tests_total);
        let text = format!(
            "The following completed code is incorrect; i.e., it does not exactly reflect the description in the \
             docstring. The code passes only {p} test cases out of {t}, leaving {} failed. Explain why the code is \
             incorrect (that is, why it fails some test cases). Be brief in the explanations. Use only one or two \
             sentences.\n\n### Completed code:\n\n{candidate}{note}",
            t - p
        );
        return Some((PromptClass::SolicitC, text));
    }
    let code = pair(original, candidate);
    Some(match eval.status {
        EvalStatus::Faster | EvalStatus::Slower => {
            let (class, word) = if eval.status == EvalStatus::Faster {
                (PromptClass::SolicitA, "faster")
            } else {
                (PromptClass::SolicitB, "slower")
            };
            let speedup = eval.speedup_raw.unwrap_or(1.0);
            let text = format!(
                "The following are two functionally equivalent codes. They are compiled by using the same compiler \
                 and executed in the same environment. Code B runs {word} than Code A with a speedup {speedup:.2}x. \
                 Explain why Code B is {word}. Be brief in the explanations. Use only one or two sentences.\n\n{code}"
            );
            (class, text)
        }
        EvalStatus::Incorrect | EvalStatus::Timeout | EvalStatus::Crash | EvalStatus::Passed => {
            let text = format!(
                "The following two codes are not functionally equivalent; that is, given the same input, they produce \
                 different outputs. Explain the reasons that make Code B nonequivalent to Code A. Be brief in the \
                 explanations. Use only one or two sentences.\n\n{code}{note}"
            );
            (PromptClass::SolicitC, text)
        }
        EvalStatus::CompileError => {
            let output = eval.compiler_output.as_deref().unwrap_or("");
            let text = format!(
                "The following are two codes. Code B attempts to improve the performance of Code A, but it has \
                 syntactic errors. Explain why Code B cannot be compiled. You may get hints from the compiler output \
                 provided after Code B. Be brief in the explanations. Use only one or two sentences.\n\n{code}\n\n\
                 Compiler output:\n\n{output}"
            );
            (PromptClass::SolicitD, text)
        }
    })
}
