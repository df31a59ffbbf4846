//! Shared fixtures: problem bundles and a seeded synthetic trace generator.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use codestop::bundle::{load_corpus, ProblemBundle};
use codestop::trace::{Terminal, TraceRecord};
use codestop_core::Language;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CAP: usize = 1000;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn corpus(language: Language) -> BTreeMap<String, ProblemBundle> {
    load_corpus(&fixtures().join(language.as_str())).expect("fixture corpus loads")
}

/// Test-failing but well-formed solution for each problem id.
pub fn wrong_solutions(language: Language) -> BTreeMap<String, String> {
    let text = std::fs::read_to_string(fixtures().join("variants.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v[language.as_str()]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), v["wrong"].as_str().unwrap().to_string()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Prose, fenced solution, babble to the cap.
    Clean,
    /// A fatally malformed attempt before the solution.
    Decoy,
    /// A well-formed but wrong attempt before the solution.
    Retry,
    /// Only the wrong attempt; nothing can pass.
    Failing,
    /// Solution followed by a short trailer and end-of-generation.
    Eos,
}

pub const SHAPES: [Shape; 5] = [Shape::Clean, Shape::Decoy, Shape::Retry, Shape::Failing, Shape::Eos];

/// Splits text into model-like fragments: words with their leading space,
/// runs of indentation, single punctuation, occasional merges and splits.
/// The fragments always concatenate back to `text`.
pub fn tokenize(text: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut pieces: Vec<String> = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c == '\n' {
            i += 1;
        } else if c == ' ' {
            while i < chars.len() && chars[i] == ' ' {
                i += 1;
            }
            // A single space usually sticks to the following word.
            if i - start == 1 && i < chars.len() && chars[i].is_alphanumeric() && rng.gen_bool(0.85) {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
            }
        } else if c.is_alphanumeric() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
        } else {
            i += 1;
        }
        let piece: String = chars[start..i].iter().collect();
        // Long identifiers are split into sub-word chunks.
        if piece.chars().count() > 6 && rng.gen_bool(0.5) {
            let cs: Vec<char> = piece.chars().collect();
            let cut = rng.gen_range(2..cs.len() - 1);
            pieces.push(cs[..cut].iter().collect());
            pieces.push(cs[cut..].iter().collect());
        } else {
            pieces.push(piece);
        }
    }
    // Punctuation sometimes merges with a following newline, as in "):\n".
    let mut out: Vec<String> = Vec::with_capacity(pieces.len());
    for p in pieces {
        let merge = p == "\n"
            && out.last().is_some_and(|l| !l.ends_with('\n') && l.chars().all(|c| c.is_ascii_punctuation()))
            && rng.gen_bool(0.5);
        if merge {
            out.last_mut().unwrap().push('\n');
        } else {
            out.push(p);
        }
    }
    out
}

const PROSE: &[&str] = &[
    "Here is a simple implementation that solves the problem.\n",
    "Sure! Below is a straightforward solution.\n",
    "Let me write the function step by step.\n",
];

const BABBLE: &[&str] = &[
    "This solution runs in linear time and uses constant extra space apart from the result.\n",
    "It handles the empty input as a special case, which keeps the main loop simple.\n",
    "Note that the function does not modify its arguments.\n",
    "\nExplanation:\n\n1. We iterate over the input once.\n2. We keep track of the current state.\n3. Finally we return the result.\n",
    "You can test it with a few examples to make sure it behaves as expected.\n",
    "If performance matters, consider profiling with realistic inputs first.\n",
    "\nEdge cases to consider: empty input, negative numbers, and very large values.\n",
    "I hope this helps! Let me know if you have any questions.\n",
];

fn babble_block(language: Language, rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.2) {
        return match language {
            Language::PythonLike => "\nExample usage:\n\n```python\nprint(\"example\")\n```\n".to_string(),
            Language::JavaLike => "\nExample usage:\n\n```java\nSystem.out.println(\"example\");\n```\n".to_string(),
        };
    }
    BABBLE[rng.gen_range(0..BABBLE.len())].to_string()
}

fn fence(language: Language) -> &'static str {
    match language {
        Language::PythonLike => "```python\n",
        Language::JavaLike => "```java\n",
    }
}

/// First signature line of a solution.
fn signature_line(language: Language, solution: &str) -> String {
    let line = solution
        .lines()
        .find(|l| match language {
            Language::PythonLike => l.starts_with("def "),
            Language::JavaLike => l.trim_end().ends_with('{'),
        })
        .expect("solution has a signature");
    line.to_string()
}

fn decoy(language: Language, solution: &str) -> String {
    let sig = signature_line(language, solution);
    match language {
        // Unclosed bracket: the interpreter rejects it whatever follows.
        Language::PythonLike => format!("{sig}\n    result = [\n"),
        // String assigned to an int: a type error.
        Language::JavaLike => format!("{sig}\n        int unused = \"x\";\n        throw new RuntimeException();\n    }}\n"),
    }
}

/// Java solutions: imports before the optional class wrapper.
fn java_block(solution: &str, wrap: bool) -> String {
    let (imports, body): (Vec<&str>, Vec<&str>) = solution.split_inclusive('\n').partition(|l| l.starts_with("import "));
    let body = body.concat();
    let body = body.trim_start_matches('\n');
    let mut s = imports.concat();
    if !s.is_empty() {
        s.push('\n');
    }
    if wrap {
        s.push_str("public class Solution {\n");
        s.push_str(body);
        s.push_str("}\n");
    } else {
        s.push_str(body);
    }
    s
}

fn code_block(language: Language, solution: &str, rng: &mut ChaCha8Rng) -> String {
    let code = match language {
        Language::PythonLike => solution.to_string(),
        Language::JavaLike => java_block(solution, rng.gen_bool(0.5)),
    };
    format!("{}{code}```\n", fence(language))
}

/// Builds one synthetic trace. Returns the record and the token count of
/// the part before the babble (the "solution length").
pub fn synth_trace(bundle: &ProblemBundle, wrong: &str, shape: Shape, seed: u64) -> (TraceRecord, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lang = bundle.language;
    let solution = bundle.canonical_solution.as_deref().expect("bundle has a canonical solution");
    let mut text = PROSE[rng.gen_range(0..PROSE.len())].to_string();
    text.push('\n');
    match shape {
        Shape::Clean | Shape::Eos => text.push_str(&code_block(lang, solution, &mut rng)),
        Shape::Decoy => {
            text.push_str(&decoy(lang, solution));
            text.push_str("Sorry, that was cut off. Here is the complete version:\n\n");
            text.push_str(&code_block(lang, solution, &mut rng));
        }
        Shape::Retry => {
            text.push_str(&code_block(lang, wrong, &mut rng));
            text.push_str("\nWait, that fails some of the cases. Here is a corrected version:\n\n");
            text.push_str(&code_block(lang, solution, &mut rng));
        }
        Shape::Failing => text.push_str(&code_block(lang, wrong, &mut rng)),
    }
    let mut tokens = tokenize(&text, &mut rng);
    let solution_len = tokens.len();
    let terminal = if shape == Shape::Eos {
        tokens.extend(tokenize(BABBLE[7], &mut rng));
        Terminal::Eos
    } else {
        while tokens.len() < CAP {
            let block = babble_block(lang, &mut rng);
            tokens.extend(tokenize(&block, &mut rng));
        }
        tokens.truncate(CAP);
        Terminal::Cap
    };
    let record = TraceRecord {
        problem_id: bundle.id.clone(),
        model_id: "synthetic-babbler".into(),
        language: lang,
        tokens,
        timestamps_ns: None,
        terminal,
        temperature: 0.1,
        top_p: 0.95,
    };
    (record, solution_len)
}

/// Every problem in every shape except `Failing`, plus `Failing` for every
/// fourth problem.
pub fn synth_corpus(language: Language) -> Vec<(TraceRecord, Shape)> {
    let corpus = corpus(language);
    let wrong = wrong_solutions(language);
    let mut out = Vec::new();
    for (i, (id, bundle)) in corpus.iter().enumerate() {
        for (k, &shape) in SHAPES.iter().enumerate() {
            if shape == Shape::Failing && i % 4 != 0 {
                continue;
            }
            if shape == Shape::Eos && i % 2 != 0 {
                continue;
            }
            let seed = (i as u64) << 8 | k as u64 | if language == Language::JavaLike { 1 << 32 } else { 0 };
            let (record, _) = synth_trace(bundle, &wrong[id], shape, seed);
            out.push((record, shape));
        }
    }
    out
}

pub fn python_available() -> bool {
    std::process::Command::new("python3")
        .arg("-c")
        .arg("pass")
        .status()
        .is_ok_and(|s| s.success())
}

pub fn javac_available() -> bool {
    std::process::Command::new("javac").arg("-version").output().is_ok_and(|o| o.status.success())
}
