//! Parser fuzzing and the labelled format fixture.
#![allow(dead_code)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use activezoom::geometry::Frame;
use activezoom::heuristic::r_format;
use activezoom::response::{parse_and_validate, parse_response};
use activezoom::TaskKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

const TOKENS: &[&str] = &[
    "<think>",
    "</think>",
    "<answer>",
    "</answer>",
    "<think",
    "answer>",
    "[",
    "]",
    "{",
    "}",
    ",",
    ":",
    "\"",
    "\"bbox_2d\"",
    "\"label\"",
    "1",
    "-3",
    "2.5",
    "1e308",
    "1e400",
    "NaN",
    "null",
    "true",
    "```",
    "```json",
    "\n",
    " ",
    "é",
    "中",
    "\\",
    "\\u0000",
    "[1,2,3,4]",
    "[1,2,3]",
    "{\"bbox_2d\":[0,0,9,9]}",
];

const SEED_TEXT: &str =
    "<think>two clusters near the table</think><answer>[{\"bbox_2d\":[10,20,110,220],\"label\":\"coin-dense region\"}]</answer>";

fn random_input<R: Rng>(rng: &mut R) -> String {
    match rng.random_range(0..3) {
        0 => {
            let bytes: Vec<u8> = (0..rng.random_range(0..200)).map(|_| rng.random()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        }
        1 => (0..rng.random_range(0..40))
            .map(|_| TOKENS[rng.random_range(0..TOKENS.len())])
            .collect(),
        _ => {
            // Byte-level mutations of a valid response.
            let mut bytes = SEED_TEXT.as_bytes().to_vec();
            for _ in 0..rng.random_range(1..6) {
                let i = rng.random_range(0..=bytes.len());
                match rng.random_range(0..3) {
                    0 if i < bytes.len() => {
                        bytes.remove(i);
                    }
                    1 => bytes.insert(i, rng.random()),
                    _ if i < bytes.len() => bytes[i] = rng.random(),
                    _ => {}
                }
            }
            String::from_utf8_lossy(&bytes).into_owned()
        }
    }
}

/// Feeds `count` random inputs through parsing, validation and the format
/// reward. Returns the number of inputs that parsed.
pub fn fuzz_parser(count: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = Frame::new(1024, 1024).unwrap();
    let mut parsed = 0;
    for i in 0..count {
        let text = random_input(&mut rng);
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            let ok = parse_response(&text).is_ok();
            let r = r_format(&parse_and_validate(&text, frame, TaskKind::Detection));
            (ok, r)
        }));
        match outcome {
            Ok((ok, r)) => {
                parsed += ok as usize;
                if r != 0.0 && r != 1.0 {
                    return Err(format!("input {i}: format reward {r}"));
                }
            }
            Err(_) => return Err(format!("input {i} panicked: {text:?}")),
        }
    }
    Ok(parsed)
}

#[derive(Debug, Deserialize)]
pub struct FormatCase {
    pub name: String,
    pub text: String,
    pub task: TaskKind,
    pub width: u32,
    pub height: u32,
    pub valid: bool,
}

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("core")
        .join("tests")
        .join("fixtures")
        .join("format_cases.json")
}

pub fn load_format_cases() -> Vec<FormatCase> {
    let text = std::fs::read_to_string(fixture_path()).expect("fixture readable");
    serde_json::from_str(&text).expect("fixture parses")
}

/// Names of fixture cases where the format reward disagrees with the label.
pub fn fixture_disagreements(cases: &[FormatCase]) -> Vec<String> {
    cases
        .iter()
        .filter(|c| {
            let frame = Frame::new(c.width, c.height).unwrap();
            let r = r_format(&parse_and_validate(&c.text, frame, c.task));
            (r == 1.0) != c.valid
        })
        .map(|c| c.name.clone())
        .collect()
}
