//! Declarative scaffolding.
//!
//! A [`Scaffold`] is the unit shipped across the trust boundary: a data
//! contract, a fixed statistical test, and the rendered harness source that
//! wires an untrusted `implementation` module into that methodology. The
//! harness, not the implementation, loads data and runs the test:
//!
//! * the exploration routine loads only the exploration file and hands the
//!   loaded rows to `implementation.optimize` / `implementation.get_baseline`;
//! * the validation routine loads only the validation file and calls the
//!   verified paired t-test with `reps`/`folds` baked in.
//!
//! [`audit_scaffold`] re-derives those properties from the harness text so a
//! tampered or hand-edited harness is caught before dispatch.

use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use crate::protocol::ProtocolError;

/// Names the implementation module must export.
pub const IMPLEMENTATION_ENTRY_NAMES: [&str; 3] = ["optimize", "get_baseline", "evaluate_model"];

pub const VERIFIED_TEST_ROUTINE: &str = "execute_paired_ttest";
pub const VERIFIED_TEST_MODULE: &str = "verified_stats";
pub const IMPLEMENTATION_MODULE: &str = "implementation";

const PYTHON_TEMPLATE: &str = include_str!("../templates/python_harness.py.tmpl");

const EXPLORATION_ROUTINE: &str = "run_exploration";
const VALIDATION_ROUTINE: &str = "run_validation";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataContract {
    pub exploration_path: PathBuf,
    pub validation_path: PathBuf,
}

impl DataContract {
    pub fn new(exploration: impl Into<PathBuf>, validation: impl Into<PathBuf>) -> Self {
        Self {
            exploration_path: exploration.into(),
            validation_path: validation.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    PairedTTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatisticalTestSpec {
    pub kind: TestKind,
    pub reps: u32,
    pub folds: u32,
}

impl StatisticalTestSpec {
    pub fn paired_t_test(reps: u32, folds: u32) -> Result<Self, ProtocolError> {
        let spec = Self {
            kind: TestKind::PairedTTest,
            reps,
            folds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.reps < 1 {
            return Err(ProtocolError::invalid_config("reps must be at least 1"));
        }
        if self.folds < 2 {
            return Err(ProtocolError::invalid_config("folds must be at least 2"));
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> u64 {
        u64::from(self.reps) * u64::from(self.folds)
    }
}

/// Target language of the generated harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HarnessDialect {
    #[default]
    Python,
}

impl HarnessDialect {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Python => "py",
        }
    }

    pub fn harness_file_name(self) -> String {
        format!("harness.{}", self.extension())
    }

    pub fn implementation_file_name(self) -> String {
        format!("{IMPLEMENTATION_MODULE}.{}", self.extension())
    }

    fn template(self) -> &'static str {
        match self {
            Self::Python => PYTHON_TEMPLATE,
        }
    }
}

impl FromStr for HarnessDialect {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "python" | "py" => Ok(Self::Python),
            other => Err(ProtocolError::invalid_config(format!(
                "unknown harness dialect {other:?}"
            ))),
        }
    }
}

impl fmt::Display for HarnessDialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Python => f.write_str("python"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scaffold {
    contract: DataContract,
    test_spec: StatisticalTestSpec,
    idea_label: String,
    dialect: HarnessDialect,
    harness_source: String,
}

impl Scaffold {
    /// Pairs an existing harness text (e.g. read back from disk) with the
    /// contract it claims to implement. Nothing is checked here; run
    /// [`audit_scaffold`] before trusting it.
    pub fn from_parts(
        contract: DataContract,
        test_spec: StatisticalTestSpec,
        idea_label: impl Into<String>,
        dialect: HarnessDialect,
        harness_source: impl Into<String>,
    ) -> Self {
        Self {
            contract,
            test_spec,
            idea_label: idea_label.into(),
            dialect,
            harness_source: harness_source.into(),
        }
    }

    pub fn contract(&self) -> &DataContract {
        &self.contract
    }

    pub fn test_spec(&self) -> &StatisticalTestSpec {
        &self.test_spec
    }

    pub fn idea_label(&self) -> &str {
        &self.idea_label
    }

    pub fn dialect(&self) -> HarnessDialect {
        self.dialect
    }

    pub fn harness_source(&self) -> &str {
        &self.harness_source
    }

    pub fn implementation_entry_names(&self) -> [&'static str; 3] {
        IMPLEMENTATION_ENTRY_NAMES
    }
}

/// Lexical normalization: drops `.`, folds `..` into its parent and
/// collapses separators. Leading `..` on relative paths is kept.
pub fn normalize_path(path: &Path) -> PathBuf {
    let mut out: Vec<Component<'_>> = Vec::new();
    for comp in path.components() {
        match comp {
            Component::CurDir => {}
            Component::ParentDir => match out.last() {
                Some(Component::Normal(_)) => {
                    out.pop();
                }
                Some(Component::RootDir) | Some(Component::Prefix(_)) => {}
                _ => out.push(comp),
            },
            c => out.push(c),
        }
    }
    if out.is_empty() {
        PathBuf::from(".")
    } else {
        out.iter().collect()
    }
}

fn path_text(path: &Path, role: &str) -> Result<String, ProtocolError> {
    let text = path.to_str().ok_or_else(|| {
        ProtocolError::invalid_config(format!("{role} path is not valid UTF-8"))
    })?;
    if text.trim().is_empty() {
        return Err(ProtocolError::invalid_config(format!(
            "{role} path is empty"
        )));
    }
    Ok(text.to_owned())
}

/// Checks that the exploration and validation files are distinct.
///
/// Paths are compared after lexical normalization and, when both exist,
/// after resolving symlinks.
pub fn validate_contract(contract: &DataContract) -> Result<(), ProtocolError> {
    path_text(&contract.exploration_path, "exploration")?;
    path_text(&contract.validation_path, "validation")?;

    let explore = normalize_path(&contract.exploration_path);
    let validate = normalize_path(&contract.validation_path);
    let collision = explore == validate
        || matches!(
            (
                fs::canonicalize(&contract.exploration_path),
                fs::canonicalize(&contract.validation_path),
            ),
            (Ok(a), Ok(b)) if a == b
        );
    if collision {
        return Err(ProtocolError::invalid_config(format!(
            "exploration path {:?} and validation path {:?} name the same file",
            contract.exploration_path, contract.validation_path
        )));
    }
    Ok(())
}

/// Renders a string as a literal of the target dialect. JSON string syntax
/// is a subset of Python's, so quotes, backslashes and control characters
/// all come out escaped.
fn string_literal(text: &str) -> String {
    serde_json::to_string(text).expect("strings always serialize")
}

/// Single pass substitution of `{name}` placeholders. Substituted values
/// are never rescanned, and braces that do not form a known placeholder are
/// copied through.
fn render(template: &str, values: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = values.iter().find_map(|(name, value)| {
            let key_len = name.len() + 2;
            (tail.len() >= key_len
                && tail.as_bytes()[key_len - 1] == b'}'
                && &tail[1..key_len - 1] == *name)
                .then_some((key_len, value))
        });
        match hit {
            Some((len, value)) => {
                out.push_str(value);
                rest = &tail[len..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn generate_scaffold(
    contract: &DataContract,
    spec: &StatisticalTestSpec,
    idea_label: &str,
    dialect: HarnessDialect,
) -> Result<Scaffold, ProtocolError> {
    validate_contract(contract)?;
    spec.validate()?;
    let values = [
        (
            "exploration_path",
            string_literal(&path_text(&contract.exploration_path, "exploration")?),
        ),
        (
            "validation_path",
            string_literal(&path_text(&contract.validation_path, "validation")?),
        ),
        ("reps", spec.reps.to_string()),
        ("folds", spec.folds.to_string()),
        ("idea_label", string_literal(idea_label)),
    ];
    let harness_source = render(dialect.template(), &values);
    Ok(Scaffold {
        contract: contract.clone(),
        test_spec: *spec,
        idea_label: idea_label.to_owned(),
        dialect,
        harness_source,
    })
}

// ---------------------------------------------------------------------------
// Audit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingRoutine(&'static str),
    MissingImport(String),
    ValidationPathInExploration,
    ValidationPathOutsideValidation,
    ExplorationPathMissing,
    ValidationPathMissing,
    ExplorationPathInValidation,
    VerifiedTestCallCount(usize),
    VerifiedTestCallOutsideValidation,
    VerifiedTestSubstituted,
    TestParametersMismatch { expected: String },
    EntryNameNotReferenced(&'static str),
    ResultSentinelMissing,
    PhaseFlagsMissing,
    LabelMismatch,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingRoutine(name) => write!(f, "routine `{name}` not found"),
            Self::MissingImport(line) => write!(f, "required import `{line}` not found"),
            Self::ValidationPathInExploration => {
                write!(f, "validation data path referenced in exploration routine")
            }
            Self::ValidationPathOutsideValidation => {
                write!(f, "validation data path referenced outside the validation routine")
            }
            Self::ExplorationPathMissing => {
                write!(f, "exploration routine does not load the exploration data path")
            }
            Self::ValidationPathMissing => {
                write!(f, "validation routine does not load the validation data path")
            }
            Self::ExplorationPathInValidation => {
                write!(f, "exploration data path referenced in validation routine")
            }
            Self::VerifiedTestCallCount(n) => {
                write!(f, "expected exactly one verified test call, found {n}")
            }
            Self::VerifiedTestCallOutsideValidation => {
                write!(f, "verified test called outside the validation routine")
            }
            Self::VerifiedTestSubstituted => {
                write!(f, "verified test routine is not the one from `{VERIFIED_TEST_MODULE}`")
            }
            Self::TestParametersMismatch { expected } => {
                write!(f, "verified test call does not pass `{expected}`")
            }
            Self::EntryNameNotReferenced(name) => {
                write!(f, "implementation entry `{name}` not referenced")
            }
            Self::ResultSentinelMissing => write!(f, "result sentinel not emitted"),
            Self::PhaseFlagsMissing => write!(f, "phase flags explore|validate|full missing"),
            Self::LabelMismatch => write!(f, "idea label line missing or altered"),
        }
    }
}

/// Body of a top-level `def name(` up to the next top-level statement.
fn routine_body<'a>(source: &'a str, name: &str) -> Option<&'a str> {
    let header = format!("def {name}(");
    let start = source
        .match_indices(&header)
        .find(|(i, _)| *i == 0 || source.as_bytes()[i - 1] == b'\n')?
        .0;
    let body = &source[start..];
    let mut end = body.len();
    let mut offset = 0;
    for line in body.split_inclusive('\n') {
        if offset > 0 && !line.trim().is_empty() && !line.starts_with([' ', '\t']) {
            end = offset;
            break;
        }
        offset += line.len();
    }
    Some(&body[..end])
}

fn is_call_at(source: &str, idx: usize) -> bool {
    source[idx + VERIFIED_TEST_ROUTINE.len()..]
        .trim_start()
        .starts_with('(')
}

/// Re-checks the structural guarantees on the harness text.
pub fn audit_scaffold(scaffold: &Scaffold) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();

    // The label is free text and may legitimately contain a path or a call
    // expression, so its line is checked verbatim and then blanked out.
    let label_line = format!("IDEA_LABEL = {}", string_literal(scaffold.idea_label()));
    let label_lines = scaffold
        .harness_source()
        .lines()
        .filter(|l| l.starts_with("IDEA_LABEL"))
        .count();
    if label_lines != 1 || !scaffold.harness_source().lines().any(|l| l == label_line) {
        violations.push(Violation::LabelMismatch);
    }
    let stripped: String = scaffold
        .harness_source()
        .split_inclusive('\n')
        .map(|l| if l.trim_end() == label_line { "\n" } else { l })
        .collect();
    let source = stripped.as_str();

    let explore_lit = scaffold
        .contract
        .exploration_path
        .to_str()
        .map(string_literal)
        .unwrap_or_default();
    let validate_lit = scaffold
        .contract
        .validation_path
        .to_str()
        .map(string_literal)
        .unwrap_or_default();

    for import in [
        format!("import {IMPLEMENTATION_MODULE}"),
        format!("from {VERIFIED_TEST_MODULE} import {VERIFIED_TEST_ROUTINE}"),
    ] {
        if !source.lines().any(|l| l.trim_end() == import) {
            violations.push(Violation::MissingImport(import));
        }
    }

    let exploration = routine_body(source, EXPLORATION_ROUTINE);
    let validation = routine_body(source, VALIDATION_ROUTINE);
    if exploration.is_none() {
        violations.push(Violation::MissingRoutine(EXPLORATION_ROUTINE));
    }
    if validation.is_none() {
        violations.push(Violation::MissingRoutine(VALIDATION_ROUTINE));
    }

    if let Some(body) = exploration {
        if body.contains(&validate_lit) || body.contains("VALIDATION") {
            violations.push(Violation::ValidationPathInExploration);
        }
        if !body.contains(&format!("load_table({explore_lit})")) {
            violations.push(Violation::ExplorationPathMissing);
        }
        if !body.contains(&format!("{IMPLEMENTATION_MODULE}.optimize(data)")) {
            violations.push(Violation::EntryNameNotReferenced("optimize"));
        }
        if !body.contains(&format!("{IMPLEMENTATION_MODULE}.get_baseline(data)")) {
            violations.push(Violation::EntryNameNotReferenced("get_baseline"));
        }
    }

    if let Some(body) = validation {
        if !body.contains(&format!("load_table({validate_lit})")) {
            violations.push(Violation::ValidationPathMissing);
        }
        if body.contains(&explore_lit) {
            violations.push(Violation::ExplorationPathInValidation);
        }
        if !body.contains(&format!("{IMPLEMENTATION_MODULE}.evaluate_model")) {
            violations.push(Violation::EntryNameNotReferenced("evaluate_model"));
        }
        let spec = scaffold.test_spec();
        let params = format!("reps={}, folds={}", spec.reps, spec.folds);
        if !body
            .match_indices(VERIFIED_TEST_ROUTINE)
            .filter(|(i, _)| is_call_at(body, *i))
            .any(|(i, _)| body[i..].lines().next().is_some_and(|l| l.contains(&params)))
        {
            violations.push(Violation::TestParametersMismatch { expected: params });
        }
    }

    let validate_hits = source.matches(&validate_lit).count();
    let validate_inside = validation.map_or(0, |b| b.matches(&validate_lit).count());
    if validate_hits > validate_inside {
        violations.push(Violation::ValidationPathOutsideValidation);
    }

    let calls: Vec<usize> = source
        .match_indices(VERIFIED_TEST_ROUTINE)
        .map(|(i, _)| i)
        .filter(|&i| is_call_at(source, i))
        .collect();
    if calls.len() != 1 {
        violations.push(Violation::VerifiedTestCallCount(calls.len()));
    }
    let substituted = calls.iter().any(|&i| {
        let prev = source[..i].chars().next_back();
        matches!(prev, Some(c) if c == '.' || c == '_' || c.is_alphanumeric())
    });
    if substituted {
        violations.push(Violation::VerifiedTestSubstituted);
    }
    if let Some(body) = validation {
        let inside = body
            .match_indices(VERIFIED_TEST_ROUTINE)
            .filter(|(i, _)| is_call_at(body, *i))
            .count();
        if inside < calls.len() {
            violations.push(Violation::VerifiedTestCallOutsideValidation);
        }
    }

    if !source.contains("RESULT_SENTINEL = \"RIGOR_RESULT\"")
        || !source.contains("print(RESULT_SENTINEL")
    {
        violations.push(Violation::ResultSentinelMissing);
    }
    if !source.contains(r#"choices=["explore", "validate", "full"]"#) {
        violations.push(Violation::PhaseFlagsMissing);
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
