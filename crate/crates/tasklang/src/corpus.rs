//! Natural-language corpus: 18 sentence patterns over (mover, direction,
//! destination) slots, split into 9 training and 9 testing patterns, plus
//! human-error simulation and scripted collection of (s, s', NL) triplets.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EnvConfig, PatternSplit};
use crate::env::{
    self, all_instructions, instruction_index, is_satisfied, observe, scripted_mover_action,
    BallEnv, Direction, Instruction, COLORS,
};
use crate::error::{Error, Result};
use crate::rng;

pub const PATTERN_COUNT: usize = 18;
pub const TRAINING_PATTERN_COUNT: usize = 9;

/// Pattern ids for a split. Ids 0..9 are the training patterns, 9..18 the
/// held-out testing patterns.
pub fn pattern_ids(split: PatternSplit) -> Vec<usize> {
    match split {
        PatternSplit::Training => (0..TRAINING_PATTERN_COUNT).collect(),
        PatternSplit::Testing => (TRAINING_PATTERN_COUNT..PATTERN_COUNT).collect(),
        PatternSplit::All => (0..PATTERN_COUNT).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhraseForm {
    /// "to the right of" style, used by most declarative/imperative patterns.
    Full,
    /// "right of" style, used by the question and keep patterns 3 and 9.
    Short,
    /// Single word, used by pattern 4 and by oversimplified errors.
    Bare,
}

fn direction_phrase(dir: Direction, form: PhraseForm) -> &'static str {
    match (dir, form) {
        (Direction::Front, PhraseForm::Full) => "in front of",
        (Direction::Front, PhraseForm::Short) => "in front of",
        (Direction::Front, PhraseForm::Bare) => "front",
        (Direction::Behind, _) => "behind",
        (Direction::Left, PhraseForm::Full) => "to the left of",
        (Direction::Left, PhraseForm::Short) => "left of",
        (Direction::Left, PhraseForm::Bare) => "left",
        (Direction::Right, PhraseForm::Full) => "to the right of",
        (Direction::Right, PhraseForm::Short) => "right of",
        (Direction::Right, PhraseForm::Bare) => "right",
    }
}

/// Renders an instruction through one of the 18 sentence patterns.
pub fn render_nl(instr: &Instruction, pattern_id: usize) -> Result<String> {
    let m = COLORS[instr.mover];
    let d = COLORS[instr.destination];
    let full = direction_phrase(instr.direction, PhraseForm::Full);
    let short = direction_phrase(instr.direction, PhraseForm::Short);
    let bare = direction_phrase(instr.direction, PhraseForm::Bare);
    let s = match pattern_id {
        0 => format!("Push the {m} ball {full} the {d} ball."),
        1 => format!("Can you push the {m} ball {full} the {d} ball?"),
        2 => format!("Can you help me push the {m} ball {full} the {d} ball?"),
        3 => format!("Is the {m} ball {short} the {d} ball?"),
        4 => format!("Is there any {m} ball {bare} the {d} ball?"),
        5 => format!("The {m} ball moves {full} the {d} ball."),
        6 => format!("The {m} ball is being pushed {full} the {d} ball."),
        7 => format!("The {m} ball is pushed {full} the {d} ball."),
        8 => format!("The {m} ball was moved {full} the {d} ball."),
        9 => format!("Keep the {m} ball {short} the {d} ball."),
        10 => format!("Move the {m} ball {full} the {d} ball."),
        11 => format!("Can you move the {m} ball {full} the {d} ball?"),
        12 => format!("Can you keep the {m} ball {full} the {d} ball?"),
        13 => format!("Can you help me move the {m} ball {full} the {d} ball?"),
        14 => format!("Can you help me keep the {m} ball {full} the {d} ball?"),
        15 => format!("The {m} ball is being moved {full} the {d} ball."),
        16 => format!("The {m} ball is moved {full} the {d} ball."),
        17 => format!("The {m} ball was pushed {full} the {d} ball."),
        _ => {
            return Err(Error::Corpus(format!(
                "pattern id {pattern_id} out of range 0..{PATTERN_COUNT}"
            )))
        }
    };
    Ok(s)
}

/// Simulated human typing errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    /// Remove one randomly chosen article "the".
    DropThe,
    /// "in front of" becomes "on front of".
    WrongPreposition,
    /// Non-front relation phrase becomes the malformed "in <word> of".
    WrongPhrase,
    /// Collapse the sentence to "move <m> ball <dir> <d> ball".
    Oversimplify,
}

pub const ALL_ERROR_KINDS: [ErrorKind; 4] = [
    ErrorKind::DropThe,
    ErrorKind::WrongPreposition,
    ErrorKind::WrongPhrase,
    ErrorKind::Oversimplify,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbOutcome {
    pub text: String,
    pub requested: ErrorKind,
    /// Kind actually applied; differs from `requested` when that kind had no
    /// site in the sentence and the oversimplify fallback fired.
    pub applied: ErrorKind,
    pub fell_back: bool,
}

fn oversimplify(instr: &Instruction) -> String {
    format!(
        "move {} ball {} {} ball",
        COLORS[instr.mover],
        direction_phrase(instr.direction, PhraseForm::Bare),
        COLORS[instr.destination]
    )
}

/// Applies one error kind to a rendered sentence. Guaranteed to change the
/// string; kinds with no applicable site fall back to oversimplification and
/// report it.
pub fn perturb(
    nl: &str,
    instr: &Instruction,
    kind: ErrorKind,
    seed: u64,
) -> Result<PerturbOutcome> {
    if nl.trim().is_empty() {
        return Err(Error::Corpus("cannot perturb an empty sentence".into()));
    }
    let fallback = |requested: ErrorKind| PerturbOutcome {
        text: oversimplify(instr),
        requested,
        applied: ErrorKind::Oversimplify,
        fell_back: true,
    };
    let done = |text: String, kind: ErrorKind| PerturbOutcome {
        text,
        requested: kind,
        applied: kind,
        fell_back: false,
    };
    let outcome = match kind {
        ErrorKind::Oversimplify => done(oversimplify(instr), kind),
        ErrorKind::WrongPreposition => match nl.find("in front of") {
            Some(_) => done(nl.replacen("in front of", "on front of", 1), kind),
            None => fallback(kind),
        },
        ErrorKind::WrongPhrase => {
            // Longest phrases first so "to the right of" is not split by a
            // match on its suffix "right of".
            let sites = [
                ("to the left of", "in left of"),
                ("to the right of", "in right of"),
                ("left of", "in left of"),
                ("right of", "in right of"),
                ("behind", "in behind of"),
            ];
            match sites.iter().find(|(s, _)| nl.contains(s)) {
                Some((site, repl)) => done(nl.replacen(site, repl, 1), kind),
                None => fallback(kind),
            }
        }
        ErrorKind::DropThe => {
            let words: Vec<&str> = nl.split_whitespace().collect();
            let the_positions: Vec<usize> = words
                .iter()
                .enumerate()
                .filter(|(_, w)| w.eq_ignore_ascii_case("the"))
                .map(|(i, _)| i)
                .collect();
            if the_positions.is_empty() {
                fallback(kind)
            } else {
                let mut r = rng::rng_from(seed, "drop-the", 0);
                let drop = the_positions[r.gen_range(0..the_positions.len())];
                let kept: Vec<&str> = words
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != drop)
                    .map(|(_, w)| *w)
                    .collect();
                done(kept.join(" "), kind)
            }
        }
    };
    debug_assert_ne!(outcome.text, nl);
    Ok(outcome)
}

/// Deterministic error rendering for a given (instruction, pattern, kind),
/// independent of any run configuration. These canonical variants are what
/// the instruction registry and error-added evaluations use.
pub fn canonical_error_variant(
    instr: &Instruction,
    pattern_id: usize,
    kind: ErrorKind,
) -> Result<PerturbOutcome> {
    let plain = render_nl(instr, pattern_id)?;
    let kind_idx = ALL_ERROR_KINDS.iter().position(|k| *k == kind).unwrap() as u64;
    let idx = (instruction_index(instr) * PATTERN_COUNT + pattern_id) as u64;
    perturb(&plain, instr, kind, rng::derive(0xC0FFEE, "error-variant", idx * 4 + kind_idx))
}

/// Closed index of every sentence the system ever produces: all plain renders
/// of all instructions across all 18 patterns, plus the canonical error
/// variants of the 9 training patterns. Anything else is out of registry.
pub struct Registry {
    pub strings: Vec<String>,
    index: HashMap<String, usize>,
}

impl Registry {
    pub fn build() -> Registry {
        let mut strings = Vec::new();
        let mut index = HashMap::new();
        let push = |s: String, strings: &mut Vec<String>, index: &mut HashMap<String, usize>| {
            if !index.contains_key(&s) {
                index.insert(s.clone(), strings.len());
                strings.push(s);
            }
        };
        for instr in all_instructions() {
            for p in 0..PATTERN_COUNT {
                push(render_nl(&instr, p).unwrap(), &mut strings, &mut index);
            }
            for p in pattern_ids(PatternSplit::Training) {
                for kind in ALL_ERROR_KINDS {
                    let v = canonical_error_variant(&instr, p, kind).unwrap();
                    push(v.text, &mut strings, &mut index);
                }
            }
        }
        Registry { strings, index }
    }

    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    /// Registry slot for a sentence, or None when out of registry.
    pub fn lookup(&self, nl: &str) -> Option<usize> {
        self.index.get(nl).copied()
    }
}

/// One state-transition triplet with its describing sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub s: Vec<f64>,
    pub s_prime: Vec<f64>,
    pub nl: String,
    pub instruction: Instruction,
    pub pattern_id: usize,
}

/// Rolls scripted-mover episodes and records (initial state, final state,
/// sentence) triplets. Episodes where the scripted mover fails, or where the
/// instruction is already satisfied at reset, are discarded and resampled so
/// every emitted triplet is a genuine demonstration.
pub fn collect_task_dataset(
    env_cfg: &EnvConfig,
    n: usize,
    master_seed: u64,
    split: PatternSplit,
) -> Result<Vec<Triplet>> {
    let instructions = all_instructions();
    let patterns = pattern_ids(split);
    let mut out = Vec::with_capacity(n);
    let mut choice_rng = rng::rng_from(master_seed, "dataset-choice", 0);
    let mut attempt: u64 = 0;
    const MAX_ATTEMPTS_PER_SAMPLE: u64 = 64;
    for i in 0..n {
        let mut tries = 0;
        loop {
            tries += 1;
            if tries > MAX_ATTEMPTS_PER_SAMPLE {
                return Err(Error::Corpus(format!(
                    "sample {i}: scripted mover kept failing; check env config"
                )));
            }
            attempt += 1;
            let instr = instructions[choice_rng.gen_range(0..instructions.len())];
            let pattern_id = patterns[choice_rng.gen_range(0..patterns.len())];
            let env_seed = rng::derive(master_seed, "dataset-env", attempt);
            let mut env = BallEnv::new(env_cfg.clone(), env_seed, instr)?;
            if is_satisfied(&env.state.positions, &instr, env_cfg) {
                continue;
            }
            let s = env.obs();
            let mut succeeded = false;
            for _ in 0..env_cfg.max_steps {
                let a = scripted_mover_action(&env.state.positions, &env.instruction, env_cfg);
                let r = env.step(a)?;
                if r.done {
                    succeeded = r.info.success;
                    break;
                }
            }
            if !succeeded {
                continue;
            }
            let s_prime = observe(&env.state.positions);
            debug_assert_ne!(s, s_prime);
            let nl = render_nl(&instr, pattern_id)?;
            out.push(Triplet { s, s_prime, nl, instruction: instr, pattern_id });
            break;
        }
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, triplets: &[Triplet]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for t in triplets {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Triplet>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Triplet = serde_json::from_str(&line).map_err(|e| {
            Error::Corpus(format!("{}:{}: bad triplet: {e}", path.display(), lineno + 1))
        })?;
        if t.s.len() != env::OBS_DIM || t.s_prime.len() != env::OBS_DIM {
            return Err(Error::Corpus(format!(
                "{}:{}: observation width must be {}",
                path.display(),
                lineno + 1,
                env::OBS_DIM
            )));
        }
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn instr(m: usize, d: Direction, t: usize) -> Instruction {
        Instruction::new(m, d, t).unwrap()
    }

    #[test]
    fn golden_renders_cover_every_pattern() {
        let i = instr(0, Direction::Right, 2);
        let expected = [
            "Push the red ball to the right of the green ball.",
            "Can you push the red ball to the right of the green ball?",
            "Can you help me push the red ball to the right of the green ball?",
            "Is the red ball right of the green ball?",
            "Is there any red ball right the green ball?",
            "The red ball moves to the right of the green ball.",
            "The red ball is being pushed to the right of the green ball.",
            "The red ball is pushed to the right of the green ball.",
            "The red ball was moved to the right of the green ball.",
            "Keep the red ball right of the green ball.",
            "Move the red ball to the right of the green ball.",
            "Can you move the red ball to the right of the green ball?",
            "Can you keep the red ball to the right of the green ball?",
            "Can you help me move the red ball to the right of the green ball?",
            "Can you help me keep the red ball to the right of the green ball?",
            "The red ball is being moved to the right of the green ball.",
            "The red ball is moved to the right of the green ball.",
            "The red ball was pushed to the right of the green ball.",
        ];
        for (p, want) in expected.iter().enumerate() {
            assert_eq!(render_nl(&i, p).unwrap(), *want, "pattern {p}");
        }
        assert!(render_nl(&i, 18).is_err());
    }

    #[test]
    fn front_and_behind_use_their_phrase_forms() {
        let i = instr(1, Direction::Front, 4);
        assert_eq!(
            render_nl(&i, 0).unwrap(),
            "Push the blue ball in front of the purple ball."
        );
        assert_eq!(render_nl(&i, 3).unwrap(), "Is the blue ball in front of the purple ball?");
        assert_eq!(render_nl(&i, 4).unwrap(), "Is there any blue ball front the purple ball?");
        let b = instr(1, Direction::Behind, 0);
        assert_eq!(render_nl(&b, 9).unwrap(), "Keep the blue ball behind the red ball.");
        assert_eq!(render_nl(&b, 4).unwrap(), "Is there any blue ball behind the red ball?");
    }

    #[test]
    fn all_1440_renders_are_distinct() {
        let mut seen = HashSet::new();
        for i in all_instructions() {
            for p in 0..PATTERN_COUNT {
                assert!(seen.insert(render_nl(&i, p).unwrap()));
            }
        }
        assert_eq!(seen.len(), 80 * PATTERN_COUNT);
    }

    #[test]
    fn splits_partition_the_patterns() {
        let train = pattern_ids(PatternSplit::Training);
        let test = pattern_ids(PatternSplit::Testing);
        assert_eq!(train.len(), 9);
        assert_eq!(test.len(), 9);
        let union: HashSet<usize> = train.iter().chain(test.iter()).copied().collect();
        assert_eq!(union.len(), PATTERN_COUNT);
        assert_eq!(pattern_ids(PatternSplit::All).len(), PATTERN_COUNT);
    }

    #[test]
    fn oversimplify_matches_fixed_shape() {
        let i = instr(0, Direction::Right, 2);
        let nl = render_nl(&i, 0).unwrap();
        let out = perturb(&nl, &i, ErrorKind::Oversimplify, 1).unwrap();
        assert_eq!(out.text, "move red ball right green ball");
        assert!(!out.fell_back);
    }

    #[test]
    fn wrong_preposition_hits_front_and_falls_back_otherwise() {
        let f = instr(0, Direction::Front, 2);
        let nl = render_nl(&f, 0).unwrap();
        let out = perturb(&nl, &f, ErrorKind::WrongPreposition, 1).unwrap();
        assert_eq!(out.text, "Push the red ball on front of the green ball.");
        assert!(!out.fell_back);

        let r = instr(0, Direction::Right, 2);
        let nl = render_nl(&r, 0).unwrap();
        let out = perturb(&nl, &r, ErrorKind::WrongPreposition, 1).unwrap();
        assert!(out.fell_back);
        assert_eq!(out.applied, ErrorKind::Oversimplify);
        assert_eq!(out.text, "move red ball right green ball");
    }

    #[test]
    fn wrong_phrase_rewrites_non_front_relations() {
        let b = instr(2, Direction::Behind, 1);
        let nl = render_nl(&b, 0).unwrap();
        let out = perturb(&nl, &b, ErrorKind::WrongPhrase, 1).unwrap();
        assert_eq!(out.text, "Push the green ball in behind of the blue ball.");

        let l = instr(2, Direction::Left, 1);
        let nl = render_nl(&l, 10).unwrap();
        let out = perturb(&nl, &l, ErrorKind::WrongPhrase, 1).unwrap();
        assert_eq!(out.text, "Move the green ball in left of the blue ball.");

        let s = instr(2, Direction::Right, 1);
        let nl = render_nl(&s, 9).unwrap();
        let out = perturb(&nl, &s, ErrorKind::WrongPhrase, 1).unwrap();
        assert_eq!(out.text, "Keep the green ball in right of the blue ball.");

        let f = instr(2, Direction::Front, 1);
        let nl = render_nl(&f, 0).unwrap();
        let out = perturb(&nl, &f, ErrorKind::WrongPhrase, 1).unwrap();
        assert!(out.fell_back);
    }

    #[test]
    fn drop_the_removes_exactly_one_article() {
        let i = instr(0, Direction::Right, 2);
        let nl = render_nl(&i, 0).unwrap();
        let the_count = |s: &str| s.split_whitespace().filter(|w| *w == "the").count();
        let before = the_count(&nl);
        let mut seen = HashSet::new();
        for seed in 0..50 {
            let out = perturb(&nl, &i, ErrorKind::DropThe, seed).unwrap();
            assert!(!out.fell_back);
            assert_ne!(out.text, nl);
            assert_eq!(the_count(&out.text), before - 1);
            seen.insert(out.text);
        }
        // Pattern 0 has three "the" sites; different seeds reach each.
        assert_eq!(seen.len(), 3);
        // Deterministic per seed.
        assert_eq!(
            perturb(&nl, &i, ErrorKind::DropThe, 9).unwrap(),
            perturb(&nl, &i, ErrorKind::DropThe, 9).unwrap()
        );
    }

    #[test]
    fn perturbation_always_changes_the_sentence() {
        for i in all_instructions().into_iter().take(20) {
            for p in 0..PATTERN_COUNT {
                let nl = render_nl(&i, p).unwrap();
                for kind in ALL_ERROR_KINDS {
                    let out = perturb(&nl, &i, kind, 5).unwrap();
                    assert_ne!(out.text, nl, "kind {kind:?} pattern {p}");
                }
            }
        }
    }

    #[test]
    fn registry_size_and_membership() {
        let reg = Registry::build();
        // 80 instructions x (18 plain + 9 training patterns x 4 error kinds),
        // minus collisions between error variants that land on the same
        // oversimplified string for one instruction.
        assert!(!reg.is_empty());
        let i = instr(0, Direction::Right, 2);
        assert!(reg.lookup(&render_nl(&i, 17).unwrap()).is_some());
        assert!(reg.lookup("Paint the red ball.").is_none());
        // Every canonical error variant is in the registry.
        let v = canonical_error_variant(&i, 0, ErrorKind::DropThe).unwrap();
        assert!(reg.lookup(&v.text).is_some());
        // Oversimplified form per instruction is registered exactly once.
        assert!(reg.lookup("move red ball right green ball").is_some());
    }

    #[test]
    fn dataset_collection_is_deterministic_and_replayable() {
        let cfg = EnvConfig::default();
        let a = collect_task_dataset(&cfg, 24, 9, PatternSplit::Training).unwrap();
        let b = collect_task_dataset(&cfg, 24, 9, PatternSplit::Training).unwrap();
        assert_eq!(a, b);
        for t in &a {
            assert_ne!(t.s, t.s_prime);
            assert!(t.pattern_id < TRAINING_PATTERN_COUNT);
            // Replay oracle: the final state satisfies the instruction.
            let mut pos = [[0.0; 2]; env::N_BALLS];
            for (i, p) in pos.iter_mut().enumerate() {
                *p = [t.s_prime[2 * i], t.s_prime[2 * i + 1]];
            }
            assert!(is_satisfied(&pos, &t.instruction, &cfg));
            // The sentence matches the stored instruction and pattern.
            assert_eq!(t.nl, render_nl(&t.instruction, t.pattern_id).unwrap());
        }
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let cfg = EnvConfig::default();
        let data = collect_task_dataset(&cfg, 8, 3, PatternSplit::All).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triplets.jsonl");
        write_jsonl(&path, &data).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(data, back);
        // Byte-identical on rewrite.
        let bytes1 = std::fs::read(&path).unwrap();
        write_jsonl(&path, &back).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }
}
