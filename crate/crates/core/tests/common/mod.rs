#![allow(dead_code)]

pub mod oracle;

use beliefsim::agents::{
    AgentContext, DeGrootAgent, InitialPolicy, RandomFollowAgent, StageSummary,
};
use beliefsim::engine::{run_cohort, synthesize_stimuli, RunOptions, SynthConfig};
use beliefsim::trace::{
    Cohort, LikertRating, PeerObservation, Persona, RoundTrace, Stage, StageResponse, TraceKey,
    TraceStatus,
};

pub fn r(v: i64) -> LikertRating {
    LikertRating::new(v).unwrap()
}

pub fn persona() -> Persona {
    Persona {
        agent_id: "p001".into(),
        display_name: "Participant 1".into(),
        demographics: "Age 35-44, female, bachelor's degree, politically moderate".into(),
        big5: None,
    }
}

pub const STATEMENT: &str = "Fuel taxes fund most road maintenance.";

pub fn peers() -> Vec<PeerObservation> {
    vec![
        PeerObservation::new("n1", r(1), "Roads are funded by general taxes."),
        PeerObservation::new("n2", r(2), "Not sure."),
        PeerObservation::new("n3", r(4), "Yes, that is what the gas tax is for."),
    ]
}

pub fn candidates() -> Vec<PeerObservation> {
    let mut c = peers();
    c.push(PeerObservation::new(
        "c04",
        r(0),
        "No idea where the money goes.",
    ));
    c
}

pub fn context(stages: usize) -> AgentContext {
    let mut ctx = AgentContext::new(TraceKey::new("p001", 1), 0, persona(), STATEMENT);
    if stages >= 1 {
        ctx.round_memory.push(StageSummary {
            stage: Stage::One,
            rating: r(3),
            reason: "I have read that fuel taxes pay for roads.".into(),
        });
    }
    if stages >= 2 {
        ctx.round_memory.push(StageSummary {
            stage: Stage::Two,
            rating: r(2),
            reason: "Others doubt it, so I am less sure.".into(),
        });
    }
    ctx
}

pub fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// Stage-1 ratings drawn from a discretized Gaussian.
pub const HUMAN_MEAN: f64 = 2.2518;
pub const HUMAN_STD: f64 = 1.2490;

/// A synthetic "human" cohort: Gaussian initial ratings, DeGroot updates
/// with a seeded alpha, random follows.
pub fn synthetic_cohort(label: &str, participants: usize, seed: u64) -> Cohort {
    let plan = synthesize_stimuli(&SynthConfig::new(participants, 5, 8, 3), seed).unwrap();
    let alpha = 0.2 + 0.6 * ((seed % 7) as f64 / 6.0);
    let agent = RandomFollowAgent {
        base: DeGrootAgent::new(
            alpha,
            InitialPolicy::Gaussian {
                mean: HUMAN_MEAN,
                std: HUMAN_STD,
            },
        ),
    };
    let opts = RunOptions {
        label: label.into(),
        seed,
        parallelism: 2,
        rounds: 3,
    };
    run_cohort(&agent, &plan, &opts).unwrap()
}

/// Which stage a rendered prompt belongs to, judged by its template text.
pub fn prompt_stage(prompt: &str) -> u8 {
    if prompt.contains("follow_ids") {
        3
    } else if prompt.contains("neighbor ratings") {
        2
    } else {
        1
    }
}

/// Candidate ids listed in a stage-3 prompt, in order.
pub fn prompt_candidate_ids(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("id: "))
        .filter_map(|l| l.split(" | ").next())
        .map(str::to_owned)
        .collect()
}

/// The k requested by a stage-3 prompt.
pub fn prompt_k(prompt: &str) -> usize {
    let tail = prompt
        .split("choose exactly ")
        .nth(1)
        .expect("stage-3 prompt");
    tail.split_whitespace().next().unwrap().parse().unwrap()
}

/// A well-formed reply for any stage, derived only from the prompt text.
pub fn well_formed_reply(prompt: &str) -> String {
    match prompt_stage(prompt) {
        3 => {
            let ids: Vec<String> = prompt_candidate_ids(prompt)
                .into_iter()
                .take(prompt_k(prompt))
                .collect();
            serde_json::json!({"follow_ids": ids, "reason": "closest to my view"}).to_string()
        }
        stage => {
            let rating = (prompt.len() + stage as usize) % 5;
            format!("Rating: {rating}\nReason: scripted stage {stage} answer.")
        }
    }
}

/// A hand-built trace. Peers are `nI`, candidates `cI`; `follows` indexes
/// the candidate list. `r2 = None` leaves the trace failed at stage 2 and
/// an empty `follows` leaves it failed at stage 3.
pub fn trace(
    pid: &str,
    r1: i64,
    peers: &[i64],
    r2: Option<i64>,
    candidates: &[i64],
    follows: &[usize],
) -> RoundTrace {
    let obs = |prefix: &str, rs: &[i64]| -> Vec<PeerObservation> {
        rs.iter()
            .enumerate()
            .map(|(i, &v)| PeerObservation::new(format!("{prefix}{i}"), r(v), "because"))
            .collect()
    };
    let k = follows.len().max(1);
    let stage2 = r2.map(|v| StageResponse {
        rating: r(v),
        reason: "updated".into(),
    });
    let follows = (stage2.is_some() && !follows.is_empty())
        .then(|| follows.iter().map(|i| format!("c{i}")).collect());
    let status = match (&stage2, &follows) {
        (None, _) => TraceStatus::FailedStage2,
        (_, None) => TraceStatus::FailedStage3,
        _ => TraceStatus::Complete,
    };
    RoundTrace {
        participant_id: pid.into(),
        round: 1,
        topic: "roads".into(),
        statement: STATEMENT.into(),
        statement_is_true: Some(true),
        persona: Persona {
            agent_id: pid.into(),
            display_name: pid.into(),
            demographics: "adult".into(),
            big5: None,
        },
        stage1: Some(StageResponse {
            rating: r(r1),
            reason: "initial".into(),
        }),
        peers: obs("n", peers),
        stage2,
        candidates: obs("c", candidates),
        k,
        follows,
        status,
    }
}
