mod common;

use std::sync::Mutex;

use beliefsim::agents::{
    Agent, AgentContext, AgentDecision, AgentError, DeGrootAgent, HomophilyAgent, InitialPolicy,
    RandomFollowAgent, ReplayAgent, StubbornAgent,
};
use beliefsim::engine::{
    run_cohort, run_cohort_detailed, run_round, synthesize_stimuli, EngineError, RunOptions,
    StimulusPlan, SynthConfig,
};
use beliefsim::trace::{
    load_cohort, save_cohort, trace_to_line, Cohort, PeerObservation, Stage, TraceKey, TraceStatus,
};
use common::{r, synthetic_cohort};

fn lines(c: &Cohort) -> Vec<String> {
    c.iter().map(trace_to_line).collect()
}

fn options(seed: u64, parallelism: usize) -> RunOptions {
    RunOptions {
        label: "sim".into(),
        seed,
        parallelism,
        rounds: 3,
    }
}

#[test]
fn parallelism_does_not_change_results() {
    let plan = synthesize_stimuli(&SynthConfig::new(10, 5, 8, 3), 3).unwrap();
    let agents: Vec<Box<dyn Agent>> = vec![
        Box::new(DeGrootAgent::new(0.5, InitialPolicy::Uniform)),
        Box::new(HomophilyAgent {
            base: StubbornAgent {
                initial: InitialPolicy::Uniform,
            },
        }),
        Box::new(RandomFollowAgent {
            base: DeGrootAgent::new(0.3, InitialPolicy::Uniform),
        }),
    ];
    for agent in &agents {
        let one = run_cohort(agent, &plan, &options(9, 1)).unwrap();
        let eight = run_cohort(agent, &plan, &options(9, 8)).unwrap();
        assert_eq!(one.len(), 30);
        assert_eq!(lines(&one), lines(&eight), "{}", agent.name());
    }
}

#[test]
fn seed_changes_scripted_randomness() {
    let plan = synthesize_stimuli(&SynthConfig::new(10, 5, 8, 3), 3).unwrap();
    let agent = DeGrootAgent::new(0.5, InitialPolicy::Uniform);
    let a = run_cohort(&agent, &plan, &options(1, 1)).unwrap();
    let b = run_cohort(&agent, &plan, &options(2, 1)).unwrap();
    assert_ne!(lines(&a), lines(&b));
}

/// Records every context it sees and checks memory scoping as it goes.
#[derive(Default)]
struct ProbeAgent {
    violations: Mutex<Vec<String>>,
}

impl ProbeAgent {
    fn check(&self, ctx: &AgentContext, expected: usize) {
        let mem = &ctx.round_memory;
        let ok = mem.len() == expected
            && mem
                .iter()
                .enumerate()
                .all(|(i, s)| s.stage.number() as usize == i + 1)
            && mem
                .iter()
                .all(|s| s.reason.ends_with(&format!("{}", ctx.key)));
        if !ok {
            self.violations.lock().unwrap().push(format!(
                "{} at stage {}: {mem:?}",
                ctx.key,
                expected + 1
            ));
        }
    }
}

impl Agent for ProbeAgent {
    fn name(&self) -> String {
        "probe".into()
    }
    fn stage1(&self, ctx: &AgentContext) -> Result<AgentDecision, AgentError> {
        self.check(ctx, 0);
        Ok(AgentDecision::rating(r(1), format!("first {}", ctx.key)))
    }
    fn stage2(
        &self,
        ctx: &AgentContext,
        _: &[PeerObservation],
    ) -> Result<AgentDecision, AgentError> {
        self.check(ctx, 1);
        Ok(AgentDecision::rating(r(2), format!("second {}", ctx.key)))
    }
    fn stage3(
        &self,
        ctx: &AgentContext,
        c: &[PeerObservation],
        k: usize,
    ) -> Result<AgentDecision, AgentError> {
        self.check(ctx, 2);
        Ok(AgentDecision::follow(
            c.iter().take(k).map(|p| p.peer_id.clone()).collect(),
            "x",
        ))
    }
}

#[test]
fn round_memory_is_scoped_to_one_round() {
    let plan = synthesize_stimuli(&SynthConfig::new(6, 3, 5, 2), 4).unwrap();
    let probe = ProbeAgent::default();
    let cohort = run_cohort(&probe, &plan, &options(0, 4)).unwrap();
    assert_eq!(cohort.len(), 18);
    assert!(
        probe.violations.lock().unwrap().is_empty(),
        "{:?}",
        probe.violations.lock().unwrap()
    );
}

#[test]
fn replay_reproduces_the_source_cohort() {
    for seed in 0..5 {
        let source = synthetic_cohort("human", 12, seed);
        let plan = StimulusPlan::from_cohort(&source);
        let replayed = run_cohort(
            &ReplayAgent::new(source.clone()),
            &plan,
            &options(seed + 100, 3),
        )
        .unwrap();
        assert_eq!(replayed.traces, source.traces);
        assert_eq!(lines(&replayed), lines(&source));
    }
}

#[test]
fn saved_cohorts_load_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let source = synthetic_cohort("human", 8, 42);
    let path = dir.path().join("human.jsonl");
    save_cohort(&source, &path).unwrap();
    let loaded = load_cohort(&path).unwrap();
    assert_eq!(loaded.label, "human");
    assert_eq!(loaded.traces, source.traces);
}

#[test]
fn plan_gaps_are_listed_before_running() {
    let plan = synthesize_stimuli(&SynthConfig::new(3, 3, 5, 2), 1).unwrap();
    let mut entries = plan.entries.clone();
    entries.remove(&TraceKey::new("p002", 2));
    let holed = StimulusPlan { entries };
    let agent = StubbornAgent {
        initial: InitialPolicy::Uniform,
    };
    match run_cohort(&agent, &holed, &options(0, 1)) {
        Err(EngineError::PlanGaps(gaps)) => assert_eq!(gaps, vec![TraceKey::new("p002", 2)]),
        other => panic!("expected plan gaps, got {other:?}"),
    }
}

#[test]
fn degroot_full_weight_moves_to_peer_mean() {
    let plan = synthesize_stimuli(&SynthConfig::new(1, 2, 3, 1), 0).unwrap();
    let mut stimulus = plan.entries.values().next().unwrap().clone();
    stimulus.peers = vec![
        PeerObservation::new("n1", r(4), "sure"),
        PeerObservation::new("n2", r(4), "yes"),
    ];
    let agent = DeGrootAgent::new(1.0, InitialPolicy::Fixed { rating: r(0) });
    let out = run_round(&agent, &stimulus, 0);
    assert_eq!(out.trace.initial_rating(), Some(r(0)));
    assert_eq!(out.trace.updated_rating(), Some(r(4)));
}

/// Fails stage 2 for one participant-round and otherwise behaves like a
/// stubborn agent.
struct FlakyAgent {
    inner: StubbornAgent,
    target: TraceKey,
}

impl Agent for FlakyAgent {
    fn name(&self) -> String {
        "flaky".into()
    }
    fn stage1(&self, ctx: &AgentContext) -> Result<AgentDecision, AgentError> {
        self.inner.stage1(ctx)
    }
    fn stage2(
        &self,
        ctx: &AgentContext,
        peers: &[PeerObservation],
    ) -> Result<AgentDecision, AgentError> {
        if ctx.key == self.target {
            return Err(AgentError::Parse("no_rating: scripted".into()));
        }
        self.inner.stage2(ctx, peers)
    }
    fn stage3(
        &self,
        ctx: &AgentContext,
        c: &[PeerObservation],
        k: usize,
    ) -> Result<AgentDecision, AgentError> {
        self.inner.stage3(ctx, c, k)
    }
}

#[test]
fn a_failing_round_leaves_the_others_untouched() {
    let plan = synthesize_stimuli(&SynthConfig::new(5, 3, 5, 2), 8).unwrap();
    let inner = StubbornAgent {
        initial: InitialPolicy::Uniform,
    };
    let clean = run_cohort(&inner, &plan, &options(4, 2)).unwrap();
    let target = TraceKey::new("p003", 2);
    let flaky = FlakyAgent {
        inner,
        target: target.clone(),
    };
    let (cohort, summary) = run_cohort_detailed(&flaky, &plan, &options(4, 2)).unwrap();
    assert_eq!(summary.failed_stage2, 1);
    assert_eq!(summary.n_complete, 14);
    for t in cohort.iter() {
        if t.key() == target {
            assert_eq!(t.status, TraceStatus::FailedStage2);
            assert_eq!(t.stage1, clean.get(&target).unwrap().stage1);
            assert!(t.stage2.is_none() && t.follows.is_none());
            assert!(!t.supports(Stage::Two));
        } else {
            assert_eq!(Some(t), clean.get(&t.key()));
        }
    }
}

#[test]
fn point_mass_peer_ratings_reach_every_panel() {
    let mut cfg = SynthConfig::new(20, 5, 8, 3);
    cfg.peer_ratings = InitialPolicy::Fixed { rating: r(4) };
    let plan = synthesize_stimuli(&cfg, 2).unwrap();
    assert_eq!(plan.len(), 60);
    for s in plan.entries.values() {
        assert_eq!(s.peers.len(), 5);
        assert_eq!(s.candidates.len(), 8);
        assert_eq!(s.k, 3);
        assert!(s.peers.iter().all(|p| p.rating == r(4)));
    }
    assert_eq!(plan, synthesize_stimuli(&cfg, 2).unwrap());
}
