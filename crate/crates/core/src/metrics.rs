//! Metrics rows shared by training and evaluation, with a stable CSV
//! schema. Header and formatting live here so every writer agrees.

use crate::config::Method;

pub const SCHEMA_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

/// Run-constant identification repeated on every row so files stand
/// alone.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub run_id: String,
    pub config_hash: String,
    pub method: Method,
}

impl RunMeta {
    pub fn new(run_id: impl Into<String>, shared_hash: u64, method: Method) -> RunMeta {
        RunMeta { run_id: run_id.into(), config_hash: format!("{shared_hash:016x}"), method }
    }
}

/// One training episode or one evaluation aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub phase: Phase,
    pub env_step: u64,
    pub episode: u64,
    /// Abstract-state id of the end goal; -1 aggregates over goals.
    pub end_goal: i64,
    pub success: f64,
    pub progress: f64,
    pub steps: u64,
    pub epsilon: f64,
    pub mean_loss: f64,
    /// Q-values observed outside the consistent range during the period.
    pub q_flags: u64,
}

pub fn csv_header() -> String {
    format!(
        "schema,run_id,config_hash,method,reward_range,phase,env_step,episode,end_goal,success,progress,steps,epsilon,mean_loss,q_flags\n"
    )
}

pub fn csv_line(meta: &RunMeta, row: &MetricsRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        SCHEMA_VERSION,
        meta.run_id,
        meta.config_hash,
        meta.method.as_str(),
        meta.method.reward_range(),
        row.phase.as_str(),
        row.env_step,
        row.episode,
        row.end_goal,
        row.success,
        row.progress,
        row.steps,
        row.epsilon,
        row.mean_loss,
        row.q_flags
    )
}

/// One environment step, for optional newline-delimited JSON traces.
#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub env_step: u64,
    pub episode: u64,
    pub action: crate::sim::Action,
    pub reward: i32,
    /// Abstract state after the step; None is the off-grammar sentinel.
    pub abstract_id: Option<crate::graph::StateId>,
}

/// Receives rows (and optionally traces) as a run produces them.
pub trait RunSink {
    fn row(&mut self, meta: &RunMeta, row: &MetricsRow);
    fn trace(&mut self, _ev: &TraceEvent) {}
}

impl RunSink for Vec<MetricsRow> {
    fn row(&mut self, _meta: &RunMeta, row: &MetricsRow) {
        self.push(row.clone());
    }
}

/// Discards everything; for warm-up runs in tests.
pub struct NullSink;

impl RunSink for NullSink {
    fn row(&mut self, _meta: &RunMeta, _row: &MetricsRow) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_line_is_stable() {
        let meta = RunMeta::new("run-a", 0xdead_beef, Method::Ours);
        let row = MetricsRow {
            phase: Phase::Train,
            env_step: 10,
            episode: 2,
            end_goal: 5,
            success: 1.0,
            progress: 0.5,
            steps: 4,
            epsilon: 0.25,
            mean_loss: 0.125,
            q_flags: 0,
        };
        let line = csv_line(&meta, &row);
        assert_eq!(
            line,
            "v1,run-a,00000000deadbeef,ours,-1..0,train,10,2,5,1,0.5,4,0.25,0.125,0\n"
        );
        assert_eq!(csv_header().split(',').count(), line.split(',').count());
    }
}
