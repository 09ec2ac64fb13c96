//! State spines: the append-only event log with replay (P3) and the versioned
//! compare-and-swap row store with version-carrying timers (P5).

mod log;
mod store;

pub use log::{
    classify_replay, consume, detect_divergence, replay, replay_states, ConsumeReport, Consumer,
    DivergenceReport, EventLog, EventRecord, FieldDiff, FoldContext, LogError, Projection,
    ReplayClass, SeedSchedule, Subscription, Watermark,
};
pub use store::{
    CasError, SharedStateStore, SnapshotPolicy, StateRow, StateStore, TimerFire, TimerHandle,
    TransitionCause, TransitionRecord, WorkflowState,
};
