//! Dialogue outline generation by self-play between a simulated user and a
//! rule-based system, template rendering, crowd paraphrase post-processing,
//! corpus expansion and diversity metrics.

pub mod crowd;
pub mod dialogue;
pub mod expansion;
pub mod fixtures;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod selfplay;
pub mod system_agent;
pub mod task_spec;
pub mod template;
pub mod user_sim;
