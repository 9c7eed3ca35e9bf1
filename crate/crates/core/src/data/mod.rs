//! Recordings, file formats, preprocessing and the synthetic data generator.

mod dtw;
mod embodiment;
mod io;
mod normalize;
mod resample;
pub mod skeleton;
mod split;
mod synth;
mod types;
mod window;

pub use dtw::{dtw_align, dtw_distance, dtw_path, median_length_index, DtwAlignment};
pub use embodiment::Embodiment;
pub use io::{load_dataset, read_dataset, save_dataset, trial_from_line, trial_to_line, write_dataset};
pub use normalize::{fit_normalizer, Normalizer};
pub use resample::resample;
pub use skeleton::JointSet;
pub use split::{split_trials, test_count};
pub use synth::{
    gesture_shape, plan_all, plan_trial, render_trial, rest_frame, robot_rest_frame, synth_generate_hhi, synth_generate_hri,
    ActionSynth, AgentPlan, GestureShape, SynthConfig, TrialPlan,
};
pub use types::{Action, AgentKind, AgentStream, InteractionTrial, PairType, Role, WindowSpec, CANONICAL_RATE_HZ, ROBOT_DIMS};
pub use window::{extract_windows, flat_window, normalized_windows, window_count};
