//! Crisp and interval feedforward, LSTM and Neural-ODE networks.

pub mod forward;
pub mod graph;
pub mod params;
pub mod spec;

pub use forward::{
    crisp_output, ff_forward, ilstm_output, inn_forward, input_lags, inode_output, interval_output, lstm_step, node_step, regressor,
    simulate, simulate_batch, simulate_gaussian, simulate_trace, DropoutSampler, GaussianRollout, IntervalSeries,
    LstmState, Rollout, StepContext, Trace, VARIANCE_FLOOR,
};
pub use params::{init_crisp, init_uncertainty, materialize, CrispParams, IntervalParams, UncertaintyParams};
pub use spec::{Activation, Lags, ModelKind, ModelSpec, TensorInfo, TensorRole, Trick};
