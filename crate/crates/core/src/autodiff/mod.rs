//! Reverse-mode differentiation over dense matrices and the small networks
//! built on it.

mod io;
mod nn;
mod tape;
mod tensor;

pub use io::{load_network, network_from_str, network_to_string, save_network};
pub use nn::{
    build_conv, build_cross_sectional_conv, build_dense, build_fcn, build_recurrent, sgd_step, Activation, ConvSpec,
    Forward, Layer, NetGradients, NetworkGraph, Param, Topology,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
