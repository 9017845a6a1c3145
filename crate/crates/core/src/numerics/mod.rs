//! Dense tensor math with hand-written backward passes.

mod attention;
mod gradcheck;
mod ops;
mod optim;
mod store;
mod tensor;

pub use attention::{attention, attention_backward, AttentionCache, AttentionGrads, AttentionMask};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_FD_STEP};
pub use ops::{
    add, bias_grad, cross_entropy, gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward,
    linear_backward_input, linear_nobias, linear_weight_grad, softmax, softmax_backward, tanh, tanh_backward,
    LayerNormCache, LinearGrads, DEFAULT_LN_EPS,
};
pub use optim::adam_step;
pub use store::{AdamState, GradBuffer, ParameterStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
