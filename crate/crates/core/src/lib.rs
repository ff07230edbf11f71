//! MambaEye: a causal sequential image classifier. Glimpses are fixed-size
//! patches read along a scan trajectory, each paired with a sinusoidal
//! embedding of the move that led to it, and fed to a selective state-space
//! backbone that can run either over the whole sequence or one step at a time.

pub mod eval;
pub mod losses;
pub mod model;
pub mod movemb;
pub mod numgrad;
pub mod pipeline;
pub mod params;
pub mod patchio;
pub mod scalar;
pub mod seed;
pub mod selfcheck;
pub mod ssm;
pub mod trainer;
pub mod verify;

pub use scalar::Scalar;

pub type Tensor32 = numgrad::Tensor<f32>;
pub type Tensor64 = numgrad::Tensor<f64>;
pub type Tape32 = numgrad::Tape<f32>;
pub type Tape64 = numgrad::Tape<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type ModelState32 = model::ModelState<f32>;
pub type ModelState64 = model::ModelState<f64>;
pub type AdamW32 = trainer::AdamW<f32>;
pub type AdamW64 = trainer::AdamW<f64>;
