//! Speaking-rate categories, soft labels, the rate predictor and its trainer.

mod categories;
mod gce;
mod model;
mod train;

pub use categories::*;
pub use gce::*;
pub use model::{
    attention_pool, first_argmax, forward, predict_rate, PredictorConfig, RatePredictorModel,
};
pub use train::{
    train_rate_predictor, train_rate_predictor_with, RateExample, RateTrainOptions, RateTrainer,
};
