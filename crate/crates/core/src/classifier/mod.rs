//! Feed-forward classifiers over feature vectors.

mod ensemble;
mod mlp;

pub use ensemble::{ncl_loss_and_gradients, Ensemble, EnsembleSpec, Standardizer};
pub use mlp::{accuracy, cross_entropy, mlp_train, Dataset, Dense, EpochStats, Gradients, Mlp, TrainSpec};

/// Writes `epoch,loss,accuracy` rows.
pub fn write_curve_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss,accuracy\n");
    for s in curve {
        out.push_str(&format!("{},{},{}\n", s.epoch, s.loss, s.accuracy));
    }
    out
}
