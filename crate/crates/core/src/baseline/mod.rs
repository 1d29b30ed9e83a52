//! MFCC features with an RBF support vector machine, the classical
//! acoustic room-fingerprinting pipeline used as a comparison point.

pub mod mfcc;
pub mod svm;

pub use mfcc::{mfcc, mfcc_frames, MfccConfig};
pub use svm::{svm_predict, svm_train, Kernel, SvmConfig, SvmModel};
