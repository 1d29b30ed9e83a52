use super::arch::FeatureKind;
use super::Tensor;
use crate::audio::{self, BandSelection, EchoFrame};
use crate::scalar::Scalar;

const PSD_LOG_FLOOR: f64 = 1e-20;

impl FeatureKind {
    /// Network input for one echo window: the spectrogram as a 32x5x1 image,
    /// or the narrowband PSD in dB as a 1x147x1 row.
    pub fn extract<T: Scalar>(self, frame: &EchoFrame<T>) -> Tensor<T> {
        let band = BandSelection::default();
        match self {
            FeatureKind::Spectrogram => {
                let spec = audio::spectrogram(frame, &band);
                let (t, f) = spec.shape();
                Tensor::new(vec![t, f, 1], spec.into_values()).expect("spectrogram shape")
            }
            FeatureKind::Psd => {
                let psd = audio::psd_narrowband(frame, &band);
                let floor = T::of(PSD_LOG_FLOOR);
                let ten = T::of(10.0);
                let db: Vec<T> = psd.values.iter().map(|&v| ten * (v + floor).log10()).collect();
                Tensor::new(vec![1, db.len(), 1], db).expect("psd shape")
            }
        }
    }
}
