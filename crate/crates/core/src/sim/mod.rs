//! Synthetic phantoms and the DWI acquisition simulator.

pub mod acquisition;
pub mod fft;
pub mod phantom;

pub use acquisition::{
    apparent_snr, noiseless_image, scan_time_s, signal_model, simulate_acquisition, AcquisitionConfig, BValue,
    RawAcquisition, DEFAULT_NOISE_SIGMA,
};
pub use phantom::{generate_phantom, Ellipse, PhantomCase, PhantomSpec, Region, TissueClass, TissueLabel};
