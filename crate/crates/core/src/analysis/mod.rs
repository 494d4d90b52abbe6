//! ADC maps, image quality metrics and statistical tests.

mod adc;
mod metrics;
mod profile;
mod stats;

pub use adc::{adc_map, quantile_sorted, roi_stats, summarize, AdcMap, RoiStats, ADC_VALIDITY_FLOOR};
pub use metrics::{gaussian_window, metric_report, nmse, psnr, ssim, ssim_with, MetricReport, SsimParams};
pub use profile::{intensity_profile, profiles_csv, ProfileAxis};
pub use stats::{
    bland_altman, midranks, weighted_cohens_kappa, wilcoxon_signed_rank, BlandAltmanResult, KappaWeighting,
    WilcoxonResult, WILCOXON_EXACT_MAX_N,
};
