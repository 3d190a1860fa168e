//! Measurement instruments: the Monte-Carlo remainder and dominance scan,
//! Hutchinson Hessian traces, spectra of learned 1-D functions and the
//! discrete Parseval check, masked-weight layer statistics, classification
//! margins and input-noise sensitivity. None of them modifies a network.

mod hessian;
mod layers;
mod margin;
mod remainder;
mod spectrum;

pub use hessian::{
    default_step, fd_hessian_trace, hessian_trace, hessian_trace_with_step, hutchinson,
    TraceEstimate,
};
pub use layers::{
    layer_stats, layer_stats_oriented, spearman, striation, LayerStat, MaskOrientation,
};
pub use margin::{
    empirical_flip_distance, exact_flip_distance, margin_bounds, sensitivity_sweep, MarginPoint,
    MarginReport, SensitivityRow,
};
pub use remainder::{
    dominance_fraction, dominance_scan, estimate_remainder, DominanceConfig, DominanceRow,
    RemainderEstimate,
};
pub use spectrum::{
    amplitude_spectrum, function_spectrum, high_frequency_energy, parseval_check,
    periodic_derivative, sample_network, spectrum, Grid, ParsevalReport, SpectrumSeries, Tones,
};
