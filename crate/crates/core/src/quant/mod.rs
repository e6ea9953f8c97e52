//! Post-training quantization: calibration, INT8/FP16 numerics, integer
//! convolution kernels, mixed-precision execution, and the boundary sweep.

mod calib;
mod exec;
mod kernel;
mod params;
mod sweep;

pub use calib::{calibrate, CalibMethod, Calibration, SiteStats, HIST_BINS};
pub use exec::{
    build_quantized_model, layer_has_norm, site_qparams, Precision, PrecisionAssignment, QVal,
    QuantizedModel,
};
pub use kernel::{check_accumulator, qconv2d, qconv_transpose2d};
pub use params::{
    dequantize, f16_bits_to_f32, f32_to_f16_bits, fp16_round, quantize_tensor,
    quantize_weights_per_channel, quantize_weights_per_tensor, QTensor, QuantParams, F16_MAX,
    SCALE_FLOOR,
};
pub use sweep::{select_mixed_precision, sensitivity_sweep, BudgetRule, SweepAxis, SweepPoint};
