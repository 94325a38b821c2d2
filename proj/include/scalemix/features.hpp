#pragma once

// Signal-to-feature pipeline: rectification, low-pass smoothing and windowed
// mean absolute value.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "scalemix/data.hpp"
#include "scalemix/types.hpp"

namespace scalemix {

/// T x channels samples from one trial at sampling rate fs.
struct SignalBlock {
  RowMatrix samples;
  double fs = 0.0;
  /// Optional per-sample class ids (empty when unlabelled).
  std::vector<int> labels;
  int trial = 0;
  int participant = 0;

  Eigen::Index length() const noexcept { return samples.rows(); }
  int channels() const noexcept { return static_cast<int>(samples.cols()); }
  void validate() const;
};

/// Biquad (or first-order, with b[2] = a[2] = 0) transfer function
/// (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct FilterCoeffs {
  std::array<double, 3> b{};
  std::array<double, 3> a{1.0, 0.0, 0.0};

  double dc_gain() const { return (b[0] + b[1] + b[2]) / (a[0] + a[1] + a[2]); }
  /// |H(e^{j 2 pi f / fs})|.
  double magnitude(double f, double fs) const;
  /// Largest pole modulus.
  double max_pole_radius() const;
};

/// Second-order Butterworth low-pass from the analog prototype via the
/// bilinear transform with the cut-off prewarped. Requires 0 < fc < fs/2.
FilterCoeffs butterworth2_lowpass_coeffs(double fc, double fs);

/// Single-pole low-pass with the same bilinear construction.
FilterCoeffs first_order_lowpass_coeffs(double fc, double fs);

/// Direct-form-II-transposed filtering of one channel. The state starts at
/// the steady-state response to the first sample.
std::vector<double> filter_channel(const FilterCoeffs& coeffs, const std::vector<double>& x);

SignalBlock rectify(const SignalBlock& s);

/// Causal by default; `zero_phase` runs the filter forward then backward.
SignalBlock butterworth2_lowpass(const SignalBlock& s, double fc, bool zero_phase = false);

SignalBlock first_order_lowpass(const SignalBlock& s, double fc, bool zero_phase = false);

/// One feature row per window: per-channel mean of |samples|. Window label is
/// the majority sample label (ties to the smaller id); 1 when unlabelled.
/// Row count is floor((T - window) / step) + 1.
FeatureDataset mav_window(const SignalBlock& s, double window_ms, double step_ms);

/// rectify then butterworth2_lowpass; every sample becomes one feature row.
FeatureDataset pipeline_rect_smooth(const SignalBlock& s, double fc, bool zero_phase = false);

/// Raw-signal CSV: header `t,ch1..chD,label,trial` with an optional trailing
/// `participant` column. Returns one block per (participant, trial) in order
/// of first appearance; fs is estimated from the t column unless given.
std::vector<SignalBlock> read_signal_csv(std::istream& in, std::optional<double> fs = std::nullopt,
                                         const std::string& source_name = "<stream>");
std::vector<SignalBlock> load_signal_csv(const std::filesystem::path& path,
                                         std::optional<double> fs = std::nullopt);

/// Concatenate per-block feature datasets (same dimension).
FeatureDataset concat(const std::vector<FeatureDataset>& parts);

}  // namespace scalemix
