#include "scalemix/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <string>

#include "scalemix/csv.hpp"

namespace scalemix {

void SignalBlock::validate() const {
  if (!(fs > 0.0) || !std::isfinite(fs)) throw DomainError("signal: sampling rate must be positive");
  if (!samples.allFinite()) throw DataError("signal: non-finite sample");
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != samples.rows()) {
    throw DataError("signal: label count differs from sample count");
  }
}

double FilterCoeffs::magnitude(double f, double fs) const {
  const double w = 2.0 * std::numbers::pi * f / fs;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  const auto num = b[0] + b[1] * z1 + b[2] * z2;
  const auto den = a[0] + a[1] * z1 + a[2] * z2;
  return std::abs(num / den);
}

double FilterCoeffs::max_pole_radius() const {
  // Poles are the roots of a0 z^2 + a1 z + a2 (or a0 z + a1 when first order).
  if (a[2] == 0.0) return std::abs(a[1] / a[0]);
  const std::complex<double> disc = std::sqrt(std::complex<double>(a[1] * a[1] - 4.0 * a[0] * a[2]));
  const auto r1 = (-a[1] + disc) / (2.0 * a[0]);
  const auto r2 = (-a[1] - disc) / (2.0 * a[0]);
  return std::max(std::abs(r1), std::abs(r2));
}

namespace {

void check_cutoff(double fc, double fs) {
  if (!(fs > 0.0)) throw DomainError("filter: sampling rate must be positive");
  if (!(fc > 0.0 && fc < 0.5 * fs)) {
    throw DomainError("filter: cut-off " + std::to_string(fc) + " Hz outside (0, fs/2) for fs = " +
                      std::to_string(fs) + " Hz");
  }
}

SignalBlock apply_filter(const SignalBlock& s, const FilterCoeffs& coeffs, bool zero_phase) {
  s.validate();
  SignalBlock out = s;
  std::vector<double> channel(static_cast<std::size_t>(s.length()));
  for (int ch = 0; ch < s.channels(); ++ch) {
    for (Eigen::Index t = 0; t < s.length(); ++t) channel[static_cast<std::size_t>(t)] = s.samples(t, ch);
    auto y = filter_channel(coeffs, channel);
    if (zero_phase) {
      std::reverse(y.begin(), y.end());
      y = filter_channel(coeffs, y);
      std::reverse(y.begin(), y.end());
    }
    for (Eigen::Index t = 0; t < s.length(); ++t) out.samples(t, ch) = y[static_cast<std::size_t>(t)];
  }
  return out;
}

}  // namespace

FilterCoeffs butterworth2_lowpass_coeffs(double fc, double fs) {
  check_cutoff(fc, fs);
  const double k = std::tan(std::numbers::pi * fc / fs);
  const double k2 = k * k;
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k2);
  FilterCoeffs c;
  c.b = {k2 * norm, 2.0 * k2 * norm, k2 * norm};
  c.a = {1.0, 2.0 * (k2 - 1.0) * norm, (1.0 - std::numbers::sqrt2 * k + k2) * norm};
  return c;
}

FilterCoeffs first_order_lowpass_coeffs(double fc, double fs) {
  check_cutoff(fc, fs);
  const double k = std::tan(std::numbers::pi * fc / fs);
  FilterCoeffs c;
  c.b = {k / (1.0 + k), k / (1.0 + k), 0.0};
  c.a = {1.0, (k - 1.0) / (k + 1.0), 0.0};
  return c;
}

std::vector<double> filter_channel(const FilterCoeffs& coeffs, const std::vector<double>& x) {
  std::vector<double> y(x.size());
  if (x.empty()) return y;
  const auto& b = coeffs.b;
  const auto& a = coeffs.a;
  // Steady state for a constant input x0 with output gain * x0.
  const double x0 = x.front();
  const double y0 = coeffs.dc_gain() * x0;
  double z2 = b[2] * x0 - a[2] * y0;
  double z1 = b[1] * x0 - a[1] * y0 + z2;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double out = b[0] * x[n] + z1;
    z1 = b[1] * x[n] - a[1] * out + z2;
    z2 = b[2] * x[n] - a[2] * out;
    y[n] = out;
  }
  return y;
}

SignalBlock rectify(const SignalBlock& s) {
  SignalBlock out = s;
  out.samples = s.samples.cwiseAbs();
  return out;
}

SignalBlock butterworth2_lowpass(const SignalBlock& s, double fc, bool zero_phase) {
  return apply_filter(s, butterworth2_lowpass_coeffs(fc, s.fs), zero_phase);
}

SignalBlock first_order_lowpass(const SignalBlock& s, double fc, bool zero_phase) {
  return apply_filter(s, first_order_lowpass_coeffs(fc, s.fs), zero_phase);
}

FeatureDataset mav_window(const SignalBlock& s, double window_ms, double step_ms) {
  s.validate();
  const auto window = static_cast<Eigen::Index>(std::llround(window_ms * s.fs / 1000.0));
  const auto step = static_cast<Eigen::Index>(std::llround(step_ms * s.fs / 1000.0));
  if (window_ms * s.fs < 1000.0) throw DomainError("mav_window: window shorter than one sample");
  if (step < 1) throw DomainError("mav_window: step shorter than one sample");
  if (window > s.length()) {
    throw DataError("mav_window: window of " + std::to_string(window) +
                    " samples exceeds signal length " + std::to_string(s.length()));
  }
  const Eigen::Index count = (s.length() - window) / step + 1;
  FeatureDataset out(s.channels());
  out.features.resize(count, s.channels());
  for (Eigen::Index w = 0; w < count; ++w) {
    const Eigen::Index start = w * step;
    out.features.row(w) =
        s.samples.middleRows(start, window).cwiseAbs().colwise().mean();
    int label = 1;
    if (!s.labels.empty()) {
      std::map<int, int> votes;
      for (Eigen::Index t = start; t < start + window; ++t) ++votes[s.labels[static_cast<std::size_t>(t)]];
      int best = 0;
      for (const auto& [l, v] : votes) {
        if (v > best) {
          best = v;
          label = l;
        }
      }
    }
    out.labels.push_back(label);
    out.trials.push_back(s.trial);
    out.participants.push_back(s.participant);
  }
  return out;
}

FeatureDataset pipeline_rect_smooth(const SignalBlock& s, double fc, bool zero_phase) {
  const auto smoothed = butterworth2_lowpass(rectify(s), fc, zero_phase);
  FeatureDataset out(s.channels());
  out.features = smoothed.samples;
  const auto n = static_cast<std::size_t>(s.length());
  out.labels = s.labels.empty() ? std::vector<int>(n, 1) : s.labels;
  out.trials.assign(n, s.trial);
  out.participants.assign(n, s.participant);
  return out;
}

FeatureDataset concat(const std::vector<FeatureDataset>& parts) {
  if (parts.empty()) return FeatureDataset();
  const int d = parts.front().dim();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.dim() != d) throw DimensionMismatch("concat: datasets differ in dimension");
    rows += p.features.rows();
  }
  FeatureDataset out(d);
  out.features.resize(rows, d);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.features.middleRows(at, p.features.rows()) = p.features;
    at += p.features.rows();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.trials.insert(out.trials.end(), p.trials.begin(), p.trials.end());
    out.participants.insert(out.participants.end(), p.participants.begin(), p.participants.end());
  }
  return out;
}

std::vector<SignalBlock> read_signal_csv(std::istream& in, std::optional<double> fs,
                                         const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source_name + ": missing header");
  const auto header = csv::split(csv::trim_line(line));
  if (header.empty() || header[0] != "t") throw DataError(source_name + ": first column must be 't'");
  int channels = 0;
  while (1 + channels < static_cast<int>(header.size()) &&
         header[static_cast<std::size_t>(1 + channels)] == "ch" + std::to_string(channels + 1)) {
    ++channels;
  }
  if (channels == 0) throw DataError(source_name + ": missing column ch1");
  const auto at = static_cast<std::size_t>(1 + channels);
  if (header.size() < at + 2 || header[at] != "label" || header[at + 1] != "trial") {
    throw DataError(source_name + ": expected columns label,trial after ch1..chD");
  }
  const bool has_participant = header.size() == at + 3 && header[at + 2] == "participant";
  if (header.size() != at + 2 && !has_participant) {
    throw DataError(source_name + ": unexpected trailing columns");
  }

  struct Pending {
    std::vector<double> t;
    std::vector<double> values;
    std::vector<int> labels;
    int trial = 0;
    int participant = 0;
  };
  std::vector<Pending> blocks;
  std::map<std::pair<int, int>, std::size_t> index;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = csv::trim_line(line);
    if (line.empty()) continue;
    ++row;
    const auto cells = csv::split(line);
    if (cells.size() != header.size()) {
      throw DataError(source_name + ": row " + std::to_string(row) + " has the wrong number of cells");
    }
    std::vector<double> nums;
    for (std::size_t j = 0; j < at; ++j) {
      const auto v = csv::parse_double(cells[j]);
      if (!v || !std::isfinite(*v)) {
        throw DataError(source_name + ": row " + std::to_string(row) + ", column " + header[j] +
                        ": not a finite number");
      }
      nums.push_back(*v);
    }
    std::vector<int> ints;
    for (std::size_t j = at; j < cells.size(); ++j) {
      const auto v = csv::parse_int(cells[j]);
      if (!v) {
        throw DataError(source_name + ": row " + std::to_string(row) + ", column " + header[j] +
                        ": not an integer");
      }
      ints.push_back(*v);
    }
    const int participant = has_participant ? ints[2] : 0;
    const auto key = std::make_pair(participant, ints[1]);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, blocks.size()).first;
      blocks.push_back({});
      blocks.back().trial = ints[1];
      blocks.back().participant = participant;
    }
    auto& b = blocks[it->second];
    b.t.push_back(nums[0]);
    b.values.insert(b.values.end(), nums.begin() + 1, nums.end());
    b.labels.push_back(ints[0]);
  }

  std::vector<SignalBlock> out;
  for (auto& b : blocks) {
    SignalBlock s;
    const auto n = static_cast<Eigen::Index>(b.t.size());
    s.samples = Eigen::Map<RowMatrix>(b.values.data(), n, channels);
    s.labels = std::move(b.labels);
    s.trial = b.trial;
    s.participant = b.participant;
    if (fs) {
      s.fs = *fs;
    } else {
      if (n < 2 || !(b.t.back() > b.t.front())) {
        throw DataError(source_name + ": cannot infer sampling rate for trial " +
                        std::to_string(b.trial) + "; pass it explicitly");
      }
      s.fs = static_cast<double>(n - 1) / (b.t.back() - b.t.front());
    }
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SignalBlock> load_signal_csv(const std::filesystem::path& path, std::optional<double> fs) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_signal_csv(in, fs, path.string());
}

}  // namespace scalemix
