#include "emmix/preprocessing.hpp"

#include <cmath>
#include <limits>

#include "emmix/errors.hpp"

namespace emmix {

VelocitySeries velocities(const GazeRecording& rec) {
  std::size_t n = rec.t.size();
  if (rec.x.size() != n || rec.y.size() != n)
    throw DataError("velocities: t/x/y length mismatch");
  if (n < 2)
    throw DataError("velocities: need at least 2 samples, got " +
                    std::to_string(n));
  VelocitySeries out;
  out.dx.assign(n, 0.0);
  out.dy.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    double dt = rec.t[i] - rec.t[i - 1];
    if (dt <= 0.0)
      throw DataError("velocities: timestamps not strictly increasing at " +
                      std::to_string(i));
    if (!std::isnan(rec.x[i]) && !std::isnan(rec.x[i - 1]))
      out.dx[i] = (rec.x[i] - rec.x[i - 1]) / dt;
    if (!std::isnan(rec.y[i]) && !std::isnan(rec.y[i - 1]))
      out.dy[i] = (rec.y[i] - rec.y[i - 1]) / dt;
  }
  return out;
}

namespace {

struct ZStats {
  double mu = 0.0;
  double sigma = 1.0;
  bool degenerate = false;
};

// Population statistics over the full raw series.
ZStats zstats(const std::vector<double>& v) {
  ZStats s;
  double n = static_cast<double>(v.size());
  for (double x : v) s.mu += x;
  s.mu /= n;
  double var = 0.0;
  for (double x : v) var += (x - s.mu) * (x - s.mu);
  var /= n;
  s.sigma = std::sqrt(var);
  if (s.sigma == 0.0) {
    s.sigma = 1.0;
    s.degenerate = true;
  }
  return s;
}

}  // namespace

FastSlow split_fast_slow(const std::vector<double>& dx,
                         const std::vector<double>& dy, double v_min, double c,
                         std::vector<std::string>* warnings) {
  if (dx.size() != dy.size())
    throw DataError("split_fast_slow: series length mismatch");
  if (dx.empty()) throw DataError("split_fast_slow: empty series");
  ZStats sx = zstats(dx);
  ZStats sy = zstats(dy);
  if (warnings) {
    if (sx.degenerate)
      warnings->push_back("degenerate horizontal velocity signal (sigma = 0)");
    if (sy.degenerate)
      warnings->push_back("degenerate vertical velocity signal (sigma = 0)");
  }
  std::size_t n = dx.size();
  FastSlow out;
  out.fast_x.resize(n);
  out.fast_y.resize(n);
  out.slow_x.resize(n);
  out.slow_y.resize(n);
  double zx0 = (0.0 - sx.mu) / sx.sigma;
  double zy0 = (0.0 - sy.mu) / sy.sigma;
  // largest double strictly inside (-1, 1): keeps the slow-channel
  // range invariant even where tanh rounds to 1.0
  double cap = std::nextafter(1.0, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double speed = std::sqrt(dx[i] * dx[i] + dy[i] * dy[i]);
    if (speed < v_min) {
      out.fast_x[i] = zx0;
      out.fast_y[i] = zy0;
    } else {
      out.fast_x[i] = (dx[i] - sx.mu) / sx.sigma;
      out.fast_y[i] = (dy[i] - sy.mu) / sy.sigma;
    }
    double tx = std::tanh(c * dx[i]);
    double ty = std::tanh(c * dy[i]);
    out.slow_x[i] = std::fmin(std::fmax(tx, -cap), cap);
    out.slow_y[i] = std::fmin(std::fmax(ty, -cap), cap);
  }
  return out;
}

std::vector<PreprocessedSample> window(const FastSlow& channels,
                                       std::size_t length, std::size_t stride,
                                       const std::string& subject_id,
                                       const std::string& session_id,
                                       std::vector<std::string>* warnings) {
  if (stride < 1) throw ConfigError("window: stride must be >= 1");
  if (length < 1) throw ConfigError("window: length must be >= 1");
  std::size_t n = channels.fast_x.size();
  std::vector<PreprocessedSample> out;
  if (length > n) {
    if (warnings)
      warnings->push_back("window length " + std::to_string(length) +
                          " exceeds series length " + std::to_string(n) +
                          "; no windows emitted");
    return out;
  }
  std::size_t index = 0;
  for (std::size_t off = 0; off + length <= n; off += stride, ++index) {
    PreprocessedSample s;
    s.width = length;
    s.subject_id = subject_id;
    s.session_id = session_id;
    s.window_index = index;
    s.fast.resize(2 * length);
    s.slow.resize(2 * length);
    for (std::size_t i = 0; i < length; ++i) {
      s.fast[i] = channels.fast_x[off + i];
      s.fast[length + i] = channels.fast_y[off + i];
      s.slow[i] = channels.slow_x[off + i];
      s.slow[length + i] = channels.slow_y[off + i];
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PreprocessedSample> preprocess_recording(
    const GazeRecording& rec, const PreprocessOptions& opt,
    std::vector<std::string>* warnings) {
  VelocitySeries v = velocities(rec);
  FastSlow fs = split_fast_slow(v.dx, v.dy, opt.v_min, opt.c, warnings);
  return window(fs, opt.window, opt.stride, rec.subject_id, rec.session_id,
                warnings);
}

}  // namespace emmix
