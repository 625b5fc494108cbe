#pragma once

// Raw gaze coordinates -> paired fast/slow velocity channels.
//
// The fast channel is the z-scored velocity with samples below the
// speed threshold v_min replaced by Z(0); the slow channel is
// tanh(c * velocity), which lives strictly inside (-1, 1).

#include <cstddef>
#include <string>
#include <vector>

namespace emmix {

struct GazeRecording {
  std::vector<double> t;  // seconds, strictly increasing
  std::vector<double> x;  // device units, may contain NaN
  std::vector<double> y;
  std::string subject_id;
  std::string session_id;
  double sample_rate_hz = 0.0;
};

// One model input window. Channel matrices are row-major 2 x width
// (row 0 = horizontal velocity channel, row 1 = vertical).
struct PreprocessedSample {
  std::vector<double> fast;
  std::vector<double> slow;
  std::size_t width = 0;
  std::string subject_id;
  std::string session_id;
  std::size_t window_index = 0;
};

struct VelocitySeries {
  std::vector<double> dx;
  std::vector<double> dy;
};

struct FastSlow {
  std::vector<double> fast_x, fast_y;
  std::vector<double> slow_x, slow_y;
};

struct PreprocessOptions {
  double v_min = 40.0;
  double c = 0.02;
  std::size_t window = 1000;
  std::size_t stride = 500;
};

// Difference quotients; index 0 is 0, and any difference touching a
// NaN coordinate is 0. Throws DataError on fewer than 2 samples.
VelocitySeries velocities(const GazeRecording& rec);

FastSlow split_fast_slow(const std::vector<double>& dx,
                         const std::vector<double>& dy, double v_min = 40.0,
                         double c = 0.02,
                         std::vector<std::string>* warnings = nullptr);

// Full windows at offsets 0, stride, 2*stride, ...; a window longer
// than the series yields an empty list plus a warning.
std::vector<PreprocessedSample> window(const FastSlow& channels,
                                       std::size_t length, std::size_t stride,
                                       const std::string& subject_id,
                                       const std::string& session_id,
                                       std::vector<std::string>* warnings =
                                           nullptr);

// velocities -> split_fast_slow -> window.
std::vector<PreprocessedSample> preprocess_recording(
    const GazeRecording& rec, const PreprocessOptions& opt,
    std::vector<std::string>* warnings = nullptr);

}  // namespace emmix
