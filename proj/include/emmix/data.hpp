#pragma once

// Dataset ingestion (explicit-schema CSV) and a synthetic gaze
// generator producing labeled, separable recordings: alternating
// fixations (target + tremor sinusoid + noise) and minimum-jerk
// saccades scaled to each subject's peak velocity.

#include <cstdint>
#include <string>
#include <vector>

#include "emmix/preprocessing.hpp"

namespace emmix {

struct SubjectProfile {
  std::string subject_id;
  double saccade_peak_velocity = 400.0;  // deg/s, in [200, 600]
  double saccade_duration_ms = 50.0;
  double fixation_duration_ms = 250.0;   // mean, in [100, 400]
  double tremor_amplitude = 0.15;        // deg
  double tremor_frequency_hz = 8.0;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<PreprocessedSample> samples;
  std::vector<std::string> subjects;  // ordered label set
  std::vector<int> split;             // per-sample: 0 = train, 1 = test
  int subject_index(const std::string& id) const;
  std::size_t train_count() const;
  std::size_t test_count() const;
};

// Column-name mapping; resolution against the header is explicit and
// never inferred.
struct CsvSchema {
  std::string t = "t";
  std::string x = "x";
  std::string y = "y";
  std::string subject = "subject";
  std::string session = "session";
};

std::vector<GazeRecording> load_csv(const std::string& path,
                                    const CsvSchema& schema = {},
                                    std::vector<std::string>* warnings =
                                        nullptr);
void save_csv(const std::string& path,
              const std::vector<GazeRecording>& recordings);

// Evenly spread profiles with per-subject jitter; `difficulty` in
// [0, 1] interpolates every field toward the population mean (0 keeps
// the full spread).
std::vector<SubjectProfile> make_profiles(std::size_t n_subjects,
                                          double difficulty,
                                          std::uint64_t seed);

std::vector<GazeRecording> synthesize(
    const std::vector<SubjectProfile>& profiles, int sessions,
    double duration_s, double rate_hz, std::uint64_t seed);

// Window every recording and tag train/test: for each subject the
// lexicographically first session is the train split, the rest test.
Dataset build_dataset(const std::vector<GazeRecording>& recordings,
                      const PreprocessOptions& opt,
                      std::vector<std::string>* warnings = nullptr);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace emmix
