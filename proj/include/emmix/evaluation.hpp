#pragma once

// Verification protocol and metrics. Enrollment template per subject =
// mean train-split embedding; every test window is scored by cosine
// similarity against every template (same subject -> genuine). The
// threshold sweep uses the >= acceptance convention: FAR(t) = fraction
// of impostor scores >= t, FRR(t) = fraction of genuine scores < t.

#include <string>
#include <vector>

#include "emmix/data.hpp"
#include "emmix/model.hpp"

namespace emmix {

// Higher score = more genuine.
struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b);

ScoreSet score_verification(EmMixformer& model, const Dataset& ds);

struct EerResult {
  double eer;
  double threshold;
};

// Sweep of all distinct scores; linear interpolation between adjacent
// thresholds where FAR-FRR changes sign.
EerResult eer(const ScoreSet& s);

struct FrrAtFar {
  double far_target;
  double frr;
  bool insufficient_data;  // fewer impostor scores than 1/target
};

std::vector<FrrAtFar> frr_at_far(const ScoreSet& s,
                                 const std::vector<double>& far_targets);

// CSV of (threshold, FAR, FRR) at every distinct score plus the
// above-max extreme; FAR is monotone non-increasing down the file.
void roc_export(const ScoreSet& s, const std::string& path);

// Key-value metrics summary (eer, frr@ targets, counts).
void write_metrics_report(const std::string& path, const ScoreSet& s);

}  // namespace emmix
