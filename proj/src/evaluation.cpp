#include "emmix/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "emmix/errors.hpp"

namespace emmix {

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

ScoreSet score_verification(EmMixformer& model, const Dataset& ds) {
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    (ds.split[i] == 0 ? train_idx : test_idx).push_back(i);
  if (test_idx.empty())
    throw ProtocolError("score_verification: empty test split");

  std::set<std::string> enrolled;
  for (auto i : train_idx) enrolled.insert(ds.samples[i].subject_id);
  std::vector<std::string> missing;
  for (auto i : test_idx)
    if (!enrolled.count(ds.samples[i].subject_id))
      missing.push_back(ds.samples[i].subject_id);
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ProtocolError("score_verification: un-enrolled test subjects: " +
                        list);
  }

  NoGradGuard inference;
  std::size_t d = model.config.model_dim();
  auto embed = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::vector<double>> out;
    const std::size_t chunk = 64;
    for (std::size_t off = 0; off < idx.size(); off += chunk) {
      std::size_t n = std::min(chunk, idx.size() - off);
      std::vector<const PreprocessedSample*> batch(n);
      for (std::size_t j = 0; j < n; ++j)
        batch[j] = &ds.samples[idx[off + j]];
      auto res = model.forward_batch(batch, /*training=*/false);
      for (std::size_t j = 0; j < n; ++j)
        out.emplace_back(res.embedding.values().begin() + j * d,
                         res.embedding.values().begin() + (j + 1) * d);
    }
    return out;
  };

  auto train_emb = embed(train_idx);
  auto test_emb = embed(test_idx);

  std::map<std::string, std::pair<std::vector<double>, std::size_t>> acc;
  for (std::size_t j = 0; j < train_idx.size(); ++j) {
    auto& slot = acc[ds.samples[train_idx[j]].subject_id];
    if (slot.first.empty()) slot.first.assign(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) slot.first[k] += train_emb[j][k];
    slot.second++;
  }
  std::map<std::string, std::vector<double>> templates;
  for (auto& [subject, slot] : acc) {
    for (auto& v : slot.first) v /= static_cast<double>(slot.second);
    templates[subject] = std::move(slot.first);
  }

  ScoreSet scores;
  for (std::size_t j = 0; j < test_idx.size(); ++j) {
    const auto& probe_subject = ds.samples[test_idx[j]].subject_id;
    for (const auto& [subject, tmpl] : templates) {
      double s = cosine_similarity(test_emb[j], tmpl);
      (subject == probe_subject ? scores.genuine : scores.impostor)
          .push_back(s);
    }
  }
  return scores;
}

namespace {

struct SweepPoint {
  double threshold;
  double far;
  double frr;
};

// FAR/FRR at every distinct score (ascending) plus an above-max
// extreme; both are step functions changing only at scores.
std::vector<SweepPoint> sweep_points(const ScoreSet& s) {
  if (s.genuine.empty() || s.impostor.empty())
    throw DataError("metrics: genuine and impostor lists must be non-empty");
  std::vector<double> gen = s.genuine, imp = s.impostor;
  for (double v : gen)
    if (!std::isfinite(v)) throw DataError("metrics: non-finite score");
  for (double v : imp)
    if (!std::isfinite(v)) throw DataError("metrics: non-finite score");
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  std::vector<double> thresholds = gen;
  thresholds.insert(thresholds.end(), imp.begin(), imp.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  double ng = static_cast<double>(gen.size());
  double ni = static_cast<double>(imp.size());
  std::vector<SweepPoint> pts;
  pts.reserve(thresholds.size() + 1);
  for (double t : thresholds) {
    auto imp_ge = imp.end() - std::lower_bound(imp.begin(), imp.end(), t);
    auto gen_lt = std::lower_bound(gen.begin(), gen.end(), t) - gen.begin();
    pts.push_back({t, static_cast<double>(imp_ge) / ni,
                   static_cast<double>(gen_lt) / ng});
  }
  pts.push_back({thresholds.back() + 1.0, 0.0, 1.0});
  return pts;
}

}  // namespace

EerResult eer(const ScoreSet& s) {
  auto pts = sweep_points(s);
  // FAR - FRR is non-increasing across the sweep
  for (std::size_t k = 0; k < pts.size(); ++k) {
    double d = pts[k].far - pts[k].frr;
    if (d == 0.0) return {pts[k].far, pts[k].threshold};
    if (d < 0.0) {
      // sign change inside (pts[k-1], pts[k]); k >= 1 because d = 1 at
      // the minimum score
      const SweepPoint& a = pts[k - 1];
      const SweepPoint& b = pts[k];
      double da = a.far - a.frr;
      double t = da / (da - d);
      return {a.far + t * (b.far - a.far),
              a.threshold + t * (b.threshold - a.threshold)};
    }
  }
  // unreachable: the extreme point has FAR - FRR = -1
  throw NumericError("eer: no crossing found");
}

std::vector<FrrAtFar> frr_at_far(const ScoreSet& s,
                                 const std::vector<double>& far_targets) {
  for (double t : far_targets)
    if (!(t > 0.0 && t < 1.0))
      throw ConfigError("frr_at_far: target " + std::to_string(t) +
                        " outside (0,1)");
  auto pts = sweep_points(s);
  double ni = static_cast<double>(s.impostor.size());
  std::vector<FrrAtFar> out;
  for (double target : far_targets) {
    if (1.0 / ni > target) {
      out.push_back({target, 1.0, true});
      continue;
    }
    for (const auto& p : pts)
      if (p.far <= target) {
        out.push_back({target, p.frr, false});
        break;
      }
  }
  return out;
}

void roc_export(const ScoreSet& s, const std::string& path) {
  auto pts = sweep_points(s);
  std::ofstream outf(path);
  if (!outf) throw DataError("roc_export: cannot write " + path);
  outf << "threshold,far,frr\n";
  char buf[128];
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.far,
                  p.frr);
    outf << buf;
  }
  if (!outf) throw DataError("roc_export: write failed for " + path);
}

void write_metrics_report(const std::string& path, const ScoreSet& s) {
  EerResult e = eer(s);
  auto frrs = frr_at_far(s, {1e-1, 1e-2, 1e-3});
  std::ofstream out(path);
  if (!out) throw DataError("metrics: cannot write " + path);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.6f", e.eer);
  out << "eer = " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", e.threshold);
  out << "eer_threshold = " << buf << "\n";
  const char* names[] = {"frr@1e-1", "frr@1e-2", "frr@1e-3"};
  for (std::size_t i = 0; i < frrs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", frrs[i].frr);
    out << names[i] << " = " << buf << "\n";
    if (frrs[i].insufficient_data)
      out << names[i] << "_insufficient_data = 1\n";
  }
  out << "n_genuine = " << s.genuine.size() << "\n";
  out << "n_impostor = " << s.impostor.size() << "\n";
}

}  // namespace emmix
