#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "emmix/errors.hpp"
#include "emmix/evaluation.hpp"
#include "eval_oracle.hpp"

using namespace emmix;

namespace {

ScoreSet random_scores(std::mt19937_64& rng, std::size_t ng, std::size_t ni,
                       double gen_shift = 0.5) {
  std::normal_distribution<double> noise(0.0, 1.0);
  ScoreSet s;
  for (std::size_t i = 0; i < ng; ++i) s.genuine.push_back(noise(rng) + gen_shift);
  for (std::size_t i = 0; i < ni; ++i) s.impostor.push_back(noise(rng));
  return s;
}

PreprocessedSample sample_from(const std::vector<double>& fast,
                               const std::vector<double>& slow,
                               std::size_t width, const std::string& subject,
                               const std::string& session) {
  PreprocessedSample s;
  s.width = width;
  s.fast = fast;
  s.slow = slow;
  s.subject_id = subject;
  s.session_id = session;
  return s;
}

}  // namespace

TEST_CASE("eer: perfect separation gives zero") {
  ScoreSet s{{0.9, 0.8}, {0.1, 0.2}};
  auto r = eer(s);
  CHECK(r.eer == 0.0);
}

TEST_CASE("eer: indistinguishable lists give one half") {
  ScoreSet s{{0.1, 0.4, 0.7}, {0.1, 0.4, 0.7}};
  auto r = eer(s);
  CHECK(r.eer == doctest::Approx(0.5).epsilon(1e-12));
  ScoreSet ties{{0.5, 0.5}, {0.5, 0.5}};
  CHECK(eer(ties).eer == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("eer is inside [0,1] and symmetric under swap-negate") {
  std::mt19937_64 rng(701);
  for (int trial = 0; trial < 40; ++trial) {
    ScoreSet s = random_scores(rng, 30, 40);
    double e = eer(s).eer;
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
    ScoreSet swapped;
    for (double v : s.impostor) swapped.genuine.push_back(-v);
    for (double v : s.genuine) swapped.impostor.push_back(-v);
    CHECK(eer(swapped).eer == doctest::Approx(e).epsilon(1e-12));
  }
}

TEST_CASE("eer matches the dense-sweep oracle on random score sets") {
  std::mt19937_64 rng(703);
  for (int trial = 0; trial < 30; ++trial) {
    ScoreSet s = random_scores(rng, 50, 50);
    double fast_eer = eer(s).eer;
    double oracle = evaloracle::dense_eer(s, 200000);
    CHECK(std::fabs(fast_eer - oracle) < 1e-6);
  }
}

TEST_CASE("monotone transforms leave the EER value identical") {
  std::mt19937_64 rng(705);
  ScoreSet s = random_scores(rng, 40, 60);
  double base = eer(s).eer;
  auto transform = [](double v) { return std::exp(v) + 0.5 * v; };
  ScoreSet t;
  for (double v : s.genuine) t.genuine.push_back(transform(v));
  for (double v : s.impostor) t.impostor.push_back(transform(v));
  CHECK(eer(t).eer == base);  // exact, order statistics only
}

TEST_CASE("empty lists are a metric error") {
  CHECK_THROWS_AS(eer(ScoreSet{{}, {0.1}}), DataError);
  CHECK_THROWS_AS(eer(ScoreSet{{0.1}, {}}), DataError);
}

TEST_CASE("frr_at_far: perfect separation and resolution bound") {
  ScoreSet good;
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> lo(0.0, 0.4), hi(0.6, 1.0);
  for (int i = 0; i < 50; ++i) good.genuine.push_back(hi(rng));
  for (int i = 0; i < 2000; ++i) good.impostor.push_back(lo(rng));
  for (const auto& r : frr_at_far(good, {1e-1, 1e-2, 1e-3})) {
    CHECK(r.frr == 0.0);
    CHECK_FALSE(r.insufficient_data);
  }

  ScoreSet tiny{{0.9, 0.8}, {0.1, 0.2, 0.3, 0.4, 0.5}};
  auto rs = frr_at_far(tiny, {1e-3});
  REQUIRE(rs.size() == 1);
  CHECK(rs[0].insufficient_data);
  CHECK(rs[0].frr == 1.0);

  CHECK_THROWS_AS(frr_at_far(tiny, {1.5}), ConfigError);
  CHECK_THROWS_AS(frr_at_far(tiny, {0.0}), ConfigError);
}

TEST_CASE("frr_at_far matches the dense-sweep oracle") {
  std::mt19937_64 rng(709);
  for (int trial = 0; trial < 20; ++trial) {
    ScoreSet s = random_scores(rng, 60, 400, 1.5);
    for (double target : {1e-1, 1e-2}) {
      auto r = frr_at_far(s, {target});
      double oracle = evaloracle::dense_frr_at_far(s, target, 200000);
      CHECK(std::fabs(r[0].frr - oracle) < 1e-6);
    }
  }
}

TEST_CASE("frr is non-increasing in the FAR target") {
  std::mt19937_64 rng(711);
  ScoreSet s = random_scores(rng, 80, 500, 1.0);
  auto rs = frr_at_far(s, {1e-2, 5e-2, 1e-1, 0.5});
  for (std::size_t i = 1; i < rs.size(); ++i)
    CHECK(rs[i].frr <= rs[i - 1].frr);
}

TEST_CASE("roc export: row count, monotone FAR, EER recoverable") {
  std::mt19937_64 rng(713);
  ScoreSet s = random_scores(rng, 25, 35);
  auto dir = std::filesystem::temp_directory_path() / "emmix_eval_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "roc.csv").string();
  roc_export(s, path);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "threshold,far,frr");
  std::vector<std::array<double, 3>> rows;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::array<double, 3> row{};
    for (int i = 0; i < 3; ++i) {
      std::getline(ss, cell, ',');
      row[i] = std::stod(cell);
    }
    rows.push_back(row);
  }
  std::vector<double> all = s.genuine;
  all.insert(all.end(), s.impostor.begin(), s.impostor.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  CHECK(rows.size() == all.size() + 1);
  for (std::size_t i = 1; i < rows.size(); ++i)
    CHECK(rows[i][1] <= rows[i - 1][1]);
  CHECK(rows.front()[1] == 1.0);  // extremes present
  CHECK(rows.back()[1] == 0.0);
  CHECK(rows.back()[2] == 1.0);

  // recompute EER from the exported grid
  double grid_eer = 1.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    double d = rows[k][1] - rows[k][2];
    if (d == 0.0) {
      grid_eer = rows[k][1];
      break;
    }
    if (d < 0.0) {
      double da = rows[k - 1][1] - rows[k - 1][2];
      double t = da / (da - d);
      grid_eer = rows[k - 1][1] + t * (rows[k][1] - rows[k - 1][1]);
      break;
    }
  }
  CHECK(std::fabs(grid_eer - eer(s).eer) < 1e-12);
}

TEST_CASE("cosine similarity conventions") {
  CHECK(cosine_similarity({1, 2, 3}, {1, 2, 3}) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity({1, 0}, {0, 1}) == 0.0);
  CHECK(cosine_similarity({0, 0}, {1, 1}) == 0.0);  // zero-vector guard
}

TEST_CASE("score_verification: counting, self-similarity, protocol errors") {
  ModelConfig mc;
  mc.cnn.stages = {{3, 2}, {5, 3}, {7, 3}, {9, 4}};
  mc.transformer.heads = 2;
  mc.transformer.mlp_hidden = 12;
  mc.mix.attlstm_tokens = 2;
  mc.mix.layers = 1;
  mc.n_subjects = 2;
  auto model = EmMixformer::create(mc, 71);
  model.subjects = {"alice", "bob"};

  std::mt19937_64 rng(715);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rand_vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
  };
  std::size_t W = 32;
  auto fa = rand_vec(2 * W), sa = rand_vec(2 * W);
  auto fb = rand_vec(2 * W), sb = rand_vec(2 * W);

  Dataset ds;
  ds.subjects = {"alice", "bob"};
  // one train window per subject; test windows are identical copies so
  // each probe embedding equals its own template exactly
  ds.samples = {sample_from(fa, sa, W, "alice", "sess0"),
                sample_from(fb, sb, W, "bob", "sess0"),
                sample_from(fa, sa, W, "alice", "sess1"),
                sample_from(fb, sb, W, "bob", "sess1")};
  ds.split = {0, 0, 1, 1};

  ScoreSet scores = score_verification(model, ds);
  CHECK(scores.genuine.size() == 2);
  CHECK(scores.impostor.size() == 2);
  for (double g : scores.genuine)
    CHECK(g == doctest::Approx(1.0).epsilon(1e-12));

  // un-enrolled probe subject
  Dataset bad = ds;
  bad.samples.push_back(sample_from(fa, sa, W, "mallory", "sess1"));
  bad.split.push_back(1);
  try {
    score_verification(model, bad);
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("mallory") != std::string::npos);
  }
}

TEST_CASE("metrics report has the documented keys") {
  std::mt19937_64 rng(717);
  ScoreSet s = random_scores(rng, 30, 30);
  auto dir = std::filesystem::temp_directory_path() / "emmix_eval_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "metrics.txt").string();
  write_metrics_report(path, s);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  for (const char* key : {"eer = ", "frr@1e-1 = ", "frr@1e-2 = ",
                          "frr@1e-3 = ", "n_genuine = ", "n_impostor = "})
    CHECK(text.find(key) != std::string::npos);
}
