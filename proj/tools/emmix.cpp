// Command-line front end: synthetic data generation, training,
// verification metrics, ablation sweeps, and the gradient self-check.
//
// Exit codes: 0 success, 1 usage/config, 2 data/protocol,
// 3 numerical-check failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "emmix/checkpoint.hpp"
#include "emmix/data.hpp"
#include "emmix/errors.hpp"
#include "emmix/evaluation.hpp"
#include "emmix/gradcheck.hpp"
#include "emmix/model.hpp"

namespace fs = std::filesystem;
using namespace emmix;

namespace {

std::uint64_t env_seed_or(std::uint64_t fallback) {
  const char* env = std::getenv("EMMIX_SEED");
  if (!env) return fallback;
  return std::strtoull(env, nullptr, 10);
}

std::map<std::string, std::string> snapshot(const RunConfig& rc) {
  auto kv = rc.raw;
  kv["preset"] = rc.preset;
  if (!kv.count("lr")) kv["lr"] = std::to_string(rc.train.lr);
  if (!kv.count("batch")) kv["batch"] = std::to_string(rc.train.batch);
  if (!kv.count("epochs")) kv["epochs"] = std::to_string(rc.train.epochs);
  if (!kv.count("seed")) kv["seed"] = std::to_string(rc.train.seed);
  if (!kv.count("window")) kv["window"] = std::to_string(rc.prep.window);
  if (!kv.count("stride")) kv["stride"] = std::to_string(rc.prep.stride);
  return kv;
}

struct SynthArgs {
  std::size_t subjects = 4;
  int sessions = 2;
  double duration = 10.0;
  double rate = 50.0;
  double difficulty = 0.25;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  std::uint64_t seed = a.seed_given ? a.seed : env_seed_or(1);
  fs::create_directories(a.out);
  auto profiles = make_profiles(a.subjects, a.difficulty, seed);
  auto recs = synthesize(profiles, a.sessions, a.duration, a.rate, seed);
  std::string csv = (fs::path(a.out) / "recordings.csv").string();
  save_csv(csv, recs);
  write_manifest((fs::path(a.out) / "manifest.json").string(), "synth",
                 {{"subjects", std::to_string(a.subjects)},
                  {"sessions", std::to_string(a.sessions)},
                  {"duration_s", std::to_string(a.duration)},
                  {"rate_hz", std::to_string(a.rate)},
                  {"difficulty", std::to_string(a.difficulty)}},
                 seed, {}, {csv});
  std::printf("wrote %zu recordings to %s\n", recs.size(), csv.c_str());
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc =
      a.config.empty() ? default_run_config() : parse_run_config(a.config);
  if (!rc.raw.count("seed")) rc.train.seed = env_seed_or(rc.train.seed);
  fs::create_directories(a.out);

  std::vector<std::string> warnings;
  auto recs = load_csv(a.data, {}, &warnings);
  Dataset ds = build_dataset(recs, rc.prep, &warnings);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (ds.samples.empty())
    throw DataError("train: no windows produced from " + a.data);

  rc.model.n_subjects = ds.subjects.size();
  rc.model.finalize();
  EmMixformer model =
      EmMixformer::create(rc.model, mix_seed(rc.train.seed, 0xA110ULL));
  std::printf("model: preset=%s params=%zu subjects=%zu train=%zu test=%zu\n",
              rc.preset.c_str(), model.param_count(), ds.subjects.size(),
              ds.train_count(), ds.test_count());

  std::string log_path = (fs::path(a.out) / "train_log.csv").string();
  std::ofstream log(log_path);
  log << "epoch,mean_loss,train_accuracy\n";
  auto result = train(model, ds, rc.train, [&](const EpochLog& e) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu,%.12g,%.6f", e.epoch, e.mean_loss,
                  e.accuracy);
    log << buf << "\n";
    if (e.epoch % 10 == 0 || e.epoch + 1 == rc.train.epochs)
      std::printf("epoch %4zu loss %.6f acc %.4f\n", e.epoch, e.mean_loss,
                  e.accuracy);
  });
  log.close();

  std::string ckpt = (fs::path(a.out) / "model.ckpt").string();
  save_checkpoint(ckpt, model, rc.train, rc.prep);
  write_manifest((fs::path(a.out) / "manifest.json").string(), "train",
                 snapshot(rc), rc.train.seed, {a.data}, {ckpt, log_path});
  std::printf("final loss %.12g; checkpoint %s\n", result.final_loss,
              ckpt.c_str());
  return 0;
}

struct EvalArgs {
  std::string model;
  std::string data;
  std::string report;
};

int cmd_eval(const EvalArgs& a) {
  Checkpoint ck = load_checkpoint(a.model);
  std::vector<std::string> warnings;
  auto recs = load_csv(a.data, {}, &warnings);
  Dataset ds = build_dataset(recs, ck.prep, &warnings);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (ds.subjects != ck.model.subjects) {
    std::string want, got;
    for (const auto& s : ck.model.subjects) want += s + " ";
    for (const auto& s : ds.subjects) got += s + " ";
    throw ProtocolError("eval: subject mismatch; checkpoint has [" + want +
                        "], data has [" + got + "]");
  }
  ScoreSet scores = score_verification(ck.model, ds);
  write_metrics_report(a.report, scores);
  std::string roc = a.report + ".roc.csv";
  roc_export(scores, roc);
  write_manifest(a.report + ".manifest.json", "eval", {},
                 ck.train_cfg.seed, {a.model, a.data}, {a.report, roc});
  EerResult e = eer(scores);
  std::printf("eer %.6f (threshold %.6g) on %zu genuine / %zu impostor\n",
              e.eer, e.threshold, scores.genuine.size(),
              scores.impostor.size());
  return 0;
}

struct AblateArgs {
  std::string data;
  std::string config;
  std::string out;
};

int cmd_ablate(const AblateArgs& a) {
  RunConfig base =
      a.config.empty() ? default_run_config() : parse_run_config(a.config);
  if (!base.raw.count("seed")) base.train.seed = env_seed_or(base.train.seed);
  fs::create_directories(a.out);

  std::vector<std::string> warnings;
  auto recs = load_csv(a.data, {}, &warnings);
  Dataset ds = build_dataset(recs, base.prep, &warnings);

  std::string report_path = (fs::path(a.out) / "ablation_report.txt").string();
  std::ofstream report(report_path);
  report << "# configuration  eer  frr@1e-1  frr@1e-2  frr@1e-3\n";
  std::vector<std::string> outputs = {report_path};
  for (const auto& preset : ablation_names()) {
    RunConfig rc = base;
    std::size_t tokens = rc.model.mix.attlstm_tokens;
    rc.model.mix = ablation_preset(preset);
    rc.model.mix.attlstm_tokens = tokens;
    rc.model.n_subjects = ds.subjects.size();
    rc.model.finalize();
    EmMixformer model =
        EmMixformer::create(rc.model, mix_seed(rc.train.seed, 0xA110ULL));
    std::printf("[%s] training (%zu params)\n", preset.c_str(),
                model.param_count());
    train(model, ds, rc.train);
    ScoreSet scores = score_verification(model, ds);
    EerResult e = eer(scores);
    auto frrs = frr_at_far(scores, {1e-1, 1e-2, 1e-3});
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-22s %.6f %.6f %.6f %.6f",
                  preset.c_str(), e.eer, frrs[0].frr, frrs[1].frr,
                  frrs[2].frr);
    report << buf << "\n";
    std::printf("%s\n", buf);
    fs::path sub = fs::path(a.out) / preset;
    fs::create_directories(sub);
    std::string ckpt = (sub / "model.ckpt").string();
    save_checkpoint(ckpt, model, rc.train, rc.prep);
    outputs.push_back(ckpt);
  }
  report.close();
  write_manifest((fs::path(a.out) / "manifest.json").string(), "ablate",
                 snapshot(base), base.train.seed, {a.data}, outputs);
  return 0;
}

struct GradcheckArgs {
  std::vector<std::string> modules;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool inject_bug = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  std::uint64_t seed = a.seed_given ? a.seed : env_seed_or(20240601);
  std::vector<std::string> names = a.modules;
  if (names.empty() || (names.size() == 1 && names[0] == "all"))
    names = gradcheck_module_names();
  auto known = gradcheck_module_names();
  for (const auto& n : names)
    if (std::find(known.begin(), known.end(), n) == known.end())
      throw ConfigError("gradcheck: unknown module '" + n + "'");

  bool all_ok = true;
  for (const auto& n : names) {
    GradCheckReport report = gradcheck_module(n, seed, a.inject_bug);
    bool ok = report.passed();
    all_ok = all_ok && ok;
    std::printf("%-14s %-4s max_rel_err %.3e over %zu groups\n", n.c_str(),
                ok ? "ok" : "FAIL", report.worst(), report.groups.size());
    for (const auto& g : report.groups)
      if (g.max_rel_err >= 1e-4)
        std::printf("  group %-32s %.3e (%zu coords)\n", g.name.c_str(),
                    g.max_rel_err, g.coords_checked);
  }
  if (!all_ok) throw NumericError("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"EmMixformer eye-movement recognition toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--subjects", sa.subjects)->check(CLI::PositiveNumber);
  synth->add_option("--sessions", sa.sessions)->check(CLI::PositiveNumber);
  synth->add_option("--duration", sa.duration)->check(CLI::PositiveNumber);
  synth->add_option("--rate", sa.rate)->check(CLI::PositiveNumber);
  synth->add_option("--difficulty", sa.difficulty)
      ->check(CLI::Range(0.0, 1.0));
  auto* seed_opt = synth->add_option("--seed", sa.seed);
  synth->add_option("--out", sa.out)->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model on a recordings CSV");
  tr->add_option("--data", ta.data)->required()->check(CLI::ExistingFile);
  tr->add_option("--config", ta.config)->check(CLI::ExistingFile);
  tr->add_option("--out", ta.out)->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "verification metrics for a model");
  ev->add_option("--model", ea.model)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ea.data)->required()->check(CLI::ExistingFile);
  ev->add_option("--report", ea.report)->required();

  AblateArgs aa;
  auto* ab = app.add_subcommand("ablate", "train/evaluate every preset");
  ab->add_option("--data", aa.data)->required()->check(CLI::ExistingFile);
  ab->add_option("--config", aa.config)->check(CLI::ExistingFile);
  ab->add_option("--out", aa.out)->required();

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference self-check");
  gc->add_option("--modules", ga.modules)->delimiter(',');
  auto* gseed = gc->add_option("--seed", ga.seed);
  gc->add_flag("--inject-bug", ga.inject_bug)
      ->group("");  // hidden: detector sanity only

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  sa.seed_given = seed_opt->count() > 0;
  ga.seed_given = gseed->count() > 0;

  try {
    if (synth->parsed()) return cmd_synth(sa);
    if (tr->parsed()) return cmd_train(ta);
    if (ev->parsed()) return cmd_eval(ea);
    if (ab->parsed()) return cmd_ablate(aa);
    if (gc->parsed()) return cmd_gradcheck(ga);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {  // data, protocol, shape, io
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
