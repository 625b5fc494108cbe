#include "emmix/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "emmix/errors.hpp"

namespace emmix {

int Dataset::subject_index(const std::string& id) const {
  auto it = std::lower_bound(subjects.begin(), subjects.end(), id);
  if (it == subjects.end() || *it != id) return -1;
  return static_cast<int>(it - subjects.begin());
}

std::size_t Dataset::train_count() const {
  return static_cast<std::size_t>(std::count(split.begin(), split.end(), 0));
}

std::size_t Dataset::test_count() const {
  return samples.size() - train_count();
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// ------------------------------------------------------------------- CSV

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_coord(const std::string& cell) {
  const char* s = cell.c_str();
  char* end = nullptr;
  double v = std::strtod(s, &end);
  while (end && *end == ' ') ++end;
  if (end == s || (end && *end != '\0'))
    return std::numeric_limits<double>::quiet_NaN();
  return v;
}

}  // namespace

std::vector<GazeRecording> load_csv(const std::string& path,
                                    const CsvSchema& schema,
                                    std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) return {};  // empty file
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_line(line);
  auto col = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw DataError("load_csv: missing column '" + name + "' in " + path);
    return static_cast<std::size_t>(it - header.begin());
  };
  std::size_t ct = col(schema.t), cx = col(schema.x), cy = col(schema.y);
  std::size_t cs = col(schema.subject), ce = col(schema.session);

  struct Row {
    double t, x, y;
  };
  std::map<std::pair<std::string, std::string>, std::vector<Row>> groups;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw DataError("load_csv: row " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    char* end = nullptr;
    double t = std::strtod(cells[ct].c_str(), &end);
    if (end == cells[ct].c_str())
      throw DataError("load_csv: non-numeric timestamp at row " +
                      std::to_string(line_no));
    groups[{cells[cs], cells[ce]}].push_back(
        {t, parse_coord(cells[cx]), parse_coord(cells[cy])});
  }

  std::vector<GazeRecording> out;
  for (auto& [key, rows] : groups) {
    bool sorted = std::is_sorted(
        rows.begin(), rows.end(),
        [](const Row& a, const Row& b) { return a.t < b.t; });
    if (!sorted) {
      std::stable_sort(rows.begin(), rows.end(),
                       [](const Row& a, const Row& b) { return a.t < b.t; });
      if (warnings)
        warnings->push_back("load_csv: reordered timestamps for subject " +
                            key.first + " session " + key.second);
    }
    GazeRecording rec;
    rec.subject_id = key.first;
    rec.session_id = key.second;
    rec.t.reserve(rows.size());
    for (const Row& r : rows) {
      rec.t.push_back(r.t);
      rec.x.push_back(r.x);
      rec.y.push_back(r.y);
    }
    if (rec.t.size() > 1) {
      std::vector<double> dts;
      for (std::size_t i = 1; i < rec.t.size(); ++i)
        dts.push_back(rec.t[i] - rec.t[i - 1]);
      std::nth_element(dts.begin(), dts.begin() + dts.size() / 2, dts.end());
      double med = dts[dts.size() / 2];
      rec.sample_rate_hz = med > 0 ? 1.0 / med : 0.0;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void save_csv(const std::string& path,
              const std::vector<GazeRecording>& recordings) {
  std::ofstream out(path);
  if (!out) throw DataError("save_csv: cannot write " + path);
  out << "t,x,y,subject,session\n";
  char buf[96];
  for (const auto& rec : recordings)
    for (std::size_t i = 0; i < rec.t.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", rec.t[i], rec.x[i],
                    rec.y[i]);
      out << buf << ',' << rec.subject_id << ',' << rec.session_id << '\n';
    }
  if (!out) throw DataError("save_csv: write failed for " + path);
}

// ------------------------------------------------------------ synthesis

namespace {

double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace

std::vector<SubjectProfile> make_profiles(std::size_t n_subjects,
                                          double difficulty,
                                          std::uint64_t seed) {
  if (n_subjects == 0) return {};
  std::vector<SubjectProfile> out(n_subjects);
  for (std::size_t i = 0; i < n_subjects; ++i) {
    double u = n_subjects == 1
                   ? 0.5
                   : static_cast<double>(i) /
                         static_cast<double>(n_subjects - 1);
    std::mt19937_64 rng(mix_seed(seed, 0x5eedULL + i));
    std::uniform_real_distribution<double> jit(-1.0, 1.0);
    SubjectProfile& p = out[i];
    char name[24];
    std::snprintf(name, sizeof name, "s%02zu", i);
    p.subject_id = name;
    p.saccade_peak_velocity = lerp(230.0, 570.0, u) + 15.0 * jit(rng);
    p.saccade_duration_ms = lerp(32.0, 78.0, u) + 3.0 * jit(rng);
    p.fixation_duration_ms = lerp(130.0, 370.0, u) + 12.0 * jit(rng);
    p.tremor_amplitude = lerp(0.05, 0.25, u) + 0.015 * jit(rng);
    p.tremor_frequency_hz = lerp(4.0, 11.0, u) + 0.4 * jit(rng);
    p.seed = mix_seed(seed, 0xabcdULL + i);
  }
  // pull every field toward the population mean; separation shrinks as
  // difficulty approaches 1
  if (difficulty > 0.0) {
    SubjectProfile mean;
    mean.saccade_peak_velocity = mean.saccade_duration_ms = 0;
    mean.fixation_duration_ms = mean.tremor_amplitude = 0;
    mean.tremor_frequency_hz = 0;
    for (const auto& p : out) {
      mean.saccade_peak_velocity += p.saccade_peak_velocity;
      mean.saccade_duration_ms += p.saccade_duration_ms;
      mean.fixation_duration_ms += p.fixation_duration_ms;
      mean.tremor_amplitude += p.tremor_amplitude;
      mean.tremor_frequency_hz += p.tremor_frequency_hz;
    }
    double n = static_cast<double>(out.size());
    for (auto& p : out) {
      p.saccade_peak_velocity =
          lerp(p.saccade_peak_velocity, mean.saccade_peak_velocity / n,
               difficulty);
      p.saccade_duration_ms =
          lerp(p.saccade_duration_ms, mean.saccade_duration_ms / n,
               difficulty);
      p.fixation_duration_ms =
          lerp(p.fixation_duration_ms, mean.fixation_duration_ms / n,
               difficulty);
      p.tremor_amplitude =
          lerp(p.tremor_amplitude, mean.tremor_amplitude / n, difficulty);
      p.tremor_frequency_hz =
          lerp(p.tremor_frequency_hz, mean.tremor_frequency_hz / n,
               difficulty);
    }
  }
  return out;
}

namespace {

constexpr double kScreenX0 = 2.0, kScreenX1 = 30.0;  // deg
constexpr double kScreenY0 = 2.0, kScreenY1 = 16.0;
constexpr double kNoiseSigma = 0.01;  // deg

// Minimum-jerk position profile; peak velocity 1.875 * |delta| / D.
double min_jerk(double tau) {
  double t3 = tau * tau * tau;
  return 10.0 * t3 - 15.0 * t3 * tau + 6.0 * t3 * tau * tau;
}

GazeRecording synth_one(const SubjectProfile& p, int session,
                        double duration_s, double rate_hz,
                        std::uint64_t stream_seed) {
  std::mt19937_64 rng(stream_seed);
  std::uniform_real_distribution<double> ux(kScreenX0, kScreenX1);
  std::uniform_real_distribution<double> uy(kScreenY0, kScreenY1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, kNoiseSigma);

  GazeRecording rec;
  rec.subject_id = p.subject_id;
  rec.session_id = "sess" + std::to_string(session);
  rec.sample_rate_hz = rate_hz;
  std::size_t n = static_cast<std::size_t>(std::llround(duration_s * rate_hz));

  double phase_x = 2.0 * M_PI * u01(rng);
  double phase_y = 2.0 * M_PI * u01(rng);
  double omega = 2.0 * M_PI * p.tremor_frequency_hz;

  // piecewise plan: fixation at a point, then a minimum-jerk saccade
  double cur_x = ux(rng), cur_y = uy(rng);
  bool fixating = true;
  double seg_start = 0.0;
  double seg_dur = p.fixation_duration_ms / 1000.0 * (0.8 + 0.4 * u01(rng));
  double sac_x0 = cur_x, sac_y0 = cur_y, sac_x1 = cur_x, sac_y1 = cur_y;

  rec.t.reserve(n);
  rec.x.reserve(n);
  rec.y.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / rate_hz;
    while (t >= seg_start + seg_dur) {
      seg_start += seg_dur;
      if (fixating) {
        // launch a saccade whose amplitude matches the subject's
        // typical duration at their peak velocity
        double amp = p.saccade_peak_velocity *
                     (p.saccade_duration_ms / 1000.0) / 1.875 *
                     (0.7 + 0.6 * u01(rng));
        double ang = 2.0 * M_PI * u01(rng);
        sac_x0 = cur_x;
        sac_y0 = cur_y;
        sac_x1 = std::clamp(cur_x + amp * std::cos(ang), kScreenX0, kScreenX1);
        sac_y1 = std::clamp(cur_y + amp * std::sin(ang), kScreenY0, kScreenY1);
        double dist = std::hypot(sac_x1 - sac_x0, sac_y1 - sac_y0);
        seg_dur = std::max(1.875 * dist / p.saccade_peak_velocity, 1e-3);
        fixating = false;
      } else {
        cur_x = sac_x1;
        cur_y = sac_y1;
        seg_dur = p.fixation_duration_ms / 1000.0 * (0.8 + 0.4 * u01(rng));
        fixating = true;
      }
    }
    double bx, by;
    if (fixating) {
      bx = cur_x;
      by = cur_y;
    } else {
      double tau = (t - seg_start) / seg_dur;
      double s = min_jerk(tau);
      bx = sac_x0 + (sac_x1 - sac_x0) * s;
      by = sac_y0 + (sac_y1 - sac_y0) * s;
    }
    rec.t.push_back(t);
    rec.x.push_back(bx + p.tremor_amplitude * std::sin(omega * t + phase_x) +
                    noise(rng));
    rec.y.push_back(by + p.tremor_amplitude * std::sin(omega * t + phase_y) +
                    noise(rng));
  }
  return rec;
}

}  // namespace

std::vector<GazeRecording> synthesize(
    const std::vector<SubjectProfile>& profiles, int sessions,
    double duration_s, double rate_hz, std::uint64_t seed) {
  if (rate_hz <= 0.0) throw ConfigError("synthesize: rate_hz must be > 0");
  if (duration_s <= 0.0)
    throw ConfigError("synthesize: duration_s must be > 0");
  std::vector<GazeRecording> out;
  for (std::size_t i = 0; i < profiles.size(); ++i)
    for (int s = 0; s < sessions; ++s)
      out.push_back(synth_one(
          profiles[i], s, duration_s, rate_hz,
          mix_seed(mix_seed(seed, profiles[i].seed), 0x5e550ULL + s)));
  return out;
}

Dataset build_dataset(const std::vector<GazeRecording>& recordings,
                      const PreprocessOptions& opt,
                      std::vector<std::string>* warnings) {
  Dataset ds;
  for (const auto& rec : recordings) ds.subjects.push_back(rec.subject_id);
  std::sort(ds.subjects.begin(), ds.subjects.end());
  ds.subjects.erase(std::unique(ds.subjects.begin(), ds.subjects.end()),
                    ds.subjects.end());
  // first session per subject is the train split
  std::map<std::string, std::string> first_session;
  for (const auto& rec : recordings) {
    auto it = first_session.find(rec.subject_id);
    if (it == first_session.end() || rec.session_id < it->second)
      first_session[rec.subject_id] = rec.session_id;
  }
  for (const auto& rec : recordings) {
    auto samples = preprocess_recording(rec, opt, warnings);
    int tag = rec.session_id == first_session[rec.subject_id] ? 0 : 1;
    for (auto& s : samples) {
      ds.samples.push_back(std::move(s));
      ds.split.push_back(tag);
    }
  }
  return ds;
}

}  // namespace emmix
