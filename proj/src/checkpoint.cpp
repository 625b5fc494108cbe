#include "emmix/checkpoint.hpp"

#include <json.hpp>

#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include "emmix/errors.hpp"

namespace emmix {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'E', 'M', 'M', 'X'};
constexpr std::uint32_t kVersion = 1;

json model_config_to_json(const ModelConfig& c) {
  json stages = json::array();
  for (const auto& s : c.cnn.stages)
    stages.push_back({{"kernel", s.kernel}, {"channels", s.channels}});
  return {
      {"cnn",
       {{"stages", stages},
        {"pool_kernel", c.cnn.pool_kernel},
        {"pool_stride", c.cnn.pool_stride},
        {"input_channels", c.cnn.input_channels}}},
      {"transformer",
       {{"model_dim", c.transformer.model_dim},
        {"heads", c.transformer.heads},
        {"mlp_hidden", c.transformer.mlp_hidden},
        {"layers", c.transformer.layers}}},
      {"mix",
       {{"enable_transformer", c.mix.enable_transformer},
        {"enable_attlstm", c.mix.enable_attlstm},
        {"enable_fourier", c.mix.enable_fourier},
        {"legacy_lstm", c.mix.legacy_lstm},
        {"layers", c.mix.layers},
        {"attlstm_tokens", c.mix.attlstm_tokens}}},
      {"n_subjects", c.n_subjects}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.cnn.stages.clear();
  for (const auto& s : j.at("cnn").at("stages"))
    c.cnn.stages.push_back({s.at("kernel").get<std::size_t>(),
                            s.at("channels").get<std::size_t>()});
  c.cnn.pool_kernel = j.at("cnn").at("pool_kernel").get<std::size_t>();
  c.cnn.pool_stride = j.at("cnn").at("pool_stride").get<std::size_t>();
  c.cnn.input_channels = j.at("cnn").at("input_channels").get<std::size_t>();
  c.transformer.model_dim =
      j.at("transformer").at("model_dim").get<std::size_t>();
  c.transformer.heads = j.at("transformer").at("heads").get<std::size_t>();
  c.transformer.mlp_hidden =
      j.at("transformer").at("mlp_hidden").get<std::size_t>();
  c.transformer.layers = j.at("transformer").at("layers").get<std::size_t>();
  c.mix.enable_transformer = j.at("mix").at("enable_transformer").get<bool>();
  c.mix.enable_attlstm = j.at("mix").at("enable_attlstm").get<bool>();
  c.mix.enable_fourier = j.at("mix").at("enable_fourier").get<bool>();
  c.mix.legacy_lstm = j.at("mix").at("legacy_lstm").get<bool>();
  c.mix.layers = j.at("mix").at("layers").get<std::size_t>();
  c.mix.attlstm_tokens = j.at("mix").at("attlstm_tokens").get<std::size_t>();
  c.n_subjects = j.at("n_subjects").get<std::size_t>();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"lr", c.lr},           {"batch", c.batch},
          {"epochs", c.epochs},   {"beta1", c.beta1},
          {"beta2", c.beta2},     {"adam_eps", c.adam_eps},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.batch = j.at("batch").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

}  // namespace

void save_checkpoint(const std::string& path, EmMixformer& model,
                     const TrainConfig& train_cfg,
                     const PreprocessOptions& prep) {
  ParamList params = model.params();
  StatsList stats = model.stats();

  json dir = json::array();
  std::size_t offset = 0;
  for (const auto& [name, p] : params) {
    dir.push_back({{"name", name}, {"count", p.numel()}, {"offset", offset}});
    offset += p.numel();
  }
  json sdir = json::array();
  for (const auto& [name, s] : stats) {
    sdir.push_back(
        {{"name", name}, {"count", s->mean.size()}, {"offset", offset}});
    offset += 2 * s->mean.size();  // mean block then var block
  }
  json header = {{"version", kVersion},
                 {"model_config", model_config_to_json(model.config)},
                 {"train_config", train_config_to_json(train_cfg)},
                 {"preprocess",
                  {{"window", prep.window},
                   {"stride", prep.stride},
                   {"v_min", prep.v_min},
                   {"c", prep.c}}},
                 {"subjects", model.subjects},
                 {"tensors", dir},
                 {"bn_stats", sdir}};
  std::string head = header.dump();

  std::string blob;
  blob.append(kMagic, 4);
  append_u32(blob, kVersion);
  append_u64(blob, head.size());
  blob += head;
  auto append_doubles = [&](const std::vector<double>& v) {
    const char* raw = reinterpret_cast<const char*>(v.data());
    blob.append(raw, raw + v.size() * sizeof(double));
  };
  for (const auto& [name, p] : params) append_doubles(p.values());
  for (const auto& [name, s] : stats) {
    append_doubles(s->mean);
    append_doubles(s->var);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 4) != 0)
    throw DataError("checkpoint: " + path + " is not an EmMixformer checkpoint");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i)
    version |= std::uint32_t(static_cast<unsigned char>(blob[4 + i]))
               << (8 * i);
  if (version != kVersion)
    throw DataError("checkpoint: unsupported version " +
                    std::to_string(version) + " (supported: " +
                    std::to_string(kVersion) + ")");
  std::uint64_t head_len = 0;
  for (int i = 0; i < 8; ++i)
    head_len |= std::uint64_t(static_cast<unsigned char>(blob[8 + i]))
                << (8 * i);
  if (blob.size() < 16 + head_len)
    throw DataError("checkpoint: truncated header in " + path);
  json header;
  try {
    header = json::parse(blob.substr(16, head_len));
  } catch (const json::exception& e) {
    throw DataError("checkpoint: corrupt header in " + path + ": " +
                    e.what());
  }

  Checkpoint ck;
  ck.train_cfg = train_config_from_json(header.at("train_config"));
  const json& pj = header.at("preprocess");
  ck.prep.window = pj.at("window").get<std::size_t>();
  ck.prep.stride = pj.at("stride").get<std::size_t>();
  ck.prep.v_min = pj.at("v_min").get<double>();
  ck.prep.c = pj.at("c").get<double>();
  ModelConfig mc = model_config_from_json(header.at("model_config"));
  ck.model = EmMixformer::create(mc, /*init_seed=*/0);
  ck.model.subjects =
      header.at("subjects").get<std::vector<std::string>>();

  const char* base = blob.data() + 16 + head_len;
  std::size_t avail = (blob.size() - 16 - head_len) / sizeof(double);
  auto read_block = [&](std::size_t offset, std::vector<double>& dst) {
    if (offset + dst.size() > avail)
      throw DataError("checkpoint: truncated tensor data in " + path);
    std::memcpy(dst.data(), base + offset * sizeof(double),
                dst.size() * sizeof(double));
  };

  std::map<std::string, std::pair<std::size_t, std::size_t>> directory;
  for (const auto& e : header.at("tensors"))
    directory[e.at("name").get<std::string>()] = {
        e.at("offset").get<std::size_t>(), e.at("count").get<std::size_t>()};
  for (auto& [name, p] : ck.model.params()) {
    auto it = directory.find(name);
    if (it == directory.end())
      throw DataError("checkpoint: missing tensor '" + name + "' in " + path);
    if (it->second.second != p.numel())
      throw DataError("checkpoint: size mismatch for tensor '" + name + "'");
    read_block(it->second.first, p.mutable_values());
  }
  std::map<std::string, std::pair<std::size_t, std::size_t>> sdirectory;
  for (const auto& e : header.at("bn_stats"))
    sdirectory[e.at("name").get<std::string>()] = {
        e.at("offset").get<std::size_t>(), e.at("count").get<std::size_t>()};
  for (auto& [name, s] : ck.model.stats()) {
    auto it = sdirectory.find(name);
    if (it == sdirectory.end())
      throw DataError("checkpoint: missing stats '" + name + "' in " + path);
    s->mean.resize(it->second.second);
    s->var.resize(it->second.second);
    read_block(it->second.first, s->mean);
    read_block(it->second.first + it->second.second, s->var);
  }
  return ck;
}

// ------------------------------------------------------------ run config

RunConfig default_run_config() { return RunConfig{}; }

namespace {

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

RunConfig run_config_from_map(const std::map<std::string, std::string>& kv) {
  RunConfig rc;
  auto it = kv.find("preset");
  if (it != kv.end()) rc.preset = it->second;
  rc.model.mix = ablation_preset(rc.preset);

  for (const auto& [key, value] : kv) {
    if (key == "preset") {
    } else if (key == "lr") {
      rc.train.lr = std::stod(value);
    } else if (key == "batch") {
      rc.train.batch = std::stoull(value);
    } else if (key == "epochs") {
      rc.train.epochs = std::stoull(value);
    } else if (key == "seed") {
      rc.train.seed = std::stoull(value);
    } else if (key == "window") {
      rc.prep.window = std::stoull(value);
    } else if (key == "stride") {
      rc.prep.stride = std::stoull(value);
    } else if (key == "v_min") {
      rc.prep.v_min = std::stod(value);
    } else if (key == "c_scale") {
      rc.prep.c = std::stod(value);
    } else if (key == "heads") {
      rc.model.transformer.heads = std::stoull(value);
    } else if (key == "mlp_hidden") {
      rc.model.transformer.mlp_hidden = std::stoull(value);
    } else if (key == "tf_layers") {
      rc.model.transformer.layers = std::stoull(value);
    } else if (key == "mix_layers") {
      rc.model.mix.layers = std::stoull(value);
    } else if (key == "attlstm_tokens") {
      rc.model.mix.attlstm_tokens = std::stoull(value);
    } else if (key == "enable_transformer") {
      rc.model.mix.enable_transformer = parse_bool(value, key);
    } else if (key == "enable_attlstm") {
      rc.model.mix.enable_attlstm = parse_bool(value, key);
    } else if (key == "enable_fourier") {
      rc.model.mix.enable_fourier = parse_bool(value, key);
    } else if (key == "legacy_lstm") {
      rc.model.mix.legacy_lstm = parse_bool(value, key);
    } else if (key == "cnn_channels") {
      auto ch = parse_size_list(value);
      if (ch.size() != rc.model.cnn.stages.size())
        throw ConfigError("config: cnn_channels needs " +
                          std::to_string(rc.model.cnn.stages.size()) +
                          " entries");
      for (std::size_t i = 0; i < ch.size(); ++i)
        rc.model.cnn.stages[i].channels = ch[i];
    } else if (key == "cnn_kernels") {
      auto ks = parse_size_list(value);
      if (ks.size() != rc.model.cnn.stages.size())
        throw ConfigError("config: cnn_kernels needs " +
                          std::to_string(rc.model.cnn.stages.size()) +
                          " entries");
      for (std::size_t i = 0; i < ks.size(); ++i)
        rc.model.cnn.stages[i].kernel = ks[i];
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  rc.raw = kv;
  return rc;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " is not key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (kv.count(key))
      throw ConfigError("config: duplicate key '" + key + "'");
    kv[key] = value;
  }
  return run_config_from_map(kv);
}

// -------------------------------------------------------------- manifest

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checksum: cannot open " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!in) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(h));
  return hex;
}

void write_manifest(const std::string& path, const std::string& command,
                    const std::map<std::string, std::string>& config_snapshot,
                    std::uint64_t seed,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json j;
  j["command"] = command;
  j["config"] = config_snapshot;
  j["seed"] = seed;
  j["inputs"] = inputs;
  json outs = json::array();
  for (const auto& o : outputs)
    outs.push_back({{"path", o}, {"fnv1a64", file_checksum(o)}});
  j["outputs"] = outs;
  auto now = std::chrono::system_clock::now();
  j["timestamp_unix_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(
          now.time_since_epoch())
          .count();
  std::ofstream out(path);
  if (!out) throw DataError("manifest: cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace emmix
