// SPDX-License-Identifier: Apache-2.0
#include "segbert/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

#include "segbert/error.hpp"

namespace segbert {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  const auto r = std::from_chars(first, last, out);
  if (r.ec != std::errc() || r.ptr != last) throw ConfigError("bad value for " + key + ": '" + value + "'");
  return out;
}

std::string join_tasks(const std::vector<PretrainTask>& tasks) {
  if (tasks.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (i) out += ',';
    out += to_string(tasks[i]);
  }
  return out;
}

std::vector<PretrainTask> split_tasks(const std::string& value) {
  std::vector<PretrainTask> out;
  if (value == "none" || value.empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const PretrainTask t = parse_pretrain_task(trim(item));
    bool seen = false;
    for (PretrainTask u : out) seen = seen || u == t;
    if (!seen) out.push_back(t);
  }
  return out;
}

void apply(RunConfig& c, const std::string& key, const std::string& value) {
  ModelConfig& m = c.model;
  TrainConfig& t = c.train;
  if (key == "dataset") c.dataset = value;
  else if (key == "data_dir") c.data_dir = value;
  else if (key == "strategy") c.strategy = parse_strategy(value);
  else if (key == "k") c.k = value == "auto" ? std::nullopt : std::optional<int>(parse_number<int>(key, value));
  else if (key == "residual") m.residual = parse_residual_mode(value);
  else if (key == "hidden") m.hidden = parse_number<int>(key, value);
  else if (key == "heads") m.heads = parse_number<int>(key, value);
  else if (key == "layers") m.layers = parse_number<int>(key, value);
  else if (key == "intermediate") m.intermediate = parse_number<int>(key, value);
  else if (key == "dropout_hidden") m.dropout_hidden = parse_number<double>(key, value);
  else if (key == "dropout_attn") m.dropout_attn = parse_number<double>(key, value);
  else if (key == "learning_rate") {
    c.learning_rate = value == "auto" ? std::nullopt : std::optional<double>(parse_number<double>(key, value));
  } else if (key == "weight_decay") t.weight_decay = parse_number<double>(key, value);
  else if (key == "epochs") t.epochs = parse_number<int>(key, value);
  else if (key == "early_stop_patience") t.early_stop_patience = parse_number<int>(key, value);
  else if (key == "batch_size") t.batch_size = parse_number<int>(key, value);
  else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "pretrain_tasks") t.pretrain_tasks = split_tasks(value);
  else if (key == "pretrain_epochs") t.pretrain_epochs = parse_number<int>(key, value);
  else if (key == "clip_norm") t.clip_norm = parse_number<double>(key, value);
  else if (key == "refit_epochs") t.refit_epochs = parse_number<int>(key, value);
  else if (key == "wl_iterations") t.wl_iterations = parse_number<int>(key, value);
  else if (key == "jobs") t.jobs = parse_number<int>(key, value);
  else if (key == "out_dir") c.out_dir = value;
  else if (key == "checkpoint") c.checkpoint = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

bool operator==(const RunConfig& a, const RunConfig& b) { return serialize(a) == serialize(b); }

std::string serialize(const RunConfig& c) {
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  std::ostringstream o;
  o << "dataset=" << c.dataset << '\n'
    << "data_dir=" << c.data_dir << '\n'
    << "strategy=" << to_string(c.strategy) << '\n'
    << "k=" << (c.k ? std::to_string(*c.k) : "auto") << '\n'
    << "residual=" << to_string(m.residual) << '\n'
    << "hidden=" << m.hidden << '\n'
    << "heads=" << m.heads << '\n'
    << "layers=" << m.layers << '\n'
    << "intermediate=" << m.intermediate << '\n'
    << "dropout_hidden=" << fmt(m.dropout_hidden) << '\n'
    << "dropout_attn=" << fmt(m.dropout_attn) << '\n'
    << "learning_rate=" << (c.learning_rate ? fmt(*c.learning_rate) : "auto") << '\n'
    << "weight_decay=" << fmt(t.weight_decay) << '\n'
    << "epochs=" << t.epochs << '\n'
    << "early_stop_patience=" << t.early_stop_patience << '\n'
    << "batch_size=" << t.batch_size << '\n'
    << "seed=" << t.seed << '\n'
    << "pretrain_tasks=" << join_tasks(t.pretrain_tasks) << '\n'
    << "pretrain_epochs=" << t.pretrain_epochs << '\n'
    << "clip_norm=" << fmt(t.clip_norm) << '\n'
    << "refit_epochs=" << t.refit_epochs << '\n'
    << "wl_iterations=" << t.wl_iterations << '\n'
    << "jobs=" << t.jobs << '\n'
    << "out_dir=" << c.out_dir << '\n'
    << "checkpoint=" << c.checkpoint << '\n';
  return o.str();
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    try {
      apply(base, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

}  // namespace segbert
