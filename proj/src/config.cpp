#include "grace/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace grace {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& val) {
  try {
    size_t pos = 0;
    double x = std::stod(val, &pos);
    if (pos != val.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + val + "' as a number");
  }
}

int64_t parse_int(const std::string& key, const std::string& val) {
  try {
    size_t pos = 0;
    long long x = std::stoll(val, &pos);
    if (pos != val.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + val + "' as an integer");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& val) {
  try {
    size_t pos = 0;
    unsigned long long x = std::stoull(val, &pos);
    if (pos != val.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + val + "' as an unsigned integer");
  }
}

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse_string(const std::string& text,
                                                const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected 'key = value', got '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string val = trim(stripped.substr(eq + 1));
    if (key.empty() || val.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key or value");
    }
    if (!kv.emplace(key, val).second) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }

  ExperimentConfig cfg;
  auto take = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(origin + ": missing required key '" + std::string(key) + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_optional = [&](const char* key, const std::string& fallback) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };

  cfg.p_m_1 = parse_double("p_m_1", take("p_m_1"));
  cfg.p_m_2 = parse_double("p_m_2", take("p_m_2"));
  cfg.p_r_1 = parse_double("p_r_1", take("p_r_1"));
  cfg.p_r_2 = parse_double("p_r_2", take("p_r_2"));
  cfg.learning_rate = parse_double("learning_rate", take("learning_rate"));
  cfg.weight_decay = parse_double("weight_decay", take("weight_decay"));
  cfg.epochs = parse_int("epochs", take("epochs"));
  cfg.hidden_dim = parse_int("hidden_dim", take("hidden_dim"));
  cfg.activation = take("activation");
  cfg.tau = parse_double("tau", take("tau"));
  cfg.seed = parse_u64("seed", take("seed"));
  cfg.arch = take("arch");

  cfg.objective = take_optional("objective", "grace");
  cfg.data_dir = take_optional("data_dir", "");
  cfg.out_dir = take_optional("out_dir", "out");
  cfg.n_runs = static_cast<int>(parse_int("n_runs", take_optional("n_runs", "5")));
  cfg.metric = take_optional("metric", "accuracy");

  if (!kv.empty()) {
    std::string unknown;
    for (const auto& [k, v] : kv) {
      if (!unknown.empty()) unknown += ", ";
      unknown += k;
    }
    throw ConfigError(origin + ": unknown config key(s): " + unknown);
  }

  // Validate enum-like values eagerly so errors surface at parse time.
  activation_from_string(cfg.activation);
  arch_from_string(cfg.arch);
  loss_mode_from_string(cfg.objective);
  metric_from_string(cfg.metric);
  if (cfg.n_runs < 1) throw ConfigError(origin + ": n_runs must be at least 1");
  cfg.to_train_config().validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path.string());
}

TrainConfig ExperimentConfig::to_train_config() const {
  TrainConfig t;
  t.p_m_1 = p_m_1;
  t.p_m_2 = p_m_2;
  t.p_r_1 = p_r_1;
  t.p_r_2 = p_r_2;
  t.learning_rate = learning_rate;
  t.weight_decay = weight_decay;
  t.epochs = epochs;
  t.hidden_dim = hidden_dim;
  t.activation = activation_from_string(activation);
  t.tau = tau;
  t.seed = seed;
  t.arch = arch_from_string(arch);
  t.mode = loss_mode_from_string(objective);
  return t;
}

std::string ExperimentConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["p_m_1"] = fmt_double(p_m_1);
  kv["p_m_2"] = fmt_double(p_m_2);
  kv["p_r_1"] = fmt_double(p_r_1);
  kv["p_r_2"] = fmt_double(p_r_2);
  kv["learning_rate"] = fmt_double(learning_rate);
  kv["weight_decay"] = fmt_double(weight_decay);
  kv["epochs"] = std::to_string(epochs);
  kv["hidden_dim"] = std::to_string(hidden_dim);
  kv["activation"] = activation;
  kv["tau"] = fmt_double(tau);
  kv["seed"] = std::to_string(seed);
  kv["arch"] = arch;
  kv["objective"] = objective;
  kv["n_runs"] = std::to_string(n_runs);
  kv["metric"] = metric;
  // data_dir/out_dir are deployment details, not experiment identity.
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::string ExperimentConfig::digest() const {
  const std::string c = canonical();
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : c) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace grace
