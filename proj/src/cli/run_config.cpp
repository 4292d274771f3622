#include "unite/cli/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <concepts>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "unite/data/text_io.hpp"
#include "unite/error.hpp"

namespace unite::cli {

namespace {

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

template <typename T>
T parse_number(const std::string& text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw ConfigError("not a number: '" + text + "'");
  return value;
}

template <std::unsigned_integral T>
Field bind(T& x) {
  return {[&x](const std::string& v) { x = parse_number<T>(v); }, [&x] { return std::to_string(x); }};
}

Field bind(double& x) {
  return {[&x](const std::string& v) { x = parse_number<double>(v); }, [&x] { return data::format_double(x); }};
}

Field bind(bool& x) {
  return {[&x](const std::string& v) {
            if (v == "true" || v == "1") x = true;
            else if (v == "false" || v == "0") x = false;
            else throw ConfigError("not a boolean: '" + v + "'");
          },
          [&x] { return std::string(x ? "true" : "false"); }};
}

Field bind(std::string& x) {
  return {[&x](const std::string& v) { x = v; }, [&x] { return x; }};
}

Field bind(std::vector<double>& x) {
  return {[&x](const std::string& v) {
            std::vector<double> out;
            for (const std::string& part : data::split_csv_line(v)) out.push_back(parse_number<double>(trim(part)));
            x = std::move(out);
          },
          [&x] {
            std::string s;
            for (std::size_t i = 0; i < x.size(); ++i) s += (i ? "," : "") + data::format_double(x[i]);
            return s;
          }};
}

std::map<std::string, Field> fields(RunConfig& c) {
  train::TrainConfig& t = c.train;
  data::SignalSpec& s = c.signal;
  return {
      {"seed", bind(c.seed)},
      {"data_dir", bind(c.data_dir)},
      {"n_patients", bind(c.n_patients)},
      {"vocab_size", bind(c.vocab_size)},
      {"n_locations", bind(c.n_locations)},
      {"positive_rate", bind(c.positive_rate)},
      {"risk_weight", bind(s.risk_weight)},
      {"location_weight", bind(s.location_weight)},
      {"age_weight", bind(s.age_weight)},
      {"signal_noise_sd", bind(s.noise_sd)},
      {"noise_fraction", bind(s.noise_fraction)},
      {"risk_codes", bind(s.risk_codes)},
      {"max_risk_count", bind(s.max_risk_count)},
      {"min_codes", bind(s.min_codes)},
      {"max_codes", bind(s.max_codes)},
      {"location_features", bind(s.location_features)},
      {"signal_feature", bind(s.signal_feature)},
      {"location_correlation", bind(s.location_correlation)},
      {"code_skew", bind(s.code_skew)},
      {"train_fraction", bind(c.train_fraction)},
      {"validation_fraction", bind(c.validation_fraction)},
      {"test_fraction", bind(c.test_fraction)},
      {"max_len", bind(c.max_len)},
      {"code_embed_dim", bind(c.code_embed_dim)},
      {"transformer_depth", bind(c.transformer_depth)},
      {"heads", bind(c.heads)},
      {"feedforward_dim", bind(c.feedforward_dim)},
      {"ehr_dim", bind(c.ehr_dim)},
      {"tabular_hidden", bind(c.tabular_hidden)},
      {"tabular_embed_dim", bind(c.tabular_embed_dim)},
      {"fused_dim", bind(c.fused_dim)},
      {"inducing", bind(c.inducing)},
      {"free_mean", bind(c.free_mean)},
      {"jitter", bind(c.jitter)},
      {"initial_lengthscale", bind(c.initial_lengthscale)},
      {"initial_sigma2", bind(c.initial_sigma2)},
      {"use_demographics", bind(c.use_demographics)},
      {"use_location", bind(c.use_location)},
      {"batch_size", bind(t.batch_size)},
      {"learning_rate", bind(t.adam.learning_rate)},
      {"weight_decay", bind(t.adam.weight_decay)},
      {"max_epochs", bind(t.max_epochs)},
      {"patience", bind(t.patience)},
      {"B_train", bind(t.B_train)},
      {"B_eval", bind(t.B_eval)},
      {"pretrain_epochs", bind(t.pretrain_epochs)},
      {"warmup_epochs", bind(t.warmup_epochs)},
      {"clip_norm", bind(t.clip_norm)},
      {"min_improvement", bind(t.min_improvement)},
      {"smoothing", bind(t.smoothing)},
      {"B_predict", bind(c.B_predict)},
      {"filter_fractions", bind(c.filter_fractions)},
      {"n_sample", bind(c.n_sample)},
  };
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto table = fields(*this);
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.set(value);
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [name, field] : fields(const_cast<RunConfig&>(*this))) out.push_back(name);
  return out;
}

std::string RunConfig::get(const std::string& key) const {
  auto table = fields(const_cast<RunConfig&>(*this));
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get();
}

void RunConfig::ablate(const std::string& what) {
  if (what == "location") use_location = false;
  else if (what == "demographics") use_demographics = false;
  else if (what == "both" || what == "location+demographics") use_location = use_demographics = false;
  else throw ConfigError("--ablate expects location, demographics or both, got '" + what + "'");
}

data::SplitRatios RunConfig::split_ratios() const { return {train_fraction, validation_fraction, test_fraction}; }

model::ModelConfig RunConfig::model_config(std::size_t vocab, std::size_t location_dim) const {
  model::ModelConfig m;
  auto& e = m.embedding;
  e.vocab_size = vocab;
  e.transformer = {transformer_depth, heads, code_embed_dim, feedforward_dim, max_len};
  e.ehr_dim = ehr_dim;
  e.tabular_hidden = tabular_hidden;
  e.tabular_dim = tabular_embed_dim;
  e.location_dim = location_dim;
  e.fused_dim = fused_dim;
  e.use_demographics = use_demographics;
  e.use_location = use_location;
  m.inducing = inducing;
  m.free_mean = free_mean;
  m.jitter = jitter;
  m.initial_lengthscale = initial_lengthscale;
  m.initial_sigma2 = initial_sigma2;
  m.validate();
  return m;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t = train;
  t.seed = seed;
  t.validate();
  return t;
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [name, field] : fields(const_cast<RunConfig&>(*this))) out += name + " = " + field.get() + "\n";
  return out;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++number;
    const std::string content = trim(line);
    if (content.empty() || content[0] == '#') continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(content.substr(0, eq)), value = trim(content.substr(eq + 1));
    if (const auto [it, fresh] = seen.emplace(key, number); !fresh) {
      throw ConfigError("config line " + std::to_string(number) + ": key '" + key + "' repeats line " +
                        std::to_string(it->second));
    }
    config.set(key, value);
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

}  // namespace unite::cli
