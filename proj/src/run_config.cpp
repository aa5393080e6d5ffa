#include "cmos/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

namespace cmos {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw InvalidArgument("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

template <typename N, std::size_t K>
std::array<N, K> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::string> items;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) items.push_back(trim(item));
  if (items.size() != K) {
    throw InvalidArgument("config key '" + key + "': expected " + std::to_string(K) + " comma-separated values");
  }
  std::array<N, K> out{};
  for (std::size_t i = 0; i < K; ++i) out[i] = parse_number<N>(key, items[i]);
  return out;
}

std::string show(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}
std::string show(std::size_t v) { return std::to_string(v); }

template <typename N, std::size_t K>
std::string show(const std::array<N, K>& a) {
  std::string out;
  for (std::size_t i = 0; i < K; ++i) out += (i ? "," : "") + show(a[i]);
  return out;
}

struct Field {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CMOS_SCALAR(KEY, DESC, TYPE, MEMBER)                                                          \
  Field {                                                                                             \
    {KEY, DESC}, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<TYPE>(KEY, v); }, \
        [](const RunConfig& c) { return show(static_cast<TYPE>(c.MEMBER)); }                         \
  }

#define CMOS_LIST(KEY, DESC, TYPE, K, MEMBER)                                                            \
  Field {                                                                                                \
    {KEY, DESC}, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_list<TYPE, K>(KEY, v); }, \
        [](const RunConfig& c) { return show(c.MEMBER); }                                                \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{{"seed", "seeds model init, training order and synthesis (default 0)"},
            [](RunConfig& c, const std::string& v) { c.set_seed(parse_number<std::uint64_t>("seed", v)); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      CMOS_SCALAR("folds", "cross-validation folds (default 3)", std::size_t, folds),
      CMOS_SCALAR("model.conv_ki_filters", "conv-KI output channels (default 16)", std::size_t,
                  model.conv_ki_filters),
      CMOS_LIST("model.channels", "conv block widths (default 16,32,64,64)", std::size_t, 4, model.channels),
      CMOS_SCALAR("model.fc_width", "hidden units of fc1 (default 128)", std::size_t, model.fc_width),
      CMOS_SCALAR("model.native_frames", "stored conv-KI kernel length N0 (default 20)", std::size_t,
                  model.native_frames),
      Field{{"train.optimizer", "sgd or adam (default adam)"},
            [](RunConfig& c, const std::string& v) { c.train.optimizer.kind = parse_optimizer_kind(v); },
            [](const RunConfig& c) { return to_string(c.train.optimizer.kind); }},
      CMOS_SCALAR("train.learning_rate", "step size (default 0.001)", double, train.optimizer.learning_rate),
      CMOS_SCALAR("train.momentum", "sgd momentum (default 0)", double, train.optimizer.momentum),
      CMOS_SCALAR("train.beta1", "adam first-moment decay (default 0.9)", double, train.optimizer.beta1),
      CMOS_SCALAR("train.beta2", "adam second-moment decay (default 0.999)", double, train.optimizer.beta2),
      CMOS_SCALAR("train.epsilon", "adam denominator offset (default 1e-8)", double, train.optimizer.epsilon),
      CMOS_SCALAR("train.epochs", "baseline epochs (default 60)", std::size_t, train.epochs),
      CMOS_SCALAR("train.finetune_epochs", "NL fine-tune epochs (default 30)", std::size_t, train.finetune_epochs),
      CMOS_SCALAR("train.patience", "early-stop patience in epochs, 0 disables (default 10)", std::size_t,
                  train.patience),
      CMOS_SCALAR("train.holdout_fraction", "training subjects held out for early stopping (default 0.15)", double,
                  train.holdout_fraction),
      CMOS_SCALAR("synth.subjects", "subjects to generate (default 90)", std::size_t, synth.subjects),
      CMOS_LIST("synth.frame_counts", "the two frame counts (default 20,25)", std::size_t, 2, synth.frame_counts),
      CMOS_LIST("synth.frame_mix", "relative weights of the frame counts (default 65,25)", double, 2,
                synth.frame_mix),
      CMOS_LIST("synth.class_prior", "relative class weights (default 794,348,207,91)", double, 4,
                synth.class_prior),
      CMOS_SCALAR("synth.noise", "Gaussian noise std (default 0.05)", double, synth.noise),
      CMOS_SCALAR("synth.radius_jitter", "inner radius jitter in rows (default 3)", double, synth.radius_jitter),
      CMOS_SCALAR("synth.thickness_jitter", "wall thickness jitter in rows (default 2)", double,
                  synth.thickness_jitter),
      CMOS_SCALAR("synth.gain_low", "lower band gain (default 0.85)", double, synth.gain_low),
      CMOS_SCALAR("synth.gain_high", "upper band gain (default 1.15)", double, synth.gain_high),
      CMOS_SCALAR("synth.column_modulation", "angular wall-motion modulation (default 0.1)", double,
                  synth.column_modulation),
  };
  return table;
}

#undef CMOS_SCALAR
#undef CMOS_LIST

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  model.seed = seed;
  train.seed = seed;
  synth.seed = seed;
}

void RunConfig::validate() const {
  cmos::validate(model);
  train.validate();
  synth.validate();
  if (folds < 2) throw InvalidArgument("config key 'folds': need at least 2 folds");
}

const std::vector<ConfigKey>& run_config_schema() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return keys;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument("config line without '=': '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.key.key == key) field = &f;
    }
    if (!field) throw InvalidArgument("unknown config key '" + key + "'");
    if (!seen.insert(key).second) throw InvalidArgument("config key '" + key + "' given twice");
    try {
      field->set(config, value);
    } catch (const InvalidArgument& e) {
      const std::string what = e.what();
      if (what.find(key) != std::string::npos) throw;
      throw InvalidArgument("config key '" + key + "': " + what);
    }
  }
  config.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key.key + "=" + f.get(config) + "\n";
  return out;
}

}  // namespace cmos
