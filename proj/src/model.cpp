#include "cmos/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cmos/io.hpp"

namespace cmos {
namespace {

constexpr std::array<char, 8> kCheckpointMagic = {'C', 'M', 'O', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string nl_prefix(int block) { return "nl" + std::to_string(block); }
std::string conv_prefix(int block) { return "conv" + std::to_string(block); }

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("invalid value '" + value + "' for key '" + key + "'");
  }
}

}  // namespace

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "seg-NL-1") return Variant::seg_nl_1;
  if (name == "seg-NL-2") return Variant::seg_nl_2;
  if (name == "sub-NL-1") return Variant::sub_nl_1;
  if (name == "sub-NL-2") return Variant::sub_nl_2;
  throw InvalidArgument("invalid variant '" + name +
                        "' (expected baseline, seg-NL-1, seg-NL-2, sub-NL-1 or sub-NL-2)");
}

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::baseline: return "baseline";
    case Variant::seg_nl_1: return "seg-NL-1";
    case Variant::seg_nl_2: return "seg-NL-2";
    case Variant::sub_nl_1: return "sub-NL-1";
    case Variant::sub_nl_2: return "sub-NL-2";
  }
  return "?";
}

std::vector<int> nl_block_positions(Variant variant) {
  switch (variant) {
    case Variant::baseline: return {};
    case Variant::seg_nl_1:
    case Variant::sub_nl_1: return {4};
    case Variant::seg_nl_2:
    case Variant::sub_nl_2: return {3, 4};
  }
  return {};
}

std::optional<NLScope> nl_scope(Variant variant) {
  switch (variant) {
    case Variant::baseline: return std::nullopt;
    case Variant::seg_nl_1:
    case Variant::seg_nl_2: return NLScope::segment;
    case Variant::sub_nl_1:
    case Variant::sub_nl_2: return NLScope::subject;
  }
  return std::nullopt;
}

void validate(const ModelConfig& config) {
  if (config.classes != static_cast<std::size_t>(kNumClasses)) {
    throw InvalidArgument("class count is fixed at 4, got " + std::to_string(config.classes));
  }
  if (config.native_frames < 2) throw InvalidArgument("native frame count must be at least 2");
  if (config.conv_ki_filters == 0 || config.fc_width == 0 || config.rows == 0 || config.cols == 0) {
    throw InvalidArgument("model widths and input extents must be positive");
  }
  for (auto c : config.channels) {
    if (c == 0) throw InvalidArgument("conv block channels must be positive");
  }
}

std::array<std::size_t, 2> pooled_extent(const ModelConfig& config) {
  std::size_t r = config.rows, c = config.cols;
  for (int i = 0; i < 4; ++i) {
    r = (r + 1) / 2;
    c = (c + 1) / 2;
  }
  return {r, c};
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config) {
  validate(config);
  std::vector<std::pair<std::string, Shape>> layout;
  layout.emplace_back("conv_ki.k0", Shape{1, 1, config.native_frames, config.conv_ki_filters});
  const auto nl = nl_block_positions(config.variant);
  std::size_t in = config.conv_ki_filters;
  for (int b = 1; b <= 4; ++b) {
    const std::size_t out = config.channels[static_cast<std::size_t>(b - 1)];
    layout.emplace_back(conv_prefix(b) + ".kernel", Shape{3, 3, in, out});
    layout.emplace_back(conv_prefix(b) + ".bias", Shape{out});
    if (std::find(nl.begin(), nl.end(), b) != nl.end()) {
      const std::size_t ce = embedding_width(out);
      layout.emplace_back(nl_prefix(b) + ".phi", Shape{out, ce});
      layout.emplace_back(nl_prefix(b) + ".psi", Shape{out, ce});
      layout.emplace_back(nl_prefix(b) + ".g", Shape{out, ce});
      layout.emplace_back(nl_prefix(b) + ".theta", Shape{ce, out});
    }
    in = out;
  }
  const auto [pr, pc] = pooled_extent(config);
  const std::size_t flat = pr * pc * config.channels[3];
  layout.emplace_back("fc1.weight", Shape{flat, config.fc_width});
  layout.emplace_back("fc1.bias", Shape{config.fc_width});
  layout.emplace_back("fc2.weight", Shape{config.fc_width, config.classes});
  layout.emplace_back("fc2.bias", Shape{config.classes});
  return layout;
}

template <Real T>
ModelParams<T> build_model(const ModelConfig& config) {
  ModelConfig base_config = config;
  base_config.variant = Variant::baseline;
  ModelParams<T> model{base_config, {}};
  Rng rng(derive_seed(config.seed, 1));
  for (auto& [name, shape] : parameter_layout(base_config)) {
    const bool is_bias = name.ends_with(".bias");
    if (is_bias) {
      model.params.add(name, Tensor<T>::zeros(shape));
      continue;
    }
    // He-uniform over the fan-in (all axes but the last). The classifier layer is
    // shrunk 10x so initial predictions are near uniform.
    const std::size_t fan_in = shape_numel(shape) / shape.back();
    const double gain = name == "fc2.weight" ? 0.1 : 1.0;
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
    model.params.add(name, uniform_tensor<T>(shape, -bound, bound, rng));
  }
  if (config.variant == Variant::baseline) return model;
  return insert_nl_blocks(model, config.variant);
}

template <Real T>
ModelParams<T> insert_nl_blocks(const ModelParams<T>& baseline, Variant variant) {
  if (baseline.config.variant != Variant::baseline) {
    throw InvalidArgument("insert_nl_blocks requires a baseline model, got " + to_string(baseline.config.variant));
  }
  if (variant == Variant::baseline) throw InvalidArgument("insert_nl_blocks: target variant must have NL blocks");
  ModelParams<T> out{baseline.config, {}};
  out.config.variant = variant;
  const NLScope scope = *nl_scope(variant);
  Rng rng(derive_seed(baseline.config.seed, 2));
  std::map<int, NLBlockParams<T>> blocks;
  for (int b : nl_block_positions(variant)) {
    blocks.emplace(b, init_nl_block<T>(baseline.config.channels[static_cast<std::size_t>(b - 1)], scope, rng));
  }
  for (auto& [name, shape] : parameter_layout(out.config)) {
    if (name.starts_with("nl")) {
      const int b = name[2] - '0';
      const auto& p = blocks.at(b);
      const auto field = name.substr(name.find('.') + 1);
      if (field == "phi") out.params.add(name, p.phi_w);
      else if (field == "psi") out.params.add(name, p.psi_w);
      else if (field == "g") out.params.add(name, p.g_w);
      else out.params.add(name, p.theta_w);
    } else {
      out.params.add(name, baseline.params.get(name));
    }
  }
  return out;
}

template <Real T>
Var<T> BoundParams<T>::get(const std::string& name) const {
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (model->params[i].name == name) return vars[i];
  }
  throw InvalidArgument("model has no parameter '" + name + "'");
}

template <Real T>
BoundParams<T> bind_params(Graph<T>& g, const ModelParams<T>& model, bool requires_grad) {
  BoundParams<T> bound{&model, {}};
  bound.vars.reserve(model.params.size());
  for (const auto& p : model.params) bound.vars.push_back(g.leaf(p.value, requires_grad));
  return bound;
}

template <Real T>
Var<T> forward(const BoundParams<T>& params, Var<T> batch) {
  const ModelConfig& cfg = params.model->config;
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != cfg.rows || s[2] != cfg.cols) {
    throw ShapeError("model input must be [B," + std::to_string(cfg.rows) + "," + std::to_string(cfg.cols) +
                     ",t], got " + shape_string(s));
  }
  if (s[3] < 2) throw ShapeError("model input needs t >= 2 frames, got " + std::to_string(s[3]));
  const std::size_t batch_size = s[0];
  const auto nl = nl_block_positions(cfg.variant);
  const auto scope = nl_scope(cfg.variant);

  auto h = relu(conv_ki_forward(batch, params.get("conv_ki.k0")));
  for (int b = 1; b <= 4; ++b) {
    h = conv2d(h, params.get(conv_prefix(b) + ".kernel"), Padding::same);
    h = relu(add_bias(h, params.get(conv_prefix(b) + ".bias")));
    h = maxpool2d(h);
    if (std::find(nl.begin(), nl.end(), b) != nl.end()) {
      const auto prefix = nl_prefix(b);
      NLBlockVars<T> block{params.get(prefix + ".phi"), params.get(prefix + ".psi"), params.get(prefix + ".g"),
                           params.get(prefix + ".theta"), *scope};
      h = nl_block_forward(h, block);
    }
  }
  const std::size_t flat = shape_numel(h.shape()) / batch_size;
  h = reshape(h, Shape{batch_size, flat});
  h = relu(dense(h, params.get("fc1.weight"), params.get("fc1.bias")));
  return dense(h, params.get("fc2.weight"), params.get("fc2.bias"));
}

template <Real T>
Tensor<T> forward(const ModelParams<T>& model, const Tensor<T>& batch) {
  Graph<T> g;
  auto bound = bind_params(g, model, false);
  return forward(bound, g.constant(batch)).value();
}

template <Real T>
std::vector<Tensor<T>> collect_grads(const Graph<T>& g, const BoundParams<T>& params) {
  std::vector<Tensor<T>> grads;
  grads.reserve(params.vars.size());
  for (auto v : params.vars) grads.push_back(g.grad(v));
  return grads;
}

SubjectPrediction predict_scores(const ModelParams<float>& model, const SubjectStudy& study) {
  validate_study(study);
  const Tensor<float> logits = forward(model, study.batch());
  SubjectPrediction pred;
  const std::size_t k = model.config.classes;
  for (std::size_t i = 0; i < kSegmentsPerSubject; ++i) {
    std::span<const float> row(logits.data().data() + i * k, k);
    const auto probs = softmax_values(row);
    std::array<double, kNumClasses> p{};
    std::size_t best = 0;
    for (std::size_t c = 0; c < k; ++c) {
      p[c] = probs[c];
      if (row[c] > row[best]) best = c;
    }
    pred.scores[i] = static_cast<int>(best);
    pred.probabilities.push_back(p);
  }
  return pred;
}

std::string format_model_config(const ModelConfig& c) {
  std::ostringstream out;
  out << "variant=" << to_string(c.variant) << '\n'
      << "conv_ki_filters=" << c.conv_ki_filters << '\n'
      << "channels=" << c.channels[0] << ',' << c.channels[1] << ',' << c.channels[2] << ',' << c.channels[3] << '\n'
      << "fc_width=" << c.fc_width << '\n'
      << "native_frames=" << c.native_frames << '\n'
      << "classes=" << c.classes << '\n'
      << "rows=" << c.rows << '\n'
      << "cols=" << c.cols << '\n'
      << "seed=" << c.seed << '\n';
  return out.str();
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed config line '" + line + "'");
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "variant") {
      try {
        c.variant = parse_variant(value);
      } catch (const InvalidArgument& e) {
        throw FormatError(e.what());
      }
    } else if (key == "conv_ki_filters") c.conv_ki_filters = parse_size(key, value);
    else if (key == "channels") {
      std::istringstream cs(value);
      std::string part;
      std::size_t i = 0;
      while (std::getline(cs, part, ',')) {
        if (i >= 4) throw FormatError("channels needs exactly 4 values");
        c.channels[i++] = parse_size(key, part);
      }
      if (i != 4) throw FormatError("channels needs exactly 4 values");
    } else if (key == "fc_width") c.fc_width = parse_size(key, value);
    else if (key == "native_frames") c.native_frames = parse_size(key, value);
    else if (key == "classes") c.classes = parse_size(key, value);
    else if (key == "rows") c.rows = parse_size(key, value);
    else if (key == "cols") c.cols = parse_size(key, value);
    else if (key == "seed") c.seed = parse_size(key, value);
    else throw FormatError("unknown checkpoint config key '" + key + "'");
  }
  return c;
}

template <Real T>
void save_checkpoint(const ModelParams<T>& model, const std::filesystem::path& path) {
  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  write_u32(out, kCheckpointVersion);
  const std::string header = format_model_config(model.config);
  write_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_u32(out, static_cast<std::uint32_t>(model.params.size()));
  for (const auto& p : model.params) {
    write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_tensor(out, p.value);
  }
  write_file_atomic(path, out.str());
}

template <Real T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path, std::optional<Variant> expected_variant) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  try {
    std::array<char, 8> magic{};
    read_exact(in, magic.data(), magic.size());
    if (magic != kCheckpointMagic) throw FormatError("bad magic: not a checkpoint");
    const auto version = read_u32(in);
    if (version != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto header_len = read_u32(in);
    if (header_len > (1u << 20)) throw FormatError("checkpoint header too large");
    std::string header(header_len, '\0');
    read_exact(in, header.data(), header.size());
    ModelParams<T> model{parse_model_config(header), {}};
    if (expected_variant && *expected_variant != model.config.variant) {
      throw FormatError("variant mismatch: checkpoint holds " + to_string(model.config.variant) + ", expected " +
                        to_string(*expected_variant));
    }
    const auto count = read_u32(in);
    std::map<std::string, Tensor<T>> stored;
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = read_u32(in);
      if (len > 4096) throw FormatError("parameter name too long");
      std::string name(len, '\0');
      read_exact(in, name.data(), name.size());
      stored.emplace(std::move(name), read_tensor<T>(in));
    }
    for (auto& [name, shape] : parameter_layout(model.config)) {
      auto it = stored.find(name);
      if (it == stored.end()) throw FormatError("missing tensor '" + name + "'");
      if (it->second.shape() != shape) {
        throw FormatError("shape mismatch for '" + name + "': stored " + shape_string(it->second.shape()) +
                          ", expected " + shape_string(shape));
      }
      if (!it->second.all_finite()) throw FormatError("non-finite values in '" + name + "'");
      model.params.add(name, std::move(it->second));
      stored.erase(it);
    }
    if (!stored.empty()) throw FormatError("unexpected tensor '" + stored.begin()->first + "'");
    return model;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

#define CMOS_INSTANTIATE_MODEL(T)                                                                \
  template ModelParams<T> build_model(const ModelConfig&);                                       \
  template ModelParams<T> insert_nl_blocks(const ModelParams<T>&, Variant);                      \
  template struct BoundParams<T>;                                                                \
  template BoundParams<T> bind_params(Graph<T>&, const ModelParams<T>&, bool);                  \
  template Var<T> forward(const BoundParams<T>&, Var<T>);                                        \
  template Tensor<T> forward(const ModelParams<T>&, const Tensor<T>&);                           \
  template std::vector<Tensor<T>> collect_grads(const Graph<T>&, const BoundParams<T>&);         \
  template void save_checkpoint(const ModelParams<T>&, const std::filesystem::path&);            \
  template ModelParams<T> load_checkpoint(const std::filesystem::path&, std::optional<Variant>);

CMOS_INSTANTIATE_MODEL(float)
CMOS_INSTANTIATE_MODEL(double)

}  // namespace cmos
