#include "cmos/verify.hpp"

#include "cmos/model.hpp"
#include "cmos/random.hpp"

namespace cmos {
namespace {

// Contracts an output with fixed random weights so every coordinate carries a
// distinct sensitivity into the scalar.
Var<double> project(Graph<double>& g, Var<double> y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, g.constant(uniform_tensor<double>(y.shape(), -1, 1, rng))));
}

// Checks fn with respect to each of `args`; fn receives the argument index being
// differentiated and the Var standing in for it.
using IndexedFn = std::function<Var<double>(Graph<double>&, std::size_t, Var<double>)>;

void check_each(std::vector<GradCheckEntry>& out, const std::string& op, const std::vector<std::string>& names,
                const std::vector<Tensor<double>>& args, const IndexedFn& fn) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    auto r = grad_check([&](Graph<double>& g, Var<double> v) { return fn(g, i, v); }, args[i]);
    out.push_back({op, names[i], r});
  }
}

// Binds every argument as a constant except `active`, which is replaced by `v`.
std::vector<Var<double>> bind_args(Graph<double>& g, const std::vector<Tensor<double>>& args, std::size_t active,
                                   Var<double> v) {
  std::vector<Var<double>> vars;
  for (std::size_t i = 0; i < args.size(); ++i) vars.push_back(i == active ? v : g.constant(args[i]));
  return vars;
}

void core_suite(std::vector<GradCheckEntry>& out, std::uint64_t seed) {
  Rng rng(seed);
  const auto ps = derive_seed(seed, 99);
  for (Padding pad : {Padding::same, Padding::valid}) {
    std::vector<Tensor<double>> args{uniform_tensor<double>({2, 5, 4, 2}, -1, 1, rng),
                                     uniform_tensor<double>({3, 3, 2, 3}, -1, 1, rng)};
    check_each(out, pad == Padding::same ? "conv2d same" : "conv2d valid", {"input", "kernel"}, args,
               [&](Graph<double>& g, std::size_t i, Var<double> v) {
                 auto a = bind_args(g, args, i, v);
                 return project(g, conv2d(a[0], a[1], pad), ps);
               });
  }
  {
    std::vector<Tensor<double>> args{uniform_tensor<double>({3, 6}, -1, 1, rng),
                                     uniform_tensor<double>({6, 4}, -1, 1, rng),
                                     uniform_tensor<double>({4}, -1, 1, rng)};
    check_each(out, "dense", {"input", "weights", "bias"}, args, [&](Graph<double>& g, std::size_t i, Var<double> v) {
      auto a = bind_args(g, args, i, v);
      return project(g, dense(a[0], a[1], a[2]), ps);
    });
  }
  {
    auto x = uniform_tensor<double>({3, 4}, -2, 2, rng);
    out.push_back({"softmax", "input", grad_check([&](Graph<double>& g, Var<double> v) {
                     return project(g, softmax(v, -1), ps);
                   }, x)});
    const int labels[] = {0, 3, 2};
    out.push_back({"cross_entropy", "logits", grad_check([&](Graph<double>&, Var<double> v) {
                     return cross_entropy_loss(v, std::span<const int>(labels));
                   }, x)});
  }
}

void conv_ki_suite(std::vector<GradCheckEntry>& out, std::uint64_t seed) {
  Rng rng(seed);
  const auto ps = derive_seed(seed, 98);
  const std::size_t n0 = 5;
  for (std::size_t frames : {n0, std::size_t{8}, std::size_t{3}}) {
    std::vector<Tensor<double>> args{uniform_tensor<double>({2, 3, 2, frames}, -1, 1, rng),
                                     uniform_tensor<double>({1, 1, n0, 3}, -1, 1, rng)};
    check_each(out, "conv-ki N=" + std::to_string(frames) + " N0=" + std::to_string(n0), {"input", "k0"}, args,
               [&](Graph<double>& g, std::size_t i, Var<double> v) {
                 auto a = bind_args(g, args, i, v);
                 return project(g, conv_ki_forward(a[0], a[1]), ps);
               });
  }
}

void nl_suite(std::vector<GradCheckEntry>& out, NLScope scope, std::uint64_t seed) {
  Rng rng(seed);
  const auto ps = derive_seed(seed, 97);
  const std::size_t C = 4, E = embedding_width(C);
  for (std::size_t B : {std::size_t{1}, std::size_t{3}}) {
    // theta is randomized so the attention path carries gradient.
    std::vector<Tensor<double>> args{
        uniform_tensor<double>({B, 2, 3, C}, -1, 1, rng), uniform_tensor<double>({C, E}, -1, 1, rng),
        uniform_tensor<double>({C, E}, -1, 1, rng), uniform_tensor<double>({C, E}, -1, 1, rng),
        uniform_tensor<double>({E, C}, -1, 1, rng)};
    const std::string op = std::string(scope == NLScope::segment ? "nl-seg" : "nl-sub") + " B=" + std::to_string(B);
    check_each(out, op, {"input", "phi_w", "psi_w", "g_w", "theta_w"}, args,
               [&](Graph<double>& g, std::size_t i, Var<double> v) {
                 auto a = bind_args(g, args, i, v);
                 return project(g, nl_block_forward(a[0], NLBlockVars<double>{a[1], a[2], a[3], a[4], scope}), ps);
               });
  }
}

void model_suite(std::vector<GradCheckEntry>& out, std::uint64_t seed) {
  for (Variant variant : {Variant::baseline, Variant::seg_nl_2, Variant::sub_nl_1}) {
    ModelConfig cfg = tiny_model_config();
    cfg.variant = variant;
    cfg.seed = seed;
    auto model = build_model<double>(cfg);
    Rng rng(derive_seed(seed, 96));
    for (auto& p : model.params) {
      // Nonzero theta and biases so every parameter receives gradient; wide NL weights
      // keep attention away from uniform, where phi/psi gradients sink to roundoff.
      if (p.name.starts_with("nl")) {
        p.value = uniform_tensor<double>(p.value.shape(), -1.5, 1.5, rng);
      } else if (p.name.ends_with(".bias")) {
        p.value = uniform_tensor<double>(p.value.shape(), -0.5, 0.5, rng);
      }
    }
    const auto batch = uniform_tensor<double>({2, cfg.rows, cfg.cols, 4}, 0, 1, rng);
    const int labels[] = {1, 3};
    auto loss_with = [&](Graph<double>& g, std::size_t active, Var<double> v) {
      BoundParams<double> bound{&model, {}};
      for (std::size_t i = 0; i < model.params.size(); ++i) {
        bound.vars.push_back(i == active ? v : g.constant(model.params[i].value));
      }
      auto input = active == model.params.size() ? v : g.constant(batch);
      return cross_entropy_loss(forward(bound, input), std::span<const int>(labels));
    };
    const std::string op = "model " + to_string(variant);
    for (std::size_t i = 0; i <= model.params.size(); ++i) {
      const auto& point = i == model.params.size() ? batch : model.params[i].value;
      const std::string name = i == model.params.size() ? "input" : model.params[i].name;
      out.push_back({op, name, grad_check([&](Graph<double>& g, Var<double> v) { return loss_with(g, i, v); }, point)});
    }
  }
}

}  // namespace

GradScope parse_grad_scope(const std::string& name) {
  if (name == "all") return GradScope::all;
  if (name == "core") return GradScope::core;
  if (name == "conv-ki") return GradScope::conv_ki;
  if (name == "nl-seg") return GradScope::nl_seg;
  if (name == "nl-sub") return GradScope::nl_sub;
  if (name == "model") return GradScope::model;
  throw InvalidArgument("invalid gradcheck scope '" + name + "' (expected all, core, conv-ki, nl-seg, nl-sub or model)");
}

std::string to_string(GradScope scope) {
  switch (scope) {
    case GradScope::all: return "all";
    case GradScope::core: return "core";
    case GradScope::conv_ki: return "conv-ki";
    case GradScope::nl_seg: return "nl-seg";
    case GradScope::nl_sub: return "nl-sub";
    case GradScope::model: return "model";
  }
  return "?";
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.conv_ki_filters = 2;
  cfg.channels = {2, 2, 2, 2};
  cfg.fc_width = 8;
  cfg.native_frames = 3;
  // Block 3 leaves 2x2 positions so segment-scope attention is not trivially 1.
  cfg.rows = 16;
  cfg.cols = 12;
  return cfg;
}

std::vector<GradCheckEntry> run_gradchecks(GradScope scope, std::uint64_t seed, int points) {
  std::vector<GradCheckEntry> out;
  auto wants = [&](GradScope s) { return scope == GradScope::all || scope == s; };
  for (int p = 0; p < points; ++p) {
    const auto s = derive_seed(seed, 1000 + static_cast<std::uint64_t>(p));
    if (wants(GradScope::core)) core_suite(out, s);
    if (wants(GradScope::conv_ki)) conv_ki_suite(out, s);
    if (wants(GradScope::nl_seg)) nl_suite(out, NLScope::segment, s);
    if (wants(GradScope::nl_sub)) nl_suite(out, NLScope::subject, s);
    if (wants(GradScope::model)) model_suite(out, s);
  }
  return out;
}

}  // namespace cmos
