// Acceptance gate: one PASS/FAIL line per criterion, exit status 0 only if all pass.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "cmos/layers.hpp"
#include "cmos/metrics.hpp"
#include "cmos/synth.hpp"
#include "cmos/train.hpp"
#include "cmos/verify.hpp"
#include "phantom.hpp"

using namespace cmos;
using namespace cmos::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [failed]");
  }
};

std::string num(double v, int digits = 4) {
  std::ostringstream out;
  out.precision(digits);
  out << v;
  return out.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_gradchecks(GradScope::all);
  const double elapsed = seconds_since(t0);
  double worst = 0;
  std::string worst_op;
  std::set<std::string> ops;
  for (const auto& e : entries) {
    ops.insert(e.op);
    if (e.result.max_rel_error > worst) {
      worst = e.result.max_rel_error;
      worst_op = e.op + " d/d" + e.argument;
    }
  }
  for (const char* needed : {"conv2d same", "dense", "softmax", "cross_entropy", "conv-ki N=5 N0=5",
                             "conv-ki N=8 N0=5", "nl-seg B=1", "nl-seg B=3", "nl-sub B=1", "nl-sub B=3",
                             "model baseline", "model sub-NL-1"}) {
    o.require(ops.count(needed) == 1, std::string("covers ") + needed);
  }
  o.require(worst <= 1e-4, "max rel error " + num(worst) + " (" + worst_op + ") <= 1e-4");
  o.require(elapsed < 300, "runtime " + num(elapsed, 3) + " s < 300 s");
  return o;
}

Outcome conv_ki_identity() {
  Outcome o;
  Rng rng(1);
  auto k0 = uniform_tensor<double>({1, 1, 20, 16}, -1, 1, rng);
  o.require(bitwise_equal(interpolate_kernel(k0, 20), k0), "interpolate_kernel(k0, N0) == k0 bitwise");
  const auto k5 = interpolate_kernel(Tensor<double>({1, 1, 3, 1}, {1, 3, 2}), 5);
  o.require(k5 == Tensor<double>({1, 1, 5, 1}, {1, 2, 3, 2.5, 2}), "[1,3,2] -> N=5 gives [1,2,3,2.5,2] exactly");
  return o;
}

Var<double> run_block(Graph<double>& g, const Tensor<double>& x, const NLBlockParams<double>& p) {
  return nl_block_forward(g.constant(x), bind(g, p, false));
}

Outcome nl_invariants() {
  Outcome o;
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> pd(1, 40), cd(1, 8);
  double worst_row = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t P = pd(rng), C = cd(rng), E = embedding_width(C);
    Graph<float> g;
    auto w = nl_attention(g.constant(normal_tensor<float>({P, C}, 0, 2, rng)),
                          g.constant(normal_tensor<float>({C, E}, 0, 1, rng)),
                          g.constant(normal_tensor<float>({C, E}, 0, 1, rng)))
                 .value();
    for (std::size_t i = 0; i < P; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < P; ++j) s += w[i * P + j];
      worst_row = std::max(worst_row, std::abs(s - 1));
    }
  }
  o.require(worst_row <= 1e-6, "attention row sums within " + num(worst_row) + " of 1 over 1000 cases");

  bool identity = true;
  for (NLScope scope : {NLScope::segment, NLScope::subject}) {
    auto p = init_nl_block<float>(64, scope, rng);
    auto x = normal_tensor<float>({16, 5, 4, 64}, 0, 3, rng);
    Graph<float> g;
    identity = identity && bitwise_equal(nl_block_forward(g.constant(x), bind(g, p, false)).value(), x);
  }
  o.require(identity, "zero-theta block is a bitwise identity");

  const std::size_t B = 16, H = 5, W = 4, C = 8;
  auto p = init_nl_block<double>(C, NLScope::subject, rng);
  p.theta_w = normal_tensor<double>(p.theta_w.shape(), 0, 1, rng);
  auto x = normal_tensor<double>({B, H, W, C}, 0, 1, rng);
  std::vector<std::size_t> perm(B);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t stride = H * W * C;
  Tensor<double> xp(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(x.data().begin() + static_cast<long>(perm[b] * stride), stride,
                xp.data().begin() + static_cast<long>(b * stride));
  }
  Graph<double> g;
  const auto z = run_block(g, x, p).value(), zp = run_block(g, xp, p).value();
  double worst_perm = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < stride; ++i) {
      worst_perm = std::max(worst_perm, std::abs(zp[b * stride + i] - z[perm[b] * stride + i]));
    }
  }
  o.require(worst_perm <= 1e-6, "subject scope permutation-equivariant (max dev " + num(worst_perm) + ")");

  auto seg = p;
  seg.scope = NLScope::segment;
  auto x1 = normal_tensor<double>({1, 5, 4, C}, 0, 1, rng);
  o.require(bitwise_equal(run_block(g, x1, seg).value(), run_block(g, x1, p).value()),
            "segment and subject scope agree exactly at B=1");
  return o;
}

Outcome finetune_start() {
  Outcome o;
  auto base = build_model<float>(ModelConfig{.seed = 4});
  Rng rng(5);
  int equal = 0, total = 0;
  for (int batch = 0; batch < 10; ++batch) {
    auto x = uniform_tensor<float>({16, 80, 60, batch % 2 ? 25u : 20u}, 0, 1, rng);
    const auto reference = forward(base, x);
    for (Variant v : {Variant::seg_nl_1, Variant::seg_nl_2, Variant::sub_nl_1, Variant::sub_nl_2}) {
      equal += bitwise_equal(forward(insert_nl_blocks(base, v), x), reference);
      ++total;
    }
  }
  o.require(equal == total, std::to_string(equal) + "/" + std::to_string(total) +
                                " (batch, variant) logits bitwise equal to baseline over 10 batches");
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  const double kappa = cohen_kappa(Confusion<2>{{{40, 10}, {5, 45}}});
  o.require(std::abs(kappa - 0.70) <= 1e-12, "kappa [[40,10],[5,45]] = " + num(kappa, 17));
  const double rho = pearson(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4});
  o.require(std::abs(rho - 0.8) <= 1e-12, "pearson = " + num(rho, 17));
  std::vector<int> scores(8, 0);
  scores.insert(scores.end(), 8, 2);
  o.require(msi(scores) == 1.0, "MSI of eight 0s and eight 2s == 1.0");
  Rng rng(6);
  std::uniform_int_distribution<int> cls(0, 3);
  std::vector<int> t(500), p(500);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = cls(rng);
    p[i] = i % 3 ? t[i] : cls(rng);
  }
  const auto c = confusion_matrix<4>(t, p);
  long trace = 0, total = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    trace += c[i][i];
    for (std::size_t j = 0; j < 4; ++j) total += c[i][j];
  }
  o.require(accuracy(c) == static_cast<double>(trace) / static_cast<double>(total), "acc == trace/total");
  return o;
}

Outcome preprocessing_geometry() {
  Outcome o;
  const Point c{117.3, 104.8};
  const auto img = render(230, 250, [&](double x, double y) { return annulus(std::hypot(x - c.x, y - c.y), 24, 36); });
  std::vector<RawSlice> slices;
  for (Level level : {Level::basal, Level::mid, Level::apical}) {
    slices.push_back(make_slice(img, 7, level, reference_landmarks(c, 215, 58, 51)));
  }
  const auto study = assemble_subject("phantom", slices, PreprocessOptions{.clahe = false});
  const double spread = column_spread(study.segments);
  o.require(spread <= 0.02 * (0.8 - 0.1), "annulus column spread " + num(spread / 0.7 * 100, 3) + "% of range <= 2%");
  bool shapes = study.segments.size() == 16;
  for (const auto& s : study.segments) shapes = shapes && s.data.shape() == Shape{80, 60, 7};
  o.require(shapes, "16 segments of 80x60x7");

  const Point rc{121.0, 113.0};
  const auto lm = reference_landmarks(rc, 200, 57, 52);
  auto scene = [&](double x, double y) {
    const double r = std::hypot(x - rc.x, y - rc.y);
    const Point b1 = polar_point(rc, 30, 150), b2 = polar_point(rc, 30, 300);
    return annulus(r, 22, 38, 1.5, 0.6, 0.1) + 0.3 * std::exp(-std::pow(std::hypot(x - b1.x, y - b1.y) / 5, 2)) +
           0.3 * std::exp(-std::pow(std::hypot(x - b2.x, y - b2.y) / 6, 2));
  };
  double worst = 0, lo = 1e9, hi = -1e9;
  for (double deg : {30.0, -75.0, 140.0}) {
    const double rot = deg * std::numbers::pi / 180.0;
    const Point origin{125.0, 118.0};
    auto rotate = [&](Point p) {
      const double dx = p.x - origin.x, dy = p.y - origin.y;
      return Point{origin.x + std::cos(rot) * dx - std::sin(rot) * dy, origin.y + std::sin(rot) * dx + std::cos(rot) * dy};
    };
    auto rotated_scene = [&](double x, double y) {
      const double dx = x - origin.x, dy = y - origin.y;
      return scene(origin.x + std::cos(rot) * dx + std::sin(rot) * dy, origin.y - std::sin(rot) * dx + std::cos(rot) * dy);
    };
    Landmarks lm_rot{rotate(lm.anterior_junction), rotate(lm.inferior_junction), rotate(lm.cavity_center)};
    auto a = preprocess_slice(make_slice(render(240, 250, scene), 2, Level::mid, lm), {.clahe = false});
    auto b = preprocess_slice(make_slice(render(240, 250, rotated_scene), 2, Level::mid, lm_rot), {.clahe = false});
    for (std::size_t k = 0; k < a.size(); ++k) {
      const auto [mn, mx] = std::minmax_element(a[k].data.data().begin(), a[k].data.data().end());
      lo = std::min(lo, static_cast<double>(*mn));
      hi = std::max(hi, static_cast<double>(*mx));
      worst = std::max(worst, max_abs_diff(a[k].data, b[k].data));
    }
  }
  o.require(worst <= 0.02 * (hi - lo), "joint rotation changes output by " + num(worst / (hi - lo) * 100, 3) +
                                           "% of range <= 2%");
  return o;
}

// Shared by criteria 7 and 8.
struct Learned {
  TrainResult result;
  double seconds = 0;
};

constexpr std::uint64_t kSeed = 2024;

const Learned& learned() {
  static const Learned l = [] {
    SynthConfig sc;
    sc.subjects = 60;
    sc.seed = kSeed;
    TrainConfig tc;
    tc.epochs = 20;
    tc.finetune_epochs = 10;
    tc.seed = kSeed;
    ModelConfig mc;
    mc.seed = kSeed;
    const auto t0 = std::chrono::steady_clock::now();
    Learned out;
    out.result = train(generate_dataset(sc), tc, Variant::sub_nl_1, mc);
    out.seconds = seconds_since(t0);
    return out;
  }();
  return l;
}

std::vector<SubjectStudy> test_subjects(std::optional<std::size_t> frames = std::nullopt) {
  SynthConfig sc;
  sc.subjects = 30;
  sc.first_subject = 60;
  sc.seed = kSeed;
  if (frames) sc.frame_mix = *frames == 20 ? std::array<double, 2>{1, 0} : std::array<double, 2>{0, 1};
  return generate_dataset(sc);
}

Outcome learnability() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto& l = learned();
  const auto test = test_subjects();
  const auto base = evaluate(l.result.baseline, test);
  const auto nl = evaluate(l.result.model, test);
  const double elapsed = seconds_since(t0);
  o.require(base.acc_ms >= 0.85, "baseline test acc " + num(base.acc_ms) + " >= 0.85");
  o.require(nl.acc_ms >= base.acc_ms - 0.01, "sub-NL-1 test acc " + num(nl.acc_ms) + " >= baseline - 0.01");
  o.require(nl.rho_msi && *nl.rho_msi >= 0.90, "sub-NL-1 rho_msi " + (nl.rho_msi ? num(*nl.rho_msi) : "nan") +
                                                    " >= 0.90");
  o.require(elapsed < 3600, "runtime " + num(elapsed / 60, 3) + " min < 60 min");
  return o;
}

Outcome variable_length() {
  Outcome o;
  const auto& model = learned().result.model;
  const double a20 = evaluate(model, test_subjects(20)).acc_ms;
  const double a25 = evaluate(model, test_subjects(25)).acc_ms;
  o.require(std::abs(a20 - a25) <= 0.03, "acc t=20 " + num(a20) + ", t=25 " + num(a25) + ", gap <= 0.03");
  return o;
}

Outcome determinism() {
  Outcome o;
  const auto dir = std::filesystem::temp_directory_path() / "cmos_acceptance";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  auto model = insert_nl_blocks(build_model<float>(ModelConfig{.seed = 7}), Variant::sub_nl_2);
  Rng rng(8);
  for (auto& p : model.params) p.value = normal_tensor<float>(p.value.shape(), 0, 0.1, rng);
  save_checkpoint(model, dir / "m.ckpt");
  const auto back = load_checkpoint<float>(dir / "m.ckpt");
  bool same = back.config == model.config && back.params.size() == model.params.size();
  for (std::size_t i = 0; same && i < model.params.size(); ++i) {
    same = back.params[i].name == model.params[i].name && bitwise_equal(back.params[i].value, model.params[i].value);
  }
  o.require(same, "checkpoint round trip bitwise");

  SynthConfig sc;
  sc.subjects = 6;
  sc.seed = 9;
  const auto data = generate_dataset(sc);
  TrainConfig tc;
  tc.epochs = 3;
  tc.finetune_epochs = 2;
  tc.seed = 10;
  ModelConfig mc;
  mc.conv_ki_filters = 4;
  mc.channels = {4, 8, 8, 8};
  mc.fc_width = 16;
  mc.seed = 10;
  std::vector<std::string> ids;
  for (const auto& s : data) ids.push_back(s.subject_id);
  const auto plan = make_folds(ids, 3, 10);
  std::string csv[2], kv[2];
  for (int run = 0; run < 2; ++run) {
    std::vector<ModelParams<float>> folds;
    for (std::size_t f = 0; f < 3; ++f) {
      std::vector<SubjectStudy> train_set;
      for (const auto& id : plan.train_ids(f)) {
        train_set.push_back(*std::find_if(data.begin(), data.end(), [&](const auto& s) { return s.subject_id == id; }));
      }
      const auto r = train(train_set, tc, Variant::sub_nl_1, mc);
      csv[run] += format_history_csv(r.history);
      folds.push_back(r.model);
    }
    kv[run] = format_report_kv(evaluate(folds, data, plan));
  }
  o.require(csv[0] == csv[1], "fixed-seed history CSVs identical");
  o.require(kv[0] == kv[1], "fixed-seed MetricsReports identical");
  std::filesystem::remove_all(dir);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"conv-KI identity", conv_ki_identity},
      {"NL invariants", nl_invariants},
      {"fine-tune start condition", finetune_start},
      {"metric oracles", metric_oracles},
      {"preprocessing geometry", preprocessing_geometry},
      {"synthetic end-to-end learnability", learnability},
      {"variable-length contract", variable_length},
      {"determinism and persistence", determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    all_pass = all_pass && o.pass;
    std::printf("criterion %d (%s): %s | %s\n", n, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
