#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>

#include "CLI11.hpp"
#include "cmos/io.hpp"
#include "cmos/parallel.hpp"
#include "cmos/preprocess.hpp"
#include "cmos/run_config.hpp"
#include "cmos/verify.hpp"

namespace fs = std::filesystem;
using namespace cmos;

namespace {

enum Exit : int { kOk = 0, kPartial = 1, kUsage = 2, kDiverged = 3, kGradFail = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const char* const kClassNames[] = {"normal", "hypokinetic", "akinetic", "dyskinetic"};

fs::path manifest_path(const fs::path& data) { return fs::is_directory(data) ? data / "manifest.txt" : data; }

std::vector<SubjectStudy> load_data(const fs::path& data) {
  const fs::path m = manifest_path(data);
  if (!fs::exists(m)) throw UsageError("manifest not found: " + m.string());
  return load_dataset(m);
}

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

std::string fixed(double v, int digits = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  std::optional<std::size_t> subjects;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (a.subjects) cfg.synth.subjects = *a.subjects;
  if (a.seed) cfg.set_seed(*a.seed);
  cfg.synth.validate();
  const auto data = generate_dataset(cfg.synth);
  write_dataset(a.out, data);
  std::array<std::size_t, 4> classes{};
  std::map<std::size_t, std::size_t> frames;
  for (const auto& s : data) {
    frames[s.frame_count()] += 1;
    for (int c : s.labels()) classes[static_cast<std::size_t>(c)] += 1;
  }
  std::cout << "wrote " << data.size() << " subjects (" << data.size() * kSegmentsPerSubject << " segments) to "
            << a.out << "\nclass histogram\n";
  for (std::size_t c = 0; c < 4; ++c) std::cout << "  " << c << " " << std::left << std::setw(12) << kClassNames[c]
                                                << std::right << classes[c] << '\n';
  std::cout << "frame counts\n";
  for (const auto& [t, n] : frames) std::cout << "  t=" << t << " subjects " << n << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string manifest_in, out;
  bool no_clahe = false;
};

int cmd_preprocess(const PreprocessArgs& a) {
  if (!fs::exists(a.manifest_in)) throw UsageError("raw manifest not found: " + a.manifest_in);
  const auto entries = read_raw_manifest(a.manifest_in);
  std::vector<std::string> order;
  std::map<std::string, std::vector<RawManifestEntry>> by_subject;
  for (const auto& e : entries) {
    if (!by_subject.count(e.subject_id)) order.push_back(e.subject_id);
    by_subject[e.subject_id].push_back(e);
  }
  PreprocessOptions options;
  options.clahe = !a.no_clahe;
  std::vector<std::optional<SubjectStudy>> out(order.size());
  std::vector<std::string> errors(order.size());
  parallel_for(order.size(), [&](std::size_t i) {
    try {
      std::vector<RawSlice> slices;
      for (const auto& e : by_subject.at(order[i])) slices.push_back(load_raw_slice(e));
      out[i] = assemble_subject(order[i], slices, options);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  std::vector<SubjectStudy> done;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (out[i]) {
      done.push_back(std::move(*out[i]));
    } else {
      ++failed;
      std::cerr << "subject " << order[i] << " skipped: " << errors[i] << '\n';
    }
  }
  write_dataset(a.out, done);
  std::cout << "preprocessed " << done.size() << " of " << order.size() << " subjects ("
            << done.size() * kSegmentsPerSubject << " segments) into " << a.out << '\n';
  return failed ? kPartial : kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, config, variant = "sub-NL-1", out, from_baseline;
  bool no_cv = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> folds;
};

std::vector<SubjectStudy> select(const std::vector<SubjectStudy>& all, const std::vector<std::string>& ids) {
  std::vector<SubjectStudy> out;
  for (const auto& id : ids) {
    auto it = std::find_if(all.begin(), all.end(), [&](const SubjectStudy& s) { return s.subject_id == id; });
    if (it == all.end()) throw UsageError("subject " + id + " is not in the dataset");
    out.push_back(*it);
  }
  return out;
}

std::optional<ModelParams<float>> baseline_for(const std::string& from, const std::string& file_name) {
  if (from.empty()) return std::nullopt;
  const fs::path p = fs::is_directory(from) ? fs::path(from) / file_name : fs::path(from);
  if (!fs::exists(p)) throw UsageError("baseline checkpoint not found: " + p.string());
  return load_checkpoint<float>(p, Variant::baseline);
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (a.seed) cfg.set_seed(*a.seed);
  if (a.folds) cfg.folds = *a.folds;
  cfg.validate();
  const Variant variant = parse_variant(a.variant);
  const auto data = load_data(a.data);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  write_file_atomic(out / "config.txt", format_run_config(cfg));

  std::mutex log_mutex;
  auto observer_for = [&](const std::string& tag) {
    return [&log_mutex, tag](const std::string& phase, std::size_t epoch, std::size_t step, const SubjectStudy&,
                             const Tensor<float>&) {
      if (step != 0) return;
      std::lock_guard lock(log_mutex);
      std::cerr << tag << phase << " epoch " << epoch << '\n';
    };
  };
  auto summary = [](const ModelParams<float>& model, const std::vector<SubjectStudy>& train_set) {
    std::vector<const SubjectStudy*> ptrs;
    for (const auto& s : train_set) ptrs.push_back(&s);
    const auto e = evaluate_loss(model, ptrs);
    return "final train loss " + fixed(e.loss) + ", train acc " + fixed(e.accuracy);
  };

  if (a.no_cv) {
    const auto base = baseline_for(a.from_baseline, "baseline.ckpt");
    const auto r = train(data, cfg.train, variant, cfg.model, base, observer_for(""));
    save_checkpoint(r.model, out / "model.ckpt");
    if (variant != Variant::baseline) save_checkpoint(r.baseline, out / "baseline.ckpt");
    write_file_atomic(out / "history.csv", format_history_csv(r.history));
    std::cout << summary(r.model, data) << '\n';
    return kOk;
  }

  std::vector<std::string> ids;
  for (const auto& s : data) ids.push_back(s.subject_id);
  if (ids.size() < cfg.folds) {
    throw UsageError("need at least " + std::to_string(cfg.folds) + " subjects for cross-validation, got " +
                     std::to_string(ids.size()));
  }
  const FoldPlan plan = make_folds(ids, cfg.folds, cfg.train.seed);
  write_file_atomic(out / "folds.txt", format_fold_plan(plan));
  std::vector<std::optional<ModelParams<float>>> starts(plan.k);
  for (std::size_t f = 0; f < plan.k; ++f) {
    starts[f] = baseline_for(a.from_baseline, "baseline_fold" + std::to_string(f) + ".ckpt");
  }
  std::vector<std::string> lines(plan.k);
  parallel_for(plan.k, [&](std::size_t f) {
    const std::string tag = "fold " + std::to_string(f) + ": ";
    const auto train_set = select(data, plan.train_ids(f));
    const auto r = train(train_set, cfg.train, variant, cfg.model, starts[f], observer_for(tag));
    const std::string suffix = "fold" + std::to_string(f);
    save_checkpoint(r.model, out / (suffix + ".ckpt"));
    if (variant != Variant::baseline) save_checkpoint(r.baseline, out / ("baseline_" + suffix + ".ckpt"));
    write_file_atomic(out / ("history_" + suffix + ".csv"), format_history_csv(r.history));
    lines[f] = tag + summary(r.model, train_set);
  });
  for (const auto& l : lines) std::cout << l << '\n';
  std::cout << "checkpoints written to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data, checkpoints, folds, out;
  bool per_fold = false;
};

int cmd_eval(const EvalArgs& a) {
  const auto data = load_data(a.data);
  std::vector<ModelParams<float>> models;
  FoldPlan plan;
  const fs::path ckpt(a.checkpoints);
  if (fs::is_directory(ckpt)) {
    const fs::path plan_path = a.folds.empty() ? ckpt / "folds.txt" : fs::path(a.folds);
    if (!fs::exists(plan_path)) throw UsageError("fold plan not found: " + plan_path.string());
    std::ifstream in(plan_path);
    std::ostringstream text;
    text << in.rdbuf();
    plan = parse_fold_plan(text.str());
    std::size_t found = 0;
    while (fs::exists(ckpt / ("fold" + std::to_string(found) + ".ckpt"))) ++found;
    if (found != plan.k) {
      throw UsageError("fold mismatch: plan has " + std::to_string(plan.k) + " folds but " + ckpt.string() +
                       " holds " + std::to_string(found) + " fold checkpoints");
    }
    for (std::size_t f = 0; f < plan.k; ++f) {
      models.push_back(load_checkpoint<float>(ckpt / ("fold" + std::to_string(f) + ".ckpt")));
    }
  } else {
    if (!fs::exists(ckpt)) throw UsageError("checkpoint not found: " + ckpt.string());
    if (!a.folds.empty()) throw UsageError("fold mismatch: --folds needs a directory of fold checkpoints");
    models.push_back(load_checkpoint<float>(ckpt));
    plan = FoldPlan{1, 0, {{}}};
    for (const auto& s : data) plan.folds[0].push_back(s.subject_id);
  }
  // Subjects outside the plan are not evaluated; plan subjects must all be present.
  std::vector<std::string> wanted;
  for (const auto& f : plan.folds) wanted.insert(wanted.end(), f.begin(), f.end());
  const auto subjects = select(data, wanted);
  const auto report = evaluate(models, subjects, plan);
  const auto table = format_report_table(report, a.per_fold);
  const auto kv = format_report_kv(report);
  std::cout << table << '\n' << kv;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_file_atomic(fs::path(a.out) / "report.txt", table);
    write_file_atomic(fs::path(a.out) / "report.kv", kv);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(const std::string& scope_name) {
  const GradScope scope = parse_grad_scope(scope_name);
  constexpr double kTolerance = 1e-4;
  // Worst point per (op, argument), in first-seen order.
  std::vector<GradCheckEntry> rows;
  for (auto& e : run_gradchecks(scope)) {
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const GradCheckEntry& r) { return r.op == e.op && r.argument == e.argument; });
    if (it == rows.end()) {
      rows.push_back(std::move(e));
    } else {
      const std::size_t kinks = it->result.kinks + e.result.kinks;
      if (e.result.max_rel_error > it->result.max_rel_error) it->result = e.result;
      it->result.kinks = kinks;
    }
  }
  std::cout << std::left << std::setw(28) << "op" << std::setw(14) << "argument" << std::setw(14)
            << "max rel err" << std::setw(8) << "kinks" << "status\n";
  const GradCheckEntry* worst = nullptr;
  for (const auto& e : rows) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << e.result.max_rel_error;
    std::cout << std::setw(28) << e.op << std::setw(14) << e.argument << std::setw(14) << err.str() << std::setw(8)
              << e.result.kinks << (e.result.max_rel_error <= kTolerance ? "PASS" : "FAIL") << '\n';
    if (!worst || e.result.max_rel_error > worst->result.max_rel_error) worst = &e;
  }
  std::cout << std::right;
  const double max_err = worst ? worst->result.max_rel_error : 0.0;
  std::cout << "scope " << to_string(scope) << ": max relative error " << std::scientific << std::setprecision(3)
            << max_err << std::defaultfloat << '\n';
  if (max_err > kTolerance) {
    std::cerr << "gradient check failed: " << worst->op << " d/d" << worst->argument << " at flat coordinate "
              << worst->result.worst_index << " (analytic " << worst->result.analytic << ", numeric "
              << worst->result.numeric << ")\n";
    return kGradFail;
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::vector<std::string> tensors;
};

Level level_of(int index) { return index <= 6 ? Level::basal : index <= 12 ? Level::mid : Level::apical; }

int cmd_predict(const PredictArgs& a) {
  std::vector<fs::path> paths;
  for (const auto& t : a.tensors) {
    if (fs::is_directory(t)) {
      std::vector<fs::path> inside;
      for (const auto& e : fs::directory_iterator(t)) {
        if (e.is_regular_file()) inside.push_back(e.path());
      }
      std::sort(inside.begin(), inside.end());
      paths.insert(paths.end(), inside.begin(), inside.end());
    } else {
      paths.emplace_back(t);
    }
  }
  if (paths.size() != kSegmentsPerSubject) {
    throw UsageError("expected 16 segment tensors, got " + std::to_string(paths.size()));
  }
  if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint not found: " + a.checkpoint);
  SubjectStudy study;
  study.subject_id = "input";
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (!fs::exists(paths[i])) throw UsageError("segment tensor not found: " + paths[i].string());
    SegmentSequence seg;
    seg.data = load_tensor<float>(paths[i]);
    seg.subject_id = study.subject_id;
    seg.segment_index = static_cast<int>(i) + 1;
    seg.level = level_of(seg.segment_index);
    study.segments.push_back(std::move(seg));
  }
  validate_study(study);
  const auto model = load_checkpoint<float>(a.checkpoint);
  const auto pred = predict_scores(model, study);
  for (std::size_t i = 0; i < kSegmentsPerSubject; ++i) {
    std::cout << "segment " << std::setw(2) << i + 1 << " score " << pred.scores[i] << " p";
    for (double p : pred.probabilities[i]) std::cout << ' ' << fixed(p);
    std::cout << '\n';
  }
  std::cout << "MSI " << fixed(msi(pred.scores)) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmental wall-motion scoring from short-axis cine sequences"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic polar dataset");
  synth->add_option("--config", synth_args.config, "key=value run config");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--subjects", synth_args.subjects, "override synth.subjects");
  synth->add_option("--seed", synth_args.seed, "override seed");

  PreprocessArgs pre_args;
  auto* pre = app.add_subcommand("preprocess", "align, normalize and polar-resample raw cine slices");
  pre->add_option("--manifest-in", pre_args.manifest_in, "raw slice manifest")->required();
  pre->add_option("--out", pre_args.out, "output dataset directory")->required();
  pre->add_flag("--no-clahe", pre_args.no_clahe, "skip contrast equalization");

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "train a model, by default with k-fold cross-validation");
  tr->add_option("--data", train_args.data, "dataset directory or manifest")->required();
  tr->add_option("--config", train_args.config, "key=value run config");
  tr->add_option("--variant", train_args.variant, "baseline, seg-NL-1, seg-NL-2, sub-NL-1 or sub-NL-2")
      ->capture_default_str();
  tr->add_option("--out", train_args.out, "output directory")->required();
  tr->add_option("--from-baseline", train_args.from_baseline,
                 "baseline checkpoint (--no-cv) or directory of baseline_fold<i>.ckpt files");
  tr->add_flag("--no-cv", train_args.no_cv, "train one model on every subject");
  tr->add_option("--seed", train_args.seed, "override seed");
  tr->add_option("--folds", train_args.folds, "override fold count");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "score held-out subjects and report metrics");
  ev->add_option("--data", eval_args.data, "dataset directory or manifest")->required();
  ev->add_option("--checkpoints", eval_args.checkpoints, "train output directory or one checkpoint")->required();
  ev->add_option("--folds", eval_args.folds, "fold plan (default <checkpoints>/folds.txt)");
  ev->add_flag("--per-fold", eval_args.per_fold, "append the per-fold breakdown");
  ev->add_option("--out", eval_args.out, "directory for report.txt and report.kv");

  std::string scope = "all";
  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gc->add_option("--scope", scope, "all, core, conv-ki, nl-seg, nl-sub or model")->capture_default_str();

  PredictArgs predict_args;
  auto* pr = app.add_subcommand("predict", "score the 16 segments of one subject");
  pr->add_option("--checkpoint", predict_args.checkpoint, "model checkpoint")->required();
  pr->add_option("--subject-tensors", predict_args.tensors, "16 CMOT1 files in AHA order, or a directory")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_args);
    if (*pre) return cmd_preprocess(pre_args);
    if (*tr) return cmd_train(train_args);
    if (*ev) return cmd_eval(eval_args);
    if (*gc) return cmd_gradcheck(scope);
    if (*pr) return cmd_predict(predict_args);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
