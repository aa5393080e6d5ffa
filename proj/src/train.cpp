#include "cmos/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "cmos/parallel.hpp"
#include "cmos/random.hpp"

namespace cmos {
namespace {

struct PhaseOutcome {
  ModelParams<float> model;
};

class Trainer {
 public:
  Trainer(const std::vector<SubjectStudy>& subjects, const TrainConfig& config, const StepObserver& observer)
      : config_(config), observer_(observer) {
    std::vector<std::size_t> order(subjects.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t n_hold = 0;
    if (config.patience > 0 && config.holdout_fraction > 0 && subjects.size() >= 4) {
      n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.holdout_fraction *
                                                                             static_cast<double>(subjects.size()))));
      Rng rng(derive_seed(config.seed, 10));
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i < n_hold ? holdout_ : train_).push_back(&subjects[order[i]]);
    }
    // Keep the training set in input order so shuffles depend only on the seed.
    std::sort(train_.begin(), train_.end());
  }

  void run_phase(ModelParams<float>& model, std::size_t epochs, const std::string& phase, std::uint64_t tag,
                 std::vector<HistoryRow>& history) {
    OptimizerState<float> state;
    Rng rng(derive_seed(config_.seed, tag));
    std::vector<const SubjectStudy*> order = train_;
    double best_loss = std::numeric_limits<double>::infinity();
    ModelParams<float> best = model;
    std::size_t stale = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double total = 0;
      for (std::size_t step = 0; step < order.size(); ++step) {
        const SubjectStudy& subject = *order[step];
        const auto labels = subject.labels();
        Graph<float> g;
        auto bound = bind_params(g, model, true);
        auto logits = forward(bound, g.constant(subject.batch()));
        auto loss = cross_entropy_loss(logits, std::span<const int>(labels));
        const double value = loss.value()[0];
        const std::string where = phase + " phase, epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(step) + " (subject " + subject.subject_id + ")";
        if (!std::isfinite(value)) throw NumericError("non-finite training loss in " + where);
        if (observer_) observer_(phase, epoch, step, subject, logits.value());
        g.backward(loss);
        try {
          optimizer_step(model.params, collect_grads(g, bound), state, config_.optimizer);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " in " + where);
        }
        total += value;
      }
      HistoryRow row{epoch, phase, total / static_cast<double>(order.size()), std::nullopt};
      bool stop = false;
      if (!holdout_.empty()) {
        const Evaluation e = evaluate_loss(model, holdout_);
        row.holdout_acc = e.accuracy;
        if (e.loss < best_loss) {
          best_loss = e.loss;
          best = model;
          stale = 0;
        } else if (++stale >= config_.patience) {
          stop = true;
        }
      }
      history.push_back(row);
      if (stop) break;
    }
    if (!holdout_.empty() && std::isfinite(best_loss)) model = std::move(best);
  }

 private:
  const TrainConfig& config_;
  const StepObserver& observer_;
  std::vector<const SubjectStudy*> train_;
  std::vector<const SubjectStudy*> holdout_;
};

}  // namespace

std::vector<std::string> FoldPlan::train_ids(std::size_t fold) const {
  if (fold >= folds.size()) throw InvalidArgument("fold index out of range");
  std::vector<std::string> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  return out;
}

FoldPlan make_folds(const std::vector<std::string>& subject_ids, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw InvalidArgument("fold count must be positive");
  if (subject_ids.size() < k) {
    throw InvalidArgument("need at least " + std::to_string(k) + " subjects for " + std::to_string(k) +
                          " folds, got " + std::to_string(subject_ids.size()));
  }
  std::vector<std::string> ids = subject_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw InvalidArgument("duplicate subject id");
  ids = subject_ids;
  Rng rng(derive_seed(seed, 3));
  std::shuffle(ids.begin(), ids.end(), rng);
  FoldPlan plan{k, seed, std::vector<std::vector<std::string>>(k)};
  for (std::size_t i = 0; i < ids.size(); ++i) plan.folds[i % k].push_back(ids[i]);
  return plan;
}

std::string format_fold_plan(const FoldPlan& plan) {
  std::ostringstream out;
  out << "# k=" << plan.k << " seed=" << plan.seed << '\n';
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    for (const auto& id : plan.folds[f]) out << id << ' ' << f << '\n';
  }
  return out.str();
}

FoldPlan parse_fold_plan(const std::string& text) {
  FoldPlan plan;
  plan.k = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t declared_k = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string kv;
      while (hs >> kv) {
        if (kv.rfind("k=", 0) == 0) declared_k = std::stoul(kv.substr(2));
        if (kv.rfind("seed=", 0) == 0) plan.seed = std::stoull(kv.substr(5));
      }
      continue;
    }
    std::istringstream ls(line);
    std::string id;
    long fold = -1;
    if (!(ls >> id >> fold) || fold < 0) throw FormatError("malformed fold plan line '" + line + "'");
    if (static_cast<std::size_t>(fold) >= plan.folds.size()) plan.folds.resize(static_cast<std::size_t>(fold) + 1);
    plan.folds[static_cast<std::size_t>(fold)].push_back(id);
  }
  if (declared_k > plan.folds.size()) plan.folds.resize(declared_k);
  plan.k = plan.folds.size();
  if (plan.k == 0) throw FormatError("empty fold plan");
  return plan;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw InvalidArgument("epochs must be positive");
  if (!(optimizer.learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  if (holdout_fraction < 0 || holdout_fraction >= 1) throw InvalidArgument("holdout fraction must be in [0,1)");
}

std::string format_history_csv(const std::vector<HistoryRow>& history) {
  std::ostringstream out;
  out << "epoch,phase,loss,holdout_acc\n" << std::setprecision(9);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.phase << ',' << r.loss << ',';
    if (r.holdout_acc) {
      out << *r.holdout_acc;
    } else {
      out << "nan";
    }
    out << '\n';
  }
  return out.str();
}

TrainResult train(const std::vector<SubjectStudy>& subjects, const TrainConfig& config, Variant variant,
                  const ModelConfig& model_config, const std::optional<ModelParams<float>>& from_baseline,
                  const StepObserver& observer) {
  config.validate();
  if (subjects.empty()) throw InvalidArgument("train: no subjects");
  for (const auto& s : subjects) {
    validate_study(s);
    if (!s.labeled()) throw InvalidArgument("train: subject " + s.subject_id + " is not fully labeled");
  }
  Trainer trainer(subjects, config, observer);
  TrainResult result;
  if (from_baseline) {
    if (from_baseline->config.variant != Variant::baseline) {
      throw InvalidArgument("fine-tuning must start from a baseline model, got " +
                            to_string(from_baseline->config.variant));
    }
    result.baseline = *from_baseline;
  } else {
    ModelConfig base_config = model_config;
    base_config.variant = Variant::baseline;
    result.baseline = build_model<float>(base_config);
    trainer.run_phase(result.baseline, config.epochs, "baseline", 20, result.history);
  }
  if (variant == Variant::baseline) {
    result.model = result.baseline;
    return result;
  }
  result.model = insert_nl_blocks(result.baseline, variant);
  trainer.run_phase(result.model, config.finetune_epochs, "finetune", 21, result.history);
  return result;
}

Evaluation evaluate_loss(const ModelParams<float>& model, const std::vector<const SubjectStudy*>& subjects) {
  if (subjects.empty()) throw InvalidArgument("evaluate_loss: no subjects");
  std::vector<double> losses(subjects.size());
  std::vector<std::size_t> correct(subjects.size());
  parallel_for(subjects.size(), [&](std::size_t i) {
    const auto labels = subjects[i]->labels();
    Graph<float> g;
    auto logits = forward(bind_params(g, model, false), g.constant(subjects[i]->batch()));
    losses[i] = cross_entropy_loss(logits, std::span<const int>(labels)).value()[0];
    const auto& l = logits.value();
    for (std::size_t s = 0; s < kSegmentsPerSubject; ++s) {
      const float* row = l.data().data() + s * kNumClasses;
      const auto best = static_cast<int>(std::max_element(row, row + kNumClasses) - row);
      correct[i] += best == labels[s];
    }
  });
  Evaluation e;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    e.loss += losses[i];
    e.accuracy += static_cast<double>(correct[i]);
  }
  e.loss /= static_cast<double>(subjects.size());
  e.accuracy /= static_cast<double>(subjects.size() * kSegmentsPerSubject);
  return e;
}

std::vector<SubjectResult> predict_folds(const std::vector<ModelParams<float>>& fold_models,
                                         const std::vector<SubjectStudy>& subjects, const FoldPlan& plan) {
  if (fold_models.size() != plan.folds.size()) {
    throw InvalidArgument("fold mismatch: " + std::to_string(fold_models.size()) + " models for " +
                          std::to_string(plan.folds.size()) + " folds");
  }
  std::map<std::string, int> fold_of;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    for (const auto& id : plan.folds[f]) {
      if (!fold_of.emplace(id, static_cast<int>(f)).second) {
        throw InvalidArgument("subject " + id + " appears in more than one test fold");
      }
    }
  }
  for (const auto& s : subjects) {
    if (!fold_of.count(s.subject_id)) throw InvalidArgument("subject " + s.subject_id + " is in no test fold");
    if (!s.labeled()) throw InvalidArgument("subject " + s.subject_id + " is not fully labeled");
  }
  std::vector<SubjectResult> results(subjects.size());
  parallel_for(subjects.size(), [&](std::size_t i) {
    const auto& s = subjects[i];
    const int fold = fold_of.at(s.subject_id);
    const auto pred = predict_scores(fold_models[static_cast<std::size_t>(fold)], s);
    results[i] = SubjectResult{s.subject_id, fold, s.labels(), pred.scores};
  });
  return results;
}

MetricsReport evaluate(const std::vector<ModelParams<float>>& fold_models, const std::vector<SubjectStudy>& subjects,
                       const FoldPlan& plan) {
  return compute_metrics(predict_folds(fold_models, subjects, plan));
}

MetricsReport evaluate(const ModelParams<float>& model, const std::vector<SubjectStudy>& subjects) {
  FoldPlan plan{1, 0, {{}}};
  for (const auto& s : subjects) plan.folds[0].push_back(s.subject_id);
  return evaluate(std::vector<ModelParams<float>>{model}, subjects, plan);
}

}  // namespace cmos
