#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmos/metrics.hpp"
#include "cmos/model.hpp"
#include "cmos/optimizer.hpp"

namespace cmos {

/// Subject-level partition into k test folds. Fold i trains on every other fold.
struct FoldPlan {
  std::size_t k = 3;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> folds;

  std::vector<std::string> train_ids(std::size_t fold) const;
  const std::vector<std::string>& test_ids(std::size_t fold) const { return folds.at(fold); }
};

/// Seeded shuffle, then round-robin assignment.
FoldPlan make_folds(const std::vector<std::string>& subject_ids, std::size_t k = 3, std::uint64_t seed = 0);

/// Text form: one line per subject "subject_id fold".
std::string format_fold_plan(const FoldPlan& plan);
FoldPlan parse_fold_plan(const std::string& text);

struct TrainConfig {
  std::size_t epochs = 60;           // baseline phase
  std::size_t finetune_epochs = 30;  // NL phase
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t patience = 10;         // epochs without holdout-loss improvement; 0 disables
  double holdout_fraction = 0.15;    // of the training subjects, for early stopping

  void validate() const;
};

struct HistoryRow {
  std::size_t epoch = 0;
  std::string phase;  // "baseline" or "finetune"
  double loss = 0.0;  // mean training loss over the epoch's steps
  std::optional<double> holdout_acc;
};

std::string format_history_csv(const std::vector<HistoryRow>& history);

/// Called before each optimizer update with the step's logits [16,4].
using StepObserver = std::function<void(const std::string& phase, std::size_t epoch, std::size_t step,
                                        const SubjectStudy& subject, const Tensor<float>& logits)>;

struct TrainResult {
  ModelParams<float> model;     // final model of the requested variant
  ModelParams<float> baseline;  // baseline phase result (the fine-tune start point)
  std::vector<HistoryRow> history;
};

/// Phase 1 trains the baseline unless `from_baseline` is given; phase 2 (NL variants)
/// inserts zero-theta NL blocks and fine-tunes every parameter. One subject's 16
/// segments form each batch; subject order is reshuffled every epoch. Throws
/// NumericError naming the phase, epoch, step and subject on a non-finite loss.
TrainResult train(const std::vector<SubjectStudy>& subjects, const TrainConfig& config, Variant variant,
                  const ModelConfig& model_config, const std::optional<ModelParams<float>>& from_baseline = std::nullopt,
                  const StepObserver& observer = {});

/// Mean cross-entropy and segment accuracy of a model over labeled subjects.
struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};
Evaluation evaluate_loss(const ModelParams<float>& model, const std::vector<const SubjectStudy*>& subjects);

/// Scores every subject with the model of the fold that held it out. Throws
/// InvalidArgument when a subject is in no test fold or a fold has no model.
std::vector<SubjectResult> predict_folds(const std::vector<ModelParams<float>>& fold_models,
                                         const std::vector<SubjectStudy>& subjects, const FoldPlan& plan);

/// predict_folds followed by compute_metrics.
MetricsReport evaluate(const std::vector<ModelParams<float>>& fold_models, const std::vector<SubjectStudy>& subjects,
                       const FoldPlan& plan);

/// Single-model convenience: every subject is scored by `model` (fold 0).
MetricsReport evaluate(const ModelParams<float>& model, const std::vector<SubjectStudy>& subjects);

}  // namespace cmos
