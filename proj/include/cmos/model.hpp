#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmos/dataset.hpp"
#include "cmos/layers.hpp"
#include "cmos/params.hpp"

namespace cmos {

/// Placement of non-local blocks. NL-1: one block after conv block 4. NL-2: blocks
/// after conv blocks 3 and 4. seg-* attend within a segment, sub-* across the batch.
enum class Variant { baseline, seg_nl_1, seg_nl_2, sub_nl_1, sub_nl_2 };

Variant parse_variant(const std::string& name);
std::string to_string(Variant variant);

/// Conv block indices (1-based) followed by an NL block for this variant.
std::vector<int> nl_block_positions(Variant variant);
std::optional<NLScope> nl_scope(Variant variant);

struct ModelConfig {
  Variant variant = Variant::baseline;
  std::size_t conv_ki_filters = 16;                    // n_o
  std::array<std::size_t, 4> channels{16, 32, 64, 64};
  std::size_t fc_width = 128;
  std::size_t native_frames = 20;                      // N0
  std::size_t classes = 4;
  std::size_t rows = kRadialSamples;
  std::size_t cols = kAngularSamples;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Throws InvalidArgument for configurations the network cannot realize.
void validate(const ModelConfig& config);

/// Spatial extent after the four 2x2 ceil-mode pools, e.g. 80x60 -> 5x4.
std::array<std::size_t, 2> pooled_extent(const ModelConfig& config);

/// Canonical parameter names and shapes for a configuration, in storage order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

template <Real T>
struct ModelParams {
  ModelConfig config;
  ParamStore<T> params;
};

/// He-uniform conv/fc weights, zero biases, zero-theta NL blocks; deterministic in seed.
/// NL variants are built as a baseline followed by insert_nl_blocks.
template <Real T>
ModelParams<T> build_model(const ModelConfig& config);

/// Copies every baseline tensor and adds NL blocks with theta = 0, so the result
/// reproduces the baseline's logits exactly.
template <Real T>
ModelParams<T> insert_nl_blocks(const ModelParams<T>& baseline, Variant variant);

/// Parameters bound to leaves of one graph, aligned with the ParamStore order.
template <Real T>
struct BoundParams {
  const ModelParams<T>* model = nullptr;
  std::vector<Var<T>> vars;

  Var<T> get(const std::string& name) const;
};

template <Real T>
BoundParams<T> bind_params(Graph<T>& g, const ModelParams<T>& model, bool requires_grad);

/// batch [B, rows, cols, t] -> raw logits [B, classes].
template <Real T>
Var<T> forward(const BoundParams<T>& params, Var<T> batch);

/// Inference convenience: builds a throwaway graph.
template <Real T>
Tensor<T> forward(const ModelParams<T>& model, const Tensor<T>& batch);

/// Gradients of every parameter after Graph::backward, in ParamStore order.
template <Real T>
std::vector<Tensor<T>> collect_grads(const Graph<T>& g, const BoundParams<T>& params);

struct SubjectPrediction {
  std::array<int, kSegmentsPerSubject> scores{};
  std::vector<std::array<double, kNumClasses>> probabilities;  // one row per segment
};

/// Scores the subject's 16 segments as one batch.
SubjectPrediction predict_scores(const ModelParams<float>& model, const SubjectStudy& study);

/// Checkpoint container: "CMOSCKPT" magic, u32 version, u32-length key=value config
/// header, u32 tensor count, then (u32 name length, name, CMOT1 record) per tensor.
template <Real T>
void save_checkpoint(const ModelParams<T>& model, const std::filesystem::path& path);

/// Throws FormatError with distinct messages for bad magic, unsupported version,
/// unexpected end, variant mismatch, missing tensor and shape mismatch.
template <Real T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path,
                               std::optional<Variant> expected_variant = std::nullopt);

/// key=value text used in checkpoint headers.
std::string format_model_config(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& text);

}  // namespace cmos
