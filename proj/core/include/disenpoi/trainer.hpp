#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "disenpoi/graphs.hpp"
#include "disenpoi/ingest.hpp"
#include "disenpoi/model.hpp"

namespace disenpoi {

enum class CurriculumMode { Curriculum, Fixed, Random };

CurriculumMode parse_curriculum_mode(std::string_view name);
std::string_view to_string(CurriculumMode mode);

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 256;
  std::size_t epochs = 30;
  double alpha = 0.2;
  double gamma = 0.004;
  std::size_t dim = 64;
  std::size_t geo_layers = 2;
  std::size_t ggnn_steps = 2;
  std::size_t mlp_hidden = 0;  // 0 -> 2 * dim
  double delta_d = 1.0;
  std::size_t max_seq_len = kDefaultMaxSeqLen;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  CurriculumMode curriculum_mode = CurriculumMode::Curriculum;
  bool disable_geo_graph = false;
  bool disable_seq_graph = false;
  double train_fraction = 1.0;

  /// Throws InvalidConfig on out-of-domain values.
  void validate() const;
  ModelConfig model_config(std::size_t num_pois) const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);

struct CurriculumSchedule {
  double alpha = 0.2;
  double gamma = 0.004;

  /// max(alpha, gamma * k) for the 0-based epoch index k.
  double beta(std::size_t k) const;
};

/// Contrastive weight for epoch k under the configured mode. Random draws
/// Uniform(0, 2 alpha) from a generator keyed by (seed, k).
double epoch_beta(const TrainConfig& config, std::size_t k);

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ParameterSet& params);
};

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over all parameters in manifest order;
/// gradients are zeroed afterwards.
void adam_step(ParameterSet& params, AdamState& state, const AdamOptions& options);

struct EpochStats {
  std::size_t epoch = 0;
  double beta = 0.0;
  double rec_loss = 0.0;  // sample-weighted mean over the epoch
  double con_loss = 0.0;
  std::size_t batches = 0;
};

/// Truncates contexts to the most recent `max_seq_len` POIs.
std::vector<Sample> cap_contexts(std::vector<Sample> samples, std::size_t max_seq_len);

/// One pass over `train` in an order shuffled by (config.seed, k): forward
/// per batch, one backward, one Adam step.
EpochStats train_epoch(Model& model, AdamState& adam, const std::vector<Sample>& train,
                       const GeoGraph& graph, const TrainConfig& config, std::size_t k,
                       double beta);

struct EpochLog {
  EpochStats stats;
  std::optional<double> val_auc;  // empty when validation labels are degenerate
  double val_logloss = 0.0;
  double best_val_auc = 0.0;
  bool improved = false;
};

nlohmann::json to_json(const EpochLog& log);

struct FitResult {
  Model model;  // parameters of the best validation epoch (initial when none)
  std::vector<EpochLog> log;
  std::optional<std::size_t> best_epoch;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Initializes a model from config.seed and trains for config.epochs with
/// the curriculum weight, keeping the parameters of the best validation AUC.
FitResult fit(const TrainConfig& config, const DatasetSplit& split, const GeoGraph& graph,
              const EpochCallback& on_epoch = {});

}  // namespace disenpoi
