#include "disenpoi/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "disenpoi/error.hpp"
#include "disenpoi/evaluator.hpp"
#include "disenpoi/random.hpp"

namespace disenpoi {

using nlohmann::json;

CurriculumMode parse_curriculum_mode(std::string_view name) {
  if (name == "curriculum") return CurriculumMode::Curriculum;
  if (name == "fixed") return CurriculumMode::Fixed;
  if (name == "random") return CurriculumMode::Random;
  throw Error(ErrorCode::InvalidConfig, "unknown curriculum_mode '" + std::string(name) + "'");
}

std::string_view to_string(CurriculumMode mode) {
  switch (mode) {
    case CurriculumMode::Curriculum: return "curriculum";
    case CurriculumMode::Fixed: return "fixed";
    case CurriculumMode::Random: return "random";
  }
  return "curriculum";
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be >= 0");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(alpha >= 0.0) || !(gamma >= 0.0)) fail("alpha and gamma must be >= 0");
  if (dim == 0) fail("dim must be positive");
  if (ggnn_steps == 0) fail("ggnn_steps must be positive");
  if (!(delta_d > 0.0)) fail("delta_d must be positive");
  if (max_seq_len == 0) fail("max_seq_len must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam eps must be positive");
}

ModelConfig TrainConfig::model_config(std::size_t num_pois) const {
  ModelConfig m;
  m.num_pois = num_pois;
  m.dim = dim;
  m.geo_layers = geo_layers;
  m.ggnn_steps = ggnn_steps;
  m.mlp_hidden = mlp_hidden;
  m.delta_d = delta_d;
  m.disable_geo_graph = disable_geo_graph;
  m.disable_seq_graph = disable_seq_graph;
  return m;
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") c.lr = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "alpha") c.alpha = value.get<double>();
      else if (key == "gamma") c.gamma = value.get<double>();
      else if (key == "D" || key == "dim") c.dim = value.get<std::size_t>();
      else if (key == "L" || key == "geo_layers") c.geo_layers = value.get<std::size_t>();
      else if (key == "T" || key == "ggnn_steps") c.ggnn_steps = value.get<std::size_t>();
      else if (key == "H" || key == "mlp_hidden") c.mlp_hidden = value.get<std::size_t>();
      else if (key == "delta_d") c.delta_d = value.get<double>();
      else if (key == "max_seq_len") c.max_seq_len = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "adam") {
        c.adam_beta1 = value.value("beta1", c.adam_beta1);
        c.adam_beta2 = value.value("beta2", c.adam_beta2);
        c.adam_eps = value.value("eps", c.adam_eps);
      }
      else if (key == "curriculum_mode") c.curriculum_mode = parse_curriculum_mode(value.get<std::string>());
      else if (key == "disable_geo_graph") c.disable_geo_graph = value.get<bool>();
      else if (key == "disable_seq_graph") c.disable_seq_graph = value.get<bool>();
      else if (key == "train_fraction") c.train_fraction = value.get<double>();
      else throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"alpha", c.alpha},
              {"gamma", c.gamma},
              {"D", c.dim},
              {"L", c.geo_layers},
              {"T", c.ggnn_steps},
              {"H", c.mlp_hidden == 0 ? 2 * c.dim : c.mlp_hidden},
              {"delta_d", c.delta_d},
              {"max_seq_len", c.max_seq_len},
              {"seed", c.seed},
              {"adam", {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}}},
              {"curriculum_mode", std::string(to_string(c.curriculum_mode))},
              {"disable_geo_graph", c.disable_geo_graph},
              {"disable_seq_graph", c.disable_seq_graph},
              {"train_fraction", c.train_fraction}};
}

double CurriculumSchedule::beta(std::size_t k) const {
  return std::max(alpha, gamma * static_cast<double>(k));
}

double epoch_beta(const TrainConfig& config, std::size_t k) {
  switch (config.curriculum_mode) {
    case CurriculumMode::Curriculum:
      return CurriculumSchedule{config.alpha, config.gamma}.beta(k);
    case CurriculumMode::Fixed:
      return config.alpha;
    case CurriculumMode::Random: {
      Rng rng = keyed_rng({config.seed, k, 0xBE7A});
      return uniform_real(rng, 0.0, 2.0 * config.alpha);
    }
  }
  return config.alpha;
}

AdamState AdamState::for_params(const ParameterSet& params) {
  AdamState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.first_moment.emplace_back(params[i].value.rows(), params[i].value.cols());
    s.second_moment.emplace_back(params[i].value.rows(), params[i].value.cols());
  }
  return s;
}

void adam_step(ParameterSet& params, AdamState& state, const AdamOptions& options) {
  if (state.first_moment.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "Adam state does not match the parameter set");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(options.beta1, t);
  const double bc2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (!m.same_shape(p.value) || !v.same_shape(p.value) || !p.grad.same_shape(p.value)) {
      throw Error(ErrorCode::ShapeMismatch, "Adam moment shape differs for " + p.name);
    }
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = options.beta1 * m[k] + (1.0 - options.beta1) * g;
      v[k] = options.beta2 * v[k] + (1.0 - options.beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p.value[k] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
    p.grad.fill(0.0);
  }
}

std::vector<Sample> cap_contexts(std::vector<Sample> samples, std::size_t max_seq_len) {
  for (auto& s : samples) {
    if (s.context.size() > max_seq_len) {
      s.context.erase(s.context.begin(),
                      s.context.end() - static_cast<std::ptrdiff_t>(max_seq_len));
    }
  }
  return samples;
}

EpochStats train_epoch(Model& model, AdamState& adam, const std::vector<Sample>& train,
                       const GeoGraph& graph, const TrainConfig& config, std::size_t k,
                       double beta) {
  EpochStats stats;
  stats.epoch = k;
  stats.beta = beta;
  if (train.empty()) return stats;

  std::vector<std::uint32_t> order(train.size());
  std::iota(order.begin(), order.end(), 0u);
  Rng rng = keyed_rng({config.seed, k});
  shuffle(std::span<std::uint32_t>(order), rng);

  const AdamOptions opt{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps};
  model.params().zero_grad();
  double rec_sum = 0.0, con_sum = 0.0;
  std::vector<const Sample*> batch;
  for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
    const std::size_t end = std::min(order.size(), begin + config.batch_size);
    batch.clear();
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&train[order[i]]);
    Tape tape(true, true);
    ForwardOutput out = forward(tape, model, graph, batch, beta);
    tape.backward(out.loss);
    adam_step(model.params(), adam, opt);
    const double n = static_cast<double>(batch.size());
    rec_sum += out.rec_loss.value()[0] * n;
    con_sum += out.con_loss.value()[0] * n;
    ++stats.batches;
  }
  stats.rec_loss = rec_sum / static_cast<double>(train.size());
  stats.con_loss = con_sum / static_cast<double>(train.size());
  return stats;
}

json to_json(const EpochLog& log) {
  json j{{"epoch", log.stats.epoch},
         {"beta", log.stats.beta},
         {"loss_rec", log.stats.rec_loss},
         {"loss_con", log.stats.con_loss},
         {"batches", log.stats.batches},
         {"val_logloss", log.val_logloss},
         {"best_val_auc", log.best_val_auc},
         {"improved", log.improved}};
  j["val_auc"] = log.val_auc ? json(*log.val_auc) : json(nullptr);
  return j;
}

FitResult fit(const TrainConfig& config, const DatasetSplit& split, const GeoGraph& graph,
              const EpochCallback& on_epoch) {
  config.validate();
  if (graph.num_nodes() != split.num_pois) {
    throw Error(ErrorCode::ManifestMismatch, "geo graph has " + std::to_string(graph.num_nodes()) +
                                                 " nodes, dataset has " +
                                                 std::to_string(split.num_pois) + " POIs");
  }
  Model model(config.model_config(split.num_pois));
  model.initialize(config.seed);
  FitResult result{Model(model.config()), {}, std::nullopt};
  auto snapshot = [&] {
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      result.model.params()[i].value = model.params()[i].value;
    }
  };
  snapshot();

  DatasetSplit sliced = config.train_fraction < 1.0
                            ? train_fraction_slice(split, config.train_fraction, config.seed)
                            : split;
  const std::vector<Sample> train = cap_contexts(std::move(sliced.train), config.max_seq_len);
  const std::vector<Sample> valid = cap_contexts(split.validation, config.max_seq_len);
  std::vector<std::uint8_t> valid_labels;
  for (const auto& s : valid) valid_labels.push_back(s.label);

  AdamState adam = AdamState::for_params(model.params());
  double best = -1.0;
  for (std::size_t k = 0; k < config.epochs; ++k) {
    EpochLog entry;
    entry.stats = train_epoch(model, adam, train, graph, config, k, epoch_beta(config, k));
    if (!valid.empty()) {
      const std::vector<double> scores = score(model, graph, valid);
      entry.val_logloss = logloss(scores, valid_labels);
      try {
        entry.val_auc = auc(scores, valid_labels);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateLabels) throw;
      }
    }
    if (entry.val_auc && *entry.val_auc > best) {
      best = *entry.val_auc;
      result.best_epoch = k;
      entry.improved = true;
      snapshot();
    }
    entry.best_val_auc = std::max(best, 0.0);
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

}  // namespace disenpoi
