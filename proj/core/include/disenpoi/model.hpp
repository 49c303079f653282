#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "disenpoi/autodiff.hpp"
#include "disenpoi/graphs.hpp"
#include "disenpoi/ingest.hpp"

namespace disenpoi {

struct ModelConfig {
  std::size_t num_pois = 0;
  std::size_t dim = 64;         // D
  std::size_t geo_layers = 2;   // L
  std::size_t ggnn_steps = 2;   // T
  std::size_t mlp_hidden = 0;   // H; 0 means 2 * D
  double delta_d = 1.0;         // km, recorded so evaluation rebuilds the same graph
  bool disable_geo_graph = false;
  bool disable_seq_graph = false;

  std::size_t hidden() const { return mlp_hidden == 0 ? 2 * dim : mlp_hidden; }
};

/// Weights of the dual-graph network. Matrices applied to representations
/// are stored output-major (W is out x in, used as x * W^T); the MLP layers
/// are stored input-major (4D x H and H x 1, used as x * W).
class Model {
 public:
  explicit Model(const ModelConfig& config);

  /// Embedding table, weight matrices and attention vectors uniform in
  /// +-1/sqrt(D); biases zero.
  void initialize(std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  Parameter& param(const std::string& name) { return params_.at(name); }

  // "geo.layer<l>.W1" / "geo.layer<l>.W2"
  static std::string geo_w1(std::size_t layer);
  static std::string geo_w2(std::size_t layer);

 private:
  ModelConfig config_;
  ParameterSet params_;
};

// ---------------------------------------------------------------------------
// Building blocks. All of them record on the given tape.

/// Layer-L geographical states for `node_set` (rows in node_set order).
/// Only the L-hop neighbourhood of node_set is touched; neighbour degrees
/// are the global ones, so the rows equal those of a full-graph pass.
Var geo_propagate(Tape& tape, Model& model, const GeoGraph& graph,
                  std::span<const PoiIndex> node_set);

/// Same recurrence evaluated on every node of the graph, all layers.
Var geo_propagate_full(Tape& tape, Model& model, const GeoGraph& graph);

/// Gated propagation over a batch of session graphs. Node states of all
/// graphs are stacked in order; returns the stacked states after T steps.
Var ggnn_propagate(Tape& tape, Model& model, std::span<const SeqGraph* const> graphs,
                   std::size_t steps);
Var ggnn_propagate(Tape& tape, Model& model, const SeqGraph& graph, std::size_t steps);

struct AttentionParams {
  Var alpha;  // D x 1
  Var query;  // Q, D x D
  Var key;    // K, D x D
};

/// Unnormalized additive attention: w_i = alpha^T sigmoid(Q q + K k_i),
/// output sum_i w_i k_i. `segment[k]` names the query row that key row k
/// belongs to; queries has one row per segment.
Var soft_attention(Var queries, Var keys, std::span<const std::uint32_t> segment,
                   const AttentionParams& p);
Var soft_attention(Var query, Var keys, const AttentionParams& p);

AttentionParams geo_attention(Tape& tape, Model& model);
AttentionParams seq_attention(Tape& tape, Model& model);

/// Mean-pooled readouts per context: p_s over the context itself (with
/// multiplicity), p_g over the one-hop geographical neighbours of every
/// context POI, weighted by neighbourhood size. A context whose POIs have
/// no neighbours falls back to p_g = p_s.
struct Proxies {
  Var geo;  // B x D
  Var seq;  // B x D
};
Proxies proxies(Tape& tape, Model& model, const GeoGraph& graph,
                std::span<const std::vector<PoiIndex>* const> contexts);
Proxies proxies(Tape& tape, Model& model, const GeoGraph& graph,
                std::span<const PoiIndex> context);

/// Per-row softplus(<a, q> - <a, p>).
Var bpr_term(Var anchor, Var positive, Var negative);

/// f(e_g', p_g', p_s') + f(e_s', p_s', p_g'), one value per row.
Var contrastive_loss(Var e_geo_proj, Var p_geo_proj, Var e_seq_proj, Var p_seq_proj);

/// sigma(MLP(concat(e_g, e_s, x_t, h_t))). Returns the B x 1 probabilities;
/// `logit_out`, when given, receives the pre-sigmoid values.
Var predict(Tape& tape, Model& model, Var e_geo, Var e_seq, Var x_target, Var h_target,
            Var* logit_out = nullptr);

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy of clamp(y_hat) against labels (B x 1).
Var bce_loss(Tape& tape, Var y_hat, std::span<const std::uint8_t> labels);

/// L_rec + beta * L_con for batch-mean losses (both 1 x 1).
Var total_loss(Var rec_loss, Var con_loss, double beta);

// ---------------------------------------------------------------------------

struct ForwardOutput {
  Var e_geo, e_seq;            // B x D
  Var p_geo, p_seq;            // B x D
  Var e_geo_proj, e_seq_proj;  // B x D
  Var p_geo_proj, p_seq_proj;  // B x D
  Var h_target, x_target;      // B x D
  Var logit;                   // B x 1
  Var y_hat;                   // B x 1
  Var con_per_sample;          // B x 1
  Var rec_loss;                // 1 x 1, batch mean
  Var con_loss;                // 1 x 1, batch mean
  Var loss;                    // 1 x 1
};

/// Full forward pass for a batch. Geographical propagation runs once over the
/// union of the batch's required nodes. Ablated branches contribute zero
/// embeddings and proxies and drop their contrastive term.
ForwardOutput forward(Tape& tape, Model& model, const GeoGraph& graph,
                      std::span<const Sample* const> batch, double beta);
ForwardOutput forward(Tape& tape, Model& model, const GeoGraph& graph,
                      std::span<const Sample> batch, double beta);

/// Scores samples without recording gradients, in chunks of `chunk`.
std::vector<double> score(Model& model, const GeoGraph& graph, std::span<const Sample> samples,
                          std::size_t chunk = 512);

// ---------------------------------------------------------------------------
// model.ckpt: one JSON header line (dimensions and the parameter manifest),
// then raw little-endian fp64 blocks in manifest order.

void save_checkpoint(const std::filesystem::path& path, const Model& model);
std::string serialize_checkpoint(const Model& model);
Model load_checkpoint(const std::filesystem::path& path);
Model deserialize_checkpoint(std::string_view bytes);

}  // namespace disenpoi
