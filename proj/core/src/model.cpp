#include "disenpoi/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "disenpoi/error.hpp"
#include "disenpoi/io.hpp"
#include "disenpoi/random.hpp"

namespace disenpoi {
namespace {

using nlohmann::json;
using SparsePtr = std::shared_ptr<const SparseMatrix>;

std::vector<std::uint32_t> iota_index(std::size_t n) {
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  return idx;
}

Var zeros(Tape& tape, std::size_t rows, std::size_t cols) {
  return tape.constant(Tensor(rows, cols));
}

// One message-passing layer. `h` holds states of n_in nodes whose first
// n_out rows are the nodes being updated; `norm` and `kernel` are the
// n_out x n_in Laplacian-normalized adjacency without and with w(d).
Var geo_layer(Var h, std::size_t n_out, const SparsePtr& norm, const SparsePtr& kernel, Var w1,
              Var w2) {
  Var m1 = ad::linear(h, w1);
  Var self = n_out == h.rows() ? m1 : ad::gather_rows(m1, iota_index(n_out));
  Var h_out = n_out == h.rows() ? h : ad::gather_rows(h, iota_index(n_out));
  Var neighbor = ad::spmm(norm, m1);
  // sum_i c_ij w_ij W2 (h_i * h_j) = W2 ((sum_i c_ij w_ij h_i) * h_j)
  Var product = ad::mul(ad::spmm(kernel, h), h_out);
  Var message = ad::linear(product, w2);
  return ad::leaky_relu(ad::add(ad::add(self, neighbor), message));
}

// Local numbering of the L-hop neighbourhood of `required`, ordered so that
// the nodes needed at layer l form a prefix of length sizes[l].
struct GeoFrontier {
  std::vector<PoiIndex> nodes;
  std::vector<std::size_t> sizes;  // sizes[l] for l = 0..L
  std::unordered_map<PoiIndex, std::uint32_t> local;
};

GeoFrontier expand_frontier(const GeoGraph& graph, std::span<const PoiIndex> required,
                            std::size_t layers) {
  GeoFrontier f;
  f.local.reserve(required.size() * 4);
  for (PoiIndex p : required) {
    if (f.local.try_emplace(p, static_cast<std::uint32_t>(f.nodes.size())).second) {
      f.nodes.push_back(p);
    }
  }
  f.sizes.assign(layers + 1, 0);
  f.sizes[layers] = f.nodes.size();
  std::size_t begin = 0;
  for (std::size_t l = layers; l > 0; --l) {
    const std::size_t end = f.nodes.size();
    // Every neighbour of the first sizes[l] nodes must be present; nodes in
    // [begin, end) are the ones whose neighbours have not been added yet.
    for (std::size_t k = begin; k < end; ++k) {
      for (const auto& nb : graph.neighbors(f.nodes[k])) {
        if (f.local.try_emplace(nb.index, static_cast<std::uint32_t>(f.nodes.size())).second) {
          f.nodes.push_back(nb.index);
        }
      }
    }
    begin = end;
    f.sizes[l - 1] = f.nodes.size();
  }
  return f;
}

std::pair<SparsePtr, SparsePtr> layer_operators(const GeoGraph& graph, const GeoFrontier& f,
                                                std::size_t n_out, std::size_t n_in) {
  auto norm = std::make_shared<SparseMatrix>();
  auto kernel = std::make_shared<SparseMatrix>();
  norm->cols = kernel->cols = n_in;
  for (std::size_t j = 0; j < n_out; ++j) {
    const PoiIndex pj = f.nodes[j];
    const double deg_j = static_cast<double>(graph.degree(pj));
    std::vector<std::pair<std::uint32_t, double>> a, b;
    a.reserve(graph.degree(pj));
    b.reserve(graph.degree(pj));
    for (const auto& nb : graph.neighbors(pj)) {
      const double c = 1.0 / std::sqrt(static_cast<double>(graph.degree(nb.index)) * deg_j);
      const std::uint32_t col = f.local.at(nb.index);
      a.emplace_back(col, c);
      b.emplace_back(col, c * std::exp(-nb.distance_km * nb.distance_km));
    }
    norm->push_row(std::move(a));
    kernel->push_row(std::move(b));
  }
  return {norm, kernel};
}

Var run_geo_layers(Tape& tape, Model& model, const GeoGraph& graph, const GeoFrontier& f) {
  Var x = tape.param(model.param("embedding.X"));
  Var h = ad::gather_rows(x, std::vector<std::uint32_t>(f.nodes.begin(), f.nodes.end()));
  const std::size_t layers = model.config().geo_layers;
  for (std::size_t l = 1; l <= layers; ++l) {
    auto [norm, kernel] = layer_operators(graph, f, f.sizes[l], f.sizes[l - 1]);
    h = geo_layer(h, f.sizes[l], norm, kernel, tape.param(model.param(Model::geo_w1(l - 1))),
                  tape.param(model.param(Model::geo_w2(l - 1))));
  }
  return h;
}

void check_poi(const Model& model, PoiIndex p) {
  if (p >= model.config().num_pois) {
    throw Error(ErrorCode::ManifestMismatch,
                "POI index " + std::to_string(p) + " outside the embedding table");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& config) : config_(config) {
  const std::size_t d = config.dim;
  if (d == 0 || config.num_pois == 0) {
    throw Error(ErrorCode::InvalidConfig, "model needs a positive dimension and POI count");
  }
  if (config.ggnn_steps == 0) throw Error(ErrorCode::InvalidConfig, "GGNN steps must be >= 1");
  params_.add("embedding.X", config.num_pois, d);
  for (std::size_t l = 0; l < config.geo_layers; ++l) {
    params_.add(geo_w1(l), d, d);
    params_.add(geo_w2(l), d, d);
  }
  params_.add("seq.W_agg", d, 2 * d);
  params_.add("seq.b", 1, d);
  for (const char* n : {"seq.Wz", "seq.Uz", "seq.Wr", "seq.Ur", "seq.Wo", "seq.Uo"}) {
    params_.add(n, d, d);
  }
  for (const char* prefix : {"attn_geo", "attn_seq"}) {
    params_.add(std::string(prefix) + ".alpha", d, 1);
    params_.add(std::string(prefix) + ".Q", d, d);
    params_.add(std::string(prefix) + ".K", d, d);
  }
  params_.add("proj_g.W", d, d);
  params_.add("proj_s.W", d, d);
  const std::size_t h = config.hidden();
  params_.add("mlp.W1", 4 * d, h);
  params_.add("mlp.b1", 1, h);
  params_.add("mlp.W2", h, 1);
  params_.add("mlp.b2", 1, 1);
}

std::string Model::geo_w1(std::size_t layer) { return "geo.layer" + std::to_string(layer) + ".W1"; }
std::string Model::geo_w2(std::size_t layer) { return "geo.layer" + std::to_string(layer) + ".W2"; }

void Model::initialize(std::uint64_t seed) {
  Rng rng = keyed_rng({seed, 0x1417});
  const double bound = 1.0 / std::sqrt(static_cast<double>(config_.dim));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = params_[i];
    const bool is_bias = p.name == "seq.b" || p.name == "mlp.b1" || p.name == "mlp.b2";
    for (auto& v : p.value.values()) v = is_bias ? 0.0 : uniform_real(rng, -bound, bound);
    p.grad.fill(0.0);
  }
}

// ---------------------------------------------------------------------------

Var geo_propagate(Tape& tape, Model& model, const GeoGraph& graph,
                  std::span<const PoiIndex> node_set) {
  for (PoiIndex p : node_set) check_poi(model, p);
  GeoFrontier f = expand_frontier(graph, node_set, model.config().geo_layers);
  Var h = run_geo_layers(tape, model, graph, f);
  // Rows are in first-occurrence order of node_set; map back when node_set
  // has duplicates.
  std::vector<std::uint32_t> rows;
  rows.reserve(node_set.size());
  for (PoiIndex p : node_set) rows.push_back(f.local.at(p));
  if (rows == iota_index(h.rows())) return h;
  return ad::gather_rows(h, rows);
}

Var geo_propagate_full(Tape& tape, Model& model, const GeoGraph& graph) {
  GeoFrontier f;
  const std::size_t n = graph.num_nodes();
  for (std::size_t i = 0; i < n; ++i) {
    f.nodes.push_back(static_cast<PoiIndex>(i));
    f.local.emplace(static_cast<PoiIndex>(i), static_cast<std::uint32_t>(i));
  }
  f.sizes.assign(model.config().geo_layers + 1, n);
  return run_geo_layers(tape, model, graph, f);
}

Var ggnn_propagate(Tape& tape, Model& model, std::span<const SeqGraph* const> graphs,
                   std::size_t steps) {
  if (steps == 0) throw Error(ErrorCode::InvalidConfig, "GGNN steps must be >= 1");
  std::size_t total = 0;
  for (const SeqGraph* g : graphs) total += g->n;
  auto in_op = std::make_shared<SparseMatrix>();
  auto out_op = std::make_shared<SparseMatrix>();
  in_op->cols = out_op->cols = total;
  std::vector<std::uint32_t> node_poi;
  node_poi.reserve(total);
  std::size_t offset = 0;
  for (const SeqGraph* g : graphs) {
    for (std::size_t i = 0; i < g->n; ++i) {
      check_poi(model, g->nodes[i]);
      node_poi.push_back(g->nodes[i]);
      std::vector<std::pair<std::uint32_t, double>> in_row, out_row;
      for (std::size_t j = 0; j < g->n; ++j) {
        const auto col = static_cast<std::uint32_t>(offset + j);
        if (g->in_at(i, j) != 0.0) in_row.emplace_back(col, g->in_at(i, j));
        if (g->out_at(i, j) != 0.0) out_row.emplace_back(col, g->out_at(i, j));
      }
      in_op->push_row(std::move(in_row));
      out_op->push_row(std::move(out_row));
    }
    offset += g->n;
  }

  Var x = tape.param(model.param("embedding.X"));
  Var w_agg = tape.param(model.param("seq.W_agg"));
  Var bias = tape.param(model.param("seq.b"));
  Var wz = tape.param(model.param("seq.Wz"));
  Var uz = tape.param(model.param("seq.Uz"));
  Var wr = tape.param(model.param("seq.Wr"));
  Var ur = tape.param(model.param("seq.Ur"));
  Var wo = tape.param(model.param("seq.Wo"));
  Var uo = tape.param(model.param("seq.Uo"));

  Var h = ad::gather_rows(x, node_poi);
  for (std::size_t t = 0; t < steps; ++t) {
    const Var parts[] = {ad::spmm(in_op, h), ad::spmm(out_op, h)};
    Var a = ad::add(ad::linear(ad::concat_cols(parts), w_agg), bias);
    Var z = ad::sigmoid(ad::add(ad::linear(a, wz), ad::linear(h, uz)));
    Var r = ad::sigmoid(ad::add(ad::linear(a, wr), ad::linear(h, ur)));
    Var candidate = ad::tanh(ad::add(ad::linear(a, wo), ad::linear(ad::mul(r, h), uo)));
    // (1 - z) * h + z * candidate
    h = ad::add(h, ad::mul(z, ad::sub(candidate, h)));
  }
  return h;
}

Var ggnn_propagate(Tape& tape, Model& model, const SeqGraph& graph, std::size_t steps) {
  const SeqGraph* one[] = {&graph};
  return ggnn_propagate(tape, model, one, steps);
}

AttentionParams geo_attention(Tape& tape, Model& model) {
  return {tape.param(model.param("attn_geo.alpha")), tape.param(model.param("attn_geo.Q")),
          tape.param(model.param("attn_geo.K"))};
}

AttentionParams seq_attention(Tape& tape, Model& model) {
  return {tape.param(model.param("attn_seq.alpha")), tape.param(model.param("attn_seq.Q")),
          tape.param(model.param("attn_seq.K"))};
}

Var soft_attention(Var queries, Var keys, std::span<const std::uint32_t> segment,
                   const AttentionParams& p) {
  if (segment.size() != keys.rows() || keys.rows() == 0) {
    throw Error(ErrorCode::ShapeMismatch, "attention needs one segment id per key row");
  }
  Var q = ad::linear(queries, p.query);
  Var k = ad::linear(keys, p.key);
  Var scores = ad::sigmoid(ad::add(ad::gather_rows(q, segment), k));
  Var weights = ad::matmul(scores, p.alpha);  // K x 1
  auto pool = std::make_shared<SparseMatrix>();
  pool->cols = keys.rows();
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows(queries.rows());
  for (std::size_t i = 0; i < segment.size(); ++i) {
    rows.at(segment[i]).emplace_back(static_cast<std::uint32_t>(i), 1.0);
  }
  for (auto& r : rows) pool->push_row(std::move(r));
  return ad::spmm(pool, ad::mul(keys, weights));
}

Var soft_attention(Var query, Var keys, const AttentionParams& p) {
  std::vector<std::uint32_t> segment(keys.rows(), 0);
  return soft_attention(query, keys, segment, p);
}

Proxies proxies(Tape& tape, Model& model, const GeoGraph& graph,
                std::span<const std::vector<PoiIndex>* const> contexts) {
  auto seq_op = std::make_shared<SparseMatrix>();
  auto geo_op = std::make_shared<SparseMatrix>();
  seq_op->cols = geo_op->cols = model.config().num_pois;
  for (const auto* ctx : contexts) {
    if (ctx->empty()) throw Error(ErrorCode::ShapeMismatch, "empty context");
    std::vector<std::pair<std::uint32_t, double>> seq_row;
    const double inv_len = 1.0 / static_cast<double>(ctx->size());
    std::size_t neighbor_total = 0;
    for (PoiIndex p : *ctx) {
      check_poi(model, p);
      seq_row.emplace_back(p, inv_len);
      neighbor_total += p < graph.num_nodes() ? graph.degree(p) : 0;
    }
    std::vector<std::pair<std::uint32_t, double>> geo_row;
    if (neighbor_total == 0) {
      geo_row = seq_row;
    } else {
      const double inv = 1.0 / static_cast<double>(neighbor_total);
      for (PoiIndex p : *ctx) {
        if (p >= graph.num_nodes()) continue;
        for (const auto& nb : graph.neighbors(p)) geo_row.emplace_back(nb.index, inv);
      }
    }
    seq_op->push_row(std::move(seq_row));
    geo_op->push_row(std::move(geo_row));
  }
  Var x = tape.param(model.param("embedding.X"));
  return {ad::spmm(geo_op, x), ad::spmm(seq_op, x)};
}

Proxies proxies(Tape& tape, Model& model, const GeoGraph& graph,
                std::span<const PoiIndex> context) {
  const std::vector<PoiIndex> ctx(context.begin(), context.end());
  const std::vector<PoiIndex>* one[] = {&ctx};
  return proxies(tape, model, graph, one);
}

Var bpr_term(Var anchor, Var positive, Var negative) {
  return ad::softplus(ad::sub(ad::inner_product(anchor, negative),
                              ad::inner_product(anchor, positive)));
}

Var contrastive_loss(Var e_geo_proj, Var p_geo_proj, Var e_seq_proj, Var p_seq_proj) {
  return ad::add(bpr_term(e_geo_proj, p_geo_proj, p_seq_proj),
                 bpr_term(e_seq_proj, p_seq_proj, p_geo_proj));
}

Var predict(Tape& tape, Model& model, Var e_geo, Var e_seq, Var x_target, Var h_target,
            Var* logit_out) {
  const Var parts[] = {e_geo, e_seq, x_target, h_target};
  Var z = ad::concat_cols(parts);
  Var hidden = ad::leaky_relu(ad::add(ad::matmul(z, tape.param(model.param("mlp.W1"))),
                                      tape.param(model.param("mlp.b1"))));
  Var logit = ad::add(ad::matmul(hidden, tape.param(model.param("mlp.W2"))),
                      tape.param(model.param("mlp.b2")));
  if (logit_out != nullptr) *logit_out = logit;
  return ad::sigmoid(logit);
}

Var bce_loss(Tape& tape, Var y_hat, std::span<const std::uint8_t> labels) {
  if (labels.size() != y_hat.rows() || y_hat.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "labels do not match predictions");
  }
  Tensor pos(labels.size(), 1), neg(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pos[i] = labels[i] != 0 ? 1.0 : 0.0;
    neg[i] = 1.0 - pos[i];
  }
  Var p = ad::clamp(y_hat, kProbabilityClamp, 1.0 - kProbabilityClamp);
  Var log_p = ad::log(p);
  Var log_q = ad::log(ad::add_scalar(ad::scalar_mul(p, -1.0), 1.0));
  Var ll = ad::add(ad::mul(log_p, tape.constant(std::move(pos))),
                   ad::mul(log_q, tape.constant(std::move(neg))));
  return ad::scalar_mul(ad::mean_rows(ll), -1.0);
}

Var total_loss(Var rec_loss, Var con_loss, double beta) {
  return ad::add(rec_loss, ad::scalar_mul(con_loss, beta));
}

// ---------------------------------------------------------------------------

ForwardOutput forward(Tape& tape, Model& model, const GeoGraph& graph,
                      std::span<const Sample* const> batch, double beta) {
  const ModelConfig& cfg = model.config();
  const std::size_t b = batch.size();
  const std::size_t d = cfg.dim;
  if (b == 0) throw Error(ErrorCode::ShapeMismatch, "empty batch");
  const bool use_geo = !cfg.disable_geo_graph;
  const bool use_seq = !cfg.disable_seq_graph;

  std::vector<std::uint32_t> targets;
  std::vector<std::uint32_t> key_segment;  // context position -> sample
  std::vector<std::uint8_t> labels;
  std::vector<const std::vector<PoiIndex>*> contexts;
  for (std::size_t s = 0; s < b; ++s) {
    const Sample& smp = *batch[s];
    if (smp.context.empty()) throw Error(ErrorCode::ShapeMismatch, "empty context");
    check_poi(model, smp.target);
    targets.push_back(smp.target);
    labels.push_back(smp.label);
    contexts.push_back(&smp.context);
    for (std::size_t k = 0; k < smp.context.size(); ++k) {
      key_segment.push_back(static_cast<std::uint32_t>(s));
    }
  }

  ForwardOutput out;
  Var x = tape.param(model.param("embedding.X"));
  out.x_target = ad::gather_rows(x, targets);

  if (use_geo) {
    std::vector<PoiIndex> required;
    for (const Sample* smp : batch) {
      required.insert(required.end(), smp->context.begin(), smp->context.end());
      required.push_back(smp->target);
    }
    for (PoiIndex p : required) check_poi(model, p);
    GeoFrontier f = expand_frontier(graph, required, cfg.geo_layers);
    Var h = run_geo_layers(tape, model, graph, f);
    std::vector<std::uint32_t> key_rows, target_rows;
    for (const Sample* smp : batch) {
      for (PoiIndex p : smp->context) key_rows.push_back(f.local.at(p));
      target_rows.push_back(f.local.at(smp->target));
    }
    out.h_target = ad::gather_rows(h, target_rows);
    Var keys = ad::gather_rows(h, key_rows);
    out.e_geo = soft_attention(out.h_target, keys, key_segment, geo_attention(tape, model));
  } else {
    out.h_target = zeros(tape, b, d);
    out.e_geo = zeros(tape, b, d);
  }

  if (use_seq) {
    std::vector<SeqGraph> graphs;
    graphs.reserve(b);
    for (const Sample* smp : batch) graphs.push_back(build_seq_graph(smp->context));
    std::vector<const SeqGraph*> ptrs;
    std::vector<std::uint32_t> key_rows;
    std::size_t offset = 0;
    for (const auto& g : graphs) {
      ptrs.push_back(&g);
      for (auto a : g.alias) key_rows.push_back(static_cast<std::uint32_t>(offset + a));
      offset += g.n;
    }
    Var states = ggnn_propagate(tape, model, ptrs, cfg.ggnn_steps);
    Var keys = ad::gather_rows(states, key_rows);
    out.e_seq = soft_attention(out.x_target, keys, key_segment, seq_attention(tape, model));
  } else {
    out.e_seq = zeros(tape, b, d);
  }

  Proxies px = proxies(tape, model, graph, contexts);
  out.p_geo = use_geo ? px.geo : zeros(tape, b, d);
  out.p_seq = use_seq ? px.seq : zeros(tape, b, d);

  Var proj_g = tape.param(model.param("proj_g.W"));
  Var proj_s = tape.param(model.param("proj_s.W"));
  out.e_geo_proj = ad::linear(out.e_geo, proj_g);
  out.p_geo_proj = ad::linear(out.p_geo, proj_g);
  out.e_seq_proj = ad::linear(out.e_seq, proj_s);
  out.p_seq_proj = ad::linear(out.p_seq, proj_s);

  if (use_geo && use_seq) {
    out.con_per_sample =
        contrastive_loss(out.e_geo_proj, out.p_geo_proj, out.e_seq_proj, out.p_seq_proj);
  } else if (use_geo) {
    out.con_per_sample = bpr_term(out.e_geo_proj, out.p_geo_proj, out.p_seq_proj);
  } else if (use_seq) {
    out.con_per_sample = bpr_term(out.e_seq_proj, out.p_seq_proj, out.p_geo_proj);
  } else {
    out.con_per_sample = zeros(tape, b, 1);
  }

  out.y_hat = predict(tape, model, out.e_geo, out.e_seq, out.x_target, out.h_target, &out.logit);
  out.rec_loss = bce_loss(tape, out.y_hat, labels);
  out.con_loss = ad::mean_rows(out.con_per_sample);
  out.loss = total_loss(out.rec_loss, out.con_loss, beta);
  return out;
}

ForwardOutput forward(Tape& tape, Model& model, const GeoGraph& graph,
                      std::span<const Sample> batch, double beta) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return forward(tape, model, graph, ptrs, beta);
}

std::vector<double> score(Model& model, const GeoGraph& graph, std::span<const Sample> samples,
                          std::size_t chunk) {
  std::vector<double> scores;
  scores.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
    const std::size_t end = std::min(samples.size(), begin + chunk);
    Tape tape(false, true);
    ForwardOutput out = forward(tape, model, graph, samples.subspan(begin, end - begin), 0.0);
    const Tensor& y = out.y_hat.value();
    scores.insert(scores.end(), y.data(), y.data() + y.size());
  }
  return scores;
}

// ---------------------------------------------------------------------------

std::string serialize_checkpoint(const Model& model) {
  const ModelConfig& c = model.config();
  json header;
  header["format"] = "disenpoi-checkpoint";
  header["version"] = 1;
  header["D"] = c.dim;
  header["L"] = c.geo_layers;
  header["T"] = c.ggnn_steps;
  header["H"] = c.hidden();
  header["num_pois"] = c.num_pois;
  header["delta_d"] = c.delta_d;
  header["disable_geo_graph"] = c.disable_geo_graph;
  header["disable_seq_graph"] = c.disable_seq_graph;
  json manifest = json::array();
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const Parameter& p = model.params()[i];
    manifest.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  }
  header["params"] = manifest;
  std::string out = header.dump();
  out.push_back('\n');
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    for (double v : model.params()[i].value.values()) io::put_f64(out, v);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  io::write_file_atomic(path, serialize_checkpoint(model));
}

Model deserialize_checkpoint(std::string_view bytes) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw Error(ErrorCode::CorruptFile, "checkpoint has no header");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("checkpoint header: ") + e.what());
  }
  ModelConfig c;
  try {
    if (header.at("format").get<std::string>() != "disenpoi-checkpoint") {
      throw Error(ErrorCode::CorruptFile, "not a checkpoint");
    }
    c.dim = header.at("D").get<std::size_t>();
    c.geo_layers = header.at("L").get<std::size_t>();
    c.ggnn_steps = header.at("T").get<std::size_t>();
    c.mlp_hidden = header.at("H").get<std::size_t>();
    c.num_pois = header.at("num_pois").get<std::size_t>();
    c.delta_d = header.at("delta_d").get<double>();
    c.disable_geo_graph = header.at("disable_geo_graph").get<bool>();
    c.disable_seq_graph = header.at("disable_seq_graph").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("checkpoint header: ") + e.what());
  }
  Model model(c);
  const json& manifest = header.at("params");
  if (manifest.size() != model.params().size()) {
    throw Error(ErrorCode::ManifestMismatch, "parameter manifest length differs from the model");
  }
  io::Reader r(bytes.substr(nl + 1));
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    Parameter& p = model.params()[i];
    if (manifest[i].at("name").get<std::string>() != p.name ||
        manifest[i].at("rows").get<std::size_t>() != p.value.rows() ||
        manifest[i].at("cols").get<std::size_t>() != p.value.cols()) {
      throw Error(ErrorCode::ManifestMismatch, "manifest entry " + std::to_string(i) +
                                                   " does not match parameter " + p.name);
    }
    for (auto& v : p.value.values()) v = r.f64();
  }
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptFile, "trailing bytes in checkpoint");
  return model;
}

Model load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace disenpoi
