#include "disenpoi/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "disenpoi/error.hpp"
#include "disenpoi/io.hpp"
#include "disenpoi/random.hpp"

namespace disenpoi {

using nlohmann::json;

namespace {

void check_lengths(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "scores and labels differ in length");
  }
}

double mean_cosine(const Tensor& a, const Tensor& b) {
  if (a.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) sum += cosine(a.row_span(r), b.row_span(r));
  return sum / static_cast<double>(a.rows());
}

}  // namespace

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positives = 0.0, negatives = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum += midrank;
        positives += 1.0;
      } else {
        negatives += 1.0;
      }
    }
    i = j;
  }
  if (positives == 0.0 || negatives == 0.0) {
    throw Error(ErrorCode::DegenerateLabels, "AUC needs both positive and negative labels");
  }
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

double logloss(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores, labels);
  if (scores.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(scores[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    sum -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return sum / static_cast<double>(scores.size());
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "cosine of unequal lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

json to_json(const MetricsReport& report) {
  json j{{"split", report.split},
         {"auc", report.auc},
         {"logloss", report.logloss},
         {"n_samples", report.n_samples}};
  if (report.train_fraction) j["train_fraction"] = *report.train_fraction;
  if (report.diagnostics) {
    const Diagnostics& d = *report.diagnostics;
    j["diagnostics"] = {{"cos_eg_pg", d.cos_eg_pg},
                        {"cos_eg_ps", d.cos_eg_ps},
                        {"cos_es_ps", d.cos_es_ps},
                        {"cos_es_pg", d.cos_es_pg},
                        {"geo_margin", d.geo_margin()},
                        {"seq_margin", d.seq_margin()},
                        {"distance_users", d.distance_users}};
    j["diagnostics"]["recommendation_distance_km"] =
        d.recommendation_distance_km ? json(*d.recommendation_distance_km) : json(nullptr);
  }
  return j;
}

Diagnostics disentanglement_diagnostics(Model& model, const GeoGraph& graph,
                                        std::span<const Sample> samples,
                                        const std::optional<std::filesystem::path>& embeddings_out) {
  Diagnostics d;
  std::ostringstream tsv;
  tsv.precision(17);
  double sums[4] = {0.0, 0.0, 0.0, 0.0};
  constexpr std::size_t kChunk = 512;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t end = std::min(samples.size(), begin + kChunk);
    const double n = static_cast<double>(end - begin);
    Tape tape(false, true);
    ForwardOutput out = forward(tape, model, graph, samples.subspan(begin, end - begin), 0.0);
    const Tensor& eg = out.e_geo_proj.value();
    const Tensor& es = out.e_seq_proj.value();
    const Tensor& pg = out.p_geo_proj.value();
    const Tensor& ps = out.p_seq_proj.value();
    sums[0] += mean_cosine(eg, pg) * n;
    sums[1] += mean_cosine(eg, ps) * n;
    sums[2] += mean_cosine(es, ps) * n;
    sums[3] += mean_cosine(es, pg) * n;
    if (embeddings_out) {
      const std::pair<const char*, const Tensor*> roles[] = {
          {"e_geo", &eg}, {"e_seq", &es}, {"p_geo", &pg}, {"p_seq", &ps}};
      for (std::size_t r = 0; r < eg.rows(); ++r) {
        for (const auto& [role, t] : roles) {
          tsv << (begin + r) << '\t' << role;
          for (double v : t->row_span(r)) tsv << '\t' << v;
          tsv << '\n';
        }
      }
    }
  }
  if (!samples.empty()) {
    const double n = static_cast<double>(samples.size());
    d.cos_eg_pg = sums[0] / n;
    d.cos_eg_ps = sums[1] / n;
    d.cos_es_ps = sums[2] / n;
    d.cos_es_pg = sums[3] / n;
  }
  if (embeddings_out) io::write_file_atomic(*embeddings_out, tsv.str());
  return d;
}

double recommendation_distance(Model& model, const GeoGraph& graph,
                               std::span<const LatLon> poi_table,
                               std::span<const PoiIndex> context,
                               std::span<const PoiIndex> candidate_pool, std::size_t top_k) {
  if (context.empty()) throw Error(ErrorCode::ShapeMismatch, "empty context");
  if (candidate_pool.empty() || top_k == 0) {
    throw Error(ErrorCode::ShapeMismatch, "recommendation needs candidates and top_k > 0");
  }
  std::vector<Sample> queries;
  queries.reserve(candidate_pool.size());
  for (PoiIndex c : candidate_pool) {
    queries.push_back(Sample{0, std::vector<PoiIndex>(context.begin(), context.end()), c, 0});
  }
  const std::vector<double> s = score(model, graph, queries);
  std::vector<std::size_t> order(candidate_pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return candidate_pool[a] < candidate_pool[b];
  });
  const std::size_t k = std::min(top_k, order.size());
  const LatLon& from = poi_table[context.back()];
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    total += haversine_km(from, poi_table[candidate_pool[order[i]]]);
  }
  return total / static_cast<double>(k);
}

double mean_recommendation_distance(Model& model, const GeoGraph& graph,
                                    std::span<const LatLon> poi_table,
                                    std::span<const Sample> samples, const DiagnosticOptions& opt,
                                    std::size_t* users) {
  const std::size_t n = poi_table.size();
  const std::size_t pool = std::min(opt.pool_size, n);
  double total = 0.0;
  std::size_t count = 0;
  std::vector<PoiIndex> all(n);
  for (std::size_t pos = 0; pos < samples.size(); ++pos) {
    const Sample& s = samples[pos];
    if (!s.label || s.context.empty()) continue;
    std::iota(all.begin(), all.end(), PoiIndex{0});
    Rng rng = keyed_rng({opt.seed, pos, 0xD157});
    for (std::size_t i = 0; i < pool; ++i) {
      const std::size_t j = i + uniform_index(rng, n - i);
      std::swap(all[i], all[j]);
    }
    total += recommendation_distance(model, graph, poi_table, s.context,
                                     std::span<const PoiIndex>(all.data(), pool), opt.top_k);
    ++count;
  }
  if (users) *users = count;
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

MetricsReport evaluate_split(Model& model, const GeoGraph& graph, const DatasetSplit& data,
                             std::span<const Sample> samples, const std::string& split_name,
                             const std::optional<DiagnosticOptions>& diagnostics) {
  if (model.config().num_pois != data.num_pois || graph.num_nodes() != data.num_pois) {
    throw Error(ErrorCode::ManifestMismatch,
                "model expects " + std::to_string(model.config().num_pois) +
                    " POIs, dataset has " + std::to_string(data.num_pois));
  }
  MetricsReport report;
  report.split = split_name;
  report.n_samples = samples.size();
  const std::vector<double> scores = score(model, graph, samples);
  std::vector<std::uint8_t> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  report.auc = auc(scores, labels);
  report.logloss = logloss(scores, labels);
  if (diagnostics) {
    Diagnostics d = disentanglement_diagnostics(model, graph, samples, diagnostics->embeddings_out);
    std::size_t users = 0;
    const double dist =
        mean_recommendation_distance(model, graph, data.poi_table, samples, *diagnostics, &users);
    d.distance_users = users;
    if (users > 0) d.recommendation_distance_km = dist;
    report.diagnostics = d;
  }
  return report;
}

}  // namespace disenpoi
