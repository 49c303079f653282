#pragma once

// Straight-line reference implementations used as test oracles. They work
// on plain nested loops over Tensor storage and never touch the tape, the
// sparse operators or the graph builders of the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "disenpoi/autodiff.hpp"
#include "disenpoi/ingest.hpp"
#include "disenpoi/random.hpp"

namespace disenpoi::oracle {

using Vec = std::vector<double>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double leaky(double x) { return x > 0.0 ? x : 0.01 * x; }

inline Vec row(const Tensor& t, std::size_t r) {
  return Vec(t.data() + r * t.cols(), t.data() + (r + 1) * t.cols());
}

// W (out x in) times v.
inline Vec matvec(const Tensor& w, const Vec& v) {
  Vec out(w.rows(), 0.0);
  for (std::size_t o = 0; o < w.rows(); ++o) {
    for (std::size_t i = 0; i < w.cols(); ++i) out[o] += w(o, i) * v[i];
  }
  return out;
}

inline double haversine(const LatLon& a, const LatLon& b) {
  const double rad = M_PI / 180.0;
  const double dlat = (b.lat - a.lat) * rad, dlon = (b.lon - a.lon) * rad;
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) *
                       std::sin(dlon / 2);
  return 2.0 * 6371.0088 * std::asin(std::min(1.0, std::sqrt(s)));
}

// Dense pairwise distances and the delta_d adjacency.
struct DenseGeo {
  std::size_t n = 0;
  std::vector<double> dist;
  std::vector<char> adj;
  std::vector<double> degree;
};

inline DenseGeo dense_geo(std::span<const LatLon> pois, double delta_d) {
  DenseGeo g;
  g.n = pois.size();
  g.dist.assign(g.n * g.n, 0.0);
  g.adj.assign(g.n * g.n, 0);
  g.degree.assign(g.n, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      if (i == j) continue;
      const double d = haversine(pois[i], pois[j]);
      g.dist[i * g.n + j] = d;
      if (d > 0.0 && d <= delta_d) {
        g.adj[i * g.n + j] = 1;
        g.degree[i] += 1.0;
      }
    }
  }
  return g;
}

// All-node geographical states after `layers` rounds, from an n x D table.
inline std::vector<Vec> geo_states(const DenseGeo& g, const Tensor& x,
                                   const std::vector<Tensor>& w1, const std::vector<Tensor>& w2) {
  std::vector<Vec> h(g.n);
  for (std::size_t i = 0; i < g.n; ++i) h[i] = row(x, i);
  for (std::size_t l = 0; l < w1.size(); ++l) {
    std::vector<Vec> next(g.n);
    for (std::size_t j = 0; j < g.n; ++j) {
      Vec acc = matvec(w1[l], h[j]);
      for (std::size_t i = 0; i < g.n; ++i) {
        if (!g.adj[i * g.n + j]) continue;
        const double c = 1.0 / std::sqrt(g.degree[i] * g.degree[j]);
        const double w = std::exp(-g.dist[i * g.n + j] * g.dist[i * g.n + j]);
        Vec prod(h[i].size());
        for (std::size_t k = 0; k < prod.size(); ++k) prod[k] = h[i][k] * h[j][k];
        const Vec a = matvec(w1[l], h[i]);
        const Vec b = matvec(w2[l], prod);
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += c * (a[k] + w * b[k]);
      }
      for (double& v : acc) v = leaky(v);
      next[j] = acc;
    }
    h = std::move(next);
  }
  return h;
}

struct GgnnWeights {
  Tensor w_agg, b, wz, uz, wr, ur, wo, uo;
};

// Session graph by enumeration: distinct nodes in first-occurrence order,
// transitions collapsed, rows normalized by degree.
struct DenseSession {
  std::vector<PoiIndex> nodes;
  std::vector<std::size_t> alias;
  std::vector<std::vector<double>> in, out;
};

inline DenseSession dense_session(std::span<const PoiIndex> context) {
  DenseSession s;
  std::map<PoiIndex, std::size_t> slot;
  for (PoiIndex p : context) {
    auto [it, fresh] = slot.emplace(p, s.nodes.size());
    if (fresh) s.nodes.push_back(p);
    s.alias.push_back(it->second);
  }
  const std::size_t n = s.nodes.size();
  std::vector<std::vector<char>> e(n, std::vector<char>(n, 0));
  for (std::size_t k = 1; k < context.size(); ++k) e[s.alias[k - 1]][s.alias[k]] = 1;
  s.in.assign(n, std::vector<double>(n, 0.0));
  s.out.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double od = 0.0, id = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      od += e[i][j];
      id += e[j][i];
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (e[i][j]) s.out[i][j] = 1.0 / od;
      if (e[j][i]) s.in[i][j] = 1.0 / id;
    }
  }
  return s;
}

// Session node states after `steps` gated updates, one node at a time.
inline std::vector<Vec> ggnn_states(const DenseSession& s, const Tensor& x, const GgnnWeights& w,
                                    std::size_t steps) {
  const std::size_t n = s.nodes.size();
  const std::size_t d = x.cols();
  std::vector<Vec> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i] = row(x, s.nodes[i]);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<Vec> next(n);
    for (std::size_t v = 0; v < n; ++v) {
      Vec cat(2 * d, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < d; ++k) {
          cat[k] += s.in[v][j] * h[j][k];
          cat[d + k] += s.out[v][j] * h[j][k];
        }
      }
      Vec a = matvec(w.w_agg, cat);
      for (std::size_t k = 0; k < d; ++k) a[k] += w.b[k];
      const Vec za = matvec(w.wz, a), zh = matvec(w.uz, h[v]);
      const Vec ra = matvec(w.wr, a), rh = matvec(w.ur, h[v]);
      Vec z(d), r(d), rhv(d);
      for (std::size_t k = 0; k < d; ++k) {
        z[k] = sigmoid(za[k] + zh[k]);
        r[k] = sigmoid(ra[k] + rh[k]);
        rhv[k] = r[k] * h[v][k];
      }
      const Vec ca = matvec(w.wo, a), ch = matvec(w.uo, rhv);
      next[v].resize(d);
      for (std::size_t k = 0; k < d; ++k) {
        next[v][k] = (1.0 - z[k]) * h[v][k] + z[k] * std::tanh(ca[k] + ch[k]);
      }
    }
    h = std::move(next);
  }
  return h;
}

// sum_i (alpha . sigmoid(Q q + K k_i)) k_i
inline Vec attention(const Vec& query, const std::vector<Vec>& keys, const Tensor& alpha,
                     const Tensor& q, const Tensor& k) {
  const Vec qq = matvec(q, query);
  Vec out(query.size(), 0.0);
  for (const Vec& key : keys) {
    const Vec kk = matvec(k, key);
    double w = 0.0;
    for (std::size_t d = 0; d < kk.size(); ++d) w += alpha[d] * sigmoid(qq[d] + kk[d]);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += w * key[d];
  }
  return out;
}

// Double-sum readouts; falls back to p_s when no context POI has neighbours.
inline std::pair<Vec, Vec> proxies(std::span<const PoiIndex> context, const DenseGeo& g,
                                   const Tensor& x) {
  const std::size_t d = x.cols();
  Vec ps(d, 0.0), pg(d, 0.0);
  for (PoiIndex p : context) {
    for (std::size_t k = 0; k < d; ++k) ps[k] += x(p, k) / static_cast<double>(context.size());
  }
  double total = 0.0;
  for (PoiIndex i : context) {
    for (std::size_t j = 0; j < g.n; ++j) {
      if (!g.adj[i * g.n + j]) continue;
      total += 1.0;
      for (std::size_t k = 0; k < d; ++k) pg[k] += x(j, k);
    }
  }
  if (total == 0.0) return {ps, ps};
  for (double& v : pg) v /= total;
  return {pg, ps};
}

// Pair counting with ties worth one half.
inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// ---------------------------------------------------------------------------
// Random instance generators.

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform_real(rng, lo, hi);
  return t;
}

// n points scattered over a box of `extent_km` around a fixed origin.
inline std::vector<LatLon> random_pois(Rng& rng, std::size_t n, double extent_km) {
  const double deg = extent_km / 111.195;
  std::vector<LatLon> pois(n);
  for (auto& p : pois) {
    p = {35.0 + uniform_real(rng, 0.0, deg), 139.0 + uniform_real(rng, 0.0, deg)};
  }
  return pois;
}

inline std::vector<PoiIndex> random_context(Rng& rng, std::size_t len, std::size_t num_pois) {
  std::vector<PoiIndex> c(len);
  for (auto& p : c) p = static_cast<PoiIndex>(uniform_index(rng, num_pois));
  return c;
}

}  // namespace disenpoi::oracle
