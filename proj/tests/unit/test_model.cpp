#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "disenpoi/error.hpp"
#include "disenpoi/model.hpp"
#include "gradcases.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace disenpoi;
using oracle::Vec;

namespace {

Model random_model(std::size_t pois, std::size_t dim, std::uint64_t seed, std::size_t layers = 2) {
  ModelConfig c;
  c.num_pois = pois;
  c.dim = dim;
  c.geo_layers = layers;
  Model m(c);
  m.initialize(seed);
  // Non-zero biases so they are exercised too.
  Rng rng = keyed_rng({seed, 0xB1A5});
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    Parameter& p = m.params()[i];
    if (p.name.find(".b") != std::string::npos) p.value = oracle::random_tensor(rng, p.value.rows(), p.value.cols(), -0.5, 0.5);
  }
  return m;
}

double max_diff(const Tensor& t, std::size_t r, const Vec& v) {
  double worst = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) worst = std::max(worst, std::abs(t(r, k) - v[k]));
  return worst;
}

oracle::GgnnWeights ggnn_weights(Model& m) {
  return {m.param("seq.W_agg").value, m.param("seq.b").value, m.param("seq.Wz").value,
          m.param("seq.Uz").value,    m.param("seq.Wr").value, m.param("seq.Ur").value,
          m.param("seq.Wo").value,    m.param("seq.Uo").value};
}

}  // namespace

TEST_CASE("parameter shapes") {
  ModelConfig c;
  c.num_pois = 7;
  c.dim = 5;
  Model m(c);
  CHECK(m.param("embedding.X").value.rows() == 7);
  CHECK(m.param("embedding.X").value.cols() == 5);
  CHECK(m.param("geo.layer1.W2").value.rows() == 5);
  CHECK(m.param("seq.W_agg").value.cols() == 10);
  CHECK(m.param("attn_seq.alpha").value.rows() == 5);
  CHECK(m.param("mlp.W1").value.rows() == 20);
  CHECK(m.param("mlp.W1").value.cols() == 10);
  CHECK(m.param("mlp.W2").value.cols() == 1);
  m.initialize(3);
  const double bound = 1.0 / std::sqrt(5.0);
  for (double v : m.param("embedding.X").value.values()) CHECK(std::abs(v) <= bound);
  CHECK(m.param("mlp.b1").value == Tensor(1, 10));
}

TEST_CASE("geo propagation with zero layers returns embeddings") {
  Model m = random_model(6, 3, 1, 0);
  Rng rng = keyed_rng({1});
  const GeoGraph g = build_geo_graph(oracle::random_pois(rng, 6, 1.5), 1.0);
  Tape tape;
  const std::vector<PoiIndex> nodes = {4, 1};
  const Tensor h = geo_propagate(tape, m, g, nodes).value();
  CHECK(max_diff(h, 0, oracle::row(m.param("embedding.X").value, 4)) == 0.0);
  CHECK(max_diff(h, 1, oracle::row(m.param("embedding.X").value, 1)) == 0.0);
}

TEST_CASE("identity weights at zero distance") {
  // Two nodes joined at d = 0 with h = 1: m_ij = h + 1 * (h * h) = 2, m_jj = 1.
  const std::size_t d = 3;
  GeoGraph g(1.0, {0, 1, 2}, {{1, 0.0}, {0, 0.0}});
  ModelConfig c;
  c.num_pois = 2;
  c.dim = d;
  c.geo_layers = 1;
  Model m(c);
  m.param("embedding.X").value = Tensor(2, d, 1.0);
  m.param("geo.layer0.W1").value = Tensor::identity(d);
  m.param("geo.layer0.W2").value = Tensor::identity(d);
  Tape tape;
  const std::vector<PoiIndex> nodes = {0, 1};
  const Tensor h = geo_propagate(tape, m, g, nodes).value();
  for (double v : h.values()) CHECK(v == 3.0);
}

TEST_CASE("geo propagation matches the dense oracle") {
  for (std::uint64_t k = 0; k < 100; ++k) {
    Rng rng = keyed_rng({k, 21});
    const std::size_t n = 6 + uniform_index(rng, 10);
    const auto pois = oracle::random_pois(rng, n, uniform_real(rng, 0.8, 3.0));
    const GeoGraph g = build_geo_graph(pois, 1.0);
    const std::size_t layers = 1 + uniform_index(rng, 3);
    Model m = random_model(n, 4, k, layers);
    std::vector<Tensor> w1, w2;
    for (std::size_t l = 0; l < layers; ++l) {
      w1.push_back(m.param(Model::geo_w1(l)).value);
      w2.push_back(m.param(Model::geo_w2(l)).value);
    }
    const auto ref = oracle::geo_states(oracle::dense_geo(pois, 1.0), m.param("embedding.X").value, w1, w2);
    std::vector<PoiIndex> nodes = {static_cast<PoiIndex>(uniform_index(rng, n)),
                                   static_cast<PoiIndex>(uniform_index(rng, n))};
    Tape tape;
    const Tensor local = geo_propagate(tape, m, g, nodes).value();
    const Tensor full = geo_propagate_full(tape, m, g).value();
    for (std::size_t r = 0; r < nodes.size(); ++r) {
      CHECK(max_diff(local, r, ref[nodes[r]]) < 1e-10);
      // Locality: the induced-subgraph rows equal the full pass.
      for (std::size_t c = 0; c < local.cols(); ++c) {
        CHECK(std::abs(local(r, c) - full(nodes[r], c)) < 1e-12);
      }
    }
    for (std::size_t i = 0; i < n; ++i) CHECK(max_diff(full, i, ref[i]) < 1e-10);
  }
}

TEST_CASE("vanishing kernel reduces to the W1-only message") {
  Rng rng = keyed_rng({31});
  const auto pois = oracle::random_pois(rng, 10, 1.5);
  const GeoGraph near = build_geo_graph(pois, 1.0);
  // Same topology, distances stretched so exp(-d^2) underflows to 0.
  std::vector<GeoNeighbor> far = near.adjacency();
  for (auto& e : far) e.distance_km *= 1000.0;
  const GeoGraph stretched(1.0, near.offsets(), far);
  Model m = random_model(10, 4, 2);
  auto dense = oracle::dense_geo(pois, 1.0);
  std::vector<Tensor> w1 = {m.param("geo.layer0.W1").value, m.param("geo.layer1.W1").value};
  const std::vector<Tensor> w2(2, Tensor(4, 4));  // W2 ablated
  const auto ref = oracle::geo_states(dense, m.param("embedding.X").value, w1, w2);
  Tape tape;
  const Tensor h = geo_propagate_full(tape, m, stretched).value();
  for (std::size_t i = 0; i < 10; ++i) CHECK(max_diff(h, i, ref[i]) < 1e-12);
}

TEST_CASE("gated propagation closed forms") {
  SUBCASE("zero weights halve the state each step") {
    ModelConfig c;
    c.num_pois = 5;
    c.dim = 3;
    Model m(c);
    Rng rng = keyed_rng({5});
    m.param("embedding.X").value = oracle::random_tensor(rng, 5, 3);
    const std::vector<PoiIndex> ctx = {2, 4, 2};
    const SeqGraph g = build_seq_graph(ctx);
    Tape tape;
    const Tensor h = ggnn_propagate(tape, m, g, 2).value();
    for (std::size_t i = 0; i < g.n; ++i) {
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(h(i, k) == doctest::Approx(0.25 * m.param("embedding.X").value(g.nodes[i], k)).epsilon(1e-15));
      }
    }
  }
  SUBCASE("single node follows the scalar recurrence with a = b") {
    Model m = random_model(3, 4, 8);
    const std::vector<PoiIndex> ctx = {1};
    const SeqGraph g = build_seq_graph(ctx);
    const auto w = ggnn_weights(m);
    Vec h = oracle::row(m.param("embedding.X").value, 1);
    const Vec a = oracle::row(w.b, 0);
    for (int t = 0; t < 2; ++t) {
      const Vec za = oracle::matvec(w.wz, a), zh = oracle::matvec(w.uz, h);
      const Vec ra = oracle::matvec(w.wr, a), rh = oracle::matvec(w.ur, h);
      Vec rhv(4), next(4);
      for (int k = 0; k < 4; ++k) rhv[k] = oracle::sigmoid(ra[k] + rh[k]) * h[k];
      const Vec ca = oracle::matvec(w.wo, a), ch = oracle::matvec(w.uo, rhv);
      for (int k = 0; k < 4; ++k) {
        const double z = oracle::sigmoid(za[k] + zh[k]);
        next[k] = (1 - z) * h[k] + z * std::tanh(ca[k] + ch[k]);
      }
      h = next;
    }
    Tape tape;
    CHECK(max_diff(ggnn_propagate(tape, m, g, 2).value(), 0, h) < 1e-12);
  }
  SUBCASE("steps must be positive") {
    Model m = random_model(3, 2, 1);
    const std::vector<PoiIndex> ctx = {0, 1};
    Tape tape;
    CHECK_THROWS_AS(ggnn_propagate(tape, m, build_seq_graph(ctx), 0), Error);
  }
}

TEST_CASE("gated propagation matches the step-by-step oracle") {
  for (std::uint64_t k = 0; k < 100; ++k) {
    Rng rng = keyed_rng({k, 23});
    const std::size_t pois = 4 + uniform_index(rng, 6);
    Model m = random_model(pois, 4, k + 100);
    // A batch of sessions stacked into one propagation.
    std::vector<std::vector<PoiIndex>> contexts;
    if (k == 0) contexts.push_back({0, 1, 2});  // 3-node chain
    while (contexts.size() < 3) contexts.push_back(oracle::random_context(rng, 1 + uniform_index(rng, 9), pois));
    std::vector<SeqGraph> graphs;
    for (const auto& c : contexts) graphs.push_back(build_seq_graph(c));
    std::vector<const SeqGraph*> ptrs;
    for (const auto& g : graphs) ptrs.push_back(&g);
    const std::size_t steps = 1 + uniform_index(rng, 3);
    Tape tape;
    const Tensor h = ggnn_propagate(tape, m, ptrs, steps).value();
    std::size_t offset = 0;
    for (const auto& c : contexts) {
      const auto ref = oracle::ggnn_states(oracle::dense_session(c), m.param("embedding.X").value,
                                           ggnn_weights(m), steps);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(max_diff(h, offset + i, ref[i]) < 1e-10);
      offset += ref.size();
    }
    CHECK(offset == h.rows());
  }
}

TEST_CASE("soft attention") {
  Rng rng = keyed_rng({41});
  const std::size_t d = 4;
  Tape tape;
  AttentionParams p{tape.constant(oracle::random_tensor(rng, d, 1)),
                    tape.constant(oracle::random_tensor(rng, d, d)),
                    tape.constant(oracle::random_tensor(rng, d, d))};
  SUBCASE("zero alpha annihilates") {
    AttentionParams z = p;
    z.alpha = tape.constant(Tensor(d, 1));
    const Tensor out = soft_attention(tape.constant(oracle::random_tensor(rng, 1, d)),
                                      tape.constant(oracle::random_tensor(rng, 3, d)), z).value();
    CHECK(out == Tensor(1, d));
  }
  SUBCASE("single key gives w1 * h1") {
    const Tensor q = oracle::random_tensor(rng, 1, d), k = oracle::random_tensor(rng, 1, d);
    const Tensor out = soft_attention(tape.constant(q), tape.constant(k), p).value();
    const Vec qq = oracle::matvec(p.query.value(), oracle::row(q, 0));
    const Vec kk = oracle::matvec(p.key.value(), oracle::row(k, 0));
    double w = 0.0;
    for (std::size_t i = 0; i < d; ++i) w += p.alpha.value()[i] * oracle::sigmoid(qq[i] + kk[i]);
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(out[i] - w * k[i]) < 1e-15);
  }
  SUBCASE("random instances match the oracle, batched by segment") {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t queries = 1 + uniform_index(rng, 3);
      std::vector<std::uint32_t> segment;
      for (std::uint32_t s = 0; s < queries; ++s) {
        const std::size_t keys = trial == 0 ? 3 : 1 + uniform_index(rng, 5);
        segment.insert(segment.end(), keys, s);
      }
      const Tensor q = oracle::random_tensor(rng, queries, d);
      const Tensor k = oracle::random_tensor(rng, segment.size(), d);
      const Tensor out = soft_attention(tape.constant(q), tape.constant(k), segment, p).value();
      for (std::uint32_t s = 0; s < queries; ++s) {
        std::vector<Vec> keys;
        for (std::size_t r = 0; r < segment.size(); ++r) {
          if (segment[r] == s) keys.push_back(oracle::row(k, r));
        }
        const Vec ref = oracle::attention(oracle::row(q, s), keys, p.alpha.value(), p.query.value(), p.key.value());
        CHECK(max_diff(out, s, ref) < 1e-12);
      }
    }
  }
}

TEST_CASE("proxies") {
  SUBCASE("hand examples") {
    // POI 0, 1 isolated from 2; 2 has neighbours 3 and 4.
    ModelConfig c;
    c.num_pois = 5;
    c.dim = 2;
    Model m(c);
    m.param("embedding.X").value = Tensor(5, 2, {1, 0, 0, 1, 7, 7, 2, 0, 0, 2});
    GeoGraph g(1.0, {0, 0, 0, 2, 3, 4}, {{3, 0.2}, {4, 0.3}, {2, 0.2}, {2, 0.3}});
    Tape tape;
    const std::vector<PoiIndex> ctx01 = {0, 1};
    const Proxies a = proxies(tape, m, g, ctx01);
    CHECK(a.seq.value() == Tensor::row({0.5, 0.5}));
    CHECK(a.geo.value() == a.seq.value());  // no neighbours: fallback
    const std::vector<PoiIndex> ctx2 = {2};
    CHECK(proxies(tape, m, g, ctx2).geo.value() == Tensor::row({1.0, 1.0}));
  }
  SUBCASE("double-sum oracle with overlapping neighbourhoods") {
    for (std::uint64_t k = 0; k < 100; ++k) {
      Rng rng = keyed_rng({k, 43});
      const std::size_t n = 8 + uniform_index(rng, 10);
      const auto pois = oracle::random_pois(rng, n, 2.0);
      const GeoGraph g = build_geo_graph(pois, 1.0);
      Model m = random_model(n, 3, k);
      const auto dense = oracle::dense_geo(pois, 1.0);
      std::vector<std::vector<PoiIndex>> contexts;
      for (int b = 0; b < 3; ++b) contexts.push_back(oracle::random_context(rng, 1 + uniform_index(rng, 6), n));
      std::vector<const std::vector<PoiIndex>*> ptrs;
      for (const auto& c : contexts) ptrs.push_back(&c);
      Tape tape;
      const Proxies px = proxies(tape, m, g, ptrs);
      for (std::size_t b = 0; b < contexts.size(); ++b) {
        const auto [pg, ps] = oracle::proxies(contexts[b], dense, m.param("embedding.X").value);
        CHECK(max_diff(px.geo.value(), b, pg) < 1e-12);
        CHECK(max_diff(px.seq.value(), b, ps) < 1e-12);
      }
    }
  }
}

TEST_CASE("contrastive loss values") {
  Tape tape;
  auto row = [&](std::initializer_list<double> v) { return tape.constant(Tensor::row(v)); };
  // Equal scores against both proxies: 2 ln 2.
  CHECK(contrastive_loss(row({1, 0}), row({0.3, 0.4}), row({0, 1}), row({0.3, 0.4})).value()[0] ==
        doctest::Approx(2 * std::log(2.0)).epsilon(1e-14));
  // Aligned with own proxy, orthogonal to the other: 2 softplus(-1).
  const double expected = 2.0 * std::log1p(std::exp(-1.0));
  CHECK(contrastive_loss(row({1, 0}), row({1, 0}), row({0, 1}), row({0, 1})).value()[0] ==
        doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.626523).epsilon(1e-6));

  // Scaling with positive margins never increases the loss.
  Rng rng = keyed_rng({47});
  int checked = 0;
  while (checked < 50) {
    const Tensor eg = oracle::random_tensor(rng, 1, 4), pg = oracle::random_tensor(rng, 1, 4);
    const Tensor es = oracle::random_tensor(rng, 1, 4), ps = oracle::random_tensor(rng, 1, 4);
    auto dot = [](const Tensor& a, const Tensor& b) {
      double s = 0;
      for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
      return s;
    };
    if (dot(eg, pg) <= dot(eg, ps) || dot(es, ps) <= dot(es, pg)) continue;
    ++checked;
    double prev = std::numeric_limits<double>::infinity();
    for (double t : {1.0, 2.0, 4.0}) {
      auto sc = [&](const Tensor& x) { return ad::scalar_mul(tape.constant(x), t); };
      const double v = contrastive_loss(sc(eg), sc(pg), sc(es), sc(ps)).value()[0];
      CHECK(v > 0.0);
      CHECK(v <= prev);
      prev = v;
    }
  }
}

TEST_CASE("prediction head") {
  Model m = random_model(5, 3, 9);
  Rng rng = keyed_rng({51});
  Tape tape;
  auto v = [&] { return tape.constant(oracle::random_tensor(rng, 2, 3, -5, 5)); };
  const Var eg = v(), es = v(), xt = v(), ht = v();
  for (double y : predict(tape, m, eg, es, xt, ht).value().values()) {
    CHECK(y > 0.0);
    CHECK(y < 1.0);
  }
  m.param("mlp.W2").value.fill(0.0);
  m.param("mlp.b2").value.fill(0.0);
  for (double y : predict(tape, m, eg, es, xt, ht).value().values()) CHECK(y == 0.5);
  m.param("mlp.b2").value.fill(2.0);
  Var logit;
  const Tensor y = predict(tape, m, eg, es, xt, ht, &logit).value();
  CHECK(logit.value()[0] == 2.0);
  CHECK(y[0] == doctest::Approx(0.880797).epsilon(1e-6));
}

TEST_CASE("binary cross-entropy and total loss") {
  Tape tape;
  const std::uint8_t one[] = {1}, zero[] = {0};
  Var half = tape.constant(Tensor::row({0.5}));
  CHECK(total_loss(bce_loss(tape, half, one), tape.constant(Tensor::row({9.0})), 0.0).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_loss(tape, tape.constant(Tensor::row({0.1})), zero).value()[0] ==
        doctest::Approx(-std::log(0.9)).epsilon(1e-14));
  CHECK(total_loss(tape.constant(Tensor::row({0.1})), tape.constant(Tensor::row({2.0})), 0.3).value()[0] ==
        doctest::Approx(0.7).epsilon(1e-15));
  // Clamped at the edges.
  CHECK(std::isfinite(bce_loss(tape, tape.constant(Tensor::row({1.0})), zero).value()[0]));
}

TEST_CASE("beta = 0 leaves the projection heads without gradient") {
  auto toy = testing::toy_model();
  Model m(toy.config);
  m.initialize(3);
  Tape tape;
  const ForwardOutput out = forward(tape, m, toy.graph, toy.batch, 0.0);
  tape.backward(out.loss);
  CHECK(m.param("proj_g.W").grad == Tensor(toy.config.dim, toy.config.dim));
  CHECK(m.param("proj_s.W").grad == Tensor(toy.config.dim, toy.config.dim));
}

TEST_CASE("end-to-end gradient check on the five-POI toy model") {
  auto toy = testing::toy_model();
  REQUIRE(toy.graph.num_edges() > 0);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (double beta : {0.0, 0.7}) {
      Model m = testing::toy_parameters(toy.config, seed);
      const auto r = testing::model_grad_check(m, toy.graph, toy.batch, beta);
      CAPTURE(r.worst_param);
      CHECK(r.max_rel_error < 1e-3);
    }
  }
  SUBCASE("ablations") {
    for (int arm = 0; arm < 2; ++arm) {
      ModelConfig c = toy.config;
      (arm == 0 ? c.disable_geo_graph : c.disable_seq_graph) = true;
      Model m = testing::toy_parameters(c, 4);
      const auto r = testing::model_grad_check(m, toy.graph, toy.batch, 0.5);
      CAPTURE(r.worst_param);
      CHECK(r.max_rel_error < 1e-3);
    }
  }
}

TEST_CASE("ablated branches are zero") {
  auto toy = testing::toy_model();
  ModelConfig c = toy.config;
  c.disable_geo_graph = true;
  Model m(c);
  m.initialize(5);
  Tape tape;
  const ForwardOutput out = forward(tape, m, toy.graph, toy.batch, 0.4);
  const Tensor zero(toy.batch.size(), c.dim);
  CHECK(out.e_geo.value() == zero);
  CHECK(out.h_target.value() == zero);
  CHECK(out.p_geo.value() == zero);
  CHECK_FALSE(out.e_seq.value() == zero);
}

TEST_CASE("relabelling POIs leaves predictions unchanged") {
  Rng rng = keyed_rng({61});
  const std::size_t n = 12;
  const auto pois = oracle::random_pois(rng, n, 2.0);
  std::vector<PoiIndex> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  shuffle(std::span<PoiIndex>(perm), rng);
  std::vector<LatLon> moved(n);
  for (std::size_t i = 0; i < n; ++i) moved[perm[i]] = pois[i];

  Model a = random_model(n, 4, 6);
  Model b = random_model(n, 4, 6);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      b.param("embedding.X").value(perm[i], k) = a.param("embedding.X").value(i, k);
    }
  }
  std::vector<Sample> s1, s2;
  for (int k = 0; k < 20; ++k) {
    Sample s{0, oracle::random_context(rng, 1 + uniform_index(rng, 6), n),
             static_cast<PoiIndex>(uniform_index(rng, n)), 1};
    s1.push_back(s);
    for (auto& p : s.context) p = perm[p];
    s.target = perm[s.target];
    s2.push_back(s);
  }
  const auto ya = score(a, build_geo_graph(pois, 1.0), s1);
  const auto yb = score(b, build_geo_graph(moved, 1.0), s2);
  for (std::size_t i = 0; i < ya.size(); ++i) CHECK(std::abs(ya[i] - yb[i]) < 1e-12);
}

TEST_CASE("forward is deterministic and chunking does not change scores") {
  auto toy = testing::toy_model();
  Model m(toy.config);
  m.initialize(8);
  const auto a = score(m, toy.graph, toy.batch);
  const auto b = score(m, toy.graph, toy.batch);
  const auto c = score(m, toy.graph, toy.batch, 1);
  CHECK(a == b);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - c[i]) < 1e-13);
}

TEST_CASE("checkpoint round-trip and validation") {
  auto toy = testing::toy_model();
  Model m(toy.config);
  m.initialize(10);
  testing::TempDir dir;
  save_checkpoint(dir / "model.ckpt", m);
  Model back = load_checkpoint(dir / "model.ckpt");
  CHECK(back.config().num_pois == 5);
  CHECK(back.config().mlp_hidden == toy.config.mlp_hidden);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    CHECK(back.params()[i].name == m.params()[i].name);
    CHECK(back.params()[i].value == m.params()[i].value);
  }
  std::string bytes = serialize_checkpoint(m);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)), Error);
  CHECK_THROWS_AS(deserialize_checkpoint("{\"format\": \"other\"}\n"), Error);
  // Out-of-range POI indices are a compatibility error.
  std::vector<Sample> bad = {{0, {9}, 1, 1}};
  try {
    score(m, toy.graph, bad);
    FAIL("expected ManifestMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ManifestMismatch);
  }
}
