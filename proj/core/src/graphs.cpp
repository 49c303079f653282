#include "disenpoi/graphs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "disenpoi/error.hpp"
#include "disenpoi/io.hpp"

namespace disenpoi {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct CellKey {
  std::int64_t x, y, z;
  friend bool operator==(const CellKey&, const CellKey&) = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

GeoGraph assemble(std::size_t n, double delta_d,
                  std::vector<std::vector<GeoNeighbor>>& lists) {
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<GeoNeighbor> flat;
  for (std::size_t i = 0; i < n; ++i) {
    auto& l = lists[i];
    std::sort(l.begin(), l.end(),
              [](const GeoNeighbor& a, const GeoNeighbor& b) { return a.index < b.index; });
    offsets[i + 1] = offsets[i] + l.size();
    flat.insert(flat.end(), l.begin(), l.end());
  }
  return GeoGraph(delta_d, std::move(offsets), std::move(flat));
}

void check_delta(double delta_d) {
  if (!(delta_d > 0.0) || !std::isfinite(delta_d)) {
    throw Error(ErrorCode::InvalidConfig, "delta_d must be positive");
  }
}

}  // namespace

double haversine_km(const LatLon& a, const LatLon& b) {
  const double phi1 = a.lat * kDegToRad;
  const double phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlambda = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

GeoGraph::GeoGraph(double delta_d, std::vector<std::size_t> offsets,
                   std::vector<GeoNeighbor> neighbors)
    : delta_d_(delta_d), offsets_(std::move(offsets)), neighbors_(std::move(neighbors)) {
  if (offsets_.empty() || offsets_.back() != neighbors_.size()) {
    throw Error(ErrorCode::CorruptFile, "inconsistent CSR offsets");
  }
}

GeoGraph build_geo_graph(std::span<const LatLon> pois, double delta_d, GeoBuildStats* stats) {
  check_delta(delta_d);
  const std::size_t n = pois.size();
  GeoBuildStats local;
  std::vector<std::array<double, 3>> xyz(n);
  std::unordered_map<CellKey, std::vector<PoiIndex>, CellHash> cells;
  cells.reserve(n);
  std::vector<CellKey> key_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double phi = pois[i].lat * kDegToRad;
    const double lambda = pois[i].lon * kDegToRad;
    xyz[i] = {kEarthRadiusKm * std::cos(phi) * std::cos(lambda),
              kEarthRadiusKm * std::cos(phi) * std::sin(lambda), kEarthRadiusKm * std::sin(phi)};
    key_of[i] = {static_cast<std::int64_t>(std::floor(xyz[i][0] / delta_d)),
                 static_cast<std::int64_t>(std::floor(xyz[i][1] / delta_d)),
                 static_cast<std::int64_t>(std::floor(xyz[i][2] / delta_d))};
    cells[key_of[i]].push_back(static_cast<PoiIndex>(i));
  }

  std::vector<std::vector<GeoNeighbor>> lists(n);
  for (std::size_t i = 0; i < n; ++i) {
    const CellKey k = key_of[i];
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = cells.find({k.x + dx, k.y + dy, k.z + dz});
          if (it == cells.end()) continue;
          for (PoiIndex j : it->second) {
            if (j <= i) continue;
            ++local.candidate_pairs;
            const double d = haversine_km(pois[i], pois[j]);
            if (d == 0.0) {
              ++local.colocated_pairs;
            } else if (d <= delta_d) {
              lists[i].push_back({j, d});
              lists[j].push_back({static_cast<PoiIndex>(i), d});
            }
          }
        }
      }
    }
  }
  if (stats != nullptr) *stats = local;
  return assemble(n, delta_d, lists);
}

GeoGraph build_geo_graph_bruteforce(std::span<const LatLon> pois, double delta_d) {
  check_delta(delta_d);
  const std::size_t n = pois.size();
  std::vector<std::vector<GeoNeighbor>> lists(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = haversine_km(pois[i], pois[j]);
      if (d > 0.0 && d <= delta_d) {
        lists[i].push_back({static_cast<PoiIndex>(j), d});
        lists[j].push_back({static_cast<PoiIndex>(i), d});
      }
    }
  }
  return assemble(n, delta_d, lists);
}

std::string serialize_geo_graph(const GeoGraph& g) {
  std::string out;
  const auto& adj = g.adjacency();
  out.reserve(16 + 8 * (g.num_nodes() + 1) + 12 * adj.size());
  io::put_u64(out, g.num_nodes());
  io::put_f64(out, g.delta_d());
  for (std::size_t o : g.offsets()) io::put_u64(out, o);
  for (const auto& nb : adj) io::put_u32(out, nb.index);
  for (const auto& nb : adj) io::put_f64(out, nb.distance_km);
  return out;
}

GeoGraph deserialize_geo_graph(std::string_view bytes) {
  io::Reader r(bytes);
  const std::uint64_t n = r.u64();
  const double delta_d = r.f64();
  if (n > r.remaining() / 8) throw Error(ErrorCode::CorruptFile, "geo graph node count too large");
  std::vector<std::size_t> offsets(n + 1);
  for (auto& o : offsets) o = r.u64();
  const std::size_t nnz = offsets.back();
  if (offsets.front() != 0 || !std::is_sorted(offsets.begin(), offsets.end()) ||
      r.remaining() != 12 * nnz) {
    throw Error(ErrorCode::CorruptFile, "geo graph CSR arrays malformed");
  }
  std::vector<GeoNeighbor> adj(nnz);
  for (auto& nb : adj) {
    nb.index = r.u32();
    if (nb.index >= n) throw Error(ErrorCode::CorruptFile, "geo graph neighbour out of range");
  }
  for (auto& nb : adj) nb.distance_km = r.f64();
  return GeoGraph(delta_d, std::move(offsets), std::move(adj));
}

void write_geo_graph(const std::filesystem::path& path, const GeoGraph& g) {
  io::write_file_atomic(path, serialize_geo_graph(g));
}

GeoGraph read_geo_graph(const std::filesystem::path& path) {
  return deserialize_geo_graph(io::read_file(path));
}

SeqGraph build_seq_graph(std::span<const PoiIndex> context) {
  SeqGraph g;
  if (context.empty()) throw Error(ErrorCode::ShapeMismatch, "empty context");
  std::unordered_map<PoiIndex, std::size_t> slot;
  g.alias.reserve(context.size());
  for (PoiIndex p : context) {
    auto [it, inserted] = slot.try_emplace(p, g.nodes.size());
    if (inserted) g.nodes.push_back(p);
    g.alias.push_back(it->second);
  }
  const std::size_t n = g.nodes.size();
  g.n = n;
  std::vector<std::uint8_t> edge(n * n, 0);
  for (std::size_t k = 1; k < context.size(); ++k) {
    edge[g.alias[k - 1] * n + g.alias[k]] = 1;
  }
  g.out_matrix.assign(n * n, 0.0);
  g.in_matrix.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t out_deg = 0, in_deg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out_deg += edge[i * n + j];
      in_deg += edge[j * n + i];
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (edge[i * n + j]) g.out_matrix[i * n + j] = 1.0 / static_cast<double>(out_deg);
      if (edge[j * n + i]) g.in_matrix[i * n + j] = 1.0 / static_cast<double>(in_deg);
    }
  }
  return g;
}

}  // namespace disenpoi
