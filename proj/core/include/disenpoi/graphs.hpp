#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "disenpoi/ingest.hpp"

namespace disenpoi {

inline constexpr double kEarthRadiusKm = 6371.0088;

/// Great-circle distance in kilometres on a sphere of radius kEarthRadiusKm.
double haversine_km(const LatLon& a, const LatLon& b);

struct GeoNeighbor {
  PoiIndex index = 0;
  double distance_km = 0.0;

  friend bool operator==(const GeoNeighbor&, const GeoNeighbor&) = default;
};

/// Undirected POI graph joining every pair with 0 < distance <= delta_d.
/// Adjacency is CSR with neighbours sorted by index.
class GeoGraph {
 public:
  GeoGraph() = default;
  GeoGraph(double delta_d, std::vector<std::size_t> offsets,
           std::vector<GeoNeighbor> neighbors);

  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_edges() const { return neighbors_.size() / 2; }
  double delta_d() const { return delta_d_; }

  std::span<const GeoNeighbor> neighbors(PoiIndex i) const {
    return {neighbors_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::size_t degree(PoiIndex i) const { return offsets_[i + 1] - offsets_[i]; }

  const std::vector<std::size_t>& offsets() const { return offsets_; }
  const std::vector<GeoNeighbor>& adjacency() const { return neighbors_; }

  friend bool operator==(const GeoGraph&, const GeoGraph&) = default;

 private:
  double delta_d_ = 0.0;
  std::vector<std::size_t> offsets_ = {0};
  std::vector<GeoNeighbor> neighbors_;
};

struct GeoBuildStats {
  std::size_t colocated_pairs = 0;  // distinct POIs at distance 0, left unconnected
  std::size_t candidate_pairs = 0;  // pairs examined after bucketing
};

/// Spatial hashing on a 3-D grid (cell = delta_d) over points on the sphere;
/// chord length never exceeds arc length, so the 27-cell stencil is complete.
GeoGraph build_geo_graph(std::span<const LatLon> pois, double delta_d,
                         GeoBuildStats* stats = nullptr);

/// O(n^2) pairwise reference construction.
GeoGraph build_geo_graph_bruteforce(std::span<const LatLon> pois, double delta_d);

// geo_graph.bin: u64 num_nodes, f64 delta_d, u64 offsets[num_nodes + 1],
// u32 neighbor[nnz], f64 distance_km[nnz]; all little-endian.
std::string serialize_geo_graph(const GeoGraph& g);
GeoGraph deserialize_geo_graph(std::string_view bytes);
void write_geo_graph(const std::filesystem::path& path, const GeoGraph& g);
GeoGraph read_geo_graph(const std::filesystem::path& path);

/// Directed session graph over the distinct POIs of one context.
struct SeqGraph {
  std::vector<PoiIndex> nodes;     // first-occurrence order
  std::vector<std::size_t> alias;  // context position -> node slot
  std::size_t n = 0;
  // Dense n x n row-major blocks. out(i, j) > 0 iff i -> j occurs, rows
  // divided by out-degree; in(i, j) > 0 iff j -> i occurs, rows divided by
  // in-degree.
  std::vector<double> out_matrix;
  std::vector<double> in_matrix;

  double out_at(std::size_t i, std::size_t j) const { return out_matrix[i * n + j]; }
  double in_at(std::size_t i, std::size_t j) const { return in_matrix[i * n + j]; }
};

SeqGraph build_seq_graph(std::span<const PoiIndex> context);

}  // namespace disenpoi
