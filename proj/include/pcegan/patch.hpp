#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcegan/pointcloud.hpp"

namespace pcegan {

// Patch generation and fusion. Every selection here is deterministic:
// FPS starts at index 0, and all distance ties break toward the lower index.

struct Patch {
  std::vector<int> indices;  // rows into the parent cloud, knn order
  int seed_index = -1;
  std::vector<Vec3> geometry;
  std::vector<Vec3> attributes;

  size_t size() const { return indices.size(); }
};

// A patch plus the ids of its num_nei nearest patches (by seed distance).
struct GroupedPatch {
  int center = -1;
  std::vector<int> neighbors;
};

inline double dist2(const Vec3& a, const Vec3& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// ---- farthest point sampling ------------------------------------------

// Greedy max-min sampling. First seed is index 0; each following seed
// maximizes the distance to the already chosen set, lowest index on ties.
inline std::vector<int> farthest_point_sampling(const std::vector<Vec3>& geometry,
                                                int m) {
  const int n = static_cast<int>(geometry.size());
  if (m < 1 || m > n) throw std::invalid_argument("fps: need 1 <= m <= N");
  std::vector<int> seeds;
  seeds.reserve(m);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  int cur = 0;
  seeds.push_back(cur);
  for (int s = 1; s < m; ++s) {
    int far = -1;
    double far_d = -1.0;
    for (int i = 0; i < n; ++i) {
      best[i] = std::min(best[i], dist2(geometry[i], geometry[cur]));
      if (best[i] > far_d) {
        far_d = best[i];
        far = i;
      }
    }
    cur = far;
    seeds.push_back(cur);
  }
  return seeds;
}

// ---- knn ---------------------------------------------------------------

namespace knn_detail {

// kd-tree over the reference set. Exactness (including the lowest-index
// tie rule) is guaranteed by ordering candidates by (distance^2, index) and
// pruning subtrees only when the plane distance strictly exceeds the
// current worst.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& pts) : pts_(pts) {
    order_.resize(pts.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(pts.size());
    root_ = build(0, static_cast<int>(pts.size()), 0);
  }

  // k smallest by (distance^2, index), ascending.
  void query(const Vec3& q, int k, std::vector<int>& out) const {
    Heap heap;
    search(root_, q, k, heap);
    out.resize(heap.size());
    int w = static_cast<int>(heap.size()) - 1;
    while (!heap.empty()) {
      out[w--] = heap.top().second;
      heap.pop();
    }
  }

 private:
  using Cand = std::pair<double, int>;
  using Heap = std::priority_queue<Cand>;  // max at top = current worst

  struct Node {
    int point = -1;
    int left = -1, right = -1;
    int axis = 0;
  };

  const std::vector<Vec3>& pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;

  int build(int lo, int hi, int depth) {
    if (lo >= hi) return -1;
    int axis = depth % 3;
    int mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid,
                     order_.begin() + hi, [&](int a, int b) {
                       if (pts_[a][axis] != pts_[b][axis])
                         return pts_[a][axis] < pts_[b][axis];
                       return a < b;
                     });
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    nodes_[id].point = order_[mid];
    nodes_[id].axis = axis;
    int l = build(lo, mid, depth + 1);
    int r = build(mid + 1, hi, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void search(int id, const Vec3& q, int k, Heap& heap) const {
    if (id < 0) return;
    const Node& nd = nodes_[id];
    Cand c{dist2(q, pts_[nd.point]), nd.point};
    if (static_cast<int>(heap.size()) < k) {
      heap.push(c);
    } else if (c < heap.top()) {
      heap.pop();
      heap.push(c);
    }
    double delta = q[nd.axis] - pts_[nd.point][nd.axis];
    int near = delta < 0 ? nd.left : nd.right;
    int far = delta < 0 ? nd.right : nd.left;
    search(near, q, k, heap);
    if (static_cast<int>(heap.size()) < k || delta * delta <= heap.top().first)
      search(far, q, k, heap);
  }
};

}  // namespace knn_detail

// Flat Q*k index array, row r holding the k nearest reference points of
// query r sorted by ascending distance (ties toward the lower index).
inline std::vector<int> knn(const std::vector<Vec3>& query,
                            const std::vector<Vec3>& reference, int k) {
  if (k < 1 || k > static_cast<int>(reference.size()))
    throw std::invalid_argument("knn: need 1 <= k <= R");
  knn_detail::KdTree tree(reference);
  std::vector<int> out(query.size() * static_cast<size_t>(k));
  std::vector<int> row;
  for (size_t q = 0; q < query.size(); ++q) {
    tree.query(query[q], k, row);
    std::copy(row.begin(), row.end(), out.begin() + q * k);
  }
  return out;
}

// ---- patches -----------------------------------------------------------

inline int patch_point_count(size_t cloud_size, int m, int ol) {
  // n = (N * ol) / m, rounded down
  return static_cast<int>((cloud_size * static_cast<size_t>(ol)) / m);
}

// m overlapping patches: FPS seed plus its n-1 nearest neighbors each.
// The union of patch indices may skip and repeat cloud points.
inline std::vector<Patch> generate_patches(const PointCloud& pc, int m, int ol) {
  pc.validate();
  const size_t N = pc.size();
  if (m < 1 || ol < 1) throw std::invalid_argument("generate_patches: m, ol >= 1");
  int n = patch_point_count(N, m, ol);
  if (n < 1) throw std::invalid_argument("generate_patches: (N*ol)/m < 1");
  if (n > static_cast<int>(N))
    throw std::invalid_argument("generate_patches: patch size exceeds cloud");
  std::vector<int> seeds = farthest_point_sampling(pc.geometry, m);
  std::vector<Vec3> seed_geom(seeds.size());
  for (size_t i = 0; i < seeds.size(); ++i) seed_geom[i] = pc.geometry[seeds[i]];
  std::vector<int> nbr = knn(seed_geom, pc.geometry, n);
  std::vector<Patch> patches(m);
  for (int p = 0; p < m; ++p) {
    Patch& patch = patches[p];
    patch.seed_index = seeds[p];
    patch.indices.assign(nbr.begin() + static_cast<size_t>(p) * n,
                         nbr.begin() + static_cast<size_t>(p + 1) * n);
    patch.geometry.resize(n);
    patch.attributes.resize(n);
    for (int i = 0; i < n; ++i) {
      patch.geometry[i] = pc.geometry[patch.indices[i]];
      patch.attributes[i] = pc.attributes[patch.indices[i]];
    }
  }
  return patches;
}

// For each patch, the num_nei patches with the nearest seed points
// (excluding itself), ordered by seed distance then index.
inline std::vector<GroupedPatch> group_patches(const std::vector<Patch>& patches,
                                               int num_nei) {
  const int m = static_cast<int>(patches.size());
  if (num_nei < 1 || num_nei >= m)
    throw std::invalid_argument("group_patches: need 1 <= num_nei < m");
  std::vector<Vec3> seeds(m);
  for (int i = 0; i < m; ++i) {
    if (patches[i].seed_index < 0 || patches[i].indices.empty())
      throw std::invalid_argument("group_patches: malformed patch");
    seeds[i] = patches[i].geometry[0];
  }
  // k = num_nei + 1 so the patch itself (distance 0) can be dropped
  std::vector<int> nbr = knn(seeds, seeds, num_nei + 1);
  std::vector<GroupedPatch> groups(m);
  for (int p = 0; p < m; ++p) {
    groups[p].center = p;
    for (int j = 0; j <= num_nei; ++j) {
      int q = nbr[static_cast<size_t>(p) * (num_nei + 1) + j];
      if (q == p) continue;
      groups[p].neighbors.push_back(q);
    }
    groups[p].neighbors.resize(num_nei);
  }
  return groups;
}

// Scatter-average of enhanced per-channel values back into a cloud channel.
// Covered points get the mean of all values written to them; uncovered
// points keep the fallback. The mean is computed as v0 + sum(vi - v0)/c so
// identical contributions reproduce the value bit-exactly.
struct EnhancedChannelPatch {
  const std::vector<int>* indices;
  std::vector<double> values;  // one per patch point
};

inline std::vector<double> fuse_patches(
    const std::vector<EnhancedChannelPatch>& enhanced, size_t N,
    const std::vector<double>& fallback) {
  if (fallback.size() != N)
    throw std::invalid_argument("fuse_patches: fallback size mismatch");
  std::vector<double> first(N, 0.0), delta(N, 0.0);
  std::vector<int> count(N, 0);
  for (const auto& ep : enhanced) {
    if (!ep.indices || ep.indices->size() != ep.values.size())
      throw std::invalid_argument("fuse_patches: index/value size mismatch");
    for (size_t i = 0; i < ep.values.size(); ++i) {
      int idx = (*ep.indices)[i];
      if (idx < 0 || idx >= static_cast<int>(N))
        throw std::invalid_argument("fuse_patches: index out of range");
      if (count[idx] == 0) first[idx] = ep.values[i];
      else delta[idx] += ep.values[i] - first[idx];
      ++count[idx];
    }
  }
  std::vector<double> out(N);
  for (size_t i = 0; i < N; ++i)
    out[i] = count[i] ? first[i] + delta[i] / count[i] : fallback[i];
  return out;
}

// ---- patch archive -----------------------------------------------------
//
// Record stream so training can skip patch regeneration, version 1:
//   magic "PCEGPTCH", u32 version, u32 count, u32 n, u32 num_nei,
//   u8 has_original; per patch: u32 seed_index, u32 index[n],
//   f64 geometry[3n], f64 attributes[3n], (f64 original_attributes[3n]),
//   u32 neighbor_patch[num_nei].

struct PatchSet {
  std::vector<Patch> patches;               // distorted working patches
  std::vector<GroupedPatch> groups;
  std::vector<std::vector<Vec3>> original;  // per-patch original attrs, may be empty
};

inline PatchSet build_patch_set(const PointCloud& distorted, int m, int ol,
                                int num_nei, const PointCloud* original = nullptr) {
  if (original && original->size() != distorted.size())
    throw std::invalid_argument("build_patch_set: cloud size mismatch");
  PatchSet set;
  set.patches = generate_patches(distorted, m, ol);
  set.groups = group_patches(set.patches, num_nei);
  if (original) {
    set.original.resize(set.patches.size());
    for (size_t p = 0; p < set.patches.size(); ++p) {
      const auto& idx = set.patches[p].indices;
      set.original[p].resize(idx.size());
      for (size_t i = 0; i < idx.size(); ++i)
        set.original[p][i] = original->attributes[idx[i]];
    }
  }
  return set;
}

namespace archive_detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t get_u32(std::istream& is) {
  uint32_t v;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw std::runtime_error("patch archive: truncated");
  return v;
}

inline void put_vec3s(std::ostream& os, const std::vector<Vec3>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(Vec3)));
}

inline void get_vec3s(std::istream& is, std::vector<Vec3>& v) {
  if (!is.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(Vec3))))
    throw std::runtime_error("patch archive: truncated");
}

}  // namespace archive_detail

inline void save_patch_set(const PatchSet& set, const std::string& path) {
  using namespace archive_detail;
  if (set.patches.empty()) throw std::invalid_argument("patch archive: empty set");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("patch archive: cannot write " + path);
  const uint32_t n = static_cast<uint32_t>(set.patches[0].size());
  const uint32_t num_nei = static_cast<uint32_t>(set.groups[0].neighbors.size());
  const bool has_orig = !set.original.empty();
  os.write("PCEGPTCH", 8);
  put_u32(os, 1);
  put_u32(os, static_cast<uint32_t>(set.patches.size()));
  put_u32(os, n);
  put_u32(os, num_nei);
  char flag = has_orig ? 1 : 0;
  os.write(&flag, 1);
  for (size_t p = 0; p < set.patches.size(); ++p) {
    const Patch& patch = set.patches[p];
    put_u32(os, static_cast<uint32_t>(patch.seed_index));
    for (int i : patch.indices) put_u32(os, static_cast<uint32_t>(i));
    put_vec3s(os, patch.geometry);
    put_vec3s(os, patch.attributes);
    if (has_orig) put_vec3s(os, set.original[p]);
    for (int q : set.groups[p].neighbors) put_u32(os, static_cast<uint32_t>(q));
  }
  if (!os) throw std::runtime_error("patch archive: write failed " + path);
}

inline PatchSet load_patch_set(const std::string& path) {
  using namespace archive_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("patch archive: cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != "PCEGPTCH")
    throw std::runtime_error("patch archive: bad magic");
  if (get_u32(is) != 1) throw std::runtime_error("patch archive: unsupported version");
  uint32_t count = get_u32(is), n = get_u32(is), num_nei = get_u32(is);
  char flag;
  is.read(&flag, 1);
  PatchSet set;
  set.patches.resize(count);
  set.groups.resize(count);
  if (flag) set.original.resize(count);
  for (uint32_t p = 0; p < count; ++p) {
    Patch& patch = set.patches[p];
    patch.seed_index = static_cast<int>(get_u32(is));
    patch.indices.resize(n);
    for (uint32_t i = 0; i < n; ++i) patch.indices[i] = static_cast<int>(get_u32(is));
    patch.geometry.resize(n);
    patch.attributes.resize(n);
    get_vec3s(is, patch.geometry);
    get_vec3s(is, patch.attributes);
    if (flag) {
      set.original[p].resize(n);
      get_vec3s(is, set.original[p]);
    }
    set.groups[p].center = static_cast<int>(p);
    set.groups[p].neighbors.resize(num_nei);
    for (uint32_t i = 0; i < num_nei; ++i)
      set.groups[p].neighbors[i] = static_cast<int>(get_u32(is));
  }
  return set;
}

}  // namespace pcegan
