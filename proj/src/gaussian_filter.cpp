#include "semmap/gaussian_filter.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace semmap {
namespace {

// Open-addressing table from lattice keys (first d coordinates) to dense
// slots. Slots are assigned in insertion order, so construction is
// deterministic.
class LatticeHash {
 public:
  explicit LatticeHash(int key_size, std::size_t expected) : key_size_(key_size) {
    std::size_t cap = 64;
    while (cap < 2 * expected) cap <<= 1;
    table_.assign(cap, -1);
    keys_.reserve(expected * key_size);
  }

  std::size_t size() const { return count_; }

  std::int32_t find(const std::int32_t* key, bool create) {
    if (create && 2 * count_ >= table_.size()) grow();
    std::size_t h = hash(key) & (table_.size() - 1);
    while (true) {
      const std::int32_t slot = table_[h];
      if (slot < 0) {
        if (!create) return -1;
        table_[h] = static_cast<std::int32_t>(count_);
        keys_.insert(keys_.end(), key, key + key_size_);
        return static_cast<std::int32_t>(count_++);
      }
      if (std::memcmp(&keys_[static_cast<std::size_t>(slot) * key_size_], key, sizeof(std::int32_t) * key_size_) == 0)
        return slot;
      h = (h + 1) & (table_.size() - 1);
    }
  }

  const std::int32_t* key(std::size_t slot) const { return &keys_[slot * key_size_]; }

 private:
  std::size_t hash(const std::int32_t* key) const {
    std::size_t k = 0;
    for (int i = 0; i < key_size_; ++i) {
      k += static_cast<std::size_t>(static_cast<std::uint32_t>(key[i]));
      k *= 2531011u;
    }
    return k ^ (k >> 29);
  }

  void grow() {
    std::vector<std::int32_t> bigger(table_.size() * 2, -1);
    for (std::size_t slot = 0; slot < count_; ++slot) {
      std::size_t h = hash(key(slot)) & (bigger.size() - 1);
      while (bigger[h] >= 0) h = (h + 1) & (bigger.size() - 1);
      bigger[h] = static_cast<std::int32_t>(slot);
    }
    table_.swap(bigger);
  }

  int key_size_;
  std::size_t count_ = 0;
  std::vector<std::int32_t> table_;
  std::vector<std::int32_t> keys_;
};

}  // namespace

ExactGaussianFilter::ExactGaussianFilter(Eigen::MatrixXd features) : features_(std::move(features)) {
  if (features_.rows() < 1) throw FeatureError("filter needs at least one point");
  if (!features_.allFinite()) throw FeatureError("non-finite feature values");
}

Eigen::MatrixXd ExactGaussianFilter::filter(const Eigen::Ref<const Eigen::MatrixXd>& values) const {
  const Eigen::Index n = features_.rows();
  if (values.rows() != n) throw FilterShapeError("value rows do not match the filter's point count");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, values.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) += values.row(i);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double k = std::exp(-0.5 * (features_.row(i) - features_.row(j)).squaredNorm());
      out.row(i) += k * values.row(j);
      out.row(j) += k * values.row(i);
    }
  }
  return out;
}

PermutohedralLattice PermutohedralLattice::build(const Eigen::Ref<const Eigen::MatrixXd>& features) {
  const Eigen::Index n = features.rows();
  const int d = static_cast<int>(features.cols());
  if (n < 1 || d < 1) throw FeatureError("lattice needs at least one point and one feature dimension");
  if (!features.allFinite()) throw FeatureError("non-finite feature values");

  PermutohedralLattice lat;
  lat.dim_ = d;
  lat.point_count_ = n;
  lat.alpha_ = 1.0 / (1.0 + std::pow(2.0, -d));
  const int d1 = d + 1;
  lat.offsets_.resize(static_cast<std::size_t>(n) * d1);
  lat.barycentric_.resize(static_cast<std::size_t>(n) * d1);
  lat.step_dir_.resize(static_cast<std::size_t>(n) * d1);

  // Scale so that the lattice blur approximates a unit-variance Gaussian.
  std::vector<double> scale(d);
  const double inv_std_dev = std::sqrt(2.0 / 3.0) * d1;
  for (int i = 0; i < d; ++i) scale[i] = inv_std_dev / std::sqrt(static_cast<double>((i + 1) * (i + 2)));

  // canonical[r][k]: offset of vertex r for a coordinate of rank k.
  std::vector<int> canonical(d1 * d1);
  for (int r = 0; r <= d; ++r) {
    for (int k = 0; k <= d - r; ++k) canonical[r * d1 + k] = r;
    for (int k = d - r + 1; k <= d; ++k) canonical[r * d1 + k] = r - d1;
  }

  LatticeHash hash(d, static_cast<std::size_t>(n) * d1);
  std::vector<double> elevated(d1), bary(d + 2);
  std::vector<std::int64_t> rem0(d1);
  std::vector<int> rank(d1);
  std::vector<std::int32_t> key(d);
  const double down_factor = 1.0 / d1;

  for (Eigen::Index p = 0; p < n; ++p) {
    // Elevate onto the hyperplane sum(x) = 0 in d+1 dimensions.
    double sm = 0.0;
    for (int j = d; j > 0; --j) {
      const double cf = features(p, j - 1) * scale[j - 1];
      elevated[j] = sm - j * cf;
      sm += cf;
    }
    elevated[0] = sm;

    // Nearest remainder-0 point.
    std::int64_t sum = 0;
    for (int i = 0; i <= d; ++i) {
      const double v = down_factor * elevated[i];
      const double up = std::ceil(v) * d1;
      const double down = std::floor(v) * d1;
      rem0[i] = static_cast<std::int64_t>(up - elevated[i] < elevated[i] - down ? up : down);
      sum += rem0[i];
    }
    sum /= d1;

    // Rank the differential to find the enclosing simplex.
    std::fill(rank.begin(), rank.end(), 0);
    for (int i = 0; i < d; ++i) {
      const double di = elevated[i] - rem0[i];
      for (int j = i + 1; j <= d; ++j) {
        if (di < elevated[j] - rem0[j])
          ++rank[i];
        else
          ++rank[j];
      }
    }
    for (int i = 0; i <= d; ++i) {
      rank[i] += static_cast<int>(sum);
      if (rank[i] < 0) {
        rank[i] += d1;
        rem0[i] += d1;
      } else if (rank[i] > d) {
        rank[i] -= d1;
        rem0[i] -= d1;
      }
    }

    std::fill(bary.begin(), bary.end(), 0.0);
    for (int i = 0; i <= d; ++i) {
      const double v = (elevated[i] - rem0[i]) * down_factor;
      bary[d - rank[i]] += v;
      bary[d - rank[i] + 1] -= v;
    }
    bary[0] += 1.0 + bary[d + 1];

    const std::size_t base = static_cast<std::size_t>(p) * d1;
    for (int r = 0; r <= d; ++r) {
      for (int i = 0; i < d; ++i) key[i] = static_cast<std::int32_t>(rem0[i] + canonical[r * d1 + rank[i]]);
      lat.offsets_[base + r] = hash.find(key.data(), true);
      lat.barycentric_[base + r] = bary[r];
    }
    // Vertex r+1 is vertex r moved one step along the coordinate of rank d-r.
    for (int i = 0; i <= d; ++i) lat.step_dir_[base + (d - rank[i])] = static_cast<std::int8_t>(i);
  }

  const std::size_t m = hash.size();
  lat.vertex_count_ = m;
  lat.neighbors_.assign(static_cast<std::size_t>(d1) * m * 2, static_cast<std::int32_t>(m));
  std::vector<std::int32_t> plus(d), minus(d);
  for (int j = 0; j <= d; ++j) {
    for (std::size_t v = 0; v < m; ++v) {
      const std::int32_t* k = hash.key(v);
      for (int i = 0; i < d; ++i) {
        minus[i] = k[i] - 1;
        plus[i] = k[i] + 1;
      }
      if (j < d) {
        minus[j] = k[j] + d;
        plus[j] = k[j] - d;
      }
      const std::int32_t a = hash.find(minus.data(), false);
      const std::int32_t b = hash.find(plus.data(), false);
      const std::size_t at = (static_cast<std::size_t>(j) * m + v) * 2;
      if (a >= 0) lat.neighbors_[at] = a;
      if (b >= 0) lat.neighbors_[at + 1] = b;
    }
  }

  lat.compute_self_responses();
  lat.calibrate(features);
  return lat;
}

double PermutohedralLattice::path_weight(std::int32_t source, const std::vector<int>& steps) const {
  const auto m = static_cast<std::int32_t>(vertex_count_);
  std::int32_t cur = source;
  double w = 1.0;
  for (int j = 0; j <= dim_; ++j) {
    if (steps[j] == 0) continue;
    cur = neighbors_[(static_cast<std::size_t>(j) * vertex_count_ + cur) * 2 + (steps[j] > 0 ? 1 : 0)];
    if (cur == m) return 0.0;
    w *= 0.5;
  }
  return w;
}

// Lattice self response of each point: alpha * sum_{r,r'} w_r w_r' B(v_r <- v_r'),
// where B is the forward blur. Mass moves between simplex vertices only along
// direction-step vectors n in {-1,0,1}^(d+1); since the d+1 steps sum to zero,
// each vertex pair is joined by at most three such vectors.
void PermutohedralLattice::compute_self_responses() {
  const int d1 = dim_ + 1;
  lattice_self_.assign(point_count_, 0.0);
  std::vector<int> steps(d1);
  for (Eigen::Index p = 0; p < point_count_; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * d1;
    double total = 0.0;
    for (int src = 0; src <= dim_; ++src) {
      const double ws = barycentric_[base + src];
      if (ws == 0.0) continue;
      const std::int32_t source = offsets_[base + src];
      for (int dst = 0; dst <= dim_; ++dst) {
        const double wd = barycentric_[base + dst];
        if (wd == 0.0) continue;
        double b = 0.0;
        if (src == dst) {
          std::fill(steps.begin(), steps.end(), 0);
          b += 1.0;
          std::fill(steps.begin(), steps.end(), 1);
          b += path_weight(source, steps);
          std::fill(steps.begin(), steps.end(), -1);
          b += path_weight(source, steps);
        } else {
          // S = directions stepped between the lower and higher vertex index.
          const int lo = std::min(src, dst), hi = std::max(src, dst);
          const int sign = dst > src ? 1 : -1;
          std::fill(steps.begin(), steps.end(), 0);
          for (int q = lo; q < hi; ++q) steps[step_dir_[base + q]] = sign;
          b += path_weight(source, steps);
          for (int& s : steps) s = (s == 0) ? -sign : 0;
          b += path_weight(source, steps);
        }
        total += ws * wd * b;
      }
    }
    lattice_self_[p] = alpha_ * total;
  }
}

Eigen::MatrixXd PermutohedralLattice::raw_filter(const Eigen::Ref<const Eigen::MatrixXd>& values) const {
  if (values.rows() != point_count_) throw FilterShapeError("value rows do not match the lattice point count");
  const Eigen::Index cols = values.cols();
  const int d1 = dim_ + 1;
  const std::size_t m = vertex_count_;
  const std::size_t width = static_cast<std::size_t>(cols);

  // Row m is a permanent zero row standing in for absent neighbors.
  std::vector<double> splat((m + 1) * width, 0.0);
  for (Eigen::Index p = 0; p < point_count_; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * d1;
    for (int r = 0; r <= dim_; ++r) {
      double* dst = &splat[static_cast<std::size_t>(offsets_[base + r]) * width];
      const double w = barycentric_[base + r];
      for (Eigen::Index l = 0; l < cols; ++l) dst[l] += w * values(p, l);
    }
  }

  auto blur = [&](bool reverse) {
    std::vector<double> cur = splat, next((m + 1) * width, 0.0);
    for (int step = 0; step <= dim_; ++step) {
      const int j = reverse ? dim_ - step : step;
      const std::int32_t* nb = &neighbors_[static_cast<std::size_t>(j) * m * 2];
      for (std::size_t v = 0; v < m; ++v) {
        const double* c = &cur[v * width];
        const double* a = &cur[static_cast<std::size_t>(nb[2 * v]) * width];
        const double* b = &cur[static_cast<std::size_t>(nb[2 * v + 1]) * width];
        double* o = &next[v * width];
        for (std::size_t l = 0; l < width; ++l) o[l] = c[l] + 0.5 * (a[l] + b[l]);
      }
      cur.swap(next);
    }
    return cur;
  };
  const std::vector<double> fwd = blur(false);
  const std::vector<double> rev = blur(true);

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(point_count_, cols);
  for (Eigen::Index p = 0; p < point_count_; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * d1;
    for (int r = 0; r <= dim_; ++r) {
      const std::size_t at = static_cast<std::size_t>(offsets_[base + r]) * width;
      const double w = 0.5 * alpha_ * barycentric_[base + r];
      for (Eigen::Index l = 0; l < cols; ++l) out(p, l) += w * (fwd[at + l] + rev[at + l]);
    }
  }
  return out;
}

void PermutohedralLattice::calibrate(const Eigen::Ref<const Eigen::MatrixXd>& features) {
  const Eigen::Index n = point_count_;
  const Eigen::Index samples = std::min<Eigen::Index>(n, 64);
  const Eigen::MatrixXd ones_response = raw_filter(Eigen::MatrixXd::Ones(n, 1));
  double exact_sum = 0.0, lattice_sum = 0.0;
  for (Eigen::Index s = 0; s < samples; ++s) {
    const Eigen::Index i = s * n / samples;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) exact_sum += std::exp(-0.5 * (features.row(i) - features.row(j)).squaredNorm());
    lattice_sum += ones_response(i, 0) - lattice_self_[i];
  }
  gain_ = (exact_sum > 1e-12 && lattice_sum > 1e-12) ? exact_sum / lattice_sum : 1.0;
}

Eigen::MatrixXd PermutohedralLattice::filter(const Eigen::Ref<const Eigen::MatrixXd>& values) const {
  Eigen::MatrixXd out = raw_filter(values);
  for (Eigen::Index p = 0; p < point_count_; ++p)
    out.row(p) = gain_ * (out.row(p) - lattice_self_[p] * values.row(p)) + values.row(p);
  return out;
}

std::vector<std::int32_t> PermutohedralLattice::vertices_of(Eigen::Index i) const {
  const std::size_t base = static_cast<std::size_t>(i) * (dim_ + 1);
  return {offsets_.begin() + base, offsets_.begin() + base + dim_ + 1};
}

std::vector<double> PermutohedralLattice::weights_of(Eigen::Index i) const {
  const std::size_t base = static_cast<std::size_t>(i) * (dim_ + 1);
  return {barycentric_.begin() + base, barycentric_.begin() + base + dim_ + 1};
}

std::unique_ptr<GaussianFilter> make_filter(FilterBackend backend, const Eigen::Ref<const Eigen::MatrixXd>& features) {
  if (backend == FilterBackend::ExactSum) return std::make_unique<ExactGaussianFilter>(features);
  return std::make_unique<PermutohedralLattice>(PermutohedralLattice::build(features));
}

}  // namespace semmap
