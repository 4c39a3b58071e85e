#include "hubert_ap/kmeans.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace hubert_ap {
namespace {

constexpr char kCodebookMagic[4] = {'H', 'A', 'P', 'K'};
constexpr std::uint32_t kCodebookVersion = 1;

struct Assignment {
  std::vector<int> labels;
  std::vector<double> dist;  // squared distance to the assigned centroid
  double total = 0.0;
};

Assignment assign_all(const Matrix& centroids, const Matrix& rows) {
  const Eigen::Index n = rows.rows();
  Assignment a;
  a.labels.resize(n);
  a.dist.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (rows.row(i) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    a.labels[i] = best;
    a.dist[i] = best_d;
    a.total += best_d;
  }
  return a;
}

Matrix subsample(const Matrix& frames, std::size_t cap, Rng& rng) {
  const auto n = static_cast<std::size_t>(frames.rows());
  if (n <= cap) return frames;
  // Partial Fisher-Yates, then restore input order.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  Matrix out(static_cast<Eigen::Index>(cap), frames.cols());
  for (std::size_t i = 0; i < cap; ++i) out.row(static_cast<Eigen::Index>(i)) = frames.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

Matrix kmeanspp_init(const Matrix& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Matrix centroids(k, x.cols());
  centroids.row(0) = x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (x.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centroids.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (x.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

}  // namespace

Matrix pool_frames(const std::vector<FeatureMatrix>& utterances) {
  Eigen::Index rows = 0;
  Eigen::Index dim = utterances.empty() ? 0 : utterances.front().frames.cols();
  for (const auto& u : utterances) {
    if (u.frames.cols() != dim) throw Error("kmeans: inconsistent feature dims across utterances");
    rows += u.frames.rows();
  }
  Matrix out(rows, dim);
  Eigen::Index at = 0;
  for (const auto& u : utterances) {
    out.middleRows(at, u.frames.rows()) = u.frames;
    at += u.frames.rows();
  }
  return out;
}

KMeansResult kmeans_fit(const Matrix& frames, const KMeansConfig& config) {
  if (config.k < 1) throw Error("kmeans: k must be >= 1");
  if (frames.rows() < config.k) {
    throw Error("kmeans: " + std::to_string(frames.rows()) + " frames is fewer than k=" + std::to_string(config.k));
  }
  if (!frames.allFinite()) throw Error("kmeans: non-finite input frame");
  if (config.max_iters < 0) throw Error("kmeans: max_iters must be >= 0");

  Rng rng(config.seed);
  const Matrix x = subsample(frames, std::max<std::size_t>(config.max_frames, config.k), rng);
  const int k = config.k;
  const Eigen::Index n = x.rows();

  KMeansResult result;
  Matrix centroids = kmeanspp_init(x, k, rng);
  std::vector<Eigen::Index> counts(k);
  for (int iter = 0;; ++iter) {
    const Assignment a = assign_all(centroids, x);
    std::fill(counts.begin(), counts.end(), 0);
    for (int l : a.labels) ++counts[l];
    const bool any_empty = std::find(counts.begin(), counts.end(), 0) != counts.end();
    const double prev = result.inertia_trace.empty() ? 0.0 : result.inertia_trace.back();
    result.inertia_trace.push_back(a.total);
    result.iterations = iter;
    if (iter == config.max_iters || a.total == 0.0) break;
    if (iter > 0 && !any_empty && prev - a.total <= config.rel_tol * prev) break;

    // Mean update.
    Matrix sums = Matrix::Zero(k, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) sums.row(a.labels[i]) += x.row(i);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);
    }
    if (any_empty) {
      std::vector<double> dist(n);
      for (Eigen::Index i = 0; i < n; ++i) dist[i] = (x.row(i) - centroids.row(a.labels[i])).squaredNorm();
      for (int c = 0; c < k; ++c) {
        if (counts[c] != 0) continue;
        const auto far = std::distance(dist.begin(), std::max_element(dist.begin(), dist.end()));
        centroids.row(c) = x.row(far);
        dist[far] = -1.0;
      }
    }
  }
  result.codebook.centroids = std::move(centroids);
  result.codebook.train_inertia = result.inertia_trace.back();
  return result;
}

std::vector<int> assign_rows(const Codebook& codebook, const Matrix& rows) {
  if (rows.cols() != codebook.centroids.cols()) {
    throw Error("kmeans: feature dim " + std::to_string(rows.cols()) + " does not match codebook dim " +
                std::to_string(codebook.centroids.cols()));
  }
  return assign_all(codebook.centroids, rows).labels;
}

CodeSequence assign(const Codebook& codebook, const FeatureMatrix& features) {
  return {features.utt_id, assign_rows(codebook, features.frames)};
}

double inertia(const Codebook& codebook, const Matrix& rows) {
  if (rows.cols() != codebook.centroids.cols()) throw Error("kmeans: feature dim mismatch");
  return assign_all(codebook.centroids, rows).total;
}

void save_codebook(const std::filesystem::path& path, const Codebook& codebook) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto k = static_cast<std::uint32_t>(codebook.k());
  const auto d = static_cast<std::uint32_t>(codebook.feature_dim());
  out.write(kCodebookMagic, 4);
  out.write(reinterpret_cast<const char*>(&kCodebookVersion), 4);
  out.write(reinterpret_cast<const char*>(&k), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  out.write(reinterpret_cast<const char*>(&codebook.train_inertia), 8);
  for (std::uint32_t r = 0; r < k; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) {
      const double v = codebook.centroids(r, c);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
  }
}

Codebook load_codebook(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[4];
  std::uint32_t version = 0, k = 0, d = 0;
  Codebook cb;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&k), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  in.read(reinterpret_cast<char*>(&cb.train_inertia), 8);
  if (!in) throw Error(path.string() + ": truncated codebook header");
  if (std::memcmp(magic, kCodebookMagic, 4) != 0) throw Error(path.string() + ": bad codebook magic");
  if (version != kCodebookVersion) throw Error(path.string() + ": unsupported codebook version " + std::to_string(version));
  if (k == 0 || d == 0) throw Error(path.string() + ": empty codebook");
  cb.centroids.resize(k, d);
  for (std::uint32_t r = 0; r < k; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) {
      double v;
      in.read(reinterpret_cast<char*>(&v), 8);
      if (!in) throw Error(path.string() + ": truncated codebook data");
      if (!std::isfinite(v)) throw Error(path.string() + ": non-finite centroid");
      cb.centroids(r, c) = v;
    }
  }
  return cb;
}

}  // namespace hubert_ap
