#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hubert_ap/common.hpp"
#include "hubert_ap/io.hpp"
#include "hubert_ap/mfcc.hpp"

namespace hubert_ap {

struct KMeansConfig {
  int k = 100;
  int max_iters = 100;
  std::uint64_t seed = 0;
  double rel_tol = 1e-6;
  /// Pooled frames beyond this count are uniformly subsampled before fitting.
  std::size_t max_frames = 500000;
};

struct Codebook {
  Matrix centroids;  // k x D
  double train_inertia = 0.0;

  int k() const { return static_cast<int>(centroids.rows()); }
  int feature_dim() const { return static_cast<int>(centroids.cols()); }
};

struct KMeansResult {
  Codebook codebook;
  /// Inertia after every assignment step, in order.
  std::vector<double> inertia_trace;
  int iterations = 0;
};

/// Stacks the frames of many utterances into one matrix.
Matrix pool_frames(const std::vector<FeatureMatrix>& utterances);

/// k-means++ seeding followed by Lloyd iterations. An empty cluster is
/// re-seeded to the point farthest from its centroid.
KMeansResult kmeans_fit(const Matrix& frames, const KMeansConfig& config);

/// Nearest centroid per row in squared Euclidean distance; ties go to the
/// lowest centroid index.
std::vector<int> assign_rows(const Codebook& codebook, const Matrix& rows);

CodeSequence assign(const Codebook& codebook, const FeatureMatrix& features);

/// Sum of squared distances of rows to their nearest centroid.
double inertia(const Codebook& codebook, const Matrix& rows);

void save_codebook(const std::filesystem::path& path, const Codebook& codebook);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace hubert_ap
