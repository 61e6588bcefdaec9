// Generation and labeling of the epistemic dataset:
//   - candidates drawn around each training input from N(x_i, diag(gamma))
//   - per-candidate minimal Euclidean distance to the training inputs
//   - the N_tr closest candidates become label 0 and snap onto their
//     nearest training input, the rest become label 1
// plus a streaming update that stays exactly equivalent to relabeling
// the union of all raw candidates from scratch.
#pragma once

#include "epiout/csv.hpp"
#include "epiout/kdtree.hpp"

#include <algorithm>
#include <vector>

namespace epiout {

enum class DistanceMetric { euclidean };  // extension point, single variant

struct SamplerConfig {
  Vector gamma;       // diagonal of the sampling covariance, per input dim
  int delta = 0;      // candidates per training point; 0 = 2*d_x+1 default
  std::uint64_t seed = 0;
  DistanceMetric metric = DistanceMetric::euclidean;

  int resolved_delta(int d_x) const { return delta > 0 ? delta : 2 * d_x + 1; }

  Vector resolved_gamma(int d_x) const {
    if (gamma.size() == 0) return Vector::Ones(d_x);
    require(gamma.size() == d_x, "SamplerConfig: gamma size mismatch");
    require(gamma.minCoeff() > 0.0, "SamplerConfig: gamma must be positive");
    return gamma;
  }
};

struct EpiSet {
  Matrix raw_inputs;            // as sampled, before any snapping
  Matrix inputs;                // label-0 rows replaced by training inputs
  std::vector<int> labels;      // 0 near data, 1 far from data
  std::vector<int> provenance;  // generating training index
  std::vector<int> nn_index;    // nearest training index per raw candidate
  std::vector<double> distances;
  double threshold = 0.0;       // the N_tr-th smallest distance
  int zeros = 0;                // may exceed N_tr when distances tie

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(inputs.cols()); }

  Vector labels_vector() const {
    Vector v(size());
    for (int i = 0; i < size(); ++i) v(i) = labels[i];
    return v;
  }
};

// delta Gaussian draws per training point, deterministic in rng state.
inline Matrix sample_epi_inputs(const Matrix& x_tr, const SamplerConfig& cfg, Rng& rng,
                                std::vector<int>* provenance = nullptr) {
  require(x_tr.rows() >= 1, "sample_epi_inputs: empty training set");
  const int d = static_cast<int>(x_tr.cols());
  const int delta = cfg.resolved_delta(d);
  const Vector stddev = cfg.resolved_gamma(d).cwiseSqrt();
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix candidates(x_tr.rows() * delta, d);
  int row = 0;
  for (int i = 0; i < x_tr.rows(); ++i) {
    for (int j = 0; j < delta; ++j, ++row) {
      for (int k = 0; k < d; ++k)
        candidates(row, k) = x_tr(i, k) + stddev(k) * gauss(rng);
      if (provenance) provenance->push_back(i);
    }
  }
  return candidates;
}

inline Matrix sample_epi_inputs(const Matrix& x_tr, const SamplerConfig& cfg) {
  Rng rng(cfg.seed);
  return sample_epi_inputs(x_tr, cfg, rng);
}

// Minimal distance from each candidate to the training inputs. The nearest
// point is searched over all of x_tr, not just the generating point.
inline void min_distances(const Matrix& candidates, const KdTree& tree,
                          std::vector<double>& distances, std::vector<int>& nn_index) {
  require(candidates.rows() >= 1, "min_distances: no candidates");
  require(candidates.cols() == tree.dim(), "min_distances: dimension mismatch");
  const int n = static_cast<int>(candidates.rows());
  distances.resize(n);
  nn_index.resize(n);
  for (int i = 0; i < n; ++i) {
    auto r = tree.nearest(candidates.row(i).transpose());
    distances[i] = r.distance;
    nn_index[i] = r.index;
  }
}

inline std::vector<double> min_distances(const Matrix& candidates, const Matrix& x_tr) {
  require(x_tr.rows() >= 1, "min_distances: empty training set");
  KdTree tree(x_tr);
  std::vector<double> distances;
  std::vector<int> nn_index;
  min_distances(candidates, tree, distances, nn_index);
  return distances;
}

// The N_tr-th smallest element (1-indexed) of the distances.
inline double distance_threshold(std::vector<double> distances, int n_tr) {
  require(static_cast<int>(distances.size()) >= n_tr,
          "label_epi: fewer candidates than training points");
  std::nth_element(distances.begin(), distances.begin() + (n_tr - 1), distances.end());
  return distances[n_tr - 1];
}

// Applies the <= threshold rule literally: ties can produce more than
// N_tr zeros. Label-0 candidates snap onto their nearest training input.
inline EpiSet label_epi(const Matrix& candidates, const std::vector<double>& distances,
                        const std::vector<int>& nn_index, const Matrix& x_tr,
                        const std::vector<int>& provenance) {
  require(static_cast<int>(distances.size()) == candidates.rows(),
          "label_epi: distances misaligned with candidates");
  const int n_tr = static_cast<int>(x_tr.rows());
  EpiSet set;
  set.raw_inputs = candidates;
  set.inputs = candidates;
  set.distances = distances;
  set.nn_index = nn_index;
  set.provenance = provenance;
  set.threshold = distance_threshold(distances, n_tr);
  set.labels.resize(candidates.rows());
  for (int j = 0; j < candidates.rows(); ++j) {
    if (distances[j] <= set.threshold) {
      set.labels[j] = 0;
      set.inputs.row(j) = x_tr.row(nn_index[j]);
      ++set.zeros;
    } else {
      set.labels[j] = 1;
    }
  }
  return set;
}

inline EpiSet label_epi(const Matrix& candidates, const std::vector<double>& distances,
                        const Matrix& x_tr) {
  std::vector<double> exact;
  std::vector<int> nn_index;
  KdTree tree(x_tr);
  min_distances(candidates, tree, exact, nn_index);
  std::vector<int> provenance(candidates.rows(), -1);
  return label_epi(candidates, distances, nn_index, x_tr, provenance);
}

// Owns the candidate stream so that sequential insertions relabel exactly
// like a from-scratch run over the union of all raw candidates.
class EpiSampler {
 public:
  explicit EpiSampler(SamplerConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {}

  const EpiSet& set() const { return set_; }
  const SamplerConfig& config() const { return cfg_; }

  // From-scratch build over the full training set.
  void build(const Matrix& x_tr) {
    std::vector<int> provenance;
    Matrix candidates = sample_epi_inputs(x_tr, cfg_, rng_, &provenance);
    KdTree tree(x_tr);
    std::vector<double> distances;
    std::vector<int> nn_index;
    min_distances(candidates, tree, distances, nn_index);
    set_ = label_epi(candidates, distances, nn_index, x_tr, provenance);
  }

  // x_tr already contains the new point as its last row. Fresh candidates
  // are sampled around it; stored distances shrink where the new training
  // point is closer; labels are re-derived globally.
  void add_point(const Matrix& x_tr) {
    require(x_tr.rows() >= 1, "add_point: empty training set");
    if (set_.size() == 0 && x_tr.rows() == 1) {
      build(x_tr);
      return;
    }
    const int d = static_cast<int>(x_tr.cols());
    const int new_idx = static_cast<int>(x_tr.rows()) - 1;
    const Vector new_point = x_tr.row(new_idx).transpose();

    // update stored candidates against the new training point
    for (int j = 0; j < set_.size(); ++j) {
      const double dist = (set_.raw_inputs.row(j).transpose() - new_point).norm();
      if (dist < set_.distances[j]) {
        set_.distances[j] = dist;
        set_.nn_index[j] = new_idx;
      }
    }

    // fresh candidates around the new point, distances against full x_tr
    Matrix seed_row = x_tr.row(new_idx);
    SamplerConfig one = cfg_;
    std::vector<int> fresh_prov;
    Matrix fresh = sample_epi_inputs(seed_row, one, rng_, &fresh_prov);
    KdTree tree(x_tr);
    std::vector<double> fresh_dist;
    std::vector<int> fresh_nn;
    min_distances(fresh, tree, fresh_dist, fresh_nn);

    const int old_n = set_.size();
    const int total = old_n + static_cast<int>(fresh.rows());
    Matrix raw(total, d);
    raw.topRows(old_n) = set_.raw_inputs;
    raw.bottomRows(fresh.rows()) = fresh;
    std::vector<double> distances = set_.distances;
    distances.insert(distances.end(), fresh_dist.begin(), fresh_dist.end());
    std::vector<int> nn_index = set_.nn_index;
    nn_index.insert(nn_index.end(), fresh_nn.begin(), fresh_nn.end());
    std::vector<int> provenance = set_.provenance;
    for (std::size_t i = 0; i < fresh_prov.size(); ++i) provenance.push_back(new_idx);

    set_ = label_epi(raw, distances, nn_index, x_tr, provenance);
  }

 private:
  SamplerConfig cfg_;
  Rng rng_;
  EpiSet set_;
};

inline void write_epi_csv(const EpiSet& set, const std::string& path) {
  CsvWriter csv(path);
  std::vector<std::string> cols;
  for (int k = 0; k < set.dim(); ++k) cols.push_back("x" + std::to_string(k + 1));
  cols.push_back("label");
  cols.push_back("distance");
  csv.header(cols);
  for (int j = 0; j < set.size(); ++j) {
    std::vector<double> row;
    for (int k = 0; k < set.dim(); ++k) row.push_back(set.inputs(j, k));
    row.push_back(set.labels[j]);
    row.push_back(set.distances[j]);
    csv.row(row);
  }
}

}  // namespace epiout
